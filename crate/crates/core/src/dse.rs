//! Exhaustive single-accelerator design-space exploration.
//!
//! Every `(a, b, c, x, y, z)` that fits the tile, port and RAM budget is a
//! candidate. Candidates are ranked by total modeled time over the assigned
//! layers; the ranking is a total order (time, tiles, buffer bytes, factors),
//! so results do not depend on evaluation order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::perfmodel::{self, AccConfig, BufferFootprint, KernelSpec, PortCount};
use crate::platform::{BandwidthProfile, PlatformSpec};
use crate::workload::LayerShape;
use crate::{Error, Result};

/// The resource slice one accelerator may use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceBudget {
    pub aie_max: u32,
    pub plio_in_max: u32,
    pub plio_out_max: u32,
    pub ram_max: u64,
    pub bw: BandwidthProfile,
}

impl ResourceBudget {
    /// The whole platform.
    pub fn from_platform(plat: &PlatformSpec) -> Self {
        ResourceBudget {
            aie_max: plat.aie_total,
            plio_in_max: plat.plio_in,
            plio_out_max: plat.plio_out,
            ram_max: plat.ram_bytes,
            bw: plat.bw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.aie_max == 0 || self.plio_in_max == 0 || self.plio_out_max == 0 || self.ram_max == 0 {
            return Err(Error::invalid("budget", "every resource must be positive"));
        }
        self.bw.validate()
    }

    /// Checks the tile, port and RAM constraints for `cfg`.
    pub fn admits(&self, cfg: &AccConfig) -> bool {
        let ports = perfmodel::port_count(cfg);
        cfg.tiles() <= u64::from(self.aie_max)
            && ports.ports_in <= self.plio_in_max
            && ports.ports_out <= self.plio_out_max
            && perfmodel::buffer_bytes(cfg).total <= self.ram_max
    }
}

/// A ranked candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedDesign {
    pub cfg: AccConfig,
    /// Seconds over all assigned layers.
    pub total_time: f64,
    pub gflops: f64,
    pub ports: PortCount,
    pub buffers: BufferFootprint,
}

impl RankedDesign {
    /// Evaluates `cfg` on `layers` with bandwidth `bw`.
    pub fn evaluate(cfg: &AccConfig, layers: &[LayerShape], plat: &PlatformSpec, bw: &BandwidthProfile) -> Self {
        let total_time: f64 = canonical_order(layers)
            .iter()
            .map(|l| perfmodel::layer_time_with_bw::<f64>(l, cfg, plat, bw).total_time)
            .sum();
        let gflops = perfmodel::throughput(layers, total_time).unwrap_or(0.0);
        RankedDesign {
            cfg: *cfg,
            total_time,
            gflops,
            ports: perfmodel::port_count(cfg),
            buffers: perfmodel::buffer_bytes(cfg),
        }
    }

    fn rank_key(&self) -> RankKey {
        RankKey {
            time: self.total_time,
            tiles: self.cfg.tiles(),
            buffer: self.buffers.total,
            factors: self.cfg.factors(),
        }
    }

    /// The search ranking: faster first, then fewer tiles, then less
    /// buffer, then lexicographic factors.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.rank_key().cmp(&other.rank_key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RankKey {
    time: f64,
    tiles: u64,
    buffer: u64,
    factors: [u32; 6],
}

impl Eq for RankKey {}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.tiles.cmp(&other.tiles))
            .then(self.buffer.cmp(&other.buffer))
            .then(self.factors.cmp(&other.factors))
    }
}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Optional upper bounds on each factor. `None` means "limited only by the
/// budget": `a*b*c <= aie_max` for the spatial factors and the RAM
/// constraint for `x, y, z` (buffers grow monotonically in each factor, so the
/// RAM check alone ends every loop).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorBounds {
    pub a: Option<u32>,
    pub b: Option<u32>,
    pub c: Option<u32>,
    pub x: Option<u32>,
    pub y: Option<u32>,
    pub z: Option<u32>,
}

impl FactorBounds {
    fn get(bound: Option<u32>) -> u64 {
        bound.map_or(u64::MAX, u64::from)
    }
}

/// Spatial triples `(a, b, c)` within the tile and port budget, lexicographic.
fn spatial_triples(budget: &ResourceBudget, kernel: &KernelSpec, bounds: &FactorBounds) -> Vec<[u32; 3]> {
    let aie = u64::from(budget.aie_max);
    let mut out = Vec::new();
    for a in 1..=aie.min(FactorBounds::get(bounds.a)) {
        for b in 1..=(aie / a).min(FactorBounds::get(bounds.b)) {
            for c in 1..=(aie / (a * b)).min(FactorBounds::get(bounds.c)) {
                let cfg = AccConfig {
                    kernel: *kernel,
                    ..AccConfig::new(a as u32, b as u32, c as u32, 1, 1, 1)
                };
                let ports = perfmodel::port_count(&cfg);
                if ports.ports_in <= budget.plio_in_max && ports.ports_out <= budget.plio_out_max {
                    out.push([a as u32, b as u32, c as u32]);
                }
            }
        }
    }
    out
}

/// RAM-constrained `(x, y, z)` enumeration for one spatial triple.
#[derive(Debug, Clone, Copy)]
struct TemporalSpace {
    /// Bytes of one single-buffered L/R/O element block at x = y = z = 1,
    /// scaled by the double-buffering factor: total = lr*x*y + rr*y*z + or*x*z.
    lr: u64,
    rr: u64,
    or: u64,
    ram: u64,
    bx: u64,
    by: u64,
    bz: u64,
}

impl TemporalSpace {
    fn new(abc: [u32; 3], kernel: &KernelSpec, ram: u64, bounds: &FactorBounds) -> Self {
        let unit = perfmodel::buffer_bytes(&AccConfig {
            kernel: *kernel,
            ..AccConfig::new(abc[0], abc[1], abc[2], 1, 1, 1)
        });
        TemporalSpace {
            lr: 2 * unit.buff_l,
            rr: 2 * unit.buff_r,
            or: 2 * unit.buff_o,
            ram,
            bx: FactorBounds::get(bounds.x),
            by: FactorBounds::get(bounds.y),
            bz: FactorBounds::get(bounds.z),
        }
    }

    fn x_max(&self) -> u64 {
        // Smallest footprint at a given x is with y = z = 1.
        let per_x = self.lr + self.or;
        if self.rr > self.ram {
            return 0;
        }
        ((self.ram - self.rr) / per_x).min(self.bx)
    }

    fn y_max(&self, x: u64) -> u64 {
        let fixed = self.or * x;
        let per_y = self.lr * x + self.rr;
        if fixed > self.ram {
            return 0;
        }
        ((self.ram - fixed) / per_y).min(self.by)
    }

    fn z_max(&self, x: u64, y: u64) -> u64 {
        let fixed = self.lr * x * y;
        let per_z = self.rr * y + self.or * x;
        if fixed > self.ram {
            return 0;
        }
        ((self.ram - fixed) / per_z).min(self.bz)
    }

    fn count(&self) -> u64 {
        let mut n = 0;
        for x in 1..=self.x_max() {
            for y in 1..=self.y_max(x) {
                n += self.z_max(x, y);
            }
        }
        n
    }
}

/// Every configuration satisfying the tile, port and RAM constraints, in
/// lexicographic `(a, b, c, x, y, z)` order.
pub fn enumerate_configs<'a>(
    budget: &'a ResourceBudget,
    kernel: &'a KernelSpec,
    bounds: &'a FactorBounds,
) -> impl Iterator<Item = AccConfig> + 'a {
    spatial_triples(budget, kernel, bounds)
        .into_iter()
        .flat_map(move |abc| {
            let space = TemporalSpace::new(abc, kernel, budget.ram_max, bounds);
            (1..=space.x_max()).flat_map(move |x| {
                (1..=space.y_max(x)).flat_map(move |y| {
                    (1..=space.z_max(x, y)).map(move |z| AccConfig {
                        kernel: *kernel,
                        ..AccConfig::new(abc[0], abc[1], abc[2], x as u32, y as u32, z as u32)
                    })
                })
            })
        })
}

/// Number of configurations [`enumerate_configs`] yields, without
/// materialising them.
pub fn count_configs(budget: &ResourceBudget, kernel: &KernelSpec, bounds: &FactorBounds) -> u64 {
    spatial_triples(budget, kernel, bounds)
        .into_iter()
        .map(|abc| TemporalSpace::new(abc, kernel, budget.ram_max, bounds).count())
        .sum()
}

/// Ranked designs plus search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Best first.
    pub designs: Vec<RankedDesign>,
    /// Configurations satisfying the constraints.
    pub candidates: u64,
    /// Configurations whose cost was actually computed; the rest were
    /// skipped by a compute-roof lower bound that cannot change the result.
    pub evaluated: u64,
}

impl SearchResult {
    pub fn best(&self) -> &RankedDesign {
        &self.designs[0]
    }
}

/// Exhaustive search with default factor bounds and the default kernel.
pub fn search(
    layers: &[LayerShape],
    budget: &ResourceBudget,
    plat: &PlatformSpec,
    top_k: usize,
) -> Result<SearchResult> {
    search_with(layers, budget, plat, &KernelSpec::default(), &FactorBounds::default(), top_k)
}

struct Entry(RankedDesign);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Layers sorted by shape, so that summed times do not depend on the
/// caller's layer order.
fn canonical_order(layers: &[LayerShape]) -> Vec<LayerShape> {
    let mut sorted = layers.to_vec();
    sorted.sort_by_key(|l| (l.m, l.k, l.n, l.batch, l.count, l.id));
    sorted
}

/// Per-layer data for the inner loop.
struct LayerTerm {
    m: u64,
    k: u64,
    n: u64,
    reps: u64,
}

/// Exhaustive search returning the `top_k` best configurations for running
/// `layers` back to back on one accelerator.
pub fn search_with(
    layers: &[LayerShape],
    budget: &ResourceBudget,
    plat: &PlatformSpec,
    kernel: &KernelSpec,
    bounds: &FactorBounds,
    top_k: usize,
) -> Result<SearchResult> {
    if layers.is_empty() {
        return Err(Error::invalid("layers", "search needs at least one layer"));
    }
    if top_k == 0 {
        return Err(Error::invalid("top_k", "must be at least 1"));
    }
    for l in layers {
        l.validate()?;
    }
    kernel.validate()?;
    budget.validate()?;
    let minimal = AccConfig {
        kernel: *kernel,
        ..AccConfig::new(1, 1, 1, 1, 1, 1)
    };
    if !budget.admits(&minimal) {
        return Err(Error::Infeasible(format!(
            "budget ({} tiles, {}/{} ports, {} bytes) cannot hold even a 1x1x1 array with unit reuse",
            budget.aie_max, budget.plio_in_max, budget.plio_out_max, budget.ram_max
        )));
    }

    let terms: Vec<LayerTerm> = canonical_order(layers)
        .iter()
        .map(|l| LayerTerm {
            m: l.m,
            k: l.k,
            n: l.n,
            reps: l.repetitions(),
        })
        .collect();
    let total_macs: f64 = layers.iter().map(|l| (l.ops() / 2) as f64).sum();
    // Seconds per MAC for one tile at the platform efficiency.
    let tile_rate = f64::from(plat.mac_per_cycle) * plat.eff * plat.aie_freq_hz;

    let mut triples = spatial_triples(budget, kernel, bounds);
    // Large arrays first: they tend to be fast, which tightens the bound early.
    triples.sort_by(|p, q| {
        let tp = u64::from(p[0]) * u64::from(p[1]) * u64::from(p[2]);
        let tq = u64::from(q[0]) * u64::from(q[1]) * u64::from(q[2]);
        tq.cmp(&tp).then(p.cmp(q))
    });

    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(top_k + 1);
    let mut candidates = 0u64;
    let mut evaluated = 0u64;
    let bw = &budget.bw;
    let mut scratch = Scratch::default();

    for abc in triples {
        let space = TemporalSpace::new(abc, kernel, budget.ram_max, bounds);
        let n_here = space.count();
        candidates += n_here;
        if n_here == 0 {
            continue;
        }
        let tiles = f64::from(abc[0]) * f64::from(abc[1]) * f64::from(abc[2]);
        // Padding only adds work, so no config of this array can beat this;
        // the margin absorbs rounding.
        let lower_bound = total_macs / (tiles * tile_rate) * (1.0 - 1e-9);
        if heap.len() == top_k {
            let worst = heap.peek().expect("heap is full").0.total_time;
            if lower_bound > worst {
                continue;
            }
        }
        evaluated += n_here;
        evaluate_triple(abc, &space, kernel, &terms, plat, bw, top_k, &mut heap, &mut scratch);
    }

    let mut designs: Vec<RankedDesign> = heap.into_iter().map(|e| e.0).collect();
    designs.sort_by(|p, q| p.rank_cmp(q));
    for d in &mut designs {
        d.gflops = perfmodel::throughput(layers, d.total_time)?;
    }
    if designs.is_empty() {
        return Err(Error::Infeasible("no configuration satisfies the budget".to_string()));
    }
    Ok(SearchResult {
        designs,
        candidates,
        evaluated,
    })
}

#[derive(Default)]
struct Scratch {
    /// Off-chip trip counts indexed `[layer][factor - 1]`.
    tx: Vec<Vec<u64>>,
    ty: Vec<Vec<u64>>,
    tz: Vec<Vec<u64>>,
}

fn fill(table: &mut Vec<Vec<u64>>, dims: impl Iterator<Item = u64>, unit: u64, max_factor: u64) {
    table.clear();
    for d in dims {
        table.push((1..=max_factor).map(|f| d.div_ceil(unit * f)).collect());
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_triple(
    abc: [u32; 3],
    space: &TemporalSpace,
    kernel: &KernelSpec,
    terms: &[LayerTerm],
    plat: &PlatformSpec,
    bw: &BandwidthProfile,
    top_k: usize,
    heap: &mut BinaryHeap<Entry>,
    scratch: &mut Scratch,
) {
    let x_max = space.x_max();
    let y_max = space.y_max(1);
    let z_max = space.z_max(1, 1);
    let [a, b, c] = abc.map(u64::from);
    fill(&mut scratch.tx, terms.iter().map(|t| t.m), a * u64::from(kernel.ti), x_max);
    fill(&mut scratch.ty, terms.iter().map(|t| t.k), b * u64::from(kernel.tk), y_max);
    fill(&mut scratch.tz, terms.iter().map(|t| t.n), c * u64::from(kernel.tj), z_max);

    let ports = perfmodel::port_count(&AccConfig {
        kernel: *kernel,
        ..AccConfig::new(abc[0], abc[1], abc[2], 1, 1, 1)
    });
    let tiles = a * b * c;

    for x in 1..=x_max {
        for y in 1..=space.y_max(x) {
            for z in 1..=space.z_max(x, y) {
                let cfg = AccConfig {
                    kernel: *kernel,
                    ..AccConfig::new(abc[0], abc[1], abc[2], x as u32, y as u32, z as u32)
                };
                // Same arithmetic, in the same order, as perfmodel::layer_time.
                let buffers = perfmodel::buffer_bytes(&cfg);
                let time_l = buffers.buff_l as f64 / bw.bw_l;
                let time_r = buffers.buff_r as f64 / bw.bw_r;
                let time_o = buffers.buff_o as f64 / bw.bw_o;
                let time_comp = perfmodel::compute_time::<f64>(&cfg, plat);
                let (xi, yi, zi) = ((x - 1) as usize, (y - 1) as usize, (z - 1) as usize);
                let mut total = 0.0;
                for (li, t) in terms.iter().enumerate() {
                    total += perfmodel::pipelined_time(
                        time_l,
                        time_r,
                        time_o,
                        time_comp,
                        (scratch.tx[li][xi], scratch.ty[li][yi], scratch.tz[li][zi]),
                        t.reps,
                    );
                }
                if heap.len() == top_k {
                    let worst = &heap.peek().expect("heap is full").0;
                    let key = RankKey {
                        time: total,
                        tiles,
                        buffer: buffers.total,
                        factors: cfg.factors(),
                    };
                    if key >= worst.rank_key() {
                        continue;
                    }
                }
                heap.push(Entry(RankedDesign {
                    cfg,
                    total_time: total,
                    gflops: 0.0,
                    ports,
                    buffers,
                }));
                if heap.len() > top_k {
                    heap.pop();
                }
            }
        }
    }
}
