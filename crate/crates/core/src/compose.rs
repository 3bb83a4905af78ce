//! Composition of several differently-shaped accelerators.
//!
//! Shape groups are sorted by operation count and cut into `num` contiguous
//! runs; each run gets an accelerator whose tiles and stream ports are
//! proportional to its operations, with RAM and bandwidth split evenly. Each
//! accelerator is then searched independently, and RAM is shifted from the
//! fastest to the slowest accelerator for a bounded number of rounds. The
//! partition with the smallest slowest-accelerator time wins.

use std::ops::Range;

use itertools::Itertools;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dse::{self, RankedDesign, ResourceBudget, SearchResult};
use crate::perfmodel::{self, AccConfig, KernelSpec};
use crate::platform::PlatformSpec;
use crate::workload::{LayerShape, ModelSpec, ShapeGroup};
use crate::{Error, Result};

/// Composer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposerParams {
    /// Number of accelerators.
    pub num: usize,
    /// Memory-tuning rounds.
    pub ubound: u32,
    /// Fraction of the even RAM share moved per tuning round.
    pub mem_quantum: Ratio<u64>,
}

impl ComposerParams {
    pub fn new(num: usize) -> Self {
        ComposerParams {
            num,
            ubound: 32,
            mem_quantum: Ratio::new(1, 16),
        }
    }

    pub fn with_ubound(self, ubound: u32) -> Self {
        ComposerParams { ubound, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num < 1 {
            return Err(Error::invalid("num", "need at least one accelerator"));
        }
        let q = self.mem_quantum;
        if *q.denom() == 0 || *q.numer() == 0 || q >= Ratio::from_integer(1) {
            return Err(Error::invalid("mem_quantum", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Bytes moved per tuning round: `floor(mem_quantum * ram / num)`.
    pub fn quantum_bytes(&self, ram_bytes: u64) -> u64 {
        let q = self.mem_quantum;
        (u128::from(ram_bytes) * u128::from(*q.numer()) / (u128::from(*q.denom()) * self.num as u128)) as u64
    }
}

impl Default for ComposerParams {
    fn default() -> Self {
        ComposerParams::new(1)
    }
}

/// Sorts layers by descending operations; ties by descending `(m, k, n, batch)`,
/// then ascending id.
pub fn sort_layers(layers: &[LayerShape]) -> Vec<LayerShape> {
    let mut sorted = layers.to_vec();
    sorted.sort_by(|p, q| {
        q.ops()
            .cmp(&p.ops())
            .then((q.m, q.k, q.n, q.batch).cmp(&(p.m, p.k, p.n, p.batch)))
            .then(p.id.cmp(&q.id))
    });
    sorted
}

/// Shape groups of `model` in composer order.
pub fn sorted_groups(model: &ModelSpec) -> Vec<ShapeGroup> {
    let groups = model.shapes();
    let order = sort_layers(&groups.iter().map(|g| g.shape).collect::<Vec<_>>());
    order.iter().map(|s| groups[s.id].clone()).collect()
}

/// `num` contiguous, non-empty ranges covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Range<usize>>,
}

impl Partition {
    /// The partition with separators before each index in `cuts` (ascending,
    /// each in `1..n`).
    pub fn from_cuts(n: usize, cuts: &[usize]) -> Self {
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts.iter().copied()).chain([n]).collect();
        Partition {
            groups: bounds.windows(2).map(|w| w[0]..w[1]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Every way to cut `n` ordered items into `num` contiguous non-empty runs:
/// `C(n - 1, num - 1)` partitions, ordered lexicographically by cut positions.
pub fn enumerate_partitions(n: usize, num: usize) -> Result<Vec<Partition>> {
    if num < 1 {
        return Err(Error::invalid("num", "need at least one group"));
    }
    if num > n {
        return Err(Error::invalid(
            "num",
            format!("cannot cut {n} items into {num} non-empty groups"),
        ));
    }
    Ok((1..n)
        .combinations(num - 1)
        .map(|cuts| Partition::from_cuts(n, &cuts))
        .collect())
}

/// Splits `total` by `weights` (floor), raising every share to `min` and giving
/// the remainder to `largest`. `None` if the minima do not fit.
fn split_proportional(total: u64, weights: &[u128], min: u64, largest: usize) -> Option<Vec<u64>> {
    if min * weights.len() as u64 > total {
        return None;
    }
    let w_sum: u128 = weights.iter().sum();
    let mut shares: Vec<u64> = weights
        .iter()
        .map(|&w| {
            let floor = (u128::from(total) * w).checked_div(w_sum).unwrap_or(0) as u64;
            floor.max(min)
        })
        .collect();
    let sum: u64 = shares.iter().sum();
    if sum <= total {
        shares[largest] += total - sum;
    } else {
        // Raising small shares to the minimum overdrew; repay from the
        // largest share first, then in index order.
        let mut excess = sum - total;
        let order = std::iter::once(largest).chain((0..shares.len()).filter(|&i| i != largest));
        for i in order.collect::<Vec<_>>() {
            let give = (shares[i] - min).min(excess);
            shares[i] -= give;
            excess -= give;
        }
        debug_assert_eq!(excess, 0);
    }
    Some(shares)
}

/// Minimum stream ports an accelerator is given.
pub const MIN_PORTS_IN: u32 = 3;
pub const MIN_PORTS_OUT: u32 = 1;

/// Per-accelerator budgets for `partition` over the ops-sorted `units`.
pub fn proportional_resources(
    partition: &Partition,
    units: &[LayerShape],
    plat: &PlatformSpec,
) -> Result<Vec<ResourceBudget>> {
    let num = partition.len();
    if num == 0 || partition.groups.last().map(|g| g.end) != Some(units.len()) {
        return Err(Error::invalid("partition", "does not cover the layer list"));
    }
    let ops: Vec<u128> = partition
        .groups
        .iter()
        .map(|g| units[g.clone()].iter().map(LayerShape::ops).sum())
        .collect();
    // First group with the most operations.
    let largest = ops
        .iter()
        .enumerate()
        .max_by(|p, q| p.1.cmp(q.1).then(q.0.cmp(&p.0)))
        .map_or(0, |(i, _)| i);
    let too_small = |what: &str| {
        Error::Infeasible(format!(
            "platform {} has too few {what} for {num} accelerators",
            plat.name
        ))
    };
    let aie = split_proportional(u64::from(plat.aie_total), &ops, 1, largest).ok_or_else(|| too_small("tiles"))?;
    let pin = split_proportional(u64::from(plat.plio_in), &ops, u64::from(MIN_PORTS_IN), largest)
        .ok_or_else(|| too_small("input ports"))?;
    let pout = split_proportional(u64::from(plat.plio_out), &ops, u64::from(MIN_PORTS_OUT), largest)
        .ok_or_else(|| too_small("output ports"))?;
    let ram = plat.ram_bytes / num as u64;
    if ram == 0 {
        return Err(too_small("RAM bytes"));
    }
    let bw = plat.bw.scaled(1.0 / num as f64);
    Ok((0..num)
        .map(|i| ResourceBudget {
            aie_max: aie[i] as u32,
            plio_in_max: pin[i] as u32,
            plio_out_max: pout[i] as u32,
            ram_max: ram,
            bw,
        })
        .collect())
}

/// Budgets, best designs and modeled times of one composition state.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedState {
    pub budgets: Vec<ResourceBudget>,
    pub designs: Vec<RankedDesign>,
    /// Configurations enumerated and cost-evaluated across every search run.
    pub candidates: u64,
    pub evaluated: u64,
    /// Tuning rounds that ran (not necessarily improving).
    pub rounds: u32,
}

impl TunedState {
    pub fn max_time(&self) -> f64 {
        self.designs.iter().map(|d| d.total_time).fold(0.0, f64::max)
    }

    fn slowest(&self) -> usize {
        argmax(self.designs.iter().map(|d| d.total_time))
    }

    fn fastest(&self) -> usize {
        argmax(self.designs.iter().map(|d| -d.total_time))
    }
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn search_one(layers: &[LayerShape], budget: &ResourceBudget, plat: &PlatformSpec) -> Result<SearchResult> {
    dse::search(layers, budget, plat, 1)
}

/// Searches each accelerator, then moves RAM from the fastest to the slowest
/// accelerator for up to `params.ubound` rounds, keeping the best min-max
/// state seen. `layer_sets[i]` are the layers of accelerator `i`.
pub fn memory_tune(
    budgets: Vec<ResourceBudget>,
    layer_sets: &[Vec<LayerShape>],
    plat: &PlatformSpec,
    params: &ComposerParams,
) -> Result<TunedState> {
    let mut candidates = 0;
    let mut evaluated = 0;
    let mut designs = Vec::with_capacity(budgets.len());
    for (layers, budget) in layer_sets.iter().zip(&budgets) {
        let r = search_one(layers, budget, plat)?;
        candidates += r.candidates;
        evaluated += r.evaluated;
        designs.push(*r.best());
    }
    let mut state = TunedState {
        budgets,
        designs,
        candidates: 0,
        evaluated: 0,
        rounds: 0,
    };
    let mut best = state.clone();
    let quantum = params.quantum_bytes(plat.ram_bytes);
    let floor = perfmodel::buffer_bytes(&AccConfig {
        kernel: KernelSpec::default(),
        ..AccConfig::new(1, 1, 1, 1, 1, 1)
    })
    .total;

    for round in 0..params.ubound {
        let (slow, fast) = (state.slowest(), state.fastest());
        if slow == fast {
            break;
        }
        let moved = quantum.min(state.budgets[fast].ram_max.saturating_sub(floor));
        if moved == 0 {
            break;
        }
        state.budgets[fast].ram_max -= moved;
        state.budgets[slow].ram_max += moved;
        state.rounds = round + 1;
        for i in [slow, fast] {
            match search_one(&layer_sets[i], &state.budgets[i], plat) {
                Ok(r) => {
                    candidates += r.candidates;
                    evaluated += r.evaluated;
                    state.designs[i] = *r.best();
                }
                // The donor may have shrunk below its port-feasible minimum.
                Err(e) if e.is_infeasible() => {
                    best.candidates = candidates;
                    best.evaluated = evaluated;
                    best.rounds = state.rounds;
                    return Ok(best);
                }
                Err(e) => return Err(e),
            }
        }
        if state.max_time() < best.max_time() {
            best = state.clone();
        }
    }
    best.candidates = candidates;
    best.evaluated = evaluated;
    best.rounds = state.rounds;
    Ok(best)
}

/// Kernel-to-accelerator routing consumed by the scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    pub model: String,
    pub num_accs: usize,
    pub routes: Vec<KernelRoute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRoute {
    pub kernel: usize,
    pub acc: usize,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub batch: u64,
}

impl RuntimeConfig {
    fn new(model: &ModelSpec, assignment: &[usize], num_accs: usize) -> Self {
        RuntimeConfig {
            model: model.name.clone(),
            num_accs,
            routes: model
                .layers
                .iter()
                .map(|l| KernelRoute {
                    kernel: l.id,
                    acc: assignment[l.id],
                    m: l.m,
                    k: l.k,
                    n: l.n,
                    batch: l.batch,
                })
                .collect(),
        }
    }

    /// `acc` per kernel id.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.routes.len()];
        for r in &self.routes {
            out[r.kernel] = r.acc;
        }
        out
    }
}

/// Search effort of one composition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeStats {
    pub partitions: u64,
    pub feasible_partitions: u64,
    pub candidates: u64,
    pub evaluated: u64,
}

/// The chosen composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    pub model: String,
    pub platform: String,
    pub params: ComposerParams,
    /// Cuts over the ops-sorted shape groups.
    pub partition: Partition,
    /// Kernel ids per accelerator, ascending.
    pub acc_kernels: Vec<Vec<usize>>,
    /// Accelerator index per kernel id.
    pub assignment: Vec<usize>,
    pub accs: Vec<RankedDesign>,
    pub budgets: Vec<ResourceBudget>,
    /// Modeled seconds per accelerator over its kernels, one inference.
    pub acc_times: Vec<f64>,
    /// Slowest accelerator's time: the steady-state interval between
    /// inferences when accelerators work on different tasks.
    pub makespan_s: f64,
    /// Model operations per `makespan_s`.
    pub gflops: f64,
    pub runtime_config: RuntimeConfig,
    pub stats: ComposeStats,
}

impl CompositionResult {
    pub fn num_accs(&self) -> usize {
        self.accs.len()
    }

    pub fn total_tiles(&self) -> u64 {
        self.accs.iter().map(|d| d.cfg.tiles()).sum()
    }

    /// Checks that the summed budgets and designs fit `plat`.
    pub fn check_platform(&self, plat: &PlatformSpec) -> Result<()> {
        let sum = |f: &dyn Fn(&ResourceBudget) -> u64| self.budgets.iter().map(f).sum::<u64>();
        let checks = [
            ("aie", sum(&|b| u64::from(b.aie_max)), u64::from(plat.aie_total)),
            ("plio_in", sum(&|b| u64::from(b.plio_in_max)), u64::from(plat.plio_in)),
            ("plio_out", sum(&|b| u64::from(b.plio_out_max)), u64::from(plat.plio_out)),
            ("ram", sum(&|b| b.ram_max), plat.ram_bytes),
        ];
        for (what, used, have) in checks {
            if used > have {
                return Err(Error::invalid(what, format!("budgets use {used}, platform has {have}")));
            }
        }
        for (d, b) in self.accs.iter().zip(&self.budgets) {
            if !b.admits(&d.cfg) {
                return Err(Error::invalid("accs", format!("{:?} exceeds its budget", d.cfg.factors())));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("composition serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

struct Candidate {
    index: usize,
    partition: Partition,
    state: TunedState,
}

/// Composes `params.num` accelerators for `model`, trying every contiguous
/// partition of its ops-sorted shape groups.
pub fn compose(model: &ModelSpec, plat: &PlatformSpec, params: &ComposerParams) -> Result<CompositionResult> {
    params.validate()?;
    plat.validate()?;
    model.validate()?;
    let groups = sorted_groups(model);
    let units: Vec<LayerShape> = groups.iter().map(|g| g.shape).collect();
    if params.num > units.len() {
        return Err(Error::Infeasible(format!(
            "{} accelerators but only {} shape groups in {}",
            params.num,
            units.len(),
            model.name
        )));
    }
    let partitions = enumerate_partitions(units.len(), params.num)?;

    let outcomes: Vec<Result<Candidate>> = partitions
        .into_par_iter()
        .enumerate()
        .map(|(index, partition)| {
            let budgets = proportional_resources(&partition, &units, plat)?;
            let layer_sets: Vec<Vec<LayerShape>> =
                partition.groups.iter().map(|g| units[g.clone()].to_vec()).collect();
            let state = memory_tune(budgets, &layer_sets, plat, params)?;
            Ok(Candidate { index, partition, state })
        })
        .collect();

    let mut stats = ComposeStats::default();
    let mut best: Option<Candidate> = None;
    let mut last_infeasible = None;
    for outcome in outcomes {
        stats.partitions += 1;
        let cand = match outcome {
            Ok(c) => c,
            Err(e) if e.is_infeasible() => {
                last_infeasible = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        stats.feasible_partitions += 1;
        stats.candidates += cand.state.candidates;
        stats.evaluated += cand.state.evaluated;
        let better = match &best {
            None => true,
            Some(b) => {
                let key = |c: &Candidate| (c.state.max_time(), c.state.designs.iter().map(|d| d.cfg.tiles()).sum::<u64>(), c.index);
                let (kc, kb) = (key(&cand), key(b));
                kc.0.total_cmp(&kb.0).then(kc.1.cmp(&kb.1)).then(kc.2.cmp(&kb.2)).is_lt()
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let best = best.ok_or_else(|| {
        last_infeasible.unwrap_or_else(|| Error::Infeasible("no partition has a feasible composition".into()))
    })?;

    let acc_kernels: Vec<Vec<usize>> = best
        .partition
        .groups
        .iter()
        .map(|g| {
            let mut ks: Vec<usize> = groups[g.clone()].iter().flat_map(|s| s.kernels.iter().copied()).collect();
            ks.sort_unstable();
            ks
        })
        .collect();
    let mut assignment = vec![0; model.num_kernels()];
    for (acc, ks) in acc_kernels.iter().enumerate() {
        for &k in ks {
            assignment[k] = acc;
        }
    }
    let acc_times: Vec<f64> = best.state.designs.iter().map(|d| d.total_time).collect();
    let makespan_s = best.state.max_time();
    let gflops = perfmodel::throughput(&model.layers, makespan_s)?;
    Ok(CompositionResult {
        model: model.name.clone(),
        platform: plat.name.clone(),
        params: *params,
        runtime_config: RuntimeConfig::new(model, &assignment, params.num),
        partition: best.partition,
        acc_kernels,
        assignment,
        accs: best.state.designs,
        budgets: best.state.budgets,
        acc_times,
        makespan_s,
        gflops,
        stats,
    })
}

/// `num` identical accelerators, each running whole inferences on an even
/// `1/num` slice of every resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateDesign {
    pub model: String,
    pub platform: String,
    pub num: usize,
    pub budget: ResourceBudget,
    pub design: RankedDesign,
    /// Seconds for one inference on one copy.
    pub latency_s: f64,
    /// `num` inferences per `latency_s`.
    pub gflops: f64,
    pub candidates: u64,
}

pub fn compose_duplicate(model: &ModelSpec, plat: &PlatformSpec, num: usize) -> Result<DuplicateDesign> {
    if num < 1 {
        return Err(Error::invalid("num", "need at least one accelerator"));
    }
    plat.validate()?;
    model.validate()?;
    let n = num as u64;
    let budget = ResourceBudget {
        aie_max: (u64::from(plat.aie_total) / n) as u32,
        plio_in_max: (u64::from(plat.plio_in) / n) as u32,
        plio_out_max: (u64::from(plat.plio_out) / n) as u32,
        ram_max: plat.ram_bytes / n,
        bw: plat.bw.scaled(1.0 / num as f64),
    };
    if budget.aie_max == 0 || budget.plio_in_max < 2 || budget.plio_out_max == 0 || budget.ram_max == 0 {
        return Err(Error::Infeasible(format!(
            "platform {} cannot be split into {num} copies",
            plat.name
        )));
    }
    let r = dse::search(&model.layers, &budget, plat, 1)?;
    let design = *r.best();
    let latency_s = design.total_time;
    let gflops = n as f64 * perfmodel::throughput(&model.layers, latency_s)?;
    Ok(DuplicateDesign {
        model: model.name.clone(),
        platform: plat.name.clone(),
        num,
        budget,
        design,
        latency_s,
        gflops,
        candidates: r.candidates,
    })
}

/// `cfg` evaluated as the only accelerator on the whole platform.
pub fn single_design(model: &ModelSpec, plat: &PlatformSpec, cfg: &AccConfig) -> Result<RankedDesign> {
    let budget = ResourceBudget::from_platform(plat);
    if !budget.admits(cfg) {
        return Err(Error::Infeasible(format!("{:?} does not fit {}", cfg.factors(), plat.name)));
    }
    let mut d = RankedDesign::evaluate(cfg, &model.layers, plat, &plat.bw);
    d.gflops = perfmodel::throughput(&model.layers, d.total_time)?;
    Ok(d)
}

/// How the accelerators of one sweep cell are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One accelerator on the whole platform.
    Single,
    Duplicate,
    Diverse,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Single => "single",
            Variant::Duplicate => "duplicate",
            Variant::Diverse => "diverse",
        })
    }
}

/// One `(num, variant)` design point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub num: usize,
    pub variant: Variant,
    /// `None` when the variant cannot be built, e.g. more diverse
    /// accelerators than shape groups.
    pub gflops: Option<f64>,
    pub tiles: u64,
    pub candidates: u64,
}

/// Evaluates every accelerator count in `nums` on `plat`: a single design for
/// `num = 1`, otherwise both duplicate and diverse variants.
pub fn explore(model: &ModelSpec, plat: &PlatformSpec, nums: &[usize], ubound: u32) -> Result<Vec<SweepCell>> {
    let mut jobs = Vec::new();
    for &num in nums {
        if num == 1 {
            jobs.push((num, Variant::Single));
        } else {
            jobs.push((num, Variant::Duplicate));
            jobs.push((num, Variant::Diverse));
        }
    }
    jobs.into_iter()
        .map(|(num, variant)| {
            let outcome = match variant {
                Variant::Duplicate => {
                    compose_duplicate(model, plat, num).map(|d| (d.gflops, d.design.cfg.tiles() * num as u64, d.candidates))
                }
                _ => compose(model, plat, &ComposerParams::new(num).with_ubound(ubound))
                    .map(|c| (c.gflops, c.total_tiles(), c.stats.candidates)),
            };
            match outcome {
                Ok((gflops, tiles, candidates)) => Ok(SweepCell {
                    num,
                    variant,
                    gflops: Some(gflops),
                    tiles,
                    candidates,
                }),
                Err(e) if e.is_infeasible() => Ok(SweepCell {
                    num,
                    variant,
                    gflops: None,
                    tiles: 0,
                    candidates: 0,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// `(max - min) / max` over the buildable cells; `None` if there are none.
pub fn spread(cells: &[SweepCell]) -> Option<f64> {
    let values: Vec<f64> = cells.iter().filter_map(|c| c.gflops).collect();
    let max = values.iter().copied().reduce(f64::max)?;
    let min = values.iter().copied().reduce(f64::min)?;
    Some((max - min) / max)
}

/// The fastest buildable cell.
pub fn best_cell(cells: &[SweepCell]) -> Option<&SweepCell> {
    cells
        .iter()
        .filter(|c| c.gflops.is_some())
        .reduce(|best, c| if c.gflops > best.gflops { c } else { best })
}
