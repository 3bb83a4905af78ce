//! Closed-form cost model of one matrix-multiply layer on one accelerator.
//!
//! An accelerator processes an MM as four nested tilings:
//!
//! ```text
//! off-chip loop   tx x tz x ty   (one native tile per iteration)
//!   on-chip loop  x x z x y      (native tile = (a*ti*x) x (b*tk*y) x (c*tj*z))
//!     array       a x c x b      (spatially unrolled over a*b*c tiles)
//!       kernel    ti x tj x tk   (one compute tile)
//! ```
//!
//! Problems that do not divide the native tile are padded up to it. LHS and
//! RHS loads for the next off-chip iteration overlap the current iteration's
//! compute (double buffering), so an iteration costs the max of the three.
//! Partial sums accumulate on chip across the `ty` loop, so the output tile is
//! written back once per `(tx, tz)` pair, not overlapped with compute. The
//! first iteration's loads form a pipeline prologue.

use serde::{Deserialize, Serialize};

use crate::platform::{BandwidthProfile, PlatformSpec};
use crate::workload::{layer_ops, LayerShape};
use crate::{Error, Real, Result};

/// Work done by one compute tile per invocation, and its I/O properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub ti: u32,
    pub tk: u32,
    pub tj: u32,
    /// Computation-to-communication ratio: how many tiles one packet-switched
    /// stream port can serve in turn.
    pub ctc: u32,
    /// Bytes per data element.
    pub bpd: u32,
}

impl Default for KernelSpec {
    /// 32x32x32 fp32 kernel with a CTC ratio of 4.
    fn default() -> Self {
        KernelSpec {
            ti: 32,
            tk: 32,
            tj: 32,
            ctc: 4,
            bpd: 4,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ti", self.ti), ("tk", self.tk), ("tj", self.tj), ("ctc", self.ctc)] {
            if v < 1 {
                return Err(Error::invalid(format!("kernel.{name}"), "must be at least 1"));
            }
        }
        if !matches!(self.bpd, 1 | 2 | 4 | 8) {
            return Err(Error::invalid("kernel.bpd", "must be 1, 2, 4 or 8"));
        }
        Ok(())
    }

    /// Multiply-accumulates per kernel invocation.
    pub fn macs(&self) -> u64 {
        u64::from(self.ti) * u64::from(self.tk) * u64::from(self.tj)
    }
}

/// One accelerator design point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccConfig {
    /// Spatial unroll over the tile array (M, K, N directions).
    pub a: u32,
    pub b: u32,
    pub c: u32,
    /// Sequential reuse of the on-chip buffers (M, K, N directions).
    pub x: u32,
    pub y: u32,
    pub z: u32,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl AccConfig {
    pub fn new(a: u32, b: u32, c: u32, x: u32, y: u32, z: u32) -> Self {
        AccConfig {
            a,
            b,
            c,
            x,
            y,
            z,
            kernel: KernelSpec::default(),
        }
    }

    /// The 384-tile monolithic design with native tile 1536 x 128 x 1024.
    pub fn reference_monolithic() -> Self {
        AccConfig::new(12, 4, 8, 4, 1, 4)
    }

    pub fn factors(&self) -> [u32; 6] {
        [self.a, self.b, self.c, self.x, self.y, self.z]
    }

    /// Compute tiles occupied: `a * b * c`.
    pub fn tiles(&self) -> u64 {
        u64::from(self.a) * u64::from(self.b) * u64::from(self.c)
    }

    /// `(a*ti*x, b*tk*y, c*tj*z)`.
    pub fn native_tile(&self) -> [u64; 3] {
        let k = &self.kernel;
        [
            u64::from(self.a) * u64::from(k.ti) * u64::from(self.x),
            u64::from(self.b) * u64::from(k.tk) * u64::from(self.y),
            u64::from(self.c) * u64::from(k.tj) * u64::from(self.z),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in ["a", "b", "c", "x", "y", "z"].iter().zip(self.factors()) {
            if v < 1 {
                return Err(Error::invalid(format!("config.{name}"), "must be at least 1"));
            }
        }
        self.kernel.validate()
    }
}

/// Off-chip loop bounds and the padded problem they cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCounts {
    pub tx: u64,
    pub ty: u64,
    pub tz: u64,
    pub padded_m: u64,
    pub padded_k: u64,
    pub padded_n: u64,
}

impl TileCounts {
    pub fn iterations(&self) -> u64 {
        self.tx * self.ty * self.tz
    }
}

pub fn tile_counts(layer: &LayerShape, cfg: &AccConfig) -> TileCounts {
    let [tm, tk, tn] = cfg.native_tile();
    let tx = layer.m.div_ceil(tm);
    let ty = layer.k.div_ceil(tk);
    let tz = layer.n.div_ceil(tn);
    TileCounts {
        tx,
        ty,
        tz,
        padded_m: tx * tm,
        padded_k: ty * tk,
        padded_n: tz * tn,
    }
}

/// Stream ports an accelerator needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortCount {
    pub ports_in: u32,
    pub ports_out: u32,
}

/// LHS rows are broadcast along `c` and RHS columns along `a`; packet
/// switching lets one port feed `ctc` tiles in turn.
pub fn port_count(cfg: &AccConfig) -> PortCount {
    let ctc = u64::from(cfg.kernel.ctc);
    let (a, b, c) = (u64::from(cfg.a), u64::from(cfg.b), u64::from(cfg.c));
    let ports_in = (a * b).div_ceil(ctc) + (c * b).div_ceil(ctc);
    let ports_out = (a * c).div_ceil(ctc);
    PortCount {
        ports_in: u32::try_from(ports_in).unwrap_or(u32::MAX),
        ports_out: u32::try_from(ports_out).unwrap_or(u32::MAX),
    }
}

/// On-chip buffer sizes in bytes. `total` counts both halves of every double
/// buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferFootprint {
    pub buff_l: u64,
    pub buff_r: u64,
    pub buff_o: u64,
    pub total: u64,
}

pub fn buffer_bytes(cfg: &AccConfig) -> BufferFootprint {
    let [tm, tk, tn] = cfg.native_tile();
    let bpd = u64::from(cfg.kernel.bpd);
    let buff_l = tm * tk * bpd;
    let buff_r = tk * tn * bpd;
    let buff_o = tm * tn * bpd;
    BufferFootprint {
        buff_l,
        buff_r,
        buff_o,
        total: 2 * (buff_l + buff_r + buff_o),
    }
}

/// Exact multiply-accumulate work of one on-chip loop nest per compute tile:
/// `x * y * z * ti * tk * tj`.
pub fn compute_work(cfg: &AccConfig) -> u64 {
    u64::from(cfg.x) * u64::from(cfg.y) * u64::from(cfg.z) * cfg.kernel.macs()
}

/// Cycles for one on-chip loop nest: `(work / mac) / eff`.
pub fn compute_cycles<T: Real>(cfg: &AccConfig, plat: &PlatformSpec) -> T {
    T::count(compute_work(cfg)) / T::count(u64::from(plat.mac_per_cycle)) / T::of(plat.eff)
}

/// Seconds for one on-chip loop nest.
pub fn compute_time<T: Real>(cfg: &AccConfig, plat: &PlatformSpec) -> T {
    compute_cycles::<T>(cfg, plat) / T::of(plat.aie_freq_hz)
}

/// Modeled execution of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate<T> {
    /// LHS, RHS and output transfer time per off-chip iteration.
    pub time_l: T,
    pub time_r: T,
    pub time_o: T,
    /// Compute time per off-chip iteration.
    pub time_comp: T,
    pub total_time: T,
    pub gflops: T,
}

/// Layer time from per-iteration costs:
/// `reps * (max(l, r, comp) * tx*ty*tz + o * tx*tz + max(l, r))`.
#[inline]
pub(crate) fn pipelined_time<T: Real>(
    time_l: T,
    time_r: T,
    time_o: T,
    time_comp: T,
    (tx, ty, tz): (u64, u64, u64),
    reps: u64,
) -> T {
    let load = time_l.max(time_r);
    let steady = load.max(time_comp) * T::count(tx * ty * tz);
    let stores = time_o * T::count(tx * tz);
    T::count(reps) * (steady + stores + load)
}

/// Models `layer` on `cfg` with the platform's own bandwidth profile.
pub fn layer_time<T: Real>(layer: &LayerShape, cfg: &AccConfig, plat: &PlatformSpec) -> PerfEstimate<T> {
    layer_time_with_bw(layer, cfg, plat, &plat.bw)
}

/// Models `layer` on `cfg` with an explicit bandwidth share, e.g. the slice an
/// accelerator gets when several share the memory.
pub fn layer_time_with_bw<T: Real>(
    layer: &LayerShape,
    cfg: &AccConfig,
    plat: &PlatformSpec,
    bw: &BandwidthProfile,
) -> PerfEstimate<T> {
    let counts = tile_counts(layer, cfg);
    let buf = buffer_bytes(cfg);
    let time_l = T::count(buf.buff_l) / T::of(bw.bw_l);
    let time_r = T::count(buf.buff_r) / T::of(bw.bw_r);
    let time_o = T::count(buf.buff_o) / T::of(bw.bw_o);
    let time_comp = compute_time::<T>(cfg, plat);
    let total_time = pipelined_time(
        time_l,
        time_r,
        time_o,
        time_comp,
        (counts.tx, counts.ty, counts.tz),
        layer.repetitions(),
    );
    let gflops = T::from_u128(layer_ops(layer)).expect("op count converts") / total_time / T::of(1e9);
    PerfEstimate {
        time_l,
        time_r,
        time_o,
        time_comp,
        total_time,
        gflops,
    }
}

/// GFLOPS of `layers` finishing in `total_time` seconds.
pub fn throughput<T: Real>(layers: &[LayerShape], total_time: T) -> Result<T> {
    if !(total_time > T::zero()) {
        return Err(Error::ZeroTime);
    }
    let ops: u128 = layers.iter().map(layer_ops).sum();
    Ok(T::from_u128(ops).expect("op count converts") / total_time / T::of(1e9))
}

/// Throughput ceiling of `cfg`: every tile busy at the platform efficiency.
pub fn compute_roof_gflops(cfg: &AccConfig, plat: &PlatformSpec) -> f64 {
    cfg.tiles() as f64 * f64::from(plat.mac_per_cycle) * 2.0 * plat.aie_freq_hz * plat.eff / 1e9
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(s: u64) -> LayerShape {
        LayerShape::new(0, s, s, s)
    }

    #[test]
    fn reference_native_tile() {
        assert_eq!(AccConfig::reference_monolithic().native_tile(), [1536, 128, 1024]);
        assert_eq!(AccConfig::reference_monolithic().tiles(), 384);
    }

    #[test]
    fn tile_counts_examples() {
        let cfg = AccConfig::reference_monolithic();
        let big = tile_counts(&square(6144), &cfg);
        assert_eq!((big.tx, big.ty, big.tz), (4, 48, 6));
        assert_eq!((big.padded_m, big.padded_k, big.padded_n), (6144, 6144, 6144));

        let small = tile_counts(&square(64), &cfg);
        assert_eq!((small.tx, small.ty, small.tz), (1, 1, 1));
        assert_eq!((small.padded_m, small.padded_k, small.padded_n), (1536, 128, 1024));

        let exact = tile_counts(&LayerShape::new(0, 1536, 128, 1024), &cfg);
        assert_eq!(exact.iterations(), 1);
        assert_eq!((exact.padded_m, exact.padded_k, exact.padded_n), (1536, 128, 1024));
    }

    #[test]
    fn port_count_examples() {
        let mut cfg = AccConfig::new(12, 4, 8, 1, 1, 1);
        assert_eq!(port_count(&cfg), PortCount { ports_in: 20, ports_out: 24 });
        cfg = AccConfig::new(1, 1, 1, 1, 1, 1);
        cfg.kernel.ctc = 1;
        assert_eq!(port_count(&cfg), PortCount { ports_in: 2, ports_out: 1 });
        cfg = AccConfig::new(4, 4, 4, 1, 1, 1);
        assert_eq!(port_count(&cfg), PortCount { ports_in: 8, ports_out: 4 });
    }

    #[test]
    fn buffer_examples() {
        let b = buffer_bytes(&AccConfig::reference_monolithic());
        assert_eq!((b.buff_l, b.buff_r, b.buff_o, b.total), (786_432, 524_288, 6_291_456, 15_204_352));

        let mut unit = AccConfig::new(1, 1, 1, 1, 1, 1);
        unit.kernel = KernelSpec { ti: 1, tk: 1, tj: 1, ctc: 1, bpd: 1 };
        let b = buffer_bytes(&unit);
        assert_eq!((b.buff_l, b.buff_r, b.buff_o, b.total), (1, 1, 1, 6));

        let base = AccConfig::new(2, 3, 4, 2, 2, 2);
        let doubled = AccConfig { z: 4, ..base };
        let (b0, b1) = (buffer_bytes(&base), buffer_bytes(&doubled));
        assert_eq!(b1.buff_r, 2 * b0.buff_r);
        assert_eq!(b1.buff_o, 2 * b0.buff_o);
        assert_eq!(b1.buff_l, b0.buff_l);
    }

    #[test]
    fn compute_time_examples() {
        let plat = PlatformSpec::vck190();
        let cfg = AccConfig::reference_monolithic();
        assert_eq!(compute_cycles::<f64>(&cfg, &plat), 81_920.0);
        assert!((compute_time::<f64>(&cfg, &plat) - 81.92e-6).abs() < 1e-15);

        let mut unit_plat = plat.clone();
        unit_plat.eff = 1.0;
        unit_plat.mac_per_cycle = 1;
        let mut unit = AccConfig::new(1, 1, 1, 1, 1, 1);
        unit.kernel = KernelSpec { ti: 1, tk: 1, tj: 1, ctc: 1, bpd: 4 };
        assert_eq!(compute_cycles::<f64>(&unit, &unit_plat), 1.0);

        let mut half = plat.clone();
        half.eff = 0.4;
        assert_eq!(compute_time::<f64>(&cfg, &half), 2.0 * compute_time::<f64>(&cfg, &plat));
    }

    #[test]
    fn compute_bound_limit() {
        let mut plat = PlatformSpec::vck190();
        plat.bw = BandwidthProfile {
            bw_l: f64::INFINITY,
            bw_r: f64::INFINITY,
            bw_o: f64::INFINITY,
            bw_total: f64::INFINITY,
        };
        let cfg = AccConfig::reference_monolithic();
        let layer = LayerShape::new(0, 3000, 500, 2000).with_batch(3).with_count(2);
        let est = layer_time::<f64>(&layer, &cfg, &plat);
        let c = tile_counts(&layer, &cfg);
        let expect = compute_time::<f64>(&cfg, &plat) * c.iterations() as f64 * 6.0;
        assert_eq!(est.total_time, expect);
    }

    #[test]
    fn throughput_examples() {
        let one = [LayerShape::new(0, 1, 1, 1)];
        assert!((throughput(&one, 2e-9_f64).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(throughput(&one, 0.0_f64), Err(Error::ZeroTime)));

        let bert = crate::workload::builtin_model("bert").unwrap();
        let g = throughput(&bert.layers, 57.2e-3_f64).unwrap();
        assert!((g - 1464.2).abs() / 1464.2 < 0.01, "{g}");

        let t1 = throughput(&bert.layers, 1.0_f64).unwrap();
        let t2 = throughput(&bert.layers, 2.0_f64).unwrap();
        assert!((t1 - 2.0 * t2).abs() < 1e-9);
    }

    #[test]
    fn single_precision_tracks_double() {
        let plat = PlatformSpec::vck190();
        let cfg = AccConfig::reference_monolithic();
        for s in [64, 1024, 6144] {
            let d = layer_time::<f64>(&square(s), &cfg, &plat);
            let f = layer_time::<f32>(&square(s), &cfg, &plat);
            assert!((f64::from(f.gflops) - d.gflops).abs() / d.gflops < 1e-5);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AccConfig::new(0, 1, 1, 1, 1, 1).validate().is_err());
        let mut cfg = AccConfig::new(1, 1, 1, 1, 1, 1);
        cfg.kernel.bpd = 3;
        assert!(cfg.validate().is_err());
        assert!(AccConfig::reference_monolithic().validate().is_ok());
    }
}
