//! Hardware platform descriptions: the budget every search is bounded by.

use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::perfmodel::{self, AccConfig};
use crate::workload::LayerShape;
use crate::{Error, Result};

/// Off-chip bandwidth available to the LHS, RHS and output streams, in bytes/s.
///
/// The three streams are time-multiplexed over the same memory, so their sum
/// may exceed `bw_total`; each one individually may not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawBandwidth")]
pub struct BandwidthProfile {
    pub bw_l: f64,
    pub bw_r: f64,
    pub bw_o: f64,
    pub bw_total: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBandwidth {
    bw_total: f64,
    bw_l: Option<f64>,
    bw_r: Option<f64>,
    bw_o: Option<f64>,
}

impl From<RawBandwidth> for BandwidthProfile {
    fn from(raw: RawBandwidth) -> Self {
        let share = raw.bw_total / 4.0;
        BandwidthProfile {
            bw_l: raw.bw_l.unwrap_or(share),
            bw_r: raw.bw_r.unwrap_or(share),
            bw_o: raw.bw_o.unwrap_or(share),
            bw_total: raw.bw_total,
        }
    }
}

impl BandwidthProfile {
    /// Uncalibrated profile: every stream gets a quarter of the peak.
    pub fn uncalibrated(bw_total: f64) -> Self {
        let share = bw_total / 4.0;
        BandwidthProfile {
            bw_l: share,
            bw_r: share,
            bw_o: share,
            bw_total,
        }
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        BandwidthProfile {
            bw_l: self.bw_l * factor,
            bw_r: self.bw_r * factor,
            bw_o: self.bw_o * factor,
            bw_total: self.bw_total * factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bw.bw_l", self.bw_l),
            ("bw.bw_r", self.bw_r),
            ("bw.bw_o", self.bw_o),
            ("bw.bw_total", self.bw_total),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        for (name, v) in &fields[..3] {
            if *v > self.bw_total {
                return Err(Error::invalid(
                    *name,
                    format!("{v} exceeds bw_total {}", self.bw_total),
                ));
            }
        }
        Ok(())
    }
}

/// A hardware budget: compute tiles, stream ports, on-chip RAM, clocks and
/// off-chip bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub name: String,
    /// Free-form provenance notes; carried through load/save unchanged.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub aie_total: u32,
    #[serde(default = "default_plio")]
    pub plio_in: u32,
    #[serde(default = "default_plio")]
    pub plio_out: u32,
    pub ram_bytes: u64,
    #[serde(default = "default_freq")]
    pub aie_freq_hz: f64,
    #[serde(default = "default_mac")]
    pub mac_per_cycle: u32,
    #[serde(default = "default_eff")]
    pub eff: f64,
    pub bw: BandwidthProfile,
}

fn default_plio() -> u32 {
    128
}
fn default_freq() -> f64 {
    1e9
}
fn default_mac() -> u32 {
    8
}
fn default_eff() -> f64 {
    0.8
}

/// URAM blocks on the device: 384 used blocks are 82.94% utilisation.
const VCK190_URAM_BLOCKS: u64 = 463;
/// BRAM blocks on the device: 764 used blocks are 79.01% utilisation.
const VCK190_BRAM_BLOCKS: u64 = 967;
const URAM_BLOCK_BYTES: u64 = 32 * 1024;
const BRAM_BLOCK_BYTES: u64 = 4608;

impl PlatformSpec {
    /// The VCK190 board: 8x50 tiles at 1 GHz, 25.6 GB/s DDR4, uncalibrated
    /// bandwidth split.
    pub fn vck190() -> Self {
        PlatformSpec {
            name: "vck190".to_string(),
            notes: vec![
                "ram_bytes = 463 URAM x 32 KiB + 967 BRAM x 4.5 KiB (block totals inferred from 384 URAM = 82.94% and 764 BRAM = 79.01%)".to_string(),
                "plio_in/plio_out = 128/128 are assumed, not device facts".to_string(),
                "bw_l/bw_r/bw_o default to bw_total/4 until calibrated".to_string(),
            ],
            aie_total: 400,
            plio_in: default_plio(),
            plio_out: default_plio(),
            ram_bytes: VCK190_URAM_BLOCKS * URAM_BLOCK_BYTES + VCK190_BRAM_BLOCKS * BRAM_BLOCK_BYTES,
            aie_freq_hz: default_freq(),
            mac_per_cycle: default_mac(),
            eff: default_eff(),
            bw: BandwidthProfile::uncalibrated(25.6e9),
        }
    }

    /// The VCK190 board with its bandwidth profile fitted to
    /// [`vck190_reference_table`] rows 64, 1024 and 6144 on the reference
    /// monolithic accelerator.
    pub fn vck190_calibrated() -> Result<Self> {
        let mut plat = Self::vck190();
        let cfg = AccConfig::reference_monolithic();
        let obs: Vec<_> = vck190_reference_table()
            .iter()
            .filter(|(size, _)| matches!(size, 64 | 1024 | 6144))
            .map(|&(size, gflops)| Observation { size, cfg, gflops })
            .collect();
        let fit = calibrate_bandwidth(&plat, &obs, &CalibrationOptions::default())?;
        plat.name = "vck190-calibrated".to_string();
        plat.notes.push(format!(
            "bandwidth fitted to square sizes 64/1024/6144 on the 384-tile reference design (residual {:.3e})",
            fit.residual
        ));
        plat.bw = fit.profile;
        Ok(plat)
    }

    /// Looks up a built-in platform by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "vck190" => Ok(Self::vck190()),
            "vck190-calibrated" => Self::vck190_calibrated(),
            other => Err(Error::invalid("platform", format!("unknown built-in platform `{other}`"))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: PlatformSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("platform serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("aie_total", self.aie_total),
            ("plio_in", self.plio_in),
            ("plio_out", self.plio_out),
            ("mac_per_cycle", self.mac_per_cycle),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.ram_bytes == 0 {
            return Err(Error::invalid("ram_bytes", "must be positive"));
        }
        if !(self.eff > 0.0 && self.eff <= 1.0) {
            return Err(Error::invalid("eff", format!("must lie in (0, 1], got {}", self.eff)));
        }
        if !(self.aie_freq_hz.is_finite() && self.aie_freq_hz > 0.0) {
            return Err(Error::invalid("aie_freq_hz", "must be positive and finite"));
        }
        self.bw.validate()
    }

    /// Peak throughput of the whole tile array with the platform efficiency
    /// applied, in GFLOPS.
    pub fn compute_roof_gflops(&self) -> f64 {
        f64::from(self.aie_total) * f64::from(self.mac_per_cycle) * 2.0 * self.aie_freq_hz * self.eff
            / 1e9
    }

    /// Same platform with a different bandwidth profile.
    pub fn with_bandwidth(&self, bw: BandwidthProfile) -> Self {
        PlatformSpec { bw, ..self.clone() }
    }
}

/// Reads and validates a platform file.
pub fn load_platform(path: impl AsRef<Path>) -> Result<PlatformSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PlatformSpec::from_json_str(&text)
}

/// Estimated GFLOPS of the 384-tile monolithic design on square problems,
/// as published for the VCK190.
pub fn vck190_reference_table() -> [(u64, f64); 10] {
    [
        (64, 0.40),
        (128, 3.22),
        (256, 25.79),
        (512, 178.42),
        (1024, 1123.81),
        (1536, 1649.01),
        (2048, 1688.17),
        (3072, 2895.90),
        (4096, 2773.26),
        (6144, 3363.89),
    ]
}

/// Positive rational scale factors for a what-if platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub aie: Ratio<u64>,
    pub ram: Ratio<u64>,
    pub bw: Ratio<u64>,
}

impl Scale {
    pub fn identity() -> Self {
        let one = Ratio::from_integer(1);
        Scale {
            aie: one,
            ram: one,
            bw: one,
        }
    }

    pub fn new(aie: Ratio<u64>, ram: Ratio<u64>, bw: Ratio<u64>) -> Self {
        Scale { aie, ram, bw }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "aie x{},ram x{},bw x{}", self.aie, self.ram, self.bw)
    }
}

/// Scales the tile count, RAM and every bandwidth figure. Counts are rounded
/// down and floored at 1.
pub fn scale_platform(spec: &PlatformSpec, scale: &Scale) -> Result<PlatformSpec> {
    for (name, r) in [("aie_scale", scale.aie), ("ram_scale", scale.ram), ("bw_scale", scale.bw)] {
        if *r.numer() == 0 || *r.denom() == 0 {
            return Err(Error::invalid(name, "scale factors must be positive"));
        }
    }
    let aie = (Ratio::from_integer(u64::from(spec.aie_total)) * scale.aie)
        .to_integer()
        .clamp(1, u64::from(u32::MAX)) as u32;
    let ram = scale_count(spec.ram_bytes, scale.ram);
    let bw_factor = scale.bw.to_f64().expect("ratio converts to f64");
    let scaled = PlatformSpec {
        name: format!("{}[{}]", spec.name, scale),
        aie_total: aie,
        ram_bytes: ram,
        bw: spec.bw.scaled(bw_factor),
        ..spec.clone()
    };
    scaled.validate()?;
    Ok(scaled)
}

fn scale_count(v: u64, r: Ratio<u64>) -> u64 {
    // u128 keeps v * numer exact for any realistic byte count.
    let scaled = u128::from(v) * u128::from(*r.numer()) / u128::from(*r.denom());
    scaled.clamp(1, u128::from(u64::MAX)) as u64
}

/// One measured point: a square problem of side `size` run on `cfg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub size: u64,
    pub cfg: AccConfig,
    pub gflops: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Grid points per bandwidth component: `bw_total * i / resolution` for
    /// `i = 1..=resolution`. Doubling the resolution refines the grid, so the
    /// residual never gets worse.
    pub resolution: u32,
    /// Fits whose root-mean-square relative error exceeds this are rejected.
    pub max_rms_rel_error: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            resolution: 128,
            max_rms_rel_error: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub profile: BandwidthProfile,
    /// Sum of squared relative GFLOPS errors over the observations.
    pub residual: f64,
}

/// An observation counts as bandwidth-bound when it falls this far below the
/// throughput the same design would reach with unlimited bandwidth.
const BANDWIDTH_BOUND_RATIO: f64 = 0.95;

/// Fits the per-stream bandwidths so that modeled GFLOPS track the
/// observations, by exhaustive search over a fixed grid.
///
/// Ties are broken toward larger `bw_o`, then `bw_l`, then `bw_r`.
pub fn calibrate_bandwidth(
    spec: &PlatformSpec,
    observations: &[Observation],
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if observations.len() < 3 {
        return Err(Error::Unidentifiable(format!(
            "need at least 3 observations, got {}",
            observations.len()
        )));
    }
    if opts.resolution == 0 {
        return Err(Error::invalid("resolution", "must be at least 1"));
    }
    let prepared: Vec<Prepared> = observations
        .iter()
        .map(|o| Prepared::new(o, spec))
        .collect::<Result<_>>()?;
    if !prepared
        .iter()
        .any(|p| p.observed < BANDWIDTH_BOUND_RATIO * p.compute_only_gflops())
    {
        return Err(Error::Unidentifiable(
            "every observation is compute-bound".to_string(),
        ));
    }

    let grid: Vec<f64> = (1..=opts.resolution)
        .rev()
        .map(|i| spec.bw.bw_total * f64::from(i) / f64::from(opts.resolution))
        .collect();
    let mut best: Option<(f64, [f64; 3])> = None;
    for &bw_o in &grid {
        for &bw_l in &grid {
            for &bw_r in &grid {
                let residual: f64 = prepared.iter().map(|p| p.sq_rel_error(bw_l, bw_r, bw_o)).sum();
                if best.is_none_or(|(r, _)| residual < r) {
                    best = Some((residual, [bw_l, bw_r, bw_o]));
                }
            }
        }
    }
    let (residual, [bw_l, bw_r, bw_o]) = best.expect("grid is non-empty");
    let rms = (residual / prepared.len() as f64).sqrt();
    if !(rms <= opts.max_rms_rel_error) {
        return Err(Error::NoFeasibleProfile { residual });
    }
    let profile = BandwidthProfile {
        bw_l,
        bw_r,
        bw_o,
        bw_total: spec.bw.bw_total,
    };
    profile.validate()?;
    Ok(Calibration { profile, residual })
}

/// Observation with everything that does not depend on bandwidth precomputed.
struct Prepared {
    observed: f64,
    ops: f64,
    buffers: [f64; 3],
    time_comp: f64,
    tiles: (u64, u64, u64),
}

impl Prepared {
    fn new(o: &Observation, spec: &PlatformSpec) -> Result<Self> {
        o.cfg.validate()?;
        if !(o.gflops.is_finite() && o.gflops > 0.0) {
            return Err(Error::invalid("observation.gflops", "must be positive"));
        }
        let layer = LayerShape::new(0, o.size, o.size, o.size);
        let counts = perfmodel::tile_counts(&layer, &o.cfg);
        let buf = perfmodel::buffer_bytes(&o.cfg);
        Ok(Prepared {
            observed: o.gflops,
            ops: layer.ops() as f64,
            buffers: [buf.buff_l as f64, buf.buff_r as f64, buf.buff_o as f64],
            time_comp: perfmodel::compute_time::<f64>(&o.cfg, spec),
            tiles: (counts.tx, counts.ty, counts.tz),
        })
    }

    fn compute_only_gflops(&self) -> f64 {
        let (tx, ty, tz) = self.tiles;
        self.ops / (self.time_comp * (tx * ty * tz) as f64) / 1e9
    }

    fn sq_rel_error(&self, bw_l: f64, bw_r: f64, bw_o: f64) -> f64 {
        let total = perfmodel::pipelined_time(
            self.buffers[0] / bw_l,
            self.buffers[1] / bw_r,
            self.buffers[2] / bw_o,
            self.time_comp,
            self.tiles,
            1,
        );
        let modeled = self.ops / total / 1e9;
        let rel = (modeled - self.observed) / self.observed;
        rel * rel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Ratio<u64> {
        Ratio::new(n, d)
    }

    #[test]
    fn vck190_fixture_is_valid() {
        let p = PlatformSpec::vck190();
        p.validate().unwrap();
        assert_eq!(p.aie_total, 400);
        assert_eq!(p.aie_freq_hz, 1e9);
        assert_eq!(p.bw.bw_total, 25.6e9);
        assert_eq!(p.bw.bw_l, 6.4e9);
        assert_eq!(p.ram_bytes, 19_627_520);
    }

    #[test]
    fn zero_eff_is_rejected() {
        let mut p = PlatformSpec::vck190();
        p.eff = 0.0;
        match p.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "eff"),
            other => panic!("expected invalid eff, got {other:?}"),
        }
    }

    #[test]
    fn json_defaults_and_unknown_fields() {
        let text = r#"{"name":"t","aie_total":4,"ram_bytes":1024,"bw":{"bw_total":100.0}}"#;
        let p = PlatformSpec::from_json_str(text).unwrap();
        assert_eq!(p.plio_in, 128);
        assert_eq!(p.bw.bw_o, 25.0);
        assert_eq!(p.eff, 0.8);

        let bad = r#"{"name":"t","aie_total":4,"ram_bytes":1024,"bw":{"bw_total":1.0},"color":"red"}"#;
        assert!(matches!(PlatformSpec::from_json_str(bad), Err(Error::Parse(_))));

        let missing = r#"{"name":"t","ram_bytes":1024,"bw":{"bw_total":1.0}}"#;
        assert!(matches!(PlatformSpec::from_json_str(missing), Err(Error::Parse(_))));
    }

    #[test]
    fn json_round_trip() {
        let p = PlatformSpec::vck190();
        assert_eq!(PlatformSpec::from_json_str(&p.to_json_string()).unwrap(), p);
    }

    #[test]
    fn stream_bandwidth_above_total_is_rejected() {
        let text = r#"{"name":"t","aie_total":4,"ram_bytes":1024,"bw":{"bw_total":100.0,"bw_l":200.0}}"#;
        assert!(matches!(
            PlatformSpec::from_json_str(text),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn scaling_examples() {
        let p = PlatformSpec::vck190();
        let hbm = scale_platform(&p, &Scale::new(r(1, 1), r(1, 1), r(16, 1))).unwrap();
        assert!((hbm.bw.bw_total - 409.6e9).abs() < 1.0);
        assert_eq!(hbm.aie_total, 400);

        let small = scale_platform(&p, &Scale::new(r(1, 8), r(1, 1), r(1, 1))).unwrap();
        assert_eq!(small.aie_total, 50);

        let same = scale_platform(&p, &Scale::identity()).unwrap();
        assert_ne!(same.name, p.name);
        assert_eq!(PlatformSpec { name: p.name.clone(), ..same }, p);
    }

    #[test]
    fn scaling_floors_counts_at_one() {
        let p = PlatformSpec::vck190();
        let tiny = scale_platform(&p, &Scale::new(r(1, 1000), r(1, 1 << 40), r(1, 1))).unwrap();
        assert_eq!(tiny.aie_total, 1);
        assert_eq!(tiny.ram_bytes, 1);
    }

    #[test]
    fn zero_scale_is_rejected() {
        let p = PlatformSpec::vck190();
        let zero = Scale::new(r(0, 1), r(1, 1), r(1, 1));
        assert!(scale_platform(&p, &zero).is_err());
    }

    #[test]
    fn calibration_needs_three_observations() {
        let p = PlatformSpec::vck190();
        let obs = [Observation {
            size: 6144,
            cfg: AccConfig::reference_monolithic(),
            gflops: 4900.0,
        }];
        assert!(matches!(
            calibrate_bandwidth(&p, &obs, &CalibrationOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn calibration_rejects_compute_bound_only() {
        let p = PlatformSpec::vck190();
        let cfg = AccConfig::reference_monolithic();
        // Observations at the compute roof carry no bandwidth information.
        let obs: Vec<_> = [3072u64, 6144, 12288]
            .iter()
            .map(|&size| {
                let layer = LayerShape::new(0, size, size, size);
                let counts = perfmodel::tile_counts(&layer, &cfg);
                let t = perfmodel::compute_time::<f64>(&cfg, &p) * (counts.tx * counts.ty * counts.tz) as f64;
                Observation { size, cfg, gflops: layer.ops() as f64 / t / 1e9 }
            })
            .collect();
        assert!(matches!(
            calibrate_bandwidth(&p, &obs, &CalibrationOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn calibration_recovers_a_grid_profile() {
        let p = PlatformSpec::vck190();
        // Grid points at resolution 32. LHS loads outlast RHS loads here,
        // so only bw_l and bw_o are identifiable.
        let at = |i: u32| 25.6e9 * f64::from(i) / 32.0;
        let truth = BandwidthProfile {
            bw_l: at(4),
            bw_r: at(10),
            bw_o: at(7),
            bw_total: 25.6e9,
        };
        let truth_plat = p.with_bandwidth(truth);
        let cfg = AccConfig::reference_monolithic();
        let obs: Vec<_> = [64u64, 512, 1024, 3072, 6144]
            .iter()
            .map(|&size| {
                let est = perfmodel::layer_time::<f64>(&LayerShape::new(0, size, size, size), &cfg, &truth_plat);
                Observation { size, cfg, gflops: est.gflops }
            })
            .collect();
        let opts = CalibrationOptions {
            resolution: 32,
            ..Default::default()
        };
        let fit = calibrate_bandwidth(&p, &obs, &opts).unwrap();
        assert!(fit.residual < 1e-20, "residual {}", fit.residual);
        assert_eq!(fit.profile.bw_l, truth.bw_l);
        assert_eq!(fit.profile.bw_o, truth.bw_o);
        // Any bw_r at or above the point where time_r stops mattering is
        // equivalent; the tie rule picks the largest.
        assert!(fit.profile.bw_r >= truth.bw_r);
    }
}
