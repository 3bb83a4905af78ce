//! File formats written under `--out`. Every type here reloads to the value
//! that was written.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hetacc_core::compose::Variant;
use hetacc_core::perfmodel::{buffer_bytes, port_count};
use hetacc_core::workload::{builtin_model, load_model};
use hetacc_core::{
    AccConfig, BufferFootprint, ModelSpec, PlatformSpec, PortCount, RankedDesign, ResourceBudget, ScheduleSummary,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a code generator needs to build one accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDescriptor {
    pub name: String,
    pub cfg: AccConfig,
    pub ports: PortCount,
    pub buffers: BufferFootprint,
    /// Kernel ids routed to this accelerator.
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<ResourceBudget>,
    pub modeled_time_s: f64,
    pub gflops: f64,
}

impl DesignDescriptor {
    pub fn new(name: String, d: &RankedDesign, assignment: Vec<usize>, budget: Option<ResourceBudget>) -> Self {
        debug_assert_eq!(d.ports, port_count(&d.cfg));
        DesignDescriptor {
            name,
            cfg: d.cfg,
            ports: port_count(&d.cfg),
            buffers: buffer_bytes(&d.cfg),
            assignment,
            budget,
            modeled_time_s: d.total_time,
            gflops: d.gflops,
        }
    }
}

/// One ranked design of `dse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseRow {
    pub problem: String,
    pub rank: u64,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub tiles: u64,
    pub ports_in: u32,
    pub ports_out: u32,
    pub buffer_bytes: u64,
    pub time_s: f64,
    pub gflops: f64,
    /// The 384-tile reference design on the same problem.
    pub reference_gflops: f64,
    pub candidates: u64,
}

/// One accelerator of `compose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRow {
    pub acc: usize,
    pub kernels: String,
    pub aie_budget: u32,
    pub ram_budget: u64,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub tiles: u64,
    pub time_s: f64,
}

/// One task of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: usize,
    pub latency_s: f64,
}

/// One `(scale, num, variant)` cell of `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bw_scale: String,
    pub aie_scale: String,
    pub ram_scale: String,
    pub num: usize,
    pub variant: Variant,
    /// Empty when the cell cannot be built.
    pub gflops: Option<f64>,
    pub tiles: u64,
    pub candidates: u64,
    pub roof_gflops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Results {
    Dse { rows: Vec<DseRow> },
    Compose {
        num_accs: usize,
        makespan_s: f64,
        gflops: f64,
        acc_times: Vec<f64>,
        partitions: u64,
        feasible_partitions: u64,
    },
    Simulate { summary: ScheduleSummary },
    Sweep {
        rows: Vec<SweepRow>,
        /// Per scale point: `(max - min) / max` over buildable cells.
        spreads: Vec<Option<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// `run.json`: what was run, on which inputs, and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub command: String,
    pub platform: String,
    pub platform_sha256: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub model_sha256: Option<String>,
    /// Configurations satisfying the constraints, summed over all searches.
    pub candidates: u64,
    pub results: Results,
    /// Every other file written, in write order.
    pub files: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn resolve_platform(arg: &str) -> anyhow::Result<PlatformSpec> {
    if Path::new(arg).is_file() {
        return Ok(hetacc_core::platform::load_platform(arg)?);
    }
    PlatformSpec::builtin(arg).with_context(|| format!("`{arg}` is neither a file nor a built-in platform"))
}

pub fn resolve_model(arg: &str) -> anyhow::Result<ModelSpec> {
    if Path::new(arg).is_file() {
        return Ok(load_model(arg)?);
    }
    builtin_model(arg).with_context(|| format!("`{arg}` is neither a file nor a built-in model"))
}

/// Writes files under one directory and remembers their digests.
pub struct OutDir {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.write(rel, &bytes)
    }

    /// Writes `run.json` last, listing every earlier file.
    pub fn finish(mut self, mut report: RunReport) -> anyhow::Result<RunReport> {
        report.files = std::mem::take(&mut self.files);
        self.write_json("run.json", &report)?;
        Ok(report)
    }
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
