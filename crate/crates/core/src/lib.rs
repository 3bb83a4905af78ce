//! Analytical design-space exploration for compositions of heterogeneous
//! matrix-multiply accelerators on a tiled compute array.
//!
//! The crate is organised bottom-up:
//!
//! * [`platform`] describes the hardware budget (tiles, stream ports, on-chip
//!   RAM, off-chip bandwidth) and fits a bandwidth profile to measurements.
//! * [`workload`] holds the matrix-multiply layers of an application, its
//!   non-MM fixed-cost kernels and the kernel dependency graph.
//! * [`perfmodel`] is the closed-form cost model of one layer on one
//!   accelerator configuration.
//! * [`dse`] exhaustively searches single-accelerator configurations.
//! * [`compose`] partitions layers and resources across several accelerators.
//! * [`sched`] simulates the runtime FIFO scheduler over concurrent tasks.
//!
//! The cost model and the scheduler are generic over the [`Real`] scalar; the
//! aliases at the crate root fix the scalar to `f64`, which is what the search
//! and the command-line driver use.

pub mod compose;
pub mod dse;
mod error;
pub mod perfmodel;
pub mod platform;
pub mod scalar;
pub mod sched;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Real;

pub use compose::{CompositionResult, ComposerParams, DuplicateDesign, Partition, RuntimeConfig};
pub use dse::{FactorBounds, RankedDesign, ResourceBudget, SearchResult};
pub use perfmodel::{AccConfig, BufferFootprint, KernelSpec, PortCount, TileCounts};
pub use platform::{BandwidthProfile, Observation, PlatformSpec, Scale};
pub use workload::{DependencyGraph, FixedKernel, LayerShape, ModelSpec, ShapeGroup};

/// Per-layer cost estimate in double precision.
pub type PerfEstimate = perfmodel::PerfEstimate<f64>;
/// Simulated schedule in double precision.
pub type Timeline = sched::Timeline<f64>;
/// Schedule event in double precision.
pub type ScheduleEvent = sched::ScheduleEvent<f64>;
/// Per-(kernel, accelerator) execution times in double precision.
pub type KernelTimes = sched::KernelTimes<f64>;
/// Latency/throughput summary in double precision.
pub type ScheduleSummary = sched::Summary<f64>;
