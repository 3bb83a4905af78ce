use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("unknown model `{0}` (expected one of bert, vit, ncf, mlp)")]
    UnknownModel(String),

    #[error("dependency graph has a self-edge on kernel {0}")]
    SelfEdge(usize),

    #[error("dependency edge references kernel {id}, but the model has {count} kernels")]
    DanglingId { id: usize, count: usize },

    #[error("dependency graph has a cycle: {}", format_cycle(.0))]
    Cycle(Vec<usize>),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("bandwidth is unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("no bandwidth profile on the grid fits the observations (best residual {residual:.6})")]
    NoFeasibleProfile { residual: f64 },

    #[error("total time must be positive")]
    ZeroTime,

    #[error("missing execution time for kernel {kernel} on accelerator {acc}")]
    MissingKernelTime { kernel: usize, acc: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that mean "the budget admits no design", as opposed to
    /// malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::NoFeasibleProfile { .. })
    }
}

fn format_cycle(ids: &[usize]) -> String {
    ids.iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}
