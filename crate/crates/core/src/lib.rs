//! Deadline and budget driven scheduling for batch clusters.
//!
//! Jobs carry a standalone runtime estimate, a deadline and a budget. A job is
//! admitted only if its budget covers `alpha * E + beta * E / D` and some node
//! can give it the CPU share it needs to finish by its deadline without
//! starving the jobs already there. The crate also contains a FIFO baseline,
//! a discrete-event simulator that runs both policies over synthetic
//! workloads, and the report writers used by the `libra` command-line tool.

use thiserror::Error;

pub mod domain;
pub mod engine;
pub mod node_ledger;
pub mod policy;
pub mod pricing;
pub mod report;
pub mod sweep;
pub mod workload;

pub use domain::{ClusterConfig, Job, JobId, JobProgress, JobState, NodeId, PricingParams};
pub use engine::{run, run_with_options, SimError, SimOptions, SimResult};
pub use node_ledger::{min_share, AllocationMode, NodeState, ShareAssignment};
pub use policy::{Decision, FifoConfig, LibraConfig, Outcome, PolicyKind, SelectionRule};
pub use pricing::{admit_budget, cost, CostQuote};
pub use workload::{generate, WorkloadSpec};

/// Broad classes of failure, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Workload(#[from] workload::WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] policy::PolicyError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{cell}: {source}")]
    Cell { cell: String, source: Box<Error> },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use workload::WorkloadError;
        match self {
            Error::Workload(WorkloadError::Io(_)) | Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
            Error::Workload(_) | Error::Json(_) | Error::Config(_) | Error::Policy(_) => {
                ErrorKind::Config
            }
            Error::Sim(e) if e.is_config_error() => ErrorKind::Config,
            Error::Sim(_) => ErrorKind::Internal,
            Error::Cell { source, .. } => source.kind(),
        }
    }
}
