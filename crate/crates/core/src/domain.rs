//! Core value types shared by the scheduler, the ledger and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a job within a trace.
pub type JobId = u64;

/// Identifier of a cluster node, `0..node_count`.
pub type NodeId = usize;

/// Tolerance applied to every comparison of summed CPU shares.
pub const SHARE_TOLERANCE: f64 = 1e-9;

/// Slack allowed when deciding whether a completion met its deadline (seconds).
///
/// Jobs running at exactly their minimum share finish on their deadline, so the
/// analytic completion time can land a few ulps past it.
pub const DEADLINE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}: {value}")]
pub struct ValidationError {
    pub field: &'static str,
    pub value: f64,
}

/// Why a job was turned away at submission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Budget,
    Deadline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum JobState {
    Pending,
    Running { node: NodeId },
    Completed { at: f64 },
    Rejected { reason: RejectReason },
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Completed { .. } | JobState::Rejected { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("illegal job state transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: JobState,
    pub to: JobState,
}

/// One batch job: work in MI, relative deadline, budget and arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub id: JobId,
    /// Submission time in simulation seconds.
    pub arrival: f64,
    /// Work amount in million instructions.
    pub length_mi: f64,
    /// Deadline in seconds, relative to `arrival`.
    pub deadline: f64,
    pub budget: f64,
    pub state: JobState,
}

impl Job {
    pub fn new(id: JobId, arrival: f64, length_mi: f64, deadline: f64, budget: f64) -> Self {
        Job {
            id,
            arrival,
            length_mi,
            deadline,
            budget,
            state: JobState::Pending,
        }
    }

    /// Standalone runtime on one node of the given MIPS rating.
    pub fn estimate(&self, node_capacity: f64) -> f64 {
        self.length_mi / node_capacity
    }

    pub fn absolute_deadline(&self) -> f64 {
        self.arrival + self.deadline
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let checks: [(&'static str, f64, bool); 4] = [
            ("length", self.length_mi, self.length_mi > 0.0),
            ("deadline", self.deadline, self.deadline > 0.0),
            ("budget", self.budget, self.budget >= 0.0),
            ("arrival", self.arrival, self.arrival >= 0.0),
        ];
        for (field, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(ValidationError { field, value });
            }
        }
        Ok(())
    }

    /// Moves the job along pending -> running -> completed, or pending -> rejected.
    pub fn transition(&mut self, to: JobState) -> Result<(), TransitionError> {
        let legal = matches!(
            (self.state, to),
            (JobState::Pending, JobState::Running { .. })
                | (JobState::Pending, JobState::Rejected { .. })
                | (JobState::Running { .. }, JobState::Completed { .. })
        );
        if legal {
            self.state = to;
            Ok(())
        } else {
            Err(TransitionError {
                from: self.state,
                to,
            })
        }
    }
}

pub fn validate_job(job: &Job) -> Result<(), ValidationError> {
    job.validate()
}

pub fn absolute_deadline(job: &Job) -> f64 {
    job.absolute_deadline()
}

/// Execution progress of a dispatched job.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JobProgress {
    /// CPU seconds consumed so far.
    pub cpu_done: f64,
    /// Wall-clock seconds since dispatch.
    pub wall_elapsed: f64,
    /// Currently allocated CPU fraction.
    pub share: f64,
}

/// A homogeneous cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub node_count: usize,
    /// MIPS rating of every node.
    pub node_capacity: f64,
}

impl ClusterConfig {
    pub const DEFAULT_CAPACITY: f64 = 100.0;

    pub fn new(node_count: usize, node_capacity: f64) -> Self {
        ClusterConfig {
            node_count,
            node_capacity,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.node_count < 1 {
            return Err(ValidationError {
                field: "node_count",
                value: self.node_count as f64,
            });
        }
        if !(self.node_capacity > 0.0 && self.node_capacity.is_finite()) {
            return Err(ValidationError {
                field: "node_capacity",
                value: self.node_capacity,
            });
        }
        Ok(())
    }
}

/// Coefficients of the cost function `alpha * E + beta * E / D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingParams {
    /// Currency per second of standalone runtime.
    pub alpha: f64,
    /// Currency charged per unit of urgency `E / D`.
    pub beta: f64,
}

impl PricingParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ValidationError> {
        let params = PricingParams { alpha, beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ValidationError {
                field: "alpha",
                value: self.alpha,
            });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ValidationError {
                field: "beta",
                value: self.beta,
            });
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(ValidationError {
                field: "alpha+beta",
                value: 0.0,
            });
        }
        Ok(())
    }
}

impl Default for PricingParams {
    fn default() -> Self {
        PricingParams {
            alpha: 1.0,
            beta: 100.0,
        }
    }
}
