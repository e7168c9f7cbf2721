//! Per-node bookkeeping.
//!
//! A node tracks its running jobs, the CPU share it has promised to jobs that
//! were admitted but not yet dispatched (`reserved_load`), and how much work
//! each job has received. Every job's *minimum share* is the CPU fraction that
//! finishes its remaining work exactly on its deadline; a node accepts a new
//! job only if the sum of all minimum shares, reservations included, stays
//! within one full CPU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Job, JobId, JobProgress, NodeId, SHARE_TOLERANCE};

/// Work below `WORK_EPSILON * length` counts as finished.
pub const WORK_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error(
        "node {node}: reserving {share} for job {job} overflows capacity (committed {committed})"
    )]
    ReservationOverflow {
        node: NodeId,
        job: JobId,
        share: f64,
        committed: f64,
    },
    #[error("node {node}: job {job} already holds a reservation")]
    DuplicateReservation { node: NodeId, job: JobId },
    #[error("node {node}: job {job} dispatched without a reservation")]
    MissingReservation { node: NodeId, job: JobId },
    #[error("node {node}: equal split 1/{count} is below job {job}'s minimum share {min_share}")]
    QuantizedInfeasible {
        node: NodeId,
        job: JobId,
        count: usize,
        min_share: f64,
    },
    #[error("node {node}: job {job} cannot finish by its deadline at t={now}")]
    InfeasibleJob { node: NodeId, job: JobId, now: f64 },
    #[error("node {node}: exclusive start of job {job} on a busy node")]
    NodeBusy { node: NodeId, job: JobId },
}

/// How a node divides its CPU among running jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    /// Each job gets exactly its minimum share; slack idles.
    DeadlineExact,
    /// Minimum shares scaled up so the whole unreserved CPU is used.
    #[default]
    ProportionalScaleup,
    /// `n` running jobs get `1/n` each.
    EqualQuantized,
}

impl AllocationMode {
    pub const ALL: [AllocationMode; 3] = [
        AllocationMode::DeadlineExact,
        AllocationMode::ProportionalScaleup,
        AllocationMode::EqualQuantized,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AllocationMode::DeadlineExact => "deadline-exact",
            AllocationMode::ProportionalScaleup => "proportional-scaleup",
            AllocationMode::EqualQuantized => "equal-quantized",
        }
    }
}

impl std::str::FromStr for AllocationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AllocationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown allocation mode `{s}` (expected deadline-exact, proportional-scaleup or equal-quantized)")
            })
    }
}

/// Smallest CPU fraction that completes `remaining_work` MI within
/// `time_to_deadline` seconds on a node of `capacity` MIPS.
///
/// Returns 0 for finished work and `f64::INFINITY` when work remains but the
/// deadline has passed.
pub fn min_share(remaining_work: f64, capacity: f64, time_to_deadline: f64) -> f64 {
    if remaining_work <= 0.0 {
        0.0
    } else if time_to_deadline <= 0.0 {
        f64::INFINITY
    } else {
        (remaining_work / capacity) / time_to_deadline
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningJob {
    pub job: Job,
    pub progress: JobProgress,
    pub dispatched_at: f64,
    /// MI delivered so far.
    pub work_done: f64,
    /// MI the job really needs; equals `job.length_mi` when estimates are exact.
    pub actual_length: f64,
}

impl RunningJob {
    /// Remaining work as the scheduler believes it, from the user's estimate.
    pub fn estimated_remaining(&self) -> f64 {
        (self.job.length_mi - self.work_done).max(0.0)
    }

    pub fn actual_remaining(&self) -> f64 {
        (self.actual_length - self.work_done).max(0.0)
    }

    pub fn min_share(&self, capacity: f64, now: f64) -> f64 {
        min_share(
            self.estimated_remaining(),
            capacity,
            self.job.absolute_deadline() - now,
        )
    }

    fn is_finished(&self) -> bool {
        self.actual_remaining() <= WORK_EPSILON * self.actual_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reservation {
    pub job: JobId,
    pub share: f64,
}

/// Per-job CPU fractions in force on one node from `at` onwards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShareAssignment {
    pub shares: Vec<(JobId, f64)>,
    /// `None` for exclusive full-share execution (FIFO).
    pub mode: Option<AllocationMode>,
    pub at: f64,
}

impl ShareAssignment {
    pub fn idle(at: f64) -> Self {
        ShareAssignment {
            shares: Vec::new(),
            mode: None,
            at,
        }
    }

    pub fn share_of(&self, job: JobId) -> f64 {
        self.shares
            .iter()
            .find(|(id, _)| *id == job)
            .map_or(0.0, |(_, s)| *s)
    }

    pub fn total(&self) -> f64 {
        self.shares.iter().map(|(_, s)| s).sum()
    }
}

/// Verdict of a node asked whether it can take a job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Admission {
    Accept {
        /// Idle CPU left if the job is admitted.
        projected_loadfree: f64,
        /// The job's minimum share at the time of the query.
        share: f64,
    },
    Reject {
        required: f64,
    },
}

impl Admission {
    pub fn is_accept(&self) -> bool {
        matches!(self, Admission::Accept { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    /// MIPS rating.
    pub capacity: f64,
    pub running: Vec<RunningJob>,
    pub reservations: Vec<Reservation>,
    pub reserved_load: f64,
    /// Total MI delivered since the node was created.
    pub delivered_mi: f64,
}

impl NodeState {
    pub fn new(id: NodeId, capacity: f64) -> Self {
        NodeState {
            id,
            capacity,
            running: Vec::new(),
            reservations: Vec::new(),
            reserved_load: 0.0,
            delivered_mi: 0.0,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty()
    }

    /// Sum of the running jobs' minimum shares at `now`.
    pub fn committed_share(&self, now: f64) -> f64 {
        self.running
            .iter()
            .map(|r| r.min_share(self.capacity, now))
            .sum()
    }

    /// Idle CPU fraction after honouring every running job and reservation.
    /// Not clamped: a negative value means estimates were violated.
    pub fn loadfree(&self, now: f64) -> f64 {
        1.0 - self.committed_share(now) - self.reserved_load
    }

    fn job_share(&self, job: &Job, now: f64) -> f64 {
        min_share(job.length_mi, self.capacity, job.absolute_deadline() - now)
    }

    /// Can this node finish `job` by its deadline alongside everything it has
    /// already committed to? A total of exactly one CPU is acceptable.
    pub fn can_accept(&self, job: &Job, now: f64) -> Admission {
        let share = self.job_share(job, now);
        let total = self.committed_share(now) + self.reserved_load + share;
        if total <= 1.0 + SHARE_TOLERANCE {
            Admission::Accept {
                projected_loadfree: 1.0 - total,
                share,
            }
        } else {
            Admission::Reject { required: share }
        }
    }

    /// [`can_accept`](Self::can_accept), plus the equal-split condition when
    /// the node runs in [`AllocationMode::EqualQuantized`]: once admitted,
    /// every job's `1/n` slice must still cover its minimum share.
    pub fn can_accept_in_mode(&self, job: &Job, now: f64, mode: AllocationMode) -> Admission {
        let verdict = self.can_accept(job, now);
        if mode != AllocationMode::EqualQuantized {
            return verdict;
        }
        let Admission::Accept { share, .. } = verdict else {
            return verdict;
        };
        let count = self.running.len() + self.reservations.len() + 1;
        let slice = 1.0 / count as f64;
        let widest = self
            .running
            .iter()
            .map(|r| r.min_share(self.capacity, now))
            .chain(self.reservations.iter().map(|r| r.share))
            .fold(share, f64::max);
        if widest <= slice + SHARE_TOLERANCE {
            verdict
        } else {
            Admission::Reject { required: share }
        }
    }

    /// Promises the job's current minimum share to it until dispatch.
    pub fn reserve(&mut self, job: &Job, now: f64) -> Result<f64, LedgerError> {
        if self.reservations.iter().any(|r| r.job == job.id) {
            return Err(LedgerError::DuplicateReservation {
                node: self.id,
                job: job.id,
            });
        }
        let share = self.job_share(job, now);
        let committed = self.committed_share(now) + self.reserved_load;
        if !(committed + share <= 1.0 + SHARE_TOLERANCE) {
            return Err(LedgerError::ReservationOverflow {
                node: self.id,
                job: job.id,
                share,
                committed,
            });
        }
        self.reservations.push(Reservation { job: job.id, share });
        self.reserved_load += share;
        Ok(share)
    }

    /// Starts a reserved job and releases its reservation. Shares are not
    /// recomputed here; call [`reallocate`](Self::reallocate) afterwards.
    pub fn dispatch(&mut self, job: &Job, now: f64) -> Result<(), LedgerError> {
        self.dispatch_with_actual(job, now, job.length_mi)
    }

    /// Like [`dispatch`](Self::dispatch) but the job really needs
    /// `actual_length` MI, which may differ from its estimate.
    pub fn dispatch_with_actual(
        &mut self,
        job: &Job,
        now: f64,
        actual_length: f64,
    ) -> Result<(), LedgerError> {
        let pos = self
            .reservations
            .iter()
            .position(|r| r.job == job.id)
            .ok_or(LedgerError::MissingReservation {
                node: self.id,
                job: job.id,
            })?;
        let reservation = self.reservations.remove(pos);
        self.reserved_load -= reservation.share;
        if self.reservations.is_empty() {
            self.reserved_load = 0.0;
        }
        self.push_running(job, now, actual_length);
        Ok(())
    }

    /// Runs a job alone on an idle node without any reservation (FIFO).
    pub fn start_exclusive(
        &mut self,
        job: &Job,
        now: f64,
        actual_length: f64,
    ) -> Result<(), LedgerError> {
        if !self.running.is_empty() {
            return Err(LedgerError::NodeBusy {
                node: self.id,
                job: job.id,
            });
        }
        self.push_running(job, now, actual_length);
        Ok(())
    }

    fn push_running(&mut self, job: &Job, now: f64, actual_length: f64) {
        let mut job = *job;
        job.state = crate::domain::JobState::Running { node: self.id };
        self.running.push(RunningJob {
            job,
            progress: JobProgress::default(),
            dispatched_at: now,
            work_done: 0.0,
            actual_length,
        });
    }

    /// Recomputes CPU shares from the jobs' remaining work and time left.
    pub fn reallocate(
        &self,
        now: f64,
        mode: AllocationMode,
    ) -> Result<ShareAssignment, LedgerError> {
        let mins = self
            .running
            .iter()
            .map(|r| {
                let m = r.min_share(self.capacity, now);
                if m.is_finite() {
                    Ok((r.job.id, m))
                } else {
                    Err(LedgerError::InfeasibleJob {
                        node: self.id,
                        job: r.job.id,
                        now,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let n = mins.len();
        let available = (1.0 - self.reserved_load).max(0.0);
        let sum: f64 = mins.iter().map(|(_, m)| m).sum();
        let shares = match mode {
            AllocationMode::DeadlineExact => {
                let mut shares = mins.clone();
                // Jobs that outran their estimate have no minimum share left;
                // they split whatever would otherwise idle.
                let overrun: Vec<usize> = self
                    .running
                    .iter()
                    .enumerate()
                    .filter(|(i, r)| mins[*i].1 == 0.0 && r.actual_remaining() > 0.0)
                    .map(|(i, _)| i)
                    .collect();
                if !overrun.is_empty() {
                    let slack = (available - sum).max(0.0) / overrun.len() as f64;
                    for i in overrun {
                        shares[i].1 = slack;
                    }
                }
                shares
            }
            AllocationMode::ProportionalScaleup => {
                if n == 0 {
                    Vec::new()
                } else if sum > 0.0 {
                    let scale = available / sum;
                    mins.iter().map(|&(id, m)| (id, m * scale)).collect()
                } else {
                    let each = available / n as f64;
                    mins.iter().map(|&(id, _)| (id, each)).collect()
                }
            }
            AllocationMode::EqualQuantized => {
                let each = if n == 0 { 0.0 } else { 1.0 / n as f64 };
                if let Some(&(job, min_share)) =
                    mins.iter().find(|(_, m)| *m > each + SHARE_TOLERANCE)
                {
                    return Err(LedgerError::QuantizedInfeasible {
                        node: self.id,
                        job,
                        count: n,
                        min_share,
                    });
                }
                mins.iter().map(|&(id, _)| (id, each)).collect()
            }
        };
        Ok(ShareAssignment {
            shares,
            mode: Some(mode),
            at: now,
        })
    }

    /// Runs the node for `dt` seconds under `assignment`.
    pub fn advance(&mut self, dt: f64, assignment: &ShareAssignment) {
        if dt <= 0.0 {
            return;
        }
        for r in &mut self.running {
            let share = assignment.share_of(r.job.id);
            let before = r.work_done;
            r.work_done = (r.work_done + share * self.capacity * dt).min(r.actual_length);
            let delivered = r.work_done - before;
            self.delivered_mi += delivered;
            r.progress.cpu_done = r.work_done / self.capacity;
            r.progress.wall_elapsed += dt;
            r.progress.share = share;
        }
    }

    /// Removes and returns every job whose work is done.
    pub fn take_finished(&mut self) -> Vec<RunningJob> {
        let mut done = Vec::new();
        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].is_finished() {
                let mut r = self.running.remove(i);
                self.delivered_mi += r.actual_length - r.work_done;
                r.work_done = r.actual_length;
                r.progress.cpu_done = r.actual_length / self.capacity;
                done.push(r);
            } else {
                i += 1;
            }
        }
        done
    }
}
