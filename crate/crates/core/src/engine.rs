//! Discrete-event simulation of a cluster under a scheduling policy.
//!
//! Shares are constant between events, so each job's progress is piecewise
//! linear and the next completion on a node is computed analytically.
//! Completions at a timestamp are handled before arrivals at the same
//! timestamp, and all arrivals sharing a timestamp are admitted (reserving
//! capacity) before any of them is dispatched.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ClusterConfig, Job, JobId, JobState, NodeId, RejectReason, ValidationError, DEADLINE_TOLERANCE,
    SHARE_TOLERANCE,
};
use crate::node_ledger::{LedgerError, NodeState, ShareAssignment};
use crate::policy::{Decision, Instruction, Outcome, PolicyError, PolicyKind, Scheduler};
use crate::pricing::CostQuote;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster: {0}")]
    Cluster(ValidationError),
    #[error("invalid pricing: {0}")]
    Pricing(ValidationError),
    #[error("invalid estimate error multiplier {0}")]
    EstimateError(f64),
    #[error("job {id}: {source}")]
    InvalidJob { id: JobId, source: ValidationError },
    #[error("trace is not sorted by arrival at job {0}")]
    UnsortedTrace(JobId),
    #[error("duplicate job id {0}")]
    DuplicateJob(JobId),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl SimError {
    /// Input problems, as opposed to bugs in the simulator.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            SimError::Cluster(_)
                | SimError::Pricing(_)
                | SimError::EstimateError(_)
                | SimError::InvalidJob { .. }
                | SimError::UnsortedTrace(_)
                | SimError::DuplicateJob(_)
        ) || matches!(self, SimError::Policy(PolicyError::UnknownPolicy(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    Completion {
        node: NodeId,
        generation: u64,
    },
    Arrival {
        index: usize,
    },
    /// Marks the last arrival of the trace.
    Horizon,
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::Arrival { .. } => 1,
            EventKind::Horizon => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub sequence: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Actual work = estimated work × this factor. Exploratory only; 1.0
    /// means estimates are exact.
    pub estimate_error: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            estimate_error: 1.0,
        }
    }
}

impl SimOptions {
    pub fn exact_estimates(&self) -> bool {
        self.estimate_error == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: JobId,
    pub arrival: f64,
    pub length_mi: f64,
    pub estimate: f64,
    pub absolute_deadline: f64,
    pub budget: f64,
    pub outcome: Option<Outcome>,
    pub node: Option<NodeId>,
    pub dispatch_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub met_deadline: Option<bool>,
    pub quote: Option<CostQuote>,
    pub state: JobState,
}

impl JobRecord {
    pub fn accepted(&self) -> bool {
        matches!(self.outcome, Some(Outcome::Assigned { .. }))
    }

    pub fn time_to_complete(&self) -> Option<f64> {
        self.completion_time.map(|c| c - self.arrival)
    }

    pub fn time_remaining_to_deadline(&self) -> Option<f64> {
        self.completion_time.map(|c| self.absolute_deadline - c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub accepted: usize,
    pub rejected_budget: usize,
    pub rejected_deadline: usize,
    pub completed_by_deadline: usize,
    pub deadline_misses: usize,
    /// Event-time samples where a node's shares summed above one.
    pub share_violations: usize,
    pub max_share_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSample {
    pub time: f64,
    pub node: NodeId,
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub delivered_mi: f64,
    pub first_dispatch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub cluster: ClusterConfig,
    pub policy: PolicyKind,
    pub records: Vec<JobRecord>,
    pub decisions: Vec<Decision>,
    pub summary: Summary,
    pub utilization: Vec<UtilizationSample>,
    pub nodes: Vec<NodeReport>,
    /// Timestamps of processed events, in processing order.
    pub event_times: Vec<f64>,
}

impl SimResult {
    pub fn last_event_time(&self) -> f64 {
        self.event_times.last().copied().unwrap_or(0.0)
    }
}

/// Earliest completion on a node under `assignment`, from `now`.
pub fn next_completion_time(
    node: &NodeState,
    assignment: &ShareAssignment,
    now: f64,
) -> Option<(JobId, f64)> {
    node.running
        .iter()
        .filter_map(|r| {
            let share = assignment.share_of(r.job.id);
            (share > 0.0).then(|| {
                (
                    r.job.id,
                    now + r.actual_remaining() / (share * node.capacity),
                )
            })
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Sum of the shares allocated on a node.
pub fn utilization_sample(assignment: &ShareAssignment) -> f64 {
    assignment.total()
}

pub fn run(
    trace: &[Job],
    cluster: &ClusterConfig,
    policy: &PolicyKind,
) -> Result<SimResult, SimError> {
    run_with_options(trace, cluster, policy, &SimOptions::default())
}

pub fn run_with_options(
    trace: &[Job],
    cluster: &ClusterConfig,
    policy: &PolicyKind,
    options: &SimOptions,
) -> Result<SimResult, SimError> {
    cluster.validate().map_err(SimError::Cluster)?;
    policy.pricing().validate().map_err(SimError::Pricing)?;
    if !(options.estimate_error > 0.0 && options.estimate_error.is_finite()) {
        return Err(SimError::EstimateError(options.estimate_error));
    }
    let mut seen = HashSet::with_capacity(trace.len());
    let mut last_arrival = f64::NEG_INFINITY;
    for job in trace {
        job.validate()
            .map_err(|source| SimError::InvalidJob { id: job.id, source })?;
        if !seen.insert(job.id) {
            return Err(SimError::DuplicateJob(job.id));
        }
        if job.arrival < last_arrival {
            return Err(SimError::UnsortedTrace(job.id));
        }
        last_arrival = job.arrival;
    }

    let mut sim = Simulation::new(trace, cluster, policy, options);
    sim.run()?;
    let result = sim.finish();
    audit(&result, options)?;
    Ok(result)
}

/// Post-run checks. With exact estimates every accepted job must have met its
/// deadline and no node may ever have been allocated more than one CPU.
fn audit(result: &SimResult, options: &SimOptions) -> Result<(), SimError> {
    if let Some(r) = result.records.iter().find(|r| !r.state.is_terminal()) {
        return Err(SimError::Invariant(format!(
            "job {} never reached a terminal state",
            r.job_id
        )));
    }
    if result.summary.share_violations > 0 {
        return Err(SimError::Invariant(format!(
            "node shares summed to {} (> 1)",
            result.summary.max_share_sum
        )));
    }
    if options.exact_estimates() && result.summary.deadline_misses > 0 {
        let r = result
            .records
            .iter()
            .find(|r| r.met_deadline == Some(false))
            .expect("a miss was counted");
        return Err(SimError::Invariant(format!(
            "job {} completed at {:?} after its deadline {}",
            r.job_id, r.completion_time, r.absolute_deadline
        )));
    }
    Ok(())
}

struct Simulation<'a> {
    trace: &'a [Job],
    cluster: ClusterConfig,
    policy: PolicyKind,
    options: SimOptions,
    scheduler: Scheduler,
    nodes: Vec<NodeState>,
    assignments: Vec<ShareAssignment>,
    generations: Vec<u64>,
    first_dispatch: Vec<Option<f64>>,
    heap: BinaryHeap<Reverse<Event>>,
    sequence: u64,
    now: f64,
    index_of: HashMap<JobId, usize>,
    records: Vec<JobRecord>,
    decisions: Vec<Decision>,
    utilization: Vec<UtilizationSample>,
    event_times: Vec<f64>,
    share_violations: usize,
    max_share_sum: f64,
}

impl<'a> Simulation<'a> {
    fn new(
        trace: &'a [Job],
        cluster: &ClusterConfig,
        policy: &PolicyKind,
        options: &SimOptions,
    ) -> Self {
        let capacity = cluster.node_capacity;
        let records = trace
            .iter()
            .map(|job| JobRecord {
                job_id: job.id,
                arrival: job.arrival,
                length_mi: job.length_mi,
                estimate: job.estimate(capacity),
                absolute_deadline: job.absolute_deadline(),
                budget: job.budget,
                outcome: None,
                node: None,
                dispatch_time: None,
                completion_time: None,
                met_deadline: None,
                quote: None,
                state: JobState::Pending,
            })
            .collect();
        let mut sim = Simulation {
            trace,
            cluster: *cluster,
            policy: *policy,
            options: *options,
            scheduler: Scheduler::new(policy, cluster),
            nodes: (0..cluster.node_count)
                .map(|i| NodeState::new(i, capacity))
                .collect(),
            assignments: vec![ShareAssignment::idle(0.0); cluster.node_count],
            generations: vec![0; cluster.node_count],
            first_dispatch: vec![None; cluster.node_count],
            heap: BinaryHeap::new(),
            sequence: 0,
            now: 0.0,
            index_of: trace.iter().enumerate().map(|(i, j)| (j.id, i)).collect(),
            records,
            decisions: Vec::with_capacity(trace.len()),
            utilization: Vec::new(),
            event_times: Vec::new(),
            share_violations: 0,
            max_share_sum: 0.0,
        };
        for (index, job) in trace.iter().enumerate() {
            sim.push(job.arrival, EventKind::Arrival { index });
        }
        if let Some(last) = trace.last() {
            sim.push(last.arrival, EventKind::Horizon);
        }
        sim
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Reverse(Event {
            time,
            kind,
            sequence: self.sequence,
        }));
        self.sequence += 1;
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(event)) = self.heap.pop() {
            if let EventKind::Completion { node, generation } = event.kind {
                if generation != self.generations[node] {
                    continue;
                }
            }
            if event.time < self.now {
                return Err(SimError::Invariant(format!(
                    "event at {} processed after {}",
                    event.time, self.now
                )));
            }
            self.advance_to(event.time);

            let mut dirty = vec![false; self.nodes.len()];
            if let EventKind::Completion { node, .. } = event.kind {
                // estimates may have run out before the work did
                dirty[node] = true;
            }
            self.collect_completions(&mut dirty)?;
            if let EventKind::Arrival { index } = event.kind {
                let mut batch = vec![index];
                while let Some(Reverse(next)) = self.heap.peek() {
                    match next.kind {
                        EventKind::Arrival { index } if next.time == event.time => {
                            batch.push(index);
                            self.heap.pop();
                        }
                        _ => break,
                    }
                }
                self.admit(&batch, &mut dirty)?;
            }
            for node in (0..self.nodes.len()).filter(|&n| dirty[n]) {
                self.refresh(node)?;
            }
            self.sample();
        }
        Ok(())
    }

    fn advance_to(&mut self, time: f64) {
        let dt = time - self.now;
        if dt > 0.0 {
            for (node, assignment) in self.nodes.iter_mut().zip(&self.assignments) {
                node.advance(dt, assignment);
            }
        }
        self.now = time;
        self.event_times.push(time);
    }

    fn collect_completions(&mut self, dirty: &mut [bool]) -> Result<(), SimError> {
        for (n, flag) in dirty.iter_mut().enumerate() {
            let finished = self.nodes[n].take_finished();
            if finished.is_empty() {
                continue;
            }
            *flag = true;
            for done in finished {
                let record = &mut self.records[self.index_of[&done.job.id]];
                record.completion_time = Some(self.now);
                record.met_deadline =
                    Some(self.now <= record.absolute_deadline + DEADLINE_TOLERANCE);
                record.state = JobState::Completed { at: self.now };
            }
            match self.scheduler.on_completion(&self.nodes[n], self.now) {
                Instruction::Start(job) => self.start_exclusive(n, &job)?,
                Instruction::Reallocate(_) | Instruction::Idle => {}
            }
        }
        Ok(())
    }

    fn admit(&mut self, batch: &[usize], dirty: &mut [bool]) -> Result<(), SimError> {
        let mut assigned = Vec::new();
        for &index in batch {
            let job = self.trace[index];
            let decision = self.scheduler.decide(&job, &mut self.nodes, self.now)?;
            let record = &mut self.records[index];
            record.outcome = Some(decision.outcome);
            record.quote = decision.quote;
            match decision.outcome {
                Outcome::Assigned { node, .. } => {
                    record.node = Some(node);
                    assigned.push((index, node));
                }
                Outcome::RejectedBudget { .. } => {
                    record.state = JobState::Rejected {
                        reason: RejectReason::Budget,
                    }
                }
                Outcome::RejectedDeadline => {
                    record.state = JobState::Rejected {
                        reason: RejectReason::Deadline,
                    }
                }
            }
            self.decisions.push(decision);
        }

        for (index, node) in assigned {
            let job = self.trace[index];
            match self.scheduler {
                Scheduler::Libra(_) => {
                    let actual = job.length_mi * self.options.estimate_error;
                    self.nodes[node].dispatch_with_actual(&job, self.now, actual)?;
                    self.mark_dispatched(index, node);
                    dirty[node] = true;
                }
                Scheduler::Fifo { .. } => {
                    if let Some(next) = self.scheduler.next_queued(&self.nodes[node], self.now) {
                        self.start_exclusive(node, &next)?;
                        dirty[node] = true;
                    }
                }
            }
        }
        Ok(())
    }

    fn start_exclusive(&mut self, node: NodeId, job: &Job) -> Result<(), SimError> {
        let actual = job.length_mi * self.options.estimate_error;
        self.nodes[node].start_exclusive(job, self.now, actual)?;
        self.mark_dispatched(self.index_of[&job.id], node);
        Ok(())
    }

    fn mark_dispatched(&mut self, index: usize, node: NodeId) {
        let record = &mut self.records[index];
        record.dispatch_time = Some(self.now);
        record.state = JobState::Running { node };
        self.first_dispatch[node].get_or_insert(self.now);
    }

    /// Recomputes a node's shares and schedules its next completion.
    fn refresh(&mut self, n: NodeId) -> Result<(), SimError> {
        let node = &self.nodes[n];
        let assignment = match &self.scheduler {
            Scheduler::Libra(cfg) => node.reallocate(self.now, cfg.allocation)?,
            Scheduler::Fifo { .. } => ShareAssignment {
                shares: node.running.iter().map(|r| (r.job.id, 1.0)).collect(),
                mode: None,
                at: self.now,
            },
        };
        self.generations[n] += 1;
        if let Some((_, at)) = next_completion_time(node, &assignment, self.now) {
            let generation = self.generations[n];
            self.push(
                at.max(self.now),
                EventKind::Completion {
                    node: n,
                    generation,
                },
            );
        }
        self.assignments[n] = assignment;
        Ok(())
    }

    fn sample(&mut self) {
        for (node, assignment) in self.assignments.iter().enumerate() {
            let utilization = utilization_sample(assignment);
            if utilization > 1.0 + SHARE_TOLERANCE {
                self.share_violations += 1;
            }
            self.max_share_sum = self.max_share_sum.max(utilization);
            self.utilization.push(UtilizationSample {
                time: self.now,
                node,
                utilization,
            });
        }
    }

    fn finish(self) -> SimResult {
        let mut summary = Summary {
            total: self.records.len(),
            share_violations: self.share_violations,
            max_share_sum: self.max_share_sum,
            ..Summary::default()
        };
        for r in &self.records {
            match r.outcome {
                Some(Outcome::Assigned { .. }) => summary.accepted += 1,
                Some(Outcome::RejectedBudget { .. }) => summary.rejected_budget += 1,
                Some(Outcome::RejectedDeadline) => summary.rejected_deadline += 1,
                None => {}
            }
            match r.met_deadline {
                Some(true) => summary.completed_by_deadline += 1,
                Some(false) => summary.deadline_misses += 1,
                None => {}
            }
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeReport {
                node: n.id,
                delivered_mi: n.delivered_mi,
                first_dispatch: self.first_dispatch[n.id],
            })
            .collect();
        SimResult {
            cluster: self.cluster,
            policy: self.policy,
            records: self.records,
            decisions: self.decisions,
            summary,
            utilization: self.utilization,
            nodes,
            event_times: self.event_times,
        }
    }
}
