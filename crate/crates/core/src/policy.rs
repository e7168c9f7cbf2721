//! Admission and placement policies.
//!
//! Libra admits a job in two stages: the budget must cover the job's cost,
//! then at least one node must be able to fit the job's minimum CPU share next
//! to everything it already runs. The FIFO baseline runs one job per node at
//! full share, in arrival order, and admits a job only if its queued start
//! still leaves time to finish before the deadline.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClusterConfig, Job, JobId, NodeId, PricingParams};
use crate::node_ledger::{Admission, AllocationMode, LedgerError, NodeState};
use crate::pricing::{admit_budget, CostQuote, PricingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("unknown policy `{0}` (expected libra[:max-loadfree|min-loadfree][:<allocation mode>] or fifo[:budget-gate|no-gate])")]
    UnknownPolicy(String),
}

/// Which accepting node receives the job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// The least loaded node: largest idle share after admission.
    #[default]
    MaxLoadfree,
    /// The most loaded node that still fits the job.
    MinLoadfree,
}

impl SelectionRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionRule::MaxLoadfree => "max-loadfree",
            SelectionRule::MinLoadfree => "min-loadfree",
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max-loadfree" => Ok(SelectionRule::MaxLoadfree),
            "min-loadfree" => Ok(SelectionRule::MinLoadfree),
            _ => Err(format!(
                "unknown selection rule `{s}` (expected max-loadfree or min-loadfree)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LibraConfig {
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub allocation: AllocationMode,
    #[serde(default)]
    pub pricing: PricingParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FifoConfig {
    #[serde(default = "default_true")]
    pub apply_budget_gate: bool,
    #[serde(default)]
    pub pricing: PricingParams,
}

fn default_true() -> bool {
    true
}

impl Default for FifoConfig {
    fn default() -> Self {
        FifoConfig {
            apply_budget_gate: true,
            pricing: PricingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    Libra(LibraConfig),
    Fifo(FifoConfig),
}

impl PolicyKind {
    /// Parses a compact label such as `libra`, `libra:min-loadfree`,
    /// `libra:max-loadfree:deadline-exact`, `fifo` or `fifo:no-gate`.
    pub fn parse_label(label: &str, pricing: PricingParams) -> Result<Self, PolicyError> {
        let unknown = || PolicyError::UnknownPolicy(label.to_string());
        let mut parts = label.split(':');
        match parts.next() {
            Some("libra") => {
                let mut cfg = LibraConfig {
                    pricing,
                    ..LibraConfig::default()
                };
                for part in parts {
                    if let Ok(rule) = part.parse::<SelectionRule>() {
                        cfg.selection = rule;
                    } else if let Ok(mode) = part.parse::<AllocationMode>() {
                        cfg.allocation = mode;
                    } else {
                        return Err(unknown());
                    }
                }
                Ok(PolicyKind::Libra(cfg))
            }
            Some("fifo") => {
                let mut cfg = FifoConfig {
                    pricing,
                    ..FifoConfig::default()
                };
                for part in parts {
                    cfg.apply_budget_gate = match part {
                        "budget-gate" => true,
                        "no-gate" => false,
                        _ => return Err(unknown()),
                    };
                }
                Ok(PolicyKind::Fifo(cfg))
            }
            _ => Err(unknown()),
        }
    }

    /// Canonical label, stable across runs; used as a table key.
    pub fn label(&self) -> String {
        match self {
            PolicyKind::Libra(cfg) => format!(
                "libra:{}:{}",
                cfg.selection.as_str(),
                cfg.allocation.as_str()
            ),
            PolicyKind::Fifo(cfg) => {
                if cfg.apply_budget_gate {
                    "fifo:budget-gate".to_string()
                } else {
                    "fifo:no-gate".to_string()
                }
            }
        }
    }

    pub fn pricing(&self) -> &PricingParams {
        match self {
            PolicyKind::Libra(cfg) => &cfg.pricing,
            PolicyKind::Fifo(cfg) => &cfg.pricing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Outcome {
    Assigned {
        node: NodeId,
        projected_loadfree: f64,
        /// When the job is expected to start running.
        start: f64,
    },
    RejectedBudget {
        shortfall: f64,
    },
    RejectedDeadline,
}

/// One node's answer during the Libra node search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub node: NodeId,
    pub admission: Admission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub job_id: JobId,
    pub outcome: Outcome,
    pub decided_at: f64,
    /// `None` when the policy skipped the budget gate.
    pub quote: Option<CostQuote>,
    /// Nodes queried, in id order. Empty when the budget gate rejected the job.
    pub probes: Vec<Probe>,
}

impl Decision {
    pub fn assigned_node(&self) -> Option<NodeId> {
        match self.outcome {
            Outcome::Assigned { node, .. } => Some(node),
            _ => None,
        }
    }
}

/// Libra admission: budget gate, query every node, reserve on the selected one.
pub fn schedule_libra(
    job: &Job,
    nodes: &mut [NodeState],
    now: f64,
    config: &LibraConfig,
) -> Result<Decision, PolicyError> {
    let capacity = nodes.first().map_or(1.0, |n| n.capacity);
    let quote = admit_budget(job, capacity, &config.pricing)?;
    if !quote.accepted {
        return Ok(Decision {
            job_id: job.id,
            outcome: Outcome::RejectedBudget {
                shortfall: quote.shortfall,
            },
            decided_at: now,
            quote: Some(quote),
            probes: Vec::new(),
        });
    }

    let probes: Vec<Probe> = nodes
        .iter()
        .map(|node| Probe {
            node: node.id,
            admission: node.can_accept_in_mode(job, now, config.allocation),
        })
        .collect();

    let mut best: Option<(NodeId, f64)> = None;
    for probe in &probes {
        if let Admission::Accept {
            projected_loadfree, ..
        } = probe.admission
        {
            let better = match (best, config.selection) {
                (None, _) => true,
                (Some((_, b)), SelectionRule::MaxLoadfree) => projected_loadfree > b,
                (Some((_, b)), SelectionRule::MinLoadfree) => projected_loadfree < b,
            };
            if better {
                best = Some((probe.node, projected_loadfree));
            }
        }
    }

    let outcome = match best {
        Some((node, projected_loadfree)) => {
            let target = nodes
                .iter_mut()
                .find(|n| n.id == node)
                .expect("probed node exists");
            target.reserve(job, now)?;
            Outcome::Assigned {
                node,
                projected_loadfree,
                start: now,
            }
        }
        None => Outcome::RejectedDeadline,
    };
    Ok(Decision {
        job_id: job.id,
        outcome,
        decided_at: now,
        quote: Some(quote),
        probes,
    })
}

/// Jobs waiting for one FIFO node, plus when the node's work drains.
#[derive(Debug, Clone, PartialEq)]
pub struct FifoQueue {
    pub node: NodeId,
    pub waiting: VecDeque<Job>,
    pub available_at: f64,
}

impl FifoQueue {
    pub fn new(node: NodeId) -> Self {
        FifoQueue {
            node,
            waiting: VecDeque::new(),
            available_at: 0.0,
        }
    }
}

/// FIFO admission: append the job to the node that frees up first and accept
/// it only if it can still finish by its deadline from there.
pub fn schedule_fifo(
    job: &Job,
    queues: &mut [FifoQueue],
    now: f64,
    node_capacity: f64,
    config: &FifoConfig,
) -> Result<Decision, PolicyError> {
    let quote = if config.apply_budget_gate {
        let quote = admit_budget(job, node_capacity, &config.pricing)?;
        if !quote.accepted {
            return Ok(Decision {
                job_id: job.id,
                outcome: Outcome::RejectedBudget {
                    shortfall: quote.shortfall,
                },
                decided_at: now,
                quote: Some(quote),
                probes: Vec::new(),
            });
        }
        Some(quote)
    } else {
        None
    };

    let estimate = job.estimate(node_capacity);
    let earliest = queues
        .iter_mut()
        .map(|q| (q.available_at.max(now), q))
        .reduce(|best, cand| if cand.0 < best.0 { cand } else { best });

    let outcome = match earliest {
        Some((start, queue)) if start + estimate <= job.absolute_deadline() => {
            queue.waiting.push_back(*job);
            queue.available_at = start + estimate;
            Outcome::Assigned {
                node: queue.node,
                projected_loadfree: 0.0,
                start,
            }
        }
        _ => Outcome::RejectedDeadline,
    };
    Ok(Decision {
        job_id: job.id,
        outcome,
        decided_at: now,
        quote,
        probes: Vec::new(),
    })
}

/// What the engine should do with a node after one of its jobs finished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instruction {
    /// Recompute shares of the remaining jobs.
    Reallocate(AllocationMode),
    /// Start this queued job at full share.
    Start(Job),
    Idle,
}

/// Policy state carried through a simulation.
#[derive(Debug, Clone)]
pub enum Scheduler {
    Libra(LibraConfig),
    Fifo {
        config: FifoConfig,
        queues: Vec<FifoQueue>,
    },
}

impl Scheduler {
    pub fn new(policy: &PolicyKind, cluster: &ClusterConfig) -> Self {
        match policy {
            PolicyKind::Libra(cfg) => Scheduler::Libra(*cfg),
            PolicyKind::Fifo(cfg) => Scheduler::Fifo {
                config: *cfg,
                queues: (0..cluster.node_count).map(FifoQueue::new).collect(),
            },
        }
    }

    pub fn decide(
        &mut self,
        job: &Job,
        nodes: &mut [NodeState],
        now: f64,
    ) -> Result<Decision, PolicyError> {
        match self {
            Scheduler::Libra(cfg) => schedule_libra(job, nodes, now, cfg),
            Scheduler::Fifo { config, queues } => {
                let capacity = nodes.first().map_or(1.0, |n| n.capacity);
                schedule_fifo(job, queues, now, capacity, config)
            }
        }
    }

    /// Next FIFO job for an idle node, if any is waiting.
    pub fn next_queued(&mut self, node: &NodeState, now: f64) -> Option<Job> {
        match self {
            Scheduler::Libra(_) => None,
            Scheduler::Fifo { queues, .. } => {
                if !node.is_idle() {
                    return None;
                }
                let queue = &mut queues[node.id];
                let job = queue.waiting.pop_front()?;
                // re-anchor the drain time on the real start
                let capacity = node.capacity;
                queue.available_at = now
                    + job.estimate(capacity)
                    + queue
                        .waiting
                        .iter()
                        .map(|j| j.estimate(capacity))
                        .sum::<f64>();
                Some(job)
            }
        }
    }

    /// Reaction to a completion on `node`.
    pub fn on_completion(&mut self, node: &NodeState, now: f64) -> Instruction {
        match self {
            Scheduler::Libra(cfg) => Instruction::Reallocate(cfg.allocation),
            Scheduler::Fifo { .. } => match self.next_queued(node, now) {
                Some(job) => Instruction::Start(job),
                None => Instruction::Idle,
            },
        }
    }
}

pub fn on_completion(scheduler: &mut Scheduler, node: &NodeState, now: f64) -> Instruction {
    scheduler.on_completion(node, now)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAP: f64 = 100.0;

    fn libra() -> LibraConfig {
        LibraConfig::default()
    }

    fn nodes(n: usize) -> Vec<NodeState> {
        (0..n).map(|i| NodeState::new(i, CAP)).collect()
    }

    /// E = 10 s; minimum share on an empty node equals `share`.
    fn job_needing(id: JobId, share: f64) -> Job {
        Job::new(id, 0.0, 1000.0, 10.0 / share, 1e9)
    }

    fn load(node: &mut NodeState, id: JobId, share: f64) {
        let j = job_needing(id, share);
        node.reserve(&j, 0.0).unwrap();
        node.dispatch(&j, 0.0).unwrap();
    }

    #[test]
    fn budget_failure_queries_no_node() {
        let mut cluster = nodes(3);
        let job = Job::new(1, 0.0, 1000.0, 20.0, 59.0);
        let d = schedule_libra(&job, &mut cluster, 0.0, &libra()).unwrap();
        assert!(
            matches!(d.outcome, Outcome::RejectedBudget { shortfall } if (shortfall - 1.0).abs() < 1e-12)
        );
        assert!(d.probes.is_empty());
        assert!(cluster.iter().all(|n| n.reservations.is_empty()));
    }

    #[test]
    fn symmetric_tie_goes_to_lowest_id() {
        let mut cluster = nodes(2);
        let d = schedule_libra(&job_needing(1, 0.4), &mut cluster, 0.0, &libra()).unwrap();
        assert_eq!(d.assigned_node(), Some(0));
        assert_eq!(d.probes.len(), 2);
    }

    #[test]
    fn selection_rules_pick_opposite_nodes() {
        let mut fixture = nodes(2);
        load(&mut fixture[0], 10, 0.5);
        load(&mut fixture[1], 11, 0.1);
        let job = job_needing(1, 0.4);

        let mut cluster = fixture.clone();
        let d = schedule_libra(&job, &mut cluster, 0.0, &libra()).unwrap();
        assert_eq!(d.assigned_node(), Some(1));
        assert!(
            matches!(d.outcome, Outcome::Assigned { projected_loadfree, .. } if (projected_loadfree - 0.5).abs() < 1e-12)
        );

        let mut cluster = fixture.clone();
        let cfg = LibraConfig {
            selection: SelectionRule::MinLoadfree,
            ..libra()
        };
        let d = schedule_libra(&job, &mut cluster, 0.0, &cfg).unwrap();
        assert_eq!(d.assigned_node(), Some(0));
        assert!((cluster[0].reserved_load - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rejected_deadline_means_every_node_said_no() {
        let mut cluster = nodes(2);
        load(&mut cluster[0], 10, 0.8);
        load(&mut cluster[1], 11, 0.7);
        let d = schedule_libra(&job_needing(1, 0.4), &mut cluster, 0.0, &libra()).unwrap();
        assert_eq!(d.outcome, Outcome::RejectedDeadline);
        assert!(d.probes.iter().all(|p| !p.admission.is_accept()));
    }

    #[test]
    fn assignment_is_admissible_on_pre_reservation_snapshot() {
        let mut cluster = nodes(3);
        load(&mut cluster[1], 10, 0.3);
        let snapshot = cluster.clone();
        let job = job_needing(1, 0.6);
        let d = schedule_libra(&job, &mut cluster, 0.0, &libra()).unwrap();
        let node = d.assigned_node().unwrap();
        assert!(snapshot[node].can_accept(&job, 0.0).is_accept());
    }

    fn fifo() -> FifoConfig {
        FifoConfig::default()
    }

    #[test]
    fn fifo_empty_cluster_starts_immediately() {
        let mut queues = vec![FifoQueue::new(0)];
        let job = Job::new(1, 0.0, 1000.0, 20.0, 1e9);
        let d = schedule_fifo(&job, &mut queues, 0.0, CAP, &fifo()).unwrap();
        assert_eq!(
            d.outcome,
            Outcome::Assigned {
                node: 0,
                projected_loadfree: 0.0,
                start: 0.0
            }
        );
    }

    #[test]
    fn fifo_rejects_when_queue_drains_too_late() {
        let mut queues = vec![FifoQueue::new(0)];
        queues[0].available_at = 100.0;
        let job = Job::new(1, 0.0, 1000.0, 50.0, 1e9);
        let d = schedule_fifo(&job, &mut queues, 0.0, CAP, &fifo()).unwrap();
        assert_eq!(d.outcome, Outcome::RejectedDeadline);
        assert!(queues[0].waiting.is_empty());
    }

    #[test]
    fn fifo_keeps_arrival_order_on_one_node() {
        let mut queues = vec![FifoQueue::new(0)];
        let a = Job::new(1, 0.0, 1000.0, 100.0, 1e9);
        let b = Job::new(2, 0.0, 1000.0, 100.0, 1e9);
        schedule_fifo(&a, &mut queues, 0.0, CAP, &fifo()).unwrap();
        let d = schedule_fifo(&b, &mut queues, 0.0, CAP, &fifo()).unwrap();
        assert!(matches!(d.outcome, Outcome::Assigned { start, .. } if start == 10.0));
        let order: Vec<_> = queues[0].waiting.iter().map(|j| j.id).collect();
        assert_eq!(order, vec![1, 2]);
    }

    #[test]
    fn fifo_gate_is_optional() {
        let mut queues = vec![FifoQueue::new(0)];
        let poor = Job::new(1, 0.0, 1000.0, 20.0, 0.0);
        let d = schedule_fifo(&poor, &mut queues, 0.0, CAP, &fifo()).unwrap();
        assert!(matches!(d.outcome, Outcome::RejectedBudget { .. }));
        let cfg = FifoConfig {
            apply_budget_gate: false,
            ..fifo()
        };
        let d = schedule_fifo(&poor, &mut queues, 0.0, CAP, &cfg).unwrap();
        assert!(matches!(d.outcome, Outcome::Assigned { .. }));
        assert!(d.quote.is_none());
    }

    #[test]
    fn completion_instructions() {
        let cluster = ClusterConfig::new(1, CAP);
        let mut s = Scheduler::new(&PolicyKind::Libra(libra()), &cluster);
        let node = NodeState::new(0, CAP);
        assert_eq!(
            on_completion(&mut s, &node, 5.0),
            Instruction::Reallocate(AllocationMode::ProportionalScaleup)
        );

        let mut s = Scheduler::new(&PolicyKind::Fifo(fifo()), &cluster);
        let a = Job::new(1, 0.0, 1000.0, 100.0, 1e9);
        let b = Job::new(2, 0.0, 1000.0, 100.0, 1e9);
        let mut n = vec![node.clone()];
        s.decide(&a, &mut n, 0.0).unwrap();
        s.decide(&b, &mut n, 0.0).unwrap();
        assert_eq!(s.on_completion(&node, 0.0), Instruction::Start(a));
        assert_eq!(s.on_completion(&node, 10.0), Instruction::Start(b));
        assert_eq!(s.on_completion(&node, 20.0), Instruction::Idle);
        assert_eq!(node.loadfree(20.0), 1.0);
    }

    #[test]
    fn labels_round_trip() {
        let p = PricingParams::default();
        for label in [
            "libra:max-loadfree:proportional-scaleup",
            "libra:min-loadfree:deadline-exact",
            "libra:max-loadfree:equal-quantized",
            "fifo:budget-gate",
            "fifo:no-gate",
        ] {
            assert_eq!(PolicyKind::parse_label(label, p).unwrap().label(), label);
        }
        assert_eq!(
            PolicyKind::parse_label("libra", p).unwrap().label(),
            "libra:max-loadfree:proportional-scaleup"
        );
        assert!(PolicyKind::parse_label("pbs", p).is_err());
        assert!(PolicyKind::parse_label("libra:fastest", p).is_err());
    }
}
