//! Multi-cell, multi-seed sweeps.
//!
//! Each cell is an independent simulation. With the `parallel` feature (on by
//! default) cells run on a rayon pool; without it they run one after another.
//! Either way results come back in input order.

use serde::{Deserialize, Serialize};

use crate::domain::ClusterConfig;
use crate::engine::{run_with_options, SimOptions, Summary};
use crate::policy::PolicyKind;
use crate::workload::{generate, WorkloadSpec};
use crate::Error;

/// One simulation in a sweep: a workload preset on a cluster under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub workload: String,
    pub node_count: usize,
    pub node_capacity: f64,
    pub policy: PolicyKind,
    pub seed: u64,
    pub options: SimOptions,
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "{}/{}n/{}/seed={}",
            self.workload,
            self.node_count,
            self.policy.label(),
            self.seed
        )
    }
}

/// Counts from one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub workload: String,
    pub job_count: usize,
    pub node_count: usize,
    pub policy: String,
    pub seed: u64,
    pub accepted: usize,
    pub rejected_budget: usize,
    pub rejected_deadline: usize,
    pub completed_by_deadline: usize,
}

impl CellResult {
    fn from_summary(cell: &Cell, summary: &Summary) -> Self {
        CellResult {
            workload: cell.workload.clone(),
            job_count: summary.total,
            node_count: cell.node_count,
            policy: cell.policy.label(),
            seed: cell.seed,
            accepted: summary.accepted,
            rejected_budget: summary.rejected_budget,
            rejected_deadline: summary.rejected_deadline,
            completed_by_deadline: summary.completed_by_deadline,
        }
    }

    pub fn rejected(&self) -> usize {
        self.rejected_budget + self.rejected_deadline
    }
}

pub fn run_cell(cell: &Cell) -> Result<CellResult, Error> {
    let spec = WorkloadSpec::preset(&cell.workload, cell.seed)?;
    let trace = generate(&spec)?;
    let cluster = ClusterConfig::new(cell.node_count, cell.node_capacity);
    let result = run_with_options(&trace, &cluster, &cell.policy, &cell.options).map_err(|e| {
        Error::Cell {
            cell: cell.key(),
            source: Box::new(e.into()),
        }
    })?;
    Ok(CellResult::from_summary(cell, &result.summary))
}

/// Expands a grid in the order workloads, node counts, policies, seeds.
pub fn grid(
    workloads: &[String],
    node_counts: &[usize],
    policies: &[PolicyKind],
    seeds: &[u64],
    node_capacity: f64,
    options: SimOptions,
) -> Vec<Cell> {
    let mut cells = Vec::new();
    for workload in workloads {
        for &node_count in node_counts {
            for policy in policies {
                for &seed in seeds {
                    cells.push(Cell {
                        workload: workload.clone(),
                        node_count,
                        node_capacity,
                        policy: *policy,
                        seed,
                        options,
                    });
                }
            }
        }
    }
    cells
}

pub fn run_cells_sequential(cells: &[Cell]) -> Vec<Result<CellResult, Error>> {
    cells.iter().map(run_cell).collect()
}

#[cfg(feature = "parallel")]
pub fn run_cells_parallel(
    cells: &[Cell],
    threads: Option<usize>,
) -> Result<Vec<Result<CellResult, Error>>, Error> {
    use rayon::prelude::*;

    let work = || cells.par_iter().map(run_cell).collect();
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

/// Runs every cell, in parallel when the `parallel` feature is enabled.
/// `threads` caps the worker count; it is ignored in sequential builds.
pub fn run_cells(
    cells: &[Cell],
    threads: Option<usize>,
) -> Result<Vec<Result<CellResult, Error>>, Error> {
    #[cfg(feature = "parallel")]
    {
        if threads == Some(1) {
            return Ok(run_cells_sequential(cells));
        }
        run_cells_parallel(cells, threads)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(run_cells_sequential(cells))
    }
}
