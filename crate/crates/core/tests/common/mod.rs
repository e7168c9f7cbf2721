//! Test-only checks that do not go through the scheduler's own arithmetic.

#![allow(dead_code)]

use libra_core::engine::SimResult;

/// One accepted job as seen from outside: when it started on its node, when
/// it had to be done, and how much work it carried.
#[derive(Debug, Clone, Copy)]
pub struct Placed {
    pub node: usize,
    pub release: f64,
    pub deadline: f64,
    pub work: f64,
}

pub fn placed_jobs(result: &SimResult) -> Vec<Placed> {
    result
        .records
        .iter()
        .filter_map(|r| {
            Some(Placed {
                node: r.node?,
                release: r.dispatch_time?,
                deadline: r.absolute_deadline,
                work: r.length_mi,
            })
        })
        .collect()
}

/// Processor-demand criterion for a single preemptive processor of
/// `capacity` MIPS shared fluidly: for every window [release_i, deadline_j],
/// the work of the jobs released and due inside it must fit in the window.
/// Returns the first violated window.
pub fn demand_violation(jobs: &[Placed], capacity: f64) -> Option<(f64, f64, f64)> {
    for a in jobs {
        for b in jobs {
            let (start, end) = (a.release, b.deadline);
            if end < start {
                continue;
            }
            let demand: f64 = jobs
                .iter()
                .filter(|k| k.release >= start && k.deadline <= end)
                .map(|k| k.work)
                .sum();
            let supply = capacity * (end - start);
            if demand > supply * (1.0 + 1e-9) + 1e-6 {
                return Some((start, end, demand - supply));
            }
        }
    }
    None
}

/// Checks every node of a run; returns the node and window of the first failure.
pub fn cluster_demand_violation(result: &SimResult) -> Option<(usize, (f64, f64, f64))> {
    let placed = placed_jobs(result);
    (0..result.cluster.node_count).find_map(|node| {
        let on_node: Vec<Placed> = placed.iter().copied().filter(|p| p.node == node).collect();
        demand_violation(&on_node, result.cluster.node_capacity).map(|v| (node, v))
    })
}

/// Largest per-node share sum seen in the utilization samples.
pub fn peak_share_sum(result: &SimResult) -> f64 {
    result
        .utilization
        .iter()
        .map(|s| s.utilization)
        .fold(0.0, f64::max)
}

pub fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "[{}] criterion {id}: {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}
