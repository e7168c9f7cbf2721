use libra_core::engine::{run_with_options, SimOptions, SimResult};
use libra_core::workload::{generate, WorkloadSpec};
use libra_core::{AllocationMode, ClusterConfig, Job, LibraConfig, PolicyKind, PricingParams};

fn trace(preset: &str, seed: u64) -> Vec<Job> {
    generate(&WorkloadSpec::preset(preset, seed).unwrap()).unwrap()
}

fn libra(mode: AllocationMode) -> PolicyKind {
    PolicyKind::Libra(LibraConfig {
        allocation: mode,
        ..LibraConfig::default()
    })
}

fn fifo() -> PolicyKind {
    PolicyKind::parse_label("fifo", PricingParams::default()).unwrap()
}

fn simulate(jobs: &[Job], nodes: usize, policy: &PolicyKind) -> SimResult {
    run_with_options(
        jobs,
        &ClusterConfig::new(nodes, 100.0),
        policy,
        &SimOptions::default(),
    )
    .unwrap()
}

fn all_policies() -> Vec<PolicyKind> {
    let mut p: Vec<_> = AllocationMode::ALL.iter().map(|&m| libra(m)).collect();
    p.push(fifo());
    p
}

#[test]
fn event_times_never_decrease() {
    for policy in all_policies() {
        let r = simulate(&trace("paper-batch-200", 3), 10, &policy);
        assert!(!r.event_times.is_empty());
        assert!(
            r.event_times.windows(2).all(|w| w[0] <= w[1]),
            "{}",
            policy.label()
        );
    }
}

#[test]
fn same_inputs_serialize_identically() {
    let jobs = trace("paper-batch-100", 17);
    for policy in all_policies() {
        let a = serde_json::to_string(&simulate(&jobs, 10, &policy)).unwrap();
        let b = serde_json::to_string(&simulate(&jobs, 10, &policy)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn every_job_ends_terminal_and_counts_add_up() {
    for seed in 0..5 {
        for policy in all_policies() {
            let r = simulate(&trace("paper-batch-200", seed), 10, &policy);
            let s = &r.summary;
            assert!(r.records.iter().all(|rec| rec.state.is_terminal()));
            assert_eq!(s.total, 200);
            assert_eq!(
                s.accepted + s.rejected_budget + s.rejected_deadline,
                s.total
            );
            assert!(s.completed_by_deadline <= s.accepted);
            assert_eq!(s.deadline_misses, 0);
            assert_eq!(s.share_violations, 0);
        }
    }
}

#[test]
fn nodes_never_deliver_more_than_capacity_allows() {
    for policy in all_policies() {
        let jobs = trace("paper-batch-200", 8);
        let r = simulate(&jobs, 10, &policy);
        let end = r.last_event_time();
        for node in &r.nodes {
            if let Some(start) = node.first_dispatch {
                assert!(node.delivered_mi <= 100.0 * (end - start) * (1.0 + 1e-9) + 1e-6);
            } else {
                assert_eq!(node.delivered_mi, 0.0);
            }
        }
        // With exact estimates each accepted job delivers exactly its length.
        let delivered: f64 = r.nodes.iter().map(|n| n.delivered_mi).sum();
        let accepted: f64 = r
            .records
            .iter()
            .filter(|j| j.accepted())
            .map(|j| j.length_mi)
            .sum();
        assert!(
            (delivered - accepted).abs() <= 1e-6 * accepted.max(1.0),
            "{delivered} vs {accepted}"
        );
    }
}

#[test]
fn deadline_exact_jobs_finish_at_their_deadlines() {
    let r = simulate(
        &trace("paper-batch-100", 4),
        10,
        &libra(AllocationMode::DeadlineExact),
    );
    for rec in r.records.iter().filter(|j| j.accepted()) {
        let done = rec.completion_time.unwrap();
        assert!((done - rec.absolute_deadline).abs() < 1e-6, "{rec:?}");
    }
}

#[test]
fn scaleup_finishes_no_later_than_deadline_exact_on_average() {
    for seed in 0..10 {
        let jobs = trace("paper-batch-100", seed);
        let exact = simulate(&jobs, 10, &libra(AllocationMode::DeadlineExact));
        let scaled = simulate(&jobs, 10, &libra(AllocationMode::ProportionalScaleup));
        let slack = |r: &SimResult| {
            let v: Vec<f64> = r
                .records
                .iter()
                .filter_map(|j| j.time_remaining_to_deadline())
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        assert!(slack(&scaled) >= slack(&exact) - 1e-6, "seed {seed}");
        assert!(scaled
            .records
            .iter()
            .filter_map(|j| j.time_remaining_to_deadline())
            .all(|t| t >= -1e-6));
    }
}

#[test]
fn fifo_wait_plus_length_is_turnaround() {
    let r = simulate(&trace("paper-batch-100", 2), 10, &fifo());
    for rec in r.records.iter().filter(|j| j.accepted()) {
        let wait = rec.dispatch_time.unwrap() - rec.arrival;
        let expected = wait + rec.estimate;
        assert!(
            (rec.time_to_complete().unwrap() - expected).abs() < 1e-6,
            "{rec:?}"
        );
    }
}

#[test]
fn late_estimates_do_not_break_the_run() {
    let jobs = trace("paper-batch-100", 6);
    for mode in AllocationMode::ALL {
        let options = SimOptions {
            estimate_error: 1.3,
        };
        let r = run_with_options(
            &jobs,
            &ClusterConfig::new(10, 100.0),
            &libra(mode),
            &options,
        )
        .unwrap();
        assert!(r.records.iter().all(|rec| rec.state.is_terminal()));
        assert_eq!(r.summary.share_violations, 0);
    }
}
