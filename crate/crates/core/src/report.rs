//! Run and comparison configuration, plus the CSV/JSON writers behind the CLI.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ClusterConfig, Job, PricingParams};
use crate::engine::{run_with_options, SimOptions, SimResult, Summary};
use crate::policy::{LibraConfig, Outcome, PolicyKind};
use crate::sweep::{grid, run_cells, CellResult};
use crate::workload::{generate, load_trace_file, WorkloadSpec, PRESET_NAMES};
use crate::Error;

pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const JOBS_CSV: &str = "jobs.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_SUMMARY_CSV: &str = "comparison_summary.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const PARTIAL_MARKER: &str = "PARTIAL";

fn default_cluster() -> ClusterConfig {
    ClusterConfig::new(10, ClusterConfig::DEFAULT_CAPACITY)
}

fn default_policy() -> PolicyKind {
    PolicyKind::Libra(LibraConfig::default())
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_estimate_error() -> f64 {
    1.0
}

/// Configuration of a single simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Trace file to replay. Mutually exclusive with `preset`.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Built-in workload to generate with `seed`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cluster")]
    pub cluster: ClusterConfig,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_estimate_error")]
    pub estimate_error: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trace: None,
            preset: None,
            seed: 0,
            cluster: default_cluster(),
            policy: default_policy(),
            estimate_error: default_estimate_error(),
            out_dir: default_out_dir(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Error> {
        match (&self.trace, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either a trace or a preset, not both".into(),
                ))
            }
            (None, None) => return Err(Error::Config("a trace or a preset is required".into())),
            (Some(path), None) if !path.is_file() => {
                return Err(Error::Config(format!(
                    "trace {} does not exist",
                    path.display()
                )))
            }
            (None, Some(name)) if !PRESET_NAMES.contains(&name.as_str()) => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}`; valid presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
            _ => {}
        }
        self.cluster
            .validate()
            .map_err(|e| Error::Config(format!("cluster: {e}")))?;
        self.policy
            .pricing()
            .validate()
            .map_err(|e| Error::Config(format!("pricing: {e}")))?;
        Ok(())
    }

    /// Description of where the jobs come from, for the summary.
    pub fn source(&self) -> String {
        match (&self.trace, &self.preset) {
            (Some(path), _) => path.display().to_string(),
            (None, Some(name)) => format!("{name}@{}", self.seed),
            (None, None) => String::new(),
        }
    }

    pub fn load_jobs(&self) -> Result<Vec<Job>, Error> {
        self.validate()?;
        match (&self.trace, &self.preset) {
            (Some(path), _) => Ok(load_trace_file(path)?.jobs),
            (None, Some(name)) => Ok(generate(&WorkloadSpec::preset(name, self.seed)?)?),
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn execute(&self) -> Result<SimResult, Error> {
        let jobs = self.load_jobs()?;
        let options = SimOptions {
            estimate_error: self.estimate_error,
        };
        Ok(run_with_options(
            &jobs,
            &self.cluster,
            &self.policy,
            &options,
        )?)
    }
}

/// One line of the per-job CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRow {
    pub job_id: u64,
    pub arrival: f64,
    pub decision: String,
    pub node: Option<usize>,
    pub dispatch_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub absolute_deadline: f64,
    pub time_to_complete: Option<f64>,
    pub time_remaining_to_deadline: Option<f64>,
    pub cost: Option<f64>,
    pub budget: f64,
}

pub fn decision_label(outcome: Option<&Outcome>) -> &'static str {
    match outcome {
        Some(Outcome::Assigned { .. }) => "assigned",
        Some(Outcome::RejectedBudget { .. }) => "rejected_budget",
        Some(Outcome::RejectedDeadline) => "rejected_deadline",
        None => "undecided",
    }
}

pub fn job_rows(result: &SimResult) -> Vec<JobRow> {
    result
        .records
        .iter()
        .map(|r| JobRow {
            job_id: r.job_id,
            arrival: r.arrival,
            decision: decision_label(r.outcome.as_ref()).to_string(),
            node: r.node,
            dispatch_time: r.dispatch_time,
            completion_time: r.completion_time,
            absolute_deadline: r.absolute_deadline,
            time_to_complete: r.time_to_complete(),
            time_remaining_to_deadline: r.time_remaining_to_deadline(),
            cost: r.quote.map(|q| q.cost),
            budget: r.budget,
        })
        .collect()
}

pub fn write_jobs_csv<W: Write>(out: W, result: &SimResult) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in job_rows(result) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable mirror of a run's aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub source: String,
    pub policy: String,
    pub policy_config: PolicyKind,
    pub cluster: ClusterConfig,
    pub estimate_error: f64,
    pub summary: Summary,
}

impl RunSummary {
    pub fn new(config: &RunConfig, result: &SimResult) -> Self {
        RunSummary {
            format_version: REPORT_FORMAT_VERSION,
            source: config.source(),
            policy: result.policy.label(),
            policy_config: result.policy,
            cluster: result.cluster,
            estimate_error: config.estimate_error,
            summary: result.summary,
        }
    }
}

/// Writes `jobs.csv` and `summary.json` into `dir`.
pub fn write_run_outputs(dir: &Path, config: &RunConfig, result: &SimResult) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    write_jobs_csv(fs::File::create(dir.join(JOBS_CSV))?, result)?;
    let mut json = serde_json::to_string_pretty(&RunSummary::new(config, result))?;
    json.push('\n');
    fs::write(dir.join(SUMMARY_JSON), json)?;
    Ok(())
}

/// Configuration of a policy comparison sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub workloads: Vec<String>,
    pub node_counts: Vec<usize>,
    /// Policy labels, see [`PolicyKind::parse_label`].
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub node_capacity: f64,
    pub pricing: PricingParams,
    pub out_dir: PathBuf,
    /// Worker limit for the sweep; `None` uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl Default for CompareConfig {
    /// The two preset batches on 10 and 20 nodes under Libra and FIFO.
    fn default() -> Self {
        CompareConfig {
            workloads: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            node_counts: vec![10, 20],
            policies: vec!["libra".into(), "fifo".into()],
            seeds: vec![42],
            node_capacity: ClusterConfig::DEFAULT_CAPACITY,
            pricing: PricingParams::default(),
            out_dir: PathBuf::from("out"),
            jobs: None,
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.workloads.is_empty() || self.node_counts.is_empty() || self.policies.is_empty() {
            return Err(Error::Config(
                "workloads, node counts and policies must be non-empty".into(),
            ));
        }
        for w in &self.workloads {
            WorkloadSpec::preset(w, 0)?;
        }
        for &n in &self.node_counts {
            ClusterConfig::new(n, self.node_capacity)
                .validate()
                .map_err(|e| Error::Config(format!("cluster: {e}")))?;
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        self.pricing
            .validate()
            .map_err(|e| Error::Config(format!("pricing: {e}")))?;
        self.policy_kinds().map(|_| ())
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>, Error> {
        self.policies
            .iter()
            .map(|l| PolicyKind::parse_label(l, self.pricing).map_err(Error::from))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, stddev }
    }
}

/// Mean-over-seeds view of one (workload, nodes, policy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub workload: String,
    pub job_count: usize,
    pub node_count: usize,
    pub policy: String,
    pub seeds: usize,
    pub accepted: Stat,
    pub rejected_budget: Stat,
    pub rejected_deadline: Stat,
    pub completed_by_deadline: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct AggregateCsvRow<'a> {
    workload: &'a str,
    job_count: usize,
    node_count: usize,
    policy: &'a str,
    seeds: usize,
    accepted_mean: f64,
    accepted_stddev: f64,
    rejected_budget_mean: f64,
    rejected_budget_stddev: f64,
    rejected_deadline_mean: f64,
    rejected_deadline_stddev: f64,
    completed_by_deadline_mean: f64,
    completed_by_deadline_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub format_version: u32,
    #[serde(default)]
    pub partial: bool,
    pub rows: Vec<CellResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ComparisonTable {
    pub fn from_rows(rows: Vec<CellResult>, partial: bool) -> Self {
        let mut keys: Vec<(String, usize, usize, String)> = Vec::new();
        for r in &rows {
            let key = (
                r.workload.clone(),
                r.job_count,
                r.node_count,
                r.policy.clone(),
            );
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let aggregate = keys
            .into_iter()
            .map(|(workload, job_count, node_count, policy)| {
                let cell: Vec<&CellResult> = rows
                    .iter()
                    .filter(|r| {
                        r.workload == workload
                            && r.job_count == job_count
                            && r.node_count == node_count
                            && r.policy == policy
                    })
                    .collect();
                let stat = |f: fn(&CellResult) -> usize| {
                    Stat::of(&cell.iter().map(|r| f(r) as f64).collect::<Vec<_>>())
                };
                AggregateRow {
                    seeds: cell.len(),
                    accepted: stat(|r| r.accepted),
                    rejected_budget: stat(|r| r.rejected_budget),
                    rejected_deadline: stat(|r| r.rejected_deadline),
                    completed_by_deadline: stat(|r| r.completed_by_deadline),
                    workload,
                    job_count,
                    node_count,
                    policy,
                }
            })
            .collect();
        ComparisonTable {
            format_version: REPORT_FORMAT_VERSION,
            partial,
            rows,
            aggregate,
        }
    }

    pub fn aggregate_for(
        &self,
        workload: &str,
        node_count: usize,
        policy: &str,
    ) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|a| a.workload == workload && a.node_count == node_count && a.policy == policy)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, out: W) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(out);
        for a in &self.aggregate {
            w.serialize(AggregateCsvRow {
                workload: &a.workload,
                job_count: a.job_count,
                node_count: a.node_count,
                policy: &a.policy,
                seeds: a.seeds,
                accepted_mean: a.accepted.mean,
                accepted_stddev: a.accepted.stddev,
                rejected_budget_mean: a.rejected_budget.mean,
                rejected_budget_stddev: a.rejected_budget.stddev,
                rejected_deadline_mean: a.rejected_deadline.mean,
                rejected_deadline_stddev: a.rejected_deadline.stddev,
                completed_by_deadline_mean: a.completed_by_deadline.mean,
                completed_by_deadline_stddev: a.completed_by_deadline.stddev,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the per-seed CSV, the aggregate CSV and the JSON document into
    /// `dir`. A partial table also leaves a `PARTIAL` marker file.
    pub fn write_to(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir)?;
        self.write_rows_csv(fs::File::create(dir.join(COMPARISON_CSV))?)?;
        self.write_aggregate_csv(fs::File::create(dir.join(COMPARISON_SUMMARY_CSV))?)?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(dir.join(COMPARISON_JSON), json)?;
        let marker = dir.join(PARTIAL_MARKER);
        if self.partial {
            fs::write(marker, "one or more sweep cells failed\n")?;
        } else if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(())
    }

    /// Plain-text table of the aggregates.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>5} {:>5}  {:<40} {:>5} {:>16} {:>16} {:>16} {:>16}\n",
            "workload",
            "jobs",
            "nodes",
            "policy",
            "seeds",
            "accepted",
            "rej_budget",
            "rej_deadline",
            "met_deadline"
        ));
        let cell = |s: &Stat| format!("{:.2} ± {:.2}", s.mean, s.stddev);
        for a in &self.aggregate {
            out.push_str(&format!(
                "{:<18} {:>5} {:>5}  {:<40} {:>5} {:>16} {:>16} {:>16} {:>16}\n",
                a.workload,
                a.job_count,
                a.node_count,
                a.policy,
                a.seeds,
                cell(&a.accepted),
                cell(&a.rejected_budget),
                cell(&a.rejected_deadline),
                cell(&a.completed_by_deadline),
            ));
        }
        if self.partial {
            out.push_str("(partial: some cells failed)\n");
        }
        out
    }
}

/// Result of a sweep: the table of the cells that succeeded, and the first
/// failure if any cell failed.
pub struct Comparison {
    pub table: ComparisonTable,
    pub failure: Option<Error>,
}

pub fn run_comparison(config: &CompareConfig) -> Result<Comparison, Error> {
    config.validate()?;
    let cells = grid(
        &config.workloads,
        &config.node_counts,
        &config.policy_kinds()?,
        &config.seeds,
        config.node_capacity,
        SimOptions::default(),
    );
    let mut rows = Vec::with_capacity(cells.len());
    let mut failure = None;
    for result in run_cells(&cells, config.jobs)? {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    Ok(Comparison {
        table: ComparisonTable::from_rows(rows, failure.is_some()),
        failure,
    })
}

pub fn render_summary(summary: &RunSummary) -> String {
    let s = &summary.summary;
    format!(
        "source: {}\npolicy: {}\nnodes: {} x {} MIPS\njobs: {}\naccepted: {}\nrejected (budget): {}\nrejected (deadline): {}\ncompleted by deadline: {}\ndeadline misses: {}\npeak node share: {}\n",
        summary.source,
        summary.policy,
        summary.cluster.node_count,
        summary.cluster.node_capacity,
        s.total,
        s.accepted,
        s.rejected_budget,
        s.rejected_deadline,
        s.completed_by_deadline,
        s.deadline_misses,
        s.max_share_sum,
    )
}

/// Renders a `summary.json` or `comparison.json` document as text.
pub fn render_report_file(path: &Path) -> Result<String, Error> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("aggregate").is_some() {
        let table: ComparisonTable = serde_json::from_value(value)?;
        Ok(table.render())
    } else if value.get("summary").is_some() {
        let summary: RunSummary = serde_json::from_value(value)?;
        Ok(render_summary(&summary))
    } else {
        Err(Error::Config(format!(
            "{} is neither a run summary nor a comparison table",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::policy::FifoConfig;

    #[test]
    fn stat_of_values() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[3.0]).stddev, 0.0);
    }

    #[test]
    fn job_rows_follow_schema() {
        let cluster = ClusterConfig::new(1, 100.0);
        let jobs = [
            Job::new(0, 0.0, 8000.0, 100.0, 1e6),
            // needs more than one CPU
            Job::new(1, 0.0, 1000.0, 5.0, 1e6),
        ];
        let result = run(&jobs, &cluster, &PolicyKind::Libra(LibraConfig::default())).unwrap();
        let rows = job_rows(&result);
        assert_eq!(rows[0].decision, "assigned");
        assert!((rows[0].time_remaining_to_deadline.unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(rows[1].decision, "rejected_deadline");
        assert_eq!(rows[1].dispatch_time, None);
        assert_eq!(rows[1].completion_time, None);

        let mut buf = Vec::new();
        write_jobs_csv(&mut buf, &result).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "job_id,arrival,decision,node,dispatch_time,completion_time,absolute_deadline,time_to_complete,time_remaining_to_deadline,cost,budget"
        );
        assert!(lines
            .nth(1)
            .unwrap()
            .starts_with("1,0.0,rejected_deadline,,,,"));
    }

    #[test]
    fn fifo_time_to_complete_is_estimate_plus_wait() {
        let cluster = ClusterConfig::new(1, 100.0);
        let jobs = [
            Job::new(0, 0.0, 1000.0, 100.0, 1e6),
            Job::new(1, 2.0, 3000.0, 100.0, 1e6),
        ];
        let result = run(&jobs, &cluster, &PolicyKind::Fifo(FifoConfig::default())).unwrap();
        for (row, rec) in job_rows(&result).iter().zip(&result.records) {
            let wait = rec.dispatch_time.unwrap() - rec.arrival;
            assert!((row.time_to_complete.unwrap() - (rec.estimate + wait)).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_groups_by_cell() {
        let row = |policy: &str, seed, accepted| CellResult {
            workload: "w".into(),
            job_count: 10,
            node_count: 2,
            policy: policy.into(),
            seed,
            accepted,
            rejected_budget: 1,
            rejected_deadline: 9 - accepted,
            completed_by_deadline: accepted,
        };
        let t =
            ComparisonTable::from_rows(vec![row("a", 1, 4), row("a", 2, 6), row("b", 1, 5)], false);
        assert_eq!(t.aggregate.len(), 2);
        let a = t.aggregate_for("w", 2, "a").unwrap();
        assert_eq!(a.seeds, 2);
        assert_eq!(a.accepted.mean, 5.0);
        assert!(t.render().contains("5.00 ± 1.41"));
    }

    #[test]
    fn run_config_validation() {
        let cfg = RunConfig::default();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig {
            preset: Some("paper-batch-100".into()),
            trace: Some("/nonexistent.jsonl".into()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            preset: Some("paper-batch-999".into()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            preset: Some("paper-batch-100".into()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn run_config_json_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"preset":"paper-batch-100","seed":3}"#).unwrap();
        assert_eq!(cfg.cluster, ClusterConfig::new(10, 100.0));
        assert_eq!(cfg.policy, PolicyKind::Libra(LibraConfig::default()));
        let cfg: RunConfig = serde_json::from_str(
            r#"{"preset":"paper-batch-100","policy":{"kind":"fifo","apply_budget_gate":false}}"#,
        )
        .unwrap();
        assert_eq!(cfg.policy.label(), "fifo:no-gate");
        assert!(serde_json::from_str::<RunConfig>(r#"{"presett":"x"}"#).is_err());
    }
}
