//! Synthetic workloads and JSON Lines trace files.
//!
//! Generation is reproducible across implementations. The random stream is
//! ChaCha with 8 rounds, keyed by the 64-bit seed in little-endian order
//! followed by 24 zero bytes (stream 0, word position 0). Each uniform draw
//! takes one `u64` from that stream, keeps its top 53 bits and maps
//! `u = bits * 2^-53` onto `[low, high)` as `low + u * (high - low)`.
//!
//! Draw order, for each job index `i` in `0..n`: arrival, length, deadline,
//! budget. Lengths are rounded to whole MI. Afterwards the first
//! `round(fraction * n)` indices are marked as base-budget jobs and that mask
//! is shuffled with Fisher-Yates (`i` from `n-1` down to `1`, swap with
//! `j = floor(u * (i + 1))`). Base-budget jobs take `base_budget`; the others
//! keep their drawn budget. Jobs are finally sorted by arrival (stable on the
//! generation index) and numbered `0..n` in that order.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClusterConfig, Job, JobId};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn mean(&self) -> f64 {
        (self.low + self.high) / 2.0
    }

    fn is_valid(&self) -> bool {
        self.low.is_finite() && self.high.is_finite() && self.low <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub job_count: usize,
    pub arrival_range: Range,
    /// Job lengths in MI.
    pub length_range: Range,
    pub base_budget: f64,
    /// Fraction of jobs whose budget is exactly `base_budget`.
    pub base_budget_fraction: f64,
    /// Budgets of the remaining jobs.
    pub budget_range: Range,
    /// Relative deadlines in seconds.
    pub deadline_range: Range,
    pub seed: u64,
}

pub const PRESET_NAMES: [&str; 2] = ["paper-batch-100", "paper-batch-200"];

impl WorkloadSpec {
    /// The two built-in batches: 100 jobs arriving over t in [1, 102] and 200
    /// jobs over t in [1, 208]. Lengths span [1000, 10900] MI, deadlines
    /// [1, 1200] s, and 80% of jobs carry a budget of 1000 while the rest
    /// draw from [1000, 12000].
    pub fn preset(name: &str, seed: u64) -> Result<Self, WorkloadError> {
        let (job_count, arrival_high) = match name {
            "paper-batch-100" => (100, 102.0),
            "paper-batch-200" => (200, 208.0),
            _ => {
                return Err(WorkloadError::Spec(format!(
                    "unknown preset `{name}`; valid presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Ok(WorkloadSpec {
            job_count,
            arrival_range: Range::new(1.0, arrival_high),
            length_range: Range::new(1000.0, 10900.0),
            base_budget: 1000.0,
            base_budget_fraction: 0.8,
            budget_range: Range::new(1000.0, 12000.0),
            deadline_range: Range::new(1.0, 1200.0),
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let ranges = [
            ("arrival_range", self.arrival_range),
            ("length_range", self.length_range),
            ("budget_range", self.budget_range),
            ("deadline_range", self.deadline_range),
        ];
        for (name, r) in ranges {
            if !r.is_valid() {
                return Err(WorkloadError::Spec(format!(
                    "{name} [{}, {}] is not an ordered finite range",
                    r.low, r.high
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.base_budget_fraction) {
            return Err(WorkloadError::Spec(format!(
                "base_budget_fraction {} outside [0, 1]",
                self.base_budget_fraction
            )));
        }
        if self.arrival_range.low < 0.0 {
            return Err(WorkloadError::Spec("arrivals must be non-negative".into()));
        }
        if self.length_range.low < 0.5 {
            return Err(WorkloadError::Spec(
                "lengths must round to at least 1 MI".into(),
            ));
        }
        if self.deadline_range.low <= 0.0 {
            return Err(WorkloadError::Spec("deadlines must be positive".into()));
        }
        if self.base_budget < 0.0 || self.budget_range.low < 0.0 {
            return Err(WorkloadError::Spec("budgets must be non-negative".into()));
        }
        Ok(())
    }

    pub fn base_budget_count(&self) -> usize {
        (self.base_budget_fraction * self.job_count as f64).round() as usize
    }
}

/// Portable uniform source over a pinned ChaCha8 stream.
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        UniformStream {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn in_range(&mut self, range: Range) -> f64 {
        range.low + self.unit() * (range.high - range.low)
    }

    /// Uniform index in `0..bound`.
    pub fn index(&mut self, bound: usize) -> usize {
        ((self.unit() * bound as f64) as usize).min(bound - 1)
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Job>, WorkloadError> {
    spec.validate()?;
    let n = spec.job_count;
    let mut stream = UniformStream::new(spec.seed);
    let mut drawn: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let arrival = stream.in_range(spec.arrival_range);
            let length = stream.in_range(spec.length_range).round();
            let deadline = stream.in_range(spec.deadline_range);
            let budget = stream.in_range(spec.budget_range);
            (arrival, length, deadline, budget)
        })
        .collect();

    let base = spec.base_budget_count();
    let mut is_base: Vec<bool> = (0..n).map(|i| i < base).collect();
    for i in (1..n).rev() {
        let j = stream.index(i + 1);
        is_base.swap(i, j);
    }
    for (job, base) in drawn.iter_mut().zip(&is_base) {
        if *base {
            job.3 = spec.base_budget;
        }
    }

    drawn.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(drawn
        .into_iter()
        .enumerate()
        .map(|(i, (arrival, length, deadline, budget))| {
            Job::new(i as JobId, arrival, length, deadline, budget)
        })
        .collect())
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterConfig>,
}

impl TraceHeader {
    pub fn for_spec(spec: &WorkloadSpec) -> Self {
        TraceHeader {
            format_version: TRACE_FORMAT_VERSION,
            spec: Some(*spec),
            seed: Some(spec.seed),
            cluster: None,
        }
    }
}

impl Default for TraceHeader {
    fn default() -> Self {
        TraceHeader {
            format_version: TRACE_FORMAT_VERSION,
            spec: None,
            seed: None,
            cluster: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobLine {
    id: JobId,
    arrival: f64,
    length_mi: f64,
    deadline: f64,
    budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    /// Absent only for an empty file.
    pub header: Option<TraceHeader>,
    pub jobs: Vec<Job>,
}

pub fn write_trace<W: Write>(
    mut out: W,
    header: &TraceHeader,
    jobs: &[Job],
) -> Result<(), WorkloadError> {
    serde_json::to_writer(&mut out, header).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    for job in jobs {
        let line = JobLine {
            id: job.id,
            arrival: job.arrival,
            length_mi: job.length_mi,
            deadline: job.deadline,
            budget: job.budget,
        };
        serde_json::to_writer(&mut out, &line).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_trace(path: &Path, header: &TraceHeader, jobs: &[Job]) -> Result<(), WorkloadError> {
    write_trace(BufWriter::new(File::create(path)?), header, jobs)
}

pub fn read_trace<R: BufRead>(input: R) -> Result<TraceFile, WorkloadError> {
    let mut header = None;
    let mut jobs: Vec<Job> = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let parse_err = |message: String| WorkloadError::Parse {
            line: line_no,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: TraceHeader =
                serde_json::from_str(&line).map_err(|e| parse_err(format!("bad header: {e}")))?;
            if h.format_version != TRACE_FORMAT_VERSION {
                return Err(parse_err(format!(
                    "unsupported format_version {}",
                    h.format_version
                )));
            }
            header = Some(h);
            continue;
        }
        let rec: JobLine =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("bad job record: {e}")))?;
        let job = Job::new(rec.id, rec.arrival, rec.length_mi, rec.deadline, rec.budget);
        job.validate().map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(job.id) {
            return Err(parse_err(format!("duplicate job id {}", job.id)));
        }
        if jobs.last().is_some_and(|prev| prev.arrival > job.arrival) {
            return Err(parse_err(format!("job {} arrives out of order", job.id)));
        }
        jobs.push(job);
    }
    Ok(TraceFile { header, jobs })
}

pub fn load_trace_file(path: &Path) -> Result<TraceFile, WorkloadError> {
    read_trace(BufReader::new(File::open(path)?))
}

pub fn load_trace(path: &Path) -> Result<Vec<Job>, WorkloadError> {
    Ok(load_trace_file(path)?.jobs)
}
