use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use libra_core::report::{self, CompareConfig, RunConfig, COMPARISON_CSV, COMPARISON_JSON};
use libra_core::workload::{self, TraceHeader, WorkloadSpec};
use libra_core::{Error, ErrorKind, PolicyKind, PricingParams};

#[derive(Parser)]
#[command(
    name = "libra",
    version,
    about = "Deadline and budget driven cluster scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic job trace.
    Generate(GenerateArgs),
    /// Simulate one trace on one cluster under one policy.
    Run(RunArgs),
    /// Sweep workloads, cluster sizes, policies and seeds.
    Compare(CompareArgs),
    /// Print a summary.json or comparison.json as text.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Built-in workload preset.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// JSON file holding a full workload spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, env = "LIBRA_SEED")]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "preset")]
    trace: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, env = "LIBRA_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Node capacity in MIPS.
    #[arg(long)]
    capacity: Option<f64>,
    /// Policy label such as `libra`, `libra:min-loadfree:deadline-exact` or `fifo:no-gate`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Actual job length divided by the estimate.
    #[arg(long)]
    estimate_error: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    workloads: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    nodes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', env = "LIBRA_SEED")]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Maximum number of cells simulated at once.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A summary.json or comparison.json file.
    file: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Report(args) => report_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Internal => 4,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), Error> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), _) => WorkloadSpec::preset(name, 0)?,
        (None, Some(path)) => read_json::<WorkloadSpec>(path)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let jobs = workload::generate(&spec)?;
    let header = TraceHeader::for_spec(&spec);
    match &args.out {
        Some(path) => {
            workload::save_trace(path, &header, &jobs)?;
            eprintln!("wrote {} jobs to {}", jobs.len(), path.display());
        }
        None => workload::write_trace(io::stdout().lock(), &header, &jobs)?,
    }
    Ok(())
}

fn with_pricing(policy: PolicyKind, alpha: Option<f64>, beta: Option<f64>) -> PolicyKind {
    let adjust = |p: &mut PricingParams| {
        if let Some(a) = alpha {
            p.alpha = a;
        }
        if let Some(b) = beta {
            p.beta = b;
        }
    };
    let mut policy = policy;
    match &mut policy {
        PolicyKind::Libra(cfg) => adjust(&mut cfg.pricing),
        PolicyKind::Fifo(cfg) => adjust(&mut cfg.pricing),
    }
    policy
}

fn resolve_run_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut config = match &args.config {
        Some(path) => read_json::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    if let Some(trace) = &args.trace {
        config.trace = Some(trace.clone());
        config.preset = None;
    }
    if let Some(preset) = &args.preset {
        config.preset = Some(preset.clone());
        config.trace = None;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.nodes {
        config.cluster.node_count = n;
    }
    if let Some(c) = args.capacity {
        config.cluster.node_capacity = c;
    }
    if let Some(label) = &args.policy {
        config.policy = PolicyKind::parse_label(label, *config.policy.pricing())?;
    }
    config.policy = with_pricing(config.policy, args.alpha, args.beta);
    if let Some(e) = args.estimate_error {
        config.estimate_error = e;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(args: RunArgs) -> Result<(), Error> {
    let config = resolve_run_config(&args)?;
    if args.print_config {
        return print_json(&config);
    }
    config.validate()?;
    eprintln!(
        "running {} under {}",
        config.source(),
        config.policy.label()
    );
    let result = config.execute()?;
    report::write_run_outputs(&config.out_dir, &config, &result)?;
    let s = &result.summary;
    eprintln!(
        "accepted {} of {} jobs; outputs in {}",
        s.accepted,
        s.total,
        config.out_dir.display()
    );
    Ok(())
}

fn resolve_compare_config(args: &CompareArgs) -> Result<CompareConfig, Error> {
    let mut config = match &args.config {
        Some(path) => read_json::<CompareConfig>(path)?,
        None => CompareConfig::default(),
    };
    if let Some(w) = &args.workloads {
        config.workloads = w.clone();
    }
    if let Some(n) = &args.nodes {
        config.node_counts = n.clone();
    }
    if let Some(p) = &args.policies {
        config.policies = p.clone();
    }
    if let Some(s) = &args.seeds {
        config.seeds = s.clone();
    }
    if let Some(c) = args.capacity {
        config.node_capacity = c;
    }
    if let Some(a) = args.alpha {
        config.pricing.alpha = a;
    }
    if let Some(b) = args.beta {
        config.pricing.beta = b;
    }
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn compare(args: CompareArgs) -> Result<(), Error> {
    let config = resolve_compare_config(&args)?;
    if args.print_config {
        return print_json(&config);
    }
    config.validate()?;
    let cells = config.workloads.len()
        * config.node_counts.len()
        * config.policies.len()
        * config.seeds.len();
    eprintln!("simulating {cells} cells");
    let comparison = report::run_comparison(&config)?;
    comparison.table.write_to(&config.out_dir)?;
    match comparison.failure {
        Some(e) => {
            eprintln!("partial results written to {}", config.out_dir.display());
            Err(e)
        }
        None => {
            eprintln!(
                "wrote {} and {} to {}",
                COMPARISON_CSV,
                COMPARISON_JSON,
                config.out_dir.display()
            );
            print!("{}", comparison.table.render());
            Ok(())
        }
    }
}

fn report_cmd(args: ReportArgs) -> Result<(), Error> {
    let text = report::render_report_file(&args.file)?;
    print!("{text}");
    Ok(())
}
