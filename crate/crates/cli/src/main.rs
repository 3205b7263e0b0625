//! `parlab`: runs experiment configurations and manages reports and baselines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parabolic_core::config::ExperimentConfig;
use parabolic_core::report::{compare_baseline, read_records, BaselineFile, ReportRecord};
use parabolic_core::runner::{run, RunOptions};
use parabolic_core::LabError;

const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "parlab", version, about = "Numerical laboratory for rough-coefficient parabolic equations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true, env = "PARLAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (defaults to 1 with --reproducible).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Omit wall times so reruns produce byte-identical reports.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check structure conditions and exponent pairs.
    ValidateStructure,
    /// Solve the configured problem.
    Solve,
    /// Estimate a fundamental-solution kernel.
    Kernel,
    /// Check the semigroup (Chapman-Kolmogorov) identity.
    CkCheck,
    /// Fit Gaussian bounds to a kernel estimate.
    GaussianFit,
    /// Elliptic Green function from the time integral of the kernel.
    Green,
    /// Certify a theorem (max_principle, local_bound, harnack, pointwise_harnack,
    /// hoelder, limit_behavior, caccioppoli).
    Certify { theorem: String },
    /// Widder operations (check_growth, represent, trace, recover, roundtrip).
    Widder { op: String },
    /// Validate a report file and summarize its records.
    Report { report: PathBuf },
    /// Record or compare baselines.
    Baseline {
        #[command(subcommand)]
        op: BaselineOp,
    },
}

#[derive(Subcommand, Debug)]
enum BaselineOp {
    Record {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Relative tolerance stored with each entry.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    Compare {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
}

impl Command {
    /// Action tag the config must carry, for subcommands that run a config.
    fn expected_action(&self) -> Option<String> {
        let tag = match self {
            Command::ValidateStructure => "validate_structure".to_string(),
            Command::Solve => "solve".into(),
            Command::Kernel => "kernel".into(),
            Command::CkCheck => "ck_check".into(),
            Command::GaussianFit => "gaussian_fit".into(),
            Command::Green => "green".into(),
            Command::Certify { theorem } => format!("certify.{}", theorem.replace('-', "_")),
            Command::Widder { op } => format!("widder.{}", op.replace('-', "_")),
            Command::Report { .. } | Command::Baseline { .. } => return None,
        };
        Some(tag)
    }
}

enum Failure {
    Lab(LabError),
    Usage(String),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.global.workers.or(cli.global.reproducible.then_some(1));
    if let Some(w) = workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::from(EXIT_PASS),
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Lab(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Report { report } => summarize(report),
        Command::Baseline { op } => baseline(op),
        cmd => {
            let expected = cmd.expected_action().expect("config-driven subcommand");
            run_config(&cli.global, &expected)
        }
    }
}

fn run_config(g: &Global, expected: &str) -> Result<bool, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage(format!("{expected} needs --config <file>")))?;
    let mut cfg = ExperimentConfig::load(path)?;
    let actual = cfg.action.tag();
    if actual != expected {
        return Err(Failure::Usage(format!(
            "{} describes action {actual}, not {expected}",
            path.display()
        )));
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let out = g
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone().map(|d| resolve(&cfg.base_dir, &d)))
        .unwrap_or_else(|| PathBuf::from("parlab-out"));
    let opts = RunOptions {
        reproducible: g.reproducible,
        ..RunOptions::new(out)
    };
    let outcome = run(&cfg, &opts)?;
    print_records(&outcome.records);
    println!("report: {}", outcome.report_path.display());
    Ok(outcome.pass())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn print_records(records: &[ReportRecord]) {
    for r in records {
        let status = if r.pass { "PASS" } else { "FAIL" };
        let label = if r.label.is_empty() { String::new() } else { format!(" [{}]", r.label) };
        println!("{status} {}{label}", r.action);
    }
}

fn summarize(report: &Path) -> Result<bool, Failure> {
    let records = read_records(report)?;
    print_records(&records);
    let failed = records.iter().filter(|r| !r.pass).count();
    println!("{} records, {failed} failed", records.len());
    Ok(failed == 0)
}

fn baseline(op: &BaselineOp) -> Result<bool, Failure> {
    match op {
        BaselineOp::Record {
            report,
            baseline,
            tolerance,
        } => {
            if !(*tolerance > 0.0) {
                return Err(Failure::Usage("--tolerance must be positive".into()));
            }
            let records = read_records(report)?;
            let mut file = if baseline.exists() {
                BaselineFile::load(baseline)?
            } else {
                BaselineFile::empty()
            };
            file.record(&records, *tolerance);
            file.save(baseline)?;
            println!("recorded {} entries in {}", records.len(), baseline.display());
            Ok(true)
        }
        BaselineOp::Compare { report, baseline } => {
            let records = read_records(report)?;
            if !baseline.exists() {
                return Err(LabError::Baseline(format!(
                    "{} does not exist; record one with `parlab baseline record --report {} --baseline {}`",
                    baseline.display(),
                    report.display(),
                    baseline.display()
                ))
                .into());
            }
            let file = BaselineFile::load(baseline)?;
            let cmp = compare_baseline(&records, &file)?;
            let mut all = true;
            for c in &cmp {
                all &= c.pass;
                println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.key);
                for d in c.diffs.iter().filter(|d| !d.ok) {
                    println!("  {}: baseline {:e}, current {:?}, relative diff {:e}", d.name, d.baseline, d.current, d.relative);
                }
            }
            Ok(all)
        }
    }
}
