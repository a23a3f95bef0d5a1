use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rapid_core::experiments::{parse_assignment, run_with_manifest, ScenarioConfig, Study};
use rapid_core::RapidError;

#[derive(Parser)]
#[command(name = "rapid", version, about = "Adaptive quantum sensing studies: detection, estimation, arrays and tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ROC curves and SNR at the detection target, static against adaptive
    Roc(RunArgs),
    /// Estimation RMSE against SNR with the information floor
    Rmse(RunArgs),
    /// RMSE across noise correlation times
    Nonmarkov(RunArgs),
    /// Detection/estimation trade-off over the objective weight
    Pareto(RunArgs),
    /// Warm- and cold-start learning curves
    Learn(RunArgs),
    /// Angle-of-arrival RMSE against array size
    Scaling(RunArgs),
    /// Carrier tracking through frequency hops
    Tracking(RunArgs),
    /// Check the configuration and print its hash; runs nothing
    Validate(ConfigArgs),
    /// Every study in sequence
    All(RunArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; missing fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// override a field by dotted path, e.g. --set scenario.noise.tau_c=2.0
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// multiplier on every trial and episode count
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// worker threads (default: all cores); results do not depend on it
    #[arg(long)]
    workers: Option<usize>,
    /// record start and finish times in the manifest
    #[arg(long)]
    timestamps: bool,
}

fn load(args: &ConfigArgs) -> Result<ScenarioConfig, RapidError> {
    let base = match &args.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let mut overrides = args.set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = args.seed {
        overrides.push(("seed".into(), s.into()));
    }
    if let Some(b) = args.budget {
        overrides.push(("budget".into(), b.into()));
    }
    let cfg = base.with_overrides(&overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_for(e: &RapidError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        RapidError::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn run(name: &str, studies: &[Study], args: &RunArgs) -> ExitCode {
    let cfg = match load(&args.config) {
        Ok(c) => c,
        Err(e) => return exit_for(&e),
    };
    if let Some(n) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run_with_manifest(&cfg, name, studies, &args.out, args.timestamps) {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}", args.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => exit_for(&e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::Roc(a) => run("roc", &[Study::Roc], a),
        Command::Rmse(a) => run("rmse", &[Study::Rmse], a),
        Command::Nonmarkov(a) => run("nonmarkov", &[Study::NonMarkov], a),
        Command::Pareto(a) => run("pareto", &[Study::Pareto], a),
        Command::Learn(a) => run("learn", &[Study::Learn], a),
        Command::Scaling(a) => run("scaling", &[Study::Scaling], a),
        Command::Tracking(a) => run("tracking", &[Study::Tracking], a),
        Command::All(a) => run("all", &Study::ALL, a),
        Command::Validate(a) => match load(a) {
            Ok(cfg) => {
                let eff = cfg.effective();
                println!("config ok, hash {}", eff.hash());
                for d in eff.departures() {
                    println!("departure: {d}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
    }
}
