use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paralat::harness::{self, ExperimentConfig, ExperimentKind};
use paralat::{Error, Result};

#[derive(Parser)]
#[command(name = "paralat", version, about = "Paracontrolled lattice experiments")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "PARALAT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run(RunArgs),
    /// Parseval, round-trip, partition and Bony identities on random fields.
    FourierSelftest(RunArgs),
    /// Weighted Besov norms of noise realizations.
    BesovReport(RunArgs),
    /// Semigroup smoothing ratios over time and scale.
    HeatSmoothing(RunArgs),
    /// Renormalization constant against log2(1/eps).
    RenormScaling(RunArgs),
    /// Enhanced-noise norms and the resonant-product mean.
    NoiseEnhancement(RunArgs),
    /// Macroscopic PAM runs with field snapshots.
    PamMacro(RunArgs),
    /// Shared-noise nonlinear versus linear runs.
    PamUniversality(RunArgs),
    /// Print tidy CSV for one metric of a result directory.
    Plotdata {
        dir: PathBuf,
        #[arg(long)]
        metric: String,
        /// Summarize seeds into 10/50/90% quantiles per scale.
        #[arg(long)]
        quantiles: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Validate and print the resolved configuration without running.
    #[arg(long)]
    dry_run: bool,
}

fn resolve(kind: Option<ExperimentKind>, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, kind) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(k)) => ExperimentConfig::defaults(k),
        (None, None) => return Err(Error::config("config", "run requires --config")),
    };
    if let Some(k) = kind {
        cfg.experiment = k;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: Option<ExperimentKind>, args: &RunArgs) -> Result<()> {
    let cfg = resolve(kind, args)?;
    if args.dry_run {
        print_ignoring_pipe(&format!("{}\n", serde_json::to_string_pretty(&cfg)?));
        return Ok(());
    }
    let art = harness::execute(&cfg)?;
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("results/{}-{}", cfg.experiment.name(), &cfg.hash()[..12])));
    let manifest = harness::write_artifacts(&cfg, &art, &out)?;
    let mut text: String = art.summary.iter().map(|l| format!("{l}\n")).collect();
    text.push_str(&format!("wrote {} files to {}\n", manifest.files.len() + 1, out.display()));
    print_ignoring_pipe(&text);
    if !art.failures.is_empty() {
        for f in &art.failures {
            eprintln!("check failed: {f}");
        }
        return Err(Error::Numeric(format!("{} checks failed", art.failures.len())));
    }
    Ok(())
}

/// Writes to stdout; a closed pipe is not an error.
fn print_ignoring_pipe(s: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(s.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run(args) => run(None, args),
        Command::FourierSelftest(args) => run(Some(ExperimentKind::FourierSelftest), args),
        Command::BesovReport(args) => run(Some(ExperimentKind::BesovReport), args),
        Command::HeatSmoothing(args) => run(Some(ExperimentKind::HeatSmoothing), args),
        Command::RenormScaling(args) => run(Some(ExperimentKind::RenormScaling), args),
        Command::NoiseEnhancement(args) => run(Some(ExperimentKind::NoiseEnhancement), args),
        Command::PamMacro(args) => run(Some(ExperimentKind::PamMacro), args),
        Command::PamUniversality(args) => run(Some(ExperimentKind::PamUniversality), args),
        Command::Plotdata { dir, metric, quantiles } => {
            harness::plotdata(dir, metric, *quantiles).map(|s| print_ignoring_pipe(&s))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e))
        }
    }
}
