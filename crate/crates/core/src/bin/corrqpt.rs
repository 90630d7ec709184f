use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use corrqpt::experiment::{run_experiment, write_report, ExperimentConfig, Mode, ScenarioSpec};
use corrqpt::scenarios::ScanTable;

#[derive(Parser)]
#[command(
    name = "corrqpt",
    version,
    about = "M-map process tomography with initially correlated environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the M-map from (U, ρ^SE) and report its decomposition.
    Analytic(Common),
    /// Simulate the d⁴-preparation experiment, reconstruct M and compare.
    Tomography(Common),
    /// NCP scan over random correlated instances.
    Scan(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults to the two-qubit CNOT/Bell scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (default: $CORRQPT_OUT_DIR/corrqpt_<mode>_seed<seed>.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

fn load_config(mode: Mode, args: &Common) -> Result<ExperimentConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::new(mode, 2, 2, ScenarioSpec::CnotBell, 0),
    };
    match config.mode {
        Some(m) if m != mode => {
            return Err(format!(
                "config declares mode `{}` but subcommand is `{}`",
                m.as_str(),
                mode.as_str()
            ))
        }
        _ => config.mode = Some(mode),
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Analytic(a) => (Mode::Analytic, a),
        Command::Tomography(a) => (Mode::Tomography, a),
        Command::Scan(a) => (Mode::Scan, a),
    };
    let config = match load_config(mode, args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| config.default_output_path(mode));
    if args.verbose {
        eprintln!("running {} (seed {})", mode.as_str(), config.seed);
    }
    let report = run_experiment(&config);
    if let Err(e) = write_report(&report, &path) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return ExitCode::from(2);
    }
    if let Some(rows) = &report.scan {
        let csv_path = path.with_extension("csv");
        let written = ScanTable { rows: rows.clone() }
            .to_csv()
            .and_then(|text| std::fs::write(&csv_path, text).map_err(Into::into));
        if let Err(e) = written {
            eprintln!("error: cannot write {}: {e}", csv_path.display());
            return ExitCode::from(2);
        }
        if args.verbose {
            eprintln!("scan table: {}", csv_path.display());
        }
    }
    if args.verbose {
        if let Some(m) = &report.metrics {
            eprintln!("norm_K = {:.3e}, min_eig_B = {:.3e}", m.norm_k, m.min_eig_b);
        }
        eprintln!("report: {} ({:.3} s)", path.display(), report.wall_time_s);
    }
    for e in &report.errors {
        eprintln!("{}: {}", e.kind, e.message);
    }
    if report.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
