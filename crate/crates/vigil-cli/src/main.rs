//! Command-line front end: generation, tuning, detection, and the sweep,
//! each as one reproducible run. Every command writes a `manifest.txt`
//! next to its outputs holding the full argument set; re-running those
//! arguments reproduces the outputs byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};

use vigil_core::datagen::{self, DatasetKind};
use vigil_core::detector::{run_stream, write_trace, write_verdicts, Criterion, DetectorConfig};
use vigil_core::eval::{initial_model, sweep, write_results, SWEEP_WINDOW_SIZES};
use vigil_core::nn::HyperConfig;
use vigil_core::tuner::{tune, write_trials, SearchSpace};
use vigil_core::series::WindowConfig;
use vigil_core::Error;

#[derive(Parser)]
#[command(name = "vigil", version, about = "Online anomaly detection for air quality streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark series and its event labels.
    Generate {
        /// Dataset shape: 2d1a, 10d2a, or 5m.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for series.csv, labels.csv, manifest.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Search forecaster hyperparameters on a recorded series.
    Tune {
        /// Series CSV to tune on (first 80% trains, rest validates).
        #[arg(long)]
        data: PathBuf,
        /// Sliding window size used for the tuning windows.
        #[arg(long, default_value_t = 24)]
        window: usize,
        /// Epoch budget per configuration.
        #[arg(long, default_value_t = 50)]
        max_epochs: usize,
        /// Successive halving keep factor.
        #[arg(long, default_value_t = 3)]
        eta: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for best_config.txt, trials.csv, manifest.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a series through the online detector.
    Detect {
        #[arg(long)]
        data: PathBuf,
        /// Forecaster configuration (key=value, as written by tune).
        #[arg(long)]
        config: PathBuf,
        /// Sliding window size.
        #[arg(long, default_value_t = 24)]
        window: usize,
        /// Fusion rule: individual or majority.
        #[arg(long, default_value = "individual")]
        criterion: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for verdicts.csv, manifest.txt.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-feature score and threshold traces here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Score every window size and fusion rule against labeled events.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Event labels CSV (start,end rows).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for results.csv, manifest.txt.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 usage, 3 data, 4 numeric; io and parse problems all read as data.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::TrainingDiverged { .. } | Error::StreamDiverged { .. } | Error::NoCompletedTrial => 4,
        _ => 3,
    }
}

/// Timestamp-free record of one run; equal arguments write equal bytes.
struct Manifest {
    lines: String,
}

impl Manifest {
    fn new(command: &str) -> Self {
        let mut m = Manifest { lines: String::new() };
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        m
    }

    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.lines, "{key}={value}").unwrap();
    }

    fn write(&self, dir: &Path) -> Result<(), Error> {
        std::fs::write(dir.join("manifest.txt"), &self.lines)?;
        Ok(())
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate { kind, seed, out } => cmd_generate(&kind, seed, &out),
        Command::Tune { data, window, max_epochs, eta, seed, out } => {
            cmd_tune(&data, window, max_epochs, eta, seed, &out)
        }
        Command::Detect { data, config, window, criterion, seed, out, trace_out } => {
            cmd_detect(&data, &config, window, &criterion, seed, &out, trace_out.as_deref())
        }
        Command::Sweep { data, labels, config, seed, out } => {
            cmd_sweep(&data, &labels, &config, seed, &out)
        }
    }
}

fn cmd_generate(kind: &str, seed: u64, out: &Path) -> Result<(), Error> {
    let kind = DatasetKind::from_str(kind)?;
    let (series, labels) = datagen::make_benchmark(kind, seed)?;
    std::fs::create_dir_all(out)?;
    datagen::write_csv(&out.join("series.csv"), &series)?;
    datagen::write_labels(&out.join("labels.csv"), &labels)?;
    let mut manifest = Manifest::new("generate");
    manifest.push("kind", kind);
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    manifest.write(out)?;
    println!("wrote {} rows and {} events to {}", series.len(), labels.len(), out.display());
    Ok(())
}

fn cmd_tune(
    data: &Path,
    window: usize,
    max_epochs: usize,
    eta: usize,
    seed: u64,
    out: &Path,
) -> Result<(), Error> {
    let series = datagen::read_csv(data)?;
    let window_cfg = WindowConfig::new(window)?;
    let space = SearchSpace::default();
    let started = Instant::now();
    let outcome = tune(&space, &series, window_cfg, max_epochs, eta, seed)?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    std::fs::create_dir_all(out)?;
    outcome.best.save(&out.join("best_config.txt"))?;
    write_trials(&out.join("trials.csv"), &outcome.log)?;
    let mut manifest = Manifest::new("tune");
    manifest.push("data", data.display());
    manifest.push("window", window);
    manifest.push("max_epochs", max_epochs);
    manifest.push("eta", eta);
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    manifest.write(out)?;
    println!(
        "{} trials in {minutes:.2} min; best val loss {}",
        outcome.log.len(),
        outcome.best_val_loss
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_detect(
    data: &Path,
    config: &Path,
    window: usize,
    criterion: &str,
    seed: u64,
    out: &Path,
    trace_out: Option<&Path>,
) -> Result<(), Error> {
    let criterion = Criterion::from_str(criterion)?;
    let series = datagen::read_csv(data)?;
    let model_cfg = HyperConfig::load(config)?;
    let params = initial_model(&model_cfg, &series, window, seed)?;
    let detector_cfg = DetectorConfig::new(window, criterion);
    let verdicts = run_stream(&model_cfg, params, detector_cfg, &series, seed)?;
    std::fs::create_dir_all(out)?;
    write_verdicts(&out.join("verdicts.csv"), &verdicts)?;
    if let Some(trace_dir) = trace_out {
        std::fs::create_dir_all(trace_dir)?;
        write_trace(&trace_dir.join("trace.csv"), &verdicts)?;
    }
    let mut manifest = Manifest::new("detect");
    manifest.push("data", data.display());
    manifest.push("config", config.display());
    manifest.push("window", window);
    manifest.push("criterion", criterion);
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    if let Some(trace_dir) = trace_out {
        manifest.push("trace_out", trace_dir.display());
    }
    manifest.write(out)?;
    let flagged = verdicts.iter().filter(|v| v.anomalous).count();
    println!("{} steps, {} flagged", verdicts.len(), flagged);
    Ok(())
}

fn cmd_sweep(data: &Path, labels: &Path, config: &Path, seed: u64, out: &Path) -> Result<(), Error> {
    let series = datagen::read_csv(data)?;
    let label_set = datagen::read_labels(labels)?;
    let model_cfg = HyperConfig::load(config)?;
    let rows = sweep(
        &series,
        &label_set,
        &model_cfg,
        &SWEEP_WINDOW_SIZES,
        &Criterion::ALL,
        seed,
    )?;
    std::fs::create_dir_all(out)?;
    write_results(&out.join("results.csv"), &rows)?;
    let mut manifest = Manifest::new("sweep");
    manifest.push("data", data.display());
    manifest.push("labels", labels.display());
    manifest.push("config", config.display());
    manifest.push("seed", seed);
    manifest.push("out", out.display());
    manifest.write(out)?;
    println!("{} rows for {} events", rows.len(), label_set.len());
    Ok(())
}
