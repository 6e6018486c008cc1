use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use ranging_core::harness::{
    noise_var_from_snr, recover_and_detect, run_sweep, simulate_trial, Cell, SweepSpec,
};
use ranging_core::{MeasurementModel, SensingOperator};

/// Largest tolerated share of trials whose solver failed.
const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "ranging",
    version,
    about = "Sparse-recovery initial ranging simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and dump scenario, recovery and detection as JSON.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// SNR of the trial (defaults to the first configured value).
        #[arg(long)]
        snr: Option<f64>,
        /// Number of ranging terminals (defaults to the first configured value).
        #[arg(long)]
        users: Option<usize>,
        /// Trial index within the cell.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Read a received vector and emit the detection result as JSON.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// JSON file with `y` as `[re, im]` pairs, either bare or under a
        /// `"y"` key (the output of `simulate` works).
        #[arg(long)]
        input: PathBuf,
        /// Noise variance per subcarrier.
        #[arg(long, conflicts_with = "snr")]
        noise_var: Option<f64>,
        /// SNR, as an alternative to `--noise-var`.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Run the configured grid and write the summary CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the default run configuration.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML); defaults apply to anything left out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    pfa: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Output file instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn spec(&self) -> Result<SweepSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                SweepSpec::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => SweepSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if let Some(pfa) = self.pfa {
            spec.pfa = pfa;
        }
        if let Some(kappa) = self.kappa {
            spec.pipeline.handover.kappa_target = kappa;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn read_y(path: &Path) -> Result<(Vec<Complex64>, Option<f64>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("input is not JSON")?;
    let (y, noise_var) = match value {
        serde_json::Value::Object(mut map) => {
            let y = map.remove("y").context("input object has no \"y\" field")?;
            let noise_var = map
                .get("scenario")
                .and_then(|s| s.get("noise_var"))
                .and_then(|v| v.as_f64());
            (y, noise_var)
        }
        other => (other, None),
    };
    let y: Vec<Complex64> =
        serde_json::from_value(y).context("\"y\" must be a list of [re, im] pairs")?;
    Ok((y, noise_var))
}

fn simulate(
    run: &RunArgs,
    snr: Option<f64>,
    users: Option<usize>,
    trial: usize,
) -> Result<ExitCode> {
    let spec = run.spec()?;
    let cell = Cell {
        snr_db: snr
            .or(spec.snr_list.first().copied())
            .context("no SNR given")?,
        users: users
            .or(spec.user_counts.first().copied())
            .context("no user count given")?,
    };
    let model = MeasurementModel::from_config(&spec.config);
    let result = simulate_trial(&model, &spec, cell, trial).context("trial failed")?;
    let mut out = run.writer()?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    writeln!(out)?;
    Ok(ExitCode::SUCCESS)
}

fn detect_file(
    run: &RunArgs,
    input: &Path,
    noise_var: Option<f64>,
    snr: Option<f64>,
) -> Result<ExitCode> {
    let spec = run.spec()?;
    let (y, file_noise) = read_y(input)?;
    let noise_var = noise_var
        .or(snr.map(noise_var_from_snr))
        .or(file_noise)
        .context("noise level unknown: pass --noise-var or --snr")?;
    let model = MeasurementModel::from_config(&spec.config);
    if y.len() != model.rows() {
        bail!(
            "y has {} entries, the configuration expects {}",
            y.len(),
            model.rows()
        );
    }
    let mut pipeline = spec.pipeline.clone();
    pipeline.detector.exact_thresholds = true;
    let (_, mut detections) = recover_and_detect(&model, &y, noise_var, &pipeline, &[spec.pfa])?;
    let result = detections.remove(0);
    let mut out = run.writer()?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    writeln!(out)?;
    Ok(ExitCode::SUCCESS)
}

fn sweep(run: &RunArgs) -> Result<ExitCode> {
    let spec = run.spec()?;
    let summaries = run_sweep(&spec, run.writer()?)?;
    let mut code = ExitCode::SUCCESS;
    for s in &summaries {
        if s.failure_rate() > MAX_FAILURE_RATE {
            log::error!(
                "snr {} dB, {} users: {} of {} trials failed",
                s.snr_db,
                s.users,
                s.failures,
                s.trials
            );
            code = ExitCode::from(2);
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate {
            run,
            snr,
            users,
            trial,
        } => simulate(run, *snr, *users, *trial),
        Command::Detect {
            run,
            input,
            noise_var,
            snr,
        } => detect_file(run, input, *noise_var, *snr),
        Command::Sweep { run } => sweep(run),
        Command::DefaultConfig => SweepSpec::default()
            .to_toml_string()
            .map(|text| {
                print!("{text}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
