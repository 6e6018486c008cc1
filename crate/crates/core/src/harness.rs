//! Monte Carlo engine: seeded trials, the full pipeline per trial, and
//! per-cell aggregation into the sweep CSV.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ranging_power;
use crate::config::SystemConfig;
use crate::detector::{
    build_error_model, detect_many, DetectionResult, DetectorConfig, ErrorModelOptions,
};
use crate::error::{RangingError, Result};
use crate::handover::{handover_solve, Dims, HandoverConfig, HandoverOutput};
use crate::model::MeasurementModel;
use crate::operator::SensingOperator;
use crate::scenario::{simulate_received, RangingScenario};
use num_complex::Complex64;

/// CSV header of a sweep.
pub const CSV_HEADER: [&str; 7] = [
    "snr_db",
    "users",
    "trials",
    "ps",
    "mse_power",
    "mse_timing",
    "mean_flops",
];

/// Per-subcarrier noise variance for unit channel power.
pub fn noise_var_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Everything after the received signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub handover: HandoverConfig,
    pub detector: DetectorConfig,
    pub error_model: ErrorModelOptions,
    /// Threshold of the correlation baseline, in multiples of its noise floor.
    pub baseline_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            handover: HandoverConfig::default(),
            detector: DetectorConfig::default(),
            error_model: ErrorModelOptions::default(),
            baseline_factor: 4.0,
        }
    }
}

/// A sweep grid with the system and pipeline it runs on. This is also the
/// run-config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub snr_list: Vec<f64>,
    pub user_counts: Vec<usize>,
    pub trials: usize,
    pub pfa: f64,
    pub seed: u64,
    pub config: SystemConfig,
    pub pipeline: PipelineConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            snr_list: vec![10.0],
            user_counts: vec![4],
            trials: 200,
            pfa: 1e-4,
            seed: 1,
            config: SystemConfig::wimax_1024(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(RangingError::InvalidConfig(
                "trials must be at least 1".into(),
            ));
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(RangingError::InvalidConfig(format!(
                "pfa must lie in (0, 1), got {}",
                self.pfa
            )));
        }
        if self.snr_list.iter().any(|s| !s.is_finite()) {
            return Err(RangingError::InvalidConfig(
                "SNR values must be finite".into(),
            ));
        }
        self.config.validate()?;
        self.pipeline.handover.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SweepSpec =
            toml::from_str(text).map_err(|e| RangingError::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RangingError::InvalidConfig(e.to_string()))
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.snr_list
            .iter()
            .flat_map(|&snr_db| {
                self.user_counts
                    .iter()
                    .map(move |&users| Cell { snr_db, users })
            })
            .collect()
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub snr_db: f64,
    pub users: usize,
}

/// The random stream of trial `index` with `users` terminals. The SNR is
/// left out so cells that differ only in SNR see the same terminals.
pub fn trial_rng(seed: u64, users: usize, index: usize) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (users as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

/// Outcome of one trial at one false-alarm setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub snr_db: f64,
    pub users: usize,
    pub pfa: f64,
    pub exact_set_match: bool,
    /// Some code carries more than one terminal.
    pub collision: bool,
    pub truth: BTreeSet<usize>,
    pub detected: BTreeSet<usize>,
    /// `(power estimate - power)^2` for correctly detected single-user codes.
    pub power_sq_errors: Vec<f64>,
    /// `(timing estimate - timing)^2`, same codes.
    pub timing_sq_errors: Vec<f64>,
    pub flops: Option<u64>,
    pub l1_iterations: usize,
    pub descent_violations: usize,
    /// Exact set match of the correlation baseline on the same signal.
    pub baseline_match: bool,
    pub failure: Option<String>,
    /// Seconds; not part of equality.
    pub wall_time: f64,
}

impl PartialEq for TrialMetrics {
    fn eq(&self, other: &Self) -> bool {
        let strip = |m: &TrialMetrics| TrialMetrics {
            wall_time: 0.0,
            ..m.clone()
        };
        serde_json::to_value(strip(self)).ok() == serde_json::to_value(strip(other)).ok()
    }
}

/// Everything produced by one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRun {
    pub scenario: RangingScenario,
    pub y: Vec<Complex64>,
    pub recovery: HandoverOutput,
    pub detection: DetectionResult,
    pub metrics: TrialMetrics,
}

/// Builds the scenario and received signal of a trial.
pub fn trial_signal(
    model: &MeasurementModel,
    seed: u64,
    cell: Cell,
    index: usize,
) -> (RangingScenario, Vec<Complex64>) {
    let mut rng = trial_rng(seed, cell.users, index);
    let scenario = RangingScenario::random(
        model.config(),
        cell.users,
        noise_var_from_snr(cell.snr_db),
        &mut rng,
    );
    let y = simulate_received(&scenario, model, &mut rng);
    (scenario, y)
}

/// Recovery followed by detection at each of `pfas`.
pub fn recover_and_detect(
    model: &MeasurementModel,
    y: &[Complex64],
    noise_var: f64,
    pipeline: &PipelineConfig,
    pfas: &[f64],
) -> Result<(HandoverOutput, Vec<DetectionResult>)> {
    let config = model.config();
    let recovery = handover_solve(model, y, &pipeline.handover, Some(Dims::of(config)))?;
    let mut error_model = build_error_model(
        &recovery.x_bar,
        model,
        config.n1,
        recovery.report.lambda,
        recovery.report.final_sigma,
        noise_var,
        &pipeline.error_model,
    )?;
    let residual = crate::linalg::sub(y, &model.apply(&recovery.x_bar));
    let sigma_e2 = pipeline.detector.noise.resolve(
        noise_var,
        crate::linalg::norm_sqr(&residual),
        error_model.residual_gain(),
        error_model.residual_gain_sq(),
    );
    error_model.set_sigma_e2(sigma_e2);
    let detections = detect_many(
        &recovery.x_bar,
        &error_model,
        model,
        pfas,
        &pipeline.detector,
    )?;
    Ok((recovery, detections))
}

fn score(
    scenario: &RangingScenario,
    config: &SystemConfig,
    det: &DetectionResult,
) -> (Vec<f64>, Vec<f64>) {
    let mut power = Vec::new();
    let mut timing = Vec::new();
    for code in scenario.active_codes() {
        if scenario.users_on(code) != 1 {
            continue;
        }
        let Some(found) = det.get(code) else { continue };
        let (h, _) = scenario.combined(code, config);
        power.push((found.power - ranging_power(&h)).powi(2));
        let truth = scenario.timing(code).unwrap_or(0) as f64;
        timing.push((found.timing as f64 - truth).powi(2));
    }
    (power, timing)
}

struct Evaluated {
    scenario: RangingScenario,
    y: Vec<Complex64>,
    outcome: Result<(HandoverOutput, Vec<DetectionResult>)>,
    metrics: Vec<TrialMetrics>,
}

fn evaluate(
    model: &MeasurementModel,
    spec: &SweepSpec,
    cell: Cell,
    index: usize,
    pfas: &[f64],
) -> Evaluated {
    let start = Instant::now();
    let (scenario, y) = trial_signal(model, spec.seed, cell, index);
    let truth = scenario.active_codes();
    let baseline = baseline_correlation_detect(&y, model, spec.pipeline.baseline_factor);
    let baseline_match = baseline.codes() == truth;
    let outcome = recover_and_detect(model, &y, scenario.noise_var, &spec.pipeline, pfas);
    let wall_time = start.elapsed().as_secs_f64();
    let base = TrialMetrics {
        trial: index,
        snr_db: cell.snr_db,
        users: cell.users,
        pfa: 0.0,
        exact_set_match: false,
        collision: scenario.has_collision(),
        truth: truth.clone(),
        detected: BTreeSet::new(),
        power_sq_errors: Vec::new(),
        timing_sq_errors: Vec::new(),
        flops: None,
        l1_iterations: 0,
        descent_violations: 0,
        baseline_match,
        failure: None,
        wall_time,
    };
    let metrics = match &outcome {
        Ok((recovery, detections)) => pfas
            .iter()
            .zip(detections)
            .map(|(&pfa, det)| {
                let detected = det.codes();
                let (power_sq_errors, timing_sq_errors) = score(&scenario, model.config(), det);
                TrialMetrics {
                    pfa,
                    exact_set_match: detected == truth,
                    detected,
                    power_sq_errors,
                    timing_sq_errors,
                    flops: recovery.report.flops,
                    l1_iterations: recovery.report.l1_iterations,
                    descent_violations: recovery.report.descent_violations,
                    ..base.clone()
                }
            })
            .collect(),
        Err(e) => {
            log::warn!(
                "trial {index} (snr {} dB, {} users) failed: {e}",
                cell.snr_db,
                cell.users
            );
            pfas.iter()
                .map(|&pfa| TrialMetrics {
                    pfa,
                    failure: Some(e.to_string()),
                    ..base.clone()
                })
                .collect()
        }
    };
    Evaluated {
        scenario,
        y,
        outcome,
        metrics,
    }
}

/// Runs trial `index` of `cell` and scores it at every entry of `pfas`.
pub fn evaluate_trial(
    model: &MeasurementModel,
    spec: &SweepSpec,
    cell: Cell,
    index: usize,
    pfas: &[f64],
) -> Vec<TrialMetrics> {
    evaluate(model, spec, cell, index, pfas).metrics
}

/// Trial `index` of `cell` with its full intermediate state.
pub fn simulate_trial(
    model: &MeasurementModel,
    spec: &SweepSpec,
    cell: Cell,
    index: usize,
) -> Result<TrialRun> {
    let mut run = evaluate(model, spec, cell, index, &[spec.pfa]);
    let (recovery, mut detections) = run.outcome?;
    Ok(TrialRun {
        scenario: run.scenario,
        y: run.y,
        recovery,
        detection: detections.remove(0),
        metrics: run.metrics.remove(0),
    })
}

/// Runs trial `index` of `cell` at the configured false-alarm rate.
pub fn run_trial(
    model: &MeasurementModel,
    spec: &SweepSpec,
    cell: Cell,
    index: usize,
) -> TrialMetrics {
    evaluate_trial(model, spec, cell, index, &[spec.pfa]).remove(0)
}

/// Every trial of `cell`, scored at each of `pfas`; `result[p][t]`.
pub fn run_cell_multi(
    model: &MeasurementModel,
    spec: &SweepSpec,
    cell: Cell,
    pfas: &[f64],
) -> Vec<Vec<TrialMetrics>> {
    let per_trial: Vec<Vec<TrialMetrics>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| evaluate_trial(model, spec, cell, t, pfas))
        .collect();
    (0..pfas.len())
        .map(|p| per_trial.iter().map(|row| row[p].clone()).collect())
        .collect()
}

pub fn run_cell(model: &MeasurementModel, spec: &SweepSpec, cell: Cell) -> Vec<TrialMetrics> {
    run_cell_multi(model, spec, cell, &[spec.pfa]).remove(0)
}

/// Aggregate of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub snr_db: f64,
    pub users: usize,
    pub trials: usize,
    pub ps: f64,
    pub mse_power: f64,
    pub mse_timing: f64,
    pub mean_flops: f64,
    pub failures: usize,
    pub baseline_ps: f64,
    pub descent_violations: usize,
}

impl CellSummary {
    pub fn from_trials(cell: Cell, trials: &[TrialMetrics]) -> Self {
        let n = trials.len().max(1) as f64;
        let mean = |v: Vec<f64>| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        CellSummary {
            snr_db: cell.snr_db,
            users: cell.users,
            trials: trials.len(),
            ps: trials.iter().filter(|t| t.exact_set_match).count() as f64 / n,
            mse_power: mean(
                trials
                    .iter()
                    .flat_map(|t| t.power_sq_errors.iter().copied())
                    .collect(),
            ),
            mse_timing: mean(
                trials
                    .iter()
                    .flat_map(|t| t.timing_sq_errors.iter().copied())
                    .collect(),
            ),
            mean_flops: mean(
                trials
                    .iter()
                    .filter_map(|t| t.flops.map(|f| f as f64))
                    .collect(),
            ),
            failures: trials.iter().filter(|t| t.failure.is_some()).count(),
            baseline_ps: trials.iter().filter(|t| t.baseline_match).count() as f64 / n,
            descent_violations: trials.iter().map(|t| t.descent_violations).sum(),
        }
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.trials.max(1) as f64
    }

    fn csv_record(&self) -> [String; 7] {
        [
            self.snr_db.to_string(),
            self.users.to_string(),
            self.trials.to_string(),
            self.ps.to_string(),
            self.mse_power.to_string(),
            self.mse_timing.to_string(),
            self.mean_flops.to_string(),
        ]
    }
}

/// Runs every cell, writing one CSV row per cell as soon as it finishes.
pub fn run_sweep<W: Write>(spec: &SweepSpec, out: W) -> Result<Vec<CellSummary>> {
    spec.validate()?;
    let model = MeasurementModel::from_config(&spec.config);
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    writer.flush()?;
    let mut summaries = Vec::new();
    for cell in spec.cells() {
        let trials = run_cell(&model, spec, cell);
        let summary = CellSummary::from_trials(cell, &trials);
        log::info!(
            "snr {} dB, {} users: ps {:.3}, baseline {:.3}, failures {}",
            cell.snr_db,
            cell.users,
            summary.ps,
            summary.baseline_ps,
            summary.failures
        );
        writer.write_record(summary.csv_record())?;
        writer.flush()?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Code set and per-code timing from the correlation baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDetection {
    pub detected: Vec<(usize, usize)>,
    pub noise_floor: f64,
}

impl BaselineDetection {
    pub fn codes(&self) -> BTreeSet<usize> {
        self.detected.iter().map(|d| d.0).collect()
    }
}

/// Matched-filter detector: correlates `y` with every code over the delay
/// grid and declares a code when its peak exceeds `threshold_factor` times
/// the median correlation magnitude over all codes and delays.
pub fn baseline_correlation_detect(
    y: &[Complex64],
    model: &MeasurementModel,
    threshold_factor: f64,
) -> BaselineDetection {
    let g = model.code_count();
    let corr: Vec<Vec<f64>> = (0..g)
        .map(|code| {
            model
                .adjoint_code(code, y)
                .iter()
                .map(|v| v.norm())
                .collect()
        })
        .collect();
    let mut all: Vec<f64> = corr.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.total_cmp(b));
    let noise_floor = if all.is_empty() {
        0.0
    } else {
        all[all.len() / 2]
    };
    let detected = corr
        .iter()
        .enumerate()
        .filter_map(|(code, c)| {
            let (arg, peak) =
                c.iter().enumerate().fold(
                    (0, 0.0),
                    |best, (i, v)| if *v > best.1 { (i, *v) } else { best },
                );
            (peak > 0.0 && peak > threshold_factor * noise_floor).then_some((code, arg))
        })
        .collect();
    BaselineDetection {
        detected,
        noise_floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelRealization;
    use crate::config::SubcarrierLayout;
    use crate::scenario::Terminal;

    fn small() -> SystemConfig {
        SystemConfig::new(128, 16, 24, 4, 20, 6, SubcarrierLayout::Scattered, 3).unwrap()
    }

    fn spec(config: SystemConfig) -> SweepSpec {
        SweepSpec {
            snr_list: vec![10.0],
            user_counts: vec![1],
            trials: 3,
            pfa: 1e-2,
            config,
            seed: 9,
            pipeline: PipelineConfig::default(),
        }
    }

    #[test]
    fn snr_to_noise() {
        assert!((noise_var_from_snr(10.0) - 0.1).abs() < 1e-15);
        assert_eq!(noise_var_from_snr(0.0), 1.0);
    }

    #[test]
    fn trials_are_deterministic() {
        let s = spec(small());
        let model = MeasurementModel::from_config(&s.config);
        let cell = Cell {
            snr_db: 10.0,
            users: 2,
        };
        let a = run_trial(&model, &s, cell, 1);
        let b = run_trial(&model, &s, cell, 1);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_scenario_scores_on_empty_detection() {
        let s = spec(small());
        let model = MeasurementModel::from_config(&s.config);
        let m = run_trial(
            &model,
            &s,
            Cell {
                snr_db: 10.0,
                users: 0,
            },
            0,
        );
        assert!(m.truth.is_empty());
        assert_eq!(m.exact_set_match, m.detected.is_empty());
    }

    #[test]
    fn baseline_finds_single_noiseless_user() {
        let config = small();
        let model = MeasurementModel::from_config(&config);
        let mut taps = vec![Complex64::new(0.0, 0.0); config.max_taps];
        taps[0] = Complex64::new(1.0, 0.0);
        taps[2] = Complex64::new(0.2, -0.1);
        let scenario = RangingScenario {
            terminals: vec![Terminal {
                code: 2,
                channel: ChannelRealization {
                    taps,
                    delay: 7,
                    profile: None,
                },
            }],
            noise_var: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = simulate_received(&scenario, &model, &mut rng);
        let det = baseline_correlation_detect(&y, &model, 3.0);
        assert_eq!(det.detected, vec![(2, 7)]);
        let zero =
            baseline_correlation_detect(&vec![Complex64::new(0.0, 0.0); config.m()], &model, 3.0);
        assert!(zero.detected.is_empty());
    }

    #[test]
    fn sweep_writes_header_and_rows() {
        let mut s = spec(small());
        s.user_counts = vec![0, 1];
        s.trials = 2;
        let mut buf = Vec::new();
        let rows = run_sweep(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 2);
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.mse_power.is_nan() || r.mse_power >= 0.0));
    }
}
