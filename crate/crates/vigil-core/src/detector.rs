//! Online anomaly detection over a multivariate stream.
//!
//! Each step predicts the next instance from the current window, scores the
//! prediction per feature with an average absolute relative error over the
//! most recent steps, and flags features whose score exceeds a dynamic
//! threshold learned from past normal steps. Anomalous steps are
//! quarantined: the model and the threshold history stay untouched, so one
//! bad region cannot teach the detector that bad is normal. The window
//! itself always slides, anomalous or not.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::Error;
use crate::nn::{fine_tune, forward, HyperConfig, ModelParams, OptState, Row};
use crate::seeds;
use crate::series::{
    denormalize, fit_normalizer, normalize, Instance, MultivariateSeries, FEATURE_COUNT,
    FEATURE_NAMES,
};

/// Features that must flag together before the majority criterion fires.
pub const MAJORITY_MIN: usize = 5;

/// How per-feature flags fuse into one stream verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Any single flagged feature marks the step anomalous.
    Individual,
    /// At least [`MAJORITY_MIN`] of the nine features must flag.
    Majority,
}

impl Criterion {
    pub const ALL: [Criterion; 2] = [Criterion::Individual, Criterion::Majority];

    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::Individual => "individual",
            Criterion::Majority => "majority",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "individual" => Ok(Criterion::Individual),
            "majority" => Ok(Criterion::Majority),
            other => Err(Error::InvalidConfig(format!("unknown criterion '{other}'"))),
        }
    }
}

pub fn combine_votes(flags: &[bool; FEATURE_COUNT], criterion: Criterion) -> bool {
    let count = flags.iter().filter(|f| **f).count();
    match criterion {
        Criterion::Individual => count >= 1,
        Criterion::Majority => count >= MAJORITY_MIN,
    }
}

/// Mean absolute relative error of `predicted` against `actual`, with small
/// actual values clamped to `eps_y` in the denominator.
pub fn compute_aare(actual: &[f64], predicted: &[f64], eps_y: f64) -> Result<f64, Error> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(Error::InvalidConfig(format!(
            "relative error needs equal non-empty slices, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let mut sum = 0.0;
    for (y, p) in actual.iter().zip(predicted) {
        sum += (y - p).abs() / y.abs().max(eps_y);
    }
    Ok(sum / actual.len() as f64)
}

/// Rolling record of scores from normal steps; the detection threshold is
/// mean plus three population standard deviations over it.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    values: Vec<f64>,
    cap: usize,
}

impl ThresholdState {
    pub fn new(cap: usize) -> Self {
        Self { values: Vec::new(), cap }
    }

    /// Records one normal-step score, evicting the oldest beyond the cap.
    pub fn accept(&mut self, score: f64) {
        if self.values.len() == self.cap {
            self.values.remove(0);
        }
        self.values.push(score);
    }

    /// A spread needs at least two points.
    pub fn ready(&self) -> bool {
        self.values.len() >= 2
    }

    pub fn threshold(&self) -> Option<f64> {
        if !self.ready() {
            return None;
        }
        let k = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / k;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        Some(mean + 3.0 * var.sqrt())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Window length; predictions condition on this many instances.
    pub n: usize,
    pub criterion: Criterion,
    /// Leading steps whose flags are forced off while scores accumulate.
    pub warmup_steps: usize,
    /// Denominator floor for relative errors near zero.
    pub eps_y: f64,
    /// Most recent normal-step scores kept per feature.
    pub history_cap: usize,
    /// Model update epochs after each normal step.
    pub fine_tune_epochs: usize,
}

impl DetectorConfig {
    pub fn new(n: usize, criterion: Criterion) -> Self {
        Self {
            n,
            criterion,
            warmup_steps: 3,
            eps_y: 1e-3,
            history_cap: 288,
            fine_tune_epochs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!(
                "window length must be at least 2, got {}",
                self.n
            )));
        }
        if self.warmup_steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "warmup must cover at least 2 steps so a spread exists, got {}",
                self.warmup_steps
            )));
        }
        if self.history_cap < self.warmup_steps {
            return Err(Error::InvalidConfig(format!(
                "history cap {} cannot hold the {} warmup scores",
                self.history_cap, self.warmup_steps
            )));
        }
        if !self.eps_y.is_finite() || self.eps_y <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "denominator floor must be finite and positive, got {}",
                self.eps_y
            )));
        }
        Ok(())
    }
}

/// Outcome of one stream step.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// 0-based step index; the instance judged is stream position n + step.
    pub step: usize,
    pub timestamp: i64,
    pub aare: [f64; FEATURE_COUNT],
    /// Per-feature threshold at judgment time; none until two scores exist.
    pub threshold: [Option<f64>; FEATURE_COUNT],
    pub feature_flags: [bool; FEATURE_COUNT],
    pub anomalous_individual: bool,
    pub anomalous_majority: bool,
    /// Fusion under the configured criterion; drives quarantine.
    pub anomalous: bool,
    pub in_warmup: bool,
}

pub struct Detector {
    cfg: DetectorConfig,
    model_cfg: HyperConfig,
    params: ModelParams,
    opt: OptState,
    window: Vec<Instance>,
    /// Last up-to-n relative errors per feature; means are the scores.
    errors: [Vec<f64>; FEATURE_COUNT],
    history: [ThresholdState; FEATURE_COUNT],
    t: usize,
    seed: u64,
}

impl Detector {
    pub fn new(
        model_cfg: HyperConfig,
        params: ModelParams,
        cfg: DetectorConfig,
        initial_window: &[Instance],
        seed: u64,
    ) -> Result<Self, Error> {
        model_cfg.validate()?;
        cfg.validate()?;
        if initial_window.len() != cfg.n {
            return Err(Error::InputTooShort(format!(
                "initial window has {} instances, the detector needs {}",
                initial_window.len(),
                cfg.n
            )));
        }
        let opt = OptState::new(model_cfg.optimizer, params.flat_len());
        Ok(Self {
            cfg,
            model_cfg,
            params,
            opt,
            window: initial_window.to_vec(),
            errors: std::array::from_fn(|_| Vec::new()),
            history: std::array::from_fn(|_| ThresholdState::new(cfg.history_cap)),
            t: 0,
            seed,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self, feature: usize) -> &ThresholdState {
        &self.history[feature]
    }

    pub fn window(&self) -> &[Instance] {
        &self.window
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Judges one incoming instance, then slides the window over it.
    ///
    /// Order matters: the prediction is made before the window sees the
    /// instance, the step's errors enter the rolling score either way, and
    /// only a normal verdict updates the threshold history and the model.
    pub fn step(&mut self, actual: &Instance) -> Result<Verdict, Error> {
        let t = self.t;
        if actual.timestamp <= self.window.last().map_or(i64::MIN, |i| i.timestamp) {
            return Err(Error::NonMonotonicTimestamp { row: t + 1 });
        }

        let stats = fit_normalizer(&self.window)?;
        let rows: Vec<Row> =
            self.window.iter().map(|inst| normalize(&inst.values, &stats)).collect();
        let cache = forward(&self.params, &self.model_cfg, &rows, false, 0)?;
        let pred = denormalize(&cache.prediction(), &stats);
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::StreamDiverged { t });
        }

        let mut aare = [0.0; FEATURE_COUNT];
        for m in 0..FEATURE_COUNT {
            let y = actual.values[m];
            let are = (y - pred[m]).abs() / y.abs().max(self.cfg.eps_y);
            if self.errors[m].len() == self.cfg.n {
                self.errors[m].remove(0);
            }
            self.errors[m].push(are);
            aare[m] = self.errors[m].iter().sum::<f64>() / self.errors[m].len() as f64;
        }

        let in_warmup = t < self.cfg.warmup_steps;
        let mut threshold = [None; FEATURE_COUNT];
        let mut feature_flags = [false; FEATURE_COUNT];
        for m in 0..FEATURE_COUNT {
            threshold[m] = self.history[m].threshold();
            feature_flags[m] =
                !in_warmup && threshold[m].is_some_and(|thd| aare[m] > thd);
        }
        let anomalous_individual = combine_votes(&feature_flags, Criterion::Individual);
        let anomalous_majority = combine_votes(&feature_flags, Criterion::Majority);
        let anomalous = combine_votes(&feature_flags, self.cfg.criterion);

        if !anomalous {
            for m in 0..FEATURE_COUNT {
                self.history[m].accept(aare[m]);
            }
            if self.cfg.fine_tune_epochs > 0 {
                fine_tune(
                    &self.model_cfg,
                    &mut self.params,
                    &mut self.opt,
                    &self.window,
                    actual,
                    self.cfg.fine_tune_epochs,
                    seeds::derive(self.seed, &[t as u64]),
                )
                .map_err(|e| match e {
                    Error::TrainingDiverged { .. } => Error::StreamDiverged { t },
                    other => other,
                })?;
            }
        }

        self.window.remove(0);
        self.window.push(actual.clone());
        self.t = t + 1;

        Ok(Verdict {
            step: t,
            timestamp: actual.timestamp,
            aare,
            threshold,
            feature_flags,
            anomalous_individual,
            anomalous_majority,
            anomalous,
            in_warmup,
        })
    }
}

/// Runs a detector across a whole series: the first n instances seed the
/// window, every later instance is judged in order. A series of length L
/// yields L - n verdicts.
pub fn run_stream(
    model_cfg: &HyperConfig,
    params: ModelParams,
    cfg: DetectorConfig,
    series: &MultivariateSeries,
    seed: u64,
) -> Result<Vec<Verdict>, Error> {
    if series.len() < cfg.n + 1 {
        return Err(Error::InputTooShort(format!(
            "stream of {} instances cannot seed a window of {} and still step",
            series.len(),
            cfg.n
        )));
    }
    let instances = series.instances();
    let mut detector =
        Detector::new(model_cfg.clone(), params, cfg, &instances[..cfg.n], seed)?;
    let mut verdicts = Vec::with_capacity(series.len() - cfg.n);
    for inst in &instances[cfg.n..] {
        verdicts.push(detector.step(inst)?);
    }
    Ok(verdicts)
}

fn rfc3339(timestamp: i64) -> String {
    chrono::DateTime::from_timestamp(timestamp, 0)
        .map(|dt| dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        .unwrap_or_else(|| timestamp.to_string())
}

/// Writes one row per verdict: fusion results and per-feature flags, with
/// booleans as 0/1. Identical verdicts write identical bytes.
pub fn write_verdicts(path: &Path, verdicts: &[Verdict]) -> Result<(), Error> {
    let mut out = Vec::new();
    write!(out, "step,timestamp,in_warmup,anomalous,individual,majority").unwrap();
    for name in FEATURE_NAMES {
        write!(out, ",flag_{name}").unwrap();
    }
    writeln!(out).unwrap();
    for v in verdicts {
        write!(
            out,
            "{},{},{},{},{},{}",
            v.step,
            rfc3339(v.timestamp),
            v.in_warmup as u8,
            v.anomalous as u8,
            v.anomalous_individual as u8,
            v.anomalous_majority as u8
        )
        .unwrap();
        for flag in v.feature_flags {
            write!(out, ",{}", flag as u8).unwrap();
        }
        writeln!(out).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes per-feature scores and thresholds per verdict; a threshold that
/// is not ready yet prints as an empty field. Floats print in shortest
/// round-trip form, so equal runs write equal bytes.
pub fn write_trace(path: &Path, verdicts: &[Verdict]) -> Result<(), Error> {
    let mut out = Vec::new();
    write!(out, "step,timestamp").unwrap();
    for name in FEATURE_NAMES {
        write!(out, ",aare_{name}").unwrap();
    }
    for name in FEATURE_NAMES {
        write!(out, ",thd_{name}").unwrap();
    }
    writeln!(out).unwrap();
    for v in verdicts {
        write!(out, "{},{}", v.step, rfc3339(v.timestamp)).unwrap();
        for a in v.aare {
            write!(out, ",{a}").unwrap();
        }
        for thd in v.threshold {
            match thd {
                Some(x) => write!(out, ",{x}").unwrap(),
                None => write!(out, ",").unwrap(),
            }
        }
        writeln!(out).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
