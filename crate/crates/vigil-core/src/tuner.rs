//! Bandit-style hyperparameter search over a fixed grid.
//!
//! The schedule spends a fixed epoch budget across brackets of successive
//! halving: each bracket starts many configurations on a few epochs, keeps
//! the lowest-validation-loss fraction, and retrains the survivors with the
//! budget multiplied, so weak configurations die cheaply while strong ones
//! earn long runs. Trials inside a rung are independent and may run on the
//! thread pool; results are merged in sampling order, so parallel and
//! serial searches produce identical logs.

use std::cmp::Ordering;
use std::io::Write as _;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::nn::{train, Activation, HyperConfig, OptimizerKind, TrainOptions};
use crate::par;
use crate::seeds;
use crate::series::{MultivariateSeries, WindowConfig, WindowSet};

const TAG_SAMPLE: u64 = 0x1;
const TAG_TRIAL: u64 = 0x2;

/// Candidate values per hyperparameter; sampling is uniform and
/// per-dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub units: Vec<usize>,
    pub activations: Vec<Activation>,
    pub learning_rates: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
    pub num_layers: Vec<usize>,
    pub dropouts: Vec<f64>,
}

impl Default for SearchSpace {
    /// The full grid: 6 unit counts, 4 activations, 3 learning rates,
    /// 4 optimizers, 4 depths, 6 dropout rates; 6912 configurations.
    fn default() -> Self {
        Self {
            units: vec![32, 64, 96, 128, 160, 192],
            activations: Activation::ALL.to_vec(),
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            optimizers: OptimizerKind::ALL.to_vec(),
            num_layers: vec![2, 3, 4, 5],
            dropouts: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), Error> {
        let dims: [(&str, usize); 6] = [
            ("units", self.units.len()),
            ("activations", self.activations.len()),
            ("learning_rates", self.learning_rates.len()),
            ("optimizers", self.optimizers.len()),
            ("num_layers", self.num_layers.len()),
            ("dropouts", self.dropouts.len()),
        ];
        for (name, len) in dims {
            if len == 0 {
                return Err(Error::InvalidConfig(format!("search dimension {name} is empty")));
            }
        }
        // Every combination must form a valid configuration, so check the
        // extremes of each dimension up front instead of per sample.
        for &u in &self.units {
            if u == 0 {
                return Err(Error::InvalidConfig("zero units in search space".into()));
            }
        }
        for &l in &self.num_layers {
            if l == 0 {
                return Err(Error::InvalidConfig("zero layers in search space".into()));
            }
        }
        for &lr in &self.learning_rates {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::InvalidConfig(format!("bad learning rate {lr} in search space")));
            }
        }
        for &d in &self.dropouts {
            if !d.is_finite() || !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("bad dropout {d} in search space")));
            }
        }
        Ok(())
    }

    pub fn cardinality(&self) -> usize {
        self.units.len()
            * self.activations.len()
            * self.learning_rates.len()
            * self.optimizers.len()
            * self.num_layers.len()
            * self.dropouts.len()
    }
}

/// One uniform draw from the grid, fully determined by the seed. Dimensions
/// are drawn in configuration field order.
pub fn sample_config(space: &SearchSpace, seed: u64) -> HyperConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |len: usize| (rng.random::<u64>() % len as u64) as usize;
    HyperConfig {
        units: space.units[pick(space.units.len())],
        activation: space.activations[pick(space.activations.len())],
        learning_rate: space.learning_rates[pick(space.learning_rates.len())],
        optimizer: space.optimizers[pick(space.optimizers.len())],
        num_layers: space.num_layers[pick(space.num_layers.len())],
        dropout: space.dropouts[pick(space.dropouts.len())],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rung {
    pub n_configs: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketPlan {
    pub bracket: usize,
    pub rungs: Vec<Rung>,
}

/// Lays out every bracket for a budget of `r_max` epochs per configuration
/// and a keep fraction of 1/eta. Bracket s runs s+1 rungs, starting
/// ceil((s_max+1)/(s+1) * eta^s) configs at max(1, floor(r_max/eta^s))
/// epochs; each rung keeps an eta-th of the configs and multiplies epochs
/// by eta, never exceeding r_max.
pub fn hyperband_schedule(r_max: usize, eta: usize) -> Result<Vec<BracketPlan>, Error> {
    if r_max < 1 {
        return Err(Error::InvalidConfig("epoch budget must be at least 1".into()));
    }
    if eta < 2 {
        return Err(Error::InvalidConfig(format!(
            "halving factor must be at least 2, got {eta}"
        )));
    }
    let mut s_max = 0usize;
    while eta.pow(s_max as u32 + 1) <= r_max {
        s_max += 1;
    }
    let mut plans = Vec::with_capacity(s_max + 1);
    for s in (0..=s_max).rev() {
        let pow_s = eta.pow(s as u32);
        let n0 = ((s_max + 1) * pow_s + s) / (s + 1);
        let r0 = (r_max / pow_s).max(1);
        let mut rungs = Vec::with_capacity(s + 1);
        let (mut n, mut r) = (n0, r0);
        for _ in 0..=s {
            rungs.push(Rung { n_configs: n, epochs: r.min(r_max) });
            n /= eta;
            r *= eta;
        }
        plans.push(BracketPlan { bracket: s, rungs });
    }
    Ok(plans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Completed,
    /// Completed after this many divergence retries (at most 2).
    Retried(u8),
    /// Diverged on the initial run and both retries.
    Failed,
}

impl std::fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrialStatus::Completed => write!(f, "completed"),
            TrialStatus::Retried(k) => write!(f, "retried({k})"),
            TrialStatus::Failed => write!(f, "failed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: HyperConfig,
    pub epochs_granted: usize,
    /// Best validation loss of the run; absent when the trial failed.
    pub val_loss: Option<f64>,
    pub status: TrialStatus,
}

/// One executed trial in context: `trial_id` numbers the log sequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub bracket: usize,
    pub rung: usize,
    pub result: TrialResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: HyperConfig,
    pub best_val_loss: f64,
    pub log: Vec<TrialRecord>,
}

/// Trains one configuration with mini-batches of 100 and early stopping.
/// A divergence is retried up to twice with fresh derived seeds before the
/// trial is marked failed; any other training error fails it immediately.
pub fn run_trial(
    cfg: &HyperConfig,
    train_set: &WindowSet<'_>,
    val_set: &WindowSet<'_>,
    epochs: usize,
    seed: u64,
) -> TrialResult {
    let mut attempt: u8 = 0;
    loop {
        let opts = TrainOptions::new(epochs, seeds::derive(seed, &[attempt as u64]));
        match train(cfg, train_set, val_set, &opts) {
            Ok((_, report)) => {
                return TrialResult {
                    config: cfg.clone(),
                    epochs_granted: epochs,
                    val_loss: Some(report.final_val_loss),
                    status: if attempt == 0 {
                        TrialStatus::Completed
                    } else {
                        TrialStatus::Retried(attempt)
                    },
                };
            }
            Err(Error::TrainingDiverged { .. }) if attempt < 2 => attempt += 1,
            Err(_) => {
                return TrialResult {
                    config: cfg.clone(),
                    epochs_granted: epochs,
                    val_loss: None,
                    status: TrialStatus::Failed,
                };
            }
        }
    }
}

fn better(a: &TrialResult, b: &TrialResult) -> bool {
    let (av, bv) = (a.val_loss.unwrap(), b.val_loss.unwrap());
    match av.total_cmp(&bv) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match a.epochs_granted.cmp(&b.epochs_granted) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.config.lex_cmp(&b.config) == Ordering::Less,
        },
    }
}

fn pick_best(log: &[TrialRecord]) -> Result<(HyperConfig, f64), Error> {
    let mut best: Option<&TrialResult> = None;
    for rec in log {
        if rec.result.val_loss.is_none() {
            continue;
        }
        if best.is_none_or(|b| better(&rec.result, b)) {
            best = Some(&rec.result);
        }
    }
    best.map(|r| (r.config.clone(), r.val_loss.unwrap())).ok_or(Error::NoCompletedTrial)
}

/// The search loop with the trial execution injected, which lets tests and
/// oracles drive the schedule with synthetic losses. Configurations are
/// sampled per bracket; each rung runs its population in order, logs every
/// result, and promotes the completed trials in ascending validation loss
/// (stable, so earlier sampling order breaks exact ties) up to the next
/// rung's planned population.
pub fn tune_with<F>(
    space: &SearchSpace,
    r_max: usize,
    eta: usize,
    seed: u64,
    runner: &F,
) -> Result<TuneOutcome, Error>
where
    F: Fn(&HyperConfig, usize, u64) -> TrialResult + Sync,
{
    space.validate()?;
    let plans = hyperband_schedule(r_max, eta)?;
    let mut log: Vec<TrialRecord> = Vec::new();
    for plan in &plans {
        let s = plan.bracket as u64;
        let mut current: Vec<HyperConfig> = (0..plan.rungs[0].n_configs)
            .map(|i| sample_config(space, seeds::derive(seed, &[TAG_SAMPLE, s, i as u64])))
            .collect();
        for (rung_idx, rung) in plan.rungs.iter().enumerate() {
            current.truncate(rung.n_configs);
            let jobs: Vec<(usize, HyperConfig)> = current.drain(..).enumerate().collect();
            let results: Vec<TrialResult> = par::ordered_map(jobs, |(i, cfg)| {
                let trial_seed =
                    seeds::derive(seed, &[TAG_TRIAL, s, rung_idx as u64, i as u64]);
                runner(&cfg, rung.epochs, trial_seed)
            });
            let mut survivors: Vec<&TrialResult> =
                results.iter().filter(|r| r.val_loss.is_some()).collect();
            survivors
                .sort_by(|a, b| a.val_loss.unwrap().total_cmp(&b.val_loss.unwrap()));
            let next: Vec<HyperConfig> =
                survivors.into_iter().map(|r| r.config.clone()).collect();
            for result in results {
                log.push(TrialRecord {
                    trial_id: log.len(),
                    bracket: plan.bracket,
                    rung: rung_idx,
                    result,
                });
            }
            current = next;
        }
    }
    let (best, best_val_loss) = pick_best(&log)?;
    Ok(TuneOutcome { best, best_val_loss, log })
}

/// Full search over a tuning series: windows from the first 80% of rows
/// train, the rest validate (chronological, so no leakage), and every trial
/// is a real training run.
pub fn tune(
    space: &SearchSpace,
    series: &MultivariateSeries,
    window: WindowConfig,
    r_max: usize,
    eta: usize,
    seed: u64,
) -> Result<TuneOutcome, Error> {
    let split = series.len() * 8 / 10;
    let train_set = WindowSet::range(series, window, 0, split)?;
    let val_set = WindowSet::range(series, window, split, series.len())?;
    let runner = move |cfg: &HyperConfig, epochs: usize, trial_seed: u64| {
        run_trial(cfg, &train_set, &val_set, epochs, trial_seed)
    };
    tune_with(space, r_max, eta, seed, &runner)
}

/// Writes the search log: one row per executed trial, in execution order.
/// `val_loss` is empty for failed trials; floats print in shortest
/// round-trip form.
pub fn write_trials(path: &Path, log: &[TrialRecord]) -> Result<(), Error> {
    let mut out = Vec::new();
    writeln!(
        out,
        "trial_id,bracket,rung,units,activation,lr,optimizer,layers,dropout,epochs,val_loss,status"
    )
    .unwrap();
    for rec in log {
        let c = &rec.result.config;
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rec.trial_id,
            rec.bracket,
            rec.rung,
            c.units,
            c.activation,
            c.learning_rate,
            c.optimizer,
            c.num_layers,
            c.dropout,
            rec.result.epochs_granted
        )
        .unwrap();
        match rec.result.val_loss {
            Some(v) => write!(out, ",{v}").unwrap(),
            None => write!(out, ",").unwrap(),
        }
        writeln!(out, ",{}", rec.result.status).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}
