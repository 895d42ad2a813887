//! Mini-batch training with early stopping, plus single-pair fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::par;
use crate::seeds;
use crate::series::{fit_normalizer, normalize, Instance, WindowSet};

use super::{
    backward, forward, init_params, mse, optimizer_step, HyperConfig, ModelParams, OptState, Row,
};

/// Samples per work unit when a batch gradient is split across threads.
/// Chunk boundaries and the fold order are fixed by this constant, never by
/// the thread count, so batch sums come out bit-identical with and without
/// the `parallel` feature.
pub(crate) const GRAD_CHUNK: usize = 8;

const TAG_INIT: u64 = 0x1;
const TAG_SHUFFLE: u64 = 0x2;
const TAG_DROPOUT: u64 = 0x3;

/// One training pair, already normalized against its own window. `tag` is
/// the pair's position in the dataset; dropout seeds derive from it, so a
/// sample keeps its masks no matter where shuffling puts it in a batch.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub window: Vec<Row>,
    pub target: Row,
    pub tag: u64,
}

fn prepare(set: &WindowSet) -> Result<Vec<PreparedSample>, Error> {
    let mut out = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let (window, target) = set.pair(i);
        let stats = fit_normalizer(window)?;
        out.push(PreparedSample {
            window: window.iter().map(|inst| normalize(&inst.values, &stats)).collect(),
            target: normalize(&target.values, &stats),
            tag: i as u64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self { epochs, batch_size: 100, patience: 5, min_delta: 1e-6, seed }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !self.min_delta.is_finite() || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "min_delta must be finite and non-negative, got {}",
                self.min_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs_run: usize,
    /// Mean training loss per epoch, in epoch order.
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch, in epoch order.
    pub val_loss: Vec<f64>,
    pub stopped_early: bool,
    /// Best validation loss seen; the returned parameters are its snapshot.
    pub final_val_loss: f64,
}

/// Mean gradient and mean loss over one batch, dropout active. Work is split
/// into fixed chunks of [`GRAD_CHUNK`] samples folded in chunk order.
pub fn batch_gradient(
    params: &ModelParams,
    cfg: &HyperConfig,
    samples: &[&PreparedSample],
    seed_base: u64,
) -> Result<(ModelParams, f64), Error> {
    if samples.is_empty() {
        return Err(Error::InputTooShort("gradient batch is empty".into()));
    }
    let chunks: Vec<Vec<&PreparedSample>> =
        samples.chunks(GRAD_CHUNK).map(|c| c.to_vec()).collect();
    let partials = par::ordered_map(chunks, |chunk| -> Result<(ModelParams, f64), Error> {
        let mut grad = params.zeros_like();
        let mut loss = 0.0;
        for sample in chunk {
            let seed = seeds::derive(seed_base, &[sample.tag]);
            let cache = forward(params, cfg, &sample.window, true, seed)?;
            loss += mse(&cache.prediction(), &sample.target);
            grad.add_assign(&backward(params, cfg, &cache, &sample.target));
        }
        Ok((grad, loss))
    });
    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for part in partials {
        let (g, l) = part?;
        total.add_assign(&g);
        loss_sum += l;
    }
    let scale = 1.0 / samples.len() as f64;
    total.scale(scale);
    Ok((total, loss_sum * scale))
}

fn validation_loss(
    params: &ModelParams,
    cfg: &HyperConfig,
    samples: &[PreparedSample],
) -> Result<f64, Error> {
    let losses = par::ordered_map(samples.iter().collect::<Vec<_>>(), |s| {
        forward(params, cfg, &s.window, false, 0).map(|c| mse(&c.prediction(), &s.target))
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains a fresh model. Every pair is normalized against its own window.
/// Returns the parameters that scored the best validation loss, not the
/// final ones. Bit-identical for equal inputs and options.
pub fn train(
    cfg: &HyperConfig,
    train_set: &WindowSet,
    val_set: &WindowSet,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainingReport), Error> {
    cfg.validate()?;
    opts.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InputTooShort(format!(
            "training needs non-empty splits, got {} train and {} val pairs",
            train_set.len(),
            val_set.len()
        )));
    }
    let train_samples = prepare(train_set)?;
    let val_samples = prepare(val_set)?;

    let mut params = init_params(cfg, seeds::derive(opts.seed, &[TAG_INIT]))?;
    let mut opt = OptState::new(cfg.optimizer, params.flat_len());

    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut since_improvement = 0usize;
    let mut report = TrainingReport {
        epochs_run: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_early: false,
        final_val_loss: f64::INFINITY,
    };

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 0..opts.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(opts.seed, &[TAG_SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);
        let dropout_base = seeds::derive(opts.seed, &[TAG_DROPOUT, epoch as u64]);

        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let refs: Vec<&PreparedSample> = batch.iter().map(|&i| &train_samples[i]).collect();
            let (grad, loss) = batch_gradient(&params, cfg, &refs, dropout_base)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            optimizer_step(&mut opt, params.data_mut(), grad.data(), cfg.learning_rate)?;
            loss_sum += loss * refs.len() as f64;
        }
        report.train_loss.push(loss_sum / train_samples.len() as f64);

        let val = validation_loss(&params, cfg, &val_samples)?;
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch: epoch + 1 });
        }
        report.val_loss.push(val);
        report.epochs_run = epoch + 1;

        if val < best_val - opts.min_delta {
            best_val = val;
            best_params = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if opts.patience > 0 && since_improvement >= opts.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    report.final_val_loss = best_val;
    Ok((best_params, report))
}

/// Gradient steps on a single (window, next) pair, normalized against the
/// window. Mutates the parameters and optimizer state in place and returns
/// the last training loss. With zero epochs it only measures the loss.
pub fn fine_tune(
    cfg: &HyperConfig,
    params: &mut ModelParams,
    opt: &mut OptState,
    window: &[Instance],
    target: &Instance,
    epochs: usize,
    seed: u64,
) -> Result<f64, Error> {
    let stats = fit_normalizer(window)?;
    let rows: Vec<Row> = window.iter().map(|inst| normalize(&inst.values, &stats)).collect();
    let t = normalize(&target.values, &stats);

    if epochs == 0 {
        let cache = forward(params, cfg, &rows, false, 0)?;
        return Ok(mse(&cache.prediction(), &t));
    }
    let mut last = 0.0;
    for e in 0..epochs {
        let cache = forward(params, cfg, &rows, true, seeds::derive(seed, &[e as u64]))?;
        last = mse(&cache.prediction(), &t);
        if !last.is_finite() {
            return Err(Error::TrainingDiverged { epoch: e + 1 });
        }
        let grad = backward(params, cfg, &cache, &t);
        optimizer_step(opt, params.data_mut(), grad.data(), cfg.learning_rate)?;
    }
    Ok(last)
}
