//! Bidirectional LSTM forecaster: configuration, parameters, training.
//!
//! The model reads a normalized window of nine-feature rows and predicts the
//! next row. Each layer runs one LSTM over the window in order and one over
//! it reversed; per-timestep outputs are the concatenation of both hidden
//! states, and a dense head maps the pair of final states to nine outputs.
//!
//! Parameters live in one flat `Vec<f64>` with a precomputed layout, which
//! keeps the optimizers, persistence, and gradient checks simple: an
//! optimizer is an elementwise update over two equally shaped slices, and a
//! finite-difference probe is a perturbation of one flat index.
//!
//! All arithmetic is f64. Given the same configuration, inputs, and seed,
//! every entry point here produces bit-identical results, with or without
//! the `parallel` feature.

mod backward;
mod forward;
mod optim;
mod train;

pub use backward::backward;
pub use forward::{forward, mse, Cache, Row};
pub use optim::{optimizer_step, OptState};
pub use train::{
    batch_gradient, fine_tune, train, PreparedSample, TrainOptions, TrainingReport,
};

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::series::FEATURE_COUNT;

/// Negative-side slope of the leaky rectifier head.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Head activation applied to the dense output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Sigmoid,
        Activation::Softmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

/// Which update rule [`optimizer_step`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
    Adadelta,
    Adagrad,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::Adadelta,
        OptimizerKind::Adagrad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adagrad => "adagrad",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Forecaster hyperparameters. Tuner output is drawn from a fixed grid, but
/// any configuration passing [`HyperConfig::validate`] is usable directly.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub units: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub num_layers: usize,
    pub dropout: f64,
}

impl HyperConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.units == 0 {
            return Err(Error::InvalidConfig("units must be positive".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig("num_layers must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Total ordering in field declaration order; the tuner's tie-breaker.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.units
            .cmp(&other.units)
            .then_with(|| act_index(self.activation).cmp(&act_index(other.activation)))
            .then_with(|| self.learning_rate.total_cmp(&other.learning_rate))
            .then_with(|| opt_index(self.optimizer).cmp(&opt_index(other.optimizer)))
            .then_with(|| self.num_layers.cmp(&other.num_layers))
            .then_with(|| self.dropout.total_cmp(&other.dropout))
    }

    /// Serializes to the flat key=value text shared by the tuner output and
    /// the detect/sweep commands.
    pub fn to_kv(&self) -> String {
        format!(
            "units={}\nactivation={}\nlearning_rate={}\noptimizer={}\nnum_layers={}\ndropout={}\n",
            self.units,
            self.activation,
            self.learning_rate,
            self.optimizer,
            self.num_layers,
            self.dropout
        )
    }

    /// Parses the key=value text form. Requires every field exactly once;
    /// blank lines and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self, Error> {
        let mut units = None;
        let mut activation = None;
        let mut learning_rate = None;
        let mut optimizer = None;
        let mut num_layers = None;
        let mut dropout = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let dup = match key {
                "units" => units.replace(parse_field::<usize>(key, value)?).is_some(),
                "activation" => activation.replace(value.parse::<Activation>()?).is_some(),
                "learning_rate" => learning_rate
                    .replace(parse_field::<f64>(key, value)?)
                    .is_some(),
                "optimizer" => optimizer.replace(value.parse::<OptimizerKind>()?).is_some(),
                "num_layers" => num_layers
                    .replace(parse_field::<usize>(key, value)?)
                    .is_some(),
                "dropout" => dropout.replace(parse_field::<f64>(key, value)?).is_some(),
                other => {
                    return Err(Error::InvalidConfig(format!("unknown key {other:?}")));
                }
            };
            if dup {
                return Err(Error::InvalidConfig(format!("duplicate key {key:?}")));
            }
        }
        let cfg = HyperConfig {
            units: units.ok_or_else(|| missing("units"))?,
            activation: activation.ok_or_else(|| missing("activation"))?,
            learning_rate: learning_rate.ok_or_else(|| missing("learning_rate"))?,
            optimizer: optimizer.ok_or_else(|| missing("optimizer"))?,
            num_layers: num_layers.ok_or_else(|| missing("num_layers"))?,
            dropout: dropout.ok_or_else(|| missing("dropout"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, self.to_kv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_kv(&fs::read_to_string(path)?)
    }
}

fn act_index(a: Activation) -> usize {
    Activation::ALL.iter().position(|&x| x == a).unwrap()
}

fn opt_index(o: OptimizerKind) -> usize {
    OptimizerKind::ALL.iter().position(|&x| x == o).unwrap()
}

fn missing(key: &str) -> Error {
    Error::InvalidConfig(format!("missing key {key:?}"))
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse::<T>()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={value:?}")))
}

/// Forget gate's block within a 4u-row parameter matrix. Row order is
/// input, forget, output, candidate.
pub(crate) const GATE_F: usize = 1;

/// Flat offsets of one direction's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DirOffsets {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

/// Precomputed flat layout: per layer, forward then backward direction, each
/// as input weights W (4u x in), recurrent weights U (4u x u), biases b (4u);
/// then the dense head (FEATURE_COUNT x 2u) and its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    dirs: Vec<[DirOffsets; 2]>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(units: usize, num_layers: usize) -> Self {
        let mut cursor = 0;
        let mut dirs = Vec::with_capacity(num_layers);
        for layer in 0..num_layers {
            let in_size = if layer == 0 { FEATURE_COUNT } else { 2 * units };
            let mut pair = [DirOffsets { w: 0, u: 0, b: 0 }; 2];
            for d in &mut pair {
                d.w = cursor;
                cursor += 4 * units * in_size;
                d.u = cursor;
                cursor += 4 * units * units;
                d.b = cursor;
                cursor += 4 * units;
            }
            dirs.push(pair);
        }
        let head_w = cursor;
        cursor += FEATURE_COUNT * 2 * units;
        let head_b = cursor;
        cursor += FEATURE_COUNT;
        Layout {
            dirs,
            head_w,
            head_b,
            total: cursor,
        }
    }
}

/// Read-only view of one direction's parameter blocks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DirView<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
}

/// All model parameters in one flat buffer. The same shape doubles as the
/// gradient accumulator produced by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    units: usize,
    num_layers: usize,
    layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Input width of a layer: raw features for layer 0, both directions'
    /// hidden states for every later layer.
    pub fn in_size(&self, layer: usize) -> usize {
        if layer == 0 {
            FEATURE_COUNT
        } else {
            2 * self.units
        }
    }

    pub fn flat_len(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            units: self.units,
            num_layers: self.num_layers,
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub(crate) fn offsets(&self, layer: usize, dir: usize) -> DirOffsets {
        self.layout.dirs[layer][dir]
    }

    pub(crate) fn dir(&self, layer: usize, dir: usize) -> DirView<'_> {
        let o = self.layout.dirs[layer][dir];
        let in_size = self.in_size(layer);
        let u4 = 4 * self.units;
        DirView {
            w: &self.data[o.w..o.w + u4 * in_size],
            u: &self.data[o.u..o.u + u4 * self.units],
            b: &self.data[o.b..o.b + u4],
        }
    }

    pub(crate) fn head_w(&self) -> &[f64] {
        &self.data[self.layout.head_w..self.layout.head_w + FEATURE_COUNT * 2 * self.units]
    }

    pub(crate) fn head_b(&self) -> &[f64] {
        &self.data[self.layout.head_b..self.layout.head_b + FEATURE_COUNT]
    }

    pub(crate) fn head_w_offset(&self) -> usize {
        self.layout.head_w
    }

    pub(crate) fn head_b_offset(&self) -> usize {
        self.layout.head_b
    }

    pub(crate) fn add_assign(&mut self, other: &ModelParams) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, k: f64) {
        for a in self.data.iter_mut() {
            *a *= k;
        }
    }
}

/// Draws fresh parameters: weights uniform in [-1/sqrt(units), 1/sqrt(units)]
/// in layout order, forget-gate biases 1, every other bias 0. Bit-identical
/// for equal (cfg, seed).
pub fn init_params(cfg: &HyperConfig, seed: u64) -> Result<ModelParams, Error> {
    cfg.validate()?;
    let layout = Layout::new(cfg.units, cfg.num_layers);
    let mut data = vec![0.0; layout.total];
    let bound = 1.0 / (cfg.units as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |slice: &mut [f64]| {
        for v in slice {
            *v = rng.random::<f64>() * 2.0 * bound - bound;
        }
    };
    let u = cfg.units;
    for layer in 0..cfg.num_layers {
        let in_size = if layer == 0 { FEATURE_COUNT } else { 2 * u };
        for d in 0..2 {
            let o = layout.dirs[layer][d];
            fill(&mut data[o.w..o.w + 4 * u * in_size]);
            fill(&mut data[o.u..o.u + 4 * u * u]);
            data[o.b + GATE_F * u..o.b + (GATE_F + 1) * u].fill(1.0);
        }
    }
    fill(&mut data[layout.head_w..layout.head_w + FEATURE_COUNT * 2 * u]);
    Ok(ModelParams {
        units: cfg.units,
        num_layers: cfg.num_layers,
        layout,
        data,
    })
}

const MODEL_MAGIC: &str = "vigil-model v1";

/// Writes the configuration followed by every parameter in layout order.
/// Floats use the shortest round-trip decimal form, so a load reproduces the
/// exact bits.
pub fn save_model(path: &Path, cfg: &HyperConfig, params: &ModelParams) -> Result<(), Error> {
    let mut out = String::with_capacity(params.flat_len() * 20 + 256);
    out.push_str(MODEL_MAGIC);
    out.push('\n');
    out.push_str(&cfg.to_kv());
    out.push_str(&format!("params={}\n", params.flat_len()));
    for v in params.data() {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Inverse of [`save_model`].
pub fn load_model(path: &Path) -> Result<(HyperConfig, ModelParams), Error> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(MODEL_MAGIC) => {}
        other => {
            return Err(Error::MalformedModel(format!(
                "bad header {other:?}, expected {MODEL_MAGIC:?}"
            )));
        }
    }
    let mut kv = String::new();
    let mut count = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("params=") {
            count = Some(rest.parse::<usize>().map_err(|_| {
                Error::MalformedModel(format!("bad parameter count {rest:?}"))
            })?);
            break;
        }
        kv.push_str(line);
        kv.push('\n');
    }
    let count = count.ok_or_else(|| Error::MalformedModel("missing params count".into()))?;
    let cfg = HyperConfig::from_kv(&kv)?;
    let layout = Layout::new(cfg.units, cfg.num_layers);
    if layout.total != count {
        return Err(Error::MalformedModel(format!(
            "parameter count {count} does not match configuration (expected {})",
            layout.total
        )));
    }
    let mut data = Vec::with_capacity(count);
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let v = line
            .parse::<f64>()
            .map_err(|_| Error::MalformedModel(format!("bad parameter value {line:?}")))?;
        if !v.is_finite() {
            return Err(Error::MalformedModel(format!("non-finite parameter {line:?}")));
        }
        data.push(v);
    }
    if data.len() != count {
        return Err(Error::MalformedModel(format!(
            "expected {count} parameters, found {}",
            data.len()
        )));
    }
    Ok((
        cfg.clone(),
        ModelParams {
            units: cfg.units,
            num_layers: cfg.num_layers,
            layout,
            data,
        },
    ))
}

#[cfg(test)]
pub(crate) fn small_config() -> HyperConfig {
    HyperConfig {
        units: 3,
        activation: Activation::Relu,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::Adam,
        num_layers: 2,
        dropout: 0.0,
    }
}
