//! Forward pass and the activation cache consumed by backpropagation.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::seeds;
use crate::series::FEATURE_COUNT;

use super::{Activation, HyperConfig, ModelParams, LEAKY_SLOPE};

/// One normalized instance fed to or produced by the model.
pub type Row = [f64; FEATURE_COUNT];

/// Dot product with four fixed-order accumulator lanes. The lane split is
/// part of the numeric contract: results are deterministic for equal inputs.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden-state trace of one direction in one layer, indexed by the original
/// window position regardless of processing order.
#[derive(Debug, Clone)]
pub(crate) struct DirTrace {
    /// Activated gates per position: [t * 4u ..][i | f | o | g] blocks.
    pub gates: Vec<f64>,
    /// Cell states per position.
    pub c: Vec<f64>,
    /// tanh of the cell states.
    pub tanh_c: Vec<f64>,
    /// Hidden states per position.
    pub h: Vec<f64>,
}

/// Everything the backward pass needs to replay one forward call.
#[derive(Debug, Clone)]
pub struct Cache {
    pub(crate) n: usize,
    /// Post-dropout input sequence of each layer, flattened [t * in_size ..].
    pub(crate) inputs: Vec<Vec<f64>>,
    /// Inverted-dropout masks between layers; scale 1/keep or 0.
    pub(crate) masks: Vec<Option<Vec<f64>>>,
    pub(crate) dirs: Vec<[DirTrace; 2]>,
    /// Concatenated final states feeding the head.
    pub(crate) head_in: Vec<f64>,
    /// Head pre-activation.
    pub(crate) z: [f64; FEATURE_COUNT],
    pub(crate) pred: [f64; FEATURE_COUNT],
}

impl Cache {
    pub fn prediction(&self) -> Row {
        self.pred
    }
}

#[allow(clippy::too_many_arguments)]
fn run_direction(
    w: &[f64],
    u_mat: &[f64],
    b: &[f64],
    units: usize,
    in_size: usize,
    input: &[f64],
    n: usize,
    reverse: bool,
) -> DirTrace {
    let u4 = 4 * units;
    let mut trace = DirTrace {
        gates: vec![0.0; n * u4],
        c: vec![0.0; n * units],
        tanh_c: vec![0.0; n * units],
        h: vec![0.0; n * units],
    };
    let mut h_prev = vec![0.0; units];
    let mut c_prev = vec![0.0; units];
    let mut pre = vec![0.0; u4];
    for k in 0..n {
        let t = if reverse { n - 1 - k } else { k };
        let x = &input[t * in_size..(t + 1) * in_size];
        for (r, (row, bias)) in w.chunks_exact(in_size).zip(b).enumerate() {
            pre[r] = bias + dot(row, x);
        }
        for (r, row) in u_mat.chunks_exact(units).enumerate() {
            pre[r] += dot(row, &h_prev);
        }
        let gates = &mut trace.gates[t * u4..(t + 1) * u4];
        for j in 0..units {
            gates[j] = sigmoid(pre[j]);
            gates[units + j] = sigmoid(pre[units + j]);
            gates[2 * units + j] = sigmoid(pre[2 * units + j]);
            gates[3 * units + j] = pre[3 * units + j].tanh();
        }
        let c = &mut trace.c[t * units..(t + 1) * units];
        let tanh_c = &mut trace.tanh_c[t * units..(t + 1) * units];
        let h = &mut trace.h[t * units..(t + 1) * units];
        for j in 0..units {
            c[j] = gates[units + j] * c_prev[j] + gates[j] * gates[3 * units + j];
            tanh_c[j] = c[j].tanh();
            h[j] = gates[2 * units + j] * tanh_c[j];
        }
        h_prev.copy_from_slice(h);
        c_prev.copy_from_slice(c);
    }
    trace
}

pub(crate) fn apply_head_activation(z: &[f64; FEATURE_COUNT], act: Activation) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    match act {
        Activation::Relu => {
            for (o, &v) in out.iter_mut().zip(z) {
                *o = v.max(0.0);
            }
        }
        Activation::LeakyRelu => {
            for (o, &v) in out.iter_mut().zip(z) {
                *o = if v > 0.0 { v } else { LEAKY_SLOPE * v };
            }
        }
        Activation::Sigmoid => {
            for (o, &v) in out.iter_mut().zip(z) {
                *o = sigmoid(v);
            }
        }
        Activation::Softmax => {
            let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(z) {
                *o = (v - zmax).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
    }
    out
}

/// Runs the model over one normalized window and predicts the next row.
///
/// In train mode, inverted dropout is applied between layers with masks
/// drawn deterministically from `seed`; inference ignores dropout and the
/// seed entirely. Returns the prediction with the cache for [`backward`].
///
/// [`backward`]: super::backward
pub fn forward(
    params: &ModelParams,
    cfg: &HyperConfig,
    window: &[Row],
    train_mode: bool,
    seed: u64,
) -> Result<Cache, Error> {
    if window.is_empty() {
        return Err(Error::InputTooShort("forward needs at least one row".into()));
    }
    if params.units() != cfg.units || params.num_layers() != cfg.num_layers {
        return Err(Error::InvalidConfig(format!(
            "parameter shape ({} units, {} layers) does not match configuration ({}, {})",
            params.units(),
            params.num_layers(),
            cfg.units,
            cfg.num_layers
        )));
    }
    let n = window.len();
    let units = params.units();
    let num_layers = params.num_layers();
    let dropout_active = train_mode && cfg.dropout > 0.0;
    let keep = 1.0 - cfg.dropout;

    let mut inputs = Vec::with_capacity(num_layers);
    let mut first = Vec::with_capacity(n * FEATURE_COUNT);
    for row in window {
        first.extend_from_slice(row);
    }
    inputs.push(first);

    let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(num_layers.saturating_sub(1));
    let mut dirs = Vec::with_capacity(num_layers);

    for layer in 0..num_layers {
        let in_size = params.in_size(layer);
        let input = &inputs[layer];
        let fwd = {
            let v = params.dir(layer, 0);
            run_direction(v.w, v.u, v.b, units, in_size, input, n, false)
        };
        let bwd = {
            let v = params.dir(layer, 1);
            run_direction(v.w, v.u, v.b, units, in_size, input, n, true)
        };
        if layer + 1 < num_layers {
            let mut concat = vec![0.0; n * 2 * units];
            for t in 0..n {
                concat[t * 2 * units..t * 2 * units + units]
                    .copy_from_slice(&fwd.h[t * units..(t + 1) * units]);
                concat[t * 2 * units + units..(t + 1) * 2 * units]
                    .copy_from_slice(&bwd.h[t * units..(t + 1) * units]);
            }
            let mask = if dropout_active {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[layer as u64]));
                let mask: Vec<f64> = (0..concat.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                for (v, m) in concat.iter_mut().zip(&mask) {
                    *v *= m;
                }
                Some(mask)
            } else {
                None
            };
            masks.push(mask);
            inputs.push(concat);
        }
        dirs.push([fwd, bwd]);
    }

    let top = &dirs[num_layers - 1];
    let mut head_in = vec![0.0; 2 * units];
    head_in[..units].copy_from_slice(&top[0].h[(n - 1) * units..n * units]);
    head_in[units..].copy_from_slice(&top[1].h[..units]);

    let mut z = [0.0; FEATURE_COUNT];
    for (m, (row, bias)) in params
        .head_w()
        .chunks_exact(2 * units)
        .zip(params.head_b())
        .enumerate()
    {
        z[m] = bias + dot(row, &head_in);
    }
    let pred = apply_head_activation(&z, cfg.activation);

    Ok(Cache {
        n,
        inputs,
        masks,
        dirs,
        head_in,
        z,
        pred,
    })
}

/// Mean squared error over the nine outputs.
pub fn mse(pred: &Row, target: &Row) -> f64 {
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        sum += d * d;
    }
    sum / FEATURE_COUNT as f64
}
