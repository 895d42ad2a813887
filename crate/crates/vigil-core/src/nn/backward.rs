//! Backpropagation through time over the cached forward pass.
//!
//! Produces exact gradients of the mean-squared error with respect to every
//! parameter, in the same flat layout as the parameters themselves. Each
//! direction is unrolled along its own processing order; stacked layers
//! receive gradient at every position from the layer above, while the top
//! layer receives it only at the two positions feeding the head.

use crate::series::FEATURE_COUNT;

use super::forward::{Cache, DirTrace, Row};
use super::{Activation, DirOffsets, HyperConfig, ModelParams, LEAKY_SLOPE};

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

#[allow(clippy::too_many_arguments)]
fn direction_backward(
    w: &[f64],
    u_mat: &[f64],
    gdata: &mut [f64],
    off: DirOffsets,
    trace: &DirTrace,
    input: &[f64],
    in_size: usize,
    units: usize,
    n: usize,
    dh_ext: &[f64],
    reverse: bool,
    dx: &mut [f64],
) {
    let u4 = 4 * units;
    let mut dh_carry = vec![0.0; units];
    let mut dc_carry = vec![0.0; units];
    let mut dpre = vec![0.0; u4];
    // BPTT visits positions opposite to the processing order; `prev` is the
    // position processed immediately before `t`.
    for k in 0..n {
        let (t, prev) = if reverse {
            (k, if k + 1 < n { Some(k + 1) } else { None })
        } else {
            (n - 1 - k, if n - 1 - k > 0 { Some(n - 2 - k) } else { None })
        };
        let gates = &trace.gates[t * u4..(t + 1) * u4];
        let tanh_c = &trace.tanh_c[t * units..(t + 1) * units];
        for j in 0..units {
            let i_g = gates[j];
            let f_g = gates[units + j];
            let o_g = gates[2 * units + j];
            let g_g = gates[3 * units + j];
            let c_prev = prev.map_or(0.0, |p| trace.c[p * units + j]);
            let dh_total = dh_ext[t * units + j] + dh_carry[j];
            let d_o = dh_total * tanh_c[j];
            let d_tanh_c = dh_total * o_g;
            let dc_total = dc_carry[j] + d_tanh_c * (1.0 - tanh_c[j] * tanh_c[j]);
            let d_i = dc_total * g_g;
            let d_g = dc_total * i_g;
            let d_f = dc_total * c_prev;
            dc_carry[j] = dc_total * f_g;
            dpre[j] = d_i * i_g * (1.0 - i_g);
            dpre[units + j] = d_f * f_g * (1.0 - f_g);
            dpre[2 * units + j] = d_o * o_g * (1.0 - o_g);
            dpre[3 * units + j] = d_g * (1.0 - g_g * g_g);
        }
        let x = &input[t * in_size..(t + 1) * in_size];
        for (r, &dp) in dpre.iter().enumerate() {
            let row = &mut gdata[off.w + r * in_size..off.w + (r + 1) * in_size];
            axpy(row, dp, x);
            gdata[off.b + r] += dp;
        }
        if let Some(p) = prev {
            let h_prev = &trace.h[p * units..(p + 1) * units];
            for (r, &dp) in dpre.iter().enumerate() {
                let row = &mut gdata[off.u + r * units..off.u + (r + 1) * units];
                axpy(row, dp, h_prev);
            }
        }
        let dx_t = &mut dx[t * in_size..(t + 1) * in_size];
        for (r, &dp) in dpre.iter().enumerate() {
            axpy(dx_t, dp, &w[r * in_size..(r + 1) * in_size]);
        }
        dh_carry.fill(0.0);
        for (r, &dp) in dpre.iter().enumerate() {
            axpy(&mut dh_carry, dp, &u_mat[r * units..(r + 1) * units]);
        }
    }
}

/// Gradient of `mse(cache.pred, target)` for every parameter.
pub fn backward(
    params: &ModelParams,
    cfg: &HyperConfig,
    cache: &Cache,
    target: &Row,
) -> ModelParams {
    let units = params.units();
    let num_layers = params.num_layers();
    let n = cache.n;
    let mut grads = params.zeros_like();

    let mut dpred = [0.0; FEATURE_COUNT];
    for m in 0..FEATURE_COUNT {
        dpred[m] = 2.0 * (cache.pred[m] - target[m]) / FEATURE_COUNT as f64;
    }
    let mut dz = [0.0; FEATURE_COUNT];
    match cfg.activation {
        Activation::Relu => {
            for m in 0..FEATURE_COUNT {
                dz[m] = if cache.z[m] > 0.0 { dpred[m] } else { 0.0 };
            }
        }
        Activation::LeakyRelu => {
            for m in 0..FEATURE_COUNT {
                dz[m] = if cache.z[m] > 0.0 {
                    dpred[m]
                } else {
                    dpred[m] * LEAKY_SLOPE
                };
            }
        }
        Activation::Sigmoid => {
            for m in 0..FEATURE_COUNT {
                dz[m] = dpred[m] * cache.pred[m] * (1.0 - cache.pred[m]);
            }
        }
        Activation::Softmax => {
            let inner: f64 = (0..FEATURE_COUNT).map(|j| dpred[j] * cache.pred[j]).sum();
            for m in 0..FEATURE_COUNT {
                dz[m] = cache.pred[m] * (dpred[m] - inner);
            }
        }
    }

    let head_w = params.head_w().to_vec();
    let hw_off = params.head_w_offset();
    let hb_off = params.head_b_offset();
    let mut dhead_in = vec![0.0; 2 * units];
    {
        let gdata = grads.data_mut();
        for (m, &dzm) in dz.iter().enumerate() {
            let row = &mut gdata[hw_off + m * 2 * units..hw_off + (m + 1) * 2 * units];
            axpy(row, dzm, &cache.head_in);
            gdata[hb_off + m] += dzm;
            axpy(&mut dhead_in, dzm, &head_w[m * 2 * units..(m + 1) * 2 * units]);
        }
    }

    // External hidden-state gradients for the layer being processed.
    let mut dh_ext = [vec![0.0; n * units], vec![0.0; n * units]];
    for j in 0..units {
        dh_ext[0][(n - 1) * units + j] = dhead_in[j];
        dh_ext[1][j] = dhead_in[units + j];
    }

    for layer in (0..num_layers).rev() {
        let in_size = params.in_size(layer);
        let input = &cache.inputs[layer];
        let mut dx = vec![0.0; n * in_size];
        for d in 0..2 {
            let view = params.dir(layer, d);
            let (w, u_mat) = (view.w.to_vec(), view.u.to_vec());
            direction_backward(
                &w,
                &u_mat,
                grads.data_mut(),
                params.offsets(layer, d),
                &cache.dirs[layer][d],
                input,
                in_size,
                units,
                n,
                &dh_ext[d],
                d == 1,
                &mut dx,
            );
        }
        if layer == 0 {
            break;
        }
        if let Some(mask) = &cache.masks[layer - 1] {
            for (dv, m) in dx.iter_mut().zip(mask) {
                *dv *= m;
            }
        }
        let mut next = [vec![0.0; n * units], vec![0.0; n * units]];
        for t in 0..n {
            next[0][t * units..(t + 1) * units]
                .copy_from_slice(&dx[t * 2 * units..t * 2 * units + units]);
            next[1][t * units..(t + 1) * units]
                .copy_from_slice(&dx[t * 2 * units + units..(t + 1) * 2 * units]);
        }
        dh_ext = next;
    }
    grads
}

#[cfg(test)]
pub(crate) mod checks {
    use super::super::{forward, init_params, mse, HyperConfig};
    use super::*;

    /// Central-difference probe of every parameter against the analytic
    /// gradient. Returns the largest relative error; near-zero pairs fall
    /// back to an absolute bound.
    pub fn max_gradient_error(
        cfg: &HyperConfig,
        model_seed: u64,
        window: &[Row],
        target: &Row,
        train_mode: bool,
        pass_seed: u64,
    ) -> f64 {
        const H: f64 = 1e-5;
        let params = init_params(cfg, model_seed).unwrap();
        let cache = forward(&params, cfg, window, train_mode, pass_seed).unwrap();
        let analytic = backward(&params, cfg, &cache, target);
        let mut worst: f64 = 0.0;
        for idx in 0..params.flat_len() {
            let mut plus = params.clone();
            plus.data_mut()[idx] += H;
            let lp = mse(
                &forward(&plus, cfg, window, train_mode, pass_seed)
                    .unwrap()
                    .prediction(),
                target,
            );
            let mut minus = params.clone();
            minus.data_mut()[idx] -= H;
            let lm = mse(
                &forward(&minus, cfg, window, train_mode, pass_seed)
                    .unwrap()
                    .prediction(),
                target,
            );
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic.data()[idx];
            let denom = numeric.abs().max(a.abs());
            let err = if denom < 1e-7 {
                if (numeric - a).abs() < 1e-10 {
                    0.0
                } else {
                    1.0
                }
            } else {
                (numeric - a).abs() / denom
            };
            worst = worst.max(err);
        }
        worst
    }
}
