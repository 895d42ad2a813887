//! Elementwise optimizer updates over flat parameter/gradient slices.

use crate::error::Error;

use super::OptimizerKind;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_RHO: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;
pub const ADAGRAD_EPS: f64 = 1e-8;
pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;

/// Accumulator state; created zeroed and advanced by [`optimizer_step`].
///
/// Adadelta follows the original formulation: the step size comes entirely
/// from the ratio of running RMS values, so the learning rate is unused.
#[derive(Debug, Clone, PartialEq)]
pub enum OptState {
    RmsProp { v: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
    Adadelta { acc_g: Vec<f64>, acc_d: Vec<f64> },
    Adagrad { acc: Vec<f64> },
}

impl OptState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::RmsProp => OptState::RmsProp { v: vec![0.0; len] },
            OptimizerKind::Adam => OptState::Adam {
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
            OptimizerKind::Adadelta => OptState::Adadelta {
                acc_g: vec![0.0; len],
                acc_d: vec![0.0; len],
            },
            OptimizerKind::Adagrad => OptState::Adagrad { acc: vec![0.0; len] },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptState::RmsProp { .. } => OptimizerKind::RmsProp,
            OptState::Adam { .. } => OptimizerKind::Adam,
            OptState::Adadelta { .. } => OptimizerKind::Adadelta,
            OptState::Adagrad { .. } => OptimizerKind::Adagrad,
        }
    }

    fn len(&self) -> usize {
        match self {
            OptState::RmsProp { v } => v.len(),
            OptState::Adam { m, .. } => m.len(),
            OptState::Adadelta { acc_g, .. } => acc_g.len(),
            OptState::Adagrad { acc } => acc.len(),
        }
    }
}

/// Applies one update in place. `params`, `grads`, and the state must share
/// one length.
pub fn optimizer_step(
    state: &mut OptState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<(), Error> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::InvalidConfig(format!(
            "optimizer shape mismatch: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    match state {
        OptState::RmsProp { v } => {
            for ((w, &g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
                *vi = RMSPROP_RHO * *vi + (1.0 - RMSPROP_RHO) * g * g;
                *w -= lr * g / (vi.sqrt() + RMSPROP_EPS);
            }
        }
        OptState::Adam { m, v, t } => {
            *t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
            for (((w, &g), mi), vi) in params
                .iter_mut()
                .zip(grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        OptState::Adadelta { acc_g, acc_d } => {
            for (((w, &g), ag), ad) in params
                .iter_mut()
                .zip(grads)
                .zip(acc_g.iter_mut())
                .zip(acc_d.iter_mut())
            {
                *ag = ADADELTA_RHO * *ag + (1.0 - ADADELTA_RHO) * g * g;
                let step = -((*ad + ADADELTA_EPS).sqrt() / (*ag + ADADELTA_EPS).sqrt()) * g;
                *ad = ADADELTA_RHO * *ad + (1.0 - ADADELTA_RHO) * step * step;
                *w += step;
            }
        }
        OptState::Adagrad { acc } => {
            for ((w, &g), ai) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
                *ai += g * g;
                *w -= lr * g / (ai.sqrt() + ADAGRAD_EPS);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_has_unit_ratio() {
        let mut state = OptState::new(OptimizerKind::Adam, 1);
        let mut w = [0.0];
        optimizer_step(&mut state, &mut w, &[1.0], 1e-4).unwrap();
        // First step: m_hat = v_hat = 1, so the update is -lr / (1 + eps).
        assert!((w[0] + 1e-4).abs() < 1e-11, "w = {}", w[0]);
    }

    #[test]
    fn adagrad_first_step_matches_hand_value() {
        let mut state = OptState::new(OptimizerKind::Adagrad, 1);
        let mut w = [0.0];
        optimizer_step(&mut state, &mut w, &[2.0], 0.01).unwrap();
        // acc = 4, step = -0.01 * 2 / (2 + eps) = -0.01.
        assert!((w[0] + 0.01).abs() < 1e-10, "w = {}", w[0]);
    }

    #[test]
    fn rmsprop_first_step_matches_hand_value() {
        let mut state = OptState::new(OptimizerKind::RmsProp, 1);
        let mut w = [0.0];
        optimizer_step(&mut state, &mut w, &[1.0], 0.01).unwrap();
        // v = 0.1, step = -0.01 / (sqrt(0.1) + eps).
        let expected = -0.01 / (0.1f64.sqrt() + RMSPROP_EPS);
        assert!((w[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adadelta_first_step_matches_hand_value() {
        let mut state = OptState::new(OptimizerKind::Adadelta, 1);
        let mut w = [1.0];
        optimizer_step(&mut state, &mut w, &[2.0], 0.01).unwrap();
        // acc_g = 0.2, step = -sqrt(1e-6)/sqrt(0.2 + 1e-6) * 2.
        let expected = 1.0 - (ADADELTA_EPS.sqrt() / (0.2 + ADADELTA_EPS).sqrt()) * 2.0;
        assert!((w[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for kind in OptimizerKind::ALL {
            let mut state = OptState::new(kind, 3);
            let mut w = [1.5, -2.0, 0.25];
            optimizer_step(&mut state, &mut w, &[0.0; 3], 0.01).unwrap();
            assert_eq!(w, [1.5, -2.0, 0.25], "{kind}");
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let mut state = OptState::new(OptimizerKind::Adam, 2);
        let mut w = [0.0; 3];
        assert!(optimizer_step(&mut state, &mut w, &[0.0; 3], 0.01).is_err());
    }

    /// Each rule drives f(w) = w^2 from w = 1 below 0.5. Adagrad's sqrt
    /// accumulator caps its total displacement at lr * 2(sqrt(steps) - 1),
    /// so it runs at lr = 0.1 where the others use 0.01; adadelta scales
    /// itself and ignores lr entirely.
    #[test]
    fn every_optimizer_descends_a_parabola() {
        for kind in OptimizerKind::ALL {
            let lr = if kind == OptimizerKind::Adagrad { 0.1 } else { 0.01 };
            let mut state = OptState::new(kind, 1);
            let mut w = [1.0f64];
            let mut reached = false;
            for _ in 0..200 {
                let g = [2.0 * w[0]];
                optimizer_step(&mut state, &mut w, &g, lr).unwrap();
                if w[0].abs() < 0.5 {
                    reached = true;
                    break;
                }
            }
            assert!(reached, "{kind} never reached |w| < 0.5, w = {}", w[0]);
        }
    }

    #[test]
    fn state_advances_run_to_run_deterministically() {
        let run = || {
            let mut state = OptState::new(OptimizerKind::Adam, 2);
            let mut w = [0.3, -0.7];
            for k in 0..50 {
                let g = [w[0] * 0.5 + k as f64 * 1e-3, w[1].sin()];
                optimizer_step(&mut state, &mut w, &g, 0.01).unwrap();
            }
            (w, state)
        };
        let (w1, s1) = run();
        let (w2, s2) = run();
        assert_eq!(w1, w2);
        assert_eq!(s1, s2);
    }
}
