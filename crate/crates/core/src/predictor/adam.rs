use serde::{Deserialize, Serialize};

use super::{GradVector, ParamVector};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step count used for bias
/// correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut ParamVector,
    grad: &GradVector,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }
    let n = params.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape {
            what: "optimizer state",
            expected: n,
            actual: grad.len().min(state.m.len()).min(state.v.len()),
        });
    }
    if grad.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .values
        .iter_mut()
        .zip(&grad.values)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParamVector {
            values: vec![0.5, -1.0, 3.0],
        };
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &GradVector::zeros(3), &mut s, 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        // After one step m_hat = g and v_hat = g^2, so the update is
        // -lr * g / (|g| + eps).
        let g = [0.3, -2.0, 1e-3, -5e-2];
        let lr = 1e-3;
        let mut p = ParamVector::zeros(4);
        let mut s = AdamState::new(4);
        adam_step(&mut p, &GradVector { values: g.to_vec() }, &mut s, lr).unwrap();
        for (pv, gv) in p.values.iter().zip(g) {
            let expected = -lr * gv / (gv.abs() + 1e-8);
            assert!((pv - expected).abs() < 1e-15);
            assert_eq!(pv.signum(), -gv.signum());
            assert!((pv.abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = ParamVector::zeros(2);
        let mut s = AdamState::new(2);
        let g = GradVector {
            values: vec![f64::NAN, 0.0],
        };
        assert!(adam_step(&mut p, &g, &mut s, 1e-3).is_err());
        assert!(adam_step(&mut p, &GradVector::zeros(2), &mut s, 0.0).is_err());
        assert!(adam_step(&mut p, &GradVector::zeros(3), &mut s, 1e-3).is_err());
    }
}
