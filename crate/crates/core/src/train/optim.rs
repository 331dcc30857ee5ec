//! Adam optimiser.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powf(state.t as f64);
    let c2 = 1.0 - BETA2.powf(state.t as f64);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(xs: &[f64]) -> Tensor {
        Tensor::new(vec![xs.len()], xs.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![t(&[1.0, -2.0, 3.0])];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[t(&[0.0; 3])], &mut s, 0.1).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![t(&[0.0; 3])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[t(&g)], &mut s, 0.01).unwrap();
        for (x, gi) in p[0].data().iter().zip(g) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
            let expected = -0.01 * gi / (gi.abs() + EPSILON);
            assert!((x - expected).abs() < 1e-15);
            assert!((x.abs() - 0.01).abs() < 1e-7);
            assert_eq!(x.signum(), -gi.signum());
        }
    }

    #[test]
    fn identical_calls_agree_and_shapes_are_checked() {
        let run = || {
            let mut p = vec![t(&[0.5, 0.25])];
            let mut s = AdamState::new(&p);
            for i in 0..4 {
                adam_step(&mut p, &[t(&[i as f64, -1.0])], &mut s, 0.05).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
        let mut p = vec![t(&[0.0; 2])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[t(&[0.0; 3])], &mut s, 0.1).is_err());
    }
}
