//! Finite-difference gradient oracle shared by unit tests.

use rand::Rng;

use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that entries whose true
/// gradient is zero are judged by absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `f` over fresh leaves for `inputs`, back-propagates, and compares
/// every input gradient against central differences. Returns the maximum
/// relative error.
pub fn central_difference_check<F>(inputs: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.clone();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe);
            probe[ti].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe);
            probe[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[ti][j], numeric));
        }
    }
    worst
}
