//! Oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use mcnn::layers::Variant;
use mcnn::model::McnnConfig;
use mcnn::params::{Bound, ParamStore};
use mcnn::{Graph, Tensor, Var};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// |a − n| / max(|a|, |n|, 1e-5).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .unwrap()
}

/// Compares back-propagated gradients of the scalar `f` with respect to every
/// parameter in `store` and every tensor in `inputs` against central
/// differences. Returns the largest relative error, or `None` when a
/// perturbation flips some ReLU unit: the function then has a kink inside the
/// stencil and the instance should be redrawn.
pub fn fd_check<F>(store: &ParamStore, inputs: &[Tensor], f: F) -> Option<f64>
where
    F: Fn(&mut Graph<'_>, &Bound, &[Var]) -> Var,
{
    let eval = |s: &ParamStore, xs: &[Tensor]| -> (f64, Vec<bool>) {
        let mut g = Graph::new();
        let p = s.bind(&mut g, false);
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &p, &vars);
        (g.value(out).item(), g.relu_pattern())
    };

    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &p, &vars);
    let pattern = g.relu_pattern();
    g.backward(out).unwrap();
    let grad_of = |v: Var, n: usize| {
        g.grad(v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; n])
    };
    let param_grads: Vec<Vec<f64>> = p
        .vars()
        .iter()
        .zip(store.tensors())
        .map(|(&v, t)| grad_of(v, t.numel()))
        .collect();
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grad_of(v, t.numel()))
        .collect();

    let compare = |analytic: f64, up: (f64, Vec<bool>), down: (f64, Vec<bool>)| -> Option<f64> {
        if up.1 != pattern || down.1 != pattern {
            return None;
        }
        Some(relative_error(analytic, (up.0 - down.0) / (2.0 * FD_STEP)))
    };

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for i in 0..store.len() {
        for j in 0..store.tensors()[i].numel() {
            let orig = store.tensors()[i].data()[j];
            probe.tensors_mut()[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe, inputs);
            probe.tensors_mut()[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe, inputs);
            probe.tensors_mut()[i].data_mut()[j] = orig;
            worst = worst.max(compare(param_grads[i][j], up, down)?);
        }
    }
    let mut xs = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            xs[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(store, &xs);
            xs[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(store, &xs);
            xs[i].data_mut()[j] = orig;
            worst = worst.max(compare(input_grads[i][j], up, down)?);
        }
    }
    Some(worst)
}

/// Reduces `y` to a scalar with fixed random weights so every output entry
/// contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let mut r = mcnn::rng::stream(seed, "weighted-sum");
    let w = g.constant(random_tensor(&mut r, &shape, 1.0));
    let prod = g.mul(y, w).unwrap();
    g.sum(prod)
}

/// Average precision as the mean, over positive items, of precision at
/// that item's rank. Ranks come from pairwise comparison: an item's rank is
/// one plus the number of items with a higher score or an equal score and
/// a lower index.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut total = 0.0;
    for &i in &positives {
        let k = rank(i);
        let hits = (0..n).filter(|&j| labels[j] && rank(j) <= k).count();
        total += hits as f64 / k as f64;
    }
    total / positives.len() as f64
}

/// Model settings used by the end-to-end checks.
pub fn e2e_config(variant: Variant, seed: u64) -> McnnConfig {
    McnnConfig {
        learning_rate: 0.005,
        filters: 32,
        hidden: 32,
        ff_dim: 64,
        num_heads: (variant == Variant::Transformer).then_some(2),
        seed,
        ..McnnConfig::new(variant)
    }
}

/// A very small model for cheap pipeline runs.
pub fn tiny_config(variant: Variant, seed: u64) -> McnnConfig {
    McnnConfig {
        embedding_size: 8,
        learning_rate: 0.01,
        filters: 8,
        hidden: 6,
        ff_dim: 8,
        num_heads: (variant == Variant::Transformer).then_some(2),
        seed,
        ..McnnConfig::new(variant)
    }
}
