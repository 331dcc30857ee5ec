use rand::Rng;

use crate::error::Result;
use crate::params::{init_uniform, Bound, ParamId, ParamStore};
use crate::tape::{Graph, Var};

/// Fully connected layer `y = x·W + b` on row vectors.
#[derive(Clone, Debug)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, &[input_dim, output_dim], input_dim));
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, &[output_dim], input_dim));
        Dense {
            input_dim,
            output_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add(y, p.var(self.bias))
    }
}
