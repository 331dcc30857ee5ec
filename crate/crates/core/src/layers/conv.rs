use rand::Rng;

use crate::error::Result;
use crate::params::{init_uniform, Bound, ParamId, ParamStore};
use crate::tape::{Graph, Var};

/// 1-D convolution over the sequence axis with valid padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel_size: usize,
    pub input_dim: usize,
    pub filters: usize,
    pub kernels: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernel_size: usize,
        input_dim: usize,
        filters: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel_size * input_dim;
        let kernels = store.add(
            format!("{name}.kernels"),
            init_uniform(rng, &[kernel_size, input_dim, filters], fan_in),
        );
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, &[filters], fan_in));
        Conv1d {
            kernel_size,
            input_dim,
            filters,
            kernels,
            bias,
        }
    }

    /// Cross-correlation without activation; the caller applies ReLU.
    pub fn forward(&self, g: &mut Graph<'_>, p: &Bound, x: Var) -> Result<Var> {
        g.conv1d_valid(x, p.var(self.kernels), p.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::test_support::{central_difference_check, random_tensor};
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sliding_window_difference_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = g.constant(Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, -1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d_valid(x, k, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 1]);
        assert_eq!(g.value(y).data(), &[-2.0, -2.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[5, 2], 3.0));
        let k = g.constant(Tensor::zeros(&[3, 2, 2]));
        let b = g.constant(Tensor::new(vec![2], vec![0.25, -1.0]).unwrap());
        let y = g.conv1d_valid(x, k, b).unwrap();
        for row in g.value(y).data().chunks(2) {
            assert_eq!(row, &[0.25, -1.0]);
        }
    }

    #[test]
    fn too_short_sequence() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 1]));
        let k = g.constant(Tensor::zeros(&[3, 1, 1]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            g.conv1d_valid(x, k, b),
            Err(Error::SequenceTooShort { len: 2, required: 3 })
        ));
    }

    #[test]
    fn output_length_for_each_kernel_size() {
        for k in [3, 4, 5] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[9, 2], 1.0));
            let kern = g.constant(Tensor::full(&[k, 2, 4], 0.1));
            let b = g.constant(Tensor::zeros(&[4]));
            let y = g.conv1d_valid(x, kern, b).unwrap();
            assert_eq!(g.value(y).rows(), 9 - k + 1);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, &[6, 2], 2.0);
        let k = random_tensor(&mut rng, &[3, 2, 2], 2.0);
        let b = random_tensor(&mut rng, &[2], 2.0);
        let w = random_tensor(&mut rng, &[4, 2], 1.0);
        let err = central_difference_check(vec![x, k, b, w], |g, v| {
            let y = g.conv1d_valid(v[0], v[1], v[2]).unwrap();
            let y = g.tanh(y);
            let y = g.mul(y, v[3]).unwrap();
            g.sum(y)
        });
        assert!(err < 1e-4, "{err}");
    }
}
