//! Sinusoidal positional encoding, multi-head self-attention, and the
//! post-norm transformer encoder block.

use rand::Rng;

use super::dense::Dense;
use super::LAYER_NORM_EPS;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// `PE[p, 2i] = sin(p / 10000^(2i/dim))`, `PE[p, 2i+1] = cos(p / 10000^(2i/dim))`.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, dim], data)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            dim,
            heads,
            query: Dense::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Dense::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Dense::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Dense::new(store, &format!("{name}.output"), dim, dim, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(&self, g: &mut Graph<'_>, p: &Bound, x: Var, mask: &[bool]) -> Result<Var> {
        Ok(self.forward_with_weights(g, p, x, mask)?.0)
    }

    /// Attention output plus the per-head `[len × len]` weight matrices.
    pub fn forward_with_weights(
        &self,
        g: &mut Graph<'_>,
        p: &Bound,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let xt = g.value(x);
        if !xt.is_matrix() || xt.cols() != self.dim {
            return Err(Error::dim("attention", xt.shape(), &[mask.len(), self.dim]));
        }
        if mask.len() != xt.rows() {
            return Err(Error::dim("attention mask", xt.shape(), &[mask.len()]));
        }
        let q = self.query.forward(g, p, x)?;
        let k = self.key.forward(g, p, x)?;
        let v = self.value.forward(g, p, x)?;
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.masked_softmax_rows(scores, mask)?;
            outs.push(g.matmul(attn, vh)?);
            weights.push(attn);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok((self.output.forward(g, p, joined)?, weights))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm_rows(x, p.var(self.gain), p.var(self.bias), LAYER_NORM_EPS)
    }
}

/// Encoder block: `LN(x + MHA(x))` followed by `LN(· + FF(·))`, FF = dense→ReLU→dense.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub norm2: LayerNorm,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let attention = MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), dim);
        let ff_in = Dense::new(store, &format!("{name}.ff_in"), dim, ff_dim, rng);
        let ff_out = Dense::new(store, &format!("{name}.ff_out"), ff_dim, dim, rng);
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), dim);
        Ok(TransformerBlock {
            attention,
            norm1,
            ff_in,
            ff_out,
            norm2,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, p: &Bound, x: Var, mask: &[bool]) -> Result<Var> {
        let a = self.attention.forward(g, p, x, mask)?;
        let y = g.add(x, a)?;
        let y = self.norm1.forward(g, p, y)?;
        let f = self.ff_in.forward(g, p, y)?;
        let f = g.relu(f);
        let f = self.ff_out.forward(g, p, f)?;
        let z = g.add(y, f)?;
        self.norm2.forward(g, p, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::test_support::{random_tensor, relative_error};

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(3, 6).unwrap();
        assert_eq!(pe.row_slice(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let pe4 = positional_encoding(2, 4).unwrap();
        assert!((pe4.at(1, 0) - 0.841_470_984_807_896_5).abs() < 1e-15);
        let big = positional_encoding(50, 16).unwrap();
        assert!(big.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(positional_encoding(3, 5), Err(Error::Config(_))));
    }

    #[test]
    fn heads_must_divide_dimension() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(0, "attn");
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 32, 3, &mut r),
            Err(Error::Config(_))
        ));
    }

    fn attention(seed: u64, dim: usize, heads: usize) -> (ParamStore, MultiHeadAttention) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "attn");
        let a = MultiHeadAttention::new(&mut store, "a", dim, heads, &mut r).unwrap();
        (store, a)
    }

    fn dense_oracle(store: &ParamStore, d: &Dense, x: &[f64]) -> Vec<f64> {
        let (w, b) = (store.get(d.weight), store.get(d.bias).data());
        (0..d.output_dim)
            .map(|j| b[j] + (0..d.input_dim).map(|k| x[k] * w.at(k, j)).sum::<f64>())
            .collect()
    }

    /// Direct re-implementation of scaled dot-product attention.
    fn attention_oracle(store: &ParamStore, a: &MultiHeadAttention, x: &Tensor, mask: &[bool]) -> Vec<Vec<f64>> {
        let len = x.rows();
        let q: Vec<Vec<f64>> = (0..len).map(|i| dense_oracle(store, &a.query, x.row_slice(i))).collect();
        let k: Vec<Vec<f64>> = (0..len).map(|i| dense_oracle(store, &a.key, x.row_slice(i))).collect();
        let v: Vec<Vec<f64>> = (0..len).map(|i| dense_oracle(store, &a.value, x.row_slice(i))).collect();
        let dk = a.head_dim();
        let mut concat = vec![vec![0.0; a.dim]; len];
        for h in 0..a.heads {
            for i in 0..len {
                let mut scores = vec![f64::NEG_INFINITY; len];
                for j in 0..len {
                    if mask[j] {
                        let s: f64 = (0..dk).map(|t| q[i][h * dk + t] * k[j][h * dk + t]).sum();
                        scores[j] = s / (dk as f64).sqrt();
                    }
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for t in 0..dk {
                    concat[i][h * dk + t] = (0..len).map(|j| e[j] / z * v[j][h * dk + t]).sum();
                }
            }
        }
        concat.iter().map(|row| dense_oracle(store, &a.output, row)).collect()
    }

    #[test]
    fn single_position_attends_to_itself() {
        let (store, a) = attention(1, 4, 2);
        let x = Tensor::row(&[0.5, -0.5, 1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (out, w) = a.forward_with_weights(&mut g, &p, xv, &[true]).unwrap();
        for wh in w {
            assert_eq!(g.value(wh).data(), &[1.0]);
        }
        let v = dense_oracle(&store, &a.value, x.data());
        let expect = dense_oracle(&store, &a.output, &v);
        for (o, e) in g.value(out).data().iter().zip(&expect) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_positions_give_identical_rows() {
        let (store, a) = attention(2, 4, 2);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x);
        let out = a.forward(&mut g, &p, xv, &[true, true]).unwrap();
        let t = g.value(out);
        assert_eq!(t.row_slice(0), t.row_slice(1));
    }

    #[test]
    fn matches_brute_force_attention() {
        for seed in 0..5 {
            let (store, a) = attention(seed, 4, 2);
            let mut r = rng::stream(seed, "x");
            let x = random_tensor(&mut r, &[3, 4], 2.0);
            let mask = [true, true, seed % 2 == 0];
            let expect = attention_oracle(&store, &a, &x, &mask);
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let xv = g.constant(x);
            let (out, w) = a.forward_with_weights(&mut g, &p, xv, &mask).unwrap();
            for i in 0..3 {
                for (o, e) in g.value(out).row_slice(i).iter().zip(&expect[i]) {
                    assert!((o - e).abs() < 1e-10);
                }
            }
            for wh in w {
                for i in 0..3 {
                    let s: f64 = g.value(wh).row_slice(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4);
        store.get_mut(ln.bias).data_mut().copy_from_slice(&[0.5, 0.0, -1.0, 2.0]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::full(&[2, 4], 3.7));
        let y = ln.forward(&mut g, &p, x).unwrap();
        for row in g.value(y).data().chunks(4) {
            assert_eq!(row, &[0.5, 0.0, -1.0, 2.0]);
        }
    }

    #[test]
    fn zero_weights_reduce_block_to_double_layer_norm() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(4, "block");
        let block = TransformerBlock::new(&mut store, "b", 4, 2, 6, &mut r).unwrap();
        let keep: Vec<_> = [block.norm1.gain, block.norm1.bias, block.norm2.gain, block.norm2.bias]
            .iter()
            .map(|id| id.index())
            .collect();
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            if !keep.contains(&i) {
                t.data_mut().fill(0.0);
            }
        }
        let x = random_tensor(&mut r, &[3, 4], 2.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = block.forward(&mut g, &p, xv, &[true; 3]).unwrap();
        let once = block.norm1.forward(&mut g, &p, xv).unwrap();
        let twice = block.norm2.forward(&mut g, &p, once).unwrap();
        assert_eq!(g.value(out), g.value(twice));
    }

    #[test]
    fn block_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(8, "block");
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 8, &mut r).unwrap();
        let x = random_tensor(&mut r, &[4, 8], 2.0);
        let w = random_tensor(&mut r, &[4, 8], 1.0);
        let mask = [true, true, true, false];

        let loss = |store: &ParamStore, x: &Tensor, track: bool| -> (f64, Vec<Vec<f64>>) {
            let mut g = Graph::new();
            let p = store.bind(&mut g, track);
            let xv = g.leaf(x.clone(), track);
            let wv = g.constant(w.clone());
            let y = block.forward(&mut g, &p, xv, &mask).unwrap();
            let y = g.mul(y, wv).unwrap();
            let l = g.sum(y);
            if !track {
                return (g.value(l).item(), vec![]);
            }
            g.backward(l).unwrap();
            let mut grads: Vec<Vec<f64>> = p
                .vars()
                .iter()
                .zip(store.tensors())
                .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.numel()]))
                .collect();
            grads.push(g.grad(xv).unwrap().to_vec());
            (g.value(l).item(), grads)
        };
        let (_, grads) = loss(&store, &x, true);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (ti, t) in store.tensors().iter().enumerate() {
            for j in 0..t.numel() {
                let mut up = store.clone();
                up.tensors_mut()[ti].data_mut()[j] += h;
                let mut dn = store.clone();
                dn.tensors_mut()[ti].data_mut()[j] -= h;
                let num = (loss(&up, &x, false).0 - loss(&dn, &x, false).0) / (2.0 * h);
                worst = worst.max(relative_error(grads[ti][j], num));
            }
        }
        for j in 0..x.numel() {
            let mut up = x.clone();
            up.data_mut()[j] += h;
            let mut dn = x.clone();
            dn.data_mut()[j] -= h;
            let num = (loss(&store, &up, false).0 - loss(&store, &dn, false).0) / (2.0 * h);
            worst = worst.max(relative_error(grads.last().unwrap()[j], num));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
