use rand::Rng;

use crate::error::Result;
use crate::params::{init_uniform, Bound, ParamId, ParamStore};
use crate::tape::{Graph, Var};
use crate::tokenizer::{PAD_ID, UNK_ID};

/// Learned dense vector per token id.
///
/// Row [`PAD_ID`] is zero and never receives gradient. Row [`UNK_ID`] starts at
/// zero too: a vocabulary built from training folds never emits it during
/// training, so it stays neutral at inference.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub weights: ParamId,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut w = init_uniform(rng, &[vocab_size, dim], dim);
        for id in [PAD_ID, UNK_ID] {
            let id = id as usize;
            if id < vocab_size {
                w.data_mut()[id * dim..(id + 1) * dim].fill(0.0);
            }
        }
        let weights = store.add(format!("{name}.weights"), w);
        EmbeddingTable {
            vocab_size,
            dim,
            weights,
        }
    }

    /// `[len × dim]` rows for `ids`; padding positions are zero rows.
    pub fn embed(&self, g: &mut Graph<'_>, p: &Bound, ids: &[u32]) -> Result<Var> {
        g.gather_rows(p.var(self.weights), ids, Some(PAD_ID))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::test_support::relative_error;
    use crate::Error;

    fn table() -> (ParamStore, EmbeddingTable) {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, "emb");
        let t = EmbeddingTable::new(&mut store, "emb", 5, 3, &mut r);
        (store, t)
    }

    #[test]
    fn padding_rows_are_zero() {
        let (store, t) = table();
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let y = t.embed(&mut g, &p, &[PAD_ID, PAD_ID]).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookup_copies_row() {
        let (store, t) = table();
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let y = t.embed(&mut g, &p, &[3]).unwrap();
        assert_eq!(g.value(y).data(), store.get(t.weights).row_slice(3));
    }

    #[test]
    fn out_of_range_id_reports_position() {
        let (store, t) = table();
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        match t.embed(&mut g, &p, &[2, 9]) {
            Err(Error::Vocab { position, id, .. }) => assert_eq!((position, id), (1, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn only_used_rows_get_gradient() {
        let (store, t) = table();
        let ids = [2u32, 4, 0, 2];
        let weights = store.get(t.weights).clone();
        let loss_of = |w: &crate::Tensor, track: bool| {
            let mut g = Graph::new();
            let wv = g.leaf(w.clone(), track);
            let e = g.gather_rows(wv, &ids, Some(PAD_ID)).unwrap();
            let sq = g.tanh(e);
            let sq = g.mul(sq, e).unwrap();
            let l = g.sum(sq);
            if track {
                g.backward(l).unwrap();
                (g.value(l).item(), g.grad(wv).unwrap().to_vec())
            } else {
                (g.value(l).item(), vec![])
            }
        };
        let (_, grad) = loss_of(&weights, true);
        let h = 1e-5;
        for row in 0..5 {
            for col in 0..3 {
                let j = row * 3 + col;
                let mut up = weights.clone();
                up.data_mut()[j] += h;
                let mut dn = weights.clone();
                dn.data_mut()[j] -= h;
                let numeric = (loss_of(&up, false).0 - loss_of(&dn, false).0) / (2.0 * h);
                assert!(relative_error(grad[j], numeric) < 1e-6);
                let used = row == 2 || row == 4;
                if !used {
                    assert_eq!(grad[j], 0.0, "row {row} should have no gradient");
                }
            }
        }
    }
}
