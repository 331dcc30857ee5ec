use crate::error::Result;
use crate::tape::{Graph, Var};

/// Mean over the valid rows of `x: [len × dim]`, returned as `[1 × dim]`.
///
/// Fails with [`Error::EmptySequence`](crate::Error::EmptySequence) when no row is valid.
pub fn pool_mean(g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<Var> {
    g.masked_mean_rows(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::Error;

    #[test]
    fn mean_of_valid_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![4.0, 5.0]]).unwrap());
        let y = pool_mean(&mut g, x, &[true]).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 5.0]);

        let x = g.constant(Tensor::from_rows(&[vec![0.3, 7.0], vec![0.3, 7.0]]).unwrap());
        let y = pool_mean(&mut g, x, &[true, true]).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, 7.0]);

        let x = g.constant(Tensor::from_rows(&[vec![1.0], vec![3.0], vec![100.0]]).unwrap());
        let y = pool_mean(&mut g, x, &[true, true, false]).unwrap();
        assert_eq!(g.value(y).data(), &[2.0]);

        assert!(matches!(pool_mean(&mut g, x, &[false; 3]), Err(Error::EmptySequence)));
    }
}
