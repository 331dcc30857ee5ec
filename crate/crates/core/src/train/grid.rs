//! Hyperparameter grids.

use serde::{Deserialize, Serialize};

use crate::layers::Variant;
use crate::model::McnnConfig;

pub const STANDARD_LEARNING_RATES: [f64; 4] = [0.01, 0.005, 0.001, 0.0001];

/// Search space for one variant. Fields that do not apply to the variant
/// must be empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub variant: Variant,
    pub embedding_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub num_heads: Vec<usize>,
}

impl HyperGrid {
    /// The standard search space for `variant`.
    pub fn standard(variant: Variant) -> Self {
        let lr = STANDARD_LEARNING_RATES.to_vec();
        match variant {
            Variant::Cnn => HyperGrid {
                variant,
                embedding_sizes: vec![50, 100, 150, 200],
                learning_rates: lr,
                kernel_sizes: vec![3, 4, 5],
                num_heads: vec![],
            },
            Variant::Bigru => HyperGrid {
                variant,
                embedding_sizes: vec![50, 100, 150, 200],
                learning_rates: lr,
                kernel_sizes: vec![],
                num_heads: vec![],
            },
            Variant::Transformer => HyperGrid {
                variant,
                embedding_sizes: vec![32, 64, 128],
                learning_rates: lr,
                kernel_sizes: vec![],
                num_heads: vec![1, 2, 3, 4, 5],
            },
        }
    }

    /// A grid containing only `config`'s point.
    pub fn single(config: &McnnConfig) -> Self {
        HyperGrid {
            variant: config.variant,
            embedding_sizes: vec![config.embedding_size],
            learning_rates: vec![config.learning_rate],
            kernel_sizes: config.kernel_size.into_iter().collect(),
            num_heads: config.num_heads.into_iter().collect(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.embedding_sizes.is_empty() {
            v.push("grid.embedding_sizes is empty".into());
        }
        if self.learning_rates.is_empty() {
            v.push("grid.learning_rates is empty".into());
        }
        let needs_kernel = self.variant == Variant::Cnn;
        if needs_kernel == self.kernel_sizes.is_empty() {
            v.push(format!(
                "grid.kernel_sizes must be {} for the {} variant",
                if needs_kernel { "non-empty" } else { "empty" },
                self.variant
            ));
        }
        let needs_heads = self.variant == Variant::Transformer;
        if needs_heads == self.num_heads.is_empty() {
            v.push(format!(
                "grid.num_heads must be {} for the {} variant",
                if needs_heads { "non-empty" } else { "empty" },
                self.variant
            ));
        }
        v
    }

    /// Grid points in enumeration order (kernel, embedding, learning rate,
    /// heads; later axes vary fastest). Other fields come from `base`.
    /// Transformer points whose embedding size is not divisible by the head
    /// count are skipped and logged.
    pub fn points(&self, base: &McnnConfig) -> Vec<McnnConfig> {
        let kernels: Vec<Option<usize>> = if self.kernel_sizes.is_empty() {
            vec![None]
        } else {
            self.kernel_sizes.iter().copied().map(Some).collect()
        };
        let heads: Vec<Option<usize>> = if self.num_heads.is_empty() {
            vec![None]
        } else {
            self.num_heads.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &k in &kernels {
            for &e in &self.embedding_sizes {
                for &lr in &self.learning_rates {
                    for &h in &heads {
                        if let Some(h) = h {
                            if h == 0 || e % h != 0 {
                                log::info!("skipping transformer point embedding {e}, heads {h}: not divisible");
                                continue;
                            }
                        }
                        out.push(McnnConfig {
                            variant: self.variant,
                            embedding_size: e,
                            kernel_size: k,
                            num_heads: h,
                            learning_rate: lr,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_sizes() {
        let base = |v| McnnConfig::new(v);
        assert_eq!(HyperGrid::standard(Variant::Cnn).points(&base(Variant::Cnn)).len(), 48);
        assert_eq!(HyperGrid::standard(Variant::Bigru).points(&base(Variant::Bigru)).len(), 16);
        // heads 1, 2, 4 divide 32/64/128; 3 and 5 divide none.
        let t = HyperGrid::standard(Variant::Transformer).points(&base(Variant::Transformer));
        assert_eq!(t.len(), 3 * 4 * 3);
        assert!(t.iter().all(|c| c.embedding_size % c.num_heads.unwrap() == 0));
        assert!(t.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn enumeration_order_and_single_point() {
        let base = McnnConfig::new(Variant::Cnn);
        let pts = HyperGrid::standard(Variant::Cnn).points(&base);
        assert_eq!((pts[0].kernel_size, pts[0].embedding_size, pts[0].learning_rate), (Some(3), 50, 0.01));
        assert_eq!((pts[1].kernel_size, pts[1].embedding_size, pts[1].learning_rate), (Some(3), 50, 0.005));
        assert_eq!(pts[4].embedding_size, 100);
        assert_eq!(pts[16].kernel_size, Some(4));
        let one = HyperGrid::single(&base).points(&base);
        assert_eq!(one, vec![base]);
    }

    #[test]
    fn violations_name_misplaced_axes() {
        let mut g = HyperGrid::standard(Variant::Bigru);
        assert!(g.violations().is_empty());
        g.kernel_sizes = vec![3];
        g.learning_rates.clear();
        assert_eq!(g.violations().len(), 2);
    }
}
