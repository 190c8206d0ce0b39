use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::{AutodiffError, Scalar};

/// `softmax(Q K^T / sqrt(d_k)) V` with `Q: n x d_k`, `K: m x d_k`,
/// `V: m x d_v`.
pub fn attention<F: Scalar>(g: &mut Graph<'_, F>, q: Var, k: Var, v: Var) -> Result<Var, AutodiffError> {
    let dk = *g.shape(q).last().ok_or(AutodiffError::NonScalarOutput(0))?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, F::one() / F::of(dk as f64).sqrt());
    let weights = g.softmax_last_dim(scaled);
    g.matmul(weights, v)
}

/// Query, key and value projections of one head, each `L x L/M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadWeights {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

/// Per-head projections plus the `L x L` output projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhaWeights {
    pub heads: Vec<HeadWeights>,
    pub out: ParamId,
}

impl MhaWeights {
    /// Checks that the stored shapes describe `heads` heads over width
    /// `embed`.
    pub fn validate<F: Scalar>(&self, store: &ParamStore<F>, embed: usize) -> Result<(), AutodiffError> {
        let m = self.heads.len();
        if m == 0 || !embed.is_multiple_of(m) {
            return Err(AutodiffError::HeadDivisibility { embed, heads: m });
        }
        let want = [embed, embed / m];
        for h in &self.heads {
            for id in [h.q, h.k, h.v] {
                if store.get(id).shape() != want {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "attention head",
                        lhs: store.get(id).shape().to_vec(),
                        rhs: want.to_vec(),
                    });
                }
            }
        }
        if store.get(self.out).shape() != [embed, embed] {
            return Err(AutodiffError::ShapeMismatch {
                op: "attention output",
                lhs: store.get(self.out).shape().to_vec(),
                rhs: alloc::vec![embed, embed],
            });
        }
        Ok(())
    }
}

/// Self-attention over the rows of `x` (`n x L`): every head attends with
/// its own projections, heads are concatenated and projected by `W_O`.
pub fn multi_head_attention<'p, F: Scalar>(
    g: &mut Graph<'p, F>,
    store: &'p ParamStore<F>,
    x: Var,
    weights: &MhaWeights,
) -> Result<Var, AutodiffError> {
    let embed = *g.shape(x).last().unwrap_or(&0);
    weights.validate(store, embed)?;
    let mut heads = Vec::with_capacity(weights.heads.len());
    for h in &weights.heads {
        let (wq, wk, wv) = (g.param(store, h.q), g.param(store, h.k), g.param(store, h.v));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        heads.push(attention(g, q, k, v)?);
    }
    let cat = g.concat_last_dim(&heads)?;
    let wo = g.param(store, weights.out);
    g.matmul(cat, wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use alloc::vec;

    #[test]
    fn single_key_returns_its_value() {
        let q = Tensor::<f64>::from_f64(3, 2, &[1.0, 2.0, -1.0, 0.0, 5.0, 5.0]).unwrap();
        let k = Tensor::<f64>::from_f64(1, 2, &[0.3, 0.4]).unwrap();
        let v = Tensor::<f64>::from_f64(1, 3, &[7.0, 8.0, 9.0]).unwrap();
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.input(&q), g.input(&k), g.input(&v));
        let out = attention(&mut g, qv, kv, vv).unwrap();
        assert_eq!(g.shape(out), &[3, 3]);
        for row in g.value(out).chunks(3) {
            for (a, b) in row.iter().zip([7.0, 8.0, 9.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_count_must_divide_width() {
        let mut s = ParamStore::<f64>::new();
        let mut heads = vec![];
        for _ in 0..3 {
            heads.push(HeadWeights {
                q: s.add("q", Tensor::zeros(&[4, 1])),
                k: s.add("k", Tensor::zeros(&[4, 1])),
                v: s.add("v", Tensor::zeros(&[4, 1])),
            });
        }
        let w = MhaWeights { heads, out: s.add("o", Tensor::zeros(&[4, 4])) };
        assert_eq!(w.validate(&s, 4), Err(AutodiffError::HeadDivisibility { embed: 4, heads: 3 }));
    }
}
