//! Multi-head scaled dot-product attention with residual output, shared by
//! token self-attention and voxel-to-text cross-attention.

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::SparseGrid;

use super::encode::TokenSet;

/// Projection weights for one attention block. Queries have width `c`,
/// keys/values come from a `d`-wide source:
/// `wq: c x c`, `wk: d x c`, `wv: d x c`, `wo: c x c`.
#[derive(Clone, Debug)]
pub struct AttnWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub heads: usize,
}

/// Tape-bound attention weights.
#[derive(Clone, Copy, Debug)]
pub struct AttnNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub heads: usize,
}

impl AttnNodes {
    pub fn from_weights(tape: &mut Tape, w: &AttnWeights) -> Self {
        Self {
            wq: tape.constant(w.wq.clone()),
            wk: tape.constant(w.wk.clone()),
            wv: tape.constant(w.wv.clone()),
            wo: tape.constant(w.wo.clone()),
            heads: w.heads,
        }
    }

    /// Binds `{prefix}.wq / .wk / .wv / .wo` from the store.
    pub fn from_store(
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            wq: tape.param(store, &format!("{prefix}.wq"))?,
            wk: tape.param(store, &format!("{prefix}.wk"))?,
            wv: tape.param(store, &format!("{prefix}.wv"))?,
            wo: tape.param(store, &format!("{prefix}.wo"))?,
            heads,
        })
    }
}

/// `x (n x c)` attends over `kv (m x d)`; returns `x + O(attention)`.
/// FLOP accounting for profiling: two `n*m*head_dim` products per head,
/// i.e. `2*n*m*c` total score/value work.
pub fn attention_t(tape: &mut Tape, x: NodeId, kv: NodeId, w: &AttnNodes) -> Result<NodeId> {
    let (_, c) = tape.shape(x);
    if c % w.heads != 0 {
        return Err(Error::ConfigError(format!(
            "channel width {c} not divisible by {} heads",
            w.heads
        )));
    }
    let head_dim = c / w.heads;
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(kv, w.wk)?;
    let v = tape.matmul(kv, w.wv)?;

    let mut heads_out: Option<NodeId> = None;
    for h in 0..w.heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let oh = tape.matmul(attn, vh)?;
        heads_out = Some(match heads_out {
            None => oh,
            Some(acc) => tape.concat_cols(acc, oh)?,
        });
    }
    let concat = heads_out.expect("at least one head");
    let projected = tape.matmul(concat, w.wo)?;
    tape.add(x, projected)
}

/// Token self-attention: queries, keys and values are the tokens.
pub fn self_attention(tokens: &TokenSet, w: &AttnWeights) -> Result<TokenSet> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.feats.clone());
    let nodes = AttnNodes::from_weights(&mut tape, w);
    let out = attention_t(&mut tape, x, x, &nodes)?;
    Ok(TokenSet { feats: tape.value(out).clone(), token_ids: tokens.token_ids.clone() })
}

/// Voxel features attend over text tokens; coordinates are untouched.
pub fn cross_attention(
    grid: &SparseGrid,
    tokens: &TokenSet,
    w: &AttnWeights,
) -> Result<SparseGrid> {
    let mut tape = Tape::new();
    let x = tape.constant(grid.feats().clone());
    let kv = tape.constant(tokens.feats.clone());
    let nodes = AttnNodes::from_weights(&mut tape, w);
    let out = attention_t(&mut tape, x, kv, &nodes)?;
    grid.with_feats(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{level_voxel_size, Coord3};

    fn eye(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    fn weights(c: usize, d: usize, heads: usize) -> AttnWeights {
        AttnWeights {
            wq: eye(c),
            wk: Matrix::filled(d, c, 0.1),
            wv: Matrix::filled(d, c, 0.2),
            wo: eye(c),
            heads,
        }
    }

    #[test]
    fn zero_projections_are_identity() {
        let tokens = TokenSet {
            feats: Matrix::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap(),
            token_ids: vec![1, 2, 3],
        };
        let w = AttnWeights {
            wq: Matrix::zeros(4, 4),
            wk: Matrix::zeros(4, 4),
            wv: Matrix::zeros(4, 4),
            wo: Matrix::zeros(4, 4),
            heads: 2,
        };
        let out = self_attention(&tokens, &w).unwrap();
        assert_eq!(out.feats, tokens.feats);
    }

    #[test]
    fn single_token_self_attention() {
        // softmax over one key is 1, so out = x + O(V(x))
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let w = AttnWeights {
            wq: eye(2),
            wk: eye(2),
            wv: Matrix::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap(),
            wo: eye(2),
            heads: 1,
        };
        let tokens = TokenSet { feats: x.clone(), token_ids: vec![5] };
        let out = self_attention(&tokens, &w).unwrap();
        assert_eq!(out.feats.row(0), &[1.5, 3.0]);
    }

    #[test]
    fn two_token_hand_computed_mixture() {
        // 1 head, d=c=1: scores s_ij = q_i*k_j, attn = softmax, out = x + A.v
        let x = Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let w = AttnWeights {
            wq: Matrix::scalar(2.0),
            wk: Matrix::scalar(1.0),
            wv: Matrix::scalar(3.0),
            wo: Matrix::scalar(1.0),
            heads: 1,
        };
        let tokens = TokenSet { feats: x, token_ids: vec![0, 0] };
        let out = self_attention(&tokens, &w).unwrap();
        // row 0: q=2, keys (1,-1), scores (2,-2), softmax = (e^4,1)/(e^4+1)
        let a0 = (4.0f64).exp() / ((4.0f64).exp() + 1.0);
        let expect0 = 1.0 + (a0 * 3.0 + (1.0 - a0) * -3.0);
        assert!((out.feats.get(0, 0) - expect0).abs() < 1e-12);
        // row 1: q=-2, scores (-2,2), softmax mirrored
        let a1 = 1.0 - a0;
        let expect1 = -1.0 + (a1 * 3.0 + (1.0 - a1) * -3.0);
        assert!((out.feats.get(1, 0) - expect1).abs() < 1e-12);
    }

    #[test]
    fn cross_attention_single_token_broadcasts_value() {
        let coords = vec![Coord3::new(0, 0, 0), Coord3::new(1, 0, 0), Coord3::new(2, 0, 0)];
        let grid = SparseGrid::new(
            coords,
            Matrix::zeros(3, 4),
            1,
            level_voxel_size(1),
        )
        .unwrap();
        let tokens = TokenSet { feats: Matrix::filled(1, 2, 1.0), token_ids: vec![7] };
        let mut w = weights(4, 2, 2);
        w.wq = Matrix::zeros(4, 4);
        let out = cross_attention(&grid, &tokens, &w).unwrap();
        assert_eq!(out.coords(), grid.coords());
        // every voxel sees the same single-token value projection
        let first = out.feats().row(0).to_vec();
        for r in 1..3 {
            assert_eq!(out.feats().row(r), &first[..]);
        }
    }

    #[test]
    fn head_mismatch_rejected() {
        let tokens = TokenSet { feats: Matrix::zeros(2, 6), token_ids: vec![0, 0] };
        let w = weights(6, 6, 4);
        assert!(matches!(
            self_attention(&tokens, &w),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        // checked through the tape: softmax rows of the score node sum to 1
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(3, 2, vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.7]).unwrap());
        let s = tape.softmax_rows(x);
        for r in 0..3 {
            let sum: f64 = tape.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
