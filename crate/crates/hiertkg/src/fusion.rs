//! Feature fusion: project temporal and structural embeddings to a shared
//! space and combine them with multi-head scaled dot-product attention.
//!
//! The fused query comes from the temporal projection; keys and values
//! come from the structural slots. With the default single structural slot
//! the per-head softmax is over a singleton and collapses to weight 1; the
//! code path stays general over ≥1 slots.

use crate::autodiff::{Tape, Var};
use crate::error::{HierError, Result};

pub struct FusionVars<'t> {
    pub w_tgn: Var<'t>,      // d_t × d_f
    pub w_pool: Var<'t>,     // d_p × d_f
    pub wq: Vec<Var<'t>>,    // d_f × d_k per head
    pub wk: Vec<Var<'t>>,
    pub wv: Vec<Var<'t>>,
    pub out: Var<'t>,        // h·d_k × d_f
}

pub fn check_heads(d_f: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d_f % heads != 0 {
        return Err(HierError::Config(format!(
            "head count {heads} must divide fused dim {d_f}"
        )));
    }
    Ok(d_f / heads)
}

/// Linear projections into the shared space; no bias, no nonlinearity.
/// Inputs are row matrices (n × d_t, n × d_p).
pub fn project<'t>(
    z_tgn: Var<'t>,
    z_pool: Var<'t>,
    w_tgn: Var<'t>,
    w_pool: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (_, dt) = z_tgn.shape();
    let (wt_in, _) = w_tgn.shape();
    let (_, dp) = z_pool.shape();
    let (wp_in, _) = w_pool.shape();
    if dt != wt_in || dp != wp_in {
        return Err(HierError::Shape {
            expected: format!("z_tgn cols {wt_in}, z_pool cols {wp_in}"),
            got: format!("{dt}, {dp}"),
        });
    }
    Ok((z_tgn.matmul(w_tgn), z_pool.matmul(w_pool)))
}

/// Multi-head attention fusion over structural slots, vectorized over the
/// n rows of the inputs. `slots` holds one or more n×d_f structural
/// matrices; queries come from the temporal projection row-for-row.
pub fn fuse<'t>(
    tape: &'t Tape,
    z_tgn_proj: Var<'t>,
    slots: &[Var<'t>],
    p: &FusionVars<'t>,
) -> Var<'t> {
    assert!(!slots.is_empty());
    let heads = p.wq.len();
    let d_k = p.wq[0].shape().1;
    let n = z_tgn_proj.shape().0;
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = z_tgn_proj.matmul(p.wq[h]); // n × d_k
        // per-slot keys and values
        let ks: Vec<Var<'t>> = slots.iter().map(|s| s.matmul(p.wk[h])).collect();
        let vs: Vec<Var<'t>> = slots.iter().map(|s| s.matmul(p.wv[h])).collect();
        // scores: n × S, score[i][s] = q_i · k_i^(s) / sqrt(d_k)
        let score_cols: Vec<Var<'t>> = ks
            .iter()
            .map(|k| {
                // rowwise dot: sum over columns of q ⊙ k
                let prod = q.mul(*k);
                let ones = tape.constant(ndarray::Array2::ones((d_k, 1)));
                prod.matmul(ones).scale(1.0 / (d_k as f64).sqrt())
            })
            .collect();
        let scores = Var::concat_cols(tape, &score_cols); // n × S
        let alpha = scores.softmax_rows();
        // context: sum_s alpha[:, s] ⊙ v^(s)
        let mut ctx: Option<Var<'t>> = None;
        for (s, v) in vs.iter().enumerate() {
            let a_col = alpha.slice_cols(s, s + 1); // n × 1
            let ones = tape.constant(ndarray::Array2::ones((1, d_k)));
            let a_full = a_col.matmul(ones); // n × d_k broadcast
            let term = a_full.mul(*v);
            ctx = Some(match ctx {
                None => term,
                Some(c) => c.add(term),
            });
        }
        head_outs.push(ctx.unwrap());
    }
    let _ = n;
    Var::concat_cols(tape, &head_outs).matmul(p.out)
}

/// Ablation baseline: elementwise sum of the two projections.
pub fn no_attention_fuse<'t>(z_tgn_proj: Var<'t>, z_pool_proj: Var<'t>) -> Var<'t> {
    z_tgn_proj.add(z_pool_proj)
}
