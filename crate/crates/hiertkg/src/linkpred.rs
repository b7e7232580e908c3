//! Link scoring, uniform negative sampling, and the training loss.

use crate::autodiff::{Tape, Var};
use crate::data::TemporalEvent;
use crate::error::{HierError, Result};
use rand::Rng;

pub const PROB_EPS: f64 = 1e-7;

/// Two-layer perceptron scorer over [z_s ‖ z_o ‖ relation embedding]:
/// hidden layer rectified, scalar pre-sigmoid logit out.
pub struct ScorerVars<'t> {
    pub rel_emb: Var<'t>, // num_relations × relation_dim
    pub w1: Var<'t>,      // (2·d_f + relation_dim) × hidden
    pub b1: Var<'t>,      // 1 × hidden
    pub w2: Var<'t>,      // hidden × 1
    pub b2: Var<'t>,      // 1 × 1
}

/// Score a batch of candidate links. `z_s`/`z_o` are n×d_f fused
/// embeddings, `relations` the per-row relation ids. Returns an n×1
/// matrix of probabilities.
pub fn score<'t>(
    tape: &'t Tape,
    z_s: Var<'t>,
    z_o: Var<'t>,
    relations: &[usize],
    p: &ScorerVars<'t>,
) -> Result<Var<'t>> {
    let n = z_s.shape().0;
    assert_eq!(relations.len(), n);
    let (num_rel, _) = p.rel_emb.shape();
    for &r in relations {
        if r >= num_rel {
            return Err(HierError::Index(format!("relation {r} ≥ {num_rel}")));
        }
    }
    let rels = p.rel_emb.rows(relations);
    let x = Var::concat_cols(tape, &[z_s, z_o, rels]);
    let hidden = x.matmul(p.w1).add(p.b1.broadcast_rows(n)).relu();
    let logit = hidden.matmul(p.w2).add(p.b2.broadcast_rows(n));
    Ok(logit.sigmoid())
}

/// For each positive (s,r,o,t), emit `k` corrupted copies (s,r,o′,t) with
/// o′ uniform over `entity_pool` excluding o. Seed the rng upstream.
pub fn sample_negatives(
    batch: &[TemporalEvent],
    entity_pool: &[usize],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TemporalEvent>> {
    if entity_pool.len() < 2 {
        return Err(HierError::Config(format!(
            "need ≥ 2 candidate entities, have {}",
            entity_pool.len()
        )));
    }
    assert!(k >= 1);
    let mut out = Vec::with_capacity(batch.len() * k);
    for ev in batch {
        for _ in 0..k {
            let corrupted = loop {
                let cand = entity_pool[rng.gen_range(0..entity_pool.len())];
                if cand != ev.destination {
                    break cand;
                }
            };
            out.push(TemporalEvent {
                destination: corrupted,
                ..*ev
            });
        }
    }
    Ok(out)
}

/// Binary cross-entropy: mean(−log p⁺) + mean(−log(1−p⁻)), probabilities
/// clamped to [ε, 1−ε].
pub fn bce_loss<'t>(
    tape: &'t Tape,
    pos_probs: Var<'t>,
    neg_probs: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let (np, _) = pos_probs.shape();
    if np == 0 {
        return Err(HierError::Config("bce_loss needs at least one positive".into()));
    }
    let pos_term = pos_probs
        .clamp(PROB_EPS, 1.0 - PROB_EPS)
        .ln()
        .mean_all()
        .scale(-1.0);
    let _ = tape;
    match neg_probs {
        None => Ok(pos_term),
        Some(neg) => {
            let neg_term = neg
                .scale(-1.0)
                .add_scalar(1.0)
                .clamp(PROB_EPS, 1.0 - PROB_EPS)
                .ln()
                .mean_all()
                .scale(-1.0);
            Ok(pos_term.add(neg_term))
        }
    }
}
