//! Hierarchical structural embeddings: dense differentiable pooling
//! levels, a per-node soft read-out, and the sparse top-k pooling
//! variants used by the ablation grid.

use crate::autodiff::{Tape, Var};
use crate::error::{HierError, Result};
use serde::{Deserialize, Serialize};

/// One hierarchy level: assignment, pooled features, pooled adjacency.
pub struct PoolingLevel<'t> {
    pub assignment: Var<'t>, // n_{l-1} × n_l, rows on the simplex
    pub features: Var<'t>,   // n_l × d
    pub adjacency: Var<'t>,  // n_l × n_l
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Strictly decreasing cluster counts, one per level.
    pub cluster_counts: Vec<usize>,
}

impl HierarchyConfig {
    pub fn validate(&self, n_input: usize) -> Result<()> {
        if self.cluster_counts.is_empty() {
            return Err(HierError::Config("hierarchy needs at least one level".into()));
        }
        let mut prev = n_input;
        for &c in &self.cluster_counts {
            if c == 0 || c > prev {
                return Err(HierError::Config(format!(
                    "cluster count {c} invalid after level of size {prev}"
                )));
            }
            prev = c;
        }
        Ok(())
    }

    /// Default schedule for `n` nodes: [⌈n/4⌉, ⌈n/16⌉] capped at [128, 32],
    /// dropping degenerate trailing levels.
    pub fn default_for(n: usize) -> Self {
        let c1 = n.div_ceil(4).min(128).max(1);
        let c2 = n.div_ceil(16).min(32).max(1);
        let mut counts = vec![c1];
        if c2 < c1 {
            counts.push(c2);
        }
        HierarchyConfig { cluster_counts: counts }
    }
}

/// One dense pooling level: S = row-softmax(H·W_s), H' = Sᵀ·H, A' = Sᵀ·A·S.
pub fn diffpool_level<'t>(
    tape: &'t Tape,
    h_prev: Var<'t>,
    a_prev: Var<'t>,
    w_s: Var<'t>,
) -> Result<PoolingLevel<'t>> {
    let (n, d) = h_prev.shape();
    let (an, am) = a_prev.shape();
    let (wd, _c) = w_s.shape();
    if an != n || am != n || wd != d {
        return Err(HierError::Shape {
            expected: format!("H [{n}×{d}], A [{n}×{n}], W_s [{d}×c]"),
            got: format!("A [{an}×{am}], W_s [{wd}×_]"),
        });
    }
    let assignment = h_prev.matmul(w_s).softmax_rows();
    let st = assignment.transpose();
    let features = st.matmul(h_prev);
    let adjacency = st.matmul(a_prev).matmul(assignment);
    let _ = tape;
    Ok(PoolingLevel {
        assignment,
        features,
        adjacency,
    })
}

/// Apply `diffpool_level` once per configured level, threading H and A.
pub fn run_hierarchy<'t>(
    tape: &'t Tape,
    cfg: &HierarchyConfig,
    h0: Var<'t>,
    a0: Var<'t>,
    weights: &[Var<'t>],
) -> Result<Vec<PoolingLevel<'t>>> {
    let (n, _) = h0.shape();
    cfg.validate(n)?;
    assert_eq!(weights.len(), cfg.cluster_counts.len());
    let mut levels = Vec::with_capacity(weights.len());
    let mut h = h0;
    let mut a = a0;
    for &w in weights {
        let level = diffpool_level(tape, h, a, w)?;
        h = level.features;
        a = level.adjacency;
        levels.push(level);
    }
    Ok(levels)
}

/// Soft read-back: z_v = (S^(1)·…·S^(L))[v,:] · H^(L). Maps cluster-level
/// features back to each input node through its composite membership.
pub fn node_structural_embeddings<'t>(
    tape: &'t Tape,
    levels: &[PoolingLevel<'t>],
) -> Var<'t> {
    assert!(!levels.is_empty(), "read-out needs at least one level");
    let mut chain = levels[0].assignment;
    for level in &levels[1..] {
        chain = chain.matmul(level.assignment);
    }
    let _ = tape;
    chain.matmul(levels.last().unwrap().features)
}

/// One node's structural vector from the full read-out matrix.
pub fn node_structural_embedding<'t>(
    readout: Var<'t>,
    node: usize,
) -> Result<Var<'t>> {
    let (n, _) = readout.shape();
    if node >= n {
        return Err(HierError::Index(format!("node {node} ≥ {n}")));
    }
    Ok(readout.rows(&[node]))
}

/// Sparse top-k pooling: score nodes by a learned projection of
/// adjacency-smoothed features, keep the top ⌈keep_ratio·n⌉, gate kept
/// features by tanh(score), restrict A to kept rows/columns.
pub struct SagPoolOutput<'t> {
    pub features: Var<'t>,
    pub adjacency: Var<'t>,
    /// Indices into the input node order, ascending.
    pub kept: Vec<usize>,
}

pub fn sagpool_level<'t>(
    tape: &'t Tape,
    h: Var<'t>,
    a: Var<'t>,
    keep_ratio: f64,
    score_weights: Var<'t>, // d×1
) -> Result<SagPoolOutput<'t>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(HierError::Config(format!("keep_ratio {keep_ratio} out of (0,1]")));
    }
    let (n, _d) = h.shape();
    // smoothed = D^{-1}(A+I)·H, rows renormalized by degree+1
    let a_val = a.value();
    let mut norm = a_val.clone();
    for i in 0..n {
        norm[[i, i]] += 1.0;
    }
    for i in 0..n {
        let row_sum: f64 = norm.row(i).sum();
        if row_sum > 0.0 {
            for j in 0..n {
                norm[[i, j]] /= row_sum;
            }
        }
    }
    let norm_v = tape.constant(norm);
    let smoothed = norm_v.matmul(h);
    let scores = smoothed.matmul(score_weights); // n×1
    let score_vals = scores.value();
    let keep = ((keep_ratio * n as f64).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        score_vals[[j, 0]]
            .partial_cmp(&score_vals[[i, 0]])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    let gate = scores.rows(&kept).tanh();
    let d = h.shape().1;
    let gate_full = {
        // broadcast the k×1 gate over feature columns
        let ones = tape.constant(ndarray::Array2::ones((1, d)));
        gate.matmul(ones)
    };
    let features = h.rows(&kept).mul(gate_full);
    let a_rows = a.rows(&kept);
    let adjacency = a_rows.transpose().rows(&kept).transpose();
    Ok(SagPoolOutput {
        features,
        adjacency,
        kept,
    })
}

/// Two stacked sparse pooling layers sharing the keep ratio; kept indices
/// are composed back into the original node order.
pub fn double_sagpool<'t>(
    tape: &'t Tape,
    h: Var<'t>,
    a: Var<'t>,
    keep_ratio: f64,
    score_weights_1: Var<'t>,
    score_weights_2: Var<'t>,
) -> Result<SagPoolOutput<'t>> {
    let first = sagpool_level(tape, h, a, keep_ratio, score_weights_1)?;
    let second = sagpool_level(tape, first.features, first.adjacency, keep_ratio, score_weights_2)?;
    let kept = second.kept.iter().map(|&i| first.kept[i]).collect();
    Ok(SagPoolOutput {
        features: second.features,
        adjacency: second.adjacency,
        kept,
    })
}

/// Read-out for sparse pooling: kept nodes take their pooled feature row,
/// dropped nodes the zero vector.
pub fn sagpool_readout<'t>(
    tape: &'t Tape,
    out: &SagPoolOutput<'t>,
    n_input: usize,
) -> Var<'t> {
    let (_k, d) = out.features.shape();
    let mut parts: Vec<Var<'t>> = Vec::with_capacity(n_input);
    let mut pos = std::collections::BTreeMap::new();
    for (k, &i) in out.kept.iter().enumerate() {
        pos.insert(i, k);
    }
    for v in 0..n_input {
        match pos.get(&v) {
            Some(&k) => parts.push(out.features.rows(&[k])),
            None => parts.push(tape.constant(ndarray::Array2::zeros((1, d)))),
        }
    }
    if parts.len() == 1 {
        parts[0]
    } else {
        Var::concat_rows(tape, &parts)
    }
}
