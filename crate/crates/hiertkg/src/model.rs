//! End-to-end training and evaluation: the epoch loop over chronological
//! batches, per-batch hierarchy rebuilds, fusion, loss, adaptive-moment
//! optimization, the ablation grid, checkpointing, and report emission.

use crate::autodiff::{Tape, Var};
use crate::data::{EventDataset, Snapshot, TemporalEvent};
use crate::error::{HierError, Result};
use crate::fusion::{self, FusionVars};
use crate::linkpred::{self, ScorerVars};
use crate::metrics::{self, MetricReport, ScoredQuery};
use crate::pooling::{self, HierarchyConfig};
use crate::tgn::{self, AttentionVars, MemView, NeighborWindow, NodeMemory};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingVariant {
    Diffpool,
    Sagpool,
    DoubleSagpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Attention,
    NoAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub memory_dim: usize,
    pub time_dim: usize,
    pub embed_dim: usize,
    pub fused_dim: usize,
    pub relation_dim: usize,
    pub scorer_hidden: usize,
    pub heads: usize,
    pub cluster_counts: Vec<usize>,
    pub pooling: PoolingVariant,
    pub fusion: FusionVariant,
    pub sag_keep_ratio: f64,
    pub negatives: usize,
    pub neighbor_window: usize,
    pub max_subgraph_nodes: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub patience: usize,
    pub seed: u64,
    pub dataset_path: Option<String>,
    pub dataset_kind: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 200,
            memory_dim: 100,
            time_dim: 100,
            embed_dim: 128,
            fused_dim: 128,
            relation_dim: 32,
            scorer_hidden: 64,
            heads: 2,
            cluster_counts: vec![128, 32],
            pooling: PoolingVariant::Diffpool,
            fusion: FusionVariant::Attention,
            sag_keep_ratio: 0.5,
            negatives: 1,
            neighbor_window: 10,
            max_subgraph_nodes: 300,
            train_frac: 0.70,
            val_frac: 0.15,
            patience: 5,
            seed: 7,
            dataset_path: None,
            dataset_kind: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("sag_keep_ratio", self.sag_keep_ratio),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HierError::Config(format!("{k} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("memory_dim", self.memory_dim),
            ("time_dim", self.time_dim),
            ("embed_dim", self.embed_dim),
            ("fused_dim", self.fused_dim),
            ("relation_dim", self.relation_dim),
            ("scorer_hidden", self.scorer_hidden),
            ("heads", self.heads),
            ("negatives", self.negatives),
            ("neighbor_window", self.neighbor_window),
            ("max_subgraph_nodes", self.max_subgraph_nodes),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(HierError::Config(format!("{k} must be positive")));
            }
        }
        if self.sag_keep_ratio > 1.0 {
            return Err(HierError::Config("sag_keep_ratio must be ≤ 1".into()));
        }
        fusion::check_heads(self.fused_dim, self.heads)?;
        if self.embed_dim % self.heads != 0 {
            return Err(HierError::Config(format!(
                "heads {} must divide embed_dim {}",
                self.heads, self.embed_dim
            )));
        }
        if self.cluster_counts.is_empty() {
            return Err(HierError::Config("cluster_counts must be non-empty".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HierError::parse(format!("config line {}", lineno + 1), "expected key = value")
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                HierError::parse(
                    format!("config line {}", lineno + 1),
                    format!("bad {what} value {value:?}"),
                )
            };
            match key {
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad(key))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad(key))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
                "memory_dim" => cfg.memory_dim = value.parse().map_err(|_| bad(key))?,
                "time_dim" => cfg.time_dim = value.parse().map_err(|_| bad(key))?,
                "embed_dim" => cfg.embed_dim = value.parse().map_err(|_| bad(key))?,
                "fused_dim" => cfg.fused_dim = value.parse().map_err(|_| bad(key))?,
                "relation_dim" => cfg.relation_dim = value.parse().map_err(|_| bad(key))?,
                "scorer_hidden" => cfg.scorer_hidden = value.parse().map_err(|_| bad(key))?,
                "heads" => cfg.heads = value.parse().map_err(|_| bad(key))?,
                "cluster_counts" => {
                    cfg.cluster_counts = value
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|_| bad(key)))
                        .collect::<Result<Vec<usize>>>()?;
                }
                "pooling" => {
                    cfg.pooling = match value {
                        "diffpool" => PoolingVariant::Diffpool,
                        "sagpool" => PoolingVariant::Sagpool,
                        "double_sagpool" => PoolingVariant::DoubleSagpool,
                        _ => return Err(bad(key)),
                    }
                }
                "fusion" => {
                    cfg.fusion = match value {
                        "attention" => FusionVariant::Attention,
                        "no_attention" => FusionVariant::NoAttention,
                        _ => return Err(bad(key)),
                    }
                }
                "sag_keep_ratio" => cfg.sag_keep_ratio = value.parse().map_err(|_| bad(key))?,
                "negatives" => cfg.negatives = value.parse().map_err(|_| bad(key))?,
                "neighbor_window" => cfg.neighbor_window = value.parse().map_err(|_| bad(key))?,
                "max_subgraph_nodes" => {
                    cfg.max_subgraph_nodes = value.parse().map_err(|_| bad(key))?
                }
                "train_frac" => cfg.train_frac = value.parse().map_err(|_| bad(key))?,
                "val_frac" => cfg.val_frac = value.parse().map_err(|_| bad(key))?,
                "patience" => cfg.patience = value.parse().map_err(|_| bad(key))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "dataset_path" => cfg.dataset_path = Some(value.to_string()),
                "dataset_kind" => cfg.dataset_kind = Some(value.to_string()),
                other => {
                    return Err(HierError::Config(format!("unknown config key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).unwrap().as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// All learnable matrices, keyed by stable names. Ordering is the
/// BTreeMap key order, which keeps gradient application deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    /// Uniform(±1/√fan_in) initialization for every matrix.
    pub fn init(cfg: &TrainConfig, num_relations: usize, rng: &mut ChaCha8Rng) -> ParamStore {
        let m = cfg.memory_dim;
        let tau = cfg.time_dim;
        let rho = cfg.relation_dim;
        let d_e = cfg.embed_dim;
        let d_f = cfg.fused_dim;
        let gru_in = 2 * m + rho + tau + m; // [payload ‖ memory]
        let mut params = BTreeMap::new();
        let mut mat = |name: &str, r: usize, c: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (r as f64).sqrt();
            params.insert(
                name.to_string(),
                Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound)),
            );
        };
        mat("rel_emb", num_relations, rho, rng);
        mat("time_w", 1, tau, rng);
        mat("time_b", 1, tau, rng);
        mat("gru_wz", gru_in, m, rng);
        mat("gru_wr", gru_in, m, rng);
        mat("gru_wh", gru_in, m, rng);
        let d_head = d_e / cfg.heads;
        for h in 0..cfg.heads {
            mat(&format!("tattn_wq_{h}"), m + tau, d_head, rng);
            mat(&format!("tattn_wk_{h}"), m + rho + tau, d_head, rng);
            mat(&format!("tattn_wv_{h}"), m + rho + tau, d_head, rng);
        }
        mat("tattn_out", cfg.heads * d_head, d_e, rng);
        for (l, &c) in cfg.cluster_counts.iter().enumerate() {
            mat(&format!("pool_ws_{l}"), m, c, rng);
        }
        mat("sag_score_0", m, 1, rng);
        mat("sag_score_1", m, 1, rng);
        mat("fuse_w_tgn", d_e, d_f, rng);
        mat("fuse_w_pool", m, d_f, rng);
        let d_k = d_f / cfg.heads;
        for h in 0..cfg.heads {
            mat(&format!("fuse_wq_{h}"), d_f, d_k, rng);
            mat(&format!("fuse_wk_{h}"), d_f, d_k, rng);
            mat(&format!("fuse_wv_{h}"), d_f, d_k, rng);
        }
        mat("fuse_out", cfg.heads * d_k, d_f, rng);
        mat("score_w1", 2 * d_f + rho, cfg.scorer_hidden, rng);
        mat("score_b1", 1, cfg.scorer_hidden, rng);
        mat("score_w2", cfg.scorer_hidden, 1, rng);
        mat("score_b2", 1, 1, rng);
        ParamStore { params }
    }
}

/// Adaptive-moment optimizer state (β₁=0.9, β₂=0.999, ε=1e-8).
pub struct Adam {
    pub lr: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let t = self.step as i32;
        for (name, g) in grads {
            let p = store.params.get_mut(name).expect("unknown parameter");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            *m = &*m * B1 + &(g * (1.0 - B1));
            *v = &*v * B2 + &(g.mapv(|x| x * x) * (1.0 - B2));
            let m_hat = &*m / (1.0 - B1.powi(t));
            let v_hat = &*v / (1.0 - B2.powi(t));
            *p = &*p - &(m_hat / (v_hat.mapv(f64::sqrt) + EPS) * self.lr);
        }
    }
}

/// Parameters lifted onto a tape as leaves, remembering each leaf's node
/// id so gradients can be read back by name after `backward`.
struct Lifted<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Lifted<'t> {
    fn new(tape: &'t Tape, store: &ParamStore) -> Self {
        let vars = store
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Lifted { vars }
    }

    fn get(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not lifted"))
    }

    fn grads(&self, all: &[Option<Array2<f64>>]) -> BTreeMap<String, Array2<f64>> {
        self.vars
            .iter()
            .filter_map(|(k, v)| all[v.id].clone().map(|g| (k.clone(), g)))
            .collect()
    }

    fn attention(&self, heads: usize) -> AttentionVars<'t> {
        AttentionVars {
            wq: (0..heads).map(|h| self.get(&format!("tattn_wq_{h}"))).collect(),
            wk: (0..heads).map(|h| self.get(&format!("tattn_wk_{h}"))).collect(),
            wv: (0..heads).map(|h| self.get(&format!("tattn_wv_{h}"))).collect(),
            out: self.get("tattn_out"),
        }
    }

    fn fusion(&self, heads: usize) -> FusionVars<'t> {
        FusionVars {
            w_tgn: self.get("fuse_w_tgn"),
            w_pool: self.get("fuse_w_pool"),
            wq: (0..heads).map(|h| self.get(&format!("fuse_wq_{h}"))).collect(),
            wk: (0..heads).map(|h| self.get(&format!("fuse_wk_{h}"))).collect(),
            wv: (0..heads).map(|h| self.get(&format!("fuse_wv_{h}"))).collect(),
            out: self.get("fuse_out"),
        }
    }

    fn scorer(&self) -> ScorerVars<'t> {
        ScorerVars {
            rel_emb: self.get("rel_emb"),
            w1: self.get("score_w1"),
            b1: self.get("score_b1"),
            w2: self.get("score_w2"),
            b2: self.get("score_b2"),
        }
    }
}

/// Mutable streaming state threaded through batches.
pub struct StreamState {
    pub memory: NodeMemory,
    pub windows: NeighborWindow,
    /// Entities seen in any processed event, for causal negative pools.
    pub active: BTreeSet<usize>,
    /// Cumulative undirected interaction graph over processed events;
    /// the pooling hierarchy is built on (a restriction of) this.
    pub snapshot: Snapshot,
}

impl StreamState {
    pub fn fresh(num_entities: usize, cfg: &TrainConfig) -> Self {
        StreamState {
            memory: NodeMemory::zeros(num_entities, cfg.memory_dim),
            windows: NeighborWindow::new(num_entities, cfg.neighbor_window),
            active: BTreeSet::new(),
            snapshot: Snapshot::default(),
        }
    }
}

/// Outcome of one batch forward pass.
struct BatchForward<'t> {
    loss: Var<'t>,
    pos_probs: Var<'t>,
    neg_probs: Var<'t>,
    /// Memory rows touched by this batch, to commit after the step.
    updated_nodes: Vec<usize>,
    updated_rows: Var<'t>,
}

/// Effective cluster schedule for a subgraph of `n` nodes: configured
/// counts clipped so each level is no larger than its input.
fn effective_counts(cfg: &TrainConfig, n: usize) -> Vec<usize> {
    let mut prev = n;
    let mut out = Vec::new();
    for &c in &cfg.cluster_counts {
        let c = c.min(prev).max(1);
        out.push(c);
        prev = c;
    }
    out
}

/// Deterministic pooling subgraph: required nodes (batch endpoints and
/// negative candidates) plus lowest-id one-hop snapshot neighbors, capped.
fn subgraph_nodes(
    required: &BTreeSet<usize>,
    snapshot: &crate::data::Snapshot,
    cap: usize,
) -> Vec<usize> {
    let mut nodes: BTreeSet<usize> = required.clone();
    for &(u, v) in snapshot.edges.keys() {
        if nodes.len() >= cap.max(required.len()) {
            break;
        }
        if required.contains(&u) && !nodes.contains(&v) {
            nodes.insert(v);
        } else if required.contains(&v) && !nodes.contains(&u) {
            nodes.insert(u);
        }
    }
    nodes.into_iter().collect()
}

/// Dense symmetric adjacency of the snapshot restricted to `nodes`.
fn restricted_adjacency(nodes: &[usize], snapshot: &crate::data::Snapshot) -> Array2<f64> {
    let pos: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut a = Array2::zeros((nodes.len(), nodes.len()));
    for (&(u, v), &w) in &snapshot.edges {
        if let (Some(&i), Some(&j)) = (pos.get(&u), pos.get(&v)) {
            a[[i, j]] += w;
            if i != j {
                a[[j, i]] += w;
            }
        }
    }
    a
}

/// One forward pass over a batch: message/aggregate/memory update,
/// temporal attention embeddings, causal-snapshot hierarchy, read-out,
/// fusion, scoring of positives and the given negatives, and the loss.
#[allow(clippy::too_many_arguments)]
fn forward_batch<'t>(
    tape: &'t Tape,
    cfg: &TrainConfig,
    lifted: &Lifted<'t>,
    state: &StreamState,
    batch: &[TemporalEvent],
    negatives: &[TemporalEvent],
    update_memory_first: bool,
) -> Result<BatchForward<'t>> {
    let mem_base = tape.constant(state.memory.state.clone());
    let mut mem = MemView::new(mem_base);
    let (updated_nodes, updated_rows) = if update_memory_first {
        let (metas, payload, _clamped) = tgn::compute_messages(
            tape,
            batch,
            mem_base,
            &state.memory.last_update,
            lifted.get("rel_emb"),
            lifted.get("time_w"),
            lifted.get("time_b"),
        );
        let aggregated = tgn::aggregate_last(&metas);
        let (nodes, rows) = tgn::update_memory(
            tape,
            mem_base,
            &aggregated,
            payload,
            lifted.get("gru_wz"),
            lifted.get("gru_wr"),
            lifted.get("gru_wh"),
        );
        mem.apply_update(&nodes, rows);
        (nodes, rows)
    } else {
        (Vec::new(), tape.constant(Array2::zeros((0, cfg.memory_dim))))
    };

    // union of all nodes the scorer will touch, in ascending order
    let mut required: BTreeSet<usize> = BTreeSet::new();
    for ev in batch.iter().chain(negatives) {
        required.insert(ev.source);
        required.insert(ev.destination);
    }
    let now = batch.iter().map(|e| e.timestamp).fold(f64::MIN, f64::max);
    // the causal interaction graph: everything processed so far, plus the
    // current batch when memory is updated first (training order)
    let snapshot = if update_memory_first {
        let mut s = state.snapshot.clone();
        for ev in batch {
            let key = (
                ev.source.min(ev.destination),
                ev.source.max(ev.destination),
            );
            *s.edges.entry(key).or_insert(0.0) += 1.0;
            s.active_nodes.insert(ev.source);
            s.active_nodes.insert(ev.destination);
        }
        s
    } else {
        state.snapshot.clone()
    };
    let nodes = subgraph_nodes(&required, &snapshot, cfg.max_subgraph_nodes);
    let pos_of: BTreeMap<usize, usize> =
        nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    // temporal embeddings for every subgraph node
    let attn = lifted.attention(cfg.heads);
    let z_tgn = tgn::temporal_embed(
        tape,
        &nodes,
        &mem,
        &state.windows,
        now,
        lifted.get("rel_emb"),
        lifted.get("time_w"),
        lifted.get("time_b"),
        &attn,
    );

    // hierarchy over the causal snapshot, features = memory rows
    let h0 = mem.gather(tape, &nodes);
    let a0 = tape.constant(restricted_adjacency(&nodes, &snapshot));
    let readout = match cfg.pooling {
        PoolingVariant::Diffpool => {
            let counts = effective_counts(cfg, nodes.len());
            let hcfg = HierarchyConfig {
                cluster_counts: counts.clone(),
            };
            let weights: Vec<Var<'t>> = (0..counts.len())
                .map(|l| {
                    let full = lifted.get(&format!("pool_ws_{l}"));
                    full.slice_cols(0, counts[l])
                })
                .collect();
            let levels = pooling::run_hierarchy(tape, &hcfg, h0, a0, &weights)?;
            pooling::node_structural_embeddings(tape, &levels)
        }
        PoolingVariant::Sagpool => {
            let out = pooling::sagpool_level(
                tape,
                h0,
                a0,
                cfg.sag_keep_ratio,
                lifted.get("sag_score_0"),
            )?;
            pooling::sagpool_readout(tape, &out, nodes.len())
        }
        PoolingVariant::DoubleSagpool => {
            let out = pooling::double_sagpool(
                tape,
                h0,
                a0,
                cfg.sag_keep_ratio,
                lifted.get("sag_score_0"),
                lifted.get("sag_score_1"),
            )?;
            pooling::sagpool_readout(tape, &out, nodes.len())
        }
    };

    // fuse the two embedding families in the shared space
    let fvars = lifted.fusion(cfg.heads);
    let (zt_proj, zp_proj) = fusion::project(z_tgn, readout, fvars.w_tgn, fvars.w_pool)?;
    // attention fusion: the temporal projection queries over both the
    // temporal and structural projections as key/value slots, so the
    // output is a learned convex mix of the two families per head. A
    // structural-only slot set would make the softmax a constant and
    // sever the temporal path from the output entirely.
    let fused = match cfg.fusion {
        FusionVariant::Attention => fusion::fuse(tape, zt_proj, &[zt_proj, zp_proj], &fvars),
        FusionVariant::NoAttention => fusion::no_attention_fuse(zt_proj, zp_proj),
    };

    let row_for = |ev: &TemporalEvent| -> (usize, usize) {
        (pos_of[&ev.source], pos_of[&ev.destination])
    };
    let scorer = lifted.scorer();
    let score_set = |events: &[TemporalEvent]| -> Result<Var<'t>> {
        let (src_rows, dst_rows): (Vec<usize>, Vec<usize>) =
            events.iter().map(|e| row_for(e)).unzip();
        let rels: Vec<usize> = events.iter().map(|e| e.relation).collect();
        let z_s = fused.rows(&src_rows);
        let z_o = fused.rows(&dst_rows);
        linkpred::score(tape, z_s, z_o, &rels, &scorer)
    };
    let pos_probs = score_set(batch)?;
    let neg_probs = if negatives.is_empty() {
        tape.constant(Array2::zeros((0, 1)))
    } else {
        score_set(negatives)?
    };
    let loss = linkpred::bce_loss(
        tape,
        pos_probs,
        if negatives.is_empty() {
            None
        } else {
            Some(neg_probs)
        },
    )?;
    Ok(BatchForward {
        loss,
        pos_probs,
        neg_probs,
        updated_nodes,
        updated_rows,
    })
}

/// Commit a processed batch into streaming state: write back updated
/// memory rows and record events into neighbor windows and the active set.
fn commit_batch(
    state: &mut StreamState,
    batch: &[TemporalEvent],
    updated_nodes: &[usize],
    updated_values: &Array2<f64>,
) {
    let mut last_time: BTreeMap<usize, f64> = BTreeMap::new();
    for ev in batch {
        for n in [ev.source, ev.destination] {
            let e = last_time.entry(n).or_insert(ev.timestamp);
            *e = e.max(ev.timestamp);
        }
    }
    for (k, &n) in updated_nodes.iter().enumerate() {
        state
            .memory
            .state
            .row_mut(n)
            .assign(&updated_values.row(k));
        state.memory.last_update[n] = last_time[&n];
    }
    for ev in batch {
        state
            .windows
            .record_event(ev.source, ev.relation, ev.destination, ev.timestamp);
        state.active.insert(ev.source);
        state.active.insert(ev.destination);
        let key = (
            ev.source.min(ev.destination),
            ev.source.max(ev.destination),
        );
        *state.snapshot.edges.entry(key).or_insert(0.0) += 1.0;
        state.snapshot.active_nodes.insert(ev.source);
        state.snapshot.active_nodes.insert(ev.destination);
    }
}

/// Memory-only replay of one batch: messages, aggregation, gated update,
/// commit. Skips embeddings, pooling, and scoring entirely.
fn advance_stream(
    cfg: &TrainConfig,
    store: &ParamStore,
    state: &mut StreamState,
    batch: &[TemporalEvent],
) {
    let _ = cfg;
    let tape = Tape::new();
    let lifted = Lifted::new(&tape, store);
    let mem_base = tape.constant(state.memory.state.clone());
    let (metas, payload, _clamped) = tgn::compute_messages(
        &tape,
        batch,
        mem_base,
        &state.memory.last_update,
        lifted.get("rel_emb"),
        lifted.get("time_w"),
        lifted.get("time_b"),
    );
    let aggregated = tgn::aggregate_last(&metas);
    let (nodes, rows) = tgn::update_memory(
        &tape,
        mem_base,
        &aggregated,
        payload,
        lifted.get("gru_wz"),
        lifted.get("gru_wr"),
        lifted.get("gru_wh"),
    );
    let vals = rows.value();
    commit_batch(state, batch, &nodes, &vals);
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricReport,
}

pub const CHECKPOINT_TAG: &str = "hiertkg-ckpt-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_tag: String,
    pub config: TrainConfig,
    pub config_hash: u64,
    pub num_entities: usize,
    pub num_relations: usize,
    pub params: ParamStore,
    pub memory: NodeMemory,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)
            .map_err(|e| HierError::Config(format!("serialize checkpoint: {e}")))?;
        std::fs::write(path, bytes).map_err(|e| HierError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes =
            std::fs::read(path).map_err(|e| HierError::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| HierError::parse(path.display().to_string(), e.to_string()))?;
        if ckpt.format_tag != CHECKPOINT_TAG {
            return Err(HierError::Config(format!(
                "unsupported checkpoint tag {:?}",
                ckpt.format_tag
            )));
        }
        Ok(ckpt)
    }
}

/// Candidate entity pool for a query at time `t`: entities already active
/// in the processed stream. Appending events after `t` cannot change it.
fn causal_pool(state: &StreamState) -> Vec<usize> {
    state.active.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalProtocol {
    /// k sampled negatives per positive.
    Sampled,
    /// Rank against every active entity.
    AllEntities,
}

/// Score a stream without gradients, replaying it into `state`. Each
/// batch is scored under the same order as training: its messages update
/// memory first, then embeddings are computed and the batch events are
/// ranked against negatives drawn from the pre-batch entity pool.
/// Causality is batch-granular: events appended after a batch boundary
/// cannot change scores of earlier batches.
fn score_stream(
    cfg: &TrainConfig,
    store: &ParamStore,
    state: &mut StreamState,
    events: &[TemporalEvent],
    protocol: EvalProtocol,
    rng: &mut ChaCha8Rng,
    collect: bool,
) -> Result<Vec<ScoredQuery>> {
    let mut queries = Vec::new();
    for chunk in events.chunks(cfg.batch_size) {
        if collect && state.active.len() >= 2 {
            let pool = causal_pool(state);
            let negatives = match protocol {
                EvalProtocol::Sampled => {
                    linkpred::sample_negatives(chunk, &pool, cfg.negatives, rng)?
                }
                EvalProtocol::AllEntities => {
                    let mut out = Vec::new();
                    for ev in chunk {
                        for &cand in &pool {
                            if cand != ev.destination {
                                out.push(TemporalEvent {
                                    destination: cand,
                                    ..*ev
                                });
                            }
                        }
                    }
                    out
                }
            };
            let tape = Tape::new();
            let lifted = Lifted::new(&tape, store);
            let fwd = forward_batch(&tape, cfg, &lifted, state, chunk, &negatives, true)?;
            let pos = fwd.pos_probs.value();
            let neg = fwd.neg_probs.value();
            // group negatives back onto their positives in emission order
            let mut neg_iter = neg.iter().copied();
            for (i, ev) in chunk.iter().enumerate() {
                let count = match protocol {
                    EvalProtocol::Sampled => cfg.negatives,
                    EvalProtocol::AllEntities => {
                        pool.iter().filter(|&&c| c != ev.destination).count()
                    }
                };
                queries.push(ScoredQuery {
                    positive: pos[[i, 0]],
                    negatives: (0..count).map(|_| neg_iter.next().unwrap()).collect(),
                });
            }
            let vals = fwd.updated_rows.value();
            commit_batch(state, chunk, &fwd.updated_nodes, &vals);
        } else {
            advance_stream(cfg, store, state, chunk);
        }
    }
    Ok(queries)
}

/// Warm memory over prior splits without scoring, then return per-query
/// scores for `split` (predict-then-update, batch by batch).
pub fn score_split(
    ckpt: &Checkpoint,
    warm: &[&EventDataset],
    split: &EventDataset,
    protocol: EvalProtocol,
) -> Result<Vec<ScoredQuery>> {
    let cfg = &ckpt.config;
    let mut state = StreamState::fresh(ckpt.num_entities, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    for ds in warm {
        score_stream(cfg, &ckpt.params, &mut state, &ds.events, protocol, &mut rng, false)?;
    }
    score_stream(
        cfg,
        &ckpt.params,
        &mut state,
        &split.events,
        protocol,
        &mut rng,
        true,
    )
}

/// Warm memory over prior splits, then score `split` under `protocol`.
pub fn evaluate(
    ckpt: &Checkpoint,
    warm: &[&EventDataset],
    split: &EventDataset,
    protocol: EvalProtocol,
    epoch: usize,
) -> Result<MetricReport> {
    if split.num_entities() != ckpt.num_entities || split.num_relations() != ckpt.num_relations
    {
        return Err(HierError::Config(format!(
            "checkpoint built for {}×{} vocab, split has {}×{}",
            ckpt.num_entities,
            ckpt.num_relations,
            split.num_entities(),
            split.num_relations()
        )));
    }
    let queries = score_split(ckpt, warm, split, protocol)?;
    metrics::report(&queries, &split.name, epoch)
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
}

/// Full training loop over an already-split dataset triple.
pub fn train(
    cfg: &TrainConfig,
    train_ds: &EventDataset,
    val_ds: &EventDataset,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_ds.events.is_empty() {
        return Err(HierError::EmptyDataset(train_ds.name.clone()));
    }
    let num_entities = train_ds.num_entities();
    let num_relations = train_ds.num_relations();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::init(cfg, num_relations, &mut rng);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let mut state = StreamState::fresh(num_entities, cfg);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for chunk in train_ds.events.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let lifted = Lifted::new(&tape, &store);
            // seed the pool from the batch itself on the very first batch
            for ev in chunk {
                state.active.insert(ev.source);
                state.active.insert(ev.destination);
            }
            let pool = causal_pool(&state);
            let negatives = if pool.len() >= 2 {
                linkpred::sample_negatives(chunk, &pool, cfg.negatives, &mut rng)?
            } else {
                Vec::new()
            };
            let fwd =
                forward_batch(&tape, cfg, &lifted, &state, chunk, &negatives, true)?;
            let loss_val = fwd.loss.value()[[0, 0]];
            if !loss_val.is_finite() {
                return Err(HierError::Diagnostics(format!(
                    "training diverged at epoch {epoch}: loss {loss_val}; last finite mean loss {:.6}",
                    if loss_batches > 0 {
                        loss_sum / loss_batches as f64
                    } else {
                        f64::NAN
                    }
                )));
            }
            loss_sum += loss_val;
            loss_batches += 1;
            let grads_all = tape.backward(fwd.loss);
            let grads = lifted.grads(&grads_all);
            let updated_vals = fwd.updated_rows.value();
            opt.apply(&mut store, &grads);
            commit_batch(&mut state, chunk, &fwd.updated_nodes, &updated_vals);
        }
        let train_loss = loss_sum / loss_batches.max(1) as f64;
        let ckpt = Checkpoint {
            format_tag: CHECKPOINT_TAG.to_string(),
            config: cfg.clone(),
            config_hash: cfg.hash(),
            num_entities,
            num_relations,
            params: store.clone(),
            memory: state.memory.clone(),
            best_epoch: epoch,
        };
        let val = evaluate(&ckpt, &[train_ds], val_ds, EvalProtocol::Sampled, epoch)?;
        let val_ap = val.ap;
        history.push(HistoryRow {
            epoch,
            train_loss,
            val,
        });
        let improved = best.as_ref().map(|(ap, _)| val_ap > *ap).unwrap_or(true);
        if improved {
            best = Some((val_ap, ckpt));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let checkpoint = match best {
        Some((_, c)) => c,
        None => {
            // zero epochs: untrained parameters, empty memory
            Checkpoint {
                format_tag: CHECKPOINT_TAG.to_string(),
                config: cfg.clone(),
                config_hash: cfg.hash(),
                num_entities,
                num_relations,
                params: store,
                memory: NodeMemory::zeros(num_entities, cfg.memory_dim),
                best_epoch: 0,
            }
        }
    };
    Ok(TrainOutput {
        checkpoint,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationScenario {
    HierTkg,
    First,
    Second,
    Third,
}

impl AblationScenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hiertkg" => Ok(AblationScenario::HierTkg),
            "first" => Ok(AblationScenario::First),
            "second" => Ok(AblationScenario::Second),
            "third" => Ok(AblationScenario::Third),
            other => Err(HierError::Config(format!("unknown scenario {other:?}"))),
        }
    }

    pub fn variants(self) -> (PoolingVariant, FusionVariant) {
        match self {
            AblationScenario::HierTkg => (PoolingVariant::Diffpool, FusionVariant::Attention),
            AblationScenario::First => {
                (PoolingVariant::DoubleSagpool, FusionVariant::Attention)
            }
            AblationScenario::Second => {
                (PoolingVariant::DoubleSagpool, FusionVariant::NoAttention)
            }
            AblationScenario::Third => (PoolingVariant::Sagpool, FusionVariant::Attention),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationScenario::HierTkg => "HierTKG",
            AblationScenario::First => "First",
            AblationScenario::Second => "Second",
            AblationScenario::Third => "Third",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: String,
    pub val: MetricReport,
    pub test: MetricReport,
}

/// Train and evaluate one scenario with its (pooling, fusion) pair;
/// everything else in `cfg` is held fixed.
pub fn run_ablation(
    cfg: &TrainConfig,
    scenario: AblationScenario,
    train_ds: &EventDataset,
    val_ds: &EventDataset,
    test_ds: &EventDataset,
) -> Result<AblationRow> {
    let (pooling, fusion) = scenario.variants();
    let mut cfg = cfg.clone();
    cfg.pooling = pooling;
    cfg.fusion = fusion;
    let out = train(&cfg, train_ds, val_ds)?;
    let epoch = out.checkpoint.best_epoch;
    let val = evaluate(
        &out.checkpoint,
        &[train_ds],
        val_ds,
        EvalProtocol::Sampled,
        epoch,
    )?;
    let test = evaluate(
        &out.checkpoint,
        &[train_ds, val_ds],
        test_ds,
        EvalProtocol::Sampled,
        epoch,
    )?;
    Ok(AblationRow {
        scenario: scenario.name().to_string(),
        val,
        test,
    })
}

/// Write `metrics.jsonl` (one history row per line) and `history.csv`
/// (epoch, train loss, validation AP/AUC/MRR), plus the loss/AUC chart
/// unless `skip_plot`.
pub fn emit_reports(history: &[HistoryRow], out_dir: &Path, skip_plot: bool) -> Result<()> {
    if history.is_empty() {
        return Err(HierError::Config("empty history".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HierError::io(out_dir.display().to_string(), e))?;
    let jsonl_path = out_dir.join("metrics.jsonl");
    let mut jsonl = String::new();
    for row in history {
        jsonl.push_str(&serde_json::to_string(row).unwrap());
        jsonl.push('\n');
    }
    std::fs::write(&jsonl_path, jsonl)
        .map_err(|e| HierError::io(jsonl_path.display().to_string(), e))?;

    let csv_path = out_dir.join("history.csv");
    let mut csv = String::from("epoch,train_loss,val_ap,val_auc,val_mrr\n");
    for row in history {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.val.ap, row.val.auc, row.val.mrr
        ));
    }
    std::fs::write(&csv_path, csv)
        .map_err(|e| HierError::io(csv_path.display().to_string(), e))?;

    if !skip_plot {
        let losses: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
        let aucs: Vec<f64> = history.iter().map(|r| r.val.auc).collect();
        crate::plot::line_chart(
            &out_dir.join("loss_auc.png"),
            &[("train loss", &losses), ("val AUC", &aucs)],
        )?;
    }
    Ok(())
}

pub fn parse_history_jsonl(text: &str) -> Result<Vec<HistoryRow>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HierError::parse("metrics.jsonl", e.to_string()))
        })
        .collect()
}
