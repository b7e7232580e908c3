//! Temporal graph network: per-node memory, relative time encoding,
//! identity messages, last-message aggregation, gated memory update, and
//! attention over recent temporal neighbors.

use crate::autodiff::{Tape, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// Per-node evolving state. The matrix row for a node is its memory vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeMemory {
    pub state: Array2<f64>,
    pub last_update: Vec<f64>,
    /// Most recent raw (message, timestamp) seen per node.
    pub last_message: Vec<Option<(Vec<f64>, f64)>>,
}

impl NodeMemory {
    pub fn zeros(num_entities: usize, memory_dim: usize) -> Self {
        NodeMemory {
            state: Array2::zeros((num_entities, memory_dim)),
            last_update: vec![0.0; num_entities],
            last_message: vec![None; num_entities],
        }
    }

    pub fn memory_dim(&self) -> usize {
        self.state.ncols()
    }

    pub fn num_entities(&self) -> usize {
        self.state.nrows()
    }
}

/// Recent temporal neighbors per node, most recent last, capped at `cap`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborWindow {
    lists: Vec<VecDeque<(usize, usize, f64)>>, // (neighbor, relation, time)
    cap: usize,
}

impl NeighborWindow {
    pub fn new(num_entities: usize, cap: usize) -> Self {
        NeighborWindow {
            lists: vec![VecDeque::new(); num_entities],
            cap,
        }
    }

    pub fn push(&mut self, node: usize, neighbor: usize, relation: usize, time: f64) {
        let list = &mut self.lists[node];
        if list.len() == self.cap {
            list.pop_front();
        }
        list.push_back((neighbor, relation, time));
    }

    pub fn record_event(&mut self, s: usize, r: usize, o: usize, t: f64) {
        self.push(s, o, r, t);
        if s != o {
            self.push(o, s, r, t);
        }
    }

    pub fn neighbors(&self, node: usize) -> &VecDeque<(usize, usize, f64)> {
        &self.lists[node]
    }
}

/// One identity message: payload row `row` in the batch payload matrix,
/// destined for `target`.
#[derive(Debug, Clone, Copy)]
pub struct MessageMeta {
    pub target: usize,
    pub timestamp: f64,
    pub row: usize,
}

/// TE(Δt)[i] = cos(w[i]·Δt + b[i]); `time_w`/`time_b` are 1×time_dim.
/// Returns a len×time_dim matrix, differentiable in both parameters.
pub fn encode_time<'t>(
    tape: &'t Tape,
    time_w: Var<'t>,
    time_b: Var<'t>,
    deltas: &[f64],
) -> Var<'t> {
    let col = tape.constant(Array2::from_shape_vec((deltas.len(), 1), deltas.to_vec()).unwrap());
    let scaled = col.matmul(time_w);
    scaled.add(time_b.broadcast_rows(deltas.len())).cos()
}

/// Identity messages for a batch: for each event, one message toward each
/// endpoint, payload = [own memory ‖ counterpart memory ‖ relation ‖ TE(Δt)]
/// with Δt relative to the recipient's last update. Negative deltas clamp
/// to zero; the clamp count is returned.
#[allow(clippy::too_many_arguments)]
pub fn compute_messages<'t>(
    tape: &'t Tape,
    events: &[crate::data::TemporalEvent],
    mem_state: Var<'t>,
    last_update: &[f64],
    rel_emb: Var<'t>,
    time_w: Var<'t>,
    time_b: Var<'t>,
) -> (Vec<MessageMeta>, Var<'t>, usize) {
    let mut own_idx = Vec::with_capacity(events.len() * 2);
    let mut other_idx = Vec::with_capacity(events.len() * 2);
    let mut rel_idx = Vec::with_capacity(events.len() * 2);
    let mut deltas = Vec::with_capacity(events.len() * 2);
    let mut metas = Vec::with_capacity(events.len() * 2);
    let mut clamped = 0usize;
    for ev in events {
        for (target, counterpart) in [(ev.source, ev.destination), (ev.destination, ev.source)] {
            let mut dt = ev.timestamp - last_update[target];
            if dt < 0.0 {
                dt = 0.0;
                clamped += 1;
            }
            metas.push(MessageMeta {
                target,
                timestamp: ev.timestamp,
                row: metas.len(),
            });
            own_idx.push(target);
            other_idx.push(counterpart);
            rel_idx.push(ev.relation);
            deltas.push(dt);
        }
    }
    let own = mem_state.rows(&own_idx);
    let other = mem_state.rows(&other_idx);
    let rels = rel_emb.rows(&rel_idx);
    let te = encode_time(tape, time_w, time_b, &deltas);
    let payload = Var::concat_cols(tape, &[own, other, rels, te]);
    (metas, payload, clamped)
}

/// Keep, per node, the message with the largest timestamp; ties go to the
/// latest in list order.
pub fn aggregate_last(metas: &[MessageMeta]) -> BTreeMap<usize, MessageMeta> {
    let mut keep: BTreeMap<usize, MessageMeta> = BTreeMap::new();
    for m in metas {
        match keep.get(&m.target) {
            Some(prev) if prev.timestamp > m.timestamp => {}
            _ => {
                keep.insert(m.target, *m);
            }
        }
    }
    keep
}

/// Gated recurrent memory update for the aggregated nodes.
/// Returns the node list (ascending) and their new memory rows.
///
/// z = σ([x‖m]·W_z), r = σ([x‖m]·W_r), m̃ = tanh([x‖r⊙m]·W_h),
/// m' = (1−z)⊙m + z⊙m̃.
pub fn update_memory<'t>(
    tape: &'t Tape,
    mem_state: Var<'t>,
    aggregated: &BTreeMap<usize, MessageMeta>,
    payload: Var<'t>,
    w_z: Var<'t>,
    w_r: Var<'t>,
    w_h: Var<'t>,
) -> (Vec<usize>, Var<'t>) {
    let nodes: Vec<usize> = aggregated.keys().copied().collect();
    let rows: Vec<usize> = nodes.iter().map(|n| aggregated[n].row).collect();
    let x = payload.rows(&rows);
    let m_prev = mem_state.rows(&nodes);
    let xm = Var::concat_cols(tape, &[x, m_prev]);
    let z = xm.matmul(w_z).sigmoid();
    let r = xm.matmul(w_r).sigmoid();
    let xrm = Var::concat_cols(tape, &[x, r.mul(m_prev)]);
    let cand = xrm.matmul(w_h).tanh();
    let ones = tape.constant(Array2::ones(z.shape()));
    let new_m = ones.sub(z).mul(m_prev).add(z.mul(cand));
    (nodes, new_m)
}

/// Differentiable view of memory: updated rows override the base state.
pub struct MemView<'t> {
    base: Var<'t>,
    updated: BTreeMap<usize, (Var<'t>, usize)>, // node -> (row matrix, row index)
}

impl<'t> MemView<'t> {
    pub fn new(base: Var<'t>) -> Self {
        MemView {
            base,
            updated: BTreeMap::new(),
        }
    }

    pub fn apply_update(&mut self, nodes: &[usize], new_rows: Var<'t>) {
        for (k, &n) in nodes.iter().enumerate() {
            self.updated.insert(n, (new_rows, k));
        }
    }

    /// Gather rows for `nodes` as a len×m matrix.
    pub fn gather(&self, tape: &'t Tape, nodes: &[usize]) -> Var<'t> {
        // group runs of base rows to limit tape nodes
        let parts: Vec<Var<'t>> = nodes
            .iter()
            .map(|&n| match self.updated.get(&n) {
                Some(&(rows, k)) => rows.rows(&[k]),
                None => self.base.rows(&[n]),
            })
            .collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            Var::concat_rows(tape, &parts)
        }
    }
}

/// Per-head attention weights for temporal embedding.
#[derive(Debug, Clone)]
pub struct AttentionVars<'t> {
    pub wq: Vec<Var<'t>>,  // (m+τ)×d_head
    pub wk: Vec<Var<'t>>,  // (m+ρ+τ)×d_head
    pub wv: Vec<Var<'t>>,  // (m+ρ+τ)×d_head
    pub out: Var<'t>,      // (h·d_head)×embed_dim
}

/// Multi-head attention embedding over each node's recent temporal
/// neighbors at time `now`. Query from [memory ‖ TE(0)]; keys/values from
/// [neighbor memory ‖ relation embedding ‖ TE(now − t_event)]. A node with
/// no neighbors gets a zero context vector.
#[allow(clippy::too_many_arguments)]
pub fn temporal_embed<'t>(
    tape: &'t Tape,
    nodes: &[usize],
    mem: &MemView<'t>,
    windows: &NeighborWindow,
    now: f64,
    rel_emb: Var<'t>,
    time_w: Var<'t>,
    time_b: Var<'t>,
    attn: &AttentionVars<'t>,
) -> Var<'t> {
    let heads = attn.wq.len();
    let d_head = {
        let (_, c) = attn.wq[0].shape();
        c
    };
    let mut per_node = Vec::with_capacity(nodes.len());
    for &v in nodes {
        let own = mem.gather(tape, &[v]);
        let te0 = encode_time(tape, time_w, time_b, &[0.0]);
        let q_in = Var::concat_cols(tape, &[own, te0]);
        let neigh = windows.neighbors(v);
        let head_outs: Vec<Var<'t>> = if neigh.is_empty() {
            (0..heads)
                .map(|_| tape.constant(Array2::zeros((1, d_head))))
                .collect()
        } else {
            let n_ids: Vec<usize> = neigh.iter().map(|&(u, _, _)| u).collect();
            let r_ids: Vec<usize> = neigh.iter().map(|&(_, r, _)| r).collect();
            let deltas: Vec<f64> = neigh.iter().map(|&(_, _, t)| (now - t).max(0.0)).collect();
            let nm = mem.gather(tape, &n_ids);
            let rels = rel_emb.rows(&r_ids);
            let te = encode_time(tape, time_w, time_b, &deltas);
            let k_in = Var::concat_cols(tape, &[nm, rels, te]);
            (0..heads)
                .map(|h| {
                    let q = q_in.matmul(attn.wq[h]);
                    let k = k_in.matmul(attn.wk[h]);
                    let vv = k_in.matmul(attn.wv[h]);
                    let scores = q.matmul(k.transpose()).scale(1.0 / (d_head as f64).sqrt());
                    scores.softmax_rows().matmul(vv)
                })
                .collect()
        };
        let cat = Var::concat_cols(tape, &head_outs);
        per_node.push(cat.matmul(attn.out));
    }
    if per_node.len() == 1 {
        per_node[0]
    } else {
        Var::concat_rows(tape, &per_node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TemporalEvent;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn encode_time_trivial_values() {
        let tape = Tape::new();
        let w = tape.leaf(array![[0.0, 0.0]]);
        let b = tape.leaf(array![[0.0, 0.0]]);
        let te = encode_time(&tape, w, b, &[3.7]);
        assert_eq!(te.value(), array![[1.0, 1.0]]);

        let tape = Tape::new();
        let w = tape.leaf(array![[std::f64::consts::PI]]);
        let b = tape.leaf(array![[0.0]]);
        let te = encode_time(&tape, w, b, &[1.0]);
        assert!((te.value()[[0, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_time_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_mat(&mut rng, 1, 5);
        let b = rand_mat(&mut rng, 1, 5);
        let deltas: Vec<f64> = (0..9).map(|i| i as f64 * 0.37).collect();
        let tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let te = encode_time(&tape, wv, bv, &deltas).value();
        for (i, &dt) in deltas.iter().enumerate() {
            for j in 0..5 {
                let expect = (w[[0, j]] * dt + b[[0, j]]).cos();
                assert!((te[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn messages_fresh_nodes_carry_te_of_event_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mem = rand_mat(&mut rng, 3, 4);
        let rel = rand_mat(&mut rng, 2, 3);
        let tw = rand_mat(&mut rng, 1, 2);
        let tb = rand_mat(&mut rng, 1, 2);
        let tape = Tape::new();
        let mv = tape.constant(mem.clone());
        let rv = tape.leaf(rel.clone());
        let twv = tape.leaf(tw.clone());
        let tbv = tape.leaf(tb.clone());
        let events = [TemporalEvent {
            source: 0,
            relation: 1,
            destination: 2,
            timestamp: 5.0,
        }];
        let (metas, payload, clamped) =
            compute_messages(&tape, &events, mv, &[0.0, 0.0, 0.0], rv, twv, tbv);
        assert_eq!(clamped, 0);
        assert_eq!(metas.len(), 2);
        let p = payload.value();
        // message toward source: [mem[0] ‖ mem[2] ‖ rel[1] ‖ TE(5)]
        for j in 0..4 {
            assert_eq!(p[[0, j]], mem[[0, j]]);
            assert_eq!(p[[0, 4 + j]], mem[[2, j]]);
        }
        for j in 0..3 {
            assert_eq!(p[[0, 8 + j]], rel[[1, j]]);
        }
        for j in 0..2 {
            let expect = (tw[[0, j]] * 5.0 + tb[[0, j]]).cos();
            assert!((p[[0, 11 + j]] - expect).abs() < 1e-12);
        }
        // Δt = 0 when event time equals last_update
        let tape2 = Tape::new();
        let mv = tape2.constant(mem.clone());
        let rv = tape2.leaf(rel);
        let twv = tape2.leaf(tw.clone());
        let tbv = tape2.leaf(tb.clone());
        let (_, payload2, _) =
            compute_messages(&tape2, &events, mv, &[5.0, 0.0, 5.0], rv, twv, tbv);
        let p2 = payload2.value();
        for j in 0..2 {
            assert!((p2[[0, 11 + j]] - tb[[0, j]].cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn messages_payload_matches_gather_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mem = rand_mat(&mut rng, 10, 4);
        let rel = rand_mat(&mut rng, 3, 2);
        let tw = rand_mat(&mut rng, 1, 3);
        let tb = rand_mat(&mut rng, 1, 3);
        let lu: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let events: Vec<TemporalEvent> = (0..8)
            .map(|i| TemporalEvent {
                source: rng.gen_range(0..10),
                relation: rng.gen_range(0..3),
                destination: rng.gen_range(0..10),
                timestamp: 2.0 + i as f64,
            })
            .collect();
        let tape = Tape::new();
        let mv = tape.constant(mem.clone());
        let rv = tape.leaf(rel.clone());
        let (metas, payload, _) = compute_messages(
            &tape,
            &events,
            mv,
            &lu,
            rv,
            tape.leaf(tw.clone()),
            tape.leaf(tb.clone()),
        );
        assert_eq!(metas.len(), 16);
        let p = payload.value();
        for (k, ev) in events.iter().enumerate() {
            let (tgt, other) = (ev.source, ev.destination);
            for j in 0..4 {
                assert_eq!(p[[2 * k, j]], mem[[tgt, j]]);
                assert_eq!(p[[2 * k, 4 + j]], mem[[other, j]]);
                assert_eq!(p[[2 * k + 1, j]], mem[[other, j]]);
                assert_eq!(p[[2 * k + 1, 4 + j]], mem[[tgt, j]]);
            }
        }
    }

    #[test]
    fn aggregate_keeps_max_timestamp_latest_tie() {
        let metas = vec![
            MessageMeta { target: 7, timestamp: 1.0, row: 0 },
            MessageMeta { target: 7, timestamp: 3.0, row: 1 },
            MessageMeta { target: 7, timestamp: 2.0, row: 2 },
            MessageMeta { target: 7, timestamp: 3.0, row: 3 },
        ];
        let agg = aggregate_last(&metas);
        assert_eq!(agg[&7].row, 3); // tie at t=3 -> latest in list order
        assert!(aggregate_last(&[]).is_empty());
    }

    #[test]
    fn aggregate_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let metas: Vec<MessageMeta> = (0..1000)
            .map(|row| MessageMeta {
                target: rng.gen_range(0..30),
                timestamp: rng.gen_range(0..50) as f64,
                row,
            })
            .collect();
        let agg = aggregate_last(&metas);
        for node in 0..30 {
            let mut mine: Vec<&MessageMeta> =
                metas.iter().filter(|m| m.target == node).collect();
            if mine.is_empty() {
                assert!(!agg.contains_key(&node));
                continue;
            }
            mine.sort_by(|a, b| {
                a.timestamp
                    .partial_cmp(&b.timestamp)
                    .unwrap()
                    .then(a.row.cmp(&b.row))
            });
            assert_eq!(agg[&node].row, mine.last().unwrap().row);
        }
    }

    #[test]
    fn gru_gate_saturation() {
        // big positive W_z -> z≈1 -> memory ≈ candidate; big negative -> unchanged
        let m = 3;
        let msg = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // positive entries so the constant ±50 gate weights saturate the
        // update gate in a known direction (sign of Σ[x‖m] is positive)
        let mem = Array2::from_shape_fn((2, m), |_| rng.gen_range(0.1..1.0));
        let payload = Array2::from_shape_fn((2, msg), |_| rng.gen_range(0.1..1.0));
        let w_r = rand_mat(&mut rng, msg + m, m);
        let w_h = rand_mat(&mut rng, msg + m, m);
        let mut agg = BTreeMap::new();
        agg.insert(0usize, MessageMeta { target: 0, timestamp: 1.0, row: 0 });
        agg.insert(1usize, MessageMeta { target: 1, timestamp: 1.0, row: 1 });

        for (wz_scale, expect_candidate) in [(50.0, true), (-50.0, false)] {
            let tape = Tape::new();
            let mv = tape.constant(mem.clone());
            let pv = tape.constant(payload.clone());
            let wz = tape.leaf(Array2::from_elem((msg + m, m), wz_scale));
            let wr = tape.leaf(w_r.clone());
            let wh = tape.leaf(w_h.clone());
            let (nodes, new_m) = update_memory(&tape, mv, &agg, pv, wz, wr, wh);
            assert_eq!(nodes, vec![0, 1]);
            let got = new_m.value();
            if expect_candidate {
                // recompute candidate by hand
                for i in 0..2 {
                    let mut xrm = Vec::new();
                    let xm: Vec<f64> = (0..msg)
                        .map(|j| payload[[i, j]])
                        .chain((0..m).map(|j| mem[[i, j]]))
                        .collect();
                    let r: Vec<f64> = (0..m)
                        .map(|j| {
                            let dot: f64 =
                                (0..msg + m).map(|k| xm[k] * w_r[[k, j]]).sum();
                            1.0 / (1.0 + (-dot).exp())
                        })
                        .collect();
                    for j in 0..msg {
                        xrm.push(payload[[i, j]]);
                    }
                    for j in 0..m {
                        xrm.push(r[j] * mem[[i, j]]);
                    }
                    for j in 0..m {
                        let dot: f64 = (0..msg + m).map(|k| xrm[k] * w_h[[k, j]]).sum();
                        assert!((got[[i, j]] - dot.tanh()).abs() < 1e-10);
                    }
                }
            } else {
                for i in 0..2 {
                    for j in 0..m {
                        assert!((got[[i, j]] - mem[[i, j]]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn gru_matches_scalar_reference() {
        let m = 3;
        let msg = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mem = rand_mat(&mut rng, 4, m);
        let payload = rand_mat(&mut rng, 4, msg);
        let w_z = rand_mat(&mut rng, msg + m, m);
        let w_r = rand_mat(&mut rng, msg + m, m);
        let w_h = rand_mat(&mut rng, msg + m, m);
        let mut agg = BTreeMap::new();
        for i in 0..4usize {
            agg.insert(i, MessageMeta { target: i, timestamp: 1.0, row: i });
        }
        let tape = Tape::new();
        let (nodes, new_m) = update_memory(
            &tape,
            tape.constant(mem.clone()),
            &agg,
            tape.constant(payload.clone()),
            tape.leaf(w_z.clone()),
            tape.leaf(w_r.clone()),
            tape.leaf(w_h.clone()),
        );
        let got = new_m.value();
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        for (row, &node) in nodes.iter().enumerate() {
            let xm: Vec<f64> = (0..msg)
                .map(|j| payload[[node, j]])
                .chain((0..m).map(|j| mem[[node, j]]))
                .collect();
            for j in 0..m {
                let z = sigmoid((0..msg + m).map(|k| xm[k] * w_z[[k, j]]).sum());
                let r_j: Vec<f64> = (0..m)
                    .map(|jj| sigmoid((0..msg + m).map(|k| xm[k] * w_r[[k, jj]]).sum()))
                    .collect();
                let xrm: Vec<f64> = (0..msg)
                    .map(|k| payload[[node, k]])
                    .chain((0..m).map(|k| r_j[k] * mem[[node, k]]))
                    .collect();
                let cand = ((0..msg + m).map(|k| xrm[k] * w_h[[k, j]]).sum::<f64>()).tanh();
                let expect = (1.0 - z) * mem[[node, j]] + z * cand;
                assert!((got[[row, j]] - expect).abs() < 1e-10);
            }
        }
    }

    fn attn_vars<'t>(
        tape: &'t Tape,
        rng: &mut ChaCha8Rng,
        heads: usize,
        qd: usize,
        kd: usize,
        dh: usize,
        ed: usize,
    ) -> AttentionVars<'t> {
        AttentionVars {
            wq: (0..heads).map(|_| tape.leaf(rand_mat(rng, qd, dh))).collect(),
            wk: (0..heads).map(|_| tape.leaf(rand_mat(rng, kd, dh))).collect(),
            wv: (0..heads).map(|_| tape.leaf(rand_mat(rng, kd, dh))).collect(),
            out: tape.leaf(rand_mat(rng, heads * dh, ed)),
        }
    }

    #[test]
    fn attention_single_and_duplicate_neighbors() {
        let (m, tau, rho) = (3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mem = rand_mat(&mut rng, 4, m);
        let rel = rand_mat(&mut rng, 2, rho);
        let tape = Tape::new();
        let base = tape.constant(mem.clone());
        let view = MemView::new(base);
        let rv = tape.leaf(rel);
        let tw = tape.leaf(rand_mat(&mut rng, 1, tau));
        let tb = tape.leaf(rand_mat(&mut rng, 1, tau));
        let attn = attn_vars(&tape, &mut rng, 2, m + tau, m + rho + tau, 3, 6);

        // one neighbor vs that neighbor duplicated: softmax weights are 1
        // vs 0.5/0.5 over identical rows, so outputs must match
        let mut w1 = NeighborWindow::new(4, 10);
        w1.push(0, 1, 0, 2.0);
        let mut w2 = NeighborWindow::new(4, 10);
        w2.push(0, 1, 0, 2.0);
        w2.push(0, 1, 0, 2.0);
        let e1 = temporal_embed(&tape, &[0], &view, &w1, 5.0, rv, tw, tb, &attn).value();
        let e2 = temporal_embed(&tape, &[0], &view, &w2, 5.0, rv, tw, tb, &attn).value();
        for j in 0..6 {
            assert!((e1[[0, j]] - e2[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_zero_neighbors_gives_zero_context() {
        let (m, tau, rho) = (2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let base = tape.constant(rand_mat(&mut rng, 2, m));
        let view = MemView::new(base);
        let rv = tape.leaf(rand_mat(&mut rng, 1, rho));
        let tw = tape.leaf(rand_mat(&mut rng, 1, tau));
        let tb = tape.leaf(rand_mat(&mut rng, 1, tau));
        let attn = attn_vars(&tape, &mut rng, 2, m + tau, m + rho + tau, 2, 4);
        let w = NeighborWindow::new(2, 5);
        let e = temporal_embed(&tape, &[0], &view, &w, 1.0, rv, tw, tb, &attn).value();
        for j in 0..4 {
            assert_eq!(e[[0, j]], 0.0);
        }
    }

    #[test]
    fn attention_matches_per_head_scalar_oracle() {
        let (m, tau, rho, heads, dh, ed) = (3, 2, 2, 2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mem = rand_mat(&mut rng, 5, m);
        let rel = rand_mat(&mut rng, 3, rho);
        let tw_m = rand_mat(&mut rng, 1, tau);
        let tb_m = rand_mat(&mut rng, 1, tau);
        let tape = Tape::new();
        let view = MemView::new(tape.constant(mem.clone()));
        let rv = tape.leaf(rel.clone());
        let tw = tape.leaf(tw_m.clone());
        let tb = tape.leaf(tb_m.clone());
        let attn = attn_vars(&tape, &mut rng, heads, m + tau, m + rho + tau, dh, ed);
        let mut win = NeighborWindow::new(5, 10);
        win.push(0, 1, 0, 1.0);
        win.push(0, 2, 1, 2.0);
        win.push(0, 4, 2, 3.5);
        let now = 4.0;
        let got = temporal_embed(&tape, &[0], &view, &win, now, rv, tw, tb, &attn).value();

        // scalar oracle
        let te = |dt: f64| -> Vec<f64> {
            (0..tau).map(|j| (tw_m[[0, j]] * dt + tb_m[[0, j]]).cos()).collect()
        };
        let q_in: Vec<f64> = (0..m).map(|j| mem[[0, j]]).chain(te(0.0)).collect();
        let neigh = [(1usize, 0usize, 1.0f64), (2, 1, 2.0), (4, 2, 3.5)];
        let k_rows: Vec<Vec<f64>> = neigh
            .iter()
            .map(|&(u, r, t)| {
                (0..m)
                    .map(|j| mem[[u, j]])
                    .chain((0..rho).map(|j| rel[[r, j]]))
                    .chain(te(now - t))
                    .collect()
            })
            .collect();
        let mut cat = Vec::new();
        for h in 0..heads {
            let wq = attn.wq[h].value();
            let wk = attn.wk[h].value();
            let wv = attn.wv[h].value();
            let q: Vec<f64> = (0..dh)
                .map(|j| (0..m + tau).map(|k| q_in[k] * wq[[k, j]]).sum())
                .collect();
            let scores: Vec<f64> = k_rows
                .iter()
                .map(|row| {
                    let kvec: Vec<f64> = (0..dh)
                        .map(|j| (0..m + rho + tau).map(|k| row[k] * wk[[k, j]]).sum())
                        .collect();
                    q.iter().zip(&kvec).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let alpha: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            for j in 0..dh {
                let mut ctx = 0.0;
                for (i, row) in k_rows.iter().enumerate() {
                    let vij: f64 = (0..m + rho + tau).map(|k| row[k] * wv[[k, j]]).sum();
                    ctx += alpha[i] * vij;
                }
                cat.push(ctx);
            }
        }
        let out = attn.out.value();
        for j in 0..ed {
            let expect: f64 = (0..heads * dh).map(|k| cat[k] * out[[k, j]]).sum();
            assert!((got[[0, j]] - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn memory_update_empty_aggregate_is_identity() {
        let agg: BTreeMap<usize, MessageMeta> = BTreeMap::new();
        // update_memory with no nodes yields an empty row set; the caller
        // leaves memory untouched. Assert the node list is empty.
        let tape = Tape::new();
        let mem = tape.constant(Array2::zeros((3, 2)));
        let payload = tape.constant(Array2::zeros((1, 4)));
        let w = tape.leaf(Array2::zeros((6, 2)));
        let (nodes, _) = update_memory(&tape, mem, &agg, payload, w, w, w);
        assert!(nodes.is_empty());
    }
}
