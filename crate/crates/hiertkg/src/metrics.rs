//! Ranking and classification metrics: MRR, average precision, and
//! Mann–Whitney AUC, all with mid-rank tie handling.

use crate::error::{HierError, Result};
use serde::{Deserialize, Serialize};

/// One evaluation query: the true candidate's score against its negatives.
#[derive(Debug, Clone)]
pub struct ScoredQuery {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

/// Per-split metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: f64,
    pub auc: f64,
    pub mrr: f64,
    /// Mid-rank-tie win fraction; present only under the single-negative
    /// protocol, where MRR = 0.5 + 0.5 · win_fraction holds exactly.
    pub win_fraction: Option<f64>,
    pub n_queries: usize,
    pub split: String,
    pub epoch: usize,
}

/// Mid-rank of the positive: 1 + (#strictly greater) + (#equal)/2.
pub fn rank_of_positive(q: &ScoredQuery) -> f64 {
    let mut greater = 0usize;
    let mut equal = 0usize;
    for &n in &q.negatives {
        if n > q.positive {
            greater += 1;
        } else if n == q.positive {
            equal += 1;
        }
    }
    1.0 + greater as f64 + equal as f64 / 2.0
}

pub fn mrr(queries: &[ScoredQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(HierError::Config("mrr over empty query list".into()));
    }
    let sum: f64 = queries.iter().map(|q| 1.0 / rank_of_positive(q)).sum();
    Ok(sum / queries.len() as f64)
}

/// Per-query win score under single-negative evaluation:
/// 1 for a strict win, 1/3 for a tie, 0 for a loss. With one negative,
/// MRR = 0.5 + 0.5 · mean(win score).
pub fn single_negative_win_fraction(queries: &[ScoredQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(HierError::Config("win fraction over empty list".into()));
    }
    let mut sum = 0.0;
    for q in queries {
        let r = rank_of_positive(q);
        // rank 1 -> rr 1 -> w 1; rank 1.5 -> rr 2/3 -> w 1/3; rank 2 -> rr 1/2 -> w 0
        sum += 2.0 / r - 1.0;
    }
    Ok(sum / queries.len() as f64)
}

/// AP = mean over positives of precision at that positive's position,
/// positives enumerated in descending score order, ties kept in input order.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(HierError::Config("average_precision with no positives".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Mann–Whitney AUC: P(random positive outscores random negative),
/// ties counted 1/2. Computed via tie-averaged ranks in O(n log n).
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    assert_eq!(labels.len(), scores.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(HierError::Config("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let n = order.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // 1-indexed average over the tie group
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics over a query set, flattening pos/neg scores for AP and AUC.
pub fn report(queries: &[ScoredQuery], split: &str, epoch: usize) -> Result<MetricReport> {
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for q in queries {
        labels.push(true);
        scores.push(q.positive);
        for &ns in &q.negatives {
            labels.push(false);
            scores.push(ns);
        }
    }
    let win_fraction = if !queries.is_empty() && queries.iter().all(|q| q.negatives.len() == 1)
    {
        Some(single_negative_win_fraction(queries)?)
    } else {
        None
    };
    Ok(MetricReport {
        ap: average_precision(&labels, &scores)?,
        auc: auc(&labels, &scores)?,
        mrr: mrr(queries)?,
        win_fraction,
        n_queries: queries.len(),
        split: split.to_string(),
        epoch,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rank_strict_winner() {
        let q = ScoredQuery {
            positive: 0.9,
            negatives: vec![0.1, 0.2],
        };
        assert_eq!(rank_of_positive(&q), 1.0);
    }

    #[test]
    fn rank_midpoint_tie() {
        let q = ScoredQuery {
            positive: 0.5,
            negatives: vec![0.5],
        };
        assert_eq!(rank_of_positive(&q), 1.5);
    }

    #[test]
    fn mrr_closed_form() {
        // ranks 1, 2, 4
        let queries = vec![
            ScoredQuery { positive: 1.0, negatives: vec![0.0] },
            ScoredQuery { positive: 0.5, negatives: vec![0.9] },
            ScoredQuery { positive: 0.1, negatives: vec![0.2, 0.3, 0.4] },
        ];
        assert!((mrr(&queries).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mrr_perfect() {
        let queries = vec![ScoredQuery { positive: 1.0, negatives: vec![0.2, 0.1] }; 4];
        assert_eq!(mrr(&queries).unwrap(), 1.0);
    }

    #[test]
    fn mrr_empty_errors() {
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn ap_single_positive_rank_two() {
        let ap = average_precision(&[true, false], &[0.1, 0.9]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn ap_perfect_separation() {
        let ap = average_precision(&[true, true, false, false], &[0.9, 0.8, 0.2, 0.1]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_no_positive_errors() {
        assert!(average_precision(&[false], &[0.3]).is_err());
    }

    #[test]
    fn auc_perfect_and_all_ties() {
        assert_eq!(auc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[true, false, true], &[0.5, 0.5, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_errors() {
        assert!(auc(&[true, true], &[0.4, 0.5]).is_err());
    }

    #[test]
    fn random_instances_match_oracles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let n = rng.gen_range(2..40);
            let labels: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.4)).collect();
            // quantized scores so ties actually occur
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
            if labels.iter().all(|&l| l) {
                continue;
            }
            let ap = average_precision(&labels, &scores).unwrap();
            let ap_o = oracle::average_precision_definitional(&labels, &scores);
            assert!((ap - ap_o).abs() < 1e-12);
            let a = auc(&labels, &scores).unwrap();
            let a_o = oracle::auc_pairwise(&labels, &scores);
            assert!((a - a_o).abs() < 1e-12);
        }
    }

    #[test]
    fn single_negative_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let queries: Vec<ScoredQuery> = (0..500)
            .map(|_| ScoredQuery {
                positive: rng.gen_range(0..8) as f64,
                negatives: vec![rng.gen_range(0..8) as f64],
            })
            .collect();
        let m = mrr(&queries).unwrap();
        let w = single_negative_win_fraction(&queries).unwrap();
        assert!((m - (0.5 + 0.5 * w)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(scores in proptest::collection::vec(-5.0f64..5.0, 4..30)) {
            let labels: Vec<bool> = scores.iter().enumerate().map(|(i, _)| i % 3 == 0).collect();
            let transformed: Vec<f64> = scores.iter().map(|&s| (0.7 * s).exp()).collect();
            let a1 = auc(&labels, &scores).unwrap();
            let a2 = auc(&labels, &transformed).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
            let p1 = average_precision(&labels, &scores).unwrap();
            let p2 = average_precision(&labels, &transformed).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-12);
        }

        #[test]
        fn metric_bounds(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let queries: Vec<ScoredQuery> = (0..20)
                .map(|_| ScoredQuery {
                    positive: rng.gen::<f64>(),
                    negatives: (0..rng.gen_range(1..6)).map(|_| rng.gen::<f64>()).collect(),
                })
                .collect();
            let rep = report(&queries, "test", 0).unwrap();
            prop_assert!(rep.mrr > 0.0 && rep.mrr <= 1.0);
            prop_assert!((0.0..=1.0).contains(&rep.ap));
            prop_assert!((0.0..=1.0).contains(&rep.auc));
        }
    }
}
