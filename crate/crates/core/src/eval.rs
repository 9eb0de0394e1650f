//! Ranking and thresholded classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default decision threshold for F1.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { op: "auroc", left: vec![scores.len()], right: vec![labels.len()] });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUROC undefined: {pos} positive and {neg} negative examples")));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC with average ranks for tied scores.
///
/// Rank sums are half-integers and exactly representable, so the result is
/// bitwise equal to the pair-counting [`auroc_oracle`].
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum of positives, kept integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let avg2 = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_sum += avg2 * tied_pos;
        i = j + 1;
    }
    let pos_u = pos as u128;
    // U doubled: 2·R_pos − pos·(pos+1)
    let u2 = rank2_sum - pos_u * (pos_u + 1);
    Ok(u2 as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// Brute-force AUROC over every positive-negative pair.
pub fn auroc_oracle(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut wins2: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            if si > sj {
                wins2 += 2;
            } else if si == sj {
                wins2 += 1;
            }
        }
    }
    Ok(wins2 as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// Thresholded counts, precision, recall and F1, plus AUROC when defined.
/// A score at or above `threshold` predicts the positive class. Precision,
/// recall and F1 are 0 whenever their denominator is.
pub fn classification_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { op: "classification_metrics", left: vec![scores.len()], right: vec![labels.len()] });
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Config("labels must be 0 or 1".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let auroc = match auroc(scores, labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport { n: scores.len(), auroc, threshold, precision, recall, f1, tp, fp, tn, fn_ })
}

/// Fraction of records whose thresholded prediction matches the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &y)| (s >= threshold) == (y == 1)).count();
    hits as f64 / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.6, 0.4, 0.3], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.4; 6], &[1, 0, 1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc_oracle(&[0.7, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auroc_oracle(&[0.3, 0.3], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let err = auroc(&[0.1, 0.2], &[1, 1]).unwrap_err();
        assert!(err.to_string().contains("AUROC undefined"));
        assert!(auroc_oracle(&[0.1], &[0]).is_err());
        let report = classification_metrics(&[0.1, 0.9], &[0, 0], 0.5).unwrap();
        assert_eq!(report.auroc, None);
    }

    #[test]
    fn f1_examples() {
        // TP=2 FP=1 FN=1 TN=6
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let r = classification_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (2, 1, 1, 6));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);

        let r = classification_metrics(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(r.f1, 1.0);

        let r = classification_metrics(&[0.1, 0.2], &[0, 0], 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_at_threshold_zero_is_positive_rate_formula() {
        let labels = [1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0];
        let scores: Vec<f64> = (0..12).map(|i| i as f64 / 20.0).collect();
        let p = 3.0 / 12.0;
        let r = classification_metrics(&scores, &labels, 0.0).unwrap();
        assert!((r.f1 - 2.0 * p / (p + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_as_one_object() {
        let r = classification_metrics(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["auroc"], 1.0);
        assert_eq!(v["tp"], 1);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![(0u8..8).prop_map(|k| k as f64 / 8.0), 0.0f64..1.0], n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_map(|(s, mut y)| {
                    y[0] = 0;
                    y[1] = 1;
                    (s, y)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rank_auroc_matches_pair_oracle_bitwise((s, y) in instance()) {
            prop_assert_eq!(auroc(&s, &y).unwrap().to_bits(), auroc_oracle(&s, &y).unwrap().to_bits());
        }
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform((s, y) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
        }

        #[test]
        fn flipping_labels_complements((s, y) in instance()) {
            let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            let sum = auroc(&s, &y).unwrap() + auroc(&s, &flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
