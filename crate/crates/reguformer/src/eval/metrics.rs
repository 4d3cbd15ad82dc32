//! Ranking and agreement metrics: ROC AUC (Mann-Whitney with half-credit
//! ties), PR AUC (right-continuous step interpolation), F1, and the
//! Adjusted Rand Index via the contingency-table formula.

use crate::error::{Error, Result};

fn check_binary(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted half, computed from tie-averaged ranks.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(
            "roc_auc needs both classes present".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1.0)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Area under precision-recall via step-wise (right-continuous)
/// interpolation over descending-score thresholds; tied scores collapse
/// into one threshold.
pub fn pr_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "pr_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    let total_pos = labels.iter().filter(|&&y| y == 1.0).count();
    if total_pos == 0 {
        return Err(Error::Metric("pr_auc needs at least one positive".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Binary F1 at a decision threshold; empty denominators give 0 with a
/// warning.
pub fn f1(scores: &[f64], labels: &[f64], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "f1: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_binary(labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fne = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, y == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fne += 1.0,
            (false, false) => {}
        }
    }
    if 2.0 * tp + fp + fne == 0.0 {
        log::warn!("f1: zero denominator, defining F1 = 0");
        return Ok(0.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fne))
}

/// Macro-averaged F1 over class predictions.
pub fn macro_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Contract("macro_f1: length mismatch".into()));
    }
    if num_classes == 0 {
        return Err(Error::Metric("macro_f1 needs at least one class".into()));
    }
    let mut total = 0.0;
    for c in 0..num_classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fne = 0.0;
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fne += 1.0,
                (false, false) => {}
            }
        }
        let f = if 2.0 * tp + fp + fne == 0.0 {
            log::warn!("macro_f1: class {c} empty, contributing 0");
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fne)
        };
        total += f;
    }
    Ok(total / num_classes as f64)
}

/// Adjusted Rand Index: `(RI - E[RI]) / (max RI - E[RI])` from the
/// contingency table.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Contract(format!(
            "ari: {} vs {} labels",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n == 0 {
        return Err(Error::Contract("ari of empty partitions".into()));
    }
    let ka = labels_a.iter().max().map_or(0, |m| m + 1);
    let kb = labels_b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    let mut row_sums = vec![0usize; ka];
    let mut col_sums = vec![0usize; kb];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        table[a * kb + b] += 1;
        row_sums[a] += 1;
        col_sums[b] += 1;
    }
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().map(|&x| choose2(x)).sum();
    let sum_rows: f64 = row_sums.iter().map(|&x| choose2(x)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&x| choose2(x)).sum();
    let total = choose2(n);
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if (max_index - expected).abs() < 1e-15 {
        // both partitions are single clusters (or all singletons): agreement
        // is exact by construction
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_perfect_and_ties() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(auc, 1.0);
        let auc = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn roc_pair_counting_case() {
        // pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs both) 2 wins
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn pr_perfect_ranking() {
        let v = pr_auc(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn pr_reversed_single_positive() {
        // positive ranked last of four: only threshold that recalls it has
        // precision 1/4
        let v = pr_auc(&[0.9, 0.8, 0.7, 0.1], &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn pr_range_contract() {
        let v = pr_auc(&[0.4, 0.6, 0.1, 0.9], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn f1_cases() {
        assert_eq!(
            f1(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0], 0.5).unwrap(),
            1.0
        );
        assert_eq!(
            f1(&[0.1, 0.2, 0.3], &[1.0, 1.0, 0.0], 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn macro_f1_three_class_confusion() {
        // predictions vs truth engineered to a hand-computed confusion table
        let truth = [0, 0, 0, 1, 1, 2, 2, 2];
        let predicted = [0, 0, 1, 1, 2, 2, 2, 0];
        // class 0: tp=2 fp=1 fn=1 -> f1 = 4/6
        // class 1: tp=1 fp=1 fn=1 -> f1 = 2/4
        // class 2: tp=2 fp=1 fn=1 -> f1 = 4/6
        let expected = (4.0 / 6.0 + 0.5 + 4.0 / 6.0) / 3.0;
        let got = macro_f1(&predicted, &truth, 3).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ari_identity_and_permutation() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
        let swapped = [2, 2, 0, 0, 1, 1];
        assert_eq!(ari(&a, &swapped).unwrap(), 1.0);
    }

    #[test]
    fn ari_six_point_example_matches_pair_counting() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [0, 0, 0, 1, 1, 1];
        // brute force over all pairs
        let n = a.len();
        let (mut both, mut a_only, mut b_only, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => a_only += 1.0,
                    (false, true) => b_only += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total = both + a_only + b_only + neither;
        let expected =
            (both - (both + a_only) * (both + b_only) / total)
                / (((both + a_only) + (both + b_only)) / 2.0
                    - (both + a_only) * (both + b_only) / total);
        let got = ari(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn ari_rejects_length_mismatch() {
        assert!(ari(&[0, 1], &[0]).is_err());
    }
}
