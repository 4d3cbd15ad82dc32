//! Exhaustive brute-force oracles for the ranking metrics on all small
//! inputs, plus monotone-transform invariance.

use reguformer::eval::metrics::{ari, pr_auc, roc_auc};
use reguformer::tensor::Rng;

/// ROC AUC by enumerating every positive/negative pair.
fn roc_brute(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1.0 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0.0 {
                continue;
            }
            total += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / total
}

/// PR AUC by sweeping every distinct score as a threshold, descending,
/// with right-continuous step interpolation.
fn pr_brute(scores: &[f64], labels: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_pos: f64 = labels.iter().sum();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&s, &y) in scores.iter().zip(labels) {
            if s >= t {
                if y == 1.0 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let precision = tp / (tp + fp);
        let recall = tp / total_pos;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// ARI from pair-agreement counts.
fn ari_brute(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut a_only, mut b_only) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => a_only += 1.0,
                (false, true) => b_only += 1.0,
                (false, false) => {}
            }
        }
    }
    let total = (n * (n - 1)) as f64 / 2.0;
    let sum_rows = both + a_only;
    let sum_cols = both + b_only;
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if (max_index - expected).abs() < 1e-15 {
        return 1.0;
    }
    (both - expected) / (max_index - expected)
}

#[test]
fn roc_auc_equals_pair_enumeration_on_all_small_inputs() {
    let grid = [0.1, 0.3, 0.3, 0.7, 0.9];
    let mut rng = Rng::new(5);
    for n in 2..=8usize {
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            for _ in 0..5 {
                let scores: Vec<f64> =
                    (0..n).map(|_| grid[rng.next_below(grid.len())]).collect();
                let got = roc_auc(&scores, &labels).unwrap();
                let want = roc_brute(&scores, &labels);
                assert_eq!(got, want, "n={n} labels={labels:?} scores={scores:?}");
            }
        }
    }
}

#[test]
fn pr_auc_equals_threshold_sweep_on_all_small_inputs() {
    let grid = [0.05, 0.2, 0.2, 0.6, 0.8];
    let mut rng = Rng::new(7);
    for n in 1..=8usize {
        for mask in 1..(1u32 << n) {
            let labels: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            for _ in 0..5 {
                let scores: Vec<f64> =
                    (0..n).map(|_| grid[rng.next_below(grid.len())]).collect();
                let got = pr_auc(&scores, &labels).unwrap();
                let want = pr_brute(&scores, &labels);
                assert_eq!(got, want, "n={n} labels={labels:?} scores={scores:?}");
            }
        }
    }
}

#[test]
fn ari_equals_pair_agreement_on_all_small_partitions() {
    // all pairs of 3-valued label vectors up to n = 6, sampled beyond
    let mut rng = Rng::new(9);
    for n in 2..=6usize {
        let combos = 3usize.pow(n as u32);
        for code_a in 0..combos {
            let a: Vec<usize> = (0..n).map(|i| code_a / 3usize.pow(i as u32) % 3).collect();
            for _ in 0..3 {
                let b: Vec<usize> = (0..n).map(|_| rng.next_below(3)).collect();
                let got = ari(&a, &b).unwrap();
                let want = ari_brute(&a, &b);
                assert!(
                    (got - want).abs() < 1e-12,
                    "a={a:?} b={b:?}: {got} vs {want}"
                );
            }
        }
    }
    for n in 7..=8usize {
        for _ in 0..2000 {
            let a: Vec<usize> = (0..n).map(|_| rng.next_below(3)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.next_below(3)).collect();
            let got = ari(&a, &b).unwrap();
            let want = ari_brute(&a, &b);
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn ranking_metrics_are_monotone_invariant() {
    let mut rng = Rng::new(11);
    for _ in 0..200 {
        let n = 4 + rng.next_below(12);
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels: Vec<f64> = {
            let mut l: Vec<f64> = (0..n).map(|_| (rng.next_below(2)) as f64).collect();
            l[0] = 1.0;
            l[1] = 0.0;
            l
        };
        let exp_scores: Vec<f64> = scores.iter().map(|&s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|&s| 3.5 * s + 11.0).collect();
        for transformed in [&exp_scores, &affine] {
            assert_eq!(
                roc_auc(&scores, &labels).unwrap(),
                roc_auc(transformed, &labels).unwrap()
            );
            assert_eq!(
                pr_auc(&scores, &labels).unwrap(),
                pr_auc(transformed, &labels).unwrap()
            );
        }
    }
}
