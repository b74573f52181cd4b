//! Scalar metrics. Each function is total on well-formed input and returns
//! `NaN` only where noted.

use std::collections::HashMap;

/// Unigram F1 over whitespace tokens with clipped counts. Two empty texts
/// score 1, one empty text scores 0.
pub fn rouge1(candidate: &str, reference: &str) -> f64 {
    fn count(s: &str) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for w in s.split_whitespace() {
            *m.entry(w).or_default() += 1;
        }
        m
    }
    let (c, r) = (count(candidate), count(reference));
    let (nc, nr): (usize, usize) = (c.values().sum(), r.values().sum());
    if nc == 0 && nr == 0 {
        return 1.0;
    }
    if nc == 0 || nr == 0 {
        return 0.0;
    }
    let overlap: usize = c.iter().map(|(w, &k)| k.min(r.get(w).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / nc as f64;
    let rec = overlap as f64 / nr as f64;
    2.0 * p * rec / (p + rec)
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count
/// one half. `NaN` when either class is absent.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return f64::NAN;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    mean(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t))).sqrt()
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    mean(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()))
}

/// Arithmetic mean; `NaN` for an empty input.
pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_hand_count() {
        assert!((rouge1("a b b", "a b c") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1("x y", "x y"), 1.0);
        assert_eq!(rouge1("x y", "z"), 0.0);
        assert_eq!(rouge1("", "z"), 0.0);
    }

    #[test]
    fn auroc_edges() {
        assert_eq!(auroc(&[0.1, 0.9], &[false, true]), 1.0);
        assert_eq!(auroc(&[0.9, 0.1], &[false, true]), 0.0);
        assert_eq!(auroc(&[0.5, 0.5], &[false, true]), 0.5);
        assert!(auroc(&[0.5], &[true]).is_nan());
    }

    #[test]
    fn errors() {
        assert!((rmse(&[1.0, 3.0], &[0.0, 0.0]) - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mae(&[1.0, -3.0], &[0.0, 0.0]), 2.0);
    }
}
