//! Evaluation metrics: RMSE over a coordinate set and ranking metrics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::folds::Coord;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One emitted metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub fold: usize,
    pub value: f64,
}

/// Root mean square of `truth − pred` over `test`.
pub fn rmse(truth: &Matrix, pred: &Matrix, test: &[Coord]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("rmse over an empty test set".into()));
    }
    if truth.dim() != pred.dim() {
        return Err(Error::Shape { op: "rmse", left: truth.dim(), right: pred.dim() });
    }
    let (r, c) = truth.dim();
    let mut acc = 0.0;
    for &(i, j) in test {
        if i >= r || j >= c {
            return Err(Error::Domain(format!("test coordinate ({i}, {j}) outside {r}x{c}")));
        }
        acc += (truth[[i, j]] - pred[[i, j]]).powi(2);
    }
    Ok((acc / test.len() as f64).sqrt())
}

/// RMSE against a list of true values aligned with `test`.
pub fn rmse_values(truth: &[f64], pred: &Matrix, test: &[Coord]) -> Result<f64> {
    if test.is_empty() || truth.len() != test.len() {
        return Err(Error::Domain("rmse needs one truth value per test coordinate".into()));
    }
    let acc: f64 = test.iter().zip(truth).map(|(c, t)| (t - pred[[c.0, c.1]]).powi(2)).sum();
    Ok((acc / test.len() as f64).sqrt())
}

/// Items ordered by descending score, ties by ascending index, skipping `exclude`.
pub fn ranking(scores: &[f64], exclude: &HashSet<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    idx
}

/// Fraction of `test` found in the top `n` non-training items; `None` when
/// `test` is empty.
pub fn recall_at_n(scores: &[f64], train: &HashSet<usize>, test: &HashSet<usize>, n: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = ranking(scores, train).into_iter().take(n).filter(|i| test.contains(i)).count();
    Some(hits as f64 / test.len() as f64)
}

/// Mean recall over rows with a non-empty test set; `None` if there are none.
pub fn mean_recall_at_n(
    scores: &Matrix,
    train: &[HashSet<usize>],
    test: &[HashSet<usize>],
    n: usize,
) -> Option<f64> {
    let vals: Vec<f64> = scores
        .rows()
        .into_iter()
        .zip(train.iter().zip(test))
        .filter_map(|(row, (tr, te))| recall_at_n(row.as_slice()?, tr, te, n))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// 1-based ranks of each `hidden` item among the candidates not in `train`.
pub fn hidden_ranks(scores: &[f64], train: &HashSet<usize>, hidden: &[usize]) -> Vec<usize> {
    let order = ranking(scores, train);
    let mut pos = vec![usize::MAX; scores.len()];
    for (r, i) in order.iter().enumerate() {
        pos[*i] = r + 1;
    }
    hidden.iter().map(|h| pos[*h]).collect()
}

/// For `N = 1..=n_max`, the fraction of ranks `≤ N`.
pub fn probability_at_n(ranks: &[usize], n_max: usize) -> Result<Vec<f64>> {
    if ranks.contains(&0) {
        return Err(Error::Domain("ranks are 1-based".into()));
    }
    if ranks.is_empty() {
        return Ok(vec![0.0; n_max]);
    }
    let mut counts = vec![0usize; n_max + 1];
    for r in ranks {
        if *r <= n_max {
            counts[*r] += 1;
        }
    }
    let mut acc = 0usize;
    Ok((1..=n_max)
        .map(|n| {
            acc += counts[n];
            acc as f64 / ranks.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn set(v: &[usize]) -> HashSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn rmse_examples() {
        let t = array![[1.0, 2.0]];
        let p = array![[2.0, 4.0]];
        assert_abs_diff_eq!(rmse(&t, &p, &[(0, 0), (0, 1)]).unwrap(), 2.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(rmse(&t, &t, &[(0, 0)]).unwrap(), 0.0);
        let shifted = &t + 0.3;
        assert_abs_diff_eq!(rmse(&t, &shifted, &[(0, 0), (0, 1)]).unwrap(), 0.3, epsilon = 1e-15);
        assert!(rmse(&t, &p, &[]).is_err());
        assert!(rmse(&t, &p, &[(1, 0)]).is_err());
        assert_eq!(rmse_values(&[1.0, 2.0], &p, &[(0, 0), (0, 1)]).unwrap(), rmse(&t, &p, &[(0, 0), (0, 1)]).unwrap());
    }

    #[test]
    fn recall_examples() {
        let s = [0.9, 0.1, 0.8, 0.2, 0.3];
        assert_eq!(recall_at_n(&s, &set(&[]), &set(&[0, 3]), 2), Some(0.5));
        assert_eq!(recall_at_n(&s, &set(&[]), &set(&[0, 2]), 2), Some(1.0));
        assert_eq!(recall_at_n(&s, &set(&[]), &set(&[1]), 3), Some(0.0));
        // training items leave the ranking
        assert_eq!(recall_at_n(&s, &set(&[0, 2]), &set(&[4, 3]), 2), Some(1.0));
        assert_eq!(recall_at_n(&s, &set(&[]), &set(&[]), 2), None);
        // ties go to the lower index
        assert_eq!(recall_at_n(&[1.0, 1.0, 1.0], &set(&[]), &set(&[1]), 1), Some(0.0));
        assert_eq!(recall_at_n(&[1.0, 1.0, 1.0], &set(&[]), &set(&[0]), 1), Some(1.0));
    }

    #[test]
    fn mean_recall_skips_empty_users() {
        let scores = array![[0.9, 0.1, 0.8], [0.1, 0.2, 0.3]];
        let train = vec![set(&[]), set(&[])];
        let test = vec![set(&[0]), set(&[])];
        assert_eq!(mean_recall_at_n(&scores, &train, &test, 1), Some(1.0));
        assert_eq!(mean_recall_at_n(&scores, &train, &[set(&[]), set(&[])], 1), None);
    }

    #[test]
    fn probability_examples() {
        assert!(probability_at_n(&[1, 1, 1], 5).unwrap().iter().all(|v| *v == 1.0));
        let p = probability_at_n(&[1, 50], 100).unwrap();
        assert!(p[..49].iter().all(|v| *v == 0.5));
        assert!(p[49..].iter().all(|v| *v == 1.0));
        assert!(probability_at_n(&[0], 3).is_err());
    }

    #[test]
    fn hidden_ranks_skip_training_items() {
        let s = [0.5, 0.9, 0.7, 0.1];
        assert_eq!(hidden_ranks(&s, &set(&[1]), &[2, 3, 0]), vec![1, 3, 2]);
    }

    proptest! {
        #[test]
        fn ranking_metrics_are_monotone(scores in proptest::collection::vec(-1.0f64..1.0, 5..30), seed in 0usize..1000) {
            let n = scores.len();
            let test: HashSet<usize> = (0..n).filter(|i| (i * 31 + seed) % 4 == 0).collect();
            let train: HashSet<usize> = (0..n).filter(|i| (i * 31 + seed) % 4 == 1).collect();
            prop_assume!(!test.is_empty());
            let mut prev = 0.0;
            for k in 1..=n {
                let r = recall_at_n(&scores, &train, &test, k).unwrap();
                prop_assert!(r >= prev && r <= 1.0);
                prev = r;
            }
            let hidden: Vec<usize> = test.iter().copied().collect();
            let ranks = hidden_ranks(&scores, &train, &hidden);
            let p = probability_at_n(&ranks, n).unwrap();
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(p.iter().all(|v| *v <= 1.0));
            prop_assert_eq!(*p.last().unwrap(), 1.0);
        }
    }
}
