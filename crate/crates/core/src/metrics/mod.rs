//! Exact rank-correlation metrics used for evaluation.
//!
//! Conventions: covariance and standard deviation use `1/n`; SRCC uses
//! average ranks for ties; KRCC is Kendall's tau-a (no tie correction).

mod logistic;

use std::cmp::Ordering;

use thiserror::Error;

pub use logistic::{fit_4pl, plcc_after_fit, FourPlFit, FourPlParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("score vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} scores, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("scores must be finite")]
    NonFinite,
    #[error("degenerate input: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("logistic fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub(crate) fn validate_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < min_len {
        return Err(MetricError::TooShort {
            needed: min_len,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Population standard deviation.
pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Pearson linear correlation `cov(y, yhat) / (sd(y) sd(yhat))`.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    validate_pair(y, yhat, 2)?;
    let (my, mp) = (mean(y), mean(yhat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if is_constant(y) || sxx == 0.0 {
        return Err(MetricError::ZeroVariance("ground truth"));
    }
    if is_constant(yhat) || syy == 0.0 {
        return Err(MetricError::ZeroVariance("prediction"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn descending(xs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[j].total_cmp(&xs[i]));
    order
}

/// `1 + #{j : x_i < x_j}`: rank 1 is the largest value, ties share the
/// smallest rank of their group.
pub fn rank_desc(xs: &[f64]) -> Vec<usize> {
    let order = descending(xs);
    let mut ranks = vec![0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            ranks[i] = start + 1;
        }
        start = end;
    }
    ranks
}

/// Descending ranks with ties replaced by the mean rank of their group.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let order = descending(xs);
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(y: &[f64], yhat: &[f64]) -> Result<f64> {
    validate_pair(y, yhat, 2)?;
    pearson(&average_ranks(y), &average_ranks(yhat))
}

fn merge_count(xs: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut xs[..mid], buf) + merge_count(&mut xs[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if xs[j] < xs[i] {
            swaps += (mid - i) as u64;
            buf.push(xs[j]);
            j += 1;
        } else {
            buf.push(xs[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&xs[i..mid]);
    buf.extend_from_slice(&xs[j..n]);
    xs.copy_from_slice(buf);
    swaps
}

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-a, `2/(n(n-1)) * sum_{i<j} sign(dy) sign(dyhat)`, via
/// Knight's O(n log n) inversion count.
pub fn kendall(y: &[f64], yhat: &[f64]) -> Result<f64> {
    validate_pair(y, yhat, 2)?;
    let n = y.len();
    // +0.0 folds -0.0 into 0.0 so total_cmp agrees with ==
    let mut pairs: Vec<(f64, f64)> = y.iter().zip(yhat).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tie_pairs(&xs);
    let tied_xy = tie_pairs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(n);
    let swaps = merge_count(&mut ys, &mut buf);
    let tied_y = tie_pairs(&ys);

    let total = (n * (n - 1) / 2) as i64;
    let score = total - tied_x as i64 - tied_y as i64 + tied_xy as i64 - 2 * swaps as i64;
    Ok(tau_from_score(score, n))
}

pub(crate) fn tau_from_score(score: i64, n: usize) -> f64 {
    2.0 * score as f64 / (n as f64 * (n as f64 - 1.0))
}

/// Two-alternative forced-choice agreement `q p + (1 - q)(1 - p)` between a
/// human preference rate `q` and a model preference `p`.
pub fn two_afc(q: f64, p: f64) -> Result<f64> {
    for (name, value) in [("q", q), ("p", p)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricError::OutOfRange { name, value });
        }
    }
    Ok(q * p + (1.0 - q) * (1.0 - p))
}

/// Fraction of pairs with distinct ground truth that the predictions order
/// the same way. Prediction ties count as misses.
pub fn pairwise_accuracy(y: &[f64], yhat: &[f64]) -> Result<f64> {
    validate_pair(y, yhat, 2)?;
    let (mut hits, mut total) = (0u64, 0u64);
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            let truth = y[i].partial_cmp(&y[j]).unwrap_or(Ordering::Equal);
            if truth == Ordering::Equal {
                continue;
            }
            total += 1;
            if yhat[i].partial_cmp(&yhat[j]) == Some(truth) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricError::ZeroVariance("ground truth"));
    }
    Ok(hits as f64 / total as f64)
}
