//! Training objectives as graph builders on a [`Tape`].
//!
//! The pairwise term is a Bradley-Terry binary cross-entropy over the pairs
//! of a [`PairSet`]. The listwise terms penalise `|1 - corr|^p` for three
//! correlation coefficients measured on the whole mini-batch:
//!
//! - Pearson, differentiable as is;
//! - Spearman, with ranks smoothed as `1 + sum_{j != i} sigmoid(-(y_i - y_j) / T)`;
//! - Kendall, with `sign(d)` smoothed as `tanh(d / T)`.
//!
//! Only the prediction side is smoothed; the ground-truth side uses exact
//! (average) ranks and exact signs, as constants.
//!
//! The rank sigmoid is written with a negated argument so that its `T -> 0`
//! limit is the indicator `1[y_i < y_j]` it replaces and rank 1 goes to the
//! largest score. Printed with a positive argument, the same sigmoid would
//! approximate `1[y_i > y_j]` and reverse the ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape, Value};
use crate::metrics::average_ranks;
use crate::pairs::PairSet;

/// Lower clamp applied to probabilities before taking their log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("degenerate batch: {0} has zero variance")]
    Degenerate(&'static str),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error("need at least 2 scores, got {0}")]
    TooShort(usize),
    #[error("predictions and targets differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pair ({0}, {1}) is out of range for a batch of {2}")]
    PairOutOfRange(usize, usize, usize),
    #[error("no pairs to train on")]
    NoPairs,
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// How the pairwise cross-entropy is reduced over the pairs of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature shared by the Bradley-Terry sigmoid, the rank sigmoid and
    /// the sign tanh unless overridden below.
    pub temperature: f64,
    pub rank_temperature: Option<f64>,
    pub sign_temperature: Option<f64>,
    pub lambda: f64,
    pub p_norm: f64,
    pub enable_r: bool,
    pub enable_rho: bool,
    pub enable_tau: bool,
    pub pair_reduction: PairReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            rank_temperature: None,
            sign_temperature: None,
            lambda: 1.0,
            p_norm: 1.0,
            enable_r: true,
            enable_rho: true,
            enable_tau: true,
            pair_reduction: PairReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("temperature", Some(self.temperature)),
            ("rank_temperature", self.rank_temperature),
            ("sign_temperature", self.sign_temperature),
        ] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(ObjectiveError::Config(format!("{name} must be positive, got {t}")));
                }
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ObjectiveError::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.p_norm >= 1.0 && self.p_norm.is_finite()) {
            return Err(ObjectiveError::Config(format!(
                "p_norm must be at least 1, got {}",
                self.p_norm
            )));
        }
        Ok(())
    }

    pub fn rank_t(&self) -> f64 {
        self.rank_temperature.unwrap_or(self.temperature)
    }

    pub fn sign_t(&self) -> f64 {
        self.sign_temperature.unwrap_or(self.temperature)
    }
}

/// `P(y_i > y_j) = 1 / (1 + exp(-(yhat_i - yhat_j) / T))`.
pub fn bt_probability(tape: &mut Tape, yhat_i: Value, yhat_j: Value, t: f64) -> Result<Value> {
    let d = tape.sub(yhat_i, yhat_j)?;
    let z = tape.div_const(d, t)?;
    Ok(tape.sigmoid(z)?)
}

/// Binary cross-entropy of the Bradley-Terry probability against the
/// ground-truth order. Equal ground truth contributes exactly zero.
pub fn pairwise_bce(
    tape: &mut Tape,
    yhat_i: Value,
    yhat_j: Value,
    y_i: f64,
    y_j: f64,
    t: f64,
) -> Result<Value> {
    if y_i == y_j {
        return Ok(tape.constant(0.0)?);
    }
    // 1 - sigmoid(z) is evaluated as sigmoid(-z) to keep precision in the tail
    let p = if y_i > y_j {
        bt_probability(tape, yhat_i, yhat_j, t)?
    } else {
        bt_probability(tape, yhat_j, yhat_i, t)?
    };
    let p = tape.clamp_min(p, LOG_FLOOR)?;
    let lp = tape.log(p)?;
    Ok(tape.neg(lp)?)
}

/// `rank_i = 1 + sum_{j != i} sigmoid(-(y_i - y_j) / T)` for scalar nodes.
pub fn smooth_rank(tape: &mut Tape, scores: &[Value], t: f64) -> Result<Vec<Value>> {
    let n = scores.len();
    if n < 2 {
        return Err(ObjectiveError::TooShort(n));
    }
    let mut terms: Vec<Vec<Value>> = vec![Vec::with_capacity(n - 1); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = tape.sub(scores[i], scores[j])?;
            let below = tape.div_const(d, -t)?;
            let above = tape.div_const(d, t)?;
            // sigmoid(-(y_i - y_j)/T) counts j above i; its mirror counts i above j
            let ij = tape.sigmoid(below)?;
            let ji = tape.sigmoid(above)?;
            terms[i].push(ij);
            terms[j].push(ji);
        }
    }
    terms
        .into_iter()
        .map(|ts| {
            let v = tape.stack(&ts)?;
            let s = tape.sum(v)?;
            Ok(tape.shift(s, 1.0)?)
        })
        .collect()
}

/// Pearson correlation between a constant target vector and scalar
/// prediction nodes, with the prediction side on the tape.
pub fn pearson_on_tape(tape: &mut Tape, target: &[f64], preds: &[Value]) -> Result<Value> {
    check_lengths(target.len(), preds.len())?;
    let n = target.len() as f64;
    let ty = target.iter().sum::<f64>() / n;
    let centred: Vec<f64> = target.iter().map(|v| v - ty).collect();
    let syy: f64 = centred.iter().map(|v| v * v).sum();
    if syy == 0.0 || target.windows(2).all(|w| w[0] == w[1]) {
        return Err(ObjectiveError::Degenerate("ground truth"));
    }
    let p = tape.stack(preds)?;
    let p_vals = tape.payload(p).as_slice();
    if p_vals.windows(2).all(|w| w[0] == w[1]) {
        return Err(ObjectiveError::Degenerate("prediction"));
    }
    let m = tape.mean(p)?;
    let pc = tape.sub(p, m)?;
    let var = tape.dot(pc, pc)?;
    if tape.scalar(var) == 0.0 {
        return Err(ObjectiveError::Degenerate("prediction"));
    }
    let yc = tape.constant(centred)?;
    let cov = tape.dot(pc, yc)?;
    let joint = tape.scale(var, syy)?;
    let denom = tape.pow(joint, 0.5)?;
    Ok(tape.div(cov, denom)?)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(ObjectiveError::LengthMismatch(a, b));
    }
    if a < 2 {
        return Err(ObjectiveError::TooShort(a));
    }
    Ok(())
}

/// Pearson correlation of the exact target ranks and the smooth prediction
/// ranks.
pub fn smooth_spearman(tape: &mut Tape, target: &[f64], preds: &[Value], t: f64) -> Result<Value> {
    check_lengths(target.len(), preds.len())?;
    let ranks = smooth_rank(tape, preds, t)?;
    pearson_on_tape(tape, &average_ranks(target), &ranks)
}

/// `tanh(d / T)`.
pub fn smooth_sign(tape: &mut Tape, diff: Value, t: f64) -> Result<Value> {
    let z = tape.div_const(diff, t)?;
    Ok(tape.tanh(z)?)
}

/// `2 / (n(n-1)) * sum_{i<j} sign(y_i - y_j) tanh((yhat_i - yhat_j) / T)`.
pub fn smooth_kendall(tape: &mut Tape, target: &[f64], preds: &[Value], t: f64) -> Result<Value> {
    check_lengths(target.len(), preds.len())?;
    let n = target.len();
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let truth = target[i] - target[j];
            if truth == 0.0 {
                continue;
            }
            let d = tape.sub(preds[i], preds[j])?;
            let s = smooth_sign(tape, d, t)?;
            terms.push(if truth > 0.0 { s } else { tape.neg(s)? });
        }
    }
    let total = if terms.is_empty() {
        tape.constant(0.0)?
    } else {
        let v = tape.stack(&terms)?;
        tape.sum(v)?
    };
    Ok(tape.scale(total, 2.0 / (n as f64 * (n as f64 - 1.0)))?)
}

/// `|1 - corr|^p`.
pub fn regularizer(tape: &mut Tape, corr: Value, p: f64) -> Result<Value> {
    if !(p >= 1.0) {
        return Err(ObjectiveError::Config(format!("p_norm must be at least 1, got {p}")));
    }
    let neg = tape.neg(corr)?;
    let gap = tape.shift(neg, 1.0)?;
    let a = tape.abs(gap)?;
    if p == 1.0 {
        Ok(a)
    } else {
        Ok(tape.pow(a, p)?)
    }
}

/// Loss node of one mini-batch plus the forward values of its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: Value,
    pub pairwise: f64,
    /// Regularizer values `|1 - corr|^p`; `None` when the term is disabled.
    pub r_pearson: Option<f64>,
    pub r_spearman: Option<f64>,
    pub r_kendall: Option<f64>,
}

impl LossTerms {
    pub fn regularizer_sum(&self) -> f64 {
        [self.r_pearson, self.r_spearman, self.r_kendall]
            .into_iter()
            .flatten()
            .fold(0.0, |acc, r| acc + r)
    }
}

/// Regularizer on a correlation that may be undefined for this batch. An
/// undefined correlation (constant predictions or targets) yields the
/// constant penalty 1, so the term contributes no gradient.
fn guarded_regularizer(
    tape: &mut Tape,
    corr: Result<Value>,
    p: f64,
) -> Result<Value> {
    match corr {
        Ok(c) => regularizer(tape, c, p),
        Err(ObjectiveError::Degenerate(_)) => Ok(tape.constant(1.0)?),
        Err(e) => Err(e),
    }
}

/// Pairwise cross-entropy (mean or sum over `pairs`) plus `lambda` times the
/// enabled listwise regularizers over the whole batch.
pub fn total_loss(
    tape: &mut Tape,
    preds: &[Value],
    mos: &[f64],
    pairs: &PairSet,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    check_lengths(mos.len(), preds.len())?;
    if pairs.is_empty() {
        return Err(ObjectiveError::NoPairs);
    }
    let n = preds.len();
    let mut bce = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs.pairs() {
        if i >= n || j >= n {
            return Err(ObjectiveError::PairOutOfRange(i, j, n));
        }
        bce.push(pairwise_bce(tape, preds[i], preds[j], mos[i], mos[j], cfg.temperature)?);
    }
    let stacked = tape.stack(&bce)?;
    let pairwise = match cfg.pair_reduction {
        PairReduction::Mean => tape.mean(stacked)?,
        PairReduction::Sum => tape.sum(stacked)?,
    };

    let mut regs = Vec::new();
    let mut r_pearson = None;
    let mut r_spearman = None;
    let mut r_kendall = None;
    if cfg.enable_r {
        let corr = pearson_on_tape(tape, mos, preds);
        let r = guarded_regularizer(tape, corr, cfg.p_norm)?;
        r_pearson = Some(tape.scalar(r));
        regs.push(r);
    }
    if cfg.enable_rho {
        let corr = smooth_spearman(tape, mos, preds, cfg.rank_t());
        let r = guarded_regularizer(tape, corr, cfg.p_norm)?;
        r_spearman = Some(tape.scalar(r));
        regs.push(r);
    }
    if cfg.enable_tau {
        let corr = smooth_kendall(tape, mos, preds, cfg.sign_t());
        let r = guarded_regularizer(tape, corr, cfg.p_norm)?;
        r_kendall = Some(tape.scalar(r));
        regs.push(r);
    }

    let total = if regs.is_empty() || cfg.lambda == 0.0 {
        pairwise
    } else {
        let v = tape.stack(&regs)?;
        let s = tape.sum(v)?;
        let weighted = tape.scale(s, cfg.lambda)?;
        tape.add(pairwise, weighted)?
    };
    Ok(LossTerms {
        total,
        pairwise: tape.scalar(pairwise),
        r_pearson,
        r_spearman,
        r_kendall,
    })
}
