//! Self-checks of the differentiable objectives: analytic gradients against
//! central differences, and smooth correlations against their exact
//! counterparts at low temperature.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{grad_check, GradError, Tape, Value};
use crate::metrics;
use crate::objectives::{
    pairwise_bce, pearson_on_tape, regularizer, smooth_kendall, smooth_rank, smooth_spearman,
    total_loss, LossConfig, ObjectiveError,
};
use crate::pairs::{PairSet, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst error observed.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteConfig {
    pub points: usize,
    pub batch: usize,
    pub temperature: f64,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            points: 100,
            batch: 8,
            temperature: 0.5,
            step: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

type Objective = fn(&mut Tape, &[Value], &[f64], f64) -> Result<Value, ObjectiveError>;

fn all_pairs(n: usize) -> PairSet {
    let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    PairSet::new(Strategy::AllDiffering, pairs)
}

fn mean_bce(tape: &mut Tape, p: &[Value], y: &[f64], t: f64) -> Result<Value, ObjectiveError> {
    let n = p.len();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            terms.push(pairwise_bce(tape, p[i], p[j], y[i], y[j], t)?);
        }
    }
    let v = tape.stack(&terms)?;
    Ok(tape.mean(v)?)
}

fn spearman_obj(tape: &mut Tape, p: &[Value], y: &[f64], t: f64) -> Result<Value, ObjectiveError> {
    smooth_spearman(tape, y, p, t)
}

fn kendall_obj(tape: &mut Tape, p: &[Value], y: &[f64], t: f64) -> Result<Value, ObjectiveError> {
    smooth_kendall(tape, y, p, t)
}

fn pearson_reg(tape: &mut Tape, p: &[Value], y: &[f64], _t: f64) -> Result<Value, ObjectiveError> {
    let r = pearson_on_tape(tape, y, p)?;
    regularizer(tape, r, 1.0)
}

fn total_obj(tape: &mut Tape, p: &[Value], y: &[f64], t: f64) -> Result<Value, ObjectiveError> {
    let cfg = LossConfig {
        temperature: t,
        ..LossConfig::default()
    };
    Ok(total_loss(tape, p, y, &all_pairs(p.len()), &cfg)?.total)
}

pub const GRADIENT_CHECKS: [(&str, Objective); 5] = [
    ("pairwise_bce", mean_bce),
    ("smooth_spearman", spearman_obj),
    ("smooth_kendall", kendall_obj),
    ("pearson_regularizer", pearson_reg),
    ("total_loss", total_obj),
];

/// Worst relative gradient error of each objective over random predictions
/// and targets. A point where the gradient cannot be checked counts as an
/// infinite error.
pub fn gradient_suite(cfg: &GradSuiteConfig) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.points)
        .map(|_| {
            let preds = (0..cfg.batch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mos = (0..cfg.batch).map(|_| rng.random_range(1.0..5.0)).collect();
            (preds, mos)
        })
        .collect();
    GRADIENT_CHECKS
        .iter()
        .map(|&(name, f)| {
            let worst = points.iter().fold(0.0_f64, |worst, (preds, mos)| {
                let err = grad_check(
                    |tape, x| {
                        let p = (0..preds.len())
                            .map(|k| tape.index(x, k))
                            .collect::<Result<Vec<_>, _>>()?;
                        f(tape, &p, mos, cfg.temperature).map_err(|e| match e {
                            ObjectiveError::Grad(g) => g,
                            other => GradError::Undefined(other.to_string()),
                        })
                    },
                    preds,
                    cfg.step,
                )
                .unwrap_or(f64::INFINITY);
                worst.max(err)
            });
            CheckOutcome::new(name, worst, cfg.tolerance)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSuiteConfig {
    pub vectors: usize,
    pub len: usize,
    pub temperature: f64,
    pub min_gap: f64,
    pub tolerance: f64,
    pub rank_sum_tolerance: f64,
    pub seed: u64,
}

impl Default for LimitSuiteConfig {
    fn default() -> Self {
        Self {
            vectors: 50,
            len: 16,
            temperature: 1e-4,
            min_gap: 0.1,
            tolerance: 1e-3,
            rank_sum_tolerance: 1e-12,
            seed: 0,
        }
    }
}

/// `len` values, shuffled, with every pairwise gap at least `min_gap`.
pub fn well_separated<R: Rng + ?Sized>(rng: &mut R, len: usize, min_gap: f64) -> Vec<f64> {
    let mut acc = rng.random_range(-1.0..1.0);
    let mut v: Vec<f64> = (0..len)
        .map(|_| {
            acc += min_gap + rng.random_range(0.0..min_gap);
            acc
        })
        .collect();
    v.shuffle(rng);
    v
}

type Correlation = fn(&mut Tape, &[f64], &[Value], f64) -> Result<Value, ObjectiveError>;

fn smooth_value(
    f: Correlation,
    target: &[f64],
    preds: &[f64],
    t: f64,
) -> Option<f64> {
    let mut tape = Tape::new();
    let p = preds
        .iter()
        .map(|&x| tape.constant(x))
        .collect::<Result<Vec<_>, _>>()
        .ok()?;
    let v = f(&mut tape, target, &p, t).ok()?;
    Some(tape.scalar(v))
}

/// Smooth Spearman and Kendall against the exact coefficients on
/// well-separated predictions, and conservation of the smooth rank sum.
pub fn limit_suite(cfg: &LimitSuiteConfig) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rho_err = 0.0_f64;
    let mut tau_err = 0.0_f64;
    let mut sum_err = 0.0_f64;
    let n = cfg.len;
    let expected_sum = (n * (n + 1)) as f64 / 2.0;
    for k in 0..cfg.vectors {
        let preds = well_separated(&mut rng, n, cfg.min_gap);
        // every other target vector is coarsely quantised to contain ties
        let target: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(1.0..5.0);
                if k % 2 == 1 {
                    v.round()
                } else {
                    v
                }
            })
            .collect();
        let exact_rho = metrics::spearman(&target, &preds).ok();
        let exact_tau = metrics::kendall(&target, &preds).ok();
        let soft_rho = smooth_value(smooth_spearman, &target, &preds, cfg.temperature);
        let soft_tau = smooth_value(smooth_kendall, &target, &preds, cfg.temperature);
        rho_err = rho_err.max(match (exact_rho, soft_rho) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        });
        tau_err = tau_err.max(match (exact_tau, soft_tau) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        });

        let t = 10f64.powf(rng.random_range(-4.0..2.0));
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let err = raw
            .iter()
            .map(|&x| tape.constant(x))
            .collect::<Result<Vec<_>, _>>()
            .ok()
            .and_then(|p| smooth_rank(&mut tape, &p, t).ok())
            .map_or(f64::INFINITY, |ranks| {
                let s: f64 = ranks.iter().map(|&r| tape.scalar(r)).sum();
                (s - expected_sum).abs()
            });
        sum_err = sum_err.max(err);
    }
    vec![
        CheckOutcome::new("smooth_spearman_limit", rho_err, cfg.tolerance),
        CheckOutcome::new("smooth_kendall_limit", tau_err, cfg.tolerance),
        CheckOutcome::new("smooth_rank_sum", sum_err, cfg.rank_sum_tolerance),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradient_suite_passes() {
        let cfg = GradSuiteConfig {
            points: 5,
            ..GradSuiteConfig::default()
        };
        let out = gradient_suite(&cfg);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|c| c.passed), "{out:?}");
    }

    #[test]
    fn small_limit_suite_passes() {
        let cfg = LimitSuiteConfig {
            vectors: 6,
            ..LimitSuiteConfig::default()
        };
        let out = limit_suite(&cfg);
        assert!(out.iter().all(|c| c.passed), "{out:?}");
    }

    #[test]
    fn separated_values_respect_the_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = well_separated(&mut rng, 16, 0.1);
        for i in 0..16 {
            for j in i + 1..16 {
                assert!((v[i] - v[j]).abs() >= 0.1 - 1e-12);
            }
        }
    }
}
