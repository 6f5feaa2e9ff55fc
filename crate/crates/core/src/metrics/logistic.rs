//! Four-parameter logistic mapping from raw predictions to the MOS scale,
//! fitted by damped Gauss-Newton (Levenberg-Marquardt).

use serde::{Deserialize, Serialize};

use super::{is_constant, pearson, std_dev, validate_pair, MetricError, Result};

const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const MAX_DAMPING: f64 = 1e16;

/// `(eta1 - eta2) / (1 + exp(-(x - eta3) / eta4)) + eta2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPlParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
}

impl FourPlParams {
    pub fn apply(&self, x: f64) -> f64 {
        (self.eta1 - self.eta2) * logistic((x - self.eta3) / self.eta4) + self.eta2
    }

    fn as_array(&self) -> [f64; 4] {
        [self.eta1, self.eta2, self.eta3, self.eta4]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            eta1: a[0],
            eta2: a[1],
            eta3: a[2],
            eta4: a[3],
        }
    }
}

fn logistic(z: f64) -> f64 {
    crate::grad::stable_sigmoid(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPlFit {
    pub params: FourPlParams,
    /// Residual sum of squares at `params`.
    pub sse: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `params` is then the best
    /// point seen.
    pub converged: bool,
}

fn sse(p: &FourPlParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - p.apply(xi);
            r * r
        })
        .sum()
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Solve a 4x4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Normal equations `J^T J` and `J^T r` of the residuals `y - f(x)`.
fn normal_equations(p: &FourPlParams, x: &[f64], y: &[f64]) -> ([[f64; 4]; 4], [f64; 4]) {
    let mut jtj = [[0.0; 4]; 4];
    let mut jtr = [0.0; 4];
    let span = p.eta1 - p.eta2;
    for (&xi, &yi) in x.iter().zip(y) {
        let u = (xi - p.eta3) / p.eta4;
        let s = logistic(u);
        let ds = s * (1.0 - s);
        let j = [
            s,
            1.0 - s,
            -span * ds / p.eta4,
            -span * ds * u / p.eta4,
        ];
        let r = yi - (span * s + p.eta2);
        for a in 0..4 {
            jtr[a] += j[a] * r;
            for b in 0..4 {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    (jtj, jtr)
}

/// Least-squares fit of `y ~ 4PL(yhat)`.
///
/// Starts from `eta1 = max(y)`, `eta2 = min(y)`, `eta3 = median(yhat)`,
/// `eta4 = sd(yhat) / 4` and applies Marquardt-scaled damping that starts at
/// 1e-3, grows tenfold on a rejected step and shrinks tenfold on an accepted
/// one. Stops once an accepted step has norm below 1e-10, when no damping can
/// reduce the residual any further, or after 500 iterations.
pub fn fit_4pl(yhat: &[f64], y: &[f64]) -> Result<FourPlFit> {
    validate_pair(yhat, y, 5)?;
    let spread = std_dev(yhat);
    if is_constant(yhat) || spread == 0.0 {
        return Err(MetricError::ZeroVariance("prediction"));
    }
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut params = FourPlParams {
        eta1: y_max,
        eta2: y_min,
        eta3: median(yhat),
        eta4: spread / 4.0,
    };
    let mut best = sse(&params, yhat, y);
    let mut damping = INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&params, yhat, y);
        let mut accepted = false;
        while damping <= MAX_DAMPING {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += damping * jtj[k][k].max(1e-12);
            }
            let Some(step) = solve4(a, jtr) else {
                damping *= 10.0;
                continue;
            };
            let cur = params.as_array();
            let cand = FourPlParams::from_array(std::array::from_fn(|k| cur[k] + step[k]));
            let cand_sse = if cand.eta4 != 0.0 && cand.eta4.is_finite() {
                sse(&cand, yhat, y)
            } else {
                f64::INFINITY
            };
            if cand_sse.is_finite() && cand_sse < best {
                params = cand;
                best = cand_sse;
                damping = (damping / 10.0).max(1e-15);
                accepted = true;
                let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                if norm < STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // no damped step lowers the residual: a minimum to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    if best.is_nan() {
        return Err(MetricError::Fit("residual is not a number".into()));
    }
    Ok(FourPlFit {
        params,
        sse: best,
        iterations,
        converged,
    })
}

/// PLCC after mapping `yhat` through its fitted 4PL curve.
pub fn plcc_after_fit(yhat: &[f64], y: &[f64]) -> Result<f64> {
    let fit = fit_4pl(yhat, y)?;
    let mapped: Vec<f64> = yhat.iter().map(|&v| fit.params.apply(v)).collect();
    // a flat fitted curve carries no ranking information
    if is_constant(&mapped) {
        return Err(MetricError::ZeroVariance("fitted prediction"));
    }
    pearson(&mapped, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> FourPlParams {
        FourPlParams {
            eta1: 1.0,
            eta2: 0.0,
            eta3: 0.5,
            eta4: 0.1,
        }
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let x = grid(50);
        let y: Vec<f64> = x.iter().map(|&v| truth().apply(v)).collect();
        let fit = fit_4pl(&x, &y).unwrap();
        let got = fit.params.as_array();
        for (g, t) in got.iter().zip(truth().as_array()) {
            assert!((g - t).abs() <= 1e-3 * t.abs().max(1.0), "{got:?}");
        }
        assert!(fit.sse < 1e-12, "{}", fit.sse);
        assert!(plcc_after_fit(&x, &y).unwrap() >= 0.999);
    }

    #[test]
    fn identity_predictions_give_unit_plcc() {
        let x = grid(40);
        let plcc = plcc_after_fit(&x, &x).unwrap();
        assert!((plcc - 1.0).abs() < 1e-9, "{plcc}");
    }

    #[test]
    fn constant_predictions_are_rejected() {
        let x = vec![0.3; 10];
        let y = grid(10);
        assert_eq!(
            fit_4pl(&x, &y).unwrap_err(),
            MetricError::ZeroVariance("prediction")
        );
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit_4pl(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(MetricError::TooShort { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn increasing_when_eta1_above_eta2() {
        let x = grid(30);
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).tanh() + 0.1 * v).collect();
        let p = fit_4pl(&x, &y).unwrap().params;
        assert!(p.eta1 > p.eta2 && p.eta4 > 0.0, "{p:?}");
        let g: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 * 0.015).map(|v| p.apply(v)).collect();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn anti_correlated_predictions() {
        let x = grid(30);
        let y: Vec<f64> = x.iter().map(|&v| -truth().apply(v)).collect();
        let plcc = plcc_after_fit(&x, &y).unwrap();
        assert!(plcc > 0.999, "{plcc}");
    }
}
