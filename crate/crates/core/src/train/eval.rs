//! Evaluation protocol: score a whole split, then apply the exact metrics.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::grad::stable_sigmoid;
use crate::metrics::{self, plcc_after_fit, MetricError};
use crate::scorer::MlpScorer;
use crate::synth::Dataset;

/// Metrics of one split. A metric that is undefined for these predictions
/// (for instance all predictions equal) is `None`, and `failure` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub pair_acc: Option<f64>,
    pub failure: Option<String>,
}

impl Evaluation {
    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Metrics of predictions `yhat` against ground truth `mos`.
pub fn evaluate_predictions(yhat: &[f64], mos: &[f64]) -> Evaluation {
    let mut failures = Vec::new();
    let mut keep = |name: &str, r: Result<f64, MetricError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            failures.push(format!("{name}: {e}"));
            None
        }
    };
    let plcc = keep("plcc", plcc_after_fit(yhat, mos));
    let srcc = keep("srcc", metrics::spearman(mos, yhat));
    let krcc = keep("krcc", metrics::kendall(mos, yhat));
    let pair_acc = keep("pair_acc", metrics::pairwise_accuracy(mos, yhat));
    Evaluation {
        n: yhat.len(),
        plcc,
        srcc,
        krcc,
        pair_acc,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
    }
}

/// Score every sample of `split` and compute its metrics.
pub fn evaluate(model: &MlpScorer, split: &Dataset) -> Result<Evaluation, TrainError> {
    if split.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let yhat = model.predict_all(split.samples.iter().map(|s| s.features.as_slice()))?;
    Ok(evaluate_predictions(&yhat, &split.mos()))
}

/// Two stimuli and the fraction `q` of observers preferring the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub q: f64,
}

/// Mean 2AFC agreement, with the model preference taken as the
/// Bradley-Terry probability `sigmoid((f(a) - f(b)) / t)`.
pub fn two_afc_score(model: &MlpScorer, pairs: &[PreferencePair], t: f64) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(TrainError::Config(format!("temperature must be positive, got {t}")));
    }
    let mut total = 0.0;
    for pair in pairs {
        let diff = model.predict(&pair.first)? - model.predict(&pair.second)?;
        let p = stable_sigmoid(diff / t);
        total += metrics::two_afc(pair.q, p)
            .map_err(|e| TrainError::Config(e.to_string()))?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Activation;
    use crate::synth::{generate_dataset, DatasetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mos() -> Vec<f64> {
        generate_dataset(&DatasetConfig::default()).unwrap().mos()[..450].to_vec()
    }

    #[test]
    fn perfect_scorer() {
        // tie-free targets: tau-a stays below 1 whenever the truth has ties
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..450).map(|_| rng.random_range(1.0..5.0)).collect();
        let e = evaluate_predictions(&y, &y);
        assert_eq!(e.srcc, Some(1.0));
        assert_eq!(e.krcc, Some(1.0));
        assert!(e.plcc.unwrap() >= 0.999);
        assert_eq!(e.pair_acc, Some(1.0));
        assert!(!e.is_failed());
    }

    #[test]
    fn anti_scorer() {
        let y = mos();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let e = evaluate_predictions(&neg, &y);
        assert_eq!(e.srcc, Some(-1.0));
        assert_eq!(e.pair_acc, Some(0.0));
    }

    #[test]
    fn random_scorer_is_uncorrelated() {
        let y = mos();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<f64> = (0..y.len()).map(|_| rng.random()).collect();
        let e = evaluate_predictions(&r, &y);
        assert!(e.srcc.unwrap().abs() < 0.15, "{:?}", e.srcc);
    }

    #[test]
    fn constant_predictions_are_flagged() {
        let y = mos();
        let e = evaluate_predictions(&vec![2.0; y.len()], &y);
        assert!(e.is_failed());
        assert_eq!(e.plcc, None);
        assert_eq!(e.srcc, None);
    }

    #[test]
    fn two_afc_of_equal_stimuli_is_half() {
        let m = MlpScorer::init(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        let pair = PreferencePair {
            first: vec![0.1, 0.2],
            second: vec![0.1, 0.2],
            q: 0.9,
        };
        assert_eq!(two_afc_score(&m, &[pair], 0.01).unwrap(), 0.5);
    }
}
