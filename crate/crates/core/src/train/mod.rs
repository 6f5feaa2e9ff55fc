//! Training loop, evaluation protocol and ablation grids.

pub mod ablate;
pub mod adam;
pub mod config;
pub mod eval;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape};
use crate::objectives::{total_loss, ObjectiveError};
use crate::pairs::{form_pairs, make_minibatch, PairError};
use crate::scorer::{MlpScorer, ScorerError};
use crate::synth::{self, Dataset, SynthError};

pub use ablate::{ablate, preset_grid, GridCell, Preset, Report};
pub use adam::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use config::ExperimentConfig;
pub use eval::{evaluate, evaluate_predictions, two_afc_score, Evaluation, PreferencePair};

/// Offset separating the sampling stream from weight initialisation.
const SAMPLING_STREAM: u64 = 0x5A4D_504C_4552_0001;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error("training diverged at step {0}: non-finite parameters")]
    Diverged(usize),
    #[error("dataset has no samples")]
    EmptyDataset,
}

impl From<GradError> for TrainError {
    fn from(e: GradError) -> Self {
        TrainError::Objective(ObjectiveError::Grad(e))
    }
}

impl TrainError {
    /// True when the pair strategy cannot be realised with this batch size.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, TrainError::Pairs(PairError::Infeasible { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub pairwise: f64,
    pub r_pearson: Option<f64>,
    pub r_spearman: Option<f64>,
    pub r_kendall: Option<f64>,
    pub n_pairs: usize,
}

impl StepRecord {
    pub fn regularizer_sum(&self) -> f64 {
        [self.r_pearson, self.r_spearman, self.r_kendall]
            .into_iter()
            .flatten()
            .fold(0.0, |acc, r| acc + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub pairwise: f64,
    pub regularizer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.steps.last().map_or(0, |s| s.epoch + 1)
    }

    /// Per-epoch means of the loss, its pairwise part and the regularizer
    /// sum.
    pub fn epoch_summaries(&self) -> Vec<EpochSummary> {
        (0..self.epochs())
            .map(|epoch| {
                let rows: Vec<&StepRecord> =
                    self.steps.iter().filter(|s| s.epoch == epoch).collect();
                let n = rows.len().max(1) as f64;
                EpochSummary {
                    epoch,
                    loss: rows.iter().map(|s| s.loss).sum::<f64>() / n,
                    pairwise: rows.iter().map(|s| s.pairwise).sum::<f64>() / n,
                    regularizer: rows.iter().map(|s| s.regularizer_sum()).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpScorer,
    pub history: History,
}

pub fn steps_per_epoch(train_len: usize, batch_size: usize) -> usize {
    (train_len / batch_size).max(1)
}

/// Fit a fresh scorer on `train_set`.
pub fn train(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<TrainOutcome, TrainError> {
    let widths: Vec<usize> = std::iter::once(train_set.feature_len())
        .chain(cfg.hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let model = MlpScorer::init(&widths, cfg.activation, cfg.seed)?;
    train_from(cfg, train_set, model)
}

/// Continue training `model`; the loop used by [`train`].
pub fn train_from(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    mut model: MlpScorer,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let loss_cfg = cfg.loss();
    let adam_cfg = cfg.adam();
    let pool = train_set.refs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLING_STREAM);
    let mut state = AdamState::new(model.params());
    let per_epoch = steps_per_epoch(train_set.len(), cfg.batch_size);
    let t_max = per_epoch * cfg.epochs;
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        for step in 0..per_epoch {
            let t = epoch * per_epoch + step;
            let lr_t = cosine_lr(cfg.lr, t, t_max);
            let batch = make_minibatch(&pool, cfg.strategy, cfg.batch_size, &mut rng)?;
            let mut pairs = form_pairs(cfg.strategy, &batch.refs)?;
            if let Some(cap) = cfg.pair_cap {
                pairs = pairs.capped(cap, &mut rng);
            }

            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let mut preds = Vec::with_capacity(batch.members.len());
            let mut mos = Vec::with_capacity(batch.members.len());
            for &i in &batch.members {
                let sample = &train_set.samples[i];
                preds.push(bound.score(&mut tape, &sample.features)?);
                mos.push(sample.mos);
            }
            let terms = total_loss(&mut tape, &preds, &mos, &pairs, &loss_cfg)?;
            let grads = tape.backward(terms.total)?;
            let blocks: Vec<Vec<f64>> = bound
                .params()
                .iter()
                .map(|&p| {
                    grads
                        .wrt(p)
                        .map_or_else(Vec::new, |g| g.as_slice().to_vec())
                })
                .collect();
            adam_step(model.params_mut(), &blocks, &mut state, lr_t, &adam_cfg);
            if model.params().iter().flatten().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged(t));
            }
            history.steps.push(StepRecord {
                epoch,
                step,
                lr: lr_t,
                loss: tape.scalar(terms.total),
                pairwise: terms.pairwise,
                r_pearson: terms.r_pearson,
                r_spearman: terms.r_spearman,
                r_kendall: terms.r_kendall,
                n_pairs: pairs.len(),
            });
        }
    }
    Ok(TrainOutcome { model, history })
}

/// Samples and the content-disjoint split described by `cfg`.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), TrainError> {
    let data = match &cfg.dataset_csv {
        Some(path) => synth::read_csv(path)?,
        None => synth::generate_dataset(&cfg.dataset())?,
    };
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(synth::split_by_content(&data, cfg.train_fraction, cfg.split_seed)?)
}

/// Everything one training run produces apart from the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub train_eval: Evaluation,
    pub test_eval: Evaluation,
    pub epochs: Vec<EpochSummary>,
    pub history: History,
}

/// Load data, train, and evaluate on both splits.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MlpScorer, RunReport), TrainError> {
    cfg.validate()?;
    let (train_set, test_set) = load_splits(cfg)?;
    run_on_splits(cfg, &train_set, &test_set)
}

pub fn run_on_splits(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<(MlpScorer, RunReport), TrainError> {
    let outcome = train(cfg, train_set)?;
    let train_eval = evaluate(&outcome.model, train_set)?;
    let test_eval = evaluate(&outcome.model, test_set)?;
    let report = RunReport {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        train_size: train_set.len(),
        test_size: test_set.len(),
        train_eval,
        test_eval,
        epochs: outcome.history.epoch_summaries(),
        history: outcome.history,
    };
    Ok((outcome.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::Strategy;
    use crate::synth::Sample;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            n_contents: 12,
            epochs: 3,
            batch_size: 16,
            lr: 1e-2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_pair_becomes_confident() {
        let data = Dataset {
            samples: vec![
                Sample {
                    content_id: 0,
                    distortion_type: 0,
                    severity: 1,
                    features: vec![1.0, 0.2],
                    mos: 4.0,
                },
                Sample {
                    content_id: 0,
                    distortion_type: 0,
                    severity: 2,
                    features: vec![0.3, -0.5],
                    mos: 2.0,
                },
            ],
        };
        let cfg = ExperimentConfig {
            strategy: Strategy::FixedSimilar,
            lambda: 0.0,
            batch_size: 2,
            epochs: 300,
            lr: 1e-2,
            temperature: 0.1,
            hidden: vec![4],
            ..ExperimentConfig::default()
        };
        let out = train(&cfg, &data).unwrap();
        let a = out.model.predict(&data.samples[0].features).unwrap();
        let b = out.model.predict(&data.samples[1].features).unwrap();
        let p = crate::grad::stable_sigmoid((a - b) / cfg.temperature);
        assert!(p > 0.99, "{p}");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small_cfg();
        let (a, ra) = run_experiment(&cfg).unwrap();
        let (b, rb) = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = run_experiment(&ExperimentConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn history_shape() {
        let cfg = small_cfg();
        let (train_set, _) = load_splits(&cfg).unwrap();
        let out = train(&cfg, &train_set).unwrap();
        let per = steps_per_epoch(train_set.len(), cfg.batch_size);
        assert_eq!(out.history.steps.len(), per * cfg.epochs);
        assert_eq!(out.history.epoch_summaries().len(), cfg.epochs);
        let s = &out.history.steps[0];
        assert_eq!(s.n_pairs, 16 * 15 / 2);
        assert!(s.r_pearson.is_some() && s.r_spearman.is_some() && s.r_kendall.is_some());
        assert_eq!(s.lr, cfg.lr);
    }

    #[test]
    fn infeasible_strategy_is_reported() {
        let cfg = ExperimentConfig {
            strategy: Strategy::AllSimilar,
            batch_size: 64,
            ..small_cfg()
        };
        let err = run_experiment(&cfg).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn pair_cap_limits_pairs() {
        let cfg = ExperimentConfig {
            pair_cap: Some(10),
            epochs: 1,
            ..small_cfg()
        };
        let (train_set, _) = load_splits(&cfg).unwrap();
        let out = train(&cfg, &train_set).unwrap();
        assert!(out.history.steps.iter().all(|s| s.n_pairs == 10));
    }
}
