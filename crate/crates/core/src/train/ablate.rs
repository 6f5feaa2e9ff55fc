//! Ablation grids run in parallel and aggregated per cell.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, EpochSummary, Evaluation, ExperimentConfig, TrainError};
use crate::pairs::Strategy;

/// Preset grids mirroring the three ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// The three pair strategies, pairwise loss only.
    PairFormation,
    /// All eight on/off combinations of the three regularizers.
    Regularizers,
    /// Batch sizes 8, 16, 32 and 64.
    BatchSize,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::PairFormation, Preset::Regularizers, Preset::BatchSize];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::PairFormation => "pair-formation",
            Preset::Regularizers => "regularizers",
            Preset::BatchSize => "batch-size",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset `{s}`; expected one of pair-formation, regularizers, batch-size"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub label: String,
    pub config: ExperimentConfig,
}

pub const BATCH_SIZES: [usize; 4] = [8, 16, 32, 64];

fn regularizer_label(r: bool, rho: bool, tau: bool) -> String {
    let mut label = String::from("Lc");
    for (on, name) in [(r, "+Rr"), (rho, "+Rrho"), (tau, "+Rtau")] {
        if on {
            label.push_str(name);
        }
    }
    label
}

/// Cells of `preset`, each a variation of `base`.
pub fn preset_grid(preset: Preset, base: &ExperimentConfig) -> Vec<GridCell> {
    match preset {
        Preset::PairFormation => Strategy::ALL
            .into_iter()
            .map(|strategy| GridCell {
                label: strategy.as_str().to_string(),
                config: ExperimentConfig {
                    strategy,
                    lambda: 0.0,
                    ..base.clone()
                },
            })
            .collect(),
        Preset::Regularizers => [
            (false, false, false),
            (true, false, false),
            (false, true, false),
            (false, false, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ]
        .into_iter()
        .map(|(r, rho, tau)| GridCell {
            label: regularizer_label(r, rho, tau),
            config: ExperimentConfig {
                enable_r: r,
                enable_rho: rho,
                enable_tau: tau,
                ..base.clone()
            },
        })
        .collect(),
        Preset::BatchSize => BATCH_SIZES
            .into_iter()
            .map(|batch_size| GridCell {
                label: format!("N={batch_size}"),
                config: ExperimentConfig {
                    batch_size,
                    ..base.clone()
                },
            })
            .collect(),
    }
}

/// One metric row: one run evaluated on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub config_hash: String,
    pub strategy: Strategy,
    pub enable_r: bool,
    pub enable_rho: bool,
    pub enable_tau: bool,
    pub temperature: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub split: String,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub pair_acc: Option<f64>,
    pub wall_s: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    /// `None` for an empty input. Independent of input order.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub config_hash: String,
    pub split: String,
    pub runs: usize,
    pub failures: usize,
    pub plcc: Option<Spread>,
    pub srcc: Option<Spread>,
    pub krcc: Option<Spread>,
    pub pair_acc: Option<Spread>,
    /// Median over seeds of the first and last epoch's mean regularizer sum.
    pub first_epoch_regularizer: Option<f64>,
    pub final_epoch_regularizer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub plcc: String,
    pub srcc: String,
    pub krcc: String,
    pub pair_acc: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            plcc: "Pearson after a least-squares four-parameter logistic fit".into(),
            srcc: "Spearman with average ranks for ties".into(),
            krcc: "Kendall tau-a (ties count as neither concordant nor discordant)".into(),
            pair_acc: "fraction of distinct-MOS pairs ordered correctly; prediction ties count as wrong".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub conventions: Conventions,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellSummary>,
    pub rows: Vec<RunRow>,
    pub curves: Vec<RunCurve>,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "config_hash", "strategy", "Rr", "Rrho", "Rtau", "T", "lambda", "batch", "seed", "split",
    "plcc", "srcc", "krcc", "pair_acc", "wall_s",
];

impl Report {
    pub fn cell(&self, label: &str, split: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.label == label && c.split == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per run and split; undefined metrics are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:?}"));
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for r in &self.rows {
            w.write_record([
                r.config_hash.clone(),
                r.strategy.as_str().to_string(),
                flag(r.enable_r),
                flag(r.enable_rho),
                flag(r.enable_tau),
                format!("{:?}", r.temperature),
                format!("{:?}", r.lambda),
                r.batch_size.to_string(),
                r.seed.to_string(),
                r.split.clone(),
                opt(r.plcc),
                opt(r.srcc),
                opt(r.krcc),
                opt(r.pair_acc),
                format!("{:.3}", r.wall_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RunResult {
    rows: Vec<RunRow>,
    curve: Option<RunCurve>,
}

fn row(cell: &GridCell, cfg: &ExperimentConfig, split: &str, eval: Option<&Evaluation>, wall_s: f64, failure: Option<String>) -> RunRow {
    RunRow {
        label: cell.label.clone(),
        config_hash: cfg.config_hash(),
        strategy: cfg.strategy,
        enable_r: cfg.enable_r,
        enable_rho: cfg.enable_rho,
        enable_tau: cfg.enable_tau,
        temperature: cfg.temperature,
        lambda: cfg.lambda,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        split: split.to_string(),
        plcc: eval.and_then(|e| e.plcc),
        srcc: eval.and_then(|e| e.srcc),
        krcc: eval.and_then(|e| e.krcc),
        pair_acc: eval.and_then(|e| e.pair_acc),
        wall_s,
        failure: failure.or_else(|| eval.and_then(|e| e.failure.clone())),
    }
}

fn run_cell(cell: &GridCell, seed: u64) -> RunResult {
    let cfg = ExperimentConfig {
        seed,
        ..cell.config.clone()
    };
    let start = Instant::now();
    let outcome = run_experiment(&cfg);
    let wall_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((_, report)) => RunResult {
            rows: vec![
                row(cell, &cfg, "train", Some(&report.train_eval), wall_s, None),
                row(cell, &cfg, "test", Some(&report.test_eval), wall_s, None),
            ],
            curve: Some(RunCurve {
                label: cell.label.clone(),
                config_hash: report.config_hash,
                seed,
                epochs: report.epochs,
            }),
        },
        Err(e) => RunResult {
            rows: ["train", "test"]
                .into_iter()
                .map(|split| row(cell, &cfg, split, None, wall_s, Some(e.to_string())))
                .collect(),
            curve: None,
        },
    }
}

fn summarize(cell: &GridCell, split: &str, rows: &[&RunRow], curves: &[&RunCurve]) -> CellSummary {
    let ok: Vec<&&RunRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    let spread = |f: fn(&RunRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
        Spread::of(&v)
    };
    let epoch_median = |pick: fn(&[EpochSummary]) -> Option<&EpochSummary>| {
        let v: Vec<f64> = curves
            .iter()
            .filter_map(|c| pick(&c.epochs).map(|e| e.regularizer))
            .collect();
        Spread::of(&v).map(|s| s.median)
    };
    CellSummary {
        label: cell.label.clone(),
        config_hash: cell.config.config_hash(),
        split: split.to_string(),
        runs: rows.len(),
        failures: rows.len() - ok.len(),
        plcc: spread(|r| r.plcc),
        srcc: spread(|r| r.srcc),
        krcc: spread(|r| r.krcc),
        pair_acc: spread(|r| r.pair_acc),
        first_epoch_regularizer: epoch_median(|e| e.first()),
        final_epoch_regularizer: epoch_median(|e| e.last()),
    }
}

/// Run every cell under every seed in parallel. A failing run is recorded
/// in its rows and the rest of the grid continues.
pub fn ablate(cells: &[GridCell], seeds: &[u64]) -> Result<Report, TrainError> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("ablation grid and seed list must be nonempty".into()));
    }
    for cell in cells {
        cell.config.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(c, seed)| run_cell(&cells[c], seed))
        .collect();

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for r in results {
        rows.extend(r.rows);
        curves.extend(r.curve);
    }
    let mut summaries = Vec::new();
    for cell in cells {
        let cell_curves: Vec<&RunCurve> = curves.iter().filter(|c| c.label == cell.label).collect();
        for split in ["train", "test"] {
            let cell_rows: Vec<&RunRow> = rows
                .iter()
                .filter(|r| r.label == cell.label && r.split == split)
                .collect();
            summaries.push(summarize(cell, split, &cell_rows, &cell_curves));
        }
    }
    Ok(Report {
        conventions: Conventions::default(),
        seeds: seeds.to_vec(),
        cells: summaries,
        rows,
        curves,
    })
}
