//! Synthetic content-sensitive quality data.
//!
//! Every content gets a random unit embedding. Its base quality and its
//! per-distortion sensitivities are smooth functions of that embedding, so
//! the same distortion costs different contents a different amount of
//! quality, and a scorer that sees the embedding can learn the association
//! and carry it over to unseen contents.
//!
//! ```text
//! mos = clamp(base - sensitivity[type] * 4 * level / S + noise, 1, 5)
//! features = [one_hot(type) * (level / S + noise), embedding]
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairs::SampleRef;

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 5.0;
/// Quality lost at the strongest severity by a content of unit sensitivity.
pub const SEVERITY_SPAN: f64 = 4.0;
const SENSITIVITY_CENTRE: f64 = 1.0;
const SENSITIVITY_HALF_RANGE: f64 = 0.7;
const BASE_CENTRE: f64 = 4.25;
const BASE_HALF_RANGE: f64 = 0.75;
/// Gain on the embedding projections before the tanh squashing.
const PROJECTION_GAIN: f64 = 3.0;

const FIXED_COLUMNS: [&str; 4] = ["content_id", "distortion_type", "severity", "mos"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("dataset split needs at least 2 contents, found {0}")]
    TooFewContents(usize),
    #[error("header mismatch: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_contents: usize,
    pub n_types: usize,
    pub n_severities: usize,
    pub feature_noise_sd: f64,
    pub mos_noise_sd: f64,
    pub content_dim: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_contents: 60,
            n_types: 5,
            n_severities: 5,
            feature_noise_sd: 0.02,
            mos_noise_sd: 0.1,
            content_dim: 8,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_contents", self.n_contents),
            ("n_types", self.n_types),
            ("n_severities", self.n_severities),
            ("content_dim", self.content_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SynthError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_contents > u32::MAX as usize {
            return Err(SynthError::Config("too many contents".into()));
        }
        for (name, v) in [
            ("feature_noise_sd", self.feature_noise_sd),
            ("mos_noise_sd", self.mos_noise_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.n_types + self.content_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentSpec {
    pub content_id: u32,
    /// In [3.5, 5.0].
    pub base_quality: f64,
    /// One entry per distortion type, each in [0.3, 1.7].
    pub sensitivity: Vec<f64>,
    /// Unit norm.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub content_id: u32,
    pub distortion_type: usize,
    /// 1-based severity level.
    pub severity: usize,
    pub features: Vec<f64>,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn mos(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mos).collect()
    }

    pub fn content_ids(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.content_id).collect()
    }

    /// Sampling pool for [`crate::pairs::make_minibatch`]; `index` is the
    /// dataset position.
    pub fn refs(&self) -> Vec<SampleRef> {
        self.samples
            .iter()
            .enumerate()
            .map(|(index, s)| SampleRef {
                index,
                content_id: s.content_id,
                mos: s.mos,
            })
            .collect()
    }
}

/// Quality drop per unit sensitivity at `level` out of `n_severities`.
pub fn severity_curve(level: usize, n_severities: usize) -> f64 {
    SEVERITY_SPAN * level as f64 / n_severities as f64
}

/// MOS of `content` under `distortion_type` at `level`, before clamping
/// the additive `noise` is applied.
pub fn mos_for(
    content: &ContentSpec,
    distortion_type: usize,
    level: usize,
    n_severities: usize,
    noise: f64,
) -> f64 {
    let drop = content.sensitivity[distortion_type] * severity_curve(level, n_severities);
    (content.base_quality - drop + noise).clamp(MOS_MIN, MOS_MAX)
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw the per-content latent factors.
pub fn generate_contents<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Vec<ContentSpec> {
    let type_dirs: Vec<Vec<f64>> = (0..cfg.n_types)
        .map(|_| unit_vector(rng, cfg.content_dim))
        .collect();
    let base_dir = unit_vector(rng, cfg.content_dim);
    (0..cfg.n_contents)
        .map(|c| {
            let embedding = unit_vector(rng, cfg.content_dim);
            let sensitivity = type_dirs
                .iter()
                .map(|w| {
                    SENSITIVITY_CENTRE
                        + SENSITIVITY_HALF_RANGE * (PROJECTION_GAIN * dot(w, &embedding)).tanh()
                })
                .collect();
            let base_quality =
                BASE_CENTRE + BASE_HALF_RANGE * (PROJECTION_GAIN * dot(&base_dir, &embedding)).tanh();
            ContentSpec {
                content_id: c as u32,
                base_quality,
                sensitivity,
                embedding,
            }
        })
        .collect()
}

/// Contents x types x severities samples, in that nesting order.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let contents = generate_contents(cfg, &mut rng);
    let s = cfg.n_severities;
    let mut samples = Vec::with_capacity(cfg.n_contents * cfg.n_types * s);
    for content in &contents {
        for t in 0..cfg.n_types {
            for level in 1..=s {
                let z_mos: f64 = rng.sample(StandardNormal);
                let z_feat: f64 = rng.sample(StandardNormal);
                let mos = mos_for(content, t, level, s, cfg.mos_noise_sd * z_mos);
                let mut features = vec![0.0; cfg.feature_len()];
                features[t] = level as f64 / s as f64 + cfg.feature_noise_sd * z_feat;
                features[cfg.n_types..].copy_from_slice(&content.embedding);
                samples.push(Sample {
                    content_id: content.content_id,
                    distortion_type: t,
                    severity: level,
                    features,
                    mos,
                });
            }
        }
    }
    Ok(Dataset { samples })
}

/// Partition by content so no content appears on both sides. Sample order
/// within each side follows the input.
pub fn split_by_content(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SynthError::Config(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<u32> = dataset.content_ids().into_iter().collect();
    if ids.len() < 2 {
        return Err(SynthError::TooFewContents(ids.len()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: BTreeSet<u32> = ids[..n_train].iter().copied().collect();
    let (train, test): (Vec<Sample>, Vec<Sample>) = dataset
        .samples
        .iter()
        .cloned()
        .partition(|s| train_ids.contains(&s.content_id));
    Ok((Dataset { samples: train }, Dataset { samples: test }))
}

pub fn csv_header(feature_len: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..feature_len).map(|k| format!("f_{k}")))
        .collect()
}

/// CSV with header `content_id,distortion_type,severity,mos,f_0,...`, LF line
/// endings and shortest round-trip float formatting.
pub fn write_csv_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(csv_header(dataset.feature_len()))?;
    for s in &dataset.samples {
        let mut row = vec![
            s.content_id.to_string(),
            s.distortion_type.to_string(),
            s.severity.to_string(),
            format!("{:?}", s.mos),
        ];
        row.extend(s.features.iter().map(|f| format!("{f:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(dataset, BufWriter::new(File::create(path)?))
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    for (k, want) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(k) != Some(want) {
            return Err(SynthError::Header(format!(
                "missing column `{want}` at position {k}"
            )));
        }
    }
    let feature_len = header.len() - FIXED_COLUMNS.len();
    for k in 0..feature_len {
        let want = format!("f_{k}");
        if header.get(FIXED_COLUMNS.len() + k) != Some(want.as_str()) {
            return Err(SynthError::Header(format!(
                "missing column `{want}` at position {}",
                FIXED_COLUMNS.len() + k
            )));
        }
    }
    if feature_len == 0 {
        return Err(SynthError::Header("missing column `f_0`".into()));
    }

    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| SynthError::Row { line, message };
        let field = |k: usize| record.get(k).unwrap_or("");
        let content_id: u32 = field(0)
            .parse()
            .map_err(|e| bad(format!("content_id: {e}")))?;
        let distortion_type: usize = field(1)
            .parse()
            .map_err(|e| bad(format!("distortion_type: {e}")))?;
        let severity: usize = field(2)
            .parse()
            .map_err(|e| bad(format!("severity: {e}")))?;
        if severity == 0 {
            return Err(bad("severity must be at least 1".into()));
        }
        let mos: f64 = field(3).parse().map_err(|e| bad(format!("mos: {e}")))?;
        if !(MOS_MIN..=MOS_MAX).contains(&mos) {
            return Err(bad(format!("mos {mos} outside [{MOS_MIN}, {MOS_MAX}]")));
        }
        let features = (0..feature_len)
            .map(|k| {
                let v: f64 = field(4 + k)
                    .parse()
                    .map_err(|e| bad(format!("f_{k}: {e}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("f_{k} is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            content_id,
            distortion_type,
            severity,
            features,
            mos,
        });
    }
    Ok(Dataset { samples })
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv_from(BufReader::new(File::open(path)?))
}
