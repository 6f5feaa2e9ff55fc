//! Multilayer perceptron mapping a feature vector to one quality score.
//!
//! Hidden layers apply the chosen activation, the output layer is affine
//! and unbounded.
//!
//! # Snapshot format
//!
//! All integers and floats little-endian:
//!
//! | field        | type                 |
//! |--------------|----------------------|
//! | magic        | 4 bytes, `RLMS`      |
//! | version      | u32, currently 1     |
//! | activation   | u32, 0 tanh, 1 relu  |
//! | seed         | u64                  |
//! | width count  | u32                  |
//! | widths       | u32 each             |
//! | param count  | u64                  |
//! | params       | f64 each             |
//!
//! Parameters are stored layer by layer: the row-major `out x in` weight
//! matrix, then the `out` biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape, Value};

const MAGIC: &[u8; 4] = b"RLMS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("invalid layer widths {0:?}: {1}")]
    Widths(Vec<usize>, &'static str),
    #[error("expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("bad snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn tag(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpScorer {
    widths: Vec<usize>,
    /// `[w_0, b_0, w_1, b_1, ...]`
    params: Vec<Vec<f64>>,
    activation: Activation,
    seed: u64,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(ScorerError::Widths(widths.to_vec(), "need an input and an output width"));
    }
    if widths.contains(&0) {
        return Err(ScorerError::Widths(widths.to_vec(), "widths must be positive"));
    }
    if widths[widths.len() - 1] != 1 {
        return Err(ScorerError::Widths(widths.to_vec(), "output width must be 1"));
    }
    Ok(())
}

impl MlpScorer {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            params.push(weights);
            params.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
            activation,
            seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Parameter blocks in snapshot order.
    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(ScorerError::Shape {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for block in &mut self.params {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_len() {
            return Err(ScorerError::Shape {
                expected: self.input_len(),
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Forward pass without a tape. Uses the same arithmetic order as
    /// [`BoundScorer::score`], so both agree bit for bit.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        let mut h = features.to_vec();
        let last = self.widths.len() - 2;
        for (layer, w) in self.widths.windows(2).enumerate() {
            let (weights, bias) = (&self.params[2 * layer], &self.params[2 * layer + 1]);
            let z = weights
                .chunks_exact(w[0])
                .zip(bias)
                .map(|(row, b)| row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>() + b);
            h = if layer == last {
                z.collect()
            } else {
                z.map(|v| self.activation.apply(v)).collect()
            };
        }
        Ok(h[0])
    }

    pub fn predict_all<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
        rows.into_iter().map(|f| self.predict(f)).collect()
    }

    /// Lift every parameter block onto `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundScorer> {
        let params = self
            .params
            .iter()
            .map(|p| tape.param(p.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(BoundScorer {
            widths: self.widths.clone(),
            activation: self.activation,
            params,
        })
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.activation.tag().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for &width in &self.widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&(self.param_count() as u64).to_le_bytes())?;
        for x in self.params.iter().flatten() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| ScorerError::Snapshot(format!("truncated: {e}")))?;
            Ok(buf)
        }
        if &take::<4, _>(&mut r)? != MAGIC {
            return Err(ScorerError::Snapshot("wrong magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(ScorerError::Snapshot(format!("unsupported version {version}")));
        }
        let tag = u32::from_le_bytes(take(&mut r)?);
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| ScorerError::Snapshot(format!("unknown activation tag {tag}")))?;
        let seed = u64::from_le_bytes(take(&mut r)?);
        let n_widths = u32::from_le_bytes(take(&mut r)?) as usize;
        if n_widths > 1 << 16 {
            return Err(ScorerError::Snapshot(format!("implausible width count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| Ok(u32::from_le_bytes(take(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::init(&widths, activation, seed)?;
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        if count != model.param_count() {
            return Err(ScorerError::Snapshot(format!(
                "{count} parameters stored, widths need {}",
                model.param_count()
            )));
        }
        let flat = (0..count)
            .map(|_| Ok(f64::from_le_bytes(take(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(ScorerError::Snapshot("non-finite parameter".into()));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(ScorerError::Snapshot("trailing bytes".into()));
        }
        model.set_flat_params(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_snapshot(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_snapshot(BufReader::new(File::open(path)?))
    }
}

/// Parameters of an [`MlpScorer`] living on one tape.
#[derive(Debug, Clone)]
pub struct BoundScorer {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<Value>,
}

impl BoundScorer {
    /// Parameter leaves in the same order as [`MlpScorer::params`].
    pub fn params(&self) -> &[Value] {
        &self.params
    }

    pub fn score(&self, tape: &mut Tape, features: &[f64]) -> Result<Value> {
        if features.len() != self.widths[0] {
            return Err(ScorerError::Shape {
                expected: self.widths[0],
                got: features.len(),
            });
        }
        let mut h = tape.constant(features.to_vec())?;
        let last = self.widths.len() - 2;
        for (layer, w) in self.widths.windows(2).enumerate() {
            let z = tape.matvec(self.params[2 * layer], w[1], w[0], h)?;
            let z = tape.add(z, self.params[2 * layer + 1])?;
            h = if layer == last {
                z
            } else {
                match self.activation {
                    Activation::Tanh => tape.tanh(z)?,
                    Activation::Relu => tape.relu(z)?,
                }
            };
        }
        Ok(tape.index(h, 0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_check;

    #[test]
    fn parameter_count() {
        let m = MlpScorer::init(&[21, 32, 32, 1], Activation::Tanh, 0).unwrap();
        assert_eq!(m.param_count(), 21 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert_eq!(m.param_count(), 1793);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = MlpScorer::init(&[5, 4, 1], Activation::Tanh, 7).unwrap();
        let b = MlpScorer::init(&[5, 4, 1], Activation::Tanh, 7).unwrap();
        let c = MlpScorer::init(&[5, 4, 1], Activation::Tanh, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_widths() {
        assert!(MlpScorer::init(&[4, 3, 2], Activation::Tanh, 0).is_err());
        assert!(MlpScorer::init(&[4], Activation::Tanh, 0).is_err());
        assert!(MlpScorer::init(&[4, 0, 1], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let mut m = MlpScorer::init(&[3, 4, 1], Activation::Tanh, 1).unwrap();
        let mut flat = vec![0.0; m.param_count()];
        *flat.last_mut().unwrap() = 0.42;
        m.set_flat_params(&flat).unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 3.0]).unwrap(), 0.42);
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        for act in [Activation::Tanh, Activation::Relu] {
            let m = MlpScorer::init(&[6, 8, 5, 1], act, 3).unwrap();
            let x = [0.3, -1.0, 0.25, 2.0, 0.0, -0.7];
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape).unwrap();
            let y = bound.score(&mut tape, &x).unwrap();
            assert_eq!(tape.scalar(y).to_bits(), m.predict(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn shape_mismatch() {
        let m = MlpScorer::init(&[3, 2, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(
            m.predict(&[1.0]),
            Err(ScorerError::Shape { expected: 3, got: 1 })
        ));
        let mut tape = Tape::new();
        let b = m.bind(&mut tape).unwrap();
        assert!(b.score(&mut tape, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let m = MlpScorer::init(&[4, 6, 3, 1], Activation::Tanh, 11).unwrap();
        let x = [0.5, -0.2, 0.9, 0.1];
        let widths = m.widths().to_vec();
        let err = grad_check(
            |tape, flat| {
                let mut pieces = Vec::new();
                let mut at = 0;
                for w in widths.windows(2) {
                    for len in [w[0] * w[1], w[1]] {
                        let idx: Vec<Value> = (at..at + len)
                            .map(|k| tape.index(flat, k))
                            .collect::<std::result::Result<_, _>>()?;
                        pieces.push(tape.stack(&idx)?);
                        at += len;
                    }
                }
                let bound = BoundScorer {
                    widths: widths.clone(),
                    activation: Activation::Tanh,
                    params: pieces,
                };
                bound
                    .score(tape, &x)
                    .map_err(|e| GradError::Undefined(e.to_string()))
            },
            &m.flat_params(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn snapshot_round_trip_and_layout() {
        let m = MlpScorer::init(&[3, 2, 1], Activation::Relu, 99).unwrap();
        let mut buf = Vec::new();
        m.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RLMS");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 99);
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 4 + 3 * 4 + 8 + 8 * m.param_count());
        assert_eq!(MlpScorer::read_snapshot(buf.as_slice()).unwrap(), m);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(MlpScorer::read_snapshot(bad.as_slice()).is_err());
        assert!(MlpScorer::read_snapshot(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(MlpScorer::read_snapshot(long.as_slice()).is_err());
    }
}
