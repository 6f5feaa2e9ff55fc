//! Mini-batch construction and pair formation.
//!
//! Three strategies decide which index pairs of a mini-batch feed the
//! pairwise loss:
//!
//! - `fixed-similar`: a perfect matching of same-content samples, `N/2` pairs.
//! - `all-similar`: every pair that shares a content id.
//! - `all-differing`: every pair, `(N^2 - N)/2` of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    FixedSimilar,
    AllSimilar,
    AllDiffering,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::FixedSimilar,
        Strategy::AllSimilar,
        Strategy::AllDiffering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::FixedSimilar => "fixed-similar",
            Strategy::AllSimilar => "all-similar",
            Strategy::AllDiffering => "all-differing",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairError {
    #[error("fixed pairs need an even batch, got N = {0}")]
    OddBatch(usize),
    #[error("sample {index} (content {content_id}) has no same-content partner")]
    Unmatched { index: usize, content_id: u32 },
    #[error("a batch needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("{strategy} infeasible: {reason}")]
    Infeasible {
        strategy: Strategy,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, PairError>;

/// One member of a mini-batch. `index` is the position in the batch when
/// the ref belongs to a [`MiniBatch`], or the dataset index in a sampling
/// pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRef {
    pub index: usize,
    pub content_id: u32,
    pub mos: f64,
}

/// Unordered index pairs `(i, j)`, stored with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
    strategy: Strategy,
}

impl PairSet {
    pub fn new(strategy: Strategy, pairs: Vec<(usize, usize)>) -> Self {
        let pairs = pairs
            .into_iter()
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        Self { pairs, strategy }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keep a uniformly drawn subset of at most `max` pairs, in their
    /// original order.
    pub fn capped<R: Rng + ?Sized>(self, max: usize, rng: &mut R) -> Self {
        if self.pairs.len() <= max {
            return self;
        }
        let mut keep = index::sample(rng, self.pairs.len(), max).into_vec();
        keep.sort_unstable();
        let pairs = keep.into_iter().map(|k| self.pairs[k]).collect();
        Self {
            pairs,
            strategy: self.strategy,
        }
    }
}

/// Greedy first-fit matching: each sample is paired with the earliest
/// still-unmatched sample of the same content.
pub fn fixed_pairs(batch: &[SampleRef]) -> Result<PairSet> {
    let n = batch.len();
    if n < 2 {
        return Err(PairError::BatchTooSmall(n));
    }
    if n % 2 == 1 {
        return Err(PairError::OddBatch(n));
    }
    let mut pending: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(n / 2);
    for (pos, s) in batch.iter().enumerate() {
        match pending.remove(&s.content_id) {
            Some(first) => pairs.push((first, pos)),
            None => {
                pending.insert(s.content_id, pos);
            }
        }
    }
    if let Some((&content_id, &index)) = pending.iter().next() {
        return Err(PairError::Unmatched { index, content_id });
    }
    Ok(PairSet::new(Strategy::FixedSimilar, pairs))
}

/// Same as [`fixed_pairs`] after a seeded shuffle of the visiting order,
/// so partners are matched at random within each content group.
pub fn fixed_pairs_shuffled<R: Rng + ?Sized>(batch: &[SampleRef], rng: &mut R) -> Result<PairSet> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(rng);
    let shuffled: Vec<SampleRef> = order.iter().map(|&k| batch[k]).collect();
    let set = fixed_pairs(&shuffled).map_err(|e| match e {
        PairError::Unmatched { index, content_id } => PairError::Unmatched {
            index: order[index],
            content_id,
        },
        other => other,
    })?;
    let mut pairs: Vec<(usize, usize)> = set
        .pairs
        .iter()
        .map(|&(a, b)| (order[a], order[b]))
        .collect();
    pairs.iter_mut().for_each(|p| *p = (p.0.min(p.1), p.0.max(p.1)));
    pairs.sort_unstable();
    Ok(PairSet::new(Strategy::FixedSimilar, pairs))
}

pub fn all_pairs_similar(batch: &[SampleRef]) -> Result<PairSet> {
    if batch.len() < 2 {
        return Err(PairError::BatchTooSmall(batch.len()));
    }
    let mut pairs = Vec::new();
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            if batch[i].content_id == batch[j].content_id {
                pairs.push((i, j));
            }
        }
    }
    Ok(PairSet::new(Strategy::AllSimilar, pairs))
}

pub fn all_pairs_differing(batch: &[SampleRef]) -> Result<PairSet> {
    let n = batch.len();
    if n < 2 {
        return Err(PairError::BatchTooSmall(n));
    }
    let pairs = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    Ok(PairSet::new(Strategy::AllDiffering, pairs))
}

pub fn form_pairs(strategy: Strategy, batch: &[SampleRef]) -> Result<PairSet> {
    match strategy {
        Strategy::FixedSimilar => fixed_pairs(batch),
        Strategy::AllSimilar => all_pairs_similar(batch),
        Strategy::AllDiffering => all_pairs_differing(batch),
    }
}

/// A drawn mini-batch: `members[k]` is the pool index of batch position `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub members: Vec<usize>,
    pub refs: Vec<SampleRef>,
}

fn group_by_content(pool: &[SampleRef]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (k, s) in pool.iter().enumerate() {
        groups.entry(s.content_id).or_default().push(k);
    }
    groups
}

/// Draw `n` distinct pool entries satisfying the strategy's structure:
///
/// - `all-differing`: uniform over the whole pool.
/// - `all-similar`: one content drawn uniformly among those with at least
///   `n` samples, then `n` of its samples.
/// - `fixed-similar`: `n/2` same-content pairs, each from a content drawn
///   uniformly among those with two or more unused samples; partners sit at
///   adjacent batch positions.
pub fn make_minibatch<R: Rng + ?Sized>(
    pool: &[SampleRef],
    strategy: Strategy,
    n: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    if n < 2 {
        return Err(PairError::BatchTooSmall(n));
    }
    let infeasible = |reason: String| PairError::Infeasible { strategy, reason };
    let positions: Vec<usize> = match strategy {
        Strategy::AllDiffering => {
            if n > pool.len() {
                return Err(infeasible(format!(
                    "batch size N = {n} exceeds the pool of {} samples",
                    pool.len()
                )));
            }
            index::sample(rng, pool.len(), n).into_vec()
        }
        Strategy::AllSimilar => {
            let groups = group_by_content(pool);
            let largest = groups.values().map(Vec::len).max().unwrap_or(0);
            let eligible: Vec<&Vec<usize>> = groups.values().filter(|g| g.len() >= n).collect();
            if eligible.is_empty() {
                return Err(infeasible(format!(
                    "N <= D violated: batch size N = {n} exceeds the largest per-content pool D = {largest}"
                )));
            }
            let group = eligible[rng.random_range(0..eligible.len())];
            index::sample(rng, group.len(), n)
                .into_iter()
                .map(|k| group[k])
                .collect()
        }
        Strategy::FixedSimilar => {
            if n % 2 == 1 {
                return Err(PairError::OddBatch(n));
            }
            let mut remaining: Vec<Vec<usize>> = group_by_content(pool).into_values().collect();
            let mut chosen = Vec::with_capacity(n);
            for _ in 0..n / 2 {
                let open: Vec<usize> = (0..remaining.len())
                    .filter(|&g| remaining[g].len() >= 2)
                    .collect();
                if open.is_empty() {
                    return Err(infeasible(format!(
                        "only {} same-content pairs available for N/2 = {}",
                        chosen.len() / 2,
                        n / 2
                    )));
                }
                let g = &mut remaining[open[rng.random_range(0..open.len())]];
                for _ in 0..2 {
                    let k = rng.random_range(0..g.len());
                    chosen.push(g.swap_remove(k));
                }
            }
            chosen
        }
    };
    let members: Vec<usize> = positions.iter().map(|&k| pool[k].index).collect();
    let refs = positions
        .iter()
        .enumerate()
        .map(|(pos, &k)| SampleRef {
            index: pos,
            ..pool[k]
        })
        .collect();
    Ok(MiniBatch { members, refs })
}
