//! Acquisition scores and subset selection: least confidence, entropy,
//! greedy k-centers, seeded random sampling, and deterministic top-k.
//!
//! Ties are always broken toward the lower dataset index.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("row {row} sums to {sum}, not a probability distribution")]
    NotNormalized { row: usize, sum: f64 },
    #[error("asked for {k} items from {available}")]
    KOutOfRange { k: usize, available: usize },
    #[error("embedding widths differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("{indices} indices supplied for {rows} rows")]
    IndexCount { indices: usize, rows: usize },
    #[error("pool invariant violated: {0}")]
    Pool(String),
}

/// Acquisition function used to rank the unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[serde(alias = "lc")]
    LeastConfidence,
    Entropy,
    #[serde(alias = "kcenters", alias = "greedy_k_centers")]
    GreedyK,
    Random,
}

impl SelectionMetric {
    pub fn tag(self) -> &'static str {
        match self {
            Self::LeastConfidence => "lc",
            Self::Entropy => "entropy",
            Self::GreedyK => "greedy_k",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for SelectionMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lc" | "least_confidence" => Ok(Self::LeastConfidence),
            "entropy" => Ok(Self::Entropy),
            "greedy_k" | "kcenters" | "greedy_k_centers" => Ok(Self::GreedyK),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown selection metric `{other}`")),
        }
    }
}

/// Labeled / unlabeled partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
}

impl PoolState {
    /// Everything unlabeled.
    pub fn new(n: usize) -> Self {
        Self {
            labeled: BTreeSet::new(),
            unlabeled: (0..n).collect(),
        }
    }

    pub fn labeled(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn labeled_vec(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn unlabeled_vec(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Moves `picks` from the unlabeled to the labeled side.
    pub fn label(&mut self, picks: &[usize]) -> Result<(), SelectError> {
        if let Some(i) = picks.iter().find(|i| !self.unlabeled.contains(i)) {
            return Err(SelectError::Pool(format!("index {i} is not in the unlabeled pool")));
        }
        if picks.iter().collect::<BTreeSet<_>>().len() != picks.len() {
            return Err(SelectError::Pool("duplicate picks".into()));
        }
        for i in picks {
            self.unlabeled.remove(i);
            self.labeled.insert(*i);
        }
        Ok(())
    }
}

/// Parallel `(dataset index, score)` sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(indices: Vec<usize>, scores: Vec<f64>) -> Result<Self, SelectError> {
        if indices.len() != scores.len() {
            return Err(SelectError::IndexCount {
                indices: indices.len(),
                rows: scores.len(),
            });
        }
        Ok(Self { indices, scores })
    }

    /// Scores labeled by row position.
    pub fn positional(scores: Vec<f64>) -> Self {
        Self {
            indices: (0..scores.len()).collect(),
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Relabels positions with dataset indices.
    pub fn with_indices(self, indices: &[usize]) -> Result<Self, SelectError> {
        Self::new(indices.to_vec(), self.scores)
    }
}

fn checked_rows(probs: &Tensor) -> Result<impl Iterator<Item = &[f64]>, SelectError> {
    for r in 0..probs.rows() {
        let sum: f64 = probs.row(r).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(SelectError::NotNormalized { row: r, sum });
        }
    }
    Ok((0..probs.rows()).map(|r| probs.row(r)))
}

/// `1 − max_c p_c` per row.
pub fn score_least_confidence(probs: &Tensor) -> Result<ScoreVector, SelectError> {
    let scores = checked_rows(probs)?
        .map(|row| 1.0 - row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
        .collect();
    Ok(ScoreVector::positional(scores))
}

/// `−Σ p ln p` per row, with `0·ln 0 = 0`.
pub fn score_entropy(probs: &Tensor) -> Result<ScoreVector, SelectError> {
    let scores = checked_rows(probs)?
        .map(|row| {
            -row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect();
    Ok(ScoreVector::positional(scores))
}

/// The `k` highest-scoring indices, ordered by descending score then
/// ascending index.
pub fn top_k(scores: &ScoreVector, k: usize) -> Result<Vec<usize>, SelectError> {
    if k > scores.len() {
        return Err(SelectError::KOutOfRange {
            k,
            available: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then(scores.indices[a].cmp(&scores.indices[b]))
    });
    Ok(order[..k].iter().map(|&p| scores.indices[p]).collect())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Farthest-first traversal seeded with the labeled embeddings.
///
/// Each step picks the unlabeled point farthest (Euclidean) from its nearest
/// center and makes it a center. With no labeled points every distance
/// starts at +∞, so the first pick is the lowest dataset index.
pub fn greedy_k_centers(
    unlabeled_emb: &Tensor,
    labeled_emb: Option<&Tensor>,
    unlabeled_indices: &[usize],
    k: usize,
) -> Result<Vec<usize>, SelectError> {
    let n = unlabeled_emb.rows();
    if unlabeled_indices.len() != n {
        return Err(SelectError::IndexCount {
            indices: unlabeled_indices.len(),
            rows: n,
        });
    }
    if k > n {
        return Err(SelectError::KOutOfRange { k, available: n });
    }
    let dim = unlabeled_emb.row_len();
    let mut min_dist = vec![f64::INFINITY; n];
    if let Some(lab) = labeled_emb.filter(|l| l.rows() > 0) {
        if lab.row_len() != dim {
            return Err(SelectError::DimMismatch(dim, lab.row_len()));
        }
        for c in 0..lab.rows() {
            let center = lab.row(c);
            for (i, d) in min_dist.iter_mut().enumerate() {
                *d = d.min(euclidean(unlabeled_emb.row(i), center));
            }
        }
    }
    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            best = match best {
                None => Some(i),
                Some(b) => {
                    let better = min_dist[i] > min_dist[b]
                        || (min_dist[i] == min_dist[b] && unlabeled_indices[i] < unlabeled_indices[b]);
                    Some(if better { i } else { b })
                }
            };
        }
        let Some(b) = best else { break };
        taken[b] = true;
        picks.push(unlabeled_indices[b]);
        let center = unlabeled_emb.row(b);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(euclidean(unlabeled_emb.row(i), center));
        }
    }
    Ok(picks)
}

/// `k` distinct unlabeled indices drawn by seeded partial Fisher–Yates over
/// the sorted unlabeled pool.
pub fn random_select(pool: &PoolState, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    let mut items = pool.unlabeled_vec();
    if k > items.len() {
        return Err(SelectError::KOutOfRange {
            k,
            available: items.len(),
        });
    }
    seed::partial_shuffle(&mut items, k, &mut seed::rng(seed));
    items.truncate(k);
    Ok(items)
}
