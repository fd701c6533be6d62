//! Pool-based active learning driven by a pruned selector.
//!
//! The dense network is initialized once from the master seed and pruned
//! once. Every round resets the selector to those pruned initial weights,
//! trains it from scratch on the current labeled set, scores the unlabeled
//! pool, and labels the next batch. The selector trained in the final round
//! has seen the whole labeled set and is the one handed to fusion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{floor_fraction, DataError, Dataset, LabelOracle};
use crate::harness::flops::{inference_flops, training_flops};
use crate::nn::{self, penultimate_embeddings, predict_proba, Network, NetworkSpec, NnError, TrainConfig};
use crate::prune::{prune, ChannelMask, PruneError, PrunedTopology, SparsityTarget};
use crate::seed;
use crate::select::{
    greedy_k_centers, random_select, score_entropy, score_least_confidence, top_k, PoolState, SelectError,
    SelectionMetric,
};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("init: {0}")]
    Init(#[source] NnError),
    #[error("prune: {0}")]
    Prune(#[from] PruneError),
    #[error("round {round} train: {source}")]
    Train { round: usize, source: NnError },
    #[error("round {round} score: {source}")]
    Score { round: usize, source: NnError },
    #[error("round {round} select: {source}")]
    Select { round: usize, source: SelectError },
    #[error("oracle: {0}")]
    Oracle(#[from] DataError),
}

/// Cumulative labeled-set sizes, one per round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    cumulative_sizes: Vec<usize>,
}

impl BudgetSchedule {
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self, LoopError> {
        if sizes.is_empty() || sizes[0] == 0 {
            return Err(LoopError::Schedule("schedule must start with a positive size".into()));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LoopError::Schedule(format!("sizes {sizes:?} are not strictly increasing")));
        }
        Ok(Self { cumulative_sizes: sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.cumulative_sizes
    }

    pub fn initial(&self) -> usize {
        self.cumulative_sizes[0]
    }

    pub fn final_size(&self) -> usize {
        *self.cumulative_sizes.last().expect("schedule is never empty")
    }

    /// Number of selection rounds (schedule entries after the initial set).
    pub fn selection_rounds(&self) -> usize {
        self.cumulative_sizes.len() - 1
    }
}

/// Labeled-set sizes for `n` samples at budget fraction `b`: 2% random seed
/// set, +8% in the first round, then +10% per round, clipped to `⌊b·n⌋`.
pub fn make_schedule(n: usize, b: f64) -> Result<BudgetSchedule, LoopError> {
    if n < 50 {
        return Err(LoopError::Schedule(format!("need at least 50 samples, got {n}")));
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(LoopError::Schedule(format!("budget must lie in (0, 1], got {b}")));
    }
    let initial = (2 * n / 100).max(1);
    let budget = floor_fraction(b, n);
    if budget < initial {
        return Err(LoopError::Schedule(format!(
            "budget {budget} is below the initial set of {initial}"
        )));
    }
    let (first, step) = (8 * n / 100, 10 * n / 100);
    let mut sizes = vec![initial];
    let mut next = initial + first;
    while *sizes.last().unwrap() < budget {
        let size = next.min(budget);
        if size > *sizes.last().unwrap() {
            sizes.push(size);
        }
        next += step;
    }
    BudgetSchedule::from_sizes(sizes)
}

/// Measurements for one train-score-select round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled_size: usize,
    /// Samples labeled at the end of this round (0 in the final round).
    pub selected: usize,
    #[serde(default)]
    pub selector_val_accuracy: Option<f64>,
    pub selection_metric: SelectionMetric,
    pub training_flops: u64,
    pub scoring_flops: u64,
    pub flops_this_round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub spec: NetworkSpec,
    pub sparsity: SparsityTarget,
    pub metric: SelectionMetric,
    pub schedule: BudgetSchedule,
    pub train: TrainConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub pool: PoolState,
    /// Untrained dense network the selector was carved from.
    pub theta_init: Network,
    /// Selector at its pruned initial weights.
    pub selector_init: Network,
    /// Selector trained on the final labeled set.
    pub selector: Network,
    pub topo: PrunedTopology,
    pub mask: ChannelMask,
    pub rounds: Vec<RoundRecord>,
    pub oracle_queries: usize,
}

impl SelectionOutcome {
    pub fn selection_flops(&self) -> u64 {
        self.rounds.iter().map(|r| r.flops_this_round).sum()
    }
}

const STREAM_INITIAL_POOL: u64 = 1;
const STREAM_RANDOM_PICKS: u64 = 2;
const STREAM_TRAIN: u64 = 3;

/// Seed for training run `round` under `master_seed` and a config salt.
pub fn round_train_seed(master_seed: u64, salt: u64, round: usize) -> u64 {
    seed::derive(seed::derive(master_seed, STREAM_TRAIN) ^ salt, round as u64)
}

pub fn run_selection_loop(
    data: &Dataset,
    val: Option<&Dataset>,
    settings: &LoopSettings,
) -> Result<SelectionOutcome, LoopError> {
    run_selection_loop_observed(data, val, settings, |_, _| {})
}

/// As [`run_selection_loop`], calling `on_round_start(round, weights)` with
/// the selector weights each round starts training from.
pub fn run_selection_loop_observed(
    data: &Dataset,
    val: Option<&Dataset>,
    settings: &LoopSettings,
    mut on_round_start: impl FnMut(usize, &Network),
) -> Result<SelectionOutcome, LoopError> {
    let schedule = &settings.schedule;
    let n = data.len();
    if schedule.final_size() > n {
        return Err(LoopError::Schedule(format!(
            "schedule ends at {} but the pool holds {n} samples",
            schedule.final_size()
        )));
    }
    settings.train.validate().map_err(LoopError::Init)?;
    let theta_init = nn::init_network(&settings.spec, settings.master_seed).map_err(LoopError::Init)?;
    let (selector_init, topo, mask) = prune(&theta_init, settings.sparsity)?;
    let spec = &topo.compact_spec;

    let mut pool = PoolState::new(n);
    let mut oracle = LabelOracle::from_dataset(data);
    let mut revealed: Vec<Option<usize>> = vec![None; n];
    let s0 = random_select(&pool, schedule.initial(), seed::derive(settings.master_seed, STREAM_INITIAL_POOL))
        .map_err(|source| LoopError::Select { round: 0, source })?;
    acquire(&mut oracle, &mut pool, &mut revealed, &s0, 0)?;

    let mut rounds = Vec::with_capacity(schedule.sizes().len());
    let mut selector = selector_init.clone();
    for (round, &size) in schedule.sizes().iter().enumerate() {
        debug_assert_eq!(pool.labeled().len(), size);
        on_round_start(round, &selector_init);
        let labeled = pool.labeled_vec();
        let mut subset = data.subset(&labeled);
        subset.labels = labeled.iter().map(|&i| revealed[i].expect("labeled samples were queried")).collect();
        let cfg = TrainConfig {
            seed: round_train_seed(settings.master_seed, settings.train.seed, round),
            ..settings.train.clone()
        };
        let train_err = |source| LoopError::Train { round, source };
        selector = nn::train(&selector_init, &subset, &cfg, None, None).map_err(train_err)?.0;
        let val_acc = val.map(|v| nn::accuracy(&selector, v)).transpose().map_err(train_err)?;
        let training = training_flops(spec, size, cfg.epochs).map_err(train_err)?;

        let (picks, scoring) = match schedule.sizes().get(round + 1) {
            Some(&next) => select_batch(data, &pool, &selector, settings, next - size, round)?,
            None => (Vec::new(), 0),
        };
        acquire(&mut oracle, &mut pool, &mut revealed, &picks, round)?;
        rounds.push(RoundRecord {
            round,
            labeled_size: size,
            selected: picks.len(),
            selector_val_accuracy: val_acc,
            selection_metric: settings.metric,
            training_flops: training,
            scoring_flops: scoring,
            flops_this_round: training + scoring,
        });
    }
    let oracle_queries = oracle.queries();
    Ok(SelectionOutcome {
        pool,
        theta_init,
        selector_init,
        selector,
        topo,
        mask,
        rounds,
        oracle_queries,
    })
}

/// Queries the oracle for `picks` and moves them into the labeled set.
fn acquire(
    oracle: &mut LabelOracle,
    pool: &mut PoolState,
    revealed: &mut [Option<usize>],
    picks: &[usize],
    round: usize,
) -> Result<(), LoopError> {
    let labels = oracle.query(picks)?;
    pool.label(picks).map_err(|source| LoopError::Select { round, source })?;
    for (&i, l) in picks.iter().zip(labels) {
        revealed[i] = Some(l);
    }
    Ok(())
}

/// Picks `k` unlabeled samples with the trained selector; returns the picks
/// and the inference FLOPs spent scoring.
fn select_batch(
    data: &Dataset,
    pool: &PoolState,
    selector: &Network,
    settings: &LoopSettings,
    k: usize,
    round: usize,
) -> Result<(Vec<usize>, u64), LoopError> {
    let score_err = |source| LoopError::Score { round, source };
    let select_err = |source| LoopError::Select { round, source };
    let unlabeled = pool.unlabeled_vec();
    let spec = &selector.spec;
    match settings.metric {
        SelectionMetric::Random => {
            let s = seed::derive(seed::derive(settings.master_seed, STREAM_RANDOM_PICKS), round as u64);
            Ok((random_select(pool, k, s).map_err(select_err)?, 0))
        }
        SelectionMetric::LeastConfidence | SelectionMetric::Entropy => {
            let probs = predict_proba(selector, &data.inputs.select_rows(&unlabeled)).map_err(score_err)?;
            let scores = if settings.metric == SelectionMetric::Entropy {
                score_entropy(&probs)
            } else {
                score_least_confidence(&probs)
            }
            .and_then(|s| s.with_indices(&unlabeled))
            .map_err(select_err)?;
            let flops = inference_flops(spec, unlabeled.len()).map_err(score_err)?;
            Ok((top_k(&scores, k).map_err(select_err)?, flops))
        }
        SelectionMetric::GreedyK => {
            let labeled = pool.labeled_vec();
            let u = penultimate_embeddings(selector, &data.inputs.select_rows(&unlabeled)).map_err(score_err)?;
            let l = penultimate_embeddings(selector, &data.inputs.select_rows(&labeled)).map_err(score_err)?;
            let flops = inference_flops(spec, unlabeled.len() + labeled.len()).map_err(score_err)?;
            Ok((greedy_k_centers(&u, Some(&l), &unlabeled, k).map_err(select_err)?, flops))
        }
    }
}
