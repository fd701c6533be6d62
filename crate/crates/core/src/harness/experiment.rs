use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, Splits};
use super::flops::{inference_flops, training_flops, TRAIN_PASSES_PER_SAMPLE};
use super::summary::write_summary;
use super::HarnessError;
use crate::alcycle::{make_schedule, run_selection_loop, LoopSettings, RoundRecord};
use crate::fuse::{finetune_fused, fuse, FusionReport};
use crate::nn::{self, init_network, param_count, EpochStats, Network, NetworkSpec, NnError, TrainConfig};
use crate::prune::PrunedTopology;
use crate::select::SelectionMetric;
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_FINAL: u64 = 0xF1;

/// Integer FLOPs totals for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopsLedger {
    /// Backward is costed at twice the forward pass.
    pub train_passes_per_sample: u64,
    /// Selector training plus pool scoring over all rounds.
    pub selection: u64,
    /// Training the final model.
    pub final_student: u64,
    /// Teacher forward passes during distillation.
    pub final_teacher: u64,
    pub final_training: u64,
    pub total: u64,
}

impl FlopsLedger {
    pub fn new(selection: u64, final_student: u64, final_teacher: u64) -> Self {
        let final_training = final_student + final_teacher;
        Self {
            train_passes_per_sample: TRAIN_PASSES_PER_SAMPLE,
            selection,
            final_student,
            final_teacher,
            final_training,
            total: selection + final_training,
        }
    }

    /// True when the totals follow from the components and the round records.
    pub fn is_consistent(&self, rounds: &[RoundRecord]) -> bool {
        let from_rounds: u64 = rounds.iter().map(|r| r.flops_this_round).sum();
        let rounds_ok = rounds.iter().all(|r| r.training_flops + r.scoring_flops == r.flops_this_round);
        rounds_ok && from_rounds == self.selection && *self == Self::new(self.selection, self.final_student, self.final_teacher)
    }
}

/// One line of `<run_id>.record.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub p: f64,
    pub b: f64,
    pub metric: SelectionMetric,
    pub kd_enabled: bool,
    pub dataset: String,
    pub network: String,
    pub pool_size: usize,
    pub labeled_size: usize,
    pub rounds: Vec<RoundRecord>,
    pub final_test_accuracy: Option<f64>,
    /// Per-epoch statistics of the final model, evaluated on the test split.
    pub final_history: Vec<EpochStats>,
    pub flops: FlopsLedger,
    pub selector_params: Option<usize>,
    pub final_params: Option<usize>,
    pub fusion: Option<FusionReport>,
    pub error: Option<String>,
}

impl MetricsRecord {
    /// Number of rounds that labeled new samples.
    pub fn selection_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.selected > 0).count()
    }

    /// Eval accuracy per final-training epoch.
    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.final_history.iter().filter_map(|e| e.eval_accuracy).collect()
    }
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    let kd = match (cfg.mode, cfg.kd.enabled) {
        (Mode::Prunefuse, true) => ".kd",
        (Mode::Prunefuse, false) => ".nokd",
        _ => "",
    };
    format!(
        "{}.{}.p{}.b{}.{}{kd}.s{seed}",
        cfg.name,
        cfg.mode.tag(),
        cfg.sparsity.value(),
        cfg.budget,
        cfg.metric.tag()
    )
}

fn stage(stage: &'static str) -> impl Fn(NnError) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn phase_cfg(base: &TrainConfig, run_seed: u64) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(seed::derive(run_seed, STREAM_FINAL), base.seed),
        ..base.clone()
    }
}

/// Runs one seed end to end. Failures are recorded in `error`, keeping the
/// measurements gathered before the failing stage.
pub fn run_seed(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> (MetricsRecord, Option<PrunedTopology>, Vec<usize>) {
    let mut rec = MetricsRecord {
        schema_version: SCHEMA_VERSION,
        run_id: run_id(cfg, seed),
        name: cfg.name.clone(),
        seed,
        mode: cfg.mode,
        p: cfg.sparsity.value(),
        b: cfg.budget,
        metric: cfg.metric,
        kd_enabled: cfg.mode == Mode::Prunefuse && cfg.kd.enabled,
        dataset: splits.pool.name.clone(),
        network: cfg.network.tag(),
        pool_size: splits.pool.len(),
        labeled_size: 0,
        rounds: Vec::new(),
        final_test_accuracy: None,
        final_history: Vec::new(),
        flops: FlopsLedger::new(0, 0, 0),
        selector_params: None,
        final_params: None,
        fusion: None,
        error: None,
    };
    let mut topo = None;
    let mut labeled = Vec::new();
    if let Err(e) = run_stages(cfg, splits, seed, &mut rec, &mut topo, &mut labeled) {
        rec.error = Some(e.to_string());
    }
    (rec, topo, labeled)
}

fn run_stages(
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    rec: &mut MetricsRecord,
    topo_out: &mut Option<PrunedTopology>,
    labeled_out: &mut Vec<usize>,
) -> Result<(), HarnessError> {
    let Splits { pool, val, test } = splits;
    let spec: NetworkSpec = cfg.network_spec(pool.sample_shape(), pool.num_classes)?;
    let dense_flops = |n: usize, epochs: usize| training_flops(&spec, n, epochs).map_err(stage("ledger"));

    if cfg.mode == Mode::FullDataReference {
        let theta = init_network(&spec, seed).map_err(stage("init"))?;
        let tcfg = phase_cfg(&cfg.train.baseline, seed);
        let (net, hist) = nn::train(&theta, pool, &tcfg, None, Some(test)).map_err(stage("final_training"))?;
        rec.labeled_size = pool.len();
        rec.flops = FlopsLedger::new(0, dense_flops(pool.len(), tcfg.epochs)?, 0);
        return finish(rec, &net, hist);
    }

    let schedule = make_schedule(pool.len(), cfg.budget).map_err(|e| HarnessError::Stage {
        stage: "schedule",
        message: e.to_string(),
    })?;
    let settings = LoopSettings {
        spec: spec.clone(),
        sparsity: cfg.sparsity,
        metric: cfg.metric,
        schedule,
        train: cfg.train.selector.clone(),
        master_seed: seed,
    };
    let out = run_selection_loop(pool, Some(val), &settings).map_err(|e| HarnessError::Stage {
        stage: "selection",
        message: e.to_string(),
    })?;
    rec.rounds = out.rounds.clone();
    rec.selector_params = Some(param_count(&out.selector));
    *labeled_out = out.pool.labeled_vec();
    *topo_out = Some(out.topo.clone());
    rec.labeled_size = labeled_out.len();
    let selection = out.selection_flops();
    rec.flops = FlopsLedger::new(selection, 0, 0);
    let labeled = pool.subset(labeled_out);

    let (net, hist, student, teacher) = match cfg.mode {
        Mode::Prunefuse => {
            let (theta_f, report) = fuse(&out.theta_init, &out.selector, &out.topo).map_err(|e| HarnessError::Stage {
                stage: "fusion",
                message: e.to_string(),
            })?;
            rec.fusion = Some(report);
            let tcfg = phase_cfg(&cfg.train.fused, seed);
            let kd = cfg.kd.active();
            let (net, hist) = finetune_fused(&theta_f, &out.selector, &labeled, &tcfg, kd, Some(test))
                .map_err(stage("final_training"))?;
            let teacher = match kd {
                Some(_) => inference_flops(&out.topo.compact_spec, labeled.len()).map_err(stage("ledger"))? * tcfg.epochs as u64,
                None => 0,
            };
            (net, hist, dense_flops(labeled.len(), tcfg.epochs)?, teacher)
        }
        Mode::BaselineAl | Mode::NoFusionAblation => {
            let base = if cfg.mode == Mode::BaselineAl {
                &cfg.train.baseline
            } else {
                &cfg.train.fused
            };
            let tcfg = phase_cfg(base, seed);
            let (net, hist) =
                nn::train(&out.theta_init, &labeled, &tcfg, None, Some(test)).map_err(stage("final_training"))?;
            (net, hist, dense_flops(labeled.len(), tcfg.epochs)?, 0)
        }
        Mode::FullDataReference => unreachable!("handled above"),
    };
    rec.flops = FlopsLedger::new(selection, student, teacher);
    finish(rec, &net, hist)
}

fn finish(rec: &mut MetricsRecord, net: &Network, hist: Vec<EpochStats>) -> Result<(), HarnessError> {
    rec.final_params = Some(param_count(net));
    rec.final_test_accuracy = hist.last().and_then(|e| e.eval_accuracy);
    rec.final_history = hist;
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("record types serialize infallibly")
}

fn write_run(
    dir: &Path,
    rec: &MetricsRecord,
    topo: Option<&PrunedTopology>,
    labeled: &[usize],
    wall_seconds: f64,
) -> Result<(), HarnessError> {
    let id = &rec.run_id;
    write_file(&dir.join(format!("{id}.record.jsonl")), format!("{}\n", to_json(rec)).as_bytes())?;
    let rounds: String = rec.rounds.iter().map(|r| to_json(r) + "\n").collect();
    write_file(&dir.join(format!("{id}.rounds.jsonl")), rounds.as_bytes())?;
    if let Some(topo) = topo {
        write_file(&dir.join(format!("{id}.topology.json")), to_json(topo).as_bytes())?;
    }
    if rec.mode.uses_selection() {
        write_file(&dir.join(format!("{id}.labeled.json")), to_json(&labeled).as_bytes())?;
    }
    // wall time lives outside the records so they stay byte-reproducible
    let timing = serde_json::json!({ "run_id": id, "wall_seconds": wall_seconds });
    write_file(&dir.join(format!("{id}.timing.json")), timing.to_string().as_bytes())
}

/// Runs every seed, writes per-run files and `summary.csv` under the output
/// directory, and returns the records in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>, HarnessError> {
    let cfg = cfg.clone().normalized()?;
    let splits = cfg.load_splits()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    let config_text = cfg.to_toml_string()?;
    write_file(&dir.join(format!("{}.config.toml", cfg.name)), config_text.as_bytes())?;

    let one = |&seed: &u64| {
        let start = Instant::now();
        let (rec, topo, labeled) = run_seed(&cfg, &splits, seed);
        let wall = start.elapsed().as_secs_f64();
        write_run(dir, &rec, topo.as_ref(), &labeled, wall).map(|()| rec)
    };
    let results: Vec<Result<MetricsRecord, HarnessError>> = if cfg.parallel {
        cfg.seeds.par_iter().map(one).collect()
    } else {
        cfg.seeds.iter().map(one).collect()
    };
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_summary(dir)?;
    let failed: Vec<String> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} ({e})", r.run_id)))
        .collect();
    if !failed.is_empty() {
        return Err(HarnessError::RunsFailed {
            failed,
            total: records.len(),
        });
    }
    Ok(records)
}
