use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use prunefuse_core::harness::{self, summarize, write_summary, ExperimentConfig, HarnessError};
use prunefuse_core::nn::{forward_flops, init_network, layer_flops, LayerSpec, NetworkSpec};
use prunefuse_core::{make_schedule, prune};

#[derive(Parser)]
#[command(name = "prunefuse", version, about = "Pruned-selector active learning with weight fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the records in a run directory into summary.csv.
    Summarize { dir: PathBuf },
    /// Print the cumulative labeled-set sizes for a pool and budget.
    Schedule {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        budget: f64,
    },
    /// Print per-layer forward FLOPs for the dense network and its pruned selector.
    Flops { config: PathBuf },
}

fn describe(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Dense { in_units, out_units } => format!("dense {in_units}->{out_units}"),
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
            format!("conv {in_ch}->{out_ch} k{kernel} s{stride} p{pad}")
        }
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Flatten => "flatten".into(),
        LayerSpec::GlobalAvgPool => "global_avg_pool".into(),
    }
}

fn print_ledger(title: &str, spec: &NetworkSpec) -> Result<u64> {
    println!("{title}");
    let per_layer = layer_flops(spec, &spec.input_shape)?;
    for (i, (layer, f)) in spec.layers.iter().zip(&per_layer).enumerate() {
        println!("  {i:>2}  {:<28} {f:>12}", describe(layer));
    }
    let total = forward_flops(spec, &spec.input_shape)?;
    println!("  forward total {total:>27}");
    Ok(total)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let records = match harness::run_experiment(&cfg) {
                Ok(records) => records,
                Err(e @ HarnessError::RunsFailed { .. }) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::FAILURE);
                }
                Err(e) => return Err(e.into()),
            };
            for r in &records {
                let acc = r.final_test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"));
                println!("{}  accuracy {acc}  flops {}", r.run_id, r.flops.total);
            }
            println!("wrote {}", cfg.output_dir.join("summary.csv").display());
        }
        Command::Summarize { dir } => {
            write_summary(&dir).with_context(|| format!("summarizing {}", dir.display()))?;
            let rows = summarize(&dir)?;
            println!("mode,p,b,metric,kd,runs,failed,accuracy_mean,accuracy_std,total_flops_mean");
            for r in rows {
                println!(
                    "{},{},{},{},{},{},{},{:.4},{:.4},{:.0}",
                    r.mode.tag(),
                    r.p,
                    r.b,
                    r.metric,
                    r.kd,
                    r.runs,
                    r.failed,
                    r.accuracy_mean,
                    r.accuracy_std,
                    r.total_flops_mean
                );
            }
        }
        Command::Schedule { n, budget } => {
            let schedule = make_schedule(n, budget)?;
            println!("round,labeled_size,delta");
            let mut prev = 0;
            for (i, &s) in schedule.sizes().iter().enumerate() {
                println!("{i},{s},{}", s - prev);
                prev = s;
            }
        }
        Command::Flops { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let splits = cfg.load_splits()?;
            let spec = cfg.network_spec(splits.pool.sample_shape(), splits.pool.num_classes)?;
            let dense = print_ledger("dense", &spec)?;
            if cfg.sparsity.value() > 0.0 {
                let net = init_network(&spec, cfg.seeds[0])?;
                let (selector, _, _) = prune(&net, cfg.sparsity)?;
                let pruned = print_ledger(&format!("selector (p = {})", cfg.sparsity.value()), &selector.spec)?;
                println!("selector / dense {:.4}", pruned as f64 / dense as f64);
            }
            println!("training cost per sample-epoch = {} x forward", harness::TRAIN_PASSES_PER_SAMPLE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
