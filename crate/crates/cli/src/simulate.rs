use std::collections::BTreeSet;

use anyhow::Result;
use clap::Args;
use learnprof_core::sim::{
    builtin_metrics, simulate_on, BuiltinMetric, Metric, SimConfig, SimData, SimResult,
    DEFAULT_ITERATIONS, DEFAULT_MAX_RESAMPLE_ATTEMPTS,
};
use learnprof_core::Error;

use crate::analyze::DataArgs;
use crate::output::{print_json, write_file, write_json, Usage};
use crate::Global;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// dropoff, cttDifficulty, cttDiscrimination, or all
    #[arg(long, default_value = "all")]
    metric: String,
    /// Sample sizes, comma separated [default: 1-2-5 steps from the metric's minimum]
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    /// [default: seed from the config]
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these chapters, comma separated
    #[arg(long, value_delimiter = ',')]
    chapters: Vec<u32>,
    /// Sample from all readers instead of triers only
    #[arg(long)]
    all_readers: bool,
    /// Draws allowed per iteration before giving up on a k
    #[arg(long, default_value_t = DEFAULT_MAX_RESAMPLE_ATTEMPTS)]
    max_attempts: usize,
    #[command(flatten)]
    data: DataArgs,
}

fn metrics(name: &str) -> Result<Vec<BuiltinMetric>> {
    if name == "all" {
        return Ok(builtin_metrics().to_vec());
    }
    name.split(',')
        .map(|n| {
            BuiltinMetric::parse(n.trim()).ok_or_else(|| {
                Usage(format!(
                    "unknown metric {n:?}; expected dropoff, cttDifficulty, cttDiscrimination or all"
                ))
                .into()
            })
        })
        .collect()
}

pub fn run(g: &Global, args: &SimulateArgs) -> Result<()> {
    let metrics = metrics(&args.metric)?;
    let loaded = args.data.load(g)?;
    let mut rs = loaded.responses;
    if !args.chapters.is_empty() {
        let keep: BTreeSet<u32> = args.chapters.iter().copied().collect();
        rs = rs.filter_chapters(&keep);
    }
    if !args.all_readers {
        rs = rs.triers();
    }
    let data = SimData::new(&rs);
    let cfg = SimConfig {
        ks: args.ks.clone(),
        iterations: args.iterations,
        seed: args.seed.unwrap_or(g.config.seed),
        max_resample_attempts: args.max_attempts,
    };
    let mut result = SimResult {
        population: data.n_readers(),
        seed: cfg.seed,
        rows: Vec::new(),
    };
    for m in &metrics {
        match simulate_on(&data, m, &cfg) {
            Ok(r) => result.rows.extend(r.rows),
            // With every metric requested, skip the ones this data cannot support.
            Err(e @ Error::InsufficientData(_)) if args.metric == "all" => {
                tracing::warn!("skipping {}: {e}", m.name());
            }
            Err(e) => return Err(anyhow::anyhow!("{}: {e}", m.name())),
        }
    }
    let out = args.data.out_dir(g);
    let csv = result.to_csv();
    write_file(&out.join("simulation.csv"), &csv)?;
    write_json(&out.join("simulation.json"), &result, g.stamp)?;
    if g.json {
        print_json(&result)
    } else {
        print!("{csv}");
        Ok(())
    }
}
