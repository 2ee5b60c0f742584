use serde::{Deserialize, Serialize};
use xferlab_core::envs::perturb;
use xferlab_core::eval::mean_std;
use xferlab_core::eval::plot::bar_chart;
use xferlab_core::eval::report::{write_csv, write_json, write_text};
use xferlab_core::tasksim::{collect_random, measure_similarity, ModelPair, SimilarityReport};

use super::{close_run, open_run, slug, unique_labels, RunOptions};
use crate::config::{missing_block, nonempty_seeds, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::parallel::par_map;

/// Offset between the data seeds of consecutive ladder entries.
pub const DATA_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLadder {
    pub seed: u64,
    /// Mean dynamics and reward errors per ladder entry, in config order.
    pub dyn_similarity: Vec<f64>,
    pub rew_similarity: Vec<f64>,
    pub noise_floor_dyn: f64,
    pub noise_floor_rew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOutput {
    pub run_id: String,
    pub labels: Vec<String>,
    pub per_seed: Vec<SeedLadder>,
}

#[derive(Serialize)]
struct LadderRow<'a> {
    seed: u64,
    label: &'a str,
    dyn_similarity: f64,
    rew_similarity: f64,
    dyn_similarity_z: f64,
    rew_similarity_z: f64,
    noise_floor_dyn: f64,
    noise_floor_rew: f64,
    m: usize,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<SimilarityOutput> {
    let mut block = loaded.config.similarity.clone().ok_or_else(|| missing_block("similarity"))?;
    if let Some(s) = opts.seed_override {
        block.seeds = vec![s];
    }
    nonempty_seeds("similarity", &block.seeds)?;
    block.env.validate()?;
    block.fit.validate()?;
    if block.m < 2 || block.ladder.is_empty() {
        return Err(CliError::config("CONFIG_INVALID", "similarity: need m >= 2 and a nonempty ladder"));
    }
    unique_labels("similarity ladder", block.ladder.iter().map(|t| t.label.as_str()))?;
    let envs = block
        .ladder
        .iter()
        .map(|t| perturb(&block.env, &t.perturbation))
        .collect::<Result<Vec<_>, _>>()?;
    let run = open_run("similarity", &block, &[], loaded, opts)?;

    let reports: Vec<Vec<SimilarityReport>> = par_map(&block.seeds, opts.threads, |&seed| {
        let source = collect_random(&block.env, block.m, seed)?;
        let models = ModelPair::fit(&source, &block.fit, seed)?;
        let mut out = Vec::with_capacity(envs.len());
        for (k, env) in envs.iter().enumerate() {
            let data_seed = seed.wrapping_add(DATA_SEED_STRIDE * (k as u64 + 1));
            let target = collect_random(env, block.m, data_seed)?;
            out.push(measure_similarity(&models, &target, &block.fit, block.scoring, data_seed)?);
        }
        Ok(out)
    })?;

    let mut rows = Vec::new();
    for (seed, per) in block.seeds.iter().zip(&reports) {
        for (t, r) in block.ladder.iter().zip(per) {
            rows.push(LadderRow {
                seed: *seed,
                label: &t.label,
                dyn_similarity: r.dyn_similarity,
                rew_similarity: r.rew_similarity,
                dyn_similarity_z: r.dyn_similarity_z,
                rew_similarity_z: r.rew_similarity_z,
                noise_floor_dyn: r.noise_floor_dyn,
                noise_floor_rew: r.noise_floor_rew,
                m: r.m,
            });
            write_json(
                &run.path.join("reports").join(format!("{}_seed{seed}.json", slug(&t.label))),
                r,
            )?;
        }
    }
    write_csv(&run.path.join("ladder.csv"), &rows)?;
    for (name, title, get) in [
        ("similarity_dynamics.svg", "dynamics dissimilarity", (|r: &SimilarityReport| r.dyn_similarity) as fn(&SimilarityReport) -> f64),
        ("similarity_reward.svg", "reward dissimilarity", |r: &SimilarityReport| r.rew_similarity),
    ] {
        let bars: Vec<(String, f64, Option<f64>)> = block
            .ladder
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let vals: Vec<f64> = reports.iter().map(|per| get(&per[k])).collect();
                let (m, s) = mean_std(&vals);
                (t.label.clone(), m, Some(s))
            })
            .collect();
        write_text(&run.path.join(name), &bar_chart(title, "mean L2 error of source model", &bars))?;
    }

    let output = SimilarityOutput {
        run_id: run.run_id.clone(),
        labels: block.ladder.iter().map(|t| t.label.clone()).collect(),
        per_seed: block
            .seeds
            .iter()
            .zip(&reports)
            .map(|(seed, per)| SeedLadder {
                seed: *seed,
                dyn_similarity: per.iter().map(|r| r.dyn_similarity).collect(),
                rew_similarity: per.iter().map(|r| r.rew_similarity).collect(),
                noise_floor_dyn: per[0].noise_floor_dyn,
                noise_floor_rew: per[0].noise_floor_rew,
            })
            .collect(),
    };
    close_run("similarity", &run, opts, &output)?;
    Ok(output)
}
