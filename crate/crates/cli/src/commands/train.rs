use serde::{Deserialize, Serialize};
use xferlab_core::eval::report::{aggregate_report, write_json, ReportInputs};
use xferlab_core::eval::TransferTrace;
use xferlab_core::nn::checkpoint::NetworkCheckpoint;
use xferlab_core::sac::{evaluate_with, train_sac};

use super::{close_run, open_run, RunOptions};
use crate::config::{missing_block, nonempty_seeds, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::parallel::par_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub run_id: String,
    pub threshold: f64,
    /// Reference controller's mean return on the evaluation protocol.
    pub controller_return: f64,
    /// `controller_return - threshold_band * |controller_return|`.
    pub calibrated_threshold: f64,
    pub seeds: Vec<u64>,
    pub n_th: Vec<Option<usize>>,
    pub final_returns: Vec<f64>,
    pub reached: usize,
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<TrainOutput> {
    let mut block = loaded.config.train.clone().ok_or_else(|| missing_block("train"))?;
    if let Some(s) = opts.seed_override {
        block.seeds = vec![s];
    }
    nonempty_seeds("train", &block.seeds)?;
    block.env.validate()?;
    block.sac.validate()?;
    if !block.threshold.is_finite() || !(0.0..1.0).contains(&block.threshold_band) {
        return Err(CliError::config(
            "CONFIG_INVALID",
            "train: threshold must be finite and threshold_band in [0, 1)",
        ));
    }
    let run = open_run("train", &block, &[], loaded, opts)?;

    let env = &block.env;
    let ctrl = block.controller;
    let controller_return =
        evaluate_with(env, block.sac.eval_episodes, block.sac.eval_seed, |s| Ok(ctrl.act(env, s)))?.mean;
    let mut sac = block.sac.clone();
    sac.stop_at = block.stop_at_threshold.then_some(block.threshold);

    let runs = par_map(&block.seeds, opts.threads, |&seed| {
        let (learner, outcome) = train_sac(env, &sac, seed)?;
        let trace = TransferTrace::from_outcome("sac", seed, &run.run_id, &outcome)?;
        Ok((trace, NetworkCheckpoint::from(&learner.policy)))
    })?;
    for ((_, policy), seed) in runs.iter().zip(&block.seeds) {
        write_json(&run.path.join("policies").join(format!("seed_{seed}.json")), policy)?;
    }
    let traces: Vec<TransferTrace> = runs.into_iter().map(|r| r.0).collect();
    aggregate_report(
        &ReportInputs {
            traces: traces.clone(),
            threshold: Some(block.threshold),
            references: vec![("controller".into(), controller_return)],
            title: "scratch SAC".into(),
            ..ReportInputs::default()
        },
        &run.path,
    )?;

    let n_th: Vec<Option<usize>> = traces.iter().map(|t| t.n_th(block.threshold)).collect();
    let output = TrainOutput {
        run_id: run.run_id.clone(),
        threshold: block.threshold,
        controller_return,
        calibrated_threshold: controller_return - block.threshold_band * controller_return.abs(),
        seeds: block.seeds.clone(),
        reached: n_th.iter().filter(|n| n.is_some()).count(),
        final_returns: traces.iter().map(|t| t.final_rho()).collect(),
        n_th,
    };
    close_run("train", &run, opts, &output)?;
    Ok(output)
}
