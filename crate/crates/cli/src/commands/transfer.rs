use serde::{Deserialize, Serialize};
use xferlab_core::apt::{train_apt, train_finetune, AptConfig, BetaMode};
use xferlab_core::envs::{perturb, EnvSpec};
use xferlab_core::eval::report::{aggregate_report, write_json, write_trace_csv, ReportInputs};
use xferlab_core::eval::{relative_transfer_seeds, TransferTrace};
use xferlab_core::nn::checkpoint::{load_json, NetworkCheckpoint};
use xferlab_core::nn::GaussianPolicy;
use xferlab_core::sac::{evaluate, train_sac, SacConfig};

use super::{close_run, open_run, read_input, slug, unique_labels, RunDir, RunOptions};
use crate::config::{missing_block, nonempty_seeds, LoadedConfig, TransferBlock};
use crate::error::{CliError, CliResult};
use crate::parallel::par_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutput {
    pub label: String,
    /// Source policy evaluated on the target without training.
    pub zero_shot: f64,
    pub seeds: Vec<u64>,
    pub apt_auc: Vec<f64>,
    pub sac_auc: Vec<f64>,
    pub finetune_auc: Vec<f64>,
    pub apt_final: Vec<f64>,
    pub sac_final: Vec<f64>,
    pub finetune_final: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutput {
    pub target: String,
    pub seeds: Vec<u64>,
    pub adaptive_auc: Vec<f64>,
    /// `(beta, per-seed AUC)` for every fixed temperature.
    pub fixed_auc: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutput {
    pub run_id: String,
    /// Source policy evaluated on the source task.
    pub source_return: f64,
    pub targets: Vec<TargetOutput>,
    pub ablation: Option<AblationOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Algo {
    Apt,
    Sac,
    Finetune,
    FixedBeta(f64),
}

impl Algo {
    fn id(self) -> String {
        match self {
            Algo::Apt => "apt".into(),
            Algo::Sac => "sac".into(),
            Algo::Finetune => "finetune".into(),
            Algo::FixedBeta(b) => format!("apt_beta_{b}"),
        }
    }
}

struct Job {
    target: usize,
    algo: Algo,
    seed: u64,
}

fn source_policy(loaded: &LoadedConfig, block: &TransferBlock, run: &RunDir) -> CliResult<GaussianPolicy> {
    if let Some(path) = &block.source.checkpoint {
        let ckpt: NetworkCheckpoint = load_json(&loaded.resolve(path))?;
        return Ok(ckpt.to_policy()?);
    }
    let (learner, outcome) = train_sac(&block.source_env, &block.source.sac, block.source.seed)?;
    let trace = TransferTrace::from_outcome("source_sac", block.source.seed, &run.run_id, &outcome)?;
    write_trace_csv(&run.path.join("source_trace.csv"), &[trace])?;
    Ok(learner.policy)
}

fn run_job(source: &GaussianPolicy, env: &EnvSpec, apt: &AptConfig, job: &Job, hash: &str) -> CliResult<TransferTrace> {
    let sac: &SacConfig = &apt.sac;
    let outcome = match job.algo {
        Algo::Apt => train_apt(source, env, apt, job.seed)?.1,
        Algo::FixedBeta(b) => {
            let mut cfg = apt.clone();
            cfg.beta_mode = BetaMode::Fixed(b);
            train_apt(source, env, &cfg, job.seed)?.1
        }
        Algo::Sac => train_sac(env, sac, job.seed)?.1,
        Algo::Finetune => train_finetune(source, env, sac, job.seed)?.1,
    };
    Ok(TransferTrace::from_outcome(&job.algo.id(), job.seed, hash, &outcome)?)
}

pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> CliResult<TransferOutput> {
    let mut block = loaded.config.transfer.clone().ok_or_else(|| missing_block("transfer"))?;
    if let Some(s) = opts.seed_override {
        block.seeds = vec![s];
        if let Some(a) = &mut block.ablation {
            a.seeds = vec![s];
        }
    }
    nonempty_seeds("transfer", &block.seeds)?;
    block.source_env.validate()?;
    block.source.sac.validate()?;
    block.apt.validate()?;
    if block.targets.is_empty() {
        return Err(CliError::config("CONFIG_INVALID", "transfer: targets must be nonempty"));
    }
    unique_labels("transfer target", block.targets.iter().map(|t| t.label.as_str()))?;
    let envs: Vec<EnvSpec> = block
        .targets
        .iter()
        .map(|t| perturb(&block.source_env, &t.perturbation))
        .collect::<Result<_, _>>()?;
    let ablation_target = match &block.ablation {
        Some(a) => {
            nonempty_seeds("transfer.ablation", &a.seeds)?;
            if a.fixed_betas.is_empty() || a.fixed_betas.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
                return Err(CliError::config(
                    "CONFIG_INVALID",
                    "transfer.ablation: fixed_betas must be nonempty, finite and >= 0",
                ));
            }
            let k = block.targets.iter().position(|t| t.label == a.target).ok_or_else(|| {
                CliError::config("CONFIG_INVALID", format!("transfer.ablation: unknown target {:?}", a.target))
            })?;
            Some(k)
        }
        None => None,
    };
    let inputs = match &block.source.checkpoint {
        Some(p) => vec![read_input(&loaded.resolve(p))?],
        None => vec![],
    };
    let run = open_run("transfer", &block, &inputs, loaded, opts)?;

    let source = source_policy(loaded, &block, &run)?;
    write_json(&run.path.join("source_policy.json"), &NetworkCheckpoint::from(&source))?;
    let eval = |env: &EnvSpec| evaluate(&source, env, block.apt.sac.eval_episodes, block.apt.sac.eval_seed);
    let source_return = eval(&block.source_env)?.mean;

    let mut jobs = Vec::new();
    for target in 0..envs.len() {
        for &seed in &block.seeds {
            for algo in [Algo::Apt, Algo::Sac, Algo::Finetune] {
                jobs.push(Job { target, algo, seed });
            }
        }
    }
    if let (Some(a), Some(target)) = (&block.ablation, ablation_target) {
        for &seed in &a.seeds {
            if !block.seeds.contains(&seed) {
                jobs.push(Job {
                    target,
                    algo: Algo::Apt,
                    seed,
                });
            }
            for &b in &a.fixed_betas {
                jobs.push(Job {
                    target,
                    algo: Algo::FixedBeta(b),
                    seed,
                });
            }
        }
    }
    let traces = par_map(&jobs, opts.threads, |job| {
        run_job(&source, &envs[job.target], &block.apt, job, &run.run_id)
    })?;
    let pick = |target: usize, algo: Algo, seeds: &[u64]| -> Vec<TransferTrace> {
        seeds
            .iter()
            .map(|s| {
                let k = jobs
                    .iter()
                    .position(|j| j.target == target && j.algo == algo && j.seed == *s)
                    .expect("every requested run was scheduled");
                traces[k].clone()
            })
            .collect()
    };

    let mut targets = Vec::new();
    for (k, t) in block.targets.iter().enumerate() {
        let zero_shot = eval(&envs[k])?.mean;
        let apt = pick(k, Algo::Apt, &block.seeds);
        let sac = pick(k, Algo::Sac, &block.seeds);
        let ft = pick(k, Algo::Finetune, &block.seeds);
        let inputs = ReportInputs {
            taus: vec![
                ("apt_vs_sac".into(), relative_transfer_seeds(&apt, &sac)?),
                ("finetune_vs_sac".into(), relative_transfer_seeds(&ft, &sac)?),
            ],
            traces: [apt.clone(), sac.clone(), ft.clone()].concat(),
            threshold: block.threshold,
            references: vec![("zero_shot".into(), zero_shot)],
            title: t.label.clone(),
            ..ReportInputs::default()
        };
        aggregate_report(&inputs, &run.path.join(slug(&t.label)))?;
        let auc = |v: &[TransferTrace]| v.iter().map(TransferTrace::auc).collect();
        let fin = |v: &[TransferTrace]| v.iter().map(TransferTrace::final_rho).collect();
        targets.push(TargetOutput {
            label: t.label.clone(),
            zero_shot,
            seeds: block.seeds.clone(),
            apt_auc: auc(&apt),
            sac_auc: auc(&sac),
            finetune_auc: auc(&ft),
            apt_final: fin(&apt),
            sac_final: fin(&sac),
            finetune_final: fin(&ft),
        });
    }

    let ablation = match (&block.ablation, ablation_target) {
        (Some(a), Some(target)) => {
            let mut adaptive = pick(target, Algo::Apt, &a.seeds);
            for t in &mut adaptive {
                t.algo_id = "apt_adaptive".into();
            }
            let fixed: Vec<(f64, Vec<TransferTrace>)> = a
                .fixed_betas
                .iter()
                .map(|&b| (b, pick(target, Algo::FixedBeta(b), &a.seeds)))
                .collect();
            let mut all = adaptive.clone();
            for (_, v) in &fixed {
                all.extend(v.iter().cloned());
            }
            aggregate_report(
                &ReportInputs {
                    traces: all,
                    threshold: block.threshold,
                    title: format!("{} temperature ablation", a.target),
                    ..ReportInputs::default()
                },
                &run.path.join("ablation"),
            )?;
            Some(AblationOutput {
                target: a.target.clone(),
                seeds: a.seeds.clone(),
                adaptive_auc: adaptive.iter().map(TransferTrace::auc).collect(),
                fixed_auc: fixed
                    .iter()
                    .map(|(b, v)| (*b, v.iter().map(TransferTrace::auc).collect()))
                    .collect(),
            })
        }
        _ => None,
    };

    let output = TransferOutput {
        run_id: run.run_id.clone(),
        source_return,
        targets,
        ablation,
    };
    close_run("transfer", &run, opts, &output)?;
    Ok(output)
}
