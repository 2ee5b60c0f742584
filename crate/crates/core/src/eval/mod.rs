//! Relative transfer performance: learning curves, their pointwise
//! differences against a baseline, and the tabular check that a
//! nonnegative difference implies a better policy.

pub mod plot;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{finite_horizon_return, finite_horizon_value, EvalPoint, TabularMdp};
use crate::sac::{TracePoint, TrainOutcome};

pub use report::{aggregate_report, AlgoSummary, ReportSummary};

/// Evaluation curve of one algorithm on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTrace {
    pub algo_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub points: Vec<TracePoint>,
}

impl TransferTrace {
    pub fn new(algo_id: &str, seed: u64, config_hash: &str, points: Vec<TracePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(format!("trace {algo_id} has no evaluation points")));
        }
        if points.windows(2).any(|w| w[1].env_step <= w[0].env_step) {
            return Err(Error::InvalidArgument(format!("trace {algo_id}: env_step must strictly increase")));
        }
        if let Some(p) = points.iter().find(|p| !p.rho.is_finite()) {
            return Err(Error::NonFinite(format!("trace {algo_id} rho at step {}", p.env_step)));
        }
        Ok(Self {
            algo_id: algo_id.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            points,
        })
    }

    pub fn from_outcome(algo_id: &str, seed: u64, config_hash: &str, outcome: &TrainOutcome) -> Result<Self> {
        Self::new(algo_id, seed, config_hash, outcome.trace.clone())
    }

    pub fn from_tabular(algo_id: &str, seed: u64, config_hash: &str, trace: &[EvalPoint]) -> Result<Self> {
        let points = trace
            .iter()
            .map(|p| TracePoint {
                env_step: p.env_step,
                eval_episode: p.eval_episode,
                rho: p.rho,
                beta: None,
            })
            .collect();
        Self::new(algo_id, seed, config_hash, points)
    }

    pub fn schedule(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.env_step).collect()
    }

    /// Trapezoidal area under `rho` over env steps.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[0].rho + w[1].rho) * (w[1].env_step - w[0].env_step) as f64)
            .sum()
    }

    pub fn final_rho(&self) -> f64 {
        self.points.last().map(|p| p.rho).unwrap_or(f64::NAN)
    }

    /// First evaluated env step whose return reaches `threshold`.
    pub fn n_th(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|p| p.rho >= threshold).map(|p| p.env_step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub eval_episode: usize,
    pub env_step: usize,
    pub tau_mean: f64,
    /// Population standard deviation across seeds.
    pub tau_std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSeries {
    pub points: Vec<TauPoint>,
}

impl TauSeries {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tau_mean).collect()
    }
}

fn check_schedule(a: &TransferTrace, b: &TransferTrace) -> Result<()> {
    if a.schedule() != b.schedule() {
        return Err(Error::ScheduleMismatch(format!(
            "{} (seed {}) has {} points, {} (seed {}) has {} points or different steps",
            a.algo_id,
            a.seed,
            a.points.len(),
            b.algo_id,
            b.seed,
            b.points.len()
        )));
    }
    Ok(())
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// `tau_t = rho_algo_t - rho_base_t` for one pair of runs.
pub fn relative_transfer(algo: &TransferTrace, base: &TransferTrace) -> Result<TauSeries> {
    relative_transfer_seeds(std::slice::from_ref(algo), std::slice::from_ref(base))
}

/// Runs are paired by position; every pair must share the evaluation
/// schedule. The mean of paired differences equals the difference of means.
pub fn relative_transfer_seeds(algos: &[TransferTrace], bases: &[TransferTrace]) -> Result<TauSeries> {
    if algos.is_empty() || algos.len() != bases.len() {
        return Err(Error::InvalidArgument(format!(
            "need equally many nonempty algorithm and baseline runs, got {} and {}",
            algos.len(),
            bases.len()
        )));
    }
    for (a, b) in algos.iter().zip(bases) {
        check_schedule(a, b)?;
        check_schedule(a, &algos[0])?;
    }
    let points = (0..algos[0].points.len())
        .map(|k| {
            let per_seed: Vec<f64> = algos
                .iter()
                .zip(bases)
                .map(|(a, b)| a.points[k].rho - b.points[k].rho)
                .collect();
            let (tau_mean, tau_std) = mean_std(&per_seed);
            TauPoint {
                eval_episode: algos[0].points[k].eval_episode,
                env_step: algos[0].points[k].env_step,
                tau_mean,
                tau_std,
                per_seed,
            }
        })
        .collect();
    Ok(TauSeries { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementPoint {
    pub eval_episode: usize,
    /// Exact relative transfer performance from forward propagation.
    pub tau_exact: f64,
    /// Start-state values from backward induction.
    pub value_algo: f64,
    pub value_base: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub points: Vec<ImprovementPoint>,
    pub counterexamples: usize,
}

impl ImprovementReport {
    pub fn holds(&self) -> bool {
        self.counterexamples == 0
    }
}

/// Slack for comparing two exact computations of the same expectation.
pub const IMPROVEMENT_SLACK: f64 = 1e-9;

/// At every evaluation point, computes exact `tau` from the two recorded
/// greedy policies and checks that `tau >= 0` implies the algorithm's
/// start-state value is at least the baseline's.
pub fn improvement_check(
    algo: &TransferTrace,
    base: &TransferTrace,
    mdp: &TabularMdp,
    algo_policies: &[Vec<usize>],
    base_policies: &[Vec<usize>],
    start: usize,
    horizon: usize,
) -> Result<ImprovementReport> {
    check_schedule(algo, base)?;
    let n = algo.points.len();
    if algo_policies.len() != n || base_policies.len() != n {
        return Err(Error::InvalidArgument(format!(
            "need one recorded policy per evaluation point ({n}), got {} and {}",
            algo_policies.len(),
            base_policies.len()
        )));
    }
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let rho_i = finite_horizon_return(mdp, &algo_policies[k], start, horizon)?;
        let rho_b = finite_horizon_return(mdp, &base_policies[k], start, horizon)?;
        let value_algo = finite_horizon_value(mdp, &algo_policies[k], start, horizon)?;
        let value_base = finite_horizon_value(mdp, &base_policies[k], start, horizon)?;
        let tau_exact = rho_i - rho_b;
        let holds = tau_exact < 0.0 || value_algo >= value_base - IMPROVEMENT_SLACK;
        points.push(ImprovementPoint {
            eval_episode: algo.points[k].eval_episode,
            tau_exact,
            value_algo,
            value_base,
            holds,
        });
    }
    let counterexamples = points.iter().filter(|p| !p.holds).count();
    Ok(ImprovementReport {
        points,
        counterexamples,
    })
}
