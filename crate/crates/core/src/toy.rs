//! Four-room Q-value transfer: Q-learning on each target starts either from
//! the source's optimal Q-table or from zeros, and the two learning curves
//! are compared evaluation by evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{relative_transfer_seeds, improvement_check, TauSeries, ImprovementReport, TransferTrace};
use crate::mdp::{finite_horizon_value, four_room, q_learning, value_iteration, GridMdp, GridSpec, QLearningConfig, QTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub steps: usize,
    pub lr: f64,
    pub epsilon: f64,
    /// Training episode length before a restart.
    pub horizon: usize,
    pub eval_every: usize,
    pub eval_horizon: usize,
    pub seeds: Vec<u64>,
    pub vi_tol: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            lr: 0.5,
            epsilon: 0.1,
            horizon: 100,
            eval_every: 10,
            eval_horizon: 50,
            seeds: (0..20).collect(),
            vi_tol: 1e-8,
        }
    }
}

impl ToyConfig {
    fn qlearning(&self, start: usize) -> QLearningConfig {
        QLearningConfig {
            steps: self.steps,
            lr: self.lr,
            epsilon: self.epsilon,
            horizon: self.horizon,
            eval_every: self.eval_every,
            eval_horizon: self.eval_horizon,
            start,
            record_policies: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyTarget {
    pub label: String,
    pub transfer: Vec<TransferTrace>,
    pub scratch: Vec<TransferTrace>,
    pub tau: TauSeries,
    pub improvement: Vec<ImprovementReport>,
    /// `exp(Q*_T(s, pi*_S(s)) - max_a Q*_T(s, a))` per cell; `None` on walls
    /// and the goal.
    pub exp_advantage: Vec<Vec<Option<f64>>>,
    /// Exact start-state return of the target's optimal policy.
    pub optimal_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyResult {
    pub targets: Vec<ToyTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub window: usize,
    /// Per target: share of the window with mean tau >= 0.
    pub nonnegative: Vec<(String, f64)>,
    /// Share of the window where the first target's mean tau is at least the
    /// second's; `None` with fewer than two targets.
    pub first_dominates: Option<f64>,
    pub improvement_counterexamples: usize,
}

impl ToyResult {
    /// Statistics over the first `window` evaluation points.
    pub fn summary(&self, window: usize) -> ToySummary {
        let head = |t: &ToyTarget| -> Vec<f64> { t.tau.means().into_iter().take(window).collect() };
        let nonnegative = self
            .targets
            .iter()
            .map(|t| {
                let m = head(t);
                (t.label.clone(), m.iter().filter(|v| **v >= 0.0).count() as f64 / m.len() as f64)
            })
            .collect();
        let first_dominates = (self.targets.len() >= 2).then(|| {
            let (a, b) = (head(&self.targets[0]), head(&self.targets[1]));
            let n = a.len().min(b.len());
            (0..n).filter(|&k| a[k] >= b[k]).count() as f64 / n as f64
        });
        ToySummary {
            window,
            nonnegative,
            first_dominates,
            improvement_counterexamples: self
                .targets
                .iter()
                .flat_map(|t| &t.improvement)
                .map(|r| r.counterexamples)
                .sum(),
        }
    }
}

pub fn exp_advantage(grid: &GridMdp, q_target: &QTable, q_source: &QTable) -> Vec<Vec<Option<f64>>> {
    let spec = &grid.spec;
    (0..spec.height)
        .map(|r| {
            (0..spec.width)
                .map(|c| {
                    let s = spec.state_of((r, c));
                    if spec.is_wall((r, c)) || (r, c) == spec.goal {
                        return None;
                    }
                    let a = q_source.greedy(s);
                    Some((q_target.get(s, a) - q_target.max(s)).exp())
                })
                .collect()
        })
        .collect()
}

/// Runs transfer and scratch Q-learning for every target and seed.
pub fn run_toy(source: &GridSpec, targets: &[(String, GridSpec)], config: &ToyConfig) -> Result<ToyResult> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("seeds must be nonempty".into()));
    }
    if !(config.vi_tol > 0.0) {
        return Err(Error::InvalidArgument("vi_tol must be > 0".into()));
    }
    let src = four_room(source)?;
    let q_source = value_iteration(&src.mdp, config.vi_tol)?;
    let mut out = Vec::with_capacity(targets.len());
    for (label, spec) in targets {
        let tgt = four_room(spec)?;
        if !tgt.mdp.same_domain(&src.mdp) {
            return Err(Error::DomainMismatch(format!(
                "target {label} is {}x{}, source is {}x{}",
                spec.height, spec.width, source.height, source.width
            )));
        }
        let start = tgt.start_state();
        let ql = config.qlearning(start);
        let zeros = QTable::zeros_for(&tgt.mdp);
        let mut transfer = Vec::new();
        let mut scratch = Vec::new();
        let mut improvement = Vec::new();
        for &seed in &config.seeds {
            let a = q_learning(&tgt.mdp, &q_source, &ql, seed)?;
            let b = q_learning(&tgt.mdp, &zeros, &ql, seed)?;
            let ta = TransferTrace::from_tabular("q_transfer", seed, label, &a.trace)?;
            let tb = TransferTrace::from_tabular("q_scratch", seed, label, &b.trace)?;
            improvement.push(improvement_check(&ta, &tb, &tgt.mdp, &a.policies, &b.policies, start, config.eval_horizon)?);
            transfer.push(ta);
            scratch.push(tb);
        }
        let tau = relative_transfer_seeds(&transfer, &scratch)?;
        let q_target = value_iteration(&tgt.mdp, config.vi_tol)?;
        let optimal_return = finite_horizon_value(&tgt.mdp, &q_target.greedy_policy(), start, config.eval_horizon)?;
        out.push(ToyTarget {
            label: label.clone(),
            exp_advantage: exp_advantage(&tgt, &q_target, &q_source),
            transfer,
            scratch,
            tau,
            improvement,
            optimal_return,
        });
    }
    Ok(ToyResult { targets: out })
}
