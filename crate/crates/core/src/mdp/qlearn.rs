use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{QTable, TabularMdp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningConfig {
    /// Total environment steps; episodes restart from `start` as needed.
    pub steps: usize,
    pub lr: f64,
    pub epsilon: f64,
    /// Step cap of a training episode.
    pub horizon: usize,
    pub eval_every: usize,
    /// Length of the greedy evaluation rollout.
    pub eval_horizon: usize,
    pub start: usize,
    /// Keep a copy of the greedy policy at each evaluation point.
    #[serde(default)]
    pub record_policies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub env_step: usize,
    pub eval_episode: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningRun {
    pub q: QTable,
    pub trace: Vec<EvalPoint>,
    /// Greedy policy at each evaluation point, if recorded.
    pub policies: Vec<Vec<usize>>,
    pub episodes: usize,
}

impl QLearningConfig {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return Err(Error::InvalidArgument(format!("lr must be in (0, 1], got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.horizon == 0 || self.eval_every == 0 || self.eval_horizon == 0 {
            return Err(Error::InvalidArgument(
                "horizon, eval_every and eval_horizon must be positive".into(),
            ));
        }
        if self.start >= mdp.n_states() {
            return Err(Error::InvalidArgument(format!("start state {} out of range", self.start)));
        }
        Ok(())
    }
}

/// Undiscounted reward sum of a greedy rollout of `horizon` steps.
pub fn greedy_rollout(
    mdp: &TabularMdp,
    q: &QTable,
    start: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut s = start;
    let mut total = 0.0;
    for _ in 0..horizon {
        if mdp.is_terminal(s) {
            break;
        }
        let a = q.greedy(s);
        total += mdp.reward(s, a);
        s = mdp.sample_next(s, a, rng.gen());
    }
    total
}

/// Tabular Q-learning with epsilon-greedy exploration. The greedy policy is
/// evaluated before the first step and after every `eval_every` steps.
pub fn q_learning(
    mdp: &TabularMdp,
    q_init: &QTable,
    config: &QLearningConfig,
    seed: u64,
) -> Result<QLearningRun> {
    config.validate(mdp)?;
    if !q_init.matches(mdp) {
        return Err(Error::shape(
            "initial q table",
            format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            format!("{}x{}", q_init.n_states(), q_init.n_actions()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
    eval_rng.set_stream(1);

    let mut q = q_init.clone();
    let mut trace = Vec::new();
    let mut policies = Vec::new();
    let mut record = |q: &QTable, step: usize, eval_rng: &mut ChaCha8Rng| {
        let rho = greedy_rollout(mdp, q, config.start, config.eval_horizon, eval_rng);
        trace.push(EvalPoint {
            env_step: step,
            eval_episode: trace.len(),
            rho,
        });
        if config.record_policies {
            policies.push(q.greedy_policy());
        }
    };
    record(&q, 0, &mut eval_rng);

    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut s = config.start;
    let mut t_in_episode = 0;
    let mut episodes = 0;
    for step in 1..=config.steps {
        let a = if rng.gen::<f64>() < config.epsilon {
            rng.gen_range(0..na)
        } else {
            q.greedy(s)
        };
        let r = mdp.reward(s, a);
        let s_next = mdp.sample_next(s, a, rng.gen());
        let bootstrap = if mdp.is_terminal(s_next) { 0.0 } else { q.max(s_next) };
        let old = q.get(s, a);
        q.set(s, a, old + config.lr * (r + gamma * bootstrap - old));
        t_in_episode += 1;
        if mdp.is_terminal(s_next) || t_in_episode >= config.horizon {
            s = config.start;
            t_in_episode = 0;
            episodes += 1;
        } else {
            s = s_next;
        }
        if step % config.eval_every == 0 {
            record(&q, step, &mut eval_rng);
        }
    }
    Ok(QLearningRun {
        q,
        trace,
        policies,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::grid::{four_room, parse_layout};
    use crate::mdp::solve::{finite_horizon_return, value_iteration};

    const SMALL: &str = "#######\n#S....#\n#.###.#\n#....G#\n#######\n";

    fn config(steps: usize, epsilon: f64, start: usize) -> QLearningConfig {
        QLearningConfig {
            steps,
            lr: 0.5,
            epsilon,
            horizon: 50,
            eval_every: 10,
            eval_horizon: 30,
            start,
            record_policies: true,
        }
    }

    #[test]
    fn optimal_init_without_exploration_stays_optimal() {
        let g = four_room(&parse_layout(SMALL).unwrap()).unwrap();
        let q_star = value_iteration(&g.mdp, 1e-12).unwrap();
        let cfg = config(500, 0.0, g.start_state());
        let run = q_learning(&g.mdp, &q_star, &cfg, 3).unwrap();
        let optimal =
            finite_horizon_return(&g.mdp, &q_star.greedy_policy(), g.start_state(), 30).unwrap();
        assert_eq!(run.trace.len(), 51);
        for p in &run.trace {
            assert!((p.rho - optimal).abs() < 1e-12);
        }
    }

    #[test]
    fn learns_small_grid_from_zero() {
        let g = four_room(&parse_layout(SMALL).unwrap()).unwrap();
        let q_star = value_iteration(&g.mdp, 1e-12).unwrap();
        let optimal =
            finite_horizon_return(&g.mdp, &q_star.greedy_policy(), g.start_state(), 30).unwrap();
        let run = q_learning(&g.mdp, &QTable::zeros_for(&g.mdp), &config(3000, 0.2, g.start_state()), 1)
            .unwrap();
        assert!((run.trace.last().unwrap().rho - optimal).abs() < 1e-12);
        assert!(run.episodes > 0);
    }

    #[test]
    fn same_seed_same_trace() {
        let g = four_room(&parse_layout(SMALL).unwrap()).unwrap();
        let cfg = config(400, 0.3, g.start_state());
        let a = q_learning(&g.mdp, &QTable::zeros_for(&g.mdp), &cfg, 9).unwrap();
        let b = q_learning(&g.mdp, &QTable::zeros_for(&g.mdp), &cfg, 9).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let g = four_room(&parse_layout(SMALL).unwrap()).unwrap();
        let q = QTable::zeros_for(&g.mdp);
        let mut cfg = config(10, 0.1, g.start_state());
        cfg.lr = 0.0;
        assert!(q_learning(&g.mdp, &q, &cfg, 0).is_err());
        cfg.lr = 0.5;
        cfg.epsilon = 1.5;
        assert!(q_learning(&g.mdp, &q, &cfg, 0).is_err());
    }
}
