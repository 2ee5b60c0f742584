//! Finite MDPs and the exact machinery built on them: value iteration,
//! policy evaluation, tabular Q-learning, four-room gridworlds and the
//! action-value transfer bound.

pub mod bound;
pub mod grid;
pub mod qlearn;
pub mod solve;

pub use bound::{action_value_bound, bound_sweep, random_mdp, tv_distance, BoundReport, SweepConfig, SweepResult, SweepRow};
pub use grid::{four_room, parse_layout, GridMdp, GridSpec};
pub use qlearn::{q_learning, EvalPoint, QLearningConfig, QLearningRun};
pub use solve::{
    bellman_residual, finite_horizon_return, finite_horizon_value, policy_q_values,
    value_iteration,
};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor `P[s, a, s']`, rewards `R[s, a]` and a
/// discount in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// `transitions` is laid out `[s][a][s']`, `rewards` as `[s][a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state and action".into()));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::shape(
                "transition tensor",
                n_states * n_actions * n_states,
                transitions.len(),
            ));
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::shape("reward matrix", n_states * n_actions, rewards.len()));
        }
        if terminal.len() != n_states {
            return Err(Error::shape("terminal flags", n_states, terminal.len()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0, 1), got {gamma}")));
        }
        let mdp = Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            terminal,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.next_dist(s, a);
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "negative or non-finite transition probability at ({s}, {a})"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "transition row ({s}, {a}) sums to {total}"
                    )));
                }
                if !mdp.reward(s, a).is_finite() {
                    return Err(Error::NonFinite(format!("reward at ({s}, {a})")));
                }
                if mdp.terminal[s] && (row[s] != 1.0 || mdp.reward(s, a) != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "terminal state {s} must self-loop with zero reward"
                    )));
                }
            }
        }
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Distribution over next states for `(s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    /// Largest absolute reward.
    pub fn r_max(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn same_domain(&self, other: &TabularMdp) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// Copy with a different reward matrix.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            rewards,
            self.gamma,
            self.terminal.clone(),
        )
    }

    /// Samples a successor of `(s, a)` from a uniform draw `u` in `[0, 1)`.
    pub fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let row = self.next_dist(s, a);
        for (sp, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return sp;
            }
        }
        // rounding: fall back to the last state with positive mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(s)
    }

    pub(crate) fn check_policy(&self, policy: &[usize]) -> Result<()> {
        if policy.len() != self.n_states {
            return Err(Error::shape("policy", self.n_states, policy.len()));
        }
        if let Some((s, &a)) = policy.iter().enumerate().find(|(_, &a)| a >= self.n_actions) {
            return Err(Error::InvalidArgument(format!(
                "policy picks action {a} in state {s}, but only {} actions exist",
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Action values `Q[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn zeros_for(mdp: &TabularMdp) -> Self {
        Self::zeros(mdp.n_states, mdp.n_actions)
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::shape("q table", n_states * n_actions, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q table".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action; ties go to the lowest action index.
    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.greedy(s)).collect()
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.n_states == mdp.n_states && self.n_actions == mdp.n_actions
    }

    /// `max |self - other|`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5, vec![false]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_gamma_one() {
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![false]).is_err());
    }

    #[test]
    fn terminal_must_self_loop_with_zero_reward() {
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.5, vec![true]).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![true]).is_ok());
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let q = QTable::from_values(1, 3, vec![1.0, 2.0, 2.0]).unwrap();
        assert_eq!(q.greedy(0), 1);
        let q = QTable::zeros(1, 4);
        assert_eq!(q.greedy(0), 0);
    }

    #[test]
    fn sample_next_follows_cumulative_mass() {
        let m = TabularMdp::new(
            2,
            1,
            vec![0.25, 0.75, 0.0, 1.0],
            vec![0.0, 0.0],
            0.9,
            vec![false, false],
        )
        .unwrap();
        assert_eq!(m.sample_next(0, 0, 0.1), 0);
        assert_eq!(m.sample_next(0, 0, 0.3), 1);
        assert_eq!(m.sample_next(0, 0, 0.999_999_999), 1);
    }
}
