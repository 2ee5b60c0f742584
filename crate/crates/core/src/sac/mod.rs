//! Soft actor-critic with twin critics, Polyak-averaged targets and a fixed
//! entropy temperature.

pub mod buffer;
pub mod loss;
pub mod train;

pub use buffer::{Batch, ReplayBuffer};
pub use loss::{QFunction, TwinQ};
pub use train::{evaluate, evaluate_with, train_sac, Agent, EvalResult, SacConfig, TracePoint, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::NetworkCheckpoint;
use crate::nn::policy::standard_normal;
use crate::nn::{Activation, AdamState, GaussianPolicy, Mat, MlpParams, Squash, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub polyak: f64,
    pub lr: f64,
}

impl SacHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::InvalidArgument(format!("polyak must be in (0, 1], got {}", self.polyak)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SacLearner {
    pub policy: GaussianPolicy,
    pub critics: [MlpParams; 2],
    pub target_critics: [MlpParams; 2],
    pub hyper: SacHyper,
    policy_opt: AdamState,
    critic_opts: [AdamState; 2],
    pub updates: u64,
}

/// Fresh tanh-squashed policy network `state -> [mean | log_std]`.
pub fn new_policy(
    state_dim: usize,
    action_dim: usize,
    hidden: &[usize],
    bound: f64,
    rng: &mut impl Rng,
) -> Result<GaussianPolicy> {
    let net = MlpParams::mlp(state_dim, hidden, 2 * action_dim, Activation::Relu, rng)?;
    GaussianPolicy::new(
        net,
        Squash::Tanh {
            low: vec![-bound; action_dim],
            high: vec![bound; action_dim],
        },
    )
}

pub fn new_critic(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<MlpParams> {
    MlpParams::mlp(state_dim + action_dim, hidden, 1, Activation::Relu, rng)
}

impl SacLearner {
    pub fn new(policy: GaussianPolicy, critics: [MlpParams; 2], hyper: SacHyper) -> Result<Self> {
        hyper.validate()?;
        let in_dim = policy.state_dim() + policy.action_dim();
        for c in &critics {
            if c.input_dim() != in_dim || c.output_dim() != 1 {
                return Err(Error::shape(
                    "critic",
                    format!("{in_dim} -> 1"),
                    format!("{} -> {}", c.input_dim(), c.output_dim()),
                ));
            }
        }
        if !critics[0].same_shape(&critics[1]) {
            return Err(Error::InvalidArgument("twin critics must share a shape".into()));
        }
        Ok(Self {
            policy_opt: AdamState::new(&policy.net),
            critic_opts: [AdamState::new(&critics[0]), AdamState::new(&critics[1])],
            target_critics: critics.clone(),
            critics,
            policy,
            hyper,
            updates: 0,
        })
    }

    /// Random critics around an existing policy.
    pub fn with_policy(policy: GaussianPolicy, hidden: &[usize], hyper: SacHyper, rng: &mut impl Rng) -> Result<Self> {
        let (sd, ad) = (policy.state_dim(), policy.action_dim());
        let critics = [new_critic(sd, ad, hidden, rng)?, new_critic(sd, ad, hidden, rng)?];
        Self::new(policy, critics, hyper)
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    /// Regression targets for `batch` under the given next-action noise.
    pub fn targets(&self, batch: &Batch, noise: &Mat) -> Mat {
        loss::soft_targets(
            &self.policy,
            &self.target_critics,
            self.hyper.alpha,
            self.hyper.gamma,
            &batch.rewards,
            &batch.next_states,
            &batch.dones,
            noise,
        )
    }

    /// One Adam step per critic toward the soft targets, then Polyak
    /// averaging. Returns the mean of the two critic losses.
    pub fn critic_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        let noise = standard_normal(rng, batch.len(), self.action_dim());
        self.critic_update_with_noise(batch, &noise)
    }

    pub fn critic_update_with_noise(&mut self, batch: &Batch, noise: &Mat) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let y = self.targets(batch, noise);
        let mut total = 0.0;
        for k in 0..2 {
            let mut tape = Tape::new();
            let net = self.critics[k].bind(&mut tape, true);
            let s = tape.constant(batch.states.clone());
            let a = tape.constant(batch.actions.clone());
            let l = loss::critic_mse(&mut tape, &net, s, a, &y);
            let value = tape.scalar_value(l);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("critic {} loss", k + 1)));
            }
            let grads = net.gradients(&tape, &tape.backward(l));
            self.critic_opts[k].step(&mut self.critics[k], &grads, self.hyper.lr)?;
            total += value;
        }
        for k in 0..2 {
            self.target_critics[k].polyak_from(&self.critics[k], self.hyper.polyak);
        }
        Ok(0.5 * total)
    }

    /// `J1` and its gradient with respect to the policy parameters.
    pub fn policy_loss_and_grad(&self, states: &Mat, noise: &Mat) -> (f64, MlpParams) {
        let mut tape = Tape::new();
        let net = self.policy.net.bind(&mut tape, true);
        let s = tape.constant(states.clone());
        let twin = TwinQ::bind(&mut tape, &self.critics, false);
        let j1 = loss::policy_objective(&mut tape, &self.policy, &net, s, noise, self.hyper.alpha, &twin);
        let grads = net.gradients(&tape, &tape.backward(j1));
        (tape.scalar_value(j1), grads)
    }

    pub fn policy_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        let noise = standard_normal(rng, batch.len(), self.action_dim());
        self.policy_update_with_noise(batch, &noise)
    }

    pub fn policy_update_with_noise(&mut self, batch: &Batch, noise: &Mat) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (j1, grads) = self.policy_loss_and_grad(&batch.states, noise);
        if !j1.is_finite() {
            return Err(Error::NonFinite("policy loss J1".into()));
        }
        self.apply_policy_grad(&grads)?;
        Ok(j1)
    }

    pub fn apply_policy_grad(&mut self, grads: &MlpParams) -> Result<()> {
        self.policy_opt.step(&mut self.policy.net, grads, self.hyper.lr)
    }

    /// Single-sample soft value `min Q(s, a) - alpha log pi(a|s)` per row.
    pub fn soft_value(&self, states: &Mat, noise: &Mat) -> Vec<f64> {
        let mut tape = Tape::new();
        let net = self.policy.net.bind(&mut tape, false);
        let s = tape.constant(states.clone());
        let sample = self.policy.rsample(&mut tape, &net, s, noise);
        let twin = TwinQ::bind(&mut tape, &self.critics, false);
        let q = twin.q(&mut tape, s, sample.action);
        let q = tape.value(q);
        let lp = tape.value(sample.log_prob);
        (0..states.nrows())
            .map(|i| q[[i, 0]] - self.hyper.alpha * lp[[i, 0]])
            .collect()
    }

    pub fn q_values(&self, states: &Mat, actions: &Mat) -> Vec<f64> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        let twin = TwinQ::bind(&mut tape, &self.critics, false);
        let q = twin.q(&mut tape, s, a);
        tape.value(q).iter().copied().collect()
    }

    pub fn checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            policy: NetworkCheckpoint::from(&self.policy),
            critics: self.critics.iter().map(NetworkCheckpoint::from).collect(),
            target_critics: self.target_critics.iter().map(NetworkCheckpoint::from).collect(),
            hyper: self.hyper,
            updates: self.updates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacCheckpoint {
    pub policy: NetworkCheckpoint,
    pub critics: Vec<NetworkCheckpoint>,
    pub target_critics: Vec<NetworkCheckpoint>,
    pub hyper: SacHyper,
    pub updates: u64,
}

#[cfg(test)]
mod tests;
