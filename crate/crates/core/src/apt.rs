//! Advantage-weighted policy transfer on top of SAC.
//!
//! The target policy is trained with the SAC objective plus a cross-entropy
//! pull toward a source policy. The pull is weighted by `beta = exp(gap)`
//! where `gap` compares the soft value of source-proposed and
//! target-proposed actions under the current critic. The source policy
//! itself keeps training on target data with the SAC objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::checkpoint::NetworkCheckpoint;
use crate::nn::policy::standard_normal;
use crate::nn::{AdamState, GaussianPolicy, Mat, MlpParams, Squash, Tape};
use crate::sac::loss::{cross_entropy, policy_objective, QFunction, TwinQ};
use crate::sac::train::{run_streams, train_loop, Agent, SacConfig, TrainOutcome};
use crate::sac::{Batch, SacCheckpoint, SacLearner};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum BetaMode {
    /// `beta = exp(clip(gap))` every update.
    Adaptive,
    Fixed(f64),
    /// Drop the regularizer entirely; the update is plain SAC.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Soft values: `[Q(s,a_src) - alpha log mu(a_src|s)] - [Q(s,a_tgt) - alpha log pi(a_tgt|s)]`.
    Soft,
    /// Critic values only: `Q(s,a_src) - Q(s,a_tgt)`.
    QOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    CopySource,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AptConfig {
    pub sac: SacConfig,
    /// Learning rate of the source policy; 0 freezes it.
    pub source_lr: f64,
    pub beta_clamp: [f64; 2],
    pub beta_mode: BetaMode,
    pub gap_mode: GapMode,
    pub policy_init: PolicyInit,
}

impl Default for AptConfig {
    fn default() -> Self {
        Self {
            sac: SacConfig::default(),
            source_lr: 3e-4,
            beta_clamp: [-10.0, 10.0],
            beta_mode: BetaMode::Adaptive,
            gap_mode: GapMode::Soft,
            policy_init: PolicyInit::CopySource,
        }
    }
}

impl AptConfig {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if !(self.source_lr >= 0.0) || !self.source_lr.is_finite() {
            return Err(Error::InvalidArgument(format!("source_lr must be >= 0, got {}", self.source_lr)));
        }
        let [lo, hi] = self.beta_clamp;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("beta_clamp must satisfy lo <= hi, got [{lo}, {hi}]")));
        }
        if let BetaMode::Fixed(b) = self.beta_mode {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::InvalidArgument(format!("fixed beta must be >= 0, got {b}")));
            }
        }
        Ok(())
    }
}

/// `exp(clip(gap, lo, hi))`.
pub fn beta(gap: f64, clamp: [f64; 2]) -> f64 {
    gap.clamp(clamp[0], clamp[1]).exp()
}

/// Per-sample gaps from critic values and log-densities of the two actions.
pub fn gap_samples(
    q_source: &[f64],
    logp_source: &[f64],
    q_target: &[f64],
    logp_target: &[f64],
    alpha: f64,
    mode: GapMode,
) -> Vec<f64> {
    (0..q_source.len())
        .map(|i| match mode {
            GapMode::Soft => (q_source[i] - alpha * logp_source[i]) - (q_target[i] - alpha * logp_target[i]),
            GapMode::QOnly => q_source[i] - q_target[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub mean: f64,
    pub samples: Vec<f64>,
}

impl GapEstimate {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        let n = self.samples.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let var = self.samples.iter().map(|g| (g - self.mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Critic values and log-densities of source and target actions.
fn gap_columns(
    source: &GaussianPolicy,
    target: &GaussianPolicy,
    critic: &dyn Fn(&mut Tape) -> Box<dyn QFunction>,
    states: &Mat,
    noise_source: &Mat,
    noise_target: &Mat,
) -> [Vec<f64>; 4] {
    let mut tape = Tape::new();
    let q = critic(&mut tape);
    let s = tape.constant(states.clone());
    let src_net = source.net.bind(&mut tape, false);
    let tgt_net = target.net.bind(&mut tape, false);
    let a_src = source.rsample(&mut tape, &src_net, s, noise_source);
    let a_tgt = target.rsample(&mut tape, &tgt_net, s, noise_target);
    let q_src = q.q(&mut tape, s, a_src.action);
    let q_tgt = q.q(&mut tape, s, a_tgt.action);
    let col = |v| tape.value(v).iter().copied().collect::<Vec<f64>>();
    [col(q_src), col(a_src.log_prob), col(q_tgt), col(a_tgt.log_prob)]
}

/// Gap estimate with explicit noise for the source and target samples.
pub fn advantage_gap_with(
    source: &GaussianPolicy,
    target: &GaussianPolicy,
    critic: &dyn Fn(&mut Tape) -> Box<dyn QFunction>,
    states: &Mat,
    noise_source: &Mat,
    noise_target: &Mat,
    alpha: f64,
    mode: GapMode,
) -> Result<GapEstimate> {
    if states.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let [q_src, lp_src, q_tgt, lp_tgt] = gap_columns(source, target, critic, states, noise_source, noise_target);
    let samples = gap_samples(&q_src, &lp_src, &q_tgt, &lp_tgt, alpha, mode);
    if samples.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("advantage gap".into()));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(GapEstimate { mean, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaIdentityReport {
    pub samples: usize,
    pub gap_mean: f64,
    pub gap_std_error: f64,
    pub beta: f64,
    pub beta_at_zero: f64,
    /// Largest relative error of `beta(shifted) / beta = e^c` over the shifts.
    pub shift_rel_err: f64,
}

/// Checks the temperature identities with a random policy compared against
/// itself under a random twin critic: independent noise for both sides,
/// `samples` states, and source values shifted by each `c` in `shifts`.
pub fn beta_identity_check(samples: usize, shifts: &[f64], seed: u64) -> Result<BetaIdentityReport> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let (sd, ad, alpha, clamp) = (4, 2, 0.2, [-10.0, 10.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = crate::sac::new_policy(sd, ad, &[16], 1.0, &mut rng)?;
    let critics = [
        crate::sac::new_critic(sd, ad, &[16], &mut rng)?,
        crate::sac::new_critic(sd, ad, &[16], &mut rng)?,
    ];
    let states = standard_normal(&mut rng, samples, sd);
    let n_src = standard_normal(&mut rng, samples, ad);
    let n_tgt = standard_normal(&mut rng, samples, ad);
    let twin = |tape: &mut Tape| Box::new(TwinQ::bind(tape, &critics, false)) as Box<dyn QFunction>;
    let [q_src, lp_src, q_tgt, lp_tgt] = gap_columns(&policy, &policy, &twin, &states, &n_src, &n_tgt);
    let mean = |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64;
    let gaps = gap_samples(&q_src, &lp_src, &q_tgt, &lp_tgt, alpha, GapMode::Soft);
    let est = GapEstimate {
        mean: mean(&gaps),
        samples: gaps,
    };
    let base = beta(est.mean, clamp);
    let mut shift_rel_err = 0.0f64;
    for &c in shifts {
        let moved: Vec<f64> = q_src.iter().map(|q| q + c).collect();
        let g = mean(&gap_samples(&moved, &lp_src, &q_tgt, &lp_tgt, alpha, GapMode::Soft));
        let err = (beta(g, clamp) / base - c.exp()).abs() / c.exp();
        shift_rel_err = shift_rel_err.max(err);
    }
    Ok(BetaIdentityReport {
        samples,
        gap_mean: est.mean,
        gap_std_error: est.std_error(),
        beta: base,
        beta_at_zero: beta(0.0, clamp),
        shift_rel_err,
    })
}

/// Draws actions from `policy` whose log-density is finite, redrawing rows
/// that saturated onto the action bound.
pub fn sample_interior(policy: &GaussianPolicy, states: &Mat, rng: &mut impl Rng) -> Result<Mat> {
    let (mut actions, _) = policy.sample_batch(states, rng)?;
    let (low, high) = match &policy.squash {
        Squash::None => return Ok(actions),
        Squash::Tanh { low, high } => (low.clone(), high.clone()),
    };
    for _ in 0..100 {
        let bad: Vec<usize> = (0..actions.nrows())
            .filter(|&i| (0..actions.ncols()).any(|j| actions[[i, j]] <= low[j] || actions[[i, j]] >= high[j]))
            .collect();
        if bad.is_empty() {
            return Ok(actions);
        }
        for i in bad {
            let s = states.row(i).to_owned().insert_axis(ndarray::Axis(0));
            let (a, _) = policy.sample_batch(&s, rng)?;
            actions.row_mut(i).assign(&a.row(0));
        }
    }
    Err(Error::NonFinite("source actions stay on the bound after 100 redraws".into()))
}

/// `J2` for fixed source actions, without gradient.
pub fn cross_entropy_value(target: &GaussianPolicy, states: &Mat, source_actions: &Mat) -> Result<f64> {
    let mut tape = Tape::new();
    let net = target.net.bind(&mut tape, false);
    let s = tape.constant(states.clone());
    let j2 = cross_entropy(&mut tape, target, &net, s, source_actions)?;
    Ok(tape.scalar_value(j2))
}

/// `J2 = E_{a ~ mu}[-log pi(a|s)]` with one source sample per state.
pub fn cross_entropy_loss(
    target: &GaussianPolicy,
    source: &GaussianPolicy,
    states: &Mat,
    rng: &mut impl Rng,
) -> Result<f64> {
    let actions = sample_interior(source, states, rng)?;
    cross_entropy_value(target, states, &actions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStep {
    pub j1: f64,
    pub j2: Option<f64>,
    pub beta: f64,
}

/// Value and gradient of `J1 + beta J2`; `J2` is left out when
/// `source_actions` is `None`.
pub fn combined_loss_and_grad(
    policy: &GaussianPolicy,
    critics: &[MlpParams; 2],
    alpha: f64,
    states: &Mat,
    noise: &Mat,
    source_actions: Option<&Mat>,
    beta: f64,
) -> Result<(f64, Option<f64>, MlpParams)> {
    let mut tape = Tape::new();
    let net = policy.net.bind(&mut tape, true);
    let s = tape.constant(states.clone());
    let twin = TwinQ::bind(&mut tape, critics, false);
    let j1 = policy_objective(&mut tape, policy, &net, s, noise, alpha, &twin);
    let (loss, j2) = match source_actions {
        None => (j1, None),
        Some(a) => {
            let j2 = cross_entropy(&mut tape, policy, &net, s, a)?;
            let weighted = tape.scale(j2, beta);
            (tape.add(j1, weighted), Some(j2))
        }
    };
    let grads = net.gradients(&tape, &tape.backward(loss));
    let j1v = tape.scalar_value(j1);
    let j2v = j2.map(|v| tape.scalar_value(v));
    if !j1v.is_finite() {
        return Err(Error::NonFinite("policy loss J1".into()));
    }
    if j2v.is_some_and(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cross-entropy loss J2".into()));
    }
    Ok((j1v, j2v, grads))
}

#[derive(Debug, Clone)]
pub struct AptLearner {
    pub base: SacLearner,
    pub source: GaussianPolicy,
    source_opt: AdamState,
    pub config: AptConfig,
    pub beta_history: Vec<f64>,
}

impl AptLearner {
    pub fn new(base: SacLearner, source: GaussianPolicy, config: AptConfig) -> Result<Self> {
        config.validate()?;
        check_domain(&source, &base.policy)?;
        Ok(Self {
            source_opt: AdamState::new(&source.net),
            base,
            source,
            config,
            beta_history: Vec::new(),
        })
    }

    fn twin(&self) -> impl Fn(&mut Tape) -> Box<dyn QFunction> + '_ {
        move |tape: &mut Tape| Box::new(TwinQ::bind(tape, &self.base.critics, false)) as Box<dyn QFunction>
    }

    pub fn advantage_gap(&self, states: &Mat, rng: &mut impl Rng) -> Result<GapEstimate> {
        let d = self.base.action_dim();
        let n_src = standard_normal(rng, states.nrows(), d);
        let n_tgt = standard_normal(rng, states.nrows(), d);
        advantage_gap_with(
            &self.source,
            &self.base.policy,
            &self.twin(),
            states,
            &n_src,
            &n_tgt,
            self.base.hyper.alpha,
            self.config.gap_mode,
        )
    }

    /// One Adam step of the source policy on the SAC objective.
    pub fn source_sync_update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let noise = standard_normal(rng, batch.len(), self.base.action_dim());
        let mut tape = Tape::new();
        let net = self.source.net.bind(&mut tape, true);
        let s = tape.constant(batch.states.clone());
        let twin = TwinQ::bind(&mut tape, &self.base.critics, false);
        let j = policy_objective(&mut tape, &self.source, &net, s, &noise, self.base.hyper.alpha, &twin);
        let value = tape.scalar_value(j);
        if !value.is_finite() {
            return Err(Error::NonFinite("source policy loss".into()));
        }
        if self.config.source_lr > 0.0 {
            let grads = net.gradients(&tape, &tape.backward(j));
            self.source_opt.step(&mut self.source.net, &grads, self.config.source_lr)?;
        }
        Ok(value)
    }

    /// Policy step on `J1 + beta J2` with `beta` fixed for the step.
    pub fn apt_policy_update(
        &mut self,
        batch: &Batch,
        beta: f64,
        rng: &mut impl Rng,
        aux: &mut impl Rng,
    ) -> Result<PolicyStep> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let noise = standard_normal(rng, batch.len(), self.base.action_dim());
        let source_actions = if self.config.beta_mode == BetaMode::Zero {
            None
        } else {
            Some(sample_interior(&self.source, &batch.states, aux)?)
        };
        let (j1, j2, grads) = combined_loss_and_grad(
            &self.base.policy,
            &self.base.critics,
            self.base.hyper.alpha,
            &batch.states,
            &noise,
            source_actions.as_ref(),
            beta,
        )?;
        self.base.apply_policy_grad(&grads)?;
        self.beta_history.push(beta);
        Ok(PolicyStep { j1, j2, beta })
    }

    pub fn checkpoint(&self) -> AptCheckpoint {
        AptCheckpoint {
            sac: self.base.checkpoint(),
            source_policy: NetworkCheckpoint::from(&self.source),
        }
    }
}

impl Agent for AptLearner {
    fn policy(&self) -> &GaussianPolicy {
        &self.base.policy
    }

    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng, aux: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let zero = self.config.beta_mode == BetaMode::Zero;
        if !zero {
            self.source_sync_update(batch, aux)?;
        }
        self.base.critic_update(batch, rng)?;
        let b = match self.config.beta_mode {
            BetaMode::Adaptive => beta(self.advantage_gap(&batch.states, aux)?.mean, self.config.beta_clamp),
            BetaMode::Fixed(b) => b,
            BetaMode::Zero => 0.0,
        };
        let step = self.apt_policy_update(batch, b, rng, aux)?;
        self.base.updates += 1;
        Ok(Some(step.beta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AptCheckpoint {
    pub sac: SacCheckpoint,
    pub source_policy: NetworkCheckpoint,
}

fn check_domain(source: &GaussianPolicy, other: &GaussianPolicy) -> Result<()> {
    if source.state_dim() != other.state_dim() || source.action_dim() != other.action_dim() {
        return Err(Error::DomainMismatch(format!(
            "source policy {}->{} vs {}->{}",
            source.state_dim(),
            source.action_dim(),
            other.state_dim(),
            other.action_dim()
        )));
    }
    if source.squash != other.squash {
        return Err(Error::DomainMismatch("action bounds differ".into()));
    }
    Ok(())
}

fn check_spec_domain(source: &GaussianPolicy, spec: &EnvSpec) -> Result<()> {
    let bound = spec.action_bound;
    let expected = Squash::Tanh {
        low: vec![-bound; spec.action_dim()],
        high: vec![bound; spec.action_dim()],
    };
    if source.state_dim() != spec.state_dim() || source.action_dim() != spec.action_dim() || source.squash != expected {
        return Err(Error::DomainMismatch(format!(
            "source policy {}->{} does not fit environment {}->{} with bound {bound}",
            source.state_dim(),
            source.action_dim(),
            spec.state_dim(),
            spec.action_dim()
        )));
    }
    Ok(())
}

/// Full transfer run from a trained source policy.
pub fn train_apt(
    source: &GaussianPolicy,
    target: &EnvSpec,
    config: &AptConfig,
    seed: u64,
) -> Result<(AptLearner, TrainOutcome)> {
    config.validate()?;
    check_spec_domain(source, target)?;
    let (mut rng, mut aux, mut init) = run_streams(seed);
    let policy = match config.policy_init {
        PolicyInit::CopySource => source.clone(),
        PolicyInit::Random => crate::sac::new_policy(
            target.state_dim(),
            target.action_dim(),
            &config.sac.hidden,
            target.action_bound,
            &mut init,
        )?,
    };
    let base = SacLearner::with_policy(policy, &config.sac.hidden, config.sac.hyper(), &mut init)?;
    let mut learner = AptLearner::new(base, source.clone(), config.clone())?;
    let outcome = train_loop(&mut learner, target, &config.sac, &mut rng, &mut aux)?;
    Ok((learner, outcome))
}

/// SAC started from the source policy (fine-tuning baseline).
pub fn train_finetune(
    source: &GaussianPolicy,
    target: &EnvSpec,
    config: &SacConfig,
    seed: u64,
) -> Result<(SacLearner, TrainOutcome)> {
    config.validate()?;
    check_spec_domain(source, target)?;
    let (mut rng, mut aux, mut init) = run_streams(seed);
    let mut learner = SacLearner::with_policy(source.clone(), &config.hidden, config.hyper(), &mut init)?;
    let outcome = train_loop(&mut learner, target, config, &mut rng, &mut aux)?;
    Ok((learner, outcome))
}
