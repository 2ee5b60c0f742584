use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, ReplayBuffer, SacHyper, SacLearner};
use crate::envs::{env_reset, env_step, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::GaussianPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub polyak: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient updates run after every `steps_per_iter` environment steps.
    pub gradient_updates: usize,
    pub steps_per_iter: usize,
    pub total_steps: usize,
    /// No updates before this many environment steps.
    pub warmup_steps: usize,
    /// Act uniformly at random during warm-up instead of with the policy.
    pub random_warmup: bool,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Stop once an evaluation reaches this return.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            lr: 3e-4,
            gamma: 0.99,
            alpha: 0.05,
            polyak: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            gradient_updates: 50,
            steps_per_iter: 50,
            total_steps: 30_000,
            warmup_steps: 1_000,
            random_warmup: true,
            eval_interval: 1_000,
            eval_episodes: 10,
            eval_seed: 12_345,
            stop_at: None,
        }
    }
}

impl SacConfig {
    pub fn hyper(&self) -> SacHyper {
        SacHyper {
            alpha: self.alpha,
            gamma: self.gamma,
            polyak: self.polyak,
            lr: self.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("steps_per_iter", self.steps_per_iter),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden sizes must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Something that acts in the environment and learns from replayed batches.
pub trait Agent {
    fn policy(&self) -> &GaussianPolicy;

    /// Runs one gradient update; returns the temperature used, if any.
    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng, aux: &mut ChaCha8Rng) -> Result<Option<f64>>;
}

impl Agent for SacLearner {
    fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng, _aux: &mut ChaCha8Rng) -> Result<Option<f64>> {
        self.critic_update(batch, rng)?;
        self.policy_update(batch, rng)?;
        self.updates += 1;
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub mean: f64,
    pub returns: Vec<f64>,
}

/// Deterministic-action rollouts; start states come from `seed`, so calls
/// with the same seed see the same starts.
pub fn evaluate(policy: &GaussianPolicy, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    evaluate_with(spec, episodes, seed, |s| policy.mean_action(s))
}

/// Same protocol as [`evaluate`] for an arbitrary state-feedback rule.
pub fn evaluate_with(
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env_reset(spec, &mut rng);
        let mut total = 0.0;
        for _ in 0..spec.horizon {
            let a = act(&s)?;
            let tr = env_step(spec, &s, &a, &mut rng)?;
            total += tr.r;
            if tr.done {
                break;
            }
            s = tr.s_next;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    Ok(EvalResult { mean, returns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub env_step: usize,
    pub eval_episode: usize,
    pub rho: f64,
    /// Mean temperature over the updates since the previous evaluation.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<TracePoint>,
    pub steps_run: usize,
    pub updates: usize,
}

/// Independent random streams for one run: `.0` drives the environment,
/// behaviour, batches and the SAC losses; `.1` drives anything the transfer
/// regularizer samples; `.2` initializes networks.
pub fn run_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng, ChaCha8Rng) {
    let stream = |k| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k);
        r
    };
    (stream(0), stream(1), stream(2))
}

/// Generic off-policy loop: collect, update every `steps_per_iter` steps,
/// evaluate at step 0 and every `eval_interval` steps.
pub fn train_loop(
    agent: &mut impl Agent,
    spec: &EnvSpec,
    config: &SacConfig,
    rng: &mut ChaCha8Rng,
    aux: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut trace = Vec::new();
    let eval = |p: &GaussianPolicy| evaluate(p, spec, config.eval_episodes, config.eval_seed);
    let first = eval(agent.policy())?;
    trace.push(TracePoint {
        env_step: 0,
        eval_episode: 0,
        rho: first.mean,
        beta: None,
    });
    let reached = |rho: f64| config.stop_at.is_some_and(|t| rho >= t);
    if reached(first.mean) {
        return Ok(TrainOutcome {
            trace,
            steps_run: 0,
            updates: 0,
        });
    }

    let ad = agent.policy().action_dim();
    let bound = spec.action_bound;
    let mut s = env_reset(spec, rng);
    let mut t_ep = 0;
    let mut updates = 0;
    let mut betas: Vec<f64> = Vec::new();
    let mut steps_run = 0;
    for step in 1..=config.total_steps {
        let a = if step <= config.warmup_steps && config.random_warmup {
            (0..ad).map(|_| rng.gen_range(-bound..bound)).collect()
        } else {
            agent.policy().sample(&s, rng)?.0
        };
        let mut tr = env_step(spec, &s, &a, rng)?;
        t_ep += 1;
        tr.truncated = !tr.done && t_ep >= spec.horizon;
        let reset = tr.done || tr.truncated;
        s = if reset { env_reset(spec, rng) } else { tr.s_next.clone() };
        if reset {
            t_ep = 0;
        }
        buffer.push(tr);
        steps_run = step;

        if step >= config.warmup_steps && step % config.steps_per_iter == 0 {
            for _ in 0..config.gradient_updates {
                let batch = buffer.sample(config.batch_size, rng)?;
                if let Some(b) = agent.update(&batch, rng, aux)? {
                    betas.push(b);
                }
                updates += 1;
            }
        }
        if step % config.eval_interval == 0 {
            let r = eval(agent.policy())?;
            let beta = if betas.is_empty() {
                None
            } else {
                Some(betas.iter().sum::<f64>() / betas.len() as f64)
            };
            betas.clear();
            trace.push(TracePoint {
                env_step: step,
                eval_episode: trace.len(),
                rho: r.mean,
                beta,
            });
            if reached(r.mean) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        trace,
        steps_run,
        updates,
    })
}

/// SAC from randomly initialized networks.
pub fn train_sac(spec: &EnvSpec, config: &SacConfig, seed: u64) -> Result<(SacLearner, TrainOutcome)> {
    config.validate()?;
    let (mut rng, mut aux, mut init) = run_streams(seed);
    let policy = super::new_policy(spec.state_dim(), spec.action_dim(), &config.hidden, spec.action_bound, &mut init)?;
    let mut learner = SacLearner::with_policy(policy, &config.hidden, config.hyper(), &mut init)?;
    let outcome = train_loop(&mut learner, spec, config, &mut rng, &mut aux)?;
    Ok((learner, outcome))
}
