//! Model-based task similarity. Dynamics and reward models are fit on
//! random-policy data from the source task, then scored on data from the
//! target task; the mean prediction errors measure how far the target
//! dynamics and rewards are from the source.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{env_reset, env_step, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::nn::{Activation, AdamState, BoundMlp, Mat, MlpParams, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub env_fingerprint: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(transitions: Vec<Transition>, env_fingerprint: String, seed: u64) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset must be nonempty".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        for t in &transitions {
            if t.s.len() != sd || t.s_next.len() != sd || t.a.len() != ad {
                return Err(Error::shape("transition", format!("{sd}/{ad}"), format!("{}/{}", t.s.len(), t.a.len())));
            }
        }
        Ok(Self {
            transitions,
            env_fingerprint,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions[0].s.len()
    }

    pub fn action_dim(&self) -> usize {
        self.transitions[0].a.len()
    }

    /// `[s | a]` rows.
    pub fn inputs(&self) -> Mat {
        let (sd, ad) = (self.state_dim(), self.action_dim());
        Mat::from_shape_fn((self.len(), sd + ad), |(i, j)| {
            let t = &self.transitions[i];
            if j < sd {
                t.s[j]
            } else {
                t.a[j - sd]
            }
        })
    }

    pub fn next_states(&self) -> Mat {
        Mat::from_shape_fn((self.len(), self.state_dim()), |(i, j)| self.transitions[i].s_next[j])
    }

    pub fn rewards(&self) -> Mat {
        Mat::from_shape_fn((self.len(), 1), |(i, _)| self.transitions[i].r)
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            transitions: idx.iter().map(|&i| self.transitions[i].clone()).collect(),
            env_fingerprint: self.env_fingerprint.clone(),
            seed: self.seed,
        }
    }
}

/// `m` transitions under uniform-random actions; episodes restart on goal
/// or horizon.
pub fn collect_random(spec: &EnvSpec, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = spec.action_bound;
    let mut s = env_reset(spec, &mut rng);
    let mut t_ep = 0;
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let a: Vec<f64> = (0..spec.action_dim()).map(|_| rng.gen_range(-bound..bound)).collect();
        let mut tr = env_step(spec, &s, &a, &mut rng)?;
        t_ep += 1;
        tr.truncated = !tr.done && t_ep >= spec.horizon;
        if tr.done || tr.truncated {
            s = env_reset(spec, &mut rng);
            t_ep = 0;
        } else {
            s = tr.s_next.clone();
        }
        out.push(tr);
    }
    Dataset::new(out, spec.fingerprint(), seed)
}

/// Tabular variant with one-hot states and actions.
pub fn collect_random_tabular(
    mdp: &TabularMdp,
    start: usize,
    horizon: usize,
    m: usize,
    seed: u64,
) -> Result<Dataset> {
    if m == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("m and horizon must be >= 1".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if start >= ns {
        return Err(Error::InvalidArgument(format!("start {start} out of range")));
    }
    let one_hot = |k: usize, n: usize| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start;
    let mut t_ep = 0;
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let a = rng.gen_range(0..na);
        let s_next = mdp.sample_next(s, a, rng.gen::<f64>());
        let r = mdp.reward(s, a);
        t_ep += 1;
        let done = mdp.is_terminal(s_next);
        let truncated = !done && t_ep >= horizon;
        out.push(Transition {
            s: one_hot(s, ns),
            a: one_hot(a, na),
            r,
            s_next: one_hot(s_next, ns),
            done,
            truncated,
        });
        if done || truncated {
            s = start;
            t_ep = 0;
        } else {
            s = s_next;
        }
    }
    Dataset::new(out, format!("tabular-{ns}x{na}"), seed)
}

/// Per-column affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Columns with (near) zero spread keep unit scale.
    pub fn fit(x: &Mat) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        Mat::from_shape_fn(x.raw_dim(), |(i, j)| (x[[i, j]] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, z: &Mat) -> Mat {
        Mat::from_shape_fn(z.raw_dim(), |(i, j)| z[[i, j]] * self.std[j] + self.mean[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub hidden: usize,
    /// Bottleneck width; `None` means `max(4, state_dim)`.
    #[serde(default)]
    pub latent: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of the data held out for the noise floor.
    pub holdout: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent: None,
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            holdout: 0.2,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.latent == Some(0) {
            return Err(Error::InvalidArgument("hidden, latent, epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::InvalidArgument(format!("holdout must be in [0, 1), got {}", self.holdout)));
        }
        Ok(())
    }
}

/// Encoder-decoder `[in, h, h, latent, h, h, out]`; the latent layer is linear.
pub fn encoder_decoder(input: usize, output: usize, hidden: usize, latent: usize, rng: &mut impl Rng) -> Result<MlpParams> {
    let sizes = [input, hidden, hidden, latent, hidden, hidden, output];
    let acts = [
        Activation::Tanh,
        Activation::Tanh,
        Activation::Identity,
        Activation::Tanh,
        Activation::Tanh,
        Activation::Identity,
    ];
    MlpParams::random(&sizes, &acts, rng)
}

/// `mean over rows and columns of (f(x) - y)^2`; shared by the dynamics and
/// reward losses.
pub fn model_mse(tape: &mut Tape, net: &BoundMlp, inputs: Var, targets: &Mat) -> Var {
    let pred = net.forward(tape, inputs);
    let y = tape.constant(targets.clone());
    let d = tape.sub(pred, y);
    let sq = tape.square(d);
    tape.mean(sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Predicts `s'` through the state change `s' - s`.
    Dynamics,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// MSE on the training split in standardized units.
    pub train_mse: f64,
    /// MSE on the held-out split in standardized units; `None` without a split.
    pub holdout_mse: Option<f64>,
    /// Mean L2 prediction error on the held-out split in original units.
    pub holdout_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub net: MlpParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub report: FitReport,
}

impl Model {
    /// Predictions in original units: next states or `n x 1` rewards.
    pub fn predict(&self, inputs: &Mat) -> Result<Mat> {
        let z = self.net.forward(&self.input_norm.apply(inputs))?;
        let out = self.output_norm.invert(&z);
        Ok(match self.kind {
            ModelKind::Reward => out,
            ModelKind::Dynamics => {
                let sd = out.ncols();
                Mat::from_shape_fn(out.raw_dim(), |(i, j)| inputs[[i, j]] + out[[i, j]]).slice_move(ndarray::s![.., ..sd])
            }
        })
    }

    /// Per-row L2 error against `data`, in original units.
    pub fn errors(&self, data: &Dataset) -> Result<Vec<f64>> {
        let expected_in = self.input_norm.mean.len();
        if data.state_dim() + data.action_dim() != expected_in {
            return Err(Error::DomainMismatch(format!(
                "model takes {expected_in} inputs, data has {}",
                data.state_dim() + data.action_dim()
            )));
        }
        let pred = self.predict(&data.inputs())?;
        let truth = match self.kind {
            ModelKind::Dynamics => data.next_states(),
            ModelKind::Reward => data.rewards(),
        };
        Ok(pred
            .rows()
            .into_iter()
            .zip(truth.rows())
            .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect())
    }
}

fn raw_targets(data: &Dataset, kind: ModelKind) -> Mat {
    match kind {
        ModelKind::Dynamics => {
            let mut d = data.next_states();
            for (i, t) in data.transitions.iter().enumerate() {
                for (j, s) in t.s.iter().enumerate() {
                    d[[i, j]] -= s;
                }
            }
            d
        }
        ModelKind::Reward => data.rewards(),
    }
}

fn mse_of(net: &MlpParams, x: &Mat, y: &Mat) -> Result<f64> {
    let pred = net.forward(x)?;
    Ok((&pred - y).mapv(|v| v * v).mean().unwrap_or(0.0))
}

/// Fits a model by Adam on minibatches. Data are shuffled once by `seed` and
/// split into training and held-out parts; the held-out part only feeds the
/// report.
pub fn fit_model(data: &Dataset, kind: ModelKind, config: &FitConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((data.len() as f64) * config.holdout).floor() as usize;
    let n_train = data.len() - n_hold;
    if n_train == 0 {
        return Err(Error::InvalidArgument("no training data left after the held-out split".into()));
    }
    let train = data.subset(&order[..n_train]);
    let hold = data.subset(&order[n_train..]);

    let x_raw = train.inputs();
    let y_raw = raw_targets(&train, kind);
    let input_norm = Normalizer::fit(&x_raw);
    let output_norm = Normalizer::fit(&y_raw);
    let x = input_norm.apply(&x_raw);
    let y = output_norm.apply(&y_raw);

    let latent = config.latent.unwrap_or(data.state_dim().max(4));
    let mut net = encoder_decoder(x.ncols(), y.ncols(), config.hidden, latent, &mut rng)?;
    let mut opt = AdamState::new(&net);
    let mut idx: Vec<usize> = (0..n_train).collect();
    for _ in 0..config.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(config.batch_size) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let yb = y.select(ndarray::Axis(0), chunk);
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let input = tape.constant(xb);
            let loss = model_mse(&mut tape, &bound, input, &yb);
            if !tape.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite(format!("{kind:?} model loss")));
            }
            let grads = bound.gradients(&tape, &tape.backward(loss));
            opt.step(&mut net, &grads, config.lr)?;
        }
    }

    let train_mse = mse_of(&net, &x, &y)?;
    let mut model = Model {
        kind,
        net,
        input_norm,
        output_norm,
        report: FitReport {
            train_mse,
            holdout_mse: None,
            holdout_l2: None,
        },
    };
    if !hold.is_empty() {
        let xh = model.input_norm.apply(&hold.inputs());
        let yh = model.output_norm.apply(&raw_targets(&hold, kind));
        model.report.holdout_mse = Some(mse_of(&model.net, &xh, &yh)?);
        let e = model.errors(&hold)?;
        model.report.holdout_l2 = Some(e.iter().sum::<f64>() / e.len() as f64);
    }
    Ok(model)
}

pub fn fit_dynamics(data: &Dataset, config: &FitConfig, seed: u64) -> Result<Model> {
    fit_model(data, ModelKind::Dynamics, config, seed)
}

pub fn fit_reward(data: &Dataset, config: &FitConfig, seed: u64) -> Result<Model> {
    fit_model(data, ModelKind::Reward, config, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub dynamics: Model,
    pub reward: Model,
}

impl ModelPair {
    pub fn fit(data: &Dataset, config: &FitConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            dynamics: fit_dynamics(data, config, seed)?,
            reward: fit_reward(data, config, seed.wrapping_add(1))?,
        })
    }

    /// Held-out mean L2 errors `(dynamics, reward)`: the error level expected
    /// when the scored data come from the training task itself.
    pub fn noise_floor(&self) -> (f64, f64) {
        (
            self.dynamics.report.holdout_l2.unwrap_or(0.0),
            self.reward.report.holdout_l2.unwrap_or(0.0),
        )
    }
}

/// Which models score the target data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringModels {
    /// Source models predict target data.
    Source,
    /// Target models predict their own data (self-error).
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResiduals {
    pub source_dynamics: FitReport,
    pub source_reward: FitReport,
    pub target_dynamics: FitReport,
    pub target_reward: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub xi_dyn: Vec<f64>,
    pub xi_rew: Vec<f64>,
    pub dyn_similarity: f64,
    pub rew_similarity: f64,
    /// Same errors divided by the per-dimension spread of the source targets.
    pub dyn_similarity_z: f64,
    pub rew_similarity_z: f64,
    pub m: usize,
    pub noise_floor_dyn: f64,
    pub noise_floor_rew: f64,
    pub scoring: ScoringModels,
    pub model_fit_residuals: Option<ModelResiduals>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn z_errors(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    let pred = model.predict(&data.inputs())?;
    let truth = match model.kind {
        ModelKind::Dynamics => data.next_states(),
        ModelKind::Reward => data.rewards(),
    };
    let std = &model.output_norm.std;
    Ok(pred
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .zip(std)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Scores `target` with fitted models; pure.
pub fn similarity(models: &ModelPair, target: &Dataset) -> Result<SimilarityReport> {
    let xi_dyn = models.dynamics.errors(target)?;
    let xi_rew = models.reward.errors(target)?;
    if xi_dyn.iter().chain(&xi_rew).any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("similarity errors".into()));
    }
    let (fd, fr) = models.noise_floor();
    Ok(SimilarityReport {
        dyn_similarity: mean(&xi_dyn),
        rew_similarity: mean(&xi_rew),
        dyn_similarity_z: mean(&z_errors(&models.dynamics, target)?),
        rew_similarity_z: mean(&z_errors(&models.reward, target)?),
        m: target.len(),
        xi_dyn,
        xi_rew,
        noise_floor_dyn: fd,
        noise_floor_rew: fr,
        scoring: ScoringModels::Source,
        model_fit_residuals: None,
    })
}

/// Full measurement: fits target models for their residuals, then scores the
/// target data with the chosen models.
pub fn measure_similarity(
    source: &ModelPair,
    target: &Dataset,
    config: &FitConfig,
    scoring: ScoringModels,
    seed: u64,
) -> Result<SimilarityReport> {
    let target_models = ModelPair::fit(target, config, seed)?;
    let mut report = match scoring {
        ScoringModels::Source => similarity(source, target)?,
        ScoringModels::Target => similarity(&target_models, target)?,
    };
    report.scoring = scoring;
    report.noise_floor_dyn = source.noise_floor().0;
    report.noise_floor_rew = source.noise_floor().1;
    report.model_fit_residuals = Some(ModelResiduals {
        source_dynamics: source.dynamics.report.clone(),
        source_reward: source.reward.report.clone(),
        target_dynamics: target_models.dynamics.report,
        target_reward: target_models.reward.report,
    });
    Ok(report)
}
