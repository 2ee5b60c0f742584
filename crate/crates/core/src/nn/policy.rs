//! Diagonal Gaussian policies with optional tanh squashing into a box.
//!
//! The network emits `[mean | log_std]` for each action dimension. With
//! squashing, an action is `center + half_width * tanh(u)` for
//! `u ~ N(mean, exp(log_std)^2)`, and log-densities include the change of
//! variables `sum ln(half_width * (1 - tanh(u)^2))`.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{BoundMlp, MlpParams};
use super::tape::{Mat, Tape, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub enum Squash {
    /// Actions are the raw Gaussian samples.
    None,
    /// Actions are squashed into `[low, high]` per dimension (open interval).
    Tanh { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: MlpParams,
    pub squash: Squash,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Policy output for a batch of states on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub action: Var,
    /// Per-row log-density, `n x 1`.
    pub log_prob: Var,
}

impl GaussianPolicy {
    pub fn new(net: MlpParams, squash: Squash) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::InvalidArgument(
                "policy network must emit mean and log_std per action dimension".into(),
            ));
        }
        let d = net.output_dim() / 2;
        if let Squash::Tanh { low, high } = &squash {
            if low.len() != d || high.len() != d {
                return Err(Error::shape("action bounds", d, low.len().max(high.len())));
            }
            if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                return Err(Error::InvalidArgument("action bounds need low < high".into()));
            }
        }
        Ok(Self {
            net,
            squash,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn center_half(&self) -> Option<(Mat, Mat)> {
        match &self.squash {
            Squash::None => None,
            Squash::Tanh { low, high } => {
                let d = low.len();
                let c = Array2::from_shape_fn((1, d), |(_, j)| 0.5 * (high[j] + low[j]));
                let h = Array2::from_shape_fn((1, d), |(_, j)| 0.5 * (high[j] - low[j]));
                Some((c, h))
            }
        }
    }

    /// Mean and clamped log-std of the pre-squash Gaussian.
    pub fn head(&self, tape: &mut Tape, net: &BoundMlp, states: Var) -> (Var, Var) {
        let d = self.action_dim();
        let out = net.forward(tape, states);
        let mean = tape.cols(out, 0, d);
        let raw = tape.cols(out, d, d);
        let log_std = tape.clamp(raw, self.log_std_min, self.log_std_max);
        (mean, log_std)
    }

    /// Reparameterized samples `u = mean + std * noise`; gradients flow into
    /// the policy parameters through `mean` and `log_std`.
    pub fn rsample(&self, tape: &mut Tape, net: &BoundMlp, states: Var, noise: &Mat) -> PolicySample {
        let d = self.action_dim();
        assert_eq!(noise.ncols(), d, "noise width must equal action dim");
        let (mean, log_std) = self.head(tape, net, states);
        let std = tape.exp(log_std);
        let xi = tape.constant(noise.clone());
        let spread = tape.mul(std, xi);
        let u = tape.add(mean, spread);

        // log N(u; mean, std) = -xi^2/2 - log_std - ln(2 pi)/2, with xi fixed
        let base = noise.mapv(|z| -0.5 * z * z - HALF_LN_2PI);
        let base = tape.constant(base);
        let per_dim = tape.sub(base, log_std);
        let mut log_prob = tape.sum_cols(per_dim);

        let action = match self.center_half() {
            None => u,
            Some((c, h)) => {
                let t = tape.tanh(u);
                let hv = tape.constant(h.broadcast(noise.raw_dim()).unwrap().to_owned());
                let scaled = tape.mul(t, hv);
                let cv = tape.constant(c);
                let action = tape.add_row(scaled, cv);
                // ln(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
                let m2u = tape.scale(u, -2.0);
                let sp = tape.softplus(m2u);
                let inner = tape.add(u, sp);
                let ln2 = std::f64::consts::LN_2;
                let lhs = tape.constant(Mat::from_elem(noise.raw_dim(), 2.0 * ln2));
                let two_inner = tape.scale(inner, 2.0);
                let log_dtanh = tape.sub(lhs, two_inner);
                let log_h = h.mapv(f64::ln).sum();
                let jac = tape.sum_cols(log_dtanh);
                let jac = tape.add_scalar(jac, log_h);
                log_prob = tape.sub(log_prob, jac);
                action
            }
        };
        PolicySample { action, log_prob }
    }

    /// Pre-squash values and log-Jacobian rows for given actions.
    fn unsquash(&self, actions: &Mat) -> Result<(Mat, Mat)> {
        match self.center_half() {
            None => Ok((actions.clone(), Mat::zeros((actions.nrows(), 1)))),
            Some((c, h)) => {
                let mut u = actions.clone();
                let mut jac = Mat::zeros((actions.nrows(), 1));
                for (mut row, j) in u.axis_iter_mut(Axis(0)).zip(jac.iter_mut()) {
                    for (k, x) in row.iter_mut().enumerate() {
                        let y = (*x - c[[0, k]]) / h[[0, k]];
                        if !(y.abs() < 1.0) {
                            return Err(Error::InvalidArgument(format!(
                                "action {x} is not strictly inside the action bounds"
                            )));
                        }
                        let uk = y.atanh();
                        if !uk.is_finite() {
                            return Err(Error::InvalidArgument(format!(
                                "action {x} is numerically on the action bound"
                            )));
                        }
                        *x = uk;
                        *j += h[[0, k]].ln() + log_one_minus_tanh_sq(uk);
                    }
                }
                Ok((u, jac))
            }
        }
    }

    /// Log-density of fixed `actions` as a differentiable function of the
    /// policy parameters.
    pub fn log_prob_tape(
        &self,
        tape: &mut Tape,
        net: &BoundMlp,
        states: Var,
        actions: &Mat,
    ) -> Result<Var> {
        if actions.ncols() != self.action_dim() {
            return Err(Error::shape("action width", self.action_dim(), actions.ncols()));
        }
        let (u, jac) = self.unsquash(actions)?;
        let (mean, log_std) = self.head(tape, net, states);
        let uv = tape.constant(u);
        let diff = tape.sub(uv, mean);
        let neg_log_std = tape.neg(log_std);
        let inv_std = tape.exp(neg_log_std);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.square(z);
        let half_z2 = tape.scale(z2, -0.5);
        let per_dim = tape.sub(half_z2, log_std);
        let per_dim = tape.add_scalar(per_dim, -HALF_LN_2PI);
        let lp = tape.sum_cols(per_dim);
        let jv = tape.constant(jac);
        Ok(tape.sub(lp, jv))
    }

    fn check_states(&self, states: &Mat) -> Result<()> {
        if states.ncols() != self.state_dim() {
            return Err(Error::shape("policy state width", self.state_dim(), states.ncols()));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy input state".into()));
        }
        Ok(())
    }

    /// Draws one action per state row. Noise is drawn row-major from `rng`.
    pub fn sample_batch<R: Rng + ?Sized>(&self, states: &Mat, rng: &mut R) -> Result<(Mat, Vec<f64>)> {
        self.check_states(states)?;
        let noise = standard_normal(rng, states.nrows(), self.action_dim());
        Ok(self.sample_with_noise(states, &noise))
    }

    pub fn sample_with_noise(&self, states: &Mat, noise: &Mat) -> (Mat, Vec<f64>) {
        let mut tape = Tape::new();
        let net = self.net.bind(&mut tape, false);
        let s = tape.constant(states.clone());
        let out = self.rsample(&mut tape, &net, s, noise);
        let a = tape.value(out.action).clone();
        let lp = tape.value(out.log_prob).iter().copied().collect();
        (a, lp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let s = row(state);
        let (a, lp) = self.sample_batch(&s, rng)?;
        Ok((a.into_raw_vec_and_offset().0, lp[0]))
    }

    pub fn log_prob_batch(&self, states: &Mat, actions: &Mat) -> Result<Vec<f64>> {
        self.check_states(states)?;
        let mut tape = Tape::new();
        let net = self.net.bind(&mut tape, false);
        let s = tape.constant(states.clone());
        let lp = self.log_prob_tape(&mut tape, &net, s, actions)?;
        Ok(tape.value(lp).iter().copied().collect())
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.log_prob_batch(&row(state), &row(action))?[0])
    }

    /// Deterministic action `squash(mean)`.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = row(state);
        self.check_states(&s)?;
        let out = self.net.forward(&s)?;
        let d = self.action_dim();
        let mut a: Vec<f64> = out.iter().take(d).copied().collect();
        if let Some((c, h)) = self.center_half() {
            for (k, x) in a.iter_mut().enumerate() {
                *x = c[[0, k]] + h[[0, k]] * x.tanh();
            }
        }
        Ok(a)
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

pub fn row(v: &[f64]) -> Mat {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}
