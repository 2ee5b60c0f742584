//! Loss builders shared by SAC and APT. Every builder takes its Gaussian
//! noise explicitly so the same loss can be re-evaluated under finite
//! differences.

use crate::nn::{BoundMlp, GaussianPolicy, Mat, MlpParams, Tape, Var};

/// Action-value function that can be placed on a tape.
pub trait QFunction {
    /// `n x 1` values for `n` state/action rows.
    fn q(&self, tape: &mut Tape, states: Var, actions: Var) -> Var;
}

/// Pointwise minimum of two critics, each fed `[state | action]`.
pub struct TwinQ {
    pub q1: BoundMlp,
    pub q2: BoundMlp,
}

impl TwinQ {
    pub fn bind(tape: &mut Tape, critics: &[MlpParams; 2], trainable: bool) -> Self {
        Self {
            q1: critics[0].bind(tape, trainable),
            q2: critics[1].bind(tape, trainable),
        }
    }
}

impl QFunction for TwinQ {
    fn q(&self, tape: &mut Tape, states: Var, actions: Var) -> Var {
        let x = tape.concat(states, actions);
        let a = self.q1.forward(tape, x);
        let b = self.q2.forward(tape, x);
        tape.min(a, b)
    }
}

pub fn critic_value(tape: &mut Tape, critic: &BoundMlp, states: Var, actions: Var) -> Var {
    let x = tape.concat(states, actions);
    critic.forward(tape, x)
}

/// `y = r + gamma (1 - done) [min Qbar(s', a') - alpha log pi(a'|s')]` with
/// `a' = pi(s', noise)`.
pub fn soft_targets(
    policy: &GaussianPolicy,
    target_critics: &[MlpParams; 2],
    alpha: f64,
    gamma: f64,
    rewards: &Mat,
    next_states: &Mat,
    dones: &Mat,
    noise: &Mat,
) -> Mat {
    let mut tape = Tape::new();
    let net = policy.net.bind(&mut tape, false);
    let s = tape.constant(next_states.clone());
    let sample = policy.rsample(&mut tape, &net, s, noise);
    let twin = TwinQ::bind(&mut tape, target_critics, false);
    let q = twin.q(&mut tape, s, sample.action);
    let q = tape.value(q);
    let lp = tape.value(sample.log_prob);
    let mut y = rewards.clone();
    for i in 0..y.nrows() {
        let soft_v = q[[i, 0]] - alpha * lp[[i, 0]];
        y[[i, 0]] += gamma * (1.0 - dones[[i, 0]]) * soft_v;
    }
    y
}

/// `mean (Q(s, a) - y)^2`.
pub fn critic_mse(tape: &mut Tape, critic: &BoundMlp, states: Var, actions: Var, targets: &Mat) -> Var {
    let q = critic_value(tape, critic, states, actions);
    let y = tape.constant(targets.clone());
    let diff = tape.sub(q, y);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// `J1 = mean [alpha log pi(a|s) - Q(s, a)]` with reparameterized `a`.
pub fn policy_objective(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    net: &BoundMlp,
    states: Var,
    noise: &Mat,
    alpha: f64,
    critic: &dyn QFunction,
) -> Var {
    let sample = policy.rsample(tape, net, states, noise);
    let q = critic.q(tape, states, sample.action);
    let ent = tape.scale(sample.log_prob, alpha);
    let per_row = tape.sub(ent, q);
    tape.mean(per_row)
}

/// `J2 = mean [-log pi(a_src | s)]` for actions proposed by the source
/// policy; no gradient reaches the source.
pub fn cross_entropy(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    net: &BoundMlp,
    states: Var,
    source_actions: &Mat,
) -> crate::Result<Var> {
    let lp = policy.log_prob_tape(tape, net, states, source_actions)?;
    let m = tape.mean(lp);
    Ok(tape.neg(m))
}
