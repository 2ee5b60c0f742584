//! Finite-difference checks of every training loss on random small
//! configurations with tanh networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::gradcheck::{compare, finite_difference};
use crate::nn::policy::standard_normal;
use crate::nn::{Activation, GaussianPolicy, Mat, MlpParams, Squash, Tape};
use crate::sac::loss::{critic_mse, cross_entropy, policy_objective, TwinQ};
use crate::tasksim::{encoder_decoder, model_mse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PolicyJ1,
    CrossEntropyJ2,
    CriticMse,
    DynamicsModel,
    RewardModel,
}

pub const ALL_LOSSES: [LossKind; 5] = [
    LossKind::PolicyJ1,
    LossKind::CrossEntropyJ2,
    LossKind::CriticMse,
    LossKind::DynamicsModel,
    LossKind::RewardModel,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradResult {
    pub loss: LossKind,
    pub config: usize,
    pub n_params: usize,
    pub rel_err: f64,
}

const EPS: f64 = 1e-6;

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

fn hidden(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(3..=8)).collect()
}

fn policy(rng: &mut ChaCha8Rng, sd: usize, ad: usize) -> Result<GaussianPolicy> {
    let net = MlpParams::mlp(sd, &hidden(rng), 2 * ad, Activation::Tanh, rng)?;
    let bound = rng.gen_range(0.5..2.0);
    GaussianPolicy::new(
        net,
        Squash::Tanh {
            low: vec![-bound; ad],
            high: vec![bound; ad],
        },
    )
}

/// Interior actions for the cross-entropy term.
fn actions_inside(rng: &mut ChaCha8Rng, p: &GaussianPolicy, n: usize) -> Mat {
    let ad = p.action_dim();
    let Squash::Tanh { high, .. } = &p.squash else {
        return rand_mat(rng, n, ad, 1.0);
    };
    Mat::from_shape_fn((n, ad), |(_, j)| rng.gen_range(-0.9..0.9) * high[j])
}

fn check_one(kind: LossKind, config: usize, rng: &mut ChaCha8Rng) -> Result<GradResult> {
    let sd = rng.gen_range(1..=4);
    let ad = rng.gen_range(1..=3);
    let n = rng.gen_range(2..=6);
    let states = rand_mat(rng, n, sd, 1.0);
    let (analytic, numeric) = match kind {
        LossKind::PolicyJ1 => {
            let pol = policy(rng, sd, ad)?;
            let h = hidden(rng);
            let critics = [
                MlpParams::mlp(sd + ad, &h, 1, Activation::Tanh, rng)?,
                MlpParams::mlp(sd + ad, &h, 1, Activation::Tanh, rng)?,
            ];
            let noise = standard_normal(rng, n, ad);
            let alpha = rng.gen_range(0.0..0.5);
            let run = |params: &MlpParams, grad: bool| {
                let mut p = pol.clone();
                p.net = params.clone();
                let mut tape = Tape::new();
                let net = p.net.bind(&mut tape, grad);
                let s = tape.constant(states.clone());
                let twin = TwinQ::bind(&mut tape, &critics, false);
                let j = policy_objective(&mut tape, &p, &net, s, &noise, alpha, &twin);
                let g = grad.then(|| net.gradients(&tape, &tape.backward(j)));
                (tape.scalar_value(j), g)
            };
            let analytic = run(&pol.net, true).1.expect("gradient requested");
            (analytic, finite_difference(&pol.net, EPS, |p| run(p, false).0))
        }
        LossKind::CrossEntropyJ2 => {
            let pol = policy(rng, sd, ad)?;
            let actions = actions_inside(rng, &pol, n);
            let run = |params: &MlpParams, grad: bool| -> Result<(f64, Option<MlpParams>)> {
                let mut p = pol.clone();
                p.net = params.clone();
                let mut tape = Tape::new();
                let net = p.net.bind(&mut tape, grad);
                let s = tape.constant(states.clone());
                let j = cross_entropy(&mut tape, &p, &net, s, &actions)?;
                let g = grad.then(|| net.gradients(&tape, &tape.backward(j)));
                Ok((tape.scalar_value(j), g))
            };
            let analytic = run(&pol.net, true)?.1.expect("gradient requested");
            let numeric = finite_difference(&pol.net, EPS, |p| run(p, false).map(|r| r.0).unwrap_or(f64::NAN));
            (analytic, numeric)
        }
        LossKind::CriticMse => {
            let critic = MlpParams::mlp(sd + ad, &hidden(rng), 1, Activation::Tanh, rng)?;
            let actions = rand_mat(rng, n, ad, 1.0);
            let targets = rand_mat(rng, n, 1, 2.0);
            let run = |params: &MlpParams, grad: bool| {
                let mut tape = Tape::new();
                let net = params.bind(&mut tape, grad);
                let s = tape.constant(states.clone());
                let a = tape.constant(actions.clone());
                let l = critic_mse(&mut tape, &net, s, a, &targets);
                let g = grad.then(|| net.gradients(&tape, &tape.backward(l)));
                (tape.scalar_value(l), g)
            };
            let analytic = run(&critic, true).1.expect("gradient requested");
            (analytic, finite_difference(&critic, EPS, |p| run(p, false).0))
        }
        LossKind::DynamicsModel | LossKind::RewardModel => {
            let out = if kind == LossKind::DynamicsModel { sd } else { 1 };
            let h = rng.gen_range(3..=8);
            let model = encoder_decoder(sd + ad, out, h, sd.max(4), rng)?;
            let inputs = rand_mat(rng, n, sd + ad, 1.5);
            let targets = rand_mat(rng, n, out, 1.5);
            let run = |params: &MlpParams, grad: bool| {
                let mut tape = Tape::new();
                let net = params.bind(&mut tape, grad);
                let x = tape.constant(inputs.clone());
                let l = model_mse(&mut tape, &net, x, &targets);
                let g = grad.then(|| net.gradients(&tape, &tape.backward(l)));
                (tape.scalar_value(l), g)
            };
            let analytic = run(&model, true).1.expect("gradient requested");
            (analytic, finite_difference(&model, EPS, |p| run(p, false).0))
        }
    };
    let check = compare(&analytic, &numeric);
    Ok(GradResult {
        loss: kind,
        config,
        n_params: check.n,
        rel_err: check.rel_err,
    })
}

/// `configs` random configurations per loss, all drawn from `seed`.
pub fn run_gradient_suite(configs: usize, seed: u64) -> Result<Vec<GradResult>> {
    let mut out = Vec::with_capacity(configs * ALL_LOSSES.len());
    for (k, kind) in ALL_LOSSES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for c in 0..configs {
            out.push(check_one(*kind, c, &mut rng)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_matches_finite_differences() {
        let results = run_gradient_suite(10, 7).unwrap();
        assert_eq!(results.len(), 50);
        for r in &results {
            assert!(r.rel_err <= 1e-4, "{r:?}");
            assert!(r.n_params > 0);
        }
    }
}
