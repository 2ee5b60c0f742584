use ndarray::array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{policy_objective, QFunction};
use super::*;
use crate::envs::{EnvSpec, Transition};
use crate::nn::policy::row;
use crate::nn::{BoundMlp, Var};

fn hyper(alpha: f64, gamma: f64) -> SacHyper {
    SacHyper {
        alpha,
        gamma,
        polyak: 0.005,
        lr: 1e-3,
    }
}

fn learner(alpha: f64, gamma: f64, seed: u64) -> SacLearner {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = new_policy(2, 1, &[16], 1.0, &mut rng).unwrap();
    SacLearner::with_policy(policy, &[16], hyper(alpha, gamma), &mut rng).unwrap()
}

fn random_batch(n: usize, seed: u64, done: bool) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<Transition> = (0..n)
        .map(|_| Transition {
            s: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            a: vec![rng.gen_range(-0.9..0.9)],
            r: rng.gen_range(-1.0..1.0),
            s_next: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            done,
            truncated: false,
        })
        .collect();
    let refs: Vec<&Transition> = items.iter().collect();
    Batch::from_transitions(&refs).unwrap()
}


#[test]
fn zero_discount_targets_are_rewards() {
    let l = learner(0.2, 0.0, 1);
    let b = random_batch(32, 2, false);
    let noise = standard_normal(&mut ChaCha8Rng::seed_from_u64(3), 32, 1);
    assert_eq!(l.targets(&b, &noise), b.rewards);
}

#[test]
fn terminal_transitions_target_reward() {
    let l = learner(0.2, 0.99, 1);
    let b = random_batch(32, 2, true);
    let noise = standard_normal(&mut ChaCha8Rng::seed_from_u64(3), 32, 1);
    assert_eq!(l.targets(&b, &noise), b.rewards);
}

#[test]
fn zero_discount_critic_fits_rewards() {
    let mut l = learner(0.2, 0.0, 4);
    l.hyper.lr = 3e-3;
    let b = random_batch(16, 5, false);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut last = f64::INFINITY;
    for _ in 0..3000 {
        last = l.critic_update(&b, &mut rng).unwrap();
    }
    assert!(last < 1e-3, "critic loss {last}");
    let q = l.q_values(&b.states, &b.actions);
    for (qi, ri) in q.iter().zip(b.rewards.iter()) {
        assert!((qi - ri).abs() < 0.1);
    }
}

#[test]
fn swapping_twins_leaves_targets_unchanged() {
    let l = learner(0.2, 0.9, 7);
    let mut swapped = l.clone();
    swapped.target_critics.swap(0, 1);
    let b = random_batch(20, 8, false);
    let noise = standard_normal(&mut ChaCha8Rng::seed_from_u64(9), 20, 1);
    assert_eq!(l.targets(&b, &noise), swapped.targets(&b, &noise));
}

struct ConstQ(f64);

impl QFunction for ConstQ {
    fn q(&self, tape: &mut crate::nn::Tape, states: Var, _actions: Var) -> Var {
        let n = tape.shape(states).0;
        tape.constant(Mat::from_elem((n, 1), self.0))
    }
}

/// `Q(s, a) = -|a - target|^2`.
struct Bowl(f64);

impl QFunction for Bowl {
    fn q(&self, tape: &mut crate::nn::Tape, _states: Var, actions: Var) -> Var {
        let d = tape.add_scalar(actions, -self.0);
        let sq = tape.square(d);
        let s = tape.sum_cols(sq);
        tape.neg(s)
    }
}

fn j1_grad(policy: &GaussianPolicy, states: &Mat, noise: &Mat, alpha: f64, q: &dyn QFunction) -> MlpParams {
    let mut tape = Tape::new();
    let net: BoundMlp = policy.net.bind(&mut tape, true);
    let s = tape.constant(states.clone());
    let j = policy_objective(&mut tape, policy, &net, s, noise, alpha, q);
    net.gradients(&tape, &tape.backward(j))
}

#[test]
fn flat_critic_without_entropy_gives_zero_gradient() {
    let l = learner(0.0, 0.9, 10);
    let b = random_batch(16, 11, false);
    let noise = standard_normal(&mut ChaCha8Rng::seed_from_u64(12), 16, 1);
    let g = j1_grad(&l.policy, &b.states, &noise, 0.0, &ConstQ(3.0));
    assert!(g.values().all(|v| v.abs() < 1e-15));
}

#[test]
fn policy_mean_moves_toward_bowl_minimum() {
    let l = learner(0.0, 0.9, 13);
    let mut policy = l.policy.clone();
    let mut opt = AdamState::new(&policy.net);
    let states = random_batch(32, 14, false).states;
    let target = 0.6;
    let dist = |p: &GaussianPolicy| {
        let mut total = 0.0;
        for i in 0..states.nrows() {
            let a = p.mean_action(&[states[[i, 0]], states[[i, 1]]]).unwrap();
            total += (a[0] - target).abs();
        }
        total / states.nrows() as f64
    };
    let before = dist(&policy);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..500 {
        let noise = standard_normal(&mut rng, 32, 1);
        let g = j1_grad(&policy, &states, &noise, 0.0, &Bowl(target));
        opt.step(&mut policy.net, &g, 1e-3).unwrap();
    }
    let after = dist(&policy);
    assert!(after < 0.5 * before, "distance {before} -> {after}");
}

#[test]
fn soft_value_matches_quadrature() {
    // 1-D action policy with constant head, critic is a fixed random net
    let l = learner(0.3, 0.9, 16);
    let mut policy = l.policy.clone();
    let last = policy.net.layers().len() - 1;
    {
        let layers = policy.net.layers_mut();
        layers[last].weight.fill(0.0);
        layers[last].bias = array![[0.3, -0.7]];
    }
    let mut ll = l.clone();
    ll.policy = policy.clone();
    // keep the value away from zero so a relative tolerance is meaningful
    for c in ll.critics.iter_mut() {
        let k = c.layers().len() - 1;
        c.layers_mut()[k].bias[[0, 0]] += 1.0;
    }
    let s = [0.2, -0.4];
    // oracle: integrate pi(a) (Q(a) - alpha log pi(a)) over (-1, 1)
    let n = 20_000;
    let mut integral = 0.0;
    let h = 2.0 / n as f64;
    for k in 0..n {
        let a = -1.0 + (k as f64 + 0.5) * h;
        let lp = policy.log_prob(&s, &[a]).unwrap();
        let q = ll.q_values(&row(&s), &row(&[a]))[0];
        integral += lp.exp() * (q - 0.3 * lp) * h;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples = 1000;
    let states = Mat::from_shape_fn((samples, 2), |(_, j)| s[j]);
    let noise = standard_normal(&mut rng, samples, 1);
    let mc = ll.soft_value(&states, &noise).iter().sum::<f64>() / samples as f64;
    assert!(((mc - integral) / integral).abs() <= 0.05, "mc {mc} vs quadrature {integral}");
}

#[test]
fn learner_rejects_bad_hyper_and_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = new_policy(2, 1, &[8], 1.0, &mut rng).unwrap();
    assert!(SacLearner::with_policy(policy.clone(), &[8], hyper(0.2, 1.0), &mut rng).is_err());
    let wrong = new_critic(3, 1, &[8], &mut rng).unwrap();
    assert!(SacLearner::new(policy, [wrong.clone(), wrong], hyper(0.2, 0.9)).is_err());
}

#[test]
fn nan_rewards_abort_critic_update() {
    let mut l = learner(0.2, 0.9, 18);
    let mut b = random_batch(4, 19, false);
    b.rewards[[0, 0]] = f64::NAN;
    let before = l.critics.clone();
    let err = l.critic_update(&b, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(err, Err(Error::NonFinite(_))));
    assert_eq!(l.critics, before);
}

fn tiny_config() -> SacConfig {
    SacConfig {
        hidden: vec![16, 16],
        total_steps: 400,
        warmup_steps: 100,
        steps_per_iter: 50,
        gradient_updates: 5,
        eval_interval: 100,
        eval_episodes: 2,
        ..SacConfig::default()
    }
}

#[test]
fn same_seed_same_trace_and_parameters() {
    let spec = EnvSpec::default();
    let (a, ta) = train_sac(&spec, &tiny_config(), 5).unwrap();
    let (b, tb) = train_sac(&spec, &tiny_config(), 5).unwrap();
    assert_eq!(ta.trace, tb.trace);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.critics, b.critics);
    let (_, tc) = train_sac(&spec, &tiny_config(), 6).unwrap();
    assert_ne!(ta.trace, tc.trace);
}

#[test]
fn no_training_evaluates_initial_policy() {
    let spec = EnvSpec::default();
    let mut cfg = tiny_config();
    cfg.total_steps = 0;
    let (l, out) = train_sac(&spec, &cfg, 3).unwrap();
    assert_eq!(out.trace.len(), 1);
    let direct = evaluate(&l.policy, &spec, cfg.eval_episodes, cfg.eval_seed).unwrap();
    assert_eq!(out.trace[0].rho, direct.mean);
}

#[test]
fn zero_reward_env_evaluates_to_zero() {
    let mut spec = EnvSpec::default();
    spec.reward_scale = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policy = new_policy(4, 2, &[8], 1.0, &mut rng).unwrap();
    let r = evaluate(&policy, &spec, 3, 1).unwrap();
    assert_eq!(r.mean, 0.0);
    assert_eq!(r.returns.len(), 3);
    let again = evaluate(&policy, &spec, 3, 1).unwrap();
    assert_eq!(r, again);
}

#[test]
fn checkpoint_restores_policy() {
    let l = learner(0.2, 0.9, 21);
    let ck = l.checkpoint();
    let json = serde_json::to_string(&ck).unwrap();
    let back: SacCheckpoint = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.policy.to_policy().unwrap(), l.policy);
}
