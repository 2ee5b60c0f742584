//! Total-variation distance between transition kernels and the action-value
//! gap bound between two MDPs on a shared state/action domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::solve::{policy_q_values, value_iteration};
use super::TabularMdp;
use crate::error::{Error, Result};

/// Slack absorbed when comparing the measured gap against the bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `|Q_T^{pi*_T} - Q_T^{pi*_S}|_inf`.
    pub lhs: f64,
    pub rhs: f64,
    pub delta_r: f64,
    pub delta_tv: f64,
    pub r_max_source: f64,
    pub r_max_target: f64,
    pub holds: bool,
}

/// `max_{s,a} 1/2 sum_s' |P_a(s'|s,a) - P_b(s'|s,a)|`.
pub fn tv_distance(a: &TabularMdp, b: &TabularMdp) -> Result<f64> {
    if !a.same_domain(b) {
        return Err(Error::DomainMismatch(format!(
            "{}x{} vs {}x{} (states x actions)",
            a.n_states(),
            a.n_actions(),
            b.n_states(),
            b.n_actions()
        )));
    }
    let mut worst: f64 = 0.0;
    for s in 0..a.n_states() {
        for act in 0..a.n_actions() {
            let l1: f64 = a
                .next_dist(s, act)
                .iter()
                .zip(b.next_dist(s, act))
                .map(|(x, y)| (x - y).abs())
                .sum();
            worst = worst.max(0.5 * l1);
        }
    }
    Ok(worst.min(1.0))
}

/// `2 dr / (1 - g) + 2 g dtv (Rs + Rt) / (1 - g)^2`.
pub fn bound_rhs(gamma: f64, delta_r: f64, delta_tv: f64, r_max_source: f64, r_max_target: f64) -> f64 {
    let c = 1.0 - gamma;
    2.0 * delta_r / c + 2.0 * gamma * delta_tv * (r_max_source + r_max_target) / (c * c)
}

/// Measures how much worse the source-optimal policy is than the
/// target-optimal one when both are evaluated in the target, and compares
/// that gap with the bound built from reward and dynamics differences.
pub fn action_value_bound(source: &TabularMdp, target: &TabularMdp, tol: f64) -> Result<BoundReport> {
    if !source.same_domain(target) {
        return Err(Error::DomainMismatch(format!(
            "source {}x{} vs target {}x{}",
            source.n_states(),
            source.n_actions(),
            target.n_states(),
            target.n_actions()
        )));
    }
    if source.gamma() != target.gamma() {
        return Err(Error::DomainMismatch(format!(
            "discounts differ: {} vs {}",
            source.gamma(),
            target.gamma()
        )));
    }
    let q_source = value_iteration(source, tol)?;
    let q_target = value_iteration(target, tol)?;
    // both sides through the same evaluator, so equal policies give exactly 0
    let q_own = policy_q_values(target, &q_target.greedy_policy(), tol)?;
    let q_cross = policy_q_values(target, &q_source.greedy_policy(), tol)?;
    let lhs = q_own.sup_distance(&q_cross);

    let delta_r = source
        .rewards()
        .iter()
        .zip(target.rewards())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let delta_tv = tv_distance(source, target)?;
    let (r_max_source, r_max_target) = (source.r_max(), target.r_max());
    let rhs = bound_rhs(source.gamma(), delta_r, delta_tv, r_max_source, r_max_target);
    Ok(BoundReport {
        lhs,
        rhs,
        delta_r,
        delta_tv,
        r_max_source,
        r_max_target,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

/// Random dense kernel: each row is a normalized vector of exponential
/// draws, with roughly a third of entries zeroed. Rewards are uniform in
/// `[-1, 1]`; no terminal states.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let transitions = random_kernel(rng, n_states, n_actions);
    let rewards = (0..n_states * n_actions).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    TabularMdp::new(n_states, n_actions, transitions, rewards, gamma, vec![false; n_states])
        .expect("random MDP is valid by construction")
}

pub fn random_kernel<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let mut row: Vec<f64> = (0..n_states)
            .map(|_| {
                if n_states > 1 && rng.gen_bool(0.3) {
                    0.0
                } else {
                    -(1.0 - rng.gen::<f64>()).ln()
                }
            })
            .collect();
        let mut total: f64 = row.iter().sum();
        if total == 0.0 {
            let k = rng.gen_range(0..n_states);
            row[k] = 1.0;
            total = 1.0;
        }
        row.iter_mut().for_each(|p| *p /= total);
        // put the rounding residue on the largest entry
        let residue = 1.0 - row.iter().sum::<f64>();
        let argmax = (0..n_states)
            .max_by(|&i, &j| row[i].total_cmp(&row[j]))
            .unwrap_or(0);
        row[argmax] += residue;
        out.extend(row);
    }
    out
}

/// A fixed-domain pair for the bound sweep. Half of the pairs are
/// independent draws; the other half perturb the source slightly so the
/// tight regime near zero gap is covered too.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> (TabularMdp, TabularMdp) {
    let source = random_mdp(rng, n_states, n_actions, gamma);
    if rng.gen_bool(0.5) {
        let target = random_mdp(rng, n_states, n_actions, gamma);
        return (source, target);
    }
    let mix: f64 = rng.gen_range(0.0..0.2);
    let other = random_kernel(rng, n_states, n_actions);
    let mut transitions: Vec<f64> = source
        .transitions()
        .iter()
        .zip(&other)
        .map(|(p, q)| (1.0 - mix) * p + mix * q)
        .collect();
    for row in transitions.chunks_mut(n_states) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        let residue = 1.0 - row.iter().sum::<f64>();
        row[0] += residue;
        if row[0] < 0.0 {
            row[0] = 0.0;
        }
    }
    let shift: f64 = rng.gen_range(0.0..0.3);
    let rewards = source
        .rewards()
        .iter()
        .map(|r| r + rng.gen_range(-shift..=shift))
        .collect();
    let target = TabularMdp::new(n_states, n_actions, transitions, rewards, gamma, vec![false; n_states])
        .expect("perturbed MDP is valid");
    (source, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub pairs: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gammas: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            pairs: 1000,
            max_states: 6,
            max_actions: 3,
            gammas: vec![0.5, 0.9, 0.95],
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pair: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub delta_r: f64,
    pub delta_tv: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub pairs: usize,
    pub violations: usize,
    pub rows: Vec<SweepRow>,
}

/// Checks the bound on `pairs` random fixed-domain pairs; sizes and
/// discounts are drawn uniformly from the configured ranges.
pub fn bound_sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.pairs == 0 || config.max_states == 0 || config.max_actions == 0 || config.gammas.is_empty() {
        return Err(Error::InvalidArgument("pairs, max_states, max_actions and gammas must be nonempty".into()));
    }
    if let Some(g) = config.gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
        return Err(Error::InvalidArgument(format!("gamma must be in [0, 1), got {g}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::with_capacity(config.pairs);
    for pair in 0..config.pairs {
        let n_states = rng.gen_range(1..=config.max_states);
        let n_actions = rng.gen_range(1..=config.max_actions);
        let gamma = config.gammas[rng.gen_range(0..config.gammas.len())];
        let (source, target) = random_pair(&mut rng, n_states, n_actions, gamma);
        let r = action_value_bound(&source, &target, config.tol)?;
        rows.push(SweepRow {
            pair,
            n_states,
            n_actions,
            gamma,
            lhs: r.lhs,
            rhs: r.rhs,
            delta_r: r.delta_r,
            delta_tv: r.delta_tv,
            holds: r.holds,
        });
    }
    Ok(SweepResult {
        pairs: config.pairs,
        violations: rows.iter().filter(|r| !r.holds).count(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_step(p: &[f64]) -> TabularMdp {
        let n = p.len();
        let mut t = Vec::new();
        for _ in 0..n {
            t.extend_from_slice(p);
        }
        TabularMdp::new(n, 1, t, vec![0.0; n], 0.9, vec![false; n]).unwrap()
    }

    #[test]
    fn identical_kernels_have_zero_tv() {
        let m = one_step(&[0.2, 0.8]);
        assert_eq!(tv_distance(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_kernels_have_unit_tv() {
        assert_eq!(tv_distance(&one_step(&[1.0, 0.0]), &one_step(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn tv_worked_example() {
        let d = tv_distance(&one_step(&[0.7, 0.3]), &one_step(&[0.5, 0.5])).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn tv_rejects_shape_mismatch() {
        assert!(tv_distance(&one_step(&[1.0]), &one_step(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn identical_mdps_have_zero_gap_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(&mut rng, 4, 2, 0.9);
        let r = action_value_bound(&m, &m, 1e-8).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn reward_shift_only_uses_reward_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_mdp(&mut rng, 5, 3, 0.9);
        let c = 0.25;
        let shifted = m.with_rewards(m.rewards().iter().map(|r| r + c).collect()).unwrap();
        let r = action_value_bound(&m, &shifted, 1e-8).unwrap();
        assert_eq!(r.delta_tv, 0.0);
        assert!((r.delta_r - c).abs() < 1e-12);
        assert!((r.rhs - 2.0 * c / (1.0 - 0.9)).abs() < 1e-9);
        assert!(r.holds);
    }

    #[test]
    fn rejects_domain_and_discount_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mdp(&mut rng, 3, 2, 0.9);
        let b = random_mdp(&mut rng, 4, 2, 0.9);
        let c = random_mdp(&mut rng, 3, 2, 0.5);
        assert!(matches!(action_value_bound(&a, &b, 1e-8), Err(Error::DomainMismatch(_))));
        assert!(matches!(action_value_bound(&a, &c, 1e-8), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn random_pairs_never_violate_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for i in 0..200 {
            let ns = rng.gen_range(1..=6);
            let na = rng.gen_range(1..=3);
            let gamma = [0.5, 0.9, 0.95][i % 3];
            let (s, t) = random_pair(&mut rng, ns, na, gamma);
            let r = action_value_bound(&s, &t, 1e-8).unwrap();
            assert!(r.holds, "pair {i}: {r:?}");
        }
    }

    fn kernel_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
        (any::<u64>(), 1usize..6, 1usize..4)
    }

    proptest! {
        #[test]
        fn tv_is_a_metric((seed, ns, na) in kernel_strategy()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mdp(&mut rng, ns, na, 0.9);
            let b = random_mdp(&mut rng, ns, na, 0.9);
            let c = random_mdp(&mut rng, ns, na, 0.9);
            let ab = tv_distance(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, tv_distance(&b, &a).unwrap());
            prop_assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
            if a.transitions() != b.transitions() {
                prop_assert!(ab > 0.0);
            }
            let ac = tv_distance(&a, &c).unwrap();
            let cb = tv_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn rhs_monotone_in_gaps(
            gamma in 0.0f64..0.99, dr in 0.0f64..2.0, dtv in 0.0f64..1.0,
            rs in 0.0f64..2.0, rt in 0.0f64..2.0, extra in 0.0f64..2.0,
        ) {
            let base = bound_rhs(gamma, dr, dtv, rs, rt);
            prop_assert!(bound_rhs(gamma, dr + extra, dtv, rs, rt) >= base);
            prop_assert!(bound_rhs(gamma, dr, (dtv + extra).min(1.0), rs, rt) >= base);
        }

        #[test]
        fn wider_reward_gap_same_dynamics(seed in any::<u64>(), extra in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_mdp(&mut rng, 4, 2, 0.9);
            let noise: Vec<f64> = s.rewards().iter().map(|r| r + rng.gen_range(-0.5..0.5)).collect();
            let t = s.with_rewards(noise).unwrap();
            let base = action_value_bound(&s, &t, 1e-8).unwrap();
            let wider: Vec<f64> = s.rewards().iter().zip(t.rewards())
                .map(|(rs, rt)| if rt >= rs { rt + extra } else { rt - extra })
                .collect();
            let t2 = t.with_rewards(wider).unwrap();
            let more = action_value_bound(&s, &t2, 1e-8).unwrap();
            prop_assert!(more.rhs >= base.rhs);
            prop_assert!(base.holds && more.holds);
        }
    }

    #[test]
    fn small_sweep_is_clean_and_reproducible() {
        let cfg = SweepConfig {
            pairs: 50,
            seed: 3,
            ..SweepConfig::default()
        };
        let a = bound_sweep(&cfg).unwrap();
        assert_eq!(a.violations, 0);
        assert_eq!(a.rows.len(), 50);
        assert_eq!(a, bound_sweep(&cfg).unwrap());
        assert!(bound_sweep(&SweepConfig { gammas: vec![1.0], ..cfg }).is_err());
    }
}
