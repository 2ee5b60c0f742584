use super::{QTable, TabularMdp};
use crate::error::{Error, Result};

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(())
}

/// Sweep threshold that bounds the distance to the fixed point by `tol`
/// for a `gamma`-contraction.
fn sweep_threshold(gamma: f64, tol: f64) -> f64 {
    if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    }
}

fn backup(mdp: &TabularMdp, s: usize, a: usize, next_value: impl Fn(usize) -> f64) -> f64 {
    if mdp.is_terminal(s) {
        return 0.0;
    }
    let ev: f64 = mdp
        .next_dist(s, a)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(sp, &p)| p * next_value(sp))
        .sum();
    mdp.reward(s, a) + mdp.gamma() * ev
}

/// Optimal action values. The result is within `tol` of `Q*` in sup-norm,
/// so its Bellman optimality residual is at most `tol` as well.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    check_tol(tol)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let threshold = sweep_threshold(mdp.gamma(), tol);
    let mut q = QTable::zeros(ns, na);
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q.max(s)).collect();
        let mut next = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                next.set(s, a, backup(mdp, s, a, |sp| v[sp]));
            }
        }
        let delta = next.sup_distance(&q);
        q = next;
        if delta <= threshold {
            return Ok(q);
        }
    }
}

/// `max |Q - T Q|` for the optimality operator `T`.
pub fn bellman_residual(mdp: &TabularMdp, q: &QTable) -> f64 {
    let v: Vec<f64> = (0..mdp.n_states()).map(|s| q.max(s)).collect();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            worst = worst.max((q.get(s, a) - backup(mdp, s, a, |sp| v[sp])).abs());
        }
    }
    worst
}

/// Action values of a fixed deterministic policy, within `tol` of the exact
/// fixed point `Q(s,a) = R(s,a) + gamma sum_s' P(s,a,s') Q(s', policy(s'))`.
pub fn policy_q_values(mdp: &TabularMdp, policy: &[usize], tol: f64) -> Result<QTable> {
    check_tol(tol)?;
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let threshold = sweep_threshold(mdp.gamma(), tol);
    let mut q = QTable::zeros(ns, na);
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q.get(s, policy[s])).collect();
        let mut next = QTable::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                next.set(s, a, backup(mdp, s, a, |sp| v[sp]));
            }
        }
        let delta = next.sup_distance(&q);
        q = next;
        if delta <= threshold {
            return Ok(q);
        }
    }
}

/// Expected undiscounted sum of the first `horizon` rewards of `policy`
/// from `start`, by backward induction over the remaining steps.
pub fn finite_horizon_value(
    mdp: &TabularMdp,
    policy: &[usize],
    start: usize,
    horizon: usize,
) -> Result<f64> {
    mdp.check_policy(policy)?;
    if start >= mdp.n_states() {
        return Err(Error::InvalidArgument(format!("start state {start} out of range")));
    }
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    for _ in 0..horizon {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                if mdp.is_terminal(s) {
                    return 0.0;
                }
                let a = policy[s];
                let ev: f64 = mdp
                    .next_dist(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, vv)| p * vv)
                    .sum();
                mdp.reward(s, a) + ev
            })
            .collect();
        v = next;
    }
    Ok(v[start])
}

/// Same quantity as [`finite_horizon_value`], computed forward by pushing
/// the state distribution through the chain and summing expected rewards.
pub fn finite_horizon_return(
    mdp: &TabularMdp,
    policy: &[usize],
    start: usize,
    horizon: usize,
) -> Result<f64> {
    mdp.check_policy(policy)?;
    if start >= mdp.n_states() {
        return Err(Error::InvalidArgument(format!("start state {start} out of range")));
    }
    let ns = mdp.n_states();
    let mut dist = vec![0.0; ns];
    dist[start] = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if dist[s] == 0.0 {
                continue;
            }
            let a = policy[s];
            total += dist[s] * mdp.reward(s, a);
            for (sp, p) in mdp.next_dist(s, a).iter().enumerate() {
                next[sp] += dist[s] * p;
            }
        }
        dist = next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::bound::random_mdp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], gamma, vec![false]).unwrap()
    }

    /// 4-state chain, actions left/right, reward -1 per step, state 0 terminal.
    fn chain(slip: f64) -> TabularMdp {
        let (ns, na) = (4, 2);
        let mut p = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na];
        let mut term = vec![false; ns];
        term[0] = true;
        for s in 0..ns {
            for a in 0..na {
                let base = (s * na + a) * ns;
                if s == 0 {
                    p[base] = 1.0;
                    continue;
                }
                let left = s - 1;
                let right = (s + 1).min(ns - 1);
                let (want, other) = if a == 0 { (left, right) } else { (right, left) };
                p[base + want] += 1.0 - slip;
                p[base + other] += slip;
                r[s * na + a] = -1.0;
            }
        }
        TabularMdp::new(ns, na, p, r, 0.9, term).unwrap()
    }

    #[test]
    fn geometric_series_single_state() {
        let q = value_iteration(&single_state(1.0, 0.5), 1e-12).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() < 1e-11);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_mdp(&mut rng, 5, 3, 0.9);
        let m = m.with_rewards(vec![0.0; 15]).unwrap();
        let q = value_iteration(&m, 1e-10).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_long_fixed_point_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_mdp(&mut rng, 5, 3, 0.9);
        // oracle: 10_000 plain Bellman sweeps, no stopping rule
        let mut oracle = vec![0.0; 15];
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..5)
                .map(|s| (0..3).map(|a| oracle[s * 3 + a]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut next = vec![0.0; 15];
            for s in 0..5 {
                for a in 0..3 {
                    let ev: f64 = m.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                    next[s * 3 + a] = m.reward(s, a) + 0.9 * ev;
                }
            }
            oracle = next;
        }
        let q = value_iteration(&m, 1e-9).unwrap();
        for (a, b) in q.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(bellman_residual(&m, &q) <= 1e-9);
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        assert!(value_iteration(&single_state(1.0, 0.5), 0.0).is_err());
        assert!(policy_q_values(&single_state(1.0, 0.5), &[0], -1.0).is_err());
    }

    #[test]
    fn greedy_policy_evaluates_to_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tol = 1e-8;
        for _ in 0..20 {
            let ns = rng.gen_range(1..7);
            let na = rng.gen_range(1..4);
            let m = random_mdp(&mut rng, ns, na, 0.95);
            let q = value_iteration(&m, tol).unwrap();
            let qp = policy_q_values(&m, &q.greedy_policy(), tol).unwrap();
            assert!(q.sup_distance(&qp) <= 2.0 * tol);
        }
    }

    #[test]
    fn single_state_policy_equals_optimum() {
        let m = single_state(-0.3, 0.8);
        let a = value_iteration(&m, 1e-10).unwrap();
        let b = policy_q_values(&m, &[0], 1e-10).unwrap();
        assert!(a.sup_distance(&b) < 2e-10);
    }

    #[test]
    fn out_of_range_policy_is_rejected() {
        assert!(policy_q_values(&chain(0.0), &[0, 0, 5, 0], 1e-6).is_err());
    }

    #[test]
    fn always_left_matches_monte_carlo() {
        let m = chain(0.2);
        let policy = vec![0; 4];
        let q = policy_q_values(&m, &policy, 1e-10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let episodes = 100_000;
        let start = 3;
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let (mut s, mut g, mut disc) = (start, 0.0, 1.0);
            let mut t = 0;
            while !m.is_terminal(s) && t < 1000 {
                g += disc * m.reward(s, 0);
                disc *= m.gamma();
                s = m.sample_next(s, 0, rng.gen());
                t += 1;
            }
            returns.push(g);
        }
        let mean = returns.iter().sum::<f64>() / episodes as f64;
        let var = returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64;
        let se = (var / episodes as f64).sqrt();
        let exact = q.get(start, 0);
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} vs exact {exact} (se {se})");
    }

    #[test]
    fn forward_and_backward_finite_horizon_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let m = random_mdp(&mut rng, 6, 3, 0.9);
            let policy: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            for h in [0, 1, 7, 40] {
                let a = finite_horizon_value(&m, &policy, 2, h).unwrap();
                let b = finite_horizon_return(&m, &policy, 2, h).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
