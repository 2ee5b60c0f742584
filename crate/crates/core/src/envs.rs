//! Point-mass continuous control: 2-D position and velocity driven by a
//! bounded 2-D force, with damping, mass and reward knobs that produce
//! related target tasks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POS_DIM: usize = 2;
pub const STATE_DIM: usize = 2 * POS_DIM;
pub const ACTION_DIM: usize = POS_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-|x' - goal|`
    NegDistance,
    /// Velocity along the first axis, `(x'_0 - x_0) / dt`.
    ForwardProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub mass: f64,
    pub damping: f64,
    pub dt: f64,
    pub goal: Vec<f64>,
    pub goal_radius: f64,
    pub reward_mode: RewardMode,
    pub reward_scale: f64,
    pub horizon: usize,
    pub action_bound: f64,
    pub process_noise_std: f64,
    /// Corners of the box the start position is drawn from.
    pub start_low: Vec<f64>,
    pub start_high: Vec<f64>,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            kind: EnvKind::PointMass,
            mass: 1.0,
            damping: 1.0,
            dt: 0.05,
            goal: vec![0.5, 0.5],
            goal_radius: 0.1,
            reward_mode: RewardMode::NegDistance,
            reward_scale: 1.0,
            horizon: 200,
            action_bound: 1.0,
            process_noise_std: 0.0,
            start_low: vec![-1.0, -1.0],
            start_high: vec![0.0, 0.0],
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let scalars = [
            self.mass,
            self.damping,
            self.dt,
            self.goal_radius,
            self.reward_scale,
            self.action_bound,
            self.process_noise_std,
        ];
        let vectors = self.goal.iter().chain(&self.start_low).chain(&self.start_high);
        if scalars.iter().chain(vectors).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("environment spec".into()));
        }
        if self.mass <= 0.0 {
            return bad(format!("mass must be > 0, got {}", self.mass));
        }
        if self.damping < 0.0 {
            return bad(format!("damping must be >= 0, got {}", self.damping));
        }
        if self.dt <= 0.0 {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if self.dt * self.damping / self.mass > 1.0 {
            return bad(format!(
                "dt * damping / mass = {} exceeds 1; the explicit damping step would overshoot",
                self.dt * self.damping / self.mass
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.action_bound <= 0.0 {
            return bad(format!("action_bound must be > 0, got {}", self.action_bound));
        }
        if self.goal_radius < 0.0 || self.process_noise_std < 0.0 {
            return bad("goal_radius and process_noise_std must be >= 0".into());
        }
        for (name, v) in [("goal", &self.goal), ("start_low", &self.start_low), ("start_high", &self.start_high)] {
            if v.len() != POS_DIM {
                return Err(Error::shape(name, POS_DIM, v.len()));
            }
        }
        if self.start_low.iter().zip(&self.start_high).any(|(l, h)| l > h) {
            return bad("start_low must not exceed start_high".into());
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        STATE_DIM
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    /// Stable identifier of the spec's JSON form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Goal reached; the value of `s_next` is not bootstrapped.
    pub done: bool,
    /// Episode cut by the horizon; bootstrapping continues.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "value")]
pub enum Perturbation {
    Damping(f64),
    Mass(f64),
    RewardScale(f64),
    Goal(Vec<f64>),
}

/// Copy of `spec` changed along a single axis.
pub fn perturb(spec: &EnvSpec, change: &Perturbation) -> Result<EnvSpec> {
    let mut out = spec.clone();
    match change {
        Perturbation::Damping(v) => out.damping = *v,
        Perturbation::Mass(v) => out.mass = *v,
        Perturbation::RewardScale(v) => out.reward_scale = *v,
        Perturbation::Goal(g) => out.goal = g.clone(),
    }
    out.validate()?;
    Ok(out)
}

/// Position drawn uniformly from the start box, velocity zero.
pub fn env_reset(spec: &EnvSpec, rng: &mut impl Rng) -> Vec<f64> {
    let mut s = vec![0.0; STATE_DIM];
    for i in 0..POS_DIM {
        let (lo, hi) = (spec.start_low[i], spec.start_high[i]);
        s[i] = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    }
    s
}

/// One semi-implicit Euler step. Actions are clipped to the bound. The
/// random stream is touched only when process noise is enabled.
pub fn env_step(spec: &EnvSpec, s: &[f64], a: &[f64], rng: &mut impl Rng) -> Result<Transition> {
    if s.len() != STATE_DIM {
        return Err(Error::shape("state", STATE_DIM, s.len()));
    }
    if a.len() != ACTION_DIM {
        return Err(Error::shape("action", ACTION_DIM, a.len()));
    }
    if s.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state or action passed to env_step".into()));
    }
    let a: Vec<f64> = a
        .iter()
        .map(|x| x.clamp(-spec.action_bound, spec.action_bound))
        .collect();
    let noise = if spec.process_noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.process_noise_std).expect("std checked");
        (0..POS_DIM).map(|_| normal.sample(rng)).collect()
    } else {
        vec![0.0; POS_DIM]
    };
    let mut next = vec![0.0; STATE_DIM];
    for i in 0..POS_DIM {
        let (x, v) = (s[i], s[POS_DIM + i]);
        let v_next = v + spec.dt * (a[i] - spec.damping * v) / spec.mass + noise[i];
        next[POS_DIM + i] = v_next;
        next[i] = x + spec.dt * v_next;
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state after env_step".into()));
    }
    let dist = goal_distance(spec, &next);
    let raw = match spec.reward_mode {
        RewardMode::NegDistance => -dist,
        RewardMode::ForwardProgress => (next[0] - s[0]) / spec.dt,
    };
    Ok(Transition {
        s: s.to_vec(),
        a,
        r: spec.reward_scale * raw,
        s_next: next,
        done: dist <= spec.goal_radius,
        truncated: false,
    })
}

pub fn goal_distance(spec: &EnvSpec, s: &[f64]) -> f64 {
    s[..POS_DIM]
        .iter()
        .zip(&spec.goal)
        .map(|(x, g)| (x - g).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Hand-written PD controller toward the goal, clipped to the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProportionalController {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ProportionalController {
    fn default() -> Self {
        Self { kp: 4.0, kd: 2.0 }
    }
}

impl ProportionalController {
    pub fn act(&self, spec: &EnvSpec, s: &[f64]) -> Vec<f64> {
        (0..POS_DIM)
            .map(|i| {
                let u = self.kp * (spec.goal[i] - s[i]) - self.kd * s[POS_DIM + i];
                u.clamp(-spec.action_bound, spec.action_bound)
            })
            .collect()
    }
}

/// Runs one episode of at most `spec.horizon` steps. Returns the
/// transitions, the last of which is flagged done or truncated.
pub fn run_episode(
    spec: &EnvSpec,
    rng: &mut impl Rng,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<Vec<Transition>> {
    let mut s = env_reset(spec, rng);
    let mut out = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let a = policy(&s);
        let mut tr = env_step(spec, &s, &a, rng)?;
        tr.truncated = !tr.done && t + 1 == spec.horizon;
        let stop = tr.done;
        s = tr.s_next.clone();
        out.push(tr);
        if stop {
            break;
        }
    }
    Ok(out)
}

pub fn episode_return(episode: &[Transition]) -> f64 {
    episode.iter().map(|t| t.r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn quiet() -> EnvSpec {
        EnvSpec::default()
    }

    #[test]
    fn zero_size_start_box_is_deterministic() {
        let mut spec = quiet();
        spec.start_low = vec![0.3, -0.2];
        spec.start_high = vec![0.3, -0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(env_reset(&spec, &mut rng), vec![0.3, -0.2, 0.0, 0.0]);
    }

    #[test]
    fn reset_is_seeded() {
        let spec = quiet();
        let a = env_reset(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let b = env_reset(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn reset_is_uniform_over_the_box() {
        let spec = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bins = 10;
        let n = 10_000;
        let mut counts = vec![0usize; bins * bins];
        for _ in 0..n {
            let s = env_reset(&spec, &mut rng);
            let cell = |i: usize| {
                let u = (s[i] - spec.start_low[i]) / (spec.start_high[i] - spec.start_low[i]);
                ((u * bins as f64) as usize).min(bins - 1)
            };
            counts[cell(0) * bins + cell(1)] += 1;
        }
        let expected = n as f64 / (bins * bins) as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins * bins - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat}, p {p}");
    }

    #[test]
    fn rest_state_without_force_stays_put() {
        let spec = quiet();
        let s = vec![0.2, -0.4, 0.0, 0.0];
        let tr = env_step(&spec, &s, &[0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tr.s_next, s);
    }

    #[test]
    fn undamped_velocity_grows_linearly() {
        let mut spec = quiet();
        spec.damping = 0.0;
        spec.mass = 2.0;
        let a = [0.6, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = vec![-5.0, -5.0, 0.0, 0.0];
        for k in 1..=20 {
            s = env_step(&spec, &s, &a, &mut rng).unwrap().s_next;
            for i in 0..2 {
                let v = k as f64 * spec.dt * a[i] / spec.mass;
                assert!((s[2 + i] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn more_damping_means_slower() {
        let s = vec![0.0, 0.0, 0.8, -0.5];
        let a = [0.3, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let speed = |d: f64, rng: &mut ChaCha8Rng| {
            let spec = perturb(&quiet(), &Perturbation::Damping(d)).unwrap();
            let n = env_step(&spec, &s, &a, rng).unwrap().s_next;
            (n[2] * n[2] + n[3] * n[3]).sqrt()
        };
        assert!(speed(2.0, &mut rng) < speed(1.0, &mut rng));
    }

    #[test]
    fn identity_perturbation_and_source_untouched() {
        let spec = quiet();
        let same = perturb(&spec, &Perturbation::Damping(spec.damping)).unwrap();
        assert_eq!(same, spec);
        let heavier = perturb(&spec, &Perturbation::Mass(3.0)).unwrap();
        assert_eq!(heavier.mass, 3.0);
        assert_eq!(spec.mass, 1.0);
        assert!(perturb(&spec, &Perturbation::Mass(-1.0)).is_err());
        assert!(perturb(&spec, &Perturbation::Goal(vec![1.0])).is_err());
        assert!(perturb(&spec, &Perturbation::Damping(40.0)).is_err());
    }

    #[test]
    fn negative_reward_scale_reverses_preference() {
        let spec = quiet();
        let flipped = perturb(&spec, &Perturbation::RewardScale(-1.0)).unwrap();
        let s = vec![0.0, 0.0, 0.0, 0.0];
        let toward = [1.0, 1.0];
        let away = [-1.0, -1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = |spec: &EnvSpec, a: &[f64], rng: &mut ChaCha8Rng| env_step(spec, &s, a, rng).unwrap().r;
        assert!(r(&spec, &toward, &mut rng) > r(&spec, &away, &mut rng));
        assert!(r(&flipped, &toward, &mut rng) < r(&flipped, &away, &mut rng));
    }

    #[test]
    fn actions_are_clipped() {
        let spec = quiet();
        let tr = env_step(&spec, &[0.0; 4], &[5.0, -7.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tr.a, vec![1.0, -1.0]);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let spec = quiet();
        let r = env_step(&spec, &[f64::NAN, 0.0, 0.0, 0.0], &[0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn controller_reaches_goal() {
        let spec = quiet();
        let pd = ProportionalController::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ep = run_episode(&spec, &mut rng, |s| pd.act(&spec, s)).unwrap();
            assert!(ep.last().unwrap().done);
        }
    }

    #[test]
    fn horizon_cut_is_truncation_not_done() {
        let mut spec = quiet();
        spec.horizon = 5;
        let ep = run_episode(&spec, &mut ChaCha8Rng::seed_from_u64(1), |_| vec![0.0, 0.0]).unwrap();
        assert_eq!(ep.len(), 5);
        assert!(ep[4].truncated && !ep[4].done);
        assert!(ep[..4].iter().all(|t| !t.truncated));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = quiet();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<EnvSpec>(&json).unwrap(), spec);
        let extra = json.replacen('{', "{\"bogus\":1,", 1);
        assert!(serde_json::from_str::<EnvSpec>(&extra).is_err());
    }

    proptest! {
        #[test]
        fn kinetic_energy_never_increases_without_force(
            damping in 0.0f64..20.0, mass in 1.0f64..5.0,
            vx in -3.0f64..3.0, vy in -3.0f64..3.0,
        ) {
            let mut spec = quiet();
            spec.damping = damping;
            spec.mass = mass;
            spec.validate().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut s = vec![0.0, 0.0, vx, vy];
            for _ in 0..50 {
                let next = env_step(&spec, &s, &[0.0, 0.0], &mut rng).unwrap().s_next;
                let e0 = s[2] * s[2] + s[3] * s[3];
                let e1 = next[2] * next[2] + next[3] * next[3];
                prop_assert!(e1 <= e0 + 1e-15);
                s = next;
            }
        }
    }
}
