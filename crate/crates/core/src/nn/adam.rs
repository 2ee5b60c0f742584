use super::mlp::MlpParams;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in the descent direction of
    /// `grads`. Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::shape(
                "adam step",
                format!("{:?}", params.layer_sizes()),
                format!("{:?}", grads.layer_sizes()),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to adam".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - BETA1.powf(t);
        let c2 = 1.0 - BETA2.powf(t);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Activation;

    fn scalar_net(w: f64) -> MlpParams {
        let mut p = MlpParams::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        p.set_flat(&[w, 0.0]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_net(1.5);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        s.step(&mut p, &g, 1e-2).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = scalar_net(0.0);
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.set_flat(&[2.0, -3.0]).unwrap();
        for _ in 0..20 {
            s.step(&mut p, &g, 1e-2).unwrap();
        }
        let flat = p.to_flat();
        assert!(flat[0] < 0.0);
        assert!(flat[1] > 0.0);
        // bias-corrected first step has magnitude lr
        let mut q = scalar_net(0.0);
        let mut s2 = AdamState::new(&q);
        s2.step(&mut q, &g, 1e-2).unwrap();
        assert!((q.to_flat()[0] + 1e-2).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl_loss_decreases() {
        // loss = 0.5 * ((w - 3)^2 + (b + 1)^2)
        let mut p = scalar_net(0.0);
        let mut s = AdamState::new(&p);
        let loss = |p: &MlpParams| {
            let f = p.to_flat();
            0.5 * ((f[0] - 3.0).powi(2) + (f[1] + 1.0).powi(2))
        };
        let mut losses = vec![loss(&p)];
        for _ in 0..50 {
            let f = p.to_flat();
            let mut g = p.zeros_like();
            g.set_flat(&[f[0] - 3.0, f[1] + 1.0]).unwrap();
            s.step(&mut p, &g, 0.05).unwrap();
            losses.push(loss(&p));
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "loss went {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn nan_gradient_is_rejected_without_mutation() {
        let mut p = scalar_net(1.0);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.set_flat(&[f64::NAN, 0.0]).unwrap();
        assert!(matches!(s.step(&mut p, &g, 1e-3), Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = scalar_net(1.0);
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        assert!(s.step(&mut p, &g, 0.0).is_err());
    }
}
