//! Central finite differences for verifying analytic gradients.

use super::mlp::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub n: usize,
}

/// Central differences `(L(p + eps e_i) - L(p - eps e_i)) / 2 eps` for every
/// parameter, returned in the same layout as `params`.
pub fn finite_difference<F>(params: &MlpParams, eps: f64, loss: F) -> MlpParams
where
    F: Fn(&MlpParams) -> f64,
{
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        flat[i] = base[i] + eps;
        probe.set_flat(&flat).expect("same layout");
        let up = loss(&probe);
        flat[i] = base[i] - eps;
        probe.set_flat(&flat).expect("same layout");
        let down = loss(&probe);
        flat[i] = base[i];
        out.push((up - down) / (2.0 * eps));
    }
    let mut grads = params.zeros_like();
    grads.set_flat(&out).expect("same layout");
    grads
}

pub fn compare(analytic: &MlpParams, numeric: &MlpParams) -> GradCheck {
    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut n = 0;
    for (a, b) in analytic.values().zip(numeric.values()) {
        diff2 += (a - b) * (a - b);
        a2 += a * a;
        n2 += b * b;
        max_abs = max_abs.max((a - b).abs());
        n += 1;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    let rel_err = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
    GradCheck {
        rel_err,
        max_abs_err: max_abs,
        n,
    }
}
