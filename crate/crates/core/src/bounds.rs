//! Explicit constants for the score bounds and the early-stopping error.

use crate::kernels::DynamicsKind;

/// `alpha_s = (1 - e^{-s}) / (1 + (m-1) e^{-s})`, the off-diagonal ratio of the URW kernel.
pub fn urw_alpha(m: usize, s: f64) -> f64 {
    let decay = (-s).exp();
    -(-s).exp_m1() / (1.0 + (m as f64 - 1.0) * decay)
}

/// Constant `5(2m+1)` of the NNRW bounds.
pub fn nnrw_constant(m: usize) -> f64 {
    5.0 * (2.0 * m as f64 + 1.0)
}

/// Pointwise `(lower, upper)` bounds on the projected score at time `t < 1`.
pub fn score_bounds(kind: DynamicsKind, m: usize, t: f64) -> (f64, f64) {
    let rest = 1.0 - t;
    match kind {
        DynamicsKind::Nnrw => {
            let c = nnrw_constant(m);
            (rest / c, c / rest)
        }
        DynamicsKind::Urw => {
            let a = urw_alpha(m, rest);
            (a, 1.0 / a)
        }
    }
}

/// Upper bound on `sum_sigma u_t(x, sigma(x))`.
pub fn score_sum_bound(kind: DynamicsKind, m: usize, d: usize, t: f64) -> f64 {
    let rest = 1.0 - t;
    let (m, d) = (m as f64, d as f64);
    match kind {
        DynamicsKind::Nnrw => 10.0 * d * (2.0 * m + 1.0) / rest,
        DynamicsKind::Urw => d * ((std::f64::consts::E + m - 1.0) / rest + m - 1.0),
    }
}

/// Bound on `tv(mu_{1-eta}, mu_1)`.
pub fn early_stopping_tv_bound(kind: DynamicsKind, m: usize, d: usize, eta: f64) -> f64 {
    match kind {
        DynamicsKind::Urw => d as f64 * eta / (1.0 - (-1.0f64).exp()),
        DynamicsKind::Nnrw => 5.0 * d as f64 * (2.0 * m as f64 + 1.0) * eta,
    }
}
