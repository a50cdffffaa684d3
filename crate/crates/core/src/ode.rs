//! Fixed-step classical Runge-Kutta for the linear forward equations
//! `dp/dt = p Q(t)` used throughout the crate.

/// Scratch buffers for [`rk4_step`].
#[derive(Default)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

/// Advances `p` from `t` to `t + dt`. `rhs(t, p, out)` writes `dp/dt` into `out`.
#[allow(clippy::needless_range_loop)]
pub fn rk4_step<F>(mut rhs: F, t: f64, dt: f64, p: &mut [f64], work: &mut Rk4Work)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = p.len();
    for buf in [&mut work.k1, &mut work.k2, &mut work.k3, &mut work.k4, &mut work.tmp] {
        buf.resize(n, 0.0);
    }
    rhs(t, p, &mut work.k1);
    for i in 0..n {
        work.tmp[i] = p[i] + 0.5 * dt * work.k1[i];
    }
    rhs(t + 0.5 * dt, &work.tmp, &mut work.k2);
    for i in 0..n {
        work.tmp[i] = p[i] + 0.5 * dt * work.k2[i];
    }
    rhs(t + 0.5 * dt, &work.tmp, &mut work.k3);
    for i in 0..n {
        work.tmp[i] = p[i] + dt * work.k3[i];
    }
    rhs(t + dt, &work.tmp, &mut work.k4);
    for i in 0..n {
        p[i] += dt / 6.0 * (work.k1[i] + 2.0 * work.k2[i] + 2.0 * work.k3[i] + work.k4[i]);
    }
}

/// Integrates a time-homogeneous system over `duration` with `steps` equal steps.
pub fn integrate_homogeneous<F>(mut rhs: F, duration: f64, steps: usize, p: &mut [f64])
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut work = Rk4Work::default();
    let dt = duration / steps as f64;
    for _ in 0..steps {
        rk4_step(|_, x, out| rhs(x, out), 0.0, dt, p, &mut work);
    }
}

pub(crate) fn renormalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        for v in p.iter_mut() {
            *v /= total;
        }
    }
}
