//! Base generators and exact transition kernels for the nearest-neighbour
//! (NNRW) and uniform (URW) random walks on the torus.
//!
//! Both kernels factorize over axes into a circulant `m x m` table, so a
//! [`TransitionKernel`] stores only that table and applies the full
//! `S x S` kernel as a Kronecker product.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{JumpFamily, LatticeSpec, NeighborTable, State};

const BESSEL_MAX_TERMS: usize = 500;
const BESSEL_REL_STOP: f64 = 1e-16;
const WRAP_REL_STOP: f64 = 1e-18;

/// Modified Bessel function of the first kind `I_b(z)` by its power series.
///
/// Intended for small arguments (`z <= 2`), where the series converges in a
/// few dozen terms. Terms are accumulated with Neumaier compensation.
pub fn bessel_i(order: u32, z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * z;
    let mut term = 1.0;
    for j in 1..=order {
        term *= half / f64::from(j);
    }
    if term == 0.0 {
        return 0.0;
    }
    let q = half * half;
    let b = f64::from(order);
    let mut sum = term;
    let mut comp = 0.0;
    for n in 1..BESSEL_MAX_TERMS {
        let nf = n as f64;
        term *= q / (nf * (nf + b));
        let t = sum + term;
        comp += (sum - t) + term;
        sum = t;
        if term < BESSEL_REL_STOP * sum {
            break;
        }
    }
    sum + comp
}

/// Probability that a `Skellam(t/2, t/2)` variable is congruent to `a` mod `m`:
/// `sum_k e^{-t} I_{|a + k m|}(t)`.
pub fn wrapped_skellam(a: i64, t: f64, m: usize) -> f64 {
    debug_assert!(t >= 0.0 && m >= 2);
    let mi = m as i64;
    let a = a.rem_euclid(mi);
    if t == 0.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    let order = |v: i64| u32::try_from(v.unsigned_abs()).unwrap_or(u32::MAX);
    let mut sum = bessel_i(order(a), t);
    let mut band_index = 1;
    loop {
        let band = bessel_i(order(a + band_index * mi), t) + bessel_i(order(a - band_index * mi), t);
        sum += band;
        if band <= WRAP_REL_STOP * sum {
            break;
        }
        band_index += 1;
    }
    (-t).exp() * sum
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Nnrw,
    Urw,
}

impl DynamicsKind {
    pub fn family(self) -> JumpFamily {
        match self {
            DynamicsKind::Nnrw => JumpFamily::Nearest,
            DynamicsKind::Urw => JumpFamily::Uniform,
        }
    }
}

impl std::fmt::Display for DynamicsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DynamicsKind::Nnrw => "nnrw",
            DynamicsKind::Urw => "urw",
        })
    }
}

/// A base random walk on a given torus.
#[derive(Clone, Debug)]
pub struct Dynamics {
    kind: DynamicsKind,
    spec: LatticeSpec,
    neighbors: Arc<NeighborTable>,
}

impl Dynamics {
    pub fn new(kind: DynamicsKind, spec: LatticeSpec) -> Self {
        let neighbors = Arc::new(NeighborTable::new(&spec, kind.family()));
        Self { kind, spec, neighbors }
    }

    pub fn kind(&self) -> DynamicsKind {
        self.kind
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn shared_neighbors(&self) -> Arc<NeighborTable> {
        Arc::clone(&self.neighbors)
    }

    pub fn n_ops(&self) -> usize {
        self.neighbors.n_ops()
    }

    /// Per-operator jump rate `lambda(m)`: 1/2 for NNRW, 1/m for URW.
    pub fn rate(&self) -> f64 {
        match self.kind {
            DynamicsKind::Nnrw => 0.5,
            DynamicsKind::Urw => 1.0 / self.spec.m() as f64,
        }
    }

    /// Total exit rate `-q(x, x)`: `d` for NNRW, `d(m-1)/m` for URW.
    pub fn exit_rate(&self) -> f64 {
        self.rate() * self.n_ops() as f64
    }

    /// Generator entry `q(x, y)` on encoded states.
    ///
    /// Off the diagonal this is `lambda` times the number of operators taking
    /// `x` to `y`; the count is 2 only for NNRW with `m = 2`, where forward
    /// and backward jumps coincide.
    pub fn generator_rate(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return -self.exit_rate();
        }
        let hits = self.neighbors.row(x).iter().filter(|&&z| z == y).count();
        self.rate() * hits as f64
    }

    pub fn generator_rate_states(&self, x: &State, y: &State) -> f64 {
        self.generator_rate(x.index(), y.index())
    }

    /// Dense row-major `S x S` generator.
    pub fn generator_matrix(&self) -> Vec<f64> {
        let s = self.spec.size();
        let lambda = self.rate();
        let mut q = vec![0.0; s * s];
        for x in 0..s {
            for &y in self.neighbors.row(x) {
                q[x * s + y] += lambda;
            }
            q[x * s + x] = -self.exit_rate();
        }
        q
    }

    /// `out(y) = sum_z p(z) q(z, y)`, the right action of the generator on a row vector.
    pub fn apply_generator_transpose(&self, p: &[f64], out: &mut [f64]) {
        let lambda = self.rate();
        let exit = self.exit_rate();
        let nb = &self.neighbors;
        for (y, o) in out.iter_mut().enumerate() {
            let inflow: f64 = (0..nb.n_ops()).map(|op| p[nb.target(y, nb.inverse(op))]).sum();
            *o = lambda * inflow - exit * p[y];
        }
    }

    /// Transition kernel over a duration `t` in `[0, 1]`.
    pub fn kernel(&self, t: f64) -> Result<TransitionKernel> {
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("kernel duration {t} outside [0, 1]"));
        }
        Ok(TransitionKernel::new(self, t))
    }

    /// `p_{s+t|s}(y | x)` for a duration `t` in `[0, 1]`.
    pub fn transition_prob(&self, t: f64, x: &State, y: &State) -> Result<f64> {
        Ok(self.kernel(t)?.prob(x.index(), y.index()))
    }
}

/// Exact transition kernel of a base walk over a fixed duration.
///
/// Stored as the circulant per-axis table `table[(y_i - x_i) mod m]`; the
/// full kernel is the product over axes. Immutable once built.
#[derive(Debug)]
pub struct TransitionKernel {
    spec: LatticeSpec,
    duration: f64,
    table: Vec<f64>,
    dense: OnceLock<Vec<f64>>,
}

impl TransitionKernel {
    /// Builds the kernel for any finite duration `t >= 0`. Unlike
    /// [`Dynamics::kernel`] this accepts `t > 1` (stationary-limit checks).
    pub fn new(dynamics: &Dynamics, t: f64) -> Self {
        assert!(t.is_finite() && t >= 0.0, "kernel duration must be finite and nonnegative");
        let m = dynamics.spec.m();
        let mut table = vec![0.0; m];
        match dynamics.kind {
            DynamicsKind::Nnrw => {
                for a in 0..=m / 2 {
                    let v = wrapped_skellam(a as i64, t, m);
                    table[a] = v;
                    table[(m - a) % m] = v;
                }
            }
            DynamicsKind::Urw => {
                let decay = (-t).exp();
                table[0] = (1.0 + (m as f64 - 1.0) * decay) / m as f64;
                let off = -(-t).exp_m1() / m as f64;
                for v in table.iter_mut().skip(1) {
                    *v = off;
                }
            }
        }
        Self { spec: dynamics.spec.clone(), duration: t, table, dense: OnceLock::new() }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// One-axis kernel value for displacement `delta` (mod m).
    pub fn axis_prob(&self, delta: usize) -> f64 {
        self.table[delta % self.spec.m()]
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        let m = self.spec.m();
        (0..self.spec.d())
            .map(|axis| {
                let a = self.spec.coord(x, axis);
                let b = self.spec.coord(y, axis);
                self.table[(b + m - a) % m]
            })
            .product()
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        (0..self.spec.size()).map(|y| self.prob(x, y)).collect()
    }

    /// Dense row-major `S x S` kernel, materialized on first use.
    pub fn dense(&self) -> &[f64] {
        self.dense.get_or_init(|| {
            let s = self.spec.size();
            let mut out = vec![0.0; s * s];
            for x in 0..s {
                for y in 0..s {
                    out[x * s + y] = self.prob(x, y);
                }
            }
            out
        })
    }

    /// Replaces the row vector `v` by `v P` (equal to `P v`, the kernel is symmetric).
    pub fn apply_in_place(&self, v: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.spec.m();
        let s = self.spec.size();
        debug_assert_eq!(v.len(), s);
        scratch.resize(m, 0.0);
        for axis in 0..self.spec.d() {
            let stride = self.spec.stride(axis);
            let block = stride * m;
            for base in (0..s).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, out) in scratch.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += v[start + i * stride] * self.table[(j + m - i) % m];
                        }
                        *out = acc;
                    }
                    for (j, &val) in scratch.iter().enumerate() {
                        v[start + j * stride] = val;
                    }
                }
            }
        }
    }
}

/// Residual of the forward equation `d/dt p_t(.|x) = p_t(.|x) q` at `(t, x)`,
/// maximized over targets. The time derivative is a central difference.
pub fn kolmogorov_residual(dynamics: &Dynamics, t: f64, x: usize) -> Result<f64> {
    const DELTA: f64 = 1e-3;
    const STEP: f64 = 1e-5;
    if !(DELTA..=1.0 - DELTA).contains(&t) {
        return Err(Error::Domain(format!("residual time {t} outside [{DELTA}, {}]", 1.0 - DELTA)));
    }
    if x >= dynamics.spec.size() {
        return invalid(format!("state index {x} out of range"));
    }
    let fwd = dynamics.kernel(t + STEP)?.row(x);
    let bwd = dynamics.kernel(t - STEP)?.row(x);
    let here = dynamics.kernel(t)?.row(x);
    let mut flow = vec![0.0; here.len()];
    dynamics.apply_generator_transpose(&here, &mut flow);
    Ok(fwd
        .iter()
        .zip(&bwd)
        .zip(&flow)
        .map(|((f, b), g)| ((f - b) / (2.0 * STEP) - g).abs())
        .fold(0.0, f64::max))
}
