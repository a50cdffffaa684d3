//! Exact interpolant marginals, bridge and projected scores, the projected
//! generator and its forward evolution.
//!
//! Everything is computed from one matrix per time `t`,
//!
//! ```text
//! N_t(x, y) = sum_{x0, x1} p_{t|0}(x | x0) pi~(x0, x1) p_{1|t}(x1 | y)
//! ```
//!
//! whose diagonal is the interpolant marginal `p^I_t(x)` and whose ratios
//! `N_t(x, y) / N_t(x, x)` are the projected score `u^M_t(x, y)` for any pair
//! of states (the score identities need `u` between states two jumps apart).
//! Both kernels are Kronecker products, so `N_t` costs `O(S^2 d m)`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::coupling::{Coupling, ReweightedCoupling};
use crate::error::{invalid, Error, Result};
use crate::kernels::{Dynamics, TransitionKernel};
use crate::lattice::{JumpOp, NeighborTable, State};
use crate::metrics::MarginalDist;
use crate::ode::renormalize;

/// Smallest admissible distance to the terminal time for score evaluations.
pub const ETA_MIN: f64 = 1e-3;

/// Central-difference step for time derivatives of scores and kernels.
pub const FD_STEP: f64 = 1e-5;

/// Entropy function `phi(a) = a log a - a + 1`, with `phi(0) = 1`.
pub fn phi(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        a * a.ln() - a + 1.0
    }
}

fn check_score_time(t: f64) -> Result<()> {
    if !(0.0..=1.0 - ETA_MIN).contains(&t) {
        return Err(Error::Domain(format!(
            "score time {t} outside [0, {}]: the score is singular at t = 1",
            1.0 - ETA_MIN
        )));
    }
    Ok(())
}

/// Bridge score `u^{(x1)}_t(x, op(x)) = p_{1|t}(x1 | op(x)) / p_{1|t}(x1 | x)`.
pub fn bridge_score(dynamics: &Dynamics, t: f64, x1: &State, x: &State, op: &JumpOp) -> Result<f64> {
    check_score_time(t)?;
    let spec = dynamics.spec();
    if !op.is_valid_for(spec) || op.family() != dynamics.kind().family() {
        return invalid(format!("{op:?} is not an operator of this dynamics"));
    }
    let kernel = dynamics.kernel(1.0 - t)?;
    let y = spec.apply_index(x.index(), op);
    Ok(kernel.prob(y, x1.index()) / kernel.prob(x.index(), x1.index()))
}

/// Scores of every operator at every state for one time.
///
/// States outside the support of the interpolant marginal (possible only at
/// `t = 0`) are flagged in `support` and carry the base value 1; they are
/// never weighted by any expectation.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    pub t: f64,
    n_ops: usize,
    values: Vec<f64>,
    support: Vec<bool>,
}

impl ScoreTable {
    pub fn n_ops(&self) -> usize {
        self.n_ops
    }

    pub fn n_states(&self) -> usize {
        self.support.len()
    }

    pub fn get(&self, x: usize, op: usize) -> Result<f64> {
        if !self.support[x] {
            return Err(Error::UndefinedScore { t: self.t, state: x });
        }
        Ok(self.values[x * self.n_ops + op])
    }

    /// Scores of all operators at `x`, including unsupported states.
    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_ops..(x + 1) * self.n_ops]
    }

    pub fn in_support(&self, x: usize) -> bool {
        self.support[x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `N_t` for one time, with accessors for marginals and scores.
#[derive(Debug)]
pub struct ScoreField {
    t: f64,
    s: usize,
    n: Vec<f64>,
    total: f64,
    neighbors: Arc<NeighborTable>,
}

impl ScoreField {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n_states(&self) -> usize {
        self.s
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    /// Normalized interpolant marginal at `x`.
    pub fn marginal(&self, x: usize) -> f64 {
        self.n[x * self.s + x] / self.total
    }

    pub fn marginals(&self) -> Vec<f64> {
        (0..self.s).map(|x| self.marginal(x)).collect()
    }

    pub fn in_support(&self, x: usize) -> bool {
        self.n[x * self.s + x] > 0.0
    }

    /// `u^M_t(x, y)` for arbitrary `y`.
    pub fn score(&self, x: usize, y: usize) -> Result<f64> {
        let diag = self.n[x * self.s + x];
        if diag <= 0.0 {
            return Err(Error::UndefinedScore { t: self.t, state: x });
        }
        Ok(self.n[x * self.s + y] / diag)
    }

    pub fn score_op(&self, x: usize, op: usize) -> Result<f64> {
        self.score(x, self.neighbors.target(x, op))
    }

    /// `p^I_t(y) / p^I_t(x)`.
    pub fn marginal_ratio(&self, y: usize, x: usize) -> Result<f64> {
        let diag = self.n[x * self.s + x];
        if diag <= 0.0 {
            return Err(Error::UndefinedScore { t: self.t, state: x });
        }
        Ok(self.n[y * self.s + y] / diag)
    }

    pub fn table(&self) -> ScoreTable {
        let n_ops = self.neighbors.n_ops();
        let mut values = vec![1.0; self.s * n_ops];
        let mut support = vec![false; self.s];
        for x in 0..self.s {
            if self.score(x, x).is_ok() {
                support[x] = true;
                for op in 0..n_ops {
                    values[x * n_ops + op] = self.n[x * self.s + self.neighbors.target(x, op)] / self.n[x * self.s + x];
                }
            }
        }
        ScoreTable { t: self.t, n_ops, values, support }
    }

    /// Operator `A^M_t(x; op, op2)` of the score ODE.
    pub fn ode_operator(&self, x: usize, op: usize, op2: usize) -> Result<f64> {
        let nb = &self.neighbors;
        let sx = nb.target(x, op);
        let s2x = nb.target(x, op2);
        let s2sx = nb.target(sx, op2);
        let u = self.score(x, sx)?;
        Ok(u * self.score(x, s2x)? - self.score(x, s2sx)?
            + self.marginal_ratio(s2x, x)? * (self.score(s2x, sx)? - u * self.score(s2x, x)?))
    }

    /// Operator `B^M_t(x; op, op2)` of the score evolution identity.
    pub fn drift_operator(&self, x: usize, op: usize, op2: usize) -> Result<f64> {
        let nb = &self.neighbors;
        let sx = nb.target(x, op);
        let s2x = nb.target(x, op2);
        let s_s2x = nb.target(s2x, op);
        let s2_sx = nb.target(sx, op2);
        Ok(self.score(x, s2x)? * self.score(s2x, s_s2x)? - self.score(x, s2_sx)?
            + self.marginal_ratio(s2x, x)? * (self.score(s2x, sx)? - self.score(x, sx)? * self.score(s2x, x)?))
    }

    /// Operator `C^M_t(x; op, op2)` of the entropy evolution identity.
    pub fn entropy_operator(&self, x: usize, op: usize, op2: usize) -> Result<f64> {
        let nb = &self.neighbors;
        let sx = nb.target(x, op);
        let s2x = nb.target(x, op2);
        let s_s2x = nb.target(s2x, op);
        let u = self.score(x, sx)?;
        let shifted = self.score(s2x, s_s2x)?;
        Ok(self.score(x, s_s2x)? * (shifted / u).ln() + self.score(x, s2x)? * (u - shifted))
    }
}

/// Joint law of `(X_t, X_1)` under the interpolant, for the tractable loss.
#[derive(Debug)]
pub struct Posterior {
    s: usize,
    w: Vec<f64>,
    rest: TransitionKernel,
}

impl Posterior {
    /// `P(X_t = x, X_1 = x1)`.
    pub fn joint(&self, x: usize, x1: usize) -> f64 {
        self.w[x * self.s + x1] * self.rest.prob(x, x1)
    }

    /// Bridge score `u^{(x1)}_t(x, y)`.
    pub fn bridge_score(&self, x1: usize, x: usize, y: usize) -> f64 {
        self.rest.prob(y, x1) / self.rest.prob(x, x1)
    }
}

/// Projected generator `q^M_t`, stored per operator.
///
/// Rows of states outside the marginal support are listed in `undefined`
/// and carry no rates.
#[derive(Clone, Debug)]
pub struct ProjectedGenerator {
    pub t: f64,
    neighbors: Arc<NeighborTable>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    undefined: Vec<usize>,
}

impl ProjectedGenerator {
    /// Builds a generator from per-operator rates (row-major `S x n_ops`).
    pub fn from_rates(t: f64, neighbors: Arc<NeighborTable>, rates: Vec<f64>) -> Self {
        let n_ops = neighbors.n_ops();
        let exit = rates.chunks(n_ops).map(|r| r.iter().sum()).collect();
        Self { t, neighbors, rates, exit, undefined: Vec::new() }
    }

    pub fn undefined_states(&self) -> &[usize] {
        &self.undefined
    }

    pub fn n_states(&self) -> usize {
        self.exit.len()
    }

    /// Rate of operator `op` at `x`.
    pub fn op_rate(&self, x: usize, op: usize) -> f64 {
        self.rates[x * self.neighbors.n_ops() + op]
    }

    /// `q^M_t(x, y)`, with the diagonal equal to minus the row's off-diagonal sum.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return -self.exit[x];
        }
        let n_ops = self.neighbors.n_ops();
        self.neighbors
            .row(x)
            .iter()
            .enumerate()
            .filter(|&(_, &z)| z == y)
            .map(|(op, _)| self.rates[x * n_ops + op])
            .sum()
    }

    pub fn dense(&self) -> Vec<f64> {
        let s = self.n_states();
        let n_ops = self.neighbors.n_ops();
        let mut q = vec![0.0; s * s];
        for x in 0..s {
            for (op, &y) in self.neighbors.row(x).iter().enumerate() {
                q[x * s + y] += self.rates[x * n_ops + op];
            }
            q[x * s + x] -= self.exit[x];
        }
        q
    }

    /// `out(y) = sum_z p(z) q^M_t(z, y)`.
    pub fn apply_transpose(&self, p: &[f64], out: &mut [f64]) {
        let n_ops = self.neighbors.n_ops();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (z, &pz) in p.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            for (op, &y) in self.neighbors.row(z).iter().enumerate() {
                out[y] += pz * self.rates[z * n_ops + op];
            }
            out[z] -= pz * self.exit[z];
        }
    }
}

/// Integrates `dp/dt = p q^M_t` from `p0.t` to `t1` with classical RK4.
///
/// The step is `min(1e-3, (1 - t)/50)`, shrinking towards the terminal
/// singularity; the state is renormalized after every step.
pub fn forward_evolve<G>(p0: &MarginalDist, t1: f64, mut generator: G) -> Result<MarginalDist>
where
    G: FnMut(f64) -> Result<ProjectedGenerator>,
{
    if t1 > 1.0 - ETA_MIN {
        return Err(Error::Domain(format!("evolution end {t1} beyond {}", 1.0 - ETA_MIN)));
    }
    if t1 < p0.t {
        return invalid(format!("evolution end {t1} precedes start {}", p0.t));
    }
    let n = p0.probs.len();
    let mut p = p0.probs.clone();
    let mut t = p0.t;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut start = if t < t1 { Some(generator(t)?) } else { None };
    while t1 - t > 1e-15 {
        let dt = (1e-3f64).min((1.0 - t) / 50.0).min(t1 - t);
        let g0 = start.take().expect("generator at step start");
        let gm = generator(t + 0.5 * dt)?;
        let g1 = generator(t + dt)?;
        g0.apply_transpose(&p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k1[i];
        }
        gm.apply_transpose(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k2[i];
        }
        gm.apply_transpose(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + dt * k3[i];
        }
        g1.apply_transpose(&tmp, &mut k4);
        for i in 0..n {
            p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        renormalize(&mut p);
        t += dt;
        start = Some(g1);
    }
    Ok(MarginalDist::new(t1, p))
}

/// Exact engine for one (dynamics, coupling) pair.
///
/// Score fields are cached by time quantized to 12 decimals; the cache is
/// safe for concurrent readers.
pub struct ExactEngine {
    dynamics: Dynamics,
    coupling: ReweightedCoupling,
    columns: Vec<(usize, Vec<f64>)>,
    cache: RwLock<HashMap<i64, Arc<ScoreField>>>,
}

impl std::fmt::Debug for ExactEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactEngine")
            .field("dynamics", &self.dynamics.kind())
            .field("m", &self.dynamics.spec().m())
            .field("d", &self.dynamics.spec().d())
            .finish()
    }
}

fn cache_key(t: f64) -> i64 {
    (t * 1e12).round() as i64
}

impl ExactEngine {
    pub fn new(dynamics: Dynamics, coupling: &Coupling) -> Result<Self> {
        let reweighted = coupling.reweight(&dynamics)?;
        Ok(Self::from_reweighted(dynamics, reweighted))
    }

    pub fn from_reweighted(dynamics: Dynamics, coupling: ReweightedCoupling) -> Self {
        let s = dynamics.spec().size();
        let columns = (0..s)
            .filter_map(|x1| {
                let col: Vec<f64> = (0..s).map(|x0| coupling.weight(x0, x1)).collect();
                col.iter().any(|&w| w != 0.0).then_some((x1, col))
            })
            .collect();
        Self { dynamics, coupling, columns, cache: RwLock::new(HashMap::new()) }
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn coupling(&self) -> &ReweightedCoupling {
        &self.coupling
    }

    pub fn n_states(&self) -> usize {
        self.dynamics.spec().size()
    }

    fn check_time(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("time {t} outside [0, 1]"));
        }
        Ok(())
    }

    /// `W_t(x, x1) = sum_{x0} p_{t|0}(x | x0) pi~(x0, x1)`, row-major in `x`.
    fn forward_weights(&self, t: f64) -> Result<Vec<f64>> {
        let s = self.n_states();
        let kernel = self.dynamics.kernel(t)?;
        let transported: Vec<(usize, Vec<f64>)> = self
            .columns
            .par_iter()
            .map_init(Vec::new, |scratch, (x1, col)| {
                let mut v = col.clone();
                kernel.apply_in_place(&mut v, scratch);
                (*x1, v)
            })
            .collect();
        let mut w = vec![0.0; s * s];
        for (x1, v) in transported {
            for (x, val) in v.into_iter().enumerate() {
                w[x * s + x1] = val;
            }
        }
        Ok(w)
    }

    /// Computes `N_t` without touching the cache.
    pub fn compute_field(&self, t: f64) -> Result<ScoreField> {
        Self::check_time(t)?;
        let s = self.n_states();
        let mut n = self.forward_weights(t)?;
        let rest = self.dynamics.kernel(1.0 - t)?;
        n.par_chunks_mut(s).for_each_init(Vec::new, |scratch, row| {
            if row.iter().any(|&v| v != 0.0) {
                rest.apply_in_place(row, scratch);
            }
        });
        let total: f64 = (0..s).map(|x| n[x * s + x]).sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Domain(format!("interpolant marginal at t = {t} has mass {total}")));
        }
        Ok(ScoreField { t, s, n, total, neighbors: self.dynamics.shared_neighbors() })
    }

    /// Cached [`compute_field`](Self::compute_field).
    pub fn field(&self, t: f64) -> Result<Arc<ScoreField>> {
        let key = cache_key(t);
        if let Some(f) = self.cache.read().expect("score cache poisoned").get(&key) {
            return Ok(Arc::clone(f));
        }
        let field = Arc::new(self.compute_field(t)?);
        let mut cache = self.cache.write().expect("score cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(field)))
    }

    pub fn clear_cache(&self) {
        self.cache.write().expect("score cache poisoned").clear();
    }

    pub fn posterior(&self, t: f64) -> Result<Posterior> {
        check_score_time(t)?;
        Ok(Posterior { s: self.n_states(), w: self.forward_weights(t)?, rest: self.dynamics.kernel(1.0 - t)? })
    }

    /// `p^I_t`, normalized.
    pub fn interpolant_marginal(&self, t: f64) -> Result<MarginalDist> {
        Ok(MarginalDist::new(t, self.field(t)?.marginals()))
    }

    /// `u^M_t(x, op(x))`.
    pub fn markov_score(&self, t: f64, x: usize, op: usize) -> Result<f64> {
        check_score_time(t)?;
        if x >= self.n_states() || op >= self.dynamics.n_ops() {
            return invalid(format!("state {x} / operator {op} out of range"));
        }
        self.field(t)?.score_op(x, op)
    }

    pub fn score_table(&self, t: f64) -> Result<ScoreTable> {
        check_score_time(t)?;
        Ok(self.field(t)?.table())
    }

    fn generator_from_field(&self, field: &ScoreField) -> ProjectedGenerator {
        let lambda = self.dynamics.rate();
        let table = field.table();
        let mut undefined = Vec::new();
        let rates = (0..field.s)
            .flat_map(|x| {
                let supported = table.in_support(x);
                if !supported {
                    undefined.push(x);
                }
                table.row(x).iter().map(move |&u| if supported { lambda * u } else { 0.0 }).collect::<Vec<_>>()
            })
            .collect();
        let mut g = ProjectedGenerator::from_rates(field.t, self.dynamics.shared_neighbors(), rates);
        g.undefined = undefined;
        g
    }

    /// `q^M_t(x, y) = q(x, y) u^M_t(x, y)`.
    pub fn projected_generator(&self, t: f64) -> Result<ProjectedGenerator> {
        check_score_time(t)?;
        Ok(self.generator_from_field(&*self.field(t)?))
    }

    /// Forward evolution under `q^M`, bypassing the cache.
    pub fn evolve_projected(&self, p0: &MarginalDist, t1: f64) -> Result<MarginalDist> {
        forward_evolve(p0, t1, |t| Ok(self.generator_from_field(&self.compute_field(t)?)))
    }

    /// `|d/dt u^M_t(x, op(x)) - lambda sum_op2 A^M_t(x; op, op2)|`.
    pub fn score_ode_residual(&self, t: f64, x: usize, op: usize) -> Result<f64> {
        if !(0.05..=1.0 - ETA_MIN).contains(&t) {
            return Err(Error::Domain(format!("score ODE residual time {t} outside [0.05, {}]", 1.0 - ETA_MIN)));
        }
        let fwd = self.compute_field(t + FD_STEP)?.score_op(x, op)?;
        let bwd = self.compute_field(t - FD_STEP)?.score_op(x, op)?;
        let field = self.compute_field(t)?;
        let mut drift = 0.0;
        for op2 in 0..self.dynamics.n_ops() {
            drift += field.ode_operator(x, op, op2)?;
        }
        Ok(((fwd - bwd) / (2.0 * FD_STEP) - self.dynamics.rate() * drift).abs())
    }

    /// Residuals of the score and entropy evolution identities over `[s, t]`
    /// in unconditional (expected) form, with 21-node composite Simpson
    /// quadrature for the time integrals.
    pub fn evolution_residuals(&self, s: f64, t: f64, op: usize) -> Result<(f64, f64)> {
        if !(0.0 <= s && s <= t && t <= 1.0 - ETA_MIN) {
            return invalid(format!("need 0 <= s <= t <= {}, got s = {s}, t = {t}", 1.0 - ETA_MIN));
        }
        if s == t {
            return Ok((0.0, 0.0));
        }
        const NODES: usize = 21;
        let lambda = self.dynamics.rate();
        let n_ops = self.dynamics.n_ops();
        let h = (t - s) / (NODES - 1) as f64;
        let mut int_b = 0.0;
        let mut int_c = 0.0;
        let mut ends = [(0.0, 0.0); 2];
        for i in 0..NODES {
            let r = s + i as f64 * h;
            let field = self.compute_field(r)?;
            let (mut eb, mut ec, mut eu, mut ephi) = (0.0, 0.0, 0.0, 0.0);
            for x in 0..field.s {
                let px = field.marginal(x);
                let u = field.score_op(x, op)?;
                eu += px * u;
                ephi += px * phi(u);
                for op2 in 0..n_ops {
                    eb += px * field.drift_operator(x, op, op2)?;
                    ec += px * field.entropy_operator(x, op, op2)?;
                }
            }
            let weight = if i == 0 || i == NODES - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            int_b += weight * eb;
            int_c += weight * ec;
            if i == 0 {
                ends[0] = (eu, ephi);
            }
            if i == NODES - 1 {
                ends[1] = (eu, ephi);
            }
        }
        int_b *= h / 3.0;
        int_c *= h / 3.0;
        let res_u = (ends[1].0 - ends[0].0 - lambda * int_b).abs();
        let res_phi = (ends[1].1 - ends[0].1 - lambda * int_c).abs();
        Ok((res_u, res_phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DynamicsKind;
    use crate::lattice::LatticeSpec;

    fn engine(kind: DynamicsKind, m: usize, d: usize, coupling: Coupling) -> ExactEngine {
        ExactEngine::new(Dynamics::new(kind, LatticeSpec::new(m, d).unwrap()), &coupling).unwrap()
    }

    fn skewed(spec: &LatticeSpec) -> Coupling {
        let s = spec.size();
        let mu0: Vec<f64> = (0..s).map(|i| 1.0 + i as f64).collect();
        let mu1: Vec<f64> = (0..s).map(|i| 1.0 + ((i * 5) % s) as f64 * 0.7).collect();
        let z0: f64 = mu0.iter().sum();
        let z1: f64 = mu1.iter().sum();
        Coupling::independent(
            spec.clone(),
            &mu0.iter().map(|v| v / z0).collect::<Vec<_>>(),
            &mu1.iter().map(|v| v / z1).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(1.0), 0.0);
        assert_eq!(phi(0.0), 1.0);
        assert!(phi(0.5) > 0.0 && phi(3.0) > 0.0);
    }

    #[test]
    fn marginal_endpoints() {
        for kind in [DynamicsKind::Nnrw, DynamicsKind::Urw] {
            let spec = LatticeSpec::new(3, 2).unwrap();
            let c = skewed(&spec);
            let e = engine(kind, 3, 2, c.clone());
            let p0 = e.interpolant_marginal(0.0).unwrap();
            let p1 = e.interpolant_marginal(1.0).unwrap();
            for x in 0..9 {
                assert!((p0.probs[x] - c.mu0()[x]).abs() < 1e-10);
                assert!((p1.probs[x] - c.mu1()[x]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn score_time_domain() {
        let spec = LatticeSpec::new(3, 1).unwrap();
        let e = engine(DynamicsKind::Urw, 3, 1, skewed(&spec));
        assert!(matches!(e.markov_score(0.9995, 0, 0), Err(Error::Domain(_))));
        assert!(e.markov_score(0.999, 0, 0).is_ok());
        let dy = e.dynamics().clone();
        let x = spec.state(0).unwrap();
        let op = JumpOp::Uniform { axis: 0, shift: 1 };
        assert!(bridge_score(&dy, 0.9999, &x, &x, &op).is_err());
        let wrong = JumpOp::Nearest { axis: 0, forward: true };
        assert!(bridge_score(&dy, 0.5, &x, &x, &wrong).is_err());
    }

    #[test]
    fn zero_support_states_are_undefined() {
        let spec = LatticeSpec::new(3, 1).unwrap();
        let e = engine(DynamicsKind::Nnrw, 3, 1, Coupling::point(spec, 0, 2).unwrap());
        assert!(matches!(e.markov_score(0.0, 1, 0), Err(Error::UndefinedScore { state: 1, .. })));
        assert!(e.markov_score(0.0, 0, 0).is_ok());
        let g = e.projected_generator(0.0).unwrap();
        assert_eq!(g.undefined_states(), &[1, 2]);
        assert!(e.markov_score(0.2, 1, 0).is_ok());
    }

    #[test]
    fn urw_bridge_score_examples() {
        let spec = LatticeSpec::new(4, 2).unwrap();
        let dy = Dynamics::new(DynamicsKind::Urw, spec.clone());
        let t = 0.37;
        let alpha = crate::bounds::urw_alpha(4, 1.0 - t);
        let x = spec.state_from_coords(&[0, 1]).unwrap();
        let op = JumpOp::Uniform { axis: 0, shift: 2 };
        // x1 differs from both x and op(x) on axis 0
        let x1 = spec.state_from_coords(&[3, 1]).unwrap();
        assert!((bridge_score(&dy, t, &x1, &x, &op).unwrap() - 1.0).abs() < 1e-14);
        // x1 agrees with op(x) on axis 0
        let x1 = spec.state_from_coords(&[2, 0]).unwrap();
        assert!((bridge_score(&dy, t, &x1, &x, &op).unwrap() - 1.0 / alpha).abs() < 1e-12);
    }

    #[test]
    fn point_target_collapses_to_bridge_score() {
        for kind in [DynamicsKind::Nnrw, DynamicsKind::Urw] {
            let spec = LatticeSpec::new(3, 2).unwrap();
            let s = spec.size();
            let mut mu1 = vec![0.0; s];
            mu1[5] = 1.0;
            let mu0 = vec![1.0 / s as f64; s];
            let e = engine(kind, 3, 2, Coupling::independent(spec.clone(), &mu0, &mu1).unwrap());
            let dy = e.dynamics().clone();
            let x1 = spec.state(5).unwrap();
            for x in 0..s {
                for (o, op) in dy.neighbors().ops().iter().enumerate() {
                    let ub = bridge_score(&dy, 0.4, &x1, &spec.state(x).unwrap(), op).unwrap();
                    let um = e.markov_score(0.4, x, o).unwrap();
                    assert!((ub - um).abs() <= 1e-12 * ub.max(1.0));
                }
            }
        }
    }

    #[test]
    fn projected_generator_rows_and_sparsity() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let e = engine(DynamicsKind::Nnrw, 3, 2, skewed(&spec));
        let g = e.projected_generator(0.6).unwrap();
        let q = g.dense();
        for x in 0..9 {
            let row: f64 = q[x * 9..(x + 1) * 9].iter().sum();
            assert!(row.abs() <= 1e-12);
            for y in 0..9 {
                if x != y && e.dynamics().generator_rate(x, y) == 0.0 {
                    assert_eq!(q[x * 9 + y], 0.0);
                    assert_eq!(g.rate(x, y), 0.0);
                } else if x != y {
                    assert!(q[x * 9 + y] > 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_generator_leaves_law_unchanged() {
        let spec = LatticeSpec::new(3, 1).unwrap();
        let dy = Dynamics::new(DynamicsKind::Urw, spec);
        let p0 = MarginalDist::new(0.0, vec![0.2, 0.5, 0.3]);
        let out = forward_evolve(&p0, 0.5, |t| Ok(ProjectedGenerator::from_rates(t, dy.shared_neighbors(), vec![0.0; 6])))
            .unwrap();
        assert_eq!(out.probs, p0.probs);
    }

    #[test]
    fn cache_returns_same_field() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let e = engine(DynamicsKind::Urw, 2, 2, skewed(&spec));
        let a = e.field(0.3).unwrap();
        let b = e.field(0.3 + 1e-14).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn evolution_residual_of_empty_interval() {
        let spec = LatticeSpec::new(2, 1).unwrap();
        let e = engine(DynamicsKind::Urw, 2, 1, skewed(&spec));
        assert_eq!(e.evolution_residuals(0.3, 0.3, 0).unwrap(), (0.0, 0.0));
        assert!(e.evolution_residuals(0.5, 0.3, 0).is_err());
    }
}
