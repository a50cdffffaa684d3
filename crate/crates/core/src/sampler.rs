//! Geometric time grid, frozen-score jump simulation and the exact law of
//! the simulated process.
//!
//! Within `[t_k, t_{k+1})` the rate of applying operator `op` is
//! `lambda * u(t_k, X_{t_k}, op)`: scores are attached to operators, read at
//! the state occupied at `t_k`, and not refreshed after a jump.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coupling::MAX_EXACT_STATES;
use crate::engine::{ExactEngine, ETA_MIN};
use crate::error::{invalid, Error, Result};
use crate::kernels::Dynamics;
use crate::lattice::JumpOp;
use crate::metrics::MarginalDist;
use crate::ode::{integrate_homogeneous, renormalize};

/// Grid `t_k = 1 - (1+h)^{-k}`, clipped to end at `1 - eta`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    eta: f64,
    points: Vec<f64>,
}

pub fn build_grid(h: f64, eta: f64) -> Result<TimeGrid> {
    TimeGrid::new(h, eta)
}

impl TimeGrid {
    pub fn new(h: f64, eta: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return invalid(format!("step parameter h = {h} outside (0, 1]"));
        }
        if !(ETA_MIN..=0.5).contains(&eta) {
            return invalid(format!("early stopping eta = {eta} outside [{ETA_MIN}, 0.5]"));
        }
        // smallest k with (1+h)^{-k} <= eta; the relative slack keeps grids
        // that land exactly on 1 - eta from growing a spurious final step
        let mut points = vec![0.0];
        let mut k = 0i32;
        loop {
            k += 1;
            let rest = (1.0 + h).powi(-k);
            if rest <= eta * (1.0 + 1e-12) {
                points.push(1.0 - eta);
                break;
            }
            points.push(1.0 - rest);
        }
        Ok(Self { h, eta, points })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of intervals `K`.
    pub fn k(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Length of interval `k`, `t_{k+1} - t_k`.
    pub fn step(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }
}

/// Scores queried by the sampler: all operator scores at grid point `k`
/// (time `t_k`) and state `x`.
pub trait ScoreModel: Sync {
    fn scores(&self, k: usize, x: usize) -> Result<&[f64]>;
}

/// Precomputed per-grid-point score tables, row-major `S x n_ops`.
#[derive(Clone, Debug)]
pub struct GridScore {
    n_ops: usize,
    tables: Vec<Vec<f64>>,
}

impl GridScore {
    pub fn from_tables(n_ops: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        if n_ops == 0 || tables.iter().any(|t| t.len() % n_ops != 0) {
            return invalid("score tables do not match the operator count");
        }
        Ok(Self { n_ops, tables })
    }

    /// Exact projected scores at `t_0, ..., t_{K-1}`.
    pub fn exact(engine: &ExactEngine, grid: &TimeGrid) -> Result<Self> {
        let tables = grid.points()[..grid.k()]
            .iter()
            .map(|&t| Ok(engine.score_table(t)?.values().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(engine.dynamics().n_ops(), tables)
    }

    /// Exact scores times `exp(gamma * g)`, with standard normal `g` drawn
    /// once per `(k, x, op)` from `seed`. The noise does not depend on
    /// `gamma`, so a family of `gamma` values perturbs along one direction.
    pub fn perturbed(engine: &ExactEngine, grid: &TimeGrid, gamma: f64, seed: u64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return invalid(format!("perturbation scale {gamma} must be finite and nonnegative"));
        }
        let mut model = Self::exact(engine, grid)?;
        for (k, table) in model.tables.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            for v in table.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v *= (gamma * g).exp();
            }
        }
        Ok(model)
    }

    pub fn n_ops(&self) -> usize {
        self.n_ops
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    pub fn into_tables(self) -> Vec<Vec<f64>> {
        self.tables
    }
}

impl ScoreModel for GridScore {
    fn scores(&self, k: usize, x: usize) -> Result<&[f64]> {
        let table = self
            .tables
            .get(k)
            .ok_or_else(|| Error::InvalidInput(format!("grid index {k} beyond score model")))?;
        table
            .get(x * self.n_ops..(x + 1) * self.n_ops)
            .ok_or_else(|| Error::InvalidInput(format!("state {x} beyond score model")))
    }
}

/// Model with zero scores everywhere: the process never moves.
#[derive(Clone, Debug)]
pub struct ZeroScore {
    zeros: Vec<f64>,
}

impl ZeroScore {
    pub fn new(n_ops: usize) -> Self {
        Self { zeros: vec![0.0; n_ops] }
    }
}

impl ScoreModel for ZeroScore {
    fn scores(&self, _k: usize, _x: usize) -> Result<&[f64]> {
        Ok(&self.zeros)
    }
}

/// Constant scores that record every `(k, x)` query.
#[derive(Debug)]
pub struct ProbeScore {
    values: Vec<f64>,
    queries: Mutex<Vec<(usize, usize)>>,
}

impl ProbeScore {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, queries: Mutex::new(Vec::new()) }
    }

    pub fn queries(&self) -> Vec<(usize, usize)> {
        self.queries.lock().expect("probe poisoned").clone()
    }
}

impl ScoreModel for ProbeScore {
    fn scores(&self, k: usize, x: usize) -> Result<&[f64]> {
        self.queries.lock().expect("probe poisoned").push((k, x));
        Ok(&self.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub from: usize,
    pub op: JumpOp,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub path_id: u64,
    pub seed: u64,
    pub initial: usize,
    pub events: Vec<JumpEvent>,
    pub final_state: usize,
}

/// Random stream of path `path_id` under master `seed`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Inverse-CDF draw of a state index from `probs` with uniform `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulates one path from `init`; `events` are recorded only when asked.
pub fn simulate_path<M: ScoreModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    init: usize,
    rng: &mut ChaCha8Rng,
    record_events: bool,
) -> Result<(usize, Vec<JumpEvent>)> {
    let lambda = dynamics.rate();
    let neighbors = dynamics.neighbors();
    let mut x = init;
    let mut events = Vec::new();
    for k in 0..grid.k() {
        let (start, end) = (grid.points()[k], grid.points()[k + 1]);
        let frozen = model.scores(k, x)?;
        let sum: f64 = frozen.iter().sum();
        let total_rate = lambda * sum;
        if total_rate <= 0.0 {
            continue;
        }
        let mut t = start;
        loop {
            let u: f64 = rng.random();
            t += -(-u).ln_1p() / total_rate;
            if t >= end {
                break;
            }
            let op = sample_index(frozen, rng.random());
            let y = neighbors.target(x, op);
            if record_events {
                events.push(JumpEvent { time: t, from: x, op: neighbors.ops()[op], to: y });
            }
            x = y;
        }
    }
    Ok((x, events))
}

/// Runs `n_paths` independent paths with initial states drawn from `mu0`.
/// Path `i` uses stream `i` of `seed`, so results do not depend on the
/// number of worker threads.
pub fn run_paths<M: ScoreModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    mu0: &[f64],
    seed: u64,
    n_paths: u64,
    record_events: bool,
) -> Result<Vec<PathSample>> {
    if mu0.len() != dynamics.spec().size() {
        return invalid("initial law does not match the lattice");
    }
    (0..n_paths)
        .into_par_iter()
        .map(|path_id| {
            let mut rng = path_rng(seed, path_id);
            let initial = sample_index(mu0, rng.random());
            let (final_state, events) = simulate_path(model, grid, dynamics, initial, &mut rng, record_events)?;
            Ok(PathSample { path_id, seed, initial, events, final_state })
        })
        .collect()
}

/// Exact law of the simulated process at `1 - eta`.
///
/// For each interval and each start state `x` carrying mass, the interval
/// kernel is obtained by integrating the homogeneous generator whose rate of
/// applying `op` is `lambda * u(t_k, x, op)` at every state.
pub fn algorithm_law<M: ScoreModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    dynamics: &Dynamics,
    mu0: &MarginalDist,
) -> Result<MarginalDist> {
    let s = dynamics.spec().size();
    if s > MAX_EXACT_STATES {
        return Err(Error::Capacity { states: s, limit: MAX_EXACT_STATES });
    }
    if mu0.len() != s {
        return invalid("initial law does not match the lattice");
    }
    let lambda = dynamics.rate();
    let neighbors = dynamics.neighbors();
    let mut p = mu0.probs.clone();
    let mut next = vec![0.0; s];
    let mut local = vec![0.0; s];
    for k in 0..grid.k() {
        let dt = grid.step(k);
        next.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..s {
            if p[x] == 0.0 {
                continue;
            }
            let rates: Vec<f64> = model.scores(k, x)?.iter().map(|u| lambda * u).collect();
            let total: f64 = rates.iter().sum();
            local.iter_mut().for_each(|v| *v = 0.0);
            local[x] = 1.0;
            if total > 0.0 {
                let steps = ((total * dt / 0.002).ceil() as usize).max(4);
                integrate_homogeneous(
                    |v, out| {
                        for (z, o) in out.iter_mut().enumerate() {
                            *o = -total * v[z];
                        }
                        for (z, &vz) in v.iter().enumerate() {
                            if vz != 0.0 {
                                for (op, &r) in rates.iter().enumerate() {
                                    out[neighbors.target(z, op)] += vz * r;
                                }
                            }
                        }
                    },
                    dt,
                    steps,
                    &mut local,
                );
            }
            for (n, l) in next.iter_mut().zip(&local) {
                *n += p[x] * l;
            }
        }
        std::mem::swap(&mut p, &mut next);
        renormalize(&mut p);
    }
    Ok(MarginalDist::new(grid.points()[grid.k()], p))
}
