//! Score-entropy and L2 training losses with exact expectations, the
//! tractable surrogate, analytic gradients and a tabular trainer.
//!
//! All losses are written in rate space: the model rate of operator `op` is
//! `lambda * theta` and the target rate is `lambda * u`.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::engine::{phi, ExactEngine};
use crate::error::{invalid, Error, Result};
use crate::kernels::Dynamics;
use crate::sampler::{build_grid, path_rng, sample_index, GridScore, ScoreModel, TimeGrid};

/// Positive score table on a grid, one row-major `S x n_ops` table per
/// grid point `t_0, ..., t_{K-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularScore {
    grid: TimeGrid,
    n_states: usize,
    n_ops: usize,
    theta: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    h: f64,
    eta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularFile {
    grid: GridHeader,
    theta: Vec<(usize, usize, usize, f64)>,
}

impl TabularScore {
    pub fn new(grid: TimeGrid, n_states: usize, n_ops: usize, theta: Vec<Vec<f64>>) -> Result<Self> {
        if theta.len() != grid.k() || theta.iter().any(|t| t.len() != n_states * n_ops) {
            return invalid("score table shape does not match grid and lattice");
        }
        for (k, table) in theta.iter().enumerate() {
            if let Some(i) = table.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid(format!(
                    "score entry (k={k}, state={}, op={}) = {} is not a positive finite number",
                    i / n_ops,
                    i % n_ops,
                    table[i]
                ));
            }
        }
        Ok(Self { grid, n_states, n_ops, theta })
    }

    pub fn from_grid_score(grid: TimeGrid, n_states: usize, model: GridScore) -> Result<Self> {
        let n_ops = model.n_ops();
        Self::new(grid, n_states, n_ops, model.into_tables())
    }

    pub fn exact(engine: &ExactEngine, grid: &TimeGrid) -> Result<Self> {
        Self::from_grid_score(grid.clone(), engine.n_states(), GridScore::exact(engine, grid)?)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_ops(&self) -> usize {
        self.n_ops
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn get(&self, k: usize, x: usize, op: usize) -> f64 {
        self.theta[k][x * self.n_ops + op]
    }

    pub fn set(&mut self, k: usize, x: usize, op: usize, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return invalid(format!("score entry (k={k}, state={x}, op={op}) must be positive, got {value}"));
        }
        self.theta[k][x * self.n_ops + op] = value;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let theta = self
            .theta
            .iter()
            .enumerate()
            .flat_map(|(k, table)| {
                table.iter().enumerate().map(move |(i, &v)| (k, i / self.n_ops, i % self.n_ops, v))
            })
            .collect();
        let file = TabularFile { grid: GridHeader { h: self.grid.h(), eta: self.grid.eta() }, theta };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses a table written by [`to_json`](Self::to_json); every
    /// `(k, state, op)` entry must appear exactly once.
    pub fn from_json(json: &str, dynamics: &Dynamics) -> Result<Self> {
        let file: TabularFile = serde_json::from_str(json)?;
        let grid = build_grid(file.grid.h, file.grid.eta)?;
        let (s, n_ops) = (dynamics.spec().size(), dynamics.n_ops());
        let mut theta = vec![vec![f64::NAN; s * n_ops]; grid.k()];
        for (i, &(k, x, op, v)) in file.theta.iter().enumerate() {
            if k >= grid.k() || x >= s || op >= n_ops {
                return invalid(format!("theta[{i}] = ({k}, {x}, {op}) outside the grid or lattice"));
            }
            let slot = &mut theta[k][x * n_ops + op];
            if !slot.is_nan() {
                return invalid(format!("theta[{i}] repeats entry ({k}, {x}, {op})"));
            }
            *slot = v;
        }
        if file.theta.len() != grid.k() * s * n_ops {
            return invalid(format!("score table has {} entries, expected {}", file.theta.len(), grid.k() * s * n_ops));
        }
        Self::new(grid, s, n_ops, theta)
    }

    pub fn load(path: impl AsRef<Path>, dynamics: &Dynamics) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, dynamics)
    }
}

impl ScoreModel for TabularScore {
    fn scores(&self, k: usize, x: usize) -> Result<&[f64]> {
        self.theta
            .get(k)
            .and_then(|t| t.get(x * self.n_ops..(x + 1) * self.n_ops))
            .ok_or_else(|| Error::InvalidInput(format!("(k={k}, state={x}) beyond score table")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntervalLoss {
    pub l_entropy: f64,
    pub l_two: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub l_entropy: f64,
    pub l_two: f64,
    pub l_total: f64,
    pub l_tractable: Option<f64>,
    pub per_interval: Vec<IntervalLoss>,
}

/// Exact marginals and projected scores on a grid, shared by all loss
/// evaluations for one (dynamics, coupling, grid).
pub struct LossProblem<'a> {
    engine: &'a ExactEngine,
    grid: TimeGrid,
    lambda: f64,
    n_ops: usize,
    /// `h_{k+1} p_{t_k}(x)`, zero off the support.
    weights: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
}

impl<'a> LossProblem<'a> {
    pub fn new(engine: &'a ExactEngine, grid: &TimeGrid) -> Result<Self> {
        let s = engine.n_states();
        let per_k = (0..grid.k())
            .into_par_iter()
            .map(|k| {
                let field = engine.compute_field(grid.points()[k])?;
                let w = (0..s).map(|x| grid.step(k) * field.marginal(x)).collect::<Vec<_>>();
                Ok((w, field.table().values().to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (weights, scores) = per_k.into_iter().unzip();
        Ok(Self {
            engine,
            grid: grid.clone(),
            lambda: engine.dynamics().rate(),
            n_ops: engine.dynamics().n_ops(),
            weights,
            scores,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Exact projected score `u(t_k, x, op)`.
    pub fn score(&self, k: usize, x: usize, op: usize) -> f64 {
        self.scores[k][x * self.n_ops + op]
    }

    /// `h_{k+1} p_{t_k}(x)`.
    pub fn weight(&self, k: usize, x: usize) -> f64 {
        self.weights[k][x]
    }

    fn check(&self, theta: &TabularScore) -> Result<()> {
        if theta.grid.points() != self.grid.points()
            || theta.n_ops != self.n_ops
            || theta.n_states != self.engine.n_states()
        {
            return invalid("score table does not match the loss grid or lattice");
        }
        Ok(())
    }

    fn interval(&self, theta: &TabularScore, k: usize) -> IntervalLoss {
        let lambda = self.lambda;
        let mut out = IntervalLoss::default();
        for (x, &w) in self.weights[k].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (mut le, mut l2) = (0.0, 0.0);
            for op in 0..self.n_ops {
                let th = theta.get(k, x, op);
                let u = self.score(k, x, op);
                le += lambda * th * phi(u / th);
                l2 += (lambda * (th - u)).powi(2);
            }
            out.l_entropy += w * le;
            out.l_two += w * l2;
        }
        out
    }

    /// Both losses with their per-interval breakdown.
    pub fn report(&self, theta: &TabularScore) -> Result<LossReport> {
        self.check(theta)?;
        let per_interval: Vec<IntervalLoss> = (0..self.grid.k()).into_par_iter().map(|k| self.interval(theta, k)).collect();
        let l_entropy = per_interval.iter().map(|i| i.l_entropy).sum::<f64>();
        let l_two = per_interval.iter().map(|i| i.l_two).sum::<f64>();
        Ok(LossReport { l_entropy, l_two, l_total: l_entropy + l_two, l_tractable: None, per_interval })
    }

    pub fn loss_entropy(&self, theta: &TabularScore) -> Result<f64> {
        Ok(self.report(theta)?.l_entropy)
    }

    pub fn loss_l2(&self, theta: &TabularScore) -> Result<f64> {
        Ok(self.report(theta)?.l_two)
    }

    pub fn loss_total(&self, theta: &TabularScore) -> Result<f64> {
        Ok(self.report(theta)?.l_total)
    }

    /// Tractable surrogate: the same objective with the projected rate
    /// replaced by the bridge rate of `X_1`, averaged under the exact joint
    /// law of `(X_t, X_1)`.
    pub fn loss_tractable(&self, theta: &TabularScore) -> Result<f64> {
        self.check(theta)?;
        let s = self.engine.n_states();
        let lambda = self.lambda;
        let neighbors = self.engine.dynamics().neighbors();
        let per_k = (0..self.grid.k())
            .into_par_iter()
            .map(|k| {
                let post = self.engine.posterior(self.grid.points()[k])?;
                let total: f64 = (0..s).flat_map(|x| (0..s).map(move |x1| (x, x1))).map(|(x, x1)| post.joint(x, x1)).sum();
                let mut acc = 0.0;
                for x in 0..s {
                    for x1 in 0..s {
                        let j = post.joint(x, x1);
                        if j == 0.0 {
                            continue;
                        }
                        let mut inner = 0.0;
                        for op in 0..self.n_ops {
                            let q_theta = lambda * theta.get(k, x, op);
                            let q_bridge = lambda * post.bridge_score(x1, x, neighbors.target(x, op));
                            inner += -q_bridge * q_theta.ln() + q_theta + (q_theta - q_bridge).powi(2);
                        }
                        acc += j / total * inner;
                    }
                }
                Ok(self.grid.step(k) * acc)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(per_k.iter().sum())
    }

    /// Gradient of `L_e + L_2` with respect to `log theta`.
    pub fn gradient(&self, theta: &TabularScore) -> Result<Vec<Vec<f64>>> {
        self.check(theta)?;
        let lambda = self.lambda;
        let grads: Vec<Vec<f64>> = (0..self.grid.k())
            .into_par_iter()
            .map(|k| {
                let mut g = vec![0.0; self.weights[k].len() * self.n_ops];
                for (x, &w) in self.weights[k].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for op in 0..self.n_ops {
                        let th = theta.get(k, x, op);
                        let diff = th - self.score(k, x, op);
                        g[x * self.n_ops + op] = w * (lambda * diff + 2.0 * lambda * lambda * diff * th);
                    }
                }
                g
            })
            .collect();
        for (k, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { k, state: i / self.n_ops, op: i % self.n_ops });
            }
        }
        Ok(grads)
    }

    /// `sqrt(L_e + L_2)`.
    pub fn epsilon_tilde(&self, theta: &TabularScore) -> Result<f64> {
        Ok(self.loss_total(theta)?.sqrt())
    }
}

/// Metric used by [`train_tabular`] to scale the log-rate gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    /// Plain gradient descent.
    Identity,
    /// Divide each coordinate by `w theta (lambda + 2 lambda^2 theta)`, the
    /// positive part of its own curvature, with `w` its quadrature weight.
    /// Interval lengths and marginals span orders of magnitude, which plain
    /// descent cannot absorb in a few hundred steps.
    #[default]
    Diagonal,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub lr: f64,
    pub steps: usize,
    pub preconditioner: Preconditioner,
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lr: 0.5, steps: 500, preconditioner: Preconditioner::Diagonal, grad_tol: 1e-9 }
    }
}

pub struct TrainOutcome {
    pub theta: TabularScore,
    /// Report of the initial table followed by one per accepted step.
    pub history: Vec<LossReport>,
}

/// Full-batch descent on `L_e + L_2` in log-rate coordinates. A step that
/// increases the loss is retried with half the rate, at most 30 times;
/// training stops early when the gradient norm drops to `grad_tol` or no
/// decreasing step is found.
pub fn train_tabular(problem: &LossProblem<'_>, init: TabularScore, options: TrainOptions) -> Result<TrainOutcome> {
    if !(options.lr > 0.0 && options.lr.is_finite()) {
        return invalid(format!("learning rate {} must be positive", options.lr));
    }
    if options.steps == 0 {
        return invalid("training needs at least one step");
    }
    let lambda = problem.lambda;
    let mut theta = init;
    let mut report = problem.report(&theta)?;
    let mut history = vec![report.clone()];
    for _ in 0..options.steps {
        let grad = problem.gradient(&theta)?;
        let norm = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm <= options.grad_tol {
            break;
        }
        let direction: Vec<Vec<f64>> = match options.preconditioner {
            Preconditioner::Identity => grad,
            Preconditioner::Diagonal => grad
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| {
                            let w = problem.weights[k][i / problem.n_ops];
                            let th = theta.theta[k][i];
                            if w == 0.0 {
                                0.0
                            } else {
                                gi / (w * th * (lambda + 2.0 * lambda * lambda * th))
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        let mut lr = options.lr;
        let mut accepted = None;
        for _ in 0..=30 {
            let mut candidate = theta.clone();
            for (table, dir) in candidate.theta.iter_mut().zip(&direction) {
                for (v, d) in table.iter_mut().zip(dir) {
                    *v *= (-lr * d).exp();
                }
            }
            if candidate.theta.iter().flatten().all(|v| v.is_finite() && *v > 0.0) {
                let r = problem.report(&candidate)?;
                if r.l_total < report.l_total {
                    accepted = Some((candidate, r));
                    break;
                }
            }
            lr *= 0.5;
        }
        match accepted {
            Some((t, r)) => {
                theta = t;
                report = r;
                history.push(report.clone());
            }
            None => break,
        }
    }
    Ok(TrainOutcome { theta, history })
}

/// Monte Carlo estimate of the tractable loss: per grid point, `samples`
/// draws of `(X_0, X_1)` from the coupling and `X_t` from the normalized
/// pointwise bridge density.
pub fn tractable_loss_mc(
    engine: &ExactEngine,
    coupling: &Coupling,
    theta: &TabularScore,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return invalid("Monte Carlo estimate needs at least one sample");
    }
    let dynamics = engine.dynamics();
    let s = engine.n_states();
    let lambda = dynamics.rate();
    let neighbors = dynamics.neighbors();
    let grid = theta.grid();
    let per_k = (0..grid.k())
        .into_par_iter()
        .map(|k| {
            let t = grid.points()[k];
            let fwd = dynamics.kernel(t)?;
            let rest = dynamics.kernel(1.0 - t)?;
            let mut rng = path_rng(seed, k as u64);
            let mut bridge = vec![0.0; s];
            let mut acc = 0.0;
            for _ in 0..samples {
                let pair = sample_index(coupling.weights(), rng.random());
                let (x0, x1) = (pair / s, pair % s);
                for (x, b) in bridge.iter_mut().enumerate() {
                    *b = fwd.prob(x0, x) * rest.prob(x, x1);
                }
                let x = sample_index(&bridge, rng.random());
                for op in 0..theta.n_ops() {
                    let q_theta = lambda * theta.get(k, x, op);
                    let q_bridge = lambda * rest.prob(neighbors.target(x, op), x1) / rest.prob(x, x1);
                    acc += -q_bridge * q_theta.ln() + q_theta + (q_theta - q_bridge).powi(2);
                }
            }
            Ok(grid.step(k) * acc / samples as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_k.iter().sum())
}
