use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use dfm_core::bounds::{early_stopping_tv_bound, score_bounds, score_sum_bound};
use dfm_core::engine::forward_evolve;
use dfm_core::kernels::kolmogorov_residual;
use dfm_core::losses::{tractable_loss_mc, LossProblem, TabularScore, TrainOptions};
use dfm_core::metrics::{kl, pinsker_holds, tv, MarginalDist};
use dfm_core::sampler::{algorithm_law, build_grid, run_paths, GridScore, ScoreModel};
use dfm_core::{train_tabular, Error, ExactEngine, JumpOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_init, Experiment, InitChoice, ScoreChoice};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(path: &Path, seed: u64) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    writeln!(file, "# seed={seed}")?;
    Ok(csv::Writer::from_writer(file))
}

#[derive(Serialize)]
pub struct Check {
    pub check: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { check: check.into(), value, bound, pass: value <= bound }
    }
}

#[derive(Serialize)]
pub struct Report {
    pub command: &'static str,
    pub dynamics: String,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    fn new(command: &'static str, exp: &Experiment, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            command,
            dynamics: exp.config.dynamics.to_string(),
            m: exp.config.m,
            d: exp.config.d,
            seed: exp.config.seed,
            checks,
            pass,
        }
    }

    fn emit(&self, out: &Path, name: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(out.join(name), &json)?;
        println!("{json}");
        Ok(())
    }
}

fn kernel_checks(exp: &Experiment, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let dy = &exp.dynamics;
    let s = dy.spec().size();
    let mut residual = 0.0f64;
    let mut row_sum = 0.0f64;
    let mut asymmetry = 0.0f64;
    for _ in 0..20 {
        let t = rng.random_range(1e-3..1.0 - 1e-3);
        let x = rng.random_range(0..s);
        residual = residual.max(kolmogorov_residual(dy, t, x)?);
        let kernel = dy.kernel(t)?;
        let row = kernel.row(x);
        row_sum = row_sum.max((row.iter().sum::<f64>() - 1.0).abs());
        for (y, &p) in row.iter().enumerate() {
            asymmetry = asymmetry.max((p - kernel.prob(y, x)).abs());
        }
    }
    let identity = dy.kernel(0.0)?;
    let identity_gap = (0..s)
        .flat_map(|x| (0..s).map(move |y| (x, y)))
        .map(|(x, y)| (identity.prob(x, y) - if x == y { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("kolmogorov_residual", residual, 1e-6),
        Check::at_most("kernel_row_sum_error", row_sum, 1e-12),
        Check::at_most("kernel_asymmetry", asymmetry, 1e-12),
        Check::at_most("kernel_identity_at_zero", identity_gap, 0.0),
    ])
}

pub fn kernels_check(exp: &Experiment, out: &Path) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.seed);
    let report = Report::new("kernels-check", exp, kernel_checks(exp, &mut rng)?);
    report.emit(out, "kernels_report.json")?;
    Ok(report.pass)
}

pub fn verify(exp: &Experiment, out: &Path) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.seed);
    let mut checks = kernel_checks(exp, &mut rng)?;
    let engine = ExactEngine::new(exp.dynamics.clone(), &exp.coupling)?;
    let (kind, m, d) = (exp.config.dynamics, exp.config.m, exp.config.d);
    let eta = exp.config.eta;
    let s = engine.n_states();
    let n_ops = engine.dynamics().n_ops();

    let mut p = MarginalDist::new(0.0, exp.coupling.mu0().to_vec());
    let mut marginal_gap = 0.0f64;
    for j in 1..=10 {
        let t = (1.0 - eta) * j as f64 / 10.0;
        p = forward_evolve(&p, t, |r| engine.projected_generator(r))?;
        let reference = engine.interpolant_marginal(t)?;
        marginal_gap = marginal_gap.max(p.probs.iter().zip(&reference.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    engine.clear_cache();
    checks.push(Check::at_most("projection_marginal_gap", marginal_gap, 1e-6));

    let mut violations = 0usize;
    let mut sum_violations = 0usize;
    for &t in &[0.0, 0.25, 0.5, 0.75, 1.0 - eta] {
        let (lo, hi) = score_bounds(kind, m, t);
        let sum_bound = score_sum_bound(kind, m, d, t);
        let table = engine.score_table(t)?;
        for x in (0..s).filter(|&x| table.in_support(x)) {
            let row = table.row(x);
            violations += row.iter().filter(|&&u| u < lo * (1.0 - 1e-12) || u > hi * (1.0 + 1e-12)).count();
            if row.iter().sum::<f64>() > sum_bound * (1.0 + 1e-12) {
                sum_violations += 1;
            }
        }
    }
    checks.push(Check::at_most("score_bound_violations", violations as f64, 0.0));
    checks.push(Check::at_most("score_sum_bound_violations", sum_violations as f64, 0.0));

    let mut ode = 0.0f64;
    for _ in 0..10 {
        let t = rng.random_range(0.05..(1.0 - eta).min(0.95));
        ode = ode.max(engine.score_ode_residual(t, rng.random_range(0..s), rng.random_range(0..n_ops))?);
    }
    checks.push(Check::at_most("score_ode_residual", ode, 1e-5));

    let (mut evo_u, mut evo_phi) = (0.0f64, 0.0f64);
    for &(a, b) in &[(0.1, 0.4), (0.2, 0.7)] {
        for op in 0..n_ops {
            let (ru, rphi) = engine.evolution_residuals(a, b, op)?;
            evo_u = evo_u.max(ru);
            evo_phi = evo_phi.max(rphi);
        }
    }
    checks.push(Check::at_most("score_evolution_residual", evo_u, 1e-6));
    checks.push(Check::at_most("entropy_evolution_residual", evo_phi, 1e-6));

    let early = engine.interpolant_marginal(1.0 - eta)?;
    let gap = tv(&early.probs, exp.coupling.mu1())?;
    checks.push(Check::at_most("early_stopping_tv", gap, early_stopping_tv_bound(kind, m, d, eta)));
    let pinsker = pinsker_holds(&early.probs, exp.coupling.mu1())? && pinsker_holds(exp.coupling.mu1(), &early.probs)?;
    checks.push(Check { check: "pinsker".into(), value: gap, bound: (kl(&early.probs, exp.coupling.mu1())? / 2.0).sqrt(), pass: pinsker });

    let problem = LossProblem::new(&engine, &exp.grid)?;
    let exact = TabularScore::exact(&engine, &exp.grid)?;
    checks.push(Check::at_most("loss_at_exact_score", problem.loss_total(&exact)?, 1e-12));

    let report = Report::new("verify", exp, checks);
    report.emit(out, "verify_report.json")?;
    Ok(report.pass)
}

fn score_model(exp: &Experiment, engine: &ExactEngine) -> Result<Box<dyn ScoreModel>> {
    Ok(match &exp.score {
        ScoreChoice::Exact => Box::new(GridScore::exact(engine, &exp.grid)?),
        ScoreChoice::Perturbed(gamma) => Box::new(GridScore::perturbed(engine, &exp.grid, *gamma, exp.config.seed)?),
        ScoreChoice::Tabular(path) => {
            let table = TabularScore::load(path, &exp.dynamics).with_context(|| format!("cannot load {}", path.display()))?;
            if table.grid().points() != exp.grid.points() {
                anyhow::bail!("score table grid (h={}, eta={}) differs from the configured grid", table.grid().h(), table.grid().eta());
            }
            Box::new(table)
        }
    })
}

pub fn sample(exp: &Experiment, out: &Path) -> Result<()> {
    let engine = ExactEngine::new(exp.dynamics.clone(), &exp.coupling)?;
    let model = score_model(exp, &engine)?;
    let seed = exp.config.seed;
    let paths = run_paths(model.as_ref(), &exp.grid, &exp.dynamics, exp.coupling.mu0(), seed, exp.config.paths, exp.config.events)?;
    let mut w = csv_writer(&out.join("final_states.csv"), seed)?;
    w.write_record(["path_id", "final_index"])?;
    for p in &paths {
        w.write_record([p.path_id.to_string(), p.final_state.to_string()])?;
    }
    w.flush()?;
    if exp.config.events {
        let mut w = csv_writer(&out.join("events.csv"), seed)?;
        w.write_record(["path_id", "time", "from_index", "jump_family", "jump_axis", "jump_param", "to_index"])?;
        for p in &paths {
            for e in &p.events {
                let family = match e.op {
                    JumpOp::Nearest { .. } => "nearest",
                    JumpOp::Uniform { .. } => "uniform",
                };
                w.write_record([
                    p.path_id.to_string(),
                    fmt_f64(e.time),
                    e.from.to_string(),
                    family.to_string(),
                    e.op.axis().to_string(),
                    e.op.param().to_string(),
                    e.to.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    eprintln!("wrote {} paths to {}", paths.len(), out.join("final_states.csv").display());
    Ok(())
}

struct SweepRow {
    h: f64,
    eta: f64,
    gamma: f64,
    result: std::result::Result<SweepValues, String>,
}

struct SweepValues {
    eps_tilde: f64,
    k: usize,
    kl: f64,
    tv_early: f64,
    tv_target: f64,
    pinsker: bool,
    runtime_ms: u128,
}

fn sweep_row(exp: &Experiment, engine: &ExactEngine, h: f64, eta: f64, gamma: f64) -> Result<SweepValues, Error> {
    let start = Instant::now();
    let grid = build_grid(h, eta)?;
    let model = GridScore::perturbed(engine, &grid, gamma, exp.config.seed)?;
    let law = algorithm_law(&model, &grid, &exp.dynamics, &MarginalDist::new(0.0, exp.coupling.mu0().to_vec()))?;
    let problem = LossProblem::new(engine, &grid)?;
    let table = TabularScore::from_grid_score(grid.clone(), engine.n_states(), model)?;
    let eps_tilde = problem.epsilon_tilde(&table)?;
    let early = engine.interpolant_marginal(1.0 - eta)?;
    let pinsker = pinsker_holds(&early.probs, &law.probs)? && pinsker_holds(&law.probs, exp.coupling.mu1())?;
    Ok(SweepValues {
        eps_tilde,
        k: grid.k(),
        kl: kl(&early.probs, &law.probs)?,
        tv_early: tv(&law.probs, &early.probs)?,
        tv_target: tv(&law.probs, exp.coupling.mu1())?,
        pinsker,
        runtime_ms: start.elapsed().as_millis(),
    })
}

/// Returns `false` when a Pinsker cross-check fails on some row.
pub fn sweep(exp: &Experiment, out: &Path) -> Result<bool> {
    let section = exp.config.sweep.clone().unwrap_or_default();
    let or = |v: Vec<f64>, default: f64| if v.is_empty() { vec![default] } else { v };
    let default_gamma = match exp.score {
        ScoreChoice::Perturbed(g) => g,
        _ => 0.0,
    };
    let hs = or(section.h, exp.config.h);
    let etas = or(section.eta, exp.config.eta);
    let gammas = or(section.gamma, default_gamma);
    let engine = ExactEngine::new(exp.dynamics.clone(), &exp.coupling)?;
    let mut tuples = Vec::new();
    for &h in &hs {
        for &eta in &etas {
            for &gamma in &gammas {
                tuples.push((h, eta, gamma));
            }
        }
    }
    let rows: Vec<SweepRow> = tuples
        .par_iter()
        .map(|&(h, eta, gamma)| {
            let result = match sweep_row(exp, &engine, h, eta, gamma) {
                Ok(v) => Ok(v),
                Err(e @ Error::Capacity { .. }) => Err(e.to_string()),
                Err(e) => return Err(anyhow::Error::new(e)),
            };
            Ok(SweepRow { h, eta, gamma, result })
        })
        .collect::<Result<_>>()?;
    let mut w = csv_writer(&out.join("sweep.csv"), exp.config.seed)?;
    w.write_record(["h", "eta", "gamma", "eps_tilde", "K", "kl", "tv_early", "tv_target", "runtime_ms"])?;
    let mut pinsker_ok = true;
    for row in &rows {
        let head = [fmt_f64(row.h), fmt_f64(row.eta), fmt_f64(row.gamma)];
        match &row.result {
            Ok(v) => {
                pinsker_ok &= v.pinsker;
                w.write_record(head.into_iter().chain([
                    fmt_f64(v.eps_tilde),
                    v.k.to_string(),
                    fmt_f64(v.kl),
                    fmt_f64(v.tv_early),
                    fmt_f64(v.tv_target),
                    v.runtime_ms.to_string(),
                ]))?;
            }
            Err(msg) => {
                eprintln!("row h={} eta={} gamma={} skipped: {msg}", row.h, row.eta, row.gamma);
                w.write_record(head.into_iter().chain(std::iter::repeat_n("skipped".to_string(), 6)))?;
            }
        }
    }
    w.flush()?;
    if !pinsker_ok {
        eprintln!("Pinsker cross-check failed on at least one sweep row");
    }
    Ok(pinsker_ok)
}

pub fn train(exp: &Experiment, out: &Path) -> Result<()> {
    let section = exp.train_section();
    let engine = ExactEngine::new(exp.dynamics.clone(), &exp.coupling)?;
    let problem = LossProblem::new(&engine, &exp.grid)?;
    let s = engine.n_states();
    let init = match parse_init(&section.init)? {
        InitChoice::Exact => TabularScore::exact(&engine, &exp.grid)?,
        InitChoice::Uniform => {
            let n_ops = exp.dynamics.n_ops();
            TabularScore::new(exp.grid.clone(), s, n_ops, vec![vec![1.0; s * n_ops]; exp.grid.k()])?
        }
        InitChoice::Perturbed(gamma) => {
            TabularScore::from_grid_score(exp.grid.clone(), s, GridScore::perturbed(&engine, &exp.grid, gamma, exp.config.seed)?)?
        }
    };
    let options = TrainOptions { lr: section.lr, steps: section.steps, ..TrainOptions::default() };
    let outcome = train_tabular(&problem, init, options)?;
    std::fs::write(out.join("trained_table.json"), outcome.theta.to_json()?)?;
    let mut w = csv_writer(&out.join("train_history.csv"), exp.config.seed)?;
    w.write_record(["step", "l_entropy", "l_two", "l_total"])?;
    for (step, r) in outcome.history.iter().enumerate() {
        w.write_record([step.to_string(), fmt_f64(r.l_entropy), fmt_f64(r.l_two), fmt_f64(r.l_total)])?;
    }
    w.flush()?;
    let last = outcome.history.last().expect("history holds the initial report");
    eprintln!("trained {} steps, final loss {}", outcome.history.len() - 1, fmt_f64(last.l_total));
    if let Some(samples) = section.mc_samples {
        let estimate = tractable_loss_mc(&engine, &exp.coupling, &outcome.theta, samples, exp.config.seed)?;
        let exact = problem.loss_tractable(&outcome.theta)?;
        println!("tractable_loss_exact={} tractable_loss_mc={} samples={samples}", fmt_f64(exact), fmt_f64(estimate));
    }
    Ok(())
}
