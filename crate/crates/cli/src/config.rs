//! Experiment configuration: one JSON object per experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dfm_core::sampler::build_grid;
use dfm_core::{Coupling, CouplingSpec, Dynamics, DynamicsKind, LatticeSpec, TimeGrid, ETA_MIN};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dynamics")]
    pub dynamics: DynamicsKind,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Independent uniform when absent.
    #[serde(default)]
    pub coupling: Option<CouplingSpec>,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: u64,
    #[serde(default = "default_score")]
    pub score: String,
    #[serde(default)]
    pub events: bool,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// `exact`, `uniform` or `perturbed:<gamma>`.
    #[serde(default = "default_init")]
    pub init: String,
    /// Also report a Monte Carlo estimate of the tractable loss.
    #[serde(default)]
    pub mc_samples: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { lr: default_lr(), steps: default_steps(), init: default_init(), mc_samples: None }
    }
}

fn default_dynamics() -> DynamicsKind {
    DynamicsKind::Urw
}
fn default_m() -> usize {
    3
}
fn default_d() -> usize {
    2
}
fn default_h() -> f64 {
    0.2
}
fn default_eta() -> f64 {
    0.05
}
fn default_paths() -> u64 {
    1000
}
fn default_score() -> String {
    "exact".into()
}
fn default_lr() -> f64 {
    0.5
}
fn default_steps() -> usize {
    500
}
fn default_init() -> String {
    "exact".into()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreChoice {
    Exact,
    Tabular(PathBuf),
    Perturbed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitChoice {
    Exact,
    Uniform,
    Perturbed(f64),
}

fn parse_gamma(text: &str, what: &str) -> Result<f64> {
    let gamma: f64 = text.parse().with_context(|| format!("{what}: cannot parse perturbation scale {text:?}"))?;
    if !gamma.is_finite() || gamma < 0.0 {
        bail!("{what}: perturbation scale must be finite and nonnegative, got {gamma}");
    }
    Ok(gamma)
}

/// A validated configuration with its lattice objects built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dynamics: Dynamics,
    pub coupling: Coupling,
    pub grid: TimeGrid,
    pub score: ScoreChoice,
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        if config.eta < ETA_MIN {
            bail!("eta = {} is below the minimum early-stopping time {ETA_MIN}", config.eta);
        }
        let spec = LatticeSpec::new(config.m, config.d)?;
        let coupling = match &config.coupling {
            Some(c) => c.build(spec.clone()).context("invalid coupling")?,
            None => {
                if spec.size() > dfm_core::MAX_EXACT_STATES {
                    bail!("{} states exceed the exact-computation limit {}", spec.size(), dfm_core::MAX_EXACT_STATES);
                }
                let u = vec![1.0 / spec.size() as f64; spec.size()];
                Coupling::independent(spec.clone(), &u, &u)?
            }
        };
        let grid = build_grid(config.h, config.eta)?;
        let score = match config.score.split_once(':') {
            None if config.score == "exact" => ScoreChoice::Exact,
            Some(("tabular", path)) => {
                let path = PathBuf::from(path);
                ScoreChoice::Tabular(if path.is_absolute() { path } else { base_dir.join(path) })
            }
            Some(("perturbed", gamma)) => ScoreChoice::Perturbed(parse_gamma(gamma, "score")?),
            _ => bail!("score must be exact, tabular:<path> or perturbed:<gamma>, got {:?}", config.score),
        };
        if let Some(sweep) = &config.sweep {
            for &eta in &sweep.eta {
                if eta < ETA_MIN {
                    bail!("sweep eta = {eta} is below the minimum early-stopping time {ETA_MIN}");
                }
            }
            for &h in &sweep.h {
                if !(h > 0.0 && h <= 1.0) {
                    bail!("sweep h = {h} outside (0, 1]");
                }
            }
            for &g in &sweep.gamma {
                if !g.is_finite() || g < 0.0 {
                    bail!("sweep gamma = {g} must be finite and nonnegative");
                }
            }
        }
        if let Some(train) = &config.train {
            if !(train.lr > 0.0 && train.lr.is_finite()) {
                bail!("train.lr = {} must be positive", train.lr);
            }
            if train.steps == 0 {
                bail!("train.steps must be at least 1");
            }
            parse_init(&train.init)?;
        }
        let dynamics = Dynamics::new(config.dynamics, spec);
        Ok(Self { config, dynamics, coupling, grid, score })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::from_config(serde_json::from_str("{}")?, Path::new(".")),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
                let config: ExperimentConfig =
                    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
                Self::from_config(config, path.parent().unwrap_or(Path::new(".")))
            }
        }
    }

    pub fn train_section(&self) -> TrainSection {
        self.config.train.clone().unwrap_or_default()
    }
}

pub fn parse_init(text: &str) -> Result<InitChoice> {
    match text.split_once(':') {
        None if text == "exact" => Ok(InitChoice::Exact),
        None if text == "uniform" => Ok(InitChoice::Uniform),
        Some(("perturbed", gamma)) => Ok(InitChoice::Perturbed(parse_gamma(gamma, "train.init")?)),
        _ => bail!("train.init must be exact, uniform or perturbed:<gamma>, got {text:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<Experiment> {
        Experiment::from_config(serde_json::from_str(json)?, Path::new("/tmp"))
    }

    #[test]
    fn defaults() {
        let e = parse("{}").unwrap();
        assert_eq!(e.config.dynamics, DynamicsKind::Urw);
        assert_eq!((e.config.m, e.config.d), (3, 2));
        assert!(e.coupling.mu0().iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(e.score, ScoreChoice::Exact);
    }

    #[test]
    fn score_choices() {
        assert_eq!(parse(r#"{"score":"perturbed:0.25"}"#).unwrap().score, ScoreChoice::Perturbed(0.25));
        assert_eq!(parse(r#"{"score":"tabular:t.json"}"#).unwrap().score, ScoreChoice::Tabular("/tmp/t.json".into()));
        assert!(parse(r#"{"score":"perturbed:-1"}"#).is_err());
        assert!(parse(r#"{"score":"neural"}"#).is_err());
    }

    #[test]
    fn rejections() {
        assert!(parse(r#"{"eta":1e-5}"#).is_err());
        assert!(parse(r#"{"m":100,"d":2}"#).is_err());
        assert!(parse(r#"{"bogus":1}"#).is_err());
        assert!(parse(r#"{"train":{"lr":0}}"#).is_err());
        assert!(parse(r#"{"train":{"init":"random"}}"#).is_err());
        assert!(parse(r#"{"sweep":{"eta":[0.0001]}}"#).is_err());
        let tampered = r#"{"m":2,"d":1,"coupling":{"type":"independent","mu0":[0.5,0.4],"mu1":[0.5,0.5]}}"#;
        assert!(parse(tampered).is_err());
    }
}
