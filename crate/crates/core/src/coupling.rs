//! Couplings of source and target laws, their reweighting by the base
//! kernel, and JSON ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{Dynamics, DynamicsKind};
use crate::lattice::LatticeSpec;

/// Largest state space handled by the dense exact routines.
pub const MAX_EXACT_STATES: usize = 4096;

/// Input probability vectors are renormalized within this distance of 1 and rejected beyond it.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A joint law `pi(x0, x1)` on `Z_m^d x Z_m^d`, stored densely (row = `x0`).
#[derive(Clone, Debug)]
pub struct Coupling {
    spec: LatticeSpec,
    weights: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

fn check_capacity(spec: &LatticeSpec) -> Result<()> {
    if spec.size() > MAX_EXACT_STATES {
        return Err(Error::Capacity { states: spec.size(), limit: MAX_EXACT_STATES });
    }
    Ok(())
}

/// Validates a nonnegative vector and rescales it to unit mass.
pub fn normalize_probabilities(name: &str, values: &[f64]) -> Result<Vec<f64>> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return invalid(format!("{name}[{i}] = {v} is not a nonnegative finite number"));
        }
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return invalid(format!("{name} has zero total mass"));
    }
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return invalid(format!("{name} sums to {total}, expected 1 within {MASS_TOLERANCE}"));
    }
    Ok(values.iter().map(|v| v / total).collect())
}

impl Coupling {
    /// Validates (and renormalizes) a dense row-major weight matrix.
    pub fn from_weights(spec: LatticeSpec, weights: Vec<f64>) -> Result<Self> {
        check_capacity(&spec)?;
        let s = spec.size();
        if weights.len() != s * s {
            return invalid(format!("coupling has {} weights, expected {}", weights.len(), s * s));
        }
        let weights = normalize_probabilities("coupling weights", &weights)?;
        let mut mu0 = vec![0.0; s];
        let mut mu1 = vec![0.0; s];
        for x0 in 0..s {
            for x1 in 0..s {
                let w = weights[x0 * s + x1];
                mu0[x0] += w;
                mu1[x1] += w;
            }
        }
        Ok(Self { spec, weights, mu0, mu1 })
    }

    /// Product coupling `mu0 x mu1`.
    pub fn independent(spec: LatticeSpec, mu0: &[f64], mu1: &[f64]) -> Result<Self> {
        check_capacity(&spec)?;
        let s = spec.size();
        if mu0.len() != s || mu1.len() != s {
            return invalid(format!("marginals must have {s} entries (got {} and {})", mu0.len(), mu1.len()));
        }
        let mu0 = normalize_probabilities("mu0", mu0)?;
        let mu1 = normalize_probabilities("mu1", mu1)?;
        let mut weights = vec![0.0; s * s];
        for x0 in 0..s {
            for x1 in 0..s {
                weights[x0 * s + x1] = mu0[x0] * mu1[x1];
            }
        }
        Ok(Self { spec, weights, mu0, mu1 })
    }

    /// Sparse `(x0, x1, weight)` entries; unlisted pairs have weight 0.
    pub fn from_entries(spec: LatticeSpec, entries: &[(usize, usize, f64)]) -> Result<Self> {
        check_capacity(&spec)?;
        let s = spec.size();
        let mut weights = vec![0.0; s * s];
        for (i, &(x0, x1, w)) in entries.iter().enumerate() {
            if x0 >= s || x1 >= s {
                return invalid(format!("entries[{i}] = [{x0}, {x1}, {w}] references a state outside [0, {s})"));
            }
            if !w.is_finite() || w < 0.0 {
                return invalid(format!("entries[{i}] has invalid weight {w}"));
            }
            weights[x0 * s + x1] += w;
        }
        Self::from_weights(spec, weights)
    }

    /// All mass on the single pair `(x0, x1)`.
    pub fn point(spec: LatticeSpec, x0: usize, x1: usize) -> Result<Self> {
        Self::from_entries(spec, &[(x0, x1, 1.0)])
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x0: usize, x1: usize) -> f64 {
        self.weights[x0 * self.spec.size() + x1]
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    /// `pi~(x0, x1) = pi(x0, x1) / p_{1|0}(x1 | x0)`.
    pub fn reweight(&self, dynamics: &Dynamics) -> Result<ReweightedCoupling> {
        if dynamics.spec() != &self.spec {
            return invalid("coupling and dynamics live on different lattices");
        }
        let kernel = dynamics.kernel(1.0)?;
        let s = self.spec.size();
        let mut weights = vec![0.0; s * s];
        for x0 in 0..s {
            for x1 in 0..s {
                let w = self.weights[x0 * s + x1];
                if w != 0.0 {
                    weights[x0 * s + x1] = w / kernel.prob(x0, x1);
                }
            }
        }
        Ok(ReweightedCoupling {
            spec: self.spec.clone(),
            kind: dynamics.kind(),
            weights,
            mu0: self.mu0.clone(),
            mu1: self.mu1.clone(),
        })
    }
}

/// A coupling divided entrywise by the unit-time base kernel.
#[derive(Clone, Debug)]
pub struct ReweightedCoupling {
    spec: LatticeSpec,
    kind: DynamicsKind,
    weights: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

impl ReweightedCoupling {
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    /// Dynamics the reweighting was computed against.
    pub fn kind(&self) -> DynamicsKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x0: usize, x1: usize) -> f64 {
        self.weights[x0 * self.spec.size() + x1]
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }
}

/// The `coupling` object of a coupling file or experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum CouplingSpec {
    Independent { mu0: Vec<f64>, mu1: Vec<f64> },
    Explicit { entries: Vec<(usize, usize, f64)> },
}

impl CouplingSpec {
    pub fn build(&self, spec: LatticeSpec) -> Result<Coupling> {
        match self {
            CouplingSpec::Independent { mu0, mu1 } => Coupling::independent(spec, mu0, mu1),
            CouplingSpec::Explicit { entries } => Coupling::from_entries(spec, entries),
        }
    }
}

/// Top-level coupling file: `{"m": .., "d": .., "coupling": {...}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingFile {
    pub m: usize,
    pub d: usize,
    pub coupling: CouplingSpec,
}

impl CouplingFile {
    pub fn build(&self) -> Result<Coupling> {
        let spec = LatticeSpec::new(self.m, self.d)?;
        check_capacity(&spec)?;
        self.coupling.build(spec)
    }
}

pub fn parse_coupling(json: &str) -> Result<Coupling> {
    let file: CouplingFile = serde_json::from_str(json)?;
    file.build()
}

pub fn load_coupling(path: impl AsRef<Path>) -> Result<Coupling> {
    let text = std::fs::read_to_string(path)?;
    parse_coupling(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(m: usize, d: usize) -> LatticeSpec {
        LatticeSpec::new(m, d).unwrap()
    }

    #[test]
    fn independent_examples() {
        let c = Coupling::independent(spec(2, 1), &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c.weights(), &[0.0, 1.0, 0.0, 0.0]);
        let c = Coupling::independent(spec(2, 1), &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(c.weights().iter().all(|&w| w == 0.25));
        let c = Coupling::independent(spec(2, 1), &[0.5, 0.5], &[0.7, 0.3]).unwrap();
        let expected = [0.35, 0.15, 0.35, 0.15];
        for (w, e) in c.weights().iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_mass() {
        assert!(Coupling::independent(spec(2, 1), &[-0.1, 1.1], &[0.5, 0.5]).is_err());
        assert!(Coupling::independent(spec(2, 1), &[0.0, 0.0], &[0.5, 0.5]).is_err());
        assert!(Coupling::independent(spec(2, 1), &[0.45, 0.45], &[0.5, 0.5]).is_err());
        let c = Coupling::independent(spec(2, 1), &[0.5, 0.5000001], &[0.5, 0.5]).unwrap();
        assert!((c.mu0().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn capacity_is_enforced() {
        let big = spec(2, 13);
        let err = Coupling::point(big, 0, 0).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn explicit_file_gives_point_coupling() {
        let c = parse_coupling(r#"{"m":2,"d":1,"coupling":{"type":"explicit","entries":[[0,1,1.0]]}}"#).unwrap();
        assert_eq!(c.weights(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(c.mu0(), &[1.0, 0.0]);
        assert_eq!(c.mu1(), &[0.0, 1.0]);
    }

    #[test]
    fn file_errors_carry_diagnostics() {
        let err = parse_coupling(r#"{"m":2,"d":1,"coupling":{"type":"independent","mu0":[0.5,0.4],"mu1":[0.5,0.5]}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("mu0"), "{err}");
        let err = parse_coupling("{\"m\":2,\n\"d\":1,\n\"coupling\":{\"type\":\"bogus\"}}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = parse_coupling(r#"{"m":2,"d":1,"coupling":{"type":"explicit","entries":[[0,7,1.0]]}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("entries[0]"), "{err}");
    }

    #[test]
    fn reweight_of_point_coupling() {
        for kind in [DynamicsKind::Nnrw, DynamicsKind::Urw] {
            let dy = Dynamics::new(kind, spec(3, 2));
            let c = Coupling::point(spec(3, 2), 1, 7).unwrap();
            let r = c.reweight(&dy).unwrap();
            let p = dy.kernel(1.0).unwrap().prob(1, 7);
            assert_eq!(r.weight(1, 7), 1.0 / p);
            let zeros = r.weights().iter().filter(|&&w| w == 0.0).count();
            assert_eq!(zeros, 80);
        }
    }
}
