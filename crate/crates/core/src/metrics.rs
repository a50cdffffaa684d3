//! Divergences between finite distributions, empirical laws and a
//! chi-square goodness-of-fit test.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Result};

/// A probability vector over encoded states at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDist {
    pub t: f64,
    pub probs: Vec<f64>,
}

impl MarginalDist {
    pub fn new(t: f64, probs: Vec<f64>) -> Self {
        Self { t, probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return invalid(format!("distributions have {} and {} entries", p.len(), q.len()));
    }
    Ok(())
}

/// `KL(p | q) = sum p log(p/q)`, with `0 log 0 = 0`; `+inf` when `p` is not
/// absolutely continuous with respect to `q`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Total variation distance `(1/2) sum |p - q|`.
pub fn tv(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Checks `tv(p, q) <= sqrt(kl(p, q) / 2)` with a small absolute slack for rounding.
pub fn pinsker_holds(p: &[f64], q: &[f64]) -> Result<bool> {
    let t = tv(p, q)?;
    let k = kl(p, q)?;
    Ok(t <= (k / 2.0).sqrt() + 1e-12)
}

/// Histogram of sampled state indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalDist {
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalDist {
    pub fn from_samples(states: usize, samples: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = vec![0u64; states];
        let mut total = 0;
        for x in samples {
            if x >= states {
                return invalid(format!("sample {x} outside [0, {states})"));
            }
            counts[x] += 1;
            total += 1;
        }
        if total == 0 {
            return invalid("empirical distribution needs at least one sample");
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probs(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// Pearson chi-square statistic, degrees of freedom and p-value of `observed`
/// against `expected` probabilities. Cells with zero expected mass must be
/// empty; they are dropped from the statistic.
#[derive(Clone, Copy, Debug)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

pub fn chi_square_test(observed: &EmpiricalDist, expected: &[f64]) -> Result<ChiSquareTest> {
    if expected.len() != observed.counts.len() {
        return invalid("chi-square: dimension mismatch");
    }
    let n = observed.total as f64;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in observed.counts.iter().zip(expected) {
        if p <= 0.0 {
            if c > 0 {
                return Ok(ChiSquareTest { statistic: f64::INFINITY, dof: 0, p_value: 0.0 });
            }
            continue;
        }
        let e = n * p;
        statistic += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
        1.0 - dist.cdf(statistic)
    };
    Ok(ChiSquareTest { statistic, dof, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let expected = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
        assert!((kl(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - expected).abs() < 1e-15);
        assert_eq!(kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(kl(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - 0.2).abs() < 1e-15);
        assert!(tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pinsker_on_examples() {
        assert!(pinsker_holds(&[0.7, 0.3], &[0.5, 0.5]).unwrap());
        assert!(pinsker_holds(&[0.5, 0.5], &[1.0, 0.0]).unwrap());
    }

    #[test]
    fn empirical_and_chi_square() {
        let e = EmpiricalDist::from_samples(2, [0, 0, 1, 0]).unwrap();
        assert_eq!(e.counts(), &[3, 1]);
        assert_eq!(e.probs(), vec![0.75, 0.25]);
        assert!(EmpiricalDist::from_samples(2, []).is_err());
        assert!(EmpiricalDist::from_samples(2, [2]).is_err());

        let e = EmpiricalDist::from_samples(2, (0..1000).map(|i| i % 2)).unwrap();
        let t = chi_square_test(&e, &[0.5, 0.5]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let t = chi_square_test(&e, &[0.9, 0.1]).unwrap();
        assert!(t.p_value < 1e-10);
    }
}
