//! Brute-force reference computations on dense matrices, written without the
//! library's factorized kernels, neighbor tables or cached score fields.

#![allow(dead_code)]

use dfm_core::{Coupling, DynamicsKind};

pub fn decode(mut index: usize, m: usize, d: usize) -> Vec<usize> {
    let mut coords = Vec::with_capacity(d);
    for _ in 0..d {
        coords.push(index % m);
        index /= m;
    }
    coords
}

pub fn encode(coords: &[usize], m: usize) -> usize {
    coords.iter().rev().fold(0, |acc, &c| acc * m + c)
}

/// Dense generator built coordinate by coordinate.
pub fn generator(kind: DynamicsKind, m: usize, d: usize) -> Vec<f64> {
    let s = m.pow(d as u32);
    let mut q = vec![0.0; s * s];
    for x in 0..s {
        let c = decode(x, m, d);
        for axis in 0..d {
            let shifts: Vec<(usize, f64)> = match kind {
                DynamicsKind::Nnrw => vec![(1, 0.5), (m - 1, 0.5)],
                DynamicsKind::Urw => (1..m).map(|n| (n, 1.0 / m as f64)).collect(),
            };
            for (shift, rate) in shifts {
                let mut y = c.clone();
                y[axis] = (y[axis] + shift) % m;
                q[x * s + encode(&y, m)] += rate;
            }
        }
        let off: f64 = (0..s).filter(|&y| y != x).map(|y| q[x * s + y]).sum();
        q[x * s + x] = -off;
    }
    q
}

pub fn matmul(a: &[f64], b: &[f64], s: usize) -> Vec<f64> {
    let mut c = vec![0.0; s * s];
    for i in 0..s {
        for k in 0..s {
            let aik = a[i * s + k];
            if aik != 0.0 {
                for j in 0..s {
                    c[i * s + j] += aik * b[k * s + j];
                }
            }
        }
    }
    c
}

/// `exp(tQ)` by scaling and squaring of a 30-term Taylor series.
pub fn expm(q: &[f64], t: f64, s: usize) -> Vec<f64> {
    let norm = (0..s).map(|i| (0..s).map(|j| q[i * s + j].abs()).sum::<f64>()).fold(0.0, f64::max) * t;
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scale = t / 2f64.powi(squarings);
    let a: Vec<f64> = q.iter().map(|v| v * scale).collect();
    let mut result = vec![0.0; s * s];
    let mut term = vec![0.0; s * s];
    for i in 0..s {
        result[i * s + i] = 1.0;
        term[i * s + i] = 1.0;
    }
    for n in 1..30 {
        term = matmul(&term, &a, s);
        term.iter_mut().for_each(|v| *v /= n as f64);
        result.iter_mut().zip(&term).for_each(|(r, v)| *r += v);
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, s);
    }
    result
}

/// Row `x` of `exp(tQ)` by integrating `p' = pQ` with classical RK4.
pub fn ode_row(q: &[f64], s: usize, x: usize, t: f64, steps: usize) -> Vec<f64> {
    let rhs = |p: &[f64]| -> Vec<f64> {
        (0..s).map(|j| (0..s).map(|i| p[i] * q[i * s + j]).sum()).collect()
    };
    let dt = t / steps as f64;
    let mut p = vec![0.0; s];
    p[x] = 1.0;
    for _ in 0..steps {
        let k1 = rhs(&p);
        let y: Vec<f64> = (0..s).map(|i| p[i] + 0.5 * dt * k1[i]).collect();
        let k2 = rhs(&y);
        let y: Vec<f64> = (0..s).map(|i| p[i] + 0.5 * dt * k2[i]).collect();
        let k3 = rhs(&y);
        let y: Vec<f64> = (0..s).map(|i| p[i] + dt * k3[i]).collect();
        let k4 = rhs(&y);
        for i in 0..s {
            p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

/// Interpolant quantities at one time from the mixture-of-bridges formula.
pub struct Reference {
    pub s: usize,
    pub marginal: Vec<f64>,
    /// `u(x, y)` for all pairs, `NaN` off the support.
    pub score: Vec<f64>,
}

pub fn reference(kind: DynamicsKind, m: usize, d: usize, coupling: &Coupling, t: f64) -> Reference {
    let s = m.pow(d as u32);
    let q = generator(kind, m, d);
    let pt = expm(&q, t, s);
    let prest = expm(&q, 1.0 - t, s);
    let p1 = expm(&q, 1.0, s);
    let mut marginal = vec![0.0; s];
    let mut numer = vec![0.0; s * s];
    for x0 in 0..s {
        for x1 in 0..s {
            let w = coupling.weight(x0, x1);
            if w == 0.0 {
                continue;
            }
            let r = w / p1[x0 * s + x1];
            for x in 0..s {
                let a = r * pt[x0 * s + x];
                marginal[x] += a * prest[x * s + x1];
                for y in 0..s {
                    numer[x * s + y] += a * prest[y * s + x1];
                }
            }
        }
    }
    let score = (0..s * s)
        .map(|i| if marginal[i / s] > 0.0 { numer[i] / marginal[i / s] } else { f64::NAN })
        .collect();
    Reference { s, marginal, score }
}

/// Neumaier-compensated running sum.
#[derive(Default)]
pub struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Operator targets `(target, rate)` at `x`, in operator order.
pub fn op_targets(kind: DynamicsKind, m: usize, d: usize, x: usize) -> Vec<usize> {
    let c = decode(x, m, d);
    let mut out = Vec::new();
    for axis in 0..d {
        let shifts: Vec<usize> = match kind {
            DynamicsKind::Nnrw => vec![1, m - 1],
            DynamicsKind::Urw => (1..m).collect(),
        };
        for shift in shifts {
            let mut y = c.clone();
            y[axis] = (y[axis] + shift) % m;
            out.push(encode(&y, m));
        }
    }
    out
}

/// Losses `(L_e, L_2)` of per-grid-point tables `theta[k][x * n_ops + op]`,
/// summed in reverse loop order with compensation.
pub fn losses(
    kind: DynamicsKind,
    m: usize,
    d: usize,
    coupling: &Coupling,
    points: &[f64],
    theta: &[Vec<f64>],
) -> (f64, f64) {
    let s = m.pow(d as u32);
    let lambda = match kind {
        DynamicsKind::Nnrw => 0.5,
        DynamicsKind::Urw => 1.0 / m as f64,
    };
    let mut le = Compensated::default();
    let mut l2 = Compensated::default();
    for k in (0..points.len() - 1).rev() {
        let step = points[k + 1] - points[k];
        let r = reference(kind, m, d, coupling, points[k]);
        for x in (0..s).rev() {
            if r.marginal[x] == 0.0 {
                continue;
            }
            let targets = op_targets(kind, m, d, x);
            for op in (0..targets.len()).rev() {
                let u = r.score[x * s + targets[op]];
                let th = theta[k][x * targets.len() + op];
                let ratio = u / th;
                let phi = if ratio == 0.0 { 1.0 } else { ratio * ratio.ln() - ratio + 1.0 };
                le.add(step * r.marginal[x] * lambda * th * phi);
                l2.add(step * r.marginal[x] * (lambda * th - lambda * u).powi(2));
            }
        }
    }
    (le.value(), l2.value())
}
