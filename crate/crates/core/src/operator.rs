//! Discretized transfer operators of the fast motion and their principal
//! eigenpairs.
//!
//! Every driver is reduced to a base operator `A` on the uniform circle grid
//! `y_i = i / n`. Tilting by a weight vector `w` gives `K = A diag(w)`:
//!
//! * Markov drivers: `A = P`, the row-stochastic one-step matrix, so
//!   `(K u)_i = E[w(Y_1) u(Y_1) | Y_0 = y_i]`.
//! * Expanding maps `y -> m y + c`: `A` is the Ruelle operator
//!   `(A g)(y) = (1/m) sum_j g(v_j)` over the `m` preimages `v_j`, with `g`
//!   read off the grid by periodic cubic interpolation.
//!
//! In both cases the log of the principal eigenvalue of `K` with
//! `w = exp(beta B)` is the cumulant `H`, and the normalized product of the
//! left and right principal eigenvectors is the tilted invariant measure.

use crate::error::{Error, Result};
use crate::numerics::lagrange4;
use crate::system::{FastDriverSpec, SlowVec};

#[derive(Clone, Debug)]
pub enum BaseOperator {
    /// Row-major dense matrix.
    Dense { n: usize, data: Vec<f64> },
    /// Every row equals `row` (successive fast states independent).
    RankOne { row: Vec<f64> },
    /// Sparse rows of `(column, weight)`.
    Sparse { n: usize, rows: Vec<Vec<(usize, f64)>> },
}

impl BaseOperator {
    /// Operator of `driver` frozen at slow state `x` on an `n`-node grid.
    pub fn for_driver(driver: &FastDriverSpec, x: &SlowVec, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidArgument(format!("fast grid needs n_y >= 4, got {n}")));
        }
        let dy = 1.0 / n as f64;
        Ok(match driver {
            FastDriverSpec::AdditiveMarkov { noise, .. } if noise.is_uniform() => {
                BaseOperator::RankOne { row: vec![dy; n] }
            }
            FastDriverSpec::AdditiveMarkov { noise, coupling } => {
                let c = coupling.eval(x);
                // circulant: entry depends on (j - i) only
                let first: Vec<f64> = (0..n).map(|k| noise.pdf(k as f64 * dy - c)).collect();
                let total: f64 = first.iter().sum();
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        data[i * n + j] = first[(j + n - i) % n] / total;
                    }
                }
                BaseOperator::Dense { n, data }
            }
            FastDriverSpec::KernelGrid { kernel, .. } => {
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    let yi = i as f64 * dy;
                    let row = &mut data[i * n..(i + 1) * n];
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = kernel.density(x, yi, j as f64 * dy) * dy;
                    }
                    let s: f64 = row.iter().sum();
                    if !(s > 0.0) {
                        return Err(Error::NonStochasticRow { row: i, sum: s });
                    }
                    row.iter_mut().for_each(|r| *r /= s);
                }
                BaseOperator::Dense { n, data }
            }
            FastDriverSpec::DeterministicExpanding { multiplier, coupling } => {
                let m = *multiplier as usize;
                let c = coupling.eval(x);
                let rows = (0..n)
                    .map(|i| {
                        let mut row: Vec<(usize, f64)> = Vec::with_capacity(4 * m);
                        for j in 0..m {
                            let v = (i as f64 * dy - c + j as f64) / m as f64;
                            let p = (v - v.floor()) * n as f64;
                            let k0 = p.floor();
                            let w = lagrange4(p - k0);
                            let k0 = k0 as isize;
                            for (s, ws) in w.iter().enumerate() {
                                let col = (k0 - 1 + s as isize).rem_euclid(n as isize) as usize;
                                row.push((col, ws / m as f64));
                            }
                        }
                        row
                    })
                    .collect();
                BaseOperator::Sparse { n, rows }
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseOperator::Dense { n, .. } | BaseOperator::Sparse { n, .. } => *n,
            BaseOperator::RankOne { row } => row.len(),
        }
    }

    /// `out = A u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        match self {
            BaseOperator::Dense { n, data } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = data[i * n..(i + 1) * n].iter().zip(u).map(|(a, b)| a * b).sum();
                }
            }
            BaseOperator::RankOne { row } => {
                let s: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
                out.iter_mut().for_each(|o| *o = s);
            }
            BaseOperator::Sparse { rows, .. } => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().map(|&(j, a)| a * u[j]).sum();
                }
            }
        }
    }

    /// `out = A^T v`, i.e. the row vector `v A`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        match self {
            BaseOperator::Dense { n, data } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, vi) in v.iter().enumerate() {
                    for (o, a) in out.iter_mut().zip(&data[i * n..(i + 1) * n]) {
                        *o += vi * a;
                    }
                }
            }
            BaseOperator::RankOne { row } => {
                let s: f64 = v.iter().sum();
                for (o, r) in out.iter_mut().zip(row) {
                    *o = s * r;
                }
            }
            BaseOperator::Sparse { rows, .. } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (vi, row) in v.iter().zip(rows) {
                    for &(j, a) in row {
                        out[j] += vi * a;
                    }
                }
            }
        }
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                out[i * n + j] = col[i];
            }
        }
        out
    }
}

/// Stopping rule for power iteration.
#[derive(Clone, Copy, Debug)]
pub struct PowerConfig {
    /// Relative residual `|K u - lambda u| / |lambda u|` that counts as converged.
    pub tol: f64,
    /// Residual still accepted when the iteration cap is hit (rounding stall).
    pub stall_tol: f64,
    pub max_iter: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            stall_tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenVector {
    pub lambda: f64,
    /// Normalized to unit sum.
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Principal eigenpair of the map `step` by power iteration from `start`.
pub fn power_iterate(
    what: &'static str,
    start: &[f64],
    cfg: &PowerConfig,
    mut step: impl FnMut(&[f64], &mut [f64]),
) -> Result<EigenVector> {
    let n = start.len();
    let mut u = start.to_vec();
    let s = l2(&u);
    u.iter_mut().for_each(|x| *x /= s);
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    for it in 1..=cfg.max_iter {
        step(&u, &mut w);
        // u has unit norm, so this is the Rayleigh quotient
        lambda = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let r: f64 = w
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = r / lambda.abs().max(f64::MIN_POSITIVE);
        let norm = l2(&w);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NoConvergence {
                what,
                residual: f64::INFINITY,
                iterations: it,
            });
        }
        u.iter_mut().zip(&w).for_each(|(a, b)| *a = b / norm);
        if residual < cfg.tol {
            return Ok(finish(lambda, u, residual, it));
        }
    }
    if residual < cfg.stall_tol {
        Ok(finish(lambda, u, residual, cfg.max_iter))
    } else {
        Err(Error::NoConvergence {
            what,
            residual,
            iterations: cfg.max_iter,
        })
    }
}

fn finish(lambda: f64, mut u: Vec<f64>, residual: f64, iterations: usize) -> EigenVector {
    let s: f64 = u.iter().sum();
    u.iter_mut().for_each(|x| *x /= s);
    EigenVector {
        lambda,
        vector: u,
        residual,
        iterations,
    }
}

/// Left and right principal eigenvectors of `K = A diag(weights)`.
#[derive(Clone, Debug)]
pub struct TiltedEigen {
    pub lambda: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

impl TiltedEigen {
    /// `left_i * right_i`, normalized to unit sum.
    pub fn product_measure(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.left.iter().zip(&self.right).map(|(a, b)| a * b).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }
}

fn smooth_start(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 1.0 + 0.25 * (std::f64::consts::TAU * i as f64 / n as f64 + 0.3).cos())
        .collect()
}

/// Principal eigenvalue of `A diag(w)` (right iteration only).
pub fn tilted_eigenvalue(op: &BaseOperator, weights: &[f64], cfg: &PowerConfig) -> Result<EigenVector> {
    let n = op.dim();
    let mut tmp = vec![0.0; n];
    power_iterate("tilted eigenvalue", &vec![1.0; n], cfg, |u, out| {
        tmp.iter_mut()
            .zip(u.iter().zip(weights))
            .for_each(|(t, (a, b))| *t = a * b);
        op.apply(&tmp, out);
    })
}

/// Both principal eigenvectors of `A diag(w)`.
pub fn tilted_eigenpair(op: &BaseOperator, weights: &[f64], cfg: &PowerConfig) -> Result<TiltedEigen> {
    let n = op.dim();
    let right = tilted_eigenvalue(op, weights, cfg)?;
    let mut tmp = vec![0.0; n];
    let left = power_iterate("tilted left eigenvector", &smooth_start(n), cfg, |v, out| {
        op.apply_transpose(v, &mut tmp);
        out.iter_mut()
            .zip(tmp.iter().zip(weights))
            .for_each(|(o, (a, b))| *o = a * b);
    })?;
    Ok(TiltedEigen {
        lambda: right.lambda,
        right: right.vector,
        left: left.vector,
    })
}

/// Invariant probability vector of the untilted operator, checked for
/// uniqueness by iterating from two different starts.
pub fn invariant_vector(op: &BaseOperator, cfg: &PowerConfig) -> Result<Vec<f64>> {
    let n = op.dim();
    let ones = vec![1.0; n];
    let pair = tilted_eigenpair(op, &ones, cfg)?;
    let mu = pair.product_measure();
    // second start: skewed, so a non-mixing operator keeps it distinct
    let skew: Vec<f64> = (0..n).map(|i| 1.0 + 0.9 * (i as f64 / n as f64)).collect();
    let mut tmp = vec![0.0; n];
    let left2 = power_iterate("invariant measure", &skew, cfg, |v, out| op.apply_transpose(v, out))?;
    let right2 = power_iterate("invariant measure", &skew, cfg, |u, out| {
        op.apply(u, &mut tmp);
        out.copy_from_slice(&tmp);
    })?;
    let mut mu2: Vec<f64> = left2.vector.iter().zip(&right2.vector).map(|(a, b)| a * b).collect();
    let s: f64 = mu2.iter().sum();
    mu2.iter_mut().for_each(|x| *x /= s);
    let gap = mu.iter().zip(&mu2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) * n as f64;
    if gap > 1e-8 {
        return Err(Error::NoConvergence {
            what: "invariant measure (operator not mixing)",
            residual: gap,
            iterations: cfg.max_iter,
        });
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Coupling, NoiseDensity};

    #[test]
    fn markov_rows_are_stochastic() {
        let driver = FastDriverSpec::AdditiveMarkov {
            noise: NoiseDensity::from_bins(vec![1.6, 0.4, 1.0, 1.0]),
            coupling: Coupling::slow_coordinate(),
        };
        let op = BaseOperator::for_driver(&driver, &SlowVec::scalar(0.37), 32).unwrap();
        let d = op.to_dense();
        for i in 0..32 {
            let s: f64 = d[i * 32..(i + 1) * 32].iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ruelle_operator_preserves_integral_of_smooth_density() {
        let driver = FastDriverSpec::DeterministicExpanding {
            multiplier: 3,
            coupling: Coupling::slow_coordinate(),
        };
        let n = 256;
        let op = BaseOperator::for_driver(&driver, &SlowVec::scalar(0.2), n).unwrap();
        let g: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).sin())
            .collect();
        let mut out = vec![0.0; n];
        op.apply(&g, &mut out);
        let mean: f64 = out.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn identity_kernel_is_not_mixing() {
        let n = 16;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        let op = BaseOperator::Dense { n, data };
        assert!(matches!(
            invariant_vector(&op, &PowerConfig::default()),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn two_state_chain_stationary_vector() {
        // P = [[0.9, 0.1], [0.3, 0.7]] padded to 4 states as two copies is not
        // mixing, so use a 4-state cycle with holding instead.
        let n = 4;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 0.5;
            data[i * n + (i + 1) % n] = 0.5;
        }
        data[0] = 0.8;
        data[1] = 0.2;
        let op = BaseOperator::Dense { n, data: data.clone() };
        let mu = invariant_vector(&op, &PowerConfig::default()).unwrap();
        // check mu P = mu
        for j in 0..n {
            let s: f64 = (0..n).map(|i| mu[i] * data[i * n + j]).sum();
            assert!((s - mu[j]).abs() < 1e-12);
        }
    }
}
