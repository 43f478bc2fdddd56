//! Donsker-Varadhan occupation functional
//! `I(μ) = sup_{u > 0} ∫ log(u / P u) dμ` for grid Markov kernels.

use nalgebra::{DMatrix, DVector};

use super::GridMeasure;
use crate::error::{Error, Result};
use crate::operator::BaseOperator;
use crate::system::{SlowVec, SystemSpec};

const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 200;

fn markov_matrix(system: &SystemSpec, x: f64, n_y: usize) -> Result<Vec<f64>> {
    system.require_scalar()?;
    if system.driver.is_deterministic() {
        return Err(Error::UnsupportedDriver(
            "occupation functional needs a Markov kernel with densities",
        ));
    }
    Ok(BaseOperator::for_driver(&system.driver, &SlowVec::scalar(x), n_y)?.to_dense())
}

fn check_grid(mu: &GridMeasure, n_y: usize) -> Result<()> {
    if mu.n_y() != n_y {
        return Err(Error::InvalidArgument(format!(
            "measure lives on {} nodes, kernel on {n_y}",
            mu.n_y()
        )));
    }
    Ok(())
}

/// `∫ log(u / P u) dμ` for one positive candidate `u`; every candidate is a
/// lower bound for [`dv_rate_i`].
pub fn dv_candidate_value(system: &SystemSpec, x: f64, mu: &GridMeasure, u: &[f64]) -> Result<f64> {
    let n = mu.n_y();
    let p = markov_matrix(system, x, n)?;
    if u.len() != n || u.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "candidate must be positive on every node".into(),
        ));
    }
    let probs = mu.probabilities();
    Ok((0..n)
        .map(|i| {
            let pu: f64 = p[i * n..(i + 1) * n].iter().zip(u).map(|(a, b)| a * b).sum();
            probs[i] * (u[i] / pu).ln()
        })
        .sum())
}

/// Objective `J(phi) = Σ μ_i (phi_i - log (P e^phi)_i)` with its gradient and
/// the row-softmax `q_ik = P_ik e^{phi_k} / (P e^phi)_i`.
struct Objective<'a> {
    p: &'a [f64],
    mu: &'a [f64],
    n: usize,
}

impl Objective<'_> {
    fn value_and_q(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n;
        let shift = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = phi.iter().map(|v| (v - shift).exp()).collect();
        let mut q = vec![0.0; n * n];
        let mut value = 0.0;
        for i in 0..n {
            let row = &self.p[i * n..(i + 1) * n];
            let qi = &mut q[i * n..(i + 1) * n];
            let mut s = 0.0;
            for k in 0..n {
                qi[k] = row[k] * e[k];
                s += qi[k];
            }
            qi.iter_mut().for_each(|v| *v /= s);
            value += self.mu[i] * (phi[i] - (s.ln() + shift));
        }
        (value, q)
    }

    fn value(&self, phi: &[f64]) -> f64 {
        self.value_and_q(phi).0
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut g = self.mu.to_vec();
        for i in 0..n {
            for k in 0..n {
                g[k] -= self.mu[i] * q[i * n + k];
            }
        }
        g
    }

    /// `-Hessian` restricted to coordinates `1..n` (gauge `phi_0 = 0`).
    fn neg_hessian_reduced(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let m = n - 1;
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let w = self.mu[i];
            if w == 0.0 {
                continue;
            }
            let qi = &q[i * n..(i + 1) * n];
            for a in 0..m {
                let qa = qi[a + 1];
                if qa == 0.0 {
                    continue;
                }
                h[(a, a)] += w * qa;
                for b in 0..m {
                    h[(a, b)] -= w * qa * qi[b + 1];
                }
            }
        }
        h
    }
}

/// `I_x(μ)` maximized over `phi = log u` (gauge `phi_0 = 0`) by damped Newton
/// ascent with backtracking, until the gradient norm drops below `1e-8`.
pub fn dv_rate_i(system: &SystemSpec, x: f64, mu: &GridMeasure, n_y: usize) -> Result<f64> {
    check_grid(mu, n_y)?;
    let p = markov_matrix(system, x, n_y)?;
    let probs = mu.probabilities();
    let obj = Objective {
        p: &p,
        mu: &probs,
        n: n_y,
    };
    let mut phi = vec![0.0; n_y];
    let (mut value, mut q) = obj.value_and_q(&phi);
    let mut gnorm = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let g = obj.gradient(&q);
        gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL {
            return Ok(value.max(0.0));
        }
        let gr = DVector::from_iterator(n_y - 1, g[1..].iter().copied());
        let mut h = obj.neg_hessian_reduced(&q);
        let ridge = 1e-14 * h.diagonal().iter().copied().fold(0.0, f64::max).max(1e-300);
        for a in 0..n_y - 1 {
            h[(a, a)] += ridge;
        }
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&gr),
            None => gr.clone(),
        };
        let slope = dir.dot(&gr);
        let dir = if slope > 0.0 { dir } else { gr.clone() };
        let slope = dir.dot(&gr);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = phi.clone();
            for a in 0..n_y - 1 {
                trial[a + 1] += t * dir[a];
            }
            let v = obj.value(&trial);
            if v >= value + 1e-4 * t * slope {
                phi = trial;
                let (nv, nq) = obj.value_and_q(&phi);
                value = nv;
                q = nq;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent possible at machine precision
            break;
        }
    }
    let g = obj.gradient(&q);
    let final_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if final_norm < GRAD_TOL {
        return Ok(value.max(0.0));
    }
    Err(Error::NoConvergence {
        what: "Donsker-Varadhan maximization",
        residual: final_norm.min(gnorm),
        iterations: MAX_NEWTON,
    })
}
