//! The rate-function ladder of the frozen fast motion: invariant measures,
//! averaged drift, the limiting cumulant `H`, its Legendre dual `L`, the
//! Donsker-Varadhan functional `I`, tilted measures and the path action.

mod action;
mod dv;
mod legendre;
mod table;

pub use action::{path_action, ActionValue};
pub use dv::{dv_candidate_value, dv_rate_i};
pub use legendre::{legendre_l, legendre_l_fallible, LegendreValue};
pub use table::{build_rate_table, CumulantModel, ExactCumulant, Provenance, RateSurface, RateTable, TableConfig};

use crate::error::{Error, Result};
use crate::operator::{invariant_vector, tilted_eigenpair, tilted_eigenvalue, BaseOperator, PowerConfig};
use crate::system::{FastDriverSpec, SlowVec, SystemSpec};

/// Default fast-grid size.
pub const DEFAULT_N_Y: usize = 512;
/// `b_max` in units of the inverse fluctuation amplitude of the drift.
pub const BETA_MAX_UNITS: f64 = 6.0;
/// Nodes of the default beta grid.
pub const DEFAULT_BETA_NODES: usize = 241;

/// Extended real used for rate values; `Infinite` carries a finite lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended {
    Finite(f64),
    Infinite { lower_bound: f64 },
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::Infinite { .. } => None,
        }
    }

    /// The value itself, or its lower bound when infinite.
    pub fn lower(&self) -> f64 {
        match self {
            Extended::Finite(v) => *v,
            Extended::Infinite { lower_bound } => *lower_bound,
        }
    }

    /// Sum; infinite as soon as either term is.
    pub fn plus(self, other: Extended) -> Extended {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            (a, b) => Extended::Infinite {
                lower_bound: a.lower() + b.lower(),
            },
        }
    }
}

/// Probability density on the uniform circle grid `y_i = i / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    density: Vec<f64>,
}

impl GridMeasure {
    /// From per-node densities; checks nonnegativity and unit mass.
    pub fn from_density(density: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = density.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeDensity { index, value });
        }
        let m = Self { density };
        let mass = m.mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochasticRow { row: 0, sum: mass });
        }
        Ok(m)
    }

    /// From nonnegative node weights of any positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let n = weights.len() as f64;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("measure weights sum to zero".into()));
        }
        // clip round-off negatives from interpolating operators
        let density = weights.iter().map(|w| (w / total * n).max(0.0)).collect::<Vec<_>>();
        let s: f64 = density.iter().sum::<f64>() / n;
        Self::from_density(density.iter().map(|d| d / s).collect())
    }

    pub fn uniform(n_y: usize) -> Self {
        Self {
            density: vec![1.0; n_y],
        }
    }

    pub fn n_y(&self) -> usize {
        self.density.len()
    }

    pub fn cell(&self) -> f64 {
        1.0 / self.density.len() as f64
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Cell probabilities `density_i * cell`.
    pub fn probabilities(&self) -> Vec<f64> {
        let c = self.cell();
        self.density.iter().map(|d| d * c).collect()
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell()
    }

    /// `∫ f dμ` for `f` given at the nodes (periodic trapezoid rule).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.density.iter().zip(values).map(|(d, v)| d * v).sum::<f64>() * self.cell()
    }

    pub fn max_abs_diff(&self, other: &GridMeasure) -> f64 {
        self.density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn grid_nodes(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| i as f64 / n as f64)
}

/// Invariant density of the fast motion frozen at `x`.
pub fn stationary_density(driver: &FastDriverSpec, x: &SlowVec, n_y: usize) -> Result<GridMeasure> {
    let op = BaseOperator::for_driver(driver, x, n_y)?;
    let mu = invariant_vector(&op, &PowerConfig::default())?;
    GridMeasure::from_weights(&mu)
}

/// `B-bar(x) = ∫ B(x, y) dμ^x(y)`.
pub fn averaged_drift(system: &SystemSpec, x: &SlowVec, n_y: usize) -> Result<SlowVec> {
    let mu = stationary_density(&system.driver, x, n_y)?;
    let probs = mu.probabilities();
    let mut acc = [0.0; 2];
    for (p, y) in probs.iter().zip(grid_nodes(n_y)) {
        let b = system.drift.eval(x, y);
        for (a, c) in acc.iter_mut().zip(b.as_slice()) {
            *a += p * c;
        }
    }
    SlowVec::from_slice(&acc[..x.dim()])
}

/// Half the largest spread of `y -> B(x, y)` over probe points of the domain.
pub fn fluctuation_scale(system: &SystemSpec) -> f64 {
    let (lo, hi) = (system.slow_domain.lo.x(), system.slow_domain.hi.x());
    let mut scale: f64 = 0.0;
    for k in 0..33 {
        let x = SlowVec::scalar(lo + (hi - lo) * k as f64 / 32.0);
        let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in grid_nodes(256) {
            let b = system.drift.eval(&x, y).x();
            mn = mn.min(b);
            mx = mx.max(b);
        }
        scale = scale.max(0.5 * (mx - mn));
    }
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Default `b_max` for `system`: six inverse fluctuation amplitudes.
pub fn default_beta_max(system: &SystemSpec) -> f64 {
    BETA_MAX_UNITS / fluctuation_scale(system)
}

/// Fast operator frozen at `x` together with the drift values `B(x', y_j)`;
/// evaluates `H(x, x', beta)` for many `beta` without rebuilding.
#[derive(Clone, Debug)]
pub struct FrozenCumulant {
    op: BaseOperator,
    drift: Vec<f64>,
    b_max: f64,
    power: PowerConfig,
}

/// Tilted measure at one `beta` and the quantities derived from it.
#[derive(Clone, Debug)]
pub struct TwistedMeasure {
    pub measure: GridMeasure,
    /// `∫ B dμ_beta`, equal to `dH/dbeta`.
    pub mean_drift: f64,
    pub h: f64,
    /// `beta * mean_drift - H(beta)`.
    pub i_value: f64,
}

impl FrozenCumulant {
    pub fn new(system: &SystemSpec, x: f64, x_prime: f64, n_y: usize) -> Result<Self> {
        Self::with_bracket(system, x, x_prime, n_y, default_beta_max(system))
    }

    /// As [`FrozenCumulant::new`] with `b_max` given.
    pub fn with_bracket(system: &SystemSpec, x: f64, x_prime: f64, n_y: usize, b_max: f64) -> Result<Self> {
        system.require_scalar()?;
        let op = BaseOperator::for_driver(&system.driver, &SlowVec::scalar(x), n_y)?;
        let drift = grid_nodes(n_y).map(|y| system.drift.eval1(x_prime, y)).collect();
        Ok(Self {
            op,
            drift,
            b_max,
            power: PowerConfig::default(),
        })
    }

    pub fn with_beta_max(mut self, b_max: f64) -> Self {
        self.b_max = b_max;
        self
    }

    pub fn beta_max(&self) -> f64 {
        self.b_max
    }

    pub fn operator(&self) -> &BaseOperator {
        &self.op
    }

    pub fn drift_values(&self) -> &[f64] {
        &self.drift
    }

    fn check(&self, beta: f64) -> Result<()> {
        if beta.abs() > self.b_max * (1.0 + 1e-12) || !beta.is_finite() {
            return Err(Error::BetaOutOfBracket {
                beta,
                b_max: self.b_max,
            });
        }
        Ok(())
    }

    /// Shifted weights `exp(beta B_j - shift)` and the shift.
    fn weights(&self, beta: f64) -> (Vec<f64>, f64) {
        let shift = self.drift.iter().map(|b| beta * b).fold(f64::NEG_INFINITY, f64::max);
        (self.drift.iter().map(|b| (beta * b - shift).exp()).collect(), shift)
    }

    pub fn h(&self, beta: f64) -> Result<f64> {
        self.check(beta)?;
        let (w, shift) = self.weights(beta);
        let e = tilted_eigenvalue(&self.op, &w, &self.power)?;
        Ok(e.lambda.ln() + shift)
    }

    pub fn twisted(&self, beta: f64) -> Result<TwistedMeasure> {
        self.check(beta)?;
        let (w, shift) = self.weights(beta);
        let pair = tilted_eigenpair(&self.op, &w, &self.power)?;
        let probs = pair.product_measure();
        let measure = GridMeasure::from_weights(&probs)?;
        let mean_drift = measure.integrate(&self.drift);
        let h = pair.lambda.ln() + shift;
        Ok(TwistedMeasure {
            measure,
            mean_drift,
            h,
            i_value: beta * mean_drift - h,
        })
    }
}

/// `H(x, x', beta)`: log principal eigenvalue of the tilted fast operator.
pub fn log_mgf_h(system: &SystemSpec, x: f64, x_prime: f64, beta: f64, n_y: usize) -> Result<f64> {
    FrozenCumulant::new(system, x, x_prime, n_y)?.h(beta)
}

/// Tilted measure `μ_beta` at `x` (with `x' = x`).
pub fn twisted_measure(system: &SystemSpec, x: f64, beta: f64, n_y: usize) -> Result<TwistedMeasure> {
    FrozenCumulant::new(system, x, x, n_y)?.twisted(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin_system, iid_bessel, Coupling, NoiseDensity};

    #[test]
    fn uniform_noise_has_uniform_invariant_density() {
        let s = builtin_system("markov-sym").unwrap();
        let mu = stationary_density(&s.driver, &SlowVec::scalar(0.4), 256).unwrap();
        assert!(mu.max_abs_diff(&GridMeasure::uniform(256)) < 1e-12);
    }

    #[test]
    fn tripling_map_preserves_lebesgue() {
        let s = builtin_system("expanding-sym").unwrap();
        let mu = stationary_density(&s.driver, &SlowVec::scalar(0.7), 256).unwrap();
        assert!(
            mu.max_abs_diff(&GridMeasure::uniform(256)) < 1e-10,
            "{}",
            mu.max_abs_diff(&GridMeasure::uniform(256))
        );
    }

    #[test]
    fn nonuniform_noise_still_gives_lebesgue() {
        // additive noise on the circle is doubly stochastic
        let driver = FastDriverSpec::AdditiveMarkov {
            noise: NoiseDensity::from_bins(vec![1.7, 0.3, 1.2, 0.8]),
            coupling: Coupling::slow_coordinate(),
        };
        let mu = stationary_density(&driver, &SlowVec::scalar(0.25), 64).unwrap();
        assert!(mu.max_abs_diff(&GridMeasure::uniform(64)) < 1e-12);
    }

    #[test]
    fn spike_kernel_fails_to_converge() {
        let mut s = builtin_system("markov-sym").unwrap();
        s.driver = FastDriverSpec::KernelGrid {
            n_y: 32,
            kernel: crate::system::KernelRule::new("spike", |_, y, z| {
                let d = (y - z).abs().min(1.0 - (y - z).abs());
                if d < 1e-9 {
                    32.0
                } else {
                    0.0
                }
            }),
        };
        assert!(matches!(
            stationary_density(&s.driver, &SlowVec::scalar(0.0), 32),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn averaged_drift_of_markov_examples() {
        let s = builtin_system("markov-sym").unwrap();
        for x in [-2.5, -1.3, 0.5, 2.0] {
            let b = averaged_drift(&s, &SlowVec::scalar(x), 512).unwrap().x();
            let exact = x * (x * x - 4.0) * (1.0 - x * x);
            assert!((b - exact).abs() < 1e-10, "x = {x}: {b} vs {exact}");
        }
        let a = builtin_system("markov-asym").unwrap();
        assert!(averaged_drift(&a, &SlowVec::scalar(-1.5), 512).unwrap().x().abs() < 1e-10);
        assert!(averaged_drift(&a, &SlowVec::scalar(2.0), 512).unwrap().x().abs() < 1e-10);
    }

    #[test]
    fn h_vanishes_at_zero_for_all_drivers() {
        for name in ["markov-sym", "expanding-sym", "zero-drift-doubling"] {
            let s = builtin_system(name).unwrap();
            for x in [-1.7, 0.0, 0.9] {
                let h = log_mgf_h(&s, x, x, 0.0, 256).unwrap();
                assert!(h.abs() < 1e-10, "{name} x={x}: {h}");
            }
        }
    }

    #[test]
    fn beta_outside_bracket_is_rejected() {
        let s = iid_bessel(0.1, 1.0, 0.025);
        assert!(matches!(
            log_mgf_h(&s, 0.0, 0.0, 6.5, 64),
            Err(Error::BetaOutOfBracket { .. })
        ));
    }

    #[test]
    fn twisted_at_zero_is_invariant_measure() {
        let s = builtin_system("expanding-sym").unwrap();
        let t = twisted_measure(&s, 0.3, 0.0, 256).unwrap();
        assert!(t.i_value.abs() < 1e-12);
        assert!(t.measure.max_abs_diff(&GridMeasure::uniform(256)) < 1e-9);
    }

    #[test]
    fn fluctuation_scale_of_builtins() {
        assert!((fluctuation_scale(&builtin_system("markov-sym").unwrap()) - 50.0).abs() < 1e-9);
        assert!((fluctuation_scale(&iid_bessel(0.1, 1.0, 0.02)) - 1.0).abs() < 1e-9);
        assert!((default_beta_max(&iid_bessel(0.1, 1.0, 0.02)) - 6.0).abs() < 1e-9);
    }
}
