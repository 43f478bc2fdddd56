use rayon::prelude::*;

use super::{
    averaged_drift, default_beta_max, legendre_l_fallible, Extended, FrozenCumulant, LegendreValue, DEFAULT_BETA_NODES,
    DEFAULT_N_Y,
};
use crate::error::{Error, Result};
use crate::numerics::UniformGrid;
use crate::system::{FastDriverSpec, SlowVec, SystemSpec};

/// How a table's `H` values were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    MarkovEigen,
    TransferPressure,
    IidClosedForm,
}

impl Provenance {
    pub fn of(driver: &FastDriverSpec) -> Self {
        if driver.is_deterministic() {
            Provenance::TransferPressure
        } else if driver.is_iid_uniform() {
            Provenance::IidClosedForm
        } else {
            Provenance::MarkovEigen
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::MarkovEigen => "markov-eigen",
            Provenance::TransferPressure => "transfer-pressure",
            Provenance::IidClosedForm => "iid-closed-form",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableConfig {
    pub n_y: usize,
    pub beta_nodes: usize,
    /// `None` selects [`default_beta_max`].
    pub b_max: Option<f64>,
    pub alpha_nodes: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            n_y: DEFAULT_N_Y,
            beta_nodes: DEFAULT_BETA_NODES,
            b_max: None,
            alpha_nodes: 201,
        }
    }
}

/// `H` and `L` sampled at one slow point.
#[derive(Clone, Debug)]
pub struct RateTable {
    pub x: SlowVec,
    pub beta_grid: UniformGrid,
    pub h_values: Vec<f64>,
    pub bbar: SlowVec,
    pub alpha_grid: UniformGrid,
    pub l_values: Vec<Extended>,
    pub beta_star: Vec<f64>,
    pub provenance: Provenance,
}

impl RateTable {
    pub fn beta_max(&self) -> f64 {
        self.beta_grid.hi()
    }

    /// `H` between the nodes by cubic interpolation.
    pub fn h(&self, beta: f64) -> Result<f64> {
        let b_max = self.beta_max();
        if !(beta.abs() <= b_max * (1.0 + 1e-12)) {
            return Err(Error::BetaOutOfBracket { beta, b_max });
        }
        Ok(self.beta_grid.interpolate(&self.h_values, beta))
    }

    pub fn legendre(&self, alpha: f64) -> LegendreValue {
        legendre_l_fallible(
            |b| self.h(b.clamp(-self.beta_max(), self.beta_max())),
            self.beta_max(),
            alpha,
        )
        .expect("beta clamped to the table")
    }

    /// Violated table invariants at tolerance `tol`, as messages.
    pub fn invariant_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let h0 = self.beta_grid.interpolate(&self.h_values, 0.0);
        if h0.abs() > tol {
            out.push(format!("|H(0)| = {h0:e}"));
        }
        let n = self.h_values.len();
        for i in 0..n {
            for j in (i + 2..n).step_by(2) {
                let mid = self.h_values[(i + j) / 2];
                let chord = 0.5 * (self.h_values[i] + self.h_values[j]);
                if mid > chord + tol {
                    out.push(format!("midpoint convexity fails on nodes {i}, {j}"));
                }
            }
        }
        for (a, l) in self.alpha_grid.nodes().iter().zip(&self.l_values) {
            if l.lower() < -tol {
                out.push(format!("L({a}) = {} < 0", l.lower()));
            }
        }
        if let Some(l) = self.legendre(self.bbar.x()).value.finite() {
            if l > tol {
                out.push(format!("L(bbar) = {l:e}"));
            }
        } else {
            out.push("L(bbar) infinite".into());
        }
        out
    }
}

/// Samples `H(x, x, beta)` on the beta grid and derives `L` on an alpha grid
/// spanning the range of `B(x, .)`.
pub fn build_rate_table(system: &SystemSpec, x: f64, cfg: &TableConfig) -> Result<RateTable> {
    if cfg.beta_nodes < 5 || cfg.beta_nodes.is_multiple_of(2) {
        return Err(Error::InvalidArgument("beta grid needs an odd node count >= 5".into()));
    }
    if cfg.alpha_nodes < 2 {
        return Err(Error::InvalidArgument("alpha grid needs at least 2 nodes".into()));
    }
    let b_max = cfg.b_max.unwrap_or_else(|| default_beta_max(system));
    let frozen = FrozenCumulant::with_bracket(system, x, x, cfg.n_y, b_max)?;
    let beta_grid = UniformGrid::spanning(-b_max, b_max, cfg.beta_nodes);
    let h_values = beta_grid
        .nodes()
        .iter()
        .map(|&b| frozen.h(b))
        .collect::<Result<Vec<_>>>()?;
    let bbar = averaged_drift(system, &SlowVec::scalar(x), cfg.n_y)?;
    let drift = frozen.drift_values();
    let lo = drift.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = drift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let alpha_grid = UniformGrid::spanning(lo, hi, cfg.alpha_nodes);
    let mut table = RateTable {
        x: SlowVec::scalar(x),
        beta_grid,
        h_values,
        bbar,
        alpha_grid,
        l_values: Vec::new(),
        beta_star: Vec::new(),
        provenance: Provenance::of(&system.driver),
    };
    let (l_values, beta_star) = alpha_grid
        .nodes()
        .iter()
        .map(|&a| {
            let lv = table.legendre(a);
            (lv.value, lv.beta_star)
        })
        .unzip();
    table.l_values = l_values;
    table.beta_star = beta_star;
    Ok(table)
}

/// Source of `H(x, beta)` (with `x' = x`) over a slow interval; `L` and the
/// averaged drift follow.
pub trait CumulantModel: Sync {
    fn h(&self, x: f64, beta: f64) -> Result<f64>;
    fn bbar(&self, x: f64) -> Result<f64>;
    fn beta_max(&self) -> f64;
    fn x_range(&self) -> (f64, f64);

    fn check_x(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.x_range();
        let slack = 1e-9 * (hi - lo);
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(Error::OutOfTableRange { x, lo, hi });
        }
        Ok(())
    }

    fn l(&self, x: f64, alpha: f64) -> Result<LegendreValue> {
        self.check_x(x)?;
        legendre_l_fallible(|b| self.h(x, b), self.beta_max(), alpha)
    }
}

/// Solves the tilted eigenproblem on every call.
#[derive(Clone, Debug)]
pub struct ExactCumulant {
    system: SystemSpec,
    n_y: usize,
    b_max: f64,
}

impl ExactCumulant {
    pub fn new(system: &SystemSpec, n_y: usize) -> Result<Self> {
        system.require_scalar()?;
        Ok(Self {
            system: system.clone(),
            n_y,
            b_max: default_beta_max(system),
        })
    }

    pub fn with_beta_max(mut self, b_max: f64) -> Self {
        self.b_max = b_max;
        self
    }
}

impl CumulantModel for ExactCumulant {
    fn h(&self, x: f64, beta: f64) -> Result<f64> {
        self.check_x(x)?;
        FrozenCumulant::with_bracket(&self.system, x, x, self.n_y, self.b_max)?.h(beta)
    }

    fn bbar(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(averaged_drift(&self.system, &SlowVec::scalar(x), self.n_y)?.x())
    }

    fn beta_max(&self) -> f64 {
        self.b_max
    }

    fn x_range(&self) -> (f64, f64) {
        (self.system.slow_domain.lo.x(), self.system.slow_domain.hi.x())
    }
}

/// Rate tables on a uniform slow grid, interpolated in both variables.
#[derive(Clone, Debug)]
pub struct RateSurface {
    x_grid: UniformGrid,
    beta_grid: UniformGrid,
    tables: Vec<RateTable>,
    bbar: Vec<f64>,
}

impl RateSurface {
    /// Tables at `n_x` equally spaced points of `[lo, hi]`, built in parallel.
    pub fn build(system: &SystemSpec, lo: f64, hi: f64, n_x: usize, cfg: &TableConfig) -> Result<Self> {
        if n_x < 4 || !(hi > lo) {
            return Err(Error::InvalidArgument("rate surface needs n_x >= 4 and lo < hi".into()));
        }
        let cfg = TableConfig {
            b_max: Some(cfg.b_max.unwrap_or_else(|| default_beta_max(system))),
            ..*cfg
        };
        let grid = UniformGrid::spanning(lo, hi, n_x);
        let tables = grid
            .nodes()
            .into_par_iter()
            .map(|x| build_rate_table(system, x, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(tables)
    }

    /// Assembles tables sorted by `x`; they must share one beta grid and sit
    /// on a uniform slow grid.
    pub fn from_tables(mut tables: Vec<RateTable>) -> Result<Self> {
        if tables.len() < 4 {
            return Err(Error::TableGap(format!("need at least 4 tables, got {}", tables.len())));
        }
        tables.sort_by(|a, b| a.x.x().total_cmp(&b.x.x()));
        let lo = tables[0].x.x();
        let hi = tables[tables.len() - 1].x.x();
        let x_grid = UniformGrid::spanning(lo, hi, tables.len());
        for (k, t) in tables.iter().enumerate() {
            if (t.x.x() - x_grid.node(k)).abs() > 1e-9 * x_grid.step {
                return Err(Error::TableGap(format!(
                    "table at x = {} off the uniform grid",
                    t.x.x()
                )));
            }
            if t.beta_grid != tables[0].beta_grid {
                return Err(Error::TableGap(format!(
                    "table at x = {} uses another beta grid",
                    t.x.x()
                )));
            }
        }
        let beta_grid = tables[0].beta_grid;
        let bbar = tables.iter().map(|t| t.bbar.x()).collect();
        Ok(Self {
            x_grid,
            beta_grid,
            tables,
            bbar,
        })
    }

    pub fn tables(&self) -> &[RateTable] {
        &self.tables
    }

    pub fn x_grid(&self) -> UniformGrid {
        self.x_grid
    }
}

impl CumulantModel for RateSurface {
    fn h(&self, x: f64, beta: f64) -> Result<f64> {
        self.check_x(x)?;
        let b_max = self.beta_max();
        if !(beta.abs() <= b_max * (1.0 + 1e-12)) {
            return Err(Error::BetaOutOfBracket { beta, b_max });
        }
        let (kx, wx) = self.x_grid.stencil(x);
        let (kb, wb) = self.beta_grid.stencil(beta);
        let mut acc = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            let h = &self.tables[kx + a].h_values;
            let col: f64 = wb.iter().enumerate().map(|(b, w)| w * h[kb + b]).sum();
            acc += wa * col;
        }
        Ok(acc)
    }

    fn bbar(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.x_grid.interpolate(&self.bbar, x))
    }

    fn beta_max(&self) -> f64 {
        self.beta_grid.hi()
    }

    fn x_range(&self) -> (f64, f64) {
        (self.x_grid.lo, self.x_grid.hi())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin_system, iid_bessel};

    fn bessel_i0(b: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= (b / 2.0) * (b / 2.0) / (k * k) as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn iid_table_matches_bessel_and_satisfies_invariants() {
        let s = iid_bessel(0.0, 1.0, 0.02);
        let t = build_rate_table(&s, 0.3, &TableConfig::default()).unwrap();
        assert_eq!(t.provenance, Provenance::IidClosedForm);
        for (b, h) in t.beta_grid.nodes().iter().zip(&t.h_values) {
            assert!((h - bessel_i0(*b).ln()).abs() < 1e-10);
        }
        assert!(
            t.invariant_violations(1e-9).is_empty(),
            "{:?}",
            t.invariant_violations(1e-9)
        );
    }

    #[test]
    fn expanding_table_is_pressure() {
        let s = builtin_system("expanding-sym").unwrap();
        let cfg = TableConfig {
            n_y: 256,
            ..TableConfig::default()
        };
        let t = build_rate_table(&s, 0.5, &cfg).unwrap();
        assert_eq!(t.provenance, Provenance::TransferPressure);
        assert!(
            t.invariant_violations(1e-9).is_empty(),
            "{:?}",
            t.invariant_violations(1e-9)
        );
    }

    #[test]
    fn surface_interpolates_exact_cumulant() {
        let s = iid_bessel(0.1, 1.0, 0.02);
        let cfg = TableConfig {
            n_y: 128,
            ..TableConfig::default()
        };
        let surf = RateSurface::build(&s, -2.0, 2.0, 81, &cfg).unwrap();
        let exact = ExactCumulant::new(&s, 128).unwrap();
        for (x, b) in [(0.37, 1.3), (-1.21, -2.2), (1.99, 0.05)] {
            let a = surf.h(x, b).unwrap();
            let e = exact.h(x, b).unwrap();
            assert!((a - e).abs() < 1e-6, "{x} {b}: {a} vs {e}");
        }
        assert!(matches!(surf.h(2.5, 0.0), Err(Error::OutOfTableRange { .. })));
    }

    #[test]
    fn misaligned_tables_are_a_gap() {
        let s = iid_bessel(0.1, 1.0, 0.02);
        let cfg = TableConfig {
            n_y: 32,
            beta_nodes: 11,
            ..TableConfig::default()
        };
        let tables = [0.0, 0.1, 0.2, 0.35]
            .iter()
            .map(|&x| build_rate_table(&s, x, &cfg).unwrap())
            .collect();
        assert!(matches!(RateSurface::from_tables(tables), Err(Error::TableGap(_))));
    }
}
