//! Three-scale systems: a slowest coordinate `v` driven by an intermediate
//! slow-fast pair `(x, y)`, crossing levels of the intermediate barriers and
//! the period of the resulting near-periodic motion.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::numerics::{bisect, UniformGrid};
use crate::quasipotential::{find_attractors, hj_root_quasipotential, HjRoot};
use crate::rate::{stationary_density, ExactCumulant};
use crate::rng::RngStream;
use crate::system::{
    CirclePoint, Coupling, DriftSpec, FastDriverSpec, KernelRule, NoiseDensity, SlowBox, SlowVec, SystemSpec,
};

/// Rule `(v, x, y) -> value`.
pub type TripleFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

/// `v' = v + eps delta A(v, x, y)`, `x' = x + eps B(v, x, y)`, `y' = F_{v,x}(y)`.
///
/// The driver's coupling sees the slow pair as `SlowVec::planar(x, v)`.
#[derive(Clone)]
pub struct ThreeScaleSpec {
    pub name: String,
    pub a: Arc<TripleFn>,
    pub b: Arc<TripleFn>,
    pub a_bound: f64,
    pub b_bound: f64,
    pub b_lipschitz: f64,
    pub driver: FastDriverSpec,
    pub epsilon: f64,
    pub rho: f64,
    pub delta: f64,
    pub x_domain: SlowBox,
    /// Range of `v` probed by [`ThreeScaleSpec::validate`].
    pub v_range: (f64, f64),
}

impl fmt::Debug for ThreeScaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThreeScaleSpec")
            .field("name", &self.name)
            .field("epsilon", &self.epsilon)
            .field("rho", &self.rho)
            .field("delta", &self.delta)
            .field("driver", &self.driver)
            .finish()
    }
}

/// `delta = exp(-rho / eps) / eps`, so that `-eps ln(delta eps) = rho`.
pub fn delta_from(epsilon: f64, rho: f64) -> f64 {
    (-rho / epsilon).exp() / epsilon
}

impl ThreeScaleSpec {
    /// `A = x cos(2 pi v) + sin(2 pi y)`, `B = (x - v)(1 - x^2) + sin(2 pi y)`,
    /// `y' = 3 y + x + v mod 1`.
    pub fn reference_triple(epsilon: f64, rho: f64) -> Result<Self> {
        let spec = Self {
            name: "three-scale".into(),
            a: Arc::new(|v, x, y| x * (TAU * v).cos() + (TAU * y).sin()),
            b: Arc::new(|v, x, y| (x - v) * (1.0 - x * x) + (TAU * y).sin()),
            a_bound: 4.0,
            b_bound: 33.0,
            b_lipschitz: 40.0,
            driver: FastDriverSpec::DeterministicExpanding {
                multiplier: 3,
                coupling: Coupling::new("x+v", |s| s.as_slice()[0] + s.as_slice()[1]),
            },
            epsilon,
            rho,
            delta: delta_from(epsilon, rho),
            x_domain: SlowBox::interval(-3.0, 3.0),
            v_range: (-1.0, 1.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Test triple with analytic averaged slowest drifts:
    /// `A = x (0.5 + v^2) + 0.5 sin(2 pi y)`,
    /// `B = gamma (x - v)(1 - x^2) + c sin(2 pi y)`, i.i.d. uniform fast noise.
    /// Attractors of the intermediate motion are -1 and 1, separated by `v`,
    /// and the averaged slowest drifts there are `-(0.5 + v^2)` and `0.5 + v^2`.
    pub fn designed(gamma: f64, amplitude: f64, epsilon: f64, rho: f64) -> Result<Self> {
        let spec = Self {
            name: "designed-three-scale".into(),
            a: Arc::new(|v, x, y| x * (0.5 + v * v) + 0.5 * (TAU * y).sin()),
            b: Arc::new(move |v, x, y| gamma * (x - v) * (1.0 - x * x) + amplitude * (TAU * y).sin()),
            a_bound: 2.0 * 1.5 + 0.5,
            b_bound: gamma.abs() * 9.0 + amplitude.abs(),
            b_lipschitz: gamma.abs() * 15.0 + TAU * amplitude.abs(),
            driver: FastDriverSpec::AdditiveMarkov {
                noise: NoiseDensity::uniform(),
                coupling: Coupling::slow_coordinate(),
            },
            epsilon,
            rho,
            delta: delta_from(epsilon, rho),
            x_domain: SlowBox::interval(-2.0, 2.0),
            v_range: (-0.99, 0.99),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::BadEpsilon(self.epsilon));
        }
        if !(self.rho > 0.0) {
            return Err(Error::InvalidSystem(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidSystem(format!(
                "derived delta = {} outside (0, 1); raise rho or epsilon",
                self.delta
            )));
        }
        if self.x_domain.dim() != 1 || !(self.x_domain.lo.x() < self.x_domain.hi.x()) {
            return Err(Error::InvalidSystem(
                "intermediate domain must be a nonempty interval".into(),
            ));
        }
        let (xl, xh) = (self.x_domain.lo.x(), self.x_domain.hi.x());
        let (vl, vh) = self.v_range;
        let at = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / 15.0;
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    let (v, x, y) = (at(vl, vh, i), at(xl, xh, j), k as f64 / 16.0);
                    for (val, bound) in [((self.a)(v, x, y), self.a_bound), ((self.b)(v, x, y), self.b_bound)] {
                        if !val.is_finite() || val.abs() > bound * (1.0 + 1e-12) {
                            return Err(Error::BoundViolated {
                                observed: val.abs(),
                                bound,
                                x,
                                y,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy with the slowest coordinate frozen (`delta = 0`).
    pub fn frozen_slowest(&self) -> Self {
        Self {
            delta: 0.0,
            ..self.clone()
        }
    }

    fn frozen_driver(&self, v: f64) -> FastDriverSpec {
        let rewrap = |c: &Coupling| {
            let c = c.clone();
            Coupling::new(format!("{}|v={v}", c.label), move |s| {
                c.eval(&SlowVec::planar(s.x(), v))
            })
        };
        match &self.driver {
            FastDriverSpec::DeterministicExpanding { multiplier, coupling } => FastDriverSpec::DeterministicExpanding {
                multiplier: *multiplier,
                coupling: rewrap(coupling),
            },
            FastDriverSpec::AdditiveMarkov { noise, coupling } => FastDriverSpec::AdditiveMarkov {
                noise: noise.clone(),
                coupling: rewrap(coupling),
            },
            FastDriverSpec::KernelGrid { n_y, kernel } => {
                let k = kernel.clone();
                FastDriverSpec::KernelGrid {
                    n_y: *n_y,
                    kernel: KernelRule::new(k.label.clone(), move |s, y, z| {
                        k.density(&SlowVec::planar(s.x(), v), y, z)
                    }),
                }
            }
        }
    }

    /// The intermediate pair `(x, y)` with `v` frozen.
    pub fn intermediate_system(&self, v: f64) -> SystemSpec {
        let b = self.b.clone();
        SystemSpec {
            name: format!("{}|v={v}", self.name),
            drift: DriftSpec::new("B(v, x, y)", self.b_bound, self.b_lipschitz, move |x, y| {
                SlowVec::scalar(b(v, x.x(), y))
            }),
            driver: self.frozen_driver(v),
            epsilon: self.epsilon,
            slow_domain: self.x_domain,
        }
    }

    /// `A-bar(v) = ∫ A(v, x, y) dμ^{v,x}(y)` with `x` held at `x_fixed`.
    pub fn averaged_slowest_drift(&self, v: f64, x_fixed: f64, n_y: usize) -> Result<f64> {
        let mu = stationary_density(&self.frozen_driver(v), &SlowVec::scalar(x_fixed), n_y)?;
        let values: Vec<f64> = (0..n_y).map(|j| (self.a)(v, x_fixed, j as f64 / n_y as f64)).collect();
        Ok(mu.integrate(&values))
    }
}

/// Barriers of the intermediate motion at one frozen `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Barriers {
    pub o1: f64,
    pub o2: f64,
    pub separator: f64,
    /// From `o1` over the separator.
    pub r12: f64,
    /// From `o2` over the separator.
    pub r21: f64,
}

/// Attractors and barriers of the two-well intermediate motion at `v`, by
/// the root method on `n_cells` cells.
pub fn intermediate_barriers(spec: &ThreeScaleSpec, v: f64, n_y: usize, n_cells: usize) -> Result<Barriers> {
    let sys = spec.intermediate_system(v);
    let model = ExactCumulant::new(&sys, n_y)?;
    let set = find_attractors(|x| crate::rate::CumulantModel::bbar(&model, x), &sys.slow_domain, 400)?;
    if set.attractors.len() != 2 || set.separators.len() != 1 {
        return Err(Error::InvalidSystem(format!(
            "intermediate motion at v = {v} has {} attractors, expected 2",
            set.attractors.len()
        )));
    }
    let (o1, o2, sep) = (set.attractors[0].x(), set.attractors[1].x(), set.separators[0].x());
    let barrier = |from: f64| match hj_root_quasipotential(&model, from, sep, n_cells)? {
        HjRoot::Cost(r) => Ok(r),
        HjRoot::NoSecondRoot { x } => Err(Error::InvalidSystem(format!(
            "averaged drift does not oppose the climb at x = {x}"
        ))),
        HjRoot::Unreachable { x } => Err(Error::InvalidSystem(format!(
            "no velocity against the averaged drift is attainable at x = {x}"
        ))),
    };
    Ok(Barriers {
        o1,
        o2,
        separator: sep,
        r12: barrier(o1)?,
        r21: barrier(o2)?,
    })
}

/// Intermediate barriers and the averaged slowest drifts at both
/// attractors, tabulated in `v` and interpolated between nodes.
#[derive(Clone, Debug)]
pub struct BarrierTable {
    pub grid: UniformGrid,
    pub barriers: Vec<Barriers>,
    /// `A-bar` at the left attractor.
    pub a1: Vec<f64>,
    /// `A-bar` at the right attractor.
    pub a2: Vec<f64>,
}

impl BarrierTable {
    pub fn build(spec: &ThreeScaleSpec, grid: UniformGrid, n_y: usize, n_cells: usize) -> Result<Self> {
        if grid.n < 4 {
            return Err(Error::InvalidArgument(
                "barrier table needs at least 4 nodes in v".into(),
            ));
        }
        let rows = grid
            .nodes()
            .into_par_iter()
            .map(|v| {
                let b = intermediate_barriers(spec, v, n_y, n_cells)?;
                let a1 = spec.averaged_slowest_drift(v, b.o1, n_y)?;
                let a2 = spec.averaged_slowest_drift(v, b.o2, n_y)?;
                Ok((b, a1, a2))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = Self {
            grid,
            barriers: Vec::with_capacity(rows.len()),
            a1: Vec::with_capacity(rows.len()),
            a2: Vec::with_capacity(rows.len()),
        };
        for (b, a1, a2) in rows {
            table.barriers.push(b);
            table.a1.push(a1);
            table.a2.push(a2);
        }
        Ok(table)
    }

    fn column(&self, f: impl Fn(&Barriers) -> f64) -> Vec<f64> {
        self.barriers.iter().map(f).collect()
    }

    pub fn levels(&self, rho: f64) -> Result<CrossingLevels> {
        let (r12, r21) = (self.column(|b| b.r12), self.column(|b| b.r21));
        crossing_levels(
            |v| self.grid.interpolate(&r12, v),
            |v| self.grid.interpolate(&r21, v),
            rho,
            self.grid.lo,
            self.grid.hi(),
        )
    }

    pub fn period(&self, levels: &CrossingLevels) -> Result<f64> {
        predicted_period(
            |v| self.grid.interpolate(&self.a1, v),
            |v| self.grid.interpolate(&self.a2, v),
            levels.v_minus,
            levels.v_plus,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: u64,
    /// Slowest time `eps * delta * step`.
    pub t: f64,
    pub v: f64,
}

/// Entry to (`entering = true`) or exit from the neighborhood of an attractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XMarker {
    pub step: u64,
    pub t: f64,
    pub attractor: usize,
    pub entering: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreeScaleRun {
    pub trace: Vec<TracePoint>,
    pub markers: Vec<XMarker>,
    pub final_state: (f64, f64, f64),
}

/// Iterates the triple for `n_steps`, every update reading pre-step values.
/// `V` is recorded every `subsample` steps; crossings of the boundaries of the
/// `radius`-neighborhoods of `attractors` are recorded as markers.
#[allow(clippy::too_many_arguments)]
pub fn run_three_scale(
    spec: &ThreeScaleSpec,
    v0: f64,
    x0: f64,
    y0: f64,
    n_steps: u64,
    subsample: u64,
    attractors: &[f64],
    radius: f64,
    rng: &mut RngStream,
) -> Result<ThreeScaleRun> {
    if subsample == 0 {
        return Err(Error::InvalidArgument("subsample must be positive".into()));
    }
    let (eps, scale) = (spec.epsilon, spec.epsilon * spec.delta);
    let width = spec.x_domain.width();
    let (mut v, mut x, mut y) = (v0, x0, CirclePoint::wrap(y0));
    let inside = |x: f64| attractors.iter().position(|o| (x - o).abs() < radius);
    let mut current = inside(x);
    let mut trace = vec![TracePoint { step: 0, t: 0.0, v }];
    let mut markers = Vec::new();
    for n in 1..=n_steps {
        let yv = y.value();
        let dv = scale * (spec.a)(v, x, yv);
        let dx = eps * (spec.b)(v, x, yv);
        y = spec.driver.advance(&SlowVec::planar(x, v), y, rng);
        v += dv;
        x += dx;
        let t = scale * n as f64;
        if !(x.is_finite() && v.is_finite()) || spec.x_domain.excess(&SlowVec::scalar(x)) > width {
            return Err(Error::BlowUp { t });
        }
        let now = inside(x);
        if now != current {
            if let Some(a) = current {
                markers.push(XMarker {
                    step: n,
                    t,
                    attractor: a,
                    entering: false,
                });
            }
            if let Some(a) = now {
                markers.push(XMarker {
                    step: n,
                    t,
                    attractor: a,
                    entering: true,
                });
            }
            current = now;
        }
        if n % subsample == 0 {
            trace.push(TracePoint { step: n, t, v });
        }
    }
    Ok(ThreeScaleRun {
        trace,
        markers,
        final_state: (v, x, y.value()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossingLevels {
    pub v_minus: f64,
    pub v_plus: f64,
    /// Level where `R12 = R21`.
    pub lambda_star: f64,
    pub v_star: f64,
    pub valid: bool,
}

const ROOT_TOL: f64 = 1e-10;

/// Solves `R12(v_-) = rho` and `R21(v_+) = rho` on `[v_lo, v_hi]`, with `R12`
/// increasing and `R21` decreasing.
pub fn crossing_levels(
    r12: impl Fn(f64) -> f64,
    r21: impl Fn(f64) -> f64,
    rho: f64,
    v_lo: f64,
    v_hi: f64,
) -> Result<CrossingLevels> {
    if !(v_hi > v_lo) {
        return Err(Error::InvalidArgument("empty v interval".into()));
    }
    let probes: Vec<f64> = (0..=64).map(|k| v_lo + (v_hi - v_lo) * k as f64 / 64.0).collect();
    for w in probes.windows(2) {
        if r12(w[1]) < r12(w[0]) || r21(w[1]) > r21(w[0]) {
            return Err(Error::InvalidArgument(format!(
                "R12 must increase and R21 decrease on [{v_lo}, {v_hi}] (fails near v = {})",
                w[0]
            )));
        }
    }
    let v_star = bisect(|v| r12(v) - r21(v), v_lo, v_hi, ROOT_TOL).ok_or(Error::NoRoot("R12(v) = R21(v)"))?;
    let lambda_star = 0.5 * (r12(v_star) + r21(v_star));
    let merge_tol = 1e-12 * lambda_star.abs().max(1.0);
    if rho > lambda_star + merge_tol {
        return Err(Error::RhoAboveMerge { rho, lambda_star });
    }
    if rho >= lambda_star - merge_tol {
        return Ok(CrossingLevels {
            v_minus: v_star,
            v_plus: v_star,
            lambda_star,
            v_star,
            valid: true,
        });
    }
    let v_minus = bisect(|v| r12(v) - rho, v_lo, v_star, ROOT_TOL).ok_or(Error::NoRoot("R12(v) = rho"))?;
    let v_plus = bisect(|v| r21(v) - rho, v_star, v_hi, ROOT_TOL).ok_or(Error::NoRoot("R21(v) = rho"))?;
    Ok(CrossingLevels {
        v_minus,
        v_plus,
        lambda_star,
        v_star,
        valid: v_minus <= v_plus,
    })
}

fn trapezoid_to(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let mut n = 1usize;
    let mut h = b - a;
    let mut est = 0.5 * h * (f(a) + f(b));
    loop {
        let mid: f64 = (0..n).map(|k| f(a + (k as f64 + 0.5) * h)).sum();
        let next = 0.5 * est + 0.5 * h * mid;
        n *= 2;
        h *= 0.5;
        if (next - est).abs() <= rel * next.abs() || n >= 1 << 26 {
            return next;
        }
        est = next;
    }
}

/// `T = ∫ dv / |A1(v)| + ∫ dv / |A2(v)|` over `[v_minus, v_plus]`.
pub fn predicted_period(a1: impl Fn(f64) -> f64, a2: impl Fn(f64) -> f64, v_minus: f64, v_plus: f64) -> Result<f64> {
    if v_plus <= v_minus {
        return Ok(0.0);
    }
    for k in 0..=1000 {
        let v = v_minus + (v_plus - v_minus) * k as f64 / 1000.0;
        if !(a1(v) < 0.0 && a2(v) > 0.0) {
            return Err(Error::SignViolation {
                lo: v_minus,
                hi: v_plus,
            });
        }
    }
    let f = |v: f64| 1.0 / a1(v).abs() + 1.0 / a2(v).abs();
    Ok(trapezoid_to(&f, v_minus, v_plus, 1e-8))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reversal {
    pub time: f64,
    /// `+1` when the trace turns upward (a minimum), `-1` at a maximum.
    pub direction: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodEstimate {
    pub period: f64,
    /// Monotone phases: reversals plus one.
    pub phases: usize,
    pub reversals: Vec<Reversal>,
}

/// Direction reversals of the moving average (window 1% of the trace) with
/// a hysteresis of 10% of its range; period from same-direction gaps.
pub fn empirical_period(times: &[f64], values: &[f64]) -> Result<PeriodEstimate> {
    let n = values.len();
    if n != times.len() || n < 3 {
        return Err(Error::TooFewReversals(0));
    }
    let w = (n / 100).max(1);
    let half = w / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + values[i];
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hysteresis = 0.1 * (hi - lo);
    let mut reversals = Vec::new();
    if hysteresis > 0.0 {
        // direction unknown until the first move beyond the hysteresis
        let mut dir: i8 = 0;
        let (mut max_i, mut min_i) = (0, 0);
        for i in 1..n {
            if smooth[i] > smooth[max_i] {
                max_i = i;
            }
            if smooth[i] < smooth[min_i] {
                min_i = i;
            }
            match dir {
                0 => {
                    if smooth[i] - smooth[min_i] > hysteresis {
                        dir = 1;
                        max_i = i;
                    } else if smooth[max_i] - smooth[i] > hysteresis {
                        dir = -1;
                        min_i = i;
                    }
                }
                1 if smooth[max_i] - smooth[i] > hysteresis => {
                    reversals.push(Reversal {
                        time: times[max_i],
                        direction: -1,
                    });
                    dir = -1;
                    min_i = i;
                }
                -1 if smooth[i] - smooth[min_i] > hysteresis => {
                    reversals.push(Reversal {
                        time: times[min_i],
                        direction: 1,
                    });
                    dir = 1;
                    max_i = i;
                }
                _ => {}
            }
        }
    }
    if reversals.len() < 3 {
        return Err(Error::TooFewReversals(reversals.len()));
    }
    let gaps: Vec<f64> = reversals.windows(3).map(|r| r[2].time - r[0].time).collect();
    Ok(PeriodEstimate {
        period: gaps.iter().sum::<f64>() / gaps.len() as f64,
        phases: reversals.len() + 1,
        reversals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_follows_scaling() {
        let d = delta_from(0.02, 0.1);
        assert!((-(0.02 * (d * 0.02).ln()) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reference_triple_validates_and_runs() {
        let spec = ThreeScaleSpec::reference_triple(0.02, 0.1).unwrap();
        let mut rng = RngStream::new(1, 0);
        let run = run_three_scale(&spec, 0.1, 0.5, 0.3, 100_000, 1000, &[-1.0, 1.0], 0.2, &mut rng).unwrap();
        assert_eq!(run.trace.len(), 101);
    }

    #[test]
    fn frozen_slowest_stays_constant() {
        let spec = ThreeScaleSpec::designed(0.4, 1.0, 0.02, 0.2).unwrap().frozen_slowest();
        let mut rng = RngStream::new(3, 0);
        let run = run_three_scale(&spec, 0.3, -1.0, 0.1, 20_000, 100, &[-1.0, 1.0], 0.3, &mut rng).unwrap();
        assert!(run.trace.iter().all(|p| p.v == 0.3));
    }

    #[test]
    fn designed_averaged_drifts() {
        let spec = ThreeScaleSpec::designed(0.4, 1.0, 0.02, 0.2).unwrap();
        for v in [-0.5, 0.0, 0.7] {
            let a1 = spec.averaged_slowest_drift(v, -1.0, 256).unwrap();
            let a2 = spec.averaged_slowest_drift(v, 1.0, 256).unwrap();
            assert!((a1 + 0.5 + v * v).abs() < 1e-12);
            assert!((a2 - 0.5 - v * v).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_crossing_levels() {
        let c = crossing_levels(|v| v, |v| 1.0 - v, 0.25, 0.0, 1.0).unwrap();
        assert!((c.v_minus - 0.25).abs() < 1e-9);
        assert!((c.v_plus - 0.75).abs() < 1e-9);
        assert!((c.lambda_star - 0.5).abs() < 1e-9);
        let m = crossing_levels(|v| v, |v| 1.0 - v, c.lambda_star, 0.0, 1.0).unwrap();
        assert!((m.v_minus - m.v_plus).abs() < 1e-8);
        assert!(matches!(
            crossing_levels(|v| v, |v| 1.0 - v, 0.6, 0.0, 1.0),
            Err(Error::RhoAboveMerge { .. })
        ));
    }

    #[test]
    fn period_of_constant_drifts() {
        assert!((predicted_period(|_| -1.0, |_| 1.0, 0.0, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(predicted_period(|_| -1.0, |_| 1.0, 0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(
            predicted_period(|v| v, |_| 1.0, -0.5, 0.5),
            Err(Error::SignViolation { .. })
        ));
    }

    fn triangle(t: f64, period: f64) -> f64 {
        let p = (t / period).rem_euclid(1.0);
        if p < 0.5 {
            4.0 * p - 1.0
        } else {
            3.0 - 4.0 * p
        }
    }

    #[test]
    fn triangle_wave_period() {
        let times: Vec<f64> = (0..=20_000).map(|i| i as f64 * 0.0025).collect();
        let values: Vec<f64> = times.iter().map(|&t| triangle(t, 7.0)).collect();
        let p = empirical_period(&times, &values).unwrap();
        assert!((p.period - 7.0).abs() < 1e-6, "{}", p.period);
        assert!(p.phases >= 4);
    }

    #[test]
    fn noisy_triangle_wave_period() {
        let mut rng = RngStream::new(11, 0);
        let times: Vec<f64> = (0..=20_000).map(|i| i as f64 * 0.0025).collect();
        let values: Vec<f64> = times.iter().map(|&t| triangle(t, 7.0) + 0.01 * rng.normal()).collect();
        let p = empirical_period(&times, &values).unwrap();
        assert!((p.period - 7.0).abs() < 0.02 * 7.0, "{}", p.period);
    }

    #[test]
    fn monotone_trace_has_too_few_reversals() {
        let times: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert!(matches!(
            empirical_period(&times, &times),
            Err(Error::TooFewReversals(0))
        ));
    }

    #[test]
    fn barrier_table_of_designed_triple() {
        let spec = ThreeScaleSpec::designed(0.4, 1.0, 0.02, 0.1).unwrap();
        let table = BarrierTable::build(&spec, UniformGrid::spanning(-0.8, 0.8, 9), 64, 60).unwrap();
        let n = table.barriers.len();
        for k in 0..n {
            let (b, mirror) = (&table.barriers[k], &table.barriers[n - 1 - k]);
            assert!((b.r12 - mirror.r21).abs() < 1e-6, "{b:?} vs {mirror:?}");
            assert!(table.a1[k] < 0.0 && table.a2[k] > 0.0);
        }
        let lambda_star = table.levels(0.01).unwrap().lambda_star;
        let merged = table.levels(lambda_star).unwrap();
        assert!((merged.v_minus - merged.v_plus).abs() < 1e-8);
        let r12 = table.column(|b| b.r12);
        let mut previous: Option<(CrossingLevels, f64)> = None;
        for frac in [0.8, 0.6, 0.4] {
            let levels = table.levels(frac * lambda_star).unwrap();
            let residual = table.grid.interpolate(&r12, levels.v_minus) - frac * lambda_star;
            assert!(residual.abs() < 1e-8);
            let period = table.period(&levels).unwrap();
            if let Some((p, t)) = previous {
                assert!(levels.v_minus <= p.v_minus && levels.v_plus >= p.v_plus);
                assert!(period >= t);
            }
            previous = Some((levels, period));
        }
    }
}
