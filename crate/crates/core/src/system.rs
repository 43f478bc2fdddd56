//! System specification: slow state, fast circle state, drift, fast driver,
//! validation and the built-in example systems.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::resonance::ThreeScaleSpec;
use crate::rng::RngStream;

/// Point of the slow space, dimension 1 or 2.
#[derive(Clone, Copy, PartialEq)]
pub struct SlowVec {
    coords: [f64; 2],
    dim: u8,
}

impl SlowVec {
    pub fn scalar(x: f64) -> Self {
        Self {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Self { coords: [x, y], dim: 2 }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x] => Ok(Self::scalar(*x)),
            [x, y] => Ok(Self::planar(*x, *y)),
            _ => Err(Error::UnsupportedDimension(v.len())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// First coordinate; the whole state when `dim == 1`.
    #[inline]
    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    /// `self + s * v`; dimensions must agree.
    #[inline]
    pub fn add_scaled(&self, s: f64, v: &SlowVec) -> SlowVec {
        debug_assert_eq!(self.dim, v.dim);
        SlowVec {
            coords: [self.coords[0] + s * v.coords[0], self.coords[1] + s * v.coords[1]],
            dim: self.dim,
        }
    }

    pub fn dist(&self, other: &SlowVec) -> f64 {
        let dx = self.coords[0] - other.coords[0];
        let dy = self.coords[1] - other.coords[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.dist(&SlowVec {
            coords: [0.0; 2],
            dim: self.dim,
        })
    }
}

impl fmt::Debug for SlowVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// Fast state on the unit circle, always in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct CirclePoint(f64);

impl CirclePoint {
    #[inline]
    pub fn wrap(y: f64) -> Self {
        let w = y - y.floor();
        // y slightly below an integer can round up to exactly 1.0
        CirclePoint(if w >= 1.0 { 0.0 } else { w })
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

pub type DriftFn = dyn Fn(&SlowVec, f64) -> SlowVec + Send + Sync;
pub type CouplingFn = dyn Fn(&SlowVec) -> f64 + Send + Sync;
pub type KernelFn = dyn Fn(&SlowVec, f64, f64) -> f64 + Send + Sync;

/// Polynomial with coefficients in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// Max of `|p|` on `[lo, hi]` by dense scan.
    pub fn sup_abs(&self, lo: f64, hi: f64) -> f64 {
        let n = 20_000;
        (0..=n)
            .map(|k| self.eval(lo + (hi - lo) * k as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Slow drift `B(x, y)` with its declared sup bound and Lipschitz constant.
#[derive(Clone)]
pub struct DriftSpec {
    pub label: String,
    rule: Arc<DriftFn>,
    pub bound: f64,
    pub lipschitz: f64,
}

impl DriftSpec {
    pub fn new(
        label: impl Into<String>,
        bound: f64,
        lipschitz: f64,
        rule: impl Fn(&SlowVec, f64) -> SlowVec + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            rule: Arc::new(rule),
            bound,
            lipschitz,
        }
    }

    /// `B(x, y) = p(x) + amplitude * sin(2 pi y)` with bounds taken over `[lo, hi]`.
    pub fn poly_sine(poly: Polynomial, amplitude: f64, lo: f64, hi: f64) -> Self {
        let bound = poly.sup_abs(lo, hi) * (1.0 + 1e-9) + amplitude.abs();
        let lipschitz = poly.derivative().sup_abs(lo, hi) * (1.0 + 1e-9) + TAU * amplitude.abs();
        let label = format!("poly{:?}+{amplitude}*sin(2pi y)", poly.coeffs);
        Self::new(label, bound, lipschitz, move |x, y| {
            SlowVec::scalar(poly.eval(x.x()) + amplitude * (TAU * y).sin())
        })
    }

    #[inline]
    pub fn eval(&self, x: &SlowVec, y: f64) -> SlowVec {
        (self.rule)(x, y)
    }

    /// First component of `B`, the only one used when `d = 1`.
    #[inline]
    pub fn eval1(&self, x: f64, y: f64) -> f64 {
        (self.rule)(&SlowVec::scalar(x), y).x()
    }
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("label", &self.label)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Shift `c(x)` entering the fast update.
#[derive(Clone)]
pub struct Coupling {
    pub label: String,
    rule: Arc<CouplingFn>,
}

impl Coupling {
    pub fn new(label: impl Into<String>, rule: impl Fn(&SlowVec) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    /// `c(x) = x_1`, the coupling of every example system.
    pub fn slow_coordinate() -> Self {
        Self::new("x", |x| x.x())
    }

    pub fn zero() -> Self {
        Self::new("0", |_| 0.0)
    }

    #[inline]
    pub fn eval(&self, x: &SlowVec) -> f64 {
        (self.rule)(x)
    }
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coupling({})", self.label)
    }
}

/// Piecewise-constant density of the additive noise on `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDensity {
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl NoiseDensity {
    /// Density values on equal bins; not checked here, see [`validate_system`].
    pub fn from_bins(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = values
            .iter()
            .map(|v| {
                acc += v / n;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = last.max(1.0);
        }
        Self { values, cdf }
    }

    pub fn uniform() -> Self {
        Self::from_bins(vec![1.0])
    }

    pub fn bins(&self) -> &[f64] {
        &self.values
    }

    pub fn is_uniform(&self) -> bool {
        self.values.iter().all(|v| (v - 1.0).abs() < 1e-15)
    }

    /// Density at `u` (taken mod 1).
    #[inline]
    pub fn pdf(&self, u: f64) -> f64 {
        let u = CirclePoint::wrap(u).value();
        let k = ((u * self.values.len() as f64) as usize).min(self.values.len() - 1);
        self.values[k]
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = rng.uniform();
        if self.values.len() == 1 {
            return u;
        }
        let k = self.cdf.partition_point(|&c| c <= u).min(self.values.len() - 1);
        let lo = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        let width = self.cdf[k] - lo;
        let frac = if width > 0.0 { (u - lo) / width } else { 0.5 };
        (k as f64 + frac.clamp(0.0, 1.0 - 1e-16)) / self.values.len() as f64
    }
}

/// Transition density `p^x(y, z)` of a grid-supported Markov fast driver.
#[derive(Clone)]
pub struct KernelRule {
    pub label: String,
    rule: Arc<KernelFn>,
}

impl KernelRule {
    pub fn new(label: impl Into<String>, rule: impl Fn(&SlowVec, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    #[inline]
    pub fn density(&self, x: &SlowVec, y: f64, z: f64) -> f64 {
        (self.rule)(x, y, z)
    }
}

impl fmt::Debug for KernelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KernelRule({})", self.label)
    }
}

#[derive(Clone, Debug)]
pub enum FastDriverSpec {
    /// `y' = m y + c(x) mod 1`.
    DeterministicExpanding { multiplier: u32, coupling: Coupling },
    /// `y' = y + c(x) + xi mod 1`, `xi` i.i.d. with the given density.
    AdditiveMarkov { noise: NoiseDensity, coupling: Coupling },
    /// Grid chain with `P[i][j] = p^x(y_i, y_j) / n_y`.
    KernelGrid { n_y: usize, kernel: KernelRule },
}

impl FastDriverSpec {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, FastDriverSpec::DeterministicExpanding { .. })
    }

    /// Uniform additive noise: successive fast states are i.i.d. uniform.
    pub fn is_iid_uniform(&self) -> bool {
        matches!(self, FastDriverSpec::AdditiveMarkov { noise, .. } if noise.is_uniform())
    }

    /// One fast update using the pre-update slow state `x`.
    #[inline]
    pub fn advance(&self, x: &SlowVec, y: CirclePoint, rng: &mut RngStream) -> CirclePoint {
        match self {
            FastDriverSpec::DeterministicExpanding { multiplier, coupling } => {
                CirclePoint::wrap(*multiplier as f64 * y.value() + coupling.eval(x))
            }
            FastDriverSpec::AdditiveMarkov { noise, coupling } => {
                CirclePoint::wrap(y.value() + coupling.eval(x) + noise.sample(rng))
            }
            FastDriverSpec::KernelGrid { n_y, kernel } => {
                let n = *n_y;
                let i = ((y.value() * n as f64).round() as usize) % n;
                let yi = i as f64 / n as f64;
                let u = rng.uniform();
                let total: f64 = (0..n).map(|j| kernel.density(x, yi, j as f64 / n as f64)).sum();
                let mut acc = 0.0;
                for j in 0..n {
                    acc += kernel.density(x, yi, j as f64 / n as f64) / total;
                    if u < acc {
                        return CirclePoint::wrap(j as f64 / n as f64);
                    }
                }
                CirclePoint::wrap((n - 1) as f64 / n as f64)
            }
        }
    }
}

/// Closed box in the slow space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlowBox {
    pub lo: SlowVec,
    pub hi: SlowVec,
}

impl SlowBox {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: SlowVec::scalar(lo),
            hi: SlowVec::scalar(hi),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn contains(&self, x: &SlowVec) -> bool {
        x.as_slice()
            .iter()
            .zip(self.lo.as_slice().iter().zip(self.hi.as_slice()))
            .all(|(c, (l, h))| *l <= *c && *c <= *h)
    }

    /// Largest side length.
    pub fn width(&self) -> f64 {
        self.lo
            .as_slice()
            .iter()
            .zip(self.hi.as_slice())
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }

    /// Distance by which `x` lies outside the box (0 inside).
    pub fn excess(&self, x: &SlowVec) -> f64 {
        x.as_slice()
            .iter()
            .zip(self.lo.as_slice().iter().zip(self.hi.as_slice()))
            .map(|(c, (l, h))| (l - c).max(c - h).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// A coupled slow-fast system `x' = x + eps B(x, y)`, `y' = F_x(y)`.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub name: String,
    pub drift: DriftSpec,
    pub driver: FastDriverSpec,
    pub epsilon: f64,
    pub slow_domain: SlowBox,
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        self.slow_domain.dim()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> SystemSpec {
        SystemSpec {
            epsilon,
            ..self.clone()
        }
    }

    /// Fails unless the slow dimension is 1.
    pub fn require_scalar(&self) -> Result<()> {
        match self.dim() {
            1 => Ok(()),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }

    /// System with i.i.d. uniform fast noise and `B(x, y) = p(x) + c sin(2 pi y)`.
    pub fn poly_iid(name: &str, poly: Polynomial, amplitude: f64, epsilon: f64, lo: f64, hi: f64) -> Self {
        SystemSpec {
            name: name.to_string(),
            drift: DriftSpec::poly_sine(poly, amplitude, lo, hi),
            driver: FastDriverSpec::AdditiveMarkov {
                noise: NoiseDensity::uniform(),
                coupling: Coupling::slow_coordinate(),
            },
            epsilon,
            slow_domain: SlowBox::interval(lo, hi),
        }
    }
}

/// Continuous path interpolated linearly between nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePath {
    times: Vec<f64>,
    points: Vec<SlowVec>,
}

impl PiecewisePath {
    pub fn new(times: Vec<f64>, points: Vec<SlowVec>) -> Result<Self> {
        if times.len() < 2 || times.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "path needs >= 2 nodes with one point per time, got {} times / {} points",
                times.len(),
                points.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
            return Err(Error::InvalidArgument(
                "path times must increase strictly from t >= 0".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("path points must be finite".into()));
        }
        Ok(Self { times, points })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[SlowVec] {
        &self.points
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn end(&self) -> SlowVec {
        self.points[self.points.len() - 1]
    }

    /// Value at time `t`, clamped to the path's time range.
    pub fn at(&self, t: f64) -> SlowVec {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.points[0];
        }
        if k >= self.times.len() {
            return self.end();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.points[k - 1], self.points[k]);
        let mut c = a;
        c = c.add_scaled(w, &b);
        c.add_scaled(-w, &a)
    }

    /// Same path with every segment split in two.
    pub fn refined(&self) -> PiecewisePath {
        let mut times = Vec::with_capacity(2 * self.times.len());
        let mut points = Vec::with_capacity(2 * self.times.len());
        for k in 0..self.times.len() - 1 {
            let tm = 0.5 * (self.times[k] + self.times[k + 1]);
            times.push(self.times[k]);
            points.push(self.points[k]);
            times.push(tm);
            points.push(self.at(tm));
        }
        times.push(*self.times.last().unwrap());
        points.push(self.end());
        PiecewisePath { times, points }
    }
}

/// Names accepted by [`make_builtin`].
pub const BUILTIN_NAMES: [&str; 7] = [
    "expanding-sym",
    "expanding-asym",
    "markov-sym",
    "markov-asym",
    "zero-drift-doubling",
    "iid-bessel",
    "three-scale",
];

/// A built-in example: either a coupled pair or the three-scale triple.
#[derive(Clone, Debug)]
pub enum Builtin {
    TwoScale(SystemSpec),
    ThreeScale(ThreeScaleSpec),
}

impl Builtin {
    pub fn into_system(self) -> Result<SystemSpec> {
        match self {
            Builtin::TwoScale(s) => Ok(s),
            Builtin::ThreeScale(_) => Err(Error::InvalidArgument(
                "three-scale is a triple, not a two-scale system".into(),
            )),
        }
    }
}

/// `x (x^2 - 4)(1 - x^2)`: attractors -2, 0, 2, separators -1, 1.
pub fn symmetric_wells() -> Polynomial {
    Polynomial::new(vec![0.0, -4.0, 0.0, 5.0, 0.0, -1.0])
}

/// `x (x^2 - 4)(1 - x)(1.5 + x)`: the left separator moved to -3/2.
pub fn asymmetric_wells() -> Polynomial {
    Polynomial::new(vec![0.0, -6.0, 2.0, 5.5, -0.5, -1.0])
}

/// Drift `-gamma x (1 - x^2)`: attractor 0, separators -1 and 1.
pub fn single_well(gamma: f64) -> Polynomial {
    Polynomial::new(vec![0.0, -gamma, 0.0, gamma])
}

/// `b(x) + c sin(2 pi y)` with `b = -gamma x (1 - x^2)` and uniform i.i.d. fast noise.
pub fn iid_bessel(gamma: f64, amplitude: f64, epsilon: f64) -> SystemSpec {
    SystemSpec::poly_iid("iid-bessel", single_well(gamma), amplitude, epsilon, -2.0, 2.0)
}

fn expanding(
    name: &str,
    poly: Polynomial,
    multiplier: u32,
    amplitude: f64,
    epsilon: f64,
    lo: f64,
    hi: f64,
) -> SystemSpec {
    SystemSpec {
        name: name.to_string(),
        drift: DriftSpec::poly_sine(poly, amplitude, lo, hi),
        driver: FastDriverSpec::DeterministicExpanding {
            multiplier,
            coupling: Coupling::slow_coordinate(),
        },
        epsilon,
        slow_domain: SlowBox::interval(lo, hi),
    }
}

pub fn make_builtin(name: &str) -> Result<Builtin> {
    let sys = match name {
        "expanding-sym" => expanding(name, symmetric_wells(), 3, 50.0, 1e-3, -3.0, 3.0),
        "expanding-asym" => expanding(name, asymmetric_wells(), 3, 50.0, 1e-3, -3.0, 3.0),
        "markov-sym" => SystemSpec::poly_iid(name, symmetric_wells(), 50.0, 1e-3, -3.0, 3.0),
        "markov-asym" => SystemSpec::poly_iid(name, asymmetric_wells(), 50.0, 1e-3, -3.0, 3.0),
        "zero-drift-doubling" => expanding(name, Polynomial::new(vec![0.0]), 2, 1.0, 1e-3, -2.0, 2.0),
        "iid-bessel" => iid_bessel(0.1, 1.0, 1.0 / 40.0),
        "three-scale" => return Ok(Builtin::ThreeScale(ThreeScaleSpec::reference_triple(0.02, 0.1)?)),
        _ => return Err(Error::UnknownName(name.to_string())),
    };
    Ok(Builtin::TwoScale(sys))
}

/// Shorthand for the two-scale built-ins.
pub fn builtin_system(name: &str) -> Result<SystemSpec> {
    make_builtin(name)?.into_system()
}

const PROBES: usize = 64;
const ROW_TOL: f64 = 1e-9;

fn probe_points(domain: &SlowBox) -> Vec<SlowVec> {
    let lo = domain.lo.as_slice();
    let hi = domain.hi.as_slice();
    let at = |k: usize, d: usize| lo[d] + (hi[d] - lo[d]) * k as f64 / (PROBES - 1) as f64;
    match domain.dim() {
        1 => (0..PROBES).map(|k| SlowVec::scalar(at(k, 0))).collect(),
        // diagonal plus anti-diagonal keeps the probe count at 2 * 64
        _ => (0..PROBES)
            .flat_map(|k| {
                [
                    SlowVec::planar(at(k, 0), at(k, 1)),
                    SlowVec::planar(at(k, 0), at(PROBES - 1 - k, 1)),
                ]
            })
            .collect(),
    }
}

/// Checks every declared invariant of `spec` on probe grids.
pub fn validate_system(spec: SystemSpec) -> Result<SystemSpec> {
    if !(spec.epsilon > 0.0 && spec.epsilon < 1.0) {
        return Err(Error::BadEpsilon(spec.epsilon));
    }
    let dom = &spec.slow_domain;
    if dom.lo.dim() != dom.hi.dim() || !(1..=2).contains(&dom.dim()) {
        return Err(Error::UnsupportedDimension(dom.lo.dim().max(dom.hi.dim())));
    }
    if dom
        .lo
        .as_slice()
        .iter()
        .zip(dom.hi.as_slice())
        .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
    {
        return Err(Error::InvalidSystem("slow domain is empty or unbounded".into()));
    }
    if !(spec.drift.bound.is_finite() && spec.drift.bound >= 0.0) {
        return Err(Error::InvalidSystem("drift bound must be finite".into()));
    }
    let probes = probe_points(dom);
    for x in &probes {
        for j in 0..PROBES {
            let y = j as f64 / PROBES as f64;
            let b = spec.drift.eval(x, y);
            if b.dim() != dom.dim() || !b.is_finite() {
                return Err(Error::InvalidSystem(format!(
                    "drift is not a finite {}-vector at {x:?}",
                    dom.dim()
                )));
            }
            if b.norm() > spec.drift.bound * (1.0 + 1e-12) {
                return Err(Error::BoundViolated {
                    observed: b.norm(),
                    bound: spec.drift.bound,
                    x: x.x(),
                    y,
                });
            }
        }
    }
    match &spec.driver {
        FastDriverSpec::DeterministicExpanding { multiplier, coupling } => {
            if *multiplier < 2 {
                return Err(Error::InvalidSystem(format!(
                    "expanding multiplier must be >= 2, got {multiplier}"
                )));
            }
            if probes.iter().any(|x| !coupling.eval(x).is_finite()) {
                return Err(Error::InvalidSystem("coupling is not finite".into()));
            }
        }
        FastDriverSpec::AdditiveMarkov { noise, coupling } => {
            if noise.bins().is_empty() {
                return Err(Error::InvalidSystem("noise density has no bins".into()));
            }
            if let Some((index, &value)) = noise.bins().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::NegativeDensity { index, value });
            }
            let sum = noise.bins().iter().sum::<f64>() / noise.bins().len() as f64;
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::NonStochasticRow { row: 0, sum });
            }
            if probes.iter().any(|x| !coupling.eval(x).is_finite()) {
                return Err(Error::InvalidSystem("coupling is not finite".into()));
            }
        }
        FastDriverSpec::KernelGrid { n_y, kernel } => {
            let n = *n_y;
            if n < 2 {
                return Err(Error::InvalidSystem("kernel grid needs n_y >= 2".into()));
            }
            // a handful of slow probes; each costs n^2 density calls
            for x in probes.iter().step_by(PROBES / 8) {
                for i in 0..n {
                    let yi = i as f64 / n as f64;
                    let mut sum = 0.0;
                    for j in 0..n {
                        let p = kernel.density(x, yi, j as f64 / n as f64);
                        if !(p >= 0.0) {
                            return Err(Error::NegativeDensity {
                                index: i * n + j,
                                value: p,
                            });
                        }
                        sum += p / n as f64;
                    }
                    if (sum - 1.0).abs() > ROW_TOL {
                        return Err(Error::NonStochasticRow { row: i, sum });
                    }
                }
            }
        }
    }
    Ok(spec)
}
