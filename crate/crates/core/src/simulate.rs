//! Orbits of the coupled recursion and the statistics drawn from them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{linear_fit, quantile};
use crate::rng::{replica_stream, RngStream};
use crate::system::{CirclePoint, FastDriverSpec, PiecewisePath, SlowBox, SlowVec, SystemSpec};

/// How the initial fast state is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Y0Policy {
    Fixed(f64),
    Uniform,
}

impl Y0Policy {
    /// Uniform for deterministic drivers, `Fixed(0)` otherwise.
    pub fn default_for(driver: &FastDriverSpec) -> Self {
        if driver.is_deterministic() {
            Y0Policy::Uniform
        } else {
            Y0Policy::Fixed(0.0)
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> CirclePoint {
        match self {
            Y0Policy::Fixed(y) => CirclePoint::wrap(*y),
            Y0Policy::Uniform => CirclePoint::wrap(rng.uniform()),
        }
    }
}

/// `x' = x + eps B(x, y)`, `y' = F_x(y)`; the fast update reads the old `x`.
#[inline]
pub fn step(system: &SystemSpec, x: &SlowVec, y: CirclePoint, rng: &mut RngStream) -> (SlowVec, CirclePoint) {
    let b = system.drift.eval(x, y.value());
    let y_next = system.driver.advance(x, y, rng);
    (x.add_scaled(system.epsilon, &b), y_next)
}

/// Runs `n_steps` steps and calls `visit(n, x_n)` for `n = 0..=n_steps`.
/// Returns the final state.
pub fn run_orbit(
    system: &SystemSpec,
    x0: SlowVec,
    y0: CirclePoint,
    n_steps: u64,
    rng: &mut RngStream,
    mut visit: impl FnMut(u64, &SlowVec),
) -> (SlowVec, CirclePoint) {
    let (mut x, mut y) = (x0, y0);
    visit(0, &x);
    for n in 1..=n_steps {
        (x, y) = step(system, &x, y, rng);
        visit(n, &x);
    }
    (x, y)
}

/// Equal-width bins on `[lo, hi]` plus an overflow count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    lo_bits: u64,
    hi_bits: u64,
    pub counts: Vec<u64>,
    pub total: u64,
    pub out_of_range: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "histogram needs bins >= 1 and lo < hi (got {bins} bins on [{lo}, {hi}])"
            )));
        }
        Ok(Self {
            lo_bits: lo.to_bits(),
            hi_bits: hi.to_bits(),
            counts: vec![0; bins],
            total: 0,
            out_of_range: 0,
        })
    }

    pub fn lo(&self) -> f64 {
        f64::from_bits(self.lo_bits)
    }

    pub fn hi(&self) -> f64 {
        f64::from_bits(self.hi_bits)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin of `x`; the right end `hi` falls in the last bin.
    #[inline]
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        let (lo, hi) = (self.lo(), self.hi());
        if !(x >= lo && x <= hi) {
            return None;
        }
        let k = ((x - lo) / (hi - lo) * self.bins() as f64) as usize;
        Some(k.min(self.bins() - 1))
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        self.total += 1;
        match self.bin_index(x) {
            Some(k) => self.counts[k] += 1,
            None => self.out_of_range += 1,
        }
    }

    /// `[lo, hi)` of bin `k`.
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let (lo, hi) = (self.lo(), self.hi());
        let w = (hi - lo) / self.bins() as f64;
        (
            lo + w * k as f64,
            if k + 1 == self.bins() {
                hi
            } else {
                lo + w * (k + 1) as f64
            },
        )
    }

    /// Adds the counts of a histogram with identical bins.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.lo_bits != other.lo_bits || self.hi_bits != other.hi_bits || self.bins() != other.bins() {
            return Err(Error::InvalidArgument("histograms with different bins".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self.out_of_range += other.out_of_range;
        Ok(())
    }

    /// Fraction of all samples within `radius` of any of `centers`.
    pub fn mass_near(&self, centers: &[f64], radius: f64) -> f64 {
        let inside: u64 = (0..self.bins())
            .filter(|&k| {
                let (a, b) = self.bin_edges(k);
                let mid = 0.5 * (a + b);
                centers.iter().any(|c| (mid - c).abs() <= radius)
            })
            .map(|k| self.counts[k])
            .sum();
        inside as f64 / self.total.max(1) as f64
    }
}

/// Streaming histogram of `X(n)`, `n = 0..=n_steps`, of a scalar system.
pub fn run_occupation_histogram(
    system: &SystemSpec,
    x0: f64,
    y0: Y0Policy,
    n_steps: u64,
    mut hist: Histogram,
    rng: &mut RngStream,
) -> Result<Histogram> {
    system.require_scalar()?;
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if hist.lo() > system.slow_domain.lo.x() || hist.hi() < system.slow_domain.hi.x() {
        return Err(Error::InvalidArgument(
            "histogram range must cover the slow domain".into(),
        ));
    }
    let y = y0.draw(rng);
    run_orbit(system, SlowVec::scalar(x0), y, n_steps, rng, |_, x| hist.add(x.x()));
    Ok(hist)
}

/// Occupation of `window` after the orbit first leaves `region`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowOccupation {
    pub first_exit_step: Option<u64>,
    pub in_window: u64,
    pub remaining: u64,
}

impl WindowOccupation {
    pub fn fraction(&self) -> f64 {
        self.in_window as f64 / self.remaining.max(1) as f64
    }
}

pub fn occupation_after_exit(
    system: &SystemSpec,
    x0: f64,
    y0: Y0Policy,
    n_steps: u64,
    region: (f64, f64),
    window: (f64, f64),
    rng: &mut RngStream,
) -> Result<WindowOccupation> {
    system.require_scalar()?;
    let y = y0.draw(rng);
    let mut occ = WindowOccupation {
        first_exit_step: None,
        in_window: 0,
        remaining: 0,
    };
    run_orbit(system, SlowVec::scalar(x0), y, n_steps, rng, |n, x| {
        let x = x.x();
        if occ.first_exit_step.is_none() {
            if x < region.0 || x > region.1 {
                occ.first_exit_step = Some(n);
            } else {
                return;
            }
        }
        occ.remaining += 1;
        if x >= window.0 && x <= window.1 {
            occ.in_window += 1;
        }
    });
    Ok(occ)
}

/// Classical RK4 for `dz/dt = bbar(z)` on `[0, t_end]` with nodes every `h`
/// (the last step is shortened to land on `t_end`).
pub fn integrate_averaged(
    bbar: impl Fn(&SlowVec) -> Result<SlowVec>,
    x0: SlowVec,
    t_end: f64,
    h: f64,
    domain: &SlowBox,
) -> Result<PiecewisePath> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument("integration needs h > 0 and t_end > 0".into()));
    }
    let width = domain.width();
    let mut times = vec![0.0];
    let mut points = vec![x0];
    let mut z = x0;
    let n = (t_end / h).ceil() as usize;
    for k in 1..=n {
        let t0 = h * (k - 1) as f64;
        let t1 = if k == n { t_end } else { h * k as f64 };
        let dt = t1 - t0;
        let k1 = bbar(&z)?;
        let k2 = bbar(&z.add_scaled(0.5 * dt, &k1))?;
        let k3 = bbar(&z.add_scaled(0.5 * dt, &k2))?;
        let k4 = bbar(&z.add_scaled(dt, &k3))?;
        let mut next = z;
        for (w, kk) in [(1.0, k1), (2.0, k2), (2.0, k3), (1.0, k4)] {
            next = next.add_scaled(w * dt / 6.0, &kk);
        }
        z = next;
        if !z.is_finite() || domain.excess(&z) > width {
            return Err(Error::BlowUp { t: t1 });
        }
        times.push(t1);
        points.push(z);
    }
    PiecewisePath::new(times, points)
}

/// Runs `f(replica, rng)` for `n` replicas in parallel, replica `r` owning
/// stream `replica_stream(group, r)` of `seed`; results come back in replica
/// order whatever the scheduling.
pub fn replicate<T: Send>(
    seed: u64,
    group: u64,
    n: usize,
    f: impl Fn(u64, &mut RngStream) -> T + Sync + Send,
) -> Vec<T> {
    (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, replica_stream(group, r));
            f(r, &mut rng)
        })
        .collect()
}

/// What the coupled orbit is compared with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AveragingReference {
    /// RK4 solution of the averaged equation, sampled at `t = eps n`.
    #[default]
    Ode,
    /// The averaged recursion `z' = z + eps bbar(z)`.
    Recursion,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AveragingConfig {
    pub n_replicas: usize,
    pub y0: Y0Policy,
    pub threshold: f64,
    pub reference: AveragingReference,
    pub seed: u64,
    pub group: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragingStats {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    /// Fraction of replicas whose deviation exceeds the threshold.
    pub exceedance: f64,
    /// Per replica, in replica order.
    pub deviations: Vec<f64>,
}

/// `sup_{eps n <= T} |X(n) - z(eps n)|` across replicas.
pub fn averaging_error_stat(
    system: &SystemSpec,
    bbar: impl Fn(&SlowVec) -> Result<SlowVec>,
    x0: SlowVec,
    t_end: f64,
    cfg: &AveragingConfig,
) -> Result<AveragingStats> {
    if cfg.n_replicas == 0 || !(t_end > 0.0) {
        return Err(Error::InvalidArgument("need at least one replica and T > 0".into()));
    }
    let eps = system.epsilon;
    let n_steps = (t_end / eps).round().max(1.0) as u64;
    let reference: Vec<SlowVec> = match cfg.reference {
        AveragingReference::Ode => {
            let path = integrate_averaged(&bbar, x0, eps * n_steps as f64, eps, &system.slow_domain)?;
            path.points().to_vec()
        }
        AveragingReference::Recursion => {
            let mut z = x0;
            let mut out = vec![z];
            for _ in 0..n_steps {
                z = z.add_scaled(eps, &bbar(&z)?);
                out.push(z);
            }
            out
        }
    };
    let deviations = replicate(cfg.seed, cfg.group, cfg.n_replicas, |_, rng| {
        let y = cfg.y0.draw(rng);
        let mut worst: f64 = 0.0;
        run_orbit(system, x0, y, n_steps, rng, |n, x| {
            worst = worst.max(x.dist(&reference[n as usize]));
        });
        worst
    });
    let mut sorted = deviations.clone();
    sorted.sort_by(f64::total_cmp);
    let exceed = deviations.iter().filter(|d| **d > cfg.threshold).count();
    Ok(AveragingStats {
        q50: quantile(&sorted, 0.5),
        q90: quantile(&sorted, 0.9),
        q99: quantile(&sorted, 0.99),
        exceedance: exceed as f64 / deviations.len() as f64,
        deviations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitSample {
    pub epsilon: f64,
    pub replica: u64,
    /// `eps * n` at the first step outside `V`, or the cap when censored.
    pub tau_slow: f64,
    pub censored: bool,
    pub exit_point: SlowVec,
}

/// First slow time at which the orbit is outside the closed box `v`; the
/// replica index is the low half of the stream id.
pub fn first_exit_time(
    system: &SystemSpec,
    x0: SlowVec,
    y0: Y0Policy,
    v: &SlowBox,
    cap_slow_time: f64,
    rng: &mut RngStream,
) -> ExitSample {
    let eps = system.epsilon;
    let replica = rng.stream_id() & 0xffff_ffff;
    if !v.contains(&x0) {
        return ExitSample {
            epsilon: eps,
            replica,
            tau_slow: 0.0,
            censored: false,
            exit_point: x0,
        };
    }
    let cap_steps = (cap_slow_time / eps).ceil() as u64;
    let (mut x, mut y) = (x0, y0.draw(rng));
    for n in 1..=cap_steps {
        (x, y) = step(system, &x, y, rng);
        if !v.contains(&x) {
            return ExitSample {
                epsilon: eps,
                replica,
                tau_slow: eps * n as f64,
                censored: false,
                exit_point: x,
            };
        }
    }
    ExitSample {
        epsilon: eps,
        replica,
        tau_slow: cap_slow_time,
        censored: true,
        exit_point: x,
    }
}

/// `n_replicas` parallel exits, replica `r` on stream `(group, r)`.
pub fn exit_times(
    system: &SystemSpec,
    x0: SlowVec,
    y0: Y0Policy,
    v: &SlowBox,
    cap_slow_time: f64,
    n_replicas: usize,
    seed: u64,
    group: u64,
) -> Vec<ExitSample> {
    replicate(seed, group, n_replicas, |_, rng| {
        first_exit_time(system, x0, y0, v, cap_slow_time, rng)
    })
}

/// Per-epsilon summary of exit samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitGroup {
    pub epsilon: f64,
    pub n: usize,
    pub censored: usize,
    /// Mean over uncensored replicas.
    pub mean_excluded: f64,
    /// Mean with censored replicas counted at the cap.
    pub mean_imputed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub groups: Vec<ExitGroup>,
    /// Some group's two means differ by more than 5%.
    pub means_disagree: bool,
}

/// Least squares of `log(mean tau)` (censored replicas excluded) on `1/eps`.
pub fn exit_scaling_fit(samples: &[ExitSample]) -> Result<ExitFit> {
    let mut eps: Vec<f64> = samples.iter().map(|s| s.epsilon).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 3 {
        return Err(Error::TooFewGroups(eps.len()));
    }
    let mut groups = Vec::with_capacity(eps.len());
    for &e in &eps {
        let g: Vec<&ExitSample> = samples.iter().filter(|s| s.epsilon == e).collect();
        let censored = g.iter().filter(|s| s.censored).count();
        let fraction = censored as f64 / g.len() as f64;
        if fraction >= 0.1 {
            return Err(Error::TooCensored { epsilon: e, fraction });
        }
        let kept: Vec<f64> = g.iter().filter(|s| !s.censored).map(|s| s.tau_slow).collect();
        groups.push(ExitGroup {
            epsilon: e,
            n: g.len(),
            censored,
            mean_excluded: kept.iter().sum::<f64>() / kept.len() as f64,
            mean_imputed: g.iter().map(|s| s.tau_slow).sum::<f64>() / g.len() as f64,
        });
    }
    let xs: Vec<f64> = groups.iter().map(|g| 1.0 / g.epsilon).collect();
    let ys: Vec<f64> = groups.iter().map(|g| g.mean_excluded.ln()).collect();
    let fit = linear_fit(&xs, &ys);
    let means_disagree = groups
        .iter()
        .any(|g| (g.mean_imputed / g.mean_excluded).ln().abs() > 0.05);
    Ok(ExitFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        groups,
        means_disagree,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionEntry {
    pub attractor: usize,
    pub entry_time: f64,
    /// Time since the previous logged entry (or the initial capture).
    pub sojourn: f64,
}

/// Entries of the boundary chain into attractor neighborhoods.
///
/// `entries` lists changes of attractor only; `visit_counts` counts every
/// chain step, returns to the same attractor included.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionLog {
    pub delta: f64,
    pub start_attractor: Option<usize>,
    pub start_time: f64,
    pub entries: Vec<TransitionEntry>,
    pub visit_counts: Vec<u64>,
    pub cap_reached: bool,
    pub steps: u64,
}

impl TransitionLog {
    /// Chain visit frequencies.
    pub fn visit_frequencies(&self) -> Vec<f64> {
        let total: u64 = self.visit_counts.iter().sum();
        self.visit_counts
            .iter()
            .map(|c| *c as f64 / total.max(1) as f64)
            .collect()
    }

    pub fn span(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.entry_time - self.start_time)
    }
}

/// Checks that the `2 delta` neighborhoods are disjoint and inside the domain.
pub fn check_neighborhoods(domain: &SlowBox, attractors: &[SlowVec], delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    for (i, a) in attractors.iter().enumerate() {
        let inside = a
            .as_slice()
            .iter()
            .zip(domain.lo.as_slice().iter().zip(domain.hi.as_slice()))
            .all(|(c, (l, h))| c - 2.0 * delta >= *l && c + 2.0 * delta <= *h);
        if !inside {
            return Err(Error::NeighborhoodsOverlap(format!(
                "U_2delta({a:?}) leaves the slow domain"
            )));
        }
        for b in &attractors[i + 1..] {
            if a.dist(b) <= 4.0 * delta {
                return Err(Error::NeighborhoodsOverlap(format!(
                    "{a:?} and {b:?} are closer than 4 delta = {}",
                    4.0 * delta
                )));
            }
        }
    }
    Ok(())
}

/// Records entries into `delta`-neighborhoods separated by excursions out of
/// every `2 delta`-neighborhood, until `n_transitions` changes of attractor or
/// `max_steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn transition_sequence(
    system: &SystemSpec,
    attractors: &[SlowVec],
    delta: f64,
    n_transitions: usize,
    x0: SlowVec,
    y0: Y0Policy,
    max_steps: u64,
    rng: &mut RngStream,
) -> Result<TransitionLog> {
    check_neighborhoods(&system.slow_domain, attractors, delta)?;
    let eps = system.epsilon;
    let mut log = TransitionLog {
        delta,
        start_attractor: None,
        start_time: 0.0,
        entries: Vec::new(),
        visit_counts: vec![0; attractors.len()],
        cap_reached: false,
        steps: 0,
    };
    let near = |x: &SlowVec, r: f64| attractors.iter().position(|a| a.dist(x) < r);
    let (mut x, mut y) = (x0, y0.draw(rng));
    let mut seeking = true;
    let mut last: Option<(usize, f64)> = None;
    let mut n = 0u64;
    loop {
        let t = eps * n as f64;
        if seeking {
            if let Some(i) = near(&x, delta) {
                log.visit_counts[i] += 1;
                match last {
                    None => {
                        log.start_attractor = Some(i);
                        log.start_time = t;
                        last = Some((i, t));
                    }
                    Some((j, tj)) if j != i => {
                        log.entries.push(TransitionEntry {
                            attractor: i,
                            entry_time: t,
                            sojourn: t - tj,
                        });
                        last = Some((i, t));
                    }
                    Some(_) => {}
                }
                seeking = false;
            }
        } else if near(&x, 2.0 * delta).is_none() {
            seeking = true;
        }
        if log.entries.len() >= n_transitions {
            break;
        }
        if n >= max_steps {
            log.cap_reached = true;
            break;
        }
        (x, y) = step(system, &x, y, rng);
        n += 1;
    }
    log.steps = n;
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccupationOutside {
    /// Fraction of pre-exit steps spent in `V` but outside `U_delta(O)`.
    pub fraction: f64,
    pub tau_slow: f64,
    pub censored: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn occupation_fraction_outside(
    system: &SystemSpec,
    x0: SlowVec,
    y0: Y0Policy,
    basin: &SlowBox,
    delta: f64,
    attractor: &SlowVec,
    cap_slow_time: f64,
    rng: &mut RngStream,
) -> OccupationOutside {
    let eps = system.epsilon;
    if !basin.contains(&x0) {
        return OccupationOutside {
            fraction: 0.0,
            tau_slow: 0.0,
            censored: false,
        };
    }
    let cap_steps = (cap_slow_time / eps).ceil() as u64;
    let (mut x, mut y) = (x0, y0.draw(rng));
    let mut away = 0u64;
    let mut n = 0u64;
    let censored = loop {
        if x.dist(attractor) >= delta {
            away += 1;
        }
        (x, y) = step(system, &x, y, rng);
        n += 1;
        if !basin.contains(&x) {
            break false;
        }
        if n >= cap_steps {
            break true;
        }
    };
    OccupationOutside {
        fraction: away as f64 / n as f64,
        tau_slow: eps * n as f64,
        censored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin_system, iid_bessel, symmetric_wells, DriftSpec, Polynomial};

    fn zero_drift(name: &str) -> SystemSpec {
        let mut s = builtin_system(name).unwrap();
        s.drift = DriftSpec::new("0", 0.0, 0.0, |_, _| SlowVec::scalar(0.0));
        s
    }

    #[test]
    fn expanding_step_by_hand() {
        let s = builtin_system("expanding-sym").unwrap();
        let mut rng = RngStream::new(0, 0);
        let (x, y) = step(&s, &SlowVec::scalar(0.0), CirclePoint::wrap(0.25), &mut rng);
        assert!((x.x() - 0.05).abs() < 1e-12);
        assert!((y.value() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_keeps_x() {
        for name in ["expanding-sym", "markov-sym"] {
            let s = zero_drift(name);
            let mut rng = RngStream::new(5, 1);
            let (x, _) = run_orbit(
                &s,
                SlowVec::scalar(0.7),
                CirclePoint::wrap(0.1),
                1000,
                &mut rng,
                |_, _| {},
            );
            assert_eq!(x.x(), 0.7);
        }
    }

    #[test]
    fn constant_orbit_fills_one_bin() {
        let s = zero_drift("expanding-sym");
        let mut rng = RngStream::new(1, 0);
        let h = run_occupation_histogram(
            &s,
            0.5,
            Y0Policy::Uniform,
            1000,
            Histogram::new(-3.0, 3.0, 60).unwrap(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(h.total, 1001);
        assert_eq!(h.counts[h.bin_index(0.5).unwrap()], 1001);
    }

    #[test]
    fn averaged_flow_fixed_point_and_descent() {
        let p = symmetric_wells();
        let f = |z: &SlowVec| Ok(SlowVec::scalar(p.eval(z.x())));
        let dom = SlowBox::interval(-3.0, 3.0);
        let path = integrate_averaged(f, SlowVec::scalar(2.0), 5.0, 0.01, &dom).unwrap();
        assert!(path.points().iter().all(|z| z.x() == 2.0));
        let path = integrate_averaged(f, SlowVec::scalar(0.5), 5.0, 0.01, &dom).unwrap();
        assert!(path.points().windows(2).all(|w| w[1].x() < w[0].x()));
        assert!(path.end().x() > 0.0);
    }

    #[test]
    fn rk4_converges_under_step_halving() {
        let p = symmetric_wells();
        let f = |z: &SlowVec| Ok(SlowVec::scalar(p.eval(z.x())));
        let dom = SlowBox::interval(-3.0, 3.0);
        let a = integrate_averaged(f, SlowVec::scalar(0.5), 10.0, 0.01, &dom)
            .unwrap()
            .end();
        let b = integrate_averaged(f, SlowVec::scalar(0.5), 10.0, 0.005, &dom)
            .unwrap()
            .end();
        assert!((a.x() - b.x()).abs() < 1e-8);
    }

    #[test]
    fn averaged_flow_blows_up() {
        let f = |z: &SlowVec| Ok(SlowVec::scalar(z.x() * z.x()));
        assert!(matches!(
            integrate_averaged(f, SlowVec::scalar(1.0), 10.0, 0.01, &SlowBox::interval(-2.0, 2.0)),
            Err(Error::BlowUp { .. })
        ));
    }

    #[test]
    fn exit_degenerate_and_censored() {
        let s = iid_bessel(0.1, 1.0, 0.05);
        let v = SlowBox::interval(-1.0, 1.0);
        let mut rng = RngStream::new(2, 0);
        let e = first_exit_time(&s, SlowVec::scalar(1.5), Y0Policy::Fixed(0.0), &v, 10.0, &mut rng);
        assert_eq!((e.tau_slow, e.censored, e.exit_point.x()), (0.0, false, 1.5));
        let e = first_exit_time(&s, SlowVec::scalar(0.0), Y0Policy::Fixed(0.0), &v, 0.1, &mut rng);
        assert!(e.censored);
        assert_eq!(e.tau_slow, 0.1);
    }

    fn synthetic(eps: &[f64], per: usize, tau: impl Fn(f64, usize) -> f64) -> Vec<ExitSample> {
        eps.iter()
            .flat_map(|&e| (0..per).map(move |r| (e, r)))
            .map(|(e, r)| ExitSample {
                epsilon: e,
                replica: r as u64,
                tau_slow: tau(e, r),
                censored: false,
                exit_point: SlowVec::scalar(1.0),
            })
            .collect()
    }

    #[test]
    fn exact_exponential_fit() {
        let s = synthetic(&[0.05, 0.04, 0.03, 0.02], 5, |e, _| (0.08 / e).exp());
        let fit = exit_scaling_fit(&s).unwrap();
        assert!((fit.slope - 0.08).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.means_disagree);
    }

    #[test]
    fn noisy_exponential_fit() {
        let mut rng = RngStream::new(9, 0);
        let noise: Vec<f64> = (0..4000).map(|_| (0.1 * rng.normal()).exp()).collect();
        let s = synthetic(&[0.05, 0.04, 0.03, 0.02], 1000, |e, r| {
            let k = ((1.0 / e).round() as usize) % 4;
            (0.08 / e).exp() * noise[k * 1000 + r]
        });
        let fit = exit_scaling_fit(&s).unwrap();
        assert!((fit.slope - 0.08).abs() < 0.05 * 0.08);
    }

    #[test]
    fn single_group_rejected() {
        let s = synthetic(&[0.05], 10, |_, _| 1.0);
        assert_eq!(exit_scaling_fit(&s), Err(Error::TooFewGroups(1)));
    }

    #[test]
    fn heavily_censored_group_rejected() {
        let mut s = synthetic(&[0.05, 0.04, 0.03], 10, |_, _| 1.0);
        s[0].censored = true;
        assert!(matches!(exit_scaling_fit(&s), Err(Error::TooCensored { .. })));
    }

    #[test]
    fn overlapping_neighborhoods_rejected() {
        let s = builtin_system("markov-sym").unwrap();
        let att: Vec<SlowVec> = [-2.0, 0.0, 2.0].map(SlowVec::scalar).to_vec();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            transition_sequence(
                &s,
                &att,
                0.6,
                5,
                SlowVec::scalar(0.0),
                Y0Policy::Fixed(0.0),
                10,
                &mut rng
            ),
            Err(Error::NeighborhoodsOverlap(_))
        ));
    }

    #[test]
    fn zero_drift_occupation_outside_is_zero() {
        let s = zero_drift("markov-sym");
        let mut rng = RngStream::new(0, 0);
        let o = occupation_fraction_outside(
            &s,
            SlowVec::scalar(0.0),
            Y0Policy::Fixed(0.0),
            &SlowBox::interval(-1.0, 1.0),
            0.25,
            &SlowVec::scalar(0.0),
            1.0,
            &mut rng,
        );
        assert_eq!(o.fraction, 0.0);
        assert!(o.censored);
    }

    #[test]
    fn fluctuation_free_drift_tracks_the_averaged_recursion() {
        let p = Polynomial::new(vec![0.0, -1.0]);
        let q = p.clone();
        let mut s = builtin_system("markov-sym").unwrap();
        s.drift = DriftSpec::new("-x", 3.0, 1.0, move |x, _| SlowVec::scalar(q.eval(x.x())));
        let cfg = AveragingConfig {
            n_replicas: 8,
            y0: Y0Policy::Fixed(0.0),
            threshold: 0.1,
            reference: AveragingReference::Recursion,
            seed: 0,
            group: 0,
        };
        let stats = averaging_error_stat(
            &s,
            |z| Ok(SlowVec::scalar(p.eval(z.x()))),
            SlowVec::scalar(1.0),
            1.0,
            &cfg,
        )
        .unwrap();
        assert!(stats.q99 <= 1e-6);
        assert_eq!(stats.exceedance, 0.0);
    }
}
