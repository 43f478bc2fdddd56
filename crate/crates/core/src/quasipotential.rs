//! Attractors of the averaged flow, the quasipotential `R` by graph dynamic
//! programming and by momentum roots, barrier matrices `R_ij` and i-graph
//! occupation weights.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{bisect, log_sum_exp, UniformGrid};
use crate::rate::{CumulantModel, Extended};
use crate::system::{SlowBox, SlowVec};

const ZERO_TOL: f64 = 1e-12;
const DERIV_STEP: f64 = 1e-6;
const DEGENERATE: f64 = 1e-10;

/// Zeros of a 1-D averaged drift, sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct AttractorSet {
    pub attractors: Vec<SlowVec>,
    pub separators: Vec<SlowVec>,
    /// `(lo, hi)` per attractor: bounded by separators or the domain.
    pub basins: Vec<(f64, f64)>,
}

impl AttractorSet {
    pub fn len(&self) -> usize {
        self.attractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractors.is_empty()
    }

    /// Separator between attractors `k` and `k + 1`.
    pub fn separator_between(&self, k: usize) -> Result<f64> {
        let (a, b) = (self.attractors[k].x(), self.attractors[k + 1].x());
        self.separators
            .iter()
            .map(|s| s.x())
            .find(|s| *s > a && *s < b)
            .ok_or_else(|| Error::InvalidArgument(format!("no separator between {a} and {b}")))
    }

    /// Index of the basin containing `x`.
    pub fn basin_of(&self, x: f64) -> Option<usize> {
        self.basins.iter().position(|(lo, hi)| x > *lo && x < *hi)
    }
}

/// Sign-change bracketing on `n_grid` nodes, bisection to `1e-12`, and
/// classification by a centered derivative.
pub fn find_attractors(bbar: impl Fn(f64) -> Result<f64>, domain: &SlowBox, n_grid: usize) -> Result<AttractorSet> {
    if domain.dim() != 1 {
        return Err(Error::UnsupportedDimension(domain.dim()));
    }
    if n_grid < 64 {
        return Err(Error::InvalidArgument(format!(
            "n_grid must be at least 64, got {n_grid}"
        )));
    }
    let (lo, hi) = (domain.lo.x(), domain.hi.x());
    let grid = UniformGrid::spanning(lo, hi, n_grid);
    let values = grid.nodes().iter().map(|&x| bbar(x)).collect::<Result<Vec<_>>>()?;
    let mut zeros = Vec::new();
    let mut err = None;
    for k in 0..n_grid - 1 {
        let (a, b) = (values[k], values[k + 1]);
        if a == 0.0 {
            zeros.push(grid.node(k));
        } else if b != 0.0 && a.signum() != b.signum() {
            let f = |x: f64| match bbar(x) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            };
            if let Some(z) = bisect(f, grid.node(k), grid.node(k + 1), ZERO_TOL) {
                zeros.push(z);
            }
        }
    }
    if values[n_grid - 1] == 0.0 {
        zeros.push(hi);
    }
    if let Some(e) = err {
        return Err(e);
    }
    let mut attractors = Vec::new();
    let mut separators = Vec::new();
    for z in zeros {
        let d = (bbar((z + DERIV_STEP).min(hi))? - bbar((z - DERIV_STEP).max(lo))?)
            / ((z + DERIV_STEP).min(hi) - (z - DERIV_STEP).max(lo));
        if d.abs() < DEGENERATE {
            return Err(Error::DegenerateZero { x: z, derivative: d });
        }
        if d < 0.0 {
            attractors.push(SlowVec::scalar(z));
        } else {
            separators.push(SlowVec::scalar(z));
        }
    }
    if attractors.is_empty() {
        return Err(Error::NoAttractors);
    }
    let basins = attractors
        .iter()
        .map(|o| {
            let left = separators
                .iter()
                .map(|s| s.x())
                .filter(|s| *s < o.x())
                .fold(lo, f64::max);
            let right = separators
                .iter()
                .map(|s| s.x())
                .filter(|s| *s > o.x())
                .fold(hi, f64::min);
            (left, right)
        })
        .collect();
    Ok(AttractorSet {
        attractors,
        separators,
        basins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Dp,
    HjRoot,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dp => "dp",
            Method::HjRoot => "hj-root",
        }
    }
}

/// `R(source, x)` on a slow grid; `None` marks unreachable nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasipotentialField {
    pub source: SlowVec,
    pub grid: UniformGrid,
    pub r: Vec<Option<f64>>,
    pub method: Method,
}

impl QuasipotentialField {
    /// Linear interpolation between nodes.
    pub fn at(&self, x: f64) -> Extended {
        let p = ((x - self.grid.lo) / self.grid.step).clamp(0.0, (self.grid.n - 1) as f64);
        let k = (p.floor() as usize).min(self.grid.n - 2);
        let t = p - k as f64;
        match (self.r[k], self.r[k + 1]) {
            (Some(a), Some(b)) => Extended::Finite(a * (1.0 - t) + b * t),
            (a, b) => Extended::Infinite {
                lower_bound: a.or(b).unwrap_or(0.0),
            },
        }
    }
}

/// `n` speeds log-spaced in `[1e-3 K, 0.999 K]`.
pub fn log_speed_grid(k_bound: f64, n: usize) -> Vec<f64> {
    let (a, b) = ((1e-3 * k_bound).ln(), (0.999 * k_bound).ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

/// Grid graph with precomputed neighbor edge costs; solves for any source.
#[derive(Clone, Debug)]
pub struct DpGraph {
    grid: UniformGrid,
    /// `right[k]`: cost of `k -> k + 1`; `left[k]`: cost of `k + 1 -> k`.
    right: Vec<f64>,
    left: Vec<f64>,
}

fn edge_cost(model: &dyn CumulantModel, x_mid: f64, dx: f64, speeds: &[f64]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &s in speeds {
        if let Extended::Finite(l) = model.l(x_mid, dx.signum() * s)?.value {
            best = best.min(dx.abs() / s * l.max(0.0));
        }
    }
    Ok(best)
}

impl DpGraph {
    pub fn new(model: &dyn CumulantModel, grid: UniformGrid, speeds: &[f64]) -> Result<Self> {
        let (lo, hi) = model.x_range();
        let slack = 1e-9 * (hi - lo);
        if grid.lo < lo - slack || grid.hi() > hi + slack {
            return Err(Error::TableGap(format!(
                "grid [{}, {}] not covered by rates on [{lo}, {hi}]",
                grid.lo,
                grid.hi()
            )));
        }
        if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument(
                "speed grid must be nonempty and positive".into(),
            ));
        }
        let costs = (0..grid.n - 1)
            .into_par_iter()
            .map(|k| {
                let mid = 0.5 * (grid.node(k) + grid.node(k + 1));
                Ok((
                    edge_cost(model, mid, grid.step, speeds)?,
                    edge_cost(model, mid, -grid.step, speeds)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (right, left) = costs.into_iter().unzip();
        Ok(Self { grid, right, left })
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    /// Dijkstra from the node nearest to `source`.
    pub fn solve(&self, source: f64) -> QuasipotentialField {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        let n = self.grid.n;
        let start = self.grid.nearest(source);
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[start] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, start)]);
        while let Some(Item(d, k)) = heap.pop() {
            if done[k] {
                continue;
            }
            done[k] = true;
            let mut relax = |j: usize, c: f64| {
                let nd = d + c;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Item(nd, j));
                }
            };
            if k + 1 < n {
                relax(k + 1, self.right[k]);
            }
            if k > 0 {
                relax(k - 1, self.left[k - 1]);
            }
        }
        QuasipotentialField {
            source: SlowVec::scalar(self.grid.node(start)),
            grid: self.grid,
            r: dist.into_iter().map(|d| d.is_finite().then_some(d)).collect(),
            method: Method::Dp,
        }
    }
}

/// Single-source dynamic programming; see [`DpGraph`] for many sources.
pub fn quasipotential_dp(
    model: &dyn CumulantModel,
    source: f64,
    grid: UniformGrid,
    speeds: &[f64],
) -> Result<QuasipotentialField> {
    Ok(DpGraph::new(model, grid, speeds)?.solve(source))
}

/// Outcome of the momentum-root construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HjRoot {
    Cost(f64),
    /// The averaged drift does not oppose the motion at `x`; the path is
    /// (partly) downhill and its cost there is zero.
    NoSecondRoot {
        x: f64,
    },
    /// No velocity against the averaged drift is attainable at `x`; the
    /// target is unreachable and its cost infinite.
    Unreachable {
        x: f64,
    },
}

/// Nonzero root of `beta -> H(x, beta)` on the side `dir`, `0` where the
/// averaged drift vanishes, and `+inf` where `H` has stopped growing at the
/// edge of the bracket without crossing zero.
pub fn momentum_root(model: &dyn CumulantModel, x: f64, dir: f64) -> Result<Option<f64>> {
    let b = model.bbar(x)?;
    if b.abs() <= DEGENERATE {
        return Ok(Some(0.0));
    }
    if b * dir > 0.0 {
        return Ok(None);
    }
    let b_max = model.beta_max();
    let far = dir * b_max;
    let h_far = model.h(x, far)?;
    if h_far <= 0.0 {
        let inner = 0.95 * far;
        if h_far - model.h(x, inner)? <= 0.0 {
            return Ok(Some(f64::INFINITY));
        }
        return Err(Error::NoRoot("H(x, beta) = 0 inside the beta bracket"));
    }
    let mut near = 0.5 * far;
    let mut k = 0;
    while model.h(x, near)? >= 0.0 {
        near *= 0.5;
        k += 1;
        if k > 80 {
            return Ok(Some(0.0));
        }
    }
    let mut err = None;
    let root = bisect(
        |beta| match model.h(x, beta) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        near,
        far,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e);
    }
    root.map(Some).ok_or(Error::NoRoot("H(x, beta) = 0"))
}

/// `R(source -> target) = ∫ beta-hat(x) dx` by the trapezoid rule on
/// `n_cells` cells, for a path climbing against the averaged drift.
pub fn hj_root_quasipotential(model: &dyn CumulantModel, source: f64, target: f64, n_cells: usize) -> Result<HjRoot> {
    model.check_x(source)?;
    model.check_x(target)?;
    if source == target {
        return Ok(HjRoot::Cost(0.0));
    }
    let n_cells = n_cells.max(1);
    let dir = (target - source).signum();
    let dx = (target - source) / n_cells as f64;
    let mut roots = Vec::with_capacity(n_cells + 1);
    for k in 0..=n_cells {
        let x = source + dx * k as f64;
        match momentum_root(model, x, dir)? {
            Some(r) if r.is_infinite() => return Ok(HjRoot::Unreachable { x }),
            Some(r) => roots.push(r),
            None => return Ok(HjRoot::NoSecondRoot { x }),
        }
    }
    let sum: f64 = roots.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum();
    Ok(HjRoot::Cost(sum.max(0.0)))
}

/// How uphill barriers are evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum BarrierMethod {
    Dp { n_x: usize, speeds: Vec<f64> },
    HjRoot { n_cells: usize },
}

/// Barrier matrix between attractors and the derived quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionStructure {
    /// `r[i][j]`; the diagonal is unused and set to zero.
    pub r: Vec<Vec<Extended>>,
    /// `R_i = min_{j != i} R_ij`.
    pub r_min: Vec<Extended>,
    /// Climb from attractor `k` to its right separator.
    pub up_right: Vec<f64>,
    /// Climb from attractor `k` to its left separator.
    pub up_left: Vec<f64>,
}

fn composed_matrix(up_right: &[f64], up_left: &[f64]) -> Vec<Vec<Extended>> {
    let l = up_right.len();
    (0..l)
        .map(|i| {
            (0..l)
                .map(|j| {
                    let v: f64 = if j > i {
                        (i..j).map(|k| up_right[k]).sum()
                    } else if j < i {
                        (j + 1..=i).map(|k| up_left[k]).sum()
                    } else {
                        0.0
                    };
                    Extended::Finite(v)
                })
                .collect()
        })
        .collect()
}

fn min_off_diagonal(r: &[Vec<Extended>]) -> Vec<Extended> {
    (0..r.len())
        .map(|i| {
            (0..r.len())
                .filter(|j| *j != i)
                .map(|j| r[i][j])
                .min_by(|a, b| a.lower().total_cmp(&b.lower()))
                .unwrap_or(Extended::Infinite { lower_bound: 0.0 })
        })
        .collect()
}

impl TransitionStructure {
    /// From per-attractor climbs to the neighboring separators; successive
    /// climbs add up, descents are free.
    pub fn from_climbs(up_right: Vec<f64>, up_left: Vec<f64>) -> Self {
        let r = composed_matrix(&up_right, &up_left);
        let r_min = min_off_diagonal(&r);
        Self {
            r,
            r_min,
            up_right,
            up_left,
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// `R_ij` for the sorted attractors of a 1-D system.
pub fn transition_matrix(
    set: &AttractorSet,
    model: &dyn CumulantModel,
    method: &BarrierMethod,
) -> Result<TransitionStructure> {
    let l = set.len();
    if l < 2 {
        return Err(Error::InvalidArgument(
            "transition matrix needs at least two attractors".into(),
        ));
    }
    let seps = (0..l - 1)
        .map(|k| set.separator_between(k))
        .collect::<Result<Vec<_>>>()?;
    let mut up_right = vec![0.0; l];
    let mut up_left = vec![0.0; l];
    let expect_cost = |o: HjRoot| match o {
        HjRoot::Cost(r) => Ok(r),
        HjRoot::NoSecondRoot { x } => Err(Error::InvalidArgument(format!(
            "climb to the separator is not uphill at x = {x}"
        ))),
        HjRoot::Unreachable { x } => Err(Error::InvalidSystem(format!(
            "no velocity against the averaged drift is attainable at x = {x}"
        ))),
    };
    match method {
        BarrierMethod::Dp { n_x, speeds } => {
            let (lo, hi) = model.x_range();
            let graph = DpGraph::new(model, UniformGrid::spanning(lo, hi, *n_x), speeds)?;
            for k in 0..l {
                let field = graph.solve(set.attractors[k].x());
                if k + 1 < l {
                    up_right[k] = field.at(seps[k]).lower();
                }
                if k > 0 {
                    up_left[k] = field.at(seps[k - 1]).lower();
                }
            }
        }
        BarrierMethod::HjRoot { n_cells } => {
            for k in 0..l {
                let o = set.attractors[k].x();
                if k + 1 < l {
                    up_right[k] = expect_cost(hj_root_quasipotential(model, o, seps[k], *n_cells)?)?;
                }
                if k > 0 {
                    up_left[k] = expect_cost(hj_root_quasipotential(model, o, seps[k - 1], *n_cells)?)?;
                }
            }
        }
    }
    Ok(TransitionStructure::from_climbs(up_right, up_left))
}

/// Arrows `(from, to)` of one i-graph; every node but `root` emits one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IGraph {
    pub root: usize,
    pub arrows: Vec<(usize, usize)>,
}

/// All i-graphs on `ell` labels `0..ell` rooted at `root`, by brute force.
pub fn enumerate_igraphs(ell: usize, root: usize) -> Result<Vec<IGraph>> {
    if ell > 8 {
        return Err(Error::TooLarge(ell));
    }
    if ell < 2 || root >= ell {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= ell and root < ell (ell = {ell}, root = {root})"
        )));
    }
    let others: Vec<usize> = (0..ell).filter(|k| *k != root).collect();
    let m = others.len();
    let mut choice = vec![0usize; m];
    let mut out = Vec::new();
    let mut target = vec![usize::MAX; ell];
    loop {
        // targets of node others[a]: all labels except itself
        let mut ok = true;
        for (a, &from) in others.iter().enumerate() {
            let t = if choice[a] >= from { choice[a] + 1 } else { choice[a] };
            target[from] = t;
        }
        for &start in &others {
            let mut cur = start;
            let mut steps = 0;
            while cur != root {
                cur = target[cur];
                steps += 1;
                if steps > ell {
                    ok = false;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        if ok {
            out.push(IGraph {
                root,
                arrows: others.iter().map(|&f| (f, target[f])).collect(),
            });
        }
        // odometer over (ell - 1)^(ell - 1) assignments
        let mut a = 0;
        loop {
            if a == m {
                return Ok(out);
            }
            choice[a] += 1;
            if choice[a] < ell - 1 {
                break;
            }
            choice[a] = 0;
            a += 1;
        }
    }
}

/// `log Q_i` and the normalized prediction `Q_i / sum Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationWeights {
    pub epsilon: f64,
    pub log_q: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// `Q_i = sum_{g in G(i)} exp(-sum_{(k -> l) in g} R_kl / eps)`, in log space.
pub fn igraph_weights(r: &[Vec<Extended>], epsilon: f64) -> Result<OccupationWeights> {
    let ell = r.len();
    if !(epsilon > 0.0) {
        return Err(Error::BadEpsilon(epsilon));
    }
    let mut log_q = Vec::with_capacity(ell);
    for i in 0..ell {
        let terms: Vec<f64> = enumerate_igraphs(ell, i)?
            .iter()
            .map(|g| {
                let mut s = 0.0;
                for &(k, l) in &g.arrows {
                    match r[k][l] {
                        Extended::Finite(v) => s += v,
                        Extended::Infinite { .. } => return f64::NEG_INFINITY,
                    }
                }
                -s / epsilon
            })
            .collect();
        log_q.push(log_sum_exp(&terms));
    }
    let total = log_sum_exp(&log_q);
    if total == f64::NEG_INFINITY {
        return Err(Error::AllInfinite);
    }
    let prediction = log_q.iter().map(|lq| (lq - total).exp()).collect();
    Ok(OccupationWeights {
        epsilon,
        log_q,
        prediction,
    })
}

/// Point prediction `e^{R/eps}` with the band `[e^{(R - a)/eps}, e^{(R + a)/eps}]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitPrediction {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn predict_exit_time(r_i: f64, epsilon: f64, alpha: f64) -> ExitPrediction {
    ExitPrediction {
        point: (r_i / epsilon).exp(),
        lower: ((r_i - alpha) / epsilon).exp(),
        upper: ((r_i + alpha) / epsilon).exp(),
    }
}
