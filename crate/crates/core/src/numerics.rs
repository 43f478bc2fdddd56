//! Small scalar numerical routines shared across modules.

/// Uniformly spaced nodes `lo + k * step`, `k = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl UniformGrid {
    /// `n` nodes spanning `[lo, hi]` inclusive.
    pub fn spanning(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2 && hi > lo, "grid needs n >= 2 and hi > lo");
        Self {
            lo,
            step: (hi - lo) / (n - 1) as f64,
            n,
        }
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.lo + self.step * k as f64
    }

    pub fn hi(&self) -> f64 {
        self.node(self.n - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-9 * self.step;
        x >= self.lo - slack && x <= self.hi() + slack
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        (((x - self.lo) / self.step).round().max(0.0) as usize).min(self.n - 1)
    }

    /// Four-point Lagrange interpolation of `values` (one per node) at `x`.
    /// Near the ends the stencil shifts inward; grids of fewer than 4 nodes
    /// fall back to linear interpolation.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let p = (x - self.lo) / self.step;
        if self.n < 4 {
            let k = (p.floor().max(0.0) as usize).min(self.n - 2);
            let t = p - k as f64;
            return values[k] * (1.0 - t) + values[k + 1] * t;
        }
        let (k, w) = self.stencil(x);
        w[0] * values[k] + w[1] * values[k + 1] + w[2] * values[k + 2] + w[3] * values[k + 3]
    }

    /// First node index and weights of the four-point stencil used at `x`
    /// (requires `n >= 4`).
    pub fn stencil(&self, x: f64) -> (usize, [f64; 4]) {
        debug_assert!(self.n >= 4);
        let p = (x - self.lo) / self.step;
        let k = (p.floor() as isize).clamp(1, self.n as isize - 3) as usize;
        (k - 1, lagrange4(p - k as f64))
    }
}

/// Weights of cubic Lagrange interpolation through nodes `-1, 0, 1, 2` at `t`.
#[inline]
pub fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximizer and maximum of a unimodal `f` on `[a, b]`; stops once the
/// bracket is shorter than `tol`.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)];
    candidates.into_iter().fold(
        (a, f64::NEG_INFINITY),
        |best, cand| if cand.1 > best.1 { cand } else { best },
    )
}

/// Root of `f` in `[a, b]` by bisection; `f(a)` and `f(b)` must differ in sign.
/// Returns `None` when they do not.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// `log(sum(exp(v)))` without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let k = h.floor() as usize;
    if k + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[k] + (h - k as f64) * (sorted[k + 1] - sorted[k])
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Centered difference derivative.
#[inline]
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
