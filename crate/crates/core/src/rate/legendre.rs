use super::Extended;
use crate::error::Result;
use crate::numerics::golden_section_max;

/// `L(alpha) = sup_beta (alpha beta - H(beta))` and its maximizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegendreValue {
    pub value: Extended,
    pub beta_star: f64,
}

const BRACKET_TOL: f64 = 1e-10;

/// Legendre transform over `[-b_max, b_max]` by golden section.
///
/// When the maximizer pins to an end of the bracket and the objective is
/// still increasing there, the supremum lies outside the bracket; the result
/// is `Infinite` with the boundary value as lower bound.
pub fn legendre_l_fallible(mut h: impl FnMut(f64) -> Result<f64>, b_max: f64, alpha: f64) -> Result<LegendreValue> {
    let mut err = None;
    let mut objective = |beta: f64| match h(beta) {
        Ok(v) => alpha * beta - v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    };
    let (beta_star, value) = golden_section_max(&mut objective, -b_max, b_max, BRACKET_TOL);
    let probe = 1e-6 * b_max;
    let pinned = if beta_star >= b_max - 10.0 * BRACKET_TOL {
        Some(objective(b_max) - objective(b_max - probe) > 0.0)
    } else if beta_star <= -b_max + 10.0 * BRACKET_TOL {
        Some(objective(-b_max) - objective(-b_max + probe) > 0.0)
    } else {
        None
    };
    if let Some(e) = err {
        return Err(e);
    }
    let value = match pinned {
        Some(true) => Extended::Infinite { lower_bound: value },
        _ => Extended::Finite(value),
    };
    Ok(LegendreValue { value, beta_star })
}

/// [`legendre_l_fallible`] for an infallible cumulant.
pub fn legendre_l(h: impl Fn(f64) -> f64, b_max: f64, alpha: f64) -> LegendreValue {
    legendre_l_fallible(|b| Ok(h(b)), b_max, alpha).expect("infallible cumulant")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_cumulant_gives_quadratic_rate() {
        // H = m b + s^2 b^2 / 2  =>  L = (a - m)^2 / (2 s^2)
        let (m, s2) = (0.3, 2.0);
        let h = |b: f64| m * b + 0.5 * s2 * b * b;
        for a in [-1.0, 0.3, 2.0] {
            let l = legendre_l(h, 6.0, a);
            let exact = (a - m) * (a - m) / (2.0 * s2);
            assert!((l.value.finite().unwrap() - exact).abs() < 1e-12);
            assert!((l.beta_star - (a - m) / s2).abs() < 1e-8);
        }
    }

    #[test]
    fn rate_vanishes_at_the_mean() {
        let h = |b: f64| 0.3 * b + 0.5 * b * b;
        let l = legendre_l(h, 6.0, 0.3);
        assert!(l.value.finite().unwrap().abs() < 1e-15);
        assert!(l.beta_star.abs() < 1e-8);
    }

    #[test]
    fn velocity_beyond_range_is_infinite() {
        // bounded variable in [-1, 1]: H = log cosh(b)
        let h = |b: f64| b.cosh().ln();
        let l = legendre_l(h, 6.0, 1.2);
        match l.value {
            Extended::Infinite { lower_bound } => assert!(lower_bound > 0.0),
            v => panic!("expected infinite, got {v:?}"),
        }
        let l = legendre_l(h, 6.0, -1.5);
        assert!(!l.value.is_finite());
        assert!(legendre_l(h, 6.0, 0.5).value.is_finite());
    }
}
