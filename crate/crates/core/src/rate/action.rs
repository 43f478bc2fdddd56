use super::{CumulantModel, Extended};
use crate::error::Result;
use crate::system::PiecewisePath;

/// `S(path) = ∫ L(x_t, x_t') dt` with its per-segment contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionValue {
    pub value: Extended,
    pub segments: Vec<Extended>,
}

/// Midpoint rule per linear segment: `dt * L(x_mid, dx / dt)`.
pub fn path_action(model: &dyn CumulantModel, path: &PiecewisePath) -> Result<ActionValue> {
    let times = path.times();
    let points = path.points();
    let mut segments = Vec::with_capacity(times.len() - 1);
    let mut value = Extended::Finite(0.0);
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let (a, b) = (points[k].x(), points[k + 1].x());
        model.check_x(a)?;
        model.check_x(b)?;
        let l = model.l(0.5 * (a + b), (b - a) / dt)?.value;
        let seg = match l {
            Extended::Finite(v) => Extended::Finite(v * dt),
            Extended::Infinite { lower_bound } => Extended::Infinite {
                lower_bound: lower_bound * dt,
            },
        };
        value = value.plus(seg);
        segments.push(seg);
    }
    Ok(ActionValue { value, segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::{ExactCumulant, RateSurface, TableConfig};
    use crate::system::{iid_bessel, SlowVec};

    fn path(times: Vec<f64>, xs: Vec<f64>) -> PiecewisePath {
        PiecewisePath::new(times, xs.into_iter().map(SlowVec::scalar).collect()).unwrap()
    }

    #[test]
    fn constant_path_costs_l_at_zero_speed() {
        let s = iid_bessel(0.5, 1.0, 0.02);
        let m = ExactCumulant::new(&s, 64).unwrap();
        let p = path(vec![0.0, 1.0, 2.5], vec![0.5, 0.5, 0.5]);
        let a = path_action(&m, &p).unwrap();
        let l0 = m.l(0.5, 0.0).unwrap().value.finite().unwrap();
        assert!(l0 > 0.0);
        assert!((a.value.finite().unwrap() - 2.5 * l0).abs() < 1e-10);
        assert_eq!(a.segments.len(), 2);
    }

    #[test]
    fn too_fast_segment_is_infinite() {
        let s = iid_bessel(0.1, 1.0, 0.02);
        let m = ExactCumulant::new(&s, 64).unwrap();
        let p = path(vec![0.0, 0.1, 0.2], vec![0.0, 0.01, 0.5]);
        let a = path_action(&m, &p).unwrap();
        assert!(a.segments[0].is_finite());
        assert!(!a.segments[1].is_finite());
        assert!(!a.value.is_finite());
    }

    #[test]
    fn path_outside_tables_rejected() {
        let s = iid_bessel(0.1, 1.0, 0.02);
        let cfg = TableConfig {
            n_y: 32,
            beta_nodes: 41,
            ..TableConfig::default()
        };
        let surf = RateSurface::build(&s, -1.0, 1.0, 9, &cfg).unwrap();
        let p = path(vec![0.0, 1.0], vec![0.5, 1.5]);
        assert!(matches!(
            path_action(&surf, &p),
            Err(crate::error::Error::OutOfTableRange { .. })
        ));
    }
}
