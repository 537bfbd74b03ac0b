//! Time-averaged ice extent over a subdomain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Rect;

/// Area unit of reported goal values, (100 km)^2 in m^2.
pub const REFERENCE_AREA: f64 = 1e10;

/// `J(U) = 1/(t2 - t1) int_{t1}^{t2} int_{region} A dx dt`, in units of [`REFERENCE_AREA`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub region: Rect,
    pub t1: f64,
    pub t2: f64,
}

impl GoalSpec {
    pub fn new(region: Rect, t1: f64, t2: f64) -> Result<Self> {
        if !(t2 > t1) {
            return Err(Error::InvalidArgument(format!("empty goal window [{t1}, {t2}]")));
        }
        Ok(GoalSpec { region, t1, t2 })
    }

    /// Checks that the goal lies within the space-time domain.
    pub fn validate(&self, domain: &Rect, t_end: f64) -> Result<()> {
        if !(self.t2 > self.t1) || self.t1 < 0.0 || self.t2 > t_end * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "goal window [{}, {}] outside [0, {t_end}]",
                self.t1, self.t2
            )));
        }
        if !domain.contains_rect(&self.region) {
            return Err(Error::InvalidArgument("goal region outside the domain".into()));
        }
        Ok(())
    }

    /// Weight of a dG(0) value on `(t0, t1]` in the goal (time share / area unit).
    pub fn step_weight(&self, t0: f64, t1: f64) -> f64 {
        let overlap = (t1.min(self.t2) - t0.max(self.t1)).max(0.0);
        overlap / (self.t2 - self.t1) / REFERENCE_AREA
    }

    /// Relative position in `(t0, t1)` of the midpoint of the overlap with the window.
    pub fn overlap_midpoint(&self, t0: f64, t1: f64) -> f64 {
        let a = t0.max(self.t1);
        let b = t1.min(self.t2);
        (0.5 * (a + b) - t0) / (t1 - t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights() {
        let g = GoalSpec::new(Rect::square(1.0), 0.0, 10.0).unwrap();
        assert_eq!(g.step_weight(0.0, 5.0) * REFERENCE_AREA, 0.5);
        let g = GoalSpec::new(Rect::square(1.0), 2.0, 4.0).unwrap();
        assert_eq!(g.step_weight(0.0, 3.0) * REFERENCE_AREA, 0.5);
        assert_eq!(g.step_weight(5.0, 6.0), 0.0);
        assert_eq!(g.overlap_midpoint(0.0, 4.0), 0.75);
        assert!(GoalSpec::new(Rect::square(1.0), 1.0, 1.0).is_err());
    }
}
