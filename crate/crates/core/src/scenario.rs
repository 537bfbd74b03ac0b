//! Benchmark setup: square basin with a circular ocean current and a moving
//! cyclone crossing the domain along its diagonal.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{ScalarField, VectorField2};
use crate::mesh::{QuadMesh, Rect};
use crate::model::rheology::{Mat2, Vec2};
use crate::model::{GoalSpec, PhysParams};
use crate::solver::State;

pub const KM: f64 = 1e3;
pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 86400.0;

/// Named benchmark presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// One day, compact ice, goal in the upper-right corner.
    Benchmark1Day,
    /// 33 days, 90% concentration, goal region near the center.
    Benchmark33Day,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benchmark1day" => Ok(Preset::Benchmark1Day),
            "benchmark33day" => Ok(Preset::Benchmark33Day),
            _ => Err(Error::InvalidArgument(format!("unknown scenario '{s}'"))),
        }
    }
}

/// Complete problem description: geometry, data, physics and goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub domain: Rect,
    /// Final time (s).
    pub t_end: f64,
    /// Initial concentration (uniform).
    pub a0: f64,
    /// Mean initial thickness (m) and the amplitude of its cosine modulation.
    pub h0_mean: f64,
    pub h0_amplitude: f64,
    /// Ocean current amplitude (m/s); zero disables the current.
    pub ocean_speed: f64,
    /// Wind amplitude (m/s); zero disables the wind.
    pub wind_speed: f64,
    /// Convergence angles (degrees) on legs toward the upper-right and the lower-left corner.
    pub alpha_up_deg: f64,
    pub alpha_down_deg: f64,
    pub params: PhysParams,
    pub goal: GoalSpec,
}

impl Scenario {
    pub fn preset(p: Preset) -> Self {
        let domain = Rect::square(500.0 * KM);
        let (t_end, a0, region) = match p {
            Preset::Benchmark1Day => (DAY, 1.0, Rect::new(375.0 * KM, 375.0 * KM, 500.0 * KM, 500.0 * KM)),
            Preset::Benchmark33Day => (33.0 * DAY, 0.9, Rect::new(250.0 * KM, 250.0 * KM, 375.0 * KM, 375.0 * KM)),
        };
        Scenario {
            domain,
            t_end,
            a0,
            h0_mean: 0.3,
            h0_amplitude: 0.005,
            ocean_speed: 0.01,
            wind_speed: 15.0,
            alpha_up_deg: 90.0 - 18.0,
            alpha_down_deg: 90.0 - 9.0,
            params: PhysParams::default(),
            goal: GoalSpec {
                region: region.expect("preset region is valid"),
                t1: 0.0,
                t2: t_end,
            },
        }
    }

    pub fn benchmark_1day() -> Self {
        Self::preset(Preset::Benchmark1Day)
    }

    pub fn benchmark_33day() -> Self {
        Self::preset(Preset::Benchmark33Day)
    }

    /// Shortens or extends the horizon; the goal window follows the horizon.
    pub fn with_horizon(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self.goal.t1 = 0.0;
        self.goal.t2 = t_end;
        self
    }

    /// Same setup with ocean current and wind switched off.
    pub fn without_forcing(mut self) -> Self {
        self.ocean_speed = 0.0;
        self.wind_speed = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(0.0..=1.0).contains(&self.a0) {
            return Err(Error::InvalidArgument(format!("initial concentration {} outside [0,1]", self.a0)));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument("final time must be positive".into()));
        }
        self.goal.validate(&self.domain, self.t_end)
    }

    pub fn initial_h(&self, x: f64, y: f64) -> f64 {
        self.h0_mean + self.h0_amplitude * ((x / (25.0 * KM)).cos() + (y / (50.0 * KM)).cos())
    }

    pub fn ocean_velocity(&self, x: f64, y: f64) -> Vec2 {
        let c = 250.0 * KM;
        [self.ocean_speed * (y / c - 1.0), self.ocean_speed * (1.0 - x / c)]
    }

    /// Cyclone center (m) and whether it moves toward the upper-right corner.
    pub fn wind_center(&self, t: f64) -> (Vec2, bool) {
        let d = t / DAY;
        let (pos, up) = if d <= 4.0 {
            (250.0 + 50.0 * d, true)
        } else {
            let u = d - 4.0;
            let leg = (u / 8.0).floor();
            let frac = u / 8.0 - leg;
            if leg as i64 % 2 == 0 {
                (450.0 - 400.0 * frac, false)
            } else {
                (50.0 + 400.0 * frac, true)
            }
        };
        ([pos * KM, pos * KM], up)
    }

    pub fn wind_velocity(&self, x: f64, y: f64, t: f64) -> Vec2 {
        if self.wind_speed == 0.0 {
            return [0.0, 0.0];
        }
        let (m, up) = self.wind_center(t);
        let alpha = if up { self.alpha_up_deg } else { self.alpha_down_deg } * PI / 180.0;
        let dx = (x - m[0]) / KM;
        let dy = (y - m[1]) / KM;
        let r = dx.hypot(dy);
        let omega = (-r / 100.0).exp() / 50.0;
        let rot = rotation(alpha);
        let s = self.wind_speed * omega;
        [s * (rot[0][0] * dx + rot[0][1] * dy), s * (rot[1][0] * dx + rot[1][1] * dy)]
    }

    /// Initial state interpolated on `mesh`.
    pub fn initial_state(&self, mesh: &Arc<QuadMesh>) -> State {
        State {
            v: VectorField2::zeros(mesh.clone()),
            a: ScalarField::constant(mesh.clone(), self.a0),
            h: ScalarField::interpolate(mesh.clone(), |x, y| self.initial_h(x, y)),
        }
    }

    /// Number of steps of size `k` covering the horizon; `k` must divide it.
    pub fn steps(&self, k: f64) -> Result<usize> {
        if !(k > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        let n = (self.t_end / k).round();
        if n < 1.0 || ((n * k - self.t_end) / self.t_end).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "time step {k} s does not divide the horizon {} s",
                self.t_end
            )));
        }
        Ok(n as usize)
    }
}

pub fn rotation(alpha: f64) -> Mat2 {
    let (s, c) = alpha.sin_cos();
    [[c, s], [-s, c]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn initial_thickness() {
        let s = Scenario::benchmark_1day();
        assert_relative_eq!(s.initial_h(0.0, 0.0), 0.31);
        assert_relative_eq!(s.initial_h(25.0 * PI * KM, 50.0 * PI * KM), 0.29, epsilon = 1e-15);
        for i in 0..50 {
            let h = s.initial_h(i as f64 * 10.0 * KM, i as f64 * 7.0 * KM);
            assert!((0.29..=0.31).contains(&h));
        }
    }

    #[test]
    fn ocean_examples() {
        let s = Scenario::benchmark_1day();
        assert_eq!(s.ocean_velocity(250.0 * KM, 250.0 * KM), [0.0, 0.0]);
        let v = s.ocean_velocity(500.0 * KM, 250.0 * KM);
        assert_relative_eq!(v[1], -0.01);
        assert_eq!(v[0], 0.0);
        assert_eq!(s.ocean_velocity(250.0 * KM, 0.0), [-0.01, 0.0]);
    }

    #[test]
    fn ocean_is_rigid_rotation() {
        let s = Scenario::benchmark_1day();
        let e = 1.0;
        for &(x, y) in &[(10e3, 20e3), (300e3, 120e3), (480e3, 499e3)] {
            let dx = |f: &dyn Fn(f64, f64) -> f64| (f(x + e, y) - f(x - e, y)) / (2.0 * e);
            let dy = |f: &dyn Fn(f64, f64) -> f64| (f(x, y + e) - f(x, y - e)) / (2.0 * e);
            let u = |x: f64, y: f64| s.ocean_velocity(x, y)[0];
            let v = |x: f64, y: f64| s.ocean_velocity(x, y)[1];
            assert!((dx(&u) + dy(&v)).abs() < 1e-15);
            assert_relative_eq!(dx(&v) - dy(&u), -0.02 / (250.0 * KM), max_relative = 1e-8);
        }
    }

    #[test]
    fn wind_track() {
        let s = Scenario::benchmark_1day();
        assert_eq!(s.wind_center(0.0).0, [250.0 * KM; 2]);
        assert_eq!(s.wind_center(4.0 * DAY).0, [450.0 * KM; 2]);
        assert_eq!(s.wind_center(8.0 * DAY).0, [250.0 * KM; 2]);
        assert_eq!(s.wind_center(12.0 * DAY).0, [50.0 * KM; 2]);
        assert_relative_eq!(s.wind_center(20.0 * DAY).0[0], 450.0 * KM);
        assert!(s.wind_center(1.0 * DAY).1);
        assert!(!s.wind_center(5.0 * DAY).1);
        assert!(s.wind_center(13.0 * DAY).1);
        // Constant speed: 400 km per 8 days on both long legs.
        let a = s.wind_center(6.0 * DAY).0[0];
        let b = s.wind_center(7.0 * DAY).0[0];
        assert_relative_eq!(a - b, 50.0 * KM, max_relative = 1e-12);
    }

    #[test]
    fn wind_shape() {
        let s = Scenario::benchmark_1day();
        let t = 2.5 * DAY;
        let (m, _) = s.wind_center(t);
        assert_eq!(s.wind_velocity(m[0], m[1], t), [0.0, 0.0]);
        let at = |r: f64| {
            let w = s.wind_velocity(m[0] + r * KM, m[1], t);
            w[0].hypot(w[1])
        };
        assert_relative_eq!(at(100.0), 15.0 * 0.02 * 100.0 * (-1f64).exp(), max_relative = 1e-12);
        assert!(at(2000.0) < 1e-3);
        assert!(at(100.0) > at(50.0) && at(100.0) > at(200.0));
        assert_eq!(s.without_forcing().wind_velocity(0.0, 0.0, t), [0.0, 0.0]);
    }

    #[test]
    fn rotation_matrix() {
        assert_eq!(rotation(0.0), [[1.0, 0.0], [-0.0, 1.0]]);
        let r = rotation(PI / 2.0);
        assert!((r[0][1] - 1.0).abs() < 1e-15 && (r[1][0] + 1.0).abs() < 1e-15);
        for a in [0.3, 1.2, 2.5] {
            let r = rotation(a);
            assert_relative_eq!(r[0][0] * r[1][1] - r[0][1] * r[1][0], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn step_count() {
        let s = Scenario::benchmark_1day();
        assert_eq!(s.steps(8.0 * HOUR).unwrap(), 3);
        assert_eq!(s.steps(DAY).unwrap(), 1);
        assert!(s.steps(7.0 * HOUR).is_err());
        assert!(s.steps(0.0).is_err());
    }
}
