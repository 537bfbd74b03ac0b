//! Space-time forms of the coupled (`B`) and partitioned (`B_s`) schemes,
//! the splitting defect `beta = B_s - B`, their directional derivatives and
//! the goal functional.
//!
//! Trial, test and direction functions are linear in time on every step and
//! may jump at the step points. Each step `(t_{n-1}, t_n]` carries a left
//! value (at `t_{n-1}^+`) and a right value (at `t_n^-`); the value before
//! the first step is stored separately. dG(0) functions have equal left and
//! right values. Time integrals use the midpoint rule, which is exact for
//! dG(0) trials; forcing data of step `n` is taken at `t_n` as in the solver.
//! In space every field is an element-wise biquadratic, so bilinear solver
//! fields and reconstructed weights share one representation.
//!
//! All forms are returned localized per step and per element.

use std::sync::Arc;

use rayon::prelude::*;

use super::rheology::{self, coriolis, ddot, Mat2, Vec2};
use super::{GoalSpec, PhysParams};
use crate::error::{Error, Result};
use crate::fem::{clipped_local_integrals, reconstruct_space_values, BasisTable, LocalField, QuadratureRule};
use crate::mesh::QuadMesh;
use crate::scenario::Scenario;
use crate::solver::State;

/// Velocity, concentration and thickness at one time as element-wise fields.
#[derive(Clone, Debug)]
pub struct FieldSet {
    pub v: [LocalField; 2],
    pub a: LocalField,
    pub h: LocalField,
}

impl FieldSet {
    pub fn zeros(n_elements: usize) -> Self {
        FieldSet {
            v: [LocalField::zeros(n_elements), LocalField::zeros(n_elements)],
            a: LocalField::zeros(n_elements),
            h: LocalField::zeros(n_elements),
        }
    }

    /// Exact embedding of the bilinear fields of a state.
    pub fn from_state(s: &State) -> Self {
        let m = s.mesh();
        FieldSet {
            v: [LocalField::from_q1(m, s.v.x.values()), LocalField::from_q1(m, s.v.y.values())],
            a: LocalField::from_q1(m, s.a.values()),
            h: LocalField::from_q1(m, s.h.values()),
        }
    }

    /// Patch-wise biquadratic reconstruction of a state.
    pub fn reconstructed(s: &State) -> Result<Self> {
        let m = s.mesh();
        Ok(FieldSet {
            v: [
                reconstruct_space_values(m, s.v.x.values())?,
                reconstruct_space_values(m, s.v.y.values())?,
            ],
            a: reconstruct_space_values(m, s.a.values())?,
            h: reconstruct_space_values(m, s.h.values())?,
        })
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &FieldSet, b: f64) -> FieldSet {
        FieldSet {
            v: [self.v[0].lin_comb(a, &other.v[0], b), self.v[1].lin_comb(a, &other.v[1], b)],
            a: self.a.lin_comb(a, &other.a, b),
            h: self.h.lin_comb(a, &other.h, b),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.a.values.len()
    }

    fn fields(&self) -> [&LocalField; 4] {
        [&self.v[0], &self.v[1], &self.a, &self.h]
    }
}

/// Function on the time grid, linear on each step.
#[derive(Clone, Debug)]
pub struct SpaceTimeFn {
    /// Value at `t_0^-`.
    pub initial: Arc<FieldSet>,
    /// `steps[n-1] = [left, right]` on `(t_{n-1}, t_n]`.
    pub steps: Vec<[Arc<FieldSet>; 2]>,
}

impl SpaceTimeFn {
    /// Piecewise constant function with value `levels[n-1]` on step `n`.
    pub fn dg0(initial: FieldSet, levels: Vec<FieldSet>) -> Self {
        SpaceTimeFn {
            initial: Arc::new(initial),
            steps: levels
                .into_iter()
                .map(|l| {
                    let l = Arc::new(l);
                    [l.clone(), l]
                })
                .collect(),
        }
    }

    /// dG(0) embedding of the states `s_0, ..., s_N` of a trajectory.
    pub fn from_states(states: &[State]) -> Self {
        let initial = FieldSet::from_state(&states[0]);
        SpaceTimeFn::dg0(initial, states[1..].iter().map(FieldSet::from_state).collect())
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_elements(&self) -> usize {
        self.initial.n_elements()
    }

    /// Value at `t_{n-1}^-`, i.e. the right value of the previous step.
    pub fn before(&self, n: usize) -> &FieldSet {
        if n == 1 {
            &self.initial
        } else {
            &self.steps[n - 2][1]
        }
    }

    pub fn left(&self, n: usize) -> &FieldSet {
        &self.steps[n - 1][0]
    }

    pub fn right(&self, n: usize) -> &FieldSet {
        &self.steps[n - 1][1]
    }

    /// `a * self + b * other`, step by step.
    pub fn lin_comb(&self, a: f64, other: &SpaceTimeFn, b: f64) -> SpaceTimeFn {
        SpaceTimeFn {
            initial: Arc::new(self.initial.lin_comb(a, &other.initial, b)),
            steps: self
                .steps
                .iter()
                .zip(&other.steps)
                .map(|(x, y)| {
                    if Arc::ptr_eq(&x[0], &x[1]) && Arc::ptr_eq(&y[0], &y[1]) {
                        let l = Arc::new(x[0].lin_comb(a, &y[0], b));
                        [l.clone(), l]
                    } else {
                        [Arc::new(x[0].lin_comb(a, &y[0], b)), Arc::new(x[1].lin_comb(a, &y[1], b))]
                    }
                })
                .collect(),
        }
    }
}

/// Form values split by step and by element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Localized {
    pub per_step: Vec<f64>,
    pub per_element: Vec<f64>,
}

impl Localized {
    pub fn zeros(n_steps: usize, n_elements: usize) -> Self {
        Localized {
            per_step: vec![0.0; n_steps],
            per_element: vec![0.0; n_elements],
        }
    }

    pub fn total(&self) -> f64 {
        self.per_step.iter().sum()
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &Localized) {
        for (x, y) in self.per_step.iter_mut().zip(&other.per_step) {
            *x += c * y;
        }
        for (x, y) in self.per_element.iter_mut().zip(&other.per_element) {
            *x += c * y;
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.per_step.iter_mut().for_each(|x| *x *= c);
        self.per_element.iter_mut().for_each(|x| *x *= c);
        self
    }
}

/// Which space-time form to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// Partitioned scheme: momentum coefficients lagged to `t_{n-1}`.
    Split,
    /// Monolithic scheme.
    Coupled,
    /// `Split - Coupled`, evaluated term by term.
    Defect,
}

/// Point values of one field set: velocity, velocity gradient, A, grad A, H, grad H.
#[derive(Clone, Copy, Debug, Default)]
struct Pt {
    v: Vec2,
    g: Mat2,
    a: f64,
    ga: Vec2,
    h: f64,
    gh: Vec2,
}

impl Pt {
    fn at(f: &FieldSet, e: usize, hs: [f64; 2], table: &BasisTable, q: usize) -> Pt {
        let [vx, vy, a, h] = f.fields().map(|l| l.eval_table(e, hs, table, q));
        Pt {
            v: [vx.0, vy.0],
            g: [vx.1, vy.1],
            a: a.0,
            ga: a.1,
            h: h.0,
            gh: h.1,
        }
    }

    fn mid(x: &Pt, y: &Pt) -> Pt {
        let m = |a: f64, b: f64| 0.5 * (a + b);
        Pt {
            v: [m(x.v[0], y.v[0]), m(x.v[1], y.v[1])],
            g: [
                [m(x.g[0][0], y.g[0][0]), m(x.g[0][1], y.g[0][1])],
                [m(x.g[1][0], y.g[1][0]), m(x.g[1][1], y.g[1][1])],
            ],
            a: m(x.a, y.a),
            ga: [m(x.ga[0], y.ga[0]), m(x.ga[1], y.ga[1])],
            h: m(x.h, y.h),
            gh: [m(x.gh[0], y.gh[0]), m(x.gh[1], y.gh[1])],
        }
    }
}

#[inline]
fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn div(g: &Mat2) -> f64 {
    g[0][0] + g[1][1]
}

/// Trial values at one point: before the step, left, right and midpoint.
struct Trial {
    p: Pt,
    l: Pt,
    r: Pt,
    m: Pt,
}

/// Test values at one point: left and midpoint.
struct Test {
    l: Pt,
    m: Pt,
}

/// Transport part of the integrand (identical in both schemes).
fn transport(k: f64, u: &Trial, z: &Test) -> f64 {
    let m = &u.m;
    let dv = div(&m.g);
    let fa = k * (dot(m.v, m.ga) + m.a * dv - (1.0 - m.a).min(0.0)) + (u.r.a - u.l.a);
    let fh = k * (dot(m.v, m.gh) + m.h * dv) + (u.r.h - u.l.h);
    fa * z.m.a + (u.l.a - u.p.a) * z.l.a + fh * z.m.h + (u.l.h - u.p.h) * z.l.h
}

/// Momentum part of the integrand with given lagged or current coefficients.
///
/// `(a_s, h_s)` enter the stress and Coriolis term, `h_t` multiplies the time
/// derivative and `h_j` the velocity jump.
#[allow(clippy::too_many_arguments)]
fn momentum(k: f64, u: &Trial, z: &Test, vo: Vec2, va: Vec2, a_s: f64, h_s: f64, h_t: f64, h_j: f64, p: &PhysParams) -> f64 {
    let m = &u.m;
    let cor = coriolis(sub(m.v, vo), p.f_c);
    let tau = rheology::forcing_tau(m.v, vo, va, p);
    let sig = rheology::stress(&m.g, a_s, h_s, p);
    k * (p.rho_ice * h_s * dot(cor, z.m.v) - dot(tau, z.m.v) + ddot(&sig, &z.m.g))
        + p.rho_ice * h_t * dot(sub(u.r.v, u.l.v), z.m.v)
        + p.rho_ice * h_j * dot(sub(u.l.v, u.p.v), z.l.v)
}

/// `B_s - B` at one point, term by term.
fn defect(k: f64, u: &Trial, z: &Test, vo: Vec2, p: &PhysParams) -> f64 {
    let m = &u.m;
    let cor = coriolis(sub(m.v, vo), p.f_c);
    let dp = rheology::ice_strength(u.p.h, u.p.a, p) - rheology::ice_strength(m.h, m.a, p);
    let shat = rheology::stress_per_strength(&m.g, p);
    k * (p.rho_ice * (u.p.h - m.h) * dot(cor, z.m.v) + dp * ddot(&shat, &z.m.g))
        + p.rho_ice * (u.p.h - m.h) * dot(sub(u.r.v, u.l.v), z.m.v)
        + p.rho_ice * (u.p.h - u.l.h) * dot(sub(u.l.v, u.p.v), z.l.v)
}

/// Derivative of [`transport`] in direction `d`.
fn transport_prime(k: f64, u: &Trial, d: &Trial, z: &Test) -> f64 {
    let (m, dm) = (&u.m, &d.m);
    let (dv, ddv) = (div(&m.g), div(&dm.g));
    let chi = if m.a >= 1.0 { 1.0 } else { 0.0 };
    let fa = k * (dot(dm.v, m.ga) + dot(m.v, dm.ga) + dm.a * dv + m.a * ddv + chi * dm.a) + (d.r.a - d.l.a);
    let fh = k * (dot(dm.v, m.gh) + dot(m.v, dm.gh) + dm.h * dv + m.h * ddv) + (d.r.h - d.l.h);
    fa * z.m.a + (d.l.a - d.p.a) * z.l.a + fh * z.m.h + (d.l.h - d.p.h) * z.l.h
}

/// Coefficient choice of one scheme: values and directions of `(a_s, h_s, h_t, h_j)`.
fn coefficients(form: Form, u: &Trial, d: &Trial) -> ([f64; 4], [f64; 4]) {
    match form {
        Form::Split => ([u.p.a, u.p.h, u.p.h, u.p.h], [d.p.a, d.p.h, d.p.h, d.p.h]),
        _ => ([u.m.a, u.m.h, u.m.h, u.l.h], [d.m.a, d.m.h, d.m.h, d.l.h]),
    }
}

/// Derivative of [`momentum`] in direction `d` for one scheme.
#[allow(clippy::too_many_arguments)]
fn momentum_prime(form: Form, k: f64, u: &Trial, d: &Trial, z: &Test, vo: Vec2, p: &PhysParams) -> f64 {
    let ([a_s, h_s, h_t, h_j], [da_s, dh_s, dh_t, dh_j]) = coefficients(form, u, d);
    let (m, dm) = (&u.m, &d.m);
    let cor = coriolis(sub(m.v, vo), p.f_c);
    let dcor = coriolis(dm.v, p.f_c);
    let dtau = rheology::tau_dv(m.v, vo, dm.v, p);
    let sv = rheology::stress_dv(&m.g, a_s, h_s, &dm.g, p);
    let sa = rheology::stress_da(&m.g, a_s, h_s, p);
    let sh = rheology::stress_dh(&m.g, a_s, p);
    let dsig = ddot(&sv, &z.m.g) + da_s * ddot(&sa, &z.m.g) + dh_s * ddot(&sh, &z.m.g);
    k * (p.rho_ice * (dh_s * dot(cor, z.m.v) + h_s * dot(dcor, z.m.v)) - dot(dtau, z.m.v) + dsig)
        + p.rho_ice * (dh_t * dot(sub(u.r.v, u.l.v), z.m.v) + h_t * dot(sub(d.r.v, d.l.v), z.m.v))
        + p.rho_ice * (dh_j * dot(sub(u.l.v, u.p.v), z.l.v) + h_j * dot(sub(d.l.v, d.p.v), z.l.v))
}

/// Mesh, forcing and quadrature shared by all form evaluations on one time grid.
pub struct FormContext<'a> {
    pub mesh: Arc<QuadMesh>,
    pub scenario: &'a Scenario,
    pub times: Vec<f64>,
    table: BasisTable,
}

impl<'a> FormContext<'a> {
    pub fn new(mesh: Arc<QuadMesh>, scenario: &'a Scenario, times: Vec<f64>, rule: QuadratureRule) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid must be increasing with at least one step".into()));
        }
        Ok(FormContext {
            mesh,
            scenario,
            times,
            table: BasisTable::new(rule),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn params(&self) -> &PhysParams {
        &self.scenario.params
    }

    fn check(&self, f: &SpaceTimeFn, what: &str) -> Result<()> {
        if f.n_elements() != self.mesh.n_elements() {
            return Err(Error::MeshMismatch(format!(
                "{what} has {} elements, mesh has {}",
                f.n_elements(),
                self.mesh.n_elements()
            )));
        }
        if f.n_steps() != self.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "{what} has {} steps, time grid has {}",
                f.n_steps(),
                self.n_steps()
            )));
        }
        Ok(())
    }

    /// Sums `kernel(k, trial, direction, test, v_ocean, v_atm)` times the
    /// quadrature weight over all steps and elements.
    fn integrate<F>(&self, u: &SpaceTimeFn, d: Option<&SpaceTimeFn>, z: &SpaceTimeFn, kernel: F) -> Result<Localized>
    where
        F: Fn(f64, &Trial, &Trial, &Test, Vec2, Vec2) -> f64 + Sync,
    {
        self.check(u, "trial")?;
        self.check(z, "test")?;
        if let Some(d) = d {
            self.check(d, "direction")?;
        }
        let mut out = Localized::zeros(self.n_steps(), self.mesh.n_elements());
        let zero = Trial {
            p: Pt::default(),
            l: Pt::default(),
            r: Pt::default(),
            m: Pt::default(),
        };
        for n in 1..=self.n_steps() {
            let k = self.times[n] - self.times[n - 1];
            let t_n = self.times[n];
            let vals: Vec<f64> = (0..self.mesh.n_elements())
                .into_par_iter()
                .map(|e| {
                    let (o, hs) = self.mesh.element_box(e);
                    let area = hs[0] * hs[1];
                    let mut s = 0.0;
                    for (q, (pt, w)) in self.table.rule.points.iter().zip(&self.table.rule.weights).enumerate() {
                        let trial = |f: &SpaceTimeFn| {
                            let p = Pt::at(f.before(n), e, hs, &self.table, q);
                            let l = Pt::at(f.left(n), e, hs, &self.table, q);
                            let r = Pt::at(f.right(n), e, hs, &self.table, q);
                            Trial { p, l, r, m: Pt::mid(&l, &r) }
                        };
                        let tu = trial(u);
                        let td = d.map(trial);
                        let zl = Pt::at(z.left(n), e, hs, &self.table, q);
                        let zr = Pt::at(z.right(n), e, hs, &self.table, q);
                        let tz = Test { l: zl, m: Pt::mid(&zl, &zr) };
                        let (x, y) = (o[0] + pt[0] * hs[0], o[1] + pt[1] * hs[1]);
                        let vo = self.scenario.ocean_velocity(x, y);
                        let va = self.scenario.wind_velocity(x, y, t_n);
                        s += w * area * kernel(k, &tu, td.as_ref().unwrap_or(&zero), &tz, vo, va);
                    }
                    s
                })
                .collect();
            for (e, v) in vals.into_iter().enumerate() {
                out.per_step[n - 1] += v;
                out.per_element[e] += v;
            }
        }
        Ok(out)
    }

    /// `B(U)(Z)`, `B_s(U)(Z)` or `beta(U)(Z)`.
    pub fn form(&self, form: Form, u: &SpaceTimeFn, z: &SpaceTimeFn) -> Result<Localized> {
        let p = self.params();
        self.integrate(u, None, z, |k, u, _, z, vo, va| match form {
            Form::Split => transport(k, u, z) + momentum(k, u, z, vo, va, u.p.a, u.p.h, u.p.h, u.p.h, p),
            Form::Coupled => transport(k, u, z) + momentum(k, u, z, vo, va, u.m.a, u.m.h, u.m.h, u.l.h, p),
            Form::Defect => defect(k, u, z, vo, p),
        })
    }

    /// Directional derivative `B'(U)(dU, Z)` (and likewise for `B_s`, `beta`).
    pub fn form_prime(&self, form: Form, u: &SpaceTimeFn, du: &SpaceTimeFn, z: &SpaceTimeFn) -> Result<Localized> {
        let p = self.params();
        self.integrate(u, Some(du), z, |k, u, d, z, vo, _| match form {
            Form::Defect => momentum_prime(Form::Split, k, u, d, z, vo, p) - momentum_prime(Form::Coupled, k, u, d, z, vo, p),
            _ => transport_prime(k, u, d, z) + momentum_prime(form, k, u, d, z, vo, p),
        })
    }

    /// Goal value; the concentration of step `n` is taken at the midpoint of
    /// the step's overlap with the goal window.
    pub fn goal(&self, goal: &GoalSpec, u: &SpaceTimeFn) -> Result<Localized> {
        self.check(u, "trial")?;
        let mut out = Localized::zeros(self.n_steps(), self.mesh.n_elements());
        for n in 1..=self.n_steps() {
            let (t0, t1) = (self.times[n - 1], self.times[n]);
            let w = goal.step_weight(t0, t1);
            if w == 0.0 {
                continue;
            }
            let s = goal.overlap_midpoint(t0, t1);
            let a = u.left(n).a.lin_comb(1.0 - s, &u.right(n).a, s);
            for (e, v) in clipped_local_integrals(&self.mesh, &a, &goal.region).into_iter().enumerate() {
                out.per_step[n - 1] += w * v;
                out.per_element[e] += w * v;
            }
        }
        Ok(out)
    }

    /// `J'(U)(dU)`; the goal is linear, so this is the goal of the direction.
    pub fn goal_prime(&self, goal: &GoalSpec, du: &SpaceTimeFn) -> Result<Localized> {
        self.goal(goal, du)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_mesh;
    use crate::mesh::Rect;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Arc<QuadMesh>, Scenario) {
        let sc = Scenario::benchmark_1day();
        (Arc::new(uniform_mesh(sc.domain, n).unwrap()), sc)
    }

    /// Smooth random field set: benchmark-like magnitudes with random modes.
    fn random_set(mesh: &QuadMesh, rng: &mut ChaCha8Rng, amp: f64) -> FieldSet {
        let l = 5e5;
        let mut mode = |base: f64, scale: f64, zero_bc: bool| {
            let (c1, c2, c3) = (rng.gen_range(-1.0..1.0), rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
            let vals: Vec<f64> = mesh
                .nodes()
                .iter()
                .map(|p| {
                    let (x, y) = (p[0] / l, p[1] / l);
                    let bump = if zero_bc { (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() } else { 1.0 };
                    base + amp * scale * c1 * bump * (c2 * x + 0.3).sin() * (c3 * y + 0.7).cos()
                })
                .collect();
            LocalField::from_q1(mesh, &vals)
        };
        FieldSet {
            v: [mode(0.0, 0.05, true), mode(0.0, 0.05, true)],
            a: mode(0.95, 0.1, false),
            h: mode(0.3, 0.05, false),
        }
    }

    fn random_fn(mesh: &QuadMesh, n_steps: usize, rng: &mut ChaCha8Rng, amp: f64, linear: bool) -> SpaceTimeFn {
        let initial = Arc::new(random_set(mesh, rng, amp));
        let steps = (0..n_steps)
            .map(|_| {
                let l = Arc::new(random_set(mesh, rng, amp));
                if linear {
                    [l, Arc::new(random_set(mesh, rng, amp))]
                } else {
                    [l.clone(), l]
                }
            })
            .collect();
        SpaceTimeFn { initial, steps }
    }

    fn times(n: usize, k: f64) -> Vec<f64> {
        (0..=n).map(|i| i as f64 * k).collect()
    }

    #[test]
    fn zero_test_gives_zero() {
        let (mesh, sc) = setup(4);
        let ctx = FormContext::new(mesh.clone(), &sc, times(2, 3600.0), QuadratureRule::gauss2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_fn(&mesh, 2, &mut rng, 1.0, false);
        let z = u.lin_comb(0.0, &u, 0.0);
        for f in [Form::Split, Form::Coupled, Form::Defect] {
            assert_eq!(ctx.form(f, &u, &z).unwrap().total(), 0.0);
        }
    }

    #[test]
    fn steady_rest_state_leaves_pressure_term() {
        let (mesh, mut sc) = setup(4);
        sc = sc.without_forcing();
        sc.ocean_speed = 0.0;
        let ctx = FormContext::new(mesh.clone(), &sc, times(1, 3600.0), QuadratureRule::gauss3()).unwrap();
        let n_el = mesh.n_elements();
        let mut rest = FieldSet::zeros(n_el);
        rest.a = LocalField::from_q1(&mesh, &vec![1.0; mesh.n_nodes()]);
        rest.h = LocalField::from_q1(&mesh, &vec![0.3; mesh.n_nodes()]);
        let u = SpaceTimeFn::dg0(rest.clone(), vec![rest]);
        // Test velocity (x^2 / L^2, x y / L^2) does not vanish on the boundary.
        let l = 5e5;
        let xs: Vec<f64> = mesh.nodes().iter().map(|p| p[0] * p[0] / (l * l)).collect();
        let xy: Vec<f64> = mesh.nodes().iter().map(|p| p[0] * p[1] / (l * l)).collect();
        let mut zs = FieldSet::zeros(n_el);
        zs.v = [reconstruct_space_values(&mesh, &xs).unwrap(), reconstruct_space_values(&mesh, &xy).unwrap()];
        let z = SpaceTimeFn::dg0(FieldSet::zeros(n_el), vec![zs]);
        let b = ctx.form(Form::Coupled, &u, &z).unwrap().total();
        // -(P/2) k int div(phi) = -(P/2) k int 3x / L^2 = -(P/2) k (3/2) L.
        let expect = -4125.0 * 3600.0 * 1.5 * l;
        assert_relative_eq!(b, expect, max_relative = 1e-12);
    }

    #[test]
    fn time_constant_trajectory_has_no_defect() {
        let (mesh, sc) = setup(4);
        let ctx = FormContext::new(mesh.clone(), &sc, times(3, 3600.0), QuadratureRule::gauss2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_set(&mesh, &mut rng, 1.0);
        let u = SpaceTimeFn::dg0(s.clone(), vec![s.clone(), s.clone(), s]);
        let z = random_fn(&mesh, 3, &mut rng, 1.0, true);
        let bs = ctx.form(Form::Split, &u, &z).unwrap().total();
        let b = ctx.form(Form::Coupled, &u, &z).unwrap().total();
        assert_relative_eq!(bs, b, max_relative = 1e-13);
        assert!(ctx.form(Form::Defect, &u, &z).unwrap().total().abs() <= 1e-12 * bs.abs());
    }

    #[test]
    fn defect_matches_subtraction() {
        let (mesh, sc) = setup(4);
        let ctx = FormContext::new(mesh.clone(), &sc, times(2, 7200.0), QuadratureRule::gauss3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for linear in [false, true] {
            let u = random_fn(&mesh, 2, &mut rng, 1.0, linear);
            let z = random_fn(&mesh, 2, &mut rng, 1.0, true);
            let bs = ctx.form(Form::Split, &u, &z).unwrap().total();
            let b = ctx.form(Form::Coupled, &u, &z).unwrap().total();
            let beta = ctx.form(Form::Defect, &u, &z).unwrap().total();
            assert!((beta - (bs - b)).abs() <= 1e-10 * bs.abs().max(b.abs()), "{beta} vs {}", bs - b);
        }
    }

    #[test]
    fn single_step_defect_by_hand() {
        // One element, v = 0 except the jump, A = 1 throughout, H jumps from 0.3 to 0.4.
        let sc = Scenario::benchmark_1day().without_forcing();
        let mesh = Arc::new(uniform_mesh(Rect::square(1000.0), 2).unwrap());
        let ctx = FormContext::new(mesh.clone(), &sc, times(1, 10.0), QuadratureRule::gauss2()).unwrap();
        let n_el = mesh.n_elements();
        let konst = |c: f64| LocalField::from_q1(&mesh, &vec![c; mesh.n_nodes()]);
        let u0 = FieldSet {
            v: [LocalField::zeros(n_el), LocalField::zeros(n_el)],
            a: konst(1.0),
            h: konst(0.3),
        };
        let mut u1 = u0.clone();
        u1.h = konst(0.4);
        u1.v[0] = konst(0.01);
        let u = SpaceTimeFn::dg0(u0, vec![u1]);
        let mut zs = FieldSet::zeros(n_el);
        zs.v[0] = konst(1.0);
        let z = SpaceTimeFn::dg0(FieldSet::zeros(n_el), vec![zs]);
        // Jump weight difference rho (0.3 - 0.4) * 0.01 * |Omega|; the stress
        // has zero gradient and the test has zero gradient, Coriolis is
        // orthogonal to the x-test, so this is the whole defect.
        let expect = 900.0 * (0.3 - 0.4) * 0.01 * 1e6;
        assert_relative_eq!(ctx.form(Form::Defect, &u, &z).unwrap().total(), expect, max_relative = 1e-12);
    }

    fn fd_check(form: Form, linear_trial: bool, seed: u64) {
        let (mesh, sc) = setup(6);
        let ctx = FormContext::new(mesh.clone(), &sc, times(2, 7200.0), QuadratureRule::gauss2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_fn(&mesh, 2, &mut rng, 1.0, linear_trial);
        let du = random_fn(&mesh, 2, &mut rng, 1.0, true);
        let z = random_fn(&mesh, 2, &mut rng, 1.0, true);
        let an = ctx.form_prime(form, &u, &du, &z).unwrap().total();
        let fd = |eps: f64| {
            let up = u.lin_comb(1.0, &du, eps);
            let um = u.lin_comb(1.0, &du, -eps);
            (ctx.form(form, &up, &z).unwrap().total() - ctx.form(form, &um, &z).unwrap().total()) / (2.0 * eps)
        };
        let err = (fd(1e-6) - an).abs() / an.abs();
        assert!(err <= 1e-5, "{form:?}: fd {} vs {an} ({err:e})", fd(1e-6));
    }

    #[test]
    fn split_derivative_matches_finite_differences() {
        fd_check(Form::Split, false, 10);
        fd_check(Form::Split, true, 11);
    }

    #[test]
    fn coupled_derivative_matches_finite_differences() {
        fd_check(Form::Coupled, false, 12);
        fd_check(Form::Coupled, true, 13);
    }

    #[test]
    fn defect_derivative_matches_finite_differences() {
        fd_check(Form::Defect, true, 14);
    }

    #[test]
    fn goal_of_full_ice_cover() {
        let (mesh, sc) = setup(8);
        let ctx = FormContext::new(mesh.clone(), &sc, times(3, sc.t_end / 3.0), QuadratureRule::gauss2()).unwrap();
        let mut s = FieldSet::zeros(mesh.n_elements());
        s.a = LocalField::from_q1(&mesh, &vec![1.0; mesh.n_nodes()]);
        let u = SpaceTimeFn::dg0(s.clone(), vec![s.clone(), s.clone(), s]);
        assert_relative_eq!(ctx.goal(&sc.goal, &u).unwrap().total(), 1.5625, max_relative = 1e-13);
        let zero = u.lin_comb(0.0, &u, 0.0);
        assert_eq!(ctx.goal(&sc.goal, &zero).unwrap().total(), 0.0);
    }

    #[test]
    fn localization_sums_agree() {
        let (mesh, sc) = setup(4);
        let ctx = FormContext::new(mesh.clone(), &sc, times(2, 3600.0), QuadratureRule::gauss3()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_fn(&mesh, 2, &mut rng, 1.0, false);
        let z = random_fn(&mesh, 2, &mut rng, 1.0, true);
        let l = ctx.form(Form::Split, &u, &z).unwrap();
        let by_el: f64 = l.per_element.iter().sum();
        assert_relative_eq!(by_el, l.total(), max_relative = 1e-12);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (mesh, sc) = setup(4);
        let ctx = FormContext::new(mesh.clone(), &sc, times(2, 3600.0), QuadratureRule::gauss2()).unwrap();
        let (other, _) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = random_fn(&mesh, 2, &mut rng, 1.0, false);
        let w = random_fn(&other, 2, &mut rng, 1.0, false);
        assert!(matches!(ctx.form(Form::Split, &u, &w), Err(Error::MeshMismatch(_))));
        let short = random_fn(&mesh, 1, &mut rng, 1.0, false);
        assert!(ctx.form(Form::Split, &u, &short).is_err());
        assert!(FormContext::new(mesh, &sc, vec![0.0], QuadratureRule::gauss2()).is_err());
    }
}
