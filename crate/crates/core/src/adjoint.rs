//! Discrete adjoint of the partitioned scheme, solved backward in time.
//!
//! Step `n` of the dual sweep first solves the two transport adjoints and
//! then the momentum adjoint, each with the transposed Newton Jacobian of the
//! corresponding primal sub-step. Couplings to step `n + 1` use the
//! transposed derivatives of the next momentum residual with respect to its
//! lagged coefficients and previous velocity.
//!
//! [`dual_forms`] assembles the same operators directly from the dual
//! variational forms; it is independent of the primal assembly and serves as
//! a cross-check on small meshes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{ScalarField, VectorField2};
use crate::linalg::CsrMatrix;
use crate::mesh::QuadMesh;
use crate::model::forms::{FieldSet, SpaceTimeFn};
use crate::model::GoalSpec;
use crate::scenario::Scenario;
use crate::solver::{linear_solve, Discretization, MomentumData, SolverSettings, Trajectory};

/// Dual snapshot: momentum multiplier `z` and transport multipliers `q_A`, `q_H`.
#[derive(Clone, Debug)]
pub struct DualState {
    pub z: VectorField2,
    pub qa: ScalarField,
    pub qh: ScalarField,
}

impl DualState {
    pub fn zeros(mesh: Arc<QuadMesh>) -> Self {
        DualState {
            z: VectorField2::zeros(mesh.clone()),
            qa: ScalarField::zeros(mesh.clone()),
            qh: ScalarField::zeros(mesh),
        }
    }

    pub fn field_set(&self) -> FieldSet {
        let m = self.qa.mesh();
        use crate::fem::LocalField;
        FieldSet {
            v: [LocalField::from_q1(m, self.z.x.values()), LocalField::from_q1(m, self.z.y.values())],
            a: LocalField::from_q1(m, self.qa.values()),
            h: LocalField::from_q1(m, self.qh.values()),
        }
    }

    /// Patch-wise biquadratic reconstruction.
    pub fn reconstructed(&self) -> Result<FieldSet> {
        let m = self.qa.mesh();
        use crate::fem::reconstruct_space_values as r;
        Ok(FieldSet {
            v: [r(m, self.z.x.values())?, r(m, self.z.y.values())?],
            a: r(m, self.qa.values())?,
            h: r(m, self.qh.values())?,
        })
    }
}

/// Dual solution `Z_1, ..., Z_N`; `Z_n` belongs to step `(t_{n-1}, t_n]` and
/// `Z_{N+1} = 0`.
#[derive(Clone, Debug)]
pub struct DualTrajectory {
    pub mesh: Arc<QuadMesh>,
    pub times: Vec<f64>,
    pub states: Vec<DualState>,
}

impl DualTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len()
    }

    /// `Z_n` for `n` in `1..=N+1`.
    pub fn get(&self, n: usize) -> Result<DualState> {
        match n {
            0 => Err(Error::OutOfRange {
                index: 0,
                valid: format!("1..={}", self.n_steps() + 1),
            }),
            n if n <= self.n_steps() => Ok(self.states[n - 1].clone()),
            n if n == self.n_steps() + 1 => Ok(DualState::zeros(self.mesh.clone())),
            n => Err(Error::OutOfRange {
                index: n,
                valid: format!("1..={}", self.n_steps() + 1),
            }),
        }
    }

    /// dG(0) space-time function of the dual solution (value before the first step is 0).
    pub fn to_space_time(&self) -> SpaceTimeFn {
        SpaceTimeFn::dg0(
            FieldSet::zeros(self.mesh.n_elements()),
            self.states.iter().map(DualState::field_set).collect(),
        )
    }
}

/// Linearization of the primal step `n` needed by the dual sweep, as
/// assembled by the primal solver (not transposed).
pub struct StepLinearization {
    /// Momentum Jacobian of step `n` with respect to `v_n`.
    pub momentum: CsrMatrix,
    /// Concentration and thickness transport Jacobians of step `n`.
    pub transport_a: CsrMatrix,
    pub transport_h: CsrMatrix,
    /// Transport residuals of step `n` differentiated with respect to `v_n`.
    pub couple_a: CsrMatrix,
    pub couple_h: CsrMatrix,
    /// Momentum residual of step `n + 1` differentiated with respect to
    /// `A_n`, `H_n` and `v_n` (absent for the last step).
    pub next: Option<(CsrMatrix, CsrMatrix, CsrMatrix)>,
}

fn momentum_data<'a>(primal: &'a Trajectory, n: usize, wind: &'a [[[f64; 2]; 4]]) -> MomentumData<'a> {
    let prev = &primal.states[n - 1];
    MomentumData {
        v_prev: [prev.v.x.values(), prev.v.y.values()],
        a_coef: prev.a.values(),
        h_coef: prev.h.values(),
        k: primal.times[n] - primal.times[n - 1],
        wind_qp: wind,
    }
}

/// Primal Jacobian blocks of step `n` at the converged primal trajectory.
pub fn linearize_step(disc: &Discretization, scenario: &Scenario, primal: &Trajectory, n: usize) -> Result<StepLinearization> {
    let n_steps = primal.n_steps();
    if n == 0 || n > n_steps {
        return Err(Error::OutOfRange {
            index: n,
            valid: format!("1..={n_steps}"),
        });
    }
    let k = primal.times[n] - primal.times[n - 1];
    let (prev, cur) = (&primal.states[n - 1], &primal.states[n]);
    let wind = disc.wind_qp(scenario, primal.times[n]);
    let v = disc.restrict_velocity(&cur.v);
    let (_, momentum) = disc.momentum_system(&v, &momentum_data(primal, n, &wind));
    let vn = [cur.v.x.values().to_vec(), cur.v.y.values().to_vec()];
    let a = disc.sdofs.restrict(cur.a.values());
    let h = disc.sdofs.restrict(cur.h.values());
    let (_, transport_a) = disc.transport_system(&a, prev.a.values(), &vn, k, true);
    let (_, transport_h) = disc.transport_system(&h, prev.h.values(), &vn, k, false);
    let couple_a = disc.transport_velocity_coupling(cur.a.values(), k);
    let couple_h = disc.transport_velocity_coupling(cur.h.values(), k);
    let next = if n < n_steps {
        let wind = disc.wind_qp(scenario, primal.times[n + 1]);
        let v1 = disc.restrict_velocity(&primal.states[n + 1].v);
        Some(disc.momentum_couplings(&v1, &momentum_data(primal, n + 1, &wind)))
    } else {
        None
    };
    Ok(StepLinearization {
        momentum,
        transport_a,
        transport_h,
        couple_a,
        couple_h,
        next,
    })
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// One backward step: `Z_n` from `Z_{n+1}`.
#[allow(clippy::too_many_arguments)]
pub fn dual_step(
    disc: &Discretization,
    scenario: &Scenario,
    primal: &Trajectory,
    n: usize,
    next: &DualState,
    goal: &GoalSpec,
    mass: &CsrMatrix,
    settings: &SolverSettings,
) -> Result<DualState> {
    let lin = linearize_step(disc, scenario, primal, n)?;
    let z1 = disc.restrict_velocity(&next.z);
    let qa1 = disc.sdofs.restrict(next.qa.values());
    let qh1 = disc.sdofs.restrict(next.qh.values());

    let w = goal.step_weight(primal.times[n - 1], primal.times[n]);
    let mut rhs_a = disc.goal_load(goal);
    rhs_a.iter_mut().for_each(|x| *x *= w);
    let mut rhs_h = vec![0.0; disc.n_scalar()];
    let mut rhs_v = vec![0.0; disc.n_velocity()];
    if let Some((da, dh, dv)) = &lin.next {
        axpy(&mut rhs_a, 1.0, &mass.matvec(&qa1));
        axpy(&mut rhs_a, -1.0, &da.matvec_transpose(&z1));
        axpy(&mut rhs_h, 1.0, &mass.matvec(&qh1));
        axpy(&mut rhs_h, -1.0, &dh.matvec_transpose(&z1));
        axpy(&mut rhs_v, -1.0, &dv.matvec_transpose(&z1));
    }
    let solve = |m: &CsrMatrix, b: &[f64], what: &str| -> Result<Vec<f64>> {
        if b.iter().all(|x| *x == 0.0) {
            return Ok(vec![0.0; b.len()]);
        }
        let mut pc = None;
        let sol = linear_solve(&m.transpose(), b, &settings.krylov, &mut pc)
            .map_err(|e| Error::LinearSolver(format!("dual {what}: {e}")))?;
        Ok(sol.x)
    };
    let qa = solve(&lin.transport_a, &rhs_a, "concentration transport")?;
    let qh = solve(&lin.transport_h, &rhs_h, "thickness transport")?;
    axpy(&mut rhs_v, -1.0, &lin.couple_a.matvec_transpose(&qa));
    axpy(&mut rhs_v, -1.0, &lin.couple_h.matvec_transpose(&qh));
    let z = solve(&lin.momentum, &rhs_v, "momentum")?;

    let mesh = disc.mesh.clone();
    let [zx, zy] = disc.expand_velocity(&z);
    Ok(DualState {
        z: VectorField2::new(ScalarField::new(mesh.clone(), zx)?, ScalarField::new(mesh.clone(), zy)?)?,
        qa: ScalarField::new(mesh.clone(), disc.sdofs.expand(&qa))?,
        qh: ScalarField::new(mesh, disc.sdofs.expand(&qh))?,
    })
}

/// Backward sweep `n = N, ..., 1` for the goal `goal`.
pub fn dual_simulate(scenario: &Scenario, primal: &Trajectory, goal: &GoalSpec, settings: &SolverSettings) -> Result<DualTrajectory> {
    goal.validate(&scenario.domain, *primal.times.last().expect("nonempty time grid"))?;
    let disc = Discretization::new(primal.mesh.clone(), scenario);
    let mass = disc.scalar_mass();
    let n_steps = primal.n_steps();
    let mut states = vec![DualState::zeros(primal.mesh.clone()); n_steps];
    let mut next = DualState::zeros(primal.mesh.clone());
    for n in (1..=n_steps).rev() {
        let z = dual_step(&disc, scenario, primal, n, &next, goal, &mass, settings).map_err(|e| e.at_step(n))?;
        log::debug!("dual step {n}: max |z| {:.3e}", z.z.x.values().iter().chain(z.z.y.values()).fold(0.0f64, |m, x| m.max(x.abs())));
        states[n - 1] = z.clone();
        next = z;
    }
    Ok(DualTrajectory {
        mesh: primal.mesh.clone(),
        times: primal.times.clone(),
        states,
    })
}

/// Hand-written dual operators of one step.
pub mod dual_forms {
    use crate::error::Result;
    use crate::fem::{BasisTable, DofMap, QuadratureRule};
    use crate::linalg::CsrMatrix;
    use crate::model::rheology::{self, coriolis, Mat2};
    use crate::scenario::Scenario;
    use crate::solver::Trajectory;

    use super::Error;

    /// Dual operators in the layout of [`super::StepLinearization`] after transposition:
    /// rows index the dual test function, columns the dual unknown.
    pub struct DualOperators {
        /// Momentum adjoint, `(rho H_{n-1} phi, z) + k[(rho H_{n-1} f e x phi, z) - (tau'(v_n) phi, z) + (sigma'_v(v_n)(phi), grad z)]`.
        pub momentum: CsrMatrix,
        /// Transport adjoints, `(psi, q) + k (div(v_n psi), q) [+ k (chi psi, q)]`.
        pub transport_a: CsrMatrix,
        pub transport_h: CsrMatrix,
        /// Transport terms of the momentum adjoint, `k (div(A_n phi), q)` and `k (div(H_n phi), q)`.
        pub couple_a: CsrMatrix,
        pub couple_h: CsrMatrix,
        /// Couplings through the next momentum step: `sigma'_A`, `sigma'_H` plus inertia and Coriolis, and the velocity jump.
        pub next: Option<(CsrMatrix, CsrMatrix, CsrMatrix)>,
    }

    struct Point {
        w: f64,
        x: [f64; 2],
        phi: [f64; 4],
        dphi: [[f64; 2]; 4],
    }

    fn points(traj: &Trajectory, e: usize, table: &BasisTable) -> Vec<Point> {
        let (o, h) = traj.mesh.element_box(e);
        (0..table.rule.len())
            .map(|q| {
                let (phi, d) = table.q1[q];
                let p = table.rule.points[q];
                Point {
                    w: table.rule.weights[q] * h[0] * h[1],
                    x: [o[0] + p[0] * h[0], o[1] + p[1] * h[1]],
                    phi,
                    dphi: d.map(|g| [g[0] / h[0], g[1] / h[1]]),
                }
            })
            .collect()
    }

    fn value(u: &[f64], nodes: &[usize; 4], phi: &[f64; 4]) -> f64 {
        (0..4).map(|a| u[nodes[a]] * phi[a]).sum()
    }

    fn gradient(u: &[f64], nodes: &[usize; 4], dphi: &[[f64; 2]; 4]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..4 {
            g[0] += u[nodes[a]] * dphi[a][0];
            g[1] += u[nodes[a]] * dphi[a][1];
        }
        g
    }

    /// Scatter of element entries through the hanging-node and boundary expansion.
    struct Scatter<'a> {
        rows: &'a DofMap,
        rcomp: usize,
        cols: &'a DofMap,
        ccomp: usize,
        t: Vec<(usize, usize, f64)>,
    }

    impl<'a> Scatter<'a> {
        fn new(rows: &'a DofMap, rcomp: usize, cols: &'a DofMap, ccomp: usize) -> Self {
            Scatter { rows, rcomp, cols, ccomp, t: Vec::new() }
        }

        fn add(&mut self, (rc, rn): (usize, usize), (cc, cn): (usize, usize), v: f64) {
            for &(i, wi) in self.rows.expansion(rn) {
                for &(j, wj) in self.cols.expansion(cn) {
                    self.t.push((rc * self.rows.n_free() + i, cc * self.cols.n_free() + j, wi * wj * v));
                }
            }
        }

        fn finish(self) -> CsrMatrix {
            CsrMatrix::from_triplets(self.rcomp * self.rows.n_free(), self.ccomp * self.cols.n_free(), self.t)
        }
    }

    fn unit_grad(c: usize, d: [f64; 2]) -> Mat2 {
        let mut g = [[0.0; 2]; 2];
        g[c] = d;
        g
    }

    /// Assembles the dual operators of step `n` from their variational definitions.
    pub fn assemble(scenario: &Scenario, primal: &Trajectory, n: usize) -> Result<DualOperators> {
        if n == 0 || n > primal.n_steps() {
            return Err(Error::OutOfRange {
                index: n,
                valid: format!("1..={}", primal.n_steps()),
            });
        }
        let p = &scenario.params;
        let mesh = &primal.mesh;
        let vd = DofMap::velocity(mesh);
        let sd = DofMap::scalar(mesh);
        let table = BasisTable::new(QuadratureRule::gauss2());
        let k = primal.times[n] - primal.times[n - 1];
        let (prev, cur) = (&primal.states[n - 1], &primal.states[n]);
        let last = n == primal.n_steps();

        let mut mom = Scatter::new(&vd, 2, &vd, 2);
        let mut ta = Scatter::new(&sd, 1, &sd, 1);
        let mut th = Scatter::new(&sd, 1, &sd, 1);
        let mut ca = Scatter::new(&vd, 2, &sd, 1);
        let mut ch = Scatter::new(&vd, 2, &sd, 1);
        let mut na = Scatter::new(&sd, 1, &vd, 2);
        let mut nh = Scatter::new(&sd, 1, &vd, 2);
        let mut nv = Scatter::new(&vd, 2, &vd, 2);

        for e in 0..mesh.n_elements() {
            let nodes = mesh.element(e).nodes;
            for pt in points(primal, e, &table) {
                let w = pt.w;
                let vel = [value(cur.v.x.values(), &nodes, &pt.phi), value(cur.v.y.values(), &nodes, &pt.phi)];
                let g = [gradient(cur.v.x.values(), &nodes, &pt.dphi), gradient(cur.v.y.values(), &nodes, &pt.dphi)];
                let a0 = value(prev.a.values(), &nodes, &pt.phi);
                let h0 = value(prev.h.values(), &nodes, &pt.phi);
                let a1 = value(cur.a.values(), &nodes, &pt.phi);
                let h1 = value(cur.h.values(), &nodes, &pt.phi);
                let ga1 = gradient(cur.a.values(), &nodes, &pt.dphi);
                let gh1 = gradient(cur.h.values(), &nodes, &pt.dphi);
                let vo = scenario.ocean_velocity(pt.x[0], pt.x[1]);
                let divv = g[0][0] + g[1][1];
                let chi = if a1 >= 1.0 { 1.0 } else { 0.0 };

                // Dual momentum: test phi (component d, node i), unknown z (component c, node j).
                for d in 0..2 {
                    let mut ed = [0.0; 2];
                    ed[d] = 1.0;
                    let cor = coriolis(ed, p.f_c);
                    let dtau = rheology::tau_dv(vel, vo, ed, p);
                    for i in 0..4 {
                        let dsig = rheology::stress_dv(&g, a0, h0, &unit_grad(d, pt.dphi[i]), p);
                        for c in 0..2 {
                            let point = pt.phi[i] * (p.rho_ice * h0 * (if c == d { 1.0 } else { 0.0 } + k * cor[c]) - k * dtau[c]);
                            for j in 0..4 {
                                let zval = point * pt.phi[j] + k * (dsig[c][0] * pt.dphi[j][0] + dsig[c][1] * pt.dphi[j][1]);
                                mom.add((d, nodes[i]), (c, nodes[j]), w * zval);
                            }
                        }
                    }
                }

                // Dual transport: test psi_i, unknown q_j.
                for i in 0..4 {
                    let adv = pt.dphi[i][0] * vel[0] + pt.dphi[i][1] * vel[1];
                    for j in 0..4 {
                        let base = pt.phi[i] * (1.0 + k * divv) + k * adv;
                        ta.add((0, nodes[i]), (0, nodes[j]), w * (base + k * chi * pt.phi[i]) * pt.phi[j]);
                        th.add((0, nodes[i]), (0, nodes[j]), w * base * pt.phi[j]);
                    }
                }

                // Transport terms of the momentum adjoint: test phi (d, i), unknown q_j:
                // k (phi . grad A_n + A_n div phi, q).
                for d in 0..2 {
                    for i in 0..4 {
                        let sa = pt.phi[i] * ga1[d] + a1 * pt.dphi[i][d];
                        let sh = pt.phi[i] * gh1[d] + h1 * pt.dphi[i][d];
                        for j in 0..4 {
                            ca.add((d, nodes[i]), (0, nodes[j]), w * k * sa * pt.phi[j]);
                            ch.add((d, nodes[i]), (0, nodes[j]), w * k * sh * pt.phi[j]);
                        }
                    }
                }

                if last {
                    continue;
                }
                // Couplings through step n+1 with unknown z_{n+1}.
                let k1 = primal.times[n + 1] - primal.times[n];
                let nx = &primal.states[n + 1];
                let v1 = [value(nx.v.x.values(), &nodes, &pt.phi), value(nx.v.y.values(), &nodes, &pt.phi)];
                let g1 = [gradient(nx.v.x.values(), &nodes, &pt.dphi), gradient(nx.v.y.values(), &nodes, &pt.dphi)];
                let sa = rheology::stress_da(&g1, a1, h1, p);
                let sh = rheology::stress_dh(&g1, a1, p);
                let cor = coriolis([v1[0] - vo[0], v1[1] - vo[1]], p.f_c);
                for i in 0..4 {
                    for c in 0..2 {
                        let inertia = p.rho_ice * ((v1[c] - vel[c]) + k1 * cor[c]);
                        for j in 0..4 {
                            let dz = pt.dphi[j];
                            na.add((0, nodes[i]), (c, nodes[j]), w * k1 * pt.phi[i] * (sa[c][0] * dz[0] + sa[c][1] * dz[1]));
                            nh.add(
                                (0, nodes[i]),
                                (c, nodes[j]),
                                w * pt.phi[i] * (k1 * (sh[c][0] * dz[0] + sh[c][1] * dz[1]) + inertia * pt.phi[j]),
                            );
                            nv.add((c, nodes[i]), (c, nodes[j]), -w * p.rho_ice * h1 * pt.phi[i] * pt.phi[j]);
                        }
                    }
                }
            }
        }
        Ok(DualOperators {
            momentum: mom.finish(),
            transport_a: ta.finish(),
            transport_h: th.finish(),
            couple_a: ca.finish(),
            couple_h: ch.finish(),
            next: if last { None } else { Some((na.finish(), nh.finish(), nv.finish())) },
        })
    }
}

/// Largest entry-wise difference between `a` and `b^T`, relative to `max |b|`.
pub fn transpose_mismatch(a: &CsrMatrix, b: &CsrMatrix) -> f64 {
    let bt = b.transpose();
    if a.n_rows() != bt.n_rows() || a.n_cols() != bt.n_cols() {
        return f64::INFINITY;
    }
    let scale = b.max_abs().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..a.n_rows() {
        for (j, v) in a.row(i) {
            worst = worst.max((v - bt.get(i, j)).abs());
        }
        for (j, v) in bt.row(i) {
            worst = worst.max((v - a.get(i, j)).abs());
        }
    }
    worst / scale
}
