//! Partitioned backward-Euler time stepping: momentum with lagged
//! concentration and thickness, then the two transport equations.
//!
//! Every residual is the Euler step multiplied by `k`; Jacobians are exact
//! derivatives of these residuals and are reused (transposed) by the adjoint.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{clipped_load, jump, BasisTable, DofMap, QuadratureRule, ScalarField, VectorField2};
use crate::linalg::{self, norm, CsrMatrix, KrylovSettings, Preconditioner};
use crate::mesh::QuadMesh;
use crate::model::rheology::{self, coriolis, Mat2, Vec2};
use crate::model::{GoalSpec, PhysParams};
use crate::scenario::Scenario;

/// Primal snapshot `(v, A, H)`.
#[derive(Clone, Debug)]
pub struct State {
    pub v: VectorField2,
    pub a: ScalarField,
    pub h: ScalarField,
}

impl State {
    pub fn mesh(&self) -> &Arc<QuadMesh> {
        self.a.mesh()
    }
}

/// Which field of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Vx,
    Vy,
    A,
    H,
}

impl State {
    pub fn component(&self, c: Component) -> &ScalarField {
        match c {
            Component::Vx => &self.v.x,
            Component::Vy => &self.v.y,
            Component::A => &self.a,
            Component::H => &self.h,
        }
    }
}

/// Per-step solver record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub newton_iterations: usize,
    pub newton_residual: f64,
    pub transport_iterations: usize,
    pub linear_iterations: usize,
    pub min_a: f64,
    pub max_a: f64,
    pub min_h: f64,
    pub max_h: f64,
    pub mass_h: f64,
}

/// Primal solution on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mesh: Arc<QuadMesh>,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn k(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Jump `u_n - u_{n-1}` of one component at `t_{n-1}`.
    pub fn jump(&self, n: usize, c: Component) -> Result<ScalarField> {
        let seq: Vec<ScalarField> = self.states.iter().map(|s| s.component(c).clone()).collect();
        jump(&seq, n)
    }

    /// Goal value of the dG(0) trajectory.
    pub fn goal_value(&self, goal: &GoalSpec) -> f64 {
        (1..=self.n_steps())
            .map(|n| {
                let w = goal.step_weight(self.times[n - 1], self.times[n]);
                if w == 0.0 {
                    0.0
                } else {
                    w * crate::fem::clipped_integral(&self.mesh, self.states[n].a.values(), &goal.region)
                }
            })
            .sum()
    }
}

/// Nonlinear and linear solver controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative residual reduction that ends Newton.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Maximum number of step halvings in the line search.
    pub max_halvings: usize,
    pub krylov: KrylovSettings,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            newton_tol: 1e-10,
            newton_max_iter: 200,
            max_halvings: 8,
            krylov: KrylovSettings::default(),
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.krylov.tol > 0.0) || self.newton_max_iter == 0 || self.krylov.restart == 0 {
            return Err(Error::InvalidArgument("solver tolerances and iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Sparsity of one matrix block together with the map from element-local
/// entries to stored values (hanging-node weights folded in).
struct BlockPattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    starts: Vec<usize>,
    map: Vec<(u32, u32, f64)>,
}

#[derive(Clone, Copy)]
enum Block {
    VelVel,
    VelScalar,
    ScalarVel,
    ScalarScalar,
}

/// Geometry, unknown numbering and quadrature tables shared by all assembly routines.
pub struct Discretization {
    pub mesh: Arc<QuadMesh>,
    pub vdofs: DofMap,
    pub sdofs: DofMap,
    pub params: PhysParams,
    table: BasisTable,
    ocean_qp: Vec<[Vec2; 4]>,
    patterns: [OnceLock<BlockPattern>; 4],
}

/// Quadrature-point data of one element.
struct Qp {
    w: f64,
    phi: [f64; 4],
    dphi: [[f64; 2]; 4],
}

#[inline]
fn interp(phi: &[f64; 4], u: &[f64; 4]) -> f64 {
    phi[0] * u[0] + phi[1] * u[1] + phi[2] * u[2] + phi[3] * u[3]
}

#[inline]
fn interp_grad(dphi: &[[f64; 2]; 4], u: &[f64; 4]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for a in 0..4 {
        g[0] += dphi[a][0] * u[a];
        g[1] += dphi[a][1] * u[a];
    }
    g
}

#[inline]
fn contract(s: &Mat2, c: usize, d: &[f64; 2]) -> f64 {
    s[c][0] * d[0] + s[c][1] * d[1]
}

/// Arguments of a momentum step: lagged coefficients, previous velocity and data time.
pub struct MomentumData<'a> {
    pub v_prev: [&'a [f64]; 2],
    pub a_coef: &'a [f64],
    pub h_coef: &'a [f64],
    pub k: f64,
    pub wind_qp: &'a [[Vec2; 4]],
}

impl Discretization {
    pub fn new(mesh: Arc<QuadMesh>, scenario: &Scenario) -> Self {
        let table = BasisTable::new(QuadratureRule::gauss2());
        let ocean_qp = (0..mesh.n_elements())
            .map(|e| {
                let (o, h) = mesh.element_box(e);
                std::array::from_fn(|q| {
                    let p = table.rule.points[q];
                    scenario.ocean_velocity(o[0] + p[0] * h[0], o[1] + p[1] * h[1])
                })
            })
            .collect();
        Discretization {
            vdofs: DofMap::velocity(&mesh),
            sdofs: DofMap::scalar(&mesh),
            params: scenario.params,
            table,
            ocean_qp,
            mesh,
            patterns: Default::default(),
        }
    }

    /// Wind at the quadrature points for data time `t`.
    pub fn wind_qp(&self, scenario: &Scenario, t: f64) -> Vec<[Vec2; 4]> {
        (0..self.mesh.n_elements())
            .map(|e| {
                let (o, h) = self.mesh.element_box(e);
                std::array::from_fn(|q| {
                    let p = self.table.rule.points[q];
                    scenario.wind_velocity(o[0] + p[0] * h[0], o[1] + p[1] * h[1], t)
                })
            })
            .collect()
    }

    fn qps(&self, e: usize) -> [Qp; 4] {
        let (_, h) = self.mesh.element_box(e);
        let area = h[0] * h[1];
        std::array::from_fn(|q| {
            let (phi, d) = self.table.q1[q];
            Qp {
                w: self.table.rule.weights[q] * area,
                phi,
                dphi: d.map(|g| [g[0] / h[0], g[1] / h[1]]),
            }
        })
    }

    fn local(&self, e: usize, nodal: &[f64]) -> [f64; 4] {
        self.mesh.element(e).nodes.map(|i| nodal[i])
    }

    /// Number of velocity unknowns (both components).
    pub fn n_velocity(&self) -> usize {
        2 * self.vdofs.n_free()
    }

    pub fn n_scalar(&self) -> usize {
        self.sdofs.n_free()
    }

    /// Nodal velocity components from free coefficients.
    pub fn expand_velocity(&self, free: &[f64]) -> [Vec<f64>; 2] {
        let nf = self.vdofs.n_free();
        [self.vdofs.expand(&free[..nf]), self.vdofs.expand(&free[nf..])]
    }

    pub fn restrict_velocity(&self, v: &VectorField2) -> Vec<f64> {
        let mut out = self.vdofs.restrict(v.x.values());
        out.extend(self.vdofs.restrict(v.y.values()));
        out
    }

    fn scatter_vec(&self, dofs: &DofMap, ncomp: usize, e: usize, local: &[f64], out: &mut [f64]) {
        let nodes = self.mesh.element(e).nodes;
        for c in 0..ncomp {
            for a in 0..4 {
                for &(d, w) in dofs.expansion(nodes[a]) {
                    out[c * dofs.n_free() + d] += w * local[c * 4 + a];
                }
            }
        }
    }

    fn pattern(&self, block: Block) -> &BlockPattern {
        let (rows, rcomp, cols, ccomp) = match block {
            Block::VelVel => (&self.vdofs, 2, &self.vdofs, 2),
            Block::VelScalar => (&self.vdofs, 2, &self.sdofs, 1),
            Block::ScalarVel => (&self.sdofs, 1, &self.vdofs, 2),
            Block::ScalarScalar => (&self.sdofs, 1, &self.sdofs, 1),
        };
        self.patterns[block as usize].get_or_init(|| self.build_pattern(rows, rcomp, cols, ccomp))
    }

    fn build_pattern(&self, rows: &DofMap, rcomp: usize, cols: &DofMap, ccomp: usize) -> BlockPattern {
        let n_rows = rcomp * rows.n_free();
        let n_cols = ccomp * cols.n_free();
        let width = 4 * ccomp;
        let mut entries: Vec<(usize, usize, u32, f64)> = Vec::new();
        let mut starts = vec![0];
        for e in 0..self.mesh.n_elements() {
            let nodes = self.mesh.element(e).nodes;
            for rc in 0..rcomp {
                for a in 0..4 {
                    for &(dr, wr) in rows.expansion(nodes[a]) {
                        for cc in 0..ccomp {
                            for b in 0..4 {
                                for &(dc, wc) in cols.expansion(nodes[b]) {
                                    let l = ((rc * 4 + a) * width + cc * 4 + b) as u32;
                                    entries.push((rc * rows.n_free() + dr, cc * cols.n_free() + dc, l, wr * wc));
                                }
                            }
                        }
                    }
                }
            }
            starts.push(entries.len());
        }
        let mut keys: Vec<(usize, usize)> = entries.iter().map(|t| (t.0, t.1)).collect();
        keys.sort_unstable();
        keys.dedup();
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _) in &keys {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<usize> = keys.iter().map(|k| k.1).collect();
        let map = entries
            .iter()
            .map(|&(r, c, l, w)| {
                let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
                let pos = row_ptr[r] + row.binary_search(&c).expect("entry in pattern");
                (l, pos as u32, w)
            })
            .collect();
        BlockPattern {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            starts,
            map,
        }
    }

    /// Sums element matrices (row-major, `comp * 4 + node` indexing) into a block.
    fn assemble<L: AsRef<[f64]>>(&self, block: Block, locals: &[L]) -> CsrMatrix {
        let pat = self.pattern(block);
        let mut vals = vec![0.0; pat.col_idx.len()];
        for (e, local) in locals.iter().enumerate() {
            let local = local.as_ref();
            for &(l, pos, w) in &pat.map[pat.starts[e]..pat.starts[e + 1]] {
                vals[pos as usize] += w * local[l as usize];
            }
        }
        CsrMatrix::from_parts(pat.n_rows, pat.n_cols, pat.row_ptr.clone(), pat.col_idx.clone(), vals)
    }

    /// Element residual and (optionally) Jacobian of the momentum step.
    fn momentum_local(&self, e: usize, v: &[Vec<f64>; 2], m: &MomentumData, with_jac: bool) -> ([f64; 8], Vec<f64>) {
        let p = &self.params;
        let vx = self.local(e, &v[0]);
        let vy = self.local(e, &v[1]);
        let px = self.local(e, m.v_prev[0]);
        let py = self.local(e, m.v_prev[1]);
        let ac = self.local(e, m.a_coef);
        let hc = self.local(e, m.h_coef);
        let mut r = [0.0; 8];
        let mut jac = if with_jac { vec![0.0; 64] } else { Vec::new() };
        let k = m.k;
        for (q, qp) in self.qps(e).iter().enumerate() {
            let vel = [interp(&qp.phi, &vx), interp(&qp.phi, &vy)];
            let inc = [
                interp(&qp.phi, &std::array::from_fn(|a| vx[a] - px[a])),
                interp(&qp.phi, &std::array::from_fn(|a| vy[a] - py[a])),
            ];
            let g = [interp_grad(&qp.dphi, &vx), interp_grad(&qp.dphi, &vy)];
            let a = interp(&qp.phi, &ac);
            let h = interp(&qp.phi, &hc);
            let vo = self.ocean_qp[e][q];
            let va = m.wind_qp[e][q];
            let rh = p.rho_ice * h;
            let cor = coriolis([vel[0] - vo[0], vel[1] - vo[1]], p.f_c);
            let tau = rheology::forcing_tau(vel, vo, va, p);
            let sig = rheology::stress(&g, a, h, p);
            for c in 0..2 {
                let f = rh * inc[c] + k * (rh * cor[c] - tau[c]);
                for i in 0..4 {
                    r[c * 4 + i] += qp.w * (f * qp.phi[i] + k * contract(&sig, c, &qp.dphi[i]));
                }
            }
            if !with_jac {
                continue;
            }
            for d in 0..2 {
                let mut ed = [0.0; 2];
                ed[d] = 1.0;
                let cor_d = coriolis(ed, p.f_c);
                let tau_d = rheology::tau_dv(vel, vo, ed, p);
                for j in 0..4 {
                    let mut dg = [[0.0; 2]; 2];
                    dg[d] = qp.dphi[j];
                    let dsig = rheology::stress_dv(&g, a, h, &dg, p);
                    for c in 0..2 {
                        let point = (if c == d { rh } else { 0.0 } + k * (rh * cor_d[c] - tau_d[c])) * qp.phi[j];
                        for i in 0..4 {
                            jac[(c * 4 + i) * 8 + d * 4 + j] +=
                                qp.w * (point * qp.phi[i] + k * contract(&dsig, c, &qp.dphi[i]));
                        }
                    }
                }
            }
        }
        (r, jac)
    }

    /// Momentum residual (free velocity unknowns) at free velocity `v`.
    pub fn momentum_residual(&self, v: &[f64], m: &MomentumData) -> Vec<f64> {
        let vn = self.expand_velocity(v);
        let locals: Vec<_> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| self.momentum_local(e, &vn, m, false).0)
            .collect();
        let mut out = vec![0.0; self.n_velocity()];
        for (e, r) in locals.iter().enumerate() {
            self.scatter_vec(&self.vdofs, 2, e, r, &mut out);
        }
        out
    }

    /// Momentum residual and its Jacobian with respect to the new velocity.
    pub fn momentum_system(&self, v: &[f64], m: &MomentumData) -> (Vec<f64>, CsrMatrix) {
        let vn = self.expand_velocity(v);
        let locals: Vec<_> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| self.momentum_local(e, &vn, m, true))
            .collect();
        let mut out = vec![0.0; self.n_velocity()];
        for (e, (r, _)) in locals.iter().enumerate() {
            self.scatter_vec(&self.vdofs, 2, e, r, &mut out);
        }
        let jacs: Vec<&Vec<f64>> = locals.iter().map(|l| &l.1).collect();
        (out, self.assemble(Block::VelVel, &jacs))
    }

    /// Derivatives of the momentum residual with respect to the lagged
    /// concentration, lagged thickness and previous velocity, in that order.
    pub fn momentum_couplings(&self, v: &[f64], m: &MomentumData) -> (CsrMatrix, CsrMatrix, CsrMatrix) {
        let p = &self.params;
        let vn = self.expand_velocity(v);
        let k = m.k;
        let locals: Vec<_> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let vx = self.local(e, &vn[0]);
                let vy = self.local(e, &vn[1]);
                let px = self.local(e, m.v_prev[0]);
                let py = self.local(e, m.v_prev[1]);
                let ac = self.local(e, m.a_coef);
                let hc = self.local(e, m.h_coef);
                let mut da = [0.0; 32];
                let mut dh = [0.0; 32];
                let mut dv = [0.0; 64];
                for (q, qp) in self.qps(e).iter().enumerate() {
                    let vel = [interp(&qp.phi, &vx), interp(&qp.phi, &vy)];
                    let prev = [interp(&qp.phi, &px), interp(&qp.phi, &py)];
                    let g = [interp_grad(&qp.dphi, &vx), interp_grad(&qp.dphi, &vy)];
                    let a = interp(&qp.phi, &ac);
                    let h = interp(&qp.phi, &hc);
                    let vo = self.ocean_qp[e][q];
                    let cor = coriolis([vel[0] - vo[0], vel[1] - vo[1]], p.f_c);
                    let sa = rheology::stress_da(&g, a, h, p);
                    let sh = rheology::stress_dh(&g, a, p);
                    for c in 0..2 {
                        let fh = p.rho_ice * ((vel[c] - prev[c]) + k * cor[c]);
                        for i in 0..4 {
                            let ta = k * contract(&sa, c, &qp.dphi[i]);
                            let th = k * contract(&sh, c, &qp.dphi[i]) + fh * qp.phi[i];
                            for j in 0..4 {
                                da[(c * 4 + i) * 4 + j] += qp.w * ta * qp.phi[j];
                                dh[(c * 4 + i) * 4 + j] += qp.w * th * qp.phi[j];
                                dv[(c * 4 + i) * 8 + c * 4 + j] -= qp.w * p.rho_ice * h * qp.phi[i] * qp.phi[j];
                            }
                        }
                    }
                }
                (da, dh, dv)
            })
            .collect();
        let da: Vec<&[f64]> = locals.iter().map(|l| &l.0[..]).collect();
        let dh: Vec<&[f64]> = locals.iter().map(|l| &l.1[..]).collect();
        let dv: Vec<&[f64]> = locals.iter().map(|l| &l.2[..]).collect();
        (
            self.assemble(Block::VelScalar, &da),
            self.assemble(Block::VelScalar, &dh),
            self.assemble(Block::VelVel, &dv),
        )
    }

    /// Transport residual and Jacobian for a scalar `s` advected by nodal velocity `v`.
    ///
    /// With `penalty` the right side `k min(0, 1 - s)` is included.
    pub fn transport_system(&self, s: &[f64], s_prev: &[f64], v: &[Vec<f64>; 2], k: f64, penalty: bool) -> (Vec<f64>, CsrMatrix) {
        let (r, j) = self.transport_assemble(s, s_prev, v, k, penalty, true);
        (r, j.expect("jacobian requested"))
    }

    pub fn transport_residual(&self, s: &[f64], s_prev: &[f64], v: &[Vec<f64>; 2], k: f64, penalty: bool) -> Vec<f64> {
        self.transport_assemble(s, s_prev, v, k, penalty, false).0
    }

    fn transport_assemble(
        &self,
        s: &[f64],
        s_prev: &[f64],
        v: &[Vec<f64>; 2],
        k: f64,
        penalty: bool,
        with_jac: bool,
    ) -> (Vec<f64>, Option<CsrMatrix>) {
        let sn = self.sdofs.expand(s);
        let locals: Vec<_> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let u = self.local(e, &sn);
                let up = self.local(e, s_prev);
                let vx = self.local(e, &v[0]);
                let vy = self.local(e, &v[1]);
                let mut r = [0.0; 4];
                let mut jac = [0.0; 16];
                for qp in self.qps(e).iter() {
                    let val = interp(&qp.phi, &u);
                    let inc = interp(&qp.phi, &std::array::from_fn(|a| u[a] - up[a]));
                    let gs = interp_grad(&qp.dphi, &u);
                    let vel = [interp(&qp.phi, &vx), interp(&qp.phi, &vy)];
                    let div = interp_grad(&qp.dphi, &vx)[0] + interp_grad(&qp.dphi, &vy)[1];
                    let (pen, chi) = if penalty {
                        ((1.0 - val).min(0.0), if val >= 1.0 { 1.0 } else { 0.0 })
                    } else {
                        (0.0, 0.0)
                    };
                    let f = inc + k * (vel[0] * gs[0] + vel[1] * gs[1] + val * div - pen);
                    for i in 0..4 {
                        r[i] += qp.w * f * qp.phi[i];
                        if !with_jac {
                            continue;
                        }
                        for j in 0..4 {
                            let d = qp.phi[j] * (1.0 + k * (div + chi))
                                + k * (vel[0] * qp.dphi[j][0] + vel[1] * qp.dphi[j][1]);
                            jac[i * 4 + j] += qp.w * d * qp.phi[i];
                        }
                    }
                }
                (r, jac)
            })
            .collect();
        let mut out = vec![0.0; self.n_scalar()];
        for (e, (r, _)) in locals.iter().enumerate() {
            self.scatter_vec(&self.sdofs, 1, e, r, &mut out);
        }
        if !with_jac {
            return (out, None);
        }
        let jacs: Vec<&[f64]> = locals.iter().map(|l| &l.1[..]).collect();
        (out, Some(self.assemble(Block::ScalarScalar, &jacs)))
    }

    /// Derivative of the transport residual of nodal scalar `s` with respect to the velocity.
    pub fn transport_velocity_coupling(&self, s: &[f64], k: f64) -> CsrMatrix {
        let locals: Vec<_> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let u = self.local(e, s);
                let mut jac = [0.0; 32];
                for qp in self.qps(e).iter() {
                    let val = interp(&qp.phi, &u);
                    let gs = interp_grad(&qp.dphi, &u);
                    for i in 0..4 {
                        for d in 0..2 {
                            for j in 0..4 {
                                jac[i * 8 + d * 4 + j] +=
                                    qp.w * k * (qp.phi[j] * gs[d] + val * qp.dphi[j][d]) * qp.phi[i];
                            }
                        }
                    }
                }
                jac
            })
            .collect();
        let jacs: Vec<&[f64]> = locals.iter().map(|l| &l[..]).collect();
        self.assemble(Block::ScalarVel, &jacs)
    }

    /// Scalar mass matrix.
    pub fn scalar_mass(&self) -> CsrMatrix {
        let mut locals = Vec::with_capacity(self.mesh.n_elements());
        for e in 0..self.mesh.n_elements() {
            let mut m = [0.0; 16];
            for qp in self.qps(e).iter() {
                for i in 0..4 {
                    for j in 0..4 {
                        m[i * 4 + j] += qp.w * qp.phi[i] * qp.phi[j];
                    }
                }
            }
            locals.push(m);
        }
        self.assemble(Block::ScalarScalar, &locals)
    }

    /// Free-dof load `int_{goal region} phi_i dx`.
    pub fn goal_load(&self, goal: &GoalSpec) -> Vec<f64> {
        self.sdofs.gather_loads(&clipped_load(&self.mesh, &goal.region))
    }
}

/// Outcome of a Newton solve.
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub linear_iterations: usize,
}

/// GMRES iterations allowed with a preconditioner built for an earlier matrix
/// before it is rebuilt.
const STALE_PRECONDITIONER_ITERATIONS: usize = 12;

/// Solves with the cached preconditioner if it is still effective, otherwise
/// rebuilds it from `a`.
pub fn linear_solve(
    a: &CsrMatrix,
    b: &[f64],
    settings: &KrylovSettings,
    cache: &mut Option<Preconditioner>,
) -> Result<linalg::LinearSolution> {
    let mut spent = 0;
    if let Some(pc) = cache.as_ref() {
        let quick = KrylovSettings {
            max_iter: STALE_PRECONDITIONER_ITERATIONS,
            ..*settings
        };
        match linalg::solve_with(a, b, &quick, pc) {
            Ok(sol) => return Ok(sol),
            Err(_) => spent = STALE_PRECONDITIONER_ITERATIONS,
        }
    }
    let pc = cache.insert(Preconditioner::new(a, settings.preconditioner)?);
    let mut sol = linalg::solve_with(a, b, settings, pc)?;
    sol.iterations += spent;
    Ok(sol)
}

/// Damped Newton iteration with a residual-halving line search.
///
/// Stops when the residual has dropped by `newton_tol` or when the Newton
/// correction is at round-off level relative to the iterate; the latter
/// happens when a stiff penalty term puts a floor of `stiffness * ulp` under
/// the attainable residual.
pub fn newton(
    x0: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    system: impl Fn(&[f64]) -> (Vec<f64>, CsrMatrix),
    settings: &SolverSettings,
    what: &str,
) -> Result<NewtonOutcome> {
    let mut x = x0;
    let (mut r, mut jac) = system(&x);
    let r0 = norm(&r);
    let mut rn = r0;
    let mut lin = 0;
    let mut pc = None;
    let target = settings.newton_tol * r0;
    let rel = |rn: f64| if r0 > 0.0 { rn / r0 } else { 0.0 };
    for it in 0..settings.newton_max_iter {
        if rn <= target || rn == 0.0 {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                residual: rel(rn),
                linear_iterations: lin,
            });
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let sol = linear_solve(&jac, &neg, &settings.krylov, &mut pc)?;
        lin += sol.iterations;
        let step = sol.x.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let scale = x.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if step <= 1e-13 * scale {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                residual: rel(rn),
                linear_iterations: lin,
            });
        }
        let mut alpha = 1.0;
        let mut halvings = 0;
        let (trial, rt) = loop {
            let trial: Vec<f64> = x.iter().zip(&sol.x).map(|(a, d)| a + alpha * d).collect();
            let rt = residual(&trial);
            if norm(&rt) < rn {
                break (trial, rt);
            }
            if halvings == settings.max_halvings {
                // No decrease along the direction: take the full step anyway,
                // the residual is only piecewise smooth.
                let trial: Vec<f64> = x.iter().zip(&sol.x).map(|(a, d)| a + d).collect();
                let rt = residual(&trial);
                break (trial, rt);
            }
            alpha *= 0.5;
            halvings += 1;
        };
        log::trace!("{what}: iteration {it}, residual {:.3e}, damping {alpha}", rel(norm(&rt)));
        x = trial;
        (r, jac) = system(&x);
        rn = norm(&r);
    }
    if rn <= target {
        return Ok(NewtonOutcome {
            x,
            iterations: settings.newton_max_iter,
            residual: rel(rn),
            linear_iterations: lin,
        });
    }
    Err(Error::NonConvergence {
        what: what.to_string(),
        iterations: settings.newton_max_iter,
        residual: rel(rn),
    })
}

/// Velocity solve of one step; returns nodal velocity components.
pub fn momentum_step(
    disc: &Discretization,
    prev: &State,
    scenario: &Scenario,
    t_n: f64,
    k: f64,
    settings: &SolverSettings,
) -> Result<(VectorField2, NewtonOutcome)> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    let wind = disc.wind_qp(scenario, t_n);
    let data = MomentumData {
        v_prev: [prev.v.x.values(), prev.v.y.values()],
        a_coef: prev.a.values(),
        h_coef: prev.h.values(),
        k,
        wind_qp: &wind,
    };
    let x0 = disc.restrict_velocity(&prev.v);
    let out = newton(
        x0,
        |v| disc.momentum_residual(v, &data),
        |v| disc.momentum_system(v, &data),
        settings,
        "momentum Newton",
    )?;
    let [vx, vy] = disc.expand_velocity(&out.x);
    let mesh = disc.mesh.clone();
    let v = VectorField2::new(ScalarField::new(mesh.clone(), vx)?, ScalarField::new(mesh, vy)?)?;
    Ok((v, out))
}

/// Transport of concentration and thickness with the new velocity.
pub fn transport_step(
    disc: &Discretization,
    prev: &State,
    v: &VectorField2,
    k: f64,
    settings: &SolverSettings,
) -> Result<(ScalarField, ScalarField, usize, usize)> {
    let vn = [v.x.values().to_vec(), v.y.values().to_vec()];
    let mut iters = 0;
    let mut lin = 0;
    let mut solve = |field: &ScalarField, penalty: bool, what: &str| -> Result<ScalarField> {
        let x0 = disc.sdofs.restrict(field.values());
        let out = newton(
            x0,
            |s| disc.transport_residual(s, field.values(), &vn, k, penalty),
            |s| disc.transport_system(s, field.values(), &vn, k, penalty),
            settings,
            what,
        )?;
        iters += out.iterations;
        lin += out.linear_iterations;
        ScalarField::new(disc.mesh.clone(), disc.sdofs.expand(&out.x))
    };
    let a = solve(&prev.a, true, "concentration transport")?;
    let h = solve(&prev.h, false, "thickness transport")?;
    Ok((a, h, iters, lin))
}

/// Full primal sweep over the horizon with step `k`.
pub fn simulate(scenario: &Scenario, mesh: Arc<QuadMesh>, k: f64, settings: &SolverSettings) -> Result<Trajectory> {
    scenario.validate()?;
    settings.validate()?;
    let n_steps = scenario.steps(k)?;
    let disc = Discretization::new(mesh.clone(), scenario);
    let init = scenario.initial_state(&mesh);
    let mut diagnostics = vec![diagnose(&init, 0, 0.0, 0, 0)];
    let mut states = vec![init];
    let times: Vec<f64> = (0..=n_steps).map(|n| n as f64 * k).collect();
    for n in 1..=n_steps {
        let prev = &states[n - 1];
        let (v, mo) = momentum_step(&disc, prev, scenario, times[n], k, settings).map_err(|e| e.at_step(n))?;
        let (a, h, ti, tl) = transport_step(&disc, prev, &v, k, settings).map_err(|e| e.at_step(n))?;
        let st = State { v, a, h };
        let d = diagnose(&st, mo.iterations, mo.residual, ti, mo.linear_iterations + tl);
        log::debug!("step {n}: newton {} ({:.2e}), min H {:.4}, max A {:.6}", d.newton_iterations, d.newton_residual, d.min_h, d.max_a);
        diagnostics.push(d);
        states.push(st);
    }
    Ok(Trajectory {
        mesh,
        times,
        states,
        diagnostics,
    })
}

fn diagnose(s: &State, it: usize, res: f64, ti: usize, lin: usize) -> StepDiagnostics {
    StepDiagnostics {
        newton_iterations: it,
        newton_residual: res,
        transport_iterations: ti,
        linear_iterations: lin,
        min_a: s.a.min(),
        max_a: s.a.max(),
        min_h: s.h.min(),
        max_h: s.h.max(),
        mass_h: s.h.integral(),
    }
}
