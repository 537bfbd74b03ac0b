//! Q1 fields, quadrature, degree-of-freedom maps and the reconstruction
//! operators used as error-estimator weights.
//!
//! Reference coordinates on every element run over `[0,1]^2`. Estimator
//! weights are represented element by element as biquadratics through the
//! 3x3 lattice of the element (`LocalField`); bilinear fields embed exactly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{QuadMesh, Rect};

/// Tensor-product quadrature on the reference square.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// How time integrals over one step are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeRule {
    /// Right endpoint, as in the dG(0) solve.
    Box,
    /// Interval midpoint, as in the estimator.
    Midpoint,
}

fn gauss_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        1 => (vec![0.5], vec![1.0]),
        2 => {
            let d = 0.5 / 3f64.sqrt();
            (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
        }
        3 => {
            let d = 0.5 * (0.6f64).sqrt();
            (vec![0.5 - d, 0.5, 0.5 + d], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
        }
        _ => unreachable!("checked by caller"),
    }
}

impl QuadratureRule {
    /// `n x n` Gauss rule, `n` in 1..=3.
    pub fn gauss(n: usize) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidArgument(format!("no {n}-point Gauss rule")));
        }
        let (p, w) = gauss_1d(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([p[i], p[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        Ok(QuadratureRule { points, weights })
    }

    pub fn gauss2() -> Self {
        Self::gauss(2).expect("2-point rule exists")
    }

    pub fn gauss3() -> Self {
        Self::gauss(3).expect("3-point rule exists")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Bilinear shape functions and reference derivatives, nodes counter-clockwise from (0,0).
pub fn q1_shape(p: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let (s, t) = (p[0], p[1]);
    (
        [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t],
        [
            [-(1.0 - t), -(1.0 - s)],
            [1.0 - t, -s],
            [t, s],
            [-t, 1.0 - s],
        ],
    )
}

fn lagrange3(s: f64) -> ([f64; 3], [f64; 3]) {
    (
        [2.0 * (s - 0.5) * (s - 1.0), -4.0 * s * (s - 1.0), 2.0 * s * (s - 0.5)],
        [4.0 * s - 3.0, 4.0 - 8.0 * s, 4.0 * s - 1.0],
    )
}

/// Biquadratic Lagrange shape functions on the 3x3 lattice (row-major from (0,0)).
pub fn q2_shape(p: [f64; 2]) -> ([f64; 9], [[f64; 2]; 9]) {
    let (ls, ds) = lagrange3(p[0]);
    let (lt, dt) = lagrange3(p[1]);
    let mut v = [0.0; 9];
    let mut d = [[0.0; 2]; 9];
    for j in 0..3 {
        for i in 0..3 {
            v[j * 3 + i] = ls[i] * lt[j];
            d[j * 3 + i] = [ds[i] * lt[j], ls[i] * dt[j]];
        }
    }
    (v, d)
}

/// Shape-function tables of a rule, evaluated once and reused across elements.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub rule: QuadratureRule,
    pub q1: Vec<([f64; 4], [[f64; 2]; 4])>,
    pub q2: Vec<([f64; 9], [[f64; 2]; 9])>,
}

impl BasisTable {
    pub fn new(rule: QuadratureRule) -> Self {
        let q1 = rule.points.iter().map(|&p| q1_shape(p)).collect();
        let q2 = rule.points.iter().map(|&p| q2_shape(p)).collect();
        BasisTable { rule, q1, q2 }
    }
}

/// Maps mesh nodes to free unknowns.
///
/// Hanging nodes are expanded into their (recursively resolved) masters with
/// weight 1/2; for velocity maps boundary nodes carry no unknown (v = 0).
#[derive(Clone, Debug)]
pub struct DofMap {
    n_free: usize,
    expansion: Vec<Vec<(usize, f64)>>,
    free_node: Vec<usize>,
}

impl DofMap {
    /// Unknowns for a scalar field without boundary conditions.
    pub fn scalar(mesh: &QuadMesh) -> Self {
        Self::build(mesh, false)
    }

    /// Unknowns for one velocity component with homogeneous Dirichlet data.
    pub fn velocity(mesh: &QuadMesh) -> Self {
        Self::build(mesh, true)
    }

    fn build(mesh: &QuadMesh, dirichlet: bool) -> Self {
        let nn = mesh.n_nodes();
        let mut expansion: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nn];
        let mut free_node = Vec::new();
        for i in 0..nn {
            if mesh.is_hanging(i) || (dirichlet && mesh.is_boundary(i)) {
                continue;
            }
            expansion[i] = vec![(free_node.len(), 1.0)];
            free_node.push(i);
        }
        // Hanging nodes are ordered coarse to fine, so masters resolve first.
        for h in mesh.hanging_nodes() {
            if dirichlet && mesh.is_boundary(h.node) {
                continue;
            }
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for m in h.masters {
                for &(d, w) in &expansion[m] {
                    match acc.iter_mut().find(|(e, _)| *e == d) {
                        Some(slot) => slot.1 += 0.5 * w,
                        None => acc.push((d, 0.5 * w)),
                    }
                }
            }
            expansion[h.node] = acc;
        }
        DofMap {
            n_free: free_node.len(),
            expansion,
            free_node,
        }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn expansion(&self, node: usize) -> &[(usize, f64)] {
        &self.expansion[node]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_node
    }

    /// Nodal values of the field with the given free coefficients.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.expansion
            .iter()
            .map(|e| e.iter().map(|&(d, w)| w * free[d]).sum())
            .collect()
    }

    /// Free coefficients read off nodal values (injection).
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.free_node.iter().map(|&i| nodal[i]).collect()
    }

    /// Transpose of `expand`: accumulates nodal loads onto free unknowns.
    pub fn gather_loads(&self, nodal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (e, &v) in self.expansion.iter().zip(nodal) {
            for &(d, w) in e {
                out[d] += w * v;
            }
        }
        out
    }
}

/// Continuous piecewise-bilinear scalar field.
#[derive(Clone, Debug)]
pub struct ScalarField {
    mesh: Arc<QuadMesh>,
    values: Vec<f64>,
}

impl ScalarField {
    /// Field from nodal values; hanging-node values are overwritten by their constraint.
    pub fn new(mesh: Arc<QuadMesh>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::MeshMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        mesh.apply_constraints(&mut values);
        Ok(ScalarField { mesh, values })
    }

    pub fn constant(mesh: Arc<QuadMesh>, c: f64) -> Self {
        let n = mesh.n_nodes();
        ScalarField {
            mesh,
            values: vec![c; n],
        }
    }

    pub fn zeros(mesh: Arc<QuadMesh>) -> Self {
        Self::constant(mesh, 0.0)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<QuadMesh>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = mesh.nodes().iter().map(|p| f(p[0], p[1])).collect();
        Self::new(mesh, values).expect("length matches by construction")
    }

    pub fn mesh(&self) -> &Arc<QuadMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn local(&self, e: usize) -> [f64; 4] {
        self.mesh.element(e).nodes.map(|i| self.values[i])
    }

    /// Value at reference point `p` of element `e`.
    pub fn eval(&self, e: usize, p: [f64; 2]) -> f64 {
        let (n, _) = q1_shape(p);
        let u = self.local(e);
        (0..4).map(|a| n[a] * u[a]).sum()
    }

    /// Physical gradient at reference point `p` of element `e`.
    pub fn grad(&self, e: usize, p: [f64; 2]) -> [f64; 2] {
        let (_, d) = q1_shape(p);
        let (_, h) = self.mesh.element_box(e);
        let u = self.local(e);
        let mut g = [0.0; 2];
        for a in 0..4 {
            g[0] += d[a][0] * u[a] / h[0];
            g[1] += d[a][1] * u[a] / h[1];
        }
        g
    }

    /// `a * self + b * other` on the same mesh.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Result<ScalarField> {
        same_mesh(&self.mesh, &other.mesh)?;
        Ok(ScalarField {
            mesh: self.mesh.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Integral over the domain.
    pub fn integral(&self) -> f64 {
        let one = ScalarField::constant(self.mesh.clone(), 1.0);
        l2_product(self, &one).expect("same mesh")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Two-component Q1 field.
#[derive(Clone, Debug)]
pub struct VectorField2 {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField2 {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        same_mesh(x.mesh(), y.mesh())?;
        Ok(VectorField2 { x, y })
    }

    pub fn zeros(mesh: Arc<QuadMesh>) -> Self {
        VectorField2 {
            x: ScalarField::zeros(mesh.clone()),
            y: ScalarField::zeros(mesh),
        }
    }

    pub fn interpolate(mesh: Arc<QuadMesh>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        VectorField2 {
            x: ScalarField::interpolate(mesh.clone(), |x, y| f(x, y)[0]),
            y: ScalarField::interpolate(mesh, |x, y| f(x, y)[1]),
        }
    }

    pub fn mesh(&self) -> &Arc<QuadMesh> {
        self.x.mesh()
    }

    pub fn eval(&self, e: usize, p: [f64; 2]) -> [f64; 2] {
        [self.x.eval(e, p), self.y.eval(e, p)]
    }

    /// `g[i][j] = d v_i / d x_j`.
    pub fn grad(&self, e: usize, p: [f64; 2]) -> [[f64; 2]; 2] {
        [self.x.grad(e, p), self.y.grad(e, p)]
    }
}

pub(crate) fn same_mesh(a: &Arc<QuadMesh>, b: &Arc<QuadMesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || (a.n_nodes() == b.n_nodes() && a.hash() == b.hash()) {
        Ok(())
    } else {
        Err(Error::MeshMismatch("fields live on different meshes".into()))
    }
}

/// L2 inner product with 2x2 Gauss quadrature.
pub fn l2_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    same_mesh(f.mesh(), g.mesh())?;
    let mesh = f.mesh();
    let rule = QuadratureRule::gauss2();
    let mut sum = 0.0;
    for e in 0..mesh.n_elements() {
        let area = mesh.element_area(e);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            sum += w * area * f.eval(e, *p) * g.eval(e, *p);
        }
    }
    Ok(sum)
}

/// Temporal jump `u_n - u_{n-1}` of a dG(0) sequence at `t_{n-1}`.
pub fn jump(values: &[ScalarField], n: usize) -> Result<ScalarField> {
    if n == 0 || n >= values.len() {
        return Err(Error::OutOfRange {
            index: n,
            valid: format!("1..={}", values.len().saturating_sub(1)),
        });
    }
    values[n].lin_comb(1.0, &values[n - 1], -1.0)
}

/// Element-wise biquadratic field given by its values on each element's 3x3 lattice.
#[derive(Clone, Debug)]
pub struct LocalField {
    pub values: Vec<[f64; 9]>,
}

impl LocalField {
    pub fn zeros(n_elements: usize) -> Self {
        LocalField {
            values: vec![[0.0; 9]; n_elements],
        }
    }

    /// Exact embedding of nodal bilinear data.
    pub fn from_q1(mesh: &QuadMesh, nodal: &[f64]) -> Self {
        let values = mesh
            .elements()
            .iter()
            .map(|el| {
                let [a, b, c, d] = el.nodes.map(|i| nodal[i]);
                [
                    a,
                    0.5 * (a + b),
                    b,
                    0.5 * (a + d),
                    0.25 * (a + b + c + d),
                    0.5 * (b + c),
                    d,
                    0.5 * (d + c),
                    c,
                ]
            })
            .collect();
        LocalField { values }
    }

    pub fn from_field(field: &ScalarField) -> Self {
        Self::from_q1(field.mesh(), field.values())
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &LocalField, b: f64) -> LocalField {
        LocalField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| std::array::from_fn(|i| a * x[i] + b * y[i]))
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> LocalField {
        LocalField {
            values: self.values.iter().map(|x| x.map(|v| a * v)).collect(),
        }
    }

    /// Value and physical gradient at quadrature point `q` of `table` on element `e`.
    #[inline]
    pub fn eval_table(&self, e: usize, h: [f64; 2], table: &BasisTable, q: usize) -> (f64, [f64; 2]) {
        let (n, d) = &table.q2[q];
        let u = &self.values[e];
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..9 {
            v += n[a] * u[a];
            g[0] += d[a][0] * u[a];
            g[1] += d[a][1] * u[a];
        }
        (v, [g[0] / h[0], g[1] / h[1]])
    }

    pub fn eval(&self, mesh: &QuadMesh, e: usize, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (n, d) = q2_shape(p);
        let (_, h) = mesh.element_box(e);
        let u = &self.values[e];
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for a in 0..9 {
            v += n[a] * u[a];
            g[0] += d[a][0] * u[a];
            g[1] += d[a][1] * u[a];
        }
        (v, [g[0] / h[0], g[1] / h[1]])
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Patchwise biquadratic interpolant of the nodal values of `field`.
pub fn reconstruct_space(field: &ScalarField) -> Result<LocalField> {
    reconstruct_space_values(field.mesh(), field.values())
}

/// Same as [`reconstruct_space`] on raw nodal values.
pub fn reconstruct_space_values(mesh: &QuadMesh, nodal: &[f64]) -> Result<LocalField> {
    let patches = mesh.patches()?;
    let mut out = LocalField::zeros(mesh.n_elements());
    for patch in patches {
        let pv = patch.nodes.map(|i| nodal[i]);
        for (quad, &e) in patch.elements.iter().enumerate() {
            let (qx, qy) = ((quad % 2) as f64, (quad / 2) as f64);
            for j in 0..3 {
                for i in 0..3 {
                    let s = 0.5 * (qx + 0.5 * i as f64);
                    let t = 0.5 * (qy + 0.5 * j as f64);
                    let (n, _) = q2_shape([s, t]);
                    out.values[e][j * 3 + i] = (0..9).map(|a| n[a] * pv[a]).sum();
                }
            }
        }
    }
    Ok(out)
}

/// Spatial weight `i2h u - u` as an element-wise field.
pub fn space_weight(mesh: &QuadMesh, nodal: &[f64]) -> Result<LocalField> {
    Ok(reconstruct_space_values(mesh, nodal)?.lin_comb(1.0, &LocalField::from_q1(mesh, nodal), -1.0))
}

/// Linear interpolation between two values of a field-like type.
pub trait Lerp: Clone {
    /// `(1 - s) * self + s * other`.
    fn lerp(&self, other: &Self, s: f64) -> Self;
}

impl Lerp for f64 {
    fn lerp(&self, other: &Self, s: f64) -> Self {
        (1.0 - s) * self + s * other
    }
}

impl Lerp for Vec<f64> {
    fn lerp(&self, other: &Self, s: f64) -> Self {
        self.iter().zip(other).map(|(a, b)| (1.0 - s) * a + s * b).collect()
    }
}

impl Lerp for ScalarField {
    fn lerp(&self, other: &Self, s: f64) -> Self {
        self.lin_comb(1.0 - s, other, s).expect("fields of one trajectory share a mesh")
    }
}

/// Which end of its interval a dG(0) value is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeConvention {
    /// Primal: `u_n` is the value at `t_n`, reconstructed from `u_0` at `t_0`.
    Forward,
    /// Dual: `z_n` is the value at `t_{n-1}`, with `z_{N+1} = 0` at `t_N`.
    Backward,
}

/// Continuous piecewise-linear interpolation in time through values at `t_0..t_N`.
#[derive(Clone, Debug)]
pub struct TimeReconstruction<T: Lerp> {
    pub times: Vec<f64>,
    pub nodes: Vec<T>,
}

impl<T: Lerp> TimeReconstruction<T> {
    /// Reconstruction of a dG(0) sequence.
    ///
    /// Forward: `values = [u_0, ..., u_N]`. Backward: `values = [z_1, ..., z_N]`
    /// and `zero` is the terminal value `z_{N+1}`.
    pub fn new(times: &[f64], values: &[T], convention: TimeConvention, zero: Option<T>) -> Result<Self> {
        let nodes: Vec<T> = match convention {
            TimeConvention::Forward => values.to_vec(),
            TimeConvention::Backward => {
                let z = zero.ok_or_else(|| Error::InvalidArgument("backward reconstruction needs a terminal value".into()))?;
                values.iter().cloned().chain(std::iter::once(z)).collect()
            }
        };
        if times.len() < 2 || nodes.len() != times.len() {
            return Err(Error::InvalidArgument(format!(
                "{} time nodes for {} values",
                times.len(),
                nodes.len()
            )));
        }
        Ok(TimeReconstruction {
            times: times.to_vec(),
            nodes,
        })
    }

    pub fn at(&self, t: f64) -> T {
        let n = self.times.len();
        let i = match self.times.iter().position(|&tn| tn >= t) {
            Some(0) => return self.nodes[0].clone(),
            Some(i) => i,
            None => return self.nodes[n - 1].clone(),
        };
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        self.nodes[i - 1].lerp(&self.nodes[i], (t - t0) / (t1 - t0))
    }

    /// Value at the midpoint of interval `n` (1-based).
    pub fn midpoint(&self, n: usize) -> T {
        self.nodes[n - 1].lerp(&self.nodes[n], 0.5)
    }
}

/// Convenience: forward reconstruction of `[u_0..u_N]` on a uniform grid.
pub fn reconstruct_time<T: Lerp>(times: &[f64], values: &[T]) -> Result<TimeReconstruction<T>> {
    TimeReconstruction::new(times, values, TimeConvention::Forward, None)
}

/// Integral of a bilinear field over the part of each element inside `rect`.
pub fn clipped_integral(mesh: &QuadMesh, nodal: &[f64], rect: &Rect) -> f64 {
    let rule = QuadratureRule::gauss2();
    let mut sum = 0.0;
    for e in 0..mesh.n_elements() {
        let er = mesh.element_rect(e);
        let Some(c) = er.intersect(rect) else { continue };
        let u = mesh.element(e).nodes.map(|i| nodal[i]);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = c.x0 + p[0] * c.width();
            let y = c.y0 + p[1] * c.height();
            let (n, _) = q1_shape([(x - er.x0) / er.width(), (y - er.y0) / er.height()]);
            sum += w * c.area() * (0..4).map(|a| n[a] * u[a]).sum::<f64>();
        }
    }
    sum
}

/// Nodal load vector `int_{rect} phi_i dx` of the bilinear basis.
pub fn clipped_load(mesh: &QuadMesh, rect: &Rect) -> Vec<f64> {
    let rule = QuadratureRule::gauss2();
    let mut load = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let er = mesh.element_rect(e);
        let Some(c) = er.intersect(rect) else { continue };
        let nodes = mesh.element(e).nodes;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = c.x0 + p[0] * c.width();
            let y = c.y0 + p[1] * c.height();
            let (n, _) = q1_shape([(x - er.x0) / er.width(), (y - er.y0) / er.height()]);
            for a in 0..4 {
                load[nodes[a]] += w * c.area() * n[a];
            }
        }
    }
    load
}

/// Per-element integrals of a biquadratic field over the part inside `rect` (3x3 Gauss, exact).
pub fn clipped_local_integrals(mesh: &QuadMesh, field: &LocalField, rect: &Rect) -> Vec<f64> {
    let rule = QuadratureRule::gauss3();
    (0..mesh.n_elements())
        .map(|e| {
            let er = mesh.element_rect(e);
            let Some(c) = er.intersect(rect) else { return 0.0 };
            let mut s = 0.0;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let x = c.x0 + p[0] * c.width();
                let y = c.y0 + p[1] * c.height();
                let (n, _) = q2_shape([(x - er.x0) / er.width(), (y - er.y0) / er.height()]);
                s += w * c.area() * (0..9).map(|a| n[a] * field.values[e][a]).sum::<f64>();
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{uniform_mesh, RefinementMarks};
    use approx::assert_relative_eq;

    fn unit_mesh(n: usize) -> Arc<QuadMesh> {
        Arc::new(uniform_mesh(Rect::square(1.0), n).unwrap())
    }

    #[test]
    fn rules_sum_to_one() {
        for n in 1..=3 {
            let r = QuadratureRule::gauss(n).unwrap();
            assert_relative_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
        assert!(QuadratureRule::gauss(4).is_err());
    }

    #[test]
    fn eval_and_grad() {
        let m = unit_mesh(1);
        let c = ScalarField::constant(m.clone(), 3.5);
        assert_eq!(c.eval(0, [0.3, 0.7]), 3.5);
        assert!(c.grad(0, [0.3, 0.7]).iter().all(|g| g.abs() < 1e-14));
        let x = ScalarField::interpolate(m.clone(), |x, _| x);
        assert_relative_eq!(x.grad(0, [0.2, 0.9])[0], 1.0, epsilon = 1e-15);
        let xy = ScalarField::interpolate(m, |x, y| x * y);
        assert_relative_eq!(xy.eval(0, [0.5, 0.5]), 0.25);
        let g = xy.grad(0, [0.5, 0.5]);
        assert_relative_eq!(g[0], 0.5);
        assert_relative_eq!(g[1], 0.5);
    }

    #[test]
    fn l2_products() {
        let m = Arc::new(uniform_mesh(Rect::square(500e3), 4).unwrap());
        let one = ScalarField::constant(m.clone(), 1.0);
        let zero = ScalarField::zeros(m.clone());
        assert_relative_eq!(l2_product(&one, &one).unwrap(), 2.5e11, max_relative = 1e-14);
        assert_eq!(l2_product(&one, &zero).unwrap(), 0.0);
        let u = unit_mesh(3);
        let x = ScalarField::interpolate(u, |x, _| x);
        assert_relative_eq!(l2_product(&x, &x).unwrap(), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn mismatched_meshes_rejected() {
        let a = ScalarField::zeros(unit_mesh(2));
        let b = ScalarField::zeros(unit_mesh(4));
        assert!(matches!(l2_product(&a, &b), Err(Error::MeshMismatch(_))));
    }

    #[test]
    fn jumps() {
        let m = unit_mesh(2);
        let seq = vec![ScalarField::constant(m.clone(), 1.0), ScalarField::constant(m.clone(), 3.0)];
        let j = jump(&seq, 1).unwrap();
        assert!(j.values().iter().all(|&v| v == 2.0));
        assert!(jump(&seq, 0).is_err());
        assert!(jump(&seq, 2).is_err());
        let still = vec![ScalarField::constant(m.clone(), 1.0); 3];
        assert!(jump(&still, 2).unwrap().values().iter().all(|&v| v == 0.0));
        let k = 0.25;
        let slope = ScalarField::interpolate(m.clone(), |x, y| 1.0 + x - y);
        let lin: Vec<ScalarField> = (0..4)
            .map(|n| ScalarField::interpolate(m.clone(), |x, y| 5.0 + n as f64 * k * (1.0 + x - y)))
            .collect();
        let j = jump(&lin, 2).unwrap();
        for (a, b) in j.values().iter().zip(slope.values()) {
            assert_relative_eq!(*a, k * b, epsilon = 1e-14);
        }
    }

    #[test]
    fn time_reconstruction() {
        let times = [0.0, 1.0, 2.0];
        // Backward convention: z_1 at t_0, z_2 at t_1, z_3 = 0 at t_2.
        let r = TimeReconstruction::new(&times, &[4.0, 2.0], TimeConvention::Backward, Some(0.0)).unwrap();
        assert_eq!(r.at(0.5), 3.0);
        assert_eq!(r.midpoint(1) - 4.0, -1.0);
        let times: Vec<f64> = (0..=4).map(f64::from).collect();
        let z: Vec<f64> = (0..=4).map(f64::from).collect();
        let r = reconstruct_time(&times, &z).unwrap();
        assert_eq!(r.at(2.5), 2.5);
        let c = reconstruct_time(&times, &[7.0; 5]).unwrap();
        assert_eq!(c.at(1.3), 7.0);
        assert_eq!(c.midpoint(3) - 7.0, 0.0);
    }

    #[test]
    fn space_reconstruction() {
        let m = unit_mesh(4);
        let x = ScalarField::interpolate(m.clone(), |x, y| 2.0 * x - y + 3.0 * x * y);
        assert!(space_weight(&m, x.values()).unwrap().max_abs() <= 1e-13);
        let c = ScalarField::constant(m.clone(), 2.0);
        assert!(space_weight(&m, c.values()).unwrap().max_abs() <= 1e-15);
        let sq = ScalarField::interpolate(m.clone(), |x, y| x * x + x * y * y);
        let r = reconstruct_space(&sq).unwrap();
        for e in 0..m.n_elements() {
            for p in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.35]] {
                let (o, h) = m.element_box(e);
                let (px, py) = (o[0] + p[0] * h[0], o[1] + p[1] * h[1]);
                assert_relative_eq!(r.eval(&m, e, p).0, px * px + px * py * py, epsilon = 1e-13);
            }
        }
        let odd = ScalarField::zeros(unit_mesh(3));
        assert!(matches!(reconstruct_space(&odd), Err(Error::MissingPatchStructure)));
    }

    #[test]
    fn hanging_nodes_are_constrained() {
        let base = uniform_mesh(Rect::square(1.0), 4).unwrap();
        let mut marks = RefinementMarks::none(16);
        marks.set(0);
        let m = Arc::new(base.refine(&marks).unwrap());
        let dofs = DofMap::scalar(&m);
        assert_eq!(dofs.n_free(), m.n_nodes() - m.hanging_nodes().len());
        let f = ScalarField::interpolate(m.clone(), |x, y| (3.0 * x).sin() + y * y);
        let free = dofs.restrict(f.values());
        let back = dofs.expand(&free);
        for h in m.hanging_nodes() {
            assert_relative_eq!(back[h.node], 0.5 * (back[h.masters[0]] + back[h.masters[1]]));
        }
        assert_eq!(back, f.values());
        let v = DofMap::velocity(&m);
        let expanded = v.expand(&vec![1.0; v.n_free()]);
        for i in 0..m.n_nodes() {
            if m.is_boundary(i) {
                assert_eq!(expanded[i], 0.0);
            }
        }
    }

    #[test]
    fn clipped_integrals() {
        let m = uniform_mesh(Rect::square(500e3), 8).unwrap();
        let ones = vec![1.0; m.n_nodes()];
        let r = Rect::new(375e3, 375e3, 500e3, 500e3).unwrap();
        assert_relative_eq!(clipped_integral(&m, &ones, &r), 125e3 * 125e3, max_relative = 1e-13);
        let load = clipped_load(&m, &r);
        assert_relative_eq!(load.iter().sum::<f64>(), 125e3 * 125e3, max_relative = 1e-13);
        let lf = LocalField::from_q1(&m, &ones);
        let per = clipped_local_integrals(&m, &lf, &r);
        assert_relative_eq!(per.iter().sum::<f64>(), 125e3 * 125e3, max_relative = 1e-13);
    }
}
