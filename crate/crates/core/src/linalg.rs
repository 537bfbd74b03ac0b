//! Sparse matrices, preconditioners and restarted GMRES.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from CSR arrays with sorted, unique column indices per row.
    pub fn from_parts(n_rows: usize, n_cols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, vals: Vec<f64>) -> Self {
        assert_eq!(row_ptr.len(), n_rows + 1);
        assert_eq!(col_idx.len(), vals.len());
        assert_eq!(row_ptr[n_rows], vals.len());
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `A^T x` without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate().take(self.n_rows) {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t = (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, t)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioner choice for the Krylov solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    Jacobi,
    Ilu0,
    /// Complete sparse LU; GMRES then converges in one iteration.
    Lu,
}

impl std::str::FromStr for PreconditionerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Self::Jacobi),
            "ilu0" => Ok(Self::Ilu0),
            "lu" => Ok(Self::Lu),
            _ => Err(Error::InvalidArgument(format!("unknown preconditioner '{s}'"))),
        }
    }
}

/// Krylov solver settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KrylovSettings {
    pub restart: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings {
            restart: 100,
            tol: 1e-12,
            max_iter: 5000,
            preconditioner: PreconditionerKind::Lu,
        }
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Ilu0 { lu: CsrMatrix, diag_pos: Vec<usize> },
    Lu(Lu<usize, f64>),
}

impl Precond {
    fn build(a: &CsrMatrix, kind: PreconditionerKind) -> Result<Self> {
        match kind {
            PreconditionerKind::Jacobi => Ok(Precond::Jacobi(
                a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect(),
            )),
            PreconditionerKind::Ilu0 => ilu0(a),
            PreconditionerKind::Lu => {
                // The CSR arrays of A are the CSC arrays of A^T; factor A^T and
                // solve transposed.
                let n = a.n_rows();
                let pattern = SymbolicSparseColMatRef::new_checked(n, n, &a.row_ptr, None, &a.col_idx);
                let symbolic = symbolic_lu(a, pattern)?;
                let at = SparseColMatRef::new(pattern, &a.vals);
                let lu = Lu::try_new_with_symbolic(symbolic, at).map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
                Ok(Precond::Lu(lu))
            }
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Precond::Jacobi(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
            Precond::Ilu0 { lu, diag_pos } => {
                let n = r.len();
                let mut y = r.to_vec();
                for i in 0..n {
                    let mut s = y[i];
                    for p in lu.row_ptr[i]..diag_pos[i] {
                        s -= lu.vals[p] * y[lu.col_idx[p]];
                    }
                    y[i] = s;
                }
                for i in (0..n).rev() {
                    let mut s = y[i];
                    for p in diag_pos[i] + 1..lu.row_ptr[i + 1] {
                        s -= lu.vals[p] * y[lu.col_idx[p]];
                    }
                    y[i] = s / lu.vals[diag_pos[i]];
                }
                y
            }
            Precond::Lu(lu) => {
                let mut x = r.to_vec();
                let n = x.len();
                let mat = MatMut::from_column_major_slice_mut(&mut x, n, 1);
                lu.solve_transpose_in_place_with_conj(Conj::No, mat);
                x
            }
        }
    }
}

/// Symbolic factorizations of recently seen sparsity patterns. Newton loops
/// and the dual sweep refactor matrices with a fixed pattern many times.
static SYMBOLIC_CACHE: Mutex<Vec<(u64, SymbolicLu<usize>)>> = Mutex::new(Vec::new());
const SYMBOLIC_CACHE_SIZE: usize = 8;

fn symbolic_lu(a: &CsrMatrix, pattern: SymbolicSparseColMatRef<'_, usize>) -> Result<SymbolicLu<usize>> {
    let mut h = DefaultHasher::new();
    a.n_rows.hash(&mut h);
    a.row_ptr.hash(&mut h);
    a.col_idx.hash(&mut h);
    let key = h.finish();
    let mut cache = SYMBOLIC_CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(pos) = cache.iter().position(|(k, _)| *k == key) {
        let entry = cache.remove(pos);
        let sym = entry.1.clone();
        cache.push(entry);
        return Ok(sym);
    }
    let sym = SymbolicLu::try_new(pattern).map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
    if cache.len() == SYMBOLIC_CACHE_SIZE {
        cache.remove(0);
    }
    cache.push((key, sym.clone()));
    Ok(sym)
}

fn ilu0(a: &CsrMatrix) -> Result<Precond> {
    let mut lu = a.clone();
    let n = a.n_rows();
    let mut diag_pos = vec![usize::MAX; n];
    for i in 0..n {
        for p in lu.row_ptr[i]..lu.row_ptr[i + 1] {
            if lu.col_idx[p] == i {
                diag_pos[i] = p;
            }
        }
        if diag_pos[i] == usize::MAX {
            return Err(Error::LinearSolver(format!("ILU(0): zero diagonal in row {i}")));
        }
    }
    for i in 0..n {
        for p in lu.row_ptr[i]..diag_pos[i] {
            let k = lu.col_idx[p];
            let piv = lu.vals[diag_pos[k]];
            if piv == 0.0 {
                return Err(Error::LinearSolver(format!("ILU(0): zero pivot in row {k}")));
            }
            let f = lu.vals[p] / piv;
            lu.vals[p] = f;
            for q in diag_pos[k] + 1..lu.row_ptr[k + 1] {
                let j = lu.col_idx[q];
                let r = lu.row_ptr[i]..lu.row_ptr[i + 1];
                if let Ok(pos) = lu.col_idx[r.clone()].binary_search(&j) {
                    lu.vals[r.start + pos] -= f * lu.vals[q];
                }
            }
        }
    }
    Ok(Precond::Ilu0 { lu, diag_pos })
}

/// Result of a linear solve.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Relative residual accepted when restarts stop making progress.
pub const STAGNATION_TOL: f64 = 1e-8;

/// A factorized or diagonal preconditioner that can be reused for nearby matrices.
pub struct Preconditioner(Precond);

impl Preconditioner {
    pub fn new(a: &CsrMatrix, kind: PreconditionerKind) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::InvalidArgument("preconditioner needs a square matrix".into()));
        }
        Ok(Preconditioner(Precond::build(a, kind)?))
    }
}

/// Solves `A x = b` with right-preconditioned restarted GMRES.
pub fn solve(a: &CsrMatrix, b: &[f64], settings: &KrylovSettings) -> Result<LinearSolution> {
    if a.n_rows() != b.len() || a.n_cols() != b.len() {
        return Err(Error::InvalidArgument("matrix and right side do not match".into()));
    }
    if norm(b) == 0.0 {
        return Ok(LinearSolution {
            x: vec![0.0; b.len()],
            iterations: 0,
            residual: 0.0,
        });
    }
    let pc = Preconditioner::new(a, settings.preconditioner)?;
    solve_with(a, b, settings, &pc)
}

/// GMRES with a given preconditioner, e.g. one built for an earlier matrix.
pub fn solve_with(a: &CsrMatrix, b: &[f64], settings: &KrylovSettings, pc: &Preconditioner) -> Result<LinearSolution> {
    let n = b.len();
    if a.n_rows() != n || a.n_cols() != n {
        return Err(Error::InvalidArgument("matrix and right side do not match".into()));
    }
    let bnorm = norm(b);
    if n == 0 || bnorm == 0.0 {
        return Ok(LinearSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let pc = &pc.0;
    let target = settings.tol * bnorm;
    let mut x = vec![0.0; n];
    let mut total = 0;
    let m = settings.restart.max(1);
    let mut last = f64::INFINITY;
    loop {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        // A restart cycle that fails to halve the true residual has hit the
        // round-off floor of an ill-conditioned system.
        let stagnated = beta > 0.5 * last && beta <= STAGNATION_TOL * bnorm;
        if beta <= target || stagnated {
            return Ok(LinearSolution {
                x,
                iterations: total,
                residual: beta / bnorm,
            });
        }
        last = beta;
        if total >= settings.max_iter {
            return Err(Error::LinearSolver(format!(
                "GMRES stalled after {total} iterations, relative residual {:.3e}",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < settings.max_iter {
            let zk = pc.apply(&v[k]);
            let mut w = a.matvec(&zk);
            z.push(zk);
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= h[i][k] * vj;
                }
            }
            // Second Gram-Schmidt pass for stability.
            for i in 0..=k {
                let c = dot(&w, &v[i]);
                h[i][k] += c;
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= c * vj;
                }
            }
            h[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                return Err(Error::LinearSolver("GMRES breakdown".into()));
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let hn = norm(&w);
            v.push(if hn > 0.0 { w.iter().map(|x| x / hn).collect() } else { w });
            total += 1;
            k += 1;
            if g[k].abs() <= target {
                break;
            }
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            for (xj, zj) in x.iter_mut().zip(&z[i]) {
                *xj += yi * zj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplace(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.3));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.transpose().get(0, 1), 2.0);
        assert_eq!(a.matvec_transpose(&[1.0, 1.0]), a.transpose().matvec(&[1.0, 1.0]));
    }

    #[test]
    fn gmres_with_each_preconditioner() {
        let a = laplace(300, 0.5);
        let xs: Vec<f64> = (0..300).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.matvec(&xs);
        for kind in [PreconditionerKind::Jacobi, PreconditionerKind::Ilu0, PreconditionerKind::Lu] {
            let s = KrylovSettings {
                preconditioner: kind,
                restart: 30,
                ..Default::default()
            };
            let sol = solve(&a, &b, &s).unwrap();
            for (x, y) in sol.x.iter().zip(&xs) {
                assert_relative_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplace(5, 0.0);
        let sol = solve(&a, &[0.0; 5], &KrylovSettings::default()).unwrap();
        assert_eq!(sol.x, vec![0.0; 5]);
    }
}
