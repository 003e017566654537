//! Small dense types (2-vectors, 2×2 matrices) and the sparse machinery shared
//! by every solver in the crate.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector in the plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector along axis `i` (0 or 1).
    pub fn unit(i: usize) -> Self {
        match i {
            0 => Vec2::new(1.0, 0.0),
            _ => Vec2::new(0.0, 1.0),
        }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotation by +90 degrees.
    pub fn rot90(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn component(self, c: usize) -> f64 {
        if c == 0 {
            self.x
        } else {
            self.y
        }
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// A 2×2 matrix stored row-major: `m[i][j]`.
///
/// Kernel matrices follow the cell-problem convention `K_ij = ∫ (w_i)_j`, so a
/// kernel acts on a vector by contracting its first index:
/// `(K ⋆ v)_j = Σ_i K_ij v_i`. See [`Mat2::act`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { m: [[0.0; 2]; 2] };
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 {
            m: [[a11, a12], [a21, a22]],
        }
    }

    pub fn scaled_identity(s: f64) -> Self {
        Mat2::new(s, 0.0, 0.0, s)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    /// `(K ⋆ v)_j = Σ_i K_ij v_i`.
    pub fn act(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[1][0] * v.y,
            self.m[0][1] * v.x + self.m[1][1] * v.y,
        )
    }

    /// Ordinary matrix-vector product `K v`.
    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    /// `ξᵀ K ξ`.
    pub fn quadratic_form(&self, xi: Vec2) -> f64 {
        xi.dot(self.mul_vec(xi))
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        [mean - rad, mean + rad]
    }

    pub fn is_spd(&self, rel_tol: f64) -> bool {
        let asym = (self.m[0][1] - self.m[1][0]).abs();
        let scale = self.max_abs();
        if scale == 0.0 || asym > rel_tol * scale {
            return false;
        }
        self.sym_eigenvalues()[0] > rel_tol * scale
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.m[1][1] / det,
            -self.m[0][1] / det,
            -self.m[1][0] / det,
            self.m[0][0] / det,
        ))
    }

    pub fn flat(&self) -> [f64; 4] {
        [self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let mut r = self;
        r += o;
        r
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        for i in 0..2 {
            for j in 0..2 {
                self.m[i][j] += o.m[i][j];
            }
        }
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + o * -1.0
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        let mut r = self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }
}

/// Scalars act on vectors by plain multiplication; lets the convolution
/// routines run on scalar and matrix kernels alike.
pub trait KernelAction<V> {
    fn apply(&self, v: &V) -> V;
}

impl KernelAction<f64> for f64 {
    fn apply(&self, v: &f64) -> f64 {
        self * v
    }
}

impl KernelAction<Vec2> for Mat2 {
    fn apply(&self, v: &Vec2) -> Vec2 {
        self.act(*v)
    }
}

impl KernelAction<Vec2> for f64 {
    fn apply(&self, v: &Vec2) -> Vec2 {
        *v * *self
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn build(mut self) -> Csr {
        self.entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder::new(n_rows, n_cols).build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows);
        let mut y = vec![0.0; self.n_cols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    /// `max |A − Aᵀ| / max |A|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst / scale
    }

    pub fn scaled(&self, s: f64) -> Csr {
        let mut c = self.clone();
        c.values.iter_mut().for_each(|v| *v *= s);
        c
    }

    /// `self + s·other`, both of the same shape.
    pub fn add_scaled(&self, s: f64, other: &Csr) -> Csr {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut b = TripletBuilder::new(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            b.add(i, j, v);
        }
        for (i, j, v) in other.triplets() {
            b.add(i, j, s * v);
        }
        b.build()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trip: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &trip)
            .map_err(|e| Error::AssemblyFailure(format!("sparse construction: {e:?}")))
    }
}

/// Block builder for symmetric saddle systems
/// `[[A, Bᵀ, 0], [B, 0, m], [0, mᵀ, 0]]` where the last row fixes the mean of
/// the multiplier block (pressure gauge).
pub fn saddle_matrix(a: &Csr, b: &Csr, gauge: Option<&[f64]>) -> Csr {
    let nu = a.n_rows;
    let np = b.n_rows;
    let extra = usize::from(gauge.is_some());
    let n = nu + np + extra;
    let mut t = TripletBuilder::new(n, n);
    for (i, j, v) in a.triplets() {
        t.add(i, j, v);
    }
    for (i, j, v) in b.triplets() {
        t.add(nu + i, j, v);
        t.add(j, nu + i, v);
    }
    if let Some(w) = gauge {
        for (k, wk) in w.iter().enumerate() {
            t.add(nu + k, nu + np, *wk);
            t.add(nu + np, nu + k, *wk);
        }
    }
    t.build()
}

/// Sparse LU factorisation with a residual check and iterative refinement.
pub struct DirectSolver {
    matrix: Csr,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for DirectSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectSolver")
            .field("n", &self.matrix.n_rows)
            .field("nnz", &self.matrix.nnz())
            .finish()
    }
}

const REFINEMENT_STEPS: usize = 2;
const RESIDUAL_LIMIT: f64 = 1e-9;
/// Residuals below this are accepted without another refinement sweep.
const REFINE_BELOW: f64 = 1e-14;

impl DirectSolver {
    pub fn new(matrix: Csr) -> Result<Self> {
        assert_eq!(matrix.n_rows, matrix.n_cols);
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::SolveFailure(format!("LU factorisation failed: {e:?}")))?;
        Ok(DirectSolver { matrix, lu })
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_rows
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.lu.solve_in_place(x.as_mut());
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.dim());
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let mut x = self.raw_solve(rhs);
        let mut rel = f64::INFINITY;
        for _ in 0..=REFINEMENT_STEPS {
            let ax = self.matrix.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            rel = norm2(&r) / bnorm;
            if !rel.is_finite() {
                break;
            }
            if rel < REFINE_BELOW {
                return Ok(x);
            }
            let dx = self.raw_solve(&r);
            axpy(1.0, &dx, &mut x);
        }
        let ax = self.matrix.matvec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        rel = rel.min(norm2(&r) / bnorm);
        if !rel.is_finite() || rel > RESIDUAL_LIMIT {
            return Err(Error::SolveFailure(format!(
                "relative residual {rel:.3e} after refinement"
            )));
        }
        Ok(x)
    }
}
