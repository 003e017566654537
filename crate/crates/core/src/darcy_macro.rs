//! Darcy's law with memory on the unit square.
//!
//! Staggered grid: `P` at cell centres, the normal component of `ū` on each
//! face. Boundary faces carry zero flux by construction. Each step assembles
//! the known part `b(t_n)` from the convolution terms, solves
//! `−div(K1(0)∇P) = −div b` with Neumann data `b·n`, and sets
//! `ū = b − K1(0)∇P`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::boundary_noise::{
    boundary_mode_load, bulk_mode, impulse_responses, NoiseOperators, WienerPath,
};
use crate::cell_stokes::{CellField, CellProblem};
use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::linalg::{DirectSolver, Mat2, TripletBuilder, Vec2};

/// Normal velocity components: `u` on x-faces `(i, j)`, `i ∈ 0..=n`,
/// `j ∈ 0..n`; `v` on y-faces `(i, j)`, `i ∈ 0..n`, `j ∈ 0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    pub n: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FaceField {
    pub fn zeros(n: usize) -> Self {
        FaceField {
            n,
            u: vec![0.0; (n + 1) * n],
            v: vec![0.0; n * (n + 1)],
        }
    }

    pub fn axpy(&mut self, a: f64, other: &FaceField) {
        for (x, y) in self.u.iter_mut().zip(&other.u) {
            *x += a * y;
        }
        for (x, y) in self.v.iter_mut().zip(&other.v) {
            *x += a * y;
        }
    }

    /// `L²(D)` norm with face-centred quadrature.
    pub fn l2_norm(&self) -> f64 {
        let h = 1.0 / self.n as f64;
        let s: f64 = self.u.iter().chain(&self.v).map(|x| x * x).sum();
        (s * h * h).sqrt()
    }

    pub fn max_abs_diff(&self, other: &FaceField) -> f64 {
        self.u
            .iter()
            .zip(&other.u)
            .chain(self.v.iter().zip(&other.v))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest normal velocity on `∂D`.
    pub fn boundary_flux_max(&self) -> f64 {
        let n = self.n;
        let mut m = 0.0_f64;
        for j in 0..n {
            m = m.max(self.u[j * (n + 1)].abs()).max(self.u[j * (n + 1) + n].abs());
        }
        for i in 0..n {
            m = m.max(self.v[i].abs()).max(self.v[n * n + i].abs());
        }
        m
    }

    /// Velocity at cell centres by averaging opposite faces.
    pub fn cell_centres(&self) -> Vec<Vec2> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let u = 0.5 * (self.u[j * (n + 1) + i] + self.u[j * (n + 1) + i + 1]);
                let v = 0.5 * (self.v[j * n + i] + self.v[(j + 1) * n + i]);
                out.push(Vec2::new(u, v));
            }
        }
        out
    }

    fn mask_boundary(&mut self) {
        let n = self.n;
        for j in 0..n {
            self.u[j * (n + 1)] = 0.0;
            self.u[j * (n + 1) + n] = 0.0;
        }
        for i in 0..n {
            self.v[i] = 0.0;
            self.v[n * n + i] = 0.0;
        }
    }
}

/// Full vectors on both face families.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVectors {
    pub n: usize,
    pub xf: Vec<Vec2>,
    pub yf: Vec<Vec2>,
}

impl FaceVectors {
    pub fn zeros(n: usize) -> Self {
        FaceVectors {
            n,
            xf: vec![Vec2::ZERO; (n + 1) * n],
            yf: vec![Vec2::ZERO; n * (n + 1)],
        }
    }

    pub fn sample(n: usize, f: &dyn Fn(Vec2) -> Vec2) -> Self {
        let h = 1.0 / n as f64;
        let mut out = Self::zeros(n);
        for j in 0..n {
            for i in 0..=n {
                out.xf[j * (n + 1) + i] = f(Vec2::new(i as f64 * h, (j as f64 + 0.5) * h));
            }
        }
        for j in 0..=n {
            for i in 0..n {
                out.yf[j * n + i] = f(Vec2::new((i as f64 + 0.5) * h, j as f64 * h));
            }
        }
        out
    }

    /// Normal components of `K` acting on the vectors, boundary faces zeroed.
    pub fn act(&self, k: Mat2) -> FaceField {
        let mut out = FaceField {
            n: self.n,
            u: self.xf.iter().map(|v| k.act(*v).x).collect(),
            v: self.yf.iter().map(|v| k.act(*v).y).collect(),
        };
        out.mask_boundary();
        out
    }

    pub fn normal(&self) -> FaceField {
        self.act(Mat2::IDENTITY)
    }
}

/// Staggered index geometry on the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaggeredGrid {
    pub n: usize,
    pub h: f64,
}

/// Cell-centred macro grid with the factorised operator `−div(K0 ∇·)`,
/// Neumann boundary and zero-mean gauge.
pub struct MacroGrid {
    pub stencil: StaggeredGrid,
    pub k0: Mat2,
    elliptic: DirectSolver,
}

impl std::ops::Deref for MacroGrid {
    type Target = StaggeredGrid;
    fn deref(&self) -> &StaggeredGrid {
        &self.stencil
    }
}

impl std::fmt::Debug for MacroGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MacroGrid")
            .field("n", &self.n)
            .field("k0", &self.k0)
            .finish()
    }
}

pub fn assemble_macro(n: usize, k1_0: Mat2) -> Result<MacroGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("macro grid needs n >= 2, got {n}")));
    }
    let asym = (k1_0.get(0, 1) - k1_0.get(1, 0)).abs();
    if asym > 1e-8 * k1_0.max_abs() || !k1_0.is_spd(1e-12) {
        return Err(Error::SingularOperator(format!(
            "K1(0) = {:?} is not symmetric positive definite",
            k1_0.m
        )));
    }
    let st = StaggeredGrid {
        n,
        h: 1.0 / n as f64,
    };
    let nc = n * n;
    // Columns of D·mask·K0_h·G, one unit pressure at a time.
    let mut t = TripletBuilder::new(nc + 1, nc + 1);
    let mut e = vec![0.0; nc];
    for c in 0..nc {
        e[c] = 1.0;
        let col = st.div(&st.grad(&e).act(k1_0));
        e[c] = 0.0;
        for (r, v) in col.iter().enumerate() {
            if *v != 0.0 {
                t.add(r, c, *v);
            }
        }
        t.add(nc, c, 1.0);
        t.add(c, nc, 1.0);
    }
    let elliptic = DirectSolver::new(t.build())
        .map_err(|e| Error::SingularOperator(format!("elliptic factorisation failed: {e}")))?;
    Ok(MacroGrid {
        stencil: st,
        k0: k1_0,
        elliptic,
    })
}

impl StaggeredGrid {
    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_centre(&self, c: usize) -> Vec2 {
        let (i, j) = (c % self.n, c / self.n);
        Vec2::new((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    pub fn div(&self, f: &FaceField) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[j * n + i] = (f.u[j * (n + 1) + i + 1] - f.u[j * (n + 1) + i]
                    + f.v[(j + 1) * n + i]
                    - f.v[j * n + i])
                    / self.h;
            }
        }
        out
    }

    /// Gradient as full face vectors: the normal part by differences, the
    /// tangential part by averaging the four nearest normal differences of
    /// the other face family. Boundary faces carry no normal part.
    pub fn grad(&self, p: &[f64]) -> FaceVectors {
        let n = self.n;
        let normal = self.grad_normal(p);
        let mut out = FaceVectors::zeros(n);
        for j in 0..n {
            for i in 1..n {
                let k = j * (n + 1) + i;
                let t = 0.25
                    * (normal.v[j * n + i - 1]
                        + normal.v[j * n + i]
                        + normal.v[(j + 1) * n + i - 1]
                        + normal.v[(j + 1) * n + i]);
                out.xf[k] = Vec2::new(normal.u[k], t);
            }
        }
        for j in 1..n {
            for i in 0..n {
                let k = j * n + i;
                let t = 0.25
                    * (normal.u[(j - 1) * (n + 1) + i]
                        + normal.u[(j - 1) * (n + 1) + i + 1]
                        + normal.u[j * (n + 1) + i]
                        + normal.u[j * (n + 1) + i + 1]);
                out.yf[k] = Vec2::new(t, normal.v[k]);
            }
        }
        out
    }

    /// Normal differences of `p` across interior faces.
    pub fn grad_normal(&self, p: &[f64]) -> FaceField {
        let n = self.n;
        let mut g = FaceField::zeros(n);
        for j in 0..n {
            for i in 1..n {
                g.u[j * (n + 1) + i] = (p[j * n + i] - p[j * n + i - 1]) / self.h;
            }
        }
        for j in 1..n {
            for i in 0..n {
                g.v[j * n + i] = (p[j * n + i] - p[(j - 1) * n + i]) / self.h;
            }
        }
        g
    }

    /// `Σ_cells h² (div F) p + Σ_faces h² F·(grad p)` for fields with zero
    /// boundary flux; vanishes by summation by parts.
    pub fn duality_defect(&self, f: &FaceField, p: &[f64]) -> f64 {
        let h2 = self.h * self.h;
        let d = self.div(f);
        let g = self.grad_normal(p);
        let lhs: f64 = d.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() * h2;
        let rhs: f64 = f
            .u
            .iter()
            .zip(&g.u)
            .chain(f.v.iter().zip(&g.v))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * h2;
        lhs + rhs
    }

    pub fn max_div(&self, f: &FaceField) -> f64 {
        self.div(f).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn pressure_norm(&self, p: &[f64]) -> f64 {
        (p.iter().map(|v| v * v).sum::<f64>() * self.h * self.h).sqrt()
    }
}

impl MacroGrid {
    /// Apply `−div(K0∇·)` to a cell field.
    pub fn apply_operator(&self, p: &[f64]) -> Vec<f64> {
        self.div(&self.grad(p).act(self.k0)).iter().map(|v| -v).collect()
    }

    /// Zero-mean `P` with `div(mask(b − K0∇P)) = 0`.
    pub fn solve_pressure(&self, b: &FaceField) -> Result<Vec<f64>> {
        let mut masked = b.clone();
        masked.mask_boundary();
        let mut rhs = self.div(&masked);
        rhs.push(0.0);
        let x = self.elliptic.solve(&rhs)?;
        Ok(x[..self.n_cells()].to_vec())
    }

    /// Pressure and velocity for the load `b`. The second pass re-projects
    /// the velocity itself, so the divergence left behind scales with `|u|`
    /// rather than with the gradient part of `b` that cancelled.
    pub fn project(&self, b: &FaceField) -> Result<(Vec<f64>, FaceField)> {
        let mut p = self.solve_pressure(b)?;
        let u = self.velocity(b, &p);
        let q = self.solve_pressure(&u)?;
        p.iter_mut().zip(&q).for_each(|(a, d)| *a += d);
        Ok((p, self.velocity(&u, &q)))
    }

    /// `mask(b − K0∇P)`.
    pub fn velocity(&self, b: &FaceField, p: &[f64]) -> FaceField {
        let mut u = b.clone();
        u.axpy(-1.0, &self.grad(p).act(self.k0));
        u.mask_boundary();
        u
    }
}

/// Spatial part of a macro forcing.
#[derive(Clone)]
pub enum SpatialForcing {
    Uniform(Vec2),
    /// `f = curl ψ`, `ψ = A sin²(πx₁) sin²(πx₂)`; normal components are the
    /// discrete curl of `ψ` at cell corners, so `f` is discretely solenoidal.
    Stream { amplitude: f64 },
    Field(Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>),
}

impl std::fmt::Debug for SpatialForcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpatialForcing::Uniform(v) => write!(f, "Uniform({v:?})"),
            SpatialForcing::Stream { amplitude } => write!(f, "Stream({amplitude})"),
            SpatialForcing::Field(_) => write!(f, "Field(..)"),
        }
    }
}

/// `ψ` of the stream forcing and its exact curl.
pub fn stream_function(a: f64, x: Vec2) -> f64 {
    use std::f64::consts::PI;
    a * (PI * x.x).sin().powi(2) * (PI * x.y).sin().powi(2)
}

pub fn stream_velocity(a: f64, x: Vec2) -> Vec2 {
    use std::f64::consts::PI;
    let (s1, s2) = ((PI * x.x).sin(), (PI * x.y).sin());
    let (c1, c2) = ((PI * x.x).cos(), (PI * x.y).cos());
    Vec2::new(
        a * s1 * s1 * 2.0 * PI * s2 * c2,
        -a * 2.0 * PI * s1 * c1 * s2 * s2,
    )
}

impl SpatialForcing {
    pub fn sample(&self, n: usize) -> FaceVectors {
        match self {
            SpatialForcing::Uniform(v) => {
                let v = *v;
                FaceVectors::sample(n, &move |_| v)
            }
            SpatialForcing::Field(f) => FaceVectors::sample(n, &|x| f(x)),
            SpatialForcing::Stream { amplitude } => {
                let a = *amplitude;
                let mut out = FaceVectors::sample(n, &|x| stream_velocity(a, x));
                let h = 1.0 / n as f64;
                let psi = |i: usize, j: usize| stream_function(a, Vec2::new(i as f64 * h, j as f64 * h));
                for j in 0..n {
                    for i in 0..=n {
                        out.xf[j * (n + 1) + i].x = (psi(i, j + 1) - psi(i, j)) / h;
                    }
                }
                for j in 0..=n {
                    for i in 0..n {
                        out.yf[j * n + i].y = -(psi(i + 1, j) - psi(i, j)) / h;
                    }
                }
                out
            }
        }
    }
}

/// Separable forcing `f(t, x) = θ(t) F(x)`.
#[derive(Clone)]
pub struct Forcing {
    pub spatial: Option<SpatialForcing>,
    pub profile: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Forcing")
            .field("spatial", &self.spatial)
            .field("time_dependent", &self.profile.is_some())
            .finish()
    }
}

impl Forcing {
    pub fn none() -> Self {
        Forcing {
            spatial: None,
            profile: None,
        }
    }

    pub fn steady(spatial: SpatialForcing) -> Self {
        Forcing {
            spatial: Some(spatial),
            profile: None,
        }
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.profile.as_ref().map_or(1.0, |p| p(t))
    }
}

/// Kernel samples on the macro time grid, a stride of the table grid.
#[derive(Clone, Debug)]
pub struct SampledKernels {
    pub dt: f64,
    pub k1: Vec<Mat2>,
    pub k1_prime: Vec<Mat2>,
    pub k2: Vec<Mat2>,
}

impl SampledKernels {
    pub fn from_table(table: &KernelTable, dt: f64) -> Result<Self> {
        let ratio = dt / table.dt;
        let stride = ratio.round();
        if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
            return Err(Error::GridMismatch(format!(
                "macro dt {dt} is not a multiple of the kernel dt {}",
                table.dt
            )));
        }
        let stride = stride as usize;
        let pick = |k: &[Mat2]| k.iter().step_by(stride).copied().collect::<Vec<_>>();
        Ok(SampledKernels {
            dt,
            k1: pick(&table.k1),
            k1_prime: pick(&table.k1_prime),
            k2: pick(&table.k2),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.k1.len() - 1) as f64
    }

    fn check(&self, n: usize) -> Result<()> {
        if n >= self.k1.len() {
            return Err(Error::KernelHorizonExceeded {
                t: n as f64 * self.dt,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }
}

/// Separable initial data for the cell relaxation term.
#[derive(Clone)]
pub enum InitialData {
    Zero,
    /// `u₀(x, y) = a(x) W₀(y)` with `W₀` a reduced cell velocity.
    Separable {
        amplitude: Arc<dyn Fn(Vec2) -> f64 + Send + Sync>,
        profile: CellField,
    },
    /// Arbitrary `u₀(x, y)`; not representable by one cell evolution.
    General(Arc<dyn Fn(Vec2, Vec2) -> Vec2 + Send + Sync>),
}

/// `a(x) ∫_{Y*} S(t_n) W₀ dy`.
#[derive(Clone)]
pub struct W0Aggregate {
    pub amplitude: Arc<dyn Fn(Vec2) -> f64 + Send + Sync>,
    pub values: Vec<Vec2>,
}

pub fn w0_aggregate(
    problem: &CellProblem,
    initial: &InitialData,
    dt: f64,
    n_steps: usize,
) -> Result<Option<W0Aggregate>> {
    match initial {
        InitialData::Zero => Ok(None),
        InitialData::General(_) => Err(Error::NonSeparableInitialData(
            "initial data must factor as a(x)·W0(y)".into(),
        )),
        InitialData::Separable { amplitude, profile } => {
            if profile.velocity.len() != problem.n_velocity() {
                return Err(Error::InvalidArgument(format!(
                    "profile has {} velocity entries, expected {}",
                    profile.velocity.len(),
                    problem.n_velocity()
                )));
            }
            let start = problem.leray_project_field(profile)?;
            let traj = problem.solve_free(&start, dt * n_steps as f64, dt)?;
            Ok(Some(W0Aggregate {
                amplitude: amplitude.clone(),
                values: traj
                    .states
                    .iter()
                    .map(|s| problem.integral(&s.velocity))
                    .collect(),
            }))
        }
    }
}

/// `∫_{Y*} z_j^(m) dy` for the impulse responses of each active boundary
/// mode, `m = 1..=n`.
#[derive(Clone, Debug, Default)]
pub struct W3Response {
    pub modes: Vec<(usize, Vec<Vec2>)>,
}

pub fn w3_response(problem: &CellProblem, ops: &NoiseOperators, dt: f64, n: usize) -> Result<W3Response> {
    let mut modes = Vec::new();
    for j in ops.active_g22() {
        let z = impulse_responses(problem, &boundary_mode_load(problem, j), dt, n)?;
        modes.push((j, z.iter().map(|v| problem.integral(v)).collect()));
    }
    Ok(W3Response { modes })
}

impl W3Response {
    /// `Σ_j g22_j Σ_{k<n} ΔW_{k,j} I_j(n − k)`.
    pub fn aggregate(&self, ops: &NoiseOperators, w2: &WienerPath, n: usize) -> Result<Vec2> {
        let mut acc = Vec2::ZERO;
        for (j, resp) in &self.modes {
            if n > resp.len() {
                return Err(Error::KernelHorizonExceeded {
                    t: n as f64 * w2.dt,
                    horizon: resp.len() as f64 * w2.dt,
                });
            }
            for k in 0..n {
                acc += resp[n - k - 1] * (ops.g22[*j] * w2.increment(k, *j));
            }
        }
        Ok(acc)
    }
}

/// Noise inputs: `W1` drives `g1` through `K1`, `W2` drives `g21` through
/// `K2` and `g22` through the cell response.
#[derive(Clone, Debug)]
pub struct MacroNoise {
    pub ops: NoiseOperators,
    pub w1: WienerPath,
    pub w2: WienerPath,
    pub w3: W3Response,
}

#[derive(Clone)]
pub struct MacroInputs {
    pub forcing: Forcing,
    pub noise: Option<MacroNoise>,
    pub w0: Option<W0Aggregate>,
}

impl MacroInputs {
    pub fn deterministic(forcing: Forcing) -> Self {
        MacroInputs {
            forcing,
            noise: None,
            w0: None,
        }
    }
}

pub struct MacroSetup {
    pub grid: Arc<MacroGrid>,
    pub kernels: SampledKernels,
    pub inputs: MacroInputs,
    forcing_field: Option<FaceVectors>,
    bulk_modes: Vec<FaceVectors>,
}

impl MacroSetup {
    pub fn new(grid: impl Into<Arc<MacroGrid>>, kernels: SampledKernels, inputs: MacroInputs) -> Self {
        let grid = grid.into();
        let n = grid.n;
        let forcing_field = inputs.forcing.spatial.as_ref().map(|s| s.sample(n));
        let bulk_modes = match &inputs.noise {
            Some(noise) => (0..noise.w1.modes.max(noise.w2.modes))
                .map(|j| FaceVectors::sample(n, &|x| bulk_mode(j, x)))
                .collect(),
            None => Vec::new(),
        };
        MacroSetup {
            grid,
            kernels,
            inputs,
            forcing_field,
            bulk_modes,
        }
    }

    pub fn dt(&self) -> f64 {
        self.kernels.dt
    }
}

/// The seven terms of the velocity representation at one step, each with
/// zero boundary flux.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroTerms {
    pub initial: FaceField,
    pub forcing: FaceField,
    pub bulk_noise: FaceField,
    pub memory: FaceField,
    pub instantaneous: FaceField,
    pub boundary_noise: FaceField,
    pub cell_noise: FaceField,
}

impl MacroTerms {
    pub fn sum(&self) -> FaceField {
        let mut s = self.initial.clone();
        for t in [
            &self.forcing,
            &self.bulk_noise,
            &self.memory,
            &self.instantaneous,
            &self.boundary_noise,
            &self.cell_noise,
        ] {
            s.axpy(1.0, t);
        }
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct MacroState {
    pub pressure: Vec<Vec<f64>>,
    pub velocity: Vec<FaceField>,
    pub terms: Vec<MacroTerms>,
    grad_history: Vec<FaceVectors>,
}

impl MacroState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the next step to compute.
    pub fn next_index(&self) -> usize {
        self.velocity.len()
    }

    pub fn evaluate_velocity(&self, n: usize) -> Result<&FaceField> {
        self.velocity.get(n).ok_or(Error::NotComputed(n))
    }

    pub fn terms(&self, n: usize) -> Result<&MacroTerms> {
        self.terms.get(n).ok_or(Error::NotComputed(n))
    }

    pub fn pressure(&self, n: usize) -> Result<&[f64]> {
        self.pressure.get(n).map(Vec::as_slice).ok_or(Error::NotComputed(n))
    }
}

fn uniform(n: usize, c: Vec2) -> FaceField {
    FaceVectors::sample(n, &move |_| c).normal()
}

/// Advance `state` by one step, computing `t_n` for `n = state.next_index()`.
pub fn step_macro(state: &mut MacroState, setup: &MacroSetup) -> Result<()> {
    let n = state.next_index();
    let ks = &setup.kernels;
    ks.check(n)?;
    let dt = ks.dt;
    let grid = &setup.grid;
    let m = grid.n;
    let inputs = &setup.inputs;

    let initial = match &inputs.w0 {
        Some(w0) => {
            let c = *w0.values.get(n).ok_or(Error::KernelHorizonExceeded {
                t: n as f64 * dt,
                horizon: (w0.values.len() - 1) as f64 * dt,
            })?;
            let a = &w0.amplitude;
            FaceVectors::sample(m, &|x| c * a(x)).normal()
        }
        None => FaceField::zeros(m),
    };

    let forcing = match &setup.forcing_field {
        Some(f) if n > 0 => {
            let mut k = Mat2::ZERO;
            for j in 0..=n {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                k += ks.k1[n - j] * (w * dt * inputs.forcing.theta(j as f64 * dt));
            }
            f.act(k)
        }
        _ => FaceField::zeros(m),
    };

    let (mut bulk_noise, mut boundary_noise, mut cell_noise) =
        (FaceField::zeros(m), FaceField::zeros(m), FaceField::zeros(m));
    if let Some(noise) = &inputs.noise {
        for (path, gains, kernel, out) in [
            (&noise.w1, &noise.ops.g1, &ks.k1, &mut bulk_noise),
            (&noise.w2, &noise.ops.g21, &ks.k2, &mut boundary_noise),
        ] {
            if n > path.n_steps {
                return Err(Error::GridMismatch(format!(
                    "noise path has {} steps, step {n} requested",
                    path.n_steps
                )));
            }
            for (j, g) in gains.iter().enumerate().take(path.modes) {
                if *g == 0.0 {
                    continue;
                }
                let mut c = Mat2::ZERO;
                for k in 0..n {
                    c += kernel[n - k] * (g * path.increment(k, j));
                }
                out.axpy(1.0, &setup.bulk_modes[j].act(c));
            }
        }
        let c = noise.w3.aggregate(&noise.ops, &noise.w2, n)?;
        cell_noise = uniform(m, c);
    }

    let mut mem = FaceVectors::zeros(m);
    let mut any = false;
    for (k, g) in state.grad_history.iter().enumerate() {
        let w = if k == 0 { 0.5 } else { 1.0 };
        let kp = ks.k1_prime[n - k];
        let c = w * dt;
        any = true;
        for (o, v) in mem.xf.iter_mut().zip(&g.xf) {
            *o += kp.act(*v) * c;
        }
        for (o, v) in mem.yf.iter_mut().zip(&g.yf) {
            *o += kp.act(*v) * c;
        }
    }
    let mut memory = if any { mem.normal() } else { FaceField::zeros(m) };
    for x in memory.u.iter_mut().chain(memory.v.iter_mut()) {
        *x = -*x;
    }

    let mut b = initial.clone();
    for t in [&forcing, &bulk_noise, &memory, &boundary_noise, &cell_noise] {
        b.axpy(1.0, t);
    }
    let (p, velocity) = grid.project(&b)?;
    let grad = grid.grad(&p);
    let mut instantaneous = grad.act(grid.k0);
    for x in instantaneous.u.iter_mut().chain(instantaneous.v.iter_mut()) {
        *x = -*x;
    }

    state.grad_history.push(grad);
    state.pressure.push(p);
    state.velocity.push(velocity);
    state.terms.push(MacroTerms {
        initial,
        forcing,
        bulk_noise,
        memory,
        instantaneous,
        boundary_noise,
        cell_noise,
    });
    Ok(())
}

/// Steps `0..=n_steps`.
pub fn run_macro(setup: &MacroSetup, n_steps: usize) -> Result<MacroState> {
    let mut state = MacroState::new();
    for _ in 0..=n_steps {
        step_macro(&mut state, setup)?;
    }
    Ok(state)
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub velocity_l2: f64,
    pub max_div: f64,
    pub pressure_l2: f64,
    pub boundary_flux: f64,
}

pub fn diagnostics(state: &MacroState, setup: &MacroSetup) -> Vec<StepDiagnostics> {
    state
        .velocity
        .iter()
        .zip(&state.pressure)
        .enumerate()
        .map(|(n, (u, p))| StepDiagnostics {
            t: n as f64 * setup.dt(),
            velocity_l2: u.l2_norm(),
            max_div: setup.grid.max_div(u),
            pressure_l2: setup.grid.pressure_norm(p),
            boundary_flux: u.boundary_flux_max(),
        })
        .collect()
}

/// CSV with columns `t,velocity_l2,max_div,pressure_l2`.
pub fn write_run_csv(path: &Path, diags: &[StepDiagnostics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,velocity_l2,max_div,pressure_l2")?;
    for d in diags {
        writeln!(f, "{:e},{:e},{:e},{:e}", d.t, d.velocity_l2, d.max_div, d.pressure_l2)?;
    }
    Ok(())
}

/// Cell-centre snapshot CSV with columns `x,y,u,v,p`.
pub fn write_snapshot_csv(path: &Path, grid: &MacroGrid, u: &FaceField, p: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x,y,u,v,p")?;
    for (c, v) in u.cell_centres().iter().enumerate() {
        let x = grid.cell_centre(c);
        writeln!(f, "{:e},{:e},{:e},{:e},{:e}", x.x, x.y, v.x, v.y, p[c])?;
    }
    Ok(())
}
