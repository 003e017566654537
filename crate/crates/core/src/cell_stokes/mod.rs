//! Evolution Stokes problem on the periodic cell with a slip constraint and a
//! dynamic tangential boundary condition on the hole.
//!
//! Unknowns live in a reduced space: free nodes keep both velocity
//! components, hole nodes keep only the tangential one (the normal component
//! is eliminated against a consistent nodal normal). The boundary trace is the
//! tangential coefficient itself, so bulk and trace are single valued.

mod operator;
mod scalar;
pub mod space;
mod steady;

use std::io::Write;
use std::path::Path;

pub use operator::{saddle_solve, CellOperator, FormWeights, SolverCache};
pub use scalar::{solve_scalar_neumann, ScalarField};
pub use space::{DiscreteSpace, NodeKind, SlipEdge};

use crate::cell_geometry::CellMesh;
use crate::error::{Error, Result};
use crate::linalg::{dot, Vec2};
use space::{assemble_blocks, build_space, FluidMesh};

/// One time slice of a cell problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    /// Reduced velocity coefficients.
    pub velocity: Vec<f64>,
    /// P1 pressure, zero mean.
    pub pressure: Vec<f64>,
    pub time: f64,
}

impl CellField {
    pub fn zeros(n_velocity: usize, n_pressure: usize) -> Self {
        CellField {
            velocity: vec![0.0; n_velocity],
            pressure: vec![0.0; n_pressure],
            time: 0.0,
        }
    }
}

/// States `w(t_n)` on a uniform grid together with the rates `dw/dt(t_n)`.
/// `rates[0]` is the projected forcing, later entries are backward
/// differences.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CellField>,
    pub rates: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.states.len().saturating_sub(1)) as f64
    }

    pub fn last(&self) -> &CellField {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV with columns `t,dof_id,value`.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,dof_id,value")?;
        for s in &self.states {
            for (k, v) in s.velocity.iter().enumerate() {
                writeln!(f, "{:e},{},{:e}", s.time, k, v)?;
            }
        }
        Ok(())
    }

    /// CSV with columns `t,norm_h,energy`.
    pub fn write_summary(&self, problem: &CellProblem, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,norm_h,energy")?;
        for s in &self.states {
            let u = &s.velocity;
            writeln!(
                f,
                "{:e},{:e},{:e}",
                s.time,
                problem.h_norm(u),
                problem.energy_form(u, u)
            )?;
        }
        Ok(())
    }
}

/// How the raw field's boundary trace is specified for a projection.
#[derive(Clone, Copy, Debug)]
pub enum Trace<'a> {
    /// The trace of the bulk field.
    OfBulk,
    Zero,
    /// Explicit full-DOF nodal values on the boundary.
    Given(&'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HoleCondition {
    Slip,
    NoSlip,
}

/// Assembled cell problem with cached factorisations.
#[derive(Debug)]
pub struct CellProblem {
    pub mesh: CellMesh,
    pub space: DiscreteSpace,
    pub op: CellOperator,
    pub nu: f64,
    pub condition: HoleCondition,
    /// `Tᵀ (I₂⊗M_bulk) e_c`, the functionals `u ↦ ∫_{Y*} u_c`.
    moments: [Vec<f64>; 2],
    cache: SolverCache,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon = {horizon} must be non-negative")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

fn apply_components(scalar: &crate::linalg::Csr, full: &[f64]) -> Vec<f64> {
    let n = scalar.n_rows;
    let mut out = vec![0.0; 2 * n];
    for c in 0..2 {
        let comp: Vec<f64> = (0..n).map(|k| full[2 * k + c]).collect();
        for (k, v) in scalar.matvec(&comp).into_iter().enumerate() {
            out[2 * k + c] = v;
        }
    }
    out
}

impl CellProblem {
    /// Slip problem with viscosity `nu` and slip coefficient `alpha(y)`.
    pub fn assemble(mesh: &CellMesh, nu: f64, alpha: &dyn Fn(Vec2) -> f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity {nu} must be positive")));
        }
        let slip: Vec<SlipEdge> = mesh
            .hole_edges
            .iter()
            .map(|e| SlipEdge {
                a: e.a,
                b: e.b,
                normal: e.normal,
                length: e.length,
            })
            .collect();
        let fm = FluidMesh {
            vertices: &mesh.vertices,
            triangles: &mesh.triangles,
            vertex_class: mesh.periodic_master(),
            periodic: true,
            slip_edges: &slip,
            dirichlet_edges: &[],
        };
        let space = build_space(&fm);
        let blocks = assemble_blocks(&space, &fm, alpha);
        if !slip.is_empty() && !(blocks.alpha_min > 0.0) {
            return Err(Error::NonPositiveSlip(blocks.alpha_min));
        }
        let weights = FormWeights {
            boundary_mass: 1.0,
            viscosity: nu,
            robin: 1.0,
        };
        let op = CellOperator::from_blocks(&space, blocks, weights);
        Self::finish(mesh, space, op, nu, HoleCondition::Slip)
    }

    pub fn assemble_constant(mesh: &CellMesh, nu: f64, alpha: f64) -> Result<Self> {
        Self::assemble(mesh, nu, &move |_| alpha)
    }

    /// No-slip problem on the hole with unit viscosity and no dynamic
    /// boundary.
    pub fn assemble_dirichlet(mesh: &CellMesh) -> Result<Self> {
        if !mesh.hole.has_hole() {
            return Err(Error::NoHole);
        }
        let edges: Vec<(usize, usize)> = mesh.hole_edges.iter().map(|e| (e.a, e.b)).collect();
        let fm = FluidMesh {
            vertices: &mesh.vertices,
            triangles: &mesh.triangles,
            vertex_class: mesh.periodic_master(),
            periodic: true,
            slip_edges: &[],
            dirichlet_edges: &edges,
        };
        let space = build_space(&fm);
        let blocks = assemble_blocks(&space, &fm, &|_| 0.0);
        let weights = FormWeights {
            boundary_mass: 0.0,
            viscosity: 1.0,
            robin: 0.0,
        };
        let op = CellOperator::from_blocks(&space, blocks, weights);
        Self::finish(mesh, space, op, 1.0, HoleCondition::NoSlip)
    }

    fn finish(
        mesh: &CellMesh,
        space: DiscreteSpace,
        op: CellOperator,
        nu: f64,
        condition: HoleCondition,
    ) -> Result<Self> {
        let moments = [0, 1].map(|c| {
            let full = apply_components(&op.blocks.mass_bulk, &space.full_constant(Vec2::unit(c)));
            space.restrict(&full)
        });
        let problem = CellProblem {
            mesh: mesh.clone(),
            space,
            op,
            nu,
            condition,
            moments,
            cache: SolverCache::default(),
        };
        problem
            .cache
            .get(&problem.op, 1.0, 0.0)
            .map_err(|e| Error::AssemblyFailure(format!("constrained mass system: {e}")))?;
        Ok(problem)
    }

    pub fn cache(&self) -> &SolverCache {
        &self.cache
    }

    pub fn n_velocity(&self) -> usize {
        self.op.n_velocity()
    }

    pub fn n_pressure(&self) -> usize {
        self.op.n_pressure()
    }

    pub fn zero_field(&self) -> CellField {
        CellField::zeros(self.n_velocity(), self.n_pressure())
    }

    pub fn has_hole(&self) -> bool {
        self.mesh.hole.has_hole()
    }

    /// `⟨u, v⟩_H`, bulk plus boundary.
    pub fn h_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.op.mass.bilinear(u, v)
    }

    pub fn h_norm(&self, u: &[f64]) -> f64 {
        self.h_inner(u, u).max(0.0).sqrt()
    }

    pub fn energy_form(&self, u: &[f64], v: &[f64]) -> f64 {
        self.op.energy.bilinear(u, v)
    }

    /// `∫_{Y*} u dy`.
    pub fn integral(&self, u: &[f64]) -> Vec2 {
        Vec2::new(dot(&self.moments[0], u), dot(&self.moments[1], u))
    }

    /// The functional `u ↦ ∫_{Y*} u_c dy`; equals the load of the bulk force `e_c`.
    pub fn moment(&self, c: usize) -> &[f64] {
        &self.moments[c]
    }

    pub fn divergence_defect(&self, u: &[f64]) -> f64 {
        self.op.divergence_defect(u)
    }

    /// Reduced load of a constant bulk force.
    pub fn bulk_load(&self, f: Vec2) -> Vec<f64> {
        self.moments[0]
            .iter()
            .zip(&self.moments[1])
            .map(|(a, b)| f.x * a + f.y * b)
            .collect()
    }

    /// Reduced load of scalar tangential data `h(edge, s)` on the hole.
    pub fn tangential_load(&self, h: &dyn Fn(usize, f64) -> f64) -> Vec<f64> {
        self.space.restrict(&self.space.tangential_load(h))
    }

    /// Load of the boundary datum `(e_i)_τ`.
    pub fn direction_tangential_load(&self, i: usize) -> Vec<f64> {
        let edges = &self.space.slip_edges;
        let e = Vec2::unit(i);
        self.tangential_load(&|k, _| e.dot(edges[k].tangent()))
    }

    /// Nodal velocity values `(u_x, u_y)` per P2 node.
    pub fn nodal_velocity(&self, u: &[f64]) -> Vec<Vec2> {
        let full = self.space.prolong(u);
        full.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect()
    }

    /// Tangential trace coefficients on the hole nodes, `(node, value)`.
    pub fn trace(&self, u: &[f64]) -> Vec<(usize, f64)> {
        self.space.trace_dofs.iter().map(|&(k, r)| (k, u[r])).collect()
    }

    /// H-orthogonal projection onto discretely solenoidal fields.
    pub fn project_load(&self, rhs: &[f64]) -> Result<CellField> {
        let (u, p) = saddle_solve(&self.cache, &self.op, 1.0, 0.0, rhs)?;
        Ok(CellField {
            velocity: u,
            pressure: p,
            time: 0.0,
        })
    }

    /// Project a raw full-DOF field with the given boundary trace.
    pub fn leray_project(&self, bulk: &[f64], trace: Trace) -> Result<CellField> {
        if bulk.len() != self.space.n_full() {
            return Err(Error::InvalidArgument(format!(
                "raw field has {} entries, expected {}",
                bulk.len(),
                self.space.n_full()
            )));
        }
        let mut full = apply_components(&self.op.blocks.mass_bulk, bulk);
        let w = self.op.weights.boundary_mass;
        let tr = match trace {
            Trace::OfBulk => Some(bulk),
            Trace::Zero => None,
            Trace::Given(t) => Some(t),
        };
        if let Some(t) = tr {
            let g = apply_components(&self.op.blocks.mass_bdry, t);
            for (f, gv) in full.iter_mut().zip(g) {
                *f += w * gv;
            }
        }
        self.project_load(&self.space.restrict(&full))
    }

    /// Project a field already in the reduced space.
    pub fn leray_project_field(&self, u: &CellField) -> Result<CellField> {
        self.project_load(&self.op.mass.matvec(&u.velocity))
    }

    /// Implicit Euler step with rhs `M uⁿ + impulse`; returns velocity and the
    /// scaled multiplier.
    pub fn advance(&self, u: &[f64], dt: f64, impulse: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rhs = self.op.mass.matvec(u);
        for (r, v) in rhs.iter_mut().zip(impulse) {
            *r += v;
        }
        saddle_solve(&self.cache, &self.op, 1.0, dt, &rhs)
    }

    /// One implicit Euler step under the reduced load `load`.
    pub fn step(&self, state: &CellField, dt: f64, load: &[f64]) -> Result<CellField> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
        }
        let impulse: Vec<f64> = load.iter().map(|v| dt * v).collect();
        let (u, p) = self.advance(&state.velocity, dt, &impulse)?;
        Ok(CellField {
            velocity: u,
            pressure: p.into_iter().map(|v| v / dt).collect(),
            time: state.time + dt,
        })
    }

    /// Evolve from zero initial data under a constant load.
    pub fn solve_forced(&self, load: &[f64], horizon: f64, dt: f64) -> Result<Trajectory> {
        let n = step_count(horizon, dt)?;
        let v0 = self.project_load(load)?;
        let mut states = Vec::with_capacity(n + 1);
        let mut rates = Vec::with_capacity(n + 1);
        states.push(self.zero_field());
        rates.push(v0.velocity);
        for k in 0..n {
            let mut next = self.step(&states[k], dt, load)?;
            next.time = (k + 1) as f64 * dt;
            let rate = next
                .velocity
                .iter()
                .zip(&states[k].velocity)
                .map(|(a, b)| (a - b) / dt)
                .collect();
            rates.push(rate);
            states.push(next);
        }
        Ok(Trajectory { dt, states, rates })
    }

    /// Homogeneous evolution of a given initial field.
    pub fn solve_free(&self, initial: &CellField, horizon: f64, dt: f64) -> Result<Trajectory> {
        let n = step_count(horizon, dt)?;
        let zero = vec![0.0; self.n_velocity()];
        let a0 = self.op.energy.matvec(&initial.velocity);
        let v0 = self.project_load(&a0.iter().map(|v| -v).collect::<Vec<_>>())?;
        let mut states = vec![CellField {
            time: 0.0,
            ..initial.clone()
        }];
        let mut rates = vec![v0.velocity];
        for k in 0..n {
            let mut next = self.step(&states[k], dt, &zero)?;
            next.time = (k + 1) as f64 * dt;
            rates.push(
                next.velocity
                    .iter()
                    .zip(&states[k].velocity)
                    .map(|(a, b)| (a - b) / dt)
                    .collect(),
            );
            states.push(next);
        }
        Ok(Trajectory { dt, states, rates })
    }

    /// Bulk forcing `e_i`, no boundary forcing, zero initial data.
    pub fn solve_w1(&self, i: usize, horizon: f64, dt: f64) -> Result<Trajectory> {
        check_direction(i)?;
        self.solve_forced(&self.bulk_load(Vec2::unit(i)), horizon, dt)
    }

    /// Boundary forcing `(e_i)_τ`, no bulk forcing, zero initial data.
    pub fn solve_w2(&self, i: usize, horizon: f64, dt: f64) -> Result<Trajectory> {
        check_direction(i)?;
        self.solve_forced(&self.direction_tangential_load(i), horizon, dt)
    }
}

fn check_direction(i: usize) -> Result<()> {
    if i > 1 {
        return Err(Error::InvalidArgument(format!("direction index {i} must be 0 or 1")));
    }
    Ok(())
}
