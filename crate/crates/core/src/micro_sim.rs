//! Direct simulation on the perforated square `D^ε`: walls of `D` are
//! no-slip, every hole carries the dynamic slip condition. Forms are the
//! cell forms with ε-scaled weights; convection is explicit.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::boundary_noise::{bulk_mode, sample_wiener, KLNoise};
use crate::cell_geometry::{build_cell_mesh, HoleSpec};
use crate::cell_stokes::space::{assemble_blocks, build_space, FluidMesh};
use crate::cell_stokes::{saddle_solve, CellOperator, DiscreteSpace, FormWeights, SlipEdge, SolverCache};
use crate::darcy_macro::{FaceField, Forcing, SpatialForcing};
use crate::error::{Error, Result};
use crate::fem::{p2_values, Element, TRI_RULE};
use crate::linalg::{dot, Vec2};

/// Triangulation of `D^ε` made of `k × k` scaled copies of the cell mesh.
#[derive(Clone, Debug)]
pub struct PerforatedMesh {
    pub eps: f64,
    pub k: usize,
    pub hole: HoleSpec,
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    /// ε-cell index `i + k j` of each triangle.
    pub tile: Vec<usize>,
    pub slip_edges: Vec<SlipEdge>,
    pub dirichlet_edges: Vec<(usize, usize)>,
    pub area: f64,
    pub h_min: f64,
}

impl PerforatedMesh {
    pub fn n_holes(&self) -> usize {
        if self.hole.has_hole() {
            self.k * self.k
        } else {
            0
        }
    }
}

/// `k = 1/ε`, which must be a positive integer.
pub fn cells_per_side(eps: f64) -> Result<usize> {
    let k = (1.0 / eps).round();
    if !(eps > 0.0) || k < 1.0 || (k * eps - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("ε = {eps} is not 1/k for an integer k")));
    }
    Ok(k as usize)
}

pub fn build_perforated_mesh(hole: &HoleSpec, eps: f64, cell_h: f64) -> Result<PerforatedMesh> {
    let k = cells_per_side(eps)?;
    let cell = build_cell_mesh(*hole, cell_h)?;
    let key = |p: Vec2| ((p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64);
    let mut index: HashMap<(i64, i64), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(k * k * cell.triangles.len());
    let mut tile = Vec::with_capacity(triangles.capacity());
    let mut slip_edges = Vec::new();
    for cj in 0..k {
        for ci in 0..k {
            let offset = Vec2::new(ci as f64, cj as f64);
            let local: Vec<usize> = cell
                .vertices
                .iter()
                .map(|v| {
                    let p = (*v + offset) * eps;
                    *index.entry(key(p)).or_insert_with(|| {
                        vertices.push(p);
                        vertices.len() - 1
                    })
                })
                .collect();
            for t in &cell.triangles {
                triangles.push(t.map(|v| local[v]));
                tile.push(ci + k * cj);
            }
            for e in &cell.hole_edges {
                slip_edges.push(SlipEdge {
                    a: local[e.a],
                    b: local[e.b],
                    normal: e.normal,
                    length: e.length * eps,
                });
            }
        }
    }
    let on_side = |p: Vec2, s: usize| {
        let tol = 1e-12;
        match s {
            0 => p.x.abs() < tol,
            1 => (p.x - 1.0).abs() < tol,
            2 => p.y.abs() < tol,
            _ => (p.y - 1.0).abs() < tol,
        }
    };
    let mut dirichlet_edges = Vec::new();
    let mut area = 0.0;
    let mut h_min = f64::INFINITY;
    for t in &triangles {
        let el = Element::new(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        if !(el.area > 0.0) {
            return Err(Error::DegenerateMesh("tiled triangle with nonpositive area".into()));
        }
        area += el.area;
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            h_min = h_min.min((vertices[a] - vertices[b]).norm());
            if (0..4).any(|s| on_side(vertices[a], s) && on_side(vertices[b], s)) {
                dirichlet_edges.push((a.min(b), a.max(b)));
            }
        }
    }
    dirichlet_edges.sort_unstable();
    dirichlet_edges.dedup();
    Ok(PerforatedMesh {
        eps,
        k,
        hole: *hole,
        vertices,
        triangles,
        tile,
        slip_edges,
        dirichlet_edges,
        area,
        h_min,
    })
}

#[derive(Clone, Debug)]
pub struct MicroNoise {
    pub spec: KLNoise,
    /// Gains of the bulk modes.
    pub g1: Vec<f64>,
    pub stream: u64,
}

#[derive(Clone, Debug)]
pub struct MicroConfig {
    pub eps: f64,
    pub beta: f64,
    pub nu: f64,
    /// Cell slip coefficient; the ε-problem uses `ε α`.
    pub alpha: f64,
    pub hole: HoleSpec,
    /// Mesh size in cell units.
    pub cell_h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub forcing: Forcing,
    pub noise: Option<MicroNoise>,
    /// Permit ε below 1/4.
    pub allow_fine: bool,
}

impl MicroConfig {
    pub fn validate(&self) -> Result<usize> {
        let k = cells_per_side(self.eps)?;
        if !(self.beta > 1.0) {
            return Err(Error::InvalidArgument(format!("β = {} must exceed 1", self.beta)));
        }
        if k > 4 && !self.allow_fine {
            return Err(Error::InvalidArgument(format!(
                "ε = {} needs the fine-scale flag",
                self.eps
            )));
        }
        if !(self.nu > 0.0) || !(self.alpha > 0.0) || !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("ν, α, dt and T must be positive".into()));
        }
        Ok(k)
    }

    pub fn n_steps(&self) -> Result<usize> {
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not a multiple of dt = {}",
                self.horizon, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Assembled ε-problem.
pub struct MicroProblem {
    pub mesh: PerforatedMesh,
    pub space: DiscreteSpace,
    pub op: CellOperator,
    pub conv_scale: f64,
    cache: SolverCache,
}

impl MicroProblem {
    pub fn assemble(config: &MicroConfig) -> Result<Self> {
        config.validate()?;
        let mesh = build_perforated_mesh(&config.hole, config.eps, config.cell_h)?;
        let class: Vec<usize> = (0..mesh.vertices.len()).collect();
        let fm = FluidMesh {
            vertices: &mesh.vertices,
            triangles: &mesh.triangles,
            vertex_class: &class,
            periodic: false,
            slip_edges: &mesh.slip_edges,
            dirichlet_edges: &mesh.dirichlet_edges,
        };
        let space = build_space(&fm);
        let eps = config.eps;
        let blocks = assemble_blocks(&space, &fm, &|_| config.alpha);
        let weights = FormWeights {
            boundary_mass: eps,
            viscosity: eps * eps * config.nu,
            robin: eps,
        };
        let op = CellOperator::from_blocks(&space, blocks, weights);
        Ok(MicroProblem {
            mesh,
            space,
            op,
            conv_scale: eps.powf(config.beta),
            cache: SolverCache::default(),
        })
    }

    pub fn n_velocity(&self) -> usize {
        self.op.n_velocity()
    }

    /// Reduced load `∫ f·φ` of a bulk field.
    pub fn bulk_load(&self, f: &dyn Fn(Vec2) -> Vec2) -> Vec<f64> {
        let layout = &self.space.layout;
        let mut full = vec![0.0; self.space.n_full()];
        for (t, nodes) in self.mesh.triangles.iter().zip(&layout.elem_nodes) {
            let el = element(&self.mesh, t);
            for &(l, w) in &TRI_RULE {
                let fv = f(el.point(l)) * (w * el.area);
                let phi = p2_values(l);
                for i in 0..6 {
                    full[2 * nodes[i]] += fv.x * phi[i];
                    full[2 * nodes[i] + 1] += fv.y * phi[i];
                }
            }
        }
        self.space.restrict(&full)
    }

    /// Skew-symmetric convection form `b(u, v, w)` on reduced fields.
    pub fn trilinear(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let (fu, fv, fw) = (self.space.prolong(u), self.space.prolong(v), self.space.prolong(w));
        let layout = &self.space.layout;
        let mut acc = 0.0;
        for (t, nodes) in self.mesh.triangles.iter().zip(&layout.elem_nodes) {
            let el = element(&self.mesh, t);
            for &(l, wq) in &TRI_RULE {
                let phi = p2_values(l);
                let g = el.p2_grads(l);
                let (mut uu, mut vv, mut ww) = (Vec2::ZERO, Vec2::ZERO, Vec2::ZERO);
                let (mut gv, mut gw) = ([Vec2::ZERO; 2], [Vec2::ZERO; 2]);
                for i in 0..6 {
                    let n = nodes[i];
                    let (a, b, c) = (nodal(&fu, n), nodal(&fv, n), nodal(&fw, n));
                    uu += a * phi[i];
                    vv += b * phi[i];
                    ww += c * phi[i];
                    gv[0] += g[i] * b.x;
                    gv[1] += g[i] * b.y;
                    gw[0] += g[i] * c.x;
                    gw[1] += g[i] * c.y;
                }
                let u_grad_v = Vec2::new(uu.dot(gv[0]), uu.dot(gv[1]));
                let u_grad_w = Vec2::new(uu.dot(gw[0]), uu.dot(gw[1]));
                acc += 0.5 * wq * el.area * (u_grad_v.dot(ww) - u_grad_w.dot(vv));
            }
        }
        acc
    }

    /// Reduced vector `φ ↦ b(u, u, φ)`.
    pub fn convection(&self, u: &[f64]) -> Vec<f64> {
        let fu = self.space.prolong(u);
        let layout = &self.space.layout;
        let mut full = vec![0.0; self.space.n_full()];
        for (t, nodes) in self.mesh.triangles.iter().zip(&layout.elem_nodes) {
            let el = element(&self.mesh, t);
            for &(l, wq) in &TRI_RULE {
                let phi = p2_values(l);
                let g = el.p2_grads(l);
                let mut uu = Vec2::ZERO;
                let mut gu = [Vec2::ZERO; 2];
                for i in 0..6 {
                    let a = nodal(&fu, nodes[i]);
                    uu += a * phi[i];
                    gu[0] += g[i] * a.x;
                    gu[1] += g[i] * a.y;
                }
                let u_grad_u = Vec2::new(uu.dot(gu[0]), uu.dot(gu[1]));
                let s = 0.5 * wq * el.area;
                for i in 0..6 {
                    // ½(u·∇u, φ) − ½(u·∇φ, u), φ = φ_i e_c.
                    let dphi = uu.dot(g[i]);
                    full[2 * nodes[i]] += s * (u_grad_u.x * phi[i] - dphi * uu.x);
                    full[2 * nodes[i] + 1] += s * (u_grad_u.y * phi[i] - dphi * uu.y);
                }
            }
        }
        self.space.restrict(&full)
    }

    pub fn max_speed(&self, u: &[f64]) -> f64 {
        let f = self.space.prolong(u);
        (0..self.space.layout.n_nodes)
            .map(|n| nodal(&f, n).norm())
            .fold(0.0, f64::max)
    }

    /// `(1/ε²) ∫_{cell ∩ D^ε} u` for every ε-cell, row-major.
    pub fn cell_averages(&self, u: &[f64]) -> Vec<Vec2> {
        let f = self.space.prolong(u);
        let k = self.mesh.k;
        let mut out = vec![Vec2::ZERO; k * k];
        let layout = &self.space.layout;
        for ((t, nodes), c) in self.mesh.triangles.iter().zip(&layout.elem_nodes).zip(&self.mesh.tile) {
            let el = element(&self.mesh, t);
            let (_, _, integ) = el.p2_matrices();
            for i in 0..6 {
                out[*c] += nodal(&f, nodes[i]) * integ[i];
            }
        }
        let s = 1.0 / (self.mesh.eps * self.mesh.eps);
        out.iter().map(|v| *v * s).collect()
    }

    /// `‖u‖²` in the ε-weighted H norm.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.op.mass.bilinear(u, u)
    }

    pub fn divergence_defect(&self, u: &[f64]) -> f64 {
        self.op.divergence_defect(u)
    }
}

fn element(mesh: &PerforatedMesh, t: &[usize; 3]) -> Element {
    Element::new(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]])
}

fn nodal(full: &[f64], n: usize) -> Vec2 {
    Vec2::new(full[2 * n], full[2 * n + 1])
}

/// Energy budget of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBudget {
    /// `sup_n ‖u_n‖²_H`.
    pub energy_sup: f64,
    /// `Σ dt ε²ν ∫|∇u_{n+1}|²`.
    pub viscous: f64,
    /// `Σ dt ε^β |b(u_n, u_n, u_{n+1})|`.
    pub convective: f64,
}

#[derive(Clone, Debug)]
pub struct MicroRun {
    pub eps: f64,
    pub dt: f64,
    /// Per step, the ε-cell averages.
    pub averages: Vec<Vec<Vec2>>,
    pub energy: EnergyBudget,
    pub final_velocity: Vec<f64>,
    pub max_divergence_defect: f64,
}

impl MicroRun {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.averages.len() - 1) as f64
    }
}

pub fn solve_micro(config: &MicroConfig) -> Result<MicroRun> {
    let problem = MicroProblem::assemble(config)?;
    solve_assembled(&problem, config)
}

/// Time loop on an assembled problem: implicit Euler for the linear part,
/// explicit skew-symmetric convection.
pub fn solve_assembled(problem: &MicroProblem, config: &MicroConfig) -> Result<MicroRun> {
    let n_steps = config.n_steps()?;
    let dt = config.dt;
    let nv = problem.n_velocity();
    let load = config
        .forcing
        .spatial
        .as_ref()
        .map(|s| problem.bulk_load(&|x| spatial_value(s, x)));
    let noise = match &config.noise {
        Some(nz) => {
            let path = sample_wiener(&nz.spec, dt, n_steps, nz.stream)?;
            let loads: Vec<(usize, f64, Vec<f64>)> = nz
                .g1
                .iter()
                .enumerate()
                .filter(|(j, g)| **g != 0.0 && *j < path.modes)
                .map(|(j, g)| (j, *g, problem.bulk_load(&|x| bulk_mode(j, x))))
                .collect();
            Some((path, loads))
        }
        None => None,
    };

    let mut u = vec![0.0; nv];
    let mut averages = vec![problem.cell_averages(&u)];
    let mut energy = EnergyBudget::default();
    let mut max_div = 0.0_f64;
    for n in 0..n_steps {
        let speed = problem.max_speed(&u);
        let cfl = problem.conv_scale * speed * dt / problem.mesh.h_min;
        if cfl > 1.0 {
            return Err(Error::CflViolation(cfl));
        }
        let conv = if speed > 0.0 {
            Some(problem.convection(&u))
        } else {
            None
        };
        let mut rhs = problem.op.mass.matvec(&u);
        if let Some(l) = &load {
            let theta = config.forcing.theta((n + 1) as f64 * dt);
            for (r, v) in rhs.iter_mut().zip(l) {
                *r += dt * theta * v;
            }
        }
        if let Some(c) = &conv {
            for (r, v) in rhs.iter_mut().zip(c) {
                *r -= dt * problem.conv_scale * v;
            }
        }
        if let Some((path, loads)) = &noise {
            for (j, g, l) in loads {
                let c = g * path.increment(n, *j);
                for (r, v) in rhs.iter_mut().zip(l) {
                    *r += c * v;
                }
            }
        }
        let (next, _) = saddle_solve(&problem.cache, &problem.op, 1.0, dt, &rhs)?;
        energy.viscous += dt * problem.op.stiffness.bilinear(&next, &next);
        if let Some(c) = &conv {
            energy.convective += dt * problem.conv_scale * dot(c, &next).abs();
        }
        energy.energy_sup = energy.energy_sup.max(problem.energy(&next));
        max_div = max_div.max(problem.divergence_defect(&next));
        averages.push(problem.cell_averages(&next));
        u = next;
    }
    Ok(MicroRun {
        eps: config.eps,
        dt,
        averages,
        energy,
        final_velocity: u,
        max_divergence_defect: max_div,
    })
}

fn spatial_value(s: &SpatialForcing, x: Vec2) -> Vec2 {
    match s {
        SpatialForcing::Uniform(v) => *v,
        SpatialForcing::Stream { amplitude } => crate::darcy_macro::stream_velocity(*amplitude, x),
        SpatialForcing::Field(f) => f(x),
    }
}

/// Average of the cell-centre macro velocity over each of `k × k` blocks.
pub fn block_average(u: &FaceField, k: usize) -> Result<Vec<Vec2>> {
    let n = u.n;
    if k == 0 || !n.is_multiple_of(k) {
        return Err(Error::ConfigMismatch(format!(
            "macro grid {n} is not divisible into {k} blocks"
        )));
    }
    let b = n / k;
    let centres = u.cell_centres();
    let mut out = vec![Vec2::ZERO; k * k];
    for j in 0..n {
        for i in 0..n {
            out[(i / b) + k * (j / b)] += centres[i + n * j] * (1.0 / (b * b) as f64);
        }
    }
    Ok(out)
}

/// Relative `L²([0,T]×D)` distance between two piecewise-constant histories
/// on the same `k × k` partition, rectangle rule in time.
pub fn relative_l2_error(a: &[Vec<Vec2>], b: &[Vec<Vec2>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ConfigMismatch("histories differ in shape".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            num += (*p - *q).dot(*p - *q);
            den += q.dot(*q);
        }
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ErrorRow {
    pub eps: f64,
    pub horizon: f64,
    pub rel_error: f64,
    pub energy_sup: f64,
    pub viscous_energy: f64,
    pub convective_energy: f64,
}

/// Compare cell averages with the block-averaged homogenized velocity;
/// `macro_dt` is the step of `macro_velocity`.
pub fn compare_to_homogenized(
    run: &MicroRun,
    macro_velocity: &[FaceField],
    macro_dt: f64,
) -> Result<ErrorRow> {
    let ratio = run.dt / macro_dt;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 {
        return Err(Error::ConfigMismatch(format!(
            "micro dt {} is not a multiple of macro dt {macro_dt}",
            run.dt
        )));
    }
    let needed = (run.averages.len() - 1) * stride + 1;
    if macro_velocity.len() < needed {
        return Err(Error::ConfigMismatch(format!(
            "macro run covers {} steps, micro run needs {needed}",
            macro_velocity.len()
        )));
    }
    let k = (1.0 / run.eps).round() as usize;
    let reference = (0..run.averages.len())
        .map(|n| block_average(&macro_velocity[n * stride], k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorRow {
        eps: run.eps,
        horizon: run.horizon(),
        rel_error: relative_l2_error(&run.averages, &reference)?,
        energy_sup: run.energy.energy_sup,
        viscous_energy: run.energy.viscous,
        convective_energy: run.energy.convective,
    })
}

/// Error table CSV.
pub fn write_error_table(path: &Path, rows: &[ErrorRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "eps,T,rel_error,energy_sup,viscous_energy,convective_energy")?;
    for r in rows {
        writeln!(
            f,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.eps, r.horizon, r.rel_error, r.energy_sup, r.viscous_energy, r.convective_energy
        )?;
    }
    Ok(())
}
