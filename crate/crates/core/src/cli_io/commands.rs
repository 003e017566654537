use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::svg;
use crate::boundary_noise::{sample_stats, sample_wiener, write_ensemble_summary};
use crate::cell_geometry::{build_cell_mesh, CellMesh};
use crate::cell_stokes::CellProblem;
use crate::darcy_macro::{
    assemble_macro, diagnostics, run_macro, w3_response, write_run_csv, write_snapshot_csv,
    MacroGrid, MacroInputs, MacroNoise, MacroSetup, MacroState, SampledKernels, W3Response,
};
use crate::error::{Error, Result};
use crate::kernels::{check_kernel_properties, KernelReport, KernelTable};
use crate::linalg::Mat2;
use crate::micro_sim::{compare_to_homogenized, solve_micro, write_error_table, ErrorRow, MicroConfig};

/// One named pass/fail entry with its measured defect.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub defect: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `defect <= tolerance`.
    pub fn at_most(name: &str, defect: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: defect <= tolerance,
            defect,
            tolerance,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn build_cell(cfg: &RunConfig) -> Result<(CellMesh, CellProblem)> {
    let mesh = build_cell_mesh(cfg.cell.hole_spec(), cfg.cell.h)?;
    let problem = CellProblem::assemble_constant(&mesh, cfg.cell.nu, cfg.cell.alpha)?;
    Ok((mesh, problem))
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub hole_edges: usize,
    pub area: f64,
    pub exact_area: f64,
    pub min_angle_deg: f64,
    pub hash: String,
}

pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<MeshSummary> {
    ensure_dir(out)?;
    let mesh = build_cell_mesh(cfg.cell.hole_spec(), cfg.cell.h)?;
    std::fs::write(out.join("cell_mesh.txt"), mesh.to_text())?;
    let summary = MeshSummary {
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        hole_edges: mesh.hole_edges.len(),
        area: mesh.area,
        exact_area: mesh.hole.exact_area(),
        min_angle_deg: mesh.min_angle_deg(),
        hash: mesh.hash(),
    };
    write_json(&out.join("mesh_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelOutcome {
    pub path: PathBuf,
    pub report: KernelReport,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Property checks appropriate to the cell geometry.
pub fn kernel_checks(table: &KernelTable, has_hole: bool) -> (KernelReport, Vec<Check>) {
    use crate::kernels::{EIGEN_TOL, ISOTROPY_TOL, MONOTONE_SLACK, SYMMETRY_TOL};
    let report = check_kernel_properties(table);
    let mut checks = vec![
        Check::at_most("kernel_symmetry", report.max_symmetry_defect, SYMMETRY_TOL),
        Check::at_most("kernel_eigenvalues", -report.min_eigenvalue, -EIGEN_TOL),
        Check::at_most("kernel_monotone", report.max_form_increase, MONOTONE_SLACK),
        Check::at_most("kernel_derivative_form", report.max_derivative_form, MONOTONE_SLACK),
    ];
    if has_hole {
        checks.push(Check::at_most("kernel_isotropy", report.isotropy_defect, ISOTROPY_TOL));
    } else {
        let k1 = table
            .k1
            .iter()
            .map(|k| (*k - Mat2::IDENTITY).max_abs())
            .fold(0.0, f64::max);
        let k2 = table.k2.iter().map(|k| k.max_abs()).fold(0.0, f64::max);
        checks.push(Check::at_most("k1_identity", k1, 1e-10));
        checks.push(Check::at_most("k2_zero", k2, 1e-10));
    }
    (report, checks)
}

pub fn cmd_cell_kernels(cfg: &RunConfig, out: &Path) -> Result<KernelOutcome> {
    ensure_dir(out)?;
    let (mesh, problem) = build_cell(cfg)?;
    let table = KernelTable::compute(&problem, cfg.cell.alpha, cfg.cell.horizon, cfg.cell.dt)?;
    let path = out.join("kernels.csv");
    table.write_csv(&path)?;
    let (report, checks) = kernel_checks(&table, mesh.hole.has_hole());
    let outcome = KernelOutcome {
        path,
        passed: all_passed(&checks),
        report,
        checks,
    };
    write_json(&out.join("kernel_report.json"), &outcome)?;
    Ok(outcome)
}

/// Refuse kernels computed for another cell, viscosity or slip coefficient.
pub fn check_provenance(table: &KernelTable, mesh: &CellMesh, cfg: &RunConfig) -> Result<()> {
    let mut diffs = Vec::new();
    let hash = mesh.hash();
    if table.meta.mesh_hash != hash {
        diffs.push(format!("mesh hash {} vs {hash}", table.meta.mesh_hash));
    }
    if table.meta.nu != cfg.cell.nu {
        diffs.push(format!("nu {} vs {}", table.meta.nu, cfg.cell.nu));
    }
    if table.meta.alpha != cfg.cell.alpha {
        diffs.push(format!("alpha {} vs {}", table.meta.alpha, cfg.cell.alpha));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::ProvenanceMismatch(diffs.join("; ")))
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Config(format!("macro horizon {horizon} is not a multiple of dt {dt}")));
    }
    Ok(n as usize)
}

/// Shared pieces of a macro run: grid, sampled kernels and the cell noise
/// response.
pub struct MacroContext {
    pub grid: Arc<MacroGrid>,
    pub kernels: SampledKernels,
    pub w3: W3Response,
    pub n_steps: usize,
}

pub fn macro_context(cfg: &RunConfig, table: &KernelTable, problem: &CellProblem) -> Result<MacroContext> {
    let m = &cfg.macro_;
    let n_steps = step_count(m.horizon, m.dt)?;
    let kernels = SampledKernels::from_table(table, m.dt)?;
    if n_steps >= kernels.k1.len() {
        return Err(Error::KernelHorizonExceeded {
            t: m.horizon,
            horizon: kernels.horizon(),
        });
    }
    let grid = Arc::new(assemble_macro(m.n, table.k1[0])?);
    let ops = cfg.noise.operators();
    let w3 = if cfg.noise.g22 != 0.0 && problem.has_hole() {
        w3_response(problem, &ops, m.dt, n_steps)?
    } else {
        W3Response::default()
    };
    Ok(MacroContext {
        grid,
        kernels,
        w3,
        n_steps,
    })
}

/// Inputs for one noise path; path `r` draws `W1` from stream `2r` and `W2`
/// from stream `2r + 1`.
pub fn macro_inputs(cfg: &RunConfig, ctx: &MacroContext, path: u64) -> Result<MacroInputs> {
    let noise = if cfg.noise.is_zero() {
        None
    } else {
        let spec = cfg.noise.spec()?;
        let dt = cfg.macro_.dt;
        Some(MacroNoise {
            ops: cfg.noise.operators(),
            w1: sample_wiener(&spec, dt, ctx.n_steps, 2 * path)?,
            w2: sample_wiener(&spec, dt, ctx.n_steps, 2 * path + 1)?,
            w3: ctx.w3.clone(),
        })
    };
    Ok(MacroInputs {
        forcing: cfg.macro_.forcing.forcing(),
        noise,
        w0: None,
    })
}

pub fn run_path(cfg: &RunConfig, ctx: &MacroContext, path: u64) -> Result<(MacroSetup, MacroState)> {
    let setup = MacroSetup::new(ctx.grid.clone(), ctx.kernels.clone(), macro_inputs(cfg, ctx, path)?);
    let state = run_macro(&setup, ctx.n_steps)?;
    Ok((setup, state))
}

#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub paths: usize,
    pub steps: usize,
    pub final_velocity_l2_mean: f64,
    pub final_velocity_l2_stderr: f64,
    pub max_relative_divergence: f64,
    pub max_boundary_flux: f64,
    pub files: Vec<PathBuf>,
}

pub fn cmd_darcy_run(
    cfg: &RunConfig,
    kernel_file: &Path,
    out: &Path,
    paths: Option<usize>,
    svg_on: bool,
) -> Result<RunOutcome> {
    ensure_dir(out)?;
    let table = KernelTable::read_csv(kernel_file)?;
    let (mesh, problem) = build_cell(cfg)?;
    check_provenance(&table, &mesh, cfg)?;
    let ctx = macro_context(cfg, &table, &problem)?;
    let dt = cfg.macro_.dt;
    let mut files = Vec::new();

    match paths {
        None => {
            let (setup, state) = run_path(cfg, &ctx, 0)?;
            let diags = diagnostics(&state, &setup);
            let run_csv = out.join("run.csv");
            write_run_csv(&run_csv, &diags)?;
            files.push(run_csv);
            let every = cfg.output.snapshot_every;
            for n in 0..=ctx.n_steps {
                let keep = n == ctx.n_steps || (every > 0 && n % every == 0);
                if !keep {
                    continue;
                }
                let u = state.evaluate_velocity(n)?;
                let p = state.pressure(n)?;
                let path = out.join(format!("snapshot_{n:05}.csv"));
                write_snapshot_csv(&path, &setup.grid, u, p)?;
                files.push(path);
                if svg_on {
                    let path = out.join(format!("snapshot_{n:05}.svg"));
                    std::fs::write(&path, svg::render_field(&u.cell_centres(), p, setup.grid.n))?;
                    files.push(path);
                }
            }
            let last = diags.last().expect("at least one step");
            Ok(RunOutcome {
                paths: 1,
                steps: ctx.n_steps,
                final_velocity_l2_mean: last.velocity_l2,
                final_velocity_l2_stderr: 0.0,
                max_relative_divergence: relative_divergence(&diags),
                max_boundary_flux: diags.iter().map(|d| d.boundary_flux).fold(0.0, f64::max),
                files,
            })
        }
        Some(r) => {
            let results: Vec<Result<(Vec<f64>, f64, f64)>> = (0..r as u64)
                .into_par_iter()
                .map(|p| {
                    let (setup, state) = run_path(cfg, &ctx, p)?;
                    let diags = diagnostics(&state, &setup);
                    Ok((
                        diags.iter().map(|d| d.velocity_l2).collect(),
                        relative_divergence(&diags),
                        diags.iter().map(|d| d.boundary_flux).fold(0.0, f64::max),
                    ))
                })
                .collect();
            let mut per_path = Vec::with_capacity(r);
            let (mut div, mut flux) = (0.0_f64, 0.0_f64);
            for res in results {
                let (norms, d, f) = res?;
                per_path.push(norms);
                div = div.max(d);
                flux = flux.max(f);
            }
            let times: Vec<f64> = (0..=ctx.n_steps).map(|n| n as f64 * dt).collect();
            let by_time: Vec<Vec<f64>> = (0..=ctx.n_steps)
                .map(|n| per_path.iter().map(|p| p[n]).collect())
                .collect();
            let ens = out.join("ensemble.csv");
            write_ensemble_summary(&ens, &times, &by_time)?;
            files.push(ens);
            let finals = out.join("paths_final.csv");
            let mut f = std::io::BufWriter::new(std::fs::File::create(&finals)?);
            writeln!(f, "path,velocity_l2")?;
            for (p, norms) in per_path.iter().enumerate() {
                writeln!(f, "{p},{:e}", norms[ctx.n_steps])?;
            }
            drop(f);
            files.push(finals);
            let (mean, _, se) = sample_stats(&by_time[ctx.n_steps]);
            Ok(RunOutcome {
                paths: r,
                steps: ctx.n_steps,
                final_velocity_l2_mean: mean,
                final_velocity_l2_stderr: se,
                max_relative_divergence: div,
                max_boundary_flux: flux,
                files,
            })
        }
    }
}

fn relative_divergence(diags: &[crate::darcy_macro::StepDiagnostics]) -> f64 {
    diags
        .iter()
        .map(|d| {
            if d.velocity_l2 > 0.0 {
                d.max_div / d.velocity_l2
            } else {
                d.max_div
            }
        })
        .fold(0.0, f64::max)
}

/// Micro runs for every configured ε compared with the homogenized run on
/// the same cell mesh size.
pub fn cmd_micro_compare(cfg: &RunConfig, out: &Path) -> Result<Vec<ErrorRow>> {
    ensure_dir(out)?;
    if !cfg.noise.is_zero() {
        return Err(Error::ConfigMismatch(
            "the micro comparison is deterministic; set all noise gains to 0".into(),
        ));
    }
    let m = &cfg.macro_;
    let mesh = build_cell_mesh(cfg.cell.hole_spec(), cfg.micro.h)?;
    let problem = CellProblem::assemble_constant(&mesh, cfg.cell.nu, cfg.cell.alpha)?;
    let table = KernelTable::compute(&problem, cfg.cell.alpha, m.horizon, m.dt)?;
    let ctx = macro_context(cfg, &table, &problem)?;
    let (_, state) = run_path(cfg, &ctx, 0)?;
    let configs: Vec<MicroConfig> = cfg
        .micro
        .eps
        .iter()
        .map(|&eps| MicroConfig {
            eps,
            beta: cfg.micro.beta,
            nu: cfg.cell.nu,
            alpha: cfg.cell.alpha,
            hole: cfg.cell.hole_spec(),
            cell_h: cfg.micro.h,
            dt: m.dt,
            horizon: m.horizon,
            forcing: m.forcing.forcing(),
            noise: None,
            allow_fine: cfg.micro.fine,
        })
        .collect();
    let rows = configs
        .par_iter()
        .map(|c| compare_to_homogenized(&solve_micro(c)?, &state.velocity, m.dt))
        .collect::<Result<Vec<_>>>()?;
    write_error_table(&out.join("error_table.csv"), &rows)?;
    Ok(rows)
}
