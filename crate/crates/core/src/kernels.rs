//! Permeability kernels `K1(t)`, `K2(t)` and the derivative `K1'(t)`.
//!
//! Index convention: `K_ij(t) = ∫_{Y*} (dw_i/dt)_j dy`; a kernel acts on a
//! vector by contracting its first index ([`Mat2::act`]).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::cell_stokes::{CellProblem, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};

/// Provenance of a kernel table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelMeta {
    pub mesh_hash: String,
    pub nu: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct KernelTable {
    pub dt: f64,
    pub k1: Vec<Mat2>,
    pub k2: Vec<Mat2>,
    pub k1_prime: Vec<Mat2>,
    pub decay_rate: f64,
    pub k_steady: Option<Mat2>,
    pub meta: KernelMeta,
}

/// Quadratic-form directions used by the monotonicity checks.
pub fn probe_directions() -> [Vec2; 3] {
    [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0)]
}

fn rate_integrals(problem: &CellProblem, traj: &Trajectory) -> Vec<Vec2> {
    traj.rates.iter().map(|r| problem.integral(r)).collect()
}

fn assemble_rows(a: &[Vec2], b: &[Vec2]) -> Vec<Mat2> {
    a.iter()
        .zip(b)
        .map(|(r0, r1)| Mat2::new(r0.x, r0.y, r1.x, r1.y))
        .collect()
}

fn check_grid(trajs: &[&Trajectory]) -> Result<()> {
    let (dt, len) = (trajs[0].dt, trajs[0].len());
    for t in trajs {
        if t.dt != dt || t.len() != len {
            return Err(Error::GridMismatch(format!(
                "trajectory grid (dt {}, {} samples) differs from (dt {dt}, {len} samples)",
                t.dt,
                t.len()
            )));
        }
    }
    Ok(())
}

/// Kernels from the four cell trajectories `w¹_0, w¹_1, w²_0, w²_1`.
pub fn compute_kernels(
    problem: &CellProblem,
    w1: [&Trajectory; 2],
    w2: [&Trajectory; 2],
    meta: KernelMeta,
) -> Result<KernelTable> {
    check_grid(&[w1[0], w1[1], w2[0], w2[1]])?;
    let dt = w1[0].dt;
    let k1 = assemble_rows(&rate_integrals(problem, w1[0]), &rate_integrals(problem, w1[1]));
    let k2 = assemble_rows(&rate_integrals(problem, w2[0]), &rate_integrals(problem, w2[1]));
    Ok(KernelTable::from_samples(dt, k1, k2, None, meta))
}

impl KernelTable {
    pub fn from_samples(
        dt: f64,
        k1: Vec<Mat2>,
        k2: Vec<Mat2>,
        k_steady: Option<Mat2>,
        meta: KernelMeta,
    ) -> Self {
        let k1_prime = kernel_derivative(&k1, dt);
        let decay_rate = fit_decay_rate(&k1.iter().map(|k| k.get(0, 0)).collect::<Vec<_>>(), dt);
        KernelTable {
            dt,
            k1,
            k2,
            k1_prime,
            decay_rate,
            k_steady,
            meta,
        }
    }

    /// Run the four cell problems and extract the kernels. The steady slip
    /// oracle is attached when the cell has a hole.
    pub fn compute(problem: &CellProblem, alpha: f64, horizon: f64, dt: f64) -> Result<Self> {
        let meta = KernelMeta {
            mesh_hash: problem.mesh.hash(),
            nu: problem.nu,
            alpha,
        };
        let series = |load: Vec<f64>| -> Result<Vec<Vec2>> {
            let traj = problem.solve_forced(&load, horizon, dt)?;
            Ok(rate_integrals(problem, &traj))
        };
        let ((a, b), (c, d)) = rayon::join(
            || {
                rayon::join(
                    || series(problem.bulk_load(Vec2::unit(0))),
                    || series(problem.bulk_load(Vec2::unit(1))),
                )
            },
            || {
                rayon::join(
                    || series(problem.direction_tangential_load(0)),
                    || series(problem.direction_tangential_load(1)),
                )
            },
        );
        let k1 = assemble_rows(&a?, &b?);
        let k2 = assemble_rows(&c?, &d?);
        let k_steady = if problem.has_hole() {
            Some(problem.steady_kernel()?)
        } else {
            None
        };
        Ok(Self::from_samples(dt, k1, k2, k_steady, meta))
    }

    pub fn len(&self) -> usize {
        self.k1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k1.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.len().saturating_sub(1)) as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Decay rate of `K2`, fitted like that of `K1` on the entry of largest
    /// magnitude.
    pub fn k2_decay_rate(&self) -> f64 {
        let last = self.k2.last().copied().unwrap_or(Mat2::ZERO);
        let (mut bi, mut bj) = (0, 0);
        for i in 0..2 {
            for j in 0..2 {
                if last.get(i, j).abs() > last.get(bi, bj).abs() {
                    bi = i;
                    bj = j;
                }
            }
        }
        let s: Vec<f64> = self.k2.iter().map(|k| k.get(bi, bj).abs()).collect();
        fit_decay_rate(&s, self.dt)
    }

    /// Replace `K1` and refresh the derived quantities.
    pub fn set_k1(&mut self, k1: Vec<Mat2>) {
        self.k1_prime = kernel_derivative(&k1, self.dt);
        self.decay_rate = fit_decay_rate(&k1.iter().map(|k| k.get(0, 0)).collect::<Vec<_>>(), self.dt);
        self.k1 = k1;
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# mesh_hash={}", self.meta.mesh_hash)?;
        writeln!(f, "# nu={}", self.meta.nu)?;
        writeln!(f, "# alpha={}", self.meta.alpha)?;
        writeln!(f, "# dt={}", self.dt)?;
        writeln!(f, "# horizon={}", self.horizon())?;
        writeln!(f, "# decay_rate={}", self.decay_rate)?;
        if let Some(k) = self.k_steady {
            let v = k.flat();
            writeln!(f, "# k_steady={} {} {} {}", v[0], v[1], v[2], v[3])?;
        }
        writeln!(
            f,
            "# convention=K_ij(t) = int (dw_i/dt)_j; acts as out_j = sum_i K_ij v_i; deterministic memory by trapezoid, stochastic sums left-point (Ito)"
        )?;
        let mut header = String::from("t");
        for name in ["K1", "K2", "K1p"] {
            for ij in ["11", "12", "21", "22"] {
                header.push_str(&format!(",{name}_{ij}"));
            }
        }
        writeln!(f, "{header}")?;
        for n in 0..self.len() {
            let mut row = format!("{:e}", self.time(n));
            for k in [&self.k1[n], &self.k2[n], &self.k1_prime[n]] {
                for v in k.flat() {
                    row.push_str(&format!(",{v:e}"));
                }
            }
            writeln!(f, "{row}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let perr = |m: String| Error::Parse(format!("{}: {m}", path.display()));
        let mut meta: std::collections::HashMap<String, String> = Default::default();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut header_seen = false;
        for (ln, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header_seen {
                if !line.starts_with("t,") {
                    return Err(perr(format!("line {}: expected column header", ln + 1)));
                }
                header_seen = true;
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(format!("line {}: {e}", ln + 1)))?;
            if vals.len() != 13 {
                return Err(perr(format!("line {}: expected 13 columns", ln + 1)));
            }
            rows.push(vals);
        }
        let get = |k: &str| -> Result<&String> {
            meta.get(k)
                .ok_or_else(|| perr(format!("missing metadata '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| perr(format!("metadata '{k}': {e}")))
        };
        let dt = num("dt")?;
        let decay_rate = num("decay_rate")?;
        let k_steady = match meta.get("k_steady") {
            Some(s) => {
                let v = s
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| perr(format!("k_steady: {e}")))?;
                if v.len() != 4 {
                    return Err(perr("k_steady needs four entries".into()));
                }
                Some(Mat2::new(v[0], v[1], v[2], v[3]))
            }
            None => None,
        };
        let mat = |r: &[f64], o: usize| Mat2::new(r[o], r[o + 1], r[o + 2], r[o + 3]);
        if rows.is_empty() {
            return Err(perr("no kernel rows".into()));
        }
        Ok(KernelTable {
            dt,
            k1: rows.iter().map(|r| mat(r, 1)).collect(),
            k2: rows.iter().map(|r| mat(r, 5)).collect(),
            k1_prime: rows.iter().map(|r| mat(r, 9)).collect(),
            decay_rate,
            k_steady,
            meta: KernelMeta {
                mesh_hash: get("mesh_hash")?.clone(),
                nu: num("nu")?,
                alpha: num("alpha")?,
            },
        })
    }
}

/// Central differences inside, second-order one-sided differences at the
/// ends.
pub fn kernel_derivative(k: &[Mat2], dt: f64) -> Vec<Mat2> {
    let n = k.len();
    match n {
        0 => Vec::new(),
        1 => vec![Mat2::ZERO],
        2 => {
            let d = (k[1] - k[0]) * (1.0 / dt);
            vec![d, d]
        }
        _ => (0..n)
            .map(|i| {
                let s = 0.5 / dt;
                if i == 0 {
                    (k[0] * -3.0 + k[1] * 4.0 - k[2]) * s
                } else if i == n - 1 {
                    (k[n - 1] * 3.0 - k[n - 2] * 4.0 + k[n - 3]) * s
                } else {
                    (k[i + 1] - k[i - 1]) * s
                }
            })
            .collect(),
    }
}

/// Least-squares slope of `−log y` over the last half of the samples.
/// Returns 0 when the series is constant or not strictly positive.
pub fn fit_decay_rate(y: &[f64], dt: f64) -> f64 {
    let n = y.len();
    if n < 3 {
        return 0.0;
    }
    let start = n / 2;
    let pts: Vec<(f64, f64)> = (start..n).map(|i| (i as f64 * dt, y[i])).collect();
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return 0.0;
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in &pts {
        num += (t - tm) * (v.ln() - lm);
        den += (t - tm) * (t - tm);
    }
    let slope = num / den;
    if slope.abs() < 1e-12 {
        0.0
    } else {
        -slope
    }
}

/// Structural checks on a kernel table.
#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    /// `max_t |K12 − K21| / max|K(t)|`.
    pub max_symmetry_defect: f64,
    pub min_eigenvalue: f64,
    /// Number of (time, direction) pairs where a quadratic form increases
    /// by more than the slack.
    pub monotonicity_violations: usize,
    pub max_form_increase: f64,
    /// `max ξᵀK1'ξ` over the probe directions.
    pub max_derivative_form: f64,
    /// `max_t max(|K12|, |K21|, |K11 − K22|) / min(K11, K22)`.
    pub isotropy_defect: f64,
    pub decay_rate: f64,
    /// `max |K1'_dt − K1'_2dt| / max |K1'|` on the common grid points.
    pub derivative_consistency: f64,
}

pub const SYMMETRY_TOL: f64 = 1e-8;
pub const EIGEN_TOL: f64 = -1e-10;
pub const MONOTONE_SLACK: f64 = 1e-10;
pub const ISOTROPY_TOL: f64 = 1e-6;

impl KernelReport {
    pub fn structure_ok(&self) -> bool {
        self.max_symmetry_defect <= SYMMETRY_TOL
            && self.min_eigenvalue >= EIGEN_TOL
            && self.monotonicity_violations == 0
            && self.max_derivative_form <= MONOTONE_SLACK
    }

    pub fn isotropic(&self) -> bool {
        self.isotropy_defect <= ISOTROPY_TOL
    }
}

pub fn check_kernel_properties(table: &KernelTable) -> KernelReport {
    let mut sym = 0.0_f64;
    let mut min_eig = f64::INFINITY;
    let mut iso = 0.0_f64;
    for k in &table.k1 {
        let scale = k.max_abs();
        if scale > 0.0 {
            sym = sym.max((k.get(0, 1) - k.get(1, 0)).abs() / scale);
        }
        min_eig = min_eig.min(k.sym_eigenvalues()[0]);
        let diag = k.get(0, 0).min(k.get(1, 1));
        let off = k
            .get(0, 1)
            .abs()
            .max(k.get(1, 0).abs())
            .max((k.get(0, 0) - k.get(1, 1)).abs());
        if diag > 0.0 {
            iso = iso.max(off / diag);
        } else if off > 0.0 {
            iso = f64::INFINITY;
        }
    }
    let mut violations = 0;
    let mut max_inc = f64::NEG_INFINITY;
    let mut max_der = f64::NEG_INFINITY;
    for xi in probe_directions() {
        for w in table.k1.windows(2) {
            let inc = w[1].quadratic_form(xi) - w[0].quadratic_form(xi);
            max_inc = max_inc.max(inc);
            if inc > MONOTONE_SLACK {
                violations += 1;
            }
        }
        for d in &table.k1_prime {
            max_der = max_der.max(d.quadratic_form(xi));
        }
    }
    let coarse: Vec<Mat2> = table.k1.iter().step_by(2).copied().collect();
    let coarse_d = kernel_derivative(&coarse, 2.0 * table.dt);
    let dscale = table.k1_prime.iter().fold(0.0_f64, |a, k| a.max(k.max_abs()));
    let dcons = if dscale > 0.0 {
        coarse_d
            .iter()
            .enumerate()
            .map(|(i, k)| (*k - table.k1_prime[2 * i]).max_abs())
            .fold(0.0_f64, f64::max)
            / dscale
    } else {
        0.0
    };
    KernelReport {
        max_symmetry_defect: sym,
        min_eigenvalue: min_eig,
        monotonicity_violations: violations,
        max_form_increase: max_inc.max(0.0),
        max_derivative_form: max_der,
        isotropy_defect: iso,
        decay_rate: table.decay_rate,
        derivative_consistency: dcons,
    }
}

/// Trapezoid integral over the grid plus the exponential tail `K(T)/rate`.
pub fn integrate_kernel(table: &KernelTable) -> Result<Mat2> {
    if !(table.decay_rate > 0.0) {
        return Err(Error::NoDecay(table.decay_rate));
    }
    let n = table.len();
    let mut acc = Mat2::ZERO;
    for (i, k) in table.k1.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += *k * (w * table.dt);
    }
    Ok(acc + table.k1[n - 1] * (1.0 / table.decay_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_fit_recovers_exponential() {
        let y: Vec<f64> = (0..101).map(|i| 2.0 * (-3.0 * i as f64 * 0.01).exp()).collect();
        assert!((fit_decay_rate(&y, 0.01) - 3.0).abs() < 1e-10);
        assert_eq!(fit_decay_rate(&[1.0; 10], 0.1), 0.0);
    }

    #[test]
    fn derivative_exact_for_quadratics() {
        let dt = 0.1;
        let k: Vec<Mat2> = (0..10)
            .map(|i| {
                let t = i as f64 * dt;
                Mat2::scaled_identity(t * t - t)
            })
            .collect();
        for (i, d) in kernel_derivative(&k, dt).iter().enumerate() {
            let t = i as f64 * dt;
            assert!((d.get(0, 0) - (2.0 * t - 1.0)).abs() < 1e-12);
        }
    }
}
