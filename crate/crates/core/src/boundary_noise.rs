//! Truncated Karhunen–Loève noise, Wiener path sampling and the stochastic
//! cell problem driven by tangential boundary noise.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cell_stokes::{CellField, CellProblem, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{Vec2, dot};

/// Eigenvalues of a trace-class covariance truncated to `J` modes, with the
/// seed of the associated Wiener processes.
#[derive(Clone, Debug, PartialEq)]
pub struct KLNoise {
    pub lambda: Vec<f64>,
    pub seed: u64,
}

impl KLNoise {
    pub fn new(lambda: Vec<f64>, seed: u64) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidSpec("at least one mode is required".into()));
        }
        if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidSpec(format!(
                "eigenvalues must be positive and finite: {lambda:?}"
            )));
        }
        if lambda.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSpec("eigenvalues must be nonincreasing".into()));
        }
        Ok(KLNoise { lambda, seed })
    }

    /// `λ_j = (j+1)^(−decay)` for `j < modes`.
    pub fn power_law(modes: usize, decay: f64, seed: u64) -> Result<Self> {
        if decay < 0.0 {
            return Err(Error::InvalidSpec(format!("decay exponent {decay} must be >= 0")));
        }
        Self::new((1..=modes).map(|j| (j as f64).powf(-decay)).collect(), seed)
    }

    pub fn modes(&self) -> usize {
        self.lambda.len()
    }

    pub fn trace(&self) -> f64 {
        self.lambda.iter().sum()
    }
}

/// Increments `ΔW_{j,n}` stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    pub dt: f64,
    pub n_steps: usize,
    pub modes: usize,
    pub stream: u64,
    pub increments: Vec<f64>,
}

impl WienerPath {
    pub fn zeros(dt: f64, n_steps: usize, modes: usize) -> Self {
        WienerPath {
            dt,
            n_steps,
            modes,
            stream: 0,
            increments: vec![0.0; n_steps * modes],
        }
    }

    pub fn increment(&self, n: usize, j: usize) -> f64 {
        self.increments[n * self.modes + j]
    }

    /// Increments of one mode.
    pub fn mode(&self, j: usize) -> Vec<f64> {
        (0..self.n_steps).map(|n| self.increment(n, j)).collect()
    }

    /// `W_j(t_n)`.
    pub fn value(&self, n: usize, j: usize) -> f64 {
        (0..n).map(|k| self.increment(k, j)).sum()
    }

    /// CSV with columns `t,mode,increment`; `t` is the left end of the step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,mode,increment")?;
        for n in 0..self.n_steps {
            for j in 0..self.modes {
                writeln!(f, "{:e},{},{:e}", n as f64 * self.dt, j, self.increment(n, j))?;
            }
        }
        Ok(())
    }
}

/// Independent increments `√(λ_j dt)·N(0,1)` from a ChaCha stream keyed by
/// `(seed, stream)`.
pub fn sample_wiener(spec: &KLNoise, dt: f64, n_steps: usize, stream: u64) -> Result<WienerPath> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let scales: Vec<f64> = spec.lambda.iter().map(|l| (l * dt).sqrt()).collect();
    let mut increments = Vec::with_capacity(n_steps * scales.len());
    for _ in 0..n_steps {
        for s in &scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            increments.push(s * z);
        }
    }
    Ok(WienerPath {
        dt,
        n_steps,
        modes: scales.len(),
        stream,
        increments,
    })
}

/// Orthonormal cosine tensor modes on the unit square, one vector component
/// at a time. Ordered by total frequency, then x-frequency, then component.
pub fn bulk_mode_index(j: usize) -> (usize, usize, usize) {
    let comp = j % 2;
    let mut m = j / 2;
    let mut total = 0;
    loop {
        if m <= total {
            return (m, total - m, comp);
        }
        m -= total + 1;
        total += 1;
    }
}

fn cosine(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        2f64.sqrt() * (k as f64 * PI * x).cos()
    }
}

fn cosine_deriv(k: usize, x: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        -(2f64.sqrt()) * k as f64 * PI * (k as f64 * PI * x).sin()
    }
}

pub fn bulk_mode(j: usize, x: Vec2) -> Vec2 {
    let (kx, ky, comp) = bulk_mode_index(j);
    let v = cosine(kx, x.x) * cosine(ky, x.y);
    if comp == 0 {
        Vec2::new(v, 0.0)
    } else {
        Vec2::new(0.0, v)
    }
}

/// Divergence of bulk mode `j`.
pub fn bulk_mode_div(j: usize, x: Vec2) -> f64 {
    let (kx, ky, comp) = bulk_mode_index(j);
    if comp == 0 {
        cosine_deriv(kx, x.x) * cosine(ky, x.y)
    } else {
        cosine(kx, x.x) * cosine_deriv(ky, x.y)
    }
}

/// Orthonormal Fourier modes in arc length on a closed curve of length `L`,
/// without the constant: even `j` are sines, odd `j` cosines, frequency
/// `j/2 + 1`.
pub fn boundary_mode(j: usize, s: f64, length: f64) -> f64 {
    let k = (j / 2 + 1) as f64;
    let a = 2.0 * PI * k * s / length;
    let c = (2.0 / length).sqrt();
    if j.is_multiple_of(2) {
        c * a.sin()
    } else {
        c * a.cos()
    }
}

/// Arc-length positions of the hole-edge starting points and total length.
pub fn arc_offsets(problem: &CellProblem) -> (Vec<f64>, f64) {
    let mut acc = 0.0;
    let mut off = Vec::with_capacity(problem.space.slip_edges.len());
    for e in &problem.space.slip_edges {
        off.push(acc);
        acc += e.length;
    }
    (off, acc)
}

/// Diagonal finite-rank noise operators: `g1` and `g21` send mode `j` of
/// their Wiener process to `gain_j · bulk_mode(j)`, `g22` sends mode `j` of
/// `W2` to tangential data `gain_j · boundary_mode(j)` on the hole. Constant
/// in time.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseOperators {
    pub g1: Vec<f64>,
    pub g21: Vec<f64>,
    pub g22: Vec<f64>,
}

impl NoiseOperators {
    /// Unit `g1` on every mode, `g21 = 0`, `g22` on the first boundary mode.
    pub fn defaults(modes: usize) -> Self {
        let mut g22 = vec![0.0; modes];
        if modes > 0 {
            g22[0] = 1.0;
        }
        NoiseOperators {
            g1: vec![1.0; modes],
            g21: vec![0.0; modes],
            g22,
        }
    }

    pub fn with_gains(modes: usize, g1: f64, g21: f64, g22: f64) -> Self {
        let mut ops = Self::defaults(modes);
        ops.g1.iter_mut().for_each(|g| *g *= g1);
        ops.g21 = vec![g21; modes];
        ops.g22.iter_mut().for_each(|g| *g *= g22);
        ops
    }

    pub fn zero(modes: usize) -> Self {
        NoiseOperators {
            g1: vec![0.0; modes],
            g21: vec![0.0; modes],
            g22: vec![0.0; modes],
        }
    }

    /// `‖g‖²_{HS(Q)} = Σ λ_j g_j²` for each operator.
    pub fn hilbert_schmidt(&self, spec: &KLNoise) -> [f64; 3] {
        let hs = |g: &[f64]| g.iter().zip(&spec.lambda).map(|(g, l)| l * g * g).sum();
        [hs(&self.g1), hs(&self.g21), hs(&self.g22)]
    }

    pub fn active_g22(&self) -> Vec<usize> {
        (0..self.g22.len()).filter(|&j| self.g22[j] != 0.0).collect()
    }
}

/// Reduced loads of the boundary modes `j` (unit gain).
pub fn boundary_mode_load(problem: &CellProblem, j: usize) -> Vec<f64> {
    let (off, length) = arc_offsets(problem);
    let edges = &problem.space.slip_edges;
    problem.tangential_load(&|e, s| boundary_mode(j, off[e] + s * edges[e].length, length))
}

/// Semi-implicit Euler–Maruyama for the stochastic cell problem: implicit
/// deterministic part, boundary increment `g22 ΔW_n` as an impulse.
pub fn solve_w3(problem: &CellProblem, ops: &NoiseOperators, path: &WienerPath) -> Result<Trajectory> {
    let active = ops.active_g22();
    let loads: Vec<(usize, Vec<f64>)> = active
        .iter()
        .map(|&j| (j, boundary_mode_load(problem, j)))
        .collect();
    let nv = problem.n_velocity();
    let mut states = Vec::with_capacity(path.n_steps + 1);
    let mut rates = Vec::with_capacity(path.n_steps + 1);
    states.push(problem.zero_field());
    rates.push(vec![0.0; nv]);
    for n in 0..path.n_steps {
        let mut impulse = vec![0.0; nv];
        for (j, load) in &loads {
            let c = ops.g22[*j] * path.increment(n, *j);
            for (a, b) in impulse.iter_mut().zip(load) {
                *a += c * b;
            }
        }
        let prev = &states[n].velocity;
        let (u, p) = if loads.is_empty() {
            (vec![0.0; nv], vec![0.0; problem.n_pressure()])
        } else {
            problem.advance(prev, path.dt, &impulse)?
        };
        rates.push(u.iter().zip(prev).map(|(a, b)| (a - b) / path.dt).collect());
        states.push(CellField {
            velocity: u,
            pressure: p.into_iter().map(|v| v / path.dt).collect(),
            time: (n + 1) as f64 * path.dt,
        });
    }
    Ok(Trajectory {
        dt: path.dt,
        states,
        rates,
    })
}

/// Responses `z^(m)`, `m = 1..=n`, of the discrete semigroup to a unit
/// impulse `load` applied at the start of a step: `z^(1) = R load`,
/// `z^(m+1) = R M z^(m)`.
pub fn impulse_responses(problem: &CellProblem, load: &[f64], dt: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    let zero = vec![0.0; problem.n_velocity()];
    let mut out = Vec::with_capacity(n);
    let mut z = problem.advance(&zero, dt, load)?.0;
    for _ in 0..n {
        let next = problem.advance(&z, dt, &zero)?.0;
        out.push(std::mem::replace(&mut z, next));
    }
    Ok(out)
}

/// Discrete Itô-isometry prediction of `E‖w³(t_n)‖²_H` for `n = 0..=n_steps`.
pub fn w3_second_moment_oracle(
    problem: &CellProblem,
    ops: &NoiseOperators,
    spec: &KLNoise,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n_steps + 1];
    for j in ops.active_g22() {
        let z = impulse_responses(problem, &boundary_mode_load(problem, j), dt, n_steps)?;
        let w = spec.lambda[j] * dt * ops.g22[j] * ops.g22[j];
        let mut acc = 0.0;
        for n in 1..=n_steps {
            let zm = &z[n - 1];
            acc += w * problem.h_inner(zm, zm);
            out[n] += acc;
        }
    }
    Ok(out)
}

/// Stationary-in-time variance of the scalar OU process
/// `dX = −μX dt + g dW` started at zero.
pub fn ou_variance_oracle(mu: f64, g: f64, t: f64) -> f64 {
    g * g * (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu)
}

/// Semi-implicit scalar OU paths `X_{n+1} = (X_n + gΔW_n)/(1 + μ dt)`;
/// returns the samples at the requested step indices, path-major.
pub fn simulate_scalar_ou(
    mu: f64,
    g: f64,
    dt: f64,
    record: &[usize],
    paths: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    let n_steps = record.iter().copied().max().unwrap_or(0);
    let spec = KLNoise { lambda: vec![1.0], seed };
    (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = sample_wiener(&spec, dt, n_steps, p).expect("dt checked by caller");
            let mut x = 0.0;
            let mut out = Vec::with_capacity(record.len());
            let mut next = 0;
            let mut sorted: Vec<usize> = record.to_vec();
            sorted.sort_unstable();
            for n in 0..=n_steps {
                while next < sorted.len() && sorted[next] == n {
                    out.push(x);
                    next += 1;
                }
                if n < n_steps {
                    x = (x + g * path.increment(n, 0)) / (1.0 + mu * dt);
                }
            }
            out
        })
        .collect()
}

/// Sample mean, unbiased variance and standard error of the mean.
pub fn sample_stats(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var, (var / n).sqrt())
}

/// Standard error of a sample variance estimate, from the fourth moment.
pub fn variance_stderr(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mean, var, _) = sample_stats(x);
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    ((m4 - var * var).max(0.0) / n).sqrt()
}

/// Ensemble summary CSV with columns `t,mean_E,var_E,stderr`, where
/// `samples[n]` holds the per-path values at time `times[n]`.
pub fn write_ensemble_summary(path: &Path, times: &[f64], samples: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,mean_E,var_E,stderr")?;
    for (t, s) in times.iter().zip(samples) {
        let (m, v, se) = sample_stats(s);
        writeln!(f, "{t:e},{m:e},{v:e},{se:e}")?;
    }
    Ok(())
}

/// Discrete arc-length inner product of two boundary modes using the
/// vertices of a regular `n`-gon of perimeter `length`.
pub fn boundary_mode_gram(j: usize, k: usize, n: usize, length: f64) -> f64 {
    let ds = length / n as f64;
    (0..n)
        .map(|i| {
            let s = i as f64 * ds;
            ds * boundary_mode(j, s, length) * boundary_mode(k, s, length)
        })
        .sum()
}

/// Midpoint-rule inner product of two bulk modes on an `n × n` grid.
pub fn bulk_mode_gram(j: usize, k: usize, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut acc = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let x = Vec2::new((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h);
            acc += h * h * bulk_mode(j, x).dot(bulk_mode(k, x));
        }
    }
    acc
}

/// `E‖Σ σ_n ΔW_n‖²` predicted by the discrete Itô isometry.
pub fn ito_isometry(sigma: &[f64], lambda: f64, dt: f64) -> f64 {
    lambda * dt * dot(sigma, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_ordering() {
        assert_eq!(bulk_mode_index(0), (0, 0, 0));
        assert_eq!(bulk_mode_index(1), (0, 0, 1));
        assert_eq!(bulk_mode_index(2), (0, 1, 0));
        assert_eq!(bulk_mode_index(4), (1, 0, 0));
        assert_eq!(bulk_mode_index(6), (0, 2, 0));
    }

    #[test]
    fn rejects_zero_eigenvalues() {
        assert!(matches!(KLNoise::new(vec![0.0; 4], 1), Err(Error::InvalidSpec(_))));
        assert!(matches!(KLNoise::new(vec![], 1), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn ou_limit() {
        assert_eq!(ou_variance_oracle(1.0, 1.0, 0.0), 0.0);
        assert!((ou_variance_oracle(2.0, 3.0, 10.0) - 9.0 / 4.0).abs() < 1e-8);
    }
}
