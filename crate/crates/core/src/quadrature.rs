//! Volterra convolutions on uniform grids: trapezoid for deterministic
//! memory terms, left-point (Itô) sums for stochastic ones, and exact
//! discrete checks of the two convolution-swap identities.

use std::ops::{Add, Mul};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{KernelAction, Vec2};

/// Values a kernel can act on.
pub trait Sample: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync {}
impl Sample for f64 {}
impl Sample for Vec2 {}

fn check_len(what: &str, len: usize, n: usize) -> Result<()> {
    if len <= n {
        return Err(Error::GridMismatch(format!(
            "{what} has {len} samples, step {n} requested"
        )));
    }
    Ok(())
}

/// Trapezoid value of `∫₀^{t_n} K(t_n − s) f(s) ds`.
pub fn convolve<K, V>(k: &[K], f: &[V], n: usize, dt: f64) -> Result<V>
where
    K: KernelAction<V>,
    V: Sample,
{
    check_len("kernel", k.len(), n)?;
    check_len("integrand", f.len(), n)?;
    if n == 0 {
        return Ok(V::default());
    }
    let mut acc = V::default();
    for j in 0..=n {
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        acc = acc + k[n - j].apply(&f[j]) * (w * dt);
    }
    Ok(acc)
}

/// `convolve` at every grid point, evaluated in parallel.
pub fn convolve_all<K, V>(k: &[K], f: &[V], dt: f64) -> Result<Vec<V>>
where
    K: KernelAction<V> + Sync,
    V: Sample,
{
    let n = f.len().min(k.len());
    (0..n).into_par_iter().map(|i| convolve(k, f, i, dt)).collect()
}

/// Left-point sum `Σ_{k<n} K(t_n − t_k) g(t_k) ΔW_k`.
pub fn stoch_convolve<K, V>(k: &[K], g: &[V], dw: &[f64], n: usize) -> Result<V>
where
    K: KernelAction<V>,
    V: Sample,
{
    check_len("kernel", k.len(), n)?;
    if n > 0 {
        check_len("gain", g.len(), n - 1)?;
        check_len("increments", dw.len(), n - 1)?;
    }
    let mut acc = V::default();
    for j in 0..n {
        acc = acc + k[n - j].apply(&(g[j] * dw[j]));
    }
    Ok(acc)
}

/// History of samples with a fixed kernel; `value()` is the trapezoid
/// convolution at the latest sample.
#[derive(Clone, Debug)]
pub struct ConvolutionBuffer<K, V> {
    kernel: Vec<K>,
    history: Vec<V>,
    dt: f64,
}

impl<K: KernelAction<V>, V: Sample> ConvolutionBuffer<K, V> {
    pub fn new(kernel: Vec<K>, dt: f64) -> Self {
        ConvolutionBuffer {
            kernel,
            history: Vec::new(),
            dt,
        }
    }

    pub fn push(&mut self, v: V) -> Result<()> {
        if self.history.len() >= self.kernel.len() {
            return Err(Error::KernelHorizonExceeded {
                t: self.history.len() as f64 * self.dt,
                horizon: (self.kernel.len() - 1) as f64 * self.dt,
            });
        }
        self.history.push(v);
        Ok(())
    }

    /// Current step index; the history holds `index + 1` samples.
    pub fn index(&self) -> Option<usize> {
        self.history.len().checked_sub(1)
    }

    pub fn history(&self) -> &[V] {
        &self.history
    }

    pub fn value(&self) -> Result<V> {
        match self.index() {
            None => Ok(V::default()),
            Some(n) => convolve(&self.kernel, &self.history, n, self.dt),
        }
    }
}

/// Outcome of a discrete identity check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResidual {
    /// Largest absolute difference between the two sides over all `n`.
    pub residual: f64,
    /// Largest sum of absolute terms, the natural rounding scale.
    pub scale: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual
        } else {
            self.residual / self.scale
        }
    }
}

/// Both orderings of `Σ_{r+s≤n} a_r b_s dt²`:
/// `Σ_s Σ_{r≤n−s} a_r b_s` against `Σ_s Σ_{r≤s} a_{s−r} b_r`.
pub fn fubini_check(a: &[f64], b: &[f64], dt: f64) -> Result<IdentityResidual> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let dt2 = dt * dt;
    let mut out = IdentityResidual {
        residual: 0.0,
        scale: 0.0,
    };
    for n in 0..a.len() {
        let (mut lhs, mut rhs, mut abs) = (0.0, 0.0, 0.0);
        for s in 0..=n {
            for r in 0..=(n - s) {
                lhs += a[r] * b[s] * dt2;
                abs += (a[r] * b[s] * dt2).abs();
            }
            for r in 0..=s {
                rhs += a[s - r] * b[r] * dt2;
            }
        }
        out.residual = out.residual.max((lhs - rhs).abs());
        out.scale = out.scale.max(abs);
    }
    Ok(out)
}

/// The stochastic swap with shared increments:
/// `Σ_{s<n} (Σ_{r≤n−1−s} a_r dt) g_s ΔW_s` against
/// `Σ_{m=1}^{n} dt Σ_{s<m} a_{m−1−s} g_s ΔW_s`.
pub fn stoch_fubini_check(a: &[f64], g: &[f64], dw: &[f64], dt: f64) -> Result<IdentityResidual> {
    if a.len() != g.len() || g.len() != dw.len() {
        return Err(Error::GridMismatch(format!(
            "{} / {} / {} samples",
            a.len(),
            g.len(),
            dw.len()
        )));
    }
    let mut out = IdentityResidual {
        residual: 0.0,
        scale: 0.0,
    };
    for n in 1..=a.len() {
        let (mut lhs, mut abs) = (0.0, 0.0);
        for s in 0..n {
            let inner: f64 = (0..n - s).map(|r| a[r] * dt).sum();
            lhs += inner * g[s] * dw[s];
            abs += (0..n - s).map(|r| (a[r] * dt * g[s] * dw[s]).abs()).sum::<f64>();
        }
        let mut rhs = 0.0;
        for m in 1..=n {
            let inner: f64 = (0..m).map(|s| a[m - 1 - s] * g[s] * dw[s]).sum();
            rhs += dt * inner;
        }
        out.residual = out.residual.max((lhs - rhs).abs());
        out.scale = out.scale.max(abs);
    }
    Ok(out)
}
