use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::space::{DiscreteSpace, FullBlocks};
use crate::error::{Error, Result};
use crate::linalg::{norm2, saddle_matrix, Csr, DirectSolver};

/// Weights of the bilinear forms on the reduced space:
/// mass = bulk + `boundary_mass`·boundary, energy = `viscosity`·K + `robin`·R.
#[derive(Clone, Copy, Debug)]
pub struct FormWeights {
    pub boundary_mass: f64,
    pub viscosity: f64,
    pub robin: f64,
}

/// Reduced matrices of the constrained evolution problem.
#[derive(Clone, Debug)]
pub struct CellOperator {
    pub mass: Csr,
    pub mass_bulk: Csr,
    pub mass_bdry: Csr,
    /// Viscous part `ν K` (already weighted).
    pub stiffness: Csr,
    /// Robin part `∫ α u·φ` (already weighted).
    pub robin: Csr,
    pub energy: Csr,
    /// Reduced divergence `B T`.
    pub div: Csr,
    pub gauge: Vec<f64>,
    pub pressure_mass: Csr,
    pub weights: FormWeights,
    pub alpha_min: f64,
    pub blocks: FullBlocks,
}

impl CellOperator {
    pub fn from_blocks(space: &DiscreteSpace, blocks: FullBlocks, weights: FormWeights) -> Self {
        let mass_bulk = space.reduce_vector(&blocks.mass_bulk);
        let mass_bdry = space
            .reduce_vector(&blocks.mass_bdry)
            .scaled(weights.boundary_mass);
        let stiffness = space.reduce_vector(&blocks.stiffness).scaled(weights.viscosity);
        let robin = space.reduce_vector(&blocks.robin).scaled(weights.robin);
        let mass = mass_bulk.add_scaled(1.0, &mass_bdry);
        let energy = stiffness.add_scaled(1.0, &robin);
        let div = space.reduce_columns(&blocks.div);
        CellOperator {
            mass,
            mass_bulk,
            mass_bdry,
            stiffness,
            robin,
            energy,
            div,
            gauge: blocks.p1_integrals.clone(),
            pressure_mass: blocks.pressure_mass.clone(),
            weights,
            alpha_min: blocks.alpha_min,
            blocks,
        }
    }

    pub fn n_velocity(&self) -> usize {
        self.mass.n_rows
    }

    pub fn n_pressure(&self) -> usize {
        self.div.n_rows
    }

    /// `‖B u‖ / (max|B| ‖u‖)`.
    pub fn divergence_defect(&self, u: &[f64]) -> f64 {
        let un = norm2(u);
        if un == 0.0 {
            return 0.0;
        }
        norm2(&self.div.matvec(u)) / (self.div.max_abs() * un)
    }

    /// Zero-mean pressure (with respect to the P1 integrals).
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        let area: f64 = self.gauge.iter().sum();
        self.gauge.iter().zip(p).map(|(w, v)| w * v).sum::<f64>() / area
    }
}

/// Factorisations of `a·M + b·A` saddle systems keyed by `(a, b)`.
#[derive(Default)]
pub struct SolverCache {
    map: Mutex<HashMap<(u64, u64), Arc<DirectSolver>>>,
}

impl std::fmt::Debug for SolverCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.map.lock().map(|m| m.len()).unwrap_or(0);
        write!(f, "SolverCache({n} factorisations)")
    }
}

impl SolverCache {
    pub fn get(&self, op: &CellOperator, a: f64, b: f64) -> Result<Arc<DirectSolver>> {
        let key = (a.to_bits(), b.to_bits());
        let mut map = self
            .map
            .lock()
            .map_err(|_| Error::SolveFailure("solver cache poisoned".into()))?;
        if let Some(s) = map.get(&key) {
            return Ok(s.clone());
        }
        let block = op.mass.scaled(a).add_scaled(b, &op.energy);
        let mat = saddle_matrix(&block, &op.div, Some(&op.gauge));
        let solver = Arc::new(DirectSolver::new(mat)?);
        map.insert(key, solver.clone());
        Ok(solver)
    }

    pub fn len(&self) -> usize {
        self.map.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Solve `[aM + bA, Bᵀ; B, 0] (u, p) = (f, 0)` with the zero-mean gauge.
pub fn saddle_solve(
    cache: &SolverCache,
    op: &CellOperator,
    a: f64,
    b: f64,
    f: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let solver = cache.get(op, a, b)?;
    let nu = op.n_velocity();
    let np = op.n_pressure();
    let mut rhs = vec![0.0; nu + np + 1];
    rhs[..nu].copy_from_slice(f);
    let x = solver.solve(&rhs)?;
    Ok((x[..nu].to_vec(), x[nu..nu + np].to_vec()))
}
