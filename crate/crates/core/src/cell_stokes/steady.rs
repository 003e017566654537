use nalgebra::{DMatrix, SymmetricEigen};

use super::operator::saddle_solve;
use super::{check_direction, CellField, CellProblem, HoleCondition};
use crate::error::{Error, Result};
use crate::linalg::{dot, DirectSolver, Mat2, Vec2};

impl CellProblem {
    fn steady(&self, i: usize) -> Result<CellField> {
        check_direction(i)?;
        let (u, p) = saddle_solve(self.cache(), &self.op, 0.0, 1.0, &self.bulk_load(Vec2::unit(i)))?;
        Ok(CellField {
            velocity: u,
            pressure: p,
            time: f64::INFINITY,
        })
    }

    /// Steady slip problem `A w + Bᵀq = e_i`, `B w = 0`.
    pub fn solve_steady_slip(&self, i: usize) -> Result<CellField> {
        if self.condition != HoleCondition::Slip {
            return Err(Error::InvalidArgument("problem was assembled with no-slip holes".into()));
        }
        if !self.has_hole() {
            return Err(Error::NoSteadyState);
        }
        self.steady(i)
    }

    /// `K_ij = ∫ (w_i^∞)_j` from the steady slip solves.
    pub fn steady_kernel(&self) -> Result<Mat2> {
        let w0 = self.solve_steady_slip(0)?;
        let w1 = self.solve_steady_slip(1)?;
        let a = self.integral(&w0.velocity);
        let b = self.integral(&w1.velocity);
        Ok(Mat2::new(a.x, a.y, b.x, b.y))
    }

    /// Steady no-slip Stokes solve; returns the field and the row `∫ (w_i)_j`.
    pub fn solve_steady_dirichlet(&self, i: usize) -> Result<(CellField, Vec2)> {
        if self.condition != HoleCondition::NoSlip {
            return Err(Error::InvalidArgument(
                "problem was not assembled with no-slip holes".into(),
            ));
        }
        let w = self.steady(i)?;
        let row = self.integral(&w.velocity);
        Ok((w, row))
    }

    /// The matrix `M_ij = ∫ (w_i)_j` of the no-slip cell problem.
    pub fn dirichlet_matrix(&self) -> Result<Mat2> {
        let (_, a) = self.solve_steady_dirichlet(0)?;
        let (_, b) = self.solve_steady_dirichlet(1)?;
        Ok(Mat2::new(a.x, a.y, b.x, b.y))
    }

    /// Smallest eigenvalue of the energy form relative to the H inner
    /// product on solenoidal fields, by inverse iteration.
    pub fn slowest_decay_rate(&self) -> Result<f64> {
        if !self.has_hole() {
            return Err(Error::NoSteadyState);
        }
        let n = self.n_velocity();
        let mut u: Vec<f64> = (0..n)
            .map(|k| (k as f64 * 0.754_877_666_246_692_8).fract() - 0.5)
            .collect();
        let mut mu = f64::INFINITY;
        for _ in 0..500 {
            let rhs = self.op.mass.matvec(&u);
            let (next, _) = saddle_solve(self.cache(), &self.op, 0.0, 1.0, &rhs)?;
            let norm = self.h_norm(&next);
            u = next.iter().map(|v| v / norm).collect();
            let rq = self.energy_form(&u, &u);
            let done = (rq - mu).abs() <= 1e-12 * rq.abs();
            mu = rq;
            if done {
                break;
            }
        }
        Ok(mu)
    }

    /// Discrete inf-sup constant: square root of the smallest non-zero
    /// generalised eigenvalue of `B X⁻¹ Bᵀ p = λ Q p`, with `X` the reduced
    /// H¹ product and `Q` the pressure mass. Dense in the pressure space, so
    /// intended for coarse meshes.
    pub fn inf_sup_constant(&self) -> Result<f64> {
        let x = self
            .space
            .reduce_vector(&self.op.blocks.stiffness.add_scaled(1.0, &self.op.blocks.mass_bulk));
        let solver = DirectSolver::new(x)?;
        let np = self.n_pressure();
        let bt_cols: Vec<Vec<f64>> = (0..np)
            .map(|k| {
                let mut e = vec![0.0; np];
                e[k] = 1.0;
                self.op.div.matvec_transpose(&e)
            })
            .collect();
        let mut s = DMatrix::<f64>::zeros(np, np);
        for k in 0..np {
            let y = solver.solve(&bt_cols[k])?;
            for (l, col) in bt_cols.iter().enumerate() {
                s[(l, k)] = dot(col, &y);
            }
        }
        let mut q = DMatrix::<f64>::zeros(np, np);
        for (i, j, v) in self.op.pressure_mass.triplets() {
            q[(i, j)] = v;
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::SolveFailure("pressure mass is not positive definite".into()))?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::SolveFailure("pressure mass factor is singular".into()))?;
        let c = &l_inv * &s * l_inv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c).eigenvalues;
        let top = eig.iter().fold(0.0_f64, |a, v| a.max(*v));
        let smallest = eig
            .iter()
            .copied()
            .filter(|v| *v > 1e-10 * top)
            .fold(f64::INFINITY, f64::min);
        Ok(smallest.sqrt())
    }
}
