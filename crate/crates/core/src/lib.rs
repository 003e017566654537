//! Numerical homogenization of slip flow through periodically perforated
//! media with dynamic boundary conditions and boundary noise.
//!
//! The pipeline: build the unit cell ([`cell_geometry`]), solve the cell
//! evolution problems ([`cell_stokes`]), extract permeability kernels
//! ([`kernels`]), sample noise and the stochastic cell problem
//! ([`boundary_noise`]), integrate Darcy's law with memory on the macro
//! domain ([`darcy_macro`]) and compare with direct fine-scale simulation
//! ([`micro_sim`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell_geometry;
pub mod boundary_noise;
pub mod cell_stokes;
pub mod cli_io;
pub mod darcy_macro;
pub mod error;
pub mod fem;
pub mod kernels;
pub mod linalg;
pub mod micro_sim;
pub mod quadrature;

pub use error::{Error, Result};
