//! Euler alignment dynamics with topological communication protocols in one
//! dimension.
//!
//! The velocity in mass coordinates `v(m, t)` obeys an autonomous nonlocal
//! equation `∂ₜv = −Lv` on `(0, 1)`, and the cumulative mass `M(x, t)` is the
//! entropy solution of `∂ₜM + ∂ₓA(M, t) = 0` with `A(m, t) = ∫₀ᵐ v`. The
//! crate solves both halves, provides a Lagrangian flow-map integrator for
//! regular protocols, and the diagnostics that compare the pipelines.

pub mod analysis;
pub mod error;
pub mod io;
pub mod kernels;
pub mod lagrangian;
pub mod m_solver;
pub mod mass_coords;
pub mod quadrature;
pub mod v_solver;

pub use error::{Error, Result};
pub use kernels::{Kernel, KernelConstants, KernelFamily, KernelKind, Singularity};
pub use mass_coords::{FluxTable, MassProfile};
pub use v_solver::{BoundaryCondition, BoundedOperator, SpectralOperator, VelocityGrid};
