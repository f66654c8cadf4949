//! Dynamic optimal transport and mean-field planning under a time-fractional
//! (Caputo) transport constraint.
//!
//! The density lives at cell centres, the fluxes on interior cell faces, and
//! the time derivative is the L1 quadrature of order `alpha` in `(0, 1]`.
//! The saddle-point problem is solved with a preconditioned primal-dual
//! hybrid gradient method whose dual step inverts `K K^T` exactly.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases fix the scalar to `f64`.

pub mod energy;
pub mod error;
pub mod fracops;
pub mod grid;
pub mod krylov;
pub mod pdhg;
pub mod pgm;
pub mod presets;
pub mod problems;
pub mod scalar;
pub mod spaceops;
pub mod spectral;
pub mod study;
pub mod validation;

pub use energy::{InteractionSpec, KktResiduals, Regularizer, DENSITY_FLOOR};
pub use error::{Error, Result};
pub use fracops::FractionalKernel;
pub use grid::{Extents, FieldKind, FieldSet, GridSpec};
pub use pdhg::{solve, DensityStep, FluxInit, SolveReport, Solver, SolverConfig, StopReason};
pub use problems::ProblemSpec;
pub use scalar::Real;
pub use spaceops::ConstraintOperator;

pub type GridSpec64 = GridSpec<f64>;
pub type FieldSet64 = FieldSet<f64>;
pub type FractionalKernel64 = FractionalKernel<f64>;
pub type ConstraintOperator64 = ConstraintOperator<f64>;
pub type ProblemSpec64 = ProblemSpec<f64>;
pub type InteractionSpec64 = InteractionSpec<f64>;
pub type Solver64 = Solver<f64>;
