//! Numerical laboratory for evolutionary phi-Laplacian systems with
//! Orlicz-type growth.
//!
//! The crate provides, bottom up:
//!
//! * [`nfunction`]: the N-function calculus. Prototype potentials,
//!   conjugation, shifted N-functions, square roots, and sampled growth
//!   constants (doubling constant, Boyd indices, `t phi''/phi'` bounds);
//! * [`tensors`]: symmetric-matrix algebra, the radial growth tensors and
//!   their square-root companions, and the monotonicity-equivalence
//!   evaluators;
//! * [`fields`]: vector fields on a uniform periodic space grid times a
//!   uniform time grid, difference/averaging operators, parabolic cylinders,
//!   and smooth cutoff pairs with certified discrete derivative bounds;
//! * [`solver`]: implicit Euler stepping for `u_t - div A(Du) = f`
//!   (symmetric gradient) and `u_t - div A(grad u) = f` (full gradient) with
//!   damped Picard iterations and manufactured-solution support;
//! * [`auditor`]: evaluates both sides of the interior second-order energy
//!   estimates on solved trajectories, the modular Korn inequality, and the
//!   uniformity sweep over regularization parameters.

pub mod auditor;
pub mod error;
pub mod fields;
pub mod nfunction;
pub mod numeric;
pub mod solver;
pub mod tensors;

pub use error::{Error, Result};
