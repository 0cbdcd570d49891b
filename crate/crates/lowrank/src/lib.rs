//! First-order optimization over matrices of bounded rank.
//!
//! The feasible set is the variety of m×n matrices with rank at most `r`.
//! It is closed but not smooth: at points of rank exactly `r` it looks like
//! a manifold, while at points of lower rank the tangent cone gains extra
//! directions that let the rank grow, and plain projected-gradient methods
//! can converge to points of low rank that are not stationary at all. The
//! crate implements descent methods built around that geometry:
//!
//! * [`factored`]: the thin-SVD representation every iterate lives in, plus
//!   the numerical-rank policy shared by all decompositions.
//! * [`cones`]: projections onto the tangent cone of the variety and onto a
//!   restricted subcone whose projections can be followed without any
//!   retraction, plus the stationarity measure the solvers drive to zero.
//! * [`maps`]: dense reference implementations of the step maps, readable
//!   and deliberately unoptimized: a retraction-free descent step, a
//!   projected-gradient step, and rank-reduction safeguards for both.
//! * [`detailed`]: factored-form implementations of the same maps whose
//!   decompositions stay at the scale of the rank bound, with operation
//!   counters that make the cost comparison concrete.
//! * [`problems`]: objective builders and seeded instance generators,
//!   including a stall instance where the unsafeguarded method slows to a
//!   crawl near a non-stationary limit while the safeguarded one escapes.
//!
//! Everything is generic over the scalar through [`Scalar`]; `f64` is the
//! default in all binaries and `f32` works for storage-constrained runs.

use nalgebra::RealField;

pub mod checks;
pub mod cones;
pub mod detailed;
pub mod driver;
pub mod error;
pub mod factored;
pub mod io;
pub mod linalg;
pub mod maps;
pub mod problems;

pub use detailed::{DetailedOutcome, OpCounter};
pub use factored::{FactoredMatrix, RankPolicy};
pub use maps::{LineSearchParams, StepReport};

/// Scalar type used throughout the crate: a real field with value semantics.
///
/// Blanket-implemented for every `nalgebra::RealField + Copy` type, in
/// particular `f64` and `f32`.
pub trait Scalar: RealField + Copy {}
impl<T: RealField + Copy> Scalar for T {}

/// Double-precision aliases for the core types.
pub type FactoredMatrixF64 = FactoredMatrix<f64>;
pub type RankPolicyF64 = RankPolicy<f64>;
pub type LineSearchParamsF64 = LineSearchParams<f64>;

/// Single-precision aliases for the core types.
pub type FactoredMatrixF32 = FactoredMatrix<f32>;
pub type RankPolicyF32 = RankPolicy<f32>;
pub type LineSearchParamsF32 = LineSearchParams<f32>;

pub(crate) fn conv<T: Scalar>(x: f64) -> T {
    nalgebra::convert(x)
}

pub(crate) fn to_f64<T: Scalar>(x: T) -> f64 {
    nalgebra::try_convert(x).unwrap_or(f64::NAN)
}
