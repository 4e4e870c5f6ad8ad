//! Limit shapes of restricted Mallows permutations, equivalently of the
//! six-vertex model in the rare-corners regime.
//!
//! The crate computes the limiting permuton density `g(x, y)` and height
//! function `h(x, y)` for rectilinear domains described by breakpoints and a
//! 0/1 support array, verifies the results against the structural identities
//! any maximizer must satisfy, and cross-checks them with a desk-scale
//! Metropolis sampler of the underlying permutation ensembles.

pub mod boundary;
pub mod density;
pub mod error;
mod flow;
pub mod ipf;
pub mod oracles;
pub mod proj;
pub mod quad;
pub mod region;
pub mod sampler;
pub mod verify;

pub use boundary::BoundaryValues;
pub use density::{DensityField, DensityGrid, RectCoeffs};
pub use error::{Error, Result};
pub use ipf::ScalingSolution;
pub use proj::{Moebius, ProjectiveValue};
pub use region::{FeasibleMasses, RegionConfig, RegionSpec, SupportGrid};
pub use sampler::{PermutationSample, SixVertexGrid};
