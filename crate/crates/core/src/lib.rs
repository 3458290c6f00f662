//! Galerkin P1 discretization of the mixed local-nonlocal eigenproblem
//!
//! ```text
//! −u'' + (−Δ)^s u = λ u   in Ω
//! u = 0                   in 𝒟
//! 𝒩_s u = 0               in 𝒩
//! ∂u/∂ν = 0               on ∂Ω ∩ 𝒩̄
//! ```
//!
//! on the real line, together with a harness that checks the spectral
//! properties of the resulting pencil numerically.
//!
//! The pipeline is `domain` → `assembly` (using `kernel` and `quadrature`) →
//! `solve` → `verify`.

// Index loops mirror the formulas; negated comparisons reject NaN on purpose.
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments
)]

pub mod assembly;
pub mod domain;
pub mod kernel;
pub mod quadrature;
pub mod solve;
pub mod verify;

pub use assembly::{assemble_forms, Forms, Toggles};
pub use domain::{build_mesh, validate_region, Mesh, RegionSpec, ValidatedRegion};
pub use kernel::{KernelParams, Normalization};
pub use quadrature::{Quadrature, QuadratureConfig};
pub use solve::{solve_dense, solve_minmax, Spectrum};
