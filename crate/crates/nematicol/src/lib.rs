//! Numerical laboratory for nematic director fields around a colloid particle.
//!
//! The library minimizes the one-constant Frank energy
//!
//!   E(n) = ∫_{Ω} |∇n|² dx + F_s(n|_∂G),   Ω = B_{R_out} \ G,   n: Ω → S²,
//!
//! for director fields outside a star-shaped particle G, with hard or weak
//! surface anchoring and a prescribed far-field direction n₀. From a computed
//! minimizer it extracts the far-field multipole expansion
//!
//!   n(x) ≈ n₀ + v₀/r + Σ_j p_j ∂_j(1/r) + Σ_{kℓ} c_{·kℓ} ∂_k∂_ℓ(1/r) + n_corr(x),
//!
//! and verifies structural identities numerically: the torque identity
//! ∇Ê(n₀) = −8π v₀ relating the gradient of the energy landscape over far-field
//! directions to the monopole coefficient, the vanishing of v₀ at local minima
//! and for symmetric particles, and semiconcavity of the landscape.
//!
//! Module layout mirrors the pipeline:
//!
//! * [`sphgrid`]: Gauss–Legendre × uniform-φ quadrature on S² and real
//!   spherical-harmonic analysis/synthesis.
//! * [`exterior`]: star-shaped exterior grids, metric-aware finite-difference
//!   stencils, volume and surface quadrature.
//! * [`fields`]: director fields, Dirichlet energy, exact discrete energy
//!   gradients, harmonic-map residual.
//! * [`anchoring`]: surface energy models and boundary data.
//! * [`minimizer`]: projected gradient descent on the sphere-valued constraint.
//! * [`expansion`]: far-field coefficient extraction and evaluation.
//! * [`torque`]: energy landscapes over n₀, finite-difference torque checks,
//!   corollary reports.
//! * [`poisson_decay`]: radial mode solver for the exterior Poisson equation
//!   with power-law decay certificates.

pub mod anchoring;
pub mod expansion;
pub mod exterior;
pub mod fields;
pub mod minimizer;
pub mod poisson_decay;
pub mod sphgrid;
pub mod torque;
pub mod vec3;

pub use anchoring::{boundary_data, AnchoringPattern, SurfaceEnergy};
pub use expansion::{
    evaluate_expansion, extract_expansion, remainder_slope, CorrectionModel, FarFieldExpansion,
};
pub use exterior::{build_grid, fmt_g17, gradient_weights, ExteriorGrid, ParticleShape};
pub use fields::DirectorField;
pub use minimizer::{solve_director, InitStrategy, OuterBc, SolveConfig, SolveReport};
pub use poisson_decay::{
    mode_classification, solve_exterior_poisson, solve_mode, verify_decay, DecayCertificate,
    PoissonMode, RadialGrid,
};
pub use sphgrid::{build_angular_grid, sh_analyze, sh_synthesize, AngularGrid};
pub use torque::{
    corollary_report, spherical_gradient, sweep_energy_landscape, torque_identity_check,
    EnergyLandscape, SamplingScheme, SweepConfig, TorqueReport,
};
pub use vec3::Vec3;
