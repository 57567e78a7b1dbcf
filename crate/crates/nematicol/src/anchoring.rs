//! Surface anchoring models on the particle boundary.
//!
//! Hard (Dirichlet) anchoring pins the director to the boundary data n_D and
//! contributes no finite energy; mismatched hard anchoring is reported with a
//! distinguished infinite value rather than a float overflow. Weak anchoring
//! is the Rapini–Papoular-type quadratic W ∫_∂G |n − n_D|² dA over the true
//! particle surface (area element ρ√(ρ² + |∇_ω ρ|²) dΩ). Custom models carry
//! a closure for the density and optionally its ∂/∂n derivative.

use crate::exterior::ExteriorGrid;
use crate::vec3::{self, Vec3};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnchoringError {
    #[error("anchor direction at boundary node {node} has |n_D| = {norm}, must be unit within 1e-12")]
    NonUnitAnchor { node: usize, norm: f64 },
    #[error("boundary director at node {node} has |n| = {norm}, not unit")]
    NonUnitDirector { node: usize, norm: f64 },
    #[error("anchoring strength must be nonnegative, got {0}")]
    NegativeStrength(f64),
    #[error("custom surface model provides no derivative; gradient unsupported")]
    MissingDerivative,
    #[error("boundary field has {got} values, boundary has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
    #[error("tilt axis must not be zero")]
    DegenerateTiltAxis,
}

/// Surface energy model F_s.
#[derive(Clone)]
pub enum SurfaceEnergy {
    /// Hard anchoring to n_D: zero energy when matched, infinite otherwise.
    Dirichlet { n_d: Vec<Vec3> },
    /// Weak anchoring W ∫ |n − n_D|² dA.
    Weak { w: f64, n_d: Vec<Vec3> },
    /// Custom density g(n, x) ≥ 0 with optional derivative ∂g/∂n.
    Custom {
        g: Arc<dyn Fn(Vec3, Vec3) -> f64 + Send + Sync>,
        dg: Option<Arc<dyn Fn(Vec3, Vec3) -> Vec3 + Send + Sync>>,
    },
}

impl std::fmt::Debug for SurfaceEnergy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Dirichlet { n_d } => write!(f, "Dirichlet {{ {} nodes }}", n_d.len()),
            Self::Weak { w, n_d } => write!(f, "Weak {{ w: {w}, {} nodes }}", n_d.len()),
            Self::Custom { dg, .. } => {
                write!(f, "Custom {{ derivative: {} }}", dg.is_some())
            }
        }
    }
}

fn validate_unit(field: &[Vec3], tol: f64) -> Result<(), (usize, f64)> {
    for (q, v) in field.iter().enumerate() {
        let n = vec3::norm(*v);
        if (n - 1.0).abs() > tol {
            return Err((q, n));
        }
    }
    Ok(())
}

impl SurfaceEnergy {
    pub fn dirichlet(n_d: Vec<Vec3>) -> Result<Self, AnchoringError> {
        validate_unit(&n_d, 1e-12)
            .map_err(|(node, norm)| AnchoringError::NonUnitAnchor { node, norm })?;
        Ok(Self::Dirichlet { n_d })
    }

    pub fn weak(w: f64, n_d: Vec<Vec3>) -> Result<Self, AnchoringError> {
        if w < 0.0 {
            return Err(AnchoringError::NegativeStrength(w));
        }
        validate_unit(&n_d, 1e-12)
            .map_err(|(node, norm)| AnchoringError::NonUnitAnchor { node, norm })?;
        Ok(Self::Weak { w, n_d })
    }

    /// Hard anchoring pins the boundary layer in the minimizer.
    pub fn is_hard(&self) -> bool {
        matches!(self, Self::Dirichlet { .. })
    }
}

/// Surface energy value; `Infinite` flags violated hard anchoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceEnergyValue {
    Finite(f64),
    Infinite,
}

impl SurfaceEnergyValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinite => None,
        }
    }
}

fn check_boundary_field(grid: &ExteriorGrid, n_b: &[Vec3]) -> Result<(), AnchoringError> {
    if n_b.len() != grid.shell_len() {
        return Err(AnchoringError::LengthMismatch {
            got: n_b.len(),
            expected: grid.shell_len(),
        });
    }
    validate_unit(n_b, 1e-8).map_err(|(node, norm)| AnchoringError::NonUnitDirector { node, norm })
}

/// Evaluate F_s on boundary values n_b (one per angular node, the s = 0 layer).
pub fn surface_energy_eval(
    grid: &ExteriorGrid,
    fs: &SurfaceEnergy,
    n_b: &[Vec3],
) -> Result<SurfaceEnergyValue, AnchoringError> {
    check_boundary_field(grid, n_b)?;
    match fs {
        SurfaceEnergy::Dirichlet { n_d } => {
            let matched = n_b
                .iter()
                .zip(n_d)
                .all(|(n, d)| vec3::norm(vec3::sub(*n, *d)) <= 1e-10);
            Ok(if matched {
                SurfaceEnergyValue::Finite(0.0)
            } else {
                SurfaceEnergyValue::Infinite
            })
        }
        SurfaceEnergy::Weak { w, n_d } => {
            let total = vec3::compensated_sum(
                (0..n_b.len()).map(|q| grid.surf_w[q] * vec3::norm2(vec3::sub(n_b[q], n_d[q]))),
            );
            Ok(SurfaceEnergyValue::Finite(w * total))
        }
        SurfaceEnergy::Custom { g, .. } => {
            let total = vec3::compensated_sum(
                (0..n_b.len()).map(|q| grid.surf_w[q] * g(n_b[q], grid.pos[q])),
            );
            Ok(SurfaceEnergyValue::Finite(total))
        }
    }
}

/// Exact gradient of the discrete surface quadrature with respect to the
/// boundary values, tangent-projected at each node. Dirichlet anchoring pins
/// its nodes, so its gradient is identically zero.
pub fn surface_energy_gradient(
    grid: &ExteriorGrid,
    fs: &SurfaceEnergy,
    n_b: &[Vec3],
) -> Result<Vec<Vec3>, AnchoringError> {
    check_boundary_field(grid, n_b)?;
    let mut out = vec![vec3::ZERO; n_b.len()];
    match fs {
        SurfaceEnergy::Dirichlet { .. } => {}
        SurfaceEnergy::Weak { w, n_d } => {
            for q in 0..n_b.len() {
                let raw = vec3::scale(vec3::sub(n_b[q], n_d[q]), 2.0 * w * grid.surf_w[q]);
                out[q] = vec3::reject(raw, n_b[q]);
            }
        }
        SurfaceEnergy::Custom { dg, g: _ } => {
            let dg = dg.as_ref().ok_or(AnchoringError::MissingDerivative)?;
            for q in 0..n_b.len() {
                let raw = vec3::scale(dg(n_b[q], grid.pos[q]), grid.surf_w[q]);
                out[q] = vec3::reject(raw, n_b[q]);
            }
        }
    }
    Ok(out)
}

/// Preferred boundary alignment patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchoringPattern {
    /// n_D = outward surface normal.
    Homeotropic,
    /// Constant direction m (unit).
    Uniform(Vec3),
    /// Normal tilted by `angle` (radians) about axis × ν; where the tilt axis
    /// is parallel to ν the normal is kept (the tilt direction degenerates).
    Tilted { angle: f64, axis: Vec3 },
}

/// Boundary data n_D per angular node for a pattern on the given particle.
pub fn boundary_data(
    pattern: AnchoringPattern,
    grid: &ExteriorGrid,
) -> Result<Vec<Vec3>, AnchoringError> {
    match pattern {
        AnchoringPattern::Homeotropic => Ok(grid.normal.clone()),
        AnchoringPattern::Uniform(m) => {
            let norm = vec3::norm(m);
            if (norm - 1.0).abs() > 1e-12 {
                return Err(AnchoringError::NonUnitAnchor { node: 0, norm });
            }
            Ok(vec![m; grid.shell_len()])
        }
        AnchoringPattern::Tilted { angle, axis } => {
            let axis = vec3::normalize(axis).ok_or(AnchoringError::DegenerateTiltAxis)?;
            Ok(grid
                .normal
                .iter()
                .map(|&nu| match vec3::normalize(vec3::cross(axis, nu)) {
                    Some(t) => vec3::rotate_about(nu, t, angle),
                    None => nu,
                })
                .collect())
        }
    }
}
