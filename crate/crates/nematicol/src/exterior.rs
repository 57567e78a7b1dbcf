//! Exterior grids for star-shaped particles and metric-aware differencing.
//!
//! The computational domain is B_{R_out} \ G for a particle G given by a
//! positive boundary radius ρ(ω). Coordinates (s, θ, φ) with s ∈ [0,1] map to
//!
//!   x(s, ω) = r(s, ω)·ω,   r(s, ω) = ρ(ω)^{1−s} · R_out^s,
//!
//! geometric in radius, so shells compress near the particle where gradients
//! are largest. Node ordering is φ fastest, then θ, then s.
//!
//! Differentiation uses second-order stencils per coordinate direction
//! (central in s and φ, nonuniform 3-point Lagrange in θ, one-sided at the
//! s and θ ends, periodic in φ), composed with the inverse of the *discrete*
//! Jacobian — the same stencils applied to the coordinate map. Composing with
//! the discrete rather than analytic Jacobian makes the gradient of any
//! globally linear function exact up to inversion roundoff, and stencils are
//! written in subtract-center form u = Σ c_j (f_j − f_q) so constants map to
//! exactly zero.

use crate::sphgrid::AngularGrid;
use crate::vec3::{self, Vec3};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("outer radius {r_out} must exceed twice the particle's maximal radius {rho_max}")]
    OuterRadiusTooSmall { r_out: f64, rho_max: f64 },
    #[error("n_s must be at least 8, got {0}")]
    TooFewShells(usize),
    #[error("angular grid must have n_theta >= 3 for radial-shell stencils, got {0}")]
    TooFewTheta(usize),
    #[error("boundary radius must be positive, got {rho} at angular node {node}")]
    NonPositiveRho { node: usize, rho: f64 },
    #[error("declared symmetry axis violated: |rho(R omega) - rho(omega)| = {dev:.3e} at angular node {node}")]
    AxisSymmetryViolated { node: usize, dev: f64 },
}

/// Rotational symmetry a particle declares; sweeps and reports exploit it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSymmetry {
    /// Invariant under every rotation (sphere).
    Full,
    /// Invariant under rotations about the given unit axis.
    Axis(Vec3),
    None,
}

/// Boundary radius function of a star-shaped particle.
#[derive(Clone)]
pub enum ParticleShape {
    /// Unit sphere, ρ ≡ 1.
    Sphere,
    /// Semi-axes (a, a, b), with b along `axis` (unit).
    Spheroid { a: f64, b: f64, axis: Vec3 },
    /// General star-shaped boundary ρ(θ, φ) > 0; derivatives are taken by
    /// fourth-order finite differences of the closure.
    Star {
        rho: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        axis: Option<Vec3>,
    },
}

impl fmt::Debug for ParticleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sphere => write!(f, "Sphere"),
            Self::Spheroid { a, b, axis } => {
                write!(f, "Spheroid {{ a: {a}, b: {b}, axis: {axis:?} }}")
            }
            Self::Star { axis, .. } => write!(f, "Star {{ axis: {axis:?} }}"),
        }
    }
}

impl ParticleShape {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Spheroid { .. } => "spheroid",
            Self::Star { .. } => "star",
        }
    }

    pub fn symmetry(&self) -> ShapeSymmetry {
        match self {
            Self::Sphere => ShapeSymmetry::Full,
            Self::Spheroid { a, b, axis } => {
                if a == b {
                    ShapeSymmetry::Full
                } else {
                    ShapeSymmetry::Axis(*axis)
                }
            }
            Self::Star { axis, .. } => match axis {
                Some(u) => ShapeSymmetry::Axis(*u),
                None => ShapeSymmetry::None,
            },
        }
    }

    /// Boundary radius at direction (θ, φ).
    pub fn rho(&self, theta: f64, phi: f64) -> f64 {
        match self {
            Self::Sphere => 1.0,
            Self::Spheroid { a, b, axis } => {
                let mu = vec3::dot(unit_dir(theta, phi), *axis);
                1.0 / ((1.0 - mu * mu) / (a * a) + mu * mu / (b * b)).sqrt()
            }
            Self::Star { rho, .. } => rho(theta, phi),
        }
    }

    /// (ρ, ∂ρ/∂θ, ∂ρ/∂φ); analytic for sphere and spheroid.
    pub fn rho_derivs(&self, theta: f64, phi: f64) -> (f64, f64, f64) {
        match self {
            Self::Sphere => (1.0, 0.0, 0.0),
            Self::Spheroid { a, b, axis } => {
                let omega = unit_dir(theta, phi);
                let e_theta = theta_dir(theta, phi);
                let e_phi = phi_dir(phi);
                let mu = vec3::dot(omega, *axis);
                let rho = 1.0 / ((1.0 - mu * mu) / (a * a) + mu * mu / (b * b)).sqrt();
                let drho_dmu = rho * rho * rho * mu * (1.0 / (a * a) - 1.0 / (b * b));
                (
                    rho,
                    drho_dmu * vec3::dot(e_theta, *axis),
                    drho_dmu * theta.sin() * vec3::dot(e_phi, *axis),
                )
            }
            Self::Star { rho, .. } => {
                let h = 1e-4;
                let d = |f: &dyn Fn(f64) -> f64| {
                    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
                };
                (
                    rho(theta, phi),
                    d(&|e| rho(theta + e, phi)),
                    d(&|e| rho(theta, phi + e)),
                )
            }
        }
    }

    /// Upper bound for ρ; analytic where the shape allows it.
    pub fn rho_max(&self, angular: &AngularGrid) -> f64 {
        match self {
            Self::Sphere => 1.0,
            Self::Spheroid { a, b, .. } => a.max(*b),
            Self::Star { .. } => {
                let mut m: f64 = 0.0;
                for &(t, p) in &angular.nodes {
                    m = m.max(self.rho(t, p));
                }
                m
            }
        }
    }
}

#[inline]
pub fn unit_dir(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

#[inline]
fn theta_dir(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [ct * cp, ct * sp, -st]
}

#[inline]
fn phi_dir(phi: f64) -> Vec3 {
    let (sp, cp) = phi.sin_cos();
    [-sp, cp, 0.0]
}

/// Exterior grid with mapping, quadrature weights, and surface geometry.
#[derive(Debug, Clone)]
pub struct ExteriorGrid {
    pub shape: ParticleShape,
    pub angular: AngularGrid,
    pub n_s: usize,
    pub r_out: f64,
    pub rho_max: f64,
    /// Boundary radius per angular node.
    pub rho: Vec<f64>,
    /// Radius per node (flat index, φ fastest, then θ, then s).
    pub r: Vec<f64>,
    /// Cartesian position per node.
    pub pos: Vec<Vec3>,
    /// Volume quadrature weight per node; Σ ≈ |B_{R_out} \ G|.
    pub vol_w: Vec<f64>,
    /// Particle-surface area weight per angular node; Σ ≈ |∂G|.
    pub surf_w: Vec<f64>,
    /// Outward unit normal of the particle per angular node.
    pub normal: Vec<Vec3>,
    /// s-nodes, uniform on [0, 1].
    pub s: Vec<f64>,
}

impl ExteriorGrid {
    #[inline]
    pub fn node_count(&self) -> usize {
        self.n_s * self.angular.node_count()
    }

    /// Angular node count; also the size of one s-shell and of the boundary.
    #[inline]
    pub fn shell_len(&self) -> usize {
        self.angular.node_count()
    }

    #[inline]
    pub fn node_index(&self, i_s: usize, i_theta: usize, i_phi: usize) -> usize {
        (i_s * self.angular.n_theta + i_theta) * self.angular.n_phi + i_phi
    }

    /// Grid description sidecar, deterministic key order, 17 significant
    /// digits for floats.
    pub fn metadata_json(&self) -> String {
        let semi_axes = match &self.shape {
            ParticleShape::Sphere => [1.0, 1.0, 1.0],
            ParticleShape::Spheroid { a, b, .. } => [*a, *a, *b],
            ParticleShape::Star { .. } => [f64::NAN, f64::NAN, f64::NAN],
        };
        format!(
            "{{\"kind\":\"{}\",\"semi_axes\":[{},{},{}],\"n_s\":{},\"n_theta\":{},\"n_phi\":{},\"R_out\":{},\"ordering\":\"phi,theta,s\"}}",
            self.shape.kind_name(),
            fmt_g17(semi_axes[0]),
            fmt_g17(semi_axes[1]),
            fmt_g17(semi_axes[2]),
            self.n_s,
            self.angular.n_theta,
            self.angular.n_phi,
            fmt_g17(self.r_out),
        )
    }
}

/// Format with 17 significant digits; round-trips every f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Composite Simpson weights on n uniform nodes spanning [0, 1]; falls back
/// to Simpson 3/8 on the last three intervals when the interval count is odd.
/// Fourth order; trapezoid would miss the 0.1% shell-volume tolerance for the
/// exponential radial map.
fn simpson_weights(n: usize) -> Vec<f64> {
    assert!(n >= 4);
    let h = 1.0 / (n - 1) as f64;
    let mut w = vec![0.0; n];
    let intervals = n - 1;
    let simpson_end = if intervals % 2 == 0 { n - 1 } else { n - 4 };
    let mut k = 0;
    while k + 2 <= simpson_end {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
        k += 2;
    }
    if intervals % 2 != 0 {
        w[n - 4] += 3.0 * h / 8.0;
        w[n - 3] += 9.0 * h / 8.0;
        w[n - 2] += 9.0 * h / 8.0;
        w[n - 1] += 3.0 * h / 8.0;
    }
    w
}

/// Build an exterior grid. Requires R_out > 2·max ρ so the far field has room
/// to develop, and n_s ≥ 8 for the radial stencils and Simpson weights.
pub fn build_grid(
    shape: ParticleShape,
    n_s: usize,
    angular: AngularGrid,
    r_out: f64,
) -> Result<ExteriorGrid, GridError> {
    if n_s < 8 {
        return Err(GridError::TooFewShells(n_s));
    }
    if angular.n_theta < 3 {
        return Err(GridError::TooFewTheta(angular.n_theta));
    }
    let rho_max = shape.rho_max(&angular);
    if !(r_out > 2.0 * rho_max) {
        return Err(GridError::OuterRadiusTooSmall { r_out, rho_max });
    }

    let nang = angular.node_count();
    let mut rho = Vec::with_capacity(nang);
    for (q, &(t, p)) in angular.nodes.iter().enumerate() {
        let v = shape.rho(t, p);
        if !(v > 0.0) {
            return Err(GridError::NonPositiveRho { node: q, rho: v });
        }
        rho.push(v);
    }

    // Declared axis symmetry must hold on the nodes: compare ρ at directions
    // rotated about the axis by a quarter turn and by the golden angle.
    if let ShapeSymmetry::Axis(u) = shape.symmetry() {
        for (q, &(t, p)) in angular.nodes.iter().enumerate() {
            let omega = unit_dir(t, p);
            for ang in [std::f64::consts::FRAC_PI_2, 2.399963229728653] {
                let w = vec3::rotate_about(omega, u, ang);
                let (tt, pp) = (w[2].clamp(-1.0, 1.0).acos(), w[1].atan2(w[0]));
                let dev = (shape.rho(tt, pp) - rho[q]).abs();
                if dev > 1e-12 * rho_max {
                    return Err(GridError::AxisSymmetryViolated { node: q, dev });
                }
            }
        }
    }

    let s: Vec<f64> = (0..n_s).map(|k| k as f64 / (n_s - 1) as f64).collect();
    let w_s = simpson_weights(n_s);

    let n_nodes = n_s * nang;
    let mut r = vec![0.0; n_nodes];
    let mut pos = vec![vec3::ZERO; n_nodes];
    let mut vol_w = vec![0.0; n_nodes];
    for i_s in 0..n_s {
        for q_ang in 0..nang {
            let q = i_s * nang + q_ang;
            // Exact endpoints are part of the contract; exp/ln only inside.
            let rq = if i_s == 0 {
                rho[q_ang]
            } else if i_s == n_s - 1 {
                r_out
            } else {
                ((1.0 - s[i_s]) * rho[q_ang].ln() + s[i_s] * r_out.ln()).exp()
            };
            r[q] = rq;
            let (t, p) = angular.nodes[q_ang];
            pos[q] = vec3::scale(unit_dir(t, p), rq);
            // det J = r² r_s sinθ with r_s = r·ln(R_out/ρ); the angular weight
            // already carries the sinθ dθ dφ measure.
            let r_s = rq * (r_out / rho[q_ang]).ln();
            vol_w[q] = rq * rq * r_s * w_s[i_s] * angular.weights[q_ang];
        }
    }

    let mut surf_w = vec![0.0; nang];
    let mut normal = vec![vec3::ZERO; nang];
    for q_ang in 0..nang {
        let (t, p) = angular.nodes[q_ang];
        let (rh, rt, rp) = shape.rho_derivs(t, p);
        let st = t.sin();
        let grad2 = rt * rt + (rp / st) * (rp / st);
        surf_w[q_ang] = rh * (rh * rh + grad2).sqrt() * angular.weights[q_ang];
        let raw = vec3::sub(
            vec3::scale(unit_dir(t, p), rh),
            vec3::add(
                vec3::scale(theta_dir(t, p), rt),
                vec3::scale(phi_dir(p), rp / st),
            ),
        );
        normal[q_ang] = vec3::normalize(raw).expect("degenerate surface normal");
    }

    Ok(ExteriorGrid {
        shape,
        angular,
        n_s,
        r_out,
        rho_max,
        rho,
        r,
        pos,
        vol_w,
        surf_w,
        normal,
        s,
    })
}

/// Differentiation stencils composed with the discrete inverse Jacobian.
///
/// Forward: ∇f(q) = Σ_j w_{qj} (f_j − f_q). The adjoint uses the transposed
/// table plus the per-node self weight −Σ_j w_{qj}.
pub struct GradientStencils {
    pub n_nodes: usize,
    fw_entries: Vec<(u32, Vec3)>,
    fw_offsets: Vec<u32>,
    /// −(implicit self coefficient) = Σ_j w_{qj}, per node.
    self_w: Vec<Vec3>,
    rv_entries: Vec<(u32, Vec3)>,
    rv_offsets: Vec<u32>,
}

/// 1-D stencil piece: neighbor coefficients excluding the center (whose
/// coefficient is minus their sum).
struct LineStencil {
    /// (node index along the line, coefficient)
    taps: Vec<(usize, f64)>,
}

/// Lagrange 3-point derivative coefficients at `t` for nodes `xs`,
/// subtract-center form relative to `center` (index into xs).
fn lagrange3(xs: [f64; 3], t: f64, center: usize) -> Vec<(usize, f64)> {
    let mut w = [0.0; 3];
    for i in 0..3 {
        let mut num = 0.0;
        for j in 0..3 {
            if j == i {
                continue;
            }
            let mut prod = 1.0;
            for k in 0..3 {
                if k != i && k != j {
                    prod *= t - xs[k];
                }
            }
            num += prod;
        }
        let mut den = 1.0;
        for k in 0..3 {
            if k != i {
                den *= xs[i] - xs[k];
            }
        }
        w[i] = num / den;
    }
    (0..3).filter(|&i| i != center).map(|i| (i, w[i])).collect()
}

/// Per-position stencils along a nonuniform line (interior central, one-sided
/// 3-point second order at the ends).
fn line_stencils(xs: &[f64]) -> Vec<LineStencil> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, center) = if i == 0 {
            (0, 0)
        } else if i == n - 1 {
            (n - 3, 2)
        } else {
            (i - 1, 1)
        };
        let taps = lagrange3([xs[lo], xs[lo + 1], xs[lo + 2]], xs[i], center)
            .into_iter()
            .map(|(k, c)| (lo + k, c))
            .collect();
        out.push(LineStencil { taps });
    }
    out
}

/// Build the gradient stencil tables for a grid.
pub fn gradient_weights(grid: &ExteriorGrid) -> GradientStencils {
    let n_theta = grid.angular.n_theta;
    let n_phi = grid.angular.n_phi;
    let nang = grid.angular.node_count();
    let n_nodes = grid.node_count();

    let s_st = line_stencils(&grid.s);
    let thetas: Vec<f64> = (0..n_theta).map(|i| grid.angular.theta(i)).collect();
    let t_st = line_stencils(&thetas);
    // Periodic central in φ: uniform spacing, neighbors only.
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let c_phi = 1.0 / (2.0 * dphi);

    // Directional taps per node: (neighbor flat index, coefficient, direction).
    let taps_of = |q: usize| -> Vec<(usize, f64, usize)> {
        let i_s = q / nang;
        let rem = q % nang;
        let i_t = rem / n_phi;
        let i_p = rem % n_phi;
        let mut taps = Vec::with_capacity(6);
        for &(k, c) in &s_st[i_s].taps {
            taps.push(((k * n_theta + i_t) * n_phi + i_p, c, 0));
        }
        for &(k, c) in &t_st[i_t].taps {
            taps.push(((i_s * n_theta + k) * n_phi + i_p, c, 1));
        }
        let prev = (i_p + n_phi - 1) % n_phi;
        let next = (i_p + 1) % n_phi;
        taps.push(((i_s * n_theta + i_t) * n_phi + prev, -c_phi, 2));
        taps.push(((i_s * n_theta + i_t) * n_phi + next, c_phi, 2));
        taps
    };

    let mut fw_entries: Vec<(u32, Vec3)> = Vec::with_capacity(n_nodes * 6);
    let mut fw_offsets: Vec<u32> = Vec::with_capacity(n_nodes + 1);
    let mut self_w: Vec<Vec3> = Vec::with_capacity(n_nodes);
    fw_offsets.push(0);
    let mut merged: Vec<(usize, Vec3)> = Vec::with_capacity(8);
    for q in 0..n_nodes {
        let taps = taps_of(q);
        // Discrete Jacobian columns: the same taps applied to the positions.
        let mut jc = [vec3::ZERO; 3];
        for &(j, c, dir) in &taps {
            jc[dir] = vec3::axpy(jc[dir], c, vec3::sub(grid.pos[j], grid.pos[q]));
        }
        let det = vec3::dot(jc[0], vec3::cross(jc[1], jc[2]));
        // Rows of J⁻¹ by the adjugate; ∇f = Σ_dir (D_dir f) · row_dir.
        let rows = [
            vec3::scale(vec3::cross(jc[1], jc[2]), 1.0 / det),
            vec3::scale(vec3::cross(jc[2], jc[0]), 1.0 / det),
            vec3::scale(vec3::cross(jc[0], jc[1]), 1.0 / det),
        ];
        merged.clear();
        for &(j, c, dir) in &taps {
            let w = vec3::scale(rows[dir], c);
            match merged.iter_mut().find(|(jj, _)| *jj == j) {
                Some((_, acc)) => *acc = vec3::add(*acc, w),
                None => merged.push((j, w)),
            }
        }
        merged.sort_by_key(|&(j, _)| j);
        let mut sw = vec3::ZERO;
        for &(j, w) in merged.iter() {
            fw_entries.push((j as u32, w));
            sw = vec3::add(sw, w);
        }
        self_w.push(sw);
        fw_offsets.push(fw_entries.len() as u32);
    }

    // Transpose: counting pass, then a fill ordered by source node so each
    // reverse list is sorted and the build is deterministic.
    let mut counts = vec![0u32; n_nodes];
    for &(j, _) in &fw_entries {
        counts[j as usize] += 1;
    }
    let mut rv_offsets = vec![0u32; n_nodes + 1];
    for i in 0..n_nodes {
        rv_offsets[i + 1] = rv_offsets[i] + counts[i];
    }
    let mut rv_entries = vec![(0u32, vec3::ZERO); fw_entries.len()];
    let mut cursor: Vec<u32> = rv_offsets[..n_nodes].to_vec();
    for q in 0..n_nodes {
        for e in fw_offsets[q] as usize..fw_offsets[q + 1] as usize {
            let (j, w) = fw_entries[e];
            let slot = cursor[j as usize] as usize;
            rv_entries[slot] = (q as u32, w);
            cursor[j as usize] += 1;
        }
    }

    GradientStencils {
        n_nodes,
        fw_entries,
        fw_offsets,
        self_w,
        rv_entries,
        rv_offsets,
    }
}

impl GradientStencils {
    /// Physical gradient of a scalar field, one Vec3 per node.
    pub fn apply(&self, f: &[f64], out: &mut [Vec3]) {
        assert_eq!(f.len(), self.n_nodes);
        assert_eq!(out.len(), self.n_nodes);
        out.par_iter_mut().enumerate().for_each(|(q, g)| {
            let mut acc = vec3::ZERO;
            for e in self.fw_offsets[q] as usize..self.fw_offsets[q + 1] as usize {
                let (j, w) = self.fw_entries[e];
                acc = vec3::axpy(acc, f[j as usize] - f[q], w);
            }
            *g = acc;
        });
    }

    /// Gradients of all three components of a vector field at once:
    /// out[q][c] = ∇(n_c)(q).
    pub fn apply_vector(&self, n: &[Vec3], out: &mut [[Vec3; 3]]) {
        assert_eq!(n.len(), self.n_nodes);
        assert_eq!(out.len(), self.n_nodes);
        out.par_iter_mut().enumerate().for_each(|(q, g)| {
            *g = self.gradient_at(n, q);
        });
    }

    /// Gradient of all three components at a single node.
    #[inline]
    pub fn gradient_at(&self, n: &[Vec3], q: usize) -> [Vec3; 3] {
        let mut g = [vec3::ZERO; 3];
        let nq = n[q];
        for e in self.fw_offsets[q] as usize..self.fw_offsets[q + 1] as usize {
            let (j, w) = self.fw_entries[e];
            let d = vec3::sub(n[j as usize], nq);
            for c in 0..3 {
                g[c] = vec3::axpy(g[c], d[c], w);
            }
        }
        g
    }

    /// Exact transpose of `apply`: out_i = Σ_q g_q·w_{qi} − g_i·Σ_j w_{ij}.
    pub fn apply_adjoint(&self, g: &[Vec3], out: &mut [f64]) {
        assert_eq!(g.len(), self.n_nodes);
        assert_eq!(out.len(), self.n_nodes);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = -vec3::dot(g[i], self.self_w[i]);
            for e in self.rv_offsets[i] as usize..self.rv_offsets[i + 1] as usize {
                let (q, w) = self.rv_entries[e];
                acc += vec3::dot(g[q as usize], w);
            }
            *o = acc;
        });
    }

    /// Transpose applied to per-component gradients: the nodal gradient of
    /// Σ_q Σ_c t_q[c]·∇n_c(q) with respect to n, written into `out`.
    pub fn apply_adjoint_vector(&self, t: &[[Vec3; 3]], out: &mut [Vec3]) {
        assert_eq!(t.len(), self.n_nodes);
        assert_eq!(out.len(), self.n_nodes);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = vec3::ZERO;
            for c in 0..3 {
                acc[c] = -vec3::dot(t[i][c], self.self_w[i]);
            }
            for e in self.rv_offsets[i] as usize..self.rv_offsets[i + 1] as usize {
                let (q, w) = self.rv_entries[e];
                let tq = &t[q as usize];
                for c in 0..3 {
                    acc[c] += vec3::dot(tq[c], w);
                }
            }
            *o = acc;
        });
    }

    /// Diagonal of the Hessian of Σ_q w_q Σ_c |∇n_c(q)|² with respect to one
    /// nodal component (the same for all three): 2(w_i |s_i|² + Σ w_q |w_qi|²).
    /// Strictly positive, so it serves as a Jacobi preconditioner.
    pub fn energy_hessian_diag(&self, vol_w: &[f64]) -> Vec<f64> {
        assert_eq!(vol_w.len(), self.n_nodes);
        let mut diag = vec![0.0f64; self.n_nodes];
        diag.par_iter_mut().enumerate().for_each(|(i, d)| {
            let mut acc = vol_w[i] * vec3::norm2(self.self_w[i]);
            for e in self.rv_offsets[i] as usize..self.rv_offsets[i + 1] as usize {
                let (q, w) = self.rv_entries[e];
                acc += vol_w[q as usize] * vec3::norm2(w);
            }
            *d = 2.0 * acc;
        });
        diag
    }

    /// Byte-level equality; grids and stencils must rebuild reproducibly.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.n_nodes == other.n_nodes
            && self.fw_offsets == other.fw_offsets
            && self
                .fw_entries
                .iter()
                .zip(&other.fw_entries)
                .all(|(a, b)| a.0 == b.0 && a.1.map(f64::to_bits) == b.1.map(f64::to_bits))
            && self
                .self_w
                .iter()
                .zip(&other.self_w)
                .all(|(a, b)| a.map(f64::to_bits) == b.map(f64::to_bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphgrid::build_angular_grid;
    use std::f64::consts::PI;

    fn sphere_grid(n_s: usize, n_theta: usize, n_phi: usize, r_out: f64) -> ExteriorGrid {
        build_grid(
            ParticleShape::Sphere,
            n_s,
            build_angular_grid(n_theta, n_phi).unwrap(),
            r_out,
        )
        .unwrap()
    }

    #[test]
    fn sphere_radii_are_geometric() {
        let g = sphere_grid(33, 8, 16, 16.0);
        for i_s in 0..33 {
            let expected = 16f64.powf(i_s as f64 / 32.0);
            let got = g.r[g.node_index(i_s, 3, 5)];
            assert!((got - expected).abs() <= 1e-13 * expected);
        }
        // Endpoint radii are exact by construction.
        assert_eq!(g.r[g.node_index(0, 2, 1)], 1.0);
        assert_eq!(g.r[g.node_index(32, 2, 1)], 16.0);
    }

    #[test]
    fn undersized_outer_radius_rejected() {
        let ang = build_angular_grid(16, 16).unwrap();
        let shape = ParticleShape::Spheroid {
            a: 1.0,
            b: 2.0,
            axis: vec3::EZ,
        };
        match build_grid(shape, 16, ang, 3.0) {
            Err(GridError::OuterRadiusTooSmall { rho_max, .. }) => {
                assert!((rho_max - 2.0).abs() < 1e-15)
            }
            other => panic!("expected radius error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_shells_rejected() {
        let ang = build_angular_grid(8, 8).unwrap();
        assert!(matches!(
            build_grid(ParticleShape::Sphere, 7, ang, 16.0),
            Err(GridError::TooFewShells(7))
        ));
    }

    #[test]
    fn shell_volume_matches_analytic() {
        let g = sphere_grid(64, 32, 32, 16.0);
        let vol: f64 = g.vol_w.iter().sum();
        let exact = 4.0 * PI / 3.0 * (16.0f64.powi(3) - 1.0);
        assert!(
            (vol - exact).abs() / exact < 1e-3,
            "volume error {:e}",
            (vol - exact).abs() / exact
        );

        // Spheroid: |B_R \ G| = (4π/3)(R³ − a²b).
        let ang = build_angular_grid(32, 32).unwrap();
        let g = build_grid(
            ParticleShape::Spheroid {
                a: 1.0,
                b: 1.5,
                axis: vec3::EZ,
            },
            64,
            ang,
            16.0,
        )
        .unwrap();
        let vol: f64 = g.vol_w.iter().sum();
        let exact = 4.0 * PI / 3.0 * (16.0f64.powi(3) - 1.5);
        assert!((vol - exact).abs() / exact < 1e-3);
    }

    #[test]
    fn surface_weights_and_normals() {
        let g = sphere_grid(8, 16, 32, 16.0);
        let area: f64 = g.surf_w.iter().sum();
        assert!((area - 4.0 * PI).abs() / (4.0 * PI) < 1e-12);
        for q in 0..g.shell_len() {
            let omega = g.angular.omega(q);
            assert!(vec3::norm(vec3::sub(g.normal[q], omega)) < 1e-13);
        }

        // Prolate spheroid area: 2πa²(1 + b/(a e)·asin e), e² = 1 − a²/b².
        let (a, b) = (1.0, 2.0);
        let ang = build_angular_grid(32, 32).unwrap();
        let g = build_grid(
            ParticleShape::Spheroid {
                a,
                b,
                axis: vec3::EZ,
            },
            8,
            ang,
            16.0,
        )
        .unwrap();
        let area: f64 = g.surf_w.iter().sum();
        let e = (1.0 - a * a / (b * b)).sqrt();
        let exact = 2.0 * PI * a * a * (1.0 + b / (a * e) * e.asin());
        assert!(
            (area - exact).abs() / exact < 1e-8,
            "area error {:e}",
            (area - exact).abs() / exact
        );

        // Normals orthogonal to both surface tangents.
        for q in 0..g.shell_len() {
            let (t, p) = g.angular.nodes[q];
            let (rh, rt, rp) = g.shape.rho_derivs(t, p);
            let tan_t = vec3::add(
                vec3::scale(unit_dir(t, p), rt),
                vec3::scale(theta_dir(t, p), rh),
            );
            let tan_p = vec3::add(
                vec3::scale(unit_dir(t, p), rp),
                vec3::scale(phi_dir(p), rh * t.sin()),
            );
            assert!(vec3::dot(g.normal[q], tan_t).abs() < 1e-10);
            assert!(vec3::dot(g.normal[q], tan_p).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_of_linear_field_is_exact() {
        let g = sphere_grid(16, 16, 32, 16.0);
        let st = gradient_weights(&g);
        let f: Vec<f64> = g.pos.iter().map(|p| p[2]).collect();
        let mut grad = vec![vec3::ZERO; g.node_count()];
        st.apply(&f, &mut grad);
        let mut worst = 0.0f64;
        for gq in &grad {
            worst = worst.max(vec3::norm(vec3::sub(*gq, vec3::EZ)));
        }
        assert!(worst <= 1e-8, "worst linear-gradient error {worst:e}");
    }

    #[test]
    fn gradient_of_constant_is_exactly_zero() {
        let g = sphere_grid(12, 8, 8, 16.0);
        let st = gradient_weights(&g);
        let f = vec![4.2; g.node_count()];
        let mut grad = vec![[1.0; 3]; g.node_count()];
        st.apply(&f, &mut grad);
        assert!(grad.iter().all(|g| *g == [0.0, 0.0, 0.0]));
    }

    #[test]
    fn radial_derivative_order_of_accuracy() {
        // f = 1/r: interior rows cancel exactly for the exponential map, so
        // the max-norm error is set by the one-sided boundary rows at O(h²).
        let err_at = |n: usize| -> f64 {
            let g = sphere_grid(n, n, 2 * n, 16.0);
            let st = gradient_weights(&g);
            let f: Vec<f64> = g.r.iter().map(|r| 1.0 / r).collect();
            let mut grad = vec![vec3::ZERO; g.node_count()];
            st.apply(&f, &mut grad);
            let mut worst = 0.0f64;
            for q in 0..g.node_count() {
                let omega = vec3::scale(g.pos[q], 1.0 / g.r[q]);
                let dr = vec3::dot(grad[q], omega);
                worst = worst.max((dr + 1.0 / (g.r[q] * g.r[q])).abs());
            }
            worst
        };
        let (e16, e32, e64) = (err_at(16), err_at(32), err_at(64));
        let order1 = (e16 / e32).log2();
        let order2 = (e32 / e64).log2();
        assert!(
            order1 >= 1.8 && order2 >= 1.8,
            "orders {order1:.2}, {order2:.2} (errors {e16:e}, {e32:e}, {e64:e})"
        );
    }

    #[test]
    fn adjoint_matches_forward() {
        // <D f, g> = <f, Dᵀ g> for random f, g.
        use rand::{Rng, SeedableRng};
        let g = sphere_grid(10, 6, 8, 16.0);
        let st = gradient_weights(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gv: Vec<Vec3> = (0..g.node_count())
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let mut df = vec![vec3::ZERO; g.node_count()];
        st.apply(&f, &mut df);
        let lhs: f64 = df.iter().zip(&gv).map(|(a, b)| vec3::dot(*a, *b)).sum();
        let mut dtg = vec![0.0; g.node_count()];
        st.apply_adjoint(&gv, &mut dtg);
        let rhs: f64 = dtg.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
            "adjoint mismatch {lhs} vs {rhs}"
        );
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let g1 = sphere_grid(12, 8, 12, 16.0);
        let g2 = sphere_grid(12, 8, 12, 16.0);
        assert!(g1
            .r
            .iter()
            .zip(&g2.r)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(g1
            .vol_w
            .iter()
            .zip(&g2.vol_w)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let s1 = gradient_weights(&g1);
        let s2 = gradient_weights(&g2);
        assert!(s1.bit_identical(&s2));
    }

    #[test]
    fn metadata_sidecar_has_expected_keys() {
        let g = sphere_grid(8, 4, 8, 16.0);
        let js = g.metadata_json();
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(v["kind"], "sphere");
        assert_eq!(v["n_s"], 8);
        assert_eq!(v["n_theta"], 4);
        assert_eq!(v["n_phi"], 8);
        assert_eq!(v["ordering"], "phi,theta,s");
        assert!((v["R_out"].as_f64().unwrap() - 16.0).abs() < 1e-15);
    }

    #[test]
    fn star_shape_matches_spheroid() {
        // A star closure reproducing the spheroid ρ must build the same grid.
        let (a, b) = (1.0f64, 1.3f64);
        let ang = build_angular_grid(12, 12).unwrap();
        let star = ParticleShape::Star {
            rho: Arc::new(move |t: f64, _p: f64| {
                let mu = t.cos();
                1.0 / ((1.0 - mu * mu) / (a * a) + mu * mu / (b * b)).sqrt()
            }),
            axis: Some(vec3::EZ),
        };
        let g_star = build_grid(star, 8, ang.clone(), 16.0).unwrap();
        let g_sph = build_grid(
            ParticleShape::Spheroid {
                a,
                b,
                axis: vec3::EZ,
            },
            8,
            ang,
            16.0,
        )
        .unwrap();
        for q in 0..g_star.shell_len() {
            assert!((g_star.rho[q] - g_sph.rho[q]).abs() < 1e-12);
            assert!((g_star.surf_w[q] - g_sph.surf_w[q]).abs() < 1e-9);
            assert!(vec3::norm(vec3::sub(g_star.normal[q], g_sph.normal[q])) < 1e-8);
        }
    }
}
