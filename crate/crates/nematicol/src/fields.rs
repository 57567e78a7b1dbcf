//! Director fields on the exterior grid and the discrete one-constant energy.
//!
//! The energy is the plain Dirichlet integral E[n] = ∫_G |∇n|² dx plus the
//! surface term, discretized as Σ_q w_q Σ_c |∇n_c(q)|² with the stencil
//! gradients and volume weights of the grid. The gradient returned here is
//! the exact derivative of that discrete sum (not a discretization of the
//! continuum Euler–Lagrange operator), so central finite differences of the
//! energy match it to quadrature roundoff. All reductions use compensated
//! summation and a fixed order, keeping results independent of thread count.

use crate::anchoring::{self, AnchoringError, SurfaceEnergy, SurfaceEnergyValue};
use crate::exterior::{fmt_g17, ExteriorGrid, GradientStencils};
use crate::vec3::{self, Accumulator, Vec3};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("cannot project near-zero vector at node {node} (|v| = {norm:e})")]
    DegenerateProjection { node: usize, norm: f64 },
    #[error("director at node {node} deviates from unit length by {dev:e}")]
    NonUnit { node: usize, dev: f64 },
    #[error("far-field director must be unit, got |n0| = {0}")]
    FarValueNotUnit(f64),
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Anchoring(#[from] AnchoringError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("binary payload has {got} bytes, expected {expected}")]
    PayloadSize { got: usize, expected: usize },
}

/// Unit director field sampled at the grid nodes, with its value at infinity.
#[derive(Debug, Clone)]
pub struct DirectorField {
    pub values: Vec<Vec3>,
    pub far_value: Vec3,
}

impl DirectorField {
    pub fn new(grid: &ExteriorGrid, values: Vec<Vec3>, far_value: Vec3) -> Result<Self, FieldError> {
        let field = Self { values, far_value };
        field.validate(grid)?;
        Ok(field)
    }

    /// Constant field n ≡ n0.
    pub fn constant(grid: &ExteriorGrid, n0: Vec3) -> Result<Self, FieldError> {
        Self::new(grid, vec![n0; grid.node_count()], n0)
    }

    /// Radial hedgehog n = x/|x|. Has no single value at infinity; the stored
    /// far value (e_z) is a placeholder for diagnostics that need one.
    pub fn hedgehog(grid: &ExteriorGrid) -> Self {
        let values = grid
            .pos
            .iter()
            .map(|&x| vec3::normalize(x).expect("grid nodes are outside the origin"))
            .collect();
        Self { values, far_value: vec3::EZ }
    }

    pub fn validate(&self, grid: &ExteriorGrid) -> Result<(), FieldError> {
        if self.values.len() != grid.node_count() {
            return Err(FieldError::LengthMismatch {
                got: self.values.len(),
                expected: grid.node_count(),
            });
        }
        let dev = (vec3::norm(self.far_value) - 1.0).abs();
        if dev > 1e-12 {
            return Err(FieldError::FarValueNotUnit(vec3::norm(self.far_value)));
        }
        for (node, v) in self.values.iter().enumerate() {
            let dev = (vec3::norm(*v) - 1.0).abs();
            if dev > 1e-12 {
                return Err(FieldError::NonUnit { node, dev });
            }
        }
        Ok(())
    }

    /// Boundary layer (the s = 0 shell, which lies on the particle surface).
    pub fn boundary(&self, grid: &ExteriorGrid) -> &[Vec3] {
        &self.values[..grid.shell_len()]
    }
}

/// Normalize every vector in place; vectors shorter than 1e-8 are rejected
/// rather than blown up.
pub fn project_to_sphere(values: &mut [Vec3]) -> Result<(), FieldError> {
    for (node, v) in values.iter_mut().enumerate() {
        let norm = vec3::norm(*v);
        if norm < 1e-8 {
            return Err(FieldError::DegenerateProjection { node, norm });
        }
        *v = vec3::scale(*v, 1.0 / norm);
    }
    Ok(())
}

/// Discrete Dirichlet energy Σ_q w_q Σ_c |∇n_c(q)|². Integrands are filled in
/// parallel into node order and reduced sequentially with compensation, so
/// the value is bit-stable across runs and worker counts.
pub fn dirichlet_energy(grid: &ExteriorGrid, st: &GradientStencils, values: &[Vec3]) -> f64 {
    assert_eq!(values.len(), grid.node_count());
    let mut integrand = vec![0.0f64; grid.node_count()];
    integrand.par_iter_mut().enumerate().for_each(|(q, out)| {
        let g = st.gradient_at(values, q);
        *out = grid.vol_w[q] * (vec3::norm2(g[0]) + vec3::norm2(g[1]) + vec3::norm2(g[2]));
    });
    vec3::compensated_sum(integrand.iter().copied())
}

/// Bulk energy plus surface term; `Infinite` signals violated hard anchoring.
pub fn total_energy(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    fs: &SurfaceEnergy,
    values: &[Vec3],
) -> Result<SurfaceEnergyValue, AnchoringError> {
    let bulk = dirichlet_energy(grid, st, values);
    let surf = anchoring::surface_energy_eval(grid, fs, &values[..grid.shell_len()])?;
    Ok(match surf {
        SurfaceEnergyValue::Finite(s) => SurfaceEnergyValue::Finite(bulk + s),
        SurfaceEnergyValue::Infinite => SurfaceEnergyValue::Infinite,
    })
}

/// Raw Euclidean derivative of the bulk energy with respect to every nodal
/// value: 2 Dᵀ(w ∇n). No pinning and no tangent projection; boundary
/// condition handling composes this with its own chain rule.
pub fn bulk_energy_derivative(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    values: &[Vec3],
) -> Vec<Vec3> {
    assert_eq!(values.len(), grid.node_count());
    let mut t = vec![[vec3::ZERO; 3]; grid.node_count()];
    t.par_iter_mut().enumerate().for_each(|(q, out)| {
        let g = st.gradient_at(values, q);
        for c in 0..3 {
            out[c] = vec3::scale(g[c], grid.vol_w[q]);
        }
    });
    let mut out = vec![vec3::ZERO; grid.node_count()];
    st.apply_adjoint_vector(&t, &mut out);
    for v in &mut out {
        *v = vec3::scale(*v, 2.0);
    }
    out
}

/// Exact gradient of the discrete total energy under the unit constraint:
/// tangent-projected at free nodes, identically zero at constrained ones.
/// The outer shell is constrained (it carries far-field data); the particle
/// shell is constrained exactly when the anchoring is hard.
pub fn energy_gradient(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    fs: &SurfaceEnergy,
    field: &DirectorField,
) -> Result<Vec<Vec3>, FieldError> {
    let mut g = bulk_energy_derivative(grid, st, &field.values);
    let surf = anchoring::surface_energy_gradient(grid, fs, field.boundary(grid))?;
    let shell = grid.shell_len();
    for q in 0..shell {
        g[q] = vec3::add(g[q], surf[q]);
    }
    let outer_start = (grid.n_s - 1) * shell;
    for gq in &mut g[outer_start..] {
        *gq = vec3::ZERO;
    }
    if fs.is_hard() {
        for gq in &mut g[..shell] {
            *gq = vec3::ZERO;
        }
    }
    let free = &mut g[if fs.is_hard() { shell } else { 0 }..outer_start];
    let vals = &field.values;
    let base = if fs.is_hard() { shell } else { 0 };
    for (i, gq) in free.iter_mut().enumerate() {
        *gq = vec3::reject(*gq, vals[base + i]);
    }
    Ok(g)
}

/// Harmonic map residual Δn + |∇n|² n, evaluated where both stencil passes
/// use interior rows only.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Residual vector per node; zero outside the trusted shell range.
    pub residual: Vec<Vec3>,
    /// Weighted L² norm over the trusted range.
    pub norm: f64,
    /// Inclusive range of trusted s-indices.
    pub s_range: (usize, usize),
}

/// Residual of the harmonic map equation −Δn = |∇n|² n. The Laplacian is the
/// divergence of the stencil gradient (two first-derivative passes); the two
/// shells nearest each radial end are excluded, where one-sided rows feed the
/// composition.
pub fn harmonic_map_residual(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    values: &[Vec3],
) -> ResidualReport {
    assert_eq!(values.len(), grid.node_count());
    let n = grid.node_count();
    let shell = grid.shell_len();
    let (s_lo, s_hi) = (2, grid.n_s - 3);

    let mut grad = vec![[vec3::ZERO; 3]; n];
    st.apply_vector(values, &mut grad);
    let mut lap = vec![vec3::ZERO; n];
    for c in 0..3 {
        let gc: Vec<Vec3> = grad.iter().map(|g| g[c]).collect();
        let mut hess = vec![[vec3::ZERO; 3]; n];
        st.apply_vector(&gc, &mut hess);
        lap.par_iter_mut().enumerate().for_each(|(q, l)| {
            l[c] = hess[q][0][0] + hess[q][1][1] + hess[q][2][2];
        });
    }

    let mut residual = vec![vec3::ZERO; n];
    residual.par_iter_mut().enumerate().for_each(|(q, r)| {
        let i_s = q / shell;
        if i_s < s_lo || i_s > s_hi {
            return;
        }
        let g = &grad[q];
        let gn2 = vec3::norm2(g[0]) + vec3::norm2(g[1]) + vec3::norm2(g[2]);
        *r = vec3::axpy(lap[q], gn2, values[q]);
    });

    let norm = vec3::compensated_sum(
        (s_lo * shell..(s_hi + 1) * shell).map(|q| grid.vol_w[q] * vec3::norm2(residual[q])),
    )
    .sqrt();
    ResidualReport { residual, norm, s_range: (s_lo, s_hi) }
}

/// Weighted distance of n from its value at infinity.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityReport {
    /// Σ_q w_q |n − n0|² / (1 + r²) over the truncated exterior.
    pub norm: f64,
    /// Set when the shell-averaged |n − n0|² decays slower than r^{-1} over
    /// the outer half of the domain; the truncated integral then
    /// under-reports the admissibility defect badly.
    pub slow_decay: bool,
}

pub fn admissibility_norm(grid: &ExteriorGrid, field: &DirectorField) -> AdmissibilityReport {
    let shell = grid.shell_len();
    let n0 = field.far_value;
    let norm = vec3::compensated_sum((0..grid.node_count()).map(|q| {
        grid.vol_w[q] * vec3::norm2(vec3::sub(field.values[q], n0))
            / (1.0 + vec3::norm2(grid.pos[q]))
    }));

    // Shell-averaged deviation against mean log radius, fitted over the
    // outer half; slope > -1 means slower than 1/r² for |n − n0|².
    let half = grid.n_s / 2;
    let mut pts = Vec::with_capacity(grid.n_s - half);
    for i_s in half..grid.n_s {
        let mut ms = Accumulator::new();
        let mut mr = Accumulator::new();
        for q_ang in 0..shell {
            let q = i_s * shell + q_ang;
            let w = grid.angular.weights[q_ang];
            ms.add(w * vec3::norm2(vec3::sub(field.values[q], n0)));
            mr.add(w * grid.r[q].ln());
        }
        let mean = ms.value() / (4.0 * std::f64::consts::PI);
        pts.push((mr.value() / (4.0 * std::f64::consts::PI), mean.max(1e-300).ln()));
    }
    let m = pts.len() as f64;
    let xb = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let yb = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - xb) * (p.1 - yb)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - xb) * (p.0 - xb)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let slow_decay = norm > 1e-20 && slope > -1.0;
    AdmissibilityReport { norm, slow_decay }
}

/// Write nodal values as flat little-endian f64 triples in node order, with a
/// JSON sidecar (`<path>.json`) describing grid and layout.
pub fn write_binary(
    path: &Path,
    grid: &ExteriorGrid,
    field: &DirectorField,
) -> Result<(), FieldError> {
    let mut buf = Vec::with_capacity(field.values.len() * 24);
    for v in &field.values {
        for c in 0..3 {
            buf.extend_from_slice(&v[c].to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    let sidecar = format!(
        "{{\"format\":\"director-f64le\",\"components\":3,\"far_value\":[{},{},{}],\"grid\":{}}}",
        fmt_g17(field.far_value[0]),
        fmt_g17(field.far_value[1]),
        fmt_g17(field.far_value[2]),
        grid.metadata_json()
    );
    let mut sp = path.as_os_str().to_owned();
    sp.push(".json");
    std::fs::write(sp, sidecar)?;
    Ok(())
}

pub fn read_binary(
    path: &Path,
    grid: &ExteriorGrid,
    far_value: Vec3,
) -> Result<DirectorField, FieldError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let expected = grid.node_count() * 24;
    if buf.len() != expected {
        return Err(FieldError::PayloadSize { got: buf.len(), expected });
    }
    let values: Vec<Vec3> = buf
        .chunks_exact(24)
        .map(|ch| {
            let mut v = vec3::ZERO;
            for c in 0..3 {
                v[c] = f64::from_le_bytes(ch[8 * c..8 * c + 8].try_into().unwrap());
            }
            v
        })
        .collect();
    DirectorField::new(grid, values, far_value)
}

/// Plain-text export, one node per line: x,y,z,nx,ny,nz at full precision.
pub fn write_csv(path: &Path, grid: &ExteriorGrid, field: &DirectorField) -> Result<(), FieldError> {
    let mut out = String::with_capacity(grid.node_count() * 140);
    out.push_str("x,y,z,nx,ny,nz\n");
    for q in 0..grid.node_count() {
        let p = grid.pos[q];
        let v = field.values[q];
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_g17(p[0]),
            fmt_g17(p[1]),
            fmt_g17(p[2]),
            fmt_g17(v[0]),
            fmt_g17(v[1]),
            fmt_g17(v[2])
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
