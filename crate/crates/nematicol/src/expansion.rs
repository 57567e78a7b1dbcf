//! Far-field multipole expansion: extraction, evaluation, remainder decay.
//!
//! Outside a large ball the director behaves like
//!   n ≈ n₀ + v₀/r + Σ_j p_j ∂_j(1/r) + Σ_{kℓ} c_{kℓ} ∂_k∂_ℓ(1/r) + n_corr,
//! with ∂_j(1/r) = −x_j/r³ and ∂_k∂_ℓ(1/r) = (3x_kx_ℓ/r² − δ_kℓ)/r³. The
//! correction n_corr restores |n| = 1 through order 1/r³:
//!   n_corr = −(|v₀|²/2r²) n₀ − (|v₀|²/6r³) v₀ − (1/3r) Σ_j (v₀·p_j) ∂_j(1/r) n₀.
//! The 1/(2r²) monopole coefficient is forced by the unit-norm constraint;
//! an alternative convention with 1/r² circulates and is offered as an
//! explicit [`CorrectionModel`] for comparison.
//!
//! Extraction interpolates the field onto spheres inside a fit window,
//! expands each Cartesian component in real spherical harmonics to degree 2,
//! and fits radial power laws per (ℓ, m) by weighted least squares: ℓ=0
//! against {1/r, 1/r², 1/r³}, ℓ=1 against {1/r², 1/r³}, ℓ=2 against {1/r³}.
//! On a domain truncated at R_out the outer boundary reflects every decaying
//! mode into a regular solid harmonic image c·(r/R)^ℓ; for ℓ=0 that image is
//! a constant which the plain power basis aliases, and the aliasing can
//! cancel the monopole outright. The wall value of each mode is exact data
//! (the outermost shell), so the fit pins it: subtract y(R)(r/R)^ℓ from the
//! data and tie each column to vanish at the wall, r^(−e) − R^(−e)(r/R)^ℓ.
//! This removes the image without adding a degree of freedom, and for data
//! that is a pure sum of basis powers the pinned fit is still exact.

use crate::exterior::{fmt_g17, ExteriorGrid};
use crate::fields::DirectorField;
use crate::sphgrid::{sh_analyze, sh_synthesize, ShellCoefficients};
use crate::vec3::{self, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("fit window [{r_min}, {r_max}] contains {found} shells, need at least 6")]
    TooFewShells { r_min: f64, r_max: f64, found: usize },
    #[error("fit window upper edge {r_max} exceeds R_out/2 = {allowed}")]
    WindowBeyondDomain { r_max: f64, allowed: f64 },
    #[error("fit window must satisfy rho_max ≤ r_min < r_max, got [{r_min}, {r_max}]")]
    BadWindow { r_min: f64, r_max: f64 },
    #[error("expansion JSON: {0}")]
    Parse(String),
}

/// Convention for the monopole term of n_corr.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionModel {
    /// −|v₀|²/(2r²) n₀: consistent with |n| = 1 through order 1/r².
    Proof,
    /// −|v₀|²/r² n₀: the alternative printed convention, kept for comparison.
    Printed,
}

#[derive(Debug, Clone, Copy)]
pub struct ExpansionDiagnostics {
    /// Relative residual of the radial fit per degree ℓ = 0, 1, 2.
    pub per_l_residual: [f64; 3],
    /// Condition numbers of the column-normalized design matrices.
    pub condition_numbers: [f64; 3],
    /// Any condition number above 1e8.
    pub conditioning_warning: bool,
    /// Fitted ℓ=0 1/r² coefficient against −√(4π)|v₀|² n₀ / 2, relative.
    pub monopole_correction_mismatch: f64,
    /// Fitted ℓ=1 1/r³ coefficients against √(4π/3)(v₀·p_j) n₀ / 3, relative.
    pub dipole_correction_mismatch: f64,
    /// v₀·n₀, recorded as found (orthogonality is a theorem about minimizers,
    /// not an enforced gauge).
    pub v0_dot_n0: f64,
}

/// Coefficients of the far-field expansion about n₀.
#[derive(Debug, Clone)]
pub struct FarFieldExpansion {
    pub n0: Vec3,
    /// Monopole: coefficient of 1/r.
    pub v0: Vec3,
    /// Dipole: p[j] multiplies ∂_j(1/r).
    pub p: [Vec3; 3],
    /// Quadrupole: c[i][k][ℓ] multiplies ∂_k∂_ℓ(1/r) in component i;
    /// symmetric and traceless in (k, ℓ).
    pub c: [[[f64; 3]; 3]; 3],
    pub fit_window: (f64, f64),
    pub diagnostics: ExpansionDiagnostics,
}

impl FarFieldExpansion {
    /// Expansion with every coefficient zero (useful as a base for tests and
    /// synthetic fields).
    pub fn trivial(n0: Vec3) -> Self {
        Self {
            n0,
            v0: vec3::ZERO,
            p: [vec3::ZERO; 3],
            c: [[[0.0; 3]; 3]; 3],
            fit_window: (0.0, 0.0),
            diagnostics: ExpansionDiagnostics {
                per_l_residual: [0.0; 3],
                condition_numbers: [1.0; 3],
                conditioning_warning: false,
                monopole_correction_mismatch: 0.0,
                dipole_correction_mismatch: 0.0,
                v0_dot_n0: 0.0,
            },
        }
    }

    /// JSON serialization at full precision.
    pub fn to_json(&self) -> String {
        let v3 = |v: Vec3| format!("[{},{},{}]", fmt_g17(v[0]), fmt_g17(v[1]), fmt_g17(v[2]));
        let c_flat: Vec<String> = self
            .c
            .iter()
            .flat_map(|m| m.iter().flat_map(|row| row.iter().map(|x| fmt_g17(*x))))
            .collect();
        let d = &self.diagnostics;
        format!(
            concat!(
                "{{\"n0\":{},\"v0\":{},\"p\":[{},{},{}],\"c\":[{}],",
                "\"fit_window\":[{},{}],\"diagnostics\":{{",
                "\"per_l_residual\":[{},{},{}],",
                "\"condition_numbers\":[{},{},{}],",
                "\"conditioning_warning\":{},",
                "\"monopole_correction_mismatch\":{},",
                "\"dipole_correction_mismatch\":{},",
                "\"v0_dot_n0\":{}}}}}"
            ),
            v3(self.n0),
            v3(self.v0),
            v3(self.p[0]),
            v3(self.p[1]),
            v3(self.p[2]),
            c_flat.join(","),
            fmt_g17(self.fit_window.0),
            fmt_g17(self.fit_window.1),
            fmt_g17(d.per_l_residual[0]),
            fmt_g17(d.per_l_residual[1]),
            fmt_g17(d.per_l_residual[2]),
            fmt_g17(d.condition_numbers[0]),
            fmt_g17(d.condition_numbers[1]),
            fmt_g17(d.condition_numbers[2]),
            d.conditioning_warning,
            fmt_g17(d.monopole_correction_mismatch),
            fmt_g17(d.dipole_correction_mismatch),
            fmt_g17(d.v0_dot_n0),
        )
    }

    /// Inverse of [`Self::to_json`]; diagnostics are restored as written.
    pub fn from_json(text: &str) -> Result<Self, ExpansionError> {
        let bad = |what: &str| ExpansionError::Parse(what.to_string());
        let root: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ExpansionError::Parse(e.to_string()))?;
        let num = |v: &serde_json::Value, what: &str| -> Result<f64, ExpansionError> {
            v.as_f64().ok_or_else(|| bad(what))
        };
        let vec3_of = |v: &serde_json::Value, what: &str| -> Result<Vec3, ExpansionError> {
            let arr = v.as_array().filter(|a| a.len() == 3).ok_or_else(|| bad(what))?;
            Ok([num(&arr[0], what)?, num(&arr[1], what)?, num(&arr[2], what)?])
        };
        let field = |key: &str| -> Result<&serde_json::Value, ExpansionError> {
            root.get(key).ok_or_else(|| bad(&format!("missing {key}")))
        };
        let c_arr = field("c")?
            .as_array()
            .filter(|a| a.len() == 27)
            .ok_or_else(|| bad("c must hold 27 entries"))?;
        let mut c = [[[0.0; 3]; 3]; 3];
        for (flat, v) in c_arr.iter().enumerate() {
            c[flat / 9][(flat / 3) % 3][flat % 3] = num(v, "c")?;
        }
        let p_arr = field("p")?
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| bad("p must hold 3 vectors"))?;
        let window = field("fit_window")?
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| bad("fit_window"))?;
        let d = field("diagnostics")?;
        let dnum = |key: &str| -> Result<f64, ExpansionError> {
            num(d.get(key).ok_or_else(|| bad(&format!("missing diagnostics.{key}")))?, key)
        };
        let darr3 = |key: &str| -> Result<[f64; 3], ExpansionError> {
            let v = vec3_of(
                d.get(key).ok_or_else(|| bad(&format!("missing diagnostics.{key}")))?,
                key,
            )?;
            Ok(v)
        };
        Ok(Self {
            n0: vec3_of(field("n0")?, "n0")?,
            v0: vec3_of(field("v0")?, "v0")?,
            p: [
                vec3_of(&p_arr[0], "p")?,
                vec3_of(&p_arr[1], "p")?,
                vec3_of(&p_arr[2], "p")?,
            ],
            c,
            fit_window: (num(&window[0], "fit_window")?, num(&window[1], "fit_window")?),
            diagnostics: ExpansionDiagnostics {
                per_l_residual: darr3("per_l_residual")?,
                condition_numbers: darr3("condition_numbers")?,
                conditioning_warning: d
                    .get("conditioning_warning")
                    .and_then(|v| v.as_bool())
                    .ok_or_else(|| bad("conditioning_warning"))?,
                monopole_correction_mismatch: dnum("monopole_correction_mismatch")?,
                dipole_correction_mismatch: dnum("dipole_correction_mismatch")?,
                v0_dot_n0: dnum("v0_dot_n0")?,
            },
        })
    }
}

/// n₀ + n_harm(x) (+ n_corr(x)), proof convention.
pub fn evaluate_expansion(e: &FarFieldExpansion, x: Vec3, include_corr: bool) -> Vec3 {
    evaluate_expansion_with(e, x, include_corr, CorrectionModel::Proof)
}

pub fn evaluate_expansion_with(
    e: &FarFieldExpansion,
    x: Vec3,
    include_corr: bool,
    model: CorrectionModel,
) -> Vec3 {
    let r = vec3::norm(x);
    assert!(r > 0.0, "expansion evaluated at the origin");
    let inv_r = 1.0 / r;
    // ∂_j(1/r) and ∂_k∂_ℓ(1/r).
    let dj = vec3::scale(x, -inv_r * inv_r * inv_r);
    let mut out = vec3::axpy(e.n0, inv_r, e.v0);
    for j in 0..3 {
        out = vec3::axpy(out, dj[j], e.p[j]);
    }
    let r3 = inv_r * inv_r * inv_r;
    for i in 0..3 {
        let mut acc = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                let dkl = (3.0 * x[k] * x[l] * inv_r * inv_r - if k == l { 1.0 } else { 0.0 }) * r3;
                acc += e.c[i][k][l] * dkl;
            }
        }
        out[i] += acc;
    }
    if include_corr {
        let v2 = vec3::norm2(e.v0);
        let mono = match model {
            CorrectionModel::Proof => v2 / (2.0 * r * r),
            CorrectionModel::Printed => v2 / (r * r),
        };
        out = vec3::axpy(out, -mono, e.n0);
        out = vec3::axpy(out, -v2 / (6.0 * r * r * r), e.v0);
        let mut coupling = 0.0;
        for j in 0..3 {
            coupling += vec3::dot(e.v0, e.p[j]) * dj[j];
        }
        out = vec3::axpy(out, -coupling / (3.0 * r), e.n0);
    }
    out
}

/// Field values interpolated onto concentric spheres inside the window,
/// plus up to one support shell beyond each edge. Radial profiles are read
/// through a binomial [1/4, 1/2, 1/4] filter across adjacent shells: the
/// wide discrete Laplacian decouples odd and even radial sublattices, so
/// minimizers carry an energy-invisible alternating O(h²) mode, which the
/// filter annihilates. Applying the same weights to data and to basis
/// columns keeps pure power sums exactly representable.
struct ShellSamples {
    radii: Vec<f64>,
    /// values[k][q_ang]: director on sphere radii[k].
    values: Vec<Vec<Vec3>>,
    /// Index range of the in-window fit rows within `radii`.
    lo: usize,
    hi: usize,
}

impl ShellSamples {
    fn rows(&self) -> usize {
        self.hi - self.lo + 1
    }

    fn radius(&self, k: usize) -> f64 {
        self.radii[self.lo + k]
    }

    /// Source indices and weights for fit row k; bare row at a missing edge.
    fn stencil(&self, k: usize) -> ([usize; 3], [f64; 3]) {
        let j = self.lo + k;
        if j > 0 && j + 1 < self.radii.len() {
            ([j - 1, j, j + 1], [0.25, 0.5, 0.25])
        } else {
            ([j, j, j], [1.0, 0.0, 0.0])
        }
    }

    /// Filtered sample of a per-shell scalar profile (indexed like `radii`).
    fn filter(&self, y: &[f64], k: usize) -> f64 {
        let (jj, ww) = self.stencil(k);
        ww[0] * y[jj[0]] + ww[1] * y[jj[1]] + ww[2] * y[jj[2]]
    }

    /// Filtered tied basis column at fit row k.
    fn col(&self, k: usize, e: i32, l: usize, r_wall: f64) -> f64 {
        let (jj, ww) = self.stencil(k);
        (0..3).map(|t| ww[t] * tied_column(self.radii[jj[t]], e, l, r_wall)).sum()
    }

    /// Filtered wall-pin column (r/R)^ℓ at fit row k.
    fn pin_col(&self, k: usize, l: usize, r_wall: f64) -> f64 {
        let (jj, ww) = self.stencil(k);
        (0..3).map(|t| ww[t] * (self.radii[jj[t]] / r_wall).powi(l as i32)).sum()
    }
}

fn sample_shells(
    grid: &ExteriorGrid,
    values: &[Vec3],
    window: (f64, f64),
) -> Result<ShellSamples, ExpansionError> {
    let (r_min, r_max) = window;
    if !(r_min >= grid.rho_max && r_max > r_min) {
        return Err(ExpansionError::BadWindow { r_min, r_max });
    }
    if r_max > grid.r_out / 2.0 {
        return Err(ExpansionError::WindowBeyondDomain { r_max, allowed: grid.r_out / 2.0 });
    }
    // Target spheres at the nominal (widest-point) radii of the s-levels,
    // extended by one support shell on each side for the radial filter.
    let nominal: Vec<f64> = (0..grid.n_s)
        .map(|k| {
            let s = k as f64 / (grid.n_s - 1) as f64;
            grid.rho_max.powf(1.0 - s) * grid.r_out.powf(s)
        })
        .collect();
    let in_window: Vec<usize> =
        (0..grid.n_s).filter(|&k| nominal[k] >= r_min && nominal[k] <= r_max).collect();
    if in_window.len() < 6 {
        return Err(ExpansionError::TooFewShells { r_min, r_max, found: in_window.len() });
    }
    let (k0, k1) = (in_window[0], *in_window.last().unwrap());
    let first = k0.saturating_sub(1);
    let last = (k1 + 1).min(grid.n_s - 1);
    let radii: Vec<f64> = (first..=last).map(|k| nominal[k]).collect();
    let (lo, hi) = (k0 - first, k1 - first);

    let shell = grid.shell_len();
    let mut shells = Vec::with_capacity(radii.len());
    for &rk in &radii {
        let mut vals = vec![vec3::ZERO; shell];
        for (q_ang, v) in vals.iter_mut().enumerate() {
            // Radial line through this angular node: r(s) = ρ^(1−s) R^s, so
            // the target s is linear in log r. Cubic Lagrange interpolation
            // over the 4 nearest s-levels.
            let rho = grid.rho[q_ang];
            let s_t = (rk / rho).ln() / (grid.r_out / rho).ln();
            let x = s_t * (grid.n_s - 1) as f64;
            let j0 = (x.floor() as isize - 1).clamp(0, grid.n_s as isize - 4) as usize;
            let mut acc = vec3::ZERO;
            for a in 0..4 {
                let ja = j0 + a;
                let mut w = 1.0;
                for b in 0..4 {
                    if b != a {
                        w *= (x - (j0 + b) as f64) / (ja as f64 - (j0 + b) as f64);
                    }
                }
                acc = vec3::axpy(acc, w, values[ja * shell + q_ang]);
            }
            *v = acc;
        }
        shells.push(vals);
    }
    Ok(ShellSamples { radii, values: shells, lo, hi })
}

/// Eigenvalue range of a small symmetric positive matrix (size 1..4) by
/// cyclic Jacobi rotations, for condition estimates.
fn sym_eig_range(g: &[[f64; 4]; 4], n: usize) -> (f64, f64) {
    let mut a = *g;
    for _ in 0..24 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..n {
        lo = lo.min(a[k][k]);
        hi = hi.max(a[k][k]);
    }
    (lo, hi)
}

/// Column e of the degree-ℓ radial fit: r^(−e) minus its outer-wall image
/// R^(−e)(r/R)^ℓ, so every column vanishes at the wall like the pinned data.
fn tied_column(r: f64, e: i32, l: usize, r_wall: f64) -> f64 {
    r.powi(-e) - r_wall.powi(-e) * (r / r_wall).powi(l as i32)
}

/// Weighted least squares of wall-pinned, radially filtered data y against
/// the matching filtered tied power columns with weights w. Returns
/// (coefficients, condition of the column-normalized design). Deterministic
/// small dense solve.
fn fit_powers(
    samples: &ShellSamples,
    w: &[f64],
    y: &[f64],
    exps: &[i32],
    l: usize,
    r_wall: f64,
) -> (Vec<f64>, f64) {
    let nc = exps.len();
    assert!(nc <= 4, "fit basis limited to 4 columns");
    let m = samples.rows();
    let mut cols = vec![vec![0.0f64; m]; nc];
    let mut scale = vec![0.0f64; nc];
    for c in 0..nc {
        for k in 0..m {
            cols[c][k] = samples.col(k, exps[c], l, r_wall);
        }
        scale[c] = (0..m).map(|k| w[k] * cols[c][k] * cols[c][k]).sum::<f64>().sqrt();
        for k in 0..m {
            cols[c][k] /= scale[c];
        }
    }
    let mut g = [[0.0f64; 4]; 4];
    let mut rhs = [0.0f64; 4];
    for c in 0..nc {
        for d in 0..nc {
            g[c][d] = (0..m).map(|k| w[k] * cols[c][k] * cols[d][k]).sum();
        }
        rhs[c] = (0..m).map(|k| w[k] * cols[c][k] * y[k]).sum();
    }
    let (lo, hi) = sym_eig_range(&g, nc);
    let cond = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    // Gaussian elimination with partial pivoting on the normal system.
    let mut aug = g;
    let mut b = rhs;
    let mut perm = [0usize, 1, 2, 3];
    for col in 0..nc {
        let piv = (col..nc)
            .max_by(|&i, &j| {
                aug[perm[i]][col].abs().partial_cmp(&aug[perm[j]][col].abs()).unwrap()
            })
            .unwrap();
        perm.swap(col, piv);
        let prow = perm[col];
        for i in (col + 1)..nc {
            let row = perm[i];
            let f = aug[row][col] / aug[prow][col];
            for j in col..nc {
                aug[row][j] -= f * aug[prow][j];
            }
            b[row] -= f * b[prow];
        }
    }
    let mut sol = vec![0.0f64; nc];
    for col in (0..nc).rev() {
        let row = perm[col];
        let mut v = b[row];
        for j in (col + 1)..nc {
            v -= aug[row][j] * sol[j];
        }
        sol[col] = v / aug[row][col];
    }
    (sol.iter().zip(&scale).map(|(s, sc)| s / sc).collect(), cond)
}

// Real spherical harmonic scale factors for degree 1 and 2 tensor patterns:
// ω_j = √(4π/3) Y_{1,m(j)} with m(x)=1, m(y)=−1, m(z)=0, and for symmetric
// traceless S: 3 Σ S_kℓ ω_k ω_ℓ = k0 S_zz Y₂₀ + k1 (S_xz Y₂₁ + S_yz Y₂₋₁ +
// S_xy Y₂₋₂) + k2 (S_xx−S_yy) Y₂₂.
fn sh_l1_scale() -> f64 {
    (4.0 * std::f64::consts::PI / 3.0).sqrt()
}
fn sh_l2_k0() -> f64 {
    6.0 * (std::f64::consts::PI / 5.0).sqrt()
}
fn sh_l2_k1() -> f64 {
    0.8 * (15.0 * std::f64::consts::PI).sqrt()
}
fn sh_l2_k2() -> f64 {
    0.4 * (15.0 * std::f64::consts::PI).sqrt()
}

const L1_M_OF_J: [i64; 3] = [1, -1, 0];

/// Fit the far-field expansion of `field` over the window.
pub fn extract_expansion(
    grid: &ExteriorGrid,
    field: &DirectorField,
    fit_window: (f64, f64),
) -> Result<FarFieldExpansion, ExpansionError> {
    extract_expansion_from_values(grid, &field.values, field.far_value, fit_window)
}

/// Extraction on raw sampled values (unit norm not required). Useful for
/// synthetic construct-then-extract checks where the sampled expansion is
/// only approximately unit.
pub fn extract_expansion_from_values(
    grid: &ExteriorGrid,
    values: &[Vec3],
    n0: Vec3,
    fit_window: (f64, f64),
) -> Result<FarFieldExpansion, ExpansionError> {
    assert_eq!(values.len(), grid.node_count(), "field length mismatch");
    let shells = sample_shells(grid, values, fit_window)?;
    let m = shells.rows();
    let w: Vec<f64> = (0..m).map(|k| shells.radius(k) * shells.radius(k)).collect();

    // Spherical-harmonic analysis of each component of (n − n₀) per shell.
    let mut coefs: Vec<[ShellCoefficients; 3]> = Vec::with_capacity(m);
    for vals in &shells.values {
        let mut per_comp: [Vec<f64>; 3] = [
            Vec::with_capacity(vals.len()),
            Vec::with_capacity(vals.len()),
            Vec::with_capacity(vals.len()),
        ];
        for v in vals {
            let d = vec3::sub(*v, n0);
            for i in 0..3 {
                per_comp[i].push(d[i]);
            }
        }
        let a = per_comp
            .iter()
            .map(|f| sh_analyze(&grid.angular, f, 2).expect("degree 2 within band limit"))
            .collect::<Vec<_>>();
        coefs.push([a[0].clone(), a[1].clone(), a[2].clone()]);
    }

    // Wall pin: ℓ≤2 coefficients of (n − n₀) on the outermost shell, which
    // the grid places exactly on the sphere r = R_out.
    let shell = grid.shell_len();
    let wall_off = (grid.n_s - 1) * shell;
    let r_wall = grid.r_out;
    let wall: Vec<ShellCoefficients> = (0..3)
        .map(|i| {
            let f: Vec<f64> = (0..shell).map(|q| values[wall_off + q][i] - n0[i]).collect();
            sh_analyze(&grid.angular, &f, 2).expect("degree 2 within band limit")
        })
        .collect();

    let exps_per_l: [&[i32]; 3] = [&[1, 2, 3], &[2, 3], &[3]];
    let sqrt4pi = (4.0 * std::f64::consts::PI).sqrt();

    let mut v0 = vec3::ZERO;
    let mut mono_corr = vec3::ZERO; // fitted ℓ=0 coefficient of 1/r²
    let mut p = [vec3::ZERO; 3];
    let mut dip_corr = [vec3::ZERO; 3]; // fitted ℓ=1 coefficient of 1/r³ per j
    let mut s_tensor = [[[0.0f64; 3]; 3]; 3];
    let mut cond = [1.0f64; 3];
    let mut res_num = [0.0f64; 3];
    let mut res_den = [0.0f64; 3];

    for i in 0..3 {
        for l in 0..=2usize {
            for mm in -(l as i64)..=(l as i64) {
                let pin = wall[i].get(l, mm);
                let raw: Vec<f64> = coefs.iter().map(|a| a[i].get(l, mm)).collect();
                let y: Vec<f64> = (0..m)
                    .map(|k| shells.filter(&raw, k) - pin * shells.pin_col(k, l, r_wall))
                    .collect();
                let (sol, kappa) = fit_powers(&shells, &w, &y, exps_per_l[l], l, r_wall);
                cond[l] = cond[l].max(kappa);
                // Fit residual accumulation.
                for k in 0..m {
                    let yhat: f64 = sol
                        .iter()
                        .zip(exps_per_l[l])
                        .map(|(s, e)| s * shells.col(k, *e, l, r_wall))
                        .sum();
                    res_num[l] += w[k] * (y[k] - yhat) * (y[k] - yhat);
                    res_den[l] += w[k] * y[k] * y[k];
                }
                match l {
                    0 => {
                        v0[i] = sol[0] / sqrt4pi;
                        mono_corr[i] = sol[1];
                    }
                    1 => {
                        let j = L1_M_OF_J.iter().position(|&mj| mj == mm).unwrap();
                        // a_{1,m} = −√(4π/3) p[j][i] / r² + (corr)/r³.
                        p[j][i] = -sol[0] / sh_l1_scale();
                        dip_corr[j][i] = sol[1];
                    }
                    _ => {
                        // 1/r³ coefficient of Y_{2,m}; tensor assembled below.
                        let sv = sol[0];
                        match mm {
                            0 => s_tensor[i][2][2] = sv / sh_l2_k0(),
                            1 => s_tensor[i][0][2] = sv / sh_l2_k1(),
                            -1 => s_tensor[i][1][2] = sv / sh_l2_k1(),
                            -2 => s_tensor[i][0][1] = sv / sh_l2_k1(),
                            _ => s_tensor[i][0][0] = sv / sh_l2_k2(), // temporarily holds S_xx − S_yy
                        }
                    }
                }
            }
        }
    }

    // Assemble symmetric traceless c[i]: S_zz and S_xx−S_yy determine the
    // diagonal; the trace is zeroed exactly.
    let mut c = [[[0.0f64; 3]; 3]; 3];
    for i in 0..3 {
        let szz = s_tensor[i][2][2];
        let diff = s_tensor[i][0][0];
        let sxx = 0.5 * (diff - szz);
        let syy = -szz - sxx;
        c[i][0][0] = sxx;
        c[i][1][1] = syy;
        c[i][2][2] = szz;
        for (k, l) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let v = s_tensor[i][k][l];
            c[i][k][l] = v;
            c[i][l][k] = v;
        }
    }

    // Structure diagnostics against the correction terms.
    let v2 = vec3::norm2(v0);
    let mono_pred = vec3::scale(n0, -sqrt4pi * v2 / 2.0);
    let mono_mis = vec3::norm(vec3::sub(mono_corr, mono_pred)) / vec3::norm(mono_pred).max(1e-12);
    let mut dip_mis = 0.0f64;
    for j in 0..3 {
        let pred = vec3::scale(n0, sh_l1_scale() * vec3::dot(v0, p[j]) / 3.0);
        let mis = vec3::norm(vec3::sub(dip_corr[j], pred)) / vec3::norm(pred).max(1e-12);
        dip_mis = dip_mis.max(mis);
    }

    let per_l_residual = [
        (res_num[0] / res_den[0].max(1e-300)).sqrt(),
        (res_num[1] / res_den[1].max(1e-300)).sqrt(),
        (res_num[2] / res_den[2].max(1e-300)).sqrt(),
    ];
    Ok(FarFieldExpansion {
        n0,
        v0,
        p,
        c,
        fit_window,
        diagnostics: ExpansionDiagnostics {
            per_l_residual,
            condition_numbers: cond,
            conditioning_warning: cond.iter().any(|k| *k > 1e8),
            monopole_correction_mismatch: mono_mis,
            dipole_correction_mismatch: dip_mis,
            v0_dot_n0: vec3::dot(v0, n0),
        },
    })
}

/// Least-squares slope of log ‖n − evaluate(e, ·, include_corr)‖ (mean-square
/// over each sphere) against log r over the fit window. The ℓ≤2 content of
/// (n − model) at the outer wall is the truncation image; it propagates
/// inward as (r/R)^ℓ and is subtracted so that it cannot mask the decay of
/// the genuine remainder. `None` when the remainder sits at roundoff (below
/// 1e-13) and the slope would be noise.
pub fn remainder_slope_with(
    grid: &ExteriorGrid,
    field: &DirectorField,
    e: &FarFieldExpansion,
    include_corr: bool,
) -> Result<Option<f64>, ExpansionError> {
    let shells = sample_shells(grid, &field.values, e.fit_window)?;
    let shell = grid.shell_len();
    let wall_off = (grid.n_s - 1) * shell;
    let r_wall = grid.r_out;
    let img: Vec<ShellCoefficients> = (0..3)
        .map(|i| {
            let f: Vec<f64> = (0..shell)
                .map(|q| {
                    let (th, ph) = grid.angular.nodes[q];
                    let x = vec3::scale(crate::exterior::unit_dir(th, ph), r_wall);
                    field.values[wall_off + q][i] - evaluate_expansion(e, x, include_corr)[i]
                })
                .collect();
            sh_analyze(&grid.angular, &f, 2).expect("degree 2 within band limit")
        })
        .collect();

    // Per-shell residual vectors over the whole sampled set, then the same
    // radial filter the fits use, so the sublattice mode cannot mask decay.
    let diffs: Vec<Vec<Vec3>> = shells
        .values
        .iter()
        .enumerate()
        .map(|(j, vals)| {
            let rj = shells.radii[j];
            let img_vals: Vec<Vec<f64>> = img
                .iter()
                .map(|ci| {
                    let mut b = ShellCoefficients::zeros(2);
                    for l in 0..=2usize {
                        for mm in -(l as i64)..=(l as i64) {
                            b.set(l, mm, ci.get(l, mm) * (rj / r_wall).powi(l as i32));
                        }
                    }
                    sh_synthesize(&b, &grid.angular).expect("degree 2 within band limit")
                })
                .collect();
            vals.iter()
                .enumerate()
                .map(|(q_ang, v)| {
                    let (th, ph) = grid.angular.nodes[q_ang];
                    let x = vec3::scale(crate::exterior::unit_dir(th, ph), rj);
                    let mut pred = evaluate_expansion(e, x, include_corr);
                    for i in 0..3 {
                        pred[i] += img_vals[i][q_ang];
                    }
                    vec3::sub(*v, pred)
                })
                .collect()
        })
        .collect();

    let mut pts = Vec::with_capacity(shells.rows());
    let mut max_res = 0.0f64;
    for k in 0..shells.rows() {
        let (jj, ww) = shells.stencil(k);
        let mut acc = vec3::Accumulator::new();
        for q_ang in 0..grid.shell_len() {
            let mut d = vec3::ZERO;
            for t in 0..3 {
                d = vec3::axpy(d, ww[t], diffs[jj[t]][q_ang]);
            }
            acc.add(grid.angular.weights[q_ang] * vec3::norm2(d));
        }
        let norm = (acc.value() / (4.0 * std::f64::consts::PI)).sqrt();
        max_res = max_res.max(norm);
        pts.push((shells.radius(k).ln(), norm.max(1e-300).ln()));
    }
    if max_res < 1e-13 {
        return Ok(None);
    }
    let n = pts.len() as f64;
    let xb = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let yb = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - xb) * (p.1 - yb)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - xb) * (p.0 - xb)).sum();
    Ok(Some(sxy / sxx))
}

pub fn remainder_slope(
    grid: &ExteriorGrid,
    field: &DirectorField,
    e: &FarFieldExpansion,
) -> Result<Option<f64>, ExpansionError> {
    remainder_slope_with(grid, field, e, true)
}

/// Per-shell spherical-harmonic coefficients as CSV (r, component, l, m,
/// value), for plotting radial decay mode by mode.
pub fn per_shell_coefficients_csv(
    grid: &ExteriorGrid,
    field: &DirectorField,
    fit_window: (f64, f64),
) -> Result<String, ExpansionError> {
    let shells = sample_shells(grid, &field.values, fit_window)?;
    let mut out = String::from("r,component,l,m,coefficient\n");
    // Raw (unfiltered) window shells: this is the plotting diagnostic, so it
    // should show the data as sampled, sublattice ripple included.
    for j in shells.lo..=shells.hi {
        let vals = &shells.values[j];
        for i in 0..3 {
            let f: Vec<f64> = vals.iter().map(|v| v[i] - field.far_value[i]).collect();
            let a = sh_analyze(&grid.angular, &f, 2).expect("degree 2 within band limit");
            for l in 0..=2usize {
                for mm in -(l as i64)..=(l as i64) {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        fmt_g17(shells.radii[j]),
                        i,
                        l,
                        mm,
                        fmt_g17(a.get(l, mm))
                    ));
                }
            }
        }
    }
    Ok(out)
}
