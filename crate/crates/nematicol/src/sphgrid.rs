//! Angular quadrature on S² and real spherical-harmonic transforms.
//!
//! The grid is a tensor product: Gauss–Legendre nodes in μ = cos θ crossed
//! with uniform φ. This makes the quadrature exact for integrands that are
//! polynomials of degree ≤ 2·n_theta−1 in μ times trigonometric polynomials
//! of degree ≤ n_phi−1 in φ, which is what pins the band limit
//!
//!   l_max = min(n_theta − 1, ⌊(n_phi − 1)/2⌋):
//!
//! products Y_ℓm·Y_ℓ'm' with ℓ,ℓ' ≤ l_max are then integrated exactly, so
//! analysis inverts synthesis on band-limited data to roundoff.
//!
//! Harmonics are real and fully normalized, without the Condon–Shortley
//! phase: Y_00 = 1/√(4π), Y_10 = √(3/4π)·ω_z, Y_1,±1 = √(3/4π)·(ω_x, ω_y).

use crate::vec3::Vec3;
use thiserror::Error;

use std::f64::consts::PI;

#[derive(Debug, Error, PartialEq)]
pub enum SphGridError {
    #[error("n_theta must be at least 2, got {0}")]
    TooFewTheta(usize),
    #[error("n_phi must be at least 4, got {0}")]
    TooFewPhi(usize),
    #[error("requested band limit {requested} exceeds grid band limit {grid}")]
    BandLimit { requested: usize, grid: usize },
    #[error("field has {got} samples, grid has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
}

/// Gauss–Legendre × uniform-φ quadrature grid on the unit sphere.
///
/// Node ordering is φ fastest, then θ (ascending from the north pole), so the
/// flat index is `q = i_theta * n_phi + i_phi`. Weights include the full
/// surface measure: Σ weights = 4π.
#[derive(Debug, Clone)]
pub struct AngularGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Largest degree for which analysis/synthesis round-trip exactly.
    pub l_max: usize,
    /// (θ, φ) per node, radians.
    pub nodes: Vec<(f64, f64)>,
    /// Quadrature weight per node, all positive.
    pub weights: Vec<f64>,
    /// Distinct θ values, ascending from the north pole.
    pub thetas: Vec<f64>,
    /// Distinct φ values, uniform on [0, 2π).
    pub phis: Vec<f64>,
    /// Normalized associated Legendre values per θ row, triangular (ℓ,m≥0).
    leg: Vec<f64>,
    /// cos(mφ), sin(mφ) per φ column, m = 0..=l_max.
    cos_m: Vec<f64>,
    sin_m: Vec<f64>,
}

impl AngularGrid {
    #[inline]
    pub fn node_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    #[inline]
    pub fn theta(&self, i_theta: usize) -> f64 {
        self.thetas[i_theta]
    }

    #[inline]
    pub fn phi(&self, i_phi: usize) -> f64 {
        self.phis[i_phi]
    }

    /// Unit direction vector of node `q`.
    #[inline]
    pub fn omega(&self, q: usize) -> Vec3 {
        let (theta, phi) = self.nodes[q];
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    #[inline]
    fn tri_len(&self) -> usize {
        (self.l_max + 1) * (self.l_max + 2) / 2
    }

    /// Y_ℓm at node q from the cached tables; ℓ ≤ l_max.
    #[inline]
    pub fn harmonic_at(&self, q: usize, l: usize, m: i64) -> f64 {
        let it = q / self.n_phi;
        let ip = q % self.n_phi;
        let leg = &self.leg[it * self.tri_len()..];
        let ma = m.unsigned_abs() as usize;
        let p = leg[l * (l + 1) / 2 + ma];
        if m == 0 {
            p
        } else if m > 0 {
            std::f64::consts::SQRT_2 * p * self.cos_m[ip * (self.l_max + 1) + ma]
        } else {
            std::f64::consts::SQRT_2 * p * self.sin_m[ip * (self.l_max + 1) + ma]
        }
    }
}

/// Real spherical-harmonic coefficients of a scalar shell field.
///
/// Flat storage indexed by `l*l + l + m`; length (l_max+1)².
#[derive(Debug, Clone, PartialEq)]
pub struct ShellCoefficients {
    pub l_max: usize,
    pub a: Vec<f64>,
}

impl ShellCoefficients {
    pub fn zeros(l_max: usize) -> Self {
        Self {
            l_max,
            a: vec![0.0; (l_max + 1) * (l_max + 1)],
        }
    }

    #[inline]
    pub fn idx(l: usize, m: i64) -> usize {
        debug_assert!(m.unsigned_abs() as usize <= l);
        (l * l + l) as usize + (l as i64 + m) as usize - l
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.a[Self::idx(l, m)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: i64, v: f64) {
        self.a[Self::idx(l, m)] = v;
    }

    /// Σ a² — equals the quadrature of f² for band-limited f (Parseval).
    pub fn power(&self) -> f64 {
        crate::vec3::compensated_sum(self.a.iter().map(|x| x * x))
    }
}

/// Gauss–Legendre nodes (ascending) and weights on [-1, 1].
///
/// Newton iteration on P_n with the Tricomi initial guess; converges in < 10
/// iterations to machine precision for any practical n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = (n + 1) / 2;
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (p, dp) = legendre_pair(n, z);
        z -= p / dp;
        let (_, dp) = legendre_pair(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // z starts near +1 for i=0; store ascending.
        x[n - 1 - i] = z;
        x[i] = -z;
        w[n - 1 - i] = wi;
        w[i] = wi;
    }
    (x, w)
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Fully normalized associated Legendre values P̄_ℓm(cos θ) for ℓ ≤ l_max,
/// 0 ≤ m ≤ ℓ, no Condon–Shortley phase, triangular layout ℓ(ℓ+1)/2 + m.
/// Normalized so that Y_ℓ0 = P̄_ℓ0 and Y_ℓ,±m = √2·P̄_ℓm·{cos,sin}(mφ) are
/// orthonormal over the sphere.
fn legendre_table(l_max: usize, theta: f64, out: &mut [f64]) {
    let (s, x) = theta.sin_cos();
    out[0] = (1.0 / (4.0 * PI)).sqrt();
    if l_max == 0 {
        return;
    }
    // Diagonal P̄_mm, then the first off-diagonal, then upward in ℓ.
    for m in 1..=l_max {
        let mf = m as f64;
        out[m * (m + 1) / 2 + m] =
            ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * out[(m - 1) * m / 2 + (m - 1)];
    }
    for m in 0..l_max {
        let mf = m as f64;
        out[(m + 1) * (m + 2) / 2 + m] = (2.0 * mf + 3.0).sqrt() * x * out[m * (m + 1) / 2 + m];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            out[l * (l + 1) / 2 + m] = a
                * (x * out[(l - 1) * l / 2 + m] - b * out[(l - 2) * (l - 1) / 2 + m]);
        }
    }
}

/// Single harmonic evaluation; convenience for tests and diagnostics.
pub fn sph_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let mut tab = vec![0.0; (l + 1) * (l + 2) / 2];
    legendre_table(l, theta, &mut tab);
    let ma = m.unsigned_abs() as usize;
    let p = tab[l * (l + 1) / 2 + ma];
    if m == 0 {
        p
    } else if m > 0 {
        std::f64::consts::SQRT_2 * p * (ma as f64 * phi).cos()
    } else {
        std::f64::consts::SQRT_2 * p * (ma as f64 * phi).sin()
    }
}

/// Build the quadrature grid. Requires n_theta ≥ 2 and n_phi ≥ 4 so that the
/// band limit is at least 1 (enough to represent a direction field's leading
/// anisotropy).
pub fn build_angular_grid(n_theta: usize, n_phi: usize) -> Result<AngularGrid, SphGridError> {
    if n_theta < 2 {
        return Err(SphGridError::TooFewTheta(n_theta));
    }
    if n_phi < 4 {
        return Err(SphGridError::TooFewPhi(n_phi));
    }
    let l_max = (n_theta - 1).min((n_phi - 1) / 2);
    let (mu, w_mu) = gauss_legendre(n_theta);
    // μ ascending ⇒ θ descending; store θ ascending (north pole first).
    let thetas: Vec<f64> = mu.iter().rev().map(|&m| m.acos()).collect();
    let w_theta: Vec<f64> = w_mu.iter().rev().copied().collect();
    let phis: Vec<f64> = (0..n_phi)
        .map(|i| 2.0 * PI * i as f64 / n_phi as f64)
        .collect();
    let w_phi = 2.0 * PI / n_phi as f64;

    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    for it in 0..n_theta {
        for ip in 0..n_phi {
            nodes.push((thetas[it], phis[ip]));
            weights.push(w_theta[it] * w_phi);
        }
    }

    let tri = (l_max + 1) * (l_max + 2) / 2;
    let mut leg = vec![0.0; n_theta * tri];
    for (it, &theta) in thetas.iter().enumerate() {
        legendre_table(l_max, theta, &mut leg[it * tri..(it + 1) * tri]);
    }
    let mut cos_m = vec![0.0; n_phi * (l_max + 1)];
    let mut sin_m = vec![0.0; n_phi * (l_max + 1)];
    for (ip, &phi) in phis.iter().enumerate() {
        for m in 0..=l_max {
            cos_m[ip * (l_max + 1) + m] = (m as f64 * phi).cos();
            sin_m[ip * (l_max + 1) + m] = (m as f64 * phi).sin();
        }
    }

    Ok(AngularGrid {
        n_theta,
        n_phi,
        l_max,
        nodes,
        weights,
        thetas,
        phis,
        leg,
        cos_m,
        sin_m,
    })
}

/// Forward transform: a_ℓm = Σ_q w_q f_q Y_ℓm(ω_q) for ℓ ≤ l_max.
///
/// Node loop in flat-index order, coefficient loop ℓ outer / m ascending, so
/// roundoff is reproducible across runs and worker counts.
pub fn sh_analyze(
    grid: &AngularGrid,
    f: &[f64],
    l_max: usize,
) -> Result<ShellCoefficients, SphGridError> {
    if l_max > grid.l_max {
        return Err(SphGridError::BandLimit {
            requested: l_max,
            grid: grid.l_max,
        });
    }
    if f.len() != grid.node_count() {
        return Err(SphGridError::LengthMismatch {
            got: f.len(),
            expected: grid.node_count(),
        });
    }
    let mut coeffs = ShellCoefficients::zeros(l_max);
    for q in 0..grid.node_count() {
        let wf = grid.weights[q] * f[q];
        if wf == 0.0 {
            continue;
        }
        for l in 0..=l_max {
            for m in -(l as i64)..=(l as i64) {
                coeffs.a[ShellCoefficients::idx(l, m)] += wf * grid.harmonic_at(q, l, m);
            }
        }
    }
    Ok(coeffs)
}

/// Inverse transform: f_q = Σ_ℓm a_ℓm Y_ℓm(ω_q), ℓ outer, m ascending.
pub fn sh_synthesize(
    coeffs: &ShellCoefficients,
    grid: &AngularGrid,
) -> Result<Vec<f64>, SphGridError> {
    if coeffs.l_max > grid.l_max {
        return Err(SphGridError::BandLimit {
            requested: coeffs.l_max,
            grid: grid.l_max,
        });
    }
    let mut f = vec![0.0; grid.node_count()];
    for (q, fq) in f.iter_mut().enumerate() {
        let mut acc = 0.0;
        for l in 0..=coeffs.l_max {
            for m in -(l as i64)..=(l as i64) {
                acc += coeffs.a[ShellCoefficients::idx(l, m)] * grid.harmonic_at(q, l, m);
            }
        }
        *fq = acc;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FOUR_PI: f64 = 4.0 * PI;

    #[test]
    fn minimal_grid_weight_sum() {
        let g = build_angular_grid(2, 4).unwrap();
        assert_eq!(g.node_count(), 8);
        let sum: f64 = g.weights.iter().sum();
        assert!((sum - FOUR_PI).abs() / FOUR_PI < 1e-12);
        assert!(g.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn band_limit_formula() {
        let g = build_angular_grid(16, 32) .unwrap();
        assert_eq!(g.l_max, 15);
        let g = build_angular_grid(8, 64).unwrap();
        assert_eq!(g.l_max, 7);
        let g = build_angular_grid(64, 9).unwrap();
        assert_eq!(g.l_max, 4);
    }

    #[test]
    fn undersized_grid_rejected() {
        assert_eq!(
            build_angular_grid(1, 4).unwrap_err(),
            SphGridError::TooFewTheta(1)
        );
        assert_eq!(
            build_angular_grid(4, 3).unwrap_err(),
            SphGridError::TooFewPhi(3)
        );
    }

    #[test]
    fn gram_matrix_is_identity() {
        let g = build_angular_grid(16, 32).unwrap();
        let n = (g.l_max + 1) * (g.l_max + 1);
        // Gram G_{ij} = Σ_q w_q Y_i(ω_q) Y_j(ω_q) over all pairs ℓ,ℓ' ≤ l_max.
        let mut ys = vec![vec![0.0; g.node_count()]; n];
        for l in 0..=g.l_max {
            for m in -(l as i64)..=(l as i64) {
                let idx = ShellCoefficients::idx(l, m);
                for q in 0..g.node_count() {
                    ys[idx][q] = g.harmonic_at(q, l, m);
                }
            }
        }
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                let dot: f64 = (0..g.node_count())
                    .map(|q| g.weights[q] * ys[i][q] * ys[j][q])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        assert!(worst < 1e-10, "worst Gram deviation {worst:e}");
    }

    #[test]
    fn analyze_constant_and_dipole() {
        let g = build_angular_grid(16, 32).unwrap();
        let ones = vec![1.0; g.node_count()];
        let c = sh_analyze(&g, &ones, 2).unwrap();
        assert!((c.get(0, 0) - FOUR_PI.sqrt()).abs() < 1e-12); // √4π ≈ 3.5449077
        let wz: Vec<f64> = (0..g.node_count()).map(|q| g.omega(q)[2]).collect();
        let c = sh_analyze(&g, &wz, 2).unwrap();
        assert!((c.get(1, 0) - (FOUR_PI / 3.0).sqrt()).abs() < 1e-12); // ≈ 2.0466534
        for l in 0..=2usize {
            for m in -(l as i64)..=(l as i64) {
                if (l, m) != (1, 0) {
                    assert!(c.get(l, m).abs() < 1e-12, "leak at ({l},{m})");
                }
            }
        }
    }

    #[test]
    fn analyze_sampled_harmonic() {
        let g = build_angular_grid(16, 32).unwrap();
        let y21: Vec<f64> = (0..g.node_count())
            .map(|q| {
                let (t, p) = g.nodes[q];
                sph_harmonic(2, 1, t, p)
            })
            .collect();
        let c = sh_analyze(&g, &y21, g.l_max).unwrap();
        assert!((c.get(2, 1) - 1.0).abs() < 1e-10);
        for l in 0..=g.l_max {
            for m in -(l as i64)..=(l as i64) {
                if (l, m) != (2, 1) {
                    assert!(c.get(l, m).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn synthesize_analyze_round_trip() {
        let g = build_angular_grid(12, 28).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut c = ShellCoefficients::zeros(g.l_max);
        for a in c.a.iter_mut() {
            *a = rng.gen_range(-1.0..1.0);
        }
        let f = sh_synthesize(&c, &g).unwrap();
        let c2 = sh_analyze(&g, &f, g.l_max).unwrap();
        let worst = c
            .a
            .iter()
            .zip(&c2.a)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-10, "round-trip error {worst:e}");

        // Parseval on the same band-limited field.
        let quad: f64 = (0..g.node_count()).map(|q| g.weights[q] * f[q] * f[q]).sum();
        assert!((quad - c.power()).abs() / quad < 1e-10);
    }

    #[test]
    fn analyze_is_linear() {
        let g = build_angular_grid(10, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = f.iter().zip(&h).map(|(a, b)| alpha * a + beta * b).collect();
        let cf = sh_analyze(&g, &f, 3).unwrap();
        let ch = sh_analyze(&g, &h, 3).unwrap();
        let cc = sh_analyze(&g, &combo, 3).unwrap();
        for i in 0..cc.a.len() {
            assert!((cc.a[i] - (alpha * cf.a[i] + beta * ch.a[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn band_limit_overflow_rejected() {
        let g = build_angular_grid(4, 8).unwrap();
        let f = vec![0.0; g.node_count()];
        assert!(matches!(
            sh_analyze(&g, &f, g.l_max + 1),
            Err(SphGridError::BandLimit { .. })
        ));
    }
}
