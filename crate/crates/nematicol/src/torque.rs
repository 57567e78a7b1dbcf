//! Energy landscape over far-field directions and the torque identity.
//!
//! The minimal energy Ê(n₀) as a function of the prescribed alignment at
//! infinity is sampled over S², differentiated by geodesic central
//! differences, and compared against the monopole coefficient through
//! ∇Ê(n₀) = −8π v₀(n₀). Local minima of Ê should carry v₀ ≈ 0 with a purely
//! harmonic far field, Ê is semiconcave, and symmetry axes of the particle
//! force v₀·(u×n₀) = 0; all three are reported as fitted metrics rather than
//! asserted truths.

use crate::anchoring::SurfaceEnergy;
use crate::expansion::{
    extract_expansion_from_values, remainder_slope_with, ExpansionDiagnostics, ExpansionError,
};
use crate::exterior::{fmt_g17, ExteriorGrid, GradientStencils};
use crate::fields::DirectorField;
use crate::minimizer::{solve_director, InitStrategy, MinimizerError, SolveConfig, SolveReport};
use crate::vec3::{self, Vec3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TorqueError {
    #[error("sampling scheme needs at least {need} directions, got {got}")]
    TooFewDirections { need: usize, got: usize },
    #[error("geodesic step {0} outside [1e-3, 1e-1]")]
    StepOutOfRange(f64),
    #[error("direction is not unit: |d| = {0}")]
    NonUnitDirection(f64),
    #[error("spherical gradient requires a local-star landscape with 5 samples")]
    NotLocalStar,
    #[error(transparent)]
    Minimizer(#[from] MinimizerError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
}

/// How the far-field directions are placed on S².
#[derive(Debug, Clone)]
pub enum SamplingScheme {
    /// Golden-angle spiral, near-uniform coverage.
    Fibonacci { n: usize },
    /// Equispaced directions on the great circle normal to `axis`.
    GreatCircle { axis: Vec3, n: usize },
    /// Center plus geodesic steps ±h along the two tangent basis directions,
    /// ordered [center, +a, −a, +b, −b].
    LocalStar { center: Vec3, h: f64 },
}

/// Directions for a sampling scheme, all unit.
pub fn sample_directions(scheme: &SamplingScheme) -> Result<Vec<Vec3>, TorqueError> {
    match scheme {
        SamplingScheme::Fibonacci { n } => {
            if *n < 1 {
                return Err(TorqueError::TooFewDirections { need: 1, got: *n });
            }
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            Ok((0..*n)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / *n as f64;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    [rho * phi.cos(), rho * phi.sin(), z]
                })
                .collect())
        }
        SamplingScheme::GreatCircle { axis, n } => {
            if *n < 1 {
                return Err(TorqueError::TooFewDirections { need: 1, got: *n });
            }
            let axis = vec3::normalize(*axis).ok_or(TorqueError::NonUnitDirection(0.0))?;
            // In-plane frame: prefer the projection of e₃ so that polar
            // particles are swept through their axis; fall back for axis ∥ e₃.
            let b1 = vec3::normalize(vec3::reject(vec3::EZ, axis)).unwrap_or(vec3::EX);
            let b2 = vec3::cross(axis, b1);
            Ok((0..*n)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / *n as f64;
                    vec3::axpy(vec3::scale(b1, t.cos()), t.sin(), b2)
                })
                .collect())
        }
        SamplingScheme::LocalStar { center, h } => {
            if !(1e-3..=1e-1).contains(h) {
                return Err(TorqueError::StepOutOfRange(*h));
            }
            let norm = vec3::norm(*center);
            if (norm - 1.0).abs() > 1e-12 {
                return Err(TorqueError::NonUnitDirection(norm));
            }
            let (ea, eb) = vec3::tangent_basis(*center);
            let step = |e: Vec3, s: f64| {
                vec3::axpy(vec3::scale(*center, h.cos()), s * h.sin(), e)
            };
            Ok(vec![*center, step(ea, 1.0), step(ea, -1.0), step(eb, 1.0), step(eb, -1.0)])
        }
    }
}

/// One landscape sample: far direction, minimal energy, extracted monopole.
#[derive(Debug, Clone)]
pub struct LandscapeSample {
    pub n0: Vec3,
    pub energy: f64,
    pub v0: Vec3,
    pub report: SolveReport,
    pub diagnostics: ExpansionDiagnostics,
    /// Minimizer values, kept for remainder-slope analysis at local minima.
    pub values: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone)]
pub struct EnergyLandscape {
    pub sampling: SamplingScheme,
    pub fit_window: (f64, f64),
    pub samples: Vec<LandscapeSample>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub solve: SolveConfig,
    pub fit_window: (f64, f64),
    /// Second pass warm-starting each direction from its predecessor's
    /// minimizer; the strictly lower energy wins (ties below 1e-10 keep the
    /// constant-init branch, which is exact on degenerate landscapes).
    pub multi_start: bool,
    /// Keep minimizer fields in the samples (needed for remainder slopes).
    pub keep_fields: bool,
}

impl SweepConfig {
    pub fn new(solve: SolveConfig, fit_window: (f64, f64)) -> Self {
        Self { solve, fit_window, multi_start: true, keep_fields: true }
    }
}

fn solve_one(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    fs: &SurfaceEnergy,
    n0: Vec3,
    cfg: &SolveConfig,
    init: InitStrategy,
) -> Result<(DirectorField, SolveReport), MinimizerError> {
    let mut c = cfg.clone();
    c.init = init;
    solve_director(grid, st, fs, n0, &c)
}

/// Minimal energy and far-field extraction per direction. Pass one solves
/// every direction from the constant init in parallel; the optional second
/// pass walks the sample order warm-starting from the previous winner, so
/// branch continuity can undercut a poor basin. Deterministic merges: the
/// winner rule depends only on energies, never on scheduling.
pub fn sweep_energy_landscape(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    fs: &SurfaceEnergy,
    sampling: SamplingScheme,
    cfg: &SweepConfig,
) -> Result<EnergyLandscape, TorqueError> {
    let dirs = sample_directions(&sampling)?;
    let mut winners: Vec<(DirectorField, SolveReport)> = dirs
        .par_iter()
        .map(|&n0| solve_one(grid, st, fs, n0, &cfg.solve, InitStrategy::ConstantN0))
        .collect::<Result<Vec<_>, _>>()?;

    if cfg.multi_start {
        for k in 1..dirs.len() {
            let warm = winners[k - 1].0.values.clone();
            let (field, report) =
                solve_one(grid, st, fs, dirs[k], &cfg.solve, InitStrategy::WarmStart(warm))?;
            // Warm branch must win strictly; ties keep the constant-init
            // field, which is the exact minimizer on flat landscapes.
            if report.energy < winners[k].1.energy - 1e-10 {
                winners[k] = (field, report);
            }
        }
    }

    let mut samples = Vec::with_capacity(dirs.len());
    for (n0, (field, report)) in dirs.into_iter().zip(winners) {
        let e = extract_expansion_from_values(grid, &field.values, n0, cfg.fit_window)?;
        samples.push(LandscapeSample {
            n0,
            energy: report.energy,
            v0: e.v0,
            report,
            diagnostics: e.diagnostics,
            values: cfg.keep_fields.then_some(field.values),
        });
    }
    Ok(EnergyLandscape { sampling, fit_window: cfg.fit_window, samples })
}

/// Tangential gradient of Ê at a local-star center by central differences:
/// [(E(+h eₐ) − E(−h eₐ))/2h] eₐ + likewise for e_b. Tangent to n₀ by
/// construction.
pub fn spherical_gradient(landscape: &EnergyLandscape) -> Result<Vec3, TorqueError> {
    let SamplingScheme::LocalStar { center, h } = &landscape.sampling else {
        return Err(TorqueError::NotLocalStar);
    };
    if landscape.samples.len() != 5 {
        return Err(TorqueError::NotLocalStar);
    }
    let (ea, eb) = vec3::tangent_basis(*center);
    let e = |k: usize| landscape.samples[k].energy;
    let ga = (e(1) - e(2)) / (2.0 * h);
    let gb = (e(3) - e(4)) / (2.0 * h);
    Ok(vec3::axpy(vec3::scale(ea, ga), gb, eb))
}

#[derive(Debug, Clone)]
pub struct TorqueReport {
    pub n0: Vec3,
    pub h: f64,
    pub energy: f64,
    pub grad: Vec3,
    pub v0: Vec3,
    /// v₀ projected onto T_{n₀}S²; the normal part is a discretization
    /// artifact (the continuum theorem gives v₀ ⊥ n₀).
    pub v0_tangent: Vec3,
    /// |grad + 8π v₀_t| / (|grad| + 8π|v₀_t| + 1e−12).
    pub rel_error: f64,
    /// False when any of the five solves failed to converge.
    pub reliable: bool,
}

impl TorqueReport {
    pub fn to_json(&self) -> String {
        let v3 = |v: Vec3| format!("[{},{},{}]", fmt_g17(v[0]), fmt_g17(v[1]), fmt_g17(v[2]));
        format!(
            concat!(
                "{{\"n0\":{},\"h\":{},\"energy\":{},\"grad\":{},\"v0\":{},",
                "\"v0_tangent\":{},\"rel_error\":{},\"reliable\":{}}}"
            ),
            v3(self.n0),
            fmt_g17(self.h),
            fmt_g17(self.energy),
            v3(self.grad),
            v3(self.v0),
            v3(self.v0_tangent),
            fmt_g17(self.rel_error),
            self.reliable,
        )
    }
}

/// The torque identity ∇Ê(n₀) = −8πv₀ at a single direction: a local-star
/// sweep (offsets warm-started from the center solve), central-difference
/// gradient, and the monopole extracted at the center.
pub fn torque_identity_check(
    grid: &ExteriorGrid,
    st: &GradientStencils,
    fs: &SurfaceEnergy,
    n0: Vec3,
    h: f64,
    cfg: &SweepConfig,
) -> Result<TorqueReport, TorqueError> {
    let dirs = sample_directions(&SamplingScheme::LocalStar { center: n0, h })?;
    let (center_field, center_report) =
        solve_one(grid, st, fs, dirs[0], &cfg.solve, cfg.solve.init.clone())?;
    let mut energies = vec![center_report.energy];
    let mut reliable = center_report.converged;
    for &d in &dirs[1..] {
        let (_, rep) = solve_one(
            grid,
            st,
            fs,
            d,
            &cfg.solve,
            InitStrategy::WarmStart(center_field.values.clone()),
        )?;
        reliable &= rep.converged;
        energies.push(rep.energy);
    }
    let (ea, eb) = vec3::tangent_basis(n0);
    let grad = vec3::axpy(
        vec3::scale(ea, (energies[1] - energies[2]) / (2.0 * h)),
        (energies[3] - energies[4]) / (2.0 * h),
        eb,
    );
    let e = extract_expansion_from_values(grid, &center_field.values, n0, cfg.fit_window)?;
    let v0_t = vec3::reject(e.v0, n0);
    let eight_pi = 8.0 * std::f64::consts::PI;
    let resid = vec3::norm(vec3::axpy(grad, eight_pi, v0_t));
    let rel_error = resid / (vec3::norm(grad) + eight_pi * vec3::norm(v0_t) + 1e-12);
    Ok(TorqueReport {
        n0,
        h,
        energy: center_report.energy,
        grad,
        v0: e.v0,
        v0_tangent: v0_t,
        rel_error,
        reliable,
    })
}

/// Neighbor indices on the sample graph, per sampling scheme: ring neighbors
/// on a great circle, six nearest directions for Fibonacci, the offsets for
/// a local star.
fn graph_neighbors(landscape: &EnergyLandscape, k: usize) -> Vec<usize> {
    let n = landscape.samples.len();
    match &landscape.sampling {
        SamplingScheme::GreatCircle { .. } => {
            vec![(k + n - 1) % n, (k + 1) % n]
        }
        SamplingScheme::LocalStar { .. } => {
            if k == 0 {
                (1..n).collect()
            } else {
                vec![0]
            }
        }
        SamplingScheme::Fibonacci { .. } => {
            let mut by_dot: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != k)
                .map(|j| (j, vec3::dot(landscape.samples[k].n0, landscape.samples[j].n0)))
                .collect();
            by_dot.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            by_dot.into_iter().take(6.min(n - 1)).map(|(j, _)| j).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalMinimumReport {
    pub index: usize,
    pub n0: Vec3,
    pub v0_norm: f64,
    /// 8π|v₀|, to compare with the finite-difference noise bound.
    pub eight_pi_v0: f64,
    /// Discrete one-sided slope max (E_neighbor − E_min)/distance: the
    /// resolution floor of the sample graph at this minimum.
    pub noise_bound: f64,
    /// Remainder slope after subtracting only the harmonic terms.
    pub harmonic_remainder_slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CorollaryReport {
    /// max |v₀·(u×n₀)|/max(|v₀|, 1e−6) over samples, for a declared axis u.
    pub axis_alignment: Option<f64>,
    /// max |v₀| over samples (the whole story for a sphere).
    pub max_v0: f64,
    pub minima: Vec<LocalMinimumReport>,
    /// Smallest C ≥ 0 with E(m₀) ≤ E(n₀) − 8πv₀(n₀)·(m₀−n₀) + C|m₀−n₀|²
    /// over all ordered sample pairs.
    pub semiconcavity_c: f64,
    /// Pairs whose required C exceeds 10× the observed energy range.
    pub semiconcavity_violations: usize,
    pub energy_range: f64,
}

impl CorollaryReport {
    pub fn to_json(&self) -> String {
        let minima: Vec<String> = self
            .minima
            .iter()
            .map(|m| {
                format!(
                    concat!(
                        "{{\"index\":{},\"n0\":[{},{},{}],\"v0_norm\":{},",
                        "\"eight_pi_v0\":{},\"noise_bound\":{},",
                        "\"harmonic_remainder_slope\":{}}}"
                    ),
                    m.index,
                    fmt_g17(m.n0[0]),
                    fmt_g17(m.n0[1]),
                    fmt_g17(m.n0[2]),
                    fmt_g17(m.v0_norm),
                    fmt_g17(m.eight_pi_v0),
                    fmt_g17(m.noise_bound),
                    m.harmonic_remainder_slope.map_or("null".into(), |s| fmt_g17(s)),
                )
            })
            .collect();
        format!(
            concat!(
                "{{\"axis_alignment\":{},\"max_v0\":{},\"minima\":[{}],",
                "\"semiconcavity_c\":{},\"semiconcavity_violations\":{},",
                "\"energy_range\":{}}}"
            ),
            self.axis_alignment.map_or("null".into(), |a| fmt_g17(a)),
            fmt_g17(self.max_v0),
            minima.join(","),
            fmt_g17(self.semiconcavity_c),
            self.semiconcavity_violations,
            fmt_g17(self.energy_range),
        )
    }
}

/// Corollary metrics over a swept landscape: axis alignment of v₀, graph
/// local minima with their noise bounds and harmonic-only remainder slopes,
/// and the fitted semiconcavity constant. The grid is needed only for the
/// remainder slopes; pass `None` for synthetic landscapes without fields.
pub fn corollary_report(
    grid: Option<&ExteriorGrid>,
    landscape: &EnergyLandscape,
    axis: Option<Vec3>,
) -> CorollaryReport {
    let samples = &landscape.samples;
    let n = samples.len();

    let axis_alignment = axis.map(|u| {
        samples
            .iter()
            .map(|s| {
                vec3::dot(s.v0, vec3::cross(u, s.n0)).abs() / vec3::norm(s.v0).max(1e-6)
            })
            .fold(0.0f64, f64::max)
    });
    let max_v0 = samples.iter().map(|s| vec3::norm(s.v0)).fold(0.0f64, f64::max);

    let mut minima = Vec::new();
    for k in 0..n {
        let neighbors = graph_neighbors(landscape, k);
        if neighbors.is_empty() {
            continue;
        }
        if neighbors.iter().any(|&j| samples[j].energy < samples[k].energy) {
            continue;
        }
        let noise_bound = neighbors
            .iter()
            .map(|&j| {
                let d = vec3::norm(vec3::sub(samples[j].n0, samples[k].n0));
                (samples[j].energy - samples[k].energy) / d.max(1e-12)
            })
            .fold(0.0f64, f64::max);
        let harmonic_remainder_slope = match (grid, &samples[k].values) {
            (Some(g), Some(values)) => harmonic_slope(g, values, samples[k].n0, landscape.fit_window),
            _ => None,
        };
        let v0_norm = vec3::norm(samples[k].v0);
        minima.push(LocalMinimumReport {
            index: k,
            n0: samples[k].n0,
            v0_norm,
            eight_pi_v0: 8.0 * std::f64::consts::PI * v0_norm,
            noise_bound,
            harmonic_remainder_slope,
        });
    }

    let e_min = samples.iter().map(|s| s.energy).fold(f64::INFINITY, f64::min);
    let e_max = samples.iter().map(|s| s.energy).fold(f64::NEG_INFINITY, f64::max);
    let energy_range = e_max - e_min;
    let c_max = 10.0 * energy_range;
    let eight_pi = 8.0 * std::f64::consts::PI;
    let mut c_fit = 0.0f64;
    let mut violations = 0usize;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let delta = vec3::sub(samples[b].n0, samples[a].n0);
            let d2 = vec3::norm2(delta);
            if d2 < 1e-24 {
                continue;
            }
            let needed = (samples[b].energy - samples[a].energy
                + eight_pi * vec3::dot(samples[a].v0, delta))
                / d2;
            c_fit = c_fit.max(needed);
            if needed > c_max {
                violations += 1;
            }
        }
    }
    CorollaryReport {
        axis_alignment,
        max_v0,
        minima,
        semiconcavity_c: c_fit,
        semiconcavity_violations: violations,
        energy_range,
    }
}

fn harmonic_slope(
    grid: &ExteriorGrid,
    values: &[Vec3],
    n0: Vec3,
    window: (f64, f64),
) -> Option<f64> {
    let e = extract_expansion_from_values(grid, values, n0, window).ok()?;
    let field = DirectorField::new(grid, values.to_vec(), n0).ok()?;
    remainder_slope_with(grid, &field, &e, false).ok().flatten()
}

/// Landscape CSV: one row per sample.
pub fn landscape_csv(landscape: &EnergyLandscape) -> String {
    let mut out = String::from("n0x,n0y,n0z,E,v0x,v0y,v0z,converged\n");
    for s in &landscape.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_g17(s.n0[0]),
            fmt_g17(s.n0[1]),
            fmt_g17(s.n0[2]),
            fmt_g17(s.energy),
            fmt_g17(s.v0[0]),
            fmt_g17(s.v0[1]),
            fmt_g17(s.v0[2]),
            s.report.converged,
        ));
    }
    out
}
