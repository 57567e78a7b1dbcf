//! Temporary diagnostic probe, not part of the suite.

use nematicol::anchoring::{boundary_data, AnchoringPattern, SurfaceEnergy};
use nematicol::expansion::{
    evaluate_expansion, extract_expansion, per_shell_coefficients_csv, remainder_slope_with,
};
use nematicol::exterior::{build_grid, gradient_weights, ParticleShape};
use nematicol::minimizer::{solve_director, SolveConfig};
use nematicol::sphgrid::build_angular_grid;
use nematicol::vec3;

#[test]
#[ignore]
fn probe_min_remainder() {
    let angular = build_angular_grid(24, 48).unwrap();
    let shape = ParticleShape::Spheroid { a: 1.0, b: 1.5, axis: vec3::EZ };
    let grid = build_grid(shape, 24, angular, 8.0).unwrap();
    let st = gradient_weights(&grid);
    let n_d = boundary_data(AnchoringPattern::Homeotropic, &grid).unwrap();
    let fs = SurfaceEnergy::weak(0.1, n_d).unwrap();
    let cfg = SolveConfig::default();
    let (field, rep) = solve_director(&grid, &st, &fs, vec3::EZ, &cfg).unwrap();
    println!("converged {} iters {} energy {}", rep.converged, rep.iterations, rep.energy);

    let e = extract_expansion(&grid, &field, (2.0, 4.0)).unwrap();
    println!("v0 {:?}  |v0| {}", e.v0, vec3::norm(e.v0));
    println!("p norms {:?}", [vec3::norm(e.p[0]), vec3::norm(e.p[1]), vec3::norm(e.p[2])]);
    println!("diag {:?}", e.diagnostics);
    println!("harm slope {:?}", remainder_slope_with(&grid, &field, &e, false).unwrap());
    println!("full slope {:?}", remainder_slope_with(&grid, &field, &e, true).unwrap());

    // Per-shell ell<=2 coefficient table for the x and z components.
    let csv = per_shell_coefficients_csv(&grid, &field, (2.0, 4.0)).unwrap();
    for line in csv.lines().take(1) {
        println!("{line}");
    }
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (comp, l, m): (usize, usize, i64) =
            (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        let val: f64 = f[4].parse().unwrap();
        if (comp == 0 || comp == 2) && m >= 0 && val.abs() > 1e-9 {
            println!("r {:>7.4} comp {} l {} m {} a {:+.6e}", f[0].parse::<f64>().unwrap(), comp, l, m, val);
        }
    }

    // Shell-by-shell remainder norms (harmonic-only model), by hand.
    let shell = grid.shell_len();
    for k in 0..grid.n_s {
        let s = k as f64 / (grid.n_s - 1) as f64;
        let r = grid.rho_max.powf(1.0 - s) * grid.r_out.powf(s);
        if !(2.0..=4.0).contains(&r) {
            continue;
        }
        // crude nodal norm at the native s-level nearest the sampled sphere
        let mut acc = 0.0;
        for q in 0..shell {
            let x = grid.pos[k * shell + q];
            let pred = evaluate_expansion(&e, x, false);
            acc += grid.angular.weights[q] * vec3::norm2(vec3::sub(field.values[k * shell + q], pred));
        }
        println!("native shell r~{:.3} rms {:.3e}", r, (acc / (4.0 * std::f64::consts::PI)).sqrt());
    }
}
