//! Experiment dispatch and artifact emission.
//!
//! Every command writes its numeric payloads with 17 significant digits and
//! a fixed key order, so identical configs produce byte-identical files; the
//! manifest carries wall-clock timings and is the one file excluded from
//! that guarantee. Each payload embeds the config hash it was produced from.

use crate::config::{AnchoringModel, RunConfig};
use nematicol::anchoring::{boundary_data, SurfaceEnergy};
use nematicol::expansion::{
    evaluate_expansion, extract_expansion, FarFieldExpansion,
};
use nematicol::exterior::{build_grid, fmt_g17, gradient_weights, ExteriorGrid, GradientStencils};
use nematicol::fields::DirectorField;
use nematicol::minimizer::{solve_director, SolveReport};
use nematicol::poisson_decay::{manufactured_mode_check, Branch};
use nematicol::sphgrid::build_angular_grid;
use nematicol::torque::{
    corollary_report, landscape_csv, sweep_energy_landscape, torque_identity_check, SweepConfig,
};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum RunError {
    Io(std::io::Error),
    /// Domain-level failure (grid construction, solver, extraction); the
    /// configuration asked for something the modules reject.
    Run(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o: {e}"),
            Self::Run(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Shorthand: any displayable module error becomes a run error with context.
macro_rules! ctx {
    ($what:expr) => {
        |e| RunError::Run(format!(concat!($what, ": {}"), e))
    };
}

/// What the run observed; `main` folds this into the exit code under
/// `--strict` (non-convergence beats verification failure).
#[derive(Debug, Default, Clone, Copy)]
pub struct Outcome {
    pub non_converged: bool,
    pub verification_failed: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let mut out = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Collects written artifacts and closes the run with a manifest.
pub struct Emitter {
    out_dir: PathBuf,
    pub config_sha256: String,
    command: &'static str,
    files: Vec<String>,
    started: Instant,
}

impl Emitter {
    pub fn new(out_dir: &Path, config_sha256: String, command: &'static str) -> Result<Self, RunError> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            config_sha256,
            command,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        std::fs::write(self.out_dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// CSV payloads carry the config hash as a leading comment line.
    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<(), RunError> {
        let text = format!("# config_sha256={}\n{}", self.config_sha256, body);
        self.write(name, &text)
    }

    pub fn read(&self, name: &str) -> Result<String, RunError> {
        std::fs::read_to_string(self.out_dir.join(name)).map_err(RunError::Io)
    }

    pub fn finish(mut self, workers: usize) -> Result<(), RunError> {
        let total_s = self.started.elapsed().as_secs_f64();
        let outputs: Vec<String> = self.files.iter().map(|f| format!("\"{f}\"")).collect();
        let manifest = format!(
            concat!(
                "{{\"tool\":\"nematicol\",\"version\":\"{}\",\"command\":\"{}\",",
                "\"config_sha256\":\"{}\",\"workers\":{},\"outputs\":[{}],",
                "\"timings\":{{\"total_s\":{}}}}}"
            ),
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_sha256,
            workers,
            outputs.join(","),
            fmt_g17(total_s),
        );
        self.write("manifest.json", &manifest)
    }
}

/// Grid, stencils, boundary data, and surface energy from the config.
struct Problem {
    grid: ExteriorGrid,
    st: GradientStencils,
    fs: SurfaceEnergy,
}

fn build_problem(cfg: &RunConfig) -> Result<Problem, RunError> {
    let angular =
        build_angular_grid(cfg.grid.n_theta, cfg.grid.n_phi).map_err(ctx!("angular grid"))?;
    let grid = build_grid(cfg.particle.clone(), cfg.grid.n_s, angular, cfg.grid.r_out)
        .map_err(ctx!("exterior grid"))?;
    let st = gradient_weights(&grid);
    let n_d = boundary_data(cfg.pattern.clone(), &grid).map_err(ctx!("boundary data"))?;
    let fs = match cfg.anchoring {
        AnchoringModel::Hard => SurfaceEnergy::dirichlet(n_d),
        AnchoringModel::Weak { w } => SurfaceEnergy::weak(w, n_d),
    }
    .map_err(ctx!("surface energy"))?;
    Ok(Problem { grid, st, fs })
}

fn solve_report_json(hash: &str, report: &SolveReport) -> String {
    format!(
        concat!(
            "{{\"config_sha256\":\"{}\",\"energy\":{},\"iterations\":{},",
            "\"grad_norm\":{},\"converged\":{},\"stagnated\":{}}}"
        ),
        hash,
        fmt_g17(report.energy),
        report.iterations,
        fmt_g17(report.grad_norm),
        report.converged,
        report.stagnated,
    )
}

fn field_csv(grid: &ExteriorGrid, field: &DirectorField) -> String {
    let mut out = String::with_capacity(grid.node_count() * 64);
    out.push_str("x,y,z,nx,ny,nz\n");
    for (pos, n) in grid.pos.iter().zip(field.values.iter()) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_g17(pos[0]),
            fmt_g17(pos[1]),
            fmt_g17(pos[2]),
            fmt_g17(n[0]),
            fmt_g17(n[1]),
            fmt_g17(n[2]),
        );
    }
    out
}

pub fn cmd_solve(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let p = build_problem(cfg)?;
    let (field, report) =
        solve_director(&p.grid, &p.st, &p.fs, cfg.n0, &cfg.solve).map_err(ctx!("solve"))?;
    em.write_csv("field.csv", &field_csv(&p.grid, &field))?;
    em.write(
        "solve_report.json",
        &solve_report_json(&em.config_sha256, &report),
    )?;
    Ok(Outcome {
        non_converged: !report.converged,
        verification_failed: false,
    })
}

pub fn cmd_extract(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let p = build_problem(cfg)?;
    let (field, report) =
        solve_director(&p.grid, &p.st, &p.fs, cfg.n0, &cfg.solve).map_err(ctx!("solve"))?;
    let expansion =
        extract_expansion(&p.grid, &field, cfg.window).map_err(ctx!("extraction"))?;
    em.write(
        "solve_report.json",
        &solve_report_json(&em.config_sha256, &report),
    )?;
    em.write(
        "expansion.json",
        &format!(
            "{{\"config_sha256\":\"{}\",\"expansion\":{}}}",
            em.config_sha256,
            expansion.to_json()
        ),
    )?;
    Ok(Outcome {
        non_converged: !report.converged,
        verification_failed: false,
    })
}

pub fn cmd_eval_expansion(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    if cfg.eval.points.is_empty() {
        return Err(RunError::Run(
            "eval.points: required for eval-expansion".to_string(),
        ));
    }
    let text = em.read("expansion.json").map_err(|_| {
        RunError::Run("expansion.json not found in the output directory; run extract first".into())
    })?;
    let root: serde_json::Value =
        serde_json::from_str(&text).map_err(ctx!("expansion.json"))?;
    let inner = root
        .get("expansion")
        .ok_or_else(|| RunError::Run("expansion.json: missing \"expansion\" object".into()))?;
    let inner_text = serde_json::to_string(inner).map_err(ctx!("expansion.json"))?;
    let expansion = FarFieldExpansion::from_json(&inner_text).map_err(ctx!("expansion.json"))?;
    let mut body = String::from("x,y,z,nx,ny,nz\n");
    for &x in &cfg.eval.points {
        let n = evaluate_expansion(&expansion, x, cfg.eval.include_correction);
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            fmt_g17(x[0]),
            fmt_g17(x[1]),
            fmt_g17(x[2]),
            fmt_g17(n[0]),
            fmt_g17(n[1]),
            fmt_g17(n[2]),
        );
    }
    em.write_csv("eval.csv", &body)?;
    Ok(Outcome::default())
}

pub fn cmd_sweep(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let p = build_problem(cfg)?;
    let mut sweep_cfg = SweepConfig::new(cfg.solve.clone(), cfg.window);
    sweep_cfg.multi_start = cfg.sweep.multi_start;
    let landscape = sweep_energy_landscape(
        &p.grid,
        &p.st,
        &p.fs,
        cfg.sweep.scheme.clone(),
        &sweep_cfg,
    )
    .map_err(ctx!("sweep"))?;
    em.write_csv("landscape.csv", &landscape_csv(&landscape))?;
    let corollary = corollary_report(Some(&p.grid), &landscape, cfg.sweep.axis_hint);
    em.write(
        "corollary.json",
        &format!(
            "{{\"config_sha256\":\"{}\",\"corollary\":{}}}",
            em.config_sha256,
            corollary.to_json()
        ),
    )?;
    Ok(Outcome {
        non_converged: landscape.samples.iter().any(|s| !s.report.converged),
        verification_failed: false,
    })
}

pub fn cmd_torque_check(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let p = build_problem(cfg)?;
    let sweep_cfg = SweepConfig::new(cfg.solve.clone(), cfg.window);
    let report = torque_identity_check(&p.grid, &p.st, &p.fs, cfg.torque.n0, cfg.torque.h, &sweep_cfg)
        .map_err(ctx!("torque check"))?;
    em.write(
        "torque.json",
        &format!(
            "{{\"config_sha256\":\"{}\",\"threshold\":{},\"torque\":{}}}",
            em.config_sha256,
            fmt_g17(cfg.torque.threshold),
            report.to_json()
        ),
    )?;
    Ok(Outcome {
        non_converged: !report.reliable,
        verification_failed: report.rel_error > cfg.torque.threshold,
    })
}

pub fn cmd_poisson_check(cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let ps = &cfg.poisson;
    let report = manufactured_mode_check(ps.l, ps.d, ps.gamma, ps.r_max, ps.n)
        .map_err(ctx!("poisson check"))?;
    let branch = match report.branch {
        Branch::Outward => "outward",
        Branch::Inward => "inward",
    };
    em.write(
        "poisson.json",
        &format!(
            concat!(
                "{{\"config_sha256\":\"{}\",\"l\":{},\"d\":{},\"gamma\":{},\"r_max\":{},",
                "\"n\":{},\"branch\":\"{}\",\"closed_form_rel_err\":{},\"slope\":{},",
                "\"decay_pass\":{},\"residual_norm\":{}}}"
            ),
            em.config_sha256,
            ps.l,
            ps.d,
            fmt_g17(ps.gamma),
            fmt_g17(ps.r_max),
            ps.n,
            branch,
            fmt_g17(report.rel_err),
            fmt_g17(report.slope),
            report.pass,
            fmt_g17(report.residual_norm),
        ),
    )?;
    Ok(Outcome {
        non_converged: false,
        verification_failed: report.rel_err > ps.threshold || !report.pass,
    })
}

/// Names report may aggregate, in emission order. The manifest is referenced
/// through its stable fields only; its timings stay out of the report.
const REPORT_JSON: [&str; 5] = [
    "solve_report.json",
    "expansion.json",
    "corollary.json",
    "torque.json",
    "poisson.json",
];
const REPORT_CSV: [&str; 3] = ["field.csv", "eval.csv", "landscape.csv"];

pub fn cmd_report(_cfg: &RunConfig, em: &mut Emitter) -> Result<Outcome, RunError> {
    let mut artifacts = Vec::new();
    for name in REPORT_JSON {
        if let Ok(text) = em.read(name) {
            artifacts.push(format!("\"{name}\":{text}"));
        }
    }
    let mut checksums = Vec::new();
    for name in REPORT_JSON.iter().chain(REPORT_CSV.iter()) {
        if let Ok(text) = em.read(name) {
            checksums.push(format!("\"{name}\":\"{}\"", sha256_hex(text.as_bytes())));
        }
    }
    let manifest_ref = match em.read("manifest.json") {
        Ok(text) => {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(ctx!("manifest.json"))?;
            let get = |k: &str| v.get(k).cloned().unwrap_or(serde_json::Value::Null);
            format!(
                "{{\"command\":{},\"config_sha256\":{},\"outputs\":{}}}",
                get("command"),
                get("config_sha256"),
                get("outputs"),
            )
        }
        Err(_) => "null".to_string(),
    };
    em.write(
        "report.json",
        &format!(
            "{{\"config_sha256\":\"{}\",\"run\":{},\"artifacts\":{{{}}},\"checksums\":{{{}}}}}",
            em.config_sha256,
            manifest_ref,
            artifacts.join(","),
            checksums.join(","),
        ),
    )?;
    Ok(Outcome::default())
}
