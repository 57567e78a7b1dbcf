//! Run configuration: a single TOML document with sections mirroring the
//! library modules, hand-walked so every diagnostic names the offending key
//! path and unknown keys are rejected instead of silently ignored.

use nematicol::anchoring::AnchoringPattern;
use nematicol::exterior::ParticleShape;
use nematicol::minimizer::{OuterBc, SolveConfig};
use nematicol::torque::SamplingScheme;
use nematicol::vec3::{self, Vec3};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug)]
pub enum ConfigError {
    Syntax(String),
    UnknownKey(String),
    Type { path: String, expected: &'static str },
    Range { path: String, what: String },
    Missing { path: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax(e) => write!(f, "config syntax: {e}"),
            Self::UnknownKey(path) => write!(f, "unknown key: {path}"),
            Self::Type { path, expected } => write!(f, "{path}: expected {expected}"),
            Self::Range { path, what } => write!(f, "{path}: {what}"),
            Self::Missing { path } => write!(f, "{path}: required key is missing"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub n_s: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub r_out: f64,
}

#[derive(Debug, Clone)]
pub enum AnchoringModel {
    Hard,
    Weak { w: f64 },
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub points: Vec<Vec3>,
    pub include_correction: bool,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub scheme: SamplingScheme,
    pub multi_start: bool,
    pub axis_hint: Option<Vec3>,
}

#[derive(Debug, Clone, Copy)]
pub struct TorqueSpec {
    pub n0: Vec3,
    pub h: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PoissonSpec {
    pub l: usize,
    pub d: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub n: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub particle: ParticleShape,
    pub anchoring: AnchoringModel,
    pub pattern: AnchoringPattern,
    pub grid: GridSpec,
    pub n0: Vec3,
    pub solve: SolveConfig,
    pub window: (f64, f64),
    pub eval: EvalSpec,
    pub sweep: SweepSpec,
    pub torque: TorqueSpec,
    pub poisson: PoissonSpec,
}

/// One section of the document; `table == None` means the section is absent
/// and every lookup falls back to its default.
struct Section<'a> {
    prefix: &'static str,
    table: Option<&'a toml::value::Table>,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        format!("{}.{}", self.prefix, key)
    }

    fn get(&mut self, key: &str) -> Option<&'a toml::Value> {
        self.seen.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn number(&self, v: &toml::Value, key: &str) -> Result<f64, ConfigError> {
        match v {
            toml::Value::Float(x) => Ok(*x),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(ConfigError::Type {
                path: self.path(key),
                expected: "number",
            }),
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => self.number(v, key),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(self.number(v, key)?)),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(ConfigError::Type {
                path: self.path(key),
                expected: "non-negative integer",
            }),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(ConfigError::Type {
                path: self.path(key),
                expected: "non-negative integer",
            }),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(toml::Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(ConfigError::Type {
                path: self.path(key),
                expected: "boolean",
            }),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(ConfigError::Type {
                path: self.path(key),
                expected: "string",
            }),
        }
    }

    fn vec3_value(&self, v: &toml::Value, key: &str) -> Result<Vec3, ConfigError> {
        let arr = v.as_array().ok_or(ConfigError::Type {
            path: self.path(key),
            expected: "array of 3 numbers",
        })?;
        if arr.len() != 3 {
            return Err(ConfigError::Type {
                path: self.path(key),
                expected: "array of 3 numbers",
            });
        }
        Ok([
            self.number(&arr[0], key)?,
            self.number(&arr[1], key)?,
            self.number(&arr[2], key)?,
        ])
    }

    fn opt_vec3(&mut self, key: &str) -> Result<Option<Vec3>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => Ok(Some(self.vec3_value(v, key)?)),
        }
    }

    /// Direction keys are normalized; the zero vector is a range error.
    fn direction(&mut self, key: &str, default: Vec3) -> Result<Vec3, ConfigError> {
        let raw = self.opt_vec3(key)?.unwrap_or(default);
        vec3::normalize(raw).ok_or(ConfigError::Range {
            path: self.path(key),
            what: "direction must be nonzero".to_string(),
        })
    }

    fn points(&mut self, key: &str) -> Result<Vec<Vec3>, ConfigError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => {
                let arr = v.as_array().ok_or(ConfigError::Type {
                    path: self.path(key),
                    expected: "array of [x, y, z] points",
                })?;
                arr.iter().map(|p| self.vec3_value(p, key)).collect()
            }
        }
    }

    fn positive(&self, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(ConfigError::Range {
                path: self.path(key),
                what: format!("must be positive, got {v}"),
            })
        }
    }

    fn reject(&self, key: &str, what: &str) -> ConfigError {
        ConfigError::Range {
            path: self.path(key),
            what: what.to_string(),
        }
    }

    /// Every key the walker never asked about is unknown; report the
    /// lexicographically first for a deterministic message.
    fn finish(self) -> Result<(), ConfigError> {
        if let Some(t) = self.table {
            let mut unknown: Vec<&String> =
                t.keys().filter(|k| !self.seen.contains(*k)).collect();
            unknown.sort();
            if let Some(k) = unknown.first() {
                return Err(ConfigError::UnknownKey(self.path(k)));
            }
        }
        Ok(())
    }
}

fn section<'a>(
    root: &'a toml::value::Table,
    name: &'static str,
) -> Result<Section<'a>, ConfigError> {
    let table = match root.get(name) {
        None => None,
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => {
            return Err(ConfigError::Type {
                path: name.to_string(),
                expected: "table",
            })
        }
    };
    Ok(Section {
        prefix: name,
        table,
        seen: BTreeSet::new(),
    })
}

const SECTIONS: [&str; 9] = [
    "particle", "anchoring", "grid", "solve", "extract", "eval", "sweep", "torque", "poisson",
];

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let root: toml::value::Table =
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    {
        let mut unknown: Vec<&String> = root
            .keys()
            .filter(|k| !SECTIONS.contains(&k.as_str()))
            .collect();
        unknown.sort();
        if let Some(k) = unknown.first() {
            return Err(ConfigError::UnknownKey((*k).clone()));
        }
    }

    let mut s = section(&root, "particle")?;
    let kind = s.string("kind", "sphere")?;
    let particle = match kind.as_str() {
        "sphere" => {
            for key in ["a", "b", "axis"] {
                if s.get(key).is_some() {
                    return Err(s.reject(key, "only valid for a spheroid particle"));
                }
            }
            ParticleShape::Sphere
        }
        "spheroid" => {
            let a = s
                .opt_f64("a")?
                .ok_or(ConfigError::Missing { path: s.path("a") })?;
            let b = s
                .opt_f64("b")?
                .ok_or(ConfigError::Missing { path: s.path("b") })?;
            s.positive("a", a)?;
            s.positive("b", b)?;
            let axis = s.direction("axis", vec3::EZ)?;
            ParticleShape::Spheroid { a, b, axis }
        }
        other => {
            return Err(s.reject("kind", &format!("unknown particle kind \"{other}\"")));
        }
    };
    s.finish()?;

    let mut s = section(&root, "anchoring")?;
    let model = s.string("model", "weak")?;
    let w = s.opt_f64("w")?;
    let anchoring = match model.as_str() {
        "hard" => {
            if w.is_some() {
                return Err(s.reject("w", "only valid for the weak model"));
            }
            AnchoringModel::Hard
        }
        "weak" => {
            let w = w.unwrap_or(1.0);
            if w < 0.0 {
                return Err(s.reject("w", &format!("must be nonnegative, got {w}")));
            }
            AnchoringModel::Weak { w }
        }
        other => {
            return Err(s.reject("model", &format!("unknown anchoring model \"{other}\"")));
        }
    };
    let pattern_name = s.string("pattern", "homeotropic")?;
    let pattern = match pattern_name.as_str() {
        "homeotropic" => {
            for key in ["direction", "angle", "tilt_axis"] {
                if s.get(key).is_some() {
                    return Err(s.reject(key, "not valid for the homeotropic pattern"));
                }
            }
            AnchoringPattern::Homeotropic
        }
        "uniform" => AnchoringPattern::Uniform(s.direction("direction", vec3::EZ)?),
        "tilted" => AnchoringPattern::Tilted {
            angle: s.f64("angle", 0.0)?,
            axis: s.direction("tilt_axis", vec3::EZ)?,
        },
        other => {
            return Err(s.reject("pattern", &format!("unknown anchoring pattern \"{other}\"")));
        }
    };
    s.finish()?;

    let mut s = section(&root, "grid")?;
    let grid = GridSpec {
        n_s: s.usize("n_s", 32)?,
        n_theta: s.usize("n_theta", 16)?,
        n_phi: s.usize("n_phi", 32)?,
        r_out: {
            let v = s.f64("r_out", 16.0)?;
            s.positive("r_out", v)?
        },
    };
    if grid.n_s < 8 {
        return Err(s.reject("n_s", &format!("need at least 8 shells, got {}", grid.n_s)));
    }
    if grid.n_theta < 3 {
        return Err(s.reject("n_theta", &format!("need at least 3 nodes, got {}", grid.n_theta)));
    }
    if grid.n_phi < 4 {
        return Err(s.reject("n_phi", &format!("need at least 4 nodes, got {}", grid.n_phi)));
    }
    s.finish()?;

    let mut s = section(&root, "solve")?;
    let n0 = s.direction("n0", vec3::EZ)?;
    let max_iters = s.usize("max_iters", 50_000)?;
    if max_iters == 0 {
        return Err(s.reject("max_iters", "must be at least 1"));
    }
    let grad_tol = s.opt_f64("grad_tol")?;
    if let Some(t) = grad_tol {
        s.positive("grad_tol", t)?;
    }
    let step0 = s.f64("step0", 0.05)?;
    s.positive("step0", step0)?;
    let outer_bc = match s.string("outer_bc", "dirichlet-n0")?.as_str() {
        "dirichlet-n0" => OuterBc::DirichletN0,
        "monopole-robin" => OuterBc::MonopoleRobin,
        other => {
            return Err(s.reject("outer_bc", &format!("unknown boundary condition \"{other}\"")));
        }
    };
    let seed = s.u64("seed", 0)?;
    let solve = SolveConfig {
        outer_bc,
        max_iters,
        grad_tol,
        step0,
        seed,
        ..SolveConfig::default()
    };
    s.finish()?;

    let mut s = section(&root, "extract")?;
    let window = match s.get("window") {
        None => (grid.r_out / 4.0, grid.r_out / 2.0),
        Some(v) => {
            let arr = v.as_array().filter(|a| a.len() == 2).ok_or(ConfigError::Type {
                path: s.path("window"),
                expected: "array of 2 numbers",
            })?;
            (s.number(&arr[0], "window")?, s.number(&arr[1], "window")?)
        }
    };
    if !(window.0 > 0.0 && window.1 > window.0) {
        return Err(s.reject(
            "window",
            &format!("need 0 < r_min < r_max, got [{}, {}]", window.0, window.1),
        ));
    }
    s.finish()?;

    let mut s = section(&root, "eval")?;
    let eval = EvalSpec {
        points: s.points("points")?,
        include_correction: s.bool("include_correction", true)?,
    };
    s.finish()?;

    let mut s = section(&root, "sweep")?;
    let scheme_name = s.string("scheme", "fibonacci")?;
    let scheme = match scheme_name.as_str() {
        "fibonacci" => SamplingScheme::Fibonacci {
            n: s.usize("n", 12)?,
        },
        "great-circle" => SamplingScheme::GreatCircle {
            axis: s.direction("axis", vec3::EZ)?,
            n: s.usize("n", 12)?,
        },
        "local-star" => SamplingScheme::LocalStar {
            center: s.direction("center", n0)?,
            h: s.f64("h", 0.02)?,
        },
        other => {
            return Err(s.reject("scheme", &format!("unknown sampling scheme \"{other}\"")));
        }
    };
    let sweep = SweepSpec {
        scheme,
        multi_start: s.bool("multi_start", true)?,
        axis_hint: s.opt_vec3("axis_hint")?,
    };
    s.finish()?;

    let mut s = section(&root, "torque")?;
    let torque = TorqueSpec {
        n0: s.direction("n0", n0)?,
        h: s.f64("h", 0.02)?,
        threshold: {
            let v = s.f64("threshold", 0.1)?;
            s.positive("threshold", v)?
        },
    };
    s.finish()?;

    let mut s = section(&root, "poisson")?;
    let poisson = PoissonSpec {
        l: s.usize("l", 0)?,
        d: {
            let d = s.usize("d", 3)?;
            if d < 3 {
                return Err(s.reject("d", &format!("dimension must be at least 3, got {d}")));
            }
            d
        },
        gamma: s.f64("gamma", 2.5)?,
        r_max: {
            let v = s.f64("r_max", 100.0)?;
            if v <= 1.0 {
                return Err(s.reject("r_max", &format!("must exceed 1, got {v}")));
            }
            v
        },
        n: {
            let n = s.usize("n", 4096)?;
            if n < 8 {
                return Err(s.reject("n", &format!("need at least 8 nodes, got {n}")));
            }
            n
        },
        threshold: {
            let v = s.f64("threshold", 1e-8)?;
            s.positive("threshold", v)?
        },
    };
    s.finish()?;

    Ok(RunConfig {
        particle,
        anchoring,
        pattern,
        grid,
        n0,
        solve,
        window,
        eval,
        sweep,
        torque,
        poisson,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = parse_config(
            "[particle]\nkind = \"sphere\"\n[anchoring]\nmodel = \"weak\"\nw = 0.1\n",
        )
        .unwrap();
        assert!(matches!(cfg.particle, ParticleShape::Sphere));
        assert!(matches!(cfg.anchoring, AnchoringModel::Weak { w } if w == 0.1));
        assert_eq!(cfg.grid.r_out, 16.0);
        assert!(cfg.solve.grad_tol.is_none());
        assert_eq!(cfg.window, (4.0, 8.0));
        assert_eq!(cfg.n0, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[solve]\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("solve.foo"), "{err}");
        let err = parse_config("[bogus]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn negative_anchoring_strength_is_rejected() {
        let err = parse_config("[anchoring]\nmodel = \"weak\"\nw = -1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("anchoring.w"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_the_path() {
        let err = parse_config("[grid]\nn_s = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("grid.n_s"), "{err}");
        let err = parse_config("[solve]\nn0 = [1, 0]\n").unwrap_err();
        assert!(err.to_string().contains("solve.n0"), "{err}");
    }

    #[test]
    fn spheroid_requires_semi_axes() {
        let err = parse_config("[particle]\nkind = \"spheroid\"\n").unwrap_err();
        assert!(err.to_string().contains("particle.a"), "{err}");
        let cfg = parse_config(
            "[particle]\nkind = \"spheroid\"\na = 1.0\nb = 1.5\n[grid]\nr_out = 16.0\n",
        )
        .unwrap();
        assert!(matches!(cfg.particle, ParticleShape::Spheroid { .. }));
        let err = parse_config("[particle]\nkind = \"sphere\"\na = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("particle.a"), "{err}");
    }
}
