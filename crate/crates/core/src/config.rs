//! Experiment configuration files (TOML). Parsing is strict: unknown keys,
//! missing required keys and out-of-range values are errors.

use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::geodesics::GeodesicOptions;
use crate::group::GroupElement;
use crate::paths::{lift_control, read_control_csv, HorizontalPath, TimeGrid};
use crate::validate::Level;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_LADDER: [f64; 5] = [0.4, 0.3, 0.2, 0.15, 0.1];
pub const DEFAULT_STEPS: usize = 1024;
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Validate,
    Tube,
    OmRatio,
    Conditional,
    Geodesic,
    Equivalence,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Tube => "tube",
            Kind::OmRatio => "om-ratio",
            Kind::Conditional => "conditional",
            Kind::Geodesic => "geodesic",
            Kind::Equivalence => "equivalence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    /// Tube radii; `inf` is accepted for `conditional`.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "radii")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geodesic: Option<GeodesicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicSection {
    pub target: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<GeodesicOptionsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    pub n_points: usize,
    #[serde(default = "unit")]
    pub half_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<GeodesicOptionsSection>,
}

fn unit() -> f64 {
    1.0
}

/// Optimizer settings; omitted keys take the solver defaults. The seed is
/// always the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicOptionsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<usize>,
}

impl GeodesicOptionsSection {
    pub fn resolve(&self, seed: crate::rng::Seed) -> GeodesicOptions {
        let d = GeodesicOptions::default();
        GeodesicOptions {
            n_steps: self.n_steps.unwrap_or(d.n_steps),
            mu: self.mu.unwrap_or(d.mu),
            mu_factor: self.mu_factor.unwrap_or(d.mu_factor),
            stages: self.stages.unwrap_or(d.stages),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            starts: self.starts.unwrap_or(d.starts),
            seed,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples.unwrap_or(DEFAULT_SAMPLES)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps.unwrap_or(DEFAULT_STEPS)
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.n_steps()).expect("checked positive")
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec())
    }

    /// Validates ranges and that the keys required by `kind` are present and
    /// the others absent.
    pub fn check(&self) -> Result<()> {
        let positive = |name: &str, v: Option<usize>| match v {
            Some(0) => Err(config_err(format!("{name} must be positive"))),
            _ => Ok(()),
        };
        positive("workers", self.workers)?;
        positive("n_samples", self.n_samples)?;
        positive("n_steps", self.n_steps)?;
        if let Some(eps) = &self.epsilons {
            if eps.is_empty() {
                return Err(config_err("epsilons must not be empty"));
            }
            for &e in eps {
                let ok = e > 0.0 && (e.is_finite() || self.kind == Kind::Conditional);
                if !ok {
                    return Err(config_err(format!("epsilon {e} out of range")));
                }
            }
        }
        let allowed: &[&str] = match self.kind {
            Kind::Validate => &["level"],
            Kind::Tube => &["n_samples", "n_steps", "epsilons", "method", "curve"],
            Kind::OmRatio => &["n_samples", "n_steps", "epsilons", "method", "phi", "psi"],
            Kind::Conditional => &["n_samples", "n_steps", "epsilons", "method", "phi", "gamma"],
            Kind::Geodesic => &["geodesic"],
            Kind::Equivalence => &["equivalence"],
        };
        let present = [
            ("n_samples", self.n_samples.is_some()),
            ("n_steps", self.n_steps.is_some()),
            ("epsilons", self.epsilons.is_some()),
            ("method", self.method.is_some()),
            ("curve", self.curve.is_some()),
            ("phi", self.phi.is_some()),
            ("psi", self.psi.is_some()),
            ("gamma", self.gamma.is_some()),
            ("level", self.level.is_some()),
            ("geodesic", self.geodesic.is_some()),
            ("equivalence", self.equivalence.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(config_err(format!("key {key:?} does not apply to kind {:?}", self.kind.name())));
            }
        }
        let required: &[(&str, bool)] = match self.kind {
            Kind::Tube => &[("curve", self.curve.is_some())],
            Kind::OmRatio => &[("phi", self.phi.is_some()), ("psi", self.psi.is_some())],
            Kind::Conditional => &[("phi", self.phi.is_some()), ("gamma", self.gamma.is_some())],
            Kind::Geodesic => &[("geodesic", self.geodesic.is_some())],
            Kind::Equivalence => &[("equivalence", self.equivalence.is_some())],
            Kind::Validate => &[],
        };
        for (key, set) in required {
            if !set {
                return Err(config_err(format!("kind {:?} requires {key:?}", self.kind.name())));
            }
        }
        for spec in [&self.curve, &self.phi, &self.psi, &self.gamma].into_iter().flatten() {
            CurveSpec::parse(spec)?;
        }
        if let Some(g) = &self.geodesic {
            if g.target.iter().chain(g.from.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(config_err("geodesic endpoints must be finite"));
            }
            check_options(g.options.as_ref())?;
        }
        if let Some(e) = &self.equivalence {
            if e.n_points == 0 {
                return Err(config_err("equivalence.n_points must be positive"));
            }
            if !(e.half_width > 0.0 && e.half_width.is_finite()) {
                return Err(config_err("equivalence.half_width must be positive"));
            }
            check_options(e.options.as_ref())?;
        }
        Ok(())
    }
}

fn check_options(o: Option<&GeodesicOptionsSection>) -> Result<()> {
    let Some(o) = o else { return Ok(()) };
    for (name, v) in [("n_steps", o.n_steps), ("stages", o.stages), ("max_iters", o.max_iters), ("starts", o.starts)] {
        if v == Some(0) {
            return Err(config_err(format!("options.{name} must be positive")));
        }
    }
    for (name, v) in [("mu", o.mu), ("tolerance", o.tolerance)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("options.{name} must be positive")));
            }
        }
    }
    if let Some(f) = o.mu_factor {
        if !(f >= 1.0 && f.is_finite()) {
            return Err(config_err("options.mu_factor must be at least 1"));
        }
    }
    Ok(())
}

/// A curve named in a config: `"constant"`, `"line a b"`, `"circle r"` or the
/// path of a control CSV file (`t,c1,c2`).
#[derive(Debug, Clone, PartialEq)]
pub enum CurveSpec {
    Constant,
    Line([f64; 2]),
    Circle(f64),
    File(PathBuf),
}

impl CurveSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let nums = |w: &[&str]| -> Result<Vec<f64>> {
            w.iter()
                .map(|x| {
                    x.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| config_err(format!("bad number {x:?} in curve {s:?}")))
                })
                .collect()
        };
        match words.as_slice() {
            ["constant"] => Ok(CurveSpec::Constant),
            ["line", rest @ ..] => match nums(rest)?.as_slice() {
                [a, b] => Ok(CurveSpec::Line([*a, *b])),
                _ => Err(config_err(format!("curve {s:?}: line takes two numbers"))),
            },
            ["circle", rest @ ..] => match nums(rest)?.as_slice() {
                [r] => Ok(CurveSpec::Circle(*r)),
                _ => Err(config_err(format!("curve {s:?}: circle takes one number"))),
            },
            [path] if path.ends_with(".csv") => Ok(CurveSpec::File(PathBuf::from(path))),
            _ => Err(config_err(format!("unknown curve {s:?}"))),
        }
    }

    /// The curve on `grid`; relative CSV paths resolve against `base`.
    pub fn build(&self, grid: TimeGrid, base: &Path) -> Result<HorizontalPath> {
        Ok(match self {
            CurveSpec::Constant => HorizontalPath::constant(grid),
            CurveSpec::Line(v) => HorizontalPath::line(grid, *v),
            CurveSpec::Circle(r) => HorizontalPath::circle(grid, *r),
            CurveSpec::File(p) => {
                let path = base.join(p);
                let f = std::fs::File::open(&path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                let control = read_control_csv(f).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                if control.grid() != grid {
                    return Err(config_err(format!(
                        "{}: control has {} steps, config uses {}",
                        path.display(),
                        control.grid().n_steps(),
                        grid.n_steps()
                    )));
                }
                lift_control(&control)
            }
        })
    }
}

pub fn element(v: [f64; 3]) -> GroupElement {
    GroupElement::new(v[0], v[1], v[2])
}

/// Radii as numbers, with `"inf"` standing in for an unconditioned run so
/// the list survives a JSON round trip.
mod radii {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Radius {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let v = v.as_ref().map(|v| {
            v.iter()
                .map(|&e| if e.is_finite() { Radius::Finite(e) } else { Radius::Named(e.to_string()) })
                .collect::<Vec<_>>()
        });
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let v = Option::<Vec<Radius>>::deserialize(d)?;
        v.map(|v| {
            v.into_iter()
                .map(|r| match r {
                    Radius::Finite(e) => Ok(e),
                    Radius::Named(n) => {
                        n.parse::<f64>().map_err(|_| serde::de::Error::custom(format!("bad radius {n:?}")))
                    }
                })
                .collect()
        })
        .transpose()
    }
}
