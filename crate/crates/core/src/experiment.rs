//! Running configured experiments, persisting results with a hashed manifest,
//! and summarizing finished runs.
//!
//! Every run writes `results.json`, one or more CSV tables and finally
//! `manifest.json`. Result files depend only on the config and seed (not on
//! the worker count or the clock); timing lives in the manifest. Files are
//! written to a temporary name and renamed into place.

use crate::config::{element, CurveSpec, ExperimentConfig, Kind};
use crate::error::{Error, Result};
use crate::estimators::{
    conditional_exponential, om_ratio, tube_ladder, tube_probability, ConditionalEstimate, Method, RatioEstimate,
    TubeEstimate, TubeQuery,
};
use crate::geodesics::{cc_distance, equivalence_constants, EquivalenceReport, GeodesicOptions, GeodesicResult};
use crate::group::GroupElement;
use crate::paths::format_f64;
use crate::rng::Seed;
use crate::validate::{validate_suite, Level, Report};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "HEIS_OUTPUT_DIR";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub status: Status,
    pub failures: Vec<String>,
    pub wall_clock_seconds: f64,
    pub finished_unix_seconds: u64,
    pub files: Vec<FileEntry>,
}

/// Where results go when the config does not say.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    /// Directory relative paths in the config resolve against.
    pub config_dir: PathBuf,
    /// Default output root, typically from [`OUTPUT_ENV`].
    pub default_output: Option<PathBuf>,
}

impl RunContext {
    pub fn from_env(config_dir: impl Into<PathBuf>) -> Self {
        Self { config_dir: config_dir.into(), default_output: std::env::var_os(OUTPUT_ENV).map(PathBuf::from) }
    }

    pub fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        match (&cfg.output_dir, &self.default_output) {
            (Some(dir), _) => self.config_dir.join(dir),
            (None, Some(root)) => root.join(format!("{}-{}", cfg.kind.name(), cfg.seed)),
            (None, None) => self.config_dir.join("runs").join(format!("{}-{}", cfg.kind.name(), cfg.seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub epsilon: f64,
    pub estimate: Option<RatioEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCell {
    pub epsilon: Option<f64>,
    pub estimate: Option<ConditionalEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Results {
    Validate { report: Report },
    Tube { curve: String, estimates: Vec<TubeEstimate> },
    OmRatio { phi: String, psi: String, method: Method, cells: Vec<RatioCell> },
    Conditional { gamma: String, phi: String, method: Method, cells: Vec<ConditionalCell> },
    Geodesic { from: GroupElement, target: GroupElement, options: GeodesicOptions, result: GeodesicResult },
    Equivalence { options: GeodesicOptions, half_width: f64, report: EquivalenceReport },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub seed: u64,
    pub n_steps: Option<usize>,
    pub n_samples: Option<usize>,
    #[serde(flatten)]
    pub results: Results,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub output_dir: PathBuf,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(FileEntry {
            name: name.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        self.write(name, &bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format_f64(v)
    }
}

fn z_score(est: f64, theory: f64, se: f64) -> f64 {
    (est - theory) / se
}

/// Runs `cfg`, writing results under the resolved output directory.
pub fn run_experiment(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<RunOutcome> {
    cfg.check()?;
    let started = Instant::now();
    let dir = ctx.output_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let run = || execute(cfg, ctx, &dir);
    let (files, failures) = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.into(),
        config: cfg.clone(),
        status: if failures.is_empty() { Status::Success } else { Status::NumericalFailure },
        failures,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        finished_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        files,
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(RunOutcome { manifest, manifest_path: path, output_dir: dir })
}

fn curve(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    spec: &Option<String>,
) -> Result<(String, crate::paths::HorizontalPath)> {
    let s = spec.clone().expect("checked by ExperimentConfig::check");
    let c = CurveSpec::parse(&s)?.build(cfg.grid(), &ctx.config_dir)?;
    Ok((s, c))
}

fn execute(cfg: &ExperimentConfig, ctx: &RunContext, dir: &Path) -> Result<(Vec<FileEntry>, Vec<String>)> {
    let seed = Seed::new(cfg.seed, 0);
    let mut out = Artifacts { dir: dir.to_path_buf(), files: Vec::new() };
    let mut failures = Vec::new();
    let seed_col = cfg.seed.to_string();
    let (results, sampled) = match cfg.kind {
        Kind::Validate => {
            let level = cfg.level.unwrap_or(Level::Full);
            let report = validate_suite(level, seed, 1.0);
            let rows = report
                .checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        c.passed.to_string(),
                        num(c.observed),
                        num(c.tolerance),
                        c.seed.map_or(String::new(), |s| s.root.to_string()),
                        c.seed.map_or(String::new(), |s| s.stream.to_string()),
                        c.detail.clone(),
                    ]
                })
                .collect();
            out.csv(
                "checks.csv",
                &["name", "passed", "observed", "tolerance", "seed_root", "seed_stream", "detail"],
                rows,
            )?;
            failures.extend(
                report
                    .failures()
                    .map(|c| format!("check {} failed: observed {} > {}", c.name, c.observed, c.tolerance)),
            );
            (Results::Validate { report }, false)
        }
        Kind::Tube => {
            let (name, c) = curve(cfg, ctx, &cfg.curve)?;
            let method = cfg.method.unwrap_or(Method::Importance);
            let eps = cfg.epsilons();
            let estimates = match method {
                Method::Resampling => eps
                    .iter()
                    .map(|&e| {
                        tube_probability(&TubeQuery {
                            curve: c.clone(),
                            epsilon: e,
                            n_samples: cfg.n_samples(),
                            seed,
                            method,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => tube_ladder(&c, &eps, cfg.n_samples(), seed, method)?,
            };
            for e in &estimates {
                if e.hits == 0 {
                    failures.push(format!("zero hits at epsilon {}", e.query.epsilon));
                }
            }
            let rows = estimates
                .iter()
                .map(|e| {
                    vec![
                        num(e.query.epsilon),
                        num(e.p_hat),
                        num(e.log_p_hat),
                        num(e.stderr),
                        e.hits.to_string(),
                        e.ess.map_or(String::new(), num),
                        seed_col.clone(),
                    ]
                })
                .collect();
            out.csv("tube.csv", &["epsilon", "p_hat", "log_p_hat", "stderr", "hits", "ess", "seed"], rows)?;
            (Results::Tube { curve: name, estimates }, true)
        }
        Kind::OmRatio => {
            let (pn, phi) = curve(cfg, ctx, &cfg.phi)?;
            let (qn, psi) = curve(cfg, ctx, &cfg.psi)?;
            let method = cfg.method.unwrap_or(Method::Resampling);
            let eps = cfg.epsilons();
            let theory = -0.5 * phi.energy() + 0.5 * psi.energy();
            let cells: Vec<RatioCell> = om_ratio(&phi, &psi, &eps, cfg.n_samples(), seed, method)?
                .into_iter()
                .zip(&eps)
                .map(|(r, &e)| match r {
                    Ok(r) => RatioCell { epsilon: e, estimate: Some(r), error: None },
                    Err(err) => RatioCell { epsilon: e, estimate: None, error: Some(err.to_string()) },
                })
                .collect();
            let mut rows = Vec::new();
            for c in &cells {
                match (&c.estimate, &c.error) {
                    (Some(r), _) => rows.push(vec![
                        num(c.epsilon),
                        num(r.log_ratio_hat),
                        num(r.stderr),
                        num(r.log_ratio_hat - r.stderr),
                        num(r.log_ratio_hat + r.stderr),
                        num(r.theory_log_ratio),
                        num(z_score(r.log_ratio_hat, r.theory_log_ratio, r.stderr)),
                        "ok".into(),
                        seed_col.clone(),
                    ]),
                    (None, err) => {
                        let msg = err.clone().unwrap_or_default();
                        failures.push(format!("epsilon {}: {msg}", c.epsilon));
                        rows.push(vec![
                            num(c.epsilon),
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            num(theory),
                            String::new(),
                            msg,
                            seed_col.clone(),
                        ]);
                    }
                }
            }
            out.csv(
                "om_ratio.csv",
                &[
                    "epsilon",
                    "log_ratio_hat",
                    "stderr",
                    "lower",
                    "upper",
                    "theory_log_ratio",
                    "z_score",
                    "status",
                    "seed",
                ],
                rows,
            )?;
            (Results::OmRatio { phi: pn, psi: qn, method, cells }, true)
        }
        Kind::Conditional => {
            let (gn, gamma) = curve(cfg, ctx, &cfg.gamma)?;
            let (pn, phi) = curve(cfg, ctx, &cfg.phi)?;
            let method = cfg.method.unwrap_or(Method::Resampling);
            let theory = (gamma.inner_product(&phi)? - 0.5 * gamma.energy()).exp();
            let mut cells = Vec::new();
            let mut rows = Vec::new();
            for e in cfg.epsilons() {
                let eps = e.is_finite().then_some(e);
                match conditional_exponential(&gamma, &phi, eps, cfg.n_samples(), seed, method) {
                    Ok(c) => {
                        rows.push(vec![
                            num(e),
                            num(c.estimate),
                            num(c.stderr),
                            num(c.theory),
                            num(z_score(c.estimate, c.theory, c.stderr)),
                            c.hits.to_string(),
                            "ok".into(),
                            seed_col.clone(),
                        ]);
                        cells.push(ConditionalCell { epsilon: eps, estimate: Some(c), error: None });
                    }
                    Err(err @ Error::ZeroHits { .. }) => {
                        failures.push(format!("epsilon {e}: {err}"));
                        rows.push(vec![
                            num(e),
                            String::new(),
                            String::new(),
                            num(theory),
                            String::new(),
                            "0".into(),
                            err.to_string(),
                            seed_col.clone(),
                        ]);
                        cells.push(ConditionalCell { epsilon: eps, estimate: None, error: Some(err.to_string()) });
                    }
                    Err(err) => return Err(err),
                }
            }
            out.csv(
                "conditional.csv",
                &["epsilon", "estimate", "stderr", "theory", "z_score", "hits", "status", "seed"],
                rows,
            )?;
            (Results::Conditional { gamma: gn, phi: pn, method, cells }, true)
        }
        Kind::Geodesic => {
            let g = cfg.geodesic.as_ref().expect("checked");
            let options = g.options.unwrap_or_default().resolve(seed);
            let from = g.from.map_or(GroupElement::IDENTITY, element);
            let target = element(g.target);
            let result = cc_distance(from, target, &options)?;
            if !result.converged {
                failures.push(format!("geodesic did not converge, endpoint error {}", result.endpoint_error));
            }
            let mut path_csv = Vec::new();
            result.path().write_csv(&mut path_csv)?;
            out.write("path.csv", &path_csv)?;
            let mut control_csv = Vec::new();
            result.path().write_control_csv(&mut control_csv)?;
            out.write("control.csv", &control_csv)?;
            (Results::Geodesic { from, target, options, result }, false)
        }
        Kind::Equivalence => {
            let e = cfg.equivalence.as_ref().expect("checked");
            let options = e.options.unwrap_or_default().resolve(seed);
            let report = equivalence_constants(e.n_points, e.half_width, seed, &options)?;
            if report.c_hat.is_nan() || report.c_hat <= 0.0 {
                failures.push(format!("lower equivalence constant {} is not positive", report.c_hat));
            }
            let rows =
                report.ratios.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r), seed_col.clone()]).collect();
            out.csv("ratios.csv", &["index", "ratio", "seed"], rows)?;
            (Results::Equivalence { options, half_width: e.half_width, report }, false)
        }
    };
    let file = ResultsFile {
        seed: cfg.seed,
        n_steps: sampled.then(|| cfg.n_steps()),
        n_samples: sampled.then(|| cfg.n_samples()),
        results,
    };
    out.write("results.json", serde_json::to_string_pretty(&file)?.as_bytes())?;
    Ok((out.files, failures))
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Human-readable summary of a finished run. Every listed file must exist
/// with the recorded hash.
pub fn emit_report(manifest_path: &Path) -> Result<String> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    for f in &manifest.files {
        let p = dir.join(&f.name);
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("missing result file {}", p.display())));
        }
        let h = sha256_file(&p)?;
        if h != f.sha256 {
            return Err(Error::InvalidArgument(format!("{} does not match its recorded hash", p.display())));
        }
    }
    let results: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("results.json"))?)?;
    let mut s = String::new();
    let kind = manifest.config.kind;
    let _ = writeln!(s, "run: {} (seed {}, version {})", kind.name(), manifest.config.seed, manifest.artifact_version);
    let _ = writeln!(s, "status: {:?}, wall clock {:.2}s", manifest.status, manifest.wall_clock_seconds);
    let f = |v: &Value| match v.as_f64() {
        Some(x) => format!("{x:.6}"),
        None if v.is_null() => "-".into(),
        None => v.to_string(),
    };
    match kind {
        Kind::Validate => {
            let _ = writeln!(s, "{:<32} {:<6} {:>14} {:>14}", "check", "result", "observed", "tolerance");
            for c in results["report"]["checks"].as_array().into_iter().flatten() {
                let pass = if c["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                let _ = writeln!(
                    s,
                    "{:<32} {:<6} {:>14} {:>14}",
                    c["name"].as_str().unwrap_or("?"),
                    pass,
                    f(&c["observed"]),
                    f(&c["tolerance"])
                );
            }
        }
        Kind::Tube => {
            let _ = writeln!(s, "{:>8} {:>14} {:>14} {:>10} {:>12}", "epsilon", "p_hat", "stderr", "hits", "ess");
            for e in results["estimates"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    s,
                    "{:>8} {:>14} {:>14} {:>10} {:>12}",
                    f(&e["query"]["epsilon"]),
                    f(&e["p_hat"]),
                    f(&e["stderr"]),
                    e["hits"],
                    f(&e["ess"])
                );
            }
        }
        Kind::OmRatio => {
            let _ =
                writeln!(s, "{:>8} {:>12} {:>12} {:>12} {:>10}", "epsilon", "estimate", "stderr", "theory", "z-score");
            for c in results["cells"].as_array().into_iter().flatten() {
                let r = &c["estimate"];
                if r.is_null() {
                    let _ = writeln!(s, "{:>8} {}", f(&c["epsilon"]), c["error"].as_str().unwrap_or("failed"));
                    continue;
                }
                let z = z_score(
                    r["log_ratio_hat"].as_f64().unwrap_or(f64::NAN),
                    r["theory_log_ratio"].as_f64().unwrap_or(f64::NAN),
                    r["stderr"].as_f64().unwrap_or(f64::NAN),
                );
                let _ = writeln!(
                    s,
                    "{:>8} {:>12} {:>12} {:>12} {:>10.3}",
                    f(&c["epsilon"]),
                    f(&r["log_ratio_hat"]),
                    f(&r["stderr"]),
                    f(&r["theory_log_ratio"]),
                    z
                );
            }
        }
        Kind::Conditional => {
            let _ =
                writeln!(s, "{:>8} {:>12} {:>12} {:>12} {:>10}", "epsilon", "estimate", "stderr", "theory", "z-score");
            for c in results["cells"].as_array().into_iter().flatten() {
                let eps = if c["epsilon"].is_null() { "inf".to_string() } else { f(&c["epsilon"]) };
                let r = &c["estimate"];
                if r.is_null() {
                    let _ = writeln!(s, "{:>8} {}", eps, c["error"].as_str().unwrap_or("failed"));
                    continue;
                }
                let z = z_score(
                    r["estimate"].as_f64().unwrap_or(f64::NAN),
                    r["theory"].as_f64().unwrap_or(f64::NAN),
                    r["stderr"].as_f64().unwrap_or(f64::NAN),
                );
                let _ = writeln!(
                    s,
                    "{:>8} {:>12} {:>12} {:>12} {:>10.3}",
                    eps,
                    f(&r["estimate"]),
                    f(&r["stderr"]),
                    f(&r["theory"]),
                    z
                );
            }
        }
        Kind::Geodesic => {
            let r = &results["result"];
            let _ = writeln!(s, "target {}", results["target"]);
            let _ = writeln!(
                s,
                "distance {}  energy {}  endpoint error {}  converged {}  iterations {}",
                f(&r["distance"]),
                f(&r["energy"]),
                f(&r["endpoint_error"]),
                r["converged"],
                r["iterations"]
            );
        }
        Kind::Equivalence => {
            let r = &results["report"];
            let n = r["ratios"].as_array().map_or(0, Vec::len);
            let _ = writeln!(
                s,
                "pairs {}  excluded {}  c_hat {}  C_hat {}",
                n,
                r["excluded"],
                f(&r["c_hat"]),
                f(&r["C_hat"])
            );
        }
    }
    for failure in &manifest.failures {
        let _ = writeln!(s, "failure: {failure}");
    }
    let csvs: Vec<&str> = manifest.files.iter().map(|f| f.name.as_str()).filter(|n| n.ends_with(".csv")).collect();
    let _ = writeln!(
        s,
        "plot data: {}",
        csvs.iter().map(|n| dir.join(n).display().to_string()).collect::<Vec<_>>().join(", ")
    );
    Ok(s)
}
