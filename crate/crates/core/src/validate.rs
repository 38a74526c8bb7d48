//! Self-checks of the library: algebraic identities, round trips and the
//! optimizer gradient (`fast`), plus statistical oracles (`full`).
//!
//! The algebraic checks take the group law as a parameter and derive
//! differentials from it by exact central differences (the law is affine in
//! each translated argument), comparing them with the closed forms used by
//! the rest of the library. A corrupted law is therefore caught even when it
//! still defines a group.

use crate::estimators::{
    self, conditional_exponential, drift_bound_check, om_ratio, weight_consistency, Method, TubeQuery,
};
use crate::geodesics::{cc_distance, EndpointProblem, GeodesicOptions};
use crate::group::{adjoint, bracket, left_invariant_field, omega, AlgebraVector, GroupElement};
use crate::paths::{lift_control, mc_velocity, GroupPath, HorizontalControl, HorizontalPath, TimeGrid};
use crate::rng::{standard_normal, Seed};
use crate::stats::Moments;
use crate::stochastics::{levy_area, sample_noise, stochastic_exponential};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub tolerance: f64,
    pub seed: Option<Seed>,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, observed: f64, tolerance: f64, seed: Option<Seed>) -> Check {
        Check { name: name.into(), passed: observed <= tolerance, observed, tolerance, seed, detail: String::new() }
    }

    fn detail(mut self, d: impl Into<String>) -> Check {
        self.detail = d.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub trait GroupLaw: Sync {
    fn multiply(&self, a: GroupElement, b: GroupElement) -> GroupElement;
    fn inverse(&self, a: GroupElement) -> GroupElement;
}

pub struct StandardLaw;

impl GroupLaw for StandardLaw {
    fn multiply(&self, a: GroupElement, b: GroupElement) -> GroupElement {
        crate::group::multiply(a, b)
    }

    fn inverse(&self, a: GroupElement) -> GroupElement {
        crate::group::inverse(a)
    }
}

/// The law with `½ω` replaced by `ω`. It is still associative with the same
/// identity and inverses, but its differentials disagree with the library.
pub struct DoubledAreaLaw;

impl GroupLaw for DoubledAreaLaw {
    fn multiply(&self, a: GroupElement, b: GroupElement) -> GroupElement {
        GroupElement::new(a.x + b.x, a.y + b.y, a.z + b.z + omega(a.planar(), b.planar()))
    }

    fn inverse(&self, a: GroupElement) -> GroupElement {
        GroupElement::new(-a.x, -a.y, -a.z)
    }
}

fn gap(a: GroupElement, b: GroupElement) -> f64 {
    (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.z - b.z).abs())
}

fn gap3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn element(rng: &mut ChaCha8Rng) -> GroupElement {
    let mut u = || 10.0 * rng.gen::<f64>() - 5.0;
    GroupElement::new(u(), u(), u())
}

fn shifted(g: GroupElement, v: [f64; 3], t: f64) -> GroupElement {
    GroupElement::new(g.x + t * v[0], g.y + t * v[1], g.z + t * v[2])
}

/// `d/dt f(g + tv)` at `t = 0`. Every `f` used here is affine in `t`, so the
/// unit-step central difference is exact up to rounding.
fn derivative(f: impl Fn(GroupElement) -> GroupElement, g: GroupElement, v: [f64; 3]) -> [f64; 3] {
    let (p, m) = (f(shifted(g, v, 1.0)), f(shifted(g, v, -1.0)));
    [(p.x - m.x) / 2.0, (p.y - m.y) / 2.0, (p.z - m.z) / 2.0]
}

/// Algebraic identities over `n` random inputs with absolute tolerance `tol`.
pub fn algebraic_checks(law: &dyn GroupLaw, n: usize, tol: f64, seed: Seed) -> Vec<Check> {
    let mut rng = seed.rng();
    let mut worst = [0.0f64; 8];
    for _ in 0..n {
        let (a, b, c) = (element(&mut rng), element(&mut rng), element(&mut rng));
        let m = |p, q| law.multiply(p, q);
        worst[0] = worst[0].max(gap(m(m(a, b), c), m(a, m(b, c))));
        let e = GroupElement::IDENTITY;
        let inv = law.inverse(a);
        worst[1] = worst[1].max(gap(m(a, e), a)).max(gap(m(e, a), a)).max(gap(m(a, inv), e)).max(gap(m(inv, a), e));

        let (h1, h2, h3) =
            (AlgebraVector::new(a.x, a.y, a.z), AlgebraVector::new(b.x, b.y, b.z), AlgebraVector::new(c.x, c.y, c.z));
        let (ab, ba) = (bracket(h1, h2), bracket(h2, h1));
        let anti = (ab.a + ba.a).abs().max((ab.b + ba.b).abs()).max((ab.c + ba.c).abs());
        let nested = bracket(ab, h3);
        worst[2] = worst[2].max(anti);
        worst[3] = worst[3].max(nested.a.abs().max(nested.b.abs()).max(nested.c.abs()));

        // left-invariant frame from the law: d/dt (g·(t e_k)) at t = 0
        let frame = [[1.0, 0.0, -a.y / 2.0], [0.0, 1.0, a.x / 2.0], [0.0, 0.0, 1.0]];
        for (k, expected) in frame.iter().enumerate() {
            let mut v = [0.0; 3];
            v[k] = 1.0;
            let from_law = derivative(|h| m(a, h), e, v);
            let basis = AlgebraVector::new(v[0], v[1], v[2]);
            worst[4] = worst[4].max(gap3(from_law, *expected)).max(gap3(left_invariant_field(basis, a).v, *expected));
        }

        // Maurer-Cartan forms from the law's translation differentials
        let v = [b.x, b.y, b.z];
        let k_inv = law.inverse(a);
        let theta_l = derivative(|g| m(k_inv, g), a, v);
        let theta_r = derivative(|g| m(g, k_inv), a, v);
        let ad = adjoint(k_inv, AlgebraVector::new(theta_l[0], theta_l[1], theta_l[2]));
        worst[5] = worst[5].max(gap3(theta_r, [ad.a, ad.b, ad.c]));

        let rho = |p: GroupElement, q: GroupElement| m(law.inverse(p), q).norm();
        worst[6] = worst[6].max((rho(m(c, a), m(c, b)) - rho(a, b)).abs());
        let lambda = 0.1 + 3.0 * rng.gen::<f64>();
        worst[7] = worst[7].max((rho(a.dilate(lambda), b.dilate(lambda)) - lambda * rho(a, b)).abs());
    }
    let names = [
        "associativity",
        "identity_inverse",
        "bracket_antisymmetry",
        "bracket_nilpotency",
        "frame_xyz",
        "maurer_cartan_relation",
        "distance_left_invariance",
        "distance_homogeneity",
    ];
    names
        .iter()
        .zip(worst)
        .map(|(name, w)| Check::at_most(name, w, tol, Some(seed)).detail(format!("{n} random inputs")))
        .collect()
}

fn round_trip_checks(seed: Seed) -> Vec<Check> {
    let mut rng = seed.rng();
    let grid = TimeGrid::new(128).expect("positive");
    let mut worst_velocity: f64 = 0.0;
    let mut csv_exact = true;
    for _ in 0..50 {
        let k: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
        let c =
            HorizontalControl::from_fn(grid, |t| [k[0] * (3.0 * t).sin() + k[1], k[2] * t * t + k[3]]).expect("finite");
        let path = lift_control(&c);
        let v = mc_velocity(path.as_group_path()).expect("same grid");
        for (a, b) in v.control.samples().iter().zip(c.samples()) {
            worst_velocity = worst_velocity.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        let mut buf = Vec::new();
        path.write_csv(&mut buf).expect("in-memory write");
        match GroupPath::read_csv(buf.as_slice()) {
            Ok(back) => csv_exact &= back.points() == path.points(),
            Err(_) => csv_exact = false,
        }
    }
    vec![
        Check::at_most("lift_velocity_round_trip", worst_velocity, 1e-11, Some(seed)),
        Check {
            name: "path_csv_round_trip".into(),
            passed: csv_exact,
            observed: if csv_exact { 0.0 } else { 1.0 },
            tolerance: 0.0,
            seed: Some(seed),
            detail: "bitwise".into(),
        },
    ]
}

fn gradient_check(seed: Seed) -> Check {
    let mut rng = seed.rng();
    let grid = TimeGrid::new(16).expect("positive");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = EndpointProblem {
            target: GroupElement::new(standard_normal(&mut rng), standard_normal(&mut rng), standard_normal(&mut rng)),
            grid,
            mu: 100.0,
            max_iters: 1,
            tolerance: 1e-3,
        };
        let c: Vec<[f64; 2]> = (0..16).map(|_| [standard_normal(&mut rng), standard_normal(&mut rng)]).collect();
        let mut g = vec![[0.0; 2]; 16];
        p.objective(&c, Some(&mut g));
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..16 {
            for d in 0..2 {
                let (mut a, mut b) = (c.clone(), c.clone());
                a[k][d] += 1e-6;
                b[k][d] -= 1e-6;
                let fd = (p.objective(&a, None) - p.objective(&b, None)) / 2e-6;
                num += (fd - g[k][d]).powi(2);
                den += g[k][d].powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
    }
    Check::at_most("geodesic_gradient", worst, 1e-5, Some(seed)).detail("relative error, 100 random points")
}

/// `|observed − expected| / se` as a check against 3 standard errors.
fn z_check(name: &str, observed: f64, expected: f64, se: f64, seed: Seed) -> Check {
    let z = (observed - expected).abs() / se;
    Check {
        name: name.into(),
        passed: z <= 3.0,
        observed: z,
        tolerance: 3.0,
        seed: Some(seed),
        detail: format!("estimate {observed:.6} ± {se:.2e}, expected {expected:.6}"),
    }
}

fn levy_checks(n: usize, seed: Seed) -> Vec<Check> {
    let grid = TimeGrid::new(1024).expect("positive");
    let (mut sq, mut cos) = (Moments::default(), Moments::default());
    for j in 0..n as u64 {
        let a = levy_area(&sample_noise(grid, seed.child(j)), 1024);
        sq.push(a * a);
        cos.push((2.0 * a).cos());
    }
    vec![
        z_check("levy_area_variance", sq.mean(), 0.25, sq.stderr(), seed),
        z_check("levy_area_characteristic", cos.mean(), 1.0 / 1f64.cosh(), cos.stderr(), seed),
    ]
}

fn exponential_checks(n: usize, seed: Seed) -> Vec<Check> {
    let grid = TimeGrid::new(1024).expect("positive");
    let curves = [
        ("line_1_0", HorizontalPath::line(grid, [1.0, 0.0])),
        ("line_1_1", HorizontalPath::line(grid, [1.0, 1.0])),
        ("circle_0.5", HorizontalPath::circle(grid, 0.5)),
    ];
    let mut mean = [Moments::default(); 3];
    let mut xs = [Moments::default(); 3];
    for j in 0..n as u64 {
        let noise = sample_noise(grid, seed.child(j));
        for (k, (_, c)) in curves.iter().enumerate() {
            let s = stochastic_exponential(c, &noise).expect("same grid");
            mean[k].push(s.value);
            xs[k].push(s.x);
        }
    }
    let mut out = Vec::new();
    for (k, (name, c)) in curves.iter().enumerate() {
        out.push(z_check(&format!("exponential_mean_{name}"), mean[k].mean(), 1.0, mean[k].stderr(), seed));
        let e = c.energy();
        let se = e * (2.0 / (n as f64 - 1.0)).sqrt();
        out.push(z_check(&format!("exponential_variance_{name}"), xs[k].variance(), e, se, seed));
    }
    out
}

fn girsanov_checks(n: usize, seed: Seed) -> Vec<Check> {
    let grid = TimeGrid::new(512).expect("positive");
    let phi = HorizontalPath::line(grid, [1.0, 0.0]);
    let est = |method| {
        estimators::tube_probability(&TubeQuery { curve: phi.clone(), epsilon: 0.5, n_samples: n, seed, method })
    };
    let (Ok(naive), Ok(is)) = (est(Method::Naive), est(Method::Importance)) else {
        return vec![Check::at_most("girsanov_naive_vs_importance", f64::INFINITY, 3.0, Some(seed))];
    };
    let se = (naive.stderr.powi(2) + is.stderr.powi(2)).sqrt();
    let mut agree = z_check("girsanov_naive_vs_importance", naive.p_hat, is.p_hat, se, seed);
    if se == 0.0 {
        agree.passed = naive.p_hat == is.p_hat;
    }
    let hits = Check {
        name: "girsanov_naive_hits".into(),
        passed: naive.hits >= 100,
        observed: naive.hits as f64,
        tolerance: 100.0,
        seed: Some(seed),
        detail: "naive hits must be at least the tolerance".into(),
    };
    let (all, inside) = weight_consistency(&phi, 0.5, n.min(200_000), seed).expect("valid inputs");
    let weight_mean = z_check("importance_weight_mean", all.mean(), 1.0, all.stderr(), seed);
    let restricted = Check {
        name: "importance_weight_restricted".into(),
        passed: inside.mean() <= 1.0 + 3.0 * all.stderr(),
        observed: inside.mean(),
        tolerance: 1.0 + 3.0 * all.stderr(),
        seed: Some(seed),
        detail: String::new(),
    };
    vec![agree, hits, weight_mean, restricted]
}

fn drift_bound_checks(n: usize, seed: Seed) -> Vec<Check> {
    let grid = TimeGrid::new(1024).expect("positive");
    let pairs = [
        ("a", HorizontalPath::line(grid, [1.0, 0.0]), HorizontalPath::line(grid, [0.0, 1.0])),
        ("b", HorizontalPath::line(grid, [0.5, -0.5]), HorizontalPath::line(grid, [-1.0, 0.25])),
    ];
    pairs
        .iter()
        .map(|(tag, psi, phi)| match drift_bound_check(psi, phi, 0.3, n, seed) {
            Ok(r) => Check {
                name: format!("drift_bound_pair_{tag}"),
                passed: r.violations() == 0 && r.conditioned_u >= n as u64 / 2 && r.conditioned_z >= n as u64 / 2,
                observed: r.violations() as f64,
                tolerance: 0.0,
                seed: Some(seed),
                detail: format!("{} + {} conditioned paths", r.conditioned_u, r.conditioned_z),
            },
            Err(e) => {
                Check::at_most(&format!("drift_bound_pair_{tag}"), f64::INFINITY, 0.0, Some(seed)).detail(e.to_string())
            }
        })
        .collect()
}

fn geodesic_checks(seed: Seed) -> Vec<Check> {
    let opts = GeodesicOptions { seed, ..GeodesicOptions::default() };
    let rel = |name: &str, target: GroupElement, exact: f64, tol: f64| match cc_distance(
        GroupElement::IDENTITY,
        target,
        &opts,
    ) {
        Ok(r) => Check::at_most(name, (r.distance - exact).abs() / exact, tol, Some(seed))
            .detail(format!("distance {:.6}, converged {}", r.distance, r.converged)),
        Err(e) => Check::at_most(name, f64::INFINITY, tol, Some(seed)).detail(e.to_string()),
    };
    vec![
        rel("cc_distance_planar", GroupElement::new(3.0, 4.0, 0.0), 5.0, 0.01),
        rel("cc_distance_vertical", GroupElement::new(0.0, 0.0, 1.0), 2.0 * PI.sqrt(), 0.02),
    ]
}

fn ratio_limit_checks(n: usize, seed: Seed) -> Vec<Check> {
    let grid = TimeGrid::new(1024).expect("positive");
    let phi = HorizontalPath::line(grid, [1.0, 0.0]);
    let e = HorizontalPath::constant(grid);
    let mut out = Vec::new();
    let ladder = [0.4, 0.3, 0.2, 0.15];
    let mut est = Vec::new();
    for &eps in &ladder {
        match conditional_exponential(&phi, &phi, Some(eps), n, seed, Method::Resampling) {
            Ok(c) => est.push(c),
            Err(err) => {
                out.push(Check::at_most("conditional_trend", f64::INFINITY, 0.0, Some(seed)).detail(err.to_string()));
                return out;
            }
        }
    }
    let target = 0.5f64.exp();
    let monotone = est.windows(2).all(|w| {
        let slack = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        (w[1].estimate - target).abs() <= (w[0].estimate - target).abs() + slack
    });
    let last = est.last().expect("non-empty ladder");
    out.push(Check {
        name: "conditional_trend".into(),
        passed: monotone && (last.estimate - target).abs() <= 0.15 * target,
        observed: (last.estimate - target).abs() / target,
        tolerance: 0.15,
        seed: Some(seed),
        detail: est.iter().map(|c| format!("{:.4}", c.estimate)).collect::<Vec<_>>().join(" "),
    });
    match om_ratio(&phi, &e, &[0.1], n, seed, Method::Resampling) {
        Ok(cells) => match &cells[0] {
            Ok(r) => {
                let tol = 0.075f64.max(3.0 * r.stderr);
                out.push(
                    Check::at_most("om_ratio_terminal", (r.log_ratio_hat - r.theory_log_ratio).abs(), tol, Some(seed))
                        .detail(format!(
                            "log ratio {:.4} ± {:.4}, theory {}",
                            r.log_ratio_hat, r.stderr, r.theory_log_ratio
                        )),
                );
            }
            Err(err) => {
                out.push(Check::at_most("om_ratio_terminal", f64::INFINITY, 0.075, Some(seed)).detail(err.to_string()))
            }
        },
        Err(err) => {
            out.push(Check::at_most("om_ratio_terminal", f64::INFINITY, 0.075, Some(seed)).detail(err.to_string()))
        }
    }
    out
}

/// Runs the suite. `scale` multiplies the statistical sample sizes; `1.0`
/// reproduces the documented sizes.
pub fn validate_suite(level: Level, seed: Seed, scale: f64) -> Report {
    let mut checks = algebraic_checks(&StandardLaw, 10_000, 1e-10, seed.tagged(1));
    checks.extend(round_trip_checks(seed.tagged(2)));
    checks.push(gradient_check(seed.tagged(3)));
    if level == Level::Full {
        let n = |base: f64| ((base * scale).round() as usize).max(64);
        checks.extend(levy_checks(n(1e6), seed.tagged(10)));
        checks.extend(exponential_checks(n(1e6), seed.tagged(11)));
        checks.extend(girsanov_checks(n(1e6), seed.tagged(12)));
        checks.extend(drift_bound_checks(n(1e4), seed.tagged(13)));
        checks.extend(geodesic_checks(seed.tagged(14)));
        checks.extend(ratio_limit_checks(n(1e6), seed.tagged(15)));
    }
    Report { level, checks }
}
