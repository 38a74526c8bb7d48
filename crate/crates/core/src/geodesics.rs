//! Carnot-Carathéodory distance and most probable paths by direct
//! minimization over piecewise-constant controls.
//!
//! For a control `c` on `n` steps the objective is
//! `F(c) = Σ‖c_i‖²Δt + μ‖p(c) − target‖²`, where `p(c)` is the endpoint of
//! the horizontal lift and the norm is the Euclidean norm of the coordinate
//! difference. `F` is minimized by gradient descent with a Barzilai-Borwein
//! trial step and Armijo backtracking, for a ladder of increasing `μ`, from
//! several random smooth starting controls.

use crate::error::{Error, Result};
use crate::group::{homogeneous_distance, inverse, multiply, omega, GroupElement};
use crate::paths::{lift_control, HorizontalControl, HorizontalPath, TimeGrid};
use crate::rng::{standard_normal, Seed};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesicOptions {
    pub n_steps: usize,
    /// Penalty weight of the first stage.
    pub mu: f64,
    pub mu_factor: f64,
    pub stages: usize,
    /// Iteration cap per stage.
    pub max_iters: usize,
    /// Endpoint tolerance of the dilation-normalized problem.
    pub tolerance: f64,
    pub starts: usize,
    pub seed: Seed,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            n_steps: 64,
            mu: 10.0,
            mu_factor: 10.0,
            stages: 4,
            max_iters: 5000,
            tolerance: 1e-3,
            starts: 8,
            seed: Seed::new(0x9e0d, 0),
        }
    }
}

impl GeodesicOptions {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("geodesic options: {what}")));
        if self.n_steps == 0 {
            return bad("n_steps must be positive");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive");
        }
        if !(self.mu_factor >= 1.0 && self.mu_factor.is_finite()) {
            return bad("mu_factor must be at least 1");
        }
        if self.stages == 0 || self.max_iters == 0 || self.starts == 0 {
            return bad("stages, max_iters and starts must be positive");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

/// One penalized endpoint problem at fixed `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointProblem {
    pub target: GroupElement,
    pub grid: TimeGrid,
    pub mu: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl EndpointProblem {
    /// Objective value and its gradient with respect to the control samples.
    pub fn objective(&self, c: &[[f64; 2]], grad: Option<&mut [[f64; 2]]>) -> f64 {
        let dt = self.grid.dt();
        let (end, energy) = endpoint(c, dt);
        let r = [end.x - self.target.x, end.y - self.target.y, end.z - self.target.z];
        let f = energy + self.mu * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if let Some(g) = grad {
            // ∂z_n/∂c_k = ½Δt[(−x_{k,2}, x_{k,1}) + ((x_n − x_{k+1})₂, −(x_n − x_{k+1})₁)]
            let mut x = [0.0, 0.0];
            for (k, ck) in c.iter().enumerate() {
                let next = [x[0] + ck[0] * dt, x[1] + ck[1] * dt];
                let rest = [end.x - next[0], end.y - next[1]];
                let dz = [0.5 * dt * (-x[1] + rest[1]), 0.5 * dt * (x[0] - rest[0])];
                g[k] = [
                    2.0 * dt * ck[0] + 2.0 * self.mu * (r[0] * dt + r[2] * dz[0]),
                    2.0 * dt * ck[1] + 2.0 * self.mu * (r[1] * dt + r[2] * dz[1]),
                ];
                x = next;
            }
        }
        f
    }
}

/// Endpoint of the lift and the energy of a control.
fn endpoint(c: &[[f64; 2]], dt: f64) -> (GroupElement, f64) {
    let (mut x, mut z, mut e) = ([0.0, 0.0], 0.0, 0.0);
    for ck in c {
        z += 0.5 * omega(x, *ck) * dt;
        x = [x[0] + ck[0] * dt, x[1] + ck[1] * dt];
        e += (ck[0] * ck[0] + ck[1] * ck[1]) * dt;
    }
    (GroupElement::new(x[0], x[1], z), e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicResult {
    pub target: GroupElement,
    #[serde(skip)]
    pub path: Option<HorizontalPath>,
    /// `√energy`.
    pub distance: f64,
    pub energy: f64,
    pub endpoint_error: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the winning start.
    pub start: usize,
    pub seed: Seed,
    /// Objective after every accepted step, one vector per stage.
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

impl GeodesicResult {
    pub fn path(&self) -> &HorizontalPath {
        self.path.as_ref().expect("solver results carry their path")
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, endpoint_error: self.endpoint_error })
        }
    }

    /// `∫L = −½·energy`.
    pub fn action(&self) -> f64 {
        -0.5 * self.energy
    }
}

/// Gradient descent on one problem, in place. Returns the objective after
/// each accepted step.
pub fn descend(problem: &EndpointProblem, c: &mut [[f64; 2]]) -> Vec<f64> {
    let n = c.len();
    let mut g = vec![[0.0; 2]; n];
    let mut trial = vec![[0.0; 2]; n];
    let mut g_trial = vec![[0.0; 2]; n];
    let mut f = problem.objective(c, Some(&mut g));
    let mut history = Vec::new();
    let mut step = 1.0 / (2.0 * problem.grid.dt() * (1.0 + problem.mu));
    for _ in 0..problem.max_iters {
        let gg = dot(&g, &g);
        if gg.sqrt() <= 1e-12 * (1.0 + f) {
            break;
        }
        let mut alpha = step;
        let accepted = loop {
            for ((t, ci), gi) in trial.iter_mut().zip(c.iter()).zip(&g) {
                *t = [ci[0] - alpha * gi[0], ci[1] - alpha * gi[1]];
            }
            let ft = problem.objective(&trial, Some(&mut g_trial));
            if ft <= f - 1e-4 * alpha * gg {
                break Some(ft);
            }
            alpha *= 0.5;
            if alpha < 1e-20 {
                break None;
            }
        };
        let Some(ft) = accepted else { break };
        // Barzilai-Borwein length for the next trial step
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..n {
            for d in 0..2 {
                let s = trial[k][d] - c[k][d];
                ss += s * s;
                sy += s * (g_trial[k][d] - g[k][d]);
            }
        }
        step = if sy > 0.0 { ss / sy } else { 2.0 * alpha };
        let done = f - ft <= 1e-15 * f.abs();
        c.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_trial);
        f = ft;
        history.push(f);
        if done {
            break;
        }
    }
    history
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum()
}

/// Random smooth control: a few Fourier modes with Gaussian coefficients,
/// scaled to the size of the target.
fn random_start(grid: TimeGrid, scale: f64, seed: Seed) -> Vec<[f64; 2]> {
    let mut rng = seed.rng();
    let modes = 3;
    let mut coef = vec![[0.0; 4]; modes];
    for m in coef.iter_mut() {
        for v in m.iter_mut() {
            *v = scale * standard_normal(&mut rng);
        }
    }
    let phase: f64 = rng.gen();
    (0..grid.n_steps())
        .map(|i| {
            let t = grid.node(i) + phase;
            let mut c = [0.0, 0.0];
            for (k, m) in coef.iter().enumerate() {
                let (s, co) = (2.0 * PI * (k + 1) as f64 * t).sin_cos();
                c[0] += m[0] * co + m[1] * s;
                c[1] += m[2] * co + m[3] * s;
            }
            c
        })
        .collect()
}

struct Solved {
    control: Vec<[f64; 2]>,
    objective: f64,
    iterations: usize,
    history: Vec<Vec<f64>>,
}

fn solve_from(target: GroupElement, opts: &GeodesicOptions, start: Vec<[f64; 2]>) -> Solved {
    let grid = TimeGrid::new(opts.n_steps).expect("validated");
    let mut c = start;
    let mut mu = opts.mu;
    let mut history = Vec::with_capacity(opts.stages);
    let mut iterations = 0;
    let mut objective = 0.0;
    for _ in 0..opts.stages {
        let problem = EndpointProblem { target, grid, mu, max_iters: opts.max_iters, tolerance: opts.tolerance };
        let h = descend(&problem, &mut c);
        iterations += h.len();
        objective = problem.objective(&c, None);
        history.push(h);
        mu *= opts.mu_factor;
    }
    Solved { control: c, objective, iterations, history }
}

/// Minimal-energy horizontal path from `e` to `target`.
///
/// The problem is solved for the dilated target `δ_{1/s}(target)` with
/// `s = N(target)`, so the penalty sees a unit-size endpoint at every scale;
/// the control is then scaled back by `s`. Convergence is judged on the
/// endpoint error of the normalized problem.
pub fn solve_endpoint(target: GroupElement, opts: &GeodesicOptions) -> Result<GeodesicResult> {
    opts.validate()?;
    if !target.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite target {target:?}")));
    }
    let grid = TimeGrid::new(opts.n_steps)?;
    if target == GroupElement::IDENTITY {
        return Ok(finish(target, 1.0, opts, grid, vec![[0.0, 0.0]; opts.n_steps], 0, 0, Vec::new()));
    }
    let s = target.norm();
    let unit = target.dilate(1.0 / s);
    let runs: Vec<Solved> = (0..opts.starts)
        .into_par_iter()
        .map(|k| solve_from(unit, opts, random_start(grid, 1.0, opts.seed.child(k as u64))))
        .collect();
    let (best, _) =
        runs.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bf), (i, r)| if r.objective < bf { (i, r.objective) } else { (bi, bf) });
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let r = runs.into_iter().nth(best).expect("at least one start");
    let control = r.control.iter().map(|c| [s * c[0], s * c[1]]).collect();
    Ok(finish(target, s, opts, grid, control, best, iterations, r.history))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    target: GroupElement,
    scale: f64,
    opts: &GeodesicOptions,
    grid: TimeGrid,
    control: Vec<[f64; 2]>,
    start: usize,
    iterations: usize,
    history: Vec<Vec<f64>>,
) -> GeodesicResult {
    let path = lift_control(&HorizontalControl::new(grid, control).expect("finite iterates"));
    let end = path.endpoint();
    let err = ((end.x - target.x).powi(2) + (end.y - target.y).powi(2) + (end.z - target.z).powi(2)).sqrt();
    let (ue, ut) = (end.dilate(1.0 / scale), target.dilate(1.0 / scale));
    let unit_err = ((ue.x - ut.x).powi(2) + (ue.y - ut.y).powi(2) + (ue.z - ut.z).powi(2)).sqrt();
    let energy = path.energy();
    GeodesicResult {
        target,
        distance: energy.sqrt(),
        energy,
        endpoint_error: err,
        converged: unit_err <= opts.tolerance,
        iterations,
        start,
        seed: opts.seed,
        history,
        path: Some(path),
    }
}

/// `d_cc(g1, g2)` as `√energy` of the minimizer joining `e` to `g1⁻¹g2`.
/// A run that misses the endpoint tolerance is returned with
/// `converged = false`; see [`GeodesicResult::require_converged`].
pub fn cc_distance(g1: GroupElement, g2: GroupElement, opts: &GeodesicOptions) -> Result<GeodesicResult> {
    if !g1.is_finite() || !g2.is_finite() {
        return Err(Error::InvalidArgument("non-finite endpoint".into()));
    }
    solve_endpoint(multiply(inverse(g1), g2), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// Fixed endpoint.
    Endpoint(GroupElement),
    /// Free endpoint with terminal cost `weight·‖p − target‖²`; `None` means
    /// no terminal cost.
    Free(Option<(GroupElement, f64)>),
}

/// Maximizer of `∫L = −½‖c‖²` under the constraint, i.e. the minimal-energy
/// path.
pub fn most_probable_path(constraint: Constraint, opts: &GeodesicOptions) -> Result<GeodesicResult> {
    match constraint {
        Constraint::Endpoint(target) => solve_endpoint(target, opts),
        Constraint::Free(None) => {
            opts.validate()?;
            let grid = TimeGrid::new(opts.n_steps)?;
            let mut r =
                finish(GroupElement::IDENTITY, 1.0, opts, grid, vec![[0.0, 0.0]; opts.n_steps], 0, 0, Vec::new());
            r.endpoint_error = 0.0;
            r.converged = true;
            Ok(r)
        }
        Constraint::Free(Some((target, weight))) => {
            opts.validate()?;
            if !(weight > 0.0) || !target.is_finite() {
                return Err(Error::InvalidArgument("terminal cost needs a finite target and positive weight".into()));
            }
            let single = GeodesicOptions { mu: weight, mu_factor: 1.0, stages: 1, ..*opts };
            let grid = TimeGrid::new(opts.n_steps)?;
            let runs: Vec<Solved> = (0..opts.starts)
                .into_par_iter()
                .map(|k| {
                    solve_from(target, &single, random_start(grid, target.norm().max(1e-3), opts.seed.child(k as u64)))
                })
                .collect();
            let best = (0..runs.len()).fold(0, |b, i| if runs[i].objective < runs[b].objective { i } else { b });
            let iterations = runs.iter().map(|r| r.iterations).sum();
            let r = runs.into_iter().nth(best).expect("at least one start");
            let mut out = finish(target, 1.0, opts, grid, r.control, best, iterations, r.history);
            // the endpoint is free, so there is no tolerance to meet
            out.converged = true;
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Smallest and largest `d_cc / ρ` over converged pairs.
    pub c_hat: f64,
    #[serde(rename = "C_hat")]
    pub big_c_hat: f64,
    pub ratios: Vec<f64>,
    pub excluded: usize,
    pub seed: Seed,
}

/// Empirical equivalence constants between `d_cc` and `ρ` over random pairs
/// drawn uniformly from `[−half_width, half_width]³`.
pub fn equivalence_constants(
    n_points: usize,
    half_width: f64,
    seed: Seed,
    opts: &GeodesicOptions,
) -> Result<EquivalenceReport> {
    if n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be at least 1".into()));
    }
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::InvalidArgument("sampling box must have positive size".into()));
    }
    let pairs: Vec<(GroupElement, GroupElement)> = (0..n_points)
        .map(|i| {
            let mut rng = seed.child(i as u64).rng();
            let mut draw = || {
                GroupElement::new(
                    half_width * (2.0 * rng.gen::<f64>() - 1.0),
                    half_width * (2.0 * rng.gen::<f64>() - 1.0),
                    half_width * (2.0 * rng.gen::<f64>() - 1.0),
                )
            };
            (draw(), draw())
        })
        .collect();
    equivalence_over(&pairs, seed, opts)
}

/// Ratios `d_cc / ρ` over the given pairs.
pub fn equivalence_over(
    pairs: &[(GroupElement, GroupElement)],
    seed: Seed,
    opts: &GeodesicOptions,
) -> Result<EquivalenceReport> {
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (g1, g2) in pairs {
        let rho = homogeneous_distance(*g1, *g2);
        if rho == 0.0 {
            excluded += 1;
            continue;
        }
        let r = cc_distance(*g1, *g2, opts)?;
        if r.converged {
            ratios.push(r.distance / rho);
        } else {
            excluded += 1;
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidArgument(format!("all {} pairs were excluded", pairs.len())));
    }
    let c_hat = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let big = ratios.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport { c_hat, big_c_hat: big, ratios, excluded, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupElement as G;

    fn opts() -> GeodesicOptions {
        GeodesicOptions::default()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let grid = TimeGrid::new(16).unwrap();
        let mut rng = Seed::new(77, 0).rng();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let target = G::new(standard_normal(&mut rng), standard_normal(&mut rng), standard_normal(&mut rng));
            let p = EndpointProblem { target, grid, mu: 10.0, max_iters: 1, tolerance: 1e-3 };
            let c: Vec<[f64; 2]> = (0..16).map(|_| [standard_normal(&mut rng), standard_normal(&mut rng)]).collect();
            let mut g = vec![[0.0; 2]; 16];
            p.objective(&c, Some(&mut g));
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..16 {
                for d in 0..2 {
                    let mut a = c.clone();
                    let mut b = c.clone();
                    a[k][d] += h;
                    b[k][d] -= h;
                    let fd = (p.objective(&a, None) - p.objective(&b, None)) / (2.0 * h);
                    num += (fd - g[k][d]).powi(2);
                    den += g[k][d].powi(2);
                }
            }
            worst = worst.max((num / den).sqrt());
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn identity_target_is_the_constant_path() {
        let r = cc_distance(G::new(1.0, 2.0, 3.0), G::new(1.0, 2.0, 3.0), &opts()).unwrap();
        assert_eq!(r.distance, 0.0);
        assert!(r.path().points().iter().all(|p| *p == G::IDENTITY));
    }

    #[test]
    fn planar_target_is_reached_by_a_segment() {
        let r = cc_distance(G::IDENTITY, G::new(3.0, 4.0, 0.0), &opts()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.distance - 5.0).abs() < 0.01 * 5.0, "{}", r.distance);
    }

    #[test]
    fn vertical_target_needs_a_circle() {
        let r = cc_distance(G::IDENTITY, G::new(0.0, 0.0, 1.0), &opts()).unwrap();
        assert!(r.converged, "{r:?}");
        let exact = 2.0 * PI.sqrt();
        assert!((r.distance - exact).abs() < 0.02 * exact, "{}", r.distance);
    }

    #[test]
    fn objective_is_monotone_within_stages() {
        let r = cc_distance(G::IDENTITY, G::new(0.3, -0.2, 0.7), &opts()).unwrap();
        assert_eq!(r.history.len(), opts().stages);
        for h in &r.history {
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn returned_path_is_horizontal() {
        let r = cc_distance(G::IDENTITY, G::new(-0.4, 0.1, 0.3), &opts()).unwrap();
        assert!(r.path().horizontality_defect() < 1e-12);
    }

    #[test]
    fn most_probable_paths() {
        let free = most_probable_path(Constraint::Free(None), &opts()).unwrap();
        assert_eq!(free.action(), 0.0);
        let line = most_probable_path(Constraint::Endpoint(G::new(1.0, 0.0, 0.0)), &opts()).unwrap();
        assert!((line.action() + 0.5).abs() < 2e-3, "{}", line.action());
        let om = line.path().om_lagrangian().integral;
        assert!((om - line.action()).abs() < 1e-10);
        let soft = most_probable_path(Constraint::Free(Some((G::new(1.0, 0.0, 0.0), 1.0))), &opts()).unwrap();
        // minimizing ‖c‖² + ‖x − 1‖² over lines gives x = ½
        assert!((soft.path().endpoint().x - 0.5).abs() < 1e-4, "{:?}", soft.path().endpoint());
    }

    #[test]
    fn invalid_inputs() {
        assert!(cc_distance(G::new(f64::NAN, 0.0, 0.0), G::IDENTITY, &opts()).is_err());
        let bad = GeodesicOptions { mu: 0.0, ..opts() };
        assert!(cc_distance(G::IDENTITY, G::new(1.0, 0.0, 0.0), &bad).is_err());
        assert!(equivalence_constants(0, 1.0, Seed::new(0, 0), &opts()).is_err());
    }

    #[test]
    fn symmetric_and_left_invariant() {
        let o = opts();
        let (g1, g2) = (G::new(0.2, -0.5, 0.3), G::new(-0.4, 0.6, -0.2));
        let d = cc_distance(g1, g2, &o).unwrap();
        let back = cc_distance(g2, g1, &o).unwrap();
        let slack = 2.0 * o.tolerance * (1.0 + d.distance);
        assert!((d.distance - back.distance).abs() < slack, "{} {}", d.distance, back.distance);
        let k = G::new(1.5, 0.7, -2.0);
        let moved = cc_distance(k * g1, k * g2, &o).unwrap();
        assert!((d.distance - moved.distance).abs() < slack);
    }

    #[test]
    fn ratios_are_dilation_invariant() {
        let o = opts();
        let pairs = [(G::new(0.1, 0.2, 0.3), G::new(-0.3, 0.4, -0.1))];
        let base = equivalence_over(&pairs, Seed::new(0, 0), &o).unwrap().ratios[0];
        for lambda in [0.1, 3.0] {
            let dilated = [(pairs[0].0.dilate(lambda), pairs[0].1.dilate(lambda))];
            let r = equivalence_over(&dilated, Seed::new(0, 0), &o).unwrap().ratios[0];
            assert!((r - base).abs() < 2.0 * o.tolerance * base, "{r} vs {base}");
        }
    }

    #[test]
    fn vertical_and_planar_ratios() {
        let o = opts();
        let vertical: Vec<_> = [0.01, 1.0, 25.0].iter().map(|&z| (G::IDENTITY, G::new(0.0, 0.0, z))).collect();
        let rep = equivalence_over(&vertical, Seed::new(0, 0), &o).unwrap();
        let exact = 2.0 * PI.sqrt();
        for r in &rep.ratios {
            assert!((r - exact).abs() < 0.02 * exact, "{r}");
        }
        let planar: Vec<_> = [0.5, 2.0, 8.0].iter().map(|&s| (G::IDENTITY, G::new(0.6 * s, -0.8 * s, 0.0))).collect();
        let rep = equivalence_over(&planar, Seed::new(0, 0), &o).unwrap();
        for r in &rep.ratios {
            assert!((r - rep.ratios[0]).abs() < 1e-3, "{:?}", rep.ratios);
        }
    }
}
