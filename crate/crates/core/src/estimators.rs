//! Monte Carlo estimators for small-tube probabilities around horizontal
//! curves, their log ratios, and conditional means of stochastic exponentials.
//!
//! Three samplers share one tube definition, `max_i ρ²(u^φ_i, e) < ε²`:
//!
//! * `naive` draws the diffusion directly;
//! * `importance` draws `W = B + φ` and reweights by the Cameron-Martin factor;
//! * `resampling` runs independent populations of shifted particles that are
//!   killed when they leave the tube and resampled after every step.
//!
//! Per-sample drivers give sample `j` the seed `seed.child(j)`; populations
//! use `seed.child(r)`. Work is split into fixed chunks whose statistics are
//! merged in chunk order, so results do not depend on the worker count.

use crate::error::{Error, Result};
use crate::group::{inverse, multiply, GroupElement};
use crate::paths::{correction_curve, HorizontalPath, TimeGrid};
use crate::rng::{standard_normal, Seed};
use crate::sir::{self, Condition, SirOutcome, SirSpec};
use crate::stats::{Moments, PairMoments};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: u64 = 2048;
/// Independent populations per resampling estimate.
pub const DEFAULT_REPLICATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Importance,
    Resampling,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "importance" => Ok(Method::Importance),
            "resampling" => Ok(Method::Resampling),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TubeQuery {
    pub curve: HorizontalPath,
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: Seed,
    pub method: Method,
}

impl TubeQuery {
    pub fn grid(&self) -> TimeGrid {
        self.curve.grid()
    }

    fn echo(&self) -> QueryEcho {
        QueryEcho {
            epsilon: self.epsilon,
            n_samples: self.n_samples,
            n_steps: self.grid().n_steps(),
            seed: self.seed,
            method: self.method,
        }
    }
}

/// What is needed to reproduce an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryEcho {
    pub epsilon: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    pub seed: Seed,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeEstimate {
    pub p_hat: f64,
    pub log_p_hat: f64,
    pub stderr: f64,
    /// Standard error of `log_p_hat` (delta method).
    pub log_stderr: f64,
    /// Samples inside the tube; for `resampling`, surviving particles at the
    /// final step summed over populations.
    pub hits: u64,
    /// Effective sample size; `None` for the naive sampler. For `resampling`
    /// it is the smallest per-step ESS summed over populations.
    pub ess: Option<f64>,
    pub query: QueryEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub epsilon: f64,
    pub log_ratio_hat: f64,
    pub stderr: f64,
    pub theory_log_ratio: f64,
    pub log_p_phi: f64,
    pub log_p_psi: f64,
    pub hits_phi: u64,
    pub hits_psi: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    /// `None` stands for `ε = ∞` (no conditioning).
    pub epsilon: Option<f64>,
    pub estimate: f64,
    pub stderr: f64,
    /// `exp(⟨γ, φ⟩ − ½‖γ‖²)`.
    pub theory: f64,
    pub hits: u64,
    pub ess: Option<f64>,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBoundReport {
    pub epsilon: f64,
    /// `3ε² + ε·C_γ`.
    pub bound: f64,
    pub c_gamma: f64,
    /// Surviving paths at the final node when conditioning on `u^ψ`, then on `z`.
    pub conditioned_u: u64,
    pub conditioned_z: u64,
    pub nodes_checked: u64,
    /// Nodes with `ρ²(z) ≥ bound` while `u^ψ` stayed in the tube.
    pub violations_z: u64,
    /// Nodes with `ρ²(u^ψ) ≥ bound` while `z` stayed in the tube.
    pub violations_u: u64,
}

impl DriftBoundReport {
    pub fn violations(&self) -> u64 {
        self.violations_z + self.violations_u
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")))
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("n_samples must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// One path of `u = centre⁻¹g` driven by `W = B + shift`, summarized.
#[derive(Clone, Copy)]
struct PathKernel<'a> {
    centre: &'a [GroupElement],
    shift: Option<&'a [[f64; 2]]>,
    exp_control: Option<&'a [[f64; 2]]>,
    dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PathSummary {
    sup_rho2: f64,
    /// `Σ⟨c_shift, ΔB⟩`.
    shift_pairing: f64,
    /// `Σ⟨c_γ, ΔW⟩`.
    x_gamma: f64,
}

impl PathKernel<'_> {
    /// Returns `None` as soon as `ρ²` reaches `cap`; the draws are identical
    /// to [`crate::stochastics::sample_noise`] with the same seed.
    fn run(&self, seed: Seed, cap: f64) -> Option<PathSummary> {
        let mut rng = seed.rng();
        let sd = self.dt.sqrt();
        let mut w = [0.0, 0.0];
        let mut area = 0.0;
        let mut sup = multiply(inverse(self.centre[0]), GroupElement::IDENTITY).norm_sq();
        let (mut pairing, mut x) = (0.0, 0.0);
        for i in 0..self.centre.len() - 1 {
            let a = standard_normal(&mut rng);
            let b = standard_normal(&mut rng);
            let db = [sd * a, sd * b];
            let d = match self.shift {
                Some(c) => {
                    let c = c[i];
                    pairing += c[0] * db[0] + c[1] * db[1];
                    [db[0] + c[0] * self.dt, db[1] + c[1] * self.dt]
                }
                None => db,
            };
            if let Some(e) = self.exp_control {
                x += e[i][0] * d[0] + e[i][1] * d[1];
            }
            area += 0.5 * crate::group::omega(w, d);
            w = [w[0] + d[0], w[1] + d[1]];
            let u = multiply(inverse(self.centre[i + 1]), GroupElement::new(w[0], w[1], area));
            sup = sup.max(u.norm_sq());
            if sup >= cap {
                return None;
            }
        }
        Some(PathSummary { sup_rho2: sup, shift_pairing: pairing, x_gamma: x })
    }
}

fn par_chunks<A, F>(n: u64, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(std::ops::Range<u64>) -> A + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks).into_par_iter().map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n))).collect()
}

/// Tube probability estimate for a single query.
pub fn tube_probability(q: &TubeQuery) -> Result<TubeEstimate> {
    check_epsilon(q.epsilon)?;
    check_samples(q.n_samples)?;
    match q.method {
        Method::Naive | Method::Importance => {
            let mut out = tube_ladder(&q.curve, &[q.epsilon], q.n_samples, q.seed, q.method)?;
            Ok(out.pop().expect("one epsilon in, one estimate out"))
        }
        Method::Resampling => {
            let r = resampled(q.curve.points(), &q.curve, None, q.epsilon, q.n_samples, q.seed);
            Ok(TubeEstimate {
                p_hat: r.log_z.exp(),
                log_p_hat: r.log_z,
                stderr: r.log_z.exp() * r.log_z_se,
                log_stderr: r.log_z_se,
                hits: r.alive,
                ess: Some(r.ess),
                query: q.echo(),
            })
        }
    }
}

/// Estimates for a ladder of tube radii from one set of per-sample paths.
///
/// Each path's supremum is computed once, so the estimates are pathwise
/// monotone in `ε`. Only the per-sample samplers support ladders.
pub fn tube_ladder(
    curve: &HorizontalPath,
    eps: &[f64],
    n_samples: usize,
    seed: Seed,
    method: Method,
) -> Result<Vec<TubeEstimate>> {
    for &e in eps {
        check_epsilon(e)?;
    }
    check_samples(n_samples)?;
    let shift = match method {
        Method::Naive => None,
        Method::Importance => Some(curve.control().samples()),
        Method::Resampling => {
            return Err(Error::InvalidArgument(
                "resampling estimates are not pathwise; query each epsilon separately".into(),
            ))
        }
    };
    let kernel = PathKernel { centre: curve.points(), shift, exp_control: None, dt: curve.grid().dt() };
    let half_energy = 0.5 * curve.energy();
    let eps2: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let cap = eps2.iter().copied().fold(0.0, f64::max);
    let parts = par_chunks(n_samples as u64, |range| {
        let mut acc = vec![(Moments::default(), 0u64); eps2.len()];
        for j in range {
            let s = kernel.run(seed.child(j), cap);
            let (sup, weight) = match s {
                Some(s) if shift.is_some() => (s.sup_rho2, (-s.shift_pairing - half_energy).exp()),
                Some(s) => (s.sup_rho2, 1.0),
                None => (f64::INFINITY, 0.0),
            };
            for ((m, h), e2) in acc.iter_mut().zip(&eps2) {
                let inside = sup < *e2;
                m.push(if inside { weight } else { 0.0 });
                *h += inside as u64;
            }
        }
        acc
    });
    let mut total = vec![(Moments::default(), 0u64); eps2.len()];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.0.merge(&p.0);
            t.1 += p.1;
        }
    }
    Ok(total
        .iter()
        .zip(eps)
        .map(|(&(ref m, hits), &e)| {
            let p = m.mean();
            let se = m.stderr();
            let ess = shift.map(|_| if m.sum_sq > 0.0 { m.sum * m.sum / m.sum_sq } else { 0.0 });
            TubeEstimate {
                p_hat: p,
                log_p_hat: p.ln(),
                stderr: se,
                log_stderr: se / p,
                hits,
                ess,
                query: QueryEcho { epsilon: e, n_samples, n_steps: curve.grid().n_steps(), seed, method },
            }
        })
        .collect())
}

struct Resampled {
    log_z: f64,
    log_z_se: f64,
    /// Numerator and denominator of the conditional mean, per population and
    /// scaled by a common factor.
    pairs: PairMoments,
    alive: u64,
    ess: f64,
    outcomes: Vec<SirOutcome>,
}

fn replicate_sizes(n: usize) -> Vec<usize> {
    let r = DEFAULT_REPLICATES.min(n);
    (0..r).map(|k| n / r + usize::from(k < n % r)).collect()
}

fn resampled(
    centre: &[GroupElement],
    shift: &HorizontalPath,
    gamma: Option<&HorizontalPath>,
    eps: f64,
    n: usize,
    seed: Seed,
) -> Resampled {
    let spec = SirSpec {
        centre,
        shift: shift.control().samples(),
        exp_control: gamma.map(|g| g.control().samples()),
        exp_energy: gamma.map_or(0.0, HorizontalPath::energy),
        correction: None,
        condition: Condition::OnU,
        eps2: eps * eps,
        check_bound: None,
        dt: shift.grid().dt(),
    };
    let outcomes = run_populations(&spec, n, seed);
    combine(outcomes)
}

fn run_populations(spec: &SirSpec<'_>, n: usize, seed: Seed) -> Vec<SirOutcome> {
    replicate_sizes(n)
        .into_par_iter()
        .enumerate()
        .map(|(r, m)| sir::run(spec, m, &mut seed.child(r as u64).rng()))
        .collect()
}

fn combine(outcomes: Vec<SirOutcome>) -> Resampled {
    let top = outcomes.iter().map(|o| o.log_z).fold(f64::NEG_INFINITY, f64::max);
    let mut z = Moments::default();
    let mut pairs = PairMoments::default();
    for o in &outcomes {
        let a = if top.is_finite() { (o.log_z - top).exp() } else { 0.0 };
        z.push(a);
        if a > 0.0 {
            pairs.push(a * o.conditional, a);
        } else {
            pairs.push(0.0, 0.0);
        }
    }
    let log_z = if top.is_finite() { top + z.mean().ln() } else { f64::NEG_INFINITY };
    Resampled {
        log_z,
        log_z_se: z.stderr() / z.mean(),
        pairs,
        alive: outcomes.iter().map(|o| o.alive as u64).sum(),
        ess: outcomes.iter().map(|o| o.min_ess).sum(),
        outcomes,
    }
}

/// `log P̂_φ(ε) − log P̂_ψ(ε)` for each radius, with the same seed for both
/// curves. Cells whose tube estimate has no hits are returned as errors.
pub fn om_ratio(
    phi: &HorizontalPath,
    psi: &HorizontalPath,
    eps: &[f64],
    n_samples: usize,
    seed: Seed,
    method: Method,
) -> Result<Vec<Result<RatioEstimate>>> {
    phi.grid().ensure_same(&psi.grid())?;
    check_samples(n_samples)?;
    for &e in eps {
        check_epsilon(e)?;
    }
    let theory = -0.5 * phi.energy() + 0.5 * psi.energy();
    let cells = match method {
        Method::Naive | Method::Importance => {
            let a = tube_ladder(phi, eps, n_samples, seed, method)?;
            let b = tube_ladder(psi, eps, n_samples, seed, method)?;
            let cov = paired_samples(phi, psi, eps, n_samples, seed, method);
            a.into_iter()
                .zip(b)
                .zip(cov)
                .map(|((a, b), pm)| {
                    ratio_cell(theory, a.query.epsilon, (a.log_p_hat, a.hits), (b.log_p_hat, b.hits), n_samples, || {
                        pm.log_ratio().1
                    })
                })
                .collect()
        }
        Method::Resampling => eps
            .iter()
            .map(|&e| {
                let a = resampled(phi.points(), phi, None, e, n_samples, seed);
                let b = resampled(psi.points(), psi, None, e, n_samples, seed);
                let mut pm = PairMoments::default();
                for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
                    pm.push((x.log_z - a.log_z).exp(), (y.log_z - b.log_z).exp());
                }
                ratio_cell(theory, e, (a.log_z, a.alive), (b.log_z, b.alive), n_samples, || pm.log_ratio().1)
            })
            .collect(),
    };
    Ok(cells)
}

fn ratio_cell(
    theory: f64,
    epsilon: f64,
    (la, ha): (f64, u64),
    (lb, hb): (f64, u64),
    n: usize,
    se: impl FnOnce() -> f64,
) -> Result<RatioEstimate> {
    if ha == 0 || hb == 0 || !la.is_finite() || !lb.is_finite() {
        return Err(Error::ZeroHits { epsilon, samples: n });
    }
    Ok(RatioEstimate {
        epsilon,
        log_ratio_hat: la - lb,
        stderr: se(),
        theory_log_ratio: theory,
        log_p_phi: la,
        log_p_psi: lb,
        hits_phi: ha,
        hits_psi: hb,
    })
}

/// Per-sample `(weight·1_φ, weight·1_ψ)` pairs under common random numbers.
fn paired_samples(
    phi: &HorizontalPath,
    psi: &HorizontalPath,
    eps: &[f64],
    n: usize,
    seed: Seed,
    method: Method,
) -> Vec<PairMoments> {
    fn kernel(c: &HorizontalPath, method: Method) -> PathKernel<'_> {
        PathKernel {
            centre: c.points(),
            shift: (method == Method::Importance).then(|| c.control().samples()),
            exp_control: None,
            dt: c.grid().dt(),
        }
    }
    let (ka, kb) = (kernel(phi, method), kernel(psi, method));
    let (ha, hb) = (0.5 * phi.energy(), 0.5 * psi.energy());
    let eps2: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let cap = eps2.iter().copied().fold(0.0, f64::max);
    let value = |k: &PathKernel<'_>, half: f64, j: u64| {
        k.run(seed.child(j), cap).map(|s| {
            let w = if k.shift.is_some() { (-s.shift_pairing - half).exp() } else { 1.0 };
            (s.sup_rho2, w)
        })
    };
    let parts = par_chunks(n as u64, |range| {
        let mut acc = vec![PairMoments::default(); eps2.len()];
        for j in range {
            let a = value(&ka, ha, j);
            let b = value(&kb, hb, j);
            for (m, e2) in acc.iter_mut().zip(&eps2) {
                let pick = |v: Option<(f64, f64)>| v.filter(|v| v.0 < *e2).map_or(0.0, |v| v.1);
                m.push(pick(a), pick(b));
            }
        }
        acc
    });
    let mut total = vec![PairMoments::default(); eps2.len()];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    total
}

/// `E[𝓔^γ₁ | max ρ(u^φ, e) < ε]` as a ratio estimator. `epsilon = None`
/// removes the conditioning.
pub fn conditional_exponential(
    gamma: &HorizontalPath,
    phi: &HorizontalPath,
    epsilon: Option<f64>,
    n_samples: usize,
    seed: Seed,
    method: Method,
) -> Result<ConditionalEstimate> {
    gamma.grid().ensure_same(&phi.grid())?;
    check_samples(n_samples)?;
    if let Some(e) = epsilon {
        check_epsilon(e)?;
    }
    let eps = epsilon.unwrap_or(f64::INFINITY);
    let theory = (gamma.inner_product(phi)? - 0.5 * gamma.energy()).exp();
    let ge = gamma.energy();
    let (estimate, stderr, hits, ess) = match method {
        Method::Naive | Method::Importance => {
            let kernel = PathKernel {
                centre: phi.points(),
                shift: (method == Method::Importance).then(|| phi.control().samples()),
                exp_control: Some(gamma.control().samples()),
                dt: phi.grid().dt(),
            };
            let half_phi = 0.5 * phi.energy();
            let cap = eps * eps;
            let parts = par_chunks(n_samples as u64, |range| {
                let mut pm = PairMoments::default();
                let mut hits = 0u64;
                for j in range {
                    match kernel.run(seed.child(j), cap) {
                        Some(s) if s.sup_rho2 < cap => {
                            hits += 1;
                            let lw = if kernel.shift.is_some() { -s.shift_pairing - half_phi } else { 0.0 };
                            pm.push((lw + s.x_gamma - 0.5 * ge).exp(), lw.exp());
                        }
                        _ => pm.push(0.0, 0.0),
                    }
                }
                (pm, hits)
            });
            let mut pm = PairMoments::default();
            let mut hits = 0;
            for (p, h) in &parts {
                pm.merge(p);
                hits += h;
            }
            if hits == 0 {
                return Err(Error::ZeroHits { epsilon: eps, samples: n_samples });
            }
            let (r, se) = pm.ratio();
            let ess = kernel.shift.map(|_| if pm.sum_bb > 0.0 { pm.sum_b * pm.sum_b / pm.sum_bb } else { 0.0 });
            (r, se, hits, ess)
        }
        Method::Resampling => {
            let res = resampled(phi.points(), phi, Some(gamma), eps, n_samples, seed);
            if res.alive == 0 || !res.log_z.is_finite() {
                return Err(Error::ZeroHits { epsilon: eps, samples: n_samples });
            }
            let (r, se) = res.pairs.ratio();
            (r, se, res.alive, Some(res.ess))
        }
    };
    Ok(ConditionalEstimate { epsilon, estimate, stderr, theory, hits, ess, method })
}

/// Counts nodes at which the pathwise two-sided bound between `u^ψ` and `z`
/// fails. Paths conditioned on either tube are produced by resampling around
/// `ψ`, with `n_samples` particles per direction.
pub fn drift_bound_check(
    psi: &HorizontalPath,
    phi: &HorizontalPath,
    epsilon: f64,
    n_samples: usize,
    seed: Seed,
) -> Result<DriftBoundReport> {
    check_epsilon(epsilon)?;
    check_samples(n_samples)?;
    let gamma = correction_curve(phi, psi)?;
    let c_gamma = gamma.l1_control_norm();
    let bound = 3.0 * epsilon * epsilon + epsilon * c_gamma;
    let run = |condition| {
        let spec = SirSpec {
            centre: psi.points(),
            shift: psi.control().samples(),
            exp_control: None,
            exp_energy: 0.0,
            correction: Some(gamma.control().samples()),
            condition,
            eps2: epsilon * epsilon,
            check_bound: Some(bound),
            dt: psi.grid().dt(),
        };
        run_populations(&spec, n_samples, seed)
    };
    let on_u = run(Condition::OnU);
    let on_z = run(Condition::OnZ);
    let sum = |o: &[SirOutcome], f: fn(&SirOutcome) -> u64| o.iter().map(f).sum::<u64>();
    Ok(DriftBoundReport {
        epsilon,
        bound,
        c_gamma,
        conditioned_u: sum(&on_u, |o| o.alive as u64),
        conditioned_z: sum(&on_z, |o| o.alive as u64),
        nodes_checked: sum(&on_u, |o| o.checked) + sum(&on_z, |o| o.checked),
        violations_z: sum(&on_u, |o| o.violations),
        violations_u: sum(&on_z, |o| o.violations),
    })
}

/// Means of the importance weight over all samples and over those inside the
/// tube, for the consistency check of the measure change.
pub fn weight_consistency(
    curve: &HorizontalPath,
    eps: f64,
    n_samples: usize,
    seed: Seed,
) -> Result<(Moments, Moments)> {
    check_epsilon(eps)?;
    check_samples(n_samples)?;
    let kernel = PathKernel {
        centre: curve.points(),
        shift: Some(curve.control().samples()),
        exp_control: None,
        dt: curve.grid().dt(),
    };
    let half = 0.5 * curve.energy();
    let parts = par_chunks(n_samples as u64, |range| {
        let (mut all, mut inside) = (Moments::default(), Moments::default());
        for j in range {
            let s = kernel.run(seed.child(j), f64::INFINITY).expect("uncapped run");
            let w = (-s.shift_pairing - half).exp();
            all.push(w);
            inside.push(if s.sup_rho2 < eps * eps { w } else { 0.0 });
        }
        (all, inside)
    });
    let (mut all, mut inside) = (Moments::default(), Moments::default());
    for (a, i) in &parts {
        all.merge(a);
        inside.merge(i);
    }
    Ok((all, inside))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::{
        cameron_martin_shift, heis_bm, sample_noise, stochastic_exponential, sup_norm_sq, u_process,
    };

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn kernel_matches_public_pipeline() {
        let g = grid(64);
        let phi = HorizontalPath::circle(g, 0.3);
        let gamma = HorizontalPath::line(g, [0.5, -1.0]);
        let seed = Seed::new(42, 7);
        for j in 0..20 {
            let s = seed.child(j);
            let noise = sample_noise(g, s);
            let naive = PathKernel {
                centre: phi.points(),
                shift: None,
                exp_control: Some(gamma.control().samples()),
                dt: g.dt(),
            };
            let got = naive.run(s, f64::INFINITY).unwrap();
            let u = u_process(phi.as_group_path(), &heis_bm(&noise)).unwrap();
            assert_eq!(got.sup_rho2, sup_norm_sq(&u));
            assert_eq!(got.x_gamma, stochastic_exponential(&gamma, &noise).unwrap().x);

            let is = PathKernel { shift: Some(phi.control().samples()), ..naive };
            let got = is.run(s, f64::INFINITY).unwrap();
            let shifted = cameron_martin_shift(&phi, &noise).unwrap();
            let u = u_process(phi.as_group_path(), &heis_bm(&shifted.noise)).unwrap();
            assert_eq!(got.sup_rho2, sup_norm_sq(&u));
            assert_eq!(-got.shift_pairing - 0.5 * phi.energy(), shifted.log_weight);
            assert_eq!(got.x_gamma, stochastic_exponential(&gamma, &shifted.noise).unwrap().x);
        }
    }

    #[test]
    fn huge_tube_is_certain() {
        let g = grid(64);
        let e = HorizontalPath::constant(g);
        for method in [Method::Naive, Method::Importance, Method::Resampling] {
            let q = TubeQuery { curve: e.clone(), epsilon: 1e3, n_samples: 500, seed: Seed::new(1, 0), method };
            let est = tube_probability(&q).unwrap();
            assert_eq!(est.p_hat, 1.0, "{method:?}");
            assert_eq!(est.stderr, 0.0, "{method:?}");
        }
    }

    #[test]
    fn invalid_queries() {
        let g = grid(8);
        let q = |epsilon, n_samples| TubeQuery {
            curve: HorizontalPath::constant(g),
            epsilon,
            n_samples,
            seed: Seed::new(0, 0),
            method: Method::Naive,
        };
        assert!(tube_probability(&q(0.0, 10)).is_err());
        assert!(tube_probability(&q(-1.0, 10)).is_err());
        assert!(tube_probability(&q(f64::NAN, 10)).is_err());
        assert!(tube_probability(&q(0.5, 0)).is_err());
    }

    #[test]
    fn naive_and_importance_agree_for_identity_curve() {
        let g = grid(128);
        let e = HorizontalPath::constant(g);
        let est = |method| {
            tube_probability(&TubeQuery {
                curve: e.clone(),
                epsilon: 0.8,
                n_samples: 40_000,
                seed: Seed::new(7, 0),
                method,
            })
            .unwrap()
        };
        let (a, b) = (est(Method::Naive), est(Method::Importance));
        assert!(a.hits > 100, "{}", a.hits);
        // shifting by the constant curve is the identity
        assert_eq!(a.p_hat, b.p_hat);
        let c = est(Method::Resampling);
        let se = (a.stderr.powi(2) + c.stderr.powi(2)).sqrt();
        assert!((a.p_hat - c.p_hat).abs() < 3.0 * se, "{} vs {} ± {}", a.p_hat, c.p_hat, se);
    }

    #[test]
    fn importance_matches_naive_for_a_line() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [0.5, 0.0]);
        let est = |method| {
            tube_probability(&TubeQuery {
                curve: phi.clone(),
                epsilon: 0.9,
                n_samples: 40_000,
                seed: Seed::new(8, 0),
                method,
            })
            .unwrap()
        };
        let (a, b) = (est(Method::Naive), est(Method::Importance));
        assert!(a.hits >= 100);
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.p_hat - b.p_hat).abs() < 3.0 * se, "{} vs {} ± {}", a.p_hat, b.p_hat, se);
        assert!(b.ess.unwrap() > 0.0 && a.ess.is_none());
    }

    #[test]
    fn ladder_is_monotone_and_matches_single_queries() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [0.3, 0.2]);
        let eps = [0.6, 0.8, 1.0, 1.4];
        let ladder = tube_ladder(&phi, &eps, 5000, Seed::new(3, 3), Method::Naive).unwrap();
        for w in ladder.windows(2) {
            assert!(w[0].hits <= w[1].hits && w[0].p_hat <= w[1].p_hat);
        }
        for (l, &e) in ladder.iter().zip(&eps) {
            let single = tube_probability(&TubeQuery {
                curve: phi.clone(),
                epsilon: e,
                n_samples: 5000,
                seed: Seed::new(3, 3),
                method: Method::Naive,
            })
            .unwrap();
            assert_eq!(single.p_hat, l.p_hat);
        }
        assert!(tube_ladder(&phi, &eps, 10, Seed::new(0, 0), Method::Resampling).is_err());
    }

    #[test]
    fn restricted_weight_mean_is_at_most_one() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [1.0, 0.0]);
        let (all, inside) = weight_consistency(&phi, 0.9, 20_000, Seed::new(5, 0)).unwrap();
        assert!((all.mean() - 1.0).abs() < 3.0 * all.stderr());
        assert!(inside.mean() <= 1.0 + 3.0 * all.stderr());
    }

    #[test]
    fn om_ratio_identical_curves_and_antisymmetry() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [0.5, 0.0]);
        let e = HorizontalPath::constant(g);
        let eps = [0.7, 1.0];
        for method in [Method::Importance, Method::Resampling] {
            let same = om_ratio(&phi, &phi, &eps, 4000, Seed::new(2, 0), method).unwrap();
            for c in &same {
                assert_eq!(c.as_ref().unwrap().log_ratio_hat, 0.0);
            }
            let ab = om_ratio(&phi, &e, &eps, 4000, Seed::new(2, 0), method).unwrap();
            let ba = om_ratio(&e, &phi, &eps, 4000, Seed::new(2, 0), method).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
                assert_eq!(x.log_ratio_hat, -y.log_ratio_hat);
                assert_eq!(x.theory_log_ratio, -0.125);
                assert!(x.stderr > 0.0);
            }
        }
    }

    #[test]
    fn om_ratio_zero_hits_is_a_cell_error() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [1.0, 0.0]);
        let e = HorizontalPath::constant(g);
        let cells = om_ratio(&phi, &e, &[0.05, 2.0], 200, Seed::new(2, 1), Method::Naive).unwrap();
        assert!(matches!(cells[0], Err(Error::ZeroHits { .. })));
        assert!(cells[1].is_ok());
    }

    #[test]
    fn conditional_with_constant_gamma_is_one() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [1.0, 0.0]);
        let c = HorizontalPath::constant(g);
        for method in [Method::Naive, Method::Importance, Method::Resampling] {
            let est = conditional_exponential(&c, &phi, Some(0.8), 3000, Seed::new(4, 0), method).unwrap();
            assert_eq!(est.estimate, 1.0, "{method:?}");
            assert_eq!(est.theory, 1.0);
        }
    }

    #[test]
    fn unconditional_mean_is_one() {
        let g = grid(64);
        let phi = HorizontalPath::line(g, [1.0, 0.0]);
        let est = conditional_exponential(&phi, &phi, None, 50_000, Seed::new(4, 1), Method::Naive).unwrap();
        assert!((est.estimate - 1.0).abs() < 3.0 * est.stderr, "{est:?}");
        assert_eq!(est.hits, 50_000);
    }

    #[test]
    fn drift_bound_examples() {
        let g = grid(128);
        let phi = HorizontalPath::line(g, [1.0, 0.0]);
        let psi = HorizontalPath::line(g, [0.0, 0.5]);
        let same = drift_bound_check(&phi, &phi, 0.5, 2000, Seed::new(6, 0)).unwrap();
        assert_eq!((same.violations(), same.c_gamma), (0, 0.0));
        let r = drift_bound_check(&psi, &phi, 0.5, 2000, Seed::new(6, 1)).unwrap();
        assert_eq!(r.violations(), 0);
        assert!(r.conditioned_u > 0 && r.conditioned_z > 0 && r.nodes_checked > 0);
        assert!((r.c_gamma - 1.5).abs() < 1e-12);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let g = grid(32);
        let phi = HorizontalPath::line(g, [0.5, 0.5]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let q = TubeQuery {
                    curve: phi.clone(),
                    epsilon: 0.9,
                    n_samples: 9000,
                    seed: Seed::new(9, 9),
                    method: Method::Importance,
                };
                let a = tube_probability(&q).unwrap();
                let b = tube_probability(&TubeQuery { method: Method::Resampling, ..q }).unwrap();
                (a, b)
            })
        };
        assert_eq!(run(1), run(3));
    }
}
