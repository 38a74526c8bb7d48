//! Sequential importance resampling for tube events.
//!
//! Particles are driven by Cameron-Martin-shifted increments. After every step
//! the particles that left the tube are killed, the incremental weights are
//! averaged into the running normalizing constant and the population is
//! restored by systematic resampling. Each population therefore estimates the
//! tube probability without bias, and conditional means come from the
//! weighted terminal population.

use crate::group::{inverse, multiply, omega, GroupElement};
use crate::rng::standard_normal;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Condition {
    /// Keep particles with `ρ²(u, e) < ε²`.
    OnU,
    /// Keep particles with `ρ²(z, e) < ε²`.
    OnZ,
}

pub(crate) struct SirSpec<'a> {
    /// `u_i = centre_i⁻¹ g_i`.
    pub centre: &'a [GroupElement],
    /// Proposal drift; the noise is `B + shift`.
    pub shift: &'a [[f64; 2]],
    /// Control of `γ` in `𝓔^γ`, if a conditional mean is wanted.
    pub exp_control: Option<&'a [[f64; 2]]>,
    pub exp_energy: f64,
    /// Correction control turning `u` into `z`.
    pub correction: Option<&'a [[f64; 2]]>,
    pub condition: Condition,
    pub eps2: f64,
    /// Pathwise bound checked on the process not conditioned on.
    pub check_bound: Option<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SirOutcome {
    pub log_z: f64,
    /// `Σ w f / Σ w` over the terminal population, `f = 𝓔^γ₁`.
    pub conditional: f64,
    pub alive: usize,
    pub min_ess: f64,
    pub violations: u64,
    pub checked: u64,
}

struct Population {
    w: Vec<[f64; 2]>,
    area: Vec<f64>,
    xg: Vec<f64>,
    zc: Vec<f64>,
}

impl Population {
    fn new(m: usize) -> Self {
        Self { w: vec![[0.0, 0.0]; m], area: vec![0.0; m], xg: vec![0.0; m], zc: vec![0.0; m] }
    }

    fn gather(&self, idx: &[usize], into: &mut Population) {
        for (k, &i) in idx.iter().enumerate() {
            into.w[k] = self.w[i];
            into.area[k] = self.area[i];
            into.xg[k] = self.xg[i];
            into.zc[k] = self.zc[i];
        }
    }
}

pub(crate) fn run(spec: &SirSpec<'_>, m: usize, rng: &mut ChaCha8Rng) -> SirOutcome {
    let n = spec.shift.len();
    let dt = spec.dt;
    let sd = dt.sqrt();
    let mut pop = Population::new(m);
    let mut next = Population::new(m);
    let mut lw = vec![0.0; m];
    let mut idx = vec![0usize; m];
    let mut log_z = 0.0;
    let mut min_ess = m as f64;
    let (mut violations, mut checked) = (0u64, 0u64);
    let mut alive = m;

    for i in 0..n {
        let c = spec.shift[i];
        let half_c2 = 0.5 * (c[0] * c[0] + c[1] * c[1]) * dt;
        let base = spec.centre[i].planar();
        let centre_inv = inverse(spec.centre[i + 1]);
        let mut max_lw = f64::NEG_INFINITY;
        for k in 0..m {
            let b = [sd * standard_normal(rng), sd * standard_normal(rng)];
            let d = [b[0] + c[0] * dt, b[1] + c[1] * dt];
            let w = pop.w[k];
            if let Some(e) = spec.exp_control {
                pop.xg[k] += e[i][0] * d[0] + e[i][1] * d[1];
            }
            if let Some(g) = spec.correction {
                pop.zc[k] += omega([w[0] - base[0], w[1] - base[1]], g[i]) * dt;
            }
            pop.area[k] += 0.5 * omega(w, d);
            let w = [w[0] + d[0], w[1] + d[1]];
            pop.w[k] = w;
            let u = multiply(centre_inv, GroupElement::new(w[0], w[1], pop.area[k]));
            let planar = u.x * u.x + u.y * u.y;
            let rho_u = planar + u.z.abs();
            let rho_z = planar + (u.z + pop.zc[k]).abs();
            let (kept, other) = match spec.condition {
                Condition::OnU => (rho_u, rho_z),
                Condition::OnZ => (rho_z, rho_u),
            };
            lw[k] = if kept < spec.eps2 {
                if let Some(bound) = spec.check_bound {
                    checked += 1;
                    if other >= bound {
                        violations += 1;
                    }
                }
                let v = -(c[0] * b[0] + c[1] * b[1]) - half_c2;
                max_lw = max_lw.max(v);
                v
            } else {
                f64::NEG_INFINITY
            };
        }
        if max_lw == f64::NEG_INFINITY {
            return SirOutcome {
                log_z: f64::NEG_INFINITY,
                conditional: f64::NAN,
                alive: 0,
                min_ess: 0.0,
                violations,
                checked,
            };
        }
        let (mut s, mut s2) = (0.0, 0.0);
        alive = 0;
        for v in lw.iter_mut() {
            *v = (*v - max_lw).exp();
            s += *v;
            s2 += *v * *v;
            alive += (*v > 0.0) as usize;
        }
        log_z += max_lw + (s / m as f64).ln();
        min_ess = min_ess.min(s * s / s2);

        if i + 1 == n {
            let mut num = 0.0;
            if spec.exp_control.is_some() {
                for k in 0..m {
                    if lw[k] > 0.0 {
                        num += lw[k] * (pop.xg[k] - 0.5 * spec.exp_energy).exp();
                    }
                }
            } else {
                num = s;
            }
            return SirOutcome { log_z, conditional: num / s, alive, min_ess, violations, checked };
        }
        systematic(&lw, s, rng.gen::<f64>(), &mut idx);
        pop.gather(&idx, &mut next);
        std::mem::swap(&mut pop, &mut next);
    }
    // no steps: the empty path never leaves the tube
    SirOutcome { log_z, conditional: 1.0, alive, min_ess, violations, checked }
}

/// Systematic resampling of `weights` (summing to `total`) with offset `u ∈ [0, 1)`.
fn systematic(weights: &[f64], total: f64, u: f64, out: &mut [usize]) {
    let m = out.len();
    let step = total / m as f64;
    let mut target = u * step;
    let mut acc = weights[0];
    let mut j = 0;
    // rounding in the running sum can push the last targets past the final
    // positive weight
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    for slot in out.iter_mut() {
        while acc <= target && j < last {
            j += 1;
            acc += weights[j];
        }
        *slot = j;
        target += step;
    }
}
