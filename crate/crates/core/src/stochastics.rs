//! Driving noise, the hypoelliptic Brownian motion `g_t = (W_t, A_t)`, the
//! shifted processes `u^ξ = ξ⁻¹g` and `z`, stochastic exponentials and the
//! Cameron-Martin-Girsanov shift.
//!
//! Every stochastic integral is a left-point (Itô) sum on the uniform grid.
//! For the area term Itô and Stratonovich sums coincide because `ω` is
//! skew-symmetric.

use crate::error::{Error, Result};
use crate::group::{inverse, multiply, omega, GroupElement};
use crate::paths::{correction_curve, format_f64, GroupPath, HorizontalPath, TimeGrid};
use crate::rng::{fill_increments, Seed};
use std::io::Write;

/// Increments of a planar Brownian motion on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: TimeGrid,
    seed: Option<Seed>,
    increments: Vec<[f64; 2]>,
    cumulative: Vec<[f64; 2]>,
}

impl NoisePath {
    pub fn from_increments(grid: TimeGrid, increments: Vec<[f64; 2]>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "{} increments for a grid of {} steps",
                increments.len(),
                grid.n_steps()
            )));
        }
        Ok(Self::build(grid, None, increments))
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self::build(grid, None, vec![[0.0, 0.0]; grid.n_steps()])
    }

    fn build(grid: TimeGrid, seed: Option<Seed>, increments: Vec<[f64; 2]>) -> Self {
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        let mut w = [0.0, 0.0];
        cumulative.push(w);
        for d in &increments {
            w = [w[0] + d[0], w[1] + d[1]];
            cumulative.push(w);
        }
        Self { grid, seed, increments, cumulative }
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Seed the path was sampled from, if any.
    pub fn seed(&self) -> Option<Seed> {
        self.seed
    }

    #[inline]
    pub fn increments(&self) -> &[[f64; 2]] {
        &self.increments
    }

    /// `W_i = Σ_{j<i} ΔW_j`, with `W_0 = 0`.
    #[inline]
    pub fn cumulative(&self) -> &[[f64; 2]] {
        &self.cumulative
    }

    /// The same path with the two components exchanged.
    pub fn swapped(&self) -> NoisePath {
        Self::build(self.grid, self.seed, self.increments.iter().map(|d| [d[1], d[0]]).collect())
    }
}

pub fn sample_noise(grid: TimeGrid, seed: Seed) -> NoisePath {
    let mut increments = vec![[0.0, 0.0]; grid.n_steps()];
    fill_increments(&mut seed.rng(), grid.dt(), &mut increments);
    NoisePath::build(grid, Some(seed), increments)
}

/// Lévy area `½Σ_{j<upto} ω(W_j, ΔW_j)` up to node `upto`.
pub fn levy_area(noise: &NoisePath, upto: usize) -> f64 {
    let upto = upto.min(noise.grid.n_steps());
    let w = noise.cumulative();
    let d = noise.increments();
    0.5 * (0..upto).map(|j| omega(w[j], d[j])).sum::<f64>()
}

/// Hypoelliptic Brownian motion sampled on a grid, with its driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    path: GroupPath,
    driving: NoisePath,
}

impl DiffusionPath {
    pub fn grid(&self) -> TimeGrid {
        self.path.grid()
    }

    pub fn points(&self) -> &[GroupElement] {
        self.path.points()
    }

    pub fn as_group_path(&self) -> &GroupPath {
        &self.path
    }

    pub fn driving(&self) -> &NoisePath {
        &self.driving
    }

    /// Audit dump with columns `t, W1, W2, x, y, z`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "W1", "W2", "x", "y", "z"])?;
        let grid = self.grid();
        for (i, (p, b)) in self.points().iter().zip(self.driving.cumulative()).enumerate() {
            w.write_record(&[
                format_f64(grid.node(i)),
                format_f64(b[0]),
                format_f64(b[1]),
                format_f64(p.x),
                format_f64(p.y),
                format_f64(p.z),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `g_i = (W_i, ½Σ_{j<i} ω(W_j, ΔW_j))`.
pub fn heis_bm(noise: &NoisePath) -> DiffusionPath {
    let w = noise.cumulative();
    let mut points = Vec::with_capacity(w.len());
    let mut area = 0.0;
    points.push(GroupElement::IDENTITY);
    for (j, d) in noise.increments().iter().enumerate() {
        area += 0.5 * omega(w[j], *d);
        points.push(GroupElement::new(w[j + 1][0], w[j + 1][1], area));
    }
    DiffusionPath {
        path: GroupPath::new(noise.grid(), points).expect("finite noise yields a finite path"),
        driving: noise.clone(),
    }
}

/// Euler scheme for `dg = σ(g)dW` with
/// `σ(x, y, z) = [[1, 0, 0], [0, 1, 0], [−y/2, x/2, 0]]` acting on `(dW₁, dW₂, 0)`.
pub fn euler_sigma(noise: &NoisePath) -> GroupPath {
    let mut points = Vec::with_capacity(noise.grid().n_steps() + 1);
    let mut g = GroupElement::IDENTITY;
    points.push(g);
    for d in noise.increments() {
        g = GroupElement::new(g.x + d[0], g.y + d[1], g.z - 0.5 * g.y * d[0] + 0.5 * g.x * d[1]);
        points.push(g);
    }
    GroupPath::new(noise.grid(), points).expect("finite noise yields a finite path")
}

/// `u_i = ξ_i⁻¹ g_i` by exact group operations.
pub fn u_process(xi: &GroupPath, diffusion: &DiffusionPath) -> Result<GroupPath> {
    xi.grid().ensure_same(&diffusion.grid())?;
    xi.starts_at_identity()?;
    let points = xi.points().iter().zip(diffusion.points()).map(|(x, g)| multiply(inverse(*x), *g)).collect();
    GroupPath::new(xi.grid(), points)
}

/// Left-point discretization of the closed form for horizontal `φ`:
/// `u = W − φ`, `u₃ = ½∫ω(W − φ, dW) + ½∫ω(W − φ, φ′)dt`.
pub fn u_process_closed_form(phi: &HorizontalPath, noise: &NoisePath) -> Result<GroupPath> {
    phi.grid().ensure_same(&noise.grid())?;
    let dt = noise.grid().dt();
    let w = noise.cumulative();
    let mut points = Vec::with_capacity(w.len());
    let mut u3 = 0.0;
    points.push(GroupElement::IDENTITY);
    for (j, (d, c)) in noise.increments().iter().zip(phi.control().samples()).enumerate() {
        let p = phi.points()[j];
        let rel = [w[j][0] - p.x, w[j][1] - p.y];
        u3 += 0.5 * omega(rel, *d) + 0.5 * omega(rel, *c) * dt;
        let q = phi.points()[j + 1];
        points.push(GroupElement::new(w[j + 1][0] - q.x, w[j + 1][1] - q.y, u3));
    }
    GroupPath::new(noise.grid(), points)
}

/// The process `z` with `𝐳 = 𝐮^ψ` and `z₃ = u₃^ψ + Σ ω(𝐮^ψ_s, γ′(s))Δt`,
/// where `γ` is the correction curve of `(φ, ψ)`.
pub fn z_process(psi: &HorizontalPath, phi: &HorizontalPath, noise: &NoisePath) -> Result<GroupPath> {
    psi.grid().ensure_same(&phi.grid())?;
    psi.grid().ensure_same(&noise.grid())?;
    let gamma = correction_curve(phi, psi)?;
    let u = u_process(psi.as_group_path(), &heis_bm(noise))?;
    Ok(shift_vertical(&u, &gamma))
}

/// Adds `Σ_{j<i} ω(𝐮_j, c_γ,j)Δt` to the vertical coordinate of `u`.
/// Subtracting instead inverts the map, see [`unshift_vertical`].
pub fn shift_vertical(u: &GroupPath, gamma: &HorizontalPath) -> GroupPath {
    shift_vertical_signed(u, gamma, 1.0)
}

pub fn unshift_vertical(z: &GroupPath, gamma: &HorizontalPath) -> GroupPath {
    shift_vertical_signed(z, gamma, -1.0)
}

fn shift_vertical_signed(u: &GroupPath, gamma: &HorizontalPath, sign: f64) -> GroupPath {
    let dt = u.grid().dt();
    let mut acc = 0.0;
    let mut points = Vec::with_capacity(u.points().len());
    points.push(u.points()[0]);
    for (j, c) in gamma.control().samples().iter().enumerate() {
        acc += omega(u.points()[j].planar(), *c) * dt;
        let p = u.points()[j + 1];
        points.push(GroupElement::new(p.x, p.y, p.z + sign * acc));
    }
    GroupPath::new(u.grid(), points).expect("finite input yields a finite path")
}

/// `X^γ` at time 1, its quadratic variation and the Doléans-Dade exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticExponential {
    pub x: f64,
    pub quadratic_variation: f64,
    pub value: f64,
}

/// `X = Σ⟨c_γ(s_j), ΔW_j⟩`, `E = exp(X − ½‖γ‖²)`.
pub fn stochastic_exponential(gamma: &HorizontalPath, noise: &NoisePath) -> Result<StochasticExponential> {
    gamma.grid().ensure_same(&noise.grid())?;
    let x = pairing(gamma.control().samples(), noise.increments());
    let qv = gamma.energy();
    Ok(StochasticExponential { x, quadratic_variation: qv, value: (x - 0.5 * qv).exp() })
}

#[inline]
pub(crate) fn pairing(control: &[[f64; 2]], increments: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for (c, d) in control.iter().zip(increments) {
        s += c[0] * d[0] + c[1] * d[1];
    }
    s
}

/// A realization together with its Radon-Nikodym factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedNoise {
    pub noise: NoisePath,
    pub log_weight: f64,
}

impl ShiftedNoise {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn weighted(&self, value: f64) -> WeightedSample {
        WeightedSample { value, weight: self.weight() }
    }
}

/// Shifts the increments by `c_γΔt` (the shifted path is `B + γ`) and returns
/// the weight `exp(−Σ⟨c_γ, ΔB⟩ − ½‖γ‖²)` that turns averages over shifted
/// paths into expectations under the root measure.
pub fn cameron_martin_shift(gamma: &HorizontalPath, noise: &NoisePath) -> Result<ShiftedNoise> {
    gamma.grid().ensure_same(&noise.grid())?;
    let dt = noise.grid().dt();
    let c = gamma.control().samples();
    let increments = noise.increments().iter().zip(c).map(|(d, c)| [d[0] + c[0] * dt, d[1] + c[1] * dt]).collect();
    let log_weight = -pairing(c, noise.increments()) - 0.5 * gamma.energy();
    Ok(ShiftedNoise { noise: NoisePath::build(noise.grid(), noise.seed(), increments), log_weight })
}

/// `max_i N(u_i)²` over the nodes of a path.
pub fn sup_norm_sq(path: &GroupPath) -> f64 {
    path.points().iter().map(GroupElement::norm_sq).fold(0.0, f64::max)
}
