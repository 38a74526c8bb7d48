//! Discretized horizontal curves on [0, 1], their Cameron-Martin calculus, and
//! the Onsager-Machlup Lagrangian `L(p, v) = −½‖v‖²`.
//!
//! Controls are piecewise constant on grid cells: sample `c_i` is the
//! velocity on `[t_i, t_{i+1})`. Lifting integrates `z′ = ½ω(x, x′)` with the
//! left endpoint of each cell, which makes the discrete horizontality
//! condition `z_{i+1} − z_i = ½ω(x_i, x_{i+1} − x_i)` hold by construction.

use crate::error::{Error, Result};
use crate::group::{multiply, omega, GroupElement};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Uniform grid `t_i = i / n_steps` on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(Self { n_steps })
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |i| self.node(i))
    }

    pub fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self.n_steps != other.n_steps {
            return Err(Error::GridMismatch { left: self.n_steps, right: other.n_steps });
        }
        Ok(())
    }
}

/// Piecewise-constant horizontal velocity `c_γ` sampled on grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalControl {
    grid: TimeGrid,
    samples: Vec<[f64; 2]>,
}

impl HorizontalControl {
    pub fn new(grid: TimeGrid, samples: Vec<[f64; 2]>) -> Result<Self> {
        if samples.len() != grid.n_steps() {
            return Err(Error::InvalidArgument(format!(
                "control has {} samples, grid has {} cells",
                samples.len(),
                grid.n_steps()
            )));
        }
        if let Some(i) = samples.iter().position(|c| !(c[0].is_finite() && c[1].is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite control sample at cell {i}")));
        }
        Ok(Self { grid, samples })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self { grid, samples: vec![[0.0, 0.0]; grid.n_steps()] }
    }

    pub fn constant(grid: TimeGrid, velocity: [f64; 2]) -> Self {
        Self { grid, samples: vec![velocity; grid.n_steps()] }
    }

    /// Samples `f` at the left endpoint of every cell.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let samples = (0..grid.n_steps()).map(|i| f(grid.node(i))).collect();
        Self::new(grid, samples)
    }

    /// Velocity of the circle of radius `r` through the identity, traversed once:
    /// `c(t) = 2πr(−sin 2πt, cos 2πt)`.
    pub fn circle(grid: TimeGrid, radius: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI;
        Self::from_fn(grid, |t| [-w * radius * (w * t).sin(), w * radius * (w * t).cos()])
            .expect("circle control is finite")
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    #[inline]
    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    /// `Σ‖c_i‖²Δt`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum::<f64>() * self.grid.dt()
    }

    /// `Σ⟨c_i, c′_i⟩Δt`.
    pub fn inner_product(&self, other: &HorizontalControl) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.samples.iter().zip(&other.samples).map(|(p, q)| p[0] * q[0] + p[1] * q[1]).sum::<f64>()
            * self.grid.dt())
    }

    /// `Σ(|c_{i,1}| + |c_{i,2}|)Δt`.
    pub fn l1_norm(&self) -> f64 {
        self.samples.iter().map(|c| c[0].abs() + c[1].abs()).sum::<f64>() * self.grid.dt()
    }

    pub fn difference(&self, other: &HorizontalControl) -> Result<HorizontalControl> {
        self.grid.ensure_same(&other.grid)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(p, q)| [p[0] - q[0], p[1] - q[1]]).collect();
        Ok(Self { grid: self.grid, samples })
    }

    pub fn scaled(&self, factor: f64) -> HorizontalControl {
        Self { grid: self.grid, samples: self.samples.iter().map(|c| [factor * c[0], factor * c[1]]).collect() }
    }
}

/// Any group-valued path sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPath {
    grid: TimeGrid,
    points: Vec<GroupElement>,
}

impl GroupPath {
    pub fn new(grid: TimeGrid, points: Vec<GroupElement>) -> Result<Self> {
        if points.len() != grid.n_steps() + 1 {
            return Err(Error::InvalidArgument(format!(
                "path has {} points, grid needs {}",
                points.len(),
                grid.n_steps() + 1
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite path point at node {i}")));
        }
        Ok(Self { grid, points })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> GroupElement) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn constant(grid: TimeGrid) -> Self {
        Self { grid, points: vec![GroupElement::IDENTITY; grid.n_steps() + 1] }
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    #[inline]
    pub fn points(&self) -> &[GroupElement] {
        &self.points
    }

    pub fn endpoint(&self) -> GroupElement {
        *self.points.last().expect("grid has at least one step")
    }

    /// `max_i N(γ_i)`.
    pub fn diameter(&self) -> f64 {
        self.points.iter().map(GroupElement::norm).fold(0.0, f64::max)
    }

    pub fn starts_at_identity(&self) -> Result<()> {
        let p = self.points[0];
        if p != GroupElement::IDENTITY {
            return Err(Error::NotAtIdentity { x: p.x, y: p.y, z: p.z });
        }
        Ok(())
    }

    /// Horizontality tolerance `τ_h = 1e−8 · (1 + diameter)`.
    pub fn horizontality_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.diameter())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z"])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record(&[format_f64(self.grid.node(i)), format_f64(p.x), format_f64(p.y), format_f64(p.z)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_strict_csv(input, &["t", "x", "y", "z"])?;
        if rows.len() < 2 {
            return Err(Error::Csv("path needs at least two rows".into()));
        }
        let grid = TimeGrid::new(rows.len() - 1)?;
        check_times(&grid, rows.iter().map(|r| r[0]))?;
        let points = rows.iter().map(|r| GroupElement::new(r[1], r[2], r[3])).collect();
        Self::new(grid, points)
    }
}

/// A discretized horizontal curve starting at the identity, with its control.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalPath {
    path: GroupPath,
    control: HorizontalControl,
}

/// Output of [`mc_velocity`]: the horizontal control and the vertical residual
/// `(Δz_i − ½ω(x_i, Δx_i))/Δt` of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub control: HorizontalControl,
    pub residual: Vec<f64>,
}

impl Velocity {
    pub fn max_residual(&self) -> (usize, f64) {
        self.residual.iter().enumerate().map(|(i, r)| (i, r.abs())).fold((0, 0.0), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
    }

    pub fn is_horizontal(&self, tolerance: f64) -> bool {
        self.max_residual().1 <= tolerance
    }
}

/// Horizontal lift: `x_{i+1} = x_i + c_iΔt`, `z_{i+1} = z_i + ½ω(x_i, c_i)Δt`.
pub fn lift_control(control: &HorizontalControl) -> HorizontalPath {
    let grid = control.grid();
    let dt = grid.dt();
    let mut points = Vec::with_capacity(grid.n_steps() + 1);
    let mut p = GroupElement::IDENTITY;
    points.push(p);
    for c in control.samples() {
        let x = p.planar();
        p = GroupElement::new(x[0] + c[0] * dt, x[1] + c[1] * dt, p.z + 0.5 * omega(x, *c) * dt);
        points.push(p);
    }
    HorizontalPath { path: GroupPath { grid, points }, control: control.clone() }
}

/// Discrete left Maurer-Cartan velocity of a path starting at the identity.
pub fn mc_velocity(path: &GroupPath) -> Result<Velocity> {
    path.starts_at_identity()?;
    let grid = path.grid();
    let dt = grid.dt();
    let mut samples = Vec::with_capacity(grid.n_steps());
    let mut residual = Vec::with_capacity(grid.n_steps());
    for w in path.points().windows(2) {
        let (a, b) = (w[0], w[1]);
        let dx = [b.x - a.x, b.y - a.y];
        samples.push([dx[0] / dt, dx[1] / dt]);
        residual.push((b.z - a.z - 0.5 * omega(a.planar(), dx)) / dt);
    }
    Ok(Velocity { control: HorizontalControl::new(grid, samples)?, residual })
}

impl HorizontalPath {
    /// Accepts a group-valued path if it starts at `e` and every vertical
    /// residual is within `τ_h`.
    pub fn from_group_path(path: GroupPath) -> Result<Self> {
        let velocity = mc_velocity(&path)?;
        let tolerance = path.horizontality_tolerance();
        let (step, residual) = velocity.max_residual();
        if residual > tolerance {
            return Err(Error::NotHorizontal { step, residual, tolerance });
        }
        Ok(Self { path, control: velocity.control })
    }

    pub fn constant(grid: TimeGrid) -> Self {
        lift_control(&HorizontalControl::zero(grid))
    }

    pub fn line(grid: TimeGrid, velocity: [f64; 2]) -> Self {
        lift_control(&HorizontalControl::constant(grid, velocity))
    }

    pub fn circle(grid: TimeGrid, radius: f64) -> Self {
        lift_control(&HorizontalControl::circle(grid, radius))
    }

    #[inline]
    pub fn grid(&self) -> TimeGrid {
        self.control.grid()
    }

    #[inline]
    pub fn points(&self) -> &[GroupElement] {
        self.path.points()
    }

    #[inline]
    pub fn control(&self) -> &HorizontalControl {
        &self.control
    }

    pub fn as_group_path(&self) -> &GroupPath {
        &self.path
    }

    pub fn endpoint(&self) -> GroupElement {
        self.path.endpoint()
    }

    /// Squared Cameron-Martin norm `‖γ‖²_{H(ℍ)}`.
    pub fn energy(&self) -> f64 {
        self.control.energy()
    }

    pub fn inner_product(&self, other: &HorizontalPath) -> Result<f64> {
        self.control.inner_product(&other.control)
    }

    /// `C_γ = ∫‖c_γ‖₁`.
    pub fn l1_control_norm(&self) -> f64 {
        self.control.l1_norm()
    }

    pub fn om_lagrangian(&self) -> OmLagrangian {
        let dt = self.grid().dt();
        let pointwise: Vec<f64> = self.control.samples().iter().map(|c| -0.5 * (c[0] * c[0] + c[1] * c[1])).collect();
        let integral = pointwise.iter().sum::<f64>() * dt;
        OmLagrangian { pointwise, integral }
    }

    /// Largest discrete horizontality defect `|Δz_i − ½ω(x_i, x_{i+1} − x_i)|`.
    pub fn horizontality_defect(&self) -> f64 {
        self.points()
            .windows(2)
            .map(|w| {
                let dx = [w[1].x - w[0].x, w[1].y - w[0].y];
                (w[1].z - w[0].z - 0.5 * omega(w[0].planar(), dx)).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.path.write_csv(out)
    }

    pub fn write_control_csv<W: Write>(&self, out: W) -> Result<()> {
        write_control_csv(&self.control, out)
    }
}

/// Pointwise Onsager-Machlup Lagrangian along a path and its integral.
#[derive(Debug, Clone, PartialEq)]
pub struct OmLagrangian {
    pub pointwise: Vec<f64>,
    pub integral: f64,
}

/// Energy of an arbitrary group-valued path; rejects non-horizontal input.
pub fn energy(path: &GroupPath) -> Result<f64> {
    Ok(HorizontalPath::from_group_path(path.clone())?.energy())
}

pub fn inner_product(a: &GroupPath, b: &GroupPath) -> Result<f64> {
    let a = HorizontalPath::from_group_path(a.clone())?;
    let b = HorizontalPath::from_group_path(b.clone())?;
    a.inner_product(&b)
}

/// Horizontal lift of the planar curve `φ − ψ`; its control is `c_φ − c_ψ`.
pub fn correction_curve(phi: &HorizontalPath, psi: &HorizontalPath) -> Result<HorizontalPath> {
    Ok(lift_control(&phi.control.difference(&psi.control)?))
}

/// Exact group product of a path with a fixed element on the left, useful for
/// invariance checks.
pub fn left_translate(k: GroupElement, path: &GroupPath) -> GroupPath {
    GroupPath { grid: path.grid, points: path.points.iter().map(|p| multiply(k, *p)).collect() }
}

pub fn write_control_csv<W: Write>(control: &HorizontalControl, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "c1", "c2"])?;
    let grid = control.grid();
    for (i, c) in control.samples().iter().enumerate() {
        w.write_record(&[format_f64(grid.node(i)), format_f64(c[0]), format_f64(c[1])])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a control CSV with the exact header `t,c1,c2`, one row per cell.
pub fn read_control_csv<R: Read>(input: R) -> Result<HorizontalControl> {
    let rows = read_strict_csv(input, &["t", "c1", "c2"])?;
    let grid = TimeGrid::new(rows.len()).map_err(|_| Error::Csv("control file has no rows".into()))?;
    check_times(&grid, rows.iter().map(|r| r[0]))?;
    HorizontalControl::new(grid, rows.iter().map(|r| [r[1], r[2]]).collect())
}

/// Shortest representation that round-trips the value exactly.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn read_strict_csv<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Csv(format!("expected header {:?}, found {:?}", header, found)));
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Csv(format!("row {}: cannot parse {f:?}", line + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_times(grid: &TimeGrid, times: impl Iterator<Item = f64>) -> Result<()> {
    for (i, t) in times.enumerate() {
        if (t - grid.node(i)).abs() > 1e-9 {
            return Err(Error::Csv(format!(
                "row {}: time {t} is not on the uniform grid (expected {})",
                i + 1,
                grid.node(i)
            )));
        }
    }
    Ok(())
}
