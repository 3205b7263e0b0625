//! Uniform space-time grids, the cylinders `Q(ρ)`, `Q*(ρ)`, `Q(3ρ)`, the
//! parabolic boundary and the parabolic pseudo-distance.
//!
//! Cells are indexed row-major with axis 0 slowest. Time levels are
//! `t_k = k * dt` for `k = 0..=nt`; a "space-time cell" is a pair
//! `(cell, step)` sampled at the cell center and at `t_k`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hashing::digest_json;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub n: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub t_final: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    n: usize,
    lower: [f64; MAX_DIM],
    upper: [f64; MAX_DIM],
    dims: [usize; MAX_DIM],
    h: f64,
    t_final: f64,
    dt: f64,
    nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(n: usize, bounds: &[(f64, f64)], h: f64, t_final: f64, dt: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(LabError::Grid(format!("dimension {n} outside 1..=3")));
        }
        if bounds.len() != n {
            return Err(LabError::Grid(format!(
                "expected {n} axis bounds, got {}",
                bounds.len()
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(LabError::Grid(format!("cell width must be positive, got {h}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(LabError::Grid(format!("final time must be positive, got {t_final}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::Grid(format!("time step must be positive, got {dt}")));
        }
        if dt > t_final {
            return Err(LabError::Grid(format!("time step {dt} exceeds final time {t_final}")));
        }
        let mut lower = [0.0; MAX_DIM];
        let mut upper = [0.0; MAX_DIM];
        let mut dims = [1usize; MAX_DIM];
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(LabError::Grid(format!("axis {axis}: degenerate box [{lo}, {hi}]")));
            }
            let cells = (hi - lo) / h;
            let rounded = cells.round();
            if (cells - rounded).abs() > 1e-9 * rounded.max(1.0) || rounded < 1.0 {
                return Err(LabError::Grid(format!(
                    "axis {axis}: extent {} is not a multiple of h = {h}",
                    hi - lo
                )));
            }
            lower[axis] = lo;
            upper[axis] = hi;
            dims[axis] = rounded as usize;
        }
        let nt = (t_final / dt).round() as usize;
        if nt == 0 || (nt as f64 * dt - t_final).abs() > 2.0 * f64::EPSILON * t_final {
            return Err(LabError::Grid(format!(
                "final time {t_final} is not an integer multiple of dt = {dt}"
            )));
        }
        let grid = Self {
            n,
            lower,
            upper,
            dims,
            h,
            t_final,
            dt,
            nt,
        };
        if grid.cell_count() < 8 {
            return Err(LabError::Grid(format!(
                "grid has only {} cells (at least 8 required)",
                grid.cell_count()
            )));
        }
        Ok(grid)
    }

    pub fn from_descriptor(d: &GridDescriptor) -> Result<Self> {
        if d.lower.len() != d.upper.len() {
            return Err(LabError::Grid("lower/upper length mismatch".into()));
        }
        let bounds: Vec<(f64, f64)> = d.lower.iter().copied().zip(d.upper.iter().copied()).collect();
        Self::new(d.n, &bounds, d.h, d.t_final, d.dt)
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor {
            n: self.n,
            lower: self.lower[..self.n].to_vec(),
            upper: self.upper[..self.n].to_vec(),
            h: self.h,
            t_final: self.t_final,
            dt: self.dt,
        }
    }

    /// Same geometry, different time axis.
    pub fn with_time(&self, t_final: f64, dt: f64) -> Result<Self> {
        let bounds: Vec<(f64, f64)> = (0..self.n).map(|a| (self.lower[a], self.upper[a])).collect();
        Self::new(self.n, &bounds, self.h, t_final, dt)
    }

    pub fn hash(&self) -> String {
        digest_json(&self.descriptor())
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    /// Number of time steps; time levels run over `0..=nt`.
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn steps(&self) -> usize {
        self.nt + 1
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.n]
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.n]
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.n]
    }
    pub fn cell_count(&self) -> usize {
        self.dims[..self.n].iter().product()
    }
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }
    pub fn omega_volume(&self) -> f64 {
        (0..self.n).map(|a| self.upper[a] - self.lower[a]).product()
    }
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Nearest time level to `t`, clamped to the grid.
    pub fn step_at(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.nt)
    }

    /// Exact step index for `t` if `t` is a time level.
    pub fn exact_step(&self, t: f64) -> Option<usize> {
        let s = t / self.dt;
        let r = s.round();
        ((s - r).abs() <= 1e-9 * r.max(1.0) && r >= 0.0 && r as usize <= self.nt).then_some(r as usize)
    }

    pub fn multi_index(&self, cell: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        let mut rest = cell;
        for axis in (0..self.n).rev() {
            idx[axis] = rest % self.dims[axis];
            rest /= self.dims[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for axis in 0..self.n {
            flat = flat * self.dims[axis] + idx[axis];
        }
        flat
    }

    /// Stride of one cell step along `axis` in the flat index.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..self.n].iter().product()
    }

    pub fn center(&self, cell: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(cell);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.n {
            x[axis] = self.lower[axis] + (idx[axis] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Neighbor of `cell` along `axis` in direction `dir` (±1), if inside.
    pub fn neighbor(&self, cell: usize, axis: usize, dir: isize) -> Option<usize> {
        let idx = self.multi_index(cell);
        let i = idx[axis] as isize + dir;
        if i < 0 || i >= self.dims[axis] as isize {
            None
        } else {
            let s = self.stride(axis) as isize;
            Some((cell as isize + dir * s) as usize)
        }
    }

    /// Cell containing `x` (points on the upper face belong to the last cell).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = [0usize; MAX_DIM];
        for axis in 0..self.n {
            let s = (x[axis] - self.lower[axis]) / self.h;
            if !(s >= -1e-12 && s <= self.dims[axis] as f64 + 1e-12) {
                return None;
            }
            idx[axis] = (s.floor().max(0.0) as usize).min(self.dims[axis] - 1);
        }
        Some(self.flat_index(&idx))
    }

    /// True for cells with at least one face on the box boundary.
    pub fn is_boundary_cell(&self, cell: usize) -> bool {
        let idx = self.multi_index(cell);
        (0..self.n).any(|a| idx[a] == 0 || idx[a] + 1 == self.dims[a])
    }

    /// Distance (in grid units of axes) from a point to the box faces, minimum over axes.
    pub fn distance_to_faces(&self, x: &[f64]) -> f64 {
        (0..self.n)
            .map(|a| (x[a] - self.lower[a]).min(self.upper[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CylinderKind {
    /// `R(ρ) × (t′−ρ², t′]`
    Standard,
    /// `R(ρ) × (t′−8ρ², t′−7ρ²]`
    HarnackShifted,
    /// `Q(3ρ)`
    Tripled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: Vec<f64>,
    pub t: f64,
    pub rho: f64,
    pub kind: CylinderKind,
}

impl Cylinder {
    pub fn new(center: &[f64], t: f64, rho: f64, kind: CylinderKind) -> Self {
        Self {
            center: center.to_vec(),
            t,
            rho,
            kind,
        }
    }

    /// Edge length of the spatial cube.
    pub fn edge(&self) -> f64 {
        match self.kind {
            CylinderKind::Tripled => 3.0 * self.rho,
            _ => self.rho,
        }
    }

    /// Half-open time band `(lo, hi]`.
    pub fn time_band(&self) -> (f64, f64) {
        let r2 = self.rho * self.rho;
        match self.kind {
            CylinderKind::Standard => (self.t - r2, self.t),
            CylinderKind::HarnackShifted => (self.t - 8.0 * r2, self.t - 7.0 * r2),
            CylinderKind::Tripled => (self.t - 9.0 * r2, self.t),
        }
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        let half = 0.5 * self.edge();
        let (lo, hi) = self.time_band();
        t > lo && t <= hi && self.center.iter().zip(x).all(|(c, xi)| (xi - c).abs() < half)
    }

    /// Checks the cylinder lies inside `Q`; the error names the first violated face.
    pub fn check_containment(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.center.len() != grid.n() {
            return Err(LabError::Precondition(format!(
                "cylinder center has {} coordinates, grid has dimension {}",
                self.center.len(),
                grid.n()
            )));
        }
        if !(self.rho > 0.0) {
            return Err(LabError::Precondition(format!("rho must be positive, got {}", self.rho)));
        }
        let half = 0.5 * self.edge();
        let slack = 1e-12 * grid.h();
        for axis in 0..grid.n() {
            let lo = self.center[axis] - half;
            let hi = self.center[axis] + half;
            if lo < grid.lower()[axis] - slack {
                return Err(LabError::Containment {
                    face: format!("x{axis} lower"),
                    needed: lo,
                    available: grid.lower()[axis],
                });
            }
            if hi > grid.upper()[axis] + slack {
                return Err(LabError::Containment {
                    face: format!("x{axis} upper"),
                    needed: hi,
                    available: grid.upper()[axis],
                });
            }
        }
        let (tlo, thi) = self.time_band();
        let tslack = 1e-12 * grid.t_final();
        if tlo < -tslack {
            return Err(LabError::Containment {
                face: "time lower".into(),
                needed: tlo,
                available: 0.0,
            });
        }
        if thi > grid.t_final() + tslack {
            return Err(LabError::Containment {
                face: "time upper".into(),
                needed: thi,
                available: grid.t_final(),
            });
        }
        Ok(())
    }

    pub fn materialize(&self, grid: &SpaceTimeGrid) -> Result<CellSet> {
        self.check_containment(grid)?;
        let mut set = CellSet::empty(grid);
        let (lo, hi) = self.time_band();
        let tol = 1e-12 * grid.dt();
        let spatial: Vec<usize> = (0..grid.cell_count())
            .filter(|&c| {
                let x = grid.center(c);
                let half = 0.5 * self.edge();
                (0..grid.n()).all(|a| (x[a] - self.center[a]).abs() < half)
            })
            .collect();
        for step in 0..grid.steps() {
            let t = grid.time(step);
            if t > lo + tol && t <= hi + tol {
                for &c in &spatial {
                    set.insert(c, step);
                }
            }
        }
        Ok(set)
    }
}

/// Membership mask over `(cell, step)` pairs of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    cells: usize,
    steps: usize,
    mask: Vec<bool>,
}

impl CellSet {
    pub fn empty(grid: &SpaceTimeGrid) -> Self {
        Self {
            cells: grid.cell_count(),
            steps: grid.steps(),
            mask: vec![false; grid.cell_count() * grid.steps()],
        }
    }

    pub fn matches(&self, grid: &SpaceTimeGrid) -> bool {
        self.cells == grid.cell_count() && self.steps == grid.steps()
    }

    pub fn insert(&mut self, cell: usize, step: usize) {
        self.mask[step * self.cells + cell] = true;
    }

    pub fn contains(&self, cell: usize, step: usize) -> bool {
        self.mask[step * self.cells + cell]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Member pairs in (step, cell) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i % self.cells, i / self.cells))
    }

    pub fn steps_present(&self) -> Vec<usize> {
        (0..self.steps)
            .filter(|&s| self.mask[s * self.cells..(s + 1) * self.cells].iter().any(|&m| m))
            .collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            cells: self.cells,
            steps: self.steps,
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }

    pub fn intersection_len(&self, other: &CellSet) -> usize {
        self.mask.iter().zip(&other.mask).filter(|(a, b)| **a && **b).count()
    }
}

/// Boundary-adjacent cells at every time level plus the whole initial layer.
pub fn parabolic_boundary(grid: &SpaceTimeGrid) -> CellSet {
    let mut set = CellSet::empty(grid);
    for cell in 0..grid.cell_count() {
        set.insert(cell, 0);
        if grid.is_boundary_cell(cell) {
            for step in 1..grid.steps() {
                set.insert(cell, step);
            }
        }
    }
    set
}

/// The parabolic pseudo-distance `|Y − X|`, with `|Z|² = max(z_i², −s/4)`
/// for `s ≤ 0` and `+∞` when `Y` lies in the future of `X`.
pub fn pseudo_distance(x: &[f64], t: f64, y: &[f64], s: f64) -> f64 {
    let dt = s - t;
    if dt > 0.0 {
        return f64::INFINITY;
    }
    let spatial = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - a) * (b - a))
        .fold(0.0, f64::max);
    spatial.max(-dt / 4.0).sqrt()
}
