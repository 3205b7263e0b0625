//! Piecewise-constant fields over a space-time grid.

use crate::error::{LabError, Result};
use crate::grid::{CellSet, SpaceTimeGrid};
use crate::hashing::digest_f64s;

/// Scalar samples on a grid. A field either carries one spatial slab
/// (time-independent) or one slab per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: SpaceTimeGrid,
    slabs: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            slabs: grid.steps(),
            values: vec![0.0; grid.steps() * grid.cell_count()],
        }
    }

    pub fn constant(grid: &SpaceTimeGrid, value: f64) -> Self {
        Self::static_from_fn(grid, |_| value)
    }

    /// Time-independent field from a function of the cell center.
    pub fn static_from_fn(grid: &SpaceTimeGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.cell_count())
            .map(|c| f(&grid.center(c)[..grid.n()]))
            .collect();
        Self {
            grid: grid.clone(),
            slabs: 1,
            values,
        }
    }

    /// Time-dependent field from a function of (center, t).
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.steps() * grid.cell_count());
        for step in 0..grid.steps() {
            let t = grid.time(step);
            for c in 0..grid.cell_count() {
                values.push(f(&grid.center(c)[..grid.n()], t));
            }
        }
        Self {
            grid: grid.clone(),
            slabs: grid.steps(),
            values,
        }
    }

    pub fn from_values(grid: &SpaceTimeGrid, slabs: usize, values: Vec<f64>) -> Result<Self> {
        if slabs != 1 && slabs != grid.steps() {
            return Err(LabError::Schema(format!(
                "field has {slabs} slabs; expected 1 or {}",
                grid.steps()
            )));
        }
        if values.len() != slabs * grid.cell_count() {
            return Err(LabError::Schema(format!(
                "field has {} values; expected {}",
                values.len(),
                slabs * grid.cell_count()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            slabs,
            values,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }
    pub fn slabs(&self) -> usize {
        self.slabs
    }
    pub fn is_static(&self) -> bool {
        self.slabs == 1
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, cell: usize, step: usize) -> f64 {
        let s = if self.slabs == 1 { 0 } else { step };
        self.values[s * self.grid.cell_count() + cell]
    }

    #[inline]
    pub fn set(&mut self, cell: usize, step: usize, v: f64) {
        let s = if self.slabs == 1 { 0 } else { step };
        let n = self.grid.cell_count();
        self.values[s * n + cell] = v;
    }

    pub fn slab(&self, step: usize) -> &[f64] {
        let s = if self.slabs == 1 { 0 } else { step };
        let n = self.grid.cell_count();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn slab_mut(&mut self, step: usize) -> &mut [f64] {
        let s = if self.slabs == 1 { 0 } else { step };
        let n = self.grid.cell_count();
        &mut self.values[s * n..(s + 1) * n]
    }

    /// Value at an arbitrary space-time point (nearest time level, containing cell).
    pub fn sample(&self, x: &[f64], t: f64) -> Option<f64> {
        let cell = self.grid.locate(x)?;
        Some(self.at(cell, self.grid.step_at(t)))
    }

    /// Expands a static field to one slab per time level.
    pub fn expanded(&self) -> Self {
        if self.slabs != 1 {
            return self.clone();
        }
        let mut values = Vec::with_capacity(self.grid.steps() * self.values.len());
        for _ in 0..self.grid.steps() {
            values.extend_from_slice(&self.values);
        }
        Self {
            grid: self.grid.clone(),
            slabs: self.grid.steps(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            slabs: self.slabs,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, set: &CellSet) -> f64 {
        set.iter().map(|(c, s)| self.at(c, s)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_on(&self, set: &CellSet) -> f64 {
        set.iter().map(|(c, s)| self.at(c, s)).fold(f64::INFINITY, f64::min)
    }

    /// Midpoint-rule spatial integral of one slab.
    pub fn integral(&self, step: usize) -> f64 {
        self.slab(step).iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn content_hash(&self) -> String {
        digest_f64s(&self.values)
    }

    pub fn add_scaled(&mut self, other: &Field, scale: f64) -> Result<()> {
        if other.grid != self.grid {
            return Err(LabError::Precondition("field grids differ".into()));
        }
        if self.slabs == 1 && other.slabs != 1 {
            *self = self.expanded();
        }
        let n = self.grid.cell_count();
        for step in 0..self.slabs {
            for c in 0..n {
                let v = other.at(c, step);
                self.values[step * n + c] += scale * v;
            }
        }
        Ok(())
    }
}

/// Time-indexed solution `u(cell, step)` with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub field: Field,
    pub problem_hash: String,
    pub config_hash: String,
}

impl SolutionField {
    pub fn new(field: Field, problem_hash: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            field: field.expanded(),
            problem_hash: problem_hash.into(),
            config_hash: config_hash.into(),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.field.grid()
    }

    pub fn at(&self, cell: usize, step: usize) -> f64 {
        self.field.at(cell, step)
    }

    /// Wraps an analytic function sampled at every space-time cell.
    pub fn from_fn(grid: &SpaceTimeGrid, tag: &str, f: impl Fn(&[f64], f64) -> f64) -> Self {
        Self::new(Field::from_fn(grid, f), tag, tag)
    }
}
