//! Named coefficient families. All are piecewise constant with values in
//! `{1, contrast}` (or log-uniform in `[1, contrast]` for the random family),
//! aligned to `period` measured from the lower box corner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::Field;
use crate::grid::SpaceTimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientFamily {
    Constant { value: f64 },
    Checkerboard { contrast: f64, period: f64 },
    RandomPiecewise { seed: u64, contrast: f64, period: f64 },
    Striped { contrast: f64, period: f64, #[serde(default)] axis: usize },
}

impl CoefficientFamily {
    pub fn build(&self, grid: &SpaceTimeGrid) -> Result<Field> {
        match *self {
            CoefficientFamily::Constant { value } => {
                if !value.is_finite() {
                    return Err(LabError::Config {
                        path: "value".into(),
                        reason: "must be finite".into(),
                    });
                }
                Ok(Field::constant(grid, value))
            }
            CoefficientFamily::Checkerboard { contrast, period } => {
                check(contrast, period)?;
                Ok(checkerboard(grid, contrast, period))
            }
            CoefficientFamily::RandomPiecewise { seed, contrast, period } => {
                check(contrast, period)?;
                Ok(random_piecewise(grid, seed, contrast, period))
            }
            CoefficientFamily::Striped { contrast, period, axis } => {
                check(contrast, period)?;
                if axis >= grid.n() {
                    return Err(LabError::Config {
                        path: "axis".into(),
                        reason: format!("axis {axis} outside dimension {}", grid.n()),
                    });
                }
                Ok(striped(grid, contrast, period, axis))
            }
        }
    }

    /// Same family with a different contrast (used for contrast sweeps).
    pub fn with_contrast(&self, c: f64) -> Self {
        match self.clone() {
            CoefficientFamily::Constant { .. } => CoefficientFamily::Constant { value: c },
            CoefficientFamily::Checkerboard { period, .. } => CoefficientFamily::Checkerboard { contrast: c, period },
            CoefficientFamily::RandomPiecewise { seed, period, .. } => {
                CoefficientFamily::RandomPiecewise { seed, contrast: c, period }
            }
            CoefficientFamily::Striped { period, axis, .. } => CoefficientFamily::Striped { contrast: c, period, axis },
        }
    }
}

fn check(contrast: f64, period: f64) -> Result<()> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(LabError::Config {
            path: "contrast".into(),
            reason: format!("contrast must be >= 1, got {contrast}"),
        });
    }
    if !(period > 0.0) {
        return Err(LabError::Config {
            path: "period".into(),
            reason: format!("period must be positive, got {period}"),
        });
    }
    Ok(())
}

fn block(grid: &SpaceTimeGrid, x: &[f64], axis: usize, period: f64) -> i64 {
    ((x[axis] - grid.lower()[axis]) / period).floor() as i64
}

pub fn checkerboard(grid: &SpaceTimeGrid, contrast: f64, period: f64) -> Field {
    Field::static_from_fn(grid, |x| {
        let parity: i64 = (0..grid.n()).map(|a| block(grid, x, a, period)).sum();
        if parity.rem_euclid(2) == 0 {
            1.0
        } else {
            contrast
        }
    })
}

pub fn striped(grid: &SpaceTimeGrid, contrast: f64, period: f64, axis: usize) -> Field {
    Field::static_from_fn(grid, |x| {
        if block(grid, x, axis, period).rem_euclid(2) == 0 {
            1.0
        } else {
            contrast
        }
    })
}

/// Independent log-uniform value in `[1, contrast]` per period block.
pub fn random_piecewise(grid: &SpaceTimeGrid, seed: u64, contrast: f64, period: f64) -> Field {
    let blocks: Vec<usize> = (0..grid.n())
        .map(|a| (((grid.upper()[a] - grid.lower()[a]) / period).ceil() as usize).max(1))
        .collect();
    let total: usize = blocks.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_c = contrast.ln();
    let values: Vec<f64> = (0..total).map(|_| (rng.gen::<f64>() * log_c).exp()).collect();
    Field::static_from_fn(grid, |x| {
        let mut flat = 0usize;
        for a in 0..grid.n() {
            let b = (block(grid, x, a, period).max(0) as usize).min(blocks[a] - 1);
            flat = flat * blocks[a] + b;
        }
        values[flat]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_alternates() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.125, 1.0, 0.5).unwrap();
        let f = checkerboard(&g, 10.0, 0.25);
        assert_eq!(f.sample(&[0.1, 0.1], 0.0), Some(1.0));
        assert_eq!(f.sample(&[0.3, 0.1], 0.0), Some(10.0));
        assert_eq!(f.sample(&[0.3, 0.3], 0.0), Some(1.0));
    }

    #[test]
    fn random_piecewise_is_seeded_and_bounded() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 32.0, 1.0, 0.5).unwrap();
        let a = random_piecewise(&g, 4, 100.0, 0.125);
        let b = random_piecewise(&g, 4, 100.0, 0.125);
        assert_eq!(a, b);
        assert!(a.min() >= 1.0 && a.max() <= 100.0);
        assert_ne!(a, random_piecewise(&g, 5, 100.0, 0.125));
    }
}
