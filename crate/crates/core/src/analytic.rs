//! Closed-form functions used as initial data, boundary data and reference
//! solutions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::grid::SpaceTimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticFn {
    Constant {
        value: f64,
    },
    /// `a Π sin(π k_i x_i)`
    Sine {
        amplitude: f64,
        wavenumbers: Vec<f64>,
    },
    /// Separable heat solution `a e^{-α π² |k|² t} Π sin(π k_i x_i)`.
    HeatSine {
        amplitude: f64,
        wavenumbers: Vec<f64>,
        alpha: f64,
    },
    /// `offset + c·x`
    Linear {
        offset: f64,
        coeffs: Vec<f64>,
    },
    /// `a exp(-|x - c|² / (2 w²))`
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `a Π β((x_i - c_i)/r)` with `β(s) = exp(-1/(1-s²))` on `|s| < 1`.
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    /// Flat top: `a Π ω(|x_i − c_i|)` with `ω = 1` up to `inner`, a smooth
    /// ramp down to 0 at `outer`.
    Plateau {
        amplitude: f64,
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// Free-space heat kernel with diffusivity α, source `y` at time `-t0`.
    HeatKernel {
        alpha: f64,
        source: Vec<f64>,
        t0: f64,
    },
}

pub fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

pub fn bump_derivative(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let d = 1.0 - s * s;
        -2.0 * s / (d * d) * (-1.0 / d).exp()
    } else {
        0.0
    }
}

/// C∞ step from 0 (`s ≤ 0`) to 1 (`s ≥ 1`).
pub fn smooth_step(s: f64) -> f64 {
    let f = |z: f64| if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
    let (p, q) = (f(s), f(1.0 - s));
    if p + q == 0.0 {
        return if s >= 1.0 { 1.0 } else { 0.0 };
    }
    p / (p + q)
}

/// Free-space heat kernel `(4παt)^{-n/2} exp(-|x|²/(4αt))`.
pub fn heat_kernel(n: usize, alpha: f64, r2: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (4.0 * PI * alpha * t).powf(-(n as f64) / 2.0) * (-r2 / (4.0 * alpha * t)).exp()
}

impl AnalyticFn {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            AnalyticFn::Constant { value } => *value,
            AnalyticFn::Sine { amplitude, wavenumbers } => {
                amplitude * x.iter().zip(wavenumbers).map(|(xi, k)| (PI * k * xi).sin()).product::<f64>()
            }
            AnalyticFn::HeatSine {
                amplitude,
                wavenumbers,
                alpha,
            } => {
                let k2: f64 = wavenumbers.iter().map(|k| k * k).sum();
                amplitude
                    * (-alpha * PI * PI * k2 * t).exp()
                    * x.iter().zip(wavenumbers).map(|(xi, k)| (PI * k * xi).sin()).product::<f64>()
            }
            AnalyticFn::Linear { offset, coeffs } => offset + x.iter().zip(coeffs).map(|(a, b)| a * b).sum::<f64>(),
            AnalyticFn::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            AnalyticFn::Bump {
                amplitude,
                center,
                radius,
            } => amplitude * x.iter().zip(center).map(|(a, c)| bump((a - c) / radius)).product::<f64>(),
            AnalyticFn::Plateau {
                amplitude,
                center,
                inner,
                outer,
            } => {
                amplitude
                    * x.iter()
                        .zip(center)
                        .map(|(a, c)| smooth_step((outer - (a - c).abs()) / (outer - inner)))
                        .product::<f64>()
            }
            AnalyticFn::HeatKernel { alpha, source, t0 } => {
                let r2: f64 = x.iter().zip(source).map(|(a, b)| (a - b).powi(2)).sum();
                heat_kernel(x.len(), *alpha, r2, t + t0)
            }
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, AnalyticFn::HeatSine { .. } | AnalyticFn::HeatKernel { .. })
    }

    /// Static field of the function at `t = 0`.
    pub fn initial_field(&self, grid: &SpaceTimeGrid) -> Field {
        Field::static_from_fn(grid, |x| self.eval(x, 0.0))
    }

    /// Full space-time field (static if the function is time independent).
    pub fn field(&self, grid: &SpaceTimeGrid) -> Field {
        if self.is_time_dependent() {
            Field::from_fn(grid, |x, t| self.eval(x, t))
        } else {
            self.initial_field(grid)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivative_matches_difference() {
        for s in [-0.9, -0.3, 0.0, 0.4, 0.8] {
            let e = 1e-6;
            let fd = (bump(s + e) - bump(s - e)) / (2.0 * e);
            assert!((fd - bump_derivative(s)).abs() < 1e-7);
        }
    }

    #[test]
    fn plateau_is_flat_then_vanishes() {
        let p = AnalyticFn::Plateau {
            amplitude: 1.0,
            center: vec![0.0],
            inner: 0.5,
            outer: 1.0,
        };
        assert_eq!(p.eval(&[0.3], 0.0), 1.0);
        assert_eq!(p.eval(&[-1.2], 0.0), 0.0);
        let mid = p.eval(&[0.75], 0.0);
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_unit_mass_1d() {
        let h = 1e-3;
        let total: f64 = (-5000..5000)
            .map(|i| heat_kernel(1, 0.7, ((i as f64 + 0.5) * h).powi(2), 0.1) * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
