//! Discrete fundamental solutions of the homogeneous linear equation, their
//! two-sided Gaussian envelopes, the semigroup identity, and the elliptic
//! Green function obtained by integrating in time.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::analytic;
use crate::error::{LabError, Result};
use crate::field::Field;
use crate::grid::SpaceTimeGrid;
use crate::solver::{Boundary, ProblemSpec, SolverConfig, Stepper};
use crate::structure::{ellipticity_check, LinearCoefficients};

/// `(4παt)^{-n/2} exp(-|x|²/(4αt))`.
pub fn heat_kernel(alpha: f64, n: usize, x: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(LabError::Precondition(format!("heat kernel needs t > 0, got {t}")));
    }
    if !(alpha > 0.0) {
        return Err(LabError::Precondition(format!("heat kernel needs alpha > 0, got {alpha}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok(analytic::heat_kernel(n, alpha, r2, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Boundary-adjacent mass fraction that raises the effective-box flag.
    pub tail_tol: f64,
    /// Elapsed time up to which the flag is an error instead of a warning.
    pub horizon: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            tail_tol: 1e-8,
            horizon: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Sampled `Γ(·, t; ξ, τ)` for one source point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub source: Vec<f64>,
    pub source_cell: usize,
    pub tau_step: usize,
    /// Zero before `τ`, the discrete delta at `τ`.
    pub field: Field,
    /// Per step: boundary-adjacent mass exceeded the tail tolerance.
    pub effective_box: Vec<bool>,
    pub boundary_mass: Vec<f64>,
}

impl KernelEstimate {
    pub fn grid(&self) -> &SpaceTimeGrid {
        self.field.grid()
    }

    pub fn tau(&self) -> f64 {
        self.grid().time(self.tau_step)
    }

    pub fn elapsed(&self, step: usize) -> f64 {
        self.grid().time(step) - self.tau()
    }

    pub fn at(&self, cell: usize, step: usize) -> f64 {
        self.field.at(cell, step)
    }

    pub fn mass(&self, step: usize) -> f64 {
        self.field.integral(step)
    }

    /// `|x − ξ|²` for a cell.
    pub fn r2(&self, cell: usize) -> f64 {
        let c = self.grid().center(cell);
        self.source.iter().enumerate().map(|(a, s)| (c[a] - s).powi(2)).sum()
    }

    /// Steps after `τ` whose tail monitor stayed clean.
    pub fn clean_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (self.tau_step + 1..self.grid().steps()).filter(|&s| !self.effective_box[s])
    }
}

/// Index of the cell whose center is `x`, or an error if `x` is not a center.
pub fn source_cell(grid: &SpaceTimeGrid, x: &[f64]) -> Result<usize> {
    let cell = grid
        .locate(x)
        .ok_or_else(|| LabError::Precondition(format!("source {x:?} lies outside the box")))?;
    let c = grid.center(cell);
    if (0..grid.n()).any(|a| (c[a] - x[a]).abs() > 1e-9 * grid.h()) {
        return Err(LabError::Precondition(format!(
            "source {x:?} is not a cell center (nearest {:?})",
            &c[..grid.n()]
        )));
    }
    Ok(cell)
}

/// Center of the cell containing `x`.
pub fn snap_to_center(grid: &SpaceTimeGrid, x: &[f64]) -> Option<Vec<f64>> {
    grid.locate(x).map(|c| grid.center(c)[..grid.n()].to_vec())
}

/// Runs many kernels on one operator. Construction checks the
/// preconditions once.
pub struct KernelPropagator {
    spec: ProblemSpec,
    opts: KernelOptions,
    alpha_max: f64,
}

impl KernelPropagator {
    pub fn new(lc: &LinearCoefficients, opts: &KernelOptions) -> Result<Self> {
        if !lc.is_homogeneous() {
            return Err(LabError::Precondition(
                "fundamental solutions are computed for the homogeneous equation (F_j = G = 0)".into(),
            ));
        }
        ellipticity_check(lc)?;
        let grid = lc.grid().clone();
        let spec = ProblemSpec::linear(lc.clone(), Field::constant(&grid, 0.0), Boundary::NoFlux)?;
        let mut alpha_max: f64 = 0.0;
        for step in 0..grid.steps().min(if lc.is_time_independent() { 1 } else { usize::MAX }) {
            for c in 0..grid.cell_count() {
                alpha_max = alpha_max.max(lc.eigen_range(c, step).1);
            }
        }
        Ok(Self {
            spec,
            opts: opts.clone(),
            alpha_max,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.spec.grid
    }

    /// The homogeneous no-flux problem the kernels solve.
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn options(&self) -> &KernelOptions {
        &self.opts
    }

    pub fn kernel(&self, source: &[f64], tau: f64) -> Result<KernelEstimate> {
        let grid = self.grid();
        let cell = source_cell(grid, source)?;
        let tau_step = grid
            .exact_step(tau)
            .ok_or_else(|| LabError::Precondition(format!("source time {tau} is not a time level")))?;
        self.kernel_at(cell, tau_step)
    }

    pub fn kernel_at(&self, cell: usize, tau_step: usize) -> Result<KernelEstimate> {
        let grid = self.grid().clone();
        if tau_step >= grid.nt() {
            return Err(LabError::Precondition("source time must precede T".into()));
        }
        let cells = grid.cell_count();
        let vol = grid.cell_volume();
        let mut stepper = Stepper::new(&self.spec, &self.opts.solver)?;
        let mut values = vec![0.0; grid.steps() * cells];
        values[tau_step * cells + cell] = 1.0 / vol;
        let boundary: Vec<usize> = (0..cells).filter(|&c| grid.is_boundary_cell(c)).collect();
        let mut effective_box = vec![false; grid.steps()];
        let mut boundary_mass = vec![0.0; grid.steps()];
        for k in tau_step..grid.nt() {
            let next = stepper.advance(k, &values[k * cells..(k + 1) * cells])?;
            let bm: f64 = boundary.iter().map(|&c| next[c].abs()).sum::<f64>() * vol;
            boundary_mass[k + 1] = bm;
            if bm > self.opts.tail_tol {
                effective_box[k + 1] = true;
                let elapsed = grid.time(k + 1) - grid.time(tau_step);
                if let Some(hz) = self.opts.horizon {
                    if elapsed <= hz + 1e-12 {
                        return Err(LabError::EnlargeBox {
                            time: elapsed,
                            horizon: hz,
                            suggested_half_width: 6.0 * (2.0 * self.alpha_max * hz).sqrt() + grid.h(),
                        });
                    }
                }
            }
            values[(k + 1) * cells..(k + 2) * cells].copy_from_slice(&next);
        }
        let source = grid.center(cell)[..grid.n()].to_vec();
        Ok(KernelEstimate {
            source,
            source_cell: cell,
            tau_step,
            field: Field::from_values(&grid, grid.steps(), values)?,
            effective_box,
            boundary_mass,
        })
    }

    /// Evolves arbitrary data given at `t = 0` with the same discretization
    /// as the kernels, i.e. the superposition `Σ_ξ Γ(·,·;ξ,0) v(ξ) |cell|`.
    pub fn propagate(&self, initial: &[f64]) -> Result<Field> {
        let grid = self.grid().clone();
        let cells = grid.cell_count();
        if initial.len() != cells {
            return Err(LabError::Precondition("initial data length mismatch".into()));
        }
        let mut stepper = Stepper::new(&self.spec, &self.opts.solver)?;
        let mut values = vec![0.0; grid.steps() * cells];
        values[..cells].copy_from_slice(initial);
        for k in 0..grid.nt() {
            let next = stepper.advance(k, &values[k * cells..(k + 1) * cells])?;
            values[(k + 1) * cells..(k + 2) * cells].copy_from_slice(&next);
        }
        Field::from_values(&grid, grid.steps(), values)
    }

    /// Kernels for many sources in parallel (order preserved).
    pub fn kernels(&self, cells: &[usize], tau_step: usize) -> Result<Vec<KernelEstimate>> {
        cells.par_iter().map(|&c| self.kernel_at(c, tau_step)).collect()
    }
}

/// Solves the homogeneous equation forward from a discrete delta at `(ξ, τ)`
/// in a no-flux box.
pub fn estimate_kernel(lc: &LinearCoefficients, source: &[f64], tau: f64, opts: &KernelOptions) -> Result<KernelEstimate> {
    KernelPropagator::new(lc, opts)?.kernel(source, tau)
}

/// Where the Gaussian envelopes are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitRegion {
    /// Steps after `τ` excluded from the fit.
    pub min_steps: usize,
    /// Spatial radius in units of `√(α_ref (t − τ))`.
    pub radius_sds: f64,
    /// Reference diffusivity; estimated from the kernel's second moment when absent.
    pub alpha_ref: Option<f64>,
    pub min_time: Option<f64>,
    pub max_time: Option<f64>,
    /// Number of `|x−ξ|²/(t−τ)` bins for the envelopes.
    pub bins: usize,
}

impl Default for FitRegion {
    fn default() -> Self {
        Self {
            min_steps: 10,
            radius_sds: 4.0,
            alpha_ref: None,
            min_time: None,
            max_time: None,
            bins: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub c_fit: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// `max Γ/g₂` over the region.
    pub c_upper: f64,
    /// `max g₁/Γ` over the region.
    pub c_lower: f64,
    pub alpha_ref: f64,
    pub samples: usize,
    pub first_step: usize,
    pub last_step: usize,
    pub max_violation: f64,
}

/// `α ≈ ∫|x−ξ|²Γ / (2 n (t−τ))` averaged over the clean steps.
pub fn second_moment_alpha(k: &KernelEstimate) -> f64 {
    let grid = k.grid();
    let n = grid.n() as f64;
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    let mut count = 0.0;
    for s in k.clean_steps() {
        let m2: f64 = (0..grid.cell_count()).map(|c| k.r2(c) * k.at(c, s)).sum::<f64>() * vol;
        let mass = k.mass(s);
        if mass > 0.0 {
            acc += m2 / mass / (2.0 * n * k.elapsed(s));
            count += 1.0;
        }
    }
    if count > 0.0 {
        acc / count
    } else {
        f64::NAN
    }
}

struct Sample {
    cell: usize,
    step: usize,
    s: f64,
    r2: f64,
    gamma: f64,
}

fn region_samples(k: &KernelEstimate, region: &FitRegion, alpha_ref: f64) -> Vec<Sample> {
    let grid = k.grid();
    let mut out = Vec::new();
    for step in k.clean_steps() {
        if step < k.tau_step + region.min_steps {
            continue;
        }
        let s = k.elapsed(step);
        if region.min_time.is_some_and(|m| s < m - 1e-12) || region.max_time.is_some_and(|m| s > m + 1e-12) {
            continue;
        }
        let r_max2 = region.radius_sds.powi(2) * alpha_ref * s;
        for cell in 0..grid.cell_count() {
            let r2 = k.r2(cell);
            if r2 <= r_max2 {
                out.push(Sample {
                    cell,
                    step,
                    s,
                    r2,
                    gamma: k.at(cell, step),
                });
            }
        }
    }
    out
}

fn line_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let m = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Fits `𝒞^{-1} g₁ ≤ Γ ≤ 𝒞 g₂` on the region. The rates come from least
/// squares on the per-bin upper and lower envelopes of
/// `ln Γ + (n/2) ln(t−τ)` against `|x−ξ|²/(t−τ)`; `𝒞` is then the smallest
/// constant satisfying both inequalities at every sample.
pub fn fit_gaussian_bounds(k: &KernelEstimate, region: &FitRegion) -> Result<GaussianFit> {
    let grid = k.grid();
    let n = grid.n();
    let alpha_ref = region.alpha_ref.unwrap_or_else(|| second_moment_alpha(k));
    if !(alpha_ref > 0.0) {
        return Err(LabError::Precondition("no clean steps to fit".into()));
    }
    let samples = region_samples(k, region, alpha_ref);
    if samples.is_empty() {
        return Err(LabError::Precondition("fit region is empty".into()));
    }
    let bad: Vec<&Sample> = samples.iter().filter(|s| !(s.gamma > 0.0)).collect();
    if let Some(first) = bad.first() {
        return Err(LabError::NonPositiveKernel {
            count: bad.len(),
            first_cell: first.cell,
            first_step: first.step,
        });
    }
    let zs: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.r2 / s.s, s.gamma.ln() + 0.5 * n as f64 * s.s.ln()))
        .collect();
    let z_max = zs.iter().map(|p| p.0).fold(0.0, f64::max);
    let bins = region.bins.max(2);
    let mut upper = vec![(0.0, f64::NEG_INFINITY); bins];
    let mut lower = vec![(0.0, f64::INFINITY); bins];
    for &(z, y) in &zs {
        let b = if z_max > 0.0 { ((z / z_max) * bins as f64).floor() as usize } else { 0 }.min(bins - 1);
        if y > upper[b].1 {
            upper[b] = (z, y);
        }
        if y < lower[b].1 {
            lower[b] = (z, y);
        }
    }
    let upper: Vec<(f64, f64)> = upper.into_iter().filter(|p| p.1.is_finite()).collect();
    let lower: Vec<(f64, f64)> = lower.into_iter().filter(|p| p.1.is_finite()).collect();
    let rate = |pts: &[(f64, f64)]| -> f64 {
        match line_fit(pts) {
            Some((_, slope)) if slope < 0.0 => -1.0 / (4.0 * slope),
            _ => alpha_ref,
        }
    };
    let mut alpha2 = rate(&upper);
    let mut alpha1 = rate(&lower);
    if alpha1 > alpha2 {
        let mid = 0.5 * (alpha1 + alpha2);
        alpha1 = mid;
        alpha2 = mid;
    }
    let mut c_upper: f64 = 0.0;
    let mut c_lower: f64 = 0.0;
    for s in &samples {
        let g2 = analytic::heat_kernel(n, alpha2, s.r2, s.s);
        let g1 = analytic::heat_kernel(n, alpha1, s.r2, s.s);
        c_upper = c_upper.max(s.gamma / g2);
        c_lower = c_lower.max(g1 / s.gamma);
    }
    let c_fit = c_upper.max(c_lower).max(1.0);
    let first_step = samples.iter().map(|s| s.step).min().unwrap();
    let last_step = samples.iter().map(|s| s.step).max().unwrap();
    let mut fit = GaussianFit {
        c_fit,
        alpha1,
        alpha2,
        c_upper,
        c_lower,
        alpha_ref,
        samples: samples.len(),
        first_step,
        last_step,
        max_violation: 0.0,
    };
    fit.max_violation = gaussian_violation(k, region, &fit);
    Ok(fit)
}

/// Independent re-check of a fit: largest relative slack violation of the
/// two displayed inequalities on the region (0 when both hold).
pub fn gaussian_violation(k: &KernelEstimate, region: &FitRegion, fit: &GaussianFit) -> f64 {
    let n = k.grid().n();
    let mut worst: f64 = 0.0;
    for s in region_samples(k, region, fit.alpha_ref) {
        let hi = fit.c_fit * analytic::heat_kernel(n, fit.alpha2, s.r2, s.s);
        let lo = analytic::heat_kernel(n, fit.alpha1, s.r2, s.s) / fit.c_fit;
        worst = worst.max((s.gamma - hi) / hi).max((lo - s.gamma) / lo);
    }
    // tolerate roundoff in the constant itself
    if worst < 1e-12 {
        0.0
    } else {
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapmanKolmogorovReport {
    pub max_relative_residual: f64,
    pub probes: usize,
    pub worst_cell: usize,
}

/// Compares `Γ(x,t;ξ,τ)` with `∫Γ(x,t;ζ,η)Γ(ζ,η;ξ,τ)dζ`, the right side
/// assembled from one kernel run per grid point ζ. Probes are the cells
/// where the left side is at least `1e-3` of its maximum.
pub fn check_chapman_kolmogorov(
    lc: &LinearCoefficients,
    source: &[f64],
    tau: f64,
    eta: f64,
    t: f64,
    opts: &KernelOptions,
) -> Result<ChapmanKolmogorovReport> {
    if !(tau < eta && eta < t) {
        return Err(LabError::Precondition(format!(
            "times must satisfy tau < eta < t, got {tau}, {eta}, {t}"
        )));
    }
    let prop = KernelPropagator::new(lc, opts)?;
    let grid = prop.grid().clone();
    let step = |x: f64, what: &str| {
        grid.exact_step(x)
            .ok_or_else(|| LabError::Precondition(format!("{what} = {x} is not a time level")))
    };
    let (eta_step, t_step) = (step(eta, "eta")?, step(t, "t")?);
    let outer = prop.kernel(source, tau)?;
    let cells = grid.cell_count();
    let vol = grid.cell_volume();
    let lhs = outer.field.slab(t_step).to_vec();
    let weights = outer.field.slab(eta_step).to_vec();
    let zetas: Vec<usize> = (0..cells).filter(|&z| weights[z] != 0.0).collect();
    let columns: Vec<(usize, Vec<f64>)> = zetas
        .par_iter()
        .map(|&z| prop.kernel_at(z, eta_step).map(|k| (z, k.field.slab(t_step).to_vec())))
        .collect::<Result<_>>()?;
    let mut rhs = vec![0.0; cells];
    for (z, col) in &columns {
        let w = weights[*z] * vol;
        for (r, c) in rhs.iter_mut().zip(col) {
            *r += c * w;
        }
    }
    let peak = lhs.iter().copied().fold(0.0, f64::max);
    let mut worst = 0.0;
    let mut worst_cell = 0;
    let mut probes = 0;
    for c in 0..cells {
        if lhs[c] >= 1e-3 * peak {
            probes += 1;
            let r = (lhs[c] - rhs[c]).abs() / lhs[c];
            if r > worst {
                worst = r;
                worst_cell = c;
            }
        }
    }
    Ok(ChapmanKolmogorovReport {
        max_relative_residual: worst,
        probes,
        worst_cell,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenOptions {
    pub kernel: KernelOptions,
    /// Largest admissible tail-to-G ratio on the annulus.
    pub max_tail_fraction: f64,
    /// Fit used for the analytic tail bound.
    pub fit: FitRegion,
    /// `[r_min, r_max]`; defaults to `[4h, box_half/2]`.
    pub annulus: Option<(f64, f64)>,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self {
            kernel: KernelOptions::default(),
            max_tail_fraction: 0.1,
            fit: FitRegion::default(),
            annulus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenAnnulusSample {
    pub cell: usize,
    pub r: f64,
    pub green: f64,
    /// `G · 4π r`, i.e. G relative to the Newtonian potential.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenEstimate {
    pub source: Vec<f64>,
    /// `Σ_k Γ(x, t_k; ξ, 0) dt` plus the tail bound.
    pub values: Field,
    pub tail: Vec<f64>,
    pub t_max: f64,
    /// Two-sided constant for `G` against `|x−ξ|^{2−n}/(4π)`.
    pub k_fit: f64,
    /// Same constant against the bare power `|x−ξ|^{2−n}`.
    pub k_raw: f64,
    pub annulus: (f64, f64),
    pub samples: Vec<GreenAnnulusSample>,
    pub tail_fraction: f64,
    pub fit: GaussianFit,
}

/// `∫_T^∞ g_α(r, s) ds` in three dimensions.
pub fn green_tail_3d(alpha: f64, r: f64, t: f64) -> f64 {
    if r <= 0.0 {
        return 1.0 / (4.0 * PI * alpha) / (PI * alpha * t).sqrt();
    }
    erf(r / (2.0 * (alpha * t).sqrt())) / (4.0 * PI * alpha * r)
}

/// Time integral of the kernel up to the grid's final time plus the tail
/// bound `𝒞 ∫_{T}^∞ g₂`.
pub fn elliptic_green(lc: &LinearCoefficients, source: &[f64], opts: &GreenOptions) -> Result<GreenEstimate> {
    let grid = lc.grid().clone();
    if grid.n() < 3 {
        return Err(LabError::Precondition(format!(
            "the Green function bound needs n >= 3, got n = {}",
            grid.n()
        )));
    }
    if !lc.is_time_independent() {
        return Err(LabError::Precondition("Green function requires time-independent coefficients".into()));
    }
    let k = estimate_kernel(lc, source, 0.0, &opts.kernel)?;
    let fit = fit_gaussian_bounds(&k, &opts.fit)?;
    let t_max = grid.t_final();
    let cells = grid.cell_count();
    let mut values = vec![0.0; cells];
    for step in 1..grid.steps() {
        for (c, v) in values.iter_mut().enumerate() {
            *v += k.at(c, step) * grid.dt();
        }
    }
    let tail: Vec<f64> = (0..cells)
        .map(|c| fit.c_fit * green_tail_3d(fit.alpha2, k.r2(c).sqrt(), t_max))
        .collect();
    for (v, t) in values.iter_mut().zip(&tail) {
        *v += t;
    }
    let box_half = (0..grid.n())
        .map(|a| 0.5 * (grid.upper()[a] - grid.lower()[a]))
        .fold(f64::INFINITY, f64::min);
    let annulus = opts.annulus.unwrap_or((4.0 * grid.h(), 0.5 * box_half));
    let mut samples = Vec::new();
    let mut tail_fraction: f64 = 0.0;
    for (c, (&g, &tl)) in values.iter().zip(&tail).enumerate() {
        let r = k.r2(c).sqrt();
        if r >= annulus.0 - 1e-12 && r <= annulus.1 + 1e-12 {
            samples.push(GreenAnnulusSample {
                cell: c,
                r,
                green: g,
                ratio: g * 4.0 * PI * r,
            });
            tail_fraction = tail_fraction.max(tl / g);
        }
    }
    if samples.is_empty() {
        return Err(LabError::Precondition("fit annulus contains no cells".into()));
    }
    if tail_fraction > opts.max_tail_fraction {
        return Err(LabError::TailTooLarge {
            fraction: tail_fraction,
            limit: opts.max_tail_fraction,
        });
    }
    let two_sided = |q: &dyn Fn(&GreenAnnulusSample) -> f64| {
        samples.iter().map(|s| q(s).max(1.0 / q(s))).fold(1.0, f64::max)
    };
    let k_fit = two_sided(&|s| s.ratio);
    let k_raw = two_sided(&|s| s.green * s.r);
    Ok(GreenEstimate {
        source: k.source.clone(),
        values: Field::from_values(&grid, 1, values)?,
        tail,
        t_max,
        k_fit,
        k_raw,
        annulus,
        samples,
        tail_fraction,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families;
    use proptest::prelude::*;

    #[test]
    fn heat_kernel_examples() {
        assert!((heat_kernel(1.0, 1, &[0.0], 1.0 / (4.0 * PI)).unwrap() - 1.0).abs() < 1e-14);
        let v = heat_kernel(2.0, 1, &[2.0], 1.0).unwrap();
        assert!((v - (8.0 * PI).powf(-0.5) * (-0.5f64).exp()).abs() < 1e-15);
        assert!(heat_kernel(1.0, 1, &[0.0], 0.0).is_err());
        // 2-D normalization on a box of six standard deviations √(2αt)
        let t: f64 = 0.3;
        let half = 6.0 * (2.0 * t).sqrt();
        let m = 600;
        let h = 2.0 * half / m as f64;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = -half + (i as f64 + 0.5) * h;
                let y = -half + (j as f64 + 0.5) * h;
                total += heat_kernel(1.0, 2, &[x, y], t).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    fn heat_1d(alpha: f64, cells: usize, dt: f64, t: f64) -> LinearCoefficients {
        let h = 2.0 / cells as f64;
        let g = SpaceTimeGrid::new(1, &[(-1.0, 1.0)], h, t, dt).unwrap();
        LinearCoefficients::heat(&g, alpha)
    }

    fn center_source(lc: &LinearCoefficients) -> Vec<f64> {
        snap_to_center(lc.grid(), &[0.0]).unwrap()
    }

    #[test]
    fn discrete_kernel_matches_heat_kernel() {
        for alpha in [1.0, 2.0] {
            let lc = heat_1d(alpha, 256, 1.0 / 4096.0, 1.0 / 64.0);
            let src = center_source(&lc);
            let k = estimate_kernel(&lc, &src, 0.0, &KernelOptions::default()).unwrap();
            let g = lc.grid();
            let worst_from = |first: usize| {
                let mut worst: f64 = 0.0;
                for step in first..g.steps() {
                    let s = k.elapsed(step);
                    for c in 0..g.cell_count() {
                        let r2 = k.r2(c);
                        if r2.sqrt() <= 3.0 * s.sqrt() {
                            let exact = analytic::heat_kernel(1, alpha, r2, s);
                            worst = worst.max((k.at(c, step) - exact).abs() / exact);
                        }
                    }
                }
                worst
            };
            // backward Euler alone leaves ~6.6% after 10 steps and ~1.8% after 40
            assert!(worst_from(10) < 0.08, "alpha {alpha}: {}", worst_from(10));
            assert!(worst_from(40) < 0.02, "alpha {alpha}: {}", worst_from(40));
        }
    }

    #[test]
    fn conservation_and_symmetry_2d() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 1.0 / 16.0, 0.05, 1.0 / 400.0).unwrap();
        let lc = LinearCoefficients::isotropic(families::checkerboard(&g, 10.0, 0.25), 1.0);
        let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
        let a = prop.kernel_at(37, 0).unwrap();
        let b = prop.kernel_at(150, 0).unwrap();
        for s in 0..g.steps() {
            assert!((a.mass(s) - 1.0).abs() < 1e-10);
        }
        for s in 1..g.steps() {
            let x = a.at(150, s);
            let y = b.at(37, s);
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-12), "{x} {y}");
        }
    }

    #[test]
    fn horizon_raises_enlarge_box() {
        let lc = heat_1d(1.0, 32, 1.0 / 256.0, 0.25);
        let opts = KernelOptions {
            horizon: Some(0.2),
            ..KernelOptions::default()
        };
        let src = center_source(&lc);
        match estimate_kernel(&lc, &src, 0.0, &opts) {
            Err(LabError::EnlargeBox { suggested_half_width, .. }) => assert!(suggested_half_width > 1.0),
            other => panic!("{other:?}"),
        }
        assert!(estimate_kernel(&lc, &[0.01], 0.0, &KernelOptions::default()).is_err());
    }

    #[test]
    fn gaussian_self_fit_on_exact_kernel() {
        let lc = heat_1d(1.0, 256, 1.0 / 16384.0, 1.0 / 64.0);
        let src = center_source(&lc);
        let mut k = estimate_kernel(&lc, &src, 0.0, &KernelOptions::default()).unwrap();
        let g = lc.grid().clone();
        // overwrite with the analytic kernel: the fit must recover it
        for step in 1..g.steps() {
            for c in 0..g.cell_count() {
                let v = analytic::heat_kernel(1, 1.0, k.r2(c), k.elapsed(step));
                k.field.set(c, step, v);
            }
        }
        let fit = fit_gaussian_bounds(&k, &FitRegion::default()).unwrap();
        assert!((fit.alpha1 - 1.0).abs() < 0.05 && (fit.alpha2 - 1.0).abs() < 0.05, "{fit:?}");
        assert!(fit.c_fit <= 1.05, "{fit:?}");
        assert_eq!(fit.max_violation, 0.0);
    }

    #[test]
    fn chapman_kolmogorov_analytic_quadrature() {
        let (tau, eta, t) = (0.0, 0.3, 0.7);
        let h = 0.005;
        for x in [-0.5, 0.0, 0.8] {
            let lhs = analytic::heat_kernel(1, 1.0, x * x, t - tau);
            let rhs: f64 = (-2000..2000)
                .map(|i| {
                    let z = (i as f64 + 0.5) * h;
                    analytic::heat_kernel(1, 1.0, (x - z).powi(2), t - eta) * analytic::heat_kernel(1, 1.0, z * z, eta - tau) * h
                })
                .sum();
            assert!((lhs - rhs).abs() / lhs < 1e-6);
        }
    }

    #[test]
    fn chapman_kolmogorov_discrete() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 64.0, 0.02, 1.0 / 5000.0).unwrap();
        let lc = LinearCoefficients::heat(&g, 1.0);
        let src = snap_to_center(&g, &[0.5]).unwrap();
        let rep = check_chapman_kolmogorov(&lc, &src, 0.0, 0.01, 0.02, &KernelOptions::default()).unwrap();
        assert!(rep.max_relative_residual < 2e-2, "{rep:?}");
        assert!(check_chapman_kolmogorov(&lc, &src, 0.0, 0.02, 0.01, &KernelOptions::default()).is_err());
    }

    #[test]
    fn green_requires_three_dimensions() {
        let lc = heat_1d(1.0, 32, 1.0 / 256.0, 0.25);
        let src = center_source(&lc);
        assert!(matches!(
            elliptic_green(&lc, &src, &GreenOptions::default()),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn green_tail_limits() {
        // full integral from 0 equals the Newtonian potential
        let r = 0.3;
        let full = green_tail_3d(1.0, r, 1e-12);
        assert!((full - 1.0 / (4.0 * PI * r)).abs() < 1e-12);
        assert!(green_tail_3d(1.0, 1e-9, 0.5) > 0.0);
        // numerical check against direct quadrature
        let t0 = 0.05;
        let mut acc = 0.0;
        let mut s = t0;
        let ds = 1e-4;
        while s < 200.0 {
            let sm = s + 0.5 * ds;
            acc += analytic::heat_kernel(3, 1.0, r * r, sm) * ds;
            s += ds;
        }
        acc += 2.0 / ((4.0 * PI).powf(1.5) * 200f64.sqrt());
        assert!((acc - green_tail_3d(1.0, r, t0)).abs() / acc < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn kernel_nonnegative_and_symmetric(seed in 0u64..1000, a in 0usize..32, b in 0usize..32) {
            let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 32.0, 0.02, 1.0 / 500.0).unwrap();
            let lc = LinearCoefficients::isotropic(families::random_piecewise(&g, seed, 30.0, 0.125), 1.0);
            let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
            let ka = prop.kernel_at(a, 0).unwrap();
            let kb = prop.kernel_at(b, 0).unwrap();
            for s in 1..g.steps() {
                prop_assert!(ka.field.slab(s).iter().all(|v| *v >= -1e-12));
                let (x, y) = (ka.at(b, s), kb.at(a, s));
                prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(y.abs()).max(1e-10));
            }
        }
    }
}
