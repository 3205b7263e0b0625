//! Non-negative solutions from measures and back: superposition of kernels,
//! the Gaussian growth condition and initial-trace recovery by extrapolation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::AnalyticFn;
use crate::certify::{Certificate, Provenance, Theorem, Witness};
use crate::error::{LabError, Result};
use crate::field::{Field, SolutionField};
use crate::grid::SpaceTimeGrid;
use crate::hashing::digest_json;
use crate::kernel::{KernelEstimate, KernelOptions, KernelPropagator};
use crate::solver::{default_test_functions, weak_residual, Boundary, ProblemSpec, TestFunction};
use crate::structure::LinearCoefficients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: Vec<f64>,
    pub mass: f64,
}

/// Closed-form tail behavior of a measure, used for the growth condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GrowthFamily {
    /// Compactly supported or bounded density.
    Bounded,
    /// Density comparable to `e^{γ|x|²}`.
    GaussianGrowth { gamma: f64 },
    /// Density comparable to `e^{|x|^p}` with `p > 2`.
    SuperGaussian { power: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BorelMeasure {
    pub atoms: Vec<Atom>,
    /// Static field of `μ` on the spatial grid.
    pub density: Option<Field>,
    pub growth: Option<GrowthFamily>,
}

impl BorelMeasure {
    pub fn new(atoms: Vec<Atom>, density: Option<Field>, growth: Option<GrowthFamily>) -> Result<Self> {
        if atoms.is_empty() && density.is_none() {
            return Err(LabError::Precondition("a measure needs atoms or a density".into()));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !(a.mass > 0.0) || !a.mass.is_finite() || a.location.iter().any(|x| !x.is_finite()) {
                return Err(LabError::Precondition(format!("atom {i} needs a positive mass and a finite location")));
            }
        }
        if let Some(d) = &density {
            if !d.all_finite() || d.min() < 0.0 {
                return Err(LabError::Precondition("density must be finite and non-negative".into()));
            }
        }
        Ok(Self { atoms, density, growth })
    }

    pub fn atoms(atoms: Vec<Atom>) -> Result<Self> {
        Self::new(atoms, None, None)
    }

    pub fn density(mu: Field) -> Result<Self> {
        Self::new(Vec::new(), Some(mu), None)
    }

    /// The zero measure (a vanishing density).
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        Self {
            atoms: Vec::new(),
            density: Some(Field::constant(grid, 0.0)),
            growth: None,
        }
    }

    /// Atoms moved to the centers of their cells, masses unchanged.
    pub fn snapped(&self, grid: &SpaceTimeGrid) -> Result<Self> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for a in &self.atoms {
            let cell = grid
                .locate(&a.location)
                .ok_or_else(|| LabError::Precondition(format!("atom at {:?} lies outside the box", a.location)))?;
            atoms.push(Atom {
                location: grid.center(cell)[..grid.n()].to_vec(),
                mass: a.mass,
            });
        }
        Ok(Self {
            atoms,
            density: self.density.clone(),
            growth: self.growth,
        })
    }

    /// `∫ ψ dρ` with the density integrated by the midpoint rule.
    pub fn integrate(&self, psi: &TraceTestFunction) -> f64 {
        let mut total: f64 = self.atoms.iter().map(|a| a.mass * psi.eval(&a.location)).sum();
        if let Some(d) = &self.density {
            let grid = d.grid();
            let vol = grid.cell_volume();
            total += (0..grid.cell_count())
                .map(|c| d.at(c, 0) * psi.eval(&grid.center(c)[..grid.n()]) * vol)
                .sum::<f64>();
        }
        total
    }

    pub fn hash(&self) -> String {
        let density = self.density.as_ref().map(|d| d.content_hash());
        digest_json(&(&self.atoms, density, self.growth))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub holds: bool,
    /// Smallest workable σ (`0` means every σ > 0 works).
    pub sigma: Option<f64>,
    pub note: String,
}

/// Decides whether `∫ e^{−σ|x|²} ρ(dx) < ∞` for some `σ > 0`.
pub fn check_growth(m: &BorelMeasure) -> GrowthReport {
    match m.growth.unwrap_or(GrowthFamily::Bounded) {
        GrowthFamily::Bounded => GrowthReport {
            holds: true,
            sigma: Some(0.0),
            note: "finite on the truncated box: every sigma > 0 works".into(),
        },
        GrowthFamily::GaussianGrowth { gamma } => {
            let margin = 1e-3 * gamma.abs().max(1.0);
            GrowthReport {
                holds: true,
                sigma: Some(gamma.max(0.0) + margin),
                note: format!("holds exactly for sigma > {gamma}"),
            }
        }
        GrowthFamily::SuperGaussian { power } => GrowthReport {
            holds: power <= 2.0,
            sigma: None,
            note: format!("density grows like exp(|x|^{power}); no sigma works"),
        },
    }
}

/// Whether (the tail of) `m` is integrable against `e^{−σ|x|²}`.
pub fn growth_holds_for(m: &BorelMeasure, sigma: f64) -> bool {
    sigma > 0.0
        && match m.growth.unwrap_or(GrowthFamily::Bounded) {
            GrowthFamily::Bounded => true,
            GrowthFamily::GaussianGrowth { gamma } => sigma > gamma,
            GrowthFamily::SuperGaussian { power } => power <= 2.0,
        }
}

fn growth_gate(m: &BorelMeasure) -> Result<GrowthReport> {
    let report = check_growth(m);
    if !report.holds {
        return Err(LabError::Growth(report.note));
    }
    Ok(report)
}

fn represented(field: Field, m: &BorelMeasure, grid: &SpaceTimeGrid) -> SolutionField {
    SolutionField::new(field, format!("represented:{}", m.hash()), grid.hash())
}

/// Superposition of precomputed kernels; every atom cell and every cell of
/// positive density needs a kernel sourced at `t = 0`.
pub fn represent_with(kernels: &[KernelEstimate], m: &BorelMeasure) -> Result<SolutionField> {
    growth_gate(m)?;
    let first = kernels
        .first()
        .ok_or_else(|| LabError::Precondition("empty kernel family".into()))?;
    let grid = first.grid().clone();
    let by_cell: BTreeMap<usize, &KernelEstimate> =
        kernels.iter().filter(|k| k.tau_step == 0).map(|k| (k.source_cell, k)).collect();
    let mut out = Field::zeros(&grid);
    let mut add = |cell: usize, weight: f64| -> Result<()> {
        let k = by_cell.get(&cell).ok_or(LabError::MissingKernel(cell))?;
        out.add_scaled(&k.field, weight)
    };
    for a in &m.atoms {
        let cell = grid
            .locate(&a.location)
            .ok_or_else(|| LabError::Precondition(format!("atom at {:?} lies outside the box", a.location)))?;
        add(cell, a.mass)?;
    }
    if let Some(d) = &m.density {
        let vol = grid.cell_volume();
        for c in 0..grid.cell_count() {
            let mu = d.at(c, 0);
            if mu > 0.0 {
                add(c, mu * vol)?;
            }
        }
    }
    Ok(represented(out, m, &grid))
}

/// `u(x,t) = ∫ Γ(x,t;ξ,0) ρ(dξ)`. Atom columns are computed in parallel; the
/// density part is propagated in one pass, which by linearity of the
/// discrete evolution equals the sum of its kernel columns.
pub fn represent(prop: &KernelPropagator, m: &BorelMeasure) -> Result<SolutionField> {
    growth_gate(m)?;
    let grid = prop.grid().clone();
    let mut cells = Vec::with_capacity(m.atoms.len());
    for a in &m.atoms {
        cells.push(
            grid.locate(&a.location)
                .ok_or_else(|| LabError::Precondition(format!("atom at {:?} lies outside the box", a.location)))?,
        );
    }
    let columns = prop.kernels(&cells, 0)?;
    let mut out = Field::zeros(&grid);
    for (k, a) in columns.iter().zip(&m.atoms) {
        out.add_scaled(&k.field, a.mass)?;
    }
    if let Some(d) = &m.density {
        let init: Vec<f64> = (0..grid.cell_count()).map(|c| d.at(c, 0)).collect();
        out.add_scaled(&prop.propagate(&init)?, 1.0)?;
    }
    Ok(represented(out, m, &grid))
}

/// A continuous weight `ψ` with a Gaussian decay certificate
/// `|ψ(x)| ≤ K e^{−δ|x|²}`. With `moment_axis` the weight is `x_axis ψ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTestFunction {
    pub psi: AnalyticFn,
    #[serde(default)]
    pub moment_axis: Option<usize>,
    pub k: f64,
    pub delta: f64,
}

impl TraceTestFunction {
    pub fn new(psi: AnalyticFn, moment_axis: Option<usize>, k: f64, delta: f64) -> Self {
        Self { psi, moment_axis, k, delta }
    }

    /// `e^{−|x−c|²/(2w²)}` with the exact certificate `δ = 1/(4w²)`,
    /// `K = e^{|c|²/(2w²)}`.
    pub fn gaussian(center: &[f64], width: f64) -> Self {
        let c2: f64 = center.iter().map(|c| c * c).sum();
        Self {
            psi: AnalyticFn::Gaussian {
                amplitude: 1.0,
                center: center.to_vec(),
                width,
            },
            moment_axis: None,
            k: (c2 / (2.0 * width * width)).exp(),
            delta: 1.0 / (4.0 * width * width),
        }
    }

    /// Compactly supported flat-top window, certified with `δ = 1`.
    pub fn plateau(center: &[f64], inner: f64, outer: f64, moment_axis: Option<usize>) -> Self {
        let reach: f64 = center.iter().map(|c| (c.abs() + outer).powi(2)).sum();
        let scale = match moment_axis {
            Some(a) => center[a].abs() + outer,
            None => 1.0,
        };
        Self {
            psi: AnalyticFn::Plateau {
                amplitude: 1.0,
                center: center.to_vec(),
                inner,
                outer,
            },
            moment_axis,
            k: scale * reach.exp(),
            delta: 1.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = self.psi.eval(x, 0.0);
        match self.moment_axis {
            Some(a) => x[a] * v,
            None => v,
        }
    }

    /// Checks the decay certificate at every cell center.
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if !(self.delta > 0.0) || !(self.k > 0.0) {
            return Err(LabError::Precondition("decay certificate needs K > 0 and delta > 0".into()));
        }
        if let Some(a) = self.moment_axis {
            if a >= grid.n() {
                return Err(LabError::Precondition(format!("moment axis {a} out of range")));
            }
        }
        for c in 0..grid.cell_count() {
            let x = &grid.center(c)[..grid.n()];
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let bound = self.k * (-self.delta * r2).exp();
            let v = self.eval(x).abs();
            if v > bound * (1.0 + 1e-9) {
                return Err(LabError::Precondition(format!(
                    "test function exceeds its decay certificate at {x:?}: {v:e} > {bound:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Time ladder `t_j = t₀ / 2^j`, `t₀ = t0_steps · dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceLadder {
    pub t0_steps: usize,
    pub levels: usize,
    /// Number of powers of `t` eliminated by the extrapolation.
    pub order: usize,
}

impl Default for TraceLadder {
    fn default() -> Self {
        Self {
            t0_steps: 16,
            levels: 5,
            order: 2,
        }
    }
}

impl TraceLadder {
    /// Steps of the ladder, largest first; only exact time levels are kept.
    pub fn steps(&self, grid: &SpaceTimeGrid) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for j in 0..self.levels {
            let d = 1usize << j;
            if self.t0_steps % d != 0 {
                break;
            }
            let s = self.t0_steps / d;
            if s == 0 || s > grid.nt() {
                break;
            }
            out.push(s);
        }
        if out.len() < 3 {
            return Err(LabError::Precondition(format!(
                "trace ladder has {} usable levels; extrapolation needs at least 3",
                out.len()
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceValue {
    pub value: f64,
    pub error: f64,
    /// `(t_j, ∫ u(·,t_j) ψ)` along the ladder.
    pub ladder: Vec<(f64, f64)>,
}

/// Richardson extrapolation to `t = 0` for a ladder halving `t` each level.
pub fn richardson(values: &[f64], order: usize) -> (f64, f64) {
    let mut table: Vec<Vec<f64>> = vec![values.to_vec()];
    let order = order.min(values.len() - 2);
    for k in 1..=order {
        let prev = &table[k - 1];
        let f = (1u64 << k) as f64;
        let next: Vec<f64> = prev.windows(2).map(|w| w[1] + (w[1] - w[0]) / (f - 1.0)).collect();
        table.push(next);
    }
    let last = &table[order];
    let value = last[last.len() - 1];
    let error = (value - last[last.len() - 2]).abs();
    (value, error)
}

/// `lim_{t↘0} ∫ u(x,t) ψ(x) dx` for each `ψ`. With a known growth rate
/// `σ`, each certificate must decay faster (`δ > σ`).
pub fn initial_trace(
    u: &SolutionField,
    psis: &[TraceTestFunction],
    sigma: Option<f64>,
    ladder: &TraceLadder,
) -> Result<Vec<TraceValue>> {
    let grid = u.grid();
    let steps = ladder.steps(grid)?;
    for (i, psi) in psis.iter().enumerate() {
        psi.validate(grid)?;
        if let Some(s) = sigma {
            if psi.delta <= s {
                return Err(LabError::Precondition(format!(
                    "test function {i} decays with delta = {} <= sigma = {s}",
                    psi.delta
                )));
            }
        }
    }
    let vol = grid.cell_volume();
    let centers: Vec<Vec<f64>> = (0..grid.cell_count()).map(|c| grid.center(c)[..grid.n()].to_vec()).collect();
    Ok(psis
        .par_iter()
        .map(|psi| {
            let weights: Vec<f64> = centers.iter().map(|x| psi.eval(x) * vol).collect();
            let ladder_vals: Vec<(f64, f64)> = steps
                .iter()
                .map(|&s| {
                    let slab = u.field.slab(s);
                    (grid.time(s), slab.iter().zip(&weights).map(|(a, b)| a * b).sum())
                })
                .collect();
            let vals: Vec<f64> = ladder_vals.iter().map(|p| p.1).collect();
            let (value, error) = richardson(&vals, ladder.order);
            TraceValue {
                value,
                error,
                ladder: ladder_vals,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverOptions {
    /// Peaks below this fraction of the maximum at the first step are noise.
    pub threshold: f64,
    /// Plateau half-widths in cell widths.
    pub inner_cells: f64,
    pub outer_cells: f64,
    pub ladder: TraceLadder,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-2,
            inner_cells: 8.0,
            outer_cells: 16.0,
            ladder: TraceLadder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredAtom {
    pub location: Vec<f64>,
    pub mass: f64,
    pub mass_error: f64,
}

/// Locates atoms of the initial trace: peaks at the first step seed flat
/// windows whose extrapolated traces give the mass, and whose first moments
/// give the location.
pub fn recover_atoms(u: &SolutionField, opts: &RecoverOptions) -> Result<Vec<RecoveredAtom>> {
    let grid = u.grid();
    if grid.nt() < 1 {
        return Err(LabError::Precondition("need at least one time step".into()));
    }
    let slab = u.field.slab(1);
    let top = slab.iter().fold(0.0f64, |m, v| m.max(*v));
    if !(top > 0.0) {
        return Ok(Vec::new());
    }
    let mut peaks: Vec<usize> = (0..grid.cell_count())
        .filter(|&c| {
            slab[c] >= opts.threshold * top
                && (0..grid.n()).all(|a| {
                    [-1isize, 1]
                        .iter()
                        .all(|&d| grid.neighbor(c, a, d).map_or(true, |nb| slab[nb] <= slab[c]))
                })
        })
        .collect();
    peaks.sort_by(|a, b| slab[*b].total_cmp(&slab[*a]).then(a.cmp(b)));
    let h = grid.h();
    let (inner, outer) = (opts.inner_cells * h, opts.outer_cells * h);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in peaks {
        let x = grid.center(p)[..grid.n()].to_vec();
        let far = kept
            .iter()
            .all(|k| k.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) >= outer);
        if far {
            kept.push(x);
        }
    }
    let mut out = Vec::with_capacity(kept.len());
    for x in kept {
        let mut psis = vec![TraceTestFunction::plateau(&x, inner, outer, None)];
        for a in 0..grid.n() {
            psis.push(TraceTestFunction::plateau(&x, inner, outer, Some(a)));
        }
        let tr = initial_trace(u, &psis, None, &opts.ladder)?;
        let mass = tr[0].value;
        let location = (0..grid.n()).map(|a| tr[a + 1].value / mass).collect();
        out.push(RecoveredAtom {
            location,
            mass,
            mass_error: tr[0].error,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundtripOptions {
    pub kernel: KernelOptions,
    pub ladder: TraceLadder,
    /// Relative floor on the per-ψ tolerance.
    pub rel_floor: f64,
    /// Multiple of the extrapolation error accepted as agreement.
    pub error_factor: f64,
    pub max_weak_residual: f64,
}

impl Default for RoundtripOptions {
    fn default() -> Self {
        Self {
            kernel: KernelOptions {
                tail_tol: f64::MAX,
                ..KernelOptions::default()
            },
            ladder: TraceLadder::default(),
            rel_floor: 0.02,
            error_factor: 3.0,
            max_weak_residual: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripResult {
    pub certificate: Certificate,
    pub field: SolutionField,
    pub traces: Vec<TraceValue>,
    pub expected: Vec<f64>,
    pub weak_residuals: Vec<f64>,
}

/// Represents `m`, recovers its traces against `psis` and checks that the
/// represented field is a weak solution.
pub fn trace_roundtrip(
    m: &BorelMeasure,
    lc: &LinearCoefficients,
    psis: &[TraceTestFunction],
    opts: &RoundtripOptions,
) -> Result<RoundtripResult> {
    let growth = growth_gate(m)?;
    let prop = KernelPropagator::new(lc, &opts.kernel)?;
    let grid = prop.grid().clone();
    let snapped = m.snapped(&grid)?;
    let u = represent(&prop, &snapped)?;
    let sigma = growth.sigma.filter(|s| *s > 0.0);
    let traces = initial_trace(&u, psis, sigma, &opts.ladder)?;
    let expected: Vec<f64> = psis.iter().map(|p| snapped.integrate(p)).collect();

    let spec = ProblemSpec::linear(lc.clone(), Field::from_values(&grid, 1, u.field.slab(0).to_vec())?, Boundary::NoFlux)?;
    let phis: Vec<TestFunction> = default_test_functions(&grid);
    let weak = weak_residual(&u, &spec, &phis)?;
    let max_weak = weak.iter().fold(0.0f64, |a, b| a.max(*b));

    let mut cert = Certificate {
        theorem: Theorem::WidderTrace,
        pass: true,
        applicable: true,
        constants: BTreeMap::new(),
        witness: Vec::new(),
        provenance: Provenance::of(&u),
        exclusion_steps: 0,
        notes: vec![growth.note],
    };
    let mut worst_rel = 0.0f64;
    for (i, (tr, ex)) in traces.iter().zip(&expected).enumerate() {
        let dev = (tr.value - ex).abs();
        let tol = (opts.error_factor * tr.error).max(opts.rel_floor * ex.abs()).max(1e-12);
        if dev > tol {
            cert.pass = false;
        }
        let rel = if ex.abs() > 0.0 { dev / ex.abs() } else { dev };
        worst_rel = worst_rel.max(rel);
        cert.constants.insert(format!("trace_{i}"), tr.value);
        cert.constants.insert(format!("expected_{i}"), *ex);
        cert.constants.insert(format!("error_{i}"), tr.error);
        cert.witness.push(Witness {
            label: format!("psi_{i}"),
            x: Vec::new(),
            t: 0.0,
            value: rel,
        });
    }
    cert.constants.insert("max_relative_deviation".into(), worst_rel);
    cert.constants.insert("max_weak_residual".into(), max_weak);
    if max_weak > opts.max_weak_residual {
        cert.pass = false;
        cert.notes.push(format!("weak residual {max_weak:e} exceeds {}", opts.max_weak_residual));
    }
    Ok(RoundtripResult {
        certificate: cert,
        field: u,
        traces,
        expected,
        weak_residuals: weak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, SolverConfig};

    fn line(half: f64, h: f64, t: f64, dt: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, &[(-half - h / 2.0, half - h / 2.0)], h, t, dt).unwrap()
    }

    #[test]
    fn growth_families() {
        let g = line(1.0, 0.125, 0.125, 0.125);
        let atom = BorelMeasure::atoms(vec![Atom {
            location: vec![0.0],
            mass: 1.0,
        }])
        .unwrap();
        assert!(check_growth(&atom).holds);
        assert!(growth_holds_for(&atom, 1e-6));
        let mut gauss = BorelMeasure::zero(&g);
        gauss.growth = Some(GrowthFamily::GaussianGrowth { gamma: 1.0 });
        assert!(growth_holds_for(&gauss, 1.01) && !growth_holds_for(&gauss, 1.0));
        assert!(check_growth(&gauss).sigma.unwrap() > 1.0);
        gauss.growth = Some(GrowthFamily::SuperGaussian { power: 3.0 });
        assert!(!check_growth(&gauss).holds);
    }

    #[test]
    fn measure_validation() {
        assert!(BorelMeasure::atoms(vec![Atom {
            location: vec![0.0],
            mass: 0.0
        }])
        .is_err());
        assert!(BorelMeasure::new(Vec::new(), None, None).is_err());
    }

    #[test]
    fn richardson_exact_for_quadratics() {
        let f = |t: f64| 2.0 - 3.0 * t + 0.5 * t * t;
        let vals: Vec<f64> = [0.16, 0.08, 0.04, 0.02, 0.01].iter().map(|&t| f(t)).collect();
        let (v, e) = richardson(&vals, 2);
        assert!((v - 2.0).abs() < 1e-12 && e < 1e-12);
    }

    #[test]
    fn atom_representation_matches_direct_solve() {
        let h = 1.0 / 32.0;
        let g = line(1.0, h, 0.0625, h * h);
        let lc = LinearCoefficients::heat(&g, 1.0);
        let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
        let m = BorelMeasure::atoms(vec![
            Atom {
                location: vec![-0.25],
                mass: 1.0,
            },
            Atom {
                location: vec![0.25],
                mass: 2.0,
            },
        ])
        .unwrap();
        let u = represent(&prop, &m).unwrap();
        let mut init = vec![0.0; g.cell_count()];
        init[g.locate(&[-0.25]).unwrap()] += 1.0 / h;
        init[g.locate(&[0.25]).unwrap()] += 2.0 / h;
        let spec = ProblemSpec::linear(lc, Field::from_values(&g, 1, init).unwrap(), Boundary::NoFlux).unwrap();
        let direct = solve(&spec, &SolverConfig::default()).unwrap();
        let diff = u
            .field
            .values()
            .iter()
            .zip(direct.field.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-9, "{diff}");
        assert!(u.field.min() >= -1e-10);
    }

    #[test]
    fn density_column_sum_equals_propagation_and_constant_is_preserved() {
        let h = 1.0 / 16.0;
        let g = line(1.0, h, 0.02, 1.0 / 400.0);
        let lc = LinearCoefficients::heat(&g, 1.0);
        let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
        let mu = Field::static_from_fn(&g, |x| 1.0 + 0.5 * x[0]);
        let m = BorelMeasure::density(mu).unwrap();
        let fast = represent(&prop, &m).unwrap();
        let cells: Vec<usize> = (0..g.cell_count()).collect();
        let family = prop.kernels(&cells, 0).unwrap();
        let slow = represent_with(&family, &m).unwrap();
        let diff = fast
            .field
            .values()
            .iter()
            .zip(slow.field.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-9, "{diff}");
        let one = BorelMeasure::density(Field::constant(&g, 1.0)).unwrap();
        let u = represent(&prop, &one).unwrap();
        assert!(u.field.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(matches!(represent_with(&family[..3], &m), Err(LabError::MissingKernel(_))));
    }

    #[test]
    fn trace_of_kernel_against_gaussian() {
        let h = 1.0 / 64.0;
        let g = line(2.0, h, 1.0 / 64.0, h * h / 4.0);
        let lc = LinearCoefficients::heat(&g, 1.0);
        let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
        let m = BorelMeasure::atoms(vec![Atom {
            location: vec![0.0],
            mass: 1.0,
        }])
        .unwrap();
        let u = represent(&prop, &m).unwrap();
        // ψ = e^{−x²}
        let psi = TraceTestFunction::gaussian(&[0.0], std::f64::consts::FRAC_1_SQRT_2);
        let tr = initial_trace(&u, &[psi], None, &TraceLadder::default()).unwrap();
        assert!((tr[0].value - 1.0).abs() < 1e-3, "{:?}", tr[0]);
    }

    #[test]
    fn trace_of_constant_and_certificate_violation() {
        let h = 1.0 / 32.0;
        let g = line(1.0, h, 0.0625, 1.0 / 1024.0);
        let u = SolutionField::from_fn(&g, "one", |_, _| 1.0);
        let psi = TraceTestFunction::plateau(&[0.0], 0.2, 0.4, None);
        let want: f64 = (0..g.cell_count()).map(|c| psi.eval(&g.center(c)[..1]) * h).sum();
        let tr = initial_trace(&u, &[psi.clone()], None, &TraceLadder::default()).unwrap();
        assert!((tr[0].value - want).abs() < 1e-12);
        let mut bad = psi;
        bad.k = 1e-6;
        assert!(initial_trace(&u, &[bad], None, &TraceLadder::default()).is_err());
        let short = TraceLadder {
            t0_steps: 2,
            ..Default::default()
        };
        assert!(short.steps(&g).is_err());
    }

    #[test]
    fn zero_measure_roundtrip() {
        let h = 1.0 / 32.0;
        let g = line(1.0, h, 0.0625, 1.0 / 1024.0);
        let lc = LinearCoefficients::heat(&g, 1.0);
        let psis = vec![TraceTestFunction::gaussian(&[0.0], 0.3)];
        let r = trace_roundtrip(&BorelMeasure::zero(&g), &lc, &psis, &RoundtripOptions::default()).unwrap();
        assert!(r.certificate.pass);
        assert!(r.field.field.values().iter().all(|v| *v == 0.0));
        assert_eq!(r.traces[0].value, 0.0);
    }

    #[test]
    fn two_atom_recovery() {
        let h = 1.0 / 64.0;
        let g = line(1.0, h, 1.0 / 64.0, h * h / 4.0);
        let lc = LinearCoefficients::heat(&g, 1.0);
        let m = BorelMeasure::atoms(vec![
            Atom {
                location: vec![-0.3],
                mass: 1.0,
            },
            Atom {
                location: vec![0.4],
                mass: 2.0,
            },
        ])
        .unwrap();
        let prop = KernelPropagator::new(&lc, &KernelOptions::default()).unwrap();
        let u = represent(&prop, &m).unwrap();
        let mut atoms = recover_atoms(&u, &RecoverOptions::default()).unwrap();
        atoms.sort_by(|a, b| a.location[0].total_cmp(&b.location[0]));
        assert_eq!(atoms.len(), 2);
        for (r, want) in atoms.iter().zip(&m.atoms) {
            assert!((r.location[0] - want.location[0]).abs() <= h, "{r:?}");
            assert!((r.mass - want.mass).abs() <= 0.02 * want.mass, "{r:?}");
        }
    }
}
