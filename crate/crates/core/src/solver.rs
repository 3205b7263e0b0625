//! Cell-centered finite-volume solver for linear divergence-form equations and
//! a Picard solver for the quasilinear equation, plus weak-form diagnostics.

use serde::{Deserialize, Serialize};

use crate::analytic::{bump, bump_derivative};
use crate::error::{LabError, Result};
use crate::field::{Field, SolutionField};
use crate::grid::{SpaceTimeGrid, MAX_DIM};
use crate::hashing::digest_json;
use crate::linalg::{self, CsrBuilder, CsrMatrix};
use crate::structure::{
    ellipticity_check, probe_samples, verify_structure, LinearCoefficients, StructureFunctions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    LinearFull,
    LinearHomogeneous,
    Quasilinear,
}

#[derive(Debug, Clone)]
pub enum Coefficients {
    Linear(LinearCoefficients),
    Structure(StructureFunctions),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Values carried by the boundary-adjacent cells at every step.
    Dirichlet(Field),
    NoFlux,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub coefficients: Coefficients,
    pub initial: Field,
    pub boundary: Boundary,
    pub grid: SpaceTimeGrid,
}

impl ProblemSpec {
    pub fn linear(lc: LinearCoefficients, initial: Field, boundary: Boundary) -> Result<Self> {
        let kind = if lc.is_homogeneous() {
            ProblemKind::LinearHomogeneous
        } else {
            ProblemKind::LinearFull
        };
        let spec = Self {
            kind,
            grid: lc.grid().clone(),
            coefficients: Coefficients::Linear(lc),
            initial,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn quasilinear(sf: StructureFunctions, grid: &SpaceTimeGrid, initial: Field, boundary: Boundary) -> Result<Self> {
        let spec = Self {
            kind: ProblemKind::Quasilinear,
            coefficients: Coefficients::Structure(sf),
            initial,
            boundary,
            grid: grid.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial.grid() != &self.grid {
            return Err(LabError::Precondition("initial data grid does not match".into()));
        }
        if !self.initial.all_finite() {
            return Err(LabError::Precondition("initial data must be finite".into()));
        }
        if let Boundary::Dirichlet(f) = &self.boundary {
            if f.grid() != &self.grid || !f.all_finite() {
                return Err(LabError::Precondition("boundary data must be finite and on the problem grid".into()));
            }
        }
        match (&self.coefficients, self.kind) {
            (Coefficients::Linear(lc), ProblemKind::LinearHomogeneous) => {
                lc.validate_grid(&self.grid)?;
                if !lc.is_homogeneous() {
                    return Err(LabError::Precondition("homogeneous problem must have F_j = G = 0".into()));
                }
            }
            (Coefficients::Linear(lc), ProblemKind::LinearFull) => lc.validate_grid(&self.grid)?,
            (Coefficients::Structure(_), ProblemKind::Quasilinear) => {}
            _ => return Err(LabError::Precondition("problem kind does not match coefficients".into())),
        }
        Ok(())
    }

    pub fn linear_coefficients(&self) -> Option<&LinearCoefficients> {
        match &self.coefficients {
            Coefficients::Linear(lc) => Some(lc),
            Coefficients::Structure(_) => None,
        }
    }

    pub fn with_initial(&self, initial: Field) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn is_time_independent(&self) -> bool {
        let bc = match &self.boundary {
            Boundary::Dirichlet(f) => f.is_static(),
            Boundary::NoFlux => true,
        };
        let coef = match &self.coefficients {
            Coefficients::Linear(lc) => lc.is_time_independent(),
            Coefficients::Structure(_) => false,
        };
        bc && coef
    }

    pub fn hash(&self) -> String {
        let mut parts = vec![digest_json(&self.grid.descriptor()), format!("{:?}", self.kind)];
        match &self.coefficients {
            Coefficients::Linear(lc) => {
                parts.push(linear_hash(lc));
            }
            Coefficients::Structure(sf) => {
                parts.push(sf.evaluator.name().to_string());
                parts.push(digest_json(&sf.bounds));
                for (c, f) in &sf.coefficients.fields {
                    parts.push(format!("{c}:{}", f.content_hash()));
                }
            }
        }
        parts.push(self.initial.content_hash());
        match &self.boundary {
            Boundary::Dirichlet(f) => parts.push(format!("dirichlet:{}", f.content_hash())),
            Boundary::NoFlux => parts.push("no_flux".into()),
        }
        digest_json(&parts)
    }
}

fn linear_hash(lc: &LinearCoefficients) -> String {
    use crate::structure::Diffusion;
    let mut parts = vec![format!("nu={}", lc.nu)];
    match &lc.diffusion {
        Diffusion::Isotropic(f) => parts.push(format!("iso:{}", f.content_hash())),
        Diffusion::Diagonal(v) => parts.extend(v.iter().map(|f| format!("diag:{}", f.content_hash()))),
        Diffusion::Full(v) => parts.extend(v.iter().map(|f| format!("full:{}", f.content_hash()))),
    }
    for (tag, v) in [("A_j", &lc.drift_flux), ("B_j", &lc.drift), ("F_j", &lc.flux_source)] {
        if let Some(v) = v {
            parts.extend(v.iter().map(|f| format!("{tag}:{}", f.content_hash())));
        }
    }
    for (tag, f) in [("C", &lc.reaction), ("G", &lc.source)] {
        if let Some(f) = f {
            parts.push(format!("{tag}:{}", f.content_hash()));
        }
    }
    digest_json(&parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// 1 = backward Euler, 1/2 = trapezoidal.
    pub time_scheme_weight: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub linear_solver_tol: f64,
    pub linear_solver_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_scheme_weight: 1.0,
            picard_tol: 1e-9,
            picard_max_iters: 200,
            linear_solver_tol: 1e-12,
            linear_solver_max_iters: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn trapezoidal() -> Self {
        Self {
            time_scheme_weight: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.time_scheme_weight) {
            return Err(LabError::Config {
                path: "solver.time_scheme_weight".into(),
                reason: format!("must lie in [0.5, 1], got {}", self.time_scheme_weight),
            });
        }
        for (path, v) in [("solver.picard_tol", self.picard_tol), ("solver.linear_solver_tol", self.linear_solver_tol)] {
            if !(v > 0.0) {
                return Err(LabError::Config {
                    path: path.into(),
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if self.picard_max_iters == 0 || self.linear_solver_max_iters == 0 {
            return Err(LabError::Config {
                path: "solver".into(),
                reason: "iteration limits must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        digest_json(self)
    }
}

/// Stencil of `∂_b u` at `cell`: centered where both neighbors exist,
/// one-sided otherwise.
fn grad_stencil(grid: &SpaceTimeGrid, cell: usize, b: usize, weight: f64, out: &mut Vec<(usize, f64)>) {
    let h = grid.h();
    match (grid.neighbor(cell, b, -1), grid.neighbor(cell, b, 1)) {
        (Some(l), Some(r)) => {
            out.push((r, weight / (2.0 * h)));
            out.push((l, -weight / (2.0 * h)));
        }
        (None, Some(r)) => {
            out.push((r, weight / h));
            out.push((cell, -weight / h));
        }
        (Some(l), None) => {
            out.push((cell, weight / h));
            out.push((l, -weight / h));
        }
        (None, None) => {}
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Linear face flux in the `+axis` direction between `left` and its upper
/// neighbor `right`: stencil coefficients plus a constant part.
fn face_flux_stencil(
    lc: &LinearCoefficients,
    grid: &SpaceTimeGrid,
    left: usize,
    right: usize,
    axis: usize,
    step: usize,
    out: &mut Vec<(usize, f64)>,
) -> f64 {
    let h = grid.h();
    let kd = harmonic(lc.a(axis, axis, left, step), lc.a(axis, axis, right, step));
    out.push((right, kd / h));
    out.push((left, -kd / h));
    for b in 0..lc.n {
        if b == axis {
            continue;
        }
        let abf = 0.5 * (lc.a(b, axis, left, step) + lc.a(b, axis, right, step));
        if abf != 0.0 {
            grad_stencil(grid, left, b, 0.5 * abf, out);
            grad_stencil(grid, right, b, 0.5 * abf, out);
        }
    }
    if let Some(aj) = &lc.drift_flux {
        let af = 0.5 * (aj[axis].at(left, step) + aj[axis].at(right, step));
        out.push((left, 0.5 * af));
        out.push((right, 0.5 * af));
    }
    match &lc.flux_source {
        Some(f) => 0.5 * (f[axis].at(left, step) + f[axis].at(right, step)),
        None => 0.0,
    }
}

/// Spatial operator `L(u) = M u + s` over all cells with zero flux through
/// the outer faces.
struct Operator {
    m: CsrMatrix,
    s: Vec<f64>,
}

fn assemble(lc: &LinearCoefficients, grid: &SpaceTimeGrid, step: usize) -> Operator {
    let cells = grid.cell_count();
    let n = grid.n();
    let h = grid.h();
    let mut builder = CsrBuilder::with_capacity(cells, cells * (1 + 2 * n * n));
    let mut s = vec![0.0; cells];
    let mut scratch = Vec::new();
    for (cell, s_cell) in s.iter_mut().enumerate() {
        for axis in 0..n {
            for dir in [-1isize, 1] {
                let Some(nb) = grid.neighbor(cell, axis, dir) else { continue };
                let (l, r) = if dir > 0 { (cell, nb) } else { (nb, cell) };
                scratch.clear();
                let constant = face_flux_stencil(lc, grid, l, r, axis, step, &mut scratch);
                let sign = dir as f64 / h;
                for &(c, v) in &scratch {
                    builder.add(c, sign * v);
                }
                *s_cell += sign * constant;
            }
        }
        if let Some(b) = &lc.drift {
            scratch.clear();
            for (axis, bj) in b.iter().enumerate() {
                grad_stencil(grid, cell, axis, bj.at(cell, step), &mut scratch);
            }
            for &(c, v) in &scratch {
                builder.add(c, v);
            }
        }
        if let Some(c) = &lc.reaction {
            builder.add(cell, c.at(cell, step));
        }
        builder.add(cell, 0.0);
        if let Some(g) = &lc.source {
            *s_cell += g.at(cell, step);
        }
        builder.finish_row();
    }
    Operator { m: builder.build(), s }
}

fn laplacian(grid: &SpaceTimeGrid) -> CsrMatrix {
    let lc = LinearCoefficients::heat(grid, 1.0);
    assemble(&lc, grid, 0).m
}

/// Evaluates the nonlinear flux divergence `D(v)` and source `ℬ(v)` at every cell.
fn nonlinear_terms(sf: &StructureFunctions, grid: &SpaceTimeGrid, v: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let cells = grid.cell_count();
    let n = grid.n();
    let h = grid.h();
    let mut div = vec![0.0; cells];
    let mut src = vec![0.0; cells];
    let mut stencil = Vec::new();
    let grad_at = |cell: usize, b: usize, st: &mut Vec<(usize, f64)>| -> f64 {
        st.clear();
        grad_stencil(grid, cell, b, 1.0, st);
        st.iter().map(|&(c, w)| w * v[c]).sum()
    };
    let mut flux = [0.0; MAX_DIM];
    let mut p = [0.0; MAX_DIM];
    for l in 0..cells {
        let xl = grid.center(l);
        for axis in 0..n {
            let Some(r) = grid.neighbor(l, axis, 1) else { continue };
            let mut xf = xl;
            xf[axis] += 0.5 * h;
            for (b, pb) in p.iter_mut().enumerate().take(n) {
                *pb = if b == axis {
                    (v[r] - v[l]) / h
                } else {
                    0.5 * (grad_at(l, b, &mut stencil) + grad_at(r, b, &mut stencil))
                };
            }
            sf.evaluator.flux(&xf[..n], t, 0.5 * (v[l] + v[r]), &p[..n], &mut flux[..n]);
            div[l] += flux[axis] / h;
            div[r] -= flux[axis] / h;
        }
        for (b, pb) in p.iter_mut().enumerate().take(n) {
            *pb = grad_at(l, b, &mut stencil);
        }
        src[l] = sf.evaluator.source(&xl[..n], t, v[l], &p[..n]);
    }
    (div, src)
}

/// Normal face fluxes `(left, right, axis, flux)` of a slab, using the same
/// discretization as the time stepper.
pub fn face_fluxes(spec: &ProblemSpec, u: &[f64], step: usize) -> Vec<(usize, usize, usize, f64)> {
    let grid = &spec.grid;
    let n = grid.n();
    let h = grid.h();
    let mut out = Vec::new();
    let mut stencil = Vec::new();
    match &spec.coefficients {
        Coefficients::Linear(lc) => {
            for l in 0..grid.cell_count() {
                for axis in 0..n {
                    let Some(r) = grid.neighbor(l, axis, 1) else { continue };
                    stencil.clear();
                    let c = face_flux_stencil(lc, grid, l, r, axis, step, &mut stencil);
                    let f = c + stencil.iter().map(|&(cell, w)| w * u[cell]).sum::<f64>();
                    out.push((l, r, axis, f));
                }
            }
        }
        Coefficients::Structure(sf) => {
            let t = grid.time(step);
            let mut flux = [0.0; MAX_DIM];
            let mut p = [0.0; MAX_DIM];
            for l in 0..grid.cell_count() {
                for axis in 0..n {
                    let Some(r) = grid.neighbor(l, axis, 1) else { continue };
                    let mut xf = grid.center(l);
                    xf[axis] += 0.5 * h;
                    for (b, pb) in p.iter_mut().enumerate().take(n) {
                        *pb = if b == axis {
                            (u[r] - u[l]) / h
                        } else {
                            let mut g = 0.0;
                            for cell in [l, r] {
                                stencil.clear();
                                grad_stencil(grid, cell, b, 0.5, &mut stencil);
                                g += stencil.iter().map(|&(c, w)| w * u[c]).sum::<f64>();
                            }
                            g
                        };
                    }
                    sf.evaluator.flux(&xf[..n], t, 0.5 * (u[l] + u[r]), &p[..n], &mut flux[..n]);
                    out.push((l, r, axis, flux[axis]));
                }
            }
        }
    }
    out
}

/// Cell sources `ℬ` (or `B·∇u + C u + G`) of a slab.
pub fn cell_sources(spec: &ProblemSpec, u: &[f64], step: usize) -> Vec<f64> {
    let grid = &spec.grid;
    let n = grid.n();
    let mut stencil = Vec::new();
    let mut out = vec![0.0; grid.cell_count()];
    match &spec.coefficients {
        Coefficients::Linear(lc) => {
            for (cell, o) in out.iter_mut().enumerate() {
                let mut v = 0.0;
                if let Some(b) = &lc.drift {
                    stencil.clear();
                    for (axis, bj) in b.iter().enumerate() {
                        grad_stencil(grid, cell, axis, bj.at(cell, step), &mut stencil);
                    }
                    v += stencil.iter().map(|&(c, w)| w * u[c]).sum::<f64>();
                }
                if let Some(c) = &lc.reaction {
                    v += c.at(cell, step) * u[cell];
                }
                if let Some(g) = &lc.source {
                    v += g.at(cell, step);
                }
                *o = v;
            }
        }
        Coefficients::Structure(sf) => {
            let t = grid.time(step);
            let mut p = [0.0; MAX_DIM];
            for (cell, o) in out.iter_mut().enumerate() {
                for (b, pb) in p.iter_mut().enumerate().take(n) {
                    stencil.clear();
                    grad_stencil(grid, cell, b, 1.0, &mut stencil);
                    *pb = stencil.iter().map(|&(c, w)| w * u[c]).sum();
                }
                *o = sf.evaluator.source(&grid.center(cell)[..n], t, u[cell], &p[..n]);
            }
        }
    }
    out
}

struct Cached {
    op: Operator,
    system: CsrMatrix,
}

/// Advances a problem one step at a time; reusable for many initial data on
/// the same operator.
pub struct Stepper<'a> {
    spec: &'a ProblemSpec,
    cfg: SolverConfig,
    unknowns: Vec<usize>,
    index: Vec<Option<usize>>,
    cache: Option<Cached>,
    lap: Option<(CsrMatrix, CsrMatrix)>,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a ProblemSpec, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let grid = &spec.grid;
        let unknowns: Vec<usize> = match spec.boundary {
            Boundary::NoFlux => (0..grid.cell_count()).collect(),
            Boundary::Dirichlet(_) => (0..grid.cell_count()).filter(|&c| !grid.is_boundary_cell(c)).collect(),
        };
        let mut index = vec![None; grid.cell_count()];
        for (k, &c) in unknowns.iter().enumerate() {
            index[c] = Some(k);
        }
        let mut stepper = Self {
            spec,
            cfg: cfg.clone(),
            unknowns,
            index,
            cache: None,
            lap: None,
        };
        match &spec.coefficients {
            Coefficients::Linear(lc) => {
                if lc.is_time_independent() {
                    let op = assemble(lc, grid, 0);
                    let system = stepper.system_matrix(&op.m, cfg.time_scheme_weight * grid.dt());
                    stepper.cache = Some(Cached { op, system });
                }
            }
            Coefficients::Structure(sf) => {
                if cfg.time_scheme_weight != 1.0 {
                    return Err(LabError::Config {
                        path: "solver.time_scheme_weight".into(),
                        reason: "quasilinear problems are stepped fully implicitly (weight 1)".into(),
                    });
                }
                let lap = laplacian(grid);
                let a_ref = 0.5 * (sf.bounds.a + sf.bounds.a_bar);
                let system = stepper.system_matrix(&lap, a_ref * grid.dt());
                stepper.lap = Some((lap, system));
            }
        }
        Ok(stepper)
    }

    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    /// `I − scale · M` restricted to the unknowns.
    fn system_matrix(&self, m: &CsrMatrix, scale: f64) -> CsrMatrix {
        let mut b = CsrBuilder::with_capacity(self.unknowns.len(), m.values.len());
        for &cell in &self.unknowns {
            b.add(self.index[cell].unwrap(), 1.0);
            for k in m.row_ptr[cell]..m.row_ptr[cell + 1] {
                if let Some(j) = self.index[m.col_idx[k]] {
                    b.add(j, -scale * m.values[k]);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    fn boundary_values(&self, step: usize) -> Option<&[f64]> {
        match &self.spec.boundary {
            Boundary::Dirichlet(f) => Some(f.slab(step)),
            Boundary::NoFlux => None,
        }
    }

    fn linear_solve(&self, a: &CsrMatrix, rhs: &[f64], x: &mut [f64], step: usize) -> Result<()> {
        let symmetric = match &self.spec.coefficients {
            Coefficients::Linear(lc) => lc.is_symmetric(),
            Coefficients::Structure(_) => true,
        };
        let (_, stats) = linalg::solve(
            a,
            rhs,
            x,
            self.spec.grid.n() == 1,
            symmetric,
            self.cfg.linear_solver_tol,
            self.cfg.linear_solver_max_iters,
        );
        if !stats.converged || x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::LinearSolver {
                step,
                iterations: stats.iterations,
                residual: stats.residual,
            });
        }
        Ok(())
    }

    /// `u^{k+1}` from `u^k`.
    pub fn advance(&mut self, k: usize, u: &[f64]) -> Result<Vec<f64>> {
        match &self.spec.coefficients {
            Coefficients::Linear(lc) => self.advance_linear(lc, k, u),
            Coefficients::Structure(sf) => self.advance_quasilinear(sf, k, u),
        }
    }

    fn advance_linear(&mut self, lc: &LinearCoefficients, k: usize, u: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.spec.grid;
        let dt = grid.dt();
        let w = self.cfg.time_scheme_weight;
        let cells = grid.cell_count();
        let fresh;
        let (op_new, system, op_old) = match &self.cache {
            Some(c) => (&c.op, &c.system, None),
            None => {
                let op_new = assemble(lc, grid, k + 1);
                let system = self.system_matrix(&op_new.m, w * dt);
                let op_old = if w < 1.0 { Some(assemble(lc, grid, k)) } else { None };
                fresh = (op_new, system, op_old);
                (&fresh.0, &fresh.1, fresh.2.as_ref())
            }
        };
        let mut rhs: Vec<f64> = self.unknowns.iter().map(|&c| u[c]).collect();
        if w < 1.0 {
            let op = op_old.unwrap_or(op_new);
            let mut mu = vec![0.0; cells];
            op.m.mul_vec(u, &mut mu);
            for (r, &c) in rhs.iter_mut().zip(&self.unknowns) {
                *r += dt * (1.0 - w) * (mu[c] + op.s[c]);
            }
        }
        let ub = self.boundary_values(k + 1);
        for (r, &c) in rhs.iter_mut().zip(&self.unknowns) {
            let mut known = op_new.s[c];
            if let Some(ub) = ub {
                for kk in op_new.m.row_ptr[c]..op_new.m.row_ptr[c + 1] {
                    let j = op_new.m.col_idx[kk];
                    if self.index[j].is_none() {
                        known += op_new.m.values[kk] * ub[j];
                    }
                }
            }
            *r += dt * w * known;
        }
        let mut x: Vec<f64> = self.unknowns.iter().map(|&c| u[c]).collect();
        self.linear_solve(system, &rhs, &mut x, k + 1)?;
        let mut out = match ub {
            Some(ub) => ub.to_vec(),
            None => vec![0.0; cells],
        };
        for (v, &c) in x.iter().zip(&self.unknowns) {
            out[c] = *v;
        }
        Ok(out)
    }

    fn advance_quasilinear(&mut self, sf: &StructureFunctions, k: usize, u: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.spec.grid;
        let dt = grid.dt();
        let cells = grid.cell_count();
        let (lap, system) = self.lap.as_ref().expect("quasilinear stepper");
        let a_ref = 0.5 * (sf.bounds.a + sf.bounds.a_bar);
        let t = grid.time(k + 1);
        let mut v = u.to_vec();
        if let Some(ub) = self.boundary_values(k + 1) {
            for c in 0..cells {
                if self.index[c].is_none() {
                    v[c] = ub[c];
                }
            }
        }
        let mut lap_v = vec![0.0; cells];
        let mut prev_inc = f64::INFINITY;
        let mut inc = f64::INFINITY;
        for _ in 0..self.cfg.picard_max_iters {
            let (div, src) = nonlinear_terms(sf, grid, &v, t);
            lap.mul_vec(&v, &mut lap_v);
            let mut rhs = Vec::with_capacity(self.unknowns.len());
            for &c in &self.unknowns {
                let mut known = 0.0;
                for kk in lap.row_ptr[c]..lap.row_ptr[c + 1] {
                    let j = lap.col_idx[kk];
                    if self.index[j].is_none() {
                        known += lap.values[kk] * v[j];
                    }
                }
                rhs.push(u[c] + dt * (div[c] - a_ref * lap_v[c] + src[c]) + dt * a_ref * known);
            }
            let mut x: Vec<f64> = self.unknowns.iter().map(|&c| v[c]).collect();
            self.linear_solve(system, &rhs, &mut x, k + 1)?;
            inc = x
                .iter()
                .zip(&self.unknowns)
                .map(|(xn, &c)| (xn - v[c]).abs())
                .fold(0.0, f64::max);
            let damp = if inc > prev_inc { 0.5 } else { 1.0 };
            for (xn, &c) in x.iter().zip(&self.unknowns) {
                v[c] += damp * (xn - v[c]);
            }
            if !inc.is_finite() {
                break;
            }
            if inc <= self.cfg.picard_tol {
                return Ok(v);
            }
            prev_inc = inc;
        }
        Err(LabError::PicardDivergence {
            step: k + 1,
            iterations: self.cfg.picard_max_iters,
            increment: inc,
        })
    }
}

/// Checks the solver preconditions (ellipticity or structure on a probe cloud).
pub fn check_preconditions(spec: &ProblemSpec) -> Result<()> {
    match &spec.coefficients {
        Coefficients::Linear(lc) => {
            ellipticity_check(lc)?;
        }
        Coefficients::Structure(sf) => {
            let u_max = spec.initial.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
            let p_max = 2.0 * u_max / spec.grid.h();
            let rep = verify_structure(sf, &probe_samples(&spec.grid, 256, u_max, p_max, 0));
            if !rep.passes {
                let v = &rep.violations[0];
                return Err(LabError::Structure {
                    coefficient: format!("{:?}", v.inequality),
                    reason: format!("violated at probe sample {} (slack {:.3e})", v.sample, v.slack),
                });
            }
        }
    }
    Ok(())
}

/// Runs the time stepper over the whole interval.
pub fn solve(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<SolutionField> {
    check_preconditions(spec)?;
    let grid = &spec.grid;
    let mut stepper = Stepper::new(spec, cfg)?;
    let cells = grid.cell_count();
    let mut values = Vec::with_capacity(grid.steps() * cells);
    values.extend_from_slice(spec.initial.slab(0));
    for k in 0..grid.nt() {
        let next = stepper.advance(k, &values[k * cells..(k + 1) * cells])?;
        values.extend_from_slice(&next);
    }
    let field = Field::from_values(grid, grid.steps(), values)?;
    if !field.all_finite() {
        return Err(LabError::LinearSolver {
            step: grid.nt(),
            iterations: 0,
            residual: f64::NAN,
        });
    }
    Ok(SolutionField::new(field, spec.hash(), cfg.hash()))
}

/// Midpoint-rule `∫_Ω u dx` per step.
pub fn mass_balance(u: &SolutionField) -> Vec<f64> {
    (0..u.grid().steps()).map(|s| u.field.integral(s)).collect()
}

/// Tensor-product bump `Π β((x_i − c_i)/r) · β((t − t_c)/r_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_center: f64,
    pub t_radius: f64,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let s: f64 = self
            .center
            .iter()
            .zip(x)
            .map(|(c, xi)| bump((xi - c) / self.radius))
            .product();
        s * bump((t - self.t_center) / self.t_radius)
    }

    pub fn d_dx(&self, x: &[f64], t: f64, axis: usize) -> f64 {
        let mut s = 1.0;
        for (i, (c, xi)) in self.center.iter().zip(x).enumerate() {
            let z = (xi - c) / self.radius;
            s *= if i == axis { bump_derivative(z) / self.radius } else { bump(z) };
        }
        s * bump((t - self.t_center) / self.t_radius)
    }

    /// Support stays at least one cell away from `∂Ω` and one step away from
    /// `t = 0` and `t = T`.
    pub fn check_support(&self, grid: &SpaceTimeGrid) -> Result<()> {
        let h = grid.h();
        if self.center.len() != grid.n() || !(self.radius > 0.0) || !(self.t_radius > 0.0) {
            return Err(LabError::Precondition("malformed test function".into()));
        }
        for a in 0..grid.n() {
            if self.center[a] - self.radius < grid.lower()[a] + h - 1e-12
                || self.center[a] + self.radius > grid.upper()[a] - h + 1e-12
            {
                return Err(LabError::Precondition(format!(
                    "test function support reaches within one cell of the boundary along x{a}"
                )));
            }
        }
        if self.t_center - self.t_radius < grid.dt() - 1e-12 || self.t_center + self.t_radius > grid.t_final() - grid.dt() + 1e-12 {
            return Err(LabError::Precondition(
                "test function support must stay away from t = 0 and t = T".into(),
            ));
        }
        Ok(())
    }
}

/// A deterministic family of bumps filling the interior of `Q`.
pub fn default_test_functions(grid: &SpaceTimeGrid) -> Vec<TestFunction> {
    let n = grid.n();
    let mut out = Vec::new();
    let t_r = 0.25 * grid.t_final();
    for shift in [-0.15, 0.0, 0.15] {
        let center: Vec<f64> = (0..n)
            .map(|a| {
                let mid = 0.5 * (grid.lower()[a] + grid.upper()[a]);
                mid + shift * (grid.upper()[a] - grid.lower()[a]) * if a == 0 { 1.0 } else { 0.0 }
            })
            .collect();
        let radius = (0..n)
            .map(|a| 0.25 * (grid.upper()[a] - grid.lower()[a]))
            .fold(f64::INFINITY, f64::min);
        for tc in [0.4, 0.6] {
            out.push(TestFunction {
                center: center.clone(),
                radius,
                t_center: tc * grid.t_final(),
                t_radius: t_r,
            });
        }
    }
    out
}

/// Normalized weak-form residual of `u` for each test function:
/// `|∬ −uφ_t + φ_x·𝒜 − φℬ|` over the sum of the absolute summands.
/// Time derivatives of φ are backward differences paired with `u^k`, and
/// `φ_x` is differenced across each face so a constant flux integrates to zero.
pub fn weak_residual(u: &SolutionField, spec: &ProblemSpec, phis: &[TestFunction]) -> Result<Vec<f64>> {
    let grid = &spec.grid;
    if u.grid() != grid {
        return Err(LabError::Precondition("solution grid does not match the problem".into()));
    }
    for phi in phis {
        phi.check_support(grid)?;
    }
    let cells = grid.cell_count();
    let vol = grid.cell_volume();
    let dt = grid.dt();
    let h = grid.h();
    let mut sums = vec![0.0; phis.len()];
    let mut scales = vec![0.0; phis.len()];
    for k in 1..grid.steps() {
        let t = grid.time(k);
        let t_prev = grid.time(k - 1);
        let slab = u.field.slab(k);
        let fluxes = face_fluxes(spec, slab, k);
        let sources = cell_sources(spec, slab, k);
        for (i, phi) in phis.iter().enumerate() {
            let (mut s, mut sc) = (0.0, 0.0);
            if (t - phi.t_center).abs() >= phi.t_radius + dt && (t_prev - phi.t_center).abs() >= phi.t_radius + dt {
                continue;
            }
            let mut phi_now = vec![0.0; cells];
            for c in 0..cells {
                let x = grid.center(c);
                let x = &x[..grid.n()];
                phi_now[c] = phi.eval(x, t);
                let time_term = -slab[c] * (phi_now[c] - phi.eval(x, t_prev)) * vol;
                let src_term = -dt * phi_now[c] * sources[c] * vol;
                s += time_term + src_term;
                sc += time_term.abs() + src_term.abs();
            }
            for &(l, r, _, f) in &fluxes {
                let dphi = (phi_now[r] - phi_now[l]) / h;
                let term = dt * dphi * f * vol;
                s += term;
                sc += term.abs();
            }
            sums[i] += s;
            scales[i] += sc;
        }
    }
    Ok(sums
        .iter()
        .zip(&scales)
        .map(|(s, sc)| if *sc > 0.0 { s.abs() / sc } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::AnalyticFn;
    use crate::families;
    use crate::grid::parabolic_boundary;
    use proptest::prelude::*;

    fn sine_problem(h: f64, dt: f64, weight: f64) -> (ProblemSpec, SolverConfig) {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], h, 0.1, dt).unwrap();
        let exact = AnalyticFn::HeatSine {
            amplitude: 1.0,
            wavenumbers: vec![1.0],
            alpha: 1.0,
        };
        let spec = ProblemSpec::linear(
            LinearCoefficients::heat(&g, 1.0),
            exact.initial_field(&g),
            Boundary::Dirichlet(exact.field(&g)),
        )
        .unwrap();
        let cfg = SolverConfig {
            time_scheme_weight: weight,
            ..SolverConfig::default()
        };
        (spec, cfg)
    }

    fn sup_error(u: &SolutionField) -> f64 {
        let g = u.grid();
        let mut e: f64 = 0.0;
        for s in 0..g.steps() {
            for c in 0..g.cell_count() {
                let x = g.center(c)[0];
                let ex = (-std::f64::consts::PI.powi(2) * g.time(s)).exp() * (std::f64::consts::PI * x).sin();
                e = e.max((u.at(c, s) - ex).abs());
            }
        }
        e
    }

    #[test]
    fn heat_sine_converges() {
        let mut errs = Vec::new();
        for k in [32.0, 64.0, 128.0] {
            let (spec, cfg) = sine_problem(1.0 / k, 0.1 / k, 1.0);
            errs.push(sup_error(&solve(&spec, &cfg).unwrap()));
        }
        assert!(errs[0] / errs[1] > 1.7 && errs[1] / errs[2] > 1.7, "{errs:?}");
        let (spec, cfg) = sine_problem(1.0 / 64.0, 1.0 / 1280.0, 0.5);
        assert!(sup_error(&solve(&spec, &cfg).unwrap()) < 1e-4);
    }

    #[test]
    fn constants_preserved_no_flux() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.0625, 0.25, 1.0 / 64.0).unwrap();
        let lc = LinearCoefficients::isotropic(families::checkerboard(&g, 10.0, 0.25), 1.0);
        let spec = ProblemSpec::linear(lc, Field::constant(&g, 1.0), Boundary::NoFlux).unwrap();
        let u = solve(&spec, &SolverConfig::default()).unwrap();
        assert!(u.field.values().iter().all(|v| (v - 1.0).abs() < 1e-11));
    }

    #[test]
    fn mass_conserved_and_dissipated() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.0625, 0.25, 1.0 / 64.0).unwrap();
        let lc = LinearCoefficients::isotropic(families::checkerboard(&g, 10.0, 0.25), 1.0);
        let bump = AnalyticFn::Bump {
            amplitude: 1.0,
            center: vec![0.4, 0.55],
            radius: 0.3,
        };
        let spec = ProblemSpec::linear(lc.clone(), bump.initial_field(&g), Boundary::NoFlux).unwrap();
        let m = mass_balance(&solve(&spec, &SolverConfig::default()).unwrap());
        for v in &m {
            assert!((v - m[0]).abs() <= 1e-12 * m[0].abs(), "{v} vs {}", m[0]);
        }
        let spec = ProblemSpec::linear(lc.clone(), bump.initial_field(&g), Boundary::Dirichlet(Field::zeros(&g))).unwrap();
        let m = mass_balance(&solve(&spec, &SolverConfig::default()).unwrap());
        assert!(m.windows(2).all(|w| w[1] < w[0]));
        let mut decay = lc;
        decay.reaction = Some(Field::constant(&g, -1.0));
        let spec = ProblemSpec::linear(decay, bump.initial_field(&g), Boundary::NoFlux).unwrap();
        let m = mass_balance(&solve(&spec, &SolverConfig::default()).unwrap());
        assert!(m.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn weak_residual_examples() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 32.0, 0.5, 1.0 / 64.0).unwrap();
        let lin = AnalyticFn::Linear {
            offset: 0.0,
            coeffs: vec![1.0],
        };
        let spec = ProblemSpec::linear(
            LinearCoefficients::heat(&g, 1.0),
            lin.initial_field(&g),
            Boundary::Dirichlet(lin.field(&g)),
        )
        .unwrap();
        let u = solve(&spec, &SolverConfig::default()).unwrap();
        let phis = default_test_functions(&g);
        let r = weak_residual(&u, &spec, &phis).unwrap();
        assert!(r.iter().all(|v| *v < 1e-12), "{r:?}");

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..g.steps() * g.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise = SolutionField::new(Field::from_values(&g, g.steps(), noise).unwrap(), "", "");
        let r = weak_residual(&noise, &spec, &phis).unwrap();
        assert!(r.iter().all(|v| *v > 1e-2), "{r:?}");

        let bad = TestFunction {
            center: vec![0.1],
            radius: 0.1,
            t_center: 0.25,
            t_radius: 0.1,
        };
        assert!(matches!(weak_residual(&u, &spec, &[bad]), Err(LabError::Precondition(_))));
    }

    #[test]
    fn weak_residual_decreases_under_refinement() {
        let mut res = Vec::new();
        for k in [16.0, 32.0, 64.0] {
            let (spec, cfg) = sine_problem(1.0 / k, 0.1 / k, 1.0);
            let u = solve(&spec, &cfg).unwrap();
            let phi = TestFunction {
                center: vec![0.5],
                radius: 0.3,
                t_center: 0.05,
                t_radius: 0.03,
            };
            res.push(weak_residual(&u, &spec, &[phi]).unwrap()[0]);
        }
        assert!(res[2] < res[1] && res[1] < res[0], "{res:?}");
    }

    #[test]
    fn discrete_maximum_principle_checkerboard() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.0625, 0.25, 1.0 / 64.0).unwrap();
        let lc = LinearCoefficients::isotropic(families::checkerboard(&g, 100.0, 0.25), 1.0);
        let init = AnalyticFn::Sine {
            amplitude: 1.0,
            wavenumbers: vec![3.0, 2.0],
        };
        let bc = AnalyticFn::Linear {
            offset: 0.2,
            coeffs: vec![0.3, -0.4],
        };
        let spec = ProblemSpec::linear(lc, init.initial_field(&g), Boundary::Dirichlet(bc.field(&g))).unwrap();
        let u = solve(&spec, &SolverConfig::default()).unwrap();
        let gamma = parabolic_boundary(&g);
        let m = u.field.max_on(&gamma);
        assert!(u.field.max() <= m + 1e-10);
    }

    #[test]
    fn nonsymmetric_lower_order_terms_run() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.0625, 0.125, 1.0 / 64.0).unwrap();
        let mut lc = LinearCoefficients::isotropic(families::random_piecewise(&g, 3, 20.0, 0.25), 1.0);
        lc.drift = Some(vec![Field::constant(&g, 1.0), Field::constant(&g, -0.5)]);
        lc.drift_flux = Some(vec![Field::constant(&g, 0.3), Field::constant(&g, 0.0)]);
        lc.diffusion = crate::structure::Diffusion::Full(vec![
            families::random_piecewise(&g, 3, 20.0, 0.25),
            Field::constant(&g, 0.2),
            Field::constant(&g, 0.2),
            Field::constant(&g, 1.0),
        ]);
        let spec = ProblemSpec::linear(lc, Field::constant(&g, 1.0), Boundary::Dirichlet(Field::constant(&g, 1.0))).unwrap();
        let u = solve(&spec, &SolverConfig::default()).unwrap();
        assert!(u.field.all_finite());
    }

    #[test]
    fn quasilinear_matches_linear_when_structure_is_linear() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 32.0, 0.1, 1.0 / 320.0).unwrap();
        let mut lc = LinearCoefficients::heat(&g, 2.0);
        lc.reaction = Some(Field::constant(&g, -1.0));
        let init = AnalyticFn::Sine {
            amplitude: 1.0,
            wavenumbers: vec![1.0],
        }
        .initial_field(&g);
        let lin = ProblemSpec::linear(lc.clone(), init.clone(), Boundary::NoFlux).unwrap();
        let ul = solve(&lin, &SolverConfig::default()).unwrap();
        let sf = crate::structure::linear_structure(&lc, 0.01).unwrap();
        let q = ProblemSpec::quasilinear(sf, &g, init, Boundary::NoFlux).unwrap();
        let uq = solve(&q, &SolverConfig::default()).unwrap();
        let diff = ul
            .field
            .values()
            .iter()
            .zip(uq.field.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-7, "{diff}");
    }

    #[test]
    fn quasilinear_bounded_sine() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.0625, 0.1, 0.0025).unwrap();
        let sf = crate::structure::bounded_sine_structure(families::checkerboard(&g, 2.0, 0.25), 5.0).unwrap();
        let init = AnalyticFn::Bump {
            amplitude: 2.0,
            center: vec![0.5, 0.5],
            radius: 0.4,
        };
        let spec = ProblemSpec::quasilinear(sf, &g, init.initial_field(&g), Boundary::Dirichlet(Field::zeros(&g))).unwrap();
        let u = solve(&spec, &SolverConfig::default()).unwrap();
        let r = weak_residual(&u, &spec, &default_test_functions(&g)).unwrap();
        assert!(r.iter().all(|v| *v < 0.05), "{r:?}");
    }

    #[test]
    fn picard_failure_reports_step() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 16.0, 0.1, 0.05).unwrap();
        let sf = crate::structure::bounded_sine_structure(Field::constant(&g, 0.0), 1.0).unwrap();
        let init = AnalyticFn::Sine {
            amplitude: 3.0,
            wavenumbers: vec![1.0],
        };
        let spec = ProblemSpec::quasilinear(sf, &g, init.initial_field(&g), Boundary::NoFlux).unwrap();
        let cfg = SolverConfig {
            picard_max_iters: 1,
            ..SolverConfig::default()
        };
        match solve(&spec, &cfg) {
            Err(LabError::PicardDivergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn comparison_principle(seed in 0u64..1000, contrast in 1.0f64..50.0) {
            use rand::{Rng, SeedableRng};
            let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 32.0, 0.05, 1.0 / 200.0).unwrap();
            let lc = LinearCoefficients::isotropic(families::random_piecewise(&g, seed, contrast, 0.125), 1.0);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..g.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
            let bc = Boundary::Dirichlet(Field::constant(&g, 0.0));
            let mk = |v: Vec<f64>| {
                let mut v = v;
                for (c, x) in v.iter_mut().enumerate() {
                    if g.is_boundary_cell(c) { *x = 0.0; }
                }
                Field::from_values(&g, 1, v).unwrap()
            };
            let ua = solve(&ProblemSpec::linear(lc.clone(), mk(a), bc.clone()).unwrap(), &SolverConfig::default()).unwrap();
            let ub = solve(&ProblemSpec::linear(lc, mk(b), bc).unwrap(), &SolverConfig::default()).unwrap();
            for (x, y) in ua.field.values().iter().zip(ub.field.values()) {
                prop_assert!(x <= &(y + 1e-12));
            }
        }

        #[test]
        fn maximum_principle_random(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.125, 0.1, 0.02).unwrap();
            let lc = LinearCoefficients::isotropic(families::random_piecewise(&g, seed, 100.0, 0.25), 1.0);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let init: Vec<f64> = (0..g.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bc: Vec<f64> = (0..g.cell_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let spec = ProblemSpec::linear(
                lc,
                Field::from_values(&g, 1, init).unwrap(),
                Boundary::Dirichlet(Field::from_values(&g, 1, bc).unwrap()),
            ).unwrap();
            let u = solve(&spec, &SolverConfig::default()).unwrap();
            let m = u.field.max_on(&parabolic_boundary(&g));
            prop_assert!(u.field.max() <= m + 1e-10);
        }
    }
}
