//! Coefficient fields, mixed space-time Lebesgue norms, the integrability
//! exponents of the structure coefficients and the structure inequalities
//! relating `𝒜`, `ℬ` to `a`, `ā` and the coefficients `b, …, h`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};
use crate::field::Field;
use crate::grid::{CellSet, SpaceTimeGrid, MAX_DIM};

/// Cap applied to θ when every integrability constraint is slack.
pub const THETA_CAP: f64 = 0.99;

/// Names of the structure coefficients `b, c, d, e, f, g, h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coef {
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Coef {
    pub const ALL: [Coef; 7] = [Coef::B, Coef::C, Coef::D, Coef::E, Coef::F, Coef::G, Coef::H];

    /// `d` and `g` multiply zero-order quantities; the rest first-order ones.
    pub fn kind(self) -> PairKind {
        match self {
            Coef::D | Coef::G => PairKind::ZeroOrder,
            _ => PairKind::FirstOrder,
        }
    }
}

impl fmt::Display for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Coef::B => "b",
            Coef::C => "c",
            Coef::D => "d",
            Coef::E => "e",
            Coef::F => "f",
            Coef::G => "g",
            Coef::H => "h",
        };
        f.write_str(s)
    }
}

/// Serde helper: exponents are numbers, with `"inf"` standing for ∞.
pub mod exponent_serde {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Governs `b, c, e, f, h`: `p > 2`, `n/(2p) + 1/q < 1/2`.
    FirstOrder,
    /// Governs `d, g`: `p > 1`, `n/(2p) + 1/q < 1`.
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    #[serde(with = "exponent_serde")]
    pub p: f64,
    #[serde(with = "exponent_serde")]
    pub q: f64,
    pub kind: PairKind,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64, kind: PairKind) -> Self {
        Self { p, q, kind }
    }

    pub fn bounded(kind: PairKind) -> Self {
        Self::new(f64::INFINITY, f64::INFINITY, kind)
    }

    fn scaling_sum(&self, n: usize) -> f64 {
        n as f64 / (2.0 * self.p) + 1.0 / self.q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub pass: bool,
    /// `1/2 − (n/(2p)+1/q)` or `1 − (n/(2p)+1/q)` depending on the kind.
    pub margin: f64,
    pub reason: Option<String>,
}

pub fn check_exponent_pair(pair: &ExponentPair, n: usize) -> PairCheck {
    let sum = pair.scaling_sum(n);
    let (p_min, bound, label) = match pair.kind {
        PairKind::FirstOrder => (2.0, 0.5, "first-order integrability"),
        PairKind::ZeroOrder => (1.0, 1.0, "zero-order integrability"),
    };
    let margin = bound - sum;
    let mut reasons = Vec::new();
    if pair.p < 1.0 || pair.q < 1.0 {
        reasons.push("exponents must be >= 1".to_string());
    }
    if !(pair.p > p_min) {
        reasons.push(format!("{label} requires p > {p_min}, got p = {}", fmt_exp(pair.p)));
    }
    if !(margin > 0.0) {
        reasons.push(format!(
            "{label} requires n/(2p) + 1/q < {bound}, got {sum} (n = {n}, p = {}, q = {})",
            fmt_exp(pair.p),
            fmt_exp(pair.q)
        ));
    }
    PairCheck {
        pass: reasons.is_empty(),
        margin,
        reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
    }
}

fn fmt_exp(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x}")
    }
}

/// Largest θ ∈ (0, 1) satisfying the relaxed integrability conditions of all
/// pairs, capped at [`THETA_CAP`].
pub fn compute_theta(pairs: &[(Coef, ExponentPair)], n: usize) -> Result<f64> {
    let mut theta = 1.0f64;
    for (coef, pair) in pairs {
        let check = check_exponent_pair(pair, n);
        if !check.pass {
            return Err(LabError::Structure {
                coefficient: coef.to_string(),
                reason: check.reason.unwrap_or_default(),
            });
        }
        let sum = pair.scaling_sum(n);
        let t = match pair.kind {
            PairKind::FirstOrder => (1.0 - 2.0 / pair.p).min(1.0 - 2.0 * sum),
            PairKind::ZeroOrder => (1.0 - 1.0 / pair.p).min(1.0 - sum),
        };
        if !(t > 0.0) {
            return Err(LabError::Structure {
                coefficient: coef.to_string(),
                reason: "exponent pair leaves no positive theta".into(),
            });
        }
        theta = theta.min(t);
    }
    Ok(theta.min(THETA_CAP))
}

/// All space-time cells of `Q` used for norms: every cell at steps `1..=nt`.
pub fn whole_domain(grid: &SpaceTimeGrid) -> CellSet {
    let mut set = CellSet::empty(grid);
    for step in 1..grid.steps() {
        for c in 0..grid.cell_count() {
            set.insert(c, step);
        }
    }
    set
}

/// `‖w‖_{p,q}` over `Q` by the midpoint rule.
pub fn bochner_norm(w: &Field, p: f64, q: f64) -> f64 {
    bochner_norm_on(w, &whole_domain(w.grid()), p, q)
}

/// `‖w‖_{p,q}` restricted to a cell set (e.g. a materialized cylinder).
pub fn bochner_norm_on(w: &Field, set: &CellSet, p: f64, q: f64) -> f64 {
    let grid = w.grid();
    let vol = grid.cell_volume();
    let mut per_step: BTreeMap<usize, f64> = BTreeMap::new();
    for (cell, step) in set.iter() {
        let v = w.at(cell, step).abs();
        let e = per_step.entry(step).or_insert(0.0);
        if p.is_infinite() {
            *e = e.max(v);
        } else {
            *e += v.powf(p) * vol;
        }
    }
    let spatial = per_step.values().map(|&s| if p.is_infinite() { s } else { s.powf(1.0 / p) });
    if q.is_infinite() {
        spatial.fold(0.0, f64::max)
    } else {
        (spatial.map(|s| s.powf(q)).sum::<f64>() * grid.dt()).powf(1.0 / q)
    }
}

/// Supremum of `‖w‖_{p,q}` over cylinders `Q(σ)`, `σ = min(1, √T)`, whose
/// centers run over every cell center and time level that keeps the cylinder
/// inside the computational box.
pub fn sup_norm_over_strip(w: &Field, p: f64, q: f64) -> f64 {
    let grid = w.grid();
    let sigma = grid.t_final().sqrt().min(1.0);
    let n = grid.n();
    let h = grid.h();
    let cells = grid.cell_count();
    // cells whose centers satisfy |j| h < σ/2
    let ratio = sigma / (2.0 * h);
    let half = (ratio.ceil() as usize).saturating_sub(1);
    let valid_center = |cell: usize| {
        let x = grid.center(cell);
        (0..n).all(|a| {
            x[a] - 0.5 * sigma >= grid.lower()[a] - 1e-12 && x[a] + 0.5 * sigma <= grid.upper()[a] + 1e-12
        })
    };
    let centers: Vec<usize> = (0..cells).filter(|&c| valid_center(c)).collect();
    if centers.is_empty() {
        return 0.0;
    }
    // spatial norms per (step, center), using separable window passes
    let mut spatial = vec![0.0; grid.steps() * cells];
    for step in 0..grid.steps() {
        let mut buf: Vec<f64> = (0..cells)
            .map(|c| {
                let v = w.at(c, step).abs();
                if p.is_infinite() {
                    v
                } else {
                    v.powf(p)
                }
            })
            .collect();
        for axis in 0..n {
            let mut next = vec![0.0; cells];
            for (c, slot) in next.iter_mut().enumerate() {
                let idx = grid.multi_index(c);
                let lo = idx[axis].saturating_sub(half);
                let hi = (idx[axis] + half).min(grid.dims()[axis] - 1);
                let stride = grid.stride(axis);
                let base = c - idx[axis] * stride;
                let mut acc: f64 = 0.0;
                for j in lo..=hi {
                    let v = buf[base + j * stride];
                    if p.is_infinite() {
                        acc = acc.max(v);
                    } else {
                        acc += v;
                    }
                }
                *slot = acc;
            }
            buf = next;
        }
        for c in 0..cells {
            spatial[step * cells + c] = if p.is_infinite() {
                buf[c]
            } else {
                (buf[c] * grid.cell_volume()).powf(1.0 / p)
            };
        }
    }
    let window = sigma * sigma;
    let mut best: f64 = 0.0;
    for step in 0..grid.steps() {
        let t = grid.time(step);
        if t - window < -1e-12 {
            continue;
        }
        let first = (0..=step)
            .find(|&k| grid.time(k) > t - window + 1e-12 * grid.dt())
            .unwrap_or(step);
        for &c in &centers {
            let val = if q.is_infinite() {
                (first..=step).map(|k| spatial[k * cells + c]).fold(0.0, f64::max)
            } else {
                ((first..=step).map(|k| spatial[k * cells + c].powf(q)).sum::<f64>() * grid.dt()).powf(1.0 / q)
            };
            best = best.max(val);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientNorm {
    pub value: f64,
    pub pair: ExponentPair,
}

/// The quantities a "structural" constant may depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureBounds {
    pub a: f64,
    pub a_bar: f64,
    pub norms: BTreeMap<Coef, CoefficientNorm>,
    pub theta: f64,
    pub n: usize,
    pub t_final: f64,
    pub omega_volume: f64,
}

impl StructureBounds {
    pub fn new(
        a: f64,
        a_bar: f64,
        norms: BTreeMap<Coef, CoefficientNorm>,
        n: usize,
        t_final: f64,
        omega_volume: f64,
    ) -> Result<Self> {
        if !(a > 0.0) {
            return Err(LabError::Structure {
                coefficient: "a".into(),
                reason: format!("ellipticity constant must be positive, got {a}"),
            });
        }
        if !(a_bar > 0.0) {
            return Err(LabError::Structure {
                coefficient: "a_bar".into(),
                reason: format!("growth constant must be positive, got {a_bar}"),
            });
        }
        for (coef, norm) in &norms {
            if norm.pair.kind != coef.kind() {
                return Err(LabError::Structure {
                    coefficient: coef.to_string(),
                    reason: "exponent pair kind does not match the coefficient".into(),
                });
            }
            if !(norm.value >= 0.0) {
                return Err(LabError::Structure {
                    coefficient: coef.to_string(),
                    reason: format!("norm must be non-negative, got {}", norm.value),
                });
            }
        }
        let pairs: Vec<(Coef, ExponentPair)> = norms.iter().map(|(c, v)| (*c, v.pair)).collect();
        let theta = compute_theta(&pairs, n)?;
        Ok(Self {
            a,
            a_bar,
            norms,
            theta,
            n,
            t_final,
            omega_volume,
        })
    }

    /// Bounds for the pure heat-type equation with all of `b, …, h` zero.
    pub fn homogeneous(a: f64, a_bar: f64, grid: &SpaceTimeGrid) -> Self {
        Self::new(a, a_bar, BTreeMap::new(), grid.n(), grid.t_final(), grid.omega_volume())
            .expect("positive constants")
    }

    /// Computes each coefficient's norm from its field with the given pairs
    /// (default `(∞, ∞)`).
    pub fn from_fields(
        a: f64,
        a_bar: f64,
        coefficients: &StructureCoefficients,
        pairs: &BTreeMap<Coef, ExponentPair>,
        grid: &SpaceTimeGrid,
    ) -> Result<Self> {
        let mut norms = BTreeMap::new();
        for (coef, field) in &coefficients.fields {
            let pair = pairs.get(coef).copied().unwrap_or(ExponentPair::bounded(coef.kind()));
            norms.insert(
                *coef,
                CoefficientNorm {
                    value: bochner_norm(field, pair.p, pair.q),
                    pair,
                },
            );
        }
        Self::new(a, a_bar, norms, grid.n(), grid.t_final(), grid.omega_volume())
    }

    pub fn norm(&self, coef: Coef) -> f64 {
        self.norms.get(&coef).map(|n| n.value).unwrap_or(0.0)
    }

    /// `‖f‖ + ‖g‖ + ‖h‖`
    pub fn k_local(&self) -> f64 {
        self.norm(Coef::F) + self.norm(Coef::G) + self.norm(Coef::H)
    }

    /// `(‖b‖ + ‖d‖)|M| + (‖f‖ + ‖g‖)`
    pub fn k_max_principle(&self, m: f64) -> f64 {
        (self.norm(Coef::B) + self.norm(Coef::D)) * m.abs() + self.norm(Coef::F) + self.norm(Coef::G)
    }
}

/// The non-negative coefficient fields `b, …, h`; absent entries are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureCoefficients {
    pub fields: BTreeMap<Coef, Field>,
}

impl StructureCoefficients {
    pub fn insert(&mut self, coef: Coef, field: Field) -> Result<()> {
        if !field.all_finite() || field.min() < 0.0 {
            return Err(LabError::Structure {
                coefficient: coef.to_string(),
                reason: "coefficient fields must be finite and non-negative".into(),
            });
        }
        self.fields.insert(coef, field);
        Ok(())
    }

    pub fn at(&self, coef: Coef, cell: usize, step: usize) -> f64 {
        self.fields.get(&coef).map(|f| f.at(cell, step)).unwrap_or(0.0)
    }

    pub fn sample(&self, coef: Coef, x: &[f64], t: f64) -> f64 {
        self.fields.get(&coef).and_then(|f| f.sample(x, t)).unwrap_or(0.0)
    }

    pub fn is_zero(&self, coef: Coef) -> bool {
        self.fields.get(&coef).map(|f| f.max() <= 0.0).unwrap_or(true)
    }
}

/// Principal part of a linear equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion {
    Isotropic(Field),
    Diagonal(Vec<Field>),
    /// Row-major `n × n` tensor entries.
    Full(Vec<Field>),
}

/// Coefficients of `u_t = {A_ij u_{x_i} + A_j u + F_j}_{x_j} + B_j u_{x_j} + C u + G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients {
    pub n: usize,
    pub diffusion: Diffusion,
    /// `A_j`
    pub drift_flux: Option<Vec<Field>>,
    /// `B_j`
    pub drift: Option<Vec<Field>>,
    /// `C`
    pub reaction: Option<Field>,
    /// `F_j`
    pub flux_source: Option<Vec<Field>>,
    /// `G`
    pub source: Option<Field>,
    /// Declared ellipticity ν.
    pub nu: f64,
}

impl LinearCoefficients {
    pub fn isotropic(a: Field, nu: f64) -> Self {
        let n = a.grid().n();
        Self {
            n,
            diffusion: Diffusion::Isotropic(a),
            drift_flux: None,
            drift: None,
            reaction: None,
            flux_source: None,
            source: None,
            nu,
        }
    }

    pub fn heat(grid: &SpaceTimeGrid, alpha: f64) -> Self {
        Self::isotropic(Field::constant(grid, alpha), alpha)
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        match &self.diffusion {
            Diffusion::Isotropic(f) => f.grid(),
            Diffusion::Diagonal(v) | Diffusion::Full(v) => v[0].grid(),
        }
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize, cell: usize, step: usize) -> f64 {
        match &self.diffusion {
            Diffusion::Isotropic(f) => {
                if i == j {
                    f.at(cell, step)
                } else {
                    0.0
                }
            }
            Diffusion::Diagonal(v) => {
                if i == j {
                    v[i].at(cell, step)
                } else {
                    0.0
                }
            }
            Diffusion::Full(v) => v[i * self.n + j].at(cell, step),
        }
    }

    pub fn has_cross_terms(&self) -> bool {
        match &self.diffusion {
            Diffusion::Full(v) => (0..self.n)
                .flat_map(|i| (0..self.n).map(move |j| (i, j)))
                .any(|(i, j)| i != j && (v[i * self.n + j].max() != 0.0 || v[i * self.n + j].min() != 0.0)),
            _ => false,
        }
    }

    fn all_fields(&self) -> Vec<&Field> {
        let mut out: Vec<&Field> = match &self.diffusion {
            Diffusion::Isotropic(f) => vec![f],
            Diffusion::Diagonal(v) | Diffusion::Full(v) => v.iter().collect(),
        };
        for v in [&self.drift_flux, &self.drift, &self.flux_source].into_iter().flatten() {
            out.extend(v.iter());
        }
        out.extend(self.reaction.iter());
        out.extend(self.source.iter());
        out
    }

    pub fn is_time_independent(&self) -> bool {
        self.all_fields().iter().all(|f| f.is_static())
    }

    /// `F_j = G = 0`.
    pub fn is_homogeneous(&self) -> bool {
        self.flux_source.is_none() && self.source.is_none()
    }

    /// `A_j = B_j = C = 0` (mass-conserving with no-flux walls).
    pub fn is_conservation_form(&self) -> bool {
        self.drift_flux.is_none() && self.drift.is_none() && self.reaction.is_none()
    }

    /// The assembled operator is symmetric: pure divergence form without cross terms.
    pub fn is_symmetric(&self) -> bool {
        self.drift_flux.is_none() && self.drift.is_none() && !self.has_cross_terms()
    }

    pub fn validate_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.all_fields().iter().any(|f| f.grid() != grid) {
            return Err(LabError::Precondition(
                "coefficient grid does not match the problem grid".into(),
            ));
        }
        let vec_ok = |v: &Option<Vec<Field>>| v.as_ref().map(|v| v.len() == self.n).unwrap_or(true);
        let diff_ok = match &self.diffusion {
            Diffusion::Isotropic(_) => true,
            Diffusion::Diagonal(v) => v.len() == self.n,
            Diffusion::Full(v) => v.len() == self.n * self.n,
        };
        if !(diff_ok && vec_ok(&self.drift_flux) && vec_ok(&self.drift) && vec_ok(&self.flux_source)) {
            return Err(LabError::Precondition("coefficient vector lengths do not match n".into()));
        }
        Ok(())
    }

    /// Smallest and largest eigenvalue of the symmetrized tensor at a sample.
    pub fn eigen_range(&self, cell: usize, step: usize) -> (f64, f64) {
        let n = self.n;
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in m.iter_mut().enumerate().take(n) {
            for (j, entry) in row.iter_mut().enumerate().take(n) {
                *entry = 0.5 * (self.a(i, j, cell, step) + self.a(j, i, cell, step));
            }
        }
        symmetric_eigen_range(&m, n)
    }
}

fn symmetric_eigen_range(m: &[[f64; MAX_DIM]; MAX_DIM], n: usize) -> (f64, f64) {
    match n {
        1 => (m[0][0], m[0][0]),
        2 => {
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            (0.5 * tr - disc, 0.5 * tr + disc)
        }
        _ => {
            // trigonometric solution of the symmetric 3×3 eigenproblem
            let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
            if p1 == 0.0 {
                let d = [m[0][0], m[1][1], m[2][2]];
                return (d.iter().copied().fold(f64::INFINITY, f64::min), d.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
            let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let mut b = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
                }
            }
            let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            (e3, e1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub nu_empirical: f64,
    pub nu_declared: f64,
    pub passes: bool,
}

/// Minimum over all samples of the smallest eigenvalue of the symmetrized
/// principal tensor.
pub fn ellipticity_check(lc: &LinearCoefficients) -> Result<EllipticityReport> {
    let grid = lc.grid();
    let slabs = match &lc.diffusion {
        Diffusion::Isotropic(f) => f.slabs(),
        Diffusion::Diagonal(v) | Diffusion::Full(v) => v.iter().map(|f| f.slabs()).max().unwrap_or(1),
    };
    let mut nu = f64::INFINITY;
    for step in 0..slabs {
        for cell in 0..grid.cell_count() {
            nu = nu.min(lc.eigen_range(cell, step).0);
        }
    }
    if !(nu > 0.0) {
        return Err(LabError::NotParabolic { nu_empirical: nu });
    }
    Ok(EllipticityReport {
        nu_empirical: nu,
        nu_declared: lc.nu,
        passes: nu >= lc.nu,
    })
}

/// Evaluator for the flux `𝒜(x,t,u,p)` and source `ℬ(x,t,u,p)`.
pub trait Structure: Send + Sync {
    fn name(&self) -> &str;
    fn flux(&self, x: &[f64], t: f64, u: f64, p: &[f64], out: &mut [f64]);
    fn source(&self, x: &[f64], t: f64, u: f64, p: &[f64]) -> f64;
}

/// A structure evaluator together with its declared constants and the
/// coefficient fields `b, …, h` it claims to satisfy.
#[derive(Clone)]
pub struct StructureFunctions {
    pub evaluator: Arc<dyn Structure>,
    pub bounds: StructureBounds,
    pub coefficients: StructureCoefficients,
}

impl fmt::Debug for StructureFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StructureFunctions")
            .field("evaluator", &self.evaluator.name())
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// `𝒜 = A p + A_j u + F`, `ℬ = B·p + C u + G`, coefficients looked up in
/// the containing cell.
pub struct LinearStructure {
    pub coefficients: LinearCoefficients,
}

impl Structure for LinearStructure {
    fn name(&self) -> &str {
        "linear"
    }

    fn flux(&self, x: &[f64], t: f64, u: f64, p: &[f64], out: &mut [f64]) {
        let lc = &self.coefficients;
        let grid = lc.grid();
        let cell = grid.locate(x).unwrap_or(0);
        let step = grid.step_at(t);
        for (i, o) in out.iter_mut().enumerate().take(lc.n) {
            let mut v = 0.0;
            // flux component i is Σ_j A_ji p_j
            for (j, pj) in p.iter().enumerate().take(lc.n) {
                v += lc.a(j, i, cell, step) * pj;
            }
            if let Some(aj) = &lc.drift_flux {
                v += aj[i].at(cell, step) * u;
            }
            if let Some(f) = &lc.flux_source {
                v += f[i].at(cell, step);
            }
            *o = v;
        }
    }

    fn source(&self, x: &[f64], t: f64, u: f64, p: &[f64]) -> f64 {
        let lc = &self.coefficients;
        let grid = lc.grid();
        let cell = grid.locate(x).unwrap_or(0);
        let step = grid.step_at(t);
        let mut v = 0.0;
        if let Some(b) = &lc.drift {
            for (j, pj) in p.iter().enumerate().take(lc.n) {
                v += b[j].at(cell, step) * pj;
            }
        }
        if let Some(c) = &lc.reaction {
            v += c.at(cell, step) * u;
        }
        if let Some(g) = &lc.source {
            v += g.at(cell, step);
        }
        v
    }
}

/// Wraps linear coefficients as structure functions. Young's inequality with
/// weight `eps·ν/2` per cross term gives `a = ν(1−eps)`,
/// `b = |A_j|/√(2 eps ν)`, `f = |F|/√(2 eps ν)`, `c = |B|`, `d = |C|`,
/// `g = |G|`, `e = |A_j|`, `h = |F|` and `ā = max ‖A‖_F`.
pub fn linear_structure(lc: &LinearCoefficients, eps: f64) -> Result<StructureFunctions> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabError::Precondition(format!("eps must lie in (0,1), got {eps}")));
    }
    let grid = lc.grid().clone();
    let n = lc.n;
    let vec_norm = |v: &Option<Vec<Field>>| -> Option<Field> {
        v.as_ref().map(|v| {
            let mut f = Field::zeros(&grid);
            let static_all = v.iter().all(|x| x.is_static());
            if static_all {
                f = Field::constant(&grid, 0.0);
            }
            for step in 0..f.slabs() {
                for c in 0..grid.cell_count() {
                    let s: f64 = v.iter().map(|x| x.at(c, step).powi(2)).sum();
                    f.set(c, step, s.sqrt());
                }
            }
            f
        })
    };
    let mut coeffs = StructureCoefficients::default();
    let young = (2.0 * eps * lc.nu).sqrt();
    if let Some(aj) = vec_norm(&lc.drift_flux) {
        coeffs.insert(Coef::B, aj.map(|v| v / young))?;
        coeffs.insert(Coef::E, aj)?;
    }
    if let Some(f) = vec_norm(&lc.flux_source) {
        coeffs.insert(Coef::F, f.map(|v| v / young))?;
        coeffs.insert(Coef::H, f)?;
    }
    if let Some(b) = vec_norm(&lc.drift) {
        coeffs.insert(Coef::C, b)?;
    }
    if let Some(c) = &lc.reaction {
        coeffs.insert(Coef::D, c.map(f64::abs))?;
    }
    if let Some(g) = &lc.source {
        coeffs.insert(Coef::G, g.map(f64::abs))?;
    }
    let mut a_bar: f64 = 0.0;
    let slabs = lc.all_fields().iter().map(|f| f.slabs()).max().unwrap_or(1);
    for step in 0..slabs {
        for c in 0..grid.cell_count() {
            let mut fro = 0.0;
            for i in 0..n {
                for j in 0..n {
                    fro += lc.a(i, j, c, step).powi(2);
                }
            }
            a_bar = a_bar.max(fro.sqrt());
        }
    }
    let bounds = StructureBounds::from_fields(lc.nu * (1.0 - eps), a_bar, &coeffs, &BTreeMap::new(), &grid)?;
    Ok(StructureFunctions {
        evaluator: Arc::new(LinearStructure {
            coefficients: lc.clone(),
        }),
        bounds,
        coefficients: coeffs,
    })
}

/// `𝒜 = (1 + ½ sin u) p`, `ℬ = c(x,t) · min(|p|, P_cap)`.
pub struct BoundedSine {
    pub c: Field,
    pub p_cap: f64,
}

impl Structure for BoundedSine {
    fn name(&self) -> &str {
        "bounded_sine"
    }

    fn flux(&self, _x: &[f64], _t: f64, u: f64, p: &[f64], out: &mut [f64]) {
        let k = 1.0 + 0.5 * u.sin();
        for (o, pi) in out.iter_mut().zip(p) {
            *o = k * pi;
        }
    }

    fn source(&self, x: &[f64], t: f64, _u: f64, p: &[f64]) -> f64 {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.c.sample(x, t).unwrap_or(0.0) * norm.min(self.p_cap)
    }
}

/// Built-in bounded nonlinearity with `a = 1/2`, `ā = 3/2` and only `c` nonzero.
pub fn bounded_sine_structure(c: Field, p_cap: f64) -> Result<StructureFunctions> {
    let grid = c.grid().clone();
    let mut coeffs = StructureCoefficients::default();
    coeffs.insert(Coef::C, c.clone())?;
    let bounds = StructureBounds::from_fields(0.5, 1.5, &coeffs, &BTreeMap::new(), &grid)?;
    Ok(StructureFunctions {
        evaluator: Arc::new(BoundedSine { c, p_cap }),
        bounds,
        coefficients: coeffs,
    })
}

type FluxFn = dyn Fn(&[f64], f64, f64, &[f64], &mut [f64]) + Send + Sync;
type SourceFn = dyn Fn(&[f64], f64, f64, &[f64]) -> f64 + Send + Sync;

/// Extension point: user-supplied closures.
pub struct CustomStructure {
    pub label: String,
    pub flux: Box<FluxFn>,
    pub source: Box<SourceFn>,
}

impl Structure for CustomStructure {
    fn name(&self) -> &str {
        &self.label
    }
    fn flux(&self, x: &[f64], t: f64, u: f64, p: &[f64], out: &mut [f64]) {
        (self.flux)(x, t, u, p, out)
    }
    fn source(&self, x: &[f64], t: f64, u: f64, p: &[f64]) -> f64 {
        (self.source)(x, t, u, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureInequality {
    /// `p·𝒜 ≥ a|p|² − b²u² − f²`
    Coercivity,
    /// `|ℬ| ≤ c|p| + d|u| + g`
    SourceGrowth,
    /// `|𝒜| ≤ ā|p| + e|u| + h`
    FluxGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub u: f64,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureViolation {
    pub sample: usize,
    pub inequality: StructureInequality,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub samples: usize,
    pub passes: bool,
    /// Worst (smallest) slack per inequality; negative means violated.
    pub worst_slack: BTreeMap<String, f64>,
    pub violations: Vec<StructureViolation>,
}

/// Evaluates the three structure inequalities at every sample.
pub fn verify_structure(sf: &StructureFunctions, samples: &[StructureSample]) -> StructureReport {
    let mut worst = [f64::INFINITY; 3];
    let mut violations = Vec::new();
    let b = &sf.bounds;
    let mut flux = [0.0; MAX_DIM];
    for (i, s) in samples.iter().enumerate() {
        let n = s.p.len();
        sf.evaluator.flux(&s.x, s.t, s.u, &s.p, &mut flux[..n]);
        let src = sf.evaluator.source(&s.x, s.t, s.u, &s.p);
        let coef = |c: Coef| sf.coefficients.sample(c, &s.x, s.t);
        let p2: f64 = s.p.iter().map(|v| v * v).sum();
        let pn = p2.sqrt();
        let pa: f64 = s.p.iter().zip(&flux[..n]).map(|(a, b)| a * b).sum();
        let an = flux[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let slacks = [
            pa - (b.a * p2 - coef(Coef::B).powi(2) * s.u * s.u - coef(Coef::F).powi(2)),
            coef(Coef::C) * pn + coef(Coef::D) * s.u.abs() + coef(Coef::G) - src.abs(),
            b.a_bar * pn + coef(Coef::E) * s.u.abs() + coef(Coef::H) - an,
        ];
        let scales = [
            (b.a * p2).abs() + pa.abs() + 1.0,
            src.abs() + 1.0,
            an + 1.0,
        ];
        let kinds = [
            StructureInequality::Coercivity,
            StructureInequality::SourceGrowth,
            StructureInequality::FluxGrowth,
        ];
        for k in 0..3 {
            worst[k] = worst[k].min(slacks[k]);
            if slacks[k] < -1e-12 * scales[k] {
                violations.push(StructureViolation {
                    sample: i,
                    inequality: kinds[k],
                    slack: slacks[k],
                });
            }
        }
    }
    let mut worst_slack = BTreeMap::new();
    worst_slack.insert("coercivity".to_string(), worst[0]);
    worst_slack.insert("source_growth".to_string(), worst[1]);
    worst_slack.insert("flux_growth".to_string(), worst[2]);
    StructureReport {
        samples: samples.len(),
        passes: violations.is_empty(),
        worst_slack,
        violations,
    }
}

/// Deterministic probe cloud over `Q` with `u ∈ [-u_max, u_max]` and
/// `|p_i| ≤ p_max`.
pub fn probe_samples(grid: &SpaceTimeGrid, count: usize, u_max: f64, p_max: f64, seed: u64) -> Vec<StructureSample> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = (0..grid.n())
                .map(|a| rng.gen_range(grid.lower()[a]..grid.upper()[a]))
                .collect();
            StructureSample {
                x,
                t: rng.gen_range(0.0..grid.t_final()),
                u: rng.gen_range(-u_max..=u_max),
                p: (0..grid.n()).map(|_| rng.gen_range(-p_max..=p_max)).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families;
    use proptest::prelude::*;

    fn unit_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 64.0, 1.0, 1.0 / 64.0).unwrap()
    }

    #[test]
    fn bochner_unit_function() {
        let g = unit_grid();
        let w = Field::constant(&g, 1.0);
        for (p, q) in [(1.0, 1.0), (2.0, 3.0), (f64::INFINITY, 2.0), (4.0, f64::INFINITY)] {
            assert!((bochner_norm(&w, p, q) - 1.0).abs() < 1e-12, "p={p} q={q}");
        }
    }

    #[test]
    fn bochner_indicator_and_linear() {
        let g = unit_grid();
        let ind = Field::static_from_fn(&g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        assert!((bochner_norm(&ind, 2.0, 2.0) - 0.5f64.sqrt()).abs() < 1e-12);
        let lin = Field::static_from_fn(&g, |x| x[0]);
        let exact = 3f64.powf(-0.5);
        // midpoint rule: ∫x² = 1/3 − h²/12
        assert!((bochner_norm(&lin, 2.0, f64::INFINITY) - exact).abs() < 1e-4);
    }

    #[test]
    fn exponent_pair_examples() {
        let c = check_exponent_pair(&ExponentPair::bounded(PairKind::FirstOrder), 3);
        assert!(c.pass && (c.margin - 0.5).abs() < 1e-15);
        let c = check_exponent_pair(&ExponentPair::new(2.0, f64::INFINITY, PairKind::FirstOrder), 1);
        assert!(!c.pass && c.reason.unwrap().contains("p > 2"));
        let c = check_exponent_pair(&ExponentPair::new(4.0, 8.0, PairKind::FirstOrder), 2);
        assert!(c.pass && (c.margin - 0.125).abs() < 1e-15);
    }

    #[test]
    fn theta_examples() {
        let all_inf = [
            (Coef::B, ExponentPair::bounded(PairKind::FirstOrder)),
            (Coef::D, ExponentPair::bounded(PairKind::ZeroOrder)),
        ];
        assert_eq!(compute_theta(&all_inf, 3).unwrap(), THETA_CAP);
        let one = [(Coef::C, ExponentPair::new(4.0, 8.0, PairKind::FirstOrder))];
        assert!((compute_theta(&one, 2).unwrap() - 0.25).abs() < 1e-15);
        // n/(2p) + 1/q = 1/2 exactly: boundary of the strict condition
        let edge = [(Coef::F, ExponentPair::new(4.0, 4.0, PairKind::FirstOrder))];
        let err = compute_theta(&edge, 2).unwrap_err();
        assert!(err.to_string().contains("coefficient f"));
    }

    proptest! {
        #[test]
        fn theta_satisfies_relaxed_conditions(p in 2.1f64..50.0, q in 2.1f64..50.0, n in 1usize..=3, zero in any::<bool>()) {
            let kind = if zero { PairKind::ZeroOrder } else { PairKind::FirstOrder };
            let pair = ExponentPair::new(p, q, kind);
            prop_assume!(check_exponent_pair(&pair, n).pass);
            let theta = compute_theta(&[(Coef::B, pair)], n);
            if let Ok(theta) = theta {
                let s = n as f64 / (2.0 * p) + 1.0 / q;
                match kind {
                    PairKind::FirstOrder => {
                        prop_assert!(p >= 2.0 / (1.0 - theta) - 1e-9);
                        prop_assert!(s <= (1.0 - theta) / 2.0 + 1e-12);
                    }
                    PairKind::ZeroOrder => {
                        prop_assert!(p >= 1.0 / (1.0 - theta) - 1e-9);
                        prop_assert!(s <= 1.0 - theta + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn bochner_monotone(seed in 0u64..500, p in 1.0f64..6.0, q in 1.0f64..6.0) {
            use rand::{Rng, SeedableRng};
            let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 0.125, 1.0, 0.125).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = g.steps() * g.cell_count();
            let v2: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v1: Vec<f64> = v2.iter().map(|v| v * rng.gen_range(0.0..1.0)).collect();
            let w2 = Field::from_values(&g, g.steps(), v2).unwrap();
            let w1 = Field::from_values(&g, g.steps(), v1).unwrap();
            prop_assert!(bochner_norm(&w1, p, q) <= bochner_norm(&w2, p, q) + 1e-12);
            let maxabs = w2.values()[g.cell_count()..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!((bochner_norm(&w2, f64::INFINITY, f64::INFINITY) - maxabs).abs() < 1e-15);
        }
    }

    #[test]
    fn ellipticity_examples() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.125, 1.0, 0.5).unwrap();
        let lc = LinearCoefficients::heat(&g, 1.0);
        assert_eq!(ellipticity_check(&lc).unwrap().nu_empirical, 1.0);
        let cb = families::checkerboard(&g, 10.0, 0.25);
        let lc = LinearCoefficients::isotropic(cb, 1.0);
        let r = ellipticity_check(&lc).unwrap();
        assert_eq!(r.nu_empirical, 1.0);
        assert!(r.passes);
        let mut lc = LinearCoefficients::heat(&g, 1.0);
        lc.diffusion = Diffusion::Diagonal(vec![Field::constant(&g, 1.0), Field::constant(&g, -0.1)]);
        assert!(matches!(ellipticity_check(&lc), Err(LabError::NotParabolic { .. })));
    }

    #[test]
    fn eigen_range_3d_matches_known() {
        let mut m = [[0.0; 3]; 3];
        m[0][0] = 2.0;
        m[1][1] = 2.0;
        m[2][2] = 2.0;
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        let (lo, hi) = symmetric_eigen_range(&m, 3);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn verify_heat_identity() {
        let g = unit_grid();
        let sf = linear_structure(&LinearCoefficients::heat(&g, 1.0), 1e-9).unwrap();
        let samples = probe_samples(&g, 200, 5.0, 5.0, 3);
        let rep = verify_structure(&sf, &samples);
        assert!(rep.passes);
    }

    #[test]
    fn verify_bounded_sine() {
        let g = unit_grid();
        let c = families::checkerboard(&g, 3.0, 0.25);
        let sf = bounded_sine_structure(c, 10.0).unwrap();
        let rep = verify_structure(&sf, &probe_samples(&g, 500, 10.0, 20.0, 7));
        assert!(rep.passes, "{rep:?}");
    }

    #[test]
    fn verify_detects_degenerate_flux() {
        let g = unit_grid();
        let sf = StructureFunctions {
            evaluator: Arc::new(CustomStructure {
                label: "u p".into(),
                flux: Box::new(|_, _, u, p, out| {
                    for (o, pi) in out.iter_mut().zip(p) {
                        *o = u * pi;
                    }
                }),
                source: Box::new(|_, _, _, _| 0.0),
            }),
            bounds: StructureBounds::homogeneous(1.0, 10.0, &g),
            coefficients: StructureCoefficients::default(),
        };
        let samples = vec![StructureSample {
            x: vec![0.5],
            t: 0.5,
            u: 0.01,
            p: vec![1.0],
        }];
        let rep = verify_structure(&sf, &samples);
        assert!(!rep.passes);
        assert_eq!(rep.violations[0].inequality, StructureInequality::Coercivity);
    }

    #[test]
    fn linear_wrapper_passes_with_lower_order_terms() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 0.125, 1.0, 0.25).unwrap();
        let mut lc = LinearCoefficients::isotropic(families::checkerboard(&g, 4.0, 0.25), 1.0);
        lc.drift_flux = Some(vec![Field::constant(&g, 0.7), Field::static_from_fn(&g, |x| x[0] - 0.5)]);
        lc.drift = Some(vec![Field::constant(&g, -0.3), Field::constant(&g, 0.2)]);
        lc.reaction = Some(Field::constant(&g, -1.5));
        lc.flux_source = Some(vec![Field::constant(&g, 2.0), Field::constant(&g, -1.0)]);
        lc.source = Some(Field::static_from_fn(&g, |x| x[1]));
        let sf = linear_structure(&lc, 0.1).unwrap();
        assert!((sf.bounds.a - 0.9).abs() < 1e-15);
        let rep = verify_structure(&sf, &probe_samples(&g, 1000, 3.0, 3.0, 11));
        assert!(rep.passes, "{:?}", rep.worst_slack);
    }

    #[test]
    fn strip_norm_examples() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 3.0)], 0.125, 2.0, 0.125).unwrap();
        let c = Field::constant(&g, 2.5);
        assert!((sup_norm_over_strip(&c, f64::INFINITY, f64::INFINITY) - 2.5).abs() < 1e-15);
        let one = Field::constant(&g, 1.0);
        // open cube of edge 1 around a cell center holds 7 cells of width 1/8
        assert!((sup_norm_over_strip(&one, 2.0, 2.0) - 0.875f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn strip_norm_attained_on_indicator_cylinder() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 3.0)], 0.125, 2.0, 0.125).unwrap();
        let cyl = crate::grid::Cylinder::new(&[1.5625], 1.5, 1.0, crate::grid::CylinderKind::Standard);
        let set = cyl.materialize(&g).unwrap();
        let mut w = Field::zeros(&g);
        for (c, s) in set.iter() {
            w.set(c, s, 1.0);
        }
        let single = bochner_norm_on(&w, &set, 2.0, 2.0);
        // enumerate all lattice cylinders as an independent oracle
        let mut best: f64 = 0.0;
        for step in 0..g.steps() {
            for cell in 0..g.cell_count() {
                let x = g.center(cell)[0];
                let cand = crate::grid::Cylinder::new(&[x], g.time(step), 1.0, crate::grid::CylinderKind::Standard);
                if let Ok(s) = cand.materialize(&g) {
                    best = best.max(bochner_norm_on(&w, &s, 2.0, 2.0));
                }
            }
        }
        let sup = sup_norm_over_strip(&w, 2.0, 2.0);
        assert!((sup - best).abs() < 1e-12);
        assert!((sup - single).abs() < 1e-12);
    }
}
