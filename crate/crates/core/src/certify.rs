//! Empirical certificates for the regularity theorems. Every certifier is a
//! pure function of its inputs and returns the fitted constants together with
//! the worst-case witnesses.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::analytic::{bump, bump_derivative};
use crate::error::{LabError, Result};
use crate::field::SolutionField;
use crate::grid::{parabolic_boundary, pseudo_distance, CellSet, Cylinder, CylinderKind, SpaceTimeGrid};
use crate::structure::{bochner_norm_on, Coef, StructureBounds, StructureCoefficients};

/// Serializes non-finite constants as strings so reports stay valid JSON.
mod lossless {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<&String, Repr> = map
            .iter()
            .map(|(k, v)| {
                let r = if v.is_finite() {
                    Repr::Num(*v)
                } else if v.is_nan() {
                    Repr::Text("nan".into())
                } else if *v > 0.0 {
                    Repr::Text("inf".into())
                } else {
                    Repr::Text("-inf".into())
                };
                (k, r)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let raw: BTreeMap<String, Repr> = BTreeMap::deserialize(d)?;
        raw.into_iter()
            .map(|(k, r)| {
                let v = match r {
                    Repr::Num(v) => v,
                    Repr::Text(t) => match t.as_str() {
                        "inf" => f64::INFINITY,
                        "-inf" => f64::NEG_INFINITY,
                        "nan" => f64::NAN,
                        other => return Err(serde::de::Error::custom(format!("bad constant {other}"))),
                    },
                };
                Ok((k, v))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    MaxPrinciple,
    MinPrinciple,
    LocalBound,
    Harnack,
    PointwiseHarnack,
    Hoelder,
    LimitBehavior,
    Caccioppoli,
    WidderTrace,
}

impl Theorem {
    pub fn tag(&self) -> &'static str {
        match self {
            Theorem::MaxPrinciple => "max_principle",
            Theorem::MinPrinciple => "min_principle",
            Theorem::LocalBound => "local_bound",
            Theorem::Harnack => "harnack",
            Theorem::PointwiseHarnack => "pointwise_harnack",
            Theorem::Hoelder => "hoelder",
            Theorem::LimitBehavior => "limit_behavior",
            Theorem::Caccioppoli => "caccioppoli",
            Theorem::WidderTrace => "widder_trace",
        }
    }
}

/// A space-time point where a certifier's extreme was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub label: String,
    pub x: Vec<f64>,
    pub t: f64,
    pub value: f64,
}

impl Witness {
    pub fn at(grid: &SpaceTimeGrid, label: &str, cell: usize, step: usize, value: f64) -> Self {
        Self {
            label: label.into(),
            x: grid.center(cell)[..grid.n()].to_vec(),
            t: grid.time(step),
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub problem_hash: String,
    pub config_hash: String,
    pub grid_hash: String,
}

impl Provenance {
    pub fn of(u: &SolutionField) -> Self {
        Self {
            problem_hash: u.problem_hash.clone(),
            config_hash: u.config_hash.clone(),
            grid_hash: u.grid().hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub theorem: Theorem,
    pub pass: bool,
    /// False when the theorem's hypothesis fails on the given data.
    pub applicable: bool,
    #[serde(with = "lossless")]
    pub constants: BTreeMap<String, f64>,
    pub witness: Vec<Witness>,
    pub provenance: Provenance,
    /// Steps after the source time left out of kernel-based samples.
    pub exclusion_steps: usize,
    pub notes: Vec<String>,
}

impl Certificate {
    fn new(theorem: Theorem, u: &SolutionField) -> Self {
        Self {
            theorem,
            pass: false,
            applicable: true,
            constants: BTreeMap::new(),
            witness: Vec::new(),
            provenance: Provenance::of(u),
            exclusion_steps: 0,
            notes: Vec::new(),
        }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    fn set(&mut self, name: &str, v: f64) {
        self.constants.insert(name.into(), v);
    }
}

fn argmax_on(u: &SolutionField, set: &CellSet, f: impl Fn(f64) -> f64) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (cell, step) in set.iter() {
        let v = f(u.at(cell, step));
        if best.map_or(true, |(_, _, b)| v > b) {
            best = Some((cell, step, v));
        }
    }
    best
}

fn everything(grid: &SpaceTimeGrid) -> CellSet {
    let mut set = CellSet::empty(grid);
    for step in 0..grid.steps() {
        for cell in 0..grid.cell_count() {
            set.insert(cell, step);
        }
    }
    set
}

// ---------------------------------------------------------------------------
// Maximum principle

/// Upper bound `u ≤ M + Ck` when `u ≤ M` on the parabolic boundary. If
/// instead `u ≥ M` on the boundary the mirrored lower bound is certified.
pub fn certify_max_principle(u: &SolutionField, m: f64, bounds: &StructureBounds, tol: f64) -> Result<Certificate> {
    let grid = u.grid();
    let gamma = parabolic_boundary(grid);
    let scale = tol * m.abs().max(1.0);
    let upper = u.field.max_on(&gamma) <= m + scale;
    let lower = u.field.min_on(&gamma) >= m - scale;
    let sign = if upper {
        1.0
    } else if lower {
        -1.0
    } else {
        return Err(LabError::Precondition(format!(
            "boundary data straddles M = {m}: max on the parabolic boundary {}, min {}",
            u.field.max_on(&gamma),
            u.field.min_on(&gamma)
        )));
    };
    let theorem = if upper { Theorem::MaxPrinciple } else { Theorem::MinPrinciple };
    let mut cert = Certificate::new(theorem, u);
    let k = bounds.k_max_principle(m);
    let all = everything(grid);
    let (cell, step, excess) = argmax_on(u, &all, |v| sign * (v - m)).expect("nonempty grid");
    cert.set("M", m);
    cert.set("k", k);
    cert.set("excess", excess);
    cert.witness.push(Witness::at(grid, "extreme", cell, step, u.at(cell, step)));
    if k > 0.0 {
        let c = excess.max(0.0) / k;
        cert.set("C", c);
        cert.pass = c.is_finite();
    } else {
        cert.set("C", 0.0);
        cert.pass = excess <= scale;
    }
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Local boundedness

pub fn certify_local_bound(u: &SolutionField, center: &[f64], t: f64, rho: f64, bounds: &StructureBounds) -> Result<Certificate> {
    let grid = u.grid();
    let big = Cylinder::new(center, t, rho, CylinderKind::Tripled).materialize(grid)?;
    let small = Cylinder::new(center, t, rho, CylinderKind::Standard).materialize(grid)?;
    if small.is_empty() {
        return Err(LabError::Precondition(format!("Q(ρ) with ρ = {rho} contains no grid cells")));
    }
    let n = grid.n() as f64;
    let k = bounds.k_local();
    let norm = bochner_norm_on(&u.field, &big, 2.0, 2.0);
    let denom = rho.powf(-(n + 2.0) / 2.0) * norm + rho.powf(bounds.theta) * k;
    let (cell, step, sup) = argmax_on(u, &small, f64::abs).expect("nonempty");
    let c = if sup == 0.0 { 0.0 } else { sup / denom };
    let mut cert = Certificate::new(Theorem::LocalBound, u);
    cert.set("C", c);
    cert.set("k", k);
    cert.set("rho", rho);
    cert.set("theta", bounds.theta);
    cert.set("norm_2_2_3rho", norm);
    cert.set("sup", sup);
    cert.witness.push(Witness::at(grid, "sup", cell, step, u.at(cell, step)));
    cert.pass = c.is_finite();
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Harnack

pub fn certify_harnack(
    u: &SolutionField,
    center: &[f64],
    t: f64,
    rho: f64,
    bounds: &StructureBounds,
    k: f64,
    tol: f64,
) -> Result<Certificate> {
    let grid = u.grid();
    Cylinder::new(center, t, rho, CylinderKind::Tripled).check_containment(grid)?;
    let scale = u.field.max().abs().max(1.0);
    let min = u.field.min();
    if min < -tol * scale {
        return Err(LabError::Precondition(format!("solution is negative (min {min:e}) beyond tolerance")));
    }
    let early = Cylinder::new(center, t, rho, CylinderKind::HarnackShifted).materialize(grid)?;
    let late = Cylinder::new(center, t, rho, CylinderKind::Standard).materialize(grid)?;
    if early.is_empty() || late.is_empty() {
        return Err(LabError::Precondition(format!("ρ = {rho} is below the grid resolution")));
    }
    let shift = rho.powf(bounds.theta) * k;
    let (c1, s1, num) = argmax_on(u, &early, |v| v).expect("nonempty");
    let (c2, s2, neg) = argmax_on(u, &late, |v| -(v + shift)).expect("nonempty");
    let den = -neg;
    let mut cert = Certificate::new(Theorem::Harnack, u);
    cert.set("max_early", num);
    cert.set("min_late", den);
    cert.set("k", k);
    cert.set("rho", rho);
    cert.set("C", if den > 0.0 { num / den } else { f64::INFINITY });
    cert.witness.push(Witness::at(grid, "max_early", c1, s1, num));
    cert.witness.push(Witness::at(grid, "min_late", c2, s2, u.at(c2, s2)));
    cert.pass = den > 0.0;
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Pointwise Harnack

/// One comparison pair: the later point `(x, t)` and the earlier `(y, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackPair {
    pub x: Vec<f64>,
    pub t: f64,
    pub y: Vec<f64>,
    pub s: f64,
}

/// All ordered pairs drawn from the product lattice `points × times`.
pub fn lattice_pairs(points: &[Vec<f64>], times: &[f64]) -> Vec<HarnackPair> {
    let mut out = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        for &s in &times[..i] {
            for x in points {
                for y in points {
                    out.push(HarnackPair {
                        x: x.clone(),
                        t,
                        y: y.clone(),
                        s,
                    });
                }
            }
        }
    }
    out
}

/// Value of the piecewise-constant field at a point and an exact time level.
fn value_at(u: &SolutionField, x: &[f64], t: f64) -> Result<f64> {
    let grid = u.grid();
    let step = grid
        .exact_step(t)
        .ok_or_else(|| LabError::Precondition(format!("time {t} is not a grid time level")))?;
    let cell = grid
        .locate(x)
        .ok_or_else(|| LabError::Precondition(format!("point {x:?} lies outside the box")))?;
    Ok(u.at(cell, step))
}

pub fn certify_pointwise_harnack(u: &SolutionField, pairs: &[HarnackPair], k: f64, tol: f64) -> Result<Certificate> {
    let grid = u.grid();
    let scale = u.field.max().abs().max(1.0);
    if u.field.min() < -tol * scale {
        return Err(LabError::Precondition("solution must be non-negative".into()));
    }
    let mut best = 0.0f64;
    let mut worst: Option<(usize, f64)> = None;
    for (i, p) in pairs.iter().enumerate() {
        if !(0.0 < p.s && p.s < p.t && p.t <= grid.t_final() + 1e-12) {
            return Err(LabError::Precondition(format!(
                "pair {i} violates 0 < s < t <= T (s = {}, t = {})",
                p.s, p.t
            )));
        }
        let later = value_at(u, &p.x, p.t)? + k;
        let earlier = value_at(u, &p.y, p.s)? + k;
        let dist: f64 = p.x.iter().zip(&p.y).map(|(a, b)| (a - b).powi(2)).sum();
        let weight = dist / (p.t - p.s) + p.t / p.s;
        let ratio = if earlier <= 0.0 {
            continue;
        } else if later <= 0.0 {
            f64::INFINITY
        } else {
            (earlier / later).ln() / weight
        };
        if ratio > best || worst.is_none() {
            worst = Some((i, ratio));
        }
        best = best.max(ratio);
    }
    let mut cert = Certificate::new(Theorem::PointwiseHarnack, u);
    cert.set("C", best.max(0.0));
    cert.set("k", k);
    cert.set("pairs", pairs.len() as f64);
    if let Some((i, r)) = worst {
        let p = &pairs[i];
        cert.witness.push(Witness {
            label: "later".into(),
            x: p.x.clone(),
            t: p.t,
            value: r,
        });
        cert.witness.push(Witness {
            label: "earlier".into(),
            x: p.y.clone(),
            t: p.s,
            value: r,
        });
    }
    cert.pass = true;
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Hoelder continuity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoelderOptions {
    pub k: f64,
    /// Oscillations at or below `noise_floor · L` count as unresolved.
    pub noise_floor: f64,
}

impl Default for HoelderOptions {
    fn default() -> Self {
        Self { k: 0.0, noise_floor: 1e-12 }
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Oscillation decay over pseudo-distance balls `{|Y − X| < r}` for a
/// decreasing ladder of radii.
pub fn estimate_hoelder(u: &SolutionField, x: &[f64], t: f64, radii: &[f64], opts: &HoelderOptions) -> Result<Certificate> {
    let grid = u.grid();
    if radii.len() < 2 {
        return Err(LabError::Precondition("the radius ladder needs at least two rungs".into()));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Precondition("radii must be strictly decreasing".into()));
    }
    // The pseudo-ball of radius r is the standard cylinder with ρ = 2r.
    let mut balls = Vec::with_capacity(radii.len());
    for &r in radii {
        balls.push(Cylinder::new(x, t, 2.0 * r, CylinderKind::Standard).materialize(grid)?);
    }
    let l = u.field.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !l.is_finite() {
        return Err(LabError::Precondition("sup |u| is not finite".into()));
    }
    let step = grid.step_at(t);
    let xcell = grid
        .locate(x)
        .ok_or_else(|| LabError::Precondition(format!("point {x:?} lies outside the box")))?;
    let ux = u.at(xcell, step);

    let mut cert = Certificate::new(Theorem::Hoelder, u);
    let mut logs_r = Vec::new();
    let mut logs_osc = Vec::new();
    let mut unresolved = false;
    for (r, ball) in radii.iter().zip(&balls) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (cell, s) in ball.iter() {
            let v = u.at(cell, s);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let osc = hi - lo;
        cert.witness.push(Witness {
            label: format!("osc(r={r})"),
            x: x.to_vec(),
            t,
            value: osc,
        });
        if osc <= opts.noise_floor * l.max(f64::MIN_POSITIVE) {
            unresolved = true;
            continue;
        }
        logs_r.push(r.ln());
        logs_osc.push(osc.ln());
    }
    let alpha = if logs_r.len() >= 2 {
        least_squares_slope(&logs_r, &logs_osc)
    } else {
        f64::INFINITY
    };
    if unresolved {
        cert.notes.push("oscillation below the noise floor on some rungs; alpha is a lower bound only".into());
    }

    // R: pseudo-distance from X to the parabolic boundary, capped at 1.
    let r_cap = grid.distance_to_faces(x).min((t / 4.0).sqrt()).min(1.0);
    let amp = l + opts.k;
    let mut h_emp = 0.0f64;
    let mut arg: Option<(usize, usize)> = None;
    let a_fit = if alpha.is_finite() { alpha.clamp(0.0, 1.0) } else { 1.0 };
    for (cell, s) in balls[0].iter() {
        let c = grid.center(cell);
        let d = pseudo_distance(x, t, &c[..grid.n()], grid.time(s));
        if !(d > 0.0) || !d.is_finite() || amp == 0.0 {
            continue;
        }
        let hv = (u.at(cell, s) - ux).abs() / (amp * (d / r_cap).powf(a_fit));
        if hv > h_emp {
            h_emp = hv;
            arg = Some((cell, s));
        }
    }
    cert.set("alpha", alpha);
    cert.set("H", h_emp);
    cert.set("L", l);
    cert.set("R", r_cap);
    cert.set("k", opts.k);
    if let Some((cell, s)) = arg {
        cert.witness.push(Witness::at(grid, "worst_pair", cell, s, u.at(cell, s)));
    }
    cert.pass = alpha.is_finite() && alpha > 0.0 && h_emp.is_finite();
    cert.applicable = !unresolved || logs_r.len() >= 2;
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Limit behavior

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitOptions {
    pub k: f64,
    pub exclusion_steps: usize,
    /// Envelope samples are cells with `|x − ξ| ≤ fit_radius · √t`.
    pub fit_radius: f64,
    /// Cells below this fraction of the step maximum are skipped.
    pub min_relative: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            k: 0.0,
            exclusion_steps: 5,
            fit_radius: 4.0,
            min_relative: 1e-10,
        }
    }
}

/// Measure of the part of `cell` inside the ball `|x − o| < radius`.
fn ball_overlap(grid: &SpaceTimeGrid, cell: usize, origin: &[f64], radius: f64) -> f64 {
    let c = grid.center(cell);
    let h = grid.h();
    if grid.n() == 1 {
        let lo = (c[0] - 0.5 * h).max(origin[0] - radius);
        let hi = (c[0] + 0.5 * h).min(origin[0] + radius);
        return (hi - lo).max(0.0);
    }
    const SUB: usize = 8;
    let n = grid.n();
    let total = SUB.pow(n as u32);
    let mut inside = 0usize;
    for k in 0..total {
        let mut rem = k;
        let mut r2 = 0.0;
        for a in 0..n {
            let i = rem % SUB;
            rem /= SUB;
            let xa = c[a] - 0.5 * h + (i as f64 + 0.5) * h / SUB as f64;
            r2 += (xa - origin[a]).powi(2);
        }
        if r2 < radius * radius {
            inside += 1;
        }
    }
    grid.cell_volume() * inside as f64 / total as f64
}

/// Nash-type lower bound for a solution emanating from `origin` at `t = 0`.
pub fn certify_limit_behavior(u: &SolutionField, origin: &[f64], alpha: f64, opts: &LimitOptions) -> Result<Certificate> {
    let grid = u.grid();
    let n = grid.n() as f64;
    if origin.len() != grid.n() {
        return Err(LabError::Precondition("origin dimension mismatch".into()));
    }
    if u.field.min() < -1e-12 * u.field.max().abs().max(1.0) {
        return Err(LabError::Precondition("solution must be non-negative".into()));
    }
    let first = opts.exclusion_steps + 1;
    if first > grid.nt() {
        return Err(LabError::Precondition("exclusion window leaves no time steps".into()));
    }
    let mut cert = Certificate::new(Theorem::LimitBehavior, u);
    cert.exclusion_steps = opts.exclusion_steps;

    let mut m_inf = f64::INFINITY;
    let mut m_step = first;
    for step in first..=grid.nt() {
        let radius = (alpha * grid.time(step)).sqrt();
        let integral: f64 = (0..grid.cell_count())
            .map(|c| u.at(c, step) * ball_overlap(grid, c, origin, radius))
            .sum();
        if integral < m_inf {
            m_inf = integral;
            m_step = step;
        }
    }
    cert.set("M", m_inf);
    cert.set("alpha", alpha);
    cert.set("k", opts.k);
    cert.witness.push(Witness {
        label: "inf_mass".into(),
        x: origin.to_vec(),
        t: grid.time(m_step),
        value: m_inf,
    });
    if !(m_inf > 0.0) {
        cert.applicable = false;
        cert.pass = false;
        cert.notes.push("the mass hypothesis fails (M <= 0)".into());
        return Ok(cert);
    }

    // Samples y = ln(u+k) + (n/2) ln t, z = |x|²/t.
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    let mut at = Vec::new();
    for step in first..=grid.nt() {
        let t = grid.time(step);
        let slab = u.field.slab(step);
        let peak = slab.iter().fold(0.0f64, |m, v| m.max(*v)) + opts.k;
        for (cell, v) in slab.iter().enumerate() {
            let c = grid.center(cell);
            let r2: f64 = (0..grid.n()).map(|a| (c[a] - origin[a]).powi(2)).sum();
            let val = v + opts.k;
            if r2 > opts.fit_radius * opts.fit_radius * t || val <= opts.min_relative * peak || val <= 0.0 {
                continue;
            }
            ys.push(val.ln() + 0.5 * n * t.ln());
            zs.push(r2 / t);
            at.push((cell, step));
        }
    }
    if ys.is_empty() {
        return Err(LabError::Precondition("no positive samples in the fit region".into()));
    }
    // For fixed C₂ the tightest C₁ is min(y + C₂ z); choose C₂ to minimize
    // the mean log-gap between u + k and the envelope.
    let gap = |c2: f64| -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut sum = 0.0;
        for (y, z) in ys.iter().zip(&zs) {
            let w = y + c2 * z;
            lo = lo.min(w);
            sum += w;
        }
        (sum / ys.len() as f64 - lo, lo)
    };
    let (mut c2_best, mut g_best) = (0.0, f64::INFINITY);
    let coarse = 400;
    let c2_max = 4.0;
    for i in 0..=coarse {
        let c2 = c2_max * i as f64 / coarse as f64;
        let (g, _) = gap(c2);
        if g < g_best {
            g_best = g;
            c2_best = c2;
        }
    }
    let step_c = c2_max / coarse as f64;
    let (mut a, mut b) = ((c2_best - step_c).max(0.0), c2_best + step_c);
    for _ in 0..60 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if gap(m1).0 <= gap(m2).0 {
            b = m2;
        } else {
            a = m1;
        }
    }
    let c2 = 0.5 * (a + b);
    let ln_c1 = gap(c2).1;
    let c1 = ln_c1.exp();
    // Smallest C₂ compatible with the fitted C₁ at every sample.
    let mut c2_emp = 0.0f64;
    let mut worst = 0usize;
    let mut holds = true;
    for (i, (y, z)) in ys.iter().zip(&zs).enumerate() {
        if *z > 0.0 {
            let need = (ln_c1 - y) / z;
            if need > c2_emp {
                c2_emp = need;
                worst = i;
            }
        } else if *y < ln_c1 - 1e-12 {
            holds = false;
        }
        if y + c2 * z < ln_c1 - 1e-9 * ln_c1.abs().max(1.0) {
            holds = false;
        }
    }
    cert.set("C1", c1);
    cert.set("C2", c2);
    cert.set("C2_emp", c2_emp);
    cert.set("samples", ys.len() as f64);
    let (cell, step) = at[worst];
    cert.witness.push(Witness::at(grid, "envelope_contact", cell, step, u.at(cell, step)));
    cert.pass = holds;
    Ok(cert)
}

// ---------------------------------------------------------------------------
// Fundamental (Caccioppoli-type) inequality

/// `η(x, t) = Π β̂((x_i − c_i)/r) · χ(t)` with `β̂` the normalized bump and
/// `χ` a smooth ramp from 0 at `t_start` to 1 at `t_full`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_start: f64,
    pub t_full: f64,
}

fn ramp_base(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn ramp_base_d(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() / (s * s)
    } else {
        0.0
    }
}

impl Cutoff {
    /// Centered in the box, radius 0.4 of the shortest side, full from `T/4`.
    pub fn centered(grid: &SpaceTimeGrid) -> Self {
        let n = grid.n();
        let center = (0..n).map(|a| 0.5 * (grid.lower()[a] + grid.upper()[a])).collect();
        let side = (0..n).map(|a| grid.upper()[a] - grid.lower()[a]).fold(f64::INFINITY, f64::min);
        Self {
            center,
            radius: 0.4 * side,
            t_start: 0.0,
            t_full: 0.25 * grid.t_final(),
        }
    }

    fn chi(&self, t: f64) -> (f64, f64) {
        let w = self.t_full - self.t_start;
        let s = (t - self.t_start) / w;
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        if s >= 1.0 {
            return (1.0, 0.0);
        }
        let (p, q) = (ramp_base(s), ramp_base(1.0 - s));
        let (dp, dq) = (ramp_base_d(s), -ramp_base_d(1.0 - s));
        let v = p / (p + q);
        let d = (dp * (p + q) - p * (dp + dq)) / ((p + q) * (p + q));
        (v, d / w)
    }

    /// `(η, |∇η|, η_t)` at `(x, t)`.
    pub fn eval(&self, x: &[f64], t: f64) -> (f64, f64, f64) {
        let b0 = bump(0.0);
        let s: Vec<f64> = x.iter().zip(&self.center).map(|(xi, c)| (xi - c) / self.radius).collect();
        let vals: Vec<f64> = s.iter().map(|&si| bump(si) / b0).collect();
        let space: f64 = vals.iter().product();
        let mut g2 = 0.0;
        for a in 0..s.len() {
            let mut d = bump_derivative(s[a]) / b0 / self.radius;
            for (b, v) in vals.iter().enumerate() {
                if b != a {
                    d *= v;
                }
            }
            g2 += d * d;
        }
        let (c, dc) = self.chi(t);
        (space * c, g2.sqrt() * c, space * dc)
    }

    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.center.len() != grid.n() {
            return Err(LabError::Precondition("cutoff center dimension mismatch".into()));
        }
        if !(self.radius > 0.0) || !(self.t_full > self.t_start) || self.t_start < 0.0 {
            return Err(LabError::Precondition("cutoff needs radius > 0 and 0 <= t_start < t_full".into()));
        }
        // The support must keep at least one cell away from the lateral faces.
        for a in 0..grid.n() {
            if self.center[a] - self.radius < grid.lower()[a] + grid.h() || self.center[a] + self.radius > grid.upper()[a] - grid.h() {
                return Err(LabError::Precondition(format!(
                    "cutoff support reaches the lateral boundary along axis {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Which reading of the `τ`-slice bracket to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bracket {
    /// `ū^{β+1} − (β+1)κ^β ū + βκ^{β+1}` (the energy identity's form)
    Corrected,
    /// `ū^{β−1} − (b+1)κ^β ū + βκ^{β+1}` with `b` the coefficient field
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaccioppoliOptions {
    pub beta: f64,
    pub kappa: f64,
    pub bracket: Bracket,
    pub tau_samples: usize,
    pub tol: f64,
}

impl Default for CaccioppoliOptions {
    fn default() -> Self {
        Self {
            beta: 1.0,
            kappa: 0.0,
            bracket: Bracket::Corrected,
            tau_samples: 20,
            tol: 1e-6,
        }
    }
}

/// Both sides of the inequality at one `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliSample {
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// RHS with the product reading `G = e·h/κ`.
    pub rhs_product: f64,
    /// RHS with the sum reading `G = e + h/κ`.
    pub rhs_sum: f64,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn check_caccioppoli(
    u: &SolutionField,
    eta: &Cutoff,
    bounds: &StructureBounds,
    coefficients: &StructureCoefficients,
    opts: &CaccioppoliOptions,
) -> Result<(Certificate, Vec<CaccioppoliSample>)> {
    let grid = u.grid();
    eta.validate(grid)?;
    let beta = opts.beta;
    let kappa = opts.kappa;
    if !(beta >= 1.0) {
        return Err(LabError::Precondition(format!("beta must be >= 1, got {beta}")));
    }
    if kappa < 0.0 {
        return Err(LabError::Precondition("kappa must be non-negative".into()));
    }
    if kappa == 0.0 && !(coefficients.is_zero(Coef::F) && coefficients.is_zero(Coef::G) && coefficients.is_zero(Coef::H)) {
        return Err(LabError::Precondition("kappa = 0 requires f, g and h to vanish".into()));
    }
    if opts.tau_samples == 0 {
        return Err(LabError::Precondition("need at least one tau sample".into()));
    }
    let (a, a_bar) = (bounds.a, bounds.a_bar);
    let n = grid.n();
    let h = grid.h();
    let vol = grid.cell_volume();
    let dt = grid.dt();
    let cells = grid.cell_count();
    let centers: Vec<Vec<f64>> = (0..cells).map(|c| grid.center(c)[..n].to_vec()).collect();

    // Per-step space integrals, accumulated in time afterwards.
    let mut energy = vec![0.0; grid.steps()];
    let mut f_sum = vec![0.0; grid.steps()];
    let mut f_prod = vec![0.0; grid.steps()];
    let mut slice = vec![0.0; grid.steps()];
    let ubar = |cell: usize, step: usize| u.at(cell, step).max(0.0) + kappa;
    for step in 1..grid.steps() {
        let t = grid.time(step);
        let etas: Vec<(f64, f64, f64)> = centers.iter().map(|x| eta.eval(x, t)).collect();
        let mut e_acc = 0.0;
        for cell in 0..cells {
            for axis in 0..n {
                if let Some(r) = grid.neighbor(cell, axis, 1) {
                    let (ul, ur) = (ubar(cell, step), ubar(r, step));
                    let grad = (ur - ul) / h;
                    let w = 0.5 * (etas[cell].0.powi(2) * ul.powf(beta - 1.0) + etas[r].0.powi(2) * ur.powf(beta - 1.0));
                    e_acc += w * grad * grad * vol;
                }
            }
        }
        energy[step] = 0.5 * a * beta * e_acc;
        let (mut s_acc, mut p_acc, mut l_acc) = (0.0, 0.0, 0.0);
        for cell in 0..cells {
            let (e, ex, et) = etas[cell];
            let ub = ubar(cell, step);
            let c = |k| coefficients.at(k, cell, step);
            let (b, cc, d, ee, f, g, hh) = (c(Coef::B), c(Coef::C), c(Coef::D), c(Coef::E), c(Coef::F), c(Coef::G), c(Coef::H));
            let big_f = beta * (b * b + safe_div(f * f, kappa * kappa)) + d + safe_div(g, kappa) + cc * cc / a;
            let big_h = 4.0 * a_bar * a_bar / a;
            let g_sum = ee + safe_div(hh, kappa);
            let g_prod = safe_div(ee * hh, kappa);
            let common = big_f * e * e + big_h * ex * ex;
            let time_term = 2.0 / (beta + 1.0) * e * et.abs();
            let pw = ub.powf(beta + 1.0);
            s_acc += (common + 2.0 * g_sum * e * ex + time_term) * pw * vol;
            p_acc += (common + 2.0 * g_prod * e * ex + time_term) * pw * vol;
            let bracket = match opts.bracket {
                Bracket::Corrected => ub.powf(beta + 1.0) - (beta + 1.0) * kappa.powf(beta) * ub + beta * kappa.powf(beta + 1.0),
                Bracket::Literal => ub.powf(beta - 1.0) - (b + 1.0) * kappa.powf(beta) * ub + beta * kappa.powf(beta + 1.0),
            };
            l_acc += e * e * bracket * vol;
        }
        f_sum[step] = s_acc;
        f_prod[step] = p_acc;
        slice[step] = l_acc / (beta + 1.0);
    }

    let nt = grid.nt();
    let count = opts.tau_samples.min(nt);
    let taus: Vec<usize> = (1..=count).map(|i| ((i * nt) as f64 / count as f64).round() as usize).collect();
    let mut samples = Vec::with_capacity(count);
    let mut cert = Certificate::new(Theorem::Caccioppoli, u);
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    let (mut e_int, mut s_int, mut p_int) = (0.0, 0.0, 0.0);
    let mut next = 0;
    for step in 1..=nt {
        e_int += energy[step] * dt;
        s_int += f_sum[step] * dt;
        p_int += f_prod[step] * dt;
        while next < taus.len() && taus[next] == step {
            let lhs = slice[step] + e_int;
            let rhs = s_int.max(p_int);
            let ratio = if rhs > 0.0 {
                lhs / rhs
            } else if lhs > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if lhs > rhs * (1.0 + opts.tol) + 1e-300 {
                pass = false;
            }
            if ratio > worst {
                worst = ratio;
            }
            cert.witness.push(Witness {
                label: "tau".into(),
                x: eta.center.clone(),
                t: grid.time(step),
                value: ratio,
            });
            samples.push(CaccioppoliSample {
                tau: grid.time(step),
                lhs,
                rhs,
                rhs_product: p_int,
                rhs_sum: s_int,
            });
            next += 1;
        }
    }
    cert.set("beta", beta);
    cert.set("kappa", kappa);
    cert.set("max_ratio", worst);
    cert.set("tau_samples", samples.len() as f64);
    cert.set("H", 4.0 * a_bar * a_bar / a);
    if opts.bracket == Bracket::Literal {
        cert.notes.push("literal bracket reading".into());
    }
    cert.pass = pass;
    Ok((cert, samples))
}

/// `3 e^{1/144}`: the heat-kernel Harnack ratio at the canonical geometry
/// (source at the origin, `t′ = 9ρ²`, unit diffusivity, any `ρ`).
pub fn canonical_harnack_ratio() -> f64 {
    3.0 * E.powf(1.0 / 144.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::heat_kernel;
    use crate::field::Field;
    use crate::solver::{solve, Boundary, ProblemSpec, SolverConfig};
    use crate::structure::LinearCoefficients;
    use approx::assert_relative_eq;

    fn grid1(h: f64, t: f64, dt: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, &[(0.0, 1.0)], h, t, dt).unwrap()
    }

    fn heat_sine(grid: &SpaceTimeGrid) -> SolutionField {
        let lc = LinearCoefficients::heat(grid, 1.0);
        let init = Field::static_from_fn(grid, |x| (std::f64::consts::PI * x[0]).sin());
        let spec = ProblemSpec::linear(lc, init, Boundary::Dirichlet(Field::constant(grid, 0.0))).unwrap();
        solve(&spec, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn max_principle_heat_k_zero() {
        let g = grid1(1.0 / 32.0, 0.25, 1.0 / 256.0);
        let u = heat_sine(&g);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let c = certify_max_principle(&u, 1.0, &b, 1e-10).unwrap();
        assert!(c.pass);
        assert_eq!(c.constant("k"), Some(0.0));
        // Mirror: u ≥ 0 on the boundary.
        let c = certify_max_principle(&u, 0.0, &b, 1e-10).unwrap();
        assert_eq!(c.theorem, Theorem::MinPrinciple);
        assert!(c.pass);
    }

    #[test]
    fn max_principle_rejects_bad_boundary() {
        let g = grid1(1.0 / 16.0, 0.125, 1.0 / 64.0);
        let u = SolutionField::from_fn(&g, "x", |x, _| x[0] - 0.5);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        assert!(matches!(certify_max_principle(&u, 0.0, &b, 1e-10), Err(LabError::Precondition(_))));
        let c = certify_max_principle(&u, -0.5, &b, 1e-10).unwrap();
        assert_eq!(c.theorem, Theorem::MinPrinciple);
    }

    #[test]
    fn local_bound_constant_closed_form() {
        let g = grid1(1.0 / 8.0, 0.75, 1.0 / 64.0);
        let u = SolutionField::from_fn(&g, "one", |_, _| 1.0);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let c = certify_local_bound(&u, &[0.5], 0.5625, 0.25, &b).unwrap();
        let expected = 1.0 / (0.25f64.powf(-1.5) * (0.75f64 * 0.5625).sqrt());
        assert_relative_eq!(c.constant("C").unwrap(), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 0.19245, max_relative = 1e-4);
    }

    #[test]
    fn local_bound_containment() {
        let g = grid1(1.0 / 8.0, 0.75, 1.0 / 64.0);
        let u = SolutionField::from_fn(&g, "one", |_, _| 1.0);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        assert!(matches!(
            certify_local_bound(&u, &[0.2], 0.6, 0.25, &b),
            Err(LabError::Containment { .. })
        ));
    }

    #[test]
    fn harnack_constant_is_one_and_scale_invariant() {
        let g = grid1(1.0 / 16.0, 0.5, 1.0 / 128.0);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let u = SolutionField::from_fn(&g, "c", |_, _| 3.0);
        let c = certify_harnack(&u, &[0.5], 0.5, 0.2, &b, 0.0, 1e-10).unwrap();
        assert!((c.constant("C").unwrap() - 1.0).abs() < 1e-12);
        let v = heat_sine(&g);
        let w = SolutionField::new(v.field.map(|x| 7.5 * x), "s", "s");
        let c1 = certify_harnack(&v, &[0.5], 0.5, 0.2, &b, 0.0, 1e-10).unwrap();
        let c2 = certify_harnack(&w, &[0.5], 0.5, 0.2, &b, 0.0, 1e-10).unwrap();
        assert_relative_eq!(c1.constant("C").unwrap(), c2.constant("C").unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn harnack_on_sampled_gaussian() {
        // The exact kernel sampled on a fine lattice reproduces 3 e^{1/144}.
        let h = 1.0 / 1024.0;
        let g = SpaceTimeGrid::new(1, &[(-1.0 - h / 2.0, 1.0 - h / 2.0)], h, 9.0 / 64.0, 1.0 / 65536.0).unwrap();
        let u = SolutionField::from_fn(&g, "g", |x, t| heat_kernel(1, 1.0, x[0] * x[0], t));
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let rho = 0.125;
        let c = certify_harnack(&u, &[0.0], 9.0 * rho * rho, rho, &b, 0.0, 1e-10).unwrap();
        assert_relative_eq!(c.constant("C").unwrap(), canonical_harnack_ratio(), max_relative = 0.01);
    }

    #[test]
    fn pointwise_harnack_constant_and_order() {
        let g = grid1(1.0 / 16.0, 0.5, 1.0 / 64.0);
        let u = SolutionField::from_fn(&g, "c", |_, _| 2.0);
        let pairs = lattice_pairs(&[vec![0.3], vec![0.6]], &[0.125, 0.25]);
        let c = certify_pointwise_harnack(&u, &pairs, 0.0, 1e-12).unwrap();
        assert_eq!(c.constant("C"), Some(0.0));
        let bad = vec![HarnackPair {
            x: vec![0.3],
            t: 0.125,
            y: vec![0.3],
            s: 0.25,
        }];
        assert!(certify_pointwise_harnack(&u, &bad, 0.0, 1e-12).is_err());
    }

    #[test]
    fn hoelder_linear_function() {
        let g = SpaceTimeGrid::new(1, &[(0.0, 1.0)], 1.0 / 256.0, 0.5, 1.0 / 256.0).unwrap();
        let u = SolutionField::from_fn(&g, "x", |x, _| x[0]);
        let radii = [0.2, 0.1, 0.05, 0.025];
        let c = estimate_hoelder(&u, &[0.5], 0.4, &radii, &HoelderOptions::default()).unwrap();
        assert!(c.constant("alpha").unwrap() >= 0.95, "{:?}", c.constants);
        assert!(c.pass);
    }

    #[test]
    fn hoelder_ladder_escape() {
        let g = grid1(1.0 / 64.0, 0.5, 1.0 / 64.0);
        let u = SolutionField::from_fn(&g, "x", |x, _| x[0]);
        assert!(estimate_hoelder(&u, &[0.5], 0.1, &[0.3, 0.1], &HoelderOptions::default()).is_err());
    }

    #[test]
    fn limit_behavior_on_exact_gaussian() {
        let h = 1.0 / 128.0;
        let g = SpaceTimeGrid::new(1, &[(-4.0 - h / 2.0, 4.0 - h / 2.0)], h, 0.5, 1.0 / 1024.0).unwrap();
        let u = SolutionField::from_fn(&g, "g", |x, t| heat_kernel(1, 1.0, x[0] * x[0], t));
        let c = certify_limit_behavior(&u, &[0.0], 1.0, &LimitOptions::default()).unwrap();
        assert!(c.pass && c.applicable);
        assert!((c.constant("M").unwrap() - statrs::function::erf::erf(0.5)).abs() < 1e-3);
        let c2 = c.constant("C2").unwrap();
        assert!((c2 - 0.25).abs() < 1e-3, "{c2}");
    }

    #[test]
    fn limit_behavior_zero_not_applicable() {
        let g = grid1(1.0 / 32.0, 0.25, 1.0 / 128.0);
        let u = SolutionField::from_fn(&g, "z", |_, _| 0.0);
        let c = certify_limit_behavior(&u, &[0.5], 1.0, &LimitOptions::default()).unwrap();
        assert!(!c.applicable && !c.pass);
    }

    #[test]
    fn cutoff_derivatives_match_differences() {
        let eta = Cutoff {
            center: vec![0.5, 0.5],
            radius: 0.3,
            t_start: 0.0,
            t_full: 0.1,
        };
        let (x, t) = ([0.6, 0.45], 0.04);
        let e = 1e-6;
        let (_, gx, gt) = eta.eval(&x, t);
        let dx0 = (eta.eval(&[x[0] + e, x[1]], t).0 - eta.eval(&[x[0] - e, x[1]], t).0) / (2.0 * e);
        let dx1 = (eta.eval(&[x[0], x[1] + e], t).0 - eta.eval(&[x[0], x[1] - e], t).0) / (2.0 * e);
        let dt = (eta.eval(&x, t + e).0 - eta.eval(&x, t - e).0) / (2.0 * e);
        assert_relative_eq!(gx, (dx0 * dx0 + dx1 * dx1).sqrt(), max_relative = 1e-5);
        assert_relative_eq!(gt, dt, max_relative = 1e-5);
    }

    #[test]
    fn caccioppoli_heat_and_noise_control() {
        let g = grid1(1.0 / 64.0, 0.1, 1.0 / 2000.0);
        let u = heat_sine(&g);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let eta = Cutoff::centered(&g);
        let coefs = StructureCoefficients::default();
        for beta in [1.0, 2.0, 3.0] {
            let opts = CaccioppoliOptions {
                beta,
                ..Default::default()
            };
            let (c, s) = check_caccioppoli(&u, &eta, &b, &coefs, &opts).unwrap();
            assert!(c.pass, "beta {beta}: {:?}", c.constants);
            assert_eq!(s.len(), 20);
        }
        let mut noisy = u.field.clone();
        for (i, v) in noisy.values_mut().iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.05 } else { -0.05 };
        }
        let noisy = SolutionField::new(noisy, "noise", "noise");
        let (c, _) = check_caccioppoli(&noisy, &eta, &b, &coefs, &CaccioppoliOptions::default()).unwrap();
        assert!(!c.pass);
    }

    #[test]
    fn caccioppoli_zero_solution_with_kappa() {
        let g = grid1(1.0 / 32.0, 0.1, 1.0 / 200.0);
        let u = SolutionField::from_fn(&g, "z", |_, _| 0.0);
        let b = StructureBounds::homogeneous(1.0, 1.0, &g);
        let opts = CaccioppoliOptions {
            kappa: 0.5,
            ..Default::default()
        };
        let (c, _) = check_caccioppoli(&u, &Cutoff::centered(&g), &b, &StructureCoefficients::default(), &opts).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn certificate_json_roundtrip_with_infinity() {
        let g = grid1(1.0 / 8.0, 0.125, 1.0 / 8.0);
        let u = SolutionField::from_fn(&g, "z", |_, _| 0.0);
        let mut c = Certificate::new(Theorem::Harnack, &u);
        c.set("C", f64::INFINITY);
        let s = serde_json::to_string(&c).unwrap();
        let back: Certificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.constant("C"), Some(f64::INFINITY));
    }
}
