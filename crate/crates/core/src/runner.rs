//! Executes an experiment configuration: runs the action pipeline, writes
//! field and plot files and emits report records.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::certify::{
    certify_harnack, certify_limit_behavior, certify_local_bound, certify_max_principle, certify_pointwise_harnack,
    check_caccioppoli, estimate_hoelder, lattice_pairs, CaccioppoliOptions, Certificate, Cutoff, HoelderOptions,
    LimitOptions,
};
use crate::config::{Action, ExperimentConfig, ProblemConfig, ProblemKindConfig, SolutionSource, TheoremConfig, WidderOp};
use crate::error::{LabError, Result};
use crate::field::SolutionField;
use crate::grid::SpaceTimeGrid;
use crate::io::{slab_rows, write_columns, write_field};
use crate::kernel::{
    check_chapman_kolmogorov, elliptic_green, estimate_kernel, fit_gaussian_bounds, gaussian_violation,
    second_moment_alpha, KernelOptions, KernelPropagator,
};
use crate::report::{append_records, ReportRecord, REPORT_SCHEMA_VERSION};
use crate::solver::{default_test_functions, mass_balance, solve, weak_residual, Coefficients, ProblemSpec};
use crate::structure::{
    check_exponent_pair, compute_theta, ellipticity_check, linear_structure, probe_samples, verify_structure,
    StructureBounds, StructureCoefficients,
};
use crate::widder::{check_growth, initial_trace, recover_atoms, represent, trace_roundtrip};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Omits wall times so reruns are byte-identical.
    pub reproducible: bool,
    pub write_artifacts: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            reproducible: true,
            write_artifacts: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<ReportRecord>,
    pub report_path: PathBuf,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    grid: SpaceTimeGrid,
    dir: PathBuf,
    opts: &'a RunOptions,
    inputs_hash: String,
    records: Vec<ReportRecord>,
}

impl Ctx<'_> {
    fn push(&mut self, action: String, label: String, problem_hash: Option<String>, pass: bool, payload: Value, artifacts: Vec<String>, started: Instant) {
        self.records.push(ReportRecord {
            schema_version: REPORT_SCHEMA_VERSION,
            action,
            name: self.cfg.name.clone(),
            label,
            inputs_hash: self.inputs_hash.clone(),
            grid_hash: self.grid.hash(),
            problem_hash,
            pass,
            payload,
            wall_time_s: (!self.opts.reproducible).then(|| started.elapsed().as_secs_f64()),
            artifacts,
        });
    }

    fn artifact_field(&self, stem: &str, field: &crate::field::Field, out: &mut Vec<String>) -> Result<()> {
        if self.opts.write_artifacts {
            write_field(&self.dir, stem, field)?;
            out.push(format!("{stem}.json"));
            out.push(format!("{stem}.bin"));
        }
        Ok(())
    }

    fn artifact_columns(&self, file: &str, header: &[&str], rows: &[Vec<f64>], out: &mut Vec<String>) -> Result<()> {
        if self.opts.write_artifacts {
            write_columns(&self.dir.join(file), header, rows)?;
            out.push(file.to_string());
        }
        Ok(())
    }
}

fn slug(label: &str) -> String {
    if label.is_empty() {
        String::new()
    } else {
        format!("_{}", label.replace(['=', ' ', '.'], "_"))
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Bounds and coefficient fields for the certifiers; linear problems are
/// mapped onto the structure interface.
pub fn structure_of(spec: &ProblemSpec, problem: &ProblemConfig) -> Result<(StructureBounds, StructureCoefficients)> {
    let (bounds, coefs) = match &spec.coefficients {
        Coefficients::Structure(sf) => (sf.bounds.clone(), sf.coefficients.clone()),
        Coefficients::Linear(lc) => {
            let eps = if lc.drift_flux.is_some() || lc.flux_source.is_some() { 0.5 } else { 1e-6 };
            let sf = linear_structure(lc, eps)?;
            (sf.bounds, sf.coefficients)
        }
    };
    if problem.pairs.is_empty() {
        return Ok((bounds, coefs));
    }
    let b = StructureBounds::from_fields(bounds.a, bounds.a_bar, &coefs, &problem.pairs, &spec.grid)?;
    Ok((b, coefs))
}

fn kernel_options(cfg: &ExperimentConfig, base: &KernelOptions) -> KernelOptions {
    KernelOptions {
        solver: cfg.solver.clone(),
        ..base.clone()
    }
}

fn obtain_solution(cfg: &ExperimentConfig, spec: &ProblemSpec, source: &SolutionSource) -> Result<SolutionField> {
    match source {
        SolutionSource::Solve => solve(spec, &cfg.solver),
        SolutionSource::Kernel { source } => {
            let lc = spec
                .linear_coefficients()
                .ok_or_else(|| LabError::Precondition("kernel solutions need a linear problem".into()))?;
            let opts = KernelOptions {
                tail_tol: f64::MAX,
                ..kernel_options(cfg, &KernelOptions::default())
            };
            let k = estimate_kernel(lc, source, 0.0, &opts)?;
            Ok(SolutionField::new(k.field, format!("kernel:{}", spec.hash()), cfg.solver.hash()))
        }
    }
}

/// Runs the configured action and writes `report.jsonl` (replacing any
/// previous report of the same experiment).
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let name = if cfg.name.is_empty() { "experiment".to_string() } else { cfg.name.clone() };
    let dir = opts.out_dir.join(&name);
    std::fs::create_dir_all(&dir)?;
    let mut ctx = Ctx {
        cfg,
        grid: grid.clone(),
        dir: dir.clone(),
        opts,
        inputs_hash: cfg.hash(),
        records: Vec::new(),
    };
    let base = cfg.base_dir.clone();
    let mut trend: Vec<(f64, f64)> = Vec::new();
    for (contrast, problem) in cfg.problems() {
        let label = contrast.map(|c| format!("contrast={c}")).unwrap_or_default();
        if let Some(v) = run_one(&mut ctx, &problem, &label, &base)? {
            if let Some(c) = contrast {
                trend.push((c, v));
            }
        }
    }
    if trend.len() >= 2 {
        if let Action::Certify { theorem, .. } = &cfg.action {
            let (constant, increasing) = match theorem {
                TheoremConfig::Hoelder { .. } => ("alpha", false),
                _ => ("C", true),
            };
            let monotone = trend.windows(2).all(|w| {
                let slack = 1e-9 * w[0].1.abs().max(1.0);
                if increasing {
                    w[1].1 >= w[0].1 - slack
                } else {
                    w[1].1 <= w[0].1 + slack
                }
            });
            let payload = json!({
                "constant": constant,
                "contrasts": trend.iter().map(|p| p.0).collect::<Vec<_>>(),
                "values": trend.iter().map(|p| p.1).collect::<Vec<_>>(),
                "expected_direction": if increasing { "non_decreasing" } else { "non_increasing" },
                "monotone": monotone,
            });
            ctx.push("certify.trend".into(), "trend".into(), None, monotone, payload, Vec::new(), Instant::now());
        }
    }
    let report_path = dir.join("report.jsonl");
    if report_path.exists() {
        std::fs::remove_file(&report_path)?;
    }
    append_records(&report_path, &ctx.records)?;
    Ok(RunOutcome {
        records: ctx.records,
        report_path,
    })
}

/// Returns the trend constant for certify actions.
fn run_one(ctx: &mut Ctx, problem: &ProblemConfig, label: &str, base: &Path) -> Result<Option<f64>> {
    let cfg = ctx.cfg;
    let grid = ctx.grid.clone();
    let started = Instant::now();
    let tag = cfg.action.tag();
    let sl = slug(label);
    match &cfg.action {
        Action::ValidateStructure { samples, u_max, p_max } => {
            let mut pass = true;
            let mut pairs = serde_json::Map::new();
            for (coef, pair) in &problem.pairs {
                let check = check_exponent_pair(pair, grid.n());
                pass &= check.pass;
                pairs.insert(coef.to_string(), to_value(&check)?);
            }
            let theta = if pass {
                let list: Vec<_> = problem.pairs.iter().map(|(c, p)| (*c, *p)).collect();
                compute_theta(&list, grid.n()).ok()
            } else {
                None
            };
            let (ellipticity, sf) = match problem.kind {
                ProblemKindConfig::Linear => {
                    let lc = problem.linear_coefficients(&grid, base)?;
                    let ell = match ellipticity_check(&lc) {
                        Ok(r) => to_value(&r)?,
                        Err(LabError::NotParabolic { nu_empirical }) => {
                            pass = false;
                            json!({"passes": false, "nu_empirical": nu_empirical})
                        }
                        Err(e) => return Err(e),
                    };
                    (ell, linear_structure(&lc, 0.5)?)
                }
                ProblemKindConfig::Quasilinear => {
                    let spec = problem.build(&grid, base)?;
                    match spec.coefficients {
                        Coefficients::Structure(sf) => (Value::Null, sf),
                        Coefficients::Linear(_) => unreachable!("quasilinear config builds a structure"),
                    }
                }
            };
            let report = verify_structure(&sf, &probe_samples(&grid, *samples, *u_max, *p_max, cfg.seed));
            pass &= report.passes;
            let payload = json!({
                "pairs": pairs,
                "theta": theta,
                "ellipticity": ellipticity,
                "structure": report,
                "a": sf.bounds.a,
                "a_bar": sf.bounds.a_bar,
            });
            ctx.push(tag, label.into(), None, pass, payload, Vec::new(), started);
            Ok(None)
        }
        Action::Solve => {
            let spec = problem.build(&grid, base)?;
            let u = solve(&spec, &cfg.solver)?;
            let residual = match weak_residual(&u, &spec, &default_test_functions(&grid)) {
                Ok(r) => Some(r.iter().fold(0.0f64, |a, b| a.max(*b))),
                Err(_) => None,
            };
            let mass = mass_balance(&u);
            let mut artifacts = Vec::new();
            ctx.artifact_field(&format!("solution{sl}"), &u.field, &mut artifacts)?;
            ctx.artifact_columns(&format!("final_profile{sl}.dat"), &["x...", "u"], &slab_rows(&u.field, grid.nt()), &mut artifacts)?;
            let rows: Vec<Vec<f64>> = mass.iter().enumerate().map(|(s, m)| vec![grid.time(s), *m]).collect();
            ctx.artifact_columns(&format!("mass{sl}.dat"), &["t", "mass"], &rows, &mut artifacts)?;
            let payload = json!({
                "max": u.field.max(),
                "min": u.field.min(),
                "mass_initial": mass[0],
                "mass_final": mass[grid.nt()],
                "weak_residual_max": residual,
                "steps": grid.nt(),
                "content_hash": u.field.content_hash(),
            });
            let pass = u.field.all_finite();
            ctx.push(tag, label.into(), Some(spec.hash()), pass, payload, artifacts, started);
            Ok(None)
        }
        Action::Kernel { source, tau, options } => {
            let spec = problem.build(&grid, base)?;
            let lc = spec.linear_coefficients().ok_or_else(|| LabError::Precondition("kernels need a linear problem".into()))?;
            let k = estimate_kernel(lc, source, *tau, &kernel_options(cfg, options))?;
            let after: Vec<usize> = (k.tau_step + 1..grid.steps()).collect();
            let mass_err = after.iter().map(|&s| (k.mass(s) - 1.0).abs()).fold(0.0f64, f64::max);
            let mut artifacts = Vec::new();
            ctx.artifact_field(&format!("kernel{sl}"), &k.field, &mut artifacts)?;
            ctx.artifact_columns(&format!("kernel_final{sl}.dat"), &["x...", "gamma"], &slab_rows(&k.field, grid.nt()), &mut artifacts)?;
            let payload = json!({
                "source": k.source,
                "tau": k.tau(),
                "max_mass_error": mass_err,
                "max_boundary_mass": k.boundary_mass.iter().fold(0.0f64, |a, b| a.max(*b)),
                "tail_steps": k.effective_box.iter().filter(|b| **b).count(),
                "second_moment_alpha": second_moment_alpha(&k),
                "min": k.field.min(),
            });
            ctx.push(tag, label.into(), Some(spec.hash()), k.field.all_finite(), payload, artifacts, started);
            Ok(None)
        }
        Action::CkCheck { source, tau, eta, t, options } => {
            let spec = problem.build(&grid, base)?;
            let lc = spec.linear_coefficients().ok_or_else(|| LabError::Precondition("kernels need a linear problem".into()))?;
            let r = check_chapman_kolmogorov(lc, source, *tau, *eta, *t, &kernel_options(cfg, options))?;
            let payload = json!({"report": r});
            ctx.push(tag, label.into(), Some(spec.hash()), r.max_relative_residual.is_finite(), payload, Vec::new(), started);
            Ok(None)
        }
        Action::GaussianFit { source, region, options } => {
            let spec = problem.build(&grid, base)?;
            let lc = spec.linear_coefficients().ok_or_else(|| LabError::Precondition("kernels need a linear problem".into()))?;
            let k = estimate_kernel(lc, source, 0.0, &kernel_options(cfg, options))?;
            let fit = fit_gaussian_bounds(&k, region)?;
            let violation = gaussian_violation(&k, region, &fit);
            let payload = json!({"fit": fit, "independent_violation": violation});
            let pass = fit.c_fit.is_finite() && violation <= 1e-9;
            ctx.push(tag, label.into(), Some(spec.hash()), pass, payload, Vec::new(), started);
            Ok(None)
        }
        Action::Green { source, options } => {
            let spec = problem.build(&grid, base)?;
            let lc = spec.linear_coefficients().ok_or_else(|| LabError::Precondition("Green functions need a linear problem".into()))?;
            let opts = crate::kernel::GreenOptions {
                kernel: kernel_options(cfg, &options.kernel),
                ..options.clone()
            };
            let g = elliptic_green(lc, source, &opts)?;
            let mut artifacts = Vec::new();
            let rows: Vec<Vec<f64>> = g.samples.iter().map(|s| vec![s.r, s.green, s.ratio]).collect();
            ctx.artifact_columns(&format!("green_annulus{sl}.dat"), &["r", "G", "G*4*pi*r"], &rows, &mut artifacts)?;
            let max_dev = g.samples.iter().map(|s| (s.ratio - 1.0).abs()).fold(0.0f64, f64::max);
            let payload = json!({
                "k_fit": g.k_fit,
                "k_raw": g.k_raw,
                "tail_fraction": g.tail_fraction,
                "t_max": g.t_max,
                "annulus": [g.annulus.0, g.annulus.1],
                "samples": g.samples.len(),
                "max_ratio_deviation": max_dev,
            });
            ctx.push(tag, label.into(), Some(spec.hash()), g.k_fit.is_finite(), payload, artifacts, started);
            Ok(None)
        }
        Action::Certify { theorem, solution } => {
            let spec = problem.build(&grid, base)?;
            let u = obtain_solution(cfg, &spec, solution)?;
            let (bounds, coefs) = structure_of(&spec, problem)?;
            let tol = cfg.tolerances.inequality;
            let mut certs: Vec<(String, Certificate, Value)> = Vec::new();
            match theorem {
                TheoremConfig::MaxPrinciple { m } => {
                    certs.push((label.into(), certify_max_principle(&u, *m, &bounds, cfg.tolerances.max_principle)?, Value::Null));
                }
                TheoremConfig::LocalBound { center, t, rho } => {
                    certs.push((label.into(), certify_local_bound(&u, center, *t, *rho, &bounds)?, Value::Null));
                }
                TheoremConfig::Harnack { center, t, rho, k } => {
                    certs.push((label.into(), certify_harnack(&u, center, *t, *rho, &bounds, *k, tol)?, Value::Null));
                }
                TheoremConfig::PointwiseHarnack { points, times, k } => {
                    let pairs = lattice_pairs(points, times);
                    certs.push((label.into(), certify_pointwise_harnack(&u, &pairs, *k, tol)?, Value::Null));
                }
                TheoremConfig::Hoelder { x, t, radii, k } => {
                    let o = HoelderOptions {
                        k: *k,
                        ..HoelderOptions::default()
                    };
                    certs.push((label.into(), estimate_hoelder(&u, x, *t, radii, &o)?, Value::Null));
                }
                TheoremConfig::LimitBehavior {
                    origin,
                    alpha,
                    k,
                    exclusion_steps,
                } => {
                    let o = LimitOptions {
                        k: *k,
                        exclusion_steps: *exclusion_steps,
                        ..LimitOptions::default()
                    };
                    certs.push((label.into(), certify_limit_behavior(&u, origin, *alpha, &o)?, Value::Null));
                }
                TheoremConfig::Caccioppoli {
                    betas,
                    kappa,
                    bracket,
                    tau_samples,
                    cutoff,
                } => {
                    let eta = cutoff.clone().unwrap_or_else(|| Cutoff::centered(&grid));
                    for beta in betas {
                        let o = CaccioppoliOptions {
                            beta: *beta,
                            kappa: *kappa,
                            bracket: *bracket,
                            tau_samples: *tau_samples,
                            tol,
                        };
                        let (c, samples) = check_caccioppoli(&u, &eta, &bounds, &coefs, &o)?;
                        let l = if label.is_empty() { format!("beta={beta}") } else { format!("{label},beta={beta}") };
                        certs.push((l, c, to_value(&samples)?));
                    }
                }
            }
            let mut trend_value = None;
            for (l, cert, extra) in certs {
                trend_value = match theorem {
                    TheoremConfig::Hoelder { .. } => cert.constant("alpha"),
                    _ => cert.constant("C"),
                };
                let mut payload = json!({ "certificate": cert });
                if !extra.is_null() {
                    payload["samples"] = extra;
                }
                ctx.push(tag.clone(), l, Some(u.problem_hash.clone()), cert.pass, payload, Vec::new(), started);
            }
            Ok(trend_value)
        }
        Action::Widder { op } => {
            let spec = problem.build(&grid, base)?;
            let lc = spec.linear_coefficients().ok_or_else(|| LabError::Precondition("Widder operations need a linear problem".into()))?;
            let kopts = KernelOptions {
                tail_tol: f64::MAX,
                ..kernel_options(cfg, &KernelOptions::default())
            };
            match op {
                WidderOp::CheckGrowth { measure } => {
                    let m = measure.build(&grid)?;
                    let r = check_growth(&m);
                    ctx.push(tag, label.into(), None, r.holds, json!({"growth": r}), Vec::new(), started);
                }
                WidderOp::Represent { measure } => {
                    let m = measure.build(&grid)?;
                    let prop = KernelPropagator::new(lc, &kopts)?;
                    let u = represent(&prop, &m)?;
                    let mut artifacts = Vec::new();
                    ctx.artifact_field(&format!("represented{sl}"), &u.field, &mut artifacts)?;
                    let max = u.field.max();
                    let payload = json!({
                        "measure_hash": m.hash(),
                        "max": max,
                        "min": u.field.min(),
                        "mass_final": u.field.integral(grid.nt()),
                    });
                    let pass = u.field.min() >= -1e-10 * max.abs().max(1.0);
                    ctx.push(tag, label.into(), Some(u.problem_hash.clone()), pass, payload, artifacts, started);
                }
                WidderOp::Trace { measure, psis, ladder } => {
                    let m = measure.build(&grid)?;
                    let prop = KernelPropagator::new(lc, &kopts)?;
                    let u = represent(&prop, &m)?;
                    let sigma = check_growth(&m).sigma.filter(|s| *s > 0.0);
                    let traces = initial_trace(&u, psis, sigma, ladder)?;
                    let snapped = m.snapped(&grid)?;
                    let expected: Vec<f64> = psis.iter().map(|p| snapped.integrate(p)).collect();
                    let pass = traces.iter().all(|t| t.value.is_finite());
                    let payload = json!({"traces": traces, "expected": expected});
                    ctx.push(tag, label.into(), Some(u.problem_hash.clone()), pass, payload, Vec::new(), started);
                }
                WidderOp::Recover { measure, options } => {
                    let m = measure.build(&grid)?;
                    let prop = KernelPropagator::new(lc, &kopts)?;
                    let u = represent(&prop, &m)?;
                    let atoms = recover_atoms(&u, options)?;
                    let payload = json!({"atoms": atoms, "true_atoms": m.atoms});
                    ctx.push(tag, label.into(), Some(u.problem_hash.clone()), true, payload, Vec::new(), started);
                }
                WidderOp::Roundtrip { measure, psis, options } => {
                    let m = measure.build(&grid)?;
                    let o = crate::widder::RoundtripOptions {
                        kernel: KernelOptions {
                            solver: cfg.solver.clone(),
                            ..options.kernel.clone()
                        },
                        ..options.clone()
                    };
                    let r = trace_roundtrip(&m, lc, psis, &o)?;
                    let payload = json!({
                        "certificate": r.certificate,
                        "traces": r.traces,
                        "expected": r.expected,
                        "weak_residuals": r.weak_residuals,
                    });
                    let pass = r.certificate.pass;
                    ctx.push(tag, label.into(), Some(r.field.problem_hash.clone()), pass, payload, Vec::new(), started);
                }
            }
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat_config(action: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
            "schema_version": 1,
            "name": "heat",
            "grid": {{"n": 1, "lower": [0.0], "upper": [1.0], "h": 0.03125, "t_final": 0.125, "dt": 0.001953125}},
            "problem": {{
                "diffusion": {{"family": "constant", "value": 1.0}},
                "initial": {{"kind": "sine", "amplitude": 1.0, "wavenumbers": [1.0]}},
                "boundary": {{"type": "dirichlet", "data": {{"kind": "constant", "value": 0.0}}}}
            }},
            "action": {action}
        }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn solve_smoke_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&heat_config(r#"{"type": "solve"}"#), &RunOptions::new(dir.path())).unwrap();
        assert!(out.pass());
        let rec = &out.records[0];
        assert!(rec.payload["weak_residual_max"].as_f64().unwrap() < 5e-2);
        for a in &rec.artifacts {
            assert!(dir.path().join("heat").join(a).exists(), "{a}");
        }
        assert!(rec.wall_time_s.is_none());
    }

    #[test]
    fn reproducible_reports_are_identical() {
        let cfg = heat_config(r#"{"type": "certify", "theorem": "max_principle", "m": 1.0}"#);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run(&cfg, &RunOptions::new(d1.path())).unwrap();
        let b = run(&cfg, &RunOptions::new(d2.path())).unwrap();
        let ta = std::fs::read(&a.report_path).unwrap();
        let tb = std::fs::read(&b.report_path).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn validate_structure_rejects_p_two() {
        let mut cfg = heat_config(r#"{"type": "validate_structure", "samples": 50}"#);
        cfg.problem.pairs.insert(
            crate::structure::Coef::B,
            crate::structure::ExponentPair::new(2.0, f64::INFINITY, crate::structure::PairKind::FirstOrder),
        );
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, &RunOptions::new(dir.path())).unwrap();
        assert!(!out.pass());
        let reason = out.records[0].payload["pairs"]["b"]["reason"].as_str().unwrap().to_string();
        assert!(reason.contains("p > 2"), "{reason}");
    }

    #[test]
    fn harnack_contrast_sweep_emits_trend() {
        let text = r#"{
            "schema_version": 1,
            "name": "sweep",
            "grid": {"n": 1, "lower": [0.0], "upper": [1.0], "h": 0.03125, "t_final": 0.25, "dt": 0.00390625},
            "problem": {
                "diffusion": {"family": "checkerboard", "contrast": 1.0, "period": 0.125},
                "initial": {"kind": "constant", "value": 1.0},
                "boundary": {"type": "dirichlet", "data": {"kind": "constant", "value": 1.0}},
                "contrasts": [1.0, 10.0]
            },
            "action": {"type": "certify", "theorem": "harnack", "center": [0.5], "t": 0.25, "rho": 0.125}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, &RunOptions::new(dir.path())).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.records[2].action, "certify.trend");
        let reread = crate::report::read_records(&out.report_path).unwrap();
        assert_eq!(reread.len(), 3);
    }
}
