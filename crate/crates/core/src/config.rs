//! Experiment configuration: one JSON document per experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::AnalyticFn;
use crate::certify::{Bracket, Cutoff};
use crate::error::{LabError, Result};
use crate::families::CoefficientFamily;
use crate::field::Field;
use crate::grid::{GridDescriptor, SpaceTimeGrid};
use crate::hashing::digest_json;
use crate::io::read_field;
use crate::kernel::{FitRegion, GreenOptions, KernelOptions};
use crate::solver::{Boundary, ProblemSpec, SolverConfig};
use crate::structure::{
    bounded_sine_structure, ellipticity_check, linear_structure, Coef, Diffusion, ExponentPair, LinearCoefficients,
};
use crate::widder::{Atom, BorelMeasure, GrowthFamily, RecoverOptions, RoundtripOptions, TraceLadder, TraceTestFunction};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn config_err(path: &str, reason: impl Into<String>) -> LabError {
    LabError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

/// A coefficient given by a named family or loaded from a field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSource {
    Family(CoefficientFamily),
    File { file: PathBuf },
}

impl CoefficientSource {
    pub fn build(&self, grid: &SpaceTimeGrid, base: &Path, path: &str) -> Result<Field> {
        match self {
            CoefficientSource::Family(f) => f.build(grid).map_err(|e| prefix(path, e)),
            CoefficientSource::File { file } => {
                let full = base.join(file);
                if !full.exists() {
                    return Err(config_err(path, format!("file {} does not exist", full.display())));
                }
                let field = read_field(&full)?;
                if field.grid() != grid {
                    return Err(config_err(path, "field file grid differs from the experiment grid"));
                }
                Ok(field)
            }
        }
    }

    fn with_contrast(&self, c: f64) -> Self {
        match self {
            CoefficientSource::Family(f) => CoefficientSource::Family(f.with_contrast(c)),
            other => other.clone(),
        }
    }
}

fn prefix(path: &str, e: LabError) -> LabError {
    match e {
        LabError::Config { path: p, reason } => config_err(&format!("{path}.{p}"), reason),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiffusionConfig {
    Isotropic(CoefficientSource),
    Diagonal(Vec<CoefficientSource>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKindConfig {
    #[default]
    Linear,
    Quasilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum StructureConfig {
    /// The linear problem re-expressed through the structure interface.
    Linear { eps: f64 },
    BoundedSine { c: CoefficientSource, p_cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundaryConfig {
    Dirichlet { data: AnalyticFn },
    NoFlux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub kind: ProblemKindConfig,
    pub diffusion: DiffusionConfig,
    /// Constant `B_j`.
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    /// `C`
    #[serde(default)]
    pub reaction: Option<CoefficientSource>,
    /// `G`
    #[serde(default)]
    pub source: Option<AnalyticFn>,
    #[serde(default)]
    pub structure: Option<StructureConfig>,
    #[serde(default = "zero_fn")]
    pub initial: AnalyticFn,
    pub boundary: BoundaryConfig,
    /// Exponent pairs for the coefficient norms; `(∞, ∞)` when absent.
    #[serde(default)]
    pub pairs: BTreeMap<Coef, ExponentPair>,
    /// Contrast sweep applied to every family in the problem.
    #[serde(default)]
    pub contrasts: Option<Vec<f64>>,
}

fn zero_fn() -> AnalyticFn {
    AnalyticFn::Constant { value: 0.0 }
}

impl ProblemConfig {
    pub fn with_contrast(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.diffusion = match &self.diffusion {
            DiffusionConfig::Isotropic(s) => DiffusionConfig::Isotropic(s.with_contrast(c)),
            DiffusionConfig::Diagonal(v) => DiffusionConfig::Diagonal(v.iter().map(|s| s.with_contrast(c)).collect()),
        };
        if let Some(StructureConfig::BoundedSine { c: src, p_cap }) = &self.structure {
            out.structure = Some(StructureConfig::BoundedSine {
                c: src.with_contrast(c),
                p_cap: *p_cap,
            });
        }
        out.contrasts = None;
        out
    }

    pub fn linear_coefficients(&self, grid: &SpaceTimeGrid, base: &Path) -> Result<LinearCoefficients> {
        let n = grid.n();
        let diffusion = match &self.diffusion {
            DiffusionConfig::Isotropic(s) => Diffusion::Isotropic(s.build(grid, base, "problem.diffusion")?),
            DiffusionConfig::Diagonal(v) => {
                if v.len() != n {
                    return Err(config_err("problem.diffusion", format!("expected {n} diagonal entries, got {}", v.len())));
                }
                let fields = v
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.build(grid, base, &format!("problem.diffusion[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                Diffusion::Diagonal(fields)
            }
        };
        let nu = match &diffusion {
            Diffusion::Isotropic(a) => a.min(),
            Diffusion::Diagonal(v) | Diffusion::Full(v) => v.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min),
        };
        let mut lc = LinearCoefficients {
            n,
            diffusion,
            drift_flux: None,
            drift: None,
            reaction: None,
            flux_source: None,
            source: None,
            nu,
        };
        if let Some(b) = &self.drift {
            if b.len() != n {
                return Err(config_err("problem.drift", format!("expected {n} components")));
            }
            lc.drift = Some(b.iter().map(|v| Field::constant(grid, *v)).collect());
        }
        if let Some(c) = &self.reaction {
            lc.reaction = Some(c.build(grid, base, "problem.reaction")?);
        }
        if let Some(g) = &self.source {
            lc.source = Some(g.field(grid));
        }
        Ok(lc)
    }

    pub fn boundary(&self, grid: &SpaceTimeGrid) -> Boundary {
        match &self.boundary {
            BoundaryConfig::Dirichlet { data } => Boundary::Dirichlet(data.field(grid)),
            BoundaryConfig::NoFlux => Boundary::NoFlux,
        }
    }

    pub fn build(&self, grid: &SpaceTimeGrid, base: &Path) -> Result<ProblemSpec> {
        let initial = self.initial.initial_field(grid);
        let boundary = self.boundary(grid);
        match self.kind {
            ProblemKindConfig::Linear => {
                let lc = self.linear_coefficients(grid, base)?;
                ellipticity_check(&lc)?;
                ProblemSpec::linear(lc, initial, boundary)
            }
            ProblemKindConfig::Quasilinear => {
                let sf = match &self.structure {
                    None => return Err(config_err("problem.structure", "quasilinear problems need a structure")),
                    Some(StructureConfig::Linear { eps }) => linear_structure(&self.linear_coefficients(grid, base)?, *eps)?,
                    Some(StructureConfig::BoundedSine { c, p_cap }) => {
                        bounded_sine_structure(c.build(grid, base, "problem.structure.c")?, *p_cap)?
                    }
                };
                ProblemSpec::quasilinear(sf, grid, initial, boundary)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "theorem", rename_all = "snake_case")]
pub enum TheoremConfig {
    MaxPrinciple {
        m: f64,
    },
    LocalBound {
        center: Vec<f64>,
        t: f64,
        rho: f64,
    },
    Harnack {
        center: Vec<f64>,
        t: f64,
        rho: f64,
        #[serde(default)]
        k: f64,
    },
    PointwiseHarnack {
        points: Vec<Vec<f64>>,
        times: Vec<f64>,
        #[serde(default)]
        k: f64,
    },
    Hoelder {
        x: Vec<f64>,
        t: f64,
        radii: Vec<f64>,
        #[serde(default)]
        k: f64,
    },
    LimitBehavior {
        origin: Vec<f64>,
        alpha: f64,
        #[serde(default)]
        k: f64,
        #[serde(default = "five")]
        exclusion_steps: usize,
    },
    Caccioppoli {
        #[serde(default = "betas")]
        betas: Vec<f64>,
        #[serde(default)]
        kappa: f64,
        #[serde(default = "corrected")]
        bracket: Bracket,
        #[serde(default = "twenty")]
        tau_samples: usize,
        #[serde(default)]
        cutoff: Option<Cutoff>,
    },
}

fn five() -> usize {
    5
}
fn twenty() -> usize {
    20
}
fn betas() -> Vec<f64> {
    vec![1.0]
}
fn corrected() -> Bracket {
    Bracket::Corrected
}

impl TheoremConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            TheoremConfig::MaxPrinciple { .. } => "max_principle",
            TheoremConfig::LocalBound { .. } => "local_bound",
            TheoremConfig::Harnack { .. } => "harnack",
            TheoremConfig::PointwiseHarnack { .. } => "pointwise_harnack",
            TheoremConfig::Hoelder { .. } => "hoelder",
            TheoremConfig::LimitBehavior { .. } => "limit_behavior",
            TheoremConfig::Caccioppoli { .. } => "caccioppoli",
        }
    }
}

/// Where the certified solution comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum SolutionSource {
    #[default]
    Solve,
    /// The fundamental solution from `source` at `t = 0`.
    Kernel { source: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub density: Option<AnalyticFn>,
    #[serde(default)]
    pub growth: Option<GrowthFamily>,
}

impl MeasureConfig {
    pub fn build(&self, grid: &SpaceTimeGrid) -> Result<BorelMeasure> {
        let density = self.density.as_ref().map(|d| d.initial_field(grid));
        if self.atoms.is_empty() && density.is_none() {
            return Ok(BorelMeasure {
                growth: self.growth,
                ..BorelMeasure::zero(grid)
            });
        }
        BorelMeasure::new(self.atoms.clone(), density, self.growth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WidderOp {
    CheckGrowth {
        measure: MeasureConfig,
    },
    Represent {
        measure: MeasureConfig,
    },
    Trace {
        measure: MeasureConfig,
        psis: Vec<TraceTestFunction>,
        #[serde(default)]
        ladder: TraceLadder,
    },
    Recover {
        measure: MeasureConfig,
        #[serde(default)]
        options: RecoverOptions,
    },
    Roundtrip {
        measure: MeasureConfig,
        psis: Vec<TraceTestFunction>,
        #[serde(default)]
        options: RoundtripOptions,
    },
}

impl WidderOp {
    pub fn tag(&self) -> &'static str {
        match self {
            WidderOp::CheckGrowth { .. } => "check_growth",
            WidderOp::Represent { .. } => "represent",
            WidderOp::Trace { .. } => "trace",
            WidderOp::Recover { .. } => "recover",
            WidderOp::Roundtrip { .. } => "roundtrip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Solve,
    ValidateStructure {
        #[serde(default = "probe_count")]
        samples: usize,
        #[serde(default = "ten")]
        u_max: f64,
        #[serde(default = "ten")]
        p_max: f64,
    },
    Kernel {
        source: Vec<f64>,
        #[serde(default)]
        tau: f64,
        #[serde(default)]
        options: KernelOptions,
    },
    CkCheck {
        source: Vec<f64>,
        #[serde(default)]
        tau: f64,
        eta: f64,
        t: f64,
        #[serde(default)]
        options: KernelOptions,
    },
    GaussianFit {
        source: Vec<f64>,
        #[serde(default)]
        region: FitRegion,
        #[serde(default)]
        options: KernelOptions,
    },
    Green {
        source: Vec<f64>,
        #[serde(default)]
        options: GreenOptions,
    },
    Certify {
        #[serde(flatten)]
        theorem: TheoremConfig,
        #[serde(default)]
        solution: SolutionSource,
    },
    Widder {
        #[serde(flatten)]
        op: WidderOp,
    },
}

fn probe_count() -> usize {
    1000
}
fn ten() -> f64 {
    10.0
}

impl Action {
    pub fn tag(&self) -> String {
        match self {
            Action::Solve => "solve".into(),
            Action::ValidateStructure { .. } => "validate_structure".into(),
            Action::Kernel { .. } => "kernel".into(),
            Action::CkCheck { .. } => "ck_check".into(),
            Action::GaussianFit { .. } => "gaussian_fit".into(),
            Action::Green { .. } => "green".into(),
            Action::Certify { theorem, .. } => format!("certify.{}", theorem.tag()),
            Action::Widder { op } => format!("widder.{}", op.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack for exact-inequality checks.
    pub inequality: f64,
    /// Absolute slack for the discrete maximum principle.
    pub max_principle: f64,
    /// Relative tolerance when comparing against baselines.
    pub baseline: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            inequality: 1e-6,
            max_principle: 1e-8,
            baseline: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub grid: GridDescriptor,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub action: Action,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(&format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        SpaceTimeGrid::from_descriptor(&self.grid).map_err(|e| config_err("grid", e.to_string()))?;
        self.solver.validate().map_err(|e| config_err("solver", e.to_string()))?;
        let t = &self.tolerances;
        for (name, v) in [("inequality", t.inequality), ("max_principle", t.max_principle), ("baseline", t.baseline)] {
            if !(v > 0.0) {
                return Err(config_err(&format!("tolerances.{name}"), "must be positive"));
            }
        }
        if let Some(cs) = &self.problem.contrasts {
            if cs.is_empty() || cs.iter().any(|c| !(*c >= 1.0)) {
                return Err(config_err("problem.contrasts", "contrasts must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::from_descriptor(&self.grid)
    }

    /// Hash of everything that determines the results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        digest_json(&c)
    }

    /// One problem per contrast, or the problem itself.
    pub fn problems(&self) -> Vec<(Option<f64>, ProblemConfig)> {
        match &self.problem.contrasts {
            Some(cs) => cs.iter().map(|&c| (Some(c), self.problem.with_contrast(c))).collect(),
            None => vec![(None, self.problem.clone())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"{
        "schema_version": 1,
        "name": "heat",
        "grid": {"n": 1, "lower": [0.0], "upper": [1.0], "h": 0.0625, "t_final": 0.125, "dt": 0.0078125},
        "problem": {
            "diffusion": {"family": "constant", "value": 1.0},
            "initial": {"kind": "sine", "amplitude": 1.0, "wavenumbers": [1.0]},
            "boundary": {"type": "dirichlet", "data": {"kind": "constant", "value": 0.0}}
        },
        "action": {"type": "solve"}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_json(HEAT).unwrap();
        let grid = cfg.grid().unwrap();
        let spec = cfg.problem.build(&grid, Path::new(".")).unwrap();
        assert_eq!(spec.grid, grid);
        assert_eq!(cfg.action.tag(), "solve");
    }

    #[test]
    fn certify_action_is_flattened() {
        let text = HEAT.replace(
            r#"{"type": "solve"}"#,
            r#"{"type": "certify", "theorem": "harnack", "center": [0.5], "t": 0.1, "rho": 0.1}"#,
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.action.tag(), "certify.harnack");
    }

    #[test]
    fn bad_tolerance_names_its_path() {
        let text = HEAT.replace(r#""name": "heat","#, r#""name": "heat", "tolerances": {"inequality": -1.0},"#);
        match ExperimentConfig::from_json(&text) {
            Err(LabError::Config { path, .. }) => assert_eq!(path, "tolerances.inequality"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_reference() {
        let text = HEAT.replace(r#"{"family": "constant", "value": 1.0}"#, r#"{"file": "nope.json"}"#);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let grid = cfg.grid().unwrap();
        assert!(matches!(cfg.problem.build(&grid, Path::new("/nonexistent")), Err(LabError::Config { .. })));
    }

    #[test]
    fn wrong_schema_version() {
        let text = HEAT.replace(r#""schema_version": 1"#, r#""schema_version": 9"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
