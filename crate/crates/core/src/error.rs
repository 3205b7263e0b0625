use thiserror::Error;

/// Errors raised across the laboratory. The variant determines the CLI exit
/// code: validation problems map to 2, solver/runtime problems to 3.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("cylinder escapes the space-time domain through the {face} face (needs {needed}, domain gives {available})")]
    Containment {
        face: String,
        needed: f64,
        available: f64,
    },

    #[error("structure error for coefficient {coefficient}: {reason}")]
    Structure { coefficient: String, reason: String },

    #[error("equation is not uniformly parabolic: smallest eigenvalue {nu_empirical}")]
    NotParabolic { nu_empirical: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("picard iteration did not converge at time step {step} after {iterations} iterations (last increment {increment:e})")]
    PicardDivergence {
        step: usize,
        iterations: usize,
        increment: f64,
    },

    #[error("linear solver stagnated at time step {step}: relative residual {residual:e} after {iterations} iterations")]
    LinearSolver {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("kernel mass reached the box boundary at t = {time} before the horizon {horizon}; enlarge the box to half-width >= {suggested_half_width}")]
    EnlargeBox {
        time: f64,
        horizon: f64,
        suggested_half_width: f64,
    },

    #[error("gaussian fit refused: kernel is non-positive at {count} sampled cells (first at cell {first_cell}, step {first_step})")]
    NonPositiveKernel {
        count: usize,
        first_cell: usize,
        first_step: usize,
    },

    #[error("truncation too short: tail bound is {fraction:.3} of G (limit {limit}); increase T_max")]
    TailTooLarge { fraction: f64, limit: f64 },

    #[error("missing kernel for source cell {0}")]
    MissingKernel(usize),

    #[error("measure violates the Gaussian growth condition: {0}")]
    Growth(String),

    #[error("baseline error: {0}")]
    Baseline(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// True for errors caused by bad inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LabError::Grid(_)
                | LabError::Containment { .. }
                | LabError::Structure { .. }
                | LabError::NotParabolic { .. }
                | LabError::Precondition(_)
                | LabError::Config { .. }
                | LabError::Growth(_)
                | LabError::Schema(_)
                | LabError::Baseline(_)
                | LabError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
