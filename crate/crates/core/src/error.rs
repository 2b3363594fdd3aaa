//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degree overflow: {0} + {1} exceeds ambient dimension {2}")]
    DegreeOverflow(usize, usize, usize),

    #[error("degree mismatch: expected a form of degree {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },

    #[error("interior product requires a form of degree >= 1")]
    InteriorOfScalar,

    #[error("symplectic form is singular at {point:?}")]
    SingularOmega { point: Vec<f64> },

    #[error("model `{0}` is missing a complex structure J")]
    MissingComplexStructure(String),

    #[error("model `{0}` is missing a holomorphic volume form")]
    MissingHoloVolume(String),

    #[error("model `{0}` is missing primitives (lambda/gamma/c) required by the closed-form endpoint invariant")]
    MissingPrimitives(String),

    #[error("scaling constant c = -1 makes the closed-form endpoint invariant undefined")]
    DegenerateScalingConstant,

    #[error("no constant c fits L_xi beta = c beta (spread {spread:.3e} over sampled points)")]
    NotHomogeneous { spread: f64 },

    #[error("model invariant violated: {0}")]
    ModelInvariant(String),

    #[error("degenerate immersion: tangent frame is rank-deficient at node {node} (min singular value {sigma:.3e})")]
    DegenerateImmersion { node: usize, sigma: f64 },

    #[error("degenerate frame: |Omega(frame)| = {value:.3e} below threshold at node {node}")]
    DegenerateFrame { node: usize, value: f64 },

    #[error("one-form is not exact: cycle integrals {cycles:?} exceed tolerance {tol:.3e}")]
    NotExact { cycles: Vec<f64>, tol: f64 },

    #[error("Lagrangian defect {defect:.3e} exceeds {limit:.3e} at time {time}")]
    FlowDegraded { time: f64, defect: f64, limit: f64 },

    #[error("mesh leaves the almost-calibrated region: cos(theta) = {cos_theta:.4} < {floor} at node {node}")]
    LeavesAlmostCalibrated {
        node: usize,
        cos_theta: f64,
        floor: f64,
    },

    #[error("geodesic left the almost-calibrated region at t = {exit_time:.4} ({samples} samples completed)")]
    PartialGeodesic { exit_time: f64, samples: usize },

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("second variation formula only valid at a critical point (special defect {defect:.3e}); use finite differences instead")]
    NotCritical { defect: f64 },

    #[error("almost Calabi-Yau structure is inconsistent: {0}")]
    InconsistentStructure(String),

    #[error("perturbation must vanish at both path endpoints (max endpoint magnitude {0:.3e})")]
    ImproperVariation(f64),

    #[error("expression parse error: {0}")]
    ExprParse(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("mesh format error: {0}")]
    MeshFormat(String),

    #[error("scenario `{name}` panicked: {message}")]
    ScenarioPanic { name: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("TOML error: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;
