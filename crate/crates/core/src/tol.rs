//! Centralized numerical tolerances.
//!
//! Each constant states what discretization error it absorbs so scenario and
//! test thresholds are not ad-hoc magic numbers.

/// Lagrangian defect allowed for analytically constructed meshes. These are
/// exact up to the O(N^-2) centered-difference frames.
pub const LAG_DEFECT_ANALYTIC: f64 = 1e-8;

/// Lagrangian defect allowed after Hamiltonian flows (RK4 drift on top of
/// the frame error).
pub const LAG_DEFECT_FLOWED: f64 = 1e-6;

/// Defect at which a flow is considered degraded and aborted.
pub const LAG_DEFECT_ABORT: f64 = 1e-4;

/// Axis-cycle integral magnitude above which a mesh one-form is rejected as
/// non-exact. Velocity forms of genuine Hamiltonian paths sit orders of
/// magnitude below this.
pub const EXACTNESS_CYCLE: f64 = 1e-5;

/// Relative residual expected from potential recovery on exact inputs.
pub const RECOVERY_RESIDUAL: f64 = 1e-8;

/// Pointwise identity checks between analytically equal quantities computed
/// through quadrature/finite differences of smooth periodic data.
pub const IDENTITY_RESIDUAL: f64 = 1e-6;

/// Homotopy-invariance comparisons of the path functional (time quadrature
/// + integrator + recovery errors combined).
pub const HOMOTOPY_INVARIANCE: f64 = 1e-6;

/// Agreement between the path functional and its exact-case endpoint
/// formula at default resolution.
pub const EXACT_CASE_AGREEMENT: f64 = 1e-5;

/// Pairwise agreement of the product-model functional chain (double
/// quadrature over a compactly supported bump).
pub const CALABI_CHAIN: f64 = 1e-4;

/// Flux quadrature and exactness thresholds.
pub const FLUX_VALUE: f64 = 1e-6;
pub const FLUX_HAMILTONIAN: f64 = 1e-8;

/// Default floor on cos(theta) defining numerical membership in the
/// almost-calibrated region.
pub const COS_FLOOR: f64 = 0.05;

/// Special-Lagrangian defect below which the critical-point second
/// variation formula applies.
pub const SPECIAL_CRITICAL: f64 = 1e-8;

/// Energy first-variation residual for shot geodesics under proper exact
/// perturbations.
pub const GEODESIC_STATIONARITY: f64 = 1e-4;

/// Matching of analytic first/second variations against central finite
/// differences of the functionals (relative).
pub const VARIATION_MATCH_REL: f64 = 0.05;
