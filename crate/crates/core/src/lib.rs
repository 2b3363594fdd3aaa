//! Numerical functionals of Lagrangian isotopies on flat symplectic models.
//!
//! The crate discretizes parametrized Lagrangian submanifolds of flat model
//! manifolds (Euclidean space, flat tori, products), flows them by
//! Hamiltonian isotopies, and evaluates global functionals of the resulting
//! paths: the middle-form path invariant, its exact-case endpoint formula,
//! the Calabi homomorphism on product models, Lagrangian flux, volume and
//! energy, and the special-Lagrangian variational structure (phase
//! functions, first/second variations, horizontal lifts, geodesics, and
//! convexity along them).
//!
//! Everything is pure and deterministic: meshes and paths are immutable
//! after construction, and the scenario runner reduces with a fixed order.

pub mod error;
pub mod expr;
pub mod form;
pub mod isotopy;
pub mod mesh;
pub mod model;
pub mod numerics;
pub mod tol;

pub use error::{Error, Result};
pub use form::{ComplexForm, Form, FormValue, TangentVector, VectorField};
pub use isotopy::{HamiltonianFamily, IsotopyPath, SupportKind, TwoParamFamily};
pub use mesh::{Domain, LagMesh, MeshOneForm, Normalization, ScalarField};
pub use model::{AmbientModel, ChartKind, ScalarFn};
