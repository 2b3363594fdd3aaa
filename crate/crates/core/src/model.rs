//! Ambient flat model manifolds: symplectic structure, optional complex and
//! almost Calabi-Yau data, optional Liouville primitives, the built-in model
//! catalog, and Hamiltonian vector fields / Poisson brackets.

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::form::{ComplexForm, CoefFn, Form, TangentVector, VectorField, DEFAULT_FD_STEP};
use crate::numerics::{fd_gradient, sample_points, SquareMatrix, FD_STEP_GRADIENT};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub enum ChartKind {
    Euclidean,
    Torus { periods: Vec<f64> },
}

/// A scalar function on the ambient chart, with optional analytic gradient
/// and Hessian. Gradient falls back to centered differences.
#[derive(Clone)]
pub struct ScalarFn {
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub grad: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
    pub hess: Option<Arc<dyn Fn(&[f64]) -> SquareMatrix + Send + Sync>>,
}

impl ScalarFn {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn {
            f: Arc::new(f),
            grad: None,
            hess: None,
        }
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    /// Compile an expression over the model's coordinate names, with
    /// symbolic gradient and Hessian.
    pub fn from_expr(src: &str, coords: &[&str]) -> Result<ScalarFn> {
        let e = ScalarExpr::parse(src, coords)?;
        let grads = e.gradient()?;
        let hess_rows: Vec<Vec<ScalarExpr>> = grads
            .iter()
            .map(|g| g.gradient())
            .collect::<Result<Vec<_>>>()?;
        let dim = coords.len();
        let e2 = e.clone();
        let grads2 = grads.clone();
        Ok(ScalarFn {
            f: Arc::new(move |p: &[f64]| e2.eval(p)),
            grad: Some(Arc::new(move |p: &[f64]| {
                grads2.iter().map(|g| g.eval(p)).collect()
            })),
            hess: Some(Arc::new(move |p: &[f64]| {
                let mut m = SquareMatrix::zeros(dim);
                for (i, row) in hess_rows.iter().enumerate() {
                    for (j, h) in row.iter().enumerate() {
                        m.set(i, j, h.eval(p));
                    }
                }
                m
            })),
        })
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        (self.f)(p)
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(p),
            None => fd_gradient(&|q| (self.f)(q), p, FD_STEP_GRADIENT),
        }
    }
}

/// A flat model manifold: global chart, symplectic form, designated middle
/// form, and optional complex / Calabi-Yau / Liouville data.
#[derive(Clone)]
pub struct AmbientModel {
    pub name: String,
    pub dim: usize,
    pub chart: ChartKind,
    pub coords: Vec<String>,
    pub omega: Form,
    pub beta: Option<Form>,
    pub complex_structure: Option<SquareMatrix>,
    pub holo_volume: Option<ComplexForm>,
    pub liouville_primitive: Option<Form>,
    pub gamma_primitive: Option<Form>,
    pub scaling_constant: Option<f64>,
}

impl std::fmt::Debug for AmbientModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AmbientModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("chart", &self.chart)
            .finish()
    }
}

fn coord_names(dim: usize) -> Vec<String> {
    match dim {
        2 => vec!["x".into(), "y".into()],
        _ => {
            let mut v = Vec::with_capacity(dim);
            for k in 0..dim / 2 {
                v.push(format!("x{}", k + 1));
                v.push(format!("y{}", k + 1));
            }
            v
        }
    }
}

/// Standard complex structure on R^2k ordered (x1, y1, ..., xk, yk):
/// J dx = dy blockwise.
fn standard_j(dim: usize) -> SquareMatrix {
    let mut j = SquareMatrix::zeros(dim);
    for b in 0..dim / 2 {
        j.set(2 * b, 2 * b + 1, -1.0);
        j.set(2 * b + 1, 2 * b, 1.0);
    }
    j
}

impl AmbientModel {
    /// Half the ambient dimension: the dimension of Lagrangian submanifolds.
    pub fn half_dim(&self) -> usize {
        self.dim / 2
    }

    pub fn is_compact(&self) -> bool {
        matches!(self.chart, ChartKind::Torus { .. })
    }

    /// Mean of a function against the Liouville density over the
    /// fundamental domain, by uniform-grid trapezoid (exact for the
    /// periodic trigonometric Hamiltonians used on compact models).
    pub fn liouville_mean(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let (lo, hi) = self.sample_box();
        let per_axis: usize = match self.dim {
            2 => 64,
            4 => 16,
            _ => 8,
        };
        let total: usize = per_axis.pow(self.dim as u32);
        let mut multi = vec![0usize; self.dim];
        let sizes = vec![per_axis; self.dim];
        let mut acc = Vec::with_capacity(total);
        let dens0 = {
            // constant for all catalog models; evaluated pointwise anyway
            let p: Vec<f64> = lo.clone();
            let basis: Vec<Vec<f64>> = (0..self.dim)
                .map(|d| {
                    let mut e = vec![0.0; self.dim];
                    e[d] = 1.0;
                    e
                })
                .collect();
            let refs: Vec<&[f64]> = basis.iter().map(|b| b.as_slice()).collect();
            let mut pow = self.omega.clone();
            for _ in 1..self.half_dim() {
                pow = pow.wedge(&self.omega).expect("omega power fits");
            }
            let fact: f64 = (1..=self.half_dim()).product::<usize>() as f64;
            pow.eval(&p, &refs) / fact
        };
        for node in 0..total {
            crate::mesh::node_to_multi(node, &sizes, &mut multi);
            let p: Vec<f64> = (0..self.dim)
                .map(|d| lo[d] + (hi[d] - lo[d]) * multi[d] as f64 / per_axis as f64)
                .collect();
            acc.push(f(&p) * dens0);
        }
        crate::numerics::pairwise_sum(&acc) / total as f64
    }

    pub fn coord_refs(&self) -> Vec<&str> {
        self.coords.iter().map(|s| s.as_str()).collect()
    }

    /// Sampling box for pointwise invariant checks.
    pub fn sample_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.chart {
            ChartKind::Euclidean => (vec![-1.0; self.dim], vec![1.0; self.dim]),
            ChartKind::Torus { periods } => (vec![0.0; self.dim], periods.clone()),
        }
    }

    /// The matrix W with W[a][b] = omega(e_a, e_b) at the point.
    pub fn omega_matrix(&self, p: &[f64]) -> SquareMatrix {
        let v = self.omega.value_at(p);
        let mut w = SquareMatrix::zeros(self.dim);
        for (idx, c) in &v.coeffs {
            let (a, b) = (idx[0], idx[1]);
            w.set(a, b, w.get(a, b) + c);
            w.set(b, a, w.get(b, a) - c);
        }
        w
    }

    /// Solve i_xi omega = rho_coeffs at p, i.e. omega(xi, e_b) = rho_b.
    pub fn solve_contraction(&self, p: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let w = self.omega_matrix(p);
        if w.det().abs() < 1e-12 {
            return Err(Error::SingularOmega { point: p.to_vec() });
        }
        w.transpose().solve(rhs).map_err(|_| Error::SingularOmega {
            point: p.to_vec(),
        })
    }

    /// Hamiltonian vector field at a point: the xi with i_xi omega = dH.
    pub fn hamiltonian_vector_at(&self, h: &ScalarFn, p: &[f64]) -> Result<TangentVector> {
        let grad = h.gradient(p);
        let comps = self.solve_contraction(p, &grad)?;
        Ok(TangentVector::new(p.to_vec(), comps))
    }

    /// Hamiltonian vector field as a field. Installs an analytic Jacobian
    /// when the Hamiltonian has a Hessian and omega is constant.
    pub fn hamiltonian_field(&self, h: &ScalarFn) -> VectorField {
        let model = self.clone();
        let h2 = h.clone();
        let mut field = VectorField::new(move |p: &[f64]| {
            model
                .hamiltonian_vector_at(&h2, p)
                .map(|v| v.components)
                .unwrap_or_else(|_| vec![f64::NAN; p.len()])
        });
        if let (Some(hess), true) = (&h.hess, self.omega.is_constant_coeff()) {
            let wt = self.omega_matrix(&vec![0.0; self.dim]).transpose();
            let hess = hess.clone();
            let dim = self.dim;
            field = field.with_jacobian(move |p: &[f64]| {
                let hm = hess(p);
                // columns of the Jacobian solve W^T xi_col = Hess column
                let mut jac = SquareMatrix::zeros(dim);
                for a in 0..dim {
                    let col: Vec<f64> = (0..dim).map(|b| hm.get(b, a)).collect();
                    let xi = wt.solve(&col).expect("constant omega is nondegenerate");
                    for l in 0..dim {
                        jac.set(l, a, xi[l]);
                    }
                }
                jac
            });
        }
        field
    }

    /// Liouville vector field: i_xi omega = lambda.
    pub fn liouville_field(&self) -> Result<VectorField> {
        let lambda = self
            .liouville_primitive
            .clone()
            .ok_or_else(|| Error::MissingPrimitives(self.name.clone()))?;
        let model = self.clone();
        let dim = self.dim;
        Ok(VectorField::new(move |p: &[f64]| {
            let lv = lambda.value_at(p);
            let rhs: Vec<f64> = (0..dim).map(|b| lv.coeff(&[b])).collect();
            model
                .solve_contraction(p, &rhs)
                .unwrap_or_else(|_| vec![f64::NAN; dim])
        }))
    }

    /// Poisson bracket {H, K} = xi_H K at a point.
    pub fn poisson_bracket(&self, h: &ScalarFn, k: &ScalarFn, p: &[f64]) -> Result<f64> {
        let xi = self.hamiltonian_vector_at(h, p)?;
        let gk = k.gradient(p);
        Ok(xi
            .components
            .iter()
            .zip(&gk)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// omega(zeta, xi) with zeta = xi_K, xi = xi_H; equals {H, K} by the
    /// sign conventions used throughout.
    pub fn bracket_via_omega(&self, h: &ScalarFn, k: &ScalarFn, p: &[f64]) -> Result<f64> {
        let xi = self.hamiltonian_vector_at(h, p)?;
        let zeta = self.hamiltonian_vector_at(k, p)?;
        Ok(self
            .omega
            .eval(p, &[&zeta.components, &xi.components]))
    }

    /// The Kaehler metric g(u, v) = omega(u, J v) as a matrix at p.
    pub fn metric_at(&self, p: &[f64]) -> Result<SquareMatrix> {
        let j = self
            .complex_structure
            .as_ref()
            .ok_or_else(|| Error::MissingComplexStructure(self.name.clone()))?;
        Ok(self.omega_matrix(p).matmul(j))
    }

    pub fn holo_volume(&self) -> Result<&ComplexForm> {
        self.holo_volume
            .as_ref()
            .ok_or_else(|| Error::MissingHoloVolume(self.name.clone()))
    }

    pub fn beta(&self) -> Result<&Form> {
        self.beta
            .as_ref()
            .ok_or_else(|| Error::ModelInvariant(format!("model `{}` has no designated beta", self.name)))
    }

    /// Return a copy with gamma and the scaling constant installed,
    /// re-verifying the compatibility condition lambda ^ beta = -c omega ^ gamma.
    pub fn with_gamma(&self, gamma: Form, c: f64) -> Result<AmbientModel> {
        let mut m = self.clone();
        m.gamma_primitive = Some(gamma);
        m.scaling_constant = Some(c);
        m.check_lbog(1e-8)?;
        Ok(m)
    }

    fn check_lbog(&self, tol: f64) -> Result<()> {
        let (lambda, gamma, c) = match (
            &self.liouville_primitive,
            &self.gamma_primitive,
            self.scaling_constant,
        ) {
            (Some(l), Some(g), Some(c)) => (l, g, c),
            _ => return Ok(()),
        };
        let beta = self.beta()?;
        let combo = lambda
            .wedge(beta)?
            .add(&self.omega.wedge(gamma)?.scale(c));
        let (lo, hi) = self.sample_box();
        let worst = sample_points(self.dim, &lo, &hi, 40)
            .iter()
            .map(|p| combo.value_at(p).max_abs())
            .fold(0.0, f64::max);
        if worst > tol {
            return Err(Error::ModelInvariant(format!(
                "lambda ^ beta + c omega ^ gamma = {worst:.3e} exceeds {tol:.1e}"
            )));
        }
        Ok(())
    }

    /// Validate the structural invariants at sampled points.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (lo, hi) = self.sample_box();
        let points = sample_points(self.dim, &lo, &hi, 40);
        // omega closed and nondegenerate
        if self.omega.closedness_residual(&points, DEFAULT_FD_STEP) > tol {
            return Err(Error::ModelInvariant("omega is not closed".into()));
        }
        for p in &points {
            if self.omega_matrix(p).det().abs() < 1e-9 {
                return Err(Error::ModelInvariant(format!(
                    "omega degenerate at {p:?}"
                )));
            }
        }
        // complex structure compatibility
        if let Some(j) = &self.complex_structure {
            let jj = j.matmul(j);
            for a in 0..self.dim {
                for b in 0..self.dim {
                    let want = if a == b { -1.0 } else { 0.0 };
                    if (jj.get(a, b) - want).abs() > 1e-12 {
                        return Err(Error::ModelInvariant("J^2 != -I".into()));
                    }
                }
            }
            for p in &points {
                let w = self.omega_matrix(p);
                // omega(J u, J v) = omega(u, v) as matrices: J^T W J = W
                let jwj = j.transpose().matmul(&w).matmul(j);
                for a in 0..self.dim {
                    for b in 0..self.dim {
                        if (jwj.get(a, b) - w.get(a, b)).abs() > tol {
                            return Err(Error::ModelInvariant(
                                "omega is not J-invariant".into(),
                            ));
                        }
                    }
                }
                let g = self.metric_at(p)?;
                // symmetric positive definite
                for a in 0..self.dim {
                    for b in 0..self.dim {
                        if (g.get(a, b) - g.get(b, a)).abs() > tol {
                            return Err(Error::ModelInvariant("metric not symmetric".into()));
                        }
                    }
                }
                if g.min_eigen_sym() <= 0.0 {
                    return Err(Error::ModelInvariant("metric not positive".into()));
                }
            }
        }
        // d lambda = omega
        if let Some(lambda) = &self.liouville_primitive {
            let d = lambda.d(DEFAULT_FD_STEP);
            let worst = points
                .iter()
                .map(|p| {
                    let dv = d.value_at(p);
                    let wv = self.omega.value_at(p);
                    dv.coeffs
                        .iter()
                        .map(|(idx, c)| (c - wv.coeff(idx)).abs())
                        .fold(0.0, f64::max)
                        .max(
                            wv.coeffs
                                .iter()
                                .map(|(idx, c)| (c - dv.coeff(idx)).abs())
                                .fold(0.0, f64::max),
                        )
                })
                .fold(0.0, f64::max);
            if worst > tol {
                return Err(Error::ModelInvariant(format!(
                    "d lambda - omega = {worst:.3e}"
                )));
            }
        }
        // beta closed, omega ^ beta = 0
        if let Some(beta) = &self.beta {
            if beta.closedness_residual(&points, DEFAULT_FD_STEP) > tol {
                return Err(Error::ModelInvariant("beta is not closed".into()));
            }
            if self.omega.degree() + beta.degree() <= self.dim {
                let prod = self.omega.wedge(beta)?;
                let worst = points
                    .iter()
                    .map(|p| prod.value_at(p).max_abs())
                    .fold(0.0, f64::max);
                if worst > tol {
                    return Err(Error::ModelInvariant(format!(
                        "omega ^ beta = {worst:.3e} is not zero"
                    )));
                }
            }
        }
        self.check_lbog(tol)?;
        Ok(())
    }

    /// Built-in model catalog.
    pub fn catalog(name: &str) -> Result<AmbientModel> {
        let model = match name {
            "r2" => Self::r2_base("r2"),
            "r2_exact" => {
                let mut m = Self::r2_base("r2_exact");
                let lambda = Form::from_fns(
                    2,
                    1,
                    vec![
                        (vec![0], Arc::new(|p: &[f64]| -0.5 * p[1]) as CoefFn),
                        (vec![1], Arc::new(|p: &[f64]| 0.5 * p[0]) as CoefFn),
                    ],
                )
                .with_analytic_d(Form::constant(2, 2, &[(&[0, 1], 1.0)]));
                let gamma = Form::from_fns(
                    2,
                    0,
                    vec![(vec![], Arc::new(|p: &[f64]| p[1]) as CoefFn)],
                )
                .with_analytic_d(Form::constant(2, 1, &[(&[1], 1.0)]));
                m.liouville_primitive = Some(lambda);
                m.gamma_primitive = Some(gamma);
                m.scaling_constant = Some(0.5);
                m
            }
            "t2_cy" => {
                let mut m = Self::r2_base("t2_cy");
                m.chart = ChartKind::Torus {
                    periods: vec![1.0, 1.0],
                };
                m
            }
            "t2n_cy" => {
                let mut m = Self::torus_cy(2);
                m.name = "t2n_cy".to_string();
                m
            }
            "r4_product" => Self::product(1),
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        model.validate(1e-6)?;
        Ok(model)
    }

    fn r2_base(name: &str) -> AmbientModel {
        let omega = Form::constant(2, 2, &[(&[0, 1], 1.0)]);
        let holo = ComplexForm::new(
            Form::constant(2, 1, &[(&[0], 1.0)]),
            Form::constant(2, 1, &[(&[1], 1.0)]),
        );
        AmbientModel {
            name: name.to_string(),
            dim: 2,
            chart: ChartKind::Euclidean,
            coords: coord_names(2),
            omega,
            beta: Some(Form::constant(2, 1, &[(&[1], 1.0)])),
            complex_structure: Some(standard_j(2)),
            holo_volume: Some(holo),
            liouville_primitive: None,
            gamma_primitive: None,
            scaling_constant: None,
        }
    }

    /// Flat Calabi-Yau torus T^{2k} with Omega = dz_1 ^ ... ^ dz_k.
    pub fn torus_cy(k: usize) -> AmbientModel {
        let dim = 2 * k;
        let mut omega_entries: Vec<(Vec<usize>, f64)> = Vec::new();
        for b in 0..k {
            omega_entries.push((vec![2 * b, 2 * b + 1], 1.0));
        }
        let entries: Vec<(&[usize], f64)> = omega_entries
            .iter()
            .map(|(i, v)| (i.as_slice(), *v))
            .collect();
        let omega = Form::constant(dim, 2, &entries);
        // Omega = product over blocks of (dx_b + i dy_b)
        let mut holo = ComplexForm::new(
            Form::constant(dim, 1, &[(&[0], 1.0)]),
            Form::constant(dim, 1, &[(&[1], 1.0)]),
        );
        for b in 1..k {
            let dz = ComplexForm::new(
                Form::constant(dim, 1, &[(&[2 * b], 1.0)]),
                Form::constant(dim, 1, &[(&[2 * b + 1], 1.0)]),
            );
            holo = holo.wedge(&dz).expect("degree fits");
        }
        let beta = holo.im.clone();
        AmbientModel {
            name: if k == 1 {
                "t2_cy".to_string()
            } else {
                format!("t{}_cy", 2 * k)
            },
            dim,
            chart: ChartKind::Torus {
                periods: vec![1.0; dim],
            },
            coords: coord_names(dim),
            omega,
            beta: Some(beta),
            complex_structure: Some(standard_j(dim)),
            holo_volume: Some(holo),
            liouville_primitive: None,
            gamma_primitive: None,
            scaling_constant: None,
        }
    }

    /// The product model (M x M, -omega_M (+) omega_M) for M = R^{2m} with
    /// its standard primitives. Coordinates: first factor then second.
    pub fn product(m: usize) -> AmbientModel {
        let half = 2 * m; // dim of M
        let dim = 2 * half;
        // omega = -p1* omega_M + p2* omega_M
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
        for b in 0..m {
            entries.push((vec![2 * b, 2 * b + 1], -1.0));
            entries.push((vec![half + 2 * b, half + 2 * b + 1], 1.0));
        }
        let slices: Vec<(&[usize], f64)> =
            entries.iter().map(|(i, v)| (i.as_slice(), *v)).collect();
        let omega = Form::constant(dim, 2, &slices);
        // lambda = -p1* lambda_M + p2* lambda_M,
        // lambda_M = 1/2 sum (x_b dy_b - y_b dx_b)
        let mut lam_terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
        for b in 0..m {
            let (xb, yb) = (2 * b, 2 * b + 1);
            lam_terms.push((vec![xb], Arc::new(move |p: &[f64]| 0.5 * p[yb]) as CoefFn));
            lam_terms.push((vec![yb], Arc::new(move |p: &[f64]| -0.5 * p[xb]) as CoefFn));
            let (xb2, yb2) = (half + 2 * b, half + 2 * b + 1);
            lam_terms.push((vec![xb2], Arc::new(move |p: &[f64]| -0.5 * p[yb2]) as CoefFn));
            lam_terms.push((vec![yb2], Arc::new(move |p: &[f64]| 0.5 * p[xb2]) as CoefFn));
        }
        let lambda = Form::from_fns(dim, 1, lam_terms).with_analytic_d(omega.clone());
        let beta = product_beta_form(m);
        // gamma from the Liouville construction, with analytic d = beta:
        // gamma = (1/m) i_xi beta with xi the radial field / 2.
        let radial = VectorField::new(move |p: &[f64]| p.iter().map(|c| 0.5 * c).collect())
            .with_jacobian(move |_p: &[f64]| {
                let mut s = SquareMatrix::zeros(dim);
                for i in 0..dim {
                    s.set(i, i, 0.5);
                }
                s
            });
        let gamma = beta
            .contract_with_field(&radial)
            .expect("beta has positive degree")
            .scale(1.0 / m as f64)
            .with_analytic_d(beta.clone());
        // J = (-J_M) (+) J_M
        let mut j = SquareMatrix::zeros(dim);
        for b in 0..m {
            j.set(2 * b, 2 * b + 1, 1.0);
            j.set(2 * b + 1, 2 * b, -1.0);
            j.set(half + 2 * b, half + 2 * b + 1, -1.0);
            j.set(half + 2 * b + 1, half + 2 * b, 1.0);
        }
        let mut coords = Vec::with_capacity(dim);
        for f in ["a", "b"] {
            for k in 0..m {
                coords.push(format!("{f}x{}", k + 1));
                coords.push(format!("{f}y{}", k + 1));
            }
        }
        // keep the conventional names for the m = 1 case
        let coords = if m == 1 {
            vec!["x1".into(), "y1".into(), "x2".into(), "y2".into()]
        } else {
            coords
        };
        AmbientModel {
            name: if m == 1 {
                "r4_product".to_string()
            } else {
                format!("r{}_product", dim)
            },
            dim,
            chart: ChartKind::Euclidean,
            coords,
            omega,
            beta: Some(beta),
            complex_structure: Some(j),
            holo_volume: None,
            liouville_primitive: Some(lambda),
            gamma_primitive: Some(gamma),
            scaling_constant: Some(m as f64),
        }
    }

    /// Load a model from a structured text (TOML) file. Coefficients are
    /// expressions in the chart coordinates.
    pub fn from_toml_str(text: &str) -> Result<AmbientModel> {
        let doc: toml::Value =
            toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        let table = doc
            .as_table()
            .ok_or_else(|| Error::Config("model file must be a table".into()))?;
        let dim = table
            .get("dim")
            .and_then(|v| v.as_integer())
            .ok_or_else(|| Error::Config("model file needs integer `dim`".into()))?
            as usize;
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Config("`dim` must be a positive even integer".into()));
        }
        let name = table
            .get("name")
            .and_then(|v| v.as_str())
            .unwrap_or("custom")
            .to_string();
        let chart = match table.get("chart").and_then(|v| v.as_str()) {
            None | Some("euclidean") => ChartKind::Euclidean,
            Some("torus") => {
                let periods = table
                    .get("periods")
                    .and_then(|v| v.as_array())
                    .map(|a| {
                        a.iter()
                            .map(|x| x.as_float().or(x.as_integer().map(|i| i as f64)))
                            .collect::<Option<Vec<f64>>>()
                    })
                    .flatten()
                    .unwrap_or_else(|| vec![1.0; dim]);
                if periods.len() != dim {
                    return Err(Error::Config("`periods` length must equal dim".into()));
                }
                ChartKind::Torus { periods }
            }
            Some(other) => {
                return Err(Error::Config(format!("unknown chart kind `{other}`")))
            }
        };
        let coords: Vec<String> = match table.get("coords").and_then(|v| v.as_array()) {
            Some(arr) => arr
                .iter()
                .map(|v| v.as_str().map(|s| s.to_string()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config("`coords` must be strings".into()))?,
            None => coord_names(dim),
        };
        if coords.len() != dim {
            return Err(Error::Config("`coords` length must equal dim".into()));
        }
        let coord_refs: Vec<&str> = coords.iter().map(|s| s.as_str()).collect();
        let parse_form = |key: &str, expect_degree: Option<usize>| -> Result<Option<Form>> {
            let Some(section) = table.get(key) else {
                return Ok(None);
            };
            let section = section
                .as_table()
                .ok_or_else(|| Error::Config(format!("`{key}` must be a table")))?;
            let mut degree: Option<usize> = expect_degree;
            let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
            let sorted: BTreeMap<&String, &toml::Value> = section.iter().collect();
            for (k, v) in sorted {
                let idx: Vec<usize> = if k.is_empty() {
                    vec![]
                } else {
                    k.split(',')
                        .map(|s| {
                            s.trim().parse::<usize>().map_err(|_| {
                                Error::Config(format!("bad index `{s}` in `{key}`"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                if !idx.windows(2).all(|w| w[0] < w[1]) || idx.iter().any(|&i| i >= dim) {
                    return Err(Error::Config(format!(
                        "index `{k}` in `{key}` must be strictly increasing and < dim"
                    )));
                }
                match degree {
                    Some(d) if d != idx.len() => {
                        return Err(Error::Config(format!(
                            "mixed degrees in `{key}`"
                        )))
                    }
                    None => degree = Some(idx.len()),
                    _ => {}
                }
                let src = v
                    .as_str()
                    .ok_or_else(|| Error::Config(format!("coefficients in `{key}` must be expression strings")))?;
                let e = ScalarExpr::parse(src, &coord_refs)?;
                terms.push((idx, Arc::new(move |p: &[f64]| e.eval(p)) as CoefFn));
            }
            let degree = degree.ok_or_else(|| Error::Config(format!("`{key}` is empty")))?;
            Ok(Some(Form::from_fns(dim, degree, terms)))
        };
        let omega = parse_form("omega", Some(2))?
            .ok_or_else(|| Error::Config("model file needs an `omega` table".into()))?;
        let beta = parse_form("beta", None)?;
        let lambda = parse_form("lambda", Some(1))?;
        let gamma = parse_form("gamma", None)?;
        let complex_structure = match table.get("complex_structure") {
            None => None,
            Some(v) => {
                let rows = v
                    .get("rows")
                    .and_then(|r| r.as_array())
                    .ok_or_else(|| Error::Config("`complex_structure.rows` missing".into()))?;
                let mut mat_rows = Vec::with_capacity(dim);
                for row in rows {
                    let row = row
                        .as_array()
                        .ok_or_else(|| Error::Config("J rows must be arrays".into()))?
                        .iter()
                        .map(|x| x.as_float().or(x.as_integer().map(|i| i as f64)))
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| Error::Config("J entries must be numbers".into()))?;
                    mat_rows.push(row);
                }
                if mat_rows.len() != dim || mat_rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config("J must be dim x dim".into()));
                }
                Some(SquareMatrix::from_rows(&mat_rows))
            }
        };
        let holo_volume = match table.get("holo_volume") {
            None => None,
            Some(_) => {
                let re = parse_nested_form(table, "holo_volume", "re", dim, &coord_refs)?;
                let im = parse_nested_form(table, "holo_volume", "im", dim, &coord_refs)?;
                match (re, im) {
                    (Some(re), Some(im)) => Some(ComplexForm::new(re, im)),
                    _ => {
                        return Err(Error::Config(
                            "`holo_volume` needs both `re` and `im` tables".into(),
                        ))
                    }
                }
            }
        };
        let scaling_constant = table
            .get("scaling_constant")
            .map(|v| {
                v.as_float()
                    .or(v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| Error::Config("`scaling_constant` must be a number".into()))
            })
            .transpose()?;
        let model = AmbientModel {
            name,
            dim,
            chart,
            coords,
            omega,
            beta,
            complex_structure,
            holo_volume,
            liouville_primitive: lambda,
            gamma_primitive: gamma,
            scaling_constant,
        };
        model.validate(1e-6)?;
        Ok(model)
    }

    /// Load by catalog name, or from a file path when `spec` names one.
    pub fn load(spec: &str) -> Result<AmbientModel> {
        if spec.ends_with(".toml") || spec.contains('/') {
            let text = std::fs::read_to_string(spec)?;
            Self::from_toml_str(&text)
        } else {
            Self::catalog(spec)
        }
    }
}

fn parse_nested_form(
    table: &toml::map::Map<String, toml::Value>,
    outer: &str,
    inner: &str,
    dim: usize,
    coords: &[&str],
) -> Result<Option<Form>> {
    let Some(section) = table.get(outer).and_then(|v| v.get(inner)) else {
        return Ok(None);
    };
    let section = section
        .as_table()
        .ok_or_else(|| Error::Config(format!("`{outer}.{inner}` must be a table")))?;
    let mut degree: Option<usize> = None;
    let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
    let sorted: BTreeMap<&String, &toml::Value> = section.iter().collect();
    for (k, v) in sorted {
        let idx: Vec<usize> = if k.is_empty() {
            vec![]
        } else {
            k.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad index `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        match degree {
            Some(d) if d != idx.len() => {
                return Err(Error::Config(format!("mixed degrees in `{outer}.{inner}`")))
            }
            None => degree = Some(idx.len()),
            _ => {}
        }
        let src = v
            .as_str()
            .ok_or_else(|| Error::Config("coefficients must be expression strings".into()))?;
        let e = ScalarExpr::parse(src, coords)?;
        terms.push((idx, Arc::new(move |p: &[f64]| e.eval(p)) as CoefFn));
    }
    let degree = degree.ok_or_else(|| Error::Config(format!("`{outer}.{inner}` is empty")))?;
    Ok(Some(Form::from_fns(dim, degree, terms)))
}

/// The middle form of the product model:
/// beta = 1/(m+1) sum_{i=0}^m p1* omega_M^i ^ p2* omega_M^{m-i}.
pub fn product_beta_form(m: usize) -> Form {
    let half = 2 * m;
    let dim = 2 * half;
    // p1* omega_M and p2* omega_M
    let mut w1_entries: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut w2_entries: Vec<(Vec<usize>, f64)> = Vec::new();
    for b in 0..m {
        w1_entries.push((vec![2 * b, 2 * b + 1], 1.0));
        w2_entries.push((vec![half + 2 * b, half + 2 * b + 1], 1.0));
    }
    let s1: Vec<(&[usize], f64)> = w1_entries.iter().map(|(i, v)| (i.as_slice(), *v)).collect();
    let s2: Vec<(&[usize], f64)> = w2_entries.iter().map(|(i, v)| (i.as_slice(), *v)).collect();
    let w1 = Form::constant(dim, 2, &s1);
    let w2 = Form::constant(dim, 2, &s2);
    let wedge_pow = |f: &Form, k: usize| -> Form {
        if k == 0 {
            return Form::constant(dim, 0, &[(&[], 1.0)]);
        }
        let mut acc = f.clone();
        for _ in 1..k {
            acc = acc.wedge(f).expect("power fits in dimension");
        }
        acc
    };
    let mut total = Form::zero(dim, 2 * m);
    for i in 0..=m {
        let term = wedge_pow(&w1, i)
            .wedge(&wedge_pow(&w2, m - i))
            .expect("middle degree");
        total = total.add(&term);
    }
    let beta = total.scale(1.0 / (m + 1) as f64);
    if beta.degree() < dim {
        beta.with_analytic_d(Form::zero(dim, 2 * m + 1))
    } else {
        beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn catalog_models_validate() {
        for name in ["r2", "r2_exact", "t2_cy", "t2n_cy", "r4_product"] {
            let m = AmbientModel::catalog(name).unwrap();
            assert_eq!(m.name, name);
            m.validate(1e-6).unwrap();
        }
        assert!(matches!(
            AmbientModel::catalog("nope"),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn hamiltonian_field_in_darboux_coordinates() {
        let m = AmbientModel::catalog("r2").unwrap();
        // H = y generates translation in x
        let h = ScalarFn::from_expr("y", &["x", "y"]).unwrap();
        let xi = m.hamiltonian_vector_at(&h, &[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(xi.components[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xi.components[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_hamiltonian_field_satisfies_contraction() {
        let m = AmbientModel::catalog("r2").unwrap();
        let h = ScalarFn::from_expr("0.5*(x^2 + y^2)", &["x", "y"]).unwrap();
        let (lo, hi) = m.sample_box();
        for p in sample_points(2, &lo, &hi, 100) {
            let xi = m.hamiltonian_vector_at(&h, &p).unwrap();
            // i_xi omega = dH componentwise
            let grad = h.gradient(&p);
            for b in 0..2 {
                let mut e = vec![0.0, 0.0];
                e[b] = 1.0;
                let val = m.omega.eval(&p, &[&xi.components, &e]);
                assert_abs_diff_eq!(val, grad[b], epsilon = 1e-10);
            }
            // and the field is (y, -x) under this convention
            assert_abs_diff_eq!(xi.components[0], p[1], epsilon = 1e-10);
            assert_abs_diff_eq!(xi.components[1], -p[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn bracket_convention_is_pinned() {
        let m = AmbientModel::catalog("r2").unwrap();
        let x = ScalarFn::from_expr("x", &["x", "y"]).unwrap();
        let y = ScalarFn::from_expr("y", &["x", "y"]).unwrap();
        let p = [0.2, -0.4];
        // {x, y} = -1 with i_xi omega = dH and {H,K} = xi K = omega(zeta, xi)
        let b = m.poisson_bracket(&x, &y, &p).unwrap();
        assert_abs_diff_eq!(b, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.bracket_via_omega(&x, &y, &p).unwrap(), b, epsilon = 1e-12);
        // antisymmetry and {H,H} = 0
        assert_abs_diff_eq!(m.poisson_bracket(&y, &x, &p).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.poisson_bracket(&x, &x, &p).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bracket_agrees_with_omega_pairing_for_generic_pairs() {
        let m = AmbientModel::catalog("r2").unwrap();
        let h = ScalarFn::from_expr("sin(2*pi*x)*cos(2*pi*y)", &["x", "y"]).unwrap();
        let k = ScalarFn::from_expr("x^2*y - 0.3*y^3", &["x", "y"]).unwrap();
        for p in sample_points(2, &[-1.0, -1.0], &[1.0, 1.0], 25) {
            let a = m.poisson_bracket(&h, &k, &p).unwrap();
            let b = m.bracket_via_omega(&h, &k, &p).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn jacobi_identity_for_polynomial_hamiltonians() {
        let m = AmbientModel::catalog("r2").unwrap();
        let h = ScalarFn::from_expr("0.7*x^2*y + 0.1*x", &["x", "y"]).unwrap();
        let k = ScalarFn::from_expr("y^2 - 0.4*x*y", &["x", "y"]).unwrap();
        let l = ScalarFn::from_expr("0.2*x^3 + y", &["x", "y"]).unwrap();
        // inner brackets as scalar functions with finite-difference gradients
        let bracket_fn = |a: &ScalarFn, b: &ScalarFn| -> ScalarFn {
            let m = m.clone();
            let a = a.clone();
            let b = b.clone();
            ScalarFn::new(move |p: &[f64]| m.poisson_bracket(&a, &b, p).unwrap())
        };
        let hk = bracket_fn(&h, &k);
        let kl = bracket_fn(&k, &l);
        let lh = bracket_fn(&l, &h);
        for p in sample_points(2, &[-0.8, -0.8], &[0.8, 0.8], 20) {
            let total = m.poisson_bracket(&h, &kl, &p).unwrap()
                + m.poisson_bracket(&k, &lh, &p).unwrap()
                + m.poisson_bracket(&l, &hk, &p).unwrap();
            assert!(total.abs() < 1e-8, "Jacobi residual {total:.3e} at {p:?}");
        }
    }

    #[test]
    fn singular_omega_is_reported() {
        // corrupted model: omega = x dx ^ dy degenerates on the line x = 0
        let omega = Form::from_fns(
            2,
            2,
            vec![(vec![0, 1], Arc::new(|p: &[f64]| p[0]) as CoefFn)],
        );
        let m = AmbientModel {
            name: "corrupt".into(),
            dim: 2,
            chart: ChartKind::Euclidean,
            coords: coord_names(2),
            omega,
            beta: None,
            complex_structure: None,
            holo_volume: None,
            liouville_primitive: None,
            gamma_primitive: None,
            scaling_constant: None,
        };
        let h = ScalarFn::from_expr("y", &["x", "y"]).unwrap();
        assert!(matches!(
            m.hamiltonian_vector_at(&h, &[0.0, 0.5]),
            Err(Error::SingularOmega { .. })
        ));
    }

    #[test]
    fn product_beta_kills_omega_wedge() {
        for m_rank in [1usize, 2] {
            let model = AmbientModel::product(m_rank);
            let beta = model.beta().unwrap();
            let prod = model.omega.wedge(beta).unwrap();
            let (lo, hi) = model.sample_box();
            for p in sample_points(model.dim, &lo, &hi, 100) {
                assert!(prod.value_at(&p).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_beta_m1_is_half_sum_of_areas() {
        let beta = product_beta_form(1);
        let v = beta.value_at(&[0.3, 0.1, -0.2, 0.8]);
        assert_relative_eq!(v.coeff(&[0, 1]), 0.5);
        assert_relative_eq!(v.coeff(&[2, 3]), 0.5);
        assert_relative_eq!(v.coeff(&[0, 2]), 0.0);
    }

    #[test]
    fn model_file_round_trip() {
        let text = r#"
name = "flat_r2"
dim = 2
chart = "euclidean"
scaling_constant = 0.5

[omega]
"0,1" = "1"

[beta]
"1" = "1"

[lambda]
"0" = "-0.5*y"
"1" = "0.5*x"

[gamma]
"" = "y"
"#;
        let m = AmbientModel::from_toml_str(text).unwrap();
        assert_eq!(m.dim, 2);
        assert!(m.liouville_primitive.is_some());
        assert_eq!(m.scaling_constant, Some(0.5));
        // parse failure surfaces as a config/expression error
        let bad = text.replace("-0.5*y", "-0.5*q");
        assert!(AmbientModel::from_toml_str(&bad).is_err());
        // an inconsistent scaling constant must fail validation
        let wrong_c = text.replace("scaling_constant = 0.5", "scaling_constant = 0.7");
        assert!(AmbientModel::from_toml_str(&wrong_c).is_err());
    }

    #[test]
    fn metric_of_r2_is_euclidean() {
        let m = AmbientModel::catalog("r2").unwrap();
        let g = m.metric_at(&[0.4, -0.9]).unwrap();
        assert_relative_eq!(g.get(0, 0), 1.0);
        assert_relative_eq!(g.get(1, 1), 1.0);
        assert_relative_eq!(g.get(0, 1), 0.0);
    }
}
