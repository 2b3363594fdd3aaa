//! Coordinate-chart exterior algebra on flat models: differential forms with
//! closure-valued coefficients, wedge products, interior products, and
//! exterior derivatives (analytic when available, centered differences
//! otherwise).

use crate::error::{Error, Result};
use crate::numerics::SquareMatrix;
use std::sync::Arc;

/// Default step for finite-difference exterior derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

pub type CoefFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A tangent vector anchored at an ambient point.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub base: Vec<f64>,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: Vec<f64>, components: Vec<f64>) -> Self {
        assert_eq!(base.len(), components.len());
        TangentVector { base, components }
    }
}

/// A vector field given by a closure, with an optional analytic Jacobian.
/// Jacobian convention: `jac.get(l, a)` is the partial of component `l`
/// with respect to coordinate `a`.
#[derive(Clone)]
pub struct VectorField {
    pub eval: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub jacobian: Option<Arc<dyn Fn(&[f64]) -> SquareMatrix + Send + Sync>>,
}

impl VectorField {
    pub fn new(eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        VectorField {
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64]) -> SquareMatrix + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }
}

/// The value of a k-form at a single point: one real per increasing
/// multi-index.
#[derive(Debug, Clone)]
pub struct FormValue {
    pub dim: usize,
    pub degree: usize,
    pub coeffs: Vec<(Vec<usize>, f64)>,
}

impl FormValue {
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
    }

    pub fn coeff(&self, index: &[usize]) -> f64 {
        self.coeffs
            .iter()
            .find(|(i, _)| i.as_slice() == index)
            .map(|(_, c)| *c)
            .unwrap_or(0.0)
    }

    /// Evaluate on `degree` many vectors.
    pub fn apply(&self, vectors: &[&[f64]]) -> f64 {
        assert_eq!(vectors.len(), self.degree);
        let mut total = 0.0;
        for (idx, c) in &self.coeffs {
            if *c == 0.0 {
                continue;
            }
            total += *c * minor_det(idx, vectors);
        }
        total
    }

    /// Contract with vector components, lowering the degree by one.
    pub fn contract(&self, components: &[f64]) -> Result<FormValue> {
        if self.degree == 0 {
            return Err(Error::InteriorOfScalar);
        }
        let mut coeffs: Vec<(Vec<usize>, f64)> = Vec::new();
        for (idx, c) in &self.coeffs {
            for (r, &j) in idx.iter().enumerate() {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                let mut target = idx.clone();
                target.remove(r);
                let contrib = sign * components[j] * c;
                match coeffs.iter_mut().find(|(t, _)| *t == target) {
                    Some((_, acc)) => *acc += contrib,
                    None => coeffs.push((target, contrib)),
                }
            }
        }
        Ok(FormValue {
            dim: self.dim,
            degree: self.degree - 1,
            coeffs,
        })
    }
}

/// det of the k x k matrix with entry (r, s) = vectors[s][idx[r]].
fn minor_det(idx: &[usize], vectors: &[&[f64]]) -> f64 {
    let k = idx.len();
    match k {
        0 => 1.0,
        1 => vectors[0][idx[0]],
        2 => {
            vectors[0][idx[0]] * vectors[1][idx[1]] - vectors[1][idx[0]] * vectors[0][idx[1]]
        }
        3 => {
            let m = |r: usize, s: usize| vectors[s][idx[r]];
            m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
        }
        _ => {
            let mut mat = SquareMatrix::zeros(k);
            for r in 0..k {
                for s in 0..k {
                    mat.set(r, s, vectors[s][idx[r]]);
                }
            }
            mat.det()
        }
    }
}

/// Sign of the shuffle interleaving increasing tuples `i` and `j`.
fn shuffle_sign(i: &[usize], j: &[usize]) -> f64 {
    let mut inversions = 0usize;
    for a in i {
        for b in j {
            if a > b {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn merge_sorted(i: &[usize], j: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = i.iter().chain(j.iter()).copied().collect();
    out.sort_unstable();
    out
}

/// A differential k-form over a flat chart of the given dimension.
/// Coefficients are stored only on strictly increasing multi-indices, which
/// makes antisymmetry canonical.
#[derive(Clone)]
pub struct Form {
    dim: usize,
    degree: usize,
    terms: Vec<(Vec<usize>, CoefFn)>,
    analytic_d: Option<Arc<Form>>,
    constant_coeffs: bool,
}

impl std::fmt::Debug for Form {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Form")
            .field("dim", &self.dim)
            .field("degree", &self.degree)
            .field("terms", &self.terms.iter().map(|(i, _)| i).collect::<Vec<_>>())
            .field("has_analytic_d", &self.analytic_d.is_some())
            .finish()
    }
}

impl Form {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Form {
            dim,
            degree,
            terms: vec![],
            analytic_d: None,
            constant_coeffs: true,
        }
    }

    /// Constant-coefficient form; the exterior derivative is installed as
    /// identically zero.
    pub fn constant(dim: usize, degree: usize, entries: &[(&[usize], f64)]) -> Self {
        let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
        for (idx, v) in entries {
            assert!(idx.len() == degree, "index length must equal degree");
            assert!(
                idx.windows(2).all(|w| w[0] < w[1]),
                "multi-indices must be strictly increasing"
            );
            assert!(idx.iter().all(|&i| i < dim));
            let v = *v;
            terms.push((idx.to_vec(), Arc::new(move |_: &[f64]| v)));
        }
        let mut f = Form {
            dim,
            degree,
            terms,
            analytic_d: None,
            constant_coeffs: true,
        };
        if degree < dim {
            f.analytic_d = Some(Arc::new(Form::zero(dim, degree + 1)));
        }
        f
    }

    /// Form with general coefficient closures.
    pub fn from_fns(dim: usize, degree: usize, entries: Vec<(Vec<usize>, CoefFn)>) -> Self {
        for (idx, _) in &entries {
            assert_eq!(idx.len(), degree);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| i < dim));
        }
        Form {
            dim,
            degree,
            terms: entries,
            analytic_d: None,
            constant_coeffs: false,
        }
    }

    /// A degree-0 form (scalar function).
    pub fn scalar(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Form {
            dim,
            degree: 0,
            terms: vec![(vec![], Arc::new(f))],
            analytic_d: None,
            constant_coeffs: false,
        }
    }

    pub fn with_analytic_d(mut self, d: Form) -> Self {
        assert_eq!(d.degree, self.degree + 1);
        assert_eq!(d.dim, self.dim);
        self.analytic_d = Some(Arc::new(d));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn has_analytic_d(&self) -> bool {
        self.analytic_d.is_some()
    }

    pub fn is_constant_coeff(&self) -> bool {
        self.constant_coeffs
    }

    /// Coefficients at a point.
    pub fn value_at(&self, p: &[f64]) -> FormValue {
        let mut coeffs: Vec<(Vec<usize>, f64)> = Vec::with_capacity(self.terms.len());
        for (idx, f) in &self.terms {
            let v = f(p);
            match coeffs.iter_mut().find(|(i, _)| i == idx) {
                Some((_, acc)) => *acc += v,
                None => coeffs.push((idx.clone(), v)),
            }
        }
        FormValue {
            dim: self.dim,
            degree: self.degree,
            coeffs,
        }
    }

    /// Evaluate the form at `p` on `degree` many vectors.
    pub fn eval(&self, p: &[f64], vectors: &[&[f64]]) -> f64 {
        assert_eq!(vectors.len(), self.degree);
        let mut total = 0.0;
        for (idx, f) in &self.terms {
            let c = f(p);
            if c == 0.0 {
                continue;
            }
            total += c * minor_det(idx, vectors);
        }
        total
    }

    pub fn add(&self, other: &Form) -> Form {
        assert_eq!(self.dim, other.dim);
        assert_eq!(self.degree, other.degree);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        let analytic_d = match (&self.analytic_d, &other.analytic_d) {
            (Some(a), Some(b)) => Some(Arc::new(a.add(b))),
            _ => None,
        };
        Form {
            dim: self.dim,
            degree: self.degree,
            terms,
            analytic_d,
            constant_coeffs: self.constant_coeffs && other.constant_coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Form {
        let terms = self
            .terms
            .iter()
            .map(|(idx, f)| {
                let f = f.clone();
                (
                    idx.clone(),
                    Arc::new(move |p: &[f64]| s * f(p)) as CoefFn,
                )
            })
            .collect();
        Form {
            dim: self.dim,
            degree: self.degree,
            terms,
            analytic_d: self.analytic_d.as_ref().map(|d| Arc::new(d.scale(s))),
            constant_coeffs: self.constant_coeffs,
        }
    }

    /// Wedge product, with the shuffle-sign expansion over increasing indices.
    pub fn wedge(&self, other: &Form) -> Result<Form> {
        assert_eq!(self.dim, other.dim);
        let degree = self.degree + other.degree;
        if degree > self.dim {
            return Err(Error::DegreeOverflow(self.degree, other.degree, self.dim));
        }
        let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
        for (i, fa) in &self.terms {
            for (j, fb) in &other.terms {
                if i.iter().any(|a| j.contains(a)) {
                    continue;
                }
                let sign = shuffle_sign(i, j);
                let target = merge_sorted(i, j);
                let fa = fa.clone();
                let fb = fb.clone();
                terms.push((
                    target,
                    Arc::new(move |p: &[f64]| sign * fa(p) * fb(p)) as CoefFn,
                ));
            }
        }
        let analytic_d = match (&self.analytic_d, &other.analytic_d) {
            (Some(da), Some(db)) if degree < self.dim => {
                // d(a ^ b) = da ^ b + (-1)^k a ^ db
                let left = da.wedge(other)?;
                let right = self.wedge(db)?;
                let signed_right = if self.degree % 2 == 0 {
                    right
                } else {
                    right.scale(-1.0)
                };
                Some(Arc::new(left.add(&signed_right)))
            }
            _ => None,
        };
        Ok(Form {
            dim: self.dim,
            degree,
            terms,
            analytic_d,
            constant_coeffs: self.constant_coeffs && other.constant_coeffs,
        })
    }

    /// Exterior derivative. Uses the installed analytic derivative when
    /// present, otherwise centered differences of each coefficient with the
    /// given step.
    pub fn d(&self, step: f64) -> Form {
        if let Some(d) = &self.analytic_d {
            return (**d).clone();
        }
        self.d_fd(step)
    }

    /// Always-finite-difference exterior derivative (used to cross-check
    /// installed analytic derivatives).
    pub fn d_fd(&self, step: f64) -> Form {
        assert!(self.degree < self.dim, "top-degree forms have no d");
        let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
        for (idx, f) in &self.terms {
            for a in 0..self.dim {
                if idx.contains(&a) {
                    continue;
                }
                let pos = idx.iter().filter(|&&i| i < a).count();
                let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                let mut target = idx.clone();
                target.insert(pos, a);
                let f = f.clone();
                terms.push((
                    target,
                    Arc::new(move |p: &[f64]| {
                        let mut q = p.to_vec();
                        q[a] = p[a] + step;
                        let fp = f(&q);
                        q[a] = p[a] - step;
                        let fm = f(&q);
                        sign * (fp - fm) / (2.0 * step)
                    }) as CoefFn,
                ));
            }
        }
        Form {
            dim: self.dim,
            degree: self.degree + 1,
            terms,
            analytic_d: None,
            constant_coeffs: false,
        }
    }

    /// Contraction with a vector field, producing a (k-1)-form. When the
    /// field carries an analytic Jacobian and this form has constant
    /// coefficients, the exterior derivative of the result is installed
    /// analytically.
    pub fn contract_with_field(&self, field: &VectorField) -> Result<Form> {
        if self.degree == 0 {
            return Err(Error::InteriorOfScalar);
        }
        // target index -> [(sign, removed coordinate, parent coefficient)]
        let mut plan: Vec<(Vec<usize>, Vec<(f64, usize, CoefFn)>)> = Vec::new();
        for (idx, f) in &self.terms {
            for (r, &j) in idx.iter().enumerate() {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                let mut target = idx.clone();
                target.remove(r);
                let entry = (sign, j, f.clone());
                match plan.iter_mut().find(|(t, _)| *t == target) {
                    Some((_, v)) => v.push(entry),
                    None => plan.push((target, vec![entry])),
                }
            }
        }
        let eval_field = field.eval.clone();
        let mut terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
        for (target, contributions) in &plan {
            let contributions: Vec<(f64, usize, CoefFn)> = contributions.clone();
            let eval_field = eval_field.clone();
            terms.push((
                target.clone(),
                Arc::new(move |p: &[f64]| {
                    let v = eval_field(p);
                    contributions
                        .iter()
                        .map(|(sign, j, c)| sign * v[*j] * c(p))
                        .sum()
                }) as CoefFn,
            ));
        }
        let mut out = Form {
            dim: self.dim,
            degree: self.degree - 1,
            terms,
            analytic_d: None,
            constant_coeffs: false,
        };
        if let (Some(jac), true) = (&field.jacobian, self.constant_coeffs) {
            // With constant parent coefficients, d(i_v a) only differentiates
            // the field components.
            let origin = vec![0.0; self.dim];
            let const_plan: Vec<(Vec<usize>, Vec<(f64, usize, f64)>)> = plan
                .iter()
                .map(|(t, v)| {
                    (
                        t.clone(),
                        v.iter().map(|(s, j, c)| (*s, *j, c(&origin))).collect(),
                    )
                })
                .collect();
            let mut d_terms: Vec<(Vec<usize>, CoefFn)> = Vec::new();
            for (target, contribs) in &const_plan {
                for a in 0..self.dim {
                    if target.contains(&a) {
                        continue;
                    }
                    let pos = target.iter().filter(|&&i| i < a).count();
                    let outer_sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                    let mut d_target = target.clone();
                    d_target.insert(pos, a);
                    let contribs = contribs.clone();
                    let jac = jac.clone();
                    d_terms.push((
                        d_target,
                        Arc::new(move |p: &[f64]| {
                            let jm = jac(p);
                            outer_sign
                                * contribs
                                    .iter()
                                    .map(|(sign, j, c)| sign * jm.get(*j, a) * c)
                                    .sum::<f64>()
                        }) as CoefFn,
                    ));
                }
            }
            out.analytic_d = Some(Arc::new(Form {
                dim: self.dim,
                degree: self.degree,
                terms: d_terms,
                analytic_d: None,
                constant_coeffs: false,
            }));
        }
        Ok(out)
    }

    /// Max coefficient magnitude of d(self) sampled at the given points,
    /// computed by finite differences regardless of any installed analytic
    /// derivative. Top-degree forms are closed by definition.
    pub fn closedness_residual(&self, points: &[Vec<f64>], step: f64) -> f64 {
        if self.degree == self.dim {
            return 0.0;
        }
        let d = self.d_fd(step);
        points
            .iter()
            .map(|p| d.value_at(p).max_abs())
            .fold(0.0, f64::max)
    }
}

/// Pointwise interior product `i_v a` at the base point of `v`.
pub fn interior_product(v: &TangentVector, a: &Form) -> Result<FormValue> {
    if a.degree == 0 {
        return Err(Error::InteriorOfScalar);
    }
    a.value_at(&v.base).contract(&v.components)
}

/// A complex-coefficient form stored as a real/imaginary pair. Used only for
/// holomorphic volume forms.
#[derive(Debug, Clone)]
pub struct ComplexForm {
    pub re: Form,
    pub im: Form,
}

impl ComplexForm {
    pub fn new(re: Form, im: Form) -> Self {
        assert_eq!(re.dim(), im.dim());
        assert_eq!(re.degree(), im.degree());
        ComplexForm { re, im }
    }

    pub fn degree(&self) -> usize {
        self.re.degree()
    }

    pub fn conj(&self) -> ComplexForm {
        ComplexForm {
            re: self.re.clone(),
            im: self.im.scale(-1.0),
        }
    }

    pub fn wedge(&self, other: &ComplexForm) -> Result<ComplexForm> {
        // (a + ib)(c + id) = (ac - bd) + i(ad + bc)
        let re = self
            .re
            .wedge(&other.re)?
            .add(&self.im.wedge(&other.im)?.scale(-1.0));
        let im = self.re.wedge(&other.im)?.add(&self.im.wedge(&other.re)?);
        Ok(ComplexForm { re, im })
    }

    pub fn scale_complex(&self, re_s: f64, im_s: f64) -> ComplexForm {
        ComplexForm {
            re: self.re.scale(re_s).add(&self.im.scale(-im_s)),
            im: self.im.scale(re_s).add(&self.re.scale(im_s)),
        }
    }

    /// Evaluate on vectors: returns (re, im).
    pub fn eval(&self, p: &[f64], vectors: &[&[f64]]) -> (f64, f64) {
        (self.re.eval(p, vectors), self.im.eval(p, vectors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn dx_wedge_dy() -> Form {
        Form::constant(2, 2, &[(&[0, 1], 1.0)])
    }

    /// Brute-force wedge evaluation over all permutations:
    /// (a ^ b)(v_1..v_{k+l}) = 1/(k! l!) sum_sigma sign(sigma) a(v_sigma..) b(v_sigma..).
    fn wedge_oracle(a: &Form, b: &Form, p: &[f64], vectors: &[&[f64]]) -> f64 {
        let k = a.degree();
        let l = b.degree();
        let n = k + l;
        assert_eq!(vectors.len(), n);
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for smaller in permutations(n - 1) {
                for pos in 0..n {
                    let mut p = smaller.clone();
                    p.insert(pos, n - 1);
                    out.push(p);
                }
            }
            out
        }
        fn parity(perm: &[usize]) -> f64 {
            let mut inv = 0;
            for i in 0..perm.len() {
                for j in i + 1..perm.len() {
                    if perm[i] > perm[j] {
                        inv += 1;
                    }
                }
            }
            if inv % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        let mut total = 0.0;
        for perm in permutations(n) {
            let sgn = parity(&perm);
            let first: Vec<&[f64]> = perm[..k].iter().map(|&i| vectors[i]).collect();
            let second: Vec<&[f64]> = perm[k..].iter().map(|&i| vectors[i]).collect();
            total += sgn * a.eval(p, &first) * b.eval(p, &second);
        }
        let kfact: f64 = (1..=k).product::<usize>() as f64;
        let lfact: f64 = (1..=l).product::<usize>() as f64;
        total / (kfact * lfact)
    }

    #[test]
    fn wedge_of_coordinates_gives_standard_area_form() {
        let dx = Form::constant(2, 1, &[(&[0], 1.0)]);
        let dy = Form::constant(2, 1, &[(&[1], 1.0)]);
        let w = dx.wedge(&dy).unwrap();
        let v = w.value_at(&[0.3, -0.7]);
        assert_relative_eq!(v.coeff(&[0, 1]), 1.0);
        assert_relative_eq!(
            w.eval(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]),
            1.0
        );
    }

    #[test]
    fn wedge_overflow_is_an_error() {
        let w = dx_wedge_dy();
        assert!(matches!(
            w.wedge(&w),
            Err(Error::DegreeOverflow(2, 2, 2))
        ));
    }

    #[test]
    fn product_two_forms_match_permutation_oracle() {
        // p1* omega_M and p2* omega_M on R^4, evaluated at a deterministic
        // point against the brute-force expansion.
        let w1 = Form::constant(4, 2, &[(&[0, 1], 1.0)]);
        let w2 = Form::constant(4, 2, &[(&[2, 3], 1.0)]);
        let wedge = w1.wedge(&w2).unwrap();
        let p = [0.1, 0.2, 0.3, 0.4];
        let vs: Vec<Vec<f64>> = vec![
            vec![0.9, -0.2, 0.4, 0.1],
            vec![0.3, 0.8, -0.5, 0.2],
            vec![-0.1, 0.6, 0.7, -0.3],
            vec![0.2, -0.4, 0.1, 0.9],
        ];
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let got = wedge.eval(&p, &refs);
        let want = wedge_oracle(&w1, &w2, &p, &refs);
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn interior_contraction_in_coordinates() {
        let w = dx_wedge_dy();
        let v = TangentVector::new(vec![0.0, 0.0], vec![1.0, 0.0]);
        let iv = interior_product(&v, &w).unwrap();
        // i_{(1,0)}(dx ^ dy) = dy
        assert_relative_eq!(iv.coeff(&[1]), 1.0);
        assert_relative_eq!(iv.coeff(&[0]), 0.0);
    }

    #[test]
    fn interior_of_scalar_is_rejected() {
        let s = Form::scalar(2, |_| 1.0);
        let v = TangentVector::new(vec![0.0, 0.0], vec![1.0, 0.0]);
        assert!(matches!(
            interior_product(&v, &s),
            Err(Error::InteriorOfScalar)
        ));
    }

    #[test]
    fn interior_derivation_identity_for_lambda_beta() {
        // i_xi(lambda ^ beta) = (i_xi lambda) beta - lambda ^ (i_xi beta)
        // with lambda = (x dy - y dx)/2, beta = dy on R^2.
        let lambda = Form::from_fns(
            2,
            1,
            vec![
                (vec![0], Arc::new(|p: &[f64]| -0.5 * p[1]) as CoefFn),
                (vec![1], Arc::new(|p: &[f64]| 0.5 * p[0]) as CoefFn),
            ],
        );
        let beta = Form::constant(2, 1, &[(&[1], 1.0)]);
        let lb = lambda.wedge(&beta).unwrap();
        for (px, py, vx, vy) in [
            (0.3, 0.9, 1.0, -0.5),
            (-0.7, 0.2, 0.3, 0.8),
            (1.1, -0.4, -0.6, 0.1),
        ] {
            let v = TangentVector::new(vec![px, py], vec![vx, vy]);
            let lhs = interior_product(&v, &lb).unwrap();
            let i_lambda = interior_product(&v, &lambda).unwrap().coeff(&[]);
            let i_beta = interior_product(&v, &beta).unwrap().coeff(&[]);
            // right side coefficients on dx, dy
            let bval = beta.value_at(&[px, py]);
            let lval = lambda.value_at(&[px, py]);
            for idx in [[0usize], [1usize]] {
                let rhs = i_lambda * bval.coeff(&idx) - lval.coeff(&idx) * i_beta;
                assert_relative_eq!(lhs.coeff(&idx), rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exterior_derivative_of_x_dy() {
        let a = Form::from_fns(2, 1, vec![(vec![1], Arc::new(|p: &[f64]| p[0]) as CoefFn)]);
        let da = a.d(DEFAULT_FD_STEP);
        let v = da.value_at(&[0.4, 0.7]);
        assert_relative_eq!(v.coeff(&[0, 1]), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn liouville_primitive_differentiates_to_omega() {
        // lambda = (x dy - y dx)/2 with analytic derivative installed
        let lambda = Form::from_fns(
            2,
            1,
            vec![
                (vec![0], Arc::new(|p: &[f64]| -0.5 * p[1]) as CoefFn),
                (vec![1], Arc::new(|p: &[f64]| 0.5 * p[0]) as CoefFn),
            ],
        )
        .with_analytic_d(Form::constant(2, 2, &[(&[0, 1], 1.0)]));
        let d = lambda.d(DEFAULT_FD_STEP);
        for p in [[0.0, 0.0], [3.0, -2.0], [0.1, 0.7]] {
            let v = d.value_at(&p);
            assert_abs_diff_eq!(v.coeff(&[0, 1]), 1.0, epsilon = 1e-10);
        }
        // FD cross-check of the analytic derivative
        let fd = lambda.d_fd(DEFAULT_FD_STEP);
        for p in [[0.2, 0.5], [-1.0, 2.0]] {
            assert_abs_diff_eq!(fd.value_at(&p).coeff(&[0, 1]), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn contraction_with_field_and_analytic_d() {
        // beta = dy (constant), field = Liouville (x/2, y/2);
        // i_xi beta = y/2, d(i_xi beta) = dy/2.
        let beta = Form::constant(2, 1, &[(&[1], 1.0)]);
        let xi = VectorField::new(|p: &[f64]| vec![0.5 * p[0], 0.5 * p[1]]).with_jacobian(|_| {
            let mut m = SquareMatrix::zeros(2);
            m.set(0, 0, 0.5);
            m.set(1, 1, 0.5);
            m
        });
        let contracted = beta.contract_with_field(&xi).unwrap();
        assert_relative_eq!(contracted.value_at(&[0.3, 0.8]).coeff(&[]), 0.4);
        assert!(contracted.has_analytic_d());
        let d = contracted.d(DEFAULT_FD_STEP);
        let v = d.value_at(&[0.3, 0.8]);
        assert_relative_eq!(v.coeff(&[1]), 0.5, epsilon = 1e-12);
        assert_relative_eq!(v.coeff(&[0]), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn odd_form_squares_to_zero(
            a0 in -2.0f64..2.0, a1 in -2.0f64..2.0, a2 in -2.0f64..2.0, a3 in -2.0f64..2.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0, pw in -1.0f64..1.0,
        ) {
            let a = Form::constant(4, 1, &[(&[0], a0), (&[1], a1), (&[2], a2), (&[3], a3)]);
            let sq = a.wedge(&a).unwrap();
            let v = sq.value_at(&[px, py, pz, pw]);
            prop_assert!(v.max_abs() < 1e-14);
        }

        #[test]
        fn double_contraction_vanishes(
            vx in -2.0f64..2.0, vy in -2.0f64..2.0, vz in -2.0f64..2.0, vw in -2.0f64..2.0,
            c01 in -1.0f64..1.0, c02 in -1.0f64..1.0, c03 in -1.0f64..1.0,
            c12 in -1.0f64..1.0, c13 in -1.0f64..1.0, c23 in -1.0f64..1.0,
            d in -1.0f64..1.0,
        ) {
            // random 3-form on R^4 built as (2-form) ^ (1-form)
            let two = Form::constant(4, 2, &[(&[0,1], c01), (&[0,2], c02), (&[0,3], c03),
                                             (&[1,2], c12), (&[1,3], c13), (&[2,3], c23)]);
            let one = Form::constant(4, 1, &[(&[0], d), (&[2], 1.0 - d)]);
            let three = two.wedge(&one).unwrap();
            let v = TangentVector::new(vec![0.0; 4], vec![vx, vy, vz, vw]);
            let first = interior_product(&v, &three).unwrap();
            let second = first.contract(&v.components).unwrap();
            prop_assert!(second.max_abs() < 1e-12);
        }
    }
}
