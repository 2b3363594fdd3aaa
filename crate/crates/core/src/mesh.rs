//! Discretized parametrized Lagrangian submanifolds: periodic and compactly
//! supported grids, tangent frames, pullback quadrature, Lagrangian-defect
//! checks, induced volume, and least-squares potential recovery for exact
//! one-forms.

use crate::error::{Error, Result};
use crate::form::{Form, TangentVector};
use crate::model::AmbientModel;
use crate::numerics::{cg_meanfree, pairwise_sum, simpson_weights, SquareMatrix};
use std::io::Write;
use std::sync::Arc;

/// One real value per mesh node.
pub type ScalarField = Vec<f64>;

/// Fraction of each box side frozen to the reference immersion.
pub const COLLAR_FRACTION: f64 = 0.1;

/// Default Lagrangian-defect tolerances: analytic constructions and flowed
/// meshes respectively.
pub const TOL_LAG_ANALYTIC: f64 = 1e-8;
pub const TOL_LAG_FLOWED: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// Uniform periodic grid on the n-torus; grid parameter in [0,1) per
    /// axis with `n_per_axis[k]` nodes.
    Torus { n_per_axis: Vec<usize> },
    /// Uniform grid on a compact box including endpoints
    /// (`n_per_axis[k]` intervals, so `n_per_axis[k] + 1` nodes per axis).
    /// The outer collar is frozen to the reference immersion.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n_per_axis: Vec<usize>,
    },
}

impl Domain {
    pub fn axes(&self) -> usize {
        match self {
            Domain::Torus { n_per_axis } => n_per_axis.len(),
            Domain::Box { n_per_axis, .. } => n_per_axis.len(),
        }
    }

    /// Nodes per axis.
    pub fn sizes(&self) -> Vec<usize> {
        match self {
            Domain::Torus { n_per_axis } => n_per_axis.clone(),
            Domain::Box { n_per_axis, .. } => n_per_axis.iter().map(|n| n + 1).collect(),
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        match self {
            Domain::Torus { n_per_axis } => 1.0 / n_per_axis[axis] as f64,
            Domain::Box { lo, hi, n_per_axis } => {
                (hi[axis] - lo[axis]) / n_per_axis[axis] as f64
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    pub fn node_count(&self) -> usize {
        self.sizes().iter().product()
    }

    /// Grid parameter values of a node.
    pub fn params(&self, multi: &[usize]) -> Vec<f64> {
        match self {
            Domain::Torus { .. } => multi
                .iter()
                .enumerate()
                .map(|(k, &i)| i as f64 * self.spacing(k))
                .collect(),
            Domain::Box { lo, .. } => multi
                .iter()
                .enumerate()
                .map(|(k, &i)| lo[k] + i as f64 * self.spacing(k))
                .collect(),
        }
    }
}

/// A discretized parametrized Lagrangian submanifold.
#[derive(Clone)]
pub struct LagMesh {
    pub model: Arc<AmbientModel>,
    pub domain: Domain,
    /// Row-major immersion values, `node_count * dim_ambient` reals. For
    /// torus domains these are the values of a continuous lift; wrapping
    /// axis `k` translates ambient points by `wrap_shifts[k]`.
    immersion: Vec<f64>,
    pub orientation: f64,
    wrap_shifts: Vec<Vec<f64>>,
    /// Lazily built tangent frames, layout [node][axis][ambient dim].
    frames: std::sync::OnceLock<Arc<Vec<f64>>>,
}

impl std::fmt::Debug for LagMesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LagMesh")
            .field("model", &self.model.name)
            .field("domain", &self.domain)
            .field("orientation", &self.orientation)
            .finish()
    }
}

impl LagMesh {
    pub fn mesh_dim(&self) -> usize {
        self.domain.axes()
    }

    pub fn node_count(&self) -> usize {
        self.domain.node_count()
    }

    pub fn point(&self, node: usize) -> &[f64] {
        let d = self.model.dim;
        &self.immersion[node * d..(node + 1) * d]
    }

    pub fn points_raw(&self) -> &[f64] {
        &self.immersion
    }

    pub fn wrap_shifts(&self) -> &[Vec<f64>] {
        &self.wrap_shifts
    }

    /// Build from a grid-parameter immersion closure. For torus domains the
    /// closure must be equivariant: f(u + e_k) = f(u) + shift_k for a
    /// constant ambient shift, which is measured at the origin and spot
    /// checked.
    pub fn from_fn(
        model: Arc<AmbientModel>,
        domain: Domain,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<LagMesh> {
        let axes = domain.axes();
        if axes * 2 != model.dim {
            return Err(Error::ModelInvariant(format!(
                "mesh dimension {axes} must be half the ambient dimension {}",
                model.dim
            )));
        }
        let sizes = domain.sizes();
        let count = domain.node_count();
        let dim = model.dim;
        let mut immersion = vec![0.0; count * dim];
        let mut multi = vec![0usize; axes];
        for node in 0..count {
            node_to_multi(node, &sizes, &mut multi);
            let p = f(&domain.params(&multi));
            if p.len() != dim {
                return Err(Error::ModelInvariant(
                    "immersion closure returned wrong dimension".into(),
                ));
            }
            immersion[node * dim..(node + 1) * dim].copy_from_slice(&p);
        }
        let mut wrap_shifts = Vec::new();
        if domain.is_closed() {
            for k in 0..axes {
                let base = domain.params(&vec![0; axes]);
                let mut shifted = base.clone();
                shifted[k] += 1.0;
                let f0 = f(&base);
                let f1 = f(&shifted);
                let shift: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
                // spot check equivariance at another grid corner
                let mut probe = domain.params(&sizes.iter().map(|s| s / 3).collect::<Vec<_>>());
                let fp0 = f(&probe);
                probe[k] += 1.0;
                let fp1 = f(&probe);
                for d in 0..dim {
                    if ((fp1[d] - fp0[d]) - shift[d]).abs() > 1e-9 {
                        return Err(Error::ModelInvariant(format!(
                            "immersion is not equivariant along axis {k}"
                        )));
                    }
                }
                wrap_shifts.push(shift);
            }
        }
        Ok(LagMesh {
            model,
            domain,
            immersion,
            orientation: 1.0,
            wrap_shifts,
            frames: std::sync::OnceLock::new(),
        })
    }

    /// Replace node positions, keeping domain and wrap structure (used by
    /// flows, which commute with the ambient period translations).
    pub fn with_positions(&self, immersion: Vec<f64>) -> LagMesh {
        assert_eq!(immersion.len(), self.immersion.len());
        LagMesh {
            model: self.model.clone(),
            domain: self.domain.clone(),
            immersion,
            orientation: self.orientation,
            wrap_shifts: self.wrap_shifts.clone(),
            frames: std::sync::OnceLock::new(),
        }
    }

    /// Ambient point of the neighbor along `axis` offset by `step` in
    /// {-1, +1}, with wrap shifts applied on torus domains. Returns None at
    /// a box boundary.
    fn neighbor_point(&self, multi: &[usize], axis: usize, step: isize) -> Option<Vec<f64>> {
        let sizes = self.domain.sizes();
        let dim = self.model.dim;
        let mut m = multi.to_vec();
        let i = m[axis] as isize + step;
        match &self.domain {
            Domain::Torus { .. } => {
                let n = sizes[axis] as isize;
                let wrapped = i.rem_euclid(n) as usize;
                m[axis] = wrapped;
                let node = multi_to_node(&m, &sizes);
                let mut p = self.point(node).to_vec();
                let shifts = (i - wrapped as isize) / n; // -1, 0 or +1 here
                if shifts != 0 {
                    for d in 0..dim {
                        p[d] += shifts as f64 * self.wrap_shifts[axis][d];
                    }
                }
                Some(p)
            }
            Domain::Box { .. } => {
                if i < 0 || i >= sizes[axis] as isize {
                    return None;
                }
                m[axis] = i as usize;
                Some(self.point(multi_to_node(&m, &sizes)).to_vec())
            }
        }
    }

    /// Tangent frame at a node. Periodic domains are differentiated
    /// spectrally (FFT along each axis, exact through the grid's Nyquist
    /// band); box domains use 6th/4th-order stencils degrading to one-sided
    /// second order at the boundary.
    pub fn tangent_frame(&self, node: usize) -> Result<Vec<TangentVector>> {
        let frames = self.frame_field();
        let axes = self.mesh_dim();
        let dim = self.model.dim;
        let base = self.point(node).to_vec();
        let mut frame = Vec::with_capacity(axes);
        for k in 0..axes {
            let start = (node * axes + k) * dim;
            frame.push(TangentVector::new(
                base.clone(),
                frames[start..start + dim].to_vec(),
            ));
        }
        // rank check through the Euclidean Gram matrix
        let mut gram = SquareMatrix::zeros(axes);
        for a in 0..axes {
            for b in 0..axes {
                let dot: f64 = frame[a]
                    .components
                    .iter()
                    .zip(&frame[b].components)
                    .map(|(x, y)| x * y)
                    .sum();
                gram.set(a, b, dot);
            }
        }
        let sigma = gram.min_eigen_sym();
        if sigma < 1e-12 {
            return Err(Error::DegenerateImmersion { node, sigma });
        }
        Ok(frame)
    }

    /// The full frame field, built once per mesh. Layout:
    /// [node][axis][ambient dimension].
    pub fn frame_field(&self) -> &Arc<Vec<f64>> {
        self.frames.get_or_init(|| Arc::new(self.build_frames()))
    }

    fn build_frames(&self) -> Vec<f64> {
        let axes = self.mesh_dim();
        let dim = self.model.dim;
        let count = self.node_count();
        let mut out = vec![0.0; count * axes * dim];
        match &self.domain {
            Domain::Torus { .. } => {
                for k in 0..axes {
                    let d =
                        self.spectral_axis_derivative(&self.immersion, dim, k, &self.wrap_shifts[k]);
                    for node in 0..count {
                        out[(node * axes + k) * dim..(node * axes + k) * dim + dim]
                            .copy_from_slice(&d[node * dim..node * dim + dim]);
                    }
                }
            }
            Domain::Box { .. } => {
                let sizes = self.domain.sizes();
                let mut multi = vec![0usize; axes];
                for node in 0..count {
                    node_to_multi(node, &sizes, &mut multi);
                    let base = self.point(node).to_vec();
                    for k in 0..axes {
                        let h = self.domain.spacing(k);
                        let fetch = |off: isize| -> Option<Vec<f64>> {
                            if off == 0 {
                                Some(base.clone())
                            } else {
                                self.neighbor_point(&multi, k, off)
                            }
                        };
                        let comp = stencil_derivative(&fetch, h, dim);
                        out[(node * axes + k) * dim..(node * axes + k) * dim + dim]
                            .copy_from_slice(&comp);
                    }
                }
            }
        }
        out
    }

    /// Spectral derivative along one periodic axis of a node-indexed
    /// quantity with `width` components per node. The quantity may gain the
    /// constant `shift` on wrapping the axis (continuous lifts of immersions
    /// and phase branches); the returned derivative is with respect to the
    /// grid parameter.
    fn spectral_axis_derivative(
        &self,
        values: &[f64],
        width: usize,
        axis: usize,
        shift: &[f64],
    ) -> Vec<f64> {
        use rustfft::{num_complex::Complex, FftPlanner};
        let sizes = self.domain.sizes();
        let n = sizes[axis];
        let axes = self.mesh_dim();
        let count = self.node_count();
        assert_eq!(values.len(), count * width);
        let mut out = vec![0.0; count * width];
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n);
        let fft_inv = planner.plan_fft_inverse(n);
        let mut multi = vec![0usize; axes];
        let mut line_nodes = vec![0usize; n];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let tau = 2.0 * std::f64::consts::PI;
        for node in 0..count {
            node_to_multi(node, &sizes, &mut multi);
            if multi[axis] != 0 {
                continue;
            }
            let mut m = multi.clone();
            for (i, ln) in line_nodes.iter_mut().enumerate() {
                m[axis] = i;
                *ln = multi_to_node(&m, &sizes);
            }
            for d in 0..width {
                let sh = shift[d];
                for i in 0..n {
                    let v = values[line_nodes[i] * width + d] - (i as f64 / n as f64) * sh;
                    buf[i] = Complex::new(v, 0.0);
                }
                fft_fwd.process(&mut buf);
                for (mi, b) in buf.iter_mut().enumerate() {
                    let freq = if 2 * mi < n {
                        mi as f64
                    } else if 2 * mi == n {
                        0.0
                    } else {
                        mi as f64 - n as f64
                    };
                    let factor = tau * freq;
                    *b = Complex::new(-b.im * factor, b.re * factor);
                }
                fft_inv.process(&mut buf);
                for i in 0..n {
                    out[line_nodes[i] * width + d] = buf[i].re / n as f64 + sh;
                }
            }
        }
        out
    }

    /// Max over nodes and frame pairs of |omega(d_i f, d_j f)|.
    pub fn lagrangian_defect(&self) -> f64 {
        let axes = self.mesh_dim();
        if axes < 2 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for node in 0..self.node_count() {
            let frame = match self.tangent_frame(node) {
                Ok(f) => f,
                Err(_) => return f64::INFINITY,
            };
            let p = self.point(node);
            for i in 0..axes {
                for j in i + 1..axes {
                    let val = self
                        .model
                        .omega
                        .eval(p, &[&frame[i].components, &frame[j].components]);
                    worst = worst.max(val.abs());
                }
            }
        }
        worst
    }

    /// Quadrature weights in grid parameters: trapezoidal on periodic grids
    /// (spectrally accurate for smooth integrands), tensor Simpson on boxes.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let sizes = self.domain.sizes();
        let axes = self.mesh_dim();
        match &self.domain {
            Domain::Torus { .. } => {
                let w: f64 = (0..axes).map(|k| self.domain.spacing(k)).product();
                vec![w; self.node_count()]
            }
            Domain::Box { .. } => {
                let per_axis: Vec<Vec<f64>> = (0..axes)
                    .map(|k| simpson_weights(sizes[k], self.domain.spacing(k)))
                    .collect();
                let mut out = vec![0.0; self.node_count()];
                let mut multi = vec![0usize; axes];
                for (node, o) in out.iter_mut().enumerate() {
                    node_to_multi(node, &sizes, &mut multi);
                    *o = multi
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| per_axis[k][i])
                        .product();
                }
                out
            }
        }
    }

    /// Per-node pullback density of a top-degree form: a(d_1 f, ..., d_n f).
    pub fn pullback_density(&self, a: &Form) -> Result<Vec<f64>> {
        if a.degree() != self.mesh_dim() {
            return Err(Error::DegreeMismatch {
                expected: self.mesh_dim(),
                got: a.degree(),
            });
        }
        let mut out = vec![0.0; self.node_count()];
        for (node, o) in out.iter_mut().enumerate() {
            let frame = self.tangent_frame(node)?;
            let refs: Vec<&[f64]> = frame.iter().map(|t| t.components.as_slice()).collect();
            *o = a.eval(self.point(node), &refs);
        }
        Ok(out)
    }

    /// Integral over the mesh of a degree-n form.
    pub fn integrate_top_form(&self, a: &Form) -> Result<f64> {
        let density = self.pullback_density(a)?;
        let w = self.quadrature_weights();
        let terms: Vec<f64> = density
            .iter()
            .zip(&w)
            .map(|(d, wi)| self.orientation * d * wi)
            .collect();
        Ok(pairwise_sum(&terms))
    }

    /// Integral of (scalar field) * (pullback of a degree-n form).
    pub fn integrate_scalar_against_form(&self, scalar: &[f64], a: &Form) -> Result<f64> {
        assert_eq!(scalar.len(), self.node_count());
        let density = self.pullback_density(a)?;
        let w = self.quadrature_weights();
        let terms: Vec<f64> = (0..self.node_count())
            .map(|i| self.orientation * scalar[i] * density[i] * w[i])
            .collect();
        Ok(pairwise_sum(&terms))
    }

    /// Kaehler metric Gram matrix of the tangent frame at a node.
    pub fn gram_matrix(&self, node: usize) -> Result<SquareMatrix> {
        let g_amb = self.model.metric_at(self.point(node))?;
        let frame = self.tangent_frame(node)?;
        let axes = self.mesh_dim();
        let mut g = SquareMatrix::zeros(axes);
        for a in 0..axes {
            let ga = g_amb.matvec(&frame[a].components);
            for b in 0..axes {
                let dot: f64 = frame[b]
                    .components
                    .iter()
                    .zip(&ga)
                    .map(|(x, y)| x * y)
                    .sum();
                g.set(a, b, dot);
            }
        }
        // symmetrize against rounding
        for a in 0..axes {
            for b in a + 1..axes {
                let s = 0.5 * (g.get(a, b) + g.get(b, a));
                g.set(a, b, s);
                g.set(b, a, s);
            }
        }
        Ok(g)
    }

    /// Per-node volume density sqrt(det G) of the induced Kaehler metric.
    pub fn induced_volume(&self) -> Result<Vec<f64>> {
        (0..self.node_count())
            .map(|node| Ok(self.gram_matrix(node)?.det().sqrt()))
            .collect()
    }

    /// Stencil differential of a node scalar field, as a mesh one-form in
    /// grid coordinates. Same stencil orders as `tangent_frame`.
    pub fn mesh_gradient(&self, scalar: &[f64]) -> MeshOneForm {
        self.mesh_gradient_shifted(scalar, None)
    }

    /// Like `mesh_gradient`, but for scalars that gain a constant shift when
    /// wrapping a periodic axis (continuous phase branches): wrapping axis
    /// `k` adds `shifts[k]`.
    pub fn mesh_gradient_shifted(&self, scalar: &[f64], shifts: Option<&[f64]>) -> MeshOneForm {
        assert_eq!(scalar.len(), self.node_count());
        let sizes = self.domain.sizes();
        let axes = self.mesh_dim();
        let count = self.node_count();
        let mut comp = vec![0.0; count * axes];
        if self.domain.is_closed() {
            for k in 0..axes {
                let shift = [shifts.map(|s| s[k]).unwrap_or(0.0)];
                let d = self.spectral_axis_derivative(scalar, 1, k, &shift);
                for node in 0..count {
                    comp[node * axes + k] = d[node];
                }
            }
        } else {
            let mut multi = vec![0usize; axes];
            for node in 0..count {
                node_to_multi(node, &sizes, &mut multi);
                for k in 0..axes {
                    let h = self.domain.spacing(k);
                    let fetch = |off: isize| -> Option<Vec<f64>> {
                        let i = multi[k] as isize + off;
                        if i < 0 || i >= sizes[k] as isize {
                            return None;
                        }
                        let mut m = multi.clone();
                        m[k] = i as usize;
                        Some(vec![scalar[multi_to_node(&m, &sizes)]])
                    };
                    comp[node * axes + k] = stencil_derivative(&fetch, h, 1)[0];
                }
            }
        }
        MeshOneForm {
            axes,
            components: comp,
        }
    }

    /// Nodes of the frozen collar (box domains): indices within the outer
    /// `COLLAR_FRACTION` of any axis.
    pub fn collar_nodes(&self) -> Vec<usize> {
        let Domain::Box { n_per_axis, .. } = &self.domain else {
            return vec![];
        };
        let sizes = self.domain.sizes();
        let axes = self.mesh_dim();
        let mut multi = vec![0usize; axes];
        let mut out = Vec::new();
        for node in 0..self.node_count() {
            node_to_multi(node, &sizes, &mut multi);
            let mut in_collar = false;
            for k in 0..axes {
                let margin = (COLLAR_FRACTION * n_per_axis[k] as f64).ceil() as usize;
                if multi[k] < margin || multi[k] + margin >= sizes[k] {
                    in_collar = true;
                }
            }
            if in_collar {
                out.push(node);
            }
        }
        out
    }

    /// Least-squares recovery of h with dh = alpha. On torus domains the
    /// axis-cycle integrals of alpha are checked first; non-exact input is
    /// an error carrying the offending cycle integrals.
    pub fn recover_potential(
        &self,
        alpha: &MeshOneForm,
        normalization: Normalization,
    ) -> Result<PotentialRecovery> {
        self.recover_potential_warm(alpha, normalization, None)
    }

    pub fn recover_potential_warm(
        &self,
        alpha: &MeshOneForm,
        normalization: Normalization,
        warm: Option<&[f64]>,
    ) -> Result<PotentialRecovery> {
        assert_eq!(alpha.axes, self.mesh_dim());
        assert_eq!(alpha.components.len(), self.node_count() * self.mesh_dim());
        let sizes = self.domain.sizes();
        let axes = self.mesh_dim();
        let count = self.node_count();
        // exactness precondition on closed domains
        if self.domain.is_closed() {
            let cycles = alpha.cycle_integrals(self);
            let tol = crate::tol::EXACTNESS_CYCLE;
            let worst = cycles.iter().map(|c| c.abs()).fold(0.0, f64::max);
            if worst > tol {
                return Err(Error::NotExact { cycles, tol });
            }
        }
        // edge equations (h_j - h_i)/h_k = mean of alpha_k over the edge,
        // with a 4th-order interpolatory edge mean where neighbors allow
        let is_torus = self.domain.is_closed();
        let edges = {
            let mut edges: Vec<(usize, usize, f64, f64)> = Vec::new(); // (i, j, target, inv_h)
            let mut multi = vec![0usize; axes];
            for node in 0..count {
                node_to_multi(node, &sizes, &mut multi);
                for k in 0..axes {
                    if !is_torus && multi[k] + 1 >= sizes[k] {
                        continue;
                    }
                    let n = sizes[k];
                    let at = |idx: isize| -> f64 {
                        let mut m = multi.clone();
                        m[k] = idx.rem_euclid(n as isize) as usize;
                        alpha.components[multi_to_node(&m, &sizes) * axes + k]
                    };
                    let i = multi[k] as isize;
                    let other = {
                        let mut m2 = multi.clone();
                        m2[k] = (multi[k] + 1) % n;
                        multi_to_node(&m2, &sizes)
                    };
                    let h = self.domain.spacing(k);
                    let wide_ok = is_torus || (i >= 1 && i + 2 < n as isize);
                    let target = if wide_ok {
                        (-at(i - 1) + 13.0 * at(i) + 13.0 * at(i + 1) - at(i + 2)) / 24.0
                    } else {
                        0.5 * (at(i) + at(i + 1))
                    };
                    edges.push((node, other, target, 1.0 / h));
                }
            }
            edges
        };
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; count];
            for &(i, j, _, inv_h) in &edges {
                let flux = (v[j] - v[i]) * inv_h * inv_h;
                out[i] -= flux;
                out[j] += flux;
            }
            // normal equations of min sum ((h_j - h_i)/h - a)^2: sign flip
            for o in out.iter_mut() {
                *o = -*o;
            }
            out
        };
        let mut rhs = vec![0.0; count];
        for &(i, j, target, inv_h) in &edges {
            rhs[i] -= target * inv_h;
            rhs[j] += target * inv_h;
        }
        for r in rhs.iter_mut() {
            *r = -*r;
        }
        let out = cg_meanfree(apply, &rhs, warm, 1e-12, 40 * count.max(100));
        let mut h = out.solution;
        // residual of the original edge equations, relative to alpha scale
        let mut num = 0.0;
        let mut den = 0.0;
        for &(i, j, target, inv_h) in &edges {
            let r = (h[j] - h[i]) * inv_h - target;
            num += r * r;
            den += target * target;
        }
        let residual = if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        };
        // normalization
        match normalization {
            Normalization::CompactSupport => {
                let collar = self.collar_nodes();
                if collar.is_empty() {
                    return Err(Error::Normalization(
                        "compact-support normalization requires a box domain".into(),
                    ));
                }
                let mean: f64 =
                    collar.iter().map(|&i| h[i]).sum::<f64>() / collar.len() as f64;
                for v in h.iter_mut() {
                    *v -= mean;
                }
            }
            Normalization::MeanZero => {
                let w = self.mean_zero_weights()?;
                let total: f64 = w.iter().sum();
                let mean: f64 = h.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
                for v in h.iter_mut() {
                    *v -= mean;
                }
            }
        }
        Ok(PotentialRecovery {
            field: h,
            residual,
            iterations: out.iterations,
        })
    }

    /// Weights for the mean-zero normalization: quadrature weights of the
    /// pullback of re Omega when available, else of the induced volume.
    pub fn mean_zero_weights(&self) -> Result<Vec<f64>> {
        let q = self.quadrature_weights();
        let density = match &self.model.holo_volume {
            Some(omega) => self.pullback_density(&omega.re)?,
            None => self.induced_volume()?,
        };
        Ok(q
            .iter()
            .zip(&density)
            .map(|(w, d)| w * d * self.orientation)
            .collect())
    }

    /// Subtract the weighted mean so that sum h * w = 0 with the designated
    /// weights.
    pub fn make_mean_zero(&self, field: &mut [f64]) -> Result<()> {
        let w = self.mean_zero_weights()?;
        let total: f64 = w.iter().sum();
        let mean: f64 = field.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
        for v in field.iter_mut() {
            *v -= mean;
        }
        Ok(())
    }

    // -- serialization ----------------------------------------------------

    /// Structured text serialization: domain descriptor plus row-major
    /// immersion values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("lagmesh v1\n");
        s.push_str(&format!("model = {}\n", self.model.name));
        match &self.domain {
            Domain::Torus { n_per_axis } => {
                s.push_str("domain = torus\n");
                s.push_str(&format!("sizes = {}\n", join_usize(n_per_axis)));
            }
            Domain::Box { lo, hi, n_per_axis } => {
                s.push_str("domain = box\n");
                s.push_str(&format!("sizes = {}\n", join_usize(n_per_axis)));
                s.push_str(&format!("lo = {}\n", join_f64(lo)));
                s.push_str(&format!("hi = {}\n", join_f64(hi)));
            }
        }
        s.push_str(&format!("orientation = {}\n", self.orientation));
        for (k, shift) in self.wrap_shifts.iter().enumerate() {
            s.push_str(&format!("wrap{} = {}\n", k, join_f64(shift)));
        }
        s.push_str("begin nodes\n");
        let d = self.model.dim;
        for node in 0..self.node_count() {
            s.push_str(&join_f64(&self.immersion[node * d..(node + 1) * d]));
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<LagMesh> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "lagmesh v1" {
            return Err(Error::MeshFormat("missing `lagmesh v1` header".into()));
        }
        let mut model_name = None;
        let mut domain_kind = None;
        let mut sizes: Option<Vec<usize>> = None;
        let mut lo: Option<Vec<f64>> = None;
        let mut hi: Option<Vec<f64>> = None;
        let mut orientation = 1.0;
        let mut wraps: Vec<Vec<f64>> = Vec::new();
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "begin nodes" {
                break;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::MeshFormat(format!("bad header line `{line}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => model_name = Some(value.to_string()),
                "domain" => domain_kind = Some(value.to_string()),
                "sizes" => sizes = Some(parse_usize_list(value)?),
                "lo" => lo = Some(parse_f64_list(value)?),
                "hi" => hi = Some(parse_f64_list(value)?),
                "orientation" => {
                    orientation = value
                        .parse()
                        .map_err(|_| Error::MeshFormat("bad orientation".into()))?
                }
                k if k.starts_with("wrap") => wraps.push(parse_f64_list(value)?),
                other => {
                    return Err(Error::MeshFormat(format!("unknown header key `{other}`")))
                }
            }
        }
        let model_name =
            model_name.ok_or_else(|| Error::MeshFormat("missing model name".into()))?;
        let model = Arc::new(AmbientModel::catalog(&model_name)?);
        let sizes = sizes.ok_or_else(|| Error::MeshFormat("missing sizes".into()))?;
        let domain = match domain_kind.as_deref() {
            Some("torus") => Domain::Torus { n_per_axis: sizes },
            Some("box") => Domain::Box {
                lo: lo.ok_or_else(|| Error::MeshFormat("box domain needs lo".into()))?,
                hi: hi.ok_or_else(|| Error::MeshFormat("box domain needs hi".into()))?,
                n_per_axis: sizes,
            },
            _ => return Err(Error::MeshFormat("missing or unknown domain kind".into())),
        };
        let count = domain.node_count();
        let dim = model.dim;
        let mut immersion = Vec::with_capacity(count * dim);
        for line in lines {
            let line = line.trim();
            if line == "end" {
                break;
            }
            let row = parse_f64_list(line)?;
            if row.len() != dim {
                return Err(Error::MeshFormat(format!(
                    "node row has {} values, expected {dim}",
                    row.len()
                )));
            }
            immersion.extend_from_slice(&row);
        }
        if immersion.len() != count * dim {
            return Err(Error::MeshFormat(format!(
                "expected {count} node rows, found {}",
                immersion.len() / dim
            )));
        }
        if domain.is_closed() && wraps.len() != domain.axes() {
            return Err(Error::MeshFormat(
                "torus domain needs one wrap vector per axis".into(),
            ));
        }
        Ok(LagMesh {
            model,
            domain,
            immersion,
            orientation,
            wrap_shifts: wraps,
            frames: std::sync::OnceLock::new(),
        })
    }

    /// CSV export of node scalar fields, one row per node: grid parameters,
    /// ambient coordinates, then the named fields.
    pub fn write_scalar_csv(
        &self,
        path: &std::path::Path,
        fields: &[(&str, &[f64])],
    ) -> Result<()> {
        let mut out = std::fs::File::create(path)?;
        let axes = self.mesh_dim();
        let sizes = self.domain.sizes();
        let mut header: Vec<String> = (0..axes).map(|k| format!("u{k}")).collect();
        header.extend(self.model.coords.iter().cloned());
        header.extend(fields.iter().map(|(n, _)| n.to_string()));
        writeln!(out, "{}", header.join(","))?;
        let mut multi = vec![0usize; axes];
        for node in 0..self.node_count() {
            node_to_multi(node, &sizes, &mut multi);
            let mut row: Vec<String> = self
                .domain
                .params(&multi)
                .iter()
                .map(|v| format!("{v:.12e}"))
                .collect();
            row.extend(self.point(node).iter().map(|v| format!("{v:.12e}")));
            row.extend(fields.iter().map(|(_, f)| format!("{:.12e}", f[node])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

// -- canned constructions used across scenarios and tests -----------------

impl LagMesh {
    /// The flat circle {y = 0} in a 2-dimensional torus model.
    pub fn flat_circle(model: Arc<AmbientModel>, n: usize) -> Result<LagMesh> {
        LagMesh::from_fn(
            model,
            Domain::Torus {
                n_per_axis: vec![n],
            },
            |u| vec![u[0], 0.0],
        )
    }

    /// The graph {(x, u(x))} of a 1-periodic function in a torus model.
    pub fn graph_circle(
        model: Arc<AmbientModel>,
        n: usize,
        u: impl Fn(f64) -> f64,
    ) -> Result<LagMesh> {
        LagMesh::from_fn(
            model,
            Domain::Torus {
                n_per_axis: vec![n],
            },
            |p| vec![p[0], u(p[0])],
        )
    }

    /// The closed geodesic of class (1, slope) in a 2-torus model.
    pub fn tilted_circle(model: Arc<AmbientModel>, n: usize, slope: i64) -> Result<LagMesh> {
        LagMesh::from_fn(
            model,
            Domain::Torus {
                n_per_axis: vec![n],
            },
            |u| vec![u[0], slope as f64 * u[0]],
        )
    }

    /// The flat sub-torus {y1 = y2 = 0} of a 4-dimensional torus model.
    pub fn flat_subtorus(model: Arc<AmbientModel>, n: usize) -> Result<LagMesh> {
        LagMesh::from_fn(
            model,
            Domain::Torus {
                n_per_axis: vec![n, n],
            },
            |u| vec![u[0], 0.0, u[1], 0.0],
        )
    }

    /// The graph {(x, u(x))} over a compact interval, collar frozen.
    pub fn graph_box(
        model: Arc<AmbientModel>,
        lo: f64,
        hi: f64,
        n: usize,
        u: impl Fn(f64) -> f64,
    ) -> Result<LagMesh> {
        LagMesh::from_fn(
            model,
            Domain::Box {
                lo: vec![lo],
                hi: vec![hi],
                n_per_axis: vec![n],
            },
            |p| vec![p[0], u(p[0])],
        )
    }
}

/// How the additive constant in recovered potentials is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Zero on the frozen collar of a box domain.
    CompactSupport,
    /// Weighted mean zero against the designated volume weights.
    MeanZero,
}

#[derive(Debug, Clone)]
pub struct PotentialRecovery {
    pub field: ScalarField,
    /// Relative residual of the discrete gradient equations.
    pub residual: f64,
    pub iterations: usize,
}

/// A one-form on the mesh: n covector components per node, in grid
/// coordinates.
#[derive(Debug, Clone)]
pub struct MeshOneForm {
    pub axes: usize,
    pub components: Vec<f64>,
}

impl MeshOneForm {
    pub fn zero(mesh: &LagMesh) -> MeshOneForm {
        MeshOneForm {
            axes: mesh.mesh_dim(),
            components: vec![0.0; mesh.node_count() * mesh.mesh_dim()],
        }
    }

    pub fn component(&self, node: usize, axis: usize) -> f64 {
        self.components[node * self.axes + axis]
    }

    pub fn max_norm(&self) -> f64 {
        self.components.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    /// Mixed-partial antisymmetry residual: max |D_i a_j - D_j a_i|.
    pub fn closedness_residual(&self, mesh: &LagMesh) -> f64 {
        let axes = self.axes;
        if axes < 2 {
            return 0.0;
        }
        let per_axis: Vec<MeshOneForm> = (0..axes)
            .map(|j| {
                let scalar: Vec<f64> = (0..mesh.node_count())
                    .map(|n| self.component(n, j))
                    .collect();
                mesh.mesh_gradient(&scalar)
            })
            .collect();
        let mut worst: f64 = 0.0;
        for node in 0..mesh.node_count() {
            for i in 0..axes {
                for j in i + 1..axes {
                    let d_i_aj = per_axis[j].component(node, i);
                    let d_j_ai = per_axis[i].component(node, j);
                    worst = worst.max((d_i_aj - d_j_ai).abs());
                }
            }
        }
        worst
    }

    /// Integrals over the axis cycles of a torus mesh: for each axis the
    /// worst-magnitude loop sum over all grid lines.
    pub fn cycle_integrals(&self, mesh: &LagMesh) -> Vec<f64> {
        let sizes = mesh.domain.sizes();
        let axes = self.axes;
        let mut out = vec![0.0; axes];
        if !mesh.domain.is_closed() {
            return out;
        }
        let mut multi = vec![0usize; axes];
        for k in 0..axes {
            let h = mesh.domain.spacing(k);
            let mut worst: f64 = 0.0;
            // iterate over all lines: nodes with multi[k] == 0
            for node in 0..mesh.node_count() {
                node_to_multi(node, &sizes, &mut multi);
                if multi[k] != 0 {
                    continue;
                }
                let mut sum = 0.0;
                let mut m = multi.clone();
                for i in 0..sizes[k] {
                    m[k] = i;
                    let a = multi_to_node(&m, &sizes);
                    m[k] = (i + 1) % sizes[k];
                    let b = multi_to_node(&m, &sizes);
                    sum += 0.5 * (self.component(a, k) + self.component(b, k)) * h;
                }
                if sum.abs() > worst.abs() {
                    worst = sum;
                }
            }
            out[k] = worst;
        }
        out
    }
}

/// Stencil differentiation of a vector quantity sampled along a grid line.
/// `fetch(off)` returns the values at offset `off` nodes (already adjusted
/// for periodic wrap), or None past a box boundary. Uses a 6th-order
/// centered stencil when three neighbors are available on both sides,
/// 4th-order with two, centered 2nd with one, and a one-sided 2nd-order
/// stencil at the boundary itself.
fn stencil_derivative(
    fetch: &dyn Fn(isize) -> Option<Vec<f64>>,
    h: f64,
    width: usize,
) -> Vec<f64> {
    let have = |off: isize| fetch(off).is_some();
    let combine = |terms: &[(isize, f64)]| -> Vec<f64> {
        let mut out = vec![0.0; width];
        for &(off, w) in terms {
            let v = fetch(off).expect("stencil offset in range");
            for d in 0..width {
                out[d] += w * v[d];
            }
        }
        for o in out.iter_mut() {
            *o /= h;
        }
        out
    };
    let reach_plus = (1..=3).take_while(|&o| have(o)).count() as isize;
    let reach_minus = (1..=3).take_while(|&o| have(-o)).count() as isize;
    let sym = reach_plus.min(reach_minus);
    match sym {
        3 => combine(&[
            (3, 1.0 / 60.0),
            (2, -9.0 / 60.0),
            (1, 45.0 / 60.0),
            (-1, -45.0 / 60.0),
            (-2, 9.0 / 60.0),
            (-3, -1.0 / 60.0),
        ]),
        2 => combine(&[
            (2, -1.0 / 12.0),
            (1, 8.0 / 12.0),
            (-1, -8.0 / 12.0),
            (-2, 1.0 / 12.0),
        ]),
        1 => combine(&[(1, 0.5), (-1, -0.5)]),
        _ => {
            if reach_plus >= 2 {
                combine(&[(0, -1.5), (1, 2.0), (2, -0.5)])
            } else if reach_minus >= 2 {
                combine(&[(0, 1.5), (-1, -2.0), (-2, 0.5)])
            } else {
                panic!("grid axis too short for differentiation")
            }
        }
    }
}

pub(crate) fn node_to_multi(node: usize, sizes: &[usize], out: &mut [usize]) {
    let mut rem = node;
    for k in (0..sizes.len()).rev() {
        out[k] = rem % sizes[k];
        rem /= sizes[k];
    }
}

pub(crate) fn multi_to_node(multi: &[usize], sizes: &[usize]) -> usize {
    let mut node = 0;
    for k in 0..sizes.len() {
        node = node * sizes[k] + multi[k];
    }
    node
}

fn join_f64(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.17e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_usize(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::MeshFormat(format!("bad float `{t}`")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::MeshFormat(format!("bad integer `{t}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ScalarExpr;
    use crate::numerics::simpson_weights;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn t2() -> Arc<AmbientModel> {
        Arc::new(AmbientModel::catalog("t2_cy").unwrap())
    }

    fn t4() -> Arc<AmbientModel> {
        Arc::new(AmbientModel::catalog("t2n_cy").unwrap())
    }

    #[test]
    fn flat_circle_frame_is_exact() {
        let mesh = LagMesh::flat_circle(t2(), 64).unwrap();
        for node in [0, 17, 63] {
            let f = mesh.tangent_frame(node).unwrap();
            assert_abs_diff_eq!(f[0].components[0], 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(f[0].components[1], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn graph_frame_matches_analytic_slope() {
        let n = 64;
        let u = |x: f64| 0.1 * (2.0 * std::f64::consts::PI * x).sin();
        let up = |x: f64| 0.1 * 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).cos();
        let mesh = LagMesh::graph_circle(t2(), n, u).unwrap();
        for node in 0..n {
            let x = node as f64 / n as f64;
            let f = mesh.tangent_frame(node).unwrap();
            assert_abs_diff_eq!(f[0].components[0], 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(f[0].components[1], up(x), epsilon = 2e-3);
        }
    }

    #[test]
    fn rotated_plane_frame_is_constant_rank_two() {
        let theta = 0.37f64;
        let mesh = LagMesh::from_fn(
            t4(),
            Domain::Box {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
                n_per_axis: vec![16, 16],
            },
            |u| {
                vec![
                    u[0] * theta.cos(),
                    u[0] * theta.sin(),
                    u[1] * theta.cos(),
                    u[1] * theta.sin(),
                ]
            },
        )
        .unwrap();
        let f0 = mesh.tangent_frame(0).unwrap();
        let f1 = mesh.tangent_frame(mesh.node_count() / 2).unwrap();
        for k in 0..2 {
            for d in 0..4 {
                assert_abs_diff_eq!(f0[k].components[d], f1[k].components[d], epsilon = 1e-12);
            }
        }
        assert!(mesh.lagrangian_defect() < 1e-12);
    }

    #[test]
    fn degenerate_immersion_is_detected() {
        let mesh = LagMesh::from_fn(
            t4(),
            Domain::Box {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
                n_per_axis: vec![8, 8],
            },
            // second axis collapses
            |u| vec![u[0], 0.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            mesh.tangent_frame(0),
            Err(Error::DegenerateImmersion { .. })
        ));
    }

    #[test]
    fn cotangent_graph_is_lagrangian_to_spectral_accuracy() {
        // graphs of exact one-forms are Lagrangian; band-limited data is
        // differentiated exactly on periodic grids
        let f_expr = ScalarExpr::parse(
            "0.05*sin(2*pi*x1)*cos(4*pi*x2) + 0.02*cos(2*pi*x1)*sin(2*pi*x2)",
            &["x1", "x2"],
        )
        .unwrap();
        let d1 = f_expr.diff(0).unwrap();
        let d2 = f_expr.diff(1).unwrap();
        let make = |n: usize| {
            LagMesh::from_fn(
                t4(),
                Domain::Torus {
                    n_per_axis: vec![n, n],
                },
                |u| {
                    vec![
                        u[0],
                        d1.eval(&[u[0], u[1]]),
                        u[1],
                        d2.eval(&[u[0], u[1]]),
                    ]
                },
            )
            .unwrap()
        };
        assert!(make(24).lagrangian_defect() < 1e-12);
        assert!(make(48).lagrangian_defect() < 1e-12);
    }

    #[test]
    fn flat_subtorus_is_exactly_lagrangian() {
        let mesh = LagMesh::flat_subtorus(t4(), 16).unwrap();
        assert!(mesh.lagrangian_defect() < 1e-14);
    }

    #[test]
    fn non_lagrangian_surface_has_order_one_defect() {
        let model = Arc::new(AmbientModel::catalog("r4_product").unwrap());
        let mesh = LagMesh::from_fn(
            model,
            Domain::Box {
                lo: vec![-0.5, -0.5],
                hi: vec![0.5, 0.5],
                n_per_axis: vec![16, 16],
            },
            |u| vec![u[0], u[1], u[0], 0.0],
        )
        .unwrap();
        assert!(mesh.lagrangian_defect() > 0.5);
    }

    #[test]
    fn unit_period_integral_of_re_omega() {
        let mesh = LagMesh::flat_circle(t2(), 64).unwrap();
        let re = &mesh.model.holo_volume.as_ref().unwrap().re;
        assert_abs_diff_eq!(mesh.integrate_top_form(re).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_form_integrates_to_zero_over_closed_mesh() {
        let mesh =
            LagMesh::graph_circle(t2(), 64, |x| 0.1 * (2.0 * std::f64::consts::PI * x).sin())
                .unwrap();
        let dy = Form::constant(2, 1, &[(&[1], 1.0)]);
        assert_abs_diff_eq!(mesh.integrate_top_form(&dy).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_gamma_boundary_integral_matches_line_quadrature() {
        // integral over graph(u) of lambda ^ gamma equals
        // int u (x u' - u) / 2 dx = -3/4 int u^2 dx for u = U' compact.
        let model = Arc::new(AmbientModel::catalog("r2_exact").unwrap());
        let cap_u = ScalarExpr::parse("bump(x/0.35)", &["x"]).unwrap();
        let u = cap_u.diff(0).unwrap();
        let up = u.diff(0).unwrap();
        let n = 256;
        let mesh = LagMesh::graph_box(model.clone(), -0.5, 0.5, n, |x| u.eval(&[x])).unwrap();
        let lg = model
            .liouville_primitive
            .as_ref()
            .unwrap()
            .wedge(model.gamma_primitive.as_ref().unwrap())
            .unwrap();
        let got = mesh.integrate_top_form(&lg).unwrap();
        // independent line quadrature of the closed-form integrand
        let w = simpson_weights(n + 1, 1.0 / n as f64);
        let mut oracle = 0.0;
        let mut usq = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let x = -0.5 + i as f64 / n as f64;
            let uv = u.eval(&[x]);
            let upv = up.eval(&[x]);
            oracle += wi * 0.5 * uv * (x * upv - uv);
            usq += wi * uv * uv;
        }
        // both routes carry ~1e-5 relative quadrature error from the bump's
        // concentrated high derivatives
        assert_relative_eq!(got, oracle, epsilon = 1e-9, max_relative = 2e-5);
        assert_relative_eq!(got, -0.75 * usq, epsilon = 1e-9, max_relative = 2e-5);
    }

    #[test]
    fn box_quadrature_converges_at_fourth_order() {
        // wide bump on a wide box so the asymptotic regime is reached early
        let model = Arc::new(AmbientModel::catalog("r2_exact").unwrap());
        let cap_u = ScalarExpr::parse("bump(x/0.7)", &["x"]).unwrap();
        let u = cap_u.diff(0).unwrap();
        let x2dy = Form::from_fns(
            2,
            1,
            vec![(
                vec![1],
                std::sync::Arc::new(|p: &[f64]| p[0] * p[0]) as crate::form::CoefFn,
            )],
        );
        let integral_at = |n: usize| {
            let mesh = LagMesh::graph_box(model.clone(), -1.0, 1.0, n, |x| u.eval(&[x])).unwrap();
            mesh.integrate_top_form(&x2dy).unwrap()
        };
        let oracle = integral_at(4096);
        let e64 = (integral_at(64) - oracle).abs();
        let e128 = (integral_at(128) - oracle).abs();
        assert!(e128 < e64 / 8.0, "e64 {e64:.3e} e128 {e128:.3e}");
    }

    #[test]
    fn spectral_quadrature_on_periodic_grids() {
        let u = |x: f64| 0.1 * (2.0 * std::f64::consts::PI * x).sin();
        let vol = |n: usize| {
            let mesh = LagMesh::graph_circle(t2(), n, u).unwrap();
            let dens = mesh.induced_volume().unwrap();
            let w = mesh.quadrature_weights();
            dens.iter().zip(&w).map(|(d, wi)| d * wi).sum::<f64>()
        };
        // doubling the resolution changes the trapezoid value below the
        // frame discretization floor
        assert!((vol(64) - vol(128)).abs() < 1e-7);
        assert!((vol(128) - vol(256)).abs() < 1e-9);
    }

    #[test]
    fn induced_volume_closed_forms() {
        let mesh = LagMesh::flat_circle(t2(), 64).unwrap();
        for d in mesh.induced_volume().unwrap() {
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-13);
        }
        let n = 128;
        let u = |x: f64| 0.08 * (2.0 * std::f64::consts::PI * x).sin();
        let up = |x: f64| 0.08 * 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).cos();
        let mesh = LagMesh::graph_circle(t2(), n, u).unwrap();
        let dens = mesh.induced_volume().unwrap();
        for (node, d) in dens.iter().enumerate() {
            let x = node as f64 / n as f64;
            let want = (1.0 + up(x) * up(x)).sqrt();
            assert_abs_diff_eq!(*d, want, epsilon = 5e-4);
        }
        // tilted circle arc length
        for a in [1i64, 2] {
            let mesh = LagMesh::tilted_circle(t2(), 64, a).unwrap();
            let dens = mesh.induced_volume().unwrap();
            let w = mesh.quadrature_weights();
            let total: f64 = dens.iter().zip(&w).map(|(d, wi)| d * wi).sum();
            assert_relative_eq!(total, (1.0 + (a * a) as f64).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn missing_complex_structure_is_reported() {
        let mut plain = AmbientModel::catalog("t2_cy").unwrap();
        plain.complex_structure = None;
        let mesh = LagMesh::flat_circle(Arc::new(plain), 16).unwrap();
        assert!(matches!(
            mesh.induced_volume(),
            Err(Error::MissingComplexStructure(_))
        ));
    }

    #[test]
    fn recover_known_potential_on_circle() {
        let n = 128;
        let mesh = LagMesh::flat_circle(t2(), n).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        // alpha = d(cos 2 pi x) sampled analytically
        let alpha = MeshOneForm {
            axes: 1,
            components: (0..n).map(|i| -tau * (tau * i as f64 / n as f64).sin()).collect(),
        };
        let rec = mesh.recover_potential(&alpha, Normalization::MeanZero).unwrap();
        // compare against the mean-zero truth (re Omega pullback weight is
        // uniform on the flat circle, so plain cos works)
        for (i, h) in rec.field.iter().enumerate() {
            let want = (tau * i as f64 / n as f64).cos();
            assert_abs_diff_eq!(*h, want, epsilon = 5e-4);
        }
    }

    #[test]
    fn recovery_is_exact_for_edge_compatible_input() {
        let model = Arc::new(AmbientModel::catalog("r2_exact").unwrap());
        let mesh = LagMesh::graph_box(model, -0.5, 0.5, 64, |_| 0.0).unwrap();
        // alpha = 2 dx is the exact discrete gradient of h = 2x
        let alpha = MeshOneForm {
            axes: 1,
            components: vec![2.0; mesh.node_count()],
        };
        let rec = mesh
            .recover_potential(&alpha, Normalization::CompactSupport)
            .unwrap();
        assert!(rec.residual < 1e-10, "residual {:.3e}", rec.residual);
        let grad = mesh.mesh_gradient(&rec.field);
        for node in 1..mesh.node_count() - 1 {
            assert_abs_diff_eq!(grad.component(node, 0), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn recovery_consistency_improves_at_second_order() {
        let tau = 2.0 * std::f64::consts::PI;
        let err_at = |n: usize| {
            let mesh = LagMesh::flat_circle(t2(), n).unwrap();
            let alpha = MeshOneForm {
                axes: 1,
                components: (0..n)
                    .map(|i| -tau * (tau * i as f64 / n as f64).sin())
                    .collect(),
            };
            let rec = mesh.recover_potential(&alpha, Normalization::MeanZero).unwrap();
            (0..n)
                .map(|i| (rec.field[i] - (tau * i as f64 / n as f64).cos()).abs())
                .fold(0.0f64, f64::max)
        };
        let e64 = err_at(64);
        let e128 = err_at(128);
        assert!(e128 < 1e-3);
        assert!(e64 / e128 > 3.0, "orders: {e64:.3e} vs {e128:.3e}");
    }

    #[test]
    fn non_exact_one_form_is_rejected_with_cycle_integral() {
        let mesh = LagMesh::flat_circle(t2(), 64).unwrap();
        let alpha = MeshOneForm {
            axes: 1,
            components: vec![0.3; 64],
        };
        match mesh.recover_potential(&alpha, Normalization::MeanZero) {
            Err(Error::NotExact { cycles, .. }) => {
                assert_abs_diff_eq!(cycles[0], 0.3, epsilon = 1e-12);
            }
            other => panic!("expected NotExact, got {other:?}"),
        }
    }

    #[test]
    fn mesh_text_round_trip() {
        let mesh =
            LagMesh::graph_circle(t2(), 32, |x| 0.1 * (2.0 * std::f64::consts::PI * x).sin())
                .unwrap();
        let text = mesh.to_text();
        let back = LagMesh::from_text(&text).unwrap();
        assert_eq!(back.node_count(), mesh.node_count());
        assert_eq!(back.wrap_shifts(), mesh.wrap_shifts());
        for node in 0..mesh.node_count() {
            for d in 0..2 {
                assert_eq!(back.point(node)[d], mesh.point(node)[d]);
            }
        }
        assert!(LagMesh::from_text("not a mesh").is_err());
    }

    #[test]
    fn collar_nodes_cover_both_ends() {
        let model = Arc::new(AmbientModel::catalog("r2_exact").unwrap());
        let mesh = LagMesh::graph_box(model, -0.5, 0.5, 40, |_| 0.0).unwrap();
        let collar = mesh.collar_nodes();
        assert!(collar.contains(&0));
        assert!(collar.contains(&40));
        assert!(!collar.contains(&20));
        // 10% per side of 41 nodes: 4 + 4 with ceil margin
        assert_eq!(collar.len(), 8);
    }
}
