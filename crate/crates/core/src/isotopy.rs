//! Hamiltonian flows of meshes, path velocity one-forms, and
//! two-parameter-family consistency checks.

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::form::Form;
use crate::mesh::{LagMesh, MeshOneForm, Normalization, PotentialRecovery};
use crate::model::{AmbientModel, ScalarFn};
use crate::numerics::pairwise_sum;
use crate::tol;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    /// Vanishes outside a compact region; the right notion on Euclidean
    /// models.
    Compact,
    /// Mean zero against the Liouville measure; the right notion on compact
    /// (torus) models and enforced there.
    Normalized,
}

/// A time-dependent Hamiltonian H(t, x) with optional analytic spatial
/// gradient.
#[derive(Clone)]
pub struct HamiltonianFamily {
    f: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    grad: Option<Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>>,
    pub support: SupportKind,
}

impl HamiltonianFamily {
    pub fn new(
        support: SupportKind,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        HamiltonianFamily {
            f: Arc::new(f),
            grad: None,
            support,
        }
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn zero(support: SupportKind) -> Self {
        Self::new(support, |_, _| 0.0).with_gradient(|_, p| vec![0.0; p.len()])
    }

    /// Compile from an expression in (t, coordinates) with symbolic spatial
    /// gradient.
    pub fn from_expr(src: &str, model: &AmbientModel, support: SupportKind) -> Result<Self> {
        let mut vars: Vec<&str> = vec!["t"];
        let coord_refs = model.coord_refs();
        vars.extend(coord_refs.iter());
        let e = ScalarExpr::parse(src, &vars)?;
        let grads: Vec<ScalarExpr> = (1..vars.len())
            .map(|i| e.diff(i))
            .collect::<Result<Vec<_>>>()?;
        let e2 = e.clone();
        Ok(HamiltonianFamily {
            f: Arc::new(move |t: f64, p: &[f64]| {
                let mut args = Vec::with_capacity(p.len() + 1);
                args.push(t);
                args.extend_from_slice(p);
                e2.eval(&args)
            }),
            grad: Some(Arc::new(move |t: f64, p: &[f64]| {
                let mut args = Vec::with_capacity(p.len() + 1);
                args.push(t);
                args.extend_from_slice(p);
                grads.iter().map(|g| g.eval(&args)).collect()
            })),
            support,
        })
    }

    pub fn value(&self, t: f64, p: &[f64]) -> f64 {
        (self.f)(t, p)
    }

    /// Freeze time, yielding an ambient scalar function.
    pub fn at_time(&self, t: f64) -> ScalarFn {
        let f = self.f.clone();
        let mut s = ScalarFn::new(move |p: &[f64]| f(t, p));
        if let Some(g) = &self.grad {
            let g = g.clone();
            s = s.with_gradient(move |p: &[f64]| g(t, p));
        }
        s
    }

    /// Reparametrize time: returns sigma'(t) H(sigma(t), x). Flowing the
    /// result over [0,1] traverses the same curve of submanifolds.
    pub fn reparametrized(
        &self,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let f = self.f.clone();
        let grad = self.grad.clone();
        let sigma = Arc::new(sigma);
        let sigma_dot = Arc::new(sigma_dot);
        let s2 = sigma.clone();
        let sd2 = sigma_dot.clone();
        let mut out = HamiltonianFamily {
            f: Arc::new(move |t: f64, p: &[f64]| sd2(t) * f(s2(t), p)),
            grad: None,
            support: self.support,
        };
        if let Some(g) = grad {
            out.grad = Some(Arc::new(move |t: f64, p: &[f64]| {
                let scale = sigma_dot(t);
                g(sigma(t), p).into_iter().map(|v| scale * v).collect()
            }));
        }
        out
    }

    /// Add a spatially constant function of time. Does not change the flow.
    pub fn shifted(&self, c: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let f = self.f.clone();
        let grad = self.grad.clone();
        HamiltonianFamily {
            f: Arc::new(move |t: f64, p: &[f64]| f(t, p) + c(t)),
            grad,
            support: self.support,
        }
    }

    /// The family generating first `self` then `other`, each at double
    /// speed, over [0, 1].
    pub fn concatenated(&self, other: &HamiltonianFamily) -> Self {
        let f1 = self.f.clone();
        let f2 = other.f.clone();
        let g1 = self.grad.clone();
        let g2 = other.grad.clone();
        let mut out = HamiltonianFamily {
            f: Arc::new(move |t: f64, p: &[f64]| {
                if t < 0.5 {
                    2.0 * f1(2.0 * t, p)
                } else {
                    2.0 * f2(2.0 * t - 1.0, p)
                }
            }),
            grad: None,
            support: self.support,
        };
        if let (Some(g1), Some(g2)) = (g1, g2) {
            out.grad = Some(Arc::new(move |t: f64, p: &[f64]| {
                let g = if t < 0.5 {
                    g1(2.0 * t, p)
                } else {
                    g2(2.0 * t - 1.0, p)
                };
                g.into_iter().map(|v| 2.0 * v).collect()
            }));
        }
        out
    }

    /// Spatial gradient at (t, p), analytic when available.
    pub fn gradient(&self, t: f64, p: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(t, p),
            None => {
                let f = self.f.clone();
                crate::numerics::fd_gradient(
                    &move |q: &[f64]| f(t, q),
                    p,
                    crate::numerics::FD_STEP_GRADIENT,
                )
            }
        }
    }

    /// Mean of H against the Liouville density over the fundamental domain
    /// of a torus model, worst over the given times.
    pub fn normalization_residual(&self, model: &AmbientModel, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| model.liouville_mean(&|p: &[f64]| self.value(t, p)).abs())
            .fold(0.0, f64::max)
    }
}

/// A time-sampled Lagrangian isotopy with node-correspondent meshes.
#[derive(Clone)]
pub struct IsotopyPath {
    pub times: Vec<f64>,
    pub meshes: Vec<LagMesh>,
    pub family: Option<HamiltonianFamily>,
    pub normalization: Normalization,
}

impl std::fmt::Debug for IsotopyPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IsotopyPath")
            .field("samples", &self.times.len())
            .field("normalization", &self.normalization)
            .finish()
    }
}

/// Advance a single point by RK4 through the Hamiltonian vector field of a
/// time-dependent family.
pub fn flow_point(
    model: &AmbientModel,
    family: &HamiltonianFamily,
    t0: f64,
    t1: f64,
    steps: usize,
    p: &[f64],
) -> Result<Vec<f64>> {
    let dt = (t1 - t0) / steps as f64;
    let mut x = p.to_vec();
    let xi = |t: f64, q: &[f64]| -> Result<Vec<f64>> {
        let h = family.at_time(t);
        Ok(model.hamiltonian_vector_at(&h, q)?.components)
    };
    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        x = rk4_step(&xi, t, dt, &x)?;
    }
    Ok(x)
}

fn rk4_step(
    xi: &dyn Fn(f64, &[f64]) -> Result<Vec<f64>>,
    t: f64,
    dt: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let k1 = xi(t, x)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = xi(t + 0.5 * dt, &x2)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = xi(t + 0.5 * dt, &x3)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = xi(t + dt, &x4)?;
    Ok((0..x.len())
        .map(|d| x[d] + dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]))
        .collect())
}

impl IsotopyPath {
    /// Flow a mesh through the Hamiltonian family over [0, 1] with classic
    /// fixed-step RK4, monitoring the Lagrangian defect at every sample.
    pub fn flow(mesh0: &LagMesh, family: HamiltonianFamily, steps: usize) -> Result<IsotopyPath> {
        Self::flow_over(mesh0, family, 0.0, 1.0, steps)
    }

    pub fn flow_over(
        mesh0: &LagMesh,
        family: HamiltonianFamily,
        t0: f64,
        t1: f64,
        steps: usize,
    ) -> Result<IsotopyPath> {
        Self::flow_with_limit(mesh0, family, t0, t1, steps, tol::LAG_DEFECT_ABORT)
    }

    pub fn flow_with_limit(
        mesh0: &LagMesh,
        family: HamiltonianFamily,
        t0: f64,
        t1: f64,
        steps: usize,
        abort_limit: f64,
    ) -> Result<IsotopyPath> {
        assert!(steps >= 1, "need at least one flow step");
        let model = mesh0.model.clone();
        if family.support == SupportKind::Normalized && model.is_compact() {
            let resid = family.normalization_residual(&model, &[t0, 0.5 * (t0 + t1), t1]);
            if resid > 1e-8 {
                return Err(Error::Normalization(format!(
                    "family declared normalized but has Liouville mean {resid:.3e}"
                )));
            }
        }
        let dt = (t1 - t0) / steps as f64;
        let dim = model.dim;
        let count = mesh0.node_count();
        let mut times = Vec::with_capacity(steps + 1);
        let mut meshes = Vec::with_capacity(steps + 1);
        times.push(t0);
        meshes.push(mesh0.clone());
        // constant-coefficient omega admits a precomputed solve
        let winv_t = if model.omega.is_constant_coeff() {
            model
                .omega_matrix(&vec![0.0; dim])
                .transpose()
                .inverse()
                .ok()
        } else {
            None
        };
        let xi = |t: f64, q: &[f64]| -> Result<Vec<f64>> {
            match &winv_t {
                Some(m) => Ok(m.matvec(&family.gradient(t, q))),
                None => {
                    let h = family.at_time(t);
                    Ok(model.hamiltonian_vector_at(&h, q)?.components)
                }
            }
        };
        let mut positions = mesh0.points_raw().to_vec();
        for s in 0..steps {
            let t = t0 + s as f64 * dt;
            let mut next = vec![0.0; positions.len()];
            for node in 0..count {
                let x = &positions[node * dim..(node + 1) * dim];
                let stepped = rk4_step(&xi, t, dt, x)?;
                next[node * dim..(node + 1) * dim].copy_from_slice(&stepped);
            }
            positions = next;
            let mesh = meshes[0].with_positions(positions.clone());
            let defect = mesh.lagrangian_defect();
            if defect > abort_limit {
                return Err(Error::FlowDegraded {
                    time: t + dt,
                    defect,
                    limit: abort_limit,
                });
            }
            times.push(t + dt);
            meshes.push(mesh);
        }
        let normalization = if mesh0.domain.is_closed() {
            Normalization::MeanZero
        } else {
            Normalization::CompactSupport
        };
        Ok(IsotopyPath {
            times,
            meshes,
            family: Some(family),
            normalization,
        })
    }

    /// Assemble a path from explicitly constructed meshes (translations and
    /// other symplectic-but-not-Hamiltonian motions).
    pub fn from_meshes(meshes: Vec<LagMesh>, times: Vec<f64>) -> Result<IsotopyPath> {
        if meshes.len() != times.len() || meshes.len() < 2 {
            return Err(Error::ModelInvariant(
                "a path needs equally many meshes and times, at least two".into(),
            ));
        }
        let normalization = if meshes[0].domain.is_closed() {
            Normalization::MeanZero
        } else {
            Normalization::CompactSupport
        };
        Ok(IsotopyPath {
            times,
            meshes,
            family: None,
            normalization,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.times.len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Node velocities at a sample, by 4th-order time stencils (one-sided
    /// at the ends), degrading to lower order for very short paths.
    pub fn velocity(&self, j: usize) -> Vec<f64> {
        let m = self.sample_count();
        assert!(j < m);
        let dt = self.dt();
        let len = self.meshes[0].points_raw().len();
        let take = |idx: usize| self.meshes[idx].points_raw();
        let combine = |terms: &[(usize, f64)], scale: f64| -> Vec<f64> {
            let mut out = vec![0.0; len];
            for &(idx, w) in terms {
                let v = take(idx);
                for d in 0..len {
                    out[d] += w * v[d];
                }
            }
            for o in out.iter_mut() {
                *o /= scale * dt;
            }
            out
        };
        if m >= 5 {
            let last = m - 1;
            if j >= 2 && j + 2 <= last {
                combine(
                    &[(j - 2, 1.0), (j - 1, -8.0), (j + 1, 8.0), (j + 2, -1.0)],
                    12.0,
                )
            } else if j == 0 {
                combine(
                    &[(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)],
                    12.0,
                )
            } else if j == 1 {
                combine(
                    &[(0, -3.0), (1, -10.0), (2, 18.0), (3, -6.0), (4, 1.0)],
                    12.0,
                )
            } else if j == last {
                combine(
                    &[
                        (last - 4, 3.0),
                        (last - 3, -16.0),
                        (last - 2, 36.0),
                        (last - 1, -48.0),
                        (last, 25.0),
                    ],
                    12.0,
                )
            } else {
                // j == last - 1
                combine(
                    &[
                        (last - 4, -1.0),
                        (last - 3, 6.0),
                        (last - 2, -18.0),
                        (last - 1, 10.0),
                        (last, 3.0),
                    ],
                    12.0,
                )
            }
        } else if m >= 3 {
            if j == 0 {
                combine(&[(0, -3.0), (1, 4.0), (2, -1.0)], 2.0)
            } else if j == m - 1 {
                combine(&[(m - 3, 1.0), (m - 2, -4.0), (m - 1, 3.0)], 2.0)
            } else {
                combine(&[(j - 1, -1.0), (j + 1, 1.0)], 2.0)
            }
        } else {
            combine(&[(0, -1.0), (1, 1.0)], 1.0)
        }
    }

    /// The velocity one-form at a sample: the pullback of i_{v} omega.
    pub fn velocity_form(&self, j: usize) -> Result<MeshOneForm> {
        let mesh = &self.meshes[j];
        let v = self.velocity(j);
        let axes = mesh.mesh_dim();
        let dim = mesh.model.dim;
        let mut comp = vec![0.0; mesh.node_count() * axes];
        for node in 0..mesh.node_count() {
            let frame = mesh.tangent_frame(node)?;
            let p = mesh.point(node);
            let vn = &v[node * dim..(node + 1) * dim];
            for k in 0..axes {
                comp[node * axes + k] = mesh.model.omega.eval(p, &[vn, &frame[k].components]);
            }
        }
        Ok(MeshOneForm {
            axes,
            components: comp,
        })
    }

    /// Max-norm of velocity_form minus d(H_t restricted to the mesh); by
    /// uniqueness of generating Hamiltonians this must be small for flowed
    /// paths.
    pub fn hamiltonian_restriction_residual(&self, j: usize) -> Result<f64> {
        let family = self
            .family
            .as_ref()
            .ok_or_else(|| Error::ModelInvariant("path has no generating family".into()))?;
        let mesh = &self.meshes[j];
        let t = self.times[j];
        let alpha = self.velocity_form(j)?;
        let restricted: Vec<f64> = (0..mesh.node_count())
            .map(|n| family.value(t, mesh.point(n)))
            .collect();
        // H restricted to the lift may gain a constant per wrap for
        // multivalued linear Hamiltonians (translation generators)
        let shifts: Vec<f64> = mesh
            .wrap_shifts()
            .iter()
            .map(|w| {
                let p0 = mesh.point(0);
                let q: Vec<f64> = p0.iter().zip(w).map(|(a, b)| a + b).collect();
                family.value(t, &q) - family.value(t, p0)
            })
            .collect();
        let dh = mesh.mesh_gradient_shifted(&restricted, Some(&shifts));
        let mut worst: f64 = 0.0;
        for i in 0..alpha.components.len() {
            worst = worst.max((alpha.components[i] - dh.components[i]).abs());
        }
        Ok(worst)
    }

    /// Recovered Hamiltonian potential of the velocity form at a sample.
    pub fn potential(&self, j: usize, warm: Option<&[f64]>) -> Result<PotentialRecovery> {
        let alpha = self.velocity_form(j)?;
        self.meshes[j].recover_potential_warm(&alpha, self.normalization, warm)
    }

    /// Worst Lagrangian defect over the stored samples.
    pub fn max_defect(&self) -> f64 {
        self.meshes
            .iter()
            .map(|m| m.lagrangian_defect())
            .fold(0.0, f64::max)
    }

    /// Structured text serialization: header plus each sample's mesh.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("lagpath v1\n");
        s.push_str(&format!("samples = {}\n", self.sample_count()));
        for (t, mesh) in self.times.iter().zip(&self.meshes) {
            s.push_str(&format!("time = {t:.17e}\n"));
            s.push_str(&mesh.to_text());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<IsotopyPath> {
        let mut lines = text.lines().peekable();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "lagpath v1" {
            return Err(Error::MeshFormat("missing `lagpath v1` header".into()));
        }
        let count_line = lines
            .next()
            .ok_or_else(|| Error::MeshFormat("missing sample count".into()))?;
        let count: usize = count_line
            .trim()
            .strip_prefix("samples =")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::MeshFormat("bad sample count".into()))?;
        let mut times = Vec::with_capacity(count);
        let mut meshes = Vec::with_capacity(count);
        for _ in 0..count {
            let tline = lines
                .next()
                .ok_or_else(|| Error::MeshFormat("missing time line".into()))?;
            let t: f64 = tline
                .trim()
                .strip_prefix("time =")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::MeshFormat("bad time line".into()))?;
            times.push(t);
            let mut mesh_text = String::new();
            for line in lines.by_ref() {
                mesh_text.push_str(line);
                mesh_text.push('\n');
                if line.trim() == "end" {
                    break;
                }
            }
            meshes.push(LagMesh::from_text(&mesh_text)?);
        }
        IsotopyPath::from_meshes(meshes, times)
    }
}

/// A two-parameter family of Hamiltonians (H_{s,t}, K_{s,t}) with H
/// generating the t-direction and K the s-direction.
#[derive(Clone)]
pub struct TwoParamFamily {
    pub h: Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>,
    pub k: Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>,
}

impl TwoParamFamily {
    /// The family of phi_{s,t} = (flow of k0 for time s) o (flow of h0 for
    /// time t) for autonomous h0, k0. The associated Hamiltonians are
    /// H_{s,t} = h0 o (flow of k0 for time -s) and K_{s,t} = k0.
    pub fn composed_flows(
        model: Arc<AmbientModel>,
        h0: HamiltonianFamily,
        k0: HamiltonianFamily,
        flow_steps: usize,
    ) -> TwoParamFamily {
        let model2 = model.clone();
        let k0_for_h = k0.clone();
        TwoParamFamily {
            h: Arc::new(move |s: f64, _t: f64, p: &[f64]| {
                if s == 0.0 {
                    return h0.value(0.0, p);
                }
                let back = flow_point(&model2, &k0_for_h, 0.0, -s, flow_steps, p)
                    .unwrap_or_else(|_| vec![f64::NAN; p.len()]);
                h0.value(0.0, &back)
            }),
            k: Arc::new(move |_s: f64, _t: f64, p: &[f64]| k0.value(0.0, p)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoParamReport {
    /// Worst deviation of dH/ds - dK/dt - {H, K} from its spatial mean.
    pub max_spatial_deviation: f64,
    /// Worst magnitude of the spatial mean itself (the constant c(s, t)).
    pub max_constant: f64,
}

/// Evaluate dH/ds - dK/dt - {H,K} over sample points for a grid of (s, t)
/// values; per the two-parameter compatibility identity the result must be
/// spatially constant, and zero under compact support / normalization.
pub fn two_param_residual(
    model: &AmbientModel,
    family: &TwoParamFamily,
    s_values: &[f64],
    t_values: &[f64],
    points: &[Vec<f64>],
    fd_delta: f64,
) -> TwoParamReport {
    let mut max_dev: f64 = 0.0;
    let mut max_const: f64 = 0.0;
    for &s in s_values {
        for &t in t_values {
            let h_fn = {
                let h = family.h.clone();
                ScalarFn::new(move |p: &[f64]| h(s, t, p))
            };
            let k_fn = {
                let k = family.k.clone();
                ScalarFn::new(move |p: &[f64]| k(s, t, p))
            };
            let residuals: Vec<f64> = points
                .iter()
                .map(|p| {
                    let dh_ds = ((family.h)(s + fd_delta, t, p) - (family.h)(s - fd_delta, t, p))
                        / (2.0 * fd_delta);
                    let dk_dt = ((family.k)(s, t + fd_delta, p) - (family.k)(s, t - fd_delta, p))
                        / (2.0 * fd_delta);
                    let bracket = model.poisson_bracket(&h_fn, &k_fn, p).unwrap_or(f64::NAN);
                    dh_ds - dk_dt - bracket
                })
                .collect();
            let mean = pairwise_sum(&residuals) / residuals.len() as f64;
            let dev = residuals
                .iter()
                .map(|r| (r - mean).abs())
                .fold(0.0, f64::max);
            max_dev = max_dev.max(dev);
            max_const = max_const.max(mean.abs());
        }
    }
    TwoParamReport {
        max_spatial_deviation: max_dev,
        max_constant: max_const,
    }
}

/// Residual of the Lagrangian bracket identity
/// int {H,K} beta = int (H d i_zeta beta - K d i_xi beta) over the mesh.
pub fn lemma_bracket_residual(
    mesh: &LagMesh,
    h: &ScalarFn,
    k: &ScalarFn,
    beta: &Form,
) -> Result<f64> {
    let model = &mesh.model;
    let bracket: Vec<f64> = (0..mesh.node_count())
        .map(|n| model.poisson_bracket(h, k, mesh.point(n)))
        .collect::<Result<Vec<_>>>()?;
    let lhs = mesh.integrate_scalar_against_form(&bracket, beta)?;
    let xi = model.hamiltonian_field(h);
    let zeta = model.hamiltonian_field(k);
    let d_i_zeta = beta.contract_with_field(&zeta)?.d(crate::form::DEFAULT_FD_STEP);
    let d_i_xi = beta.contract_with_field(&xi)?.d(crate::form::DEFAULT_FD_STEP);
    let h_vals: Vec<f64> = (0..mesh.node_count())
        .map(|n| h.value(mesh.point(n)))
        .collect();
    let k_vals: Vec<f64> = (0..mesh.node_count())
        .map(|n| k.value(mesh.point(n)))
        .collect();
    let rhs = mesh.integrate_scalar_against_form(&h_vals, &d_i_zeta)?
        - mesh.integrate_scalar_against_form(&k_vals, &d_i_xi)?;
    Ok((lhs - rhs).abs())
}
