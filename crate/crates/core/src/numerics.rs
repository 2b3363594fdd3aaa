//! Small dense linear algebra, quadrature weights, and deterministic sampling
//! helpers shared across the crate.

use crate::error::{Error, Result};

/// Dense square matrix in row-major storage. Sizes here never exceed the
/// ambient dimension (<= 8), so everything is done directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "matrix rows must be square");
            data.extend_from_slice(r);
        }
        SquareMatrix { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.data[i * n + j] * x[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Determinant by partially pivoted Gaussian elimination.
    pub fn det(&self) -> f64 {
        let n = self.n;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[piv * n + col].abs() {
                    piv = r;
                }
            }
            if a[piv * n + col] == 0.0 {
                return 0.0;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            det *= a[col * n + col];
            let inv = 1.0 / a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] * inv;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
        det
    }

    /// Solve `self * x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[piv * n + col].abs() {
                    piv = r;
                }
            }
            let p = a[piv * n + col];
            if p.abs() < 1e-14 {
                return Err(Error::SingularOmega { point: vec![] });
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let inv = 1.0 / a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] * inv;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for j in col + 1..n {
                s -= a[col * n + j] * x[j];
            }
            x[col] = s / a[col * n + col];
        }
        Ok(x)
    }

    /// Inverse by column solves.
    pub fn inverse(&self) -> Result<SquareMatrix> {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let x = self.solve(&e)?;
            for row in 0..n {
                out.set(row, col, x[row]);
            }
        }
        Ok(out)
    }

    /// Smallest singular value estimate via the Gram matrix of the columns.
    /// Only used for rank checks of n x n Gram matrices with n <= 2.
    pub fn min_eigen_sym(&self) -> f64 {
        let n = self.n;
        match n {
            1 => self.get(0, 0),
            2 => {
                let (a, b, d) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let tr = a + d;
                let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
                0.5 * (tr - disc)
            }
            _ => {
                // Power iteration on (cI - A) for the largest, shifted back.
                let c = (0..n).map(|i| self.get(i, i).abs()).sum::<f64>() + 1.0;
                let mut v = vec![1.0; n];
                let mut lam = 0.0;
                for _ in 0..200 {
                    let mut w = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            w[i] += (if i == j { c } else { 0.0 } - self.get(i, j)) * v[j];
                        }
                    }
                    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return 0.0;
                    }
                    for (vi, wi) in v.iter_mut().zip(&w) {
                        *vi = wi / norm;
                    }
                    lam = norm;
                }
                c - lam
            }
        }
    }
}

/// Pairwise (cascade) summation: deterministic reduction order with
/// O(log n) rounding growth.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Composite Simpson weights on `m + 1` evenly spaced samples.
/// For odd interval counts the last three intervals use the 3/8 rule.
pub fn simpson_weights(samples: usize, h: f64) -> Vec<f64> {
    assert!(samples >= 2, "need at least two samples");
    let m = samples - 1; // interval count
    let mut w = vec![0.0; samples];
    if m == 1 {
        // trapezoid fallback
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let even_part = if m % 2 == 0 { m } else { m - 3 };
    let mut i = 0;
    while i + 2 <= even_part {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if m % 2 != 0 {
        if m == 1 {
            unreachable!()
        } else if m >= 3 {
            let s = m - 3;
            w[s] += 3.0 * h / 8.0;
            w[s + 1] += 9.0 * h / 8.0;
            w[s + 2] += 9.0 * h / 8.0;
            w[s + 3] += 3.0 * h / 8.0;
        }
    }
    w
}

/// Conjugate gradient for a symmetric positive semidefinite operator whose
/// kernel is the constants (grid Laplacians). Iterates are kept mean-free.
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn cg_meanfree<F>(apply: F, rhs: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> CgOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let demean = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / n as f64;
        for vi in v.iter_mut() {
            *vi -= m;
        }
    };
    let mut b = rhs.to_vec();
    demean(&mut b);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    demean(&mut x);
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    demean(&mut r);
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut iters = 0;
    while rs.sqrt() / b_norm > tol && iters < max_iter {
        let mut ap = apply(&p);
        demean(&mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap.abs() < 1e-300 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        iters += 1;
    }
    demean(&mut x);
    CgOutcome {
        solution: x,
        iterations: iters,
        residual: rs.sqrt() / b_norm,
    }
}

/// Deterministic quasi-random points in a box, Kronecker (golden-ratio-like)
/// sequence. Good enough for spot-checking pointwise identities.
pub fn sample_points(dim: usize, lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    // first `dim` distinct irrational strides
    const STRIDES: [f64; 8] = [
        0.6180339887498949,
        0.4142135623730951,
        0.7320508075688772,
        0.2360679774997896,
        0.6457513110645906,
        0.3166247903553998,
        0.6055512754639893,
        0.7416573867739413,
    ];
    (0..count)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    let frac = ((k + 1) as f64 * STRIDES[d % 8]).fract();
                    lo[d] + (hi[d] - lo[d]) * frac
                })
                .collect()
        })
        .collect()
}

/// Central finite-difference step for first derivatives of scalar functions.
pub const FD_STEP_GRADIENT: f64 = 1e-5;

/// Central gradient of `f` at `p`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, p: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    let mut q = p.to_vec();
    for d in 0..p.len() {
        let orig = q[d];
        q[d] = orig + step;
        let fp = f(&q);
        q[d] = orig - step;
        let fm = f(&q);
        q[d] = orig;
        g[d] = (fp - fm) / (2.0 * step);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solve_and_det_agree_on_small_system() {
        let m = SquareMatrix::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        assert_relative_eq!(m.det(), 8.0, epsilon = 1e-12);
        let x = m.solve(&[1.0, 2.0, 3.0]).unwrap();
        let back = m.matvec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert_relative_eq!(*b, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        for samples in [3, 5, 9, 101] {
            let h = 1.0 / (samples as f64 - 1.0);
            let w = simpson_weights(samples, h);
            let val: f64 = w
                .iter()
                .enumerate()
                .map(|(i, wi)| {
                    let x = i as f64 * h;
                    wi * (x * x * x - 2.0 * x + 1.0)
                })
                .sum();
            assert_relative_eq!(val, 0.25 - 1.0 + 1.0, epsilon = 1e-12);
        }
        // odd interval count goes through the 3/8 tail
        let samples = 6;
        let h = 1.0 / 5.0;
        let w = simpson_weights(samples, h);
        let val: f64 = w
            .iter()
            .enumerate()
            .map(|(i, wi)| {
                let x = i as f64 * h;
                wi * x * x * x
            })
            .sum();
        assert_relative_eq!(val, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn cg_solves_circle_laplacian() {
        let n = 64usize;
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| 2.0 * v[i] - v[(i + 1) % n] - v[(i + n - 1) % n])
                .collect()
        };
        // manufactured solution: cos(2 pi i / n), mean-free
        let truth: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let rhs = apply(&truth);
        let out = cg_meanfree(apply, &rhs, None, 1e-12, 10 * n);
        for (a, b) in out.solution.iter().zip(&truth) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_smooth_data() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_relative_eq!(pairwise_sum(&xs), naive, epsilon = 1e-9);
    }
}
