//! Small dense symmetric matrices, compressed sparse rows and the Krylov
//! solvers used by the elliptic assemblies.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix of order 2 or 3, stored densely in a 3×3 array.
/// Entries outside the leading `n × n` block are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    pub n: usize,
    pub a: [[f64; 3]; 3],
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        SymMat { n, a: [[0.0; 3]; 3] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(n, &[1.0, 1.0, 1.0])
    }

    pub fn diag(n: usize, d: &[f64]) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i][i] = d[i];
        }
        m
    }

    /// Builds from the upper triangle of `rows`; the lower triangle is mirrored.
    pub fn from_rows(n: usize, rows: &[&[f64]]) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.a[i][j] = rows[i][j];
                m.a[j][i] = rows[i][j];
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.a[i][j] = v;
        self.a[j][i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i][i]).sum()
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        match self.n {
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    /// Adjugate (transposed cofactor matrix); equals `det · inverse` when invertible.
    pub fn adjugate(&self) -> Self {
        let a = &self.a;
        let mut c = Self::zeros(self.n);
        match self.n {
            2 => {
                c.a[0][0] = a[1][1];
                c.a[1][1] = a[0][0];
                c.a[0][1] = -a[0][1];
                c.a[1][0] = -a[1][0];
            }
            _ => {
                c.a[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
                c.a[0][1] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
                c.a[0][2] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
                c.a[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
                c.a[1][2] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
                c.a[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                c.a[1][0] = c.a[0][1];
                c.a[2][0] = c.a[0][2];
                c.a[2][1] = c.a[1][2];
            }
        }
        c
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.adjugate().scale(1.0 / d))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        for row in m.a.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.a[i][j] += other.a[i][j];
            }
        }
        m
    }

    /// Plain matrix product; the result is generally not symmetric, so it is
    /// returned as a raw array.
    pub fn matmul(&self, other: &Self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..self.n {
            for j in 0..self.n {
                out[i][j] = (0..self.n).map(|k| self.a[i][k] * other.a[k][j]).sum();
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self.a[i][j] * v[j]).sum();
        }
        out
    }

    /// `vᵀ M v`.
    pub fn quad(&self, v: &[f64; 3]) -> f64 {
        let mv = self.mul_vec(v);
        (0..self.n).map(|i| mv[i] * v[i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut d = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                d = d.max((self.a[i][j] - self.a[j][i]).abs());
            }
        }
        d
    }

    /// Eigenvalues in ascending order (first `n` entries meaningful).
    pub fn eigenvalues(&self) -> [f64; 3] {
        let a = &self.a;
        match self.n {
            2 => {
                let m = 0.5 * (a[0][0] + a[1][1]);
                let r = (0.25 * (a[0][0] - a[1][1]).powi(2) + a[0][1] * a[0][1]).sqrt();
                [m - r, m + r, 0.0]
            }
            _ => {
                let m = Matrix3::from_fn(|i, j| a[i][j]);
                let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
                ev.sort_by(|x, y| x.total_cmp(y));
                [ev[0], ev[1], ev[2]]
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[self.n - 1]
    }

    /// Replaces every eigenvalue below `floor` by `floor`.
    pub fn with_eigenvalue_floor(&self, floor: f64) -> Self {
        if self.min_eigenvalue() >= floor {
            return *self;
        }
        self.map_spectrum(|lam| lam.max(floor))
    }

    /// Positive square root; eigenvalues are clamped at zero first.
    pub fn sqrt(&self) -> Self {
        self.map_spectrum(|lam| lam.max(0.0).sqrt())
    }

    /// `Σ f(λ_k) v_k v_kᵀ` over the eigenpairs.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self::zeros(self.n);
        match self.n {
            2 => {
                let eig = SymmetricEigen::new(Matrix2::from_fn(|i, j| self.a[i][j]));
                for k in 0..2 {
                    let lam = f(eig.eigenvalues[k]);
                    let v = eig.eigenvectors.column(k);
                    for i in 0..2 {
                        for j in 0..2 {
                            out.a[i][j] += lam * v[i] * v[j];
                        }
                    }
                }
            }
            _ => {
                let eig = SymmetricEigen::new(Matrix3::from_fn(|i, j| self.a[i][j]));
                for k in 0..3 {
                    let lam = f(eig.eigenvalues[k]);
                    let v = eig.eigenvectors.column(k);
                    for i in 0..3 {
                        for j in 0..3 {
                            out.a[i][j] += lam * v[i] * v[j];
                        }
                    }
                }
            }
        }
        // symmetrize against roundoff
        for i in 0..self.n {
            for j in i + 1..self.n {
                let s = 0.5 * (out.a[i][j] + out.a[j][i]);
                out.a[i][j] = s;
                out.a[j][i] = s;
            }
        }
        out
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Assembles from coordinate triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.indptr[r];
        let e = self.indptr[r + 1];
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            y[r] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .find(|(c, _)| **c == r)
                    .map(|(_, v)| *v)
                    .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `max |A_ij − A_ji|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0_f64;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                d = d.max((v - self.get(*c, r)).abs());
            }
        }
        d
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                out.push((r, *c, *v));
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Outcome of an iterative linear solve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems. `x` holds the initial guess on entry.
pub fn pcg(a: &Csr, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = norm2(&r) / bnorm;
    let mut it = 0;
    while rel > rel_tol {
        if it >= max_iter {
            return Err(Error::NoConvergence {
                solver: "pcg",
                iterations: it,
                residual: rel,
            });
        }
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::NoConvergence {
                solver: "pcg (indefinite)",
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pq;
        let mut rr = 0.0;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
            rr += r[i] * r[i];
        }
        rel = rr.sqrt() / bnorm;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
    Ok(SolveStats {
        iterations: it,
        relative_residual: rel,
    })
}

/// Jacobi-preconditioned BiCGSTAB for general square systems.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zt = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;
    let mut it = 0;
    while rel > rel_tol {
        if it >= max_iter {
            return Err(Error::NoConvergence {
                solver: "bicgstab",
                iterations: it,
                residual: rel,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::NoConvergence {
                solver: "bicgstab (breakdown)",
                iterations: it,
                residual: rel,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            rel = norm2(&s) / bnorm;
            it += 1;
            break;
        }
        for i in 0..n {
            zt[i] = s[i] * inv_diag[i];
        }
        a.matvec(&zt, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zt[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm2(&r) / bnorm;
        it += 1;
    }
    Ok(SolveStats {
        iterations: it,
        relative_residual: rel,
    })
}

/// Extreme Ritz values of a symmetric matrix after `steps` Lanczos iterations
/// from a fixed, deterministic start vector. Returns `(smallest, largest)`.
pub fn lanczos_extremes(a: &Csr, steps: usize) -> (f64, f64) {
    let n = a.n_rows;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut v_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut beta = 0.0;
    for _ in 0..steps.min(n) {
        a.matvec(&v, &mut w);
        let alpha = dot(&w, &v);
        for i in 0..n {
            w[i] -= alpha * v[i] + beta * v_prev[i];
        }
        alphas.push(alpha);
        beta = norm2(&w);
        if beta < 1e-14 {
            break;
        }
        betas.push(beta);
        for i in 0..n {
            v_prev[i] = v[i];
            v[i] = w[i] / beta;
        }
    }
    let k = alphas.len();
    let t = nalgebra::DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j || j + 1 == i {
            betas[i.min(j)]
        } else {
            0.0
        }
    });
    let ev = t.symmetric_eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        Csr::from_triplets(n, n, t)
    }

    #[test]
    fn adjugate_examples() {
        let m = SymMat::from_rows(2, &[&[2.0, 1.0], &[1.0, 1.0]]);
        let c = m.adjugate();
        assert_eq!(c.a[0][0], 1.0);
        assert_eq!(c.a[0][1], -1.0);
        assert_eq!(c.a[1][1], 2.0);
        let d = SymMat::diag(3, &[1.0, 2.0, 3.0]).adjugate();
        assert_eq!([d.a[0][0], d.a[1][1], d.a[2][2]], [6.0, 3.0, 2.0]);
    }

    #[test]
    fn eigen_floor_keeps_spd() {
        let m = SymMat::from_rows(2, &[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(m.min_eigenvalue() < 0.0);
        let f = m.with_eigenvalue_floor(1e-8);
        assert!(f.min_eigenvalue() >= 1e-8 * 0.999);
        assert!((f.max_eigenvalue() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn krylov_solvers_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let mut x1 = vec![0.0; 50];
        let mut x2 = vec![0.0; 50];
        pcg(&a, &b, &mut x1, 1e-12, 1000).unwrap();
        bicgstab(&a, &b, &mut x2, 1e-12, 1000).unwrap();
        let r = a.apply(&x1);
        assert!(r.iter().zip(&b).all(|(r, b)| (r - b).abs() < 1e-9));
        assert!(x1.iter().zip(&x2).all(|(p, q)| (p - q).abs() < 1e-8));
    }

    #[test]
    fn lanczos_brackets_spectrum() {
        // eigenvalues of the 1d Laplacian lie in (0, 4)
        let (lo, hi) = lanczos_extremes(&laplace_1d(30), 30);
        let exact_lo = 2.0 - 2.0 * (std::f64::consts::PI / 31.0).cos();
        assert!((lo - exact_lo).abs() < 1e-8);
        assert!(hi < 4.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let s: CompensatedSum = xs.iter().copied().collect();
        assert_eq!(s.value(), 2.0);
    }
}
