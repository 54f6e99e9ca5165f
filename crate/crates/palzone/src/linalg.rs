//! Dense complex matrices sized for drive vectors (N ~ 24): Hermitian
//! Cholesky, triangular solves, and a cyclic Jacobi eigensolver for
//! Hermitian matrices. Everything is deterministic; no pivoting, no
//! threading.

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Relative off-diagonal norm at which the Jacobi sweep stops.
pub const JACOBI_TOL: f64 = 1e-12;
/// Safety cap on Jacobi sweeps; Hermitian matrices converge in far fewer.
const JACOBI_MAX_SWEEPS: usize = 60;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: defect {defect:.3e} exceeds {tol:.3e}")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("Cholesky failed at pivot {pivot}: matrix not positive definite")]
    NotPositiveDefinite { pivot: usize },
    #[error("Jacobi iteration did not reach tolerance in {0} sweeps")]
    JacobiStalled(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        CMat { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "rows must form a square matrix");
        CMat { n, data: rows.iter().flatten().copied().collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn transpose(&self) -> CMat {
        let mut t = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn adjoint(&self) -> CMat {
        let mut t = CMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)].conj();
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// ||A - A^H||_F, the Hermiticity defect.
    pub fn hermitian_defect(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let d = self[(i, j)] - self[(j, i)].conj();
                let w = if i == j { 1.0 } else { 2.0 };
                acc += w * d.norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn trace_real(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)].re).sum()
    }

    /// y = A x
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// y = A^H x
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        for i in 0..self.n {
            let xi = x[i];
            for (j, a) in self.row(i).iter().enumerate() {
                y[j] += a.conj() * xi;
            }
        }
        y
    }

    /// G += scale * v v^H
    pub fn rank1_update(&mut self, v: &[C64], scale: f64) {
        assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let vi = v[i] * scale;
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (j, r) in row.iter_mut().enumerate() {
                *r += vi * v[j].conj();
            }
        }
    }

    /// Replace A by (A + A^H)/2.
    pub fn hermitize(&mut self) {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)].conj());
                self[(i, j)] = avg;
                self[(j, i)] = avg.conj();
            }
            let d = self[(i, i)].re;
            self[(i, i)] = C64::new(d, 0.0);
        }
    }
}

impl core::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// x^H y (conjugate-linear in the first argument).
pub fn vec_dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn vec_scale(v: &mut [C64], s: C64) {
    for z in v.iter_mut() {
        *z *= s;
    }
}

/// Normalize to unit Euclidean norm and rotate so the largest-magnitude
/// component is real positive. Removes the gauge freedom of eigenvectors.
pub fn normalize_phase_fixed(v: &mut [C64]) {
    let n = vec_norm(v);
    if n == 0.0 {
        return;
    }
    let (mut best, mut best_mag) = (0usize, -1.0f64);
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    let pivot = v[best];
    let rot = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
    let s = rot / n;
    vec_scale(v, s);
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite
/// matrix: A = L L^H.
pub fn cholesky(a: &CMat) -> Result<CMat, LinalgError> {
    let n = a.n();
    let mut l = CMat::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: j });
        }
        let ljj = d.sqrt();
        l[(j, j)] = C64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve L x = b for lower-triangular L (forward substitution).
pub fn solve_lower(l: &CMat, b: &[C64]) -> Vec<C64> {
    let n = l.n();
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            x[i] = x[i] - lik * x[k];
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Solve L^H x = b (backward substitution on the adjoint).
pub fn solve_lower_adjoint(l: &CMat, b: &[C64]) -> Vec<C64> {
    let n = l.n();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)].conj();
            x[i] = x[i] - lki * x[k];
        }
        x[i] /= l[(i, i)].conj(); // diagonal is real positive
    }
    x
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, V) with A V = V diag(eigenvalues);
/// eigenvalues in diagonal (Jacobi) order, not sorted.
pub fn jacobi_hermitian_eig(a: &CMat) -> Result<(Vec<f64>, CMat), LinalgError> {
    let n = a.n();
    let mut m = a.clone();
    m.hermitize();
    let mut v = CMat::identity(n);
    if n == 1 {
        return Ok((vec![m[(0, 0)].re], v));
    }
    let fro = m.frobenius_norm();
    if fro == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    let tol = JACOBI_TOL * fro;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            let evals = (0..n).map(|i| m[(i, i)].re).collect();
            return Ok((evals, v));
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }
    Err(LinalgError::JacobiStalled(JACOBI_MAX_SWEEPS))
}

/// One complex Jacobi rotation zeroing m[p][q] (and its mirror), with the
/// same unitary accumulated into v.
fn rotate(m: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = m[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let sigma = t * c;
    let phase = apq / r;
    let s = sigma * phase;
    let n = m.n();

    // Column update: B = M J with J = [[c, s], [-conj(s), c]] in the (p,q) plane.
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s.conj() * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    // Row update: M' = J^H B.
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s.conj() * mpk + c * mqk;
    }
    // The (p,q) entry is zero by construction and the diagonal stays real;
    // pin both against rounding drift.
    m[(p, q)] = C64::new(0.0, 0.0);
    m[(q, p)] = C64::new(0.0, 0.0);
    let dp = m[(p, p)].re;
    let dq = m[(q, q)].re;
    m[(p, p)] = C64::new(dp, 0.0);
    m[(q, q)] = C64::new(dq, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s.conj() * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
