//! Complex sparse matrices (CSR) and a preconditioned conjugate-gradient
//! solver for Hermitian positive (semi-)definite systems. Real symmetric
//! systems are handled by the same machinery with zero imaginary parts.

use crate::error::{Error, Result};
use crate::{c64, C64};

#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, C64)>) -> Csr {
        trip.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows: Vec<usize> = Vec::with_capacity(trip.len());
        let mut cols: Vec<usize> = Vec::with_capacity(trip.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            debug_assert!(r < nrows && c < ncols);
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = c64(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![c64(0.0, 0.0); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                trip.push((self.cols[k], r, self.vals[k].conj()));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, trip)
    }

    /// Scale each row r by d[r] (left-multiplication by a diagonal).
    pub fn scale_rows(&self, d: &[C64]) -> Csr {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.row_ptr[r]..out.row_ptr[r + 1] {
                out.vals[k] *= d[r];
            }
        }
        out
    }

    /// Sparse product self * rhs.
    pub fn matmul(&self, rhs: &Csr) -> Csr {
        assert_eq!(self.ncols, rhs.nrows);
        let mut trip: Vec<(usize, usize, C64)> = Vec::new();
        let mut acc: Vec<C64> = vec![c64(0.0, 0.0); rhs.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.vals[k];
                let m = self.cols[k];
                for j in rhs.row_ptr[m]..rhs.row_ptr[m + 1] {
                    let c = rhs.cols[j];
                    if acc[c] == c64(0.0, 0.0) {
                        touched.push(c);
                    }
                    acc[c] += a * rhs.vals[j];
                }
            }
            for &c in &touched {
                trip.push((r, c, acc[c]));
                acc[c] = c64(0.0, 0.0);
            }
            touched.clear();
        }
        Csr::from_triplets(self.nrows, rhs.ncols, trip)
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let mut d = vec![c64(0.0, 0.0); self.nrows.min(self.ncols)];
        for r in 0..d.len() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] == r {
                    d[r] += self.vals[k];
                }
            }
        }
        d
    }

    /// Maximum absolute asymmetry |A - A^H| entry (for sanity checks).
    pub fn hermitian_defect(&self) -> f64 {
        let at = self.adjoint();
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            let (c1, v1) = self.row(r);
            let (c2, v2) = at.row(r);
            let mut i = 0;
            let mut j = 0;
            while i < c1.len() || j < c2.len() {
                if j >= c2.len() || (i < c1.len() && c1[i] < c2[j]) {
                    worst = worst.max(v1[i].norm());
                    i += 1;
                } else if i >= c1.len() || c2[j] < c1[i] {
                    worst = worst.max(v2[j].norm());
                    j += 1;
                } else {
                    worst = worst.max((v1[i] - v2[j]).norm());
                    i += 1;
                    j += 1;
                }
            }
        }
        worst
    }
}

/// Abstract Hermitian operator for iterative solvers.
pub trait HermitianOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

impl HermitianOp for Csr {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows, self.ncols);
        self.nrows
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matvec_into(x, y);
    }
}

/// An operator given by a closure, for composite systems such as normal
/// equations that are never formed explicitly.
pub struct FnOp<F: Fn(&[C64], &mut [C64])> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[C64], &mut [C64])> HermitianOp for FnOp<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        (self.f)(x, y)
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for Hermitian positive-definite
/// systems; `precond_diag` holds strictly positive (real) diagonal entries
/// of a Jacobi preconditioner, or can be all-ones for no preconditioning.
pub fn pcg<A: HermitianOp + ?Sized>(
    a: &A,
    b: &[C64],
    precond_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, CgStats)> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![c64(0.0, 0.0); n], CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut x = vec![c64(0.0, 0.0); n];
    let mut r = b.to_vec();
    let mut z: Vec<C64> = r.iter().zip(precond_diag).map(|(ri, &d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![c64(0.0, 0.0); n];
    let mut stats = CgStats { iterations: 0, relative_residual: norm(&r) / bnorm };
    for it in 0..max_iter {
        if norm(&r) / bnorm < tol {
            stats.iterations = it;
            stats.relative_residual = norm(&r) / bnorm;
            return Ok((x, stats));
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.re <= 0.0 {
            return Err(Error::numerical(format!(
                "CG breakdown: non-positive curvature {pap} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / precond_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        stats.iterations = it + 1;
    }
    stats.relative_residual = norm(&r) / bnorm;
    if stats.relative_residual < tol * 100.0 {
        // Accept near-converged solutions but report honestly.
        return Ok((x, stats));
    }
    Err(Error::numerical(format!(
        "CG failed to converge: relres {:.3e} after {} iterations",
        stats.relative_residual, max_iter
    )))
}

/// CG variant for Hermitian positive *semi*-definite systems: never fails,
/// returns the final iterate together with its residual vector.  For a
/// consistent right-hand side the residual converges to zero; for an
/// inconsistent one it converges to the projection of `b` onto the null
/// space, which is what callers use to extract near-null directions.
pub fn pcg_lenient<A: HermitianOp + ?Sized>(
    a: &A,
    b: &[C64],
    precond_diag: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<C64>, Vec<C64>, CgStats) {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    let mut x = vec![c64(0.0, 0.0); n];
    let mut r = b.to_vec();
    if bnorm == 0.0 {
        return (x, r, CgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut z: Vec<C64> = r.iter().zip(precond_diag).map(|(ri, &d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![c64(0.0, 0.0); n];
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut iterations = 0usize;
    for _ in 0..max_iter {
        let rel = norm(&r) / bnorm;
        if rel < tol {
            break;
        }
        // Stagnation: the resolvable part of the residual is exhausted.
        // CG residuals plateau for long stretches on ill-conditioned
        // systems, so be patient before declaring stagnation.
        if rel < 0.995 * best {
            best = rel;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 400 {
                break;
            }
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.re <= 0.0 || !pap.re.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / precond_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
    let rel = norm(&r) / bnorm;
    (x, r, CgStats { iterations, relative_residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> Csr {
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, c64(2.0, 0.0)));
            if i > 0 {
                trip.push((i, i - 1, c64(-1.0, 0.0)));
            }
            if i + 1 < n {
                trip.push((i, i + 1, c64(-1.0, 0.0)));
            }
        }
        Csr::from_triplets(n, n, trip)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = Csr::from_triplets(
            2,
            2,
            vec![(0, 0, c64(1.0, 0.0)), (0, 0, c64(2.0, 0.0)), (1, 0, c64(3.0, 0.0))],
        );
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.diagonal()[0], c64(3.0, 0.0));
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 200;
        let a = laplacian_1d(n);
        let xstar: Vec<C64> = (0..n).map(|i| c64((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let b = a.matvec(&xstar);
        let pd: Vec<f64> = a.diagonal().iter().map(|d| d.re).collect();
        let (x, st) = pcg(&a, &b, &pd, 1e-12, 10_000).unwrap();
        let err: f64 = x.iter().zip(&xstar).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-7, "err {err} iters {}", st.iterations);
    }

    #[test]
    fn adjoint_and_matmul_consistent() {
        let m = Csr::from_triplets(
            2,
            3,
            vec![
                (0, 0, c64(1.0, 2.0)),
                (0, 2, c64(0.0, -1.0)),
                (1, 1, c64(3.0, 0.5)),
            ],
        );
        let mh = m.adjoint();
        let prod = mh.matmul(&m); // 3x3 Hermitian PSD
        assert!(prod.hermitian_defect() < 1e-14);
        let x = vec![c64(1.0, -1.0), c64(0.5, 0.0), c64(0.0, 2.0)];
        let q = dot(&x, &prod.matvec(&x));
        assert!(q.re >= 0.0 && q.im.abs() < 1e-12);
    }

    #[test]
    fn fn_op_normal_equations() {
        let n = 50;
        let a = laplacian_1d(n);
        let a2 = FnOp {
            n,
            f: |x: &[C64], y: &mut [C64]| {
                let t = a.matvec(x);
                a.matvec_into(&t, y);
            },
        };
        let xstar: Vec<C64> = (0..n).map(|i| c64(1.0 / (1.0 + i as f64), 0.0)).collect();
        let mut b = vec![c64(0.0, 0.0); n];
        a2.apply(&xstar, &mut b);
        let pd = vec![1.0f64; n];
        let (x, _) = pcg(&a2, &b, &pd, 1e-13, 50_000).unwrap();
        let err: f64 = x.iter().zip(&xstar).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-6, "err {err}");
    }
}
