//! Complex tridiagonal elimination and a packed dense Cholesky, the only two
//! pieces of linear algebra the solvers need.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::Complex64;

/// Solves a complex tridiagonal system by Thomas elimination, no pivoting.
///
/// `sub[0]` and `sup[n-1]` are ignored. Returns the solution vector.
pub fn solve_tridiagonal(
    sub: &[Complex64],
    diag: &[Complex64],
    sup: &[Complex64],
    rhs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: rhs.len() });
    }
    let mut c_prime = vec![Complex64::new(0.0, 0.0); n];
    let mut x = vec![Complex64::new(0.0, 0.0); n];

    let mut pivot = diag[0];
    if pivot.norm_sqr() == 0.0 {
        return Err(Error::SolveResidual { residual: f64::INFINITY });
    }
    c_prime[0] = sup[0] / pivot;
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c_prime[i - 1];
        if pivot.norm_sqr() == 0.0 {
            return Err(Error::SolveResidual { residual: f64::INFINITY });
        }
        c_prime[i] = sup[i] / pivot;
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        let t = c_prime[i] * x[i + 1];
        x[i] -= t;
    }
    Ok(x)
}

/// Infinity-norm relative residual `‖A x − b‖_∞ / ‖b‖_∞` of a tridiagonal
/// solve (absolute residual when `b = 0`).
pub fn tridiagonal_residual(
    sub: &[Complex64],
    diag: &[Complex64],
    sup: &[Complex64],
    x: &[Complex64],
    rhs: &[Complex64],
) -> f64 {
    let n = diag.len();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        let mut ax = diag[i] * x[i];
        if i > 0 {
            ax += sub[i] * x[i - 1];
        }
        if i + 1 < n {
            ax += sup[i] * x[i + 1];
        }
        worst = worst.max((ax - rhs[i]).norm());
        scale = scale.max(rhs[i].norm());
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Solves a block-tridiagonal system with 2x2 real blocks by Thomas
/// elimination; blocks are `[m00, m01, m10, m11]`, the right side is
/// overwritten with the solution.
pub fn solve_block_tridiagonal_2x2(
    sub: &[[f64; 4]],
    diag: &[[f64; 4]],
    sup: &[[f64; 4]],
    rhs: &mut [[f64; 2]],
) -> Result<()> {
    #[inline]
    fn inv2(m: &[f64; 4]) -> Option<[f64; 4]> {
        let det = m[0] * m[3] - m[1] * m[2];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let r = 1.0 / det;
        Some([m[3] * r, -m[1] * r, -m[2] * r, m[0] * r])
    }
    #[inline]
    fn mul2(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ]
    }
    #[inline]
    fn mv2(a: &[f64; 4], v: &[f64; 2]) -> [f64; 2] {
        [a[0] * v[0] + a[1] * v[1], a[2] * v[0] + a[3] * v[1]]
    }
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: rhs.len() });
    }
    let singular = Error::SolveResidual { residual: f64::INFINITY };
    let mut c_prime: Vec<[f64; 4]> = vec![[0.0; 4]; n];
    let mut d_prime: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    let inv = inv2(&diag[0]).ok_or(singular.clone())?;
    c_prime[0] = mul2(&inv, &sup[0]);
    d_prime[0] = mv2(&inv, &rhs[0]);
    for i in 1..n {
        let a = &sub[i];
        let pivot = [
            diag[i][0] - (a[0] * c_prime[i - 1][0] + a[1] * c_prime[i - 1][2]),
            diag[i][1] - (a[0] * c_prime[i - 1][1] + a[1] * c_prime[i - 1][3]),
            diag[i][2] - (a[2] * c_prime[i - 1][0] + a[3] * c_prime[i - 1][2]),
            diag[i][3] - (a[2] * c_prime[i - 1][1] + a[3] * c_prime[i - 1][3]),
        ];
        let inv = inv2(&pivot).ok_or(singular.clone())?;
        c_prime[i] = mul2(&inv, &sup[i]);
        let t = mv2(a, &d_prime[i - 1]);
        d_prime[i] = mv2(&inv, &[rhs[i][0] - t[0], rhs[i][1] - t[1]]);
    }
    rhs[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        let t = mv2(&c_prime[i], &rhs[i + 1]);
        rhs[i] = [d_prime[i][0] - t[0], d_prime[i][1] - t[1]];
    }
    Ok(())
}

/// Dense symmetric matrix stored as a row-major lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn zeros(n: usize) -> Self {
        PackedLower { n, data: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * (n + 1) / 2 {
            return Err(Error::LengthMismatch { expected: n * (n + 1) / 2, got: data.len() });
        }
        Ok(PackedLower { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    /// Entry `(i, j)` with `j <= i`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i < self.n);
        self.data[Self::offset(i) + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i < self.n);
        self.data[Self::offset(i) + j] = v;
    }

    /// Symmetric read: either order of the indices.
    #[inline]
    pub fn get_sym(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.get(i, j)
        } else {
            self.get(j, i)
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::offset(i)..Self::offset(i) + i + 1]
    }

    pub fn max_diagonal(&self) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for i in 0..self.n {
            m = m.max(self.get(i, i));
        }
        m
    }

    /// Lower-triangular matrix-vector product `y = L x`.
    pub fn lower_matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            y[i] = dot(self.row(i), &x[..=i]);
        }
    }
}

/// Dot product with four independent accumulators; the fixed summation
/// order keeps results bit-reproducible while letting the lanes pipeline.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// In-place Cholesky factorization of a packed symmetric matrix.
///
/// Fails with the offending index when a pivot drops to or below
/// `pivot_floor` (callers pass `1e-14 × max diagonal`); no jitter is applied.
pub fn cholesky_in_place(m: &mut PackedLower, pivot_floor: f64) -> Result<()> {
    let n = m.dim();
    for i in 0..n {
        for j in 0..=i {
            let mut s = m.get(i, j);
            // s -= Σ_{k<j} L[i][k] L[j][k]
            let (ri, rj) = (PackedLower::offset(i), PackedLower::offset(j));
            let acc = if j == i {
                let row = &m.data[ri..ri + j];
                dot(row, row)
            } else {
                let (a, b) = m.data.split_at(ri);
                dot(&a[rj..rj + j], &b[..j])
            };
            s -= acc;
            if i == j {
                if s <= pivot_floor {
                    return Err(Error::NonPositiveDefinite { pivot_index: i, pivot: s });
                }
                m.data[ri + j] = math::sqrt(s);
            } else {
                m.data[ri + j] = s / m.data[rj + j];
            }
        }
    }
    Ok(())
}

/// Frobenius-relative reconstruction error `‖L Lᵀ − A‖_F / ‖A‖_F`.
pub fn reconstruction_error(factor: &PackedLower, original: &PackedLower) -> f64 {
    let n = factor.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..=j.min(i) {
                s += factor.get(i, k) * factor.get(j, k);
            }
            let a = original.get(i, j);
            let d = s - a;
            let mult = if i == j { 1.0 } else { 2.0 };
            num += mult * d * d;
            den += mult * a * a;
        }
    }
    math::sqrt(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn tridiagonal_solves_reference_system() {
        // A = [[2, 1, 0], [1, 2i, 1], [0, 1, 3]]
        let sub = [c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)];
        let diag = [c(2.0, 0.0), c(0.0, 2.0), c(3.0, 0.0)];
        let sup = [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)];
        let rhs = [c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0)];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        let r = tridiagonal_residual(&sub, &diag, &sup, &x, &rhs);
        assert!(r < 1e-14, "residual {r}");
    }

    #[test]
    fn cholesky_roundtrip() {
        // SPD matrix from B^T B + I
        let n = 6;
        let mut a = PackedLower::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    let bi = ((i * 7 + k * 3 + 1) % 11) as f64 / 11.0;
                    let bj = ((j * 7 + k * 3 + 1) % 11) as f64 / 11.0;
                    s += bi * bj;
                }
                a.set(i, j, s);
            }
        }
        let original = a.clone();
        cholesky_in_place(&mut a, 1e-14 * original.max_diagonal()).unwrap();
        let err = reconstruction_error(&a, &original);
        assert!(err < 1e-14, "reconstruction error {err}");
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let mut a = PackedLower::zeros(2);
        a.set(0, 0, 1.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0); // not PD: 1 - 4 < 0
        let err = cholesky_in_place(&mut a, 1e-14).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDefinite { pivot_index: 1, .. }));
    }

    #[test]
    fn lower_matvec_matches_direct() {
        let mut l = PackedLower::zeros(3);
        l.set(0, 0, 2.0);
        l.set(1, 0, -1.0);
        l.set(1, 1, 3.0);
        l.set(2, 0, 0.5);
        l.set(2, 1, 1.0);
        l.set(2, 2, 4.0);
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        l.lower_matvec(&x, &mut y);
        assert_eq!(y, [2.0, 5.0, 14.5]);
    }
}
