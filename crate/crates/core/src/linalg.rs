//! Small dense helpers for separable transforms.

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `y += A x`.
    pub fn matvec_add(&self, x: &[T], y: &mut [T]) {
        for (row, yi) in self.data.chunks_exact(self.cols).zip(y.iter_mut()) {
            let mut s = T::zero();
            for (&a, &b) in row.iter().zip(x) {
                s += a * b;
            }
            *yi += s;
        }
    }
}

/// `out[a,b,c] = Σ in[i,j,k] X[a,i] Y[b,j] Z[c,k]` for a row-major 3-tensor
/// of shape `(X.cols, Y.cols, Z.cols)`.
pub fn contract3<T: Real>(input: &[T], x: &Mat<T>, y: &Mat<T>, z: &Mat<T>) -> Vec<T> {
    let (ni, nj, nk) = (x.cols, y.cols, z.cols);
    let (na, nb, nc) = (x.rows, y.rows, z.rows);
    debug_assert_eq!(input.len(), ni * nj * nk);
    // contract k
    let mut t1 = vec![T::zero(); ni * nj * nc];
    for ij in 0..ni * nj {
        let src = &input[ij * nk..(ij + 1) * nk];
        if src.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let dst = &mut t1[ij * nc..(ij + 1) * nc];
        for (c, d) in dst.iter_mut().enumerate() {
            let zr = &z.data[c * nk..(c + 1) * nk];
            let mut s = T::zero();
            for (&a, &b) in src.iter().zip(zr) {
                s += a * b;
            }
            *d = s;
        }
    }
    // contract j
    let mut t2 = vec![T::zero(); ni * nb * nc];
    for i in 0..ni {
        for j in 0..nj {
            let src = &t1[(i * nj + j) * nc..(i * nj + j + 1) * nc];
            for b in 0..nb {
                let yv = y.data[b * nj + j];
                if yv == T::zero() {
                    continue;
                }
                let dst = &mut t2[(i * nb + b) * nc..(i * nb + b + 1) * nc];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += yv * s;
                }
            }
        }
    }
    // contract i
    let plane = nb * nc;
    let mut out = vec![T::zero(); na * plane];
    for i in 0..ni {
        let src = &t2[i * plane..(i + 1) * plane];
        for a in 0..na {
            let xv = x.data[a * ni + i];
            if xv == T::zero() {
                continue;
            }
            let dst = &mut out[a * plane..(a + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += xv * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contract3_matches_naive() {
        let x = Mat::from_fn(3, 2, |a, i| (a + 2 * i) as f64 * 0.5 - 1.0);
        let y = Mat::from_fn(4, 3, |b, j| ((b * 3 + j) as f64).sin());
        let z = Mat::from_fn(2, 5, |c, k| (c as f64 - k as f64) * 0.25);
        let input: Vec<f64> = (0..30).map(|v| (v as f64).cos()).collect();
        let got = contract3(&input, &x, &y, &z);
        for a in 0..3 {
            for b in 0..4 {
                for c in 0..2 {
                    let mut s = 0.0;
                    for i in 0..2 {
                        for j in 0..3 {
                            for k in 0..5 {
                                s += input[(i * 3 + j) * 5 + k] * x.get(a, i) * y.get(b, j) * z.get(c, k);
                            }
                        }
                    }
                    assert!((got[(a * 4 + b) * 2 + c] - s).abs() < 1e-12);
                }
            }
        }
    }
}
