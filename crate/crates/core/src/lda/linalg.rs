//! Small dense symmetric linear algebra: Cholesky, triangular solves and a
//! cyclic Jacobi eigensolver.

use crate::error::{Result, TseError};

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SqMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SqMat {
    pub fn zeros(n: usize) -> Self {
        SqMat { n, data: vec![0.0; n * n] }
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
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    /// Adds `w * x xᵀ`.
    pub fn add_outer(&mut self, x: &[f64], w: f64) {
        for i in 0..self.n {
            let xi = w * x[i];
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += xi * xj;
            }
        }
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                *self.at_mut(i, j) = v;
                *self.at_mut(j, i) = v;
            }
        }
    }

    pub fn quad_form(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            s += a[i] * row.iter().zip(b).map(|(m, v)| m * v).sum::<f64>();
        }
        s
    }
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: &SqMat) -> Result<SqMat> {
    let n = a.n;
    let mut l = SqMat::zeros(n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d -= l.at(j, k) * l.at(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(TseError::Numerical(format!(
                "cholesky: matrix not positive definite (pivot {j} = {d:e})"
            )));
        }
        let djj = d.sqrt();
        *l.at_mut(j, j) = djj;
        for i in j + 1..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            *l.at_mut(i, j) = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn forward_solve(l: &SqMat, b: &mut [f64]) {
    for i in 0..l.n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.at(i, k) * b[k];
        }
        b[i] = s / l.at(i, i);
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
pub fn backward_solve_t(l: &SqMat, b: &mut [f64]) {
    for i in (0..l.n).rev() {
        let mut s = b[i];
        for k in i + 1..l.n {
            s -= l.at(k, i) * b[k];
        }
        b[i] = s / l.at(i, i);
    }
}

/// `L⁻¹ A L⁻ᵀ` for symmetric `A`.
pub fn whiten(l: &SqMat, a: &SqMat) -> SqMat {
    let n = a.n;
    // Y = L⁻¹ A, column by column
    let mut y = SqMat::zeros(n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = a.at(i, j);
        }
        forward_solve(l, &mut col);
        for i in 0..n {
            *y.at_mut(i, j) = col[i];
        }
    }
    // W = L⁻¹ Yᵀ, then W is (L⁻¹ A L⁻ᵀ)ᵀ which is symmetric
    let mut w = SqMat::zeros(n);
    for j in 0..n {
        for i in 0..n {
            col[i] = y.at(j, i);
        }
        forward_solve(l, &mut col);
        for i in 0..n {
            *w.at_mut(i, j) = col[i];
        }
    }
    w.symmetrize();
    w
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns unsorted eigenvalues and the eigenvectors as columns of a matrix.
pub fn jacobi_eigen(a: &SqMat) -> Result<(Vec<f64>, SqMat)> {
    let n = a.n;
    let mut m = a.clone();
    let mut v = SqMat::identity(n);
    let scale = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !scale.is_finite() {
        return Err(TseError::Numerical("jacobi: non-finite matrix entry".into()));
    }
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.at(i, j) * m.at(i, j))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            return Ok(((0..n).map(|i| m.at(i, i)).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m.at(p, p), m.at(q, q));
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.at(k, p), m.at(k, q));
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.at(p, k), m.at(q, k));
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.at(k, p), v.at(k, q));
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(TseError::Numerical("jacobi: no convergence after 100 sweeps".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> SqMat {
        let mut m = SqMat::identity(n);
        for k in 0..n {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + k * 3) % 5) as f64 - 2.0).collect();
            m.add_outer(&x, 0.3);
        }
        m
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd(5);
        let l = cholesky(&a).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let s: f64 = (0..5).map(|k| l.at(i, k) * l.at(j, k)).sum();
                assert!((s - a.at(i, j)).abs() < 1e-12);
            }
        }
        assert!(cholesky(&SqMat::zeros(3)).is_err());
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = spd(6);
        let (vals, v) = jacobi_eigen(&a).unwrap();
        for k in 0..6 {
            let x: Vec<f64> = (0..6).map(|i| v.at(i, k)).collect();
            for i in 0..6 {
                let ax: f64 = (0..6).map(|j| a.at(i, j) * x[j]).sum();
                assert!((ax - vals[k] * x[i]).abs() < 1e-10);
            }
        }
        assert!((vals.iter().sum::<f64>() - a.trace()).abs() < 1e-10);
    }

    #[test]
    fn whitening_of_itself_is_identity() {
        let a = spd(4);
        let w = whiten(&cholesky(&a).unwrap(), &a);
        for i in 0..4 {
            for j in 0..4 {
                assert!((w.at(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
