//! Dense row-major matrices and the symmetric routines the oracles need.
//!
//! Decompositions are delegated to `nalgebra`; this module owns the storage
//! type, the tolerance policy and the sampling helpers.

use nalgebra::DMatrix;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative tolerance for the symmetry precondition.
pub const SYM_TOL: f64 = 1e-10;
/// Eigenvalues below `PSD_CLAMP * max(lambda_max, 1)` in magnitude are treated as zero.
pub const PSD_CLAMP: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics, and a zero-column matrix has no data anyway
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "mat_vec {}x{} by vector of {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest entry of `|m - m^T|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(m + m^T) / 2`.
    pub fn symmetrize(&self) -> Matrix {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Sub-block `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        let mut b = Matrix::zeros(nr, nc);
        for i in 0..nr {
            b.row_mut(i).copy_from_slice(&self.row(r0 + i)[c0..c0 + nc]);
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            let cols = self.cols;
            self.data[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + b.cols].copy_from_slice(b.row(i));
        }
    }

    /// Stack `[a | b]` column-wise; rows must agree.
    pub fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
        if a.rows != b.rows {
            return Err(Error::Shape(format!("hstack rows {} vs {}", a.rows, b.rows)));
        }
        let mut out = Matrix::zeros(a.rows, a.cols + b.cols);
        for i in 0..a.rows {
            out.row_mut(i)[..a.cols].copy_from_slice(a.row(i));
            out.row_mut(i)[a.cols..].copy_from_slice(b.row(i));
        }
        Ok(out)
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Matrix> {
        check_square(self)?;
        let c = nalgebra::Cholesky::new(self.to_na()).ok_or(Error::Singular)?;
        Ok(Matrix::from_na(&c.l()))
    }

    /// Inverse of a symmetric positive definite matrix.
    pub fn inverse_spd(&self) -> Result<Matrix> {
        check_square(self)?;
        let c = nalgebra::Cholesky::new(self.to_na()).ok_or(Error::Singular)?;
        Ok(Matrix::from_na(&c.inverse()).symmetrize())
    }

    pub fn determinant(&self) -> Result<f64> {
        check_square(self)?;
        Ok(self.to_na().determinant())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_square(m: &Matrix) -> Result<()> {
    if m.rows != m.cols {
        return Err(Error::Shape(format!("expected square, got {}x{}", m.rows, m.cols)));
    }
    Ok(())
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    check_square(m)?;
    let asym = m.asymmetry();
    if asym > SYM_TOL * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as the columns of the second matrix.
pub fn sym_eig(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    check_symmetric(m)?;
    let n = m.rows;
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let eig = nalgebra::SymmetricEigen::try_new(m.symmetrize().to_na(), f64::EPSILON, 10_000)
        .ok_or(Error::NoConvergence("sym_eig", 10_000))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, c)] = eig.eigenvectors[(r, k)];
        }
    }
    Ok((values, vecs))
}

/// `V diag(w) V^T`.
pub fn from_eig(values: &[f64], vecs: &Matrix) -> Matrix {
    let n = values.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| vecs[(i, k)] * values[k] * vecs[(j, k)]).sum();
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

fn clamp_psd(values: &mut [f64]) -> Result<()> {
    let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
    for v in values.iter_mut() {
        if *v < -PSD_CLAMP * scale {
            return Err(Error::NotPsd(*v));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Symmetric PSD square root.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix> {
    let (mut w, v) = sym_eig(m)?;
    clamp_psd(&mut w)?;
    let w: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    Ok(from_eig(&w, &v))
}

/// Inverse of the PSD square root; fails on (numerically) singular input.
pub fn inv_sqrtm_pd(m: &Matrix) -> Result<Matrix> {
    let (mut w, v) = sym_eig(m)?;
    clamp_psd(&mut w)?;
    let scale = w.first().copied().unwrap_or(0.0).max(1.0);
    if w.iter().any(|x| *x <= PSD_CLAMP * scale) {
        return Err(Error::Singular);
    }
    let w: Vec<f64> = w.iter().map(|x| 1.0 / x.sqrt()).collect();
    Ok(from_eig(&w, &v))
}

/// Haar-distributed rotation in SO(d): QR of a Gaussian matrix with the
/// sign of `R`'s diagonal folded into `Q`, then one column flipped if the
/// determinant is negative.
pub fn haar_orthogonal(d: usize, rng: &mut Rng) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::InvalidParam("haar_orthogonal needs d >= 1".into()));
    }
    let mut g = Matrix::zeros(d, d);
    rng.fill_normal(g.as_mut_slice());
    let qr = g.to_na().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = Matrix::from_na(&q);
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    if out.determinant()? < 0.0 {
        for i in 0..d {
            out[(i, 0)] = -out[(i, 0)];
        }
    }
    Ok(out)
}

/// `n` rows drawn from `N(mean, L L^T)`.
pub fn sample_gaussian(mean: &[f64], cov_chol: &Matrix, n: usize, rng: &mut Rng) -> Result<Matrix> {
    let d = mean.len();
    if cov_chol.rows() != d || cov_chol.cols() != d {
        return Err(Error::Shape(format!(
            "mean has {d} entries but factor is {}x{}",
            cov_chol.rows(),
            cov_chol.cols()
        )));
    }
    let mut out = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        rng.fill_normal(&mut z);
        let row = out.row_mut(i);
        for (r, (m, lrow)) in row.iter_mut().zip(mean.iter().zip(cov_chol.row_iter())) {
            *r = m + dot(lrow, &z);
        }
    }
    Ok(out)
}

/// Sample mean and population (1/n) covariance of the rows.
pub fn empirical_covariance(samples: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < 2 {
        return Err(Error::InvalidParam(format!("covariance needs n >= 2, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in samples.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in samples.row_iter() {
        for (ci, (v, m)) in c.iter_mut().zip(r.iter().zip(&mean)) {
            *ci = v - m;
        }
        for i in 0..d {
            let ci = c[i];
            let crow = &mut cov.data[i * d..(i + 1) * d];
            for j in i..d {
                crow[j] += ci * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_sym(n: usize, rng: &mut Rng) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        rng.fill_normal(a.as_mut_slice());
        a.add(&a.transpose()).unwrap().scale(0.5)
    }

    fn random_psd(n: usize, rng: &mut Rng) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        rng.fill_normal(a.as_mut_slice());
        a.matmul(&a.transpose()).unwrap()
    }

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius() / b.frobenius().max(1e-300)
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let (w, v) = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
        assert!(rel_frob(&v.transpose().matmul(&v).unwrap(), &Matrix::identity(3)) < 1e-12);

        let (w, v) = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_abs_diff_eq!(w[0], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[(0, 1)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstruction_random() {
        let mut rng = Rng::new(11);
        for trial in 0..100 {
            let n = 1 + (trial * 7) % 64;
            let m = random_sym(n, &mut rng);
            let (w, v) = sym_eig(&m).unwrap();
            assert!(w.windows(2).all(|p| p[0] >= p[1]));
            assert!(rel_frob(&from_eig(&w, &v), &m) < 1e-8, "n={n}");
            let vtv = v.transpose().matmul(&v).unwrap();
            assert!(vtv.sub(&Matrix::identity(n)).unwrap().frobenius() < 1e-8);
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn sqrtm_cases() {
        let s = sqrtm_psd(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(rel_frob(&s, &Matrix::from_diag(&[2.0, 3.0])) < 1e-14);
        let s = sqrtm_psd(&Matrix::identity(4)).unwrap();
        assert!(rel_frob(&s, &Matrix::identity(4)) < 1e-14);

        let mut rng = Rng::new(5);
        for trial in 0..100 {
            let n = 1 + trial % 12;
            let m = random_psd(n, &mut rng);
            let s = sqrtm_psd(&m).unwrap();
            assert!(rel_frob(&s.matmul(&s).unwrap(), &m) < 1e-8);
            assert!(s.asymmetry() < 1e-12 * s.max_abs().max(1.0));
        }
    }

    #[test]
    fn sqrtm_rejects_negative() {
        let m = Matrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(sqrtm_psd(&m), Err(Error::NotPsd(_))));
        // tiny negative eigenvalues are clamped
        let m = Matrix::from_diag(&[1.0, -1e-14]);
        assert!(sqrtm_psd(&m).is_ok());
    }

    #[test]
    fn haar_properties() {
        let mut rng = Rng::new(1);
        let q = haar_orthogonal(1, &mut rng).unwrap();
        assert_eq!(q.as_slice(), &[1.0]);
        for d in 2..12 {
            let q = haar_orthogonal(d, &mut rng).unwrap();
            let r = q.transpose().matmul(&q).unwrap().sub(&Matrix::identity(d)).unwrap();
            assert!(r.frobenius() < 1e-10);
            assert_abs_diff_eq!(q.determinant().unwrap(), 1.0, epsilon = 1e-10);
        }
        assert!(haar_orthogonal(0, &mut rng).is_err());
    }

    #[test]
    fn haar_marginal_ks() {
        // In d = 3 a single coordinate of a uniform unit vector is U[-1, 1].
        let mut rng = Rng::new(2024);
        let mut xs: Vec<f64> = (0..1000)
            .map(|_| haar_orthogonal(3, &mut rng).unwrap()[(0, 0)])
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = (x + 1.0) / 2.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value for n = 1000
        assert!(ks < 1.63 / n.sqrt(), "ks = {ks}");
    }

    #[test]
    fn gaussian_sampling() {
        let mut rng = Rng::new(9);
        let s = sample_gaussian(&[0.0, 0.0], &Matrix::identity(2), 100_000, &mut rng).unwrap();
        let (_, c) = empirical_covariance(&s).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c[(i, j)] - want).abs() < 0.03);
            }
        }
        let e = sample_gaussian(&[0.0], &Matrix::identity(1), 0, &mut rng).unwrap();
        assert_eq!(e.rows(), 0);
        let z = sample_gaussian(&[5.0, 5.0], &Matrix::zeros(2, 2), 4, &mut rng).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 5.0));
        assert!(sample_gaussian(&[0.0], &Matrix::identity(2), 1, &mut rng).is_err());
    }

    #[test]
    fn covariance_cases() {
        let s = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let (m, c) = empirical_covariance(&s).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
        assert_eq!(c, Matrix::from_diag(&[1.0, 0.0]));

        let s = Matrix::from_rows(&vec![vec![3.0, 1.0]; 5]).unwrap();
        let (_, c) = empirical_covariance(&s).unwrap();
        assert_eq!(c.max_abs(), 0.0);

        let mut rng = Rng::new(4);
        let l = Matrix::from_diag(&[2f64.sqrt(), 3f64.sqrt()]);
        let s = sample_gaussian(&[0.0, 0.0], &l, 100_000, &mut rng).unwrap();
        let (_, c) = empirical_covariance(&s).unwrap();
        assert!((c[(0, 0)] / 2.0 - 1.0).abs() < 0.03);
        assert!((c[(1, 1)] / 3.0 - 1.0).abs() < 0.03);

        assert!(empirical_covariance(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn seeded_determinism() {
        let a = haar_orthogonal(5, &mut Rng::new(3)).unwrap();
        let b = haar_orthogonal(5, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }
}
