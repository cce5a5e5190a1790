//! Dense linear-algebra and sampling primitives shared by every other module.
//!
//! Matrices and vectors are plain `nalgebra` dynamic types; the checked
//! constructors here are the boundary at which non-finite input is rejected.
//! Random numbers come from [`RngStream`], a ChaCha8 generator addressed by a
//! `(seed, stream_id)` pair so that replication `i` always sees the same draws
//! regardless of how replications are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values below this multiple of the largest one are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// A Cholesky pivot at or below this multiple of the largest diagonal entry
/// marks the matrix as not positive definite.
pub const CHOLESKY_PIVOT_TOLERANCE: f64 = 1e-12;

/// Builds a row-major `rows x cols` matrix, rejecting non-finite entries.
pub fn matrix_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, data);
    ensure_finite_matrix(&m, "matrix")?;
    Ok(m)
}

/// Builds a vector, rejecting non-finite entries.
pub fn vector_from_slice(data: &[f64]) -> Result<Vector> {
    let v = Vector::from_column_slice(data);
    ensure_finite_vector(&v, "vector")?;
    Ok(v)
}

pub fn ensure_finite_matrix(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Moore-Penrose pseudo-inverse via the SVD with relative rank threshold
/// [`RANK_TOLERANCE`].
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Matrix::zeros(c, r);
    }
    let cut = RANK_TOLERANCE * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = Matrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Minimum-norm least-squares solution of `A x ≈ b`.
///
/// Equals `(A'A)^- A'b` with the Moore-Penrose inverse, so rank-deficient
/// designs are handled without error.
pub fn least_squares(a: &Matrix, b: &Vector) -> Result<Vector> {
    if a.nrows() != b.len() || a.ncols() == 0 || a.nrows() < a.ncols() {
        return Err(Error::Dimension(format!(
            "design is {}x{} but response has {} entries (need n >= k >= 1)",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(pseudo_inverse(a) * b)
}

/// Column-wise minimum-norm least squares `A X ≈ B`.
pub fn least_squares_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows but right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(pseudo_inverse(a) * b)
}

/// Orthogonal projector onto the complement of `col(A)`: `I - A A^+`.
pub fn projection_complement(a: &Matrix) -> Matrix {
    let n = a.nrows();
    Matrix::identity(n, n) - a * pseudo_inverse(a)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_spd(s: &Matrix) -> Result<Matrix> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            n,
            s.ncols()
        )));
    }
    ensure_finite_matrix(s, "covariance")?;
    let scale = (0..n).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > CHOLESKY_PIVOT_TOLERANCE * scale) {
            return Err(Error::NotSpd(format!("pivot {j} is {d:e}")));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    let l = cholesky_spd(s)?;
    let n = s.nrows();
    let linv = l
        .solve_lower_triangular(&Matrix::identity(n, n))
        .ok_or_else(|| Error::NotSpd("singular Cholesky factor".into()))?;
    Ok(linv.transpose() * linv)
}

/// Extracts the sub-matrix `s[rows, cols]`.
pub fn submatrix(s: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| s[(rows[i], cols[j])])
}

/// Extracts the columns `cols` of `x`.
pub fn select_columns(x: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

pub fn subvector(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// `a' S b`.
pub fn quad_form(a: &Vector, s: &Matrix, b: &Vector) -> f64 {
    a.dot(&(s * b))
}

/// Deterministic random stream addressed by `(seed, stream_id)`.
///
/// Two streams with the same pair produce identical draws on every platform;
/// distinct `stream_id`s are independent ChaCha streams of the same key.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal_vector(&mut self, len: usize) -> Vector {
        Vector::from_fn(len, |_, _| self.standard_normal())
    }

    /// `rows x cols` matrix of independent standard normals.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        // Row-major fill keeps row i of a sample tied to the i-th block of draws.
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.standard_normal();
            }
        }
        m
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draw from `N(mean, L L')` given the lower Cholesky factor `L`.
pub fn sample_normal_vector(rng: &mut RngStream, mean: &Vector, chol: &Matrix) -> Vector {
    let z = rng.normal_vector(mean.len());
    mean + chol * z
}

/// Non-central chi-square draw with `k` degrees of freedom and non-centrality
/// `lambda`, realised as `||z + mu||^2` with `||mu||^2 = lambda`.
pub fn sample_chisq(rng: &mut RngStream, k: usize, lambda: f64) -> Result<f64> {
    if k == 0 || !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "chi-square needs k >= 1 and finite lambda >= 0, got k = {k}, lambda = {lambda}"
        )));
    }
    let shift = lambda.sqrt();
    Ok((0..k)
        .map(|i| {
            let z = rng.standard_normal() + if i == 0 { shift } else { 0.0 };
            z * z
        })
        .sum())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, polished with Newton steps on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * p - 1.0);
    if !x.is_finite() {
        x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    }
    for _ in 0..2 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= 0.0 {
            break;
        }
        let step = (normal_cdf(x) - p) / pdf;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn least_squares_matches_normal_equations_when_full_rank() {
        let a = matrix_from_rows(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]).unwrap();
        let b = vector_from_slice(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        let x = least_squares(&a, &b).unwrap();
        let ata = a.transpose() * &a;
        let xn = ata.try_inverse().unwrap() * a.transpose() * &b;
        assert_relative_eq!(x, xn, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_returns_minimum_norm_solution_when_rank_deficient() {
        // Two identical columns: the min-norm solution splits the weight evenly.
        let a = matrix_from_rows(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let b = vector_from_slice(&[2.0, 4.0, 6.0]).unwrap();
        let x = least_squares(&a, &b).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_complement_is_idempotent_and_annihilates_columns() {
        let mut rng = RngStream::new(3, 0);
        let a = rng.normal_matrix(8, 3);
        let m = projection_complement(&a);
        assert_relative_eq!(&m * &m, m.clone(), epsilon = 1e-12);
        assert!((&m * &a).norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let s = matrix_from_rows(2, 2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(cholesky_spd(&s), Err(Error::NotSpd(_))));
    }

    #[test]
    fn cholesky_reconstructs_input() {
        let s = matrix_from_rows(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let l = cholesky_spd(&s).unwrap();
        assert_relative_eq!(&l * l.transpose(), s, epsilon = 1e-12);
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(matrix_from_rows(1, 2, &[1.0, f64::NAN]).is_err());
        assert!(vector_from_slice(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..5)
            .map(|_| RngStream::new(7, 2).standard_normal())
            .collect();
        let mut s1 = RngStream::new(7, 2);
        let mut s2 = RngStream::new(7, 2);
        let mut s3 = RngStream::new(7, 3);
        let x1: Vec<f64> = (0..5).map(|_| s1.standard_normal()).collect();
        let x2: Vec<f64> = (0..5).map(|_| s2.standard_normal()).collect();
        let x3: Vec<f64> = (0..5).map(|_| s3.standard_normal()).collect();
        assert_eq!(x1, x2);
        assert_ne!(x1, x3);
        assert_eq!(a[0], x1[0]);
    }

    #[test]
    fn normal_cdf_and_quantile_match_reference_values() {
        // Reference values from the closed form erfc evaluated in high precision.
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-13);
        assert_relative_eq!(normal_cdf(-3.0), 0.0013498980316300946, epsilon = 1e-15);
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_relative_eq!(normal_quantile(0.9995), 3.2905267314918945, epsilon = 1e-12);
        for &p in &[1e-10, 1e-4, 0.1, 0.37, 0.5, 0.8, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn chisq_mean_is_dof_plus_noncentrality() {
        let mut rng = RngStream::new(11, 0);
        let reps = 20_000;
        let mean = (0..reps)
            .map(|_| sample_chisq(&mut rng, 4, 3.0).unwrap())
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 7.0).abs() < 0.15, "mean {mean}");
    }
}
