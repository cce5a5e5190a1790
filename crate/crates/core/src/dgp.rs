//! Gaussian data-generating process, candidate models and the conditional
//! model of `y` given the regressors a candidate model keeps.
//!
//! The ambient regression is `y = x'β + u` with `x ~ N(0, Σ)` and
//! `u ~ N(0, σ²)`, truncated to `p` regressors. A [`CandidateModel`] keeps two
//! disjoint ordered blocks of (0-based) column indices; every block formula in
//! the crate uses the column order "block 1 then block 2".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_spd, ensure_finite_matrix, ensure_finite_vector, quad_form, spd_inverse, submatrix,
    Matrix, RngStream, Vector,
};

/// Smallest admissible block size.
pub const MIN_BLOCK: usize = 3;

#[derive(Clone, Debug)]
pub struct Dgp {
    beta: Vector,
    sigma: Matrix,
    noise_var: f64,
    chol: Matrix,
}

impl Dgp {
    pub fn new(beta: Vector, sigma: Matrix, noise_var: f64) -> Result<Self> {
        let p = beta.len();
        if p == 0 || sigma.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "beta has length {p} but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        ensure_finite_vector(&beta, "beta")?;
        ensure_finite_matrix(&sigma, "sigma")?;
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        if (&sigma - sigma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotSpd("sigma is not symmetric".into()));
        }
        let chol = cholesky_spd(&sigma)?;
        Ok(Self {
            beta,
            sigma,
            noise_var,
            chol,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &Vector {
        &self.beta
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    /// One draw of `(x, y)`.
    pub fn draw_observation(&self, rng: &mut RngStream) -> (Vector, f64) {
        let z = rng.normal_vector(self.p());
        let x = &self.chol * z;
        let y = x.dot(&self.beta) + self.noise_var.sqrt() * rng.standard_normal();
        (x, y)
    }
}

/// Two disjoint ordered blocks of 0-based regressor indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub block1: Vec<usize>,
    pub block2: Vec<usize>,
}

impl CandidateModel {
    pub fn new(block1: Vec<usize>, block2: Vec<usize>) -> Result<Self> {
        let m = Self { block1, block2 };
        m.validate_structure()?;
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.block1.len() + self.block2.len()
    }

    pub fn size1(&self) -> usize {
        self.block1.len()
    }

    pub fn size2(&self) -> usize {
        self.block2.len()
    }

    /// All kept indices, block 1 first.
    pub fn indices(&self) -> Vec<usize> {
        self.block1.iter().chain(&self.block2).copied().collect()
    }

    fn validate_structure(&self) -> Result<()> {
        if self.block1.len() < MIN_BLOCK || self.block2.len() < MIN_BLOCK {
            return Err(Error::InvalidModel(format!(
                "blocks need at least {MIN_BLOCK} indices each, got {} and {}",
                self.block1.len(),
                self.block2.len()
            )));
        }
        let mut all = self.indices();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidModel(
                "indices must be distinct across both blocks".into(),
            ));
        }
        Ok(())
    }

    /// Checks block sizes, distinctness and that every index is below `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        self.validate_structure()?;
        if let Some(&bad) = self.indices().iter().find(|&&i| i >= p) {
            return Err(Error::InvalidModel(format!(
                "index {bad} out of range for p = {p}"
            )));
        }
        Ok(())
    }

    /// Additionally requires `|m| < n`.
    pub fn validate_for_fit(&self, p: usize, n: usize) -> Result<()> {
        self.validate(p)?;
        if self.size() >= n {
            return Err(Error::ModelTooLarge {
                size: self.size(),
                n,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x: Matrix,
    pub y: Vector,
}

impl TrainingSample {
    pub fn new(x: Matrix, y: Vector) -> Result<Self> {
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::Dimension(format!(
                "X has {} rows but Y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        ensure_finite_matrix(&x, "X")?;
        ensure_finite_vector(&y, "Y")?;
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Parameters of the conditional law of `y` given `x(m)`.
#[derive(Clone, Debug)]
pub struct ConditionalParams {
    /// Population regression coefficients `θ`, block 1 then block 2.
    pub theta: Vector,
    /// `σ²(m)`, the conditional variance.
    pub cond_var: f64,
    /// Signal-to-noise ratio `θ'Σ(m)θ / σ²(m)`.
    pub mu: f64,
    /// Block-2 contribution `θ₂'(S₂₂ − S₂₁S₁₁⁻¹S₁₂)θ₂ / σ²(m)`.
    pub mu2: f64,
    /// `Σ(m)` in block order.
    pub s: Matrix,
}

/// Draws `n` i.i.d. rows of `(x, y)`.
pub fn generate_sample(dgp: &Dgp, n: usize, rng: &mut RngStream) -> Result<TrainingSample> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    let p = dgp.p();
    let mut x = Matrix::zeros(n, p);
    let mut y = Vector::zeros(n);
    for i in 0..n {
        let (xi, yi) = dgp.draw_observation(rng);
        x.row_mut(i).copy_from(&xi.transpose());
        y[i] = yi;
    }
    Ok(TrainingSample { x, y })
}

/// `Var(y) = β'Σβ + σ²`.
pub fn variance_of_y(dgp: &Dgp) -> f64 {
    quad_form(&dgp.beta, &dgp.sigma, &dgp.beta) + dgp.noise_var
}

/// Schur complement `S₂₂ − S₂₁S₁₁⁻¹S₁₂` of a block-ordered `Σ(m)`.
pub fn schur_complement(s: &Matrix, k1: usize) -> Result<Matrix> {
    let k = s.nrows();
    let s11 = s.view((0, 0), (k1, k1)).into_owned();
    let s12 = s.view((0, k1), (k1, k - k1)).into_owned();
    let s22 = s.view((k1, k1), (k - k1, k - k1)).into_owned();
    let s11_inv = spd_inverse(&s11)?;
    Ok(&s22 - s12.transpose() * s11_inv * &s12)
}

pub fn conditional_params(dgp: &Dgp, m: &CandidateModel) -> Result<ConditionalParams> {
    m.validate(dgp.p())?;
    let idx = m.indices();
    let all: Vec<usize> = (0..dgp.p()).collect();
    let s = submatrix(&dgp.sigma, &idx, &idx);
    let cov_xy = submatrix(&dgp.sigma, &idx, &all) * &dgp.beta;
    let s_inv = spd_inverse(&s)?;
    let theta = &s_inv * cov_xy;
    let explained = quad_form(&theta, &s, &theta);
    let cond_var = variance_of_y(dgp) - explained;
    if !(cond_var > 0.0) {
        return Err(Error::NotSpd(format!(
            "conditional variance {cond_var:e} is not positive"
        )));
    }
    let k1 = m.size1();
    let schur = schur_complement(&s, k1)?;
    let theta2 = theta.rows(k1, m.size2()).into_owned();
    let mu2 = quad_form(&theta2, &schur, &theta2) / cond_var;
    Ok(ConditionalParams {
        theta,
        cond_var,
        mu: explained / cond_var,
        mu2,
        s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix_from_rows;
    use approx::assert_relative_eq;

    fn random_spd(p: usize, rng: &mut RngStream) -> Matrix {
        let a = rng.normal_matrix(p, p);
        a.transpose() * a + Matrix::identity(p, p) * 0.5
    }

    #[test]
    fn full_model_recovers_beta_and_noise() {
        let mut rng = RngStream::new(1, 0);
        let sigma = random_spd(6, &mut rng);
        let beta = rng.normal_vector(6);
        let dgp = Dgp::new(beta.clone(), sigma, 0.7).unwrap();
        let m = CandidateModel::new(vec![4, 0, 2], vec![1, 5, 3]).unwrap();
        let cp = conditional_params(&dgp, &m).unwrap();
        for (j, &i) in m.indices().iter().enumerate() {
            assert_relative_eq!(cp.theta[j], beta[i], epsilon = 1e-10);
        }
        assert_relative_eq!(cp.cond_var, 0.7, epsilon = 1e-10);
    }

    #[test]
    fn orthogonal_design_adds_omitted_signal_to_noise() {
        let beta = Vector::from_vec(vec![1.0, 2.0, 0.5, -1.0, 0.3, 0.2, 1.5]);
        let dgp = Dgp::new(beta.clone(), Matrix::identity(7, 7), 1.0).unwrap();
        let m = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5]).unwrap();
        let cp = conditional_params(&dgp, &m).unwrap();
        assert_relative_eq!(cp.cond_var, 1.0 + 1.5 * 1.5, epsilon = 1e-12);
        assert_relative_eq!(cp.theta[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn one_plus_mu_is_variance_ratio() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..20 {
            let sigma = random_spd(9, &mut rng);
            let dgp = Dgp::new(rng.normal_vector(9), sigma, 0.3 + rng.uniform()).unwrap();
            let m = CandidateModel::new(vec![0, 3, 5], vec![7, 2, 8, 1]).unwrap();
            let cp = conditional_params(&dgp, &m).unwrap();
            assert_relative_eq!(
                1.0 + cp.mu,
                variance_of_y(&dgp) / cp.cond_var,
                max_relative = 1e-10
            );
            assert!(cp.mu2 >= 0.0 && cp.mu2 <= cp.mu + 1e-12);
        }
    }

    #[test]
    fn conditional_variance_shrinks_along_nested_models() {
        let mut rng = RngStream::new(4, 0);
        let sigma = random_spd(10, &mut rng);
        let dgp = Dgp::new(rng.normal_vector(10), sigma, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for k2 in 3..=7 {
            let m = CandidateModel::new(vec![0, 1, 2], (3..3 + k2).collect()).unwrap();
            let v = conditional_params(&dgp, &m).unwrap().cond_var;
            assert!(v <= prev * (1.0 + 1e-12));
            prev = v;
        }
    }

    #[test]
    fn mu2_vanishes_when_block2_carries_no_signal() {
        let mut sigma = Matrix::identity(6, 6);
        sigma[(0, 1)] = 0.4;
        sigma[(1, 0)] = 0.4;
        sigma[(3, 4)] = 0.3;
        sigma[(4, 3)] = 0.3;
        let beta = Vector::from_vec(vec![1.0, -1.0, 2.0, 0.0, 0.0, 0.0]);
        let dgp = Dgp::new(beta, sigma, 1.0).unwrap();
        let m = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5]).unwrap();
        assert_eq!(conditional_params(&dgp, &m).unwrap().mu2, 0.0);
    }

    #[test]
    fn variance_of_y_direct_sum() {
        let dgp = Dgp::new(
            Vector::from_vec(vec![1.0, 1.0]),
            Matrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        assert_eq!(variance_of_y(&dgp), 3.0);
        let zero = Dgp::new(Vector::zeros(2), Matrix::identity(2, 2), 2.5).unwrap();
        assert_eq!(variance_of_y(&zero), 2.5);
    }

    #[test]
    fn near_deterministic_regression() {
        let dgp = Dgp::new(Vector::from_vec(vec![1.0]), Matrix::identity(1, 1), 1e-12).unwrap();
        let s = generate_sample(&dgp, 50, &mut RngStream::new(9, 1)).unwrap();
        for i in 0..50 {
            assert!((s.y[i] - s.x[(i, 0)]).abs() < 1e-5);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let dgp = Dgp::new(
            Vector::from_vec(vec![0.5, 1.0]),
            Matrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        let a = generate_sample(&dgp, 20, &mut RngStream::new(5, 3)).unwrap();
        let b = generate_sample(&dgp, 20, &mut RngStream::new(5, 3)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(CandidateModel::new(vec![0, 1], vec![2, 3, 4]).is_err());
        assert!(CandidateModel::new(vec![0, 1, 2], vec![2, 3, 4]).is_err());
        let m = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5]).unwrap();
        assert!(m.validate(5).is_err());
        assert!(matches!(
            m.validate_for_fit(6, 6),
            Err(Error::ModelTooLarge { .. })
        ));
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let s = matrix_from_rows(2, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            Dgp::new(Vector::zeros(2), s, 1.0),
            Err(Error::NotSpd(_))
        ));
    }
}
