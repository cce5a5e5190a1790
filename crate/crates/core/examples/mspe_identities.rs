//! The true MSPE two ways (direct quadratic form and block expansion), and the
//! two collapse identities of the estimated MSPE: no shrinkage reduces to the
//! OLS formula, full shrinkage to `Y'Y/n`.

use blockstein::dgp::{conditional_params, generate_sample, CandidateModel, Dgp};
use blockstein::mspe::{empirical_mspe, true_mspe, true_mspe_expanded};
use blockstein::numerics::{Matrix, RngStream, Vector};
use blockstein::shrinkage::{fit, ShrinkageConfig};

fn main() -> blockstein::Result<()> {
    let p = 9;
    let sigma = Matrix::from_fn(p, p, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    let dgp = Dgp::new(
        Vector::from_fn(p, |i, _| 1.0 / (1.0 + i as f64)),
        sigma,
        0.8,
    )?;
    let m = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5, 6])?;
    let n = 80;
    let sample = generate_sample(&dgp, n, &mut RngStream::new(3, 0))?;
    let cp = conditional_params(&dgp, &m)?;

    let f = fit(&sample, &m, &ShrinkageConfig::new(0.7, 1.3)?)?;
    println!("direct   {:.15}", true_mspe(&f, &cp)?);
    println!("expanded {:.15}", true_mspe_expanded(&f, &cp, &sample, &m)?);

    let ols = fit(&sample, &m, &ShrinkageConfig::ols())?;
    let k = m.size() as f64;
    println!(
        "no shrinkage:   {:.15} vs sigma_hat^2 (1 + k/(n-k+1)) = {:.15}",
        empirical_mspe(&sample, &m, &ols)?,
        ols.sigma_hat_sq * (1.0 + k / (n as f64 - k + 1.0))
    );
    let full = fit(&sample, &m, &ShrinkageConfig::new(1e12, 1e12)?)?;
    println!(
        "full shrinkage: {:.15} vs Y'Y/n = {:.15}",
        empirical_mspe(&sample, &m, &full)?,
        sample.y.norm_squared() / n as f64
    );
    Ok(())
}
