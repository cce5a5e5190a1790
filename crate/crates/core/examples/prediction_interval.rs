//! Build a Gaussian prediction interval from the estimated MSPE and compare its
//! exact conditional coverage with the nominal level.

use blockstein::dgp::{conditional_params, generate_sample, CandidateModel, Dgp};
use blockstein::inference::{build_interval, conditional_coverage, tv_centered_normals};
use blockstein::mspe::{empirical_mspe, true_mspe};
use blockstein::numerics::{Matrix, RngStream, Vector};
use blockstein::shrinkage::{fit, ShrinkageConfig};

fn main() -> blockstein::Result<()> {
    let p = 8;
    let dgp = Dgp::new(
        Vector::from_vec(vec![1.0, 0.5, 0.3, 0.2, 0.0, 0.0, 0.0, 0.1]),
        Matrix::identity(p, p),
        1.0,
    )?;
    let m = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5, 6])?;
    let alpha = 0.1;

    for n in [30, 100, 1000] {
        let sample = generate_sample(&dgp, n, &mut RngStream::new(7, n as u64))?;
        let f = fit(&sample, &m, &ShrinkageConfig::james_stein_default(&m))?;
        let rho_hat = empirical_mspe(&sample, &m, &f)?;
        let rho = true_mspe(&f, &conditional_params(&dgp, &m)?)?;
        let x0 = Vector::from_element(p, 0.5);
        let iv = build_interval(&f, &x0, rho_hat, alpha)?;
        println!(
            "n={n:>5}: [{:.3}, {:.3}]  coverage {:.4} (nominal {:.2})  TV to oracle law {:.4}",
            iv.lower(),
            iv.upper(),
            conditional_coverage(rho_hat, rho, alpha)?,
            1.0 - alpha,
            tv_centered_normals(rho_hat, rho)?
        );
    }
    Ok(())
}
