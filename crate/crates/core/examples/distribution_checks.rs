//! Kolmogorov-Smirnov checks of the exact finite-sample laws used by the
//! estimators: the variance estimate, the Hotelling-type ratio, the Schur
//! complement trace, and the inverse chi-square diagonal.

use blockstein::dgp::{CandidateModel, Dgp};
use blockstein::harness::{verify_distribution, DistributionKind, DistributionParams, McConfig};
use blockstein::numerics::{Matrix, Vector};

fn main() -> blockstein::Result<()> {
    let p = 10;
    let sigma = Matrix::from_fn(p, p, |i, j| 0.3f64.powi((i as i32 - j as i32).abs()));
    let dgp = Dgp::new(
        Vector::from_fn(p, |i, _| (i as f64 * 0.7).sin()),
        sigma,
        1.0,
    )?;
    let model = CandidateModel::new(vec![0, 1, 2], vec![3, 4, 5, 6])?;
    let regression = DistributionParams::Regression { dgp, model, n: 40 };
    let gaussian = DistributionParams::Gaussian { d: 25, k: 4 };
    let cfg = McConfig {
        reps: 5_000,
        master_seed: 5,
        ..McConfig::default()
    };

    for kind in DistributionKind::ALL {
        let params = if kind == DistributionKind::InvChisqDiag {
            &gaussian
        } else {
            &regression
        };
        let r = verify_distribution(kind, params, &cfg)?;
        println!(
            "{:<18} D = {:.4}  p = {:.3}  mean {:.4} (reference {:.4})  {}",
            format!("{kind:?}"),
            r.ks_statistic,
            r.p_value,
            r.statistic_mean,
            r.reference_mean,
            if r.pass { "ok" } else { "REJECT" }
        );
    }
    Ok(())
}
