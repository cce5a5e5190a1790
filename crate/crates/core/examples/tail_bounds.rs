//! Closed-form tail bounds for the elementary random quantities, checked
//! against Monte Carlo frequencies with a Wilson upper confidence limit.

use blockstein::bounds::{elementary_tail_bounds, TailKind};
use blockstein::harness::{verify_tail_bound, McConfig, TailCheck, WishartBranch};

fn main() -> blockstein::Result<()> {
    // At 10^5 replications the Wilson limit with zero events is about 1e-4, which
    // is the smallest bound value a check can confirm.
    let cfg = McConfig {
        reps: 100_000,
        master_seed: 11,
        epsilon_grid: vec![0.4, 0.5],
        ..McConfig::default()
    };
    for eps in [0.1, 0.25, 0.5] {
        let b = elementary_tail_bounds(&TailKind::ChiSqUpper { k: 200 }, eps)?;
        println!("chi-square(200) upper tail at {eps}: bound {:.3e}", b.value);
    }
    for check in [
        TailCheck::ChiSq {
            k: 200,
            two_sided: false,
        },
        TailCheck::Wishart {
            d: 100,
            k: 10,
            branch: WishartBranch::Lower,
        },
        TailCheck::Trace {
            d: 60,
            k: 5,
            relative: true,
        },
    ] {
        for v in verify_tail_bound(&check, &cfg)? {
            println!(
                "{:<16} eps {:.2}: freq {:.2e}, wilson {:.2e}, bound {:.2e} -> {}{}",
                check.name(),
                v.epsilon,
                v.empirical_freq,
                v.wilson_upper,
                v.clipped_bound,
                if v.pass { "pass" } else { "FAIL" },
                if v.vacuous { " (vacuous)" } else { "" }
            );
        }
    }
    Ok(())
}
