//! Run the three headline Monte Carlo experiments (ratio concentration,
//! selection quality, interval coverage) and print their summaries.
//!
//! Pass the experiment name as the first argument to run only one.

use blockstein::cli::RunConfig;
use blockstein::harness::{
    experiment_coverage, experiment_ratio, experiment_selection, CoverageOptions, ExperimentSetup,
};

fn main() -> blockstein::Result<()> {
    let cfg = RunConfig::load(
        concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json").as_ref(),
    )?;
    let dgp = cfg.dgp.build()?;
    let collection = cfg.collection(dgp.p())?;
    let setup = ExperimentSetup {
        dgp: &dgp,
        collection: &collection,
        n: cfg.n.unwrap_or(200),
        shrink: &cfg.shrinkage,
    };
    let mc = cfg.mc_config();
    let only = std::env::args().nth(1);

    let wanted = |name: &str| only.as_deref().is_none_or(|o| o == name);
    let mut reports = Vec::new();
    if wanted("ratio") {
        reports.push(experiment_ratio(&setup, &mc)?);
    }
    if wanted("selection") {
        reports.push(experiment_selection(&setup, &mc)?);
    }
    if wanted("coverage") {
        reports.push(experiment_coverage(
            &setup,
            &mc,
            CoverageOptions {
                alpha: cfg.alpha,
                oracle_injection: false,
            },
        )?);
    }
    for r in reports {
        let vacuous = r.per_epsilon.iter().filter(|v| v.verdict.vacuous).count();
        println!(
            "== {} ({} verdicts, {} vacuous, {} failed)",
            r.experiment,
            r.per_epsilon.len(),
            vacuous,
            r.failures().len()
        );
        for (k, v) in &r.summaries {
            println!("  {k}: {v}");
        }
    }
    Ok(())
}
