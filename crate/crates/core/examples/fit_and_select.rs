//! Fit block James-Stein shrinkage for several nested models, estimate each
//! model's prediction error from the training data, and pick the smallest.

use blockstein::cli::RunConfig;
use blockstein::dgp::generate_sample;
use blockstein::numerics::RngStream;
use blockstein::selection::select;

fn main() -> blockstein::Result<()> {
    let cfg = RunConfig::load(
        concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/desk.json").as_ref(),
    )?;
    let dgp = cfg.dgp.build()?;
    let collection = cfg.collection(dgp.p())?;
    let sample = generate_sample(&dgp, 200, &mut RngStream::new(42, 0))?;

    let result = select(&sample, &collection, &cfg.shrinkage, Some(&dgp))?;
    println!(
        "{:>5} {:>8} {:>8} {:>10} {:>10}",
        "model", "a1", "a2", "rho_hat^2", "rho^2"
    );
    for (i, o) in result.per_model.iter().enumerate() {
        let truth = o.oracle.map_or(f64::NAN, |r| r.rho_sq_true);
        println!(
            "{:>5} {:>8.4} {:>8.4} {:>10.4} {:>10.4}",
            i + 1,
            o.a1,
            o.a2,
            o.rho_sq_hat,
            truth
        );
    }
    println!(
        "selected model {} (best by true MSPE: {})",
        result.selected_empirical + 1,
        result.selected_oracle.unwrap() + 1
    );
    Ok(())
}
