//! Tabulate the headline concentration bounds over a grid of sample sizes.
//! Values too small for `f64` are still reported through their logarithm.

use blockstein::bounds::{
    bound_pi_short, bound_theorem1, bound_tv, bound_uniform, BoundInput, BoundValue,
};
use blockstein::selection::CollectionSummary;

fn show(label: &str, b: BoundValue) {
    println!(
        "  {label:<22} value {:>12.4e}  ln {:>12.2}  clipped {:.4}",
        b.value,
        b.ln_value,
        b.clipped()
    );
}

fn main() -> blockstein::Result<()> {
    let eps = 0.5;
    let collection = CollectionSummary {
        r_n: 3,
        s_n: 12,
        count: 10,
    };
    for n in [1_000, 100_000, 10_000_000, 1_000_000_000] {
        println!("n = {n}");
        let per_model = BoundInput::per_model(n, 12, 3, eps);
        let uniform = BoundInput::uniform(n, collection, eps);
        show("single model", bound_theorem1(&per_model)?);
        show(
            "single model, mu = 1",
            bound_theorem1(&per_model.with_mu(1.0))?,
        );
        show("uniform", bound_uniform(&uniform, false)?);
        show("uniform, d = 2", bound_uniform(&uniform.with_d(2.0), true)?);
        show("total variation", bound_tv(&per_model, false, false)?);
        show("short interval", bound_pi_short(&uniform, false)?);
    }
    Ok(())
}
