//! Evaluate the deterministic inequalities behind the bounds on Latin-hypercube
//! grids and report any violation.

use blockstein::bounds::{
    latin_hypercube_unit, latin_hypercube_weights, prop_inequality_check, PropGrid,
};

fn main() -> blockstein::Result<()> {
    let weights = PropGrid::Weights(latin_hypercube_weights(20_000, 500, 1));
    let unit = PropGrid::Unit(latin_hypercube_unit(20_000, 2));
    for (label, grid) in [("shrinkage weights", &weights), ("unit square", &unit)] {
        let violations = prop_inequality_check(grid)?;
        println!("{label}: {} violations", violations.len());
        for v in violations.iter().take(5) {
            println!("  {} lhs {:.6e} rhs {:.6e}", v.inequality, v.lhs, v.rhs);
        }
    }
    Ok(())
}
