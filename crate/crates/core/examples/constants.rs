//! Limit constants for the acoustic and the pinned nearest-neighbour chain.
//!
//!     cargo run --release --example constants

use kinetic_chain::limits::{limit_constants, tail_constant};
use kinetic_chain::model::DispersionModel;

fn main() -> kinetic_chain::Result<()> {
    let acoustic = DispersionModel::unpinned_nn();
    let tail = tail_constant(&acoustic)?;
    println!("lambda^(3/2) pi(Psi > lambda):");
    for (l, v) in tail.plus.lambdas.iter().zip(&tail.plus.scaled) {
        println!("  {l:>10.1}  {v:.10}");
    }
    println!(
        "  extrapolated {:.10}  (leading order {:.10})",
        tail.c_star_plus, tail.asymptotic
    );

    for model in [acoustic, DispersionModel::pinned_nn(1.0)?] {
        let c = limit_constants(&model)?;
        println!("\n{}", serde_json::to_string_pretty(&c)?);
    }
    Ok(())
}
