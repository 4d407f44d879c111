//! Frequency of `|Z_t| >= N^kappa` along an `N` ladder and the fitted decay
//! exponent.
//!
//!     cargo run --release --example tail_probability

use kinetic_chain::functionals::{fit_tail_probability, tail_probability_check};
use kinetic_chain::model::DispersionModel;
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let model = DispersionModel::unpinned_nn();
    let id = StreamId::new(5, "tail-probability");
    let points = [100u64, 1_000, 10_000]
        .iter()
        .map(|&n| tail_probability_check(&model, n, 1.0, 0.2, 10_000, id.child(&n.to_string())))
        .collect::<kinetic_chain::Result<Vec<_>>>()?;
    for p in &points {
        println!(
            "N = {:>6}: {:>5} hits, frequency {:.4} in [{:.4}, {:.4}]",
            p.n, p.hits, p.frequency, p.interval.0, p.interval.1
        );
    }
    let fit = fit_tail_probability(&points)?;
    println!(
        "delta = {:.4}, 95% interval [{:.4}, {:.4}], C = {:.4}",
        fit.delta, fit.delta_interval.0, fit.delta_interval.1, fit.c
    );
    Ok(())
}
