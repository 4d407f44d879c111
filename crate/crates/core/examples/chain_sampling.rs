//! Stationary sampling of the scattering chain and one jump-process path.
//!
//!     cargo run --release --example chain_sampling

use kinetic_chain::chain::{jump_trajectory, sample_stationary, spectral_gap, StartMode, DEFAULT_STEP_CAP, THETA_BAR};
use kinetic_chain::model::theta;
use kinetic_chain::quadrature::TorusGrid;
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let id = StreamId::new(1, "chain-sampling");
    let mut rng = id.rng(0);
    let ks: Vec<f64> = (0..100_000)
        .map(|_| sample_stationary(&mut rng).map(|k| k.value()))
        .collect::<kinetic_chain::Result<_>>()?;
    let near_zero = ks.iter().filter(|k| k.abs() < 0.05).count() as f64 / ks.len() as f64;
    println!("100000 stationary draws: share with |k| < 0.05 is {near_zero:.4}");
    let mean_theta = ks.iter().map(|&k| theta(k)).sum::<f64>() / ks.len() as f64;
    println!("sample mean holding time {mean_theta:.4} (exact {THETA_BAR:.4}; heavy tailed)");
    println!("spectral gap a = {:.8}", spectral_gap(&TorusGrid::default())?.a);

    let path = jump_trajectory(StartMode::Stationary, 50.0, DEFAULT_STEP_CAP, &mut id.rng(1))?;
    println!("\njump path on [0, 50]: {} jumps", path.jumps());
    for (k, h) in path.states.iter().zip(&path.holds).take(8) {
        println!("  k = {:+.5}  hold {:.4}", k.value(), h);
    }
    Ok(())
}
