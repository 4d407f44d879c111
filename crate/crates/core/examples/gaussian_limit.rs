//! Gaussian limit of the pinned additive functional `N^{-1/2} int_0^{Nt} omega'(K_s) ds`
//! and arbitration between the candidate variances.
//!
//!     cargo run --release --example gaussian_limit -- [N] [n_paths] [omega0]

use std::time::Instant;

use kinetic_chain::chain::DEFAULT_STEP_CAP;
use kinetic_chain::functionals::gaussian_limit_test;
use kinetic_chain::limits::gaussian_c_hats;
use kinetic_chain::model::DispersionModel;
use kinetic_chain::quadrature::TorusGrid;
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>().expect("numeric argument"));
    let n = args.next().unwrap_or(1e4) as u64;
    let paths = args.next().unwrap_or(1e4) as usize;
    let w0 = args.next().unwrap_or(1.0);
    let model = DispersionModel::pinned_nn(w0)?;
    let cands = gaussian_c_hats(&model, &TorusGrid::default())?;
    let clock = Instant::now();
    let r = gaussian_limit_test(
        &model,
        n,
        1.0,
        &[0.25, 0.5, 1.0],
        paths,
        StreamId::new(8, "gauss"),
        &cands,
        DEFAULT_STEP_CAP,
    )?;
    println!(
        "N = {n}, paths = {paths}, omega0 = {w0}, {:.1} s",
        clock.elapsed().as_secs_f64()
    );
    println!(
        "Var(Y_1) = {:.4} +- {:.4}, excess kurtosis {:.4} +- {:.4}",
        r.variance_per_t, r.variance_per_t_stderr, r.moments.excess_kurtosis, r.moments.kurtosis_stderr
    );
    for c in &r.candidates {
        println!(
            "  {:<24} {:>9.4}  deviation {:+.4}  charfn distance {:.4}",
            c.name, c.variance, c.relative_deviation, c.charfn_distance
        );
    }
    println!("matched: {}", r.matched);
    Ok(())
}
