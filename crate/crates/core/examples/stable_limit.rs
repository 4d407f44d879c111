//! Stable limit of the acoustic additive functional `N^{-2/3} int_0^{Nt} omega'(K_s) ds`.
//!
//!     cargo run --release --example stable_limit -- [N] [n_paths]

use std::time::Instant;

use kinetic_chain::chain::DEFAULT_STEP_CAP;
use kinetic_chain::functionals::stable_limit_test;
use kinetic_chain::limits::stable_c_hat_pipeline;
use kinetic_chain::model::DispersionModel;
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>().expect("numeric argument"));
    let n = args.next().unwrap_or(1e4) as u64;
    let paths = args.next().unwrap_or(1e4) as usize;
    let model = DispersionModel::unpinned_nn();
    let c_hat = stable_c_hat_pipeline(&model)?;
    let clock = Instant::now();
    let r = stable_limit_test(
        &model,
        n,
        1.0,
        &[0.5, 1.0, 2.0],
        paths,
        StreamId::new(7, "stable"),
        &c_hat,
        DEFAULT_STEP_CAP,
    )?;
    println!("N = {n}, paths = {paths}, {:.1} s", clock.elapsed().as_secs_f64());
    for (i, p) in r.charfn.p.iter().enumerate() {
        println!(
            "  p = {p:<4}  phi = {:.5} {:+.5}i  +- {:.5}",
            r.charfn.mean[i].re,
            r.charfn.mean[i].im,
            r.charfn.stderr(i)
        );
    }
    for c in &r.per_p {
        println!("  c_p({}) = {:.4} +- {:.4}", c.p, c.value, c.stderr);
    }
    match r.c_hat_emp {
        Some((c, se)) => println!(
            "c_emp = {c:.4} +- {se:.4}, self-consistency {:.3}",
            r.self_consistency.unwrap_or(f64::NAN)
        ),
        None => println!("fit failed: {}", r.fit_error.unwrap_or_default()),
    }
    println!(
        "pipeline {:.4}, literal {:.4}, formula {:.4}",
        r.c_hat_pipeline, r.c_hat_pipeline_literal, r.c_hat_formula
    );
    Ok(())
}
