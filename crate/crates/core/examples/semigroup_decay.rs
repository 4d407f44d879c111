//! `L^1` decay of the scattering semigroup on mean-zero inputs, and the
//! resolvent identities of the rank-two reduction.
//!
//!     cargo run --release --example semigroup_decay

use num_complex::Complex64;

use kinetic_chain::kinetic::{
    decay_inputs, decay_times, min_abs_d_on_arc, resolvent_system, semigroup_decay, GridSpec,
};

fn main() -> kinetic_chain::Result<()> {
    let spec = GridSpec::kinetic_default();
    let grid = spec.build();
    for a in [0.5, 1.0] {
        for (name, f) in decay_inputs(&grid, a) {
            let d = semigroup_decay(&f, spec, a, &decay_times(), 0.1)?;
            let (lo, hi) = d.fit.slope_interval(0.95);
            println!(
                "a = {a}: {name:<28} |f|_Ba = {:.4}  slope {:+.4} [{lo:+.4}, {hi:+.4}]  bounded {}  nonincreasing {}",
                d.ba_norm, d.fit.slope, d.bounded, d.nonincreasing
            );
        }
    }
    let r0 = resolvent_system(Complex64::new(0.0, 0.0), &grid)?;
    println!(
        "\na(0) = {:.12}, a_1(0) = {:.12}, a_-1(0) = {:.12}",
        r0.a.re, r0.a_plus.re, r0.a_minus.re
    );
    for l in [
        Complex64::new(0.05, 0.0),
        Complex64::new(0.5, 2.0),
        Complex64::new(3.0, -1.0),
    ] {
        let r = resolvent_system(l, &grid)?;
        println!(
            "lambda = {l}: Delta = {:.6e}, |Delta - lambda D| = {:.2e}",
            r.delta,
            r.identity_defect()
        );
    }
    println!(
        "min |D| on the half circle of radius 0.1: {:.6}",
        min_abs_d_on_arc(0.1, 64, &grid)?
    );
    Ok(())
}
