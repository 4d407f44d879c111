//! Kinetic equation at one `p`: deterministic solution against its
//! Monte Carlo path representation.
//!
//!     cargo run --release --example kinetic_solve -- [p] [t]

use num_complex::Complex64;

use kinetic_chain::kinetic::{evolve_kinetic, mc_solution, GridSpec, KineticField};
use kinetic_chain::model::{e_plus, DispersionModel};
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>().expect("numeric argument"));
    let p = args.next().unwrap_or(1.0);
    let t = args.next().unwrap_or(1.0);
    let model = DispersionModel::unpinned_nn();
    let w0 = |k: f64| Complex64::new(1.0 + e_plus(k), 0.0);
    let f0 = KineticField::from_fn(&model, GridSpec::kinetic_default(), p, w0)?;
    let f = evolve_kinetic(&f0, t, 0.01)?;
    println!("p = {p}, t = {t}: mass {:.6} -> {:.6}", f0.mass().re, f.mass().re);
    for (i, k) in [0.05, 0.2, 0.35].into_iter().enumerate() {
        let k0 = f.nodes()[f.grid.nearest(k)];
        let mc = mc_solution(
            &model,
            w0,
            p,
            k0,
            t,
            1.0,
            20_000,
            StreamId::new(3, "kinetic-solve").child(&i.to_string()),
        )?;
        let det = f.value_at(k0);
        println!(
            "  k = {k0:.4}: solver {:.5}{:+.5}i  paths {:.5}{:+.5}i +- {:.5}",
            det.re,
            det.im,
            mc.mean.re,
            mc.mean.im,
            mc.stderr()
        );
    }
    Ok(())
}
