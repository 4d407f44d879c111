//! Noisy lattice dynamics: a Wigner packet ensemble evolved to macroscopic
//! time 1 and paired against the kinetic solution.
//!
//!     cargo run --release --example lattice_sim -- [L] [members]

use kinetic_chain::kinetic::GridSpec;
use kinetic_chain::lattice::{kinetic_comparison, ComparisonSpec, PacketSpec, TestFunction};
use kinetic_chain::model::DispersionModel;
use kinetic_chain::rng::StreamId;

fn main() -> kinetic_chain::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let l = args.next().unwrap_or(1024);
    let members = args.next().unwrap_or(32);
    let eps = 0.1;
    let spec = ComparisonSpec {
        l,
        eps,
        members,
        times: vec![0.25, 0.5, 1.0],
        h: 0.05,
        kinetic_dt: 0.005,
        grid: GridSpec::kinetic_default(),
        p_max: 0.5,
        scale: 2.0,
    };
    let packet = PacketSpec::centred(l, eps);
    let tests = TestFunction::standard(&packet);
    let rows = kinetic_comparison(
        &DispersionModel::unpinned_nn(),
        &spec,
        packet,
        &tests,
        StreamId::new(4, "lattice-sim"),
    )?;
    println!("L = {l}, M = {members}, eps = {eps}");
    for r in &rows {
        println!(
            "  t = {:.2} {:<11} lattice {:+.5}{:+.5}i +- {:.5}  kinetic {:+.5}{:+.5}i  |J| = {:.3}  within {}",
            r.t,
            r.test,
            r.lattice.re,
            r.lattice.im,
            r.lattice_stderr,
            r.kinetic.re,
            r.kinetic.im,
            r.norm,
            r.within(0.1, 3.0)
        );
    }
    Ok(())
}
