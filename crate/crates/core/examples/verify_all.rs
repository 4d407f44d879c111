//! Every acceptance criterion at the quick preset through the library
//! harness; artifacts go to `runs/example-verify-all`.
//!
//!     cargo run --release --example verify_all

use kinetic_chain::harness::{emit_report, run_with, Kind, Preset, RunConfig};

fn main() -> kinetic_chain::Result<()> {
    let mut cfg = RunConfig::preset(Kind::VerifyAll, Preset::Quick, 1);
    cfg.out = "runs/example-verify-all".into();
    let record = run_with(&cfg, |c| println!("{}", c.line()))?;
    println!("\n{}", emit_report(std::slice::from_ref(&record)));
    Ok(())
}
