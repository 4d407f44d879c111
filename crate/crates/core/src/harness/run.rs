//! Dispatch from an experiment kind to its criteria, with timing and
//! error capture.

use std::time::Instant;

use serde_json::json;

use super::checks::{self, budget, empty};
use super::config::{Kind, Preset, RunConfig};
use super::output::Outputs;
use super::record::{emit_report, Check, Criterion, RunRecord, Status};
use crate::error::Result;
use crate::limits::limit_constants;
use crate::model::DispersionModel;

type Step<'a> = Box<dyn FnOnce(&mut Outputs) -> Result<Criterion> + 'a>;
type Part<'a> = Box<dyn FnOnce(&mut Criterion, &mut Outputs) -> Result<()> + 'a>;

/// Builds a criterion from parts that each append checks.
fn parts<'a>(id: u8, items: Vec<Part<'a>>) -> Step<'a> {
    Box::new(move |out| {
        let mut c = empty(id);
        for f in items {
            f(&mut c, out)?;
        }
        Ok(c)
    })
}

/// Runs one criterion; an error becomes a failed check instead of aborting
/// the run.
fn timed(id: u8, step: Step<'_>, out: &mut Outputs) -> Criterion {
    let clock = Instant::now();
    let mut c = step(out).unwrap_or_else(|e| {
        let mut c = empty(id);
        c.checks
            .push(Check::new("experiment_completed", f64::NAN, "no error", Status::Fail).with_detail(e.to_string()));
        c
    });
    c.seconds = clock.elapsed().as_secs_f64();
    if let Some(b) = budget(id) {
        if c.seconds > b {
            c.notes
                .push(format!("runtime {:.1}s exceeds the {b:.0}s budget", c.seconds));
        }
    }
    c
}

fn steps<'a>(cfg: &'a RunConfig, model: &'a DispersionModel) -> Result<Vec<(u8, Step<'a>)>> {
    let acoustic = DispersionModel::unpinned_nn();
    let pinned = DispersionModel::pinned_nn(cfg.functionals.pinning_mass)?;
    let paper = cfg.preset == Preset::Paper;
    let mut v: Vec<(u8, Step<'a>)> = Vec::new();
    match cfg.kind {
        Kind::VerifyAll => {
            v.push((1, Box::new(move |o| checks::kernel_identities(cfg, o))));
            v.push((2, Box::new(move |o| checks::chain_stationarity(cfg, o))));
            v.push((3, Box::new(move |o| checks::poisson_parity(cfg, o))));
            v.push((4, Box::new(move |o| checks::tail_law(cfg, o))));
            let a = acoustic.clone();
            let a2 = acoustic.clone();
            let mut five: Vec<Part> = vec![Box::new(move |c, o| checks::stable_charfn(cfg, &a, c, o))];
            if paper {
                five.push(Box::new(move |c, o| checks::stable_rates(cfg, &a2, c, o)));
            }
            v.push((5, parts(5, five)));
            let p = pinned.clone();
            let p2 = pinned.clone();
            let mut six: Vec<Part> = vec![Box::new(move |c, o| checks::gaussian_charfn(cfg, &p, c, o))];
            if paper {
                six.push(Box::new(move |c, o| checks::gaussian_rates(cfg, &p2, c, o)));
            }
            v.push((6, parts(6, six)));
            let a = acoustic.clone();
            v.push((7, Box::new(move |o| checks::kinetic_solver(cfg, &a, o))));
            v.push((8, Box::new(move |o| checks::semigroup(cfg, o))));
            let a = acoustic.clone();
            v.push((9, Box::new(move |o| checks::lattice_conservation(cfg, &a, o))));
            let a = acoustic.clone();
            v.push((10, Box::new(move |o| checks::kinetic_limit(cfg, &a, o))));
            v.push((11, Box::new(move |o| checks::tail_probability(cfg, &acoustic, o))));
        }
        Kind::Constants => {
            v.push((1, Box::new(move |o| checks::kernel_identities(cfg, o))));
            v.push((2, Box::new(move |o| checks::chain_stationarity(cfg, o))));
            v.push((3, Box::new(move |o| checks::poisson_parity(cfg, o))));
            v.push((4, Box::new(move |o| checks::tail_law(cfg, o))));
        }
        Kind::Charfn => {
            if model.is_pinned() {
                v.push((
                    6,
                    parts(6, vec![Box::new(move |c, o| checks::gaussian_charfn(cfg, model, c, o))]),
                ));
            } else {
                v.push((
                    5,
                    parts(5, vec![Box::new(move |c, o| checks::stable_charfn(cfg, model, c, o))]),
                ));
            }
        }
        Kind::Rates => {
            if model.is_pinned() {
                v.push((
                    6,
                    parts(6, vec![Box::new(move |c, o| checks::gaussian_rates(cfg, model, c, o))]),
                ));
            } else {
                v.push((
                    5,
                    parts(5, vec![Box::new(move |c, o| checks::stable_rates(cfg, model, c, o))]),
                ));
            }
            v.push((11, Box::new(move |o| checks::tail_probability(cfg, model, o))));
        }
        Kind::KineticSolve => v.push((7, Box::new(move |o| checks::kinetic_solver(cfg, model, o)))),
        Kind::Semigroup => v.push((8, Box::new(move |o| checks::semigroup(cfg, o)))),
        Kind::LatticeSim => {
            v.push((9, Box::new(move |o| checks::lattice_conservation(cfg, model, o))));
            v.push((10, Box::new(move |o| checks::kinetic_limit(cfg, model, o))));
        }
    }
    Ok(v)
}

/// Runs the experiment named by `cfg.kind`, writes its artifacts, the run
/// record and the text report under `cfg.out`, and returns the record.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    run_with(cfg, |_| {})
}

/// As [`run`], calling `progress` after each criterion.
pub fn run_with(cfg: &RunConfig, mut progress: impl FnMut(&Criterion)) -> Result<RunRecord> {
    cfg.validate()?;
    let clock = Instant::now();
    let model = cfg.model.build()?;
    let config = serde_json::to_value(cfg)?;
    let mut out = Outputs::new(&cfg.out, config.clone())?;
    if cfg.kind == Kind::Constants {
        out.json("constants", &limit_constants(&model)?)?;
    }
    let mut criteria = Vec::new();
    for (id, step) in steps(cfg, &model)? {
        let c = timed(id, step, &mut out);
        progress(&c);
        criteria.push(c);
    }
    let wall = clock.elapsed().as_secs_f64();
    if cfg.kind == Kind::VerifyAll && cfg.preset == Preset::Quick {
        if let Some(last) = criteria.last_mut() {
            last.notes
                .push(format!("whole quick run took {wall:.0}s (soft budget 600s)"));
        }
    }
    out.json("config", &json!({ "config": config, "toml": cfg.to_toml() }))?;
    let mut record = RunRecord {
        kind: cfg.kind.name().into(),
        config,
        code_version: env!("CARGO_PKG_VERSION").into(),
        wall_seconds: wall,
        criteria,
        manifest: out.manifest()?,
    };
    record.manifest.sort_by(|a, b| a.path.cmp(&b.path));
    std::fs::write(out.path("run_record.json"), serde_json::to_string_pretty(&record)?)?;
    std::fs::write(out.path("report.txt"), emit_report(std::slice::from_ref(&record)))?;
    Ok(record)
}
