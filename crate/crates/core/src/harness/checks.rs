//! The eleven acceptance criteria. Each function measures, writes its data
//! and returns checks against pinned tolerances; nothing here retunes a
//! tolerance to make a check pass.

use num_complex::Complex64;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::{Preset, RunConfig};
use super::output::{num, Outputs};
use super::record::{Check, Criterion, Status};
use crate::chain::{
    sample_stationary, spectral_gap, spectral_gap_grid, stationary_cdf, transition_density_wrt_pi, StartMode,
    DEFAULT_STEP_CAP, THETA_BAR,
};
use crate::error::Result;
use crate::functionals::{
    ensemble, fit_tail_probability, gaussian_report_from_samples, rate_sweep, simulate_additive,
    stable_report_from_samples, tail_probability_check, Regime, StableLimitReport,
};
use crate::kinetic::{
    decay_inputs, decay_times, evolve_kinetic, mc_solution, resolvent_system, semigroup_decay, GridSpec, KineticField,
};
use crate::lattice::{
    conservation_run, init_ensemble, kinetic_comparison, noise_drift_check, ComparisonRow, ComparisonSpec,
    LatticeDynamics, LatticeState, PacketSpec, TestFunction,
};
use crate::limits::{
    delta_star_stable, gaussian_c_hats, poisson_residual, poisson_solve, psi_unchecked, stable_c_hat_pipeline,
    tail_constant, theta_tail_part,
};
use crate::model::{beta_hat, e_minus, e_plus, frak_r, r_kernel, DispersionModel};
use crate::quadrature::TorusGrid;
use crate::rng::StreamId;
use crate::stats::moments;

/// Identity and title of every criterion, in order.
pub const CRITERIA: [(u8, &str, &str); 11] = [
    (
        1,
        "kernel-identities",
        "marginal, rank-two factorisation and normalisation of the scattering kernel",
    ),
    (
        2,
        "chain-stationarity",
        "reversibility, stationary law, mean holding time and spectral gap of the chain",
    ),
    (
        3,
        "poisson-parity",
        "parity of the transition operator and residuals of the Poisson solver",
    ),
    (
        4,
        "tail-constant",
        "tail law of the acoustic observable and the stable constant candidates",
    ),
    (
        5,
        "stable-limit",
        "fractional limit of the acoustic additive functional",
    ),
    (6, "gaussian-limit", "diffusive limit of the pinned additive functional"),
    (
        7,
        "kinetic-solver",
        "deterministic solver against the path representation",
    ),
    (
        8,
        "semigroup-decay",
        "L1 decay of the scattering semigroup and resolvent identities",
    ),
    (
        9,
        "lattice-conservation",
        "energy and momentum conservation and the noise drift of the lattice",
    ),
    (
        10,
        "kinetic-limit",
        "lattice Wigner pairings against the kinetic equation",
    ),
    (
        11,
        "tail-probability",
        "polynomial decay of the partial-sum tail probability",
    ),
];

/// Spec runtime budgets in seconds, reported but not asserted.
pub fn budget(id: u8) -> Option<f64> {
    match id {
        1 => Some(5.0),
        2 => Some(120.0),
        3 => Some(10.0),
        4 => Some(30.0),
        7 | 8 | 11 => Some(300.0),
        9 => Some(600.0),
        _ => None,
    }
}

pub fn empty(id: u8) -> Criterion {
    let (_, key, title) = CRITERIA[id as usize - 1];
    Criterion {
        id,
        key: key.into(),
        title: title.into(),
        checks: Vec::new(),
        notes: Vec::new(),
        seconds: 0.0,
    }
}

fn stream(cfg: &RunConfig, key: &str) -> StreamId {
    StreamId::new(cfg.seed, key)
}

fn max_abs(it: impl Iterator<Item = f64>) -> f64 {
    it.map(f64::abs).fold(0.0, f64::max)
}

pub fn kernel_identities(cfg: &RunConfig, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(1);
    let grid = TorusGrid::default();
    let mut rng = stream(cfg, &c.key).rng(0);
    let ks: Vec<f64> = (0..100).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let marginals: Vec<f64> = ks.iter().map(|&k| 4.0 * grid.integrate(|kp| r_kernel(k, kp))).collect();
    let err = max_abs(ks.iter().zip(&marginals).map(|(&k, m)| m - beta_hat(k)));
    c.checks
        .push(Check::at_most("marginal_equals_beta_hat", err, 1e-10).with_detail("100 random k"));
    let rank2 = max_abs((0..10_000).map(|_| {
        let (k, kp): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        r_kernel(k, kp) - 0.75 * (e_plus(k) * e_minus(kp) + e_minus(k) * e_plus(kp))
    }));
    c.checks
        .push(Check::at_most("rank_two_factorisation", rank2, 1e-12).with_detail("10^4 random pairs"));
    let norm = (grid.integrate(e_plus) - 1.0)
        .abs()
        .max((grid.integrate(e_minus) - 1.0).abs());
    c.checks.push(Check::at_most("basis_densities_normalised", norm, 1e-10));
    let rows: Vec<Vec<String>> = ks
        .iter()
        .zip(&marginals)
        .map(|(&k, m)| vec![num(k), num(*m), num(beta_hat(k))])
        .collect();
    out.csv(
        "kernel_marginal",
        "4 int R(k, k') dk' against beta_hat(k) at random k",
        &["k", "marginal", "beta_hat"],
        &rows,
    )?;
    Ok(c)
}

pub fn chain_stationarity(cfg: &RunConfig, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(2);
    let id = stream(cfg, &c.key);
    let mut rng = id.child("pairs").rng(0);
    let sym = max_abs((0..10_000).map(|_| {
        let (k, kp): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        transition_density_wrt_pi(k, kp) - transition_density_wrt_pi(kp, k)
    }));
    c.checks
        .push(Check::at_most("transition_density_symmetric", sym, 1e-12));

    let n = 1_000_000;
    let ks = ensemble(id.child("stationary"), n, |r| Ok(sample_stationary(r)?.value()))?;
    let bins = 64;
    let mut observed = vec![0u64; bins];
    for &k in &ks {
        observed[(((k + 0.5) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let edges: Vec<f64> = (0..=bins).map(|i| -0.5 + i as f64 / bins as f64).collect();
    let expected: Vec<f64> = edges
        .windows(2)
        .map(|w| n as f64 * (stationary_cdf(w[1]) - stationary_cdf(w[0])))
        .collect();
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (*o as f64 - e).powi(2) / e)
        .sum();
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).expect("dof > 0").cdf(chi2);
    c.checks.push(
        Check::new(
            "stationary_chi_squared_p_value",
            p_value,
            ">= 0.01",
            Status::from_bool(p_value >= 0.01),
        )
        .with_detail(format!("chi2 = {chi2:.2} on {} dof, 10^6 samples", bins - 1)),
    );
    // theta has infinite variance under pi, so the raw sample mean has no
    // valid standard error; split at T, keep the finite-variance body and add
    // the exact contribution of {theta > T}
    let cut = 50.0;
    let (tail_mass, tail_part) = theta_tail_part(cut)?;
    let thetas: Vec<f64> = ks.iter().map(|&k| crate::model::theta(k)).collect();
    let body: Vec<f64> = thetas.iter().map(|&x| if x <= cut { x } else { 0.0 }).collect();
    let mb = moments(&body)?;
    let est = mb.mean + tail_part;
    let z = (est - THETA_BAR).abs() / mb.stderr;
    c.checks.push(
        Check::new("mean_holding_time_z", z, "<= 3 stderr", Status::from_bool(z <= 3.0)).with_detail(format!(
            "E theta = {est:.6} +- {:.6} vs 2/3 (sample mean below {cut} plus exact part above, {tail_part:.6})",
            mb.stderr
        )),
    );
    let hits = thetas.iter().filter(|&&x| x > cut).count() as f64;
    let tz = (hits - n as f64 * tail_mass).abs() / (n as f64 * tail_mass * (1.0 - tail_mass)).sqrt();
    c.checks.push(
        Check::new(
            "holding_time_tail_frequency_z",
            tz,
            "<= 3 stderr",
            Status::from_bool(tz <= 3.0),
        )
        .with_detail(format!(
            "{hits} samples above {cut}, expected {:.1}",
            n as f64 * tail_mass
        )),
    );
    let raw = moments(&thetas)?;
    c.notes.push(format!(
        "raw sample mean of theta {:.6} with nominal stderr {:.6} (z = {:.2}); not asserted since Var theta is infinite",
        raw.mean,
        raw.stderr,
        (raw.mean - THETA_BAR).abs() / raw.stderr
    ));
    let gap = spectral_gap(&TorusGrid::default())?;
    let dense = spectral_gap_grid(4096);
    let diff = (gap.a - dense).abs();
    let status = Status::from_bool(diff <= 1e-4 && gap.a < 1.0);
    c.checks.push(
        Check::new("spectral_gap_vs_dense_4096", diff, "<= 1e-4 and a < 1", status)
            .with_detail(format!("a = {:.8}, dense {:.8}", gap.a, dense)),
    );
    let rows: Vec<Vec<String>> = (0..bins)
        .map(|i| {
            vec![
                num(edges[i]),
                num(edges[i + 1]),
                observed[i].to_string(),
                num(expected[i]),
            ]
        })
        .collect();
    out.csv(
        "stationary_histogram",
        "stationary sampler against the exact law",
        &["k_lo", "k_hi", "observed", "expected"],
        &rows,
    )?;
    Ok(c)
}

pub fn poisson_parity(cfg: &RunConfig, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(3);
    let grid = TorusGrid::default();
    let pinned = DispersionModel::pinned_nn(cfg.functionals.pinning_mass)?;
    let mut rows = Vec::new();
    for model in [DispersionModel::unpinned_nn(), pinned.clone()] {
        let psi = |k: f64| psi_unchecked(&model, k);
        let hm = grid.integrate(|k| e_minus(k) * psi(k));
        let hp = grid.integrate(|k| e_plus(k) * psi(k));
        let sup = max_abs(
            grid.nodes()
                .iter()
                .map(|&k| (e_plus(k) * hm + e_minus(k) * hp) / frak_r(k)),
        );
        c.checks
            .push(Check::at_most(&format!("p_psi_vanishes_{}", model.label()), sup, 1e-12));
        rows.push(vec![model.label(), "sup_p_psi".into(), num(sup)]);
    }
    let odd = poisson_solve(|k| psi_unchecked(&pinned, k), &grid)?;
    let r_odd = poisson_residual(&odd);
    c.checks
        .push(Check::at_most("poisson_residual_odd", r_odd, 1e-10).with_detail("pinned observable"));
    let even = poisson_solve(|k| e_plus(k) - 25.0 / 18.0, &grid)?;
    let r_even = poisson_residual(&even);
    c.checks
        .push(Check::at_most("poisson_residual_even", r_even, 1e-10).with_detail("e_1 minus its stationary mean"));
    rows.push(vec![pinned.label(), "residual_odd".into(), num(r_odd)]);
    rows.push(vec!["e_1 - 25/18".into(), "residual_even".into(), num(r_even)]);
    out.csv(
        "poisson_parity",
        "parity and Poisson residuals",
        &["observable", "quantity", "value"],
        &rows,
    )?;
    Ok(c)
}

pub fn tail_law(_cfg: &RunConfig, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(4);
    let model = DispersionModel::unpinned_nn();
    let tail = match tail_constant(&model) {
        Ok(t) => t,
        Err(e) => {
            c.checks.push(
                Check::new("tail_ladder_converges", f64::NAN, "spread < 1%", Status::Fail).with_detail(e.to_string()),
            );
            return Ok(c);
        }
    };
    let spread = tail.plus.spread.max(tail.minus.spread);
    c.checks.push(Check::new(
        "tail_ladder_spread",
        spread,
        "< 1e-2",
        Status::from_bool(spread < 1e-2),
    ));
    let sym = (tail.c_star_plus - tail.c_star_minus).abs();
    c.checks.push(Check::at_most("tail_constants_symmetric", sym, 1e-10));
    let ch = stable_c_hat_pipeline(&model)?;
    c.notes.push(format!(
        "tail constant {:.10} (leading order {:.10}, closed form {:.10}, relative gap {:+.3e})",
        tail.c_star_plus,
        tail.asymptotic,
        tail.reference_formula,
        tail.c_star_plus / tail.reference_formula - 1.0
    ));
    c.notes.push(format!(
        "stable constant candidates: pipeline {:.4}, literal theta power {:.4}, closed form {:.4} (pipeline vs closed form {:+.3})",
        ch.pipeline,
        ch.pipeline_literal,
        ch.formula,
        ch.pipeline / ch.formula - 1.0
    ));
    let rows: Vec<Vec<String>> = (0..tail.plus.lambdas.len())
        .map(|i| {
            vec![
                num(tail.plus.lambdas[i]),
                num(tail.plus.scaled[i]),
                num(tail.minus.scaled[i]),
            ]
        })
        .collect();
    out.csv(
        "tail_ladder",
        "lambda^(3/2) pi(+-Psi > lambda)",
        &["lambda", "scaled_plus", "scaled_minus"],
        &rows,
    )?;
    out.json("stable_constant_candidates", &ch)?;
    Ok(c)
}

fn resolved(r: &StableLimitReport) -> Vec<f64> {
    r.per_p
        .iter()
        .filter(|c| c.resolution >= 10.0 && c.value.is_finite())
        .map(|c| c.p)
        .collect()
}

/// Parts (a) to (c) of the stable criterion; (c) is asserted at paper scale.
pub fn stable_charfn(cfg: &RunConfig, model: &DispersionModel, c: &mut Criterion, out: &mut Outputs) -> Result<()> {
    let f = &cfg.functionals;
    let ch = stable_c_hat_pipeline(model)?;
    let id = stream(cfg, "stable-limit");
    let samples = ensemble(id, f.n_paths, |rng| {
        simulate_additive(
            StartMode::Stationary,
            |k| model.omega_prime(k),
            f.n,
            f.t,
            1.5,
            DEFAULT_STEP_CAP,
            rng,
        )
    })?;
    let r = stable_report_from_samples(&samples, f.n, f.t, &f.p_grid_stable, &ch)?;
    c.checks.push(Check::new(
        "charfn_real_imag_z",
        r.max_imag_z,
        "<= 3 stderr",
        Status::from_bool(r.max_imag_z <= 3.0),
    ));
    let ok_p = resolved(&r);
    let sub = if r.c_hat_emp.is_some() {
        Some(r.clone())
    } else if !ok_p.is_empty() {
        Some(stable_report_from_samples(&samples, f.n, f.t, &ok_p, &ch)?)
    } else {
        None
    };
    let resolutions: Vec<String> = r
        .per_p
        .iter()
        .map(|x| format!("p={} {:.1}se", x.p, x.resolution))
        .collect();
    if ok_p.len() >= 2 {
        let s = sub.as_ref().and_then(|s| s.self_consistency).unwrap_or(f64::NAN);
        c.checks.push(
            Check::new(
                "constant_self_consistent_across_p",
                s,
                "<= 0.05",
                Status::from_bool(s <= 0.05),
            )
            .with_detail(format!("resolved p {ok_p:?}")),
        );
    } else {
        c.checks.push(
            Check::new(
                "constant_self_consistent_across_p",
                ok_p.len() as f64,
                "2 or more resolved p",
                Status::Unidentifiable,
            )
            .with_detail(format!("phi below 10 stderr: {}", resolutions.join(", "))),
        );
    }
    let emp = sub.as_ref().and_then(|s| s.c_hat_emp);
    match (emp, cfg.preset) {
        (Some((ce, se)), Preset::Paper) => {
            let dev = (ce / ch.pipeline - 1.0).abs();
            c.checks.push(
                Check::new("constant_matches_pipeline", dev, "<= 0.10", Status::from_bool(dev <= 0.10))
                    .with_detail(format!("empirical {ce:.4} +- {se:.4} vs {:.4}", ch.pipeline)),
            );
        }
        (None, Preset::Paper) => c.checks.push(Check::new(
            "constant_matches_pipeline",
            f64::NAN,
            "a resolved p",
            Status::Unidentifiable,
        )),
        (Some((ce, se)), Preset::Quick) => c.notes.push(format!(
            "empirical constant {ce:.4} +- {se:.4} from p {ok_p:?} (pipeline {:.4}, relative {:+.4}); asserted at paper scale only",
            ch.pipeline,
            ce / ch.pipeline - 1.0
        )),
        (None, Preset::Quick) => c.notes.push("no resolved p; empirical constant not available".into()),
    }
    let supp = stable_report_from_samples(&samples, f.n, f.t, &[0.125, 0.25, 0.5], &ch)?;
    c.notes.push(format!(
        "supplementary grid 0.125, 0.25, 0.5: constant {}, self-consistency {}",
        supp.c_hat_emp
            .map_or("unresolved".into(), |(v, s)| format!("{v:.4} +- {s:.4}")),
        supp.self_consistency.map_or("n/a".into(), |s| format!("{s:.4}"))
    ));
    c.notes.push(format!(
        "stable constant candidates side by side: pipeline {:.4}, literal theta power {:.4}, closed form {:.4}",
        ch.pipeline, ch.pipeline_literal, ch.formula
    ));
    let mut rows = Vec::new();
    for rep in [&r, &supp] {
        for (i, &p) in rep.charfn.p.iter().enumerate() {
            let cp = rep.per_p.iter().find(|x| x.p == p);
            rows.push(vec![
                num(p),
                num(rep.charfn.mean[i].re),
                num(rep.charfn.mean[i].im),
                num(rep.charfn.stderr_re[i]),
                num(rep.charfn.stderr_im[i]),
                num(cp.map_or(f64::NAN, |x| x.value)),
                num(cp.map_or(f64::NAN, |x| x.stderr)),
                num(cp.map_or(f64::NAN, |x| x.resolution)),
            ]);
        }
    }
    out.csv(
        "stable_charfn",
        "empirical characteristic function of the scaled acoustic functional and per-p constants",
        &[
            "p",
            "re",
            "im",
            "stderr_re",
            "stderr_im",
            "c_p",
            "c_p_stderr",
            "resolution",
        ],
        &rows,
    )?;
    Ok(())
}

/// Parts (d) and (e) of the stable criterion.
pub fn stable_rates(cfg: &RunConfig, model: &DispersionModel, c: &mut Criterion, out: &mut Outputs) -> Result<()> {
    let f = &cfg.functionals;
    if f.ladder.is_empty() {
        c.notes.push("rate sweep disabled by an empty ladder".into());
        return Ok(());
    }
    let ch = stable_c_hat_pipeline(model)?;
    let bound = delta_star_stable(1.5, 1.5);
    let s = rate_sweep(
        model,
        Regime::Stable,
        &f.ladder,
        &f.p_grid_stable,
        f.t,
        f.n_paths,
        ch.pipeline,
        bound,
        stream(cfg, "stable-rates"),
        DEFAULT_STEP_CAP,
    )?;
    let ratio = s.errors.last().copied().unwrap_or(f64::NAN) / s.errors[0];
    c.checks.push(
        Check::new(
            "charfn_error_decreases_in_n",
            ratio,
            "nonincreasing within 2 stderr",
            Status::from_bool(s.trend_ok),
        )
        .with_detail(format!("errors {:?}", s.errors)),
    );
    push_slope(c, "rate_slope", &s, 0.05);
    rate_csv(out, "stable_rates", &s)
}

fn push_slope(c: &mut Criterion, name: &str, s: &crate::functionals::RateSweepResult, slack: f64) {
    let tol = format!("<= {:.4}", -s.delta_bound + slack);
    match (s.fit, s.meets_bound(slack)) {
        (Some(fit), Some(ok)) => c.checks.push(
            Check::new(name, fit.slope, tol, Status::from_bool(ok))
                .with_detail(format!("95% interval {:?}", s.slope_interval)),
        ),
        _ => c.checks.push(
            Check::new(name, f64::NAN, tol, Status::Unidentifiable).with_detail(s.note.clone().unwrap_or_default()),
        ),
    }
}

fn rate_csv(out: &mut Outputs, name: &str, s: &crate::functionals::RateSweepResult) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..s.ladder.len())
        .map(|i| {
            vec![
                s.ladder[i].to_string(),
                num(s.errors[i]),
                num(s.stderrs[i]),
                num(s.corrected[i]),
                s.identifiable[i].to_string(),
            ]
        })
        .collect();
    out.csv(
        name,
        "sup-norm characteristic function error along the N ladder",
        &["n", "error", "stderr", "corrected", "identifiable"],
        &rows,
    )
}

pub fn gaussian_charfn(cfg: &RunConfig, model: &DispersionModel, c: &mut Criterion, out: &mut Outputs) -> Result<()> {
    let f = &cfg.functionals;
    let cands = gaussian_c_hats(model, &TorusGrid::default())?;
    let samples = ensemble(stream(cfg, "gaussian-limit"), f.n_paths, |rng| {
        simulate_additive(
            StartMode::Stationary,
            |k| model.omega_prime(k),
            f.n,
            f.t,
            2.0,
            DEFAULT_STEP_CAP,
            rng,
        )
    })?;
    let r = gaussian_report_from_samples(&samples, f.n, f.t, &f.p_grid_gaussian, &cands)?;
    let dev = r.variance_per_t / cands.b - 1.0;
    c.checks.push(
        Check::new(
            "variance_matches_2_theta_bar^-2_sigma^2",
            dev.abs(),
            "<= 0.03",
            Status::from_bool(dev.abs() <= 0.03),
        )
        .with_detail(format!(
            "Var(Y_1) = {:.4} +- {:.4} vs {:.4}; closest candidate: {}",
            r.variance_per_t, r.variance_per_t_stderr, cands.b, r.matched
        )),
    );
    let kz = r.moments.excess_kurtosis.abs() / r.moments.kurtosis_stderr;
    c.checks.push(
        Check::new("excess_kurtosis_z", kz, "<= 3 stderr", Status::from_bool(kz <= 3.0)).with_detail(format!(
            "excess kurtosis {:.6e} +- {:.3e}",
            r.moments.excess_kurtosis, r.moments.kurtosis_stderr
        )),
    );
    for cand in &r.candidates {
        c.notes.push(format!(
            "candidate {:<24} {:>9.4}: relative deviation {:+.4}, charfn distance {:.4}",
            cand.name, cand.variance, cand.relative_deviation, cand.charfn_distance
        ));
    }
    c.notes.push(format!("matched candidate: {}", r.matched));
    let rows: Vec<Vec<String>> = r
        .candidates
        .iter()
        .map(|x| {
            vec![
                x.name.clone(),
                num(x.variance),
                num(x.relative_deviation),
                num(x.charfn_distance),
            ]
        })
        .collect();
    out.csv(
        "gaussian_candidates",
        "measured variance of Y_1 against the candidate constants",
        &["candidate", "variance", "relative_deviation", "charfn_distance"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = (0..r.charfn.len())
        .map(|i| {
            vec![
                num(r.charfn.p[i]),
                num(r.charfn.mean[i].re),
                num(r.charfn.mean[i].im),
                num(r.charfn.stderr_re[i]),
                num(r.charfn.stderr_im[i]),
            ]
        })
        .collect();
    out.csv(
        "gaussian_charfn",
        "empirical characteristic function of the scaled pinned functional",
        &["p", "re", "im", "stderr_re", "stderr_im"],
        &rows,
    )?;
    out.json("gaussian_moments", &r.moments)?;
    Ok(())
}

pub fn gaussian_rates(cfg: &RunConfig, model: &DispersionModel, c: &mut Criterion, out: &mut Outputs) -> Result<()> {
    let f = &cfg.functionals;
    if f.ladder.is_empty() {
        c.notes.push("rate sweep disabled by an empty ladder".into());
        return Ok(());
    }
    let cands = gaussian_c_hats(model, &TorusGrid::default())?;
    let s = rate_sweep(
        model,
        Regime::Gaussian,
        &f.ladder,
        &f.p_grid_gaussian,
        f.t,
        f.n_paths,
        cands.b / 2.0,
        0.25,
        stream(cfg, "gaussian-rates"),
        DEFAULT_STEP_CAP,
    )?;
    push_slope(c, "rate_slope", &s, 0.0);
    rate_csv(out, "gaussian_rates", &s)
}

fn design_w0(k: f64) -> Complex64 {
    Complex64::new(1.0 + e_plus(k), (2.0 * std::f64::consts::PI * k).sin())
}

pub fn kinetic_solver(cfg: &RunConfig, model: &DispersionModel, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(7);
    let kc = &cfg.kinetic;
    let spec = kc.grid();
    let id = stream(cfg, &c.key);
    let ps = [0.0, 0.5, 1.0, 2.0, 4.0];
    let times = [0.5, 1.0];
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut mass_err = 0.0;
    for (pi, &p) in ps.iter().enumerate() {
        let mut field = KineticField::from_fn(model, spec, p, design_w0)?;
        let mass0 = field.mass();
        let k0s: Vec<f64> = [0.1, 0.3]
            .iter()
            .map(|&k| field.nodes()[field.grid.nearest(k)])
            .collect();
        let mut now = 0.0;
        for (ti, &t) in times.iter().enumerate() {
            field = evolve_kinetic(&field, t - now, kc.dt)?;
            now = t;
            for (ki, &k0) in k0s.iter().enumerate() {
                let tag = format!("p{pi}-k{ki}-t{ti}");
                let mc = mc_solution(model, design_w0, p, k0, t, field.scale, kc.mc_paths, id.child(&tag))?;
                let det = field.value_at(k0);
                let z = (det - mc.mean).norm() / mc.stderr();
                worst = worst.max(z);
                rows.push(vec![
                    num(p),
                    num(k0),
                    num(t),
                    num(det.re),
                    num(det.im),
                    num(mc.mean.re),
                    num(mc.mean.im),
                    num(mc.stderr()),
                    num(z),
                ]);
            }
        }
        if p == 0.0 {
            mass_err = (field.mass() - mass0).norm();
        }
    }
    c.checks.push(Check::new(
        "solver_vs_path_representation_z",
        worst,
        "<= 3 stderr at 20 points",
        Status::from_bool(worst <= 3.0),
    ));
    c.checks
        .push(Check::at_most("mass_conserved_at_p_zero", mass_err, 1e-10));
    let f = KineticField::from_fn(model, spec, 2.0, design_w0)?;
    let run = |dt: f64| evolve_kinetic(&f, 1.0, dt);
    let (a, b, d) = (run(0.1)?, run(0.05)?, run(0.025)?);
    let diff =
        |x: &KineticField, y: &KineticField| max_abs(x.values.iter().zip(&y.values).map(|(u, v)| (u - v).norm()));
    let order = (diff(&a, &b) / diff(&b, &d)).log2();
    c.checks.push(Check::new(
        "richardson_order",
        order,
        "in [1.8, 2.2]",
        Status::from_bool((1.8..=2.2).contains(&order)),
    ));
    out.csv(
        "kinetic_design",
        "deterministic solution against the Monte Carlo path representation",
        &["p", "k0", "t", "det_re", "det_im", "mc_re", "mc_im", "mc_stderr", "z"],
        &rows,
    )?;
    let field = evolve_kinetic(&KineticField::from_fn(model, spec, 1.0, design_w0)?, 1.0, kc.dt)?;
    field.write_csv(&out.path("kinetic_field_p1_t1.csv"))?;
    out.adopt_csv(
        "kinetic_field_p1_t1",
        "W(t = 1, p = 1, k) on the solver grid",
        &["k", "re", "im"],
    )?;
    Ok(c)
}

pub fn semigroup(cfg: &RunConfig, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(8);
    let spec = cfg.kinetic.grid();
    let grid = spec.build();
    let mut rows = Vec::new();
    for a in [0.5, 1.0] {
        for (i, (name, f)) in decay_inputs(&grid, a).into_iter().enumerate() {
            let d = semigroup_decay(&f, spec, a, &decay_times(), cfg.kinetic.decay_dt)?;
            let bound = -a + 0.1;
            c.checks.push(
                Check::new(
                    &format!("l1_decay_slope_a{a}_input{}", i + 1),
                    d.fit.slope,
                    format!("<= {bound}"),
                    Status::from_bool(d.fit.slope <= bound),
                )
                .with_detail(format!("{name}; 95% interval {:?}", d.fit.slope_interval(0.95))),
            );
            c.notes.push(format!(
                "a = {a}, {name}: nonincreasing {}, weighted norm bounded {}, B_a norm {:.4}",
                d.nonincreasing, d.bounded, d.ba_norm
            ));
            for (t, (l1, w)) in d.times.iter().zip(d.l1.iter().zip(&d.weighted)) {
                rows.push(vec![num(a), (i + 1).to_string(), num(*t), num(*l1), num(*w)]);
            }
        }
    }
    let lambdas = [
        Complex64::new(0.05, 0.0),
        Complex64::new(1e-4, 0.0),
        Complex64::new(0.3, 0.4),
        Complex64::new(0.5, 2.0),
        Complex64::new(2.0, -1.0),
        Complex64::new(3.0, -1.0),
    ];
    let mut defect: f64 = 0.0;
    for &l in &lambdas {
        defect = defect.max(resolvent_system(l, &grid)?.identity_defect());
    }
    c.checks
        .push(Check::at_most("resolvent_delta_equals_lambda_d", defect, 1e-10));
    let r0 = resolvent_system(Complex64::new(0.0, 0.0), &grid)?;
    let sym = (r0.a + r0.a_plus).norm().max((r0.a + r0.a_minus).norm());
    c.checks
        .push(Check::at_most("resolvent_a0_equals_minus_a_pm", sym, 1e-10));
    c.notes.push(format!(
        "a(0) = {:.12}, closed form 3 sqrt 3 - 9/2 = {:.12}",
        r0.a.re,
        3.0 * 3f64.sqrt() - 4.5
    ));
    out.csv(
        "semigroup_decay",
        "L1 norm of Q_t f for mean-zero inputs",
        &["a", "input", "t", "l1", "weighted"],
        &rows,
    )?;
    Ok(c)
}

pub fn lattice_conservation(cfg: &RunConfig, model: &DispersionModel, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(9);
    let lc = &cfg.lattice;
    let id = stream(cfg, &c.key);
    let mut ens = init_ensemble(
        model,
        PacketSpec::centred(lc.l, lc.eps),
        lc.l,
        lc.eps,
        1,
        id.child("state"),
    )?;
    let m = &mut ens.members[0];
    let led = conservation_run(&ens.dynamics, &mut m.state, lc.h, lc.conservation_steps, &mut m.rng)?;
    c.checks.push(
        Check::at_most("energy_drift_relative", led.energy_drift(), 1e-10).with_detail(format!(
            "L = {}, eps = {}, h = {}, {} steps",
            lc.l, lc.eps, lc.h, led.steps
        )),
    );
    if model.is_pinned() {
        c.notes
            .push("momentum is not conserved with pinning; drift reported only".into());
    } else {
        c.checks
            .push(Check::at_most("momentum_drift_relative", led.momentum_drift(), 1e-12));
    }
    let small = LatticeDynamics::new(model, 16, lc.eps)?;
    let mut r = id.child("frozen").rng(0);
    let s0 = LatticeState {
        p: (0..16).map(|_| r.gen_range(-1.0..1.0)).collect(),
        q: (0..16).map(|_| r.gen_range(-1.0..1.0)).collect(),
        clock: 0.0,
    };
    let drift = noise_drift_check(&small, &s0, 0.01, lc.drift_draws, id.child("drift"));
    c.checks.push(
        Check::new(
            "noise_drift_excess",
            drift.worst_excess(),
            format!("<= {:.3e}", drift.bias_allowance),
            Status::from_bool(drift.passes()),
        )
        .with_detail(format!(
            "max over sites of |mean - drift| - 4 stderr; L = 16, h = 0.01, {} draws",
            drift.draws
        )),
    );
    let rows = vec![
        vec![
            "energy".into(),
            num(led.energy_start),
            num(led.energy_end),
            num(led.energy_drift()),
        ],
        vec![
            "momentum".into(),
            num(led.momentum_start),
            num(led.momentum_end),
            num(led.momentum_drift()),
        ],
    ];
    out.csv(
        "conservation",
        "conserved quantities over the run; momentum drift relative to sum |p|",
        &["quantity", "start", "end", "drift"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = (0..16)
        .map(|y| {
            vec![
                y.to_string(),
                num(drift.predicted[y]),
                num(drift.measured[y]),
                num(drift.stderr[y]),
            ]
        })
        .collect();
    out.csv(
        "noise_drift",
        "mean momentum increment of one noise step against -(eps/2) beta * p h",
        &["site", "predicted", "measured", "stderr"],
        &rows,
    )?;
    Ok(c)
}

fn comparison_rows(eps: f64, rows: &[ComparisonRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                num(eps),
                num(r.t),
                r.test.clone(),
                num(r.lattice.re),
                num(r.lattice.im),
                num(r.lattice_stderr),
                num(r.kinetic.re),
                num(r.kinetic.im),
                num(r.norm),
                num(r.discrepancy()),
                num(0.1 * r.norm + 3.0 * r.lattice_stderr),
            ]
        })
        .collect()
}

pub fn kinetic_limit(cfg: &RunConfig, model: &DispersionModel, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(10);
    let lc = &cfg.lattice;
    let mut csv_rows = Vec::new();
    let mut worst = Vec::new();
    let mut epss = vec![lc.eps];
    if lc.eps_trend > 0.0 {
        epss.push(lc.eps_trend);
    }
    for &eps in &epss {
        let spec = ComparisonSpec {
            l: lc.l,
            eps,
            members: lc.members,
            times: lc.times.clone(),
            h: lc.h,
            kinetic_dt: lc.kinetic_dt,
            grid: GridSpec::kinetic_default(),
            p_max: lc.p_max,
            scale: lc.scale,
        };
        let packet = PacketSpec::centred(lc.l, eps);
        let tests = TestFunction::standard(&packet);
        let rows = kinetic_comparison(
            model,
            &spec,
            packet,
            &tests,
            stream(cfg, &format!("kinetic-limit-{eps}")),
        )?;
        let bad: Vec<String> = rows
            .iter()
            .filter(|r| !r.within(0.1, 3.0))
            .map(|r| format!("t={} {}", r.t, r.test))
            .collect();
        let excess = rows
            .iter()
            .map(|r| r.discrepancy() - (0.1 * r.norm + 3.0 * r.lattice_stderr))
            .fold(f64::NEG_INFINITY, f64::max);
        c.checks.push(
            Check::new(
                &format!("pairing_within_bound_eps{eps}"),
                excess,
                "<= 0 (0.1 |J| + 3 stderr)",
                Status::from_bool(bad.is_empty()),
            )
            .with_detail(if bad.is_empty() {
                format!("{} pairings, L = {}, M = {}", rows.len(), lc.l, lc.members)
            } else {
                format!("outside: {}", bad.join(", "))
            }),
        );
        let top = rows
            .iter()
            .max_by(|a, b| a.discrepancy().total_cmp(&b.discrepancy()))
            .expect("nonempty comparison");
        worst.push((top.discrepancy(), top.lattice_stderr));
        csv_rows.extend(comparison_rows(eps, &rows));
    }
    if worst.len() == 2 {
        let ((d1, s1), (d2, s2)) = (worst[0], worst[1]);
        let status = if d1 <= 3.0 * s1 {
            Status::Unidentifiable
        } else {
            Status::from_bool(d2 < d1)
        };
        c.checks.push(
            Check::new(
                "discrepancy_decreases_with_eps",
                d2 / d1,
                "< 1 when the first exceeds 3 stderr",
                status,
            )
            .with_detail(format!(
                "max discrepancy {d1:.4e} +- {s1:.1e} then {d2:.4e} +- {s2:.1e}"
            )),
        );
    }
    out.csv(
        "kinetic_limit",
        "lattice Wigner pairings against the kinetic solution",
        &[
            "eps",
            "t",
            "test",
            "lattice_re",
            "lattice_im",
            "lattice_stderr",
            "kinetic_re",
            "kinetic_im",
            "norm",
            "discrepancy",
            "bound",
        ],
        &csv_rows,
    )?;
    Ok(c)
}

pub fn tail_probability(cfg: &RunConfig, model: &DispersionModel, out: &mut Outputs) -> Result<Criterion> {
    let mut c = empty(11);
    let f = &cfg.functionals;
    let id = stream(cfg, &c.key);
    let points = f
        .tail_ladder
        .iter()
        .map(|&n| tail_probability_check(model, n, f.t, f.kappa, f.tail_paths, id.child(&n.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                num(p.threshold),
                p.hits.to_string(),
                p.n_paths.to_string(),
                num(p.frequency),
                num(p.interval.0),
                num(p.interval.1),
            ]
        })
        .collect();
    out.csv(
        "tail_probability",
        "frequency of |Z_t| >= N^kappa with 95% Wilson intervals",
        &["n", "threshold", "hits", "paths", "frequency", "lo", "hi"],
        &rows,
    )?;
    match fit_tail_probability(&points) {
        Ok(fit) => {
            c.checks.push(
                Check::new(
                    "delta_positive_95",
                    fit.delta_interval.0,
                    "> 0",
                    Status::from_bool(fit.delta_positive),
                )
                .with_detail(format!("delta = {:.4}, interval {:?}", fit.delta, fit.delta_interval)),
            );
            c.checks.push(Check::new(
                "fitted_bound_holds",
                fit.c,
                "every rung under C (t + 1) / N^delta",
                Status::from_bool(fit.bound_holds),
            ));
            c.notes
                .push(format!("frequencies nonincreasing in N: {}", fit.nonincreasing));
        }
        Err(e) => c
            .checks
            .push(Check::new("delta_positive_95", f64::NAN, "> 0", Status::Unidentifiable).with_detail(e.to_string())),
    }
    Ok(c)
}
