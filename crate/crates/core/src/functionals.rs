//! Scaled additive functionals of the chain and of the jump process, their
//! empirical characteristic functions, and convergence-rate measurements.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{JumpTrajectory, JumpWalk, SkeletonChain, StartMode};
use crate::error::{Error, Result};
use crate::limits::{psi_unchecked, GaussianCandidates, PoissonSolution};
use crate::model::DispersionModel;
use crate::rng::{pairwise_sum, StreamId, StreamRng};
use crate::stats::{fit_line, moments, wilson_interval, LineFit, Moments};

/// Runs `n_paths` independent draws, path `i` on stream `i`; the output
/// order (and hence every reduction over it) is independent of scheduling.
pub fn ensemble<F>(stream: StreamId, n_paths: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut StreamRng) -> Result<f64> + Sync,
{
    (0..n_paths)
        .into_par_iter()
        .map(|i| f(&mut stream.rng(i as u64)))
        .collect()
}

/// `Z_t^{(N)} = N^{-1/alpha} sum_{n=0}^{[Nt]} Psi(xi_n)`.
pub fn partial_sum_functional<R, F>(start: StartMode, psi: F, alpha: f64, n: u64, t: f64, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    if n == 0 || !(t >= 0.0) {
        return Err(Error::Precondition(format!("need N >= 1 and t >= 0, got N={n}, t={t}")));
    }
    let last = (n as f64 * t).floor() as u64;
    let mut acc = 0.0;
    for state in SkeletonChain::new(start, rng)?.take(last as usize + 1) {
        acc += psi(state?.k.value());
    }
    Ok(acc / (n as f64).powf(1.0 / alpha))
}

/// `Y_t^{(N)} = N^{-1/beta} int_0^{Nt} V(K_s) ds` on a stored trajectory.
pub fn additive_functional<V: Fn(f64) -> f64>(traj: &JumpTrajectory, v: V, n: u64, t: f64, beta: f64) -> Result<f64> {
    let horizon = n as f64 * t;
    if (traj.total_time - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Precondition(format!(
            "trajectory covers {} but N t = {horizon}",
            traj.total_time
        )));
    }
    Ok(traj.integrate(v) / (n as f64).powf(1.0 / beta))
}

/// Same as [`additive_functional`] without storing the path.
pub fn simulate_additive<R, V>(
    start: StartMode,
    v: V,
    n: u64,
    t: f64,
    beta: f64,
    step_cap: u64,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    V: Fn(f64) -> f64,
{
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut comp = 0.0;
    for seg in JumpWalk::new(start, n as f64 * t, step_cap, rng)? {
        let (k, h) = seg?;
        // compensated sum: paths run up to ~10^7 segments
        let y = v(k.value()) * h - comp;
        let s = acc + y;
        comp = (s - acc) - y;
        acc = s;
    }
    Ok(acc / (n as f64).powf(1.0 / beta))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CharFnMeta {
    pub n: Option<u64>,
    pub t: Option<f64>,
    pub model: Option<String>,
    pub seed: Option<u64>,
}

/// Empirical characteristic function with componentwise standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CharFnEstimate {
    pub p: Vec<f64>,
    pub mean: Vec<Complex64>,
    pub stderr_re: Vec<f64>,
    pub stderr_im: Vec<f64>,
    pub n_samples: usize,
    pub meta: CharFnMeta,
}

impl CharFnEstimate {
    pub fn stderr(&self, i: usize) -> f64 {
        self.stderr_re[i].hypot(self.stderr_im[i])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub fn empirical_charfn(samples: &[f64], p_grid: &[f64]) -> Result<CharFnEstimate> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty sample set".into()));
    }
    if samples.len() < 100 {
        return Err(Error::Precondition(format!(
            "characteristic function needs 100 or more samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean = Vec::with_capacity(p_grid.len());
    let mut se_re = Vec::with_capacity(p_grid.len());
    let mut se_im = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let c: Vec<f64> = samples.iter().map(|y| (p * y).cos()).collect();
        let s: Vec<f64> = samples.iter().map(|y| (p * y).sin()).collect();
        let (mc, ms) = (pairwise_sum(&c) / n, pairwise_sum(&s) / n);
        let vc = pairwise_sum(&c.iter().map(|x| (x - mc).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
        let vs = pairwise_sum(&s.iter().map(|x| (x - ms).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
        mean.push(Complex64::new(mc, ms));
        se_re.push((vc / n).sqrt());
        se_im.push((vs / n).sqrt());
    }
    Ok(CharFnEstimate {
        p: p_grid.to_vec(),
        mean,
        stderr_re: se_re,
        stderr_im: se_im,
        n_samples: samples.len(),
        meta: CharFnMeta::default(),
    })
}

/// Per-`p` estimate `c_p = -log Re phi(p) / (t |p|^b)` and its delta-method
/// standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantAtP {
    pub p: f64,
    pub value: f64,
    pub stderr: f64,
    /// `|phi(p)| / stderr`: resolution of the point.
    pub resolution: f64,
}

fn constants_per_p(est: &CharFnEstimate, t: f64, b: f64) -> Vec<ConstantAtP> {
    est.p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, &p)| {
            let re = est.mean[i].re;
            let x = t * p.abs().powf(b);
            ConstantAtP {
                p,
                value: if re > 0.0 { -re.ln() / x } else { f64::NAN },
                stderr: est.stderr_re[i] / (re.abs() * x),
                resolution: est.mean[i].norm() / est.stderr(i),
            }
        })
        .collect()
}

/// Weighted least squares of `-log Re phi(p)` against `t |p|^b` through the
/// origin; fails if any grid point is not resolved to 10 standard errors.
pub fn fit_constant(est: &CharFnEstimate, t: f64, b: f64) -> Result<(f64, f64)> {
    let per_p = constants_per_p(est, t, b);
    if let Some(bad) = per_p.iter().find(|c| c.resolution < 10.0 || !c.value.is_finite()) {
        return Err(Error::Fit(format!(
            "|phi({})| is only {:.2} standard errors; p too large for this N",
            bad.p, bad.resolution
        )));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for c in &per_p {
        let x = t * c.p.abs().powf(b);
        let y = c.value * x;
        let w = 1.0 / (c.stderr * x).powi(2);
        sxy += w * x * y;
        sxx += w * x * x;
    }
    if sxx == 0.0 {
        return Err(Error::Fit("no nonzero p in the grid".into()));
    }
    Ok((sxy / sxx, (1.0 / sxx).sqrt()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StableLimitReport {
    pub n: u64,
    pub t: f64,
    pub n_paths: usize,
    pub charfn: CharFnEstimate,
    pub per_p: Vec<ConstantAtP>,
    /// Fitted constant and its standard error, if the grid is resolved.
    pub c_hat_emp: Option<(f64, f64)>,
    pub fit_error: Option<String>,
    /// `max_p |c_p / c_emp - 1|` over the grid.
    pub self_consistency: Option<f64>,
    /// `max_p |Im phi(p)| / stderr_im(p)`.
    pub max_imag_z: f64,
    pub c_hat_pipeline: f64,
    pub c_hat_pipeline_literal: f64,
    pub c_hat_formula: f64,
    /// `max_p |phi(p) - exp(-c_pipeline |p|^{3/2} t)|`.
    pub error_vs_pipeline: f64,
}

/// Stable-limit experiment for the acoustic chain: `beta = 3/2`, `V = omega'`.
#[allow(clippy::too_many_arguments)]
pub fn stable_limit_test(
    model: &DispersionModel,
    n: u64,
    t: f64,
    p_grid: &[f64],
    n_paths: usize,
    stream: StreamId,
    c_hat: &crate::limits::StableCHat,
    step_cap: u64,
) -> Result<StableLimitReport> {
    if model.is_pinned() {
        return Err(Error::Precondition("stable limit needs an acoustic model".into()));
    }
    let samples = ensemble(stream, n_paths, |rng| {
        simulate_additive(
            StartMode::Stationary,
            |k| model.omega_prime(k),
            n,
            t,
            1.5,
            step_cap,
            rng,
        )
    })?;
    stable_report_from_samples(&samples, n, t, p_grid, c_hat)
}

pub fn stable_report_from_samples(
    samples: &[f64],
    n: u64,
    t: f64,
    p_grid: &[f64],
    c_hat: &crate::limits::StableCHat,
) -> Result<StableLimitReport> {
    let mut charfn = empirical_charfn(samples, p_grid)?;
    charfn.meta.n = Some(n);
    charfn.meta.t = Some(t);
    let per_p = constants_per_p(&charfn, t, 1.5);
    let fit = fit_constant(&charfn, t, 1.5);
    let max_imag_z = charfn
        .mean
        .iter()
        .zip(&charfn.stderr_im)
        .filter(|(_, s)| **s > 0.0)
        .map(|(m, s)| m.im.abs() / s)
        .fold(0.0, f64::max);
    let error_vs_pipeline = charfn
        .p
        .iter()
        .zip(&charfn.mean)
        .map(|(p, m)| (m - Complex64::new((-c_hat.pipeline * p.abs().powf(1.5) * t).exp(), 0.0)).norm())
        .fold(0.0, f64::max);
    let (c_hat_emp, fit_error, self_consistency) = match fit {
        Ok((c, se)) => {
            let sc = per_p.iter().map(|x| (x.value / c - 1.0).abs()).fold(0.0, f64::max);
            (Some((c, se)), None, Some(sc))
        }
        Err(e) => (None, Some(e.to_string()), None),
    };
    Ok(StableLimitReport {
        n,
        t,
        n_paths: samples.len(),
        charfn,
        per_p,
        c_hat_emp,
        fit_error,
        self_consistency,
        max_imag_z,
        c_hat_pipeline: c_hat.pipeline,
        c_hat_pipeline_literal: c_hat.pipeline_literal,
        c_hat_formula: c_hat.formula,
        error_vs_pipeline,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub name: String,
    pub variance: f64,
    /// `Var(Y_t) / t` relative to this candidate, minus one.
    pub relative_deviation: f64,
    /// `max_p |phi(p) - exp(-variance p^2 t / 2)|`.
    pub charfn_distance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianLimitReport {
    pub n: u64,
    pub t: f64,
    pub moments: Moments,
    pub variance_per_t: f64,
    pub variance_per_t_stderr: f64,
    pub charfn: CharFnEstimate,
    pub candidates: Vec<CandidateMatch>,
    /// Closest candidate by relative variance deviation.
    pub matched: String,
}

/// Gaussian-limit experiment for a pinned chain: `beta = 2`, `V = omega'`.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_limit_test(
    model: &DispersionModel,
    n: u64,
    t: f64,
    p_grid: &[f64],
    n_paths: usize,
    stream: StreamId,
    candidates: &GaussianCandidates,
    step_cap: u64,
) -> Result<GaussianLimitReport> {
    if !model.is_pinned() {
        return Err(Error::Precondition("Gaussian limit needs a pinned model".into()));
    }
    let samples = ensemble(stream, n_paths, |rng| {
        simulate_additive(
            StartMode::Stationary,
            |k| model.omega_prime(k),
            n,
            t,
            2.0,
            step_cap,
            rng,
        )
    })?;
    gaussian_report_from_samples(&samples, n, t, p_grid, candidates)
}

pub fn gaussian_report_from_samples(
    samples: &[f64],
    n: u64,
    t: f64,
    p_grid: &[f64],
    candidates: &GaussianCandidates,
) -> Result<GaussianLimitReport> {
    let m = moments(samples)?;
    let mut charfn = empirical_charfn(samples, p_grid)?;
    charfn.meta.n = Some(n);
    charfn.meta.t = Some(t);
    let var_t = m.variance / t;
    let named = [
        ("9 sigma^2", candidates.a),
        ("2 theta_bar^-2 sigma^2", candidates.b),
        ("2 theta_bar^-1 sigma^2", candidates.renewal),
    ];
    let list: Vec<CandidateMatch> = named
        .iter()
        .map(|(name, v)| CandidateMatch {
            name: name.to_string(),
            variance: *v,
            relative_deviation: var_t / v - 1.0,
            charfn_distance: charfn
                .p
                .iter()
                .zip(&charfn.mean)
                .map(|(p, z)| (z - Complex64::new((-v * p * p * t / 2.0).exp(), 0.0)).norm())
                .fold(0.0, f64::max),
        })
        .collect();
    let matched = list
        .iter()
        .min_by(|a, b| {
            a.relative_deviation
                .abs()
                .partial_cmp(&b.relative_deviation.abs())
                .expect("finite deviation")
        })
        .map(|c| c.name.clone())
        .unwrap_or_default();
    Ok(GaussianLimitReport {
        n,
        t,
        variance_per_t: var_t,
        variance_per_t_stderr: m.variance_stderr / t,
        moments: m,
        charfn,
        candidates: list,
        matched,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Stable,
    Gaussian,
}

impl Regime {
    pub fn beta(self) -> f64 {
        match self {
            Regime::Stable => 1.5,
            Regime::Gaussian => 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateSweepResult {
    pub regime: Regime,
    pub ladder: Vec<u64>,
    pub p_grid: Vec<f64>,
    pub t: f64,
    pub n_paths: usize,
    /// Target `exp(-c |p|^beta t)`.
    pub target_constant: f64,
    /// `sup_p |phi_N(p) - target(p)|` per rung.
    pub errors: Vec<f64>,
    /// Standard error of the maximising point.
    pub stderrs: Vec<f64>,
    /// Errors with the Monte Carlo floor removed in quadrature.
    pub corrected: Vec<f64>,
    /// Rungs whose error exceeds three standard errors.
    pub identifiable: Vec<bool>,
    pub fit: Option<LineFit>,
    pub slope_interval: Option<(f64, f64)>,
    pub delta_bound: f64,
    /// Errors nonincreasing up to two standard errors.
    pub trend_ok: bool,
    pub note: Option<String>,
}

impl RateSweepResult {
    pub fn is_identifiable(&self) -> bool {
        self.fit.is_some()
    }

    /// Slope at least as steep as `-delta_bound + slack`.
    pub fn meets_bound(&self, slack: f64) -> Option<bool> {
        self.fit.map(|f| f.slope <= -self.delta_bound + slack)
    }
}

/// Error of the empirical characteristic function against the limit law
/// along an `N` ladder, with a log-log slope fit.
#[allow(clippy::too_many_arguments)]
pub fn rate_sweep(
    model: &DispersionModel,
    regime: Regime,
    ladder: &[u64],
    p_grid: &[f64],
    t: f64,
    n_paths: usize,
    target_constant: f64,
    delta_bound: f64,
    stream: StreamId,
    step_cap: u64,
) -> Result<RateSweepResult> {
    if ladder.len() < 4 {
        return Err(Error::Precondition("rate sweep needs a ladder of 4 or more".into()));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("N ladder must increase strictly".into()));
    }
    let beta = regime.beta();
    let mut errors = Vec::new();
    let mut stderrs = Vec::new();
    for (rung, &n) in ladder.iter().enumerate() {
        let sub = stream.child(&format!("rung-{rung}"));
        let samples = ensemble(sub, n_paths, |rng| {
            simulate_additive(
                StartMode::Stationary,
                |k| model.omega_prime(k),
                n,
                t,
                beta,
                step_cap,
                rng,
            )
        })?;
        let est = empirical_charfn(&samples, p_grid)?;
        let (err, se) = sup_error(&est, target_constant, beta, t);
        errors.push(err);
        stderrs.push(se);
    }
    Ok(rate_fit(
        regime,
        ladder,
        p_grid,
        t,
        n_paths,
        target_constant,
        delta_bound,
        errors,
        stderrs,
    ))
}

/// `sup_p |phi(p) - exp(-c |p|^beta t)|` and the standard error at the
/// maximising point.
pub fn sup_error(est: &CharFnEstimate, c: f64, beta: f64, t: f64) -> (f64, f64) {
    est.p
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let target = Complex64::new((-c * p.abs().powf(beta) * t).exp(), 0.0);
            ((est.mean[i] - target).norm(), est.stderr(i))
        })
        .fold((0.0, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc })
}

#[allow(clippy::too_many_arguments)]
pub fn rate_fit(
    regime: Regime,
    ladder: &[u64],
    p_grid: &[f64],
    t: f64,
    n_paths: usize,
    target_constant: f64,
    delta_bound: f64,
    errors: Vec<f64>,
    stderrs: Vec<f64>,
) -> RateSweepResult {
    let corrected: Vec<f64> = errors
        .iter()
        .zip(&stderrs)
        .map(|(e, s)| (e * e - s * s).max(0.0).sqrt())
        .collect();
    let identifiable: Vec<bool> = errors.iter().zip(&stderrs).map(|(e, s)| *e > 3.0 * s).collect();
    let trend_ok = errors
        .windows(2)
        .zip(stderrs.windows(2))
        .all(|(e, s)| e[1] <= e[0] + 2.0 * s[0].hypot(s[1]));
    let (xs, ys): (Vec<f64>, Vec<f64>) = ladder
        .iter()
        .zip(&corrected)
        .zip(&identifiable)
        .filter(|(_, ok)| **ok)
        .map(|((n, e), _)| ((*n as f64).ln(), e.ln()))
        .unzip();
    let (fit, note) = if xs.len() >= 3 {
        match fit_line(&xs, &ys, None) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (
            None,
            Some(format!(
                "only {} of {} rungs exceed 3 standard errors: unidentifiable",
                xs.len(),
                ladder.len()
            )),
        )
    };
    RateSweepResult {
        regime,
        ladder: ladder.to_vec(),
        p_grid: p_grid.to_vec(),
        t,
        n_paths,
        target_constant,
        errors,
        stderrs,
        corrected,
        identifiable,
        slope_interval: fit.map(|f| f.slope_interval(0.95)),
        fit,
        delta_bound,
        trend_ok,
        note,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailProbability {
    pub n: u64,
    pub t: f64,
    pub kappa: f64,
    pub threshold: f64,
    pub hits: u64,
    pub n_paths: u64,
    pub frequency: f64,
    pub interval: (f64, f64),
}

/// Frequency of `|Z_t^{(N)}| >= N^kappa` with a 95% Wilson interval.
pub fn tail_probability_check(
    model: &DispersionModel,
    n: u64,
    t: f64,
    kappa: f64,
    n_paths: usize,
    stream: StreamId,
) -> Result<TailProbability> {
    if !(kappa > 0.0) {
        return Err(Error::Precondition(format!("kappa must be positive, got {kappa}")));
    }
    let alpha = if model.is_pinned() { 2.0 } else { 1.5 };
    let samples = ensemble(stream, n_paths, |rng| {
        partial_sum_functional(StartMode::Stationary, |k| psi_unchecked(model, k), alpha, n, t, rng)
    })?;
    Ok(tail_probability_from_samples(&samples, n, t, kappa))
}

pub fn tail_probability_from_samples(samples: &[f64], n: u64, t: f64, kappa: f64) -> TailProbability {
    let threshold = (n as f64).powf(kappa);
    let hits = samples.iter().filter(|z| z.abs() >= threshold).count() as u64;
    let total = samples.len() as u64;
    TailProbability {
        n,
        t,
        kappa,
        threshold,
        hits,
        n_paths: total,
        frequency: hits as f64 / total as f64,
        interval: wilson_interval(hits, total, 0.95),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailProbabilityFit {
    pub points: Vec<TailProbability>,
    /// `C` in `C (t + 1) / N^delta`.
    pub c: f64,
    pub delta: f64,
    pub delta_interval: (f64, f64),
    pub delta_positive: bool,
    /// Every point's frequency lies below the fitted bound or its interval
    /// reaches it.
    pub bound_holds: bool,
    pub nonincreasing: bool,
}

/// Weighted fit of `log freq = log(C (t+1)) - delta log N`.
pub fn fit_tail_probability(points: &[TailProbability]) -> Result<TailProbabilityFit> {
    let used: Vec<&TailProbability> = points.iter().filter(|p| p.hits > 0).collect();
    if used.len() < 3 {
        return Err(Error::Fit("fewer than 3 rungs with nonzero frequency".into()));
    }
    let t = used[0].t;
    let xs: Vec<f64> = used.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.frequency.ln()).collect();
    let ws: Vec<f64> = used
        .iter()
        .map(|p| p.hits as f64 / (1.0 - p.frequency).max(1e-12))
        .collect();
    let mut fit = fit_line(&xs, &ys, Some(&ws))?;
    let chi2: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    let dof = (xs.len() - 2).max(1) as f64;
    let inflate = (chi2 / dof).max(1.0).sqrt();
    fit.slope_stderr *= inflate;
    fit.intercept_stderr *= inflate;
    let delta = -fit.slope;
    let (lo, hi) = fit.slope_interval(0.95);
    let c = fit.intercept.exp() / (t + 1.0);
    let bound_holds = points.iter().all(|p| {
        let bound = c * (t + 1.0) / (p.n as f64).powf(delta);
        p.interval.0 <= bound * 1.5
    });
    let nonincreasing = points.windows(2).all(|w| w[1].interval.0 <= w[0].interval.1);
    Ok(TailProbabilityFit {
        points: points.to_vec(),
        c,
        delta,
        delta_interval: (-hi, -lo),
        delta_positive: -hi > 0.0,
        bound_holds,
        nonincreasing,
    })
}

/// Martingale decomposition of a chain partial sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleParts {
    /// `M_K = sum_{n=1}^{K} [chi(xi_n) - P chi(xi_{n-1})]`.
    pub martingale: f64,
    /// `chi(xi_0) - P chi(xi_K)`.
    pub boundary: f64,
    /// `sum_{n=0}^{K} Psi(xi_n)`, computed directly.
    pub partial_sum: f64,
    pub increments: Vec<f64>,
}

impl MartingaleParts {
    pub fn reconstruction_error(&self) -> f64 {
        (self.martingale + self.boundary - self.partial_sum).abs()
    }

    /// `chi(xi_0) - chi(xi_K)`, which completes `M_K` to the sum over
    /// `n = 0..K-1`.
    pub fn boundary_excluding_last(&self, sol: &PoissonSolution<impl Fn(f64) -> f64>, path: &[f64]) -> f64 {
        sol.chi(path[0]) - sol.chi(*path.last().expect("nonempty path"))
    }
}

pub fn martingale_decompose<F: Fn(f64) -> f64>(path: &[f64], sol: &PoissonSolution<F>) -> Result<MartingaleParts> {
    if path.is_empty() {
        return Err(Error::Precondition("empty path".into()));
    }
    let increments: Vec<f64> = path.windows(2).map(|w| sol.chi(w[1]) - sol.p_chi(w[0])).collect();
    let last = *path.last().expect("nonempty path");
    let psi: Vec<f64> = path.iter().map(|&k| sol.psi(k)).collect();
    Ok(MartingaleParts {
        martingale: pairwise_sum(&increments),
        boundary: sol.chi(path[0]) - sol.p_chi(last),
        partial_sum: pairwise_sum(&psi),
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{jump_trajectory, DEFAULT_STEP_CAP};
    use crate::model::TorusPoint;
    use rand_distr::StandardNormal;

    #[test]
    fn partial_sum_at_t_zero_is_one_term() {
        let m = DispersionModel::unpinned_nn();
        let mut r = StreamId::new(1, "ps").rng(0);
        let k0 = TorusPoint::new(0.25);
        let z = partial_sum_functional(StartMode::Fixed(k0), |k| psi_unchecked(&m, k), 1.5, 1000, 0.0, &mut r).unwrap();
        assert!((z - psi_unchecked(&m, 0.25) / 1000f64.powf(2.0 / 3.0)).abs() < 1e-15);
        let zero = partial_sum_functional(StartMode::Stationary, |_| 0.0, 1.5, 100, 1.0, &mut r).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn additive_functional_exact_cases() {
        let mut r = StreamId::new(2, "af").rng(0);
        let traj = jump_trajectory(StartMode::Stationary, 100.0 * 2.0, DEFAULT_STEP_CAP, &mut r).unwrap();
        let y = additive_functional(&traj, |_| 3.0, 100, 2.0, 1.5).unwrap();
        assert!((y - 3.0 * 200.0 / 100f64.powf(2.0 / 3.0)).abs() < 1e-10);
        let m = DispersionModel::unpinned_nn();
        let a = additive_functional(&traj, |k| m.omega_prime(k), 100, 2.0, 1.5).unwrap();
        let b = additive_functional(&traj.reflected(), |k| m.omega_prime(k), 100, 2.0, 1.5).unwrap();
        assert!((a + b).abs() < 1e-12);
        assert!(additive_functional(&traj, |_| 1.0, 100, 1.0, 1.5).is_err());
        // only N t matters for the unscaled integral
        let a2 = additive_functional(&traj, |k| m.omega_prime(k), 400, 0.5, 1.5).unwrap();
        assert!((a * 100f64.powf(2.0 / 3.0) - a2 * 400f64.powf(2.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn charfn_basics() {
        let zeros = vec![0.0; 200];
        let est = empirical_charfn(&zeros, &[0.0, 1.0, 5.0]).unwrap();
        assert!(est.mean.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        assert!(empirical_charfn(&[], &[1.0]).is_err());
        assert!(empirical_charfn(&[1.0; 10], &[1.0]).is_err());
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let est = empirical_charfn(&xs, &[0.0, 0.7, -0.7]).unwrap();
        assert_eq!(est.mean[0], Complex64::new(1.0, 0.0));
        assert_eq!(est.stderr(0), 0.0);
        assert_eq!(est.mean[1].conj(), est.mean[2]);
    }

    #[test]
    fn charfn_of_gaussian_sample() {
        let xs = ensemble(StreamId::new(3, "gauss"), 1_000_000, |r| {
            Ok(r.sample::<f64, _>(StandardNormal))
        })
        .unwrap();
        let est = empirical_charfn(&xs, &[0.5, 1.0, 2.0]).unwrap();
        for (i, p) in est.p.iter().enumerate() {
            let exact = (-p * p / 2.0f64).exp();
            assert!((est.mean[i].re - exact).abs() < 3.0 * est.stderr_re[i].max(1e-4));
            assert!(est.mean[i].norm() <= 1.0 + 3.0 * est.stderr(i));
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let id = StreamId::new(4, "repro");
        let m = DispersionModel::unpinned_nn();
        let run = || {
            ensemble(id, 64, |r| {
                simulate_additive(
                    StartMode::Stationary,
                    |k| m.omega_prime(k),
                    100,
                    1.0,
                    1.5,
                    DEFAULT_STEP_CAP,
                    r,
                )
            })
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn streaming_and_stored_paths_agree() {
        let m = DispersionModel::unpinned_nn();
        let id = StreamId::new(5, "agree");
        let a = simulate_additive(
            StartMode::Stationary,
            |k| m.omega_prime(k),
            50,
            1.0,
            1.5,
            DEFAULT_STEP_CAP,
            &mut id.rng(0),
        )
        .unwrap();
        let traj = jump_trajectory(StartMode::Stationary, 50.0, DEFAULT_STEP_CAP, &mut id.rng(0)).unwrap();
        let b = additive_functional(&traj, |k| m.omega_prime(k), 50, 1.0, 1.5).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn rate_fit_handles_floor() {
        let ladder = [100, 1000, 10_000, 100_000];
        let errors: Vec<f64> = ladder.iter().map(|n| 0.5 * (*n as f64).powf(-0.3)).collect();
        let stderrs = vec![1e-4; 4];
        let r = rate_fit(
            Regime::Stable,
            &ladder,
            &[0.5],
            1.0,
            1000,
            1.0,
            2.0 / 13.0,
            errors,
            stderrs,
        );
        let f = r.fit.unwrap();
        assert!((f.slope + 0.3).abs() < 1e-3);
        assert_eq!(r.meets_bound(0.05), Some(true));
        assert!(r.trend_ok);
        let flat = rate_fit(
            Regime::Stable,
            &ladder,
            &[0.5],
            1.0,
            1000,
            1.0,
            0.1,
            vec![1e-3; 4],
            vec![1e-3; 4],
        );
        assert!(!flat.is_identifiable());
    }

    #[test]
    fn tail_probability_trivial_and_fit() {
        let samples = vec![0.5; 1000];
        let tp = tail_probability_from_samples(&samples, 100, 1.0, 1.0);
        assert_eq!(tp.hits, 0);
        let pts: Vec<TailProbability> = [100u64, 1000, 10_000, 100_000]
            .iter()
            .map(|&n| {
                let f = 0.4 * (n as f64).powf(-0.3);
                let total = 100_000u64;
                let hits = (f * total as f64).round() as u64;
                TailProbability {
                    n,
                    t: 1.0,
                    kappa: 0.2,
                    threshold: 0.0,
                    hits,
                    n_paths: total,
                    frequency: hits as f64 / total as f64,
                    interval: wilson_interval(hits, total, 0.95),
                }
            })
            .collect();
        let fit = fit_tail_probability(&pts).unwrap();
        assert!((fit.delta - 0.3).abs() < 0.01);
        assert!(fit.delta_positive && fit.nonincreasing && fit.bound_holds);
    }

    #[test]
    fn martingale_reconstruction() {
        let m = DispersionModel::pinned_nn(1.0).unwrap();
        let grid = crate::quadrature::TorusGrid::default();
        let sol = crate::limits::poisson_solve(|k| psi_unchecked(&m, k), &grid).unwrap();
        let mut r = StreamId::new(6, "mart").rng(0);
        let path: Vec<f64> = SkeletonChain::new(StartMode::Stationary, &mut r)
            .unwrap()
            .take(500)
            .map(|s| s.unwrap().k.value())
            .collect();
        let parts = martingale_decompose(&path, &sol).unwrap();
        assert!(parts.reconstruction_error() < 1e-10);
        // odd observable: increments are Psi(xi_n)
        for (inc, &k) in parts.increments.iter().zip(&path[1..]) {
            assert!((inc - psi_unchecked(&m, k)).abs() < 1e-12);
        }
        let short_sum: f64 = path[..path.len() - 1].iter().map(|&k| psi_unchecked(&m, k)).sum();
        assert!((parts.martingale + parts.boundary_excluding_last(&sol, &path) - short_sum).abs() < 1e-10);
    }
}
