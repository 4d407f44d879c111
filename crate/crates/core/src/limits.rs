//! Limit constants of the additive functionals of the jump process.
//!
//! Everything here is computed from quadrature and small linear algebra:
//! tail constants of `Psi = omega' theta` under `pi`, the Levy exponent of
//! the stable limit, the Poisson equation of the skeleton chain and the
//! Gaussian variance in the pinned case.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::chain::{spectral_gap, stationary_density, THETA_BAR};
use crate::error::{Error, Result};
use crate::model::{e_minus, e_plus, frak_r, r_total, theta, DispersionModel};
use crate::quadrature::{GaussLegendre, TorusGrid};

/// `Psi(k) = omega'(k) / R(k)`.
pub fn psi_observable(model: &DispersionModel, k: f64) -> Result<f64> {
    if k == 0.0 {
        return Err(Error::Precondition("Psi is undefined at k = 0".into()));
    }
    Ok(psi_unchecked(model, k))
}

#[inline]
pub(crate) fn psi_unchecked(model: &DispersionModel, k: f64) -> f64 {
    model.omega_prime(k) / r_total(k)
}

/// Tail index of `Psi` under `pi`: 3/2 for acoustic chains, 3 when pinned.
pub fn psi_tail_index(model: &DispersionModel) -> f64 {
    if model.is_pinned() {
        3.0
    } else {
        1.5
    }
}

/// `pi({k : f(k) > lambda})` for `f` finite away from 0.
///
/// The superlevel set is located by a scan that is geometric near 0 and
/// uniform elsewhere; every sign change of `f - lambda` is refined by
/// bisection to `1e-14`, and `(1/2) r` is integrated exactly on the pieces.
pub fn superlevel_mass<F: Fn(f64) -> f64>(f: F, lambda: f64) -> Result<f64> {
    let mut probes: Vec<f64> = (0..=240).map(|i| 1e-12 * 10f64.powf(9.0 * i as f64 / 240.0)).collect();
    probes.extend((1..=4000).map(|i| 1e-3 + (0.5 - 1e-3) * i as f64 / 4000.0));
    let rule = GaussLegendre::new(40);
    let mut mass = 0.0;
    for side in [1.0, -1.0] {
        let g = |x: f64| f(side * x) - lambda;
        // the innermost cell (0, 1e-12) has mass O(1e-36) and is folded into
        // the first probe
        let mut start = if g(probes[0]) > 0.0 { Some(0.0) } else { None };
        for w in probes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ga, gb) = (g(a), g(b));
            if !ga.is_finite() || !gb.is_finite() {
                return Err(Error::Bracketing(format!("non-finite Psi near k = {a}")));
            }
            if (ga > 0.0) != (gb > 0.0) {
                let root = bisect(&g, a, b)?;
                if gb > 0.0 {
                    start = Some(root);
                } else if let Some(s) = start.take() {
                    mass += rule.integrate(s, root, stationary_density);
                }
            }
        }
        if let Some(s) = start {
            mass += rule.integrate(s, 0.5, stationary_density);
        }
    }
    Ok(mass)
}

fn bisect<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64) -> Result<f64> {
    let ga_pos = g(a) > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a) <= 1e-14 * b.abs().max(1e-300) || b - a <= 1e-14 * 1e-12 {
            return Ok(m);
        }
        if (g(m) > 0.0) == ga_pos {
            a = m;
        } else {
            b = m;
        }
    }
    Err(Error::Bracketing(format!("bisection did not settle on [{a}, {b}]")))
}

/// `pi(Psi > lambda)`.
pub fn tail_function(model: &DispersionModel, lambda: f64) -> Result<f64> {
    if lambda < 1.0 {
        return Err(Error::Precondition(format!(
            "tail function needs lambda >= 1, got {lambda}"
        )));
    }
    superlevel_mass(|k| psi_unchecked(model, k), lambda)
}

/// `pi(-Psi > lambda)`.
pub fn tail_function_minus(model: &DispersionModel, lambda: f64) -> Result<f64> {
    if lambda < 1.0 {
        return Err(Error::Precondition(format!(
            "tail function needs lambda >= 1, got {lambda}"
        )));
    }
    superlevel_mass(|k| -psi_unchecked(model, k), lambda)
}

/// The default ladder `10^2, 10^2.5, ..., 10^4`.
pub fn lambda_ladder() -> Vec<f64> {
    (0..5).map(|i| 10f64.powf(2.0 + 0.5 * i as f64)).collect()
}

/// Sequence `lambda^alpha pi(Psi > lambda)` and its extrapolated limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailLadder {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub scaled: Vec<f64>,
    /// Relative spread `(max - min) / limit` of the raw sequence.
    pub spread: f64,
    /// Fitted correction exponent (`None` when corrections are not monotone).
    pub alpha1: Option<f64>,
    pub limit: f64,
}

pub fn tail_ladder<F: Fn(f64) -> Result<f64>>(tail: F, alpha: f64, lambdas: &[f64]) -> Result<TailLadder> {
    if lambdas.len() < 3 {
        return Err(Error::Precondition("tail ladder needs 3 or more points".into()));
    }
    let scaled = lambdas
        .iter()
        .map(|&l| tail(l).map(|t| t * l.powf(alpha)))
        .collect::<Result<Vec<f64>>>()?;
    let n = scaled.len();
    let (v0, v1, v2) = (scaled[n - 3], scaled[n - 2], scaled[n - 1]);
    let step = lambdas[n - 1] / lambdas[n - 2];
    let rho = (v2 - v1) / (v1 - v0);
    let (limit, alpha1) = if rho > 0.0 && rho < 1.0 && v1 != v0 {
        (v2 + (v2 - v1) * rho / (1.0 - rho), Some(-rho.ln() / step.ln()))
    } else {
        (v2, None)
    };
    let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    let spread = if limit != 0.0 { (max - min) / limit.abs() } else { 0.0 };
    Ok(TailLadder {
        alpha,
        lambdas: lambdas.to_vec(),
        scaled,
        spread,
        alpha1,
        limit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailConstant {
    pub c_star_plus: f64,
    pub c_star_minus: f64,
    pub plus: TailLadder,
    pub minus: TailLadder,
    /// Leading-order value from the small-k expansion of `Psi` and `pi`.
    pub asymptotic: f64,
    /// The closed form `2^{-1/4} 3^{-5/2} pi^{1/2} alpha''(0)^{3/4}`, kept
    /// for comparison only.
    pub reference_formula: f64,
}

/// Numerical `c_*^{+-} = lim lambda^{3/2} pi(+-Psi > lambda)`.
pub fn tail_constant(model: &DispersionModel) -> Result<TailConstant> {
    if model.is_pinned() {
        return Err(Error::Precondition(
            "tail constant at index 3/2 needs an acoustic model".into(),
        ));
    }
    let ladder = lambda_ladder();
    let plus = tail_ladder(|l| tail_function(model, l), 1.5, &ladder)?;
    let minus = tail_ladder(|l| tail_function_minus(model, l), 1.5, &ladder)?;
    for l in [&plus, &minus] {
        if l.spread > 0.01 {
            return Err(Error::NonConvergence(format!(
                "lambda^(3/2) pi(Psi > lambda) spreads by {:.3}% over the ladder",
                100.0 * l.spread
            )));
        }
    }
    Ok(TailConstant {
        c_star_plus: plus.limit,
        c_star_minus: minus.limit,
        plus,
        minus,
        asymptotic: tail_constant_asymptotic(model),
        reference_formula: tail_constant_reference(model),
    })
}

/// `Psi ~ v / (6 pi^2 k^2)` with `v = omega'(0+)` and `pi(dk) ~ 4 pi^2 k^2 dk`
/// give `c_* = (4 pi^2 / 3) (v / 6 pi^2)^{3/2}`.
pub fn tail_constant_asymptotic(model: &DispersionModel) -> f64 {
    let v = (model.alpha_hat_dd0() / 2.0).sqrt();
    4.0 * PI * PI / 3.0 * (v / (6.0 * PI * PI)).powf(1.5)
}

pub fn tail_constant_reference(model: &DispersionModel) -> f64 {
    2f64.powf(-0.25) * 3f64.powf(-2.5) * PI.sqrt() * model.alpha_hat_dd0().powf(0.75)
}

/// `int_U^inf e^{iu} u^{-beta} du` by its asymptotic expansion (`U` large).
fn oscillatory_tail(u: f64, beta: f64) -> Complex64 {
    let mut term = u.powf(-beta);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut ipow = Complex64::new(0.0, -1.0); // (-i)^{n+1}
    for n in 0..12 {
        sum += ipow * term;
        term *= (beta + n as f64) / u;
        ipow *= Complex64::new(0.0, -1.0);
    }
    -Complex64::from_polar(1.0, u) * sum
}

/// `I_c = int_0^inf (1 - cos u) u^{-1-alpha} du` and
/// `I_s = int_0^inf (u - sin u) u^{-1-alpha} du` for `alpha in (1, 2)`.
pub fn stable_integrals(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Precondition(format!("alpha = {alpha} is not in (1, 2)")));
    }
    // [0, 1]: termwise integration of the Taylor series
    let mut ic = 0.0;
    let mut is = 0.0;
    let mut fact = 1.0; // (2n)!
    for n in 1..=20 {
        let m = 2 * n;
        fact *= ((m - 1) * m) as f64;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        ic += sign / (fact * (m as f64 - alpha));
        is += sign / (fact * (m as f64 + 1.0) * (m as f64 + 1.0 - alpha));
    }
    // [1, U]: one Gauss-Legendre panel per period
    let periods = 600;
    let upper = 2.0 * PI * periods as f64;
    let rule = GaussLegendre::new(30);
    let fc = |u: f64| (1.0 - u.cos()) * u.powf(-1.0 - alpha);
    let fs = |u: f64| (u - u.sin()) * u.powf(-1.0 - alpha);
    let mut edges = vec![1.0];
    edges.extend((1..=periods).map(|j| 2.0 * PI * j as f64));
    for w in edges.windows(2) {
        ic += rule.integrate(w[0], w[1], fc);
        is += rule.integrate(w[0], w[1], fs);
    }
    let tail = oscillatory_tail(upper, 1.0 + alpha);
    ic += upper.powf(-alpha) / alpha - tail.re;
    is += upper.powf(1.0 - alpha) / (alpha - 1.0) - tail.im;
    if !(ic.is_finite() && is.is_finite()) {
        return Err(Error::Quadrature("stable integrals are not finite".into()));
    }
    Ok((ic, is))
}

/// `psi(p) = alpha int (1 + i lambda p - e^{i lambda p}) c(lambda) |lambda|^{-1-alpha} d lambda`
/// with `c = c_plus` on `lambda > 0` and `c_minus` on `lambda < 0`.
pub fn levy_exponent(p: f64, alpha: f64, c_plus: f64, c_minus: f64) -> Result<Complex64> {
    if p == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (ic, is) = stable_integrals(alpha)?;
    let scale = alpha * p.abs().powf(alpha);
    Ok(Complex64::new(
        scale * (c_plus + c_minus) * ic,
        scale * (c_plus - c_minus) * p.signum() * is,
    ))
}

/// `int_0^inf sin^2 x / x^{5/2} dx` by direct quadrature.
pub fn sine_integral_5_2() -> f64 {
    // [0, 1]: sin^2 x = sum (-1)^{n+1} 2^{2n-1} x^{2n} / (2n)!
    let mut s = 0.0;
    let mut fact = 1.0;
    for n in 1..=20 {
        let m = 2 * n;
        fact *= ((m - 1) * m) as f64;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * 2f64.powi(m - 1) / (fact * (m as f64 - 1.5));
    }
    let periods = 1200;
    let upper = PI * periods as f64;
    let rule = GaussLegendre::new(30);
    let mut edges = vec![1.0];
    edges.extend((1..=periods).map(|j| PI * j as f64));
    for w in edges.windows(2) {
        s += rule.integrate(w[0], w[1], |x| x.sin().powi(2) * x.powf(-2.5));
    }
    // sin^2 = (1 - cos 2x) / 2 on [X, inf)
    let tail = oscillatory_tail(2.0 * upper, 2.5) * 2f64.powf(1.5);
    s + 0.5 * upper.powf(-1.5) / 1.5 - 0.5 * tail.re
}

/// The three values of the stable constant `c` in `exp(-c |p|^{3/2} t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StableCHat {
    /// `(pi^2 alpha''(0) / 2)^{3/4}`.
    pub formula: f64,
    /// Renewal composition `theta_bar^{-1} Gamma(5/2) c_*^+` fed to the Levy
    /// exponent.
    pub pipeline: f64,
    /// Same composition with `theta_bar^{-3/2}` in place of `theta_bar^{-1}`.
    pub pipeline_literal: f64,
    pub c_star_plus: f64,
    pub gamma_5_2: f64,
    pub sine_integral: f64,
}

pub fn stable_c_hat_formula(model: &DispersionModel) -> f64 {
    (PI * PI * model.alpha_hat_dd0() / 2.0).powf(0.75)
}

/// Stable constant from a tail constant: the jump chain makes about
/// `N t / theta_bar` steps by time `N t`, each contributing `Psi tau` whose
/// tail is `Gamma(alpha + 1) c_*` (`tau ~ Exp(1)`).
pub fn stable_c_hat_from_tail(c_star_plus: f64, c_star_minus: f64, theta_power: f64) -> Result<f64> {
    let alpha = 1.5;
    let g = gamma(alpha + 1.0);
    let factor = THETA_BAR.powf(-theta_power) * g;
    Ok(levy_exponent(1.0, alpha, factor * c_star_plus, factor * c_star_minus)?.re)
}

pub fn stable_c_hat_pipeline(model: &DispersionModel) -> Result<StableCHat> {
    let tail = tail_constant(model)?;
    let (cp, cm) = (tail.c_star_plus, tail.c_star_minus);
    Ok(StableCHat {
        formula: stable_c_hat_formula(model),
        pipeline: stable_c_hat_from_tail(cp, cm, 1.0)?,
        pipeline_literal: stable_c_hat_from_tail(cp, cm, 1.5)?,
        c_star_plus: cp,
        gamma_5_2: gamma(2.5),
        sine_integral: sine_integral_5_2(),
    })
}

/// `chi = Psi + c_minus e_1 / r + c_plus e_{-1} / r`, the zero-mean solution
/// of `chi - P chi = Psi`.
#[derive(Clone, Debug)]
pub struct PoissonSolution<F> {
    psi: F,
    /// Coefficient of `e_1 / r`; equals `<e_{-1}, chi>`.
    pub c_minus: f64,
    /// Coefficient of `e_{-1} / r`; equals `<e_1, chi>`.
    pub c_plus: f64,
    /// Residual of the 2x2 solvability condition (`2 int Psi dpi`).
    pub solvability_defect: f64,
}

impl<F: Fn(f64) -> f64> PoissonSolution<F> {
    pub fn chi(&self, k: f64) -> f64 {
        (self.psi)(k) + self.p_chi(k)
    }

    /// `P chi`, which is the rank-2 part of `chi`.
    pub fn p_chi(&self, k: f64) -> f64 {
        let r = frak_r(k);
        if r == 0.0 {
            return 0.0;
        }
        (self.c_minus * e_plus(k) + self.c_plus * e_minus(k)) / r
    }

    pub fn psi(&self, k: f64) -> f64 {
        (self.psi)(k)
    }
}

/// Solves the Poisson equation of the skeleton chain using the rank-2 form
/// `P f = (e_1 / r) <e_{-1}, f> + (e_{-1} / r) <e_1, f>`.
pub fn poisson_solve<F: Fn(f64) -> f64>(psi: F, grid: &TorusGrid) -> Result<PoissonSolution<F>> {
    let guarded = |k: f64| if k == 0.0 { 0.0 } else { psi(k) };
    let mean = grid.integrate(|k| guarded(k) * stationary_density(k));
    let scale = grid.integrate(|k| guarded(k).abs() * stationary_density(k)).max(1e-300);
    if mean.abs() > 1e-9 * scale.max(1.0) {
        return Err(Error::Precondition(format!("Psi has pi-mean {mean:e}, not zero")));
    }
    let g_minus = grid.integrate(|k| e_minus(k) * guarded(k));
    let g_plus = grid.integrate(|k| e_plus(k) * guarded(k));
    // with x = (<e_{-1}, chi>, <e_1, chi>) the system reads (I - A) x = g,
    // A = [[pm, mm], [pp, pm]]
    let gap = spectral_gap(grid)?;
    let pm = gap.matrix[0][0];
    let mm = grid.integrate(|k| if k == 0.0 { 0.0 } else { e_minus(k).powi(2) / frak_r(k) });
    let pp = grid.integrate(|k| if k == 0.0 { 0.0 } else { e_plus(k).powi(2) / frak_r(k) });
    let q = 1.0 - pm;
    if q.abs() < 1e-12 {
        return Err(Error::Singular("I - P has a second unit eigenvalue".into()));
    }
    // Least squares on the three equations: two rows of (I - A) x = g and the
    // zero-mean row x_1 + x_2 = -2 int Psi dpi.
    let rows = [[q, -mm, g_minus], [-pp, q, g_plus], [1.0, 1.0, -2.0 * mean]];
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &rows {
        a11 += r[0] * r[0];
        a12 += r[0] * r[1];
        a22 += r[1] * r[1];
        b1 += r[0] * r[2];
        b2 += r[1] * r[2];
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-14 {
        return Err(Error::Singular("normal equations of the Poisson system".into()));
    }
    let x1 = (a22 * b1 - a12 * b2) / det;
    let x2 = (a11 * b2 - a12 * b1) / det;
    Ok(PoissonSolution {
        psi,
        c_minus: x1,
        c_plus: x2,
        solvability_defect: g_minus + g_plus,
    })
}

/// `sup |chi - P chi - Psi|` over 4096 midpoints, with `P chi` recomputed on
/// an independent uniform grid.
pub fn poisson_residual<F: Fn(f64) -> f64>(sol: &PoissonSolution<F>) -> f64 {
    let grid = TorusGrid::uniform(512, 8);
    let h_minus = grid.integrate(|k| e_minus(k) * sol.chi(k));
    let h_plus = grid.integrate(|k| e_plus(k) * sol.chi(k));
    (0..4096)
        .map(|i| -0.5 + (i as f64 + 0.5) / 4096.0)
        .map(|k| {
            let p_chi = (e_plus(k) * h_minus + e_minus(k) * h_plus) / frak_r(k);
            (sol.chi(k) - p_chi - sol.psi(k)).abs()
        })
        .fold(0.0, f64::max)
}

/// `sigma^2 = int (chi^2 - (P chi)^2) dpi` for the pinned observable.
pub fn sigma_sq(model: &DispersionModel, grid: &TorusGrid) -> Result<f64> {
    if !model.is_pinned() {
        return Err(Error::Precondition(
            "Psi is not square integrable for an acoustic model".into(),
        ));
    }
    let sol = poisson_solve(|k| psi_unchecked(model, k), grid)?;
    Ok(grid.integrate(|k| {
        if k == 0.0 {
            0.0
        } else {
            (sol.chi(k).powi(2) - sol.p_chi(k).powi(2)) * stationary_density(k)
        }
    }))
}

/// Candidate variances of `Y_1` in the pinned case.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaussianCandidates {
    pub sigma_sq: f64,
    /// `9 sigma^2`
    pub a: f64,
    /// `2 theta_bar^{-2} sigma^2`
    pub b: f64,
    /// `2 theta_bar^{-1} sigma^2`: about `N / theta_bar` independent terms
    /// `Psi tau` with `E[Psi^2 tau^2] = 2 sigma^2`.
    pub renewal: f64,
}

pub fn gaussian_c_hats(model: &DispersionModel, grid: &TorusGrid) -> Result<GaussianCandidates> {
    let s = sigma_sq(model, grid)?;
    Ok(GaussianCandidates {
        sigma_sq: s,
        a: 9.0 * s,
        b: 2.0 * s / (THETA_BAR * THETA_BAR),
        renewal: 2.0 * s / THETA_BAR,
    })
}

/// `int theta dpi` by quadrature.
pub fn theta_bar(grid: &TorusGrid) -> f64 {
    grid.integrate(|k| {
        if k == 0.0 {
            0.0
        } else {
            theta(k) * stationary_density(k)
        }
    })
}

/// `(pi(theta > T), int_{theta > T} theta dpi)` for `T >= 1`. The set is
/// `|k| < k_T` with `R(k_T) = 1/T`, i.e. `sin^2(pi k_T) = (6 - sqrt(36 - 16/T)) / 8`.
pub fn theta_tail_part(threshold: f64) -> Result<(f64, f64)> {
    if !(threshold >= 1.0 && threshold.is_finite()) {
        return Err(Error::Precondition(format!(
            "threshold must be finite and >= 1, got {threshold}"
        )));
    }
    let s = (6.0 - (36.0 - 16.0 / threshold).sqrt()) / 8.0;
    let k_t = s.sqrt().asin() / PI;
    let rule = GaussLegendre::new(40);
    let mass = 2.0 * rule.integrate(0.0, k_t, stationary_density);
    let part = 2.0 * rule.integrate(0.0, k_t, |k| theta(k) * stationary_density(k));
    Ok((mass, part))
}

/// Measured tail index of `theta` under `pi` from the lambda ladder.
pub fn theta_tail_index() -> Result<f64> {
    let (l0, l1) = (1e4, 1e6);
    let t0 = superlevel_mass(theta, l0)?;
    let t1 = superlevel_mass(theta, l1)?;
    Ok(-(t1 / t0).ln() / (l1 / l0).ln())
}

/// Guaranteed rate exponent for the stable jump-process functional.
pub fn delta_star_stable(alpha: f64, alpha2: f64) -> f64 {
    (alpha / (alpha + 1.0)).min((alpha2 - 1.0) / (alpha * alpha2 + 1.0))
}

/// Guaranteed rate exponent in the Gaussian regime.
pub fn delta_star_gaussian(alpha2: f64) -> f64 {
    (1.0f64 / 3.0).min((alpha2 - 1.0) / (1.0 + 2.0 * alpha2))
}

/// Everything the `constants` experiment reports for one model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitConstants {
    pub model: String,
    pub theta_bar: f64,
    pub spectral_gap: f64,
    pub theta_tail_index: f64,
    pub psi_tail_index: f64,
    pub c_star_plus: Option<f64>,
    pub c_star_minus: Option<f64>,
    pub c_star_asymptotic: Option<f64>,
    pub c_star_reference_formula: Option<f64>,
    pub c_hat_formula: Option<f64>,
    pub c_hat_pipeline: Option<f64>,
    pub c_hat_pipeline_literal: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub c_hat_gaussian_a: Option<f64>,
    pub c_hat_gaussian_b: Option<f64>,
    pub gaussian_renewal_variance: Option<f64>,
    pub delta_star: f64,
    pub notes: BTreeMap<String, String>,
}

pub fn limit_constants(model: &DispersionModel) -> Result<LimitConstants> {
    let grid = TorusGrid::default();
    let mut notes = BTreeMap::new();
    let alpha2 = theta_tail_index()?;
    notes.insert(
        "theta_tail_index".into(),
        "slope of log pi(theta > lambda) between 1e4 and 1e6".into(),
    );
    let mut out = LimitConstants {
        model: model.label(),
        theta_bar: theta_bar(&grid),
        spectral_gap: spectral_gap(&grid)?.a,
        theta_tail_index: alpha2,
        psi_tail_index: psi_tail_index(model),
        c_star_plus: None,
        c_star_minus: None,
        c_star_asymptotic: None,
        c_star_reference_formula: None,
        c_hat_formula: None,
        c_hat_pipeline: None,
        c_hat_pipeline_literal: None,
        sigma_sq: None,
        c_hat_gaussian_a: None,
        c_hat_gaussian_b: None,
        gaussian_renewal_variance: None,
        delta_star: 0.0,
        notes: BTreeMap::new(),
    };
    if model.is_pinned() {
        let g = gaussian_c_hats(model, &grid)?;
        out.sigma_sq = Some(g.sigma_sq);
        out.c_hat_gaussian_a = Some(g.a);
        out.c_hat_gaussian_b = Some(g.b);
        out.gaussian_renewal_variance = Some(g.renewal);
        out.delta_star = delta_star_gaussian(alpha2);
        notes.insert(
            "sigma_sq".into(),
            "int (chi^2 - (P chi)^2) dpi, chi from the rank-2 Poisson solve".into(),
        );
        notes.insert(
            "c_hat_gaussian_a".into(),
            "9 sigma^2 (candidate variance of Y_1)".into(),
        );
        notes.insert(
            "c_hat_gaussian_b".into(),
            "2 theta_bar^-2 sigma^2 (candidate variance of Y_1)".into(),
        );
        notes.insert(
            "gaussian_renewal_variance".into(),
            "2 theta_bar^-1 sigma^2 (renewal count times E[Psi^2 tau^2])".into(),
        );
    } else {
        let c = stable_c_hat_pipeline(model)?;
        let tail = tail_constant(model)?;
        out.c_star_plus = Some(tail.c_star_plus);
        out.c_star_minus = Some(tail.c_star_minus);
        out.c_star_asymptotic = Some(tail.asymptotic);
        out.c_star_reference_formula = Some(tail.reference_formula);
        out.c_hat_formula = Some(c.formula);
        out.c_hat_pipeline = Some(c.pipeline);
        out.c_hat_pipeline_literal = Some(c.pipeline_literal);
        out.delta_star = delta_star_stable(1.5, alpha2);
        notes.insert(
            "c_star_plus".into(),
            "Richardson limit of lambda^1.5 pi(Psi > lambda), lambda = 1e2..1e4".into(),
        );
        notes.insert(
            "c_star_asymptotic".into(),
            "(4 pi^2 / 3)(omega'(0+) / 6 pi^2)^1.5 from small-k expansions".into(),
        );
        notes.insert(
            "c_star_reference_formula".into(),
            "2^-1/4 3^-5/2 pi^1/2 alpha''(0)^3/4, reference only".into(),
        );
        notes.insert(
            "c_hat_formula".into(),
            "(pi^2 alpha''(0) / 2)^3/4, reference only".into(),
        );
        notes.insert(
            "c_hat_pipeline".into(),
            "levy exponent at p = 1 of theta_bar^-1 Gamma(5/2) c_*".into(),
        );
        notes.insert("c_hat_pipeline_literal".into(), "same with theta_bar^-3/2".into());
    }
    out.notes = notes;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::transition_density_wrt_pi;
    use rand::{Rng, SeedableRng};

    fn unpinned() -> DispersionModel {
        DispersionModel::unpinned_nn()
    }

    #[test]
    fn psi_point_values() {
        let m = unpinned();
        assert!(psi_observable(&m, 0.5).unwrap().abs() < 1e-15);
        let v = psi_observable(&m, 0.25).unwrap();
        assert!((v - PI * 2f64.sqrt() / 2.0).abs() < 1e-13);
        assert!(psi_observable(&m, 0.0).is_err());
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let k: f64 = r.gen_range(-0.5..0.5);
            let a = psi_observable(&m, k).unwrap();
            assert!((a + psi_observable(&m, -k).unwrap()).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn psi_has_zero_mean() {
        let grid = TorusGrid::default();
        for m in [unpinned(), DispersionModel::pinned_nn(1.0).unwrap()] {
            let mean = grid.integrate(|k| psi_unchecked(&m, k) * stationary_density(k));
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn tail_set_is_an_interval_with_bisected_endpoint() {
        let m = unpinned();
        let lambda = 1e3;
        let root = bisect(&|k| psi_unchecked(&m, k) - lambda, 1e-6, 0.4).unwrap();
        let direct = GaussLegendre::new(40).integrate(0.0, root, stationary_density);
        assert!((tail_function(&m, lambda).unwrap() - direct).abs() < 1e-14);
        assert!(tail_function(&m, 0.5).is_err());
    }

    #[test]
    fn tail_constants_agree_and_converge() {
        let m = unpinned();
        let t = tail_constant(&m).unwrap();
        assert!((t.c_star_plus - t.c_star_minus).abs() < 1e-10 * t.c_star_plus);
        assert!(t.plus.spread < 0.01);
        let derived = 4.0 * PI.sqrt() / 3f64.powf(2.5);
        assert!((t.asymptotic - derived).abs() < 1e-12);
        assert!(
            (t.c_star_plus / derived - 1.0).abs() < 1e-3,
            "{} vs {derived}",
            t.c_star_plus
        );
        assert!((t.reference_formula - 4.0 * PI * PI / 3f64.powf(2.5)).abs() < 1e-12);
    }

    #[test]
    fn pinned_tail_is_cubic() {
        let m = DispersionModel::pinned_nn(1.0).unwrap();
        let l = tail_ladder(|l| tail_function(&m, l), 3.0, &lambda_ladder()).unwrap();
        let max = l.scaled.iter().cloned().fold(0.0, f64::max);
        assert!(max.is_finite() && max > 0.0);
        assert!(l.spread < 0.01);
    }

    #[test]
    fn stable_integral_oracles() {
        let (ic, _) = stable_integrals(1.5).unwrap();
        assert!((ic - 2.0 * 2f64.sqrt() * PI.sqrt() / 3.0).abs() < 1e-10);
        // I_c = -Gamma(-alpha) cos(pi alpha / 2), I_s = -Gamma(-alpha) sin(pi alpha / 2)
        for alpha in [1.2, 1.5, 1.8] {
            let (ic, is) = stable_integrals(alpha).unwrap();
            let g = -gamma(-alpha);
            assert!((ic - g * (PI * alpha / 2.0).cos()).abs() < 1e-9 * ic.abs(), "{alpha}");
            assert!(
                (is + g * (PI * alpha / 2.0).sin()).abs() < 1e-9 * is.abs(),
                "{alpha} {is}"
            );
        }
        assert!((sine_integral_5_2() - 4.0 * PI.sqrt() / 3.0).abs() < 1e-8);
        assert!((gamma(2.5) - 3.0 * PI.sqrt() / 4.0).abs() < 1e-13);
    }

    #[test]
    fn levy_exponent_properties() {
        assert_eq!(levy_exponent(0.0, 1.5, 1.0, 1.0).unwrap(), Complex64::new(0.0, 0.0));
        for p in [-2.0, -0.3, 0.7, 3.0] {
            let psi = levy_exponent(p, 1.5, 0.8, 0.8).unwrap();
            assert!(psi.im.abs() < 1e-10);
            let oracle = 2f64.powf(1.5) * PI.sqrt() * 0.8 * f64::abs(p).powf(1.5);
            assert!((psi.re / oracle - 1.0).abs() < 1e-8);
            let asym = levy_exponent(p, 1.5, 1.0, 0.2).unwrap();
            assert!(asym.re >= 0.0);
            let mirrored = levy_exponent(-p, 1.5, 1.0, 0.2).unwrap();
            assert!((asym - mirrored.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn stable_constants() {
        let m = unpinned();
        assert!((stable_c_hat_formula(&m) - 2f64.powf(1.5) * PI.powi(3)).abs() < 1e-9);
        let doubled = DispersionModel::from_potential(vec![4.0, -2.0]).unwrap();
        assert!((stable_c_hat_formula(&doubled) / stable_c_hat_formula(&m) - 2f64.powf(0.75)).abs() < 1e-12);
        let c = stable_c_hat_pipeline(&m).unwrap();
        let cstar = 4.0 * PI.sqrt() / 3f64.powf(2.5);
        let expected = 1.5 * gamma(2.5) * cstar * 2f64.powf(1.5) * PI.sqrt();
        assert!((c.pipeline / expected - 1.0).abs() < 1e-3, "{}", c.pipeline);
        assert!((c.pipeline_literal / c.pipeline - 1.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn poisson_odd_observable_is_its_own_solution() {
        let m = DispersionModel::pinned_nn(1.0).unwrap();
        let grid = TorusGrid::default();
        let sol = poisson_solve(|k| psi_unchecked(&m, k), &grid).unwrap();
        assert!(sol.c_minus.abs() < 1e-12 && sol.c_plus.abs() < 1e-12);
        let sup = grid.nodes().iter().map(|&k| sol.p_chi(k).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-12);
    }

    #[test]
    fn poisson_even_observable() {
        let grid = TorusGrid::default();
        let mean = grid.integrate(|k| e_plus(k) * stationary_density(k));
        assert!((mean - 25.0 / 18.0).abs() < 1e-12);
        let sol = poisson_solve(|k| e_plus(k) - 25.0 / 18.0, &grid).unwrap();
        assert!(sol.c_minus.abs() > 1e-3);
        assert!((sol.c_minus + sol.c_plus).abs() < 1e-12);
        assert!(poisson_residual(&sol) < 1e-10, "{}", poisson_residual(&sol));
        let chi_mean = grid.integrate(|k| sol.chi(k) * stationary_density(k));
        assert!(chi_mean.abs() < 1e-10);
        // not centred: rejected
        assert!(poisson_solve(|k| e_plus(k) - 1.0, &grid).is_err());
    }

    #[test]
    fn poisson_residual_via_transition_density() {
        let grid = TorusGrid::default();
        let mean = stationary_mean_cos();
        let sol = poisson_solve(|k| (2.0 * PI * k).cos() - mean, &grid).unwrap();
        for &k in &[0.1, -0.27, 0.44] {
            let p_chi = grid.integrate(|kp| transition_density_wrt_pi(k, kp) * sol.chi(kp) * stationary_density(kp));
            assert!((sol.chi(k) - p_chi - sol.psi(k)).abs() < 1e-10);
        }
    }

    fn stationary_mean_cos() -> f64 {
        TorusGrid::default().integrate(|k| (2.0 * PI * k).cos() * stationary_density(k))
    }

    #[test]
    fn sigma_sq_matches_closed_integral() {
        let m = DispersionModel::pinned_nn(1.0).unwrap();
        let grid = TorusGrid::default();
        let s = sigma_sq(&m, &grid).unwrap();
        let oracle = 8.0 / 9.0
            * grid.integrate(|k| {
                if k == 0.0 {
                    0.0
                } else {
                    m.omega_prime(k).powi(2) / frak_r(k)
                }
            });
        assert!(s > 0.0);
        assert!((s - oracle).abs() < 1e-10 * oracle);
        let g = gaussian_c_hats(&m, &grid).unwrap();
        assert!((g.b / s - 4.5).abs() < 1e-12 && (g.a / s - 9.0).abs() < 1e-12);
        assert!(sigma_sq(&unpinned(), &grid).is_err());
    }

    #[test]
    fn theta_statistics() {
        assert!((theta_bar(&TorusGrid::default()) - 2.0 / 3.0).abs() < 1e-12);
        let a2 = theta_tail_index().unwrap();
        assert!((a2 - 1.5).abs() < 1e-3, "{a2}");
        assert!((delta_star_stable(1.5, 1.5) - 2.0 / 13.0).abs() < 1e-15);
        assert!((delta_star_gaussian(3.0) - 2.0 / 7.0).abs() < 1e-15);
        // the lower bound on theta
        let sup_r = (0..=1000).map(|i| r_total(0.5 * i as f64 / 1000.0)).fold(0.0, f64::max);
        assert!((sup_r - 2.25).abs() < 1e-3);
    }

    #[test]
    fn theta_tail_split() {
        for t in [1.0, 50.0, 1e4] {
            let (mass, part) = theta_tail_part(t).unwrap();
            let oracle = superlevel_mass(theta, t).unwrap();
            assert!(
                (mass - oracle).abs() < 1e-10 * oracle.max(1e-300),
                "{t}: {mass} vs {oracle}"
            );
            assert!(part >= t * mass && part > 0.0);
        }
        // pi(theta > T) ~ C T^{-3/2} gives int_{theta > T} theta dpi ~ 3 C T^{-1/2}
        let ratio = |t: f64| {
            let (m, p) = theta_tail_part(t).unwrap();
            p / (t * m)
        };
        assert!((ratio(1e8) - 3.0).abs() < 1e-3, "{}", ratio(1e8));
        assert!(theta_tail_part(0.5).is_err());
    }

    #[test]
    fn constants_record() {
        let c = limit_constants(&unpinned()).unwrap();
        assert!(c.c_hat_pipeline.is_some() && c.sigma_sq.is_none());
        let p = limit_constants(&DispersionModel::pinned_nn(1.0).unwrap()).unwrap();
        assert!(p.c_hat_gaussian_b.is_some() && p.c_star_plus.is_none());
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("c_hat_pipeline_literal"));
    }
}
