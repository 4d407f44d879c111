//! Linear kinetic equation in Fourier variables,
//!
//! `d_t W(p, k) = -i p omega'(k) W + s L W`,
//! `L f = -R f + (3/4) sum_iota <e_iota, f> e_{-iota}`,
//!
//! solved on a fixed `k` grid. The sign of the transport term matches the
//! path representation `E[exp(-i p int omega'(K_s) ds) W_0(K_t)]`; flipping
//! it is the same as reflecting `k`. The scattering scale `s` is 1 for the
//! jump process of [`crate::chain`].

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{JumpWalk, StartMode, DEFAULT_STEP_CAP};
use crate::error::{Error, Result};
use crate::functionals::Regime;
use crate::model::{e_minus, e_plus, frak_r, DispersionModel, TorusPoint};
use crate::quadrature::TorusGrid;
use crate::rng::{pairwise_sum, StreamId};
use crate::stats::{fit_line, LineFit};

/// Serializable description of a [`TorusGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridSpec {
    Uniform {
        panels: usize,
        order: usize,
    },
    Graded {
        panels_per_side: usize,
        order: usize,
        k_min: f64,
    },
}

impl GridSpec {
    /// 4096 nodes graded down to `|k| = 1e-7`.
    pub fn kinetic_default() -> Self {
        GridSpec::Graded {
            panels_per_side: 256,
            order: 8,
            k_min: 1e-7,
        }
    }

    pub fn build(&self) -> TorusGrid {
        match *self {
            GridSpec::Uniform { panels, order } => TorusGrid::uniform(panels, order),
            GridSpec::Graded {
                panels_per_side,
                order,
                k_min,
            } => TorusGrid::graded(panels_per_side, order, k_min),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GridSpec::Uniform { panels, order } => panels >= 1 && order >= 1,
            GridSpec::Graded {
                panels_per_side,
                order,
                k_min,
            } => panels_per_side >= 2 && order >= 1 && k_min > 0.0 && k_min < 0.5,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid grid {self:?}")))
        }
    }
}

/// `W(t, p, .)` on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct KineticField {
    pub p: f64,
    pub t: f64,
    pub spec: GridSpec,
    pub grid: TorusGrid,
    pub values: Vec<Complex64>,
    pub model: DispersionModel,
    /// Multiplies the scattering operator.
    pub scale: f64,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct FieldHeader<'a> {
    p: f64,
    t: f64,
    grid: &'a GridSpec,
    nodes: usize,
    model: String,
    scale: f64,
}

impl KineticField {
    pub fn from_fn<F: Fn(f64) -> Complex64>(model: &DispersionModel, spec: GridSpec, p: f64, w0: F) -> Result<Self> {
        spec.validate()?;
        let grid = spec.build();
        let values: Vec<Complex64> = grid.nodes().iter().map(|&k| w0(k)).collect();
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Precondition("initial field is not finite on the grid".into()));
        }
        Ok(Self {
            p,
            t: 0.0,
            spec,
            grid,
            values,
            model: model.clone(),
            scale: 1.0,
            warnings: Vec::new(),
        })
    }

    pub fn real<F: Fn(f64) -> f64>(model: &DispersionModel, spec: GridSpec, p: f64, w0: F) -> Result<Self> {
        Self::from_fn(model, spec, p, |k| Complex64::new(w0(k), 0.0))
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    /// `int W dk`.
    pub fn mass(&self) -> Complex64 {
        self.pair(|_| Complex64::new(1.0, 0.0))
    }

    /// `<W, J> = int W J^* dk`.
    pub fn pair<J: Fn(f64) -> Complex64>(&self, j: J) -> Complex64 {
        self.grid
            .nodes()
            .iter()
            .zip(self.grid.weights())
            .zip(&self.values)
            .map(|((&k, &w), v)| v * j(k).conj() * w)
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        let abs: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        self.grid.sum_values(&abs)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Value at the node nearest `k`.
    pub fn value_at(&self, k: f64) -> Complex64 {
        self.values[self.grid.nearest(k)]
    }

    /// CSV `(k, re, im)` plus a JSON header next to it.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "re", "im"])?;
        for (k, v) in self.grid.nodes().iter().zip(&self.values) {
            w.write_record(&[format!("{k:e}"), format!("{:e}", v.re), format!("{:e}", v.im)])?;
        }
        w.flush()?;
        let header = FieldHeader {
            p: self.p,
            t: self.t,
            grid: &self.spec,
            nodes: self.grid.len(),
            model: self.model.label(),
            scale: self.scale,
        };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

/// Grid tables of the scattering operator. The basis functions are
/// normalised by their discrete integrals so that `sum_k w L f = 0` holds
/// to rounding on any grid.
struct Scattering {
    w: Vec<f64>,
    e1: Vec<f64>,
    em: Vec<f64>,
    /// `(3/4)(e_1 + e_{-1})`
    rate: Vec<f64>,
}

impl Scattering {
    fn new(grid: &TorusGrid) -> Self {
        let mut e1 = grid.map(e_plus);
        let mut em = grid.map(e_minus);
        let (n1, nm) = (grid.sum_values(&e1), grid.sum_values(&em));
        e1.iter_mut().for_each(|x| *x /= n1);
        em.iter_mut().for_each(|x| *x /= nm);
        let rate = e1.iter().zip(&em).map(|(a, b)| 0.75 * (a + b)).collect();
        Self {
            w: grid.weights().to_vec(),
            e1,
            em,
            rate,
        }
    }

    fn moments(&self, f: &[Complex64]) -> (Complex64, Complex64) {
        let mut m1 = Complex64::new(0.0, 0.0);
        let mut mm = Complex64::new(0.0, 0.0);
        for i in 0..f.len() {
            let wf = f[i] * self.w[i];
            m1 += wf * self.e1[i];
            mm += wf * self.em[i];
        }
        (m1, mm)
    }

    /// `s L f`.
    fn apply(&self, f: &[Complex64], s: f64) -> Vec<Complex64> {
        let (m1, mm) = self.moments(f);
        (0..f.len())
            .map(|i| s * (-self.rate[i] * f[i] + 0.75 * (m1 * self.em[i] + mm * self.e1[i])))
            .collect()
    }
}

/// Crank-Nicolson step `(I - h s L)^{-1} (I + h s L)` for the rank-two
/// operator, with the inverse applied by a 2x2 Woodbury reduction.
struct CrankNicolson<'a> {
    op: &'a Scattering,
    h: f64,
    s: f64,
    inv_diag: Vec<f64>,
    g: f64,
    /// inverse of `[[1 - g c, -g q1], [-g qm, 1 - g c]]`
    inv: [[f64; 2]; 2],
}

impl<'a> CrankNicolson<'a> {
    fn new(op: &'a Scattering, dt: f64, s: f64) -> Self {
        let h = 0.5 * dt;
        let inv_diag: Vec<f64> = op.rate.iter().map(|r| 1.0 / (1.0 + h * s * r)).collect();
        let g = 0.75 * h * s;
        let (mut c, mut q1, mut qm) = (0.0, 0.0, 0.0);
        for i in 0..op.w.len() {
            let wd = op.w[i] * inv_diag[i];
            c += wd * op.e1[i] * op.em[i];
            q1 += wd * op.e1[i] * op.e1[i];
            qm += wd * op.em[i] * op.em[i];
        }
        let m = [[1.0 - g * c, -g * q1], [-g * qm, 1.0 - g * c]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        Self {
            op,
            h,
            s,
            inv_diag,
            g,
            inv,
        }
    }

    fn step(&self, y: &mut [Complex64]) {
        let op = self.op;
        let ly = op.apply(y, self.s);
        let b: Vec<Complex64> = y
            .iter()
            .zip(&ly)
            .zip(&self.inv_diag)
            .map(|((y, l), d)| (y + self.h * l) * d)
            .collect();
        let (b1, bm) = op.moments(&b);
        let m1 = self.inv[0][0] * b1 + self.inv[0][1] * bm;
        let mm = self.inv[1][0] * b1 + self.inv[1][1] * bm;
        for i in 0..y.len() {
            y[i] = b[i] + self.g * self.inv_diag[i] * (op.em[i] * m1 + op.e1[i] * mm);
        }
    }
}

/// Advances `field` by `t_span` with Strang splitting: exact transport half
/// steps around a Crank-Nicolson scattering step. Second order in `dt`.
pub fn evolve_kinetic(field: &KineticField, t_span: f64, dt: f64) -> Result<KineticField> {
    if !(dt > 0.0) || !(t_span >= 0.0) {
        return Err(Error::Precondition(format!(
            "need dt > 0 and T >= 0, got dt={dt}, T={t_span}"
        )));
    }
    let mut out = field.clone();
    if t_span == 0.0 {
        return Ok(out);
    }
    let steps = (t_span / dt).ceil().max(1.0) as usize;
    let h = t_span / steps as f64;
    let cfl = field.p.abs() * field.model.sup_abs_omega_prime() * h;
    if cfl > 1.0 {
        out.warnings.push(format!("|p| sup|omega'| dt = {cfl:.3} exceeds 1"));
    }
    let op = Scattering::new(&field.grid);
    let cn = CrankNicolson::new(&op, h, field.scale);
    let half: Vec<Complex64> = field
        .grid
        .nodes()
        .iter()
        .map(|&k| Complex64::from_polar(1.0, -0.5 * field.p * field.model.omega_prime(k) * h))
        .collect();
    let full: Vec<Complex64> = half.iter().map(|z| z * z).collect();
    let y = &mut out.values;
    let transport = field.p != 0.0;
    if transport {
        y.iter_mut().zip(&half).for_each(|(v, z)| *v *= z);
    }
    for n in 0..steps {
        cn.step(y);
        if transport {
            let phase = if n + 1 == steps { &half } else { &full };
            y.iter_mut().zip(phase).for_each(|(v, z)| *v *= z);
        }
    }
    out.t += t_span;
    Ok(out)
}

/// `s L f` on the grid of `field`, for operator checks.
pub fn apply_generator(field: &KineticField) -> Vec<Complex64> {
    Scattering::new(&field.grid).apply(&field.values, field.scale)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn stderr(&self) -> f64 {
        self.stderr_re.hypot(self.stderr_im)
    }
}

/// Monte Carlo value of `W(t, p, k0)` from the path representation
/// `E[exp(-i p int_0^t omega'(K_u) du) W_0(K_t)]`, `K` started at `k0` and
/// jumping at `scale` times the chain rate.
#[allow(clippy::too_many_arguments)]
pub fn mc_solution<F>(
    model: &DispersionModel,
    w0: F,
    p: f64,
    k0: f64,
    t: f64,
    scale: f64,
    n_paths: usize,
    stream: StreamId,
) -> Result<McEstimate>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    if n_paths < 1000 {
        return Err(Error::Precondition(format!("need 1000 or more paths, got {n_paths}")));
    }
    if t == 0.0 {
        return Ok(McEstimate {
            mean: w0(k0),
            stderr_re: 0.0,
            stderr_im: 0.0,
            n_paths,
        });
    }
    if !(scale > 0.0) || !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "need t > 0 and scale > 0, got t={t}, scale={scale}"
        )));
    }
    let start = StartMode::Fixed(TorusPoint::new(k0));
    let draws: Vec<Complex64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.rng(i as u64);
            let mut integral = 0.0;
            let mut last = k0;
            for seg in JumpWalk::new(start, scale * t, DEFAULT_STEP_CAP, &mut rng)? {
                let (k, h) = seg?;
                integral += model.omega_prime(k.value()) * h;
                last = k.value();
            }
            Ok(Complex64::from_polar(1.0, -p * integral / scale) * w0(last))
        })
        .collect::<Result<_>>()?;
    let n = n_paths as f64;
    let re: Vec<f64> = draws.iter().map(|z| z.re).collect();
    let im: Vec<f64> = draws.iter().map(|z| z.im).collect();
    let (mr, mi) = (pairwise_sum(&re) / n, pairwise_sum(&im) / n);
    let var = |xs: &[f64], m: f64| pairwise_sum(&xs.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
    Ok(McEstimate {
        mean: Complex64::new(mr, mi),
        stderr_re: (var(&re, mr) / n).sqrt(),
        stderr_im: (var(&im, mi) / n).sqrt(),
        n_paths,
    })
}

/// `int |f| / |k|^{2a} dk`. Fails when the innermost panels carry more than
/// a thousandth of the total, i.e. the grid does not resolve the weight.
pub fn ba_norm(values: &[f64], grid: &TorusGrid, a: f64) -> Result<f64> {
    let k_inner = grid.nodes().iter().map(|k| k.abs()).fold(f64::INFINITY, f64::min) * 64.0;
    let (mut total, mut inner) = (0.0, 0.0);
    for ((k, w), f) in grid.nodes().iter().zip(grid.weights()).zip(values) {
        let x = w * f.abs() / k.abs().powf(2.0 * a);
        total += x;
        if k.abs() < k_inner {
            inner += x;
        }
    }
    if !total.is_finite() || inner > 1e-3 * total {
        return Err(Error::Quadrature(format!(
            "B_a norm not resolved near k = 0: innermost share {:.2e}",
            inner / total
        )));
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemigroupDecay {
    pub a: f64,
    pub ba_norm: f64,
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    /// `||Q_t f||_1 (1 + t)^a`
    pub weighted: Vec<f64>,
    /// Log-log fit of `||Q_t f||_1` over `t` in `[10, 1000]`.
    pub fit: LineFit,
    pub nonincreasing: bool,
    /// `weighted` stays within 3x its value at `t = 10`.
    pub bounded: bool,
}

/// Log-spaced times from 0 to 1000 used by [`semigroup_decay`].
pub fn decay_times() -> Vec<f64> {
    let mut t = vec![0.0, 1.0, 2.0, 5.0];
    t.extend((0..=16).map(|i| 10f64.powf(1.0 + i as f64 / 8.0)));
    t
}

/// Evolves a mean-zero `f` under `Q_t` and records `||Q_t f||_1`.
pub fn semigroup_decay(f: &[f64], spec: GridSpec, a: f64, times: &[f64], dt: f64) -> Result<SemigroupDecay> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Precondition(format!("a must lie in (0, 1], got {a}")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_none_or(|t| *t < 0.0) {
        return Err(Error::Precondition("times must be nonnegative and increasing".into()));
    }
    let grid = spec.build();
    if f.len() != grid.len() {
        return Err(Error::Precondition("input length does not match the grid".into()));
    }
    let mean = grid.sum_values(f);
    let abs: Vec<f64> = f.iter().map(|x| x.abs()).collect();
    if mean.abs() > 1e-10 * grid.sum_values(&abs).max(1e-300) {
        return Err(Error::Precondition(format!("input is not mean-zero: {mean:e}")));
    }
    let norm = ba_norm(f, &grid, a)?;
    let model = DispersionModel::unpinned_nn();
    let mut field = KineticField {
        p: 0.0,
        t: 0.0,
        spec,
        grid,
        values: f.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        model,
        scale: 1.0,
        warnings: Vec::new(),
    };
    let mut l1 = Vec::with_capacity(times.len());
    for &t in times {
        field = evolve_kinetic(&field, t - field.t, dt)?;
        l1.push(field.l1_norm());
    }
    let weighted: Vec<f64> = times.iter().zip(&l1).map(|(t, v)| v * (1.0 + t).powf(a)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&l1)
        .filter(|(t, _)| (10.0..=1000.0 + 1e-9).contains(*t))
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    let fit = fit_line(&xs, &ys, None)?;
    let nonincreasing = l1.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10));
    let at10 = times
        .iter()
        .position(|t| *t >= 10.0)
        .map(|i| weighted[i])
        .unwrap_or(weighted[0]);
    let bounded = times
        .iter()
        .zip(&weighted)
        .filter(|(t, _)| **t >= 10.0)
        .all(|(_, w)| *w <= 3.0 * at10);
    Ok(SemigroupDecay {
        a,
        ba_norm: norm,
        times: times.to_vec(),
        l1,
        weighted,
        fit,
        nonincreasing,
        bounded,
    })
}

/// Mean-zero test inputs in `B_a`: `|sin pi k|^{2a - 1/2} - kappa e_{-1}`
/// and `e_1 - e_{-1}`.
pub fn decay_inputs(grid: &TorusGrid, a: f64) -> Vec<(String, Vec<f64>)> {
    let gamma = 2.0 * a - 0.5;
    let power = grid.map(|k| (PI * k).sin().abs().powf(gamma));
    let em = grid.map(e_minus);
    let kappa = grid.sum_values(&power) / grid.sum_values(&em);
    let first = power.iter().zip(&em).map(|(x, e)| x - kappa * e).collect();
    let second = grid.nodes().iter().map(|&k| e_plus(k) - e_minus(k)).collect();
    vec![
        (format!("|sin pi k|^{gamma} - kappa e_-1"), first),
        ("e_1 - e_-1".to_string(), second),
    ]
}

/// The 2x2 resolvent reduction in the time units where the loss rate is
/// `r(k)`: `a = 1 - int e_{-1} e_1 / (lambda + r)`,
/// `a_iota = -int e_iota^2 / (lambda + r)`, `b_iota = -int e_iota / (lambda + r)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ResolventRecord {
    pub lambda: Complex64,
    pub a: Complex64,
    pub a_plus: Complex64,
    pub a_minus: Complex64,
    pub b_plus: Complex64,
    pub b_minus: Complex64,
    /// `a^2 - a_{-1} a_1`
    pub delta: Complex64,
    /// `lambda b_{-1} b_1 + b_{-1} a_1 + a_{-1} b_1`, equal to `delta / lambda`.
    pub d: Complex64,
}

impl ResolventRecord {
    /// `|delta - lambda d|`.
    pub fn identity_defect(&self) -> f64 {
        (self.delta - self.lambda * self.d).norm()
    }
}

/// Right end of the excluded segment `[-M, 0)`: `(4/3) sup R + 1`.
pub const RESOLVENT_M: f64 = 4.0;

pub fn resolvent_system(lambda: Complex64, grid: &TorusGrid) -> Result<ResolventRecord> {
    if lambda.im == 0.0 && lambda.re < 0.0 && lambda.re >= -RESOLVENT_M {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} lies on the excluded segment"
        )));
    }
    let mut e1 = grid.map(e_plus);
    let mut em = grid.map(e_minus);
    let (n1, nm) = (grid.sum_values(&e1), grid.sum_values(&em));
    e1.iter_mut().for_each(|x| *x /= n1);
    em.iter_mut().for_each(|x| *x /= nm);
    let zero = Complex64::new(0.0, 0.0);
    let (mut cross, mut q1, mut qm, mut s1, mut sm) = (zero, zero, zero, zero, zero);
    for i in 0..grid.len() {
        let r = e1[i] + em[i];
        if lambda == zero && r == 0.0 {
            continue;
        }
        let g = grid.weights()[i] / (lambda + r);
        cross += g * e1[i] * em[i];
        q1 += g * e1[i] * e1[i];
        qm += g * em[i] * em[i];
        s1 += g * e1[i];
        sm += g * em[i];
    }
    let a = 1.0 - cross;
    let (a_plus, a_minus, b_plus, b_minus) = (-q1, -qm, -s1, -sm);
    Ok(ResolventRecord {
        lambda,
        a,
        a_plus,
        a_minus,
        b_plus,
        b_minus,
        delta: a * a - a_minus * a_plus,
        d: lambda * b_minus * b_plus + b_minus * a_plus + a_minus * b_plus,
    })
}

/// `min |D(lambda)|` over `n` points of the right half circle of radius `rho`.
pub fn min_abs_d_on_arc(rho: f64, n: usize, grid: &TorusGrid) -> Result<f64> {
    let mut m = f64::INFINITY;
    for i in 0..n {
        let phi = -0.5 * PI + PI * (i as f64 + 0.5) / n as f64;
        let r = resolvent_system(Complex64::from_polar(rho, phi), grid)?;
        m = m.min(r.d.norm());
    }
    Ok(m)
}

/// Limit profile `W_0(p) exp(-c |p|^{3/2} t)` (stable) or
/// `W_0(p) exp(-c p^2 t)` (Gaussian). For the Gaussian case `c` is half the
/// limit variance.
pub fn fractional_profile(w0_bar: Complex64, p: f64, t: f64, regime: Regime, c_hat: f64) -> Complex64 {
    w0_bar * (-c_hat * p.abs().powf(regime.beta()) * t).exp()
}

/// `r(k)`, the loss rate in the units of [`resolvent_system`].
pub fn resolvent_rate(k: f64) -> f64 {
    frak_r(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridSpec {
        GridSpec::Graded {
            panels_per_side: 48,
            order: 8,
            k_min: 1e-6,
        }
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn constants_are_stationary() {
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 0.0, |_| 2.5).unwrap();
        let g = evolve_kinetic(&f, 5.0, 0.1).unwrap();
        assert!(g.values.iter().all(|v| (v - 2.5).norm() < 1e-12));
    }

    #[test]
    fn mass_conserved_at_p_zero() {
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 0.0, |k| 1.0 + (6.0 * PI * k).cos() + k).unwrap();
        let g = evolve_kinetic(&f, 20.0, 0.05).unwrap();
        assert!((g.mass() - f.mass()).norm() < 1e-12);
        assert!(g.values.iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn positivity_at_p_zero() {
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 0.0, |k| (-200.0 * (k - 0.2).powi(2)).exp()).unwrap();
        let g = evolve_kinetic(&f, 3.0, 0.1).unwrap();
        assert!(g.values.iter().all(|v| v.re >= 0.0));
    }

    #[test]
    fn generator_is_symmetric() {
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 0.0, |k| (2.0 * PI * k).sin() + k * k).unwrap();
        let g = KineticField::real(&m, small(), 0.0, |k| (-k * 7.0).exp()).unwrap();
        let (lf, lg) = (apply_generator(&f), apply_generator(&g));
        let w = f.grid.weights();
        let a: Complex64 = (0..w.len()).map(|i| lf[i] * g.values[i] * w[i]).sum();
        let b: Complex64 = (0..w.len()).map(|i| f.values[i] * lg[i] * w[i]).sum();
        assert!((a - b).norm() < 1e-13);
    }

    #[test]
    fn pure_transport_is_exact() {
        // far from the scattering: the scale 0 problem is a pure phase
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 2.0, |_| 1.0).unwrap().with_scale(0.0);
        let g = evolve_kinetic(&f, 1.3, 0.7).unwrap();
        for (k, v) in g.nodes().iter().zip(&g.values) {
            let exact = Complex64::from_polar(1.0, -2.0 * m.omega_prime(*k) * 1.3);
            assert!((v - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn second_order_in_dt() {
        let m = DispersionModel::unpinned_nn();
        let f = KineticField::real(&m, small(), 1.5, |k| 1.0 + e_plus(k)).unwrap();
        let run = |dt| evolve_kinetic(&f, 2.0, dt).unwrap();
        let (a, b, c4) = (run(0.1), run(0.05), run(0.025));
        let d = |x: &KineticField, y: &KineticField| {
            x.values
                .iter()
                .zip(&y.values)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max)
        };
        let ratio = d(&a, &b) / d(&b, &c4);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn mc_trivial_cases() {
        let m = DispersionModel::unpinned_nn();
        let id = StreamId::new(1, "mc");
        let one = mc_solution(&m, |_| c(1.0), 0.0, 0.3, 2.0, 1.0, 1000, id).unwrap();
        assert_eq!(one.mean, c(1.0));
        let t0 = mc_solution(&m, |k| c(k * k), 3.0, 0.3, 0.0, 1.0, 1000, id).unwrap();
        assert_eq!(t0.mean, c(0.09));
        assert!(mc_solution(&m, |_| c(1.0), 0.0, 0.3, 1.0, 1.0, 10, id).is_err());
    }

    #[test]
    fn mc_agrees_with_solver() {
        let m = DispersionModel::unpinned_nn();
        let w0 = |k: f64| c(1.0 + e_plus(k));
        let f = KineticField::from_fn(&m, small(), 1.0, w0).unwrap();
        let g = evolve_kinetic(&f, 1.0, 0.01).unwrap();
        let k0 = g.nodes()[g.grid.nearest(0.3)];
        let est = mc_solution(&m, w0, 1.0, k0, 1.0, 1.0, 20_000, StreamId::new(2, "agree")).unwrap();
        let diff = (est.mean - g.value_at(k0)).norm();
        assert!(diff < 4.0 * est.stderr(), "{diff} vs {}", est.stderr());
    }

    #[test]
    fn resolvent_identities() {
        let grid = GridSpec::kinetic_default().build();
        let r0 = resolvent_system(c(0.0), &grid).unwrap();
        assert!((r0.a + r0.a_minus).norm() < 1e-12 && (r0.a + r0.a_plus).norm() < 1e-12);
        assert!(r0.delta.norm() < 1e-12);
        // closed form of 1 - int e_1 e_{-1} / r
        assert!((r0.a - c(3.0 * 3f64.sqrt() - 4.5)).norm() < 1e-10, "{}", r0.a);
        for &l in &[Complex64::new(0.3, 0.4), Complex64::new(2.0, -1.0), c(1e-4)] {
            let r = resolvent_system(l, &grid).unwrap();
            assert!(r.identity_defect() < 1e-12);
        }
        assert!(resolvent_system(c(-1.0), &grid).is_err());
        assert!(min_abs_d_on_arc(0.1, 32, &grid).unwrap() > 0.0);
    }

    #[test]
    fn profile_trivial() {
        assert_eq!(fractional_profile(c(2.0), 1.0, 0.0, Regime::Stable, 4.5), c(2.0));
        assert_eq!(fractional_profile(c(2.0), 0.0, 3.0, Regime::Gaussian, 4.5), c(2.0));
    }

    #[test]
    fn ba_norm_detects_unresolved_weight() {
        let grid = small().build();
        let ok = grid.map(|k| k * k);
        assert!(ba_norm(&ok, &grid, 0.5).is_ok());
        let bad = grid.map(|_| 1.0);
        assert!(ba_norm(&bad, &grid, 1.0).is_err());
    }
}
