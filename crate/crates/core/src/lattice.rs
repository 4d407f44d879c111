//! Periodic harmonic chain with momentum-exchange noise, integrated by a
//! Strang splitting of exact sub-flows, and the averaged Wigner transform of
//! its wave function `psi = omega~ * q + i p`.
//!
//! The harmonic flow is a per-mode rotation in Fourier space. The noise
//! generated by `Y_x` rotates the triple `(p_{x-1}, p_x, p_{x+1})` about
//! `(1,1,1)/sqrt 3`; triples of one colour class are disjoint, so a noise
//! step is a palindrome of exact rotations. Both sub-flows conserve energy
//! and total momentum up to rounding.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{evolve_kinetic, GridSpec, KineticField};
use crate::model::DispersionModel;
use crate::rng::{pairwise_sum, StreamId, StreamRng};

/// Precomputed tables shared by every realization.
pub struct LatticeDynamics {
    pub l: usize,
    pub eps: f64,
    pub model: DispersionModel,
    /// `omega(m / L)`
    omega: Vec<f64>,
    /// `alpha^(m / L)`
    alpha_hat: Vec<f64>,
    colors: Vec<Vec<usize>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeDynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeDynamics")
            .field("l", &self.l)
            .field("eps", &self.eps)
            .field("model", &self.model.label())
            .finish()
    }
}

/// Per-mode rotation for one harmonic step length.
struct HarmonicTable {
    h: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// `(cos x, sin x)` nudged by at most one ulp each so that `c^2 + s^2 - 1`
/// is as small as floating point allows. A table reused every step would
/// otherwise scale the energy by the same rounding factor each time.
fn unit_sin_cos(x: f64) -> (f64, f64) {
    let (s0, c0) = x.sin_cos();
    let near = |v: f64| [next_down(v), v, next_up(v)];
    let mut best = (c0, s0, f64::INFINITY);
    for c in near(c0) {
        for s in near(s0) {
            let e = c.mul_add(c, s.mul_add(s, -1.0)).abs();
            if e < best.2 {
                best = (c, s, e);
            }
        }
    }
    (best.0, best.1)
}

fn next_up(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        return v;
    }
    if v == 0.0 {
        return f64::from_bits(1);
    }
    let b = v.to_bits();
    f64::from_bits(if v > 0.0 { b + 1 } else { b - 1 })
}

fn next_down(v: f64) -> f64 {
    -next_up(-v)
}

impl LatticeDynamics {
    pub fn new(model: &DispersionModel, l: usize, eps: f64) -> Result<Self> {
        if l < 4 || !l.is_power_of_two() {
            return Err(Error::Precondition(format!(
                "L must be a power of 2 and at least 4, got {l}"
            )));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Precondition(format!("eps must lie in [0, 1], got {eps}")));
        }
        model.validate()?;
        let ks: Vec<f64> = (0..l).map(|m| m as f64 / l as f64).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            l,
            eps,
            model: model.clone(),
            omega: ks.iter().map(|&k| model.omega(k)).collect(),
            alpha_hat: ks.iter().map(|&k| model.alpha_hat(k)).collect(),
            colors: colour_classes(l),
            fwd: planner.plan_fft_forward(l),
            inv: planner.plan_fft_inverse(l),
        })
    }

    pub fn colors(&self) -> &[Vec<usize>] {
        &self.colors
    }

    fn table(&self, h: f64) -> HarmonicTable {
        let (cos, sin) = self.omega.iter().map(|&w| unit_sin_cos(w * h)).unzip();
        HarmonicTable { h, cos, sin }
    }

    /// `(q^, p^)` from one complex transform of `q + i p`.
    fn split_transform(&self, z: &[Complex64], m: usize) -> (Complex64, Complex64) {
        let mm = (self.l - m) % self.l;
        let (a, b) = (z[m], z[mm].conj());
        ((a + b) * 0.5, (a - b) * Complex64::new(0.0, -0.5))
    }

    fn apply_harmonic(&self, state: &mut LatticeState, table: &HarmonicTable, buf: &mut Vec<Complex64>) {
        let l = self.l;
        buf.clear();
        buf.extend(state.q.iter().zip(&state.p).map(|(&q, &p)| Complex64::new(q, p)));
        self.fwd.process(buf);
        let mut out = vec![Complex64::new(0.0, 0.0); l];
        for m in 0..l {
            let (qh, ph) = self.split_transform(buf, m);
            let w = self.omega[m];
            let (q2, p2) = if w > 0.0 {
                // rotate (omega q^, p^), which carries the energy
                let (c, s) = (table.cos[m], table.sin[m]);
                let a = qh * w;
                ((a * c + ph * s) / w, ph * c - a * s)
            } else {
                (qh + ph * table.h, ph)
            };
            out[m] = q2 + Complex64::i() * p2;
        }
        self.inv.process(&mut out);
        let scale = 1.0 / l as f64;
        out.iter_mut().for_each(|z| *z *= scale);
        // one refinement pass: the transform pair has a small systematic
        // gain, which would otherwise accumulate in the energy step by step
        buf.clear();
        buf.extend_from_slice(&out);
        self.fwd.process(buf);
        self.inv.process(buf);
        for (y, (z, r)) in out.iter().zip(buf.iter()).enumerate() {
            let v = z * 2.0 - r * scale;
            state.q[y] = v.re;
            state.p[y] = v.im;
        }
    }

    /// Fourier transform of the wave function, `psi^(m/L) = omega q^ + i p^`.
    pub fn psi_hat(&self, state: &LatticeState) -> Vec<Complex64> {
        let mut z: Vec<Complex64> = state
            .q
            .iter()
            .zip(&state.p)
            .map(|(&q, &p)| Complex64::new(q, p))
            .collect();
        self.fwd.process(&mut z);
        (0..self.l)
            .map(|m| {
                let (qh, ph) = self.split_transform(&z, m);
                qh * self.omega[m] + Complex64::i() * ph
            })
            .collect()
    }

    /// Real `(p, q)` whose wave function has transform `psi_hat`. On an
    /// acoustic chain the real part of the `k = 0` mode carries no energy
    /// and is dropped.
    pub fn state_from_psi_hat(&self, psi_hat: &[Complex64]) -> LatticeState {
        let l = self.l;
        let mut z = vec![Complex64::new(0.0, 0.0); l];
        for m in 0..l {
            let mm = (l - m) % l;
            let (a, b) = (psi_hat[m], psi_hat[mm].conj());
            let wq = (a + b) * 0.5;
            let ph = (a - b) * Complex64::new(0.0, -0.5);
            let qh = if self.omega[m] > 0.0 {
                wq / self.omega[m]
            } else {
                Complex64::new(0.0, 0.0)
            };
            z[m] = qh + Complex64::i() * ph;
        }
        self.inv.process(&mut z);
        let s = 1.0 / l as f64;
        LatticeState {
            p: z.iter().map(|c| c.im * s).collect(),
            q: z.iter().map(|c| c.re * s).collect(),
            clock: 0.0,
        }
    }

    /// `H = (1/2) sum p^2 + (1/2) sum alpha(y - y') q_y q_y'`.
    pub fn energy(&self, state: &LatticeState) -> f64 {
        let mut z: Vec<Complex64> = state.q.iter().map(|&q| Complex64::new(q, 0.0)).collect();
        self.fwd.process(&mut z);
        let pot: Vec<f64> = z.iter().zip(&self.alpha_hat).map(|(c, a)| a * c.norm_sqr()).collect();
        let kin: Vec<f64> = state.p.iter().map(|p| p * p).collect();
        0.5 * pairwise_sum(&kin) + 0.5 * pairwise_sum(&pot) / self.l as f64
    }

    /// `sum_y |psi_y|^2 = 2 H`.
    pub fn wave_mass(&self, state: &LatticeState) -> f64 {
        2.0 * self.energy(state)
    }

    /// Exact harmonic flow over `h`.
    pub fn step_harmonic(&self, state: &mut LatticeState, h: f64) {
        let table = self.table(h);
        let mut buf = Vec::with_capacity(self.l);
        self.apply_harmonic(state, &table, &mut buf);
        state.clock += h;
    }

    /// Noise over `h`: colours in palindromic order, each with an
    /// independent half-step increment.
    pub fn step_noise<R: Rng + ?Sized>(&self, state: &mut LatticeState, h: f64, rng: &mut R) {
        if self.eps == 0.0 {
            return;
        }
        let sd = (3.0 * self.eps * 0.5 * h).sqrt();
        let n = self.colors.len();
        for c in (0..n).chain((0..n).rev()) {
            for &x in &self.colors[c] {
                let z: f64 = rng.sample(StandardNormal);
                rotate_triple(&mut state.p, x, -sd * z);
            }
        }
    }

    /// Strang splitting `H(h/2) N(h) H(h/2)` to `clock + t_micro`.
    pub fn evolve<R: Rng + ?Sized>(&self, state: &mut LatticeState, t_micro: f64, h: f64, rng: &mut R) -> Result<()> {
        if !(h > 0.0) || !(t_micro >= 0.0) {
            return Err(Error::Precondition(format!(
                "need h > 0 and t >= 0, got h={h}, t={t_micro}"
            )));
        }
        if t_micro == 0.0 {
            return Ok(());
        }
        let steps = (t_micro / h).ceil().max(1.0) as usize;
        let dt = t_micro / steps as f64;
        let half = self.table(0.5 * dt);
        let full = self.table(dt);
        let mut buf = Vec::with_capacity(self.l);
        self.apply_harmonic(state, &half, &mut buf);
        for n in 0..steps {
            self.step_noise(state, dt, rng);
            let t = if n + 1 == steps { &half } else { &full };
            self.apply_harmonic(state, t, &mut buf);
        }
        state.clock += t_micro;
        Ok(())
    }

    /// Largest microscopic time before a wave crosses half the ring.
    pub fn wrap_horizon(&self) -> f64 {
        let v = self.model.sup_abs_omega_prime() / (2.0 * PI);
        0.5 * self.l as f64 / v
    }
}

/// Colour classes `x mod 3` on the first `3 floor(L/3)` sites; the one or
/// two leftover sites get a class each, since their triples wrap onto
/// class 0 and onto each other.
pub fn colour_classes(l: usize) -> Vec<Vec<usize>> {
    let full = 3 * (l / 3);
    let mut classes: Vec<Vec<usize>> = (0..3).map(|c| (c..full).step_by(3).collect()).collect();
    classes.extend((full..l).map(|x| vec![x]));
    classes.retain(|c| !c.is_empty());
    classes
}

/// Rotates `(p_{x-1}, p_x, p_{x+1})` by `angle` about `(1,1,1)/sqrt 3`.
pub fn rotate_triple(p: &mut [f64], x: usize, angle: f64) {
    let l = p.len();
    let (i, k) = ((x + l - 1) % l, (x + 1) % l);
    let (a, b, c) = (p[i], p[x], p[k]);
    let mean = (a + b + c) / 3.0;
    let (ua, ub, uc) = (a - mean, b - mean, c - mean);
    let (s, co) = angle.sin_cos();
    let r = s / 3f64.sqrt();
    p[i] = mean + ua * co + (c - b) * r;
    p[x] = mean + ub * co + (a - c) * r;
    p[k] = mean + uc * co + (b - a) * r;
}

/// `(beta * p)_y` with `beta = (-1, -2, 6, -2, -1)`.
pub fn beta_convolution(p: &[f64]) -> Vec<f64> {
    let l = p.len();
    (0..l)
        .map(|y| {
            let at = |d: isize| p[(y as isize + d).rem_euclid(l as isize) as usize];
            6.0 * at(0) - 2.0 * (at(-1) + at(1)) - (at(-2) + at(2))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Microscopic time.
    pub clock: f64,
}

impl LatticeState {
    pub fn zeros(l: usize) -> Self {
        Self {
            p: vec![0.0; l],
            q: vec![0.0; l],
            clock: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn momentum(&self) -> f64 {
        pairwise_sum(&self.p)
    }

    /// `sum |p_y|`, the scale for momentum drift.
    pub fn momentum_scale(&self) -> f64 {
        self.p.iter().map(|x| x.abs()).sum()
    }
}

/// Gaussian packet with a random-phase carrier field:
/// `psi_y = g(eps y) zeta_y`, `g^2` a Gaussian of width `width` about
/// `x_center` in macroscopic units, `zeta` stationary with spectral density
/// `S(k)` a wrapped Gaussian about `k_center`. The limit Wigner function is
/// `W_0(x, k) = mass S(k) g^2(x) / 2` with `int W_0 = mass`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub x_center: f64,
    pub width: f64,
    pub k_center: f64,
    pub k_width: f64,
    pub mass: f64,
}

impl PacketSpec {
    /// Centred packet for a ring of `l` sites at coupling `eps`.
    pub fn centred(l: usize, eps: f64) -> Self {
        Self {
            x_center: 0.5 * eps * l as f64,
            width: 2.0,
            k_center: 0.25,
            k_width: 0.05,
            mass: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.k_width > 0.0 && self.k_width < 0.25 && self.mass >= 0.0) {
            return Err(Error::Precondition(format!("invalid packet {self:?}")));
        }
        Ok(())
    }

    /// Unnormalised wrapped Gaussian in `k`.
    fn s_raw(&self, k: f64) -> f64 {
        (-3..=3)
            .map(|n| {
                let d = k - self.k_center + n as f64;
                (-d * d / (2.0 * self.k_width * self.k_width)).exp()
            })
            .sum()
    }

    /// Spectral density with `int S = 1`.
    pub fn spectral_density(&self, k: f64) -> f64 {
        self.s_raw(k) / ((2.0 * PI).sqrt() * self.k_width)
    }

    /// `int g^2(x) e^{-2 pi i p x} dx` with `int g^2 = 2`.
    pub fn envelope_transform(&self, p: f64) -> Complex64 {
        let decay = (-2.0 * PI * PI * self.width * self.width * p * p).exp();
        Complex64::from_polar(2.0 * decay, -2.0 * PI * p * self.x_center)
    }

    /// Limit initial Wigner function in Fourier variables,
    /// `mass S(k) g^2^(p) / 2`.
    pub fn wigner0(&self, p: f64, k: f64) -> Complex64 {
        self.envelope_transform(p) * (0.5 * self.mass * self.spectral_density(k))
    }
}

/// One realization: state plus its private noise stream.
#[derive(Clone, Debug)]
pub struct Realization {
    pub state: LatticeState,
    pub rng: StreamRng,
    pub index: u64,
}

#[derive(Debug)]
pub struct LatticeEnsemble {
    pub dynamics: LatticeDynamics,
    pub members: Vec<Realization>,
    pub packet: PacketSpec,
    pub stream: StreamId,
}

/// Draws `m` independent packets. The initial field of member `i` uses
/// stream `(init, i)`, its noise stream `(noise, i)`.
pub fn init_ensemble(
    model: &DispersionModel,
    packet: PacketSpec,
    l: usize,
    eps: f64,
    m: usize,
    stream: StreamId,
) -> Result<LatticeEnsemble> {
    packet.validate()?;
    let dynamics = LatticeDynamics::new(model, l, eps)?;
    if eps == 0.0 {
        return Err(Error::Precondition("eps must be positive for a packet".into()));
    }
    let amp = amplitude_tables(&dynamics, &packet);
    let init = stream.child("init");
    let noise = stream.child("noise");
    let members = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = init.rng(i as u64);
            let state = draw_packet(&dynamics, &amp, &mut rng);
            Realization {
                state,
                rng: noise.rng(i as u64),
                index: i as u64,
            }
        })
        .collect();
    Ok(LatticeEnsemble {
        dynamics,
        members,
        packet,
        stream,
    })
}

struct AmplitudeTables {
    /// `sqrt(L S(m/L))`, normalised so that `E|zeta_y|^2 = 1`
    spectral: Vec<f64>,
    /// `g(eps y)`
    envelope: Vec<f64>,
}

fn amplitude_tables(dynamics: &LatticeDynamics, packet: &PacketSpec) -> AmplitudeTables {
    let l = dynamics.l;
    let s: Vec<f64> = (0..l).map(|m| packet.s_raw(m as f64 / l as f64)).collect();
    let norm = s.iter().sum::<f64>() / l as f64;
    let spectral = s.iter().map(|x| (l as f64 * x / norm).sqrt()).collect();
    // g^2 = (2 mass / (sqrt(2 pi) width)) exp(-(x - x0)^2 / (2 width^2))
    let a2 = 2.0 * packet.mass / ((2.0 * PI).sqrt() * packet.width);
    let envelope = (0..l)
        .map(|y| {
            let d = dynamics.eps * y as f64 - packet.x_center;
            (a2 * (-d * d / (2.0 * packet.width * packet.width)).exp()).sqrt()
        })
        .collect();
    AmplitudeTables { spectral, envelope }
}

fn draw_packet<R: Rng + ?Sized>(dynamics: &LatticeDynamics, amp: &AmplitudeTables, rng: &mut R) -> LatticeState {
    let l = dynamics.l;
    let mut zeta: Vec<Complex64> = amp
        .spectral
        .iter()
        .map(|a| Complex64::from_polar(*a, 2.0 * PI * rng.gen::<f64>()))
        .collect();
    dynamics.inv.process(&mut zeta);
    let mut psi: Vec<Complex64> = zeta
        .iter()
        .zip(&amp.envelope)
        .map(|(z, g)| z * (g / l as f64))
        .collect();
    dynamics.fwd.process(&mut psi);
    dynamics.state_from_psi_hat(&psi)
}

/// Exact expectation `E[psi^*(k_{m-j}) psi^(k_{m+j})]` for the packet on a
/// ring of `L` sites, before the `k = 0` projection; a circular convolution
/// of `S` with `g^*(. ) g^(. + 2j)`.
pub fn exact_initial_wigner(ensemble: &LatticeEnsemble, j: i64) -> Vec<Complex64> {
    let d = &ensemble.dynamics;
    let l = d.l;
    let amp = amplitude_tables(d, &ensemble.packet);
    let mut g: Vec<Complex64> = amp.envelope.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    d.fwd.process(&mut g);
    let shift = (2 * j).rem_euclid(l as i64) as usize;
    // psi^_b = (1/L) sum_n g^_{b-n} zeta^_n, zeta^ phases independent:
    // E = (1/L^2) sum_n |zeta^_n|^2 g^*_{a-n} g^_{a+2j-n}
    let mut u: Vec<Complex64> = (0..l).map(|c| g[c].conj() * g[(c + shift) % l]).collect();
    let mut h: Vec<Complex64> = amp.spectral.iter().map(|a| Complex64::new(a * a, 0.0)).collect();
    d.fwd.process(&mut u);
    d.fwd.process(&mut h);
    let mut conv: Vec<Complex64> = u.iter().zip(&h).map(|(a, b)| a * b).collect();
    d.inv.process(&mut conv);
    let s = 1.0 / (l as f64 * l as f64 * l as f64);
    // result indexed by a = m - j
    let mut out = vec![Complex64::new(0.0, 0.0); l];
    for (a, c) in conv.iter().enumerate() {
        let m = (a as i64 + j).rem_euclid(l as i64) as usize;
        out[m] = c * s;
    }
    out
}

impl LatticeEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Evolves every member by `t_micro` with step `h`.
    pub fn evolve(&mut self, t_micro: f64, h: f64) -> Result<()> {
        if self
            .dynamics
            .clock_would_wrap(self.members.first().map_or(0.0, |m| m.state.clock) + t_micro)
        {
            return Err(Error::Precondition(format!(
                "waves wrap around the ring before t = {t_micro}; increase L"
            )));
        }
        let d = &self.dynamics;
        self.members
            .par_iter_mut()
            .try_for_each(|m| d.evolve(&mut m.state, t_micro, h, &mut m.rng))
    }

    /// `(eps/2) sum_y |psi_y|^2` per member.
    pub fn wigner_masses(&self) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| 0.5 * self.dynamics.eps * self.dynamics.wave_mass(&m.state))
            .collect()
    }

    /// Spectral `p` values `2 j / (eps L)`, which align `k +- eps p / 2`
    /// with the lattice frequencies.
    pub fn p_of(&self, j: i64) -> f64 {
        2.0 * j as f64 / (self.dynamics.eps * self.dynamics.l as f64)
    }

    pub fn p_step(&self) -> f64 {
        self.p_of(1)
    }

    /// `j` with `p_of(j) = p`, if aligned.
    pub fn align(&self, p: f64) -> Result<i64> {
        let j = p / self.p_step();
        if (j - j.round()).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "p = {p} is not a multiple of 2 / (eps L) = {}",
                self.p_step()
            )));
        }
        Ok(j.round() as i64)
    }
}

impl LatticeDynamics {
    fn clock_would_wrap(&self, t: f64) -> bool {
        t > self.wrap_horizon()
    }
}

/// Ensemble-averaged `(eps/2) psi^*(k - eps p/2) psi^(k + eps p/2)` on
/// `k = m / L`, with per-cell standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WignerTable {
    pub t_macro: f64,
    pub p: Vec<f64>,
    pub j: Vec<i64>,
    pub k: Vec<f64>,
    /// `mean[row][m]`
    pub mean: Vec<Vec<Complex64>>,
    pub stderr: Vec<Vec<f64>>,
    pub n: usize,
}

fn wigner_row(psi: &[Complex64], j: i64) -> impl Iterator<Item = Complex64> + '_ {
    let l = psi.len() as i64;
    (0..l).map(move |m| psi[(m - j).rem_euclid(l) as usize].conj() * psi[(m + j).rem_euclid(l) as usize])
}

pub fn wigner_estimate(ensemble: &LatticeEnsemble, p_grid: &[f64]) -> Result<WignerTable> {
    if ensemble.len() < 2 {
        return Err(Error::Precondition("Wigner estimate needs two or more members".into()));
    }
    let js: Vec<i64> = p_grid.iter().map(|&p| ensemble.align(p)).collect::<Result<_>>()?;
    let d = &ensemble.dynamics;
    let l = d.l;
    let half_eps = 0.5 * d.eps;
    let zero = || {
        (
            vec![vec![Complex64::new(0.0, 0.0); l]; js.len()],
            vec![vec![0.0; l]; js.len()],
        )
    };
    let (sum, sq) = ensemble
        .members
        .par_iter()
        .fold(zero, |(mut s, mut q), m| {
            let psi = d.psi_hat(&m.state);
            for (r, &j) in js.iter().enumerate() {
                for (i, w) in wigner_row(&psi, j).enumerate() {
                    let w = w * half_eps;
                    s[r][i] += w;
                    q[r][i] += w.norm_sqr();
                }
            }
            (s, q)
        })
        .reduce(zero, |(mut s1, mut q1), (s2, q2)| {
            for r in 0..s1.len() {
                for i in 0..l {
                    s1[r][i] += s2[r][i];
                    q1[r][i] += q2[r][i];
                }
            }
            (s1, q1)
        });
    let n = ensemble.len() as f64;
    let mean: Vec<Vec<Complex64>> = sum.iter().map(|row| row.iter().map(|z| z / n).collect()).collect();
    let stderr = sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| {
            q.iter()
                .zip(mu)
                .map(|(q, m)| ((q / n - m.norm_sqr()).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect()
        })
        .collect();
    Ok(WignerTable {
        t_macro: ensemble.members[0].state.clock * d.eps,
        p: p_grid.to_vec(),
        j: js,
        k: (0..l).map(|m| m as f64 / l as f64).collect(),
        mean,
        stderr,
        n: ensemble.len(),
    })
}

impl WignerTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "p", "k", "re", "im", "stderr"])?;
        for (r, p) in self.p.iter().enumerate() {
            for (i, k) in self.k.iter().enumerate() {
                let z = self.mean[r][i];
                w.write_record(&[
                    format!("{}", self.t_macro),
                    format!("{p:e}"),
                    format!("{k:e}"),
                    format!("{:e}", z.re),
                    format!("{:e}", z.im),
                    format!("{:e}", self.stderr[r][i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `int int W(p, k) J^*(p, k) dp dk` by the rectangle rule on the table's
/// `p` rows (spacing `dp`) and the lattice frequencies.
pub fn pair_with_test_function<J: Fn(f64, f64) -> Complex64>(table: &WignerTable, dp: f64, j: J) -> Complex64 {
    let l = table.k.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (r, &p) in table.p.iter().enumerate() {
        for (i, &k) in table.k.iter().enumerate() {
            acc += table.mean[r][i] * j(p, crate::model::wrap(k)).conj();
        }
    }
    acc * (dp / l)
}

/// Test function tabulated on `j` rows and lattice frequencies.
pub struct TestTable {
    pub js: Vec<i64>,
    pub values: Vec<Vec<Complex64>>,
    pub dp: f64,
    /// `int sup_k |J| dp` on the rows.
    pub norm: f64,
}

impl TestTable {
    /// Tabulates `J` on all aligned `p` with `|p| <= p_max`.
    pub fn new<J: Fn(f64, f64) -> Complex64>(ensemble: &LatticeEnsemble, p_max: f64, j: J) -> Self {
        let jmax = (p_max / ensemble.p_step()).floor() as i64;
        let l = ensemble.dynamics.l;
        let js: Vec<i64> = (-jmax..=jmax).collect();
        let values: Vec<Vec<Complex64>> = js
            .iter()
            .map(|&jj| {
                let p = ensemble.p_of(jj);
                (0..l).map(|m| j(p, crate::model::wrap(m as f64 / l as f64))).collect()
            })
            .collect();
        let dp = ensemble.p_step();
        let norm = values
            .iter()
            .map(|row| row.iter().map(|z| z.norm()).fold(0.0, f64::max))
            .sum::<f64>()
            * dp;
        Self { js, values, dp, norm }
    }
}

/// Per-member pairings `<(eps/2) W, J>` and their mean and standard error.
pub fn pair_ensemble(ensemble: &LatticeEnsemble, test: &TestTable) -> (Complex64, f64) {
    let d = &ensemble.dynamics;
    let l = d.l as f64;
    let scale = 0.5 * d.eps * test.dp / l;
    let values: Vec<Complex64> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let psi = d.psi_hat(&m.state);
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, &j) in test.js.iter().enumerate() {
                for (w, t) in wigner_row(&psi, j).zip(&test.values[r]) {
                    acc += w * t.conj();
                }
            }
            acc * scale
        })
        .collect();
    let n = values.len() as f64;
    let mean: Complex64 = values.iter().sum::<Complex64>() / n;
    let var = values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Energy and momentum before and after a run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConservationLedger {
    pub energy_start: f64,
    pub energy_end: f64,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub momentum_scale: f64,
    pub steps: u64,
}

impl ConservationLedger {
    pub fn energy_drift(&self) -> f64 {
        ((self.energy_end - self.energy_start) / self.energy_start).abs()
    }

    /// Change of `sum p` relative to `sum |p|` at the start.
    pub fn momentum_drift(&self) -> f64 {
        (self.momentum_end - self.momentum_start).abs() / self.momentum_scale.max(f64::MIN_POSITIVE)
    }
}

/// Runs `steps` splitting steps of length `h` and records both conserved
/// quantities.
pub fn conservation_run<R: Rng + ?Sized>(
    dynamics: &LatticeDynamics,
    state: &mut LatticeState,
    h: f64,
    steps: u64,
    rng: &mut R,
) -> Result<ConservationLedger> {
    let energy_start = dynamics.energy(state);
    let momentum_start = state.momentum();
    let momentum_scale = state.momentum_scale();
    dynamics.evolve(state, h * steps as f64, h, rng)?;
    Ok(ConservationLedger {
        energy_start,
        energy_end: dynamics.energy(state),
        momentum_start,
        momentum_end: state.momentum(),
        momentum_scale,
        steps,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    l: usize,
    eps: f64,
    clock: f64,
    seed: u64,
    tag: u64,
    member: u64,
    energy: f64,
    momentum: f64,
    layout: String,
}

/// Binary dump of `p` then `q` as little-endian `f64`, with a JSON sidecar.
pub fn write_checkpoint(
    dynamics: &LatticeDynamics,
    member: &Realization,
    stream: &StreamId,
    path: &Path,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for x in member.state.p.iter().chain(&member.state.q) {
        f.write_all(&x.to_le_bytes())?;
    }
    f.flush()?;
    let header = CheckpointHeader {
        l: dynamics.l,
        eps: dynamics.eps,
        clock: member.state.clock,
        seed: stream.seed,
        tag: stream.tag,
        member: member.index,
        energy: dynamics.energy(&member.state),
        momentum: member.state.momentum(),
        layout: "p[0..L] then q[0..L], f64 little-endian".into(),
    };
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path, l: usize) -> Result<LatticeState> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != 16 * l {
        return Err(Error::Precondition(format!(
            "checkpoint holds {} bytes, expected {}",
            bytes.len(),
            16 * l
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    Ok(LatticeState {
        p: vals[..l].to_vec(),
        q: vals[l..].to_vec(),
        clock: header["clock"].as_f64().unwrap_or(0.0),
    })
}

/// Mean momentum increment of one noise step from a frozen state against
/// the drift `-(eps/2) (beta * p) h`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftCheck {
    pub h: f64,
    pub draws: usize,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Allowance for the `O(h^2)` bias: `2 eps h max |predicted|`.
    pub bias_allowance: f64,
}

impl DriftCheck {
    /// `max_y (|measured - predicted| - 4 stderr)`; the check passes when
    /// this is at most `bias_allowance`.
    pub fn worst_excess(&self) -> f64 {
        (0..self.predicted.len())
            .map(|y| (self.measured[y] - self.predicted[y]).abs() - 4.0 * self.stderr[y])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.worst_excess() <= self.bias_allowance
    }
}

/// Repeats one noise step `draws` times from `state`, in 8 independent
/// chunks of the stream.
pub fn noise_drift_check(
    dynamics: &LatticeDynamics,
    state: &LatticeState,
    h: f64,
    draws: usize,
    stream: StreamId,
) -> DriftCheck {
    let l = state.len();
    let eps = dynamics.eps;
    let predicted: Vec<f64> = beta_convolution(&state.p).iter().map(|b| -0.5 * eps * b * h).collect();
    let chunks = 8usize;
    let per = draws.div_ceil(chunks);
    let sums: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut r = stream.rng(c);
            let (mut s1, mut s2) = (vec![0.0; l], vec![0.0; l]);
            for _ in 0..per {
                let mut s = state.clone();
                dynamics.step_noise(&mut s, h, &mut r);
                for y in 0..l {
                    let dp = s.p[y] - state.p[y];
                    s1[y] += dp;
                    s2[y] += dp * dp;
                }
            }
            (s1, s2)
        })
        .collect();
    let n = (per * chunks) as f64;
    let mut measured = vec![0.0; l];
    let mut stderr = vec![0.0; l];
    for y in 0..l {
        let s1: f64 = sums.iter().map(|s| s.0[y]).sum();
        let s2: f64 = sums.iter().map(|s| s.1[y]).sum();
        measured[y] = s1 / n;
        stderr[y] = ((s2 / n - measured[y] * measured[y]).max(0.0) / n).sqrt();
    }
    let scale = predicted.iter().map(|x| x.abs()).fold(0.0, f64::max);
    DriftCheck {
        h,
        draws: per * chunks,
        predicted,
        measured,
        stderr,
        bias_allowance: 2.0 * eps * h * scale,
    }
}

/// Separable test function `G(p) e^{-2 pi i p x0} j_k(k)` with a Gaussian
/// `G` of width `p_width`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestFunction {
    pub name: String,
    pub p_width: f64,
    pub x0: f64,
    /// Fourier mode `n` of `j_k`: `cos(2 pi n k)` for `n >= 0`,
    /// `sin(2 pi |n| k)` for `n < 0`.
    pub mode: i32,
}

impl TestFunction {
    pub fn eval(&self, p: f64, k: f64) -> Complex64 {
        let g = (-p * p / (2.0 * self.p_width * self.p_width)).exp();
        let jk = if self.mode >= 0 {
            (2.0 * PI * self.mode as f64 * k).cos()
        } else {
            (2.0 * PI * (-self.mode) as f64 * k).sin()
        };
        Complex64::from_polar(g * jk, -2.0 * PI * p * self.x0)
    }

    /// The three probes used by the comparison: local mass at the packet,
    /// its first odd `k` moment, and a second harmonic one unit to the right.
    pub fn standard(packet: &PacketSpec) -> Vec<Self> {
        let x = packet.x_center;
        vec![
            Self {
                name: "mass".into(),
                p_width: 0.1,
                x0: x,
                mode: 0,
            },
            Self {
                name: "sin".into(),
                p_width: 0.1,
                x0: x,
                mode: -1,
            },
            Self {
                name: "cos2-shift".into(),
                p_width: 0.1,
                x0: x + 1.0,
                mode: 2,
            },
        ]
    }
}

/// Settings for one lattice against kinetic comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub l: usize,
    pub eps: f64,
    pub members: usize,
    /// Macroscopic times.
    pub times: Vec<f64>,
    /// Microscopic splitting step.
    pub h: f64,
    pub kinetic_dt: f64,
    pub grid: GridSpec,
    /// Rows `|p| <= p_max` enter the pairings.
    pub p_max: f64,
    /// Multiplies the kinetic scattering operator.
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub test: String,
    pub lattice: Complex64,
    pub lattice_stderr: f64,
    pub kinetic: Complex64,
    pub norm: f64,
}

impl ComparisonRow {
    pub fn discrepancy(&self) -> f64 {
        (self.lattice - self.kinetic).norm()
    }

    /// `|lattice - kinetic| <= frac ||J|| + z stderr`.
    pub fn within(&self, frac: f64, z: f64) -> bool {
        self.discrepancy() <= frac * self.norm + z * self.lattice_stderr
    }
}

/// Evolves a packet ensemble and the kinetic equation side by side and
/// pairs both with each test function at each time.
pub fn kinetic_comparison(
    model: &DispersionModel,
    spec: &ComparisonSpec,
    packet: PacketSpec,
    tests: &[TestFunction],
    stream: StreamId,
) -> Result<Vec<ComparisonRow>> {
    let mut ens = init_ensemble(model, packet, spec.l, spec.eps, spec.members, stream)?;
    let t_end = spec.times.iter().cloned().fold(0.0, f64::max);
    if t_end / spec.eps > ens.dynamics.wrap_horizon() {
        return Err(Error::Precondition(format!(
            "t = {t_end} needs more than {} sites to avoid wrapping",
            spec.l
        )));
    }
    let tables: Vec<TestTable> = tests
        .iter()
        .map(|f| TestTable::new(&ens, spec.p_max, |p, k| f.eval(p, k)))
        .collect();
    let js = tables[0].js.clone();
    let dp = ens.p_step();
    // kinetic side, one field per aligned p, advanced through all times
    let kinetic: Vec<Vec<Vec<Complex64>>> = js
        .par_iter()
        .map(|&j| -> Result<Vec<Vec<Complex64>>> {
            let p = ens.p_of(j);
            let mut f = KineticField::from_fn(model, spec.grid, p, |k| packet.wigner0(p, k))?.with_scale(spec.scale);
            let mut now = 0.0;
            let mut rows = Vec::new();
            for &t in &spec.times {
                f = evolve_kinetic(&f, t - now, spec.kinetic_dt)?;
                now = t;
                rows.push(tests.iter().map(|tf| f.pair(|k| tf.eval(p, k))).collect());
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut now = 0.0;
    for (ti, &t) in spec.times.iter().enumerate() {
        ens.evolve((t - now) / spec.eps, spec.h)?;
        now = t;
        for (fi, tf) in tests.iter().enumerate() {
            let (lat, se) = pair_ensemble(&ens, &tables[fi]);
            let kin: Complex64 = kinetic.iter().map(|rows| rows[ti][fi]).sum::<Complex64>() * dp;
            out.push(ComparisonRow {
                t,
                test: tf.name.clone(),
                lattice: lat,
                lattice_stderr: se,
                kinetic: kin,
                norm: tables[fi].norm,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn random_state(l: usize, seed: u64) -> LatticeState {
        let mut r = StreamId::new(seed, "state").rng(0);
        LatticeState {
            p: (0..l).map(|_| r.sample(StandardNormal)).collect(),
            q: (0..l).map(|_| r.sample(StandardNormal)).collect(),
            clock: 0.0,
        }
    }

    #[test]
    fn colour_classes_have_disjoint_triples() {
        for l in [4usize, 5, 8, 12, 16, 1024, 4096] {
            let classes = colour_classes(l);
            let mut seen = vec![0; l];
            for class in &classes {
                let mut used = vec![false; l];
                for &x in class {
                    seen[x] += 1;
                    for s in [(x + l - 1) % l, x, (x + 1) % l] {
                        assert!(!used[s], "L = {l}: overlap at {s}");
                        used[s] = true;
                    }
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn rotation_preserves_both_invariants() {
        let mut p = vec![1.0, 0.0, 0.0];
        for a in [0.1, 1.0, -2.5, 10.0] {
            rotate_triple(&mut p, 1, a);
            let s2: f64 = p.iter().map(|x| x * x).sum();
            let s1: f64 = p.iter().sum();
            assert!((s2 - 1.0).abs() < 1e-15 && (s1 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_frequency_has_period() {
        // pinned model with alpha_0 only: omega = w0 for every k
        let m = DispersionModel::from_potential(vec![4.0]).unwrap();
        let d = LatticeDynamics::new(&m, 16, 0.0).unwrap();
        let s0 = random_state(16, 1);
        let mut s = s0.clone();
        let period = 2.0 * PI / 2.0;
        for _ in 0..7 {
            d.step_harmonic(&mut s, period / 7.0);
        }
        for (a, b) in s.p.iter().chain(&s.q).zip(s0.p.iter().chain(&s0.q)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_energy_and_single_mode() {
        let m = DispersionModel::unpinned_nn();
        let d = LatticeDynamics::new(&m, 64, 0.0).unwrap();
        let mut s = random_state(64, 2);
        // zero total momentum, else the centre of mass drifts and inflates q
        let mean = s.momentum() / 64.0;
        s.p.iter_mut().for_each(|x| *x -= mean);
        let e0 = d.energy(&s);
        for _ in 0..10_000 {
            d.step_harmonic(&mut s, 0.1);
        }
        let drift = ((d.energy(&s) - e0) / e0).abs();
        assert!(drift < 1e-12, "drift {drift}");
        let mut single = LatticeState::zeros(64);
        for y in 0..64 {
            single.q[y] = (2.0 * PI * 5.0 * y as f64 / 64.0).cos();
        }
        d.step_harmonic(&mut single, 0.37);
        let psi = d.psi_hat(&single);
        for (mm, z) in psi.iter().enumerate() {
            if mm != 5 && mm != 59 {
                assert!(z.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = DispersionModel::unpinned_nn();
        let d = LatticeDynamics::new(&m, 16, 0.0).unwrap();
        let mut s = random_state(16, 3);
        let s0 = s.clone();
        d.step_noise(&mut s, 0.1, &mut StreamId::new(1, "n").rng(0));
        assert_eq!(s, s0);
    }

    #[test]
    fn noise_preserves_energy_per_step() {
        let m = DispersionModel::unpinned_nn();
        let d = LatticeDynamics::new(&m, 64, 0.5).unwrap();
        let mut s = random_state(64, 4);
        let mut r = StreamId::new(1, "n").rng(0);
        for _ in 0..100 {
            let (e, mom) = (d.energy(&s), s.momentum());
            d.step_noise(&mut s, 0.1, &mut r);
            assert!(((d.energy(&s) - e) / e).abs() < 1e-14);
            assert!((s.momentum() - mom).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_drift_matches_beta() {
        // frozen state, many noise steps: E[dp] = -(eps/2)(beta * p) h + O(h^2)
        let m = DispersionModel::unpinned_nn();
        let d = LatticeDynamics::new(&m, 16, 1.0).unwrap();
        let s0 = random_state(16, 5);
        let c = noise_drift_check(&d, &s0, 0.01, 200_000, StreamId::new(6, "drift"));
        assert!(c.passes(), "{} > {}", c.worst_excess(), c.bias_allowance);
        // a wrong sign of the drift is detected
        let flipped = DriftCheck {
            predicted: c.predicted.iter().map(|x| -x).collect(),
            ..c
        };
        assert!(!flipped.passes());
    }

    #[test]
    fn zero_mass_packet_is_rest() {
        let m = DispersionModel::unpinned_nn();
        let mut spec = PacketSpec::centred(64, 0.5);
        spec.mass = 0.0;
        let e = init_ensemble(&m, spec, 64, 0.5, 2, StreamId::new(1, "zero")).unwrap();
        assert!(e.members.iter().all(|r| e.dynamics.energy(&r.state) == 0.0));
    }

    #[test]
    fn initial_wigner_matches_exact_expectation() {
        let m = DispersionModel::pinned_nn(1.0).unwrap();
        let (l, eps) = (256, 0.25);
        let e = init_ensemble(
            &m,
            PacketSpec {
                width: 4.0,
                ..PacketSpec::centred(l, eps)
            },
            l,
            eps,
            400,
            StreamId::new(2, "w0"),
        )
        .unwrap();
        let masses = e.wigner_masses();
        let mean_mass = masses.iter().sum::<f64>() / masses.len() as f64;
        assert!((mean_mass - 1.0).abs() < 0.05, "{mean_mass}");
        for j in [0i64, 3] {
            let table = wigner_estimate(&e, &[e.p_of(j)]).unwrap();
            let exact = exact_initial_wigner(&e, j);
            let mut worst: f64 = 0.0;
            for i in 0..l {
                let z = (table.mean[0][i] - exact[i] * (0.5 * eps)).norm() / table.stderr[0][i].max(1e-12);
                worst = worst.max(z);
            }
            assert!(worst < 5.0, "j = {j}: worst z {worst}");
        }
    }

    #[test]
    fn ensemble_mass_and_location() {
        let m = DispersionModel::unpinned_nn();
        let (l, eps) = (1024, 0.1);
        let spec = PacketSpec::centred(l, eps);
        let e = init_ensemble(&m, spec, l, eps, 200, StreamId::new(7, "loc")).unwrap();
        let masses = e.wigner_masses();
        let mean = masses.iter().sum::<f64>() / 200.0;
        let sd = (masses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sd / 200f64.sqrt(), "{mean} +- {sd}");
        // local mass probe peaks at the packet centre
        let probe = |x0: f64| {
            let tf = TestFunction {
                name: "m".into(),
                p_width: 0.2,
                x0,
                mode: 0,
            };
            pair_ensemble(&e, &TestTable::new(&e, 1.0, |p, k| tf.eval(p, k))).0.re
        };
        let xs: Vec<f64> = (0..=20).map(|i| spec.x_center - 10.0 + i as f64).collect();
        let best = xs
            .iter()
            .cloned()
            .fold((0.0, f64::MIN), |b, x| if probe(x) > b.1 { (x, probe(x)) } else { b });
        assert!((best.0 - spec.x_center).abs() <= 1.0, "peak at {}", best.0);
        let row = &wigner_estimate(&e, &[0.0]).unwrap().mean[0];
        let kmax = (0..l).max_by(|&a, &b| row[a].re.total_cmp(&row[b].re)).unwrap() as f64 / l as f64;
        assert!((kmax - spec.k_center).abs() < 2.0 * spec.k_width, "peak at k = {kmax}");
    }

    #[test]
    fn initial_pairing_matches_packet() {
        let m = DispersionModel::unpinned_nn();
        let (l, eps) = (1024, 0.1);
        let spec = PacketSpec::centred(l, eps);
        let e = init_ensemble(&m, spec, l, eps, 64, StreamId::new(8, "p0")).unwrap();
        for tf in TestFunction::standard(&spec) {
            let table = TestTable::new(&e, 0.5, |p, k| tf.eval(p, k));
            let (lat, se) = pair_ensemble(&e, &table);
            let exact: Complex64 = table
                .js
                .iter()
                .map(|&j| {
                    let p = e.p_of(j);
                    // int over k of S(k) j_k(k) on a fine grid
                    let n = 4096;
                    (0..n)
                        .map(|i| {
                            let k = -0.5 + (i as f64 + 0.5) / n as f64;
                            spec.wigner0(p, k) * tf.eval(p, k).conj()
                        })
                        .sum::<Complex64>()
                        / n as f64
                })
                .sum::<Complex64>()
                * e.p_step();
            assert!(
                (lat - exact).norm() < 0.05 * exact.norm() + 3.0 * se,
                "{}: {lat} vs {exact}",
                tf.name
            );
        }
    }

    #[test]
    fn wigner_symmetries() {
        let m = DispersionModel::unpinned_nn();
        let (l, eps) = (256, 0.25);
        let e = init_ensemble(&m, PacketSpec::centred(l, eps), l, eps, 16, StreamId::new(3, "sym")).unwrap();
        let p = e.p_of(2);
        let t = wigner_estimate(&e, &[p, -p, 0.0]).unwrap();
        for i in 0..l {
            assert!((t.mean[0][i].conj() - t.mean[1][i]).norm() < 1e-12);
            assert!(t.mean[2][i].im.abs() < 1e-12 && t.mean[2][i].re >= 0.0);
        }
        let mass: f64 = t.mean[2].iter().map(|z| z.re).sum::<f64>() / l as f64;
        let direct = e.wigner_masses().iter().sum::<f64>() / e.len() as f64;
        assert!((mass - direct).abs() < 1e-12);
        assert!(wigner_estimate(&e, &[0.3 * e.p_step()]).is_err());
    }

    #[test]
    fn pairing_is_linear_and_gives_mass() {
        let m = DispersionModel::unpinned_nn();
        let (l, eps) = (128, 0.25);
        let e = init_ensemble(&m, PacketSpec::centred(l, eps), l, eps, 8, StreamId::new(4, "pair")).unwrap();
        let t = wigner_estimate(&e, &[0.0]).unwrap();
        let one = pair_with_test_function(&t, 1.0, |_, _| Complex64::new(1.0, 0.0));
        let direct = e.wigner_masses().iter().sum::<f64>() / e.len() as f64;
        assert!((one.re - direct).abs() < 1e-12);
        let j1 = |_: f64, k: f64| Complex64::new((2.0 * PI * k).cos(), 0.0);
        let j2 = |_: f64, k: f64| Complex64::new(0.0, k);
        let a = pair_with_test_function(&t, 1.0, |p, k| j1(p, k) * 2.0 + j2(p, k));
        let b = pair_with_test_function(&t, 1.0, j1) * 2.0 + pair_with_test_function(&t, 1.0, j2);
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DispersionModel::unpinned_nn();
        let e = init_ensemble(&m, PacketSpec::centred(64, 0.5), 64, 0.5, 1, StreamId::new(5, "ck")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        write_checkpoint(&e.dynamics, &e.members[0], &e.stream, &path).unwrap();
        let back = read_checkpoint(&path, 64).unwrap();
        assert_eq!(back, e.members[0].state);
    }

    proptest! {
        #[test]
        fn rotation_invariants_hold(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, angle in -50.0f64..50.0) {
            let mut p = vec![a, b, c];
            rotate_triple(&mut p, 1, angle);
            let n0 = a * a + b * b + c * c;
            let n1: f64 = p.iter().map(|x| x * x).sum();
            prop_assert!((n1 - n0).abs() <= 1e-13 * n0.max(1.0));
            prop_assert!((p.iter().sum::<f64>() - (a + b + c)).abs() <= 1e-12 * (a.abs() + b.abs() + c.abs()).max(1.0));
        }
    }
}
