//! Exact samplers for the skeleton chain and the jump process `K_t`.
//!
//! The scattering kernel has rank two, so one step of the chain is a
//! two-component mixture of the basis densities `e_1` and `e_{-1}`; each is
//! sampled by rejection from the uniform law on the torus.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{e_minus, e_plus, frak_r, Branch, TorusPoint};
use crate::quadrature::TorusGrid;

/// Rejection attempts after which the random source is declared broken.
pub const REJECTION_CAP: u64 = 1_000_000;

/// Default cap on the number of jumps in one trajectory.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Stationary mean holding time `int theta dpi`.
pub const THETA_BAR: f64 = 2.0 / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonChainState {
    pub k: TorusPoint,
    pub n: u64,
}

/// Draws from `e_iota` and also returns the number of uniform proposals used.
pub fn sample_basis_density_counted<R: Rng + ?Sized>(branch: Branch, rng: &mut R) -> Result<(TorusPoint, u64)> {
    draw_branch(branch, rng).map(|(k, _, n)| (TorusPoint::new(k), n))
}

pub fn sample_basis_density<R: Rng + ?Sized>(branch: Branch, rng: &mut R) -> Result<TorusPoint> {
    sample_basis_density_counted(branch, rng).map(|(k, _)| k)
}

/// Rejection draw returning `(k, sin^2(pi k), proposals)`. The acceptance
/// ratios `e_1 / (8/3) = s^2 s^2` and `e_{-1} / 2 = 4 s^2 (1 - s^2)` need one
/// sine per proposal, and the accepted `s^2` is reused by the next step.
fn draw_branch<R: Rng + ?Sized>(branch: Branch, rng: &mut R) -> Result<(f64, f64, u64)> {
    for attempt in 1..=REJECTION_CAP {
        let k = rng.gen::<f64>() - 0.5;
        let s = (PI * k).sin();
        let s2 = s * s;
        let ratio = match branch {
            Branch::Plus => s2 * s2,
            Branch::Minus => 4.0 * s2 * (1.0 - s2),
        };
        // ratio is 0 at k = 0, so the zero point is never accepted
        if rng.gen::<f64>() < ratio {
            return Ok((k, s2, attempt));
        }
    }
    Err(Error::RejectionCap(REJECTION_CAP))
}

/// Draws from `pi(dk) = (1/2) r(k) dk`.
pub fn sample_stationary<R: Rng + ?Sized>(rng: &mut R) -> Result<TorusPoint> {
    let branch = if rng.gen::<bool>() { Branch::Plus } else { Branch::Minus };
    sample_basis_density(branch, rng)
}

/// One step of the skeleton chain from `k`.
pub fn skeleton_step<R: Rng + ?Sized>(k: TorusPoint, rng: &mut R) -> Result<TorusPoint> {
    let s = (PI * k.value()).sin();
    step_from_s2(s * s, rng).map(|(k, _)| TorusPoint::new(k))
}

/// Skeleton step given `s^2 = sin^2(pi k)`: the weight of `e_1` is
/// `e_{-1} / r = 3 (1 - s^2) / (3 - 2 s^2)`.
fn step_from_s2<R: Rng + ?Sized>(s2: f64, rng: &mut R) -> Result<(f64, f64)> {
    if s2 == 0.0 {
        return Err(Error::Precondition("skeleton step from k = 0".into()));
    }
    let to_plus = 3.0 * (1.0 - s2) / (3.0 - 2.0 * s2);
    let branch = if rng.gen::<f64>() < to_plus {
        Branch::Plus
    } else {
        Branch::Minus
    };
    draw_branch(branch, rng).map(|(k, s2, _)| (k, s2))
}

/// Probability of moving into `e_1` from `k`, and into `e_{-1}`.
pub fn mixture_weights(k: f64) -> (f64, f64) {
    let r = frak_r(k);
    (e_minus(k) / r, e_plus(k) / r)
}

/// Density of `P(k, dk')` with respect to `pi(dk')`.
pub fn transition_density_wrt_pi(k: f64, kp: f64) -> f64 {
    2.0 * (e_minus(k) * e_plus(kp) + e_plus(k) * e_minus(kp)) / (frak_r(k) * frak_r(kp))
}

/// Stationary density `(1/2) r(k) = 1 - (2/3) cos 2 pi k - (1/3) cos 4 pi k`.
pub fn stationary_density(k: f64) -> f64 {
    0.5 * frak_r(k)
}

/// Distribution function of `pi` from `-1/2`.
pub fn stationary_cdf(k: f64) -> f64 {
    (k + 0.5) - (2.0 * PI * k).sin() / (3.0 * PI) - (4.0 * PI * k).sin() / (12.0 * PI)
}

/// Iterates a skeleton chain path `xi_0, xi_1, ...`.
pub struct SkeletonChain<'a, R: Rng + ?Sized> {
    state: SkeletonChainState,
    rng: &'a mut R,
    started: bool,
}

impl<'a, R: Rng + ?Sized> SkeletonChain<'a, R> {
    pub fn new(start: StartMode, rng: &'a mut R) -> Result<Self> {
        let k = start.draw(rng)?;
        Ok(Self {
            state: SkeletonChainState { k, n: 0 },
            rng,
            started: false,
        })
    }
}

impl<R: Rng + ?Sized> Iterator for SkeletonChain<'_, R> {
    type Item = Result<SkeletonChainState>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.started {
            self.started = true;
            return Some(Ok(self.state));
        }
        match skeleton_step(self.state.k, self.rng) {
            Ok(k) => {
                self.state = SkeletonChainState { k, n: self.state.n + 1 };
                Some(Ok(self.state))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "k0")]
pub enum StartMode {
    Fixed(TorusPoint),
    Stationary,
}

impl StartMode {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> Result<TorusPoint> {
        match self {
            StartMode::Fixed(k) if k.value() == 0.0 => Err(Error::Precondition("start point k0 = 0".into())),
            StartMode::Fixed(k) => Ok(k),
            StartMode::Stationary => sample_stationary(rng),
        }
    }
}

/// A path of `K_t` on `[0, total_time]` as (state, holding time) pairs; the
/// last hold is truncated at `total_time`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JumpTrajectory {
    pub states: Vec<TorusPoint>,
    pub holds: Vec<f64>,
    pub total_time: f64,
    pub start: StartMode,
}

impl JumpTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of jumps performed before `total_time`.
    pub fn jumps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn final_state(&self) -> TorusPoint {
        *self.states.last().expect("trajectory has at least one state")
    }

    /// `int_0^T V(K_s) ds`.
    pub fn integrate<V: Fn(f64) -> f64>(&self, v: V) -> f64 {
        self.states.iter().zip(&self.holds).map(|(k, h)| v(k.value()) * h).sum()
    }

    /// The path with every state mapped to `-k`.
    pub fn reflected(&self) -> Self {
        Self {
            states: self.states.iter().map(|&k| -k).collect(),
            holds: self.holds.clone(),
            total_time: self.total_time,
            start: self.start,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "k", "hold"])?;
        for (i, (k, h)) in self.states.iter().zip(&self.holds).enumerate() {
            w.write_record(&[i.to_string(), format!("{:e}", k.value()), format!("{h:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Streaming walk of `K_t`: yields `(k, hold)` segments, truncating the last
/// one at `total_time`, without storing the path.
pub struct JumpWalk<'a, R: Rng + ?Sized> {
    k: TorusPoint,
    /// `sin^2(pi k)` of the current state
    s2: f64,
    elapsed: f64,
    total_time: f64,
    steps: u64,
    step_cap: u64,
    rng: &'a mut R,
    done: bool,
}

impl<'a, R: Rng + ?Sized> JumpWalk<'a, R> {
    pub fn new(start: StartMode, total_time: f64, step_cap: u64, rng: &'a mut R) -> Result<Self> {
        if !(total_time > 0.0) {
            return Err(Error::Precondition(format!(
                "total_time must be positive, got {total_time}"
            )));
        }
        let k = start.draw(rng)?;
        let s = (PI * k.value()).sin();
        Ok(Self {
            k,
            s2: s * s,
            elapsed: 0.0,
            total_time,
            steps: 0,
            step_cap,
            rng,
            done: false,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl<R: Rng + ?Sized> Iterator for JumpWalk<'_, R> {
    type Item = Result<(TorusPoint, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let tau: f64 = self.rng.sample(Exp1);
        // theta = 1 / (2 s^2 (3 - 2 s^2))
        let hold = tau / (2.0 * self.s2 * (3.0 - 2.0 * self.s2));
        let k = self.k;
        if self.elapsed + hold >= self.total_time {
            self.done = true;
            return Some(Ok((k, self.total_time - self.elapsed)));
        }
        self.elapsed += hold;
        self.steps += 1;
        if self.steps > self.step_cap {
            self.done = true;
            return Some(Err(Error::StepCap(self.step_cap)));
        }
        match step_from_s2(self.s2, self.rng) {
            Ok((next, s2)) => {
                self.k = TorusPoint::new(next);
                self.s2 = s2;
            }
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        }
        Some(Ok((k, hold)))
    }
}

pub fn jump_trajectory<R: Rng + ?Sized>(
    start: StartMode,
    total_time: f64,
    step_cap: u64,
    rng: &mut R,
) -> Result<JumpTrajectory> {
    let mut states = Vec::new();
    let mut holds = Vec::new();
    for seg in JumpWalk::new(start, total_time, step_cap, rng)? {
        let (k, h) = seg?;
        states.push(k);
        holds.push(h);
    }
    Ok(JumpTrajectory {
        states,
        holds,
        total_time,
        start,
    })
}

/// The 2x2 reduction of the transition operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralGap {
    /// Largest modulus of a non-unit eigenvalue on mean-zero functions.
    pub a: f64,
    /// `matrix[i][j]`, rows/columns ordered (e_{-1}, e_1): action of `P` on
    /// the coordinates of `f = x_{-1} e_{-1}/r + x_1 e_1/r`.
    pub matrix: [[f64; 2]; 2],
    pub eigenvalues: [f64; 2],
}

/// Spectral gap of the skeleton chain from its rank-2 reduction.
pub fn spectral_gap(grid: &TorusGrid) -> Result<SpectralGap> {
    // P f = (e_1/r) <e_{-1}, f> + (e_{-1}/r) <e_1, f>
    let mm = grid.integrate(|k| guarded(e_minus(k) * e_minus(k), k));
    let pp = grid.integrate(|k| guarded(e_plus(k) * e_plus(k), k));
    let pm = grid.integrate(|k| guarded(e_plus(k) * e_minus(k), k));
    // coordinate of e_{-1}/r after P is <e_1, f>, of e_1/r is <e_{-1}, f>
    let matrix = [[pm, pp], [mm, pm]];
    let tr = matrix[0][0] + matrix[1][1];
    let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc < 0.0 {
        return Err(Error::Quadrature("complex spectrum for a reversible kernel".into()));
    }
    let (l1, l2) = (tr / 2.0 + disc.sqrt(), tr / 2.0 - disc.sqrt());
    let (unit, other) = if (l1 - 1.0).abs() < (l2 - 1.0).abs() {
        (l1, l2)
    } else {
        (l2, l1)
    };
    if (unit - 1.0).abs() > 1e-8 {
        return Err(Error::Quadrature(format!("constant eigenvalue reproduced as {unit}")));
    }
    Ok(SpectralGap {
        a: other.abs(),
        matrix,
        eigenvalues: [unit, other],
    })
}

fn guarded(num: f64, k: f64) -> f64 {
    let r = frak_r(k);
    if r == 0.0 {
        0.0
    } else {
        num / r
    }
}

/// Largest singular value of the midpoint discretization of `P` on
/// `L^2(pi)` with constants removed (dense matrix, power iteration).
pub fn spectral_gap_grid(n: usize) -> f64 {
    let ks: Vec<f64> = (0..n).map(|i| -0.5 + (i as f64 + 0.5) / n as f64).collect();
    let w = 1.0 / n as f64;
    let sq: Vec<f64> = ks.iter().map(|&k| (stationary_density(k) * w).sqrt()).collect();
    let norm: f64 = sq.iter().map(|x| x * x).sum::<f64>().sqrt();
    let v0: Vec<f64> = sq.iter().map(|x| x / norm).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = sq[i] * transition_density_wrt_pi(ks[i], ks[j]) * sq[j] - v0[i] * v0[j];
        }
    }
    let matvec = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| s[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
    let mut sigma = 0.0;
    for _ in 0..200 {
        let y = matvec(&matvec(&x));
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next = (ny / nx).sqrt();
        x = y.into_iter().map(|v| v / ny).collect();
        if (next - sigma).abs() < 1e-15 {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Writes `(index, k, hold)` rows to any writer.
pub fn dump_trajectory<W: Write>(traj: &JumpTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "k", "hold"])?;
    for (i, (k, h)) in traj.states.iter().zip(&traj.holds).enumerate() {
        w.write_record(&[i.to_string(), format!("{:e}", k.value()), format!("{h:e}")])?;
    }
    w.flush()?;
    Ok(())
}
