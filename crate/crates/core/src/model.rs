//! Dispersion relations and the scattering kernels of the momentum-exchange
//! noise.
//!
//! The noise is fixed (nearest-neighbour triples), so every kernel function
//! here is a closed-form function of the wavenumber alone. Only the
//! dispersion relation depends on the interaction potential, which is what a
//! [`DispersionModel`] carries.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A wavenumber on the torus, stored by its representative in `[-1/2, 1/2)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TorusPoint(f64);

impl TorusPoint {
    pub fn new(k: f64) -> Self {
        Self(wrap(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Distance along the circle.
    pub fn distance(self, other: TorusPoint) -> f64 {
        let d = (self.0 - other.0).abs();
        d.min(1.0 - d)
    }

    pub fn shifted(self, dk: f64) -> Self {
        Self::new(self.0 + dk)
    }
}

impl std::ops::Neg for TorusPoint {
    type Output = TorusPoint;
    fn neg(self) -> TorusPoint {
        TorusPoint::new(-self.0)
    }
}

impl From<TorusPoint> for f64 {
    fn from(k: TorusPoint) -> f64 {
        k.0
    }
}

/// Canonical representative of `k` in `[-1/2, 1/2)`.
pub fn wrap(k: f64) -> f64 {
    let w = k - (k + 0.5).floor();
    // (k + 0.5).floor() can round so that w lands on +1/2
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `alpha_hat(k) = 4 sin^2(pi k)`.
    UnpinnedNn,
    /// `alpha_hat(k) = w0^2 + 4 sin^2(pi k)`.
    PinnedNn,
    /// Finite-range potential fitted from a table of `alpha_hat`.
    Custom,
}

/// Interaction potential in Fourier form.
///
/// Custom models are stored through the potential coefficients
/// `alpha_y, y = 0..n`, and evaluated as
/// `alpha_hat(0) - 4 sum_{y>=1} alpha_y sin^2(pi y k)`, which stays accurate
/// near `k = 0` where `omega'` is a ratio of two vanishing quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionModel {
    family: Family,
    pinning_mass: f64,
    coefficients: Vec<f64>,
}

impl DispersionModel {
    pub fn unpinned_nn() -> Self {
        Self {
            family: Family::UnpinnedNn,
            pinning_mass: 0.0,
            coefficients: vec![2.0, -1.0],
        }
    }

    pub fn pinned_nn(pinning_mass: f64) -> Result<Self> {
        if !(pinning_mass > 0.0 && pinning_mass.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "pinning mass must be positive and finite, got {pinning_mass}"
            )));
        }
        Ok(Self {
            family: Family::PinnedNn,
            pinning_mass,
            coefficients: vec![2.0 + pinning_mass * pinning_mass, -1.0],
        })
    }

    /// Builds a model from potential coefficients `alpha_0, alpha_1, ...`
    /// (the potential is even, so negative offsets are implied).
    pub fn from_potential(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("empty or non-finite potential".into()));
        }
        let alpha0: f64 = coefficients[0] + 2.0 * coefficients[1..].iter().sum::<f64>();
        let scale = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut coefficients = coefficients;
        let pinning_mass = if alpha0.abs() <= 1e-12 * scale {
            // snap to an exactly acoustic chain
            coefficients[0] = -2.0 * coefficients[1..].iter().sum::<f64>();
            0.0
        } else if alpha0 > 0.0 {
            alpha0.sqrt()
        } else {
            return Err(Error::InvalidModel(format!("alpha_hat(0) = {alpha0} is negative")));
        };
        let model = Self {
            family: Family::Custom,
            pinning_mass,
            coefficients,
        };
        model.validate()?;
        Ok(model)
    }

    /// Reads a CSV table with columns `k, alpha_hat` sampled on a uniform
    /// grid of `[0, 1/2]` and fits a finite-range potential to it.
    pub fn from_table_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::InvalidModel(format!("row has no column {i}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidModel(format!("bad number in table: {e}")))
            };
            rows.push((parse(0)?, parse(1)?));
        }
        Self::from_table(&rows)
    }

    pub fn from_table(rows: &[(f64, f64)]) -> Result<Self> {
        if rows.len() < 3 {
            return Err(Error::InvalidModel("table needs at least 3 rows".into()));
        }
        let mut rows = rows.to_vec();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("nan in table"));
        if rows[0].0.abs() > 1e-12 || (rows[rows.len() - 1].0 - 0.5).abs() > 1e-12 {
            return Err(Error::InvalidModel(
                "table must cover k in [0, 1/2] including both ends".into(),
            ));
        }
        let n = rows.len() - 1;
        let spacing = 0.5 / n as f64;
        if rows
            .iter()
            .enumerate()
            .any(|(i, (k, _))| (k - i as f64 * spacing).abs() > 1e-9)
        {
            return Err(Error::InvalidModel("table grid must be uniform".into()));
        }
        // Discrete cosine transform (trapezoid on the half period, exact for
        // cosine polynomials of degree < n).
        let degree = n.min(64);
        let mut coefficients = Vec::with_capacity(degree + 1);
        for y in 0..=degree {
            let mut s = 0.0;
            for (i, &(k, v)) in rows.iter().enumerate() {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += w * v * (2.0 * PI * y as f64 * k).cos();
            }
            s /= n as f64;
            // alpha_hat = alpha_0 + 2 sum alpha_y cos(2 pi y k); the Nyquist
            // mode is counted twice by the trapezoid sum
            coefficients.push(if y == n { 0.5 * s } else { s });
        }
        let scale = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        while coefficients.len() > 1 && coefficients.last().unwrap().abs() < 1e-13 * scale {
            coefficients.pop();
        }
        let model = Self::from_potential(coefficients)?;
        let misfit = rows
            .iter()
            .map(|&(k, v)| (model.alpha_hat(k) - v).abs())
            .fold(0.0, f64::max);
        if misfit > 1e-8 * scale.max(1.0) {
            return Err(Error::InvalidModel(format!(
                "table is not resolved by a potential of range {degree} (misfit {misfit:e})"
            )));
        }
        Ok(model)
    }

    /// Checks assumption a2): even, positive away from zero, and a
    /// non-degenerate quadratic zero in the acoustic case.
    pub fn validate(&self) -> Result<()> {
        if self.pinning_mass == 0.0 && self.alpha_hat_dd0() <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "acoustic model needs alpha_hat''(0) > 0, got {}",
                self.alpha_hat_dd0()
            )));
        }
        for i in 1..=2000 {
            let k = 0.5 * i as f64 / 2000.0;
            let a = self.alpha_hat(k);
            if !(a > 0.0) {
                return Err(Error::InvalidModel(format!("alpha_hat({k}) = {a} is not positive")));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn pinning_mass(&self) -> f64 {
        self.pinning_mass
    }

    pub fn is_pinned(&self) -> bool {
        self.pinning_mass > 0.0
    }

    pub fn potential(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn alpha_hat(&self, k: f64) -> f64 {
        match self.family {
            Family::UnpinnedNn => 4.0 * sin2(PI * k),
            Family::PinnedNn => self.pinning_mass.powi(2) + 4.0 * sin2(PI * k),
            Family::Custom => {
                let tail: f64 = self.coefficients[1..]
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * sin2(PI * (i + 1) as f64 * k))
                    .sum();
                self.pinning_mass.powi(2) - 4.0 * tail
            }
        }
    }

    pub fn omega(&self, k: f64) -> f64 {
        match self.family {
            Family::UnpinnedNn => 2.0 * (PI * k).sin().abs(),
            _ => self.alpha_hat(k).sqrt(),
        }
    }

    /// Derivative of the dispersion relation, with `omega'(0) := 0`.
    pub fn omega_prime(&self, k: f64) -> f64 {
        let k = wrap(k);
        if k == 0.0 {
            return 0.0;
        }
        match self.family {
            Family::UnpinnedNn => 2.0 * PI * (PI * k).cos() * k.signum(),
            Family::PinnedNn => 2.0 * PI * (2.0 * PI * k).sin() / self.omega(k),
            Family::Custom => {
                let d: f64 = self.coefficients[1..]
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let y = (i + 1) as f64;
                        y * a * (2.0 * PI * y * k).sin()
                    })
                    .sum();
                -4.0 * PI * d / (2.0 * self.omega(k))
            }
        }
    }

    pub fn alpha_hat_dd0(&self) -> f64 {
        let s: f64 = self.coefficients[1..]
            .iter()
            .enumerate()
            .map(|(i, a)| ((i + 1) as f64).powi(2) * a)
            .sum();
        -8.0 * PI * PI * s
    }

    pub fn sup_abs_omega_prime(&self) -> f64 {
        (0..=4000)
            .map(|i| self.omega_prime(0.5 * i as f64 / 4000.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::UnpinnedNn => "unpinned-nn".into(),
            Family::PinnedNn => format!("pinned-nn(w0={})", self.pinning_mass),
            Family::Custom => format!("custom(range={})", self.coefficients.len() - 1),
        }
    }
}

#[inline]
fn sin2(x: f64) -> f64 {
    let s = x.sin();
    s * s
}

/// Index of the two rank-one pieces of the scattering kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// `e_1(k) = (8/3) sin^4(pi k)`
    Plus,
    /// `e_{-1}(k) = 2 sin^2(2 pi k)`
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Minus, Branch::Plus];

    pub fn sign(self) -> i32 {
        match self {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }

    pub fn partner(self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }

    #[inline]
    pub fn density(self, k: f64) -> f64 {
        match self {
            Branch::Plus => e_plus(k),
            Branch::Minus => e_minus(k),
        }
    }

    /// Supremum of the density, the rejection envelope.
    pub fn sup(self) -> f64 {
        match self {
            Branch::Plus => 8.0 / 3.0,
            Branch::Minus => 2.0,
        }
    }
}

#[inline]
pub fn e_plus(k: f64) -> f64 {
    let s = sin2(PI * k);
    8.0 / 3.0 * s * s
}

#[inline]
pub fn e_minus(k: f64) -> f64 {
    2.0 * sin2(2.0 * PI * k)
}

/// `r(k) = e_1(k) + e_{-1}(k)`.
#[inline]
pub fn frak_r(k: f64) -> f64 {
    e_plus(k) + e_minus(k)
}

/// Total scattering rate `R(k) = 2 sin^2(pi k)[1 + 2 cos^2(pi k)]`.
#[inline]
pub fn r_total(k: f64) -> f64 {
    let s = sin2(PI * k);
    2.0 * s * (3.0 - 2.0 * s)
}

/// Mean holding time `1/R(k)`, infinite at `k = 0`.
#[inline]
pub fn theta(k: f64) -> f64 {
    1.0 / r_total(k)
}

pub fn beta_hat(k: f64) -> f64 {
    let s = sin2(PI * k);
    8.0 * s * (1.0 + 2.0 * (1.0 - s))
}

/// Noise coupling `r(k, k') = 4 sin(pi k) sin(pi (k - k')) sin(pi (2k - k'))`.
pub fn r_elementary(k: f64, kp: f64) -> f64 {
    4.0 * (PI * k).sin() * (PI * (k - kp)).sin() * (PI * (2.0 * k - kp)).sin()
}

/// The same coupling as a sum of three sines.
pub fn r_elementary_sum_form(k: f64, kp: f64) -> f64 {
    (2.0 * PI * k).sin() + (2.0 * PI * (k - kp)).sin() + (2.0 * PI * (kp - 2.0 * k)).sin()
}

/// Scattering kernel `R(k, k')`.
pub fn r_kernel(k: f64, kp: f64) -> f64 {
    8.0 * sin2(PI * k) * sin2(PI * kp) * (sin2(PI * (k + kp)) + sin2(PI * (k - kp)))
}

/// The kernel at finite `eps`, built from the couplings at `k -+ eps p / 2`.
pub fn r_eps_kernel(p: f64, k: f64, kp: f64, eps: f64) -> f64 {
    let rho = |k: f64, k2: f64| r_elementary(k - 0.5 * eps * p, k2) * r_elementary(k + 0.5 * eps * p, k2);
    0.5 * (rho(k, k + kp) + rho(k, k - kp))
}

/// Closed-form scattering data of the noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScatteringTables;

impl ScatteringTables {
    pub fn e(&self, branch: Branch, k: f64) -> f64 {
        branch.density(k)
    }

    pub fn r(&self, k: f64) -> f64 {
        frak_r(k)
    }

    pub fn r_total(&self, k: f64) -> f64 {
        r_total(k)
    }

    pub fn beta_hat(&self, k: f64) -> f64 {
        beta_hat(k)
    }

    pub fn theta(&self, k: f64) -> f64 {
        theta(k)
    }
}

/// The scattering tables do not depend on the potential; the model is taken
/// for symmetry with the other constructors and validated.
pub fn scattering_tables(model: &DispersionModel) -> Result<ScatteringTables> {
    model.validate()?;
    Ok(ScatteringTables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TorusGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn dispersion_values() {
        let m = DispersionModel::unpinned_nn();
        assert_eq!(m.alpha_hat(0.0), 0.0);
        assert!((m.alpha_hat(0.5) - 4.0).abs() < 1e-15);
        assert!((m.omega(0.25) - SQRT2).abs() < 1e-15);
        assert!(m.omega_prime(0.5).abs() < 1e-15);
        assert_eq!(m.omega_prime(0.0), 0.0);
        assert!((m.omega_prime(1e-9) - 2.0 * PI).abs() < 1e-12);
        assert!((m.alpha_hat_dd0() - 8.0 * PI * PI).abs() < 1e-12);
        assert!(((m.alpha_hat_dd0() / 2.0).sqrt() - 2.0 * PI).abs() < 1e-12);

        let p = DispersionModel::pinned_nn(1.0).unwrap();
        assert_eq!(p.alpha_hat(0.0), 1.0);
        assert!(p.is_pinned() && !m.is_pinned());
        assert!((p.alpha_hat_dd0() - 8.0 * PI * PI).abs() < 1e-12);
        assert!(DispersionModel::pinned_nn(0.0).is_err());
    }

    #[test]
    fn omega_prime_matches_finite_differences() {
        let models = [
            DispersionModel::unpinned_nn(),
            DispersionModel::pinned_nn(0.7).unwrap(),
            DispersionModel::from_potential(vec![3.0, -1.0, -0.25]).unwrap(),
        ];
        for m in &models {
            for &k in &[0.03, 0.17, 0.31, 0.44, -0.2] {
                let h = 1e-6;
                let fd = (m.omega(k + h) - m.omega(k - h)) / (2.0 * h);
                assert!((fd - m.omega_prime(k)).abs() < 1e-7, "{} at {k}", m.label());
            }
        }
    }

    #[test]
    fn custom_potential_reproduces_nn_family() {
        let c = DispersionModel::from_potential(vec![2.0, -1.0]).unwrap();
        let u = DispersionModel::unpinned_nn();
        assert!(!c.is_pinned());
        for i in 0..50 {
            let k = -0.5 + i as f64 / 50.0;
            assert!((c.alpha_hat(k) - u.alpha_hat(k)).abs() < 1e-13);
            assert!((c.omega_prime(k) - u.omega_prime(k)).abs() < 1e-10);
        }
    }

    #[test]
    fn custom_table_round_trip() {
        let truth = DispersionModel::pinned_nn(0.5).unwrap();
        let rows: Vec<(f64, f64)> = (0..=64)
            .map(|i| {
                let k = 0.5 * i as f64 / 64.0;
                (k, truth.alpha_hat(k))
            })
            .collect();
        let fitted = DispersionModel::from_table(&rows).unwrap();
        assert!((fitted.pinning_mass() - 0.5).abs() < 1e-12);
        for i in 0..40 {
            let k = -0.5 + i as f64 / 40.0 + 0.003;
            assert!((fitted.alpha_hat(k) - truth.alpha_hat(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_potentials_rejected() {
        // negative at k = 1/2
        assert!(DispersionModel::from_potential(vec![0.5, 0.5]).is_err());
        // alpha_hat(0) < 0
        assert!(DispersionModel::from_potential(vec![-1.0, 0.0]).is_err());
        // acoustic with a quartic zero
        assert!(
            DispersionModel::from_potential(vec![1.5, -1.0, 0.25])
                .map(|m| m.alpha_hat_dd0())
                .is_err()
                || DispersionModel::from_potential(vec![1.5, -1.0, 0.25]).is_err()
        );
        let bad_rows = vec![(0.0, 1.0), (0.3, 2.0), (0.5, 3.0)];
        assert!(DispersionModel::from_table(&bad_rows).is_err());
    }

    #[test]
    fn kernel_point_values() {
        assert!((beta_hat(0.5) - 8.0).abs() < 1e-14);
        assert_eq!(beta_hat(0.0), 0.0);
        assert!((beta_hat(0.25) - 8.0).abs() < 1e-14);
        assert_eq!(r_elementary(0.0, 0.3), 0.0);
        assert_eq!(r_elementary(0.3, 0.3), 0.0);
        assert!((r_elementary(0.25, -0.25) - 2.0).abs() < 1e-14);
        assert!((r_kernel(0.25, 0.25) - 2.0).abs() < 1e-14);
        assert_eq!(r_kernel(0.3, 0.0), 0.0);
        assert!((e_plus(0.5) - 8.0 / 3.0).abs() < 1e-15);
        assert!((e_minus(0.25) - 2.0).abs() < 1e-15);
        assert!(theta(0.0).is_infinite());
        assert!((r_total(0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn basis_densities_integrate_to_one() {
        let grid = TorusGrid::default();
        assert!((grid.integrate(e_plus) - 1.0).abs() < 1e-10);
        assert!((grid.integrate(e_minus) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn marginal_of_kernel_is_total_rate() {
        let grid = TorusGrid::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let k: f64 = rng.gen_range(-0.5..0.5);
            let m = grid.integrate(|kp| r_kernel(k, kp));
            assert!((4.0 * m - beta_hat(k)).abs() < 1e-10);
            assert!((m - r_total(k)).abs() < 1e-10);
        }
    }

    #[test]
    fn eps_kernel_reduces_to_kernel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (p, k, kp): (f64, f64, f64) = (
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            assert!((r_eps_kernel(p, k, kp, 0.0) - r_kernel(k, kp)).abs() < 1e-13);
            assert!((r_eps_kernel(0.0, k, kp, 0.7) - r_kernel(k, kp)).abs() < 1e-13);
        }
    }

    #[test]
    fn eps_kernel_derivative_by_central_differences() {
        // The kernel is even in eps, so the derivative at 0 vanishes and the
        // one-sided quotient is O(h).
        let (p, k, kp) = (1.3, 0.21, -0.37);
        for h in [1e-3, 1e-4, 1e-5] {
            let central = (r_eps_kernel(p, k, kp, h) - r_eps_kernel(p, k, kp, -h)) / (2.0 * h);
            assert!(central.abs() < 1e-6);
        }
        let curv = |h: f64| (r_eps_kernel(p, k, kp, h) - r_eps_kernel(p, k, kp, 0.0)) / (h * h);
        assert!((curv(1e-3) - curv(5e-4)).abs() < 1e-3 * curv(1e-3).abs().max(1.0));
    }

    proptest! {
        #[test]
        fn wrap_is_periodic(k in -1e3f64..1e3) {
            let w = wrap(k);
            prop_assert!((-0.5..0.5).contains(&w));
            prop_assert!(TorusPoint::new(k + 1.0).distance(TorusPoint::new(k)) < 1e-9);
        }

        #[test]
        fn distance_is_a_metric(a in -0.5f64..0.5, b in -0.5f64..0.5, c in -0.5f64..0.5) {
            let (a, b, c) = (TorusPoint::new(a), TorusPoint::new(b), TorusPoint::new(c));
            prop_assert!(a.distance(b) >= 0.0 && a.distance(b) <= 0.5);
            prop_assert!((a.distance(b) - b.distance(a)).abs() < 1e-15);
            prop_assert!(a.distance(c) <= a.distance(b) + b.distance(c) + 1e-15);
        }

        #[test]
        fn product_and_sum_forms_agree(k in -0.5f64..0.5, kp in -0.5f64..0.5) {
            prop_assert!((r_elementary(k, kp) - r_elementary_sum_form(k, kp)).abs() < 1e-13);
        }

        #[test]
        fn kernel_symmetries(k in -0.5f64..0.5, kp in -0.5f64..0.5) {
            let r = r_kernel(k, kp);
            prop_assert!((r - r_kernel(kp, k)).abs() < 1e-14);
            prop_assert!((r - r_kernel(-k, kp)).abs() < 1e-14);
            let rank2 = 0.75 * (e_plus(k) * e_minus(kp) + e_minus(k) * e_plus(kp));
            prop_assert!((r - rank2).abs() < 1e-12);
            prop_assert!((beta_hat(k) - 4.0 * r_total(k)).abs() < 1e-12);
            prop_assert!((beta_hat(k) - beta_hat(-k)).abs() < 1e-14);
            prop_assert!((r_total(k) - 0.75 * frak_r(k)).abs() < 1e-14);
        }

        #[test]
        fn omega_prime_is_odd(k in -0.5f64..0.5) {
            for m in [DispersionModel::unpinned_nn(), DispersionModel::pinned_nn(1.0).unwrap()] {
                prop_assert!((m.omega_prime(k) + m.omega_prime(-k)).abs() < 1e-12);
                prop_assert!((m.alpha_hat(k) - m.alpha_hat(-k)).abs() < 1e-13);
            }
        }
    }
}
