//! Small statistical helpers shared by the Monte Carlo experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::rng::pairwise_sum;

/// Sample mean, unbiased variance and standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    /// Standard error of the sample variance (fourth-moment estimate).
    pub variance_stderr: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_stderr: f64,
}

pub fn moments(xs: &[f64]) -> Result<Moments> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Precondition("moments need two or more samples".into()));
    }
    let nf = n as f64;
    let mean = pairwise_sum(xs) / nf;
    let c: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let m2 = pairwise_sum(&c.iter().map(|d| d * d).collect::<Vec<_>>()) / nf;
    let m4 = pairwise_sum(&c.iter().map(|d| d.powi(4)).collect::<Vec<_>>()) / nf;
    let variance = m2 * nf / (nf - 1.0);
    Ok(Moments {
        n,
        mean,
        variance,
        stderr: (variance / nf).sqrt(),
        variance_stderr: ((m4 - m2 * m2) / nf).max(0.0).sqrt(),
        excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
        kurtosis_stderr: (24.0 / nf).sqrt(),
    })
}

/// Straight-line fit `y = a + b x` with optional weights.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub dof: usize,
}

impl LineFit {
    /// Two-sided confidence interval for the slope.
    pub fn slope_interval(&self, level: f64) -> (f64, f64) {
        let q = t_quantile(level, self.dof);
        (self.slope - q * self.slope_stderr, self.slope + q * self.slope_stderr)
    }
}

/// Weighted least squares. With `weights = None` the residual scatter sets
/// the error scale; with weights (inverse variances) the errors are taken as
/// known.
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Fit("line fit needs two or more points".into()));
    }
    let w: Vec<f64> = weights.map(|w| w.to_vec()).unwrap_or_else(|| vec![1.0; n]);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = n.saturating_sub(2);
    let (var_slope, var_icpt) = if weights.is_some() {
        (1.0 / sxx, 1.0 / sw + mx * mx / sxx)
    } else if dof > 0 {
        let rss: f64 = x.iter().zip(y).map(|(a, c)| (c - intercept - slope * a).powi(2)).sum();
        let s2 = rss / dof as f64;
        (s2 / sxx, s2 * (1.0 / n as f64 + mx * mx / sxx))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(LineFit {
        intercept,
        slope,
        slope_stderr: var_slope.sqrt(),
        intercept_stderr: var_icpt.sqrt(),
        dof: if weights.is_some() { usize::MAX } else { dof },
    })
}

/// Two-sided quantile: Student t for finite `dof`, normal for `usize::MAX`.
pub fn t_quantile(level: f64, dof: usize) -> f64 {
    let p = 0.5 + level / 2.0;
    if dof == usize::MAX || dof > 10_000 {
        Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
    } else if dof == 0 {
        f64::INFINITY
    } else {
        StudentsT::new(0.0, 1.0, dof as f64).expect("valid dof").inverse_cdf(p)
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = t_quantile(level, usize::MAX);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Ordinary least squares `y ~ X b` by Cholesky on the normal equations.
/// Returns the coefficients and the residual sum of squares.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    if p == 0 || x.len() != y.len() || x.len() <= p {
        return Err(Error::Fit("least squares needs more rows than columns".into()));
    }
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..p {
            b[i] += row[i] * yi;
            for j in 0..=i {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    // Cholesky a = L L^T, L stored in the lower triangle
    for j in 0..p {
        let d = a[j][j] - (0..j).map(|k| a[j][k] * a[j][k]).sum::<f64>();
        if d <= 0.0 {
            return Err(Error::Singular("normal equations are not positive definite".into()));
        }
        a[j][j] = d.sqrt();
        for i in j + 1..p {
            let s = a[i][j] - (0..j).map(|k| a[i][k] * a[j][k]).sum::<f64>();
            a[i][j] = s / a[j][j];
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        z[i] = (b[i] - (0..i).map(|k| a[i][k] * z[k]).sum::<f64>()) / a[i][i];
    }
    let mut coef = vec![0.0; p];
    for i in (0..p).rev() {
        coef[i] = (z[i] - (i + 1..p).map(|k| a[k][i] * coef[k]).sum::<f64>()) / a[i][i];
    }
    let rss = x
        .iter()
        .zip(y)
        .map(|(row, yi)| (yi - row.iter().zip(&coef).map(|(u, v)| u * v).sum::<f64>()).powi(2))
        .sum();
    Ok((coef, rss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y, None).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-10);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 0.95);
        assert!(lo < 0.3 && hi > 0.3);
        assert_eq!(wilson_interval(0, 100, 0.95).0, 0.0);
        assert!((t_quantile(0.95, usize::MAX) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn least_squares_solves_square_part() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let y = vec![1.0, 2.0, 3.0];
        let (c, rss) = least_squares(&x, &y).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-12 && rss < 1e-20);
    }

    #[test]
    fn moments_of_known_sample() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
    }
}
