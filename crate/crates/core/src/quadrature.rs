//! Gauss-Legendre rules and composite grids on the torus `[-1/2, 1/2)`.
//!
//! Every integral over the torus in this crate goes through a [`TorusGrid`].
//! The default grid is 2048 uniform panels of an 8-point rule; the graded
//! grid refines geometrically toward `k = 0`, where the kernels vanish and
//! weights like `|k|^{-2a}` blow up.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive Gauss-Legendre integration on `[a, b]`: an interval is accepted
/// once the order-`n` and order-`2n` estimates agree to `tol` (absolute,
/// scaled by interval share), otherwise it is bisected.
pub fn adaptive<F: Fn(f64) -> f64>(a: f64, b: f64, tol: f64, f: &F) -> Result<f64, String> {
    let lo = GaussLegendre::new(10);
    let hi = GaussLegendre::new(20);
    let mut stack = vec![(a, b, 0u32)];
    let mut total = 0.0;
    let width = (b - a).abs().max(f64::MIN_POSITIVE);
    while let Some((x0, x1, depth)) = stack.pop() {
        let coarse = lo.integrate(x0, x1, f);
        let fine = hi.integrate(x0, x1, f);
        let local_tol = tol * ((x1 - x0).abs() / width).max(1e-3);
        if (fine - coarse).abs() <= local_tol || (fine - coarse).abs() <= 1e-15 * fine.abs() {
            total += fine;
        } else if depth >= 40 {
            return Err(format!(
                "adaptive quadrature stalled on [{x0}, {x1}] (difference {:e})",
                (fine - coarse).abs()
            ));
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((x0, mid, depth + 1));
            stack.push((mid, x1, depth + 1));
        }
    }
    Ok(total)
}

/// Composite quadrature nodes on the torus, sorted in increasing `k`.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for TorusGrid {
    fn default() -> Self {
        Self::uniform(2048, 8)
    }
}

impl TorusGrid {
    /// `panels` equal panels over `[-1/2, 1/2]`, `order` nodes each.
    pub fn uniform(panels: usize, order: usize) -> Self {
        let edges: Vec<f64> = (0..=panels).map(|i| -0.5 + i as f64 / panels as f64).collect();
        Self::from_edges(&edges, order)
    }

    /// Panels graded geometrically toward `k = 0`: `panels_per_side` panels
    /// on each side, the innermost being `[0, k_min]`.
    pub fn graded(panels_per_side: usize, order: usize, k_min: f64) -> Self {
        assert!(panels_per_side >= 2 && k_min > 0.0 && k_min < 0.5);
        let steps = panels_per_side - 1;
        let ratio = (0.5 / k_min).powf(1.0 / steps as f64);
        let mut right = vec![0.0];
        for i in 0..=steps {
            right.push(k_min * ratio.powi(i as i32));
        }
        *right.last_mut().unwrap() = 0.5;
        let mut edges: Vec<f64> = right.iter().rev().map(|x| -x).collect();
        edges.extend_from_slice(&right[1..]);
        Self::from_edges(&edges, order)
    }

    /// The 4096-node grid used by the kinetic solver.
    pub fn kinetic_default() -> Self {
        Self::graded(256, 8, 1e-7)
    }

    pub fn from_edges(edges: &[f64], order: usize) -> Self {
        let rule = GaussLegendre::new(order);
        let mut nodes = Vec::with_capacity((edges.len() - 1) * order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in edges.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                nodes.push(mid + half * x);
                weights.push(w * half);
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&k, &w)| w * f(k)).sum()
    }

    /// Weighted sum of precomputed values at the nodes.
    pub fn sum_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn map<F: FnMut(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().copied().map(f).collect()
    }

    /// Index of the node closest to `k`.
    pub fn nearest(&self, k: f64) -> usize {
        match self.nodes.binary_search_by(|x| x.partial_cmp(&k).expect("nan node")) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.nodes.len() => self.nodes.len() - 1,
            Err(i) => {
                if (self.nodes[i] - k).abs() < (k - self.nodes[i - 1]).abs() {
                    i
                } else {
                    i - 1
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        // degree 15 is the exactness limit for 8 points
        let v = rule.integrate(-1.0, 1.0, |x| x.powi(14));
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
        let w: f64 = rule.weights().iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn high_order_rule_is_accurate() {
        let rule = GaussLegendre::new(40);
        let v = rule.integrate(0.0, PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn torus_grids_integrate_trig_functions() {
        for grid in [TorusGrid::default(), TorusGrid::kinetic_default()] {
            let s = grid.integrate(|k| (PI * k).sin().powi(2));
            assert!((s - 0.5).abs() < 1e-13, "{s}");
            let total: f64 = grid.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
        assert_eq!(TorusGrid::kinetic_default().len(), 4096);
    }

    #[test]
    fn graded_grid_resolves_weak_singularity() {
        let grid = TorusGrid::graded(256, 8, 1e-9);
        let v = grid.integrate(|k| k.abs().powf(-0.5));
        // 2 * int_0^{1/2} k^{-1/2} = 4 sqrt(1/2)
        assert!((v - 4.0 * 0.5f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let v = adaptive(0.0, 10.0, 1e-12, &|x: f64| (-x).exp()).unwrap();
        assert!((v - (1.0 - (-10.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn nearest_node_lookup() {
        let grid = TorusGrid::uniform(4, 2);
        for (i, &k) in grid.nodes().iter().enumerate() {
            assert_eq!(grid.nearest(k), i);
            assert_eq!(grid.nearest(k + 1e-9), i);
        }
        assert_eq!(grid.nearest(-0.6), 0);
        assert_eq!(grid.nearest(0.6), grid.len() - 1);
    }
}
