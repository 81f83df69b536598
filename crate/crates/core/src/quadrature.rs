//! Gauss–Legendre rules and composite variants used for the weakly singular
//! integrals that appear in the fBm kernel.

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on the three-term recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d.is_finite() { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Iterates `(node, weight)` pairs mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Integrates `f` over `[a, b]` with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule with `panels` equal panels.
    pub fn integrate_composite<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let lo = a + h * p as f64;
                let hi = if p + 1 == panels { b } else { lo + h };
                self.integrate(lo, hi, &mut f)
            })
            .sum()
    }

    /// Composite rule on a mesh graded geometrically towards `a`
    /// (panel endpoints `a + (b-a)·2^{-k}`), suited to algebraic endpoint
    /// singularities at `a`. The innermost `[a, a + (b-a)·2^{-levels}]` panel
    /// is integrated with the plain rule.
    pub fn integrate_graded<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        levels: usize,
        mut f: F,
    ) -> f64 {
        let len = b - a;
        let mut total = 0.0;
        let mut hi = 1.0;
        for _ in 0..levels {
            let lo = 0.5 * hi;
            total += self.integrate(a + len * lo, a + len * hi, &mut f);
            hi = lo;
        }
        total + self.integrate(a, a + len * hi, &mut f)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// β(a, b) by quadrature: the interval is split at ½, each half mapped by
/// `x = z^{1/a}` (resp. `1 − x = z^{1/b}`) to strip the endpoint power, then
/// integrated on a geometrically graded mesh.
pub fn beta_by_quadrature(a: f64, b: f64) -> f64 {
    let rule = GaussLegendre::new(20);
    let half = |p: f64, q: f64| {
        // ∫_0^{1/2} x^{p-1}(1-x)^{q-1} dx = (1/p) ∫_0^{2^{-p}} (1 - z^{1/p})^{q-1} dz
        let upper = 0.5_f64.powf(p);
        rule.integrate_graded(0.0, upper, 60, |z| (1.0 - z.powf(1.0 / p)).powf(q - 1.0)) / p
    };
    half(a, b) + half(b, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(6);
        // degree 11 is the exactness limit of a 6-point rule
        let v = rule.integrate(0.0, 2.0, |x| x.powi(11));
        assert!((v - 2f64.powi(12) / 12.0).abs() < 1e-10);
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_rule_has_center_node() {
        let rule = GaussLegendre::new(5);
        assert_eq!(rule.nodes[2], 0.0);
        assert!((rule.nodes[0] + rule.nodes[4]).abs() < 1e-15);
    }

    #[test]
    fn graded_rule_handles_inverse_sqrt() {
        let rule = GaussLegendre::new(12);
        let v = rule.integrate_graded(0.0, 1.0, 90, |x| x.powf(-0.5));
        assert!((v - 2.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn beta_quadrature_matches_closed_form() {
        // β(1/2, 1/2) = π
        assert!((beta_by_quadrature(0.5, 0.5) - std::f64::consts::PI).abs() < 1e-11);
        // β(2, 3) = 1/12
        assert!((beta_by_quadrature(2.0, 3.0) - 1.0 / 12.0).abs() < 1e-13);
    }
}
