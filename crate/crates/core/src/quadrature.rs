//! Quadrature on the reference triangle and on edges.
//!
//! Reference triangle has vertices (0,0), (1,0), (0,1). Interior weights are
//! normalised to sum to one, so `|K| * sum(w * f)` approximates the cell
//! integral. Edge rules live on the parameter interval [0, 1] with weights
//! summing to one.

use std::f64::consts::PI;

/// Interior rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct InteriorRule {
    /// Nodes as (xi, eta).
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub precision: usize,
}

impl InteriorRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre rule mapped to [0, 1].
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Q-point Gauss rule on [0, 1]; exact for degree 2Q - 1.
pub fn edge_rule(q: usize) -> EdgeRule {
    let (x, w) = gauss_legendre(q);
    EdgeRule { nodes: x.iter().map(|t| 0.5 * (t + 1.0)).collect(), weights: w.iter().map(|t| 0.5 * t).collect() }
}

fn push_orbit3(rule: &mut InteriorRule, a: f64, b: f64, w: f64) {
    // barycentric (a, a, b) and its two other placements, mapped to (xi, eta) = (l2, l3)
    for bary in [[a, a, b], [a, b, a], [b, a, a]] {
        rule.nodes.push([bary[1], bary[2]]);
        rule.weights.push(w);
    }
}

fn push_orbit6(rule: &mut InteriorRule, a: f64, b: f64, c: f64, w: f64) {
    for bary in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        rule.nodes.push([bary[1], bary[2]]);
        rule.weights.push(w);
    }
}

/// Symmetric 3-point rule, degree 2.
pub fn triangle_3() -> InteriorRule {
    let mut r = InteriorRule { nodes: vec![], weights: vec![], precision: 2 };
    push_orbit3(&mut r, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0);
    r
}

/// Symmetric 6-point rule, degree 4.
pub fn triangle_6() -> InteriorRule {
    let mut r = InteriorRule { nodes: vec![], weights: vec![], precision: 4 };
    push_orbit3(&mut r, 0.445948490915965, 0.108103018168070, 0.223381589678010);
    push_orbit3(&mut r, 0.091576213509771, 0.816847572980458, 0.109951743655322);
    r
}

/// Symmetric 12-point rule, degree 6.
pub fn triangle_12() -> InteriorRule {
    let mut r = InteriorRule { nodes: vec![], weights: vec![], precision: 6 };
    push_orbit3(&mut r, 0.063089014491502, 0.873821971016996, 0.050844906370207);
    push_orbit3(&mut r, 0.249286745170910, 0.501426509658180, 0.116786275726379);
    push_orbit6(&mut r, 0.053145049844817, 0.636502499121399, 0.310352451033784, 0.082851075618374);
    r
}

/// Collapsed tensor Gauss rule with `n` points per direction, degree 2n - 2.
pub fn triangle_collapsed(n: usize) -> InteriorRule {
    let g = edge_rule(n);
    let mut r = InteriorRule { nodes: vec![], weights: vec![], precision: 2 * n - 2 };
    for (&v, &wv) in g.nodes.iter().zip(&g.weights) {
        for (&u, &wu) in g.nodes.iter().zip(&g.weights) {
            r.nodes.push([u * (1.0 - v), v]);
            // Jacobian (1 - v), and the reference area 1/2 is divided out
            r.weights.push(2.0 * wu * wv * (1.0 - v));
        }
    }
    r
}

/// Interior rule used for the degree-k residual: exact for degree 2k.
pub fn interior_rule(k: usize) -> InteriorRule {
    match k {
        0 | 1 => triangle_3(),
        2 => triangle_6(),
        3 => triangle_12(),
        _ => triangle_collapsed(k + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    // average of xi^p eta^q over the reference triangle
    fn monomial_average(p: usize, q: usize) -> f64 {
        2.0 * factorial(p) * factorial(q) / factorial(p + q + 2)
    }

    fn check_exact(rule: &InteriorRule, tol: f64) {
        for deg in 0..=rule.precision {
            for p in 0..=deg {
                let q = deg - p;
                let approx: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x[0].powi(p as i32) * x[1].powi(q as i32))
                    .sum();
                let exact = monomial_average(p, q);
                assert!((approx - exact).abs() <= tol * exact, "p={p} q={q}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn table_rules_are_exact_to_their_degree() {
        check_exact(&triangle_3(), 1e-14);
        check_exact(&triangle_6(), 1e-13);
        check_exact(&triangle_12(), 1e-13);
        check_exact(&triangle_collapsed(5), 1e-13);
    }

    #[test]
    fn rule_sizes_match_degree() {
        assert_eq!(interior_rule(1).len(), 3);
        assert_eq!(interior_rule(2).len(), 6);
        assert_eq!(interior_rule(3).len(), 12);
        assert!(interior_rule(4).precision >= 8);
    }

    #[test]
    fn weights_sum_to_one() {
        for k in 1..=4 {
            let s: f64 = interior_rule(k).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "k={k} sum={s}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..=6 {
            let e = edge_rule(n);
            for deg in 0..2 * n {
                let approx: f64 = e.nodes.iter().zip(&e.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_nodes_are_symmetric() {
        let e = edge_rule(4);
        for i in 0..4 {
            assert!((e.nodes[i] + e.nodes[3 - i] - 1.0).abs() < 1e-15);
        }
    }
}
