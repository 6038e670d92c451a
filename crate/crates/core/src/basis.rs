//! Hierarchical orthogonal modal basis on the reference triangle, up to degree 4.
//!
//! Each basis function is stored as integer monomial coefficients in (xi, eta),
//! so derivatives of any order are exact and the reference norms come out of
//! rational arithmetic. Mode indices are ordered by degree: degree m occupies
//! `dim(m-1)..dim(m)`.

use crate::quadrature::{edge_rule, interior_rule, EdgeRule, InteriorRule};
use num_rational::Ratio;

pub const MAX_DEGREE: usize = 4;
const D: usize = MAX_DEGREE + 1;

/// Number of modes in the degree-k space.
pub const fn dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Degree of mode `l`.
pub fn mode_degree(l: usize) -> usize {
    let mut m = 0;
    while dim(m) <= l {
        m += 1;
    }
    m
}

/// Bivariate polynomial with integer coefficients, `c[p][q]` multiplies xi^p eta^q.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Poly {
    c: [[i64; D]; D],
}

impl Poly {
    pub const ZERO: Poly = Poly { c: [[0; D]; D] };

    fn from_terms(terms: &[(i64, usize, usize)]) -> Poly {
        let mut p = Poly::ZERO;
        for &(a, i, j) in terms {
            p.c[i][j] += a;
        }
        p
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::ZERO;
        for i in 0..D {
            for j in 0..D {
                if self.c[i][j] == 0 {
                    continue;
                }
                for k in 0..D {
                    for l in 0..D {
                        if o.c[k][l] == 0 {
                            continue;
                        }
                        assert!(i + k < D && j + l < D, "product exceeds degree {MAX_DEGREE}");
                        r.c[i + k][j + l] += self.c[i][j] * o.c[k][l];
                    }
                }
            }
        }
        r
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut r = *self;
        for i in 0..D {
            for j in 0..D {
                r.c[i][j] += o.c[i][j];
            }
        }
        r
    }

    fn scale(&self, s: i64) -> Poly {
        let mut r = *self;
        r.c.iter_mut().flatten().for_each(|v| *v *= s);
        r
    }

    fn pow(&self, n: u32) -> Poly {
        (0..n).fold(Poly::from_terms(&[(1, 0, 0)]), |acc, _| acc.mul(self))
    }

    pub fn coeff(&self, p: usize, q: usize) -> i64 {
        self.c[p][q]
    }

    /// Partial derivative d^a/dxi^a d^b/deta^b.
    pub fn derivative(&self, a: usize, b: usize) -> Poly {
        let mut r = Poly::ZERO;
        for i in a..D {
            for j in b..D {
                let fa: i64 = ((i - a + 1)..=i).map(|t| t as i64).product();
                let fb: i64 = ((j - b + 1)..=j).map(|t| t as i64).product();
                r.c[i - a][j - b] = self.c[i][j] * fa * fb;
            }
        }
        r
    }

    pub fn eval(&self, xi: f64, eta: f64) -> f64 {
        // Horner in eta inside Horner in xi
        let mut acc = 0.0;
        for i in (0..D).rev() {
            let mut inner = 0.0;
            for j in (0..D).rev() {
                inner = inner * eta + self.c[i][j] as f64;
            }
            acc = acc * xi + inner;
        }
        acc
    }

    pub fn total_degree(&self) -> usize {
        let mut d = 0;
        for i in 0..D {
            for j in 0..D {
                if self.c[i][j] != 0 {
                    d = d.max(i + j);
                }
            }
        }
        d
    }
}

fn factorial(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// Exact integral of xi^p eta^q over the reference triangle: p! q! / (p+q+2)!.
pub fn ref_monomial_integral(p: usize, q: usize) -> Ratio<i128> {
    Ratio::new(factorial(p) * factorial(q), factorial(p + q + 2))
}

/// Exact reference integral of the product of two polynomials.
pub fn ref_product_integral(a: &Poly, b: &Poly) -> Ratio<i128> {
    let mut s = Ratio::from_integer(0);
    for i in 0..D {
        for j in 0..D {
            if a.c[i][j] == 0 {
                continue;
            }
            for k in 0..D {
                for l in 0..D {
                    if b.c[k][l] == 0 {
                        continue;
                    }
                    let coef = a.c[i][j] as i128 * b.c[k][l] as i128;
                    s += ref_monomial_integral(i + k, j + l) * coef;
                }
            }
        }
    }
    s
}

/// The fifteen basis polynomials of degree <= 4.
pub fn basis_polynomials() -> Vec<Poly> {
    let t = Poly::from_terms;
    let xi = t(&[(1, 1, 0)]);
    let eta = t(&[(1, 0, 1)]);
    let em1 = t(&[(1, 0, 1), (-1, 0, 0)]);
    let one = t(&[(1, 0, 0)]);
    let mut out = vec![
        one,
        t(&[(4, 1, 0), (2, 0, 1), (-2, 0, 0)]),
        t(&[(3, 0, 1), (-1, 0, 0)]),
        t(&[(24, 2, 0), (24, 1, 1), (4, 0, 2), (-24, 1, 0), (-8, 0, 1), (4, 0, 0)]),
        t(&[(20, 1, 1), (10, 0, 2), (-4, 1, 0), (-12, 0, 1), (2, 0, 0)]),
        t(&[(10, 0, 2), (-8, 0, 1), (1, 0, 0)]),
        t(&[
            (160, 3, 0),
            (240, 2, 1),
            (96, 1, 2),
            (8, 0, 3),
            (-240, 2, 0),
            (-192, 1, 1),
            (-24, 0, 2),
            (96, 1, 0),
            (24, 0, 1),
            (-8, 0, 0),
        ]),
        t(&[
            (168, 2, 1),
            (168, 1, 2),
            (28, 0, 3),
            (-24, 2, 0),
            (-192, 1, 1),
            (-60, 0, 2),
            (24, 1, 0),
            (36, 0, 1),
            (-4, 0, 0),
        ]),
        t(&[(84, 1, 2), (42, 0, 3), (-48, 1, 1), (-66, 0, 2), (4, 1, 0), (26, 0, 1), (-2, 0, 0)]),
        t(&[(35, 0, 3), (-45, 0, 2), (15, 0, 1), (-1, 0, 0)]),
    ];
    // degree 4, assembled from the factored forms
    let p10 = xi
        .pow(4)
        .scale(1120)
        .add(&xi.pow(3).mul(&em1).scale(2240))
        .add(&xi.pow(2).mul(&em1.pow(2)).scale(1440))
        .add(&xi.mul(&em1.pow(3)).scale(320))
        .add(&em1.pow(4).scale(16));
    let quad = |a: i64, b: i64, c: i64| xi.pow(2).scale(a).add(&xi.mul(&em1).scale(b)).add(&em1.pow(2).scale(c));
    let p11 = quad(80, 80, 8).mul(&eta.add(&xi.scale(2)).add(&one.scale(-1))).mul(&eta.scale(9).add(&one.scale(-1)));
    let p12 = quad(24, 24, 4).mul(&t(&[(36, 0, 2), (-16, 0, 1), (1, 0, 0)]));
    let p13 = t(&[
        (-4, 1, 0),
        (-44, 0, 1),
        (84, 1, 1),
        (210, 0, 2),
        (-336, 1, 2),
        (-336, 0, 3),
        (336, 1, 3),
        (168, 0, 4),
        (2, 0, 0),
    ]);
    let p14 = t(&[(126, 0, 4), (-224, 0, 3), (126, 0, 2), (-24, 0, 1), (1, 0, 0)]);
    out.extend([p10, p11, p12, p13, p14]);
    out
}

/// Reference-element tables for a fixed degree: basis values at quadrature
/// nodes, edge nodes and vertex derivatives.
#[derive(Debug, Clone)]
pub struct RefElement {
    pub degree: usize,
    pub nmodes: usize,
    pub polys: Vec<Poly>,
    /// Mean of Psi^2 over the reference triangle; `a_K = |K| * norm`.
    pub norms: Vec<f64>,
    pub rule: InteriorRule,
    pub edge: EdgeRule,
    /// `vol_phi[mu * nmodes + l]`
    pub vol_phi: Vec<f64>,
    pub vol_dxi: Vec<f64>,
    pub vol_deta: Vec<f64>,
    /// `edge_phi[i][nu * nmodes + l]` on local edge i (opposite vertex i).
    pub edge_phi: [Vec<f64>; 3],
    /// `vertex_phi[v][l]`
    pub vertex_phi: [Vec<f64>; 3],
    /// `vertex_deriv[v][j][a][l]`: d^a/dxi^a d^(j-a)/deta^(j-a) of mode l at vertex v.
    pub vertex_deriv: [Vec<Vec<Vec<f64>>>; 3],
}

pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Reference point at parameter s along local edge i, walking counter-clockwise.
pub fn ref_edge_point(i: usize, s: f64) -> [f64; 2] {
    let a = REF_VERTICES[(i + 1) % 3];
    let b = REF_VERTICES[(i + 2) % 3];
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

impl RefElement {
    /// Tables for degree `k`, using the default interior rule and k+1 edge nodes.
    pub fn new(k: usize) -> RefElement {
        assert!(k <= MAX_DEGREE, "degree {k} not supported");
        Self::with_rule(k, interior_rule(k))
    }

    pub fn with_rule(k: usize, rule: InteriorRule) -> RefElement {
        let nmodes = dim(k);
        let polys: Vec<Poly> = basis_polynomials().into_iter().take(nmodes).collect();
        let norms = polys
            .iter()
            .map(|p| {
                let r = ref_product_integral(p, p) * 2;
                *r.numer() as f64 / *r.denom() as f64
            })
            .collect();
        let dxi: Vec<Poly> = polys.iter().map(|p| p.derivative(1, 0)).collect();
        let deta: Vec<Poly> = polys.iter().map(|p| p.derivative(0, 1)).collect();
        let tab = |ps: &[Poly], pts: &[[f64; 2]]| -> Vec<f64> {
            pts.iter().flat_map(|x| ps.iter().map(move |p| p.eval(x[0], x[1]))).collect()
        };
        let vol_phi = tab(&polys, &rule.nodes);
        let vol_dxi = tab(&dxi, &rule.nodes);
        let vol_deta = tab(&deta, &rule.nodes);
        let edge = edge_rule(k + 1);
        let edge_phi = std::array::from_fn(|i| {
            let pts: Vec<[f64; 2]> = edge.nodes.iter().map(|&s| ref_edge_point(i, s)).collect();
            tab(&polys, &pts)
        });
        let vertex_phi = std::array::from_fn(|v| tab(&polys, &[REF_VERTICES[v]]));
        let vertex_deriv = std::array::from_fn(|v| {
            let x = REF_VERTICES[v];
            (0..=k)
                .map(|j| {
                    (0..=j).map(|a| polys.iter().map(|p| p.derivative(a, j - a).eval(x[0], x[1])).collect()).collect()
                })
                .collect()
        });
        RefElement {
            degree: k,
            nmodes,
            polys,
            norms,
            rule,
            edge,
            vol_phi,
            vol_dxi,
            vol_deta,
            edge_phi,
            vertex_phi,
            vertex_deriv,
        }
    }

    /// Values of all modes at a reference point.
    pub fn eval_all(&self, xi: f64, eta: f64) -> Vec<f64> {
        self.polys.iter().map(|p| p.eval(xi, eta)).collect()
    }
}

pub(crate) fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Maps reference derivatives of order j to physical ones for an affine cell.
///
/// With `jinv` the inverse Jacobian (xi = jinv * (x - x1)), the returned
/// row-major (j+1)x(j+1) matrix `t` satisfies
/// `d^{a1}_x d^{j-a1}_y f = sum_p t[(j-a1)*(j+1) + (j-p)] * d^p_xi d^{j-p}_eta f`,
/// i.e. rows and columns are both ordered by descending first index.
pub fn derivative_transform(jinv: &[[f64; 2]; 2], j: usize) -> Vec<f64> {
    let n = j + 1;
    let mut t = vec![0.0; n * n];
    let (a11, a12, a21, a22) = (jinv[0][0], jinv[0][1], jinv[1][0], jinv[1][1]);
    for ax in (0..=j).rev() {
        let ay = j - ax;
        let row = j - ax;
        // (a11 d_xi + a21 d_eta)^ax (a12 d_xi + a22 d_eta)^ay
        for r in 0..=ax {
            let cr = binomial(ax, r) * a11.powi(r as i32) * a21.powi((ax - r) as i32);
            for s in 0..=ay {
                let cs = binomial(ay, s) * a12.powi(s as i32) * a22.powi((ay - s) as i32);
                let p = r + s;
                t[row * n + (j - p)] += cr * cs;
            }
        }
    }
    t
}
