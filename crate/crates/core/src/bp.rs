//! Bound preservation: convex decompositions, BP CFL constants and the limiter.
//!
//! A convex decomposition writes the cell average of any polynomial of degree
//! <= k as `sum_i w_i * mean_{e_i}(p) + sum_s omega_s * p(x_s)` with positive
//! weights. Edge `i` here means the i-th longest edge (`l1 >= l2 >= l3`) and
//! vertex `v^(i)` is opposite it. The BP CFL constant is `min_i w_i / l_i`.
//!
//! Two families are provided:
//! - `Optimal`: the optimal P1/P2 decompositions.
//! - `Classical`: the tensor-product Gauss-Lobatto decomposition, used only
//!   through its CFL constant and its edge weights.

use rayon::prelude::*;

use crate::basis::dim;
use crate::dg::{eval_row, DgError, Discretization, ModalState};
use crate::mesh::{CellGeom, Mesh};
use crate::physics::{Model, PhysicsError, Vars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpScheme {
    Optimal,
    Classical,
}

impl std::fmt::Display for BpScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BpScheme::Optimal => "dcw",
            BpScheme::Classical => "zxs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalNode {
    /// Barycentric coordinates with respect to the sorted vertices v^(1..3).
    pub bary: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexDecomposition {
    pub scheme: BpScheme,
    pub degree: usize,
    /// Sorted edge lengths l1 >= l2 >= l3.
    pub lengths: [f64; 3],
    /// Local edge index of the i-th longest edge.
    pub order: [usize; 3],
    /// Edge weights in sorted order.
    pub weights: [f64; 3],
    /// Internal nodes; empty when there is no internal mass or coordinates
    /// are not part of the scheme.
    pub nodes: Vec<InternalNode>,
    /// 1 - sum of edge weights.
    pub internal_mass: f64,
    pub c_bp: f64,
}

impl ConvexDecomposition {
    /// Physical location of internal node s.
    pub fn node_point(&self, g: &CellGeom, s: usize) -> [f64; 2] {
        let b = self.nodes[s].bary;
        let v: [[f64; 2]; 3] = std::array::from_fn(|i| g.vertices[self.order[i]]);
        [b[0] * v[0][0] + b[1] * v[1][0] + b[2] * v[2][0], b[0] * v[0][1] + b[1] * v[1][1] + b[2] * v[2][1]]
    }
}

fn sorted_lengths(g: &CellGeom) -> [f64; 3] {
    std::array::from_fn(|i| g.lengths[g.sorted[i]])
}

/// Optimal decomposition for P1.
pub fn optimal_p1(g: &CellGeom) -> ConvexDecomposition {
    let l = sorted_lengths(g);
    let s = l[0] + l[1];
    let weights = l.map(|li| 2.0 * li / (3.0 * s));
    let omega = (s - 2.0 * l[2]) / (3.0 * s);
    let mut nodes = Vec::new();
    let denom = s - 2.0 * l[2];
    if denom > 0.0 && omega > 0.0 {
        nodes.push(InternalNode { bary: [(l[0] - l[2]) / denom, (l[1] - l[2]) / denom, 0.0], weight: omega });
    }
    ConvexDecomposition {
        scheme: BpScheme::Optimal,
        degree: 1,
        lengths: l,
        order: g.sorted,
        weights,
        nodes,
        internal_mass: omega.max(0.0),
        c_bp: 2.0 / (3.0 * s),
    }
}

/// `l_hat = sqrt(l1^2 + l2^2 + l3^2 - 2/3 (l1 l2 + l2 l3 + l3 l1))`
pub fn l_hat(l: &[f64; 3]) -> f64 {
    let sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    let mixed = l[0] * l[1] + l[1] * l[2] + l[2] * l[0];
    (sq - 2.0 / 3.0 * mixed).max(0.0).sqrt()
}

/// Optimal decomposition for P2 (two internal nodes, merged when they coincide).
pub fn optimal_p2(g: &CellGeom) -> ConvexDecomposition {
    let l = sorted_lengths(g);
    let lbar = (l[0] + l[1] + l[2]) / 3.0;
    let lh = l_hat(&l);
    let weights = l.map(|li| 2.0 * li / (9.0 * lbar + 3.0 * lh));
    let omega = (lbar + lh) / (6.0 * lbar + 2.0 * lh);
    let nodes = p2_raw_nodes(&l, lbar, lh).map(|bary| InternalNode { bary, weight: omega });
    let close = (0..3).all(|i| (nodes[0].bary[i] - nodes[1].bary[i]).abs() <= 1e-12);
    let nodes = if close {
        let bary = std::array::from_fn(|i| 0.5 * (nodes[0].bary[i] + nodes[1].bary[i]));
        vec![InternalNode { bary, weight: 2.0 * omega }]
    } else {
        nodes.to_vec()
    };
    ConvexDecomposition {
        scheme: BpScheme::Optimal,
        degree: 2,
        lengths: l,
        order: g.sorted,
        weights,
        nodes,
        internal_mass: 2.0 * omega,
        c_bp: 2.0 / (9.0 * lbar + 3.0 * lh),
    }
}

/// Barycentric coordinates of the two P2 nodes before merging.
pub fn p2_raw_nodes(l: &[f64; 3], lbar: f64, lh: f64) -> [[f64; 3]; 2] {
    let r3 = 3f64.sqrt();
    let [l1, l2, l3] = *l;
    let c = [
        [
            3.0 * l1 + 3.0 * l2 + r3 * l2 - r3 * l3,
            6.0 * l2 + r3 * l3 - r3 * l1,
            3.0 * l2 + 3.0 * l3 + r3 * l1 - r3 * l2,
        ],
        [
            3.0 * l1 + 3.0 * l2 + r3 * l3 - r3 * l2,
            6.0 * l2 + r3 * l1 - r3 * l3,
            3.0 * l2 + 3.0 * l3 + r3 * l2 - r3 * l1,
        ],
    ];
    let m: [[[[f64; 3]; 3]; 3]; 2] = [
        [
            [[6.0, 1.0, -2.0], [1.0, 2.0 * r3 + 6.0, -r3 - 2.0], [-2.0, -r3 - 2.0, 6.0]],
            [[6.0, -r3 - 2.0, -2.0], [-r3 - 2.0, 12.0, r3 - 2.0], [-2.0, r3 - 2.0, 6.0]],
            [[6.0, r3 - 2.0, -2.0], [r3 - 2.0, 6.0 - 2.0 * r3, 1.0], [-2.0, 1.0, 6.0]],
        ],
        [
            [[6.0, 1.0, -2.0], [1.0, 6.0 - 2.0 * r3, r3 - 2.0], [-2.0, r3 - 2.0, 6.0]],
            [[6.0, r3 - 2.0, -2.0], [r3 - 2.0, 12.0, -r3 - 2.0], [-2.0, -r3 - 2.0, 6.0]],
            [[6.0, -r3 - 2.0, -2.0], [-r3 - 2.0, 2.0 * r3 + 6.0, 1.0], [-2.0, 1.0, 6.0]],
        ],
    ];
    let denom = 18.0 * (lbar + lh) * (l2 + lh);
    std::array::from_fn(|s| {
        std::array::from_fn(|i| {
            let mut q = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    q += l[a] * m[s][i][a][b] * l[b];
                }
            }
            (q + 2.0 * c[s][i] * lh) / denom
        })
    })
}

/// Classical decomposition: only edge weights `2 omega_1^GL / 3` and the remaining internal mass.
pub fn classical(g: &CellGeom, k: usize) -> ConvexDecomposition {
    let l = sorted_lengths(g);
    let lobatto_points = (k + 3).div_ceil(2);
    let w1 = 1.0 / (lobatto_points * (lobatto_points - 1)) as f64;
    let w = 2.0 * w1 / 3.0;
    ConvexDecomposition {
        scheme: BpScheme::Classical,
        degree: k,
        lengths: l,
        order: g.sorted,
        weights: [w; 3],
        nodes: vec![],
        internal_mass: 1.0 - 3.0 * w,
        c_bp: classical_cfl(g, k),
    }
}

/// `1/(9 lbar)` for k = 1 and `1/(27 lbar)` for k = 2.
pub fn classical_cfl(g: &CellGeom, k: usize) -> f64 {
    let lbar = g.perimeter() / 3.0;
    match k {
        1 => 1.0 / (9.0 * lbar),
        _ => 1.0 / (27.0 * lbar),
    }
}

/// `1/(6 l1)`, the same for k = 1 and 2.
pub fn chen_shu_cfl(g: &CellGeom) -> f64 {
    1.0 / (6.0 * sorted_lengths(g)[0])
}

pub fn optimal_cfl(g: &CellGeom, k: usize) -> f64 {
    let l = sorted_lengths(g);
    match k {
        1 => 2.0 / (3.0 * (l[0] + l[1])),
        _ => 2.0 / (3.0 * (l[0] + l[1] + l[2]) + 3.0 * l_hat(&l)),
    }
}

pub fn decomposition(g: &CellGeom, scheme: BpScheme, k: usize) -> Result<ConvexDecomposition, String> {
    match (scheme, k) {
        (BpScheme::Optimal, 1) => Ok(optimal_p1(g)),
        (BpScheme::Optimal, 2) => Ok(optimal_p2(g)),
        (BpScheme::Classical, 1 | 2) => Ok(classical(g, k)),
        _ => Err(format!("bound-preserving limiting supports k = 1, 2 only (got k = {k})")),
    }
}

/// BP time step `(C_SSP / alpha) min_K C_K |K|`.
pub fn bp_timestep(mesh: &Mesh, alpha: f64, c_ssp: f64, scheme: BpScheme, k: usize) -> f64 {
    assert!(mesh.num_cells() > 0, "empty mesh");
    let m = mesh
        .geom
        .iter()
        .map(|g| {
            let c = match scheme {
                BpScheme::Optimal => optimal_cfl(g, k),
                BpScheme::Classical => classical_cfl(g, k),
            };
            c * g.area
        })
        .fold(f64::INFINITY, f64::min);
    c_ssp / alpha * m
}

/// Generic DG time step `(C_SSP / alpha) min_K |K| / ((2k+1) perimeter)`.
pub fn generic_timestep(mesh: &Mesh, alpha: f64, c_ssp: f64, k: usize) -> f64 {
    assert!(mesh.num_cells() > 0, "empty mesh");
    let m = mesh.geom.iter().map(|g| g.area / ((2 * k + 1) as f64 * g.perimeter())).fold(f64::INFINITY, f64::min);
    c_ssp / alpha * m
}

/// Admissible set enforced by the limiter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounds {
    /// Maximum principle for a scalar law.
    Scalar { lo: f64, hi: f64 },
    /// Positive density and internal energy.
    Euler,
}

/// Per-cell check-node rows and the two-step scaling limiter.
#[derive(Debug, Clone)]
pub struct BpLimiter {
    pub scheme: BpScheme,
    pub degree: usize,
    pub bounds: Bounds,
    pub decomps: Vec<ConvexDecomposition>,
    /// Extra basis rows per cell (sorted vertices for optimal P1, the
    /// remainder functional for P2), flattened `[cell][row][mode]`.
    extra: Vec<f64>,
    extra_rows: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LimitStats {
    pub limited_cells: usize,
    pub min_theta: f64,
}

const FLOOR: f64 = 1e-13;

impl BpLimiter {
    pub fn new(disc: &Discretization, scheme: BpScheme, bounds: Bounds) -> Result<BpLimiter, String> {
        let k = disc.degree();
        let r = &disc.refel;
        let nm = r.nmodes;
        let decomps = disc.mesh.geom.iter().map(|g| decomposition(g, scheme, k)).collect::<Result<Vec<_>, _>>()?;
        let extra_rows = match (scheme, k) {
            (BpScheme::Optimal, 1) => 2,
            (_, 2) => 1,
            _ => 0,
        };
        let mut extra = Vec::with_capacity(decomps.len() * extra_rows * nm);
        for d in &decomps {
            if extra_rows == 2 {
                extra.extend_from_slice(&r.vertex_phi[d.order[0]]);
                extra.extend_from_slice(&r.vertex_phi[d.order[1]]);
            } else if extra_rows == 1 {
                // u* = (u_bar - sum_i w_i mean_{e_i} u) / (1 - sum w)
                let mut row = vec![0.0; nm];
                row[0] = 1.0;
                for (s, &w) in d.weights.iter().enumerate() {
                    let i = d.order[s];
                    for (nu, wg) in r.edge.weights.iter().enumerate() {
                        for l in 0..nm {
                            row[l] -= w * wg * r.edge_phi[i][nu * nm + l];
                        }
                    }
                }
                row.iter_mut().for_each(|x| *x /= d.internal_mass);
                extra.extend(row);
            }
        }
        Ok(BpLimiter { scheme, degree: k, bounds, decomps, extra, extra_rows })
    }

    /// States at every check node of cell k.
    pub fn check_values(&self, disc: &Discretization, st: &ModalState, k: usize) -> Vec<Vars> {
        let r = &disc.refel;
        let nm = r.nmodes;
        let cs = st.cell(k);
        let mut out = Vec::with_capacity(3 * r.edge.len() + self.extra_rows);
        for i in 0..3 {
            for nu in 0..r.edge.len() {
                out.push(eval_row(cs, &r.edge_phi[i][nu * nm..(nu + 1) * nm], st.ncomp));
            }
        }
        let base = k * self.extra_rows * nm;
        for e in 0..self.extra_rows {
            out.push(eval_row(cs, &self.extra[base + e * nm..base + (e + 1) * nm], st.ncomp));
        }
        out
    }

    /// Limits every cell in place. Cell averages are left bit-identical.
    pub fn limit(&self, disc: &Discretization, st: &mut ModalState) -> Result<LimitStats, DgError> {
        assert_eq!(disc.degree(), self.degree);
        let nm = dim(self.degree);
        let nc = st.ncomp;
        let stride = st.stride();
        let snapshot = &*st;
        let thetas: Vec<Result<(f64, f64), DgError>> =
            (0..snapshot.ncells).into_par_iter().map(|k| self.cell_thetas(disc, snapshot, k)).collect();
        let mut stats = LimitStats { limited_cells: 0, min_theta: 1.0 };
        let mut all = Vec::with_capacity(thetas.len());
        for t in thetas {
            let (t1, t2) = t?;
            if t1 < 1.0 || t2 < 1.0 {
                stats.limited_cells += 1;
                stats.min_theta = stats.min_theta.min(t1 * t2);
            }
            all.push((t1, t2));
        }
        st.coeffs.par_chunks_mut(stride).zip(all.par_iter()).for_each(|(cs, &(t1, t2))| {
            if t1 == 1.0 && t2 == 1.0 {
                return;
            }
            for l in 1..nm {
                for c in 0..nc {
                    let f = if c == 0 { t1 * t2 } else { t2 };
                    cs[l * nc + c] *= f;
                }
            }
        });
        Ok(stats)
    }

    /// (theta1, theta2): theta1 scales the first component's high modes, then
    /// theta2 scales all high modes.
    fn cell_thetas(&self, disc: &Discretization, st: &ModalState, k: usize) -> Result<(f64, f64), DgError> {
        let avg = st.average(k);
        let vals = self.check_values(disc, st, k);
        match self.bounds {
            Bounds::Scalar { lo, hi } => {
                let ub = avg[0];
                let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
                if !(ub >= lo - tol && ub <= hi + tol) {
                    return Err(DgError::Inadmissible {
                        cell: k,
                        location: format!("cell average {ub:e} outside [{lo}, {hi}]"),
                        source: PhysicsError::NonFinite(avg),
                    });
                }
                let (mn, mx) =
                    vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[0]), b.max(v[0])));
                let mut theta: f64 = 1.0;
                if mx > hi {
                    theta = theta.min((hi - ub) / (mx - ub));
                }
                if mn < lo {
                    theta = theta.min((ub - lo) / (ub - mn));
                }
                Ok((theta.clamp(0.0, 1.0), 1.0))
            }
            Bounds::Euler => {
                let rho = avg[0];
                let e_bar = Model::internal_energy(&avg);
                if !(rho > 0.0 && e_bar > 0.0) {
                    return Err(DgError::Inadmissible {
                        cell: k,
                        location: "cell average".into(),
                        source: PhysicsError::Inadmissible { rho, internal_energy: e_bar },
                    });
                }
                let eps1 = rho.min(FLOOR);
                let rho_min = vals.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                let theta1 = if rho_min < eps1 { ((rho - eps1) / (rho - rho_min)).clamp(0.0, 1.0) } else { 1.0 };
                let eps2 = e_bar.min(FLOOR);
                let mut e_min = f64::INFINITY;
                for v in &vals {
                    let mut u = *v;
                    u[0] = rho + theta1 * (v[0] - rho);
                    let e = Model::internal_energy(&u);
                    e_min = if e.is_nan() { f64::NEG_INFINITY } else { e_min.min(e) };
                }
                let theta2 = if e_min < eps2 {
                    if e_min.is_finite() {
                        ((e_bar - eps2) / (e_bar - e_min)).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                } else {
                    1.0
                };
                Ok((theta1, theta2))
            }
        }
    }
}
