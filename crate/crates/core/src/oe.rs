//! Oscillation-eliminating filter.
//!
//! After every Runge-Kutta stage each degree-m modal block of cell K is
//! multiplied by `exp(-dt * sum_{j<=m} sigma_K^j)`. The damping rate
//! `sigma_K^j = sum_i beta_i / h_i * delta_i^j` combines local wave speeds with
//! normalised jumps of the order-j physical derivatives at the two endpoints
//! of each edge.
//!
//! The rotation-invariant variant replaces the two momentum jump measures by
//! the larger of the normal and tangential momentum measures, normalised by
//! the Euclidean deviation of the momentum vector.

use rayon::prelude::*;

use crate::basis::{binomial, derivative_transform, mode_degree};
use crate::dg::{BoundaryRule, BoundarySpec, DgError, Discretization, ModalState};
use crate::mesh::Neighbor;
use crate::physics::{Model, Vars};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OeMode {
    Off,
    Componentwise,
    RotationInvariant,
}

impl OeMode {
    pub fn validate(&self, model: &Model) -> Result<(), String> {
        if *self == OeMode::RotationInvariant && !model.is_euler() {
            return Err("rotation-invariant OE needs a model with momentum components".into());
        }
        Ok(())
    }
}

/// Global deviation of the discrete solution from its domain mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub mean: Vars,
    /// max |u_c - mean_c| over cells and interior quadrature nodes.
    pub dev: Vars,
    /// max |m - mean_m| (Euclidean) for momentum; zero for scalar models.
    pub momentum_dev: f64,
}

impl Deviation {
    /// Whether component c falls under the degenerate-deviation guard.
    pub fn guarded(&self, c: usize) -> bool {
        self.dev[c] <= EPS * self.mean[c].abs().max(1.0)
    }

    pub fn momentum_guarded(&self) -> bool {
        self.momentum_dev <= EPS * self.mean[1].hypot(self.mean[2]).max(1.0)
    }
}

pub fn global_deviation(disc: &Discretization, st: &ModalState) -> Deviation {
    let nc = st.ncomp;
    let mesh = &disc.mesh;
    let r = &disc.refel;
    let nm = r.nmodes;
    let mut mean = [0.0; 4];
    for k in 0..st.ncells {
        let a = mesh.geom[k].area;
        for c in 0..nc {
            mean[c] += a * st.get(k, 0, c);
        }
    }
    let area = mesh.total_area();
    mean.iter_mut().for_each(|m| *m /= area);
    let per_cell: Vec<(Vars, f64)> = (0..st.ncells)
        .into_par_iter()
        .map(|k| {
            let mut d = [0.0f64; 4];
            let mut dm = 0.0f64;
            for mu in 0..r.rule.len() {
                let u = crate::dg::eval_row(st.cell(k), &r.vol_phi[mu * nm..(mu + 1) * nm], nc);
                for c in 0..nc {
                    d[c] = d[c].max((u[c] - mean[c]).abs());
                }
                if nc == 4 {
                    dm = dm.max((u[1] - mean[1]).hypot(u[2] - mean[2]));
                }
            }
            (d, dm)
        })
        .collect();
    let mut dev = [0.0f64; 4];
    let mut momentum_dev = 0.0f64;
    for (d, dm) in per_cell {
        for c in 0..nc {
            dev[c] = dev[c].max(d[c]);
        }
        momentum_dev = momentum_dev.max(dm);
    }
    Deviation { mean, dev, momentum_dev }
}

/// `A^{k,j} = (2j + 1) / ((2k - 1) j!)`
pub fn a_coefficient(k: usize, j: usize) -> f64 {
    let fact: f64 = (1..=j).map(|i| i as f64).product();
    (2 * j + 1) as f64 / ((2 * k - 1) as f64 * fact)
}

/// Number of multi-indices of total order <= k.
fn n_multi(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Index of the multi-index with `ax` x-derivatives in the order-j block.
#[inline]
fn multi_index(j: usize, ax: usize) -> usize {
    j * (j + 1) / 2 + (j - ax)
}

/// Physical derivatives of every component at the three vertices of each cell.
///
/// Layout `[cell][vertex][multi-index][component]`.
fn vertex_derivatives(disc: &Discretization, st: &ModalState) -> Vec<f64> {
    let k = disc.degree();
    let nc = st.ncomp;
    let nmi = n_multi(k);
    let r = &disc.refel;
    let per_cell = 3 * nmi * nc;
    let mut out = vec![0.0; st.ncells * per_cell];
    out.par_chunks_mut(per_cell).enumerate().for_each(|(cell, o)| {
        let cs = st.cell(cell);
        let jinv = disc.mesh.geom[cell].jac_inv;
        let transforms: Vec<Vec<f64>> = (0..=k).map(|j| derivative_transform(&jinv, j)).collect();
        for v in 0..3 {
            for j in 0..=k {
                let mut refd = [[0.0; 4]; 5];
                for (a, rd) in refd.iter_mut().enumerate().take(j + 1) {
                    let tab = &r.vertex_deriv[v][j][a];
                    for l in 0..r.nmodes {
                        if mode_degree(l) < j {
                            continue;
                        }
                        for c in 0..nc {
                            rd[c] += cs[l * nc + c] * tab[l];
                        }
                    }
                }
                let t = &transforms[j];
                for row in 0..=j {
                    let ax = j - row;
                    let base = (v * nmi + multi_index(j, ax)) * nc;
                    for col in 0..=j {
                        let a = j - col;
                        let w = t[row * (j + 1) + col];
                        for c in 0..nc {
                            o[base + c] += w * refd[a][c];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Per-cell damping rates `sigma[cell][j][component]`, flattened, without the
/// time-step factor.
pub fn damping_rates(
    disc: &Discretization,
    model: &Model,
    bc: &BoundarySpec,
    st: &ModalState,
    t: f64,
    mode: OeMode,
) -> Result<Vec<f64>, DgError> {
    let k = disc.degree();
    let nc = st.ncomp;
    if mode == OeMode::Off || k == 0 {
        return Ok(vec![0.0; st.ncells * (k + 1) * nc]);
    }
    let dev = global_deviation(disc, st);
    let derivs = vertex_derivatives(disc, st);
    let nmi = n_multi(k);
    let per_cell = 3 * nmi * nc;
    let mesh = &disc.mesh;
    let rioe = mode == OeMode::RotationInvariant;

    let results: Vec<Result<Vec<f64>, DgError>> = (0..st.ncells)
        .into_par_iter()
        .map(|cell| {
            let g = &mesh.geom[cell];
            let mine = &derivs[cell * per_cell..(cell + 1) * per_cell];
            let mut sigma = vec![0.0; (k + 1) * nc];
            for i in 0..3 {
                let n = g.normals[i];
                let h = g.heights[i];
                let (vc, vd) = ((i + 1) % 3, (i + 2) % 3);
                let e = &mesh.edges[mesh.cell_edges[cell][i]];
                let other = if e.cell == cell && e.local == i {
                    e.neighbor
                } else {
                    Neighbor::Cell { cell: e.cell, local: e.local }
                };
                // exterior derivative at our vertex v (multi-index m, component c)
                let mine_at = |v: usize, m: usize| -> Vars {
                    let mut u = [0.0; 4];
                    u[..nc].copy_from_slice(&mine[(v * nmi + m) * nc..(v * nmi + m + 1) * nc]);
                    u
                };
                let exterior = |v: usize, m: usize| -> Vars {
                    match other {
                        Neighbor::Cell { cell: nb, local: jn } => {
                            // our vc is their (jn+2), our vd is their (jn+1)
                            let w = if v == vc { (jn + 2) % 3 } else { (jn + 1) % 3 };
                            let d = &derivs[nb * per_cell..(nb + 1) * per_cell];
                            let mut u = [0.0; 4];
                            u[..nc].copy_from_slice(&d[(w * nmi + m) * nc..(w * nmi + m + 1) * nc]);
                            u
                        }
                        Neighbor::Boundary(tag) => {
                            let ui = mine_at(v, m);
                            match bc.rule(tag) {
                                BoundaryRule::Outflow => ui,
                                BoundaryRule::Reflective => model.reflect(&ui, n),
                                rule => {
                                    if m == 0 {
                                        rule.ghost(model, &ui, g.vertices[v], n, t)
                                    } else {
                                        [0.0; 4]
                                    }
                                }
                            }
                        }
                    }
                };

                let beta = edge_beta(
                    model,
                    st,
                    cell,
                    other,
                    &[mine_at(vc, 0), mine_at(vd, 0)],
                    &[exterior(vc, 0), exterior(vd, 0)],
                    n,
                )?;
                if beta == 0.0 {
                    continue;
                }
                let scale = beta / h;
                for j in 0..=k {
                    // sum over |alpha| = j of C(j, ax) * (jump_c^2 + jump_d^2), per component
                    let mut s = [0.0; 4];
                    let mut sn = 0.0;
                    let mut stg = 0.0;
                    for ax in 0..=j {
                        let m = multi_index(j, ax);
                        let w = binomial(j, ax);
                        for v in [vc, vd] {
                            let a = mine_at(v, m);
                            let b = exterior(v, m);
                            let jump: Vars = std::array::from_fn(|c| a[c] - b[c]);
                            for c in 0..nc {
                                s[c] += w * jump[c] * jump[c];
                            }
                            if rioe {
                                let jn = jump[1] * n[0] + jump[2] * n[1];
                                let jt = -jump[1] * n[1] + jump[2] * n[0];
                                sn += w * jn * jn;
                                stg += w * jt * jt;
                            }
                        }
                    }
                    let pre = a_coefficient(k, j) * h.powi(j as i32);
                    for c in 0..nc {
                        let delta = if rioe && (c == 1 || c == 2) {
                            if dev.momentum_guarded() {
                                0.0
                            } else {
                                pre / dev.momentum_dev * (0.5 * sn.max(stg)).sqrt()
                            }
                        } else if dev.guarded(c) {
                            0.0
                        } else {
                            pre / dev.dev[c] * (0.5 * s[c]).sqrt()
                        };
                        sigma[j * nc + c] += scale * delta;
                    }
                }
            }
            Ok(sigma)
        })
        .collect();
    let mut out = Vec::with_capacity(st.ncells * (k + 1) * nc);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Max wave speed over the endpoint traces of both sides. Inadmissible Euler
/// endpoint traces are skipped and the two cell averages are used instead.
fn edge_beta(
    model: &Model,
    st: &ModalState,
    cell: usize,
    other: Neighbor,
    inner: &[Vars; 2],
    outer: &[Vars; 2],
    n: [f64; 2],
) -> Result<f64, DgError> {
    let mut beta: f64 = 0.0;
    let mut skipped = false;
    for u in inner.iter().chain(outer) {
        match model.wavespeed(u, n) {
            Ok(s) => beta = beta.max(s),
            Err(_) => skipped = true,
        }
    }
    if skipped {
        let mut avgs = vec![(cell, st.average(cell))];
        if let Neighbor::Cell { cell: nb, .. } = other {
            avgs.push((nb, st.average(nb)));
        }
        for (c, u) in avgs {
            let s = model.wavespeed(&u, n).map_err(|source| DgError::Inadmissible {
                cell: c,
                location: "cell average (OE wave speed)".into(),
                source,
            })?;
            beta = beta.max(s);
        }
    }
    Ok(beta)
}

/// Applies the filter in place. Cell averages are never touched.
pub fn apply_oe(
    disc: &Discretization,
    model: &Model,
    bc: &BoundarySpec,
    st: &mut ModalState,
    dt: f64,
    t: f64,
    mode: OeMode,
) -> Result<(), DgError> {
    if mode == OeMode::Off || dt == 0.0 {
        return Ok(());
    }
    let k = disc.degree();
    let nc = st.ncomp;
    let sigma = damping_rates(disc, model, bc, st, t, mode)?;
    let nm = st.nmodes;
    let stride = st.stride();
    st.coeffs.par_chunks_mut(stride).enumerate().for_each(|(cell, cs)| {
        let s = &sigma[cell * (k + 1) * nc..(cell + 1) * (k + 1) * nc];
        let mut factors = [[1.0; 4]; 5];
        for c in 0..nc {
            let mut acc = s[c];
            for m in 1..=k {
                acc += s[m * nc + c];
                factors[m][c] = (-dt * acc).exp();
            }
        }
        for l in 1..nm {
            let m = mode_degree(l);
            for c in 0..nc {
                cs[l * nc + c] *= factors[m][c];
            }
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured, BoundaryTag, Diagonal, RectSpec, SideBc};

    fn disc(n: usize, k: usize) -> Discretization {
        let m = generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], n, n)).unwrap();
        Discretization::new(m.jittered(0.2, 11).unwrap(), k)
    }

    #[test]
    fn a_coefficients() {
        assert_eq!(a_coefficient(1, 0), 1.0);
        assert_eq!(a_coefficient(2, 0), 1.0 / 3.0);
        assert_eq!(a_coefficient(2, 2), 5.0 / 6.0);
    }

    #[test]
    fn constant_state_is_untouched() {
        let d = disc(3, 2);
        let mut st = d.zeros(1);
        for k in 0..st.ncells {
            st.cell_mut(k)[0] = 3.0;
        }
        let before = st.clone();
        apply_oe(&d, &Model::advection(), &BoundarySpec::new(), &mut st, 0.1, 0.0, OeMode::Componentwise).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn continuous_polynomial_has_no_jumps() {
        let d = disc(3, 2);
        let st = d.project(1, |x, y| [x * x - 2.0 * x * y + 0.3 * y, 0.0, 0.0, 0.0]);
        let s = damping_rates(&d, &Model::advection(), &BoundarySpec::new(), &st, 0.0, OeMode::Componentwise).unwrap();
        // periodic glue introduces jumps on boundary-adjacent cells, interior ones stay clean
        let interior = (0..st.ncells).find(|&k| d.mesh.cell_edges[k].iter().all(|&e| !d.mesh.edges[e].periodic));
        let k = interior.unwrap();
        assert!(s[k * 3..(k + 1) * 3].iter().all(|x| x.abs() < 1e-10), "{:?}", &s[k * 3..(k + 1) * 3]);
    }

    #[test]
    fn piecewise_constant_jump_measure() {
        // two cells split along the diagonal, values 0 and 1, outflow elsewhere
        let m = generate_structured(
            &RectSpec::new([0.0, 1.0], [0.0, 1.0], 1, 1)
                .diagonal(Diagonal::Backward)
                .all_sides(SideBc::Tag(BoundaryTag::Outflow)),
        )
        .unwrap();
        let d = Discretization::new(m, 1);
        let mut st = d.zeros(1);
        st.cell_mut(1)[0] = 1.0;
        let bc = BoundarySpec::new().with(BoundaryTag::Outflow, BoundaryRule::Outflow);
        let s = damping_rates(&d, &Model::advection(), &bc, &st, 0.0, OeMode::Componentwise).unwrap();
        // deviation from the mean 1/2 is 1/2, so delta^0 = A^{1,0} * sqrt(1/2 * 2) / (1/2) = 2
        let g = &d.mesh.geom[0];
        let diag = (0..3).find(|&i| (g.lengths[i] - 2f64.sqrt()).abs() < 1e-14).unwrap();
        let beta = (g.normals[diag][0] + g.normals[diag][1]).abs();
        let expected = beta / g.heights[diag] * 2.0;
        assert!((s[0] - expected).abs() < 1e-13, "{} vs {}", s[0], expected);
    }

    #[test]
    fn averages_preserved_and_modes_damped() {
        let d = disc(4, 3);
        let mut st = d.project(1, |x, y| [if x + 0.3 * y > 0.5 { 1.0 } else { 0.0 }, 0.0, 0.0, 0.0]);
        let before = st.clone();
        apply_oe(&d, &Model::burgers(), &BoundarySpec::new(), &mut st, 0.05, 0.0, OeMode::Componentwise).unwrap();
        for k in 0..st.ncells {
            assert_eq!(st.get(k, 0, 0).to_bits(), before.get(k, 0, 0).to_bits());
            for l in 1..st.nmodes {
                assert!(st.get(k, l, 0).abs() <= before.get(k, l, 0).abs());
            }
        }
        assert_ne!(st, before);
    }

    #[test]
    fn rioe_requires_euler() {
        assert!(OeMode::RotationInvariant.validate(&Model::advection()).is_err());
        assert!(OeMode::RotationInvariant.validate(&Model::euler()).is_ok());
    }
}
