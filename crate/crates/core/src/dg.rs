//! Modal DG state and the semi-discrete residual.
//!
//! Coefficients are stored cell-major as `[cell][mode][component]`. Since the
//! basis is orthogonal with `Psi_0 = 1`, mode 0 is the cell average.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{ref_edge_point, RefElement};
use crate::mesh::{BoundaryTag, Mesh, Neighbor};
use crate::physics::{Model, PhysicsError, Vars};

#[derive(Debug, Clone, Error)]
pub enum DgError {
    #[error("cell {cell}, {location}: {source}")]
    Inadmissible { cell: usize, location: String, source: PhysicsError },
    #[error("non-finite coefficient in cell {cell}")]
    NonFinite { cell: usize },
    #[error("boundary: {0}")]
    Boundary(String),
}

pub type StateFn = Arc<dyn Fn(f64, f64, f64) -> Vars + Send + Sync>;
/// Ghost state from (interior trace, point, outward normal, time).
pub type GhostFn = Arc<dyn Fn(&Vars, [f64; 2], [f64; 2], f64) -> Vars + Send + Sync>;

/// How the exterior trace is built on a tagged boundary.
#[derive(Clone)]
pub enum BoundaryRule {
    /// Prescribed state u(x, y, t).
    Inflow(StateFn),
    /// Exact solution u(x, y, t).
    Exact(StateFn),
    /// Copies the interior trace.
    Outflow,
    /// Mirrors the normal momentum (Euler walls).
    Reflective,
    /// Arbitrary ghost, treated as a constant ghost by the OE jumps.
    Custom(GhostFn),
}

impl BoundaryRule {
    pub fn constant(u: Vars) -> BoundaryRule {
        BoundaryRule::Inflow(Arc::new(move |_, _, _| u))
    }

    pub fn ghost(&self, model: &Model, ui: &Vars, x: [f64; 2], n: [f64; 2], t: f64) -> Vars {
        match self {
            BoundaryRule::Inflow(f) | BoundaryRule::Exact(f) => f(x[0], x[1], t),
            BoundaryRule::Outflow => *ui,
            BoundaryRule::Reflective => model.reflect(ui, n),
            BoundaryRule::Custom(g) => g(ui, x, n, t),
        }
    }
}

impl std::fmt::Debug for BoundaryRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundaryRule::Inflow(_) => "Inflow",
            BoundaryRule::Exact(_) => "Exact",
            BoundaryRule::Outflow => "Outflow",
            BoundaryRule::Reflective => "Reflective",
            BoundaryRule::Custom(_) => "Custom",
        };
        f.write_str(s)
    }
}

/// Rule per boundary tag. Periodic tags are resolved by the mesh.
#[derive(Clone, Debug, Default)]
pub struct BoundarySpec {
    rules: HashMap<BoundaryTag, BoundaryRule>,
}

impl BoundarySpec {
    pub fn new() -> BoundarySpec {
        BoundarySpec::default()
    }

    pub fn with(mut self, tag: BoundaryTag, rule: BoundaryRule) -> BoundarySpec {
        self.rules.insert(tag, rule);
        self
    }

    pub fn rule(&self, tag: BoundaryTag) -> &BoundaryRule {
        self.rules.get(&tag).expect("boundary spec validated against the mesh")
    }

    /// Every tagged boundary edge of the mesh needs a rule.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), DgError> {
        for e in &mesh.edges {
            if let Neighbor::Boundary(tag) = e.neighbor {
                if !self.rules.contains_key(&tag) {
                    return Err(DgError::Boundary(format!("no rule for boundary tag {tag}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub degree: usize,
    pub ncomp: usize,
    pub nmodes: usize,
    pub ncells: usize,
    pub coeffs: Vec<f64>,
}

impl ModalState {
    pub fn zeros(degree: usize, ncomp: usize, ncells: usize) -> ModalState {
        let nmodes = crate::basis::dim(degree);
        ModalState { degree, ncomp, nmodes, ncells, coeffs: vec![0.0; ncells * nmodes * ncomp] }
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.nmodes * self.ncomp
    }

    #[inline]
    pub fn cell(&self, k: usize) -> &[f64] {
        let s = self.stride();
        &self.coeffs[k * s..(k + 1) * s]
    }

    #[inline]
    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.coeffs[k * s..(k + 1) * s]
    }

    #[inline]
    pub fn get(&self, k: usize, mode: usize, c: usize) -> f64 {
        self.coeffs[(k * self.nmodes + mode) * self.ncomp + c]
    }

    pub fn average(&self, k: usize) -> Vars {
        let mut u = [0.0; 4];
        let cs = self.cell(k);
        u[..self.ncomp].copy_from_slice(&cs[..self.ncomp]);
        u
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.coeffs.iter().position(|x| !x.is_finite()).map(|i| i / self.stride())
    }
}

/// Evaluates a cell expansion against one row of basis values.
#[inline]
pub fn eval_row(cs: &[f64], phi: &[f64], ncomp: usize) -> Vars {
    let mut u = [0.0; 4];
    for (l, &p) in phi.iter().enumerate() {
        let row = &cs[l * ncomp..(l + 1) * ncomp];
        for c in 0..ncomp {
            u[c] += row[c] * p;
        }
    }
    u
}

/// Mesh plus reference tables for a fixed polynomial degree.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub refel: RefElement,
}

/// How the global Lax-Friedrichs coefficient is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// Max over cell averages against each edge normal.
    CellAverage,
    /// Max over edge quadrature traces (both sides) and edge endpoints.
    Traces,
}

impl Discretization {
    pub fn new(mesh: Mesh, degree: usize) -> Discretization {
        Discretization { mesh, refel: RefElement::new(degree) }
    }

    pub fn degree(&self) -> usize {
        self.refel.degree
    }

    pub fn zeros(&self, ncomp: usize) -> ModalState {
        ModalState::zeros(self.degree(), ncomp, self.mesh.num_cells())
    }

    /// L2 projection with the interior rule.
    pub fn project(&self, ncomp: usize, f: impl Fn(f64, f64) -> Vars + Sync) -> ModalState {
        let mut st = self.zeros(ncomp);
        let r = &self.refel;
        let nm = r.nmodes;
        let stride = st.stride();
        st.coeffs.par_chunks_mut(stride).enumerate().for_each(|(k, cs)| {
            let g = &self.mesh.geom[k];
            for (mu, (x, w)) in r.rule.nodes.iter().zip(&r.rule.weights).enumerate() {
                let p = g.map(x[0], x[1]);
                let u = f(p[0], p[1]);
                for l in 0..nm {
                    let phi = r.vol_phi[mu * nm + l];
                    for c in 0..ncomp {
                        cs[l * ncomp + c] += w * u[c] * phi;
                    }
                }
            }
            for l in 0..nm {
                for c in 0..ncomp {
                    cs[l * ncomp + c] /= r.norms[l];
                }
            }
        });
        st
    }

    /// Value at a physical point assumed to lie in cell k.
    pub fn eval_point(&self, st: &ModalState, k: usize, x: [f64; 2]) -> Vars {
        let g = &self.mesh.geom[k];
        let d = [x[0] - g.vertices[0][0], x[1] - g.vertices[0][1]];
        let xi = g.jac_inv[0][0] * d[0] + g.jac_inv[0][1] * d[1];
        let eta = g.jac_inv[1][0] * d[0] + g.jac_inv[1][1] * d[1];
        eval_row(st.cell(k), &self.refel.eval_all(xi, eta), st.ncomp)
    }

    /// Trace of cell k on its local edge i at edge node nu.
    #[inline]
    pub fn edge_trace(&self, st: &ModalState, k: usize, i: usize, nu: usize) -> Vars {
        let nm = self.refel.nmodes;
        eval_row(st.cell(k), &self.refel.edge_phi[i][nu * nm..(nu + 1) * nm], st.ncomp)
    }

    #[inline]
    pub fn vertex_value(&self, st: &ModalState, k: usize, v: usize) -> Vars {
        eval_row(st.cell(k), &self.refel.vertex_phi[v], st.ncomp)
    }

    /// Physical position of node nu on local edge i of cell k.
    pub fn edge_point(&self, k: usize, i: usize, nu: usize) -> [f64; 2] {
        let r = ref_edge_point(i, self.refel.edge.nodes[nu]);
        self.mesh.geom[k].map(r[0], r[1])
    }

    /// Exterior trace seen from (cell, local edge, node).
    pub fn exterior_trace(
        &self,
        st: &ModalState,
        model: &Model,
        bc: &BoundarySpec,
        k: usize,
        i: usize,
        nu: usize,
        ui: &Vars,
        t: f64,
    ) -> Vars {
        let e = &self.mesh.edges[self.mesh.cell_edges[k][i]];
        let q = self.refel.edge.len();
        let other =
            if e.cell == k && e.local == i { e.neighbor } else { Neighbor::Cell { cell: e.cell, local: e.local } };
        match other {
            Neighbor::Cell { cell, local } => self.edge_trace(st, cell, local, q - 1 - nu),
            Neighbor::Boundary(tag) => {
                let n = self.mesh.geom[k].normals[i];
                bc.rule(tag).ghost(model, ui, self.edge_point(k, i, nu), n, t)
            }
        }
    }

    /// Global Lax-Friedrichs coefficient.
    ///
    /// In trace mode, edge quadrature traces must be admissible; endpoint traces
    /// are included where they are admissible.
    pub fn max_wavespeed(
        &self,
        st: &ModalState,
        model: &Model,
        bc: &BoundarySpec,
        t: f64,
        mode: AlphaMode,
    ) -> Result<f64, DgError> {
        let q = self.refel.edge.len();
        let per_cell: Vec<Result<f64, DgError>> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|k| {
                let g = &self.mesh.geom[k];
                let mut a: f64 = 0.0;
                match mode {
                    AlphaMode::CellAverage => {
                        let u = st.average(k);
                        for i in 0..3 {
                            let s = model.wavespeed(&u, g.normals[i]).map_err(|source| DgError::Inadmissible {
                                cell: k,
                                location: "cell average".into(),
                                source,
                            })?;
                            a = a.max(s);
                        }
                    }
                    AlphaMode::Traces => {
                        for i in 0..3 {
                            let n = g.normals[i];
                            for nu in 0..q {
                                let ui = self.edge_trace(st, k, i, nu);
                                let ue = self.exterior_trace(st, model, bc, k, i, nu, &ui, t);
                                for (u, side) in [(ui, "interior"), (ue, "exterior")] {
                                    let s = model.wavespeed(&u, n).map_err(|source| DgError::Inadmissible {
                                        cell: k,
                                        location: format!("edge {i} node {nu} {side} trace"),
                                        source,
                                    })?;
                                    a = a.max(s);
                                }
                            }
                            for v in [(i + 1) % 3, (i + 2) % 3] {
                                if let Ok(s) = model.wavespeed(&self.vertex_value(st, k, v), n) {
                                    a = a.max(s);
                                }
                            }
                        }
                    }
                }
                Ok(a)
            })
            .collect();
        let mut alpha: f64 = 0.0;
        for r in per_cell {
            alpha = alpha.max(r?);
        }
        Ok(alpha)
    }

    /// Semi-discrete right-hand side du/dt = L(u), written into `out`.
    ///
    /// Euler traces are checked for admissibility before any flux is formed.
    pub fn residual(
        &self,
        model: &Model,
        bc: &BoundarySpec,
        st: &ModalState,
        t: f64,
        alpha: f64,
        out: &mut ModalState,
    ) -> Result<(), DgError> {
        let mesh = &self.mesh;
        let r = &self.refel;
        let nm = r.nmodes;
        let nc = st.ncomp;
        let q = r.edge.len();
        let check = model.is_euler();

        let mut flux = vec![[0.0; 4]; mesh.edges.len() * q];
        let errors: Vec<Option<DgError>> = flux
            .par_chunks_mut(q)
            .enumerate()
            .map(|(ei, fl)| {
                let e = &mesh.edges[ei];
                let (k, i) = (e.cell, e.local);
                let n = mesh.geom[k].normals[i];
                for (nu, f) in fl.iter_mut().enumerate() {
                    let ui = self.edge_trace(st, k, i, nu);
                    let ue = match e.neighbor {
                        Neighbor::Cell { cell, local } => self.edge_trace(st, cell, local, q - 1 - nu),
                        Neighbor::Boundary(tag) => bc.rule(tag).ghost(model, &ui, self.edge_point(k, i, nu), n, t),
                    };
                    if check {
                        for (u, side) in [(&ui, "interior"), (&ue, "exterior")] {
                            if let Err(source) = model.check(u) {
                                return Some(DgError::Inadmissible {
                                    cell: k,
                                    location: format!("edge {ei} node {nu} {side} trace"),
                                    source,
                                });
                            }
                        }
                    }
                    *f = model.lf_flux(&ui, &ue, n, alpha);
                }
                None
            })
            .collect();
        if let Some(err) = errors.into_iter().flatten().next() {
            return Err(err);
        }

        let stride = out.stride();
        out.coeffs.par_chunks_mut(stride).enumerate().for_each(|(k, o)| {
            o.iter_mut().for_each(|x| *x = 0.0);
            let g = &mesh.geom[k];
            let cs = st.cell(k);
            let a = g.jac_inv;
            for (mu, w) in r.rule.weights.iter().enumerate() {
                let u = eval_row(cs, &r.vol_phi[mu * nm..(mu + 1) * nm], nc);
                let (f1, f2) = model.flux(&u);
                let wa = w * g.area;
                let dxi = &r.vol_dxi[mu * nm..(mu + 1) * nm];
                let deta = &r.vol_deta[mu * nm..(mu + 1) * nm];
                for c in 0..nc {
                    let gx = wa * (a[0][0] * f1[c] + a[0][1] * f2[c]);
                    let gy = wa * (a[1][0] * f1[c] + a[1][1] * f2[c]);
                    for l in 1..nm {
                        o[l * nc + c] += gx * dxi[l] + gy * deta[l];
                    }
                }
            }
            for i in 0..3 {
                let ei = mesh.cell_edges[k][i];
                let e = &mesh.edges[ei];
                let owner = e.cell == k && e.local == i;
                let len = g.lengths[i];
                for nu in 0..q {
                    let (f, sign) = if owner { (flux[ei * q + nu], 1.0) } else { (flux[ei * q + q - 1 - nu], -1.0) };
                    let wl = sign * len * r.edge.weights[nu];
                    let phi = &r.edge_phi[i][nu * nm..(nu + 1) * nm];
                    for l in 0..nm {
                        for c in 0..nc {
                            o[l * nc + c] -= wl * f[c] * phi[l];
                        }
                    }
                }
            }
            for l in 0..nm {
                let inv = 1.0 / (g.area * r.norms[l]);
                for c in 0..nc {
                    o[l * nc + c] *= inv;
                }
            }
        });
        Ok(())
    }

    /// Area-weighted sum of cell averages per component.
    pub fn total_mass(&self, st: &ModalState) -> Vars {
        let mut m = [0.0; 4];
        for k in 0..st.ncells {
            let a = self.mesh.geom[k].area;
            for c in 0..st.ncomp {
                m[c] += a * st.get(k, 0, c);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured, RectSpec};

    fn periodic(n: usize, k: usize) -> Discretization {
        let m = generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], n, n)).unwrap();
        Discretization::new(m.jittered(0.25, 3).unwrap(), k)
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let d = periodic(3, 2);
        let f = |x: f64, y: f64| [1.0 + 2.0 * x - y + 0.5 * x * y - x * x, 0.0, 0.0, 0.0];
        let st = d.project(1, f);
        for k in 0..d.mesh.num_cells() {
            let g = &d.mesh.geom[k];
            let p = g.map(0.2, 0.3);
            assert!((d.eval_point(&st, k, p)[0] - f(p[0], p[1])[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn traces_agree_across_edges_for_continuous_data() {
        let d = periodic(3, 3);
        let st = d.project(1, |x, y| [(x * y) + x * x * x, 0.0, 0.0, 0.0]);
        let bc = BoundarySpec::new();
        let m = Model::advection();
        for e in &d.mesh.edges {
            if e.periodic {
                continue;
            }
            for nu in 0..4 {
                let ui = d.edge_trace(&st, e.cell, e.local, nu);
                let ue = d.exterior_trace(&st, &m, &bc, e.cell, e.local, nu, &ui, 0.0);
                assert!((ui[0] - ue[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_state_has_zero_residual() {
        let d = periodic(4, 2);
        let m = Model::euler();
        let u0 = m.from_primitive(1.2, 0.3, -0.7, 2.0);
        let mut st = d.zeros(4);
        for k in 0..st.ncells {
            st.cell_mut(k)[..4].copy_from_slice(&u0);
        }
        let bc = BoundarySpec::new();
        let a = d.max_wavespeed(&st, &m, &bc, 0.0, AlphaMode::Traces).unwrap();
        let mut out = d.zeros(4);
        d.residual(&m, &bc, &st, 0.0, a, &mut out).unwrap();
        assert!(out.coeffs.iter().all(|x| x.abs() < 1e-11), "{:?}", out.coeffs);
    }

    #[test]
    fn residual_conserves_mass() {
        let d = periodic(4, 2);
        let m = Model::burgers();
        let st = d.project(1, |x, y| [(6.0 * x).sin() + y * y, 0.0, 0.0, 0.0]);
        let bc = BoundarySpec::new();
        let mut out = d.zeros(1);
        d.residual(&m, &bc, &st, 0.0, 2.0, &mut out).unwrap();
        assert!(d.total_mass(&out)[0].abs() < 1e-13);
    }

    #[test]
    fn inadmissible_trace_is_reported() {
        let d = periodic(2, 1);
        let m = Model::euler();
        let mut st = d.project(4, |_, _| [1.0, 0.0, 0.0, 2.5]);
        let s = st.stride();
        st.coeffs[s * 3] = -1.0;
        let mut out = d.zeros(4);
        let err = d.residual(&m, &BoundarySpec::new(), &st, 0.0, 1.0, &mut out).unwrap_err();
        assert!(matches!(err, DgError::Inadmissible { .. }));
    }

    #[test]
    fn missing_boundary_rule_is_rejected() {
        use crate::mesh::{BoundaryTag, SideBc};
        let m =
            generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], 2, 2).all_sides(SideBc::Tag(BoundaryTag::Wall)))
                .unwrap();
        assert!(BoundarySpec::new().validate(&m).is_err());
        assert!(BoundarySpec::new().with(BoundaryTag::Wall, BoundaryRule::Reflective).validate(&m).is_ok());
    }
}
