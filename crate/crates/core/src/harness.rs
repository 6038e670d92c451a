//! Test problems, error norms and the studies built on them.
//!
//! - [`problem`]: the problem library, looked up by name.
//! - [`error_norms`], [`convergence_study`]: accuracy measurement under uniform refinement.
//! - [`cfl_ratio_scan`]: BP CFL ratios over random triangles.
//! - [`rotation_experiment`]: rotational-invariance errors on the implosion problem.
//! - [`near_vacuum_run`]: positivity stress test.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::basis::RefElement;
use crate::bp::{chen_shu_cfl, classical_cfl, optimal_cfl, Bounds, BpLimiter, BpScheme};
use crate::dg::{BoundaryRule, BoundarySpec, DgError, Discretization, ModalState, StateFn};
use crate::mesh::{
    breakpoints, generate_grid, generate_structured, BoundaryTag, CellGeom, Diagonal, Mesh, MeshError, RectSpec, SideBc,
};
use crate::oe::OeMode;
use crate::physics::{rotation_matrix, Model, Vars};
use crate::quadrature::interior_rule;
use crate::time::{RkKind, Solver, StepRule, TimeError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Dg(#[from] DgError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

pub type InitFn = Arc<dyn Fn(f64, f64) -> Vars + Send + Sync>;
pub type MeshFn = Arc<dyn Fn([usize; 2]) -> Result<Mesh, MeshError> + Send + Sync>;

#[derive(Clone)]
pub struct Problem {
    pub name: &'static str,
    pub model: Model,
    pub initial: InitFn,
    pub exact: Option<StateFn>,
    pub bc: BoundarySpec,
    pub t_end: f64,
    /// Mesh at resolution [nx, ny]; see `uses_ny`.
    pub mesh: MeshFn,
    pub default_res: [usize; 2],
    /// False when the geometry is not a rectangle and only nx (cells per unit length) is used.
    pub uses_ny: bool,
    /// Fixed integrator; None picks one matching the degree.
    pub rk: Option<RkKind>,
    /// Maximum-principle bounds for scalar problems; sampled from the initial data when None.
    pub bounds: Option<(f64, f64)>,
    /// Small enough for automated runs at the default resolution.
    pub desk_scale: bool,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem").field("name", &self.name).field("t_end", &self.t_end).finish_non_exhaustive()
    }
}

pub const PROBLEMS: &[&str] = &[
    "advection-sin",
    "advection-flower",
    "burgers-sin",
    "burgers-riemann1",
    "burgers-riemann2",
    "implosion",
    "near-vacuum",
    "cylinder",
    "forward-step",
    "double-mach",
    "diffraction",
];

fn s1(u: f64) -> Vars {
    [u, 0.0, 0.0, 0.0]
}

fn side(tag: BoundaryTag) -> SideBc {
    SideBc::Tag(tag)
}

/// Looks up a library problem by name.
pub fn problem(name: &str) -> Option<Problem> {
    let euler = Model::euler();
    let p = match name {
        "advection-sin" => Problem {
            name: "advection-sin",
            model: Model::advection(),
            initial: Arc::new(|x, y| s1((2.0 * PI * (x + y)).sin())),
            exact: Some(Arc::new(|x, y, t| s1((2.0 * PI * (x + y - 2.0 * t)).sin()))),
            bc: BoundarySpec::new(),
            t_end: 0.1,
            mesh: Arc::new(|[nx, ny]| generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], nx, ny))),
            default_res: [16, 16],
            uses_ny: true,
            rk: None,
            bounds: None,
            desk_scale: true,
        },
        "advection-flower" => Problem {
            name: "advection-flower",
            model: Model::advection(),
            initial: Arc::new(|x, y| s1(flower(x, y))),
            exact: Some(Arc::new(|x, y, t| s1(flower(wrap(x - t, -1.0, 1.0), wrap(y - t, -1.0, 1.0))))),
            bc: BoundarySpec::new(),
            t_end: 1.8,
            mesh: Arc::new(|[nx, ny]| {
                generate_structured(&RectSpec::new([-1.0, 1.0], [-1.0, 1.0], nx, ny).diagonal(Diagonal::Alternating))
            }),
            default_res: [64, 64],
            uses_ny: true,
            rk: Some(RkKind::Ssp33),
            bounds: Some((0.0, 1.0)),
            desk_scale: true,
        },
        "burgers-sin" => Problem {
            name: "burgers-sin",
            model: Model::burgers(),
            initial: Arc::new(|x, y| s1(0.5 * (2.0 * PI * (x + y)).sin())),
            exact: Some(Arc::new(|x, y, t| s1(burgers_sin_exact(x + y, t)))),
            bc: BoundarySpec::new(),
            t_end: 0.05,
            mesh: Arc::new(|[nx, ny]| generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], nx, ny))),
            default_res: [16, 16],
            uses_ny: true,
            rk: None,
            bounds: None,
            desk_scale: true,
        },
        "burgers-riemann1" => {
            let ic = |x: f64, y: f64| match (x < 0.5, y >= 0.5) {
                (true, true) => -0.2,
                (false, true) => -1.0,
                (true, false) => 0.5,
                (false, false) => 0.8,
            };
            let ghost: crate::dg::GhostFn = Arc::new(move |ui: &Vars, p: [f64; 2], _n, t| {
                let out = (p[0] < 0.5 && p[1] >= 0.5 + 0.15 * t) || (p[0] > 0.5 && p[1] <= 0.5 - 0.1 * t);
                if out {
                    *ui
                } else {
                    s1(ic(p[0], p[1]))
                }
            });
            Problem {
                name: "burgers-riemann1",
                model: Model::burgers(),
                initial: Arc::new(move |x, y| s1(ic(x, y))),
                exact: None,
                bc: BoundarySpec::new().with(BoundaryTag::Inflow, BoundaryRule::Custom(ghost)),
                t_end: 0.5,
                mesh: Arc::new(|[nx, ny]| {
                    generate_structured(
                        &RectSpec::new([0.0, 1.0], [0.0, 1.0], nx, ny)
                            .diagonal(Diagonal::Alternating)
                            .all_sides(SideBc::Tag(BoundaryTag::Inflow)),
                    )
                }),
                default_res: [64, 64],
                uses_ny: true,
                rk: Some(RkKind::Ssp33),
                bounds: Some((-1.0, 0.8)),
                desk_scale: true,
            }
        }
        "burgers-riemann2" => {
            let ic = |x: f64, y: f64| {
                if x < 0.25 && y < 0.25 {
                    2.0
                } else if x >= 0.25 && y >= 0.25 {
                    3.0
                } else {
                    1.0
                }
            };
            Problem {
                name: "burgers-riemann2",
                model: Model::burgers(),
                initial: Arc::new(move |x, y| s1(ic(x, y))),
                exact: None,
                bc: BoundarySpec::new()
                    .with(BoundaryTag::Inflow, BoundaryRule::Inflow(Arc::new(move |x, y, _| s1(ic(x, y)))))
                    .with(BoundaryTag::Outflow, BoundaryRule::Outflow),
                t_end: 1.0 / 12.0,
                mesh: Arc::new(|[nx, ny]| {
                    let (i, o) = (side(BoundaryTag::Inflow), side(BoundaryTag::Outflow));
                    generate_structured(
                        &RectSpec::new([0.0, 1.0], [0.0, 1.0], nx, ny)
                            .diagonal(Diagonal::Alternating)
                            .sides(i, o, i, o),
                    )
                }),
                default_res: [64, 64],
                uses_ny: true,
                rk: Some(RkKind::Ssp33),
                bounds: Some((1.0, 3.0)),
                desk_scale: true,
            }
        }
        "implosion" => Problem {
            name: "implosion",
            model: euler,
            initial: Arc::new(move |x, y| implosion_ic(&euler, x, y)),
            exact: None,
            bc: BoundarySpec::new().with(BoundaryTag::Wall, BoundaryRule::Reflective),
            t_end: 2.5,
            mesh: Arc::new(|[nx, ny]| implosion_mesh(nx, ny)),
            default_res: [40, 40],
            uses_ny: true,
            rk: Some(RkKind::Ssp33),
            bounds: None,
            desk_scale: true,
        },
        "near-vacuum" => Problem {
            name: "near-vacuum",
            model: euler,
            initial: Arc::new(move |x, _| near_vacuum_ic(&euler, x)),
            exact: None,
            bc: BoundarySpec::new().with(BoundaryTag::Outflow, BoundaryRule::Outflow),
            t_end: 0.1,
            mesh: Arc::new(|[nx, ny]| {
                let out = side(BoundaryTag::Outflow);
                generate_structured(
                    &RectSpec::new([-1.0, 1.0], [0.0, 0.2], nx, ny).diagonal(Diagonal::Alternating).sides(
                        out,
                        out,
                        SideBc::Periodic,
                        SideBc::Periodic,
                    ),
                )
            }),
            default_res: [100, 10],
            uses_ny: true,
            rk: Some(RkKind::Ssp33),
            bounds: None,
            desk_scale: true,
        },
        "cylinder" => {
            let free = euler.from_primitive(1.4, 3.0, 0.0, 1.0);
            Problem {
                name: "cylinder",
                model: euler,
                initial: Arc::new(move |_, _| free),
                exact: None,
                bc: BoundarySpec::new()
                    .with(BoundaryTag::Inflow, BoundaryRule::constant(free))
                    .with(BoundaryTag::Outflow, BoundaryRule::Outflow)
                    .with(BoundaryTag::Wall, BoundaryRule::Reflective),
                t_end: 40.0,
                mesh: Arc::new(|[n, _]| cylinder_mesh(n)),
                default_res: [20, 20],
                uses_ny: false,
                rk: Some(RkKind::Ssp33),
                bounds: None,
                desk_scale: false,
            }
        }
        "forward-step" => {
            let free = euler.from_primitive(1.4, 3.0, 0.0, 1.0);
            Problem {
                name: "forward-step",
                model: euler,
                initial: Arc::new(move |_, _| free),
                exact: None,
                bc: BoundarySpec::new()
                    .with(BoundaryTag::Inflow, BoundaryRule::constant(free))
                    .with(BoundaryTag::Outflow, BoundaryRule::Outflow)
                    .with(BoundaryTag::Wall, BoundaryRule::Reflective),
                t_end: 4.0,
                mesh: Arc::new(|[n, _]| forward_step_mesh(n)),
                default_res: [40, 40],
                uses_ny: false,
                rk: Some(RkKind::Ssp33),
                bounds: None,
                desk_scale: false,
            }
        }
        "double-mach" => {
            let exact: StateFn = Arc::new(move |x, y, t| double_mach_exact(&euler, x, y, t));
            Problem {
                name: "double-mach",
                model: euler,
                initial: {
                    let e = exact.clone();
                    Arc::new(move |x, y| e(x, y, 0.0))
                },
                exact: None,
                bc: BoundarySpec::new()
                    .with(BoundaryTag::Inflow, BoundaryRule::Inflow(exact.clone()))
                    .with(BoundaryTag::Exact, BoundaryRule::Exact(exact))
                    .with(BoundaryTag::Outflow, BoundaryRule::Outflow)
                    .with(BoundaryTag::Wall, BoundaryRule::Reflective),
                t_end: 0.2,
                mesh: Arc::new(|[n, _]| double_mach_mesh(n)),
                default_res: [60, 60],
                uses_ny: false,
                rk: Some(RkKind::Ssp33),
                bounds: None,
                desk_scale: false,
            }
        }
        "diffraction" => {
            let exact: StateFn = Arc::new(move |x, y, t| diffraction_exact(&euler, x, y, t));
            Problem {
                name: "diffraction",
                model: euler,
                initial: {
                    let e = exact.clone();
                    Arc::new(move |x, y| e(x, y, 0.0))
                },
                exact: None,
                bc: BoundarySpec::new()
                    .with(BoundaryTag::Inflow, BoundaryRule::Inflow(exact.clone()))
                    .with(BoundaryTag::Exact, BoundaryRule::Exact(exact))
                    .with(BoundaryTag::Outflow, BoundaryRule::Outflow)
                    .with(BoundaryTag::Wall, BoundaryRule::Reflective),
                t_end: 0.9,
                mesh: Arc::new(|[n, _]| diffraction_mesh(n)),
                default_res: [4, 4],
                uses_ny: false,
                rk: Some(RkKind::Ssp33),
                bounds: None,
                desk_scale: false,
            }
        }
        _ => return None,
    };
    Some(p)
}

fn wrap(x: f64, lo: f64, hi: f64) -> f64 {
    lo + (x - lo).rem_euclid(hi - lo)
}

fn flower(x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    if r == 0.0 {
        return 1.0;
    }
    let c = (x / r).clamp(-1.0, 1.0).acos();
    let theta = if y >= 0.0 { c } else { 2.0 * PI - c };
    if r <= (3.0 + 3f64.powf((5.0 * theta).sin())) / 8.0 {
        1.0
    } else {
        0.0
    }
}

/// Solves `u = 0.5 sin(2 pi (s - 2 u t))` by Newton iteration (valid before the shock).
fn burgers_sin_exact(s: f64, t: f64) -> f64 {
    let mut u = 0.5 * (2.0 * PI * s).sin();
    for _ in 0..100 {
        let arg = 2.0 * PI * (s - 2.0 * u * t);
        let f = u - 0.5 * arg.sin();
        let df = 1.0 + 2.0 * PI * t * arg.cos();
        let du = f / df;
        u -= du;
        if du.abs() < 1e-16 {
            break;
        }
    }
    u
}

fn implosion_ic(m: &Model, x: f64, y: f64) -> Vars {
    if x + y <= 0.15 {
        m.from_primitive(0.125, 0.0, 0.0, 0.14)
    } else {
        m.from_primitive(1.0, 0.0, 0.0, 1.0)
    }
}

/// nx x ny rectangles on [0, 0.3]^2, split along x + y = const; with nx = ny even the
/// initial interface is a mesh line.
pub fn implosion_mesh(nx: usize, ny: usize) -> Result<Mesh, MeshError> {
    generate_structured(
        &RectSpec::new([0.0, 0.3], [0.0, 0.3], nx, ny)
            .diagonal(Diagonal::Backward)
            .all_sides(SideBc::Tag(BoundaryTag::Wall)),
    )
}

/// Velocity magnitude of the two receding streams.
pub const NEAR_VACUUM_SPEED: f64 = 7.0;

fn near_vacuum_ic(m: &Model, x: f64) -> Vars {
    let v = if x < 0.0 { -NEAR_VACUUM_SPEED } else { NEAR_VACUUM_SPEED };
    m.from_primitive(1.0, v, 0.0, 0.4)
}

fn forward_step_mesh(n: usize) -> Result<Mesh, MeshError> {
    let n5 = n.div_ceil(5).max(1);
    let xs = breakpoints(&[0.0, 0.6, 3.0], &[3 * n5, 12 * n5]);
    let ys = breakpoints(&[0.0, 0.2, 1.0], &[n5, 4 * n5]);
    generate_grid(
        &xs,
        &ys,
        Diagonal::Alternating,
        |c| !(c[0] > 0.6 && c[1] < 0.2),
        |p| {
            if p[0] < 1e-12 {
                BoundaryTag::Inflow
            } else if p[0] > 3.0 - 1e-12 {
                BoundaryTag::Outflow
            } else {
                BoundaryTag::Wall
            }
        },
    )
}

fn double_mach_exact(m: &Model, x: f64, y: f64, t: f64) -> Vars {
    let shock = 1.0 / 6.0 + (y + 20.0 * t) / 3f64.sqrt();
    if x < shock {
        let s = 8.25;
        m.from_primitive(8.0, s * (PI / 6.0).cos(), -s * (PI / 6.0).sin(), 116.5)
    } else {
        m.from_primitive(1.4, 0.0, 0.0, 1.0)
    }
}

fn double_mach_mesh(n: usize) -> Result<Mesh, MeshError> {
    let xs = breakpoints(&[0.0, 1.0 / 6.0, 4.0], &[n.div_ceil(6).max(1), 4 * n - n.div_ceil(6).max(1)]);
    let ys = breakpoints(&[0.0, 1.0], &[n]);
    generate_grid(
        &xs,
        &ys,
        Diagonal::Alternating,
        |_| true,
        |p| {
            if p[0] < 1e-12 {
                BoundaryTag::Inflow
            } else if p[0] > 4.0 - 1e-12 {
                BoundaryTag::Outflow
            } else if p[1] > 1.0 - 1e-12 || p[0] < 1.0 / 6.0 {
                BoundaryTag::Exact
            } else {
                BoundaryTag::Wall
            }
        },
    )
}

fn diffraction_exact(m: &Model, x: f64, y: f64, t: f64) -> Vars {
    // Shock speed from mass conservation: (8 * 8.25 - 0) / (8 - 1.4) = 10.
    if y >= 6.0 && x < 3.4 + 10.0 * t {
        m.from_primitive(8.0, 8.25, 0.0, 116.5)
    } else {
        m.from_primitive(1.4, 0.0, 0.0, 1.0)
    }
}

fn diffraction_mesh(n: usize) -> Result<Mesh, MeshError> {
    let c = 2.0 * 3f64.sqrt();
    let seg = |len: f64| ((len * n as f64).round() as usize).max(1);
    let xs = breakpoints(&[0.0, c, 13.0], &[seg(c), seg(13.0 - c)]);
    let ys = breakpoints(&[0.0, 6.0, 11.0], &[seg(6.0), seg(5.0)]);
    generate_grid(
        &xs,
        &ys,
        Diagonal::Alternating,
        |p| !(p[0] < c && p[1] < 6.0),
        |p| {
            if p[0] < 1e-12 {
                BoundaryTag::Inflow
            } else if p[0] > 13.0 - 1e-9 || p[1] < 1e-12 {
                BoundaryTag::Outflow
            } else if p[1] > 11.0 - 1e-9 {
                BoundaryTag::Exact
            } else {
                BoundaryTag::Wall
            }
        },
    )
}

/// Upper half of [-3, 0] x [0, 6] minus the unit disk, by linear blending
/// between the quarter circle and the left/top outer boundary.
fn cylinder_mesh(n: usize) -> Result<Mesh, MeshError> {
    let ns = 3 * n.max(1);
    let nt = 2 * n.max(1);
    let inner = |s: f64| {
        let a = PI * (1.0 - 0.5 * s);
        [a.cos(), a.sin()]
    };
    let outer = |s: f64| {
        // arc length 9: 6 up the left side, then 3 along the top
        let l = 9.0 * s;
        if l <= 6.0 {
            [-3.0, l]
        } else {
            [-3.0 + (l - 6.0), 6.0]
        }
    };
    let mut vertices = Vec::with_capacity((ns + 1) * (nt + 1));
    for j in 0..=nt {
        let t = j as f64 / nt as f64;
        for i in 0..=ns {
            let s = i as f64 / ns as f64;
            let (a, b) = (inner(s), outer(s));
            vertices.push([(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]]);
        }
    }
    let id = |i: usize, j: usize| j * (ns + 1) + i;
    let mut cells = Vec::with_capacity(2 * ns * nt);
    for j in 0..nt {
        for i in 0..ns {
            // s runs clockwise around the cylinder and t outward, which keeps (s, t) cells counter-clockwise
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                cells.extend([[a, b, c], [a, c, d]]);
            } else {
                cells.extend([[a, b, d], [b, c, d]]);
            }
        }
    }
    Mesh::from_cells(vertices, cells, |p| {
        if p[0] < -3.0 + 1e-9 {
            BoundaryTag::Inflow
        } else if p[1] > 6.0 - 1e-9 || p[0] > -1e-9 {
            BoundaryTag::Outflow
        } else {
            BoundaryTag::Wall
        }
    })
}

/// Solver settings shared by every run built from a [`Problem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub k: usize,
    pub oe: OeMode,
    pub bp: Option<BpScheme>,
    /// Overrides the problem's default time integrator.
    pub rk: Option<RkKind>,
    /// Overrides the default step rule.
    pub step: Option<StepRule>,
    pub cfl_scale: f64,
}

impl Method {
    pub fn new(k: usize, oe: OeMode, bp: Option<BpScheme>) -> Method {
        Method { k, oe, bp, rk: None, step: None, cfl_scale: 1.0 }
    }

    pub fn validate(&self, model: &Model) -> Result<(), HarnessError> {
        if !(1..=crate::basis::MAX_DEGREE).contains(&self.k) {
            return Err(HarnessError::Config(format!("k = {} outside 1..=4", self.k)));
        }
        if self.bp.is_some() && self.k > 2 {
            return Err(HarnessError::Config(format!("bp needs k = 1 or 2 (got k = {})", self.k)));
        }
        if !(self.cfl_scale > 0.0 && self.cfl_scale.is_finite()) {
            return Err(HarnessError::Config(format!("cfl scale {} must be positive", self.cfl_scale)));
        }
        self.oe.validate(model).map_err(HarnessError::Config)
    }
}

impl Problem {
    /// Builds the solver and the (limited, when BP is on) initial projection.
    pub fn setup(&self, mesh: Mesh, method: &Method) -> Result<(Solver, ModalState), HarnessError> {
        method.validate(&self.model)?;
        self.bc.validate(&mesh)?;
        let disc = Discretization::new(mesh, method.k);
        let init = self.initial.clone();
        let st = disc.project(self.model.ncomp(), |x, y| init(x, y));
        let mut solver = Solver::new(
            disc,
            self.model,
            self.bc.clone(),
            method.rk.or(self.rk).unwrap_or_else(|| RkKind::for_degree(method.k)),
        );
        solver.oe = method.oe;
        solver.cfl_scale = method.cfl_scale;
        solver.step_rule = match (method.step, method.bp) {
            (Some(s), _) => s,
            (None, Some(s)) => StepRule::Bp(s),
            (None, None) if method.k == 4 => StepRule::HighOrder,
            (None, None) => StepRule::Generic,
        };
        let mut st = st;
        if let Some(scheme) = method.bp {
            let bounds = if self.model.is_euler() {
                Bounds::Euler
            } else {
                let (lo, hi) = self.bounds.unwrap_or_else(|| sample_bounds(&solver.disc, &*self.initial));
                Bounds::Scalar { lo, hi }
            };
            let lim = BpLimiter::new(&solver.disc, scheme, bounds).map_err(HarnessError::Config)?;
            lim.limit(&solver.disc, &mut st)?;
            solver.bp = Some(lim);
        }
        Ok((solver, st))
    }
}

/// Extrema of the initial data over every interior and edge quadrature node.
pub fn sample_bounds(disc: &Discretization, f: &(dyn Fn(f64, f64) -> Vars + Send + Sync)) -> (f64, f64) {
    let r = &disc.refel;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, g) in disc.mesh.geom.iter().enumerate() {
        let mut visit = |p: [f64; 2]| {
            let v = f(p[0], p[1])[0];
            lo = lo.min(v);
            hi = hi.max(v);
        };
        for n in &r.rule.nodes {
            visit(g.map(n[0], n[1]));
        }
        for i in 0..3 {
            for nu in 0..r.edge.len() {
                visit(disc.edge_point(k, i, nu));
            }
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Errors of component `c` against `exact`, integrated with the degree-8 rule on every cell.
pub fn error_norms(disc: &Discretization, st: &ModalState, c: usize, exact: impl Fn(f64, f64) -> f64) -> Norms {
    let fine = RefElement::with_rule(disc.degree(), interior_rule(4));
    let nm = fine.nmodes;
    let (mut l1, mut l2, mut linf) = (0.0, 0.0, 0.0f64);
    for (k, g) in disc.mesh.geom.iter().enumerate() {
        let cs = st.cell(k);
        for (q, (n, w)) in fine.rule.nodes.iter().zip(&fine.rule.weights).enumerate() {
            let uh = crate::dg::eval_row(cs, &fine.vol_phi[q * nm..(q + 1) * nm], st.ncomp)[c];
            let p = g.map(n[0], n[1]);
            let e = (uh - exact(p[0], p[1])).abs();
            l1 += g.area * w * e;
            l2 += g.area * w * e * e;
            linf = linf.max(e);
        }
    }
    Norms { l1, l2: l2.sqrt(), linf }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub errors: Norms,
    /// log2 of successive error ratios; None on the first row or when undefined.
    pub orders: [Option<f64>; 3],
}

pub fn order(coarse: f64, fine: f64) -> Option<f64> {
    let o = (coarse / fine).log2();
    (coarse > 0.0 && fine > 0.0 && o.is_finite()).then_some(o)
}

/// Runs `problem` to its final time on `base` and `levels - 1` uniform refinements.
pub fn convergence_study(
    problem: &Problem,
    method: &Method,
    base: Mesh,
    levels: usize,
) -> Result<Vec<ConvergenceRow>, HarnessError> {
    let exact =
        problem.exact.clone().ok_or_else(|| HarnessError::Config(format!("{} has no exact solution", problem.name)))?;
    if levels == 0 {
        return Err(HarnessError::Config("levels must be at least 1".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    let mut mesh = base;
    for level in 0..levels {
        if level > 0 {
            mesh = mesh.refine_uniform()?;
        }
        let (solver, st) = problem.setup(mesh.clone(), method)?;
        let res = solver.run(st, 0.0, &[problem.t_end], usize::MAX);
        if let Some(e) = res.error {
            return Err(e.into());
        }
        let t = problem.t_end;
        let errors = error_norms(&solver.disc, &res.last_good.state, 0, |x, y| exact(x, y, t)[0]);
        let orders = match rows.last() {
            Some(prev) => [
                order(prev.errors.l1, errors.l1),
                order(prev.errors.l2, errors.l2),
                order(prev.errors.linf, errors.linf),
            ],
            None => [None; 3],
        };
        rows.push(ConvergenceRow { cells: mesh.num_cells(), errors, orders });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioRange {
    pub min: f64,
    pub max: f64,
}

impl RatioRange {
    fn empty() -> RatioRange {
        RatioRange { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    fn add(&mut self, x: f64) {
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflScan {
    pub count: usize,
    /// Optimal over classical, k = 1.
    pub zxs_k1: RatioRange,
    /// Optimal over classical, k = 2.
    pub zxs_k2: RatioRange,
    /// Optimal over Chen-Shu, k = 2.
    pub cs_k2: RatioRange,
}

pub fn cfl_ratios<'a>(cells: impl IntoIterator<Item = &'a CellGeom>) -> CflScan {
    let mut s =
        CflScan { count: 0, zxs_k1: RatioRange::empty(), zxs_k2: RatioRange::empty(), cs_k2: RatioRange::empty() };
    for g in cells {
        s.count += 1;
        s.zxs_k1.add(optimal_cfl(g, 1) / classical_cfl(g, 1));
        s.zxs_k2.add(optimal_cfl(g, 2) / classical_cfl(g, 2));
        s.cs_k2.add(optimal_cfl(g, 2) / chen_shu_cfl(g));
    }
    s
}

/// Seeded random triangles: uniform vertices in the unit square, plus every
/// tenth one a needle with aspect ratio up to 1e3. Orientation is made
/// counter-clockwise and near-degenerate draws are rejected.
pub fn random_triangles(count: usize, seed: u64) -> Vec<CellGeom> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: [[f64; 2]; 3] = if out.len() % 10 == 9 {
            let aspect = 10f64.powf(rng.gen_range(1.0..3.0));
            let a = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = a.sin_cos();
            let off = rng.gen_range(-0.5..1.5);
            [[0.0, 0.0], [c, s], [off * c - s / aspect, off * s + c / aspect]]
        } else {
            std::array::from_fn(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        };
        let cross = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        if cross.abs() < 1e-8 {
            continue;
        }
        if cross < 0.0 {
            v.swap(1, 2);
        }
        out.push(CellGeom::from_vertices(v));
    }
    out
}

pub fn cfl_ratio_scan(count: usize, seed: u64) -> CflScan {
    cfl_ratios(&random_triangles(count, seed))
}

/// Max over time of the rotational-invariance errors (rho, v1, v2, p).
#[derive(Debug, Clone, PartialEq)]
pub struct RiErrors {
    pub per_step: Vec<[f64; 4]>,
    pub max: [f64; 4],
}

impl RiErrors {
    pub fn worst(&self) -> f64 {
        self.max.iter().copied().fold(0.0, f64::max)
    }
}

/// Runs the implosion problem on an n x n mesh and on its copy rotated
/// clockwise by `phi` for `steps` steps, comparing cell averages after
/// rotating the velocity back.
pub fn rotation_experiment(n: usize, k: usize, phi: f64, oe: OeMode, steps: usize) -> Result<RiErrors, HarnessError> {
    let base = problem("implosion").expect("library problem");
    let m = rotation_matrix(phi);
    let mt = [[m[0][0], m[1][0]], [m[0][1], m[1][1]]];
    let mesh = implosion_mesh(n, n)?;
    let rotated_mesh = mesh.transformed(m)?;
    let model = base.model;
    let mut rotated = base.clone();
    let init = base.initial.clone();
    rotated.initial = Arc::new(move |x, y| {
        let p = [mt[0][0] * x + mt[0][1] * y, mt[1][0] * x + mt[1][1] * y];
        model.rotate(&init(p[0], p[1]), m)
    });
    let method = Method::new(k, oe, None);
    let (sa, mut ua) = base.setup(mesh, &method)?;
    let (sb, mut ub) = rotated.setup(rotated_mesh, &method)?;
    let (mut ta, mut tb) = (0.0, 0.0);
    let mut out = RiErrors { per_step: Vec::with_capacity(steps), max: [0.0; 4] };
    for step in 0..steps {
        for (s, u, t) in [(&sa, &mut ua, &mut ta), (&sb, &mut ub, &mut tb)] {
            let alpha = s.alpha(u, *t)?;
            let dt = s.timestep(alpha);
            *u = s.advance(u, *t, dt, alpha).map_err(|(stage, source)| TimeError::Stage { step, stage, source })?;
            *t += dt;
        }
        let mut e = [0.0f64; 4];
        for c in 0..ua.ncells {
            let pa = model.to_primitive(&ua.average(c));
            let pb = model.to_primitive(&ub.average(c));
            let vb = [mt[0][0] * pb[1] + mt[0][1] * pb[2], mt[1][0] * pb[1] + mt[1][1] * pb[2]];
            e[0] = e[0].max((pa[0] - pb[0]).abs());
            e[1] = e[1].max((pa[1] - vb[0]).abs());
            e[2] = e[2].max((pa[2] - vb[1]).abs());
            e[3] = e[3].max((pa[3] - pb[3]).abs());
        }
        for i in 0..4 {
            out.max[i] = out.max[i].max(e[i]);
        }
        out.per_step.push(e);
    }
    Ok(out)
}

/// Outcome of the positivity stress test.
#[derive(Debug)]
pub struct StressOutcome {
    pub steps: usize,
    pub t_reached: f64,
    /// Cells whose average or check-node value left the admissible set, summed over steps.
    pub violations: usize,
    pub min_density: f64,
    pub min_pressure: f64,
    pub error: Option<TimeError>,
}

/// Runs the near-vacuum double rarefaction to `t_end`, counting admissibility violations.
pub fn near_vacuum_run(n: usize, k: usize, bp: Option<BpScheme>, t_end: f64) -> Result<StressOutcome, HarnessError> {
    let p = problem("near-vacuum").expect("library problem");
    let mesh = (p.mesh)([n, (n / 10).max(1)])?;
    let method = Method::new(k, OeMode::RotationInvariant, bp);
    let (solver, st) = p.setup(mesh, &method)?;
    let model = p.model;
    let mut violations = 0;
    let (mut min_rho, mut min_p) = (f64::INFINITY, f64::INFINITY);
    let res = solver.run_observed(st, 0.0, &[t_end], 1_000_000, |_, _, u| {
        for c in 0..u.ncells {
            let mut vals = vec![u.average(c)];
            if let Some(lim) = &solver.bp {
                vals.extend(lim.check_values(&solver.disc, u, c));
            }
            let bad = vals.iter().any(|v| !model.admissible(v));
            violations += bad as usize;
            for v in &vals {
                min_rho = min_rho.min(v[0]);
                min_p = min_p.min(model.pressure(v));
            }
        }
    });
    Ok(StressOutcome {
        steps: res.steps(),
        t_reached: res.last_good.t,
        violations,
        min_density: min_rho,
        min_pressure: min_p,
        error: res.error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_problem_builds() {
        for name in PROBLEMS {
            let p = problem(name).unwrap();
            let n = if p.desk_scale { 8 } else { 5 };
            let mesh = (p.mesh)([n, n]).unwrap();
            p.bc.validate(&mesh).unwrap();
            let bp = (p.model.is_euler() || p.bounds.is_some()).then_some(BpScheme::Optimal);
            let oe = if p.model.is_euler() { OeMode::RotationInvariant } else { OeMode::Componentwise };
            let (solver, st) = p.setup(mesh, &Method::new(2, oe, bp)).unwrap();
            assert!(solver.alpha(&st, 0.0).unwrap() > 0.0, "{name}");
        }
    }

    #[test]
    fn constant_offset_norms() {
        let mesh = generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], 3, 3)).unwrap();
        let disc = Discretization::new(mesh, 2);
        let st = disc.project(1, |x, y| s1(x * y + 0.25));
        let n = error_norms(&disc, &st, 0, |x, y| x * y);
        assert!((n.l1 - 0.25).abs() < 1e-13 && (n.l2 - 0.25).abs() < 1e-13 && (n.linf - 0.25).abs() < 1e-13);
    }

    #[test]
    fn order_of_a_halving_pair() {
        assert!((order(8.18e-2, 1.56e-2).unwrap() - 2.39).abs() < 5e-3);
        assert_eq!(order(0.0, 0.0), None);
    }

    #[test]
    fn burgers_exact_satisfies_characteristics() {
        let (s, t) = (0.3, 0.05);
        let u = burgers_sin_exact(s, t);
        assert!((u - 0.5 * (2.0 * PI * (s - 2.0 * u * t)).sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_angle_has_zero_ri_error() {
        let e = rotation_experiment(6, 1, 0.0, OeMode::Componentwise, 3).unwrap();
        assert_eq!(e.worst(), 0.0);
    }

    #[test]
    fn cylinder_mesh_area() {
        let m = cylinder_mesh(8).unwrap();
        // chords cut slightly inside the quarter disk
        let exact = 18.0 - PI / 4.0;
        assert!((m.total_area() - exact).abs() < 2e-3, "{}", m.total_area());
    }
}
