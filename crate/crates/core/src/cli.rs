//! Command-line front end.
//!
//! - [`RunConfig`]: run settings read from a flat `key = value` file and overridden by flags.
//! - [`cmd_run`], [`cmd_convergence`], [`cmd_decomp`], [`cmd_cflscan`]: the four subcommands.
//! - Every CSV is a pure function of the configuration; wall-clock time only goes to `timing.txt`.
//! - [`CliError::exit_code`]: 2 for configuration, 3 for admissibility aborts, 4 for numeric aborts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bp::{chen_shu_cfl, decomposition, BpScheme};
use crate::dg::{DgError, Discretization, ModalState};
use crate::harness::{
    cfl_ratios, convergence_study, problem, random_triangles, HarnessError, Method, Problem, PROBLEMS,
};
use crate::mesh::{CellGeom, Mesh};
use crate::oe::OeMode;
use crate::physics::{Model, PhysicsError};
use crate::time::{RkKind, TimeError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {field}: {msg}")]
    Config { field: String, msg: String },
    #[error("admissibility abort: {0}")]
    Admissibility(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => 2,
            CliError::Admissibility(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn config(field: &str, msg: impl Into<String>) -> CliError {
        CliError::Config { field: field.into(), msg: msg.into() }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> CliError {
        match e {
            HarnessError::Config(msg) => CliError::config("method", msg),
            HarnessError::Mesh(e) => CliError::config("mesh", e.to_string()),
            HarnessError::Dg(e) => e.into(),
            HarnessError::Time(e) => e.into(),
        }
    }
}

impl From<DgError> for CliError {
    fn from(e: DgError) -> CliError {
        match e {
            DgError::Inadmissible { source: PhysicsError::Inadmissible { .. }, .. } => {
                CliError::Admissibility(e.to_string())
            }
            DgError::Boundary(msg) => CliError::config("mesh", msg),
            e => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<TimeError> for CliError {
    fn from(e: TimeError) -> CliError {
        if e.is_admissibility() {
            CliError::Admissibility(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

// ---------------------------------------------------------------- parsing

fn parse_num<T: std::str::FromStr>(field: &str, s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| CliError::config(field, format!("{s:?}: {e}")))
}

fn parse_pair(field: &str, s: &str) -> Result<[usize; 2], CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::config(field, format!("expected `nx,ny`, got {s:?}")));
    }
    let p = [parse_num::<usize>(field, parts[0])?, parse_num::<usize>(field, parts[1])?];
    if p.contains(&0) {
        return Err(CliError::config(field, "counts must be positive"));
    }
    Ok(p)
}

fn parse_times(field: &str, s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(vec![]);
    }
    s.split(',').map(|t| parse_num::<f64>(field, t)).collect()
}

pub fn parse_oe(s: &str) -> Result<OeMode, CliError> {
    match s.trim() {
        "off" => Ok(OeMode::Off),
        "cw" => Ok(OeMode::Componentwise),
        "ri" => Ok(OeMode::RotationInvariant),
        other => Err(CliError::config("oe", format!("{other:?} is not one of off, cw, ri"))),
    }
}

pub fn parse_bp(s: &str) -> Result<Option<BpScheme>, CliError> {
    match s.trim() {
        "off" => Ok(None),
        "zxs" => Ok(Some(BpScheme::Classical)),
        "dcw" => Ok(Some(BpScheme::Optimal)),
        other => Err(CliError::config("bp", format!("{other:?} is not one of off, zxs, dcw"))),
    }
}

pub fn parse_rk(s: &str) -> Result<Option<RkKind>, CliError> {
    match s.trim() {
        "auto" => Ok(None),
        "ssp22" => Ok(Some(RkKind::Ssp22)),
        "ssp33" => Ok(Some(RkKind::Ssp33)),
        "ssp54" => Ok(Some(RkKind::Ssp54)),
        other => Err(CliError::config("rk", format!("{other:?} is not one of auto, ssp22, ssp33, ssp54"))),
    }
}

fn oe_name(m: OeMode) -> &'static str {
    match m {
        OeMode::Off => "off",
        OeMode::Componentwise => "cw",
        OeMode::RotationInvariant => "ri",
    }
}

fn bp_name(b: Option<BpScheme>) -> String {
    b.map_or("off".into(), |s| s.to_string())
}

fn lookup(name: &str) -> Result<Problem, CliError> {
    problem(name)
        .ok_or_else(|| CliError::config("problem", format!("unknown problem {name:?}; known: {}", PROBLEMS.join(", "))))
}

// ---------------------------------------------------------------- run config

/// Settings of a single run. Keys of the config file match the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub k: usize,
    /// None picks the problem default.
    pub rk: Option<RkKind>,
    pub oe: OeMode,
    pub bp: Option<BpScheme>,
    /// Multiplies the time step of the active step rule.
    pub cfl: f64,
    /// Mesh file; mutually exclusive with `gen`.
    pub mesh: Option<PathBuf>,
    /// Resolution for the problem's mesh generator; the problem default when None.
    pub gen: Option<[usize; 2]>,
    /// Random vertex perturbation of a generated mesh, relative to the local edge length.
    pub jitter: f64,
    pub seed: u64,
    /// Final time; the problem default when None.
    pub tend: Option<f64>,
    /// Snapshot times; `[tend]` when None, metadata only when empty.
    pub outputs: Option<Vec<f64>>,
    pub out: PathBuf,
    /// Uniform point-sampling grid written next to each snapshot.
    pub sample: Option<[usize; 2]>,
    pub max_steps: usize,
}

pub const RUN_KEYS: &[&str] = &[
    "problem",
    "k",
    "rk",
    "oe",
    "bp",
    "cfl",
    "mesh",
    "gen",
    "jitter",
    "seed",
    "tend",
    "outputs",
    "out",
    "sample",
    "max_steps",
];

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            problem: "advection-sin".into(),
            k: 2,
            rk: None,
            oe: OeMode::Componentwise,
            bp: None,
            cfl: 1.0,
            mesh: None,
            gen: None,
            jitter: 0.0,
            seed: 0,
            tend: None,
            outputs: None,
            out: PathBuf::from("out"),
            sample: None,
            max_steps: 10_000_000,
        }
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "problem" => self.problem = v.into(),
            "k" => self.k = parse_num(key, v)?,
            "rk" => self.rk = parse_rk(v)?,
            "oe" => self.oe = parse_oe(v)?,
            "bp" => self.bp = parse_bp(v)?,
            "cfl" => self.cfl = parse_num(key, v)?,
            "mesh" => self.mesh = (!v.is_empty()).then(|| PathBuf::from(v)),
            "gen" => self.gen = Some(parse_pair(key, v)?),
            "jitter" => self.jitter = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "tend" => self.tend = Some(parse_num(key, v)?),
            "outputs" => self.outputs = Some(parse_times(key, v)?),
            "out" => self.out = PathBuf::from(v),
            "sample" => self.sample = Some(parse_pair(key, v)?),
            "max_steps" => self.max_steps = parse_num(key, v)?,
            _ => return Err(CliError::config(key, format!("unknown key; known: {}", RUN_KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text. `#` starts a comment; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(&format!("line {}", n + 1), format!("expected `key = value`, got {line:?}"))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::config(key, format!("repeated on line {}", n + 1)));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        let mut m = Method::new(self.k, self.oe, self.bp);
        m.rk = self.rk;
        m.cfl_scale = self.cfl;
        m
    }

    /// Checks every field against the chosen problem.
    pub fn validate(&self) -> Result<Problem, CliError> {
        let p = lookup(&self.problem)?;
        if !(1..=crate::basis::MAX_DEGREE).contains(&self.k) {
            return Err(CliError::config("k", format!("{} outside 1..={}", self.k, crate::basis::MAX_DEGREE)));
        }
        if self.bp.is_some() && self.k > 2 {
            return Err(CliError::config("bp", format!("needs k = 1 or 2 (got k = {})", self.k)));
        }
        if self.oe == OeMode::RotationInvariant && !p.model.is_euler() {
            return Err(CliError::config("oe", format!("ri needs an Euler problem, {} is scalar", p.name)));
        }
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return Err(CliError::config("cfl", format!("{} must be positive", self.cfl)));
        }
        if self.mesh.is_some() && self.gen.is_some() {
            return Err(CliError::config("mesh", "give either a mesh file or gen, not both"));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(CliError::config("jitter", format!("{} outside [0, 0.5)", self.jitter)));
        }
        let tend = self.t_end(&p);
        if !(tend >= 0.0 && tend.is_finite()) {
            return Err(CliError::config("tend", format!("{tend} must be finite and non-negative")));
        }
        if let Some(ts) = &self.outputs {
            if let Some(t) = ts.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
                return Err(CliError::config("outputs", format!("{t} must be finite and non-negative")));
            }
        }
        Ok(p)
    }

    pub fn t_end(&self, p: &Problem) -> f64 {
        self.tend.unwrap_or(p.t_end)
    }

    pub fn output_times(&self, p: &Problem) -> Vec<f64> {
        let mut ts = self.outputs.clone().unwrap_or_else(|| vec![self.t_end(p)]);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    pub fn build_mesh(&self, p: &Problem) -> Result<Mesh, CliError> {
        let mesh = match &self.mesh {
            Some(path) => Mesh::load(path).map_err(|e| CliError::config("mesh", format!("{}: {e}", path.display())))?,
            None => (p.mesh)(self.gen.unwrap_or(p.default_res)).map_err(|e| CliError::config("gen", e.to_string()))?,
        };
        if self.jitter > 0.0 {
            return mesh.jittered(self.jitter, self.seed).map_err(|e| CliError::config("jitter", e.to_string()));
        }
        Ok(mesh)
    }

    /// Deterministic `key = value` listing of the effective configuration.
    pub fn to_text(&self, p: &Problem) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem = {}", self.problem);
        let _ = writeln!(s, "k = {}", self.k);
        let rk = match self.rk {
            None => "auto",
            Some(RkKind::Ssp22) => "ssp22",
            Some(RkKind::Ssp33) => "ssp33",
            Some(RkKind::Ssp54) => "ssp54",
        };
        let _ = writeln!(s, "rk = {rk}");
        let _ = writeln!(s, "oe = {}", oe_name(self.oe));
        let _ = writeln!(s, "bp = {}", bp_name(self.bp));
        let _ = writeln!(s, "cfl = {}", self.cfl);
        match &self.mesh {
            Some(m) => {
                let _ = writeln!(s, "mesh = {}", m.display());
            }
            None => {
                let g = self.gen.unwrap_or(p.default_res);
                let _ = writeln!(s, "gen = {},{}", g[0], g[1]);
            }
        }
        let _ = writeln!(s, "jitter = {}", self.jitter);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tend = {}", self.t_end(p));
        let ts: Vec<String> = self.output_times(p).iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "outputs = {}", if ts.is_empty() { "none".into() } else { ts.join(",") });
        if let Some([nx, ny]) = self.sample {
            let _ = writeln!(s, "sample = {nx},{ny}");
        }
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        s
    }
}

// ---------------------------------------------------------------- outputs

/// One record per cell, mode and component.
pub fn snapshot_csv(disc: &Discretization, st: &ModalState) -> String {
    let mut s = String::from("cell_id,centroid_x,centroid_y,mode,component,value\n");
    for (k, g) in disc.mesh.geom.iter().enumerate() {
        for l in 0..st.nmodes {
            for c in 0..st.ncomp {
                let _ = writeln!(s, "{k},{},{},{l},{c},{}", g.centroid[0], g.centroid[1], st.get(k, l, c));
            }
        }
    }
    s
}

/// Bucket grid over cell bounding boxes for point location.
struct Locator {
    lo: [f64; 2],
    size: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &Mesh) -> Locator {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let side = (mesh.num_cells() as f64).sqrt().ceil().max(1.0) as usize;
        let n = [side, side];
        let size: [f64; 2] = std::array::from_fn(|d| ((hi[d] - lo[d]) / n[d] as f64).max(f64::MIN_POSITIVE));
        let mut loc = Locator { lo, size, n, buckets: vec![vec![]; n[0] * n[1]] };
        for (k, g) in mesh.geom.iter().enumerate() {
            let (mut a, mut b) = ([usize::MAX; 2], [0; 2]);
            for v in &g.vertices {
                let i = loc.bucket(*v);
                for d in 0..2 {
                    a[d] = a[d].min(i[d]);
                    b[d] = b[d].max(i[d]);
                }
            }
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    loc.buckets[j * n[0] + i].push(k);
                }
            }
        }
        loc
    }

    fn bucket(&self, p: [f64; 2]) -> [usize; 2] {
        std::array::from_fn(|d| (((p[d] - self.lo[d]) / self.size[d]).floor().max(0.0) as usize).min(self.n[d] - 1))
    }

    fn find(&self, mesh: &Mesh, p: [f64; 2]) -> Option<usize> {
        let [i, j] = self.bucket(p);
        self.buckets[j * self.n[0] + i].iter().copied().find(|&k| {
            let g = &mesh.geom[k];
            let d = [p[0] - g.vertices[0][0], p[1] - g.vertices[0][1]];
            let xi = g.jac_inv[0][0] * d[0] + g.jac_inv[0][1] * d[1];
            let eta = g.jac_inv[1][0] * d[0] + g.jac_inv[1][1] * d[1];
            let tol = 1e-12;
            xi >= -tol && eta >= -tol && xi + eta <= 1.0 + tol
        })
    }
}

/// Point values on an `nx x ny` grid of cell centres over the mesh bounding
/// box. Points outside the mesh are skipped; Euler rows add the pressure.
pub fn sample_csv(disc: &Discretization, model: &Model, st: &ModalState, [nx, ny]: [usize; 2]) -> String {
    let mesh = &disc.mesh;
    let loc = Locator::new(mesh);
    let names: &[&str] = if model.is_euler() { &["rho", "mx", "my", "E", "p"] } else { &["u"] };
    let mut s = format!("x,y,{}\n", names.join(","));
    let width = [loc.size[0] * loc.n[0] as f64, loc.size[1] * loc.n[1] as f64];
    for j in 0..ny {
        for i in 0..nx {
            let p = [
                loc.lo[0] + width[0] * (i as f64 + 0.5) / nx as f64,
                loc.lo[1] + width[1] * (j as f64 + 0.5) / ny as f64,
            ];
            let Some(k) = loc.find(mesh, p) else { continue };
            let u = disc.eval_point(st, k, p);
            let _ = write!(s, "{},{}", p[0], p[1]);
            for v in &u[..st.ncomp] {
                let _ = write!(s, ",{v}");
            }
            if model.is_euler() {
                let _ = write!(s, ",{}", model.pressure(&u));
            }
            s.push('\n');
        }
    }
    s
}

/// Summary of a finished (or aborted) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cells: usize,
    pub steps: usize,
    pub t_reached: f64,
    pub snapshots: Vec<f64>,
}

/// Runs one configuration and writes `config.txt`, `meta.txt`, one
/// `snapshot_NNN.csv` (and `sample_NNN.csv`) per output time and `timing.txt`
/// into `cfg.out`. An abort still writes everything up to the last good state.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let p = cfg.validate()?;
    let clock = std::time::Instant::now();
    let mesh = cfg.build_mesh(&p)?;
    let (solver, st) = p.setup(mesh, &cfg.method())?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    write_file(&out.join("config.txt"), &cfg.to_text(&p))?;

    let outputs = cfg.output_times(&p);
    let res = solver.run(st, 0.0, &outputs, cfg.max_steps);
    let mut meta = String::new();
    let _ = writeln!(meta, "cells = {}", solver.disc.mesh.num_cells());
    let _ = writeln!(meta, "rk = {:?}", solver.rk.kind);
    let _ = writeln!(meta, "steps = {}", res.steps());
    let _ = writeln!(meta, "mean_dt = {:e}", res.mean_dt());
    let _ = writeln!(meta, "t_reached = {}", res.last_good.t);
    for (i, snap) in res.snapshots.iter().enumerate() {
        write_file(&out.join(format!("snapshot_{i:03}.csv")), &snapshot_csv(&solver.disc, &snap.state))?;
        if let Some(grid) = cfg.sample {
            write_file(
                &out.join(format!("sample_{i:03}.csv")),
                &sample_csv(&solver.disc, &p.model, &snap.state, grid),
            )?;
        }
        let _ = writeln!(meta, "snapshot_{i:03} = {}", snap.t);
    }
    match &res.error {
        None => {
            let _ = writeln!(meta, "status = ok");
        }
        Some(e) => {
            write_file(&out.join("last_good.csv"), &snapshot_csv(&solver.disc, &res.last_good.state))?;
            let _ = writeln!(meta, "status = aborted");
            let _ = writeln!(meta, "error = {e}");
        }
    }
    write_file(&out.join("meta.txt"), &meta)?;
    write_file(&out.join("timing.txt"), &format!("wall_seconds = {:.3}\n", clock.elapsed().as_secs_f64()))?;
    if let Some(e) = res.error {
        return Err(e.into());
    }
    Ok(RunSummary {
        cells: solver.disc.mesh.num_cells(),
        steps: res.steps(),
        t_reached: res.last_good.t,
        snapshots: res.snapshots.iter().map(|s| s.t).collect(),
    })
}

// ---------------------------------------------------------------- convergence

/// Convergence study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub problem: String,
    pub k: usize,
    pub oe: OeMode,
    pub bp: Option<BpScheme>,
    pub rk: Option<RkKind>,
    pub levels: usize,
    /// Resolution of the coarsest mesh.
    pub base: [usize; 2],
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> ConvergenceConfig {
        ConvergenceConfig {
            problem: "advection-sin".into(),
            k: 1,
            oe: OeMode::Componentwise,
            bp: None,
            rk: None,
            levels: 4,
            base: [4, 4],
            jitter: 0.2,
            seed: 11,
        }
    }
}

/// CSV with columns `N,L1,order1,L2,order2,Linf,orderinf`.
pub fn cmd_convergence(cfg: &ConvergenceConfig) -> Result<String, CliError> {
    let p = lookup(&cfg.problem)?;
    if p.exact.is_none() {
        return Err(CliError::config("problem", format!("{} has no exact solution", p.name)));
    }
    if cfg.levels == 0 {
        return Err(CliError::config("levels", "must be at least 1"));
    }
    if !(0.0..0.5).contains(&cfg.jitter) {
        return Err(CliError::config("jitter", format!("{} outside [0, 0.5)", cfg.jitter)));
    }
    let mut method = Method::new(cfg.k, cfg.oe, cfg.bp);
    method.rk = cfg.rk;
    let mut base = (p.mesh)(cfg.base).map_err(|e| CliError::config("base", e.to_string()))?;
    if cfg.jitter > 0.0 {
        base = base.jittered(cfg.jitter, cfg.seed).map_err(|e| CliError::config("jitter", e.to_string()))?;
    }
    let rows = convergence_study(&p, &method, base, cfg.levels)?;
    let mut s = String::from("N,L1,order1,L2,order2,Linf,orderinf\n");
    let ord = |o: Option<f64>| o.map_or(String::new(), |o| format!("{o:.4}"));
    for r in rows {
        let e = r.errors;
        let _ = writeln!(
            s,
            "{},{:.6e},{},{:.6e},{},{:.6e},{}",
            r.cells,
            e.l1,
            ord(r.orders[0]),
            e.l2,
            ord(r.orders[1]),
            e.linf,
            ord(r.orders[2])
        );
    }
    Ok(s)
}

// ---------------------------------------------------------------- decomp and cflscan

/// Equilateral triangle with unit sides.
pub fn equilateral() -> [[f64; 2]; 3] {
    [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]
}

/// Right isosceles triangle with unit hypotenuse.
pub fn right_isosceles() -> [[f64; 2]; 3] {
    let a = 0.5f64.sqrt();
    [[0.0, 0.0], [a, 0.0], [0.0, a]]
}

/// Parses `x0,y0;x1,y1;x2,y2` or one of the names `equilateral`, `right`.
pub fn parse_triangle(s: &str) -> Result<[[f64; 2]; 3], CliError> {
    match s.trim() {
        "equilateral" => return Ok(equilateral()),
        "right" => return Ok(right_isosceles()),
        _ => {}
    }
    let pts: Vec<&str> = s.split(';').collect();
    if pts.len() != 3 {
        return Err(CliError::config("vertices", format!("expected `x0,y0;x1,y1;x2,y2`, got {s:?}")));
    }
    let mut v = [[0.0; 2]; 3];
    for (i, p) in pts.iter().enumerate() {
        let xy: Vec<&str> = p.split(',').collect();
        if xy.len() != 2 {
            return Err(CliError::config("vertices", format!("vertex {p:?} is not `x,y`")));
        }
        v[i] = [parse_num("vertices", xy[0])?, parse_num("vertices", xy[1])?];
    }
    Ok(v)
}

fn cell_geom(v: [[f64; 2]; 3]) -> Result<CellGeom, CliError> {
    let mut v = v;
    let cross = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
    if !(cross.abs() > 0.0 && cross.is_finite()) {
        return Err(CliError::config("vertices", "triangle is degenerate"));
    }
    if cross < 0.0 {
        v.swap(1, 2);
    }
    Ok(CellGeom::from_vertices(v))
}

/// Which decompositions [`cmd_decomp`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompScheme {
    Optimal,
    Classical,
    /// Chen-Shu CFL bound; no decomposition is reported.
    ChenShu,
}

impl DecompScheme {
    fn name(self) -> &'static str {
        match self {
            DecompScheme::Optimal => "dcw",
            DecompScheme::Classical => "zxs",
            DecompScheme::ChenShu => "cs",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<DecompScheme>, CliError> {
        match s.trim() {
            "all" => Ok(vec![DecompScheme::Optimal, DecompScheme::Classical, DecompScheme::ChenShu]),
            "dcw" => Ok(vec![DecompScheme::Optimal]),
            "zxs" => Ok(vec![DecompScheme::Classical]),
            "cs" => Ok(vec![DecompScheme::ChenShu]),
            other => Err(CliError::config("scheme", format!("{other:?} is not one of all, dcw, zxs, cs"))),
        }
    }
}

/// One row per (cell, scheme, k): BP CFL number, sorted edge lengths and
/// weights, internal mass, and up to two internal nodes in physical coordinates.
pub fn cmd_decomp(
    cells: &[(String, [[f64; 2]; 3])],
    ks: &[usize],
    schemes: &[DecompScheme],
) -> Result<String, CliError> {
    let mut s = String::from(
        "cell,scheme,k,c_bp,l1,l2,l3,w1,w2,w3,internal_mass,node1_x,node1_y,node1_w,node2_x,node2_y,node2_w\n",
    );
    for (name, v) in cells {
        let g = cell_geom(*v)?;
        for &k in ks {
            if !(1..=2).contains(&k) {
                return Err(CliError::config("k", format!("decompositions exist for k = 1, 2 (got {k})")));
            }
            for &scheme in schemes {
                let _ = write!(s, "{name},{},{k}", scheme.name());
                let d = match scheme {
                    DecompScheme::ChenShu => {
                        let l: Vec<f64> = g.sorted.iter().map(|&i| g.lengths[i]).collect();
                        let _ = writeln!(s, ",{},{},{},{},,,,,,,,,,", chen_shu_cfl(&g), l[0], l[1], l[2]);
                        continue;
                    }
                    DecompScheme::Optimal => decomposition(&g, BpScheme::Optimal, k),
                    DecompScheme::Classical => decomposition(&g, BpScheme::Classical, k),
                }
                .map_err(|e| CliError::config("k", e))?;
                let _ = write!(s, ",{},{},{},{}", d.c_bp, d.lengths[0], d.lengths[1], d.lengths[2]);
                let _ = write!(s, ",{},{},{},{}", d.weights[0], d.weights[1], d.weights[2], d.internal_mass);
                for i in 0..2 {
                    match d.nodes.get(i) {
                        Some(n) => {
                            let x = d.node_point(&g, i);
                            let _ = write!(s, ",{},{},{}", x[0], x[1], n.weight);
                        }
                        None => s.push_str(",,,"),
                    }
                }
                s.push('\n');
            }
        }
    }
    Ok(s)
}

/// Where [`cmd_cflscan`] takes its triangles from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScanSource {
    Random { count: usize, seed: u64 },
    Mesh(PathBuf),
}

/// Extremes of the optimal-to-classical and optimal-to-Chen-Shu CFL ratios,
/// one row per ratio and degree.
pub fn cmd_cflscan(source: &ScanSource, k: Option<usize>) -> Result<String, CliError> {
    if let Some(k) = k {
        if !(1..=2).contains(&k) {
            return Err(CliError::config("k", format!("ratios exist for k = 1, 2 (got {k})")));
        }
    }
    let scan = match source {
        ScanSource::Random { count: 0, .. } => return Err(CliError::config("count", "must be positive")),
        ScanSource::Random { count, seed } => cfl_ratios(&random_triangles(*count, *seed)),
        ScanSource::Mesh(path) => {
            let m = Mesh::load(path).map_err(|e| CliError::config("mesh", format!("{}: {e}", path.display())))?;
            cfl_ratios(&m.geom)
        }
    };
    let mut s = String::from("ratio,k,count,min,max\n");
    for (name, kk, r) in [("dcw/zxs", 1, scan.zxs_k1), ("dcw/zxs", 2, scan.zxs_k2), ("dcw/cs", 2, scan.cs_k2)] {
        if k.is_none_or(|k| k == kk) {
            let _ = writeln!(s, "{name},{kk},{},{},{}", scan.count, r.min, r.max);
        }
    }
    Ok(s)
}

// ---------------------------------------------------------------- clap front end

#[derive(Debug, Parser)]
#[command(name = "oedg", version, about = "Oscillation-eliminating DG solver on triangular meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one problem and write snapshots.
    Run(Box<RunArgs>),
    /// Errors and orders under uniform refinement.
    Convergence(ConvergenceArgs),
    /// Convex decompositions and BP CFL numbers of single triangles.
    Decomp(DecompArgs),
    /// Extremes of BP CFL ratios over many triangles.
    Cflscan(ScanArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem name.
    #[arg(long)]
    pub problem: Option<String>,
    /// Polynomial degree, 1..=4.
    #[arg(long)]
    pub k: Option<String>,
    /// auto, ssp22, ssp33 or ssp54.
    #[arg(long)]
    pub rk: Option<String>,
    /// off, cw or ri.
    #[arg(long)]
    pub oe: Option<String>,
    /// off, zxs or dcw.
    #[arg(long)]
    pub bp: Option<String>,
    /// Time-step multiplier.
    #[arg(long)]
    pub cfl: Option<String>,
    /// Mesh file.
    #[arg(long)]
    pub mesh: Option<String>,
    /// Generator resolution `nx,ny`.
    #[arg(long)]
    pub gen: Option<String>,
    /// Vertex perturbation of a generated mesh.
    #[arg(long)]
    pub jitter: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Final time.
    #[arg(long)]
    pub tend: Option<String>,
    /// Comma-separated snapshot times, or `none`.
    #[arg(long)]
    pub outputs: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Point-sampling grid `nx,ny`.
    #[arg(long)]
    pub sample: Option<String>,
    #[arg(long)]
    pub max_steps: Option<String>,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("problem", &self.problem),
            ("k", &self.k),
            ("rk", &self.rk),
            ("oe", &self.oe),
            ("bp", &self.bp),
            ("cfl", &self.cfl),
            ("mesh", &self.mesh),
            ("gen", &self.gen),
            ("jitter", &self.jitter),
            ("seed", &self.seed),
            ("tend", &self.tend),
            ("outputs", &self.outputs),
            ("out", &self.out),
            ("sample", &self.sample),
            ("max_steps", &self.max_steps),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, default_value = "advection-sin")]
    pub problem: String,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value = "cw")]
    pub oe: String,
    #[arg(long, default_value = "off")]
    pub bp: String,
    #[arg(long, default_value = "auto")]
    pub rk: String,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Coarsest resolution `nx,ny`.
    #[arg(long, default_value = "4,4")]
    pub base: String,
    #[arg(long, default_value_t = 0.2)]
    pub jitter: f64,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConvergenceArgs {
    pub fn to_config(&self) -> Result<ConvergenceConfig, CliError> {
        Ok(ConvergenceConfig {
            problem: self.problem.clone(),
            k: self.k,
            oe: parse_oe(&self.oe)?,
            bp: parse_bp(&self.bp)?,
            rk: parse_rk(&self.rk)?,
            levels: self.levels,
            base: parse_pair("base", &self.base)?,
            jitter: self.jitter,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct DecompArgs {
    /// `x0,y0;x1,y1;x2,y2`, `equilateral` or `right`; both named cells when absent.
    #[arg(long)]
    pub vertices: Option<String>,
    /// 1 or 2; both when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// all, dcw, zxs or cs.
    #[arg(long, default_value = "all")]
    pub scheme: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Scan the cells of this mesh file instead of random triangles.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// 1 or 2; both when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Dispatches a parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.to_config()?;
            let s = cmd_run(&cfg)?;
            println!(
                "{} cells, {} steps, t = {}, {} snapshots in {}",
                s.cells,
                s.steps,
                s.t_reached,
                s.snapshots.len(),
                cfg.out.display()
            );
            Ok(())
        }
        Command::Convergence(args) => emit(&args.out, &cmd_convergence(&args.to_config()?)?),
        Command::Decomp(args) => {
            let cells = match &args.vertices {
                Some(v) => vec![(v.trim().to_string(), parse_triangle(v)?)],
                None => vec![("equilateral".into(), equilateral()), ("right".into(), right_isosceles())],
            };
            let cells: Vec<(String, [[f64; 2]; 3])> =
                cells.into_iter().map(|(n, v)| (if n.contains(',') { "custom".into() } else { n }, v)).collect();
            let ks = args.k.map_or(vec![1, 2], |k| vec![k]);
            emit(&args.out, &cmd_decomp(&cells, &ks, &DecompScheme::parse(&args.scheme)?)?)
        }
        Command::Cflscan(args) => {
            let source = match &args.mesh {
                Some(p) => ScanSource::Mesh(p.clone()),
                None => ScanSource::Random { count: args.count, seed: args.seed },
            };
            emit(&args.out, &cmd_cflscan(&source, args.k)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_flags() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nproblem = implosion\nk=1 # trailing\noe = ri\nbp = dcw\ngen = 20,20\n").unwrap();
        assert_eq!(c.problem, "implosion");
        assert_eq!(c.k, 1);
        assert_eq!(c.oe, OeMode::RotationInvariant);
        assert_eq!(c.bp, Some(BpScheme::Optimal));
        assert_eq!(c.gen, Some([20, 20]));
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = RunConfig::default();
        let field = |e: CliError| match e {
            CliError::Config { field, .. } => field,
            other => panic!("{other}"),
        };
        assert_eq!(field(c.set("oe", "xx").unwrap_err()), "oe");
        assert_eq!(field(c.set("colour", "red").unwrap_err()), "colour");
        assert_eq!(field(c.apply_text("k = 1\nk = 2").unwrap_err()), "k");
        assert_eq!(field(c.apply_text("nonsense").unwrap_err()), "line 1");
        c.oe = OeMode::RotationInvariant;
        assert_eq!(field(c.validate().unwrap_err()), "oe");
        c.oe = OeMode::Off;
        c.bp = Some(BpScheme::Optimal);
        c.k = 3;
        assert_eq!(field(c.validate().unwrap_err()), "bp");
        c.k = 5;
        assert_eq!(field(c.validate().unwrap_err()), "k");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::config("k", "x").exit_code(), 2);
        assert_eq!(CliError::Admissibility("x".into()).exit_code(), 3);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 4);
        let e = DgError::Inadmissible {
            cell: 0,
            location: "average".into(),
            source: PhysicsError::Inadmissible { rho: -1.0, internal_energy: 1.0 },
        };
        assert_eq!(CliError::from(e).exit_code(), 3);
        assert_eq!(CliError::from(DgError::NonFinite { cell: 0 }).exit_code(), 4);
    }

    #[test]
    fn triangle_parsing() {
        let v = parse_triangle("0,0;1,0;0,1").unwrap();
        assert_eq!(v[2], [0.0, 1.0]);
        assert!(parse_triangle("0,0;1,0").is_err());
        assert!(cell_geom([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
        // clockwise input is reoriented
        let g = cell_geom([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((g.area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locator_finds_every_centroid() {
        let p = problem("implosion").unwrap();
        let mesh = (p.mesh)([6, 6]).unwrap();
        let loc = Locator::new(&mesh);
        for (k, g) in mesh.geom.iter().enumerate() {
            assert_eq!(loc.find(&mesh, g.centroid), Some(k));
        }
    }
}
