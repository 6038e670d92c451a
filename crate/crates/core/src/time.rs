//! Explicit SSP Runge-Kutta stepping with per-stage OE and BP hooks.
//!
//! - Schemes are stored in Shu-Osher form: stage i is
//!   `sum_j (a_ij u_j + dt b_ij L(u_j))`, rows of `a` summing to one.
//! - After every stage the OE filter (full step `dt`) and then the BP limiter
//!   are applied.
//! - The Lax-Friedrichs coefficient is computed once per step.

use thiserror::Error;

use crate::bp::{bp_timestep, generic_timestep, BpLimiter, BpScheme};
use crate::dg::{AlphaMode, BoundarySpec, DgError, Discretization, ModalState};
use crate::oe::{apply_oe, OeMode};
use crate::physics::{Model, PhysicsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkKind {
    Ssp22,
    Ssp33,
    Ssp54,
}

impl RkKind {
    /// Lowest-cost scheme whose order matches a degree-k spatial discretisation.
    pub fn for_degree(k: usize) -> RkKind {
        match k {
            0 | 1 => RkKind::Ssp22,
            2 => RkKind::Ssp33,
            _ => RkKind::Ssp54,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RkScheme {
    pub kind: RkKind,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c_ssp: f64,
    /// Stage times in units of dt: c[j] is the time of stage value u_j.
    pub c: Vec<f64>,
}

impl RkScheme {
    pub fn new(kind: RkKind) -> RkScheme {
        let (a, b, c_ssp): (Vec<Vec<f64>>, Vec<Vec<f64>>, f64) = match kind {
            RkKind::Ssp22 => (vec![vec![1.0], vec![0.5, 0.5]], vec![vec![1.0], vec![0.0, 0.5]], 1.0),
            RkKind::Ssp33 => (
                vec![vec![1.0], vec![0.75, 0.25], vec![1.0 / 3.0, 0.0, 2.0 / 3.0]],
                vec![vec![1.0], vec![0.0, 0.25], vec![0.0, 0.0, 2.0 / 3.0]],
                1.0,
            ),
            // Spiteri-Ruuth SSP(5,4).
            RkKind::Ssp54 => (
                vec![
                    vec![1.0],
                    vec![0.444370493651235, 0.555629506348765],
                    vec![0.620101851488403, 0.0, 0.379898148511597],
                    vec![0.178079954393132, 0.0, 0.0, 0.821920045606868],
                    vec![0.0, 0.0, 0.517231671970585, 0.096059710526147, 0.386708617503269],
                ],
                vec![
                    vec![0.391752226571890],
                    vec![0.0, 0.368410593050371],
                    vec![0.0, 0.0, 0.251891774271694],
                    vec![0.0, 0.0, 0.0, 0.544974750228521],
                    vec![0.0, 0.0, 0.0, 0.063692468666290, 0.226007483236906],
                ],
                1.508,
            ),
        };
        let mut c = vec![0.0];
        for (ai, bi) in a.iter().zip(&b) {
            c.push(ai.iter().zip(bi).zip(&c).map(|((a, b), cj)| a * cj + b).sum());
        }
        RkScheme { kind, a, b, c_ssp, c }
    }

    pub fn stages(&self) -> usize {
        self.a.len()
    }
}

#[derive(Debug, Clone, Error)]
pub enum TimeError {
    #[error("step {step}, stage {stage}: {source}")]
    Stage { step: usize, stage: usize, source: DgError },
    #[error("step {step}: invalid time step {dt:e}")]
    BadTimestep { step: usize, dt: f64 },
    #[error("step limit {0} reached before the final output time")]
    StepLimit(usize),
}

impl TimeError {
    /// True when the abort was caused by a physically inadmissible state rather
    /// than a NaN/Inf or a bad step.
    pub fn is_admissibility(&self) -> bool {
        matches!(
            self,
            TimeError::Stage { source: DgError::Inadmissible { source: PhysicsError::Inadmissible { .. }, .. }, .. }
        )
    }
}

/// How the time step is chosen from the global wave speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `(C_SSP / alpha) min |K| / ((2k+1) perimeter)`.
    Generic,
    /// `(C_SSP / alpha) min C_K |K|` for the given decomposition family.
    Bp(BpScheme),
    /// `(C_SSP / 9) (min |K| / (3 lbar) / alpha)^(5/4)`, for reproducing high-order runs.
    HighOrder,
    Fixed(f64),
}

/// Everything needed to advance a state.
pub struct Solver {
    pub disc: Discretization,
    pub model: Model,
    pub bc: BoundarySpec,
    pub rk: RkScheme,
    pub oe: OeMode,
    pub bp: Option<BpLimiter>,
    pub step_rule: StepRule,
    pub alpha_mode: AlphaMode,
    /// Multiplies the step from `step_rule`.
    pub cfl_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub state: ModalState,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub snapshots: Vec<Snapshot>,
    pub dts: Vec<f64>,
    /// Last state that passed every check; the final state if `error` is None.
    pub last_good: Snapshot,
    pub error: Option<TimeError>,
}

impl RunResult {
    pub fn steps(&self) -> usize {
        self.dts.len()
    }

    pub fn mean_dt(&self) -> f64 {
        if self.dts.is_empty() {
            0.0
        } else {
            self.dts.iter().sum::<f64>() / self.dts.len() as f64
        }
    }
}

impl Solver {
    pub fn new(disc: Discretization, model: Model, bc: BoundarySpec, rk: RkKind) -> Solver {
        Solver {
            disc,
            model,
            bc,
            rk: RkScheme::new(rk),
            oe: OeMode::Off,
            bp: None,
            step_rule: StepRule::Generic,
            alpha_mode: AlphaMode::Traces,
            cfl_scale: 1.0,
        }
    }

    pub fn alpha(&self, st: &ModalState, t: f64) -> Result<f64, DgError> {
        self.disc.max_wavespeed(st, &self.model, &self.bc, t, self.alpha_mode)
    }

    pub fn timestep(&self, alpha: f64) -> f64 {
        let mesh = &self.disc.mesh;
        let c = self.rk.c_ssp;
        let dt = match self.step_rule {
            StepRule::Generic => generic_timestep(mesh, alpha, c, self.disc.degree()),
            StepRule::Bp(s) => bp_timestep(mesh, alpha, c, s, self.disc.degree()),
            StepRule::HighOrder => {
                let m = mesh.geom.iter().map(|g| g.area / g.perimeter()).fold(f64::INFINITY, f64::min);
                c / 9.0 * (m / alpha).powf(1.25)
            }
            StepRule::Fixed(dt) => dt,
        };
        dt * self.cfl_scale
    }

    /// Stage hooks: OE with the full step, then BP.
    pub fn post_stage(&self, st: &mut ModalState, dt: f64, t: f64) -> Result<(), DgError> {
        apply_oe(&self.disc, &self.model, &self.bc, st, dt, t, self.oe)?;
        if let Some(bp) = &self.bp {
            bp.limit(&self.disc, st)?;
        }
        if let Some(cell) = st.first_non_finite() {
            return Err(DgError::NonFinite { cell });
        }
        Ok(())
    }

    /// One full step; errors carry the 1-based stage index.
    pub fn advance(&self, st: &ModalState, t: f64, dt: f64, alpha: f64) -> Result<ModalState, (usize, DgError)> {
        let s = self.rk.stages();
        let mut us: Vec<ModalState> = vec![st.clone()];
        let mut ls: Vec<Option<ModalState>> = vec![None; s];
        for i in 0..s {
            let (a, b) = (&self.rk.a[i], &self.rk.b[i]);
            for j in 0..=i {
                if b[j] != 0.0 && ls[j].is_none() {
                    let mut l = self.disc.zeros(st.ncomp);
                    self.disc
                        .residual(&self.model, &self.bc, &us[j], t + self.rk.c[j] * dt, alpha, &mut l)
                        .map_err(|e| (j + 1, e))?;
                    ls[j] = Some(l);
                }
            }
            let mut next = self.disc.zeros(st.ncomp);
            for j in 0..=i {
                let (aj, bj) = (a[j], b[j] * dt);
                if aj == 0.0 && bj == 0.0 {
                    continue;
                }
                let u = &us[j].coeffs;
                match &ls[j] {
                    Some(l) if bj != 0.0 => {
                        for ((n, x), y) in next.coeffs.iter_mut().zip(u).zip(&l.coeffs) {
                            *n += aj * x + bj * y;
                        }
                    }
                    _ => {
                        for (n, x) in next.coeffs.iter_mut().zip(u) {
                            *n += aj * x;
                        }
                    }
                }
            }
            self.post_stage(&mut next, dt, t + self.rk.c[i + 1] * dt).map_err(|e| (i + 1, e))?;
            us.push(next);
        }
        Ok(us.pop().expect("at least one stage"))
    }

    /// Integrates to each output time in turn, clipping the last step onto it.
    pub fn run(&self, st0: ModalState, t0: f64, outputs: &[f64], max_steps: usize) -> RunResult {
        self.run_observed(st0, t0, outputs, max_steps, |_, _, _| {})
    }

    /// As [`Solver::run`], calling `observe(step, t, state)` after every accepted step.
    pub fn run_observed(
        &self,
        st0: ModalState,
        t0: f64,
        outputs: &[f64],
        max_steps: usize,
        mut observe: impl FnMut(usize, f64, &ModalState),
    ) -> RunResult {
        let mut targets: Vec<f64> = outputs.iter().copied().filter(|&x| x >= t0).collect();
        targets.sort_by(f64::total_cmp);
        let mut res =
            RunResult { snapshots: vec![], dts: vec![], last_good: Snapshot { t: t0, state: st0 }, error: None };
        for &target in &targets {
            loop {
                let t = res.last_good.t;
                if t >= target - 1e-14 * target.abs().max(1.0) {
                    res.snapshots.push(res.last_good.clone());
                    break;
                }
                let step = res.dts.len();
                if step >= max_steps {
                    res.error = Some(TimeError::StepLimit(max_steps));
                    return res;
                }
                let st = &res.last_good.state;
                let alpha = match self.alpha(st, t) {
                    Ok(a) => a,
                    Err(source) => {
                        res.error = Some(TimeError::Stage { step, stage: 0, source });
                        return res;
                    }
                };
                // A zero wave speed (e.g. Burgers at rest) leaves nothing to resolve.
                let fixed = matches!(self.step_rule, StepRule::Fixed(_));
                let mut dt = if alpha > 0.0 || fixed { self.timestep(alpha) } else { target - t };
                if !(dt.is_finite() && dt > 0.0) {
                    res.error = Some(TimeError::BadTimestep { step, dt });
                    return res;
                }
                let mut t_next = t + dt;
                if t_next >= target - 1e-14 * target.abs().max(1.0) {
                    dt = target - t;
                    t_next = target;
                }
                match self.advance(st, t, dt, alpha) {
                    Ok(next) => {
                        res.dts.push(dt);
                        res.last_good = Snapshot { t: t_next, state: next };
                        observe(step + 1, t_next, &res.last_good.state);
                    }
                    Err((stage, source)) => {
                        res.error = Some(TimeError::Stage { step, stage, source });
                        return res;
                    }
                }
            }
        }
        res
    }
}
