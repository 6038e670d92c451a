//! Acceptance criteria 1-8, one PASS/FAIL line each. Exits non-zero on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oedg::bp::{decomposition, BpScheme};
use oedg::cli::{cmd_decomp, equilateral, right_isosceles, DecompScheme};
use oedg::dg::{BoundarySpec, Discretization, ModalState};
use oedg::harness::{
    cfl_ratio_scan, convergence_study, near_vacuum_run, problem, random_triangles, rotation_experiment, Method,
};
use oedg::mesh::{generate_structured, Mesh, RectSpec};
use oedg::oe::{apply_oe, damping_rates, OeMode};
use oedg::physics::Model;
use oedg::time::Solver;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_square(n: usize, jitter: f64, seed: u64) -> Mesh {
    let m = generate_structured(&RectSpec::new([0.0, 1.0], [0.0, 1.0], n, n)).unwrap();
    m.jittered(jitter, seed).unwrap()
}

// ---------------------------------------------------------------- 1

fn decomp_table() -> Outcome {
    let cells = [("equilateral".to_string(), equilateral()), ("right".to_string(), right_isosceles())];
    let all = [DecompScheme::Optimal, DecompScheme::Classical, DecompScheme::ChenShu];
    let csv = cmd_decomp(&cells, &[1, 2], &all).map_err(|e| e.to_string())?;
    let value = |cell: &str, scheme: &str, k: &str| -> Result<f64, String> {
        csv.lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[0] == cell && f[1] == scheme && f[2] == k)
            .ok_or_else(|| format!("no row {cell},{scheme},{k}"))?[3]
            .parse::<f64>()
            .map_err(|e| e.to_string())
    };
    let expected = [
        ("equilateral", "dcw", "1", 1.0 / 3.0),
        ("equilateral", "zxs", "1", 1.0 / 9.0),
        ("equilateral", "dcw", "2", 1.0 / 6.0),
        ("right", "dcw", "1", 0.3905),
        ("right", "zxs", "1", 0.1381),
        ("right", "cs", "2", 1.0 / 6.0),
        ("right", "dcw", "2", 0.2042),
        ("right", "zxs", "2", 0.0460),
        ("equilateral", "zxs", "2", 0.0370),
    ];
    let mut worst: f64 = 0.0;
    for (cell, scheme, k, want) in expected {
        let got = value(cell, scheme, k)?;
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-4, || format!("{cell} {scheme} k={k}: {got} vs {want}"))?;
    }
    Ok(format!("9 entries, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Barycentric exponent triples of total degree exactly k; they span P_k.
fn exponents(k: usize) -> Vec<[usize; 3]> {
    let mut out = vec![];
    for a in 0..=k {
        for b in 0..=k - a {
            out.push([a, b, k - a - b]);
        }
    }
    out
}

fn decomp_random() -> Outcome {
    let cells = random_triangles(10_000, 2024);
    let (mut worst_exact, mut worst_bary3, mut min_w): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for (t, g) in cells.iter().enumerate() {
        for k in [1, 2] {
            let d = decomposition(g, BpScheme::Optimal, k)?;
            for w in d.weights.iter().chain(d.nodes.iter().map(|n| &n.weight)) {
                min_w = min_w.min(*w);
            }
            for n in &d.nodes {
                ensure(n.bary.iter().all(|&b| b >= -1e-13), || {
                    format!("triangle {t} k={k}: node {:?} outside", n.bary)
                })?;
            }
            if k == 1 {
                if let Some(n) = d.nodes.first() {
                    worst_bary3 = worst_bary3.max(n.bary[2].abs());
                }
            }
            for a in exponents(k) {
                // cell mean of prod lambda_i^a_i is 2 a! b! c! / (a+b+c+2)!
                let cell = 2.0 * factorial(a[0]) * factorial(a[1]) * factorial(a[2]) / factorial(k + 2);
                let mut rep = 0.0;
                for i in 0..3 {
                    // edge i lies opposite vertex i, where lambda_i vanishes
                    if a[i] == 0 {
                        let (p, q) = (a[(i + 1) % 3], a[(i + 2) % 3]);
                        rep += d.weights[i] * factorial(p) * factorial(q) / factorial(p + q + 1);
                    }
                }
                for n in &d.nodes {
                    rep += n.weight * (0..3).map(|i| n.bary[i].powi(a[i] as i32)).product::<f64>();
                }
                worst_exact = worst_exact.max((rep - cell).abs());
            }
        }
    }
    ensure(worst_exact <= 1e-12, || format!("exactness defect {worst_exact:e}"))?;
    ensure(min_w > 0.0, || format!("non-positive weight {min_w:e}"))?;
    ensure(worst_bary3 <= 1e-13, || format!("P1 node off its edge by {worst_bary3:e}"))?;
    Ok(format!("exactness {worst_exact:.1e}, min weight {min_w:.2e}, P1 bary3 {worst_bary3:.1e}"))
}

// ---------------------------------------------------------------- 3

fn cfl_ratios() -> Outcome {
    let s = cfl_ratio_scan(10_000, 7);
    ensure(s.zxs_k1.min >= 2.0 - 1e-9 && s.zxs_k1.max <= 3.0 + 1e-9, || format!("k=1 dcw/zxs {:?}", s.zxs_k1))?;
    ensure(s.zxs_k2.min >= 3.8038 - 1e-4 && s.zxs_k2.max <= 4.5 + 1e-9, || format!("k=2 dcw/zxs {:?}", s.zxs_k2))?;
    ensure(s.cs_k2.min >= 1.0 - 1e-9 && s.cs_k2.max <= 1.4202 + 1e-4, || format!("k=2 dcw/cs {:?}", s.cs_k2))?;
    Ok(format!(
        "k=1 dcw/zxs [{:.4}, {:.4}], k=2 dcw/zxs [{:.4}, {:.4}], k=2 dcw/cs [{:.4}, {:.4}]",
        s.zxs_k1.min, s.zxs_k1.max, s.zxs_k2.min, s.zxs_k2.max, s.cs_k2.min, s.cs_k2.max
    ))
}

// ---------------------------------------------------------------- 4

fn convergence() -> Outcome {
    let base = unit_square(4, 0.2, 11);
    let mut summary = vec![];
    for (name, k, need) in [
        ("advection-sin", 1, 1.8),
        ("advection-sin", 2, 2.7),
        ("advection-sin", 3, 3.6),
        ("burgers-sin", 1, 1.8),
        ("burgers-sin", 2, 2.7),
    ] {
        let p = problem(name).unwrap();
        let rows = convergence_study(&p, &Method::new(k, OeMode::Componentwise, None), base.clone(), 4)
            .map_err(|e| format!("{name} k={k}: {e}"))?;
        ensure(rows.last().unwrap().cells <= 20_000, || "mesh too fine".into())?;
        for w in rows.windows(2) {
            ensure(w[1].errors.l1 < w[0].errors.l1, || format!("{name} k={k}: L1 not decreasing at N={}", w[1].cells))?;
        }
        let last = rows.last().unwrap();
        let o = last.orders[0].unwrap_or(0.0);
        ensure(o >= need, || format!("{name} k={k}: final L1 order {o:.2} < {need}"))?;
        summary.push(format!("{name} k={k} {o:.2}"));
    }
    Ok(format!("final L1 orders: {}", summary.join(", ")))
}

// ---------------------------------------------------------------- 5

fn random_state(disc: &Discretization, ncomp: usize, rng: &mut ChaCha8Rng, base: [f64; 4]) -> ModalState {
    let mut st = disc.project(ncomp, |x, y| {
        let s = (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
        let step = if x + 0.4 * y > 0.6 { 1.0 } else { 0.0 };
        std::array::from_fn(|c| base[c] + 0.2 * s + 0.3 * step * (c as f64 + 1.0) / 4.0)
    });
    for v in st.coeffs.iter_mut() {
        *v += 0.01 * rng.gen_range(-1.0..1.0);
    }
    st
}

fn oe_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bc = BoundarySpec::new();
    let mut worst_scale: f64 = 0.0;
    let mut worst_evo: f64 = 0.0;
    for k in 1..=4 {
        let disc = Discretization::new(unit_square(6, 0.3, k as u64), k);
        let nm = disc.refel.nmodes;

        // averages are bit-preserved
        for (model, mode) in [(Model::burgers(), OeMode::Componentwise), (Model::euler(), OeMode::RotationInvariant)] {
            let st = random_state(&disc, model.ncomp(), &mut rng, [1.0, 0.3, -0.2, 2.5]);
            let mut f = st.clone();
            apply_oe(&disc, &model, &bc, &mut f, 0.05, 0.0, mode).map_err(|e| e.to_string())?;
            for c in 0..st.ncells {
                for comp in 0..st.ncomp {
                    ensure(f.get(c, 0, comp).to_bits() == st.get(c, 0, comp).to_bits(), || {
                        format!("k={k}: average of cell {c} changed")
                    })?;
                }
            }
            ensure(f != st, || format!("k={k}: filter had no effect"))?;
        }

        // F(a u + b) = a F(u) + b for linear advection
        let model = Model::advection();
        for _ in 0..4 {
            let a = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let b = rng.gen_range(-5.0..5.0);
            let u = random_state(&disc, 1, &mut rng, [0.0; 4]);
            let mut v = u.clone();
            for c in 0..v.ncells {
                for l in 0..nm {
                    let x = v.get(c, l, 0) * a + if l == 0 { b } else { 0.0 };
                    v.cell_mut(c)[l] = x;
                }
            }
            let mut fu = u.clone();
            apply_oe(&disc, &model, &bc, &mut fu, 0.02, 0.0, OeMode::Componentwise).map_err(|e| e.to_string())?;
            apply_oe(&disc, &model, &bc, &mut v, 0.02, 0.0, OeMode::Componentwise).map_err(|e| e.to_string())?;
            let mut scale: f64 = b.abs();
            let mut err: f64 = 0.0;
            for c in 0..u.ncells {
                for l in 0..nm {
                    let want = a * fu.get(c, l, 0) + if l == 0 { b } else { 0.0 };
                    scale = scale.max(want.abs());
                    err = err.max((v.get(c, l, 0) - want).abs());
                }
            }
            worst_scale = worst_scale.max(err / scale);
            ensure(err <= 1e-13 * scale, || format!("k={k}: scale invariance error {err:e} at scale {scale:e}"))?;
        }

        // sigma(lambda F) dt / lambda = sigma(F) dt
        for (model, mode, ncomp) in [
            (Model::advection(), OeMode::Componentwise, 1),
            (Model::burgers(), OeMode::Componentwise, 1),
            (Model::euler(), OeMode::Componentwise, 4),
            (Model::euler(), OeMode::RotationInvariant, 4),
        ] {
            let st = random_state(&disc, ncomp, &mut rng, [1.0, 0.3, -0.2, 2.5]);
            let s1 = damping_rates(&disc, &model, &bc, &st, 0.0, mode).map_err(|e| e.to_string())?;
            for lambda in [0.1, 10.0] {
                let sl = damping_rates(&disc, &model.scaled(lambda), &bc, &st, 0.0, mode).map_err(|e| e.to_string())?;
                for (x, y) in s1.iter().zip(&sl) {
                    let rel = (y / lambda - x).abs() / x.abs().max(f64::MIN_POSITIVE);
                    if *x != 0.0 {
                        worst_evo = worst_evo.max(rel);
                    }
                    ensure(*x == 0.0 && *y == 0.0 || rel <= 1e-12, || {
                        format!("k={k} {mode:?} lambda={lambda}: exponent {x:e} vs {:e}", y / lambda)
                    })?;
                }
            }
        }
    }
    Ok(format!("averages bitwise, scale {worst_scale:.1e}, evolution {worst_evo:.1e}"))
}

// ---------------------------------------------------------------- 6

fn rotation() -> Outcome {
    let (n, k, phi, steps) = (20, 2, 0.7, 50);
    let ri = rotation_experiment(n, k, phi, OeMode::RotationInvariant, steps).map_err(|e| e.to_string())?;
    let cw = rotation_experiment(n, k, phi, OeMode::Componentwise, steps).map_err(|e| e.to_string())?;
    ensure(ri.worst() <= 1e-11, || format!("RIOE error {:e}", ri.worst()))?;
    ensure(cw.worst() >= 1e-6, || format!("componentwise error only {:e}", cw.worst()))?;
    Ok(format!("{} cells, RIOE {:.1e}, componentwise {:.1e}", 2 * n * n, ri.worst(), cw.worst()))
}

// ---------------------------------------------------------------- 7

fn bp_guarantees() -> Outcome {
    let p = problem("advection-flower").unwrap();
    let mesh = (p.mesh)([16, 16]).unwrap().jittered(0.2, 3).unwrap();
    let mut details = vec![];
    for (k, scheme) in [(1, BpScheme::Optimal), (2, BpScheme::Optimal), (2, BpScheme::Classical)] {
        let (solver, mut st) =
            p.setup(mesh.clone(), &Method::new(k, OeMode::Componentwise, Some(scheme))).map_err(|e| e.to_string())?;
        let lim = solver.bp.as_ref().unwrap();
        let mut t = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for step in 0..200 {
            let alpha = solver.alpha(&st, t).map_err(|e| e.to_string())?;
            let dt = solver.timestep(alpha);
            st = solver.advance(&st, t, dt, alpha).map_err(|(s, e)| format!("step {step} stage {s}: {e}"))?;
            t += dt;
            for c in 0..st.ncells {
                for v in lim.check_values(&solver.disc, &st, c).iter().chain([&st.average(c)]) {
                    lo = lo.min(v[0]);
                    hi = hi.max(v[0]);
                }
            }
            ensure(lo >= -1e-12 && hi <= 1.0 + 1e-12, || format!("k={k} {scheme}: step {step} range [{lo:e}, {hi}]"))?;
        }
        details.push(format!("k={k} {scheme} [{lo:.1e}, 1{:+.1e}]", hi - 1.0));
    }

    let n = 100;
    let with = near_vacuum_run(n, 2, Some(BpScheme::Optimal), 0.1).map_err(|e| e.to_string())?;
    ensure(with.error.is_none(), || format!("BP run aborted: {}", with.error.as_ref().unwrap()))?;
    ensure(with.violations == 0, || format!("{} violations", with.violations))?;
    let without = near_vacuum_run(n, 2, None, 0.1).map_err(|e| e.to_string())?;
    let err = without.error.ok_or("run without BP finished")?;
    ensure(err.is_admissibility(), || format!("run without BP failed for another reason: {err}"))?;
    details.push(format!(
        "near-vacuum {} steps, min rho {:.1e}, min p {:.1e}; without BP: {err}",
        with.steps, with.min_density, with.min_pressure
    ));
    Ok(details.join("; "))
}

// ---------------------------------------------------------------- 8

fn free_stream_and_mass() -> Outcome {
    let bc = BoundarySpec::new();
    let mut worst: f64 = 0.0;
    let mesh = unit_square(10, 0.35, 99);
    for k in 1..=4 {
        let disc = Discretization::new(mesh.clone(), k);
        for (model, u) in [
            (Model::advection(), [0.7, 0.0, 0.0, 0.0]),
            (Model::burgers(), [-1.3, 0.0, 0.0, 0.0]),
            (Model::euler(), Model::euler().from_primitive(1.4, 0.6, -0.8, 2.0)),
        ] {
            let st = disc.project(model.ncomp(), |_, _| u);
            let alpha =
                disc.max_wavespeed(&st, &model, &bc, 0.0, oedg::dg::AlphaMode::Traces).map_err(|e| e.to_string())?;
            let mut r = disc.zeros(model.ncomp());
            disc.residual(&model, &bc, &st, 0.0, alpha, &mut r).map_err(|e| e.to_string())?;
            // residual times the cell size, relative to the flux scale
            let (f1, f2) = model.flux(&u);
            let fs = (0..model.ncomp()).map(|c| f1[c].abs() + f2[c].abs() + alpha * u[c].abs()).fold(0.0, f64::max);
            for c in 0..r.ncells {
                let h = disc.mesh.geom[c].heights.iter().cloned().fold(f64::INFINITY, f64::min);
                for v in r.cell(c) {
                    worst = worst.max(v.abs() * h / fs);
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("free-stream residual {worst:e}"))?;

    // total mass over 500 steps on periodic meshes
    let mesh = unit_square(12, 0.3, 17);
    let mut euler = problem("advection-sin").unwrap();
    euler.model = Model::euler();
    euler.initial =
        Arc::new(|x, y| Model::euler().from_primitive(1.0 + 0.2 * (2.0 * PI * (x + y)).sin(), 0.7, 0.3, 1.0));
    let mut worst_mass: f64 = 0.0;
    for (p, k, oe) in [
        (problem("advection-sin").unwrap(), 2, OeMode::Componentwise),
        (problem("burgers-sin").unwrap(), 3, OeMode::Componentwise),
        (euler, 2, OeMode::RotationInvariant),
    ] {
        let (solver, mut st): (Solver, ModalState) =
            p.setup(mesh.clone(), &Method::new(k, oe, None)).map_err(|e| e.to_string())?;
        let m0 = solver.disc.total_mass(&st);
        // scale: integral of |u| per component
        let scale: Vec<f64> = (0..st.ncomp)
            .map(|c| (0..st.ncells).map(|i| solver.disc.mesh.geom[i].area * st.get(i, 0, c).abs()).sum())
            .collect();
        let mut t = 0.0;
        for step in 0..500 {
            let alpha = solver.alpha(&st, t).map_err(|e| e.to_string())?;
            let dt = solver.timestep(alpha);
            st =
                solver.advance(&st, t, dt, alpha).map_err(|(s, e)| format!("{} step {step} stage {s}: {e}", p.name))?;
            t += dt;
        }
        let m1 = solver.disc.total_mass(&st);
        for c in 0..st.ncomp {
            let rel = (m1[c] - m0[c]).abs() / scale[c];
            worst_mass = worst_mass.max(rel);
            ensure(rel <= 1e-12, || format!("{} component {c}: mass drift {rel:e}", p.name))?;
        }
    }
    Ok(format!("scaled free-stream residual {worst:.1e}, mass drift over 500 steps {worst_mass:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "decomposition table", Duration::from_secs(1), decomp_table),
        (2, "random-triangle decompositions", Duration::from_secs(30), decomp_random),
        (3, "BP CFL ratio bounds", Duration::from_secs(30), cfl_ratios),
        (4, "convergence orders", Duration::from_secs(600), convergence),
        (5, "OE invariances", Duration::from_secs(10), oe_invariance),
        (6, "rotational invariance", Duration::from_secs(120), rotation),
        (7, "bound preservation", Duration::from_secs(180), bp_guarantees),
        (8, "free stream and conservation", Duration::from_secs(120), free_stream_and_mass),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let t0 = Instant::now();
        let outcome = f();
        let el = t0.elapsed();
        let outcome = match outcome {
            Ok(d) if el > budget => Err(format!("{d}; took {:.1}s, budget {}s", el.as_secs_f64(), budget.as_secs())),
            o => o,
        };
        match outcome {
            Ok(d) => println!("PASS {id} {name} ({:.2}s): {d}", el.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("FAIL {id} {name} ({:.2}s): {d}", el.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
