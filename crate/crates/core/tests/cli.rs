//! End-to-end checks of the command-line front end.

use std::path::Path;
use std::process::Command;

use oedg::bp::BpScheme;
use oedg::cli::{cmd_cflscan, cmd_convergence, cmd_run, ConvergenceConfig, RunConfig, ScanSource};
use oedg::oe::OeMode;

fn oedg(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_oedg")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let (code, _, _) =
        oedg(&["run", "--problem", "burgers-sin", "--k", "1", "--gen", "6,6", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(read(&out, "meta.txt").contains("status = ok"));

    let (code, _, err) = oedg(&["run", "--problem", "advection-sin", "--bp", "dcw", "--k", "3"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("bp"), "{err}");
    let (code, _, err) = oedg(&["run", "--problem", "nowhere"]);
    assert_eq!(code, 2);
    assert!(err.contains("problem"), "{err}");

    let out = dir.path().join("vacuum");
    let (code, _, err) = oedg(&[
        "run",
        "--problem",
        "near-vacuum",
        "--oe",
        "ri",
        "--bp",
        "off",
        "--gen",
        "20,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(read(&out, "meta.txt").contains("status = aborted"));
    assert!(out.join("last_good.csv").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("o");
    std::fs::write(
        &cfg,
        format!("problem = implosion\nk = 2\noe = ri\nbp = dcw\ngen = 8,8\ntend = 0.01\nout = {}\n", out.display()),
    )
    .unwrap();
    let (code, _, err) =
        oedg(&["run", "--config", cfg.to_str().unwrap(), "--k", "1", "--outputs", "0.005,0.01", "--sample", "4,4"]);
    assert_eq!(code, 0, "{err}");
    let written = read(&out, "config.txt");
    assert!(written.contains("k = 1") && written.contains("problem = implosion"), "{written}");
    for f in ["snapshot_000.csv", "snapshot_001.csv", "sample_000.csv", "timing.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let snap = read(&out, "snapshot_001.csv");
    let mut lines = snap.lines();
    assert_eq!(lines.next(), Some("cell_id,centroid_x,centroid_y,mode,component,value"));
    // 128 cells, 3 modes, 4 components
    assert_eq!(lines.count(), 128 * 3 * 4);
}

#[test]
fn zero_output_times_write_metadata_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { gen: Some([4, 4]), outputs: Some(vec![]), out: dir.path().to_owned(), ..Default::default() };
    let s = cmd_run(&cfg).unwrap();
    assert_eq!((s.steps, s.snapshots.len()), (0, 0));
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["config.txt", "meta.txt", "timing.txt"]);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            problem: "implosion".into(),
            k: 2,
            oe: OeMode::RotationInvariant,
            bp: Some(BpScheme::Optimal),
            gen: Some([10, 10]),
            jitter: 0.2,
            seed: 4,
            tend: Some(0.02),
            sample: Some([5, 5]),
            out: dir.path().to_owned(),
            ..Default::default()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_run(&cfg)).unwrap();
        ["meta.txt", "snapshot_000.csv", "sample_000.csv"].map(|f| read(dir.path(), f))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn convergence_table_is_monotone() {
    let cfg = ConvergenceConfig { levels: 3, ..Default::default() };
    let csv = cmd_convergence(&cfg).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,L1,order1,L2,order2,Linf,orderinf"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], "");
    let l1: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(l1.windows(2).all(|w| w[1] < w[0]), "{l1:?}");
    assert_eq!(cmd_convergence(&cfg).unwrap(), csv);
}

#[test]
fn cflscan_on_a_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    let mesh = oedg::harness::implosion_mesh(4, 4).unwrap();
    std::fs::write(&path, mesh.to_text()).unwrap();
    let csv = cmd_cflscan(&ScanSource::Mesh(path), Some(1)).unwrap();
    // right isosceles cells only: optimal over classical is 2.8284 for k = 1
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], ["dcw/zxs", "1", "32"]);
    let r = 0.3905243 / 0.1380712;
    for v in &row[3..] {
        assert!((v.parse::<f64>().unwrap() - r).abs() < 1e-5, "{v}");
    }
    let (code, stdout, _) = oedg(&["decomp", "--vertices", "0,0;1,0;0,1", "--k", "1", "--scheme", "dcw"]);
    assert_eq!(code, 0);
    assert!(stdout.lines().nth(1).unwrap().starts_with("custom,dcw,1,"));
}
