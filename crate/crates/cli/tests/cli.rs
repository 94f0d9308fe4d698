use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use subspectra_core::store::{load_json, write_fmat};
use subspectra_core::{DenseMatrix, FeatureMatrix, PVector, Provenance, Split};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subspectra"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn subspectra")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data + a 2-epoch run; returns (data dir, run dir).
fn small_run(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    ok(&[
        "gen-data",
        "--out",
        s(&data),
        "--n",
        "300",
        "--n-test",
        "300",
        "--dim",
        "8",
        "--classes",
        "3",
    ]);
    ok(&[
        "train",
        "--in",
        s(&data.join("train.fmat")),
        "--widths",
        "16,8",
        "--epochs",
        "2",
        "--out",
        s(root),
    ]);
    let run = std::fs::read_dir(root.join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    (data, run)
}

#[test]
fn pvector_then_angle_with_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = small_run(tmp.path());
    let feats = tmp.path().join("feats.fmat");
    ok(&[
        "extract",
        "--run",
        s(&run),
        "--in",
        s(&data.join("train.fmat")),
        "--out",
        s(&feats),
    ]);
    let p = tmp.path().join("p.json");
    ok(&[
        "pvector",
        "--in",
        s(&feats),
        "--method",
        "exact",
        "--out",
        s(&p),
    ]);
    let pv: PVector = load_json(&p).unwrap();
    let norm: f64 = pv.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert_eq!(pv.values.len(), 300);
    let out = ok(&["angle", "--a", s(&p), "--b", s(&p)]);
    assert_eq!(out.lines().next().unwrap(), "cosine=1.000000 degrees=0.00");
}

#[test]
fn randomized_pvector_agrees_with_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = small_run(tmp.path());
    let feats = tmp.path().join("feats.fmat");
    ok(&[
        "extract",
        "--run",
        s(&run),
        "--in",
        s(&data.join("train.fmat")),
        "--out",
        s(&feats),
    ]);
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    ok(&["pvector", "--in", s(&feats), "--out", s(&a)]);
    ok(&[
        "pvector",
        "--in",
        s(&feats),
        "--method",
        "randomized",
        "--seed",
        "4",
        "--oversample",
        "5",
        "--power-iters",
        "3",
        "--out",
        s(&b),
    ]);
    let out = ok(&["angle", "--a", s(&a), "--b", s(&b)]);
    let cos: f64 = out.split_whitespace().next().unwrap()["cosine=".len()..]
        .parse()
        .unwrap();
    assert!(cos >= 0.999, "{out}");
}

#[test]
fn unknown_subcommand_and_flag_exit_1_with_usage() {
    for args in [&["frobnicate"][..], &["angle", "--bogus", "x"][..]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    }
}

#[test]
fn missing_input_exits_2() {
    let out = run(&[
        "pvector",
        "--in",
        "/definitely/not/here.fmat",
        "--out",
        "/tmp/x.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn zero_matrix_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let f =
        FeatureMatrix::new(DenseMatrix::zeros(4, 3), Provenance::new("z", Split::Train)).unwrap();
    let path = tmp.path().join("z.fmat");
    write_fmat(&f, &path).unwrap();
    let out = run(&[
        "pvector",
        "--in",
        s(&path),
        "--out",
        s(&tmp.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn unsupported_report_format_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = small_run(tmp.path());
    let train = data.join("train.fmat");
    let out = run(&[
        "predict-gap",
        "--run",
        s(&run_dir),
        s(&run_dir),
        "--in",
        s(&train),
        "--out",
        s(&tmp.path().join("g.svg")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn log_log_correlation_rejects_non_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("t.csv");
    std::fs::write(&table, "a,b\n1,2\n2,3\n0,5\n4,1\n").unwrap();
    let out = run(&[
        "correlate",
        "--in",
        s(&table),
        "--x",
        "a",
        "--y",
        "b",
        "--log-log",
        "--out",
        s(&tmp.path().join("c.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = ok(&[
        "correlate",
        "--in",
        s(&table),
        "--x",
        "a",
        "--y",
        "b",
        "--out",
        s(&tmp.path().join("c.csv")),
    ]);
    assert!(out.starts_with("spearman_rho="));
}

#[test]
fn analysis_commands_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = small_run(tmp.path());
    let train = data.join("train.fmat");
    let t = tmp.path().join("t.csv");
    ok(&[
        "trajectory",
        "--run",
        s(&run_dir),
        "--in",
        s(&train),
        "--out",
        s(&t),
    ]);
    let text = std::fs::read_to_string(&t).unwrap();
    assert!(text.starts_with("run_id,k,split,epoch,iteration,degrees,cosine_abs,degenerate\n"));
    let da = tmp.path().join("da.svg");
    ok(&[
        "data-angle",
        "--run",
        s(&run_dir),
        "--in",
        s(&train),
        "--out",
        s(&da),
    ]);
    assert!(std::fs::read_to_string(&da).unwrap().starts_with("<svg"));
    let pl = tmp.path().join("pl.json");
    let out = ok(&[
        "per-layer",
        "--run",
        s(&run_dir),
        "--in",
        s(&train),
        "--out",
        s(&pl),
    ]);
    assert!(out.contains("layer0=") && out.contains("layer1="));
    let feats = tmp.path().join("f.fmat");
    ok(&[
        "extract",
        "--run",
        s(&run_dir),
        "--in",
        s(&train),
        "--epoch",
        "0",
        "--iteration",
        "0",
        "--out",
        s(&feats),
    ]);
    ok(&[
        "spectrum",
        "--in",
        s(&feats),
        "--k",
        "5",
        "--out",
        s(&tmp.path().join("s.csv")),
    ]);
    ok(&[
        "histogram",
        "--in",
        s(&feats),
        "--bins",
        "10",
        "--out",
        s(&tmp.path().join("h.csv")),
    ]);
    let gp = tmp.path().join("gp.csv");
    let out = ok(&[
        "predict-gap",
        "--run",
        s(&run_dir),
        s(&run_dir),
        "--in",
        s(&train),
        "--test",
        s(&data.join("test.fmat")),
        "--out",
        s(&gp),
    ]);
    assert!(out.contains("mi[pvector_angle]="));
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".created.json") {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_commands_produce_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for root in [a.path(), b.path()] {
        let (data, run_dir) = small_run(root);
        let feats = root.join("f.fmat");
        ok(&[
            "extract",
            "--run",
            s(&run_dir),
            "--in",
            s(&data.join("train.fmat")),
            "--out",
            s(&feats),
        ]);
        ok(&[
            "pvector",
            "--in",
            s(&feats),
            "--method",
            "randomized",
            "--seed",
            "9",
            "--oversample",
            "3",
            "--out",
            s(&root.join("p.json")),
        ]);
        ok(&[
            "data-angle",
            "--run",
            s(&run_dir),
            "--in",
            s(&data.join("train.fmat")),
            "--out",
            s(&root.join("d.svg")),
        ]);
    }
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = small_run(tmp.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("t{threads}.json"));
        let status = bin()
            .env("SUBSPECTRA_THREADS", threads)
            .args([
                "data-angle",
                "--run",
                s(&run_dir),
                "--in",
                s(&data.join("train.fmat")),
                "--out",
                s(&out),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn svd_bench_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench.json");
    let text = ok(&[
        "svd-bench",
        "--rows",
        "3000",
        "--cols",
        "64",
        "--k",
        "1",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(text.starts_with("svd-bench 3000x64"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(report["cosine_abs"].as_f64().unwrap() >= 0.999);
}
