use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cccert::data::{synthetic_dataset, SYNTHETIC_SHAPE};
use cccert::metrics::{read_json_report, Table};

fn run_in(dir: &Path, threads_env: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cccert"));
    cmd.current_dir(dir)
        .env_remove("CCCERT_THREADS")
        .env_remove("RUST_LOG");
    if let Some(t) = threads_env {
        cmd.env("CCCERT_THREADS", t);
    }
    cmd.args(args).output().unwrap()
}

fn cccert(dir: &Path, args: &[&str]) -> Output {
    run_in(dir, None, args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        stderr(&o)
    );
    assert!(
        o.stdout.is_empty(),
        "stdout: {}",
        String::from_utf8_lossy(&o.stdout)
    );
    o
}

fn fails_with(o: Output, code: i32, needle: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(&o));
    assert!(
        stderr(&o).contains(needle),
        "`{}` lacks `{needle}`",
        stderr(&o)
    );
}

const SMALL: &[&str] = &[
    "certify",
    "--synthetic-count",
    "20",
    "--n",
    "40",
    "--k",
    "4",
    "--era-r",
    "5",
    "--threads",
    "1",
];

/// `SMALL` followed by `extra`, where flags in `extra` replace the defaults.
fn small(extra: &[&str]) -> Vec<String> {
    let mut args = vec![SMALL[0].to_string()];
    for pair in SMALL[1..].chunks(2) {
        if !extra.contains(&pair[0]) {
            args.extend(pair.iter().map(|s| s.to_string()));
        }
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn certify(dir: &Path, extra: &[&str]) -> Output {
    let args = small(extra);
    cccert(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn read_table(path: PathBuf) -> Table {
    Table::parse_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn certify_writes_reports_and_reproduces_digest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--transform", "rotation:-10:10", "--cp-n", "50"];
    let mut first = common.to_vec();
    first.extend(["--out", "a", "--out-curves", "curves.csv"]);
    ok(certify(d, &first));
    let a = read_json_report(d.join("a.json")).unwrap();
    assert_eq!(a.samples.len(), 20);
    assert_eq!(a.config.cert.n_samples, 40);
    assert_eq!(a.config.cert.t_grid.len(), 500);
    assert!(a
        .samples
        .iter()
        .all(|s| (0.0..=1.0).contains(&s.record.bound)));
    assert!(a.era.is_some());
    let csv = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let curves = read_table(d.join("curves.csv"));
    assert_eq!(curves.columns, ["epsilon", "pca", "cpca"]);
    assert_eq!(curves.rows.len(), 3);

    // Same seed with a different worker count set through the environment.
    let mut second = small(&common);
    second.extend(["--out".into(), "b".into()]);
    let second: Vec<&str> = second.iter().map(String::as_str).collect();
    ok(run_in(d, Some("3"), &second));
    let b = read_json_report(d.join("b.json")).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );

    let mut third = common.to_vec();
    third.extend(["--seed", "1", "--out", "c"]);
    ok(certify(d, &third));
    assert_ne!(
        read_json_report(d.join("c.json")).unwrap().digest(),
        a.digest()
    );
}

#[test]
fn identity_control_certifies_every_clear_hit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(certify(
        d,
        &[
            "--transform",
            "rotation:0:0",
            "--eps",
            "1e-6",
            "--era-r",
            "0",
            "--out",
            "id",
        ],
    ));
    let r = read_json_report(d.join("id.json")).unwrap();
    assert!(r.era.is_none());
    let clear = r
        .samples
        .iter()
        .filter(|s| s.record.hit && s.record.gap_d > 1e-3)
        .count();
    assert_eq!(r.curves.pca[0].epsilon, 1e-6);
    assert!(r.curves.pca[0].value >= clear as f64 / r.samples.len() as f64);
    assert!(r.curves.pca[0].value <= r.clean_accuracy);
}

#[test]
fn composition_and_presets_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(certify(
        d,
        &[
            "--transform",
            "compose(rotation:-10:10,brightness:-0.4:0.4)",
            "--out",
            "comp",
        ],
    ));
    let r = read_json_report(d.join("comp.json")).unwrap();
    assert!(r.config.transform.starts_with("compose("));
    ok(certify(
        d,
        &["--transform", "preset:mnist-brightness", "--out", "pre"],
    ));
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = certify(d, &["--transform", "spin:-1:1"]);
    fails_with(o, 2, "known kinds");
    let o = certify(d, &["--transform", "spin:-1:1"]);
    for kind in ["rotation", "translation", "brightness", "blur", "compose"] {
        assert!(stderr(&o).contains(kind));
    }
    fails_with(certify(d, &[]), 2, "transformation is required");
    fails_with(
        certify(d, &["--transform", "rotation:-1:1", "--eps", "0.5,0.1"]),
        2,
        "--eps",
    );
    fails_with(
        certify(d, &["--transform", "rotation:-1:1", "--subset", "21"]),
        2,
        "exceeds",
    );
    fails_with(
        certify(d, &["--transform", "rotation:-1:1", "--dataset", "mnist"]),
        2,
        "--mnist-images",
    );
    fails_with(
        certify(d, &["--transform", "rotation:-1:1", "--dataset", "cifar10"]),
        2,
        "--cifar",
    );
    fails_with(
        run_in(
            d,
            Some("zero"),
            &small(&["--transform", "rotation:-1:1"])
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>(),
        ),
        2,
        "CCCERT_THREADS",
    );
    fails_with(
        cccert(
            d,
            &["report", "x.json", "--eps", "", "--out-sweep", "s.csv"],
        ),
        2,
        "empty",
    );
    fails_with(cccert(d, &["report", "x.json"]), 2, "nothing to do");
    fails_with(cccert(d, &["lab"]), 2, "nothing to do");
    fails_with(cccert(d, &["lab", "--fft", "t=1"]), 2, "n=N");
    fails_with(cccert(d, &["frobnicate"]), 2, "unrecognized subcommand");
}

#[test]
fn runtime_errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fails_with(
        certify(
            d,
            &["--transform", "rotation:-1:1", "--model", "missing.ccw"],
        ),
        1,
        "missing.ccw",
    );
    // n = 0 passes parsing but fails validation in the engine.
    let o = certify(
        d,
        &["--transform", "rotation:-1:1", "--n", "0", "--out", "never"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!d.join("never.json").exists());
}

#[test]
fn config_files_merge_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"transform": "brightness:-0.2:0.2", "n": 30, "k": 3, "synthetic-count": 12, "era-r": 0, "threads": 2}"#,
    )
    .unwrap();
    ok(cccert(
        d,
        &[
            "certify",
            "--config",
            "cfg.json",
            "--k",
            "5",
            "--out",
            "r",
            "--save-config",
            "saved.json",
        ],
    ));
    let r = read_json_report(d.join("r.json")).unwrap();
    assert_eq!(r.config.cert.n_samples, 30);
    assert_eq!(r.config.cert.k_repeats, 5);
    assert_eq!(r.samples.len(), 12);

    // The saved config reproduces the run.
    ok(cccert(
        d,
        &["certify", "--config", "saved.json", "--out", "again"],
    ));
    assert_eq!(
        read_json_report(d.join("again.json")).unwrap().digest(),
        r.digest()
    );

    std::fs::write(
        d.join("bad.json"),
        r#"{"transform": "rotation:0:1", "samples": 3}"#,
    )
    .unwrap();
    fails_with(
        cccert(d, &["certify", "--config", "bad.json"]),
        2,
        "samples",
    );
    std::fs::write(d.join("bad2.json"), r#"{"transform": "warp:0:1"}"#).unwrap();
    fails_with(
        cccert(d, &["certify", "--config", "bad2.json"]),
        2,
        "known kinds",
    );
}

#[test]
fn saved_model_and_mnist_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(certify(
        d,
        &[
            "--transform",
            "rotation:-5:5",
            "--save-model",
            "m.ccw",
            "--out",
            "builtin",
        ],
    ));
    ok(certify(
        d,
        &[
            "--transform",
            "rotation:-5:5",
            "--model",
            "m.ccw",
            "--out",
            "loaded",
        ],
    ));
    let a = read_json_report(d.join("builtin.json")).unwrap();
    let b = read_json_report(d.join("loaded.json")).unwrap();
    assert_eq!(a.samples, b.samples);

    // Two 28x28 MNIST images with a 28x28 model fail on the shape check.
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
    images.extend(std::iter::repeat_n(100u8, 2 * 784));
    std::fs::write(d.join("img"), &images).unwrap();
    std::fs::write(d.join("lbl"), [0, 0, 8, 1, 0, 0, 0, 2, 1, 2]).unwrap();
    let o = cccert(
        d,
        &[
            "certify",
            "--dataset",
            "mnist",
            "--mnist-images",
            "img",
            "--mnist-labels",
            "lbl",
            "--model",
            "m.ccw",
            "--transform",
            "rotation:-5:5",
        ],
    );
    fails_with(o, 1, "model expects");
}

#[test]
fn report_merges_runs_and_names_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for n in ["40", "20"] {
        ok(certify(
            d,
            &[
                "--transform",
                "rotation:-10:10",
                "--n",
                n,
                "--cp-n",
                "30",
                "--out",
                &format!("n{n}"),
            ],
        ));
    }
    ok(cccert(
        d,
        &[
            "report",
            "n40.json",
            "n20.json",
            "--out-sweep",
            "sweep.csv",
            "--out-pca-vs-n",
            "byn.csv",
        ],
    ));
    let sweep = read_table(d.join("sweep.csv"));
    assert_eq!(
        sweep.columns,
        ["epsilon", "pca[n40]", "cpca[n40]", "pca[n20]", "cpca[n20]"]
    );
    let by_n = read_table(d.join("byn.csv"));
    assert_eq!(
        by_n.rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        [Some(20.0), Some(40.0)]
    );

    // One report gives back its embedded curves.
    ok(cccert(d, &["report", "n40.json", "--out-sweep", "one.csv"]));
    let one = read_table(d.join("one.csv"));
    let r = read_json_report(d.join("n40.json")).unwrap();
    for (row, p) in one.rows.iter().zip(&r.curves.pca) {
        assert_eq!(row[1], Some(p.value));
    }

    std::fs::write(d.join("junk.json"), "{\"not\": \"a report\"}").unwrap();
    fails_with(
        cccert(
            d,
            &["report", "n40.json", "junk.json", "--out-sweep", "x.csv"],
        ),
        1,
        "junk.json",
    );
    ok(certify(
        d,
        &[
            "--transform",
            "rotation:-10:10",
            "--synthetic-seed",
            "9",
            "--out",
            "other",
        ],
    ));
    fails_with(
        cccert(
            d,
            &["report", "n40.json", "other.json", "--out-sweep", "x.csv"],
        ),
        1,
        "other.json",
    );
    assert!(!d.join("x.csv").exists());
}

#[test]
fn lab_emits_table_curves_and_density() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(cccert(
        d,
        &[
            "lab",
            "--yup-table",
            "yup.csv",
            "--yup-curve",
            "curve.csv",
            "--be",
            "be.csv",
            "--be-n",
            "10,100",
            "--be-points",
            "50",
            "--curve-points",
            "20",
            "--fft",
            "t=1",
            "n=5",
            "m=200",
            "--fft-out",
            "fft.csv",
        ],
    ));
    let mut rd = csv::Reader::from_path(d.join("yup.csv")).unwrap();
    let mut uniform = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[7], "ok");
        if &rec[0] == "U(0,1)" {
            uniform += 1;
            for (got, want) in [(3, 5), (4, 6)] {
                let (g, w): (f64, f64) = (rec[got].parse().unwrap(), rec[want].parse().unwrap());
                assert!((g - w).abs() / w < 0.15, "{rec:?}");
            }
        }
    }
    assert_eq!(uniform, 6);
    assert_eq!(
        std::fs::read_to_string(d.join("curve.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 15 * 20
    );

    // The t grid reaches past the overflow limit: those rows are flagged, the rest are kept.
    let mut rd = csv::Reader::from_path(d.join("be.csv")).unwrap();
    let recs: Vec<_> = rd.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 100);
    assert!(recs.iter().any(|r| &r[5] == "ok"));
    assert!(recs
        .iter()
        .any(|r| r[5].contains("overflow") && r[4].is_empty()));
    assert!(recs.iter().all(|r| &r[2] == "paper"));

    let fft = read_table(d.join("fft.csv"));
    assert_eq!(fft.columns, ["y", "mass", "lower", "upper"]);
    assert_eq!(fft.rows.len(), 5 * 199 + 1);
    let total: f64 = fft.rows.iter().map(|r| r[1].unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    ok(cccert(
        d,
        &[
            "lab",
            "--be",
            "std.csv",
            "--be-mode",
            "standard",
            "--be-n",
            "4",
            "--be-t-max",
            "10",
        ],
    ));
    let text = std::fs::read_to_string(d.join("std.csv")).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.contains(",standard,") && l.ends_with(",ok")));

    ok(cccert(
        d,
        &[
            "lab",
            "--yup-table",
            "custom.csv",
            "--row",
            "N(0,3):1000:9",
            "--row",
            "uniform:100:1.2",
        ],
    ));
    let text = std::fs::read_to_string(d.join("custom.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("\"N(0,3)\",1000,9.0,"));
}

fn python_available() -> bool {
    Command::new("python3")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

#[test]
fn bridge_model_matches_builtin_run() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // A linear softmax model shared by the builtin path and the adapter.
    let k = 3;
    let len = SYNTHETIC_SHAPE.len();
    let weight: Vec<f32> = (0..k * len)
        .map(|i| ((i * 37 % 101) as f32 / 101.0 - 0.5) * 0.3)
        .collect();
    let bias = [0.1f32, -0.05, 0.0];
    let spec = serde_json::json!({
        "num_classes": k,
        "input_shape": [SYNTHETIC_SHAPE.channels, SYNTHETIC_SHAPE.height, SYNTHETIC_SHAPE.width],
        "weight": weight.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        "bias": bias.iter().map(|&v| v as f64).collect::<Vec<_>>(),
    });
    std::fs::write(d.join("w.json"), spec.to_string()).unwrap();
    let adapter =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/fake_adapter.py");
    let command = format!(
        "python3 '{}' '{}' ok",
        adapter.display(),
        d.join("w.json").display()
    );
    ok(certify(
        d,
        &[
            "--transform",
            "brightness:-0.3:0.3",
            "--bridge",
            &command,
            "--batch-size",
            "64",
            "--out",
            "bridged",
        ],
    ));
    let r = read_json_report(d.join("bridged.json")).unwrap();
    assert!(r.model.starts_with("bridge:"));
    assert_eq!(r.samples.len(), 20);

    let (data, _) = synthetic_dataset(0, 20, SYNTHETIC_SHAPE, 3).unwrap();
    assert_eq!(r.dataset.digest, data.digest());
    fails_with(
        certify(
            d,
            &["--transform", "brightness:-0.3:0.3", "--bridge", "exit 0"],
        ),
        1,
        "closed the connection",
    );
}
