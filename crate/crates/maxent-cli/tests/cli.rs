//! End-to-end behavior of the binary: exit codes, error messages, and the
//! documented output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maxent"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

struct Scratch {
    dir: PathBuf,
}

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("maxent-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self { dir }
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn uniform_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| format!("{}\n", rng.gen_range(-1.0..1.0)))
        .collect()
}

#[test]
fn fit_smoke_path_reports_unit_mass() {
    let scratch = Scratch::new("smoke");
    let csv = scratch.file("three.csv", "-1\n0\n1\n");
    let out = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:-2,2",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lambda_hat"), "stdout: {stdout}");
    assert!(
        stdout.contains("density mass on fit grid: 1.0000000000"),
        "stdout: {stdout}"
    );
}

#[test]
fn sweep_reports_selected_degree_on_uniform_data() {
    let scratch = Scratch::new("sweep");
    let csv = scratch.file("uniform.csv", &uniform_csv(5000, 11));
    let out = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--sweep",
        "2,4,6",
        "--support",
        "box:-1,1",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selected A=2"), "stdout: {stdout}");
}

#[test]
fn malformed_csv_row_fails_with_line_number() {
    let scratch = Scratch::new("badrow");
    let csv = scratch.file("bad.csv", "1.0\n2.0\nnot-a-number\n");
    let out = run(&["fit", csv.to_str().unwrap(), "--degree", "2"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn data_outside_support_is_rejected_with_row() {
    let scratch = Scratch::new("outside");
    let csv = scratch.file("d.csv", "0.5\n3.5\n");
    let out = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:0,1",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 1"), "stderr: {stderr}");
}

#[test]
fn odd_degree_needs_explicit_flag() {
    let scratch = Scratch::new("odd");
    let csv = scratch.file("d.csv", &uniform_csv(100, 3));
    let refused = run(&["fit", csv.to_str().unwrap(), "--degree", "3"]);
    assert!(!refused.status.success());
    let allowed = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "3",
        "--allow-odd",
    ]);
    assert!(
        allowed.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&allowed.stderr)
    );
}

#[test]
fn eval_matches_saved_model_and_warns_outside() {
    let scratch = Scratch::new("eval");
    let csv = scratch.file("d.csv", &uniform_csv(2000, 5));
    let model = scratch.path("m.json");
    let fit = run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:-1,1",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(fit.status.success());

    let inside = run(&["eval", model.to_str().unwrap(), "--at", "0.25"]);
    assert!(inside.status.success());
    let value: f64 = String::from_utf8_lossy(&inside.stdout)
        .trim()
        .parse()
        .unwrap();
    assert!(value > 0.3 && value < 0.7, "uniform-ish density, got {value}");

    let outside = run(&["eval", model.to_str().unwrap(), "--at", "4.0"]);
    assert!(outside.status.success());
    assert_eq!(String::from_utf8_lossy(&outside.stdout).trim(), "0.0");
    assert!(String::from_utf8_lossy(&outside.stderr).contains("outside"));
}

#[test]
fn eval_table_integrates_to_one_by_trapezoid() {
    let scratch = Scratch::new("table");
    let csv = scratch.file("d.csv", &uniform_csv(3000, 8));
    let model = scratch.path("m.json");
    assert!(run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "4",
        "--support",
        "box:-1,1",
        "--out",
        model.to_str().unwrap(),
    ])
    .status
    .success());
    let table = run(&["eval", model.to_str().unwrap(), "--table", "101"]);
    assert!(table.status.success());
    let text = String::from_utf8_lossy(&table.stdout);
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|line| {
            let (x, f) = line.split_once(',').unwrap();
            (x.parse().unwrap(), f.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101);
    let mut mass = 0.0;
    for pair in rows.windows(2) {
        mass += 0.5 * (pair[1].0 - pair[0].0) * (pair[0].1 + pair[1].1);
    }
    assert!((mass - 1.0).abs() < 1e-3, "trapezoid mass {mass}");
}

#[test]
fn conditional_expectation_of_uniform_joint() {
    let scratch = Scratch::new("cond");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let csv_text: String = (0..3000)
        .map(|_| {
            format!(
                "{},{}\n",
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0)
            )
        })
        .collect();
    let csv = scratch.file("xy.csv", &csv_text);
    let model = scratch.path("m.json");
    assert!(run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:0,1;0,1",
        "--out",
        model.to_str().unwrap(),
    ])
    .status
    .success());

    let expect = run(&["conditional", model.to_str().unwrap(), "--given", "0.3", "--expect"]);
    assert!(expect.status.success());
    let value: f64 = String::from_utf8_lossy(&expect.stdout)
        .trim()
        .parse()
        .unwrap();
    assert!((value - 0.5).abs() < 0.05, "E[Y|X=0.3] = {value}");

    let outside = run(&["conditional", model.to_str().unwrap(), "--given", "1.4", "--expect"]);
    assert!(!outside.status.success());
    let stderr = String::from_utf8_lossy(&outside.stderr);
    assert!(stderr.contains("[0, 1]"), "stderr: {stderr}");
}

#[test]
fn compare_requires_matching_fingerprint() {
    let scratch = Scratch::new("fingerprint");
    let csv = scratch.file("d.csv", &uniform_csv(500, 2));
    let model = scratch.path("m.json");
    assert!(run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:-1,1",
        "--out",
        model.to_str().unwrap(),
    ])
    .status
    .success());

    let other = scratch.file("other.csv", &uniform_csv(500, 3));
    let mismatch = run(&[
        "compare",
        "--data",
        other.to_str().unwrap(),
        "--benchmark",
        model.to_str().unwrap(),
    ]);
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("does not match"));

    let ok = run(&[
        "compare",
        "--data",
        csv.to_str().unwrap(),
        "--benchmark",
        model.to_str().unwrap(),
    ]);
    assert!(ok.status.success());
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("\"posterior\": 1.0"), "stdout: {stdout}");
}

#[test]
fn compare_conditional_requires_marginal_flag_pairing() {
    let out = bin()
        .args(["compare", "--data", "x.csv", "--benchmark", "m.json", "--conditional"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--marginal"), "stderr: {stderr}");
}

#[test]
fn model_file_is_loadable_json_with_expected_fields() {
    let scratch = Scratch::new("schema");
    let csv = scratch.file("d.csv", &uniform_csv(200, 17));
    let model = scratch.path("m.json");
    assert!(run(&[
        "fit",
        csv.to_str().unwrap(),
        "--degree",
        "2",
        "--support",
        "box:-1,1",
        "--out",
        model.to_str().unwrap(),
    ])
    .status
    .success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&model)).unwrap()).unwrap();
    for field in [
        "schema_version",
        "metadata",
        "layout",
        "basis",
        "support",
        "scaling",
        "lambda_hat",
        "log_partition",
        "h_min",
        "grid",
        "solver",
        "data_fingerprint",
    ] {
        assert!(parsed.get(field).is_some(), "missing field {field}");
    }
    assert_eq!(parsed["layout"], "y-last");
    assert_eq!(parsed["data_fingerprint"]["n_rows"], 200);
}
