// SPDX-License-Identifier: Apache-2.0
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use sparsedag::io;
use sparsedag::sem::{Dataset, SemParams};
use sparsedag::simulate::{rng_for, sample_gaussian};
use sparsedag::{cpdag_of, mec_equal, DagStructure};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsedag"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fix2() -> SemParams {
    let mut b = DMatrix::zeros(2, 2);
    b[(0, 1)] = -0.5;
    SemParams::new(b, DVector::from_vec(vec![1.0, 0.25])).unwrap()
}

fn write_sim_config(dir: &Path, k: usize) -> std::path::PathBuf {
    let path = dir.join("sim.json");
    fs::write(
        &path,
        format!(r#"{{"p": 10, "k": {k}, "graph_kind": "ER", "n": 1000, "seed": 7}}"#),
    )
    .unwrap();
    path
}

#[test]
fn simulate_round_trips_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_sim_config(dir.path(), 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["data.csv", "b_true.csv", "omega_true.csv", "meta.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let data = io::read_dataset_csv(&a.join("data.csv")).unwrap();
    let params = io::read_params_csv(&a.join("b_true.csv"), &a.join("omega_true.csv")).unwrap();
    let sim = sparsedag::simulate::simulate(&io::read_json(&cfg).unwrap()).unwrap();
    assert_eq!(data.x(), sim.data.x());
    assert_eq!(params, sim.params);
}

#[test]
fn simulate_rejects_dense_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_sim_config(dir.path(), 6);
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"p\": 10,\n \"k\": \"two\"}").unwrap();
    let o = run(&["simulate", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

fn fit_dag(dir: &Path, data: &Path, standardize: bool) -> DagStructure {
    let cfg = dir.join(format!("fit_{standardize}.json"));
    fs::write(&cfg, format!(r#"{{"standardize": {standardize}}}"#)).unwrap();
    let out = dir.join(format!("fit_{standardize}"));
    let o = run(&["fit", s(data), "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["valid"], true);
    sparsedag::support_of(&io::read_square_csv(&out.join("b_est.csv")).unwrap(), 0.3).unwrap()
}

#[test]
fn fit_recovers_two_node_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_gaussian(&fix2(), 100_000, &mut rng_for(3, 0)).unwrap();
    let path = dir.path().join("data.csv");
    io::write_dataset_csv(&path, &data).unwrap();
    let truth = DagStructure::from_edges(2, &[(0, 1)]).unwrap();
    let raw = fit_dag(dir.path(), &path, false);
    assert!(mec_equal(&raw, &truth));
    let std = fit_dag(dir.path(), &path, true);
    assert_eq!(cpdag_of(&raw), cpdag_of(&std));
}

#[test]
fn fit_singular_covariance_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let x = DMatrix::from_fn(50, 3, |i, j| {
        if j == 2 {
            i as f64
        } else {
            ((i * (j + 3)) % 7) as f64
        }
    });
    let x = DMatrix::from_fn(
        50,
        3,
        |i, j| if j == 1 { 2.0 * x[(i, 2)] } else { x[(i, j)] },
    );
    let path = dir.path().join("d.csv");
    io::write_dataset_csv(&path, &Dataset::new(x, None).unwrap()).unwrap();
    let o = run(&["fit", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn exact_json(dir: &Path, cov: &DMatrix<f64>) -> serde_json::Value {
    let path = dir.join("cov.csv");
    io::write_matrix_csv(&path, cov).unwrap();
    let o = run(&["exact", s(&path), "--covariance", "--out", s(dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(dir.join("class.json")).unwrap()).unwrap()
}

#[test]
fn exact_class_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = sparsedag::sem::covariance_of(&fix2()).unwrap();
    let j = exact_json(dir.path(), sigma.matrix());
    assert_eq!(j["members"].as_array().unwrap().len(), 2);
    assert_eq!(j["minimal"].as_array().unwrap().len(), 2);
    assert!((j["tau"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(j["optimum"].as_array().unwrap().len(), 2);

    let mut b = DMatrix::zeros(3, 3);
    b[(0, 1)] = 1.0;
    b[(0, 2)] = 1.0;
    let fork = SemParams::new(b, DVector::from_element(3, 1.0)).unwrap();
    let j = exact_json(
        dir.path(),
        sparsedag::sem::covariance_of(&fork).unwrap().matrix(),
    );
    let minimal: Vec<usize> = j["minimal"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    assert_eq!(minimal.len(), 3);
    let truth = DagStructure::from_matrix(fork.b()).unwrap();
    for i in minimal {
        let rows = j["members"][i]["b"].as_array().unwrap();
        let m = DMatrix::from_fn(3, 3, |r, c| rows[r][c].as_f64().unwrap());
        assert!(mec_equal(&sparsedag::support_of(&m, 1e-8).unwrap(), &truth));
    }
}

#[test]
fn exact_refuses_large_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.csv");
    io::write_matrix_csv(&path, &DMatrix::identity(12, 12)).unwrap();
    let o = run(&["exact", s(&path), "--covariance", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!dir.path().join("class.json").exists());
    let data = dir.path().join("d.csv");
    io::write_dataset_csv(
        &data,
        &sample_gaussian(&fix2(), 100, &mut rng_for(1, 0)).unwrap(),
    )
    .unwrap();
    assert_eq!(
        run(&["exact", s(&data), "--out", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, entries: &[((usize, usize), f64)]| {
        let mut m = DMatrix::zeros(3, 3);
        for &(ij, v) in entries {
            m[ij] = v;
        }
        let p = dir.path().join(name);
        io::write_matrix_csv(&p, &m).unwrap();
        p
    };
    let fork = write("fork.csv", &[((0, 1), 1.0), ((0, 2), 1.0)]);
    let chain = write("chain.csv", &[((1, 0), 0.8), ((0, 2), 1.2)]);
    let cyc = write("cyc.csv", &[((0, 1), 1.0), ((1, 2), 1.0), ((2, 0), 1.0)]);
    let shd = |est: &Path| -> i64 {
        let o = run(&["eval", s(est), s(&fork)]);
        assert!(o.status.success());
        serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()["shd"]
            .as_i64()
            .unwrap()
    };
    assert_eq!(shd(&fork), 0);
    assert_eq!(shd(&chain), 0);
    assert_eq!(shd(&cyc), -1);
    let small = dir.path().join("small.csv");
    io::write_matrix_csv(&small, &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(run(&["eval", s(&small), s(&fork)]).status.code(), Some(2));
}

#[test]
fn bench_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"mode": "grid", "replicates": 2, "seed": 1, "p": [4], "k": [1], "n": 100,
            "methods": [{"name": "empty", "mode": "empty"}, {"name": "ls", "mode": "single",
              "solver": {"score": "gaussian_ls", "penalty": {"family": "l1", "lambda": 0.1}}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("bench");
    let o = run(&[
        "bench",
        "--config",
        s(&spec),
        "--threads",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(out.join("replicates.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    assert_eq!(
        fs::read_to_string(out.join("summary.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    fs::write(
        &spec,
        r#"{"mode": "grid", "replicates": 2, "methods": [{"name": "a"}, {"name": "a"}]}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["bench", "--config", s(&spec), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
}
