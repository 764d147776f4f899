use std::fs;
use std::path::Path;
use std::process::Command;

use fcr::io::matrix::{decode_fcrm, encode_fcrm};
use fcr::io::{export_dataset, ingest_dataset, load_dataset_dir, write_csv_matrix, RunConfig, Schema};
use fcr::simgen::{generate_synthetic, SimConfig};
use fcr::FcrError;
use ndarray::{array, Array2};
use proptest::prelude::*;
use serde_json::Value;

fn fcr_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fcr"))
}

fn run(args: &[&str]) -> (i32, Value, String) {
    let out = fcr_bin().args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let summary = serde_json::from_str(stdout.trim()).unwrap_or(Value::Null);
    (out.status.code().unwrap(), summary, String::from_utf8_lossy(&out.stderr).to_string())
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn toy_files(dir: &Path, treatment_header: &str, control: &str) -> Schema {
    write(&dir.join("y.csv"), "g1,g2\n1.5,2\n-3,4.25\n0,0.5\n");
    write(
        &dir.join("meta.csv"),
        &format!("cell,cell_line,{treatment_header}\nA,k562,{control}\nB,k562,drugA\nC,mcf7,drugA\n"),
    );
    Schema {
        matrix: "y.csv".into(),
        metadata: "meta.csv".into(),
        cell_id_column: Some("cell".into()),
        covariate_columns: vec!["cell_line".into()],
        treatment_column: "dose".into(),
        control_label: Some("vehicle".into()),
        genes: None,
        latents: None,
        mixer: None,
    }
}

#[test]
fn toy_files_ingest_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let schema = toy_files(dir.path(), "dose", "vehicle");
    let got = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap();
    assert!(got.warnings.is_empty());
    let ds = got.dataset;
    assert_eq!(ds.outcomes, array![[1.5, 2.0], [-3.0, 4.25], [0.0, 0.5]]);
    assert_eq!(ds.gene_names, vec!["g1", "g2"]);
    assert_eq!(ds.cell_ids, vec!["A", "B", "C"]);
    assert_eq!(ds.control_mask, vec![true, false, false]);
    assert_eq!(ds.covariates.name(2), "mcf7");

    let out = dir.path().join("exported");
    export_dataset(&ds, &out).unwrap();
    let again = load_dataset_dir(&out).unwrap().dataset;
    assert_eq!(again, ds);
    let out2 = dir.path().join("exported2");
    export_dataset(&again, &out2).unwrap();
    for name in ["matrix.fcrm", "metadata.csv", "genes.txt", "schema.toml"] {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(out2.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_treatment_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let schema = toy_files(dir.path(), "drug", "vehicle");
    let err = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap_err();
    assert!(matches!(&err, FcrError::Ingest { message, .. } if message.contains("`dose`")), "{err}");
}

#[test]
fn absent_control_label_warns() {
    let dir = tempfile::tempdir().unwrap();
    let schema = toy_files(dir.path(), "dose", "dmso");
    let got = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap();
    assert_eq!(got.warnings.len(), 1);
    assert!(got.dataset.control_mask.iter().all(|c| !c));
    assert_eq!(got.dataset.control_level, None);
}

#[test]
fn bad_matrix_cells_report_location() {
    let dir = tempfile::tempdir().unwrap();
    let schema = toy_files(dir.path(), "dose", "vehicle");
    write(&dir.path().join("y.csv"), "g1,g2\n1,2\n3,oops\n5,6\n");
    let err = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap_err();
    assert!(matches!(err, FcrError::Ingest { .. }));
    write(&dir.path().join("y.csv"), "1,2\n3,4\n");
    let err = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap_err();
    assert!(err.to_string().contains("2 rows"), "{err}");
}

#[test]
fn simulated_dataset_directory_is_a_fixed_point() {
    let ds = generate_synthetic(&SimConfig {
        sample_count: 120,
        ..SimConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset_dir(dir.path()).unwrap().dataset;
    // The binary matrix stores 32-bit floats.
    let narrowed = ds.outcomes.mapv(|v| v as f32 as f64);
    assert_eq!(back.outcomes, narrowed);
    assert_eq!(back.covariates, ds.covariates);
    assert_eq!(back.treatments, ds.treatments);
    assert_eq!(back.truth.as_ref().unwrap().mixer, ds.truth.as_ref().unwrap().mixer);
    let again = dir.path().join("again");
    export_dataset(&back, &again).unwrap();
    assert_eq!(load_dataset_dir(&again).unwrap().dataset, back);
}

#[test]
fn csv_and_binary_matrices_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = array![[0.25, -1.0, 3.5], [7.0, 0.0, -2.125]];
    let csv = dir.path().join("m.csv");
    write_csv_matrix(&csv, &m, None).unwrap();
    let (from_csv, header) = fcr::io::read_matrix(&csv).unwrap();
    assert_eq!(from_csv, m);
    assert!(header.is_none());
    let bytes = encode_fcrm(&m).unwrap();
    assert_eq!(&bytes[..4], b"FCRM");
    assert_eq!(bytes.len(), 16 + 4 * 6);
    assert_eq!(decode_fcrm(&bytes, &csv).unwrap(), m);
    assert!(decode_fcrm(&bytes[..bytes.len() - 1], &csv).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fcrm_round_trips_f32_values(rows in 0usize..6, cols in 0usize..6, seed in prop::collection::vec(-1e6f32..1e6, 36)) {
        let m = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 6 + j] as f64);
        let bytes = encode_fcrm(&m).unwrap();
        prop_assert_eq!(decode_fcrm(&bytes, Path::new("p")).unwrap(), m);
    }
}

#[test]
fn config_layers_and_rejections() {
    let mut cfg = RunConfig::profile("sciplex").unwrap();
    assert_eq!((cfg.model.dims.n_x, cfg.model.dims.n_tx, cfg.model.dims.n_t), (32, 64, 32));
    assert_eq!((cfg.train.weights.sim, cfg.train.weights.ct, cfg.train.weights.dis), (3.0, 3.0, 5.0));
    cfg.apply_override("train.epochs=7").unwrap();
    assert_eq!(cfg.train.epochs, 7);
    cfg.apply_text("[train]\nlr = 0.01\n[model]\nhidden = 9\n", Path::new("inline")).unwrap();
    assert_eq!(cfg.train.lr, 0.01);
    assert_eq!(cfg.model.arch.hidden, 9);
    cfg.set_seed(5);
    assert_eq!((cfg.sim.seed, cfg.model.seed, cfg.train.seed, cfg.eval.seed), (5, 5, 5, 5));

    let round = {
        let mut fresh = RunConfig::default();
        fresh.apply_text(&cfg.to_toml(), Path::new("round")).unwrap();
        fresh
    };
    assert_eq!(round, cfg);

    for bad in ["train.nope=1", "train.epochs=\"many\"", "nosection=1", "train.lr=-1"] {
        let mut c = RunConfig::default();
        let res = c.apply_override(bad).and_then(|_| c.validate());
        assert!(matches!(res, Err(FcrError::Config(_))), "{bad}");
    }
    assert!(RunConfig::profile("unknown").is_err());
    for name in ["synthetic", "sciplex", "multiplex_tram", "multiplex_79"] {
        RunConfig::profile(name).unwrap().validate().unwrap();
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["frobnicate"]).0, 1);
    let (code, _, err) = run(&["simulate", "--set", "sim.bogus=1", "--out-dir", d]);
    assert_eq!(code, 1);
    assert_eq!(serde_json::from_str::<Value>(err.trim()).unwrap()["error"], "config");

    let data = dir.path().join("data");
    let (code, summary, _) = run(&["simulate", "--set", "sim.sample_count=200", "--out-dir", data.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(summary["cells"], 200);
    let (code, _, err) = run(&[
        "predict",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        dir.path().join("absent.fcrc").to_str().unwrap(),
        "--out-dir",
        d,
    ]);
    assert_eq!(code, 1, "{err}");

    // A huge learning rate diverges: outputs are written and the exit code is 2.
    let run_dir = dir.path().join("diverged");
    let (code, _, _) = run(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--set",
        "train.lr=1e6",
        "--set",
        "train.epochs=30",
        "--set",
        "model.hidden=8",
        "--set",
        "model.depth=1",
        "--set",
        "train.batch_size=64",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    let status: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("status.json")).unwrap()).unwrap();
    assert_eq!(status["status"], "diverged");
}

#[test]
fn default_simulation_has_five_thousand_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&["simulate", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let ds = load_dataset_dir(dir.path()).unwrap().dataset;
    assert_eq!((ds.n_cells(), ds.n_genes()), (5000, 96));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let small = [
        "--set", "sim.sample_count=300", "--set", "sim.y_dim=12", "--set", "model.hidden=8", "--set",
        "model.depth=1", "--set", "model.embed_width=4", "--set", "train.epochs=2", "--set",
        "train.batch_size=100", "--set", "train.disc_steps=1", "--set", "eval.kci_samples=60", "--set",
        "eval.kci_repeats=2", "--set", "eval.hsic_samples=60", "--set", "eval.hsic_permutations=10",
        "--seed", "3",
    ];
    let with = |cmd: &[&str]| {
        let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
        v.extend(small.iter().map(|s| s.to_string()));
        v
    };
    let call = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, summary, err) = run(&refs);
        assert_eq!(code, 0, "{err}");
        summary
    };
    call(with(&["simulate", "--out-dir", &p("data")]));
    call(with(&["train", "--dataset", &p("data"), "--out-dir", &p("run")]));
    for f in ["model.fcrc", "splits.json", "status.json", "history.jsonl", "config.toml"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let ckpt = p("run/model.fcrc");
    call(with(&["evaluate", "--dataset", &p("data"), "--checkpoint", &ckpt, "--out-dir", &p("eval")]));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert!(metrics.get("mcc").is_some());
    call(with(&["predict", "--dataset", &p("data"), "--checkpoint", &ckpt, "--out-dir", &p("pred")]));
    let (preds, header) = fcr::io::read_matrix(&dir.path().join("pred/predictions.csv")).unwrap();
    assert_eq!(preds.ncols(), 12);
    assert_eq!(header.unwrap().len(), 12);
    let index = fs::read_to_string(dir.path().join("pred/predictions_index.csv")).unwrap();
    assert_eq!(index.lines().count(), preds.nrows() + 1);
    call(with(&["export-embeddings", "--dataset", &p("data"), "--checkpoint", &ckpt, "--out-dir", &p("emb")]));
    let emb = fs::read_to_string(dir.path().join("emb/embeddings.csv")).unwrap();
    assert_eq!(emb.lines().count(), 301);
    assert!(emb.lines().next().unwrap().starts_with("cell_id,covariate,treatment,z_x"));
    let rank = call(with(&["rank-check", "--out-dir", &p("rank")]));
    assert!(rank.is_object());
    assert!(dir.path().join("rank/rank.json").exists());
}

#[test]
fn gridsearch_command_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("grid");
    let (code, _, _) = run(&["simulate", "--set", "sim.sample_count=150", "--set", "sim.y_dim=8", "--out-dir", data.to_str().unwrap()]);
    assert_eq!(code, 0);
    let args = [
        "gridsearch", "--dataset", data.to_str().unwrap(), "--set", "grid.w_sim=[0.5, 1.0]", "--set",
        "grid.w_ct=[1.0]", "--set", "grid.w_dis=[1.0]", "--set", "model.hidden=8", "--set", "model.depth=1",
        "--set", "train.epochs=1", "--set", "train.disc_steps=1", "--out-dir", out.to_str().unwrap(),
    ];
    assert_eq!(run(&args).0, 0);
    let first = fs::read_to_string(out.join("grid.json")).unwrap();
    assert_eq!(run(&args).0, 0);
    let second: Value = serde_json::from_str(&fs::read_to_string(out.join("grid.json")).unwrap()).unwrap();
    let first: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(second["cache_hits"], 2);
    assert_eq!(second["ranked"], first["ranked"]);
}

#[test]
fn schema_rejects_unknown_fields() {
    let text = "matrix = \"m\"\nmetadata = \"x\"\ncovariate_columns = [\"a\"]\ntreatment_column = \"t\"\nextra = 1\n";
    assert!(matches!(Schema::parse(text, Path::new("s")), Err(FcrError::Format { .. })));
}

#[test]
fn multiple_covariate_columns_are_joined() {
    let dir = tempfile::tempdir().unwrap();
    let mut schema = toy_files(dir.path(), "dose", "vehicle");
    write(
        &dir.path().join("meta.csv"),
        "cell,cell_line,donor,dose\nA,k562,d1,vehicle\nB,k562,d2,drugA\nC,mcf7,d1,drugA\n",
    );
    schema.covariate_columns = vec!["cell_line".into(), "donor".into()];
    let ds = ingest_dataset(&dir.path().join("y.csv"), &dir.path().join("meta.csv"), &schema).unwrap().dataset;
    assert_eq!(ds.covariates.name(1), "k562|d2");
    assert_eq!(ds.covariates.n_levels(), 3);
}
