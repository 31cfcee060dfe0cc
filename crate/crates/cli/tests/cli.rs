use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mam_cli::commands::{fit_rows, FitArgs};
use mam_cli::model::ModelFile;
use mam_cli::table::{fmt_f64, predictor_headers, read_numeric, response_headers};
use mam_core::sim::{generate_tables, stream_rng, Setting, SignalModel};
use mam_core::spd::fractional_anisotropy;
use mam_core::{Metric, SampleTable, SpdMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mam"))
        .args(args)
        .output()
        .expect("run mam")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_labeled(path: &Path, table: &SampleTable) {
    let q = table.predictors();
    let m = table.response_dim();
    let mut text = predictor_headers(q);
    text.extend(response_headers(m));
    let mut out = text.join(",") + "\n";
    for i in 0..table.len() {
        let mut row: Vec<String> = table.x(i).into_iter().map(fmt_f64).collect();
        row.extend(table.responses()[i].lower_triangle().into_iter().map(fmt_f64));
        out += &(row.join(",") + "\n");
    }
    fs::write(path, out).unwrap();
}

fn write_predictors(path: &Path, rows: &[Vec<f64>]) {
    let mut out = predictor_headers(rows[0].len()).join(",") + "\n";
    for r in rows {
        out += &(r.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",") + "\n");
    }
    fs::write(path, out).unwrap();
}

/// q = 3, m = 3 synthetic data with `n` rows.
fn synthetic(n: usize, seed: u64) -> (SampleTable, SampleTable) {
    let model = SignalModel::new(Setting::I, 3, 3).unwrap().scaled(0.4);
    generate_tables(&model, 0.15, Metric::LogCholesky, n, 200, &mut stream_rng(seed, 1)).unwrap()
}

fn random_rows(n: usize, q: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..q).map(|_| rng.random()).collect()).collect()
}

fn fit_args(data: PathBuf, out: PathBuf) -> FitArgs {
    FitArgs {
        data,
        metric: Metric::LogCholesky,
        m: 3,
        q: 3,
        bandwidths: Some(vec![0.15]),
        cv: false,
        cv_constants: None,
        folds: 5,
        seed: 0,
        rescale: false,
        grid_points: 101,
        tol: 1e-6,
        max_sweeps: 200,
        out,
    }
}

fn load(path: &Path) -> ModelFile {
    ModelFile::from_json(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn model_file_roundtrip_preserves_predictions() {
    let (train, _) = synthetic(300, 1);
    for metric in [Metric::LogCholesky, Metric::LogEuclidean] {
        let mut args = fit_args(PathBuf::new(), PathBuf::new());
        args.metric = metric;
        let xs: Vec<Vec<f64>> = (0..train.len()).map(|i| train.x(i)).collect();
        let (fitted, _) = fit_rows(&args, xs, train.responses().to_vec()).unwrap();
        let json = ModelFile::from_fit(&fitted, None).to_json().unwrap();
        let restored = ModelFile::from_json(&json).unwrap().to_fit().unwrap();
        for x in random_rows(100, 3, 2) {
            let a = fitted.predict(&x).unwrap();
            let b = restored.predict(&x).unwrap();
            assert!((a.as_matrix() - b.as_matrix()).amax() <= 1e-12 * (1.0 + a.as_matrix().amax()));
        }
    }
}

#[test]
fn fit_predict_eval_on_a_590_row_file() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(590, 3);
    let data = dir.path().join("train.csv");
    let labeled = dir.path().join("test.csv");
    let model = dir.path().join("model.json");
    write_labeled(&data, &train);
    write_labeled(&labeled, &test);

    let out = mam(&["fit", "--data", p(&data), "--metric", "log_cholesky", "--m", "3", "--q", "3", "--bandwidths", "0.15", "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("fixed-point residual"));
    let file = load(&model);
    assert_eq!((file.m, file.q, file.grid_nodes.len()), (3, 3, 101));
    let fitted = file.to_fit().unwrap();

    // predictions agree with the library on random rows
    let rows = random_rows(100, 3, 4);
    let newx = dir.path().join("newx.csv");
    let pred = dir.path().join("pred.csv");
    write_predictors(&newx, &rows);
    let out = mam(&["predict", "--model", p(&model), "--data", p(&newx), "--out", p(&pred)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let predicted = read_numeric(&pred).unwrap();
    assert_eq!(predicted.headers.last().unwrap(), "fa");
    assert_eq!(predicted.rows.len(), 100);
    for (x, row) in rows.iter().zip(&predicted.rows) {
        let want = fitted.predict(x).unwrap();
        let got = SpdMatrix::from_lower_triangle(3, &row[..6]).unwrap();
        assert!((want.as_matrix() - got.as_matrix()).amax() <= 1e-12);
        assert!((fractional_anisotropy(&got).unwrap() - row[6]).abs() < 1e-12);
    }

    // eval agrees with the library RMSE
    let metrics = dir.path().join("metrics.json");
    let out = mam(&["eval", "--model", p(&model), "--data", p(&labeled), "--out", p(&metrics)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    let rmse = report["rmse"].as_f64().unwrap();
    assert!((rmse - fitted.evaluate_rmse(&test).unwrap()).abs() < 1e-12);
    assert_eq!(report["distances"].as_array().unwrap().len(), 200);

    // predictions used as labels give zero error
    let perfect = dir.path().join("perfect.csv");
    let ys: Vec<SpdMatrix> = predicted
        .rows
        .iter()
        .map(|r| SpdMatrix::from_lower_triangle(3, &r[..6]).unwrap())
        .collect();
    write_labeled(&perfect, &SampleTable::from_rows(&rows, ys).unwrap());
    let out = mam(&["eval", "--model", p(&model), "--data", p(&perfect)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["rmse"].as_f64().unwrap() < 1e-12);

    // exported components
    let comps = dir.path().join("components.csv");
    let out = mam(&["export", "--model", p(&model), "--out", p(&comps), "--points", "21"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = read_numeric(&comps).unwrap();
    assert_eq!(table.rows.len(), 63);
    assert_eq!(table.headers.last().unwrap(), "det");
    assert!(table.rows.iter().all(|r| r[9] > 0.0));
}

#[test]
fn cross_validated_fit_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synthetic(150, 5);
    let data = dir.path().join("train.csv");
    let model = dir.path().join("model.json");
    write_labeled(&data, &train);
    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--cv", "--cv-constants", "0.25,0.5,1.0", "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("cross-validation chose"));
    let file = load(&model);
    assert!(file.bandwidths.iter().all(|&h| h == file.bandwidths[0]));
}

#[test]
fn constant_responses_give_a_flat_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    let mut text = String::from("x1,x2,y11,y21,y22\n");
    for x in random_rows(40, 2, 6) {
        text += &format!("{},{},2.0,0.5,1.5\n", fmt_f64(x[0]), fmt_f64(x[1]));
    }
    fs::write(&data, text).unwrap();
    let model = dir.path().join("model.json");
    let out = mam(&["fit", "--data", p(&data), "--metric", "log_euclidean", "--m", "2", "--q", "2", "--bandwidths", "0.3,0.2", "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let file = load(&model);
    let mu = SpdMatrix::from_lower_triangle(2, &[2.0, 0.5, 1.5]).unwrap();
    let fitted = file.to_fit().unwrap();
    assert!((fitted.mu_hat.as_matrix() - mu.as_matrix()).amax() < 1e-12);
    assert!(file.components.iter().flatten().flatten().all(|v| v.abs() < 1e-12));

    let newx = dir.path().join("x.csv");
    let pred = dir.path().join("p.csv");
    write_predictors(&newx, &random_rows(5, 2, 7));
    assert!(mam(&["predict", "--model", p(&model), "--data", p(&newx), "--out", p(&pred)]).status.success());
    let predicted = read_numeric(&pred).unwrap();
    assert_eq!(predicted.headers, ["y11", "y21", "y22"]);
    for row in &predicted.rows {
        assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12 && (row[2] - 1.5).abs() < 1e-12);
    }
}

#[test]
fn single_row_rmse_is_its_distance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("id.csv");
    let mut text = String::from("x1,y11,y21,y22,y31,y32,y33\n");
    for x in random_rows(30, 1, 8) {
        text += &format!("{},1,0,1,0,0,1\n", fmt_f64(x[0]));
    }
    fs::write(&data, text).unwrap();
    let model = dir.path().join("model.json");
    assert!(mam(&["fit", "--data", p(&data), "--m", "3", "--q", "1", "--bandwidths", "0.3", "--out", p(&model)]).status.success());
    // the Log-Cholesky distance from I to diag(e^{2δ}, 1, 1) is δ
    let delta: f64 = 0.37;
    let one = dir.path().join("one.csv");
    fs::write(&one, format!("x1,y11,y21,y22,y31,y32,y33\n0.5,{},0,1,0,0,1\n", fmt_f64((2.0 * delta).exp()))).unwrap();
    let out = mam(&["eval", "--model", p(&model), "--data", p(&one)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["rmse"].as_f64().unwrap() - delta).abs() < 1e-12);
}

#[test]
fn rescaled_predictors_are_mapped_at_prediction_time() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synthetic(120, 9);
    let shifted: Vec<Vec<f64>> = (0..train.len())
        .map(|i| train.x(i).iter().map(|v| 10.0 + 5.0 * v).collect())
        .collect();
    let data = dir.path().join("raw.csv");
    let mut text = [predictor_headers(3), response_headers(3)].concat().join(",") + "\n";
    for (x, y) in shifted.iter().zip(train.responses()) {
        let row: Vec<String> = x.iter().copied().chain(y.lower_triangle()).map(fmt_f64).collect();
        text += &(row.join(",") + "\n");
    }
    fs::write(&data, text).unwrap();
    let model = dir.path().join("model.json");
    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--bandwidths", "0.2", "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2), "unscaled data must be rejected");
    assert!(!model.exists());
    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--bandwidths", "0.2", "--rescale", "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let file = load(&model);
    let r = file.rescale.clone().unwrap();
    let fitted = file.to_fit().unwrap();

    let newx = dir.path().join("x.csv");
    let pred = dir.path().join("p.csv");
    write_predictors(&newx, &shifted[..10]);
    assert!(mam(&["predict", "--model", p(&model), "--data", p(&newx), "--out", p(&pred)]).status.success());
    let predicted = read_numeric(&pred).unwrap();
    for (x, row) in shifted.iter().zip(&predicted.rows) {
        let want = fitted.predict(&r.apply(x)).unwrap();
        assert!((want.as_matrix() - SpdMatrix::from_lower_triangle(3, &row[..6]).unwrap().as_matrix()).amax() < 1e-12);
    }
    write_predictors(&newx, &[vec![9.0, 12.0, 12.0]]);
    let out = mam(&["predict", "--model", p(&model), "--data", p(&newx), "--out", p(&pred)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synthetic(60, 10);
    let data = dir.path().join("train.csv");
    write_labeled(&data, &train);
    let model = dir.path().join("model.json");

    // non-SPD response in data row 3
    let mut lines: Vec<String> = fs::read_to_string(&data).unwrap().lines().map(str::to_string).collect();
    lines[3] = "0.5,0.5,0.5,-1,0,1,0,0,1".into();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = mam(&["fit", "--data", p(&bad), "--m", "3", "--q", "3", "--bandwidths", "0.2", "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 3"), "{}", stderr(&out));

    // neither --bandwidths nor --cv
    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(2));

    // backfitting stopped before convergence
    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--bandwidths", "0.3", "--tol", "1e-15", "--max-sweeps", "1", "--out", p(&model)]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(!model.exists());

    let out = mam(&["fit", "--data", p(&data), "--m", "3", "--q", "3", "--bandwidths", "0.3", "--out", p(&model)]);
    assert!(out.status.success());

    // eval file with the wrong number of columns
    let short = dir.path().join("short.csv");
    write_predictors(&short, &random_rows(5, 3, 11));
    let out = mam(&["eval", "--model", p(&model), "--data", p(&short)]);
    assert_eq!(out.status.code(), Some(2));

    // predictor outside [0, 1]
    write_predictors(&short, &[vec![0.5, 1.2, 0.5]]);
    let pred = dir.path().join("pred.csv");
    let out = mam(&["predict", "--model", p(&model), "--data", p(&short), "--out", p(&pred)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!pred.exists());

    let labeled = dir.path().join("test.csv");
    write_labeled(&labeled, &test);
    let out = Command::new(env!("CARGO_BIN_EXE_mam"))
        .env("MAM_THREADS", "zero")
        .args(["eval", "--model", p(&model), "--data", p(&labeled)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn simulate_args<'a>(out: &'a str, reps: &'a str) -> Vec<&'a str> {
    vec![
        "simulate", "--setting", "II", "--q", "3", "--n", "60", "--snr", "4", "--reps", reps, "--seed", "17",
        "--test-size", "50", "--calibration-draws", "2000", "--grid-points", "41", "--bandwidth-constant", "0.5", "--out", out,
    ]
}

#[test]
fn simulate_is_reproducible_and_flags_single_rep() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(mam(&simulate_args(p(&a), "3")).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mam"))
        .env("MAM_THREADS", "1")
        .args(simulate_args(p(&b), "3"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.reps.csv")).unwrap(),
        fs::read(dir.path().join("b.reps.csv")).unwrap()
    );

    let single = dir.path().join("single.json");
    let out = mam(&simulate_args(p(&single), "1"));
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&single).unwrap()).unwrap();
    assert_eq!(report["single_rep"], true);
    assert_eq!(report["rmse_se"].as_f64(), Some(0.0));
}

#[test]
fn csv_values_roundtrip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synthetic(20, 12);
    let path = dir.path().join("t.csv");
    write_labeled(&path, &train);
    let table = read_numeric(&path).unwrap();
    for (i, row) in table.rows.iter().enumerate() {
        assert_eq!(&row[..3], train.x(i).as_slice());
        assert_eq!(row[3..].to_vec(), train.responses()[i].lower_triangle());
    }
}
