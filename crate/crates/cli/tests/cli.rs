use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kcurve::document::SpectrumDocument;
use kcurve::spectral::{Spectrum, TargetDecomposition};

fn kcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcurve"))
        .args(args)
        .env("KCURVE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kcurve(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].clone()).collect()
}

fn numbers(v: &[String]) -> Vec<f64> {
    v.iter().map(|s| s.parse().unwrap()).collect()
}

fn flat_document(dir: &Path, n: u64) -> PathBuf {
    let path = dir.join("flat.json");
    let s = Spectrum::band_limited(n).unwrap();
    let t = TargetDecomposition::new(vec![n as f64], 0.1, 0.0).unwrap();
    SpectrumDocument::new(&s, &t).unwrap().write(&path).unwrap();
    path
}

fn gaussian_plan(dir: &Path) -> PathBuf {
    let path = dir.join("plan.json");
    fs::write(
        &path,
        r#"{"data_source": {"kind": "gaussian_features", "features": 60},
            "target_source": {"kind": "isotropic", "seed": 4},
            "p_grid": [6, 12, 18, 24, 30, 36, 42, 48, 54],
            "trials": 200, "base_seed": 3}"#,
    )
    .unwrap();
    path
}

#[test]
fn analytic_sphere_spectrum_has_degeneracies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    ok(&[
        "spectrum", "--kernel", "ntk", "--depth", "2", "--analytic-sphere", "--dim", "25", "--kmax", "4",
        "--out", out.to_str().unwrap(),
    ]);
    let doc = SpectrumDocument::read(&out).unwrap();
    let s = doc.spectrum().unwrap();
    assert!(s.degeneracies().contains(&25) && s.degeneracies().contains(&324));
    assert!((s.trace() - 1.0).abs() < 1e-9, "trace {}", s.trace());
}

#[test]
fn dataset_spectrum_trace_matches_kernel_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("points.csv");
    let mut text = String::new();
    for i in 0..40 {
        let x = i as f64 / 40.0;
        text.push_str(&format!("{},{},{},{}\n", x.sin(), (3.0 * x).cos(), x * x, i % 3));
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("s.json");
    let vecs = dir.path().join("phi.bin");
    ok(&[
        "spectrum", "--kernel", "rbf", "--width", "0.5", "--data", data.to_str().unwrap(), "--labels-col",
        "last", "--out", out.to_str().unwrap(), "--eigvecs", vecs.to_str().unwrap(),
    ]);
    let doc = SpectrumDocument::read(&out).unwrap();
    // RBF has unit diagonal, so trace(K)/M = 1
    assert!((doc.spectrum().unwrap().trace() - 1.0).abs() < 1e-10);
    // three one-hot channels carrying total power 1
    let channels = doc.channel_targets().unwrap();
    assert_eq!(channels.len(), 3);
    let s = doc.spectrum().unwrap();
    let power: f64 = channels
        .iter()
        .map(|t| kcurve::spectral::total_power(&s, t).unwrap())
        .sum();
    assert!((power - 1.0).abs() < 1e-8, "{power}");
    assert!(vecs.exists());
}

#[test]
fn missing_input_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let r = kcurve(&["spectrum", "--data", "/nonexistent/digits.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0, "temporary files left behind");
}

#[test]
fn predict_flags_interpolation_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let doc = flat_document(dir.path(), 100);
    let out = dir.path().join("curve.csv");
    ok(&[
        "predict", "--spectrum", doc.to_str().unwrap(), "--lambda", "0", "--sigma2", "0.1", "--p", "0,50,100,150",
        "--out", out.to_str().unwrap(),
    ]);
    let (h, rows) = table(&out);
    let eg = column(&h, &rows, "eg");
    let diverged = column(&h, &rows, "diverged");
    // P = 0 reproduces the total target power
    assert!((eg[0].parse::<f64>().unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(diverged, ["false", "false", "true", "false"]);
    assert_eq!(eg[2], "inf");
}

#[test]
fn predict_with_ridge_is_monotone_and_stages_add_columns() {
    let dir = tempfile::tempdir().unwrap();
    let s = kcurve::spectral::power_law_spectrum(2.0, 6, 20).unwrap();
    let w: Vec<f64> = s.degeneracies().iter().map(|d| *d as f64).collect();
    let doc = dir.path().join("pl.json");
    SpectrumDocument::new(&s, &TargetDecomposition::new(w, 0.3, 0.0).unwrap())
        .unwrap()
        .write(&doc)
        .unwrap();
    let out = dir.path().join("curve.csv");
    ok(&[
        "predict", "--spectrum", doc.to_str().unwrap(), "--lambda", "0.01", "--sigma2", "0", "--p-range",
        "1:5000:40", "--stages", "2", "--out", out.to_str().unwrap(),
    ]);
    let (h, rows) = table(&out);
    let eg = numbers(&column(&h, &rows, "eg"));
    assert!(eg.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(numbers(&column(&h, &rows, "staged_eg_2")).len(), eg.len());
}

#[test]
fn verify_strict_accepts_matching_theory_and_rejects_wrong_one() {
    let dir = tempfile::tempdir().unwrap();
    let plan = gaussian_plan(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["verify", "--plan", plan.to_str().unwrap(), "--strict", "--out", a.to_str().unwrap()]);
    ok(&["verify", "--plan", plan.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (h, _) = table(&a);
    assert_eq!(
        h,
        ["P", "eg_theory", "eg_emp_mean", "eg_emp_std", "bias_emp", "variance_emp", "z_score", "failures"]
    );

    // a 20-mode spectrum cannot describe 60 features
    let wrong = flat_document(dir.path(), 20);
    let c = dir.path().join("c.csv");
    let r = kcurve(&[
        "verify", "--plan", plan.to_str().unwrap(), "--spectrum", wrong.to_str().unwrap(), "--strict", "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(c.exists());
}

#[test]
fn verify_rejects_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"data_source": {"kind": "gaussian_features", "features": 10},
            "target_source": {"kind": "isotropic", "seed": 1}, "p_grid": [5], "trials": 0}"#,
    )
    .unwrap();
    assert_eq!(kcurve(&["verify", "--plan", plan.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn phase_regions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("phase.csv");
    ok(&[
        "phase", "--lambda-max", "1.5", "--lambda-steps", "4", "--sigma2-max", "6", "--sigma2-steps", "7", "--out",
        out.to_str().unwrap(),
    ]);
    let (h, rows) = table(&out);
    let lam = numbers(&column(&h, &rows, "lambda"));
    let s2 = numbers(&column(&h, &rows, "sigma2"));
    let class = column(&h, &rows, "classification");
    let boundary = numbers(&column(&h, &rows, "boundary"));
    assert_eq!(rows.len(), 28);
    for i in 0..rows.len() {
        if lam[i] == 0.0 && s2[i] > 0.0 {
            assert_ne!(class[i], "monotone");
        }
        if s2[i] > 2.0 * lam[i] + 1.0 + 0.1 {
            assert_eq!(class[i], "single_peak", "lambda {} sigma2 {}", lam[i], s2[i]);
        }
        if s2[i] + 0.1 < boundary[i] {
            assert_eq!(class[i], "monotone");
        }
    }
}

#[test]
fn stages_table_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stages.csv");
    let curves = dir.path().join("curves.csv");
    ok(&[
        "stages", "--power-law", "2", "--dim", "100", "--kmax", "14", "--stages", "2", "--out",
        out.to_str().unwrap(), "--curves", curves.to_str().unwrap(),
    ]);
    let (h, rows) = table(&out);
    let ridge = numbers(&column(&h, &rows, "eff_ridge"));
    // truncated tail sum_{K=2..14} K^-2
    let tail: f64 = (2..=14).map(|k| 1.0 / (k * k) as f64).sum();
    assert!((ridge[0] - tail).abs() < 1e-12);
    assert_eq!(column(&h, &rows, "n_l"), ["100", "5049"]);
    let (h, rows) = table(&curves);
    let staged = numbers(&column(&h, &rows, "staged_eg"));
    let full = numbers(&column(&h, &rows, "full_eg"));
    let stage = column(&h, &rows, "stage");
    for i in 0..rows.len() {
        if stage[i] == "1" {
            assert!((staged[i] - full[i]).abs() <= 0.05 * full[i]);
        }
    }
}

#[test]
fn stages_flags_zero_weight() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("doc.json");
    let s = Spectrum::new(vec![0.5, 0.1], vec![1, 5]).unwrap();
    let t = TargetDecomposition::new(vec![1.0, 0.0], 0.0, 0.0).unwrap();
    SpectrumDocument::new(&s, &t).unwrap().write(&doc).unwrap();
    let out = dir.path().join("t.csv");
    ok(&["stages", "--spectrum", doc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let (h, rows) = table(&out);
    assert_eq!(column(&h, &rows, "status"), ["ok", "zero_weight"]);
}

#[test]
fn ntk_table_ridge_grows_with_depth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ntk.csv");
    ok(&["ntk-table", "--dim", "25", "--depths", "2,3,4", "--lmax", "2", "--out", out.to_str().unwrap()]);
    let (h, rows) = table(&out);
    let degree = column(&h, &rows, "degree");
    let ridge = numbers(&column(&h, &rows, "eff_ridge"));
    let first: Vec<f64> = (0..rows.len()).filter(|&i| degree[i] == "1").map(|i| ridge[i]).collect();
    assert_eq!(first.len(), 3);
    assert!(first[0] < first[1] && first[1] < first[2], "{first:?}");
}

#[test]
fn help_documents_defaults_and_columns() {
    for cmd in ["spectrum", "predict", "verify", "phase", "stages", "ntk-table"] {
        let out = ok(&[cmd, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--out"), "{cmd}");
    }
    let text = String::from_utf8(ok(&["predict", "--help"]).stdout).unwrap();
    assert!(text.contains("staged_eg_1") && text.contains("diverged"));
    let text = String::from_utf8(ok(&["spectrum", "--help"]).stdout).unwrap();
    assert!(text.contains("[default: 0.1]"));
}
