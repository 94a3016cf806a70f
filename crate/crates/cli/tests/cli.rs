use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn unlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn")).args(args).env_remove("UNLEARN_THREADS").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_sweep_config(dir: &Path, reps: usize) -> std::path::PathBuf {
    let cfg = dir.join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "[grid]\ne_count = 4\nkdp_count = 3\nhorizon_min = 1\nhorizon_max = 1\nhorizon_count = 1\n\
             [run]\nn_reps = {reps}\n"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn gen_data_shape_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = unlearn(&["gen-data", "--n", "200", "--p", "4", "--classes", "3", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 201);
    assert_eq!(lines[0], "f0,f1,f2,f3,label");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn gen_data_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    let o = unlearn(&["gen-data", "--n", "10", "--p", "2", "--classes", "1", "--out", p(&out)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn sweep_smoke_writes_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep_config(dir.path(), 1);
    let out = dir.path().join("r.csv");
    let o = unlearn(&["sweep", "--config", p(&cfg), "--out", p(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = unlearn_core::results::read_results(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.meta.n_reps == 1 && r.meta.loss_mode == "synthetic_experimental"));
}

#[test]
fn sweep_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep_config(dir.path(), 3);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(unlearn(&["sweep", "--config", p(&cfg), "--out", p(&a), "--threads", "1"]).status.success());
    assert!(unlearn(&["sweep", "--config", p(&cfg), "--out", p(&b), "--threads", "4"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[problem]\nmu = -1.0\n").unwrap();
    let o = unlearn(&["sweep", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, "[problem]\nbogus = 1\n").unwrap();
    let o = unlearn(&["sweep", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn erm_without_dataset_is_rejected() {
    let o = unlearn(&["sweep", "--loss", "erm", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theory_labels_and_boundaries() {
    let o = unlearn(&["theory", "--e-count", "2", "--kdp-count", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("e,kdp,label,trivial_boundary,inefficient_boundary,efficient_threshold"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    // kdp = 0 reduces the trivial boundary to rf_odds^2 * e0
    let tb: f64 = rows[0][3].parse().unwrap();
    assert!((tb - (0.01f64 / 0.99).powi(2) * 78.125).abs() < 1e-12);
    assert_eq!(rows[3][2], "Trivial");
    assert_eq!(rows[5][2], "Inefficient");
}

#[test]
fn verify_exit_codes() {
    let o = unlearn(&["verify", "--lemma", "gaussian_tv_dp"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS gaussian_tv_dp"));
    assert_eq!(unlearn(&["verify", "--lemma", "nope"]).status.code(), Some(2));
    assert_eq!(unlearn(&["verify", "--lemma", "binomial_tv", "--tmax", "61"]).status.code(), Some(2));
}

#[test]
fn plot_cells_and_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep_config(dir.path(), 1);
    let csv = dir.path().join("r.csv");
    assert!(unlearn(&["sweep", "--config", p(&cfg), "--out", p(&csv)]).status.success());
    let svg = dir.path().join("r.svg");
    let o = unlearn(&["plot", "--in", p(&csv), "--out", p(&svg), "--overlay-theory"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("<svg") && text.trim_end().ends_with("</svg>"));
    assert_eq!(text.matches("class=\"cell\"").count(), 12);
    assert_eq!(text.matches("class=\"boundary\"").count(), 3);
}

#[test]
fn plot_rejects_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, unlearn_core::results::RESULT_COLUMNS.join(",") + "\n").unwrap();
    let o = unlearn(&["plot", "--in", p(&csv), "--out", p(&dir.path().join("e.svg"))]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&csv, "e,kdp\n1,2\n").unwrap();
    let o = unlearn(&["plot", "--in", p(&csv), "--out", p(&dir.path().join("e.svg"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing column"));
}
