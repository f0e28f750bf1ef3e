use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use advsticker::config::{parse_config, CONFIG_ECHO};
use advsticker::experiment::{Summary, COMPARISON_CSV, PLOT_SVG, REPORT_CSV, STICKER_PNG, SUMMARY_CSV, TRACE_CSV};
use advsticker::io::read_csv;

const TINY: &str = r#"
[run]
eval_interval = 2

[schedule]
epochs = [2, 2, 2]

[optimizer]
batch_size = 4

[sampling]
train_pool = 24
trace_pool = 8
heldout_pool = 6

[geometry]
face_size = 48
sticker_height = 12
sticker_width = 30

[faces]
variants = 2

[model]
embedding_dim = 16
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsticker"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn attack_writes_every_artifact_and_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = cli(&[
        "attack",
        &cfg,
        "--algorithm",
        "eot",
        "--iterations",
        "5",
        "--output-dir",
        out.to_str().unwrap(),
        "--set",
        "optimizer.learning_rate=0.05",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [CONFIG_ECHO, TRACE_CSV, REPORT_CSV, SUMMARY_CSV, STICKER_PNG, PLOT_SVG] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let echoed = parse_config(&out.join(CONFIG_ECHO)).unwrap();
    assert_eq!(echoed.total_iterations(), 5);
    assert_eq!(echoed.optimizer.learning_rate, 0.05);
    let summary: Vec<Summary> = read_csv(&out.join(SUMMARY_CSV)).unwrap();
    assert_eq!(summary[0].iterations, 5);
}

#[test]
fn versioned_runs_get_fresh_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    for _ in 0..2 {
        let o = cli(&["attack", &cfg, "--versioned", "--output-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert!(out.join("v1").join(SUMMARY_CSV).is_file());
    assert!(out.join("v2").join(SUMMARY_CSV).is_file());
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let reversed = write_config(dir.path(), "[sticker_transform]\nrotation = [3.0, -3.0]\n");
    let o = cli(&["attack", &reversed]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sticker_transform.rotation") && stderr(&o).contains("min > max"));

    let unknown = write_config(dir.path(), "[run]\nspeed = 3\n");
    let o = cli(&["attack", &unknown]);
    assert!(stderr(&o).contains("run.speed") && stderr(&o).contains("unknown key"));

    let partial = write_config(dir.path(), "[seeds]\nmodel = 3\n");
    let o = cli(&["attack", &partial]);
    assert!(stderr(&o).contains("seeds.") && stderr(&o).contains("missing seed"));

    let ok = write_config(dir.path(), TINY);
    let o = cli(&["attack", &ok, "--set", "sampling.grid_levels=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sampling.grid_levels"));
}

#[test]
fn single_seed_override_keeps_the_other_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = cli(&["attack", &cfg, "--set", "seeds.init=9", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = parse_config(&out.join(CONFIG_ECHO)).unwrap();
    assert_eq!(echoed.seeds.init, 9);
    assert_eq!(echoed.seeds.batch, advsticker::config::Seeds::default().batch);
}

#[test]
fn report_recomputes_the_stored_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    assert!(cli(&["attack", &cfg, "--output-dir", out.to_str().unwrap()]).status.success());
    let table = dir.path().join("combined.csv");
    let o = cli(&["report", out.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stored: Vec<Summary> = read_csv(&out.join(SUMMARY_CSV)).unwrap();
    let text = fs::read_to_string(&table).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("run,mode,algorithm"));
    let mut rdr = csv::Reader::from_path(&table).unwrap();
    let row = rdr.records().next().unwrap().unwrap();
    let col = |name: &str| header.split(',').position(|h| h == name).unwrap();
    let mean_cos_adv: f64 = row[col("mean_cos_adv")].parse().unwrap();
    assert_eq!(mean_cos_adv, stored[0].mean_cos_adv);
}

#[test]
fn suite_writes_a_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("suite");
    let o = cli(&[
        "suite",
        &cfg,
        "--axis",
        "optimizer",
        "--replicates",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join(COMPARISON_CSV)).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains(",caa,") && table.contains(",eot,"));
    assert!(out.join(PLOT_SVG).is_file());
}

#[test]
fn d2p_train_reports_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("mapper.bin");
    let rows = dir.path().join("fidelity.csv");
    let o = cli(&[
        "d2p-train",
        "--epochs",
        "300",
        "--hidden",
        "16",
        "--noiseless",
        "--stickers",
        "3",
        "--out",
        weights.to_str().unwrap(),
        "--csv",
        rows.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("training mse"));
    assert!(weights.is_file());
    assert_eq!(fs::read_to_string(&rows).unwrap().lines().count(), 4);
}

#[test]
fn grad_check_prints_one_line_per_check() {
    let o = cli(&["grad-check", "--seeds", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), advsticker::checks::CHECK_NAMES.len());
}
