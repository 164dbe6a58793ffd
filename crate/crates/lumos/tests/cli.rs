use std::fs;
use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
[generator]
n_users = 200
n_days = 120

[model]
d_model = 16
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
dim_ff = 16
dim_user_embed = 8
dim_supply_embed = 8
dim_static_embed = 8
t_hist = 21
t_fut = 7

[training]
learning_rate = 3e-3
batch_size = 16
max_epochs = 2

[paths]
n_partitions = 6
val_partitions = 1
test_partitions = 1
"#;

fn lumos(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lumos"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = lumos(args, cwd);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn generate_train_eval_and_analysis_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    let cfg = ["--config", "run.toml"];
    ok(&[&cfg[..], &["--out", "data", "generate"]].concat(), d);
    assert!(d.join("data/train/manifest.json").is_file());
    assert!(d.join("data/run_manifest.json").is_file());

    // An untrained model already exports a row-stochastic T_fut x T_hist matrix.
    ok(&[&cfg[..], &["--data", "data", "--out", "attn0", "export-attention"]].concat(), d);
    let w = read_csv(&d.join("attn0/attention.csv"));
    assert_eq!(w.len(), 7);
    for row in &w {
        assert_eq!(row.len(), 21);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|v| *v >= 0.0));
    }

    ok(&[&cfg[..], &["--data", "data", "--out", "run", "train"]].concat(), d);
    let history = fs::read_to_string(d.join("run/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    for f in ["best.ckpt", "last.ckpt", "run_manifest.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["scalers"]["user"].is_array());

    let eval = ok(&[&cfg[..], &["--data", "data", "--out", "run", "eval"]].concat(), d);
    let report: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(report["metrics"]["active"]["metric"], "roc_auc");

    ok(&[&cfg[..], &["--data", "data", "--out", "run", "embed", "--strategy", "mean"]].concat(), d);
    let line = fs::read_to_string(d.join("run/embeddings.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(first["vector"].as_array().unwrap().len(), 16);
    assert_eq!(first["strategy"], "mean");
    assert!(first["user_id"].is_string() && first["as_of_day"].is_i64());

    ok(&[&cfg[..], &["--data", "data", "--out", "run", "probe", "--strategy", "exp", "--lambda", "10"]].concat(), d);
    assert!(d.join("run/probe.json").is_file());
    ok(&[&cfg[..], &["--data", "data", "--out", "run", "export-attention", "--layer", "0"]].concat(), d);
    let bad = lumos(&[&cfg[..], &["--data", "data", "--out", "run", "export-attention", "--layer", "3"]].concat(), d);
    assert!(!bad.status.success());
}

#[test]
fn ablate_supply_writes_the_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL.replace("max_epochs = 2", "max_epochs = 1")).unwrap();
    ok(&["--config", "run.toml", "--out", "data", "generate"], d);
    ok(&["--config", "run.toml", "--data", "data", "--out", "abl", "ablate-supply"], d);
    let text = fs::read_to_string(d.join("abl/supply_ablation.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let labels: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(
        labels,
        [
            "Full Model (Past + Future Supply)",
            "No Future Supply",
            "No Past Supply",
            "No Supply (Past or Future)"
        ]
    );
}

#[test]
fn ablate_positional_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL.replace("max_epochs = 2", "max_epochs = 1")).unwrap();
    ok(&["--config", "run.toml", "--out", "data", "generate"], d);
    ok(&["--config", "run.toml", "--data", "data", "--out", "pos", "ablate-positional"], d);
    let text = fs::read_to_string(d.join("pos/positional_ablation.csv")).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["learned", "sinusoidal", "absolute"]);
}

#[test]
fn fit_scaling_reads_x_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows: String = [10.0f64, 100.0, 1000.0]
        .iter()
        .map(|x| format!("{x},{}\n", 0.507 * x.powf(-0.048)))
        .collect();
    fs::write(d.join("pts.csv"), format!("x,loss\n{rows}")).unwrap();
    let out = ok(&["--out", "fit", "fit-scaling", "--input", "pts.csv"], d);
    let fit: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((fit["exponent_alpha"].as_f64().unwrap() + 0.048).abs() < 1e-9);
    fs::write(d.join("bad.csv"), "n,l\n1,2\n").unwrap();
    assert!(!lumos(&["--out", "fit", "fit-scaling", "--input", "bad.csv"], d).status.success());
}

#[test]
fn bad_configs_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[modle]\nd_model = 3\n").unwrap();
    let o = lumos(&["--config", "bad.toml", "--out", "data", "generate"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("modle"));
    assert!(!d.join("data").exists());
    fs::write(d.join("heads.toml"), "[model]\nn_heads = 7\n").unwrap();
    assert!(!lumos(&["--config", "heads.toml", "generate"], d).status.success());
    assert!(!lumos(&["train"], d).status.success());
}

#[test]
fn seed_flag_determines_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), SMALL).unwrap();
    ok(&["--config", "run.toml", "--seed", "9", "--out", "a", "generate"], d);
    ok(&["--config", "run.toml", "--seed", "9", "--out", "b", "generate"], d);
    ok(&["--config", "run.toml", "--seed", "10", "--out", "c", "generate"], d);
    let part = |root: &str| fs::read(d.join(root).join("train/part-00000.jsonl")).unwrap();
    assert_eq!(part("a"), part("b"));
    assert_ne!(part("a"), part("c"));
}
