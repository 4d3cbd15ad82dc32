//! Command-line contract tests: exit codes, artifact layout, input
//! immutability, and the degenerate sparse/dense evaluation equivalence.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_reguformer")
}

fn tiny_config(out_root: &Path, extra: &str) -> std::path::PathBuf {
    let path = out_root.join("config.toml");
    std::fs::write(
        &path,
        format!(
            r#"
seed = 7
output_dir = "{}"

[data]
source = "synthetic"

[data.synthetic]
num_wells = 4
rows_per_well = 700
seed = 13

[encoder]
num_layers = 1
num_heads = 2
dim_model = 8
dim_feedforward = 16
dropout_prob = 0.1
embedding_dim = 8

[training]
epochs = 1
n_train_pairs = 64
n_test_pairs = 32

[evaluation]
folds = 2
{extra}
"#,
            out_root.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn unknown_strategy_token_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let output = Command::new(bin())
        .args(["train", "--config", config.to_str().unwrap(), "--reg", "topZ"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("topZ"), "{stderr}");
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    // repeated depth inside one well is a data error
    std::fs::write(
        &csv,
        "well_id,formation,depth,DRHO,DENS,GR,DTC\nW1,F,1.0,1,2,3,4\nW1,F,1.0,2,3,4,5\n",
    )
    .unwrap();
    let config = tiny_config(dir.path(), "");
    let output = Command::new(bin())
        .args([
            "preprocess",
            "--config",
            config.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{output:?}");
}

#[test]
fn synthesize_then_preprocess_does_not_mutate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let status = Command::new(bin())
        .args([
            "synthesize",
            "--config",
            config.to_str().unwrap(),
            "--run-name",
            "synth",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = dir.path().join("synth/data.csv");
    let before = std::fs::read(&csv).unwrap();

    let status = Command::new(bin())
        .args([
            "preprocess",
            "--config",
            config.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
            "--run-name",
            "prep",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("prep/intervals.bin").exists());
    assert_eq!(std::fs::read(&csv).unwrap(), before, "input mutated");

    // training from the preprocessed container works too
    let status = Command::new(bin())
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--intervals",
            dir.path().join("prep/intervals.bin").to_str().unwrap(),
            "--run-name",
            "train_from_container",
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn train_writes_the_advertised_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "");
    let status = Command::new(bin())
        .args(["train", "--config", config.to_str().unwrap(), "--run-name", "t"])
        .status()
        .unwrap();
    assert!(status.success());
    for artifact in ["config.resolved", "model.bin", "head.bin", "history.csv", "report.json"] {
        assert!(
            dir.path().join("t").join(artifact).exists(),
            "{artifact} missing"
        );
    }
    let history = std::fs::read_to_string(dir.path().join("t/history.csv")).unwrap();
    assert!(history.starts_with("epoch,split,loss,prauc\n"));
}

#[test]
fn degenerate_sparse_evaluation_matches_dense() {
    let dir = tempfile::tempdir().unwrap();
    // factor large enough that every row is kept at L = 100
    let config = tiny_config(dir.path(), "\n[attention]\nregularization = \"transformer\"\nfactor = 25\n");
    let status = Command::new(bin())
        .args(["train", "--config", config.to_str().unwrap(), "--run-name", "base"])
        .status()
        .unwrap();
    assert!(status.success());
    let model_dir = dir.path().join("base");

    let evaluate = |reg: &str, name: &str| -> f64 {
        let status = Command::new(bin())
            .args([
                "evaluate",
                "--config",
                config.to_str().unwrap(),
                "--model",
                model_dir.to_str().unwrap(),
                "--reg",
                reg,
                "--run-name",
                name,
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(name).join("report.json")).unwrap(),
        )
        .unwrap();
        report["metrics"]["pr_auc"]["mean"].as_f64().unwrap()
    };
    let dense = evaluate("transformer", "eval_dense");
    let sparse = evaluate("topQ_topK", "eval_sparse");
    assert!(
        (dense - sparse).abs() <= 1e-6,
        "dense {dense} vs degenerate sparse {sparse}"
    );
}

#[test]
fn environment_variable_sets_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let env_root = dir.path().join("env_runs");
    let config = tiny_config(dir.path(), "");
    // strip output_dir from the file so the env var applies
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("output_dir"))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&config, text).unwrap();
    let status = Command::new(bin())
        .env("REGUFORMER_OUT", env_root.to_str().unwrap())
        .args([
            "synthesize",
            "--config",
            config.to_str().unwrap(),
            "--run-name",
            "s",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_root.join("s/data.csv").exists());
}
