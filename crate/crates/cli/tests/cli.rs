//! Drives the binary through every subcommand on a tiny model.

use std::path::Path;
use std::process::{Command, Output};

use viewmerge::denoiser::{DenoiserConfig, PretrainConfig, TrainConfig};
use viewmerge::experiments::ExperimentManifest;
use viewmerge::merge::MergeConfig;
use viewmerge::scenegen::{Background, ObjectId, PretrainSpec};

fn tiny_manifest() -> ExperimentManifest {
    let denoiser = DenoiserConfig {
        grid: 16,
        patch_size: 4,
        embed_dim: 16,
        mlp_dim: 32,
        n_blocks: 1,
        n_heads: 2,
        n_timesteps: 20,
        ..DenoiserConfig::default()
    };
    let quick = TrainConfig { iterations: 10, lr: 0.3, batch_size: 1, seed: 0 };
    ExperimentManifest {
        experiment_id: "cli".into(),
        seeds: vec![0],
        background: Background::Plain,
        n_object_shots: 2,
        rank: 2,
        sample_steps: 3,
        samples_per_method: 1,
        sweep_weights: vec![0.0, 1.0],
        views_per_lora: vec![1, 2],
        ablation_backgrounds: vec![Background::Plain, Background::TableEdge],
        pretrain: PretrainConfig { iterations: 20, warmup: 2, ..PretrainConfig::default() },
        pretrain_data: PretrainSpec {
            objects: vec![ObjectId::Square, ObjectId::Triangle],
            backgrounds: vec![Background::Plain],
            repeats: 1,
            grid: 16,
        },
        denoiser,
        view_train: quick.clone(),
        object_train: quick,
        merge: MergeConfig { iterations: 4, lr: 0.3, ..MergeConfig::default() },
        ..ExperimentManifest::default()
    }
}

fn viewmerge(out: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewmerge"))
        .arg("--out")
        .arg(out)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, config: &Path, args: &[&str]) -> String {
    let o = viewmerge(out, config, args);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn failing(out: &Path, config: &Path, args: &[&str]) -> String {
    let o = viewmerge(out, config, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    tiny_manifest().save(&config).unwrap();
    let out = tmp.path().join("run");
    let seed = ["--seed", "4"];

    ok(&out, &config, &["generate-data"]);
    let data: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("data/manifest.json")).unwrap()).unwrap();
    assert!(data.to_string().contains(".pgm"));

    ok(&out, &config, &["pretrain"]);
    assert!(out.join("base.model").is_file());
    assert!(out.join("pretrain_loss.csv").is_file());
    ok(&out, &config, &[&seed[..], &["train-view"]].concat());
    ok(&out, &config, &[&seed[..], &["train-object"]].concat());
    ok(&out, &config, &[&seed[..], &["merge", "--mode", "linear", "--w", "0.9"]].concat());
    assert!(out.join("linear.lora").is_file());
    ok(&out, &config, &[&seed[..], &["merge", "--mode", "gated"]].concat());
    assert!(out.join("gates.bin").is_file());
    let merge_log = std::fs::read_to_string(out.join("merge_log.csv")).unwrap();
    assert_eq!(merge_log.lines().count(), 1 + 4);

    ok(&out, &config, &[&seed[..], &["sample", "--method", "gated", "--count", "2"]].concat());
    ok(&out, &config, &[&seed[..], &["sample", "--method", "linear", "--w", "0.5"]].concat());
    assert!(out.join("samples/gated-1.pgm").is_file());
    assert!(out.join("samples/linear-0.50-0.pgm").is_file());

    ok(&out, &config, &[&seed[..], &["evaluate"]].concat());
    let eval = std::fs::read_to_string(out.join("evaluation.csv")).unwrap();
    let header = eval.lines().next().unwrap();
    for col in ["trial_id", "object", "view", "mode", "psnr", "ssim", "masked_psnr", "masked_ssim"] {
        assert!(header.split(',').any(|c| c == col), "missing column {col}");
    }
    assert_eq!(eval.lines().count(), 1 + 3);
    assert!(eval.contains(",linear-0.50,"));

    let stdout = ok(&out, &config, &[&seed[..], &["diagnose-alignment", "--trials", "20"]].concat());
    assert!(stdout.contains("exceeds baseline"));
    assert!(out.join("alignment.csv").is_file());

    for study in ["linear", "multiview", "background"] {
        ok(&out, &config, &["ablate", study]);
    }
    for f in ["linear_weights.csv", "multiview.csv", "multiview_trend.csv", "background.csv", "background_trend.csv"] {
        assert!(out.join("ablations").join(f).is_file(), "{f}");
    }

    let stdout = ok(&out, &config, &["run"]);
    assert!(stdout.contains("gated"));
    assert!(out.join("cli/summary.csv").is_file());
}

#[test]
fn failures_name_their_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    tiny_manifest().save(&config).unwrap();
    let out = tmp.path().join("empty");

    let err = failing(&out, &config, &["train-view"]);
    assert!(err.contains("stage train-view failed"), "{err}");
    let err = failing(&out, &config, &["merge", "--mode", "gated"]);
    assert!(err.contains("stage merge failed"), "{err}");
    let err = failing(&out, &config, &["evaluate"]);
    assert!(err.contains("stage evaluate failed"), "{err}");

    std::fs::write(&config, "{\"linear_weight\": 3.0}").unwrap();
    let err = failing(&out, &config, &["pretrain"]);
    assert!(err.contains("stage config failed"), "{err}");

    let mut bad = tiny_manifest();
    bad.concepts[0].novel_object = bad.concepts[0].view_object;
    bad.save(&config).unwrap();
    let err = failing(&out, &config, &["generate-data", "--concept-only"]);
    assert!(err.contains("stage data failed") && err.contains("protocol"), "{err}");

    let o = viewmerge(&out, &config, &["merge", "--mode", "average"]);
    assert!(!o.status.success());
}
