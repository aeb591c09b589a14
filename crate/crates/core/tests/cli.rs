use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hvn::data::load_features;
use hvn::eval::{read_embeddings_csv, read_reports_jsonl};
use hvn::fewshot::{load_embedder, TrainHistory};
use hvn::halluc::{load_gan, GanCurves};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn hvn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvn"))
        .args(args)
        .env_remove("HVN_SEED")
        .output()
        .expect("spawn hvn")
}

fn hvn_seeded(seed: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvn"))
        .args(args)
        .env("HVN_SEED", seed)
        .output()
        .expect("spawn hvn")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    let o = hvn(&["run-all", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(hvn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hvn(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"fsl": {"lambda2": -1}}"#).unwrap();
    let o = hvn(&["run-all", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fsl.lambda2"), "{}", stderr(&o));

    let o = hvn_seeded("not-a-number", &["run-all", "--config", s(&fixture("tiny.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("HVN_SEED"));
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = hvn(&["run-all", "--config", s(&dir.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let garbage = dir.path().join("x.hvnf");
    std::fs::write(&garbage, b"not a feature file").unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"data": {{"file": {:?}}}}}"#, s(&garbage))).unwrap();
    assert_eq!(hvn(&["pretrain-gan", "--config", s(&cfg), "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn overflowing_features_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"class_count": 4, "samples_per_class": 10, "audio_dim": 4, "visual_dim": 4, "latent_dim": 2, "feature_offset": 1e300}"#,
    )
    .unwrap();
    let data = dir.path().join("huge.hvnf");
    assert!(hvn(&["gen-data", "--spec", s(&spec), "--out", s(&data)]).status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"data": {{"file": {:?}}}, "split": {{"novel_count": 1}}, "gan": {{"epochs": 1, "batch_size": 8, "generator_hidden": [4], "discriminator_hidden": [4]}}}}"#,
            s(&data)
        ),
    )
    .unwrap();
    let o = hvn(&["pretrain-gan", "--config", s(&cfg), "--out", s(&dir.path().join("gan"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn gen_data_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"class_count": 3, "samples_per_class": 5, "audio_dim": 4, "visual_dim": 3}"#).unwrap();
    for name in ["d.hvnf", "d.csv"] {
        let out = dir.path().join(name);
        assert!(hvn(&["gen-data", "--spec", s(&spec), "--out", s(&out)]).status.success());
        let ds = load_features(&out).unwrap();
        assert_eq!((ds.len(), ds.audio_dim(), ds.visual_dim()), (15, 4, 3));
    }
}

#[test]
fn phases_chain_and_outputs_reload() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = fixture("tiny.json");
    let (gan, model) = (root.join("gan"), root.join("model"));

    assert!(hvn(&["pretrain-gan", "--config", s(&cfg), "--out", s(&gan)]).status.success());
    let curves = GanCurves::read_csv(std::fs::File::open(gan.join("gan_losses.csv")).unwrap()).unwrap();
    assert_eq!(curves.epochs(), 3);
    load_gan(&gan).unwrap();

    let o = hvn(&["meta-train", "--config", s(&cfg), "--gan", s(&gan), "--out", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hist = TrainHistory::read_csv(std::fs::File::open(model.join("history.csv")).unwrap()).unwrap();
    assert_eq!(hist.epochs.len(), 2);
    load_embedder(&model).unwrap();

    let o = hvn(&["--threads", "1", "eval", "--config", s(&cfg), "--model", s(&model), "--gan", s(&gan), "--out", s(root)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("fusion_real") && table.contains("3-way 1-shot"), "{table}");
    assert_eq!(read_reports_jsonl(root.join("reports.jsonl")).unwrap().len(), 4);

    let o = hvn(&["eval", "--config", s(&cfg), "--model", s(&model), "--out", s(root)]);
    assert_eq!(o.status.code(), Some(1), "hallucination tags need --gan");

    let emb = root.join("emb.csv");
    let o = hvn(&["export-embeddings", "--config", s(&cfg), "--model", s(&model), "--gan", s(&gan), "--out", s(&emb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 3 novel classes × 24 samples × 4 sources
    assert_eq!(read_embeddings_csv(&emb).unwrap().len(), 3 * 24 * 4);

    let o = hvn(&["ablate-shots", "--config", s(&cfg), "--gan", s(&gan), "--out", s(root)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ab = read_reports_jsonl(root.join("ablation.jsonl")).unwrap();
    assert_eq!(ab.len(), 4);
    assert_eq!(ab.iter().map(|r| r.scenario.shot).collect::<Vec<_>>(), [1, 3, 1, 3]);
}

#[test]
fn run_all_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("tiny.json");
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let args = ["run-all", "--config", s(&cfg), "--out", s(&out)];
        let o = match seed {
            Some(v) => hvn_seeded(v, &args),
            None => hvn(&args),
        };
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("reports.jsonl")).unwrap()
    };
    let a = run("a", None);
    let b = run("b", None);
    assert_eq!(a, b);
    assert_ne!(run("c", Some("12345")), a);
}

#[test]
fn shipped_default_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let o = hvn(&["run-all", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports = read_reports_jsonl(dir.path().join("reports.jsonl")).unwrap();
    assert!(reports.len() >= 3);
    for r in &reports {
        assert!((0.0..=1.0).contains(&r.mean_accuracy) && r.dispersion >= 0.0);
    }
}

#[test]
fn stochastic_hallucination_is_deterministic_and_fingerprinted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mean_cfg = fixture("tiny.json");
    let mut raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mean_cfg).unwrap()).unwrap();
    raw["hallucination_draws"] = 4.into();
    let stoch_cfg = root.join("stochastic.json");
    std::fs::write(&stoch_cfg, raw.to_string()).unwrap();

    let (gan, model) = (root.join("gan"), root.join("model"));
    assert!(hvn(&["pretrain-gan", "--config", s(&mean_cfg), "--out", s(&gan)]).status.success());
    assert!(hvn(&["meta-train", "--config", s(&mean_cfg), "--out", s(&model)]).status.success());
    let eval = |cfg: &Path, name: &str| {
        let out = root.join(name);
        let o = hvn(&["eval", "--config", s(cfg), "--model", s(&model), "--gan", s(&gan), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_reports_jsonl(out.join("reports.jsonl")).unwrap()
    };
    let mean = eval(&mean_cfg, "mean");
    let a = eval(&stoch_cfg, "a");
    assert_eq!(a, eval(&stoch_cfg, "b"));
    assert_eq!(a[0].mean_accuracy, mean[0].mean_accuracy, "fusion_real does not hallucinate");
    assert_ne!(a[1].fingerprint, mean[1].fingerprint);
}
