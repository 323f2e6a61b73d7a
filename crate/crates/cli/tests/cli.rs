use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caae_core::affect::{read_png, write_png};
use caae_core::data::synth::{render_face, sample_face};
use caae_core::networks::{Caae, NetworkConfig};
use caae_core::training::{TrainConfig, Trainer};
use rand::SeedableRng;
use serde_json::Value;

fn caae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caae")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    checkpoint: PathBuf,
    face: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("fresh.caae");
    let mut t = Trainer::<f32>::new(TrainConfig {
        network: NetworkConfig::desk(),
        ..Default::default()
    })
    .unwrap();
    t.save_checkpoint(&checkpoint, None).unwrap();
    let face = dir.path().join("face.png");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    write_png(&face, &render_face(&sample_face(&mut rng))).unwrap();
    Fixture { dir, checkpoint, face }
}

#[test]
fn out_of_range_label_is_a_usage_error() {
    let f = fixture();
    let out = f.dir.path().join("o.png");
    let o = caae(&[
        "edit", "--image", s(&f.face), "--valence", "1.5", "--arousal", "0", "--checkpoint", s(&f.checkpoint), "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--valence") && err.contains("[-1, 1]"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_flags_print_usage_and_help_succeeds() {
    let o = caae(&["edit", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(caae(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_2() {
    let f = fixture();
    let o = caae(&[
        "edit", "--image", s(&f.face), "--valence", "0", "--arousal", "0", "--checkpoint", "/nonexistent.caae", "--out",
        s(&f.dir.path().join("o.png")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn edit_is_deterministic_and_grid_tiles_all_labels() {
    let f = fixture();
    let run = |name: &str, extra: &[&str]| {
        let out = f.dir.path().join(name);
        let mut args = vec![
            "edit", "--image", s(&f.face), "--valence", "-0.8", "--arousal", "0.8", "--checkpoint", s(&f.checkpoint), "--out",
            s(&out),
        ];
        args.extend(extra);
        let o = caae(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a.png", &[]), run("b.png", &[]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = read_png(&a).unwrap();
    assert_eq!((img.height(), img.width()), (96, 96));
    let grid = run("grid.png", &["--grid"]);
    let m = image::open(grid).unwrap();
    assert_eq!((m.width(), m.height()), (672, 672));
}

#[test]
fn inspect_lists_every_tensor_of_a_fresh_model() {
    let f = fixture();
    let o = caae(&["inspect-checkpoint", s(&f.checkpoint), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let listed: Vec<(String, Vec<usize>)> = v["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| !t["name"].as_str().unwrap().starts_with("adam."))
        .map(|t| (t["name"].as_str().unwrap().to_string(), serde_json::from_value(t["shape"].clone()).unwrap()))
        .collect();
    let mut model = Caae::<f32>::new(&NetworkConfig::desk(), 0).unwrap();
    let expected: Vec<(String, Vec<usize>)> =
        model.export_state().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    assert_eq!(listed, expected);
    let text = caae(&["inspect-checkpoint", s(&f.checkpoint)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("encoder."));
}

#[test]
fn synth_train_and_evaluate_end_to_end() {
    let f = fixture();
    let data = f.dir.path().join("data");
    let o = caae(&["synth-data", "--count", "12", "--seed", "3", "--out", s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = data.join("manifest.tsv");

    let run_dir = f.dir.path().join("run");
    let train_cfg = f.dir.path().join("train.json");
    let mut cfg = serde_json::to_value(TrainConfig {
        network: NetworkConfig::probe(),
        batch_size: 4,
        identity_subset: 2,
        ..Default::default()
    })
    .unwrap();
    cfg["steps"] = 99.into();
    std::fs::write(&train_cfg, cfg.to_string()).unwrap();
    let o = caae(&[
        "train", "--manifest", s(&manifest), "--out", s(&run_dir), "--config", s(&train_cfg), "--steps", "2", "--log-every", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run_dir.join("latest.caae").exists());
    assert_eq!(std::fs::read_to_string(run_dir.join("losses.jsonl")).unwrap().lines().count(), 2);

    let report = f.dir.path().join("quant.json");
    let o = caae(&[
        "eval-quant", "--checkpoint", s(&f.checkpoint), "--manifest", s(&manifest), "--oracle", "--limit", "1", "--out",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["result"]["all"]["n"], 49);
    assert_eq!(v["result"]["extreme"]["n"], 4);

    let qual = f.dir.path().join("qual");
    let o = caae(&[
        "eval-qual", "--checkpoint", s(&f.checkpoint), "--manifest", s(&manifest), "--limit", "2", "--synthetic-regions",
        "--out-dir", s(&qual),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(qual.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["heatmaps"].as_array().unwrap().len(), 48);
    assert!(summary["localization"]["valence"].is_number());
    let montage = image::open(qual.join("montage.png")).unwrap();
    assert_eq!((montage.width(), montage.height()), (768, 672));
    assert!(qual.join("heatmap-r0-c0.png").exists() && !qual.join("heatmap-r3-c3.png").exists());

    let cfg = f.dir.path().join("clf.json");
    std::fs::write(
        &cfg,
        r#"{"stages": [[4], [4], [4, 4], [4, 4]], "fc": [8, 8, 8], "batch_size": 4, "steps": 2}"#,
    )
    .unwrap();
    let clf = f.dir.path().join("valence.caae");
    let o = caae(&[
        "train-classifier", "--axis", "valence", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&clf),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((v["train"].as_u64(), v["validation"].as_u64()), (Some(11), Some(1)));
    let o = caae(&["inspect-checkpoint", s(&clf)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("kind: caae-classifier"));
}
