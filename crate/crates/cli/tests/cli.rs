use std::path::Path;
use std::process::{Command, Output};

fn vistrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vistrack")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SPEC: &str = r#"{"num_clips": 2, "min_objects": 1, "num_frames": 3, "height": 64, "width": 64,
    "num_objects": 2, "category_set": [1, 2, 3, 4], "motion_model": "linear", "occlusion_rate": 0.0,
    "exit_reentry": false, "seed": 9}"#;

const TINY: &str = "model.channels = 8\nmodel.backbone_widths = [4, 6, 8]\nmodel.roi_size = 4\nmodel.mask_size = 8\n\
    model.mask_channels = 4\nmodel.latent_dim = 6\nmodel.edge_dim = 5\nmodel.hidden_dim = 7\nmodel.encoder_channels = 3\n\
    optim.iterations = 3\noptim.batch_size = 1\noptim.warmup = 1\ndetect.score_threshold = 0.0\n";

fn gen_data(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    let data = dir.join("data");
    let out = vistrack(&["gen-data", "--spec", p(&spec), "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen_data(d);
    assert!(data.join("annotations.json").is_file());
    assert!(data.join("clips/clip_0000/frames/00000.png").is_file());
    assert!(data.join("clips/clip_0001/masks/00002.png").is_file());

    let cfg = d.join("cfg.toml");
    std::fs::write(&cfg, format!("{TINY}data.train = \"{}\"\n", p(&data))).unwrap();
    let ckpt = d.join("model.ckpt");
    let out = vistrack(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--log-every", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.is_file());
    let csv = std::fs::read_to_string(d.join("model.ckpt.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let results = d.join("results.json");
    let out = vistrack(&["infer", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&results)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert!(parsed.is_array());

    for protocol in ["vis", "uvos"] {
        let report = d.join(format!("report_{protocol}.json"));
        let out = vistrack(&["eval", "--results", p(&results), "--data", p(&data), "--protocol", protocol, "--out", p(&report)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        for k in ["AP", "AP50", "AP75", "AR1", "AR10", "J_mean", "J_recall", "J_decay", "F_mean", "F_recall", "F_decay", "JF_mean"] {
            assert!(r[k].is_number(), "{k}");
        }
    }

    let viz = d.join("viz");
    let out = vistrack(&["viz", "--results", p(&results), "--data", p(&data), "--out", p(&viz)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(viz.join("clip_0001/00002.png").is_file());
    assert!(viz.join("clip_0000/legend.json").is_file());

    let abl = d.join("ablation");
    let out = vistrack(&["ablate", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&abl)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(abl.join("report_full.json").is_file());
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "optim.lr = 0.01\nmodel.colour = 3\n").unwrap();
    let out = vistrack(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.colour"));
}

#[test]
fn invalid_spec_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, SPEC.replace("\"height\": 64", "\"height\": 0")).unwrap();
    let out = vistrack(&["gen-data", "--spec", p(&spec), "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("height"));

    std::fs::write(&spec, "{\"num_clips\": ").unwrap();
    let out = vistrack(&["gen-data", "--spec", p(&spec), "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&vistrack(&["eval", "--results", "r", "--data", "d", "--protocol", "coco", "--out", "o"])), 1);
    assert_eq!(code(&vistrack(&["frobnicate"])), 1);
    assert_eq!(code(&vistrack(&["--help"])), 0);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let missing = dir.path().join("absent.ckpt");
    let out = vistrack(&["infer", "--ckpt", p(&missing), "--data", p(&data), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 2);

    let broken = dir.path().join("broken.ckpt");
    std::fs::write(&broken, b"VTCKPT\0\0garbage").unwrap();
    let out = vistrack(&["infer", "--ckpt", p(&broken), "--data", p(&data), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn results_for_unknown_clips_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let results = dir.path().join("r.json");
    std::fs::write(
        &results,
        r#"[{"clip_id": "nope", "track_id": 1, "category_id": 1, "score": 0.5, "masks": []}]"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = vistrack(&["eval", "--results", p(&results), "--data", p(&data), "--protocol", "vis", "--out", p(&report)]);
    assert_eq!(code(&out), 1);
    assert!(!report.exists());
}
