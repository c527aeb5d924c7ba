use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_state-vad");

const TINY: &str = r#"{
  "seed": 3,
  "data": {"frame_height": 64, "frame_width": 64, "clip_len": 12, "train_clips": 3, "test_clips": 4,
           "object_size": [10, 14]},
  "model": {"widths": [8, 16, 32]},
  "train": {"epochs": 1, "batch_size": 8},
  "eval": {"batch_size": 8, "sweep_etas": [0.0, 0.002]}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let (data, ckpt) = (root.join("data"), root.join("ckpt"));

    let o = run(&["gen", "--config", p(&config), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json(&data.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert!(data.join("resolved_config.json").is_file());

    // identical regeneration, and the non-empty guard
    let again = root.join("data2");
    assert_eq!(code(&run(&["gen", "--config", p(&config), "--out", p(&again)])), 0);
    assert_eq!(fs::read(data.join("manifest.json")).unwrap(), fs::read(again.join("manifest.json")).unwrap());
    assert_eq!(code(&run(&["gen", "--config", p(&config), "--out", p(&data)])), 2);
    assert_eq!(code(&run(&["gen", "--config", p(&config), "--out", p(&data), "--force"])), 0);

    let o = run(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = json(&ckpt.join("resolved_config.json"));
    assert_eq!(resolved["model"]["context"], 3);
    assert_eq!(resolved["model"]["n_heads"], 4);
    assert_eq!(resolved["model"]["n_stacks"], 3);
    assert_eq!(resolved["train"]["frame_stride"], 1);
    let loss = fs::read_to_string(ckpt.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);

    let ev = |name: &str, extra: &[&str]| {
        let out = root.join(name);
        let mut args = vec!["eval", "--config", p(&config), "--data", p(&data), "--checkpoint", p(&ckpt), "--out"];
        args.push(out.to_str().unwrap());
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let zero = ev("eval0", &["--eta", "0"]);
    let cmp = ev("evalc", &["--eta", "0.002", "--eta-compare", "--threads", "2"]);
    assert_eq!(
        fs::read(zero.join("scores.csv")).unwrap(),
        fs::read(cmp.join("scores_plain.csv")).unwrap()
    );
    let summary = json(&cmp.join("summary.json"));
    assert!(summary["auroc_plain"].is_number() && summary["auroc_perturbed"].is_number());
    let svg = fs::read_to_string(cmp.join("roc.svg")).unwrap();
    assert!(svg.starts_with("<svg xmlns=") && svg.trim_end().ends_with("</svg>"));
    for dir in [&zero, &cmp] {
        assert!(dir.join("resolved_config.json").is_file());
    }

    let sweep = root.join("sweep");
    let o = run(&[
        "sweep-eta", "--config", p(&config), "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&sweep),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&sweep.join("sweep.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["eta"], 0.0);
    assert_eq!(rows[1]["eta"], 0.002);
    assert_eq!(rows[0]["auroc"], json(&zero.join("summary.json"))["auroc"]);

    // missing artifacts
    let nowhere = root.join("nowhere");
    assert_eq!(code(&run(&["train", "--data", p(&nowhere), "--out", p(&root.join("t"))])), 3);
    assert_eq!(
        code(&run(&["eval", "--data", p(&data), "--checkpoint", p(&nowhere), "--out", p(&root.join("e"))])),
        3
    );
    // configuration errors
    let bad = root.join("bad.json");
    fs::write(&bad, r#"{"model": {"heads": 2}}"#).unwrap();
    assert_eq!(code(&run(&["gen", "--config", p(&bad), "--out", p(&root.join("g"))])), 2);
    assert_eq!(code(&run(&["eval", "--eta", "-1", "--out", p(&root.join("g2"))])), 2);
    assert_eq!(
        code(&run(&[
            "sweep-eta", "--etas", "", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&root.join("g3"))
        ])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);

    // a diverging learning rate aborts with the numerical status
    let hot = root.join("hot.json");
    fs::write(&hot, TINY.replace(r#""batch_size": 8}"#, r#""batch_size": 8, "adam": {"lr": 1e30}}"#)).unwrap();
    let o = run(&["train", "--config", p(&hot), "--data", p(&data), "--out", p(&root.join("hot"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
