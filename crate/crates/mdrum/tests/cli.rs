use std::fs;
use std::path::Path;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = mdrum::run(std::iter::once("mdrum").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn forge(dir: &Path, n: &str) -> String {
    let out = s(&dir.join("forge"));
    let (code, _, err) = run(&["forge", "--n", n, "--seed", "5", "--out", &out, "--set", "forge.image_size=112"]);
    assert_eq!(code, 0, "{err}");
    out
}

const TINY: [&str; 16] = [
    "--set", "model.image_channels=8",
    "--set", "model.text_dim=8",
    "--set", "model.fusion_dim=8",
    "--set", "model.head_hidden=8",
    "--set", "model.prompt.dim=16",
    "--set", "model.decoder.dim=16",
    "--set", "model.decoder.mlp=16",
    "--set", "model.decoder.layers=1",
];

fn train(dir: &Path, data: &str, extra: &[&str]) -> (i32, String, String) {
    let out = s(&dir.join("train"));
    let mut args = vec!["train", "--data", data, "--out", &out, "--epochs", "1", "--batch-size", "4"];
    args.extend(TINY);
    args.extend(extra);
    run(&args)
}

#[test]
fn help_and_version_exit_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["forge", "train", "eval", "reason", "report"] {
        assert!(out.contains(sub), "{out}");
    }
    assert_eq!(run(&["--version"]).0, 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["forge", "--n", "many"]).0, 1);
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("x"));
    assert_eq!(run(&["forge", "--n", "4", "--out", &out, "--set", "forge.nonsense=1"]).0, 1);
    assert_eq!(run(&["forge", "--n", "4", "--out", &out, "--set", "forge.manip_rate=0.01"]).0, 1);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn forge_writes_splits_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(dir.path(), "10");
    let root = Path::new(&out);
    for f in ["train.jsonl", "test.jsonl", "stats.txt", "manifest.txt", "lexicon.txt"] {
        assert!(root.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_dir(root.join("images")).unwrap().count(), 10);
    let manifest = fs::read_to_string(root.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=5"), "{manifest}");
    let train = mdrum::dataset::load_dataset(&root.join("train.jsonl")).unwrap();
    let test = mdrum::dataset::load_dataset(&root.join("test.jsonl")).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
}

#[test]
fn rerun_replaces_previous_output_but_not_foreign_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = forge(dir.path(), "4");
    forge(dir.path(), "4");
    assert!(Path::new(&out).join("manifest.txt").is_file());
    let foreign = dir.path().join("foreign");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("keep.txt"), "x").unwrap();
    let (code, _, _) = run(&["forge", "--n", "4", "--out", &s(&foreign), "--set", "forge.image_size=112"]);
    assert_ne!(code, 0);
    assert!(foreign.join("keep.txt").is_file());
}

#[test]
fn train_eval_reason_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = forge(dir.path(), "12");
    let (code, out, err) = train(dir.path(), &data, &[]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("detection") && out.contains("reasoning"), "{out}");
    let run_dir = dir.path().join("train");
    for f in ["checkpoint/model.cfg", "loss_detection.csv", "loss_reasoning.csv", "manifest.txt"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let loss = fs::read_to_string(run_dir.join("loss_detection.csv")).unwrap();
    assert!(loss.starts_with("step,L_CE,L_LLM,L_bbox,L_GIoU,L_total"), "{loss}");

    let eval_out = s(&dir.path().join("eval"));
    let (code, _, err) = run(&[
        "eval", "--ckpt", &s(&run_dir), "--data", &data, "--out", &eval_out, "--fewshot", "0,1", "--ablation-sweep",
    ]);
    assert_eq!(code, 0, "{err}");
    let metrics = fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let ablation = fs::read_to_string(dir.path().join("eval/ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 5, "{ablation}");
    let prompts = fs::read_to_string(dir.path().join("eval/prompts.jsonl")).unwrap();
    assert!(prompts.contains("Assume you are an expert"), "{prompts}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval/report.json")).unwrap()).unwrap();
    assert!(report["detection"]["accuracy"].is_number());

    let (code, out, err) = run(&["reason", "--ckpt", &s(&run_dir), "--data", &data, "--json", "--max-len", "20", "hffn-00001"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let p = v["p"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert_eq!(v["bbox"].as_array().unwrap().len(), 4);
    // Each generated byte decodes to at most one char.
    assert!(v["reasoning"].as_str().unwrap().chars().count() <= 20);

    let (code, _, err) = run(&["reason", "--ckpt", &s(&run_dir), "--data", &data, "no-such-id"]);
    assert_eq!(code, 2);
    assert!(err.contains("no-such-id"), "{err}");
}

#[test]
fn continued_training_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = forge(dir.path(), "8");
    assert_eq!(train(dir.path(), &data, &["--stage", "detection"]).0, 0);
    let first = dir.path().join("first");
    fs::rename(dir.path().join("train"), &first).unwrap();
    let (code, _, err) = train(dir.path(), &data, &["--stage", "reasoning", "--init", &s(&first)]);
    assert_eq!(code, 0, "{err}");
    // Reasoning only moves the prompt learner.
    let a = dir.path().join("first/checkpoint/face_encoder.ckpt");
    let b = dir.path().join("train/checkpoint/face_encoder.ckpt");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = train(dir.path(), &s(&dir.path().join("absent")), &[]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = forge(dir.path(), "8");
    let (code, _, err) = train(dir.path(), &data, &["--stage", "detection", "--lr", "1e308"]);
    assert_eq!(code, 3, "{err}");
    assert!(!dir.path().join("train").exists());
}

#[test]
fn report_aggregates_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    fs::write(&a, "rater,sample,exactness,certainty,detail\nr1,s1,9,8,7\nr2,s1,10,9,8\n").unwrap();
    let b = dir.path().join("b.csv");
    fs::write(&b, "rater,sample,exactness,certainty,detail\nr1,s1,2,3,4\n").unwrap();
    let out = s(&dir.path().join("report"));
    let (code, stdout, err) = run(&["report", "--out", &out, "--ratings", &format!("ours={}", s(&a)), "--ratings", &format!("base={}", s(&b))]);
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(dir.path().join("report/table3.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("ours,9.50,8.50,7.50,8.50"), "{table}");
    assert!(lines[2].starts_with("base,2.00,3.00,4.00,3.00"), "{table}");
    assert!(stdout.contains("ours"));

    fs::write(&b, "rater,sample,exactness,certainty,detail\nr1,s1,11,3,4\n").unwrap();
    let (code, _, _) = run(&["report", "--out", &out, "--ratings", &format!("base={}", s(&b))]);
    assert_eq!(code, 2);
}
