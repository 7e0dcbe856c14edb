use std::fs;
use std::path::Path;

use mdrum::dataset::{load_dataset, save_dataset};
use mdrum::AppError;
use mdrum_core::data::Dataset;
use mdrum_core::forge::{forge_dataset, ForgeConfig, Lexicon};
use proptest::prelude::*;

fn forged(n: usize, seed: u64) -> Dataset {
    let cfg = ForgeConfig {
        n_samples: n,
        manip_rate: 0.5,
        multimodal_rate: 0.25,
        image_size: 112,
        seed,
        ..ForgeConfig::default()
    };
    forge_dataset(&cfg, &Lexicon::default()).unwrap()
}

fn saved(dir: &Path, ds: &Dataset) -> std::path::PathBuf {
    let path = dir.join("set.jsonl");
    save_dataset(ds, &path).unwrap();
    path
}

fn data_error(path: &Path) -> String {
    match load_dataset(path) {
        Err(e @ AppError::Data(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.to_string()
        }
        other => panic!("expected a data error, got {other:?}"),
    }
}

fn rewrite_line(path: &Path, index: usize, f: impl Fn(&mut serde_json::Value)) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[index]).unwrap();
    f(&mut v);
    lines[index] = v.to_string();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn save_then_load_is_identity(seed in 0u64..1000, n in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let ds = forged(n, seed);
        let path = saved(dir.path(), &ds);
        prop_assert_eq!(load_dataset(&path).unwrap(), ds.clone());
        // Saving again gives the same bytes.
        let first = fs::read(&path).unwrap();
        save_dataset(&ds, &path).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), first);
    }
}

#[test]
fn unknown_key_names_record_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &forged(3, 1));
    rewrite_line(&path, 1, |v| {
        v["extra"] = 1.into();
    });
    let msg = data_error(&path);
    assert!(msg.contains("record 1") && msg.contains("field extra"), "{msg}");
}

#[test]
fn bad_label_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &forged(3, 2));
    rewrite_line(&path, 2, |v| {
        v["label"] = 7.into();
    });
    let msg = data_error(&path);
    assert!(msg.contains("record 2") && msg.contains("field label"), "{msg}");
}

#[test]
fn inverted_box_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &forged(2, 3));
    rewrite_line(&path, 0, |v| {
        v["face_bbox"] = serde_json::json!([0.6, 0.2, 0.4, 0.5]);
    });
    assert!(data_error(&path).contains("record 0"));
}

#[test]
fn missing_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ds = forged(2, 4);
    let path = saved(dir.path(), &ds);
    fs::remove_file(dir.path().join("images").join(format!("{}.png", ds.samples[1].id))).unwrap();
    let msg = data_error(&path);
    assert!(msg.contains("record 1") && msg.contains("missing image"), "{msg}");
}

#[test]
fn truncated_file_disagrees_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &forged(3, 5));
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(data_error(&path).contains("sidecar"));
}

#[test]
fn label_must_match_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &forged(4, 6));
    rewrite_line(&path, 0, |v| {
        let flipped = 1 - v["label"].as_u64().unwrap();
        v["label"] = flipped.into();
    });
    data_error(&path);
}
