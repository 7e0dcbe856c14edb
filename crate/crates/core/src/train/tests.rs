use super::*;
use crate::decoder::DecoderConfig;
use crate::forge::{forge_dataset, ForgeConfig, Lexicon};
use crate::model::ModelConfig;
use crate::prompt::PromptShape;
use crate::rng::Rng;
use alloc::string::String;

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_channels: 8,
        text_buckets: 256,
        text_embed: 8,
        text_dim: 8,
        face_dim: 4,
        fusion_dim: 8,
        head_hidden: 8,
        converter_hidden: 8,
        prompt: PromptShape {
            converter_rows: 1,
            semantic_rows: 1,
            adaptive_rows: 2,
            dim: 8,
        },
        decoder: DecoderConfig {
            dim: 8,
            layers: 1,
            mlp: 8,
            max_positions: 768,
            ..DecoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn tiny_data(n: usize) -> Dataset {
    let cfg = ForgeConfig {
        n_samples: n,
        manip_rate: 0.5,
        multimodal_rate: 0.25,
        seed: 4,
        ..ForgeConfig::default()
    };
    forge_dataset(&cfg, &Lexicon::default()).unwrap()
}

#[test]
fn plan_invariants() {
    StagePlan::new(Stage::Detection, 1).validate().unwrap();
    StagePlan::new(Stage::Reasoning, 1).validate().unwrap();
    StagePlan::new(Stage::Pretrain, 1).validate().unwrap();
    let mut p = StagePlan::new(Stage::Reasoning, 1);
    p.trainable.insert(Component::FaceEncoder);
    assert!(p.validate().is_err());
    let mut p = StagePlan::new(Stage::Detection, 1);
    p.batch_size = 0;
    assert!(p.validate().is_err());
    let mut p = StagePlan::new(Stage::Pretrain, 1);
    p.trainable.insert(Component::Fusion);
    assert!(p.validate().is_err());
    assert_eq!(StagePlan::new(Stage::Detection, 3).total_steps(33), 9);
    assert_eq!("reasoning".parse::<Stage>().unwrap(), Stage::Reasoning);
}

#[test]
fn stages_only_touch_trainable_groups() {
    let data = tiny_data(8);
    for stage in Stage::ALL {
        let before = Model::new(tiny_config(), 3).unwrap();
        let mut after = before.clone();
        let mut plan = StagePlan::new(stage, 1);
        plan.batch_size = 4;
        plan.lr = 0.05;
        let curve = train_stage(&mut after, &plan, &data, 1).unwrap();
        assert_eq!(curve.rows.len(), 2);
        for c in Component::ALL {
            assert_eq!(after.group_eq(&before, c), !plan.trains(c), "{stage}: {c}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data(6);
    let mut plan = StagePlan::new(Stage::Reasoning, 2);
    plan.batch_size = 4;
    let mut a = Model::new(tiny_config(), 3).unwrap();
    let mut b = a.clone();
    let ca = train_stage(&mut a, &plan, &data, 9).unwrap();
    let cb = train_stage(&mut b, &plan, &data, 9).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
}

#[test]
fn report_totals_use_stage_weights() {
    let data = tiny_data(4);
    let model = Model::new(tiny_config(), 3).unwrap();
    let prepared = prepare(&model, &data.samples, Ablation::NONE).unwrap();
    let det = evaluate_loss(&model, &StagePlan::new(Stage::Detection, 1), &prepared).unwrap();
    assert_eq!(det.llm, 0.0);
    assert_eq!(det.total, det.ce + det.bbox + det.giou);
    assert!((det.ce - core::f64::consts::LN_2).abs() < 1e-12);
    let full = evaluate_loss(&model, &StagePlan::new(Stage::Reasoning, 1), &prepared).unwrap();
    assert!(full.llm > 0.0);
    assert_eq!(full.total, full.ce + full.llm + full.bbox + full.giou);
}

#[test]
fn nan_features_abort_with_step() {
    let data = tiny_data(4);
    let mut model = Model::new(tiny_config(), 3).unwrap();
    let mut prepared = prepare(&model, &data.samples, Ablation::NONE).unwrap();
    for p in &mut prepared {
        p.feats.cross[0] = f64::NAN;
    }
    let plan = StagePlan::new(Stage::Detection, 1);
    match train_prepared(&mut model, &plan, &prepared, 0) {
        Err(Error::NonFinite { step }) => assert_eq!(step, 0),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let mut model = Model::new(tiny_config(), 3).unwrap();
    let empty = Dataset::new(crate::data::Split::Train, 0, Vec::new()).unwrap();
    assert!(train_stage(&mut model, &StagePlan::new(Stage::Detection, 1), &empty, 0).is_err());
}

/// Central finite differences on random coordinates of every trainable
/// tensor against the batch gradient.
fn check_stage_gradients(stage: Stage, seed: u64) {
    let data = tiny_data(4);
    let mut model = Model::new(tiny_config(), seed).unwrap();
    let mut rng = crate::rng::from_seed(seed);
    // Nonzero head output so every path carries signal.
    for v in model.prompt_learner.head.out.weight.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let plan = StagePlan::new(stage, 1);
    let prepared = prepare(&model, &data.samples, Ablation::NONE).unwrap();
    let batch: Vec<&Prepared> = prepared.iter().collect();
    let mut grads = Grads::for_plan(&model, &plan);
    batch_loss(&model, &plan, &batch, Some(&mut grads)).unwrap();
    let h = 1e-6;
    for c in plan.trainable.iter().copied() {
        let analytic: Vec<(String, Vec<f64>)> = match c {
            Component::FaceEncoder => grads.face.tensors(),
            Component::PromptLearner => grads.prompt.tensors(),
            Component::Decoder => grads.decoder.as_ref().unwrap().tensors(),
            _ => unreachable!(),
        }
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();
        for (ti, (name, g)) in analytic.iter().enumerate() {
            // The head reaches the prompt only through a stopped gradient,
            // so its numeric derivative is taken without the reasoning loss.
            let mut fd_plan = plan.clone();
            if c == Component::PromptLearner && name.starts_with("head.") {
                fd_plan.weights.llm = 0.0;
            }
            for _ in 0..3 {
                let k = rng.gen_range(0..g.len());
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.tensors_mut(c)[ti][k] += delta;
                    batch_loss(&m, &fd_plan, &batch, None).unwrap().total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
                assert!(err < 1e-4 || (fd - g[k]).abs() < 1e-8, "{stage} {c} tensor {ti}[{k}]: fd {fd} vs {}", g[k]);
            }
        }
    }
}

#[test]
fn detection_gradients_match_finite_differences() {
    check_stage_gradients(Stage::Detection, 21);
}

#[test]
fn reasoning_gradients_match_finite_differences() {
    check_stage_gradients(Stage::Reasoning, 22);
}

#[test]
fn pretrain_gradients_match_finite_differences() {
    check_stage_gradients(Stage::Pretrain, 23);
}


#[test]
fn overflowing_update_aborts() {
    let data = tiny_data(4);
    let mut model = Model::new(tiny_config(), 3).unwrap();
    let mut plan = StagePlan::new(Stage::Detection, 3);
    plan.lr = 1e308;
    plan.batch_size = 2;
    assert!(matches!(train_stage(&mut model, &plan, &data, 0), Err(Error::NonFinite { .. })));
}
