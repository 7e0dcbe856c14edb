//! Stage plans, the SGD loop and loss curves.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::{BBox, Dataset, NewsSample};
use crate::decoder::{encode_bytes, encode_target, Decoder};
use crate::encoders::FaceEncoder;
use crate::error::{Error, Result};
use crate::loss::{bbox_l1_loss_grad, bce_loss_grad, giou_loss_grad, LossReport, LossWeights};
use crate::math;
use crate::model::{Ablation, Component, FrozenFeatures, Model};
use crate::params::Params;
use crate::prompt::PromptLearner;
use crate::rng::{from_seed, indexed_seed, substream_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Language-model warm-up of the decoder on reasoning annotations.
    Pretrain,
    Detection,
    Reasoning,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::Detection, Stage::Reasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Detection => "detection",
            Stage::Reasoning => "reasoning",
        }
    }

    pub fn default_trainable(self) -> BTreeSet<Component> {
        let set: &[Component] = match self {
            Stage::Pretrain => &[Component::Decoder],
            Stage::Detection => &[Component::FaceEncoder, Component::PromptLearner],
            Stage::Reasoning => &[Component::PromptLearner],
        };
        set.iter().copied().collect()
    }

    /// Weights actually optimized in this stage.
    pub fn effective_weights(self, w: &LossWeights) -> LossWeights {
        match self {
            Stage::Pretrain => LossWeights {
                ce: 0.0,
                llm: w.llm,
                bbox: 0.0,
                giou: 0.0,
            },
            Stage::Detection => LossWeights { llm: 0.0, ..*w },
            Stage::Reasoning => *w,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub trainable: BTreeSet<Component>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub ablation: Ablation,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl StagePlan {
    pub fn new(stage: Stage, epochs: usize) -> Self {
        Self {
            stage,
            trainable: stage.default_trainable(),
            epochs,
            lr: 1e-3,
            batch_size: 16,
            weights: LossWeights::default(),
            ablation: Ablation::NONE,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.weights.validate()?;
        self.ablation.validate()?;
        let ok = match self.stage {
            Stage::Detection | Stage::Reasoning => self.trainable == self.stage.default_trainable(),
            Stage::Pretrain => {
                !self.trainable.is_empty()
                    && self
                        .trainable
                        .iter()
                        .all(|c| matches!(c, Component::Decoder | Component::PromptLearner))
            }
        };
        if !ok {
            let names: Vec<&str> = self.trainable.iter().map(|c| c.as_str()).collect();
            return Err(Error::Config(format!(
                "trainable set {{{}}} not allowed in the {} stage",
                names.join(", "),
                self.stage
            )));
        }
        Ok(())
    }

    pub fn trains(&self, c: Component) -> bool {
        self.trainable.contains(&c)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        let s = self.epochs * self.steps_per_epoch(n);
        self.max_steps.map_or(s, |m| s.min(m))
    }
}

/// Per-step batch losses of one stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<(usize, LossReport)>,
}

impl LossCurve {
    pub fn first(&self) -> Option<&LossReport> {
        self.rows.first().map(|(_, r)| r)
    }

    pub fn last(&self) -> Option<&LossReport> {
        self.rows.last().map(|(_, r)| r)
    }
}

/// A training sample with its frozen-path features cached.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feats: FrozenFeatures,
    pub label: f64,
    pub bbox: BBox,
    pub mask: bool,
    pub context: Vec<usize>,
    pub target: Vec<usize>,
}

/// Cache frozen features. Face crops use the ground-truth box when the
/// sample has one.
pub fn prepare(model: &Model, samples: &[NewsSample], ablation: Ablation) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                feats: model.frozen_features(&s.image, &s.text, s.face_bbox, ablation)?,
                label: s.label.as_f64(),
                bbox: s.face_bbox.unwrap_or(BBox::CENTER),
                mask: s.fake_cls.has_image() && s.face_bbox.is_some(),
                context: encode_bytes(&s.text),
                target: encode_target(&s.reasoning),
            })
        })
        .collect()
}

/// Gradients of the groups a stage can train.
#[derive(Debug, Clone)]
pub struct Grads {
    pub face: FaceEncoder,
    pub prompt: PromptLearner,
    pub decoder: Option<Decoder>,
}

impl Grads {
    pub fn for_plan(model: &Model, plan: &StagePlan) -> Self {
        Self {
            face: model.face_encoder.zeros_like(),
            prompt: model.prompt_learner.zeros_like(),
            decoder: plan.trains(Component::Decoder).then(|| model.decoder.zeros_like()),
        }
    }
}

/// Loss of one batch and, when `grads` is given, accumulated gradients.
pub fn batch_loss(
    model: &Model,
    plan: &StagePlan,
    batch: &[&Prepared],
    mut grads: Option<&mut Grads>,
) -> Result<LossReport> {
    let w = plan.stage.effective_weights(&plan.weights);
    let fwds = batch
        .iter()
        .map(|p| model.forward(&p.feats, plan.ablation))
        .collect::<Result<Vec<_>>>()?;
    let probs: Vec<f64> = fwds.iter().map(|f| f.prompt.head.p).collect();
    let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
    let preds: Vec<BBox> = fwds.iter().map(|f| f.prompt.head.b_pred).collect();
    let gts: Vec<BBox> = batch.iter().map(|p| p.bbox).collect();
    let mask: Vec<bool> = batch.iter().map(|p| p.mask).collect();
    let (ce, d_p) = bce_loss_grad(&probs, &labels)?;
    let (l1, d_l1) = bbox_l1_loss_grad(&preds, &gts, &mask)?;
    let (gi, d_gi) = giou_loss_grad(&preds, &gts, &mask)?;
    let want_llm = w.llm > 0.0;
    let mut llm = 0.0;
    let b = batch.len() as f64;
    let train_face = plan.trains(Component::FaceEncoder) && !plan.ablation.face;
    let train_prompt = plan.trains(Component::PromptLearner);
    let train_decoder = plan.trains(Component::Decoder);
    let mut llm_prompt = grads.as_ref().filter(|_| want_llm && train_prompt).map(|g| g.prompt.zeros_like());
    let face_slice = model.config.fusion_len() - model.config.face_dim;
    for (i, (p, fwd)) in batch.iter().zip(&fwds).enumerate() {
        let mut d_fusion = vec![0.0; fwd.fusion.len()];
        if want_llm {
            let need_inputs = grads.is_some() && (train_prompt || train_face);
            let (tf, inputs) = {
                let dec_grad = grads.as_mut().and_then(|g| g.decoder.as_mut());
                let pl_grad = if need_inputs { llm_prompt.as_mut() } else { None };
                let mut scratch = if need_inputs && pl_grad.is_none() {
                    Some(model.prompt_learner.zeros_like())
                } else {
                    None
                };
                let pl_grad = pl_grad.or(scratch.as_mut());
                model
                    .prompt_learner
                    .reasoning_loss(&fwd.prompt, &model.decoder, &p.context, &p.target, pl_grad, dec_grad)?
            };
            llm += tf.loss;
            if let Some(inputs) = inputs {
                math::axpy(w.llm / b, &inputs.fusion, &mut d_fusion);
            }
        }
        if let Some(g) = grads.as_mut() {
            let d_box: [f64; 4] = core::array::from_fn(|k| w.bbox * d_l1[i][k] + w.giou * d_gi[i][k]);
            if train_prompt || train_face {
                let mut head_grad = g.prompt.head.clone();
                let target = if train_prompt { &mut g.prompt.head } else { &mut head_grad };
                let d_in = model.prompt_learner.head.backward(
                    &fwd.prompt.head,
                    &fwd.prompt.head_cache,
                    w.ce * d_p[i],
                    d_box,
                    target,
                );
                math::axpy(1.0, &d_in, &mut d_fusion);
            }
            if train_face {
                if let Some(cache) = &fwd.face {
                    model.face_encoder.backward(cache, &d_fusion[face_slice..], &mut g.face);
                }
            }
        }
    }
    if let (Some(g), Some(mut extra)) = (grads.as_mut(), llm_prompt) {
        extra.scale(w.llm / b);
        g.prompt.add_assign(&extra);
    }
    if train_decoder && want_llm {
        if let Some(d) = grads.as_mut().and_then(|g| g.decoder.as_mut()) {
            d.scale(w.llm / b);
        }
    }
    let llm = if want_llm { llm / b } else { 0.0 };
    let report = LossReport::new(ce, llm, l1, gi, &w);
    Ok(report)
}

/// Full-set loss of the current model under `plan` (no update). Batches
/// follow dataset order.
pub fn evaluate_loss(model: &Model, plan: &StagePlan, data: &[Prepared]) -> Result<LossReport> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut acc = [0.0; 5];
    let mut n = 0.0;
    for chunk in data.chunks(plan.batch_size) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let r = batch_loss(model, plan, &refs, None)?;
        let k = chunk.len() as f64;
        for (a, v) in acc.iter_mut().zip([r.ce, r.llm, r.bbox, r.giou, r.total]) {
            *a += k * v;
        }
        n += k;
    }
    let w = plan.stage.effective_weights(&plan.weights);
    Ok(LossReport::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, &w))
}

/// Run one stage of SGD over prepared samples. Parameters outside the
/// plan's trainable set are never written.
pub fn train_prepared(model: &mut Model, plan: &StagePlan, data: &[Prepared], seed: u64) -> Result<LossCurve> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let total = plan.total_steps(data.len());
    let shuffle_stream = substream_seed(seed, &format!("train.{}.shuffle", plan.stage));
    let mut curve = LossCurve::default();
    let mut step = 0;
    'outer: for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut from_seed(indexed_seed(shuffle_stream, epoch as u64)));
        for idx in order.chunks(plan.batch_size) {
            if step >= total {
                break 'outer;
            }
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &data[i]).collect();
            let mut grads = Grads::for_plan(model, plan);
            let report = batch_loss(model, plan, &batch, Some(&mut grads))?;
            if !report.is_finite() {
                return Err(Error::NonFinite { step });
            }
            if plan.trains(Component::FaceEncoder) {
                model.face_encoder.sgd_step(&grads.face, plan.lr);
            }
            if plan.trains(Component::PromptLearner) {
                model.prompt_learner.sgd_step(&grads.prompt, plan.lr);
            }
            if let Some(d) = &grads.decoder {
                model.decoder.sgd_step(d, plan.lr);
            }
            // A finite loss can hide overflowed weights behind saturations.
            if !model.all_finite() {
                return Err(Error::NonFinite { step });
            }
            curve.rows.push((step, report));
            step += 1;
        }
    }
    Ok(curve)
}

pub fn train_stage(model: &mut Model, plan: &StagePlan, data: &Dataset, seed: u64) -> Result<LossCurve> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let prepared = prepare(model, &data.samples, plan.ablation)?;
    train_prepared(model, plan, &prepared, seed)
}

/// Model with the given modalities dropped for every later forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AblatedModel {
    pub model: Model,
    pub ablation: Ablation,
}

pub fn ablate(model: Model, drop: Ablation) -> Result<AblatedModel> {
    drop.validate()?;
    Ok(AblatedModel { model, ablation: drop })
}

/// Helper for reports: component names of a trainable set.
pub fn trainable_names(set: &BTreeSet<Component>) -> String {
    let names: Vec<&str> = set.iter().map(|c| c.as_str()).collect();
    names.join(",")
}

#[cfg(test)]
pub(crate) mod tests;
