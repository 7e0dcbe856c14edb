//! Prompt learner: prediction head, converter, semantic learner and
//! adaptive prompt embeddings.
//!
//! The prompt is `concat(converter(F_fusion | head(F_fusion)), semantic(F_image),
//! E_ada)`. Head outputs enter the converter with gradients stopped, so the
//! head is trained only by its own detection losses.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::BBox;
use crate::decoder::{Decoder, ReasoningOutput, TeacherForced};
use crate::error::{Error, Result};
use crate::math::{self, Linear};
use crate::params::{push_linear, push_linear_mut, Params, TensorRef};
use crate::rng::{Rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    /// Probability of fake.
    pub p: f64,
    pub logit: f64,
    /// Logistic outputs `(u_x, u_y, w, h)` before the corner map.
    pub raw_box: [f64; 4],
    pub b_pred: BBox,
}

/// Map logistic outputs `(u_x, u_y, w, h)` to corners:
/// `x1 = u_x (1 - w)`, `x2 = x1 + w`, likewise for `y`.
pub fn corners(raw: [f64; 4]) -> BBox {
    let [ux, uy, w, h] = raw;
    let x1 = ux * (1.0 - w);
    let y1 = uy * (1.0 - h);
    BBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

/// Gradient w.r.t. the raw logistic outputs given a gradient on corners.
pub fn corners_backward(raw: [f64; 4], d: [f64; 4]) -> [f64; 4] {
    let [ux, uy, w, h] = raw;
    let [dx1, dy1, dx2, dy2] = d;
    [
        (dx1 + dx2) * (1.0 - w),
        (dy1 + dy2) * (1.0 - h),
        -ux * dx1 + (1.0 - ux) * dx2,
        -uy * dy1 + (1.0 - uy) * dy2,
    ]
}

/// Fixed multiplier on the authenticity logit.
pub const LOGIT_SCALE: f64 = 10.0;

/// Two-layer perceptron emitting one authenticity logit and four box logits,
/// `out(tanh(hidden(x))) with the logit scaled by `LOGIT_SCALE``.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub input: Vec<f64>,
    pub act: Vec<f64>,
}

impl PredictionHead {
    pub fn new(n_in: usize, hidden: usize, rng: &mut StreamRng) -> Self {
        Self {
            hidden: Linear::uniform(n_in, hidden, true, 4.0, rng),
            out: Linear::zeros(hidden, 5, true),
        }
    }

    pub fn forward(&self, fusion: &[f64]) -> Result<(HeadOutput, HeadCache)> {
        if fusion.len() != self.hidden.n_in {
            return Err(Error::shape("prediction head input", self.hidden.n_in, fusion.len()));
        }
        let act: Vec<f64> = self.hidden.forward(fusion).into_iter().map(math::tanh).collect();
        let mut o = self.out.forward(&act);
        o[0] *= LOGIT_SCALE;
        let raw_box = [
            math::sigmoid(o[1]),
            math::sigmoid(o[2]),
            math::sigmoid(o[3]),
            math::sigmoid(o[4]),
        ];
        let out = HeadOutput {
            p: math::sigmoid(o[0]),
            logit: o[0],
            raw_box,
            b_pred: corners(raw_box),
        };
        Ok((
            out,
            HeadCache {
                input: fusion.to_vec(),
                act,
            },
        ))
    }

    /// Backward from `d_p` (gradient on probability) and `d_box` (gradient on
    /// corners). Returns the gradient w.r.t. the fusion input.
    pub fn backward(
        &self,
        out: &HeadOutput,
        cache: &HeadCache,
        d_p: f64,
        d_box: [f64; 4],
        grad: &mut PredictionHead,
    ) -> Vec<f64> {
        let d_raw = corners_backward(out.raw_box, d_box);
        let mut d_o = [0.0; 5];
        d_o[0] = LOGIT_SCALE * d_p * out.p * (1.0 - out.p);
        for k in 0..4 {
            d_o[k + 1] = d_raw[k] * out.raw_box[k] * (1.0 - out.raw_box[k]);
        }
        let mut d_act = vec![0.0; self.hidden.n_out];
        self.out.backward(&cache.act, &d_o, &mut grad.out, Some(&mut d_act));
        for (g, a) in d_act.iter_mut().zip(&cache.act) {
            *g *= 1.0 - a * a;
        }
        let mut d_in = vec![0.0; self.hidden.n_in];
        self.hidden.backward(&cache.input, &d_act, &mut grad.hidden, Some(&mut d_in));
        d_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptShape {
    pub converter_rows: usize,
    pub semantic_rows: usize,
    pub adaptive_rows: usize,
    pub dim: usize,
}

impl Default for PromptShape {
    fn default() -> Self {
        Self {
            converter_rows: 4,
            semantic_rows: 4,
            adaptive_rows: 8,
            dim: 128,
        }
    }
}

impl PromptShape {
    pub fn rows(&self) -> usize {
        self.converter_rows + self.semantic_rows + self.adaptive_rows
    }
}

/// Prompt embeddings, rows ordered converter, semantic, adaptive.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPack {
    pub shape: PromptShape,
    pub data: Vec<f64>,
}

impl PromptPack {
    pub fn rows(&self) -> Vec<&[f64]> {
        self.data.chunks(self.shape.dim).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.shape.dim..(i + 1) * self.shape.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLearner {
    pub shape: PromptShape,
    pub head: PredictionHead,
    pub conv_hidden: Linear,
    pub conv_out: Linear,
    pub semantic: Linear,
    pub adaptive: Vec<f64>,
}

/// Forward intermediates of [`PromptLearner::forward`].
#[derive(Debug, Clone)]
pub struct PromptForward {
    pub head: HeadOutput,
    pub head_cache: HeadCache,
    pub conv_input: Vec<f64>,
    pub conv_act: Vec<f64>,
    pub pooled_deep: Vec<f64>,
    pub pack: PromptPack,
}

/// Gradients flowing out of the prompt learner to its inputs.
#[derive(Debug, Clone)]
pub struct PromptInputGrads {
    pub fusion: Vec<f64>,
    pub pooled_deep: Vec<f64>,
}

impl PromptLearner {
    pub fn new(
        fusion_len: usize,
        deep_channels: usize,
        head_hidden: usize,
        conv_hidden: usize,
        shape: PromptShape,
        rng: &mut StreamRng,
    ) -> Self {
        let d = shape.dim;
        Self {
            shape,
            head: PredictionHead::new(fusion_len, head_hidden, rng),
            conv_hidden: Linear::uniform(fusion_len + 5, conv_hidden, true, 1.0, rng),
            conv_out: Linear::uniform(conv_hidden, shape.converter_rows * d, true, 0.5, rng),
            semantic: Linear::uniform(deep_channels, shape.semantic_rows * d, true, 0.5, rng),
            adaptive: (0..shape.adaptive_rows * d)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        }
    }

    pub fn predict(&self, fusion: &[f64]) -> Result<HeadOutput> {
        Ok(self.head.forward(fusion)?.0)
    }

    pub fn forward(&self, fusion: &[f64], pooled_deep: &[f64]) -> Result<PromptForward> {
        if pooled_deep.len() != self.semantic.n_in {
            return Err(Error::shape("semantic learner input", self.semantic.n_in, pooled_deep.len()));
        }
        let (head, head_cache) = self.head.forward(fusion)?;
        // Stop-gradient: p and b_pred are plain values from here on.
        let mut conv_input = fusion.to_vec();
        conv_input.push(head.p);
        conv_input.extend_from_slice(&head.b_pred.to_array());
        let conv_act: Vec<f64> = self
            .conv_hidden
            .forward(&conv_input)
            .into_iter()
            .map(math::tanh)
            .collect();
        let mut data = self.conv_out.forward(&conv_act);
        data.extend(self.semantic.forward(pooled_deep));
        data.extend_from_slice(&self.adaptive);
        Ok(PromptForward {
            head,
            head_cache,
            conv_input,
            conv_act,
            pooled_deep: pooled_deep.to_vec(),
            pack: PromptPack {
                shape: self.shape,
                data,
            },
        })
    }

    /// Backward of the prompt rows only (the head receives nothing from here).
    pub fn backward_prompt(&self, fwd: &PromptForward, d_pack: &[f64], grad: &mut PromptLearner) -> PromptInputGrads {
        let d = self.shape.dim;
        let nc = self.shape.converter_rows * d;
        let ns = self.shape.semantic_rows * d;
        let mut d_act = vec![0.0; self.conv_hidden.n_out];
        self.conv_out
            .backward(&fwd.conv_act, &d_pack[..nc], &mut grad.conv_out, Some(&mut d_act));
        for (g, a) in d_act.iter_mut().zip(&fwd.conv_act) {
            *g *= 1.0 - a * a;
        }
        let mut d_conv_in = vec![0.0; self.conv_hidden.n_in];
        self.conv_hidden
            .backward(&fwd.conv_input, &d_act, &mut grad.conv_hidden, Some(&mut d_conv_in));
        let fusion_len = self.head.hidden.n_in;
        d_conv_in.truncate(fusion_len);
        let mut d_deep = vec![0.0; self.semantic.n_in];
        self.semantic
            .backward(&fwd.pooled_deep, &d_pack[nc..nc + ns], &mut grad.semantic, Some(&mut d_deep));
        math::axpy(1.0, &d_pack[nc + ns..], &mut grad.adaptive);
        PromptInputGrads {
            fusion: d_conv_in,
            pooled_deep: d_deep,
        }
    }

    /// Teacher-forced reasoning loss for `pack`, backpropagated into the
    /// prompt learner (and the decoder when `decoder_grad` is given).
    pub fn reasoning_loss(
        &self,
        fwd: &PromptForward,
        decoder: &Decoder,
        context: &[usize],
        target: &[usize],
        grad: Option<&mut PromptLearner>,
        decoder_grad: Option<&mut Decoder>,
    ) -> Result<(TeacherForced, Option<PromptInputGrads>)> {
        let rows = fwd.pack.rows();
        let want = grad.is_some();
        let mut scratch;
        let dec_grad = match (decoder_grad, want) {
            (Some(g), _) => Some(g),
            (None, true) => {
                scratch = decoder.zeros_like();
                Some(&mut scratch)
            }
            (None, false) => None,
        };
        let tf = decoder.teacher_forced(&rows, context, target, dec_grad)?;
        let input_grads = grad.map(|g| {
            let d_pack: Vec<f64> = tf.prefix_grads.iter().flatten().copied().collect();
            self.backward_prompt(fwd, &d_pack, g)
        });
        Ok((tf, input_grads))
    }
}

/// Greedy reasoning generation conditioned on the prompt and headline bytes.
pub fn generate_reasoning(pack: &PromptPack, headline: &str, decoder: &Decoder, max_len: usize) -> Result<ReasoningOutput> {
    let ctx = crate::decoder::encode_bytes(headline);
    decoder.generate(&pack.rows(), &ctx, max_len)
}

/// Teacher-forced reasoning loss for a prompt pack.
pub fn teacher_forced_loss(
    pack: &PromptPack,
    headline: &str,
    target: &[usize],
    decoder: &Decoder,
) -> Result<TeacherForced> {
    let ctx = crate::decoder::encode_bytes(headline);
    decoder.teacher_forced(&pack.rows(), &ctx, target, None)
}

impl Params for PromptLearner {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        push_linear(&mut out, "head.hidden", &self.head.hidden);
        push_linear(&mut out, "head.out", &self.head.out);
        push_linear(&mut out, "converter.hidden", &self.conv_hidden);
        push_linear(&mut out, "converter.out", &self.conv_out);
        push_linear(&mut out, "semantic", &self.semantic);
        out.push(TensorRef {
            name: "adaptive".into(),
            shape: alloc::vec![self.shape.adaptive_rows, self.shape.dim],
            data: &self.adaptive,
        });
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        push_linear_mut(&mut out, &mut self.head.hidden);
        push_linear_mut(&mut out, &mut self.head.out);
        push_linear_mut(&mut out, &mut self.conv_hidden);
        push_linear_mut(&mut out, &mut self.conv_out);
        push_linear_mut(&mut out, &mut self.semantic);
        out.push(&mut self.adaptive);
        out
    }
}
