//! Small causal transformer decoder over a byte vocabulary.
//!
//! Stands in for the language model: prefix embeddings (the prompt) are fed
//! ahead of the embedded headline bytes and the model predicts the reasoning
//! bytes one at a time. Two residual blocks of single-head attention and a
//! tanh MLP, learned positional embeddings, no normalization.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::LOG_EPS;
use crate::math::{self, Linear};
use crate::params::{push_linear, push_linear_mut, Params, TensorRef};
use crate::rng::{Rng, StreamRng};

/// Byte symbols plus one end-of-sequence symbol.
pub const BYTE_VOCAB: usize = 257;
pub const EOS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub mlp: usize,
    pub max_positions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            vocab: BYTE_VOCAB,
            dim: 128,
            layers: 2,
            mlp: 256,
            max_positions: 512,
        }
    }
}

impl DecoderConfig {
    pub fn eos(&self) -> Option<usize> {
        (self.vocab > EOS).then_some(EOS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub token_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

/// One input position: a prefix embedding row or a vocabulary token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Input<'a> {
    Embedding(&'a [f64]),
    Token(usize),
}

#[derive(Debug, Clone, Default)]
struct LayerTrace {
    x_in: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    x_mid: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

/// Per-position activations; doubles as the key/value cache during
/// incremental decoding.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    tokens: Vec<Option<usize>>,
    layers: Vec<LayerTrace>,
    last: Vec<Vec<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Decoder {
    pub fn new(config: DecoderConfig, rng: &mut StreamRng) -> Self {
        let d = config.dim;
        let token_emb = (0..config.vocab * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let pos_emb = (0..config.max_positions * d)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: Linear::uniform(d, d, false, 1.0, rng),
                wk: Linear::uniform(d, d, false, 1.0, rng),
                wv: Linear::uniform(d, d, false, 1.0, rng),
                wo: Linear::uniform(d, d, false, 0.5, rng),
                mlp_in: Linear::uniform(d, config.mlp, true, 1.0, rng),
                mlp_out: Linear::uniform(config.mlp, d, true, 0.5, rng),
            })
            .collect();
        Self {
            config,
            token_emb,
            pos_emb,
            blocks,
            head: Linear::uniform(d, config.vocab, true, 1.0, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, input: Input<'_>, pos: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        if pos >= self.config.max_positions {
            return Err(Error::shape("decoder positions", self.config.max_positions, pos + 1));
        }
        let mut x = match input {
            Input::Embedding(e) => {
                if e.len() != d {
                    return Err(Error::shape("prefix embedding", d, e.len()));
                }
                e.to_vec()
            }
            Input::Token(t) => {
                if t >= self.config.vocab {
                    return Err(Error::Vocabulary { token: t, vocab: self.config.vocab });
                }
                self.token_emb[t * d..(t + 1) * d].to_vec()
            }
        };
        math::axpy(1.0, &self.pos_emb[pos * d..(pos + 1) * d], &mut x);
        Ok(x)
    }

    /// Append one position to `trace`; returns its output logits.
    pub fn step(&self, trace: &mut Trace, input: Input<'_>) -> Result<Vec<f64>> {
        let t = trace.len();
        let mut x = self.embed(input, t)?;
        if trace.layers.is_empty() {
            trace.layers = vec![LayerTrace::default(); self.blocks.len()];
        }
        trace.tokens.push(match input {
            Input::Token(tok) => Some(tok),
            Input::Embedding(_) => None,
        });
        let scale = 1.0 / math::sqrt(self.dim() as f64);
        for (block, lt) in self.blocks.iter().zip(trace.layers.iter_mut()) {
            let q = block.wq.forward(&x);
            let k = block.wk.forward(&x);
            let v = block.wv.forward(&x);
            lt.k.push(k);
            lt.v.push(v);
            let mut probs: Vec<f64> = lt.k.iter().map(|ks| math::dot(&q, ks) * scale).collect();
            math::softmax(&mut probs);
            let mut h = vec![0.0; self.dim()];
            for (p, vs) in probs.iter().zip(&lt.v) {
                math::axpy(*p, vs, &mut h);
            }
            let mut mid = x.clone();
            math::axpy(1.0, &block.wo.forward(&h), &mut mid);
            let act: Vec<f64> = block.mlp_in.forward(&mid).into_iter().map(math::tanh).collect();
            let mut out = mid.clone();
            math::axpy(1.0, &block.mlp_out.forward(&act), &mut out);
            lt.x_in.push(x);
            lt.q.push(q);
            lt.probs.push(probs);
            lt.h.push(h);
            lt.x_mid.push(mid);
            lt.act.push(act);
            x = out;
        }
        let logits = self.head.forward(&x);
        trace.last.push(x);
        Ok(logits)
    }

    /// Backward pass over a full trace. `d_logits[t]`, when present, is the
    /// gradient of the loss w.r.t. the logits at position `t`. Returns the
    /// gradient w.r.t. each position's input embedding (before the
    /// positional term is added).
    pub fn backward(&self, trace: &Trace, d_logits: &[Option<Vec<f64>>], grad: &mut Decoder) -> Vec<Vec<f64>> {
        let n = trace.len();
        let d = self.dim();
        let scale = 1.0 / math::sqrt(d as f64);
        let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for t in 0..n {
            if let Some(dl) = &d_logits[t] {
                self.head
                    .backward(&trace.last[t], dl, &mut grad.head, Some(&mut dx[t]));
            }
        }
        for (l, block) in self.blocks.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            let g = &mut grad.blocks[l];
            // MLP residual.
            let mut d_mid = dx.clone();
            for t in 0..n {
                let mut d_act = vec![0.0; self.config.mlp];
                block.mlp_out.backward(&lt.act[t], &dx[t], &mut g.mlp_out, Some(&mut d_act));
                for (da, a) in d_act.iter_mut().zip(&lt.act[t]) {
                    *da *= 1.0 - a * a;
                }
                block.mlp_in.backward(&lt.x_mid[t], &d_act, &mut g.mlp_in, Some(&mut d_mid[t]));
            }
            // Attention residual.
            let mut d_in = d_mid.clone();
            let mut dq = vec![vec![0.0; d]; n];
            let mut dk = vec![vec![0.0; d]; n];
            let mut dv = vec![vec![0.0; d]; n];
            for t in 0..n {
                let mut dh = vec![0.0; d];
                block.wo.backward(&lt.h[t], &d_mid[t], &mut g.wo, Some(&mut dh));
                let probs = &lt.probs[t];
                let dp: Vec<f64> = (0..=t).map(|s| math::dot(&dh, &lt.v[s])).collect();
                let mean = math::dot(probs, &dp);
                for s in 0..=t {
                    math::axpy(probs[s], &dh, &mut dv[s]);
                    let ds = probs[s] * (dp[s] - mean) * scale;
                    if ds != 0.0 {
                        math::axpy(ds, &lt.k[s], &mut dq[t]);
                        math::axpy(ds, &lt.q[t], &mut dk[s]);
                    }
                }
            }
            for t in 0..n {
                block.wq.backward(&lt.x_in[t], &dq[t], &mut g.wq, Some(&mut d_in[t]));
                block.wk.backward(&lt.x_in[t], &dk[t], &mut g.wk, Some(&mut d_in[t]));
                block.wv.backward(&lt.x_in[t], &dv[t], &mut g.wv, Some(&mut d_in[t]));
            }
            dx = d_in;
        }
        for t in 0..n {
            math::axpy(1.0, &dx[t], &mut grad.pos_emb[t * d..(t + 1) * d]);
            if let Some(tok) = trace.tokens[t] {
                math::axpy(1.0, &dx[t], &mut grad.token_emb[tok * d..(tok + 1) * d]);
            }
        }
        dx
    }

    /// Teacher-forced mean token NLL of `target` after `prefix` rows and
    /// `context` tokens, with gradients for the decoder (accumulated into
    /// `grad` if given) and for the prefix rows.
    pub fn teacher_forced(
        &self,
        prefix: &[&[f64]],
        context: &[usize],
        target: &[usize],
        grad: Option<&mut Decoder>,
    ) -> Result<TeacherForced> {
        if target.is_empty() {
            return Err(Error::Empty("target sequence"));
        }
        if prefix.is_empty() && context.is_empty() {
            return Err(Error::Empty("decoder conditioning"));
        }
        if let Some(&t) = target.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::Vocabulary { token: t, vocab: self.config.vocab });
        }
        let mut trace = Trace::default();
        let mut logits = Vec::new();
        for row in prefix {
            logits.push(self.step(&mut trace, Input::Embedding(row))?);
        }
        for &c in context {
            logits.push(self.step(&mut trace, Input::Token(c))?);
        }
        for &y in &target[..target.len() - 1] {
            logits.push(self.step(&mut trace, Input::Token(y))?);
        }
        let first = prefix.len() + context.len() - 1;
        let n = target.len() as f64;
        let floor = math::ln(LOG_EPS);
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(target.len());
        let mut d_logits: Vec<Option<Vec<f64>>> = vec![None; trace.len()];
        for (j, &y) in target.iter().enumerate() {
            let pos = first + j;
            let z = &logits[pos];
            let lse = math::log_sum_exp(z);
            let lq = z[y] - lse;
            probs.push(math::exp(lq));
            loss -= lq.max(floor);
            if lq > floor {
                let mut g: Vec<f64> = z.iter().map(|v| math::exp(v - lse) / n).collect();
                g[y] -= 1.0 / n;
                d_logits[pos] = Some(g);
            }
        }
        let mut prefix_grads = Vec::new();
        if let Some(grad) = grad {
            let dx = self.backward(&trace, &d_logits, grad);
            prefix_grads = dx[..prefix.len()].to_vec();
        }
        Ok(TeacherForced {
            loss: loss / n,
            target_probs: probs,
            prefix_grads,
        })
    }

    /// Greedy decoding; ties go to the lowest token id.
    pub fn generate(&self, prefix: &[&[f64]], context: &[usize], max_len: usize) -> Result<ReasoningOutput> {
        if self.config.vocab == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        let mut out = ReasoningOutput::default();
        if max_len == 0 {
            return Ok(out);
        }
        if prefix.is_empty() && context.is_empty() {
            return Err(Error::Empty("decoder conditioning"));
        }
        let mut trace = Trace::default();
        let mut logits = Vec::new();
        for row in prefix {
            logits = self.step(&mut trace, Input::Embedding(row))?;
        }
        for &c in context {
            logits = self.step(&mut trace, Input::Token(c))?;
        }
        let eos = self.config.eos();
        loop {
            let mut best = 0;
            for (i, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = i;
                }
            }
            let lse = math::log_sum_exp(&logits);
            out.tokens.push(best);
            out.probs.push(math::exp(logits[best] - lse));
            if Some(best) == eos || out.tokens.len() >= max_len || trace.len() >= self.config.max_positions {
                break;
            }
            logits = self.step(&mut trace, Input::Token(best))?;
        }
        out.text = decode_bytes(&out.tokens);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForced {
    pub loss: f64,
    pub target_probs: Vec<f64>,
    pub prefix_grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReasoningOutput {
    pub tokens: Vec<usize>,
    pub text: String,
    pub probs: Vec<f64>,
}

/// Byte tokens of `text`.
pub fn encode_bytes(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Byte tokens followed by the end-of-sequence symbol.
pub fn encode_target(text: &str) -> Vec<usize> {
    let mut t = encode_bytes(text);
    t.push(EOS);
    t
}

pub fn decode_bytes(tokens: &[usize]) -> String {
    let bytes: Vec<u8> = tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

impl Params for Decoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let d = self.config.dim;
        let mut out = alloc::vec![
            TensorRef {
                name: "token_emb".into(),
                shape: alloc::vec![self.config.vocab, d],
                data: &self.token_emb,
            },
            TensorRef {
                name: "pos_emb".into(),
                shape: alloc::vec![self.config.max_positions, d],
                data: &self.pos_emb,
            },
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| alloc::format!("block{i}.{s}");
            push_linear(&mut out, &p("wq"), &b.wq);
            push_linear(&mut out, &p("wk"), &b.wk);
            push_linear(&mut out, &p("wv"), &b.wv);
            push_linear(&mut out, &p("wo"), &b.wo);
            push_linear(&mut out, &p("mlp_in"), &b.mlp_in);
            push_linear(&mut out, &p("mlp_out"), &b.mlp_out);
        }
        push_linear(&mut out, "head", &self.head);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = alloc::vec![&mut self.token_emb, &mut self.pos_emb];
        for b in self.blocks.iter_mut() {
            push_linear_mut(&mut out, &mut b.wq);
            push_linear_mut(&mut out, &mut b.wk);
            push_linear_mut(&mut out, &mut b.wv);
            push_linear_mut(&mut out, &mut b.wo);
            push_linear_mut(&mut out, &mut b.mlp_in);
            push_linear_mut(&mut out, &mut b.mlp_out);
        }
        push_linear_mut(&mut out, &mut self.head);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn tiny(vocab: usize) -> Decoder {
        Decoder::new(
            DecoderConfig { vocab, dim: 6, layers: 2, mlp: 8, max_positions: 16 },
            &mut from_seed(21),
        )
    }

    #[test]
    fn uniform_head_gives_log_vocab() {
        let mut dec = Decoder::new(
            DecoderConfig { vocab: 256, dim: 8, layers: 2, mlp: 8, max_positions: 32 },
            &mut from_seed(1),
        );
        dec.head = Linear::zeros(8, 256, true);
        let row = [0.1; 8];
        let tf = dec.teacher_forced(&[&row], &[1, 2], &[3, 4, 5], None).unwrap();
        assert!((tf.loss - 256f64.ln()).abs() < 1e-12);
        assert!((tf.loss - 5.545).abs() < 1e-3);
    }

    #[test]
    fn hand_nll_for_fixed_distribution() {
        let mut dec = tiny(3);
        dec.head = Linear::zeros(6, 3, true);
        dec.head.bias = Some(vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]);
        let row = [0.0; 6];
        let tf = dec.teacher_forced(&[&row], &[], &[0, 1], None).unwrap();
        assert!((tf.target_probs[0] - 0.5).abs() < 1e-15);
        assert!((tf.target_probs[1] - 0.25).abs() < 1e-15);
        assert!((tf.loss - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn certain_decoder_has_zero_loss() {
        let mut dec = tiny(3);
        dec.head = Linear::zeros(6, 3, true);
        dec.head.bias = Some(vec![1000.0, 0.0, 0.0]);
        let tf = dec.teacher_forced(&[&[0.0; 6]], &[], &[0, 0, 0], None).unwrap();
        assert_eq!(tf.loss, 0.0);
    }

    #[test]
    fn rejects_out_of_vocabulary_targets() {
        let dec = tiny(5);
        let err = dec.teacher_forced(&[&[0.0; 6]], &[], &[7], None).unwrap_err();
        assert_eq!(err, Error::Vocabulary { token: 7, vocab: 5 });
        assert!(dec.teacher_forced(&[&[0.0; 6]], &[], &[], None).is_err());
    }

    #[test]
    fn greedy_generation_is_capped_and_deterministic() {
        let dec = tiny(BYTE_VOCAB.min(12));
        let row = [0.3; 6];
        assert!(dec.generate(&[&row], &[1], 0).unwrap().tokens.is_empty());
        let a = dec.generate(&[&row], &[1, 2], 5).unwrap();
        let b = dec.generate(&[&row], &[1, 2], 5).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens.len() <= 5);
        assert!(a.probs.iter().all(|q| *q > 0.0 && *q < 1.0));
    }

    #[test]
    fn incremental_logits_match_teacher_forcing_probabilities() {
        let dec = tiny(10);
        let row = [0.2, -0.1, 0.0, 0.4, 0.1, -0.3];
        let gen = dec.generate(&[&row], &[3], 4).unwrap();
        let tf = dec.teacher_forced(&[&row], &[3], &gen.tokens, None).unwrap();
        for (a, b) in gen.probs.iter().zip(&tf.target_probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dec = tiny(7);
        let mut rng = from_seed(5);
        let rows: Vec<Vec<f64>> = (0..2).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let (ctx, tgt) = ([1usize, 4], [2usize, 6, 0, 3]);
        let mut grad = dec.zeros_like();
        let tf = dec.teacher_forced(&refs, &ctx, &tgt, Some(&mut grad)).unwrap();
        let h = 1e-6;
        let check = |fd: f64, an: f64| assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-2), "{fd} vs {an}");
        let gt = grad.tensors();
        for (ti, t) in dec.tensors().iter().enumerate() {
            for idx in [0, t.data.len() / 2, t.data.len() - 1] {
                let mut p = dec.clone();
                p.tensors_mut()[ti][idx] += h;
                let mut m = dec.clone();
                m.tensors_mut()[ti][idx] -= h;
                let fd = (p.teacher_forced(&refs, &ctx, &tgt, None).unwrap().loss
                    - m.teacher_forced(&refs, &ctx, &tgt, None).unwrap().loss)
                    / (2.0 * h);
                check(fd, gt[ti].data[idx]);
            }
        }
        for r in 0..2 {
            for i in 0..6 {
                let mut p = rows.clone();
                p[r][i] += h;
                let mut m = rows.clone();
                m[r][i] -= h;
                let pr: Vec<&[f64]> = p.iter().map(|r| r.as_slice()).collect();
                let mr: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
                let fd = (dec.teacher_forced(&pr, &ctx, &tgt, None).unwrap().loss
                    - dec.teacher_forced(&mr, &ctx, &tgt, None).unwrap().loss)
                    / (2.0 * h);
                check(fd, tf.prefix_grads[r][i]);
            }
        }
    }

    #[test]
    fn byte_round_trip() {
        let t = encode_target("héllo");
        assert_eq!(*t.last().unwrap(), EOS);
        assert_eq!(decode_bytes(&t), "héllo");
    }
}
