//! Deterministic toy encoders: a four-stage strided convolutional image
//! encoder, a hashed bag-of-tokens text encoder, and a small convolutional
//! face encoder.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{BBox, ImageBuf};
use crate::error::{Error, Result};
use crate::math::{self, Linear};
use crate::params::{push_linear, push_linear_mut, Params, TensorRef};
use crate::rng::{fnv1a, StreamRng};
use rand::Rng;

/// Real-valued `H x W x C` map, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.c..(t + 1) * self.c]
    }

    /// Channel means over all spatial positions.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.c];
        for t in 0..self.tokens() {
            math::axpy(1.0, self.token(t), &mut out);
        }
        let n = self.tokens() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Preprocessed image in `[0,1]`, `size x size x 3`.
pub type ImageTensor = FeatureMap;

/// Resize to `size x size` (bilinear, pixel-center aligned) and scale to `[0,1]`.
pub fn preprocess(img: &ImageBuf, size: usize) -> ImageTensor {
    let mut out = FeatureMap::zeros(size, size, 3);
    if img.width == size && img.height == size {
        for (o, &v) in out.data.iter_mut().zip(&img.data) {
            *o = v as f64 / 255.0;
        }
        return out;
    }
    let sx = img.width as f64 / size as f64;
    let sy = img.height as f64 / size as f64;
    for y in 0..size {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..size {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = fx - x0 as f64;
            let (a, b, c, d) = (
                img.pixel(x0, y0),
                img.pixel(x1, y0),
                img.pixel(x0, y1),
                img.pixel(x1, y1),
            );
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - tx) + b[ch] as f64 * tx;
                let bot = c[ch] as f64 * (1.0 - tx) + d[ch] as f64 * tx;
                out.data[(y * size + x) * 3 + ch] = (top * (1.0 - ty) + bot * ty) / 255.0;
            }
        }
    }
    out
}

/// Non-overlapping `k x k` convolution with stride `k`: one affine map applied
/// to every flattened patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConv {
    pub kernel: usize,
    pub c_in: usize,
    pub lin: Linear,
}

impl PatchConv {
    pub fn new(kernel: usize, c_in: usize, c_out: usize, gain: f64, rng: &mut StreamRng) -> Self {
        Self {
            kernel,
            c_in,
            lin: Linear::uniform(kernel * kernel * c_in, c_out, true, gain, rng),
        }
    }

    fn gather(&self, input: &FeatureMap, i: usize, j: usize, patch: &mut [f64]) {
        let k = self.kernel;
        let c = input.c;
        let mut o = 0;
        for a in 0..k {
            let row = (i * k + a) * input.w;
            for b in 0..k {
                let base = (row + j * k + b) * c;
                patch[o..o + c].copy_from_slice(&input.data[base..base + c]);
                o += c;
            }
        }
    }

    fn scatter_add(&self, grad_in: &mut FeatureMap, i: usize, j: usize, patch: &[f64]) {
        let k = self.kernel;
        let c = grad_in.c;
        let mut o = 0;
        for a in 0..k {
            let row = (i * k + a) * grad_in.w;
            for b in 0..k {
                let base = (row + j * k + b) * c;
                math::axpy(1.0, &patch[o..o + c], &mut grad_in.data[base..base + c]);
                o += c;
            }
        }
    }

    /// `tanh(conv(input))`.
    pub fn forward_tanh(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.c != self.c_in {
            return Err(Error::shape("patch conv channels", self.c_in, input.c));
        }
        if input.h % self.kernel != 0 || input.w % self.kernel != 0 {
            return Err(Error::shape("patch conv extent", self.kernel, input.h % self.kernel));
        }
        let (oh, ow) = (input.h / self.kernel, input.w / self.kernel);
        let mut out = FeatureMap::zeros(oh, ow, self.lin.n_out);
        let mut patch = vec![0.0; self.lin.n_in];
        for i in 0..oh {
            for j in 0..ow {
                self.gather(input, i, j, &mut patch);
                let t = i * ow + j;
                let y = &mut out.data[t * self.lin.n_out..(t + 1) * self.lin.n_out];
                self.lin.forward_into(&patch, y);
                y.iter_mut().for_each(|v| *v = math::tanh(*v));
            }
        }
        Ok(out)
    }

    /// Backward through `tanh(conv(input))` given the output `out` and its
    /// gradient. Returns the input gradient when `want_input` is set.
    pub fn backward_tanh(
        &self,
        input: &FeatureMap,
        out: &FeatureMap,
        d_out: &[f64],
        grad: &mut PatchConv,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let mut d_in = want_input.then(|| FeatureMap::zeros(input.h, input.w, input.c));
        let mut patch = vec![0.0; self.lin.n_in];
        let mut d_patch = vec![0.0; self.lin.n_in];
        let mut d_pre = vec![0.0; self.lin.n_out];
        let n = self.lin.n_out;
        for i in 0..out.h {
            for j in 0..out.w {
                let t = i * out.w + j;
                let mut any = false;
                for o in 0..n {
                    let y = out.data[t * n + o];
                    d_pre[o] = d_out[t * n + o] * (1.0 - y * y);
                    any |= d_pre[o] != 0.0;
                }
                if !any {
                    continue;
                }
                self.gather(input, i, j, &mut patch);
                match d_in.as_mut() {
                    Some(d_in) => {
                        d_patch.fill(0.0);
                        self.lin.backward(&patch, &d_pre, &mut grad.lin, Some(&mut d_patch));
                        self.scatter_add(d_in, i, j, &d_patch);
                    }
                    None => self.lin.backward(&patch, &d_pre, &mut grad.lin, None),
                }
            }
        }
        d_in
    }
}

/// The four intermediate visual feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    pub taps: [FeatureMap; 4],
}

impl VisualFeatures {
    pub fn zeros_like(&self) -> Self {
        Self {
            taps: self
                .taps
                .clone()
                .map(|t| FeatureMap::zeros(t.h, t.w, t.c)),
        }
    }
}

/// Stem (stride 4) followed by three stride-2 stages. Each tap is the stage
/// activation plus a fixed per-token position embedding; the next stage reads
/// the bare activation. Without the embedding the flat synthetic scenes give
/// only a handful of distinct tokens and the text signal cannot survive the
/// bilinear fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub input_size: usize,
    pub stages: [PatchConv; 4],
    /// Row-major `tokens x channels` per tap.
    pub pos: [Vec<f64>; 4],
}

/// Scale of the position embeddings (standard deviation).
pub const POS_SCALE: f64 = 0.5;

impl ImageEncoder {
    pub fn new(input_size: usize, channels: usize, rng: &mut StreamRng) -> Self {
        let stem = PatchConv::new(4, 3, channels, 1.0, rng);
        let s2 = PatchConv::new(2, channels, channels, 1.0, rng);
        let s3 = PatchConv::new(2, channels, channels, 1.0, rng);
        let s4 = PatchConv::new(2, channels, channels, 1.0, rng);
        let bound = POS_SCALE * libm::sqrt(3.0);
        let pos = core::array::from_fn(|i| {
            let side = (input_size / 4) >> i;
            (0..side * side * channels)
                .map(|_| rng.gen_range(-bound..bound))
                .collect()
        });
        Self {
            input_size,
            stages: [stem, s2, s3, s4],
            pos,
        }
    }

    pub fn channels(&self) -> usize {
        self.stages[0].lin.n_out
    }

    /// Taps plus the bare stage activations needed by [`Self::backward`].
    pub fn encode_cached(&self, img: &ImageTensor) -> Result<(VisualFeatures, [FeatureMap; 4])> {
        if img.h != self.input_size || img.w != self.input_size {
            return Err(Error::shape("image extent", self.input_size, img.h));
        }
        if img.c != 3 {
            return Err(Error::shape("image channels", 3, img.c));
        }
        let a1 = self.stages[0].forward_tanh(img)?;
        let a2 = self.stages[1].forward_tanh(&a1)?;
        let a3 = self.stages[2].forward_tanh(&a2)?;
        let a4 = self.stages[3].forward_tanh(&a3)?;
        let acts = [a1, a2, a3, a4];
        let mut taps = acts.clone();
        for (t, p) in taps.iter_mut().zip(&self.pos) {
            if t.data.len() != p.len() {
                return Err(Error::shape("position embedding", t.data.len(), p.len()));
            }
            math::axpy(1.0, p, &mut t.data);
        }
        Ok((VisualFeatures { taps }, acts))
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<VisualFeatures> {
        Ok(self.encode_cached(img)?.0)
    }

    /// Accumulate parameter gradients for upstream tap gradients `d_taps`;
    /// returns the gradient with respect to the input image.
    pub fn backward(
        &self,
        img: &ImageTensor,
        acts: &[FeatureMap; 4],
        d_taps: &[Vec<f64>; 4],
        grad: &mut ImageEncoder,
    ) -> FeatureMap {
        for (g, d) in grad.pos.iter_mut().zip(d_taps) {
            math::axpy(1.0, d, g);
        }
        let mut carry = d_taps[3].clone();
        for s in (0..4).rev() {
            let input = if s == 0 { img } else { &acts[s - 1] };
            let d_in = self.stages[s]
                .backward_tanh(input, &acts[s], &carry, &mut grad.stages[s], true)
                .expect("input gradient requested");
            carry = d_in.data;
            if s > 0 {
                math::axpy(1.0, &d_taps[s - 1], &mut carry);
            }
        }
        FeatureMap {
            h: img.h,
            w: img.w,
            c: img.c,
            data: carry,
        }
    }
}

impl Params for ImageEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            push_linear(&mut out, &alloc::format!("stage{}", i + 1), &s.lin);
        }
        for (i, p) in self.pos.iter().enumerate() {
            let c = self.channels();
            out.push(TensorRef {
                name: alloc::format!("pos{}", i + 1),
                shape: vec![p.len() / c, c],
                data: p,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for s in self.stages.iter_mut() {
            push_linear_mut(&mut out, &mut s.lin);
        }
        for p in self.pos.iter_mut() {
            out.push(p.as_mut_slice());
        }
        out
    }
}

pub type TextFeature = Vec<f64>;

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Hashed bag-of-tokens: token rows averaged, then projected.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub buckets: usize,
    pub embed_dim: usize,
    pub table: Vec<f64>,
    pub proj: Linear,
}

impl TextEncoder {
    pub fn new(buckets: usize, embed_dim: usize, out_dim: usize, rng: &mut StreamRng) -> Self {
        use crate::rng::Rng;
        let table = (0..buckets * embed_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Self {
            buckets,
            embed_dim,
            table,
            proj: Linear::uniform(embed_dim, out_dim, true, 1.0, rng),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.buckets as u64) as usize
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.embed_dim..(bucket + 1) * self.embed_dim]
    }

    pub fn encode(&self, text: &str) -> Result<TextFeature> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Empty("headline text"));
        }
        let mut avg = vec![0.0; self.embed_dim];
        for t in &tokens {
            math::axpy(1.0, self.row(self.bucket(t)), &mut avg);
        }
        let n = tokens.len() as f64;
        avg.iter_mut().for_each(|v| *v /= n);
        Ok(self.proj.forward(&avg))
    }
}

impl Params for TextEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = alloc::vec![TensorRef {
            name: "table".into(),
            shape: alloc::vec![self.buckets, self.embed_dim],
            data: &self.table,
        }];
        push_linear(&mut out, "proj", &self.proj);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = alloc::vec![&mut self.table];
        push_linear_mut(&mut out, &mut self.proj);
        out
    }
}

pub type FaceFeature = Vec<f64>;

/// Activations kept for the face-encoder backward pass.
#[derive(Debug, Clone)]
pub struct FaceCache {
    pub crop: FeatureMap,
    pub h1: FeatureMap,
    pub h2: FeatureMap,
    pub pooled: Vec<f64>,
    /// Token index that won the max pool, per channel.
    pub argmax: Vec<usize>,
    pub out: Vec<f64>,
}

/// Channels fed to the face stages: RGB then the noise residual.
pub const FACE_CHANNELS: usize = 6;

/// Gain on the fixed high-pass residual channels.
pub const RESIDUAL_GAIN: f64 = 4.0;

/// Crop, a fixed high-pass residual, two strided stages, global max pool
/// and a projection. The residual exposes blending and editing noise; the
/// max pool keeps it visible when the face fills only part of the crop.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceEncoder {
    pub crop_size: usize,
    pub conv1: PatchConv,
    pub conv2: PatchConv,
    pub proj: Linear,
}

impl FaceEncoder {
    pub fn new(crop_size: usize, out_dim: usize, rng: &mut StreamRng) -> Self {
        Self {
            crop_size,
            conv1: PatchConv::new(4, FACE_CHANNELS, 16, 1.0, rng),
            conv2: PatchConv::new(2, 16, 32, 1.0, rng),
            proj: Linear::uniform(32, out_dim, true, 1.0, rng),
        }
    }

    /// Nearest-neighbour resample of `bbox` (center crop when absent) to
    /// `crop_size x crop_size`, with the residual channels appended.
    pub fn crop(&self, img: &ImageTensor, bbox: Option<BBox>) -> Result<FeatureMap> {
        let b = bbox.unwrap_or(BBox::CENTER);
        if !(b.x2 > b.x1 && b.y2 > b.y1) {
            return Err(Error::DegenerateBox("face crop has zero area"));
        }
        let n = self.crop_size;
        let mut out = FeatureMap::zeros(n, n, img.c);
        let (w, h) = (img.w as f64, img.h as f64);
        for i in 0..n {
            let sy = (b.y1 * h + (i as f64 + 0.5) * (b.y2 - b.y1) * h / n as f64) as usize;
            let sy = sy.min(img.h - 1);
            for j in 0..n {
                let sx = (b.x1 * w + (j as f64 + 0.5) * (b.x2 - b.x1) * w / n as f64) as usize;
                let sx = sx.min(img.w - 1);
                let src = (sy * img.w + sx) * img.c;
                let dst = (i * n + j) * img.c;
                out.data[dst..dst + img.c].copy_from_slice(&img.data[src..src + img.c]);
            }
        }
        Ok(with_residual(&out))
    }

    pub fn forward_crop(&self, crop: &FeatureMap) -> Result<FaceCache> {
        let h1 = self.conv1.forward_tanh(crop)?;
        let h2 = self.conv2.forward_tanh(&h1)?;
        let mut argmax = vec![0; h2.c];
        for t in 1..h2.tokens() {
            for (c, best) in argmax.iter_mut().enumerate() {
                if h2.data[t * h2.c + c] > h2.data[*best * h2.c + c] {
                    *best = t;
                }
            }
        }
        let pooled: Vec<f64> = argmax
            .iter()
            .enumerate()
            .map(|(c, &t)| h2.data[t * h2.c + c])
            .collect();
        let out: Vec<f64> = self.proj.forward(&pooled).into_iter().map(math::tanh).collect();
        Ok(FaceCache {
            crop: crop.clone(),
            h1,
            h2,
            pooled,
            argmax,
            out,
        })
    }

    pub fn encode(&self, img: &ImageTensor, bbox_hint: Option<BBox>) -> Result<FaceFeature> {
        let crop = self.crop(img, bbox_hint)?;
        Ok(self.forward_crop(&crop)?.out)
    }

    /// Accumulate parameter gradients for `d_out` (gradient of the face feature).
    pub fn backward(&self, cache: &FaceCache, d_out: &[f64], grad: &mut FaceEncoder) {
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(&cache.out)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut d_pooled = vec![0.0; cache.pooled.len()];
        self.proj
            .backward(&cache.pooled, &d_pre, &mut grad.proj, Some(&mut d_pooled));
        let mut d_h2 = vec![0.0; cache.h2.data.len()];
        for (c, &t) in cache.argmax.iter().enumerate() {
            d_h2[t * cache.h2.c + c] = d_pooled[c];
        }
        let d_h1 = self
            .conv2
            .backward_tanh(&cache.h1, &cache.h2, &d_h2, &mut grad.conv2, true)
            .expect("input gradient requested");
        self.conv1
            .backward_tanh(&cache.crop, &cache.h1, &d_h1.data, &mut grad.conv1, false);
    }
}

/// Append `|x - mean of 4 neighbours|` per channel (edges replicated).
pub fn with_residual(rgb: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (rgb.h, rgb.w, rgb.c);
    let mut out = FeatureMap::zeros(h, w, 2 * c);
    let at = |y: usize, x: usize, ch: usize| rgb.data[(y * w + x) * c + ch];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = at(y, x, ch);
                let nb = at(y.saturating_sub(1), x, ch)
                    + at((y + 1).min(h - 1), x, ch)
                    + at(y, x.saturating_sub(1), ch)
                    + at(y, (x + 1).min(w - 1), ch);
                let base = (y * w + x) * 2 * c;
                out.data[base + ch] = v;
                out.data[base + c + ch] = RESIDUAL_GAIN * (v - nb / 4.0).abs();
            }
        }
    }
    out
}

impl Params for FaceEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        push_linear(&mut out, "conv1", &self.conv1.lin);
        push_linear(&mut out, "conv2", &self.conv2.lin);
        push_linear(&mut out, "proj", &self.proj);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        push_linear_mut(&mut out, &mut self.conv1.lin);
        push_linear_mut(&mut out, &mut self.conv2.lin);
        push_linear_mut(&mut out, &mut self.proj);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{from_seed, Rng};

    fn small_image_encoder(size: usize, channels: usize) -> ImageEncoder {
        ImageEncoder::new(size, channels, &mut from_seed(3))
    }

    #[test]
    fn tap_shapes_follow_strides() {
        let enc = ImageEncoder::new(224, 8, &mut from_seed(1));
        let img = FeatureMap::zeros(224, 224, 3);
        let f = enc.encode(&img).unwrap();
        let sizes: Vec<usize> = f.taps.iter().map(|t| t.h).collect();
        assert_eq!(sizes, [56, 28, 14, 7]);
        assert!(f.taps.iter().all(|t| t.w == t.h && t.c == 8));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let enc = small_image_encoder(32, 4);
        assert!(enc.encode(&FeatureMap::zeros(64, 64, 3)).is_err());
        assert!(enc.encode(&FeatureMap::zeros(32, 32, 1)).is_err());
    }

    #[test]
    fn zero_image_propagates_biases() {
        let mut enc = small_image_encoder(32, 4);
        let mut rng = from_seed(9);
        for s in enc.stages.iter_mut() {
            for b in s.lin.bias.as_mut().unwrap() {
                *b = rng.gen_range(-1.0..1.0);
            }
        }
        let f = enc.encode(&FeatureMap::zeros(32, 32, 3)).unwrap();
        // Oracle: on a constant input every token of a stage sees the same
        // patch, so each tap is one vector repeated over space plus the
        // position embedding.
        let mut prev: Vec<f64> = vec![0.0; 3];
        for ((s, tap), pos) in enc.stages.iter().zip(&f.taps).zip(&enc.pos) {
            let k2 = s.kernel * s.kernel;
            let patch: Vec<f64> = (0..k2).flat_map(|_| prev.clone()).collect();
            let expect: Vec<f64> = s.lin.forward(&patch).into_iter().map(libm::tanh).collect();
            for t in 0..tap.tokens() {
                let c = expect.len();
                let want: Vec<f64> = expect.iter().zip(&pos[t * c..(t + 1) * c]).map(|(a, p)| a + p).collect();
                assert_eq!(tap.token(t), want.as_slice());
            }
            prev = expect;
        }
        let stem_bias: Vec<f64> = enc.stages[0].lin.bias.clone().unwrap().into_iter().map(libm::tanh).collect();
        let first: Vec<f64> = f.taps[0].token(0).iter().zip(&enc.pos[0]).map(|(a, p)| a - p).collect();
        for (a, b) in first.iter().zip(&stem_bias) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn image_encoder_gradient_matches_finite_differences() {
        let enc = small_image_encoder(32, 3);
        let mut rng = from_seed(4);
        let mut img = FeatureMap::zeros(32, 32, 3);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        let readout: [Vec<f64>; 4] = core::array::from_fn(|i| {
            let n = [64, 16, 4, 1][i] * 3;
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        });
        let scalar = |e: &ImageEncoder, x: &FeatureMap| {
            let f = e.encode(x).unwrap();
            f.taps.iter().zip(&readout).map(|(t, r)| math::dot(&t.data, r)).sum::<f64>()
        };
        let (_, acts) = enc.encode_cached(&img).unwrap();
        let mut grad = enc.zeros_like();
        let d_img = enc.backward(&img, &acts, &readout, &mut grad);

        let h = 1e-6;
        let gt = grad.tensors();
        for (ti, t) in enc.tensors().iter().enumerate() {
            for idx in [0, t.data.len() / 2, t.data.len() - 1] {
                let mut p = enc.clone();
                p.tensors_mut()[ti][idx] += h;
                let mut m = enc.clone();
                m.tensors_mut()[ti][idx] -= h;
                let fd = (scalar(&p, &img) - scalar(&m, &img)) / (2.0 * h);
                let an = gt[ti].data[idx];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{} {idx}: {fd} vs {an}", t.name);
            }
        }
        for idx in [0, 500, 3071] {
            let mut p = img.clone();
            p.data[idx] += h;
            let mut m = img.clone();
            m.data[idx] -= h;
            let fd = (scalar(&enc, &p) - scalar(&enc, &m)) / (2.0 * h);
            assert!((fd - d_img.data[idx]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn text_encoder_is_bag_of_tokens() {
        let enc = TextEncoder::new(256, 8, 6, &mut from_seed(5));
        assert_eq!(enc.encode("a b").unwrap(), enc.encode("b a").unwrap());
        assert_eq!(enc.encode("A  b").unwrap(), enc.encode("b a").unwrap());
        let single = enc.encode("heated").unwrap();
        assert_eq!(single, enc.proj.forward(enc.row(enc.bucket("heated"))));
        assert!(matches!(enc.encode("   "), Err(Error::Empty(_))));
    }

    #[test]
    fn disjoint_vocabularies_rarely_collide() {
        // Sampled collision check: distinct single-word texts map to distinct
        // features unless their buckets coincide.
        let enc = TextEncoder::new(4096, 16, 16, &mut from_seed(6));
        let mut collisions = 0;
        for i in 0..500 {
            let a = alloc::format!("alpha{i}");
            let b = alloc::format!("beta{i}");
            if enc.encode(&a).unwrap() == enc.encode(&b).unwrap() {
                collisions += 1;
                assert_eq!(enc.bucket(&a), enc.bucket(&b));
            }
        }
        assert!(collisions <= 2, "{collisions}");
    }

    #[test]
    fn face_encoder_defaults_to_center_crop() {
        let enc = FaceEncoder::new(16, 8, &mut from_seed(7));
        let mut rng = from_seed(8);
        let mut img = FeatureMap::zeros(64, 64, 3);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        assert_eq!(
            enc.encode(&img, None).unwrap(),
            enc.encode(&img, Some(BBox::CENTER)).unwrap()
        );
        assert_eq!(enc.encode(&img, None).unwrap().len(), 8);
        let flat = BBox { x1: 0.3, y1: 0.3, x2: 0.3, y2: 0.6 };
        assert!(matches!(enc.encode(&img, Some(flat)), Err(Error::DegenerateBox(_))));
    }

    #[test]
    fn face_encoder_gradient_matches_finite_differences() {
        let enc = FaceEncoder::new(16, 5, &mut from_seed(10));
        let mut rng = from_seed(11);
        let mut crop = FeatureMap::zeros(16, 16, FACE_CHANNELS);
        crop.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        let r: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scalar = |e: &FaceEncoder| math::dot(&e.forward_crop(&crop).unwrap().out, &r);
        let cache = enc.forward_crop(&crop).unwrap();
        let mut grad = enc.zeros_like();
        enc.backward(&cache, &r, &mut grad);
        let h = 1e-6;
        let gt = grad.tensors();
        for (ti, t) in enc.tensors().iter().enumerate() {
            for idx in [0, t.data.len() / 3, t.data.len() - 1] {
                let mut p = enc.clone();
                p.tensors_mut()[ti][idx] += h;
                let mut m = enc.clone();
                m.tensors_mut()[ti][idx] -= h;
                let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
                let an = gt[ti].data[idx];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{} {idx}: {fd} vs {an}", t.name);
            }
        }
    }

    #[test]
    fn preprocess_scales_and_resizes() {
        let img = ImageBuf::filled(10, 20, [255, 0, 51]);
        let t = preprocess(&img, 8);
        assert_eq!((t.h, t.w, t.c), (8, 8, 3));
        for px in t.data.chunks(3) {
            assert!((px[0] - 1.0).abs() < 1e-12 && px[1] == 0.0 && (px[2] - 0.2).abs() < 1e-12);
        }
    }
}
