//! Cross-modal fusion.
//!
//! Per depth, visual tokens are rectified by a bias-free linear map, scored
//! against the projected text feature, and aggregated as a score-weighted
//! token average (softmax-free linear attention) followed by an output map.
//! The four per-depth vectors are concatenated with the face feature.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoders::{FeatureMap, VisualFeatures};
use crate::error::{Error, Result};
use crate::math::{self, Linear};
use crate::params::{push_linear, push_linear_mut, Params, TensorRef};
use crate::rng::StreamRng;

pub const DEPTHS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFusion {
    /// `C_image -> C_fusion`, no bias.
    pub rectify: Linear,
    /// `C_text -> C_fusion`, no bias.
    pub query: Linear,
    /// `C_fusion -> C_fusion`, no bias.
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub depths: [DepthFusion; DEPTHS],
}

impl FusionParams {
    pub fn new(c_image: usize, c_text: usize, c_fusion: usize, rng: &mut StreamRng) -> Self {
        let depths = core::array::from_fn(|_| DepthFusion {
            rectify: Linear::uniform(c_image, c_fusion, false, 1.0, rng),
            query: Linear::uniform(c_text, c_fusion, false, 2.0, rng),
            output: Linear::uniform(c_fusion, c_fusion, false, 1.0, rng),
        });
        Self { depths }
    }

    pub fn c_fusion(&self) -> usize {
        self.depths[0].output.n_out
    }
}

impl Params for FusionParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, d) in self.depths.iter().enumerate() {
            push_linear(&mut out, &alloc::format!("depth{}.rectify", i + 1), &d.rectify);
            push_linear(&mut out, &alloc::format!("depth{}.query", i + 1), &d.query);
            push_linear(&mut out, &alloc::format!("depth{}.output", i + 1), &d.output);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in self.depths.iter_mut() {
            push_linear_mut(&mut out, &mut d.rectify);
            push_linear_mut(&mut out, &mut d.query);
            push_linear_mut(&mut out, &mut d.output);
        }
        out
    }
}

/// Rectified tokens, `tokens x C_fusion` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub tokens: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Rectified {
    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn rectify(tap: &FeatureMap, map: &Linear) -> Result<Rectified> {
    if tap.c != map.n_in {
        return Err(Error::shape("rectify input channels", map.n_in, tap.c));
    }
    let dim = map.n_out;
    let mut data = vec![0.0; tap.tokens() * dim];
    for t in 0..tap.tokens() {
        map.forward_into(tap.token(t), &mut data[t * dim..(t + 1) * dim]);
    }
    Ok(Rectified {
        tokens: tap.tokens(),
        dim,
        data,
    })
}

/// Intermediates of one [`cross_fuse`] call.
#[derive(Debug, Clone)]
pub struct CrossCache {
    pub query: Vec<f64>,
    pub scores: Vec<f64>,
    pub pooled: Vec<f64>,
    pub out: Vec<f64>,
}

/// `s_t = r_t . (W_q f)`, `z = sum_t s_t r_t / T`, `out = W_o z`.
pub fn cross_fuse(
    rect: &Rectified,
    text: &[f64],
    query: &Linear,
    output: &Linear,
) -> Result<CrossCache> {
    if text.len() != query.n_in {
        return Err(Error::shape("text feature", query.n_in, text.len()));
    }
    if query.n_out != rect.dim || output.n_in != rect.dim {
        return Err(Error::shape("fusion width", rect.dim, query.n_out));
    }
    let q = query.forward(text);
    let scores: Vec<f64> = (0..rect.tokens).map(|t| math::dot(rect.token(t), &q)).collect();
    let mut pooled = vec![0.0; rect.dim];
    for (t, &s) in scores.iter().enumerate() {
        math::axpy(s, rect.token(t), &mut pooled);
    }
    let n = rect.tokens as f64;
    pooled.iter_mut().for_each(|v| *v /= n);
    let out = output.forward(&pooled);
    Ok(CrossCache {
        query: q,
        scores,
        pooled,
        out,
    })
}

/// Gradients of [`cross_fuse`]: returns `(d_rect, d_text)` and accumulates
/// the query/output map gradients.
pub fn cross_fuse_backward(
    rect: &Rectified,
    text: &[f64],
    query: &Linear,
    output: &Linear,
    cache: &CrossCache,
    d_out: &[f64],
    grad_query: &mut Linear,
    grad_output: &mut Linear,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_pooled = vec![0.0; rect.dim];
    output.backward(&cache.pooled, d_out, grad_output, Some(&mut d_pooled));
    let n = rect.tokens as f64;
    let mut d_rect = vec![0.0; rect.data.len()];
    let mut d_q = vec![0.0; rect.dim];
    for t in 0..rect.tokens {
        let r = rect.token(t);
        let ds = math::dot(r, &d_pooled) / n;
        let dr = &mut d_rect[t * rect.dim..(t + 1) * rect.dim];
        math::axpy(cache.scores[t] / n, &d_pooled, dr);
        math::axpy(ds, &cache.query, dr);
        math::axpy(ds, r, &mut d_q);
    }
    let mut d_text = vec![0.0; text.len()];
    query.backward(text, &d_q, grad_query, Some(&mut d_text));
    (d_rect, d_text)
}

/// `concat(F_cross^1..F_cross^4, F_face)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionFeature {
    pub c_fusion: usize,
    pub c_face: usize,
    pub data: Vec<f64>,
}

impl FusionFeature {
    pub fn from_parts(cross: &[Vec<f64>], face: &[f64]) -> Self {
        let c_fusion = cross[0].len();
        let mut data = Vec::with_capacity(DEPTHS * c_fusion + face.len());
        for c in cross {
            data.extend_from_slice(c);
        }
        data.extend_from_slice(face);
        Self {
            c_fusion,
            c_face: face.len(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cross(&self, depth: usize) -> &[f64] {
        &self.data[depth * self.c_fusion..(depth + 1) * self.c_fusion]
    }

    pub fn cross_all(&self) -> &[f64] {
        &self.data[..DEPTHS * self.c_fusion]
    }

    pub fn face(&self) -> &[f64] {
        &self.data[DEPTHS * self.c_fusion..]
    }
}

/// Everything [`fuse_backward`] needs.
#[derive(Debug, Clone)]
pub struct FuseCache {
    pub rect: [Rectified; DEPTHS],
    pub cross: [CrossCache; DEPTHS],
}

pub fn fuse(
    vf: &VisualFeatures,
    text: &[f64],
    face: &[f64],
    params: &FusionParams,
) -> Result<(FusionFeature, FuseCache)> {
    let mut rects = Vec::with_capacity(DEPTHS);
    let mut crosses = Vec::with_capacity(DEPTHS);
    for (tap, d) in vf.taps.iter().zip(&params.depths) {
        let r = rectify(tap, &d.rectify)?;
        crosses.push(cross_fuse(&r, text, &d.query, &d.output)?);
        rects.push(r);
    }
    let outs: Vec<Vec<f64>> = crosses.iter().map(|c| c.out.clone()).collect();
    let feature = FusionFeature::from_parts(&outs, face);
    let rect: [Rectified; DEPTHS] = rects.try_into().expect("four depths");
    let cross: [CrossCache; DEPTHS] = crosses.try_into().expect("four depths");
    Ok((feature, FuseCache { rect, cross }))
}

/// Upstream gradients of [`fuse`].
#[derive(Debug, Clone)]
pub struct FuseGrads {
    pub taps: [Vec<f64>; DEPTHS],
    pub text: Vec<f64>,
    pub face: Vec<f64>,
}

pub fn fuse_backward(
    vf: &VisualFeatures,
    text: &[f64],
    params: &FusionParams,
    cache: &FuseCache,
    d_fusion: &[f64],
    grad: &mut FusionParams,
) -> FuseGrads {
    let c = params.c_fusion();
    let mut d_text = vec![0.0; text.len()];
    let taps = core::array::from_fn(|i| {
        let d = &params.depths[i];
        let g = &mut grad.depths[i];
        let (d_rect, dt) = cross_fuse_backward(
            &cache.rect[i],
            text,
            &d.query,
            &d.output,
            &cache.cross[i],
            &d_fusion[i * c..(i + 1) * c],
            &mut g.query,
            &mut g.output,
        );
        math::axpy(1.0, &dt, &mut d_text);
        let tap = &vf.taps[i];
        let mut d_tap = vec![0.0; tap.data.len()];
        for t in 0..tap.tokens() {
            d.rectify.backward(
                tap.token(t),
                &d_rect[t * c..(t + 1) * c],
                &mut g.rectify,
                Some(&mut d_tap[t * tap.c..(t + 1) * tap.c]),
            );
        }
        d_tap
    });
    FuseGrads {
        taps,
        text: d_text,
        face: d_fusion[DEPTHS * c..].to_vec(),
    }
}
