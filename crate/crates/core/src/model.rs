//! The assembled detector-reasoner and its parameter groups.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{BBox, ImageBuf};
use crate::decoder::{encode_bytes, Decoder, DecoderConfig, ReasoningOutput};
use crate::encoders::{preprocess, FaceCache, FaceEncoder, FeatureMap, ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionParams};
use crate::params::{Params, TensorRef};
use crate::prompt::{HeadOutput, PromptForward, PromptLearner, PromptShape};
use crate::rng::{from_seed, substream_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub text_buckets: usize,
    pub text_embed: usize,
    pub text_dim: usize,
    pub face_crop: usize,
    pub face_dim: usize,
    pub fusion_dim: usize,
    pub head_hidden: usize,
    pub converter_hidden: usize,
    pub prompt: PromptShape,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            image_channels: 64,
            text_buckets: 4096,
            text_embed: 64,
            text_dim: 64,
            face_crop: 32,
            face_dim: 32,
            fusion_dim: 64,
            head_hidden: 256,
            converter_hidden: 128,
            prompt: PromptShape::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size % 32 != 0 || self.image_size == 0 {
            return Err(Error::Config("image_size must be a positive multiple of 32".into()));
        }
        if self.face_crop % 8 != 0 || self.face_crop == 0 {
            return Err(Error::Config("face_crop must be a positive multiple of 8".into()));
        }
        if self.prompt.dim != self.decoder.dim {
            return Err(Error::Config(format!(
                "prompt width {} differs from decoder width {}",
                self.prompt.dim, self.decoder.dim
            )));
        }
        if self.prompt.rows() >= self.decoder.max_positions {
            return Err(Error::Config("prompt rows exceed decoder positions".into()));
        }
        let dims = [
            self.image_channels,
            self.text_buckets,
            self.text_embed,
            self.text_dim,
            self.face_dim,
            self.fusion_dim,
            self.head_hidden,
            self.converter_hidden,
        ];
        if dims.contains(&0) || self.decoder.vocab == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn fusion_len(&self) -> usize {
        crate::fusion::DEPTHS * self.fusion_dim + self.face_dim
    }
}

/// Independently checkpointed parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    ImageEncoder,
    TextEncoder,
    FaceEncoder,
    Fusion,
    PromptLearner,
    Decoder,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::ImageEncoder,
        Component::TextEncoder,
        Component::FaceEncoder,
        Component::Fusion,
        Component::PromptLearner,
        Component::Decoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::ImageEncoder => "encoders.image",
            Component::TextEncoder => "encoders.text",
            Component::FaceEncoder => "encoders.face",
            Component::Fusion => "fusion",
            Component::PromptLearner => "prompt_learner",
            Component::Decoder => "decoder",
        }
    }

    /// File stem used for the group's checkpoint.
    pub fn file_stem(self) -> &'static str {
        match self {
            Component::ImageEncoder => "image_encoder",
            Component::TextEncoder => "text_encoder",
            Component::FaceEncoder => "face_encoder",
            Component::Fusion => "fusion",
            Component::PromptLearner => "prompt_learner",
            Component::Decoder => "decoder",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.file_stem() == s)
            .ok_or_else(|| Error::Config(format!("unknown component `{s}`")))
    }
}

/// Modalities replaced by zero features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub image: bool,
    pub text: bool,
    pub face: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        image: false,
        text: false,
        face: false,
    };

    pub fn validate(&self) -> Result<()> {
        if self.image && self.text && self.face {
            return Err(Error::Config("cannot drop every modality".into()));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    /// Comma-separated subset of `image`, `text`, `face`; empty means none.
    pub fn parse(s: &str) -> Result<Self> {
        let mut a = Ablation::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "image" | "I" => a.image = true,
                "text" | "T" => a.text = true,
                "face" | "F" => a.face = true,
                other => return Err(Error::Config(format!("unknown modality `{other}`"))),
            }
        }
        a.validate()?;
        Ok(a)
    }

    /// Report label, e.g. `w.o F`.
    pub fn label(&self) -> String {
        if self.is_none() {
            return "M-DRUM".into();
        }
        let mut s = String::from("w.o ");
        for (on, c) in [(self.image, 'I'), (self.text, 'T'), (self.face, 'F')] {
            if on {
                s.push(c);
            }
        }
        s
    }

    pub fn key(&self) -> String {
        let parts: Vec<&str> = [(self.image, "image"), (self.text, "text"), (self.face, "face")]
            .into_iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .collect();
        parts.join(",")
    }
}

/// Outputs of the frozen image/text/fusion path for one sample, plus the
/// face crop that the (possibly trainable) face encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFeatures {
    pub cross: Vec<f64>,
    pub pooled_deep: Vec<f64>,
    pub crop: FeatureMap,
}

/// Forward pass above the frozen features.
#[derive(Debug, Clone)]
pub struct Forward {
    pub face: Option<FaceCache>,
    pub fusion: Vec<f64>,
    pub prompt: PromptForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub image_encoder: ImageEncoder,
    pub text_encoder: TextEncoder,
    pub face_encoder: FaceEncoder,
    pub fusion: FusionParams,
    pub prompt_learner: PromptLearner,
    pub decoder: Decoder,
}

impl Model {
    /// Fresh model; every group draws from its own named substream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = |c: Component| from_seed(substream_seed(seed, &format!("init.{}", c.as_str())));
        let c = &config;
        Ok(Self {
            image_encoder: ImageEncoder::new(c.image_size, c.image_channels, &mut rng(Component::ImageEncoder)),
            text_encoder: TextEncoder::new(c.text_buckets, c.text_embed, c.text_dim, &mut rng(Component::TextEncoder)),
            face_encoder: FaceEncoder::new(c.face_crop, c.face_dim, &mut rng(Component::FaceEncoder)),
            fusion: FusionParams::new(c.image_channels, c.text_dim, c.fusion_dim, &mut rng(Component::Fusion)),
            prompt_learner: PromptLearner::new(
                c.fusion_len(),
                c.image_channels,
                c.head_hidden,
                c.converter_hidden,
                c.prompt,
                &mut rng(Component::PromptLearner),
            ),
            decoder: Decoder::new(c.decoder, &mut rng(Component::Decoder)),
            config,
        })
    }

    pub fn tensors(&self, c: Component) -> Vec<TensorRef<'_>> {
        match c {
            Component::ImageEncoder => self.image_encoder.tensors(),
            Component::TextEncoder => self.text_encoder.tensors(),
            Component::FaceEncoder => self.face_encoder.tensors(),
            Component::Fusion => self.fusion.tensors(),
            Component::PromptLearner => self.prompt_learner.tensors(),
            Component::Decoder => self.decoder.tensors(),
        }
    }

    pub fn tensors_mut(&mut self, c: Component) -> Vec<&mut [f64]> {
        match c {
            Component::ImageEncoder => self.image_encoder.tensors_mut(),
            Component::TextEncoder => self.text_encoder.tensors_mut(),
            Component::FaceEncoder => self.face_encoder.tensors_mut(),
            Component::Fusion => self.fusion.tensors_mut(),
            Component::PromptLearner => self.prompt_learner.tensors_mut(),
            Component::Decoder => self.decoder.tensors_mut(),
        }
    }

    pub fn group_eq(&self, other: &Model, c: Component) -> bool {
        match c {
            Component::ImageEncoder => self.image_encoder.bitwise_eq(&other.image_encoder),
            Component::TextEncoder => self.text_encoder.bitwise_eq(&other.text_encoder),
            Component::FaceEncoder => self.face_encoder.bitwise_eq(&other.face_encoder),
            Component::Fusion => self.fusion.bitwise_eq(&other.fusion),
            Component::PromptLearner => self.prompt_learner.bitwise_eq(&other.prompt_learner),
            Component::Decoder => self.decoder.bitwise_eq(&other.decoder),
        }
    }

    pub fn all_finite(&self) -> bool {
        Component::ALL
            .iter()
            .all(|&c| self.tensors(c).iter().all(|t| t.data.iter().all(|v| v.is_finite())))
    }

    /// Frozen-path features. `bbox_hint` picks the face crop; `None` means
    /// the center crop.
    pub fn frozen_features(
        &self,
        image: &ImageBuf,
        text: &str,
        bbox_hint: Option<BBox>,
        ablation: Ablation,
    ) -> Result<FrozenFeatures> {
        ablation.validate()?;
        let img = preprocess(image, self.config.image_size);
        let mut vf = self.image_encoder.encode(&img)?;
        if ablation.image {
            vf = vf.zeros_like();
        }
        let mut tf = self.text_encoder.encode(text)?;
        if ablation.text {
            tf.fill(0.0);
        }
        let no_face = vec![0.0; self.config.face_dim];
        let (fusion, _) = fuse(&vf, &tf, &no_face, &self.fusion)?;
        Ok(FrozenFeatures {
            cross: fusion.cross_all().to_vec(),
            pooled_deep: vf.taps[3].mean_pool(),
            crop: self.face_encoder.crop(&img, bbox_hint)?,
        })
    }

    pub fn forward(&self, feats: &FrozenFeatures, ablation: Ablation) -> Result<Forward> {
        let (face, face_out) = if ablation.face {
            (None, vec![0.0; self.config.face_dim])
        } else {
            let cache = self.face_encoder.forward_crop(&feats.crop)?;
            let out = cache.out.clone();
            (Some(cache), out)
        };
        let mut fusion = feats.cross.clone();
        fusion.extend_from_slice(&face_out);
        let prompt = self.prompt_learner.forward(&fusion, &feats.pooled_deep)?;
        Ok(Forward { face, fusion, prompt })
    }

    /// Inference path: center face crop, head outputs and prompt.
    pub fn infer(&self, image: &ImageBuf, text: &str, ablation: Ablation) -> Result<Forward> {
        let feats = self.frozen_features(image, text, None, ablation)?;
        self.forward(&feats, ablation)
    }

    pub fn predict(&self, image: &ImageBuf, text: &str, ablation: Ablation) -> Result<HeadOutput> {
        Ok(self.infer(image, text, ablation)?.prompt.head)
    }

    /// Head outputs and greedy reasoning text.
    pub fn reason(
        &self,
        image: &ImageBuf,
        text: &str,
        max_len: usize,
        ablation: Ablation,
    ) -> Result<(HeadOutput, ReasoningOutput)> {
        let fwd = self.infer(image, text, ablation)?;
        let out = self
            .decoder
            .generate(&fwd.prompt.pack.rows(), &encode_bytes(text), max_len)?;
        Ok((fwd.prompt.head, out))
    }
}
