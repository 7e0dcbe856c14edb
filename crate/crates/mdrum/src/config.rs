//! Run settings: a flat config file, `--set` overrides, then explicit flags.

use std::collections::BTreeMap;
use std::path::Path;

use mdrum_core::forge::ForgeConfig;
use mdrum_core::loss::LossWeights;
use mdrum_core::model::ModelConfig;

use crate::error::{AppError, AppResult};
use crate::fsio::read_to_string;
use crate::kv;

type Field = (&'static str, fn(&ModelConfig) -> usize, fn(&mut ModelConfig, usize));

/// Every size knob of the model, as written to `model.cfg`.
const MODEL_FIELDS: &[Field] = &[
    ("image_size", |c| c.image_size, |c, v| c.image_size = v),
    ("image_channels", |c| c.image_channels, |c, v| c.image_channels = v),
    ("text_buckets", |c| c.text_buckets, |c, v| c.text_buckets = v),
    ("text_embed", |c| c.text_embed, |c, v| c.text_embed = v),
    ("text_dim", |c| c.text_dim, |c, v| c.text_dim = v),
    ("face_crop", |c| c.face_crop, |c, v| c.face_crop = v),
    ("face_dim", |c| c.face_dim, |c, v| c.face_dim = v),
    ("fusion_dim", |c| c.fusion_dim, |c, v| c.fusion_dim = v),
    ("head_hidden", |c| c.head_hidden, |c, v| c.head_hidden = v),
    ("converter_hidden", |c| c.converter_hidden, |c, v| c.converter_hidden = v),
    ("prompt.converter_rows", |c| c.prompt.converter_rows, |c, v| c.prompt.converter_rows = v),
    ("prompt.semantic_rows", |c| c.prompt.semantic_rows, |c, v| c.prompt.semantic_rows = v),
    ("prompt.adaptive_rows", |c| c.prompt.adaptive_rows, |c, v| c.prompt.adaptive_rows = v),
    ("prompt.dim", |c| c.prompt.dim, |c, v| c.prompt.dim = v),
    ("decoder.dim", |c| c.decoder.dim, |c, v| c.decoder.dim = v),
    ("decoder.layers", |c| c.decoder.layers, |c, v| c.decoder.layers = v),
    ("decoder.mlp", |c| c.decoder.mlp, |c, v| c.decoder.mlp = v),
    ("decoder.max_positions", |c| c.decoder.max_positions, |c, v| c.decoder.max_positions = v),
];

const FORGE_KEYS: &[&str] = &[
    "n_samples",
    "manip_rate",
    "multimodal_rate",
    "domain_mix",
    "consistency_threshold",
    "image_size",
    "test_fraction",
];

const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "batch_size",
    "max_steps",
    "weights.ce",
    "weights.llm",
    "weights.bbox",
    "weights.giou",
];

const EVAL_KEYS: &[&str] = &["max_len"];

/// Merged settings; keys are `section.name`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(config: Option<&Path>, overrides: &[String]) -> AppResult<Self> {
        let mut map = match config {
            Some(p) => kv::parse(&read_to_string(p)?).map_err(|e| e.context(&p.display().to_string()))?,
            None => BTreeMap::new(),
        };
        for o in overrides {
            let (k, v) = kv::parse_pair(o)?;
            map.insert(k, v);
        }
        let s = Self { map };
        s.check_keys()?;
        Ok(s)
    }

    fn check_keys(&self) -> AppResult<()> {
        for k in self.map.keys() {
            let known = match k.split_once('.') {
                Some(("forge", rest)) => FORGE_KEYS.contains(&rest),
                Some(("model", rest)) => MODEL_FIELDS.iter().any(|f| f.0 == rest),
                Some(("train", rest)) => TRAIN_KEYS.contains(&rest),
                Some(("eval", rest)) => EVAL_KEYS.contains(&rest),
                _ => false,
            };
            if !known {
                return Err(AppError::Usage(format!("unknown setting `{k}`")));
            }
        }
        Ok(())
    }

    /// Flags win over the file and `--set`.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> AppResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.map.get(key).map(|v| kv::parse_value(key, v)).transpose()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&String, &String)> {
        self.map.iter()
    }

    pub fn forge_config(&self, seed: u64) -> AppResult<ForgeConfig> {
        let mut c = ForgeConfig {
            seed,
            ..ForgeConfig::default()
        };
        if let Some(v) = self.get("forge.n_samples")? {
            c.n_samples = v;
        }
        if let Some(v) = self.get("forge.manip_rate")? {
            c.manip_rate = v;
        }
        if let Some(v) = self.get("forge.multimodal_rate")? {
            c.multimodal_rate = v;
        }
        if let Some(v) = self.get("forge.consistency_threshold")? {
            c.consistency_threshold = v;
        }
        if let Some(v) = self.get("forge.image_size")? {
            c.image_size = v;
        }
        if let Some(v) = self.map.get("forge.domain_mix") {
            let parts: Vec<f64> = v
                .split(',')
                .map(|p| kv::parse_value("forge.domain_mix", p.trim()))
                .collect::<AppResult<_>>()?;
            let mix: [f64; 4] = parts
                .try_into()
                .map_err(|_| AppError::Usage("forge.domain_mix needs 4 comma-separated weights".into()))?;
            // Relative weights are accepted; the forge wants them normalized.
            let sum: f64 = mix.iter().sum();
            c.domain_mix = if sum > 0.0 { mix.map(|w| w / sum) } else { mix };
        }
        c.validate()?;
        Ok(c)
    }

    pub fn test_fraction(&self) -> AppResult<f64> {
        Ok(self.get("forge.test_fraction")?.unwrap_or(0.2))
    }

    pub fn model_config(&self) -> AppResult<ModelConfig> {
        let mut c = ModelConfig::default();
        for (name, _, set) in MODEL_FIELDS {
            if let Some(v) = self.get(&format!("model.{name}"))? {
                set(&mut c, v);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn train_settings(&self) -> AppResult<TrainSettings> {
        let mut t = TrainSettings::default();
        if let Some(v) = self.get("train.epochs")? {
            t.epochs = v;
        }
        if let Some(v) = self.get("train.lr")? {
            t.lr = v;
        }
        if let Some(v) = self.get("train.batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = self.get("train.max_steps")? {
            t.max_steps = Some(v);
        }
        if let Some(v) = self.get("train.weights.ce")? {
            t.weights.ce = v;
        }
        if let Some(v) = self.get("train.weights.llm")? {
            t.weights.llm = v;
        }
        if let Some(v) = self.get("train.weights.bbox")? {
            t.weights.bbox = v;
        }
        if let Some(v) = self.get("train.weights.giou")? {
            t.weights.giou = v;
        }
        t.weights.validate()?;
        Ok(t)
    }

    pub fn max_len(&self) -> AppResult<usize> {
        Ok(self.get("eval.max_len")?.unwrap_or(480))
    }
}

/// Optimizer settings shared by every stage of a `train` run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
    pub weights: LossWeights,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 1e-3,
            batch_size: 16,
            max_steps: None,
            weights: LossWeights::default(),
        }
    }
}

pub fn render_model_config(c: &ModelConfig) -> String {
    let pairs: Vec<(&str, String)> = MODEL_FIELDS.iter().map(|(k, get, _)| (*k, get(c).to_string())).collect();
    kv::render(&pairs)
}

/// Inverse of [`render_model_config`]; every field must be present.
pub fn parse_model_config(text: &str) -> AppResult<ModelConfig> {
    let map = kv::parse(text)?;
    let mut c = ModelConfig::default();
    for (name, _, set) in MODEL_FIELDS {
        let v = map
            .get(*name)
            .ok_or_else(|| AppError::Data(format!("model config lacks `{name}`")))?;
        set(&mut c, kv::parse_value(name, v).map_err(|e| AppError::Data(e.to_string()))?);
    }
    if let Some(k) = map.keys().find(|k| !MODEL_FIELDS.iter().any(|f| f.0 == k.as_str())) {
        return Err(AppError::Data(format!("model config has unknown key `{k}`")));
    }
    c.validate().map_err(|e| AppError::Data(e.to_string()))?;
    Ok(c)
}
