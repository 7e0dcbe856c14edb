//! Synthetic benchmark generator: base news, the three manipulation
//! approaches and the consistency filter.

mod lexicon;
mod ner;
pub mod render;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

pub use lexicon::Lexicon;
pub use ner::{find_entity, replace_span, EntitySpan};
use render::{draw_face, draw_scene, Appearance};

use crate::data::{
    reasoning, sample_id, BBox, Dataset, Domain, ImageBuf, Label, ManipClass, ManipKind, NewsSample, Split,
};
use crate::encoders::{preprocess, ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{from_seed, indexed_seed, substream_seed, Rng, StreamRng};

/// Peak per-pixel blending noise added by a face swap.
pub const SWAP_NOISE: i32 = 20;
/// Per-pixel perturbation of an edit at strength 1.
pub const EDIT_NOISE: f64 = 32.0;
/// Regeneration cap per sample for the consistency filter.
pub const MAX_ATTEMPTS: u32 = 64;
/// Seed of the fixed consistency scorer, shared by every forge run.
pub const SCORER_SEED: u64 = 0x5C0_2E;

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeConfig {
    pub n_samples: usize,
    pub manip_rate: f64,
    pub multimodal_rate: f64,
    /// Weights for entertainment, sport, politics, others.
    pub domain_mix: [f64; 4],
    pub consistency_threshold: f64,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            n_samples: 655,
            manip_rate: 0.684,
            multimodal_rate: 0.078,
            domain_mix: [0.25; 4],
            consistency_threshold: -0.2,
            seed: 0,
            image_size: 224,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !frac(self.manip_rate) || !frac(self.multimodal_rate) {
            return Err(Error::Config("rates must lie in [0,1]".into()));
        }
        if self.multimodal_rate > self.manip_rate {
            return Err(Error::Config(format!(
                "multimodal_rate {} exceeds manip_rate {}",
                self.multimodal_rate, self.manip_rate
            )));
        }
        if self.domain_mix.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (self.domain_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("domain_mix must be nonnegative weights summing to 1".into()));
        }
        if !self.consistency_threshold.is_finite() || !(-1.0..=1.0).contains(&self.consistency_threshold) {
            return Err(Error::Config("consistency_threshold must lie in [-1,1]".into()));
        }
        if self.image_size < 112 {
            return Err(Error::Config("image_size must be at least 112".into()));
        }
        Ok(())
    }

    /// Number of fake and cross-modal samples the config asks for.
    pub fn class_counts(&self) -> (usize, usize) {
        let n = self.n_samples as f64;
        (
            math::round(n * self.manip_rate) as usize,
            math::round(n * self.multimodal_rate) as usize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageManip {
    Swap,
    /// `strength` in `[0,1]` scales the perturbation amplitude.
    Edit { strength: f64 },
}

const TEMPLATES: [&[&str]; 4] = [
    &[
        "{name} premieres a new film and receives {key}",
        "{name} performs at the music festival to {key}",
        "{name} hosts the award gala amid {key}",
    ],
    &[
        "{name} returns triumphantly and receives {key}",
        "{name} wins the final match to {key}",
        "{name} breaks the national record amid {key}",
    ],
    &[
        "{name} announces a new policy and meets {key}",
        "{name} delivers a campaign speech to {key}",
        "{name} signs the trade agreement amid {key}",
    ],
    &[
        "{name} opens a charity school and receives {key}",
        "{name} visits flood victims to {key}",
        "{name} launches a startup amid {key}",
    ],
];

fn summary(domain: Domain, text: &str) -> String {
    format!("The photo shows a person in a {domain} scene and the headline reads: {text}.")
}

fn real_annotation(domain: Domain, text: &str) -> String {
    reasoning::compose(
        &format!("{}.", reasoning::REAL),
        &summary(domain, text),
        "The face looks natural and the headline is consistent with the pictured person.",
    )
}

fn region(b: &BBox) -> String {
    format!("({:.2}, {:.2}, {:.2}, {:.2})", b.x1, b.y1, b.x2, b.y2)
}

/// Mark `s` as manipulated by `kind` and extend its annotation with `clue`.
fn mark_fake(mut s: NewsSample, kind: ManipKind, clue: &str) -> Result<NewsSample> {
    let previous = match (s.label, reasoning::split(&s.reasoning)) {
        (Label::Fake, Some(sec)) => Some(sec.clue.to_string()),
        _ => None,
    };
    s.fake_cls = s.fake_cls.with(kind)?;
    s.label = Label::Fake;
    let clue = match previous {
        Some(p) => format!("{p} {clue}"),
        None => clue.to_string(),
    };
    s.reasoning = reasoning::compose(&format!("{}.", reasoning::FAKE), &summary(s.domain, &s.text), &clue);
    Ok(s)
}

fn perturb(img: &mut ImageBuf, x: usize, y: usize, delta: i32) {
    let p = img.pixel(x, y).map(|v| (v as i32 + delta).clamp(0, 255) as u8);
    img.set_pixel(x, y, p);
}

pub fn apply_image_manip(s: NewsSample, mode: ImageManip, seed: u64) -> Result<NewsSample> {
    let bbox = s
        .face_bbox
        .ok_or_else(|| Error::Forge(format!("sample {} has no face region", s.id)))?;
    let rect = bbox.to_pixels(s.image.width, s.image.height);
    if rect.width() == 0 || rect.height() == 0 {
        return Err(Error::DegenerateBox("face region covers no pixel"));
    }
    let mut rng = from_seed(seed);
    let mut out = s;
    let clue = match mode {
        ImageManip::Swap => {
            let donor = Appearance::random(&mut rng);
            draw_face(&mut out.image, rect, &donor);
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let mag = rng.gen_range(1..=SWAP_NOISE);
                    perturb(&mut out.image, x, y, if rng.gen() { mag } else { -mag });
                }
            }
            format!(
                "The face in region {} has been swapped with another person's face and blending traces surround it.",
                region(&bbox)
            )
        }
        ImageManip::Edit { strength } => {
            if !strength.is_finite() || !(0.0..=1.0).contains(&strength) {
                return Err(Error::Forge(format!("edit strength {strength} outside [0,1]")));
            }
            let amp = math::round(strength * EDIT_NOISE) as i32;
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let sign = if rng.gen() { 1 } else { -1 };
                    if amp != 0 {
                        perturb(&mut out.image, x, y, sign * amp);
                    }
                }
            }
            format!(
                "The facial attributes in region {} have been edited and the skin texture looks unnatural.",
                region(&bbox)
            )
        }
    };
    mark_fake(out, ManipKind::Image, &clue)
}

/// Earliest word-bounded occurrence of any key: `(byte offset, pair index)`.
fn earliest_key(text: &str, lex: &Lexicon) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut best: Option<(usize, usize)> = None;
    for (i, (key, _)) in lex.reversal_pairs.iter().enumerate() {
        for (pos, _) in text.match_indices(key.as_str()) {
            let end = pos + key.len();
            let left = pos == 0 || bytes[pos - 1] == b' ';
            let right = end == bytes.len() || bytes[end] == b' ';
            if left && right {
                let better = match best {
                    None => true,
                    Some((p, j)) => pos < p || (pos == p && key.len() > lex.reversal_pairs[j].0.len()),
                };
                if better {
                    best = Some((pos, i));
                }
                break;
            }
        }
    }
    best
}

pub fn apply_text_manip(s: NewsSample, lex: &Lexicon) -> Result<NewsSample> {
    let (pos, i) = earliest_key(&s.text, lex)
        .ok_or_else(|| Error::Forge(format!("headline of {} contains no reversal key", s.id)))?;
    let (key, value) = &lex.reversal_pairs[i];
    let mut out = s;
    out.text = format!("{}{}{}", &out.text[..pos], value, &out.text[pos + key.len()..]);
    let clue = format!("The phrase \"{value}\" reverses the original meaning \"{key}\" of the headline.");
    mark_fake(out, ManipKind::Text, &clue)
}

/// Name that replaces `entity` under `seed`.
pub fn pick_replacement<'a>(entity: &str, lex: &'a Lexicon, seed: u64) -> Result<&'a str> {
    let candidates: Vec<&str> = lex
        .entity_names
        .iter()
        .map(String::as_str)
        .filter(|n| *n != entity)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Forge(format!("no replacement name differs from `{entity}`")));
    }
    Ok(candidates[from_seed(seed).gen_range(0..candidates.len())])
}

pub fn apply_fact_manip(s: NewsSample, lex: &Lexicon, seed: u64) -> Result<NewsSample> {
    let span = find_entity(&s.text)
        .ok_or_else(|| Error::Forge(format!("headline of {} names no entity", s.id)))?;
    let name = pick_replacement(&span.name, lex, seed)?;
    let mut out = s;
    out.text = replace_span(&out.text, &span, name);
    let clue = format!(
        "The headline names {name} but the pictured person is {}, so the entity has been replaced.",
        span.name
    );
    mark_fake(out, ManipKind::Fact, &clue)
}

/// Cosine similarity of two embeddings, clamped to `[-1,1]`.
pub fn consistency_score(image_emb: &[f64], text_emb: &[f64]) -> f64 {
    math::cosine(image_emb, text_emb).clamp(-1.0, 1.0)
}

/// Fixed encoders used only to score image-text consistency.
#[derive(Debug, Clone)]
pub struct ConsistencyScorer {
    pub image: ImageEncoder,
    pub text: TextEncoder,
}

impl ConsistencyScorer {
    pub fn new(seed: u64) -> Self {
        let mut rng = from_seed(substream_seed(seed, "scorer.image"));
        let image = ImageEncoder::new(224, 64, &mut rng);
        let mut rng = from_seed(substream_seed(seed, "scorer.text"));
        let text = TextEncoder::new(4096, 64, 64, &mut rng);
        Self { image, text }
    }

    pub fn score(&self, image: &ImageBuf, text: &str) -> Result<f64> {
        let feats = self.image.encode(&preprocess(image, self.image.input_size))?;
        let img_emb = feats.taps[3].mean_pool();
        let txt_emb = self.text.encode(text)?;
        Ok(consistency_score(&img_emb, &txt_emb))
    }
}

impl Default for ConsistencyScorer {
    fn default() -> Self {
        Self::new(SCORER_SEED)
    }
}

fn pick_domain(mix: &[f64; 4], rng: &mut StreamRng) -> Domain {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (d, w) in Domain::ALL.iter().zip(mix) {
        acc += w;
        if u < acc {
            return *d;
        }
    }
    *Domain::ALL.iter().zip(mix).rev().find(|(_, w)| **w > 0.0).map(|(d, _)| d).unwrap_or(&Domain::Others)
}

/// Unmanipulated sample `index`, regeneration `attempt`.
pub fn base_sample(cfg: &ForgeConfig, lex: &Lexicon, index: usize, attempt: u32) -> Result<NewsSample> {
    let stream = substream_seed(cfg.seed, "forge.base");
    let mut rng = from_seed(indexed_seed(stream, ((index as u64) << 16) | attempt as u64));
    let domain = pick_domain(&cfg.domain_mix, &mut rng);
    let name = &lex.entity_names[rng.gen_range(0..lex.entity_names.len())];
    let key = &lex.reversal_pairs[rng.gen_range(0..lex.reversal_pairs.len())].0;
    let templates = TEMPLATES[domain.index()];
    let text = templates[rng.gen_range(0..templates.len())]
        .replace("{name}", name)
        .replace("{key}", key);
    let (image, rect) = draw_scene(cfg.image_size, domain, &Appearance::of_name(name), &mut rng);
    let face_bbox = Some(BBox::from_pixels(rect, cfg.image_size, cfg.image_size)?);
    Ok(NewsSample {
        id: sample_id(index),
        reasoning: real_annotation(domain, &text),
        image,
        text,
        domain,
        label: Label::Real,
        fake_cls: ManipClass::Orig,
        face_bbox,
    })
}

pub fn generate_base(cfg: &ForgeConfig, lex: &Lexicon) -> Result<Dataset> {
    cfg.validate()?;
    lex.validate()?;
    let samples = (0..cfg.n_samples)
        .map(|i| base_sample(cfg, lex, i, 0))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Split::Train, cfg.seed, samples)
}

/// Shuffled per-sample classes realizing the configured rates.
pub fn assign_classes(cfg: &ForgeConfig) -> Vec<ManipClass> {
    let (n_fake, n_cross) = cfg.class_counts();
    let n_single = n_fake - n_cross;
    let mut classes = Vec::with_capacity(cfg.n_samples);
    let single = [ManipClass::Image, ManipClass::Text, ManipClass::Fact];
    for (i, c) in single.iter().enumerate() {
        let k = n_single / 3 + usize::from(i < n_single % 3);
        classes.extend(core::iter::repeat(*c).take(k));
    }
    let cross = [ManipClass::ImageText, ManipClass::ImageFact];
    for (i, c) in cross.iter().enumerate() {
        let k = n_cross / 2 + usize::from(i < n_cross % 2);
        classes.extend(core::iter::repeat(*c).take(k));
    }
    classes.resize(cfg.n_samples, ManipClass::Orig);
    classes.shuffle(&mut from_seed(substream_seed(cfg.seed, "forge.assign")));
    classes
}

/// Base sample `index` that passes the consistency filter.
pub fn filtered_base(
    cfg: &ForgeConfig,
    lex: &Lexicon,
    scorer: &ConsistencyScorer,
    index: usize,
) -> Result<(NewsSample, u32)> {
    for attempt in 0..MAX_ATTEMPTS {
        let s = base_sample(cfg, lex, index, attempt)?;
        if scorer.score(&s.image, &s.text)? >= cfg.consistency_threshold {
            return Ok((s, attempt));
        }
    }
    Err(Error::Forge(format!(
        "sample {index}: no candidate reached consistency {} in {MAX_ATTEMPTS} attempts",
        cfg.consistency_threshold
    )))
}

/// Apply the manipulations of `class` to an original sample.
pub fn manipulate(s: NewsSample, class: ManipClass, lex: &Lexicon, seed: u64) -> Result<NewsSample> {
    let mut rng = from_seed(seed);
    let mut s = s;
    if class.has_image() {
        let mode = if rng.gen() {
            ImageManip::Swap
        } else {
            ImageManip::Edit {
                strength: rng.gen_range(0.5..=1.0),
            }
        };
        s = apply_image_manip(s, mode, rng.gen())?;
    }
    if class.has_text() {
        s = apply_text_manip(s, lex)?;
    }
    if class.has_fact() {
        s = apply_fact_manip(s, lex, rng.gen())?;
    }
    Ok(s)
}

pub fn forge_dataset(cfg: &ForgeConfig, lex: &Lexicon) -> Result<Dataset> {
    cfg.validate()?;
    lex.validate()?;
    let scorer = ConsistencyScorer::default();
    let classes = assign_classes(cfg);
    let manip_stream = substream_seed(cfg.seed, "forge.manip");
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for (i, class) in classes.iter().enumerate() {
        let (base, _) = filtered_base(cfg, lex, &scorer, i)?;
        samples.push(manipulate(base, *class, lex, indexed_seed(manip_stream, i as u64))?);
    }
    Dataset::new(Split::Train, cfg.seed, samples)
}

/// Deterministic train/test partition with `round(n * test_fraction)` test samples.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !test_fraction.is_finite() || !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config("test_fraction must lie in [0,1]".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut from_seed(substream_seed(seed, "forge.split")));
    let n_test = math::round(ds.len() as f64 * test_fraction) as usize;
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
    Ok((
        Dataset::new(Split::Train, seed, pick(&train_idx))?,
        Dataset::new(Split::Test, seed, pick(&test_idx))?,
    ))
}

#[cfg(test)]
mod tests;
