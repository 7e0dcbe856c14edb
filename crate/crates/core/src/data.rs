//! Canonical sample and dataset types.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Box in normalized image coordinates (fractions of width/height).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn validate(&self) -> Result<()> {
        let coords = self.to_array();
        if coords.iter().any(|c| !c.is_finite() || !(0.0..=1.0).contains(c)) {
            return Err(Error::schema("face_bbox", "coordinates must lie in [0,1]"));
        }
        if self.x1 >= self.x2 {
            return Err(Error::schema("face_bbox", "x1<x2 violated"));
        }
        if self.y1 >= self.y2 {
            return Err(Error::schema("face_bbox", "y1<y2 violated"));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    /// Pixel rectangle `[x0, x1) x [y0, y1)` for an image of the given size.
    pub fn to_pixels(&self, width: usize, height: usize) -> PixelRect {
        let px = |v: f64, n: usize| (crate::math::round(v * n as f64) as usize).min(n);
        PixelRect {
            x0: px(self.x1, width),
            y0: px(self.y1, height),
            x1: px(self.x2, width),
            y1: px(self.y2, height),
        }
    }

    pub fn from_pixels(r: PixelRect, width: usize, height: usize) -> Result<Self> {
        Self::new(
            r.x0 as f64 / width as f64,
            r.y0 as f64 / height as f64,
            r.x1 as f64 / width as f64,
            r.y1 as f64 / height as f64,
        )
    }

    /// Central crop `[0.3, 0.7]^2` used when no face hint is available.
    pub const CENTER: BBox = BBox {
        x1: 0.3,
        y1: 0.3,
        x2: 0.7,
        y2: 0.7,
    };
}

/// Half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }
}

macro_rules! string_enum {
    ($(#[$m:meta])* $name:ident, $field:literal { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(Error::schema($field, format!("unknown value `{other}`"))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(
    /// Manipulation class: real news, three single-modality types and two
    /// cross-modal types.
    ManipClass, "fake_cls" {
        Orig => "orig",
        Image => "image",
        Text => "text",
        Fact => "fact",
        ImageText => "image&text",
        ImageFact => "image&fact",
    }
);

string_enum!(
    Domain, "domain" {
        Entertainment => "entertainment",
        Sport => "sport",
        Politics => "politics",
        Others => "others",
    }
);

string_enum!(
    Split, "split" {
        Train => "train",
        Test => "test",
    }
);

/// A single manipulation applied on top of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManipKind {
    Image,
    Text,
    Fact,
}

impl ManipClass {
    pub fn has_image(self) -> bool {
        matches!(self, Self::Image | Self::ImageText | Self::ImageFact)
    }

    pub fn has_text(self) -> bool {
        matches!(self, Self::Text | Self::ImageText)
    }

    pub fn has_fact(self) -> bool {
        matches!(self, Self::Fact | Self::ImageFact)
    }

    pub fn is_cross_modal(self) -> bool {
        matches!(self, Self::ImageText | Self::ImageFact)
    }

    pub fn label(self) -> Label {
        if self == Self::Orig {
            Label::Real
        } else {
            Label::Fake
        }
    }

    /// Class after additionally applying `kind`.
    pub fn with(self, kind: ManipKind) -> Result<Self> {
        use ManipClass::*;
        let (image, text, fact) = match kind {
            ManipKind::Image => (true, self.has_text(), self.has_fact()),
            ManipKind::Text => (self.has_image(), true, self.has_fact()),
            ManipKind::Fact => (self.has_image(), self.has_text(), true),
        };
        match (image, text, fact) {
            (true, false, false) => Ok(Image),
            (false, true, false) => Ok(Text),
            (false, false, true) => Ok(Fact),
            (true, true, false) => Ok(ImageText),
            (true, false, true) => Ok(ImageFact),
            _ => Err(Error::Forge(format!(
                "cannot combine {} with {:?}",
                self.as_str(),
                kind
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::schema("label", format!("expected 0 or 1, got {other}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// 8-bit RGB image, row-major `height x width x 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageBuf {
    pub const CHANNELS: usize = 3;

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::schema("image", "image has zero extent"));
        }
        if self.data.len() != self.width * self.height * 3 {
            return Err(Error::schema("image", "pixel buffer does not match H x W x 3"));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bounding rectangle of the pixels that differ from `other`, if any.
    pub fn diff_rect(&self, other: &ImageBuf) -> Option<PixelRect> {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut rect: Option<PixelRect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.pixel(x, y) != other.pixel(x, y) {
                    let r = rect.get_or_insert(PixelRect {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    r.x0 = r.x0.min(x);
                    r.y0 = r.y0.min(y);
                    r.x1 = r.x1.max(x + 1);
                    r.y1 = r.y1.max(y + 1);
                }
            }
        }
        rect
    }
}

/// Reasoning annotation: authenticity sentence, content summary and clue
/// revelation, stored as one string with sentinel headers.
pub mod reasoning {
    use super::*;

    pub const AUTH: &str = "[AUTH]";
    pub const SUMMARY: &str = "[SUMMARY]";
    pub const CLUE: &str = "[CLUE]";
    pub const REAL: &str = "Yes, the news is real";
    pub const FAKE: &str = "No, the news is fake";

    pub fn compose(auth: &str, summary: &str, clue: &str) -> String {
        format!("{AUTH} {auth} {SUMMARY} {summary} {CLUE} {clue}")
    }

    /// The three sections of a well-formed annotation.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Sections<'a> {
        pub auth: &'a str,
        pub summary: &'a str,
        pub clue: &'a str,
    }

    pub fn split(s: &str) -> Option<Sections<'_>> {
        let a = s.find(AUTH)?;
        let b = s.find(SUMMARY)?;
        let c = s.find(CLUE)?;
        if !(a < b && b < c) {
            return None;
        }
        Some(Sections {
            auth: s[a + AUTH.len()..b].trim(),
            summary: s[b + SUMMARY.len()..c].trim(),
            clue: s[c + CLUE.len()..].trim(),
        })
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    pub enum Violation {
        Empty,
        MissingAuth,
        MissingSummary,
        MissingClue,
        OutOfOrder,
        AuthenticityMismatch,
    }

    impl Violation {
        pub fn as_str(self) -> &'static str {
            match self {
                Violation::Empty => "empty",
                Violation::MissingAuth => "missing-auth",
                Violation::MissingSummary => "missing-summary",
                Violation::MissingClue => "missing-clue",
                Violation::OutOfOrder => "out-of-order",
                Violation::AuthenticityMismatch => "authenticity-mismatch",
            }
        }
    }

    /// Structural and label-agreement check of an annotation.
    pub fn validate(text: &str, label: Label) -> Vec<Violation> {
        let mut out = Vec::new();
        if text.trim().is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        let pos = [text.find(AUTH), text.find(SUMMARY), text.find(CLUE)];
        let missing = [
            Violation::MissingAuth,
            Violation::MissingSummary,
            Violation::MissingClue,
        ];
        for (p, v) in pos.iter().zip(missing) {
            if p.is_none() {
                out.push(v);
            }
        }
        if !out.is_empty() {
            // Authenticity can still be judged when only later parts are absent.
            if let Some(a) = pos[0] {
                let rest = &text[a + AUTH.len()..];
                let end = [pos[1], pos[2]]
                    .iter()
                    .flatten()
                    .filter(|&&p| p > a)
                    .map(|p| p - a - AUTH.len())
                    .min()
                    .unwrap_or(rest.len());
                if !auth_agrees(rest[..end].trim(), label) {
                    out.push(Violation::AuthenticityMismatch);
                }
            }
            return out;
        }
        let Some(sections) = split(text) else {
            out.push(Violation::OutOfOrder);
            return out;
        };
        for (body, v) in [
            (sections.auth, Violation::MissingAuth),
            (sections.summary, Violation::MissingSummary),
            (sections.clue, Violation::MissingClue),
        ] {
            if body.is_empty() {
                out.push(v);
            }
        }
        if !sections.auth.is_empty() && !auth_agrees(sections.auth, label) {
            out.push(Violation::AuthenticityMismatch);
        }
        out
    }

    fn auth_agrees(auth: &str, label: Label) -> bool {
        match label {
            Label::Real => auth.starts_with(REAL),
            Label::Fake => auth.starts_with(FAKE),
        }
    }
}

/// One image-text news item.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsSample {
    pub id: String,
    pub image: ImageBuf,
    pub text: String,
    pub domain: Domain,
    pub label: Label,
    pub fake_cls: ManipClass,
    pub face_bbox: Option<BBox>,
    pub reasoning: String,
}

impl NewsSample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty()
            || !self
                .id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
            || self.id.starts_with('.')
        {
            return Err(Error::schema("id", format!("invalid sample id `{}`", self.id)));
        }
        self.image.validate()?;
        if self.text.trim().is_empty() {
            return Err(Error::schema("text", "headline is empty"));
        }
        if self.label != self.fake_cls.label() {
            return Err(Error::schema(
                "label",
                format!(
                    "label {} inconsistent with fake_cls {}",
                    self.label.as_u8(),
                    self.fake_cls
                ),
            ));
        }
        match self.face_bbox {
            Some(b) => b.validate()?,
            None if self.fake_cls.has_image() => {
                return Err(Error::schema(
                    "face_bbox",
                    format!("required for fake_cls {}", self.fake_cls),
                ))
            }
            None => {}
        }
        if self.reasoning.trim().is_empty() {
            return Err(Error::schema("reasoning", "annotation is empty"));
        }
        Ok(())
    }

    pub fn validate_reasoning(&self) -> Vec<reasoning::Violation> {
        reasoning::validate(&self.reasoning, self.label)
    }
}

/// Ordered samples of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub samples: Vec<NewsSample>,
}

impl Dataset {
    pub fn new(split: Split, seed: u64, samples: Vec<NewsSample>) -> Result<Self> {
        let ds = Self {
            split,
            seed,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::schema("id", format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn manipulation_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.label == Label::Fake).count() as f64
            / self.samples.len() as f64
    }

    pub fn cross_modal_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples
            .iter()
            .filter(|s| s.fake_cls.is_cross_modal())
            .count() as f64
            / self.samples.len() as f64
    }
}

impl fmt::Display for reasoning::Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Id of sample `index` in a forged dataset.
pub fn sample_id(index: usize) -> String {
    let mut s = "hffn-".to_string();
    s.push_str(&format!("{index:05}"));
    s
}
