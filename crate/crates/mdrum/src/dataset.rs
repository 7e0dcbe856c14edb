//! Line-delimited dataset records with PNG images next to them.
//!
//! A dataset file `train.jsonl` holds one record per line with the keys
//! `id, image, text, domain, label, fake_cls, face_bbox, reasoning` in that
//! order. `image` is a path relative to the dataset file's directory. The
//! split tag and provenance seed live in a `train.jsonl.meta` sidecar of
//! `key=value` lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdrum_core::data::{BBox, Dataset, Domain, ImageBuf, Label, ManipClass, NewsSample, Split};
use serde::Serialize;
use serde_json::Value;

use crate::error::{AppError, AppResult};
use crate::fsio::{atomic_write, read, read_to_string};
use crate::kv;

/// Directory, relative to the dataset file, holding the images.
pub const IMAGE_DIR: &str = "images";

#[derive(Serialize)]
struct Record<'a> {
    id: &'a str,
    image: String,
    text: &'a str,
    domain: &'a str,
    label: u8,
    fake_cls: &'a str,
    face_bbox: Option<[f64; 4]>,
    reasoning: &'a str,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn base_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn encode_png(img: &ImageBuf) -> AppResult<Vec<u8>> {
    img.validate()?;
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| AppError::Data(format!("png encoding failed: {e}")))?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8], path: &Path) -> AppResult<ImageBuf> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(ImageBuf {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.into_raw(),
    })
}

/// One JSON line per sample, without the images.
pub fn render_records(ds: &Dataset) -> AppResult<String> {
    let mut out = String::new();
    for s in &ds.samples {
        let rec = Record {
            id: &s.id,
            image: format!("{IMAGE_DIR}/{}.png", s.id),
            text: &s.text,
            domain: s.domain.as_str(),
            label: s.label.as_u8(),
            fake_cls: s.fake_cls.as_str(),
            face_bbox: s.face_bbox.map(|b| b.to_array()),
            reasoning: &s.reasoning,
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| AppError::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn render_meta(ds: &Dataset) -> String {
    kv::render(&[
        ("split", ds.split.as_str().to_string()),
        ("seed", ds.seed.to_string()),
        ("count", ds.len().to_string()),
    ])
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> AppResult<()> {
    ds.validate()?;
    let dir = base_dir(path);
    for s in &ds.samples {
        atomic_write(&dir.join(IMAGE_DIR).join(format!("{}.png", s.id)), &encode_png(&s.image)?)?;
    }
    atomic_write(&meta_path(path), render_meta(ds).as_bytes())?;
    atomic_write(path, render_records(ds)?.as_bytes())
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &'static str) -> AppResult<&'a Value> {
    obj.get(name)
        .ok_or_else(|| AppError::Data(format!("field {name}: missing")))
}

fn str_field<'a>(obj: &'a serde_json::Map<String, Value>, name: &'static str) -> AppResult<&'a str> {
    field(obj, name)?
        .as_str()
        .ok_or_else(|| AppError::Data(format!("field {name}: expected a string")))
}

const KEYS: [&str; 8] = ["id", "image", "text", "domain", "label", "fake_cls", "face_bbox", "reasoning"];

fn parse_record(line: &str, dir: &Path) -> AppResult<NewsSample> {
    let value: Value = serde_json::from_str(line).map_err(|e| AppError::Data(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| AppError::Data("expected a JSON object".into()))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(AppError::Data(format!("field {k}: unknown key")));
    }
    let id = str_field(obj, "id")?.to_string();
    let image_rel = str_field(obj, "image")?;
    let text = str_field(obj, "text")?.to_string();
    let domain: Domain = str_field(obj, "domain")?.parse()?;
    let label = match field(obj, "label")?.as_u64() {
        Some(v @ (0 | 1)) => Label::from_u8(v as u8)?,
        _ => return Err(AppError::Data("field label: expected 0 or 1".into())),
    };
    let fake_cls: ManipClass = str_field(obj, "fake_cls")?.parse()?;
    let face_bbox = match field(obj, "face_bbox")? {
        Value::Null => None,
        Value::Array(a) if a.len() == 4 => {
            let mut c = [0.0; 4];
            for (slot, v) in c.iter_mut().zip(a) {
                *slot = v
                    .as_f64()
                    .ok_or_else(|| AppError::Data("field face_bbox: expected numbers".into()))?;
            }
            Some(BBox::from_array(c)?)
        }
        _ => return Err(AppError::Data("field face_bbox: expected a 4-array or null".into())),
    };
    let reasoning = str_field(obj, "reasoning")?.to_string();
    let image_path = dir.join(image_rel);
    if !image_path.is_file() {
        return Err(AppError::Data(format!("missing image file {}", image_path.display())));
    }
    let image = decode_png(&read(&image_path)?, &image_path)?;
    let sample = NewsSample {
        id,
        image,
        text,
        domain,
        label,
        fake_cls,
        face_bbox,
        reasoning,
    };
    sample.validate()?;
    Ok(sample)
}

fn read_meta(path: &Path) -> AppResult<(Split, u64, Option<usize>)> {
    let mp = meta_path(path);
    if !mp.is_file() {
        return Ok((Split::Train, 0, None));
    }
    let map = kv::parse(&read_to_string(&mp)?).map_err(|e| e.context(&mp.display().to_string()))?;
    let mut split = Split::Train;
    let mut seed = 0;
    let mut count = None;
    for (k, v) in &map {
        match k.as_str() {
            "split" => split = v.parse()?,
            "seed" => seed = kv::parse_value(k, v)?,
            "count" => count = Some(kv::parse_value(k, v)?),
            other => return Err(AppError::Data(format!("{}: unknown key {other}", mp.display()))),
        }
    }
    Ok((split, seed, count))
}

/// Load and validate every record; errors name the record index and field.
pub fn load_dataset(path: &Path) -> AppResult<Dataset> {
    let text = read_to_string(path)?;
    let dir = base_dir(path);
    let (split, seed, count) = read_meta(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_record(line, &dir)
            .map_err(|e| e.context(&format!("{}: record {i}", path.display())))?;
        samples.push(s);
    }
    if let Some(n) = count {
        if n != samples.len() {
            return Err(AppError::Data(format!(
                "{}: sidecar declares {n} records, file has {}",
                path.display(),
                samples.len()
            )));
        }
    }
    Dataset::new(split, seed, samples).map_err(|e| AppError::from(e).context(&path.display().to_string()))
}

/// Per-domain and per-class counts plus the two manipulation rates.
pub fn stats(ds: &Dataset) -> Vec<(String, String)> {
    let mut domains: BTreeMap<&str, usize> = Domain::ALL.iter().map(|d| (d.as_str(), 0)).collect();
    let mut classes: BTreeMap<&str, usize> = ManipClass::ALL.iter().map(|c| (c.as_str(), 0)).collect();
    for s in &ds.samples {
        *domains.get_mut(s.domain.as_str()).expect("closed enum") += 1;
        *classes.get_mut(s.fake_cls.as_str()).expect("closed enum") += 1;
    }
    let mut out = vec![("n".to_string(), ds.len().to_string())];
    for d in Domain::ALL {
        out.push((format!("domain.{d}"), domains[d.as_str()].to_string()));
    }
    for c in ManipClass::ALL {
        out.push((format!("fake_cls.{c}"), classes[c.as_str()].to_string()));
    }
    out.push(("manipulation_rate".into(), format!("{:.6}", ds.manipulation_rate())));
    out.push(("cross_modal_rate".into(), format!("{:.6}", ds.cross_modal_rate())));
    out
}
