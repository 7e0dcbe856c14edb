//! Flat-shaded procedural scenes with one face per image.

use crate::data::{Domain, ImageBuf, PixelRect};
use crate::rng::{fnv1a, Rng, StreamRng};

/// Every drawn channel value lies in `[PALETTE_MIN, PALETTE_MAX]`, so
/// perturbations of up to `PALETTE_MIN` never clamp.
pub const PALETTE_MIN: u8 = 48;
pub const PALETTE_MAX: u8 = 207;

/// Colors of one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub skin: [u8; 3],
    pub hair: [u8; 3],
    pub eyes: [u8; 3],
    pub mouth: [u8; 3],
    pub hair_line: f64,
}

fn channel(seed: u64, shift: u32, lo: u8, hi: u8) -> u8 {
    let span = (hi - lo) as u64 + 1;
    lo + ((seed >> shift) % span) as u8
}

impl Appearance {
    /// Identity-specific look, a pure function of the person's name.
    pub fn of_name(name: &str) -> Self {
        Self::from_bits(fnv1a(name.as_bytes()))
    }

    pub fn random(rng: &mut StreamRng) -> Self {
        Self::from_bits(rng.gen())
    }

    fn from_bits(h: u64) -> Self {
        Self {
            skin: [channel(h, 0, 150, 207), channel(h, 8, 105, 170), channel(h, 16, 75, 140)],
            hair: [channel(h, 24, 48, 140), channel(h, 30, 48, 110), channel(h, 36, 48, 90)],
            eyes: [channel(h, 42, 48, 70), channel(h, 46, 48, 90), channel(h, 50, 48, 120)],
            mouth: [channel(h, 54, 140, 200), 60, 70],
            hair_line: 0.22 + (channel(h, 58, 0, 15) as f64) / 100.0,
        }
    }
}

fn domain_colors(domain: Domain) -> ([u8; 3], [u8; 3]) {
    match domain {
        Domain::Entertainment => ([120, 70, 150], [80, 50, 100]),
        Domain::Sport => ([110, 160, 200], [70, 150, 70]),
        Domain::Politics => ([160, 160, 170], [60, 70, 120]),
        Domain::Others => ([180, 170, 140], [120, 90, 60]),
    }
}

fn jitter(rng: &mut StreamRng, c: [u8; 3], amount: i32) -> [u8; 3] {
    c.map(|v| {
        let j = v as i32 + rng.gen_range(-amount..=amount);
        j.clamp(PALETTE_MIN as i32, PALETTE_MAX as i32) as u8
    })
}

fn fill(img: &mut ImageBuf, r: PixelRect, rgb: [u8; 3]) {
    for y in r.y0..r.y1.min(img.height) {
        for x in r.x0..r.x1.min(img.width) {
            img.set_pixel(x, y, rgb);
        }
    }
}

/// Face rectangle for an image of `size`, with 64-96 px faces at 224 px.
pub fn face_rect(size: usize, rng: &mut StreamRng) -> PixelRect {
    let scale = size as f64 / 224.0;
    let s = ((rng.gen_range(64..=96) as f64) * scale) as usize;
    let j = (16.0 * scale) as i64;
    let cx = size as i64 / 2 + rng.gen_range(-j..=j);
    let cy = (size as f64 * 0.42) as i64 + rng.gen_range(-j..=j);
    let x0 = (cx - s as i64 / 2).clamp(0, (size - s) as i64) as usize;
    let y0 = (cy - s as i64 / 2).clamp(0, (size - s) as i64) as usize;
    PixelRect {
        x0,
        y0,
        x1: x0 + s,
        y1: y0 + s,
    }
}

/// Whether `(x, y)` falls inside the face ellipse of `rect`. The ellipse
/// leaves a background margin inside the rectangle.
pub fn in_face(rect: PixelRect, x: usize, y: usize) -> bool {
    let w = rect.width() as f64;
    let h = rect.height() as f64;
    let margin = (w * 0.06).max(2.0);
    let rx = w / 2.0 - margin - w * 0.04;
    let ry = h / 2.0 - margin;
    let dx = (x as f64 + 0.5 - rect.x0 as f64 - w / 2.0) / rx;
    let dy = (y as f64 + 0.5 - rect.y0 as f64 - h / 2.0) / ry;
    dx * dx + dy * dy <= 1.0
}

/// Draw a face into the ellipse of `rect`, leaving the margin untouched.
pub fn draw_face(img: &mut ImageBuf, rect: PixelRect, look: &Appearance) {
    let w = rect.width() as f64;
    let h = rect.height() as f64;
    let at = |fx: f64, fy: f64| {
        (
            rect.x0 + (fx * w) as usize,
            rect.y0 + (fy * h) as usize,
        )
    };
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if !in_face(rect, x, y) {
                continue;
            }
            let fy = (y - rect.y0) as f64 / h;
            img.set_pixel(x, y, if fy < look.hair_line { look.hair } else { look.skin });
        }
    }
    let eye = ((w * 0.06) as usize).max(2);
    for fx in [0.35, 0.65] {
        let (ex, ey) = at(fx, 0.46);
        fill(
            img,
            PixelRect {
                x0: ex - eye / 2,
                y0: ey - eye / 2,
                x1: ex - eye / 2 + eye,
                y1: ey - eye / 2 + eye,
            },
            look.eyes,
        );
    }
    let (mx0, my) = at(0.38, 0.72);
    let (mx1, _) = at(0.62, 0.72);
    fill(
        img,
        PixelRect {
            x0: mx0,
            y0: my,
            x1: mx1,
            y1: my + ((h * 0.04) as usize).max(2),
        },
        look.mouth,
    );
}

/// Background, torso and the face of `look`. Returns the face rectangle.
pub fn draw_scene(size: usize, domain: Domain, look: &Appearance, rng: &mut StreamRng) -> (ImageBuf, PixelRect) {
    let (sky, ground) = domain_colors(domain);
    let sky = jitter(rng, sky, 16);
    let ground = jitter(rng, ground, 16);
    let mut img = ImageBuf::filled(size, size, sky);
    let horizon = (size as f64 * rng.gen_range(0.6..0.75)) as usize;
    fill(
        &mut img,
        PixelRect {
            x0: 0,
            y0: horizon,
            x1: size,
            y1: size,
        },
        ground,
    );
    for _ in 0..rng.gen_range(1..=3) {
        let c = jitter(rng, [128, 128, 128], 70);
        let w = rng.gen_range(size / 12..size / 5);
        let h = rng.gen_range(size / 12..size / 4);
        let x0 = if rng.gen() { rng.gen_range(0..size / 5) } else { size - w - rng.gen_range(0..size / 5) };
        let y0 = rng.gen_range(0..size - h);
        fill(&mut img, PixelRect { x0, y0, x1: x0 + w, y1: y0 + h }, c);
    }
    let rect = face_rect(size, rng);
    let clothes = jitter(rng, [128, 110, 110], 70);
    let tw = rect.width() as f64;
    fill(
        &mut img,
        PixelRect {
            x0: rect.x0 + (tw * 0.1) as usize,
            y0: rect.y1,
            x1: rect.x0 + (tw * 0.9) as usize,
            y1: size,
        },
        clothes,
    );
    draw_face(&mut img, rect, look);
    (img, rect)
}
