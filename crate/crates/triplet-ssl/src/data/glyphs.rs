//! Synthetic handwritten-digit stand-in: seven-segment digit skeletons
//! rendered with per-example rotation, scale, translation, stroke-width
//! jitter and pixel noise. Gives a deterministic 10-class image dataset
//! with real cluster structure for exercising the full image pipeline when
//! no IDX dataset is at hand.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ndarray::Array4;

use crate::{Error, Result};

use super::{Dataset, Features};

// Segment endpoints in a unit box, x right, y down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.22, 0.16), (0.78, 0.16)), // A top
    ((0.78, 0.16), (0.78, 0.50)), // B upper right
    ((0.78, 0.50), (0.78, 0.84)), // C lower right
    ((0.22, 0.84), (0.78, 0.84)), // D bottom
    ((0.22, 0.50), (0.22, 0.84)), // E lower left
    ((0.22, 0.16), (0.22, 0.50)), // F upper left
    ((0.22, 0.50), (0.78, 0.50)), // G middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 3, 2],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

/// Render raw u8 pixels for `n_per_class` examples of each digit 0-9 on a
/// `side`x`side` canvas. Returns (pixels, labels); examples are laid out
/// class-major. `jitter` in [0, 1] scales geometric distortion, `noise` is
/// the per-pixel Gaussian sigma in intensity units.
pub fn make_glyph_digits_raw(
    n_per_class: usize,
    side: usize,
    jitter: f64,
    noise: f64,
    seed: u64,
) -> Result<(Vec<u8>, Vec<u8>)> {
    if n_per_class == 0 || side < 8 {
        return Err(Error::Argument(
            "need n_per_class >= 1 and side >= 8".into(),
        ));
    }
    if !(0.0..=1.0).contains(&jitter) || noise < 0.0 {
        return Err(Error::Argument(
            "jitter must be in [0,1] and noise non-negative".into(),
        ));
    }

    let n = n_per_class * 10;
    let mut pixels = vec![0u8; n * side * side];
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for digit in 0..10u8 {
        for example in 0..n_per_class {
            let idx = digit as usize * n_per_class + example;
            let canvas = &mut pixels[idx * side * side..(idx + 1) * side * side];
            render_digit(digit as usize, side, jitter, noise, &mut rng, canvas);
            labels.push(digit);
        }
    }
    Ok((pixels, labels))
}

/// As [`make_glyph_digits_raw`] but packaged as a [`Dataset`] with pixels
/// scaled into [0, 1].
pub fn make_glyph_digits(
    n_per_class: usize,
    side: usize,
    jitter: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let (pixels, labels) = make_glyph_digits_raw(n_per_class, side, jitter, noise, seed)?;
    let n = labels.len();
    let scaled: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Array4::from_shape_vec((n, side, side, 1), scaled)
        .map_err(|e| Error::Format(format!("glyph tensor shape: {e}")))?;
    Dataset::new(
        Features::Images(tensor),
        Some(labels.iter().map(|&b| b as usize).collect()),
        10,
    )
}

fn render_digit(
    digit: usize,
    side: usize,
    jitter: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
    canvas: &mut [u8],
) {
    let s = side as f64;
    let rot = (rng.random::<f64>() * 2.0 - 1.0) * 0.30 * jitter;
    let scale = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * 0.18 * jitter;
    let tx = (rng.random::<f64>() * 2.0 - 1.0) * 0.10 * jitter;
    let ty = (rng.random::<f64>() * 2.0 - 1.0) * 0.10 * jitter;
    let thickness = (0.055 + rng.random::<f64>() * 0.035 * jitter) * s;
    let (sin, cos) = rot.sin_cos();

    // Map unit coordinates through rotate/scale about the center, then
    // translate, then into pixel space.
    let transform = |x: f64, y: f64| -> (f64, f64) {
        let (cx, cy) = (x - 0.5, y - 0.5);
        let xr = scale * (cx * cos - cy * sin) + 0.5 + tx;
        let yr = scale * (cx * sin + cy * cos) + 0.5 + ty;
        (xr * s, yr * s)
    };

    let strokes: Vec<((f64, f64), (f64, f64))> = DIGIT_SEGMENTS[digit]
        .iter()
        .map(|&si| {
            let (a, b) = SEGMENTS[si];
            (transform(a.0, a.1), transform(b.0, b.1))
        })
        .collect();

    let soft = 0.45 * thickness;
    for py in 0..side {
        for px in 0..side {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let mut dist = f64::INFINITY;
            for &(a, b) in &strokes {
                dist = dist.min(point_segment_distance(p, a, b));
            }
            let ink = ((thickness - dist) / soft).clamp(0.0, 1.0);
            let noisy = (ink + noise * standard_normal(rng)).clamp(0.0, 1.0);
            canvas[py * side + px] = (noisy * 255.0).round() as u8;
        }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
