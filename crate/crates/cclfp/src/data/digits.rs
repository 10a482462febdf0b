//! Procedurally rendered digit images.
//!
//! Generates a deterministic 28x28 ten-class corpus in the IDX layout so
//! the full benchmark pipeline can run on machines that have no copy of
//! the source handwriting data. Each digit is a stroke skeleton jittered
//! per instance (control points, rotation, anisotropic scale, shear,
//! translation, stroke thickness), rasterized with an antialiased
//! distance-to-stroke profile.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::idx::{write_idx_images, write_idx_labels};
use crate::data::standard_normal;
use crate::error::Result;

/// Canvas side length, matching the classic handwriting benchmarks.
pub const SIDE: usize = 28;

#[derive(Debug, Clone)]
pub struct DigitRenderOptions {
    pub rotation_sigma_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shear_sigma: f64,
    /// Per-control-point jitter in glyph units.
    pub point_jitter: f64,
    pub thickness_min: f64,
    pub thickness_max: f64,
    /// Translation jitter in pixels.
    pub translate_jitter: f64,
    /// Per-image ink level is drawn from [ink_min, 1].
    pub ink_min: f64,
}

impl Default for DigitRenderOptions {
    fn default() -> Self {
        DigitRenderOptions {
            rotation_sigma_deg: 10.0,
            scale_min: 0.755,
            scale_max: 1.155,
            shear_sigma: 0.18,
            point_jitter: 0.038,
            thickness_min: 0.83,
            thickness_max: 1.81,
            translate_jitter: 2.15,
            ink_min: 0.69,
        }
    }
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Vec<(f64, f64)> {
    let sweep = (to_deg - from_deg).abs();
    let steps = ((sweep / 14.0).ceil() as usize).max(4);
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke skeleton of a digit, as polylines in the unit box (y down).
pub fn glyph_strokes(digit: usize) -> Vec<Vec<(f64, f64)>> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.26, 0.36, 0.0, 360.0)],
        1 => vec![vec![(0.31, 0.33), (0.53, 0.12), (0.53, 0.87)]],
        2 => {
            let mut top = arc(0.5, 0.33, 0.24, 0.20, 180.0, 345.0);
            top.push((0.27, 0.84));
            top.push((0.76, 0.84));
            vec![top]
        }
        3 => {
            let mut s = vec![(0.27, 0.17), (0.56, 0.14)];
            s.extend(arc(0.45, 0.30, 0.18, 0.15, 295.0, 440.0));
            s.extend(arc(0.44, 0.66, 0.23, 0.20, 270.0, 495.0));
            vec![s]
        }
        4 => vec![
            vec![(0.61, 0.15), (0.33, 0.51)],
            vec![(0.33, 0.51), (0.71, 0.51)],
            vec![(0.63, 0.15), (0.63, 0.88)],
        ],
        5 => {
            let mut s = vec![(0.68, 0.15), (0.31, 0.15), (0.29, 0.45)];
            s.extend(arc(0.45, 0.66, 0.23, 0.20, 195.0, 460.0));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.70, 0.14), (0.52, 0.24), (0.38, 0.42), (0.32, 0.58)];
            s.extend(arc(0.50, 0.66, 0.19, 0.19, 180.0, 540.0));
            vec![s]
        }
        7 => vec![
            vec![(0.24, 0.16), (0.76, 0.16), (0.44, 0.87)],
            vec![(0.33, 0.52), (0.62, 0.52)],
        ],
        8 => vec![
            arc(0.5, 0.30, 0.17, 0.15, 90.0, 450.0),
            arc(0.5, 0.66, 0.21, 0.19, 270.0, 630.0),
        ],
        9 => {
            let mut tail = vec![(0.70, 0.34), (0.70, 0.62), (0.66, 0.88)];
            let mut strokes = vec![arc(0.51, 0.33, 0.19, 0.17, 0.0, 360.0)];
            strokes.push(std::mem::take(&mut tail));
            strokes
        }
        _ => panic!("digit out of range: {digit}"),
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Render one digit instance into SIDE*SIDE bytes.
pub fn render_digit(digit: usize, rng: &mut ChaCha8Rng, opts: &DigitRenderOptions) -> Vec<u8> {
    let strokes = glyph_strokes(digit);

    let theta = standard_normal(rng) * opts.rotation_sigma_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let sx = rng.gen_range(opts.scale_min..opts.scale_max);
    let sy = rng.gen_range(opts.scale_min..opts.scale_max);
    let shear = standard_normal(rng) * opts.shear_sigma;
    let tx = rng.gen_range(-opts.translate_jitter..opts.translate_jitter);
    let ty = rng.gen_range(-opts.translate_jitter..opts.translate_jitter);
    let thickness = rng.gen_range(opts.thickness_min..opts.thickness_max);
    let ink = rng.gen_range(opts.ink_min..1.0);

    // Glyph box spans ~19px of the canvas, leaving margins like the source
    // handwriting corpora.
    let box_px = 19.0;
    let margin = (SIDE as f64 - box_px) / 2.0;
    let to_pixels = |(x, y): (f64, f64), rng: &mut ChaCha8Rng| {
        let jx = x + standard_normal(rng) * opts.point_jitter - 0.5;
        let jy = y + standard_normal(rng) * opts.point_jitter - 0.5;
        let ux = sx * jx + shear * jy;
        let uy = sy * jy;
        let rxp = cos * ux - sin * uy + 0.5;
        let ryp = sin * ux + cos * uy + 0.5;
        (margin + box_px * rxp + tx, margin + box_px * ryp + ty)
    };

    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|poly| {
            let pts: Vec<(f64, f64)> = poly.iter().map(|&p| to_pixels(p, rng)).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let aa = 1.0;
    let mut canvas = vec![0.0f64; SIDE * SIDE];
    for &(a, b) in &segments {
        let reach = thickness + aa + 0.5;
        let x_lo = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
        let x_hi = (a.0.max(b.0) + reach).ceil().min(SIDE as f64 - 1.0) as usize;
        let y_lo = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
        let y_hi = (a.1.max(b.1) + reach).ceil().min(SIDE as f64 - 1.0) as usize;
        for r in y_lo..=y_hi {
            for c in x_lo..=x_hi {
                let d = dist_to_segment(c as f64, r as f64, a, b);
                let v = ((thickness + aa - d) / aa).clamp(0.0, 1.0);
                let cell = &mut canvas[r * SIDE + c];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }

    canvas
        .iter()
        .map(|&v| ((v * ink).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Generate `count` labeled digit images as raw IDX-style buffers.
pub fn generate_corpus(count: usize, seed: u64, opts: &DigitRenderOptions) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.gen_range(0..10usize);
        pixels.extend(render_digit(digit, &mut rng, opts));
        labels.push(digit as u8);
    }
    (pixels, labels)
}

/// Write a train/test digit corpus into `dir` using the conventional MNIST
/// file names, so the rest of the pipeline can treat it as a data directory.
pub fn write_corpus_idx(dir: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let opts = DigitRenderOptions::default();
    let (train_px, train_lb) = generate_corpus(train, seed, &opts);
    let (test_px, test_lb) = generate_corpus(test, seed ^ 0x9e37_79b9_7f4a_7c15, &opts);
    write_idx_images(&dir.join("train-images-idx3-ubyte"), SIDE, SIDE, &train_px)?;
    write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &train_lb)?;
    write_idx_images(&dir.join("t10k-images-idx3-ubyte"), SIDE, SIDE, &test_px)?;
    write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &test_lb)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let opts = DigitRenderOptions::default();
        let a = generate_corpus(20, 123, &opts);
        let b = generate_corpus(20, 123, &opts);
        assert_eq!(a, b);
    }

    #[test]
    fn every_digit_renders_some_ink() {
        let opts = DigitRenderOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for digit in 0..10 {
            let img = render_digit(digit, &mut rng, &opts);
            let mass: u32 = img.iter().map(|&p| p as u32).sum();
            assert!(mass > 2000, "digit {digit} mass {mass}");
            // ink stays inside the canvas border
            for c in 0..SIDE {
                assert_eq!(img[c], 0, "digit {digit} touches top border");
                assert_eq!(
                    img[(SIDE - 1) * SIDE + c],
                    0,
                    "digit {digit} touches bottom"
                );
            }
        }
    }

    #[test]
    fn rotated_digit_keeps_most_pixel_mass() {
        let opts = DigitRenderOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for digit in 0..10 {
            let img = render_digit(digit, &mut rng, &opts);
            let as_f: Vec<f64> = img.iter().map(|&p| p as f64 / 255.0).collect();
            let original: f64 = as_f.iter().sum();
            for theta in [30.0, 90.0, 145.0, 179.0] {
                let rotated = crate::data::rotate_image(&as_f, SIDE, SIDE, theta);
                let mass: f64 = rotated.iter().sum();
                assert!(
                    (mass - original).abs() <= 0.15 * original,
                    "digit {digit} at {theta} deg: {mass} vs {original}"
                );
            }
        }
    }
}
