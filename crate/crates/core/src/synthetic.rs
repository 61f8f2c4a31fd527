//! Deterministic synthetic images for experiments and tests.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::Rng;

use crate::dictionary::{random_transform_with, Dictionary};
use crate::error::Result;
use crate::estimators::TransformFamily;
use crate::patch::Image;
use crate::rng::{substream, Stream};

/// An 8-bit-valued occlusion texture: overlapping discs, each filled with a
/// flat tone, an oriented grating, a checkerboard or a soft edge, on a
/// shaded background. Values are integers in `[8, 247]`.
pub fn texture(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = substream(seed, Stream::Synthetic, 0);
    let (wf, hf) = (width as f64, height as f64);
    let gx: f64 = rng.random_range(-0.3..0.3);
    let gy: f64 = rng.random_range(-0.3..0.3);
    let mut px: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64 / wf, (i / width) as f64 / hf);
            128.0 + 80.0 * (gx * (x - 0.5) + gy * (y - 0.5))
        })
        .collect();

    let scale = wf.min(hf);
    let leaves = (width * height / 300).max(12);
    for _ in 0..leaves {
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range(0.0..hf);
        // heavy tail toward small discs
        let u: f64 = rng.random_range(0.0..1.0);
        let r = scale * (0.03 + 0.22 * u * u * u);
        let mean: f64 = rng.random_range(40.0..215.0);
        let contrast: f64 = rng.random_range(15.0..70.0);
        let orient: f64 = rng.random_range(0.0..PI);
        let period: f64 = rng.random_range(3.0..18.0);
        let kind: u8 = rng.random_range(0..4);
        let (c, s) = (orient.cos(), orient.sin());
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width.saturating_sub(1));
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let t = dx * c + dy * s;
                let v = match kind {
                    0 => mean,
                    1 => mean + contrast * (2.0 * PI * t / period).sin(),
                    2 => {
                        let q = (dx * c + dy * s) / period;
                        let w = (-dx * s + dy * c) / period;
                        let sign = if (q.floor() as i64 + w.floor() as i64) % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        };
                        mean + 0.7 * contrast * sign
                    }
                    _ => mean + contrast * (t / (0.15 * r + 1.0)).tanh(),
                };
                px[y * width + x] = v;
            }
        }
    }
    for v in &mut px {
        *v = v.round().clamp(8.0, 247.0);
    }
    Image::new(width, height, px).expect("texture dimensions")
}

/// Image made of `nx x ny` tiles, each a randomly chosen atom under a random
/// contrast change. Returns the image and the chosen atom index per tile.
pub fn tiled_from_atoms(
    dict: &Dictionary,
    nx: usize,
    ny: usize,
    family: TransformFamily,
    alpha_range: &RangeInclusive<f64>,
    beta_range: &RangeInclusive<f64>,
    seed: u64,
) -> Result<(Image, Vec<usize>)> {
    let (pw, ph) = (dict.patch_width(), dict.patch_height());
    let mut img = Image::filled(nx * pw, ny * ph, 0.0)?;
    let mut rng = substream(seed, Stream::Synthetic, 1);
    let mut chosen = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            let idx = rng.random_range(0..dict.len());
            let t = random_transform_with(family, alpha_range, beta_range, &mut rng)?;
            let atom = &dict.atoms()[idx];
            img.paste(tx * pw, ty * ph, &atom.with_values(t.apply(atom))?)?;
            chosen.push(idx);
        }
    }
    Ok((img, chosen))
}
