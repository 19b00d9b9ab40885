//! Procedural source images for desk-scale experiments.
//!
//! Images combine a smooth two-color gradient with hard-edged rectangles,
//! ellipses, bars at arbitrary orientations and oriented gratings, so every
//! blur direction has edges to act on.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::splitmix64;
use crate::error::{Error, Result};
use crate::image::Image;

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Draws one synthetic RGB image.
pub fn synth_image(rng: &mut impl Rng, height: usize, width: usize) -> Result<Image> {
    let (hf, wf) = (height as f32, width as f32);
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gs, gc) = theta.sin_cos();
    let diag = hf.hypot(wf);

    let mut pixels = vec![[0f32; 3]; height * width];
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f32 * gc + y as f32 * gs) / diag + 1.0) / 2.0;
            pixels[y * width + x] = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t);
        }
    }

    let shapes = rng.random_range(10..24);
    for _ in 0..shapes {
        let color = random_color(rng);
        let cx = rng.random_range(-0.1..1.1) * wf;
        let cy = rng.random_range(-0.1..1.1) * hf;
        let rot: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let (rs, rc) = rot.sin_cos();
        let a = rng.random_range(0.04..0.35) * wf.max(hf);
        let b = rng.random_range(0.02..0.25) * wf.max(hf);
        let kind = rng.random_range(0..4);
        let period = rng.random_range(3.0..9.0f32);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f32 - cx;
                let dy = y as f32 - cy;
                // shape-local coordinates
                let u = dx * rc + dy * rs;
                let v = -dx * rs + dy * rc;
                let inside = match kind {
                    0 => u.abs() <= a && v.abs() <= b,
                    1 => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
                    2 => u.abs() <= a * 2.0 && v.abs() <= (b / 6.0).max(1.0),
                    _ => {
                        (u / a).powi(2) + (v / b).powi(2) <= 1.0
                            && (u / period).rem_euclid(2.0) < 1.0
                    }
                };
                if inside {
                    pixels[y * width + x] = color;
                }
            }
        }
    }

    Image::from_fn(height, width, 3, |c, y, x| pixels[y * width + x][c])
}

/// Writes `count` synthetic PNGs named `synth_00000.png`, ... into `dir`.
pub fn generate_corpus(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::InvalidConfig("corpus size must be >= 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (i as u64).rotate_left(32)));
            let img = synth_image(&mut rng, height, width)?;
            let path = dir.join(format!("synth_{i:05}.png"));
            img.save_png(&path)?;
            Ok(path)
        })
        .collect()
}
