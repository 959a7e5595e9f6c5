//! Seeded synthetic fixtures: one or two filled ellipses ("polyps") on a
//! textured background.

use super::{io, Sample};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Generates sample `index` of the fixture family identified by `seed`.
pub fn synth_sample(seed: u64, index: usize, size: (usize, usize)) -> Sample {
    let (h, w) = size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed, index as u64));
    let short = h.min(w) as f64;
    let count = if rng.gen_bool(0.25) { 2 } else { 1 };
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let rx = rng.gen_range(0.12..0.28) * short;
            let ry = rng.gen_range(0.12..0.28) * short;
            let margin = rx.max(ry);
            Ellipse {
                cx: rng.gen_range(margin..(w as f64 - margin).max(margin + 1.0)),
                cy: rng.gen_range(margin..(h as f64 - margin).max(margin + 1.0)),
                rx,
                ry,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();

    // background: two oriented sinusoids plus pixel noise, pinkish hue
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(0.1..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let bg = [
        rng.gen_range(0.55..0.75),
        rng.gen_range(0.35..0.5),
        rng.gen_range(0.35..0.5),
    ];
    let fg = [
        rng.gen_range(0.75..0.95),
        rng.gen_range(0.15..0.3),
        rng.gen_range(0.1..0.25),
    ];

    let plane = h * w;
    let mut image = vec![0.0f32; 3 * plane];
    let mut mask = vec![0.0f32; plane];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let texture: f64 = waves
                .iter()
                .map(|&(freq, dir, phase)| (freq * (xf * dir.cos() + yf * dir.sin()) + phase).sin())
                .sum::<f64>()
                * 0.06;
            let inside = ellipses.iter().any(|e| e.contains(xf, yf));
            let base = if inside { fg } else { bg };
            let i = y * w + x;
            mask[i] = if inside { 1.0 } else { 0.0 };
            for c in 0..3 {
                let noise = rng.gen_range(-0.04..0.04);
                image[c * plane + i] = (base[c] + texture + noise).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Sample {
        id: format!("s{index:04}"),
        image: Tensor4::from_vec(Shape4::new(1, 3, h, w), image).expect("sized"),
        mask: Tensor4::from_vec(Shape4::new(1, 1, h, w), mask).expect("sized"),
    }
}

pub fn synth_dataset(seed: u64, count: usize, size: (usize, usize)) -> Vec<Sample> {
    (0..count).map(|i| synth_sample(seed, i, size)).collect()
}

/// Writes samples as `images/<id>.ppm` and `masks/<id>.pgm` under `root`.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for dir in ["images", "masks"] {
        std::fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    for s in samples {
        let (h, w) = s.size();
        let plane = h * w;
        let d = s.image.data();
        let rgb: Vec<u8> = (0..plane)
            .flat_map(|i| (0..3).map(move |c| io::to_u8(d[c * plane + i])))
            .collect();
        io::save_rgb(&root.join("images").join(format!("{}.ppm", s.id)), h, w, &rgb)?;
        let gray: Vec<u8> = s.mask.data().iter().map(|&v| io::to_u8(v)).collect();
        io::save_gray(&root.join("masks").join(format!("{}.pgm", s.id)), h, w, &gray)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_nontrivial() {
        let a = synth_sample(7, 3, (32, 48));
        let b = synth_sample(7, 3, (32, 48));
        assert_eq!(a, b);
        assert_ne!(a.image, synth_sample(8, 3, (32, 48)).image);
        let fg = a.mask.data().iter().filter(|&&v| v == 1.0).count();
        assert!(fg > 20 && fg < 32 * 48 / 2, "{fg}");
    }
}
