//! Training-time augmentation: flips, colour jitter and a random affine warp.
//!
//! Geometric draws are applied identically to image and mask (bilinear for
//! the image, nearest plus re-binarisation for the mask); colour jitter only
//! touches the image. Pixels mapped from outside the frame are 0.

use super::Sample;
use crate::tensor::{Shape4, Tensor4};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    pub brightness: (f64, f64),
    /// Contrast factor drawn from [1 − c, 1 + c].
    pub contrast: f64,
    /// Saturation factor drawn from [1 − s, 1 + s].
    pub saturation: f64,
    /// Hue shift drawn from [−h, h] (fraction of a full turn).
    pub hue: f64,
    pub rotation_deg: (f64, f64),
    /// Translation as a fraction of width/height.
    pub translate: (f64, f64),
    pub scale: (f64, f64),
    pub shear_deg: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            brightness: (0.6, 1.6),
            contrast: 0.2,
            saturation: 0.1,
            hue: 0.01,
            rotation_deg: (-180.0, 180.0),
            translate: (-0.125, 0.125),
            scale: (0.5, 1.5),
            // the upper bound is deliberately asymmetric
            shear_deg: (-22.5, 22.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterDraw {
    pub const IDENTITY: JitterDraw = JitterDraw {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// (x, y) translation as a fraction of (width, height).
    pub translate: (f64, f64),
    pub scale: f64,
    pub shear_deg: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_deg: 0.0,
        translate: (0.0, 0.0),
        scale: 1.0,
        shear_deg: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub jitter: JitterDraw,
    pub affine: AffineParams,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip_h: false,
        flip_v: false,
        jitter: JitterDraw::IDENTITY,
        affine: AffineParams::IDENTITY,
    };
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl AugmentConfig {
    /// Samples every random quantity in a fixed order.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        let flip_h = rng.gen_bool(self.flip_h_prob.clamp(0.0, 1.0));
        let flip_v = rng.gen_bool(self.flip_v_prob.clamp(0.0, 1.0));
        let jitter = JitterDraw {
            brightness: uniform(rng, self.brightness),
            contrast: uniform(rng, ((1.0 - self.contrast).max(0.0), 1.0 + self.contrast)),
            saturation: uniform(rng, ((1.0 - self.saturation).max(0.0), 1.0 + self.saturation)),
            hue: uniform(rng, (-self.hue, self.hue)),
        };
        let affine = AffineParams {
            rotation_deg: uniform(rng, self.rotation_deg),
            translate: (uniform(rng, self.translate), uniform(rng, self.translate)),
            scale: uniform(rng, self.scale),
            shear_deg: uniform(rng, self.shear_deg),
        };
        AugmentDraw {
            flip_h,
            flip_v,
            jitter,
            affine,
        }
    }
}

pub fn flip_horizontal(plane: &mut [f32], h: usize, w: usize) {
    for y in 0..h {
        plane[y * w..(y + 1) * w].reverse();
    }
}

pub fn flip_vertical(plane: &mut [f32], h: usize, w: usize) {
    for y in 0..h / 2 {
        let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
        top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return (0.0, 0.0, max);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, delta / max, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    if s <= 0.0 {
        return (v, v, v);
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation, hue, in that order, clamping to [0, 1]
/// after each step. `image` is (1, 3, h, w).
pub fn color_jitter(image: &Tensor4<f32>, j: &JitterDraw) -> Tensor4<f32> {
    let s = image.shape();
    assert_eq!((s.n, s.c), (1, 3), "colour jitter expects one RGB image");
    let p = s.plane();
    let mut d = image.data().to_vec();
    let clamp = |v: f32| v.clamp(0.0, 1.0);

    let b = j.brightness as f32;
    if b != 1.0 {
        d.iter_mut().for_each(|v| *v = clamp(*v * b));
    }
    let c = j.contrast as f32;
    if c != 1.0 {
        let mean = (0..p).map(|i| luma(d[i], d[p + i], d[2 * p + i]) as f64).sum::<f64>() / p as f64;
        let offset = (1.0 - c) * mean as f32;
        d.iter_mut().for_each(|v| *v = clamp(c * *v + offset));
    }
    let sat = j.saturation as f32;
    if sat != 1.0 {
        for i in 0..p {
            let l = luma(d[i], d[p + i], d[2 * p + i]);
            for ch in 0..3 {
                let v = &mut d[ch * p + i];
                *v = clamp(sat * *v + (1.0 - sat) * l);
            }
        }
    }
    if j.hue != 0.0 {
        for i in 0..p {
            let (h, sv, v) = rgb_to_hsv(d[i], d[p + i], d[2 * p + i]);
            let (r, g, bl) = hsv_to_rgb(h + j.hue as f32, sv, v);
            d[i] = clamp(r);
            d[p + i] = clamp(g);
            d[2 * p + i] = clamp(bl);
        }
    }
    Tensor4::from_vec(s, d).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Forward matrix `rotation · shear · scale` about the image centre.
fn linear_part(p: &AffineParams) -> [[f64; 2]; 2] {
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let shear = p.shear_deg.to_radians().tan();
    let s = p.scale;
    // R · [[1, tan φ], [0, 1]] · sI
    [[cos * s, (cos * shear - sin) * s], [sin * s, (sin * shear + cos) * s]]
}

/// Inverse-maps each output pixel through
/// `translate ∘ rotate ∘ shear ∘ scale` (about the centre) and samples the
/// source plane.
pub fn affine_transform(plane: &[f32], h: usize, w: usize, p: &AffineParams, interp: Interpolation) -> Vec<f32> {
    assert_eq!(plane.len(), h * w);
    let m = linear_part(p);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = (p.translate.0 * w as f64, p.translate.1 * h as f64);
    let at = |x: isize, y: isize| -> f32 {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            plane[y as usize * w + x as usize]
        } else {
            0.0
        }
    };
    let mut out = vec![0.0f32; h * w];
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f64 - cx - tx;
            let dy = oy as f64 - cy - ty;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out[oy * w + ox] = match interp {
                Interpolation::Nearest => at((sx + 0.5).floor() as isize, (sy + 0.5).floor() as isize),
                Interpolation::Bilinear => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let top = at(x0, y0) * (1.0 - fx) + if fx > 0.0 { at(x0 + 1, y0) * fx } else { 0.0 };
                    let bottom = if fy > 0.0 {
                        at(x0, y0 + 1) * (1.0 - fx) + if fx > 0.0 { at(x0 + 1, y0 + 1) * fx } else { 0.0 }
                    } else {
                        0.0
                    };
                    top * (1.0 - fy) + bottom * fy
                }
            };
        }
    }
    out
}

fn is_identity(p: &AffineParams) -> bool {
    *p == AffineParams::IDENTITY
}

/// Applies one concrete draw: flips, colour jitter (image only), then the
/// affine warp.
pub fn apply_augment(sample: &Sample, draw: &AugmentDraw) -> Sample {
    let s = sample.image.shape();
    let (h, w) = (s.h, s.w);
    let mut image = sample.image.data().to_vec();
    let mut mask = sample.mask.data().to_vec();

    for plane in image.chunks_exact_mut(h * w).chain(mask.chunks_exact_mut(h * w)) {
        if draw.flip_h {
            flip_horizontal(plane, h, w);
        }
        if draw.flip_v {
            flip_vertical(plane, h, w);
        }
    }
    let flipped = Tensor4::from_vec(s, image).expect("same shape");
    let mut image = color_jitter(&flipped, &draw.jitter).into_data();

    if !is_identity(&draw.affine) {
        for plane in image.chunks_exact_mut(h * w) {
            let warped = affine_transform(plane, h, w, &draw.affine, Interpolation::Bilinear);
            plane.copy_from_slice(&warped);
        }
        mask = affine_transform(&mask, h, w, &draw.affine, Interpolation::Nearest);
    }
    mask.iter_mut().for_each(|v| *v = if *v >= 0.5 { 1.0 } else { 0.0 });

    Sample {
        id: sample.id.clone(),
        image: Tensor4::from_vec(s, image).expect("same shape"),
        mask: Tensor4::from_vec(Shape4::new(1, 1, h, w), mask).expect("same shape"),
    }
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    apply_augment(sample, &cfg.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.2f32, 0.5f32, 0.9f32),
            (1.0, 0.0, 0.0),
            (0.3, 0.3, 0.1),
            (0.0, 0.7, 0.7),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn vertical_flip_is_involution() {
        let orig: Vec<f32> = (0..15).map(|i| i as f32).collect();
        let mut p = orig.clone();
        flip_vertical(&mut p, 5, 3);
        assert_eq!(&p[..3], &[12.0, 13.0, 14.0]);
        assert_eq!(&p[6..9], &[6.0, 7.0, 8.0]);
        flip_vertical(&mut p, 5, 3);
        assert_eq!(p, orig);
    }

    #[test]
    fn translation_shifts_by_whole_pixels() {
        let mut plane = vec![0.0f32; 64];
        plane[2 * 8 + 3] = 1.0;
        let p = AffineParams {
            translate: (0.125, 0.25),
            ..AffineParams::IDENTITY
        };
        for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
            let out = affine_transform(&plane, 8, 8, &p, interp);
            assert_eq!(out[4 * 8 + 4], 1.0);
            assert_eq!(out.iter().sum::<f32>(), 1.0);
        }
    }
}
