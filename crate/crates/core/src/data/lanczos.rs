//! Separable Lanczos resampling.
//!
//! Output sample i maps to source coordinate `(i + 0.5)·scale − 0.5`. When
//! shrinking, the kernel is stretched by the scale factor so it also acts as
//! the anti-aliasing low-pass filter. Taps falling outside the source are
//! dropped and each output's weights are renormalised to sum to one.

use std::f64::consts::PI;

pub const LANCZOS_A: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// `sinc(x)·sinc(x/a)` for `|x| < a`, else 0.
pub fn lanczos_kernel(x: f64, a: f64) -> f64 {
    if x.abs() < a {
        sinc(x) * sinc(x / a)
    } else {
        0.0
    }
}

/// Normalised taps of one output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub first: usize,
    pub weights: Vec<f64>,
}

/// Taps for resampling an axis of `src` samples to `dst` samples.
pub fn axis_taps(src: usize, dst: usize, a: f64) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let radius = a * stretch;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = ((center - radius).ceil().max(0.0)) as usize;
            let hi = ((center + radius).floor() as isize).min(src as isize - 1).max(0) as usize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|j| lanczos_kernel((j as f64 - center) / stretch, a))
                .collect();
            let total: f64 = weights.iter().sum();
            if total.abs() > f64::EPSILON {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                // unreachable for a ≥ 1: the nearest tap always carries weight
                weights.iter_mut().for_each(|w| *w = 0.0);
            }
            Taps { first: lo, weights }
        })
        .collect()
}

/// Resamples a row-major `(h, w)` plane to `target` with kernel order `a`.
pub fn lanczos_resize_with(plane: &[f32], size: (usize, usize), target: (usize, usize), a: f64) -> Vec<f32> {
    let (h, w) = size;
    let (th, tw) = target;
    assert_eq!(plane.len(), h * w, "plane size");
    assert!(th >= 1 && tw >= 1, "target dims must be positive");
    let cols = axis_taps(w, tw, a);
    let rows = axis_taps(h, th, a);

    let mut horizontal = vec![0.0f64; h * tw];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for (x, taps) in cols.iter().enumerate() {
            horizontal[y * tw + x] = taps
                .weights
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * src[taps.first + k] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; th * tw];
    for (y, taps) in rows.iter().enumerate() {
        for x in 0..tw {
            let v: f64 = taps
                .weights
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * horizontal[(taps.first + k) * tw + x])
                .sum();
            out[y * tw + x] = v as f32;
        }
    }
    out
}

pub fn lanczos_resize(plane: &[f32], size: (usize, usize), target: (usize, usize)) -> Vec<f32> {
    lanczos_resize_with(plane, size, target, LANCZOS_A)
}

/// Nearest-neighbour resize with the same centre alignment.
pub fn nearest_resize(plane: &[f32], size: (usize, usize), target: (usize, usize)) -> Vec<f32> {
    let (h, w) = size;
    let (th, tw) = target;
    let pick = |i: usize, src: usize, dst: usize| {
        let c = (i as f64 + 0.5) * src as f64 / dst as f64;
        (c.floor() as usize).min(src - 1)
    };
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = pick(y, h, th);
        for x in 0..tw {
            out.push(plane[sy * w + pick(x, w, tw)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(lanczos_kernel(0.0, 3.0), 1.0);
        assert!(lanczos_kernel(1.0, 3.0).abs() < 1e-15);
        assert_eq!(lanczos_kernel(3.0, 3.0), 0.0);
        assert!(lanczos_kernel(0.5, 3.0) > 0.5);
        assert!(lanczos_kernel(1.5, 3.0) < 0.0);
    }

    #[test]
    fn weights_are_normalised() {
        for (src, dst) in [(16, 8), (8, 16), (352, 352), (500, 352), (7, 3), (3, 11)] {
            for t in axis_taps(src, dst, LANCZOS_A) {
                assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(t.first + t.weights.len() <= src);
            }
        }
    }

    #[test]
    fn identity_and_constant() {
        let plane: Vec<f32> = (0..35).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
        let same = lanczos_resize(&plane, (5, 7), (5, 7));
        assert!(same.iter().zip(&plane).all(|(a, b)| (a - b).abs() < 1e-6));
        let constant = vec![0.37f32; 35];
        for target in [(1, 1), (3, 2), (10, 14), (5, 7)] {
            let out = lanczos_resize(&constant, (5, 7), target);
            assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn nearest_keeps_values() {
        let plane = vec![0.0, 1.0, 1.0, 0.0];
        let up = nearest_resize(&plane, (2, 2), (4, 4));
        assert_eq!(up[0], 0.0);
        assert_eq!(up[3], 1.0);
        assert_eq!(nearest_resize(&up, (4, 4), (2, 2)), plane);
    }
}
