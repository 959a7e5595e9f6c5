//! Inference on image files.

use super::model::DuckNet;
use crate::data::{binarize, io, lanczos_resize, nearest_resize};
use crate::error::{Error, Result};
use crate::tensor::{Mode, Scalar, Shape4, Tensor4};
use std::path::Path;

/// Thresholded mask (values 0/1) for a planar RGB image of any size: resized
/// to the network input with Lanczos, predicted, thresholded and resized
/// back with nearest neighbour.
pub fn predict_mask<S: Scalar>(
    net: &mut DuckNet<S>,
    size: (usize, usize),
    planes: &[f32],
    threshold: f64,
) -> Result<Vec<f32>> {
    let spec = *net.spec();
    if planes.len() != spec.input_channels * size.0 * size.1 {
        return Err(Error::shape(
            "predict",
            "channel",
            format!("expected {} planes of {}x{}", spec.input_channels, size.0, size.1),
        ));
    }
    let target = spec.input_size;
    let resized: Vec<S> = planes
        .chunks_exact(size.0 * size.1)
        .flat_map(|p| lanczos_resize(p, size, target))
        .map(|v| S::from_f64_lossy(v.clamp(0.0, 1.0) as f64))
        .collect();
    let input = Tensor4::from_vec(Shape4::new(1, spec.input_channels, target.0, target.1), resized)?;
    let probs = net.forward(&input, Mode::Infer)?;
    let hard: Vec<f32> = probs
        .data()
        .iter()
        .map(|p| if p.as_f64() >= threshold { 1.0 } else { 0.0 })
        .collect();
    Ok(nearest_resize(&hard, target, size).into_iter().map(binarize).collect())
}

/// Side-by-side RGB panel `image | ground truth | prediction`, 3·w wide.
/// Masks are drawn white on black; a missing ground truth is left black.
pub fn render_panel(size: (usize, usize), image: &[f32], gt: Option<&[f32]>, pred: &[f32]) -> Vec<u8> {
    let (h, w) = size;
    let plane = h * w;
    let mut out = Vec::with_capacity(h * 3 * w * 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.extend((0..3).map(|c| io::to_u8(image[c * plane + i])));
        }
        for mask in [gt, Some(pred)] {
            for x in 0..w {
                let v = mask.map_or(0, |m| io::to_u8(m[y * w + x]));
                out.extend([v, v, v]);
            }
        }
    }
    out
}

/// Predicts `image_path` and writes the mask (values 0/255) to `out`.
/// With `panel`, also writes the comparison panel, using `gt_path` when given.
pub fn predict_file<S: Scalar>(
    net: &mut DuckNet<S>,
    image_path: &Path,
    out: &Path,
    panel: Option<(&Path, Option<&Path>)>,
    threshold: f64,
) -> Result<()> {
    let (h, w, planes) = io::load_rgb(image_path)?;
    let mask = predict_mask(net, (h, w), &planes, threshold)?;
    let bytes: Vec<u8> = mask.iter().map(|&v| io::to_u8(v)).collect();
    io::save_gray(out, h, w, &bytes)?;
    if let Some((panel_path, gt_path)) = panel {
        let gt = match gt_path {
            Some(p) => {
                let (gh, gw, g) = io::load_gray(p)?;
                if (gh, gw) != (h, w) {
                    return Err(Error::Data(format!(
                        "{} is {gh}x{gw} but the image is {h}x{w}",
                        p.display()
                    )));
                }
                Some(g.into_iter().map(binarize).collect::<Vec<_>>())
            }
            None => None,
        };
        let rgb = render_panel((h, w), &planes, gt.as_deref(), &mask);
        io::save_rgb(panel_path, h, 3 * w, &rgb)?;
    }
    Ok(())
}
