//! Image/mask samples, dataset discovery, resampling, splitting and
//! augmentation.

pub mod augment;
pub mod io;
pub mod lanczos;
pub mod split;
pub mod synth;

pub use augment::{
    affine_transform, apply_augment, augment, color_jitter, AffineParams, AugmentConfig, AugmentDraw, Interpolation,
    JitterDraw,
};
pub use lanczos::{lanczos_resize, nearest_resize};
pub use split::{split_dataset, Section, SplitManifest};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};
use std::fs;
use std::path::{Path, PathBuf};

/// One image with its binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// (1, 3, h, w), values in [0, 1].
    pub image: Tensor4<f32>,
    /// (1, 1, h, w), values in {0, 1}.
    pub mask: Tensor4<f32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor4<f32>, mask: Tensor4<f32>) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.n != 1 || is.c != 3 {
            return Err(Error::shape(
                "sample",
                "channel",
                format!("image must be 1x3xHxW, got {is}"),
            ));
        }
        if ms.n != 1 || ms.c != 1 {
            return Err(Error::shape(
                "sample",
                "channel",
                format!("mask must be 1x1xHxW, got {ms}"),
            ));
        }
        if is.h != ms.h {
            return Err(Error::shape("sample", "height", format!("image {is} vs mask {ms}")));
        }
        if is.w != ms.w {
            return Err(Error::shape("sample", "width", format!("image {is} vs mask {ms}")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask is not binary".into()));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }

    /// Lanczos for the image (clamped to [0, 1]), nearest plus
    /// re-binarisation for the mask.
    pub fn resized(&self, target: (usize, usize)) -> Sample {
        if self.size() == target {
            return self.clone();
        }
        let size = self.size();
        let image: Vec<f32> = self
            .image
            .data()
            .chunks_exact(size.0 * size.1)
            .flat_map(|p| lanczos_resize(p, size, target))
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        let mask = nearest_resize(self.mask.data(), size, target)
            .into_iter()
            .map(binarize)
            .collect();
        Sample {
            id: self.id.clone(),
            image: Tensor4::from_vec(Shape4::new(1, 3, target.0, target.1), image).expect("sized"),
            mask: Tensor4::from_vec(Shape4::new(1, 1, target.0, target.1), mask).expect("sized"),
        }
    }
}

pub fn binarize(v: f32) -> f32 {
    if v >= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn load_sample(id: impl Into<String>, image_path: &Path, mask_path: &Path) -> Result<Sample> {
    let (h, w, planes) = io::load_rgb(image_path)?;
    let (mh, mw, mask) = io::load_gray(mask_path)?;
    if (h, w) != (mh, mw) {
        return Err(Error::Data(format!(
            "{} is {h}x{w} but mask {} is {mh}x{mw}",
            image_path.display(),
            mask_path.display()
        )));
    }
    let image = Tensor4::from_vec(Shape4::new(1, 3, h, w), planes)?;
    let mask = Tensor4::from_vec(Shape4::new(1, 1, h, w), mask.into_iter().map(binarize).collect())?;
    Sample::new(id, image, mask)
}

const IMAGE_EXTS: [&str; 2] = ["png", "ppm"];
const MASK_EXTS: [&str; 2] = ["png", "pgm"];

/// A dataset directory laid out as `images/<id>.(png|ppm)` and
/// `masks/<id>.(png|pgm)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    /// Sorted ids with their image and mask paths.
    entries: Vec<(String, PathBuf, PathBuf)>,
}

fn list_by_stem(dir: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

impl Dataset {
    /// Pairs images with masks by id; every unmatched or duplicated file is
    /// reported in one error.
    pub fn open(root: &Path) -> Result<Self> {
        let images = list_by_stem(&root.join("images"), &IMAGE_EXTS)?;
        let masks = list_by_stem(&root.join("masks"), &MASK_EXTS)?;
        let mut problems = Vec::new();
        for pair in images.windows(2).chain(masks.windows(2)) {
            if pair[0].0 == pair[1].0 {
                problems.push(format!("{}: duplicate id {:?}", pair[1].1.display(), pair[1].0));
            }
        }
        let mut entries = Vec::new();
        for (id, path) in &images {
            match masks.binary_search_by(|(m, _)| m.cmp(id)) {
                Ok(j) => entries.push((id.clone(), path.clone(), masks[j].1.clone())),
                Err(_) => problems.push(format!("{}: no mask for id {id:?}", path.display())),
            }
        }
        for (id, path) in &masks {
            if images.binary_search_by(|(m, _)| m.cmp(id)).is_err() {
                problems.push(format!("{}: no image for id {id:?}", path.display()));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Data(problems.join("\n")));
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("{}: no samples found", root.display())));
        }
        entries.dedup_by(|a, b| a.0 == b.0);
        Ok(Dataset {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.0.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let (_, image, mask) = self
            .entries
            .iter()
            .find(|e| e.0 == id)
            .ok_or_else(|| Error::Data(format!("unknown sample id {id:?}")))?;
        load_sample(id, image, mask)
    }

    /// Loads `ids` in order, resized to `size` when given.
    pub fn load_all(&self, ids: &[String], size: Option<(usize, usize)>) -> Result<Vec<Sample>> {
        ids.iter()
            .map(|id| {
                let s = self.load(id)?;
                Ok(match size {
                    Some(t) => s.resized(t),
                    None => s,
                })
            })
            .collect()
    }
}
