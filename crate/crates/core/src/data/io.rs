use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Decodes an RGB image into planar (3, h, w) values in [0, 1].
pub fn load_rgb(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planes[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok((h, w, planes))
}

/// Decodes a single-channel image (colour images are converted to luma)
/// into values in [0, 1].
pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.pixels().map(|p| p.0[0] as f32 / 255.0).collect()))
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn encode_png(w: usize, h: usize, color: image::ExtendedColorType, bytes: &[u8]) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| Error::Data(format!("png encoding failed: {e}")))?;
    Ok(out)
}

/// Writes an 8-bit grayscale image: PNG for `.png`, binary PGM otherwise.
pub fn save_gray(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), h * w);
    let bytes = if is_png(path) {
        encode_png(w, h, image::ExtendedColorType::L8, pixels)?
    } else {
        let mut b = format!("P5\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(pixels);
        b
    };
    write_atomic(path, &bytes)
}

/// Writes an 8-bit interleaved RGB image: PNG for `.png`, binary PPM otherwise.
pub fn save_rgb(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), 3 * h * w);
    let bytes = if is_png(path) {
        encode_png(w, h, image::ExtendedColorType::Rgb8, pixels)?
    } else {
        let mut b = format!("P6\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(pixels);
        b
    };
    write_atomic(path, &bytes)
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
