//! Image loading into channel-major tensors of raw 0-255 values.
//!
//! P6 PPM is parsed by hand and is the bit-exact format the tests rely on;
//! PNG/JPEG go through the `image` crate for real datasets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::Read;
use std::path::Path;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Interleaved RGB bytes to `[3, H, W]` f32 (still 0-255).
fn rgb_to_tensor(w: usize, h: usize, rgb: &[u8]) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = rgb[p * 3 + c] as f32;
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

/// Reads one whitespace/comment-delimited token of a PPM header.
fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(path, "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_usize(tok: &[u8], path: &Path) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "bad header integer"))
}

pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = ppm_token(&bytes, &mut pos, path)?;
    if magic != b"P6" {
        return Err(format_err(path, "not a P6 PPM"));
    }
    let w = parse_usize(ppm_token(&bytes, &mut pos, path)?, path)?;
    let h = parse_usize(ppm_token(&bytes, &mut pos, path)?, path)?;
    let maxval = parse_usize(ppm_token(&bytes, &mut pos, path)?, path)?;
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated pixel payload"));
    }
    Ok(rgb_to_tensor(w, h, &bytes[pos..pos + need]))
}

/// Writes a P6 PPM from a raw `[3, H, W]` 0-255 tensor.
pub fn save_ppm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for c in 0..3 {
            out.push(img.data()[c * h * w + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads PPM, PNG, or JPEG by extension into raw 0-255 `[3, H, W]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    if !path.exists() {
        return Err(Error::Data(format!("image {} not found", path.display())));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => load_ppm(path),
        "png" | "jpg" | "jpeg" => {
            let img = image::open(path)
                .map_err(|e| format_err(path, e.to_string()))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            Ok(rgb_to_tensor(w, h, img.as_raw()))
        }
        other => Err(format_err(path, format!("unsupported extension {other:?}"))),
    }
}

/// True when the extension is one [`load_image`] understands.
pub fn is_supported_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("ppm" | "png" | "jpg" | "jpeg")
    )
}
