//! Pixel-area-relation resizing: downscales average the exact
//! overlap-weighted footprint of each output pixel; upscales fall back to
//! bilinear sampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resizes `[3, H, W]` (or any `[C, H, W]`) to `[C, out_h, out_w]`.
pub fn resize_area(img: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    if img.shape().len() != 3 {
        return Err(Error::InvalidShape(format!(
            "resize expects [C, H, W], got {:?}",
            img.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape("zero target dimension".into()));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if h == out_h && w == out_w {
        return Ok(img.clone());
    }
    if out_h <= h && out_w <= w {
        area_downscale(img, c, h, w, out_h, out_w)
    } else {
        bilinear(img, c, h, w, out_h, out_w)
    }
}

/// Each output pixel back-projects to a `sh x sw` box in the input; partially
/// covered input pixels contribute proportionally to the overlap area.
fn area_downscale(
    img: &Tensor<f32>,
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<f32>> {
    let sh = h as f64 / out_h as f64;
    let sw = w as f64 / out_w as f64;
    let mut out = vec![0.0f32; c * out_h * out_w];

    // per-axis (index, weight) runs are the same for every row/column
    let spans = |n: usize, scale: f64, limit: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n)
            .map(|i| {
                let lo = i as f64 * scale;
                let hi = (i + 1) as f64 * scale;
                let mut run = Vec::new();
                let mut p = lo.floor() as usize;
                while (p as f64) < hi && p < limit {
                    let cover = (hi.min((p + 1) as f64) - lo.max(p as f64)).max(0.0);
                    if cover > 0.0 {
                        run.push((p, cover));
                    }
                    p += 1;
                }
                run
            })
            .collect()
    };
    let rows = spans(out_h, sh, h);
    let cols = spans(out_w, sw, w);

    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        for (oi, row_span) in rows.iter().enumerate() {
            for (oj, col_span) in cols.iter().enumerate() {
                let mut acc = 0.0f64;
                let mut total = 0.0f64;
                for &(ih, wh) in row_span {
                    for &(iw, ww) in col_span {
                        acc += plane[ih * w + iw] as f64 * wh * ww;
                        total += wh * ww;
                    }
                }
                out[(ci * out_h + oi) * out_w + oj] = (acc / total) as f32;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

fn bilinear(
    img: &Tensor<f32>,
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<f32>> {
    let sh = h as f64 / out_h as f64;
    let sw = w as f64 / out_w as f64;
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        for oi in 0..out_h {
            // half-pixel centers
            let fy = ((oi as f64 + 0.5) * sh - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let dy = fy - y0 as f64;
            for oj in 0..out_w {
                let fx = ((oj as f64 + 0.5) * sw - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let dx = fx - x0 as f64;
                let v = plane[y0 * w + x0] as f64 * (1.0 - dy) * (1.0 - dx)
                    + plane[y0 * w + x1] as f64 * (1.0 - dy) * dx
                    + plane[y1 * w + x0] as f64 * dy * (1.0 - dx)
                    + plane[y1 * w + x1] as f64 * dy * dx;
                out[(ci * out_h + oi) * out_w + oj] = v as f32;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Maps raw 0-255 values into [0, 1].
pub fn normalize(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| v / 255.0)
}
