//! Resampling with half-pixel centers (the `align_corners = false`
//! convention): output pixel `i` samples source coordinate
//! `(i + 0.5) · in / out − 0.5`, clamped to the valid range.

use super::labels::LabelMap;
use super::ImagePlane;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Source index and interpolation weight of the upper neighbour.
fn bilinear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub(crate) fn nearest_index(out: usize, input: usize) -> Vec<usize> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(input - 1))
        .collect()
}

fn check_target(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("resize target must be positive, got {out_h}x{out_w}")));
    }
    Ok(())
}

pub fn resize(img: &ImagePlane, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<ImagePlane> {
    check_target(out_h, out_w)?;
    if img.dims() == (out_h, out_w) {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    match mode {
        ResizeMode::Nearest => {
            let ys = nearest_index(out_h, img.height());
            let xs = nearest_index(out_w, img.width());
            for &y in &ys {
                for &x in &xs {
                    data.extend(img.pixel(y, x));
                }
            }
        }
        ResizeMode::Bilinear => {
            let ys = bilinear_taps(out_h, img.height());
            let xs = bilinear_taps(out_w, img.width());
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    for c in 0..3 {
                        let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                        let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                        data.push(top * (1.0 - fy) + bottom * fy);
                    }
                }
            }
        }
    }
    ImagePlane::new_clamped(out_h, out_w, data)
}

/// Nearest-neighbour resize; labels are never blended.
pub fn resize_labels(map: &LabelMap, out_h: usize, out_w: usize) -> Result<LabelMap> {
    check_target(out_h, out_w)?;
    let ys = nearest_index(out_h, map.height());
    let xs = nearest_index(out_w, map.width());
    let ids = ys.iter().flat_map(|&y| xs.iter().map(move |&x| map.get(y, x))).collect();
    LabelMap::new(out_h, out_w, ids)
}
