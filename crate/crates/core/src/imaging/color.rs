//! RGB ↔ HSV with hue in half-degree units, `[0, 180)`, and the hue and
//! saturation jitter operations.

use log::warn;

use super::ImagePlane;
use crate::error::{Error, Result};

/// Largest admissible magnitude of a hue or saturation shift.
pub const JITTER_LIMIT: f64 = 5.0;

/// Per-pixel hue `[0, 180)`, saturation and value in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvPlane {
    pub height: usize,
    pub width: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

fn wrap_hue(h: f64) -> f64 {
    let w = h.rem_euclid(180.0);
    // rem_euclid can round up to exactly 180 for tiny negative inputs.
    if w >= 180.0 {
        0.0
    } else {
        w
    }
}

fn pixel_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { 255.0 * delta / max } else { 0.0 };
    let hue_deg = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (wrap_hue(hue_deg / 2.0), s, max)
}

fn pixel_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s / 255.0;
    let sector = (h * 2.0) / 60.0;
    let x = c * (1.0 - ((sector % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match sector as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

pub fn rgb_to_hsv(img: &ImagePlane) -> HsvPlane {
    let n = img.height() * img.width();
    let mut out = HsvPlane {
        height: img.height(),
        width: img.width(),
        h: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    for p in img.data().chunks_exact(3) {
        let (h, s, v) = pixel_to_hsv([p[0], p[1], p[2]]);
        out.h.push(h);
        out.s.push(s);
        out.v.push(v);
    }
    out
}

pub fn hsv_to_rgb(hsv: &HsvPlane) -> ImagePlane {
    let mut data = Vec::with_capacity(hsv.h.len() * 3);
    for i in 0..hsv.h.len() {
        data.extend(pixel_to_rgb(hsv.h[i], hsv.s[i], hsv.v[i]));
    }
    ImagePlane::new_clamped(hsv.height, hsv.width, data).expect("hsv plane has positive dimensions")
}

fn check_shift(what: &str, amount: f64, strict: bool) -> Result<()> {
    if !amount.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} shift must be finite")));
    }
    if amount.abs() > JITTER_LIMIT {
        if strict {
            return Err(Error::InvalidArgument(format!(
                "{what} shift {amount} outside [-{JITTER_LIMIT}, {JITTER_LIMIT}]"
            )));
        }
        warn!("{what} shift {amount} outside [-{JITTER_LIMIT}, {JITTER_LIMIT}]");
    }
    Ok(())
}

/// `h' = (h + x) mod 180` with a non-negative remainder.
pub fn shift_hue(hsv: &HsvPlane, x: f64, strict: bool) -> Result<HsvPlane> {
    check_shift("hue", x, strict)?;
    let mut out = hsv.clone();
    for h in &mut out.h {
        *h = wrap_hue(*h + x);
    }
    Ok(out)
}

/// `s' = min(255, max(0, s + y))`.
pub fn shift_saturation(hsv: &HsvPlane, y: f64, strict: bool) -> Result<HsvPlane> {
    check_shift("saturation", y, strict)?;
    let mut out = hsv.clone();
    for s in &mut out.s {
        *s = (*s + y).clamp(0.0, 255.0);
    }
    Ok(out)
}
