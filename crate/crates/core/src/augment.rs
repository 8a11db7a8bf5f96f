//! Parent-image augmentation: MixUp between the two parents of a family and
//! a reduced AugMix family of single affine operations, gated by one
//! probability draw per family. Children pass through untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{hsv_to_rgb, rgb_to_hsv, shift_hue, shift_saturation, ImagePlane, JITTER_LIMIT};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    #[default]
    None,
    Mixup,
    Augmix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability that a family's parents are augmented at all.
    pub p_apply: f64,
    pub mode: AugmentMode,
    /// Rotation magnitudes are drawn from `[-r, r]` degrees.
    pub rotate_range_deg: f64,
    /// Shear factors are drawn from `[-s, s]`.
    pub shear_range: f64,
    /// Translations are drawn from `[-t, t]` as a fraction of the image side.
    pub translate_frac: f64,
    /// Affine operations applied per parent in `augmix` mode.
    pub chain_length: usize,
    /// Also apply a random hue/saturation shift to augmented parents.
    pub jitter: bool,
    pub hue_range: [f64; 2],
    pub sat_range: [f64; 2],
    /// Fixed `[alpha, beta]` instead of uniform draws (ablations and tests).
    pub pinned_mixup: Option<[f64; 2]>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_apply: 0.5,
            mode: AugmentMode::None,
            rotate_range_deg: 15.0,
            shear_range: 0.10,
            translate_frac: 0.10,
            chain_length: 1,
            jitter: false,
            hue_range: [-JITTER_LIMIT, JITTER_LIMIT],
            sat_range: [-JITTER_LIMIT, JITTER_LIMIT],
            pinned_mixup: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, strict: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.p_apply) {
            return bad(format!("p_apply {} not in [0, 1]", self.p_apply));
        }
        for (name, v) in [
            ("rotate_range_deg", self.rotate_range_deg),
            ("shear_range", self.shear_range),
            ("translate_frac", self.translate_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.chain_length == 0 {
            return bad("chain_length must be at least 1".into());
        }
        for (name, [lo, hi]) in [("hue_range", self.hue_range), ("sat_range", self.sat_range)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!("{name} [{lo}, {hi}] is not an interval"));
            }
            if strict && (lo < -JITTER_LIMIT || hi > JITTER_LIMIT) {
                return bad(format!("{name} [{lo}, {hi}] exceeds [-{JITTER_LIMIT}, {JITTER_LIMIT}]"));
            }
        }
        if let Some([a, b]) = self.pinned_mixup {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return bad(format!("pinned_mixup weights [{a}, {b}] not in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineKind {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Hflip,
}

impl AffineKind {
    pub const ALL: [AffineKind; 6] = [
        AffineKind::ShearX,
        AffineKind::ShearY,
        AffineKind::TranslateX,
        AffineKind::TranslateY,
        AffineKind::Rotate,
        AffineKind::Hflip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AffineKind::ShearX => "shear_x",
            AffineKind::ShearY => "shear_y",
            AffineKind::TranslateX => "translate_x",
            AffineKind::TranslateY => "translate_y",
            AffineKind::Rotate => "rotate",
            AffineKind::Hflip => "hflip",
        }
    }
}

/// One affine operation. Magnitudes: shear factor, translation as a
/// fraction of the image side (positive moves content right/down), or
/// rotation in degrees (positive is counter-clockwise on screen). `Hflip`
/// ignores its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineOp {
    pub kind: AffineKind,
    pub magnitude: f64,
}

/// `img_f' = α·img_f + (1−α)·img_m`, `img_m' = β·img_m + (1−β)·img_f`.
pub fn mixup_parents(father: &ImagePlane, mother: &ImagePlane, alpha: f64, beta: f64) -> Result<(ImagePlane, ImagePlane)> {
    if father.dims() != mother.dims() {
        return Err(Error::dim(
            "mixup_parents",
            format!("{:?}", father.dims()),
            format!("{:?}", mother.dims()),
        ));
    }
    for w in [alpha, beta] {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidArgument(format!("mixup weight {w} not in [0, 1]")));
        }
    }
    let mix = |w: f64, a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (w * x + (1.0 - w) * y).clamp(x.min(y), x.max(y)))
            .collect()
    };
    let (h, w) = father.dims();
    Ok((
        ImagePlane::new(h, w, mix(alpha, father.data(), mother.data()))?,
        ImagePlane::new(h, w, mix(beta, mother.data(), father.data()))?,
    ))
}

/// Uniform choice among the six kinds, then a uniform magnitude within the
/// kind's configured range. `Hflip` consumes no magnitude draw.
pub fn sample_affine(rng: &mut SeededRng, cfg: &AugmentConfig) -> AffineOp {
    let kind = AffineKind::ALL[rng.below(AffineKind::ALL.len())];
    let range = match kind {
        AffineKind::ShearX | AffineKind::ShearY => cfg.shear_range,
        AffineKind::TranslateX | AffineKind::TranslateY => cfg.translate_frac,
        AffineKind::Rotate => cfg.rotate_range_deg,
        AffineKind::Hflip => return AffineOp { kind, magnitude: 0.0 },
    };
    AffineOp {
        kind,
        magnitude: rng.uniform_in(-range, range),
    }
}

fn sample_bilinear(img: &ImagePlane, sy: f64, sx: f64, out: &mut Vec<f64>) {
    let (h, w) = img.dims();
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    for c in 0..3 {
        let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
        let bottom = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
        out.push(top * (1.0 - fy) + bottom * fy);
    }
}

/// Inverse-mapped warp about the image center with bilinear sampling and
/// edge replication. `Hflip` is an exact column reversal.
pub fn apply_affine(img: &ImagePlane, op: AffineOp) -> ImagePlane {
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    if op.kind == AffineKind::Hflip {
        for y in 0..h {
            for x in (0..w).rev() {
                data.extend(img.pixel(y, x));
            }
        }
        return ImagePlane::new(h, w, data).expect("same dimensions");
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let m = op.magnitude;
    let (sin, cos) = m.to_radians().sin_cos();
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64, x as f64);
            let (sy, sx) = match op.kind {
                AffineKind::TranslateX => (yf, xf - m * w as f64),
                AffineKind::TranslateY => (yf - m * h as f64, xf),
                AffineKind::ShearX => (yf, xf - m * (yf - cy)),
                AffineKind::ShearY => (yf - m * (xf - cx), xf),
                AffineKind::Rotate => {
                    let (dy, dx) = (yf - cy, xf - cx);
                    (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
                }
                AffineKind::Hflip => unreachable!(),
            };
            sample_bilinear(img, sy, sx, &mut data);
        }
    }
    ImagePlane::new_clamped(h, w, data).expect("same dimensions")
}

/// Shift hue by `x` and saturation by `y` in HSV space.
pub fn jitter_hue_saturation(img: &ImagePlane, x: f64, y: f64, strict: bool) -> Result<ImagePlane> {
    let hsv = shift_saturation(&shift_hue(&rgb_to_hsv(img), x, strict)?, y, strict)?;
    Ok(hsv_to_rgb(&hsv))
}

/// What happened to one family.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentRecord {
    pub applied: bool,
    pub mixup: Option<[f64; 2]>,
    pub father_ops: Vec<AffineOp>,
    pub mother_ops: Vec<AffineOp>,
    /// `[hue, saturation]` shift per parent, father first.
    pub jitter: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct AugmentedFamily {
    pub father: ImagePlane,
    pub mother: ImagePlane,
    pub child: ImagePlane,
    pub record: AugmentRecord,
}

/// Augment one family's parents. One uniform draw gates the whole family;
/// the child is moved through unchanged on every path.
pub fn augment_family(
    father: ImagePlane,
    mother: ImagePlane,
    child: ImagePlane,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
    strict: bool,
) -> Result<AugmentedFamily> {
    let gate = rng.uniform();
    let mut record = AugmentRecord::default();
    if !(gate < cfg.p_apply) || (cfg.mode == AugmentMode::None && !cfg.jitter) {
        return Ok(AugmentedFamily {
            father,
            mother,
            child,
            record,
        });
    }
    record.applied = true;
    let (mut father, mut mother) = match cfg.mode {
        AugmentMode::None => (father, mother),
        AugmentMode::Mixup => {
            let [alpha, beta] = match cfg.pinned_mixup {
                Some(w) => w,
                None => [rng.uniform(), rng.uniform()],
            };
            record.mixup = Some([alpha, beta]);
            mixup_parents(&father, &mother, alpha, beta)?
        }
        AugmentMode::Augmix => {
            let mut f = father;
            for _ in 0..cfg.chain_length {
                let op = sample_affine(rng, cfg);
                f = apply_affine(&f, op);
                record.father_ops.push(op);
            }
            let mut m = mother;
            for _ in 0..cfg.chain_length {
                let op = sample_affine(rng, cfg);
                m = apply_affine(&m, op);
                record.mother_ops.push(op);
            }
            (f, m)
        }
    };
    if cfg.jitter {
        for img in [&mut father, &mut mother] {
            let x = rng.uniform_in(cfg.hue_range[0], cfg.hue_range[1]);
            let y = rng.uniform_in(cfg.sat_range[0], cfg.sat_range[1]);
            *img = jitter_hue_saturation(img, x, y, strict)?;
            record.jitter.push([x, y]);
        }
    }
    Ok(AugmentedFamily {
        father,
        mother,
        child,
        record,
    })
}
