use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ImagePlane;
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 11;

/// The eleven facial classes, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FaceClass {
    Background = 0,
    Hair,
    Nose,
    LeftEye,
    RightEye,
    LeftEyebrow,
    RightEyebrow,
    UpperLip,
    LowerLip,
    InnerMouth,
    Skin,
}

impl FaceClass {
    pub const ALL: [FaceClass; NUM_CLASSES] = [
        FaceClass::Background,
        FaceClass::Hair,
        FaceClass::Nose,
        FaceClass::LeftEye,
        FaceClass::RightEye,
        FaceClass::LeftEyebrow,
        FaceClass::RightEyebrow,
        FaceClass::UpperLip,
        FaceClass::LowerLip,
        FaceClass::InnerMouth,
        FaceClass::Skin,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self as usize]
    }
}

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "hair",
    "nose",
    "left_eye",
    "right_eye",
    "left_eyebrow",
    "right_eyebrow",
    "upper_lip",
    "lower_lip",
    "inner_mouth",
    "skin",
];

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    ids: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("label map dimensions must be positive, got {height}x{width}")));
        }
        if ids.len() != height * width {
            return Err(Error::dim("LabelMap::new", height * width, ids.len()));
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!("class id {bad} out of range 0..{NUM_CLASSES}")));
        }
        Ok(Self { height, width, ids })
    }

    pub fn filled(height: usize, width: usize, class: FaceClass) -> Result<Self> {
        Self::new(height, width, vec![class.id(); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }
}

/// One RGB color per class id, pairwise distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: [[u8; 3]; NUM_CLASSES],
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PaletteFile {
    Named { classes: Vec<String>, colors: Vec<[u8; 3]> },
    Bare(Vec<[u8; 3]>),
}

impl Palette {
    pub fn new(colors: [[u8; 3]; NUM_CLASSES]) -> Result<Self> {
        for i in 0..NUM_CLASSES {
            for j in i + 1..NUM_CLASSES {
                if colors[i] == colors[j] {
                    return Err(Error::InvalidArgument(format!(
                        "palette colors for classes {} and {} coincide",
                        CLASS_NAMES[i], CLASS_NAMES[j]
                    )));
                }
            }
        }
        Ok(Self { colors })
    }

    pub fn colors(&self) -> &[[u8; 3]; NUM_CLASSES] {
        &self.colors
    }

    pub fn color(&self, class: u8) -> [u8; 3] {
        self.colors[class as usize]
    }

    /// JSON sidecar: class names in id order plus the color triples.
    pub fn to_json(&self) -> String {
        let file = PaletteFile::Named {
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            colors: self.colors.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("palette serializes")
    }

    /// Accepts the named form written by [`Palette::to_json`] or a bare
    /// array of eleven `[r, g, b]` triples.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PaletteFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("palette JSON: {e}")))?;
        let colors = match file {
            PaletteFile::Named { classes, colors } => {
                if classes.iter().map(String::as_str).ne(CLASS_NAMES) {
                    return Err(Error::Config(format!("palette class list must be {CLASS_NAMES:?}")));
                }
                colors
            }
            PaletteFile::Bare(colors) => colors,
        };
        let colors: [[u8; 3]; NUM_CLASSES] = colors
            .try_into()
            .map_err(|v: Vec<_>| Error::Config(format!("palette needs {NUM_CLASSES} colors, got {}", v.len())))?;
        Self::new(colors)
    }
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: [
                [0, 0, 0],       // background
                [0, 0, 204],     // hair
                [76, 153, 0],    // nose
                [51, 51, 255],   // left eye
                [204, 0, 204],   // right eye
                [255, 204, 204], // left eyebrow
                [0, 255, 255],   // right eyebrow
                [255, 255, 0],   // upper lip
                [0, 0, 153],     // lower lip
                [102, 204, 0],   // inner mouth
                [204, 0, 0],     // skin
            ],
        }
    }
}

pub fn colorize_labels(map: &LabelMap, palette: &Palette) -> ImagePlane {
    let data = map
        .ids
        .iter()
        .flat_map(|&id| palette.color(id).map(f64::from))
        .collect();
    ImagePlane::new(map.height, map.width, data).expect("palette colors are in range")
}

/// Inverse of [`colorize_labels`]. Pixels that match no palette color
/// exactly are assigned the nearest color (Euclidean in RGB) and counted;
/// in strict mode any mismatch is an error. Returns the map and the
/// mismatch count.
pub fn decode_labels(img: &ImagePlane, palette: &Palette, strict: bool) -> Result<(LabelMap, usize)> {
    let exact: HashMap<[u8; 3], u8> = palette
        .colors
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i as u8))
        .collect();
    let mut mismatches = 0;
    let mut ids = Vec::with_capacity(img.height() * img.width());
    for p in img.data().chunks_exact(3) {
        let as_u8 = |v: f64| (v.fract() == 0.0).then_some(v as u8);
        let hit = match (as_u8(p[0]), as_u8(p[1]), as_u8(p[2])) {
            (Some(r), Some(g), Some(b)) => exact.get(&[r, g, b]).copied(),
            _ => None,
        };
        let id = match hit {
            Some(id) => id,
            None => {
                mismatches += 1;
                nearest(palette, [p[0], p[1], p[2]])
            }
        };
        ids.push(id);
    }
    if strict && mismatches > 0 {
        return Err(Error::PaletteMismatch { mismatches });
    }
    Ok((LabelMap::new(img.height(), img.width(), ids)?, mismatches))
}

fn nearest(palette: &Palette, p: [f64; 3]) -> u8 {
    let dist = |c: &[u8; 3]| (0..3).map(|k| (p[k] - f64::from(c[k])).powi(2)).sum::<f64>();
    let mut best = 0;
    for (i, c) in palette.colors.iter().enumerate() {
        if dist(c) < dist(&palette.colors[best]) {
            best = i;
        }
    }
    best as u8
}
