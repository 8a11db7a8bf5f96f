//! PNG boundaries. Images are 8-bit RGB and are quantized with
//! round-half-up on save; label maps are 8-bit grayscale PNGs holding raw
//! class ids; palettes are JSON sidecars.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use super::labels::{LabelMap, Palette, NUM_CLASSES};
use super::ImagePlane;
use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn load_image(path: &Path) -> Result<ImagePlane> {
    let img = decode(path)?;
    let DynamicImage::ImageRgb8(rgb) = img else {
        return Err(Error::io(
            path,
            format!("expected 8-bit RGB image, found {:?}", img.color()),
        ));
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    ImagePlane::new(h as usize, w as usize, data)
}

pub fn save_image(img: &ImagePlane, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::io(path, e))
}

pub fn load_labelmap(path: &Path) -> Result<LabelMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::io(
            path,
            format!("expected 8-bit single-channel label map, found {:?}", img.color()),
        ));
    };
    let (w, h) = gray.dimensions();
    if let Some(bad) = gray.as_raw().iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return Err(Error::io(path, format!("label value {bad} is not a class id (0..{NUM_CLASSES})")));
    }
    LabelMap::new(h as usize, w as usize, gray.into_raw())
}

pub fn save_labelmap(map: &LabelMap, path: &Path) -> Result<()> {
    let buf = GrayImage::from_raw(map.width() as u32, map.height() as u32, map.ids().to_vec())
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::io(path, e))
}

pub fn load_palette(path: &Path) -> Result<Palette> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Palette::from_json(&text)
}

pub fn save_palette(palette: &Palette, path: &Path) -> Result<()> {
    std::fs::write(path, palette.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn round_half_up() {
        assert_eq!(quantize(0.49), 0);
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(254.5), 255);
        assert_eq!(quantize(255.0), 255);
    }

    #[test]
    fn image_round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut rng = SeededRng::new(5);
        let img = ImagePlane::from_fn(6, 9, |_, _| [0; 3].map(|_| rng.uniform_in(0.0, 255.0))).unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        let expected: Vec<f64> = img.data().iter().map(|&v| f64::from(quantize(v))).collect();
        assert_eq!(back.data(), &expected[..]);
    }

    #[test]
    fn white_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        save_image(&ImagePlane::filled(3, 4, [255.0; 3]).unwrap(), &path).unwrap();
        let raw = image::open(&path).unwrap().to_rgb8();
        assert!(raw.as_raw().iter().all(|&v| v == 255));
    }

    #[test]
    fn label_png_with_bad_id_names_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        GrayImage::from_raw(2, 1, vec![3, 11]).unwrap().save(&path).unwrap();
        let err = load_labelmap(&path).unwrap_err().to_string();
        assert!(err.contains("label value 11"), "{err}");
    }

    #[test]
    fn labelmap_round_trip_and_channel_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 8, 9, 10]).unwrap();
        save_labelmap(&map, &path).unwrap();
        assert_eq!(load_labelmap(&path).unwrap(), map);
        // A label PNG is not an RGB image and vice versa.
        assert!(load_image(&path).unwrap_err().to_string().contains("RGB"));
        let rgb = dir.path().join("rgb.png");
        save_image(&ImagePlane::filled(2, 2, [1.0; 3]).unwrap(), &rgb).unwrap();
        assert!(load_labelmap(&rgb).unwrap_err().to_string().contains("single-channel"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image(Path::new("/nonexistent/face.png")).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/face.png"));
    }
}
