//! The embed/generate boundary. A [`Codec`] maps images to 16×512 latents
//! and back; [`ToyLinearCodec`] is the deterministic implementation used
//! throughout this crate, and [`CodecDescriptor`] is how configs name one.

mod toy;

use serde::{Deserialize, Serialize};

pub use toy::{orthonormalize_rows, ToyLinearCodec};

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::numerics::tensor::all_finite;

pub const LATENT_ROWS: usize = 16;
pub const LATENT_COLS: usize = 512;
pub const LATENT_LEN: usize = LATENT_ROWS * LATENT_COLS;

/// One face embedding: 16 style rows of 512 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; LATENT_LEN],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != LATENT_LEN {
            return Err(Error::dim("Latent::from_vec", LATENT_LEN, data.len()));
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("latent has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * LATENT_COLS..(r + 1) * LATENT_COLS]
    }

    /// Elementwise `a·self + b·other`.
    pub fn lerp(&self, other: &Latent, a: f64, b: f64) -> Latent {
        Latent {
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }
}

/// Image ⇄ latent mapping. Implementations are immutable after
/// construction, deterministic, and safe to share across threads.
pub trait Codec: Send + Sync {
    /// `(height, width)` the codec embeds and generates at.
    fn working_resolution(&self) -> (usize, usize);

    /// `(height, width)` of images returned by [`Codec::generate`].
    fn output_resolution(&self) -> (usize, usize);

    /// Resizes to the working resolution if needed, then embeds.
    fn embed(&self, img: &ImagePlane) -> Result<Latent>;

    /// Clamped image at the output resolution.
    fn generate(&self, z: &Latent) -> Result<ImagePlane>;

    /// Embed raw working-resolution pixels (HWC, `[0,255]` units, not
    /// range-checked).
    fn embed_float(&self, pixels: &[f64]) -> Result<Latent>;

    /// Unclamped working-resolution pixels (HWC, `[0,255]` units).
    fn generate_float(&self, z: &Latent) -> Result<Vec<f64>>;

    /// Given `∂L/∂pixels` for the output of [`Codec::generate_float`],
    /// return `∂L/∂z`.
    fn pullback(&self, z: &Latent, d_pixels: &[f64]) -> Result<Latent>;
}

/// Config-file name for a codec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum CodecDescriptor {
    Toy {
        seed: u64,
        /// Side of the square working resolution; `3·side² ≤ 8192`.
        working_resolution: usize,
        /// Side of generated images; defaults to the working resolution.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_resolution: Option<usize>,
    },
    /// Reserved slot for an out-of-process generator.
    External { endpoint: String },
}

impl Default for CodecDescriptor {
    fn default() -> Self {
        CodecDescriptor::Toy {
            seed: 0,
            working_resolution: 32,
            output_resolution: None,
        }
    }
}

impl CodecDescriptor {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CodecDescriptor::Toy {
                working_resolution,
                output_resolution,
                ..
            } => {
                ToyLinearCodec::check_resolution(working_resolution)?;
                if output_resolution == Some(0) {
                    return Err(Error::Config("codec output_resolution must be positive".into()));
                }
                Ok(())
            }
            CodecDescriptor::External { .. } => Ok(()),
        }
    }

    /// Build (or fetch from the in-process cache) the described codec.
    pub fn build(&self) -> Result<std::sync::Arc<dyn Codec>> {
        self.validate()?;
        match *self {
            CodecDescriptor::Toy {
                seed,
                working_resolution,
                output_resolution,
            } => {
                let codec = ToyLinearCodec::cached(seed, working_resolution)?;
                Ok(match output_resolution {
                    Some(out) if out != working_resolution => std::sync::Arc::new(codec.with_output_resolution(out)),
                    _ => codec,
                })
            }
            CodecDescriptor::External { ref endpoint } => Err(Error::Unsupported(format!(
                "external codec at {endpoint:?} is a reserved slot with no implementation"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_checks() {
        assert!(Latent::from_vec(vec![0.0; 10]).is_err());
        let mut v = vec![0.0; LATENT_LEN];
        v[5] = f64::NAN;
        assert!(matches!(Latent::from_vec(v), Err(Error::NonFinite(_))));
        let z = Latent::from_vec((0..LATENT_LEN).map(|i| i as f64).collect()).unwrap();
        assert_eq!(z.row(1)[0], 512.0);
    }

    #[test]
    fn descriptor_json() {
        let d: CodecDescriptor = serde_json::from_str(r#"{"type":"toy","seed":3,"working_resolution":8}"#).unwrap();
        assert_eq!(
            d,
            CodecDescriptor::Toy {
                seed: 3,
                working_resolution: 8,
                output_resolution: None
            }
        );
        assert!(serde_json::from_str::<CodecDescriptor>(r#"{"type":"toy","seed":3,"working_resolution":8,"x":1}"#).is_err());
        let ext: CodecDescriptor = serde_json::from_str(r#"{"type":"external","endpoint":"http://gan:9000"}"#).unwrap();
        assert!(matches!(ext.build(), Err(Error::Unsupported(_))));
        let too_big = CodecDescriptor::Toy {
            seed: 0,
            working_resolution: 64,
            output_resolution: None,
        };
        assert!(too_big.validate().is_err());
    }
}
