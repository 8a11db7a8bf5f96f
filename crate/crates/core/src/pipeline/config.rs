use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::codec::CodecDescriptor;
use crate::error::{Error, Result};
use crate::numerics::mlp::DEFAULT_DROPOUT;
use crate::numerics::{AdamConfig, MlpDims};

/// Where the training loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSpace {
    /// MSE between predicted and real child latents.
    #[default]
    Latent,
    /// MSE between the generated image (unclamped, working resolution) and
    /// the real child image resized to the working resolution.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of families assigned to training; the rest validate.
    pub train_fraction: f64,
    pub loss_space: LossSpace,
    /// Feed colorized label maps to the codec instead of photos.
    pub use_segmentation: bool,
    pub dropout_p: f64,
    pub augment: AugmentConfig,
    pub codec: CodecDescriptor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-5,
            epochs: 200,
            seed: 0,
            train_fraction: 0.8,
            loss_space: LossSpace::Latent,
            use_segmentation: false,
            dropout_p: DEFAULT_DROPOUT,
            augment: AugmentConfig::default(),
            codec: CodecDescriptor::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, strict: bool) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} not in (0, 1]", self.train_fraction)));
        }
        self.augment.validate(strict)?;
        self.codec.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// SHA-256 over the canonical JSON of everything that fixes the meaning
    /// of a trained model's inputs and outputs: the codec descriptor, the
    /// segmentation flag and the network shape. Checkpoints carry it and
    /// prediction refuses a mismatch.
    pub fn config_digest(&self) -> String {
        let canonical = serde_json::json!({
            "codec": self.codec,
            "use_segmentation": self.use_segmentation,
            "dims": MlpDims::AGGREGATOR,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.lr, c.dropout_p), (16, 1e-5, 0.25));
        assert!(c.validate(true).is_ok());
    }

    #[test]
    fn digest_tracks_codec_and_segmentation_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.lr = 3e-4;
        b.epochs = 5;
        assert_eq!(a.config_digest(), b.config_digest());
        b.use_segmentation = true;
        assert_ne!(a.config_digest(), b.config_digest());
        let mut c = a.clone();
        c.codec = CodecDescriptor::Toy {
            seed: 9,
            working_resolution: 32,
            output_resolution: None,
        };
        assert_ne!(a.config_digest(), c.config_digest());
        assert_eq!(a.config_digest().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batch_size": 4, "bogus": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"batch_size": 4}"#).unwrap();
        assert_eq!(c.epochs, 200);
    }

    #[test]
    fn invalid_values_rejected() {
        let c = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(c.validate(false).is_err());
        let c = TrainConfig {
            lr: f64::NAN,
            ..Default::default()
        };
        assert!(c.validate(false).is_err());
    }
}
