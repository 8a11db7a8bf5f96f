//! Dataset ingestion and the train/predict loop: load a family, optionally
//! swap photos for colorized label maps, augment the parents, embed all
//! three faces, concatenate the parent latents and fit the aggregator.

mod config;
mod manifest;
mod train;

use std::sync::Arc;

pub use config::{LossSpace, TrainConfig};
pub use manifest::{write_manifest, DatasetManifest, FamilyTriplet, Split};
pub use train::{EpochMetrics, MetricsHistory, TrainOutcome};

use crate::augment::{augment_family, AugmentMode, AugmentRecord};
use crate::codec::{Codec, Latent, LATENT_LEN};
use crate::error::{Error, Result};
use crate::imaging::{colorize_labels, load_image, load_labelmap, ImagePlane, Palette};
use crate::numerics::{mlp, Checkpoint, Dropout, Tensor};

/// The three codec-side images of one family: photos, or colorized label
/// maps when segmentation is on.
#[derive(Debug, Clone)]
pub struct FamilyImages {
    pub father: ImagePlane,
    pub mother: ImagePlane,
    pub child: ImagePlane,
}

#[derive(Debug, Clone)]
pub struct FamilyLatents {
    pub father: Latent,
    pub mother: Latent,
    pub child: Latent,
    pub record: AugmentRecord,
}

/// Father rows then mother rows, flattened row-major into one
/// `[1, 16384]` input row.
pub fn concat_parents(g_f: &Latent, g_m: &Latent) -> Tensor {
    let mut data = Vec::with_capacity(2 * LATENT_LEN);
    data.extend_from_slice(g_f.data());
    data.extend_from_slice(g_m.data());
    Tensor::from_vec(&[1, 2 * LATENT_LEN], data).expect("two latents fill one row")
}

/// A resolved configuration with its codec and palette.
#[derive(Clone)]
pub struct Pipeline {
    pub cfg: TrainConfig,
    pub codec: Arc<dyn Codec>,
    pub palette: Palette,
    pub strict: bool,
}

impl Pipeline {
    pub fn new(cfg: TrainConfig, palette: Palette, strict: bool) -> Result<Self> {
        cfg.validate(strict)?;
        let codec = cfg.codec.build()?;
        Ok(Self {
            cfg,
            codec,
            palette,
            strict,
        })
    }

    pub fn with_codec(cfg: TrainConfig, codec: Arc<dyn Codec>, palette: Palette, strict: bool) -> Result<Self> {
        cfg.validate(strict)?;
        Ok(Self {
            cfg,
            codec,
            palette,
            strict,
        })
    }

    pub fn config_digest(&self) -> String {
        self.cfg.config_digest()
    }

    /// Whether augmentation can change anything at all.
    pub(crate) fn augments(&self) -> bool {
        let a = &self.cfg.augment;
        a.p_apply > 0.0 && (a.mode != AugmentMode::None || a.jitter)
    }

    pub fn load_family(&self, fam: &FamilyTriplet) -> Result<FamilyImages> {
        if !self.cfg.use_segmentation {
            return Ok(FamilyImages {
                father: load_image(&fam.father)?,
                mother: load_image(&fam.mother)?,
                child: load_image(&fam.child)?,
            });
        }
        let labels = |p: &Option<std::path::PathBuf>, who: &str| -> Result<ImagePlane> {
            let p = p.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "family {:?}: use_segmentation is on but {who}_labels is missing",
                    fam.family_id
                ))
            })?;
            Ok(colorize_labels(&load_labelmap(p)?, &self.palette))
        };
        Ok(FamilyImages {
            father: labels(&fam.father_labels, "father")?,
            mother: labels(&fam.mother_labels, "mother")?,
            child: labels(&fam.child_labels, "child")?,
        })
    }

    /// Augment the parents with `rng`, then embed all three. The child is
    /// embedded exactly as loaded.
    pub fn embed_family(&self, images: &FamilyImages, rng: &mut crate::numerics::SeededRng) -> Result<FamilyLatents> {
        let out = augment_family(
            images.father.clone(),
            images.mother.clone(),
            images.child.clone(),
            &self.cfg.augment,
            rng,
            self.strict,
        )?;
        debug_assert_eq!(out.child, images.child, "child image altered by augmentation");
        Ok(FamilyLatents {
            father: self.codec.embed(&out.father)?,
            mother: self.codec.embed(&out.mother)?,
            child: self.codec.embed(&out.child)?,
            record: out.record,
        })
    }

    /// Load, augment and embed one family.
    pub fn preprocess_family(&self, fam: &FamilyTriplet, rng: &mut crate::numerics::SeededRng) -> Result<FamilyLatents> {
        self.embed_family(&self.load_family(fam)?, rng)
    }

    pub fn check_digest(&self, ckpt: &Checkpoint) -> Result<()> {
        let ours = self.config_digest();
        if ckpt.config_digest != ours {
            return Err(Error::DigestMismatch {
                checkpoint: ckpt.config_digest.clone(),
                config: ours,
            });
        }
        Ok(())
    }

    /// Eval-mode aggregation of already-embedded parents.
    pub fn predict_latent(&self, ckpt: &Checkpoint, g_f: &Latent, g_m: &Latent) -> Result<Latent> {
        let (out, _) = mlp::forward(&ckpt.params, &concat_parents(g_f, g_m), Dropout::Off)?;
        Latent::from_vec(out.into_data())
    }

    /// Predicted child latent and generated image for two codec-side parent
    /// images. No augmentation and no dropout.
    pub fn predict(&self, ckpt: &Checkpoint, father: &ImagePlane, mother: &ImagePlane) -> Result<(Latent, ImagePlane)> {
        self.check_digest(ckpt)?;
        let z = self.predict_latent(ckpt, &self.codec.embed(father)?, &self.codec.embed(mother)?)?;
        let img = self.codec.generate(&z)?;
        Ok((z, img))
    }
}
