//! The run configuration file: one TOML document covering every command.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use kinface::augment::AugmentConfig;
use kinface::codec::CodecDescriptor;
use kinface::numerics::gradcheck::SuiteConfig;
use kinface::numerics::MlpDims;
use kinface::pipeline::{LossSpace, TrainConfig};
use kinface::synth::SynthConfig;
use kinface::Error;

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub train_fraction: f64,
    pub loss_space: LossSpace,
    pub use_segmentation: bool,
    pub dropout_p: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            lr: d.lr,
            epochs: d.epochs,
            train_fraction: d.train_fraction,
            loss_space: d.loss_space,
            use_segmentation: d.use_segmentation,
            dropout_p: d.dropout_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub families: usize,
    pub size: usize,
    pub components: usize,
    pub amplitude: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            families: d.families,
            size: d.size,
            components: d.components,
            amplitude: d.amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub small_dims: MlpDims,
    pub small_instances: usize,
    pub small_batch: usize,
    pub full_instances: usize,
    pub full_batch: usize,
    pub full_samples: [usize; 4],
    pub eps: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let d = SuiteConfig::default();
        Self {
            small_dims: d.small_dims,
            small_instances: d.small_instances,
            small_batch: d.small_batch,
            full_instances: d.full_instances,
            full_batch: d.full_batch,
            full_samples: d.full_samples,
            eps: d.eps,
        }
    }
}

/// Everything a command needs besides its own positional inputs. Relative
/// paths in a config file are relative to that file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub strict: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Palette JSON; the built-in palette when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub palette: Option<PathBuf>,
    pub train: TrainSection,
    pub augment: AugmentConfig,
    pub codec: CodecDescriptor,
    pub synth: SynthSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            strict: false,
            manifest: None,
            palette: None,
            train: TrainSection::default(),
            augment: AugmentConfig::default(),
            codec: CodecDescriptor::default(),
            synth: SynthSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file and anchor its relative paths at the file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.out_dir = absolute(base, &self.out_dir);
        for p in [&mut self.manifest, &mut self.palette].into_iter().flatten() {
            *p = absolute(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr: t.lr,
            epochs: t.epochs,
            seed: self.seed,
            train_fraction: t.train_fraction,
            loss_space: t.loss_space,
            use_segmentation: t.use_segmentation,
            dropout_p: t.dropout_p,
            augment: self.augment.clone(),
            codec: self.codec.clone(),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            families: s.families,
            size: s.size,
            seed: self.seed,
            components: s.components,
            amplitude: s.amplitude,
        }
    }

    pub fn suite_config(&self) -> SuiteConfig {
        let g = &self.gradcheck;
        SuiteConfig {
            small_dims: g.small_dims,
            small_instances: g.small_instances,
            small_batch: g.small_batch,
            full_instances: g.full_instances,
            full_batch: g.full_batch,
            full_samples: g.full_samples,
            eps: g.eps,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for text in ["bogus = 1", "[train]\nbogus = 1", "[augment]\nbogus = 1", "[codec]\ntype = \"toy\"\nseed = 0\nworking_resolution = 32\nbogus = 1", "[gradcheck]\nseed = 3"] {
            let err = RunConfig::from_toml(text).unwrap_err().to_string();
            assert!(err.contains("unknown field"), "{text}: {err}");
        }
    }

    #[test]
    fn sections_feed_library_configs() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[train]\nlr = 0.003\nepochs = 3\n[augment]\nmode = \"mixup\"\n[synth]\nfamilies = 5\n[codec]\ntype = \"toy\"\nseed = 2\nworking_resolution = 16\n",
        )
        .unwrap();
        let t = cfg.train_config();
        assert_eq!((t.seed, t.lr, t.epochs, t.batch_size), (7, 0.003, 3, 16));
        assert_eq!(t.augment.mode, kinface::augment::AugmentMode::Mixup);
        assert_eq!(cfg.synth_config().families, 5);
        assert_eq!(cfg.synth_config().seed, 7);
        assert_eq!(cfg.suite_config().seed, 7);
        assert_eq!(
            t.codec,
            CodecDescriptor::Toy {
                seed: 2,
                working_resolution: 16,
                output_resolution: None
            }
        );
    }

    #[test]
    fn relative_paths_anchor_at_config_dir() {
        let mut cfg = RunConfig::from_toml("out_dir = \"runs/a\"\nmanifest = \"data/m.json\"\npalette = \"/abs/p.json\"").unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert_eq!(cfg.out_dir, PathBuf::from("/cfg/runs/a"));
        assert_eq!(cfg.manifest, Some(PathBuf::from("/cfg/data/m.json")));
        assert_eq!(cfg.palette, Some(PathBuf::from("/abs/p.json")));
    }
}
