use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{concat_parents, FamilyImages, FamilyLatents, LossSpace, Pipeline};
use crate::augment::augment_family;
use crate::codec::{Latent, LATENT_LEN};
use crate::error::{Error, Result};
use crate::imaging::{resize, ResizeMode};
use crate::numerics::tensor::compensated_sum;
use crate::numerics::{mlp, mse, AdamState, Checkpoint, Dropout, Grads, MlpDims, MlpParams, SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples (dropout active).
    pub train_mse: f64,
    /// Eval-mode latent MSE on the validation split.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub epochs: Vec<EpochMetrics>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Epoch stored in the checkpoint (0 if no epoch ran).
    pub best_epoch: usize,
    /// Latent MSE of always predicting zero, on the validation split.
    pub zero_predictor_val_mse: Option<f64>,
}

impl MetricsHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, val));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metrics serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters and optimizer state of the best validation epoch (the
    /// final epoch when there is no validation split).
    pub checkpoint: Checkpoint,
    pub history: MetricsHistory,
}

struct Prepared {
    id: String,
    base: FamilyLatents,
    /// Kept only when augmentation can fire.
    images: Option<FamilyImages>,
    /// Child pixels at the codec's working resolution, for image-space loss.
    child_pixels: Option<Vec<f64>>,
}

fn stack(rows: &[&[f64]]) -> Tensor {
    let width = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::from_vec(&[rows.len(), width], data).expect("rows share a width")
}

fn mean_square(latents: &[&Latent]) -> f64 {
    compensated_sum(latents.iter().flat_map(|z| z.data().iter().map(|v| v * v))) / (latents.len() * LATENT_LEN) as f64
}

impl Pipeline {
    fn prepare(&self, manifest: &super::DatasetManifest, indices: &[usize], training: bool) -> Result<Vec<Prepared>> {
        let keep_images = training && self.augments();
        let image_loss = training && self.cfg.loss_space == LossSpace::Image;
        indices
            .iter()
            .map(|&i| {
                let fam = &manifest.families[i];
                let images = self.load_family(fam)?;
                let base = FamilyLatents {
                    father: self.codec.embed(&images.father)?,
                    mother: self.codec.embed(&images.mother)?,
                    child: self.codec.embed(&images.child)?,
                    record: Default::default(),
                };
                let child_pixels = if image_loss {
                    let (h, w) = self.codec.working_resolution();
                    Some(resize(&images.child, h, w, ResizeMode::Bilinear)?.into_data())
                } else {
                    None
                };
                Ok(Prepared {
                    id: fam.family_id.clone(),
                    base,
                    images: keep_images.then_some(images),
                    child_pixels,
                })
            })
            .collect()
    }

    /// Parent latents for one epoch: re-embedded when the family's
    /// augmentation gate fires, cached otherwise.
    fn epoch_parents(&self, fam: &Prepared, epoch: usize) -> Result<(Latent, Latent)> {
        let Some(images) = &fam.images else {
            return Ok((fam.base.father.clone(), fam.base.mother.clone()));
        };
        let mut rng = SeededRng::new(self.cfg.seed).derive(&format!("augment/{}", fam.id), epoch as u64);
        let out = augment_family(
            images.father.clone(),
            images.mother.clone(),
            images.child.clone(),
            &self.cfg.augment,
            &mut rng,
            self.strict,
        )?;
        debug_assert_eq!(out.child, images.child, "child image altered by augmentation");
        if !out.record.applied {
            return Ok((fam.base.father.clone(), fam.base.mother.clone()));
        }
        Ok((self.codec.embed(&out.father)?, self.codec.embed(&out.mother)?))
    }

    fn image_loss_and_grads(
        &self,
        params: &MlpParams,
        input: &Tensor,
        targets: &[&[f64]],
        rng: &mut SeededRng,
        grads: &mut Grads,
    ) -> Result<f64> {
        let (out, cache) = mlp::forward(params, input, Dropout::Sample(rng))?;
        let n = targets.len() * targets[0].len();
        let mut total = Vec::with_capacity(targets.len());
        let mut d_out = Vec::with_capacity(targets.len() * LATENT_LEN);
        for (i, target) in targets.iter().enumerate() {
            let z = Latent::from_vec(out.row(i).to_vec())?;
            let x = self.codec.generate_float(&z)?;
            let diff: Vec<f64> = x.iter().zip(*target).map(|(a, b)| a - b).collect();
            total.push(compensated_sum(diff.iter().map(|d| d * d)));
            let d_pix: Vec<f64> = diff.iter().map(|d| 2.0 * d / n as f64).collect();
            d_out.extend_from_slice(self.codec.pullback(&z, &d_pix)?.data());
        }
        let d_out = Tensor::from_vec(&[targets.len(), LATENT_LEN], d_out)?;
        mlp::backward(params, input, &cache, &d_out, grads)?;
        Ok(compensated_sum(total) / n as f64)
    }

    /// Fit the aggregator on the manifest's training split.
    pub fn train(&self, manifest: &super::DatasetManifest) -> Result<TrainOutcome> {
        let cfg = &self.cfg;
        if manifest.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let dims = MlpDims::AGGREGATOR;
        let root = SeededRng::new(cfg.seed);
        let mut params = MlpParams::he_init(dims, cfg.dropout_p, &mut root.derive("init", 0))?;
        let mut adam = AdamState::new(dims, cfg.adam())?;
        let mut grads = Grads::zeros(dims);
        let mut dropout_rng = root.derive("dropout", 0);

        let train = self.prepare(manifest, &manifest.train, true)?;
        let val = self.prepare(manifest, &manifest.val, false)?;
        let val_io = (!val.is_empty()).then(|| {
            let inputs: Vec<Tensor> = val.iter().map(|f| concat_parents(&f.base.father, &f.base.mother)).collect();
            let input = stack(&inputs.iter().map(Tensor::data).collect::<Vec<_>>());
            let target = stack(&val.iter().map(|f| f.base.child.data()).collect::<Vec<_>>());
            (input, target)
        });
        let zero_predictor_val_mse = (!val.is_empty()).then(|| mean_square(&val.iter().map(|f| &f.base.child).collect::<Vec<_>>()));

        let mut history = MetricsHistory {
            epochs: Vec::with_capacity(cfg.epochs),
            step_losses: Vec::new(),
            best_epoch: 0,
            zero_predictor_val_mse,
        };
        let mut best: Option<((MlpParams, AdamState), f64)> = None;

        for epoch in 1..=cfg.epochs {
            let parents = train
                .iter()
                .map(|f| self.epoch_parents(f, epoch))
                .collect::<Result<Vec<_>>>()?;
            let mut order: Vec<usize> = (0..train.len()).collect();
            root.derive("shuffle", epoch as u64).shuffle(&mut order);

            let mut weighted = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let diag = |e: Error| match e {
                    Error::NonFinite(msg) => {
                        let ids: Vec<&str> = chunk.iter().map(|&i| train[i].id.as_str()).collect();
                        Error::NonFinite(format!("epoch {epoch}, batch {b}, families {ids:?}: {msg}"))
                    }
                    other => other,
                };
                let inputs: Vec<Tensor> = chunk.iter().map(|&i| concat_parents(&parents[i].0, &parents[i].1)).collect();
                let input = stack(&inputs.iter().map(Tensor::data).collect::<Vec<_>>());
                let loss = match cfg.loss_space {
                    LossSpace::Latent => {
                        let target = stack(&chunk.iter().map(|&i| train[i].base.child.data()).collect::<Vec<_>>());
                        mlp::loss_and_grads_into(&params, &input, &target, Dropout::Sample(&mut dropout_rng), &mut grads)
                    }
                    LossSpace::Image => {
                        let targets: Vec<&[f64]> = chunk
                            .iter()
                            .map(|&i| train[i].child_pixels.as_deref().expect("image targets prepared"))
                            .collect();
                        self.image_loss_and_grads(&params, &input, &targets, &mut dropout_rng, &mut grads)
                    }
                }
                .map_err(diag)?;
                if !loss.is_finite() {
                    return Err(diag(Error::NonFinite(format!("loss is {loss}"))));
                }
                adam.step(&mut params, &grads).map_err(diag)?;
                history.step_losses.push(loss);
                weighted.push(loss * chunk.len() as f64);
            }
            let train_mse = compensated_sum(weighted) / train.len() as f64;

            let val_mse = match &val_io {
                Some((input, target)) => Some(mse(&mlp::forward(&params, input, Dropout::Off)?.0, target)?),
                None => None,
            };
            log::info!(
                "epoch {epoch}/{}: train_mse {train_mse:.6e}{}",
                cfg.epochs,
                val_mse.map(|v| format!(", val_mse {v:.6e}")).unwrap_or_default()
            );
            history.epochs.push(EpochMetrics {
                epoch,
                train_mse,
                val_mse,
            });
            if let Some(v) = val_mse {
                let improved = best.as_ref().is_none_or(|(_, b)| v < *b);
                if improved {
                    match &mut best {
                        Some((snap, b)) => {
                            adam.snapshot_into(&params, snap);
                            *b = v;
                        }
                        None => best = Some(((params.clone(), adam.clone()), v)),
                    }
                    history.best_epoch = epoch;
                }
            }
        }

        let (params, adam, epoch, val_mse) = match best {
            Some(((p, a), v)) => (p, a, history.best_epoch, Some(v)),
            None => {
                history.best_epoch = cfg.epochs;
                (params, adam, cfg.epochs, None)
            }
        };
        Ok(TrainOutcome {
            checkpoint: Checkpoint {
                params,
                adam,
                config_digest: self.config_digest(),
                seed: cfg.seed,
                epoch,
                val_mse,
            },
            history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugmentConfig, AugmentMode};
    use crate::codec::{CodecDescriptor, ToyLinearCodec};
    use crate::imaging::Palette;
    use crate::pipeline::{DatasetManifest, TrainConfig};
    use crate::synth::{write_synth_dataset, SynthConfig};

    fn setup(dir: &Path, families: usize, cfg: TrainConfig) -> (Pipeline, DatasetManifest) {
        let path = write_synth_dataset(
            dir,
            &SynthConfig {
                families,
                size: 16,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            codec: CodecDescriptor::Toy {
                seed: 2,
                working_resolution: 8,
                output_resolution: None,
            },
            ..cfg
        };
        let m = DatasetManifest::load(&path, cfg.seed, cfg.train_fraction).unwrap();
        let p = Pipeline::with_codec(cfg, ToyLinearCodec::cached(2, 8).unwrap(), Palette::default(), true).unwrap();
        (p, m)
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let (p, m) = setup(
            dir.path(),
            5,
            TrainConfig {
                lr: 0.0,
                epochs: 3,
                batch_size: 2,
                ..Default::default()
            },
        );
        let out = p.train(&m).unwrap();
        let init = MlpParams::he_init(MlpDims::AGGREGATOR, 0.25, &mut SeededRng::new(0).derive("init", 0)).unwrap();
        assert_eq!(out.checkpoint.params, init);
        let vals: Vec<_> = out.history.epochs.iter().map(|e| e.val_mse).collect();
        assert!(vals.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(out.history.step_losses.len(), 3 * 2);
    }

    #[test]
    fn first_step_loss_is_recomputable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 1e-4,
            epochs: 1,
            batch_size: 3,
            ..Default::default()
        };
        let (p, m) = setup(dir.path(), 5, cfg);
        let out = p.train(&m).unwrap();

        // Independent recomputation from the seed: init, shuffle, dropout.
        let root = SeededRng::new(0);
        let params = MlpParams::he_init(MlpDims::AGGREGATOR, 0.25, &mut root.derive("init", 0)).unwrap();
        let mut order: Vec<usize> = (0..m.train.len()).collect();
        root.derive("shuffle", 1).shuffle(&mut order);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for &i in &order[..3] {
            let lat = p.preprocess_family(&m.families[m.train[i]], &mut SeededRng::new(0)).unwrap();
            rows.extend_from_slice(concat_parents(&lat.father, &lat.mother).data());
            targets.extend_from_slice(lat.child.data());
        }
        let input = Tensor::from_vec(&[3, 16384], rows).unwrap();
        let target = Tensor::from_vec(&[3, 8192], targets).unwrap();
        let (pred, _) = mlp::forward(&params, &input, Dropout::Sample(&mut root.derive("dropout", 0))).unwrap();
        assert_eq!(out.history.step_losses[0], mse(&pred, &target).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 3e-4,
            epochs: 4,
            batch_size: 4,
            augment: AugmentConfig {
                p_apply: 0.5,
                mode: AugmentMode::Mixup,
                ..Default::default()
            },
            ..Default::default()
        };
        let (p, m) = setup(dir.path(), 12, cfg);
        let a = p.train(&m).unwrap();
        let b = p.train(&m).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.history.to_csv().starts_with("epoch,train_mse,val_mse\n1,"));
    }

    #[test]
    fn learns_parent_average() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 3e-3,
            epochs: 30,
            batch_size: 4,
            ..Default::default()
        };
        let (p, m) = setup(dir.path(), 16, cfg);
        let a = p.train(&m).unwrap();
        let zero = a.history.zero_predictor_val_mse.unwrap();
        let best = a.checkpoint.val_mse.unwrap();
        assert!(best < 0.25 * zero, "zero predictor {zero}, best {best}");
    }

    #[test]
    fn image_space_loss_runs_and_decreases() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 1e-4,
            epochs: 5,
            batch_size: 4,
            loss_space: LossSpace::Image,
            ..Default::default()
        };
        let (p, m) = setup(dir.path(), 8, cfg);
        let out = p.train(&m).unwrap();
        let l = &out.history.step_losses;
        assert!(l.last().unwrap() < &l[0], "{l:?}");
    }

    #[test]
    fn predict_checks_digest_and_ignores_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        let (p, m) = setup(
            dir.path(),
            4,
            TrainConfig {
                epochs: 1,
                ..Default::default()
            },
        );
        let ckpt = p.train(&m).unwrap().checkpoint;
        let imgs = p.load_family(&m.families[0]).unwrap();
        let (z1, img1) = p.predict(&ckpt, &imgs.father, &imgs.mother).unwrap();
        let mut heavy = p.clone();
        heavy.cfg.augment = AugmentConfig {
            p_apply: 1.0,
            mode: AugmentMode::Augmix,
            ..Default::default()
        };
        let (z2, img2) = heavy.predict(&ckpt, &imgs.father, &imgs.mother).unwrap();
        assert_eq!((z1, img1), (z2, img2));
        let mut seg = p.clone();
        seg.cfg.use_segmentation = true;
        let err = seg.predict(&ckpt, &imgs.father, &imgs.mother).unwrap_err();
        assert!(matches!(err, Error::DigestMismatch { .. }));
        let msg = err.to_string();
        assert!(msg.contains(&ckpt.config_digest) && msg.contains(&seg.config_digest()));
    }
}
