//! Metrics and reports: latent MSE, image MSE and the cosine distance
//! `1 − u·v / (‖u‖‖v‖)` between generated and real child images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize, ResizeMode};
use crate::numerics::tensor::{all_finite, compensated_sum};
use crate::numerics::{Checkpoint, SeededRng};
use crate::pipeline::{DatasetManifest, Pipeline, Split};

/// Cosine distance of two equal-length vectors, in `[0, 2]`. Zero vectors
/// have no direction and are rejected.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine_distance", u.len(), v.len()));
    }
    if !all_finite(u) || !all_finite(v) {
        return Err(Error::NonFinite("cosine_distance input".into()));
    }
    let dot = compensated_sum(u.iter().zip(v).map(|(a, b)| a * b));
    let nu = compensated_sum(u.iter().map(|a| a * a)).sqrt();
    let nv = compensated_sum(v.iter().map(|b| b * b)).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument("cosine distance is undefined for a zero vector".into()));
    }
    let d = 1.0 - dot / (nu * nv);
    debug_assert!((-1e-12..=2.0 + 1e-12).contains(&d), "cosine distance {d} out of range");
    Ok(d.clamp(0.0, 2.0))
}

/// Mean of squared differences.
pub fn mean_squared_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("mean_squared_error", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("mean squared error of empty vectors".into()));
    }
    Ok(compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))) / a.len() as f64)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub family_id: String,
    pub mse_latent: f64,
    /// Mean over pixels and channels, in `[0, 255]²` units, at the codec's
    /// output resolution.
    pub mse_image: f64,
    /// Cosine distance between generated and real child images.
    pub cosine: f64,
    /// Diagnostic only: mean cosine distance between the predicted child
    /// latent and each parent latent.
    #[serde(default)]
    pub diag_parent_cosine_latent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub families: usize,
    pub mse_latent: f64,
    pub mse_image: f64,
    pub cosine: f64,
}

impl Aggregates {
    pub fn from_records(records: &[FamilyRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("no family records to aggregate".into()));
        }
        Ok(Self {
            families: records.len(),
            mse_latent: mean(records.iter().map(|r| r.mse_latent)),
            mse_image: mean(records.iter().map(|r| r.mse_image)),
            cosine: mean(records.iter().map(|r| r.cosine)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub checkpoint_epoch: usize,
    pub split: Split,
    pub records: Vec<FamilyRecord>,
    pub aggregates: Aggregates,
    /// Latent MSE of the all-zero prediction on the same families.
    pub zero_predictor_mse_latent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn records_from_csv(text: &str) -> Result<Vec<FamilyRecord>> {
        csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("report JSON: {e}")))
    }

    /// Aggregate table for terminals.
    pub fn format_table(&self) -> String {
        let a = &self.aggregates;
        let split = serde_json::to_value(self.split).expect("split serializes");
        let split = split.as_str().unwrap_or("?");
        format!(
            "{:<16} {:>8} {:>14} {:>14} {:>10}\n{:<16} {:>8} {:>14.6e} {:>14.6e} {:>10.6}\n{:<16} {:>8} {:>14.6e} {:>14} {:>10}\n",
            "model",
            "families",
            "mse_latent",
            "mse_image",
            "cosine",
            format!("aggregator/{split}"),
            a.families,
            a.mse_latent,
            a.mse_image,
            a.cosine,
            "zero-predictor",
            a.families,
            self.zero_predictor_mse_latent,
            "-",
            "-",
        )
    }
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report.to_csv()?,
        ReportFormat::Json => report.to_json(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Evaluate a checkpoint on one split. No augmentation, no dropout.
pub fn evaluate(pipeline: &Pipeline, ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    pipeline.check_digest(ckpt)?;
    let indices = manifest.indices(split);
    if indices.is_empty() {
        return Err(Error::Config(format!("the {split:?} split has no families to evaluate")));
    }
    let codec = &pipeline.codec;
    let (oh, ow) = codec.output_resolution();
    let mut records = Vec::with_capacity(indices.len());
    let mut zero = Vec::with_capacity(indices.len());
    let no_augment = Pipeline {
        cfg: crate::pipeline::TrainConfig {
            augment: crate::augment::AugmentConfig {
                p_apply: 0.0,
                ..pipeline.cfg.augment.clone()
            },
            ..pipeline.cfg.clone()
        },
        ..pipeline.clone()
    };
    for i in indices {
        let fam = &manifest.families[i];
        let images = pipeline.load_family(fam)?;
        let lat = no_augment.embed_family(&images, &mut SeededRng::new(0))?;
        let pred = pipeline.predict_latent(ckpt, &lat.father, &lat.mother)?;
        let generated = codec.generate(&pred)?;
        let real = resize(&images.child, oh, ow, ResizeMode::Bilinear)?;
        let diag = match (cosine_distance(pred.data(), lat.father.data()), cosine_distance(pred.data(), lat.mother.data())) {
            (Ok(a), Ok(b)) => Some(0.5 * (a + b)),
            _ => None,
        };
        zero.push(compensated_sum(lat.child.data().iter().map(|v| v * v)) / lat.child.data().len() as f64);
        records.push(FamilyRecord {
            family_id: fam.family_id.clone(),
            mse_latent: mean_squared_error(pred.data(), lat.child.data())?,
            mse_image: mean_squared_error(generated.data(), real.data())?,
            cosine: cosine_distance(generated.data(), real.data())?,
            diag_parent_cosine_latent: diag,
        });
    }
    Ok(EvalReport {
        config_digest: pipeline.config_digest(),
        checkpoint_epoch: ckpt.epoch,
        split,
        aggregates: Aggregates::from_records(&records)?,
        records,
        zero_predictor_mse_latent: mean(zero),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn cosine_identities() {
        let u = random_vec(50, 1);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_distance(&u, &[0.0; 50]).is_err());
        assert!(cosine_distance(&u, &u[..3]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mean_squared_error(&[0.0, 0.0], &[2.0, 2.0]).unwrap(), 4.0);
        assert_eq!(mean_squared_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    fn sample_report(n: usize) -> EvalReport {
        let records: Vec<FamilyRecord> = (0..n)
            .map(|i| FamilyRecord {
                family_id: format!("fam,{i}"),
                mse_latent: 0.1 * i as f64 + 1.0 / 3.0,
                mse_image: 17.25 * i as f64,
                cosine: 0.01 * i as f64,
                diag_parent_cosine_latent: (i % 2 == 0).then_some(0.5),
            })
            .collect();
        EvalReport {
            config_digest: "ab".repeat(32),
            checkpoint_epoch: 3,
            split: Split::Val,
            aggregates: Aggregates::from_records(&records).unwrap(),
            records,
            zero_predictor_mse_latent: 0.7,
        }
    }

    #[test]
    fn report_round_trips() {
        let r = sample_report(7);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.starts_with("family_id,mse_latent,mse_image,cosine,diag_parent_cosine_latent\n"));
        let rows = EvalReport::records_from_csv(&csv).unwrap();
        assert_eq!(rows, r.records);
        // Independent recomputation: plain sums over the parsed CSV rows.
        let m: f64 = rows.iter().map(|r| r.mse_latent).sum::<f64>() / rows.len() as f64;
        assert!((m - r.aggregates.mse_latent).abs() < 1e-12);
        assert!(r.format_table().contains("zero-predictor"));
    }

    #[test]
    fn write_report_to_bad_path_fails() {
        let err = write_report(&sample_report(1), Path::new("/nonexistent/dir/r.csv"), ReportFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    proptest! {
        #[test]
        fn cosine_properties(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let u = random_vec(12, seed);
            let v = random_vec(12, seed + 1);
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert_eq!(d, cosine_distance(&v, &u).unwrap());
            let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
            prop_assert!(cosine_distance(&u, &scaled).unwrap().abs() < 1e-12);
            let flipped: Vec<f64> = u.iter().map(|x| -c * x).collect();
            prop_assert!((cosine_distance(&u, &flipped).unwrap() - 2.0).abs() < 1e-12);
        }

        #[test]
        fn aggregates_permutation_invariant(seed in 0u64..1000) {
            let mut r = sample_report(9).records;
            let a = Aggregates::from_records(&r).unwrap();
            SeededRng::new(seed).shuffle(&mut r);
            let b = Aggregates::from_records(&r).unwrap();
            prop_assert!((a.mse_latent - b.mse_latent).abs() < 1e-12);
            prop_assert!((a.mse_image - b.mse_image).abs() < 1e-12);
        }
    }
}
