//! One function per subcommand. Data goes to files under `out_dir` and to
//! standard output; logs go to standard error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use kinface::augment::{augment_family, AffineKind, AugmentMode};
use kinface::codec::{LATENT_COLS, LATENT_ROWS};
use kinface::eval::{evaluate, write_report, ReportFormat};
use kinface::imaging::{
    colorize_labels, decode_labels, load_image, load_labelmap, load_palette, save_image, save_palette, ImagePlane, Palette,
};
use kinface::numerics::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use kinface::numerics::{Checkpoint, SeededRng};
use kinface::pipeline::{write_manifest, DatasetManifest, FamilyTriplet, Pipeline, Split};
use kinface::synth::write_synth_dataset;
use kinface::Error;

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::{Command, NumericFailure};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn io_err(path: &Path, e: impl ToString) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Create the output directory and record the resolved config in it.
fn prepare_out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    Ok(dir)
}

fn palette(cfg: &RunConfig) -> Result<Palette> {
    Ok(match &cfg.palette {
        Some(p) => load_palette(p)?,
        None => Palette::default(),
    })
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path> {
    match &cfg.manifest {
        Some(p) => Ok(p),
        None => Err(Error::Config("no manifest: pass --manifest or set `manifest` in the config".into()).into()),
    }
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    Ok(DatasetManifest::load(manifest_path(cfg)?, cfg.seed, cfg.train.train_fraction)?)
}

fn pipeline(cfg: &RunConfig) -> Result<Pipeline> {
    Ok(Pipeline::new(cfg.train_config(), palette(cfg)?, cfg.strict)?)
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synth => synth(cfg),
        Command::Augment { .. } => augment(cfg),
        Command::Colorize { inputs } => colorize(cfg, inputs),
        Command::Train { .. } => train(cfg),
        Command::Predict {
            checkpoint,
            father,
            mother,
        } => predict(cfg, checkpoint, father, mother),
        Command::Eval { checkpoint, split, .. } => eval(cfg, checkpoint, (*split).into()),
        Command::Gradcheck => gradcheck(cfg),
    }
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let synth = cfg.synth_config();
    synth.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let manifest = write_synth_dataset(dir, &synth)?;
    println!("wrote {} families to {}", synth.families, manifest.display());
    Ok(())
}

fn family_dir(root: &Path, id: &str) -> Result<PathBuf> {
    let mut parts = Path::new(id).components();
    match (parts.next(), parts.next()) {
        (Some(std::path::Component::Normal(_)), None) => Ok(root.join(id)),
        _ => Err(Error::Config(format!("family_id {id:?} cannot be used as a directory name")).into()),
    }
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    std::fs::copy(from, to).map_err(|e| io_err(from, e))?;
    Ok(())
}

fn augment(cfg: &RunConfig) -> Result<()> {
    let aug = &cfg.augment;
    aug.validate(cfg.strict)?;
    let manifest = load_manifest(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut applied = 0;
    let mut out = Vec::with_capacity(manifest.families.len());
    for fam in &manifest.families {
        let sub = family_dir(dir, &fam.family_id)?;
        std::fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        let mut rng = SeededRng::new(cfg.seed).derive(&format!("augment/{}", fam.family_id), 0);
        let result = augment_family(
            load_image(&fam.father)?,
            load_image(&fam.mother)?,
            load_image(&fam.child)?,
            aug,
            &mut rng,
            cfg.strict,
        )?;
        let mut next = FamilyTriplet {
            family_id: fam.family_id.clone(),
            father: sub.join("father.png"),
            mother: sub.join("mother.png"),
            child: sub.join("child.png"),
            father_labels: None,
            mother_labels: None,
            child_labels: None,
        };
        copy(&fam.child, &next.child)?;
        if let Some(src) = &fam.child_labels {
            let dst = sub.join("child_labels.png");
            copy(src, &dst)?;
            next.child_labels = Some(dst);
        }
        let record = result.record;
        if record.applied {
            // Parent label maps no longer line up with the transformed
            // photos, so they are not carried over.
            applied += 1;
            save_image(&result.father, &next.father)?;
            save_image(&result.mother, &next.mother)?;
            if record.mixup.is_some() {
                *counts.entry("mixup").or_default() += 1;
            }
            for op in record.father_ops.iter().chain(&record.mother_ops) {
                *counts.entry(op.kind.name()).or_default() += 1;
            }
            if !record.jitter.is_empty() {
                *counts.entry("jitter").or_default() += record.jitter.len();
            }
        } else {
            copy(&fam.father, &next.father)?;
            copy(&fam.mother, &next.mother)?;
            for (src, name, slot) in [
                (&fam.father_labels, "father_labels.png", &mut next.father_labels),
                (&fam.mother_labels, "mother_labels.png", &mut next.mother_labels),
            ] {
                if let Some(src) = src {
                    let dst = sub.join(name);
                    copy(src, &dst)?;
                    *slot = Some(dst);
                }
            }
        }
        out.push(next);
    }
    let new_manifest = dir.join("manifest.json");
    write_manifest(&new_manifest, &out)?;
    println!("augmented {applied} of {} families", out.len());
    let ops: Vec<&str> = match aug.mode {
        AugmentMode::Mixup => vec!["mixup"],
        AugmentMode::Augmix => AffineKind::ALL.iter().map(|k| k.name()).collect(),
        AugmentMode::None => vec![],
    };
    for name in ops.into_iter().chain(aug.jitter.then_some("jitter")) {
        println!("{name} {}", counts.get(name).copied().unwrap_or(0));
    }
    println!("manifest {}", new_manifest.display());
    Ok(())
}

fn label_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| io_err(input, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.to_string_lossy().ends_with("_labels.png"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!(Error::Config("colorize found no label maps in its inputs".into()));
    }
    Ok(files)
}

fn colorize(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let palette = palette(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    save_palette(&palette, &dir.join("palette.json"))?;
    let mut written = std::collections::HashSet::new();
    for path in label_inputs(inputs)? {
        let map = load_labelmap(&path)?;
        let img = colorize_labels(&map, &palette);
        let (back, mismatches) = decode_labels(&img, &palette, true)?;
        debug_assert_eq!((back, mismatches), (map, 0));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("labels");
        let dst = dir.join(format!("{stem}_color.png"));
        if !written.insert(dst.clone()) {
            bail!(Error::Config(format!("two inputs map to the same output {}", dst.display())));
        }
        save_image(&img, &dst)?;
        println!("{} -> {}", path.display(), dst.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let pipeline = pipeline(cfg)?;
    let manifest = load_manifest(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    let outcome = pipeline.train(&manifest)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt_path)?;
    outcome.history.write_csv(&dir.join("metrics.csv"))?;
    outcome.history.write_json(&dir.join("metrics.json"))?;
    let h = &outcome.history;
    let last = h.epochs.last().context("training ran no epochs")?;
    println!("epochs {} final train_mse {:.6e}", h.epochs.len(), last.train_mse);
    match (outcome.checkpoint.val_mse, h.zero_predictor_val_mse) {
        (Some(v), Some(z)) => println!(
            "best epoch {} val_mse {v:.6e} zero-predictor {z:.6e} ratio {:.4}",
            h.best_epoch,
            v / z
        ),
        _ => println!("no validation split; checkpoint holds epoch {}", h.best_epoch),
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

#[derive(Serialize)]
struct LatentFile<'a> {
    rows: usize,
    cols: usize,
    config_digest: String,
    data: &'a [f64],
}

fn predict_input(pipeline: &Pipeline, path: &Path) -> Result<ImagePlane> {
    Ok(if pipeline.cfg.use_segmentation {
        colorize_labels(&load_labelmap(path)?, &pipeline.palette)
    } else {
        load_image(path)?
    })
}

fn predict(cfg: &RunConfig, checkpoint: &Path, father: &Path, mother: &Path) -> Result<()> {
    let pipeline = pipeline(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    pipeline.check_digest(&ckpt)?;
    let father = predict_input(&pipeline, father)?;
    let mother = predict_input(&pipeline, mother)?;
    let dir = prepare_out_dir(cfg)?;
    let (z, img) = pipeline.predict(&ckpt, &father, &mother)?;
    let img_path = dir.join("child.png");
    save_image(&img, &img_path)?;
    let latent = LatentFile {
        rows: LATENT_ROWS,
        cols: LATENT_COLS,
        config_digest: pipeline.config_digest(),
        data: z.data(),
    };
    let latent_path = dir.join("child_latent.json");
    write_text(&latent_path, &(serde_json::to_string(&latent)? + "\n"))?;
    println!("child image {}", img_path.display());
    println!("child latent {}", latent_path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<()> {
    let pipeline = pipeline(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = load_manifest(cfg)?;
    let dir = prepare_out_dir(cfg)?;
    let report = evaluate(&pipeline, &ckpt, &manifest, split)?;
    write_report(&report, &dir.join("report.csv"), ReportFormat::Csv)?;
    write_report(&report, &dir.join("report.json"), ReportFormat::Json)?;
    print!("{}", report.format_table());
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(cfg)?;
    let entries = run_suite(&cfg.suite_config())?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        worst = worst.max(e.report.max_rel_err);
        println!(
            "{:<32} dropout={:<5} checked={:<6} max_rel_err={:.3e}",
            e.label, e.dropout, e.report.checked, e.report.max_rel_err
        );
    }
    write_text(&dir.join("gradcheck.json"), &(serde_json::to_string_pretty(&entries)? + "\n"))?;
    let passed = entries.iter().all(|e| e.report.passed());
    println!("max_rel_err={worst:.3e} tolerance={GRADCHECK_TOLERANCE:e} {}", if passed { "PASS" } else { "FAIL" });
    if !passed {
        bail!(NumericFailure(format!("gradient check failed: max_rel_err {worst:.3e} ≥ {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}
