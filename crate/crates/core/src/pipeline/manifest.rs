//! Dataset manifests: a JSON file listing family triplets with paths
//! relative to the manifest's directory.
//!
//! ```json
//! { "families": [
//!     { "family_id": "fam0000",
//!       "father": "fam0000/father.png", "mother": "fam0000/mother.png", "child": "fam0000/child.png",
//!       "father_labels": "fam0000/father_labels.png" } ] }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyTriplet {
    pub family_id: String,
    pub father: PathBuf,
    pub mother: PathBuf,
    pub child: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub father_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mother_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_labels: Option<PathBuf>,
}

impl FamilyTriplet {
    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [&mut self.father, &mut self.mother, &mut self.child]
            .into_iter()
            .chain([&mut self.father_labels, &mut self.mother_labels, &mut self.child_labels].into_iter().flatten())
    }

    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.father, &self.mother, &self.child]
            .into_iter()
            .chain([&self.father_labels, &self.mother_labels, &self.child_labels].into_iter().flatten())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    families: Vec<FamilyTriplet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Val,
    All,
}

/// Validated families with resolved paths and a seeded train/val split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub families: Vec<FamilyTriplet>,
    /// Indices into `families`, ascending.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl DatasetManifest {
    /// Read, resolve relative paths against the manifest's directory,
    /// validate, and split.
    pub fn load(path: &Path, seed: u64, train_fraction: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new("."));
        let mut families = file.families;
        for fam in &mut families {
            for p in fam.paths_mut() {
                if p.is_relative() {
                    *p = root.join(&*p);
                }
            }
        }
        Self::from_families(families, seed, train_fraction)
    }

    pub fn from_families(families: Vec<FamilyTriplet>, seed: u64, train_fraction: f64) -> Result<Self> {
        if families.is_empty() {
            return Err(Error::Config("empty dataset: manifest lists no families".into()));
        }
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {train_fraction} not in (0, 1]")));
        }
        let mut seen = HashSet::new();
        for fam in &families {
            if !seen.insert(fam.family_id.as_str()) {
                return Err(Error::Config(format!("duplicate family_id {:?}", fam.family_id)));
            }
            if let Some(p) = fam.paths().find(|p| !p.is_file()) {
                return Err(Error::io(p, format!("referenced by family {:?} but does not exist", fam.family_id)));
            }
        }
        let n = families.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(seed).derive("split", 0).shuffle(&mut order);
        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok(Self { families, train, val })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::All => (0..self.families.len()).collect(),
        }
    }
}

/// Write a manifest, storing paths relative to its directory when they
/// live below it.
pub fn write_manifest(path: &Path, families: &[FamilyTriplet]) -> Result<()> {
    let root = path.parent().unwrap_or(Path::new("."));
    let families = families
        .iter()
        .cloned()
        .map(|mut fam| {
            for p in fam.paths_mut() {
                if let Ok(rel) = p.strip_prefix(root) {
                    *p = rel.to_path_buf();
                }
            }
            fam
        })
        .collect();
    let text = serde_json::to_string_pretty(&ManifestFile { families }).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet(dir: &Path, id: &str) -> FamilyTriplet {
        for name in ["f.png", "m.png", "c.png"] {
            std::fs::write(dir.join(name), b"x").unwrap();
        }
        FamilyTriplet {
            family_id: id.into(),
            father: dir.join("f.png"),
            mother: dir.join("m.png"),
            child: dir.join("c.png"),
            father_labels: None,
            mother_labels: None,
            child_labels: None,
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let fams: Vec<_> = (0..10).map(|i| triplet(dir.path(), &format!("f{i}"))).collect();
        let a = DatasetManifest::from_families(fams.clone(), 7, 0.8).unwrap();
        assert_eq!((a.train.len(), a.val.len()), (8, 2));
        assert_eq!(a, DatasetManifest::from_families(fams.clone(), 7, 0.8).unwrap());
        let all: HashSet<_> = a.train.iter().chain(&a.val).collect();
        assert_eq!(all.len(), 10);
        let b = DatasetManifest::from_families(fams, 8, 0.8).unwrap();
        assert_eq!(b.train.len(), 8);
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = DatasetManifest::from_families(vec![], 0, 0.8).unwrap_err().to_string();
        assert!(err.contains("empty dataset"), "{err}");
        let t = triplet(dir.path(), "dup");
        let err = DatasetManifest::from_families(vec![t.clone(), t.clone()], 0, 0.8).unwrap_err().to_string();
        assert!(err.contains("\"dup\""), "{err}");
        let mut dangling = t.clone();
        dangling.child_labels = Some(dir.path().join("nope.png"));
        let err = DatasetManifest::from_families(vec![dangling], 0, 0.8).unwrap_err().to_string();
        assert!(err.contains("nope.png") && err.contains("dup"), "{err}");
    }

    #[test]
    fn write_then_load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let fams = vec![triplet(dir.path(), "a"), triplet(dir.path(), "b")];
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &fams).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"f.png\""), "{text}");
        let loaded = DatasetManifest::load(&path, 0, 1.0).unwrap();
        assert_eq!(loaded.families, fams);
        assert!(loaded.val.is_empty());
        assert!(matches!(DatasetManifest::load(&dir.path().join("missing.json"), 0, 0.8), Err(Error::Io { .. })));
    }
}
