//! Dataset manifest: the JSON index that names every sample, its label,
//! category, split, and where its feature rows live on disk.
//!
//! Also home to the supervision partition: the deterministic, stratified
//! split of the training set into a labeled third and an unlabeled rest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{read_nfmb, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Normal => write!(f, "normal"),
            Label::Abnormal => write!(f, "abnormal"),
        }
    }
}

/// Whether a sample's category also occurs among abnormal training samples
/// ("seen"), occurs only outside training ("unseen"), or the distinction
/// does not apply (normal samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seen {
    Seen,
    Unseen,
    Na,
}

impl fmt::Display for Seen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seen::Seen => write!(f, "seen"),
            Seen::Unseen => write!(f, "unseen"),
            Seen::Na => write!(f, "na"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: String,
    pub label: Label,
    pub category: String,
    pub seen: Seen,
    pub split: Split,
    /// Feature file (relative to the features directory) holding this
    /// sample's rows.
    pub file: String,
    pub row_start: u64,
    pub row_count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub dim: u64,
    pub feature_files: Vec<String>,
    pub samples: Vec<SampleMeta>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Structural checks that do not require touching feature files.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("manifest dim must be at least 1"));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid("manifest lists no samples"));
        }
        let files: HashSet<&str> = self.feature_files.iter().map(String::as_str).collect();
        if files.len() != self.feature_files.len() {
            return Err(Error::invalid("manifest lists a feature file twice"));
        }
        let mut ids = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.id.is_empty() {
                return Err(Error::invalid("sample with empty id"));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {}", s.id)));
            }
            if s.row_count == 0 {
                return Err(Error::invalid(format!(
                    "sample {} has zero feature rows",
                    s.id
                )));
            }
            if !files.contains(s.file.as_str()) {
                return Err(Error::invalid(format!(
                    "sample {} references file {} absent from feature_files",
                    s.id, s.file
                )));
            }
            if s.category.is_empty() {
                return Err(Error::invalid(format!("sample {} has empty category", s.id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleMeta> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn by_id(&self, id: &str) -> Option<&SampleMeta> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Abnormal categories present in the manifest, each flagged "seen" when
    /// any training sample carries it, in sorted category order.
    pub fn abnormal_categories(&self) -> Vec<(String, Seen)> {
        let mut train_cats: HashSet<&str> = HashSet::new();
        for s in self.split(Split::Train) {
            if s.label == Label::Abnormal {
                train_cats.insert(s.category.as_str());
            }
        }
        let mut out: BTreeMap<String, Seen> = BTreeMap::new();
        for s in &self.samples {
            if s.label == Label::Abnormal {
                let seen = if train_cats.contains(s.category.as_str()) {
                    Seen::Seen
                } else {
                    Seen::Unseen
                };
                out.insert(s.category.clone(), seen);
            }
        }
        out.into_iter().collect()
    }
}

/// A sample's metadata id paired with its feature rows, loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub rows: Tensor,
}

/// Loads feature rows for every sample in `split`, reading each feature file
/// once. Validates that file shapes cover the row ranges the manifest claims
/// and that dims agree.
pub fn load_split_features(
    manifest: &Manifest,
    features_dir: &Path,
    split: Split,
) -> Result<Vec<LoadedSample>> {
    let wanted: Vec<&SampleMeta> = manifest.split(split).collect();
    let mut by_file: HashMap<&str, Vec<&SampleMeta>> = HashMap::new();
    for s in &wanted {
        by_file.entry(s.file.as_str()).or_default().push(s);
    }

    let mut loaded: HashMap<&str, Tensor> = HashMap::new();
    for (file, metas) in &by_file {
        let path = features_dir.join(file);
        let tensor = read_nfmb(&path)?;
        if tensor.dim() != manifest.dim as usize {
            return Err(Error::invalid(format!(
                "{}: dim {} does not match manifest dim {}",
                path.display(),
                tensor.dim(),
                manifest.dim
            )));
        }
        for meta in metas {
            let end = meta.row_start + meta.row_count;
            if end > tensor.rows() as u64 {
                return Err(Error::invalid(format!(
                    "sample {} wants rows {}..{} but {} has {} rows",
                    meta.id,
                    meta.row_start,
                    end,
                    path.display(),
                    tensor.rows()
                )));
            }
        }
        loaded.insert(file, tensor);
    }

    let mut out = Vec::with_capacity(wanted.len());
    for meta in wanted {
        let tensor = &loaded[meta.file.as_str()];
        out.push(LoadedSample {
            id: meta.id.clone(),
            rows: tensor.slice_rows(meta.row_start as usize, meta.row_count as usize)?,
        });
    }
    Ok(out)
}

/// The supervision partition of the training split: sorted id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
}

/// Splits the training samples into a labeled third and an unlabeled rest.
///
/// The labeled count is `floor(n_train / 3)`, apportioned across
/// `(label, category)` strata by largest remainder so every stratum sits
/// within one sample of its exact share. Which samples fill each stratum's
/// quota is drawn without replacement under `seed`; the output id lists are
/// sorted, so equal inputs give byte-equal partitions.
pub fn partition_supervision(manifest: &Manifest, seed: u64) -> Result<Partition> {
    let train: Vec<&SampleMeta> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::invalid("manifest has no training samples"));
    }
    let total_labeled = train.len() / 3;

    // Strata keyed by (label, category), in sorted key order so remainder
    // ranking is reproducible.
    let mut strata: BTreeMap<(Label, &str), Vec<&SampleMeta>> = BTreeMap::new();
    for s in &train {
        strata
            .entry((s.label, s.category.as_str()))
            .or_default()
            .push(s);
    }

    // Largest-remainder apportionment of total_labeled across strata.
    let n = train.len() as u64;
    let mut quotas: Vec<(usize, u64, u64)> = Vec::with_capacity(strata.len()); // (stratum, floor, remainder)
    for (i, members) in strata.values().enumerate() {
        let exact_num = total_labeled as u64 * members.len() as u64;
        quotas.push((i, exact_num / n, exact_num % n));
    }
    let assigned: u64 = quotas.iter().map(|q| q.1).sum();
    let mut leftover = total_labeled as u64 - assigned;
    // Highest remainder first; ties toward the earlier (sorted-key) stratum.
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(a.cmp(&b)));
    for &qi in &by_remainder {
        if leftover == 0 {
            break;
        }
        if quotas[qi].1 < strata.values().nth(qi).unwrap().len() as u64 {
            quotas[qi].1 += 1;
            leftover -= 1;
        }
    }
    debug_assert_eq!(leftover, 0, "quota apportionment left samples unassigned");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(total_labeled);
    let mut unlabeled = Vec::with_capacity(train.len() - total_labeled);
    for (qi, members) in strata.values().enumerate() {
        let take = quotas[qi].1 as usize;
        // Sample by shuffling ids (sorted first, so draw order is a function
        // of seed and membership alone, not manifest order).
        let mut ids: Vec<&str> = members.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            if i < take {
                labeled.push(id.to_string());
            } else {
                unlabeled.push(id.to_string());
            }
        }
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(Partition { labeled, unlabeled })
}

/// Labeled-normal training samples: the subset of the partition's labeled
/// ids carrying a normal label, as metadata references.
pub fn labeled_normals<'m>(
    manifest: &'m Manifest,
    partition: &Partition,
) -> Vec<&'m SampleMeta> {
    let labeled: HashSet<&str> = partition.labeled.iter().map(String::as_str).collect();
    manifest
        .split(Split::Train)
        .filter(|s| s.label == Label::Normal && labeled.contains(s.id.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_manifest(n_normal: usize, n_abnormal: usize) -> Manifest {
        let mut samples = Vec::new();
        for i in 0..n_normal {
            samples.push(SampleMeta {
                id: format!("n{i:03}"),
                label: Label::Normal,
                category: "normal".into(),
                seen: Seen::Na,
                split: Split::Train,
                file: "train.nfmb".into(),
                row_start: i as u64,
                row_count: 1,
            });
        }
        for i in 0..n_abnormal {
            samples.push(SampleMeta {
                id: format!("a{i:03}"),
                label: Label::Abnormal,
                category: "defect".into(),
                seen: Seen::Seen,
                split: Split::Train,
                file: "train.nfmb".into(),
                row_start: (n_normal + i) as u64,
                row_count: 1,
            });
        }
        Manifest {
            name: "tiny".into(),
            dim: 2,
            feature_files: vec!["train.nfmb".into()],
            samples,
        }
    }

    #[test]
    fn manifest_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = tiny_manifest(6, 3);
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.samples.len(), 9);
        assert_eq!(back.dim, 2);
        assert_eq!(back.samples[0].label, Label::Normal);
    }

    #[test]
    fn manifest_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"name":"x","dim":2,"feature_files":[],"samples":[],"extra":1}"#,
        )
        .unwrap();
        assert!(Manifest::load(&path).is_err());
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let mut m = tiny_manifest(2, 0);
        m.samples[1].id = m.samples[0].id.clone();
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_rejects_unlisted_file() {
        let mut m = tiny_manifest(2, 0);
        m.samples[0].file = "other.nfmb".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn partition_size_and_strata_on_nine_sample_fixture() {
        // 9 training samples, 6 normal / 3 abnormal: the labeled third is 3,
        // split 2 normal / 1 abnormal.
        let m = tiny_manifest(6, 3);
        let p = partition_supervision(&m, 1234).unwrap();
        assert_eq!(p.labeled.len(), 3);
        assert_eq!(p.unlabeled.len(), 6);
        let labeled_normal = p.labeled.iter().filter(|id| id.starts_with('n')).count();
        assert_eq!(labeled_normal, 2);
        let mut all: Vec<&String> = p.labeled.iter().chain(&p.unlabeled).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn partition_is_deterministic_and_seed_sensitive() {
        let m = tiny_manifest(30, 12);
        let a = partition_supervision(&m, 7).unwrap();
        let b = partition_supervision(&m, 7).unwrap();
        assert_eq!(a, b);
        let c = partition_supervision(&m, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn partition_ignores_manifest_sample_order() {
        let mut m = tiny_manifest(12, 6);
        let a = partition_supervision(&m, 3).unwrap();
        m.samples.reverse();
        let b = partition_supervision(&m, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn abnormal_categories_flag_training_presence() {
        let mut m = tiny_manifest(4, 2);
        // Move one abnormal to test under a new category absent from train.
        m.samples.push(SampleMeta {
            id: "u000".into(),
            label: Label::Abnormal,
            category: "novel".into(),
            seen: Seen::Unseen,
            split: Split::Test,
            file: "train.nfmb".into(),
            row_start: 0,
            row_count: 1,
        });
        let cats = m.abnormal_categories();
        assert_eq!(
            cats,
            vec![
                ("defect".to_string(), Seen::Seen),
                ("novel".to_string(), Seen::Unseen)
            ]
        );
    }
}
