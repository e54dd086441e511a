//! Synthetic two-cluster benchmark generator.
//!
//! Produces a complete dataset directory: Gaussian feature rows for normal
//! samples around the origin and for two abnormal categories displaced along
//! separate axes, a manifest wiring samples to splits and categories, and an
//! external detector's score tables. One abnormal category appears in
//! training (and is flagged seen); the other exists only in the test split.
//!
//! The external stream is deliberately blind to the unseen category: it
//! scores a sample by its mean coordinate along the seen category's
//! displacement axis, so it separates the seen cluster crisply and is pure
//! noise on the unseen one.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::manifest::{Label, Manifest, SampleMeta, Seen, Split};
use crate::tensor_io::{write_nfmb, write_scores_csv, ScoreTable, Tensor};

/// Standard normal sampler (Marsaglia polar) over a seeded ChaCha stream.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        GaussianSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u = 2.0 * self.rng.gen::<f64>() - 1.0;
            let v = 2.0 * self.rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }
}

/// Shape of a generated dataset. Row counts may differ between training
/// samples (which feed the memory bank) and validation/test samples (which
/// only get scored).
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    pub dim: usize,
    pub train_rows_per_sample: usize,
    pub eval_rows_per_sample: usize,
    pub train_normal: usize,
    pub train_seen: usize,
    pub val_normal: usize,
    pub val_seen: usize,
    pub test_normal: usize,
    pub test_seen: usize,
    pub test_unseen: usize,
    /// Cluster displacement along each category's axis.
    pub shift: f64,
    pub seen_axis: usize,
    pub unseen_axis: usize,
}

impl DatasetSpec {
    /// Layout for the self-checking end-to-end demo: 16-dimensional unit
    /// Gaussians, 500 training normals, 100 abnormal samples per category
    /// across the splits, shifted three units along axes 0 and 1.
    pub fn demo() -> Self {
        DatasetSpec {
            name: "demo".into(),
            dim: 16,
            train_rows_per_sample: 384,
            eval_rows_per_sample: 192,
            train_normal: 500,
            train_seen: 30,
            val_normal: 60,
            val_seen: 10,
            test_normal: 300,
            test_seen: 60,
            test_unseen: 100,
            shift: 3.0,
            seen_axis: 0,
            unseen_axis: 1,
        }
    }

    /// Small layout for walkthrough tests and CLI examples: quick to
    /// generate and score, same structure as the demo.
    pub fn walkthrough() -> Self {
        DatasetSpec {
            name: "walkthrough".into(),
            dim: 8,
            train_rows_per_sample: 12,
            eval_rows_per_sample: 12,
            train_normal: 80,
            train_seen: 10,
            val_normal: 12,
            val_seen: 8,
            test_normal: 30,
            test_seen: 15,
            test_unseen: 15,
            shift: 6.0,
            seen_axis: 0,
            unseen_axis: 1,
        }
    }
}

pub const SEEN_CATEGORY: &str = "shift-a";
pub const UNSEEN_CATEGORY: &str = "shift-b";

/// Paths of everything [`generate`] writes.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest_path: PathBuf,
    pub features_dir: PathBuf,
    pub external_validation: PathBuf,
    pub external_test: PathBuf,
}

struct SampleBatch {
    metas: Vec<SampleMeta>,
    rows: Vec<f32>,
    external: Vec<(String, f64)>,
}

/// Writes the dataset under `dir`: `manifest.json`, one feature file per
/// split under `features/`, and external score CSVs for the validation and
/// test splits.
pub fn generate(dir: &Path, spec: &DatasetSpec, seed: u64) -> Result<GeneratedDataset> {
    let features_dir = dir.join("features");
    std::fs::create_dir_all(&features_dir)
        .map_err(|e| crate::error::Error::io(&features_dir, e))?;

    let mut source = GaussianSource::new(seed);
    let mut samples = Vec::new();

    let mut make_split = |split: Split, normal: usize, seen: usize, unseen: usize, rows_per: usize| {
        let mut batch = SampleBatch {
            metas: Vec::new(),
            rows: Vec::new(),
            external: Vec::new(),
        };
        let classes: [(usize, Label, &str, Seen); 3] = [
            (normal, Label::Normal, "normal", Seen::Na),
            (seen, Label::Abnormal, SEEN_CATEGORY, Seen::Seen),
            (unseen, Label::Abnormal, UNSEEN_CATEGORY, Seen::Unseen),
        ];
        let mut row_cursor = 0u64;
        for (count, label, category, seen_flag) in classes {
            for i in 0..count {
                let id = format!("{split}-{category}-{i:04}");
                let mut axis_sum = 0.0f64;
                for _ in 0..rows_per {
                    for d in 0..spec.dim {
                        let mut v = source.sample();
                        if label == Label::Abnormal {
                            let axis = if category == SEEN_CATEGORY {
                                spec.seen_axis
                            } else {
                                spec.unseen_axis
                            };
                            if d == axis {
                                v += spec.shift;
                            }
                        }
                        if d == spec.seen_axis {
                            axis_sum += v;
                        }
                        batch.rows.push(v as f32);
                    }
                }
                batch.metas.push(SampleMeta {
                    id: id.clone(),
                    label,
                    category: category.to_string(),
                    seen: seen_flag,
                    split,
                    file: format!("{split}.nfmb"),
                    row_start: row_cursor,
                    row_count: rows_per as u64,
                });
                batch.external.push((id, axis_sum / rows_per as f64));
                row_cursor += rows_per as u64;
            }
        }
        batch
    };

    let train = make_split(
        Split::Train,
        spec.train_normal,
        spec.train_seen,
        0,
        spec.train_rows_per_sample,
    );
    let validation = make_split(
        Split::Validation,
        spec.val_normal,
        spec.val_seen,
        0,
        spec.eval_rows_per_sample,
    );
    let test = make_split(
        Split::Test,
        spec.test_normal,
        spec.test_seen,
        spec.test_unseen,
        spec.eval_rows_per_sample,
    );

    let mut feature_files = Vec::new();
    for (split, batch) in [
        (Split::Train, &train),
        (Split::Validation, &validation),
        (Split::Test, &test),
    ] {
        let file = format!("{split}.nfmb");
        let rows = batch.rows.len() / spec.dim;
        let tensor = Tensor::new(rows, spec.dim, batch.rows.clone())?;
        write_nfmb(&features_dir.join(&file), &tensor)?;
        feature_files.push(file);
        samples.extend(batch.metas.iter().cloned());
    }

    let manifest = Manifest {
        name: spec.name.clone(),
        dim: spec.dim as u64,
        feature_files,
        samples,
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    let external_validation = dir.join("external_validation.csv");
    let external_test = dir.join("external_test.csv");
    for (path, batch) in [(&external_validation, &validation), (&external_test, &test)] {
        let mut table = ScoreTable::new(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        for (id, score) in &batch.external {
            table.insert(id, *score)?;
        }
        write_scores_csv(path, &table)?;
    }

    Ok(GeneratedDataset {
        manifest_path,
        features_dir,
        external_validation,
        external_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::load_split_features;

    #[test]
    fn gaussian_source_is_deterministic_with_sane_moments() {
        let mut a = GaussianSource::new(3);
        let mut b = GaussianSource::new(3);
        let xs: Vec<f64> = (0..10_000).map(|_| a.sample()).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| b.sample()).collect();
        assert_eq!(xs, ys);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn generated_dataset_loads_and_has_declared_shape() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::walkthrough();
        let out = generate(dir.path(), &spec, 5).unwrap();
        let manifest = Manifest::load(&out.manifest_path).unwrap();
        assert_eq!(
            manifest.samples.len(),
            spec.train_normal
                + spec.train_seen
                + spec.val_normal
                + spec.val_seen
                + spec.test_normal
                + spec.test_seen
                + spec.test_unseen
        );
        let train = load_split_features(&manifest, &out.features_dir, Split::Train).unwrap();
        assert_eq!(train.len(), spec.train_normal + spec.train_seen);
        assert_eq!(train[0].rows.dim(), spec.dim);
        assert_eq!(train[0].rows.rows(), spec.train_rows_per_sample);
        let cats = manifest.abnormal_categories();
        assert_eq!(
            cats,
            vec![
                (SEEN_CATEGORY.to_string(), Seen::Seen),
                (UNSEEN_CATEGORY.to_string(), Seen::Unseen)
            ]
        );
    }

    #[test]
    fn abnormal_rows_are_shifted_on_their_axis() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::walkthrough();
        let out = generate(dir.path(), &spec, 8).unwrap();
        let manifest = Manifest::load(&out.manifest_path).unwrap();
        let test = load_split_features(&manifest, &out.features_dir, Split::Test).unwrap();
        let mean_axis = |s: &crate::manifest::LoadedSample, axis: usize| {
            let mut sum = 0.0;
            for r in 0..s.rows.rows() {
                sum += s.rows.row(r)[axis] as f64;
            }
            sum / s.rows.rows() as f64
        };
        for sample in &test {
            let meta = manifest.by_id(&sample.id).unwrap();
            let m0 = mean_axis(sample, spec.seen_axis);
            let m1 = mean_axis(sample, spec.unseen_axis);
            match meta.category.as_str() {
                "shift-a" => assert!(m0 > spec.shift / 2.0 && m1.abs() < spec.shift / 2.0),
                "shift-b" => assert!(m1 > spec.shift / 2.0 && m0.abs() < spec.shift / 2.0),
                _ => assert!(m0.abs() < spec.shift / 2.0 && m1.abs() < spec.shift / 2.0),
            }
        }
    }

    #[test]
    fn external_stream_tracks_seen_axis_only() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::walkthrough();
        let out = generate(dir.path(), &spec, 13).unwrap();
        let manifest = Manifest::load(&out.manifest_path).unwrap();
        let ext = crate::tensor_io::read_scores_csv(&out.external_test).unwrap();
        let mut seen_scores = Vec::new();
        let mut unseen_scores = Vec::new();
        for (id, score) in ext.iter() {
            match manifest.by_id(id).unwrap().category.as_str() {
                "shift-a" => seen_scores.push(score),
                "shift-b" => unseen_scores.push(score),
                _ => {}
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&seen_scores) > spec.shift * 0.8);
        assert!(mean(&unseen_scores).abs() < 0.5);
    }

    #[test]
    fn generation_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::walkthrough();
        generate(d1.path(), &spec, 21).unwrap();
        generate(d2.path(), &spec, 21).unwrap();
        for rel in [
            "manifest.json",
            "features/train.nfmb",
            "features/validation.nfmb",
            "features/test.nfmb",
            "external_test.csv",
        ] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel}");
        }
    }
}
