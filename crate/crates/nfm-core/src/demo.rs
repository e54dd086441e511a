//! Self-checking end-to-end run on the synthetic two-cluster dataset.
//!
//! Generates the dataset, runs the full pipeline (supervision partition,
//! memory bank, scoring, fusion, evaluation), writes every intermediate
//! artifact under the output directory, and verifies the properties the
//! pipeline is supposed to deliver:
//!
//! * the memory stream alone separates abnormal from normal test samples
//!   (overall AUROC above 0.99) including the category absent from training
//!   (above 0.95), and
//! * fusing with an external stream that is blind to the unseen category
//!   does not drag the unseen category below what the external stream would
//!   score on its own.
//!
//! Everything derives from one seed, so repeated runs produce byte-identical
//! artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::{
    labeled_normals, load_split_features, partition_supervision, Manifest, SampleMeta, Split,
};
use crate::memory_bank::MemoryBank;
use crate::metrics::{auroc, ThresholdPolicy};
use crate::report::{evaluate, EvalConfig, EvalReport};
use crate::scoring::{fuse, score_stream, Calibration, FusionConfig};
use crate::synthetic::{generate, DatasetSpec, UNSEEN_CATEGORY};
use crate::tensor_io::{read_scores_csv, write_scores_csv, ScoreTable};

/// One verified property with the measured value and its bound.
#[derive(Debug, Clone, Serialize)]
pub struct DemoCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Everything the demo measured, plus where it wrote its artifacts.
#[derive(Debug)]
pub struct DemoOutcome {
    pub checks: Vec<DemoCheck>,
    pub memory_report: EvalReport,
    pub fused_report: EvalReport,
    pub external_overall_auroc: f64,
    pub external_unseen_auroc: f64,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

impl DemoOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn auroc_of(
    metas: &[&SampleMeta],
    scores: &ScoreTable,
    category: Option<&str>,
) -> Result<f64> {
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for meta in metas {
        let abnormal = meta.label == crate::manifest::Label::Abnormal;
        if abnormal {
            if let Some(cat) = category {
                if meta.category != cat {
                    continue;
                }
            }
        }
        let s = scores
            .get(&meta.id)
            .ok_or_else(|| Error::invalid(format!("score table missing {}", meta.id)))?;
        labels.push(abnormal);
        values.push(s);
    }
    auroc(&labels, &values)
}

/// Runs the demo under `out_dir` with every stage seeded from `seed`.
pub fn run_demo(out_dir: &Path, seed: u64) -> Result<DemoOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spec = DatasetSpec::demo();
    let dataset = generate(out_dir, &spec, seed)?;
    let manifest = Manifest::load(&dataset.manifest_path)?;

    // Supervision partition; the bank sees only labeled-normal samples.
    let partition = partition_supervision(&manifest, seed)?;
    let partition_json = serde_json::to_string_pretty(&partition)
        .expect("partition serializes");
    let partition_path = out_dir.join("partition.json");
    std::fs::write(&partition_path, partition_json + "\n")
        .map_err(|e| Error::io(&partition_path, e))?;

    let train = load_split_features(&manifest, &dataset.features_dir, Split::Train)?;
    let normal_ids: std::collections::HashSet<&str> = labeled_normals(&manifest, &partition)
        .iter()
        .map(|m| m.id.as_str())
        .collect();
    let pool: Vec<_> = train
        .into_iter()
        .filter(|s| normal_ids.contains(s.id.as_str()))
        .collect();
    let bank = MemoryBank::build(&pool, 1.0, seed)?;
    bank.save(&out_dir.join("bank.nfmb"))?;

    // Memory-stream scores for both evaluation splits.
    let scores_dir = out_dir.join("scores");
    std::fs::create_dir_all(&scores_dir).map_err(|e| Error::io(&scores_dir, e))?;
    let b = 3;
    let validation = load_split_features(&manifest, &dataset.features_dir, Split::Validation)?;
    let mem_val = score_stream("memory_validation", &validation, &bank.tensor, b, true)?;
    write_scores_csv(&scores_dir.join("memory_validation.csv"), &mem_val)?;
    drop(validation);
    let test = load_split_features(&manifest, &dataset.features_dir, Split::Test)?;
    let mem_test = score_stream("memory_test", &test, &bank.tensor, b, true)?;
    write_scores_csv(&scores_dir.join("memory_test.csv"), &mem_test)?;
    drop(test);

    // Fuse with the generated external stream, calibrated on validation.
    let ext_val = read_scores_csv(&dataset.external_validation)?;
    let ext_test = read_scores_csv(&dataset.external_test)?;
    let fusion = FusionConfig {
        weight: 0.5,
        calibration: Calibration::MinmaxValidation,
    };
    let fused_val = fuse(&mem_val, &ext_val, Some((&mem_val, &ext_val)), &fusion)?;
    let fused_test = fuse(&mem_test, &ext_test, Some((&mem_val, &ext_val)), &fusion)?;
    let mut warnings = fused_val.warnings.clone();
    warnings.extend(fused_test.warnings.iter().cloned());
    write_scores_csv(&scores_dir.join("fused_validation.csv"), &fused_val.table)?;
    write_scores_csv(&scores_dir.join("fused_test.csv"), &fused_test.table)?;

    // Evaluate the memory stream and the fused stream.
    let eval_cfg = EvalConfig {
        n_resamples: 1000,
        seed,
        policy: ThresholdPolicy::MaxF1,
        threshold: None,
    };
    let mem_eval = evaluate(&manifest, &mem_test, Some(&mem_val), &eval_cfg)?;
    let fused_eval = evaluate(&manifest, &fused_test.table, Some(&fused_val.table), &eval_cfg)?;
    for (sub, eval) in [("eval-memory", &mem_eval), ("eval-fused", &fused_eval)] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let write = |name: &str, contents: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
        };
        write("report.json", eval.report.to_json())?;
        write("table.md", eval.report.to_markdown())?;
        write("table.csv", eval.report.to_csv())?;
        write("roc.csv", crate::report::roc_to_csv(&eval.roc))?;
    }

    // External-only reference AUROCs for the fusion check.
    let test_metas: Vec<&SampleMeta> = manifest.split(Split::Test).collect();
    let external_overall = auroc_of(&test_metas, &ext_test, None)?;
    let external_unseen = auroc_of(&test_metas, &ext_test, Some(UNSEEN_CATEGORY))?;

    let unseen_row = |report: &EvalReport| -> Result<f64> {
        report
            .categories
            .iter()
            .find(|c| c.category == UNSEEN_CATEGORY)
            .map(|c| c.summary.auroc)
            .ok_or_else(|| Error::invalid("unseen category missing from report"))
    };
    let mem_unseen = unseen_row(&mem_eval.report)?;
    let fused_unseen = unseen_row(&fused_eval.report)?;

    let checks = vec![
        DemoCheck {
            name: "memory_overall_auroc".into(),
            value: mem_eval.report.overall.auroc,
            bound: 0.99,
            pass: mem_eval.report.overall.auroc > 0.99,
        },
        DemoCheck {
            name: "memory_unseen_auroc".into(),
            value: mem_unseen,
            bound: 0.95,
            pass: mem_unseen > 0.95,
        },
        DemoCheck {
            name: "fused_unseen_not_below_external".into(),
            value: fused_unseen - external_unseen,
            bound: 0.0,
            pass: fused_unseen >= external_unseen,
        },
    ];

    let checks_path = out_dir.join("checks.json");
    let checks_json = serde_json::to_string_pretty(&checks).expect("checks serialize");
    std::fs::write(&checks_path, checks_json + "\n").map_err(|e| Error::io(&checks_path, e))?;

    Ok(DemoOutcome {
        checks,
        memory_report: mem_eval.report,
        fused_report: fused_eval.report,
        external_overall_auroc: external_overall,
        external_unseen_auroc: external_unseen,
        warnings,
        out_dir: out_dir.to_path_buf(),
    })
}
