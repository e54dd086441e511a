//! Benchmark evaluation: one global threshold, per-category breakdowns with
//! seen/unseen flags, bootstrap confidence intervals, and renderers for the
//! JSON/markdown/CSV artifacts.
//!
//! Category rows share the full test-normal pool: a category's true/false
//! negatives come from every normal test sample, so specificity is identical
//! across the categories of one run, while sensitivity and F1 isolate that
//! category's abnormal samples. The Average row is the unweighted mean over
//! category rows.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::manifest::{Label, Manifest, SampleMeta, Seen, Split};
use crate::metrics::{
    auroc, bootstrap_auroc_ci, confusion_at, roc_points, select_threshold, Confusion, RocPoint,
    ThresholdPolicy,
};
use crate::tensor_io::ScoreTable;

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub policy: ThresholdPolicy,
    /// Fixed decision threshold. When absent one is selected by `policy` on
    /// the validation scores if provided, otherwise on the test scores.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamSummary {
    pub auroc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub f1: f64,
    pub spc: f64,
    pub sen: f64,
    #[serde(flatten)]
    pub counts: Confusion,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub seen: Seen,
    #[serde(flatten)]
    pub summary: StreamSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct AverageRow {
    pub f1: f64,
    pub spc: f64,
    pub sen: f64,
    pub auroc: f64,
}

/// Where the decision threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Config,
    Validation,
    Test,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub stream: String,
    pub n_test: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    pub threshold_policy: ThresholdPolicy,
    pub threshold_source: ThresholdSource,
    pub n_resamples: usize,
    pub seed: u64,
    pub overall: StreamSummary,
    pub categories: Vec<CategoryRow>,
    pub average: AverageRow,
}

/// JSON has no Infinity literal; non-finite thresholds serialize as the
/// strings "inf" / "-inf".
fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else if *t > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub roc: Vec<RocPoint>,
}

/// Aligns a score table to a sample list, erroring on missing or extra ids
/// (the first few are listed).
fn align(
    metas: &[&SampleMeta],
    scores: &ScoreTable,
    what: &str,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let mut missing: Vec<&str> = Vec::new();
    let mut labels = Vec::with_capacity(metas.len());
    let mut values = Vec::with_capacity(metas.len());
    for meta in metas {
        match scores.get(&meta.id) {
            Some(s) => {
                labels.push(meta.label == Label::Abnormal);
                values.push(s);
            }
            None => missing.push(&meta.id),
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.truncate(10);
        return Err(Error::invalid(format!(
            "score table {} is missing {} samples: {}",
            what,
            metas.len() - labels.len(),
            missing.join(", ")
        )));
    }
    if scores.len() != metas.len() {
        let known: std::collections::HashSet<&str> =
            metas.iter().map(|m| m.id.as_str()).collect();
        let mut extra: Vec<&str> = scores.ids().filter(|id| !known.contains(id)).collect();
        extra.sort_unstable();
        extra.truncate(10);
        return Err(Error::invalid(format!(
            "score table {} has {} ids not in the split: {}",
            what,
            scores.len() - metas.len(),
            extra.join(", ")
        )));
    }
    Ok((labels, values))
}

fn summarize(
    labels: &[bool],
    scores: &[f64],
    threshold: f64,
    cfg: &EvalConfig,
) -> Result<StreamSummary> {
    let point = auroc(labels, scores)?;
    let (ci_lo, ci_hi) = bootstrap_auroc_ci(labels, scores, cfg.n_resamples, cfg.seed)?;
    let counts = confusion_at(labels, scores, threshold);
    Ok(StreamSummary {
        auroc: point,
        ci_lo,
        ci_hi,
        f1: counts.f1(),
        spc: counts.specificity(),
        sen: counts.sensitivity(),
        counts,
    })
}

/// Evaluates a test-split score table against the manifest's labels.
pub fn evaluate(
    manifest: &Manifest,
    scores: &ScoreTable,
    validation_scores: Option<&ScoreTable>,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let mut test: Vec<&SampleMeta> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::invalid("manifest has no test samples"));
    }
    test.sort_by(|a, b| a.id.cmp(&b.id));
    let (labels, values) = align(&test, scores, "test")?;

    let (threshold, threshold_source) = match cfg.threshold {
        Some(t) => (t, ThresholdSource::Config),
        None => match validation_scores {
            Some(val) => {
                let mut val_metas: Vec<&SampleMeta> =
                    manifest.split(Split::Validation).collect();
                if val_metas.is_empty() {
                    return Err(Error::invalid(
                        "validation scores given but manifest has no validation samples",
                    ));
                }
                val_metas.sort_by(|a, b| a.id.cmp(&b.id));
                let (vl, vs) = align(&val_metas, val, "validation")?;
                (select_threshold(&vl, &vs, cfg.policy)?, ThresholdSource::Validation)
            }
            None => (
                select_threshold(&labels, &values, cfg.policy)?,
                ThresholdSource::Test,
            ),
        },
    };

    let overall = summarize(&labels, &values, threshold, cfg)?;
    let roc = roc_points(&labels, &values)?;

    // Per-category rows: that category's abnormals against all test normals.
    let mut categories = Vec::new();
    for (category, seen) in manifest.abnormal_categories() {
        let mut cat_labels = Vec::new();
        let mut cat_values = Vec::new();
        for (meta, (&l, &v)) in test.iter().zip(labels.iter().zip(&values)) {
            if !l || meta.category == category {
                cat_labels.push(l);
                cat_values.push(v);
            }
        }
        if !cat_labels.iter().any(|&l| l) {
            continue; // category absent from the test split
        }
        categories.push(CategoryRow {
            category,
            seen,
            summary: summarize(&cat_labels, &cat_values, threshold, cfg)?,
        });
    }
    if categories.is_empty() {
        return Err(Error::invalid("test split has no abnormal samples"));
    }

    let n = categories.len() as f64;
    let average = AverageRow {
        f1: categories.iter().map(|c| c.summary.f1).sum::<f64>() / n,
        spc: categories.iter().map(|c| c.summary.spc).sum::<f64>() / n,
        sen: categories.iter().map(|c| c.summary.sen).sum::<f64>() / n,
        auroc: categories.iter().map(|c| c.summary.auroc).sum::<f64>() / n,
    };

    Ok(Evaluation {
        report: EvalReport {
            dataset: manifest.name.clone(),
            stream: scores.name().to_string(),
            n_test: test.len(),
            threshold,
            threshold_policy: cfg.policy,
            threshold_source,
            n_resamples: cfg.n_resamples,
            seed: cfg.seed,
            overall,
            categories,
            average,
        },
        roc,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Markdown table with percentages at one decimal place.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# {} / {}\n\nthreshold: {} ({:?} via {:?}), {} test samples\n\n",
            self.dataset,
            self.stream,
            display_threshold(self.threshold),
            self.threshold_policy,
            self.threshold_source,
            self.n_test,
        ));
        out.push_str("| Category | Seen | F1 | SPC | SEN | AUROC [95% CI] |\n");
        out.push_str("|---|---|---:|---:|---:|---|\n");
        for row in &self.categories {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.3} [{:.3}, {:.3}] |\n",
                row.category,
                row.seen,
                pct(row.summary.f1),
                pct(row.summary.spc),
                pct(row.summary.sen),
                row.summary.auroc,
                row.summary.ci_lo,
                row.summary.ci_hi,
            ));
        }
        out.push_str(&format!(
            "| Average | - | {} | {} | {} | {:.3} |\n",
            pct(self.average.f1),
            pct(self.average.spc),
            pct(self.average.sen),
            self.average.auroc,
        ));
        out
    }

    /// CSV table with full-precision values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,seen,f1,spc,sen,auroc,ci_lo,ci_hi,tp,fp,tn,fn\n");
        for row in &self.categories {
            let s = &row.summary;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.category,
                row.seen,
                s.f1,
                s.spc,
                s.sen,
                s.auroc,
                s.ci_lo,
                s.ci_hi,
                s.counts.tp,
                s.counts.fp,
                s.counts.tn,
                s.counts.fn_,
            ));
        }
        out.push_str(&format!(
            "Average,,{},{},{},{},,,,,,\n",
            self.average.f1, self.average.spc, self.average.sen, self.average.auroc
        ));
        out
    }
}

/// ROC points as `fpr,tpr,threshold` CSV.
pub fn roc_to_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn display_threshold(t: f64) -> String {
    if t.is_finite() {
        t.to_string()
    } else if t > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
