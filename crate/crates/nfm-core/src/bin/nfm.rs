//! Command-line pipeline: partition, build-memory, score, fuse, eval, demo.
//!
//! Every stage reads and writes plain files (JSON, CSV, `.nfmb`), so any
//! intermediate can be inspected or substituted — most usefully the external
//! score stream fed to `fuse`. Exit codes: 0 success, 1 validation problem,
//! 2 unreadable or corrupted files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use nfm_core::error::{Error, Result};
use nfm_core::manifest::{
    labeled_normals, load_split_features, partition_supervision, Manifest, Split,
};
use nfm_core::memory_bank::MemoryBank;
use nfm_core::metrics::ThresholdPolicy;
use nfm_core::report::{evaluate, EvalConfig};
use nfm_core::scoring::{fuse, score_stream, Calibration, FusionConfig};
use nfm_core::tensor_io::{read_scores_csv, write_scores_csv};

#[derive(Parser)]
#[command(name = "nfm", version, about = "Feature-memory anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the training set into labeled and unlabeled subsets.
    Partition {
        #[arg(long)]
        manifest: PathBuf,
        /// Sampling seed (required: partitions must be reproducible).
        #[arg(long)]
        seed: u64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a memory bank from labeled-normal training samples.
    BuildMemory {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output bank path (`.nfmb`; a `.json` sidecar lands next to it).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split's samples against a memory bank.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Which split to score.
        #[arg(long, default_value = "test")]
        split: SplitArg,
        /// Output score CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a memory score stream with an external detector's stream.
    Fuse {
        /// Memory-stream score CSV.
        #[arg(long)]
        scores: PathBuf,
        /// External-stream score CSV over the same samples.
        #[arg(long)]
        external_scores: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a test-split score table: report, tables, ROC points.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Score CSV for the test split.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, table.md, table.csv, roc.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate the synthetic dataset, run the whole pipeline, verify it.
    Demo {
        #[arg(long)]
        out_dir: PathBuf,
        /// Dataset and pipeline seed. The default is the configuration the
        /// self-checks are calibrated against; other seeds redraw the
        /// synthetic data and may land near the check bounds.
        #[arg(long, default_value_t = 19)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Run configuration shared by the pipeline commands. Each command reads the
/// fields it needs; unknown fields are rejected to catch typos.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Scoring neighborhood size.
    #[serde(default = "default_b")]
    b: usize,
    #[serde(default = "default_calibration")]
    calibration: Calibration,
    /// Memory-stream weight in fusion.
    #[serde(default = "default_weight")]
    weight: f64,
    #[serde(default = "default_coreset_ratio")]
    coreset_ratio: f64,
    /// Seed for seed-bearing stages; never defaulted from the clock.
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_n_resamples")]
    n_resamples: usize,
    #[serde(default = "default_policy")]
    threshold_policy: ThresholdPolicy,
    /// Fixed decision threshold; "inf" / "-inf" accepted.
    #[serde(default, deserialize_with = "deserialize_threshold")]
    threshold: Option<f64>,
    /// Validation-split memory scores (threshold selection, calibration).
    #[serde(default)]
    validation_scores: Option<PathBuf>,
    /// Validation-split external scores (calibration).
    #[serde(default)]
    validation_external_scores: Option<PathBuf>,
}

fn default_b() -> usize {
    3
}
fn default_calibration() -> Calibration {
    Calibration::None
}
fn default_weight() -> f64 {
    0.5
}
fn default_coreset_ratio() -> f64 {
    1.0
}
fn default_n_resamples() -> usize {
    1000
}
fn default_policy() -> ThresholdPolicy {
    ThresholdPolicy::MaxF1
}

fn deserialize_threshold<'de, D>(de: D) -> std::result::Result<Option<f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(de)? {
        None => Ok(None),
        Some(Raw::Number(v)) => Ok(Some(v)),
        Some(Raw::Text(s)) => match s.as_str() {
            "inf" | "+inf" => Ok(Some(f64::INFINITY)),
            "-inf" => Ok(Some(f64::NEG_INFINITY)),
            other => Err(serde::de::Error::custom(format!(
                "threshold must be a number, \"inf\", or \"-inf\", got {other:?}"
            ))),
        },
    }
}

impl RunConfig {
    fn load(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| Error::format(path, e.to_string()))?;
        if config.b == 0 {
            return Err(Error::invalid("config: b must be at least 1"));
        }
        Ok(config)
    }

    /// Explicit seed, CLI flag taking precedence over the config file.
    fn require_seed(&self, flag: Option<u64>, stage: &str) -> Result<u64> {
        flag.or(self.seed).ok_or_else(|| {
            Error::invalid(format!(
                "{stage} needs a seed: pass --seed or set \"seed\" in the config"
            ))
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition { manifest, seed, out } => {
            let manifest = Manifest::load(&manifest)?;
            let partition = partition_supervision(&manifest, seed)?;
            let json = serde_json::to_string_pretty(&partition).expect("partition serializes");
            std::fs::write(&out, json + "\n").map_err(|e| Error::io(&out, e))?;
            eprintln!(
                "partitioned {} training samples: {} labeled, {} unlabeled",
                partition.labeled.len() + partition.unlabeled.len(),
                partition.labeled.len(),
                partition.unlabeled.len()
            );
        }
        Command::BuildMemory {
            manifest,
            features_dir,
            config,
            seed,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let seed = config.require_seed(seed, "build-memory")?;
            let manifest = Manifest::load(&manifest)?;
            let partition = partition_supervision(&manifest, seed)?;
            let normal_ids: std::collections::HashSet<&str> =
                labeled_normals(&manifest, &partition)
                    .iter()
                    .map(|m| m.id.as_str())
                    .collect();
            if normal_ids.is_empty() {
                return Err(Error::invalid(
                    "partition produced no labeled-normal samples to build from",
                ));
            }
            let train = load_split_features(&manifest, &features_dir, Split::Train)?;
            let pool: Vec<_> = train
                .into_iter()
                .filter(|s| normal_ids.contains(s.id.as_str()))
                .collect();
            let bank = MemoryBank::build(&pool, config.coreset_ratio, seed)?;
            bank.save(&out)?;
            eprintln!(
                "built memory bank: {} rows x {} dim from {} samples (ratio {})",
                bank.tensor.rows(),
                bank.tensor.dim(),
                pool.len(),
                config.coreset_ratio
            );
        }
        Command::Score {
            manifest,
            features_dir,
            bank,
            config,
            split,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            if config.b == 1 {
                eprintln!("warning: b = 1 makes every score zero by construction");
            }
            let manifest = Manifest::load(&manifest)?;
            let bank = MemoryBank::load(&bank)?;
            let split: Split = split.into();
            let samples = load_split_features(&manifest, &features_dir, split)?;
            if samples.is_empty() {
                return Err(Error::invalid(format!("{split} split has no samples")));
            }
            let name = out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scores".into());
            let table = score_stream(&name, &samples, &bank.tensor, config.b, true)?;
            write_scores_csv(&out, &table)?;
            eprintln!("scored {} {split} samples", table.len());
        }
        Command::Fuse {
            scores,
            external_scores,
            config,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let memory = read_scores_csv(&scores)?;
            let external = read_scores_csv(&external_scores)?;
            let fusion = FusionConfig {
                weight: config.weight,
                calibration: config.calibration,
            };
            let validation = match config.calibration {
                Calibration::None => None,
                Calibration::MinmaxValidation => {
                    let val_mem = config.validation_scores.as_deref().ok_or_else(|| {
                        Error::invalid(
                            "config: minmax_validation needs \"validation_scores\"",
                        )
                    })?;
                    let val_ext =
                        config.validation_external_scores.as_deref().ok_or_else(|| {
                            Error::invalid(
                                "config: minmax_validation needs \"validation_external_scores\"",
                            )
                        })?;
                    Some((read_scores_csv(val_mem)?, read_scores_csv(val_ext)?))
                }
            };
            let fused = fuse(
                &memory,
                &external,
                validation.as_ref().map(|(m, e)| (m, e)),
                &fusion,
            )?;
            for warning in &fused.warnings {
                eprintln!("warning: {warning}");
            }
            write_scores_csv(&out, &fused.table)?;
            eprintln!("fused {} samples (weight {})", fused.table.len(), fusion.weight);
        }
        Command::Eval {
            manifest,
            scores,
            config,
            seed,
            out_dir,
        } => {
            let config = RunConfig::load(&config)?;
            let seed = config.require_seed(seed, "eval")?;
            let manifest = Manifest::load(&manifest)?;
            let table = read_scores_csv(&scores)?;
            let validation = config
                .validation_scores
                .as_deref()
                .map(read_scores_csv)
                .transpose()?;
            let eval_cfg = EvalConfig {
                n_resamples: config.n_resamples,
                seed,
                policy: config.threshold_policy,
                threshold: config.threshold,
            };
            let evaluation = evaluate(&manifest, &table, validation.as_ref(), &eval_cfg)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let write = |name: &str, contents: String| -> Result<()> {
                let path = out_dir.join(name);
                std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
            };
            write("report.json", evaluation.report.to_json())?;
            write("table.md", evaluation.report.to_markdown())?;
            write("table.csv", evaluation.report.to_csv())?;
            write("roc.csv", nfm_core::report::roc_to_csv(&evaluation.roc))?;
            eprintln!(
                "evaluated {} test samples: overall AUROC {:.4} [{:.4}, {:.4}]",
                evaluation.report.n_test,
                evaluation.report.overall.auroc,
                evaluation.report.overall.ci_lo,
                evaluation.report.overall.ci_hi
            );
        }
        Command::Demo { out_dir, seed } => {
            let outcome = nfm_core::demo::run_demo(&out_dir, seed)?;
            for warning in &outcome.warnings {
                eprintln!("warning: {warning}");
            }
            for check in &outcome.checks {
                println!(
                    "check {}: value {:.6} vs bound {:.2} ... {}",
                    check.name,
                    check.value,
                    check.bound,
                    if check.pass { "PASS" } else { "FAIL" }
                );
            }
            println!(
                "memory overall AUROC {:.4}, unseen {:.4}; external overall {:.4}, unseen {:.4}",
                outcome.memory_report.overall.auroc,
                outcome
                    .memory_report
                    .categories
                    .iter()
                    .find(|c| c.category == nfm_core::synthetic::UNSEEN_CATEGORY)
                    .map(|c| c.summary.auroc)
                    .unwrap_or(f64::NAN),
                outcome.external_overall_auroc,
                outcome.external_unseen_auroc
            );
            if !outcome.all_pass() {
                return Err(Error::invalid("demo checks failed"));
            }
            println!("demo artifacts under {}", outcome.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
