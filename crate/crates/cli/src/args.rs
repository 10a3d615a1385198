use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use smrkit::coding::BdRateMethod;
use smrkit::predictor::{Loss, ModelKind};
use smrkit::smr::{AnnotateOptions, Completeness, VacuousPolicy};
use smrkit::{SmrType, ThresholdSet};

#[derive(Debug, Parser)]
#[command(name = "smrkit", version, about = "Satisfied machine ratio annotation, prediction and QP selection")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate record files against a manifest and write normalized copies.
    Ingest(IngestArgs),
    /// Score every machine and write per-image SMR tables.
    Annotate(AnnotateArgs),
    /// Pairwise machine diversity and the codec-modification experiment.
    Diversity(DiversityArgs),
    /// Per-machine JND levels.
    Jnd(JndArgs),
    /// Correlation between feature similarity and SMR.
    Correlate(CorrelateArgs),
    /// Train an SMR predictor.
    Train(TrainArgs),
    /// Predict SMR of coded levels with a trained model.
    Predict(PredictArgs),
    /// Choose QPs per threshold and build rate-SMR curves.
    Optimize(OptimizeArgs),
    /// BD-rate between two rate-SMR curves.
    Bdrate(BdrateArgs),
    /// Summarize a pipeline output directory.
    Report(ReportArgs),
    /// Annotate, train, select QPs and compare curves in one run.
    Pipeline(PipelineArgs),
    /// Write a synthetic classification dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset manifest (TOML or JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Perception record JSONL files; shards are merged.
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ScoringArgs {
    /// Require every (machine, image, level) record (default).
    #[arg(long, overrides_with = "lenient")]
    pub strict: bool,
    /// Compute SMR over the machines present at each level.
    #[arg(long)]
    pub lenient: bool,
    /// Drop images whose pseudo ground truth is empty for some machine.
    #[arg(long)]
    pub exclude_vacuous: bool,
}

impl ScoringArgs {
    pub fn options(&self) -> AnnotateOptions {
        AnnotateOptions {
            completeness: if self.lenient && !self.strict {
                Completeness::Lenient
            } else {
                Completeness::Strict
            },
            vacuous: if self.exclude_vacuous {
                VacuousPolicy::Exclude
            } else {
                VacuousPolicy::Include
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct SeedArgs {
    #[arg(long, env = "SMRKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

fn parse_smr_type(s: &str) -> Result<SmrType, String> {
    s.parse().map_err(|e: smrkit::Error| e.to_string())
}

fn parse_thresholds(s: &str) -> Result<ThresholdSet, String> {
    s.parse().map_err(|e: smrkit::Error| e.to_string())
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: smrkit::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<BdRateMethod, String> {
    s.parse().map_err(|e: smrkit::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<Loss, String> {
    match s {
        "l1" => Ok(Loss::L1),
        "l2" | "squared" => Ok(Loss::Squared),
        other => Err(format!("unknown loss `{other}`")),
    }
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let a = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((a, b))
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub bitrates: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// SMR types such as `top1`, `top5-lib`, `det-iou0.5:0.95:0.05-ts0.5`.
    #[arg(long, num_args = 1.., value_parser = parse_smr_type)]
    pub smr_type: Vec<SmrType>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    /// Modification-experiment trials; 0 skips the experiment.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// QP range for base and modified QPs.
    #[arg(long, value_parser = parse_range, default_value = "32:51")]
    pub qp_range: (u32, u32),
    /// Range of the QP change magnitude.
    #[arg(long, value_parser = parse_range, default_value = "1:5")]
    pub delta_range: (u32, u32),
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JndArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_smr_type)]
    pub smr_type: Option<SmrType>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub features: PathBuf,
    /// Extractors to average over (default: all in the feature file).
    #[arg(long, num_args = 1..)]
    pub extractor: Vec<String>,
    #[arg(long, value_parser = parse_smr_type)]
    pub smr_type: Option<SmrType>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_model_kind, default_value = "baseline")]
    pub model_kind: ModelKind,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Hidden layer widths (default: 4d, 4d).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long, value_parser = parse_loss, default_value = "l1")]
    pub loss: Loss,
    /// Feature extractor feeding the model (default: the only one present).
    #[arg(long)]
    pub extractor: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_parser = parse_smr_type)]
    pub smr_type: Option<SmrType>,
    /// Restrict training to the images listed one per line.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub bitrates: PathBuf,
    #[arg(long, value_parser = parse_smr_type)]
    pub smr_type: Option<SmrType>,
    #[arg(long, value_parser = parse_thresholds, default_value = "0.6:0.95:0.05")]
    pub thresholds: ThresholdSet,
    /// Predictions CSV from `predict`; ground-truth SMR guides selection otherwise.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BdrateArgs {
    /// Curve CSV files (threshold, mean_bpp, mean_smr, label).
    #[arg(long, num_args = 1.., required = true)]
    pub curves: Vec<PathBuf>,
    #[arg(long)]
    pub anchor: String,
    #[arg(long)]
    pub test: String,
    #[arg(long, value_parser = parse_method, default_value = "cubic")]
    pub method: BdRateMethod,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pipeline output directory.
    #[arg(long)]
    pub dir: PathBuf,
    /// Where to write the report (default: `report.txt` in the directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Feature JSONL (extractor, image, qp, vec).
    #[arg(long)]
    pub features: PathBuf,
    /// Bitrate CSV (image, qp, bpp).
    #[arg(long)]
    pub bitrates: PathBuf,
    /// SMR type driving labels and QP selection (default: top1 or the detection grid type).
    #[arg(long, value_parser = parse_smr_type)]
    pub smr_type: Option<SmrType>,
    /// Target SMR values, `start:stop:step` or a comma list.
    #[arg(long, value_parser = parse_thresholds, default_value = "0.6:0.95:0.05")]
    pub thresholds: ThresholdSet,
    /// Share of images held out for QP selection and curves.
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    /// BD-rate integrator: `cubic` or `pchip`.
    #[arg(long, value_parser = parse_method, default_value = "cubic")]
    pub method: BdRateMethod,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 12)]
    pub machines: usize,
    #[arg(long, default_value_t = 200)]
    pub images: usize,
    #[arg(long, value_parser = parse_range, default_value = "32:51")]
    pub qp_range: (u32, u32),
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.08)]
    pub noise: f64,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub out: PathBuf,
}
