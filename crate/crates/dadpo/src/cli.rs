//! Command-line surface: `score`, `train`, `analyze`, `filter`, `synth`.
//!
//! Every command reads its settings from an optional TOML config file with
//! CLI flags taking precedence, writes a resolved-config snapshot next to
//! its primary output, and emits a machine-readable error JSON on stderr
//! when it fails. Exit codes: 0 success, 1 validation error, 2 runtime
//! error. Sidecar files append their suffix to the primary output name
//! (`scores.jsonl.report.json`, `pairs.jsonl.labels.jsonl`, ...).
//!
//! The `DADPO_OUT_DIR` environment variable redirects relative output
//! paths into a chosen directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{area_under_gap, correlation_report, filter_easy, CorrelationReport};
use crate::config::{resolve_output, write_snapshot, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::score_dataset;
use crate::io;
use crate::synth;
use crate::trainer::{train, Objective, TrainingTrace};
use crate::types::{EstimatorKind, EstimatorReport, FusionMode, NormalizationMode};

#[derive(Debug, Parser)]
#[command(name = "dadpo", version, about = "Difficulty-aware preference optimization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a pairs file for sample difficulty.
    Score(ScoreArgs),
    /// Train the toy policy with DPO or difficulty-aware DPO.
    Train(TrainArgs),
    /// Compute Area-Under-Gap and correlation diagnostics from traces.
    Analyze(AnalyzeArgs),
    /// Drop the easiest fraction of a dataset (direct-filtering baseline).
    Filter(FilterArgs),
    /// Generate a synthetic pairs file with planted difficulty.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Contrastive,
    Generative,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(value: EstimatorArg) -> Self {
        match value {
            EstimatorArg::Contrastive => EstimatorKind::Contrastive,
            EstimatorArg::Generative => EstimatorKind::Generative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormalizationArg {
    Gaussian,
    RankBased,
    GaussianLengthControlled,
}

impl From<NormalizationArg> for NormalizationMode {
    fn from(value: NormalizationArg) -> Self {
        match value {
            NormalizationArg::Gaussian => NormalizationMode::Gaussian,
            NormalizationArg::RankBased => NormalizationMode::RankBased,
            NormalizationArg::GaussianLengthControlled => {
                NormalizationMode::GaussianLengthControlled
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Dpo,
    Dadpo,
}

impl From<ObjectiveArg> for Objective {
    fn from(value: ObjectiveArg) -> Self {
        match value {
            ObjectiveArg::Dpo => Objective::Dpo,
            ObjectiveArg::Dadpo => Objective::Dadpo,
        }
    }
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Input pairs JSONL file.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output scores JSONL file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Estimators to run (default: both).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorArg>>,
    #[arg(long)]
    normalization: Option<NormalizationArg>,
    /// Fixed contrastive fusion weight in [0, 1]; adaptive voting when
    /// omitted.
    #[arg(long, value_name = "W_C")]
    fixed_ratio: Option<f64>,
    #[arg(long)]
    stabilizer: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Input pairs JSONL file.
    #[arg(long, value_name = "FILE")]
    pairs: PathBuf,
    /// Difficulty scores for the same records.
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Output trace CSV (suffixed per beta when sweeping).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    beta: Option<f64>,
    /// Train once per listed beta, e.g. `--beta-sweep 0.1,0.2,0.3,0.4`.
    #[arg(long, value_delimiter = ',')]
    beta_sweep: Option<Vec<f64>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training fraction of the train/validation split.
    #[arg(long, default_value_t = 0.9)]
    split: f64,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    eval_checkpoints: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Trace CSV files (one or more).
    #[arg(required = true, value_name = "TRACE")]
    traces: Vec<PathBuf>,
    /// Difficulty scores used for the correlation report.
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Output analysis JSON file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Expected bucket count; traces with a different schema are rejected.
    #[arg(long, default_value_t = 4)]
    buckets: usize,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long, value_name = "FILE")]
    pairs: PathBuf,
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Fraction of easiest samples to remove, in (0, 1).
    #[arg(long)]
    fraction: f64,
    /// Output filtered pairs JSONL; retained ids land in
    /// `<out>.retained.txt`.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output pairs JSONL; the ground-truth sidecar lands in
    /// `<out>.labels.jsonl`.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    easy_fraction: Option<f64>,
    #[arg(long)]
    easy_gap_scale: Option<f64>,
    #[arg(long)]
    hard_gap_scale: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    response_len: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(args) => cmd_score(args),
        Command::Train(args) => cmd_train(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn override_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(value) = value {
        *slot = value;
    }
}

#[derive(Serialize)]
struct ScoreReportSidecar<'a> {
    n_records: usize,
    contrastive: Option<&'a EstimatorReport>,
    generative: Option<&'a EstimatorReport>,
    w_c: Option<f64>,
    w_m: Option<f64>,
}

fn print_report_table(report: &EstimatorReport) {
    let per_category: Vec<String> = report
        .per_category_accuracy
        .iter()
        .map(|(category, accuracy)| format!("{category}={accuracy:.4}"))
        .collect();
    println!(
        "{:<12} {:>8.4} {:>6}  {}",
        report.estimator.to_string(),
        report.overall_accuracy,
        report.n_evaluated,
        per_category.join(" ")
    );
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let mut config = PipelineConfig::load_or_default(args.config.as_deref())?;
    if let Some(estimators) = &args.estimators {
        config.score.estimators = Some(estimators.iter().map(|&e| e.into()).collect());
    }
    if let Some(normalization) = args.normalization {
        config.fusion.normalization = normalization.into();
    }
    if let Some(w_c) = args.fixed_ratio {
        config.fusion.mode = FusionMode::Fixed { w_c };
    }
    override_opt(&mut config.fusion.stabilizer, args.stabilizer);

    let estimators = config
        .score
        .estimators
        .clone()
        .unwrap_or_else(|| vec![EstimatorKind::Contrastive, EstimatorKind::Generative]);

    let records = io::read_pairs(&args.input)?;
    let scored = score_dataset(&records, &estimators, &config.fusion)?;

    let out = resolve_output(&args.out);
    io::write_scores(&out, &scored)?;

    println!("{:<12} {:>8} {:>6}  per-category", "estimator", "overall", "n");
    for report in [&scored.header.contrastive_report, &scored.header.generative_report]
        .into_iter()
        .flatten()
    {
        print_report_table(report);
    }
    if let (Some(w_c), Some(w_m)) = (scored.header.w_c, scored.header.w_m) {
        println!("fusion weights: w_c={w_c:.4} w_m={w_m:.4}");
    }
    println!("wrote {} score rows to {}", scored.scores.len(), out.display());

    let sidecar = ScoreReportSidecar {
        n_records: records.len(),
        contrastive: scored.header.contrastive_report.as_ref(),
        generative: scored.header.generative_report.as_ref(),
        w_c: scored.header.w_c,
        w_m: scored.header.w_m,
    };
    let report_path = append_suffix(&out, ".report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))?
            + "\n",
    )?;

    write_snapshot("score", &out, &[&args.input], &[&out, &report_path], &config)
}

fn append_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(suffix);
    path.with_file_name(name)
}

/// `trace.csv` -> `trace_beta0.1.csv` for sweep runs.
fn beta_suffixed(path: &Path, beta: f64) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_beta{beta}{ext}"))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = PipelineConfig::load_or_default(args.config.as_deref())?;
    if let Some(objective) = args.objective {
        config.train.objective = objective.into();
    }
    override_opt(&mut config.train.beta, args.beta);
    if args.beta_sweep.is_some() {
        config.train.beta_sweep = args.beta_sweep.clone();
    }
    override_opt(&mut config.train.learning_rate, args.learning_rate);
    override_opt(&mut config.train.epochs, args.epochs);
    override_opt(&mut config.train.batch_size, args.batch_size);
    override_opt(&mut config.train.seed, args.seed);
    override_opt(&mut config.train.buckets, args.buckets);
    override_opt(&mut config.train.eval_checkpoints, args.eval_checkpoints);

    let records = io::read_pairs(&args.pairs)?;
    let scored = io::read_scores(&args.scores)?;

    let betas = config
        .train
        .beta_sweep
        .clone()
        .unwrap_or_else(|| vec![config.train.beta]);
    let sweeping = betas.len() > 1;

    let out = resolve_output(&args.out);
    let mut outputs = Vec::new();
    for beta in betas {
        let mut train_config = config.train.clone();
        train_config.beta = beta;
        let (_, trace) = train(&records, &scored.scores, args.split, &train_config)?;
        let path = if sweeping {
            beta_suffixed(&out, beta)
        } else {
            out.clone()
        };
        io::write_trace(&path, &trace)?;
        print_train_summary(&trace, &path);
        outputs.push(path);
    }

    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_snapshot(
        "train",
        &out,
        &[args.pairs.as_path(), args.scores.as_path()],
        &output_refs,
        &config,
    )
}

fn print_train_summary(trace: &TrainingTrace, path: &Path) {
    let last = trace.rows.last().expect("trace has at least one row");
    let rewards: Vec<String> = last.rewards.iter().map(|r| format!("{r:.4}")).collect();
    println!(
        "{} beta={} final loss {:.6}, final per-bucket rewards [{}] (bucket {} easiest) -> {}",
        trace.objective,
        trace.beta,
        last.loss,
        rewards.join(", "),
        trace.easiest_bucket(),
        path.display()
    );
}

#[derive(Serialize)]
struct TraceAnalysis {
    path: String,
    objective: Objective,
    beta: f64,
    buckets: usize,
    n_evaluations: usize,
    aug: f64,
    final_gap: f64,
}

#[derive(Serialize)]
struct AugComparison {
    aug_dpo: f64,
    aug_dadpo: f64,
    /// `aug_dadpo / aug_dpo`; below 1 means the difficulty-aware run kept
    /// the easy-hard reward gap smaller.
    ratio: f64,
}

#[derive(Serialize)]
struct AnalysisOutput {
    traces: Vec<TraceAnalysis>,
    comparison: Option<AugComparison>,
    correlation: Option<CorrelationReport>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let config = PipelineConfig::load_or_default(args.config.as_deref())?;
    let scored = io::read_scores(&args.scores)?;

    let mut traces = Vec::new();
    for path in &args.traces {
        let trace = io::read_trace(path)?;
        if trace.buckets != args.buckets {
            return Err(Error::ParseFile {
                path: path.display().to_string(),
                message: format!(
                    "trace has {} buckets, expected {}",
                    trace.buckets, args.buckets
                ),
            });
        }
        traces.push((path.clone(), trace));
    }

    let mut analyses = Vec::new();
    for (path, trace) in &traces {
        let aug = area_under_gap(trace, trace.easiest_bucket(), trace.hardest_bucket())?;
        analyses.push(TraceAnalysis {
            path: path.display().to_string(),
            objective: trace.objective,
            beta: trace.beta,
            buckets: trace.buckets,
            n_evaluations: trace.rows.len(),
            final_gap: aug.gap_series.last().map(|g| g.1).unwrap_or(0.0),
            aug: aug.aug,
        });
    }

    let dpo: Vec<&TraceAnalysis> = analyses
        .iter()
        .filter(|a| a.objective == Objective::Dpo)
        .collect();
    let dadpo: Vec<&TraceAnalysis> = analyses
        .iter()
        .filter(|a| a.objective == Objective::Dadpo)
        .collect();
    let comparison = match (dpo.as_slice(), dadpo.as_slice()) {
        ([d], [a]) => Some(AugComparison {
            aug_dpo: d.aug,
            aug_dadpo: a.aug,
            ratio: a.aug / d.aug,
        }),
        _ => None,
    };

    let correlation = match correlation_report(&scored.scores) {
        Ok(report) => Some(report),
        Err(Error::InsufficientData { .. }) | Err(Error::DegenerateColumn { .. }) => {
            log::info!("correlation report skipped: needs both normalized gap columns");
            None
        }
        Err(other) => return Err(other),
    };

    let out = resolve_output(&args.out);
    let output = AnalysisOutput {
        traces: analyses,
        comparison,
        correlation,
    };
    std::fs::write(
        &out,
        serde_json::to_string_pretty(&output)
            .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))?
            + "\n",
    )?;

    let trajectories_path = append_suffix(&out, ".trajectories.csv");
    write_trajectories(&trajectories_path, &traces)?;

    for analysis in &output.traces {
        println!(
            "{} beta={} aug={:.6} final_gap={:.6} ({})",
            analysis.objective, analysis.beta, analysis.aug, analysis.final_gap, analysis.path
        );
    }
    if let Some(c) = &output.comparison {
        println!(
            "aug_dpo={:.6} aug_dadpo={:.6} ratio={:.4}",
            c.aug_dpo, c.aug_dadpo, c.ratio
        );
    }
    if let Some(c) = &output.correlation {
        println!("correlation: pearson={:.4} spearman={:.4} n={}", c.pearson, c.spearman, c.n);
    }

    let inputs: Vec<&Path> = std::iter::once(args.scores.as_path())
        .chain(args.traces.iter().map(PathBuf::as_path))
        .collect();
    write_snapshot("analyze", &out, &inputs, &[&out, &trajectories_path], &config)
}

/// Long-format per-bucket trajectories across all traces.
fn write_trajectories(path: &Path, traces: &[(PathBuf, TrainingTrace)]) -> Result<()> {
    use std::io::Write;
    let mut writer = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(writer, "trace,objective,beta,iteration,bucket,reward,margin")?;
    for (trace_path, trace) in traces {
        for row in &trace.rows {
            for bucket in 0..trace.buckets {
                writeln!(
                    writer,
                    "{},{},{},{},{},{},{}",
                    trace_path.display(),
                    trace.objective,
                    trace.beta,
                    row.iteration,
                    bucket,
                    row.rewards[bucket],
                    row.margins[bucket]
                )?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let config = PipelineConfig::load_or_default(args.config.as_deref())?;
    let records = io::read_pairs(&args.pairs)?;
    let scored = io::read_scores(&args.scores)?;

    let retained = filter_easy(&scored.scores, args.fraction)?;
    let retained_set: std::collections::HashSet<&str> =
        retained.iter().map(String::as_str).collect();
    let filtered: Vec<_> = records
        .iter()
        .filter(|r| retained_set.contains(r.id.as_str()))
        .cloned()
        .collect();

    let out = resolve_output(&args.out);
    io::write_pairs(&out, &filtered)?;
    let ids_path = append_suffix(&out, ".retained.txt");
    io::write_id_list(&ids_path, &retained)?;
    println!(
        "removed {} easiest of {} records; retained {} -> {}",
        records.len() - filtered.len(),
        records.len(),
        filtered.len(),
        out.display()
    );

    write_snapshot(
        "filter",
        &out,
        &[args.pairs.as_path(), args.scores.as_path()],
        &[&out, &ids_path],
        &config,
    )
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut config = PipelineConfig::load_or_default(args.config.as_deref())?;
    override_opt(&mut config.synth.n_samples, args.n_samples);
    override_opt(&mut config.synth.seed, args.seed);
    override_opt(&mut config.synth.easy_fraction, args.easy_fraction);
    override_opt(&mut config.synth.easy_gap_scale, args.easy_gap_scale);
    override_opt(&mut config.synth.hard_gap_scale, args.hard_gap_scale);
    override_opt(&mut config.synth.noise_sigma, args.noise_sigma);
    override_opt(&mut config.synth.embedding_dim, args.embedding_dim);
    override_opt(&mut config.synth.response_len, args.response_len);

    let planted = synth::generate(&config.synth)?;
    let records: Vec<_> = planted.iter().map(|p| p.record.clone()).collect();

    let out = resolve_output(&args.out);
    io::write_pairs(&out, &records)?;
    let labels_path = append_suffix(&out, ".labels.jsonl");
    io::write_labels(&labels_path, &planted)?;
    println!(
        "generated {} records ({} easy) -> {}",
        records.len(),
        planted
            .iter()
            .filter(|p| p.label == synth::DifficultyLabel::Easy)
            .count(),
        out.display()
    );

    write_snapshot("synth", &out, &[], &[&out, &labels_path], &config)
}
