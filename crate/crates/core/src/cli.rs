//! Command-line surface orchestrating the pipeline end to end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    compare_versions, model_agreement, tutorial_means, tutorial_summary_from_means,
    version_comparison_from_table, TutorialSummary, VersionComparison,
};
use crate::calibration::{
    kmeans_fit, multi_otsu, save_calibration, CalibrationArtifact, ClassCombiner, FeatureBand,
    ThresholdSet,
};
use crate::config::{config_hash, load_embedder, ClassifierSource, RunConfig};
use crate::corpus::{load_manifest, validate_corpus};
use crate::fixtures::{reference_metric_table, reference_tutorial_means, tokenization_spot_check};
use crate::gateway::{
    run_tutorial, EntryStatus, ProviderConfig, RunOptions, SessionMode, TranscriptStore,
};
use crate::metrics::SemanticMode;
use crate::report::{
    load_report, render_markdown, save_report, write_atomic, Report,
};
use crate::scores::{read_scores, score_store_records, write_scores, ScoreRow};
use crate::verdicts::{gate_passes, run_suite, GateLevel, SuiteResult, SuiteSpec};

#[derive(Parser)]
#[command(name = "tuteval", version, about = "Grades tutorial frames by querying a vision-language model and scoring its answers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug)]
enum ModeSelect {
    History,
    NoHistory,
    Both,
}

impl std::str::FromStr for ModeSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "history" => Ok(ModeSelect::History),
            "no-history" => Ok(ModeSelect::NoHistory),
            "both" => Ok(ModeSelect::Both),
            other => Err(format!("unknown mode {other:?}, expected history|no-history|both")),
        }
    }
}

impl ModeSelect {
    fn modes(self) -> Vec<SessionMode> {
        match self {
            ModeSelect::History => vec![SessionMode::WithHistory],
            ModeSelect::NoHistory => vec![SessionMode::WithoutHistory],
            ModeSelect::Both => vec![SessionMode::WithHistory, SessionMode::WithoutHistory],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum CalibrateMethod {
    Kmeans,
    Otsu,
}

impl std::str::FromStr for CalibrateMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(CalibrateMethod::Kmeans),
            "otsu" => Ok(CalibrateMethod::Otsu),
            other => Err(format!("unknown method {other:?}, expected kmeans|otsu")),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check corpus integrity and report every violation.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Full pipeline: query the provider, score, classify, report.
    Run(RunArgs),
    /// Score persisted transcripts against the corpus expectations.
    Score(ScoreArgs),
    /// Fit quality-class boundaries from a score table.
    Calibrate(CalibrateArgs),
    /// Classify an existing score table and emit reports.
    Verdict(VerdictArgs),
    /// Cross-version improvement on common questions.
    Compare(CompareArgs),
    /// Per-tutorial clarity means and ranking.
    Tutorials(TutorialsArgs),
    /// Inter-model agreement matrix.
    Agreement(AgreementArgs),
    /// Re-render the human-readable report from a machine report.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Provider configuration file.
    #[arg(long)]
    provider: PathBuf,
    /// Embedding provider configuration; defaults to the offline stub.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Versions to run; defaults to every version in the corpus.
    #[arg(long = "version")]
    versions: Vec<String>,
    /// Tutorials to run; defaults to every tutorial of each version.
    #[arg(long = "tutorial")]
    tutorials: Vec<u32>,
    #[arg(long, default_value = "both")]
    mode: ModeSelect,
    /// `reference` or a calibration file path.
    #[arg(long, default_value = "reference")]
    classifier: ClassifierSource,
    #[arg(long, default_value = "sentence")]
    semantic_mode: SemanticMode,
    #[arg(long)]
    no_cache: bool,
    /// Parallel requests for without-history runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "fail")]
    gate: GateLevel,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Transcript store directory.
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(long = "version")]
    versions: Vec<String>,
    #[arg(long)]
    mode: Option<SessionMode>,
    #[arg(long, default_value = "sentence")]
    semantic_mode: SemanticMode,
    /// Output score table.
    #[arg(long, default_value = "scores.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Input score table.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "otsu")]
    method: CalibrateMethod,
    /// Restrict calibration to one model's scores.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    k_neighbors: usize,
    #[arg(long, default_value_t = 256)]
    bins: usize,
    #[arg(long, default_value = "calibration.json")]
    out: PathBuf,
}

#[derive(Args)]
struct VerdictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Transcript store directory (answers for the report gallery).
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long, default_value = "reference")]
    classifier: ClassifierSource,
    #[arg(long = "version")]
    versions: Vec<String>,
    #[arg(long)]
    mode: Option<SessionMode>,
    #[arg(long = "tutorial")]
    tutorials: Vec<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "fail")]
    gate: GateLevel,
}

#[derive(Args)]
struct CompareArgs {
    /// Use the shipped reference table instead of a score table.
    #[arg(long)]
    fixture: bool,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "P")]
    previous: String,
    #[arg(long, default_value = "L")]
    latest: String,
    #[arg(long, default_value = "both")]
    mode: ModeSelect,
    /// Write the comparison as JSON next to the printed table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TutorialsArgs {
    #[arg(long)]
    fixture: bool,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long = "version")]
    versions: Vec<String>,
    #[arg(long)]
    mode: Option<SessionMode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long = "version")]
    versions: Vec<String>,
    #[arg(long)]
    mode: Option<SessionMode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Machine-readable report to render.
    #[arg(long)]
    from: PathBuf,
    /// Rendered markdown destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Verdict(args) => cmd_verdict(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Tutorials(args) => cmd_tutorials(args),
        Command::Agreement(args) => cmd_agreement(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_validate(corpus: &PathBuf) -> Result<ExitCode> {
    let text = std::fs::read_to_string(corpus)
        .with_context(|| format!("reading {}", corpus.display()))?;
    let mut manifest: crate::corpus::CorpusManifest =
        toml::from_str(&text).context("parsing corpus manifest")?;
    manifest.base_dir = corpus
        .parent()
        .unwrap_or_else(|| std::path::Path::new("."))
        .to_path_buf();
    let diagnostics = validate_corpus(&manifest);
    if diagnostics.is_empty() {
        println!(
            "corpus ok: {} versions, {} frames, {} questions",
            manifest.versions.len(),
            manifest.frames.len(),
            manifest.frames.iter().map(|f| f.questions.len()).sum::<usize>()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        for d in &diagnostics {
            println!("violation: {d}");
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.corpus)?;
    let provider_config = ProviderConfig::load(&args.provider)?;
    let provider = provider_config.build(&manifest)?;
    let embedder = load_embedder(args.embedder.as_deref()).map_err(anyhow::Error::msg)?;
    let classifier = args.classifier.load()?;

    let versions: Vec<String> = if args.versions.is_empty() {
        manifest.versions.iter().map(|v| v.id.clone()).collect()
    } else {
        for v in &args.versions {
            if manifest.version(v).is_none() {
                bail!("version {v:?} is not in the corpus");
            }
        }
        args.versions.clone()
    };
    if versions.is_empty() {
        bail!("nothing selected: the corpus declares no versions");
    }
    let modes = args.mode.modes();

    let run_config = RunConfig {
        corpus: args.corpus.clone(),
        provider: args.provider.clone(),
        embedder: args.embedder.clone(),
        versions: versions.clone(),
        tutorials: args.tutorials.clone(),
        modes: modes.clone(),
        classifier: args.classifier.clone(),
        semantic_mode: args.semantic_mode,
        no_cache: args.no_cache,
        jobs: args.jobs,
        seed: args.seed,
        out_dir: args.out.clone(),
        gate: args.gate,
    };
    let hash = config_hash(&run_config);

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let store = TranscriptStore::open(&args.out.join("transcripts"))?;
    let opts = RunOptions { no_cache: args.no_cache, jobs: args.jobs.max(1) };

    let mut diagnostics = Vec::new();
    let mut suites: Vec<SuiteResult> = Vec::new();
    let mut all_rows: Vec<ScoreRow> = Vec::new();

    for version in &versions {
        let tutorials = if args.tutorials.is_empty() {
            manifest.tutorials_for(version)
        } else {
            args.tutorials.clone()
        };
        if tutorials.is_empty() {
            bail!("version {version:?} has no frames");
        }
        for &mode in &modes {
            for &tutorial in &tutorials {
                let transcript = run_tutorial(
                    &manifest,
                    version,
                    tutorial,
                    mode,
                    provider.as_ref(),
                    &store,
                    &opts,
                )?;
                for entry in &transcript.entries {
                    match &entry.status {
                        EntryStatus::Ok => {}
                        EntryStatus::ParseFailed { detail } => diagnostics.push(format!(
                            "frame {} ({version}, tutorial {tutorial}, {mode}): answers scored as empty, {detail}",
                            entry.frame_id
                        )),
                        EntryStatus::AskFailed { detail } => diagnostics.push(format!(
                            "frame {} ({version}, tutorial {tutorial}, {mode}): provider call failed, {detail}",
                            entry.frame_id
                        )),
                    }
                }
                if transcript.aborted {
                    diagnostics.push(format!(
                        "session {version}/tutorial {tutorial}/{mode} aborted after {} frames",
                        transcript.entries.len()
                    ));
                }
            }

            let records: Vec<_> = store
                .select(provider.name(), provider.model(), version, mode)
                .into_iter()
                .filter(|r| tutorials.contains(&r.tutorial))
                .collect();
            let rows =
                score_store_records(&manifest, &records, embedder.as_ref(), args.semantic_mode)?;
            let spec = SuiteSpec {
                provider: provider.name().to_string(),
                model: provider.model().to_string(),
                version: version.clone(),
                mode,
                tutorials: tutorials.clone(),
            };
            let suite = run_suite(&manifest, &spec, &records, &rows, &classifier)?;
            println!(
                "suite {}/{} {} {}: {} pass, {} needs-revision, {} fail",
                suite.provider,
                suite.model,
                suite.version,
                suite.mode,
                suite.question_counts.pass,
                suite.question_counts.needs_revision,
                suite.question_counts.fail
            );
            suites.push(suite);
            all_rows.extend(rows);
        }
    }

    write_scores(&args.out.join("scores.csv"), &all_rows)?;

    let mut report = Report::new(hash);
    report.suites = suites;
    report.diagnostics = diagnostics;
    let json_path = args.out.join("report.json");
    save_report(&json_path, &report)?;
    write_atomic(&args.out.join("report.md"), render_markdown(&report).as_bytes())?;
    println!("report: {}", json_path.display());

    Ok(gate_exit(&report.suites, args.gate))
}

fn gate_exit(suites: &[SuiteResult], level: GateLevel) -> ExitCode {
    if gate_passes(suites, level) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.corpus)?;
    let embedder = load_embedder(args.embedder.as_deref()).map_err(anyhow::Error::msg)?;
    let store = TranscriptStore::open(&args.transcripts)?;
    let records: Vec<_> = store
        .all_records()
        .into_iter()
        .filter(|r| args.versions.is_empty() || args.versions.contains(&r.version))
        .filter(|r| args.mode.is_none_or(|m| m == r.mode))
        .collect();
    if records.is_empty() {
        bail!("no transcript records matched the selection");
    }
    let rows = score_store_records(&manifest, &records, embedder.as_ref(), args.semantic_mode)?;
    write_scores(&args.out, &rows)?;
    println!("scored {} answers into {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let mut rows = read_scores(&args.scores)?;
    if let Some(model) = &args.model {
        rows.retain(|r| &r.model == model);
    }
    if rows.is_empty() {
        bail!("score table is empty");
    }
    let points: Vec<_> = rows.iter().map(ScoreRow::feature_point).collect();

    let artifact = match args.method {
        CalibrateMethod::Kmeans => {
            let model = kmeans_fit(&points, 3, args.seed)?;
            println!("fitted {} clusters on {} points (seed {})", model.k, points.len(), args.seed);
            for (centroid, class) in model.centroids.iter().zip(&model.centroid_classes) {
                println!("  {class}: centroid r2 {:.4}, bs {:.4}", centroid[0], centroid[1]);
            }
            CalibrationArtifact::Clusters { model, k_neighbors: args.k_neighbors }
        }
        CalibrateMethod::Otsu => {
            let r2_values: Vec<f64> = points.iter().map(|p| p.r2).collect();
            let bs_values: Vec<f64> = points.iter().map(|p| p.bs).collect();
            let r2_cuts = multi_otsu(&r2_values, 3, args.bins)?;
            let bs_cuts = multi_otsu(&bs_values, 3, args.bins)?;
            let thresholds = ThresholdSet {
                r2: FeatureBand { lower: r2_cuts[0], upper: r2_cuts[1] },
                bs: FeatureBand { lower: bs_cuts[0], upper: bs_cuts[1] },
            };
            thresholds.validate()?;
            let reference = ThresholdSet::reference();
            println!("fitted thresholds ({} bins) vs reference:", args.bins);
            println!(
                "  r2: {:.4}/{:.4}  (reference {:.4}/{:.4})",
                thresholds.r2.lower, thresholds.r2.upper, reference.r2.lower, reference.r2.upper
            );
            println!(
                "  bs: {:.4}/{:.4}  (reference {:.4}/{:.4})",
                thresholds.bs.lower, thresholds.bs.upper, reference.bs.lower, reference.bs.upper
            );
            CalibrationArtifact::Thresholds { thresholds, combiner: ClassCombiner::MostSevere }
        }
    };

    for delta in tokenization_spot_check(0.01) {
        println!("note: {delta}");
    }

    save_calibration(&args.out, &artifact)?;
    println!("calibration written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verdict(args: VerdictArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.corpus)?;
    let rows = read_scores(&args.scores)?;
    let store = TranscriptStore::open(&args.transcripts)?;
    let records = store.all_records();
    let classifier = args.classifier.load()?;

    // one suite per (provider, model, version, mode) present in the table
    let mut combos: Vec<(String, String, String, SessionMode)> = rows
        .iter()
        .map(|r| (r.provider.clone(), r.model.clone(), r.version.clone(), r.mode))
        .collect();
    combos.sort_by(|a, b| (&a.0, &a.1, &a.2, a.3.as_str()).cmp(&(&b.0, &b.1, &b.2, b.3.as_str())));
    combos.dedup();
    combos.retain(|(_, _, version, mode)| {
        (args.versions.is_empty() || args.versions.contains(version))
            && args.mode.is_none_or(|m| m == *mode)
    });
    if combos.is_empty() {
        bail!("no score rows matched the selection");
    }

    let mut report = Report::new(config_hash(&(
        &args.scores,
        &args.corpus,
        classifier.describe(),
    )));
    for (provider, model, version, mode) in combos {
        let spec = SuiteSpec {
            provider,
            model,
            version,
            mode,
            tutorials: args.tutorials.clone(),
        };
        let suite = run_suite(&manifest, &spec, &records, &rows, &classifier)?;
        println!(
            "suite {}/{} {} {}: {} pass, {} needs-revision, {} fail",
            suite.provider,
            suite.model,
            suite.version,
            suite.mode,
            suite.question_counts.pass,
            suite.question_counts.needs_revision,
            suite.question_counts.fail
        );
        report.suites.push(suite);
    }

    std::fs::create_dir_all(&args.out)?;
    save_report(&args.out.join("report.json"), &report)?;
    write_atomic(&args.out.join("report.md"), render_markdown(&report).as_bytes())?;
    Ok(gate_exit(&report.suites, args.gate))
}

fn print_comparison(cmp: &VersionComparison) {
    println!(
        "version comparison {} to {} ({}):",
        cmp.version_previous, cmp.version_latest, cmp.mode
    );
    if let Some(n) = cmp.common_question_count {
        println!("  common questions: {n}");
    }
    for cell in &cmp.cells {
        println!(
            "  {:<18} {:<10} {:.4} -> {:.4}  ({:+.2}%)",
            cell.model, cell.metric, cell.value_previous, cell.value_latest, cell.improvement_pct
        );
    }
    println!(
        "  improvement range: {:+.2}% ({} {}) to {:+.2}% ({} {})",
        cmp.min_improvement.improvement_pct,
        cmp.min_improvement.model,
        cmp.min_improvement.metric,
        cmp.max_improvement.improvement_pct,
        cmp.max_improvement.model,
        cmp.max_improvement.metric
    );
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let mut comparisons = Vec::new();
    if args.fixture {
        let table = reference_metric_table();
        for mode in args.mode.modes() {
            comparisons.push(version_comparison_from_table(
                &table,
                mode,
                &args.previous,
                &args.latest,
            )?);
        }
    } else {
        let scores_path = args.scores.as_ref().context("--scores required without --fixture")?;
        let corpus_path = args.corpus.as_ref().context("--corpus required without --fixture")?;
        let rows = read_scores(scores_path)?;
        let manifest = load_manifest(corpus_path)?;
        for mode in args.mode.modes() {
            comparisons.push(compare_versions(
                &rows,
                &manifest,
                mode,
                &args.previous,
                &args.latest,
            )?);
        }
    }
    for cmp in &comparisons {
        print_comparison(cmp);
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&comparisons)?;
        write_atomic(out, json.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_tutorials(summary: &TutorialSummary) {
    println!("tutorial clarity (mean / rank per metric):");
    println!("  tutorial  rouge1          rouge2          rouge_l         bert_score");
    for row in &summary.rows {
        let cells: Vec<String> = row
            .means
            .iter()
            .zip(&row.ranks)
            .map(|(m, r)| format!("{m:.4} (#{r})"))
            .collect();
        println!("  {:>8}  {}", row.tutorial, cells.join("   "));
    }
}

fn cmd_tutorials(args: TutorialsArgs) -> Result<ExitCode> {
    let summary = if args.fixture {
        tutorial_summary_from_means(&reference_tutorial_means())
    } else {
        let scores_path = args.scores.as_ref().context("--scores required without --fixture")?;
        let mut rows = read_scores(scores_path)?;
        rows.retain(|r| args.versions.is_empty() || args.versions.contains(&r.version));
        rows.retain(|r| args.mode.is_none_or(|m| m == r.mode));
        tutorial_means(&rows)?
    };
    print_tutorials(&summary);
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&summary)?;
        write_atomic(out, json.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_agreement(args: AgreementArgs) -> Result<ExitCode> {
    let mut rows = read_scores(&args.scores)?;
    rows.retain(|r| args.versions.is_empty() || args.versions.contains(&r.version));
    rows.retain(|r| args.mode.is_none_or(|m| m == r.mode));
    let matrix = model_agreement(&rows)?;
    println!("model agreement (mean Spearman across metrics):");
    print!("  {:<18}", "");
    for model in &matrix.models {
        print!(" {model:<16}");
    }
    println!();
    for (model, row) in matrix.models.iter().zip(&matrix.values) {
        print!("  {model:<18}");
        for value in row {
            print!(" {value:<16.4}");
        }
        println!();
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&matrix)?;
        write_atomic(out, json.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let report = load_report(&args.from)?;
    let markdown = render_markdown(&report);
    match &args.out {
        Some(path) => write_atomic(path, markdown.as_bytes())?,
        None => print!("{markdown}"),
    }
    Ok(ExitCode::SUCCESS)
}
