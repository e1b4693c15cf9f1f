//! `spinegrade` command-line front end.
//!
//! Exit status: 0 on success, 1 on validation errors (bad arguments, bad configuration,
//! missing inputs), 2 on data errors. Inputs are validated before any output is written.

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use spinegrade::evaluation::{evaluate, GradingView, Split, SplitAssignment};
use spinegrade::grading::{read_checkpoint, write_checkpoint, ToyModel};
use spinegrade::labels::LabelTable;
use spinegrade::phantom::{cohort_specs, generate_phantom, PhantomSpec};
use spinegrade::pipeline::{
    disc_rows, discover_studies, features_csv, label_table, predict_rows, predictions_csv,
    process_studies, read_features_csv, run_pipeline, segmentation_scores_csv, train_and_evaluate,
    DatasetRow, PipelineConfig, PipelineError, RunManifest, StudySource, StudySummary,
    TrainingSummary,
};
use spinegrade::report::{load_reports, parse_report};
use spinegrade::DiscLevel;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const OUT_ENV: &str = "SPINEGRADE_OUT";
const DEFAULT_OUT: &str = "spinegrade-out";

#[derive(Parser, Debug)]
#[command(
    name = "spinegrade",
    version,
    about = "Lumbar stenosis labeling, disc extraction and grading toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract per-level stenosis grades from free-text reports.
    ParseReports(ParseReportsArgs),
    /// Label vertebrae from detector masks and score them against truth centroids.
    SegmentScore(StudyArgs),
    /// Fit the spine curve and resample axial and sagittal volumes per disc.
    ExtractDiscs(StudyArgs),
    /// Generate synthetic phantom studies.
    PhantomGen(PhantomGenArgs),
    /// Train the toy grading model on a features table.
    TrainToy(TrainToyArgs),
    /// Evaluate a trained model on a features table.
    Evaluate(EvaluateArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct ParseReportsArgs {
    /// Report directory, `.tsv` record file or single report.
    input: PathBuf,
    /// Output CSV [default: $SPINEGRADE_OUT/labels.csv].
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// A study directory or a directory of study directories.
    input: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Pipeline configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct PhantomGenArgs {
    /// Phantom specification TOML; built-in defaults when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    studies: usize,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainToyArgs {
    /// Features table as written by `extract-discs` or `pipeline`.
    features: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Features table; rows in the test split are evaluated when a split is known.
    features: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Split assignment; defaults to the split column of the features table.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, conflicts_with = "binary")]
    merge_mild_moderate: bool,
    #[arg(long)]
    binary: bool,
    /// Restrict per-level metrics to these levels, e.g. `--level L4-L5`.
    #[arg(long = "level")]
    levels: Vec<DiscLevel>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["phantom", "data"])))]
struct PipelineArgs {
    /// Phantom specification TOML; a cohort of `--studies` phantoms is generated in memory.
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    studies: usize,
    /// Directory of study directories.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    write_disc_volumes: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn validation(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            validation(e)
        } else {
            data(e)
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(validation(anyhow!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| data(anyhow!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, content: impl AsRef<[u8]>, manifest: &mut RunManifest) -> CliResult {
    std::fs::write(path, content).map_err(|e| data(anyhow!("{}: {e}", path.display())))?;
    manifest.outputs.push(path.display().to_string());
    Ok(())
}

fn finish(mut manifest: RunManifest, path: &Path, started: Instant) -> CliResult {
    manifest
        .timings_s
        .insert("total".into(), started.elapsed().as_secs_f64());
    manifest.write(path).map_err(data)
}

fn parse_reports(args: ParseReportsArgs) -> CliResult {
    let started = Instant::now();
    require(&args.input)?;
    let output = args
        .output
        .unwrap_or_else(|| out_dir(None).join("labels.csv"));
    let records = load_reports(&args.input).map_err(data)?;
    let mut table = LabelTable::new();
    let mut diagnostics = serde_json::Map::new();
    for record in &records {
        let parsed = parse_report(&record.text);
        table.add_report(&record.study_id, &parsed);
        diagnostics.insert(record.study_id.clone(), json!(parsed.diagnostics));
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut manifest = RunManifest::new(
        "parse-reports",
        &json!({ "input": args.input, "output": output }),
    );
    manifest.inputs.push(args.input.display().to_string());
    write_file(&output, table.to_csv_string(), &mut manifest)?;
    let diag_path = output.with_extension("diagnostics.json");
    write_file(
        &diag_path,
        serde_json::to_string_pretty(&diagnostics).map_err(data)?,
        &mut manifest,
    )?;
    eprintln!(
        "parsed {} reports into {} labeled levels",
        records.len(),
        table.len()
    );
    finish(manifest, &output.with_extension("manifest.json"), started)
}

fn study_sources(input: &Path) -> CliResult<Vec<StudySource>> {
    Ok(discover_studies(input)?
        .into_iter()
        .map(StudySource::Directory)
        .collect())
}

fn segment_score(args: StudyArgs) -> CliResult {
    let started = Instant::now();
    require(&args.input)?;
    let mut config = load_config(args.config.as_deref())?;
    if let Some(j) = args.jobs {
        config.jobs = j;
    }
    let sources = study_sources(&args.input)?;
    let outcomes = process_studies(&sources, &config, None)?;
    let out = out_dir(args.out);
    create_dir(&out)?;
    let mut manifest = RunManifest::new("segment-score", &config);
    manifest.inputs = sources.iter().map(StudySource::describe).collect();
    write_file(
        &out.join("segmentation_scores.csv"),
        segmentation_scores_csv(&outcomes),
        &mut manifest,
    )?;
    let detail: Vec<_> = outcomes
        .iter()
        .map(|o| {
            json!({
                "study_id": o.study_id,
                "score": o.score,
                "centroids": o.geometry.as_ref().map(|g| g.segmentation.centroids()),
                "curve": o.geometry.as_ref().map(|g| &g.curve),
                "failure": o.failure,
            })
        })
        .collect();
    write_file(
        &out.join("segmentation.json"),
        serde_json::to_string_pretty(&detail).map_err(data)?,
        &mut manifest,
    )?;
    let scored: Vec<_> = outcomes.iter().filter_map(|o| o.score.as_ref()).collect();
    let ok = scored.iter().filter(|s| s.success).count();
    eprintln!(
        "{ok}/{} scored studies met all detection criteria",
        scored.len()
    );
    finish(manifest, &out.join("manifest.json"), started)
}

fn extract_discs(args: StudyArgs) -> CliResult {
    let started = Instant::now();
    require(&args.input)?;
    let mut config = load_config(args.config.as_deref())?;
    if let Some(j) = args.jobs {
        config.jobs = j;
    }
    let sources = study_sources(&args.input)?;
    let out = out_dir(args.out);
    create_dir(&out)?;
    let outcomes = process_studies(&sources, &config, Some(&out.join("discs")))?;
    let labels = label_table(&outcomes);
    let rows = disc_rows(&outcomes, &labels);
    let mut manifest = RunManifest::new("extract-discs", &config);
    manifest.inputs = sources.iter().map(StudySource::describe).collect();
    manifest
        .outputs
        .push(out.join("discs").display().to_string());
    write_file(
        &out.join("features.csv"),
        features_csv(&rows, None),
        &mut manifest,
    )?;
    write_file(
        &out.join("labels.csv"),
        labels.to_csv_string(),
        &mut manifest,
    )?;
    let summary: Vec<StudySummary> = outcomes.iter().map(StudySummary::from).collect();
    write_file(
        &out.join("studies.json"),
        serde_json::to_string_pretty(&summary).map_err(data)?,
        &mut manifest,
    )?;
    eprintln!(
        "extracted {} discs from {} studies",
        rows.len(),
        outcomes.len()
    );
    finish(manifest, &out.join("manifest.json"), started)
}

fn phantom_specs(
    spec: Option<&Path>,
    studies: usize,
    seed: Option<u64>,
) -> CliResult<(PhantomSpec, Vec<PhantomSpec>)> {
    let mut base = match spec {
        Some(p) => {
            require(p)?;
            PhantomSpec::load(p).map_err(validation)?
        }
        None => PhantomSpec::default(),
    };
    if let Some(s) = seed {
        base.seed = s;
    }
    if studies == 0 {
        return Err(validation(anyhow!("--studies must be at least 1")));
    }
    let specs = if studies == 1 {
        vec![base.clone()]
    } else {
        cohort_specs(&base, studies)
    };
    Ok((base, specs))
}

fn phantom_gen(args: PhantomGenArgs) -> CliResult {
    let started = Instant::now();
    let (base, specs) = phantom_specs(args.spec.as_deref(), args.studies, args.seed)?;
    let out = out_dir(args.out);
    let phantoms = specs
        .iter()
        .map(generate_phantom)
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    create_dir(&out)?;
    let mut manifest = RunManifest::new(
        "phantom-gen",
        &json!({ "spec": base, "studies": args.studies }),
    );
    if let Some(p) = &args.spec {
        manifest.inputs.push(p.display().to_string());
    }
    for p in &phantoms {
        let dir = out.join(&p.spec.study_id);
        p.write_to_dir(&dir).map_err(data)?;
        manifest.outputs.push(dir.display().to_string());
    }
    eprintln!(
        "wrote {} phantom studies to {}",
        phantoms.len(),
        out.display()
    );
    finish(manifest, &out.join("manifest.json"), started)
}

fn read_features(path: &Path) -> CliResult<Vec<spinegrade::pipeline::FeatureRecord>> {
    require(path)?;
    let text =
        std::fs::read_to_string(path).map_err(|e| data(anyhow!("{}: {e}", path.display())))?;
    Ok(read_features_csv(&text)?)
}

fn train_toy(args: TrainToyArgs) -> CliResult {
    let started = Instant::now();
    let records = read_features(&args.features)?;
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let rows: Vec<DatasetRow> = records
        .into_iter()
        .map(|r| r.row)
        .filter(|r| !r.targets.is_empty())
        .collect();
    let run = train_and_evaluate(&rows, &config)?;
    let out = out_dir(args.out);
    create_dir(&out)?;
    let mut manifest = RunManifest::new("train-toy", &config);
    manifest.inputs.push(args.features.display().to_string());
    let ckpt = out.join("model.spnc");
    write_checkpoint(&run.model.to_checkpoint(), &ckpt).map_err(data)?;
    manifest.outputs.push(ckpt.display().to_string());
    write_file(&out.join("split.json"), run.split.to_json(), &mut manifest)?;
    write_file(
        &out.join("features.csv"),
        features_csv(&rows, Some(&run.split)),
        &mut manifest,
    )?;
    let summary = TrainingSummary {
        loss_history: run.training.loss_history.clone(),
        class_weights: run.weights,
        samples: run.training.samples,
        steps: run.training.steps,
    };
    write_file(
        &out.join("training.json"),
        serde_json::to_string_pretty(&summary).map_err(data)?,
        &mut manifest,
    )?;
    write_file(
        &out.join("test_predictions.csv"),
        predictions_csv(&run.predictions),
        &mut manifest,
    )?;
    eprintln!(
        "trained on {} samples, final loss {:.4}",
        run.training.samples,
        run.training
            .loss_history
            .last()
            .copied()
            .unwrap_or(f64::NAN)
    );
    finish(manifest, &out.join("manifest.json"), started)
}

fn evaluate_cmd(args: EvaluateArgs) -> CliResult {
    let started = Instant::now();
    require(&args.model)?;
    if let Some(p) = &args.split {
        require(p)?;
    }
    let records = read_features(&args.features)?;
    let config = load_config(args.config.as_deref())?;
    let mut options = config.evaluation.clone();
    options.view = if args.binary {
        GradingView::Binary
    } else if args.merge_mild_moderate {
        GradingView::MergedMildModerate
    } else {
        options.view
    };
    if !args.levels.is_empty() {
        options.levels = args.levels.clone();
    }
    if let Some(t) = args.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(validation(anyhow!("--threshold {t} outside (0, 1)")));
        }
        options.threshold = t;
    }
    if let Some(b) = args.bootstrap {
        options.bootstrap_resamples = b;
    }
    let split: Option<SplitAssignment> = match &args.split {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| data(anyhow!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| data(anyhow!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let model =
        ToyModel::from_checkpoint(&read_checkpoint(&args.model).map_err(data)?).map_err(data)?;
    let any_recorded = records.iter().any(|r| r.split.is_some());
    let selected: Vec<&DatasetRow> = records
        .iter()
        .filter(|r| !r.row.targets.is_empty())
        .filter(|r| match &split {
            Some(s) => s.split_of(&r.row.study_id, r.row.level) == Some(Split::Test),
            None if any_recorded => r.split == Some(Split::Test),
            None => true,
        })
        .map(|r| &r.row)
        .collect();
    if selected.is_empty() {
        return Err(data(anyhow!("no labeled rows to evaluate")));
    }
    let predictions = predict_rows(&model, &selected)?;
    let mut report = evaluate(&predictions, &options);
    report.split_mode = split.as_ref().map(|s| s.mode);
    let out = out_dir(args.out);
    create_dir(&out)?;
    let mut manifest = RunManifest::new(
        "evaluate",
        &json!({ "evaluation": options, "model": args.model }),
    );
    manifest.inputs.push(args.features.display().to_string());
    manifest.inputs.push(args.model.display().to_string());
    if let Some(p) = &args.split {
        manifest.inputs.push(p.display().to_string());
    }
    write_file(&out.join("metrics.json"), report.to_json(), &mut manifest)?;
    write_file(&out.join("metrics.txt"), report.to_text(), &mut manifest)?;
    write_file(
        &out.join("predictions.csv"),
        predictions_csv(&predictions),
        &mut manifest,
    )?;
    eprint!("{}", report.to_text());
    finish(manifest, &out.join("manifest.json"), started)
}

fn pipeline(args: PipelineArgs) -> CliResult {
    let started = Instant::now();
    let mut config = load_config(args.config.as_deref())?;
    if let Some(j) = args.jobs {
        config.jobs = j;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.write_disc_volumes |= args.write_disc_volumes;
    let (sources, phantom) = match (&args.phantom, &args.data) {
        (Some(spec), _) => {
            let (base, specs) = phantom_specs(Some(spec), args.studies, None)?;
            (
                specs.into_iter().map(StudySource::Phantom).collect(),
                Some(base),
            )
        }
        (None, Some(dir)) => {
            require(dir)?;
            (study_sources(dir)?, None)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let out = out_dir(args.out);
    let run = run_pipeline(&sources, &config, &out)?;
    let mut manifest = RunManifest::new(
        "pipeline",
        &json!({ "pipeline": config, "phantom": phantom, "studies": sources.len() }),
    );
    manifest.inputs = sources.iter().map(StudySource::describe).collect();
    manifest.outputs = run
        .outputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    manifest.timings_s = run.timings.clone();
    write_file(
        &out.join("config.toml"),
        config.to_toml_string(),
        &mut manifest,
    )?;
    if let Some(m) = &run.model {
        eprint!("{}", m.metrics.to_text());
    }
    let failed = run.outcomes.iter().filter(|o| o.failure.is_some()).count();
    eprintln!(
        "{} studies, {} failed geometry, {} labeled discs",
        run.outcomes.len(),
        failed,
        run.rows.len()
    );
    finish(manifest, &out.join("manifest.json"), started)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::ParseReports(a) => parse_reports(a),
        Command::SegmentScore(a) => segment_score(a),
        Command::ExtractDiscs(a) => extract_discs(a),
        Command::PhantomGen(a) => phantom_gen(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
