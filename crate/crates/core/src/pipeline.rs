//! Stage functions chaining report parsing, segmentation, curve fitting, disc
//! extraction, feature pooling, toy training and evaluation over a set of studies.
//!
//! A study directory holds `sagittal.spnv`, `lumbar_mask.spnv`, `sacral_mask.spnv` and
//! optionally `report.txt` and `truth_centroids.csv`, the layout written by the phantom
//! generator.

use crate::anatomy::{DiscLevel, Grade, Site, Vertebra};
use crate::curve::{
    build_frames, fit_spine_curve, locate_discs, CurveError, DiscFrame, SpineCurve, DEFAULT_DEGREE,
};
use crate::evaluation::{
    evaluate, split_dataset, DiscPrediction, EvaluationError, EvaluationOptions, MetricReport,
    Split, SplitAssignment, SplitMode, DEFAULT_RATIOS,
};
use crate::grading::{
    class_weights, ClassWeights, GradingError, OneHotTargets, ToyModel, TrainConfig, TrainReport,
    CLASSES, TASKS,
};
use crate::labels::LabelTable;
use crate::phantom::{generate_phantom, read_truth_centroids, PhantomError, PhantomSpec};
use crate::report::{parse_report, ParsedReport};
use crate::resample::{resample_disc_volume, DiscVolumePair, ResampleError};
use crate::segmentation::{
    segment_masks, success_criteria, SegmentationConfig, SegmentationError, SegmentationScore,
    VertebraSegmentation,
};
use crate::volume::{read_mask, read_volume, write_volume, MaskVolume, Volume3D, VolumeError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const VOLUME_FILE: &str = "sagittal.spnv";
pub const LUMBAR_MASK_FILE: &str = "lumbar_mask.spnv";
pub const SACRAL_MASK_FILE: &str = "sacral_mask.spnv";
pub const REPORT_FILE: &str = "report.txt";
pub const TRUTH_CENTROIDS_FILE: &str = "truth_centroids.csv";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: not found", .0.display())]
    MissingInput(PathBuf),
    #[error("no study directories under {}", .0.display())]
    NoStudies(PathBuf),
    #[error("{}: {source}", path.display())]
    Volume { path: PathBuf, source: VolumeError },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Grading(#[from] GradingError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("{0}")]
    Table(String),
    #[error("no usable training data: {0}")]
    NoTrainingData(String),
}

impl PipelineError {
    /// Configuration and missing-input failures, as opposed to problems with the data.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::MissingInput(_) | PipelineError::NoStudies(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Patch placement for disc features, in axial-frame millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Left–right distance of the foraminal patches from the disc point.
    pub foramen_offset_mm: f64,
    pub patch_radius_mm: f64,
    /// Half-thickness of the slab of axial slices pooled around the disc plane.
    pub slab_half_thickness_mm: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            foramen_offset_mm: 12.0,
            patch_radius_mm: 2.5,
            slab_half_thickness_mm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub curve_degree: usize,
    pub features: FeatureConfig,
    pub split_ratios: [f64; 3],
    pub split_mode: SplitMode,
    pub seed: u64,
    pub train: TrainConfig,
    pub evaluation: EvaluationOptions,
    /// Worker threads for per-study stages; 0 uses every core.
    pub jobs: usize,
    /// Train only on studies whose report grades all six levels.
    pub require_complete_reports: bool,
    /// Also write every resampled disc volume.
    pub write_disc_volumes: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            segmentation: SegmentationConfig::default(),
            curve_degree: DEFAULT_DEGREE,
            features: FeatureConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            split_mode: SplitMode::Study,
            seed: 42,
            train: TrainConfig {
                epochs: 400,
                ..TrainConfig::default()
            },
            evaluation: EvaluationOptions::default(),
            jobs: 0,
            require_complete_reports: true,
            write_disc_volumes: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingInput(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let seg = &self.segmentation;
        if !(seg.threshold > 0.0 && seg.threshold < 1.0) {
            return bad(format!(
                "segmentation threshold {} outside (0, 1)",
                seg.threshold
            ));
        }
        if !(seg.min_area_mm2 >= 0.0) {
            return bad("min_area_mm2 must be non-negative".into());
        }
        if self.curve_degree < 2 {
            return bad(format!("curve degree {} below 2", self.curve_degree));
        }
        let f = &self.features;
        if !(f.patch_radius_mm > 0.0
            && f.slab_half_thickness_mm >= 0.0
            && f.foramen_offset_mm.is_finite())
        {
            return bad("feature patch sizes must be positive".into());
        }
        let r = self.split_ratios;
        if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {r:?} must be positive and sum to 1"));
        }
        let e = &self.evaluation;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return bad(format!("binary threshold {} outside (0, 1)", e.threshold));
        }
        if e.levels.is_empty() {
            return bad("evaluation needs at least one level".into());
        }
        self.train
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Everything a study contributes to the pipeline.
pub struct StudyInputs {
    pub study_id: String,
    pub volume: Volume3D,
    pub lumbar: MaskVolume,
    pub sacral: MaskVolume,
    pub report: Option<String>,
    pub truth_centroids: Option<Vec<(Vertebra, [f64; 2])>>,
}

/// Where a study comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum StudySource {
    Directory(PathBuf),
    Phantom(PhantomSpec),
}

impl StudySource {
    pub fn load(&self) -> Result<StudyInputs, PipelineError> {
        match self {
            StudySource::Directory(dir) => load_study(dir),
            StudySource::Phantom(spec) => {
                let p = generate_phantom(spec)?;
                Ok(StudyInputs {
                    study_id: spec.study_id.clone(),
                    volume: p.volume,
                    lumbar: p.lumbar_mask,
                    sacral: p.sacral_mask,
                    report: Some(p.report),
                    truth_centroids: Some(p.truth_centroids),
                })
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            StudySource::Directory(d) => d.display().to_string(),
            StudySource::Phantom(s) => format!("phantom:{}:seed={}", s.study_id, s.seed),
        }
    }
}

fn read_required_volume(path: &Path) -> Result<Volume3D, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    read_volume(path).map_err(|source| PipelineError::Volume {
        path: path.to_path_buf(),
        source,
    })
}

fn read_required_mask(path: &Path) -> Result<MaskVolume, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    read_mask(path).map_err(|source| PipelineError::Volume {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_study(dir: &Path) -> Result<StudyInputs, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::MissingInput(dir.to_path_buf()));
    }
    let study_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let report_path = dir.join(REPORT_FILE);
    let report = if report_path.exists() {
        Some(std::fs::read_to_string(&report_path).map_err(io_err(&report_path))?)
    } else {
        None
    };
    let truth_path = dir.join(TRUTH_CENTROIDS_FILE);
    let truth_centroids = if truth_path.exists() {
        let text = std::fs::read_to_string(&truth_path).map_err(io_err(&truth_path))?;
        Some(read_truth_centroids(&text)?)
    } else {
        None
    };
    Ok(StudyInputs {
        study_id,
        volume: read_required_volume(&dir.join(VOLUME_FILE))?,
        lumbar: read_required_mask(&dir.join(LUMBAR_MASK_FILE))?,
        sacral: read_required_mask(&dir.join(SACRAL_MASK_FILE))?,
        report,
        truth_centroids,
    })
}

/// Study directories directly under `root`, sorted by name.
pub fn discover_studies(root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if !root.is_dir() {
        return Err(PipelineError::MissingInput(root.to_path_buf()));
    }
    if root.join(VOLUME_FILE).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(VOLUME_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(PipelineError::NoStudies(root.to_path_buf()));
    }
    Ok(dirs)
}

/// Segmentation, fitted curve and disc frames of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGeometry {
    pub segmentation: VertebraSegmentation,
    pub curve: SpineCurve,
    pub discs: Vec<DiscFrame>,
}

/// Labels the masks, fits the spine curve and builds a frame per disc. The mask slice's
/// `z` origin is the mid-sagittal position; left–right is world `z`.
pub fn study_geometry(
    lumbar: &MaskVolume,
    sacral: &MaskVolume,
    config: &PipelineConfig,
) -> Result<StudyGeometry, PipelineError> {
    let segmentation = segment_masks(lumbar, sacral, &config.segmentation)?;
    if let Some(v) = segmentation.sacral_overlap() {
        return Err(SegmentationError::OverlapS1Lumbar(v).into());
    }
    let points: Vec<[f64; 2]> = segmentation
        .vertebrae
        .iter()
        .map(|v| v.centroid())
        .collect();
    let curve = fit_spine_curve(&points, config.curve_degree)?;
    let lr_center = lumbar.origin()[2] as f64;
    let discs = locate_discs(&segmentation, &curve)?
        .iter()
        .map(|loc| build_frames(loc, [0.0, 0.0, 1.0], lr_center))
        .collect();
    Ok(StudyGeometry {
        segmentation,
        curve,
        discs,
    })
}

/// Mean intensity of the canal, right and left patches of a normalized axial volume.
pub fn disc_features(axial: &Volume3D, cfg: &FeatureConfig) -> [f64; TASKS] {
    let centres = [0.0, cfg.foramen_offset_mm, -cfg.foramen_offset_mm];
    let o = axial.origin().map(|v| v as f64);
    let s = axial.spacing().map(|v| v as f64);
    let dims = axial.dims();
    let r = cfg.patch_radius_mm;
    let slab = cfg.slab_half_thickness_mm + 1e-9;
    let range = |axis: usize, lo: f64, hi: f64| {
        let a = ((lo - o[axis]) / s[axis]).ceil().max(0.0) as usize;
        let b = ((hi - o[axis]) / s[axis])
            .floor()
            .min(dims[axis] as f64 - 1.0);
        a..=(b.max(-1.0) as isize).max(a as isize - 1) as usize
    };
    centres.map(|c| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for k in range(2, -slab, slab) {
            for j in range(1, c - r, c + r) {
                for i in range(0, -r, r) {
                    let p = axial.position(i, j, k);
                    if p[0] * p[0] + (p[1] - c) * (p[1] - c) <= r * r {
                        sum += axial.get(i, j, k) as f64;
                        n += 1;
                    }
                }
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscRecord {
    pub study_id: String,
    pub level: DiscLevel,
    pub features: Vec<f64>,
    pub frame: DiscFrame,
    pub axial_out_of_bounds: usize,
    pub sagittal_out_of_bounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub study_id: String,
    pub report: Option<ParsedReport>,
    pub score: Option<SegmentationScore>,
    pub geometry: Option<StudyGeometry>,
    pub discs: Vec<DiscRecord>,
    /// Why the study could not contribute discs, if it could not.
    pub failure: Option<String>,
    pub notes: Vec<String>,
}

/// Frame origin and axes of a disc volume, at full precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscVolumeSidecar {
    pub study_id: String,
    pub frame: DiscFrame,
    pub axial_mean_removed: f64,
    pub sagittal_mean_removed: f64,
    pub axial_out_of_bounds: usize,
    pub sagittal_out_of_bounds: usize,
}

pub fn write_disc_volumes(
    dir: &Path,
    study_id: &str,
    frame: &DiscFrame,
    pair: &DiscVolumePair,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = format!("{study_id}_{}", pair.level);
    for (suffix, vol) in [("axial", &pair.axial), ("sagittal", &pair.sagittal)] {
        let path = dir.join(format!("{stem}_{suffix}.spnv"));
        write_volume(vol, &path).map_err(|source| PipelineError::Volume { path, source })?;
    }
    let sidecar = DiscVolumeSidecar {
        study_id: study_id.to_string(),
        frame: *frame,
        axial_mean_removed: pair.axial_mean,
        sagittal_mean_removed: pair.sagittal_mean,
        axial_out_of_bounds: pair.axial_out_of_bounds,
        sagittal_out_of_bounds: pair.sagittal_out_of_bounds,
    };
    let path = dir.join(format!("{stem}_frame.json"));
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(io_err(&path))
}

/// Runs every per-study stage. Failures are recorded in the outcome, not returned.
pub fn process_study(
    inputs: &StudyInputs,
    config: &PipelineConfig,
    volume_dir: Option<&Path>,
) -> StudyOutcome {
    let mut outcome = StudyOutcome {
        study_id: inputs.study_id.clone(),
        report: inputs.report.as_deref().map(parse_report),
        score: None,
        geometry: None,
        discs: Vec::new(),
        failure: None,
        notes: Vec::new(),
    };
    if let Some(truth) = &inputs.truth_centroids {
        match segment_masks(&inputs.lumbar, &inputs.sacral, &config.segmentation) {
            Ok(seg) => outcome.score = Some(success_criteria(&seg, truth)),
            Err(e) => outcome.notes.push(format!("scoring skipped: {e}")),
        }
    }
    let geometry = match study_geometry(&inputs.lumbar, &inputs.sacral, config) {
        Ok(g) => g,
        Err(e) => {
            outcome.failure = Some(e.to_string());
            return outcome;
        }
    };
    for frame in &geometry.discs {
        let level = frame.location.level;
        match resample_disc_volume(&inputs.volume, frame) {
            Ok(pair) => {
                if let Some(dir) = volume_dir {
                    if let Err(e) = write_disc_volumes(dir, &inputs.study_id, frame, &pair) {
                        outcome.notes.push(format!("{level}: {e}"));
                    }
                }
                outcome.discs.push(DiscRecord {
                    study_id: inputs.study_id.clone(),
                    level,
                    features: disc_features(&pair.axial, &config.features).to_vec(),
                    frame: *frame,
                    axial_out_of_bounds: pair.axial_out_of_bounds,
                    sagittal_out_of_bounds: pair.sagittal_out_of_bounds,
                });
            }
            Err(e) => outcome.notes.push(format!("{level}: {e}")),
        }
    }
    outcome.geometry = Some(geometry);
    outcome
}

/// Labels from every parsed report, keyed by study.
pub fn label_table(outcomes: &[StudyOutcome]) -> LabelTable {
    let mut table = LabelTable::new();
    for o in outcomes {
        if let Some(r) = &o.report {
            table.add_report(&o.study_id, r);
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub study_id: String,
    pub level: DiscLevel,
    pub features: Vec<f64>,
    pub targets: OneHotTargets,
}

/// Joins extracted discs with their labels. Discs without any label are dropped, as are
/// studies with incomplete reports when `require_complete` is set.
pub fn build_dataset(
    outcomes: &[StudyOutcome],
    labels: &LabelTable,
    require_complete: bool,
) -> Vec<DatasetRow> {
    outcomes
        .iter()
        .flat_map(|o| o.discs.iter())
        .filter_map(|d| {
            let row = labels.get(&d.study_id, d.level)?;
            if require_complete && !row.complete {
                return None;
            }
            let targets = OneHotTargets::from_labels(&row.labels);
            (!targets.is_empty() && d.features.iter().all(|f| f.is_finite())).then(|| DatasetRow {
                study_id: d.study_id.clone(),
                level: d.level,
                features: d.features.clone(),
                targets,
            })
        })
        .collect()
}

pub fn split_rows(
    rows: &[DatasetRow],
    config: &PipelineConfig,
) -> Result<SplitAssignment, PipelineError> {
    let ids: Vec<String> = match config.split_mode {
        SplitMode::Study => rows.iter().map(|r| r.study_id.clone()).collect(),
        SplitMode::Disc => rows
            .iter()
            .map(|r| SplitAssignment::disc_key(&r.study_id, r.level))
            .collect(),
    };
    let mut split = split_dataset(&ids, config.split_ratios, config.seed)?;
    split.mode = config.split_mode;
    Ok(split)
}

fn training_counts(rows: &[&DatasetRow]) -> [[u64; CLASSES]; TASKS] {
    let mut counts = [[0u64; CLASSES]; TASKS];
    for r in rows {
        for site in Site::ALL {
            if let Some(g) = r.targets.0[site.index()] {
                counts[site.index()][g.index()] += 1;
            }
        }
    }
    counts
}

pub struct ModelRun {
    pub split: SplitAssignment,
    pub weights: ClassWeights,
    pub model: ToyModel,
    pub training: TrainReport,
    /// Predictions on the test split.
    pub predictions: Vec<DiscPrediction>,
    pub metrics: MetricReport,
}

pub fn predict_rows(
    model: &ToyModel,
    rows: &[&DatasetRow],
) -> Result<Vec<DiscPrediction>, PipelineError> {
    rows.iter()
        .map(|r| {
            Ok(DiscPrediction {
                study_id: r.study_id.clone(),
                level: r.level,
                probabilities: model.predict(&r.features)?,
                truth: r.targets,
            })
        })
        .collect()
}

/// Splits, weights classes on the training portion, trains the toy model and evaluates
/// it on the test portion.
pub fn train_and_evaluate(
    rows: &[DatasetRow],
    config: &PipelineConfig,
) -> Result<ModelRun, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::NoTrainingData(
            "no labeled discs were extracted".into(),
        ));
    }
    let split = split_rows(rows, config)?;
    let part = |want: Split| -> Vec<&DatasetRow> {
        rows.iter()
            .filter(|r| split.split_of(&r.study_id, r.level) == Some(want))
            .collect()
    };
    let train = part(Split::Train);
    let test = part(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(PipelineError::NoTrainingData(format!(
            "split left {} training and {} test discs",
            train.len(),
            test.len()
        )));
    }
    let weights = class_weights(&training_counts(&train))?;
    let xs: Vec<Vec<f64>> = train.iter().map(|r| r.features.clone()).collect();
    let ys: Vec<OneHotTargets> = train.iter().map(|r| r.targets).collect();
    let mut model = ToyModel::from_config(xs[0].len(), &config.train);
    let training = model.train(&xs, &ys, &weights, &config.train)?;
    let predictions = predict_rows(&model, &test)?;
    let mut metrics = evaluate(&predictions, &config.evaluation);
    metrics.split_mode = Some(split.mode);
    Ok(ModelRun {
        split,
        weights,
        model,
        training,
        predictions,
        metrics,
    })
}

/// Per-stage wall-clock seconds.
pub type Timings = BTreeMap<String, f64>;

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_s: Timings,
    pub started_unix_s: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        RunManifest {
            tool: "spinegrade".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments: std::env::args().skip(1).collect(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: Timings::new(),
            started_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
        .map_err(io_err(path))
    }
}

pub fn segmentation_scores_csv(outcomes: &[StudyOutcome]) -> String {
    let mut s = String::from("study_id,label,dice,centroid_err_mm,success,reason\n");
    for o in outcomes {
        let Some(score) = &o.score else { continue };
        let reason = score.failure_reason.map(|r| r.name()).unwrap_or("");
        let errors: BTreeMap<Vertebra, f64> = score
            .centroid_errors
            .as_ref()
            .map(|e| e.per_vertebra.iter().copied().collect())
            .unwrap_or_default();
        for v in Vertebra::ALL {
            let dice = if v.is_sacral() {
                score.dice_sacral
            } else {
                score.dice_lumbar
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                o.study_id,
                v,
                dice.map(|d| d.to_string()).unwrap_or_default(),
                errors.get(&v).map(|e| e.to_string()).unwrap_or_default(),
                score.success,
                reason
            );
        }
    }
    s
}

pub fn features_csv(rows: &[DatasetRow], split: Option<&SplitAssignment>) -> String {
    let width = rows.first().map_or(0, |r| r.features.len());
    let mut s = String::from("study_id,level");
    for k in 0..width {
        let _ = write!(s, ",f{k}");
    }
    s.push_str(",scs,rfs,lfs,split\n");
    for r in rows {
        let _ = write!(s, "{},{}", r.study_id, r.level);
        for f in &r.features {
            let _ = write!(s, ",{f}");
        }
        for g in r.targets.0 {
            let _ = write!(s, ",{}", g.map(|g| g.to_string()).unwrap_or_default());
        }
        let part = split
            .and_then(|sp| sp.split_of(&r.study_id, r.level))
            .map_or("", Split::name);
        let _ = writeln!(s, ",{part}");
    }
    s
}

/// A `features.csv` row and its recorded split, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub row: DatasetRow,
    pub split: Option<Split>,
}

/// Reads the table written by [`features_csv`].
pub fn read_features_csv(text: &str) -> Result<Vec<FeatureRecord>, PipelineError> {
    let bad =
        |line: usize, msg: String| PipelineError::Table(format!("features line {line}: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let width = header.len().saturating_sub(6);
    let expected: Vec<String> = ["study_id", "level"]
        .into_iter()
        .map(String::from)
        .chain((0..width).map(|k| format!("f{k}")))
        .chain(["scs", "rfs", "lfs", "split"].into_iter().map(String::from))
        .collect();
    if header != expected {
        return Err(bad(1, format!("header {header:?}, expected {expected:?}")));
    }
    let mut out = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        let level: DiscLevel = record[1]
            .parse()
            .map_err(|_| bad(line, format!("level {:?}", &record[1])))?;
        let features = (0..width)
            .map(|k| {
                let v = &record[2 + k];
                v.parse::<f64>()
                    .map_err(|_| bad(line, format!("feature {v:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut targets = OneHotTargets([None; TASKS]);
        for t in 0..TASKS {
            let v = &record[2 + width + t];
            if !v.is_empty() {
                let g = v
                    .parse::<u8>()
                    .ok()
                    .and_then(Grade::new)
                    .ok_or_else(|| bad(line, format!("grade {v:?}")))?;
                targets.0[t] = Some(g);
            }
        }
        let split_field = &record[5 + width];
        let split = if split_field.is_empty() {
            None
        } else {
            Some(
                Split::from_name(split_field)
                    .ok_or_else(|| bad(line, format!("split {split_field:?}")))?,
            )
        };
        out.push(FeatureRecord {
            row: DatasetRow {
                study_id: record[0].to_string(),
                level,
                features,
                targets,
            },
            split,
        });
    }
    Ok(out)
}

/// Every extracted disc with whatever labels its report gave, including none.
pub fn disc_rows(outcomes: &[StudyOutcome], labels: &LabelTable) -> Vec<DatasetRow> {
    outcomes
        .iter()
        .flat_map(|o| o.discs.iter())
        .map(|d| DatasetRow {
            study_id: d.study_id.clone(),
            level: d.level,
            features: d.features.clone(),
            targets: labels
                .get(&d.study_id, d.level)
                .map_or(OneHotTargets([None; TASKS]), |row| {
                    OneHotTargets::from_labels(&row.labels)
                }),
        })
        .collect()
}

pub fn predictions_csv(predictions: &[DiscPrediction]) -> String {
    let mut s = String::from("study_id,level,site,truth");
    for g in 0..CLASSES {
        let _ = write!(s, ",p{g}");
    }
    s.push('\n');
    for p in predictions {
        for site in Site::ALL {
            let truth = p.truth.0[site.index()]
                .map(|g| g.to_string())
                .unwrap_or_default();
            let _ = write!(s, "{},{},{},{}", p.study_id, p.level, site, truth);
            for v in p.probabilities.task(site) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub loss_history: Vec<f64>,
    pub class_weights: ClassWeights,
    pub samples: usize,
    pub steps: usize,
}

pub struct PipelineRun {
    pub outcomes: Vec<StudyOutcome>,
    pub labels: LabelTable,
    pub rows: Vec<DatasetRow>,
    pub model: Option<ModelRun>,
    pub timings: Timings,
    pub outputs: Vec<PathBuf>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Loads and processes every study with at most `config.jobs` workers.
pub fn process_studies(
    sources: &[StudySource],
    config: &PipelineConfig,
    volume_dir: Option<&Path>,
) -> Result<Vec<StudyOutcome>, PipelineError> {
    thread_pool(config.jobs)?.install(|| {
        sources
            .par_iter()
            .map(|src| {
                let inputs = src.load()?;
                Ok(process_study(&inputs, config, volume_dir))
            })
            .collect()
    })
}

/// Runs every stage and writes outputs into `out_dir`.
pub fn run_pipeline(
    sources: &[StudySource],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineRun, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut timings = Timings::new();
    let mut outputs = Vec::new();
    let write =
        |outputs: &mut Vec<PathBuf>, name: &str, content: String| -> Result<(), PipelineError> {
            let path = out_dir.join(name);
            std::fs::write(&path, content).map_err(io_err(&path))?;
            outputs.push(path);
            Ok(())
        };

    let t = Instant::now();
    let volume_dir = config.write_disc_volumes.then(|| out_dir.join("discs"));
    let outcomes = process_studies(sources, config, volume_dir.as_deref())?;
    timings.insert("studies".into(), t.elapsed().as_secs_f64());

    let labels = label_table(&outcomes);
    write(&mut outputs, "labels.csv", labels.to_csv_string())?;
    write(
        &mut outputs,
        "segmentation_scores.csv",
        segmentation_scores_csv(&outcomes),
    )?;
    write(
        &mut outputs,
        "studies.json",
        serde_json::to_string_pretty(&outcomes.iter().map(StudySummary::from).collect::<Vec<_>>())
            .expect("summary serializes"),
    )?;

    let rows = build_dataset(&outcomes, &labels, config.require_complete_reports);
    let t = Instant::now();
    let model = train_and_evaluate(&rows, config)?;
    timings.insert("train_evaluate".into(), t.elapsed().as_secs_f64());

    write(
        &mut outputs,
        "features.csv",
        features_csv(&rows, Some(&model.split)),
    )?;
    write(&mut outputs, "split.json", model.split.to_json())?;
    let ckpt = out_dir.join("model.spnc");
    crate::grading::write_checkpoint(&model.model.to_checkpoint(), &ckpt)
        .map_err(GradingError::from)?;
    outputs.push(ckpt);
    let summary = TrainingSummary {
        loss_history: model.training.loss_history.clone(),
        class_weights: model.weights,
        samples: model.training.samples,
        steps: model.training.steps,
    };
    write(
        &mut outputs,
        "training.json",
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write(&mut outputs, "metrics.json", model.metrics.to_json())?;
    write(&mut outputs, "metrics.txt", model.metrics.to_text())?;

    Ok(PipelineRun {
        outcomes,
        labels,
        rows,
        model: Some(model),
        timings,
        outputs,
    })
}

/// Compact per-study record for `studies.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub report_complete: Option<bool>,
    pub segmentation_success: Option<bool>,
    pub failure_reason: Option<String>,
    pub discs_extracted: usize,
    pub failure: Option<String>,
    pub notes: Vec<String>,
}

impl From<&StudyOutcome> for StudySummary {
    fn from(o: &StudyOutcome) -> Self {
        StudySummary {
            study_id: o.study_id.clone(),
            report_complete: o.report.as_ref().map(|r| r.complete),
            segmentation_success: o.score.as_ref().map(|s| s.success),
            failure_reason: o
                .score
                .as_ref()
                .and_then(|s| s.failure_reason)
                .map(|r| r.name().to_string()),
            discs_extracted: o.discs.len(),
            failure: o.failure.clone(),
            notes: o.notes.clone(),
        }
    }
}
