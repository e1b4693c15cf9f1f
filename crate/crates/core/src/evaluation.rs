//! Dataset splitting and grading metrics: confusion matrices, per-class and
//! class-average accuracy, merged and binary views, per-level binary accuracy and AUC.

use crate::anatomy::{DiscLevel, Grade, Site};
use crate::grading::{
    binary_collapse, merge_mild_moderate, OneHotTargets, TaskProbabilities, CLASSES,
};
use crate::labels::LabelTable;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluationError {
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios([f64; 3]),
    #[error("AUC needs both positive and negative samples")]
    SingleClass,
    #[error("no labeled discs at level {0}")]
    EmptyLevel(DiscLevel),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("confusion matrix has {found} classes, expected {expected}")]
    ClassCount { expected: usize, found: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Unit the split is drawn over. Study mode keeps every disc of a study together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Study,
    Disc,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mode: SplitMode,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Study id, or `study_id:LEVEL` in disc mode.
    pub entries: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn disc_key(study_id: &str, level: DiscLevel) -> String {
        format!("{study_id}:{level}")
    }

    pub fn get(&self, key: &str) -> Option<Split> {
        self.entries.get(key).copied()
    }

    pub fn split_of(&self, study_id: &str, level: DiscLevel) -> Option<Split> {
        match self.mode {
            SplitMode::Study => self.get(study_id),
            SplitMode::Disc => self.get(&Self::disc_key(study_id, level)),
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.entries.values() {
            c[*s as usize] += 1;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), EvaluationError> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r > 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(EvaluationError::BadRatios(ratios))
    }
}

/// Seeded shuffle of the distinct ids, then a contiguous train/validation/test partition
/// of sizes `round(r0·n)`, `round(r1·n)` and the remainder.
pub fn split_dataset<S: AsRef<str>>(
    ids: &[S],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, EvaluationError> {
    check_ratios(ratios)?;
    let mut ids: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let entries = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment {
        mode: SplitMode::Study,
        ratios,
        seed,
        entries,
    })
}

/// Splits the rows of `table` by study or by individual disc.
pub fn split_table(
    table: &LabelTable,
    ratios: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<SplitAssignment, EvaluationError> {
    let ids: Vec<String> = match mode {
        SplitMode::Study => table.study_ids(),
        SplitMode::Disc => table
            .iter()
            .map(|(s, l, _)| SplitAssignment::disc_key(s, l))
            .collect(),
    };
    let mut split = split_dataset(&ids, ratios, seed)?;
    split.mode = mode;
    Ok(split)
}

/// `counts[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<Self, EvaluationError> {
        let mut m = Self::new(classes);
        for &(t, p) in pairs {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, prediction: usize) -> Result<(), EvaluationError> {
        let k = self.classes();
        for label in [truth, prediction] {
            if label >= k {
                return Err(EvaluationError::LabelOutOfRange { label, classes: k });
            }
        }
        self.counts[truth][prediction] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn remap(&self, map: &[usize], classes: usize) -> Result<Self, EvaluationError> {
        if self.classes() != CLASSES {
            return Err(EvaluationError::ClassCount {
                expected: CLASSES,
                found: self.classes(),
            });
        }
        let mut m = Self::new(classes);
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                m.counts[map[t]][map[p]] += c;
            }
        }
        Ok(m)
    }

    /// Sums the mild and moderate rows and columns of a 4-class matrix.
    pub fn merge_mild_moderate(&self) -> Result<Self, EvaluationError> {
        self.remap(&[0, 1, 1, 2], 3)
    }

    /// Collapses a 4-class matrix to normal/mild/moderate versus severe.
    pub fn binary(&self) -> Result<Self, EvaluationError> {
        self.remap(&[0, 0, 0, 1], 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    /// Recall per class; `None` where the class has no support.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over supported classes; `None` if no class has support.
    pub class_average: Option<f64>,
    pub excluded: Vec<usize>,
}

pub fn class_accuracy(confusion: &ConfusionMatrix) -> ClassAccuracy {
    let mut per_class = Vec::with_capacity(confusion.classes());
    let mut excluded = Vec::new();
    for j in 0..confusion.classes() {
        let support = confusion.support(j);
        if support == 0 {
            excluded.push(j);
            per_class.push(None);
        } else {
            per_class.push(Some(confusion.counts[j][j] as f64 / support as f64));
        }
    }
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    let class_average =
        (!included.is_empty()).then(|| included.iter().sum::<f64>() / included.len() as f64);
    ClassAccuracy {
        per_class,
        class_average,
        excluded,
    }
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half. Computed from midranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvaluationError> {
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvaluationError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub lower: f64,
    pub upper: f64,
    /// Resamples that contained both classes.
    pub resamples: usize,
}

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// AUC with a seeded percentile-bootstrap 95% interval. Resamples drawing a single
/// class are skipped.
pub fn auc_with_ci(
    scores: &[f64],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<AucEstimate, EvaluationError> {
    let point = auc(scores, labels)?;
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            s[k] = scores[i];
            l[k] = labels[i];
        }
        if let Ok(a) = auc(&s, &l) {
            stats.push(a);
        }
    }
    stats.sort_by(f64::total_cmp);
    let (lower, upper) = if stats.is_empty() {
        (point, point)
    } else {
        (percentile(&stats, 2.5), percentile(&stats, 97.5))
    };
    Ok(AucEstimate {
        auc: point,
        lower,
        upper,
        resamples: stats.len(),
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Model output and truth for one disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscPrediction {
    pub study_id: String,
    pub level: DiscLevel,
    pub probabilities: TaskProbabilities,
    pub truth: OneHotTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub level: DiscLevel,
    pub scs: Option<f64>,
    /// RFS and LFS pooled.
    pub foraminal: Option<f64>,
    pub overall: f64,
    pub discs: usize,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary (severe versus not) accuracy at one level, predicting positive when the
/// collapsed severe probability is at least `threshold`.
pub fn per_level_binary_accuracy(
    predictions: &[DiscPrediction],
    level: DiscLevel,
    threshold: f64,
) -> Result<LevelAccuracy, EvaluationError> {
    let mut hits = [0usize; 2];
    let mut seen = [0usize; 2];
    let mut discs = 0;
    for p in predictions.iter().filter(|p| p.level == level) {
        discs += 1;
        for site in Site::ALL {
            if let Some(g) = p.truth.0[site.index()] {
                let positive = binary_collapse(p.probabilities.task(site))[1] >= threshold;
                let bucket = usize::from(site.is_foraminal());
                seen[bucket] += 1;
                hits[bucket] += usize::from(positive == (g == Grade::SEVERE));
            }
        }
    }
    if seen[0] + seen[1] == 0 {
        return Err(EvaluationError::EmptyLevel(level));
    }
    let rate = |b: usize| (seen[b] > 0).then(|| hits[b] as f64 / seen[b] as f64);
    Ok(LevelAccuracy {
        level,
        scs: rate(0),
        foraminal: rate(1),
        overall: (hits[0] + hits[1]) as f64 / (seen[0] + seen[1]) as f64,
        discs,
    })
}

/// Class granularity of a metric report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradingView {
    #[default]
    FourClass,
    MergedMildModerate,
    Binary,
}

impl GradingView {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            GradingView::FourClass => &["normal", "mild", "moderate", "severe"],
            GradingView::MergedMildModerate => &["normal", "mild/moderate", "severe"],
            GradingView::Binary => &["negative", "positive"],
        }
    }

    fn map_truth(self, g: Grade) -> usize {
        match self {
            GradingView::FourClass => g.index(),
            GradingView::MergedMildModerate => [0, 1, 1, 2][g.index()],
            GradingView::Binary => usize::from(g == Grade::SEVERE),
        }
    }

    fn predict(self, p: &[f64; CLASSES], threshold: f64) -> usize {
        match self {
            GradingView::FourClass => argmax(p),
            GradingView::MergedMildModerate => argmax(&merge_mild_moderate(p)),
            GradingView::Binary => usize::from(binary_collapse(p)[1] >= threshold),
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Site,
    pub confusion: ConfusionMatrix,
    pub accuracy: ClassAccuracy,
    /// Severe-versus-rest AUC; absent when the evaluated set holds a single class.
    pub auc: Option<AucEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationOptions {
    pub view: GradingView,
    pub threshold: f64,
    pub levels: Vec<DiscLevel>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            view: GradingView::FourClass,
            threshold: DEFAULT_THRESHOLD,
            levels: DiscLevel::ALL.to_vec(),
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub view: GradingView,
    pub class_names: Vec<String>,
    pub discs: usize,
    pub tasks: Vec<TaskMetrics>,
    pub per_level: Vec<LevelAccuracy>,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_mode: Option<SplitMode>,
}

pub fn evaluate(predictions: &[DiscPrediction], options: &EvaluationOptions) -> MetricReport {
    let view = options.view;
    let classes = view.class_names().len();
    let selected: Vec<&DiscPrediction> = predictions
        .iter()
        .filter(|p| options.levels.contains(&p.level))
        .collect();
    let tasks = Site::ALL
        .iter()
        .map(|&site| {
            let mut confusion = ConfusionMatrix::new(classes);
            let mut scores = Vec::new();
            let mut positives = Vec::new();
            for p in &selected {
                if let Some(g) = p.truth.0[site.index()] {
                    let probs = p.probabilities.task(site);
                    confusion
                        .add(view.map_truth(g), view.predict(probs, options.threshold))
                        .expect("mapped labels within view");
                    scores.push(binary_collapse(probs)[1]);
                    positives.push(g == Grade::SEVERE);
                }
            }
            TaskMetrics {
                task: site,
                accuracy: class_accuracy(&confusion),
                confusion,
                auc: auc_with_ci(
                    &scores,
                    &positives,
                    options.bootstrap_resamples,
                    options.seed,
                )
                .ok(),
            }
        })
        .collect();
    let per_level = options
        .levels
        .iter()
        .filter_map(|&l| per_level_binary_accuracy(predictions, l, options.threshold).ok())
        .collect();
    MetricReport {
        view,
        class_names: view.class_names().iter().map(|s| s.to_string()).collect(),
        discs: selected.len(),
        tasks,
        per_level,
        threshold: options.threshold,
        split_mode: None,
    }
}

impl MetricReport {
    pub fn task(&self, site: Site) -> &TaskMetrics {
        &self.tasks[site.index()]
    }

    /// Lowest class-average accuracy across tasks that have any support.
    pub fn min_class_average(&self) -> Option<f64> {
        self.tasks
            .iter()
            .filter_map(|t| t.accuracy.class_average)
            .min_by(f64::total_cmp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text tables: per-class accuracy per task, then per-level binary accuracy.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let width = self
            .class_names
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let mut out = String::new();
        let _ = write!(out, "{:<6}", "task");
        for name in &self.class_names {
            let _ = write!(out, " {name:>width$}");
        }
        let _ = writeln!(out, " {:>width$} {:>21}", "class avg", "auc (95% ci)");
        for t in &self.tasks {
            let _ = write!(out, "{:<6}", t.task.name());
            for acc in &t.accuracy.per_class {
                let _ = write!(out, " {:>width$}", fmt(*acc));
            }
            let auc = t.auc.map_or_else(
                || "-".to_string(),
                |a| format!("{:.3} ({:.3}-{:.3})", a.auc, a.lower, a.upper),
            );
            let _ = writeln!(out, " {:>width$} {auc:>21}", fmt(t.accuracy.class_average));
        }
        if !self.per_level.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<6} {:>9} {:>9} {:>9} {:>6}",
                "level", "scs", "foraminal", "overall", "discs"
            );
            for l in &self.per_level {
                let _ = writeln!(
                    out,
                    "{:<6} {:>9} {:>9} {:>9} {:>6}",
                    l.level.name(),
                    fmt(l.scs),
                    fmt(l.foraminal),
                    format!("{:.3}", l.overall),
                    l.discs
                );
            }
        }
        out
    }
}
