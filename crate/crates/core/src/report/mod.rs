//! Free-text lumbar MRI report parsing into per-level stenosis grades.
//!
//! The pipeline is: [`normalize_text`] → [`segment_and_scope`] → per-sentence
//! [`extract_labels`] → merge per level in [`parse_report`]. All matching is driven by
//! a closed [`Vocabulary`] that ships as a tab-separated table and can be replaced at
//! runtime.

mod extract;
mod normalize;
mod segment;
mod vocab;

pub use extract::{extract_labels, extract_labels_with, Extraction};
pub use normalize::{normalize_text, normalize_with_offsets, NormalizedText};
pub use segment::{segment_and_scope, ScopedSentence};
pub use vocab::{match_severity, Side, SiteNoun, Term, Token, VocabEntry, Vocabulary};

use crate::anatomy::{DiscLevel, Grade, Site};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown severity descriptor {0:?}")]
    UnknownSeverity(String),
    #[error("vocabulary table line {line}: {reason}")]
    BadVocabulary { line: usize, reason: String },
    #[error("report input line {line}: expected `study_id<TAB>text`")]
    BadRecord { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grades for one disc level, each with the text it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StenosisLabelSet {
    pub level: DiscLevel,
    grades: [Option<Grade>; 3],
    provenance: Vec<(Site, Range<usize>)>,
}

impl StenosisLabelSet {
    pub fn new(level: DiscLevel) -> Self {
        StenosisLabelSet {
            level,
            grades: [None; 3],
            provenance: Vec::new(),
        }
    }

    /// Builds a label set without provenance, e.g. from a label table.
    pub fn from_grades(level: DiscLevel, grades: [Option<Grade>; 3]) -> Self {
        StenosisLabelSet {
            level,
            grades,
            provenance: Vec::new(),
        }
    }

    pub fn grade(&self, site: Site) -> Option<Grade> {
        self.grades[site.index()]
    }

    pub fn grades(&self) -> [Option<Grade>; 3] {
        self.grades
    }

    pub fn provenance(&self) -> &[(Site, Range<usize>)] {
        &self.provenance
    }

    pub fn is_empty(&self) -> bool {
        self.grades.iter().all(Option::is_none)
    }

    pub fn is_complete(&self) -> bool {
        self.grades.iter().all(Option::is_some)
    }

    /// Records `grade` for `site`. If the site already has a grade it is kept and
    /// returned as the error.
    pub fn insert(&mut self, site: Site, grade: Grade, span: Range<usize>) -> Result<(), Grade> {
        match self.grades[site.index()] {
            Some(existing) => Err(existing),
            None => {
                self.grades[site.index()] = Some(grade);
                self.provenance.push((site, span));
                Ok(())
            }
        }
    }

    fn shift_provenance(&mut self, map: impl Fn(Range<usize>) -> Range<usize>) {
        for (_, span) in &mut self.provenance {
            *span = map(span.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    /// Sentence seen before any level mention; contributes no labels.
    Unscoped,
    /// A site or laterality was mentioned without a recognizable severity.
    UnknownSeverity,
    /// One severity could apply to several sites.
    AmbiguousBinding,
    /// A severity with nothing to attach to.
    UnboundSeverity,
    ConflictingDuplicate {
        site: Site,
        kept: Grade,
        rejected: Grade,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub level: Option<DiscLevel>,
    /// Byte range in the text the diagnostic was raised against.
    pub span: Range<usize>,
    pub text: String,
}

/// A report body after normalization and sentence scoping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportDocument {
    pub study_id: String,
    normalized: NormalizedText,
    pub sentences: Vec<ScopedSentence>,
}

impl ReportDocument {
    pub fn new(study_id: impl Into<String>, raw: &str) -> Self {
        let normalized = normalize_with_offsets(raw);
        let sentences = segment_and_scope(normalized.as_str());
        ReportDocument {
            study_id: study_id.into(),
            normalized,
            sentences,
        }
    }

    pub fn text(&self) -> &str {
        self.normalized.as_str()
    }

    pub fn original_span(&self, span: Range<usize>) -> Range<usize> {
        self.normalized.original_span(span)
    }
}

/// Everything extracted from one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReport {
    /// One entry per level mentioned, cranial to caudal. Provenance spans index the raw
    /// report text.
    pub labels: Vec<StenosisLabelSet>,
    pub diagnostics: Vec<Diagnostic>,
    /// All six levels present with all three sites graded.
    pub complete: bool,
}

impl ParsedReport {
    pub fn level(&self, level: DiscLevel) -> Option<&StenosisLabelSet> {
        self.labels.iter().find(|l| l.level == level)
    }
}

pub fn parse_report(raw: &str) -> ParsedReport {
    parse_report_with(Vocabulary::builtin(), raw)
}

pub fn parse_report_with(vocab: &Vocabulary, raw: &str) -> ParsedReport {
    let doc = ReportDocument::new("", raw);
    let mut by_level: BTreeMap<DiscLevel, StenosisLabelSet> = BTreeMap::new();
    let mut diagnostics = Vec::new();

    for sentence in &doc.sentences {
        let offset = sentence.span.start;
        let to_raw = |r: Range<usize>| doc.original_span(r.start + offset..r.end + offset);
        let Some(level) = sentence.scope else {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::Unscoped,
                level: None,
                span: doc.original_span(sentence.span.clone()),
                text: sentence.text.clone(),
            });
            continue;
        };
        let mut ex = extract_labels_with(vocab, &sentence.text, level);
        ex.labels.shift_provenance(to_raw);
        let merged = by_level
            .entry(level)
            .or_insert_with(|| StenosisLabelSet::new(level));
        for (site, span) in ex.labels.provenance() {
            let grade = ex.labels.grade(*site).expect("provenance implies grade");
            if let Err(kept) = merged.insert(*site, grade, span.clone()) {
                if kept != grade {
                    diagnostics.push(Diagnostic {
                        kind: DiagnosticKind::ConflictingDuplicate {
                            site: *site,
                            kept,
                            rejected: grade,
                        },
                        level: Some(level),
                        span: span.clone(),
                        text: raw[span.clone()].to_string(),
                    });
                }
            }
        }
        for mut d in ex.diagnostics {
            d.span = to_raw(d.span);
            diagnostics.push(d);
        }
    }

    let labels: Vec<StenosisLabelSet> = by_level.into_values().collect();
    let complete = labels.len() == DiscLevel::ALL.len() && labels.iter().all(|l| l.is_complete());
    ParsedReport {
        labels,
        diagnostics,
        complete,
    }
}

/// A report body with its study identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRecord {
    pub study_id: String,
    pub text: String,
}

/// Reads `study_id<TAB>text` records, one per line. Blank lines are skipped.
pub fn read_report_records(text: &str) -> Result<Vec<ReportRecord>, ReportError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or(ReportError::BadRecord { line: i + 1 })?;
        if id.trim().is_empty() {
            return Err(ReportError::BadRecord { line: i + 1 });
        }
        out.push(ReportRecord {
            study_id: id.trim().to_string(),
            text: body.to_string(),
        });
    }
    Ok(out)
}

/// Loads reports from a directory of plain-text files (study id = file stem), a single
/// `.tsv` record file, or a single plain-text report.
pub fn load_reports(path: &Path) -> Result<Vec<ReportRecord>, ReportError> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut out = Vec::new();
        for file in files {
            out.extend(load_reports(&file)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path)?;
    let is_tsv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    if is_tsv {
        read_report_records(&text)
    } else {
        let study_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![ReportRecord { study_id, text }])
    }
}
