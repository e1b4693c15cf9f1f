use super::normalize::normalize_text;
use super::ReportError;
use crate::anatomy::Grade;
use regex::Regex;
use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

const DEFAULT_TABLE: &str = include_str!("vocabulary.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteNoun {
    Canal,
    Foramen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Right,
    Left,
    Bilateral,
}

/// What a surface form means once matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Severity(Grade),
    Site(SiteNoun),
    Finding,
    Side(Side),
}

/// A vocabulary hit inside a piece of normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub term: Term,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub surface: String,
    pub term: Term,
}

/// Closed vocabulary of severity, site, finding and laterality terms.
///
/// Loaded from a tab-separated table (`surface<TAB>category<TAB>value`); surfaces are
/// normalized on load so the table can use the spelling found in reports.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    lookup: HashMap<String, Term>,
    matcher: Regex,
}

impl Vocabulary {
    pub fn from_table(table: &str) -> Result<Self, ReportError> {
        let mut entries = Vec::new();
        for (i, line) in table.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            let bad = |reason: &str| ReportError::BadVocabulary {
                line: line_no,
                reason: reason.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected three tab-separated fields"));
            }
            let surface = normalize_text(fields[0]);
            if surface.is_empty() {
                return Err(bad("empty surface form"));
            }
            let value = fields[2].trim();
            let term = match fields[1].trim() {
                "severity" => {
                    let grade = value
                        .parse::<u8>()
                        .ok()
                        .and_then(Grade::new)
                        .ok_or_else(|| bad("severity value must be 0..=3"))?;
                    Term::Severity(grade)
                }
                "site" => match value {
                    "canal" => Term::Site(SiteNoun::Canal),
                    "foramen" => Term::Site(SiteNoun::Foramen),
                    _ => return Err(bad("site value must be canal or foramen")),
                },
                "finding" => Term::Finding,
                "side" => match value {
                    "right" => Term::Side(Side::Right),
                    "left" => Term::Side(Side::Left),
                    "bilateral" => Term::Side(Side::Bilateral),
                    _ => return Err(bad("side value must be right, left or bilateral")),
                },
                other => return Err(bad(&format!("unknown category {other:?}"))),
            };
            entries.push(VocabEntry { surface, term });
        }
        if entries.is_empty() {
            return Err(ReportError::BadVocabulary {
                line: 0,
                reason: "vocabulary table has no entries".into(),
            });
        }

        let mut lookup = HashMap::new();
        for e in &entries {
            lookup.entry(e.surface.clone()).or_insert(e.term);
        }
        let mut surfaces: Vec<&str> = lookup.keys().map(String::as_str).collect();
        // Longest alternatives first so the leftmost-first engine prefers them.
        surfaces.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alternation = surfaces
            .iter()
            .map(|s| regex::escape(s))
            .collect::<Vec<_>>()
            .join("|");
        let matcher = Regex::new(&format!(r"\b(?:{alternation})\b")).map_err(|e| {
            ReportError::BadVocabulary {
                line: 0,
                reason: e.to_string(),
            }
        })?;
        Ok(Vocabulary {
            entries,
            lookup,
            matcher,
        })
    }

    /// The built-in table shipped with the crate.
    pub fn builtin() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| Vocabulary::from_table(DEFAULT_TABLE).expect("builtin vocabulary"))
    }

    pub fn builtin_table() -> &'static str {
        DEFAULT_TABLE
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn lookup(&self, normalized: &str) -> Option<Term> {
        self.lookup.get(normalized).copied()
    }

    /// All non-overlapping vocabulary hits in `text`, left to right.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        self.matcher
            .find_iter(text)
            .filter_map(|m| {
                self.lookup(m.as_str()).map(|term| Token {
                    term,
                    span: m.range(),
                })
            })
            .collect()
    }

    /// Maps a severity descriptor onto its grade. Intermediate descriptors carry the
    /// higher grade.
    pub fn match_severity(&self, phrase: &str) -> Result<Grade, ReportError> {
        match self.lookup(&normalize_text(phrase)) {
            Some(Term::Severity(g)) => Ok(g),
            _ => Err(ReportError::UnknownSeverity(phrase.to_string())),
        }
    }
}

/// [`Vocabulary::match_severity`] against the built-in table.
pub fn match_severity(phrase: &str) -> Result<Grade, ReportError> {
    Vocabulary::builtin().match_severity(phrase)
}
