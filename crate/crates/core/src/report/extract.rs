use super::vocab::{Side, SiteNoun, Term, Token, Vocabulary};
use super::{Diagnostic, DiagnosticKind, StenosisLabelSet};
use crate::anatomy::{DiscLevel, Grade, Site};
use regex::Regex;
use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::OnceLock;

fn clause_breaks() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[,;]|\b(?:and|but|while|whereas)\b").expect("valid regex"))
}

#[derive(Debug, Default)]
struct Clause {
    span: Range<usize>,
    tokens: Vec<Token>,
}

impl Clause {
    fn severities(&self) -> Vec<&Token> {
        self.tokens
            .iter()
            .filter(|t| matches!(t.term, Term::Severity(_)))
            .collect()
    }

    fn sites(&self) -> BTreeSet<SiteKey> {
        self.tokens
            .iter()
            .filter_map(|t| match t.term {
                Term::Site(SiteNoun::Canal) => Some(SiteKey::Canal),
                Term::Site(SiteNoun::Foramen) => Some(SiteKey::Foramen),
                _ => None,
            })
            .collect()
    }

    fn sides(&self) -> BTreeSet<Site> {
        let mut out = BTreeSet::new();
        for t in &self.tokens {
            match t.term {
                Term::Side(Side::Right) => {
                    out.insert(Site::Rfs);
                }
                Term::Side(Side::Left) => {
                    out.insert(Site::Lfs);
                }
                Term::Side(Side::Bilateral) => {
                    out.insert(Site::Rfs);
                    out.insert(Site::Lfs);
                }
                _ => {}
            }
        }
        out
    }

    fn has_finding(&self) -> bool {
        self.tokens.iter().any(|t| t.term == Term::Finding)
    }

    /// Tokens that locate the finding: site nouns and laterality.
    fn cue_span(&self) -> Option<Range<usize>> {
        span_of(
            self.tokens
                .iter()
                .filter(|t| matches!(t.term, Term::Site(_) | Term::Side(_) | Term::Finding)),
        )
    }

    fn has_location_cue(&self) -> bool {
        self.tokens
            .iter()
            .any(|t| matches!(t.term, Term::Site(_) | Term::Side(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SiteKey {
    Canal,
    Foramen,
}

fn span_of<'a>(tokens: impl Iterator<Item = &'a Token>) -> Option<Range<usize>> {
    tokens.fold(None, |acc: Option<Range<usize>>, t| {
        Some(match acc {
            None => t.span.clone(),
            Some(r) => r.start.min(t.span.start)..r.end.max(t.span.end),
        })
    })
}

fn union(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    a.start.min(b.start)..a.end.max(b.end)
}

/// Result of binding one sentence's descriptors to sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub labels: StenosisLabelSet,
    /// Diagnostics with spans relative to the sentence.
    pub diagnostics: Vec<Diagnostic>,
}

/// Binds severity descriptors to stenosis sites within one scoped sentence.
///
/// Spans in the returned label set and diagnostics are byte offsets into `sentence`.
pub fn extract_labels(sentence: &str, scope: DiscLevel) -> Extraction {
    extract_labels_with(Vocabulary::builtin(), sentence, scope)
}

pub fn extract_labels_with(vocab: &Vocabulary, sentence: &str, scope: DiscLevel) -> Extraction {
    let tokens = vocab.tokenize(sentence);
    let clauses = split_clauses(sentence, tokens);
    let mut labels = StenosisLabelSet::new(scope);
    let mut diagnostics = Vec::new();

    let diag = |kind: DiagnosticKind, span: Range<usize>| Diagnostic {
        kind,
        level: Some(scope),
        span: span.clone(),
        text: sentence[span].to_string(),
    };

    // Severity from the last clause that had one, for elliptical follow-ups such as
    // "mild right and left foraminal narrowing".
    let mut carried: Option<(Grade, Range<usize>)> = None;
    // A located clause still waiting for its severity ("..., which is severe").
    let mut pending: Option<usize> = None;

    for (ci, clause) in clauses.iter().enumerate() {
        let severities = clause.severities();
        let distinct: BTreeSet<Grade> = severities
            .iter()
            .filter_map(|t| match t.term {
                Term::Severity(g) => Some(g),
                _ => None,
            })
            .collect();
        if distinct.len() > 1 {
            diagnostics.push(diag(DiagnosticKind::AmbiguousBinding, clause.span.clone()));
            carried = None;
            continue;
        }

        let own = distinct
            .first()
            .copied()
            .zip(span_of(severities.iter().copied()));

        // A bare severity clause resolves a located clause that lacked one.
        if let (Some((grade, sev_span)), Some(p)) = (own.clone(), pending) {
            if clause.cue_span().is_none() {
                let target = &clauses[p];
                bind(
                    &mut labels,
                    &mut diagnostics,
                    sentence,
                    scope,
                    target,
                    grade,
                    &sev_span,
                    false,
                );
                pending = None;
                carried = Some((grade, sev_span));
                continue;
            }
        }
        if let Some(p) = pending.take() {
            let span = clauses[p].span.clone();
            diagnostics.push(diag(DiagnosticKind::UnknownSeverity, span));
        }

        let (grade, sev_span) = match own {
            Some(s) => s,
            None => {
                if clause.has_location_cue() {
                    if let Some((g, span)) = carried.clone() {
                        (g, span)
                    } else {
                        pending = Some(ci);
                        continue;
                    }
                } else {
                    continue;
                }
            }
        };
        carried = Some((grade, sev_span.clone()));
        let whole_sentence = clauses.len() == 1;
        bind(
            &mut labels,
            &mut diagnostics,
            sentence,
            scope,
            clause,
            grade,
            &sev_span,
            whole_sentence,
        );
    }
    if let Some(p) = pending {
        diagnostics.push(diag(
            DiagnosticKind::UnknownSeverity,
            clauses[p].span.clone(),
        ));
    }

    Extraction {
        labels,
        diagnostics,
    }
}

#[allow(clippy::too_many_arguments)]
fn bind(
    labels: &mut StenosisLabelSet,
    diagnostics: &mut Vec<Diagnostic>,
    sentence: &str,
    scope: DiscLevel,
    clause: &Clause,
    grade: Grade,
    sev_span: &Range<usize>,
    whole_sentence: bool,
) {
    let sites = clause.sites();
    let sides = clause.sides();
    let foraminal: Vec<Site> = if sides.is_empty() {
        vec![Site::Rfs, Site::Lfs]
    } else {
        sides.iter().copied().collect()
    };

    let targets: Option<Vec<Site>> = match (
        sites.contains(&SiteKey::Canal),
        sites.contains(&SiteKey::Foramen),
    ) {
        (true, false) => Some(vec![Site::Scs]),
        (false, true) => Some(foraminal),
        (true, true) => {
            // "no significant spinal canal or foraminal stenosis"
            if grade == Grade::NORMAL {
                let mut v = vec![Site::Scs];
                v.extend(foraminal);
                Some(v)
            } else {
                None
            }
        }
        (false, false) => {
            if !sides.is_empty() {
                Some(sides.iter().copied().collect())
            } else if grade == Grade::NORMAL
                && (clause.has_finding() || (whole_sentence && is_bare(sentence, clause)))
            {
                Some(Site::ALL.to_vec())
            } else if clause.has_finding() {
                None
            } else {
                diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::UnboundSeverity,
                    level: Some(scope),
                    span: sev_span.clone(),
                    text: sentence[sev_span.clone()].to_string(),
                });
                return;
            }
        }
    };

    let provenance = match clause.cue_span() {
        Some(cue) => union(sev_span, &cue),
        None => sev_span.clone(),
    };
    let Some(targets) = targets else {
        diagnostics.push(Diagnostic {
            kind: DiagnosticKind::AmbiguousBinding,
            level: Some(scope),
            span: provenance.clone(),
            text: sentence[provenance].to_string(),
        });
        return;
    };
    for site in targets {
        if let Err(existing) = labels.insert(site, grade, provenance.clone()) {
            if existing != grade {
                diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::ConflictingDuplicate {
                        site,
                        kept: existing,
                        rejected: grade,
                    },
                    level: Some(scope),
                    span: provenance.clone(),
                    text: sentence[provenance.clone()].to_string(),
                });
            }
        }
    }
}

/// True when the clause holds nothing but its severity word ("normal.").
fn is_bare(sentence: &str, clause: &Clause) -> bool {
    let mut rest = sentence[clause.span.clone()].to_string();
    for t in clause.tokens.iter().rev() {
        let a = t.span.start - clause.span.start;
        let b = t.span.end - clause.span.start;
        rest.replace_range(a..b, "");
    }
    !rest.chars().any(|c| c.is_alphanumeric())
}

fn split_clauses(sentence: &str, tokens: Vec<Token>) -> Vec<Clause> {
    let mut bounds: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    for m in clause_breaks().find_iter(sentence) {
        // A break inside a vocabulary phrase ("mild to moderate") is not a break.
        if tokens
            .iter()
            .any(|t| t.span.start < m.start() && m.end() < t.span.end)
        {
            continue;
        }
        bounds.push(start..m.start());
        start = m.end();
    }
    bounds.push(start..sentence.len());

    let mut clauses: Vec<Clause> = bounds
        .into_iter()
        .map(|span| Clause {
            span,
            tokens: Vec::new(),
        })
        .collect();
    for t in tokens {
        if let Some(c) = clauses
            .iter_mut()
            .find(|c| c.span.start <= t.span.start && t.span.end <= c.span.end)
        {
            c.tokens.push(t);
        }
    }
    clauses.retain(|c| !c.tokens.is_empty());
    clauses
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(sentence: &str) -> [Option<u8>; 3] {
        let ex = extract_labels(sentence, DiscLevel::L4L5);
        Site::ALL.map(|s| ex.labels.grade(s).map(Grade::value))
    }

    #[test]
    fn mixed_canal_and_lateralized_foramina() {
        assert_eq!(
            grades("there is no significant central canal stenosis and mild right and moderate left foraminal narrowing."),
            [Some(0), Some(1), Some(2)]
        );
    }

    #[test]
    fn side_without_site_defaults_to_foramen() {
        assert_eq!(
            grades("moderate right and mild left stenosis are present."),
            [None, Some(2), Some(1)]
        );
        assert_eq!(
            grades("no evidence of spinal canal narrowing is observed."),
            [Some(0), None, None]
        );
    }

    #[test]
    fn bilateral_with_trailing_severity() {
        assert_eq!(
            grades(
                "severe canal stenosis and bilateral foraminal narrowing which is severe as well."
            ),
            [Some(3), Some(3), Some(3)]
        );
        assert_eq!(
            grades("bilateral foraminal narrowing, which is moderate."),
            [None, Some(2), Some(2)]
        );
    }

    #[test]
    fn global_negation() {
        assert_eq!(
            grades("no significant spinal canal or foraminal stenosis."),
            [Some(0), Some(0), Some(0)]
        );
        assert_eq!(
            grades("without significant spinal canal or foraminal stenosis."),
            [Some(0), Some(0), Some(0)]
        );
        assert_eq!(grades("normal."), [Some(0), Some(0), Some(0)]);
        assert_eq!(grades("unremarkable"), [Some(0), Some(0), Some(0)]);
    }

    #[test]
    fn carried_severity() {
        assert_eq!(
            grades("mild right and left foraminal narrowing."),
            [None, Some(1), Some(1)]
        );
    }

    #[test]
    fn intermediate_phrases_are_not_split() {
        assert_eq!(
            grades("mild to moderate central canal stenosis."),
            [Some(2), None, None]
        );
        assert_eq!(
            grades("moderate to severe left neural foraminal narrowing."),
            [None, None, Some(3)]
        );
    }

    #[test]
    fn ambiguous_binding_emits_nothing() {
        let ex = extract_labels("moderate canal and foraminal stenosis.", DiscLevel::L3L4);
        // "and" splits the clause; the foramen clause carries the severity.
        assert_eq!(ex.labels.grade(Site::Rfs), Some(Grade::MODERATE));

        let ex = extract_labels("severe canal or foraminal stenosis.", DiscLevel::L3L4);
        assert!(ex.labels.is_empty());
        assert!(ex
            .diagnostics
            .iter()
            .any(|d| d.kind == DiagnosticKind::AmbiguousBinding));

        let ex = extract_labels("mild stenosis.", DiscLevel::L3L4);
        assert!(ex.labels.is_empty());
        assert_eq!(ex.diagnostics[0].kind, DiagnosticKind::AmbiguousBinding);
    }

    #[test]
    fn located_finding_without_severity_is_reported() {
        let ex = extract_labels("there is right foraminal narrowing.", DiscLevel::L3L4);
        assert!(ex.labels.is_empty());
        assert_eq!(ex.diagnostics.len(), 1);
        assert_eq!(ex.diagnostics[0].kind, DiagnosticKind::UnknownSeverity);
    }

    #[test]
    fn conflicting_duplicate_keeps_first() {
        let ex = extract_labels(
            "mild canal stenosis; severe central canal stenosis.",
            DiscLevel::L3L4,
        );
        assert_eq!(ex.labels.grade(Site::Scs), Some(Grade::MILD));
        assert!(matches!(
            ex.diagnostics[0].kind,
            DiagnosticKind::ConflictingDuplicate {
                site: Site::Scs,
                kept: Grade::MILD,
                rejected: Grade::SEVERE
            }
        ));
    }

    #[test]
    fn provenance_covers_descriptor() {
        let s = "there is no significant central canal stenosis and mild right and moderate left foraminal narrowing.";
        let ex = extract_labels(s, DiscLevel::L4L5);
        for (site, span) in ex.labels.provenance() {
            let text = &s[span.clone()];
            let expected = match site {
                Site::Scs => "no significant",
                Site::Rfs => "mild",
                Site::Lfs => "moderate",
            };
            assert!(text.contains(expected), "{site}: {text}");
        }
    }
}
