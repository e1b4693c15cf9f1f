use crate::anatomy::DiscLevel;
use regex::Regex;
use std::ops::Range;
use std::sync::OnceLock;

/// A sentence of normalized report text with the disc level it talks about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopedSentence {
    pub text: String,
    /// Byte range inside the normalized report.
    pub span: Range<usize>,
    /// `None` when no level had been mentioned yet.
    pub scope: Option<DiscLevel>,
}

#[derive(Debug, Clone)]
struct LevelMention {
    level: DiscLevel,
    span: Range<usize>,
    /// End of the heading including its colon, when the mention is a heading.
    heading_end: Option<usize>,
}

fn level_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(t12|l[1-5])(?:-| )?(l[1-5]|s1|[1-5])\b(\s*:)?").expect("valid regex")
    })
}

fn find_mentions(text: &str) -> Vec<LevelMention> {
    level_pattern()
        .captures_iter(text)
        .filter_map(|caps| {
            let whole = caps.get(0)?;
            let joined = format!("{}{}", &caps[1], &caps[2]);
            let level = joined.parse::<DiscLevel>().ok()?;
            let span = whole.start()..caps.get(2)?.end();
            Some(LevelMention {
                level,
                span,
                heading_end: caps.get(3).map(|_| whole.end()),
            })
        })
        .collect()
}

/// Splits normalized text at sentence terminators and level headings and assigns each
/// sentence the most recent explicit level mention.
///
/// A sentence containing inline mentions is scoped to its first one; the last inline
/// mention carries over to the sentences that follow.
pub fn segment_and_scope(text: &str) -> Vec<ScopedSentence> {
    let mentions = find_mentions(text);

    // Pieces of text between headings, each tagged with the heading that opens it.
    let mut blocks: Vec<(Range<usize>, Option<DiscLevel>)> = Vec::new();
    let mut cursor = 0;
    let mut heading: Option<DiscLevel> = None;
    for m in mentions.iter().filter(|m| m.heading_end.is_some()) {
        blocks.push((cursor..m.span.start, heading));
        heading = Some(m.level);
        cursor = m.heading_end.unwrap_or(m.span.end);
    }
    blocks.push((cursor..text.len(), heading));

    let mut out = Vec::new();
    let mut current: Option<DiscLevel> = None;
    for (block, opened_by) in blocks {
        if opened_by.is_some() {
            current = opened_by;
        }
        for span in split_sentences(text, block) {
            let inline: Vec<&LevelMention> = mentions
                .iter()
                .filter(|m| {
                    m.heading_end.is_none() && m.span.start >= span.start && m.span.end <= span.end
                })
                .collect();
            let scope = match inline.first() {
                Some(first) => Some(first.level),
                None => current,
            };
            if let Some(last) = inline.last() {
                current = Some(last.level);
            }
            out.push(ScopedSentence {
                text: text[span.clone()].to_string(),
                span,
                scope,
            });
        }
    }
    out
}

/// Sentence spans inside `block`, trimmed, split after `.`, `!` or `?` that are followed by
/// whitespace or the end of the block.
fn split_sentences(text: &str, block: Range<usize>) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = block.start;
    let mut i = block.start;
    while i < block.end {
        let b = bytes[i];
        if matches!(b, b'.' | b'!' | b'?') && (i + 1 == block.end || bytes[i + 1] == b' ') {
            spans.push(start..i + 1);
            start = i + 1;
        }
        i += 1;
    }
    spans.push(start..block.end);
    spans
        .into_iter()
        .filter_map(|r| trim_span(text, r))
        .collect()
}

fn trim_span(text: &str, r: Range<usize>) -> Option<Range<usize>> {
    let slice = &text[r.clone()];
    if slice.trim().is_empty() {
        return None;
    }
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    let span = r.start + lead..r.end - trail;
    let content = &text[span.clone()];
    content.chars().any(|c| c.is_alphanumeric()).then_some(span)
}
