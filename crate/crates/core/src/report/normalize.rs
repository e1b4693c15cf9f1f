use regex::Regex;
use std::ops::Range;
use std::sync::OnceLock;

/// Normalized report text together with a byte-level map back into the raw input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    text: String,
    /// For every byte of `text`, the raw byte range of the character it came from.
    origin: Vec<(usize, usize)>,
}

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }

    /// Maps a byte range of the normalized text onto the raw text it was derived from.
    pub fn original_span(&self, span: Range<usize>) -> Range<usize> {
        if span.start >= span.end || span.start >= self.origin.len() {
            let at = self
                .origin
                .get(span.start)
                .map(|o| o.0)
                .or_else(|| self.origin.last().map(|o| o.1))
                .unwrap_or(0);
            return at..at;
        }
        let end = span.end.min(self.origin.len());
        let start = self.origin[span.start].0;
        let stop = self.origin[span.start..end]
            .iter()
            .map(|o| o.1)
            .max()
            .unwrap_or(start);
        start..stop
    }
}

#[derive(Clone, Copy)]
struct Piece {
    ch: char,
    start: usize,
    end: usize,
}

fn is_dash(c: char) -> bool {
    matches!(
        c,
        '-' | '\u{2010}'
            | '\u{2011}'
            | '\u{2012}'
            | '\u{2013}'
            | '\u{2014}'
            | '\u{2015}'
            | '\u{2212}'
            | '/'
    )
}

fn neuro_joint() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"neuro[ -]+foram").expect("valid regex"))
}

/// Lowercases, unifies dash and slash variants, joins split "neuro-foramen" forms and
/// collapses whitespace, keeping a map back to raw byte offsets.
pub fn normalize_with_offsets(raw: &str) -> NormalizedText {
    let mut pieces: Vec<Piece> = Vec::with_capacity(raw.len());
    for (start, c) in raw.char_indices() {
        let end = start + c.len_utf8();
        if c.is_whitespace() {
            pieces.push(Piece {
                ch: ' ',
                start,
                end,
            });
        } else if is_dash(c) {
            pieces.push(Piece {
                ch: '-',
                start,
                end,
            });
        } else {
            for lc in c.to_lowercase() {
                pieces.push(Piece { ch: lc, start, end });
            }
        }
    }

    // Whitespace next to a hyphen goes, then runs of spaces collapse.
    let mut tight: Vec<Piece> = Vec::with_capacity(pieces.len());
    for (i, p) in pieces.iter().enumerate() {
        if p.ch == ' ' {
            let prev_dash = tight.last().is_some_and(|q| q.ch == '-');
            let next = pieces[i + 1..].iter().find(|q| q.ch != ' ');
            let next_dash = next.is_some_and(|q| q.ch == '-');
            let prev_space = tight.last().is_some_and(|q| q.ch == ' ');
            if prev_dash || next_dash || prev_space || tight.is_empty() || next.is_none() {
                continue;
            }
        }
        tight.push(*p);
    }

    // "neuro-foramen", "neuro foraminal" -> "neuroforamen", "neuroforaminal".
    let joined: String = tight.iter().map(|p| p.ch).collect();
    let mut drop = vec![false; tight.len()];
    let char_of_byte: Vec<usize> = {
        let mut v = vec![0; joined.len() + 1];
        for (ci, (bi, c)) in joined.char_indices().enumerate() {
            for k in 0..c.len_utf8() {
                v[bi + k] = ci;
            }
        }
        v[joined.len()] = tight.len();
        v
    };
    for m in neuro_joint().find_iter(&joined) {
        let sep_start = char_of_byte[m.start() + "neuro".len()];
        let sep_end = char_of_byte[m.end() - "foram".len()];
        for d in drop.iter_mut().take(sep_end).skip(sep_start) {
            *d = true;
        }
    }

    let mut text = String::with_capacity(joined.len());
    let mut origin = Vec::with_capacity(joined.len());
    for (p, dropped) in tight.iter().zip(drop) {
        if dropped {
            continue;
        }
        text.push(p.ch);
        for _ in 0..p.ch.len_utf8() {
            origin.push((p.start, p.end));
        }
    }
    NormalizedText { text, origin }
}

/// Normalized form of `raw` used by every later parsing stage.
pub fn normalize_text(raw: &str) -> String {
    normalize_with_offsets(raw).into_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(normalize_text("Neuro-foramen"), "neuroforamen");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("MILD   Stenosis"), "mild stenosis");
    }

    #[test]
    fn dash_and_slash_variants() {
        assert_eq!(normalize_text("mild \u{2013} moderate"), "mild-moderate");
        assert_eq!(normalize_text("Mild/Moderate"), "mild-moderate");
        assert_eq!(normalize_text("L4 - L5:\n  normal"), "l4-l5: normal");
        assert_eq!(normalize_text("neuro foraminal"), "neuroforaminal");
        assert_eq!(normalize_text("  a \t b  "), "a b");
    }

    #[test]
    fn offsets_point_back_into_raw() {
        let raw = "L4-L5:  MILD   Neuro-Foraminal narrowing";
        let norm = normalize_with_offsets(raw);
        let text = norm.as_str();
        let at = text.find("neuroforaminal").unwrap();
        let span = norm.original_span(at..at + "neuroforaminal".len());
        assert_eq!(&raw[span], "Neuro-Foraminal");
        let at = text.find("mild").unwrap();
        assert_eq!(&raw[norm.original_span(at..at + 4)], "MILD");
    }

    #[test]
    fn idempotent() {
        for raw in ["Neuro - foramen  X", "A\u{2014}B / c", "  L5/S1:  Severe."] {
            let once = normalize_text(raw);
            assert_eq!(normalize_text(&once), once);
        }
    }
}
