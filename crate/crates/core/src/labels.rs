//! Tabular per-level labels: `study_id,level,scs,rfs,lfs,complete`.

use crate::anatomy::{DiscLevel, Grade, Site};
use crate::report::{ParsedReport, StenosisLabelSet};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

pub const HEADER: [&str; 6] = ["study_id", "level", "scs", "rfs", "lfs", "complete"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowProblemKind {
    DuplicateKey { study_id: String, level: DiscLevel },
    GradeOutOfRange { column: &'static str, value: String },
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowProblem {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: RowProblemKind,
}

impl fmt::Display for RowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RowProblemKind::DuplicateKey { study_id, level } => {
                write!(f, "line {}: duplicate key ({study_id}, {level})", self.line)
            }
            RowProblemKind::GradeOutOfRange { column, value } => {
                write!(
                    f,
                    "line {}: {column} grade {value:?} outside 0..=3",
                    self.line
                )
            }
            RowProblemKind::Malformed(msg) => write!(f, "line {}: {msg}", self.line),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelTableError {
    #[error("{} malformed label row(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowProblem>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabelTableError {
    pub fn problems(&self) -> &[RowProblem] {
        match self {
            LabelTableError::Rows(p) => p,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub labels: StenosisLabelSet,
    /// Whether the source report was complete for all six levels.
    pub complete: bool,
}

/// Ground-truth grades keyed by `(study_id, level)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    rows: BTreeMap<(String, DiscLevel), LabelRow>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row; returns the labels back if the key already exists.
    pub fn insert(
        &mut self,
        study_id: impl Into<String>,
        labels: StenosisLabelSet,
        complete: bool,
    ) -> Result<(), StenosisLabelSet> {
        let key = (study_id.into(), labels.level);
        if self.rows.contains_key(&key) {
            return Err(labels);
        }
        self.rows.insert(key, LabelRow { labels, complete });
        Ok(())
    }

    pub fn add_report(&mut self, study_id: &str, parsed: &ParsedReport) {
        for set in &parsed.labels {
            let _ = self.insert(study_id, set.clone(), parsed.complete);
        }
    }

    pub fn get(&self, study_id: &str, level: DiscLevel) -> Option<&LabelRow> {
        self.rows.get(&(study_id.to_string(), level))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, DiscLevel, &LabelRow)> {
        self.rows.iter().map(|((s, l), r)| (s.as_str(), *l, r))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.keys().map(|(s, _)| s.clone()).collect();
        ids.dedup();
        ids
    }

    /// Per-task grade counts `[task][grade]` over all rows.
    pub fn grade_counts(&self) -> [[u64; Grade::COUNT]; 3] {
        let mut counts = [[0u64; Grade::COUNT]; 3];
        for row in self.rows.values() {
            for site in Site::ALL {
                if let Some(g) = row.labels.grade(site) {
                    counts[site.index()][g.index()] += 1;
                }
            }
        }
        counts
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for ((study, level), row) in &self.rows {
            let g = row
                .labels
                .grades()
                .map(|g| g.map(|g| g.to_string()).unwrap_or_default());
            w.write_record([
                study.as_str(),
                level.name(),
                &g[0],
                &g[1],
                &g[2],
                if row.complete { "true" } else { "false" },
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Parses the CSV schema written by [`LabelTable::to_csv_string`]. The header row is
    /// optional. Every malformed row is collected before failing.
    pub fn from_csv_str(text: &str) -> Result<Self, LabelTableError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut table = LabelTable::new();
        let mut problems = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(i + 1);
            if i == 0 && record.get(0) == Some("study_id") {
                continue;
            }
            match parse_row(&record) {
                Ok((study, labels, complete)) => {
                    let level = labels.level;
                    if table.insert(study.clone(), labels, complete).is_err() {
                        problems.push(RowProblem {
                            line,
                            kind: RowProblemKind::DuplicateKey {
                                study_id: study,
                                level,
                            },
                        });
                    }
                }
                Err(kind) => problems.push(RowProblem { line, kind }),
            }
        }
        if problems.is_empty() {
            Ok(table)
        } else {
            Err(LabelTableError::Rows(problems))
        }
    }
}

fn parse_row(
    record: &csv::StringRecord,
) -> Result<(String, StenosisLabelSet, bool), RowProblemKind> {
    if record.len() != HEADER.len() {
        return Err(RowProblemKind::Malformed(format!(
            "expected {} fields, found {}",
            HEADER.len(),
            record.len()
        )));
    }
    let study = record[0].to_string();
    if study.is_empty() {
        return Err(RowProblemKind::Malformed("empty study_id".into()));
    }
    let level: DiscLevel = record[1]
        .parse()
        .map_err(|e: crate::anatomy::ParseAnatomyError| RowProblemKind::Malformed(e.to_string()))?;
    let mut grades = [None; 3];
    for (slot, (column, raw)) in grades.iter_mut().zip([
        ("scs", &record[2]),
        ("rfs", &record[3]),
        ("lfs", &record[4]),
    ]) {
        if raw.is_empty() {
            continue;
        }
        let out_of_range = || RowProblemKind::GradeOutOfRange {
            column,
            value: raw.to_string(),
        };
        let v: i64 = raw.parse().map_err(|_| out_of_range())?;
        let g = u8::try_from(v)
            .ok()
            .and_then(Grade::new)
            .ok_or_else(out_of_range)?;
        *slot = Some(g);
    }
    let complete = match record[5].to_ascii_lowercase().as_str() {
        "true" | "1" => true,
        "false" | "0" | "" => false,
        other => {
            return Err(RowProblemKind::Malformed(format!(
                "bad complete flag {other:?}"
            )))
        }
    };
    Ok((
        study,
        StenosisLabelSet::from_grades(level, grades),
        complete,
    ))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelTable, LabelTableError> {
    LabelTable::from_csv_str(&std::fs::read_to_string(path)?)
}

pub fn write_labels(table: &LabelTable, path: impl AsRef<Path>) -> Result<(), LabelTableError> {
    std::fs::write(path, table.to_csv_string())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_example_row() {
        let t = LabelTable::from_csv_str("s1,L4L5,0,1,2,true\n").unwrap();
        let row = t.get("s1", DiscLevel::L4L5).unwrap();
        assert_eq!(
            row.labels.grades(),
            [
                Some(Grade::NORMAL),
                Some(Grade::MILD),
                Some(Grade::MODERATE)
            ]
        );
        assert!(row.complete);
    }

    #[test]
    fn grade_out_of_range() {
        let err = LabelTable::from_csv_str("s1,L4L5,0,4,2,true\n").unwrap_err();
        assert!(matches!(
            err.problems()[0].kind,
            RowProblemKind::GradeOutOfRange { column: "rfs", .. }
        ));
    }

    #[test]
    fn duplicate_key() {
        let err =
            LabelTable::from_csv_str("s1,L4L5,0,1,2,true\ns1,L4-L5,1,1,1,true\n").unwrap_err();
        assert_eq!(err.problems().len(), 1);
        assert_eq!(err.problems()[0].line, 2);
        assert!(matches!(
            err.problems()[0].kind,
            RowProblemKind::DuplicateKey { .. }
        ));
    }

    #[test]
    fn collects_every_bad_row() {
        let text = "study_id,level,scs,rfs,lfs,complete\ns1,L4L5,9,,,true\ns1,L9L10,0,0,0,false\ns2,L1L2,0,0\n";
        let err = LabelTable::from_csv_str(text).unwrap_err();
        let lines: Vec<usize> = err.problems().iter().map(|p| p.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
    }

    #[test]
    fn missing_grades_are_empty_fields() {
        let mut t = LabelTable::new();
        t.insert(
            "a",
            StenosisLabelSet::from_grades(DiscLevel::L5S1, [None, Some(Grade::SEVERE), None]),
            false,
        )
        .unwrap();
        let csv = t.to_csv_string();
        assert_eq!(
            csv,
            "study_id,level,scs,rfs,lfs,complete\na,L5S1,,3,,false\n"
        );
        assert_eq!(LabelTable::from_csv_str(&csv).unwrap(), t);
    }

    fn grade_opt() -> impl Strategy<Value = Option<Grade>> {
        prop::option::of((0u8..4).prop_map(|g| Grade::new(g).unwrap()))
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(("[a-z0-9]{1,6}", 0usize..6, grade_opt(), grade_opt(), grade_opt(), any::<bool>()), 0..20)) {
            let mut t = LabelTable::new();
            for (s, l, a, b, c, done) in rows {
                let _ = t.insert(s, StenosisLabelSet::from_grades(DiscLevel::ALL[l], [a, b, c]), done);
            }
            let back = LabelTable::from_csv_str(&t.to_csv_string()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
