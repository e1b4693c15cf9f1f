//! Shared anatomical vocabulary: vertebrae, disc levels, stenosis sites and grades.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Error returned when parsing one of the anatomical enums from text.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized {kind}: {text:?}")]
pub struct ParseAnatomyError {
    pub kind: &'static str,
    pub text: String,
}

/// Vertebral bodies tracked by the segmentation stage, cranial to caudal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vertebra {
    T12,
    L1,
    L2,
    L3,
    L4,
    L5,
    S1,
}

impl Vertebra {
    pub const ALL: [Vertebra; 7] = [
        Vertebra::T12,
        Vertebra::L1,
        Vertebra::L2,
        Vertebra::L3,
        Vertebra::L4,
        Vertebra::L5,
        Vertebra::S1,
    ];

    /// Lumbar-detector labels (everything above the sacrum).
    pub const LUMBAR: [Vertebra; 6] = [
        Vertebra::T12,
        Vertebra::L1,
        Vertebra::L2,
        Vertebra::L3,
        Vertebra::L4,
        Vertebra::L5,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Vertebra::T12 => "T12",
            Vertebra::L1 => "L1",
            Vertebra::L2 => "L2",
            Vertebra::L3 => "L3",
            Vertebra::L4 => "L4",
            Vertebra::L5 => "L5",
            Vertebra::S1 => "S1",
        }
    }

    pub fn is_sacral(self) -> bool {
        self == Vertebra::S1
    }
}

impl fmt::Display for Vertebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vertebra {
    type Err = ParseAnatomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Vertebra::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseAnatomyError {
                kind: "vertebra",
                text: s.to_string(),
            })
    }
}

/// Intervertebral disc level, ordered cranial to caudal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiscLevel {
    T12L1,
    L1L2,
    L2L3,
    L3L4,
    L4L5,
    L5S1,
}

impl DiscLevel {
    pub const ALL: [DiscLevel; 6] = [
        DiscLevel::T12L1,
        DiscLevel::L1L2,
        DiscLevel::L2L3,
        DiscLevel::L3L4,
        DiscLevel::L4L5,
        DiscLevel::L5S1,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DiscLevel::T12L1 => "T12L1",
            DiscLevel::L1L2 => "L1L2",
            DiscLevel::L2L3 => "L2L3",
            DiscLevel::L3L4 => "L3L4",
            DiscLevel::L4L5 => "L4L5",
            DiscLevel::L5S1 => "L5S1",
        }
    }

    /// The vertebrae above and below this disc.
    pub fn flanking(self) -> (Vertebra, Vertebra) {
        let i = self.index();
        (Vertebra::ALL[i], Vertebra::ALL[i + 1])
    }

    /// Disc level whose cranial neighbour is `upper`, if any.
    pub fn below(upper: Vertebra) -> Option<DiscLevel> {
        DiscLevel::ALL.get(upper.index()).copied()
    }
}

impl fmt::Display for DiscLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiscLevel {
    type Err = ParseAnatomyError;

    /// Accepts `L4L5`, `L4-L5`, `l4-5` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '/' | ' ' | '_'))
            .collect::<String>()
            .to_ascii_uppercase();
        DiscLevel::ALL
            .into_iter()
            .find(|level| {
                let (upper, lower) = level.flanking();
                let lower_short = &lower.name()[1..];
                compact == level.name() || compact == format!("{}{}", upper.name(), lower_short)
            })
            .ok_or_else(|| ParseAnatomyError {
                kind: "disc level",
                text: s.to_string(),
            })
    }
}

/// Where the stenosis is graded at a disc level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Site {
    /// Spinal canal stenosis.
    Scs,
    /// Right foraminal stenosis.
    Rfs,
    /// Left foraminal stenosis.
    Lfs,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Scs, Site::Rfs, Site::Lfs];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Site::Scs => "SCS",
            Site::Rfs => "RFS",
            Site::Lfs => "LFS",
        }
    }

    pub fn is_foraminal(self) -> bool {
        self != Site::Scs
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Site {
    type Err = ParseAnatomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Site::ALL
            .into_iter()
            .find(|site| site.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ParseAnatomyError {
                kind: "stenosis site",
                text: s.to_string(),
            })
    }
}

/// Ordinal stenosis grade: 0 normal, 1 mild, 2 moderate, 3 severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Grade(u8);

impl Grade {
    pub const NORMAL: Grade = Grade(0);
    pub const MILD: Grade = Grade(1);
    pub const MODERATE: Grade = Grade(2);
    pub const SEVERE: Grade = Grade(3);

    pub const COUNT: usize = 4;

    pub fn new(value: u8) -> Option<Grade> {
        (value < Self::COUNT as u8).then_some(Grade(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for Grade {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Grade::new(value).ok_or_else(|| format!("grade {value} outside 0..=3"))
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g.0
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
