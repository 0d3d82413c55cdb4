//! Microbiology and note ingestion, note-to-culture linkage, and per-antibiotic
//! dataset construction.

mod cohort;
mod dataset;
mod link;
pub(crate) mod parse;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use cohort::{cohort_summary, CohortSummary, SpecimenCategories};
pub use dataset::{
    build_dataset, linked_note_ids, AntibioticDataset, BuildOptions, BuildStats, DatasetRow,
};
pub use link::{link_notes, NoteIndex};
pub use parse::{parse_microbiology, parse_notes, ParseReport, RowError};

/// The seven antibiotics reported on, in canonical form.
pub const DEFAULT_ANTIBIOTICS: [&str; 7] = [
    "CEFTRIAXONE",
    "PIPERACILLIN/TAZOBACTAM",
    "MEROPENEM",
    "CEFTAZIDIME",
    "AMIKACIN",
    "TOBRAMYCIN",
    "VANCOMYCIN",
];

const ANTIBIOTIC_ALIASES: &[(&str, &str)] = &[
    ("ZOSYN", "PIPERACILLIN/TAZOBACTAM"),
    ("PIPERACILLIN/TAZO", "PIPERACILLIN/TAZOBACTAM"),
    ("PIPERACILLIN-TAZOBACTAM", "PIPERACILLIN/TAZOBACTAM"),
    ("PIP/TAZO", "PIPERACILLIN/TAZOBACTAM"),
];

/// Upper-cases and trims an antibiotic name and resolves brand or abbreviated
/// names through the alias table.
pub fn canonical_antibiotic(name: &str) -> String {
    let upper = name.trim().to_uppercase();
    ANTIBIOTIC_ALIASES
        .iter()
        .find(|(alias, _)| *alias == upper)
        .map(|(_, canonical)| (*canonical).to_string())
        .unwrap_or(upper)
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("schema error: expected header `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no embedding for linked note {note_id}")]
    MissingEmbedding { note_id: u64 },
    #[error("insufficient class support for {antibiotic}: {sensitive} sensitive, {resistant} resistant (need at least 2 of each)")]
    InsufficientClassSupport {
        antibiotic: String,
        sensitive: usize,
        resistant: usize,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("embedding error: {0}")]
    Embed(#[from] crate::embed::EmbedError),
    #[error("invalid specimen category table: {0}")]
    Categories(String),
}

/// Lab-reported susceptibility category. Ordered by severity, `S < I < R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Interpretation {
    S,
    I,
    R,
}

impl FromStr for Interpretation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S" => Ok(Interpretation::S),
            "I" => Ok(Interpretation::I),
            "R" => Ok(Interpretation::R),
            other => Err(format!("unknown interpretation `{other}`")),
        }
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Interpretation::S => "S",
            Interpretation::I => "I",
            Interpretation::R => "R",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    Sensitive = 0,
    Resistant = 1,
}

impl BinaryLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(BinaryLabel::Sensitive),
            1 => Some(BinaryLabel::Resistant),
            _ => None,
        }
    }
}

/// Intermediate results count as resistant.
pub fn derive_label(interpretation: Interpretation) -> BinaryLabel {
    match interpretation {
        Interpretation::S => BinaryLabel::Sensitive,
        Interpretation::I | Interpretation::R => BinaryLabel::Resistant,
    }
}

/// One culture tested against one antibiotic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SusceptibilityRecord {
    pub subject_id: u64,
    pub admission_id: Option<u64>,
    pub culture_id: u64,
    pub culture_date: NaiveDate,
    pub specimen_source: String,
    /// `None` when the culture grew nothing.
    pub organism_name: Option<String>,
    pub antibiotic_name: String,
    pub interpretation: Interpretation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: u64,
    pub subject_id: u64,
    pub note_date: NaiveDate,
    pub category: String,
    pub text: String,
}
