use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::link::NoteIndex;
use super::{ClinicalNote, IngestError, SusceptibilityRecord};

const DEFAULT_TABLE: &str = include_str!("specimen_categories.csv");
const FALLBACK_CATEGORY: &str = "other";

/// Maps specimen descriptions to broad categories. Patterns match as
/// case-insensitive substrings and the first matching row wins; anything
/// unmatched is `other`.
#[derive(Clone, Debug)]
pub struct SpecimenCategories {
    rules: Vec<(String, String)>,
}

impl Default for SpecimenCategories {
    fn default() -> Self {
        Self::from_csv(DEFAULT_TABLE.as_bytes()).expect("bundled category table parses")
    }
}

impl SpecimenCategories {
    /// Reads a `pattern,category` table.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, IngestError> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?;
        if headers.len() != 2 || &headers[0] != "pattern" || &headers[1] != "category" {
            return Err(IngestError::Categories("expected header `pattern,category`".into()));
        }
        let mut rules = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 2 || rec[0].trim().is_empty() || rec[1].trim().is_empty() {
                let line = rec.position().map_or(0, |p| p.line());
                return Err(IngestError::Categories(format!("line {line}: expected two non-empty fields")));
            }
            rules.push((rec[0].trim().to_lowercase(), rec[1].trim().to_lowercase()));
        }
        Ok(SpecimenCategories { rules })
    }

    pub fn categorize(&self, specimen: &str) -> &str {
        let specimen = specimen.to_lowercase();
        self.rules
            .iter()
            .find(|(pattern, _)| specimen.contains(pattern.as_str()))
            .map_or(FALLBACK_CATEGORY, |(_, category)| category.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cultures_total: usize,
    pub cultures_included: usize,
    pub subjects: usize,
    pub notes_per_subject_median: f64,
    pub notes_per_subject_iqr: (f64, f64),
    pub source_distribution: BTreeMap<String, f64>,
}

/// Nearest-rank quantile: the value at 1-based rank `ceil(p * n)` of the
/// sorted data (rank at least 1). `sorted` must be non-empty.
fn nearest_rank(sorted: &[usize], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1] as f64
}

/// Cohort counts over the included cultures: those that grew an organism
/// and have at least one note on or before the culture day.
///
/// Notes-per-subject median and quartiles use nearest-rank order statistics,
/// counting all of a subject's notes.
pub fn cohort_summary(
    records: &[SusceptibilityRecord],
    notes: &[ClinicalNote],
    categories: &SpecimenCategories,
) -> CohortSummary {
    // One entry per culture; a culture counts as grown if any row names an organism.
    let mut cultures: BTreeMap<u64, (&SusceptibilityRecord, bool)> = BTreeMap::new();
    for rec in records {
        let entry = cultures.entry(rec.culture_id).or_insert((rec, false));
        entry.1 |= rec.organism_name.is_some();
    }
    let index = NoteIndex::new(notes);
    let included: Vec<&SusceptibilityRecord> = cultures
        .values()
        .filter(|(rec, grown)| *grown && !index.linked(rec.subject_id, rec.culture_date, None).is_empty())
        .map(|(rec, _)| *rec)
        .collect();

    let subjects: BTreeSet<u64> = included.iter().map(|r| r.subject_id).collect();
    let mut counts: Vec<usize> = subjects.iter().map(|&s| index.notes_for_subject(s)).collect();
    counts.sort_unstable();

    let mut source_distribution = BTreeMap::new();
    for rec in &included {
        *source_distribution
            .entry(categories.categorize(&rec.specimen_source).to_string())
            .or_insert(0.0) += 1.0;
    }
    for v in source_distribution.values_mut() {
        *v /= included.len() as f64;
    }

    let (median, iqr) = if counts.is_empty() {
        (0.0, (0.0, 0.0))
    } else {
        (
            nearest_rank(&counts, 0.5),
            (nearest_rank(&counts, 0.25), nearest_rank(&counts, 0.75)),
        )
    };
    CohortSummary {
        cultures_total: cultures.len(),
        cultures_included: included.len(),
        subjects: subjects.len(),
        notes_per_subject_median: median,
        notes_per_subject_iqr: iqr,
        source_distribution,
    }
}
