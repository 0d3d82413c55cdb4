use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::link::NoteIndex;
use super::{canonical_antibiotic, derive_label, BinaryLabel, IngestError, SusceptibilityRecord};
use crate::embed::{pool, EmbeddingStore, EmbeddingVector, Pooling};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRow {
    pub culture_id: u64,
    pub subject_id: u64,
    pub feature: EmbeddingVector,
    pub label: BinaryLabel,
}

/// Pooled note embeddings and binary labels for one antibiotic.
///
/// Construction validates that every feature has length `dim`, that
/// culture ids are unique, and that each class has at least two rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AntibioticDataset {
    antibiotic_name: String,
    dim: usize,
    rows: Vec<DatasetRow>,
}

impl AntibioticDataset {
    pub fn new(
        antibiotic_name: impl Into<String>,
        dim: usize,
        rows: Vec<DatasetRow>,
    ) -> Result<Self, IngestError> {
        let antibiotic_name = antibiotic_name.into();
        if dim == 0 {
            return Err(IngestError::InvalidDataset("dim must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for row in &rows {
            if row.feature.dim() != dim {
                return Err(IngestError::InvalidDataset(format!(
                    "culture {} has feature length {}, expected {dim}",
                    row.culture_id,
                    row.feature.dim()
                )));
            }
            if !seen.insert(row.culture_id) {
                return Err(IngestError::InvalidDataset(format!(
                    "culture {} appears twice",
                    row.culture_id
                )));
            }
        }
        let resistant = rows.iter().filter(|r| r.label == BinaryLabel::Resistant).count();
        let sensitive = rows.len() - resistant;
        if resistant < 2 || sensitive < 2 {
            return Err(IngestError::InsufficientClassSupport {
                antibiotic: antibiotic_name,
                sensitive,
                resistant,
            });
        }
        Ok(AntibioticDataset {
            antibiotic_name,
            dim,
            rows,
        })
    }

    pub fn antibiotic_name(&self) -> &str {
        &self.antibiotic_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[DatasetRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Labels as 0/1.
    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label.as_u8()).collect()
    }

    pub fn subjects(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.subject_id).collect()
    }

    /// Row-major f64 feature matrix of the selected rows.
    pub fn feature_matrix(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend(self.rows[i].feature.as_slice().iter().map(|&v| f64::from(v)));
        }
        out
    }

    /// Same features with the labels randomly permuted across rows. Class
    /// counts are preserved, so the result is always valid.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut labels: Vec<BinaryLabel> = self.rows.iter().map(|r| r.label).collect();
        labels.shuffle(&mut crate::rng::seeded(seed));
        let rows = self
            .rows
            .iter()
            .zip(labels)
            .map(|(r, label)| DatasetRow { label, ..r.clone() })
            .collect();
        AntibioticDataset {
            antibiotic_name: self.antibiotic_name.clone(),
            dim: self.dim,
            rows,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    pub pooling: Pooling,
    /// Keep only the most recent N linked notes per culture.
    pub max_notes: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildStats {
    /// Cultures tested against the antibiotic.
    pub tested: usize,
    pub excluded_no_growth: usize,
    pub excluded_no_notes: usize,
    pub included: usize,
}

/// Builds the dataset for one antibiotic: one row per culture that was tested
/// against it, grew an organism, and has at least one linked note. The
/// feature is the pooled embedding of the linked notes.
///
/// `records` are expected to be deduplicated (as returned by the parser).
pub fn build_dataset(
    antibiotic: &str,
    records: &[SusceptibilityRecord],
    notes: &NoteIndex,
    store: &EmbeddingStore,
    options: BuildOptions,
) -> Result<(AntibioticDataset, BuildStats), IngestError> {
    let antibiotic = canonical_antibiotic(antibiotic);
    let mut stats = BuildStats::default();
    let mut rows = Vec::new();
    for rec in records.iter().filter(|r| r.antibiotic_name == antibiotic) {
        stats.tested += 1;
        if rec.organism_name.is_none() {
            stats.excluded_no_growth += 1;
            continue;
        }
        let linked = notes.linked(rec.subject_id, rec.culture_date, options.max_notes);
        if linked.is_empty() {
            stats.excluded_no_notes += 1;
            continue;
        }
        let vectors = linked
            .iter()
            .map(|&note_id| store.get(note_id).ok_or(IngestError::MissingEmbedding { note_id }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(DatasetRow {
            culture_id: rec.culture_id,
            subject_id: rec.subject_id,
            feature: pool(&vectors, options.pooling)?,
            label: derive_label(rec.interpretation),
        });
    }
    rows.sort_by_key(|r| r.culture_id);
    stats.included = rows.len();
    let dataset = AntibioticDataset::new(antibiotic, store.dim(), rows)?;
    Ok((dataset, stats))
}

/// Every note id that some included culture of the given antibiotics links
/// to; the set that has to be embedded.
pub fn linked_note_ids(
    antibiotics: &[String],
    records: &[SusceptibilityRecord],
    notes: &NoteIndex,
    max_notes: Option<usize>,
) -> BTreeSet<u64> {
    let wanted: BTreeSet<String> = antibiotics.iter().map(|a| canonical_antibiotic(a)).collect();
    records
        .iter()
        .filter(|r| r.organism_name.is_some() && wanted.contains(&r.antibiotic_name))
        .flat_map(|r| notes.linked(r.subject_id, r.culture_date, max_notes))
        .collect()
}
