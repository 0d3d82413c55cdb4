//! Antibiotic resistance prediction from clinical-note embeddings.
//!
//! The crate covers the whole offline pipeline: parsing microbiology and note
//! exports, linking notes to cultures, embedding and pooling notes, training
//! two binary classifiers (a one-hidden-layer MLP trained with Adam and
//! second-order gradient-boosted trees), and scoring them with stratified
//! k-fold cross-validation.

pub mod embed;
pub mod eval;
pub mod gbt;
pub mod ingest;
pub mod mlp;
pub mod report;
pub mod rng;
pub mod synth;

pub use embed::{EmbeddingStore, EmbeddingVector};
pub use ingest::{AntibioticDataset, BinaryLabel, ClinicalNote, Interpretation, SusceptibilityRecord};
