//! Synthetic cohorts for desk-scale runs.
//!
//! Every culture gets its own subject, one or two notes on or before the
//! culture day, and sometimes a later note that linkage must ignore. For each
//! antibiotic a unit direction is drawn; a culture's latent vector is
//! isotropic unit Gaussian noise shifted by `±class_sep / 2` along each
//! antibiotic's direction according to its label. Note text is written as
//! hash-embedder tokens whose signed bucket counts approximate the latent
//! vector, and the emitted store holds exactly the hash embeddings of those
//! texts, so store mode and hash mode see identical features.

use std::collections::HashMap;

use chrono::{Duration, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::embed::{hash_embed, hash_token, EmbedError, EmbeddingStore, HASH_MODEL_ID};
use crate::ingest::DEFAULT_ANTIBIOTICS;
use crate::rng::{seeded, Rng};

/// Token repetitions per unit of latent value.
const COUNT_SCALE: f64 = 10.0;
/// Spread of each note around its culture's latent vector.
const NOTE_JITTER: f64 = 0.3;
const LATE_NOTE_PROBABILITY: f64 = 0.25;
const INTERMEDIATE_SHARE: f64 = 0.15;

const SPECIMENS: &[(&str, f64)] = &[
    ("SPUTUM", 0.305),
    ("URINE", 0.245),
    ("BLOOD CULTURE", 0.170),
    ("SWAB", 0.153),
    ("CATHETER TIP-IV", 0.044),
    ("PLEURAL FLUID", 0.057),
    ("TISSUE", 0.039),
    ("STOOL", 0.023),
];

const ORGANISMS: &[&str] = &[
    "ESCHERICHIA COLI",
    "STAPH AUREUS COAG +",
    "KLEBSIELLA PNEUMONIAE",
    "PSEUDOMONAS AERUGINOSA",
    "ENTEROCOCCUS SP.",
    "PROTEUS MIRABILIS",
];

const NOTE_CATEGORIES: &[&str] = &["Nursing", "Physician", "Radiology", "Discharge summary"];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("embedding error: {0}")]
    Embed(#[from] EmbedError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_cultures: usize,
    pub dim: usize,
    pub n_antibiotics: usize,
    /// Distance between the two class means along each antibiotic's direction,
    /// in units of the per-coordinate noise SD.
    pub class_sep: f64,
    /// Probability that a culture is resistant to a given antibiotic.
    pub label_balance: f64,
    pub seed: u64,
    /// Seed of the hash embedder the note text is written for.
    pub hash_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cultures: 2000,
            dim: crate::embed::DEFAULT_DIM,
            n_antibiotics: DEFAULT_ANTIBIOTICS.len(),
            class_sep: 2.0,
            label_balance: 0.5,
            seed: 0,
            hash_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |field, reason: &str| {
            Err(SynthError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if self.n_cultures < 20 {
            return bad("n_cultures", "must be at least 20");
        }
        if self.dim < 2 {
            return bad("dim", "must be at least 2");
        }
        if self.n_antibiotics == 0 {
            return bad("n_antibiotics", "must be positive");
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return bad("class_sep", "must be finite and non-negative");
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return bad("label_balance", "must be in (0, 1)");
        }
        Ok(())
    }
}

pub struct SynthOutput {
    pub microbiology_csv: String,
    pub notes_csv: String,
    pub store: EmbeddingStore,
    pub antibiotics: Vec<String>,
}

/// The first `n` default antibiotics, then generated names.
pub fn synth_antibiotics(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match DEFAULT_ANTIBIOTICS.get(i) {
            Some(name) => name.to_string(),
            None => format!("SYNTHETIC-{}", i + 1),
        })
        .collect()
}

/// One token per (bucket, sign) for the hash embedder with this dim and seed.
fn vocabulary(dim: usize, hash_seed: u64) -> Vec<[String; 2]> {
    let mut found: HashMap<(usize, bool), String> = HashMap::new();
    let mut k = 0u64;
    while found.len() < 2 * dim {
        let token = format!("t{k}");
        let (bucket, sign) = hash_token(&token, dim, hash_seed);
        found.entry((bucket, sign > 0.0)).or_insert(token);
        k += 1;
    }
    (0..dim)
        .map(|j| [found[&(j, true)].clone(), found[&(j, false)].clone()])
        .collect()
}

/// Text whose hash embedding points along `latent`.
fn encode_text(latent: &[f64], vocab: &[[String; 2]]) -> String {
    let mut counts: Vec<usize> = latent.iter().map(|v| (v.abs() * COUNT_SCALE).round() as usize).collect();
    if counts.iter().all(|&c| c == 0) {
        let (j, _) = latent
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("dim >= 2");
        counts[j] = 1;
    }
    let mut words = Vec::new();
    for (j, &c) in counts.iter().enumerate() {
        let token = &vocab[j][usize::from(latent[j] < 0.0)];
        words.extend(std::iter::repeat_n(token.as_str(), c));
    }
    words.join(" ")
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn pick_weighted<'a>(rng: &mut Rng, table: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (name, w) in table {
        if u < *w {
            return name;
        }
        u -= w;
    }
    table[table.len() - 1].0
}

/// Generates microbiology and note CSVs plus the matching embedding store.
/// Output is a pure function of the config.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let dim = config.dim;
    let mut rng = seeded(config.seed);
    let antibiotics = synth_antibiotics(config.n_antibiotics);
    let directions: Vec<Vec<f64>> = (0..antibiotics.len()).map(|_| unit_direction(&mut rng, dim)).collect();
    let vocab = vocabulary(dim, config.hash_seed);
    let base_date = NaiveDate::from_ymd_opt(2130, 1, 1).expect("valid date");

    let mut micro = csv::Writer::from_writer(Vec::new());
    micro.write_record(crate::ingest::parse::MICROBIOLOGY_HEADER)?;
    let mut notes = csv::Writer::from_writer(Vec::new());
    notes.write_record(crate::ingest::parse::NOTES_HEADER)?;
    let mut store = EmbeddingStore::new(dim, HASH_MODEL_ID)?;
    let mut next_note_id = 1u64;

    for c in 0..config.n_cultures {
        let subject_id = 10_000 + c as u64;
        let hadm_id = 200_000 + c as u64;
        let culture_id = 500_000 + c as u64;
        let culture_date = base_date + Duration::days((c % 365) as i64 + 7);
        let specimen = pick_weighted(&mut rng, SPECIMENS);
        let organism = ORGANISMS[rng.random_range(0..ORGANISMS.len())];

        let labels: Vec<bool> = antibiotics
            .iter()
            .map(|_| rng.random::<f64>() < config.label_balance)
            .collect();
        let mut latent = gaussian(&mut rng, dim);
        for (dir, &resistant) in directions.iter().zip(&labels) {
            let shift = if resistant { 0.5 } else { -0.5 } * config.class_sep;
            for (x, u) in latent.iter_mut().zip(dir) {
                *x += shift * u;
            }
        }

        let n_notes = 1 + usize::from(rng.random::<bool>());
        let mut note_plan: Vec<(NaiveDate, Vec<f64>)> = (0..n_notes)
            .map(|_| {
                let back = rng.random_range(0..=3);
                let jitter = gaussian(&mut rng, dim);
                let v = latent.iter().zip(&jitter).map(|(x, e)| x + NOTE_JITTER * e).collect();
                (culture_date - Duration::days(back), v)
            })
            .collect();
        if rng.random::<f64>() < LATE_NOTE_PROBABILITY {
            let ahead = rng.random_range(1..=3);
            note_plan.push((culture_date + Duration::days(ahead), gaussian(&mut rng, dim)));
        }
        for (date, v) in note_plan {
            let text = encode_text(&v, &vocab);
            let category = NOTE_CATEGORIES[rng.random_range(0..NOTE_CATEGORIES.len())];
            notes.write_record([
                next_note_id.to_string(),
                subject_id.to_string(),
                date.to_string(),
                category.to_string(),
                text.clone(),
            ])?;
            store.insert(next_note_id, hash_embed(&text, dim, config.hash_seed))?;
            next_note_id += 1;
        }

        for (ab, &resistant) in antibiotics.iter().zip(&labels) {
            let interpretation = if !resistant {
                "S"
            } else if rng.random::<f64>() < INTERMEDIATE_SHARE {
                "I"
            } else {
                "R"
            };
            micro.write_record([
                subject_id.to_string(),
                hadm_id.to_string(),
                culture_id.to_string(),
                culture_date.to_string(),
                specimen.to_string(),
                organism.to_string(),
                ab.clone(),
                interpretation.to_string(),
            ])?;
        }
    }

    let finish = |w: csv::Writer<Vec<u8>>| -> Result<String, SynthError> {
        let bytes = w.into_inner().map_err(|e| SynthError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("generated CSV is UTF-8"))
    };
    Ok(SynthOutput {
        microbiology_csv: finish(micro)?,
        notes_csv: finish(notes)?,
        store,
        antibiotics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_cultures: 60,
            dim: 8,
            n_antibiotics: 2,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&small(7)).unwrap();
        let b = synth_generate(&small(7)).unwrap();
        assert_eq!(a.microbiology_csv, b.microbiology_csv);
        assert_eq!(a.notes_csv, b.notes_csv);
        assert_eq!(a.store, b.store);
        let c = synth_generate(&small(8)).unwrap();
        assert_ne!(a.notes_csv, c.notes_csv);
    }

    #[test]
    fn vocabulary_hits_every_bucket_and_sign() {
        let vocab = vocabulary(16, 3);
        for (j, pair) in vocab.iter().enumerate() {
            assert_eq!(hash_token(&pair[0], 16, 3), (j, 1.0));
            assert_eq!(hash_token(&pair[1], 16, 3), (j, -1.0));
        }
    }

    #[test]
    fn text_round_trips_direction() {
        let vocab = vocabulary(4, 0);
        let text = encode_text(&[1.0, -0.5, 0.0, 0.2], &vocab);
        let v = hash_embed(&text, 4, 0);
        let expected = [10.0, -5.0, 0.0, 2.0];
        let norm = (100.0f64 + 25.0 + 4.0).sqrt();
        for (got, want) in v.as_slice().iter().zip(expected) {
            assert!((f64::from(*got) - want / norm).abs() < 1e-7);
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cases = [
            (SynthConfig { n_cultures: 19, ..small(0) }, "n_cultures"),
            (SynthConfig { dim: 1, ..small(0) }, "dim"),
            (SynthConfig { label_balance: 1.0, ..small(0) }, "label_balance"),
            (SynthConfig { class_sep: -1.0, ..small(0) }, "class_sep"),
        ];
        for (cfg, field) in cases {
            match synth_generate(&cfg) {
                Err(SynthError::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected config error for {field}, got {:?}", other.err()),
            }
        }
    }

    #[test]
    fn names_beyond_the_default_list() {
        let names = synth_antibiotics(9);
        assert_eq!(names[2], "MEROPENEM");
        assert_eq!(names[8], "SYNTHETIC-9");
    }
}
