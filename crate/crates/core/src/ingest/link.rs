use std::collections::HashMap;

use chrono::NaiveDate;

use super::{ClinicalNote, SusceptibilityRecord};

/// Notes grouped by subject and sorted by (note_date, note_id).
#[derive(Debug, Default)]
pub struct NoteIndex {
    by_subject: HashMap<u64, Vec<(NaiveDate, u64)>>,
}

impl NoteIndex {
    pub fn new(notes: &[ClinicalNote]) -> Self {
        let mut by_subject: HashMap<u64, Vec<(NaiveDate, u64)>> = HashMap::new();
        for note in notes {
            by_subject
                .entry(note.subject_id)
                .or_default()
                .push((note.note_date, note.note_id));
        }
        for list in by_subject.values_mut() {
            list.sort_unstable();
        }
        NoteIndex { by_subject }
    }

    /// Note ids for `subject_id` dated on or before `day`, ascending by
    /// (date, id). With `max_notes` only the most recent `max_notes` are kept.
    pub fn linked(&self, subject_id: u64, day: NaiveDate, max_notes: Option<usize>) -> Vec<u64> {
        let Some(list) = self.by_subject.get(&subject_id) else {
            return Vec::new();
        };
        let end = list.partition_point(|(date, _)| *date <= day);
        let start = max_notes.map_or(0, |cap| end.saturating_sub(cap));
        list[start..end].iter().map(|(_, id)| *id).collect()
    }

    pub fn notes_for_subject(&self, subject_id: u64) -> usize {
        self.by_subject.get(&subject_id).map_or(0, Vec::len)
    }
}

/// Notes of the culture's subject written on or before the culture day.
pub fn link_notes(culture: &SusceptibilityRecord, notes: &[ClinicalNote]) -> Vec<u64> {
    NoteIndex::new(notes).linked(culture.subject_id, culture.culture_date, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Interpretation;
    use proptest::prelude::*;

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2130, m, d).unwrap()
    }

    fn note(note_id: u64, subject_id: u64, note_date: NaiveDate) -> ClinicalNote {
        ClinicalNote {
            note_id,
            subject_id,
            note_date,
            category: "Nursing".into(),
            text: "x".into(),
        }
    }

    fn culture(subject_id: u64, culture_date: NaiveDate) -> SusceptibilityRecord {
        SusceptibilityRecord {
            subject_id,
            admission_id: None,
            culture_id: 1,
            culture_date,
            specimen_source: "BLOOD".into(),
            organism_name: Some("E COLI".into()),
            antibiotic_name: "MEROPENEM".into(),
            interpretation: Interpretation::S,
        }
    }

    #[test]
    fn culture_day_is_inclusive() {
        let notes = vec![note(3, 1, date(5, 3)), note(2, 1, date(5, 2)), note(1, 1, date(5, 1))];
        assert_eq!(link_notes(&culture(1, date(5, 2)), &notes), vec![1, 2]);
    }

    #[test]
    fn other_subjects_ignored() {
        let notes = vec![note(1, 2, date(5, 1))];
        assert!(link_notes(&culture(1, date(5, 2)), &notes).is_empty());
    }

    #[test]
    fn same_day_ordered_by_id() {
        let notes = vec![note(9, 1, date(5, 1)), note(4, 1, date(5, 1))];
        assert_eq!(link_notes(&culture(1, date(5, 1)), &notes), vec![4, 9]);
    }

    #[test]
    fn cap_keeps_most_recent() {
        let notes = vec![note(1, 1, date(5, 1)), note(2, 1, date(5, 2)), note(3, 1, date(5, 3))];
        let index = NoteIndex::new(&notes);
        assert_eq!(index.linked(1, date(5, 3), Some(2)), vec![2, 3]);
        assert_eq!(index.linked(1, date(5, 3), Some(0)), Vec::<u64>::new());
    }

    proptest! {
        #[test]
        fn never_links_future_notes(
            offsets in prop::collection::vec((0i64..60, 0u64..3), 0..40),
            culture_offset in 0i64..60,
        ) {
            let base = date(1, 1);
            let notes: Vec<_> = offsets
                .iter()
                .enumerate()
                .map(|(i, (off, subj))| note(i as u64, *subj, base + chrono::Duration::days(*off)))
                .collect();
            let c = culture(1, base + chrono::Duration::days(culture_offset));
            let linked = link_notes(&c, &notes);
            for id in &linked {
                let n = &notes[*id as usize];
                prop_assert!(n.note_date <= c.culture_date);
                prop_assert_eq!(n.subject_id, 1);
            }
            let expected = notes
                .iter()
                .filter(|n| n.subject_id == 1 && n.note_date <= c.culture_date)
                .count();
            prop_assert_eq!(linked.len(), expected);
        }
    }
}
