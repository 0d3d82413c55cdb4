use std::cmp::Reverse;
use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::NaiveDate;

use super::{canonical_antibiotic, ClinicalNote, IngestError, Interpretation, SusceptibilityRecord};

pub const MICROBIOLOGY_HEADER: [&str; 8] = [
    "subject_id",
    "hadm_id",
    "culture_id",
    "chartdate",
    "spec_type_desc",
    "org_name",
    "ab_name",
    "interpretation",
];

pub const NOTES_HEADER: [&str; 5] = ["note_id", "subject_id", "chartdate", "category", "text"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Parsed items plus the rows that were dropped on the way.
#[derive(Clone, Debug)]
pub struct ParseReport<T> {
    pub items: Vec<T>,
    /// Rows dropped by a filter rule (blank antibiotic or interpretation, empty note text).
    pub skipped: usize,
    /// Rows that could not be parsed.
    pub row_errors: Vec<RowError>,
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), IngestError> {
    let headers = reader.headers()?;
    let ok = headers.len() == expected.len()
        && headers
            .iter()
            .zip(expected)
            .all(|(h, e)| h.trim().eq_ignore_ascii_case(e));
    if ok {
        Ok(())
    } else {
        Err(IngestError::Schema {
            expected: expected.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input)
}

/// Accepts `YYYY-MM-DD`, optionally followed by a time of day which is ignored.
pub(crate) fn parse_date(raw: &str) -> Result<NaiveDate, String> {
    let raw = raw.trim();
    let day = match raw.char_indices().nth(10) {
        Some((i, ' ' | 'T')) => &raw[..i],
        _ => raw,
    };
    NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|e| format!("bad date `{raw}`: {e}"))
}

fn parse_id(raw: &str, field: &str) -> Result<u64, String> {
    raw.trim()
        .parse()
        .map_err(|_| format!("bad {field} `{}`", raw.trim()))
}

fn non_blank(raw: &str) -> Option<String> {
    let t = raw.trim();
    (!t.is_empty()).then(|| t.to_string())
}

enum Row<T> {
    Item(T),
    Skip,
}

fn micro_row(rec: &csv::StringRecord) -> Result<Row<SusceptibilityRecord>, String> {
    if rec.len() != MICROBIOLOGY_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            MICROBIOLOGY_HEADER.len(),
            rec.len()
        ));
    }
    let ab_name = rec[6].trim();
    let interp = rec[7].trim();
    if ab_name.is_empty() || interp.is_empty() {
        return Ok(Row::Skip);
    }
    let admission_id = match rec[1].trim() {
        "" => None,
        v => Some(parse_id(v, "hadm_id")?),
    };
    Ok(Row::Item(SusceptibilityRecord {
        subject_id: parse_id(&rec[0], "subject_id")?,
        admission_id,
        culture_id: parse_id(&rec[2], "culture_id")?,
        culture_date: parse_date(&rec[3])?,
        specimen_source: rec[4].trim().to_string(),
        organism_name: non_blank(&rec[5]),
        antibiotic_name: canonical_antibiotic(ab_name),
        interpretation: interp.parse()?,
    }))
}

/// Total precedence between two rows for the same (culture, antibiotic):
/// the most severe interpretation wins, and remaining fields only break ties
/// so that the outcome does not depend on row order.
#[allow(clippy::type_complexity)]
fn precedence(
    r: &SusceptibilityRecord,
) -> (
    Interpretation,
    bool,
    Reverse<(&Option<String>, &str, NaiveDate, u64, Option<u64>)>,
) {
    (
        r.interpretation,
        r.organism_name.is_some(),
        Reverse((
            &r.organism_name,
            r.specimen_source.as_str(),
            r.culture_date,
            r.subject_id,
            r.admission_id,
        )),
    )
}

/// Parses a microbiology export. Duplicate (culture, antibiotic) rows collapse
/// to the worst-case interpretation (R > I > S). Output is sorted by
/// (culture_id, antibiotic_name).
pub fn parse_microbiology<R: Read>(
    input: R,
) -> Result<ParseReport<SusceptibilityRecord>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &MICROBIOLOGY_HEADER)?;

    let mut merged: BTreeMap<(u64, String), SusceptibilityRecord> = BTreeMap::new();
    let mut skipped = 0;
    let mut row_errors = Vec::new();
    for result in reader.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line());
        match micro_row(&rec) {
            Ok(Row::Skip) => skipped += 1,
            Ok(Row::Item(item)) => {
                let key = (item.culture_id, item.antibiotic_name.clone());
                match merged.get_mut(&key) {
                    Some(existing) => {
                        if precedence(&item) > precedence(existing) {
                            *existing = item;
                        }
                    }
                    None => {
                        merged.insert(key, item);
                    }
                }
            }
            Err(message) => row_errors.push(RowError { line, message }),
        }
    }
    Ok(ParseReport {
        items: merged.into_values().collect(),
        skipped,
        row_errors,
    })
}

fn note_row(rec: &csv::StringRecord) -> Result<Row<ClinicalNote>, String> {
    if rec.len() != NOTES_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            NOTES_HEADER.len(),
            rec.len()
        ));
    }
    if rec[4].trim().is_empty() {
        return Ok(Row::Skip);
    }
    Ok(Row::Item(ClinicalNote {
        note_id: parse_id(&rec[0], "note_id")?,
        subject_id: parse_id(&rec[1], "subject_id")?,
        note_date: parse_date(&rec[2])?,
        category: rec[3].trim().to_string(),
        text: rec[4].to_string(),
    }))
}

/// Parses a note export. Notes with blank text are skipped; a repeated
/// note_id is a row error and the later row is dropped.
pub fn parse_notes<R: Read>(input: R) -> Result<ParseReport<ClinicalNote>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &NOTES_HEADER)?;

    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = 0;
    let mut row_errors = Vec::new();
    for result in reader.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line());
        match note_row(&rec) {
            Ok(Row::Skip) => skipped += 1,
            Ok(Row::Item(note)) => {
                if seen.insert(note.note_id) {
                    items.push(note);
                } else {
                    row_errors.push(RowError {
                        line,
                        message: format!("duplicate note_id {}", note.note_id),
                    });
                }
            }
            Err(message) => row_errors.push(RowError { line, message }),
        }
    }
    Ok(ParseReport {
        items,
        skipped,
        row_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MICRO_HEADER: &str =
        "subject_id,hadm_id,culture_id,chartdate,spec_type_desc,org_name,ab_name,interpretation\n";

    #[test]
    fn direct_field_mapping() {
        let csv = format!("{MICRO_HEADER}1,10,100,2130-05-02,BLOOD,E COLI,MEROPENEM,S\n");
        let out = parse_microbiology(csv.as_bytes()).unwrap();
        assert_eq!(out.items.len(), 1);
        let r = &out.items[0];
        assert_eq!(r.subject_id, 1);
        assert_eq!(r.admission_id, Some(10));
        assert_eq!(r.culture_id, 100);
        assert_eq!(r.culture_date, NaiveDate::from_ymd_opt(2130, 5, 2).unwrap());
        assert_eq!(r.specimen_source, "BLOOD");
        assert_eq!(r.organism_name.as_deref(), Some("E COLI"));
        assert_eq!(r.antibiotic_name, "MEROPENEM");
        assert_eq!(r.interpretation, Interpretation::S);
    }

    #[test]
    fn duplicates_keep_worst_case() {
        let csv = format!(
            "{MICRO_HEADER}1,10,100,2130-05-02,BLOOD,E COLI,MEROPENEM,S\n\
             1,10,100,2130-05-02,BLOOD,E COLI,meropenem ,R\n\
             1,10,100,2130-05-02,BLOOD,E COLI,MEROPENEM,I\n"
        );
        let out = parse_microbiology(csv.as_bytes()).unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].interpretation, Interpretation::R);
    }

    #[test]
    fn header_only_is_empty() {
        let out = parse_microbiology(MICRO_HEADER.as_bytes()).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.skipped, 0);
        assert!(out.row_errors.is_empty());
    }

    #[test]
    fn malformed_header_is_fatal() {
        let err = parse_microbiology("a,b,c\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Schema { .. }));
        let err = parse_notes("note_id,subject_id,chartdate,text\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Schema { .. }));
    }

    #[test]
    fn blank_fields_are_skipped_and_bad_dates_reported() {
        let csv = format!(
            "{MICRO_HEADER}1,,100,2130-05-02,BLOOD,,,\n\
             1,,100,2130-05-02,BLOOD,E COLI,MEROPENEM,\n\
             1,,101,2130-13-40,BLOOD,E COLI,MEROPENEM,S\n\
             2,,102,2130-05-03 00:00:00,URINE,,VANCOMYCIN,i\n"
        );
        let out = parse_microbiology(csv.as_bytes()).unwrap();
        assert_eq!(out.skipped, 2);
        assert_eq!(out.row_errors.len(), 1);
        assert_eq!(out.row_errors[0].line, 4);
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].admission_id, None);
        assert_eq!(out.items[0].organism_name, None);
        assert_eq!(out.items[0].interpretation, Interpretation::I);
    }

    #[test]
    fn notes_with_quoted_newlines() {
        let csv = "note_id,subject_id,chartdate,category,text\n\
                   1,7,2130-05-01,Nursing,plain\n\
                   2,7,2130-05-02,Physician,\"line one,\nline \"\"two\"\"\"\n\
                   3,8,2130-05-02,Radiology,  \n\
                   4,8,2130-05-02,Radiology,x\n";
        let out = parse_notes(csv.as_bytes()).unwrap();
        assert_eq!(out.items.len(), 3);
        assert_eq!(out.skipped, 1);
        assert_eq!(out.items[1].text, "line one,\nline \"two\"");
    }

    #[test]
    fn duplicate_note_id_is_row_error() {
        let csv = "note_id,subject_id,chartdate,category,text\n\
                   1,7,2130-05-01,Nursing,a\n\
                   1,7,2130-05-02,Nursing,b\n";
        let out = parse_notes(csv.as_bytes()).unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.row_errors.len(), 1);
    }
}
