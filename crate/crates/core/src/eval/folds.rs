use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::EvalError;
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold id of each row.
    pub fold_of: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

fn class_counts(labels: &[u8]) -> Result<[usize; 2], EvalError> {
    let mut counts = [0usize; 2];
    for (i, &y) in labels.iter().enumerate() {
        *counts.get_mut(y as usize).ok_or(EvalError::BadLabel(i))? += 1;
    }
    Ok(counts)
}

fn check_classes(counts: [usize; 2], k: usize, warnings: &mut Vec<String>) -> Result<(), EvalError> {
    if counts[0] == 0 || counts[1] == 0 {
        return Err(EvalError::SingleClass);
    }
    for (class, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(EvalError::ClassTooSmall {
                class: class as u8,
                count,
            });
        }
        if count < k {
            let msg = format!("class {class} has {count} rows, fewer than k = {k}; some folds will lack it");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(())
}

/// Shuffles each class with the seeded generator and deals its rows to folds
/// round-robin. The dealing position carries over from class 0 to class 1 so
/// total fold sizes also differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    if k > labels.len() {
        return Err(EvalError::KExceedsRows { k, n: labels.len() });
    }
    let counts = class_counts(labels)?;
    let mut warnings = Vec::new();
    check_classes(counts, k, &mut warnings)?;

    let mut rng = seeded(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut cursor = 0;
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of, warnings })
}

/// Keeps every group (subject) inside a single fold. Groups are stratified
/// by their majority label (ties count as class 1), shuffled, and dealt
/// round-robin, so class balance is only approximate.
pub fn stratified_group_kfold(
    labels: &[u8],
    groups: &[u64],
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, EvalError> {
    if labels.len() != groups.len() {
        return Err(EvalError::LengthMismatch(labels.len(), groups.len()));
    }
    if k < 2 {
        return Err(EvalError::InvalidK(k));
    }
    let counts = class_counts(labels)?;
    let mut warnings = Vec::new();
    check_classes(counts, k, &mut warnings)?;

    let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if k > members.len() {
        return Err(EvalError::KExceedsGroups {
            k,
            groups: members.len(),
        });
    }
    let mut strata: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for (&g, rows) in &members {
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        strata[usize::from(2 * pos >= rows.len())].push(g);
    }

    let mut rng = seeded(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut cursor = 0;
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        for g in stratum.iter() {
            for &i in &members[g] {
                fold_of[i] = cursor % k;
            }
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of, warnings })
}
