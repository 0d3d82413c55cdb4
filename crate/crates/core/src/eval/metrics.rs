use super::EvalError;

/// ROC AUC via the Mann-Whitney statistic with midranks, so tied scores
/// contribute one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(EvalError::BadLabel(i));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their average.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// 1 where `p >= threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Score {
    pub value: f64,
    /// No predicted and no actual positives; `value` is then 0.
    pub degenerate: bool,
}

/// `2TP / (2TP + FP + FN)` with respect to `positive_class`.
pub fn f1(preds: &[u8], labels: &[u8], positive_class: u8) -> F1Score {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == positive_class, y == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        F1Score {
            value: 0.0,
            degenerate: true,
        }
    } else {
        F1Score {
            value: (2 * tp) as f64 / denom as f64,
            degenerate: false,
        }
    }
}
