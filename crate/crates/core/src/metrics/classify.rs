use super::MetricError;

fn check_binary(labels: &[u8], n: usize) -> Result<(), MetricError> {
    if labels.len() != n {
        return Err(MetricError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricError::InvalidLabel(l as usize));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    check_binary(labels, scores.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::InvalidScore);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // 1-based average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUROC averaged over classes. `scores[i][c]` is the score of
/// sample `i` for class `c`.
pub fn auroc_macro(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let k = scores.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(MetricError::SingleClass);
    }
    let mut total = 0.0;
    for c in 0..k {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let bin: Vec<u8> = labels.iter().map(|&l| u8::from(l == c)).collect();
        total += auroc(&col, &bin)?;
    }
    Ok(total / k as f64)
}

pub fn accuracy(pred: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    if pred.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: pred.len(),
            right: labels.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// F1 of the positive class (label 1). Zero when there are no true positives.
pub fn f1(pred: &[u8], labels: &[u8]) -> Result<f64, MetricError> {
    check_binary(labels, pred.len())?;
    check_binary(pred, labels.len())?;
    let tp = pred.iter().zip(labels).filter(|&(&p, &l)| p == 1 && l == 1).count() as f64;
    let fp = pred.iter().zip(labels).filter(|&(&p, &l)| p == 1 && l == 0).count() as f64;
    let fneg = pred.iter().zip(labels).filter(|&(&p, &l)| p == 0 && l == 1).count() as f64;
    if tp == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fneg))
}
