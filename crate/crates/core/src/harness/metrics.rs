use crate::error::{Error, Result};

/// Confusion counts `[true][predicted]`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut cm = vec![vec![0; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        cm[l][p] += 1;
    }
    cm
}

/// Mean per-class recall over the classes that occur in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "balanced accuracy needs equal-length non-empty inputs (got {} and {})",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.iter().chain(labels).any(|&c| c >= n_classes) {
        return Err(Error::InvalidArgument("class index out of range".into()));
    }
    let cm = confusion_matrix(predictions, labels, n_classes);
    let mut sum = 0.0;
    let mut present = 0;
    for (c, row) in cm.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support > 0 {
            sum += row[c] as f64 / support as f64;
            present += 1;
        }
    }
    Ok(sum / present as f64)
}
