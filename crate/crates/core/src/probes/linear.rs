use serde::{Deserialize, Serialize};

use super::{fit_logistic, probe_feature_matrix, LogisticConfig, ProbeError, Standardizer};
use crate::gazedata::SyntheticDataset;
use crate::metrics::{accuracy, auroc, f1};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub auroc: f64,
    /// Same classifier with the readout half set to its training mean.
    pub auroc_half_b_zeroed: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Standardized frozen features, a logistic classifier fit on `train`, and
/// scores on `test`.
pub fn linear_probe(
    model: &Model,
    train: &SyntheticDataset,
    test: &SyntheticDataset,
    config: &LogisticConfig,
) -> Result<ProbeReport, ProbeError> {
    let raw_train = probe_feature_matrix(model, &train.images)?;
    let raw_test = probe_feature_matrix(model, &test.images)?;
    let (x_train, x_test, _) = Standardizer::fit_transform(&raw_train, &raw_test)?;
    let clf = fit_logistic(&x_train, &train.labels, config)?;

    let scores: Vec<f64> = x_test.iter().map(|x| clf.decision(x)).collect();
    let preds: Vec<u8> = x_test.iter().map(|x| clf.predict(x)).collect();
    let d = model.config.embed_dim;
    let zeroed: Vec<f64> = x_test
        .iter()
        .map(|x| {
            let mut x = x.clone();
            x[d..].iter_mut().for_each(|v| *v = 0.0);
            clf.decision(&x)
        })
        .collect();
    Ok(ProbeReport {
        auroc: auroc(&scores, &test.labels)?,
        auroc_half_b_zeroed: auroc(&zeroed, &test.labels)?,
        accuracy: accuracy(&preds, &test.labels)?,
        f1: f1(&preds, &test.labels)?,
        n_train: train.len(),
        n_test: test.len(),
        feature_dim: 2 * d,
        iterations: clf.iterations,
        converged: clf.converged,
    })
}
