use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{stratified_group_kfold, stratified_kfold};
use super::metrics::{binarize, f1, roc_auc};
use super::EvalError;
use crate::gbt::{self, GbtConfig};
use crate::ingest::{AntibioticDataset, BinaryLabel};
use crate::mlp::{self, MlpConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum Learner {
    Mlp(MlpConfig),
    Gbt(GbtConfig),
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Mlp(_) => "mlp",
            Learner::Gbt(_) => "gbt",
        }
    }

    /// Trains on `x_train` with the given seed and scores `x_test`.
    fn fit_predict(
        &self,
        x_train: &[f64],
        y_train: &[u8],
        x_test: &[f64],
        dim: usize,
        seed: u64,
    ) -> Result<Vec<f64>, String> {
        match self {
            Learner::Mlp(cfg) => {
                let cfg = MlpConfig { seed, ..cfg.clone() };
                let model = mlp::train_matrix(x_train, dim, y_train, &cfg).map_err(|e| e.to_string())?;
                model.predict_matrix(x_test).map_err(|e| e.to_string())
            }
            Learner::Gbt(cfg) => {
                let cfg = GbtConfig { seed, ..cfg.clone() };
                let model = gbt::fit_matrix(x_train, dim, y_train, &cfg).map_err(|e| e.to_string())?;
                model.predict_matrix(x_test).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub positive_class: BinaryLabel,
    /// Keep all cultures of a subject in the same fold.
    pub group_by_subject: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 10,
            seed: 0,
            threshold: 0.5,
            positive_class: BinaryLabel::Resistant,
            group_by_subject: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: f64,
    pub f1: f64,
    pub n_test: usize,
    /// Test rows belonging to the positive class.
    pub n_pos_test: usize,
}

/// Stratified k-fold cross-validation. Fold `f` trains a fresh learner with
/// seed `options.seed + f`; results come back in fold order regardless of
/// how the folds were scheduled.
pub fn cross_validate(
    dataset: &AntibioticDataset,
    learner: &Learner,
    options: &CvOptions,
) -> Result<Vec<MetricSet>, EvalError> {
    let labels = dataset.labels();
    let folds = if options.group_by_subject {
        stratified_group_kfold(&labels, &dataset.subjects(), options.k, options.seed)?
    } else {
        stratified_kfold(&labels, options.k, options.seed)?
    };
    let positive = options.positive_class.as_u8();
    let dim = dataset.dim();

    (0..options.k)
        .into_par_iter()
        .map(|fold| {
            let fail = |message: String| EvalError::Fold { fold, message };
            let train = folds.train_indices(fold);
            let test = folds.test_indices(fold);
            if test.is_empty() {
                return Err(fail("empty test fold".into()));
            }
            let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let y_test: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
            let probs = learner
                .fit_predict(
                    &dataset.feature_matrix(&train),
                    &y_train,
                    &dataset.feature_matrix(&test),
                    dim,
                    options.seed.wrapping_add(fold as u64),
                )
                .map_err(fail)?;
            let auc = roc_auc(&probs, &y_test).map_err(|e| fail(e.to_string()))?;
            let score = f1(&binarize(&probs, options.threshold), &y_test, positive);
            if score.degenerate {
                log::warn!(
                    "{} fold {fold}: no predicted or actual positives, F1 set to 0",
                    dataset.antibiotic_name()
                );
            }
            Ok(MetricSet {
                auc,
                f1: score.value,
                n_test: test.len(),
                n_pos_test: y_test.iter().filter(|&&y| y == positive).count(),
            })
        })
        .collect()
}
