use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cv::MetricSet;

/// Settings echoed into the report so every number can be traced back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub positive_class: String,
    pub group_by_subject: bool,
    pub permute_labels: bool,
    pub embedding_model_id: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntibioticSummary {
    pub name: String,
    pub folds: Vec<MetricSet>,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub f1_mean: f64,
    pub f1_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub antibiotics: Vec<AntibioticSummary>,
    /// Mean and SD over the per-antibiotic means.
    pub auc_macro_mean: f64,
    pub auc_macro_sd: f64,
    pub f1_macro_mean: f64,
    pub f1_macro_sd: f64,
    /// SD over every fold of every antibiotic.
    pub auc_pooled_sd: f64,
    pub f1_pooled_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: ReportConfig,
    pub models: Vec<ModelSummary>,
}

/// Population mean and SD (divisor n). Empty input gives zeros. The mean is
/// clamped to the sample range, which rounding can otherwise leave by an ulp.
fn mean_sd(values: impl IntoIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().into_iter().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let (lo, hi) = values
        .clone()
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mean = (values.clone().into_iter().sum::<f64>() / n as f64).clamp(lo, hi);
    let var = values.into_iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Folds `(model, antibiotic) → fold metrics` into per-antibiotic and
/// per-model summaries. Models and antibiotics come out in name order.
pub fn aggregate(results: &BTreeMap<(String, String), Vec<MetricSet>>, config: ReportConfig) -> CvReport {
    let mut by_model: BTreeMap<&str, Vec<AntibioticSummary>> = BTreeMap::new();
    for ((model, antibiotic), folds) in results {
        let (auc_mean, auc_sd) = mean_sd(folds.iter().map(|m| m.auc));
        let (f1_mean, f1_sd) = mean_sd(folds.iter().map(|m| m.f1));
        by_model.entry(model).or_default().push(AntibioticSummary {
            name: antibiotic.clone(),
            folds: folds.clone(),
            auc_mean,
            auc_sd,
            f1_mean,
            f1_sd,
        });
    }
    let models = by_model
        .into_iter()
        .map(|(name, antibiotics)| {
            let (auc_macro_mean, auc_macro_sd) = mean_sd(antibiotics.iter().map(|a| a.auc_mean));
            let (f1_macro_mean, f1_macro_sd) = mean_sd(antibiotics.iter().map(|a| a.f1_mean));
            let (_, auc_pooled_sd) = mean_sd(antibiotics.iter().flat_map(|a| a.folds.iter().map(|m| m.auc)));
            let (_, f1_pooled_sd) = mean_sd(antibiotics.iter().flat_map(|a| a.folds.iter().map(|m| m.f1)));
            ModelSummary {
                name: name.to_string(),
                antibiotics,
                auc_macro_mean,
                auc_macro_sd,
                f1_macro_mean,
                f1_macro_sd,
                auc_pooled_sd,
                f1_pooled_sd,
            }
        })
        .collect();
    CvReport { config, models }
}
