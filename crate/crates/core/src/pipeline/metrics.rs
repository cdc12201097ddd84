//! Accuracy, average precision and per-subset evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Model, Prediction, Sample};
use crate::error::{Error, Result};

/// Mean precision at the rank of each positive, ranking by descending
/// score with ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidTensor(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive sample"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// A named evaluation subset.
#[derive(Clone, Debug)]
pub struct Subset {
    pub name: String,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub name: String,
    /// Percent of samples classified correctly.
    pub acc: f64,
    /// Percent; absent when the subset has no fake sample.
    pub ap: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subsets: Vec<SubsetReport>,
    /// Unweighted mean over the reported subsets.
    pub mean_acc: f64,
    pub mean_ap: Option<f64>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetReport> {
        self.subsets.iter().find(|s| s.name == name)
    }

    /// Unweighted mean accuracy over the named subsets that were reported.
    pub fn mean_acc_of(&self, names: &[&str]) -> Option<f64> {
        let accs: Vec<f64> = names.iter().filter_map(|n| self.subset(n)).map(|s| s.acc).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// Scores every subset. Samples shared between subsets (same id) are run
/// through the model once.
pub fn evaluate(model: &Model, subsets: &[Subset]) -> Result<EvalReport> {
    let mut cache: BTreeMap<&str, Prediction> = BTreeMap::new();
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for subset in subsets {
        if subset.samples.is_empty() {
            warnings.push(format!("subset `{}` is empty and was skipped", subset.name));
            continue;
        }
        let mut preds = Vec::with_capacity(subset.samples.len());
        for s in &subset.samples {
            let p = match cache.get(s.id.as_str()) {
                Some(p) => *p,
                None => {
                    let p = model.predict(&s.image)?;
                    cache.insert(&s.id, p);
                    p
                }
            };
            preds.push(p);
        }
        let labels: Vec<u8> = subset.samples.iter().map(|s| s.label).collect();
        let correct = preds.iter().zip(&labels).filter(|(p, &y)| p.label == y).count();
        let scores: Vec<f64> = preds.iter().map(Prediction::score).collect();
        let ap = match average_precision(&scores, &labels) {
            Ok(ap) => Some(100.0 * ap),
            Err(Error::UndefinedMetric(_)) => {
                warnings.push(format!("subset `{}` has no fake sample; AP omitted", subset.name));
                None
            }
            Err(e) => return Err(e),
        };
        reports.push(SubsetReport {
            name: subset.name.clone(),
            acc: 100.0 * correct as f64 / labels.len() as f64,
            ap,
            n: labels.len(),
        });
    }
    if reports.is_empty() {
        return Err(Error::EmptyInput("evaluation subsets"));
    }
    let mean_acc = reports.iter().map(|r| r.acc).sum::<f64>() / reports.len() as f64;
    let aps: Vec<f64> = reports.iter().filter_map(|r| r.ap).collect();
    let mean_ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    Ok(EvalReport {
        subsets: reports,
        mean_acc,
        mean_ap,
        warnings,
    })
}
