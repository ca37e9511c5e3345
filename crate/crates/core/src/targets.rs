//! Training and evaluation targets built from annotation lists.
//!
//! Majority ties, both in targets and in predictions, resolve to the lowest
//! class index.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::simulate::AnnotatorSubset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "LD")]
    Ld,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Ml => "ML",
            TrainMode::Ld => "LD",
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ML" => Ok(TrainMode::Ml),
            "LD" => Ok(TrainMode::Ld),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "LD")]
    Ld,
    #[serde(rename = "AbsoluteGT")]
    AbsoluteGt,
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax_lowest(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

fn argmax_slice(values: &[f64]) -> usize {
    argmax_lowest(ArrayView1::from(values))
}

fn is_tied(values: &[f64]) -> bool {
    let best = values[argmax_slice(values)];
    values.iter().filter(|&&v| v == best).count() > 1
}

fn check_annotations(annotations: &[usize], num_classes: usize) -> Result<()> {
    if annotations.is_empty() {
        return Err(Error::InvalidArgument("empty annotation list".into()));
    }
    if let Some(bad) = annotations.iter().find(|&&a| a >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "class index {bad} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

/// Relative frequency of each class among `annotations`.
pub fn label_distribution(annotations: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    check_annotations(annotations, num_classes)?;
    let mut counts = vec![0.0; num_classes];
    for &a in annotations {
        counts[a] += 1.0;
    }
    let k = annotations.len() as f64;
    Ok(counts.into_iter().map(|c| c / k).collect())
}

pub fn majority_label(annotations: &[usize], num_classes: usize) -> Result<usize> {
    Ok(argmax_slice(&label_distribution(annotations, num_classes)?))
}

fn distribution_of_counts(counts: &[u32]) -> Vec<f64> {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    counts.iter().map(|&c| f64::from(c) / total as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainTargets {
    Majority {
        num_classes: usize,
        labels: Vec<usize>,
        ties: usize,
    },
    Distribution {
        num_classes: usize,
        distributions: Vec<Vec<f64>>,
        ties: usize,
    },
}

impl TrainTargets {
    pub fn from_subset(subset: &AnnotatorSubset, mode: TrainMode) -> Result<Self> {
        let c = subset.num_classes;
        let dists = subset
            .records
            .iter()
            .map(|r| label_distribution(&r.annotations, c))
            .collect::<Result<Vec<_>>>()?;
        let ties = dists.iter().filter(|d| is_tied(d)).count();
        Ok(match mode {
            TrainMode::Ml => TrainTargets::Majority {
                num_classes: c,
                labels: dists.iter().map(|d| argmax_slice(d)).collect(),
                ties,
            },
            TrainMode::Ld => TrainTargets::Distribution {
                num_classes: c,
                distributions: dists,
                ties,
            },
        })
    }

    /// Targets from explicit class labels.
    pub fn majority(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "class index {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(TrainTargets::Majority {
            num_classes,
            labels,
            ties: 0,
        })
    }

    /// Targets from explicit distributions; each must lie on the simplex.
    pub fn distributions(distributions: Vec<Vec<f64>>, num_classes: usize) -> Result<Self> {
        for (i, d) in distributions.iter().enumerate() {
            let sum: f64 = d.iter().sum();
            if d.len() != num_classes
                || d.iter().any(|&p| !p.is_finite() || p < 0.0)
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidArgument(format!(
                    "target {i} is not a probability vector over {num_classes} classes"
                )));
            }
        }
        let ties = distributions.iter().filter(|d| is_tied(d)).count();
        Ok(TrainTargets::Distribution {
            num_classes,
            distributions,
            ties,
        })
    }

    pub fn mode(&self) -> TrainMode {
        match self {
            TrainTargets::Majority { .. } => TrainMode::Ml,
            TrainTargets::Distribution { .. } => TrainMode::Ld,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TrainTargets::Majority { num_classes, .. }
            | TrainTargets::Distribution { num_classes, .. } => *num_classes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainTargets::Majority { labels, .. } => labels.len(),
            TrainTargets::Distribution { distributions, .. } => distributions.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instances whose annotation majority was a tie.
    pub fn ties(&self) -> usize {
        match self {
            TrainTargets::Majority { ties, .. } | TrainTargets::Distribution { ties, .. } => *ties,
        }
    }

    /// Gold class per instance: the majority label, or the argmax of the
    /// target distribution.
    pub fn gold(&self) -> Vec<usize> {
        match self {
            TrainTargets::Majority { labels, .. } => labels.clone(),
            TrainTargets::Distribution { distributions, .. } => {
                distributions.iter().map(|d| argmax_slice(d)).collect()
            }
        }
    }

    /// Row-per-instance target distributions; majority labels become one-hot rows.
    pub fn to_matrix(&self) -> Array2<f64> {
        let c = self.num_classes();
        let mut out = Array2::zeros((self.len(), c));
        match self {
            TrainTargets::Majority { labels, .. } => {
                for (i, &l) in labels.iter().enumerate() {
                    out[[i, l]] = 1.0;
                }
            }
            TrainTargets::Distribution { distributions, .. } => {
                for (i, d) in distributions.iter().enumerate() {
                    for (j, &p) in d.iter().enumerate() {
                        out[[i, j]] = p;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTargets {
    pub mode: EvalMode,
    /// Class each prediction is compared against.
    pub labels: Vec<usize>,
    /// Full target distribution per instance.
    pub distributions: Vec<Vec<f64>>,
    /// Instances whose target label came from a tie-break.
    pub ties: usize,
}

impl EvalTargets {
    fn from_distributions(mode: EvalMode, distributions: Vec<Vec<f64>>) -> Self {
        let labels = distributions.iter().map(|d| argmax_slice(d)).collect();
        let ties = distributions.iter().filter(|d| is_tied(d)).count();
        Self {
            mode,
            labels,
            distributions,
            ties,
        }
    }

    /// Targets from the `k` simulated annotations of each instance.
    pub fn from_subset(subset: &AnnotatorSubset, mode: TrainMode) -> Result<Self> {
        let dists = subset
            .records
            .iter()
            .map(|r| label_distribution(&r.annotations, subset.num_classes))
            .collect::<Result<Vec<_>>>()?;
        let mode = match mode {
            TrainMode::Ml => EvalMode::Ml,
            TrainMode::Ld => EvalMode::Ld,
        };
        Ok(Self::from_distributions(mode, dists))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Targets from all `M` annotations, independent of the training budget.
pub fn absolute_gt_targets(ds: &Dataset) -> EvalTargets {
    let dists = ds
        .instances()
        .iter()
        .map(|inst| distribution_of_counts(&inst.label_counts))
        .collect();
    EvalTargets::from_distributions(EvalMode::AbsoluteGt, dists)
}

/// Fraction of rows whose argmax equals the target label.
pub fn accuracy(pred_probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if pred_probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred_probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no instances to evaluate".into()));
    }
    let hits = pred_probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| argmax_lowest(row.view()) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy against the majority label of the target annotations.
pub fn accuracy_ml(pred_probs: ArrayView2<'_, f64>, targets: &EvalTargets) -> Result<f64> {
    if targets.mode == EvalMode::Ld {
        return Err(Error::InvalidArgument(
            "accuracy_ml needs ML or absolute ground-truth targets".into(),
        ));
    }
    accuracy(pred_probs, &targets.labels)
}

/// Accuracy against the most frequent class of the target distribution.
pub fn accuracy_ld(pred_probs: ArrayView2<'_, f64>, targets: &EvalTargets) -> Result<f64> {
    if targets.mode == EvalMode::Ml {
        return Err(Error::InvalidArgument(
            "accuracy_ld needs LD or absolute ground-truth targets".into(),
        ));
    }
    accuracy(pred_probs, &targets.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use ndarray::array;

    #[test]
    fn distributions_and_majorities() {
        let d = label_distribution(&[0, 0, 1], 3).unwrap();
        assert_eq!(d, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(label_distribution(&[1, 1, 1, 1], 2).unwrap(), vec![0.0, 1.0]);
        let hundred = crate::simulate::expand_counts(&[60, 30, 10]);
        assert_eq!(label_distribution(&hundred, 3).unwrap(), vec![0.6, 0.3, 0.1]);

        assert_eq!(majority_label(&[0, 0, 1], 3).unwrap(), 0);
        assert_eq!(majority_label(&[0, 1], 2).unwrap(), 0);
        let tie = crate::simulate::expand_counts(&[50, 50, 0]);
        assert_eq!(majority_label(&tie, 3).unwrap(), 0);
        assert!(majority_label(&[], 3).is_err());
        assert!(label_distribution(&[3], 3).is_err());
    }

    #[test]
    fn accuracy_contracts() {
        let uniform = Array2::from_elem((4, 3), 1.0 / 3.0);
        let t = EvalTargets::from_distributions(EvalMode::Ml, vec![vec![1.0, 0.0, 0.0]; 4]);
        assert_eq!(accuracy_ml(uniform.view(), &t).unwrap(), 1.0);

        let preds = Array2::from_shape_fn((10, 2), |(i, j)| if (i < 7) == (j == 0) { 0.9 } else { 0.1 });
        let t = EvalTargets::from_distributions(EvalMode::Ml, vec![vec![1.0, 0.0]; 10]);
        assert!((accuracy_ml(preds.view(), &t).unwrap() - 0.7).abs() < 1e-15);
        assert!(accuracy_ld(preds.view(), &t).is_err());
        assert!(accuracy(preds.view(), &[0; 9]).is_err());

        let pred = array![[0.5, 0.4, 0.1]];
        let ld = EvalTargets::from_distributions(EvalMode::Ld, vec![vec![0.6, 0.3, 0.1]]);
        assert_eq!(accuracy_ld(pred.view(), &ld).unwrap(), 1.0);
        let tied = EvalTargets::from_distributions(EvalMode::Ld, vec![vec![0.5, 0.5, 0.0]]);
        assert_eq!(accuracy_ld(pred.view(), &tied).unwrap(), 1.0);
        assert_eq!(tied.ties, 1);
    }

    #[test]
    fn absolute_ground_truth() {
        let ds = Dataset::new(
            "gt",
            None,
            vec![
                Instance {
                    id: "a".into(),
                    text: Some("t".into()),
                    features: None,
                    label_counts: vec![60, 30, 10],
                },
                Instance {
                    id: "b".into(),
                    text: Some("t".into()),
                    features: None,
                    label_counts: vec![100, 0, 0],
                },
            ],
        )
        .unwrap();
        let gt = absolute_gt_targets(&ds);
        assert_eq!(gt.labels, vec![0, 0]);
        assert_eq!(gt.distributions[0], vec![0.6, 0.3, 0.1]);
        assert_eq!(gt.distributions[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(gt.mode, EvalMode::AbsoluteGt);
    }

    #[test]
    fn one_hot_ld_matches_ml() {
        let preds = array![[0.2, 0.8], [0.7, 0.3], [0.6, 0.4]];
        let labels = [1, 1, 0];
        let onehot: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| if l == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let ml = EvalTargets::from_distributions(EvalMode::Ml, onehot.clone());
        let ld = EvalTargets::from_distributions(EvalMode::Ld, onehot);
        assert_eq!(
            accuracy_ml(preds.view(), &ml).unwrap(),
            accuracy_ld(preds.view(), &ld).unwrap()
        );
    }

    #[test]
    fn target_matrix_shapes() {
        let t = TrainTargets::majority(vec![2, 0], 3).unwrap();
        assert_eq!(t.to_matrix(), array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        assert!(TrainTargets::majority(vec![3], 3).is_err());
        assert!(TrainTargets::distributions(vec![vec![0.5, 0.6]], 2).is_err());
        let d = TrainTargets::distributions(vec![vec![0.25, 0.75]], 2).unwrap();
        assert_eq!(d.gold(), vec![1]);
    }
}
