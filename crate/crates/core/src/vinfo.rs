//! Predictive V-entropy, V-information and pointwise V-information, in bits.
//!
//! The model family is the softmax regression of [`crate::model`]; the
//! infimum over the family is approximated by the fitted models.
//! Probabilities are floored at [`PROB_FLOOR`] before taking logs and every
//! floored value is counted.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{csv_field, predict_proba, ModelKind, ModelState};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoldSource {
    /// Majority label of the annotations.
    #[serde(rename = "ML")]
    Majority,
    /// Argmax of the annotation distribution.
    #[serde(rename = "LD-argmax")]
    DistributionArgmax,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub bits: f64,
    /// Probabilities raised to the floor.
    pub clamped: usize,
}

fn floored_log2(p: f64, clamped: &mut usize) -> f64 {
    if p < PROB_FLOOR {
        *clamped += 1;
        PROB_FLOOR.log2()
    } else {
        p.log2()
    }
}

fn gold_probabilities(probs: ArrayView2<'_, f64>, gold: &[usize]) -> Result<Vec<f64>> {
    if probs.nrows() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            probs.nrows(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no instances".into()));
    }
    gold.iter()
        .enumerate()
        .map(|(i, &g)| {
            probs.get((i, g)).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("gold label {g} out of range"))
            })
        })
        .collect()
}

fn mean_neg_log2(ps: &[f64]) -> EntropyEstimate {
    let mut clamped = 0;
    let total: f64 = ps.iter().map(|&p| -floored_log2(p, &mut clamped)).sum();
    EntropyEstimate {
        bits: total / ps.len() as f64,
        clamped,
    }
}

/// `H_V(Y)`: mean of `-log2 p_null(y*)`.
pub fn v_entropy(null_model: &ModelState, gold: &[usize]) -> Result<EntropyEstimate> {
    if null_model.kind != ModelKind::Null {
        return Err(Error::InvalidArgument("v_entropy needs a null model".into()));
    }
    let probs = predict_proba(null_model, ndarray::Array2::zeros((gold.len(), 0)).view())?;
    Ok(mean_neg_log2(&gold_probabilities(probs.view(), gold)?))
}

/// `H_V(Y|X)`: mean of `-log2 p_model(y*|x)`.
pub fn conditional_v_entropy(
    model: &ModelState,
    features: ArrayView2<'_, f64>,
    gold: &[usize],
) -> Result<EntropyEstimate> {
    let probs = predict_proba(model, features)?;
    Ok(mean_neg_log2(&gold_probabilities(probs.view(), gold)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VInformation {
    pub bits: f64,
    /// Set when the estimate is below zero, which signals misfit or overfitting.
    pub negative: bool,
}

/// `I_V(X → Y) = H_V(Y) - H_V(Y|X)`.
pub fn v_information(h_y: f64, h_y_given_x: f64) -> VInformation {
    let bits = h_y - h_y_given_x;
    VInformation {
        bits,
        negative: bits < 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pvi {
    pub bits: f64,
    pub p_null: f64,
    pub p_model: f64,
    pub clamped: usize,
}

/// `-log2 p_null(y*) + log2 p_model(y*|x)` for a single instance.
pub fn pvi(
    model: &ModelState,
    null_model: &ModelState,
    feature: ndarray::ArrayView1<'_, f64>,
    gold: usize,
) -> Result<Pvi> {
    let row = feature.insert_axis(ndarray::Axis(0));
    let p_model = gold_probabilities(predict_proba(model, row)?.view(), &[gold])?[0];
    let p_null = gold_probabilities(predict_proba(null_model, row)?.view(), &[gold])?[0];
    let mut clamped = 0;
    let bits = -floored_log2(p_null, &mut clamped) + floored_log2(p_model, &mut clamped);
    Ok(Pvi {
        bits,
        p_null,
        p_model,
        clamped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VInfoReport {
    pub h_y: f64,
    pub h_y_given_x: f64,
    pub v_information: f64,
    pub negative: bool,
    pub gold_source: GoldSource,
    /// Which split the entropies were estimated on.
    pub evaluation_split: String,
    pub clamped: usize,
    #[serde(skip)]
    pub instances: Vec<PviRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PviRow {
    pub id: String,
    pub pvi: f64,
    pub gold: usize,
    pub p_null: f64,
    pub p_model: f64,
}

/// Both entropies, V-information and per-instance PVI on one instance set.
///
/// All quantities come from the same floored probabilities, so the mean PVI
/// equals `h_y - h_y_given_x` up to rounding.
pub fn vinfo_report(
    model: &ModelState,
    null_model: &ModelState,
    ids: &[String],
    features: ArrayView2<'_, f64>,
    gold: &[usize],
    gold_source: GoldSource,
    evaluation_split: &str,
) -> Result<VInfoReport> {
    if ids.len() != gold.len() || features.nrows() != gold.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} feature rows, {} gold labels",
            ids.len(),
            features.nrows(),
            gold.len()
        )));
    }
    let p_model = gold_probabilities(predict_proba(model, features)?.view(), gold)?;
    let p_null = gold_probabilities(predict_proba(null_model, features)?.view(), gold)?;
    let h_y = mean_neg_log2(&p_null);
    let h_y_x = mean_neg_log2(&p_model);
    let vi = v_information(h_y.bits, h_y_x.bits);
    let mut ignored = 0;
    let instances = ids
        .iter()
        .zip(gold)
        .zip(p_null.iter().zip(&p_model))
        .map(|((id, &g), (&pn, &pm))| PviRow {
            id: id.clone(),
            pvi: -floored_log2(pn, &mut ignored) + floored_log2(pm, &mut ignored),
            gold: g,
            p_null: pn,
            p_model: pm,
        })
        .collect();
    Ok(VInfoReport {
        h_y: h_y.bits,
        h_y_given_x: h_y_x.bits,
        v_information: vi.bits,
        negative: vi.negative,
        gold_source,
        evaluation_split: evaluation_split.to_string(),
        clamped: h_y.clamped + h_y_x.clamped,
        instances,
    })
}

impl VInfoReport {
    pub fn mean_pvi(&self) -> f64 {
        self.instances.iter().map(|r| r.pvi).sum::<f64>() / self.instances.len() as f64
    }

    /// `instance_id,pvi,gold,p_null,p_model`.
    pub fn write_pvi_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "instance_id,pvi,gold,p_null,p_model")?;
        for r in &self.instances {
            writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.id),
                r.pvi,
                r.gold,
                r.p_null,
                r.p_model
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_null, TrainConfig};
    use crate::targets::{TrainMode, TrainTargets};
    use ndarray::{array, Array1, Array2};

    fn conditional(weights: Array2<f64>, bias: Array1<f64>) -> ModelState {
        ModelState {
            kind: ModelKind::Conditional,
            objective: TrainMode::Ml,
            weights,
            bias,
            config: TrainConfig::default(),
            final_loss: 0.0,
        }
    }

    fn null_with(p: &[f64]) -> ModelState {
        ModelState {
            kind: ModelKind::Null,
            objective: TrainMode::Ml,
            weights: Array2::zeros((p.len(), 0)),
            bias: Array1::from(p.iter().map(|v| v.ln()).collect::<Vec<_>>()),
            config: TrainConfig::default(),
            final_loss: 0.0,
        }
    }

    #[test]
    fn entropy_of_known_distributions() {
        let gold: Vec<usize> = (0..100).map(|i| usize::from(i % 2 == 0)).collect();
        let t = TrainTargets::majority(gold.clone(), 2).unwrap();
        let null = fit_null(&t, &TrainConfig::default()).unwrap();
        assert!((v_entropy(&null, &gold).unwrap().bits - 1.0).abs() < 1e-9);

        let single = vec![0usize; 40];
        let null = fit_null(&TrainTargets::majority(single.clone(), 2).unwrap(), &TrainConfig::default()).unwrap();
        assert!(v_entropy(&null, &single).unwrap().bits < 1e-3);

        // 75/25 gold: -0.75 log2 0.75 - 0.25 log2 0.25 = 0.811278...
        let skewed: Vec<usize> = (0..100).map(|i| usize::from(i % 4 == 0)).collect();
        let null = fit_null(&TrainTargets::majority(skewed.clone(), 2).unwrap(), &TrainConfig::default()).unwrap();
        assert!((v_entropy(&null, &skewed).unwrap().bits - 0.811_278_124_459_132_9).abs() < 1e-6);

        let cond = conditional(Array2::zeros((2, 1)), Array1::zeros(2));
        assert!(v_entropy(&cond, &[0]).is_err());
    }

    #[test]
    fn pvi_hand_value() {
        // p_null = 0.5, p_model = 0.8: log2(0.8) - log2(0.5) = 0.678071905...
        let null = null_with(&[0.5, 0.5]);
        let model = conditional(Array2::zeros((2, 1)), array![0.8f64.ln(), 0.2f64.ln()]);
        let v = pvi(&model, &null, array![1.0].view(), 0).unwrap();
        assert!((v.bits - 0.678_071_905_112_638).abs() < 1e-12);
        assert!((v.p_model - 0.8).abs() < 1e-12);
        assert_eq!(v.clamped, 0);
    }

    #[test]
    fn identical_models_give_zero_pvi() {
        let null = null_with(&[0.2, 0.3, 0.5]);
        let model = conditional(Array2::zeros((3, 2)), array![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()]);
        let x = array![[1.0, 2.0], [0.0, -1.0], [3.0, 3.0]];
        let ids: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        let r = vinfo_report(&model, &null, &ids, x.view(), &[0, 1, 2], GoldSource::Majority, "test").unwrap();
        for row in &r.instances {
            assert!(row.pvi.abs() < 1e-12);
        }
        assert!(r.v_information.abs() < 1e-12);
    }

    #[test]
    fn floor_is_counted() {
        let null = null_with(&[0.5, 0.5]);
        let model = conditional(Array2::zeros((2, 1)), array![0.0, 80.0]);
        let ids = vec!["a".to_string()];
        let r = vinfo_report(&model, &null, &ids, array![[0.0]].view(), &[0], GoldSource::Majority, "test").unwrap();
        assert_eq!(r.clamped, 1);
        assert!((r.h_y_given_x - 12.0 * 10f64.log2()).abs() < 1e-9);
        assert!(r.negative);
    }

    #[test]
    fn v_information_arithmetic() {
        let vi = v_information(1.0, 0.3);
        assert!((vi.bits - 0.7).abs() < 1e-15);
        assert!(!vi.negative);
        assert!(v_information(0.3, 0.5).negative);
    }
}
