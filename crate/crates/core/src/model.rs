//! Multinomial softmax regression trained with AdamW.
//!
//! The same trainer serves both objectives: majority-label targets are fed as
//! one-hot rows and label-distribution targets as soft rows, and the loss is
//! the mean cross-entropy `-sum_j t_j log softmax(W x + b)_j`.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedKey;
use crate::targets::{accuracy, TrainMode, TrainTargets};

/// Gradient steps used by [`fit_null`]; convergence usually takes a few hundred.
const NULL_MAX_STEPS: usize = 20_000;
const NULL_GRAD_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weight_decay: 0.0,
            epochs: 6,
            batch_size: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        for beta in [self.adam_beta1, self.adam_beta2] {
            if !(beta > 0.0 && beta < 1.0) {
                return bad("adam betas must lie in (0, 1)");
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Predicts from the input features.
    Conditional,
    /// Ignores its input; only the bias is fitted.
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub kind: ModelKind,
    pub objective: TrainMode,
    /// `C × F`, row per class.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub config: TrainConfig,
    pub final_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kind: ModelKind,
    objective: TrainMode,
    classes: usize,
    features: usize,
    /// Row-major `classes × features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    config: TrainConfig,
    final_loss: f64,
}

impl ModelState {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn num_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let file = ModelFile {
            kind: self.kind,
            objective: self.objective,
            classes: self.weights.nrows(),
            features: self.weights.ncols(),
            weights: self.weights.iter().copied().collect(),
            bias: self.bias.to_vec(),
            config: self.config.clone(),
            final_loss: self.final_loss,
        };
        serde_json::to_string_pretty(&file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let weights = Array2::from_shape_vec((file.classes, file.features), file.weights)
            .map_err(|e| Error::Shape(e.to_string()))?;
        if file.bias.len() != file.classes {
            return Err(Error::Shape("bias length differs from class count".into()));
        }
        Ok(Self {
            kind: file.kind,
            objective: file.objective,
            weights,
            bias: Array1::from(file.bias),
            config: file.config,
            final_loss: file.final_loss,
        })
    }
}

/// Per-instance, per-epoch probability of the gold label on the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsRecord {
    /// `N × E`.
    pub gold_probs: Array2<f64>,
}

impl DynamicsRecord {
    pub fn num_instances(&self) -> usize {
        self.gold_probs.nrows()
    }

    pub fn num_epochs(&self) -> usize {
        self.gold_probs.ncols()
    }

    /// Long-format CSV: `instance_id,epoch,gold_prob`, epochs counted from 1.
    pub fn write_csv<W: Write>(&self, ids: &[String], mut out: W) -> Result<()> {
        if ids.len() != self.num_instances() {
            return Err(Error::Shape(format!(
                "{} ids for {} dynamics rows",
                ids.len(),
                self.num_instances()
            )));
        }
        let io = |e| Error::io("<dynamics csv>", e);
        writeln!(out, "instance_id,epoch,gold_prob").map_err(io)?;
        for (id, row) in ids.iter().zip(self.gold_probs.rows()) {
            for (e, p) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", csv_field(id), e + 1, p).map_err(io)?;
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Ids keep the
    /// order of first appearance.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<(Vec<String>, Self)> {
        let mut ids: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line_no == 1 || line.trim().is_empty() {
                continue;
            }
            let parse = |m: &str| Error::Parse {
                line: line_no,
                message: m.to_string(),
            };
            let mut fields = line.rsplitn(3, ',');
            let prob: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse("bad gold_prob"))?;
            let epoch: usize = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse("bad epoch"))?;
            let id = fields.next().ok_or_else(|| parse("missing instance_id"))?;
            let id = id.trim_matches('"').replace("\"\"", "\"");
            let slot = *index.entry(id.clone()).or_insert_with(|| {
                ids.push(id);
                rows.push(Vec::new());
                rows.len() - 1
            });
            rows[slot].push((epoch, prob));
        }
        let epochs = rows.first().map_or(0, Vec::len);
        let mut gold_probs = Array2::zeros((rows.len(), epochs));
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(e, _)| e);
            let expected: Vec<usize> = (1..=epochs).collect();
            if row.iter().map(|&(e, _)| e).collect::<Vec<_>>() != expected {
                return Err(Error::Shape(format!(
                    "instance {:?} does not carry epochs 1..={epochs}",
                    ids[i]
                )));
            }
            for (e, p) in row {
                gold_probs[[i, e - 1]] = p;
            }
        }
        Ok((ids, Self { gold_probs }))
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Optional held-out set scored after every epoch.
#[derive(Clone, Copy, Debug)]
pub struct DevSet<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub model: ModelState,
    pub dynamics: Option<DynamicsRecord>,
    /// Full-training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Dev accuracy after each epoch; empty without a dev set.
    pub dev_accuracy: Vec<f64>,
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn logits_row(weights: &Array2<f64>, bias: &Array1<f64>, x: ArrayView1<'_, f64>) -> Vec<f64> {
    weights
        .rows()
        .into_iter()
        .zip(bias)
        .map(|(w, b)| b + w.dot(&x))
        .collect()
}

/// Mean cross-entropy of `softmax(x Wᵀ + b)` against `targets`, with its
/// gradient with respect to `weights` and `bias`.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = features.nrows();
    let mut grad_w = Array2::zeros(weights.raw_dim());
    let mut grad_b = Array1::zeros(bias.raw_dim());
    let mut loss = 0.0;
    for (x, t) in features.rows().into_iter().zip(targets.rows()) {
        let logits = logits_row(weights, bias, x);
        let logp = log_softmax(&logits);
        let mass: f64 = t.sum();
        for (j, (&lp, &tj)) in logp.iter().zip(t.iter()).enumerate() {
            if tj != 0.0 {
                loss -= tj * lp;
            }
            let dz = lp.exp() * mass - tj;
            grad_b[j] += dz;
            grad_w.row_mut(j).scaled_add(dz, &x);
        }
    }
    let scale = 1.0 / n as f64;
    grad_w *= scale;
    grad_b *= scale;
    (loss * scale, grad_w, grad_b)
}

/// Mean cross-entropy only.
pub fn loss(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    features: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> f64 {
    let mut total = 0.0;
    for (x, t) in features.rows().into_iter().zip(targets.rows()) {
        let logp = log_softmax(&logits_row(weights, bias, x));
        total -= logp
            .iter()
            .zip(t.iter())
            .filter(|(_, &tj)| tj != 0.0)
            .map(|(lp, tj)| tj * lp)
            .sum::<f64>();
    }
    total / features.nrows() as f64
}

struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    weight_decay: f64,
    step: i32,
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

impl AdamW {
    fn new(cfg: &TrainConfig, classes: usize, features: usize) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            step: 0,
            m_w: Array2::zeros((classes, features)),
            v_w: Array2::zeros((classes, features)),
            m_b: Array1::zeros(classes),
            v_b: Array1::zeros(classes),
        }
    }

    /// One update. Decay is applied to the weight matrix only, never the bias.
    fn update(
        &mut self,
        weights: &mut Array2<f64>,
        bias: &mut Array1<f64>,
        grad_w: &Array2<f64>,
        grad_b: &Array1<f64>,
    ) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        if self.weight_decay > 0.0 {
            *weights *= 1.0 - self.lr * self.weight_decay;
        }
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let step = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(weights)
            .and(&mut self.m_w)
            .and(&mut self.v_w)
            .and(grad_w)
            .for_each(|p, m, v, &g| step(p, m, v, g));
        ndarray::Zip::from(bias)
            .and(&mut self.m_b)
            .and(&mut self.v_b)
            .and(grad_b)
            .for_each(|p, m, v, &g| step(p, m, v, g));
    }
}

fn check_finite(x: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contain NaN or infinity")))
    }
}

pub fn fit(
    features: ArrayView2<'_, f64>,
    targets: &TrainTargets,
    cfg: &TrainConfig,
    record_gold: Option<&[usize]>,
) -> Result<FitOutput> {
    fit_monitored(features, targets, cfg, record_gold, None)
}

/// [`fit`] that also scores `dev` after every epoch.
pub fn fit_monitored(
    features: ArrayView2<'_, f64>,
    targets: &TrainTargets,
    cfg: &TrainConfig,
    record_gold: Option<&[usize]>,
    dev: Option<DevSet<'_>>,
) -> Result<FitOutput> {
    cfg.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no training instances".into()));
    }
    if targets.len() != n {
        return Err(Error::Shape(format!("{n} feature rows for {} targets", targets.len())));
    }
    if let Some(gold) = record_gold {
        if gold.len() != n {
            return Err(Error::Shape(format!("{n} feature rows for {} gold labels", gold.len())));
        }
    }
    check_finite(features, "features")?;
    let c = targets.num_classes();
    let f = features.ncols();
    let target_matrix = targets.to_matrix();

    let mut weights = Array2::zeros((c, f));
    let mut bias = Array1::zeros(c);
    let mut opt = AdamW::new(cfg, c, f);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut dev_accuracy = Vec::new();
    let mut gold_probs = record_gold.map(|_| Array2::zeros((n, cfg.epochs)));
    let batch_key = SeedKey::new(cfg.seed).with_str("batches");

    for epoch in 0..cfg.epochs {
        batch_key.with(epoch as u64).stream().shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let xb = features.select(Axis(0), batch);
            let tb = target_matrix.select(Axis(0), batch);
            let (_, gw, gb) = loss_and_gradient(&weights, &bias, xb.view(), tb.view());
            opt.update(&mut weights, &mut bias, &gw, &gb);
        }
        let epoch_loss = loss(&weights, &bias, features, target_matrix.view());
        if !epoch_loss.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss {epoch_loss} after epoch {}",
                epoch + 1
            )));
        }
        epoch_losses.push(epoch_loss);

        if let (Some(gold), Some(record)) = (record_gold, gold_probs.as_mut()) {
            for (i, x) in features.rows().into_iter().enumerate() {
                let mut p = logits_row(&weights, &bias, x);
                softmax_in_place(&mut p);
                record[[i, epoch]] = p[gold[i]].clamp(0.0, 1.0);
            }
        }
        if let Some(dev) = dev {
            let probs = softmax_rows(&weights, &bias, dev.features)?;
            dev_accuracy.push(accuracy(probs.view(), dev.labels)?);
        }
    }

    let final_loss = *epoch_losses.last().expect("at least one epoch");
    Ok(FitOutput {
        model: ModelState {
            kind: ModelKind::Conditional,
            objective: targets.mode(),
            weights,
            bias,
            config: cfg.clone(),
            final_loss,
        },
        dynamics: gold_probs.map(|gold_probs| DynamicsRecord { gold_probs }),
        epoch_losses,
        dev_accuracy,
    })
}

fn softmax_rows(
    weights: &Array2<f64>,
    bias: &Array1<f64>,
    features: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if features.ncols() != weights.ncols() {
        return Err(Error::Shape(format!(
            "model expects {} features, got {}",
            weights.ncols(),
            features.ncols()
        )));
    }
    let mut out = Array2::zeros((features.nrows(), weights.nrows()));
    for (x, mut row) in features.rows().into_iter().zip(out.rows_mut()) {
        let mut p = logits_row(weights, bias, x);
        softmax_in_place(&mut p);
        row.iter_mut().zip(p).for_each(|(dst, v)| *dst = v);
    }
    Ok(out)
}

/// Class probabilities for every row of `features`. Null models ignore the
/// features and return the same distribution for every row.
pub fn predict_proba(model: &ModelState, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    match model.kind {
        ModelKind::Conditional => softmax_rows(&model.weights, &model.bias, features),
        ModelKind::Null => {
            let p = null_distribution(model);
            let mut out = Array2::zeros((features.nrows(), p.len()));
            for mut row in out.rows_mut() {
                row.assign(&p);
            }
            Ok(out)
        }
    }
}

/// `softmax(b)`: the output of a model given no input.
pub fn null_distribution(model: &ModelState) -> Array1<f64> {
    let mut p = model.bias.to_vec();
    softmax_in_place(&mut p);
    Array1::from(p)
}

/// Fits the input-free model: weights fixed at zero, bias fitted to the same
/// cross-entropy by full-batch gradient descent.
///
/// The bias-only objective depends on the targets only through their mean, and
/// its Hessian `diag(p) - p pᵀ` has spectral norm below 1, so unit steps are
/// stable.
pub fn fit_null(targets: &TrainTargets, cfg: &TrainConfig) -> Result<ModelState> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no training instances".into()));
    }
    let c = targets.num_classes();
    let mean_target = targets
        .to_matrix()
        .mean_axis(Axis(0))
        .expect("non-empty targets");
    let mass = mean_target.sum();
    let mut bias = Array1::<f64>::zeros(c);
    for _ in 0..NULL_MAX_STEPS {
        let mut p = bias.to_vec();
        softmax_in_place(&mut p);
        let grad = Array1::from(p) * mass - &mean_target;
        if grad.iter().all(|g| g.abs() < NULL_GRAD_TOL) {
            break;
        }
        bias -= &grad;
    }
    let logp = log_softmax(bias.as_slice().expect("contiguous"));
    let final_loss: f64 = -mean_target
        .iter()
        .zip(&logp)
        .filter(|(&t, _)| t != 0.0)
        .map(|(t, lp)| t * lp)
        .sum::<f64>();
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("null model loss {final_loss}")));
    }
    Ok(ModelState {
        kind: ModelKind::Null,
        objective: targets.mode(),
        weights: Array2::zeros((c, 0)),
        bias,
        config: cfg.clone(),
        final_loss,
    })
}
