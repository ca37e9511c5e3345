//! Synthetic multi-annotator datasets with a known generating process.
//!
//! Each instance gets a latent class `z`, a feature vector drawn from an
//! isotropic unit Gaussian centred at `mean_z = (separation / √2) · e_z`
//! (so any two class means are `separation` apart), and an annotator
//! distribution given by the noise profile. Label counts are `M` independent
//! draws from that distribution.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseProfile {
    /// Every annotator reports the latent class.
    Deterministic,
    /// Annotators ignore the instance and pick uniformly.
    Uniform,
    /// The latent class with probability `1 - rate`, otherwise one of the
    /// other classes uniformly.
    Flip { rate: f64 },
    /// Like `Flip`, with a per-instance rate drawn uniformly from `[min, max]`.
    FlipRange { min: f64, max: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAssignment {
    /// The latent class is the one whose Gaussian produced the features.
    #[default]
    Sampled,
    /// After drawing features, the latent class is reset to the nearest class
    /// mean, making it a deterministic linear function of the features.
    NearestMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: usize,
    pub features: usize,
    pub instances: usize,
    pub annotators: usize,
    pub separation: f64,
    pub noise: NoiseProfile,
    #[serde(default)]
    pub assignment: ClassAssignment,
    pub seed: u64,
}

impl GeneratorSpec {
    /// The generator used by the bundled sweep configuration: three classes,
    /// fifty annotators, per-instance flip noise.
    pub fn reference(seed: u64) -> Self {
        Self {
            classes: 3,
            features: 8,
            instances: 2000,
            annotators: 50,
            separation: 2.5,
            noise: NoiseProfile::FlipRange { min: 0.0, max: 0.6 },
            assignment: ClassAssignment::Sampled,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("generator: {m}")));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.features < self.classes {
            return bad(format!(
                "need at least as many features as classes ({} < {})",
                self.features, self.classes
            ));
        }
        if self.instances == 0 || self.annotators == 0 {
            return bad("instances and annotators must be positive".into());
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad("separation must be finite and non-negative".into());
        }
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        match self.noise {
            NoiseProfile::Flip { rate } if !rate_ok(rate) => bad(format!("flip rate {rate}")),
            NoiseProfile::FlipRange { min, max } if !(rate_ok(min) && rate_ok(max) && min <= max) => {
                bad(format!("flip range [{min}, {max}]"))
            }
            _ => Ok(()),
        }
    }

    fn mean_scale(&self) -> f64 {
        self.separation / std::f64::consts::SQRT_2
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: GeneratorSpec,
    pub dataset: Dataset,
    pub latent_class: Vec<usize>,
    /// Per-instance annotator distribution.
    pub conditionals: Vec<Vec<f64>>,
}

fn flip_distribution(z: usize, classes: usize, rate: f64) -> Vec<f64> {
    let other = rate / (classes - 1) as f64;
    (0..classes)
        .map(|c| if c == z { 1.0 - rate } else { other })
        .collect()
}

fn draw_categorical(rng: &mut SplitMix64, probs: &[f64]) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // Only reachable through rounding in the cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the class mean nearest to `x` (lowest index on ties).
fn nearest_mean(x: &[f64], classes: usize) -> usize {
    // |x - s e_c|² = |x|² - 2 s x_c + s², so the nearest mean has the largest x_c.
    let mut best = 0;
    for c in 1..classes {
        if x[c] > x[best] {
            best = c;
        }
    }
    best
}

pub fn make_synthetic(spec: &GeneratorSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let root = SeedKey::new(spec.seed).with_str("synthetic");
    let scale = spec.mean_scale();
    let mut instances = Vec::with_capacity(spec.instances);
    let mut latent = Vec::with_capacity(spec.instances);
    let mut conditionals = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let mut rng = root.with(i as u64).stream();
        let mut z = rng.below(spec.classes as u64) as usize;
        let mut x: Vec<f64> = (0..spec.features)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        x[z] += scale;
        if spec.assignment == ClassAssignment::NearestMean {
            z = nearest_mean(&x, spec.classes);
        }
        let cond = match spec.noise {
            NoiseProfile::Deterministic => flip_distribution(z, spec.classes, 0.0),
            NoiseProfile::Uniform => vec![1.0 / spec.classes as f64; spec.classes],
            NoiseProfile::Flip { rate } => flip_distribution(z, spec.classes, rate),
            NoiseProfile::FlipRange { min, max } => {
                let rate = min + (max - min) * rng.next_f64();
                flip_distribution(z, spec.classes, rate)
            }
        };
        let mut counts = vec![0u32; spec.classes];
        for _ in 0..spec.annotators {
            counts[draw_categorical(&mut rng, &cond)] += 1;
        }
        instances.push(Instance {
            id: format!("s{i:05}"),
            text: None,
            features: Some(x),
            label_counts: counts,
        });
        latent.push(z);
        conditionals.push(cond);
    }
    let name = format!("synthetic-{}", spec.seed);
    let labels = (0..spec.classes).map(|c| format!("class{c}")).collect();
    Ok(SyntheticData {
        spec: spec.clone(),
        dataset: Dataset::new(name, Some(labels), instances)?,
        latent_class: latent,
        conditionals,
    })
}

impl SyntheticData {
    /// Expected single-annotation accuracy of the Bayes rule (nearest class
    /// mean) on the drawn instances.
    pub fn bayes_annotation_accuracy(&self) -> f64 {
        let hits: f64 = self
            .dataset
            .instances()
            .iter()
            .zip(&self.conditionals)
            .map(|(inst, cond)| {
                let x = inst.features.as_deref().expect("synthetic features");
                cond[nearest_mean(x, self.spec.classes)]
            })
            .sum();
        hits / self.dataset.len() as f64
    }
}

/// Population accuracy of the Bayes rule against a single annotation, for
/// two classes with sampled assignment and a fixed flip rate:
/// `Φ(s/2)(1 - ρ) + (1 - Φ(s/2))ρ`.
pub fn two_class_bayes_accuracy(separation: f64, flip_rate: f64) -> f64 {
    let phi = Normal::standard().cdf(separation / 2.0);
    phi * (1.0 - flip_rate) + (1.0 - phi) * flip_rate
}
