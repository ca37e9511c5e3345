//! Feature extraction for the reference classifier.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::SeedKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Use each instance's `features` vector as is.
    ProvidedVectors,
    /// Hashed bag of words over each instance's `text`.
    HashedBow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub source: FeatureSource,
    /// Output width. Required for hashed bag of words; for provided vectors it
    /// defaults to the dataset's dimension and must match it when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default = "default_true")]
    pub lowercase: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            source: FeatureSource::ProvidedVectors,
            dimension: None,
            hash_seed: 0,
            lowercase: true,
        }
    }
}

impl FeatureConfig {
    pub fn hashed(dimension: usize, hash_seed: u64) -> Self {
        Self {
            source: FeatureSource::HashedBow,
            dimension: Some(dimension),
            hash_seed,
            lowercase: true,
        }
    }

    /// Resolves the output width against `ds`.
    pub fn resolve_dimension(&self, ds: &Dataset) -> Result<usize> {
        let dim = match (self.source, self.dimension) {
            (FeatureSource::HashedBow, Some(d)) => d,
            (FeatureSource::HashedBow, None) => {
                return Err(Error::Config("hashed_bow needs a dimension".into()))
            }
            (FeatureSource::ProvidedVectors, declared) => {
                let actual = ds.feature_dim().ok_or_else(|| {
                    Error::Dataset("provided_vectors needs features on every instance".into())
                })?;
                if let Some(d) = declared {
                    if d != actual {
                        return Err(Error::Config(format!(
                            "feature dimension {d} configured but dataset has {actual}"
                        )));
                    }
                }
                actual
            }
        };
        if dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        Ok(dim)
    }
}

/// Splits on anything that is not alphanumeric.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

fn hashed_row(text: &str, cfg: &FeatureConfig, dim: usize, row: &mut [f64]) {
    let key = SeedKey::new(cfg.hash_seed).with_str("token");
    for token in tokenize(text, cfg.lowercase) {
        let col = (key.with_str(&token).seed() % dim as u64) as usize;
        row[col] += 1.0;
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// `N × F` feature matrix, one row per instance in dataset order.
pub fn featurize(ds: &Dataset, cfg: &FeatureConfig) -> Result<Array2<f64>> {
    let dim = cfg.resolve_dimension(ds)?;
    let mut out = Array2::zeros((ds.len(), dim));
    for (inst, mut row) in ds.instances().iter().zip(out.rows_mut()) {
        match cfg.source {
            FeatureSource::ProvidedVectors => {
                let f = inst.features.as_ref().ok_or_else(|| {
                    Error::Dataset(format!("instance {:?} has no features", inst.id))
                })?;
                row.iter_mut().zip(f).for_each(|(dst, &v)| *dst = v);
            }
            FeatureSource::HashedBow => {
                let text = inst.text.as_deref().ok_or_else(|| {
                    Error::Dataset(format!("instance {:?} has no text", inst.id))
                })?;
                let slice = row.as_slice_mut().expect("rows of a standard-layout array");
                hashed_row(text, cfg, dim, slice);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;

    fn text_ds(texts: &[&str]) -> Dataset {
        let instances = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Instance {
                id: i.to_string(),
                text: Some(t.to_string()),
                features: None,
                label_counts: vec![1, 0],
            })
            .collect();
        Dataset::new("txt", None, instances).unwrap()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("A cat, sat.", true), vec!["a", "cat", "sat"]);
        assert_eq!(tokenize("A cat", false), vec!["A", "cat"]);
        assert!(tokenize("  ,. ", true).is_empty());
    }

    #[test]
    fn hashed_rows() {
        let ds = text_ds(&["", "the cat sat", "the cat sat", "word"]);
        let x = featurize(&ds, &FeatureConfig::hashed(8, 3)).unwrap();
        assert!(x.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(x.row(1), x.row(2));
        let nonzero: Vec<f64> = x.row(3).iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
        let norm: f64 = x.row(1).iter().map(|v| v * v).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn provided_vectors_need_features() {
        let ds = text_ds(&["a"]);
        assert!(featurize(&ds, &FeatureConfig::default()).is_err());
        let mut cfg = FeatureConfig::hashed(4, 0);
        cfg.dimension = None;
        assert!(featurize(&ds, &cfg).is_err());
    }
}
