//! Datasets with per-instance label-count distributions.
//!
//! A dataset stores, for each instance, how many of the `M` annotators chose
//! each of the `C` classes. Individual annotator identities are not known;
//! [`crate::simulate`] recovers plausible per-annotator lists from the counts.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::SeedKey;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub label_counts: Vec<u32>,
}

impl Instance {
    pub fn total(&self) -> u64 {
        self.label_counts.iter().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    class_labels: Vec<String>,
    annotator_count: usize,
    feature_dim: Option<usize>,
    instances: Vec<Instance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    header: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotators: Option<usize>,
}

impl Dataset {
    /// Validates `instances` and infers the annotator count `M` from their
    /// label-count sums. When `class_labels` is `None`, classes are named by
    /// their index.
    pub fn new(
        name: impl Into<String>,
        class_labels: Option<Vec<String>>,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        Self::with_declared(name.into(), class_labels, None, instances)
    }

    fn with_declared(
        name: String,
        class_labels: Option<Vec<String>>,
        declared_annotators: Option<usize>,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::Dataset("dataset has no instances".into()))?;
        let classes = first.label_counts.len();
        if classes < 2 {
            return Err(Error::Dataset(format!(
                "at least 2 classes required, got {classes}"
            )));
        }
        let class_labels = match class_labels {
            Some(labels) if labels.len() != classes => {
                return Err(Error::Dataset(format!(
                    "header lists {} class labels but records carry {classes} counts",
                    labels.len()
                )))
            }
            Some(labels) => labels,
            None => (0..classes).map(|c| c.to_string()).collect(),
        };
        let annotators = first.total();
        if annotators == 0 {
            return Err(Error::Dataset(format!(
                "instance {:?} has no annotations",
                first.id
            )));
        }
        if let Some(declared) = declared_annotators {
            if declared as u64 != annotators {
                return Err(Error::Dataset(format!(
                    "inconsistent annotation count: header declares {declared}, \
                     instance {:?} sums to {annotators}",
                    first.id
                )));
            }
        }
        let feature_dim = instances
            .iter()
            .find_map(|i| i.features.as_ref().map(Vec::len));

        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id {:?}", inst.id)));
            }
            check_instance(inst, classes, annotators, feature_dim)?;
        }

        Ok(Self {
            name,
            class_labels,
            annotator_count: annotators as usize,
            feature_dim,
            instances,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// `M`, the number of annotations behind every instance.
    pub fn annotator_count(&self) -> usize {
        self.annotator_count
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// A dataset sharing this one's metadata but holding only `instances`.
    fn derive(&self, name: String, instances: Vec<Instance>) -> Self {
        Self {
            name,
            class_labels: self.class_labels.clone(),
            annotator_count: self.annotator_count,
            feature_dim: self.feature_dim,
            instances,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = HeaderRecord {
            header: true,
            name: Some(self.name.clone()),
            class_labels: Some(self.class_labels.clone()),
            annotators: Some(self.annotator_count),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

fn check_instance(
    inst: &Instance,
    classes: usize,
    annotators: u64,
    feature_dim: Option<usize>,
) -> Result<()> {
    if inst.label_counts.len() != classes {
        return Err(Error::Dataset(format!(
            "instance {:?} has {} label counts, expected {classes}",
            inst.id,
            inst.label_counts.len()
        )));
    }
    let total = inst.total();
    if total != annotators {
        return Err(Error::Dataset(format!(
            "inconsistent annotation count: instance {:?} sums to {total}, expected {annotators}",
            inst.id
        )));
    }
    match (&inst.features, feature_dim) {
        (Some(f), Some(dim)) if f.len() != dim => {
            return Err(Error::Dataset(format!(
                "inconsistent feature dimension: instance {:?} has {}, expected {dim}",
                inst.id,
                f.len()
            )))
        }
        (Some(f), _) if f.iter().any(|v| !v.is_finite()) => {
            return Err(Error::Dataset(format!(
                "instance {:?} has non-finite features",
                inst.id
            )))
        }
        (None, _) if inst.text.is_none() => {
            return Err(Error::Dataset(format!(
                "instance {:?} has neither text nor features",
                inst.id
            )))
        }
        _ => {}
    }
    Ok(())
}

/// Parses the JSONL dataset format. `default_name` is used unless the header
/// carries a name.
pub fn parse_jsonl<R: BufRead>(reader: R, default_name: &str) -> Result<Dataset> {
    let mut header: Option<HeaderRecord> = None;
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let is_header = value.get("header").and_then(Value::as_bool) == Some(true);
        if is_header {
            if header.is_some() || !instances.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "header record must be the first line".into(),
                });
            }
            header = Some(serde_json::from_value(value).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?);
            continue;
        }
        let inst: Instance = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        instances.push((line_no, inst));
    }

    let (name, labels, annotators) = match header {
        Some(h) => (
            h.name.unwrap_or_else(|| default_name.to_string()),
            h.class_labels,
            h.annotators,
        ),
        None => (default_name.to_string(), None, None),
    };

    // Re-validate per record first so errors carry the offending line.
    if let Some((_, first)) = instances.first() {
        let classes = first.label_counts.len();
        let annotators_seen = first.total();
        let dim = instances
            .iter()
            .find_map(|(_, i)| i.features.as_ref().map(Vec::len));
        for (line, inst) in &instances {
            if classes >= 2 && annotators_seen > 0 {
                check_instance(inst, classes, annotators_seen, dim).map_err(|e| Error::Parse {
                    line: *line,
                    message: e.to_string(),
                })?;
            }
        }
    }

    Dataset::with_declared(
        name,
        labels,
        annotators,
        instances.into_iter().map(|(_, i)| i).collect(),
    )
}

/// Loads a JSONL dataset; the dataset name defaults to the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    parse_jsonl(BufReader::new(file), stem)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// The 80:10:10 partition.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.dev_fraction, self.test_fraction];
        if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Split(format!(
                "fractions must be positive, got {fractions:?}"
            )));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// `(train, dev, test)` sizes for `n` instances: dev and test get
    /// `floor(n * fraction)`, train takes the remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
        let floor = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
        let dev = floor(self.dev_fraction);
        let test = floor(self.test_fraction);
        let train = n.saturating_sub(dev + test);
        if train == 0 || dev == 0 || test == 0 {
            return Err(Error::Split(format!(
                "{n} instances give an empty split (train={train}, dev={dev}, test={test})"
            )));
        }
        Ok((train, dev, test))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

/// Partitions `ds` into train/dev/test.
///
/// Instances are ordered by a keyed hash of `(seed, id)` and cut into
/// consecutive blocks, so membership depends only on the ids and the seed.
/// Each part lists its instances in that hash order.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let (n_train, n_dev, _) = spec.sizes(ds.len())?;
    let key = SeedKey::new(spec.seed).with_str("split");
    let mut order: Vec<(u64, &Instance)> = ds
        .instances
        .iter()
        .map(|inst| (key.with_str(&inst.id).seed(), inst))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let mut parts = order.into_iter().map(|(_, inst)| inst.clone());
    let train: Vec<_> = parts.by_ref().take(n_train).collect();
    let dev: Vec<_> = parts.by_ref().take(n_dev).collect();
    let test: Vec<_> = parts.collect();
    Ok(Splits {
        train: ds.derive(format!("{}/train", ds.name), train),
        dev: ds.derive(format!("{}/dev", ds.name), dev),
        test: ds.derive(format!("{}/test", ds.name), test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, counts: &[u32]) -> Instance {
        Instance {
            id: id.into(),
            text: Some(format!("text {id}")),
            features: None,
            label_counts: counts.to_vec(),
        }
    }

    fn dataset(n: usize) -> Dataset {
        let instances = (0..n).map(|i| inst(&format!("i{i}"), &[2, 1, 0])).collect();
        Dataset::new("toy", None, instances).unwrap()
    }

    #[test]
    fn infers_annotators_and_classes() {
        let mut lines = vec![r#"{"id":"a","label_counts":[60,30,10]}"#.to_string()];
        for i in 0..99 {
            lines.push(format!(r#"{{"id":"p{i}","text":"x","label_counts":[50,25,25]}}"#));
        }
        // The first record has no text/features, which is invalid; give it text.
        lines[0] = r#"{"id":"a","text":"t","label_counts":[60,30,10]}"#.into();
        let ds = parse_jsonl(lines.join("\n").as_bytes(), "d").unwrap();
        assert_eq!(ds.annotator_count(), 100);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.len(), 100);
    }

    #[test]
    fn inconsistent_sums_are_rejected_with_line() {
        let text = "{\"id\":\"a\",\"text\":\"t\",\"label_counts\":[50,50]}\n\
                    {\"id\":\"b\",\"text\":\"t\",\"label_counts\":[50,49]}\n";
        let err = parse_jsonl(text.as_bytes(), "d").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inconsistent annotation count"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = "{\"id\":\"a\",\"text\":\"t\",\"label_counts\":[1,1]}\n{not json\n";
        assert!(matches!(
            parse_jsonl(text.as_bytes(), "d"),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "{\"id\":\"a\",\"text\":\"t\",\"label_counts\":[1,-1]}\n";
        assert!(matches!(
            parse_jsonl(text.as_bytes(), "d"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_and_feature_dims() {
        let dup = vec![inst("a", &[1, 1]), inst("a", &[2, 0])];
        assert!(Dataset::new("d", None, dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate id"));

        let mut a = inst("a", &[1, 1]);
        a.features = Some(vec![1.0, 2.0]);
        let mut b = inst("b", &[1, 1]);
        b.features = Some(vec![1.0]);
        assert!(Dataset::new("d", None, vec![a, b])
            .unwrap_err()
            .to_string()
            .contains("feature dimension"));
    }

    #[test]
    fn header_cross_checks() {
        let ok = "{\"header\":true,\"class_labels\":[\"e\",\"n\",\"c\"],\"annotators\":3}\n\
                  {\"id\":\"a\",\"text\":\"t\",\"label_counts\":[3,0,0]}\n";
        let ds = parse_jsonl(ok.as_bytes(), "d").unwrap();
        assert_eq!(ds.class_labels(), ["e", "n", "c"]);

        let bad = "{\"header\":true,\"annotators\":5}\n\
                   {\"id\":\"a\",\"text\":\"t\",\"label_counts\":[3,0,0]}\n";
        assert!(parse_jsonl(bad.as_bytes(), "d").is_err());

        let late = "{\"id\":\"a\",\"text\":\"t\",\"label_counts\":[3,0,0]}\n{\"header\":true}\n";
        assert!(matches!(
            parse_jsonl(late.as_bytes(), "d"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn zero_counts_and_missing_inputs() {
        assert!(Dataset::new("d", None, vec![inst("a", &[0, 0, 5])]).is_ok());
        let bare = Instance {
            id: "a".into(),
            text: None,
            features: None,
            label_counts: vec![1, 0],
        };
        assert!(Dataset::new("d", None, vec![bare]).is_err());
        assert!(Dataset::new("d", None, vec![inst("a", &[1])]).is_err());
        assert!(Dataset::new("d", None, vec![]).is_err());
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::standard(7);
        assert_eq!(spec.sizes(100).unwrap(), (80, 10, 10));
        assert_eq!(spec.sizes(101).unwrap(), (81, 10, 10));
        assert!(spec.sizes(9).is_err());
        let s = split(&dataset(100), &spec).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let mut spec = SplitSpec::standard(1);
        spec.dev_fraction = 0.0;
        assert!(spec.validate().is_err());
        spec.dev_fraction = 0.2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn split_ignores_file_order() {
        let ds = dataset(57);
        let mut reversed: Vec<_> = ds.instances().to_vec();
        reversed.reverse();
        let rev = Dataset::new("toy", None, reversed).unwrap();
        let spec = SplitSpec::standard(3);
        assert_eq!(split(&ds, &spec).unwrap(), split(&rev, &spec).unwrap());
    }
}
