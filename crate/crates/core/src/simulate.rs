//! Annotator-subset simulation.
//!
//! Each instance's label counts are expanded into a canonical annotation
//! list, shuffled with a stream keyed by `(base_seed, replicate, id)`, and
//! truncated to the first `k` entries. The shuffle does not depend on `k`,
//! so within a replicate the subset for `k` is a prefix of the subset for any
//! larger budget, and an instance's draw does not depend on where it sits in
//! the dataset.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::rng::{SeedKey, SplitMix64};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub id: String,
    pub annotations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatorSubset {
    pub source_name: String,
    pub k: usize,
    pub replicate_index: usize,
    pub base_seed: u64,
    pub num_classes: usize,
    pub records: Vec<SubsetRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubsetHeader {
    header: bool,
    source_name: String,
    k: usize,
    replicate_index: usize,
    base_seed: u64,
    num_classes: usize,
}

/// Class 0 repeated `counts[0]` times, then class 1, and so on.
pub fn expand_counts(counts: &[u32]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(class, &n)| std::iter::repeat_n(class, n as usize))
        .collect()
}

/// Per-class tallies of an annotation list.
pub fn count_vector(annotations: &[usize], num_classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; num_classes];
    for &a in annotations {
        counts[a] += 1;
    }
    counts
}

fn instance_stream(base_seed: u64, replicate_index: usize, id: &str) -> SplitMix64 {
    SeedKey::new(base_seed)
        .with_str("annotations")
        .with(replicate_index as u64)
        .with_str(id)
        .stream()
}

/// The full shuffled annotation list for one instance in one replicate.
pub fn shuffled_annotations(inst: &Instance, base_seed: u64, replicate_index: usize) -> Vec<usize> {
    let mut list = expand_counts(&inst.label_counts);
    instance_stream(base_seed, replicate_index, &inst.id).shuffle(&mut list);
    list
}

fn check_k(ds: &Dataset, k: usize) -> Result<()> {
    if k == 0 || k > ds.annotator_count() {
        return Err(Error::BudgetOutOfRange {
            k,
            max: ds.annotator_count(),
        });
    }
    Ok(())
}

pub fn build_subset(
    ds: &Dataset,
    k: usize,
    base_seed: u64,
    replicate_index: usize,
) -> Result<AnnotatorSubset> {
    check_k(ds, k)?;
    let records = ds
        .instances()
        .iter()
        .map(|inst| {
            let mut annotations = shuffled_annotations(inst, base_seed, replicate_index);
            annotations.truncate(k);
            SubsetRecord {
                id: inst.id.clone(),
                annotations,
            }
        })
        .collect();
    Ok(AnnotatorSubset {
        source_name: ds.name().to_string(),
        k,
        replicate_index,
        base_seed,
        num_classes: ds.num_classes(),
        records,
    })
}

/// All `replicates × ks.len()` subsets, replicate-major, with replicate `r`
/// of every budget using replicate index `r`.
pub fn build_sweep(
    ds: &Dataset,
    ks: &[usize],
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<AnnotatorSubset>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("empty list of budgets".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate required".into()));
    }
    for &k in ks {
        check_k(ds, k)?;
    }
    let per_replicate: Vec<Vec<AnnotatorSubset>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let full: Vec<Vec<usize>> = ds
                .instances()
                .iter()
                .map(|inst| shuffled_annotations(inst, base_seed, r))
                .collect();
            ks.iter()
                .map(|&k| AnnotatorSubset {
                    source_name: ds.name().to_string(),
                    k,
                    replicate_index: r,
                    base_seed,
                    num_classes: ds.num_classes(),
                    records: ds
                        .instances()
                        .iter()
                        .zip(&full)
                        .map(|(inst, list)| SubsetRecord {
                            id: inst.id.clone(),
                            annotations: list[..k].to_vec(),
                        })
                        .collect(),
                })
                .collect()
        })
        .collect();
    Ok(per_replicate.into_iter().flatten().collect())
}

impl AnnotatorSubset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total drawn annotations per class across all instances.
    pub fn class_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.num_classes];
        for rec in &self.records {
            for &a in &rec.annotations {
                totals[a] += 1;
            }
        }
        totals
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = SubsetHeader {
            header: true,
            source_name: self.source_name.clone(),
            k: self.k,
            replicate_index: self.replicate_index,
            base_seed: self.base_seed,
            num_classes: self.num_classes,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            message: e.to_string(),
        };
        let (_, first) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing subset header".into(),
        })?;
        let first = first.map_err(|e| parse_err(1, &e))?;
        let header: SubsetHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, &e))?;
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| parse_err(idx + 1, &e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SubsetRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, &e))?;
            if rec.annotations.len() != header.k
                || rec.annotations.iter().any(|&a| a >= header.num_classes)
            {
                return Err(parse_err(
                    idx + 1,
                    &format!("record {:?} does not hold {} valid class ids", rec.id, header.k),
                ));
            }
            records.push(rec);
        }
        Ok(Self {
            source_name: header.source_name,
            k: header.k,
            replicate_index: header.replicate_index,
            base_seed: header.base_seed,
            num_classes: header.num_classes,
            records,
        })
    }
}
