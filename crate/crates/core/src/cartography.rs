//! Training-dynamics maps: confidence, variability and difficulty regions.
//!
//! Confidence is the mean gold-label probability over epochs and variability
//! its population standard deviation.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{csv_field, DynamicsRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Easy,
    Ambiguous,
    Hard,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Easy, Region::Ambiguous, Region::Hard];

    pub fn index(self) -> usize {
        match self {
            Region::Easy => 0,
            Region::Ambiguous => 1,
            Region::Hard => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Region::Easy => 'e',
            Region::Ambiguous => 'a',
            Region::Hard => 'h',
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Easy => "easy",
            Region::Ambiguous => "ambiguous",
            Region::Hard => "hard",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionRule {
    /// Ambiguous when `variability >= variability_threshold`; otherwise easy
    /// when `confidence >= confidence_threshold`, else hard.
    Threshold {
        variability_threshold: f64,
        confidence_threshold: f64,
    },
    /// Top third by variability is ambiguous; the rest split at the median
    /// confidence (at or above is easy).
    Percentile,
}

impl Default for RegionRule {
    fn default() -> Self {
        RegionRule::Threshold {
            variability_threshold: 0.25,
            confidence_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub id: String,
    pub confidence: f64,
    pub variability: f64,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartographyMap {
    pub k: usize,
    pub replicate_index: usize,
    pub rule: RegionRule,
    /// Always `"std"`: variability is a standard deviation, not a variance.
    pub variability_measure: String,
    pub entries: Vec<MapEntry>,
}

/// Mean and population standard deviation.
pub fn confidence_variability(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    // Rounding can push a constant series a hair off zero, or past 0.5.
    let std = if series.iter().all(|&p| p == series[0]) {
        0.0
    } else {
        var.sqrt().min(0.5)
    };
    (mean.clamp(0.0, 1.0), std)
}

fn percentile_regions(stats: &[(f64, f64)], ids: &[String]) -> Vec<Region> {
    let n = stats.len();
    let mut by_var: Vec<usize> = (0..n).collect();
    by_var.sort_by(|&a, &b| {
        stats[b]
            .1
            .total_cmp(&stats[a].1)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let n_ambiguous = n / 3;
    let mut regions = vec![Region::Hard; n];
    for &i in &by_var[..n_ambiguous] {
        regions[i] = Region::Ambiguous;
    }
    let mut rest: Vec<f64> = by_var[n_ambiguous..].iter().map(|&i| stats[i].0).collect();
    if rest.is_empty() {
        return regions;
    }
    rest.sort_by(f64::total_cmp);
    let m = rest.len();
    let median = if m % 2 == 1 {
        rest[m / 2]
    } else {
        0.5 * (rest[m / 2 - 1] + rest[m / 2])
    };
    for &i in &by_var[n_ambiguous..] {
        if stats[i].0 >= median {
            regions[i] = Region::Easy;
        }
    }
    regions
}

fn threshold_region(confidence: f64, variability: f64, tau_v: f64, tau_c: f64) -> Region {
    if variability >= tau_v {
        Region::Ambiguous
    } else if confidence >= tau_c {
        Region::Easy
    } else {
        Region::Hard
    }
}

pub fn compute_map(
    dynamics: &DynamicsRecord,
    ids: &[String],
    rule: RegionRule,
    k: usize,
    replicate_index: usize,
) -> Result<CartographyMap> {
    if dynamics.num_epochs() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cartography needs at least 2 epochs, got {}",
            dynamics.num_epochs()
        )));
    }
    if ids.len() != dynamics.num_instances() {
        return Err(Error::Shape(format!(
            "{} ids for {} dynamics rows",
            ids.len(),
            dynamics.num_instances()
        )));
    }
    let stats: Vec<(f64, f64)> = dynamics
        .gold_probs
        .rows()
        .into_iter()
        .map(|row| confidence_variability(&row.to_vec()))
        .collect();
    let regions = match rule {
        RegionRule::Threshold {
            variability_threshold,
            confidence_threshold,
        } => stats
            .iter()
            .map(|&(c, v)| threshold_region(c, v, variability_threshold, confidence_threshold))
            .collect(),
        RegionRule::Percentile => percentile_regions(&stats, ids),
    };
    let entries = ids
        .iter()
        .zip(stats)
        .zip(regions)
        .map(|((id, (confidence, variability)), region)| MapEntry {
            id: id.clone(),
            confidence,
            variability,
            region,
        })
        .collect();
    Ok(CartographyMap {
        k,
        replicate_index,
        rule,
        variability_measure: "std".into(),
        entries,
    })
}

impl CartographyMap {
    pub fn region_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in &self.entries {
            counts[e.region.index()] += 1;
        }
        counts
    }

    /// `instance_id,confidence,variability,region,k,replicate`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "instance_id,confidence,variability,region,k,replicate")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&e.id),
                e.confidence,
                e.variability,
                e.region.as_str(),
                self.k,
                self.replicate_index
            )?;
        }
        Ok(())
    }
}

/// Movement of instances between regions from one map to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub from_k: usize,
    pub to_k: usize,
    /// `counts[from][to]`, indexed easy, ambiguous, hard. The diagonal holds
    /// instances that kept their region.
    pub counts: [[usize; 3]; 3],
    /// Off-diagonal counts over the number of movers; the diagonal is zero.
    pub proportions: [[f64; 3]; 3],
    pub movers: usize,
    pub non_movers: usize,
    pub no_transitions: bool,
}

impl TransitionReport {
    pub fn from_counts(from_k: usize, to_k: usize, counts: [[usize; 3]; 3]) -> Self {
        let non_movers = (0..3).map(|i| counts[i][i]).sum();
        let total: usize = counts.iter().flatten().sum();
        let movers = total - non_movers;
        let mut proportions = [[0.0; 3]; 3];
        if movers > 0 {
            for (i, row) in counts.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    if i != j {
                        proportions[i][j] = c as f64 / movers as f64;
                    }
                }
            }
        }
        Self {
            from_k,
            to_k,
            counts,
            proportions,
            movers,
            non_movers,
            no_transitions: movers == 0,
        }
    }

    pub fn proportion(&self, from: Region, to: Region) -> f64 {
        self.proportions[from.index()][to.index()]
    }

    pub fn count(&self, from: Region, to: Region) -> usize {
        self.counts[from.index()][to.index()]
    }

    /// Sums the counts of several reports over the same pair of budgets.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a TransitionReport>) -> Option<Self> {
        let mut iter = reports.into_iter();
        let first = iter.next()?;
        let mut counts = first.counts;
        for r in iter {
            for (row, other) in counts.iter_mut().zip(&r.counts) {
                for (c, o) in row.iter_mut().zip(other) {
                    *c += o;
                }
            }
        }
        Some(Self::from_counts(first.from_k, first.to_k, counts))
    }

    /// The six ordered moves, e.g. `("e->a", proportion, count)`.
    pub fn moves(&self) -> Vec<(String, f64, usize)> {
        let mut out = Vec::with_capacity(6);
        for from in Region::ALL {
            for to in Region::ALL {
                if from != to {
                    out.push((
                        format!("{}->{}", from.letter(), to.letter()),
                        self.proportion(from, to),
                        self.count(from, to),
                    ));
                }
            }
        }
        out
    }
}

pub fn transitions(map_a: &CartographyMap, map_b: &CartographyMap) -> Result<TransitionReport> {
    if map_a.entries.len() != map_b.entries.len() {
        return Err(Error::Shape(format!(
            "maps cover {} and {} instances",
            map_a.entries.len(),
            map_b.entries.len()
        )));
    }
    let later: HashMap<&str, Region> = map_b
        .entries
        .iter()
        .map(|e| (e.id.as_str(), e.region))
        .collect();
    let mut counts = [[0usize; 3]; 3];
    for e in &map_a.entries {
        let to = later.get(e.id.as_str()).ok_or_else(|| {
            Error::Shape(format!("instance {:?} missing from the second map", e.id))
        })?;
        counts[e.region.index()][to.index()] += 1;
    }
    Ok(TransitionReport::from_counts(map_a.k, map_b.k, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn map_of(series: &[&[f64]], rule: RegionRule) -> CartographyMap {
        let e = series[0].len();
        let mut m = Array2::zeros((series.len(), e));
        for (i, s) in series.iter().enumerate() {
            for (j, &p) in s.iter().enumerate() {
                m[[i, j]] = p;
            }
        }
        let ids: Vec<String> = (0..series.len()).map(|i| format!("i{i}")).collect();
        compute_map(&DynamicsRecord { gold_probs: m }, &ids, rule, 1, 0).unwrap()
    }

    fn with_regions(k: usize, regions: &[Region]) -> CartographyMap {
        CartographyMap {
            k,
            replicate_index: 0,
            rule: RegionRule::default(),
            variability_measure: "std".into(),
            entries: regions
                .iter()
                .enumerate()
                .map(|(i, &r)| MapEntry {
                    id: format!("i{i}"),
                    confidence: 0.0,
                    variability: 0.0,
                    region: r,
                })
                .collect(),
        }
    }

    #[test]
    fn default_rule_examples() {
        let m = map_of(&[&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]], RegionRule::default());
        assert_eq!((m.entries[0].confidence, m.entries[0].variability), (1.0, 0.0));
        assert_eq!(m.entries[0].region, Region::Easy);
        assert_eq!((m.entries[1].confidence, m.entries[1].variability), (0.0, 0.0));
        assert_eq!(m.entries[1].region, Region::Hard);

        let m = map_of(&[&[0.1, 0.9]], RegionRule::default());
        assert!((m.entries[0].confidence - 0.5).abs() < 1e-15);
        assert!((m.entries[0].variability - 0.4).abs() < 1e-15);
        assert_eq!(m.entries[0].region, Region::Ambiguous);
    }

    #[test]
    fn needs_two_epochs() {
        let d = DynamicsRecord {
            gold_probs: Array2::zeros((2, 1)),
        };
        assert!(compute_map(&d, &["a".into(), "b".into()], RegionRule::default(), 1, 0).is_err());
    }

    #[test]
    fn percentile_rule() {
        let m = map_of(
            &[
                &[0.0, 1.0],
                &[0.9, 0.9],
                &[0.8, 0.8],
                &[0.2, 0.2],
                &[0.1, 0.1],
                &[0.3, 0.5],
            ],
            RegionRule::Percentile,
        );
        let regions: Vec<Region> = m.entries.iter().map(|e| e.region).collect();
        use Region::*;
        assert_eq!(regions, vec![Ambiguous, Easy, Easy, Hard, Hard, Ambiguous]);
    }

    #[test]
    fn transition_examples() {
        use Region::*;
        let a = with_regions(1, &[Easy, Ambiguous, Hard]);
        let r = transitions(&a, &a).unwrap();
        assert!(r.no_transitions);
        assert_eq!(r.non_movers, 3);
        assert!(r.proportions.iter().flatten().all(|&p| p == 0.0));

        let mut from = vec![Easy; 6];
        from.extend([Ambiguous; 4]);
        from.extend([Hard; 5]);
        let mut to = vec![Ambiguous; 6];
        to.extend([Easy; 4]);
        to.extend([Hard; 5]);
        let r = transitions(&with_regions(1, &from), &with_regions(10, &to)).unwrap();
        assert_eq!(r.movers, 10);
        assert_eq!(r.non_movers, 5);
        assert!((r.proportion(Easy, Ambiguous) - 0.6).abs() < 1e-15);
        assert!((r.proportion(Ambiguous, Easy) - 0.4).abs() < 1e-15);
        assert_eq!((r.from_k, r.to_k), (1, 10));
    }

    #[test]
    fn transition_mismatch() {
        use Region::*;
        let a = with_regions(1, &[Easy, Easy]);
        let b = with_regions(2, &[Easy]);
        assert!(transitions(&a, &b).is_err());
        let mut c = with_regions(2, &[Easy, Easy]);
        c.entries[1].id = "other".into();
        assert!(transitions(&a, &c).is_err());
    }
}
