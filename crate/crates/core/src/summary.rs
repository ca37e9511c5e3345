//! Aggregation of sweep cells into a report.
//!
//! Means are taken over replicates, standard deviations are population
//! standard deviations, and min/max across budgets favour the smaller `k`
//! when two budgets tie.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cartography::{Region, RegionRule, TransitionReport};
use crate::error::{Error, Result};
use crate::experiment::{parse_regions, CellResult, ExperimentConfig};
use crate::targets::TrainMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStat {
    pub k: usize,
    pub replicates: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub v_information_mean: f64,
    pub v_information_std: f64,
    /// Replicates whose V-information estimate was negative.
    pub negative_v_information: usize,
    /// Mean number of tie-broken test targets per replicate.
    pub mean_test_ties: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub accuracy: f64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// `ML`, `LD`, `ML/AbsoluteGT` or `LD/AbsoluteGT`.
    pub mode: String,
    pub per_k: Vec<KStat>,
    pub min: Extremum,
    pub max: Extremum,
    /// `max - min` of the per-budget mean accuracy.
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionPair {
    pub mode: TrainMode,
    pub from_k: usize,
    pub to_k: usize,
    /// Counts summed over replicates.
    pub pooled: TransitionReport,
    pub per_replicate: Vec<TransitionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub majority_tie_rule: String,
    pub extremum_tie_rule: String,
    pub std_kind: String,
    pub variability_measure: String,
    pub vinfo_split: String,
    pub region_rule: RegionRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub ks: Vec<usize>,
    pub replicates: usize,
    pub base_seed: u64,
    pub metadata: ReportMetadata,
    pub modes: Vec<ModeSummary>,
    pub transitions: Vec<TransitionPair>,
    pub notes: Vec<String>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-budget accuracy samples (and matching V-information samples) for one mode.
#[derive(Clone, Debug, Default)]
pub struct ModeSamples {
    pub accuracy: Vec<f64>,
    pub v_information: Vec<f64>,
    pub test_ties: Vec<usize>,
}

/// Reduces `(k, samples)` pairs, which must be sorted by `k`, to a summary.
pub fn summarize_mode(mode: &str, per_k: &[(usize, ModeSamples)]) -> Result<ModeSummary> {
    if per_k.is_empty() {
        return Err(Error::InvalidArgument(format!("no budgets for mode {mode}")));
    }
    let mut stats = Vec::with_capacity(per_k.len());
    for (k, s) in per_k {
        if s.accuracy.is_empty() {
            return Err(Error::InvalidArgument(format!("no replicates for k={k}")));
        }
        let (mean, std) = mean_std(&s.accuracy);
        let (vi_mean, vi_std) = if s.v_information.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&s.v_information)
        };
        stats.push(KStat {
            k: *k,
            replicates: s.accuracy.len(),
            mean,
            std,
            min: s.accuracy.iter().copied().fold(f64::INFINITY, f64::min),
            max: s.accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            v_information_mean: vi_mean,
            v_information_std: vi_std,
            negative_v_information: s.v_information.iter().filter(|&&v| v < 0.0).count(),
            mean_test_ties: s.test_ties.iter().sum::<usize>() as f64 / s.accuracy.len().max(1) as f64,
        });
    }
    // Strict comparisons keep the first, i.e. smallest, k on ties.
    let mut min = Extremum {
        accuracy: stats[0].mean,
        k: stats[0].k,
    };
    let mut max = min;
    for s in &stats[1..] {
        if s.mean < min.accuracy {
            min = Extremum { accuracy: s.mean, k: s.k };
        }
        if s.mean > max.accuracy {
            max = Extremum { accuracy: s.mean, k: s.k };
        }
    }
    Ok(ModeSummary {
        mode: mode.to_string(),
        per_k: stats,
        min,
        max,
        gain: max.accuracy - min.accuracy,
    })
}

/// Transition counts between two region sequences over the same instances.
pub fn aligned_transitions(from_k: usize, to_k: usize, a: &[Region], b: &[Region]) -> Result<TransitionReport> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("region lists of length {} and {}", a.len(), b.len())));
    }
    let mut counts = [[0usize; 3]; 3];
    for (x, y) in a.iter().zip(b) {
        counts[x.index()][y.index()] += 1;
    }
    Ok(TransitionReport::from_counts(from_k, to_k, counts))
}

/// Aggregates completed cells. Every `(k, replicate)` of the config must be
/// present; cell order does not matter.
pub fn summarize(
    cfg: &ExperimentConfig,
    dataset: &str,
    train_ids: &[String],
    cells: &[CellResult],
) -> Result<SweepReport> {
    let ks = cfg.sorted_ks();
    let mut grid: BTreeMap<(usize, usize), &CellResult> = BTreeMap::new();
    for c in cells {
        grid.insert((c.k, c.replicate), c);
    }
    let mut missing = Vec::new();
    for &k in &ks {
        for r in 0..cfg.replicates {
            if !grid.contains_key(&(k, r)) {
                missing.push(format!("(k={k}, replicate={r})"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "missing cells: {}",
            missing.join(", ")
        )));
    }

    let strategies = cfg.strategies();
    let mut modes = Vec::new();
    for &mode in &strategies {
        let mut k_samples = Vec::new();
        let mut abs_samples = Vec::new();
        for &k in &ks {
            let mut s = ModeSamples::default();
            let mut a = ModeSamples::default();
            for r in 0..cfg.replicates {
                let res = grid[&(k, r)].strategy(mode).ok_or_else(|| {
                    Error::InvalidArgument(format!("cell (k={k}, replicate={r}) lacks {mode} results"))
                })?;
                s.accuracy.push(res.accuracy);
                s.v_information.push(res.vinfo.v_information);
                s.test_ties.push(res.test_ties);
                if let Some(abs) = res.accuracy_absolute {
                    a.accuracy.push(abs);
                    a.v_information.push(res.vinfo.v_information);
                }
            }
            k_samples.push((k, s));
            abs_samples.push((k, a));
        }
        modes.push(summarize_mode(mode.as_str(), &k_samples)?);
        if cfg.absolute_gt() {
            modes.push(summarize_mode(&format!("{mode}/AbsoluteGT"), &abs_samples)?);
        }
    }

    let mut pairs: Vec<(usize, usize)> = ks.windows(2).map(|w| (w[0], w[1])).collect();
    if ks.len() > 2 {
        pairs.push((ks[0], ks[ks.len() - 1]));
    }
    let mut notes = Vec::new();
    if pairs.is_empty() {
        notes.push("no transition pairs: a single budget was swept".to_string());
    }
    let mut transitions = Vec::new();
    for &mode in &strategies {
        for &(from_k, to_k) in &pairs {
            let per_replicate = (0..cfg.replicates)
                .map(|r| {
                    let a = parse_regions(&grid[&(from_k, r)].strategy(mode).expect("checked").regions)?;
                    let b = parse_regions(&grid[&(to_k, r)].strategy(mode).expect("checked").regions)?;
                    if a.len() != train_ids.len() {
                        return Err(Error::Shape(format!(
                            "cell (k={from_k}, replicate={r}) maps {} instances, train split has {}",
                            a.len(),
                            train_ids.len()
                        )));
                    }
                    aligned_transitions(from_k, to_k, &a, &b)
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled = TransitionReport::pooled(&per_replicate).expect("at least one replicate");
            transitions.push(TransitionPair {
                mode,
                from_k,
                to_k,
                pooled,
                per_replicate,
            });
        }
    }

    Ok(SweepReport {
        dataset: dataset.to_string(),
        ks,
        replicates: cfg.replicates,
        base_seed: cfg.base_seed,
        metadata: ReportMetadata {
            majority_tie_rule: "lowest class index".into(),
            extremum_tie_rule: "smaller k".into(),
            std_kind: "population".into(),
            variability_measure: "std".into(),
            vinfo_split: cfg.vinfo_split.as_str().into(),
            region_rule: cfg.region_rule,
        },
        modes,
        transitions,
        notes,
    })
}

/// Accuracy with at most three decimals and no trailing zeros: `0.75`, `0.6`.
pub fn format_accuracy(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

impl SweepReport {
    pub fn mode(&self, name: &str) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == name)
    }

    pub fn transition(&self, mode: TrainMode, from_k: usize, to_k: usize) -> Option<&TransitionPair> {
        self.transitions
            .iter()
            .find(|t| t.mode == mode && t.from_k == from_k && t.to_k == to_k)
    }

    /// Min/max rows per mode with the budget in parentheses.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for m in &self.modes {
            let _ = writeln!(out, "[{}]", m.mode);
            let _ = writeln!(
                out,
                "min {} ({}) | max {} ({}) | gain {}",
                format_accuracy(m.min.accuracy),
                m.min.k,
                format_accuracy(m.max.accuracy),
                m.max.k,
                format_accuracy(m.gain)
            );
            out.push('\n');
        }
        out
    }

    /// Accuracy-versus-budget series with mean ± std and mean V-information.
    pub fn render_series(&self) -> String {
        let mut out = String::new();
        for m in &self.modes {
            let _ = writeln!(out, "[{}]", m.mode);
            let _ = writeln!(out, "{:>5}  {:>15}  {:>8}", "k", "accuracy", "V-info");
            for s in &m.per_k {
                let _ = writeln!(
                    out,
                    "{:>5}  {:>7.4} ± {:<6.4}  {:>8.4}",
                    s.k, s.mean, s.std, s.v_information_mean
                );
            }
            out.push('\n');
        }
        out
    }

    /// Pooled transition proportions per budget pair.
    pub fn render_transitions(&self) -> String {
        let mut out = String::new();
        if self.transitions.is_empty() {
            out.push_str("no transition pairs: a single budget was swept\n");
            return out;
        }
        for t in &self.transitions {
            let _ = write!(out, "[{}] {} -> {}:", t.mode, t.from_k, t.to_k);
            if t.pooled.no_transitions {
                out.push_str(" no transitions\n");
                continue;
            }
            for (name, p, _) in t.pooled.moves() {
                let _ = write!(out, " {name} {p:.3}");
            }
            let _ = writeln!(out, " (movers {}, stayed {})", t.pooled.movers, t.pooled.non_movers);
        }
        out
    }

    /// Long format for stacked-bar plots: `mode,from_k,to_k,transition,proportion,count`.
    pub fn transitions_csv(&self) -> String {
        let mut out = String::from("mode,from_k,to_k,transition,proportion,count\n");
        for t in &self.transitions {
            for (name, p, c) in t.pooled.moves() {
                let _ = writeln!(out, "{},{},{},{},{},{}", t.mode, t.from_k, t.to_k, name, p, c);
            }
        }
        out
    }
}
