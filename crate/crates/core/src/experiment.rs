//! The annotation-budget sweep.
//!
//! For every budget `k` and replicate `r` a cell simulates `k` annotations per
//! instance, trains one classifier per strategy (ML, LD) on the shared train
//! split, evaluates it, estimates V-information and builds a cartography map.
//! Cells are independent and are written to `cells/` as soon as they finish.
//!
//! Output directory layout:
//!
//! ```text
//! config.json          resolved configuration
//! cells/k003_r001.json one file per (k, replicate)
//! report.json          aggregated SweepReport
//! accuracy.csv         k,replicate,mode,accuracy,v_information
//! transitions.csv      mode,from_k,to_k,transition,proportion,count
//! maps/                cartography CSVs, when export_maps is set
//! failures.json        failed cells, only after a failure
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cartography::{compute_map, CartographyMap, Region, RegionRule};
use crate::data::{self, Dataset, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureConfig};
use crate::io::{read_to_string, write_atomic, write_json_atomic};
use crate::model::{fit_monitored, fit_null, predict_proba, DevSet, DynamicsRecord, ModelState, TrainConfig};
use crate::rng::{fnv1a, SeedKey};
use crate::simulate::build_subset;
use crate::summary::{summarize, SweepReport};
use crate::synth::{make_synthetic, GeneratorSpec};
use crate::targets::{absolute_gt_targets, accuracy, EvalMode, EvalTargets, TrainMode, TrainTargets};
use crate::vinfo::{vinfo_report, GoldSource, VInfoReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Dev,
    #[default]
    Test,
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Dev => "dev",
            EvalSplit::Test => "test",
        }
    }
}

fn default_modes() -> Vec<EvalMode> {
    vec![EvalMode::Ml, EvalMode::Ld, EvalMode::AbsoluteGt]
}

fn default_replicates() -> usize {
    10
}

/// Sweep configuration; mirrors the JSON config file key for key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSONL dataset. Exactly one of `dataset` and `synthetic` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<GeneratorSpec>,
    pub ks: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_modes")]
    pub eval_modes: Vec<EvalMode>,
    #[serde(default)]
    pub region_rule: RegionRule,
    /// Split on which V-information and PVI are estimated.
    #[serde(default)]
    pub vinfo_split: EvalSplit,
    #[serde(default)]
    pub export_maps: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => {
                return Err(Error::Config(
                    "set exactly one of `dataset` and `synthetic`".into(),
                ))
            }
        }
        if self.ks.is_empty() {
            return Err(Error::Config("`ks` must not be empty".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("budgets must satisfy 1 <= k <= M; got k=0".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("`replicates` must be at least 1".into()));
        }
        if self.eval_modes.is_empty() {
            return Err(Error::Config("`eval_modes` must not be empty".into()));
        }
        self.split_spec().validate()?;
        self.train.validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train,
            dev_fraction: self.split.dev,
            test_fraction: self.split.test,
            seed: SeedKey::new(self.base_seed).with_str("split").seed(),
        }
    }

    /// Training strategies implied by `eval_modes`: ML and LD select
    /// themselves; absolute ground truth alone trains both.
    pub fn strategies(&self) -> Vec<TrainMode> {
        let mut out = Vec::new();
        if self.eval_modes.contains(&EvalMode::Ml) {
            out.push(TrainMode::Ml);
        }
        if self.eval_modes.contains(&EvalMode::Ld) {
            out.push(TrainMode::Ld);
        }
        if out.is_empty() {
            out = vec![TrainMode::Ml, TrainMode::Ld];
        }
        out
    }

    pub fn absolute_gt(&self) -> bool {
        self.eval_modes.contains(&EvalMode::AbsoluteGt)
    }

    /// Sorted, de-duplicated budgets.
    pub fn sorted_ks(&self) -> Vec<usize> {
        self.ks.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Hash of everything that affects cell results; used to validate
    /// resumed cells.
    pub fn fingerprint(&self) -> u64 {
        let mut copy = self.clone();
        copy.output_dir = None;
        copy.export_maps = false;
        copy.ks = Vec::new();
        copy.replicates = 0;
        fnv1a(serde_json::to_string(&copy).expect("config serializes").as_bytes())
    }
}

/// Dataset, splits and features shared by every cell.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub splits: Splits,
    pub train_ids: Vec<String>,
    pub x_train: Array2<f64>,
    pub x_dev: Array2<f64>,
    pub x_test: Array2<f64>,
    pub absolute_test: EvalTargets,
}

pub fn load_config_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), _) => data::load_dataset(path),
        (None, Some(spec)) => Ok(make_synthetic(spec)?.dataset),
        (None, None) => Err(Error::Config("no dataset configured".into())),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = load_config_dataset(cfg)?;
    prepare_with(cfg, dataset)
}

pub fn prepare_with(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Prepared> {
    cfg.validate()?;
    for &k in &cfg.ks {
        if k > dataset.annotator_count() {
            return Err(Error::BudgetOutOfRange {
                k,
                max: dataset.annotator_count(),
            });
        }
    }
    let splits = data::split(&dataset, &cfg.split_spec())?;
    let x_train = featurize(&splits.train, &cfg.features)?;
    let x_dev = featurize(&splits.dev, &cfg.features)?;
    let x_test = featurize(&splits.test, &cfg.features)?;
    let absolute_test = absolute_gt_targets(&splits.test);
    let train_ids = splits.train.instances().iter().map(|i| i.id.clone()).collect();
    Ok(Prepared {
        config: cfg.clone(),
        dataset,
        splits,
        train_ids,
        x_train,
        x_dev,
        x_test,
        absolute_test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VInfoSummary {
    pub h_y: f64,
    pub h_y_given_x: f64,
    pub v_information: f64,
    pub negative: bool,
    pub clamped: usize,
    pub gold_source: GoldSource,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub mode: TrainMode,
    /// Against the `k`-annotation test targets.
    pub accuracy: f64,
    /// Against targets from all `M` annotations; present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_absolute: Option<f64>,
    pub dev_accuracy: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub train_ties: usize,
    pub test_ties: usize,
    pub vinfo: VInfoSummary,
    /// Region counts: easy, ambiguous, hard.
    pub region_counts: [usize; 3],
    pub mean_confidence: f64,
    pub mean_variability: f64,
    /// One letter (`e`, `a`, `h`) per training instance, in train-split order.
    pub regions: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k: usize,
    pub replicate: usize,
    pub config_fingerprint: u64,
    pub strategies: Vec<StrategyResult>,
}

impl CellResult {
    pub fn file_name(k: usize, replicate: usize) -> String {
        format!("k{k:03}_r{replicate:03}.json")
    }

    pub fn strategy(&self, mode: TrainMode) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.mode == mode)
    }
}

pub fn parse_regions(letters: &str) -> Result<Vec<Region>> {
    letters
        .chars()
        .map(|c| match c {
            'e' => Ok(Region::Easy),
            'a' => Ok(Region::Ambiguous),
            'h' => Ok(Region::Hard),
            other => Err(Error::InvalidArgument(format!("unknown region letter {other:?}"))),
        })
        .collect()
}

fn cell_seed(cfg: &ExperimentConfig, k: usize, replicate: usize, mode: TrainMode, purpose: &str) -> u64 {
    SeedKey::new(cfg.base_seed)
        .with(k as u64)
        .with(replicate as u64)
        .with_str(mode.as_str())
        .with_str(purpose)
        .seed()
}

/// Everything one strategy of one cell produces, before reduction to a
/// [`StrategyResult`].
pub struct StrategyRun {
    pub result: StrategyResult,
    pub model: ModelState,
    pub null_model: ModelState,
    pub dynamics: DynamicsRecord,
    pub map: CartographyMap,
    pub vinfo: VInfoReport,
}

/// Trains and evaluates a single strategy exactly as a sweep cell would.
pub fn run_strategy(
    prep: &Prepared,
    k: usize,
    replicate: usize,
    mode: TrainMode,
    map_out: Option<&Path>,
) -> Result<StrategyRun> {
    let cfg = &prep.config;
    let seed = cfg.base_seed;
    let train_subset = build_subset(&prep.splits.train, k, seed, replicate)?;
    let dev_subset = build_subset(&prep.splits.dev, k, seed, replicate)?;
    let test_subset = build_subset(&prep.splits.test, k, seed, replicate)?;

    let targets = TrainTargets::from_subset(&train_subset, mode)?;
    let gold_train = targets.gold();
    let dev_targets = EvalTargets::from_subset(&dev_subset, mode)?;
    let test_targets = EvalTargets::from_subset(&test_subset, mode)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cell_seed(cfg, k, replicate, mode, "batches");
    let fitted = fit_monitored(
        prep.x_train.view(),
        &targets,
        &train_cfg,
        Some(&gold_train),
        Some(DevSet {
            features: prep.x_dev.view(),
            labels: &dev_targets.labels,
        }),
    )?;
    let probs = predict_proba(&fitted.model, prep.x_test.view())?;
    let acc = accuracy(probs.view(), &test_targets.labels)?;
    let accuracy_absolute = if cfg.absolute_gt() {
        Some(accuracy(probs.view(), &prep.absolute_test.labels)?)
    } else {
        None
    };

    let null = fit_null(&targets, &train_cfg)?;
    let gold_source = match mode {
        TrainMode::Ml => GoldSource::Majority,
        TrainMode::Ld => GoldSource::DistributionArgmax,
    };
    let (ids, x_eval, gold_eval): (Vec<String>, _, Vec<usize>) = match cfg.vinfo_split {
        EvalSplit::Train => (prep.train_ids.clone(), prep.x_train.view(), gold_train.clone()),
        EvalSplit::Dev => (
            dev_subset.records.iter().map(|r| r.id.clone()).collect(),
            prep.x_dev.view(),
            dev_targets.labels.clone(),
        ),
        EvalSplit::Test => (
            test_subset.records.iter().map(|r| r.id.clone()).collect(),
            prep.x_test.view(),
            test_targets.labels.clone(),
        ),
    };
    let vi = vinfo_report(
        &fitted.model,
        &null,
        &ids,
        x_eval,
        &gold_eval,
        gold_source,
        cfg.vinfo_split.as_str(),
    )?;

    let dynamics = fitted.dynamics.expect("gold labels were supplied");
    let map = compute_map(&dynamics, &prep.train_ids, cfg.region_rule, k, replicate)?;
    if let Some(dir) = map_out {
        let mut buf = Vec::new();
        map.write_csv(&mut buf).map_err(|e| Error::io(dir, e))?;
        let name = format!("{}_k{k:03}_r{replicate:03}.csv", mode.as_str().to_lowercase());
        write_atomic(&dir.join(name), &buf)?;
    }
    let n = map.entries.len() as f64;
    let result = StrategyResult {
        mode,
        accuracy: acc,
        accuracy_absolute,
        dev_accuracy: fitted.dev_accuracy,
        epoch_losses: fitted.epoch_losses,
        train_ties: targets.ties(),
        test_ties: test_targets.ties,
        vinfo: VInfoSummary {
            h_y: vi.h_y,
            h_y_given_x: vi.h_y_given_x,
            v_information: vi.v_information,
            negative: vi.negative,
            clamped: vi.clamped,
            gold_source,
            split: vi.evaluation_split.clone(),
        },
        region_counts: map.region_counts(),
        mean_confidence: map.entries.iter().map(|e| e.confidence).sum::<f64>() / n,
        mean_variability: map.entries.iter().map(|e| e.variability).sum::<f64>() / n,
        regions: map.entries.iter().map(|e| e.region.letter()).collect(),
    };
    Ok(StrategyRun {
        result,
        model: fitted.model,
        null_model: null,
        dynamics,
        map,
        vinfo: vi,
    })
}

/// Runs one `(k, replicate)` cell. `map_dir` receives cartography CSVs.
pub fn run_cell(prep: &Prepared, k: usize, replicate: usize, map_dir: Option<&Path>) -> Result<CellResult> {
    let strategies = prep
        .config
        .strategies()
        .into_iter()
        .map(|mode| run_strategy(prep, k, replicate, mode, map_dir).map(|run| run.result))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Cell {
            k,
            replicate,
            source: Box::new(e),
        })?;
    Ok(CellResult {
        k,
        replicate,
        config_fingerprint: prep.config.fingerprint(),
        strategies,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the number of logical processors.
    pub jobs: Option<usize>,
    /// Reuse cell files already present in the output directory.
    pub resume: bool,
    /// Overrides `output_dir` from the config.
    pub output_dir: Option<PathBuf>,
}

fn try_resume(path: &Path, fingerprint: u64, k: usize, replicate: usize) -> Option<CellResult> {
    let text = std::fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.k == k && cell.replicate == replicate && cell.config_fingerprint == fingerprint).then_some(cell)
}

/// Runs every cell, writes the artifacts and returns the aggregated report.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepReport> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, opts)
}

pub fn run_prepared(prep: &Prepared, opts: &RunOptions) -> Result<SweepReport> {
    let cfg = &prep.config;
    let out_dir = opts.output_dir.clone().or_else(|| cfg.output_dir.clone());
    let cells_dir = out_dir.as_ref().map(|d| d.join("cells"));
    let maps_dir = out_dir.as_ref().filter(|_| cfg.export_maps).map(|d| d.join("maps"));
    if let Some(dir) = &out_dir {
        let mut resolved = cfg.clone();
        resolved.output_dir = Some(dir.clone());
        write_json_atomic(&dir.join("config.json"), &resolved)?;
    }

    let ks = cfg.sorted_ks();
    let coords: Vec<(usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| ks.iter().map(move |&k| (k, r)))
        .collect();
    let fingerprint = cfg.fingerprint();
    let job = |&(k, r): &(usize, usize)| -> Result<CellResult> {
        let path = cells_dir.as_ref().map(|d| d.join(CellResult::file_name(k, r)));
        if opts.resume {
            if let Some(cell) = path.as_ref().and_then(|p| try_resume(p, fingerprint, k, r)) {
                return Ok(cell);
            }
        }
        let cell = run_cell(prep, k, r, maps_dir.as_deref())?;
        if let Some(p) = &path {
            write_json_atomic(p, &cell)?;
        }
        log::debug!("finished cell k={k} replicate={r}");
        Ok(cell)
    };

    let threads = opts.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let results: Vec<Result<CellResult>> = pool.install(|| coords.par_iter().map(job).collect());

    let mut cells = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for ((k, r), res) in coords.iter().zip(results) {
        match res {
            Ok(c) => cells.push(c),
            Err(e) => failures.push((*k, *r, e)),
        }
    }
    if !failures.is_empty() {
        if let Some(dir) = &out_dir {
            let listing: Vec<_> = failures
                .iter()
                .map(|(k, r, e)| serde_json::json!({"k": k, "replicate": r, "error": e.to_string()}))
                .collect();
            write_json_atomic(&dir.join("failures.json"), &listing)?;
        }
        let total = coords.len();
        let failed = failures.len();
        let (k, replicate, first) = failures.swap_remove(0);
        let first = match first {
            e @ Error::Cell { .. } => e,
            other => Error::Cell {
                k,
                replicate,
                source: Box::new(other),
            },
        };
        return Err(Error::Sweep {
            failed,
            total,
            first: Box::new(first),
        });
    }

    let report = summarize(cfg, prep.dataset.name(), &prep.train_ids, &cells)?;
    if let Some(dir) = &out_dir {
        write_outputs(dir, &report, &cells)?;
    }
    Ok(report)
}

/// Writes `report.json`, `accuracy.csv` and `transitions.csv`.
pub fn write_outputs(dir: &Path, report: &SweepReport, cells: &[CellResult]) -> Result<()> {
    write_json_atomic(&dir.join("report.json"), report)?;
    write_atomic(&dir.join("accuracy.csv"), accuracy_csv(cells).as_bytes())?;
    write_atomic(&dir.join("transitions.csv"), report.transitions_csv().as_bytes())?;
    let _ = std::fs::remove_file(dir.join("failures.json"));
    Ok(())
}

/// Long format: one row per cell, strategy and evaluation.
pub fn accuracy_csv(cells: &[CellResult]) -> String {
    let mut sorted: Vec<&CellResult> = cells.iter().collect();
    sorted.sort_by_key(|c| (c.k, c.replicate));
    let mut out = String::from("k,replicate,mode,accuracy,v_information\n");
    for c in sorted {
        for s in &c.strategies {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.k, c.replicate, s.mode, s.accuracy, s.vinfo.v_information
            ));
            if let Some(abs) = s.accuracy_absolute {
                out.push_str(&format!(
                    "{},{},{}/AbsoluteGT,{},{}\n",
                    c.k, c.replicate, s.mode, abs, s.vinfo.v_information
                ));
            }
        }
    }
    out
}

/// Reads a sweep output directory back: the resolved config and every cell.
pub fn load_results(dir: &Path) -> Result<(ExperimentConfig, Vec<CellResult>)> {
    let config_path = dir.join("config.json");
    if !config_path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no sweep results",
            dir.display()
        )));
    }
    let cfg = ExperimentConfig::load(&config_path)?;
    let cells_dir = dir.join("cells");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&cells_dir)
        .map_err(|e| Error::io(&cells_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let cells = paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&read_to_string(p)?)?))
        .collect::<Result<Vec<CellResult>>>()?;
    if cells.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no cell results in {}",
            cells_dir.display()
        )));
    }
    Ok((cfg, cells))
}

/// Rebuilds the report from a results directory without retraining.
pub fn report_from_dir(dir: &Path) -> Result<SweepReport> {
    let (cfg, cells) = load_results(dir)?;
    let dataset = load_config_dataset(&cfg)?;
    let splits = data::split(&dataset, &cfg.split_spec())?;
    let train_ids: Vec<String> = splits.train.instances().iter().map(|i| i.id.clone()).collect();
    summarize(&cfg, dataset.name(), &train_ids, &cells)
}
