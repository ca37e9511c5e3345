use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use annobudget::cartography::{compute_map, transitions, RegionRule};
use annobudget::data::load_dataset;
use annobudget::experiment::{prepare, report_from_dir, run_prepared, run_strategy, ExperimentConfig, RunOptions};
use annobudget::io::{read_to_string, write_atomic, write_json_atomic};
use annobudget::model::DynamicsRecord;
use annobudget::simulate::build_subset;
use annobudget::synth::{make_synthetic, GeneratorSpec};
use annobudget::targets::TrainMode;
use annobudget::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Writes to stdout; a closed pipe ends the process quietly.
fn emit(text: std::fmt::Arguments<'_>) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().lock().write_fmt(text) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("writing to stdout: {e}");
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*)) };
}

macro_rules! outln {
    () => { emit(format_args!("\n")) };
    ($($t:tt)*) => { emit(format_args!("{}\n", format_args!($($t)*))) };
}

/// Annotation-budget experiments on multi-annotator classification data.
///
/// Exit status: 0 success, 1 I/O failure, 2 invalid input or usage,
/// 3 a sweep cell failed.
#[derive(Parser, Debug)]
#[command(name = "annobudget", version)]
struct Cli {
    /// More log output; repeat for debug and trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw k annotations per instance from a dataset's label counts.
    Simulate(SimulateArgs),
    /// Train one strategy for one (k, replicate) cell of a sweep config.
    Train(CellArgs),
    /// Run a full budget sweep and print the min/max table.
    Sweep(SweepArgs),
    /// Build a cartography map from a dynamics CSV, optionally with
    /// transitions against a second one.
    Cartography(CartographyArgs),
    /// Estimate V-information and PVI for one (k, replicate) cell.
    Vinfo(CellArgs),
    /// Re-aggregate a sweep output directory and print its tables.
    Report(ReportArgs),
    /// Generate a synthetic multi-annotator dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSONL dataset with per-instance label counts.
    #[arg(long)]
    dataset: PathBuf,
    /// Annotations drawn per instance, 1 <= k <= M.
    #[arg(short, long)]
    k: usize,
    /// Base seed of the annotation shuffles.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    /// Output JSONL file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CellArgs {
    /// Sweep configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(short, long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Ld)]
    mode: ModeArg,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the cell artifacts.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `dataset`, replacing any `synthetic` section.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides `ks`, e.g. `1,2,5,10`.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Overrides `replicates`.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads [default: logical processors].
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Reuse finished cells found in the output directory.
    #[arg(long)]
    resume: bool,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CartographyArgs {
    /// Dynamics CSV (instance_id,epoch,gold_prob).
    #[arg(long)]
    dynamics: PathBuf,
    /// Second dynamics CSV; prints transitions from the first to it.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RuleArg::Threshold)]
    rule: RuleArg,
    #[arg(long, default_value_t = 0.25)]
    variability_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    confidence_threshold: f64,
    /// Budget label written into the map.
    #[arg(short, long, default_value_t = 0)]
    k: usize,
    /// Budget label of the `--compare` map.
    #[arg(long, default_value_t = 0)]
    compare_k: usize,
    /// Map CSV output.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Sweep output directory.
    dir: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator spec (JSON); the reference generator when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    annotators: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    /// Output JSONL file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "ML", alias = "ml")]
    Ml,
    #[value(name = "LD", alias = "ld")]
    Ld,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ml => TrainMode::Ml,
            ModeArg::Ld => TrainMode::Ld,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    Threshold,
    Percentile,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cartography(a) => cmd_cartography(a),
        Command::Vinfo(a) => cmd_vinfo(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        1
    } else if e.is_runtime() {
        3
    } else {
        2
    }
}

/// Loads a sweep config; a relative `dataset` path is taken relative to the
/// config file.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(ds) = cfg.dataset.as_mut() {
        if ds.is_relative() {
            if let Some(parent) = path.parent() {
                *ds = parent.join(&*ds);
            }
        }
    }
    Ok(cfg)
}

/// Validation done before any work starts; a missing dataset is a usage
/// error rather than an I/O failure.
fn check_config(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    match &cfg.dataset {
        Some(p) if !p.is_file() => Err(Error::Config(format!("dataset not found: {}", p.display()))),
        _ => Ok(()),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let subset = build_subset(&ds, a.k, a.seed, a.replicate)?;
    let mut buf = Vec::new();
    subset
        .write_jsonl(&mut buf)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&a.out, &buf)?;

    let totals = subset.class_totals();
    let drawn: u64 = totals.iter().sum();
    outln!(
        "{}: {} instances, k={} of M={}, replicate {}",
        ds.name(),
        subset.len(),
        a.k,
        ds.annotator_count(),
        a.replicate
    );
    for (label, count) in ds.class_labels().iter().zip(&totals) {
        outln!("  {label:<16} {count:>8} ({:.3})", *count as f64 / drawn as f64);
    }
    Ok(())
}

fn cell_config(a: &CellArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    cfg.ks = vec![a.k];
    check_config(&cfg)?;
    Ok(cfg)
}

fn cmd_train(a: CellArgs) -> Result<()> {
    let cfg = cell_config(&a)?;
    let prep = prepare(&cfg)?;
    let run = run_strategy(&prep, a.k, a.replicate, a.mode.into(), None)?;
    let r = &run.result;
    outln!("{} k={} replicate={}", r.mode, a.k, a.replicate);
    outln!("  test accuracy     {:.4}", r.accuracy);
    if let Some(abs) = r.accuracy_absolute {
        outln!("  vs all annotators {abs:.4}");
    }
    let losses: Vec<String> = r.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    outln!("  epoch losses      {}", losses.join(" "));
    let [e, am, h] = r.region_counts;
    outln!("  regions           easy {e} | ambiguous {am} | hard {h}");

    if let Some(dir) = &a.out {
        write_atomic(&dir.join("model.json"), run.model.to_json()?.as_bytes())?;
        write_atomic(&dir.join("null_model.json"), run.null_model.to_json()?.as_bytes())?;
        let mut dyn_csv = Vec::new();
        run.dynamics.write_csv(&prep.train_ids, &mut dyn_csv)?;
        write_atomic(&dir.join("dynamics.csv"), &dyn_csv)?;
        let mut map_csv = Vec::new();
        run.map
            .write_csv(&mut map_csv)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_atomic(&dir.join("map.csv"), &map_csv)?;
        write_json_atomic(&dir.join("result.json"), r)?;
    }
    Ok(())
}

fn cmd_vinfo(a: CellArgs) -> Result<()> {
    let cfg = cell_config(&a)?;
    let prep = prepare(&cfg)?;
    let run = run_strategy(&prep, a.k, a.replicate, a.mode.into(), None)?;
    let v = &run.vinfo;
    outln!(
        "{} k={} replicate={} ({} split, gold {})",
        run.result.mode,
        a.k,
        a.replicate,
        v.evaluation_split,
        serde_json::to_value(v.gold_source)?.as_str().unwrap_or("?")
    );
    outln!("  H_V(Y)    {:.6} bits", v.h_y);
    outln!("  H_V(Y|X)  {:.6} bits", v.h_y_given_x);
    outln!(
        "  I_V       {:.6} bits{}",
        v.v_information,
        if v.negative { " (negative)" } else { "" }
    );
    outln!("  mean PVI  {:.6} bits", v.mean_pvi());
    if v.clamped > 0 {
        outln!("  {} probabilities floored", v.clamped);
    }
    if let Some(dir) = &a.out {
        let mut buf = Vec::new();
        v.write_pvi_csv(&mut buf)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_atomic(&dir.join("pvi.csv"), &buf)?;
        write_json_atomic(&dir.join("vinfo.json"), v)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    if let Some(ds) = a.dataset {
        cfg.dataset = Some(ds);
        cfg.synthetic = None;
    }
    if let Some(ks) = a.ks {
        cfg.ks = ks;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    check_config(&cfg)?;
    if a.jobs == Some(0) {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let prep = prepare(&cfg)?;
    log::info!(
        "{}: {} budgets x {} replicates",
        prep.dataset.name(),
        cfg.sorted_ks().len(),
        cfg.replicates
    );
    let opts = RunOptions {
        jobs: a.jobs,
        resume: a.resume,
        output_dir: a.out,
    };
    let report = run_prepared(&prep, &opts)?;
    out!("{}", report.render_table());
    for note in &report.notes {
        outln!("note: {note}");
    }
    Ok(())
}

fn read_dynamics(path: &Path) -> Result<(Vec<String>, DynamicsRecord)> {
    let f = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    DynamicsRecord::read_csv(BufReader::new(f))
}

fn cmd_cartography(a: CartographyArgs) -> Result<()> {
    let rule = match a.rule {
        RuleArg::Threshold => RegionRule::Threshold {
            variability_threshold: a.variability_threshold,
            confidence_threshold: a.confidence_threshold,
        },
        RuleArg::Percentile => RegionRule::Percentile,
    };
    let (ids, dynamics) = read_dynamics(&a.dynamics)?;
    let map = compute_map(&dynamics, &ids, rule, a.k, 0)?;
    let [e, am, h] = map.region_counts();
    outln!("{} instances: easy {e} | ambiguous {am} | hard {h}", map.entries.len());
    if let Some(out) = &a.out {
        let mut buf = Vec::new();
        map.write_csv(&mut buf)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_atomic(out, &buf)?;
    }
    if let Some(other) = &a.compare {
        let (ids_b, dyn_b) = read_dynamics(other)?;
        let map_b = compute_map(&dyn_b, &ids_b, rule, a.compare_k, 0)?;
        let t = transitions(&map, &map_b)?;
        if t.no_transitions {
            outln!("no instance changed region");
        } else {
            outln!("{} movers, {} unchanged", t.movers, t.non_movers);
            for (name, p, n) in t.moves() {
                outln!("  {name}  {p:.3} ({n})");
            }
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let report = report_from_dir(&a.dir)?;
    out!("{}", report.render_series());
    outln!();
    out!("{}", report.render_table());
    outln!();
    out!("{}", report.render_transitions());
    write_atomic(&a.dir.join("transitions.csv"), report.transitions_csv().as_bytes())?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(path) => serde_json::from_str::<GeneratorSpec>(&read_to_string(path)?)
            .map_err(|e| Error::Config(e.to_string()))?,
        None => GeneratorSpec::reference(0),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.instances {
        spec.instances = v;
    }
    if let Some(v) = a.annotators {
        spec.annotators = v;
    }
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.features {
        spec.features = v;
    }
    if let Some(v) = a.separation {
        spec.separation = v;
    }
    let data = make_synthetic(&spec)?;
    write_atomic(&a.out, data.dataset.to_jsonl_string().as_bytes())?;
    outln!(
        "{} instances, {} classes, {} annotators, {} features",
        data.dataset.len(),
        data.dataset.num_classes(),
        data.dataset.annotator_count(),
        spec.features
    );
    outln!(
        "annotation accuracy of the Bayes classifier: {:.4}",
        data.bayes_annotation_accuracy()
    );
    Ok(())
}
