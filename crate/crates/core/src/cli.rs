//! Command-line front end.
//!
//! Stages exchange files under one output directory:
//!
//! ```text
//! bundles/tc<id>.csv, bundles/tc<id>.json   generate
//! pvalues/tc<id>.csv                        detect
//! datasets/tc<id>/<slug>_{train,eval}.csv   dataset (+ _index.csv)
//! models/tc<id>/<slug>.json                 train
//! results.csv, curves/tc<id>.csv            evaluate
//! ranks.csv                                 rank
//! ```
//!
//! `experiment` runs every stage in memory per test case and writes the
//! results, ranks, curves and the per-k sweep.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::detectors::{Detector, DetectorConfig, PValueMatrix};
use crate::error::{Error, Result};
use crate::eval::{self, MethodResult};
use crate::forest::{self, ClassWeight, ForestModel};
use crate::persist::{self, Manifest};
use crate::pipeline::{self, ExperimentPlan, Method};
use crate::series::SeriesBundle;
use crate::stacking::{assemble_with, detect_bundle, FusionConfig};
use crate::synthgen::{generate_bundle, Grid, KMode, SERIES_PER_CASE};

#[derive(Debug, Parser)]
#[command(name = "outbreak-fusion", version, about = "Stacked outbreak detection experiments")]
struct Cli {
    /// Worker threads (defaults to the number of cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark
    Generate(GenerateArgs),
    /// Run the detectors over generated bundles
    Detect(DetectArgs),
    /// Assemble stacking datasets for fusion methods
    Dataset(MethodArgs),
    /// Train fusion models
    Train(TrainArgs),
    /// Score methods on the evaluation window
    Evaluate(EvaluateArgs),
    /// Average ranks across test cases
    Rank(RankArgs),
    /// Run the full experiment grid
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory shared by all stages
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Test-case grid (JSON); the built-in 42-case grid by default
    #[arg(long)]
    grid: Option<PathBuf>,
}

impl GridArgs {
    fn load(&self) -> Result<Grid> {
        match &self.grid {
            Some(p) => Grid::load(p),
            None => Ok(Grid::default_grid()),
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
    /// Outbreak size parameter: `uniform` or `fixed:<int>`
    #[arg(long, default_value = "uniform")]
    k: KMode,
    #[arg(long, default_value_t = SERIES_PER_CASE)]
    n_series: usize,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    /// Detector window length
    #[arg(long, default_value_t = 7)]
    window: usize,
}

#[derive(Debug, Args)]
struct MethodArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated methods: detector names or M(a,o,w) fusion notation
    #[arg(long, default_value = "C1,C2,C3,Bayes,RKI,S(mu,O3,1),P(mu,O3,1)")]
    methods: String,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    methods: MethodArgs,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Class weighting: `none` or `balanced`
    #[arg(long, default_value = "none", value_parser = parse_class_weight)]
    class_weight: ClassWeight,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    methods: MethodArgs,
    /// Maximum false alarm rate of the partial areas
    #[arg(long, default_value_t = eval::DEFAULT_E)]
    e: f64,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = eval::DEFAULT_E)]
    e: f64,
    #[arg(long, default_value = "uniform")]
    k: KMode,
    #[arg(long, default_value_t = SERIES_PER_CASE)]
    n_series: usize,
    #[arg(long, default_value_t = 7)]
    window: usize,
    /// Fixed k values of the per-k sweep
    #[arg(long, default_value = "2,6,10", value_delimiter = ',')]
    k_sweep: Vec<u32>,
    /// Skip the per-k sweep
    #[arg(long)]
    no_k_sweep: bool,
}

fn parse_class_weight(s: &str) -> std::result::Result<ClassWeight, String> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(ClassWeight::None),
        "balanced" => Ok(ClassWeight::Balanced),
        _ => Err(format!("unknown class weighting `{s}`")),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 usage error, 2 data error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    } else {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    }
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::invalid(format!("cannot start {n} worker threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn bundle_paths(out: &Path, tc: u32) -> (PathBuf, PathBuf) {
    let dir = out.join("bundles");
    (dir.join(format!("tc{tc}.csv")), dir.join(format!("tc{tc}.json")))
}

fn pvalue_path(out: &Path, tc: u32) -> PathBuf {
    out.join("pvalues").join(format!("tc{tc}.csv"))
}

fn dataset_paths(out: &Path, tc: u32, cfg: &FusionConfig, part: &str) -> (PathBuf, PathBuf) {
    let dir = out.join("datasets").join(format!("tc{tc}"));
    let slug = cfg.slug();
    (dir.join(format!("{slug}_{part}.csv")), dir.join(format!("{slug}_{part}_index.csv")))
}

fn model_path(out: &Path, tc: u32, cfg: &FusionConfig) -> PathBuf {
    out.join("models").join(format!("tc{tc}")).join(format!("{}.json", cfg.slug()))
}

/// Test-case ids with a generated bundle, ascending.
fn bundle_ids(out: &Path) -> Result<Vec<u32>> {
    let dir = out.join("bundles");
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir));
    }
    let mut ids: Vec<u32> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("tc")?.strip_suffix(".json")?.parse().ok()
        })
        .collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::MissingInput(dir.join("tc<id>.json")));
    }
    Ok(ids)
}

fn load_bundle(out: &Path, tc: u32) -> Result<SeriesBundle> {
    let (csv, json) = bundle_paths(out, tc);
    persist::read_bundle(&csv, &json)
}

fn load_pvalues(out: &Path, tc: u32) -> Result<Vec<PValueMatrix>> {
    let (file_tc, pm) = persist::read_pvalues(&pvalue_path(out, tc))?;
    if file_tc != tc {
        return Err(Error::Schema(format!("p-value file of test case {tc} holds test case {file_tc}")));
    }
    Ok(pm)
}

fn fusion_configs(methods: &[Method]) -> Vec<FusionConfig> {
    methods
        .iter()
        .filter_map(|m| match m {
            Method::Fusion(c) => Some(*c),
            Method::Detector(_) => None,
        })
        .collect()
}

fn finish<T: Serialize>(stage: &str, seed: u64, config: &T, out: &Path, start: Instant, outputs: Vec<String>) -> Result<()> {
    let mut m = Manifest::new(stage, seed, config)?;
    m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
    m.outputs = outputs;
    m.write(out)
}

#[derive(Serialize)]
struct GenerateConfig<'a> {
    grid: &'a Grid,
    n_series: usize,
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let start = Instant::now();
    let grid = a.grid.load()?.with_k_mode(a.k);
    let out = &a.common.out;
    let seed = a.common.seed;
    let outputs = grid
        .test_cases
        .par_iter()
        .map(|spec| {
            let bundle = generate_bundle(spec, a.n_series, seed)?;
            let (csv, json) = bundle_paths(out, spec.id);
            persist::write_bundle(&csv, &json, &bundle)?;
            Ok(csv.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = GenerateConfig {
        grid: &grid,
        n_series: a.n_series,
    };
    finish("generate", seed, &cfg, out, start, outputs)
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let start = Instant::now();
    let out = &a.common.out;
    let cfg = DetectorConfig::with_window(a.window);
    let outputs = bundle_ids(out)?
        .into_par_iter()
        .map(|tc| {
            let bundle = load_bundle(out, tc)?;
            let pm = detect_bundle(&bundle, &Detector::ALL, &cfg);
            let path = pvalue_path(out, tc);
            persist::write_pvalues(&path, tc, &pm)?;
            Ok(path.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    finish("detect", a.common.seed, &cfg, out, start, outputs)
}

fn cmd_dataset(a: MethodArgs) -> Result<()> {
    let start = Instant::now();
    let out = &a.common.out;
    let methods = pipeline::parse_methods(&a.methods)?;
    let configs = fusion_configs(&methods);
    let outputs = bundle_ids(out)?
        .into_par_iter()
        .map(|tc| {
            let bundle = load_bundle(out, tc)?;
            let pm = load_pvalues(out, tc)?;
            let mut written = Vec::new();
            for cfg in &configs {
                let (train, test) = assemble_with(&bundle, &pm, cfg)?;
                for (part, ds) in [("train", &train), ("eval", &test)] {
                    let (path, index) = dataset_paths(out, tc, cfg, part);
                    persist::write_dataset(&path, &index, ds)?;
                    written.push(path.display().to_string());
                }
            }
            Ok(written)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let names: Vec<String> = configs.iter().map(ToString::to_string).collect();
    finish("dataset", a.common.seed, &names, out, start, outputs)
}

fn plan_from(train: &TrainArgs, methods: Vec<Method>) -> ExperimentPlan {
    ExperimentPlan {
        seed: train.methods.common.seed,
        methods,
        n_trees: train.trees,
        min_samples_leaf: train.min_leaf,
        class_weight: train.class_weight,
        ..ExperimentPlan::default()
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let start = Instant::now();
    let out = a.methods.common.out.clone();
    let methods = pipeline::parse_methods(&a.methods.methods)?;
    let plan = plan_from(&a, methods);
    let configs = fusion_configs(&plan.methods);
    let mut jobs = Vec::new();
    for tc in bundle_ids(&out)? {
        for cfg in &configs {
            jobs.push((tc, *cfg));
        }
    }
    let outputs = jobs
        .into_par_iter()
        .map(|(tc, cfg)| {
            let (path, index) = dataset_paths(&out, tc, &cfg, "train");
            let ds = persist::read_dataset(&path, &index)?;
            let params = plan.forest_params(tc, &Method::Fusion(cfg));
            let model = forest::fit(&ds.features, &ds.targets, &params)?;
            let mpath = model_path(&out, tc, &cfg);
            if let Some(dir) = mpath.parent() {
                fs::create_dir_all(dir)?;
            }
            model.save(&mpath)?;
            Ok(mpath.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    finish("train", plan.seed, &plan, &out, start, outputs)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let out = a.methods.common.out.clone();
    let methods = pipeline::parse_methods(&a.methods.methods)?;
    if !(a.e > 0.0 && a.e <= 1.0) {
        return Err(Error::domain(format!("e must lie in (0,1], got {}", a.e)));
    }
    let per_case = bundle_ids(&out)?
        .into_par_iter()
        .map(|tc| {
            let bundle = load_bundle(&out, tc)?;
            let needs_pvalues = methods.iter().any(|m| matches!(m, Method::Detector(_)));
            let pm = if needs_pvalues { load_pvalues(&out, tc)? } else { Vec::new() };
            let mut results = Vec::new();
            let mut curves = Vec::new();
            for m in &methods {
                let scored = match m {
                    Method::Detector(d) => pipeline::detector_scores(&bundle, &pm, *d)?,
                    Method::Fusion(cfg) => {
                        let model = ForestModel::load(&model_path(&out, tc, cfg))?;
                        let (path, index) = dataset_paths(&out, tc, cfg, "eval");
                        let ds = persist::read_dataset(&path, &index)?;
                        let scores = model.predict_matrix(&ds.features)?;
                        ds.index
                            .iter()
                            .zip(scores)
                            .map(|(r, s)| {
                                let span = bundle.series[r.series as usize]
                                    .active_span(r.week as usize)
                                    .map(|i| i as u32);
                                eval::ScoredWeek::new(r.series, r.week, s, span)
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                let det = eval::detection_curve(&scored)?;
                results.push(MethodResult {
                    test_case: tc,
                    method: m.to_string(),
                    dauc: eval::partial_auc(&det, a.e)?,
                    pauc: eval::pauc(&scored, a.e)?,
                });
                curves.push((m.to_string(), det));
            }
            persist::write_curves(&out.join("curves").join(format!("tc{tc}.csv")), &curves)?;
            Ok(results)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let path = out.join("results.csv");
    persist::write_results(&path, &per_case)?;
    let names: Vec<String> = methods.iter().map(ToString::to_string).collect();
    let cfg = serde_json::json!({ "methods": names, "e": a.e });
    finish("evaluate", a.methods.common.seed, &cfg, &out, start, vec![path.display().to_string()])
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let start = Instant::now();
    let out = &a.common.out;
    let grid = a.grid.load()?;
    let results = persist::read_results(&out.join("results.csv"))?;
    let mut methods: Vec<String> = Vec::new();
    for r in &results {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let structures = pipeline::structures(&grid);
    let ranks = eval::rank_methods(&methods, &results, &structures)?;
    let path = out.join("ranks.csv");
    persist::write_ranks(&path, &ranks)?;
    finish("rank", a.common.seed, &grid, out, start, vec![path.display().to_string()])
}

#[derive(Serialize)]
struct ExperimentConfig<'a> {
    plan: &'a ExperimentPlan,
    grid: &'a Grid,
    k_sweep: &'a [u32],
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let start = Instant::now();
    let out = a.train.methods.common.out.clone();
    let grid = a.grid.load()?;
    let methods = pipeline::parse_methods(&a.train.methods.methods)?;
    let plan = ExperimentPlan {
        e: a.e,
        k_mode: a.k,
        n_series: a.n_series,
        detector_config: DetectorConfig::with_window(a.window),
        ..plan_from(&a.train, methods)
    };
    plan.validate()?;
    let sweep: &[u32] = if a.no_k_sweep { &[] } else { &a.k_sweep };
    if sweep.contains(&0) {
        return Err(Error::domain("k values of the sweep must be positive"));
    }
    fs::create_dir_all(&out)?;
    let mut outputs = Vec::new();

    let main_start = Instant::now();
    let outcomes = pipeline::run_grid(&plan, &grid)?;
    let results: Vec<MethodResult> = outcomes.iter().flat_map(|o| o.results.iter().cloned()).collect();
    let path = out.join("results.csv");
    persist::write_results(&path, &results)?;
    outputs.push(path.display().to_string());
    for o in &outcomes {
        let path = out.join("curves").join(format!("tc{}.csv", o.test_case));
        persist::write_curves(&path, &o.curves)?;
    }
    let ranks = pipeline::rank(&plan, &grid, &outcomes)?;
    let path = out.join("ranks.csv");
    persist::write_ranks(&path, &ranks)?;
    outputs.push(path.display().to_string());
    let main_time = main_start.elapsed().as_secs_f64();

    let sweep_start = Instant::now();
    if !sweep.is_empty() {
        let rows = pipeline::run_k_sweep(&plan, &grid, sweep)?;
        let path = out.join("per_k.csv");
        persist::write_per_k(&path, &rows)?;
        outputs.push(path.display().to_string());
    }
    let cfg = ExperimentConfig {
        plan: &plan,
        grid: &grid,
        k_sweep: sweep,
    };
    let mut m = Manifest::new("experiment", plan.seed, &cfg)?;
    m.timings_s.insert("grid".into(), main_time);
    m.timings_s.insert("k_sweep".into(), sweep_start.elapsed().as_secs_f64());
    m.timings_s.insert("total".into(), start.elapsed().as_secs_f64());
    m.outputs = outputs;
    m.write(&out)
}
