//! Command-line entry point. Every subcommand reads a JSON config, takes
//! input paths and a seed as flags, writes CSV/JSON artifacts into `--out`
//! and records a `manifest.json` next to them.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 completed but some fits did not converge.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{self, ActivityLog, AppId, AttributeTable, Day, SocialGraph, DEFAULT_DEGREE_CAP};
use crate::error::Error;
use crate::features::{self, FeatureOptions, FeatureSchema};
use crate::neighborhoods::{self, Attribute, NeighborhoodOptions};
use crate::retention;
use crate::rng::derive_seed;
use crate::simulator::{self, AttributeDistributions, EcosystemSpec, GraphGenConfig};
use crate::sirs;
use crate::sociality;
use crate::stats;
use crate::tasks::{self, BinaryTaskConfig, PairwiseConfig, TaskData};
use crate::timeseries;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "appdyn", version, about = "App adoption and lifecycle analytics on simulated social ecosystems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON config for the command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Friendship graph CSV (`user_a,user_b`).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// User attribute CSV.
    #[arg(long)]
    attributes: Option<PathBuf>,
    /// Activity log CSV (`app_id,user_id,day`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a friendship graph and user attributes.
    GenGraph(Common),
    /// Simulate an ecosystem of apps on a graph.
    GenEcosystem(Common),
    #[command(subcommand)]
    Metrics(MetricsCmd),
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    #[command(subcommand)]
    Fit(FitCmd),
    #[command(subcommand)]
    Cluster(ClusterCmd),
    #[command(subcommand)]
    Matrix(MatrixCmd),
    #[command(subcommand)]
    Features(FeaturesCmd),
    #[command(subcommand)]
    Task(TaskCmd),
}

#[derive(Debug, Subcommand)]
enum MetricsCmd {
    /// Popularity and sociality per app.
    Sociality(Common),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCmd {
    /// Adoption by neighborhood class and by attribute match.
    Neighborhoods(Common),
    /// Adoption against friend and user age offsets.
    AgeOffsets(Common),
}

#[derive(Debug, Subcommand)]
enum FitCmd {
    /// Retention curves and model fits.
    Retention(Common),
    /// SIRS fits and predictions of daily active users.
    Sirs(Common),
}

#[derive(Debug, Subcommand)]
enum ClusterCmd {
    /// k-means on peak-normalised launch DAU series.
    Dau(Common),
}

#[derive(Debug, Subcommand)]
enum MatrixCmd {
    /// Two-point MAU transition counts.
    MauTransition(Common),
    /// First- versus last-login counts for one app.
    FirstLast(Common),
}

#[derive(Debug, Subcommand)]
enum FeaturesCmd {
    /// Per-app feature matrix.
    Extract(Common),
}

#[derive(Debug, Subcommand)]
enum TaskCmd {
    /// Binary long-term success prediction.
    Binary(Common),
    /// Pairwise relative success prediction over divergence thresholds.
    Pairwise(Common),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

enum Outcome {
    Complete,
    /// Artifacts were written but some fits did not converge.
    Nonconverged,
}

/// Runs the binary with the process arguments.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Complete) => 0,
        Ok(Outcome::Nonconverged) => {
            eprintln!("completed; some fits did not converge");
            3
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            if matches!(e, Error::InvalidConfig(_)) {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(command: Command) -> CliResult<Outcome> {
    match command {
        Command::GenGraph(c) => gen_graph(Run::new("gen-graph", c)?),
        Command::GenEcosystem(c) => gen_ecosystem(Run::new("gen-ecosystem", c)?),
        Command::Metrics(MetricsCmd::Sociality(c)) => metrics_sociality(Run::new("metrics sociality", c)?),
        Command::Analyze(AnalyzeCmd::Neighborhoods(c)) => analyze_neighborhoods(Run::new("analyze neighborhoods", c)?),
        Command::Analyze(AnalyzeCmd::AgeOffsets(c)) => analyze_age_offsets(Run::new("analyze age-offsets", c)?),
        Command::Fit(FitCmd::Retention(c)) => fit_retention(Run::new("fit retention", c)?),
        Command::Fit(FitCmd::Sirs(c)) => fit_sirs(Run::new("fit sirs", c)?),
        Command::Cluster(ClusterCmd::Dau(c)) => cluster_dau(Run::new("cluster dau", c)?),
        Command::Matrix(MatrixCmd::MauTransition(c)) => mau_transition(Run::new("matrix mau-transition", c)?),
        Command::Matrix(MatrixCmd::FirstLast(c)) => first_last(Run::new("matrix first-last", c)?),
        Command::Features(FeaturesCmd::Extract(c)) => features_extract(Run::new("features extract", c)?),
        Command::Task(TaskCmd::Binary(c)) => task_binary(Run::new("task binary", c)?),
        Command::Task(TaskCmd::Pairwise(c)) => task_pairwise(Run::new("task pairwise", c)?),
    }
}

fn digest_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(Error::from)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One invocation: resolved config, digested inputs and the output
/// directory.
struct Run {
    command: &'static str,
    common: Common,
    config: Value,
    inputs: Vec<(String, String)>,
}

impl Run {
    fn new(command: &'static str, common: Common) -> CliResult<Self> {
        let mut config = match &common.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => json!({}),
        };
        if !config.is_object() {
            return Err(CliError::Usage("the config must be a JSON object".into()));
        }
        if let Some(seed) = common.seed {
            config["seed"] = json!(seed);
        }
        let mut run = Run {
            command,
            common,
            config,
            inputs: Vec::new(),
        };
        if let Some(p) = run.common.config.clone() {
            run.record_input(&p)?;
        }
        std::fs::create_dir_all(&run.common.out).map_err(Error::from)?;
        Ok(run)
    }

    fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let d = digest_file(path)?;
        self.inputs.push((path.display().to_string(), d));
        Ok(())
    }

    /// Deserializes the config; `Err` with a usage message on bad fields.
    fn config<T: DeserializeOwned + Serialize>(&mut self) -> CliResult<T> {
        let cfg: T = serde_json::from_value(self.config.clone())
            .map_err(|e| CliError::Usage(format!("invalid config for `{}`: {e}", self.command)))?;
        self.config = serde_json::to_value(&cfg).map_err(Error::from)?;
        Ok(cfg)
    }

    fn require(&self, p: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
        p.clone()
            .ok_or_else(|| CliError::Usage(format!("`{}` needs --{flag}", self.command)))
    }

    fn attributes(&mut self) -> CliResult<AttributeTable> {
        let p = self.require(&self.common.attributes, "attributes")?;
        self.record_input(&p)?;
        Ok(data::load_attributes(&p)?)
    }

    /// Loads the graph, padded with isolated nodes up to `min_nodes`.
    fn graph(&mut self, min_nodes: usize) -> CliResult<SocialGraph> {
        let p = self.require(&self.common.graph, "graph")?;
        self.record_input(&p)?;
        Ok(data::load_graph(&p, DEFAULT_DEGREE_CAP)?.with_node_count(min_nodes))
    }

    fn log(&mut self, horizon_end: Option<u32>) -> CliResult<ActivityLog> {
        let p = self.require(&self.common.log, "log")?;
        self.record_input(&p)?;
        Ok(data::load_log(&p, horizon_end.map(Day))?)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.common.out.join(name)).map_err(Error::from)?))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
        writeln!(w).map_err(Error::from)?;
        w.flush().map_err(Error::from)?;
        Ok(())
    }

    fn finish(self, outcome: Outcome) -> CliResult<Outcome> {
        let inputs: serde_json::Map<String, Value> =
            self.inputs.iter().map(|(p, d)| (p.clone(), json!(d))).collect();
        let manifest = json!({
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed").cloned().unwrap_or(json!(0)),
            "inputs": inputs,
            "version": format!("appdyn {VERSION}"),
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(outcome)
    }
}

fn app_list(log: &ActivityLog, apps: &Option<Vec<AppId>>) -> CliResult<Vec<AppId>> {
    match apps {
        Some(a) => {
            for &id in a {
                log.app(id)?;
            }
            Ok(a.clone())
        }
        None => Ok(log.app_ids().collect()),
    }
}

/// Keeps per-app results, skipping apps with too little data.
fn per_app<T>(apps: &[AppId], f: impl Fn(AppId) -> crate::Result<T> + Sync) -> CliResult<Vec<(AppId, T)>>
where
    T: Send,
{
    use rayon::prelude::*;
    let results: Vec<(AppId, crate::Result<T>)> = apps.par_iter().map(|&a| (a, f(a))).collect();
    let mut out = Vec::new();
    for (app, r) in results {
        match r {
            Ok(v) => out.push((app, v)),
            Err(e @ (Error::InsufficientData(_) | Error::InvalidInput(_) | Error::WindowOutsideHorizon { .. })) => {
                log::warn!("skipping app {app}: {e}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if out.is_empty() && !apps.is_empty() {
        return Err(Error::insufficient("no app produced a result").into());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GenGraphConfig {
    graph: GraphGenConfig,
    #[serde(default)]
    attributes: AttributeDistributions,
    #[serde(default)]
    homophily_weight: f64,
    #[serde(default)]
    seed: u64,
}

fn gen_graph(mut run: Run) -> CliResult<Outcome> {
    if run.common.config.is_none() {
        return Err(CliError::Usage("`gen-graph` needs --config".into()));
    }
    let cfg: GenGraphConfig = run.config()?;
    let graph_cfg = GraphGenConfig {
        seed: derive_seed(cfg.seed, "graph", 0),
        ..cfg.graph.clone()
    };
    let graph = simulator::generate_graph(&graph_cfg)?;
    let attrs = simulator::assign_attributes(
        &graph,
        &cfg.attributes,
        cfg.homophily_weight,
        derive_seed(cfg.seed, "attributes", 0),
    )?;
    data::write_graph(&graph, run.create("graph.csv")?)?;
    data::write_attributes(&attrs, run.create("attributes.csv")?)?;
    run.finish(Outcome::Complete)
}

fn gen_ecosystem(mut run: Run) -> CliResult<Outcome> {
    if run.common.config.is_none() {
        return Err(CliError::Usage("`gen-ecosystem` needs --config".into()));
    }
    let spec: EcosystemSpec = run.config()?;
    let attrs = run.attributes()?;
    let graph = run.graph(attrs.len())?;
    let (log, truth) = simulator::simulate_ecosystem(&spec, &graph, &attrs)?;
    data::write_log(&log, run.create("log.csv")?)?;
    truth.write_csv(run.create("ground_truth.csv")?)?;
    run.write_json("horizon.json", &json!({ "horizon_end": log.horizon_end() }))?;
    run.finish(Outcome::Complete)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SocialityConfig {
    horizon_end: Option<u32>,
    /// Defaults to the end of the log.
    as_of: Option<u32>,
    apps: Option<Vec<AppId>>,
    seed: u64,
}

fn metrics_sociality(mut run: Run) -> CliResult<Outcome> {
    let cfg: SocialityConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let graph = run.graph(0)?;
    let apps = app_list(&log, &cfg.apps)?;
    let as_of = cfg.as_of.map_or(log.horizon_end(), Day);
    let map = sociality::sociality_map(&log, &graph, &apps, as_of)?;
    sociality::write_points(&map.points, run.create("sociality.csv")?)?;
    map.histogram.write_csv(run.create("histogram.csv")?)?;
    run.finish(Outcome::Complete)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct NeighborhoodsConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    options: NeighborhoodOptions,
    seed: u64,
}

fn analyze_neighborhoods(mut run: Run) -> CliResult<Outcome> {
    let cfg: NeighborhoodsConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let attrs = match run.common.attributes.is_some() {
        true => Some(run.attributes()?),
        false => None,
    };
    let graph = run.graph(attrs.as_ref().map_or(0, |a| a.len()))?;
    let apps = app_list(&log, &cfg.apps)?;
    let profiles: Vec<_> = per_app(&apps, |a| neighborhoods::adoption_by_class(&graph, &log, a, &cfg.options))?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    neighborhoods::write_profiles(&profiles, run.create("class_adoption.csv")?)?;
    neighborhoods::write_ratios(&profiles, run.create("class_ratios.csv")?)?;
    if let Some(attrs) = &attrs {
        let tables: Vec<_> = per_app(&apps, |a| {
            neighborhoods::attribute_adoption(&graph, &log, a, attrs, Attribute::Country, &cfg.options)
        })?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
        neighborhoods::write_attribute_tables(&tables, run.create("country_adoption.csv")?)?;
    }
    run.finish(Outcome::Complete)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct AgeOffsetsConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    options: NeighborhoodOptions,
    n_boot: usize,
    min_bin_size: usize,
    seed: u64,
}

impl Default for AgeOffsetsConfig {
    fn default() -> Self {
        AgeOffsetsConfig {
            horizon_end: None,
            apps: None,
            options: NeighborhoodOptions::default(),
            n_boot: 1000,
            min_bin_size: 2,
            seed: 0,
        }
    }
}

fn analyze_age_offsets(mut run: Run) -> CliResult<Outcome> {
    let cfg: AgeOffsetsConfig = run.config()?;
    if cfg.n_boot < stats::MIN_BOOTSTRAP {
        return Err(Error::InvalidConfig(format!("n_boot must be at least {}", stats::MIN_BOOTSTRAP)).into());
    }
    let log = run.log(cfg.horizon_end)?;
    let attrs = run.attributes()?;
    let graph = run.graph(attrs.len())?;
    let apps = app_list(&log, &cfg.apps)?;
    let curves: Vec<_> = per_app(&apps, |a| {
        neighborhoods::age_offset_curves(
            &graph,
            &log,
            a,
            &attrs,
            &cfg.options,
            cfg.n_boot,
            cfg.min_bin_size,
            derive_seed(cfg.seed, "age-offsets", a as u64),
        )
    })?
    .into_iter()
    .map(|(a, (f, u))| (a, f, u))
    .collect();
    neighborhoods::write_age_curves(&curves, run.create("age_offsets.csv")?)?;
    run.finish(Outcome::Complete)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct RetentionConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    max_offset: u32,
    seed: u64,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        RetentionConfig {
            horizon_end: None,
            apps: None,
            max_offset: 30,
            seed: 0,
        }
    }
}

fn fit_retention(mut run: Run) -> CliResult<Outcome> {
    let cfg: RetentionConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let apps = app_list(&log, &cfg.apps)?;
    let curves = per_app(&apps, |a| retention::compute_retention(&log, a, cfg.max_offset))?;
    let mut fits = Vec::new();
    for (app, curve) in &curves {
        for fit in [retention::fit_timedep(curve), retention::fit_exponential(curve)] {
            match fit {
                Ok(f) => fits.push((*app, f)),
                Err(e @ Error::InsufficientData(_)) => log::warn!("app {app}: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    retention::write_curves(&curves, run.create("curves.csv")?)?;
    retention::write_fits(&fits, run.create("fits.csv")?)?;
    let outcome = if fits.iter().all(|(_, f)| f.converged) {
        Outcome::Complete
    } else {
        Outcome::Nonconverged
    };
    run.finish(outcome)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SirsConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    /// First fitted day; defaults to each app's first event.
    window_start: Option<u32>,
    window_len: usize,
    budget: usize,
    predict_days: usize,
    /// Predict from nonconverged fits too.
    force: bool,
    seed: u64,
}

impl Default for SirsConfig {
    fn default() -> Self {
        SirsConfig {
            horizon_end: None,
            apps: None,
            window_start: None,
            window_len: 120,
            budget: 20_000,
            predict_days: 90,
            force: false,
            seed: 0,
        }
    }
}

fn fit_sirs(mut run: Run) -> CliResult<Outcome> {
    let cfg: SirsConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let apps = app_list(&log, &cfg.apps)?;
    let fits = per_app(&apps, |a| {
        let series = match cfg.window_start {
            Some(s) => timeseries::daily_series(&log, a, timeseries::ActivityWindow::Dau, Day(s), cfg.window_len)?,
            None => timeseries::launch_series(&log, a, cfg.window_len)?,
        };
        sirs::fit_sirs(&series.values, cfg.budget, derive_seed(cfg.seed, "fit-sirs", a as u64))
    })?;
    let mut preds = Vec::new();
    for (app, fit) in &fits {
        if fit.converged || cfg.force {
            preds.push((*app, sirs::predict_sirs(fit, cfg.predict_days, cfg.force)?));
        }
    }
    sirs::write_fits(&fits, run.create("fits.csv")?)?;
    sirs::write_predictions(&preds, run.create("predictions.csv")?)?;
    let outcome = if fits.iter().all(|(_, f)| f.converged) {
        Outcome::Complete
    } else {
        Outcome::Nonconverged
    };
    run.finish(outcome)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct ClusterConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    /// Days after launch in each series.
    len: usize,
    ks: Vec<usize>,
    restarts: usize,
    /// Share of series used for training.
    split: f64,
    seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            horizon_end: None,
            apps: None,
            len: 90,
            ks: (1..=6).collect(),
            restarts: 10,
            split: 0.8,
            seed: 0,
        }
    }
}

fn cluster_dau(mut run: Run) -> CliResult<Outcome> {
    let cfg: ClusterConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let apps = app_list(&log, &cfg.apps)?;
    let series = per_app(&apps, |a| {
        timeseries::peak_normalize(&timeseries::launch_series(&log, a, cfg.len)?).map(|s| s.values)
    })?;
    let data: Vec<Vec<f64>> = series.iter().map(|(_, s)| s.clone()).collect();
    let results = cfg
        .ks
        .iter()
        .map(|&k| timeseries::kmeans_cluster(&data, k, cfg.restarts, cfg.split, cfg.seed))
        .collect::<crate::Result<Vec<_>>>()?;
    timeseries::write_centroids(&results, run.create("centroids.csv")?)?;
    timeseries::write_scores(&results, run.create("scores.csv")?)?;
    let mut w = csv::Writer::from_writer(run.create("assignments.csv")?);
    w.write_record(["k", "app_id", "cluster"]).map_err(Error::from)?;
    for r in &results {
        for ((app, _), c) in series.iter().zip(&r.assignment) {
            w.write_record([r.k.to_string(), app.to_string(), c.to_string()])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    drop(w);
    run.finish(Outcome::Complete)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct MauTransitionConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    t1: u32,
    t2: u32,
    bins_per_decade: u32,
    seed: u64,
}

impl Default for MauTransitionConfig {
    fn default() -> Self {
        MauTransitionConfig {
            horizon_end: None,
            apps: None,
            t1: 359,
            t2: 719,
            bins_per_decade: 4,
            seed: 0,
        }
    }
}

fn mau_transition(mut run: Run) -> CliResult<Outcome> {
    let cfg: MauTransitionConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let apps = app_list(&log, &cfg.apps)?;
    let m = timeseries::mau_transition(&log, &apps, Day(cfg.t1), Day(cfg.t2), cfg.bins_per_decade)?;
    m.write_csv(false, run.create("counts.csv")?)?;
    m.write_csv(true, run.create("conditional.csv")?)?;
    run.finish(Outcome::Complete)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct FirstLastConfig {
    horizon_end: Option<u32>,
    app: AppId,
    bin_days: u32,
    seed: u64,
}

impl Default for FirstLastConfig {
    fn default() -> Self {
        FirstLastConfig {
            horizon_end: None,
            app: 0,
            bin_days: 7,
            seed: 0,
        }
    }
}

fn first_last(mut run: Run) -> CliResult<Outcome> {
    let cfg: FirstLastConfig = run.config()?;
    let log = run.log(cfg.horizon_end)?;
    let m = data::first_last_matrix(&data::user_spans(&log, cfg.app)?, cfg.bin_days)?;
    let mut w = csv::Writer::from_writer(run.create("first_last.csv")?);
    w.write_record(["first_bin", "last_bin", "users"]).map_err(Error::from)?;
    for (i, row) in m.iter().enumerate() {
        for (j, &c) in row.iter().enumerate().skip(i) {
            w.write_record([i.to_string(), j.to_string(), c.to_string()])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    drop(w);
    run.finish(Outcome::Complete)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FeaturesConfig {
    horizon_end: Option<u32>,
    apps: Option<Vec<AppId>>,
    /// Defaults to the end of the log.
    window_end: Option<u32>,
    features: FeatureOptions,
    seed: u64,
}

fn features_extract(mut run: Run) -> CliResult<Outcome> {
    let mut cfg: FeaturesConfig = run.config()?;
    cfg.features.seed = derive_seed(cfg.seed, "features", 0);
    run.config = serde_json::to_value(&cfg).map_err(Error::from)?;
    let log = run.log(cfg.horizon_end)?;
    let attrs = run.attributes()?;
    let graph = run.graph(attrs.len())?;
    let apps = app_list(&log, &cfg.apps)?;
    let schema = FeatureSchema::new(&attrs, cfg.features.clone())?;
    let end = cfg.window_end.map_or(log.horizon_end(), Day);
    let m = features::build_matrix(&schema, &log, &graph, &attrs, &apps, end)?;
    m.write_csv(run.create("features.csv")?)?;
    run.write_json("schema.json", &schema)?;
    run.finish(Outcome::Complete)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct BinaryCliConfig {
    #[serde(default)]
    horizon_end: Option<u32>,
    #[serde(flatten)]
    task: BinaryTaskConfig,
}

fn task_binary(mut run: Run) -> CliResult<Outcome> {
    let mut cfg: BinaryCliConfig = run.config()?;
    cfg.task.features.seed = derive_seed(cfg.task.seed, "features", 0);
    run.config = serde_json::to_value(&cfg).map_err(Error::from)?;
    let log = run.log(cfg.horizon_end)?;
    let attrs = run.attributes()?;
    let graph = run.graph(attrs.len())?;
    let data = TaskData {
        log: &log,
        graph: &graph,
        attrs: &attrs,
    };
    let result = tasks::run_binary_task(&data, &cfg.task)?;
    run.write_json(
        "report.json",
        &json!({
            "positive_fraction": result.labeling.positive_fraction,
            "n_labeled": result.labeling.labels.len(),
            "train_apps": result.train_apps,
            "test_apps": result.test_apps,
            "reports": result.reports,
        }),
    )?;
    result.matrix.write_csv(run.create("features.csv")?)?;
    let mut w = csv::Writer::from_writer(run.create("labels.csv")?);
    w.write_record(["app_id", "mau_t1", "mau_t2", "ratio", "positive"])
        .map_err(Error::from)?;
    for l in &result.labeling.labels {
        w.write_record([
            l.app.to_string(),
            l.mau_t1.to_string(),
            l.mau_t2.to_string(),
            l.ratio.to_string(),
            u8::from(l.positive).to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    drop(w);
    run.finish(Outcome::Complete)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PairwiseCliConfig {
    #[serde(default)]
    horizon_end: Option<u32>,
    #[serde(flatten)]
    task: PairwiseConfig,
}

fn task_pairwise(mut run: Run) -> CliResult<Outcome> {
    let mut cfg: PairwiseCliConfig = run.config()?;
    cfg.task.features.seed = derive_seed(cfg.task.seed, "features", 0);
    run.config = serde_json::to_value(&cfg).map_err(Error::from)?;
    let log = run.log(cfg.horizon_end)?;
    let attrs = run.attributes()?;
    let graph = run.graph(attrs.len())?;
    let data = TaskData {
        log: &log,
        graph: &graph,
        attrs: &attrs,
    };
    let result = tasks::run_pairwise_task(&data, &cfg.task)?;
    run.write_json("report.json", &result)?;
    tasks::write_curves(&result, run.create("curves.csv")?)?;
    run.finish(Outcome::Complete)
}
