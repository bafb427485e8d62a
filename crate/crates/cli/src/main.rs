//! `netlabel`: generate, featurize, train, predict, evaluate and check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use netlabel_core::data::{
    generate_synthetic, load_dataset, save_dataset, select_targets, write_atomic, Dataset, DatasetPaths,
    SyntheticSpec, TargetKind, Targets,
};
use netlabel_core::eval::{cooccurrence_stats, weight_importance, CooccurrenceConfig};
use netlabel_core::features::EDGE_PROPERTIES;
use netlabel_core::learning::TrainMode;
use netlabel_core::oracle::{check_instance, run_campaign, CampaignConfig, OracleInstance, OracleKind};
use netlabel_core::pipeline::{
    build_features, evaluate, predict_one, prediction_network, prediction_problem, read_predictions, train_one,
    write_predictions, PipelineConfig,
};
use netlabel_core::{Error, ModelFile};

/// Seed used when neither `--seed` nor the config file sets one.
const DEFAULT_SEED: u64 = 0;

#[derive(Parser, Debug)]
#[command(name = "netlabel", version, about = "Joint photo labeling over metadata networks")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-category work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic dataset.
    GenSynthetic(GenArgs),
    /// Build per-category vocabularies and graph summaries.
    BuildFeatures(FeatureCmd),
    /// Train one model per category.
    Train(TrainCmd),
    /// Label the test photos of every trained category.
    Predict(PredictCmd),
    /// Score predictions against the labels.
    Evaluate(EvaluateCmd),
    /// Co-occurrence statistics and edge-weight importance.
    Stats(StatsCmd),
    /// Cross-check the solvers against exhaustive search.
    OracleCheck(OracleCmd),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    photos: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TargetArgs {
    /// labels, tags or groups.
    #[arg(long, value_parser = kebab::<TargetKind>)]
    target: Option<TargetKind>,
    /// Number of tag/group targets.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct PipelineArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// graphical, flat-tags-only or flat-all-features.
    #[arg(long, value_parser = kebab::<TrainMode>)]
    mode: Option<TrainMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Train with --lambda instead of searching the grid.
    #[arg(long)]
    no_lambda_search: bool,
    #[arg(long)]
    popular_k: Option<usize>,
    #[arg(long)]
    enrich_ratio: Option<f64>,
    #[arg(long)]
    edge_cap: Option<usize>,
    #[arg(long)]
    fanout_cap: Option<usize>,
    /// Comma-separated subset of categories.
    #[arg(long, value_delimiter = ',')]
    categories: Vec<String>,
}

#[derive(Args, Debug)]
struct FeatureCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    data: PathBuf,
    /// Directory for model files and trace CSVs.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct PredictCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// Predictions CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also dump each category's s-t network in DIMACS max-flow format.
    #[arg(long)]
    dimacs_dir: Option<PathBuf>,
    #[command(flatten)]
    target: TargetArgs,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
}

#[derive(Args, Debug)]
struct StatsCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Trained models; adds importance.csv.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    pair_budget: Option<u64>,
    #[command(flatten)]
    target: TargetArgs,
}

#[derive(Args, Debug)]
struct OracleCmd {
    /// map, loss-augmented, max-flow; all three when omitted.
    #[arg(long, value_parser = kebab::<OracleKind>)]
    kind: Option<OracleKind>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    /// Re-check one instance printed by a failing run.
    #[arg(long)]
    replay: Option<PathBuf>,
}

/// Contents of `--config`. The top-level seed replaces every section's seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: u64,
    synthetic: SyntheticSpec,
    pipeline: PipelineConfig,
    target_kind: TargetKind,
    top_k: usize,
    oracle: CampaignConfig,
    cooccurrence: CooccurrenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            synthetic: SyntheticSpec::default(),
            pipeline: PipelineConfig::default(),
            target_kind: TargetKind::Labels,
            top_k: 10,
            oracle: CampaignConfig::default(),
            cooccurrence: CooccurrenceConfig::default(),
        }
    }
}

/// Validation failures: reported with exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.synthetic.seed = cfg.seed;
    cfg.pipeline.seed = cfg.seed;
    cfg.oracle.seed = cfg.seed;
    cfg.cooccurrence.seed = cfg.seed;
    Ok(cfg)
}

fn apply_targets(cfg: &mut RunConfig, a: &TargetArgs) {
    if let Some(t) = a.target {
        cfg.target_kind = t;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
}

fn apply_pipeline(cfg: &mut RunConfig, a: &PipelineArgs) -> anyhow::Result<()> {
    apply_targets(cfg, &a.target);
    let p = &mut cfg.pipeline;
    if let Some(m) = a.mode {
        p.train.mode = m;
    }
    if let Some(l) = a.lambda {
        p.train.lambda = l;
    }
    if let Some(e) = a.epsilon {
        p.train.epsilon = e;
    }
    if let Some(n) = a.max_iterations {
        p.train.max_iterations = n;
    }
    if a.no_lambda_search {
        p.select_lambda = false;
    }
    if let Some(k) = a.popular_k {
        p.features.popular_k = k;
    }
    if let Some(r) = a.enrich_ratio {
        p.features.enrich_ratio = r;
    }
    if let Some(c) = a.edge_cap {
        p.features.edge_cap = c;
    }
    if let Some(c) = a.fanout_cap {
        p.features.fanout_cap = c;
    }
    p.validate()?;
    if cfg.top_k == 0 {
        bail!(Usage("--top-k must be >= 1".into()));
    }
    Ok(())
}

fn load_data(dir: &Path) -> anyhow::Result<Dataset> {
    if !dir.is_dir() {
        bail!(Usage(format!("data directory {} does not exist", dir.display())));
    }
    Ok(load_dataset(&DatasetPaths::in_dir(dir))?)
}

fn categories(targets: &Targets, only: &[String]) -> anyhow::Result<Vec<String>> {
    for c in only {
        if !targets.truth.contains_key(c) {
            bail!(Usage(format!("unknown category {c}")));
        }
    }
    Ok(targets
        .truth
        .keys()
        .filter(|c| only.is_empty() || only.contains(c))
        .cloned()
        .collect())
}

/// Category ids become file names; anything outside [A-Za-z0-9._-] is
/// replaced.
fn file_stem(category_id: &str) -> String {
    category_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn gen_synthetic(cfg: &RunConfig, a: &GenArgs) -> anyhow::Result<()> {
    let mut spec = cfg.synthetic.clone();
    if let Some(n) = a.photos {
        spec.n_photos = n;
    }
    if let Some(n) = a.users {
        spec.n_users = n;
    }
    if let Some(n) = a.categories {
        spec.n_categories = n;
    }
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &a.out)?;
    println!("wrote {} photos, {} users to {}", ds.len(), ds.users().len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FeatureSummary<'a> {
    category_id: &'a str,
    mode: TrainMode,
    nodes: usize,
    edges: usize,
    node_dim: usize,
    positives: usize,
    vocabulary: netlabel_core::features::Vocabulary,
}

fn build_features_cmd(cfg: &RunConfig, a: &FeatureCmd) -> anyhow::Result<()> {
    let ds = load_data(&a.data)?;
    let targets = select_targets(&ds, cfg.target_kind, cfg.top_k)?;
    let cats = categories(&targets, &a.pipeline.categories)?;
    let mode = cfg.pipeline.train.mode;
    cats.par_iter().try_for_each(|c| -> anyhow::Result<()> {
        let (vocabulary, graph, truth) = build_features(&ds, &targets, c, mode, &cfg.pipeline)?;
        let summary = FeatureSummary {
            category_id: c,
            mode,
            nodes: graph.node_count(),
            edges: graph.edges().len(),
            node_dim: graph.node_dim(),
            positives: truth.positives(),
            vocabulary,
        };
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        write_atomic(&a.out.join(format!("{}.features.json", file_stem(c))), text.as_bytes())?;
        Ok(())
    })?;
    println!("wrote features for {} categories to {}", cats.len(), a.out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, a: &TrainCmd) -> anyhow::Result<()> {
    let ds = load_data(&a.data)?;
    let targets = select_targets(&ds, cfg.target_kind, cfg.top_k)?;
    let cats = categories(&targets, &a.pipeline.categories)?;
    let results: Vec<(ModelFile, String)> = cats
        .par_iter()
        .map(|c| -> anyhow::Result<_> {
            let (mf, trace) = train_one(&ds, &targets, c, &cfg.pipeline)?;
            let stem = file_stem(c);
            write_atomic(&a.out.join(format!("{stem}.model.json")), mf.to_json()?.as_bytes())?;
            write_atomic(&a.out.join(format!("{stem}.trace.csv")), trace.to_csv().as_bytes())?;
            Ok((mf, stem))
        })
        .collect::<anyhow::Result<_>>()?;
    for (mf, stem) in &results {
        println!(
            "{stem}: lambda {} iterations {} converged {}",
            mf.lambda, mf.iterations, mf.converged
        );
    }
    Ok(())
}

fn load_models(dir: &Path) -> anyhow::Result<Vec<ModelFile>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading model directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".model.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(Usage(format!("no *.model.json files in {}", dir.display())));
    }
    Ok(paths.iter().map(|p| ModelFile::load(p)).collect::<Result<_, _>>()?)
}

fn targets_for_models(ds: &Dataset, cfg: &RunConfig, models: &[ModelFile]) -> anyhow::Result<Targets> {
    let kind = models[0].target_kind;
    if models.iter().any(|m| m.target_kind != kind) {
        bail!(Usage("models mix target kinds".into()));
    }
    let targets = select_targets(ds, kind, cfg.top_k)?;
    for m in models {
        if !targets.truth.contains_key(&m.category_id) {
            bail!(Usage(format!(
                "category {} is not among the selected targets (raise --top-k?)",
                m.category_id
            )));
        }
    }
    Ok(targets)
}

fn predict_cmd(cfg: &RunConfig, a: &PredictCmd) -> anyhow::Result<()> {
    let ds = load_data(&a.data)?;
    let models = load_models(&a.models)?;
    let targets = targets_for_models(&ds, cfg, &models)?;
    let per_model: Vec<Vec<_>> = models
        .par_iter()
        .map(|mf| -> anyhow::Result<_> {
            if let Some(dir) = &a.dimacs_dir {
                let problem = prediction_problem(&ds, &targets, mf)?;
                let net = prediction_network(&problem, mf)?;
                let path = dir.join(format!("{}.dimacs", file_stem(&mf.category_id)));
                write_atomic(&path, net.to_dimacs().as_bytes())?;
            }
            Ok(predict_one(&ds, &targets, mf)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let rows: Vec<_> = per_model.into_iter().flatten().collect();
    let mut buf = Vec::new();
    write_predictions(&rows, &mut buf)?;
    write_atomic(&a.out, &buf)?;
    println!("wrote {} predictions to {}", rows.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateCmd) -> anyhow::Result<()> {
    let ds = load_data(&a.data)?;
    let file = fs::File::open(&a.predictions)
        .map_err(|e| Usage(format!("cannot open {}: {e}", a.predictions.display())))?;
    let rows = read_predictions(file, &a.predictions)?;
    let targets = select_targets(&ds, cfg.target_kind, cfg.top_k)?;
    let report = evaluate(&rows, &targets)?;
    write_atomic(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    let text = report.to_text();
    write_atomic(&a.out.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn stats_cmd(cfg: &RunConfig, a: &StatsCmd) -> anyhow::Result<()> {
    let ds = load_data(&a.data)?;
    let targets = select_targets(&ds, cfg.target_kind, cfg.top_k)?;
    let mut co = cfg.cooccurrence.clone();
    if let Some(b) = a.pair_budget {
        co.pair_budget = b;
    }
    let photos: Vec<_> = ds.photos().iter().collect();
    let table = cooccurrence_stats(&photos, ds.users(), &targets.truth, &co);
    write_atomic(&a.out.join("cooccurrence.csv"), table.to_csv().as_bytes())?;
    println!("examined {} photo pairs", table.pairs_examined);
    if let Some(dir) = &a.models {
        let models = load_models(dir)?
            .iter()
            .map(|m| m.model())
            .collect::<Result<Vec<_>, _>>()?;
        let imp = weight_importance(&models)?;
        let mut csv = String::from("component,importance\n");
        for (name, w) in EDGE_PROPERTIES.iter().zip(imp.weights) {
            csv.push_str(&format!("{name},{w}\n"));
        }
        write_atomic(&a.out.join("importance.csv"), csv.as_bytes())?;
        println!(
            "importance over {} models ({} without edge weight): strongest {}",
            imp.used,
            imp.excluded,
            EDGE_PROPERTIES[imp.argmax()]
        );
    }
    Ok(())
}

/// Returns false when a solver disagreed with the oracle.
fn oracle_cmd(cfg: &RunConfig, a: &OracleCmd) -> anyhow::Result<bool> {
    if let Some(path) = &a.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let inst: OracleInstance =
            serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        let report = check_instance(&inst)?;
        println!("{}", serde_json::to_string(&report)?);
        return Ok(report.agreement);
    }
    let mut oc = cfg.oracle.clone();
    if let Some(n) = a.instances {
        oc.instances = n;
    }
    if let Some(n) = a.max_nodes {
        oc.max_nodes = n;
    }
    let kinds = match a.kind {
        Some(k) => vec![k],
        None => vec![OracleKind::Map, OracleKind::LossAugmented, OracleKind::MaxFlow],
    };
    let mut ok = true;
    for kind in kinds {
        let res = run_campaign(kind, &oc)?;
        println!(
            "{}: {}/{} agree, {} identical labelings",
            kebab_name(&kind)?,
            res.agreed,
            res.checked,
            res.labelings_equal
        );
        for (report, inst) in &res.failures {
            ok = false;
            eprintln!("disagreement: {}", serde_json::to_string(report)?);
            println!("{}", serde_json::to_string(inst)?);
        }
    }
    Ok(ok)
}

fn kebab_name<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_value(v)?.as_str().unwrap_or_default().to_string())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = load_config(&cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!(Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("building worker pool")?;
    }
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(&cfg, a)?,
        Command::BuildFeatures(a) => {
            apply_pipeline(&mut cfg, &a.pipeline)?;
            build_features_cmd(&cfg, a)?
        }
        Command::Train(a) => {
            apply_pipeline(&mut cfg, &a.pipeline)?;
            train_cmd(&cfg, a)?
        }
        Command::Predict(a) => {
            apply_targets(&mut cfg, &a.target);
            predict_cmd(&cfg, a)?
        }
        Command::Evaluate(a) => {
            apply_targets(&mut cfg, &a.target);
            evaluate_cmd(&cfg, a)?
        }
        Command::Stats(a) => {
            apply_targets(&mut cfg, &a.target);
            stats_cmd(&cfg, a)?
        }
        Command::OracleCheck(a) => return oracle_cmd(&cfg, a),
    }
    Ok(true)
}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Io(e)) if e.kind() != std::io::ErrorKind::NotFound => 2,
        Some(Error::Io(_)) => 1,
        Some(
            Error::InvalidNetwork(_) | Error::FlowBudget(_) | Error::NegativeEdgeWeight { .. } | Error::Dimension { .. },
        ) => 2,
        Some(_) => 1,
        None => match err.downcast_ref::<std::io::Error>() {
            Some(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
            _ => 2,
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
