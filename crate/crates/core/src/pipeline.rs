//! Per-category train / predict / evaluate over a dataset.
//!
//! A category's universe is the set of photos it labels; the dataset split
//! divides that universe into training and test photos. Prediction labels
//! the test photos jointly with the training photos, which are held at their
//! known labels.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PhotoRecord, Targets};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::features::{build_instance_graph, build_vocabulary, FeatureKind, GraphConfig, Vocabulary, VocabularyConfig};
use crate::learning::{default_lambda_grid, select_lambda, train, TrainConfig, TrainMode, TrainingTrace};
use crate::maxflow::FlowNetwork;
use crate::model_file::{ModelFile, MODEL_FORMAT_VERSION};
use crate::mrf::{build_flow_network, clamp_bias, infer_clamped, InstanceGraph, Labeling};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub popular_k: usize,
    pub enrich_ratio: f64,
    pub min_enrich_count: usize,
    /// 0 means unlimited.
    pub edge_cap: usize,
    /// 0 means unlimited.
    pub fanout_cap: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let v = VocabularyConfig::default();
        let g = GraphConfig::default();
        Self {
            popular_k: v.popular_k,
            enrich_ratio: v.enrich_ratio,
            min_enrich_count: v.min_enrich_count,
            edge_cap: g.edge_cap,
            fanout_cap: g.fanout_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Choose λ per category on a hold-out of the training photos.
    pub select_lambda: bool,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            select_lambda: true,
            lambda_grid: default_lambda_grid(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.vocabulary_config(TrainMode::Graphical, &Default::default()).validate()?;
        if self.select_lambda && self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda grid values must be > 0".into()));
        }
        Ok(())
    }

    fn vocabulary_config(&self, mode: TrainMode, targets_mask: &crate::features::FeatureMask) -> VocabularyConfig {
        let kinds: Vec<FeatureKind> = match mode {
            TrainMode::Graphical => FeatureKind::TEXTUAL.to_vec(),
            TrainMode::FlatTagsOnly => vec![FeatureKind::Tag],
            TrainMode::FlatAllFeatures => FeatureKind::ALL.to_vec(),
        };
        VocabularyConfig {
            popular_k: self.features.popular_k,
            enrich_ratio: self.features.enrich_ratio,
            min_enrich_count: self.features.min_enrich_count,
            kinds: kinds
                .into_iter()
                .filter(|k| !targets_mask.excluded_kinds.contains(k))
                .collect(),
        }
    }

    fn graph_config(&self, mode: TrainMode, targets: &Targets) -> GraphConfig {
        GraphConfig {
            edge_cap: self.features.edge_cap,
            fanout_cap: self.features.fanout_cap,
            relational: mode == TrainMode::Graphical,
            mask: targets.mask.clone(),
        }
    }
}

/// Stable per-category seed.
pub fn category_seed(seed: u64, category_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in category_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Training and test photos of one category, each sorted by photo id.
#[derive(Clone, Debug)]
pub struct CategorySplit<'a> {
    pub train: Vec<&'a PhotoRecord>,
    pub train_truth: Labeling,
    pub test: Vec<&'a PhotoRecord>,
    pub test_truth: Labeling,
}

fn truth_table<'t>(targets: &'t Targets, category_id: &str) -> Result<&'t BTreeMap<String, i8>> {
    targets
        .truth
        .get(category_id)
        .ok_or_else(|| Error::Config(format!("unknown category {category_id}")))
}

pub fn category_split<'a>(ds: &'a Dataset, targets: &Targets, category_id: &str) -> Result<CategorySplit<'a>> {
    let table = truth_table(targets, category_id)?;
    let part = |ids: &std::collections::BTreeSet<String>| -> Result<(Vec<&'a PhotoRecord>, Labeling)> {
        let mut photos = Vec::new();
        let mut labels = Vec::new();
        for id in ids {
            if let Some(&y) = table.get(id) {
                photos.push(
                    ds.photo(id)
                        .ok_or_else(|| Error::Integrity(format!("unknown photo {id}")))?,
                );
                labels.push(y);
            }
        }
        Ok((photos, Labeling::new(labels)?))
    };
    let (train, train_truth) = part(&ds.splits().train)?;
    let (test, test_truth) = part(&ds.splits().test)?;
    Ok(CategorySplit {
        train,
        train_truth,
        test,
        test_truth,
    })
}

/// Vocabulary and training graph of one category.
pub fn build_features(
    ds: &Dataset,
    targets: &Targets,
    category_id: &str,
    mode: TrainMode,
    cfg: &PipelineConfig,
) -> Result<(Vocabulary, InstanceGraph, Labeling)> {
    let split = category_split(ds, targets, category_id)?;
    let vocab = build_vocabulary(
        &split.train,
        Some(&split.train_truth),
        &cfg.vocabulary_config(mode, &targets.mask),
    )?;
    let graph = build_instance_graph(&split.train, ds.users(), &vocab, &cfg.graph_config(mode, targets))?;
    Ok((vocab, graph, split.train_truth))
}

pub fn train_one(
    ds: &Dataset,
    targets: &Targets,
    category_id: &str,
    cfg: &PipelineConfig,
) -> Result<(ModelFile, TrainingTrace)> {
    cfg.validate()?;
    let mode = cfg.train.mode;
    let (vocabulary, graph, truth) = build_features(ds, targets, category_id, mode, cfg)?;
    let mut tc = cfg.train.clone();
    tc.context_seed = category_seed(cfg.seed, category_id) ^ 0xC0_47E7;
    if cfg.select_lambda {
        let sel = select_lambda(
            category_id,
            &graph,
            &truth,
            &tc,
            &cfg.lambda_grid,
            category_seed(cfg.seed, category_id),
        )?;
        log::info!("category {category_id}: lambda {} from {:?}", sel.lambda, sel.scores);
        tc.lambda = sel.lambda;
    }
    let trained = train(category_id, &graph, &truth, &tc)?;
    let mf = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        category_id: category_id.to_string(),
        target_kind: targets.kind,
        mode,
        lambda: tc.lambda,
        converged: trained.trace.converged,
        iterations: trained.trace.rows.len(),
        graph: cfg.graph_config(mode, targets),
        vocabulary,
        theta_node: trained.model.theta_node().to_vec(),
        theta_edge: *trained.model.theta_edge(),
    };
    Ok((mf, trained.trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub category_id: String,
    pub photo_id: String,
    pub prediction: i8,
    /// First-order score ⟨φ(x), θ_node⟩.
    pub score: f64,
}

/// The prediction graph over a category's training and test photos (sorted
/// by id), the clamp pattern, and the indices of the test photos.
pub struct PredictionProblem {
    pub graph: InstanceGraph,
    pub observed: Vec<Option<i8>>,
    pub test_nodes: Vec<usize>,
}

pub fn prediction_problem(ds: &Dataset, targets: &Targets, mf: &ModelFile) -> Result<PredictionProblem> {
    let split = category_split(ds, targets, &mf.category_id)?;
    let mut all: Vec<(&PhotoRecord, Option<i8>)> = split
        .train
        .iter()
        .zip(split.train_truth.iter())
        .map(|(&p, y)| (p, Some(y)))
        .chain(split.test.iter().map(|&p| (p, None)))
        .collect();
    all.sort_by(|a, b| a.0.photo_id.cmp(&b.0.photo_id));
    let photos: Vec<&PhotoRecord> = all.iter().map(|a| a.0).collect();
    let graph = build_instance_graph(&photos, ds.users(), &mf.vocabulary, &mf.graph)?;
    let observed: Vec<Option<i8>> = all.iter().map(|a| a.1).collect();
    let test_nodes = (0..all.len()).filter(|&i| observed[i].is_none()).collect();
    Ok(PredictionProblem {
        graph,
        observed,
        test_nodes,
    })
}

/// The s-t network solved for a prediction problem.
pub fn prediction_network(problem: &PredictionProblem, mf: &ModelFile) -> Result<FlowNetwork> {
    let model = mf.model()?;
    let bias = clamp_bias(&problem.graph, &model, &problem.observed)?;
    let mut unary = problem.graph.unary_weights(&model)?;
    for (w, (neg, pos)) in unary.iter_mut().zip(bias) {
        *w += 0.5 * (pos - neg);
    }
    let weights = problem.graph.edge_weights(&model)?;
    let edges: Vec<(usize, usize, f64)> = problem
        .graph
        .edges()
        .iter()
        .zip(weights)
        .map(|(e, w)| (e.i, e.j, w))
        .collect();
    build_flow_network(&unary, &edges)
}

/// Labels the category's test photos.
pub fn predict_one(ds: &Dataset, targets: &Targets, mf: &ModelFile) -> Result<Vec<PredictionRow>> {
    let model = mf.model()?;
    let problem = prediction_problem(ds, targets, mf)?;
    let y = infer_clamped(&problem.graph, &model, &problem.observed)?;
    let scores = problem.graph.unary_weights(&model)?;
    Ok(problem
        .test_nodes
        .iter()
        .map(|&i| PredictionRow {
            category_id: mf.category_id.clone(),
            photo_id: problem.graph.nodes()[i].id.clone(),
            prediction: y.get(i),
            score: scores[i],
        })
        .collect())
}

pub fn write_predictions<W: Write>(rows: &[PredictionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R, path: &std::path::Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Scores predictions against the targets' truth, category by category in
/// id order. Every prediction must name a labeled photo of its category.
pub fn evaluate(rows: &[PredictionRow], targets: &Targets) -> Result<EvalReport> {
    let mut by_cat: BTreeMap<&str, Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        by_cat.entry(&r.category_id).or_default().push(r);
    }
    let mut report = EvalReport::default();
    for (cat, rows) in by_cat {
        let table = truth_table(targets, cat)?;
        let mut truth = Vec::with_capacity(rows.len());
        for r in &rows {
            truth.push(*table.get(&r.photo_id).ok_or_else(|| {
                Error::Integrity(format!("prediction for unlabeled photo {} in {cat}", r.photo_id))
            })?);
        }
        let truth = Labeling::new(truth)?;
        let pred = Labeling::new(rows.iter().map(|r| r.prediction).collect())?;
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        report.add(cat, &scores, &pred, &truth)?;
    }
    Ok(report)
}
