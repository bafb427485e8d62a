//! Acceptance criteria. Each prints one `criterion N: PASS|FAIL` line; they
//! run one after another so the timed ones do not compete for the CPU.

use std::panic::catch_unwind;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netlabel_core::data::{
    generate_synthetic, save_dataset, select_targets, Dataset, PlantingStrengths, SyntheticSpec, TargetKind, Targets,
};
use netlabel_core::eval::{cooccurrence_stats, weight_importance, CooccurrenceConfig, EvalReport};
use netlabel_core::learning::{ber_loss, train, TrainMode, TrainingTrace};
use netlabel_core::oracle::{random_sparse_instance, run_campaign, CampaignConfig, OracleKind};
use netlabel_core::pipeline::{build_features, evaluate, predict_one, train_one, write_predictions, PipelineConfig};
use netlabel_core::{map_infer, CategoryModel, Labeling, ModelFile};

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn campaign(n: u32, kind: OracleKind) {
    let start = Instant::now();
    let res = run_campaign(kind, &CampaignConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let pass = res.passed() && res.checked == 1000 && elapsed < Duration::from_secs(60);
    report(
        n,
        pass,
        &format!("{:?}: {}/{} agree in {elapsed:.1?}", kind, res.agreed, res.checked),
    );
    assert!(pass);
}

fn criterion_1_map_oracle() {
    campaign(1, OracleKind::Map);
}

fn criterion_2_loss_augmented_oracle() {
    campaign(2, OracleKind::LossAugmented);
}

fn criterion_3_max_flow_duality() {
    campaign(3, OracleKind::MaxFlow);
}

fn criterion_4_ber_properties() {
    let n = 50;
    let truth = Labeling::new((0..n).map(|i| if i % 5 == 0 { 1 } else { -1 }).collect()).unwrap();
    let flipped = Labeling::new(truth.iter().map(|y| -y).collect()).unwrap();
    let all = |y: i8| Labeling::new(vec![y; n]).unwrap();
    let exact = [
        ber_loss(&truth, &truth).unwrap() == 0.0,
        ber_loss(&flipped, &truth).unwrap() == 1.0,
        ber_loss(&all(1), &truth).unwrap() == 0.5,
        ber_loss(&all(-1), &truth).unwrap() == 0.5,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 100_000;
    let total: f64 = (0..draws)
        .map(|_| {
            let y = Labeling::new((0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()).unwrap();
            ber_loss(&y, &truth).unwrap()
        })
        .sum();
    let mean = total / draws as f64;
    let pass = exact.iter().all(|&b| b) && (mean - 0.5).abs() <= 0.01;
    report(4, pass, &format!("exact {exact:?} random mean {mean:.4}"));
    assert!(pass);
}

struct ModeRun {
    models: Vec<ModelFile>,
    traces: Vec<TrainingTrace>,
    report: EvalReport,
}

fn run_mode(ds: &Dataset, targets: &Targets, mode: TrainMode, cfg: &PipelineConfig) -> ModeRun {
    let mut cfg = cfg.clone();
    cfg.train.mode = mode;
    let mut models = Vec::new();
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for c in targets.truth.keys() {
        let (mf, trace) = train_one(ds, targets, c, &cfg).expect("training");
        rows.extend(predict_one(ds, targets, &mf).expect("prediction"));
        models.push(mf);
        traces.push(trace);
    }
    let report = evaluate(&rows, targets).expect("evaluation");
    ModeRun { models, traces, report }
}

/// Labels follow shared galleries only; tags and every other property are noise.
fn gallery_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_photos: 2000,
        n_categories: 10,
        planting: PlantingStrengths {
            galleries: 0.9,
            ..Default::default()
        },
        planted_fraction: 0.3,
        base_rate: 0.01,
        mean_contacts: 1.0,
        user_exponent: 0.5,
        seed: 2024,
        ..Default::default()
    }
}

struct RelationalRun {
    graphical: ModeRun,
    flat: ModeRun,
    elapsed: Duration,
}

fn relational_run() -> &'static RelationalRun {
    static RUN: OnceLock<RelationalRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let ds = generate_synthetic(&gallery_spec()).unwrap();
        let targets = select_targets(&ds, TargetKind::Labels, 1).unwrap();
        let cfg = PipelineConfig::default();
        let graphical = run_mode(&ds, &targets, TrainMode::Graphical, &cfg);
        let flat = run_mode(&ds, &targets, TrainMode::FlatTagsOnly, &cfg);
        RelationalRun {
            graphical,
            flat,
            elapsed: start.elapsed(),
        }
    })
}

/// Per-category traces of the default trainer on default planted data.
fn convergence_run() -> &'static Vec<(String, TrainingTrace, CategoryModel)> {
    static RUN: OnceLock<Vec<(String, TrainingTrace, CategoryModel)>> = OnceLock::new();
    RUN.get_or_init(|| {
        let ds = generate_synthetic(&SyntheticSpec {
            n_photos: 2000,
            n_categories: 20,
            seed: 6,
            ..Default::default()
        })
        .unwrap();
        let targets = select_targets(&ds, TargetKind::Labels, 1).unwrap();
        let cfg = PipelineConfig::default();
        targets
            .truth
            .keys()
            .map(|c| {
                let (_, graph, truth) = build_features(&ds, &targets, c, cfg.train.mode, &cfg).unwrap();
                let trained = train(c, &graph, &truth, &cfg.train).unwrap();
                (c.clone(), trained.trace, trained.model)
            })
            .collect()
    })
}

fn criterion_5_edge_feasibility() {
    let conv = convergence_run();
    let rel = relational_run();
    let traces = conv
        .iter()
        .map(|(_, t, _)| t)
        .chain(&rel.graphical.traces)
        .chain(&rel.flat.traces);
    let (mut rows, mut violations) = (0, 0);
    for t in traces {
        rows += t.rows.len();
        violations += t.rows.iter().filter(|r| !(r.min_theta_edge >= 0.0)).count();
    }
    let models = conv
        .iter()
        .map(|(_, _, m)| m.theta_edge().to_vec())
        .chain(rel.graphical.models.iter().map(|m| m.theta_edge.to_vec()))
        .chain(rel.flat.models.iter().map(|m| m.theta_edge.to_vec()));
    let bad_models = models.filter(|e| e.iter().any(|&w| !(w >= 0.0))).count();
    let pass = rows > 0 && violations == 0 && bad_models == 0;
    report(
        5,
        pass,
        &format!("{rows} iterates, {violations} violations, {bad_models} infeasible models"),
    );
    assert!(pass);
}

fn criterion_6_convergence() {
    let run = convergence_run();
    let mut converged = 0;
    let mut monotone = true;
    for (c, trace, _) in run {
        let last = trace.rows.last().unwrap();
        let ok = trace.rows.len() <= 200 && last.upper_bound - last.lower_bound <= 1e-3 * last.upper_bound.max(1.0);
        converged += ok as usize;
        let mono = trace.rows.windows(2).all(|w| w[1].lower_bound >= w[0].lower_bound);
        monotone &= mono;
        if !ok || !mono {
            println!("{c}: {} iterations, gap {:.3e}, monotone {mono}", trace.rows.len(), trace.final_gap());
        }
    }
    let share = converged as f64 / run.len() as f64;
    let pass = run.len() == 20 && share >= 0.95 && monotone;
    report(
        6,
        pass,
        &format!("{converged}/{} converged within 200 iterations, lower bounds monotone: {monotone}", run.len()),
    );
    assert!(pass);
}

fn criterion_7_relational_signal_recovery() {
    let run = relational_run();
    let g = run.graphical.report.mean_balanced_score;
    let f = run.flat.report.mean_balanced_score;
    println!("graphical\n{}", run.graphical.report.to_text());
    println!("flat-tags-only\n{}", run.flat.report.to_text());
    let pass = g - f >= 0.10 && (f - 0.5).abs() <= 0.05 && run.elapsed < Duration::from_secs(600);
    report(
        7,
        pass,
        &format!("graphical {g:.4} flat {f:.4} gap {:.4} in {:.1?}", g - f, run.elapsed),
    );
    assert!(pass);
}

fn criterion_8_gallery_importance() {
    let run = relational_run();
    let models: Vec<CategoryModel> = run.graphical.models.iter().map(|m| m.model().unwrap()).collect();
    let imp = weight_importance(&models).unwrap();
    let pass = imp.argmax() == netlabel_core::features::EDGE_GALLERIES;
    report(8, pass, &format!("importance {:.4?}", imp.weights));
    assert!(pass);
}

fn criterion_9_inference_throughput() {
    let (graph, model) = random_sparse_instance(100_000, 1_000_000, 1000, 9);
    let start = Instant::now();
    let y = map_infer(&graph, &model).unwrap();
    let elapsed = start.elapsed();
    let pass = y.len() == 100_000 && graph.edges().len() <= 1_000_000 && elapsed < Duration::from_secs(60);
    report(
        9,
        pass,
        &format!("{} nodes, {} edges in {elapsed:.2?}", graph.node_count(), graph.edges().len()),
    );
    assert!(pass);
}

fn criterion_10_cooccurrence_monotone() {
    let ds = generate_synthetic(&SyntheticSpec {
        seed: 10,
        ..Default::default()
    })
    .unwrap();
    let photos: Vec<_> = ds.photos().iter().collect();
    let table = cooccurrence_stats(&photos, ds.users(), ds.labels().unwrap(), &CooccurrenceConfig::default());
    let mut buckets: Vec<_> = table.property("groups").collect();
    buckets.sort_by_key(|r| r.shared);
    // the sparse tail (trailing buckets under 30 pairs) is excluded
    let mut dropped = Vec::new();
    while buckets.last().is_some_and(|r| r.pairs < 30) {
        dropped.push(buckets.pop().unwrap().pairs);
    }
    let probs: Vec<f64> = buckets.iter().map(|r| r.probability).collect();
    let pass = probs.len() >= 3 && probs.windows(2).all(|w| w[1] >= w[0]);
    let counts: Vec<u64> = buckets.iter().map(|r| r.pairs).collect();
    report(
        10,
        pass,
        &format!("groups buckets {probs:.4?} pairs {counts:?}, sparse tail excluded {dropped:?}"),
    );
    assert!(pass);
}

/// Every artifact of a small end-to-end run, by name.
fn artifacts() -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let ds = generate_synthetic(&SyntheticSpec {
        n_photos: 300,
        n_categories: 2,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        out.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()));
    }
    let targets = select_targets(&ds, TargetKind::Labels, 1).unwrap();
    let base = PipelineConfig {
        lambda_grid: vec![1e-2, 1e-1],
        ..Default::default()
    };
    for mode in [TrainMode::Graphical, TrainMode::FlatTagsOnly] {
        let mut cfg = base.clone();
        cfg.train.mode = mode;
        let mut rows = Vec::new();
        for c in targets.truth.keys() {
            let (vocab, graph, _) = build_features(&ds, &targets, c, mode, &cfg).unwrap();
            out.push((format!("{mode:?}/{c}.vocab.json"), serde_json::to_vec(&vocab).unwrap()));
            out.push((format!("{mode:?}/{c}.graph.json"), serde_json::to_vec(&graph).unwrap()));
            let (mf, trace) = train_one(&ds, &targets, c, &cfg).unwrap();
            out.push((format!("{mode:?}/{c}.model.json"), mf.to_json().unwrap().into_bytes()));
            out.push((format!("{mode:?}/{c}.trace.csv"), trace.to_csv().into_bytes()));
            rows.extend(predict_one(&ds, &targets, &mf).unwrap());
        }
        let mut pred = Vec::new();
        write_predictions(&rows, &mut pred).unwrap();
        out.push((format!("{mode:?}/predictions.csv"), pred));
        out.push((format!("{mode:?}/report.csv"), evaluate(&rows, &targets).unwrap().to_csv().into_bytes()));
    }
    let photos: Vec<_> = ds.photos().iter().collect();
    let co = cooccurrence_stats(
        &photos,
        ds.users(),
        ds.labels().unwrap(),
        &CooccurrenceConfig {
            pair_budget: 10_000,
            seed: 11,
        },
    );
    out.push(("cooccurrence.csv".into(), co.to_csv().into_bytes()));
    let oracle = run_campaign(
        OracleKind::LossAugmented,
        &CampaignConfig {
            instances: 50,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    out.push(("oracle.json".into(), serde_json::to_vec(&oracle).unwrap()));
    out
}

fn criterion_11_determinism() {
    let a = artifacts();
    let b = artifacts();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = a.len() == b.len() && a.len() > 10 && differing.is_empty();
    report(
        11,
        pass,
        &format!("{} artifacts compared, differing: {differing:?}", a.len()),
    );
    assert!(pass);
}

fn main() -> ExitCode {
    let criteria: [(u32, fn()); 11] = [
        (1, criterion_1_map_oracle),
        (2, criterion_2_loss_augmented_oracle),
        (3, criterion_3_max_flow_duality),
        (4, criterion_4_ber_properties),
        (5, criterion_5_edge_feasibility),
        (6, criterion_6_convergence),
        (7, criterion_7_relational_signal_recovery),
        (8, criterion_8_gallery_importance),
        (9, criterion_9_inference_throughput),
        (10, criterion_10_cooccurrence_monotone),
        (11, criterion_11_determinism),
    ];
    let failed: Vec<u32> = criteria
        .into_iter()
        .filter(|(_, f)| catch_unwind(f).is_err())
        .map(|(n, _)| n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
