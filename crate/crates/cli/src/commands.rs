use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cflgcn::datasets::{
    inductive_split, parse_interactions_into, read_manifest, transductive_split, write_manifest,
    DatasetBundle, RawDataset,
};
use cflgcn::eval::{evaluate_embeddings, topk, EvalResult};
use cflgcn::inductive::{infer_all, make_lightgcn_inductive, InductiveContext, Inferred};
use cflgcn::training::{fit, HoldoutValidator, TrainError, TrainingLog};
use cflgcn::verify::{run_all, SuiteReport};
use cflgcn::{Exec, InteractionGraph, Model, Variant};
use log::{info, warn};
use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{write_metrics, MetricRow};
use crate::CliError;

pub const TRAINING_LOG: &str = "training_log.csv";
pub const LEADERBOARD: &str = "leaderboard.csv";
pub const RECOMMENDATIONS: &str = "recommendations.tsv";
pub const EMBEDDINGS: &str = "embeddings.tsv";

pub fn metrics_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("metrics@{k}.csv"))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_split(cfg: &ExperimentConfig) -> Result<DatasetBundle, CliError> {
    let dir = cfg.split_dir();
    if !dir.is_dir() {
        return Err(CliError::MissingFile(dir));
    }
    Ok(read_manifest(&dir)?)
}

fn load_raw(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<RawDataset, CliError> {
    if cfg.dataset == "synthetic" {
        let data = cfg.synthetic.generate(cfg.seed);
        return Ok(RawDataset::carve_test(data, cfg.test_fraction, rng)?);
    }
    let path = PathBuf::from(&cfg.dataset);
    if path.is_dir() {
        return Ok(RawDataset::load_dir(&path)?);
    }
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let mut users = Default::default();
    let mut items = Default::default();
    let edges = parse_interactions_into(BufReader::new(file), &mut users, &mut items)?;
    let data = cflgcn::datasets::Interactions {
        edges,
        users,
        items,
    };
    Ok(RawDataset::carve_test(data, cfg.test_fraction, rng)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub dir: PathBuf,
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: usize,
    pub held_users: usize,
    pub held_items: usize,
}

/// Builds the split described by `cfg` and writes its manifest.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PrepareSummary, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let raw = load_raw(cfg, &mut rng)?;
    let mut bundle = transductive_split(&raw, &mut rng, cfg.val_fraction)?;
    if cfg.inductive {
        bundle = inductive_split(&bundle, &mut rng, &cfg.inductive_cfg)?;
    }
    let dir = cfg.split_dir();
    write_manifest(&bundle, &dir)?;
    let ind = bundle.inductive.as_ref();
    let summary = PrepareSummary {
        dir,
        num_users: bundle.users.len(),
        num_items: bundle.items.len(),
        interactions: bundle.num_interactions(),
        held_users: ind.map_or(0, |b| b.held_users.len()),
        held_items: ind.map_or(0, |b| b.held_items.len()),
    };
    info!(
        "prepared {} users, {} items, {} interactions ({} held users, {} held items) in {}",
        summary.num_users,
        summary.num_items,
        summary.interactions,
        summary.held_users,
        summary.held_items,
        summary.dir.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: Model,
    pub log: TrainingLog,
    pub best: EvalResult,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seconds: f64,
}

fn invalid_model(e: impl std::fmt::Display) -> CliError {
    CliError::Config(ConfigError::Invalid(e.to_string()))
}

fn train_on(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<TrainSummary, CliError> {
    let g = &bundle.graph_train;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = cfg
        .model
        .build(g.num_users(), g.num_items(), &mut rng)
        .map_err(invalid_model)?;
    let mut validator = HoldoutValidator {
        mask: g,
        targets: &bundle.val_sets,
        k: cfg.val_k,
    };
    let start = Instant::now();
    let out = fit(model, g, &cfg.train_config(), &mut validator).map_err(|e| match e {
        TrainError::Model(e) => invalid_model(e),
        other => CliError::other(other),
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let summary = TrainSummary {
        model: out.model,
        log: out.log,
        best: out.best,
        best_epoch: out.best_epoch,
        epochs_run: out.epochs_run,
        seconds,
    };
    checkpoint::save(
        &cfg.checkpoint_dir(),
        &summary.model,
        &CheckpointMeta {
            settings: cfg.model.clone(),
            num_users: g.num_users(),
            num_items: g.num_items(),
            seed: cfg.seed,
            best_epoch: summary.best_epoch,
            epochs_run: summary.epochs_run,
            train_seconds: seconds,
        },
    )?;
    write(&cfg.output_dir.join(TRAINING_LOG), &summary.log.to_csv())?;
    write(&cfg.output_dir.join("config.txt"), &cfg.to_text())?;
    info!(
        "best validation recall@{} {:.4} at epoch {} of {} ({:.1}s)",
        cfg.val_k, summary.best.recall, summary.best_epoch, summary.epochs_run, seconds
    );
    Ok(summary)
}

/// Trains on the prepared split; writes a checkpoint, the training log and
/// the effective configuration under `output_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    let bundle = load_split(cfg)?;
    train_on(cfg, &bundle)
}

fn load_checkpoint(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
) -> Result<(Model, CheckpointMeta), CliError> {
    let (model, meta) = checkpoint::load(&cfg.checkpoint_dir())?;
    let g = &bundle.graph_train;
    if (meta.num_users, meta.num_items) != (g.num_users(), g.num_items()) {
        return Err(CliError::Other(format!(
            "checkpoint is for {}x{} but the split trains on {}x{}",
            meta.num_users,
            meta.num_items,
            g.num_users(),
            g.num_items()
        )));
    }
    Ok((model, meta))
}

fn rows(label: String, meta: &CheckpointMeta, results: &[EvalResult]) -> Vec<MetricRow> {
    results
        .iter()
        .map(|r| MetricRow {
            model: label.clone(),
            layers: meta.settings.effective_layers(),
            fusion: meta.settings.fusion.to_string(),
            k: r.k,
            recall_pct: r.recall_pct(),
            ndcg_pct: r.ndcg_pct(),
            seed: meta.seed,
            wall_time: meta.train_seconds,
        })
        .collect()
}

fn evaluate_at(
    users: &Array2<f64>,
    items: &Array2<f64>,
    mask: &InteractionGraph,
    targets: &[Vec<usize>],
    ks: &[usize],
) -> Result<Vec<EvalResult>, CliError> {
    ks.iter()
        .map(|&k| {
            evaluate_embeddings(users, items, mask, targets, k, Exec::default())
                .map_err(CliError::other)
        })
        .collect()
}

fn test_results(
    model: &Model,
    bundle: &DatasetBundle,
    ks: &[usize],
) -> Result<Vec<EvalResult>, CliError> {
    let g = bundle.graph_train.normalize(model.normalization());
    let (users, items) = model.embeddings(&g).map_err(CliError::other)?;
    evaluate_at(
        &users,
        &items,
        &bundle.observed_graph()?,
        &bundle.test_sets,
        ks,
    )
}

fn append_rows(dir: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    for r in rows {
        write_metrics(std::slice::from_ref(r), &metrics_path(dir, r.k)).map_err(CliError::other)?;
    }
    Ok(())
}

/// Scores the checkpoint on the test split at every configured cutoff,
/// masking training and validation items, and appends to `metrics@K.csv`.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>, CliError> {
    let bundle = load_split(cfg)?;
    let (model, meta) = load_checkpoint(cfg, &bundle)?;
    let results = test_results(&model, &bundle, &cfg.k)?;
    let out = rows(meta.settings.label(), &meta, &results);
    append_rows(&cfg.output_dir, &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferSummary {
    pub new_users: usize,
    pub new_items: usize,
    /// Present when the split carries held-out interactions to score.
    pub metrics: Vec<MetricRow>,
}

struct Extension {
    graph: InteractionGraph,
    users: Vec<u64>,
    items: Vec<u64>,
    scoring: Option<(InteractionGraph, Vec<Vec<usize>>)>,
}

fn extension(cfg: &ExperimentConfig, bundle: &DatasetBundle) -> Result<Extension, CliError> {
    let base = &bundle.graph_train;
    if let Some(path) = &cfg.extended_edges {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut users = bundle.users.clone();
        let mut items = bundle.items.clone();
        let edges = parse_interactions_into(BufReader::new(file), &mut users, &mut items)?;
        let m = users.len().max(base.num_users());
        let n = items.len().max(base.num_items());
        return Ok(Extension {
            graph: base.extend(&edges, m, n).map_err(CliError::other)?,
            users: users.externals().to_vec(),
            items: items.externals().to_vec(),
            scoring: None,
        });
    }
    let ind = bundle.inductive.as_ref().ok_or_else(|| {
        CliError::Config(ConfigError::Invalid(
            "infer-inductive needs an inductive split or `extended_edges`".into(),
        ))
    })?;
    let mask = bundle
        .observed_graph()?
        .extend(&ind.inference_edges, ind.num_users, ind.num_items)
        .map_err(CliError::other)?;
    Ok(Extension {
        graph: bundle.extended_graph()?,
        users: bundle.users.externals().to_vec(),
        items: bundle.items.externals().to_vec(),
        scoring: Some((mask, bundle.inductive_eval_sets()?)),
    })
}

fn ranked(scores: ArrayView1<f64>, known: &[usize], k: usize) -> Vec<(usize, f64)> {
    let scores = scores.to_vec();
    let candidates = scores.len() - known.len();
    if candidates == 0 {
        return Vec::new();
    }
    topk(&scores, known, k.min(candidates))
        .expect("k clamped to candidates")
        .into_iter()
        .map(|i| (i, scores[i]))
        .collect()
}

fn write_inferred(
    dir: &Path,
    ext: &Extension,
    base: &InteractionGraph,
    inferred: &Inferred,
    k: usize,
) -> Result<(), CliError> {
    let g = &ext.graph;
    let mut recs = String::from("kind\tid\trank\ttarget\tscore\n");
    let mut embs = String::from("kind\tid\tembedding\n");
    let mut emb_line = |kind: &str, id: u64, row: ArrayView1<f64>| {
        let values: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(embs, "{kind}\t{id}\t{}", values.join(" "));
    };
    for u in base.num_users()..g.num_users() {
        let id = ext.users[u];
        emb_line("user", id, inferred.users.row(u));
        let scores = inferred.items.dot(&inferred.users.row(u));
        for (rank, (i, s)) in ranked(scores.view(), g.items_of(u), k)
            .into_iter()
            .enumerate()
        {
            let _ = writeln!(recs, "user\t{id}\t{}\t{}\t{s}", rank + 1, ext.items[i]);
        }
    }
    for i in base.num_items()..g.num_items() {
        let id = ext.items[i];
        emb_line("item", id, inferred.items.row(i));
        let scores = inferred.users.dot(&inferred.items.row(i));
        for (rank, (u, s)) in ranked(scores.view(), g.users_of(i), k)
            .into_iter()
            .enumerate()
        {
            let _ = writeln!(recs, "item\t{id}\t{}\t{}\t{s}", rank + 1, ext.users[u]);
        }
    }
    write(&dir.join(RECOMMENDATIONS), &recs)?;
    write(&dir.join(EMBEDDINGS), &embs)
}

/// Infers embeddings for entities absent from training, writes top-k
/// recommendations and embeddings for them, and scores the held-out
/// interactions of an inductive split.
pub fn infer_inductive(cfg: &ExperimentConfig) -> Result<InferSummary, CliError> {
    let bundle = load_split(cfg)?;
    let (trained, meta) = load_checkpoint(cfg, &bundle)?;
    let model = if trained.spec().variant == Variant::LightGcn {
        make_lightgcn_inductive(&trained).map_err(CliError::other)?
    } else {
        trained
    };
    let ext = extension(cfg, &bundle)?;
    let base = &bundle.graph_train;
    let ctx = InductiveContext::new(&model, base, &ext.graph)
        .map_err(CliError::other)?
        .with_refresh(cfg.refresh_user_embeddings);
    let inferred = infer_all(&ctx).map_err(CliError::other)?;
    write_inferred(&cfg.output_dir, &ext, base, &inferred, cfg.recommend_k)?;
    let mut metrics = Vec::new();
    if let Some((mask, targets)) = &ext.scoring {
        let results = evaluate_at(&inferred.users, &inferred.items, mask, targets, &cfg.k)?;
        metrics = rows(
            format!("{}-inductive", meta.settings.label()),
            &meta,
            &results,
        );
        append_rows(&cfg.output_dir, &metrics)?;
    }
    Ok(InferSummary {
        new_users: ctx.num_new_users(),
        new_items: ctx.num_new_items(),
        metrics,
    })
}

/// Runs the self-contained property suites; fails if any reports a violation.
pub fn verify(cfg: &ExperimentConfig) -> Result<Vec<SuiteReport>, CliError> {
    let reports = run_all(cfg.seed);
    for r in &reports {
        println!("{r}");
    }
    match reports.iter().filter(|r| !r.passed()).count() {
        0 => Ok(reports),
        n => Err(CliError::VerifyFailed(n)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardRow {
    pub point: String,
    pub dir: PathBuf,
    pub val: EvalResult,
    pub test: EvalResult,
    pub best_epoch: usize,
}

/// Trains every grid point into `output_dir/sweep/point_NNN` and ranks them
/// by validation recall (ties keep grid order) in `leaderboard.csv`. Points
/// whose configuration is invalid are skipped with a warning.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<LeaderboardRow>, CliError> {
    let bundle = load_split(cfg)?;
    let k = cfg.k[0];
    let mut board = Vec::new();
    for (idx, point) in cfg.grid_points().into_iter().enumerate() {
        let mut c = cfg.clone();
        c.grid.clear();
        c.split_dir = Some(cfg.split_dir());
        c.output_dir = cfg.output_dir.join("sweep").join(format!("point_{idx:03}"));
        for (key, value) in &point {
            c.apply(key, value)?;
        }
        c.check()?;
        let label: Vec<String> = point.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let label = if label.is_empty() {
            "default".to_string()
        } else {
            label.join(" ")
        };
        info!("sweep point {idx}: {label}");
        let summary = match train_on(&c, &bundle) {
            Err(CliError::Config(e)) => {
                warn!("skipping sweep point {idx} ({label}): {e}");
                continue;
            }
            other => other?,
        };
        let test = test_results(&summary.model, &bundle, &[k])?.remove(0);
        board.push(LeaderboardRow {
            point: label,
            dir: c.output_dir,
            val: summary.best,
            test,
            best_epoch: summary.best_epoch,
        });
    }
    if board.is_empty() {
        return Err(CliError::Config(ConfigError::Invalid(
            "no sweep point has a valid configuration".into(),
        )));
    }
    board.sort_by(|a, b| b.val.recall.total_cmp(&a.val.recall));
    let mut text = format!(
        "rank,point,val_recall@{vk},val_ndcg@{vk},recall@{k},ndcg@{k},best_epoch\n",
        vk = cfg.val_k
    );
    for (rank, r) in board.iter().enumerate() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            rank + 1,
            r.point,
            r.val.recall_pct(),
            r.val.ndcg_pct(),
            r.test.recall_pct(),
            r.test.ndcg_pct(),
            r.best_epoch
        );
    }
    write(&cfg.output_dir.join(LEADERBOARD), &text)?;
    Ok(board)
}
