use std::path::Path;
use std::process::{Command, Output};

use cflgcn::FusionMode;
use cflgcn_cli::checkpoint::{self, CheckpointMeta};
use cflgcn_cli::config::{ModelKind, ModelSettings};
use cflgcn_cli::metrics::{read_metrics, write_metrics, MetricRow};
use cflgcn_cli::{CliError, ExperimentConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cflgcn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cflgcn"))
        .args(args)
        .env("CFLGCN_OUTPUT_DIR", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cflgcn(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

const TWIN: &[&str] = &[
    "model=cf-lgcn-u",
    "twin=true",
    "layers=1",
    "dim=8",
    "learning_rate=0.01",
    "batch_size=32",
    "max_epochs=200",
    "eval_every=10",
    "patience=10",
    "val_k=5",
    "k=5",
];

fn with<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(extra);
    v
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(cflgcn(out, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        cflgcn(out, &["train", "not-an-assignment"]).status.code(),
        Some(2)
    );
    let bad = out.join("bad.cfg");
    std::fs::write(&bad, "layers = 2\nthis line is broken\n").unwrap();
    assert_eq!(
        cflgcn(out, &["train", "-c", bad.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(cflgcn(out, &["train", "colour=red"]).status.code(), Some(3));
    assert_eq!(cflgcn(out, &["train", "k=0"]).status.code(), Some(3));
    assert_eq!(
        cflgcn(out, &["train", "-c", "/does/not/exist.cfg"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(cflgcn(out, &["train"]).status.code(), Some(4));
    assert_eq!(
        cflgcn(out, &["prepare-data", "dataset=/does/not/exist"])
            .status
            .code(),
        Some(4)
    );
    let codes: Vec<i32> = [
        CliError::Other(String::new()),
        CliError::Usage(String::new()),
        CliError::Config(cflgcn_cli::config::ConfigError::Invalid(String::new())),
        CliError::MissingFile("x".into()),
        CliError::VerifyFailed(1),
    ]
    .iter()
    .map(CliError::exit_code)
    .collect();
    assert_eq!(codes, [1, 2, 3, 4, 5]);
}

#[test]
fn verify_passes_without_data() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["verify"]);
    assert!(stdout.lines().count() >= 5);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn synthetic_training_improves_and_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["prepare-data"]);
    ok(out, &with("train", TWIN));
    let log = std::fs::read_to_string(out.join("training_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,recall@5,ndcg@5"));
    let recalls: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(!recalls.is_empty());
    let best_so_far: Vec<f64> = recalls
        .iter()
        .scan(f64::NEG_INFINITY, |b, &r| {
            *b = b.max(r);
            Some(*b)
        })
        .collect();
    assert!(best_so_far.windows(2).all(|w| w[0] <= w[1]));
    assert!(*best_so_far.last().unwrap() >= 0.9, "{recalls:?}");

    let (model, meta) = checkpoint::load(&out.join("checkpoint")).unwrap();
    assert_eq!(meta.settings.kind, ModelKind::CfLgcnU);
    assert!(meta.settings.twin);
    let split = cflgcn::datasets::read_manifest(&out.join("split")).unwrap();
    let g = split.graph_train.normalize(model.normalization());
    let (u, e) = model.embeddings(&g).unwrap();
    let val = cflgcn::evaluate_embeddings(
        &u,
        &e,
        &split.graph_train,
        &split.val_sets,
        5,
        cflgcn::Exec::default(),
    )
    .unwrap();
    assert_eq!(
        val.recall,
        recalls.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
}

fn strip_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn runs_are_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let short = ["max_epochs=30", "k=5,10"];
        ok(out, &["prepare-data", "seed=3"]);
        ok(
            out,
            &[&with("train", TWIN)[..], &short, &["seed=3"]].concat(),
        );
        ok(out, &["evaluate", "k=5,10"]);
        let read = |name: &str| std::fs::read(out.join(name)).unwrap();
        (
            read("split/edges.tsv"),
            read("training_log.csv"),
            read("checkpoint/table_0.bin"),
            read("checkpoint/table_1.bin"),
            strip_wall_time(&String::from_utf8(read("metrics@5.csv")).unwrap()),
            strip_wall_time(&String::from_utf8(read("metrics@10.csv")).unwrap()),
            dir,
        )
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
    assert_eq!(a.4, b.4);
    assert_eq!(a.5, b.5);
    assert!(a.4.starts_with("model,layers,fusion,recall@5,ndcg@5,seed"));
    assert!(a
        .4
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("twin-cf-lgcn-u,1,mean,"));
}

#[test]
fn file_then_overrides_then_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.cfg");
    std::fs::write(&file, "layers = 2\nseed = 9\nk = 10\n").unwrap();
    let cfg = ExperimentConfig::load(Some(&file), &["seed=4".into()]).unwrap();
    assert_eq!(
        (cfg.model.layers, cfg.seed, cfg.k.clone()),
        (2, 4, vec![10])
    );

    let out = dir.path().join("root");
    ok(&out, &["prepare-data"]);
    assert!(out.join("split/entities.tsv").is_file());
    let elsewhere = dir.path().join("explicit");
    ok(
        &out,
        &[
            "prepare-data",
            &format!("output_dir={}", elsewhere.display()),
        ],
    );
    assert!(elsewhere.join("split/edges.tsv").is_file());
}

#[test]
fn infers_entities_from_an_extended_edge_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let model = [
        "layers=2",
        "include_layer0=false",
        "dim=8",
        "max_epochs=20",
        "eval_every=5",
        "val_k=5",
    ];
    ok(out, &["prepare-data"]);
    ok(out, &with("train", &model));
    let extra = out.join("extra.txt");
    // user 500 is new and likes the first block; item 900 is new and liked by user 0
    std::fs::write(&extra, "500 0 1 2 3\n0 900\n").unwrap();
    let stdout = ok(
        out,
        &[
            "infer-inductive",
            &format!("extended_edges={}", extra.display()),
            "recommend_k=3",
        ],
    );
    assert!(
        stdout.contains("inferred 1 new users and 1 new items"),
        "{stdout}"
    );
    let recs = std::fs::read_to_string(out.join("recommendations.tsv")).unwrap();
    let user_recs: Vec<&str> = recs
        .lines()
        .filter(|l| l.starts_with("user\t500\t"))
        .collect();
    assert_eq!(user_recs.len(), 3);
    for l in &user_recs {
        let item: u64 = l.split('\t').nth(3).unwrap().parse().unwrap();
        assert!(
            ![0, 1, 2, 3].contains(&item),
            "recommended a known item: {l}"
        );
    }
    assert_eq!(
        recs.lines()
            .filter(|l| l.starts_with("item\t900\t"))
            .count(),
        3
    );
    let embs = std::fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    let user = embs.lines().find(|l| l.starts_with("user\t500\t")).unwrap();
    assert_eq!(user.split('\t').nth(2).unwrap().split(' ').count(), 8);
    assert!(embs.lines().any(|l| l.starts_with("item\t900\t")));
}

#[test]
fn inductive_split_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = [
        "synthetic_users=60",
        "synthetic_items=60",
        "synthetic_blocks=3",
        "inductive=true",
        "holdout_fraction=0.1",
    ];
    ok(out, &with("prepare-data", &data));
    ok(
        out,
        &[
            "train",
            "model=lightgcn",
            "layers=2",
            "include_layer0=false",
            "dim=8",
            "max_epochs=20",
            "k=5",
            "val_k=5",
        ],
    );
    ok(out, &["infer-inductive", "k=5"]);
    let rows = read_metrics(&out.join("metrics@5.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].model, "lightgcn-inductive");
    assert!(rows[0].recall_pct > 0.0);
}

#[test]
fn sweep_writes_a_ranked_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["prepare-data"]);
    ok(
        out,
        &[
            "sweep",
            "grid.learning_rate=0.1,0.01",
            "layers=1",
            "dim=4",
            "max_epochs=10",
            "eval_every=5",
            "val_k=5",
            "k=5",
        ],
    );
    let board = std::fs::read_to_string(out.join("leaderboard.csv")).unwrap();
    let lines: Vec<&str> = board.lines().collect();
    assert_eq!(
        lines[0],
        "rank,point,val_recall@5,val_ndcg@5,recall@5,ndcg@5,best_epoch"
    );
    assert_eq!(lines.len(), 3);
    let vals: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(vals[0] >= vals[1]);
    assert!(out
        .join("sweep/point_000/checkpoint/manifest.txt")
        .is_file());
    assert!(out.join("sweep/point_001/training_log.csv").is_file());
}

fn settings() -> impl Strategy<Value = ModelSettings> {
    (
        0usize..4,
        any::<bool>(),
        0usize..4,
        any::<bool>(),
        1usize..6,
    )
        .prop_map(|(kind, twin, layers, concat, dim)| ModelSettings {
            kind: [
                ModelKind::CfLgcnU,
                ModelKind::CfLgcnE,
                ModelKind::LightGcn,
                ModelKind::Mf,
            ][kind],
            twin,
            layers,
            fusion: if concat {
                FusionMode::Concat
            } else {
                FusionMode::Mean
            },
            dim,
            ..ModelSettings::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoints_reload_bit_exact(s in settings(), m in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let Ok(model) = s.build(m, n, &mut ChaCha8Rng::seed_from_u64(seed)) else {
            return Ok(());
        };
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            settings: s,
            num_users: m,
            num_items: n,
            seed,
            best_epoch: 3,
            epochs_run: 9,
            train_seconds: 0.25,
        };
        checkpoint::save(dir.path(), &model, &meta).unwrap();
        let (back, meta_back) = checkpoint::load(dir.path()).unwrap();
        prop_assert_eq!(&meta_back, &meta);
        for (a, b) in back.tables().iter().zip(model.tables()) {
            let bits = |t: &cflgcn::EmbeddingTable| t.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back, model);
    }

    #[test]
    fn metric_rows_round_trip(
        raw in prop::collection::vec(
            ("[a-z][a-z0-9-]{0,12}", 0usize..5, any::<bool>(), 0.0f64..100.0, 0.0f64..100.0, any::<u64>(), 0.0f64..1e5),
            1..6,
        ),
        k in 1usize..50,
        split in 0usize..6,
    ) {
        let rows: Vec<MetricRow> = raw
            .into_iter()
            .map(|(model, layers, concat, recall_pct, ndcg_pct, seed, wall_time)| MetricRow {
                model,
                layers,
                fusion: if concat { "concat".into() } else { "mean".into() },
                k,
                recall_pct,
                ndcg_pct,
                seed,
                wall_time,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let cut = split.min(rows.len() - 1).max(1);
        write_metrics(&rows[..cut], &path).unwrap();
        if cut < rows.len() {
            write_metrics(&rows[cut..], &path).unwrap();
        }
        prop_assert_eq!(read_metrics(&path).unwrap(), rows.clone());
        let text = std::fs::read_to_string(&path).unwrap();
        prop_assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
