//! Self-checks against dense reference computations.
//!
//! Each suite draws random small instances, computes the quantity both with
//! the sparse engine and with explicit dense matrices, and records the
//! largest discrepancy.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{evaluate_embeddings, recall_at_k};
use crate::exec::Exec;
use crate::graph::{InteractionGraph, Normalization};
use crate::propagation::{
    forward_cf_lgcn_u, EmbeddingTable, FusionSpec, Model, Network, NetworkSpec, Variant,
};
use crate::training::{backward, batch_loss, bpr_loss, sample_batch};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<22} cases={:<4} failures={:<3} max_err={:.3e} tol={:.0e} time={:.2}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )
    }
}

struct Tracker {
    report: SuiteReport,
    start: Instant,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            report: SuiteReport {
                name,
                cases: 0,
                failures: 0,
                max_error: 0.0,
                tolerance,
                elapsed: Duration::ZERO,
            },
            start: Instant::now(),
        }
    }

    fn record(&mut self, err: f64) {
        let r = &mut self.report;
        r.cases += 1;
        if err.is_nan() || err >= r.tolerance {
            r.failures += 1;
        }
        r.max_error = if err.is_nan() {
            f64::NAN
        } else {
            r.max_error.max(err)
        };
    }

    fn finish(mut self) -> SuiteReport {
        self.report.elapsed = self.start.elapsed();
        self.report
    }
}

/// Random graph with `m`, `n` in `1..=max_dim`.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, max_dim: usize) -> InteractionGraph {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let density = rng.random_range(0.1..0.7);
    let edges: Vec<_> = (0..m)
        .flat_map(|u| (0..n).map(move |i| (u, i)))
        .filter(|_| rng.random::<f64>() < density)
        .collect();
    InteractionGraph::from_edges(m, n, &edges).expect("in range")
}

/// Dense `(P, Q)` with `P` the m×n items→users operator and `Q` the n×m
/// users→items operator.
fn dense_operators(g: &InteractionGraph, norm: Normalization) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = (g.num_users(), g.num_items());
    let mut p = Array2::zeros((m, n));
    let mut q = Array2::zeros((n, m));
    for (u, i) in g.edges() {
        let du = g.user_degree(u) as f64;
        let di = g.item_degree(i) as f64;
        let (a, b) = match norm {
            Normalization::None => (1.0, 1.0),
            Normalization::Left => (1.0 / du, 1.0 / di),
            Normalization::Right => (1.0 / di, 1.0 / du),
            Normalization::Symmetric => {
                let w = 1.0 / (du * di).sqrt();
                (w, w)
            }
        };
        p[[u, i]] = a;
        q[[i, u]] = b;
    }
    (p, q)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a.dim() != b.dim() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_norm<R: Rng + ?Sized>(rng: &mut R) -> Normalization {
    Normalization::ALL[rng.random_range(0..Normalization::ALL.len())]
}

/// Third propagated item set against both association orders of the dense
/// product, `Q(PQ)U₀` and `(QP)QU₀`.
pub fn commutation_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("commutation", 1e-10);
    for _ in 0..instances {
        let g = random_graph(&mut rng, 16);
        let d = rng.random_range(1..=8);
        let norm = random_norm(&mut rng);
        let u0 = EmbeddingTable::gaussian(g.num_users(), d, 1.0, &mut rng);
        let spec = NetworkSpec::new(Variant::CfLgcnU, 3).with_normalization(norm);
        let out = forward_cf_lgcn_u(&g.normalize(norm), &u0, &spec).expect("shapes match");
        let (p, q) = dense_operators(&g, norm);
        let x = u0.values();
        let left = q.dot(&p.dot(&q)).dot(x);
        let right = q.dot(&p).dot(&q).dot(x);
        let e3 = &out.item_sets[1];
        t.record(max_abs_diff(e3, &left).max(max_abs_diff(e3, &right)));
    }
    t.finish()
}

/// Three-layer LightGCN with uniform weights against its closed form, and
/// the score matrix against the sum of its user-chain, item-chain and
/// cross terms.
pub fn lightgcn_decomposition_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("lightgcn-decomposition", 1e-8);
    for _ in 0..instances {
        let g = random_graph(&mut rng, 16);
        let (m, n) = (g.num_users(), g.num_items());
        let d = rng.random_range(1..=8);
        let norm = random_norm(&mut rng);
        let spec = NetworkSpec::new(Variant::LightGcn, 3).with_normalization(norm);
        let net = Network::init(spec, m, n, d, 1.0, &mut rng);
        let u0 = net.user_table().expect("lightgcn").values().clone();
        let e0 = net.item_table().expect("lightgcn").values().clone();
        let model = Model::single(net, FusionSpec::mean());
        let (users, items) = model.embeddings(&g.normalize(norm)).expect("valid");

        let (p, q) = dense_operators(&g, norm);
        let a = 0.25;
        let su = p.dot(&q);
        let se = q.dot(&p);
        let user_u = (Array2::eye(m) * a + &su * a).dot(&u0);
        let user_e = p.dot(&(Array2::eye(n) * a + &se * a)).dot(&e0);
        let item_u = q.dot(&(Array2::eye(m) * a + &su * a)).dot(&u0);
        let item_e = (Array2::eye(n) * a + &se * a).dot(&e0);
        let dense_users = &user_u + &user_e;
        let dense_items = &item_u + &item_e;
        let z = users.dot(&items.t());
        let z_u = user_u.dot(&item_u.t());
        let z_e = user_e.dot(&item_e.t());
        let cross = user_u.dot(&item_e.t()) + user_e.dot(&item_u.t());
        let split = z_u + z_e + cross;
        let err = max_abs_diff(&users, &dense_users)
            .max(max_abs_diff(&items, &dense_items))
            .max(max_abs_diff(&z, &split));
        t.record(err);
    }
    t.finish()
}

pub type ModelBuilder = Box<dyn Fn(usize, usize, &mut ChaCha8Rng) -> Model>;

/// Model configurations covered by the gradient suite. Single-table
/// networks without layer 0 need two products to produce user sets.
pub fn gradient_configs() -> Vec<(String, ModelBuilder)> {
    let mut out: Vec<(String, ModelBuilder)> = Vec::new();
    for layers in 1..=3 {
        for fusion in [FusionSpec::mean(), FusionSpec::concat()] {
            for variant in [Variant::CfLgcnU, Variant::CfLgcnE, Variant::LightGcn] {
                for layer0 in [true, false] {
                    if !layer0 && layers < 2 && variant != Variant::LightGcn {
                        continue;
                    }
                    let spec = NetworkSpec::new(variant, layers)
                        .with_layer0(layer0)
                        .with_normalization(Normalization::Symmetric);
                    let name = format!("{variant}/L{layers}/{}/layer0={layer0}", fusion.mode);
                    let f = fusion.clone();
                    out.push((
                        name,
                        Box::new(move |m, n, rng| {
                            Model::single(Network::init(spec, m, n, 4, 0.5, rng), f.clone())
                        }),
                    ));
                }
            }
            let spec = NetworkSpec::new(Variant::CfLgcnU, layers);
            let name = format!("twin/L{layers}/{}", fusion.mode);
            let f = fusion.clone();
            out.push((
                name,
                Box::new(move |m, n, rng| {
                    let a = Network::init(spec, m, n, 4, 0.5, rng);
                    let b = Network::init(spec, m, n, 4, 0.5, rng);
                    Model::twin(a, b, f.clone()).expect("same family")
                }),
            ));
        }
    }
    out
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and central
/// finite-difference gradients over all tables.
pub fn gradient_error(
    model: &Model,
    g: &InteractionGraph,
    seed: u64,
    lambda: f64,
    h: f64,
) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triples = sample_batch(&mut rng, g, 16, 1).ok()?;
    let ng = g.normalize(model.normalization());
    let cache = model.forward(&ng).ok()?;
    let analytic = backward(&ng, model, &cache, &triples, lambda).ok()?;
    let base: Vec<Array2<f64>> = model.tables().iter().map(|t| t.values().clone()).collect();
    let loss_at = |tables: Vec<Array2<f64>>| -> f64 {
        let m = model.with_parameters(tables).expect("same shapes");
        let c = m.forward(&ng).expect("valid");
        batch_loss(&m, &c, &triples, lambda).expect("valid")
    };
    let (mut diff, mut a_norm, mut n_norm) = (0.0, 0.0, 0.0);
    for (k, table) in base.iter().enumerate() {
        for idx in 0..table.len() {
            let (r, c) = (idx / table.ncols(), idx % table.ncols());
            let mut plus = base.clone();
            plus[k][[r, c]] += h;
            let mut minus = base.clone();
            minus[k][[r, c]] -= h;
            let numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            let a = analytic.0[k][[r, c]];
            diff += (a - numeric).powi(2);
            a_norm += a * a;
            n_norm += numeric * numeric;
        }
    }
    let denom = a_norm.sqrt().max(n_norm.sqrt());
    Some(if denom == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    })
}

pub fn gradient_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("gradient", 1e-4);
    for (_, build) in gradient_configs() {
        let g = loop {
            let edges: Vec<_> = (0..6)
                .flat_map(|u| (0..8).map(move |i| (u, i)))
                .filter(|_| rng.random::<f64>() < 0.4)
                .collect();
            let g = InteractionGraph::from_edges(6, 8, &edges).expect("in range");
            if (0..6).all(|u| (1..8).contains(&g.user_degree(u))) {
                break g;
            }
        };
        let model = build(6, 8, &mut rng);
        let err = gradient_error(&model, &g, rng.random(), 1e-2, 1e-5).unwrap_or(f64::NAN);
        t.record(err);
    }
    t.finish()
}

/// Reference evaluation: full sort of every candidate, then direct counts.
pub fn brute_force_metrics(
    users: &Array2<f64>,
    items: &Array2<f64>,
    mask: &InteractionGraph,
    test_sets: &[Vec<usize>],
    k: usize,
) -> Option<(f64, f64, usize)> {
    let (mut recall, mut ndcg, mut count) = (0.0, 0.0, 0usize);
    for (u, test) in test_sets.iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        count += 1;
        if u >= users.nrows() {
            continue;
        }
        let scores: Vec<f64> = (0..items.nrows())
            .map(|i| users.row(u).dot(&items.row(i)))
            .collect();
        let mut cand: Vec<usize> = (0..items.nrows())
            .filter(|&i| u >= mask.num_users() || !mask.contains(u, i))
            .collect();
        cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        cand.truncate(k);
        recall += recall_at_k(&cand, test).ok()?;
        let dcg: f64 = cand
            .iter()
            .enumerate()
            .filter(|(_, i)| test.contains(i))
            .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..k.min(test.len()))
            .map(|r| 1.0 / ((r + 2) as f64).log2())
            .sum();
        ndcg += dcg / idcg;
    }
    (count > 0).then(|| (recall / count as f64, ndcg / count as f64, count))
}

pub fn metric_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("metric-oracle", f64::MIN_POSITIVE);
    for _ in 0..instances {
        let g = random_graph(&mut rng, 20);
        let (m, n) = (g.num_users(), g.num_items());
        let d = rng.random_range(1..=4);
        // coarse values force score ties
        let mut draw = |rows| Array2::from_shape_fn((rows, d), |_| rng.random_range(-2..=2) as f64);
        let users = draw(m);
        let items = draw(n);
        let test_sets: Vec<Vec<usize>> = (0..m)
            .map(|u| {
                (0..n)
                    .filter(|&i| !g.contains(u, i) && rng.random::<f64>() < 0.3)
                    .collect()
            })
            .collect();
        let k = rng.random_range(1..=n);
        let reference = brute_force_metrics(&users, &items, &g, &test_sets, k);
        let mut err = 0.0;
        for exec in [Exec::Sequential, Exec::default()] {
            let got = evaluate_embeddings(&users, &items, &g, &test_sets, k, exec).ok();
            err = match (got, reference) {
                (Some(r), Some((rec, nd, c)))
                    if r.recall == rec && r.ndcg == nd && r.users_evaluated == c =>
                {
                    err
                }
                (None, None) => err,
                _ => 1.0,
            };
        }
        t.record(err);
    }
    t.finish()
}

/// Zero-margin loss against `ln 2` and monotonicity over a margin grid.
pub fn bpr_suite() -> SuiteReport {
    let mut t = Tracker::new("bpr-fixed-points", 1e-12);
    t.record((bpr_loss(0.0, 0.0) - std::f64::consts::LN_2).abs());
    let margins: Vec<f64> = (-400..=400).map(|k| k as f64 * 0.1).collect();
    let losses: Vec<f64> = margins.iter().map(|&x| bpr_loss(x, 0.0)).collect();
    let monotone = losses.windows(2).all(|w| w[1] <= w[0]) && losses[0] > losses[losses.len() - 1];
    t.record(if monotone { 0.0 } else { 1.0 });
    t.finish()
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        commutation_suite(seed, 100),
        lightgcn_decomposition_suite(seed.wrapping_add(1), 50),
        gradient_suite(seed.wrapping_add(2)),
        metric_suite(seed.wrapping_add(3), 200),
        bpr_suite(),
    ]
}
