//! Dense reference implementations shared by the integration tests.
//!
//! Everything here is computed from public accessors and explicit matrices
//! so it does not share code paths with the sparse engine.

#![allow(dead_code)]

use cflgcn::graph::{InteractionGraph, Normalization};
use cflgcn::propagation::{FusionMode, Model, Network, Variant};
use cflgcn::training::BprTriple;
use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    density: f64,
) -> InteractionGraph {
    let mut edges = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if rng.random::<f64>() < density {
                edges.push((u, i));
            }
        }
    }
    InteractionGraph::from_edges(m, n, &edges).unwrap()
}

/// Graph where every user has at least one observed and one unobserved item.
pub fn trainable_graph<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    density: f64,
) -> InteractionGraph {
    loop {
        let g = random_graph(rng, m, n, density);
        if (0..m).all(|u| g.user_degree(u) >= 1 && g.user_degree(u) < n) {
            return g;
        }
    }
}

/// Dense interaction matrix.
pub fn dense_r(g: &InteractionGraph) -> Array2<f64> {
    let mut r = Array2::zeros((g.num_users(), g.num_items()));
    for u in 0..g.num_users() {
        for i in 0..g.num_items() {
            if g.contains(u, i) {
                r[[u, i]] = 1.0;
            }
        }
    }
    r
}

/// `(P, Q)`: P (m×n) maps item rows onto users, Q (n×m) user rows onto
/// items. Degrees come from the row/column sums of the dense matrix.
pub fn dense_operators(g: &InteractionGraph, norm: Normalization) -> (Array2<f64>, Array2<f64>) {
    let r = dense_r(g);
    let du = r.sum_axis(Axis(1));
    let di = r.sum_axis(Axis(0));
    let (m, n) = r.dim();
    let mut p = Array2::zeros((m, n));
    let mut q = Array2::zeros((n, m));
    for u in 0..m {
        for i in 0..n {
            if r[[u, i]] == 0.0 {
                continue;
            }
            let (wu, wi) = match norm {
                Normalization::None => (1.0, 1.0),
                Normalization::Symmetric => {
                    let w = 1.0 / (du[u] * di[i]).sqrt();
                    (w, w)
                }
                Normalization::Left => (1.0 / du[u], 1.0 / di[i]),
                Normalization::Right => (1.0 / di[i], 1.0 / du[u]),
            };
            p[[u, i]] = wu;
            q[[i, u]] = wi;
        }
    }
    (p, q)
}

/// Layer outputs of one network as `(user sets, item sets)`.
pub fn dense_sets(net: &Network, g: &InteractionGraph) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let spec = net.spec();
    let (p, q) = dense_operators(g, spec.normalization);
    let l = spec.num_prop_layers;
    let keep = |k: usize| k > 0 || spec.include_layer0;
    let mut users = Vec::new();
    let mut items = Vec::new();
    match spec.variant {
        Variant::CfLgcnU | Variant::CfLgcnE => {
            let from_users = spec.variant == Variant::CfLgcnU;
            let mut x = if from_users {
                net.user_table().unwrap().values().clone()
            } else {
                net.item_table().unwrap().values().clone()
            };
            for k in 0..=l {
                if k > 0 {
                    let on_items_now = (k % 2 == 1) == from_users;
                    x = if on_items_now { q.dot(&x) } else { p.dot(&x) };
                }
                let on_users = (k % 2 == 0) == from_users;
                if keep(k) {
                    if on_users {
                        users.push(x.clone());
                    } else {
                        items.push(x.clone());
                    }
                }
            }
        }
        Variant::LightGcn => {
            let mut u = net.user_table().unwrap().values().clone();
            let mut e = net.item_table().unwrap().values().clone();
            for k in 0..=l {
                if k > 0 {
                    let nu = p.dot(&e);
                    let ne = q.dot(&u);
                    u = nu;
                    e = ne;
                }
                if keep(k) {
                    users.push(u.clone());
                    items.push(e.clone());
                }
            }
        }
    }
    (users, items)
}

/// User sets and item sets of one network.
pub type NetSets = (Vec<Array2<f64>>, Vec<Array2<f64>>);

/// Uniform mean over the union of sets, or per-network concat that keeps
/// the latest `min(#user sets, #item sets)` sets of each side.
pub fn dense_fuse(per_net: &[NetSets], mode: FusionMode) -> (Array2<f64>, Array2<f64>) {
    match mode {
        FusionMode::Mean => {
            let mean = |sets: Vec<&Array2<f64>>| {
                let mut acc = Array2::zeros(sets[0].raw_dim());
                for s in &sets {
                    acc += *s;
                }
                acc / sets.len() as f64
            };
            let users = mean(per_net.iter().flat_map(|(u, _)| u).collect());
            let items = mean(per_net.iter().flat_map(|(_, i)| i).collect());
            (users, items)
        }
        FusionMode::Concat => {
            let mut users = Vec::new();
            let mut items = Vec::new();
            for (u, i) in per_net {
                let keep = u.len().min(i.len());
                users.extend(u[u.len() - keep..].iter().map(|a| a.view()));
                items.extend(i[i.len() - keep..].iter().map(|a| a.view()));
            }
            (
                concatenate(Axis(1), &users).unwrap(),
                concatenate(Axis(1), &items).unwrap(),
            )
        }
    }
}

pub fn dense_embeddings(model: &Model, g: &InteractionGraph) -> (Array2<f64>, Array2<f64>) {
    let per_net: Vec<_> = model.networks().iter().map(|n| dense_sets(n, g)).collect();
    dense_fuse(&per_net, model.fusion().mode)
}

pub fn dense_loss(model: &Model, g: &InteractionGraph, triples: &[BprTriple], lambda: f64) -> f64 {
    let (users, items) = dense_embeddings(model, g);
    let mut data = 0.0;
    for t in triples {
        let u = users.row(t.user);
        let margin = u.dot(&items.row(t.pos_item)) - u.dot(&items.row(t.neg_item));
        data += (-margin).exp().ln_1p();
    }
    if !triples.is_empty() {
        data /= triples.len() as f64;
    }
    let reg: f64 = model
        .tables()
        .iter()
        .map(|t| t.values().iter().map(|v| v * v).sum::<f64>())
        .sum();
    data + lambda * reg
}

/// Central differences of [`dense_loss`] for every parameter.
pub fn numeric_gradient(
    model: &Model,
    g: &InteractionGraph,
    triples: &[BprTriple],
    lambda: f64,
    h: f64,
) -> Vec<Array2<f64>> {
    let base: Vec<Array2<f64>> = model.tables().iter().map(|t| t.values().clone()).collect();
    let mut out: Vec<Array2<f64>> = base.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
    for k in 0..base.len() {
        for r in 0..base[k].nrows() {
            for c in 0..base[k].ncols() {
                let mut plus = base.clone();
                plus[k][[r, c]] += h;
                let mut minus = base.clone();
                minus[k][[r, c]] -= h;
                let lp = dense_loss(&model.with_parameters(plus).unwrap(), g, triples, lambda);
                let lm = dense_loss(&model.with_parameters(minus).unwrap(), g, triples, lambda);
                out[k][[r, c]] = (lp - lm) / (2.0 * h);
            }
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over all tables.
pub fn relative_error(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y.iter()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    }
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Brute-force ranking metrics: score every item, drop training items,
/// fully sort by (score desc, index asc) and count hits directly.
pub fn brute_force_eval(
    users: &Array2<f64>,
    items: &Array2<f64>,
    mask: &InteractionGraph,
    test_sets: &[Vec<usize>],
    k: usize,
) -> Option<(f64, f64, usize)> {
    let (mut recall, mut ndcg, mut count) = (0.0, 0.0, 0);
    for (u, test) in test_sets.iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        count += 1;
        if u >= users.nrows() {
            continue;
        }
        let mut ranked: Vec<(f64, usize)> = (0..items.nrows())
            .filter(|&i| u >= mask.num_users() || !mask.contains(u, i))
            .map(|i| (users.row(u).dot(&items.row(i)), i))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(k);
        let mut hits = 0;
        let mut dcg = 0.0;
        for (rank, (_, i)) in ranked.iter().enumerate() {
            if test.contains(i) {
                hits += 1;
                dcg += 1.0 / ((rank as f64) + 2.0).log2();
            }
        }
        let idcg: f64 = (0..k.min(test.len()))
            .map(|r| 1.0 / ((r as f64) + 2.0).log2())
            .sum();
        recall += hits as f64 / test.len() as f64;
        ndcg += dcg / idcg;
    }
    (count > 0).then(|| (recall / count as f64, ndcg / count as f64, count))
}
