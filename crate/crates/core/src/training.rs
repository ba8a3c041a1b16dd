//! BPR training: negative sampling, loss, analytic gradients through the
//! linear propagation, Adam, edge dropout and the epoch loop.

use std::borrow::Cow;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{EvalError, EvalResult};
use crate::graph::{GraphError, InteractionGraph, NormalizedGraph};
use crate::propagation::{dot, ForwardCache, Model, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("user {user} has interacted with every item; no negative can be sampled")]
    NoNegative { user: usize },
    #[error("cannot sample from a graph without interactions")]
    EmptyGraph,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("forward cache does not match the model or graph: {0}")]
    StaleCache(&'static str),
    #[error("parameter/gradient shape mismatch in table {table}")]
    Shape { table: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 weight on the squared parameter tables.
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation runs every `eval_every` epochs.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub edge_dropout_p: f64,
    pub seed: u64,
    pub negatives_per_positive: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_lambda: 1e-4,
            batch_size: 2048,
            max_epochs: 1000,
            eval_every: 20,
            patience: 10,
            edge_dropout_p: 0.0,
            seed: 0,
            negatives_per_positive: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if !(0.0..1.0).contains(&self.edge_dropout_p) {
            return fail("edge_dropout_p must be in [0, 1)");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1");
        }
        if self.negatives_per_positive == 0 {
            return fail("negatives_per_positive must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return fail("l2_lambda must be non-negative");
        }
        Ok(())
    }
}

/// `(user, observed item, unobserved item)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

impl BprTriple {
    fn as_tuple(self) -> (usize, usize, usize) {
        (self.user, self.pos_item, self.neg_item)
    }
}

const REJECTION_ATTEMPTS: usize = 64;

/// Uniform item the user has not interacted with.
///
/// Rejection sampling first; after a bounded number of misses the draw is
/// made directly from the complement, which keeps the result uniform.
pub fn sample_negative<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &InteractionGraph,
    user: usize,
) -> Result<usize, TrainError> {
    let n = graph.num_items();
    let observed = graph.items_of(user);
    if observed.len() >= n {
        return Err(TrainError::NoNegative { user });
    }
    for _ in 0..REJECTION_ATTEMPTS {
        let j = rng.random_range(0..n);
        if observed.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
    // k-th unobserved item: skip past every observed index <= candidate
    let mut j = rng.random_range(0..n - observed.len());
    for &o in observed {
        if o <= j {
            j += 1;
        } else {
            break;
        }
    }
    Ok(j)
}

/// `batch_size` positives drawn uniformly from the observed interactions,
/// each paired with `negatives_per_positive` uniform negatives.
pub fn sample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &InteractionGraph,
    batch_size: usize,
    negatives_per_positive: usize,
) -> Result<Vec<BprTriple>, TrainError> {
    if graph.nnz() == 0 {
        return Err(TrainError::EmptyGraph);
    }
    let edges: Vec<(usize, usize)> = graph.edges().collect();
    let mut out = Vec::with_capacity(batch_size * negatives_per_positive);
    for _ in 0..batch_size {
        let (user, pos_item) = edges[rng.random_range(0..edges.len())];
        for _ in 0..negatives_per_positive {
            let neg_item = sample_negative(rng, graph, user)?;
            out.push(BprTriple {
                user,
                pos_item,
                neg_item,
            });
        }
    }
    Ok(out)
}

/// Every observed interaction once, shuffled, each with its negatives.
pub fn epoch_triples<R: Rng + ?Sized>(
    rng: &mut R,
    graph: &InteractionGraph,
    negatives_per_positive: usize,
) -> Result<Vec<BprTriple>, TrainError> {
    if graph.nnz() == 0 {
        return Err(TrainError::EmptyGraph);
    }
    let mut edges: Vec<(usize, usize)> = graph.edges().collect();
    edges.shuffle(rng);
    let mut out = Vec::with_capacity(edges.len() * negatives_per_positive);
    for (user, pos_item) in edges {
        for _ in 0..negatives_per_positive {
            out.push(BprTriple {
                user,
                pos_item,
                neg_item: sample_negative(rng, graph, user)?,
            });
        }
    }
    Ok(out)
}

/// `-ln σ(z_pos - z_neg)`, evaluated as a stable softplus.
pub fn bpr_loss(z_pos: f64, z_neg: f64) -> f64 {
    softplus(z_neg - z_pos)
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_cache(model: &Model, cache: &ForwardCache) -> Result<(), TrainError> {
    if cache.outputs.len() != model.networks().len() {
        return Err(TrainError::StaleCache("network count differs"));
    }
    Ok(())
}

/// Mean BPR loss over `triples` plus `λ·‖θ‖²`.
pub fn batch_loss(
    model: &Model,
    cache: &ForwardCache,
    triples: &[BprTriple],
    l2_lambda: f64,
) -> Result<f64, TrainError> {
    check_cache(model, cache)?;
    let tuples: Vec<_> = triples.iter().map(|t| t.as_tuple()).collect();
    let scores = crate::propagation::score_triples(&cache.users, &cache.items, &tuples)?;
    let data = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|&(p, n)| bpr_loss(p, n)).sum::<f64>() / scores.len() as f64
    };
    Ok(data + l2_lambda * model.squared_norm())
}

/// Gradients aligned with [`Model::tables`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

/// Gradient of [`batch_loss`] with respect to every parameter table.
///
/// `g` must be the graph `cache` was computed on. The propagation is linear,
/// so the fused-embedding gradient is pushed back through the adjoint
/// products of each network.
pub fn backward(
    g: &NormalizedGraph,
    model: &Model,
    cache: &ForwardCache,
    triples: &[BprTriple],
    l2_lambda: f64,
) -> Result<Gradients, TrainError> {
    check_cache(model, cache)?;
    let (users, items) = (&cache.users, &cache.items);
    if users.nrows() != g.num_users() || items.nrows() != g.num_items() {
        return Err(TrainError::StaleCache("embedding rows differ from graph"));
    }
    let mut grad_users = Array2::<f64>::zeros(users.raw_dim());
    let mut grad_items = Array2::<f64>::zeros(items.raw_dim());
    if !triples.is_empty() {
        let scale = 1.0 / triples.len() as f64;
        for t in triples {
            let u = users.row(t.user);
            let margin = dot(u, items.row(t.pos_item)) - dot(u, items.row(t.neg_item));
            let coef = -sigmoid(-margin) * scale;
            let diff = &items.row(t.pos_item) - &items.row(t.neg_item);
            grad_users.row_mut(t.user).scaled_add(coef, &diff);
            grad_items.row_mut(t.pos_item).scaled_add(coef, &u);
            grad_items.row_mut(t.neg_item).scaled_add(-coef, &u);
        }
    }
    let per_user = cache.plan.split_grad(&cache.outputs, &grad_users, true);
    let per_item = cache.plan.split_grad(&cache.outputs, &grad_items, false);
    let mut grads = Vec::new();
    for (((net, outputs), ug), ig) in model
        .networks()
        .into_iter()
        .zip(&cache.outputs)
        .zip(per_user)
        .zip(per_item)
    {
        grads.extend(net.backward(g, outputs, ug, ig)?);
    }
    for (grad, table) in grads.iter_mut().zip(model.tables()) {
        grad.scaled_add(2.0 * l2_lambda, table.values());
    }
    Ok(Gradients(grads))
}

/// Bias-corrected Adam moments for a list of parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m1: Vec<Array2<f64>>,
    pub m2: Vec<Array2<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&s| Array2::zeros(s)).collect::<Vec<_>>();
        Self {
            step: 0,
            m1: zeros(),
            m2: zeros(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let shapes: Vec<_> = model.tables().iter().map(|t| t.values().dim()).collect();
        Self::new(&shapes)
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Array2<f64>],
        grads: &[Array2<f64>],
        lr: f64,
    ) -> Result<(), TrainError> {
        if params.len() != self.m1.len() || grads.len() != self.m1.len() {
            return Err(TrainError::Shape {
                table: params.len().min(grads.len()),
            });
        }
        for (table, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != self.m1[table].dim() || g.dim() != self.m1[table].dim() {
                return Err(TrainError::Shape { table });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (k, p) in params.iter_mut().enumerate() {
            let m1 = &mut self.m1[k];
            let m2 = &mut self.m2[k];
            ndarray::Zip::from(&mut **p)
                .and(m1)
                .and(m2)
                .and(&grads[k])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Applies one update to every table of `model`.
    pub fn step_model(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        lr: f64,
    ) -> Result<(), TrainError> {
        let mut tables = model.tables_mut();
        let mut params: Vec<&mut Array2<f64>> = tables.iter_mut().map(|t| t.values_mut()).collect();
        self.step(&mut params, &grads.0, lr)
    }
}

/// Keeps each edge with probability `1 - p` and rescales kept weights by
/// `1 / (1 - p)`, so propagated values are unbiased.
pub fn edge_dropout<R: Rng + ?Sized>(rng: &mut R, g: &NormalizedGraph, p: f64) -> NormalizedGraph {
    assert!(
        (0.0..1.0).contains(&p),
        "dropout probability must be in [0, 1)"
    );
    if p == 0.0 {
        return g.clone();
    }
    let keep: Vec<bool> = (0..g.nnz()).map(|_| rng.random::<f64>() >= p).collect();
    g.with_edge_mask(&keep, 1.0 / (1.0 - p))
}

/// Produces validation metrics for a frozen model.
pub trait Validator {
    fn validate(&mut self, model: &Model, graph: &NormalizedGraph)
        -> Result<EvalResult, EvalError>;
}

impl<F> Validator for F
where
    F: FnMut(&Model, &NormalizedGraph) -> Result<EvalResult, EvalError>,
{
    fn validate(
        &mut self,
        model: &Model,
        graph: &NormalizedGraph,
    ) -> Result<EvalResult, EvalError> {
        self(model, graph)
    }
}

/// Ranks items by the model's fused embeddings, masks `mask`'s interactions
/// and scores against `targets`.
pub struct HoldoutValidator<'a> {
    pub mask: &'a InteractionGraph,
    pub targets: &'a [Vec<usize>],
    pub k: usize,
}

impl Validator for HoldoutValidator<'_> {
    fn validate(
        &mut self,
        model: &Model,
        graph: &NormalizedGraph,
    ) -> Result<EvalResult, EvalError> {
        let (users, items) = model.embeddings(graph)?;
        crate::eval::evaluate_embeddings(
            &users,
            &items,
            self.mask,
            self.targets,
            self.k,
            crate::exec::Exec::default(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    /// One line per evaluation: `epoch,train_loss,recall@k,ndcg@k`.
    pub fn to_csv(&self) -> String {
        let k = self.entries.first().map_or(20, |e| e.validation.k);
        let mut out = format!("epoch,train_loss,recall@{k},ndcg@{k}\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.8},{:.6},{:.6}\n",
                e.epoch, e.train_loss, e.validation.recall, e.validation.ndcg
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation checkpoint.
    pub model: Model,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub best: EvalResult,
    pub epochs_run: usize,
}

/// Trains `model` on `train` with BPR and Adam, validating every
/// `eval_every` epochs and stopping after `patience` evaluations without a
/// strict recall improvement.
pub fn fit(
    mut model: Model,
    train: &InteractionGraph,
    cfg: &TrainConfig,
    validator: &mut dyn Validator,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.nnz() == 0 {
        return Err(TrainError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full = train.normalize(model.normalization());
    let mut adam = AdamState::for_model(&model);
    let mut log = TrainingLog::default();
    let mut best: Option<(EvalResult, usize, Model)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let triples = epoch_triples(&mut rng, train, cfg.negatives_per_positive)?;
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch, chunk) in triples.chunks(cfg.batch_size).enumerate() {
            let g: Cow<NormalizedGraph> = if cfg.edge_dropout_p > 0.0 {
                Cow::Owned(edge_dropout(&mut rng, &full, cfg.edge_dropout_p))
            } else {
                Cow::Borrowed(&full)
            };
            let cache = model.forward(&g)?;
            let loss = batch_loss(&model, &cache, chunk, cfg.l2_lambda)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch, loss });
            }
            let grads = backward(&g, &model, &cache, chunk, cfg.l2_lambda)?;
            adam.step_model(&mut model, &grads, cfg.learning_rate)?;
            loss_sum += loss;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        log.epoch_losses.push(epoch_loss);
        epochs_run = epoch;
        debug!("epoch {epoch}: loss {epoch_loss:.6}");

        let last = epoch == cfg.max_epochs;
        if epoch % cfg.eval_every == 0 || (last && best.is_none()) {
            let validation = validator.validate(&model, &full)?;
            info!(
                "epoch {epoch}: loss {epoch_loss:.6} recall@{k} {r:.4} ndcg@{k} {n:.4}",
                k = validation.k,
                r = validation.recall,
                n = validation.ndcg
            );
            log.entries.push(LogEntry {
                epoch,
                train_loss: epoch_loss,
                validation,
            });
            let improved = best
                .as_ref()
                .is_none_or(|(b, _, _)| validation.recall > b.recall);
            if improved {
                best = Some((validation, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    let (best, best_epoch, model) = best.expect("at least one evaluation ran");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best,
        epochs_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Normalization;
    use crate::propagation::{EmbeddingTable, FusionSpec, Network, NetworkSpec, Variant};
    use ndarray::array;

    #[test]
    fn loss_fixed_points() {
        assert!((bpr_loss(0.3, 0.3) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bpr_loss(1.0, 0.0) - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!(bpr_loss(50.0, 0.0) < 1e-20);
        assert!((bpr_loss(-50.0, 0.0) - 50.0).abs() < 1e-12);
        assert!(bpr_loss(1e300, -1e300).is_finite());
        assert!(bpr_loss(-1e300, 1e300).is_finite());
    }

    #[test]
    fn negative_forced_to_complement() {
        let g = InteractionGraph::from_edges(1, 3, &[(0, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_ne!(sample_negative(&mut rng, &g, 0).unwrap(), 0);
        }
    }

    #[test]
    fn complement_fallback_is_exact() {
        // one free item among many: exercises the direct complement draw
        let edges: Vec<_> = (0..500).filter(|&i| i != 321).map(|i| (0, i)).collect();
        let g = InteractionGraph::from_edges(1, 500, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(sample_negative(&mut rng, &g, 0).unwrap(), 321);
        }
    }

    #[test]
    fn saturated_user_errors() {
        let g = InteractionGraph::from_edges(1, 2, &[(0, 0), (0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_negative(&mut rng, &g, 0),
            Err(TrainError::NoNegative { user: 0 })
        );
    }

    #[test]
    fn batches_are_deterministic_and_valid() {
        let g =
            InteractionGraph::from_edges(3, 6, &[(0, 0), (0, 4), (1, 2), (2, 5), (2, 1)]).unwrap();
        let draw = |seed| sample_batch(&mut ChaCha8Rng::seed_from_u64(seed), &g, 50, 2).unwrap();
        let a = draw(11);
        assert_eq!(a, draw(11));
        assert_eq!(a.len(), 100);
        assert!(a
            .iter()
            .all(|t| g.contains(t.user, t.pos_item) && !g.contains(t.user, t.neg_item)));
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut state = AdamState::new(&[(1, 1)]);
        let mut p = array![[0.0]];
        state.step(&mut [&mut p], &[array![[1.0]]], 1e-3).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[[0, 0]] - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut state = AdamState::new(&[(2, 2)]);
        let mut p = array![[1.0, -2.0], [3.0, 0.5]];
        let before = p.clone();
        for _ in 0..10 {
            state
                .step(&mut [&mut p], &[Array2::zeros((2, 2))], 1e-2)
                .unwrap();
        }
        assert_eq!(p, before);
        assert!(matches!(
            state.step(&mut [&mut p], &[Array2::zeros((1, 2))], 1e-2),
            Err(TrainError::Shape { table: 0 })
        ));
    }

    #[test]
    fn dropout_zero_is_identity() {
        let g = InteractionGraph::from_edges(2, 2, &[(0, 0), (1, 0), (1, 1)])
            .unwrap()
            .normalize(Normalization::Symmetric);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(edge_dropout(&mut rng, &g, 0.0), g);
    }

    #[test]
    fn empty_batch_gradient_is_regularizer() {
        let g = InteractionGraph::from_edges(2, 3, &[(0, 0), (1, 2)])
            .unwrap()
            .normalize(Normalization::Symmetric);
        let u0 = EmbeddingTable::new(array![[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let net = Network::new(
            NetworkSpec::new(Variant::CfLgcnU, 3),
            Some(u0.clone()),
            None,
        )
        .unwrap();
        let model = Model::single(net, FusionSpec::mean());
        let cache = model.forward(&g).unwrap();
        let grads = backward(&g, &model, &cache, &[], 0.0).unwrap();
        assert!(grads.0[0].iter().all(|&v| v == 0.0));
        let grads = backward(&g, &model, &cache, &[], 0.3).unwrap();
        assert_eq!(grads.0[0], u0.values() * 0.6);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig {
                edge_dropout_p: 1.0,
                ..ok.clone()
            },
            TrainConfig {
                patience: 0,
                ..ok.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn patience_one_stops_at_second_evaluation() {
        let train = InteractionGraph::from_edges(3, 4, &[(0, 0), (1, 1), (2, 2), (2, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(
            NetworkSpec::new(Variant::CfLgcnU, 1),
            3,
            4,
            2,
            0.1,
            &mut rng,
        );
        let cfg = TrainConfig {
            max_epochs: 100,
            eval_every: 1,
            patience: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut calls = 0;
        let mut constant = |_: &Model, _: &NormalizedGraph| {
            calls += 1;
            Ok(EvalResult {
                k: 20,
                recall: 0.5,
                ndcg: 0.5,
                recall_capped: 0.5,
                users_evaluated: 3,
            })
        };
        let out = fit(
            Model::single(net, FusionSpec::mean()),
            &train,
            &cfg,
            &mut constant,
        )
        .unwrap();
        assert_eq!(out.log.entries.len(), 2);
        assert_eq!(out.epochs_run, 2);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(calls, 2);
    }
}
