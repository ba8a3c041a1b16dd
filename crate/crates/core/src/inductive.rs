//! Embeddings for users and items that arrive after training.
//!
//! A trained CF-LGCN-U network has no item parameters, so a new item only
//! needs some interactions to get an embedding: the forward pass is re-run
//! on the extended graph. New users are handled the same way provided the
//! model never fuses its raw layer-0 user table. LightGCN models are made
//! inductive by dropping layer 0 from fusion and propagating zero layer-0
//! rows for the new entities.
//!
//! Parameters are only read. The same substitution is applied to each
//! network of a twin model.

use log::warn;
use ndarray::Array2;
use thiserror::Error;

use crate::graph::{GraphError, InteractionGraph, NormalizedGraph};
use crate::propagation::{
    chain, fuse_many, user_chain_outputs, LayerOutputs, Model, ModelError, Network, Side, Variant,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InductiveError {
    #[error("extended graph does not contain every edge of the base graph")]
    NotExtension,
    #[error("model {side} tables have {found} rows but the base graph has {expected}")]
    BaseShape {
        side: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} networks do not support inductive inference")]
    Unsupported(Variant),
    #[error(
        "{variant} model fuses layer-0 embeddings, which new entities do not have; \
         retrain with include_layer0=false"
    )]
    Layer0 { variant: Variant },
    #[error("model has no propagation layers, nothing remains once layer 0 is dropped")]
    NoLayers,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A frozen model with the graph it was trained on and an extension of it.
///
/// New users occupy indices `base_graph.num_users()..` of the extended
/// graph, new items likewise.
#[derive(Debug, Clone, Copy)]
pub struct InductiveContext<'a> {
    pub model: &'a Model,
    pub base_graph: &'a InteractionGraph,
    pub extended_graph: &'a InteractionGraph,
    /// Recompute existing users' layers on the extended graph when
    /// inferring new items instead of keeping the trained-graph ones.
    pub refresh_user_embeddings: bool,
}

impl<'a> InductiveContext<'a> {
    pub fn new(
        model: &'a Model,
        base_graph: &'a InteractionGraph,
        extended_graph: &'a InteractionGraph,
    ) -> Result<Self, InductiveError> {
        if !extended_graph.contains_graph(base_graph) {
            return Err(InductiveError::NotExtension);
        }
        for net in model.networks() {
            for (table, side, expected) in [
                (net.user_table(), "user", base_graph.num_users()),
                (net.item_table(), "item", base_graph.num_items()),
            ] {
                if let Some(t) = table {
                    if t.rows() != expected {
                        return Err(InductiveError::BaseShape {
                            side,
                            expected,
                            found: t.rows(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            model,
            base_graph,
            extended_graph,
            refresh_user_embeddings: false,
        })
    }

    pub fn with_refresh(mut self, refresh: bool) -> Self {
        self.refresh_user_embeddings = refresh;
        self
    }

    pub fn num_new_users(&self) -> usize {
        self.extended_graph.num_users() - self.base_graph.num_users()
    }

    pub fn num_new_items(&self) -> usize {
        self.extended_graph.num_items() - self.base_graph.num_items()
    }
}

/// Fused embeddings produced by an inference call.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    Items,
    Users,
    All,
}

/// Embeddings for every item of the extended graph; new users are ignored.
///
/// Item layers are recomputed on the extended item set. The returned users
/// are the trained users, from the base graph unless
/// `refresh_user_embeddings` is set.
pub fn infer_new_items(ctx: &InductiveContext<'_>) -> Result<Inferred, InductiveError> {
    infer(ctx, Scope::Items)
}

/// Embeddings for every user of the extended graph; new items are ignored.
///
/// Requires a model without layer-0 user embeddings in its fusion when new
/// users are present.
pub fn infer_new_users(ctx: &InductiveContext<'_>) -> Result<Inferred, InductiveError> {
    infer(ctx, Scope::Users)
}

/// Embeddings for every user and item of the extended graph.
///
/// The first product runs on the extended graph without the new users'
/// rows; later products use the full extended graph.
pub fn infer_all(ctx: &InductiveContext<'_>) -> Result<Inferred, InductiveError> {
    infer(ctx, Scope::All)
}

/// Copy of a LightGCN model whose fusion excludes layer 0.
pub fn make_lightgcn_inductive(model: &Model) -> Result<Model, InductiveError> {
    let mut out = model.clone();
    for net in out.networks_mut() {
        let spec = *net.spec();
        if spec.variant != Variant::LightGcn {
            return Err(InductiveError::Unsupported(spec.variant));
        }
        if spec.num_prop_layers == 0 {
            return Err(InductiveError::NoLayers);
        }
        net.set_spec(spec.with_layer0(false));
    }
    Ok(out)
}

fn infer(ctx: &InductiveContext<'_>, scope: Scope) -> Result<Inferred, InductiveError> {
    let (m0, n0) = (ctx.base_graph.num_users(), ctx.base_graph.num_items());
    let (m1, n1) = (
        ctx.extended_graph.num_users(),
        ctx.extended_graph.num_items(),
    );
    let (m, n) = match scope {
        Scope::Items => (m0, n1),
        Scope::Users => (m1, n0),
        Scope::All => (m1, n1),
    };
    let graph = ctx.extended_graph.restricted(m, n);
    for u in m0..m {
        if graph.user_degree(u) == 0 {
            warn!("new user {u} has no interactions, its embedding is zero");
        }
    }
    for i in n0..n {
        if graph.item_degree(i) == 0 {
            warn!("new item {i} has no interactions, its embedding is zero");
        }
    }
    let outs = ctx
        .model
        .networks()
        .into_iter()
        .map(|net| match net.spec().variant {
            Variant::CfLgcnU => user_network(ctx, net, &graph, scope),
            Variant::LightGcn => lightgcn_network(ctx, net, &graph),
            v => Err(InductiveError::Unsupported(v)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (users, items) = fuse_many(&outs, ctx.model.fusion())?;
    Ok(Inferred { users, items })
}

fn user_network(
    ctx: &InductiveContext<'_>,
    net: &Network,
    graph: &InteractionGraph,
    scope: Scope,
) -> Result<LayerOutputs, InductiveError> {
    let spec = net.spec();
    let m0 = ctx.base_graph.num_users();
    if graph.num_users() > m0 && spec.include_layer0 {
        return Err(InductiveError::Layer0 {
            variant: spec.variant,
        });
    }
    let u0 = net.user_table().expect("user network").values();
    let full = graph.normalize(spec.normalization);
    let layers = spec.num_prop_layers;
    let steps = if scope == Scope::Items && !ctx.refresh_user_embeddings {
        let base = ctx.base_graph.normalize(spec.normalization);
        let fixed = chain(&base, Side::User, u0, layers)?;
        let mut steps = Vec::with_capacity(layers + 1);
        for k in 0..=layers {
            steps.push(if k % 2 == 0 {
                fixed[k].clone()
            } else {
                full.agg_users_to_items(&fixed[k - 1])?
            });
        }
        steps
    } else {
        let first = graph
            .restricted(m0, graph.num_items())
            .normalize(spec.normalization);
        staged_chain(&first, &full, u0, layers)?
    };
    Ok(user_chain_outputs(steps, spec.include_layer0))
}

/// User-started chain whose first product runs on `first`, the rest on `rest`.
fn staged_chain(
    first: &NormalizedGraph,
    rest: &NormalizedGraph,
    u0: &Array2<f64>,
    layers: usize,
) -> Result<Vec<Array2<f64>>, GraphError> {
    let mut steps = Vec::with_capacity(layers + 1);
    steps.push(u0.clone());
    for k in 1..=layers {
        let g = if k == 1 { first } else { rest };
        let prev = &steps[k - 1];
        let next = if k % 2 == 1 {
            g.agg_users_to_items(prev)?
        } else {
            g.agg_items_to_users(prev)?
        };
        steps.push(next);
    }
    Ok(steps)
}

fn lightgcn_network(
    ctx: &InductiveContext<'_>,
    net: &Network,
    graph: &InteractionGraph,
) -> Result<LayerOutputs, InductiveError> {
    let spec = net.spec();
    let extra_users = graph.num_users() - ctx.base_graph.num_users();
    let extra_items = graph.num_items() - ctx.base_graph.num_items();
    if (extra_users > 0 || extra_items > 0) && spec.include_layer0 {
        return Err(InductiveError::Layer0 {
            variant: spec.variant,
        });
    }
    let users = net.user_table().expect("lightgcn").padded(extra_users);
    let items = net.item_table().expect("lightgcn").padded(extra_items);
    let g = graph.normalize(spec.normalization);
    Ok(net.forward_with_tables(&g, Some(&users), Some(&items))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Normalization;
    use crate::propagation::{EmbeddingTable, FusionSpec, NetworkSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> InteractionGraph {
        InteractionGraph::from_edges(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2), (1, 2)]).unwrap()
    }

    fn u_model(layers: usize, layer0: bool, seed: u64) -> Model {
        let spec = NetworkSpec::new(Variant::CfLgcnU, layers).with_layer0(layer0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::single(
            Network::init(spec, 3, 3, 4, 1.0, &mut rng),
            FusionSpec::mean(),
        )
    }

    #[test]
    fn unchanged_graph_is_bitwise_transductive() {
        let g = base();
        for model in [
            u_model(1, true, 0),
            u_model(2, false, 1),
            u_model(3, true, 2),
        ] {
            let expected = model
                .embeddings(&g.normalize(model.normalization()))
                .unwrap();
            let ctx = InductiveContext::new(&model, &g, &g).unwrap();
            for refresh in [false, true] {
                let ctx = ctx.with_refresh(refresh);
                for got in [
                    infer_new_items(&ctx),
                    infer_new_users(&ctx),
                    infer_all(&ctx),
                ] {
                    let got = got.unwrap();
                    assert_eq!((got.users, got.items), expected);
                }
            }
        }
    }

    #[test]
    fn one_layer_new_item_is_normalized_user_sum() {
        let g = base();
        let model = u_model(1, true, 3);
        let ext = g.extend(&[(0, 3), (2, 3)], 3, 4).unwrap();
        let ctx = InductiveContext::new(&model, &g, &ext).unwrap();
        let got = infer_new_items(&ctx).unwrap();
        let u0 = model.networks()[0].user_table().unwrap().values();
        // deg(item 3) = 2, user 0 now has 3 items, user 2 has 2
        let w0 = 1.0 / (2.0f64 * 3.0).sqrt();
        let w2 = 1.0 / (2.0f64 * 2.0).sqrt();
        let expected = &u0.row(0) * w0 + &u0.row(2) * w2;
        for (a, b) in got.items.row(3).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_item_gets_identical_embedding() {
        let g = base();
        let model = u_model(3, true, 4);
        let ext = g.extend(&[(0, 3), (1, 3)], 3, 4).unwrap();
        let ctx = InductiveContext::new(&model, &g, &ext).unwrap();
        for refresh in [false, true] {
            let got = infer_new_items(&ctx.with_refresh(refresh)).unwrap();
            assert_eq!(got.items.row(3), got.items.row(1));
        }
    }

    #[test]
    fn duplicate_user_gets_identical_embedding() {
        let g = base();
        let model = u_model(2, false, 5);
        let ext = g.extend(&[(3, 1), (3, 2)], 4, 3).unwrap();
        let ctx = InductiveContext::new(&model, &g, &ext).unwrap();
        let got = infer_new_users(&ctx).unwrap();
        assert_eq!(got.users.nrows(), 4);
        assert_eq!(got.users.row(3), got.users.row(1));
    }

    #[test]
    fn layer0_models_cannot_take_new_users() {
        let g = base();
        let model = u_model(2, true, 6);
        let ext = g.extend(&[(3, 0)], 4, 3).unwrap();
        let ctx = InductiveContext::new(&model, &g, &ext).unwrap();
        assert!(matches!(
            infer_new_users(&ctx),
            Err(InductiveError::Layer0 { .. })
        ));
        assert!(matches!(
            infer_all(&ctx),
            Err(InductiveError::Layer0 { .. })
        ));
        // new users are ignored when inferring items
        assert!(infer_new_items(&ctx).is_ok());
    }

    #[test]
    fn isolated_new_item_is_zero() {
        let g = base();
        let model = u_model(1, true, 7);
        let ext = g.extend(&[], 3, 4).unwrap();
        let got = infer_new_items(&InductiveContext::new(&model, &g, &ext).unwrap()).unwrap();
        assert!(got.items.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_extensions() {
        let g = base();
        let model = u_model(1, true, 8);
        let smaller = g.filter_edges(|u, _| u != 0);
        assert_eq!(
            InductiveContext::new(&model, &g, &smaller).unwrap_err(),
            InductiveError::NotExtension
        );
        let other = InteractionGraph::from_edges(4, 3, &[(0, 0)]).unwrap();
        assert!(matches!(
            InductiveContext::new(&model, &other, &other.clone()),
            Err(InductiveError::BaseShape { side: "user", .. })
        ));
    }

    #[test]
    fn lightgcn_conversion() {
        let g = base();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mf = Model::single(
            Network::init(
                NetworkSpec::new(Variant::LightGcn, 0),
                3,
                3,
                2,
                1.0,
                &mut rng,
            ),
            FusionSpec::mean(),
        );
        assert_eq!(make_lightgcn_inductive(&mf), Err(InductiveError::NoLayers));
        assert!(matches!(
            make_lightgcn_inductive(&u_model(1, true, 0)),
            Err(InductiveError::Unsupported(Variant::CfLgcnU))
        ));

        let spec = NetworkSpec::new(Variant::LightGcn, 1).with_normalization(Normalization::Left);
        let lgcn = Model::single(
            Network::init(spec, 3, 3, 2, 1.0, &mut rng),
            FusionSpec::mean(),
        );
        let ind = make_lightgcn_inductive(&lgcn).unwrap();
        assert!(!ind.spec().include_layer0);
        let ext = g.extend(&[(0, 3), (2, 3)], 3, 4).unwrap();
        let ctx = InductiveContext::new(&ind, &g, &ext).unwrap();
        let got = infer_new_items(&ctx).unwrap();
        let u0 = ind.networks()[0].user_table().unwrap().values();
        let expected = (&u0.row(0) + &u0.row(2)) * 0.5;
        for (a, b) in got.items.row(3).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            infer_new_items(&InductiveContext::new(&lgcn, &g, &ext).unwrap()),
            Err(InductiveError::Layer0 { .. })
        ));
    }

    #[test]
    fn parameters_are_untouched() {
        let g = base();
        let model = u_model(2, false, 10);
        let before: Vec<EmbeddingTable> = model.tables().into_iter().cloned().collect();
        let ext = g.extend(&[(3, 0), (0, 3)], 4, 4).unwrap();
        infer_all(&InductiveContext::new(&model, &g, &ext).unwrap()).unwrap();
        let after: Vec<EmbeddingTable> = model.tables().into_iter().cloned().collect();
        assert_eq!(before, after);
    }
}
