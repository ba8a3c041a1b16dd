//! Forward computation for the light propagation networks.
//!
//! * `CfLgcnU` learns only user embeddings `U⁽⁰⁾` and alternates
//!   `R̃ᵀ`, `R̃`, `R̃ᵀ`, … starting from them. Item embeddings are derived.
//! * `CfLgcnE` is the mirror: learns `E⁽⁰⁾`, alternates `R̃`, `R̃ᵀ`, ….
//! * `LightGcn` learns both tables and propagates them as a coupled pair.
//!   With zero layers it is plain matrix factorization.
//!
//! Multi-hop similarity matrices (`RRᵀ`, `RᵀR`) are only ever applied as
//! chains of the two sparse products in [`crate::graph`].

use std::ops::Range;

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{GraphError, Normalization, NormalizedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("embedding table must have dim > 0")]
    ZeroDim,
    #[error("embedding table contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{variant} network requires {what}")]
    MissingTable {
        variant: Variant,
        what: &'static str,
    },
    #[error("{variant} network does not take {what}")]
    UnexpectedTable {
        variant: Variant,
        what: &'static str,
    },
    #[error("embedding dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("{side} fusion has {sets} embedding sets but {weights} weights")]
    WeightCount {
        side: &'static str,
        sets: usize,
        weights: usize,
    },
    #[error("no {side} embedding sets left to fuse; add a propagation layer or keep layer 0")]
    NoSets { side: &'static str },
    #[error("twin networks must share the variant family, got {0} and {1}")]
    TwinVariant(Variant, Variant),
    #[error("model has {expected} parameter tables, got {found}")]
    ParameterCount { expected: usize, found: usize },
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
}

/// Dense latent vectors, one row per user or item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable(Array2<f64>);

impl EmbeddingTable {
    pub fn new(values: Array2<f64>) -> Result<Self, ModelError> {
        if values.ncols() == 0 {
            return Err(ModelError::ZeroDim);
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFinite { row, col });
        }
        Ok(Self(values))
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self(Array2::zeros((rows, dim)))
    }

    /// Zero-mean Gaussian entries with standard deviation `std`.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        assert!(dim > 0, "dim must be positive");
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self(Array2::from_shape_simple_fn((rows, dim), || {
            normal.sample(rng)
        }))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Copy with `extra` zero rows appended.
    pub fn padded(&self, extra: usize) -> Self {
        let mut out = Array2::zeros((self.rows() + extra, self.dim()));
        out.slice_mut(s![..self.rows(), ..]).assign(&self.0);
        Self(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    CfLgcnU,
    CfLgcnE,
    LightGcn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CfLgcnU => "cf-lgcn-u",
            Variant::CfLgcnE => "cf-lgcn-e",
            Variant::LightGcn => "lightgcn",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cf-lgcn-u" | "u" => Ok(Variant::CfLgcnU),
            "cf-lgcn-e" | "e" => Ok(Variant::CfLgcnE),
            "lightgcn" => Ok(Variant::LightGcn),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

/// Configuration of one propagation network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub variant: Variant,
    /// Number of sparse products applied. Zero is allowed.
    pub num_prop_layers: usize,
    pub normalization: Normalization,
    /// Whether the learned layer-0 table enters fusion (`α₀ ≠ 0`).
    pub include_layer0: bool,
}

impl NetworkSpec {
    pub fn new(variant: Variant, num_prop_layers: usize) -> Self {
        Self {
            variant,
            num_prop_layers,
            normalization: Normalization::Symmetric,
            include_layer0: true,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_layer0(mut self, include: bool) -> Self {
        self.include_layer0 = include;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    #[default]
    Mean,
    Concat,
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(FusionMode::Mean),
            "concat" => Ok(FusionMode::Concat),
            other => Err(format!("unknown fusion mode `{other}`")),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Mean => "mean",
            FusionMode::Concat => "concat",
        })
    }
}

/// How layer outputs are combined into final embeddings.
///
/// Mean mode takes a weighted sum with per-side weights (uniform when
/// unset). Concat mode stacks sets column-wise; when a network has more sets
/// on one side, its earliest surplus sets on that side are dropped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionSpec {
    pub mode: FusionMode,
    pub user_weights: Option<Vec<f64>>,
    pub item_weights: Option<Vec<f64>>,
}

impl FusionSpec {
    pub fn mean() -> Self {
        Self::default()
    }

    pub fn concat() -> Self {
        Self {
            mode: FusionMode::Concat,
            ..Self::default()
        }
    }

    /// Mean fusion with the same weights on both sides.
    pub fn weighted(weights: Vec<f64>) -> Self {
        Self {
            mode: FusionMode::Mean,
            user_weights: Some(weights.clone()),
            item_weights: Some(weights),
        }
    }
}

/// Ordered outputs of one network. `user_layers[k]` is the number of
/// products that produced `user_sets[k]`; likewise for items.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs {
    pub user_sets: Vec<Array2<f64>>,
    pub item_sets: Vec<Array2<f64>>,
    pub user_layers: Vec<usize>,
    pub item_layers: Vec<usize>,
}

impl LayerOutputs {
    fn empty() -> Self {
        Self {
            user_sets: Vec::new(),
            item_sets: Vec::new(),
            user_layers: Vec::new(),
            item_layers: Vec::new(),
        }
    }

    fn push_user(&mut self, layer: usize, set: Array2<f64>) {
        self.user_layers.push(layer);
        self.user_sets.push(set);
    }

    fn push_item(&mut self, layer: usize, set: Array2<f64>) {
        self.item_layers.push(layer);
        self.item_sets.push(set);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    User,
    Item,
}

impl Side {
    fn flip(self) -> Self {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }

    fn rows(self, g: &NormalizedGraph) -> usize {
        match self {
            Side::User => g.num_users(),
            Side::Item => g.num_items(),
        }
    }
}

/// `[x₀, x₁, …, x_steps]` where each step aggregates onto the other side.
pub(crate) fn chain(
    g: &NormalizedGraph,
    start: Side,
    x0: &Array2<f64>,
    steps: usize,
) -> Result<Vec<Array2<f64>>, GraphError> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut side = start;
    for _ in 0..steps {
        let prev = out.last().expect("non-empty");
        let next = match side {
            Side::User => g.agg_users_to_items(prev)?,
            Side::Item => g.agg_items_to_users(prev)?,
        };
        out.push(next);
        side = side.flip();
    }
    Ok(out)
}

/// Reverse-mode pass through [`chain`]: given gradients for some steps,
/// returns the gradient with respect to `x₀`.
pub(crate) fn chain_backward(
    g: &NormalizedGraph,
    start: Side,
    steps: usize,
    dim: usize,
    mut grads: Vec<Option<Array2<f64>>>,
) -> Result<Array2<f64>, GraphError> {
    debug_assert_eq!(grads.len(), steps + 1);
    let side_at = |k: usize| {
        if k.is_multiple_of(2) {
            start
        } else {
            start.flip()
        }
    };
    let mut acc = grads[steps]
        .take()
        .unwrap_or_else(|| Array2::zeros((side_at(steps).rows(g), dim)));
    for k in (1..=steps).rev() {
        // step k maps side_at(k-1) onto side_at(k)
        acc = match side_at(k) {
            Side::Item => g.adjoint_users_to_items(&acc)?,
            Side::User => g.adjoint_items_to_users(&acc)?,
        };
        if let Some(gk) = grads[k - 1].take() {
            acc += &gk;
        }
    }
    Ok(acc)
}

fn check_rows(table: &EmbeddingTable, expected: usize) -> Result<(), ModelError> {
    if table.rows() != expected {
        return Err(GraphError::DimensionMismatch {
            expected,
            found: table.rows(),
        }
        .into());
    }
    Ok(())
}

/// User-only network. Outputs `user_sets = [U⁽⁰⁾, U⁽²⁾, …]` (layer 0 only
/// when `include_layer0`) and `item_sets = [E⁽¹⁾, E⁽³⁾, …]`.
pub fn forward_cf_lgcn_u(
    g: &NormalizedGraph,
    u0: &EmbeddingTable,
    spec: &NetworkSpec,
) -> Result<LayerOutputs, ModelError> {
    check_rows(u0, g.num_users())?;
    let steps = chain(g, Side::User, u0.values(), spec.num_prop_layers)?;
    Ok(user_chain_outputs(steps, spec.include_layer0))
}

/// Sorts the steps of a chain started on users into layer outputs.
pub(crate) fn user_chain_outputs(steps: Vec<Array2<f64>>, include_layer0: bool) -> LayerOutputs {
    let mut out = LayerOutputs::empty();
    for (k, x) in steps.into_iter().enumerate() {
        match k % 2 {
            0 if k == 0 && !include_layer0 => {}
            0 => out.push_user(k, x),
            _ => out.push_item(k, x),
        }
    }
    out
}

/// Item-only network, the mirror of [`forward_cf_lgcn_u`].
pub fn forward_cf_lgcn_e(
    g: &NormalizedGraph,
    e0: &EmbeddingTable,
    spec: &NetworkSpec,
) -> Result<LayerOutputs, ModelError> {
    check_rows(e0, g.num_items())?;
    let steps = chain(g, Side::Item, e0.values(), spec.num_prop_layers)?;
    let mut out = LayerOutputs::empty();
    for (k, x) in steps.into_iter().enumerate() {
        match k % 2 {
            0 if k == 0 && !spec.include_layer0 => {}
            0 => out.push_item(k, x),
            _ => out.push_user(k, x),
        }
    }
    Ok(out)
}

/// LightGCN: `U⁽ˡ⁺¹⁾ = R̃E⁽ˡ⁾`, `E⁽ˡ⁺¹⁾ = R̃ᵀU⁽ˡ⁾` for `l < L`. Returns
/// `L + 1` sets per side, or `L` without layer 0.
pub fn forward_lightgcn(
    g: &NormalizedGraph,
    u0: &EmbeddingTable,
    e0: &EmbeddingTable,
    spec: &NetworkSpec,
) -> Result<LayerOutputs, ModelError> {
    check_rows(u0, g.num_users())?;
    check_rows(e0, g.num_items())?;
    if u0.dim() != e0.dim() {
        return Err(ModelError::DimMismatch(u0.dim(), e0.dim()));
    }
    let mut out = LayerOutputs::empty();
    let mut users = u0.values().clone();
    let mut items = e0.values().clone();
    for layer in 0..=spec.num_prop_layers {
        if layer > 0 {
            let next_users = g.agg_items_to_users(&items)?;
            let next_items = g.agg_users_to_items(&users)?;
            users = next_users;
            items = next_items;
        }
        if layer > 0 || spec.include_layer0 {
            out.push_user(layer, users.clone());
            out.push_item(layer, items.clone());
        }
    }
    Ok(out)
}

/// One network together with its learnable tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    users: Option<EmbeddingTable>,
    items: Option<EmbeddingTable>,
}

impl Network {
    pub fn new(
        spec: NetworkSpec,
        users: Option<EmbeddingTable>,
        items: Option<EmbeddingTable>,
    ) -> Result<Self, ModelError> {
        let variant = spec.variant;
        let (need_users, need_items) = match variant {
            Variant::CfLgcnU => (true, false),
            Variant::CfLgcnE => (false, true),
            Variant::LightGcn => (true, true),
        };
        for (need, have, what) in [
            (need_users, users.is_some(), "a user table"),
            (need_items, items.is_some(), "an item table"),
        ] {
            match (need, have) {
                (true, false) => return Err(ModelError::MissingTable { variant, what }),
                (false, true) => return Err(ModelError::UnexpectedTable { variant, what }),
                _ => {}
            }
        }
        if let (Some(u), Some(e)) = (&users, &items) {
            if u.dim() != e.dim() {
                return Err(ModelError::DimMismatch(u.dim(), e.dim()));
            }
        }
        Ok(Self { spec, users, items })
    }

    /// Gaussian-initialized network for an `num_users x num_items` graph.
    pub fn init<R: Rng + ?Sized>(
        spec: NetworkSpec,
        num_users: usize,
        num_items: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let users = matches!(spec.variant, Variant::CfLgcnU | Variant::LightGcn)
            .then(|| EmbeddingTable::gaussian(num_users, dim, std, rng));
        let items = matches!(spec.variant, Variant::CfLgcnE | Variant::LightGcn)
            .then(|| EmbeddingTable::gaussian(num_items, dim, std, rng));
        Self::new(spec, users, items).expect("tables match the variant")
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn user_table(&self) -> Option<&EmbeddingTable> {
        self.users.as_ref()
    }

    pub fn item_table(&self) -> Option<&EmbeddingTable> {
        self.items.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.users
            .as_ref()
            .or(self.items.as_ref())
            .map(EmbeddingTable::dim)
            .expect("every network owns a table")
    }

    /// Learnable tables, users first.
    pub fn tables(&self) -> Vec<&EmbeddingTable> {
        self.users.iter().chain(self.items.iter()).collect()
    }

    pub(crate) fn tables_mut(&mut self) -> Vec<&mut EmbeddingTable> {
        self.users.iter_mut().chain(self.items.iter_mut()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tables().iter().map(|t| t.rows() * t.dim()).sum()
    }

    pub(crate) fn set_spec(&mut self, spec: NetworkSpec) {
        self.spec = spec;
    }

    pub fn forward(&self, g: &NormalizedGraph) -> Result<LayerOutputs, ModelError> {
        self.forward_with_tables(g, self.users.as_ref(), self.items.as_ref())
    }

    /// Forward pass with substitute tables (e.g. zero-padded for inference).
    pub(crate) fn forward_with_tables(
        &self,
        g: &NormalizedGraph,
        users: Option<&EmbeddingTable>,
        items: Option<&EmbeddingTable>,
    ) -> Result<LayerOutputs, ModelError> {
        match self.spec.variant {
            Variant::CfLgcnU => forward_cf_lgcn_u(g, users.expect("validated"), &self.spec),
            Variant::CfLgcnE => forward_cf_lgcn_e(g, items.expect("validated"), &self.spec),
            Variant::LightGcn => forward_lightgcn(
                g,
                users.expect("validated"),
                items.expect("validated"),
                &self.spec,
            ),
        }
    }

    /// Gradients of the tables given gradients of every output set
    /// (aligned with `outputs`; `None` means zero).
    pub(crate) fn backward(
        &self,
        g: &NormalizedGraph,
        outputs: &LayerOutputs,
        user_grads: Vec<Option<Array2<f64>>>,
        item_grads: Vec<Option<Array2<f64>>>,
    ) -> Result<Vec<Array2<f64>>, GraphError> {
        let steps = self.spec.num_prop_layers;
        let d = self.dim();
        // Per-chain step gradients. The chain starting on users places even
        // steps on users; the chain starting on items places odd steps on users.
        let mut from_users: Vec<Option<Array2<f64>>> = vec![None; steps + 1];
        let mut from_items: Vec<Option<Array2<f64>>> = vec![None; steps + 1];
        let mut route = |layer: usize, on_user_side: bool, grad: Option<Array2<f64>>| {
            let user_chain = layer.is_multiple_of(2) == on_user_side;
            let slot = if user_chain {
                &mut from_users[layer]
            } else {
                &mut from_items[layer]
            };
            if let Some(gr) = grad {
                match slot {
                    Some(acc) => *acc += &gr,
                    None => *slot = Some(gr),
                }
            }
        };
        for (layer, grad) in outputs.user_layers.iter().zip(user_grads) {
            route(*layer, true, grad);
        }
        for (layer, grad) in outputs.item_layers.iter().zip(item_grads) {
            route(*layer, false, grad);
        }
        let mut out = Vec::new();
        if self.users.is_some() {
            out.push(chain_backward(g, Side::User, steps, d, from_users)?);
        }
        if self.items.is_some() {
            out.push(chain_backward(g, Side::Item, steps, d, from_items)?);
        }
        Ok(out)
    }
}

/// Two user-embedding networks whose layer outputs are fused together.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinModel {
    pub net_a: Network,
    pub net_b: Network,
    pub fusion: FusionSpec,
}

impl TwinModel {
    pub fn new(net_a: Network, net_b: Network, fusion: FusionSpec) -> Result<Self, ModelError> {
        if net_a.spec.variant != net_b.spec.variant {
            return Err(ModelError::TwinVariant(
                net_a.spec.variant,
                net_b.spec.variant,
            ));
        }
        if net_a.dim() != net_b.dim() {
            return Err(ModelError::DimMismatch(net_a.dim(), net_b.dim()));
        }
        Ok(Self {
            net_a,
            net_b,
            fusion,
        })
    }
}

/// Any trainable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single { net: Network, fusion: FusionSpec },
    Twin(TwinModel),
}

impl Model {
    pub fn single(net: Network, fusion: FusionSpec) -> Self {
        Model::Single { net, fusion }
    }

    pub fn twin(net_a: Network, net_b: Network, fusion: FusionSpec) -> Result<Self, ModelError> {
        TwinModel::new(net_a, net_b, fusion).map(Model::Twin)
    }

    pub fn networks(&self) -> Vec<&Network> {
        match self {
            Model::Single { net, .. } => vec![net],
            Model::Twin(t) => vec![&t.net_a, &t.net_b],
        }
    }

    pub(crate) fn networks_mut(&mut self) -> Vec<&mut Network> {
        match self {
            Model::Single { net, .. } => vec![net],
            Model::Twin(t) => vec![&mut t.net_a, &mut t.net_b],
        }
    }

    pub fn fusion(&self) -> &FusionSpec {
        match self {
            Model::Single { fusion, .. } => fusion,
            Model::Twin(t) => &t.fusion,
        }
    }

    pub fn is_twin(&self) -> bool {
        matches!(self, Model::Twin(_))
    }

    /// Spec of the first network. Twin networks share the variant family.
    pub fn spec(&self) -> &NetworkSpec {
        self.networks()[0].spec()
    }

    pub fn normalization(&self) -> Normalization {
        self.spec().normalization
    }

    pub fn dim(&self) -> usize {
        self.networks()[0].dim()
    }

    /// All learnable tables in a fixed order (network by network, users first).
    pub fn tables(&self) -> Vec<&EmbeddingTable> {
        self.networks()
            .into_iter()
            .flat_map(Network::tables)
            .collect()
    }

    pub(crate) fn tables_mut(&mut self) -> Vec<&mut EmbeddingTable> {
        self.networks_mut()
            .into_iter()
            .flat_map(Network::tables_mut)
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.networks().iter().map(|n| n.num_parameters()).sum()
    }

    /// Copy with every table replaced, in [`Model::tables`] order.
    pub fn with_parameters(&self, values: Vec<Array2<f64>>) -> Result<Model, ModelError> {
        let mut out = self.clone();
        let tables = out.tables_mut();
        if tables.len() != values.len() {
            return Err(ModelError::ParameterCount {
                expected: tables.len(),
                found: values.len(),
            });
        }
        for (table, v) in tables.into_iter().zip(values) {
            if v.dim() != table.values().dim() {
                return Err(ModelError::DimMismatch(table.values().len(), v.len()));
            }
            *table = EmbeddingTable::new(v)?;
        }
        Ok(out)
    }

    /// Sum of squared parameter entries.
    pub fn squared_norm(&self) -> f64 {
        self.tables()
            .iter()
            .map(|t| t.values().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn forward(&self, g: &NormalizedGraph) -> Result<ForwardCache, ModelError> {
        let outputs = self
            .networks()
            .iter()
            .map(|n| n.forward(g))
            .collect::<Result<Vec<_>, _>>()?;
        ForwardCache::from_outputs(outputs, self.fusion(), self.dim())
    }

    /// Fused `(user, item)` embeddings.
    pub fn embeddings(
        &self,
        g: &NormalizedGraph,
    ) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        let cache = self.forward(g)?;
        Ok((cache.users, cache.items))
    }
}

/// One contribution to a fused matrix: set `set` of network `net`, scaled
/// by `coef` and written at column offset `col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Block {
    pub net: usize,
    pub set: usize,
    pub coef: f64,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FusionPlan {
    pub users: Vec<Block>,
    pub items: Vec<Block>,
    pub out_dim: usize,
    pub dim: usize,
}

impl FusionPlan {
    pub(crate) fn new(
        outputs: &[LayerOutputs],
        fusion: &FusionSpec,
        dim: usize,
    ) -> Result<Self, ModelError> {
        let (users, items, out_dim) = match fusion.mode {
            FusionMode::Mean => {
                let side = |counts: Vec<usize>, weights: &Option<Vec<f64>>, name| {
                    let total: usize = counts.iter().sum();
                    if total == 0 {
                        return Err(ModelError::NoSets { side: name });
                    }
                    let weights = match weights {
                        Some(w) if w.len() != total => {
                            return Err(ModelError::WeightCount {
                                side: name,
                                sets: total,
                                weights: w.len(),
                            })
                        }
                        Some(w) => w.clone(),
                        None => vec![1.0 / total as f64; total],
                    };
                    let refs = counts
                        .iter()
                        .enumerate()
                        .flat_map(|(net, &c)| (0..c).map(move |set| (net, set)));
                    Ok(refs
                        .zip(weights)
                        .map(|((net, set), coef)| Block {
                            net,
                            set,
                            coef,
                            col: 0,
                        })
                        .collect::<Vec<_>>())
                };
                let users = side(
                    outputs.iter().map(|o| o.user_sets.len()).collect(),
                    &fusion.user_weights,
                    "user",
                )?;
                let items = side(
                    outputs.iter().map(|o| o.item_sets.len()).collect(),
                    &fusion.item_weights,
                    "item",
                )?;
                (users, items, dim)
            }
            FusionMode::Concat => {
                let mut users = Vec::new();
                let mut items = Vec::new();
                let mut col = 0;
                for (net, o) in outputs.iter().enumerate() {
                    let (nu, ni) = (o.user_sets.len(), o.item_sets.len());
                    let keep = nu.min(ni);
                    if keep == 0 {
                        let side = if nu == 0 { "user" } else { "item" };
                        return Err(ModelError::NoSets { side });
                    }
                    for k in 0..keep {
                        users.push(Block {
                            net,
                            set: nu - keep + k,
                            coef: 1.0,
                            col,
                        });
                        items.push(Block {
                            net,
                            set: ni - keep + k,
                            coef: 1.0,
                            col,
                        });
                        col += dim;
                    }
                }
                (users, items, col)
            }
        };
        Ok(Self {
            users,
            items,
            out_dim,
            dim,
        })
    }

    fn apply(&self, outputs: &[LayerOutputs], rows: usize, users: bool) -> Array2<f64> {
        let blocks = if users { &self.users } else { &self.items };
        let mut out = Array2::zeros((rows, self.out_dim));
        for b in blocks {
            let set = if users {
                &outputs[b.net].user_sets[b.set]
            } else {
                &outputs[b.net].item_sets[b.set]
            };
            out.slice_mut(s![.., b.col..b.col + self.dim])
                .scaled_add(b.coef, set);
        }
        out
    }

    /// Splits a gradient of a fused matrix into per-network, per-set
    /// gradients. Sets that were not fused get `None`.
    pub(crate) fn split_grad(
        &self,
        outputs: &[LayerOutputs],
        grad: &Array2<f64>,
        users: bool,
    ) -> Vec<Vec<Option<Array2<f64>>>> {
        let blocks = if users { &self.users } else { &self.items };
        let mut per_net: Vec<Vec<Option<Array2<f64>>>> = outputs
            .iter()
            .map(|o| {
                let n = if users {
                    o.user_sets.len()
                } else {
                    o.item_sets.len()
                };
                vec![None; n]
            })
            .collect();
        for b in blocks {
            let g = grad.slice(s![.., b.col..b.col + self.dim]).to_owned() * b.coef;
            per_net[b.net][b.set] = Some(g);
        }
        per_net
    }

    fn side_range(&self, block: &Block) -> Range<usize> {
        block.col..block.col + self.dim
    }
}

/// Cached forward pass: every layer output plus the fused embeddings.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub outputs: Vec<LayerOutputs>,
    pub users: Array2<f64>,
    pub items: Array2<f64>,
    pub(crate) plan: FusionPlan,
}

impl ForwardCache {
    fn from_outputs(
        outputs: Vec<LayerOutputs>,
        fusion: &FusionSpec,
        dim: usize,
    ) -> Result<Self, ModelError> {
        let plan = FusionPlan::new(&outputs, fusion, dim)?;
        let rows = |users: bool| {
            outputs
                .iter()
                .find_map(|o| {
                    let sets = if users { &o.user_sets } else { &o.item_sets };
                    sets.first().map(|s| s.nrows())
                })
                .unwrap_or(0)
        };
        let users = plan.apply(&outputs, rows(true), true);
        let items = plan.apply(&outputs, rows(false), false);
        Ok(Self {
            outputs,
            users,
            items,
            plan,
        })
    }

    /// Column range of each fused user block, for inspection.
    pub fn user_block_columns(&self) -> Vec<Range<usize>> {
        self.plan
            .users
            .iter()
            .map(|b| self.plan.side_range(b))
            .collect()
    }
}

/// Fuses one network's outputs into `(users, items)`.
pub fn fuse(
    outs: &LayerOutputs,
    fusion: &FusionSpec,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    fuse_many(std::slice::from_ref(outs), fusion)
}

/// Fuses the union of several networks' outputs.
pub fn fuse_many(
    outs: &[LayerOutputs],
    fusion: &FusionSpec,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let dim = outs
        .iter()
        .flat_map(|o| o.user_sets.iter().chain(&o.item_sets))
        .map(|s| s.ncols())
        .next()
        .ok_or(ModelError::NoSets { side: "user" })?;
    let cache = ForwardCache::from_outputs(outs.to_vec(), fusion, dim)?;
    Ok((cache.users, cache.items))
}

/// Twin forward: both networks, then shared fusion over all their sets.
pub fn twin_forward(
    g: &NormalizedGraph,
    model: &TwinModel,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let outs = [model.net_a.forward(g)?, model.net_b.forward(g)?];
    let cache = ForwardCache::from_outputs(outs.to_vec(), &model.fusion, model.net_a.dim())?;
    Ok((cache.users, cache.items))
}

fn check_dims(users: &Array2<f64>, items: &Array2<f64>) -> Result<(), ModelError> {
    if users.ncols() != items.ncols() {
        return Err(ModelError::DimMismatch(users.ncols(), items.ncols()));
    }
    Ok(())
}

/// Full score matrix `Z = U Eᵀ`. Prefer [`score_row`] for large graphs.
pub fn score_all(users: &Array2<f64>, items: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
    check_dims(users, items)?;
    Ok(users.dot(&items.t()))
}

/// Scores of one user against every item.
pub fn score_row(
    users: &Array2<f64>,
    items: &Array2<f64>,
    user: usize,
) -> Result<Vec<f64>, ModelError> {
    check_dims(users, items)?;
    if user >= users.nrows() {
        return Err(ModelError::Index {
            index: user,
            len: users.nrows(),
        });
    }
    Ok(items.dot(&users.row(user)).to_vec())
}

pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `(z_pos, z_neg)` for each `(user, pos_item, neg_item)` triple.
pub fn score_triples(
    users: &Array2<f64>,
    items: &Array2<f64>,
    triples: &[(usize, usize, usize)],
) -> Result<Vec<(f64, f64)>, ModelError> {
    check_dims(users, items)?;
    triples
        .iter()
        .map(|&(u, i, j)| {
            for (index, len) in [(u, users.nrows()), (i, items.nrows()), (j, items.nrows())] {
                if index >= len {
                    return Err(ModelError::Index { index, len });
                }
            }
            Ok((
                dot(users.row(u), items.row(i)),
                dot(users.row(u), items.row(j)),
            ))
        })
        .collect()
}
