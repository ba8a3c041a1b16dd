//! Bipartite user-item interaction graph and its degree-normalized form.
//!
//! The graph is stored twice: row-major (per user) and column-major (per
//! item). Every propagation in the crate is one of two directional
//! sparse-dense products over these views; user-user or item-item products
//! are never formed.

use ndarray::Array2;
use thiserror::Error;

use crate::exec::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({user}, {item}) out of range for a {num_users}x{num_items} graph")]
    IndexOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
    #[error("cannot shrink graph from {old_users}x{old_items} to {new_users}x{new_items}")]
    Shrink {
        old_users: usize,
        old_items: usize,
        new_users: usize,
        new_items: usize,
    },
    #[error("dimension mismatch: expected {expected} rows, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Binary interaction matrix `R` with `num_users` rows and `num_items` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_ptr: Vec<usize>,
    user_items: Vec<usize>,
    item_ptr: Vec<usize>,
    item_users: Vec<usize>,
}

fn compressed(rows: usize, mut pairs: Vec<(usize, usize)>) -> (Vec<usize>, Vec<usize>) {
    pairs.sort_unstable();
    pairs.dedup();
    let mut ptr = vec![0usize; rows + 1];
    for &(r, _) in &pairs {
        ptr[r + 1] += 1;
    }
    for r in 0..rows {
        ptr[r + 1] += ptr[r];
    }
    (ptr, pairs.into_iter().map(|(_, c)| c).collect())
}

impl InteractionGraph {
    /// Builds a graph from `(user, item)` pairs. Duplicates are collapsed.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        if let Some(&(user, item)) = edges
            .iter()
            .find(|&&(u, i)| u >= num_users || i >= num_items)
        {
            return Err(GraphError::IndexOutOfRange {
                user,
                item,
                num_users,
                num_items,
            });
        }
        let (user_ptr, user_items) = compressed(num_users, edges.to_vec());
        let (item_ptr, item_users) =
            compressed(num_items, edges.iter().map(|&(u, i)| (i, u)).collect());
        Ok(Self {
            num_users,
            num_items,
            user_ptr,
            user_items,
            item_ptr,
            item_users,
        })
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self::from_edges(num_users, num_items, &[]).expect("empty graph is valid")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of distinct interactions.
    pub fn nnz(&self) -> usize {
        self.user_items.len()
    }

    /// Items of `user`, ascending.
    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.user_items[self.user_ptr[user]..self.user_ptr[user + 1]]
    }

    /// Users of `item`, ascending.
    pub fn users_of(&self, item: usize) -> &[usize] {
        &self.item_users[self.item_ptr[item]..self.item_ptr[item + 1]]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_ptr[user + 1] - self.user_ptr[user]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_ptr[item + 1] - self.item_ptr[item]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        user < self.num_users && self.items_of(user).binary_search(&item).is_ok()
    }

    /// All edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.items_of(u).iter().map(move |&i| (u, i)))
    }

    /// All edges in column-major order, as `(user, item)`.
    pub fn edges_by_item(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_items).flat_map(move |i| self.users_of(i).iter().map(move |&u| (u, i)))
    }

    /// Returns an enlarged copy with `new_edges` added. Existing edges are kept.
    pub fn extend(
        &self,
        new_edges: &[(usize, usize)],
        new_num_users: usize,
        new_num_items: usize,
    ) -> Result<Self, GraphError> {
        if new_num_users < self.num_users || new_num_items < self.num_items {
            return Err(GraphError::Shrink {
                old_users: self.num_users,
                old_items: self.num_items,
                new_users: new_num_users,
                new_items: new_num_items,
            });
        }
        let mut all: Vec<(usize, usize)> = self.edges().collect();
        all.extend_from_slice(new_edges);
        Self::from_edges(new_num_users, new_num_items, &all)
    }

    /// Copy with the same shape that keeps only edges satisfying `keep`.
    pub fn filter_edges<F>(&self, keep: F) -> Self
    where
        F: Fn(usize, usize) -> bool,
    {
        let kept: Vec<_> = self.edges().filter(|&(u, i)| keep(u, i)).collect();
        Self::from_edges(self.num_users, self.num_items, &kept).expect("subset of a valid graph")
    }

    /// Subgraph over the first `num_users` users and `num_items` items.
    pub fn restricted(&self, num_users: usize, num_items: usize) -> Self {
        let (m, n) = (num_users.min(self.num_users), num_items.min(self.num_items));
        let kept: Vec<_> = self.edges().filter(|&(u, i)| u < m && i < n).collect();
        Self::from_edges(m, n, &kept).expect("subset of a valid graph")
    }

    /// Whether every edge of `other` is also an edge here.
    pub fn contains_graph(&self, other: &InteractionGraph) -> bool {
        other.num_users <= self.num_users
            && other.num_items <= self.num_items
            && other.edges().all(|(u, i)| self.contains(u, i))
    }

    /// Indices `(user, item)` swapped: the transposed interaction matrix.
    pub fn transposed(&self) -> Self {
        Self {
            num_users: self.num_items,
            num_items: self.num_users,
            user_ptr: self.item_ptr.clone(),
            user_items: self.item_users.clone(),
            item_ptr: self.user_ptr.clone(),
            item_users: self.user_items.clone(),
        }
    }

    pub fn normalize(&self, normalization: Normalization) -> NormalizedGraph {
        NormalizedGraph::new(self, normalization)
    }
}

/// Degree normalization applied to `R` before propagation. No self-loops are
/// added; degrees are plain interaction counts.
///
/// `Left` divides by the degree of the entity receiving the aggregate (mean
/// over neighbors), `Right` by the degree of the entity being aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Normalization {
    None,
    Left,
    Right,
    #[default]
    Symmetric,
}

impl Normalization {
    pub const ALL: [Normalization; 4] = [
        Normalization::None,
        Normalization::Left,
        Normalization::Right,
        Normalization::Symmetric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Left => "left",
            Normalization::Right => "right",
            Normalization::Symmetric => "symmetric",
        }
    }

    /// `(to_user, to_item)` weights of an edge between a user of degree
    /// `du` and an item of degree `di`.
    fn weights(self, du: usize, di: usize) -> (f64, f64) {
        let (du, di) = (du as f64, di as f64);
        match self {
            Normalization::None => (1.0, 1.0),
            Normalization::Symmetric => {
                let w = 1.0 / (du * di).sqrt();
                (w, w)
            }
            Normalization::Left => (1.0 / du, 1.0 / di),
            Normalization::Right => (1.0 / di, 1.0 / du),
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "left" => Ok(Normalization::Left),
            "right" => Ok(Normalization::Right),
            "symmetric" | "sym" => Ok(Normalization::Symmetric),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One compressed view of the weighted graph. `to_user[k]` is the weight of
/// edge `k` when aggregating items into users, `to_item[k]` when aggregating
/// users into items.
#[derive(Debug, Clone, PartialEq)]
struct WeightedView {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    to_user: Vec<f64>,
    to_item: Vec<f64>,
}

/// `R` with per-edge weights, ready for propagation.
///
/// Weights always come from the degrees of the graph the normalization was
/// computed on; masking edges afterwards (edge dropout) keeps those weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    num_users: usize,
    num_items: usize,
    normalization: Normalization,
    by_user: WeightedView,
    by_item: WeightedView,
}

impl NormalizedGraph {
    pub fn new(graph: &InteractionGraph, normalization: Normalization) -> Self {
        let view = |ptr: &[usize], idx: &[usize], row_is_user: bool| {
            let mut to_user = Vec::with_capacity(idx.len());
            let mut to_item = Vec::with_capacity(idx.len());
            for r in 0..ptr.len() - 1 {
                for &c in &idx[ptr[r]..ptr[r + 1]] {
                    let (u, i) = if row_is_user { (r, c) } else { (c, r) };
                    let (wu, wi) =
                        normalization.weights(graph.user_degree(u), graph.item_degree(i));
                    to_user.push(wu);
                    to_item.push(wi);
                }
            }
            WeightedView {
                ptr: ptr.to_vec(),
                idx: idx.to_vec(),
                to_user,
                to_item,
            }
        };
        Self {
            num_users: graph.num_users,
            num_items: graph.num_items,
            normalization,
            by_user: view(&graph.user_ptr, &graph.user_items, true),
            by_item: view(&graph.item_ptr, &graph.item_users, false),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn nnz(&self) -> usize {
        self.by_user.idx.len()
    }

    /// Weights `(to_user, to_item)` of edge `(user, item)`, if present.
    pub fn weight(&self, user: usize, item: usize) -> Option<(f64, f64)> {
        let v = &self.by_user;
        let row = v.ptr[user]..v.ptr[user + 1];
        v.idx[row.clone()]
            .binary_search(&item)
            .ok()
            .map(|k| (v.to_user[row.start + k], v.to_item[row.start + k]))
    }

    /// Edges `(user, item, to_user, to_item)` in row-major order.
    pub fn weighted_edges(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let v = &self.by_user;
        (0..self.num_users).flat_map(move |u| {
            (v.ptr[u]..v.ptr[u + 1]).map(move |k| (u, v.idx[k], v.to_user[k], v.to_item[k]))
        })
    }

    /// Keeps the row-major edges whose `keep` flag is set and multiplies
    /// their weights by `scale`.
    pub fn with_edge_mask(&self, keep: &[bool], scale: f64) -> Self {
        assert_eq!(keep.len(), self.nnz(), "mask length must equal edge count");
        let mut by_user = WeightedView {
            ptr: vec![0; self.num_users + 1],
            idx: Vec::new(),
            to_user: Vec::new(),
            to_item: Vec::new(),
        };
        let mut triples: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (k, (u, i, wu, wi)) in self.weighted_edges().enumerate() {
            if keep[k] {
                by_user.idx.push(i);
                by_user.to_user.push(wu * scale);
                by_user.to_item.push(wi * scale);
                by_user.ptr[u + 1] += 1;
                triples.push((i, u, wu * scale, wi * scale));
            }
        }
        for u in 0..self.num_users {
            by_user.ptr[u + 1] += by_user.ptr[u];
        }
        triples.sort_by_key(|&(i, u, _, _)| (i, u));
        let mut by_item = WeightedView {
            ptr: vec![0; self.num_items + 1],
            idx: Vec::with_capacity(triples.len()),
            to_user: Vec::with_capacity(triples.len()),
            to_item: Vec::with_capacity(triples.len()),
        };
        for (i, u, wu, wi) in triples {
            by_item.ptr[i + 1] += 1;
            by_item.idx.push(u);
            by_item.to_user.push(wu);
            by_item.to_item.push(wi);
        }
        for i in 0..self.num_items {
            by_item.ptr[i + 1] += by_item.ptr[i];
        }
        Self {
            num_users: self.num_users,
            num_items: self.num_items,
            normalization: self.normalization,
            by_user,
            by_item,
        }
    }

    /// `R̃ X`: each user receives the weighted sum of its items' rows.
    pub fn agg_items_to_users(&self, x: &Array2<f64>) -> Result<Array2<f64>, GraphError> {
        self.agg_items_to_users_with(x, Exec::default())
    }

    pub fn agg_items_to_users_with(
        &self,
        x: &Array2<f64>,
        exec: Exec,
    ) -> Result<Array2<f64>, GraphError> {
        check_rows(x, self.num_items)?;
        Ok(spmm(&self.by_user, Side::User, x, self.num_users, exec))
    }

    /// `R̃ᵀ X`: each item receives the weighted sum of its users' rows.
    pub fn agg_users_to_items(&self, x: &Array2<f64>) -> Result<Array2<f64>, GraphError> {
        self.agg_users_to_items_with(x, Exec::default())
    }

    pub fn agg_users_to_items_with(
        &self,
        x: &Array2<f64>,
        exec: Exec,
    ) -> Result<Array2<f64>, GraphError> {
        check_rows(x, self.num_users)?;
        Ok(spmm(&self.by_item, Side::Item, x, self.num_items, exec))
    }

    /// Adjoint of [`agg_items_to_users`](Self::agg_items_to_users): maps a
    /// user-side matrix back onto items.
    pub fn adjoint_items_to_users(&self, y: &Array2<f64>) -> Result<Array2<f64>, GraphError> {
        check_rows(y, self.num_users)?;
        Ok(spmm(
            &self.by_item,
            Side::User,
            y,
            self.num_items,
            Exec::default(),
        ))
    }

    /// Adjoint of [`agg_users_to_items`](Self::agg_users_to_items): maps an
    /// item-side matrix back onto users.
    pub fn adjoint_users_to_items(&self, y: &Array2<f64>) -> Result<Array2<f64>, GraphError> {
        check_rows(y, self.num_items)?;
        Ok(spmm(
            &self.by_user,
            Side::Item,
            y,
            self.num_users,
            Exec::default(),
        ))
    }
}

#[derive(Clone, Copy)]
enum Side {
    User,
    Item,
}

fn check_rows(x: &Array2<f64>, expected: usize) -> Result<(), GraphError> {
    if x.nrows() != expected {
        return Err(GraphError::DimensionMismatch {
            expected,
            found: x.nrows(),
        });
    }
    Ok(())
}

fn spmm(
    view: &WeightedView,
    weights: Side,
    x: &Array2<f64>,
    rows: usize,
    exec: Exec,
) -> Array2<f64> {
    let d = x.ncols();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w = match weights {
        Side::User => &view.to_user,
        Side::Item => &view.to_item,
    };
    let mut out = Array2::<f64>::zeros((rows, d));
    exec.for_each_row(
        out.as_slice_mut().expect("fresh array is contiguous"),
        d,
        |r, row| {
            for k in view.ptr[r]..view.ptr[r + 1] {
                let src = &xs[view.idx[k] * d..(view.idx[k] + 1) * d];
                let wk = w[k];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += wk * s;
                }
            }
        },
    );
    out
}
