//! Interaction files, transductive splits and inductive holdouts.
//!
//! Input follows the LightGCN repository layout: one line per user, the
//! user id followed by the ids of the items it interacted with. Ids are
//! reindexed densely in order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{GraphError, InteractionGraph};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: `{token}` is not a non-negative integer id")]
    BadToken { line: usize, token: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("user {user} has no training interactions")]
    EmptyUser { user: u64 },
    #[error("need {needed} {kind} with at least {min} interactions, found {found}")]
    InsufficientEntities {
        kind: &'static str,
        needed: usize,
        found: usize,
        min: usize,
    },
    #[error("bundle has no inductive holdout")]
    NotInductive,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("invalid fraction {0}")]
    Fraction(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Bidirectional map between external ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity map over `0..n`.
    pub fn identity(n: usize) -> Self {
        let mut map = Self::new();
        for id in 0..n as u64 {
            map.intern(id);
        }
        map
    }

    pub fn intern(&mut self, id: u64) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.external.len();
        self.external.push(id);
        self.index.insert(id, i);
        i
    }

    pub fn get(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn external(&self, index: usize) -> u64 {
        self.external[index]
    }

    pub fn externals(&self) -> &[u64] {
        &self.external
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Map whose index `k` holds the id currently at `order[k]`.
    fn reordered(&self, order: &[usize]) -> Self {
        let mut map = Self::new();
        for &old in order {
            map.intern(self.external[old]);
        }
        map
    }
}

/// Parses LightGCN-format lines into edges, interning ids into the maps.
pub fn parse_interactions_into<R: BufRead>(
    reader: R,
    users: &mut IdMap,
    items: &mut IdMap,
) -> Result<Vec<(usize, usize)>, DataError> {
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: format!("<line {}>", lineno + 1),
            source,
        })?;
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue;
        };
        let parse = |t: &str| {
            t.parse::<u64>().map_err(|_| DataError::BadToken {
                line: lineno + 1,
                token: t.to_string(),
            })
        };
        let u = users.intern(parse(first)?);
        for t in tokens {
            let i = items.intern(parse(t)?);
            edges.push((u, i));
        }
    }
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub edges: Vec<(usize, usize)>,
    pub users: IdMap,
    pub items: IdMap,
}

pub fn parse_interactions<R: BufRead>(reader: R) -> Result<Interactions, DataError> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let edges = parse_interactions_into(reader, &mut users, &mut items)?;
    Ok(Interactions {
        edges,
        users,
        items,
    })
}

/// Writes per-user item lists with external ids, one user per line.
/// Users without items are written as a bare id.
pub fn write_interactions<W: Write>(
    mut out: W,
    sets: &[Vec<usize>],
    users: &IdMap,
    items: &IdMap,
) -> std::io::Result<()> {
    for (u, set) in sets.iter().enumerate() {
        write!(out, "{}", users.external(u))?;
        for &i in set {
            write!(out, " {}", items.external(i))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn per_user(num_users: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); num_users];
    for &(u, i) in edges {
        sets[u].push(i);
    }
    for s in &mut sets {
        s.sort_unstable();
        s.dedup();
    }
    sets
}

/// How many of `degree` interactions move to a holdout of `fraction`:
/// `⌊fraction·degree⌋`, at least one when `degree ≥ 2`, never all.
pub fn holdout_count(degree: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || degree < 2 {
        return 0;
    }
    ((fraction * degree as f64).floor() as usize).clamp(1, degree - 1)
}

/// Splits each user's sorted item list, moving a random `holdout_count`
/// of them into the second returned list.
fn split_per_user<R: Rng + ?Sized>(
    sets: &[Vec<usize>],
    fraction: f64,
    rng: &mut R,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut keep = Vec::with_capacity(sets.len());
    let mut held = Vec::with_capacity(sets.len());
    for set in sets {
        let mut shuffled = set.clone();
        shuffled.shuffle(rng);
        let h = holdout_count(set.len(), fraction);
        let mut out: Vec<usize> = shuffled[..h].to_vec();
        let mut rest: Vec<usize> = shuffled[h..].to_vec();
        out.sort_unstable();
        rest.sort_unstable();
        keep.push(rest);
        held.push(out);
    }
    (keep, held)
}

/// Train and test interactions before validation carving.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub users: IdMap,
    pub items: IdMap,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl RawDataset {
    /// Reads `train.txt` and `test.txt` from a LightGCN-style directory.
    pub fn load_dir(dir: &Path) -> Result<Self, DataError> {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let mut read = |name: &str| -> Result<Vec<(usize, usize)>, DataError> {
            let path = dir.join(name);
            let file = File::open(&path).map_err(io_err(&path))?;
            parse_interactions_into(BufReader::new(file), &mut users, &mut items)
        };
        let train = read("train.txt")?;
        let test = read("test.txt")?;
        Ok(Self {
            users,
            items,
            train,
            test,
        })
    }

    /// Carves a per-user test split out of a single interaction list.
    pub fn carve_test<R: Rng + ?Sized>(
        data: Interactions,
        test_fraction: f64,
        rng: &mut R,
    ) -> Result<Self, DataError> {
        check_fraction(test_fraction)?;
        let sets = per_user(data.users.len(), &data.edges);
        let (train, test) = split_per_user(&sets, test_fraction, rng);
        Ok(Self {
            users: data.users,
            items: data.items,
            train: flatten(&train),
            test: flatten(&test),
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

fn check_fraction(f: f64) -> Result<(), DataError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(DataError::Fraction(f));
    }
    Ok(())
}

fn flatten(sets: &[Vec<usize>]) -> Vec<(usize, usize)> {
    sets.iter()
        .enumerate()
        .flat_map(|(u, s)| s.iter().map(move |&i| (u, i)))
        .collect()
}

/// Entities held out of training and their interactions.
///
/// Held users occupy indices `num_base_users..num_users` and held items
/// `num_base_items..num_items`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InductiveBundle {
    pub num_users: usize,
    pub num_items: usize,
    pub held_users: Vec<usize>,
    pub held_items: Vec<usize>,
    /// Interactions revealed at inference time.
    pub inference_edges: Vec<(usize, usize)>,
    /// Remaining held-entity interactions, scored together with the base test set.
    pub eval_edges: Vec<(usize, usize)>,
}

impl InductiveBundle {
    pub fn is_empty(&self) -> bool {
        self.held_users.is_empty() && self.held_items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    pub graph_train: InteractionGraph,
    pub val_sets: Vec<Vec<usize>>,
    pub test_sets: Vec<Vec<usize>>,
    pub users: IdMap,
    pub items: IdMap,
    pub inductive: Option<InductiveBundle>,
}

impl DatasetBundle {
    /// Per-user train item lists.
    pub fn train_sets(&self) -> Vec<Vec<usize>> {
        (0..self.graph_train.num_users())
            .map(|u| self.graph_train.items_of(u).to_vec())
            .collect()
    }

    /// Training plus validation interactions, the items masked when ranking
    /// for the test set.
    pub fn observed_graph(&self) -> Result<InteractionGraph, DataError> {
        let val: Vec<(usize, usize)> = self
            .val_sets
            .iter()
            .enumerate()
            .flat_map(|(u, s)| s.iter().map(move |&i| (u, i)))
            .collect();
        let g = &self.graph_train;
        Ok(g.extend(&val, g.num_users(), g.num_items())?)
    }

    /// Graph over every entity with training plus revealed interactions.
    pub fn extended_graph(&self) -> Result<InteractionGraph, DataError> {
        let ind = self.inductive.as_ref().ok_or(DataError::NotInductive)?;
        Ok(self
            .graph_train
            .extend(&ind.inference_edges, ind.num_users, ind.num_items)?)
    }

    /// Base test set merged with held-entity eval edges, over all users.
    pub fn inductive_eval_sets(&self) -> Result<Vec<Vec<usize>>, DataError> {
        let ind = self.inductive.as_ref().ok_or(DataError::NotInductive)?;
        let mut sets = self.test_sets.clone();
        sets.resize(ind.num_users, Vec::new());
        for &(u, i) in &ind.eval_edges {
            sets[u].push(i);
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        Ok(sets)
    }

    /// Every interaction of the bundle.
    pub fn num_interactions(&self) -> usize {
        let held = self
            .inductive
            .as_ref()
            .map_or(0, |b| b.inference_edges.len() + b.eval_edges.len());
        self.graph_train.nnz()
            + self.val_sets.iter().map(Vec::len).sum::<usize>()
            + self.test_sets.iter().map(Vec::len).sum::<usize>()
            + held
    }
}

/// Moves `⌊val_fraction·deg⌋` (at least one, when possible) of each user's
/// training items to validation.
pub fn transductive_split<R: Rng + ?Sized>(
    raw: &RawDataset,
    rng: &mut R,
    val_fraction: f64,
) -> Result<DatasetBundle, DataError> {
    check_fraction(val_fraction)?;
    let (m, n) = (raw.num_users(), raw.num_items());
    let train_sets = per_user(m, &raw.train);
    if let Some(u) = train_sets.iter().position(Vec::is_empty) {
        return Err(DataError::EmptyUser {
            user: raw.users.external(u),
        });
    }
    let mut test_sets = per_user(m, &raw.test);
    let mut overlap = 0;
    for (t, tr) in test_sets.iter_mut().zip(&train_sets) {
        let before = t.len();
        t.retain(|i| tr.binary_search(i).is_err());
        overlap += before - t.len();
    }
    if overlap > 0 {
        warn!("dropped {overlap} test interactions that also appear in train");
    }
    let (train, val_sets) = split_per_user(&train_sets, val_fraction, rng);
    Ok(DatasetBundle {
        graph_train: InteractionGraph::from_edges(m, n, &flatten(&train))?,
        val_sets,
        test_sets,
        users: raw.users.clone(),
        items: raw.items.clone(),
        inductive: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductiveConfig {
    pub holdout_fraction: f64,
    pub inference_fraction: f64,
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
}

impl Default for InductiveConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.05,
            inference_fraction: 0.5,
            min_user_interactions: 10,
            min_item_interactions: 5,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Val,
    Test,
}

/// Holds out a random `holdout_fraction` of users and of items, removes all
/// their interactions from train/val/test and splits those interactions
/// into revealed (inference) and evaluation parts.
///
/// The returned bundle is reindexed so held entities come last.
/// Interactions between a held user and a held item are always evaluation
/// edges. Each held entity reveals `⌊inference_fraction·degree⌋` (at least
/// one) of its interactions with non-held entities.
pub fn inductive_split<R: Rng + ?Sized>(
    bundle: &DatasetBundle,
    rng: &mut R,
    cfg: &InductiveConfig,
) -> Result<DatasetBundle, DataError> {
    check_fraction(cfg.holdout_fraction)?;
    check_fraction(cfg.inference_fraction)?;
    let m = bundle.graph_train.num_users();
    let n = bundle.graph_train.num_items();

    let mut all: Vec<(usize, usize, Split)> = bundle
        .graph_train
        .edges()
        .map(|(u, i)| (u, i, Split::Train))
        .collect();
    for (sets, tag) in [
        (&bundle.val_sets, Split::Val),
        (&bundle.test_sets, Split::Test),
    ] {
        for (u, s) in sets.iter().enumerate() {
            all.extend(s.iter().map(|&i| (u, i, tag)));
        }
    }
    let mut user_deg = vec![0usize; m];
    let mut item_deg = vec![0usize; n];
    for &(u, i, _) in &all {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }

    let pick = |rng: &mut R, mut candidates: Vec<usize>, total: usize, kind, min| {
        let needed = (cfg.holdout_fraction * total as f64).round() as usize;
        if candidates.len() < needed {
            return Err(DataError::InsufficientEntities {
                kind,
                needed,
                found: candidates.len(),
                min,
            });
        }
        candidates.shuffle(rng);
        candidates.truncate(needed);
        candidates.sort_unstable();
        Ok(candidates)
    };

    let held_items = pick(
        rng,
        (0..n)
            .filter(|&i| item_deg[i] >= cfg.min_item_interactions)
            .collect(),
        n,
        "items",
        cfg.min_item_interactions,
    )?;
    let mut item_held = vec![false; n];
    for &i in &held_items {
        item_held[i] = true;
    }
    let mut has_base_item = vec![false; m];
    for &(u, i, _) in &all {
        if !item_held[i] {
            has_base_item[u] = true;
        }
    }
    let held_users = pick(
        rng,
        (0..m)
            .filter(|&u| user_deg[u] >= cfg.min_user_interactions && has_base_item[u])
            .collect(),
        m,
        "users",
        cfg.min_user_interactions,
    )?;
    let mut user_held = vec![false; m];
    for &u in &held_users {
        user_held[u] = true;
    }

    // base entities keep their relative order, held ones are appended
    let order = |held: &[bool]| -> Vec<usize> {
        let base = (0..held.len()).filter(|&k| !held[k]);
        base.chain((0..held.len()).filter(|&k| held[k])).collect()
    };
    let user_order = order(&user_held);
    let item_order = order(&item_held);
    let mut user_new = vec![0; m];
    for (new, &old) in user_order.iter().enumerate() {
        user_new[old] = new;
    }
    let mut item_new = vec![0; n];
    for (new, &old) in item_order.iter().enumerate() {
        item_new[old] = new;
    }
    let m_base = m - held_users.len();
    let n_base = n - held_items.len();

    let mut train = Vec::new();
    let mut val = vec![Vec::new(); m_base];
    let mut test = vec![Vec::new(); m_base];
    let mut user_pool: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    let mut item_pool: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    let mut eval_edges = Vec::new();
    for &(u, i, tag) in &all {
        let (nu, ni) = (user_new[u], item_new[i]);
        match (user_held[u], item_held[i]) {
            (false, false) => match tag {
                Split::Train => train.push((nu, ni)),
                Split::Val => val[nu].push(ni),
                Split::Test => test[nu].push(ni),
            },
            (true, true) => eval_edges.push((nu, ni)),
            (true, false) => user_pool.entry(nu).or_default().push((nu, ni)),
            (false, true) => item_pool.entry(ni).or_default().push((nu, ni)),
        }
    }

    let mut inference_edges = Vec::new();
    let mut reveal = |rng: &mut R, pool: &mut Vec<(usize, usize)>, degree: usize| {
        pool.sort_unstable();
        pool.shuffle(rng);
        let r = ((cfg.inference_fraction * degree as f64).floor() as usize)
            .max(1)
            .min(pool.len());
        inference_edges.extend_from_slice(&pool[..r]);
        eval_edges.extend_from_slice(&pool[r..]);
    };
    for &old in &held_users {
        let mut pool = user_pool.remove(&user_new[old]).unwrap_or_default();
        reveal(rng, &mut pool, user_deg[old]);
    }
    for &old in &held_items {
        let new = item_new[old];
        let mut pool = item_pool.remove(&new).unwrap_or_default();
        if pool.is_empty() {
            warn!(
                "held item {} has no interactions with non-held users",
                bundle.items.external(old)
            );
        }
        reveal(rng, &mut pool, item_deg[old]);
    }
    inference_edges.sort_unstable();
    eval_edges.sort_unstable();
    for s in val.iter_mut().chain(test.iter_mut()) {
        s.sort_unstable();
    }

    Ok(DatasetBundle {
        graph_train: InteractionGraph::from_edges(m_base, n_base, &train)?,
        val_sets: val,
        test_sets: test,
        users: bundle.users.reordered(&user_order),
        items: bundle.items.reordered(&item_order),
        inductive: Some(InductiveBundle {
            num_users: m,
            num_items: n,
            held_users: (m_base..m).collect(),
            held_items: (n_base..n).collect(),
            inference_edges,
            eval_edges,
        }),
    })
}

/// Transductive lower- and upper-bound views of an inductive bundle.
///
/// Both evaluate on the full inductive eval set. The lower view trains
/// without the held entities, so they can never be recommended; the upper
/// view also trains on the revealed interactions.
pub fn lower_upper_bound_views(
    bundle: &DatasetBundle,
) -> Result<(DatasetBundle, DatasetBundle), DataError> {
    let ind = bundle.inductive.as_ref().ok_or(DataError::NotInductive)?;
    let eval = bundle.inductive_eval_sets()?;
    let lower = DatasetBundle {
        graph_train: bundle.graph_train.clone(),
        val_sets: bundle.val_sets.clone(),
        test_sets: eval.clone(),
        users: bundle.users.clone(),
        items: bundle.items.clone(),
        inductive: None,
    };
    let mut val = bundle.val_sets.clone();
    val.resize(ind.num_users, Vec::new());
    let upper = DatasetBundle {
        graph_train: bundle.extended_graph()?,
        val_sets: val,
        test_sets: eval,
        users: bundle.users.clone(),
        items: bundle.items.clone(),
        inductive: None,
    };
    Ok((lower, upper))
}

/// Block-structured synthetic interactions: users and items are split into
/// `blocks` contiguous groups; a user interacts with each same-block item
/// with probability `density` and with each other item with probability
/// `noise`. Every user gets at least one interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticBlocks {
    pub blocks: usize,
    pub users: usize,
    pub items: usize,
    pub density: f64,
    pub noise: f64,
}

impl SyntheticBlocks {
    pub fn two_block() -> Self {
        Self {
            blocks: 2,
            users: 20,
            items: 20,
            density: 0.8,
            noise: 0.0,
        }
    }

    pub fn user_block(&self, u: usize) -> usize {
        u * self.blocks / self.users
    }

    pub fn item_block(&self, i: usize) -> usize {
        i * self.blocks / self.items
    }

    pub fn generate(&self, seed: u64) -> Interactions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..self.users {
            let start = edges.len();
            for i in 0..self.items {
                let p = if self.user_block(u) == self.item_block(i) {
                    self.density
                } else {
                    self.noise
                };
                if rng.random::<f64>() < p {
                    edges.push((u, i));
                }
            }
            if edges.len() == start {
                let same: Vec<usize> = (0..self.items)
                    .filter(|&i| self.item_block(i) == self.user_block(u))
                    .collect();
                edges.push((u, *same.choose(&mut rng).expect("block has items")));
            }
        }
        Interactions {
            edges,
            users: IdMap::identity(self.users),
            items: IdMap::identity(self.items),
        }
    }
}

const ENTITIES_FILE: &str = "entities.tsv";
const EDGES_FILE: &str = "edges.tsv";

/// Writes `entities.tsv` (kind, external id, base/held, in index order) and
/// `edges.tsv` (user id, item id, split tag) into `dir`.
pub fn write_manifest(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(ENTITIES_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let (m_base, n_base) = (
        bundle.graph_train.num_users(),
        bundle.graph_train.num_items(),
    );
    let write_entities = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        for (k, id) in bundle.users.externals().iter().enumerate() {
            writeln!(
                out,
                "user\t{id}\t{}",
                if k < m_base { "base" } else { "held" }
            )?;
        }
        for (k, id) in bundle.items.externals().iter().enumerate() {
            writeln!(
                out,
                "item\t{id}\t{}",
                if k < n_base { "base" } else { "held" }
            )?;
        }
        out.flush()
    };
    write_entities(&mut out).map_err(io_err(&path))?;

    let path = dir.join(EDGES_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let ext = |u: usize, i: usize| (bundle.users.external(u), bundle.items.external(i));
    let write_edges = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        for (u, i) in bundle.graph_train.edges() {
            let (a, b) = ext(u, i);
            writeln!(out, "{a}\t{b}\ttrain")?;
        }
        for (sets, tag) in [(&bundle.val_sets, "val"), (&bundle.test_sets, "test")] {
            for (u, s) in sets.iter().enumerate() {
                for &i in s {
                    let (a, b) = ext(u, i);
                    writeln!(out, "{a}\t{b}\t{tag}")?;
                }
            }
        }
        if let Some(ind) = &bundle.inductive {
            for (edges, tag) in [(&ind.inference_edges, "infer"), (&ind.eval_edges, "eval")] {
                for &(u, i) in edges {
                    let (a, b) = ext(u, i);
                    writeln!(out, "{a}\t{b}\t{tag}")?;
                }
            }
        }
        out.flush()
    };
    write_edges(&mut out).map_err(io_err(&path))
}

/// Reads a directory written by [`write_manifest`].
pub fn read_manifest(dir: &Path) -> Result<DatasetBundle, DataError> {
    let bad = |line: usize, message: String| DataError::Manifest { line, message };
    let path = dir.join(ENTITIES_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let (mut held_users, mut held_items) = (0usize, 0usize);
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(k + 1, format!("expected 3 fields in `{line}`")));
        }
        let id: u64 = f[1]
            .parse()
            .map_err(|_| bad(k + 1, format!("bad id `{}`", f[1])))?;
        let held = match f[2] {
            "base" => false,
            "held" => true,
            other => return Err(bad(k + 1, format!("bad role `{other}`"))),
        };
        match f[0] {
            "user" => {
                users.intern(id);
                held_users += held as usize;
            }
            "item" => {
                items.intern(id);
                held_items += held as usize;
            }
            other => return Err(bad(k + 1, format!("bad entity kind `{other}`"))),
        }
    }
    let (m, n) = (users.len(), items.len());
    let (m_base, n_base) = (m - held_users, n - held_items);

    let path = dir.join(EDGES_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut train = Vec::new();
    let mut val = vec![Vec::new(); m_base];
    let mut test = vec![Vec::new(); m_base];
    let mut inference_edges = Vec::new();
    let mut eval_edges = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(k + 1, format!("expected 3 fields in `{line}`")));
        }
        let lookup = |map: &IdMap, s: &str| {
            s.parse::<u64>()
                .ok()
                .and_then(|id| map.get(id))
                .ok_or_else(|| bad(k + 1, format!("unknown id `{s}`")))
        };
        let u = lookup(&users, f[0])?;
        let i = lookup(&items, f[1])?;
        let base = u < m_base && i < n_base;
        match (f[2], base) {
            ("train", true) => train.push((u, i)),
            ("val", true) => val[u].push(i),
            ("test", true) => test[u].push(i),
            ("infer", _) => inference_edges.push((u, i)),
            ("eval", _) => eval_edges.push((u, i)),
            (tag, _) => return Err(bad(k + 1, format!("tag `{tag}` invalid for ({u}, {i})"))),
        }
    }
    let inductive = (held_users > 0 || held_items > 0 || !inference_edges.is_empty()).then(|| {
        InductiveBundle {
            num_users: m,
            num_items: n,
            held_users: (m_base..m).collect(),
            held_items: (n_base..n).collect(),
            inference_edges,
            eval_edges,
        }
    });
    Ok(DatasetBundle {
        graph_train: InteractionGraph::from_edges(m_base, n_base, &train)?,
        val_sets: val,
        test_sets: test,
        users,
        items,
        inductive,
    })
}
