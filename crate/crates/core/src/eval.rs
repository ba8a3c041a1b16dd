//! Top-k ranking with training-item masking, recall@k and ndcg@k.
//!
//! Per-user metrics follow the usual full-ranking protocol: every item the
//! user has not interacted with in training is a candidate, recall divides
//! hits by the size of the held-out set, and ndcg uses binary gains with
//! the ideal ranking truncated to `min(k, |test|)`.

use std::cmp::Ordering;

use ndarray::Array2;
use thiserror::Error;

use crate::exec::Exec;
use crate::graph::InteractionGraph;
use crate::propagation::{Model, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("k = {k} exceeds the {candidates} unmasked candidates")]
    KTooLarge { k: usize, candidates: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("no users with a non-empty test set")]
    NoEvaluableUsers,
    #[error("user and item embeddings have different widths ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Averaged ranking quality over users with non-empty test sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Recall with `min(k, |test|)` in the denominator, for comparison with
    /// results reported under that convention.
    pub recall_capped: f64,
    pub users_evaluated: usize,
}

impl EvalResult {
    /// Recall scaled to percent, the scale results are usually reported in.
    pub fn recall_pct(&self) -> f64 {
        self.recall * 100.0
    }

    pub fn ndcg_pct(&self) -> f64 {
        self.ndcg * 100.0
    }
}

fn rank_order(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Highest-scoring `k` items not in `mask`, descending; ties go to the
/// smaller item index.
pub fn topk(scores: &[f64], mask: &[usize], k: usize) -> Result<Vec<usize>, EvalError> {
    let mut masked = vec![false; scores.len()];
    for &i in mask {
        if i < scores.len() {
            masked[i] = true;
        }
    }
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| !masked[i]).collect();
    if k > candidates.len() {
        return Err(EvalError::KTooLarge {
            k,
            candidates: candidates.len(),
        });
    }
    let order = rank_order(scores);
    if k > 0 && k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&order);
    candidates.truncate(k);
    Ok(candidates)
}

fn hits<'a>(topk_items: &'a [usize], test_items: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    topk_items
        .iter()
        .enumerate()
        .filter(move |(_, i)| test_items.contains(i))
        .map(|(rank, _)| rank)
}

/// `|topk ∩ test| / |test|`.
pub fn recall_at_k(topk_items: &[usize], test_items: &[usize]) -> Result<f64, EvalError> {
    if test_items.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    Ok(hits(topk_items, test_items).count() as f64 / test_items.len() as f64)
}

/// Binary-gain ndcg with `k = topk_items.len()`.
pub fn ndcg_at_k(topk_items: &[usize], test_items: &[usize]) -> Result<f64, EvalError> {
    ndcg_truncated(topk_items, test_items, topk_items.len())
}

fn ndcg_truncated(topk_items: &[usize], test_items: &[usize], k: usize) -> Result<f64, EvalError> {
    if test_items.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = hits(topk_items, test_items).map(gain).sum();
    let idcg: f64 = (0..k.min(test_items.len())).map(gain).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Evaluates fused embeddings against per-user held-out item sets.
///
/// `test_sets[u]` may reference users or items beyond the embedding
/// tables; such users score zero and such items can never be hit. Items
/// `mask` records for a user are excluded from its ranking.
pub fn evaluate_embeddings(
    users: &Array2<f64>,
    items: &Array2<f64>,
    mask: &InteractionGraph,
    test_sets: &[Vec<usize>],
    k: usize,
    exec: Exec,
) -> Result<EvalResult, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if users.ncols() != items.ncols() {
        return Err(EvalError::DimMismatch(users.ncols(), items.ncols()));
    }
    let per_user: Vec<Option<(f64, f64, f64)>> = exec.map_indices(test_sets.len(), |u| {
        let test = &test_sets[u];
        if test.is_empty() {
            return None;
        }
        if u >= users.nrows() {
            return Some((0.0, 0.0, 0.0));
        }
        let scores = items.dot(&users.row(u)).to_vec();
        let masked: &[usize] = if u < mask.num_users() {
            mask.items_of(u)
        } else {
            &[]
        };
        let candidates = scores.len() - masked.iter().filter(|&&i| i < scores.len()).count();
        let ranked = topk(&scores, masked, k.min(candidates)).expect("k clamped to candidates");
        let hit_count = hits(&ranked, test).count() as f64;
        Some((
            recall_at_k(&ranked, test).expect("non-empty"),
            ndcg_truncated(&ranked, test, k).expect("non-empty"),
            hit_count / k.min(test.len()) as f64,
        ))
    });
    let mut recall = 0.0;
    let mut ndcg = 0.0;
    let mut capped = 0.0;
    let mut users_evaluated = 0;
    for (r, n, c) in per_user.into_iter().flatten() {
        recall += r;
        ndcg += n;
        capped += c;
        users_evaluated += 1;
    }
    if users_evaluated == 0 {
        return Err(EvalError::NoEvaluableUsers);
    }
    Ok(EvalResult {
        k,
        recall: recall / users_evaluated as f64,
        ndcg: ndcg / users_evaluated as f64,
        recall_capped: capped / users_evaluated as f64,
        users_evaluated,
    })
}

/// Runs the model on `train` (normalized as the model specifies), masks
/// training items and averages recall/ndcg over users with test items.
pub fn evaluate_model(
    model: &Model,
    train: &InteractionGraph,
    test_sets: &[Vec<usize>],
    k: usize,
) -> Result<EvalResult, EvalError> {
    let g = train.normalize(model.normalization());
    let (users, items) = model.embeddings(&g)?;
    evaluate_embeddings(&users, &items, train, test_sets, k, Exec::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_sorts_descending() {
        assert_eq!(topk(&[3.0, 1.0, 2.0], &[], 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn topk_ties_prefer_small_index() {
        assert_eq!(topk(&[1.0; 5], &[], 2).unwrap(), vec![0, 1]);
        assert_eq!(topk(&[1.0, 2.0, 2.0, 2.0], &[1], 2).unwrap(), vec![2, 3]);
    }

    #[test]
    fn topk_forced_by_mask() {
        assert_eq!(topk(&[9.0, 1.0, 5.0], &[0, 2], 1).unwrap(), vec![1]);
        assert_eq!(
            topk(&[9.0, 1.0, 5.0], &[0, 2], 2),
            Err(EvalError::KTooLarge {
                k: 2,
                candidates: 1
            })
        );
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 3]).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[1, 9], &[1, 3]).unwrap(), 0.5);
        assert_eq!(recall_at_k(&[5, 6], &[1, 3]).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[5], &[]), Err(EvalError::EmptyTestSet));
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[7, 1], &[7]).unwrap(), 1.0);
        let second = ndcg_at_k(&[1, 7], &[7]).unwrap();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &[7]).unwrap(), 0.0);
        // all of min(k, |test|) top ranks are hits
        assert_eq!(ndcg_at_k(&[3, 4], &[3, 4, 5]).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[], &[7]), Ok(0.0));
    }

    #[test]
    fn perfect_and_excluded_users() {
        let users = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let items = ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let mask = InteractionGraph::empty(2, 3);
        let r = evaluate_embeddings(
            &users,
            &items,
            &mask,
            &[vec![0], vec![1]],
            1,
            Exec::default(),
        )
        .unwrap();
        assert_eq!((r.recall, r.ndcg, r.users_evaluated), (1.0, 1.0, 2));
        let with_empty = evaluate_embeddings(
            &users,
            &items,
            &mask,
            &[vec![0], vec![1], vec![]],
            1,
            Exec::default(),
        )
        .unwrap();
        assert_eq!(with_empty, r);
        assert_eq!(
            evaluate_embeddings(&users, &items, &mask, &[vec![], vec![]], 1, Exec::default()),
            Err(EvalError::NoEvaluableUsers)
        );
    }

    #[test]
    fn unscorable_entities_count_as_misses() {
        let users = ndarray::array![[1.0, 0.0]];
        let items = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let mask = InteractionGraph::empty(1, 2);
        // item 5 is outside the table, user 1 has no embedding
        let r = evaluate_embeddings(
            &users,
            &items,
            &mask,
            &[vec![0, 5], vec![0]],
            1,
            Exec::default(),
        )
        .unwrap();
        assert_eq!(r.users_evaluated, 2);
        assert!((r.recall - 0.25).abs() < 1e-15);
    }
}
