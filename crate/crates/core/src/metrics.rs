//! Ranking metrics for hold-out evaluation: Recall@K and binary-relevance NDCG@K.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

/// Per-user item lists ordered by descending score, ties by ascending index.
///
/// Scores are `W·x_u`. With `max_len` only that many leading items are kept.
pub fn rank_predictions(
    w: &DMatrix<f64>,
    x: &InteractionMatrix,
    exclude_input: bool,
    max_len: Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    let n = x.n_items();
    if w.shape() != (n, n) {
        return Err(Error::Dimension(format!("W is {:?}, input has {n} items", w.shape())));
    }
    let ranked = (0..x.n_users())
        .into_par_iter()
        .map(|u| {
            let mut scores = DVector::<f64>::zeros(n);
            for &i in x.user_items(u) {
                scores += w.column(i);
            }
            let input = x.user_items(u);
            let mut items: Vec<usize> = (0..n).filter(|i| !exclude_input || input.binary_search(i).is_err()).collect();
            let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
            match max_len {
                Some(k) if k < items.len() => {
                    if k > 0 {
                        items.select_nth_unstable_by(k - 1, order);
                    }
                    items.truncate(k);
                    items.sort_unstable_by(order);
                }
                _ => items.sort_unstable_by(order),
            }
            items
        })
        .collect();
    Ok(ranked)
}

fn check_targets(ranked: &[Vec<usize>], y: &InteractionMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if ranked.len() != y.n_users() {
        return Err(Error::Dimension(format!("{} ranked lists for {} users", ranked.len(), y.n_users())));
    }
    Ok(())
}

/// Mean over users of `f(user)` restricted to users with a nonempty target.
///
/// Per-user values are computed in parallel but summed in user order, so the
/// result does not depend on the thread count.
fn mean_over_targets(y: &InteractionMatrix, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let values: Vec<f64> = (0..y.n_users()).into_par_iter().filter(|&u| !y.user_items(u).is_empty()).map(&f).collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn hits(list: &[usize], target: &[usize], k: usize) -> usize {
    list.iter().take(k).filter(|i| target.binary_search(i).is_ok()).count()
}

fn dcg(list: &[usize], target: &[usize], k: usize) -> f64 {
    list.iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| target.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum()
}

/// `|top-K ∩ target| / min(K, |target|)`, averaged over users with a target.
pub fn recall_at_k(ranked: &[Vec<usize>], y: &InteractionMatrix, k: usize) -> Result<f64> {
    check_targets(ranked, y, k)?;
    Ok(mean_over_targets(y, |u| {
        let target = y.user_items(u);
        hits(&ranked[u], target, k) as f64 / k.min(target.len()) as f64
    }))
}

pub fn ndcg_at_k(ranked: &[Vec<usize>], y: &InteractionMatrix, k: usize) -> Result<f64> {
    check_targets(ranked, y, k)?;
    Ok(mean_over_targets(y, |u| {
        let target = y.user_items(u);
        let ideal: f64 = (0..k.min(target.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
        dcg(&ranked[u], target, k) / ideal
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingResult {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, f64>,
    pub users_evaluated: usize,
}

/// Rank once with input exclusion and evaluate every requested cutoff.
pub fn evaluate_ranking(
    w: &DMatrix<f64>,
    x: &InteractionMatrix,
    y: &InteractionMatrix,
    ks: &[usize],
) -> Result<RankingResult> {
    if x.n_items() != y.n_items() || x.n_users() != y.n_users() {
        return Err(Error::Dimension("input and target shapes differ".into()));
    }
    let max_k = ks.iter().copied().max().ok_or_else(|| Error::InvalidArgument("no cutoffs given".into()))?;
    let ranked = rank_predictions(w, x, true, Some(max_k))?;
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        recall.insert(k, recall_at_k(&ranked, y, k)?);
        ndcg.insert(k, ndcg_at_k(&ranked, y, k)?);
    }
    let users_evaluated = (0..y.n_users()).filter(|&u| !y.user_items(u).is_empty()).count();
    Ok(RankingResult { recall_at_k: recall, ndcg_at_k: ndcg, users_evaluated })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant or shorter than 2.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
