//! Fusion, inner-product scoring and full-ranking Recall@K / NDCG@K.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{cold_start_users, InteractionDataset, Split};
use crate::error::{shape_err, MhcrError, Result};
use crate::training::{fused_embeddings, ModelParameters, ModelViews, TrainConfig};

pub const DEFAULT_KS: [usize; 2] = [10, 20];
pub const DEFAULT_COLD_START_THRESHOLD: usize = 3;

/// Splits the sum of the three node-space views into user and item rows.
pub fn fuse_embeddings(
    ui: &ArrayView2<'_, f64>,
    ii: &ArrayView2<'_, f64>,
    hyper: &ArrayView2<'_, f64>,
    num_users: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    for (name, v) in [("item view", ii), ("hypergraph view", hyper)] {
        if v.dim() != ui.dim() {
            return Err(shape_err(name, ui.dim(), v.dim()));
        }
    }
    if num_users > ui.nrows() {
        return Err(MhcrError::Shape(format!(
            "{num_users} users but only {} rows",
            ui.nrows()
        )));
    }
    let fused = ui + ii + hyper;
    Ok((
        fused.slice(s![..num_users, ..]).to_owned(),
        fused.slice(s![num_users.., ..]).to_owned(),
    ))
}

pub fn score(user: &ArrayView1<'_, f64>, item: &ArrayView1<'_, f64>) -> f64 {
    user.dot(item)
}

/// Higher score first, lower index on ties.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    // adding +0.0 maps -0.0 to +0.0 so equal scores tie on the index
    (scores[b] + 0.0)
        .total_cmp(&(scores[a] + 0.0))
        .then(a.cmp(&b))
}

/// Top `k` item indices by score, skipping `excluded` (sorted).
pub fn rank_top_k(scores: &[f64], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    candidates
}

/// Scores every item for one user and returns the top `k` candidates.
pub fn rank_and_score(
    user: usize,
    users: &ArrayView2<'_, f64>,
    items: &ArrayView2<'_, f64>,
    excluded: &[usize],
    k: usize,
) -> Vec<usize> {
    let scores = items.dot(&users.row(user)).to_vec();
    rank_top_k(&scores, excluded, k)
}

pub fn recall_at_k(topk: &[usize], test_items: &[usize]) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|i| test_items.contains(i)).count();
    hits as f64 / test_items.len() as f64
}

pub fn ndcg_at_k(topk: &[usize], test_items: &[usize]) -> f64 {
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = topk
        .iter()
        .enumerate()
        .filter(|(_, i)| test_items.contains(i))
        .map(|(pos, _)| gain(pos + 1))
        .sum();
    let ideal = test_items.len().min(topk.len().max(1));
    let idcg: f64 = (1..=ideal).map(gain).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Slice {
    All,
    ColdStart,
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slice::All => "all",
            Slice::ColdStart => "cold_start",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub slice: Slice,
    pub target: Split,
    pub users_evaluated: usize,
    pub metrics: Vec<MetricsAtK>,
    /// validation items were removed from the candidates
    pub val_masked: bool,
    /// no user in the slice had a target interaction; metrics are 0
    pub empty: bool,
}

/// One JSON record per `(slice, k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub slice: Slice,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

impl EvalReport {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.metrics
            .iter()
            .map(|m| EvalRecord {
                slice: self.slice,
                k: m.k,
                recall: m.recall,
                ndcg: m.ndcg,
                users: self.users_evaluated,
            })
            .collect()
    }

    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.at(k).map_or(0.0, |m| m.recall)
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// JSON document holding the records of several reports.
pub fn reports_to_json(reports: &[EvalReport]) -> String {
    let target = reports.first().map_or("test", |r| split_name(r.target));
    let records: Vec<EvalRecord> = reports.iter().flat_map(EvalReport::records).collect();
    let doc = serde_json::json!({
        "target": target,
        "val_masked": reports.iter().any(|r| r.val_masked),
        "empty_slices": reports.iter().filter(|r| r.empty).map(|r| r.slice).collect::<Vec<_>>(),
        "records": records,
    });
    serde_json::to_string_pretty(&doc).expect("plain data serializes")
}

/// Aligned text table of several reports.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<11} {:>4} {:>9} {:>9} {:>7}\n",
        "slice", "k", "recall", "ndcg", "users"
    );
    for r in reports {
        for m in &r.metrics {
            out.push_str(&format!(
                "{:<11} {:>4} {:>9.5} {:>9.5} {:>7}{}\n",
                r.slice.to_string(),
                m.k,
                m.recall,
                m.ndcg,
                r.users_evaluated,
                if r.empty { "  (empty slice)" } else { "" }
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub slice: Slice,
    pub target: Split,
    pub ks: Vec<usize>,
    pub cold_start_threshold: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            slice: Slice::All,
            target: Split::Test,
            ks: DEFAULT_KS.to_vec(),
            cold_start_threshold: DEFAULT_COLD_START_THRESHOLD,
        }
    }
}

/// Ranks for every user in the slice that has a target interaction.
///
/// Training items are always excluded; validation items are excluded too
/// when the target is the test split.
pub fn evaluate_embeddings(
    users: &ArrayView2<'_, f64>,
    items: &ArrayView2<'_, f64>,
    ds: &InteractionDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.target == Split::Train {
        return Err(MhcrError::Config(
            "evaluation target must be val or test".into(),
        ));
    }
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(MhcrError::Config("evaluation cutoffs must be >= 1".into()));
    }
    if users.nrows() != ds.num_users() || items.nrows() != ds.num_items() {
        return Err(shape_err(
            "fused embeddings",
            (ds.num_users(), ds.num_items()),
            (users.nrows(), items.nrows()),
        ));
    }
    let val_masked = opts.target == Split::Test;
    let train = ds.user_items(Split::Train);
    let val = ds.user_items(Split::Val);
    let target = ds.user_items(opts.target);
    let slice_users: Option<BTreeSet<usize>> = match opts.slice {
        Slice::All => None,
        Slice::ColdStart => Some(cold_start_users(ds, opts.cold_start_threshold)),
    };
    let max_k = *opts.ks.iter().max().unwrap();

    let per_user: Vec<Option<Vec<(f64, f64)>>> = (0..ds.num_users())
        .into_par_iter()
        .map(|u| {
            if target[u].is_empty() || slice_users.as_ref().is_some_and(|s| !s.contains(&u)) {
                return None;
            }
            let mut excluded = train[u].clone();
            if val_masked {
                excluded.extend_from_slice(&val[u]);
                excluded.sort_unstable();
            }
            let top = rank_and_score(u, users, items, &excluded, max_k);
            Some(
                opts.ks
                    .iter()
                    .map(|&k| {
                        let cut = &top[..k.min(top.len())];
                        (recall_at_k(cut, &target[u]), ndcg_at_k(cut, &target[u]))
                    })
                    .collect(),
            )
        })
        .collect();

    let mut sums = vec![(0.0, 0.0); opts.ks.len()];
    let mut count = 0usize;
    for row in per_user.into_iter().flatten() {
        count += 1;
        for (s, (r, n)) in sums.iter_mut().zip(row) {
            s.0 += r;
            s.1 += n;
        }
    }
    let denom = count.max(1) as f64;
    Ok(EvalReport {
        slice: opts.slice,
        target: opts.target,
        users_evaluated: count,
        metrics: opts
            .ks
            .iter()
            .zip(sums)
            .map(|(&k, (r, n))| MetricsAtK {
                k,
                recall: r / denom,
                ndcg: n / denom,
            })
            .collect(),
        val_masked,
        empty: count == 0,
    })
}

/// Evaluation-mode forward pass followed by [`evaluate_embeddings`].
pub fn evaluate(
    params: &ModelParameters,
    views: &ModelViews,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (users, items) = fused_embeddings(params, views, cfg)?;
    evaluate_embeddings(&users.view(), &items.view(), ds, opts)
}
