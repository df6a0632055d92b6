//! Ranking and contrastive objectives.
//!
//! Every loss comes in two forms: a plain value function and a `_grad`
//! variant returning the value together with its gradient, which the trainer
//! chains into the parameter gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{MhcrError, Result};

/// Guard against dividing by a vanishing row norm.
const NORM_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over the batch of `-ln sigmoid(pos - neg)`.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    bpr_loss_grad(pos_scores, neg_scores).map(|(loss, _)| loss)
}

/// BPR loss and its derivative with respect to each `pos - neg` margin.
pub fn bpr_loss_grad(pos_scores: &[f64], neg_scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pos_scores.is_empty() {
        return Err(MhcrError::Config("BPR loss over an empty batch".into()));
    }
    if pos_scores.len() != neg_scores.len() {
        return Err(MhcrError::Shape(format!(
            "{} positive scores but {} negative scores",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    let n = pos_scores.len() as f64;
    let mut loss = 0.0;
    let grads = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, q)| {
            let margin = p - q;
            loss += softplus(-margin);
            -sigmoid(-margin) / n
        })
        .collect();
    Ok((loss / n, grads))
}

fn check_temperature(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(MhcrError::Config(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    Ok(())
}

/// Row-normalized copy of `x` and the norms used.
fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS));
    let z = x / &norms.view().insert_axis(Axis(1));
    (z, norms)
}

/// Backward of [`normalize_rows`].
fn normalize_rows_backward(z: &Array2<f64>, norms: &Array1<f64>, gz: &Array2<f64>) -> Array2<f64> {
    let mut gx = gz.clone();
    for ((mut g, zr), &n) in gx.rows_mut().into_iter().zip(z.rows()).zip(norms) {
        if n > NORM_EPS {
            let proj = zr.dot(&g);
            g.scaled_add(-proj, &zr);
        }
        g /= n;
    }
    gx
}

fn gather(view: &ArrayView2<'_, f64>, batch: &[usize]) -> Result<Array2<f64>> {
    if let Some(&bad) = batch.iter().find(|&&x| x >= view.nrows()) {
        return Err(MhcrError::Shape(format!(
            "batch node {bad} outside {} rows",
            view.nrows()
        )));
    }
    Ok(view.select(Axis(0), batch))
}

fn scatter_add(target: &mut Array2<f64>, batch: &[usize], rows: &Array2<f64>) {
    for (&node, row) in batch.iter().zip(rows.rows()) {
        let mut t = target.row_mut(node);
        t += &row;
    }
}

/// Cross-modal hypergraph contrastive loss.
///
/// For each batch node `x`, the positives are the cosine similarities between
/// its own embeddings under every ordered pair of distinct modalities; the
/// negatives are the similarities between `x` under modality `m` and every
/// batch node (including `x`) under `m' != m`. The loss is the batch mean of
/// `-ln(sum exp(pos / tau) / sum exp(neg / tau))`.
pub fn hyper_contrastive_loss(
    views: &[ArrayView2<'_, f64>],
    batch: &[usize],
    tau: f64,
) -> Result<f64> {
    hyper_contrastive_grad(views, batch, tau).map(|(loss, _)| loss)
}

/// [`hyper_contrastive_loss`] and its gradient w.r.t. every view (full size).
pub fn hyper_contrastive_grad(
    views: &[ArrayView2<'_, f64>],
    batch: &[usize],
    tau: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    check_temperature(tau)?;
    if views.len() < 2 {
        return Err(MhcrError::Config(format!(
            "cross-modal contrast needs >= 2 modalities, got {}",
            views.len()
        )));
    }
    if batch.len() < 2 {
        return Err(MhcrError::Config(format!(
            "cross-modal contrast needs >= 2 batch nodes, got {}",
            batch.len()
        )));
    }
    let shape = views[0].dim();
    if views.iter().any(|v| v.dim() != shape) {
        return Err(MhcrError::Shape("modality views differ in shape".into()));
    }

    let b = batch.len();
    let nm = views.len();
    let mut zs = Vec::with_capacity(nm);
    let mut norms = Vec::with_capacity(nm);
    for v in views {
        let (z, n) = normalize_rows(&gather(v, batch)?);
        zs.push(z);
        norms.push(n);
    }

    // One logit matrix per unordered pair m < n; the ordered pair (n, m)
    // reads its transpose.
    let pairs: Vec<(usize, usize)> = (0..nm)
        .flat_map(|m| (m + 1..nm).map(move |n| (m, n)))
        .collect();
    let logits: Vec<Array2<f64>> = pairs
        .iter()
        .map(|&(m, n)| zs[m].dot(&zs[n].t()) / tau)
        .collect();

    // Exponentials are shifted by the global maximum logit and reused for
    // both the loss and the gradient. If some node's negative mass would
    // underflow (only for extreme temperatures) everything is recomputed
    // with per-entry shifts.
    let shift = logits
        .iter()
        .flat_map(|l| l.iter())
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let exps: Vec<Array2<f64>> = logits
        .iter()
        .map(|l| l.mapv(|v| (v - shift).exp()))
        .collect();
    let mut neg_mass = vec![0.0; b];
    for e in &exps {
        let rows = e.sum_axis(Axis(1));
        let cols = e.sum_axis(Axis(0));
        for ((s, r), c) in neg_mass.iter_mut().zip(&rows).zip(&cols) {
            *s += r + c;
        }
    }
    let fast = neg_mass.iter().all(|&s| s > 1e-280);

    let mut loss = 0.0;
    let mut log_pos = vec![0.0; b];
    let mut log_neg = vec![0.0; b];
    for x in 0..b {
        // every ordered pair contributes the same diagonal entry
        let diag: Vec<f64> = logits.iter().map(|l| l[[x, x]]).collect();
        log_pos[x] = log_sum_exp(diag.iter().chain(&diag).copied());
        log_neg[x] = if fast {
            shift + neg_mass[x].ln()
        } else {
            log_sum_exp(
                logits
                    .iter()
                    .flat_map(|l| l.row(x).into_iter().chain(l.column(x)))
                    .copied(),
            )
        };
        loss += log_neg[x] - log_pos[x];
    }
    loss /= b as f64;

    // For the pair (m, n) the gradient w.r.t. the logits of (m, n) plus the
    // transposed gradient of (n, m) is
    //   B[x, y] = e^{L[x,y] - log_neg[x]} + e^{L[x,y] - log_neg[y]}
    //             - 2 [x = y] e^{L[x,x] - log_pos[x]}
    let scale = 1.0 / (b as f64 * tau);
    let inv_mass: Vec<f64> = neg_mass.iter().map(|s| 1.0 / s).collect();
    let mut gzs: Vec<Array2<f64>> = zs.iter().map(|z| Array2::zeros(z.dim())).collect();
    for ((&(m, n), l), e) in pairs.iter().zip(logits).zip(exps) {
        let diag = l.diag().to_owned();
        let mut g = if fast { e } else { l };
        for (x, mut row) in g.rows_mut().into_iter().enumerate() {
            if fast {
                let wx = inv_mass[x];
                for (v, &wy) in row.iter_mut().zip(&inv_mass) {
                    *v *= (wx + wy) * scale;
                }
            } else {
                let lx = log_neg[x];
                for (v, &ly) in row.iter_mut().zip(&log_neg) {
                    *v = ((*v - lx).exp() + (*v - ly).exp()) * scale;
                }
            }
            row[x] -= 2.0 * (diag[x] - log_pos[x]).exp() * scale;
        }
        gzs[m] += &g.dot(&zs[n]);
        gzs[n] += &g.t().dot(&zs[m]);
    }

    let mut grads = Vec::with_capacity(nm);
    for ((z, n), gz) in zs.iter().zip(&norms).zip(&gzs) {
        let gx = normalize_rows_backward(z, n, gz);
        let mut full = Array2::zeros(shape);
        scatter_add(&mut full, batch, &gx);
        grads.push(full);
    }
    Ok((loss, grads))
}

/// Graph–hypergraph InfoNCE: each node's graph-side embedding must pick out
/// its own hypergraph-side embedding among the batch's.
pub fn graph_hyper_contrastive_loss(
    graph_side: &ArrayView2<'_, f64>,
    hyper_side: &ArrayView2<'_, f64>,
    batch: &[usize],
    tau: f64,
) -> Result<f64> {
    graph_hyper_contrastive_grad(graph_side, hyper_side, batch, tau).map(|(loss, _, _)| loss)
}

/// [`graph_hyper_contrastive_loss`] with gradients w.r.t. both sides.
pub fn graph_hyper_contrastive_grad(
    graph_side: &ArrayView2<'_, f64>,
    hyper_side: &ArrayView2<'_, f64>,
    batch: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_temperature(tau)?;
    if batch.is_empty() {
        return Err(MhcrError::Config(
            "contrastive loss over an empty batch".into(),
        ));
    }
    if graph_side.dim() != hyper_side.dim() {
        return Err(MhcrError::Shape(format!(
            "graph side {:?} vs hypergraph side {:?}",
            graph_side.dim(),
            hyper_side.dim()
        )));
    }
    let b = batch.len();
    let (zg, ng) = normalize_rows(&gather(graph_side, batch)?);
    let (zh, nh) = normalize_rows(&gather(hyper_side, batch)?);
    let logits = zg.dot(&zh.t()) / tau;

    let mut loss = 0.0;
    let mut g = Array2::<f64>::zeros((b, b));
    for x in 0..b {
        let row = logits.row(x);
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[x];
        for y in 0..b {
            g[[x, y]] = (row[y] - lse).exp();
        }
        g[[x, x]] -= 1.0;
    }
    loss /= b as f64;
    g /= b as f64 * tau;

    let gzg = g.dot(&zh);
    let gzh = g.t().dot(&zg);
    let mut grad_graph = Array2::zeros(graph_side.dim());
    let mut grad_hyper = Array2::zeros(hyper_side.dim());
    scatter_add(
        &mut grad_graph,
        batch,
        &normalize_rows_backward(&zg, &ng, &gzg),
    );
    scatter_add(
        &mut grad_hyper,
        batch,
        &normalize_rows_backward(&zh, &nh, &gzh),
    );
    Ok((loss, grad_graph, grad_hyper))
}

/// Weights of the auxiliary terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub hc: f64,
    pub ghc: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            hc: 1e-5,
            ghc: 0.01,
            reg: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_bpr: f64,
    pub l_hc: f64,
    pub l_ghc: f64,
    pub l_reg: f64,
    pub total: f64,
}

/// `total = l_bpr + w.hc l_hc + w.ghc l_ghc + w.reg l_reg`.
pub fn total_loss(l_bpr: f64, l_hc: f64, l_ghc: f64, l_reg: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_bpr,
        l_hc,
        l_ghc,
        l_reg,
        total: l_bpr + w.hc * l_hc + w.ghc * l_ghc + w.reg * l_reg,
    }
}

impl LossBreakdown {
    /// Component-wise sum, used to average over an epoch.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.l_bpr += other.l_bpr;
        self.l_hc += other.l_hc;
        self.l_ghc += other.l_ghc;
        self.l_reg += other.l_reg;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            l_bpr: self.l_bpr * factor,
            l_hc: self.l_hc * factor,
            l_ghc: self.l_ghc * factor,
            l_reg: self.l_reg * factor,
            total: self.total * factor,
        }
    }
}
