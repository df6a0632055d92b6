//! Forward composition of the three views and the hand-derived backward
//! sweep of the total loss.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::config::TrainConfig;
use super::params::ModelParameters;
use crate::dataio::{InteractionDataset, ModalityFeatures, Split};
use crate::error::{shape_err, MhcrError, Result};
use crate::hypergraph::{
    build_incidence, hypergraph_backward, hypergraph_forward, incidence_backward, sample_masks,
    HyperTrace, IncidencePair, StepMasks,
};
use crate::item_graph::{build_affinity_graph_with, AffinityGraph};
use crate::objectives::{
    bpr_loss_grad, graph_hyper_contrastive_grad, hyper_contrastive_grad, total_loss, LossBreakdown,
};
use crate::sparse::SparseRowMatrix;
use crate::ui_graph::{build_norm_adjacency, propagate_ui, NormalizedBipartiteGraph};

/// Frozen structures the model reads but never learns: the normalized
/// user–item graph, the per-modality item graphs, the training interaction
/// matrix and the item features.
#[derive(Debug, Clone)]
pub struct ModelViews {
    graph: NormalizedBipartiteGraph,
    item_graphs: Vec<AffinityGraph>,
    item_graphs_t: Vec<SparseRowMatrix>,
    interactions: SparseRowMatrix,
    interactions_t: SparseRowMatrix,
    features: Vec<ModalityFeatures>,
}

impl ModelViews {
    /// Builds every frozen structure from the training split. Item graphs
    /// are skipped when the item–item view is disabled.
    pub fn build(
        ds: &InteractionDataset,
        features: &[ModalityFeatures],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(MhcrError::Config(
                "at least one modality is required".into(),
            ));
        }
        for f in features {
            f.check_items(ds.num_items())?;
        }
        let graph = build_norm_adjacency(ds)?;
        let item_graphs = if cfg.flags.ii {
            features
                .iter()
                .map(|f| build_affinity_graph_with(f, cfg.knn_k, cfg.affinity_norm))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let item_graphs_t = item_graphs.iter().map(|g| g.matrix().transpose()).collect();
        let interactions = ds.interaction_matrix(Split::Train);
        let interactions_t = interactions.transpose();
        Ok(Self {
            graph,
            item_graphs,
            item_graphs_t,
            interactions,
            interactions_t,
            features: features.to_vec(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.graph.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.graph.num_items()
    }

    pub fn graph(&self) -> &NormalizedBipartiteGraph {
        &self.graph
    }

    pub fn item_graphs(&self) -> &[AffinityGraph] {
        &self.item_graphs
    }

    pub fn features(&self) -> &[ModalityFeatures] {
        &self.features
    }
}

/// Output of each view in node space (users first). Disabled views are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEmbeddings {
    pub ui: Array2<f64>,
    /// item rows from the item graphs, zero user rows
    pub ii: Array2<f64>,
    pub hyper: Array2<f64>,
    /// `[E_u^m; E_i^m]` for each modality, empty when the hypergraph is off
    pub hyper_per_modality: Vec<Array2<f64>>,
    pub num_users: usize,
}

impl ViewEmbeddings {
    pub fn fused(&self) -> Array2<f64> {
        &self.ui + &self.ii + &self.hyper
    }

    /// Graph-side embedding contrasted against the hypergraph view.
    pub fn graph_side(&self) -> Array2<f64> {
        &self.ui + &self.ii
    }
}

/// One BPR mini-batch of `(user, positive, negative)` triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Node indices for the contrastive terms: the batch's distinct users
    /// followed by its distinct positive items, offset into node space.
    pub fn contrastive_nodes(&self, num_users: usize) -> Vec<usize> {
        let mut users = self.users.clone();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<usize> = self.positives.iter().map(|&i| num_users + i).collect();
        items.sort_unstable();
        items.dedup();
        users.extend(items);
        users
    }
}

/// Draws one set of dropout masks per modality for a training step.
pub fn sample_step_masks(
    rng: &mut impl Rng,
    views: &ModelViews,
    cfg: &TrainConfig,
) -> Vec<Vec<StepMasks>> {
    if !cfg.flags.hem {
        return Vec::new();
    }
    views
        .features
        .iter()
        .map(|_| {
            sample_masks(
                rng,
                views.num_users(),
                views.num_items(),
                cfg.hyper_num,
                cfg.drop_rate,
                cfg.hyper_steps,
            )
        })
        .collect()
}

fn identity_masks(views: &ModelViews, cfg: &TrainConfig) -> Vec<Vec<StepMasks>> {
    if !cfg.flags.hem {
        return Vec::new();
    }
    views
        .features
        .iter()
        .map(|_| vec![StepMasks::identity(); cfg.hyper_steps])
        .collect()
}

struct ForwardState {
    projected: Vec<Array2<f64>>,
    pairs: Vec<IncidencePair>,
    traces: Vec<HyperTrace>,
    out: ViewEmbeddings,
}

fn check_params(params: &ModelParameters, views: &ModelViews) -> Result<()> {
    let n = views.num_users() + views.num_items();
    if params.num_nodes() != n {
        return Err(shape_err(
            "ID embeddings",
            (n, params.dim()),
            params.embeddings.dim(),
        ));
    }
    if params.modalities.len() != views.features.len() {
        return Err(MhcrError::Shape(format!(
            "{} modality parameter sets for {} feature matrices",
            params.modalities.len(),
            views.features.len()
        )));
    }
    for (p, f) in params.modalities.iter().zip(&views.features) {
        if p.modality != f.modality() {
            return Err(MhcrError::Shape(format!(
                "parameter modality {} paired with {} features",
                p.modality,
                f.modality()
            )));
        }
        if p.projection.dim() != (f.dim(), params.dim()) {
            return Err(shape_err(
                "projection",
                (f.dim(), params.dim()),
                p.projection.dim(),
            ));
        }
        if p.hyperedges.ncols() != f.dim() {
            return Err(shape_err(
                "hyperedges",
                (p.hyperedges.nrows(), f.dim()),
                p.hyperedges.dim(),
            ));
        }
    }
    Ok(())
}

fn lift_items(num_users: usize, items: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((num_users + items.nrows(), items.ncols()));
    out.slice_mut(s![num_users.., ..]).assign(items);
    out
}

fn forward(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
    masks: &[Vec<StepMasks>],
) -> Result<ForwardState> {
    check_params(params, views)?;
    let nu = views.num_users();
    let n = params.num_nodes();
    let d = params.dim();
    let flags = cfg.flags;

    let ui = if flags.ui {
        propagate_ui(&views.graph, &params.embeddings.view(), cfg.layers)?
    } else {
        Array2::zeros((n, d))
    };

    let projected: Vec<Array2<f64>> = params
        .modalities
        .iter()
        .zip(&views.features)
        .map(|(p, f)| f.matrix().dot(&p.projection))
        .collect();

    let ii = if flags.ii {
        let mut items = Array2::<f64>::zeros((views.num_items(), d));
        for (g, p) in views.item_graphs.iter().zip(&projected) {
            items += &g.matrix().matmul(&p.view())?;
        }
        lift_items(nu, &items)
    } else {
        Array2::zeros((n, d))
    };

    let mut pairs = Vec::new();
    let mut traces = Vec::new();
    let mut hyper_per_modality = Vec::new();
    let mut hyper = Array2::<f64>::zeros((n, d));
    if flags.hem {
        if masks.len() != params.modalities.len() {
            return Err(MhcrError::Shape(format!(
                "{} mask sets for {} modalities",
                masks.len(),
                params.modalities.len()
            )));
        }
        for (((p, f), proj), m) in params
            .modalities
            .iter()
            .zip(&views.features)
            .zip(&projected)
            .zip(masks)
        {
            let pair = build_incidence(
                p.modality,
                &f.matrix().view(),
                &p.hyperedges.view(),
                &views.interactions,
            )?;
            let trace = hypergraph_forward(&pair, &proj.view(), m)?;
            let mut node = Array2::zeros((n, d));
            node.slice_mut(s![..nu, ..]).assign(&trace.users);
            node.slice_mut(s![nu.., ..]).assign(trace.items());
            hyper += &node;
            hyper_per_modality.push(node);
            pairs.push(pair);
            traces.push(trace);
        }
    }

    Ok(ForwardState {
        projected,
        pairs,
        traces,
        out: ViewEmbeddings {
            ui,
            ii,
            hyper,
            hyper_per_modality,
            num_users: nu,
        },
    })
}

/// Evaluation-mode embeddings: no dropout, deterministic.
pub fn embed(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
) -> Result<ViewEmbeddings> {
    forward(params, views, cfg, &identity_masks(views, cfg)).map(|s| s.out)
}

/// Training-mode embeddings under the given masks.
pub fn embed_with_masks(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
    masks: &[Vec<StepMasks>],
) -> Result<ViewEmbeddings> {
    forward(params, views, cfg, masks).map(|s| s.out)
}

/// Fused user (`|U| x d`) and item (`|I| x d`) embeddings for scoring.
pub fn fused_embeddings(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let fused = embed(params, views, cfg)?.fused();
    let nu = views.num_users();
    Ok((
        fused.slice(s![..nu, ..]).to_owned(),
        fused.slice(s![nu.., ..]).to_owned(),
    ))
}

fn check_batch(batch: &Batch, views: &ModelViews) -> Result<()> {
    if batch.is_empty() {
        return Err(MhcrError::Config("empty training batch".into()));
    }
    if batch.positives.len() != batch.len() || batch.negatives.len() != batch.len() {
        return Err(MhcrError::Shape("batch columns differ in length".into()));
    }
    let (nu, ni) = (views.num_users(), views.num_items());
    if batch.users.iter().any(|&u| u >= nu)
        || batch
            .positives
            .iter()
            .chain(&batch.negatives)
            .any(|&i| i >= ni)
    {
        return Err(MhcrError::Shape("batch index out of range".into()));
    }
    Ok(())
}

fn row_dot(m: &ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    m.row(a).dot(&m.row(b))
}

/// Loss of one batch under fixed masks, with no gradient work.
pub fn batch_loss(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
    batch: &Batch,
    masks: &[Vec<StepMasks>],
) -> Result<LossBreakdown> {
    loss_impl(params, views, cfg, batch, masks, false).map(|(l, _)| l)
}

/// Loss of one batch and its gradient w.r.t. every parameter tensor, with
/// dropout masks held fixed.
pub fn loss_and_grads(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
    batch: &Batch,
    masks: &[Vec<StepMasks>],
) -> Result<(LossBreakdown, ModelParameters)> {
    let (loss, grads) = loss_impl(params, views, cfg, batch, masks, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn loss_impl(
    params: &ModelParameters,
    views: &ModelViews,
    cfg: &TrainConfig,
    batch: &Batch,
    masks: &[Vec<StepMasks>],
    want_grads: bool,
) -> Result<(LossBreakdown, Option<ModelParameters>)> {
    check_batch(batch, views)?;
    let state = forward(params, views, cfg, masks)?;
    let out = &state.out;
    let nu = views.num_users();
    let flags = cfg.flags;
    let fused = out.fused();
    let fv = fused.view();

    let pos: Vec<f64> = batch
        .users
        .iter()
        .zip(&batch.positives)
        .map(|(&u, &i)| row_dot(&fv, u, nu + i))
        .collect();
    let neg: Vec<f64> = batch
        .users
        .iter()
        .zip(&batch.negatives)
        .map(|(&u, &j)| row_dot(&fv, u, nu + j))
        .collect();
    let (l_bpr, d_margin) = bpr_loss_grad(&pos, &neg)?;

    let reg_rows: Vec<usize> = batch
        .users
        .iter()
        .copied()
        .chain(batch.positives.iter().map(|&i| nu + i))
        .chain(batch.negatives.iter().map(|&j| nu + j))
        .collect();
    let reg_scale = 1.0 / reg_rows.len() as f64;
    let l_reg = reg_rows
        .iter()
        .map(|&r| {
            let row = params.embeddings.row(r);
            row.dot(&row)
        })
        .sum::<f64>()
        * reg_scale;

    let nodes = batch.contrastive_nodes(nu);
    let hc = if flags.hc_active() {
        let hv: Vec<ArrayView2<'_, f64>> =
            out.hyper_per_modality.iter().map(|h| h.view()).collect();
        Some(hyper_contrastive_grad(&hv, &nodes, cfg.tau_hc)?)
    } else {
        None
    };
    let graph_side = out.graph_side();
    let ghc = if flags.ghc_active() {
        Some(graph_hyper_contrastive_grad(
            &graph_side.view(),
            &out.hyper.view(),
            &nodes,
            cfg.tau_ghc,
        )?)
    } else {
        None
    };

    let w = cfg.loss_weights();
    let breakdown = total_loss(
        l_bpr,
        hc.as_ref().map_or(0.0, |h| h.0),
        ghc.as_ref().map_or(0.0, |g| g.0),
        l_reg,
        &w,
    );
    if !want_grads {
        return Ok((breakdown, None));
    }

    // d total / d fused, from the ranking term
    let mut g_fused = Array2::<f64>::zeros(fused.dim());
    for (k, &g) in d_margin.iter().enumerate() {
        let (u, i, j) = (
            batch.users[k],
            nu + batch.positives[k],
            nu + batch.negatives[k],
        );
        let diff = &fused.row(i) - &fused.row(j);
        g_fused.row_mut(u).scaled_add(g, &diff);
        g_fused.row_mut(i).scaled_add(g, &fused.row(u));
        g_fused.row_mut(j).scaled_add(-g, &fused.row(u));
    }

    let mut g_graph = g_fused.clone();
    let mut g_hyper = g_fused;
    if let Some((_, gg, gh)) = &ghc {
        g_graph.scaled_add(w.ghc, gg);
        g_hyper.scaled_add(w.ghc, gh);
    }

    let mut grads = params.zeros_like();

    if flags.ui {
        grads.embeddings = propagate_ui(&views.graph, &g_graph.view(), cfg.layers)?;
    }
    for &r in &reg_rows {
        grads
            .embeddings
            .row_mut(r)
            .scaled_add(2.0 * w.reg * reg_scale, &params.embeddings.row(r));
    }

    let mut g_projected: Vec<Array2<f64>> = state
        .projected
        .iter()
        .map(|p| Array2::zeros(p.dim()))
        .collect();

    if flags.ii {
        let g_items = g_graph.slice(s![nu.., ..]);
        for (gp, st) in g_projected.iter_mut().zip(&views.item_graphs_t) {
            *gp += &st.matmul(&g_items)?;
        }
    }

    if flags.hem {
        for (m, (pair, trace)) in state.pairs.iter().zip(&state.traces).enumerate() {
            let mut upstream = g_hyper.clone();
            if let Some((_, hc_grads)) = &hc {
                upstream.scaled_add(w.hc, &hc_grads[m]);
            }
            let (gu, gi) = upstream.view().split_at(Axis(0), nu);
            let hg = hypergraph_backward(pair, &masks[m], trace, &gu.to_owned(), &gi.to_owned());
            g_projected[m] += &hg.items_in;
            grads.modalities[m].hyperedges = incidence_backward(
                &views.features[m].matrix().view(),
                &views.interactions_t,
                &hg.incidence_items,
                &hg.incidence_users,
            )?;
        }
    }

    for ((gm, f), gp) in grads
        .modalities
        .iter_mut()
        .zip(&views.features)
        .zip(&g_projected)
    {
        gm.projection = f.matrix().t().dot(gp);
    }

    Ok((breakdown, Some(grads)))
}
