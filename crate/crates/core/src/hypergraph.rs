//! Learnable-hyperedge incidence construction and dropout-regularized
//! hypergraph message passing.
//!
//! For modality `m` with item features `F` (`|I| x d_m`) and hyperedge
//! embeddings `V` (`K x d_m`):
//!
//! ```text
//! H_i = F V^T                       |I| x K
//! H_u = X_u H_i                     |U| x K
//! E_i' = D(H_i) D(H_i^T) E_i
//! E_u' = D(H_u) D(H_i^T) E_i
//! ```
//!
//! where `D` zeroes entries with probability `p` and rescales survivors by
//! `1/(1-p)`, with an independent mask for every occurrence. The backward
//! functions here hold masks fixed.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::Modality;
use crate::error::{shape_err, MhcrError, Result};
use crate::sparse::SparseRowMatrix;

/// Item and user incidence matrices for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidencePair {
    pub modality: Modality,
    /// `|I| x K`
    pub items: Array2<f64>,
    /// `|U| x K`
    pub users: Array2<f64>,
}

impl IncidencePair {
    pub fn num_hyperedges(&self) -> usize {
        self.items.ncols()
    }
}

/// `H_i = F V^T`, `H_u = X_u H_i`; no nonlinearity.
pub fn build_incidence(
    modality: Modality,
    features: &ArrayView2<'_, f64>,
    hyperedges: &ArrayView2<'_, f64>,
    interactions: &SparseRowMatrix,
) -> Result<IncidencePair> {
    if hyperedges.ncols() != features.ncols() {
        return Err(shape_err(
            "hyperedge embeddings",
            (hyperedges.nrows(), features.ncols()),
            hyperedges.dim(),
        ));
    }
    if interactions.cols() != features.nrows() {
        return Err(shape_err(
            "interaction matrix",
            (interactions.rows(), features.nrows()),
            interactions.shape(),
        ));
    }
    let items = features.dot(&hyperedges.t());
    let users = interactions.matmul(&items.view())?;
    Ok(IncidencePair {
        modality,
        items,
        users,
    })
}

/// Gradient of a scalar loss w.r.t. `V` given its gradients w.r.t. both
/// incidence matrices. `interactions_t` is `X_u^T`.
pub fn incidence_backward(
    features: &ArrayView2<'_, f64>,
    interactions_t: &SparseRowMatrix,
    grad_items: &Array2<f64>,
    grad_users: &Array2<f64>,
) -> Result<Array2<f64>> {
    let total = grad_items + &interactions_t.matmul(&grad_users.view())?;
    Ok(total.t().dot(features))
}

/// Pre-scaled dropout masks for one message-passing step. `None` means the
/// factor is used as is.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMasks {
    /// on `H_i`, `|I| x K`
    pub item_left: Option<Array2<f64>>,
    /// on `H_i^T` in the item update, `K x |I|`
    pub item_right: Option<Array2<f64>>,
    /// on `H_u`, `|U| x K`
    pub user_left: Option<Array2<f64>>,
    /// on `H_i^T` in the user update, `K x |I|`
    pub user_right: Option<Array2<f64>>,
}

impl StepMasks {
    pub fn identity() -> Self {
        Self {
            item_left: None,
            item_right: None,
            user_left: None,
            user_right: None,
        }
    }
}

fn sample_mask(rng: &mut impl Rng, rows: usize, cols: usize, drop_rate: f64) -> Array2<f64> {
    if drop_rate >= 1.0 {
        return Array2::zeros((rows, cols));
    }
    let keep = 1.0 / (1.0 - drop_rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < drop_rate {
            0.0
        } else {
            keep
        }
    })
}

/// Draws independent masks for every factor of every step.
pub fn sample_masks(
    rng: &mut impl Rng,
    num_users: usize,
    num_items: usize,
    num_hyperedges: usize,
    drop_rate: f64,
    steps: usize,
) -> Vec<StepMasks> {
    (0..steps)
        .map(|_| {
            if drop_rate <= 0.0 {
                return StepMasks::identity();
            }
            StepMasks {
                item_left: Some(sample_mask(rng, num_items, num_hyperedges, drop_rate)),
                item_right: Some(sample_mask(rng, num_hyperedges, num_items, drop_rate)),
                user_left: Some(sample_mask(rng, num_users, num_hyperedges, drop_rate)),
                user_right: Some(sample_mask(rng, num_hyperedges, num_items, drop_rate)),
            }
        })
        .collect()
}

fn apply(m: ArrayView2<'_, f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(mask) => &m * mask,
        None => m.to_owned(),
    }
}

fn apply_grad(g: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(mask) => g * mask,
        None => g,
    }
}

/// Intermediate values of one hypergraph pass, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct HyperTrace {
    /// item states `E_i^0 ..= E_i^S`
    pub item_states: Vec<Array2<f64>>,
    /// `D(H_i^T) E_i^h` for the item update of each step
    pub item_pooled: Vec<Array2<f64>>,
    /// `D(H_i^T) E_i^{S-1}` for the final user update
    pub user_pooled: Array2<f64>,
    pub users: Array2<f64>,
}

impl HyperTrace {
    pub fn items(&self) -> &Array2<f64> {
        self.item_states.last().expect("at least one state")
    }
}

/// Runs message passing with explicit masks (one entry per step).
///
/// Only the final step's user state is materialized; earlier user states
/// never feed back into the recurrence.
pub fn hypergraph_forward(
    pair: &IncidencePair,
    items_in: &ArrayView2<'_, f64>,
    masks: &[StepMasks],
) -> Result<HyperTrace> {
    if masks.is_empty() {
        return Err(MhcrError::Config("hypergraph pass needs steps >= 1".into()));
    }
    if items_in.nrows() != pair.items.nrows() {
        return Err(shape_err(
            "hypergraph item state",
            (pair.items.nrows(), items_in.ncols()),
            items_in.dim(),
        ));
    }
    let h_t = pair.items.t();
    let mut item_states = vec![items_in.to_owned()];
    let mut item_pooled = Vec::with_capacity(masks.len());
    let mut user_pooled = None;
    let mut users = None;
    for (step, mask) in masks.iter().enumerate() {
        let current = item_states.last().unwrap();
        let pooled = apply(h_t, &mask.item_right).dot(current);
        let next = apply(pair.items.view(), &mask.item_left).dot(&pooled);
        if step + 1 == masks.len() {
            let up = apply(h_t, &mask.user_right).dot(current);
            users = Some(apply(pair.users.view(), &mask.user_left).dot(&up));
            user_pooled = Some(up);
        }
        item_pooled.push(pooled);
        item_states.push(next);
    }
    Ok(HyperTrace {
        item_states,
        item_pooled,
        user_pooled: user_pooled.unwrap(),
        users: users.unwrap(),
    })
}

/// Gradients produced by [`hypergraph_backward`].
#[derive(Debug, Clone)]
pub struct HyperGrads {
    pub items_in: Array2<f64>,
    pub incidence_items: Array2<f64>,
    pub incidence_users: Array2<f64>,
}

/// Vector–Jacobian product of [`hypergraph_forward`] with masks held fixed.
pub fn hypergraph_backward(
    pair: &IncidencePair,
    masks: &[StepMasks],
    trace: &HyperTrace,
    grad_users: &Array2<f64>,
    grad_items: &Array2<f64>,
) -> HyperGrads {
    let h = &pair.items;
    let h_t = h.t();
    let mut g_hi = Array2::<f64>::zeros(h.dim());
    let mut g_hu = Array2::<f64>::zeros(pair.users.dim());
    let mut upstream = grad_items.clone();
    let last = masks.len() - 1;
    for step in (0..masks.len()).rev() {
        let mask = &masks[step];
        let state = &trace.item_states[step];

        let left = apply(h.view(), &mask.item_left);
        let right = apply(h_t, &mask.item_right);
        let g_pooled = left.t().dot(&upstream);
        g_hi += &apply_grad(upstream.dot(&trace.item_pooled[step].t()), &mask.item_left);
        let mut g_state = right.t().dot(&g_pooled);
        g_hi += &apply_grad(g_pooled.dot(&state.t()), &mask.item_right).t();

        if step == last {
            let left_u = apply(pair.users.view(), &mask.user_left);
            let right_u = apply(h_t, &mask.user_right);
            let g_up = left_u.t().dot(grad_users);
            g_hu += &apply_grad(grad_users.dot(&trace.user_pooled.t()), &mask.user_left);
            g_state += &right_u.t().dot(&g_up);
            g_hi += &apply_grad(g_up.dot(&state.t()), &mask.user_right).t();
        }
        upstream = g_state;
    }
    HyperGrads {
        items_in: upstream,
        incidence_items: g_hi,
        incidence_users: g_hu,
    }
}

/// Output of one modality's hypergraph pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperOutput {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

/// Message passing with masks drawn from `seed`; `drop_rate = 0` is the
/// deterministic evaluation-mode pass.
pub fn hypergraph_pass(
    pair: &IncidencePair,
    items_in: &ArrayView2<'_, f64>,
    drop_rate: f64,
    steps: usize,
    seed: u64,
) -> Result<HyperOutput> {
    if !(0.0..=1.0).contains(&drop_rate) {
        return Err(MhcrError::Config(format!(
            "drop rate must be in [0, 1], got {drop_rate}"
        )));
    }
    if drop_rate >= 1.0 {
        log::warn!("drop rate 1 zeroes every hypergraph output");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = sample_masks(
        &mut rng,
        pair.users.nrows(),
        pair.items.nrows(),
        pair.num_hyperedges(),
        drop_rate,
        steps,
    );
    let trace = hypergraph_forward(pair, items_in, &masks)?;
    Ok(HyperOutput {
        items: trace.items().clone(),
        users: trace.users,
    })
}

/// Sums `[E_u^m; E_i^m]` over modalities into one node-space matrix.
pub fn aggregate_hyper(outputs: &[HyperOutput]) -> Result<Array2<f64>> {
    let Some(first) = outputs.first() else {
        return Err(MhcrError::Shape(
            "no hypergraph outputs to aggregate".into(),
        ));
    };
    let (nu, d) = first.users.dim();
    let ni = first.items.nrows();
    let mut out = Array2::zeros((nu + ni, d));
    for o in outputs {
        if o.users.dim() != (nu, d) || o.items.dim() != (ni, d) {
            return Err(shape_err(
                "hypergraph output",
                (nu + ni, d),
                (o.users.nrows() + o.items.nrows(), o.users.ncols()),
            ));
        }
        let (mut top, mut bottom) = out.view_mut().split_at(Axis(0), nu);
        top += &o.users;
        bottom += &o.items;
    }
    Ok(out)
}
