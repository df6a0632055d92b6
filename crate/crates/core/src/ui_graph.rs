//! Symmetrically normalized user–item bipartite graph and linear multi-layer
//! propagation with a layer-sum readout.
//!
//! Node ordering throughout the crate is users first (`0..|U|`), then items
//! (`|U|..|U|+|I|`).

use ndarray::{Array2, ArrayView2};

use crate::dataio::{InteractionDataset, Split};
use crate::error::{shape_err, MhcrError, Result};
use crate::sparse::SparseRowMatrix;

#[derive(Debug, Clone)]
pub struct NormalizedBipartiteGraph {
    adjacency: SparseRowMatrix,
    num_users: usize,
    num_items: usize,
}

impl NormalizedBipartiteGraph {
    pub fn adjacency(&self) -> &SparseRowMatrix {
        &self.adjacency
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }
}

/// Builds the `(|U|+|I|)`-node adjacency from TRAIN interactions only, with
/// weight `1/sqrt(deg(u) deg(i))` on both directions of every edge. No
/// self-loops are added.
pub fn build_norm_adjacency(ds: &InteractionDataset) -> Result<NormalizedBipartiteGraph> {
    let edges: Vec<(usize, usize)> = ds.pairs_in(Split::Train).collect();
    if edges.is_empty() {
        return Err(MhcrError::Build(
            "no training interactions to build the user-item graph from".into(),
        ));
    }
    let nu = ds.num_users();
    let mut user_deg = vec![0usize; nu];
    let mut item_deg = vec![0usize; ds.num_items()];
    for &(u, i) in &edges {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    let triplets = edges.iter().flat_map(|&(u, i)| {
        let w = 1.0 / ((user_deg[u] * item_deg[i]) as f64).sqrt();
        [(u, nu + i, w), (nu + i, u, w)]
    });
    let adjacency = SparseRowMatrix::from_triplets(ds.num_nodes(), ds.num_nodes(), triplets)?;
    Ok(NormalizedBipartiteGraph {
        adjacency,
        num_users: nu,
        num_items: ds.num_items(),
    })
}

/// Returns `sum_{l=0..layers} A^l E0`.
///
/// The adjacency is symmetric, so the same routine also computes the
/// vector–Jacobian product of this map.
pub fn propagate_ui(
    graph: &NormalizedBipartiteGraph,
    e0: &ArrayView2<'_, f64>,
    layers: usize,
) -> Result<Array2<f64>> {
    if e0.nrows() != graph.num_nodes() {
        return Err(shape_err(
            "propagate_ui embeddings",
            (graph.num_nodes(), e0.ncols()),
            e0.dim(),
        ));
    }
    let mut sum = e0.to_owned();
    let mut current = e0.to_owned();
    for _ in 0..layers {
        current = graph.adjacency.matmul(&current.view())?;
        sum += &current;
    }
    Ok(sum)
}
