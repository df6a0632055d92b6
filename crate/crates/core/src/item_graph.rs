//! Per-modality item–item affinity graphs: cosine similarity, top-K
//! sparsification and normalization, plus propagation of projected item
//! features through the frozen graphs.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dataio::{Modality, ModalityFeatures};
use crate::error::{shape_err, MhcrError, Result};
use crate::sparse::SparseRowMatrix;

const ROW_BLOCK: usize = 256;

/// How the kept top-K similarities are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinityNorm {
    /// Divide each row by its sum (row-stochastic).
    #[default]
    Row,
    /// `D^{-1/2} S D^{-1/2}` with `D` the row sums of the kept entries.
    Symmetric,
}

#[derive(Debug, Clone)]
pub struct AffinityGraph {
    modality: Modality,
    matrix: SparseRowMatrix,
    k: usize,
}

impl AffinityGraph {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn matrix(&self) -> &SparseRowMatrix {
        &self.matrix
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Writes `i<TAB>j<TAB>weight` lines for every stored entry.
    pub fn dump_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| MhcrError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for (i, j, v) in self.matrix.triplets() {
            writeln!(w, "{i}\t{j}\t{v}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Cosine similarity between rows `a` and `b`. A zero-norm row has
/// similarity 0 with everything.
pub fn cosine_affinity(features: &ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    let ra = features.row(a);
    let rb = features.row(b);
    let na = ra.dot(&ra).sqrt();
    let nb = rb.dot(&rb).sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine affinity with zero-norm row ({a}, {b}); using 0");
        return 0.0;
    }
    ra.dot(&rb) / (na * nb)
}

/// Orders candidates by descending similarity, then ascending index.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn build_affinity_graph(features: &ModalityFeatures, k: usize) -> Result<AffinityGraph> {
    build_affinity_graph_with(features, k, AffinityNorm::Row)
}

/// Keeps each item's `k` most similar other items, clamps negative
/// similarities to zero and normalizes.
pub fn build_affinity_graph_with(
    features: &ModalityFeatures,
    k: usize,
    norm: AffinityNorm,
) -> Result<AffinityGraph> {
    if k == 0 {
        return Err(MhcrError::Config("affinity graph needs k >= 1".into()));
    }
    let n = features.num_items();
    let k = if k >= n {
        let clamped = n.saturating_sub(1);
        log::warn!("k = {k} >= {n} items; clamping to {clamped}");
        clamped
    } else {
        k
    };

    let mut unit = features.matrix().to_owned();
    for mut row in unit.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }

    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let blocks: Vec<Vec<Vec<(usize, f64)>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ROW_BLOCK).min(n);
            let sims = unit.slice(s![start..end, ..]).dot(&unit.t());
            sims.axis_iter(Axis(0))
                .enumerate()
                .map(|(offset, row)| top_k_row(start + offset, &row.to_vec(), k))
                .collect()
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = blocks.into_iter().flatten().collect();

    match norm {
        AffinityNorm::Row => {
            for row in &mut rows {
                let sum: f64 = row.iter().map(|e| e.1).sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|e| e.1 /= sum);
                }
            }
        }
        AffinityNorm::Symmetric => {
            let deg: Vec<f64> = rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
            for (i, row) in rows.iter_mut().enumerate() {
                for e in row.iter_mut() {
                    let d = deg[i] * deg[e.0];
                    e.1 = if d > 0.0 { e.1 / d.sqrt() } else { 0.0 };
                }
                row.retain(|e| e.1 > 0.0);
            }
        }
    }

    Ok(AffinityGraph {
        modality: features.modality(),
        matrix: SparseRowMatrix::from_sorted_rows(n, rows),
        k,
    })
}

/// Top-`k` of one similarity row, self excluded, negatives clamped and zeros
/// dropped; returned sorted by column.
fn top_k_row(item: usize, sims: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut cands: Vec<(usize, f64)> = sims
        .iter()
        .copied()
        .enumerate()
        .filter(|&(j, _)| j != item)
        .collect();
    if k == 0 || cands.is_empty() {
        return Vec::new();
    }
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, rank_order);
        cands.truncate(k);
    }
    let mut kept: Vec<(usize, f64)> = cands
        .into_iter()
        .map(|(j, s)| (j, s.max(0.0)))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    kept.sort_unstable_by_key(|e| e.0);
    kept
}

/// Returns `sum_m S_m P_m`.
pub fn propagate_items(graphs: &[AffinityGraph], projected: &[Array2<f64>]) -> Result<Array2<f64>> {
    if graphs.len() != projected.len() {
        return Err(MhcrError::Shape(format!(
            "{} affinity graphs but {} projected matrices",
            graphs.len(),
            projected.len()
        )));
    }
    let Some(first) = projected.first() else {
        return Err(MhcrError::Shape("no modalities to propagate".into()));
    };
    let mut out = Array2::zeros(first.dim());
    for (g, p) in graphs.iter().zip(projected) {
        if p.dim() != first.dim() || g.matrix.cols() != p.nrows() {
            return Err(shape_err(
                "propagate_items projection",
                (g.matrix.cols(), first.ncols()),
                p.dim(),
            ));
        }
        out += &g.matrix.matmul(&p.view())?;
    }
    Ok(out)
}
