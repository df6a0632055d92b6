use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::Modality;
use crate::error::{MhcrError, Result};

/// Learnable tensors attached to one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams {
    pub modality: Modality,
    /// `d_m x d` projection into the shared embedding space
    pub projection: Array2<f64>,
    /// `K x d_m` hyperedge embeddings
    pub hyperedges: Array2<f64>,
}

/// Every learnable tensor of the model. Also used as the container for
/// gradients and optimizer moments, which share its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// `(|U|+|I|) x d` ID embeddings, users first
    pub embeddings: Array2<f64>,
    pub modalities: Vec<ModalityParams>,
}

impl ModelParameters {
    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn hyper_num(&self) -> usize {
        self.modalities.first().map_or(0, |m| m.hyperedges.nrows())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: Array2::zeros(self.embeddings.dim()),
            modalities: self
                .modalities
                .iter()
                .map(|m| ModalityParams {
                    modality: m.modality,
                    projection: Array2::zeros(m.projection.dim()),
                    hyperedges: Array2::zeros(m.hyperedges.dim()),
                })
                .collect(),
        }
    }

    /// Named tensors in a fixed order (checkpoint order).
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for m in &self.modalities {
            out.push((format!("projection.{}", m.modality), &m.projection));
            out.push((format!("hyperedges.{}", m.modality), &m.hyperedges));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embeddings];
        for m in &mut self.modalities {
            out.push(&mut m.projection);
            out.push(&mut m.hyperedges);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Shapes needed to allocate parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterShapes {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub hyper_num: usize,
    pub modality_dims: Vec<(Modality, usize)>,
}

/// Draws every entry i.i.d. from `N(0, 1/d)`, so ID embedding rows have
/// expected squared norm 1.
pub fn init_parameters(shapes: &ParameterShapes, seed: u64) -> Result<ModelParameters> {
    if shapes.dim == 0 || shapes.hyper_num == 0 {
        return Err(MhcrError::Config("dim and hyper_num must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (shapes.dim as f64).sqrt()).expect("positive scale");
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
    };
    let embeddings = draw(shapes.num_users + shapes.num_items, shapes.dim);
    let modalities = shapes
        .modality_dims
        .iter()
        .map(|&(modality, dm)| ModalityParams {
            modality,
            projection: draw(dm, shapes.dim),
            hyperedges: draw(shapes.hyper_num, dm),
        })
        .collect();
    Ok(ModelParameters {
        embeddings,
        modalities,
    })
}
