use super::params::ModelParameters;

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    first: ModelParameters,
    second: ModelParameters,
}

impl Adam {
    pub fn new(params: &ModelParameters, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.eps;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
            .zip(grads.tensors());
        for (((p, m), v), (_, g)) in tensors {
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Modality;
    use crate::training::params::ModalityParams;
    use ndarray::array;

    fn params(x: f64) -> ModelParameters {
        ModelParameters {
            embeddings: array![[x, -x]],
            modalities: vec![ModalityParams {
                modality: Modality::Image,
                projection: array![[x]],
                hyperedges: array![[x]],
            }],
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = params(1.5);
        let before = p.clone();
        let mut opt = Adam::new(&p, 0.0);
        opt.step(&mut p, &params(0.7));
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first update lr * sign(g)
        let mut p = params(1.0);
        let mut opt = Adam::new(&p, 0.01);
        opt.step(&mut p, &params(3.0));
        assert!((p.embeddings[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((p.embeddings[[0, 1]] + 0.99).abs() < 1e-9);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = params(2.0);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let g = ModelParameters {
                embeddings: &p.embeddings * 2.0,
                modalities: p.modalities.clone(),
            };
            opt.step(&mut p, &g);
        }
        assert!(p.embeddings.iter().all(|v| v.abs() < 1e-2));
    }
}
