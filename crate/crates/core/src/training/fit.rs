use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use super::model::{loss_and_grads, sample_step_masks, ModelViews};
use super::params::{init_parameters, ModelParameters, ParameterShapes};
use super::sampling::{epoch_batches, NegativeSampler};
use crate::dataio::{InteractionDataset, ModalityFeatures, Split};
use crate::error::{MhcrError, Result};
use crate::evaluation::{evaluate, EvalOptions, Slice};
use crate::objectives::LossBreakdown;

/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// RNG stream for batching, negatives and dropout.
pub const TRAIN_STREAM: u64 = 1;
/// RNG stream for the train/validation/test split.
pub const SPLIT_STREAM: u64 = 2;

/// Independent ChaCha stream derived from the root seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First draw of a stream, for APIs that take a plain `u64` seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    rand::Rng::random(&mut stream_rng(seed, stream))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// batch-averaged loss terms
    pub loss: LossBreakdown,
    pub val_recall20: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// parameters from the epoch with the best validation Recall@20
    pub params: ModelParameters,
    pub views: ModelViews,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    /// validation Recall@20 of the initial parameters
    pub initial_val_recall: f64,
    pub variant: String,
}

impl FitOutcome {
    /// Training log as CSV, preceded by a `# variant:` comment line.
    pub fn log_csv(&self) -> String {
        let mut out = format!("# variant: {}\n", self.variant);
        out.push_str("epoch,l_bpr,l_hc,l_ghc,l_reg,total,val_recall20\n");
        for r in &self.log {
            let l = &r.loss;
            writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6}",
                r.epoch, l.l_bpr, l.l_hc, l.l_ghc, l.l_reg, l.total, r.val_recall20
            )
            .unwrap();
        }
        out
    }
}

pub fn parameter_shapes(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    cfg: &TrainConfig,
) -> ParameterShapes {
    ParameterShapes {
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        dim: cfg.dim,
        hyper_num: cfg.hyper_num,
        modality_dims: features.iter().map(|f| (f.modality(), f.dim())).collect(),
    }
}

fn validation_recall(
    params: &ModelParameters,
    views: &ModelViews,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let opts = EvalOptions {
        slice: Slice::All,
        target: Split::Val,
        ks: vec![20],
        ..EvalOptions::default()
    };
    Ok(evaluate(params, views, ds, cfg, &opts)?.recall_at(20))
}

/// Trains on the split dataset with early stopping on validation Recall@20.
///
/// Training stops once more than `cfg.patience` consecutive epochs fail to
/// beat the best validation score.
pub fn fit(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if cfg.flags.hc_active() && features.len() < 2 {
        return Err(MhcrError::Config(
            "the cross-modal contrastive loss needs at least two modalities".into(),
        ));
    }
    if ds.pairs_in(Split::Train).next().is_none() {
        return Err(MhcrError::Validation("training split is empty".into()));
    }
    let views = ModelViews::build(ds, features, cfg)?;
    let mut params = init_parameters(
        &parameter_shapes(ds, features, cfg),
        derive_seed(cfg.seed, INIT_STREAM),
    )?;
    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM);
    let sampler = NegativeSampler::new(ds);
    let mut opt = Adam::new(&params, cfg.learning_rate);
    let variant = cfg.variant_name();

    let initial_val_recall = validation_recall(&params, &views, ds, cfg)?;
    log::info!("{variant}: initial val recall@20 {initial_val_recall:.5}");
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut stale = 0usize;
    let mut log_rows = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let batches = epoch_batches(ds, &sampler, cfg.batch_size, &mut rng);
        let mut sum = LossBreakdown::default();
        for batch in &batches {
            let masks = sample_step_masks(&mut rng, &views, cfg);
            let (loss, grads) = loss_and_grads(&params, &views, cfg, batch, &masks)?;
            if !loss.total.is_finite() {
                return Err(MhcrError::Numeric(format!(
                    "non-finite loss {loss:?} in epoch {epoch}"
                )));
            }
            if let Some(name) = grads.first_non_finite() {
                return Err(MhcrError::Numeric(format!(
                    "non-finite gradient in {name} in epoch {epoch}"
                )));
            }
            opt.step(&mut params, &grads);
            if let Some(name) = params.first_non_finite() {
                return Err(MhcrError::Numeric(format!(
                    "parameter {name} became non-finite in epoch {epoch}"
                )));
            }
            sum.accumulate(&loss);
        }
        let loss = sum.scaled(1.0 / batches.len() as f64);
        let val = validation_recall(&params, &views, ds, cfg)?;
        log::info!(
            "{variant}: epoch {epoch} loss {:.5} (bpr {:.5}) val recall@20 {val:.5}",
            loss.total,
            loss.l_bpr
        );
        log_rows.push(EpochRecord {
            epoch,
            loss,
            val_recall20: val,
        });
        if val > best.2 {
            best = (params.clone(), epoch, val);
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                log::info!("{variant}: early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (params, best_epoch, best_val_recall) = best;
    Ok(FitOutcome {
        params,
        views,
        log: log_rows,
        best_epoch,
        best_val_recall,
        initial_val_recall,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, split_dataset, SplitRatios, SyntheticConfig};

    fn data() -> (InteractionDataset, Vec<ModalityFeatures>) {
        let syn = generate_synthetic(&SyntheticConfig {
            num_users: 60,
            num_items: 40,
            seed: 2,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (ds, _) = split_dataset(&syn.dataset, SplitRatios::default(), 2).unwrap();
        (ds, syn.features)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            hyper_num: 4,
            batch_size: 64,
            max_epochs: 3,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (ds, f) = data();
        let a = fit(&ds, &f, &cfg()).unwrap();
        let b = fit(&ds, &f, &cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn zero_patience_stops_one_epoch_after_best() {
        let (ds, f) = data();
        let c = TrainConfig {
            patience: 0,
            max_epochs: 50,
            learning_rate: 0.0,
            ..cfg()
        };
        // with a frozen model no epoch beats the first
        let out = fit(&ds, &f, &c).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (ds, f) = data();
        let c = TrainConfig {
            max_epochs: 1,
            flags: crate::training::AblationFlags::without("hem").unwrap(),
            ..cfg()
        };
        let out = fit(&ds, &f, &c).unwrap();
        let csv = out.log_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# variant: w/o HEM");
        assert!(lines[1].starts_with("epoch,l_bpr,l_hc,l_ghc,l_reg,total"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn single_modality_with_hc_rejected() {
        let (ds, f) = data();
        assert!(matches!(
            fit(&ds, &f[..1], &cfg()),
            Err(MhcrError::Config(_))
        ));
    }
}
