use std::fmt;

use crate::error::{MhcrError, Result};
use crate::item_graph::AffinityNorm;
use crate::objectives::LossWeights;

/// Which views and auxiliary losses take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    /// user–item graph view
    pub ui: bool,
    /// item–item modality graph view
    pub ii: bool,
    /// hypergraph embedding module
    pub hem: bool,
    /// cross-modal hypergraph contrastive loss
    pub hc: bool,
    /// graph–hypergraph contrastive loss
    pub ghc: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            ui: true,
            ii: true,
            hem: true,
            hc: true,
            ghc: true,
        }
    }
}

impl AblationFlags {
    /// Both contrastive losses read hypergraph embeddings, so they switch off
    /// with the hypergraph module.
    pub fn hc_active(&self) -> bool {
        self.hem && self.hc
    }

    pub fn ghc_active(&self) -> bool {
        self.hem && self.ghc
    }

    fn disabled_names(&self) -> Vec<&'static str> {
        [
            (self.ui, "UI"),
            (self.ii, "II"),
            (self.hem, "HEM"),
            (self.hc, "HC"),
            (self.ghc, "GHC"),
        ]
        .into_iter()
        .filter(|(on, _)| !on)
        .map(|(_, name)| name)
        .collect()
    }

    /// Flags with the single named component switched off.
    pub fn without(component: &str) -> Result<Self> {
        let mut flags = Self::default();
        match component.trim().to_ascii_lowercase().as_str() {
            "ui" => flags.ui = false,
            "ii" => flags.ii = false,
            "hem" => flags.hem = false,
            "hc" => flags.hc = false,
            "ghc" => flags.ghc = false,
            other => {
                return Err(MhcrError::Config(format!(
                    "unknown ablation component {other:?} (expected ui, ii, hem, hc or ghc)"
                )))
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub knn_k: usize,
    pub affinity_norm: AffinityNorm,
    pub hyper_num: usize,
    pub hyper_steps: usize,
    pub drop_rate: f64,
    pub tau_hc: f64,
    pub tau_ghc: f64,
    pub lambda_hc: f64,
    pub lambda_ghc: f64,
    pub lambda_reg: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub flags: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            knn_k: 10,
            affinity_norm: AffinityNorm::Row,
            hyper_num: 32,
            hyper_steps: 1,
            drop_rate: 0.5,
            tau_hc: 0.2,
            tau_ghc: 0.2,
            lambda_hc: 1e-5,
            lambda_ghc: 0.01,
            lambda_reg: 1e-4,
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            flags: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    /// Matrix-factorization baseline: raw ID embeddings scored by inner
    /// product, no graphs and no auxiliary losses.
    pub fn bpr_mf(base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            layers: 0,
            flags: AblationFlags {
                ui: true,
                ii: false,
                hem: false,
                hc: false,
                ghc: false,
            },
            ..base.clone()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            hc: self.lambda_hc,
            ghc: self.lambda_ghc,
            reg: self.lambda_reg,
        }
    }

    pub fn variant_name(&self) -> String {
        let f = &self.flags;
        if self.layers == 0 && f.ui && !f.ii && !f.hem {
            return "BPR-MF".to_string();
        }
        let off = f.disabled_names();
        if off.is_empty() {
            "MHCR".to_string()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MhcrError::Config(msg));
        if self.dim == 0 || self.knn_k == 0 || self.hyper_num == 0 || self.hyper_steps == 0 {
            return bad("dim, knn_k, hyper_num and hyper_steps must be >= 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return bad(format!(
                "drop_rate must be in [0, 1], got {}",
                self.drop_rate
            ));
        }
        for (name, tau) in [("tau_hc", self.tau_hc), ("tau_ghc", self.tau_ghc)] {
            if !tau.is_finite() || tau <= 0.0 {
                return bad(format!("{name} must be > 0, got {tau}"));
            }
        }
        for (name, v) in [
            ("lambda_hc", self.lambda_hc),
            ("lambda_ghc", self.lambda_ghc),
            ("lambda_reg", self.lambda_reg),
            ("learning_rate", self.learning_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ui={} ii={} hem={} hc={} ghc={}",
            self.ui, self.ii, self.hem, self.hc, self.ghc
        )
    }
}
