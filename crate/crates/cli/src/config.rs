//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then the config file, then the
//! environment (output directory only), then command-line flags. Every key
//! is known up front so typos fail loudly instead of being ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhcr_core::dataio::{Modality, SplitRatios, SyntheticConfig};
use mhcr_core::evaluation::{DEFAULT_COLD_START_THRESHOLD, DEFAULT_KS};
use mhcr_core::item_graph::AffinityNorm;
use mhcr_core::{AblationFlags, MhcrError, Result, TrainConfig};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "MHCR_OUT_DIR";

pub const DEFAULT_SWEEP_HYPER_NUM: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_SWEEP_LAMBDA_HC: [f64; 3] = [1e-6, 1e-5, 1e-4];
pub const DEFAULT_SWEEP_LAMBDA_GHC: [f64; 3] = [0.001, 0.01, 0.1];

/// Which subcommands read a key. Used to pick the flags each subcommand
/// exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyGroup {
    General,
    Synthetic,
    Data,
    Train,
    /// cutoffs and cold-start threshold of every report
    Metrics,
    /// checkpoint and split inputs of `evaluate`
    Eval,
    Sweep,
}

pub struct KeyInfo {
    pub name: &'static str,
    pub group: KeyGroup,
    pub help: &'static str,
}

const fn key(name: &'static str, group: KeyGroup, help: &'static str) -> KeyInfo {
    KeyInfo { name, group, help }
}

pub const KEYS: &[KeyInfo] = &[
    key(
        "seed",
        KeyGroup::General,
        "root seed for every random stream",
    ),
    key(
        "out_dir",
        KeyGroup::General,
        "directory receiving all outputs",
    ),
    key(
        "threads",
        KeyGroup::General,
        "worker threads, 0 for one per core",
    ),
    key("num_users", KeyGroup::Synthetic, "synthetic user count"),
    key("num_items", KeyGroup::Synthetic, "synthetic item count"),
    key(
        "powerlaw_exponent",
        KeyGroup::Synthetic,
        "tail exponent of per-user counts",
    ),
    key(
        "mean_interactions",
        KeyGroup::Synthetic,
        "target mean interactions per user",
    ),
    key(
        "num_clusters",
        KeyGroup::Synthetic,
        "planted taste clusters",
    ),
    key(
        "cluster_affinity",
        KeyGroup::Synthetic,
        "probability of an in-cluster interaction",
    ),
    key(
        "noise_std",
        KeyGroup::Synthetic,
        "feature noise around cluster centroids",
    ),
    key(
        "modality_dims",
        KeyGroup::Synthetic,
        "feature widths, e.g. image:32,video:32,text:16",
    ),
    key(
        "data_dir",
        KeyGroup::Data,
        "directory with interactions.tsv and features_<modality>.bin",
    ),
    key(
        "modalities",
        KeyGroup::Data,
        "modalities to load, e.g. image,video,text",
    ),
    key(
        "train_ratio",
        KeyGroup::Data,
        "fraction of each user's history used for training",
    ),
    key("val_ratio", KeyGroup::Data, "fraction used for validation"),
    key("test_ratio", KeyGroup::Data, "fraction used for testing"),
    key("dim", KeyGroup::Train, "embedding width"),
    key("layers", KeyGroup::Train, "user-item propagation layers"),
    key(
        "knn_k",
        KeyGroup::Train,
        "neighbours kept per item in modality graphs",
    ),
    key(
        "affinity_norm",
        KeyGroup::Train,
        "item graph normalization: row or symmetric",
    ),
    key("hyper_num", KeyGroup::Train, "hyperedges per modality"),
    key(
        "hyper_steps",
        KeyGroup::Train,
        "hypergraph message passing steps",
    ),
    key("drop_rate", KeyGroup::Train, "hyperedge dropout rate"),
    key(
        "tau_hc",
        KeyGroup::Train,
        "temperature of the cross-modal contrastive loss",
    ),
    key(
        "tau_ghc",
        KeyGroup::Train,
        "temperature of the graph-hypergraph contrastive loss",
    ),
    key(
        "lambda_hc",
        KeyGroup::Train,
        "weight of the cross-modal contrastive loss",
    ),
    key(
        "lambda_ghc",
        KeyGroup::Train,
        "weight of the graph-hypergraph contrastive loss",
    ),
    key(
        "lambda_reg",
        KeyGroup::Train,
        "weight of the embedding regularizer",
    ),
    key("learning_rate", KeyGroup::Train, "Adam learning rate"),
    key("batch_size", KeyGroup::Train, "BPR triples per step"),
    key("max_epochs", KeyGroup::Train, "epoch limit"),
    key(
        "patience",
        KeyGroup::Train,
        "epochs without validation gain before stopping",
    ),
    key("ui", KeyGroup::Train, "enable the user-item graph view"),
    key("ii", KeyGroup::Train, "enable the item-item graph view"),
    key(
        "hem",
        KeyGroup::Train,
        "enable the hypergraph embedding module",
    ),
    key(
        "hc",
        KeyGroup::Train,
        "enable the cross-modal contrastive loss",
    ),
    key(
        "ghc",
        KeyGroup::Train,
        "enable the graph-hypergraph contrastive loss",
    ),
    key(
        "checkpoint",
        KeyGroup::Eval,
        "checkpoint path [default: <out_dir>/model.ckpt]",
    ),
    key(
        "split_file",
        KeyGroup::Eval,
        "split sidecar path [default: <out_dir>/split.tsv]",
    ),
    key("ks", KeyGroup::Metrics, "cutoffs, e.g. 10,20"),
    key(
        "cold_start_threshold",
        KeyGroup::Metrics,
        "users with fewer training interactions are cold",
    ),
    key("sweep_hyper_num", KeyGroup::Sweep, "hyper_num grid"),
    key("sweep_lambda_hc", KeyGroup::Sweep, "lambda_hc grid"),
    key("sweep_lambda_ghc", KeyGroup::Sweep, "lambda_ghc grid"),
];

pub fn key_info(name: &str) -> Option<&'static KeyInfo> {
    KEYS.iter().find(|k| k.name == name)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn default_values() -> BTreeMap<&'static str, String> {
    let t = TrainConfig::default();
    let s = SyntheticConfig::default();
    let r = SplitRatios::default();
    let dims: Vec<String> = s
        .modality_dims
        .iter()
        .map(|(m, d)| format!("{m}:{d}"))
        .collect();
    let entries: Vec<(&'static str, String)> = vec![
        ("seed", t.seed.to_string()),
        ("out_dir", "mhcr_out".into()),
        ("threads", "0".into()),
        ("num_users", s.num_users.to_string()),
        ("num_items", s.num_items.to_string()),
        ("powerlaw_exponent", s.powerlaw_exponent.to_string()),
        ("mean_interactions", s.mean_interactions.to_string()),
        ("num_clusters", s.num_clusters.to_string()),
        ("cluster_affinity", s.cluster_affinity.to_string()),
        ("noise_std", s.noise_std.to_string()),
        ("modality_dims", dims.join(",")),
        ("data_dir", "data".into()),
        ("modalities", join(&Modality::ALL)),
        ("train_ratio", r.train.to_string()),
        ("val_ratio", r.val.to_string()),
        ("test_ratio", r.test.to_string()),
        ("dim", t.dim.to_string()),
        ("layers", t.layers.to_string()),
        ("knn_k", t.knn_k.to_string()),
        ("affinity_norm", norm_name(t.affinity_norm).into()),
        ("hyper_num", t.hyper_num.to_string()),
        ("hyper_steps", t.hyper_steps.to_string()),
        ("drop_rate", t.drop_rate.to_string()),
        ("tau_hc", t.tau_hc.to_string()),
        ("tau_ghc", t.tau_ghc.to_string()),
        ("lambda_hc", t.lambda_hc.to_string()),
        ("lambda_ghc", t.lambda_ghc.to_string()),
        ("lambda_reg", t.lambda_reg.to_string()),
        ("learning_rate", t.learning_rate.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("max_epochs", t.max_epochs.to_string()),
        ("patience", t.patience.to_string()),
        ("ui", t.flags.ui.to_string()),
        ("ii", t.flags.ii.to_string()),
        ("hem", t.flags.hem.to_string()),
        ("hc", t.flags.hc.to_string()),
        ("ghc", t.flags.ghc.to_string()),
        ("checkpoint", String::new()),
        ("split_file", String::new()),
        ("ks", join(&DEFAULT_KS)),
        (
            "cold_start_threshold",
            DEFAULT_COLD_START_THRESHOLD.to_string(),
        ),
        ("sweep_hyper_num", join(&DEFAULT_SWEEP_HYPER_NUM)),
        ("sweep_lambda_hc", join(&DEFAULT_SWEEP_LAMBDA_HC)),
        ("sweep_lambda_ghc", join(&DEFAULT_SWEEP_LAMBDA_GHC)),
    ];
    debug_assert_eq!(entries.len(), KEYS.len());
    entries.into_iter().collect()
}

fn norm_name(n: AffinityNorm) -> &'static str {
    match n {
        AffinityNorm::Row => "row",
        AffinityNorm::Symmetric => "symmetric",
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_conf(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| MhcrError::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
        let k = k.trim();
        if key_info(k).is_none() {
            return Err(parse_err(format!("unknown key {k:?}")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Fully layered settings. Every known key has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: default_values(),
        }
    }
}

impl Settings {
    /// Layers defaults, the optional file, the output-directory environment
    /// variable and the command-line overrides, in increasing precedence.
    pub fn resolve(
        file: Option<&Path>,
        env_out_dir: Option<String>,
        cli: &[(String, String)],
    ) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| MhcrError::io(path, e))?;
            for (k, v) in parse_conf(&text, path)? {
                s.set(&k, v)?;
            }
        }
        if let Some(dir) = env_out_dir.filter(|d| !d.is_empty()) {
            s.set("out_dir", dir)?;
        }
        for (k, v) in cli {
            s.set(k, v.clone())?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let info =
            key_info(key).ok_or_else(|| MhcrError::Config(format!("unknown key {key:?}")))?;
        self.values.insert(info.name, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} is not a known key"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.trim()
            .parse()
            .map_err(|_| MhcrError::Config(format!("{key}: cannot parse {raw:?}")))
    }

    fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.get(key);
        raw.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse()
                    .map_err(|_| MhcrError::Config(format!("{key}: cannot parse {p:?}")))
            })
            .collect()
    }

    fn parse_bool(&self, key: &str) -> Result<bool> {
        match self.get(key).trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(MhcrError::Config(format!(
                "{key}: expected a boolean, got {other:?}"
            ))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn threads(&self) -> Result<usize> {
        self.parse("threads")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.get("data_dir"))
    }

    fn path_or_default(&self, key: &str, file_name: &str) -> PathBuf {
        match self.get(key).trim() {
            "" => self.out_dir().join(file_name),
            p => PathBuf::from(p),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path_or_default("checkpoint", crate::commands::CHECKPOINT_FILE)
    }

    pub fn split_path(&self) -> PathBuf {
        self.path_or_default("split_file", crate::commands::SPLIT_FILE)
    }

    pub fn modalities(&self) -> Result<Vec<Modality>> {
        let ms: Vec<Modality> = self.parse_list("modalities")?;
        if ms.is_empty() {
            return Err(MhcrError::Config(
                "modalities: at least one is required".into(),
            ));
        }
        Ok(ms)
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let r = SplitRatios {
            train: self.parse("train_ratio")?,
            val: self.parse("val_ratio")?,
            test: self.parse("test_ratio")?,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        let mut modality_dims = Vec::new();
        for part in self.get("modality_dims").split(',').map(str::trim) {
            if part.is_empty() {
                continue;
            }
            let (m, d) = part.split_once(':').ok_or_else(|| {
                MhcrError::Config(format!("modality_dims: expected name:width, got {part:?}"))
            })?;
            let d = d
                .trim()
                .parse()
                .map_err(|_| MhcrError::Config(format!("modality_dims: bad width in {part:?}")))?;
            modality_dims.push((m.parse()?, d));
        }
        let cfg = SyntheticConfig {
            num_users: self.parse("num_users")?,
            num_items: self.parse("num_items")?,
            powerlaw_exponent: self.parse("powerlaw_exponent")?,
            mean_interactions: self.parse("mean_interactions")?,
            num_clusters: self.parse("num_clusters")?,
            cluster_affinity: self.parse("cluster_affinity")?,
            modality_dims,
            noise_std: self.parse("noise_std")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let affinity_norm = match self.get("affinity_norm").trim() {
            "row" => AffinityNorm::Row,
            "symmetric" => AffinityNorm::Symmetric,
            other => {
                return Err(MhcrError::Config(format!(
                    "affinity_norm: expected row or symmetric, got {other:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            dim: self.parse("dim")?,
            layers: self.parse("layers")?,
            knn_k: self.parse("knn_k")?,
            affinity_norm,
            hyper_num: self.parse("hyper_num")?,
            hyper_steps: self.parse("hyper_steps")?,
            drop_rate: self.parse("drop_rate")?,
            tau_hc: self.parse("tau_hc")?,
            tau_ghc: self.parse("tau_ghc")?,
            lambda_hc: self.parse("lambda_hc")?,
            lambda_ghc: self.parse("lambda_ghc")?,
            lambda_reg: self.parse("lambda_reg")?,
            learning_rate: self.parse("learning_rate")?,
            batch_size: self.parse("batch_size")?,
            max_epochs: self.parse("max_epochs")?,
            patience: self.parse("patience")?,
            seed: self.seed()?,
            flags: AblationFlags {
                ui: self.parse_bool("ui")?,
                ii: self.parse_bool("ii")?,
                hem: self.parse_bool("hem")?,
                hc: self.parse_bool("hc")?,
                ghc: self.parse_bool("ghc")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ks(&self) -> Result<Vec<usize>> {
        let ks: Vec<usize> = self.parse_list("ks")?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(MhcrError::Config(format!(
                "ks: need one or more positive cutoffs, got {:?}",
                self.get("ks")
            )));
        }
        Ok(ks)
    }

    pub fn cold_start_threshold(&self) -> Result<usize> {
        self.parse("cold_start_threshold")
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let grid = SweepGrid {
            hyper_num: self.parse_list("sweep_hyper_num")?,
            lambda_hc: self.parse_list("sweep_lambda_hc")?,
            lambda_ghc: self.parse_list("sweep_lambda_ghc")?,
        };
        if grid.hyper_num.is_empty() || grid.lambda_hc.is_empty() || grid.lambda_ghc.is_empty() {
            return Err(MhcrError::Config("sweep grids must not be empty".into()));
        }
        Ok(grid)
    }

    /// Every key with its resolved value, sorted, in the file format
    /// [`parse_conf`] reads.
    pub fn to_conf(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

/// Hyperparameter grid swept by `mhcr sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub hyper_num: Vec<usize>,
    pub lambda_hc: Vec<f64>,
    pub lambda_ghc: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            hyper_num: DEFAULT_SWEEP_HYPER_NUM.to_vec(),
            lambda_hc: DEFAULT_SWEEP_LAMBDA_HC.to_vec(),
            lambda_ghc: DEFAULT_SWEEP_LAMBDA_GHC.to_vec(),
        }
    }
}

impl SweepGrid {
    /// Cells in row-major order: hyper_num outermost, lambda_ghc innermost.
    pub fn cells(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &h in &self.hyper_num {
            for &a in &self.lambda_hc {
                for &b in &self.lambda_ghc {
                    out.push((h, a, b));
                }
            }
        }
        out
    }
}
