//! Subcommand implementations. Each returns a summary for the caller to
//! print and writes its files under the resolved output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mhcr_core::dataio::{
    generate_synthetic, load_interactions, read_features, read_split, split_dataset,
    write_features, write_interactions, write_split, DatasetStats, InteractionDataset, Modality,
    ModalityFeatures, Split, SplitReport,
};
use mhcr_core::evaluation::{evaluate, reports_to_json, EvalOptions, EvalReport, Slice};
use mhcr_core::training::{
    derive_seed, fit, read_checkpoint, write_checkpoint, FitOutcome, ModelParameters, SPLIT_STREAM,
};
use mhcr_core::{AblationFlags, MhcrError, ModelViews, Result, TrainConfig};

use crate::config::Settings;

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const VAL_REPORT_FILE: &str = "val_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const RESOLVED_FILE: &str = "resolved.conf";
pub const SWEEP_FILE: &str = "sweep.csv";

pub fn features_file(m: Modality) -> String {
    format!("features_{m}.bin")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MhcrError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MhcrError::io(path, e))
}

/// Files are referenced by the error message before anything is read, so
/// a missing modality is reported without doing any work first.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MhcrError::Validation(format!(
            "missing {what}: {} does not exist",
            path.display()
        )))
    }
}

fn feature_paths(dir: &Path, modalities: &[Modality]) -> Result<Vec<(Modality, PathBuf)>> {
    modalities
        .iter()
        .map(|&m| {
            let p = dir.join(features_file(m));
            require_file(&p, &format!("feature file for modality {m}"))?;
            Ok((m, p))
        })
        .collect()
}

fn load_features(paths: &[(Modality, PathBuf)]) -> Result<Vec<ModalityFeatures>> {
    let mut out = Vec::with_capacity(paths.len());
    for (m, p) in paths {
        let f = read_features(p)?;
        if f.modality() != *m {
            return Err(MhcrError::Validation(format!(
                "{} holds {} features, expected {m}",
                p.display(),
                f.modality()
            )));
        }
        if let Some(first) = out.first() {
            let first: &ModalityFeatures = first;
            if f.num_items() != first.num_items() {
                return Err(MhcrError::Shape(format!(
                    "{m} features cover {} items but {} covers {}",
                    f.num_items(),
                    first.modality(),
                    first.num_items()
                )));
            }
        }
        out.push(f);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub stats: DatasetStats,
    pub files: Vec<PathBuf>,
}

/// Writes a synthetic interactions file and one feature file per modality.
pub fn cmd_generate(settings: &Settings) -> Result<GenerateSummary> {
    let cfg = settings.synthetic_config()?;
    let dir = settings.out_dir();
    create_dir(&dir)?;
    let data = generate_synthetic(&cfg)?;
    let mut files = vec![dir.join(INTERACTIONS_FILE)];
    write_interactions(&data.dataset, &files[0])?;
    for f in &data.features {
        let p = dir.join(features_file(f.modality()));
        write_features(f, &p)?;
        files.push(p);
    }
    Ok(GenerateSummary {
        stats: data.dataset.stats(),
        files,
    })
}

/// Split interactions plus the features of every configured modality.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: InteractionDataset,
    pub features: Vec<ModalityFeatures>,
    pub split_report: SplitReport,
}

/// Loads `data_dir` and splits it with the split stream of the root seed.
pub fn load_data(settings: &Settings) -> Result<LoadedData> {
    let dir = settings.data_dir();
    let interactions = dir.join(INTERACTIONS_FILE);
    require_file(&interactions, "interactions file")?;
    let paths = feature_paths(&dir, &settings.modalities()?)?;
    let ratios = settings.split_ratios()?;
    let seed = settings.seed()?;

    let features = load_features(&paths)?;
    let loaded = load_interactions(&interactions)?.dataset;
    let num_items = features[0].num_items();
    if loaded.num_items() > num_items {
        return Err(MhcrError::Shape(format!(
            "interactions reference item {} but features cover {num_items} items",
            loaded.num_items() - 1
        )));
    }
    // features fix the item vocabulary, including items nobody interacted with
    let (full, _) = InteractionDataset::new(
        loaded.num_users(),
        num_items,
        loaded.interactions().to_vec(),
    )?;
    let (dataset, split_report) = split_dataset(&full, ratios, derive_seed(seed, SPLIT_STREAM))?;
    Ok(LoadedData {
        dataset,
        features,
        split_report,
    })
}

fn slice_reports(
    params: &ModelParameters,
    views: &ModelViews,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    target: Split,
    settings: &Settings,
) -> Result<Vec<EvalReport>> {
    let ks = settings.ks()?;
    let threshold = settings.cold_start_threshold()?;
    [Slice::All, Slice::ColdStart]
        .into_iter()
        .map(|slice| {
            let opts = EvalOptions {
                slice,
                target,
                ks: ks.clone(),
                cold_start_threshold: threshold,
            };
            evaluate(params, views, ds, cfg, &opts)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub outcome: FitOutcome,
    pub val_reports: Vec<EvalReport>,
    pub split_report: SplitReport,
    pub files: Vec<PathBuf>,
}

/// Trains on `data_dir` and writes the checkpoint, the epoch log, the
/// split, the validation report and the resolved configuration.
pub fn cmd_train(settings: &Settings) -> Result<TrainSummary> {
    let cfg = settings.train_config()?;
    let data = load_data(settings)?;
    let dir = settings.out_dir();
    create_dir(&dir)?;

    let outcome = fit(&data.dataset, &data.features, &cfg)?;
    let val_reports = slice_reports(
        &outcome.params,
        &outcome.views,
        &data.dataset,
        &cfg,
        Split::Val,
        settings,
    )?;

    let files: Vec<PathBuf> = [
        CHECKPOINT_FILE,
        LOG_FILE,
        SPLIT_FILE,
        VAL_REPORT_FILE,
        RESOLVED_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    write_checkpoint(&outcome.params, data.dataset.num_users(), &files[0])?;
    write_text(&files[1], &outcome.log_csv())?;
    write_split(&data.dataset, &files[2])?;
    write_text(&files[3], &(reports_to_json(&val_reports) + "\n"))?;
    write_text(&files[4], &settings.to_conf())?;
    Ok(TrainSummary {
        outcome,
        val_reports,
        split_report: data.split_report,
        files,
    })
}

/// `cmd_train` with one named component switched off.
pub fn cmd_ablate(settings: &Settings, without: &str) -> Result<TrainSummary> {
    let flags = AblationFlags::without(without)?;
    let mut s = settings.clone();
    for (key, on) in [
        ("ui", flags.ui),
        ("ii", flags.ii),
        ("hem", flags.hem),
        ("hc", flags.hc),
        ("ghc", flags.ghc),
    ] {
        if !on {
            s.set(key, "false")?;
        }
    }
    cmd_train(&s)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub reports: Vec<EvalReport>,
    pub file: PathBuf,
}

fn check_checkpoint_shapes(
    params: &ModelParameters,
    features: &[ModalityFeatures],
    cfg: &TrainConfig,
) -> Result<()> {
    if params.dim() != cfg.dim || params.hyper_num() != cfg.hyper_num {
        return Err(MhcrError::Shape(format!(
            "checkpoint has dim {} and {} hyperedges, configuration asks for {} and {}",
            params.dim(),
            params.hyper_num(),
            cfg.dim,
            cfg.hyper_num
        )));
    }
    let stored: Vec<(Modality, usize)> = params
        .modalities
        .iter()
        .map(|m| (m.modality, m.projection.nrows()))
        .collect();
    let wanted: Vec<(Modality, usize)> = features.iter().map(|f| (f.modality(), f.dim())).collect();
    if stored != wanted {
        return Err(MhcrError::Shape(format!(
            "checkpoint modalities {stored:?} do not match the features {wanted:?}"
        )));
    }
    Ok(())
}

/// Loads a checkpoint and the split it was trained on, and reports test
/// metrics for the full and cold-start user slices.
pub fn cmd_evaluate(settings: &Settings) -> Result<EvaluateSummary> {
    let cfg = settings.train_config()?;
    let ckpt_path = settings.checkpoint_path();
    let split_path = settings.split_path();
    require_file(&ckpt_path, "checkpoint")?;
    require_file(&split_path, "split file")?;
    let paths = feature_paths(&settings.data_dir(), &settings.modalities()?)?;

    let (header, params) = read_checkpoint(&ckpt_path)?;
    let features = load_features(&paths)?;
    if features[0].num_items() != header.num_items {
        return Err(MhcrError::Shape(format!(
            "checkpoint covers {} items, features cover {}",
            header.num_items,
            features[0].num_items()
        )));
    }
    check_checkpoint_shapes(&params, &features, &cfg)?;
    let ds = read_split(&split_path, header.num_users, header.num_items)?;
    let views = ModelViews::build(&ds, &features, &cfg)?;
    let reports = slice_reports(&params, &views, &ds, &cfg, Split::Test, settings)?;

    let dir = settings.out_dir();
    create_dir(&dir)?;
    let file = dir.join(EVAL_REPORT_FILE);
    write_text(&file, &(reports_to_json(&reports) + "\n"))?;
    Ok(EvaluateSummary { reports, file })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub hyper_num: usize,
    pub lambda_hc: f64,
    pub lambda_ghc: f64,
    pub best_epoch: usize,
    pub val_recall20: f64,
    /// test metrics as `(k, recall, ndcg)`
    pub test: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    /// index of the row with the best validation Recall@20
    pub best: usize,
    pub file: PathBuf,
}

/// Index of the largest value; the earliest wins ties.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn sweep_csv(rows: &[SweepRow], best: usize) -> String {
    let mut out = String::from("hyper_num,lambda_hc,lambda_ghc,best_epoch,val_recall20");
    if let Some(first) = rows.first() {
        for (k, _, _) in &first.test {
            write!(out, ",test_recall{k},test_ndcg{k}").unwrap();
        }
    }
    out.push_str(",best\n");
    for (i, r) in rows.iter().enumerate() {
        write!(
            out,
            "{},{:e},{:e},{},{:.6}",
            r.hyper_num, r.lambda_hc, r.lambda_ghc, r.best_epoch, r.val_recall20
        )
        .unwrap();
        for (_, recall, ndcg) in &r.test {
            write!(out, ",{recall:.6},{ndcg:.6}").unwrap();
        }
        out.push_str(if i == best { ",*\n" } else { ",\n" });
    }
    out
}

/// One training run plus test evaluation per grid cell, all on one split.
pub fn cmd_sweep(settings: &Settings) -> Result<SweepSummary> {
    let base = settings.train_config()?;
    let grid = settings.sweep_grid()?;
    let ks = settings.ks()?;
    let data = load_data(settings)?;
    let dir = settings.out_dir();
    create_dir(&dir)?;

    let cells = grid.cells();
    let mut rows = Vec::with_capacity(cells.len());
    for (idx, &(hyper_num, lambda_hc, lambda_ghc)) in cells.iter().enumerate() {
        let cfg = TrainConfig {
            hyper_num,
            lambda_hc,
            lambda_ghc,
            ..base.clone()
        };
        log::info!(
            "sweep cell {}/{}: hyper_num={hyper_num} lambda_hc={lambda_hc:e} lambda_ghc={lambda_ghc:e}",
            idx + 1,
            cells.len()
        );
        let outcome = fit(&data.dataset, &data.features, &cfg)?;
        let opts = EvalOptions {
            ks: ks.clone(),
            cold_start_threshold: settings.cold_start_threshold()?,
            ..EvalOptions::default()
        };
        let report = evaluate(&outcome.params, &outcome.views, &data.dataset, &cfg, &opts)?;
        rows.push(SweepRow {
            hyper_num,
            lambda_hc,
            lambda_ghc,
            best_epoch: outcome.best_epoch,
            val_recall20: outcome.best_val_recall,
            test: report
                .metrics
                .iter()
                .map(|m| (m.k, m.recall, m.ndcg))
                .collect(),
        });
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.val_recall20).collect();
    let best = argmax_first(&vals).expect("grid is non-empty");
    let file = dir.join(SWEEP_FILE);
    write_text(&file, &sweep_csv(&rows, best))?;
    Ok(SweepSummary { rows, best, file })
}
