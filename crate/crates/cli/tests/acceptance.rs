//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Runs as a plain binary so that lines appear in order and are
//! never captured.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mhcr_cli::commands::{cmd_evaluate, cmd_generate, cmd_train, CHECKPOINT_FILE};
use mhcr_cli::config::Settings;
use mhcr_core::dataio::{
    generate_synthetic, split_dataset, InteractionDataset, Modality, ModalityFeatures, Split,
    SplitRatios, SyntheticConfig,
};
use mhcr_core::evaluation::{evaluate, evaluate_embeddings, ndcg_at_k, EvalOptions, Slice};
use mhcr_core::hypergraph::{build_incidence, hypergraph_pass};
use mhcr_core::item_graph::build_affinity_graph;
use mhcr_core::objectives::{bpr_loss, graph_hyper_contrastive_loss, hyper_contrastive_loss};
use mhcr_core::training::{
    batch_loss, derive_seed, fit, loss_and_grads, sample_step_masks, stream_rng, TrainConfig,
    SPLIT_STREAM,
};
use mhcr_core::ui_graph::{build_norm_adjacency, propagate_ui};
use mhcr_core::SparseRowMatrix;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_STEP: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_ABS_TOL: f64 = 1e-6;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(10);
const PROPAGATION_TOL: f64 = 1e-6;
const PROPAGATION_TIME_LIMIT: Duration = Duration::from_secs(5);
const LOSS_TOL: f64 = 1e-5;
const NDCG_TOL: f64 = 1e-5;
const DROPOUT_DRAWS: u64 = 10_000;
const DROPOUT_SE_BOUND: f64 = 3.0;
const LEARNING_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const LEARNING_MIN_WINS: usize = 4;
const LEARNING_TIME_LIMIT: Duration = Duration::from_secs(600);
const MICROLENS_ENV: &str = "MHCR_MICROLENS_DIR";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let cfg = common::micro_config();
    let (views, params) = common::micro_setup(&cfg, 1);
    let mut rng = stream_rng(1, 7);
    let masks = sample_step_masks(&mut rng, &views, &cfg);
    let batch = common::micro_batch();
    let (_, grads) = loss_and_grads(&params, &views, &cfg, &batch, &masks).unwrap();

    let mut checked = 0;
    let mut worst = (0.0f64, String::new());
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let g = grads.tensors()[t].1.clone();
        for ((r, c), &analytic) in g.indexed_iter() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t][[r, c]] += delta;
                batch_loss(&p, &views, &cfg, &batch, &masks).unwrap().total
            };
            let numeric = (eval(GRAD_STEP) - eval(-GRAD_STEP)) / (2.0 * GRAD_STEP);
            let allowed = (GRAD_REL_TOL * analytic.abs().max(numeric.abs())).max(GRAD_ABS_TOL);
            let ratio = (analytic - numeric).abs() / allowed;
            if ratio > worst.0 {
                worst = (ratio, format!("{name}[{r},{c}]"));
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst.0 <= 1.0 && elapsed < GRAD_TIME_LIMIT,
        format!(
            "{checked} entries over {} tensors, worst error {:.3} of tolerance at {}, {:.2}s",
            names.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn dense_ui_oracle(
    nu: usize,
    ni: usize,
    edges: &[(usize, usize)],
    e0: &Array2<f64>,
    layers: usize,
) -> Array2<f64> {
    let n = nu + ni;
    let mut du = vec![0.0f64; nu];
    let mut di = vec![0.0; ni];
    for &(u, i) in edges {
        du[u] += 1.0;
        di[i] += 1.0;
    }
    let mut a = Array2::<f64>::zeros((n, n));
    for &(u, i) in edges {
        let w = 1.0 / (du[u] * di[i]).sqrt();
        a[[u, nu + i]] = w;
        a[[nu + i, u]] = w;
    }
    let mut sum = e0.clone();
    let mut power = e0.clone();
    for _ in 0..layers {
        power = a.dot(&power);
        sum += &power;
    }
    sum
}

fn propagation_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ui_err = 0.0f64;
    let mut hyper_err = 0.0f64;
    let mut knn_mismatches = 0usize;

    for trial in 0..20 {
        // user-item propagation on up to 20 nodes
        let (nu, ni) = (rng.random_range(2..=8), rng.random_range(2..=12));
        let mut edges = Vec::new();
        for u in 0..nu {
            for i in 0..ni {
                if rng.random::<f64>() < 0.35 || i == u % ni {
                    edges.push((u, i));
                }
            }
        }
        let (ds, _) = InteractionDataset::new(nu, ni, edges.clone()).unwrap();
        let graph = build_norm_adjacency(&ds).unwrap();
        let e0 = random_matrix(&mut rng, nu + ni, 4);
        let layers = trial % 4;
        let got = propagate_ui(&graph, &e0.view(), layers).unwrap();
        ui_err = ui_err.max(max_abs_diff(
            &got,
            &dense_ui_oracle(nu, ni, &edges, &e0, layers),
        ));

        // hypergraph message passing without dropout
        let (dm, k, d) = (3, rng.random_range(1..=4), 4);
        let features = random_matrix(&mut rng, ni, dm);
        let hyperedges = random_matrix(&mut rng, k, dm);
        let mut x = Array2::<f64>::zeros((nu, ni));
        for &(u, i) in &edges {
            x[[u, i]] = 1.0;
        }
        let triplets: Vec<(usize, usize, f64)> = edges.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        let xs = SparseRowMatrix::from_triplets(nu, ni, triplets).unwrap();
        let pair =
            build_incidence(Modality::Image, &features.view(), &hyperedges.view(), &xs).unwrap();
        let items_in = random_matrix(&mut rng, ni, d);
        let steps = 1 + trial % 3;
        let out = hypergraph_pass(&pair, &items_in.view(), 0.0, steps, 0).unwrap();
        let h_i = features.dot(&hyperedges.t());
        let h_u = x.dot(&h_i);
        let mut state = items_in.clone();
        let mut users = Array2::zeros((nu, d));
        for _ in 0..steps {
            users = h_u.dot(&h_i.t().dot(&state));
            state = h_i.dot(&h_i.t().dot(&state));
        }
        hyper_err = hyper_err.max(max_abs_diff(&out.items, &state));
        hyper_err = hyper_err.max(max_abs_diff(&out.users, &users));

        // KNN sparsification against a full sort, with duplicated items
        // forcing exact similarity ties
        let n = 50;
        let mut f = random_matrix(&mut rng, n, 6);
        for dup in [7, 19, 33] {
            let src = f.row(dup - 1).to_owned();
            f.row_mut(dup).assign(&src);
        }
        let kk = 1 + trial % 8;
        let feats = ModalityFeatures::new(Modality::Text, f.clone()).unwrap();
        let g = build_affinity_graph(&feats, kk).unwrap();
        let norms: Vec<f64> = f.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        for i in 0..n {
            let mut cands: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dot: f64 = (0..6).map(|c| f[[i, c]] * f[[j, c]]).sum();
                    (j, dot / (norms[i] * norms[j]))
                })
                .collect();
            cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut want: Vec<usize> = cands
                .iter()
                .take(kk)
                .filter(|c| c.1 > 0.0)
                .map(|c| c.0)
                .collect();
            want.sort_unstable();
            let got: Vec<usize> = g.matrix().row(i).map(|(j, _)| j).collect();
            if got != want {
                knn_mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        ui_err <= PROPAGATION_TOL
            && hyper_err <= PROPAGATION_TOL
            && knn_mismatches == 0
            && elapsed < PROPAGATION_TIME_LIMIT,
        format!(
            "20 trials: propagate_ui max error {ui_err:.2e}, hypergraph_pass max error \
             {hyper_err:.2e}, KNN rows differing from full sort {knn_mismatches}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_closed_forms() -> Verdict {
    let ln2 = std::f64::consts::LN_2;
    let bpr = bpr_loss(&[0.4], &[0.4]).unwrap();
    let same = array![[0.3, -1.2, 0.5], [0.3, -1.2, 0.5]];
    let hc_same = hyper_contrastive_loss(&[same.view(), same.view()], &[0, 1], 0.2).unwrap();
    // each node agrees with itself across modalities and is orthogonal to
    // the other node
    let aligned = array![[1.0, 0.0], [0.0, 1.0]];
    let hc_aligned =
        hyper_contrastive_loss(&[aligned.view(), aligned.view()], &[0, 1], 0.2).unwrap();
    let hc_batch_sum = 2.0 * hc_aligned;
    let ghc = graph_hyper_contrastive_loss(&aligned.view(), &aligned.view(), &[0, 1], 0.2).unwrap();

    let checks = [
        ("bpr pos=neg", bpr, ln2),
        ("hc identical", hc_same, ln2),
        ("hc aligned (batch sum)", hc_batch_sum, 0.013436),
        ("hc aligned (batch mean)", hc_aligned, 0.006715),
        ("ghc diagonal", ghc, 0.006715),
    ];
    let worst = checks
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let detail = checks
        .iter()
        .map(|(name, got, _)| format!("{name} {got:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        worst <= LOSS_TOL,
        format!("{detail}; max deviation {worst:.1e}"),
    )
}

/// Ranking by full sort, written without the evaluation module.
fn brute_force_metrics(
    users: &Array2<f64>,
    items: &Array2<f64>,
    ds: &InteractionDataset,
    cold_only: bool,
    k: usize,
) -> (f64, f64, usize) {
    let (nu, ni) = (ds.num_users(), ds.num_items());
    let mut train = vec![vec![false; ni]; nu];
    let mut val = vec![vec![false; ni]; nu];
    let mut test = vec![Vec::new(); nu];
    let mut train_count = vec![0; nu];
    for (&(u, i), &s) in ds.interactions().iter().zip(ds.splits()) {
        match s {
            Split::Train => {
                train[u][i] = true;
                train_count[u] += 1;
            }
            Split::Val => val[u][i] = true,
            Split::Test => test[u].push(i),
        }
    }
    let (mut recall, mut ndcg, mut count) = (0.0, 0.0, 0);
    for u in 0..nu {
        if test[u].is_empty() || (cold_only && train_count[u] >= 3) {
            continue;
        }
        let mut ranked: Vec<(usize, f64)> = (0..ni)
            .filter(|&i| !train[u][i] && !val[u][i])
            .map(|i| {
                (
                    i,
                    (0..users.ncols())
                        .map(|c| users[[u, c]] * items[[i, c]])
                        .sum(),
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top: Vec<usize> = ranked.iter().take(k).map(|r| r.0).collect();
        let hits = top.iter().filter(|i| test[u].contains(i)).count();
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, i)| test[u].contains(i))
            .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..test[u].len().min(k))
            .map(|pos| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        recall += hits as f64 / test[u].len() as f64;
        ndcg += dcg / idcg;
        count += 1;
    }
    let denom = count.max(1) as f64;
    (recall / denom, ndcg / denom, count)
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut compared = 0;
    let mut mismatches = 0;
    for trial in 0..10 {
        let (nu, ni) = (20, 30);
        let mut pairs = Vec::new();
        for u in 0..nu {
            let n = rng.random_range(1..=10);
            for _ in 0..n {
                pairs.push((u, rng.random_range(0..ni)));
            }
        }
        let (raw, _) = InteractionDataset::new(nu, ni, pairs).unwrap();
        let (ds, _) = split_dataset(&raw, SplitRatios::default(), trial).unwrap();
        // small integers make every score exact and produce many ties
        let mut int_matrix =
            |rows| Array2::from_shape_simple_fn((rows, 3), || rng.random_range(-2i32..=2) as f64);
        let users = int_matrix(nu);
        let items = int_matrix(ni);
        for (slice, cold) in [(Slice::All, false), (Slice::ColdStart, true)] {
            let ks = vec![1, 5, 10, 20];
            let opts = EvalOptions {
                slice,
                target: Split::Test,
                ks: ks.clone(),
                cold_start_threshold: 3,
            };
            let report = evaluate_embeddings(&users.view(), &items.view(), &ds, &opts).unwrap();
            for m in &report.metrics {
                let (r, n, count) = brute_force_metrics(&users, &items, &ds, cold, m.k);
                compared += 1;
                if r != m.recall || n != m.ndcg || count != report.users_evaluated {
                    mismatches += 1;
                }
            }
        }
    }
    let rank2 = ndcg_at_k(&[7, 3, 9], &[3]);
    verdict(
        mismatches == 0 && (rank2 - 0.63093).abs() <= NDCG_TOL,
        format!(
            "{compared} (slice, K) reports over 10 instances of 20 users, {mismatches} differ \
             from brute force; ndcg single hit at rank 2 = {rank2:.6}"
        ),
    )
}

fn dropout_unbiasedness() -> Verdict {
    // 3 items, 2 hyperedges, 2 users
    let features = array![[1.0, 0.5], [-0.3, 0.8], [0.6, -0.4]];
    let hyperedges = array![[0.7, -0.2], [0.1, 0.9]];
    let xs = SparseRowMatrix::from_triplets(
        2,
        3,
        vec![(0, 0, 1.0), (0, 2, 1.0), (1, 1, 1.0), (1, 2, 1.0)],
    )
    .unwrap();
    let pair = build_incidence(Modality::Image, &features.view(), &hyperedges.view(), &xs).unwrap();
    let items_in = array![[0.5, -1.0], [1.5, 0.2], [-0.7, 0.9]];
    let exact = hypergraph_pass(&pair, &items_in.view(), 0.0, 1, 0).unwrap();

    let flat = |o: &mhcr_core::hypergraph::HyperOutput| -> Vec<f64> {
        o.items.iter().chain(o.users.iter()).copied().collect()
    };
    let target = flat(&exact);
    let mut sum = vec![0.0; target.len()];
    let mut sum_sq = vec![0.0; target.len()];
    for seed in 0..DROPOUT_DRAWS {
        let out = hypergraph_pass(&pair, &items_in.view(), 0.5, 1, seed).unwrap();
        for (j, v) in flat(&out).into_iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let n = DROPOUT_DRAWS as f64;
    let mut worst = 0.0f64;
    for j in 0..target.len() {
        let mean = sum[j] / n;
        let var = (sum_sq[j] / n - mean * mean) * n / (n - 1.0);
        let se = (var / n).sqrt();
        worst = worst.max((mean - target[j]).abs() / se);
    }
    verdict(
        worst <= DROPOUT_SE_BOUND,
        format!(
            "{DROPOUT_DRAWS} draws at drop rate 0.5, {} outputs, worst deviation {worst:.2} standard errors",
            target.len()
        ),
    )
}

struct SeedResult {
    seed: u64,
    mhcr: f64,
    no_hem: f64,
    mf: f64,
    mhcr_cold: f64,
    mf_cold: f64,
}

fn learning_base() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

fn run_learning_seeds() -> (Vec<SeedResult>, Duration) {
    let start = Instant::now();
    let mut results = Vec::new();
    for &seed in &LEARNING_SEEDS {
        let syn = generate_synthetic(&SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (ds, _) = split_dataset(
            &syn.dataset,
            SplitRatios::default(),
            derive_seed(seed, SPLIT_STREAM),
        )
        .unwrap();
        let base = TrainConfig {
            seed,
            ..learning_base()
        };
        let variants = [
            base.clone(),
            TrainConfig {
                flags: mhcr_core::AblationFlags::without("hem").unwrap(),
                ..base.clone()
            },
            TrainConfig::bpr_mf(&base),
        ];
        let mut all = Vec::new();
        let mut cold = Vec::new();
        for cfg in &variants {
            let out = fit(&ds, &syn.features, cfg).unwrap();
            for (slice, dst) in [(Slice::All, &mut all), (Slice::ColdStart, &mut cold)] {
                let opts = EvalOptions {
                    slice,
                    ..EvalOptions::default()
                };
                let report = evaluate(&out.params, &out.views, &ds, cfg, &opts).unwrap();
                dst.push(report.recall_at(20));
            }
        }
        results.push(SeedResult {
            seed,
            mhcr: all[0],
            no_hem: all[1],
            mf: all[2],
            mhcr_cold: cold[0],
            mf_cold: cold[2],
        });
    }
    (results, start.elapsed())
}

fn learning_signal(results: &[SeedResult], elapsed: Duration) -> Verdict {
    let beats_no_hem = results.iter().filter(|r| r.mhcr > r.no_hem).count();
    let beats_mf = results.iter().filter(|r| r.mhcr > r.mf).count();
    let per_seed = results
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:.4} / {:.4} / {:.4}",
                r.seed, r.mhcr, r.no_hem, r.mf
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        beats_no_hem >= LEARNING_MIN_WINS
            && beats_mf >= LEARNING_MIN_WINS
            && elapsed < LEARNING_TIME_LIMIT,
        format!(
            "test Recall@20 MHCR / w/o HEM / BPR-MF: {per_seed}; beats w/o HEM in {beats_no_hem}/5, \
             BPR-MF in {beats_mf}/5, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn cold_start_direction(results: &[SeedResult]) -> Verdict {
    let wins = results.iter().filter(|r| r.mhcr_cold >= r.mf_cold).count();
    let per_seed = results
        .iter()
        .map(|r| format!("seed {}: {:.4} vs {:.4}", r.seed, r.mhcr_cold, r.mf_cold))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        wins >= LEARNING_MIN_WINS,
        format!("cold-start Recall@20 MHCR vs BPR-MF: {per_seed}; MHCR >= BPR-MF in {wins}/5"),
    )
}

fn settings(pairs: &[(&str, &str)]) -> Settings {
    let mut s = Settings::default();
    for (k, v) in pairs {
        s.set(k, *v).unwrap();
    }
    s
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_generate(&settings(&[
        ("out_dir", data.to_str().unwrap()),
        ("num_users", "300"),
        ("num_items", "120"),
        ("seed", "13"),
    ]))
    .unwrap();
    let train = |name: &str| {
        let out = tmp.path().join(name);
        cmd_train(&settings(&[
            ("data_dir", data.to_str().unwrap()),
            ("out_dir", out.to_str().unwrap()),
            ("dim", "16"),
            ("hyper_num", "8"),
            ("max_epochs", "3"),
            ("learning_rate", "0.01"),
            ("seed", "13"),
            ("threads", "1"),
        ]))
        .unwrap();
        fs::read(out.join(CHECKPOINT_FILE)).unwrap()
    };
    let a = train("a");
    let b = train("b");
    verdict(
        a == b,
        format!(
            "two cmd_train runs, checkpoints of {} and {} bytes, identical: {}",
            a.len(),
            b.len(),
            a == b
        ),
    )
}

fn microlens_pipeline() -> Verdict {
    let Ok(dir) = std::env::var(MICROLENS_ENV) else {
        return Verdict::Skip(format!(
            "set {MICROLENS_ENV} to a directory with interactions.tsv and features_<modality>.bin"
        ));
    };
    let out = tempfile::tempdir().unwrap();
    let s = settings(&[
        ("data_dir", dir.as_str()),
        ("out_dir", out.path().to_str().unwrap()),
        ("max_epochs", "5"),
    ]);
    let run = || -> mhcr_core::Result<String> {
        cmd_train(&s)?;
        let eval = cmd_evaluate(&s)?;
        let all = &eval.reports[0];
        Ok(format!(
            "Recall@10 {:.4}, Recall@20 {:.4} over {} users",
            all.recall_at(10),
            all.recall_at(20),
            all.users_evaluated
        ))
    };
    if !Path::new(&dir).is_dir() {
        return Verdict::Fail(format!("{dir} is not a directory"));
    }
    match run() {
        Ok(detail) => Verdict::Pass(detail),
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; this suite has no filters
    let mut failures = 0;
    let mut report = |name: &str, v: Verdict| {
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    };
    report("gradient correctness", gradient_correctness());
    report("propagation oracles", propagation_oracles());
    report("loss closed forms", loss_closed_forms());
    report("metric oracle", metric_oracle());
    report("dropout unbiasedness", dropout_unbiasedness());
    let (results, elapsed) = run_learning_seeds();
    report("learning signal", learning_signal(&results, elapsed));
    report("cold-start direction", cold_start_direction(&results));
    report("determinism", determinism());
    report("MicroLens pipeline (optional)", microlens_pipeline());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
