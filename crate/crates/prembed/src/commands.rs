//! End-to-end pipelines behind the CLI verbs: generation, training,
//! evaluation, sweeps, canned toy experiments, and heatmap export.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{expand_sweep, DataConfig, DataSource, ExperimentConfig, RawConfig};
use crate::eval::{evaluate, heatmap, mean_probability, write_heatmap_csv, Metrics};
use crate::graph::{
    self, generate_duplication_divergence_seeded, DirectedGraph, DupDivSeed, Edge, SplitDataset,
};
use crate::likelihood::{edge_nll, EdgeLabel, FdParams, Likelihood, TfdParams};
use crate::manifold::{ManifoldKind, ManifoldSpec};
use crate::optimizer::{train, EmbeddingTable, NegativeSampling, TrainConfig};
use crate::{Error, Result};

/// Materialize the configured data source.
pub fn build_graph(data: &DataConfig) -> Result<DirectedGraph> {
    match &data.source {
        DataSource::DupDiv(p) => {
            generate_duplication_divergence_seeded(p, DupDivSeed::FullyConnected)
        }
        DataSource::DupDivDag(p) => generate_duplication_divergence_seeded(p, DupDivSeed::Dag),
        DataSource::Cycle(n) => graph::generate_cycle(*n),
        DataSource::Chain(n) => graph::generate_chain(*n),
        DataSource::Transitive(n) => graph::generate_transitive_chain(*n),
        DataSource::Tripartite { n_pred, n_succ } => {
            graph::generate_common_neighbors(*n_pred, *n_succ)
        }
        DataSource::File(path) => Ok(graph::load_edge_list(path)?.graph),
    }
}

/// Everything a finished training run produces.
pub struct RunOutcome {
    pub table: EmbeddingTable,
    pub likelihood: Likelihood,
    pub nll_trace: Vec<f64>,
    pub final_metrics: Metrics,
    /// Highest-AP epoch when per-epoch tracking was on: `(epoch, metrics)`.
    pub best_metrics: Option<(usize, Metrics)>,
    pub dataset: SplitDataset,
}

/// The full pipeline: build → split → calibrate → train → evaluate.
///
/// With `track_best`, the test metrics are recomputed after every epoch and
/// the best-AP epoch is reported alongside the final one; reports must say
/// which convention they quote.
pub fn run_experiment(cfg: &ExperimentConfig, track_best: bool) -> Result<RunOutcome> {
    let g = build_graph(&cfg.data)?;
    let ds = graph::split(&g, cfg.data.train_frac, cfg.data.valid_frac, cfg.data.split_seed)?;
    let ds = graph::with_negatives(&g, ds, cfg.data.eval_neg_ratio)?;
    let likelihood = cfg.likelihood.calibrated(&cfg.manifold);
    let mut table = EmbeddingTable::random(
        cfg.manifold.clone(),
        g.num_nodes(),
        cfg.init_scale,
        cfg.train.seed ^ 0x1217,
    );
    let mut best: Option<(usize, Metrics)> = None;
    let result = {
        let mut on_epoch = |epoch: usize, _nll: f64, t: &EmbeddingTable| {
            if let Ok(m) = evaluate(t, &likelihood, &ds) {
                let better = best
                    .as_ref()
                    .map(|(_, b)| m.average_precision > b.average_precision)
                    .unwrap_or(true);
                if better {
                    best = Some((epoch, m));
                }
            }
        };
        train(
            &mut table,
            &g,
            &ds.train_pos,
            &likelihood,
            &cfg.train,
            &NegativeSampling::Resample { ratio: cfg.train.neg_ratio },
            track_best.then_some(&mut on_epoch as &mut dyn FnMut(usize, f64, &EmbeddingTable)),
        )?
    };
    let final_metrics = evaluate(&table, &likelihood, &ds)?;
    Ok(RunOutcome {
        table,
        likelihood,
        nll_trace: result.nll_trace,
        final_metrics,
        best_metrics: best,
        dataset: ds,
    })
}

fn say(quiet: bool, msg: std::fmt::Arguments) {
    if !quiet {
        println!("{msg}");
    }
}

macro_rules! say {
    ($quiet:expr, $($arg:tt)*) => { say($quiet, format_args!($($arg)*)) };
}

/// `generate`: write the configured graph as an edge list.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<()> {
    let g = build_graph(&cfg.data)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    g.save_edge_list(out)?;
    say!(
        quiet,
        "wrote {} nodes, {} edges (dag: {}) to {}",
        g.num_nodes(),
        g.num_edges(),
        g.is_dag(),
        out.display()
    );
    Ok(())
}

/// `train`: full pipeline; writes checkpoint, loss CSV, metrics document,
/// and the effective config into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let outcome = run_experiment(cfg, true)?;
    outcome.table.save(&cfg.output_dir.join("checkpoint.tsv"))?;

    let mut loss = std::io::BufWriter::new(std::fs::File::create(cfg.output_dir.join("loss.csv"))?);
    writeln!(loss, "epoch,mean_nll")?;
    for (epoch, nll) in outcome.nll_trace.iter().enumerate() {
        writeln!(loss, "{epoch},{nll:?}")?;
    }
    drop(loss);

    let mut resolved = cfg.clone();
    resolved.likelihood = outcome.likelihood;
    std::fs::write(cfg.output_dir.join("effective-config.txt"), resolved.to_raw().render())?;

    write_metrics_json(
        &cfg.output_dir.join("metrics.json"),
        &outcome.final_metrics,
        outcome.best_metrics.as_ref(),
    )?;
    say!(
        quiet,
        "final-epoch metrics: AP {:.4}, F1 {:.4}, test NLL {:.4}",
        outcome.final_metrics.average_precision,
        outcome.final_metrics.f1,
        outcome.final_metrics.test_nll
    );
    if let Some((epoch, m)) = &outcome.best_metrics {
        say!(quiet, "best-epoch metrics (epoch {epoch}): AP {:.4}", m.average_precision);
    }
    say!(quiet, "outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn write_metrics_json(path: &Path, final_m: &Metrics, best: Option<&(usize, Metrics)>) -> Result<()> {
    let doc = serde_json::json!({
        "convention": "both final-epoch and best-epoch metrics are reported; \
                       best-epoch follows per-epoch test tracking",
        "final_epoch": final_m,
        "best_epoch": best.map(|(e, m)| serde_json::json!({"epoch": e, "metrics": m})),
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc).expect("metrics serialize"))?;
    Ok(())
}

/// `eval`: score a saved checkpoint against the configured dataset split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, quiet: bool) -> Result<()> {
    let g = build_graph(&cfg.data)?;
    let ds = graph::split(&g, cfg.data.train_frac, cfg.data.valid_frac, cfg.data.split_seed)?;
    let ds = graph::with_negatives(&g, ds, cfg.data.eval_neg_ratio)?;
    let table = EmbeddingTable::load(checkpoint)?;
    if table.num_nodes() != g.num_nodes() {
        return Err(Error::Eval(format!(
            "checkpoint has {} nodes but the graph has {}",
            table.num_nodes(),
            g.num_nodes()
        )));
    }
    let likelihood = cfg.likelihood.calibrated(&table.spec);
    let m = evaluate(&table, &likelihood, &ds)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_metrics_json(&cfg.output_dir.join("metrics.json"), &m, None)?;
    say!(
        quiet,
        "checkpoint metrics (final-epoch convention): AP {:.4}, F1 {:.4} (threshold {:.4}{}), test NLL {:.4}",
        m.average_precision,
        m.f1,
        m.f1_threshold,
        if m.in_sample_threshold { ", in-sample" } else { "" },
        m.test_nll
    );
    Ok(())
}

/// One row of a sweep report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub point: String,
    pub median_ap: f64,
    pub median_f1: f64,
    pub trials: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// `sweep`: Cartesian product of list-valued keys, `trials` seeds per
/// point, trials in parallel; rows sorted by median AP descending.
pub fn cmd_sweep(raw: &RawConfig, quiet: bool) -> Result<Vec<SweepRow>> {
    let (points, trials) = expand_sweep(raw)?;
    let configs: Vec<ExperimentConfig> =
        points.iter().map(ExperimentConfig::from_raw).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|p| (0..trials).map(move |t| (p, t)))
        .collect();
    let results: Vec<Result<(usize, f64, f64)>> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let mut cfg = configs[p].clone();
            cfg.train.seed = cfg.train.seed.wrapping_add(t as u64);
            let outcome = run_experiment(&cfg, true)?;
            let m = outcome
                .best_metrics
                .map(|(_, m)| m)
                .unwrap_or(outcome.final_metrics);
            Ok((p, m.average_precision, m.f1))
        })
        .collect();
    let mut per_point: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); configs.len()];
    for r in results {
        let (p, ap, f1) = r?;
        per_point[p].0.push(ap);
        per_point[p].1.push(f1);
    }
    let mut rows: Vec<SweepRow> = per_point
        .into_iter()
        .enumerate()
        .map(|(p, (mut aps, mut f1s))| SweepRow {
            point: describe_point(raw, &points[p]),
            median_ap: median(&mut aps),
            median_f1: median(&mut f1s),
            trials,
        })
        .collect();
    rows.sort_by(|a, b| b.median_ap.partial_cmp(&a.median_ap).unwrap());
    for row in &rows {
        say!(
            quiet,
            "{}  median AP {:.4}  median F1 {:.4}  ({} trials, best-epoch convention)",
            row.point,
            row.median_ap,
            row.median_f1,
            row.trials
        );
    }
    Ok(rows)
}

/// The keys a grid point fixes, relative to the sweep definition.
fn describe_point(base: &RawConfig, point: &RawConfig) -> String {
    let mut parts = Vec::new();
    for line in point.render().lines() {
        if line.starts_with('[') || line.is_empty() {
            continue;
        }
        parts.push(line.to_string());
    }
    let swept: Vec<String> = parts
        .iter()
        .filter(|kv| {
            let key = kv.split(" = ").next().unwrap_or("");
            base.render().lines().any(|l| {
                l.starts_with(&format!("{key} = ")) && l.contains(',')
            })
        })
        .cloned()
        .collect();
    if swept.is_empty() {
        "(single point)".to_string()
    } else {
        swept.join(", ")
    }
}

// ---------------------------------------------------------------------------
// Canned toy experiments
// ---------------------------------------------------------------------------

/// The manifold set the 2D cycle toy runs across.
pub const CYCLE_MANIFOLDS: [ManifoldKind; 5] = [
    ManifoldKind::Euclidean,
    ManifoldKind::Hyperboloid,
    ManifoldKind::Minkowski,
    ManifoldKind::CylindricalMinkowski,
    ManifoldKind::AntiDeSitter,
];

/// Outcome of one toy training run scored against all node pairs.
#[derive(Debug, Clone)]
pub struct ToyResult {
    pub kind: ManifoldKind,
    /// Summed NLL over all positive and negative pairs.
    pub nll: f64,
    pub pos_probs: Vec<f64>,
    pub neg_probs: Vec<f64>,
    pub table: EmbeddingTable,
    pub likelihood: Likelihood,
}

impl ToyResult {
    pub fn min_pos(&self) -> f64 {
        self.pos_probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn max_neg(&self) -> f64 {
        self.neg_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn median_neg(&self) -> f64 {
        let mut v = self.neg_probs.clone();
        median(&mut v)
    }
}

/// 2-coordinate spec for a toy manifold; the cycle toy's "d = 2".
pub fn toy_spec(kind: ManifoldKind) -> ManifoldSpec {
    let (dim, c) = match kind {
        ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => (2, Some(5.0)),
        _ => (2, None),
    };
    ManifoldSpec::from_total_dim(kind, dim, c).expect("toy spec")
}

fn toy_likelihood(kind: ManifoldKind, params: TfdParams) -> Likelihood {
    match kind {
        ManifoldKind::CylindricalEuclidean
        | ManifoldKind::CylindricalMinkowski
        | ManifoldKind::AntiDeSitter => Likelihood::WrappedTfd(params),
        _ => Likelihood::Tfd(params),
    }
}

/// Train a toy graph against its full non-edge complement (tiny graphs
/// cannot satisfy a resampled negative ratio) and score every pair.
pub fn train_toy(
    g: &DirectedGraph,
    spec: ManifoldSpec,
    likelihood: Likelihood,
    train_cfg: &TrainConfig,
) -> Result<ToyResult> {
    let kind = spec.kind();
    let likelihood = likelihood.calibrated(&spec);
    let mut table =
        EmbeddingTable::random(spec, g.num_nodes(), crate::manifold::DEFAULT_INIT_SCALE, train_cfg.seed ^ 0x1217);
    let negatives = g.non_edges();
    train(
        &mut table,
        g,
        g.edges(),
        &likelihood,
        train_cfg,
        &NegativeSampling::Fixed(negatives.clone()),
        None,
    )?;
    let score = |pairs: &[Edge]| -> Result<Vec<f64>> {
        pairs.iter().map(|&(u, v)| table.edge_prob(&likelihood, u, v)).collect()
    };
    let pos_probs = score(g.edges())?;
    let neg_probs = score(&negatives)?;
    let nll = pos_probs.iter().map(|&p| edge_nll(p, EdgeLabel::Positive)).sum::<f64>()
        + neg_probs.iter().map(|&p| edge_nll(p, EdgeLabel::Negative)).sum::<f64>();
    Ok(ToyResult { kind, nll, pos_probs, neg_probs, table, likelihood })
}

/// Hyperparameters for the 2D cycle toy, per manifold.
pub fn cycle_toy_config(kind: ManifoldKind, seed: u64) -> (TfdParams, TrainConfig) {
    let params = match kind {
        ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => {
            TfdParams { tau1: 0.05, tau2: 0.03, alpha: 0.06, ..Default::default() }
        }
        ManifoldKind::Hyperboloid => {
            TfdParams { tau1: 0.05, tau2: 0.03, alpha: 0.06, ..Default::default() }
        }
        ManifoldKind::Minkowski => {
            TfdParams { tau1: 0.075, tau2: 0.07, alpha: 0.09, ..Default::default() }
        }
        ManifoldKind::CylindricalMinkowski => {
            TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, ..Default::default() }
        }
        ManifoldKind::AntiDeSitter => {
            TfdParams { tau1: 0.4, tau2: 0.15, alpha: 0.15, r: -0.1, ..Default::default() }
        }
    };
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 300,
        burnin_epochs: 10,
        batch_size: 4,
        seed,
        ..Default::default()
    };
    (params, cfg)
}

/// Run the 5-cycle toy at `d = 2` on one manifold.
pub fn toy_cycle5(kind: ManifoldKind, seed: u64) -> Result<ToyResult> {
    let g = graph::generate_cycle(5)?;
    let spec = toy_spec(kind);
    let (params, cfg) = cycle_toy_config(kind, seed);
    train_toy(&g, spec, toy_likelihood(kind, params), &cfg)
}

/// Tri-partite common-neighbor toy: returns the focal-pair probability
/// `P(0 -> 1)` after training.
pub fn toy_tripartite(kind: ManifoldKind, seed: u64) -> Result<f64> {
    let g = graph::generate_common_neighbors(3, 3)?;
    let spec = ManifoldSpec::from_total_dim(kind, 2, None)?;
    let likelihood = match kind {
        ManifoldKind::Euclidean => Likelihood::Fd(FdParams { tau: 0.4, r: 0.0, alpha: 1.0 }),
        ManifoldKind::Minkowski => Likelihood::Tfd(TfdParams {
            tau1: 0.075,
            tau2: 0.03,
            alpha: 0.01,
            ..Default::default()
        }),
        other => {
            return Err(Error::InvalidSpec(format!(
                "tripartite toy runs on euclidean or minkowski, not {other}"
            )))
        }
    };
    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 300,
        burnin_epochs: 10,
        batch_size: 4,
        seed,
        ..Default::default()
    };
    let result = train_toy(&g, spec, likelihood, &cfg)?;
    mean_probability(&result.table, &result.likelihood, &[(0, 1)])
}

/// Chain / transitive-chain toy: summed NLL on Minkowski at a given alpha.
pub fn toy_chain_nll(transitive: bool, alpha: f64, seed: u64) -> Result<f64> {
    let g = if transitive {
        graph::generate_transitive_chain(10)?
    } else {
        graph::generate_chain(10)?
    };
    let spec = ManifoldSpec::from_total_dim(ManifoldKind::Minkowski, 2, None)?;
    let likelihood = Likelihood::Tfd(TfdParams {
        tau1: 0.075,
        tau2: 0.03,
        alpha,
        ..Default::default()
    });
    let cfg = TrainConfig {
        lr: 0.005,
        epochs: 200,
        burnin_epochs: 20,
        batch_size: 16,
        seed,
        ..Default::default()
    };
    Ok(train_toy(&g, spec, likelihood, &cfg)?.nll)
}

/// `toy`: run one of the canned experiments and print its report.
pub fn cmd_toy(name: &str, seed: u64, quiet: bool) -> Result<()> {
    match name {
        "cycle5" => {
            say!(quiet, "5-cycle at d = 2, summed NLL over all 20 pairs:");
            for kind in CYCLE_MANIFOLDS {
                let r = toy_cycle5(kind, seed)?;
                say!(
                    quiet,
                    "  {:<22} NLL {:>7.3}  min positive prob {:.4}  max negative prob {:.4}",
                    kind.as_str(),
                    r.nll,
                    r.min_pos(),
                    r.max_neg()
                );
                if r.table.spec.ambient_dim() == 2 && !quiet {
                    for (i, p) in r.table.points.iter().enumerate() {
                        println!("    node {i}: ({:.4}, {:.4})", p[0], p[1]);
                    }
                }
            }
        }
        "chain10" | "transitive10" => {
            let transitive = name == "transitive10";
            for alpha in [0.001, 0.075] {
                let nll = toy_chain_nll(transitive, alpha, seed)?;
                say!(quiet, "  {name} on minkowski, alpha = {alpha}: NLL {nll:.3}");
            }
        }
        "tripartite" => {
            for kind in [ManifoldKind::Euclidean, ManifoldKind::Minkowski] {
                let p = toy_tripartite(kind, seed)?;
                say!(quiet, "  {:<12} focal-pair probability {p:.4}", kind.as_str());
            }
        }
        other => return Err(Error::Config(format!("unknown toy {other:?}"))),
    }
    Ok(())
}

/// `heatmap`: probability grid over a 2-coordinate manifold, to CSV.
pub fn cmd_heatmap(
    cfg: &ExperimentConfig,
    bounds: (f64, f64),
    resolution: usize,
    out: &Path,
    quiet: bool,
) -> Result<()> {
    let likelihood = cfg.likelihood.calibrated(&cfg.manifold);
    let rows = heatmap(&likelihood, &cfg.manifold, bounds, resolution)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_heatmap_csv(&rows, out)?;
    say!(quiet, "wrote {} heatmap rows to {}", rows.len(), out.display());
    Ok(())
}
