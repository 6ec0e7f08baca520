//! Pseudo-Riemannian SGD: batching, per-epoch negative sampling, burn-in,
//! linear learning-rate decay, chain-rule gradient assembly, and the
//! exponential-map update.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{sample_negatives, DirectedGraph, Edge};
use crate::likelihood::{EdgeLabel, Likelihood};
use crate::manifold::{
    self, accumulate_image_grad, descent_tangent, exp_map, interval_images, project_tangent,
    ManifoldSpec,
};
use crate::{Error, Result};

/// Abort when any coordinate grows past this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Longest descent tangent the optimizer will follow in one update.
pub const MAX_TANGENT_NORM: f64 = 200.0;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub burnin_epochs: usize,
    pub burnin_factor: f64,
    pub batch_size: usize,
    pub neg_ratio: u32,
    pub lr_final_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            epochs: 200,
            burnin_epochs: 10,
            burnin_factor: 0.01,
            batch_size: 2,
            neg_ratio: 4,
            lr_final_fraction: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0 < self.burnin_factor && self.burnin_factor <= 1.0) {
            return Err(Error::Config(format!(
                "burnin_factor must lie in (0, 1], got {}",
                self.burnin_factor
            )));
        }
        if !(0.0 < self.lr_final_fraction && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "lr_final_fraction must lie in (0, 1], got {}",
                self.lr_final_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for one epoch: `lr * burnin_factor` while burning in,
/// then linear decay from `lr` to `lr * lr_final_fraction` at the last
/// epoch.
pub fn epoch_lr(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} out of range for {} epochs",
            cfg.epochs
        )));
    }
    if epoch < cfg.burnin_epochs {
        return Ok(cfg.lr * cfg.burnin_factor);
    }
    let span = cfg.epochs.saturating_sub(cfg.burnin_epochs + 1);
    if span == 0 {
        return Ok(cfg.lr);
    }
    let frac = (epoch - cfg.burnin_epochs) as f64 / span as f64;
    Ok(cfg.lr * (1.0 - frac * (1.0 - cfg.lr_final_fraction)))
}

/// One embedded point per graph node.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub spec: ManifoldSpec,
    pub points: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Random initialization near the manifold origin.
    pub fn random(spec: ManifoldSpec, num_nodes: u32, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..num_nodes)
            .map(|_| manifold::random_point(&spec, scale, &mut rng))
            .collect();
        EmbeddingTable { spec, points }
    }

    pub fn num_nodes(&self) -> u32 {
        self.points.len() as u32
    }

    /// Edge probability under the likelihood for a node pair.
    pub fn edge_prob(&self, likelihood: &Likelihood, u: u32, v: u32) -> Result<f64> {
        let images = interval_images(
            &self.spec,
            &self.points[u as usize],
            &self.points[v as usize],
            likelihood.wrap_m(),
        )?;
        Ok(likelihood.prob(&images))
    }

    /// Mean NLL of labelled edges under the current embedding.
    pub fn mean_nll(&self, likelihood: &Likelihood, edges: &[(Edge, EdgeLabel)]) -> Result<f64> {
        if edges.is_empty() {
            return Err(Error::Eval("mean_nll over no edges".into()));
        }
        let mut partials = Vec::new();
        let mut total = 0.0;
        for &((u, v), label) in edges {
            let images = interval_images(
                &self.spec,
                &self.points[u as usize],
                &self.points[v as usize],
                likelihood.wrap_m(),
            )?;
            total += likelihood.nll_grad(&images, label, &mut partials);
        }
        Ok(total / edges.len() as f64)
    }

    /// Write the checkpoint format: a versioned header followed by one
    /// tab-separated full-precision coordinate line per node.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "prembed-checkpoint\t1")?;
        writeln!(f, "manifold\t{}", self.spec.kind())?;
        writeln!(f, "spatial_dim\t{}", self.spec.spatial_dim())?;
        match self.spec.circumference() {
            Some(c) => writeln!(f, "circumference\t{c:?}")?,
            None => writeln!(f, "circumference\tnone")?,
        }
        writeln!(f, "nodes\t{}", self.points.len())?;
        for p in &self.points {
            let line: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
            writeln!(f, "{}", line.join("\t"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines().enumerate();
        let mut field = |key: &str| -> Result<String> {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| Error::Parse { line: 0, msg: "truncated checkpoint".into() })?;
            let line = line?;
            let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected `{key}<TAB>value`"),
            })?;
            if k != key {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected key {key:?}, got {k:?}"),
                });
            }
            Ok(v.to_string())
        };
        let version = field("prembed-checkpoint")?;
        if version != "1" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let kind: manifold::ManifoldKind = field("manifold")?
            .parse()
            .map_err(|e: Error| Error::Parse { line: 2, msg: e.to_string() })?;
        let spatial: usize = field("spatial_dim")?
            .parse()
            .map_err(|e| Error::Parse { line: 3, msg: format!("bad spatial_dim: {e}") })?;
        let circ = match field("circumference")?.as_str() {
            "none" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|e| Error::Parse { line: 4, msg: format!("bad circumference: {e}") })?,
            ),
        };
        let nodes: usize = field("nodes")?
            .parse()
            .map_err(|e| Error::Parse { line: 5, msg: format!("bad node count: {e}") })?;
        let spec = ManifoldSpec::new(kind, spatial, circ)?;
        let mut points = Vec::with_capacity(nodes);
        for (lineno, line) in lines {
            let line = line?;
            let coords: std::result::Result<Vec<f64>, _> =
                line.split('\t').map(str::parse::<f64>).collect();
            let coords = coords.map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad coordinate: {e}"),
            })?;
            spec.validate_point(&coords)?;
            points.push(coords);
        }
        if points.len() != nodes {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected {nodes} points, found {}", points.len()),
            });
        }
        Ok(EmbeddingTable { spec, points })
    }
}

/// How training negatives are drawn each epoch.
#[derive(Debug, Clone)]
pub enum NegativeSampling {
    /// Fresh target-corrupted negatives per positive edge every epoch.
    Resample { ratio: u32 },
    /// A fixed set reused every epoch (tiny graphs where rejection
    /// sampling cannot meet the ratio).
    Fixed(Vec<Edge>),
}

pub struct TrainResult {
    /// Per-epoch mean training NLL.
    pub nll_trace: Vec<f64>,
}

/// Minimize the mean edge NLL by pseudo-Riemannian SGD.
///
/// Each epoch shuffles the positives together with that epoch's negatives,
/// then walks mini-batches: per-example gradients are assembled via the
/// chain rule (NLL partials per winding image times interval
/// differentials) and accumulated per touched node, and each touched node
/// takes a single exponential-map step per batch. The optional callback
/// runs after every epoch with the live table.
pub fn train(
    table: &mut EmbeddingTable,
    graph: &DirectedGraph,
    positives: &[Edge],
    likelihood: &Likelihood,
    cfg: &TrainConfig,
    negatives: &NegativeSampling,
    mut on_epoch: Option<&mut dyn FnMut(usize, f64, &EmbeddingTable)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    likelihood.validate()?;
    if positives.is_empty() {
        return Err(Error::Graph("no training edges".into()));
    }
    let dim = table.spec.ambient_dim();
    let n = table.points.len();
    let wrap_m = likelihood.wrap_m();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads = vec![vec![0.0f64; dim]; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut is_touched = vec![false; n];
    let mut partials: Vec<(f64, f64)> = Vec::new();
    let mut examples: Vec<(Edge, EdgeLabel)> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(cfg, epoch)?;
        examples.clear();
        examples.extend(positives.iter().map(|&e| (e, EdgeLabel::Positive)));
        match negatives {
            NegativeSampling::Resample { ratio } => {
                let neg_seed: u64 = rng.random();
                for e in sample_negatives(graph, positives, *ratio, neg_seed)? {
                    examples.push((e, EdgeLabel::Negative));
                }
            }
            NegativeSampling::Fixed(neg) => {
                examples.extend(neg.iter().map(|&e| (e, EdgeLabel::Negative)));
            }
        }
        examples.shuffle(&mut rng);

        let mut epoch_nll = 0.0;
        for batch in examples.chunks(cfg.batch_size) {
            for &((u, v), label) in batch {
                let (u, v) = (u as usize, v as usize);
                let images = interval_images(&table.spec, &table.points[u], &table.points[v], wrap_m)?;
                let nll = likelihood.nll_grad(&images, label, &mut partials);
                if !nll.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, edge ({u}, {v})"
                    )));
                }
                epoch_nll += nll;
                for node in [u, v] {
                    if !is_touched[node] {
                        is_touched[node] = true;
                        touched.push(node as u32);
                    }
                }
                let (gp, gq) = pair_mut(&mut grads, u, v);
                for (i, &(dl_ds, dl_dt)) in partials.iter().enumerate() {
                    if dl_ds == 0.0 && dl_dt == 0.0 {
                        continue;
                    }
                    let img_n = i as i64 - wrap_m as i64;
                    accumulate_image_grad(
                        &table.spec,
                        &table.points[u],
                        &table.points[v],
                        img_n,
                        dl_ds,
                        dl_dt,
                        gp,
                        gq,
                    )?;
                }
            }
            for &node in &touched {
                let node = node as usize;
                let zeta = descent_tangent(&table.spec, &table.points[node], &grads[node])?;
                // Trust region: the double-projection tangent on quadrics can
                // grow like |p|^4, so a raw step occasionally overflows the
                // exponential map. Cap the tangent length, keeping its
                // direction; the learning-rate schedule still scales the step.
                let norm = zeta.iter().map(|z| z * z).sum::<f64>().sqrt();
                let scale =
                    if norm > MAX_TANGENT_NORM { -lr * MAX_TANGENT_NORM / norm } else { -lr };
                let step: Vec<f64> = zeta.iter().map(|z| scale * z).collect();
                let updated = exp_map(&table.spec, &table.points[node], &step)?;
                if updated.iter().any(|x| x.abs() > DIVERGENCE_LIMIT) {
                    return Err(Error::Diverged(format!(
                        "coordinate beyond {DIVERGENCE_LIMIT:e} at epoch {epoch}, node {node}"
                    )));
                }
                table.points[node] = updated;
                grads[node].iter_mut().for_each(|g| *g = 0.0);
                is_touched[node] = false;
            }
            touched.clear();
        }
        let mean_nll = epoch_nll / examples.len() as f64;
        trace.push(mean_nll);
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(epoch, mean_nll, table);
        }
    }
    Ok(TrainResult { nll_trace: trace })
}

/// Disjoint mutable access to gradient rows `u` and `v` (`u == v` aliases
/// to a single row passed twice is not allowed; callers never hit it since
/// edges exclude self-loops).
fn pair_mut(grads: &mut [Vec<f64>], u: usize, v: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_ne!(u, v);
    if u < v {
        let (a, b) = grads.split_at_mut(v);
        (&mut a[u], &mut b[0])
    } else {
        let (a, b) = grads.split_at_mut(u);
        (&mut b[0], &mut a[v])
    }
}

/// Compare the assembled analytic NLL differential against central finite
/// differences along constraint-respecting axis perturbations; returns the
/// max relative error over all coordinates of both points.
pub fn grad_check(
    spec: &ManifoldSpec,
    likelihood: &Likelihood,
    p: &[f64],
    q: &[f64],
    label: EdgeLabel,
) -> Result<f64> {
    let wrap_m = likelihood.wrap_m();
    let dim = spec.ambient_dim();
    let mut partials = Vec::new();
    let mut df_p = vec![0.0; dim];
    let mut df_q = vec![0.0; dim];
    let images = interval_images(spec, p, q, wrap_m)?;
    likelihood.nll_grad(&images, label, &mut partials);
    for (i, &(dl_ds, dl_dt)) in partials.iter().enumerate() {
        let img_n = i as i64 - wrap_m as i64;
        accumulate_image_grad(spec, p, q, img_n, dl_ds, dl_dt, &mut df_p, &mut df_q)?;
    }

    let nll_of = |a: &[f64], b: &[f64]| -> Result<f64> {
        let images = interval_images(spec, a, b, wrap_m)?;
        let mut scratch = Vec::new();
        Ok(likelihood.nll_grad(&images, label, &mut scratch))
    };
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for side in 0..2 {
        let (x, other, df) = if side == 0 { (p, q, &df_p) } else { (q, p, &df_q) };
        for i in 0..dim {
            // axis direction, flattened onto the tangent space for quadric
            // kinds so the perturbed point stays (to first order) feasible
            let mut dir = vec![0.0; dim];
            dir[i] = 1.0;
            project_tangent(spec.kind(), x, &mut dir);
            let norm_sq: f64 = dir.iter().map(|d| d * d).sum();
            if norm_sq < 1e-12 {
                continue;
            }
            let shift = |s: f64| -> Result<Vec<f64>> {
                let moved: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                manifold::project_point(spec, &moved)
            };
            let (plus, minus) = (shift(h)?, shift(-h)?);
            let numeric = if side == 0 {
                (nll_of(&plus, other)? - nll_of(&minus, other)?) / (2.0 * h)
            } else {
                (nll_of(other, &plus)? - nll_of(other, &minus)?) / (2.0 * h)
            };
            let analytic: f64 = df.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let denom = analytic.abs().max(numeric.abs());
            if denom > 1e-7 {
                max_rel = max_rel.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(max_rel)
}

/// Worst quadric residual over the table, 0 for flat kinds.
pub fn max_residual(table: &EmbeddingTable) -> f64 {
    table
        .points
        .iter()
        .map(|p| manifold::quadric_residual(&table.spec, p))
        .fold(0.0, f64::max)
}
