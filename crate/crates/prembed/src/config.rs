//! Flat key/value experiment configuration with `[section]` headers, plus
//! sweep-grid expansion and effective-config writeback.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::graph::DupDivParams;
use crate::likelihood::{FdParams, Likelihood, TfdParams};
use crate::manifold::{ManifoldKind, ManifoldSpec};
use crate::optimizer::TrainConfig;
use crate::{Error, Result};

/// Parsed-but-untyped configuration: `section.key -> value` strings.
///
/// Syntax: `[section]` headers, `key = value` lines, `#` comments, blank
/// lines ignored. Values may be comma-separated lists, which only the
/// sweep expansion interprets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(Error::Config(format!("line {}: empty section", lineno + 1)));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() || section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key outside a [section] or empty key",
                    lineno + 1
                )));
            }
            entries.insert(format!("{section}.{key}"), value.trim().to_string());
        }
        Ok(RawConfig { entries })
    }

    pub fn from_file(path: &Path) -> Result<RawConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Render back to the file syntax, grouped by section.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (key, value) in &self.entries {
            let (section, name) = key.split_once('.').unwrap_or(("", key));
            if section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for key {key:?}"))),
        }
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }
}

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    DupDiv(DupDivParams),
    DupDivDag(DupDivParams),
    Cycle(u32),
    Chain(u32),
    Transitive(u32),
    Tripartite { n_pred: u32, n_succ: u32 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub split_seed: u64,
    pub eval_neg_ratio: u32,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub manifold: ManifoldSpec,
    pub likelihood: Likelihood,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    pub init_scale: f64,
}

impl ExperimentConfig {
    /// Interpret a raw config, filling every unset key with its default.
    pub fn from_raw(raw: &RawConfig) -> Result<ExperimentConfig> {
        for key in raw.entries.keys() {
            let known = KNOWN_KEYS.contains(&key.as_str());
            if !known {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        let kind: ManifoldKind = raw.parsed("manifold.kind", ManifoldKind::CylindricalMinkowski)?;
        let dim: usize = raw.parsed("manifold.dim", 10)?;
        let circumference = match raw.get("manifold.circumference") {
            Some("none") | None => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad circumference {v:?}")))?,
            ),
        };
        let needs_c = matches!(
            kind,
            ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski
        );
        let circumference = if needs_c { circumference.or(Some(10.0)) } else { circumference };
        let manifold = ManifoldSpec::from_total_dim(kind, dim, circumference)?;

        let model = raw.get("likelihood.model").unwrap_or(match kind {
            ManifoldKind::CylindricalEuclidean
            | ManifoldKind::CylindricalMinkowski
            | ManifoldKind::AntiDeSitter => "wrapped_tfd",
            _ => "tfd",
        });
        let likelihood = match model {
            "fd" => Likelihood::Fd(FdParams {
                tau: raw.parsed("likelihood.tau", 0.4)?,
                r: raw.parsed("likelihood.r", 0.0)?,
                alpha: raw.parsed("likelihood.alpha", 1.0)?,
            }),
            "tfd" | "wrapped_tfd" => {
                let params = TfdParams {
                    tau1: raw.parsed("likelihood.tau1", 0.4)?,
                    tau2: raw.parsed("likelihood.tau2", 0.07)?,
                    alpha: raw.parsed("likelihood.alpha", 0.09)?,
                    r: raw.parsed("likelihood.r", 0.0)?,
                    k: raw.parsed("likelihood.k", 1.0)?,
                    wrap_m: raw.parsed("likelihood.wrap_m", 3)?,
                };
                if model == "tfd" {
                    Likelihood::Tfd(params)
                } else {
                    Likelihood::WrappedTfd(params)
                }
            }
            other => return Err(Error::Config(format!("unknown likelihood model {other:?}"))),
        };
        likelihood.validate()?;

        let train = TrainConfig {
            lr: raw.parsed("train.lr", 0.02)?,
            epochs: raw.parsed("train.epochs", 200)?,
            burnin_epochs: raw.parsed("train.burnin_epochs", 10)?,
            burnin_factor: raw.parsed("train.burnin_factor", 0.01)?,
            batch_size: raw.parsed("train.batch_size", 2)?,
            neg_ratio: raw.parsed("train.neg_ratio", 4)?,
            lr_final_fraction: raw.parsed("train.lr_final_fraction", 0.25)?,
            seed: raw.parsed("train.seed", 0)?,
        };
        train.validate()?;

        let source = match raw.get("data.source").unwrap_or("dupdiv") {
            s @ ("dupdiv" | "dupdiv_dag") => {
                let params = DupDivParams {
                    n_initial: raw.parsed("data.n_initial", 3)?,
                    n_final: raw.parsed("data.n", 100)?,
                    p_neighbor: raw.parsed("data.p_neighbor", 0.7)?,
                    p_original: raw.parsed("data.p_original", 0.7)?,
                    seed: raw.parsed("data.seed", 0)?,
                };
                if s == "dupdiv" {
                    DataSource::DupDiv(params)
                } else {
                    DataSource::DupDivDag(params)
                }
            }
            "cycle" => DataSource::Cycle(raw.parsed("data.n", 5)?),
            "chain" => DataSource::Chain(raw.parsed("data.n", 10)?),
            "transitive" => DataSource::Transitive(raw.parsed("data.n", 10)?),
            "tripartite" => DataSource::Tripartite {
                n_pred: raw.parsed("data.n_pred", 3)?,
                n_succ: raw.parsed("data.n_succ", 3)?,
            },
            "file" => DataSource::File(PathBuf::from(raw.required("data.path")?)),
            other => return Err(Error::Config(format!("unknown data source {other:?}"))),
        };
        let data = DataConfig {
            source,
            train_frac: raw.parsed("data.train_frac", 0.85)?,
            valid_frac: raw.parsed("data.valid_frac", 0.0)?,
            split_seed: raw.parsed("data.split_seed", 0)?,
            eval_neg_ratio: raw.parsed("data.eval_neg_ratio", 4)?,
        };

        Ok(ExperimentConfig {
            manifold,
            likelihood,
            train,
            data,
            output_dir: PathBuf::from(raw.get("output.dir").unwrap_or("out")),
            init_scale: raw.parsed("output.init_scale", crate::manifold::DEFAULT_INIT_SCALE)?,
        })
    }

    /// The fully resolved configuration, suitable for byte-exact re-runs.
    pub fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig::default();
        raw.set("manifold.kind", self.manifold.kind());
        raw.set("manifold.dim", self.manifold.ambient_dim());
        match self.manifold.circumference() {
            Some(c) => raw.set("manifold.circumference", format!("{c:?}")),
            None => raw.set("manifold.circumference", "none"),
        }
        match &self.likelihood {
            Likelihood::Fd(p) => {
                raw.set("likelihood.model", "fd");
                raw.set("likelihood.tau", format!("{:?}", p.tau));
                raw.set("likelihood.r", format!("{:?}", p.r));
                raw.set("likelihood.alpha", format!("{:?}", p.alpha));
            }
            Likelihood::Tfd(p) | Likelihood::WrappedTfd(p) => {
                let model = if matches!(self.likelihood, Likelihood::Tfd(_)) {
                    "tfd"
                } else {
                    "wrapped_tfd"
                };
                raw.set("likelihood.model", model);
                raw.set("likelihood.tau1", format!("{:?}", p.tau1));
                raw.set("likelihood.tau2", format!("{:?}", p.tau2));
                raw.set("likelihood.alpha", format!("{:?}", p.alpha));
                raw.set("likelihood.r", format!("{:?}", p.r));
                raw.set("likelihood.k", format!("{:?}", p.k));
                raw.set("likelihood.wrap_m", p.wrap_m);
            }
        }
        raw.set("train.lr", format!("{:?}", self.train.lr));
        raw.set("train.epochs", self.train.epochs);
        raw.set("train.burnin_epochs", self.train.burnin_epochs);
        raw.set("train.burnin_factor", format!("{:?}", self.train.burnin_factor));
        raw.set("train.batch_size", self.train.batch_size);
        raw.set("train.neg_ratio", self.train.neg_ratio);
        raw.set("train.lr_final_fraction", format!("{:?}", self.train.lr_final_fraction));
        raw.set("train.seed", self.train.seed);
        match &self.data.source {
            DataSource::DupDiv(p) | DataSource::DupDivDag(p) => {
                let name = if matches!(self.data.source, DataSource::DupDiv(_)) {
                    "dupdiv"
                } else {
                    "dupdiv_dag"
                };
                raw.set("data.source", name);
                raw.set("data.n_initial", p.n_initial);
                raw.set("data.n", p.n_final);
                raw.set("data.p_neighbor", format!("{:?}", p.p_neighbor));
                raw.set("data.p_original", format!("{:?}", p.p_original));
                raw.set("data.seed", p.seed);
            }
            DataSource::Cycle(n) => {
                raw.set("data.source", "cycle");
                raw.set("data.n", n);
            }
            DataSource::Chain(n) => {
                raw.set("data.source", "chain");
                raw.set("data.n", n);
            }
            DataSource::Transitive(n) => {
                raw.set("data.source", "transitive");
                raw.set("data.n", n);
            }
            DataSource::Tripartite { n_pred, n_succ } => {
                raw.set("data.source", "tripartite");
                raw.set("data.n_pred", n_pred);
                raw.set("data.n_succ", n_succ);
            }
            DataSource::File(path) => {
                raw.set("data.source", "file");
                raw.set("data.path", path.display());
            }
        }
        raw.set("data.train_frac", format!("{:?}", self.data.train_frac));
        raw.set("data.valid_frac", format!("{:?}", self.data.valid_frac));
        raw.set("data.split_seed", self.data.split_seed);
        raw.set("data.eval_neg_ratio", self.data.eval_neg_ratio);
        raw.set("output.dir", self.output_dir.display());
        raw.set("output.init_scale", format!("{:?}", self.init_scale));
        raw
    }
}

const KNOWN_KEYS: &[&str] = &[
    "manifold.kind",
    "manifold.dim",
    "manifold.circumference",
    "likelihood.model",
    "likelihood.tau",
    "likelihood.tau1",
    "likelihood.tau2",
    "likelihood.alpha",
    "likelihood.r",
    "likelihood.k",
    "likelihood.wrap_m",
    "train.lr",
    "train.epochs",
    "train.burnin_epochs",
    "train.burnin_factor",
    "train.batch_size",
    "train.neg_ratio",
    "train.lr_final_fraction",
    "train.seed",
    "data.source",
    "data.n",
    "data.n_initial",
    "data.p_neighbor",
    "data.p_original",
    "data.seed",
    "data.n_pred",
    "data.n_succ",
    "data.path",
    "data.train_frac",
    "data.valid_frac",
    "data.split_seed",
    "data.eval_neg_ratio",
    "output.dir",
    "output.init_scale",
    "sweep.trials",
];

/// Keys the sweep expansion never splits on commas.
const SWEEP_EXEMPT: &[&str] = &["data.path", "output.dir"];

/// Expand comma-separated value lists into the Cartesian product of
/// single-value configs, in sorted key order. `sweep.trials` (default 1)
/// is returned separately and removed from the grid points.
pub fn expand_sweep(raw: &RawConfig) -> Result<(Vec<RawConfig>, usize)> {
    let trials: usize = raw.parsed("sweep.trials", 1)?;
    if trials == 0 {
        return Err(Error::Config("sweep.trials must be >= 1".into()));
    }
    let mut base = raw.clone();
    base.entries.remove("sweep.trials");
    let mut points = vec![base.clone()];
    for (key, value) in &base.entries {
        if SWEEP_EXEMPT.contains(&key.as_str()) || !value.contains(',') {
            continue;
        }
        let values: Vec<String> = value.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!("empty list element in key {key:?}")));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for point in &points {
            for v in &values {
                let mut p = point.clone();
                p.set(key, v);
                next.push(p);
            }
        }
        points = next;
    }
    Ok((points, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "\
# a comment
[manifold]
kind = cylindrical_minkowski
dim = 10
circumference = 10.0

[train]
lr = 0.02
epochs = 200
";
        let raw = RawConfig::parse(text).unwrap();
        assert_eq!(raw.get("manifold.kind"), Some("cylindrical_minkowski"));
        assert_eq!(raw.get("train.epochs"), Some("200"));
        let again = RawConfig::parse(&raw.render()).unwrap();
        assert_eq!(raw, again);
    }

    #[test]
    fn defaults_and_round_trip_through_experiment() {
        let raw = RawConfig::parse("[manifold]\nkind = cylindrical_minkowski\n").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.manifold.ambient_dim(), 10);
        assert_eq!(cfg.manifold.circumference(), Some(10.0));
        assert!(matches!(cfg.likelihood, Likelihood::WrappedTfd(_)));
        assert_eq!(cfg.train.epochs, 200);
        // effective config re-parses to the same experiment
        let eff = cfg.to_raw();
        let cfg2 = ExperimentConfig::from_raw(&eff).unwrap();
        assert_eq!(cfg2.manifold.kind(), cfg.manifold.kind());
        assert_eq!(cfg2.train.lr, cfg.train.lr);
        assert_eq!(cfg2.data, cfg.data);
        assert_eq!(eff, cfg2.to_raw());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let raw = RawConfig::parse("[train]\nlrr = 0.1\n").unwrap();
        assert!(ExperimentConfig::from_raw(&raw).is_err());
        let raw = RawConfig::parse("[train]\nlr = fast\n").unwrap();
        assert!(ExperimentConfig::from_raw(&raw).is_err());
        assert!(RawConfig::parse("key = 1\n").is_err());
        assert!(RawConfig::parse("[s]\nnovalue\n").is_err());
    }

    #[test]
    fn sweep_expansion_product() {
        let raw = RawConfig::parse(
            "[likelihood]\ntau1 = 0.075, 0.15, 0.4\nalpha = 0.03, 0.06\n[sweep]\ntrials = 3\n",
        )
        .unwrap();
        let (points, trials) = expand_sweep(&raw).unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(trials, 3);
        assert!(points.iter().all(|p| p.get("sweep.trials").is_none()));
        // single point grid
        let raw = RawConfig::parse("[likelihood]\ntau1 = 0.4\n").unwrap();
        let (points, trials) = expand_sweep(&raw).unwrap();
        assert_eq!((points.len(), trials), (1, 1));
    }
}
