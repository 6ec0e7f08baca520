//! Link-prediction metrics, probability heatmaps, and the disk-embedding
//! equivalence check.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::SplitDataset;
use crate::likelihood::{edge_nll, tfd, EdgeLabel, Likelihood, TfdParams};
use crate::manifold::{interval_images, ManifoldKind, ManifoldSpec};
use crate::optimizer::EmbeddingTable;
use crate::{Error, Result};

/// Link-prediction scores for one embedding.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Metrics {
    pub average_precision: f64,
    pub f1: f64,
    pub f1_threshold: f64,
    pub test_nll: f64,
    /// True when no validation scores were available and the F1 threshold
    /// was line-searched on the test scores themselves.
    pub in_sample_threshold: bool,
    pub per_edge: Vec<(u32, u32, EdgeLabel, f64)>,
}

/// Step-interpolated average precision over a score-descending ranking.
///
/// Ties keep their input order, so the result is deterministic for any
/// input permutation the caller fixes.
pub fn average_precision(scored: &[(f64, EdgeLabel)]) -> Result<f64> {
    let total_pos = scored.iter().filter(|(_, l)| *l == EdgeLabel::Positive).count();
    if total_pos == 0 {
        return Err(Error::Eval("average_precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.partial_cmp(&scored[a].0).unwrap());
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 == EdgeLabel::Positive {
            hits += 1;
            let precision = hits as f64 / (rank + 1) as f64;
            ap += precision / total_pos as f64;
        }
    }
    Ok(ap)
}

fn f1_at(scored: &[(f64, EdgeLabel)], threshold: f64) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &(s, l) in scored {
        let predicted_pos = s >= threshold;
        match (predicted_pos, l) {
            (true, EdgeLabel::Positive) => tp += 1,
            (true, EdgeLabel::Negative) => fp += 1,
            (false, EdgeLabel::Positive) => fn_ += 1,
            (false, EdgeLabel::Negative) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Line search for the F1-maximizing decision threshold.
///
/// Candidates are the midpoints of consecutive distinct sorted scores plus
/// sentinels below and above all scores; ties pick the lowest threshold.
pub fn best_f1_threshold(scored: &[(f64, EdgeLabel)]) -> Result<(f64, f64)> {
    let pos = scored.iter().filter(|(_, l)| *l == EdgeLabel::Positive).count();
    if pos == 0 || pos == scored.len() {
        return Err(Error::Eval("best_f1_threshold needs both classes".into()));
    }
    let mut scores: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scores.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(f64::INFINITY);
    let mut best = (f64::NEG_INFINITY, -1.0);
    for t in candidates {
        let f1 = f1_at(scored, t);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

fn score_edges(
    table: &EmbeddingTable,
    likelihood: &Likelihood,
    edges: &[(u32, u32)],
    label: EdgeLabel,
    out: &mut Vec<(u32, u32, EdgeLabel, f64)>,
) -> Result<()> {
    for &(u, v) in edges {
        if u as usize >= table.points.len() || v as usize >= table.points.len() {
            return Err(Error::Eval(format!(
                "edge ({u}, {v}) outside the {}-node table",
                table.points.len()
            )));
        }
        out.push((u, v, label, table.edge_prob(likelihood, u, v)?));
    }
    Ok(())
}

/// Score the held-out test edges of a split and compute AP, test NLL, and
/// the best-F1 operating point.
///
/// The F1 threshold is line-searched on the validation scores when a
/// validation part exists; otherwise on the test scores themselves, with
/// `in_sample_threshold` set.
pub fn evaluate(
    table: &EmbeddingTable,
    likelihood: &Likelihood,
    dataset: &SplitDataset,
) -> Result<Metrics> {
    let mut per_edge = Vec::with_capacity(dataset.test_pos.len() + dataset.test_neg.len());
    score_edges(table, likelihood, &dataset.test_pos, EdgeLabel::Positive, &mut per_edge)?;
    score_edges(table, likelihood, &dataset.test_neg, EdgeLabel::Negative, &mut per_edge)?;
    let scored: Vec<(f64, EdgeLabel)> = per_edge.iter().map(|&(_, _, l, p)| (p, l)).collect();
    let ap = average_precision(&scored)?;
    let test_nll = scored.iter().map(|&(p, l)| edge_nll(p, l)).sum::<f64>() / scored.len() as f64;

    let (threshold, f1, in_sample) = if dataset.valid_pos.is_empty() || dataset.valid_neg.is_empty()
    {
        let (t, _) = best_f1_threshold(&scored)?;
        (t, f1_at(&scored, t), true)
    } else {
        let mut valid = Vec::new();
        score_edges(table, likelihood, &dataset.valid_pos, EdgeLabel::Positive, &mut valid)?;
        score_edges(table, likelihood, &dataset.valid_neg, EdgeLabel::Negative, &mut valid)?;
        let vscored: Vec<(f64, EdgeLabel)> = valid.iter().map(|&(_, _, l, p)| (p, l)).collect();
        let (t, _) = best_f1_threshold(&vscored)?;
        (t, f1_at(&scored, t), false)
    };
    Ok(Metrics {
        average_precision: ap,
        f1,
        f1_threshold: threshold,
        test_nll,
        in_sample_threshold: in_sample,
        per_edge,
    })
}

/// Edge probability as a function of one endpoint over a coordinate grid,
/// the other endpoint fixed at the chart origin.
///
/// Only 2-coordinate manifolds are supported; rows are emitted with the
/// header `x0,x1,prob`, `x1` varying fastest.
pub fn heatmap(
    likelihood: &Likelihood,
    spec: &ManifoldSpec,
    bounds: (f64, f64),
    resolution: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    if spec.ambient_dim() != 2 {
        return Err(Error::InvalidSpec(format!(
            "heatmap needs a 2-coordinate manifold, got {} coordinates",
            spec.ambient_dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Eval("heatmap resolution must be >= 2".into()));
    }
    let (lo, hi) = bounds;
    if !(hi > lo) {
        return Err(Error::Eval(format!("bad heatmap bounds ({lo}, {hi})")));
    }
    let origin = match spec.kind() {
        ManifoldKind::Hyperboloid => vec![1.0, 0.0],
        _ => vec![0.0, 0.0],
    };
    let mut rows = Vec::with_capacity(resolution * resolution);
    let coord = |i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    for i in 0..resolution {
        for j in 0..resolution {
            let q = [coord(i), coord(j)];
            let images = interval_images(spec, &origin, &q, likelihood.wrap_m())?;
            rows.push((q[0], q[1], likelihood.prob(&images)));
        }
    }
    Ok(rows)
}

/// Write heatmap rows as CSV with the header `x0,x1,prob`.
pub fn write_heatmap_csv(rows: &[(f64, f64, f64)], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "x0,x1,prob")?;
    for (x0, x1, p) in rows {
        writeln!(f, "{x0:?},{x1:?},{p:?}")?;
    }
    Ok(())
}

/// Violation counts from [`disk_boundary_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiskCheck {
    /// Samples where `F >= 1/2` disagrees with the closed-form disk
    /// boundary, outside a `|F - 1/2| <= 1e-9` band.
    pub iff_violations: usize,
    /// Samples with `0 <= D <= T` (the strict causal-containment cone)
    /// where `F < 1/2`.
    pub containment_violations: usize,
}

/// Check the closed-form half-probability boundary of the TFD model with
/// `alpha = 0`, `r = 0`, `k = 1` against direct evaluation.
///
/// Samples `(D, T)` with `D` a spatial radius in `[0, 5]` and `T` a time
/// offset in `[-5, 5]`, giving the interval `s^2 = D^2 - T^2`, `dt = T`.
/// `F(D, T) >= 1/2` must hold exactly when
/// `D^2 <= T^2 + tau1 * ln((3 - e^{-T/tau2}) / (1 + e^{-T/tau2}))`.
pub fn disk_boundary_check(tau1: f64, tau2: f64, num_samples: usize, seed: u64) -> DiskCheck {
    let params = TfdParams { tau1, tau2, alpha: 0.0, r: 0.0, k: 1.0, wrap_m: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut iff = 0usize;
    let mut containment = 0usize;
    for _ in 0..num_samples {
        let d: f64 = rng.random_range(0.0..5.0);
        let t: f64 = rng.random_range(-5.0..5.0);
        let f = tfd(&params, d * d - t * t, t);
        if (f - 0.5).abs() <= 1e-9 {
            continue;
        }
        let arg = 3.0 - (-t / tau2).exp();
        let inside = arg > 0.0 && d * d <= t * t + tau1 * arg.ln() - tau1 * (-t / tau2).exp().ln_1p();
        if (f >= 0.5) != inside {
            iff += 1;
        }
        if d <= t && f < 0.5 {
            containment += 1;
        }
    }
    DiskCheck { iff_violations: iff, containment_violations: containment }
}

/// Mean probability assigned to a set of node pairs.
pub fn mean_probability(
    table: &EmbeddingTable,
    likelihood: &Likelihood,
    pairs: &[(u32, u32)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Eval("mean_probability over no pairs".into()));
    }
    let mut total = 0.0;
    for &(u, v) in pairs {
        total += table.edge_prob(likelihood, u, v)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lab(bits: &[u8]) -> Vec<EdgeLabel> {
        bits.iter()
            .map(|&b| if b == 1 { EdgeLabel::Positive } else { EdgeLabel::Negative })
            .collect()
    }

    fn zip(scores: &[f64], labels: &[EdgeLabel]) -> Vec<(f64, EdgeLabel)> {
        scores.iter().copied().zip(labels.iter().copied()).collect()
    }

    #[test]
    fn ap_examples() {
        let l = lab(&[1, 0]);
        assert_eq!(average_precision(&zip(&[0.9, 0.1], &l)).unwrap(), 1.0);
        assert_eq!(average_precision(&zip(&[0.1, 0.9], &l)).unwrap(), 0.5);
        assert!(average_precision(&zip(&[0.5], &lab(&[0]))).is_err());
    }

    #[test]
    fn ap_random_scores_match_positive_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scored = Vec::with_capacity(10_000);
        for i in 0..10_000 {
            let label = if i % 5 == 0 { EdgeLabel::Positive } else { EdgeLabel::Negative };
            scored.push((rng.random::<f64>(), label));
        }
        let ap = average_precision(&scored).unwrap();
        assert!((ap - 0.20).abs() < 0.02, "ap = {ap}");
    }

    #[test]
    fn f1_examples() {
        // perfectly separated: lowest maximizing threshold is the lowest
        // midpoint between the classes
        let scored = zip(&[0.9, 0.8, 0.2, 0.1], &lab(&[1, 1, 0, 0]));
        let (t, f1) = best_f1_threshold(&scored).unwrap();
        assert_eq!(f1, 1.0);
        assert_relative_eq!(t, 0.5);

        // all scores equal, balanced: predict everything positive
        let scored = zip(&[0.4, 0.4, 0.4, 0.4], &lab(&[1, 1, 0, 0]));
        let (t, f1) = best_f1_threshold(&scored).unwrap();
        assert_relative_eq!(f1, 2.0 / 3.0);
        assert_eq!(t, f64::NEG_INFINITY);

        let scored = zip(&[0.9, 0.8, 0.7], &lab(&[1, 1, 0]));
        let (t, f1) = best_f1_threshold(&scored).unwrap();
        assert_eq!(f1, 1.0);
        assert!(t > 0.7 && t < 0.8, "threshold {t}");

        assert!(best_f1_threshold(&zip(&[0.1, 0.2], &lab(&[1, 1]))).is_err());
    }

    #[test]
    fn disk_boundary_examples() {
        let c = disk_boundary_check(0.05, 0.05, 10_000, 1);
        assert_eq!(c.iff_violations, 0);
        assert_eq!(c.containment_violations, 0);
        let c = disk_boundary_check(1.0, 1.0, 10_000, 2);
        assert_eq!(c.iff_violations, 0);
        assert_eq!(c.containment_violations, 0);
    }

    #[test]
    fn heatmap_shapes_and_symmetry() {
        use crate::likelihood::FdParams;
        let spec = ManifoldSpec::from_total_dim(ManifoldKind::Minkowski, 2, None).unwrap();
        // F1-only variant: probability depends on s^2 alone, so the grid is
        // symmetric under dt -> -dt
        let lik = Likelihood::Fd(FdParams { tau: 0.4, r: 0.0, alpha: 1.0 });
        let rows = heatmap(&lik, &spec, (-2.0, 2.0), 41).unwrap();
        assert_eq!(rows.len(), 41 * 41);
        for i in 0..41 {
            for j in 0..41 {
                let a = rows[i * 41 + j].2;
                let b = rows[(40 - i) * 41 + j].2;
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
        // alpha > 0 pushes the argmax into the timelike future
        let lik = Likelihood::Tfd(TfdParams {
            tau1: 0.4,
            tau2: 0.07,
            alpha: 0.09,
            ..Default::default()
        });
        let rows = heatmap(&lik, &spec, (-2.0, 2.0), 81).unwrap();
        let best = rows.iter().cloned().fold(rows[0], |a, b| if b.2 > a.2 { b } else { a });
        assert!(best.0 > 0.0, "argmax dt = {}", best.0);
        // value at the origin with r = 0, k = 1 is (1/2 * 1/2 * 1/2)^(1/3)
        let center = rows.iter().find(|r| r.0 == 0.0 && r.1 == 0.0).unwrap();
        assert_relative_eq!(center.2, 0.5, epsilon = 1e-12);

        let spec3 = ManifoldSpec::from_total_dim(ManifoldKind::Minkowski, 3, None).unwrap();
        assert!(heatmap(&lik, &spec3, (-2.0, 2.0), 11).is_err());
    }

    #[test]
    fn evaluate_perfect_and_random() {
        use crate::graph::{generate_duplication_divergence, split, with_negatives, DupDivParams};
        use crate::likelihood::TfdParams;
        let g = generate_duplication_divergence(&DupDivParams::default()).unwrap();
        let ds = with_negatives(&g, split(&g, 0.85, 0.0, 3).unwrap(), 4).unwrap();
        let spec =
            ManifoldSpec::from_total_dim(ManifoldKind::CylindricalMinkowski, 3, Some(10.0))
                .unwrap();
        let lik = Likelihood::WrappedTfd(TfdParams::default());
        let table = EmbeddingTable::random(spec, g.num_nodes(), 1e-3, 7);
        let m1 = evaluate(&table, &lik, &ds).unwrap();
        let m2 = evaluate(&table, &lik, &ds).unwrap();
        assert_eq!(m1.average_precision, m2.average_precision);
        assert_eq!(m1.f1, m2.f1);
        assert!(m1.in_sample_threshold);
        assert!(m1.test_nll.is_finite());
        assert_eq!(m1.per_edge.len(), ds.test_pos.len() + ds.test_neg.len());
    }

    #[test]
    fn ap_against_hand_enumeration() {
        // ranking P N P N: precisions 1/1 and 2/3 at the two positives
        let scored = zip(&[0.9, 0.8, 0.7, 0.6], &lab(&[1, 0, 1, 0]));
        let ap = average_precision(&scored).unwrap();
        assert_relative_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0);
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_transform(
            scores in proptest::collection::vec(0.0f64..1.0, 5..60),
            mask in proptest::collection::vec(0u8..2, 5..60),
        ) {
            let n = scores.len().min(mask.len());
            if !mask[..n].contains(&1) {
                return Ok(());
            }
            let labels = lab(&mask[..n]);
            let base = zip(&scores[..n], &labels);
            let warped: Vec<(f64, EdgeLabel)> =
                base.iter().map(|&(s, l)| ((3.0 * s).exp() + 2.0 * s, l)).collect();
            let a = average_precision(&base).unwrap();
            let b = average_precision(&warped).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn best_f1_matches_brute_force(
            scores in proptest::collection::vec(0.0f64..1.0, 4..80),
            mask in proptest::collection::vec(0u8..2, 4..80),
        ) {
            let n = scores.len().min(mask.len());
            let labels = lab(&mask[..n]);
            if !mask[..n].contains(&1) || !mask[..n].contains(&0) {
                return Ok(());
            }
            let scored = zip(&scores[..n], &labels);
            let (_, f1) = best_f1_threshold(&scored).unwrap();
            // every distinct score (and extremes) as threshold: thresholds
            // through the midpoints cover the same prediction sets
            let mut brute: f64 = f1_at(&scored, f64::NEG_INFINITY);
            for &(s, _) in &scored {
                brute = brute.max(f1_at(&scored, s));
            }
            prop_assert!((f1 - brute).abs() < 1e-12);
        }
    }
}
