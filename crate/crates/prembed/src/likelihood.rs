//! Fermi-Dirac and Triple Fermi-Dirac edge probabilities, their wrapped
//! variants for cylindrical manifolds, the NLL loss, and analytic partial
//! derivatives with respect to the interval variables `(s^2, dt)`.
//!
//! Everything here is computed in log space first so that temperatures as
//! small as 0.005 do not underflow the per-image probabilities or their
//! gradients.

use crate::manifold::{IntervalImage, ManifoldKind, ManifoldSpec};
use crate::{Error, Result};

/// Probability floor/ceiling applied before logs in the NLL.
pub const PROB_CLAMP: f64 = 1e-12;

/// Parameters of the plain Fermi-Dirac edge probability on `s^2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FdParams {
    pub tau: f64,
    pub r: f64,
    pub alpha: f64,
}

impl FdParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("fd tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("fd alpha must be in [0,1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Parameters of the Triple Fermi-Dirac probability.
///
/// `r` is deliberately unconstrained in sign: the AdS experiments tune it
/// over negative values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TfdParams {
    pub tau1: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub r: f64,
    pub k: f64,
    pub wrap_m: usize,
}

impl Default for TfdParams {
    fn default() -> Self {
        TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, r: 0.0, k: 1.0, wrap_m: 3 }
    }
}

impl TfdParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau1 <= 0.0 || self.tau2 <= 0.0 {
            return Err(Error::Config("tfd temperatures must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("tfd alpha must be in [0,1], got {}", self.alpha)));
        }
        if self.k <= 0.0 || self.k > 1.0 {
            return Err(Error::Config(format!("tfd k must be in (0,1], got {}", self.k)));
        }
        Ok(())
    }
}

/// An edge probability with its partials with respect to `(s^2, dt)`,
/// summed over winding images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeProbability {
    pub value: f64,
    pub partial_s_sq: f64,
    pub partial_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EdgeLabel {
    Positive,
    Negative,
}

/// Numerically stable logistic sigmoid.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(z)`, stable for large |z|.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// The Fermi-Dirac function `F_{(tau, r, alpha)}(x) = 1 / (e^{(alpha x - r)/tau} + 1)`.
pub fn fd(params: &FdParams, x: f64) -> f64 {
    sigmoid((params.r - params.alpha * x) / params.tau)
}

/// Log-probability and log-derivative coefficients of one TFD term.
///
/// Returns `(log F, d log F / d s_sq, d log F / d dt)`.
fn tfd_log_parts(params: &TfdParams, s_sq: f64, dt: f64) -> (f64, f64, f64) {
    let z1 = (params.r - s_sq) / params.tau1;
    let z2 = dt / params.tau2;
    let z3 = -params.alpha * dt / params.tau2;
    let log_p = params.k.ln() + (log_sigmoid(z1) + log_sigmoid(z2) + log_sigmoid(z3)) / 3.0;
    let f1 = sigmoid(z1);
    let f2 = sigmoid(z2);
    let f3 = sigmoid(z3);
    let c_s = -(1.0 - f1) / (3.0 * params.tau1);
    let c_t = ((1.0 - f2) - params.alpha * (1.0 - f3)) / (3.0 * params.tau2);
    (log_p, c_s, c_t)
}

/// The Triple Fermi-Dirac probability `k (F1 F2 F3)^{1/3}`.
pub fn tfd(params: &TfdParams, s_sq: f64, dt: f64) -> f64 {
    tfd_log_parts(params, s_sq, dt).0.exp()
}

/// Exact analytic partials of [`tfd`] with respect to `s_sq` and `dt`.
pub fn tfd_partials(params: &TfdParams, s_sq: f64, dt: f64) -> (f64, f64) {
    let (log_p, c_s, c_t) = tfd_log_parts(params, s_sq, dt);
    let p = log_p.exp();
    (p * c_s, p * c_t)
}

/// Wrapped TFD: the sum of the TFD value over all winding images, with the
/// partials summed per image. For a single-image input this is identical to
/// [`tfd`].
pub fn wrapped_tfd(params: &TfdParams, images: &[IntervalImage]) -> EdgeProbability {
    let mut value = 0.0;
    let mut ds = 0.0;
    let mut dt = 0.0;
    for img in images {
        let (log_p, c_s, c_t) = tfd_log_parts(params, img.s_sq, img.dt);
        let p = log_p.exp();
        value += p;
        ds += p * c_s;
        dt += p * c_t;
    }
    EdgeProbability { value, partial_s_sq: ds, partial_dt: dt }
}

/// Negative log-likelihood of a single edge probability, clamped away from
/// saturated sigmoids before the logarithm.
pub fn edge_nll(prob: f64, label: EdgeLabel) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    match label {
        EdgeLabel::Positive => -p.ln(),
        EdgeLabel::Negative => -(-p).ln_1p(),
    }
}

/// Calibrate the TFD scaling factor `k` so the wrapped sum stays a valid
/// probability: `k = min(1, 1/M)` with `M` the maximum of the raw (k = 1)
/// wrapped sum over a dense 401x401 grid of `(s_sq, dt)` in
/// `[-C^2, C^2] x [0, C)`.
///
/// Non-cylindrical flat and hyperboloid specs return `params.k` unchanged.
/// AdS uses the per-point period `2 pi r_q` with the worst case `r_q = 1`.
pub fn calibrate_k(params: &TfdParams, spec: &ManifoldSpec) -> f64 {
    let c = match spec.kind() {
        ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => {
            spec.circumference().unwrap()
        }
        ManifoldKind::AntiDeSitter => 2.0 * std::f64::consts::PI,
        _ => return params.k,
    };
    let raw = TfdParams { k: 1.0, ..*params };
    let m = params.wrap_m as i64;
    let grid = 401;
    let mut max_sum: f64 = 0.0;
    let mut images = Vec::with_capacity(2 * params.wrap_m + 1);
    for i in 0..grid {
        let s_sq = -c * c + 2.0 * c * c * (i as f64) / (grid - 1) as f64;
        for j in 0..grid {
            let dt = c * (j as f64) / grid as f64;
            images.clear();
            for n in -m..=m {
                let dtn = dt + n as f64 * c;
                let s_n = match spec.kind() {
                    // winding shifts the interval on flat cylinders
                    ManifoldKind::CylindricalMinkowski => s_sq + dt * dt - dtn * dtn,
                    ManifoldKind::CylindricalEuclidean => s_sq - dt * dt + dtn * dtn,
                    // constant across images on AdS
                    _ => s_sq,
                };
                images.push(IntervalImage { s_sq: s_n, dt: dtn });
            }
            max_sum = max_sum.max(wrapped_tfd(&raw, &images).value);
        }
    }
    (1.0 / max_sum).min(1.0)
}

/// Which probability model scores an edge.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Likelihood {
    Fd(FdParams),
    Tfd(TfdParams),
    WrappedTfd(TfdParams),
}

impl Likelihood {
    /// Winding truncation to request from `interval_images`.
    pub fn wrap_m(&self) -> usize {
        match self {
            Likelihood::WrappedTfd(p) => p.wrap_m,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Fd(p) => p.validate(),
            Likelihood::Tfd(p) | Likelihood::WrappedTfd(p) => p.validate(),
        }
    }

    /// Replace `k` with its calibrated value for the given manifold.
    pub fn calibrated(&self, spec: &ManifoldSpec) -> Likelihood {
        match self {
            Likelihood::WrappedTfd(p) => {
                Likelihood::WrappedTfd(TfdParams { k: calibrate_k(p, spec), ..*p })
            }
            other => *other,
        }
    }

    fn center(images: &[IntervalImage]) -> &IntervalImage {
        &images[images.len() / 2]
    }

    /// Edge probability from precomputed interval images.
    pub fn prob(&self, images: &[IntervalImage]) -> f64 {
        match self {
            Likelihood::Fd(p) => fd(p, Self::center(images).s_sq),
            Likelihood::Tfd(p) => {
                let img = Self::center(images);
                tfd(p, img.s_sq, img.dt)
            }
            Likelihood::WrappedTfd(p) => wrapped_tfd(p, images).value.min(1.0),
        }
    }

    /// NLL of an edge plus, per winding image, the partials of the NLL with
    /// respect to that image's `(s_sq, dt)`. Written into `partials` (one
    /// entry per image; non-contributing images get zeros).
    ///
    /// Computed through softmax weights over per-image log-probabilities so
    /// the gradient survives even when the total probability underflows.
    pub fn nll_grad(
        &self,
        images: &[IntervalImage],
        label: EdgeLabel,
        partials: &mut Vec<(f64, f64)>,
    ) -> f64 {
        partials.clear();
        partials.resize(images.len(), (0.0, 0.0));
        match self {
            Likelihood::Fd(p) => {
                let idx = images.len() / 2;
                let s_sq = images[idx].s_sq;
                let z = (p.r - p.alpha * s_sq) / p.tau;
                let f = sigmoid(z);
                let c_s = -p.alpha * (1.0 - f) / p.tau; // d log F / d s_sq
                let nll = match label {
                    EdgeLabel::Positive => -log_sigmoid(z).max(PROB_CLAMP.ln()),
                    EdgeLabel::Negative => edge_nll(f, label),
                };
                let dl_ds = match label {
                    EdgeLabel::Positive => -c_s,
                    EdgeLabel::Negative => {
                        let fc = f.min(1.0 - PROB_CLAMP);
                        f * c_s / (1.0 - fc)
                    }
                };
                partials[idx] = (dl_ds, 0.0);
                nll
            }
            Likelihood::Tfd(p) => {
                let idx = images.len() / 2;
                let img = images[idx];
                let (nll, dl) = tfd_sum_nll_grad(p, &[img], label, &mut [(0.0, 0.0)]);
                partials[idx] = dl;
                nll
            }
            Likelihood::WrappedTfd(p) => tfd_sum_nll_grad(p, images, label, partials).0,
        }
    }
}

/// NLL and per-image `(dNLL/ds, dNLL/ddt)` for a sum of TFD terms.
///
/// Returns `(nll, last_image_partials)`; per-image partials are written
/// into `out`.
fn tfd_sum_nll_grad(
    params: &TfdParams,
    images: &[IntervalImage],
    label: EdgeLabel,
    out: &mut [(f64, f64)],
) -> (f64, (f64, f64)) {
    debug_assert_eq!(out.len(), images.len());
    let mut parts = Vec::with_capacity(images.len());
    let mut max_log = f64::NEG_INFINITY;
    for img in images {
        let lp = tfd_log_parts(params, img.s_sq, img.dt);
        max_log = max_log.max(lp.0);
        parts.push(lp);
    }
    // log-sum-exp over image log-probabilities
    let sum_exp: f64 = parts.iter().map(|(lp, _, _)| (lp - max_log).exp()).sum();
    let log_p = max_log + sum_exp.ln();
    let p = log_p.exp();
    let mut last = (0.0, 0.0);
    match label {
        EdgeLabel::Positive => {
            let nll = -log_p.max(PROB_CLAMP.ln());
            for (i, (lp, c_s, c_t)) in parts.iter().enumerate() {
                let w = (lp - log_p).exp(); // softmax weight, stable for tiny p
                last = (-w * c_s, -w * c_t);
                out[i] = last;
            }
            (nll, last)
        }
        EdgeLabel::Negative => {
            let pc = p.clamp(0.0, 1.0 - PROB_CLAMP);
            let nll = -(-pc).ln_1p();
            let denom = 1.0 - pc;
            for (i, (lp, c_s, c_t)) in parts.iter().enumerate() {
                let pn = lp.exp();
                last = (pn * c_s / denom, pn * c_t / denom);
                out[i] = last;
            }
            (nll, last)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ManifoldKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_tfd() -> TfdParams {
        TfdParams { tau1: 1.0, tau2: 1.0, alpha: 1.0, r: 0.0, k: 1.0, wrap_m: 3 }
    }

    #[test]
    fn fd_examples() {
        assert_eq!(fd(&FdParams { tau: 1.0, r: 0.0, alpha: 1.0 }, 0.0), 0.5);
        let flat = FdParams { tau: 1.0, r: 0.0, alpha: 0.0 };
        assert_eq!(fd(&flat, -17.0), 0.5);
        assert_eq!(fd(&flat, 42.0), 0.5);
        assert_eq!(fd(&FdParams { tau: 1.0, r: 2.0, alpha: 1.0 }, 2.0), 0.5);
        // saturates without overflow
        let tight = FdParams { tau: 0.005, r: 0.0, alpha: 1.0 };
        assert_eq!(fd(&tight, 1e6), 0.0);
        assert_eq!(fd(&tight, -1e6), 1.0);
    }

    #[test]
    fn tfd_examples() {
        let p = unit_tfd();
        assert_relative_eq!(tfd(&p, 0.0, 0.0), 0.5, epsilon = 1e-15);
        // alpha = 0 closed form at (D, T) = (0, 1): s_sq = -1, dt = 1
        let p0 = TfdParams { alpha: 0.0, ..unit_tfd() };
        let f1 = 1.0 / ((-1.0f64).exp() + 1.0);
        let f2 = 1.0 / ((-1.0f64).exp() + 1.0);
        let expect = (f1 * f2 * 0.5f64).cbrt();
        assert_relative_eq!(tfd(&p0, -1.0, 1.0), expect, max_relative = 1e-12);
        assert_relative_eq!(expect, 0.6444, max_relative = 1e-3);
        // alpha < 1 weakens the future decay: future beats past
        let p = TfdParams { alpha: 0.5, ..unit_tfd() };
        assert!(tfd(&p, 0.3, 0.7) > tfd(&p, 0.3, -0.7));
    }

    #[test]
    fn tfd_monotone_in_s_sq() {
        let p = TfdParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let s = -5.0 + i as f64 * 0.05;
            let v = tfd(&p, s, 0.3);
            assert!(v <= prev);
            assert!(v > 0.0 && v <= p.k);
            prev = v;
        }
    }

    #[test]
    fn tfd_partials_closed_form_at_origin() {
        let p = TfdParams { tau1: 0.7, tau2: 0.3, alpha: 0.4, r: 0.0, k: 1.0, wrap_m: 3 };
        let (ds, _) = tfd_partials(&p, 0.0, 0.0);
        let value = tfd(&p, 0.0, 0.0);
        assert_relative_eq!(ds, -value / (6.0 * p.tau1), max_relative = 1e-12);
        // alpha = 0: dt partial carries only the F2 term
        let p0 = TfdParams { alpha: 0.0, ..p };
        let (_, dt) = tfd_partials(&p0, 0.0, 0.0);
        let v0 = tfd(&p0, 0.0, 0.0);
        assert_relative_eq!(dt, v0 * 0.5 / (3.0 * p0.tau2), max_relative = 1e-12);
    }

    #[test]
    fn tfd_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..1000 {
            let p = TfdParams {
                tau1: rng.random_range(0.05..2.0),
                tau2: rng.random_range(0.05..2.0),
                alpha: rng.random_range(0.0..1.0),
                r: rng.random_range(-0.5..0.5),
                k: rng.random_range(0.1..1.0),
                wrap_m: 3,
            };
            let s = rng.random_range(-3.0..3.0);
            let t = rng.random_range(-3.0..3.0);
            let (ds, dt) = tfd_partials(&p, s, t);
            let fd_s = (tfd(&p, s + h, t) - tfd(&p, s - h, t)) / (2.0 * h);
            let fd_t = (tfd(&p, s, t + h) - tfd(&p, s, t - h)) / (2.0 * h);
            for (a, b) in [(ds, fd_s), (dt, fd_t)] {
                // absolute slack covers central-difference roundoff (~1e-10)
                let denom = a.abs().max(b.abs());
                assert!((a - b).abs() <= 1e-7 * denom + 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn wrapped_tfd_single_image_matches_tfd() {
        let p = TfdParams::default();
        let img = [IntervalImage { s_sq: 0.4, dt: -0.2 }];
        let w = wrapped_tfd(&p, &img);
        assert_eq!(w.value, tfd(&p, 0.4, -0.2));
        let (ds, dt) = tfd_partials(&p, 0.4, -0.2);
        assert_eq!((w.partial_s_sq, w.partial_dt), (ds, dt));
    }

    fn cyl_images(c: f64, s_sq: f64, dt: f64, m: i64) -> Vec<IntervalImage> {
        (-m..=m)
            .map(|n| {
                let dtn = dt + n as f64 * c;
                IntervalImage { s_sq: s_sq + dt * dt - dtn * dtn, dt: dtn }
            })
            .collect()
    }

    #[test]
    fn wrapped_tfd_truncation_converges() {
        let p = TfdParams { tau1: 0.4, tau2: 0.05, alpha: 0.075, r: 0.0, k: 1.0, wrap_m: 3 };
        let c = 10.0;
        for &(s, t) in &[(0.0, 0.0), (-4.0, 2.0), (9.0, 8.5), (-50.0, 4.9)] {
            let v3 = wrapped_tfd(&p, &cyl_images(c, s, t, 3)).value;
            let v4 = wrapped_tfd(&p, &cyl_images(c, s, t, 4)).value;
            assert!((v4 - v3).abs() / v4.abs().max(1e-30) < 1e-6, "{s},{t}: {v3} vs {v4}");
        }
    }

    #[test]
    fn wrapped_tfd_periodic_in_dt() {
        let p = TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, r: 0.0, k: 1.0, wrap_m: 6 };
        let c = 10.0;
        // shifting dt by a full circumference re-indexes the sum
        let a = wrapped_tfd(&p, &cyl_images(c, -3.0, 1.5, 6)).value;
        let b = wrapped_tfd(&p, &cyl_images(c, -3.0 + 1.5f64.powi(2) - 11.5f64.powi(2), 11.5, 6)).value;
        assert_relative_eq!(a, b, max_relative = 1e-4);
    }

    #[test]
    fn edge_nll_examples() {
        assert_relative_eq!(edge_nll(0.5, EdgeLabel::Positive), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(
            edge_nll(1.0 - 1e-12, EdgeLabel::Negative),
            -(1e-12f64).ln(),
            max_relative = 1e-3
        );
        assert_relative_eq!(
            edge_nll(0.9, EdgeLabel::Negative),
            -(0.1f64).ln(),
            max_relative = 1e-12
        );
        // clamp floor
        assert!(edge_nll(0.0, EdgeLabel::Positive) < 28.0);
    }

    #[test]
    fn calibrate_k_non_cylindrical_identity() {
        let p = TfdParams::default();
        let spec = ManifoldSpec::new(ManifoldKind::Minkowski, 2, None).unwrap();
        assert_eq!(calibrate_k(&p, &spec), p.k);
    }

    #[test]
    fn calibrate_k_large_circumference_tends_to_one() {
        let p = TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, r: 0.0, k: 1.0, wrap_m: 3 };
        let spec = ManifoldSpec::new(ManifoldKind::CylindricalMinkowski, 2, Some(1e4)).unwrap();
        let k = calibrate_k(&p, &spec);
        assert!(k > 0.999, "{k}");
    }

    #[test]
    fn calibrate_k_matches_grid_oracle() {
        let p = TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, r: 0.0, k: 1.0, wrap_m: 3 };
        let c = 10.0;
        let spec = ManifoldSpec::new(ManifoldKind::CylindricalMinkowski, 2, Some(c)).unwrap();
        let k = calibrate_k(&p, &spec);
        // independent grid evaluation
        let mut max_sum: f64 = 0.0;
        for i in 0..401 {
            let s = -c * c + 2.0 * c * c * i as f64 / 400.0;
            for j in 0..401 {
                let t = c * j as f64 / 401.0;
                max_sum = max_sum.max(wrapped_tfd(&p, &cyl_images(c, s, t, 3)).value);
            }
        }
        assert_relative_eq!(k, (1.0 / max_sum).min(1.0), max_relative = 1e-12);
        // calibrated sum is a valid probability everywhere on the grid
        let cal = TfdParams { k, ..p };
        for i in 0..101 {
            let s = -c * c + 2.0 * c * c * i as f64 / 100.0;
            for j in 0..101 {
                let t = c * j as f64 / 101.0;
                assert!(wrapped_tfd(&cal, &cyl_images(c, s, t, 3)).value <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn nll_grad_matches_value_gradient() {
        // the per-image NLL partials agree with finite differences of
        // edge_nll(prob) through the image variables
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = TfdParams { tau1: 0.4, tau2: 0.07, alpha: 0.09, r: 0.0, k: 0.8, wrap_m: 1 };
        let like = Likelihood::WrappedTfd(p);
        let h = 1e-6;
        for label in [EdgeLabel::Positive, EdgeLabel::Negative] {
            for _ in 0..200 {
                let base: Vec<IntervalImage> = (-1..=1)
                    .map(|n| IntervalImage {
                        s_sq: rng.random_range(-3.0..3.0),
                        dt: rng.random_range(-3.0..3.0) + 10.0 * n as f64,
                    })
                    .collect();
                let mut partials = Vec::new();
                like.nll_grad(&base, label, &mut partials);
                for (i, (dl_ds, dl_dt)) in partials.iter().enumerate() {
                    for (which, analytic) in [(0usize, dl_ds), (1usize, dl_dt)] {
                        let mut up = base.clone();
                        let mut dn = base.clone();
                        if which == 0 {
                            up[i].s_sq += h;
                            dn[i].s_sq -= h;
                        } else {
                            up[i].dt += h;
                            dn[i].dt -= h;
                        }
                        let numeric = (edge_nll(like.prob(&up), label)
                            - edge_nll(like.prob(&dn), label))
                            / (2.0 * h);
                        let denom = analytic.abs().max(numeric.abs());
                        assert!(
                            (analytic - numeric).abs() <= 1e-5 * denom + 1e-9,
                            "{label:?} image {i} var {which}: {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }
}
