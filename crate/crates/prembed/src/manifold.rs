//! Manifold geometry: distances, time coordinates, exponential maps and
//! descent directions for the six supported embedding spaces.
//!
//! Points are stored in ambient coordinates:
//!
//! - Euclidean / cylindrical Euclidean: `N` coordinates, coordinate 0 plays
//!   the role of time.
//! - Minkowski / cylindrical Minkowski: `N + 1` coordinates `(x0, x1..xN)`
//!   with metric signature `(-, +, .., +)`.
//! - Hyperboloid: `N + 1` coordinates on the upper sheet of `<x,x>_L = -1`.
//! - Anti-de Sitter: `N + 2` coordinates `(x_{-1}, x0, x1..xN)` on the
//!   quadric `<x,x>_L = -1` with signature `(-, -, +, .., +)`.
//!
//! Cylindrical kinds store the time coordinate in the canonical range
//! `[0, C)`. All operations here are pure functions.

use rand::Rng;

use crate::{Error, Result};

/// Quadric residual allowed directly after an exponential-map step.
pub const QUADRIC_TOL_PRE: f64 = 1e-9;
/// Quadric residual guaranteed after `project_point` repair.
pub const QUADRIC_TOL_POST: f64 = 1e-12;
/// Clamp guard for the lightlike-boundary derivative singularity on AdS.
pub const LIGHTCONE_EPS: f64 = 1e-6;
/// Default initialization patch size around the origin.
pub const DEFAULT_INIT_SCALE: f64 = 1e-3;

/// Which geometry a set of embeddings lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ManifoldKind {
    Euclidean,
    CylindricalEuclidean,
    Hyperboloid,
    Minkowski,
    CylindricalMinkowski,
    AntiDeSitter,
}

impl ManifoldKind {
    pub fn is_cylindrical(self) -> bool {
        matches!(
            self,
            ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ManifoldKind::Euclidean => "euclidean",
            ManifoldKind::CylindricalEuclidean => "cylindrical_euclidean",
            ManifoldKind::Hyperboloid => "hyperboloid",
            ManifoldKind::Minkowski => "minkowski",
            ManifoldKind::CylindricalMinkowski => "cylindrical_minkowski",
            ManifoldKind::AntiDeSitter => "anti_de_sitter",
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(ManifoldKind::Euclidean),
            "cylindrical_euclidean" => Ok(ManifoldKind::CylindricalEuclidean),
            "hyperboloid" => Ok(ManifoldKind::Hyperboloid),
            "minkowski" => Ok(ManifoldKind::Minkowski),
            "cylindrical_minkowski" => Ok(ManifoldKind::CylindricalMinkowski),
            "anti_de_sitter" | "ads" => Ok(ManifoldKind::AntiDeSitter),
            other => Err(Error::InvalidSpec(format!("unknown manifold kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Geometry, spatial dimension and (for cylindrical kinds) circumference.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    spatial_dim: usize,
    circumference: Option<f64>,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, spatial_dim: usize, circumference: Option<f64>) -> Result<Self> {
        if spatial_dim == 0 && kind != ManifoldKind::AntiDeSitter {
            return Err(Error::InvalidSpec(format!(
                "spatial_dim must be positive for {kind}"
            )));
        }
        match (kind.is_cylindrical(), circumference) {
            (true, Some(c)) if c > 0.0 => {}
            (true, Some(c)) => {
                return Err(Error::InvalidSpec(format!("circumference must be > 0, got {c}")))
            }
            (true, None) => {
                return Err(Error::InvalidSpec(format!("{kind} requires a circumference")))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidSpec(format!(
                    "{kind} does not take a circumference"
                )))
            }
            (false, None) => {}
        }
        Ok(ManifoldSpec { kind, spatial_dim, circumference })
    }

    /// Build a spec from the total number of stored coordinates per node.
    ///
    /// Cross-manifold tables compare at equal coordinate count `d`:
    /// `d = N` for Euclidean kinds, `N + 1` for Minkowski/hyperboloid kinds,
    /// `N + 2` for anti-de Sitter.
    pub fn from_total_dim(kind: ManifoldKind, d: usize, circumference: Option<f64>) -> Result<Self> {
        let min = match kind {
            ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => 1,
            ManifoldKind::Hyperboloid | ManifoldKind::Minkowski
            | ManifoldKind::CylindricalMinkowski => 2,
            ManifoldKind::AntiDeSitter => 2,
        };
        if d < min {
            return Err(Error::InvalidSpec(format!(
                "total dimension {d} too small for {kind}"
            )));
        }
        let n = d - match kind {
            ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => 0,
            ManifoldKind::Hyperboloid | ManifoldKind::Minkowski
            | ManifoldKind::CylindricalMinkowski => 1,
            ManifoldKind::AntiDeSitter => 2,
        };
        ManifoldSpec::new(kind, n, circumference)
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn circumference(&self) -> Option<f64> {
        self.circumference
    }

    pub fn is_cylindrical(&self) -> bool {
        self.kind.is_cylindrical()
    }

    /// Number of stored coordinates per point.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => self.spatial_dim,
            ManifoldKind::Hyperboloid
            | ManifoldKind::Minkowski
            | ManifoldKind::CylindricalMinkowski => self.spatial_dim + 1,
            ManifoldKind::AntiDeSitter => self.spatial_dim + 2,
        }
    }

    /// Check the point invariants for this manifold.
    pub fn validate_point(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPoint("non-finite coordinate".into()));
        }
        match self.kind {
            ManifoldKind::Euclidean | ManifoldKind::Minkowski => Ok(()),
            ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => {
                let c = self.circumference.unwrap();
                if x[0] < 0.0 || x[0] >= c {
                    Err(Error::InvalidPoint(format!(
                        "cylinder time coordinate {} outside [0, {c})",
                        x[0]
                    )))
                } else {
                    Ok(())
                }
            }
            ManifoldKind::Hyperboloid => {
                let res = quadric_residual(self, x);
                if res > QUADRIC_TOL_PRE {
                    Err(Error::InvalidPoint(format!("hyperboloid residual {res:.3e}")))
                } else if x[0] <= 0.0 {
                    Err(Error::InvalidPoint("hyperboloid point on lower sheet".into()))
                } else {
                    Ok(())
                }
            }
            ManifoldKind::AntiDeSitter => {
                let res = quadric_residual(self, x);
                if res > QUADRIC_TOL_PRE {
                    Err(Error::InvalidPoint(format!("quadric residual {res:.3e}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates for {}, got {}",
                self.ambient_dim(),
                self.kind,
                x.len()
            )));
        }
        Ok(())
    }

    fn check_pair(&self, p: &[f64], q: &[f64]) -> Result<()> {
        self.check_dim(p)?;
        self.check_dim(q)
    }
}

/// One winding image of the spacetime interval between two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalImage {
    pub s_sq: f64,
    pub dt: f64,
}

/// Partial derivatives of the `n`-th image interval with respect to the
/// ambient coordinates of both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalDifferentials {
    pub ds_dp: Vec<f64>,
    pub ds_dq: Vec<f64>,
    pub ddt_dp: Vec<f64>,
    pub ddt_dq: Vec<f64>,
}

/// Lorentzian inner product for the curved kinds.
///
/// Hyperboloid signature is `(-, +, .., +)`; AdS is `(-, -, +, .., +)`.
fn lorentz_inner(kind: ManifoldKind, x: &[f64], y: &[f64]) -> f64 {
    let neg = match kind {
        ManifoldKind::Hyperboloid => 1,
        ManifoldKind::AntiDeSitter => 2,
        _ => unreachable!("lorentz_inner on flat kind"),
    };
    let mut acc = 0.0;
    for i in 0..x.len() {
        if i < neg {
            acc -= x[i] * y[i];
        } else {
            acc += x[i] * y[i];
        }
    }
    acc
}

/// `<x,x>_L + 1` in absolute value, 0 for flat kinds.
pub fn quadric_residual(spec: &ManifoldSpec, x: &[f64]) -> f64 {
    match spec.kind {
        ManifoldKind::Hyperboloid | ManifoldKind::AntiDeSitter => {
            (lorentz_inner(spec.kind, x, x) + 1.0).abs()
        }
        _ => 0.0,
    }
}

/// Wrap a cylinder coordinate into the canonical range `[0, C)`.
fn wrap_coordinate(x: f64, c: f64) -> f64 {
    let w = x.rem_euclid(c);
    // rem_euclid can return exactly `c` when x is a tiny negative number.
    if w >= c {
        0.0
    } else {
        w
    }
}

/// Principal value of a coordinate difference on the cylinder, in [-C/2, C/2).
fn principal_delta(d: f64, c: f64) -> f64 {
    let w = d.rem_euclid(c);
    if w >= c / 2.0 {
        w - c
    } else {
        w
    }
}

/// Principal angle in (-pi, pi].
fn principal_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w - 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

/// Polar angle of an AdS point, `theta = atan2(x_{-1}, x_0)`.
fn ads_theta(x: &[f64]) -> f64 {
    x[0].atan2(x[1])
}

/// AdS radius `r(x) = sqrt(1 + sum x_i^2)` over the spatial coordinates.
fn ads_radius(x: &[f64]) -> f64 {
    (1.0 + x[2..].iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn spatial_sq(p: &[f64], q: &[f64]) -> f64 {
    p[1..]
        .iter()
        .zip(&q[1..])
        .map(|(a, b)| (b - a) * (b - a))
        .sum()
}

/// Squared (geodesic) distance between two points.
///
/// Flat Lorentzian kinds return the Minkowski interval, which is negative
/// for timelike separation. AdS follows the piecewise form with the
/// non-geodesic region `<p,q>_L > 1` frozen at `-pi^2`.
pub fn squared_distance(spec: &ManifoldSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    spec.check_pair(p, q)?;
    let dt = time_delta(spec, p, q)?;
    Ok(match spec.kind {
        ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => {
            dt * dt + spatial_sq(p, q)
        }
        ManifoldKind::Minkowski | ManifoldKind::CylindricalMinkowski => {
            -dt * dt + spatial_sq(p, q)
        }
        ManifoldKind::Hyperboloid => {
            let u = lorentz_inner(spec.kind, p, q);
            let d = (-u).max(1.0).acosh();
            d * d
        }
        ManifoldKind::AntiDeSitter => ads_squared_distance(lorentz_inner(spec.kind, p, q)),
    })
}

fn ads_squared_distance(u: f64) -> f64 {
    if u > 1.0 {
        -(std::f64::consts::PI * std::f64::consts::PI)
    } else if u > -1.0 {
        let a = (-u).clamp(-1.0, 1.0).acos();
        -a * a
    } else if u == -1.0 {
        0.0
    } else {
        let a = (-u).acosh();
        a * a
    }
}

/// Time-coordinate difference `t(q) - t(p)`.
///
/// Cylindrical kinds report the principal value in `[-C/2, C/2)`; AdS uses
/// the arc-length time `r_q * theta_pq` with the angle reduced to
/// `(-pi, pi]`.
pub fn time_delta(spec: &ManifoldSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    spec.check_pair(p, q)?;
    Ok(match spec.kind {
        ManifoldKind::Euclidean | ManifoldKind::Minkowski | ManifoldKind::Hyperboloid => {
            q[0] - p[0]
        }
        ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => {
            principal_delta(q[0] - p[0], spec.circumference.unwrap())
        }
        ManifoldKind::AntiDeSitter => {
            let theta = principal_angle(ads_theta(q) - ads_theta(p));
            ads_radius(q) * theta
        }
    })
}

/// All winding images of the interval for indices `n` in `[-m, m]`.
///
/// Non-cylindrical flat and hyperbolic kinds have a single image regardless
/// of `m`. On AdS only `dt` varies between images.
pub fn interval_images(
    spec: &ManifoldSpec,
    p: &[f64],
    q: &[f64],
    m: usize,
) -> Result<Vec<IntervalImage>> {
    spec.check_pair(p, q)?;
    let dt = time_delta(spec, p, q)?;
    match spec.kind {
        ManifoldKind::Euclidean | ManifoldKind::Minkowski | ManifoldKind::Hyperboloid => {
            Ok(vec![IntervalImage { s_sq: squared_distance(spec, p, q)?, dt }])
        }
        ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => {
            let c = spec.circumference.unwrap();
            let sp = spatial_sq(p, q);
            let sign = if spec.kind == ManifoldKind::CylindricalEuclidean { 1.0 } else { -1.0 };
            Ok((-(m as i64)..=m as i64)
                .map(|n| {
                    let dtn = dt + n as f64 * c;
                    IntervalImage { s_sq: sign * dtn * dtn + sp, dt: dtn }
                })
                .collect())
        }
        ManifoldKind::AntiDeSitter => {
            let s_sq = squared_distance(spec, p, q)?;
            let period = 2.0 * std::f64::consts::PI * ads_radius(q);
            Ok((-(m as i64)..=m as i64)
                .map(|n| IntervalImage { s_sq, dt: dt + n as f64 * period })
                .collect())
        }
    }
}

/// Exponential map without the final quadric repair.
///
/// Exposed so drift accumulated by the raw geodesic step can be measured;
/// prefer [`exp_map`] everywhere else.
pub fn exp_map_raw(spec: &ManifoldSpec, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    spec.check_pair(p, v)?;
    if v.iter().any(|x| !x.is_finite()) || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidPoint("non-finite exp_map input".into()));
    }
    match spec.kind {
        ManifoldKind::Euclidean
        | ManifoldKind::Minkowski
        | ManifoldKind::CylindricalEuclidean
        | ManifoldKind::CylindricalMinkowski => {
            Ok(p.iter().zip(v).map(|(a, b)| a + b).collect())
        }
        ManifoldKind::Hyperboloid => {
            let n2 = lorentz_inner(spec.kind, v, v).max(0.0);
            let norm = n2.sqrt();
            if norm < 1e-15 {
                return Ok(p.to_vec());
            }
            let (ch, sh) = (norm.cosh(), norm.sinh() / norm);
            Ok(p.iter().zip(v).map(|(a, b)| ch * a + sh * b).collect())
        }
        ManifoldKind::AntiDeSitter => {
            let n2 = lorentz_inner(spec.kind, v, v);
            let norm = n2.abs().sqrt();
            if norm < 1e-12 {
                // lightlike branch, p + zeta
                return Ok(p.iter().zip(v).map(|(a, b)| a + b).collect());
            }
            let (cp, cv) = if n2 < 0.0 {
                (norm.cos(), norm.sin() / norm)
            } else {
                (norm.cosh(), norm.sinh() / norm)
            };
            Ok(p.iter().zip(v).map(|(a, b)| cp * a + cv * b).collect())
        }
    }
}

/// Exponential map. Cylinder coordinates are re-canonicalized and quadric
/// kinds are re-projected onto the constraint surface.
pub fn exp_map(spec: &ManifoldSpec, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let out = exp_map_raw(spec, p, v)?;
    project_point(spec, &out)
}

/// Descent-direction tangent vector built from the ambient differential `df`.
///
/// Flat kinds use the Wick-rotated gradient (components equal to `df`); the
/// hyperboloid projects the Riemannian gradient onto its tangent space; AdS
/// uses the double projection so the result is a guaranteed ascent-aligned
/// tangent, to be stepped with a negative rate.
pub fn descent_tangent(spec: &ManifoldSpec, p: &[f64], df: &[f64]) -> Result<Vec<f64>> {
    spec.check_pair(p, df)?;
    match spec.kind {
        ManifoldKind::Euclidean
        | ManifoldKind::Minkowski
        | ManifoldKind::CylindricalEuclidean
        | ManifoldKind::CylindricalMinkowski => Ok(df.to_vec()),
        ManifoldKind::Hyperboloid => {
            let mut g: Vec<f64> = df.to_vec();
            g[0] = -g[0];
            project_tangent(spec.kind, p, &mut g);
            Ok(g)
        }
        ManifoldKind::AntiDeSitter => {
            let mut g: Vec<f64> = df.to_vec();
            g[0] = -g[0];
            g[1] = -g[1];
            project_tangent(spec.kind, p, &mut g);
            g[0] = -g[0];
            g[1] = -g[1];
            project_tangent(spec.kind, p, &mut g);
            Ok(g)
        }
    }
}

/// `Pi_p v = v + g_L(v, p) p`, the orthogonal projection onto the tangent
/// space of the quadric at `p`. No-op for flat kinds, whose tangent space
/// is the whole ambient space.
pub fn project_tangent(kind: ManifoldKind, p: &[f64], v: &mut [f64]) {
    if !matches!(kind, ManifoldKind::Hyperboloid | ManifoldKind::AntiDeSitter) {
        return;
    }
    let inner = lorentz_inner(kind, v, p);
    for (vi, pi) in v.iter_mut().zip(p) {
        *vi += inner * pi;
    }
}

/// Repair numerical drift: wrap cylinder coordinates, rescale quadric points
/// back onto the constraint surface.
///
/// For AdS the `(x_{-1}, x_0)` pair is rescaled by
/// `sqrt((1 + sum x_i^2) / (x_{-1}^2 + x_0^2))`, which preserves the polar
/// angle and hence the circle-time coordinate.
pub fn project_point(spec: &ManifoldSpec, p: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(p)?;
    match spec.kind {
        ManifoldKind::Euclidean | ManifoldKind::Minkowski => Ok(p.to_vec()),
        ManifoldKind::CylindricalEuclidean | ManifoldKind::CylindricalMinkowski => {
            let mut out = p.to_vec();
            out[0] = wrap_coordinate(out[0], spec.circumference.unwrap());
            Ok(out)
        }
        ManifoldKind::Hyperboloid => {
            let res = quadric_residual(spec, p);
            if res > 0.1 {
                return Err(Error::RepairFailure(res));
            }
            let mut out = p.to_vec();
            out[0] = (1.0 + out[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
            Ok(out)
        }
        ManifoldKind::AntiDeSitter => {
            let res = quadric_residual(spec, p);
            if res > 0.1 {
                return Err(Error::RepairFailure(res));
            }
            let time_sq = p[0] * p[0] + p[1] * p[1];
            if time_sq <= 0.0 {
                return Err(Error::RepairFailure(res));
            }
            let scale = ((1.0 + p[2..].iter().map(|v| v * v).sum::<f64>()) / time_sq).sqrt();
            let mut out = p.to_vec();
            out[0] *= scale;
            out[1] *= scale;
            Ok(out)
        }
    }
}

/// Sample a point in a small patch near the origin.
///
/// Flat kinds draw every coordinate i.i.d. uniform in `[-scale, scale]`;
/// the hyperboloid and AdS draw the spatial coordinates (and for AdS the
/// polar angle) likewise and solve the quadric constraint, so the patch
/// shrinks onto `x = (1, 0, .., 0)` (AdS ordering `(x_{-1}, x_0, x)`) as
/// `scale -> 0`.
pub fn random_point<R: Rng + ?Sized>(spec: &ManifoldSpec, scale: f64, rng: &mut R) -> Vec<f64> {
    let dim = spec.ambient_dim();
    let draw = |rng: &mut R| rng.random_range(-scale..=scale);
    match spec.kind {
        ManifoldKind::Euclidean
        | ManifoldKind::Minkowski
        | ManifoldKind::CylindricalEuclidean
        | ManifoldKind::CylindricalMinkowski => {
            let mut x: Vec<f64> = (0..dim).map(|_| draw(rng)).collect();
            if let Some(c) = spec.circumference {
                x[0] = wrap_coordinate(x[0], c);
            }
            x
        }
        ManifoldKind::Hyperboloid => {
            let mut x = vec![0.0; dim];
            for v in x[1..].iter_mut() {
                *v = draw(rng);
            }
            x[0] = (1.0 + x[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
            x
        }
        ManifoldKind::AntiDeSitter => {
            let mut x = vec![0.0; dim];
            for v in x[2..].iter_mut() {
                *v = draw(rng);
            }
            let r = ads_radius(&x);
            let theta = draw(rng);
            x[0] = r * theta.sin();
            x[1] = r * theta.cos();
            x
        }
    }
}

/// Derivative of the AdS squared distance with respect to `u = <p,q>_L`,
/// with the lightlike singularity at `u = 1` clamped and the frozen region
/// `u > 1` contributing zero.
fn ads_dsdu(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else if (u + 1.0).abs() < LIGHTCONE_EPS {
        // both branches tend to -2 at the lightlike boundary u = -1
        -2.0
    } else if u < -1.0 {
        -2.0 * (-u).acosh() / (u * u - 1.0).sqrt()
    } else {
        let uc = u.min(1.0 - LIGHTCONE_EPS);
        -2.0 * (-uc).acos() / (1.0 - uc * uc).sqrt()
    }
}

fn hyperboloid_dsdu(u: f64) -> f64 {
    if u > -1.0 - LIGHTCONE_EPS {
        -2.0
    } else {
        -2.0 * (-u).acosh() / (u * u - 1.0).sqrt()
    }
}

/// Exact partial derivatives of the `n = 0` image interval with respect to
/// the ambient coordinates of both points.
pub fn interval_differentials(
    spec: &ManifoldSpec,
    p: &[f64],
    q: &[f64],
) -> Result<IntervalDifferentials> {
    image_differentials(spec, p, q, 0)
}

/// Per-image variant of [`interval_differentials`]: on cylindrical Minkowski
/// the interval of image `n` depends on `dt + nC`, and on AdS the image
/// shift `2 pi n r_q` itself depends on `q`.
pub fn image_differentials(
    spec: &ManifoldSpec,
    p: &[f64],
    q: &[f64],
    n: i64,
) -> Result<IntervalDifferentials> {
    spec.check_pair(p, q)?;
    if n != 0 && !spec.is_cylindrical() && spec.kind != ManifoldKind::AntiDeSitter {
        return Err(Error::InvalidSpec(format!(
            "winding index {n} on non-cylindrical manifold {}",
            spec.kind
        )));
    }
    let dim = spec.ambient_dim();
    let mut d = IntervalDifferentials {
        ds_dp: vec![0.0; dim],
        ds_dq: vec![0.0; dim],
        ddt_dp: vec![0.0; dim],
        ddt_dq: vec![0.0; dim],
    };
    accumulate_image_grad(spec, p, q, n, 1.0, 0.0, &mut d.ds_dp, &mut d.ds_dq)?;
    accumulate_image_grad(spec, p, q, n, 0.0, 1.0, &mut d.ddt_dp, &mut d.ddt_dq)?;
    for v in d
        .ds_dp
        .iter()
        .chain(&d.ds_dq)
        .chain(&d.ddt_dp)
        .chain(&d.ddt_dq)
    {
        if !v.is_finite() {
            return Err(Error::Diverged("non-finite interval differential".into()));
        }
    }
    Ok(d)
}

/// Accumulate `dl_ds * d(s_sq_n)/dx + dl_dt * d(dt_n)/dx` into the ambient
/// differentials of both endpoints. Allocation-free inner loop used by the
/// optimizer; `interval_differentials` is the one-shot variant.
pub fn accumulate_image_grad(
    spec: &ManifoldSpec,
    p: &[f64],
    q: &[f64],
    n: i64,
    dl_ds: f64,
    dl_dt: f64,
    df_p: &mut [f64],
    df_q: &mut [f64],
) -> Result<()> {
    match spec.kind {
        ManifoldKind::Euclidean
        | ManifoldKind::CylindricalEuclidean
        | ManifoldKind::Minkowski
        | ManifoldKind::CylindricalMinkowski => {
            let dt = time_delta(spec, p, q)?;
            let dtn = dt + n as f64 * spec.circumference.unwrap_or(0.0);
            let time_sign = match spec.kind {
                ManifoldKind::Euclidean | ManifoldKind::CylindricalEuclidean => 1.0,
                _ => -1.0,
            };
            // time coordinate: d(s_sq_n)/dq0 = 2 * sign * dt_n, d(dt_n)/dq0 = 1
            let g0 = dl_ds * 2.0 * time_sign * dtn + dl_dt;
            df_q[0] += g0;
            df_p[0] -= g0;
            for i in 1..p.len() {
                let gi = dl_ds * 2.0 * (q[i] - p[i]);
                df_q[i] += gi;
                df_p[i] -= gi;
            }
        }
        ManifoldKind::Hyperboloid => {
            let u = lorentz_inner(spec.kind, p, q);
            let dsdu = hyperboloid_dsdu(u);
            // d u / dq = g_L p  (flip sign of the time component)
            df_q[0] += dl_ds * dsdu * (-p[0]);
            df_p[0] += dl_ds * dsdu * (-q[0]);
            for i in 1..p.len() {
                df_q[i] += dl_ds * dsdu * p[i];
                df_p[i] += dl_ds * dsdu * q[i];
            }
            // dt = q0 - p0
            df_q[0] += dl_dt;
            df_p[0] -= dl_dt;
        }
        ManifoldKind::AntiDeSitter => {
            let u = lorentz_inner(spec.kind, p, q);
            let dsdu = ads_dsdu(u);
            if dl_ds != 0.0 {
                df_q[0] += dl_ds * dsdu * (-p[0]);
                df_q[1] += dl_ds * dsdu * (-p[1]);
                df_p[0] += dl_ds * dsdu * (-q[0]);
                df_p[1] += dl_ds * dsdu * (-q[1]);
                for i in 2..p.len() {
                    df_q[i] += dl_ds * dsdu * p[i];
                    df_p[i] += dl_ds * dsdu * q[i];
                }
            }
            if dl_dt != 0.0 {
                let r_q = ads_radius(q);
                let theta = principal_angle(ads_theta(q) - ads_theta(p));
                let theta_n = theta + 2.0 * std::f64::consts::PI * n as f64;
                // dt_n = r_q * theta_n; theta = atan2(x_{-1}, x_0) at each end
                let pt = p[0] * p[0] + p[1] * p[1];
                let qt = q[0] * q[0] + q[1] * q[1];
                df_p[0] += dl_dt * (-r_q) * (p[1] / pt);
                df_p[1] += dl_dt * r_q * (p[0] / pt);
                df_q[0] += dl_dt * r_q * (q[1] / qt);
                df_q[1] += dl_dt * (-r_q) * (q[0] / qt);
                for i in 2..q.len() {
                    df_q[i] += dl_dt * theta_n * q[i] / r_q;
                }
            }
        }
    }
    Ok(())
}
