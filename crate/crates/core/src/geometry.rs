//! Conformal metric `g = n^2 I` on the unit disc: refractive media, Christoffel
//! symbols, RK4 geodesic tracing with boundary-exit correction, and the explicit
//! chord parameters of the Euclidean case.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::PolarGrid;

/// Step used for central-difference gradients of media without an analytic gradient.
pub const GRADIENT_FD_STEP: f64 = 1e-6;

type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
enum Profile {
    Constant(f64),
    /// `n(x) = base + coef |x|^2`
    Quadratic { base: f64, coef: f64 },
    Custom { n: ScalarFn, grad: Option<VectorFn> },
}

/// Refractive index `n(x)` with its gradient and a constant attenuation `alpha`.
#[derive(Clone)]
pub struct RefractiveMedium {
    name: String,
    profile: Profile,
    alpha: f64,
    c_n: f64,
}

impl fmt::Debug for RefractiveMedium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RefractiveMedium")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("c_n", &self.c_n)
            .finish()
    }
}

impl RefractiveMedium {
    /// `n = 1` everywhere.
    pub fn euclid(alpha: f64) -> Result<Self> {
        Self::build("euclid", Profile::Constant(1.0), alpha, 1.0)
    }

    /// `n = 4/3 + 0.002 |x|^2`.
    pub fn paper_slow(alpha: f64) -> Result<Self> {
        Self::quadratic("paper-slow", 4.0 / 3.0, 0.002, alpha)
    }

    /// `n = 1 + 0.002 |x|^2`.
    pub fn paper_mild(alpha: f64) -> Result<Self> {
        Self::quadratic("paper-mild", 1.0, 0.002, alpha)
    }

    /// `n = base + coef |x|^2` with an analytic gradient.
    pub fn quadratic(name: &str, base: f64, coef: f64, alpha: f64) -> Result<Self> {
        // on the closed unit disc the minimum is at the origin or on the boundary
        let c_n = base.min(base + coef);
        Self::build(name, Profile::Quadratic { base, coef }, alpha, c_n)
    }

    /// Looks up one of the built-in media: `euclid`, `paper-slow`, `paper-mild`.
    pub fn by_name(name: &str, alpha: f64) -> Result<Self> {
        match name {
            "euclid" => Self::euclid(alpha),
            "paper-slow" => Self::paper_slow(alpha),
            "paper-mild" => Self::paper_mild(alpha),
            other => Err(Error::UnknownMedium(other.to_string())),
        }
    }

    pub const BUILTIN: [&'static str; 3] = ["euclid", "paper-slow", "paper-mild"];

    /// A user-supplied index. Without `grad` the gradient falls back to central
    /// differences. `c_n` is the claimed positive lower bound, checked on a
    /// polar sample of the disc.
    pub fn custom(
        name: &str,
        n: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        grad: Option<Box<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>>,
        c_n: f64,
        alpha: f64,
    ) -> Result<Self> {
        let profile = Profile::Custom {
            n: Arc::new(n),
            grad: grad.map(Arc::from),
        };
        let medium = Self::build(name, profile, alpha, c_n)?;
        let probe = PolarGrid::new(16, 32, 2)?;
        for i in 0..probe.node_count() {
            let x = probe.node_position(i);
            let v = medium.n(x);
            if !(v >= c_n) {
                return Err(Error::InvalidMedium(format!(
                    "n({:.3}, {:.3}) = {v} is below c_n = {c_n}",
                    x[0], x[1]
                )));
            }
        }
        if !(medium.n([0.0, 0.0]) >= c_n) {
            return Err(Error::InvalidMedium("n(0) is below c_n".into()));
        }
        Ok(medium)
    }

    fn build(name: &str, profile: Profile, alpha: f64, c_n: f64) -> Result<Self> {
        if !(c_n > 0.0) {
            return Err(Error::InvalidMedium(format!("lower bound c_n = {c_n} must be positive")));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidMedium(format!("attenuation {alpha} must be finite and >= 0")));
        }
        Ok(Self {
            name: name.to_string(),
            profile,
            alpha,
            c_n,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Same index, different constant attenuation.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::build(&self.name, self.profile.clone(), alpha, self.c_n)
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.profile, Profile::Constant(c) if c == 1.0)
    }

    pub fn n(&self, x: [f64; 2]) -> f64 {
        match &self.profile {
            Profile::Constant(c) => *c,
            Profile::Quadratic { base, coef } => base + coef * (x[0] * x[0] + x[1] * x[1]),
            Profile::Custom { n, .. } => n(x),
        }
    }

    /// Euclidean gradient of `n`.
    pub fn grad_n(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.profile {
            Profile::Constant(_) => [0.0, 0.0],
            Profile::Quadratic { coef, .. } => [2.0 * coef * x[0], 2.0 * coef * x[1]],
            Profile::Custom { grad: Some(g), .. } => g(x),
            Profile::Custom { n, grad: None } => {
                let h = GRADIENT_FD_STEP;
                [
                    (n([x[0] + h, x[1]]) - n([x[0] - h, x[1]])) / (2.0 * h),
                    (n([x[0], x[1] + h]) - n([x[0], x[1] - h])) / (2.0 * h),
                ]
            }
        }
    }

    /// Attenuation at a phase-space point; constant for every medium built here.
    pub fn alpha(&self, _x: [f64; 2], _xi: [f64; 2]) -> f64 {
        self.alpha
    }

    /// Lower bound of the attenuation.
    pub fn alpha_0(&self) -> f64 {
        self.alpha
    }

    /// Lower bound of the refractive index.
    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    /// Scales a direction to unit length in the metric at `x`.
    pub fn g_normalize(&self, x: [f64; 2], xi: [f64; 2]) -> Result<[f64; 2]> {
        let norm = xi[0].hypot(xi[1]);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroTangent);
        }
        let s = 1.0 / (self.n(x) * norm);
        Ok([xi[0] * s, xi[1] * s])
    }
}

/// Christoffel symbols `gamma[k][i][j]` of `g = n^2 I` at `x`:
/// `n^-1 (d_j n delta_ik + d_i n delta_jk - d_k n delta_ij)`.
pub fn christoffel(medium: &RefractiveMedium, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
    let grad = medium.grad_n(x);
    let inv = 1.0 / medium.n(x);
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut gamma = [[[0.0; 2]; 2]; 2];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for (i, gki) in gk.iter_mut().enumerate() {
            for (j, g) in gki.iter_mut().enumerate() {
                *g = inv * (grad[j] * delta(i, k) + grad[i] * delta(j, k) - grad[k] * delta(i, j));
            }
        }
    }
    gamma
}

/// `-Gamma^k_ij v^i v^j`, written out for the conformal metric.
fn acceleration(medium: &RefractiveMedium, x: [f64; 2], v: [f64; 2]) -> [f64; 2] {
    let grad = medium.grad_n(x);
    let inv = 1.0 / medium.n(x);
    let gv = grad[0] * v[0] + grad[1] * v[1];
    let vv = v[0] * v[0] + v[1] * v[1];
    [
        -inv * (2.0 * gv * v[0] - vv * grad[0]),
        -inv * (2.0 * gv * v[1] - vv * grad[1]),
    ]
}

fn rk4_step(medium: &RefractiveMedium, x: [f64; 2], v: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1x = v;
    let k1v = acceleration(medium, x, v);
    let k2x = add(v, k1v, 0.5 * h);
    let k2v = acceleration(medium, add(x, k1x, 0.5 * h), k2x);
    let k3x = add(v, k2v, 0.5 * h);
    let k3v = acceleration(medium, add(x, k2x, 0.5 * h), k3x);
    let k4x = add(v, k3v, h);
    let k4v = acceleration(medium, add(x, k3x, h), k4x);
    let s = h / 6.0;
    (
        [
            x[0] + s * (k1x[0] + 2.0 * k2x[0] + 2.0 * k3x[0] + k4x[0]),
            x[1] + s * (k1x[1] + 2.0 * k2x[1] + 2.0 * k3x[1] + k4x[1]),
        ],
        [
            v[0] + s * (k1v[0] + 2.0 * k2v[0] + 2.0 * k3v[0] + k4v[0]),
            v[1] + s * (k1v[1] + 2.0 * k2v[1] + 2.0 * k3v[1] + k4v[1]),
        ],
    )
}

/// Integration direction of the geodesic parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceDirection {
    /// Towards the exit point, `tau` increasing.
    Forward,
    /// Towards the entry point, `tau` decreasing.
    Backward,
}

/// A geodesic sampled with a uniform parameter step until it leaves the disc.
///
/// `points[0..S]` lie in the closed disc and `points[S]` is the first sample
/// outside. The true crossing of the boundary is `exit_point`, reached after
/// the shortened last step `dtau_star`. Velocities always point along
/// increasing `tau`, also for backward traces.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub points: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub dtau: f64,
    pub dtau_star: f64,
    pub exit_point: [f64; 2],
    pub exit_velocity: [f64; 2],
    pub direction: TraceDirection,
}

impl GeodesicPath {
    /// Index `S` of the first sample outside the disc.
    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    /// Unsigned parameter length from the start to the boundary crossing.
    pub fn parameter_length(&self) -> f64 {
        (self.last_index() - 1) as f64 * self.dtau + self.dtau_star
    }
}

/// Default step cap `ceil(20 / dtau)`.
pub fn default_max_steps(dtau: f64) -> usize {
    (20.0 / dtau).ceil() as usize
}

/// Traces the geodesic through `(x0, xi0)` with classical RK4 until it leaves the
/// disc. `xi0` is rescaled to unit length in the metric first.
pub fn geodesic_trace(
    medium: &RefractiveMedium,
    x0: [f64; 2],
    xi0: [f64; 2],
    dtau: f64,
    direction: TraceDirection,
) -> Result<GeodesicPath> {
    geodesic_trace_capped(medium, x0, xi0, dtau, direction, default_max_steps(dtau))
}

pub fn geodesic_trace_capped(
    medium: &RefractiveMedium,
    x0: [f64; 2],
    xi0: [f64; 2],
    dtau: f64,
    direction: TraceDirection,
    max_steps: usize,
) -> Result<GeodesicPath> {
    if !(dtau > 0.0) {
        return Err(Error::InvalidGrid(format!("step {dtau} must be positive")));
    }
    if !(x0[0].hypot(x0[1]) <= 1.0 + crate::grid::BOUNDARY_SLACK) {
        return Err(Error::OutsideDomain { x: x0[0], y: x0[1] });
    }
    let v0 = medium.g_normalize(x0, xi0)?;
    let h = match direction {
        TraceDirection::Forward => dtau,
        TraceDirection::Backward => -dtau,
    };
    let mut points = vec![x0];
    let mut velocities = vec![v0];
    let (mut x, mut v) = (x0, v0);
    loop {
        if points.len() > max_steps {
            return Err(Error::MaxSteps { steps: max_steps });
        }
        (x, v) = rk4_step(medium, x, v, h);
        points.push(x);
        velocities.push(v);
        if x[0] * x[0] + x[1] * x[1] > 1.0 {
            break;
        }
    }
    let s = points.len() - 1;
    let a = points[s - 1];
    let t = exit_fraction(a, x)?;
    let exit_point = [a[0] + t * (x[0] - a[0]), a[1] + t * (x[1] - a[1])];
    let va = velocities[s - 1];
    let exit_velocity = [va[0] + t * (v[0] - va[0]), va[1] + t * (v[1] - va[1])];
    Ok(GeodesicPath {
        points,
        velocities,
        dtau,
        dtau_star: t * dtau,
        exit_point,
        exit_velocity,
        direction,
    })
}

/// Fraction `t` in `[0, 1]` at which the segment `a -> b` leaves the unit circle.
fn exit_fraction(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = a[0] * d[0] + a[1] * d[1];
    let qc = a[0] * a[0] + a[1] * a[1] - 1.0;
    let disc = qb * qb - qa * qc;
    if qa == 0.0 || disc < 0.0 || qc > 2.0 * crate::grid::BOUNDARY_SLACK {
        return Err(Error::NoIntersection);
    }
    let root = disc.sqrt();
    // larger root of qa t^2 + 2 qb t + qc, computed without cancellation
    let t = if qb > 0.0 { -qc / (qb + root) } else { (root - qb) / qa };
    if !(-1e-9..=1.0 + 1e-9).contains(&t) {
        return Err(Error::NoIntersection);
    }
    Ok(t.clamp(0.0, 1.0))
}

/// Entry parameter `tau_-(x, xi) = -2 <x, xi>` of a straight chord from a
/// boundary point with an outgoing unit direction.
pub fn tau_minus_euclid(x: [f64; 2], xi: [f64; 2]) -> Result<f64> {
    let c = x[0] * xi[0] + x[1] * xi[1];
    if c < 0.0 {
        return Err(Error::IncomingDirection(c));
    }
    Ok(-2.0 * c)
}

/// Exit parameter `tau_+(x, xi)` of a straight chord from an interior point.
pub fn tau_plus_euclid(x: [f64; 2], xi: [f64; 2]) -> f64 {
    let c = x[0] * xi[0] + x[1] * xi[1];
    let xx = x[0] * x[0] + x[1] * x[1];
    let disc = (c * c + 1.0 - xx).max(0.0);
    (-c + disc.sqrt()).max(0.0)
}

/// Outcome of [`check_slow_variation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowVariation {
    /// Largest sampled `|grad n| / n`.
    pub supremum: f64,
    /// Whether the supremum stays below the attenuation bound `alpha_0`.
    pub holds: bool,
}

/// Samples `|grad n| / n` on the grid nodes (and the origin) and compares the
/// supremum with `alpha_0`. Diagnostic only; nothing enforces it.
pub fn check_slow_variation(medium: &RefractiveMedium, grid: &PolarGrid) -> SlowVariation {
    let ratio = |x: [f64; 2]| {
        let g = medium.grad_n(x);
        g[0].hypot(g[1]) / medium.n(x)
    };
    let supremum = (0..grid.node_count())
        .map(|i| ratio(grid.node_position(i)))
        .fold(ratio([0.0, 0.0]), f64::max);
    SlowVariation {
        supremum,
        holds: supremum < medium.alpha_0(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn christoffel_vanishes_for_constant_index() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        let g = christoffel(&m, [0.3, -0.2]);
        assert!(g.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn christoffel_vanishes_at_critical_point() {
        let m = RefractiveMedium::paper_slow(0.0).unwrap();
        let g = christoffel(&m, [0.0, 0.0]);
        assert!(g.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    /// Finite-difference oracle: `1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)`.
    fn christoffel_from_metric(m: &RefractiveMedium, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let h = 1e-6;
        let metric = |y: [f64; 2]| {
            let n2 = m.n(y).powi(2);
            [[n2, 0.0], [0.0, n2]]
        };
        let dg = |l: usize| {
            let mut a = x;
            let mut b = x;
            a[l] += h;
            b[l] -= h;
            let (ga, gb) = (metric(a), metric(b));
            let mut d = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    d[i][j] = (ga[i][j] - gb[i][j]) / (2.0 * h);
                }
            }
            d
        };
        let d = [dg(0), dg(1)]; // d[l][i][j] = d_l g_ij
        let inv = 1.0 / m.n(x).powi(2);
        let mut out = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    // g^kl is diagonal, so only l = k contributes
                    out[k][i][j] = 0.5 * inv * (d[i][j][k] + d[j][i][k] - d[k][i][j]);
                }
            }
        }
        out
    }

    #[test]
    fn christoffel_matches_metric_finite_differences() {
        let m = RefractiveMedium::paper_slow(0.0).unwrap();
        for x in [[0.5, 0.0], [0.2, -0.7], [-0.6, 0.6]] {
            let a = christoffel(&m, x);
            let b = christoffel_from_metric(&m, x);
            let scale = a.iter().flatten().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((a[k][i][j] - b[k][i][j]).abs() <= 1e-6 * scale, "{k}{i}{j}");
                        assert_eq!(a[k][i][j], a[k][j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn euclidean_diameter() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        let path = geodesic_trace(&m, [1.0, 0.0], [-1.0, 0.0], 0.01, TraceDirection::Forward).unwrap();
        assert_abs_diff_eq!(path.exit_point[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(path.exit_point[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(path.parameter_length(), 2.0, epsilon = 1e-8);
        assert!(path.dtau_star > 0.0 && path.dtau_star <= path.dtau);
        for p in &path.points {
            assert!(p[1].abs() < 1e-10);
        }
    }

    #[test]
    fn tangential_start_degenerates() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        let path = geodesic_trace(&m, [1.0, 0.0], [0.0, 1.0], 0.01, TraceDirection::Forward).unwrap();
        assert_eq!(path.last_index(), 1);
        assert!(path.parameter_length() < 1e-12);
        assert_abs_diff_eq!(path.exit_point[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_trace_reaches_entry_point() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        let x = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
        let xi = [1.0, 0.0];
        let path = geodesic_trace(&m, x, xi, 1e-3, TraceDirection::Backward).unwrap();
        assert_abs_diff_eq!(path.exit_point[0], -FRAC_1_SQRT_2, epsilon = 1e-9);
        assert_abs_diff_eq!(path.exit_point[1], FRAC_1_SQRT_2, epsilon = 1e-9);
        assert_abs_diff_eq!(path.parameter_length(), -tau_minus_euclid(x, xi).unwrap(), epsilon = 1e-9);
        assert!(path.velocities.iter().all(|v| (v[0] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn euclidean_exit_matches_chord_formula() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        for (x, a) in [([0.3, -0.2], 0.4), ([-0.5, 0.5], 2.0), ([0.0, 0.0], 4.0)] {
            let xi = [f64::cos(a), f64::sin(a)];
            let path = geodesic_trace(&m, x, xi, 1e-3, TraceDirection::Forward).unwrap();
            let t = tau_plus_euclid(x, xi);
            assert_abs_diff_eq!(path.exit_point[0], x[0] + t * xi[0], epsilon = 1e-6);
            assert_abs_diff_eq!(path.exit_point[1], x[1] + t * xi[1], epsilon = 1e-6);
        }
    }

    fn slow_ray(dtau: f64) -> GeodesicPath {
        let m = RefractiveMedium::paper_slow(0.0).unwrap();
        let xi = [-FRAC_1_SQRT_2, FRAC_1_SQRT_2];
        geodesic_trace(&m, [1.0, 0.0], xi, dtau, TraceDirection::Forward).unwrap()
    }

    #[test]
    fn refined_trace_agrees_to_fourth_order() {
        let dtau = 0.02;
        let coarse = slow_ray(dtau);
        let fine = slow_ray(dtau / 100.0);
        // compare positions at the common parameter values
        let mut worst: f64 = 0.0;
        for (s, p) in coarse.points[..coarse.last_index()].iter().enumerate() {
            let f = fine.points[s * 100];
            worst = worst.max((p[0] - f[0]).hypot(p[1] - f[1]));
        }
        assert!(worst <= 10.0 * dtau.powi(4), "worst = {worst:e}");
        // the exit point is limited by the linear segment intersection
        let e = (coarse.exit_point[0] - fine.exit_point[0]).hypot(coarse.exit_point[1] - fine.exit_point[1]);
        assert!(e < 1e-3, "exit deviation {e:e}");
    }

    #[test]
    fn g_speed_is_conserved() {
        let m = RefractiveMedium::quadratic("steep", 1.0, 0.5, 0.0).unwrap();
        let path = geodesic_trace(&m, [0.0, -1.0], [0.3, 1.0], 0.01, TraceDirection::Forward).unwrap();
        for (x, v) in path.points.iter().zip(&path.velocities) {
            let speed = m.n(*x) * v[0].hypot(v[1]);
            assert!((speed - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn trapped_or_bad_inputs_are_rejected() {
        let m = RefractiveMedium::euclid(0.0).unwrap();
        assert!(matches!(
            geodesic_trace_capped(&m, [0.0, 0.0], [1.0, 0.0], 0.01, TraceDirection::Forward, 10),
            Err(Error::MaxSteps { .. })
        ));
        assert!(matches!(
            geodesic_trace(&m, [0.0, 0.0], [0.0, 0.0], 0.01, TraceDirection::Forward),
            Err(Error::ZeroTangent)
        ));
        assert!(exit_fraction([1.5, 0.0], [1.6, 0.0]).is_err());
    }

    #[test]
    fn chord_parameters() {
        assert_eq!(tau_minus_euclid([1.0, 0.0], [1.0, 0.0]).unwrap(), -2.0);
        assert_eq!(tau_minus_euclid([1.0, 0.0], [0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            tau_minus_euclid([0.0, 1.0], [FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap(),
            -f64::sqrt(2.0),
            epsilon = 1e-15
        );
        assert!(matches!(
            tau_minus_euclid([1.0, 0.0], [-1.0, 0.0]),
            Err(Error::IncomingDirection(_))
        ));
        assert_eq!(tau_plus_euclid([0.0, 0.0], [0.6, 0.8]), 1.0);
        assert_abs_diff_eq!(tau_plus_euclid([0.5, 0.0], [1.0, 0.0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(tau_plus_euclid([0.5, 0.0], [0.0, 1.0]), 0.75f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn slow_variation_diagnostic() {
        let grid = PolarGrid::new(34, 106, 2).unwrap();
        let flat = check_slow_variation(&RefractiveMedium::euclid(0.01).unwrap(), &grid);
        assert_eq!(flat.supremum, 0.0);
        assert!(flat.holds);
        let slow = check_slow_variation(&RefractiveMedium::paper_slow(0.01).unwrap(), &grid);
        assert_abs_diff_eq!(slow.supremum, 0.004 / (4.0 / 3.0 + 0.002), epsilon = 1e-12);
        assert!(slow.holds);
        let steep = RefractiveMedium::quadratic("steep", 1.0, 10.0, 0.01).unwrap();
        let s = check_slow_variation(&steep, &grid);
        assert!(!s.holds);
        assert!(s.supremum >= 20.0 / 11.0);
    }

    #[test]
    fn custom_medium_gradient_fallback() {
        let m = RefractiveMedium::custom("bump", |x| 1.2 + 0.1 * (x[0] * 2.0).sin(), None, 1.0, 0.0).unwrap();
        let g = m.grad_n([0.3, 0.1]);
        assert_abs_diff_eq!(g[0], 0.2 * (0.6f64).cos(), epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-8);
        assert!(RefractiveMedium::custom("neg", |x| x[0], None, 0.5, 0.0).is_err());
    }
}
