//! Damped Landweber iteration with optional Nesterov momentum, noise injection
//! and reconstruction error metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{Backprojector, Denominator, InnerProducts};
use crate::error::{Error, Result};
use crate::forward::{Quadrature, RayTransform, DEFAULT_GEODESIC_STEP, DEFAULT_SUBINTERVALS};
use crate::geometry::RefractiveMedium;
use crate::grid::{BoundaryData, PolarGrid, TensorField};
use crate::tensor::multiplicity;
use crate::transport::{AdjointKind, MinNormSettings, PdeAdjoint};

/// Iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub omega: f64,
    pub max_iters: usize,
    /// Stop once the relative error against the known field drops below this.
    pub oracle_stop_tol: f64,
    /// Stop once the best error so far improved by less than this over
    /// `stagnation_window` iterations. The window has to outlast the early
    /// transient in which the error briefly rises while the residual is still
    /// falling fast; 25 iterations is too short for that at `omega = 0.1`.
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
    pub nesterov: bool,
    pub adjoint_kind: AdjointKind,
    /// Abort when the residual exceeds its running minimum by this factor.
    /// With momentum the residual ripples, so the initial residual is the
    /// reference instead.
    pub divergence_factor: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            omega: 0.1,
            max_iters: 5000,
            oracle_stop_tol: 1e-5,
            stagnation_tol: 1e-7,
            stagnation_window: 500,
            nesterov: false,
            adjoint_kind: AdjointKind::Integral,
            divergence_factor: 10.0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::Config(format!("omega = {} must be positive", self.omega)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.oracle_stop_tol >= 0.0 && self.stagnation_tol >= 0.0) {
            return Err(Error::Config("tolerances must be non-negative".into()));
        }
        if self.stagnation_window == 0 || !(self.divergence_factor > 1.0) {
            return Err(Error::Config("stagnation window must be >= 1 and divergence factor > 1".into()));
        }
        Ok(())
    }
}

/// Either representation of the adjoint, ready to apply.
pub enum Adjoint {
    Integral(Backprojector),
    Pde(PdeAdjoint),
}

impl Adjoint {
    pub fn apply(&self, data: &BoundaryData) -> Result<TensorField> {
        match self {
            Adjoint::Integral(b) => b.apply(data),
            Adjoint::Pde(p) => p.apply(data),
        }
    }
}

/// Discretization choices for building the operators of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorOptions {
    /// Subintervals per straight chord.
    pub subintervals: usize,
    /// Geodesic parameter step.
    pub dtau: f64,
    pub quadrature: Quadrature,
    pub denominator: Denominator,
    /// Viscosity of the PDE adjoint.
    pub epsilon: f64,
    pub min_norm: MinNormSettings,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self {
            subintervals: DEFAULT_SUBINTERVALS,
            dtau: DEFAULT_GEODESIC_STEP,
            quadrature: Quadrature::Trapezoid,
            denominator: Denominator::Geometric,
            epsilon: 0.0,
            min_norm: MinNormSettings::default(),
        }
    }
}

/// Forward transform, adjoint and inner products of one model.
pub struct Operators {
    pub forward: RayTransform,
    pub adjoint: Adjoint,
    pub inner: InnerProducts,
}

impl Operators {
    pub fn build(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium, kind: AdjointKind, options: &OperatorOptions) -> Result<Self> {
        let forward = if medium.is_euclidean() {
            RayTransform::euclid(grid, rank, medium.alpha_0(), options.subintervals, options.quadrature)?
        } else {
            RayTransform::geodesic(grid, rank, medium, options.dtau)?
        };
        let adjoint = match kind {
            AdjointKind::Integral => Adjoint::Integral(Backprojector::for_medium(grid, rank, medium, options.dtau, options.denominator)?),
            AdjointKind::Pde => {
                if !medium.is_euclidean() {
                    return Err(Error::InvalidMedium("the PDE adjoint is implemented for n = 1 only".into()));
                }
                Adjoint::Pde(PdeAdjoint::with_settings(grid, rank, medium.alpha_0(), options.epsilon, options.min_norm)?)
            }
        };
        Ok(Self {
            forward,
            adjoint,
            inner: InnerProducts::new(grid, rank, medium),
        })
    }

    pub fn grid(&self) -> &PolarGrid {
        self.forward.grid()
    }

    pub fn rank(&self) -> usize {
        self.forward.rank()
    }
}

/// Why the iteration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ZeroResidual,
    OracleTolerance,
    Stagnation,
    MaxIterations,
}

/// Result of a Landweber run.
#[derive(Debug, Clone)]
pub struct ReconOutcome {
    /// The iterate with the smallest error when the exact field is known, the
    /// last iterate otherwise.
    pub field: TensorField,
    /// Iteration index of `field` (0 is the initial guess).
    pub iteration: usize,
    pub iterations: usize,
    /// Relative error of every iterate, starting with the initial guess.
    pub errors: Vec<f64>,
    /// Residual norm `|I y_k - g|` at every gradient evaluation.
    pub residuals: Vec<f64>,
    pub stop: StopReason,
}

impl ReconOutcome {
    /// Smallest relative error reached, if the exact field was known.
    pub fn best_error(&self) -> Option<f64> {
        self.errors.get(self.iteration).copied()
    }
}

/// Landweber iteration from `f_0 = 0`.
pub fn landweber(gdelta: &BoundaryData, ops: &Operators, config: &ReconConfig, f_exact: Option<&TensorField>) -> Result<ReconOutcome> {
    let zero = TensorField::zeros(ops.grid(), ops.rank());
    landweber_from(zero, gdelta, ops, config, f_exact)
}

/// Landweber iteration `f_(k+1) = y_k - omega I*(I y_k - g)` with `y_k = f_k`,
/// or with Nesterov momentum `y_k = f_k + (k-1)/(k+2) (f_k - f_(k-1))`.
pub fn landweber_from(
    initial: TensorField,
    gdelta: &BoundaryData,
    ops: &Operators,
    config: &ReconConfig,
    f_exact: Option<&TensorField>,
) -> Result<ReconOutcome> {
    config.validate()?;
    let grid = *ops.grid();
    initial.check(&grid)?;
    gdelta.check(&grid)?;
    let error_of = |f: &TensorField| -> Result<Option<f64>> { f_exact.map(|e| relative_l2_error(f, e, &grid)).transpose() };

    let mut f = initial;
    let mut f_prev = f.clone();
    let mut errors = Vec::new();
    let mut best_so_far = Vec::new();
    if let Some(e) = error_of(&f)? {
        errors.push(e);
        best_so_far.push(e);
    }
    let mut best = (f.clone(), 0usize);
    let mut residuals = Vec::new();
    let mut min_residual = f64::INFINITY;
    let mut residual = BoundaryData::zeros(&grid);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for k in 0..config.max_iters {
        let y = if config.nesterov && k >= 1 {
            let beta = (k as f64 - 1.0) / (k as f64 + 2.0);
            let mut y = f.clone();
            y.axpy(beta, &f);
            y.axpy(-beta, &f_prev);
            y
        } else {
            f.clone()
        };
        ops.forward.apply_into(&y, &mut residual)?;
        residual.axpy(-1.0, gdelta);
        let rnorm = ops.inner.data_norm(&residual);
        residuals.push(rnorm);
        if rnorm == 0.0 {
            stop = StopReason::ZeroResidual;
            break;
        }
        min_residual = min_residual.min(rnorm);
        let reference = if config.nesterov { residuals[0] } else { min_residual };
        if rnorm > config.divergence_factor * reference {
            return Err(Error::DivergenceDetected {
                iteration: k,
                residual: rnorm,
                limit: config.divergence_factor * reference,
            });
        }
        let grad = ops.adjoint.apply(&residual)?;
        let mut next = y;
        next.axpy(-config.omega, &grad);
        f_prev = std::mem::replace(&mut f, next);
        iterations = k + 1;

        if let Some(e) = error_of(&f)? {
            errors.push(e);
            let prev_best = *best_so_far.last().expect("initial error recorded");
            if e < prev_best {
                best = (f.clone(), iterations);
            }
            best_so_far.push(prev_best.min(e));
            if e < config.oracle_stop_tol {
                stop = StopReason::OracleTolerance;
                break;
            }
            let w = config.stagnation_window;
            if iterations >= w && best_so_far[iterations - w] - best_so_far[iterations] < config.stagnation_tol {
                stop = StopReason::Stagnation;
                break;
            }
        } else {
            let w = config.stagnation_window;
            let n = residuals.len();
            if n > w && (residuals[n - 1 - w] - residuals[n - 1]) < config.stagnation_tol * residuals[0] {
                stop = StopReason::Stagnation;
                break;
            }
        }
    }

    let (field, iteration) = if f_exact.is_some() { best } else { (f, iterations) };
    Ok(ReconOutcome {
        field,
        iteration,
        iterations,
        errors,
        residuals,
        stop,
    })
}

/// Largest eigenvalue of `I* I` under the field inner product, by power iteration.
pub fn normal_operator_norm(ops: &Operators, iterations: usize, seed: u64) -> Result<f64> {
    let grid = ops.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = TensorField::zeros(grid, ops.rank());
    f.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let norm = ops.inner.field_norm(&f);
        f.scale(1.0 / norm);
        let g = ops.adjoint.apply(&ops.forward.apply(&f)?)?;
        lambda = ops.inner.field(&f, &g);
        f = g;
    }
    Ok(lambda)
}

/// Adds uniform noise on the strictly outgoing entries, scaled so that the
/// perturbation has plain norm `delta * |data|`. Deterministic for a fixed seed.
pub fn add_relative_uniform_noise(data: &BoundaryData, grid: &PolarGrid, delta: f64, seed: u64) -> Result<BoundaryData> {
    data.check(grid)?;
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("noise level {delta} must be >= 0")));
    }
    let mut out = data.clone();
    if delta == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = BoundaryData::from_fn(grid, |p, q| {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        if grid.is_outgoing(p, q) {
            u
        } else {
            0.0
        }
    });
    let scale = delta * data.plain_norm() / noise.plain_norm();
    out.axpy(scale, &noise);
    Ok(out)
}

/// Relative error `|a - e| / |e|` in the area-weighted norm
/// `sum_nodes a_r sum_k binom(m,k) f_k^2`.
pub fn relative_l2_error(f_approx: &TensorField, f_exact: &TensorField, grid: &PolarGrid) -> Result<f64> {
    f_approx.check(grid)?;
    f_exact.check(grid)?;
    if f_approx.rank() != f_exact.rank() {
        return Err(Error::ShapeMismatch("fields of different rank".into()));
    }
    let rank = f_exact.rank();
    let c = rank + 1;
    let weights: Vec<f64> = (0..=rank).map(|k| multiplicity(rank, k)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..grid.node_count() {
        let a = grid.area_weight(grid.node_rp(i).0);
        for k in 0..c {
            let e = f_exact.values()[i * c + k];
            let d = f_approx.values()[i * c + k] - e;
            num += a * weights[k] * d * d;
            den += a * weights[k] * e * e;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> (PolarGrid, Operators, TensorField) {
        let grid = PolarGrid::new(6, 20, 20).unwrap();
        let medium = RefractiveMedium::euclid(0.0).unwrap();
        let ops = Operators::build(&grid, 1, &medium, AdjointKind::Integral, &OperatorOptions::default()).unwrap();
        let f = TensorField::from_fn(&grid, 1, |x, v| v.copy_from_slice(&[x[0] + x[1], x[0] - x[1]]));
        (grid, ops, f)
    }

    #[test]
    fn error_metric_examples() {
        let (grid, _, f) = tiny();
        assert_eq!(relative_l2_error(&f, &f, &grid).unwrap(), 0.0);
        let zero = TensorField::zeros(&grid, 1);
        assert_abs_diff_eq!(relative_l2_error(&zero, &f, &grid).unwrap(), 1.0, epsilon = 1e-15);
        let mut g = f.clone();
        g.scale(1.1);
        assert_abs_diff_eq!(relative_l2_error(&g, &f, &grid).unwrap(), 0.1, epsilon = 1e-12);
        assert!(matches!(relative_l2_error(&f, &zero, &grid), Err(Error::ZeroField)));
    }

    #[test]
    fn noise_has_exact_relative_norm() {
        let (grid, ops, f) = tiny();
        let data = ops.forward.apply(&f).unwrap();
        assert_eq!(add_relative_uniform_noise(&data, &grid, 0.0, 1).unwrap(), data);
        let a = add_relative_uniform_noise(&data, &grid, 0.05, 1).unwrap();
        let b = add_relative_uniform_noise(&data, &grid, 0.05, 2).unwrap();
        let again = add_relative_uniform_noise(&data, &grid, 0.05, 1).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, b);
        for noisy in [&a, &b] {
            let mut d = noisy.clone();
            d.axpy(-1.0, &data);
            assert_abs_diff_eq!(d.plain_norm() / data.plain_norm(), 0.05, epsilon = 1e-12);
            for i in 0..grid.data_len() {
                let (p, q) = grid.data_pq(i);
                if !grid.is_outgoing(p, q) {
                    assert_eq!(noisy.values()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn exact_start_is_a_fixed_point() {
        let (_, ops, f) = tiny();
        let g = ops.forward.apply(&f).unwrap();
        let out = landweber_from(f.clone(), &g, &ops, &ReconConfig::default(), Some(&f)).unwrap();
        assert_eq!(out.stop, StopReason::ZeroResidual);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.field, f);
    }

    #[test]
    fn residual_is_monotone_below_the_norm_bound() {
        let (_, ops, f) = tiny();
        let g = ops.forward.apply(&f).unwrap();
        let lambda = normal_operator_norm(&ops, 50, 7).unwrap();
        let config = ReconConfig {
            omega: 1.0 / lambda,
            max_iters: 200,
            ..ReconConfig::default()
        };
        let out = landweber(&g, &ops, &config, None).unwrap();
        // the backprojection is only approximately the transpose, so near the
        // floor the residual drifts up by about a percent before settling
        for (i, w) in out.residuals[..100].windows(2).enumerate() {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{i}: {} > {}", w[1], w[0]);
        }
        let mut floor = f64::INFINITY;
        for &r in &out.residuals {
            floor = floor.min(r);
            assert!(r <= 1.05 * floor, "{r} vs floor {floor}");
        }
        assert!(out.residuals.last().unwrap() < &(1e-2 * out.residuals[0]));
    }

    #[test]
    fn step_is_linear_in_omega() {
        let (_, ops, f) = tiny();
        let g = ops.forward.apply(&f).unwrap();
        let one_step = |omega: f64| {
            let config = ReconConfig {
                omega,
                max_iters: 1,
                ..ReconConfig::default()
            };
            landweber(&g, &ops, &config, None).unwrap().field
        };
        let a = one_step(0.1);
        let b = one_step(0.05);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(*x, 2.0 * y, epsilon = 1e-14);
        }
    }

    #[test]
    fn large_step_is_reported_as_divergence() {
        let (_, ops, f) = tiny();
        let g = ops.forward.apply(&f).unwrap();
        let config = ReconConfig {
            omega: 10.0,
            ..ReconConfig::default()
        };
        assert!(matches!(landweber(&g, &ops, &config, Some(&f)), Err(Error::DivergenceDetected { .. })));
        let config = ReconConfig {
            omega: 10.0,
            nesterov: true,
            ..ReconConfig::default()
        };
        assert!(matches!(landweber(&g, &ops, &config, Some(&f)), Err(Error::DivergenceDetected { .. })));
    }

    #[test]
    fn early_errors_decrease_and_best_iterate_is_returned() {
        let (grid, ops, f) = tiny();
        let g = ops.forward.apply(&f).unwrap();
        let config = ReconConfig {
            max_iters: 300,
            ..ReconConfig::default()
        };
        let out = landweber(&g, &ops, &config, Some(&f)).unwrap();
        for w in out.errors[..11].windows(2) {
            assert!(w[1] <= w[0]);
        }
        let best = out.errors.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_error(), Some(best));
        assert_abs_diff_eq!(relative_l2_error(&out.field, &f, &grid).unwrap(), best, epsilon = 1e-15);
    }
}
