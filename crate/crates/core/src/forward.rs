//! The attenuated ray transform: straight chords for `n = 1`, traced geodesics
//! otherwise. Each transform exists as a matrix-free evaluation and as a
//! precomputed sparse operator for repeated application.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_trace, RefractiveMedium, TraceDirection};
use crate::grid::{sample_interior, BoundaryData, PolarGrid, TensorField};
use crate::sparse::{BlockRows, RowAccumulator};
use crate::tensor::{component_count, contract, contraction_coefficients};

/// Default number of subintervals per straight chord.
pub const DEFAULT_SUBINTERVALS: usize = 200;
/// Default geodesic parameter step.
pub const DEFAULT_GEODESIC_STEP: f64 = 2.0 / 200.0;

/// Quadrature rule along straight chords.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Trapezoid with weights `dtau * (1/2, 1, ..., 1, 1/2)`.
    #[default]
    Trapezoid,
    /// Plain average `1/(T+1)` of the samples, without the chord length factor.
    PaperVerbatim,
}

/// A quadrature node along a ray. `weight` already contains the quadrature
/// weight, the attenuation factor and the metric factor `n^(2m)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RaySample {
    pub x: [f64; 2],
    pub v: [f64; 2],
    pub weight: f64,
}

/// Samples of the chord ending at `x_p` with direction `xi_q`.
pub(crate) fn euclid_ray_samples(
    grid: &PolarGrid,
    p: usize,
    q: usize,
    alpha0: f64,
    subintervals: usize,
    quadrature: Quadrature,
    out: &mut Vec<RaySample>,
) {
    out.clear();
    if !grid.is_outgoing(p, q) {
        return;
    }
    let x = grid.boundary_point(p);
    let xi = grid.direction(q);
    let tau_minus = -2.0 * (x[0] * xi[0] + x[1] * xi[1]);
    let dtau = -tau_minus / subintervals as f64;
    for t in 0..=subintervals {
        let tau = tau_minus + t as f64 * dtau;
        let c = match quadrature {
            Quadrature::Trapezoid if t == 0 || t == subintervals => 0.5 * dtau,
            Quadrature::Trapezoid => dtau,
            Quadrature::PaperVerbatim => 1.0 / (subintervals + 1) as f64,
        };
        out.push(RaySample {
            x: [x[0] + tau * xi[0], x[1] + tau * xi[1]],
            v: xi,
            weight: c * (alpha0 * tau).exp(),
        });
    }
}

/// Samples of the geodesic ending at `x_p` with g-unit direction
/// `n(x_p)^-1 (cos phi_q, sin phi_q)`, traced backwards to its entry point.
///
/// The attenuation exponent is a running trapezoid over the same nodes as the
/// outer integral, with the shortened final step `dtau_star` for the segment
/// that reaches the boundary.
pub(crate) fn geodesic_ray_samples(
    medium: &RefractiveMedium,
    grid: &PolarGrid,
    p: usize,
    q: usize,
    rank: usize,
    dtau: f64,
    out: &mut Vec<RaySample>,
) -> Result<()> {
    out.clear();
    if !grid.is_outgoing(p, q) {
        return Ok(());
    }
    let path = geodesic_trace(medium, grid.boundary_point(p), grid.direction(q), dtau, TraceDirection::Backward)?;
    let s_last = path.last_index();
    // nodes 0..S-1 inside, then the exit point in place of node S
    let mut nodes: Vec<([f64; 2], [f64; 2])> = path.points[..s_last]
        .iter()
        .copied()
        .zip(path.velocities[..s_last].iter().copied())
        .collect();
    nodes.push((path.exit_point, path.exit_velocity));
    let steps: Vec<f64> = (0..s_last)
        .map(|s| if s + 1 == s_last { path.dtau_star } else { dtau })
        .collect();

    let mut quad = vec![0.0; nodes.len()];
    for (s, h) in steps.iter().enumerate() {
        quad[s] += 0.5 * h;
        quad[s + 1] += 0.5 * h;
    }
    let mut exponent = 0.0;
    let mut prev_alpha = medium.alpha(nodes[0].0, nodes[0].1);
    for (s, &(x, v)) in nodes.iter().enumerate() {
        let alpha = medium.alpha(x, v);
        if s > 0 {
            exponent -= 0.5 * steps[s - 1] * (prev_alpha + alpha);
        }
        prev_alpha = alpha;
        out.push(RaySample {
            x,
            v,
            weight: quad[s] * exponent.exp() * medium.n(x).powi(2 * rank as i32),
        });
    }
    Ok(())
}

fn evaluate(field: &TensorField, grid: &PolarGrid, samples: &[RaySample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let f = sample_interior(field, grid, s.x)?;
        total += s.weight * contract(field.rank(), &f, s.v);
    }
    Ok(total)
}

/// Matrix-free straight-chord transform with the trapezoid rule.
pub fn ray_transform_euclid(field: &TensorField, alpha0: f64, grid: &PolarGrid, subintervals: usize) -> Result<BoundaryData> {
    ray_transform_euclid_with(field, alpha0, grid, subintervals, Quadrature::Trapezoid)
}

pub fn ray_transform_euclid_with(
    field: &TensorField,
    alpha0: f64,
    grid: &PolarGrid,
    subintervals: usize,
    quadrature: Quadrature,
) -> Result<BoundaryData> {
    field.check(grid)?;
    check_subintervals(subintervals)?;
    let values = (0..grid.data_len())
        .into_par_iter()
        .map_init(Vec::new, |samples, i| {
            let (p, q) = grid.data_pq(i);
            euclid_ray_samples(grid, p, q, alpha0, subintervals, quadrature, samples);
            evaluate(field, grid, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    BoundaryData::from_values(grid, values)
}

/// Matrix-free geodesic transform.
pub fn ray_transform_geodesic(field: &TensorField, medium: &RefractiveMedium, grid: &PolarGrid, dtau: f64) -> Result<BoundaryData> {
    field.check(grid)?;
    let values = (0..grid.data_len())
        .into_par_iter()
        .map_init(Vec::new, |samples, i| {
            let (p, q) = grid.data_pq(i);
            geodesic_ray_samples(medium, grid, p, q, field.rank(), dtau, samples)?;
            evaluate(field, grid, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    BoundaryData::from_values(grid, values)
}

/// Transform of a field given as a function of position, evaluated exactly at
/// the quadrature nodes instead of interpolated from grid samples. Used to
/// synthesize measurement data that does not lie in the range of the
/// discrete operator.
pub fn ray_transform_analytic<F>(
    field: F,
    rank: usize,
    medium: &RefractiveMedium,
    grid: &PolarGrid,
    subintervals: usize,
    dtau: f64,
) -> Result<BoundaryData>
where
    F: Fn([f64; 2], &mut [f64]) + Sync,
{
    check_subintervals(subintervals)?;
    let c = component_count(rank);
    let values = (0..grid.data_len())
        .into_par_iter()
        .map_init(
            || (Vec::new(), vec![0.0; c]),
            |(samples, f), i| {
                let (p, q) = grid.data_pq(i);
                if medium.is_euclidean() {
                    euclid_ray_samples(grid, p, q, medium.alpha_0(), subintervals, Quadrature::Trapezoid, samples);
                } else {
                    geodesic_ray_samples(medium, grid, p, q, rank, dtau, samples)?;
                }
                let mut total = 0.0;
                for s in samples.iter() {
                    field(s.x, f);
                    total += s.weight * contract(rank, f, s.v);
                }
                Ok(total)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    BoundaryData::from_values(grid, values)
}

fn check_subintervals(t: usize) -> Result<()> {
    if t < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 subintervals, got {t}")));
    }
    Ok(())
}

/// A ray transform precomputed as a sparse operator from nodal tensor
/// components to boundary data.
#[derive(Debug, Clone)]
pub struct RayTransform {
    grid: PolarGrid,
    rank: usize,
    matrix: BlockRows,
}

impl RayTransform {
    pub fn euclid(grid: &PolarGrid, rank: usize, alpha0: f64, subintervals: usize, quadrature: Quadrature) -> Result<Self> {
        check_subintervals(subintervals)?;
        Self::assemble(grid, rank, |p, q, out| {
            euclid_ray_samples(grid, p, q, alpha0, subintervals, quadrature, out);
            Ok(())
        })
    }

    pub fn geodesic(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium, dtau: f64) -> Result<Self> {
        Self::assemble(grid, rank, |p, q, out| geodesic_ray_samples(medium, grid, p, q, rank, dtau, out))
    }

    /// Picks the straight-chord operator for `n = 1` and the geodesic one otherwise.
    pub fn for_medium(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium, subintervals: usize, dtau: f64) -> Result<Self> {
        if medium.is_euclidean() {
            Self::euclid(grid, rank, medium.alpha_0(), subintervals, Quadrature::Trapezoid)
        } else {
            Self::geodesic(grid, rank, medium, dtau)
        }
    }

    fn assemble<F>(grid: &PolarGrid, rank: usize, samples_of: F) -> Result<Self>
    where
        F: Fn(usize, usize, &mut Vec<RaySample>) -> Result<()> + Sync,
    {
        let block = component_count(rank);
        let nodes = grid.node_count();
        let rows = (0..grid.data_len())
            .into_par_iter()
            .map_init(
                || (RowAccumulator::new(block, nodes), Vec::new(), Vec::new(), vec![0.0; block]),
                |(acc, samples, stencil, coeffs), i| {
                    let (p, q) = grid.data_pq(i);
                    samples_of(p, q, samples)?;
                    for s in samples.iter() {
                        grid.stencil_into(s.x, stencil)?;
                        contraction_coefficients(rank, s.v, coeffs);
                        for &(node, w) in stencil.iter() {
                            acc.add(node, s.weight * w, coeffs);
                        }
                    }
                    Ok(acc.take())
                },
            )
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            rank,
            matrix: BlockRows::from_rows(block, nodes, rows),
        })
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn apply(&self, field: &TensorField) -> Result<BoundaryData> {
        let mut out = BoundaryData::zeros(&self.grid);
        self.apply_into(field, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, field: &TensorField, out: &mut BoundaryData) -> Result<()> {
        field.check(&self.grid)?;
        out.check(&self.grid)?;
        if field.rank() != self.rank {
            return Err(Error::ShapeMismatch(format!("field rank {} but operator rank {}", field.rank(), self.rank)));
        }
        self.matrix.contract_into(field.values(), out.values_mut());
        Ok(())
    }

    /// Exact transpose with respect to plain sums over samples.
    pub fn apply_transpose(&self, data: &BoundaryData) -> Result<TensorField> {
        data.check(&self.grid)?;
        let mut values = vec![0.0; self.grid.node_count() * component_count(self.rank)];
        self.matrix.contract_transpose_into(data.values(), &mut values);
        TensorField::from_values(&self.grid, self.rank, values)
    }
}

/// Samples the Euclidean gradient of a potential `phi` that vanishes on the
/// boundary circle, using central differences with step `1e-6`.
pub fn potential_field_gradient(phi: impl Fn([f64; 2]) -> f64, grid: &PolarGrid) -> Result<TensorField> {
    for p in 1..=grid.angles() {
        let value = phi(grid.boundary_point(p));
        if value.abs() > 1e-8 {
            return Err(Error::BoundaryNonzero { p, value });
        }
    }
    let h = 1e-6;
    Ok(TensorField::from_fn(grid, 1, |x, out| {
        out[0] = (phi([x[0] + h, x[1]]) - phi([x[0] - h, x[1]])) / (2.0 * h);
        out[1] = (phi([x[0], x[1] + h]) - phi([x[0], x[1] - h])) / (2.0 * h);
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small() -> PolarGrid {
        PolarGrid::new(8, 24, 20).unwrap()
    }

    /// Data index of the diameter ray leaving at `(1, 0)` in direction `(1, 0)`.
    fn diameter(grid: &PolarGrid) -> usize {
        grid.data_index(grid.angles(), grid.directions())
    }

    #[test]
    fn constant_field_on_diameter() {
        let grid = small();
        let f = TensorField::from_fn(&grid, 1, |_, v| v.copy_from_slice(&[0.7, -0.2]));
        let h = ray_transform_euclid(&f, 0.0, &grid, 200).unwrap();
        assert_abs_diff_eq!(h.values()[diameter(&grid)], 1.4, epsilon = 1e-12);
        let h = ray_transform_euclid(&f, 0.1, &grid, 200).unwrap();
        let exact = 0.7 * (1.0 - f64::exp(-0.2)) / 0.1;
        assert_abs_diff_eq!(h.values()[diameter(&grid)], exact, epsilon = 1e-4);
    }

    #[test]
    fn harmonic_field_integrates_to_zero_on_diameter() {
        let grid = PolarGrid::new(34, 106, 106).unwrap();
        let f = TensorField::from_fn(&grid, 1, |x, v| v.copy_from_slice(&[x[0] + x[1], x[0] - x[1]]));
        let h = ray_transform_euclid(&f, 0.0, &grid, 200).unwrap();
        assert_abs_diff_eq!(h.values()[diameter(&grid)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn incoming_pairs_are_zero() {
        let grid = small();
        let f = TensorField::from_fn(&grid, 1, |_, v| v.copy_from_slice(&[1.0, 1.0]));
        let h = ray_transform_euclid(&f, 0.0, &grid, 50).unwrap();
        for i in 0..grid.data_len() {
            let (p, q) = grid.data_pq(i);
            if !grid.is_outgoing(p, q) {
                assert_eq!(h.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn paper_verbatim_quadrature_is_a_plain_average() {
        let grid = small();
        let f = TensorField::from_fn(&grid, 1, |_, v| v.copy_from_slice(&[0.7, -0.2]));
        let h = ray_transform_euclid_with(&f, 0.0, &grid, 200, Quadrature::PaperVerbatim).unwrap();
        assert_abs_diff_eq!(h.values()[diameter(&grid)], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn operator_matches_matrix_free_evaluation() {
        let grid = small();
        let f = TensorField::from_fn(&grid, 1, |x, v| v.copy_from_slice(&[x[0] * x[1] + 0.3, (2.0 * x[0]).sin()]));
        let op = RayTransform::euclid(&grid, 1, 0.1, 60, Quadrature::Trapezoid).unwrap();
        let a = op.apply(&f).unwrap();
        let b = ray_transform_euclid(&f, 0.1, &grid, 60).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let m = RefractiveMedium::paper_slow(0.05).unwrap();
        let op = RayTransform::geodesic(&grid, 1, &m, 0.05).unwrap();
        let a = op.apply(&f).unwrap();
        let b = ray_transform_geodesic(&f, &m, &grid, 0.05).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_two_constant_field() {
        let grid = small();
        // f = e1 (x) e1: <f, xi^2> = xi_1^2, diameter along e1 has length 2
        let f = TensorField::from_fn(&grid, 2, |_, v| v.copy_from_slice(&[1.0, 0.0, 0.0]));
        let h = ray_transform_euclid(&f, 0.0, &grid, 40).unwrap();
        assert_abs_diff_eq!(h.values()[diameter(&grid)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_matches_euclid_for_unit_index() {
        let grid = small();
        let f = TensorField::from_fn(&grid, 1, |x, v| v.copy_from_slice(&[1.0 + x[1], x[0] * x[0]]));
        let m = RefractiveMedium::euclid(0.1).unwrap();
        let a = ray_transform_geodesic(&f, &m, &grid, 0.01).unwrap();
        let b = ray_transform_euclid(&f, 0.1, &grid, 200).unwrap();
        let diff: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * b.plain_norm(), "{diff}");
    }

    #[test]
    fn potential_gradients() {
        let grid = small();
        let g = potential_field_gradient(|x| 1.0 - x[0] * x[0] - x[1] * x[1], &grid).unwrap();
        let g2 = potential_field_gradient(|x| (1.0 - x[0] * x[0] - x[1] * x[1]) * x[0], &grid).unwrap();
        for i in 0..grid.node_count() {
            let x = grid.node_position(i);
            assert_abs_diff_eq!(g.node(i)[0], -2.0 * x[0], epsilon = 1e-8);
            assert_abs_diff_eq!(g.node(i)[1], -2.0 * x[1], epsilon = 1e-8);
            assert_abs_diff_eq!(g2.node(i)[0], 1.0 - 3.0 * x[0] * x[0] - x[1] * x[1], epsilon = 1e-8);
            assert_abs_diff_eq!(g2.node(i)[1], -2.0 * x[0] * x[1], epsilon = 1e-8);
        }
        let zero = potential_field_gradient(|_| 0.0, &grid).unwrap();
        assert_eq!(zero.plain_norm(), 0.0);
        assert!(matches!(
            potential_field_gradient(|x| x[0], &grid),
            Err(Error::BoundaryNonzero { .. })
        ));
    }
}
