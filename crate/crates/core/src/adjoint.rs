//! Integral representation of the adjoint transform: the characteristic weight
//! `w` along the ray leaving each node, averaged over directions. Also holds the
//! discrete inner products under which the transforms are compared.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_trace, tau_plus_euclid, RefractiveMedium, TraceDirection};
use crate::grid::{angle_cell, boundary_stencil_2d, BoundaryData, PolarGrid, TensorField};
use crate::sparse::{BlockRows, RowAccumulator};
use crate::tensor::{component_count, multiplicity, tensor_power};

/// Weights whose exit denominator falls below this magnitude are set to zero.
pub const TANGENTIAL_CUTOFF: f64 = 1e-8;

/// How the exit denominator `<nu, gamma'>_g` is evaluated on curved rays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Denominator {
    /// `n(exit) <exit, gamma'(exit)>`, the g-inner product with the g-unit normal.
    #[default]
    Geometric,
    /// `n(start)^-2 <exit, gamma'(exit)>`, with `n` taken at the node the ray starts from.
    PaperVerbatim,
}

/// Weight `w(x, xi_q)` as a linear functional of the boundary data: the data
/// indices with their coefficients, or `None` for tangential exits.
fn euclid_weight_stencil(grid: &PolarGrid, alpha0: f64, x: [f64; 2], q: usize) -> Option<[(usize, f64); 2]> {
    let xi = grid.direction(q);
    let tau = tau_plus_euclid(x, xi);
    let denominator = x[0] * xi[0] + x[1] * xi[1] + tau;
    if denominator.abs() < TANGENTIAL_CUTOFF {
        return None;
    }
    let exit = [x[0] + tau * xi[0], x[1] + tau * xi[1]];
    let (lo, hi, t) = angle_cell(exit[1].atan2(exit[0]), grid.angles());
    let scale = (-alpha0 * tau).exp() / denominator;
    let nq = grid.directions();
    Some([(lo * nq + q - 1, scale * (1.0 - t)), (hi * nq + q - 1, scale * t)])
}

/// Characteristic weight `h(exit, xi_q) exp(-alpha0 tau_+) / <exit, xi_q>` of the
/// straight ray from `x` in direction `xi_q`.
pub fn weight_euclid(data: &BoundaryData, grid: &PolarGrid, alpha0: f64, x: [f64; 2], q: usize) -> f64 {
    match euclid_weight_stencil(grid, alpha0, x, q) {
        Some(st) => st.iter().map(|&(i, c)| c * data.values()[i]).sum(),
        None => 0.0,
    }
}

/// Matrix-free backprojection `(2 pi / Q) sum_q w(x, xi_q) xi_q^m` for `n = 1`.
pub fn backproject_euclid(data: &BoundaryData, grid: &PolarGrid, alpha0: f64, rank: usize) -> Result<TensorField> {
    data.check(grid)?;
    let block = component_count(rank);
    let dphi = grid.delta_phi();
    let mut values = vec![0.0; grid.node_count() * block];
    values.par_chunks_mut(block).enumerate().for_each(|(i, out)| {
        let x = grid.node_position(i);
        let mut power = vec![0.0; block];
        for q in 1..=grid.directions() {
            let w = weight_euclid(data, grid, alpha0, x, q);
            tensor_power(rank, grid.direction(q), &mut power);
            for (o, t) in out.iter_mut().zip(&power) {
                *o += dphi * w * t;
            }
        }
    });
    TensorField::from_values(grid, rank, values)
}

/// Weight of the geodesic leaving `x` with direction `xi`, as a linear functional
/// of the boundary data. Also returns the g-unit starting velocity.
fn geodesic_weight_stencil(
    grid: &PolarGrid,
    medium: &RefractiveMedium,
    x: [f64; 2],
    xi: [f64; 2],
    dtau: f64,
    denominator: Denominator,
) -> Result<(Option<[(usize, f64); 4]>, [f64; 2])> {
    let path = geodesic_trace(medium, x, xi, dtau, TraceDirection::Forward)?;
    let v0 = path.velocities[0];
    let s_last = path.last_index();
    let exit = path.exit_point;
    let exit_v = path.exit_velocity;
    let radial = exit[0] * exit_v[0] + exit[1] * exit_v[1];
    let den = match denominator {
        Denominator::Geometric => medium.n(exit) * radial,
        Denominator::PaperVerbatim => radial / medium.n(x).powi(2),
    };
    if den.abs() < TANGENTIAL_CUTOFF {
        return Ok((None, v0));
    }
    // running trapezoid of alpha + Xi_n, Xi_n = n^-1 <grad n, gamma'> / 2
    let rate = |y: [f64; 2], v: [f64; 2]| {
        let g = medium.grad_n(y);
        medium.alpha(y, v) + 0.5 * (g[0] * v[0] + g[1] * v[1]) / medium.n(y)
    };
    let mut exponent = 0.0;
    let mut prev = rate(path.points[0], path.velocities[0]);
    for s in 1..s_last {
        let cur = rate(path.points[s], path.velocities[s]);
        exponent += 0.5 * dtau * (prev + cur);
        prev = cur;
    }
    exponent += 0.5 * path.dtau_star * (prev + rate(exit, exit_v));
    let scale = (-exponent).exp() / den;
    let mut st = boundary_stencil_2d(grid, exit[1].atan2(exit[0]), exit_v[1].atan2(exit_v[0]));
    for e in st.iter_mut() {
        e.1 *= scale;
    }
    Ok((Some(st), v0))
}

/// Characteristic weight of the geodesic leaving `x` with direction `xi`
/// (rescaled to g-unit length).
pub fn weight_geodesic(
    data: &BoundaryData,
    grid: &PolarGrid,
    medium: &RefractiveMedium,
    x: [f64; 2],
    xi: [f64; 2],
    dtau: f64,
    denominator: Denominator,
) -> Result<f64> {
    data.check(grid)?;
    Ok(match geodesic_weight_stencil(grid, medium, x, xi, dtau, denominator)?.0 {
        Some(st) => st.iter().map(|&(i, c)| c * data.values()[i]).sum(),
        None => 0.0,
    })
}

/// Matrix-free backprojection along geodesics, directions
/// `n(x)^-1 (cos phi_q, sin phi_q)` and quadrature weight `2 pi / Q`.
pub fn backproject_geodesic(
    data: &BoundaryData,
    grid: &PolarGrid,
    medium: &RefractiveMedium,
    rank: usize,
    dtau: f64,
    denominator: Denominator,
) -> Result<TensorField> {
    data.check(grid)?;
    let block = component_count(rank);
    let dphi = grid.delta_phi();
    let values = (0..grid.node_count())
        .into_par_iter()
        .map(|i| {
            let x = grid.node_position(i);
            let mut out = vec![0.0; block];
            let mut power = vec![0.0; block];
            for q in 1..=grid.directions() {
                let (st, v0) = geodesic_weight_stencil(grid, medium, x, grid.direction(q), dtau, denominator)?;
                let w: f64 = st.map_or(0.0, |st| st.iter().map(|&(j, c)| c * data.values()[j]).sum());
                tensor_power(rank, v0, &mut power);
                for (o, t) in out.iter_mut().zip(&power) {
                    *o += dphi * w * t;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    TensorField::from_values(grid, rank, values.concat())
}

/// The integral adjoint precomputed as a sparse operator from boundary data to
/// nodal tensor components.
#[derive(Debug, Clone)]
pub struct Backprojector {
    grid: PolarGrid,
    rank: usize,
    matrix: BlockRows,
}

impl Backprojector {
    pub fn euclid(grid: &PolarGrid, rank: usize, alpha0: f64) -> Result<Self> {
        Self::assemble(grid, rank, |x, q, power| {
            let xi = grid.direction(q);
            tensor_power(rank, xi, power);
            Ok(euclid_weight_stencil(grid, alpha0, x, q).map(|s| s.to_vec()))
        })
    }

    pub fn geodesic(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium, dtau: f64, denominator: Denominator) -> Result<Self> {
        Self::assemble(grid, rank, |x, q, power| {
            let (st, v0) = geodesic_weight_stencil(grid, medium, x, grid.direction(q), dtau, denominator)?;
            tensor_power(rank, v0, power);
            Ok(st.map(|s| s.to_vec()))
        })
    }

    /// Straight rays for `n = 1`, geodesics otherwise.
    pub fn for_medium(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium, dtau: f64, denominator: Denominator) -> Result<Self> {
        if medium.is_euclidean() {
            Self::euclid(grid, rank, medium.alpha_0())
        } else {
            Self::geodesic(grid, rank, medium, dtau, denominator)
        }
    }

    fn assemble<F>(grid: &PolarGrid, rank: usize, stencil_of: F) -> Result<Self>
    where
        F: Fn([f64; 2], usize, &mut [f64]) -> Result<Option<Vec<(usize, f64)>>> + Sync,
    {
        let block = component_count(rank);
        let dphi = grid.delta_phi();
        let rows = (0..grid.node_count())
            .into_par_iter()
            .map_init(
                || (RowAccumulator::new(block, grid.data_len()), vec![0.0; block]),
                |(acc, power), i| {
                    let x = grid.node_position(i);
                    for q in 1..=grid.directions() {
                        if let Some(st) = stencil_of(x, q, power)? {
                            for (j, c) in st {
                                acc.add(j, dphi * c, power);
                            }
                        }
                    }
                    Ok(acc.take())
                },
            )
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            rank,
            matrix: BlockRows::from_rows(block, grid.data_len(), rows),
        })
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, data: &BoundaryData) -> Result<TensorField> {
        let mut out = TensorField::zeros(&self.grid, self.rank);
        self.apply_into(data, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, data: &BoundaryData, out: &mut TensorField) -> Result<()> {
        data.check(&self.grid)?;
        out.check(&self.grid)?;
        if out.rank() != self.rank {
            return Err(Error::ShapeMismatch(format!("field rank {} but operator rank {}", out.rank(), self.rank)));
        }
        self.matrix.expand_into(data.values(), out.values_mut());
        Ok(())
    }
}

/// Discrete inner products for fields and boundary data.
///
/// Fields: `sum_nodes a_r n^(2m+2) sum_k binom(m,k) f_k g_k` with the polar
/// area weights `a_r`, i.e. the g-volume and the g-pairing of tensors.
/// Data: `sum_(p,q) n(x_p) d_mu d_phi h k`, the g-arc length of the boundary
/// times the direction angle. Under these products the integral backprojection
/// approximates the adjoint of the ray transform.
#[derive(Debug, Clone)]
pub struct InnerProducts {
    rank: usize,
    node_weights: Vec<f64>,
    component_weights: Vec<f64>,
    data_weights: Vec<f64>,
}

impl InnerProducts {
    pub fn new(grid: &PolarGrid, rank: usize, medium: &RefractiveMedium) -> Self {
        let node_weights = (0..grid.node_count())
            .map(|i| {
                let (r, _) = grid.node_rp(i);
                grid.area_weight(r) * medium.n(grid.node_position(i)).powi(2 * rank as i32 + 2)
            })
            .collect();
        let cell = grid.delta_mu() * grid.delta_phi();
        let data_weights = (0..grid.data_len())
            .map(|i| cell * medium.n(grid.boundary_point(grid.data_pq(i).0)))
            .collect();
        Self {
            rank,
            node_weights,
            component_weights: (0..=rank).map(|k| multiplicity(rank, k)).collect(),
            data_weights,
        }
    }

    /// Euclidean products on a grid with `n = 1`.
    pub fn euclidean(grid: &PolarGrid, rank: usize) -> Self {
        Self::new(grid, rank, &RefractiveMedium::euclid(0.0).expect("unit index is valid"))
    }

    pub fn field(&self, a: &TensorField, b: &TensorField) -> f64 {
        let c = self.component_weights.len();
        a.values()
            .chunks(c)
            .zip(b.values().chunks(c))
            .zip(&self.node_weights)
            .map(|((x, y), w)| {
                w * x
                    .iter()
                    .zip(y)
                    .zip(&self.component_weights)
                    .map(|((u, v), m)| m * u * v)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn data(&self, a: &BoundaryData, b: &BoundaryData) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .zip(&self.data_weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    }

    pub fn field_norm(&self, a: &TensorField) -> f64 {
        self.field(a, a).sqrt()
    }

    pub fn data_norm(&self, a: &BoundaryData) -> f64 {
        self.data(a, a).sqrt()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Relative defect `|<If, If> - <f, A If>| / <If, If>` of an adjoint candidate `A`.
pub fn relative_duality_defect(
    f: &TensorField,
    forward: impl Fn(&TensorField) -> Result<BoundaryData>,
    adjoint: impl Fn(&BoundaryData) -> Result<TensorField>,
    inner: &InnerProducts,
) -> Result<f64> {
    let data = forward(f)?;
    let energy = inner.data(&data, &data);
    if energy == 0.0 {
        return Err(Error::ZeroData);
    }
    let back = adjoint(&data)?;
    Ok((energy - inner.field(f, &back)).abs() / energy)
}
