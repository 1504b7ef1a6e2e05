//! Polar discretizations of the disc, its boundary and the direction circle,
//! plus the interpolation rules used to sample fields and boundary data off-grid.
//!
//! Indices follow the 1-based convention of the parameterization:
//! rings `r = 1..=R` at radius `r / R`, angular nodes `p = 1..=P` at
//! `mu_p = 2 pi p / P`, and directions `q = 1..=Q` at `phi_q = 2 pi q / Q`.
//! Storage is 0-based and row-major: node `(r, p)` lives at `(r - 1) * P + (p - 1)`
//! and boundary entry `(p, q)` at `(p - 1) * Q + (q - 1)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor;

/// Points further than this outside the unit circle are rejected by the samplers.
pub const BOUNDARY_SLACK: f64 = 1e-12;

/// Polar grid with `R` rings, `P` angular nodes per ring and `Q` directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolarGrid {
    radii: usize,
    angles: usize,
    directions: usize,
}

impl PolarGrid {
    pub fn new(radii: usize, angles: usize, directions: usize) -> Result<Self> {
        if radii < 2 {
            return Err(Error::InvalidGrid(format!("R = {radii} must be at least 2")));
        }
        if angles < 4 {
            return Err(Error::InvalidGrid(format!("P = {angles} must be at least 4")));
        }
        if !angles.is_multiple_of(2) {
            return Err(Error::OddP(angles));
        }
        if directions < 2 {
            return Err(Error::InvalidGrid(format!("Q = {directions} must be at least 2")));
        }
        Ok(Self {
            radii,
            angles,
            directions,
        })
    }

    /// Number of rings `R`.
    pub fn radii(&self) -> usize {
        self.radii
    }

    /// Number of angular nodes per ring, `P`.
    pub fn angles(&self) -> usize {
        self.angles
    }

    /// Number of directions `Q`.
    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn delta_rho(&self) -> f64 {
        1.0 / self.radii as f64
    }

    pub fn delta_mu(&self) -> f64 {
        2.0 * PI / self.angles as f64
    }

    pub fn delta_phi(&self) -> f64 {
        2.0 * PI / self.directions as f64
    }

    /// Radius of ring `r` (1-based).
    pub fn rho(&self, r: usize) -> f64 {
        r as f64 / self.radii as f64
    }

    /// Angle of node `p` (1-based).
    pub fn mu(&self, p: usize) -> f64 {
        2.0 * PI * p as f64 / self.angles as f64
    }

    /// Angle of direction `q` (1-based).
    pub fn phi(&self, q: usize) -> f64 {
        2.0 * PI * q as f64 / self.directions as f64
    }

    pub fn node_count(&self) -> usize {
        self.radii * self.angles
    }

    pub fn data_len(&self) -> usize {
        self.angles * self.directions
    }

    pub fn node_index(&self, r: usize, p: usize) -> usize {
        debug_assert!((1..=self.radii).contains(&r) && (1..=self.angles).contains(&p));
        (r - 1) * self.angles + (p - 1)
    }

    /// Inverse of [`PolarGrid::node_index`]: the 1-based `(r, p)` pair.
    pub fn node_rp(&self, index: usize) -> (usize, usize) {
        (index / self.angles + 1, index % self.angles + 1)
    }

    pub fn node(&self, r: usize, p: usize) -> [f64; 2] {
        let (rho, mu) = (self.rho(r), self.mu(p));
        [rho * mu.cos(), rho * mu.sin()]
    }

    pub fn node_position(&self, index: usize) -> [f64; 2] {
        let (r, p) = self.node_rp(index);
        self.node(r, p)
    }

    pub fn data_index(&self, p: usize, q: usize) -> usize {
        debug_assert!((1..=self.angles).contains(&p) && (1..=self.directions).contains(&q));
        (p - 1) * self.directions + (q - 1)
    }

    pub fn data_pq(&self, index: usize) -> (usize, usize) {
        (index / self.directions + 1, index % self.directions + 1)
    }

    /// Boundary point `x_p = (cos mu_p, sin mu_p)`.
    pub fn boundary_point(&self, p: usize) -> [f64; 2] {
        let mu = self.mu(p);
        [mu.cos(), mu.sin()]
    }

    /// Euclidean unit direction `(cos phi_q, sin phi_q)`.
    pub fn direction(&self, q: usize) -> [f64; 2] {
        let phi = self.phi(q);
        [phi.cos(), phi.sin()]
    }

    /// Whether `(x_p, xi_q)` is a strictly outgoing boundary pair. Pairs within
    /// rounding of tangential count as incoming.
    pub fn is_outgoing(&self, p: usize, q: usize) -> bool {
        (self.phi(q) - self.mu(p)).cos() > BOUNDARY_SLACK
    }

    /// Trapezoidal area weight `rho_r * d_rho * d_mu` of a node on ring `r`,
    /// halved on the boundary ring. The weights of all nodes sum to `pi`.
    pub fn area_weight(&self, r: usize) -> f64 {
        let w = self.rho(r) * self.delta_rho() * self.delta_mu();
        if r == self.radii {
            0.5 * w
        } else {
            w
        }
    }

    /// Area weights for every node in storage order.
    pub fn area_weights(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|i| self.area_weight(self.node_rp(i).0))
            .collect()
    }

    /// Interpolation stencil of a point in the closed disc: pairs of node index and
    /// weight whose weighted sum of nodal values gives the interpolated value.
    ///
    /// Points with `|x| >= rho_1` use the bilinear blend of the four corners of the
    /// enclosing polar cell. Points inside the innermost ring blend the centre value
    /// (the mean of ring 1) with the two neighbouring ring-1 nodes.
    pub fn stencil_into(&self, x: [f64; 2], out: &mut Vec<(usize, f64)>) -> Result<()> {
        out.clear();
        let rho = x[0].hypot(x[1]);
        if !(rho <= 1.0 + BOUNDARY_SLACK) {
            return Err(Error::OutsideDomain { x: x[0], y: x[1] });
        }
        let (p0, p1, tp) = angle_cell(x[1].atan2(x[0]), self.angles);
        let scaled = rho * self.radii as f64;
        if scaled < 1.0 {
            // inner disc: (1 - t) f(0) + t [(1 - tp) f(1,p) + tp f(1,p+1)]
            let t = scaled;
            let centre = (1.0 - t) / self.angles as f64;
            if centre != 0.0 {
                out.extend((0..self.angles).map(|j| (j, centre)));
            }
            push_merged(out, p0, t * (1.0 - tp));
            push_merged(out, p1, t * tp);
        } else {
            let ring = (scaled.floor() as usize).min(self.radii - 1);
            let tr = (scaled - ring as f64).clamp(0.0, 1.0);
            let inner = (ring - 1) * self.angles;
            let outer = ring * self.angles;
            out.push((inner + p0, (1.0 - tr) * (1.0 - tp)));
            out.push((inner + p1, (1.0 - tr) * tp));
            out.push((outer + p0, tr * (1.0 - tp)));
            out.push((outer + p1, tr * tp));
        }
        Ok(())
    }
}

fn push_merged(out: &mut Vec<(usize, f64)>, node: usize, w: f64) {
    if let Some(e) = out.iter_mut().find(|e| e.0 == node) {
        e.1 += w;
    } else {
        out.push((node, w));
    }
}

/// Locates `angle` on a periodic grid of `count` nodes at `2 pi k / count`, `k = 1..=count`.
///
/// Returns the 0-based storage slots of the lower and upper neighbours and the
/// fractional position between them.
pub fn angle_cell(angle: f64, count: usize) -> (usize, usize, f64) {
    let s = angle.rem_euclid(2.0 * PI) * count as f64 / (2.0 * PI);
    let lower = s.floor();
    let frac = s - lower;
    let lower = lower as usize % count;
    // node k sits in slot k - 1, and node 0 coincides with node `count`
    let lo = (lower + count - 1) % count;
    let hi = lower % count;
    (lo, hi, frac)
}

/// Rank-`m` symmetric tensor field sampled at the interior nodes of a [`PolarGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    rank: usize,
    radii: usize,
    angles: usize,
    values: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &PolarGrid, rank: usize) -> Self {
        Self {
            rank,
            radii: grid.radii,
            angles: grid.angles,
            values: vec![0.0; grid.node_count() * tensor::component_count(rank)],
        }
    }

    /// Samples `f` at every node. `f` writes the `rank + 1` components of the
    /// value at the given point into the provided slice.
    pub fn from_fn(grid: &PolarGrid, rank: usize, mut f: impl FnMut([f64; 2], &mut [f64])) -> Self {
        let mut field = Self::zeros(grid, rank);
        let c = field.components();
        for (i, chunk) in field.values.chunks_exact_mut(c).enumerate() {
            f(grid.node_position(i), chunk);
        }
        field
    }

    pub fn from_values(grid: &PolarGrid, rank: usize, values: Vec<f64>) -> Result<Self> {
        let expected = grid.node_count() * tensor::component_count(rank);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, grid needs {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("field contains non-finite values".into()));
        }
        Ok(Self {
            rank,
            radii: grid.radii,
            angles: grid.angles,
            values,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn components(&self) -> usize {
        tensor::component_count(self.rank)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Components stored at node `index`.
    pub fn node(&self, index: usize) -> &[f64] {
        let c = self.components();
        &self.values[index * c..(index + 1) * c]
    }

    pub fn matches(&self, grid: &PolarGrid) -> bool {
        self.radii == grid.radii && self.angles == grid.angles
    }

    pub(crate) fn check(&self, grid: &PolarGrid) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "field is on a ({}, {}) grid, expected ({}, {})",
                self.radii, self.angles, grid.radii, grid.angles
            )))
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &TensorField) {
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// Plain Euclidean norm of the stored components.
    pub fn plain_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Samples a field at an arbitrary point of the closed disc.
pub fn sample_interior(field: &TensorField, grid: &PolarGrid, x: [f64; 2]) -> Result<Vec<f64>> {
    field.check(grid)?;
    let mut stencil = Vec::with_capacity(8);
    grid.stencil_into(x, &mut stencil)?;
    let c = field.components();
    let mut out = vec![0.0; c];
    for &(node, w) in &stencil {
        for (o, v) in out.iter_mut().zip(field.node(node)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Transform values on the outgoing boundary bundle, one per `(p, q)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    angles: usize,
    directions: usize,
    values: Vec<f64>,
}

impl BoundaryData {
    pub fn zeros(grid: &PolarGrid) -> Self {
        Self {
            angles: grid.angles,
            directions: grid.directions,
            values: vec![0.0; grid.data_len()],
        }
    }

    pub fn from_fn(grid: &PolarGrid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Self::zeros(grid);
        for p in 1..=grid.angles {
            for q in 1..=grid.directions {
                data.values[grid.data_index(p, q)] = f(p, q);
            }
        }
        data
    }

    pub fn from_values(grid: &PolarGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.data_len() {
            return Err(Error::ShapeMismatch(format!(
                "boundary data has {} values, grid needs {}",
                values.len(),
                grid.data_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("boundary data contains non-finite values".into()));
        }
        Ok(Self {
            angles: grid.angles,
            directions: grid.directions,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[(p - 1) * self.directions + (q - 1)]
    }

    pub fn matches(&self, grid: &PolarGrid) -> bool {
        self.angles == grid.angles && self.directions == grid.directions
    }

    pub(crate) fn check(&self, grid: &PolarGrid) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "boundary data is {}x{}, expected {}x{}",
                self.angles, self.directions, grid.angles, grid.directions
            )))
        }
    }

    pub fn axpy(&mut self, a: f64, other: &BoundaryData) {
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn plain_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Linear interpolation of boundary data in `mu` at the fixed direction `q`.
pub fn sample_boundary_1d(data: &BoundaryData, grid: &PolarGrid, mu_tilde: f64, q: usize) -> f64 {
    let (lo, hi, t) = angle_cell(mu_tilde, grid.angles);
    let col = q - 1;
    let nq = grid.directions;
    (1.0 - t) * data.values[lo * nq + col] + t * data.values[hi * nq + col]
}

/// Bilinear interpolation of boundary data on the periodic `(mu, phi)` torus.
pub fn sample_boundary_2d(data: &BoundaryData, grid: &PolarGrid, mu_tilde: f64, phi_tilde: f64) -> f64 {
    boundary_stencil_2d(grid, mu_tilde, phi_tilde)
        .iter()
        .map(|&(i, w)| w * data.values[i])
        .sum()
}

/// The four data indices and weights used by [`sample_boundary_2d`].
pub fn boundary_stencil_2d(grid: &PolarGrid, mu_tilde: f64, phi_tilde: f64) -> [(usize, f64); 4] {
    let (p0, p1, tp) = angle_cell(mu_tilde, grid.angles);
    let (q0, q1, tq) = angle_cell(phi_tilde, grid.directions);
    let nq = grid.directions;
    [
        (p0 * nq + q0, (1.0 - tp) * (1.0 - tq)),
        (p1 * nq + q0, tp * (1.0 - tq)),
        (p0 * nq + q1, (1.0 - tp) * tq),
        (p1 * nq + q1, tp * tq),
    ]
}

/// Suggests `(R, P)` with `R * P` close to `total_nodes` and `P` close to `pi R`.
///
/// For every admissible `R` the angular count is the even integer nearest to
/// `total_nodes / R`; the pair minimizing `|P - pi R|` wins (smaller `R` on ties).
pub fn grid_ratio_hint(total_nodes: usize) -> Result<(usize, usize)> {
    if total_nodes < 8 {
        return Err(Error::InvalidGrid(format!(
            "need at least 8 nodes, got {total_nodes}"
        )));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for r in 2..=total_nodes / 4 {
        let p = 2 * ((total_nodes as f64 / (2.0 * r as f64)).round() as usize);
        if p < 4 {
            continue;
        }
        let gap = (p as f64 - PI * r as f64).abs();
        if best.is_none_or(|(_, _, g)| gap < g) {
            best = Some((r, p, gap));
        }
    }
    let (r, p, _) = best.expect("R = 2 is always admissible");
    Ok((r, p))
}
