//! PDE representation of the adjoint for `n = 1`: finite differences for the
//! viscosity-regularized stationary transport equation on the polar grid, one
//! decoupled system per direction, solved in the minimum-norm least-squares
//! sense and averaged over directions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{relative_duality_defect, weight_euclid, Backprojector, InnerProducts};
use crate::error::{Error, Result};
use crate::forward::{Quadrature, RayTransform, DEFAULT_SUBINTERVALS};
use crate::grid::{BoundaryData, PolarGrid, TensorField};
use crate::tensor::{component_count, tensor_power};

/// Dense pseudo-inverses are cached per direction while they fit in this many bytes.
const PINV_CACHE_BYTES: usize = 1 << 30;

/// Settings of the minimum-norm least-squares solve.
///
/// The transport systems are exponentially ill-conditioned in the number of
/// rings: their exact solution carries an undamped sawtooth mode in `mu` that
/// swamps the characteristic solution. Both solvers therefore stop short of
/// machine precision. The dense path drops singular values below
/// `rank_tolerance * sigma_max`, LSQR stops at `lsqr_tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinNormSettings {
    /// Systems up to this many unknowns use the dense pseudo-inverse.
    pub dense_limit: usize,
    pub rank_tolerance: f64,
    pub lsqr_tolerance: f64,
    /// LSQR iteration cap as a multiple of the unknown count.
    pub max_iters_factor: usize,
}

impl Default for MinNormSettings {
    fn default() -> Self {
        Self {
            dense_limit: 2000,
            rank_tolerance: 1e-4,
            lsqr_tolerance: 1e-5,
            max_iters_factor: 10,
        }
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// The discretized transport equation for one direction `q`.
///
/// Unknowns are `w_(r,p)` for `r = 1..R-1` at index `(r-1) P + (p-1)`. Values on
/// the boundary ring enter the right-hand side.
#[derive(Debug, Clone)]
pub struct TransportSystem {
    pub q_index: usize,
    pub epsilon: f64,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Matrix rows plus the coefficients that couple each row to boundary-ring values.
struct Stencil {
    matrix: CsrMatrix,
    /// `(row, p, coefficient)` for every reference to `w_(R,p)`.
    coupling: Vec<(usize, usize, f64)>,
}

fn build_stencil(grid: &PolarGrid, alpha0: f64, epsilon: f64, q: usize) -> Result<Stencil> {
    let (nr, np) = (grid.radii(), grid.angles());
    if np % 2 != 0 {
        return Err(Error::OddP(np));
    }
    let (dr, dm) = (grid.delta_rho(), grid.delta_mu());
    let phi = grid.phi(q);
    let n = (nr - 1) * np;
    let mut row_ptr = vec![0];
    let mut cols = Vec::with_capacity(6 * n);
    let mut vals = Vec::with_capacity(6 * n);
    let mut coupling = Vec::new();
    let mut entries: Vec<((usize, usize), f64)> = Vec::with_capacity(8);
    for r in 1..nr {
        for p in 1..=np {
            entries.clear();
            let mut add = |node: (usize, usize), c: f64| {
                if let Some(e) = entries.iter_mut().find(|e| e.0 == node) {
                    e.1 += c;
                } else {
                    entries.push((node, c));
                }
            };
            let rho = grid.rho(r);
            let (s, c) = (phi - grid.mu(p)).sin_cos();
            let next = p % np + 1;
            let prev = (p + np - 2) % np + 1;
            // forward difference in rho, central differences in mu
            let d_rho = |add: &mut dyn FnMut((usize, usize), f64), k: f64| {
                add((r + 1, p), k / dr);
                add((r, p), -k / dr);
            };
            let d_mu = |add: &mut dyn FnMut((usize, usize), f64), k: f64| {
                add((r, next), k / (2.0 * dm));
                add((r, prev), -k / (2.0 * dm));
            };
            d_rho(&mut add, -c);
            d_mu(&mut add, -s / rho);
            add((r, p), alpha0);
            if epsilon != 0.0 {
                d_rho(&mut add, -epsilon / rho);
                if r == 1 {
                    let k = -epsilon / (3.0 * dr * dr);
                    add((2, p), 2.0 * k);
                    add((1, p), -3.0 * k);
                    add((1, (p - 1 + np / 2) % np + 1), k);
                } else {
                    let k = -epsilon / (dr * dr);
                    add((r + 1, p), k);
                    add((r, p), -2.0 * k);
                    add((r - 1, p), k);
                }
                let k = -epsilon / (rho * rho * dm * dm);
                add((r, next), k);
                add((r, p), -2.0 * k);
                add((r, prev), k);
            }
            let row = row_ptr.len() - 1;
            entries.sort_by_key(|e| e.0);
            for &((rr, pp), v) in entries.iter() {
                if rr == nr {
                    coupling.push((row, pp, v));
                } else {
                    cols.push((rr - 1) * np + pp - 1);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
    }
    Ok(Stencil {
        matrix: CsrMatrix { n, row_ptr, cols, vals },
        coupling,
    })
}

/// Assembles the system for direction `q` with boundary-ring values
/// `boundary_w[p - 1] = w_(R,p)`.
pub fn assemble_system(grid: &PolarGrid, alpha0: f64, epsilon: f64, q: usize, boundary_w: &[f64]) -> Result<TransportSystem> {
    if boundary_w.len() != grid.angles() {
        return Err(Error::ShapeMismatch(format!("{} boundary values for {} angles", boundary_w.len(), grid.angles())));
    }
    let st = build_stencil(grid, alpha0, epsilon, q)?;
    let mut rhs = vec![0.0; st.matrix.size()];
    for &(row, p, c) in &st.coupling {
        rhs[row] -= c * boundary_w[p - 1];
    }
    Ok(TransportSystem {
        q_index: q,
        epsilon,
        matrix: st.matrix,
        rhs,
    })
}

/// Boundary-ring values `w_(R,p)` for direction `q` from the characteristic formula.
pub fn boundary_ring_weights(data: &BoundaryData, grid: &PolarGrid, alpha0: f64, q: usize) -> Vec<f64> {
    (1..=grid.angles())
        .map(|p| weight_euclid(data, grid, alpha0, grid.node(grid.radii(), p), q))
        .collect()
}

/// Outcome of an iterative least-squares solve.
#[derive(Debug, Clone)]
pub struct LsqrOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// LSQR (Golub-Kahan bidiagonalization) started from zero, which converges to
/// the minimum-norm least-squares solution. Stops when
/// `|r| <= tol (|b| + |A| |x|)` or `|A^T r| <= tol |A| |r|`.
pub fn lsqr(a: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> Result<LsqrOutcome> {
    let n = a.size();
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let bnorm = norm(&u);
    if bnorm == 0.0 {
        return Ok(LsqrOutcome { x, iterations: 0, residual: 0.0 });
    }
    u.iter_mut().for_each(|e| *e /= bnorm);
    let mut beta = bnorm;
    let mut v = vec![0.0; n];
    a.mul_transpose_into(&u, &mut v);
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        return Ok(LsqrOutcome { x, iterations: 0, residual: bnorm });
    }
    v.iter_mut().for_each(|e| *e /= alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;
    let mut tmp = vec![0.0; n];
    for it in 1..=max_iters {
        a.mul_into(&v, &mut tmp);
        for (ui, ti) in u.iter_mut().zip(&tmp) {
            *ui = ti - alpha * *ui;
        }
        beta = norm(&u);
        anorm2 += alpha * alpha + beta * beta;
        if beta > 0.0 {
            u.iter_mut().for_each(|e| *e /= beta);
            a.mul_transpose_into(&u, &mut tmp);
            for (vi, ti) in v.iter_mut().zip(&tmp) {
                *vi = ti - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                v.iter_mut().for_each(|e| *e /= alpha);
            }
        }
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += (phi / rho) * *wi;
            *wi = vi - (theta / rho) * *wi;
        }
        let anorm = anorm2.sqrt();
        let rnorm = phibar;
        let arnorm = phibar * alpha * c.abs();
        if rnorm <= tol * (bnorm + anorm * norm(&x)) || arnorm <= tol * anorm * rnorm || alpha == 0.0 {
            return Ok(LsqrOutcome { x, iterations: it, residual: rnorm });
        }
    }
    let mut r = vec![0.0; n];
    a.mul_into(&x, &mut r);
    let residual = r.iter().zip(b).map(|(ri, bi)| (ri - bi).powi(2)).sum::<f64>().sqrt();
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Pseudo-inverse with singular values below `rank_tolerance * sigma_max` treated as zero.
pub fn dense_pseudo_inverse(a: &CsrMatrix, rank_tolerance: f64) -> DMatrix<f64> {
    let svd = a.to_dense().svd(true, true);
    let cut = svd.singular_values.max() * rank_tolerance;
    svd.pseudo_inverse(cut).expect("both factors were computed")
}

/// Minimum-norm least-squares solution with the default settings.
pub fn solve_min_norm(system: &TransportSystem) -> Result<Vec<f64>> {
    solve_min_norm_with(system, &MinNormSettings::default())
}

pub fn solve_min_norm_with(system: &TransportSystem, settings: &MinNormSettings) -> Result<Vec<f64>> {
    let n = system.matrix.size();
    if n <= settings.dense_limit {
        let pinv = dense_pseudo_inverse(&system.matrix, settings.rank_tolerance);
        Ok((pinv * DVector::from_column_slice(&system.rhs)).as_slice().to_vec())
    } else {
        Ok(lsqr(&system.matrix, &system.rhs, settings.lsqr_tolerance, settings.max_iters_factor * n)?.x)
    }
}

struct DirectionSystem {
    stencil: Stencil,
    pinv: Option<DMatrix<f64>>,
}

/// The PDE adjoint with its per-direction systems assembled once.
pub struct PdeAdjoint {
    grid: PolarGrid,
    rank: usize,
    alpha0: f64,
    epsilon: f64,
    settings: MinNormSettings,
    systems: Vec<DirectionSystem>,
}

impl PdeAdjoint {
    pub fn new(grid: &PolarGrid, rank: usize, alpha0: f64, epsilon: f64) -> Result<Self> {
        Self::with_settings(grid, rank, alpha0, epsilon, MinNormSettings::default())
    }

    /// Dense pseudo-inverses are precomputed when they fit the cache budget;
    /// otherwise every solve runs LSQR.
    pub fn with_settings(grid: &PolarGrid, rank: usize, alpha0: f64, epsilon: f64, settings: MinNormSettings) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::Config(format!("viscosity {epsilon} must be >= 0")));
        }
        let n = (grid.radii() - 1) * grid.angles();
        let cache = n <= settings.dense_limit && n * n * grid.directions() * 8 <= PINV_CACHE_BYTES;
        let settings = if cache { settings } else { MinNormSettings { dense_limit: 0, ..settings } };
        let systems = (1..=grid.directions())
            .into_par_iter()
            .map(|q| {
                let stencil = build_stencil(grid, alpha0, epsilon, q)?;
                let pinv = cache.then(|| dense_pseudo_inverse(&stencil.matrix, settings.rank_tolerance));
                Ok(DirectionSystem { stencil, pinv })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: *grid,
            rank,
            alpha0,
            epsilon,
            settings,
            systems,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Solved `w_(r,p)` for direction `q` on every node, boundary ring included,
    /// in node storage order.
    pub fn solve_direction(&self, data: &BoundaryData, q: usize) -> Result<Vec<f64>> {
        data.check(&self.grid)?;
        let sys = &self.systems[q - 1];
        let boundary = boundary_ring_weights(data, &self.grid, self.alpha0, q);
        let n = sys.stencil.matrix.size();
        let mut rhs = vec![0.0; n];
        for &(row, p, c) in &sys.stencil.coupling {
            rhs[row] -= c * boundary[p - 1];
        }
        let mut w = match &sys.pinv {
            Some(pinv) => (pinv * DVector::from_column_slice(&rhs)).as_slice().to_vec(),
            None => lsqr(
                &sys.stencil.matrix,
                &rhs,
                self.settings.lsqr_tolerance,
                self.settings.max_iters_factor * n,
            )?
            .x,
        };
        w.extend_from_slice(&boundary);
        Ok(w)
    }

    pub fn apply(&self, data: &BoundaryData) -> Result<TensorField> {
        let block = component_count(self.rank);
        let dphi = self.grid.delta_phi();
        let per_q = (1..=self.grid.directions())
            .into_par_iter()
            .map(|q| self.solve_direction(data, q))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![0.0; self.grid.node_count() * block];
        let mut power = vec![0.0; block];
        for (qi, w) in per_q.iter().enumerate() {
            tensor_power(self.rank, self.grid.direction(qi + 1), &mut power);
            for (node, &wi) in w.iter().enumerate() {
                for k in 0..block {
                    values[node * block + k] += dphi * wi * power[k];
                }
            }
        }
        TensorField::from_values(&self.grid, self.rank, values)
    }
}

/// PDE adjoint of boundary data for `n = 1` and constant attenuation.
pub fn pde_adjoint(data: &BoundaryData, grid: &PolarGrid, alpha0: f64, epsilon: f64, rank: usize) -> Result<TensorField> {
    PdeAdjoint::new(grid, rank, alpha0, epsilon)?.apply(data)
}

/// Which representation of the adjoint to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointKind {
    #[default]
    Integral,
    Pde,
}

/// Relative duality defect of the chosen adjoint for `n = 1`, with the
/// straight-chord transform at the default resolution.
pub fn duality_defect(f: &TensorField, kind: AdjointKind, grid: &PolarGrid, alpha0: f64, epsilon: f64) -> Result<f64> {
    let forward = RayTransform::euclid(grid, f.rank(), alpha0, DEFAULT_SUBINTERVALS, Quadrature::Trapezoid)?;
    let inner = InnerProducts::euclidean(grid, f.rank());
    match kind {
        AdjointKind::Integral => {
            let bp = Backprojector::euclid(grid, f.rank(), alpha0)?;
            relative_duality_defect(f, |f| forward.apply(f), |h| bp.apply(h), &inner)
        }
        AdjointKind::Pde => {
            let pde = PdeAdjoint::new(grid, f.rank(), alpha0, epsilon)?;
            relative_duality_defect(f, |f| forward.apply(f), |h| pde.apply(h), &inner)
        }
    }
}
