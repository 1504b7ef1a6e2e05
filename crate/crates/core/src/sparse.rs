//! Row-compressed sparse operators whose columns (or rows) carry a small block of
//! tensor components. Used to precompute the discrete transforms once per
//! configuration and apply them cheaply inside iterations.

use rayon::prelude::*;

/// Sparse matrix in compressed-row form where every stored entry holds `block`
/// coefficients, one per tensor component.
///
/// Read in *contract* form, row `i` maps a block vector `x` (length
/// `cols * block`) to the scalar `sum_j sum_k v[j][k] x[col_j][k]`. Read in
/// *expand* form, row `i` maps a scalar vector to the block
/// `y[i][k] = sum_j v[j][k] x[col_j]`.
#[derive(Debug, Clone, Default)]
pub struct BlockRows {
    block: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl BlockRows {
    pub fn from_rows(block: usize, cols: usize, rows: Vec<(Vec<u32>, Vec<f64>)>) -> Self {
        let nnz: usize = rows.iter().map(|r| r.0.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz * block);
        row_ptr.push(0);
        for (c, v) in rows {
            debug_assert_eq!(c.len() * block, v.len());
            col_idx.extend_from_slice(&c);
            vals.extend_from_slice(&v);
            row_ptr.push(col_idx.len());
        }
        Self {
            block,
            cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.vals[a * self.block..b * self.block])
    }

    /// `y[i] = sum_j <v_ij, x[col_j]>`.
    pub fn contract_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols * self.block);
        assert_eq!(y.len(), self.rows());
        let b = self.block;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (c, v) = self.row(i);
            let mut acc = 0.0;
            for (j, &col) in c.iter().enumerate() {
                let xs = &x[col as usize * b..(col as usize + 1) * b];
                let vs = &v[j * b..(j + 1) * b];
                for k in 0..b {
                    acc += vs[k] * xs[k];
                }
            }
            *yi = acc;
        });
    }

    /// `y[i][k] = sum_j v_ij[k] x[col_j]`.
    pub fn expand_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows() * self.block);
        let b = self.block;
        y.par_chunks_mut(b).enumerate().for_each(|(i, yi)| {
            yi.fill(0.0);
            let (c, v) = self.row(i);
            for (j, &col) in c.iter().enumerate() {
                let s = x[col as usize];
                for k in 0..b {
                    yi[k] += v[j * b + k] * s;
                }
            }
        });
    }

    /// Transpose of the contract form: `y[col_j][k] += v_ij[k] x[i]`.
    pub fn contract_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows());
        assert_eq!(y.len(), self.cols * self.block);
        let b = self.block;
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (j, &col) in c.iter().enumerate() {
                let col = col as usize;
                for k in 0..b {
                    y[col * b + k] += v[j * b + k] * xi;
                }
            }
        }
    }
}

/// Dense scratch for assembling one row: merges repeated columns and emits
/// them in ascending order so that assembly is deterministic.
#[derive(Debug, Clone)]
pub struct RowAccumulator {
    block: usize,
    dense: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<u32>,
}

impl RowAccumulator {
    pub fn new(block: usize, cols: usize) -> Self {
        Self {
            block,
            dense: vec![0.0; block * cols],
            seen: vec![false; cols],
            touched: Vec::new(),
        }
    }

    /// Adds `scale * coeffs` to column `col`.
    #[inline]
    pub fn add(&mut self, col: usize, scale: f64, coeffs: &[f64]) {
        if !self.seen[col] {
            self.seen[col] = true;
            self.touched.push(col as u32);
        }
        let b = self.block;
        for (d, c) in self.dense[col * b..(col + 1) * b].iter_mut().zip(coeffs) {
            *d += scale * c;
        }
    }

    /// Emits the accumulated row and resets the scratch.
    pub fn take(&mut self) -> (Vec<u32>, Vec<f64>) {
        self.touched.sort_unstable();
        let b = self.block;
        let mut vals = Vec::with_capacity(self.touched.len() * b);
        for &col in &self.touched {
            let col = col as usize;
            let slot = &mut self.dense[col * b..(col + 1) * b];
            vals.extend_from_slice(slot);
            slot.fill(0.0);
            self.seen[col] = false;
        }
        (std::mem::take(&mut self.touched), vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BlockRows {
        let mut acc = RowAccumulator::new(2, 3);
        acc.add(2, 1.0, &[1.0, 2.0]);
        acc.add(0, 2.0, &[1.0, 0.5]);
        acc.add(2, 1.0, &[1.0, 0.0]);
        let r0 = acc.take();
        acc.add(1, 1.0, &[-1.0, 3.0]);
        let r1 = acc.take();
        BlockRows::from_rows(2, 3, vec![r0, r1])
    }

    #[test]
    fn accumulator_merges_and_sorts() {
        let m = sample();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.row(0).1, &[2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn contract_expand_and_transpose() {
        let m = sample();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut y = [0.0; 2];
        m.contract_into(&x, &mut y);
        assert_eq!(y, [2.0 + 2.0 + 10.0 + 12.0, -3.0 + 12.0]);

        let s = [1.0, -1.0, 2.0];
        let mut e = [0.0; 4];
        m.expand_into(&s, &mut e);
        assert_eq!(e, [2.0 + 4.0, 1.0 + 4.0, 1.0, -3.0]);

        // <A x, z> = <x, A^T z>
        let z = [0.7, -1.3];
        let mut t = [0.0; 6];
        m.contract_transpose_into(&z, &mut t);
        let lhs: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&t).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
