//! Symmetric rank-`m` tensors in two dimensions.
//!
//! A symmetric tensor in 2D has `m + 1` independent components. Component `k`
//! is the entry with `m - k` indices equal to 1 and `k` indices equal to 2, so
//! for `m = 1` the components are `(f_1, f_2)` and for `m = 2` they are
//! `(f_11, f_12, f_22)`.

/// Number of independent components of a symmetric rank-`rank` tensor in 2D.
pub fn component_count(rank: usize) -> usize {
    rank + 1
}

/// Number of index tuples that map onto component `k`, i.e. `C(rank, k)`.
pub fn multiplicity(rank: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (rank - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Components of the tensor power `xi^m`: `out[k] = xi_1^(m-k) xi_2^k`.
pub fn tensor_power(rank: usize, xi: [f64; 2], out: &mut [f64]) {
    debug_assert_eq!(out.len(), component_count(rank));
    for (k, o) in out.iter_mut().enumerate() {
        *o = xi[0].powi((rank - k) as i32) * xi[1].powi(k as i32);
    }
}

/// Coefficients `c` such that `<f, xi^m> = sum_k c[k] f[k]`.
pub fn contraction_coefficients(rank: usize, xi: [f64; 2], out: &mut [f64]) {
    tensor_power(rank, xi, out);
    for (k, o) in out.iter_mut().enumerate() {
        *o *= multiplicity(rank, k);
    }
}

/// Full contraction `<f, xi^m>` in the Euclidean metric.
pub fn contract(rank: usize, components: &[f64], xi: [f64; 2]) -> f64 {
    components
        .iter()
        .enumerate()
        .map(|(k, c)| multiplicity(rank, k) * c * xi[0].powi((rank - k) as i32) * xi[1].powi(k as i32))
        .sum()
}

/// Euclidean inner product of two symmetric tensors given by components.
pub fn dot(rank: usize, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| multiplicity(rank, k) * x * y)
        .sum()
}
