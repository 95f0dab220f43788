//! Half-vectorization of symmetric matrices.
//!
//! Layout is the lower triangle in column-major order with unit weights:
//! for q = 2 the order is (m11, m21, m22). All flat-vector representations
//! of symmetric matrices in this crate use this layout.

use nalgebra::{DMatrix, DVector};

/// Length of vech for a q x q symmetric matrix.
pub fn vech_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// (row, col) index pairs in vech order, row >= col.
pub fn vech_indices(q: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(vech_len(q));
    for j in 0..q {
        for i in j..q {
            idx.push((i, j));
        }
    }
    idx
}

pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let q = m.nrows();
    assert_eq!(q, m.ncols(), "vech requires a square matrix");
    let mut v = DVector::zeros(vech_len(q));
    for (k, (i, j)) in vech_indices(q).into_iter().enumerate() {
        v[k] = m[(i, j)];
    }
    v
}

pub fn unvech(v: &[f64], q: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), vech_len(q), "vech length mismatch");
    let mut m = DMatrix::zeros(q, q);
    for (k, (i, j)) in vech_indices(q).into_iter().enumerate() {
        m[(i, j)] = v[k];
        m[(j, i)] = v[k];
    }
    m
}

/// Duplication weights: 1 for diagonal coordinates, sqrt(2) for off-diagonal.
/// Rescaling vech coordinates by these weights makes symmetric-convention
/// Jacobians of matrix maps symmetric as flat matrices.
pub fn dup_weights(q: usize) -> Vec<f64> {
    vech_indices(q)
        .into_iter()
        .map(|(i, j)| if i == j { 1.0 } else { std::f64::consts::SQRT_2 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vech_layout_q2() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = vech(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn vech_roundtrip_q3() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let v = vech(&m);
        assert_eq!(v.len(), 6);
        let back = unvech(v.as_slice(), 3);
        assert_eq!(back, m);
    }

    #[test]
    fn weights_pattern() {
        let w = dup_weights(2);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], std::f64::consts::SQRT_2);
        assert_eq!(w[2], 1.0);
    }
}
