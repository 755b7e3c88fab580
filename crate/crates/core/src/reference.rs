//! Dense cross-attention probabilities computed straight from queries and keys.
//!
//! This is the ground truth a capture hook is checked against on small
//! instances: rows are prompt tokens, columns are video positions.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::param(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("ragged matrix rows"));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `softmax(Q K^T)` row-wise over key positions.
pub fn reference_attention(queries: &Matrix, keys: &Matrix) -> Result<Matrix> {
    reference_attention_scaled(queries, keys, 1.0)
}

/// `softmax(scale * Q K^T)`; attention layers usually pass `1/sqrt(d)`.
pub fn reference_attention_scaled(queries: &Matrix, keys: &Matrix, scale: f64) -> Result<Matrix> {
    if queries.cols != keys.cols {
        return Err(Error::param(format!(
            "inner dimensions disagree: queries have {} columns, keys have {}",
            queries.cols, keys.cols
        )));
    }
    let mut out = Vec::with_capacity(queries.rows * keys.rows);
    for i in 0..queries.rows {
        let q = queries.row(i);
        let logits: Vec<f64> = (0..keys.rows)
            .map(|j| scale * q.iter().zip(keys.row(j)).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        out.extend(softmax(&logits));
    }
    Matrix::new(queries.rows, keys.rows, out)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_logits_are_uniform() {
        let q = Matrix::new(3, 2, vec![0.0; 6]).unwrap();
        let k = Matrix::new(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let a = reference_attention(&q, &k).unwrap();
        assert!(a.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ln2_logits() {
        let q = Matrix::new(1, 1, vec![std::f64::consts::LN_2]).unwrap();
        let k = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let a = reference_attention(&q, &k).unwrap();
        assert!((a.data[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.data[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let q = Matrix::new(1, 2, vec![0.0; 2]).unwrap();
        let k = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(reference_attention(&q, &k).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let p = softmax(&[1000.0, 999.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rows_are_distributions(
            t in 1usize..5, n in 1usize..9, d in 1usize..5,
            seed in proptest::collection::vec(-5.0f64..5.0, 200)
        ) {
            let q = Matrix::new(t, d, seed[..t * d].to_vec()).unwrap();
            let k = Matrix::new(n, d, seed[100..100 + n * d].to_vec()).unwrap();
            let a = reference_attention(&q, &k).unwrap();
            for i in 0..t {
                let row = a.row(i);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}
