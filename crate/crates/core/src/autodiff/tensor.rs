//! Dense row-major tensors backed by flat `Vec<f64>` storage.
//!
//! Only ranks 1 and 2 are needed by the networks in this crate: matrices are
//! `[rows, cols]` with row-major layout, vectors are `[len]`, and scalars are
//! represented as `[1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the shape product matches the value
    /// count and that the tensor is non-empty.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has zero elements"
            )));
        }
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], values: vec![value] }
    }

    /// Build a `[n, d]` matrix from point rows. All rows must share one
    /// dimension and the list must be non-empty.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument("from_rows: empty row list".into()));
        }
        let d = rows[0].len();
        let mut values = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Tensor::new(vec![n, d], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows when viewed as a matrix (`[n]` counts as `n` rows of
    /// width 1 only when rank 1 is explicitly expected by the caller).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Width of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "cols() on non-matrix tensor");
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    /// Extract the single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor with {} values", self.len());
        self.values[0]
    }

    /// Plain triple-loop matrix product; operand sizes in this crate are tiny
    /// (at most batch x 32), so no blocking is needed.
    pub(crate) fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (n, k) = (self.shape[0], self.shape[1]);
        let m = rhs.shape[1];
        debug_assert_eq!(k, rhs.shape[0]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for kk in 0..k {
                let a = self.values[i * k + kk];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.values[kk * m..(kk + 1) * m];
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], values: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            Tensor::new(vec![0, 3], vec![]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        let err = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.values(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn row_access() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert_eq!(t.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
