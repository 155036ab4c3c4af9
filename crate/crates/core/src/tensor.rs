//! Dense row-major `f64` tensors and the numeric kernels shared by the
//! autodiff graph and the graph-free evaluation path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Vec<usize> },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix from row vectors of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    ///
    /// # Panics
    /// If the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::NotMatrix {
                op,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand is a single element.
    RhsScalar,
    /// Left operand is a single element.
    LhsScalar,
    /// Right operand is a `[1, cols]` row added to every row of the left.
    RhsRow,
}

pub(crate) fn broadcast_kind(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
) -> Result<Broadcast, TensorError> {
    if a.shape == b.shape {
        Ok(Broadcast::Same)
    } else if b.is_scalar() {
        Ok(Broadcast::RhsScalar)
    } else if a.is_scalar() {
        Ok(Broadcast::LhsScalar)
    } else if a.shape.len() == 2
        && b.shape.len() == 2
        && b.shape[0] == 1
        && a.shape[1] == b.shape[1]
    {
        Ok(Broadcast::RhsRow)
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        })
    }
}

pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    let kind = broadcast_kind(op, a, b)?;
    Ok(match kind {
        Broadcast::Same => Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        },
        Broadcast::RhsScalar => {
            let y = b.data[0];
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|&x| f(x, y)).collect(),
            }
        }
        Broadcast::LhsScalar => {
            let x = a.data[0];
            Tensor {
                shape: b.shape.clone(),
                data: b.data.iter().map(|&y| f(x, y)).collect(),
            }
        }
        Broadcast::RhsRow => {
            let cols = a.shape[1];
            Tensor {
                shape: a.shape.clone(),
                data: a
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, b.data[i % cols]))
                    .collect(),
            }
        }
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_broadcast("mul", a, b, |x, y| x * y)
}

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a.data[p * m..(p + 1) * m];
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[0];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `1 / (1 + exp(-x / temperature))`.
pub fn temperature_sigmoid(x: f64, temperature: f64) -> f64 {
    let t = x / temperature;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_returns_operand() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![3.5, -1.25]).unwrap();
        assert_eq!(matmul(&eye, &v).unwrap(), v);
    }

    #[test]
    fn matmul_inner_dim_mismatch_names_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        assert_eq!(
            err.to_string(),
            "matmul: incompatible shapes [2, 3] and [2, 3]"
        );
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 4.0, 3.0]).unwrap();
        let b = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 - 5.0).collect()).unwrap();
        let at = Tensor::new(vec![2, 3], vec![1.0, -1.0, 4.0, 2.0, 0.5, 3.0]).unwrap();
        assert_eq!(matmul_tn(&a, &b), matmul(&at, &b).unwrap());
        let bt_src = Tensor::new(vec![4, 2], (0..8).map(|i| i as f64 * 0.5).collect()).unwrap();
        let bt = Tensor::new(vec![2, 4], vec![0.0, 1.0, 2.0, 3.0, 0.5, 1.5, 2.5, 3.5]).unwrap();
        assert_eq!(matmul_nt(&a, &bt_src), matmul(&a, &bt).unwrap());
    }

    #[test]
    fn broadcasting_rules() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let row = Tensor::row_vector(&[10.0, 20.0]);
        assert_eq!(add(&a, &row).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert_eq!(
            sub(&Tensor::scalar(1.0), &a).unwrap().data(),
            &[0.0, -1.0, -2.0, -3.0]
        );
        assert!(mul(&a, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(temperature_sigmoid(0.0, 0.66), 0.5);
        assert_eq!(relu(-3.0), 0.0);
        assert!(temperature_sigmoid(-800.0, 0.5) >= 0.0);
        assert!(temperature_sigmoid(800.0, 0.5) <= 1.0);
    }
}
