//! Dense 64-bit tensors and a small tape-based reverse-mode autodiff engine.
//!
//! Everything the model needs is expressed with a handful of ops on a
//! [`Tape`]: matrix products, column concatenation, row gathers, segment
//! softmax / weighted sums over CSR rows, and a masked log-likelihood.
//! [`fd_gradient`] is the independent finite-difference oracle used by the
//! gradient tests.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{fd_gradient, max_relative_error};
pub use tape::{Tape, Var};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// Leading extent; a 1-D tensor of length `E` counts as `E` rows.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing extent of a matrix; 1 for 1-D tensors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Selects the given rows of a matrix into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor {
            shape: vec![rows.len(), c],
            data,
        }
    }

    /// Index of the largest entry among the first `limit` columns of each row.
    /// Ties resolve to the lowest column.
    pub fn argmax_rows(&self, limit: usize) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = &self.row(i)[..limit.min(self.cols())];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Little-endian bytes of the values, in row-major order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 over shape and value bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &s in &self.shape {
            h.update((s as u64).to_le_bytes());
        }
        h.update(self.to_le_bytes());
        hex::encode(h.finalize())
    }
}

/// Handle to a [`Parameter`] inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Owning arena of every parameter of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn set_trainable(&mut self, ids: &[ParamId], trainable: bool) {
        for id in ids {
            self.params[id.0].trainable = trainable;
        }
    }

    /// Combined digest of the given parameters' values.
    pub fn digest_of(&self, ids: &[ParamId]) -> String {
        let mut h = Sha256::new();
        for id in ids {
            let p = &self.params[id.0];
            h.update(p.name.as_bytes());
            h.update(p.value.digest().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn argmax_respects_limit_and_ties() {
        let t = Tensor::from_rows(&[[1.0, 1.0, 5.0], [0.0, 2.0, 9.0]]).unwrap();
        assert_eq!(t.argmax_rows(2), vec![0, 1]);
        assert_eq!(t.argmax_rows(3), vec![2, 2]);
    }

    #[test]
    fn zero_grad_clears() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(&[2, 2], 1.0));
        s.get_mut(id).grad.fill(3.0);
        s.zero_grad();
        assert!(s.grad(id).data().iter().all(|&g| g == 0.0));
        assert_eq!(s.grad(id).shape(), s.value(id).shape());
    }
}
