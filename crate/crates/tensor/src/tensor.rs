use crate::error::{Result, TensorError};
use crate::real::Real;

/// Dense row-major tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                detail: format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    numel(&shape),
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![F::zero(); n],
        }
    }

    pub fn scalar(v: F) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Invalid("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a matrix view: the product of all but the last dimension.
    pub fn rows(&self) -> usize {
        rows_of(&self.shape)
    }

    pub fn cols(&self) -> usize {
        cols_of(&self.shape)
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::c(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn rows_of(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        n => shape[..n - 1].iter().product(),
    }
}

pub(crate) fn cols_of(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matrix_view() {
        let t = Tensor::<f32>::new(vec![2, 2, 3], vec![0.0; 12]).unwrap();
        assert_eq!((t.rows(), t.cols()), (4, 3));
        assert_eq!(Tensor::scalar(1.0f32).rows(), 1);
    }
}
