use crate::diffcore::Real;
use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "tensor shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A `1 x n` matrix holding `v`.
    pub fn row_vector(v: &[T]) -> Self {
        Tensor {
            shape: vec![1, v.len()],
            data: v.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("ragged rows"));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a matrix (1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor<T>, alpha: T) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * *b;
        }
    }
}

/// A named trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> ParamSlot<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        ParamSlot {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        let mut slot = Self::new(name, value);
        slot.trainable = false;
        slot
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill_zero();
    }

    pub fn cast<U: Real>(&self) -> ParamSlot<U> {
        ParamSlot {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
            trainable: self.trainable,
        }
    }
}

/// Anything that owns an ordered set of parameter slots.
pub trait Parameters<T> {
    fn slots(&self) -> Vec<&ParamSlot<T>>;
    fn slots_mut(&mut self) -> Vec<&mut ParamSlot<T>>;

    fn zero_grad(&mut self)
    where
        T: Real,
    {
        for s in self.slots_mut() {
            s.zero_grad();
        }
    }

    fn num_scalars(&self) -> usize
    where
        T: Real,
    {
        self.slots().iter().map(|s| s.value.len()).sum()
    }
}

impl<T> Parameters<T> for Vec<ParamSlot<T>> {
    fn slots(&self) -> Vec<&ParamSlot<T>> {
        self.iter().collect()
    }

    fn slots_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        self.iter_mut().collect()
    }
}
