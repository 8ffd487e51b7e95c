//! Row-major dense tensors for vertex-level ([|V|,K] / [|V|,H,F]) and
//! edge-level ([|E|,H]) data.

use num_traits::Float;

use crate::error::KernelError;

/// Contiguous row-major tensor with 1, 2 or 3 dimensions.
///
/// float-64 is the default scalar; float-32 is selectable through the type
/// parameter with relaxed numeric tolerances.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T = f64> {
    data: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Float> DenseTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            data: vec![T::zero(); n],
            shape: shape.to_vec(),
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            data: vec![value; n],
            shape: shape.to_vec(),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(KernelError::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            data,
            shape: shape.to_vec(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// First dimension (vertex or edge count).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn row_width(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.row_width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let w = self.row_width();
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn at2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.shape[1] + c] = v;
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, KernelError> {
        Self::from_vec(shape, self.data.clone())
    }

    /// Sum of all elements; used as a benchmark checksum.
    pub fn checksum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            shape: self.shape.clone(),
        }
    }
}

impl DenseTensor<f64> {
    pub fn to_f32(&self) -> DenseTensor<f32> {
        DenseTensor {
            data: self.data.iter().map(|&x| x as f32).collect(),
            shape: self.shape.clone(),
        }
    }
}

/// Checks that two shapes are identical, with an op name for the error text.
pub fn require_same_shape<T: Float>(
    op: &str,
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
) -> Result<(), KernelError> {
    if a.shape() != b.shape() {
        return Err(KernelError::Shape(format!(
            "{}: shape {:?} vs {:?}",
            op,
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(DenseTensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_access() {
        let t = DenseTensor::from_vec(&[2, 3], (0..6).map(|x| x as f64).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.at2(1, 2), 5.0);
        assert_eq!(t.row_width(), 3);
    }

    #[test]
    fn three_dim_row_width() {
        let t = DenseTensor::<f64>::zeros(&[4, 2, 3]);
        assert_eq!(t.rows(), 4);
        assert_eq!(t.row_width(), 6);
        assert_eq!(t.numel(), 24);
    }
}
