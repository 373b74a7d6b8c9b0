use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Most of the network works on matrices; a 1-D tensor of length `d` is
/// treated as a single row (`1 × d`) by the matrix helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `self · other` for `n × k` and `k × m` operands.
    ///
    /// Each output row is accumulated from its own input row only, in a
    /// fixed order, so a row's result does not depend on which other rows
    /// share the call.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", self.shape, other.shape)));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `self · otherᵀ` for `n × m` and `k × m` operands.
    pub fn matmul_transposed(&self, other: &Tensor) -> Result<Tensor> {
        let (n, m) = (self.rows(), self.cols());
        let (k, m2) = (other.rows(), other.cols());
        if m != m2 {
            return Err(Error::Shape(format!(
                "matmul_transposed {:?} x {:?}ᵀ",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            for p in 0..k {
                let b_row = &other.data[p * m..(p + 1) * m];
                out[i * k + p] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor::matrix(n, k, out)
    }

    /// `selfᵀ · other` for `n × k` and `n × m` operands.
    pub fn transposed_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = (self.rows(), self.cols());
        let (n2, m) = (other.rows(), other.cols());
        if n != n2 {
            return Err(Error::Shape(format!(
                "transposed_matmul {:?}ᵀ x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let g_row = &other.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[p * m..(p + 1) * m];
                for (o, &g) in out_row.iter_mut().zip(g_row) {
                    *o += a * g;
                }
            }
        }
        Tensor::matrix(k, m, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);

        let bt = Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]).unwrap();
        assert_eq!(a.matmul_transposed(&bt).unwrap(), ab);

        let at = Tensor::matrix(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(at.transposed_matmul(&b).unwrap(), ab);
    }
}
