use num_complex::Complex64;

use crate::error::{shape_err, Result};
use crate::fourier::ComplexTensor;

/// Dense real array in row-major order. Network activations use NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
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

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => shape_err(format!("expected NCHW tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(N, h, w)` or `(h, w)` complex tensor to `(N, 2, h, w)` real/imag
    /// channels.
    pub fn from_complex(x: &ComplexTensor) -> Result<Self> {
        let (h, w) = x.plane();
        let n = match x.shape() {
            [_, _] => 1,
            [n, _, _] => *n,
            s => {
                return shape_err(format!(
                    "expected (h,w) or (n,h,w) complex tensor, got {s:?}"
                ))
            }
        };
        let mut data = Vec::with_capacity(2 * x.len());
        for plane in x.data().chunks_exact(h * w) {
            data.extend(plane.iter().map(|z| z.re));
            data.extend(plane.iter().map(|z| z.im));
        }
        Self::new(vec![n, 2, h, w], data)
    }

    /// Inverse of [`Tensor::from_complex`]: `(N, 2, h, w)` to `(N, h, w)`.
    pub fn to_complex(&self) -> Result<ComplexTensor> {
        let (n, c, h, w) = self.dims4()?;
        if c != 2 {
            return shape_err(format!("expected 2 (re, im) channels, got {c}"));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * hw);
        for item in self.data.chunks_exact(2 * hw) {
            let (re, im) = item.split_at(hw);
            data.extend(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)));
        }
        ComplexTensor::new(vec![n, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_channel_round_trip() {
        let data = (0..2 * 3 * 4)
            .map(|i| Complex64::new(i as f64, -(i as f64)))
            .collect();
        let z = ComplexTensor::new(vec![2, 3, 4], data).unwrap();
        let t = Tensor::from_complex(&z).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3, 4]);
        assert_eq!(t.data()[12], 0.0);
        assert_eq!(t.data()[13], -1.0);
        assert_eq!(t.to_complex().unwrap(), z);
    }

    #[test]
    fn bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::zeros(&[1, 3, 2, 2]).to_complex().is_err());
        assert!(Tensor::zeros(&[4]).reshaped(&[3]).is_err());
    }
}
