use num_complex::Complex64;

use crate::error::{shape_err, Result};

/// Dense complex array, row-major, rank 2 to 4.
///
/// The trailing two dimensions are always the spatial `(h, w)` plane
/// (phase-encode lines by frequency-encode samples). Leading dimensions are
/// batch and/or channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        if shape.len() < 2 || shape.len() > 4 {
            return shape_err(format!("complex tensor rank must be 2..=4, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "data length {} does not match shape {shape:?} ({n})",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![Complex64::new(0.0, 0.0); n])
    }

    /// Builds a purely real 2-D tensor.
    pub fn from_real(h: usize, w: usize, re: &[f64]) -> Result<Self> {
        Self::new(
            vec![h, w],
            re.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(h, w)` of the trailing spatial plane.
    pub fn plane(&self) -> (usize, usize) {
        let r = self.shape.len();
        (self.shape[r - 2], self.shape[r - 1])
    }

    /// Number of `(h, w)` planes stacked in the leading dimensions.
    pub fn planes(&self) -> usize {
        let (h, w) = self.plane();
        if h * w == 0 {
            0
        } else {
            self.data.len() / (h * w)
        }
    }

    pub fn get(&self, index: &[usize]) -> Complex64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: Complex64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for dim {d}");
            acc * d + i
        })
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// Element-wise `a*self + b*other`.
    pub fn axpby(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        if !self.same_shape(other) {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Stacks equally shaped 2-D planes into a `(n, h, w)` tensor.
    pub fn stack(items: &[ComplexTensor]) -> Result<Self> {
        let Some(first) = items.first() else {
            return shape_err("cannot stack an empty list");
        };
        let (h, w) = first.plane();
        let mut data = Vec::with_capacity(items.len() * h * w);
        for t in items {
            if t.shape() != [h, w] {
                return shape_err(format!("stack expects {h}x{w} planes, got {:?}", t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Self::new(vec![items.len(), h, w], data)
    }

    /// Extracts plane `i` as a 2-D tensor.
    pub fn plane_at(&self, i: usize) -> Self {
        let (h, w) = self.plane();
        Self {
            shape: vec![h, w],
            data: self.data[i * h * w..(i + 1) * h * w].to_vec(),
        }
    }
}
