//! Centered, orthonormal 2-D DFT pair.
//!
//! `fft2c(x) = fftshift(F(ifftshift(x))) / sqrt(h*w)`, applied independently
//! to every trailing `(h, w)` plane. Both directions carry the same
//! `1/sqrt(h*w)` factor, so the pair is unitary and Parseval holds exactly up
//! to rounding.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::ComplexTensor;
use crate::error::Result;

/// Precomputed row/column plans for one `(h, w)` plane size.
pub struct Fft2 {
    h: usize,
    w: usize,
    rows_fwd: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            rows_fwd: planner.plan_fft(w, FftDirection::Forward),
            cols_fwd: planner.plan_fft(h, FftDirection::Forward),
            rows_inv: planner.plan_fft(w, FftDirection::Inverse),
            cols_inv: planner.plan_fft(h, FftDirection::Inverse),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Transforms one plane in place. `plane.len()` must equal `h*w`.
    pub fn forward_plane(&self, plane: &mut [Complex64]) {
        self.transform(plane, false);
    }

    pub fn inverse_plane(&self, plane: &mut [Complex64]) {
        self.transform(plane, true);
    }

    fn transform(&self, plane: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        assert_eq!(plane.len(), h * w);
        // Un-center: spatial/frequency origin moves from (h/2, w/2) to (0, 0).
        let mut buf = shift(plane, h, w, false);
        let (rows, cols) = if inverse {
            (&self.rows_inv, &self.cols_inv)
        } else {
            (&self.rows_fwd, &self.cols_fwd)
        };
        for row in buf.chunks_exact_mut(w) {
            rows.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                col[i] = buf[i * w + j];
            }
            cols.process(&mut col);
            for i in 0..h {
                buf[i * w + j] = col[i];
            }
        }
        let scale = 1.0 / ((h * w) as f64).sqrt();
        let centered = shift(&buf, h, w, true);
        for (dst, src) in plane.iter_mut().zip(centered) {
            *dst = src * scale;
        }
    }

    pub fn forward(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.apply(x, false)
    }

    pub fn inverse(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.apply(x, true)
    }

    fn apply(&self, x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
        check_plane(x, self.h, self.w)?;
        let mut out = x.clone();
        let n = self.h * self.w;
        for plane in out.data_mut().chunks_exact_mut(n) {
            self.transform(plane, inverse);
        }
        Ok(out)
    }
}

fn check_plane(x: &ComplexTensor, h: usize, w: usize) -> Result<()> {
    if x.plane() != (h, w) {
        return crate::error::shape_err(format!(
            "planned for {h}x{w} planes, got shape {:?}",
            x.shape()
        ));
    }
    if h == 0 || w == 0 {
        return crate::error::shape_err("empty spatial plane");
    }
    Ok(())
}

/// Circular shift by `floor(n/2)` along both axes (`fftshift`), or its inverse
/// (`ifftshift`) when `forward` is false. The two differ only for odd sizes.
pub fn shift(src: &[Complex64], h: usize, w: usize, forward: bool) -> Vec<Complex64> {
    let (sh, sw) = if forward {
        (h / 2, w / 2)
    } else {
        (h - h / 2, w - w / 2)
    };
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for i in 0..h {
        let di = (i + sh) % h;
        for j in 0..w {
            let dj = (j + sw) % w;
            out[di * w + dj] = src[i * w + j];
        }
    }
    out
}

pub fn fftshift(x: &ComplexTensor) -> ComplexTensor {
    shift_tensor(x, true)
}

pub fn ifftshift(x: &ComplexTensor) -> ComplexTensor {
    shift_tensor(x, false)
}

fn shift_tensor(x: &ComplexTensor, forward: bool) -> ComplexTensor {
    let (h, w) = x.plane();
    let mut out = x.clone();
    if h * w == 0 {
        return out;
    }
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        let s = shift(plane, h, w, forward);
        plane.copy_from_slice(&s);
    }
    out
}

/// Centered orthonormal forward 2-D DFT over the trailing two dimensions.
pub fn fft2c(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = x.plane();
    check_plane(x, h, w)?;
    Fft2::new(h, w).forward(x)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = x.plane();
    check_plane(x, h, w)?;
    Fft2::new(h, w).inverse(x)
}
