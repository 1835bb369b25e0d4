//! Differentiable Fourier transforms and data consistency on
//! `(N, 2, H, W)` real/imag tensors.
//!
//! The centered orthonormal DFT is unitary, so the adjoint of `fft2c` viewed
//! as a real-linear map on (re, im) pairs is `ifft2c` and vice versa.

use std::sync::Arc;

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{shape_err, Result};
use crate::fourier::{DcWeight, Fft2};

fn transform(x: &Tensor, fft: &Fft2, inverse: bool) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if c != 2 {
        return shape_err(format!("spectral ops need 2 (re, im) channels, got {c}"));
    }
    if fft.dims() != (h, w) {
        return shape_err(format!(
            "FFT planned for {:?}, input plane is {h}x{w}",
            fft.dims()
        ));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut plane = vec![num_complex::Complex64::new(0.0, 0.0); hw];
    for i in 0..n {
        let src = &x.data()[i * 2 * hw..(i + 1) * 2 * hw];
        for (p, z) in plane.iter_mut().enumerate() {
            *z = num_complex::Complex64::new(src[p], src[hw + p]);
        }
        if inverse {
            fft.inverse_plane(&mut plane);
        } else {
            fft.forward_plane(&mut plane);
        }
        let dst = &mut out.data_mut()[i * 2 * hw..(i + 1) * 2 * hw];
        for (p, z) in plane.iter().enumerate() {
            dst[p] = z.re;
            dst[hw + p] = z.im;
        }
    }
    Ok(out)
}

fn fft_flops(x: &Tensor) -> u64 {
    let n = x.len() / 2;
    (5.0 * n as f64 * (n.max(2) as f64).log2()) as u64
}

impl Tape {
    pub fn fft2c(&self, x: Var, fft: &Arc<Fft2>) -> Result<Var> {
        self.spectral(x, fft, false)
    }

    pub fn ifft2c(&self, x: Var, fft: &Arc<Fft2>) -> Result<Var> {
        self.spectral(x, fft, true)
    }

    fn spectral(&self, x: Var, fft: &Arc<Fft2>, inverse: bool) -> Result<Var> {
        let xv = self.value(x);
        let out = transform(&xv, fft, inverse)?;
        self.add_flops(fft_flops(&xv));
        let fft = Arc::clone(fft);
        Ok(self.push(
            if inverse { "ifft2c" } else { "fft2c" },
            out,
            &[x],
            Box::new(move |g, _| vec![Some(transform(g, &fft, !inverse).expect("validated"))]),
        ))
    }

    /// Data consistency on real/imag channels: rows with `lines[row]` set are
    /// blended with the measurements `k_u`, the rest pass through.
    pub fn data_consistency(
        &self,
        k_pred: Var,
        k_u: &Arc<Tensor>,
        lines: &Arc<Vec<bool>>,
        weight: DcWeight,
    ) -> Result<Var> {
        let weight = weight.validate()?;
        let kv = self.value(k_pred);
        let (n, c, h, w) = kv.dims4()?;
        if kv.shape() != k_u.shape() || c != 2 {
            return shape_err(format!(
                "DC: prediction {:?} vs measurements {:?}",
                kv.shape(),
                k_u.shape()
            ));
        }
        if lines.len() != h {
            return shape_err(format!(
                "DC: mask has {} lines, plane height {h}",
                lines.len()
            ));
        }
        let (keep, take) = weight.blend();
        let mut out = (*kv).clone();
        for plane in 0..n * c {
            for (row, _) in lines.iter().enumerate().filter(|(_, &l)| l) {
                let off = (plane * h + row) * w;
                let dst = &mut out.data_mut()[off..off + w];
                let src = &k_u.data()[off..off + w];
                match weight {
                    DcWeight::Hard => dst.copy_from_slice(src),
                    DcWeight::Soft(_) => {
                        for (d, &m) in dst.iter_mut().zip(src) {
                            *d = keep * *d + take * m;
                        }
                    }
                }
            }
        }
        self.add_flops(kv.len() as u64);
        let lines = Arc::clone(lines);
        Ok(self.push(
            "data_consistency",
            out,
            &[k_pred],
            Box::new(move |g, _| {
                let mut d = g.clone();
                for plane in 0..n * c {
                    for (row, _) in lines.iter().enumerate().filter(|(_, &l)| l) {
                        let off = (plane * h + row) * w;
                        d.data_mut()[off..off + w]
                            .iter_mut()
                            .for_each(|v| *v *= keep);
                    }
                }
                vec![Some(d)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{data_consistency, fft2c, make_cartesian_mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tape_fft_matches_complex_fft() {
        let x = random(&[2, 2, 6, 8], 1);
        let fft = Arc::new(Fft2::new(6, 8));
        let t = Tape::new();
        let k = t.fft2c(t.constant(x.clone()), &fft).unwrap();
        let want = Tensor::from_complex(&fft2c(&x.to_complex().unwrap()).unwrap()).unwrap();
        assert!(t.value(k).max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn fft_adjoint_identity() {
        let x = random(&[1, 2, 5, 7], 2);
        let y = random(&[1, 2, 5, 7], 3);
        let fft = Fft2::new(5, 7);
        let fx = transform(&x, &fft, false).unwrap();
        let iy = transform(&y, &fft, true).unwrap();
        assert!((fx.dot(&y) - x.dot(&iy)).abs() < 1e-12);
    }

    #[test]
    fn tape_dc_matches_complex_dc() {
        let mask = make_cartesian_mask(16, 4.0, 0.125, 7).unwrap();
        let pred = random(&[1, 2, 16, 4], 4);
        let meas = random(&[1, 2, 16, 4], 5);
        for weight in [DcWeight::Hard, DcWeight::Soft(0.7)] {
            let t = Tape::new();
            let out = t
                .data_consistency(
                    t.constant(pred.clone()),
                    &Arc::new(meas.clone()),
                    &Arc::new(mask.lines().to_vec()),
                    weight,
                )
                .unwrap();
            let want = data_consistency(
                &pred.to_complex().unwrap(),
                &meas.to_complex().unwrap(),
                &mask,
                weight,
            )
            .unwrap();
            assert!(
                t.value(out)
                    .max_abs_diff(&Tensor::from_complex(&want).unwrap())
                    < 1e-15
            );
        }
    }
}
