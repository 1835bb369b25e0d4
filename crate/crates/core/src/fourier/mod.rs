//! Complex k-space/image containers, the centered orthonormal FFT pair,
//! Cartesian line masks and data consistency.

mod dc;
mod fft;
mod mask;
mod tensor;

pub use dc::{data_consistency, DcWeight};
pub use fft::{fft2c, fftshift, ifft2c, ifftshift, Fft2};
pub use mask::{
    acs_line_count, acs_start, line_budget, make_cartesian_mask, undersample, SamplingMask,
};
pub use tensor::ComplexTensor;
