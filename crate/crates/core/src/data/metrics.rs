use serde::Serialize;

use crate::error::{param_err, shape_err, Result};
use crate::fourier::{ComplexTensor, SamplingMask};
use crate::model::{Model, ReconInput};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Real `height x width` image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Magnitude {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Magnitude {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return shape_err(format!(
                "{} values for a {height}x{width} image",
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Magnitude of a 2-D complex image.
    pub fn of(x: &ComplexTensor) -> Result<Self> {
        if x.shape().len() != 2 {
            return shape_err(format!("expected a 2-D image, got {:?}", x.shape()));
        }
        let (h, w) = x.plane();
        Self::new(h, w, x.magnitude())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }

    fn check_pair(&self, other: &Self) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return shape_err(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }
}

/// Magnitudes of `recon` and `target`, both divided by the peak of the
/// target so the reference spans `[0, 1]`.
pub fn normalized_pair(
    recon: &ComplexTensor,
    target: &ComplexTensor,
) -> Result<(Magnitude, Magnitude)> {
    let (x, r) = (Magnitude::of(recon)?, Magnitude::of(target)?);
    x.check_pair(&r)?;
    let peak = r.max();
    let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    Ok((x.scaled(s), r.scaled(s)))
}

pub fn mse(x: &Magnitude, reference: &Magnitude) -> Result<f64> {
    x.check_pair(reference)?;
    let n = x.data.len().max(1) as f64;
    Ok(x.data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(x: &Magnitude, reference: &Magnitude, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return param_err(format!("data range must be positive, got {data_range}"));
    }
    let e = mse(x, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / e).log10())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter keeping only fully covered windows.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * data[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(i, gi)| gi * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all fully covered 11x11 Gaussian
/// windows.
pub fn ssim(x: &Magnitude, reference: &Magnitude, data_range: f64) -> Result<f64> {
    x.check_pair(reference)?;
    if !(data_range > 0.0) {
        return param_err(format!("data range must be positive, got {data_range}"));
    }
    let (h, w) = (x.height, x.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return shape_err(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        ));
    }
    let g = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (a, b) = (&x.data, &reference.data);
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(a, a), h, w, &g);
    let bb = filter_valid(&prod(b, b), h, w, &g);
    let ab = filter_valid(&prod(a, b), h, w, &g);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub id: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean squared error in units of 1e-5.
    pub mse: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // identical entries must give exactly zero spread
        let std = if values.iter().all(|&v| v == values[0]) {
            0.0
        } else {
            var.sqrt()
        };
        let mean = if std == 0.0 { values[0] } else { mean };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    pub mse: Aggregate,
}

pub const REPORT_VERSION: u32 = 1;

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let col = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).collect::<Vec<_>>();
        Self {
            psnr: Aggregate::of(&col(|m| m.psnr)),
            ssim: Aggregate::of(&col(|m| m.ssim)),
            mse: Aggregate::of(&col(|m| m.mse)),
            per_image,
        }
    }

    /// `id,psnr,ssim,mse` with MSE in units of 1e-5.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,ssim,mse\n");
        for m in &self.per_image {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                m.id, m.psnr, m.ssim, m.mse
            ));
        }
        s
    }

    /// Versioned aggregate summary. Non-finite values become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let agg = |a: &Aggregate| serde_json::json!({ "mean": a.mean, "std": a.std });
        serde_json::json!({
            "version": REPORT_VERSION,
            "count": self.per_image.len(),
            "psnr_db": agg(&self.psnr),
            "ssim": agg(&self.ssim),
            "mse_1e5": agg(&self.mse),
        })
    }
}

/// Reconstruction method under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    ZeroFill,
    Model(&'a Model),
}

/// Reconstructs every target from its undersampled k-space and scores the
/// magnitudes after paired normalization (data range 1). `references` is
/// required for reference-guided models and ignored otherwise.
pub fn evaluate(
    method: Method<'_>,
    targets: &[ComplexTensor],
    references: Option<&[ComplexTensor]>,
    mask: &SamplingMask,
    batch: usize,
) -> Result<MetricsReport> {
    if let Some(r) = references {
        if r.len() != targets.len() {
            return shape_err(format!(
                "{} references for {} targets",
                r.len(),
                targets.len()
            ));
        }
    }
    let batch = batch.max(1);
    let mut per_image = Vec::with_capacity(targets.len());
    for (chunk_index, chunk) in targets.chunks(batch).enumerate() {
        let start = chunk_index * batch;
        let target = ComplexTensor::stack(chunk)?;
        let wants_ref = matches!(method, Method::Model(m) if m.config().uses_reference());
        let reference = match (references, wants_ref) {
            (Some(r), true) => Some(ComplexTensor::stack(&r[start..start + chunk.len()])?),
            (None, true) => {
                return param_err("reference-guided model evaluated without references")
            }
            _ => None,
        };
        let input = ReconInput::from_target(&target, mask, reference.as_ref())?;
        let recon = match method {
            Method::ZeroFill => input.zero_filled()?,
            Method::Model(m) => m.forward(&input)?.image,
        };
        for (j, t) in chunk.iter().enumerate() {
            let (x, r) = normalized_pair(&recon.plane_at(j), t)?;
            per_image.push(ImageMetrics {
                id: start + j,
                psnr: psnr(&x, &r, 1.0)?,
                ssim: ssim(&x, &r, 1.0)?,
                mse: mse(&x, &r)? / 1e-5,
            });
        }
    }
    Ok(MetricsReport::from_images(per_image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Magnitude {
        Magnitude::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    #[test]
    fn psnr_edge_cases() {
        let a = img(4, 4, |_, _| 0.25);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = img(4, 4, |_, _| 2.25);
        assert!(psnr(&a, &b, 2.0).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &b, 0.0).is_err());
        assert!(psnr(&a, &img(4, 5, |_, _| 0.0), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = img(16, 16, |y, x| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let z = img(16, 16, |y, x| if (x + y) % 2 == 0 { 0.5 } else { -0.5 });
        let neg = z.clone().scaled(-1.0);
        assert!(ssim(&neg, &z, 1.0).unwrap() < 0.0);
        assert!(ssim(&img(8, 8, |_, _| 0.0), &img(8, 8, |_, _| 0.0), 1.0).is_err());
    }

    #[test]
    fn aggregate_of_single_value() {
        let a = Aggregate::of(&[3.7]);
        assert_eq!((a.mean, a.std), (3.7, 0.0));
    }
}
