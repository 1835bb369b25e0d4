use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::fourier::ComplexTensor;

/// Random-ellipse phantom recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub size: usize,
    /// Inclusive `(min, max)` number of ellipses.
    pub n_ellipses: (usize, usize),
    /// Inclusive intensity range, within `[0, 1]`.
    pub intensity: (f64, f64),
    /// Peak of the smooth phase map in radians.
    pub phase_amplitude: f64,
    pub seed: u64,
    /// Also emit a second contrast with the same geometry.
    pub paired_contrast: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_ellipses: (4, 10),
            intensity: (0.1, 1.0),
            phase_amplitude: 0.5,
            seed: 0,
            paired_contrast: true,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.intensity;
        if self.size < 16 {
            return param_err(format!(
                "phantom size must be at least 16, got {}",
                self.size
            ));
        }
        if self.n_ellipses.0 > self.n_ellipses.1 {
            return param_err(format!(
                "ellipse count range {:?} is empty",
                self.n_ellipses
            ));
        }
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return param_err(format!(
                "intensity range {:?} must be ordered and inside [0, 1]",
                self.intensity
            ));
        }
        if !self.phase_amplitude.is_finite() || self.phase_amplitude < 0.0 {
            return param_err("phase amplitude must be finite and non-negative");
        }
        Ok(())
    }
}

/// Ellipse in normalized coordinates, where the image spans `[-1, 1)` on
/// both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Rotation of the `a` axis from +x, radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Area in pixels on a `size x size` grid.
    pub fn pixel_area(&self, size: usize) -> f64 {
        let half = size as f64 / 2.0;
        std::f64::consts::PI * self.a * self.b * half * half
    }
}

/// `phi(x, y) = amp * (p0 x + p1 y + p2 x y + p3 (x^2 - y^2)) / 4`, so
/// `|phi| <= amp` on the unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothPhase {
    pub amplitude: f64,
    pub coeffs: [f64; 4],
}

impl SmoothPhase {
    pub fn zero() -> Self {
        Self {
            amplitude: 0.0,
            coeffs: [0.0; 4],
        }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let [p0, p1, p2, p3] = self.coeffs;
        self.amplitude * (p0 * x + p1 * y + p2 * x * y + p3 * (x * x - y * y)) / 4.0
    }
}

fn coord(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / size as f64 * 2.0 - 1.0
}

/// Paints `ellipses` in order, each one overwriting what lies beneath, then
/// applies the phase. Sampling is at pixel centers.
pub fn render(size: usize, ellipses: &[Ellipse], phase: &SmoothPhase) -> ComplexTensor {
    let mut data = vec![Complex64::new(0.0, 0.0); size * size];
    for row in 0..size {
        let y = coord(row, size);
        for col in 0..size {
            let x = coord(col, size);
            let Some(e) = ellipses.iter().rev().find(|e| e.contains(x, y)) else {
                continue;
            };
            data[row * size + col] = Complex64::from_polar(e.intensity, phase.at(x, y));
        }
    }
    ComplexTensor::new(vec![size, size], data).expect("square plane")
}

/// Draws a phantom and, when requested, its paired contrast. Larger
/// ellipses are painted first so small structures stay visible.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(ComplexTensor, Option<ComplexTensor>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.gen_range(spec.n_ellipses.0..=spec.n_ellipses.1);
    let (lo, hi) = spec.intensity;
    let draw_intensity = |rng: &mut ChaCha8Rng| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let mut ellipses: Vec<Ellipse> = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(0.08..0.6);
            let b: f64 = rng.gen_range(0.08..0.6);
            let reach = (0.9 - a.max(b)).max(0.0);
            Ellipse {
                cx: rng.gen_range(-1.0..=1.0) * reach,
                cy: rng.gen_range(-1.0..=1.0) * reach,
                a,
                b,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                intensity: draw_intensity(&mut rng),
            }
        })
        .collect();
    ellipses.sort_by(|p, q| (q.a * q.b).total_cmp(&(p.a * p.b)));
    let phase = SmoothPhase {
        amplitude: spec.phase_amplitude,
        coeffs: std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)),
    };
    let image = render(spec.size, &ellipses, &phase);
    let paired = spec.paired_contrast.then(|| {
        let second: Vec<Ellipse> = ellipses
            .iter()
            .map(|e| Ellipse {
                intensity: draw_intensity(&mut rng),
                ..*e
            })
            .collect();
        render(spec.size, &second, &phase)
    });
    Ok((image, paired))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_stays_in_range() {
        for seed in 0..20 {
            let spec = PhantomSpec {
                seed,
                ..PhantomSpec::default()
            };
            let (img, paired) = generate_phantom(&spec).unwrap();
            for t in [&img, paired.as_ref().unwrap()] {
                assert!(t.magnitude().iter().all(|&m| (0.0..=1.05).contains(&m)));
            }
        }
    }

    #[test]
    fn paired_contrast_shares_support() {
        let spec = PhantomSpec {
            intensity: (0.2, 1.0),
            seed: 3,
            ..PhantomSpec::default()
        };
        let (a, b) = generate_phantom(&spec).unwrap();
        let b = b.unwrap();
        let support =
            |t: &ComplexTensor| t.magnitude().iter().map(|&m| m > 0.0).collect::<Vec<_>>();
        assert_eq!(support(&a), support(&b));
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            PhantomSpec {
                size: 8,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                n_ellipses: (3, 2),
                ..PhantomSpec::default()
            },
            PhantomSpec {
                intensity: (0.5, 1.5),
                ..PhantomSpec::default()
            },
        ];
        for spec in bad {
            assert!(generate_phantom(&spec).is_err());
        }
    }
}
