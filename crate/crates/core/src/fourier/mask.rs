use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ComplexTensor;
use crate::error::{param_err, shape_err, Error, Result};

/// 1-D Cartesian phase-encode line mask.
///
/// `lines[i]` is true when phase-encode line `i` (row `i` of a centered
/// k-space plane) is acquired. The mask is constant along the
/// frequency-encode axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    lines: Vec<bool>,
    accel: f64,
    acs_fraction: f64,
    seed: u64,
}

/// Lines in the fully sampled centre block: `round(acs_fraction * h)`.
pub fn acs_line_count(h: usize, acs_fraction: f64) -> usize {
    (acs_fraction * h as f64).round() as usize
}

/// First row of the ACS block. The block is centred on `floor(h/2)`; for an
/// even block size it extends one extra line below the centre.
pub fn acs_start(h: usize, acs_lines: usize) -> usize {
    (h / 2).saturating_sub(acs_lines / 2)
}

/// Random-sampling line budget including ACS: `max(round(h/accel), acs)`.
pub fn line_budget(h: usize, accel: f64, acs_lines: usize) -> usize {
    ((h as f64 / accel).round() as usize).max(acs_lines).min(h)
}

pub fn make_cartesian_mask(
    h: usize,
    accel: f64,
    acs_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if h < 4 {
        return param_err(format!("mask height must be at least 4, got {h}"));
    }
    if !(accel.is_finite() && accel >= 1.0) {
        return param_err(format!("acceleration must be >= 1, got {accel}"));
    }
    if !(0.0..=1.0).contains(&acs_fraction) {
        return param_err(format!(
            "ACS fraction must lie in [0, 1], got {acs_fraction}"
        ));
    }
    if acs_fraction > 1.0 / accel + 1e-12 {
        return Err(Error::InfeasibleBudget {
            acs_fraction,
            max: 1.0 / accel,
        });
    }
    let acs = acs_line_count(h, acs_fraction);
    if acs_fraction > 0.0 && acs == 0 {
        return param_err(format!(
            "h = {h} is too small to hold an ACS block of fraction {acs_fraction}"
        ));
    }
    let total = line_budget(h, accel, acs);

    let mut lines = vec![false; h];
    let start = acs_start(h, acs);
    lines[start..start + acs].iter_mut().for_each(|l| *l = true);

    let pool: Vec<usize> = (0..h).filter(|&i| !lines[i]).collect();
    let extra = total - acs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in index::sample(&mut rng, pool.len(), extra) {
        lines[pool[pick]] = true;
    }
    Ok(SamplingMask {
        lines,
        accel,
        acs_fraction,
        seed,
    })
}

impl SamplingMask {
    /// Mask with every line acquired.
    pub fn full(h: usize) -> Self {
        Self {
            lines: vec![true; h],
            accel: 1.0,
            acs_fraction: 0.0,
            seed: 0,
        }
    }

    /// Builds a mask from an explicit line vector (no budget checks).
    pub fn from_lines(lines: Vec<bool>, accel: f64, acs_fraction: f64, seed: u64) -> Self {
        Self {
            lines,
            accel,
            acs_fraction,
            seed,
        }
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn height(&self) -> usize {
        self.lines.len()
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn acs_fraction(&self) -> f64 {
        self.acs_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampled_count(&self) -> usize {
        self.lines.iter().filter(|&&l| l).count()
    }

    /// Rank-2 `h x w` binary mask, constant along the frequency-encode axis.
    pub fn expand(&self, w: usize) -> Vec<f64> {
        self.lines
            .iter()
            .flat_map(|&l| std::iter::repeat_n(if l { 1.0 } else { 0.0 }, w))
            .collect()
    }

    pub(crate) fn check(&self, x: &ComplexTensor) -> Result<()> {
        let (h, _) = x.plane();
        if h != self.lines.len() {
            return shape_err(format!(
                "mask has {} lines but k-space plane has height {h}",
                self.lines.len()
            ));
        }
        Ok(())
    }
}

/// `M ⊙ k`: zeroes every unacquired phase-encode line.
pub fn undersample(k_full: &ComplexTensor, mask: &SamplingMask) -> Result<ComplexTensor> {
    mask.check(k_full)?;
    let (h, w) = k_full.plane();
    let mut out = k_full.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        for (row, &keep) in plane.chunks_exact_mut(w).zip(&mask.lines) {
            if !keep {
                row.fill(Complex64::new(0.0, 0.0));
            }
        }
    }
    Ok(out)
}

impl fmt::Display for SamplingMask {
    /// `h,accel,acs_fraction,seed,<0/1 string>` on a single line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},",
            self.lines.len(),
            self.accel,
            self.acs_fraction,
            self.seed
        )?;
        for &l in &self.lines {
            f.write_str(if l { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SamplingMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("mask line: {what}"));
        let fields: Vec<&str> = s.trim_end_matches(['\r', '\n']).split(',').collect();
        let [h, accel, acs, seed, bits] = fields[..] else {
            return Err(bad("expected 5 comma-separated fields"));
        };
        let h: usize = h.parse().map_err(|_| bad("bad h"))?;
        let accel: f64 = accel.parse().map_err(|_| bad("bad accel"))?;
        let acs_fraction: f64 = acs.parse().map_err(|_| bad("bad acs_fraction"))?;
        let seed: u64 = seed.parse().map_err(|_| bad("bad seed"))?;
        let lines = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad("line vector must contain only 0/1")),
            })
            .collect::<Result<Vec<bool>>>()?;
        if lines.len() != h {
            return Err(bad("line vector length differs from h"));
        }
        Ok(Self {
            lines,
            accel,
            acs_fraction,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quarter_sampling_with_acs() {
        for seed in 0..5 {
            let m = make_cartesian_mask(64, 4.0, 0.125, seed).unwrap();
            assert_eq!(m.sampled_count(), 16);
            assert!(m.lines()[28..36].iter().all(|&l| l));
        }
    }

    #[test]
    fn accel_one_is_full() {
        let m = make_cartesian_mask(64, 1.0, 0.125, 9).unwrap();
        assert_eq!(m.sampled_count(), 64);
    }

    #[test]
    fn accel_eight_is_acs_only() {
        let m = make_cartesian_mask(64, 8.0, 0.125, 3).unwrap();
        assert_eq!(m.sampled_count(), 8);
        let expect: Vec<bool> = (0..64).map(|i| (28..36).contains(&i)).collect();
        assert_eq!(m.lines(), &expect[..]);
    }

    #[test]
    fn seed_determinism_and_variation() {
        let a = make_cartesian_mask(64, 4.0, 0.125, 1).unwrap();
        let b = make_cartesian_mask(64, 4.0, 0.125, 1).unwrap();
        let c = make_cartesian_mask(64, 4.0, 0.125, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.lines(), c.lines());
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(
            make_cartesian_mask(64, 8.0, 0.2, 0),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(matches!(
            make_cartesian_mask(3, 2.0, 0.0, 0),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            make_cartesian_mask(4, 2.0, 0.1, 0),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            make_cartesian_mask(16, 0.5, 0.0, 0),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn odd_height_acs_is_centered() {
        let m = make_cartesian_mask(9, 3.0, 1.0 / 3.0, 0).unwrap();
        assert_eq!(
            m.lines(),
            &[false, false, false, true, true, true, false, false, false]
        );
    }

    #[test]
    fn undersample_masks_rows() {
        let data = (0..16).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let k = ComplexTensor::new(vec![4, 4], data).unwrap();
        let m = SamplingMask::from_lines(vec![false, true, false, true], 2.0, 0.0, 0);
        let u = undersample(&k, &m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if m.lines()[i] {
                    k.get(&[i, j])
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(u.get(&[i, j]), want);
            }
        }
        assert_eq!(undersample(&k, &SamplingMask::full(4)).unwrap(), k);
        assert!(undersample(&k, &SamplingMask::full(5)).is_err());
    }

    #[test]
    fn serialization_rejects_garbage() {
        assert!("4,2,0,1,0120".parse::<SamplingMask>().is_err());
        assert!("4,2,0,1,010".parse::<SamplingMask>().is_err());
        assert!("4,2,0,1".parse::<SamplingMask>().is_err());
    }

    proptest! {
        #[test]
        fn mask_invariants(h in 4usize..200, accel in 1.0f64..12.0, frac in 0.0f64..1.0, seed: u64) {
            let acs_fraction = frac / accel;
            match make_cartesian_mask(h, accel, acs_fraction, seed) {
                Ok(m) => {
                    let acs = acs_line_count(h, acs_fraction);
                    let start = acs_start(h, acs);
                    prop_assert!(m.lines()[start..start + acs].iter().all(|&l| l));
                    let want = ((h as f64 / accel).round() as usize).max(acs);
                    prop_assert_eq!(m.sampled_count(), want);
                    let full = m.expand(3);
                    for (i, row) in full.chunks(3).enumerate() {
                        let want = if m.lines()[i] { 1.0 } else { 0.0 };
                        prop_assert!(row.iter().all(|&v| v == want));
                    }
                }
                Err(Error::Param(_)) => prop_assert!(acs_line_count(h, acs_fraction) == 0),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn text_round_trip(h in 4usize..100, accel in 1.0f64..8.0, seed: u64) {
            let m = make_cartesian_mask(h, accel, 0.0, seed).unwrap();
            let back: SamplingMask = m.to_string().parse().unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn undersample_idempotent(seed: u64) {
            let m = make_cartesian_mask(16, 4.0, 0.125, seed).unwrap();
            let data = (0..16 * 8).map(|i| Complex64::new((i as f64).sin(), (seed % 97) as f64)).collect();
            let k = ComplexTensor::new(vec![16, 8], data).unwrap();
            let once = undersample(&k, &m).unwrap();
            prop_assert_eq!(undersample(&once, &m).unwrap(), once);
        }
    }
}
