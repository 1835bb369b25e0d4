use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::{ComplexTensor, SamplingMask};
use crate::error::{param_err, shape_err, Result};

/// Weight of the k-space fidelity term.
///
/// `Hard` is the `λ → ∞` limit: acquired samples are replaced outright.
/// In JSON this is the string `"hard"`; soft weights are plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum DcWeight {
    #[default]
    Hard,
    Soft(f64),
}

impl DcWeight {
    pub fn validate(self) -> Result<Self> {
        match self {
            DcWeight::Soft(l) if !(l.is_finite() && l >= 0.0) => {
                param_err(format!("DC lambda must be finite and >= 0, got {l}"))
            }
            w => Ok(w),
        }
    }

    /// Blend factors `(keep_pred, take_measured)` applied at acquired
    /// positions.
    pub fn blend(self) -> (f64, f64) {
        match self {
            DcWeight::Hard => (0.0, 1.0),
            DcWeight::Soft(l) => (1.0 / (1.0 + l), l / (1.0 + l)),
        }
    }
}

impl fmt::Display for DcWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DcWeight::Hard => f.write_str("hard"),
            DcWeight::Soft(l) => write!(f, "{l}"),
        }
    }
}

impl std::str::FromStr for DcWeight {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("hard") || s.eq_ignore_ascii_case("inf") {
            return Ok(DcWeight::Hard);
        }
        let l: f64 = s
            .parse()
            .map_err(|_| crate::Error::Param(format!("bad DC lambda `{s}`")))?;
        DcWeight::Soft(l).validate()
    }
}

impl Serialize for DcWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DcWeight::Hard => s.serialize_str("hard"),
            DcWeight::Soft(l) => s.serialize_f64(*l),
        }
    }
}

impl<'de> Deserialize<'de> for DcWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = DcWeight;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"hard\" or a non-negative number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<DcWeight, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<DcWeight, E> {
                DcWeight::Soft(v).validate().map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<DcWeight, E> {
                Ok(DcWeight::Soft(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<DcWeight, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

/// k-space data consistency.
///
/// Unacquired entries pass `k_pred` through; acquired entries become
/// `(k_pred + λ k_u) / (1 + λ)`, i.e. exactly `k_u` in hard mode.
pub fn data_consistency(
    k_pred: &ComplexTensor,
    k_u: &ComplexTensor,
    mask: &SamplingMask,
    weight: DcWeight,
) -> Result<ComplexTensor> {
    let weight = weight.validate()?;
    if !k_pred.same_shape(k_u) {
        return shape_err(format!(
            "k_pred {:?} vs k_u {:?}",
            k_pred.shape(),
            k_u.shape()
        ));
    }
    mask.check(k_pred)?;
    let (h, w) = k_pred.plane();
    let (keep, take) = weight.blend();
    let mut out = k_pred.clone();
    for (plane, meas) in out
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(k_u.data().chunks_exact(h * w))
    {
        for (i, &acquired) in mask.lines().iter().enumerate() {
            if !acquired {
                continue;
            }
            let row = &mut plane[i * w..(i + 1) * w];
            let mrow = &meas[i * w..(i + 1) * w];
            match weight {
                DcWeight::Hard => row.copy_from_slice(mrow),
                DcWeight::Soft(_) => {
                    for (p, &m) in row.iter_mut().zip(mrow) {
                        *p = *p * keep + m * take;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::make_cartesian_mask;
    use num_complex::Complex64;

    fn filled(h: usize, w: usize, f: impl Fn(usize) -> Complex64) -> ComplexTensor {
        ComplexTensor::new(vec![h, w], (0..h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn hard_full_mask_returns_measurements() {
        let p = filled(4, 4, |i| Complex64::new(i as f64, 0.0));
        let u = filled(4, 4, |i| Complex64::new(0.0, i as f64));
        let out = data_consistency(&p, &u, &SamplingMask::full(4), DcWeight::Hard).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn zero_lambda_is_passthrough() {
        let p = filled(4, 4, |i| Complex64::new(i as f64, 1.0));
        let u = filled(4, 4, |_| Complex64::new(7.0, 7.0));
        let out = data_consistency(&p, &u, &SamplingMask::full(4), DcWeight::Soft(0.0)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn unit_lambda_averages() {
        let p = filled(4, 2, |_| Complex64::new(2.0, 0.0));
        let u = filled(4, 2, |_| Complex64::new(4.0, 0.0));
        let m = SamplingMask::from_lines(vec![true, false, false, false], 4.0, 0.0, 0);
        let out = data_consistency(&p, &u, &m, DcWeight::Soft(1.0)).unwrap();
        assert_eq!(out.get(&[0, 0]), Complex64::new(3.0, 0.0));
        assert_eq!(out.get(&[1, 0]), Complex64::new(2.0, 0.0));
    }

    #[test]
    fn hard_mode_idempotent() {
        let m = make_cartesian_mask(16, 4.0, 0.125, 5).unwrap();
        let p = filled(16, 8, |i| Complex64::new((i as f64).cos(), 0.3));
        let u = filled(16, 8, |i| Complex64::new(0.1 * i as f64, -1.0));
        let once = data_consistency(&p, &u, &m, DcWeight::Hard).unwrap();
        let twice = data_consistency(&once, &u, &m, DcWeight::Hard).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn negative_lambda_rejected() {
        let p = filled(4, 4, |_| Complex64::new(0.0, 0.0));
        assert!(data_consistency(&p, &p, &SamplingMask::full(4), DcWeight::Soft(-1.0)).is_err());
        assert!("-2".parse::<DcWeight>().is_err());
    }

    #[test]
    fn json_forms() {
        assert_eq!(serde_json::to_string(&DcWeight::Hard).unwrap(), "\"hard\"");
        assert_eq!(
            serde_json::from_str::<DcWeight>("0.5").unwrap(),
            DcWeight::Soft(0.5)
        );
        assert_eq!(
            serde_json::from_str::<DcWeight>("2").unwrap(),
            DcWeight::Soft(2.0)
        );
        assert_eq!(
            serde_json::from_str::<DcWeight>("\"hard\"").unwrap(),
            DcWeight::Hard
        );
    }
}
