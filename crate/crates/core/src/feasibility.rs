//! Probability that a local k-space window holds enough acquired lines to
//! interpolate from.
//!
//! Outside the fully sampled ACS band, each phase-encode line is modelled as
//! acquired independently with probability `1 - p`, where
//!
//! ```text
//! p = 1 - (1/a - R_acs) / (1 - R_acs)
//! ```
//!
//! is the chance that a given non-ACS line is missing. A window of `k`
//! consecutive lines supports interpolation when it holds at least two
//! acquired lines:
//!
//! ```text
//! P = 1 - p^k - k p^(k-1) (1 - p)
//! ```
//!
//! The independence assumption is an approximation: real masks draw lines
//! without replacement. [`monte_carlo_feasibility`] simulates the same
//! Bernoulli model line by line and serves as an independent check of the
//! closed form.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityQuery {
    /// Window length in phase-encode lines.
    pub window_k: usize,
    pub accel: f64,
    pub acs_fraction: f64,
}

impl FeasibilityQuery {
    pub fn new(window_k: usize, accel: f64, acs_fraction: f64) -> Self {
        Self {
            window_k,
            accel,
            acs_fraction,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.accel.is_finite() && self.accel > 0.0) {
            return param_err(format!("acceleration must be > 0, got {}", self.accel));
        }
        if !(self.acs_fraction.is_finite() && (0.0..1.0).contains(&self.acs_fraction)) {
            return param_err(format!(
                "ACS fraction must lie in [0, 1), got {}",
                self.acs_fraction
            ));
        }
        Ok(())
    }

    fn validate_window(&self) -> Result<()> {
        self.validate()?;
        if self.window_k < 2 {
            return param_err(format!(
                "interpolation needs at least two lines; window_k = {}",
                self.window_k
            ));
        }
        Ok(())
    }
}

/// Probability that a non-ACS line is not acquired, clamped to `[0, 1]`.
pub fn line_miss_probability(q: &FeasibilityQuery) -> Result<f64> {
    q.validate()?;
    let r = q.acs_fraction;
    let p = 1.0 - (1.0 / q.accel - r) / (1.0 - r);
    Ok(p.clamp(0.0, 1.0))
}

/// Closed-form probability that `window_k` lines contain at least two
/// acquired lines.
pub fn feasibility_probability(q: &FeasibilityQuery) -> Result<f64> {
    q.validate_window()?;
    let p = line_miss_probability(q)?;
    let k = q.window_k as i32;
    let none = p.powi(k);
    let one = k as f64 * p.powi(k - 1) * (1.0 - p);
    Ok((1.0 - none - one).clamp(0.0, 1.0))
}

/// Simulates `trials` windows line by line and returns the fraction that
/// hold at least two acquired lines.
pub fn monte_carlo_feasibility(q: &FeasibilityQuery, trials: u64, seed: u64) -> Result<f64> {
    q.validate_window()?;
    if trials == 0 {
        return param_err("trials must be >= 1");
    }
    let hit = 1.0 - line_miss_probability(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible = 0u64;
    for _ in 0..trials {
        let mut acquired = 0;
        for _ in 0..q.window_k {
            if rng.gen::<f64>() < hit {
                acquired += 1;
                if acquired == 2 {
                    feasible += 1;
                    break;
                }
            }
        }
    }
    Ok(feasible as f64 / trials as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCell {
    pub k: usize,
    pub a: f64,
    #[serde(rename = "P")]
    pub p_feasible: f64,
}

/// Dense `(k, a) -> P` grid, rows ordered by `a` then `k`.
pub fn feasibility_grid(
    k_range: RangeInclusive<usize>,
    a_values: &[f64],
    acs_fraction: f64,
) -> Result<Vec<FeasibilityCell>> {
    if k_range.is_empty() || a_values.is_empty() {
        return param_err("feasibility grid needs non-empty k and a ranges");
    }
    let mut cells = Vec::with_capacity(a_values.len() * (k_range.end() - k_range.start() + 1));
    for &a in a_values {
        for k in k_range.clone() {
            let p_feasible = feasibility_probability(&FeasibilityQuery::new(k, a, acs_fraction))?;
            cells.push(FeasibilityCell { k, a, p_feasible });
        }
    }
    Ok(cells)
}

/// Per-cell Monte-Carlo seed, independent of evaluation order.
pub fn cell_seed(base: u64, k: usize, a: f64) -> u64 {
    let mut z = base ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.to_bits().rotate_left(17);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Smallest grid acceleration whose best window (max over `k`) falls below
/// `threshold`.
pub fn min_accel_below(cells: &[FeasibilityCell], threshold: f64) -> Option<f64> {
    let mut accels: Vec<f64> = cells.iter().map(|c| c.a).collect();
    accels.sort_by(f64::total_cmp);
    accels.dedup();
    accels.into_iter().find(|&a| {
        cells
            .iter()
            .filter(|c| c.a == a)
            .all(|c| c.p_feasible < threshold)
    })
}

/// CSV with header `k,a,P`, probabilities at 6 decimal places.
pub fn grid_to_csv(cells: &[FeasibilityCell]) -> String {
    let mut s = String::from("k,a,P\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{:.6}", c.k, c.a, c.p_feasible);
    }
    s
}
