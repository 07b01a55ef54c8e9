//! Sample-based falsification of the device and activation assumptions.
//!
//! Sampling can only find counterexamples; an empty report means no violation
//! was found on the sampled points, nothing more.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;

use crate::{Error, Result};

/// Property checked by a validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Positivity,
    Bounds,
    Lipschitz,
    Monotonicity,
    Derivative,
    Oddness,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Property::Positivity => "positivity",
            Property::Bounds => "bounds",
            Property::Lipschitz => "lipschitz",
            Property::Monotonicity => "monotonicity",
            Property::Derivative => "derivative",
            Property::Oddness => "oddness",
        };
        f.write_str(s)
    }
}

/// Aggregated violations of one property.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub property: Property,
    /// Number of offending samples (or sample pairs).
    pub count: usize,
    /// Sample where the violation was largest.
    pub worst_at: f64,
    /// Size of the largest violation, in the units of the checked quantity.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub range: (f64, f64),
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, property: Property) -> bool {
        self.violations.iter().any(|v| v.property == property)
    }

    pub fn get(&self, property: Property) -> Option<&Violation> {
        self.violations.iter().find(|v| v.property == property)
    }

    pub fn summary(&self) -> String {
        if self.is_clean() {
            format!("no violation found on {} samples", self.n_samples)
        } else {
            let parts: Vec<String> = self
                .violations
                .iter()
                .map(|v| format!("{} ({}x, worst at {:.6})", v.property, v.count, v.worst_at))
                .collect();
            format!("violations on {} samples: {}", self.n_samples, parts.join(", "))
        }
    }
}

/// Collects violations of each property, keeping the worst offender.
#[derive(Debug, Default)]
pub(crate) struct ViolationLog {
    entries: Vec<Violation>,
}

impl ViolationLog {
    pub(crate) fn record(&mut self, property: Property, at: f64, excess: f64) {
        match self.entries.iter_mut().find(|v| v.property == property) {
            Some(v) => {
                v.count += 1;
                if excess > v.worst_excess {
                    v.worst_excess = excess;
                    v.worst_at = at;
                }
            }
            None => self.entries.push(Violation {
                property,
                count: 1,
                worst_at: at,
                worst_excess: excess,
            }),
        }
    }

    pub(crate) fn finish(self, n_samples: usize, range: (f64, f64)) -> ValidationReport {
        ValidationReport {
            n_samples,
            range,
            violations: self.entries,
        }
    }
}

/// Sorted sample points: a uniform grid of `n` points over `[lo, hi]` plus `n`
/// seeded uniform random points in the same interval.
pub(crate) fn sample_points(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "invalid sample range [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    xs.extend((0..n).map(|_| rng.random_range(lo..=hi)));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    Ok(xs)
}
