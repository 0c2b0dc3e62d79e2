//! Class-proportion summaries of a patch and the luminance and contrast terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Patch;

/// Class proportions `m`, categorical spread `s` and the number of cells
/// they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSummary {
    pub m: Vec<f64>,
    pub s: f64,
    pub n_valid: u64,
}

impl PatchSummary {
    /// Summary from per-class counts; `counts.len()` is the class count.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptyPatch);
        }
        let inv = 1.0 / n as f64;
        let m: Vec<f64> = counts.iter().map(|&c| c as f64 * inv).collect();
        let s = spread(&m);
        Ok(PatchSummary { m, s, n_valid: n })
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }
}

/// Scaled Gini-Simpson spread `(1 - |m|) / (1 - 1/sqrt(k))`: 0 for a single
/// class, 1 for uniform proportions.
pub fn spread(m: &[f64]) -> f64 {
    let k = m.len() as f64;
    let norm = m.iter().map(|p| p * p).sum::<f64>().sqrt();
    ((1.0 - norm) / (1.0 - 1.0 / k.sqrt())).clamp(0.0, 1.0)
}

/// Summarize the valid cells of a patch over the class alphabet `0..k`.
pub fn summarize(p: &Patch, k: u32) -> Result<PatchSummary> {
    let mut counts = vec![0u64; k as usize];
    for l in p.valid_labels() {
        if l >= k {
            return Err(Error::InvalidInput(format!("label {l} not below k = {k}")));
        }
        counts[l as usize] += 1;
    }
    PatchSummary::from_counts(&counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for StabilityConstants {
    fn default() -> Self {
        StabilityConstants { c1: 0.01, c2: 0.01 }
    }
}

impl StabilityConstants {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let c = StabilityConstants { c1, c2 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite() && self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stability constants must be positive, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(2 mx·my + C1) / (mx·mx + my·my + C1)`
pub fn luminance(a: &PatchSummary, b: &PatchSummary, c: &StabilityConstants) -> f64 {
    debug_assert_eq!(a.k(), b.k());
    (2.0 * dot(&a.m, &b.m) + c.c1) / (dot(&a.m, &a.m) + dot(&b.m, &b.m) + c.c1)
}

/// `(2 sx sy + C2) / (sx² + sy² + C2)`
pub fn contrast(a: &PatchSummary, b: &PatchSummary, c: &StabilityConstants) -> f64 {
    (2.0 * a.s * b.s + c.c2) / (a.s * a.s + b.s * b.s + c.c2)
}
