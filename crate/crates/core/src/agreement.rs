//! Pointwise agreement indices between two aligned label patches.
//!
//! Every index is computed from a k×k confusion table over the jointly valid
//! cells. Counts are combined in integer arithmetic and only the final ratio
//! is taken in floating point, so identical inputs always score exactly 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Patch;

/// Agreement measure used as the structural term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgreementKind {
    Accuracy,
    Jaccard {
        foreground: u32,
    },
    Dice {
        foreground: u32,
    },
    CohenKappa,
    Rand,
    AdjustedRand,
    /// One minus the normalized Hamming distance; equal to accuracy.
    Hamming,
}

impl AgreementKind {
    /// Parse a metric name. `foreground` is required for Jaccard and Dice.
    pub fn from_name(name: &str, foreground: Option<u32>) -> Result<Self> {
        let need_fg = || {
            foreground.ok_or_else(|| {
                Error::InvalidConfig(format!("metric `{name}` needs a foreground class"))
            })
        };
        Ok(match name.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => AgreementKind::Accuracy,
            "jaccard" | "j" => AgreementKind::Jaccard {
                foreground: need_fg()?,
            },
            "dice" => AgreementKind::Dice {
                foreground: need_fg()?,
            },
            "kappa" | "cohen" | "cohen_kappa" => AgreementKind::CohenKappa,
            "rand" => AgreementKind::Rand,
            "ari" | "adjusted_rand" | "adjrand" => AgreementKind::AdjustedRand,
            "hamming" => AgreementKind::Hamming,
            other => return Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgreementKind::Accuracy => "accuracy",
            AgreementKind::Jaccard { .. } => "jaccard",
            AgreementKind::Dice { .. } => "dice",
            AgreementKind::CohenKappa => "kappa",
            AgreementKind::Rand => "rand",
            AgreementKind::AdjustedRand => "ari",
            AgreementKind::Hamming => "hamming",
        }
    }

    pub fn foreground(&self) -> Option<u32> {
        match *self {
            AgreementKind::Jaccard { foreground } | AgreementKind::Dice { foreground } => {
                Some(foreground)
            }
            _ => None,
        }
    }

    /// Pair-counting indices need at least two points.
    pub fn min_points(&self) -> u64 {
        match self {
            AgreementKind::Rand | AgreementKind::AdjustedRand => 2,
            _ => 1,
        }
    }

    /// Whether the raw index can go negative and is clamped at 0.
    pub fn is_truncated(&self) -> bool {
        matches!(
            self,
            AgreementKind::CohenKappa | AgreementKind::AdjustedRand
        )
    }

    pub fn validate(&self, k: u32) -> Result<()> {
        match self.foreground() {
            Some(fg) if fg >= k => Err(Error::InvalidForeground { fg, k }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AgreementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.foreground() {
            Some(fg) => write!(f, "{}(fg={fg})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Joint label counts over jointly valid cells. `table[a * k + b]` counts
/// positions with x = a and y = b.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    k: usize,
    table: Vec<u64>,
    n: u64,
}

impl ConfusionCounts {
    pub fn new(k: u32) -> Self {
        let k = k as usize;
        ConfusionCounts {
            k,
            table: vec![0; k * k],
            n: 0,
        }
    }

    pub fn from_pairs(k: u32, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut c = Self::new(k);
        for (a, b) in pairs {
            c.add(a, b);
        }
        c
    }

    #[inline]
    pub fn add(&mut self, a: u32, b: u32) {
        self.table[a as usize * self.k + b as usize] += 1;
        self.n += 1;
    }

    #[inline]
    pub fn remove(&mut self, a: u32, b: u32) {
        self.table[a as usize * self.k + b as usize] -= 1;
        self.n -= 1;
    }

    pub fn clear(&mut self) {
        self.table.iter_mut().for_each(|v| *v = 0);
        self.n = 0;
    }

    pub fn k(&self) -> u32 {
        self.k as u32
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn get(&self, a: u32, b: u32) -> u64 {
        self.table[a as usize * self.k + b as usize]
    }

    pub fn table(&self) -> &[u64] {
        &self.table
    }

    /// Class counts of the x patch.
    pub fn row_sums(&self) -> Vec<u64> {
        self.table.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    /// Class counts of the y patch.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|b| (0..self.k).map(|a| self.table[a * self.k + b]).sum())
            .collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|a| self.table[a * self.k + a]).sum()
    }

    /// True when the two partitions of the points coincide up to relabeling.
    pub fn same_partition(&self) -> bool {
        let rows_ok = self
            .table
            .chunks(self.k)
            .all(|r| r.iter().filter(|&&v| v > 0).count() <= 1);
        let cols_ok = (0..self.k).all(|b| {
            (0..self.k)
                .filter(|&a| self.table[a * self.k + b] > 0)
                .count()
                <= 1
        });
        rows_ok && cols_ok
    }
}

/// Confusion table of two aligned patches over their jointly valid cells.
pub fn confusion(px: &Patch, py: &Patch, k: u32) -> Result<ConfusionCounts> {
    if px.labels.len() != py.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "patch sizes {} vs {}",
            px.labels.len(),
            py.labels.len()
        )));
    }
    let mut c = ConfusionCounts::new(k);
    for i in 0..px.labels.len() {
        if px.valid[i] && py.valid[i] {
            let (a, b) = (px.labels[i], py.labels[i]);
            if a >= k || b >= k {
                return Err(Error::InvalidInput(format!(
                    "label {} not below k = {k}",
                    a.max(b)
                )));
            }
            c.add(a, b);
        }
    }
    if c.n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(c)
}

/// Agreement score in [0, 1]; kappa and adjusted Rand are clamped below at 0.
pub fn agreement(kind: AgreementKind, c: &ConfusionCounts) -> Result<f64> {
    let raw = agreement_raw(kind, c)?;
    Ok(if kind.is_truncated() {
        raw.max(0.0)
    } else {
        raw
    })
}

/// Agreement score before truncation. Kappa and adjusted Rand may be negative.
pub fn agreement_raw(kind: AgreementKind, c: &ConfusionCounts) -> Result<f64> {
    kind.validate(c.k())?;
    if c.n == 0 {
        return Err(Error::EmptyOverlap);
    }
    if c.n < kind.min_points() {
        return Err(Error::TooFewPoints(c.n));
    }
    let n = c.n as i128;
    Ok(match kind {
        AgreementKind::Accuracy | AgreementKind::Hamming => c.trace() as f64 / c.n as f64,
        AgreementKind::Jaccard { foreground } => {
            let (inter, union) = fg_overlap(c, foreground);
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        }
        AgreementKind::Dice { foreground } => {
            let (inter, union) = fg_overlap(c, foreground);
            if union == 0 {
                1.0
            } else {
                (2 * inter) as f64 / (union + inter) as f64
            }
        }
        AgreementKind::CohenKappa => {
            let chance: i128 = c
                .row_sums()
                .iter()
                .zip(c.col_sums())
                .map(|(&r, q)| r as i128 * q as i128)
                .sum();
            let den = n * n - chance;
            if den == 0 {
                // Both patches constant on the same class.
                1.0
            } else {
                (n * c.trace() as i128 - chance) as f64 / den as f64
            }
        }
        AgreementKind::Rand => {
            let p = PairCounts::of(c);
            (p.total + 2 * p.both - p.rows - p.cols) as f64 / p.total as f64
        }
        AgreementKind::AdjustedRand => {
            let p = PairCounts::of(c);
            let den = p.total * (p.rows + p.cols) - 2 * p.rows * p.cols;
            if den == 0 {
                if c.same_partition() {
                    1.0
                } else {
                    0.0
                }
            } else {
                (2 * (p.total * p.both - p.rows * p.cols)) as f64 / den as f64
            }
        }
    })
}

/// (|x=fg ∧ y=fg|, |x=fg ∨ y=fg|)
fn fg_overlap(c: &ConfusionCounts, fg: u32) -> (u64, u64) {
    let inter = c.get(fg, fg);
    let x_fg = c.row_sums()[fg as usize];
    let y_fg = c.col_sums()[fg as usize];
    (inter, x_fg + y_fg - inter)
}

/// Pair counts behind the Rand family.
struct PairCounts {
    /// C(n, 2)
    total: i128,
    /// pairs sharing a class in both patches
    both: i128,
    /// pairs sharing a class in x
    rows: i128,
    /// pairs sharing a class in y
    cols: i128,
}

impl PairCounts {
    fn of(c: &ConfusionCounts) -> Self {
        fn choose2(v: u64) -> i128 {
            let v = v as i128;
            v * (v - 1) / 2
        }
        PairCounts {
            total: choose2(c.n),
            both: c.table.iter().map(|&v| choose2(v)).sum(),
            rows: c.row_sums().into_iter().map(choose2).sum(),
            cols: c.col_sums().into_iter().map(choose2).sum(),
        }
    }
}
