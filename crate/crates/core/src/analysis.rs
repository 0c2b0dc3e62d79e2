//! Summaries across many grids: pairwise similarity matrices, the
//! eigenvalue-based reliability coefficient, and a randomization test for
//! comparing two metrics' correlation with a reference rating.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agreement::{agreement, AgreementKind, ConfusionCounts};
use crate::engine::{catsim, CatsimConfig};
use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::pyramid::derive_seed;

/// Symmetric matrix of pairwise similarities with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl PairwiseMatrix {
    /// Validates symmetry (1e-12), unit diagonal and entries in [0, 1].
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * n {
            return Err(Error::Shape(format!(
                "{} values for a {n}×{n} matrix",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 {
                return Err(Error::InvalidInput(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                if (v - values[j * n + i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        Ok(PairwiseMatrix { labels, values })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    /// CSV with a header row of labels and one labelled row per study.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![self.labels[i].clone()];
            row.extend((0..self.n()).map(|j| self.get(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// What fills the pairwise matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Similarity {
    Catsim(CatsimConfig),
    /// One agreement index over all jointly valid cells.
    Agreement(AgreementKind),
}

impl Similarity {
    pub fn compare(&self, x: &LabelGrid, y: &LabelGrid) -> Result<f64> {
        match self {
            Similarity::Catsim(cfg) => Ok(catsim(x, y, cfg)?.value),
            Similarity::Agreement(kind) => {
                x.check_compatible(y)?;
                let pairs = (0..x.len())
                    .filter(|&i| x.is_valid(i) && y.is_valid(i))
                    .map(|i| (x.labels()[i], y.labels()[i]));
                agreement(*kind, &ConfusionCounts::from_pairs(x.k(), pairs))
            }
        }
    }
}

/// Similarity of every pair of grids; the upper triangle runs in parallel.
pub fn pairwise_matrix(
    grids: &[LabelGrid],
    labels: Option<Vec<String>>,
    sim: &Similarity,
) -> Result<PairwiseMatrix> {
    let n = grids.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 grids, got {n}"
        )));
    }
    let labels = labels.unwrap_or_else(|| (1..=n).map(|i| format!("s{i}")).collect());
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} labels for {n} grids",
            labels.len()
        )));
    }
    for (j, g) in grids.iter().enumerate().skip(1) {
        grids[0].check_compatible(g).map_err(|e| Error::Pair {
            i: 0,
            j,
            source: Box::new(e),
        })?;
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| {
            sim.compare(&grids[i], &grids[j]).map_err(|e| Error::Pair {
                i,
                j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for (&(i, j), &v) in pairs.iter().zip(&scores) {
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    PairwiseMatrix::new(labels, values)
}

/// Convergence controls for [`largest_eigenvalue`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            tolerance: 1e-10,
            max_iterations: 1_000_000,
        }
    }
}

/// Largest (algebraic) eigenvalue of a symmetric row-major `n`×`n` matrix.
///
/// Runs power iteration on `A + σI`, with σ the largest absolute row sum, so
/// the spectrum is non-negative and the dominant eigenvalue is the largest
/// one. Stops once the residual `|Av - λv|` is below `tolerance` relative to
/// the spectral scale, which bounds the distance to an eigenvalue.
pub fn largest_eigenvalue(values: &[f64], n: usize, opts: PowerIteration) -> f64 {
    assert_eq!(values.len(), n * n, "matrix must be n×n");
    if n == 1 {
        return values[0];
    }
    let shift = (0..n)
        .map(|i| {
            values[i * n..(i + 1) * n]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    if shift == 0.0 {
        return 0.0;
    }
    let scale = 2.0 * shift;
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + (derive_seed(&[i as u64]) >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..opts.max_iterations {
        for i in 0..n {
            let row = &values[i * n..(i + 1) * n];
            w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + shift * v[i];
        }
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut w);
        normalize(&mut v);
        if residual <= opts.tolerance * scale {
            break;
        }
    }
    lambda - shift
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

/// `(λ_max - 1) / (n - 1)` of a pairwise similarity matrix: 1 when all
/// studies agree perfectly, 0 when they share nothing.
pub fn summarized_coefficient(m: &PairwiseMatrix) -> Result<f64> {
    let n = m.n();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 studies".into()));
    }
    let lambda = largest_eigenvalue(m.values(), n, PowerIteration::default());
    let coef = (lambda - 1.0) / (n as f64 - 1.0);
    if !(-1e-9..=1.0 + 1e-9).contains(&coef) {
        log::warn!("largest eigenvalue {lambda} gives coefficient {coef}; matrix is not a valid similarity matrix");
    }
    Ok(coef.clamp(0.0, 1.0))
}

/// Inputs of the correlation-difference randomization test.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrTestInput {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub mos: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl CorrTestInput {
    pub const DEFAULT_ITERATIONS: usize = 100_000;

    pub fn new(m1: Vec<f64>, m2: Vec<f64>, mos: Vec<f64>) -> Self {
        CorrTestInput {
            m1,
            m2,
            mos,
            iterations: Self::DEFAULT_ITERATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CorrTestResult {
    /// `corr(mos, m1) - corr(mos, m2)` on the standardized data.
    pub observed: f64,
    pub p_value: f64,
    pub iterations: usize,
    /// Randomized differences strictly above the observed one.
    pub greater: usize,
    /// Randomized differences equal to the observed one (within 1e-12).
    pub ties: usize,
}

fn standardize(v: &[f64], name: &'static str) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateVariance(name));
    }
    let sd = var.sqrt();
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Pearson correlation; 0 if either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// One-sided randomization test that `m1` correlates with `mos` more than
/// `m2` does.
///
/// Each iteration swaps every standardized `(m1_i, m2_i)` pair with
/// probability 1/2. The p-value is the share of randomized differences at
/// or above the observed difference, counting exact ties as one half.
/// Iteration `i` draws from a generator keyed on `(seed, i)`, so results do
/// not depend on the thread count.
pub fn corr_diff_randomization_test(input: &CorrTestInput) -> Result<CorrTestResult> {
    let n = input.mos.len();
    if input.m1.len() != n || input.m2.len() != n {
        return Err(Error::InvalidInput(format!(
            "lengths differ: m1 {}, m2 {}, mos {n}",
            input.m1.len(),
            input.m2.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    if input.iterations == 0 {
        return Err(Error::InvalidInput("iterations must be >= 1".into()));
    }
    let m1 = standardize(&input.m1, "m1")?;
    let m2 = standardize(&input.m2, "m2")?;
    let mos = standardize(&input.mos, "mos")?;
    let observed = pearson(&mos, &m1) - pearson(&mos, &m2);
    let tie_tol = 1e-12;

    let (greater, ties) = (0..input.iterations)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(a, b), it| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[input.seed, it as u64]));
                for i in 0..n {
                    if rng.gen_bool(0.5) {
                        a[i] = m2[i];
                        b[i] = m1[i];
                    } else {
                        a[i] = m1[i];
                        b[i] = m2[i];
                    }
                }
                let d = pearson(&mos, a) - pearson(&mos, b);
                if (d - observed).abs() <= tie_tol {
                    (0usize, 1usize)
                } else if d > observed {
                    (1, 0)
                } else {
                    (0, 0)
                }
            },
        )
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));

    Ok(CorrTestResult {
        observed,
        p_value: (greater as f64 + 0.5 * ties as f64) / input.iterations as f64,
        iterations: input.iterations,
        greater,
        ties,
    })
}
