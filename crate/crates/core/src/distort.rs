//! Distortion generators used to probe the index: translation of a central
//! region, salt-and-pepper noise (optionally matched to another distortion's
//! error rate), binary dilation/erosion of one class, and random activation.
//!
//! Every generator keeps the extents, class count and mask of its input, and
//! never changes masked cells. Stochastic generators are driven by a
//! ChaCha8 generator seeded from the caller's seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{to_shape3, LabelGrid};
use crate::pyramid::derive_seed;

/// Half-open box `start..end` per axis, in grid axis order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub start: Vec<usize>,
    pub end: Vec<usize>,
}

impl Region {
    pub fn new(start: Vec<usize>, end: Vec<usize>) -> Self {
        Region { start, end }
    }

    /// The grid minus `margin` cells on every side of every axis.
    pub fn central(dims: &[usize], margin: usize) -> Result<Self> {
        if dims.iter().any(|&d| d <= 2 * margin) {
            return Err(Error::OutOfBounds(format!(
                "margin {margin} leaves no central region in {dims:?}"
            )));
        }
        Ok(Region {
            start: vec![margin; dims.len()],
            end: dims.iter().map(|&d| d - margin).collect(),
        })
    }

    fn contains(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .zip(self.start.iter().zip(&self.end))
            .all(|(&c, (&s, &e))| c >= s && c < e)
    }

    fn on_border(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .zip(self.start.iter().zip(&self.end))
            .any(|(&c, (&s, &e))| c == s || c + 1 == e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistortionSpec {
    ShiftCentral { offsets: Vec<isize>, region: Region },
    SaltPepper { rate: f64 },
    SaltPepperMatched { reference: LabelGrid },
    Dilate { radius: usize, class: u32 },
    Erode { radius: usize, class: u32 },
    ActivateNoise { fraction: f64, class: u32 },
    Compose(Vec<DistortionSpec>),
}

impl DistortionSpec {
    pub fn apply(&self, g: &LabelGrid, seed: u64) -> Result<LabelGrid> {
        match self {
            DistortionSpec::ShiftCentral { offsets, region } => shift_central(g, offsets, region),
            DistortionSpec::SaltPepper { rate } => salt_pepper(g, *rate, seed),
            DistortionSpec::SaltPepperMatched { reference } => {
                salt_pepper_matched(g, reference, seed)
            }
            DistortionSpec::Dilate { radius, class } => dilate(g, *class, *radius),
            DistortionSpec::Erode { radius, class } => erode(g, *class, *radius),
            DistortionSpec::ActivateNoise { fraction, class } => {
                activate_noise(g, *class, *fraction, seed)
            }
            DistortionSpec::Compose(steps) => {
                let mut out = g.clone();
                for (i, step) in steps.iter().enumerate() {
                    out = step.apply(&out, derive_seed(&[seed, i as u64]))?;
                }
                Ok(out)
            }
        }
    }
}

/// Fraction of jointly valid cells whose labels differ.
pub fn disagreement_rate(a: &LabelGrid, b: &LabelGrid) -> Result<f64> {
    a.check_compatible(b)?;
    let (mut n, mut diff) = (0usize, 0usize);
    for i in 0..a.len() {
        if a.is_valid(i) && b.is_valid(i) {
            n += 1;
            diff += (a.labels()[i] != b.labels()[i]) as usize;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(diff as f64 / n as f64)
}

/// Translate the labels inside `region` by `offsets`.
///
/// Cells of the region left uncovered by the moved content take the majority
/// valid label of the region's border (lowest label on ties). A masked
/// source cell does not overwrite its destination.
pub fn shift_central(g: &LabelGrid, offsets: &[isize], region: &Region) -> Result<LabelGrid> {
    let dims = g.dims();
    if offsets.len() != dims.len()
        || region.start.len() != dims.len()
        || region.end.len() != dims.len()
    {
        return Err(Error::DimensionMismatch(format!(
            "offsets {offsets:?} / region {region:?} do not match rank {}",
            dims.len()
        )));
    }
    for a in 0..dims.len() {
        let (s, e) = (region.start[a], region.end[a]);
        let lo = s as isize + offsets[a];
        let hi = e as isize + offsets[a];
        if s >= e || e > dims[a] || lo < 0 || hi > dims[a] as isize {
            return Err(Error::OutOfBounds(format!(
                "region {s}..{e} shifted by {} leaves 0..{} on axis {a}",
                offsets[a], dims[a]
            )));
        }
    }

    let mut border = vec![0usize; g.k() as usize];
    for i in 0..g.len() {
        let c = g.coords_of(i);
        if g.is_valid(i) && region.contains(&c) && region.on_border(&c) {
            border[g.labels()[i] as usize] += 1;
        }
    }
    let fill = majority(&border).unwrap_or(0);

    let mut out = g.labels().to_vec();
    for (i, cell) in out.iter_mut().enumerate() {
        if region.contains(&g.coords_of(i)) {
            *cell = fill;
        }
    }
    for i in 0..g.len() {
        let c = g.coords_of(i);
        if !region.contains(&c) || !g.is_valid(i) {
            continue;
        }
        let dest: Vec<usize> = c
            .iter()
            .zip(offsets)
            .map(|(&v, &o)| (v as isize + o) as usize)
            .collect();
        out[g.index_of(&dest)] = g.labels()[i];
    }
    g.with_labels(out)
}

fn majority(counts: &[usize]) -> Option<u32> {
    let top = *counts.iter().max()?;
    (top > 0).then(|| counts.iter().position(|&c| c == top).unwrap() as u32)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidDistortion(format!(
            "{name} {v} not in [0, 1]"
        )));
    }
    Ok(())
}

fn check_class(g: &LabelGrid, class: u32) -> Result<()> {
    if class >= g.k() {
        return Err(Error::InvalidForeground {
            fg: class,
            k: g.k(),
        });
    }
    Ok(())
}

fn valid_indices(g: &LabelGrid) -> Vec<usize> {
    (0..g.len()).filter(|&i| g.is_valid(i)).collect()
}

/// Flip exactly `count` distinct valid cells to a uniformly chosen other label.
fn flip_cells(g: &LabelGrid, count: usize, seed: u64) -> Result<LabelGrid> {
    let valid = valid_indices(g);
    let count = count.min(valid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = g.labels().to_vec();
    let k = g.k();
    for pick in sample(&mut rng, valid.len(), count).into_vec() {
        let i = valid[pick];
        let r = rng.gen_range(0..k - 1);
        out[i] = if r >= out[i] { r + 1 } else { r };
    }
    g.with_labels(out)
}

/// Salt-and-pepper noise flipping `round(rate * valid cells)` cells.
pub fn salt_pepper(g: &LabelGrid, rate: f64, seed: u64) -> Result<LabelGrid> {
    check_unit("rate", rate)?;
    let count = (rate * g.valid_count() as f64).round() as usize;
    flip_cells(g, count, seed)
}

/// Salt-and-pepper noise flipping as many cells of `g` as differ between
/// `g` and `reference`.
pub fn salt_pepper_matched(g: &LabelGrid, reference: &LabelGrid, seed: u64) -> Result<LabelGrid> {
    g.check_compatible(reference)?;
    let differing = (0..g.len())
        .filter(|&i| {
            g.is_valid(i) && reference.is_valid(i) && g.labels()[i] != reference.labels()[i]
        })
        .count();
    flip_cells(g, differing, seed)
}

/// Flat indices of the orthogonal neighbours of cell `i`.
fn neighbours(shape: [usize; 3], i: usize, out: &mut Vec<usize>) {
    out.clear();
    let c = i % shape[2];
    let r = (i / shape[2]) % shape[1];
    let p = i / (shape[2] * shape[1]);
    let plane = shape[1] * shape[2];
    if c > 0 {
        out.push(i - 1);
    }
    if c + 1 < shape[2] {
        out.push(i + 1);
    }
    if r > 0 {
        out.push(i - shape[2]);
    }
    if r + 1 < shape[1] {
        out.push(i + shape[2]);
    }
    if p > 0 {
        out.push(i - plane);
    }
    if p + 1 < shape[0] {
        out.push(i + plane);
    }
}

/// Grow `class` by `radius` steps: every valid cell orthogonally adjacent to
/// a valid `class` cell joins the class.
pub fn dilate(g: &LabelGrid, class: u32, radius: usize) -> Result<LabelGrid> {
    check_class(g, class)?;
    if radius == 0 {
        return Err(Error::InvalidDistortion("radius must be >= 1".into()));
    }
    let shape = to_shape3(g.dims());
    let mut cur = g.labels().to_vec();
    let mut nb = Vec::with_capacity(6);
    for _ in 0..radius {
        let prev = cur.clone();
        for i in 0..prev.len() {
            if !g.is_valid(i) || prev[i] == class {
                continue;
            }
            neighbours(shape, i, &mut nb);
            if nb.iter().any(|&j| g.is_valid(j) && prev[j] == class) {
                cur[i] = class;
            }
        }
    }
    g.with_labels(cur)
}

/// Shrink `class` by `radius` steps: every valid `class` cell orthogonally
/// adjacent to a valid cell of another class takes the majority label of
/// those neighbours (lowest label on ties).
pub fn erode(g: &LabelGrid, class: u32, radius: usize) -> Result<LabelGrid> {
    check_class(g, class)?;
    if radius == 0 {
        return Err(Error::InvalidDistortion("radius must be >= 1".into()));
    }
    let shape = to_shape3(g.dims());
    let mut cur = g.labels().to_vec();
    let mut nb = Vec::with_capacity(6);
    let mut counts = vec![0usize; g.k() as usize];
    for _ in 0..radius {
        let prev = cur.clone();
        for i in 0..prev.len() {
            if !g.is_valid(i) || prev[i] != class {
                continue;
            }
            neighbours(shape, i, &mut nb);
            counts.iter_mut().for_each(|c| *c = 0);
            for &j in &nb {
                if g.is_valid(j) && prev[j] != class {
                    counts[prev[j] as usize] += 1;
                }
            }
            if let Some(l) = majority(&counts) {
                cur[i] = l;
            }
        }
    }
    g.with_labels(cur)
}

/// Set `round(fraction * eligible)` uniformly chosen valid non-`class` cells
/// to `class`.
pub fn activate_noise(g: &LabelGrid, class: u32, fraction: f64, seed: u64) -> Result<LabelGrid> {
    check_class(g, class)?;
    check_unit("fraction", fraction)?;
    let eligible: Vec<usize> = (0..g.len())
        .filter(|&i| g.is_valid(i) && g.labels()[i] != class)
        .collect();
    let count = (fraction * eligible.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = g.labels().to_vec();
    for pick in sample(&mut rng, eligible.len(), count).into_vec() {
        out[eligible[pick]] = class;
    }
    g.with_labels(out)
}
