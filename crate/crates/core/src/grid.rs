//! Categorical label grids, validity masks and aligned window iteration.
//!
//! A [`LabelGrid`] is a dense 2D (rows × cols) or 3D (planes × rows × cols)
//! array of class ids in `0..k`, stored row-major. An optional mask marks
//! which cells were observed. Cells that are masked in either of two grids
//! are dropped from every joint statistic (pairwise deletion).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense categorical array with optional validity mask.
///
/// Masked cells always carry label 0 and a mask with every cell valid is
/// stored as no mask, so two grids with the same observable content
/// compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    dims: Vec<usize>,
    labels: Vec<u32>,
    mask: Option<Vec<bool>>,
    k: u32,
}

impl LabelGrid {
    pub fn new(dims: Vec<usize>, labels: Vec<u32>, k: u32) -> Result<Self> {
        Self::build(dims, labels, None, k)
    }

    pub fn with_mask(dims: Vec<usize>, labels: Vec<u32>, mask: Vec<bool>, k: u32) -> Result<Self> {
        Self::build(dims, labels, Some(mask), k)
    }

    /// Grid filled with a single label.
    pub fn constant(dims: Vec<usize>, label: u32, k: u32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![label; n], k)
    }

    fn build(
        dims: Vec<usize>,
        mut labels: Vec<u32>,
        mask: Option<Vec<bool>>,
        k: u32,
    ) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::InvalidGrid(format!(
                "expected 2 or 3 axes, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("zero extent in {dims:?}")));
        }
        if k < 2 {
            return Err(Error::InvalidGrid(format!(
                "class count must be >= 2, got {k}"
            )));
        }
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{} labels for extents {dims:?} ({n} cells)",
                labels.len()
            )));
        }
        let mask = match mask {
            Some(m) => {
                if m.len() != n {
                    return Err(Error::InvalidGrid(format!(
                        "mask has {} cells, grid has {n}",
                        m.len()
                    )));
                }
                for (l, &v) in labels.iter_mut().zip(&m) {
                    if !v {
                        *l = 0;
                    }
                }
                if m.iter().all(|&v| v) {
                    None
                } else {
                    Some(m)
                }
            }
            None => None,
        };
        let valid = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|&(i, &l)| valid(i) && l >= k)
        {
            return Err(Error::InvalidGrid(format!(
                "label {l} at cell {i} is not below k = {k}"
            )));
        }
        Ok(LabelGrid {
            dims,
            labels,
            mask,
            k,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[index])
    }

    pub fn valid_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.labels.len(), |m| m.iter().filter(|&&v| v).count())
    }

    /// Extents padded to three axes (a 2D grid has a leading plane axis of 1).
    pub fn shape3(&self) -> [usize; 3] {
        to_shape3(&self.dims)
    }

    /// Flat index of a coordinate given in the grid's own axis order.
    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &d)| acc * d + c)
    }

    /// Coordinates (in the grid's axis order) of a flat index.
    pub fn coords_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (o, &d) in out.iter_mut().zip(&self.dims).rev() {
            *o = index % d;
            index /= d;
        }
        out
    }

    pub fn get(&self, coords: &[usize]) -> Option<u32> {
        let i = self.index_of(coords);
        self.is_valid(i).then(|| self.labels[i])
    }

    /// New grid with the same extents, mask and class count.
    pub fn with_labels(&self, labels: Vec<u32>) -> Result<Self> {
        Self::build(self.dims.clone(), labels, self.mask.clone(), self.k)
    }

    /// Same content with a larger declared class count.
    pub fn with_k(&self, k: u32) -> Result<Self> {
        Self::build(self.dims.clone(), self.labels.clone(), self.mask.clone(), k)
    }

    /// Cell-wise intersection of two validity masks.
    pub fn joint_mask(&self, other: &LabelGrid) -> Option<Vec<bool>> {
        match (&self.mask, &other.mask) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&p, &q)| p && q).collect()),
        }
    }

    /// Extract the patch at `origin` with the given extents (grid axis order).
    pub fn patch(&self, origin: &[usize], extents: &[usize]) -> Result<Patch> {
        if origin.len() != self.ndim() || extents.len() != self.ndim() {
            return Err(Error::DimensionMismatch(format!(
                "patch of rank {} requested from rank-{} grid",
                extents.len(),
                self.ndim()
            )));
        }
        if origin
            .iter()
            .zip(extents)
            .zip(&self.dims)
            .any(|((&o, &e), &d)| e == 0 || o + e > d)
        {
            return Err(Error::OutOfBounds(format!(
                "patch {origin:?}+{extents:?} outside {:?}",
                self.dims
            )));
        }
        let o3 = to_origin3(origin);
        let e3 = to_shape3(extents);
        let mut labels = Vec::with_capacity(e3.iter().product());
        let mut valid = Vec::with_capacity(labels.capacity());
        for_each_cell(self.shape3(), o3, e3, |i| {
            labels.push(self.labels[i]);
            valid.push(self.is_valid(i));
        });
        Ok(Patch {
            extents: extents.to_vec(),
            labels,
            valid,
        })
    }

    /// SHA-256 over extents, class count, labels and mask.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dims.len() as u64).to_le_bytes());
        for &d in &self.dims {
            h.update((d as u64).to_le_bytes());
        }
        h.update(self.k.to_le_bytes());
        for &l in &self.labels {
            h.update(l.to_le_bytes());
        }
        match &self.mask {
            None => h.update([0u8]),
            Some(m) => {
                h.update([1u8]);
                let bytes: Vec<u8> = m.iter().map(|&v| v as u8).collect();
                h.update(&bytes);
            }
        }
        h.finalize().into()
    }

    pub(crate) fn check_compatible(&self, other: &LabelGrid) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "extents {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if self.k != other.k {
            return Err(Error::DimensionMismatch(format!(
                "class counts {} vs {}",
                self.k, other.k
            )));
        }
        Ok(())
    }
}

/// Labels and validity of one window of a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub extents: Vec<usize>,
    pub labels: Vec<u32>,
    pub valid: Vec<bool>,
}

impl Patch {
    /// Fully valid patch from raw labels (flat, row-major).
    pub fn from_labels(labels: Vec<u32>) -> Self {
        let n = labels.len();
        Patch {
            extents: vec![1, n],
            valid: vec![true; n],
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Labels of the valid cells, in order.
    pub fn valid_labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.labels
            .iter()
            .zip(&self.valid)
            .filter_map(|(&l, &v)| v.then_some(l))
    }
}

/// Window extents and stride per axis, in the grid's axis order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub extents: Vec<usize>,
    pub stride: Vec<usize>,
}

impl WindowSpec {
    pub fn new(extents: Vec<usize>, stride: Vec<usize>) -> Result<Self> {
        if extents.len() != stride.len() || !(2..=3).contains(&extents.len()) {
            return Err(Error::InvalidWindow(format!(
                "extents {extents:?} and stride {stride:?} must both have 2 or 3 axes"
            )));
        }
        if extents.iter().chain(&stride).any(|&v| v == 0) {
            return Err(Error::InvalidWindow(format!(
                "extents {extents:?} and stride {stride:?} must be >= 1"
            )));
        }
        Ok(WindowSpec { extents, stride })
    }

    /// Hypercube window of side `n` with unit stride.
    pub fn cube(ndim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; ndim], vec![1; ndim])
    }

    /// 11×11 for images, 5×5×5 for volumes.
    pub fn default_for(ndim: usize) -> Result<Self> {
        match ndim {
            2 => Self::cube(2, 11),
            3 => Self::cube(3, 5),
            _ => Err(Error::InvalidWindow(format!(
                "no default window for rank {ndim}"
            ))),
        }
    }

    pub fn volume(&self) -> usize {
        self.extents.iter().product()
    }

    /// Shrink every extent to at most the grid extent on that axis.
    pub fn clamped_to(&self, dims: &[usize]) -> Self {
        WindowSpec {
            extents: self
                .extents
                .iter()
                .zip(dims)
                .map(|(&e, &d)| e.min(d))
                .collect(),
            stride: self.stride.clone(),
        }
    }

    pub fn fits(&self, dims: &[usize]) -> bool {
        self.extents.len() == dims.len() && self.extents.iter().zip(dims).all(|(&e, &d)| e <= d)
    }

    /// Number of window positions along each axis.
    pub fn positions_per_axis(&self, dims: &[usize]) -> Vec<usize> {
        self.extents
            .iter()
            .zip(&self.stride)
            .zip(dims)
            .map(|((&e, &s), &d)| if e > d { 0 } else { (d - e) / s + 1 })
            .collect()
    }

    pub fn position_count(&self, dims: &[usize]) -> usize {
        self.positions_per_axis(dims).iter().product()
    }

    pub(crate) fn check_against(&self, dims: &[usize]) -> Result<()> {
        if self.extents.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "window rank {} vs grid rank {}",
                self.extents.len(),
                dims.len()
            )));
        }
        if !self.fits(dims) {
            return Err(Error::WindowTooLarge {
                window: self.extents.clone(),
                grid: dims.to_vec(),
            });
        }
        Ok(())
    }
}

/// One aligned pair of windows. Both patches carry the joint validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPair {
    pub origin: Vec<usize>,
    pub x: Patch,
    pub y: Patch,
}

/// Every fully contained window position of two aligned grids, in row-major
/// order of the window origin.
pub fn aligned_window_pairs<'a>(
    x: &'a LabelGrid,
    y: &'a LabelGrid,
    window: &'a WindowSpec,
) -> Result<impl Iterator<Item = WindowPair> + 'a> {
    x.check_compatible(y)?;
    window.check_against(x.dims())?;
    let ndim = x.ndim();
    Ok(window_origins(x.dims(), window).map(move |origin| {
        let mut px = x.patch(&origin, &window.extents).expect("window fits grid");
        let mut py = y.patch(&origin, &window.extents).expect("window fits grid");
        for (a, b) in px.valid.iter_mut().zip(py.valid.iter_mut()) {
            let both = *a && *b;
            *a = both;
            *b = both;
        }
        debug_assert_eq!(origin.len(), ndim);
        WindowPair {
            origin,
            x: px,
            y: py,
        }
    }))
}

/// Number of positions valid in both patches.
pub fn joint_valid_count(px: &Patch, py: &Patch) -> usize {
    px.valid
        .iter()
        .zip(&py.valid)
        .filter(|(&a, &b)| a && b)
        .count()
}

/// Window origins in row-major order (grid axis order), stepping by stride.
pub fn window_origins(dims: &[usize], window: &WindowSpec) -> impl Iterator<Item = Vec<usize>> {
    let counts = window.positions_per_axis(dims);
    let stride = window.stride.clone();
    let total: usize = counts.iter().product();
    (0..total).map(move |mut flat| {
        let mut origin = vec![0; counts.len()];
        for ((o, &c), &s) in origin.iter_mut().zip(&counts).zip(&stride).rev() {
            *o = (flat % c) * s;
            flat /= c;
        }
        origin
    })
}

pub(crate) fn to_shape3(dims: &[usize]) -> [usize; 3] {
    match dims {
        [r, c] => [1, *r, *c],
        [p, r, c] => [*p, *r, *c],
        _ => panic!("grid rank must be 2 or 3"),
    }
}

pub(crate) fn to_origin3(origin: &[usize]) -> [usize; 3] {
    match origin {
        [r, c] => [0, *r, *c],
        [p, r, c] => [*p, *r, *c],
        _ => panic!("grid rank must be 2 or 3"),
    }
}

/// Visit the flat indices of a box in row-major order.
#[inline]
pub(crate) fn for_each_cell(
    shape: [usize; 3],
    origin: [usize; 3],
    extents: [usize; 3],
    mut f: impl FnMut(usize),
) {
    for p in origin[0]..origin[0] + extents[0] {
        for r in origin[1]..origin[1] + extents[1] {
            let row = (p * shape[1] + r) * shape[2];
            for c in origin[2]..origin[2] + extents[2] {
                f(row + c);
            }
        }
    }
}
