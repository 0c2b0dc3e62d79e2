//! Mode downsampling of label grids and multi-level pyramids.
//!
//! Each output cell is the most frequent valid label of its 2×2 (2×2×2)
//! source block. No low-pass filtering is applied. Odd trailing rows,
//! columns and planes are dropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelGrid;

/// How to choose among several modal labels of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TiePolicy {
    /// Uniform choice driven by a generator keyed on (seed, level, block).
    SeededRandom {
        seed: u64,
    },
    LowestLabel,
}

impl Default for TiePolicy {
    fn default() -> Self {
        TiePolicy::SeededRandom { seed: 0 }
    }
}

impl TiePolicy {
    /// Same policy with its seed replaced; no-op for `LowestLabel`.
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            TiePolicy::SeededRandom { .. } => TiePolicy::SeededRandom { seed },
            TiePolicy::LowestLabel => TiePolicy::LowestLabel,
        }
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6361_7473_696d_u64, |h, &p| mix64(h ^ mix64(p)))
}

/// Halve every axis by taking the mode of each 2×2 (2×2×2) block.
///
/// `level` is the pyramid level of the source grid and only enters the
/// tie-breaking seed. An output cell is masked iff its whole source block is.
pub fn downsample(g: &LabelGrid, policy: TiePolicy, level: usize) -> Result<LabelGrid> {
    if g.dims().iter().any(|&d| d < 2) {
        return Err(Error::TooSmall(g.dims().to_vec()));
    }
    let src = g.shape3();
    let is3d = g.ndim() == 3;
    let out_dims: Vec<usize> = g.dims().iter().map(|&d| d / 2).collect();
    let out = crate::grid::to_shape3(&out_dims);
    let bp = if is3d { 2 } else { 1 };
    let row_len = out[2];
    let plane_rows = out[1];

    let mut cells: Vec<Option<u32>> = vec![None; out.iter().product()];
    cells
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row_idx, row)| {
            let (op, or) = (row_idx / plane_rows, row_idx % plane_rows);
            let mut block: [(u32, u8); 8] = [(0, 0); 8];
            for (oc, cell) in row.iter_mut().enumerate() {
                let mut distinct = 0usize;
                for dp in 0..bp {
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let i = ((op * bp + dp) * src[1] + or * 2 + dr) * src[2] + oc * 2 + dc;
                            if !g.is_valid(i) {
                                continue;
                            }
                            let l = g.labels()[i];
                            match block[..distinct].iter_mut().find(|(b, _)| *b == l) {
                                Some(entry) => entry.1 += 1,
                                None => {
                                    block[distinct] = (l, 1);
                                    distinct += 1;
                                }
                            }
                        }
                    }
                }
                if distinct == 0 {
                    continue;
                }
                let seen = &mut block[..distinct];
                seen.sort_unstable_by_key(|&(l, _)| l);
                let top = seen.iter().map(|&(_, c)| c).max().unwrap_or(0);
                let mut modes = seen.iter().filter(|&&(_, c)| c == top).map(|&(l, _)| l);
                *cell = Some(match policy {
                    TiePolicy::LowestLabel => modes.next().unwrap(),
                    TiePolicy::SeededRandom { seed } => {
                        let ties = seen.iter().filter(|&&(_, c)| c == top).count();
                        if ties == 1 {
                            modes.next().unwrap()
                        } else {
                            let block_index = (row_idx * row_len + oc) as u64;
                            let key = derive_seed(&[seed, level as u64, block_index]);
                            let pick = ChaCha8Rng::seed_from_u64(key).gen_range(0..ties);
                            modes.nth(pick).unwrap()
                        }
                    }
                });
            }
        });

    let labels = cells.iter().map(|c| c.unwrap_or(0)).collect();
    if cells.iter().all(Option::is_some) {
        LabelGrid::new(out_dims, labels, g.k())
    } else {
        let mask = cells.iter().map(Option::is_some).collect();
        LabelGrid::with_mask(out_dims, labels, mask, g.k())
    }
}

/// Grids of a mode pyramid, finest first.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<LabelGrid>,
    /// Levels that were requested.
    pub requested: usize,
}

impl Pyramid {
    /// Whether construction stopped before the requested depth.
    pub fn exhausted(&self) -> bool {
        self.levels.len() < self.requested
    }
}

/// Repeatedly downsample `g` to at most `levels` grids (the first is `g`).
///
/// Stops early, with a logged warning, once the next grid would be smaller
/// than 2 cells on some axis.
pub fn build_pyramid(g: &LabelGrid, levels: usize, policy: TiePolicy) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidConfig(
            "pyramid needs at least one level".into(),
        ));
    }
    let mut out = vec![g.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.dims().iter().any(|&d| d / 2 < 2) {
            log::warn!(
                "pyramid stopped at {} of {levels} levels: {:?} cannot be halved further",
                out.len(),
                last.dims()
            );
            break;
        }
        let next = downsample(last, policy, out.len())?;
        out.push(next);
    }
    Ok(Pyramid {
        levels: out,
        requested: levels,
    })
}
