//! Synthetic scenes and random grids shared by the integration tests.
#![allow(dead_code)]

use catsim::LabelGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. labels; with `mask_rate`, each cell is masked with that probability.
pub fn random_grid(
    rng: &mut ChaCha8Rng,
    dims: Vec<usize>,
    k: u32,
    mask_rate: Option<f64>,
) -> LabelGrid {
    let n: usize = dims.iter().product();
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    match mask_rate {
        Some(p) => {
            let mask = (0..n).map(|_| !rng.gen_bool(p)).collect();
            LabelGrid::with_mask(dims, labels, mask, k).unwrap()
        }
        None => LabelGrid::new(dims, labels, k).unwrap(),
    }
}

/// Piecewise-constant labels: random rectangles and ellipses of classes
/// `1..k` on a class-0 background, kept `margin` cells away from the edge.
pub fn structured_scene(seed: u64, rows: usize, cols: usize, k: u32, margin: usize) -> LabelGrid {
    let mut rng = rng(seed);
    let mut labels = vec![0u32; rows * cols];
    let inner = margin + 6;
    for _ in 0..18 {
        let class = rng.gen_range(1..k);
        let h = rng.gen_range(8..50usize);
        let w = rng.gen_range(8..60usize);
        let r0 = rng.gen_range(inner..rows - inner - h);
        let c0 = rng.gen_range(inner..cols - inner - w);
        let ellipse = rng.gen_bool(0.5);
        let (cr, cc) = (r0 as f64 + h as f64 / 2.0, c0 as f64 + w as f64 / 2.0);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                let inside = !ellipse || {
                    let dr = (r as f64 + 0.5 - cr) / (h as f64 / 2.0);
                    let dc = (c as f64 + 0.5 - cc) / (w as f64 / 2.0);
                    dr * dr + dc * dc <= 1.0
                };
                if inside {
                    labels[r * cols + c] = class;
                }
            }
        }
    }
    LabelGrid::new(vec![rows, cols], labels, k).unwrap()
}

/// Piecewise-constant partition of the interior into Voronoi cells with
/// roughly equal class totals, framed by `margin + 6` cells of class 0.
pub fn balanced_scene(seed: u64, rows: usize, cols: usize, k: u32, margin: usize) -> LabelGrid {
    use rand::seq::SliceRandom;
    let mut rng = rng(seed);
    let inner = margin + 6;
    let sites: Vec<(f64, f64)> = (0..28)
        .map(|_| {
            (
                rng.gen_range(inner as f64..(rows - inner) as f64),
                rng.gen_range(inner as f64..(cols - inner) as f64),
            )
        })
        .collect();
    let mut owner = vec![usize::MAX; rows * cols];
    let mut area = vec![0usize; sites.len()];
    for r in inner..rows - inner {
        for c in inner..cols - inner {
            let nearest = (0..sites.len())
                .min_by(|&a, &b| {
                    let d = |s: (f64, f64)| (s.0 - r as f64).powi(2) + (s.1 - c as f64).powi(2);
                    d(sites[a]).total_cmp(&d(sites[b]))
                })
                .unwrap();
            owner[r * cols + c] = nearest;
            area[nearest] += 1;
        }
    }
    // largest cells first, each to the class with the smallest running total
    let mut totals = vec![0usize; k as usize];
    totals[0] = rows * cols - area.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| std::cmp::Reverse(area[i]));
    let mut class = vec![0u32; sites.len()];
    for i in order {
        let best = (0..k as usize).min_by_key(|&c| totals[c]).unwrap();
        class[i] = best as u32;
        totals[best] += area[i];
    }
    let labels = owner
        .iter()
        .map(|&o| if o == usize::MAX { 0 } else { class[o] })
        .collect();
    LabelGrid::new(vec![rows, cols], labels, k).unwrap()
}

/// Large smooth two-class scene: a few big discs of class 1.
pub fn smooth_two_class(seed: u64, side: usize) -> LabelGrid {
    let mut rng = rng(seed);
    let discs: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.15..0.85) * side as f64,
                rng.gen_range(0.15..0.85) * side as f64,
                rng.gen_range(0.08..0.2) * side as f64,
            )
        })
        .collect();
    let labels = (0..side * side)
        .map(|i| {
            let (r, c) = ((i / side) as f64, (i % side) as f64);
            discs
                .iter()
                .any(|&(dr, dc, rad)| (r - dr).powi(2) + (c - dc).powi(2) <= rad * rad)
                as u32
        })
        .collect();
    LabelGrid::new(vec![side, side], labels, 2).unwrap()
}

/// `side`×`side` elliptical in-mask region with small activated discs
/// covering roughly `fraction` of the in-mask cells.
pub fn activation_phantom(seed: u64, side: usize, fraction: f64) -> LabelGrid {
    let mut rng = rng(seed);
    let s = side as f64;
    let centre = (s - 1.0) / 2.0;
    let mask: Vec<bool> = (0..side * side)
        .map(|i| {
            let r = (i / side) as f64 - centre;
            let c = (i % side) as f64 - centre;
            (r / (0.45 * s)).powi(2) + (c / (0.375 * s)).powi(2) <= 1.0
        })
        .collect();
    let in_mask = mask.iter().filter(|&&v| v).count();
    let mut labels = vec![0u32; side * side];
    let mut active = 0usize;
    while (active as f64) < fraction * in_mask as f64 {
        let (cr, cc) = (
            rng.gen_range(0.16 * s..0.84 * s),
            rng.gen_range(0.22 * s..0.78 * s),
        );
        let rad: f64 = rng.gen_range(0.024 * s..0.047 * s);
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                if mask[i]
                    && labels[i] == 0
                    && (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2) <= rad * rad
                {
                    labels[i] = 1;
                    active += 1;
                }
            }
        }
    }
    LabelGrid::with_mask(vec![side, side], labels, mask, 2).unwrap()
}

/// Randomly permute the valid cells of a grid (keeps class proportions).
pub fn shuffle_valid(g: &LabelGrid, rng: &mut ChaCha8Rng) -> LabelGrid {
    use rand::seq::SliceRandom;
    let idx: Vec<usize> = (0..g.len()).filter(|&i| g.is_valid(i)).collect();
    let mut vals: Vec<u32> = idx.iter().map(|&i| g.labels()[i]).collect();
    vals.shuffle(rng);
    let mut labels = g.labels().to_vec();
    for (&i, v) in idx.iter().zip(vals) {
        labels[i] = v;
    }
    g.with_labels(labels).unwrap()
}

/// Apply a label permutation to every valid cell.
pub fn relabel(g: &LabelGrid, perm: &[u32]) -> LabelGrid {
    let labels = g.labels().iter().map(|&l| perm[l as usize]).collect();
    g.with_labels(labels).unwrap()
}
