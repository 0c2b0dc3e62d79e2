//! The multi-scale categorical similarity index.
//!
//! At every pyramid level the contrast and agreement terms are averaged over
//! all usable window positions; the luminance term is averaged at a single
//! level. The per-level means are combined as a weighted geometric mean.
//!
//! The fast path keeps one k×k confusion table per row of windows and slides
//! it along the last axis, touching only the columns that enter and leave.
//! [`catsim_naive_oracle`] rebuilds every window from scratch and must agree
//! with [`catsim`] bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agreement::{agreement, agreement_raw, confusion, AgreementKind, ConfusionCounts};
use crate::error::{Error, Result};
use crate::grid::{aligned_window_pairs, to_shape3, LabelGrid, WindowSpec};
use crate::patchstats::{contrast, luminance, summarize, PatchSummary, StabilityConstants};
use crate::pyramid::{build_pyramid, derive_seed, Pyramid, TiePolicy};

/// Window geometry, possibly depending on the grid rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    /// 11×11 for images, 5×5×5 for volumes.
    Default,
    /// One window covering the whole grid at every level.
    Whole,
    Spec(WindowSpec),
}

impl WindowChoice {
    /// Concrete window for a grid of the given extents.
    pub fn resolve(&self, dims: &[usize], clamp: bool) -> Result<WindowSpec> {
        let spec = match self {
            WindowChoice::Default => WindowSpec::default_for(dims.len())?,
            WindowChoice::Whole => return WindowSpec::new(dims.to_vec(), vec![1; dims.len()]),
            WindowChoice::Spec(w) => w.clone(),
        };
        if spec.extents.len() != dims.len() {
            return Err(Error::InvalidWindow(format!(
                "window {:?} does not match grid rank {}",
                spec.extents,
                dims.len()
            )));
        }
        if clamp {
            Ok(spec.clamped_to(dims))
        } else {
            spec.check_against(dims)?;
            Ok(spec)
        }
    }
}

/// Level at which the luminance term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LuminanceLevel {
    Base,
    Coarsest,
}

/// Where kappa / adjusted Rand are clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    PerWindow,
    AfterAveraging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatsimConfig {
    pub levels: usize,
    pub window: WindowChoice,
    /// One weight per level, on the simplex. Used for both the contrast and
    /// the agreement exponents.
    pub weights: Vec<f64>,
    /// Exponent of the luminance term. Defaults to the weight of the level
    /// where luminance is evaluated.
    pub luminance_weight: Option<f64>,
    pub constants: StabilityConstants,
    pub agreement: AgreementKind,
    pub tie_policy: TiePolicy,
    /// Windows with fewer jointly valid cells are skipped.
    pub min_joint_valid: u64,
    /// Shrink the window to the grid on levels smaller than the window.
    pub clamp_window: bool,
    pub luminance_level: LuminanceLevel,
    pub truncation: Truncation,
}

impl Default for CatsimConfig {
    fn default() -> Self {
        CatsimConfig {
            levels: 5,
            window: WindowChoice::Default,
            weights: uniform_weights(5),
            luminance_weight: None,
            constants: StabilityConstants::default(),
            agreement: AgreementKind::CohenKappa,
            tie_policy: TiePolicy::default(),
            min_joint_valid: 2,
            clamp_window: true,
            luminance_level: LuminanceLevel::Base,
            truncation: Truncation::PerWindow,
        }
    }
}

pub fn uniform_weights(levels: usize) -> Vec<f64> {
    vec![1.0 / levels as f64; levels]
}

impl CatsimConfig {
    /// Set the level count and reset the weights to uniform.
    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self.weights = uniform_weights(levels);
        self
    }

    pub fn with_agreement(mut self, kind: AgreementKind) -> Self {
        self.agreement = kind;
        self
    }

    pub fn with_window(mut self, window: WindowChoice) -> Self {
        self.window = window;
        self
    }

    pub fn with_tie_policy(mut self, policy: TiePolicy) -> Self {
        self.tie_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.weights.len() != self.levels {
            return Err(Error::InvalidConfig(format!(
                "{} weights for {} levels",
                self.weights.len(),
                self.levels
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "weights must be non-negative, got {:?}",
                self.weights
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if let Some(a) = self.luminance_weight {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "luminance weight {a} is invalid"
                )));
            }
        }
        self.constants.validate()
    }

    fn min_points(&self) -> u64 {
        self.min_joint_valid.max(self.agreement.min_points()).max(1)
    }
}

/// Component means at one pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComponents {
    /// 1 for the input resolution.
    pub level: usize,
    pub extents: Vec<usize>,
    pub window: Vec<usize>,
    pub mean_l: Option<f64>,
    pub mean_c: f64,
    pub mean_s: f64,
    pub usable_windows: usize,
    pub skipped_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatsimReport {
    pub value: f64,
    pub per_level: Vec<LevelComponents>,
    pub requested_levels: usize,
    pub effective_levels: usize,
    /// Contrast/agreement exponents actually used (renormalized over the
    /// effective levels).
    pub weights: Vec<f64>,
    pub luminance_weight: f64,
}

impl CatsimReport {
    /// Recompute the index from the stored level means and weights.
    pub fn recombine(&self) -> f64 {
        combine(&self.per_level, &self.weights, self.luminance_weight)
    }

    pub fn exhausted(&self) -> bool {
        self.effective_levels < self.requested_levels
    }
}

/// `l^a * prod_j c_j^w_j * s_j^w_j`, clamped to [0, 1].
pub fn combine(per_level: &[LevelComponents], weights: &[f64], luminance_weight: f64) -> f64 {
    let l = per_level.iter().find_map(|lc| lc.mean_l).unwrap_or(1.0);
    let mut value = l.powf(luminance_weight);
    for (lc, &w) in per_level.iter().zip(weights) {
        value *= lc.mean_c.powf(w) * lc.mean_s.powf(w);
    }
    value.clamp(0.0, 1.0)
}

/// Terms of one window: (luminance?, contrast, agreement).
type WindowTerms = (Option<f64>, f64, f64);

fn window_terms(
    counts: &ConfusionCounts,
    sx: &PatchSummary,
    sy: &PatchSummary,
    cfg: &CatsimConfig,
    include_luminance: bool,
) -> Result<WindowTerms> {
    let l = include_luminance.then(|| luminance(sx, sy, &cfg.constants).min(1.0));
    let c = contrast(sx, sy, &cfg.constants).min(1.0);
    let s = match cfg.truncation {
        Truncation::PerWindow => agreement(cfg.agreement, counts)?,
        Truncation::AfterAveraging => agreement_raw(cfg.agreement, counts)?,
    };
    Ok((l, c, s))
}

fn terms_from_counts(
    counts: &ConfusionCounts,
    cfg: &CatsimConfig,
    include_luminance: bool,
) -> Result<WindowTerms> {
    let sx = PatchSummary::from_counts(&counts.row_sums())?;
    let sy = PatchSummary::from_counts(&counts.col_sums())?;
    window_terms(counts, &sx, &sy, cfg, include_luminance)
}

/// Compensated running sum; the order of `add` calls fixes the result.
#[derive(Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Reduce per-window terms (in window order) to level means.
fn reduce_level(
    level: usize,
    extents: &[usize],
    window: &WindowSpec,
    terms: impl IntoIterator<Item = Option<WindowTerms>>,
    cfg: &CatsimConfig,
    include_luminance: bool,
) -> Result<LevelComponents> {
    let (mut l, mut c, mut s) = (
        NeumaierSum::default(),
        NeumaierSum::default(),
        NeumaierSum::default(),
    );
    let (mut usable, mut skipped) = (0usize, 0usize);
    for t in terms {
        match t {
            Some((tl, tc, ts)) => {
                if let Some(tl) = tl {
                    l.add(tl);
                }
                c.add(tc);
                s.add(ts);
                usable += 1;
            }
            None => skipped += 1,
        }
    }
    if usable == 0 {
        return Err(Error::NoUsableWindows { level });
    }
    let n = usable as f64;
    let mut mean_s = s.value() / n;
    if cfg.truncation == Truncation::AfterAveraging && cfg.agreement.is_truncated() {
        mean_s = mean_s.max(0.0);
    }
    Ok(LevelComponents {
        level,
        extents: extents.to_vec(),
        window: window.extents.clone(),
        mean_l: include_luminance.then(|| (l.value() / n).clamp(0.0, 1.0)),
        mean_c: (c.value() / n).clamp(0.0, 1.0),
        mean_s: mean_s.clamp(0.0, 1.0),
        usable_windows: usable,
        skipped_windows: skipped,
    })
}

/// Component means of one level using sliding confusion tables.
///
/// `level` is only used to label the result and errors.
pub fn level_components(
    x: &LabelGrid,
    y: &LabelGrid,
    cfg: &CatsimConfig,
    level: usize,
    include_luminance: bool,
) -> Result<LevelComponents> {
    x.check_compatible(y)?;
    cfg.agreement.validate(x.k())?;
    let window = cfg.window.resolve(x.dims(), cfg.clamp_window)?;
    let shape = x.shape3();
    let ext = to_shape3(&window.extents);
    let stride = to_shape3(&window.stride);
    let per_axis = window.positions_per_axis(x.dims());
    let npos = to_shape3(&per_axis);
    let joint = x.joint_mask(y);
    let valid = |i: usize| joint.as_ref().is_none_or(|m| m[i]);
    let (xl, yl) = (x.labels(), y.labels());
    let min_points = cfg.min_points();
    let k = x.k();

    let bands: Vec<Result<Vec<Option<WindowTerms>>>> = (0..npos[0] * npos[1])
        .into_par_iter()
        .map(|band| {
            let p0 = (band / npos[1]) * stride[0];
            let r0 = (band % npos[1]) * stride[1];
            let mut counts = ConfusionCounts::new(k);
            let column = |counts: &mut ConfusionCounts, col: usize, add: bool| {
                for p in p0..p0 + ext[0] {
                    for r in r0..r0 + ext[1] {
                        let i = (p * shape[1] + r) * shape[2] + col;
                        if valid(i) {
                            if add {
                                counts.add(xl[i], yl[i]);
                            } else {
                                counts.remove(xl[i], yl[i]);
                            }
                        }
                    }
                }
            };
            let mut out = Vec::with_capacity(npos[2]);
            for ci in 0..npos[2] {
                let c0 = ci * stride[2];
                if ci == 0 || stride[2] >= ext[2] {
                    counts.clear();
                    for col in c0..c0 + ext[2] {
                        column(&mut counts, col, true);
                    }
                } else {
                    let prev = c0 - stride[2];
                    for col in prev..c0 {
                        column(&mut counts, col, false);
                    }
                    for col in prev + ext[2]..c0 + ext[2] {
                        column(&mut counts, col, true);
                    }
                }
                out.push(if counts.n() < min_points {
                    None
                } else {
                    Some(terms_from_counts(&counts, cfg, include_luminance)?)
                });
            }
            Ok(out)
        })
        .collect();

    let mut terms = Vec::with_capacity(window.position_count(x.dims()));
    for band in bands {
        terms.extend(band?);
    }
    reduce_level(level, x.dims(), &window, terms, cfg, include_luminance)
}

/// Component means of one level, recomputing every window from scratch.
pub fn level_components_naive(
    x: &LabelGrid,
    y: &LabelGrid,
    cfg: &CatsimConfig,
    level: usize,
    include_luminance: bool,
) -> Result<LevelComponents> {
    x.check_compatible(y)?;
    cfg.agreement.validate(x.k())?;
    let window = cfg.window.resolve(x.dims(), cfg.clamp_window)?;
    let min_points = cfg.min_points();
    let k = x.k();
    let mut terms = Vec::new();
    for pair in aligned_window_pairs(x, y, &window)? {
        if (crate::grid::joint_valid_count(&pair.x, &pair.y) as u64) < min_points {
            terms.push(None);
            continue;
        }
        let counts = confusion(&pair.x, &pair.y, k)?;
        let sx = summarize(&pair.x, k)?;
        let sy = summarize(&pair.y, k)?;
        terms.push(Some(window_terms(
            &counts,
            &sx,
            &sy,
            cfg,
            include_luminance,
        )?));
    }
    reduce_level(level, x.dims(), &window, terms, cfg, include_luminance)
}

/// Tie policy for one grid. The seed depends on the grid content rather than
/// its argument position, so swapping the inputs gives the same pyramids.
fn grid_policy(policy: TiePolicy, g: &LabelGrid) -> TiePolicy {
    match policy {
        TiePolicy::SeededRandom { seed } => {
            let d = g.content_digest();
            let tag = u64::from_le_bytes(d[..8].try_into().unwrap());
            policy.reseeded(derive_seed(&[seed, tag]))
        }
        TiePolicy::LowestLabel => policy,
    }
}

/// Pyramids of both grids as used by [`catsim`].
pub fn pyramids(x: &LabelGrid, y: &LabelGrid, cfg: &CatsimConfig) -> Result<(Pyramid, Pyramid)> {
    let (px, py) = rayon::join(
        || build_pyramid(x, cfg.levels, grid_policy(cfg.tie_policy, x)),
        || build_pyramid(y, cfg.levels, grid_policy(cfg.tie_policy, y)),
    );
    Ok((px?, py?))
}

type LevelFn = fn(&LabelGrid, &LabelGrid, &CatsimConfig, usize, bool) -> Result<LevelComponents>;

fn run(
    x: &LabelGrid,
    y: &LabelGrid,
    cfg: &CatsimConfig,
    level_fn: LevelFn,
) -> Result<CatsimReport> {
    cfg.validate()?;
    x.check_compatible(y)?;
    cfg.agreement.validate(x.k())?;
    let (px, py) = pyramids(x, y, cfg)?;
    let effective = px.levels.len().min(py.levels.len());
    if effective < cfg.levels {
        log::warn!(
            "only {effective} of {} levels available for extents {:?}; weights renormalized",
            cfg.levels,
            x.dims()
        );
    }
    let lum_level = match cfg.luminance_level {
        LuminanceLevel::Base => 1,
        LuminanceLevel::Coarsest => effective,
    };
    let per_level = (1..=effective)
        .map(|j| level_fn(&px.levels[j - 1], &py.levels[j - 1], cfg, j, j == lum_level))
        .collect::<Result<Vec<_>>>()?;

    let raw = &cfg.weights[..effective];
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        uniform_weights(effective)
    };
    let luminance_weight = cfg.luminance_weight.unwrap_or(weights[lum_level - 1]);
    let value = combine(&per_level, &weights, luminance_weight);
    Ok(CatsimReport {
        value,
        per_level,
        requested_levels: cfg.levels,
        effective_levels: effective,
        weights,
        luminance_weight,
    })
}

/// Multi-scale categorical similarity of two aligned grids.
pub fn catsim(x: &LabelGrid, y: &LabelGrid, cfg: &CatsimConfig) -> Result<CatsimReport> {
    run(x, y, cfg, level_components)
}

/// Reference implementation of [`catsim`] without incremental histograms.
pub fn catsim_naive_oracle(
    x: &LabelGrid,
    y: &LabelGrid,
    cfg: &CatsimConfig,
) -> Result<CatsimReport> {
    run(x, y, cfg, level_components_naive)
}
