//! Flags shared by the comparison subcommands.

use std::str::FromStr;

use catsim::engine::{LuminanceLevel, Truncation};
use catsim::{
    AgreementKind, CatsimConfig, Error, StabilityConstants, TiePolicy, WindowChoice, WindowSpec,
};
use clap::Args;

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Number of pyramid levels.
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Window extents: `11`, `11x11`, `5x5x5`, or `0` for the whole grid.
    #[arg(long)]
    pub window: Option<String>,
    /// Window stride, one value or one per axis.
    #[arg(long)]
    pub stride: Option<String>,
    /// Comma-separated per-level weights summing to 1.
    #[arg(long)]
    pub weights: Option<String>,
    /// Exponent of the luminance term.
    #[arg(long)]
    pub luminance_weight: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub c1: f64,
    #[arg(long, default_value_t = 0.01)]
    pub c2: f64,
    /// Agreement index: kappa, accuracy, hamming, jaccard, dice, rand, ari.
    #[arg(long, default_value = "kappa")]
    pub metric: String,
    /// Foreground class for jaccard and dice.
    #[arg(long)]
    pub fg: Option<u32>,
    /// Seed for mode tie-breaking.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tie policy when downsampling: `random` or `lowest`.
    #[arg(long, default_value = "random")]
    pub tie: String,
    #[arg(long, default_value_t = 2)]
    pub min_joint_valid: u64,
    /// Reject windows larger than a level instead of shrinking them.
    #[arg(long)]
    pub no_clamp: bool,
    /// Level of the luminance term: `base` or `coarsest`.
    #[arg(long, default_value = "base")]
    pub luminance_level: String,
    /// Where kappa and ARI are clamped at zero: `window` or `average`.
    #[arg(long, default_value = "window")]
    pub truncate: String,
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, Error> {
    s.split([',', 'x'])
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse `{p}` in `{s}`")))
        })
        .collect()
}

pub fn parse_tie(s: &str, seed: u64) -> Result<TiePolicy, Error> {
    match s {
        "random" | "seeded" => Ok(TiePolicy::SeededRandom { seed }),
        "lowest" => Ok(TiePolicy::LowestLabel),
        other => Err(Error::InvalidConfig(format!(
            "unknown tie policy `{other}`"
        ))),
    }
}

impl ConfigArgs {
    /// Build the configuration for grids of rank `ndim`.
    pub fn resolve(&self, ndim: usize) -> Result<CatsimConfig, Error> {
        let mut cfg = CatsimConfig::default()
            .with_levels(self.levels)
            .with_agreement(AgreementKind::from_name(&self.metric, self.fg)?)
            .with_tie_policy(parse_tie(&self.tie, self.seed)?);
        cfg.window = self.window_choice(ndim)?;
        if let Some(w) = &self.weights {
            cfg.weights = parse_list(w)?;
        }
        cfg.luminance_weight = self.luminance_weight;
        cfg.constants = StabilityConstants::new(self.c1, self.c2)?;
        cfg.min_joint_valid = self.min_joint_valid;
        cfg.clamp_window = !self.no_clamp;
        cfg.luminance_level = match self.luminance_level.as_str() {
            "base" => LuminanceLevel::Base,
            "coarsest" => LuminanceLevel::Coarsest,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown luminance level `{other}`"
                )))
            }
        };
        cfg.truncation = match self.truncate.as_str() {
            "window" => Truncation::PerWindow,
            "average" => Truncation::AfterAveraging,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown truncation `{other}`"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn window_choice(&self, ndim: usize) -> Result<WindowChoice, Error> {
        let extents: Option<Vec<usize>> = self.window.as_deref().map(parse_list).transpose()?;
        let stride: Option<Vec<usize>> = self.stride.as_deref().map(parse_list).transpose()?;
        match (extents, stride) {
            (Some(e), _) if e == [0] => {
                if self.stride.is_some() {
                    return Err(Error::InvalidConfig(
                        "--stride has no effect with a whole-grid window".into(),
                    ));
                }
                Ok(WindowChoice::Whole)
            }
            (None, None) => Ok(WindowChoice::Default),
            (None, Some(_)) => Err(Error::InvalidConfig(
                "--stride needs an explicit --window".into(),
            )),
            (Some(e), s) => {
                let e = if e.len() == 1 { vec![e[0]; ndim] } else { e };
                let s = match s {
                    None => vec![1; ndim],
                    Some(s) if s.len() == 1 => vec![s[0]; ndim],
                    Some(s) => s,
                };
                Ok(WindowChoice::Spec(WindowSpec::new(e, s)?))
            }
        }
    }
}
