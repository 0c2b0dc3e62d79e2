//! Multi-scale structural similarity for categorical images and volumes.
//!
//! Grids of class labels are compared window by window with a luminance
//! term on class proportions, a contrast term on categorical spread and a
//! pluggable agreement index, over a pyramid of mode-downsampled grids.
//!
//! ```
//! use catsim::{catsim, CatsimConfig, LabelGrid};
//!
//! let x = LabelGrid::new(vec![4, 4], vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 1, 1], 3).unwrap();
//! let report = catsim(&x, &x, &CatsimConfig::default()).unwrap();
//! assert_eq!(report.value, 1.0);
//! ```

pub mod agreement;
pub mod analysis;
pub mod distort;
pub mod engine;
pub mod error;
pub mod grid;
pub mod io;
pub mod patchstats;
pub mod pyramid;

pub use agreement::{agreement, AgreementKind, ConfusionCounts};
pub use engine::{
    catsim, catsim_naive_oracle, CatsimConfig, CatsimReport, LevelComponents, WindowChoice,
};
pub use error::{Error, Result};
pub use grid::{LabelGrid, Patch, WindowSpec};
pub use patchstats::{PatchSummary, StabilityConstants};
pub use pyramid::TiePolicy;
