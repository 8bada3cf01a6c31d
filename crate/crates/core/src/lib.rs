//! Group-time average treatment effects `ATT(g,t)` in short panels with
//! staggered adoption when untreated outcomes follow an interactive fixed
//! effects model
//!
//! ```text
//! Y_it(0) = θ_t + η_i + λ_i'F_t + e_it
//! ```
//!
//! Pipeline: [`panel`] ingestion, [`identification`] of feasible cells and
//! `Ω`, per-cell GMM in [`estimator`], influence functions and the multiplier
//! bootstrap in [`inference`], and summaries in [`aggregate`]. [`simulate`]
//! holds the Monte Carlo design and comparison estimators.

pub mod aggregate;
pub mod error;
pub mod estimator;
pub mod identification;
pub mod inference;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod simulate;

pub use aggregate::{AggregationKind, AggregationResult, CellEstimates};
pub use error::{Error, Result};
pub use estimator::{estimate, AttEstimate, EstimateOptions, Estimation, WeightMode};
pub use identification::{CellIndex, OmegaKind, OmegaSpec};
pub use inference::{multiplier_bootstrap, BootstrapResult, InfluencePanel, WeightLaw};
pub use panel::{load_panel, Group, LoadOptions, PanelDataset};
