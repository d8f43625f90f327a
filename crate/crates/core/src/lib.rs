//! Synthetic difference-in-differences event studies for balanced panels.
//!
//! Each adoption cohort is compared with the never-treated units through
//! simplex-constrained unit and time weights. Cohort effects are split into
//! per-event-time dynamic effects, which are then aggregated across cohorts
//! by cohort size into event-study effects and the overall ATT.
//!
//! ```no_run
//! use sdid_event::{estimate, load_panel, ColumnNames, EstimateOptions};
//!
//! let file = std::fs::File::open("panel.csv").unwrap();
//! let panel = load_panel(file, &ColumnNames::default()).unwrap();
//! let result = estimate(&panel, &EstimateOptions::default()).unwrap();
//! println!("ATT = {}", result.att);
//! ```

pub mod cli;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod panel;
pub mod weights;

pub use dgp::{generate, CohortSpec, DgpSpec, FactorSpec, TrueEffects};
pub use error::{Error, Result};
pub use estimators::{
    att, estimate, placebo_effects, pre_gap, tau_cohort, tau_cohort_ell, tau_ell, CohortEstimate,
    EstimateOptions, EstimationResult, EventEffect,
};
pub use inference::{
    bootstrap_se, confidence_interval, normal_quantile, placebo_se, variance, VarianceMethod,
    VarianceOptions,
    VarianceResult,
};
pub use panel::{cohort_subpanel, derive_cohorts, load_panel, ColumnNames, CohortStructure, PanelDataset};
pub use weights::{
    fit_weights, regularization_zeta, simplex_regression, solve_time_weights, solve_unit_weights,
    SimplexFit, SolverOptions, WeightOptions, WeightSet,
};
