//! Survival modelling for subjects with a variable number of lesions.
//!
//! The crate covers the whole path from per-lesion feature tables to
//! cross-validated model comparisons:
//!
//! - [`cohort`]: lesion and outcome tables, design matrices, standardization
//! - [`synthgen`]: synthetic cohorts with a planted signal
//! - [`heterogeneity`]: inter-lesion distance indices and tercile strata
//! - [`aggregation`]: ROI strategies and risk aggregators
//! - [`survival`]: Cox, stepwise Cox, elastic-net Cox, random survival
//!   forest, boosted AFT
//! - [`evaluation`]: c-index, Kaplan–Meier, log-rank, Cohen's d
//! - [`harness`]: Monte Carlo partitions, scheme grids, summaries
//!
//! ```
//! use roisurv::{synthgen, harness, aggregation::StrategyKind, survival::ModelSpec};
//!
//! let cohort = synthgen::generate(&synthgen::GenSpec { n_patients: 60, ..Default::default() }).unwrap();
//! let plan = harness::make_partitions(&cohort, 3, 7).unwrap();
//! let scheme = harness::Scheme::new(StrategyKind::LargestRoi, None, ModelSpec::Cox).unwrap();
//! let result = harness::run_scheme(&cohort, &scheme, &plan, &Default::default()).unwrap();
//! assert_eq!(result.c_indices.len(), 3);
//! ```

pub mod aggregation;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod heterogeneity;
pub mod seed;
pub mod survival;
pub mod synthgen;

pub use error::{Error, Result};
pub use seed::SeedHandle;
