//! The guide's chapters, included so their code blocks run as doc-tests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cohort.md")]
pub mod cohort {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/heterogeneity.md")]
pub mod heterogeneity {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/survival.md")]
pub mod survival {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
