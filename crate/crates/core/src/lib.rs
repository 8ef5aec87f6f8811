//! Strategic users against a truncated-SVD recommender.
//!
//! The learner keeps the smallest rank whose next singular value falls
//! below an exploration limit `α`, then recommends each user the argmax of
//! her estimated row, breaking ties toward popular items. Minority users
//! whose preferences live below `α` get popular items instead of their
//! favorites. A collective of majority users can uprate a niche item so that
//! its direction survives truncation.
//!
//! Modules:
//! * [`matrix`]: ratings matrices, spectra, majority-minority blocks.
//! * [`learner`]: rank selection, truncation, recommendation, welfare.
//! * [`collective`]: uprating strategies, the η finder, robustness margin.
//! * [`popgap`]: the popularity-gap model and general collective columns.
//! * [`mc`]: exploration, zero-padded completions and their reduction.
//! * [`io`]: ratings CSV.
//! * [`scenarios`]: deterministic scenario generators.

pub mod collective;
pub mod error;
pub mod io;
pub mod learner;
pub mod matrix;
pub mod mc;
pub mod popgap;
pub mod scenarios;

pub use error::{Error, Result};
pub use matrix::{GroupPartition, Interval, RatingsMatrix, SpectralSummary};
