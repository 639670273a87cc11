//! Percentile randomized smoothing for time-series anomaly detectors, with
//! certified robustness radii in Dynamic Time Warping distance.
//!
//! The pipeline for one window `x`:
//!
//! 1. [`smoothing::sample_scores`] evaluates a base score `f` on noisy copies
//!    of `x` and sorts the results.
//! 2. [`smoothing::certified_l2_radius`] bounds the smoothed percentile with
//!    binomial order-statistic confidence intervals and searches the largest
//!    ℓ2 radius `r` over which the decision against `γ` cannot change.
//! 3. [`dtw::keogh_envelope`] and [`dtw::slack_stats`] measure how much of
//!    `r` can be absorbed by warping, and [`certify::dtw_radius`] converts
//!    the remainder into a DTW radius `e`.
//!
//! [`certify::certify_window`] runs all three steps.

pub mod certify;
pub mod detectors;
pub mod dtw;
pub mod format;
pub mod metrics;
pub mod series;
pub mod smoothing;

pub use certify::{certify_window, CertificationResult, CertifyConfig};
pub use detectors::{DetectorError, ScoreFn};
pub use dtw::{dtw_distance, keogh_envelope, keogh_lower_bound, slack_stats, Envelope, Norm, SlackStats};
pub use series::{DataError, LabeledDataset, TimeSeries, Window};
pub use smoothing::{Decision, NoiseKind, SmoothingConfig};
