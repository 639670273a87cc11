//! Transfer of an ℓp certificate to a DTW certificate.
//!
//! For `x'` with `DTW_w(x, x') ≤ e`, the Keogh bound gives
//! `LB(env(x), x') ≤ e`. The DTW radius is therefore the smallest Keogh
//! bound attainable by any `x'` at distance `r` from `x`: every point at
//! least that far away has a larger bound and so a larger DTW distance.
//!
//! Writing `d = x' − x`, each cell exceeds the envelope by at least
//! `|d| − Δ`, so `LB ≥ ‖d‖ − ‖Δ‖` and the infimum is `(r − ‖Δ‖)₊`. Moving
//! every cell along its larger one-sided slack, scaled by `r / ‖Δ‖`,
//! attains it.

use rayon::prelude::*;
use thiserror::Error;

use crate::detectors::ScoreFn;
use crate::dtw::{keogh_envelope, slack_stats, DtwError, Envelope, Norm, SlackStats};
use crate::series::Window;
use crate::smoothing::{
    certified_l2_radius, sample_scores_in_stream, Decision, Denoiser, SmoothingConfig, SmoothingError,
};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error("radius must be a finite value >= 0, got {0}")]
    NegativeInput(f64),
    #[error("radius {r} does not exceed the envelope slack {slack}")]
    RadiusInsideSlack { r: f64, slack: f64 },
}

fn check_radius(r: f64) -> Result<(), CertifyError> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(CertifyError::NegativeInput(r))
    }
}

/// DTW radius certified by an ℓ2 radius `r`: `(r − R)₊`.
pub fn dtw_radius(r: f64, stats: &SlackStats) -> Result<f64, CertifyError> {
    lp_dtw_radius(r, stats, Norm::L2)
}

/// DTW radius certified by an ℓp radius `r`: `(r − ‖Δ‖_p)₊`, with the
/// slack norm taken over all cells.
///
/// The bound is tight for the Keogh bound in the same norm. For `p = 2` it
/// coincides with [`dtw_radius`].
pub fn lp_dtw_radius(r: f64, stats: &SlackStats, p: Norm) -> Result<f64, CertifyError> {
    check_radius(r)?;
    let slack = match p {
        Norm::L2 => stats.total_norm,
        _ => stats.cell_norm(p),
    };
    Ok((r - slack).max(0.0))
}

/// Keogh bound reached when all deviation beyond the slack is piled onto
/// the timestep of largest slack: `sqrt(M² + r² − R²) − M` for `r > R`.
///
/// Exceeds [`dtw_radius`] whenever slack is spread over more than one
/// timestep, so it is not a valid certificate. Kept for comparison.
pub fn concentrated_radius(r: f64, stats: &SlackStats) -> Result<f64, CertifyError> {
    check_radius(r)?;
    let (big_r, m) = (stats.total_norm, stats.max_row_norm);
    if r <= big_r {
        return Ok(0.0);
    }
    Ok((m * m + r * r - big_r * big_r).sqrt() - m)
}

fn signed_slack(stats: &SlackStats, i: usize) -> f64 {
    if stats.upward[i] {
        stats.delta[i]
    } else {
        -stats.delta[i]
    }
}

fn inside_slack(x: &Window, env: &Envelope, r: f64) -> Result<SlackStats, CertifyError> {
    check_radius(r)?;
    let stats = slack_stats(x, env)?;
    if r <= stats.total_norm {
        return Err(CertifyError::RadiusInsideSlack {
            r,
            slack: stats.total_norm,
        });
    }
    Ok(stats)
}

/// A point at ℓ2 distance `r` from `x` whose Keogh bound equals
/// [`dtw_radius`]`(r)`.
///
/// Every cell moves along its larger one-sided slack by `Δ · r / R`. With
/// zero slack the whole distance goes on the first coordinate.
pub fn worst_case_witness(x: &Window, env: &Envelope, r: f64) -> Result<Window, CertifyError> {
    let stats = inside_slack(x, env, r)?;
    let mut values = x.values().to_vec();
    if stats.total_norm == 0.0 {
        values[0] += r;
    } else {
        let scale = r / stats.total_norm;
        for (i, v) in values.iter_mut().enumerate() {
            *v += signed_slack(&stats, i) * scale;
        }
    }
    Ok(x.with_values(values))
}

/// The point behind [`concentrated_radius`]: every timestep uses up its
/// slack and the timestep `i*` of largest slack (first on ties) moves a
/// further `λΔ_{i*}`, with `λ = sqrt(1 + (r² − R²)/M²) − 1`.
pub fn concentrated_witness(x: &Window, env: &Envelope, r: f64) -> Result<Window, CertifyError> {
    let stats = inside_slack(x, env, r)?;
    let mut values = x.values().to_vec();
    let (big_r, m) = (stats.total_norm, stats.max_row_norm);
    if m == 0.0 {
        values[0] += r;
        return Ok(x.with_values(values));
    }
    let star = (0..stats.len())
        .find(|&t| stats.row_norm(t) == m)
        .expect("the maximum row norm is attained");
    let lambda = (1.0 + (r * r - big_r * big_r) / (m * m)).sqrt() - 1.0;
    let c = stats.channels;
    for (i, v) in values.iter_mut().enumerate() {
        let s = signed_slack(&stats, i);
        *v += if i / c == star { s * (1.0 + lambda) } else { s };
    }
    Ok(x.with_values(values))
}

/// Everything that parameterizes one certification run.
#[derive(Clone, Debug, PartialEq)]
pub struct CertifyConfig {
    pub smoothing: SmoothingConfig,
    pub warp_window: usize,
    pub gamma: f64,
    pub denoiser: Denoiser,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificationResult {
    pub origin: usize,
    pub decision: Decision,
    /// Certified radius in the norm matched to the noise.
    pub l2_radius: f64,
    pub dtw_radius: f64,
    /// `R`, total envelope slack.
    pub slack_r: f64,
    /// `M`, largest per-timestep slack.
    pub slack_m: f64,
    pub q_lower: usize,
    pub q_upper: usize,
    /// Plug-in smoothed score `K_{⌊np⌋+1}`.
    pub score: f64,
    /// The ℓ2 search ended at a vacuous confidence bound.
    pub vacuous_bracket: bool,
}

impl CertificationResult {
    pub fn abstained(&self) -> bool {
        self.decision.is_abstain()
    }

    /// Decision of the plug-in smoothed score, defined even on abstention.
    pub fn unperturbed_anomaly(&self, gamma: f64) -> bool {
        self.score > gamma
    }
}

/// Samples, decides, and converts the certified radius into a DTW radius
/// for band `w` using the envelope of the clean window.
pub fn certify_window(x: &Window, score_fn: &dyn ScoreFn, cfg: &CertifyConfig) -> Result<CertificationResult, CertifyError> {
    let smoothing = &cfg.smoothing;
    let samples = sample_scores_in_stream(score_fn, x, smoothing, cfg.denoiser, x.origin() as u64, smoothing.n)?;
    let cert = certified_l2_radius(&samples, cfg.gamma)?;
    let env = keogh_envelope(x, cfg.warp_window)?;
    let stats = slack_stats(x, &env)?;
    let dtw = if cert.decision.is_abstain() {
        0.0
    } else {
        lp_dtw_radius(cert.radius, &stats, smoothing.noise.certified_norm())?
    };
    Ok(CertificationResult {
        origin: x.origin(),
        decision: cert.decision,
        l2_radius: cert.radius,
        dtw_radius: dtw,
        slack_r: stats.total_norm,
        slack_m: stats.max_row_norm,
        q_lower: cert.bounds.q_lower,
        q_upper: cert.bounds.q_upper,
        score: samples.empirical_percentile(smoothing.percentile),
        vacuous_bracket: cert.vacuous_bracket,
    })
}

/// Certifies every window, in input order. Windows run in parallel when
/// the score function is reentrant.
pub fn certify_all(windows: &[Window], score_fn: &dyn ScoreFn, cfg: &CertifyConfig) -> Result<Vec<CertificationResult>, CertifyError> {
    if score_fn.reentrant() {
        windows.par_iter().map(|x| certify_window(x, score_fn, cfg)).collect()
    } else {
        windows.iter().map(|x| certify_window(x, score_fn, cfg)).collect()
    }
}
