//! Percentile randomized smoothing.
//!
//! The smoothed score `h_p(x)` is the p-th percentile of `f(x + η)`. It is
//! never computed exactly: `n` noisy scores are sorted into order
//! statistics `K_1 ≤ … ≤ K_n`, and binomial tail bounds pick the indices
//! whose order statistics bracket the shifted percentiles `h_{p̲}(x)` and
//! `h_{p̄}(x)` with confidence `1 − α` each.
//!
//! Noise streams are ChaCha20 keyed by the run seed, one stream per window
//! (stream id = window origin index), so results do not depend on how
//! windows are scheduled across workers.

pub mod special;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand::distr::Open01;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detectors::{DetectorError, ScoreFn};
use crate::series::Window;
use special::{binomial_cdf, gaussian_cdf, gaussian_icdf, laplace_cdf, laplace_icdf};

/// Absolute tolerance of the radius bisection.
pub const RADIUS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid smoothing config: {0}")]
    InvalidConfig(String),
    #[error("score function failed on sample {index}: {source}")]
    ScoreFnFailure {
        index: usize,
        #[source]
        source: DetectorError,
    },
    #[error("score function returned a non-finite value on sample {index}")]
    NonFiniteScore { index: usize },
}

/// Noise family and the norm its certificate is stated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// Entrywise N(0, σ²); certifies ℓ2 balls.
    Gaussian,
    /// Entrywise Laplace with scale σ; certifies ℓ1 balls.
    Laplace,
    /// Entrywise Uniform[−σ, σ]; certifies ℓ∞ balls.
    Uniform,
}

impl NoiseKind {
    pub fn certified_norm(self) -> crate::dtw::Norm {
        match self {
            NoiseKind::Gaussian => crate::dtw::Norm::L2,
            NoiseKind::Laplace => crate::dtw::Norm::L1,
            NoiseKind::Uniform => crate::dtw::Norm::Inf,
        }
    }
}

impl FromStr for NoiseKind {
    type Err = SmoothingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gaussian-l2" => Ok(Self::Gaussian),
            "laplace" | "laplace-l1" => Ok(Self::Laplace),
            "uniform" | "uniform-linf" => Ok(Self::Uniform),
            other => Err(SmoothingError::InvalidConfig(format!("unknown noise kind {other:?}"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian-l2",
            Self::Laplace => "laplace-l1",
            Self::Uniform => "uniform-linf",
        })
    }
}

/// Optional smoothing applied to each noisy copy before scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Denoiser {
    #[default]
    Identity,
    /// Centered moving average of width 3 per channel (ends average the
    /// available neighbours).
    MovingAverage3,
}

impl Denoiser {
    pub fn apply(self, x: &Window) -> Window {
        match self {
            Denoiser::Identity => x.clone(),
            Denoiser::MovingAverage3 => {
                let (t_len, c) = (x.len(), x.channels());
                let mut out = vec![0.0; x.dim()];
                for t in 0..t_len {
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(t_len - 1);
                    let count = (hi - lo + 1) as f64;
                    for k in 0..c {
                        out[t * c + k] = (lo..=hi).map(|s| x.get(s, k)).sum::<f64>() / count;
                    }
                }
                x.with_values(out)
            }
        }
    }
}

impl FromStr for Denoiser {
    type Err = SmoothingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Self::Identity),
            "ma3" | "moving-average" => Ok(Self::MovingAverage3),
            other => Err(SmoothingError::InvalidConfig(format!("unknown denoiser {other:?}"))),
        }
    }
}

impl fmt::Display for Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::MovingAverage3 => "ma3",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub n: usize,
    pub percentile: f64,
    pub alpha: f64,
    pub seed: u64,
    pub noise: NoiseKind,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            n: 1000,
            percentile: 0.5,
            alpha: 1e-3,
            seed: 0,
            noise: NoiseKind::Gaussian,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), SmoothingError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(SmoothingError::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.n < 2 {
            return Err(SmoothingError::InvalidConfig(format!("need at least 2 samples, got {}", self.n)));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(SmoothingError::InvalidConfig(format!(
                "percentile must lie in (0, 1), got {}",
                self.percentile
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SmoothingError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Sorted Monte-Carlo scores of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSamples {
    pub sorted: Vec<f64>,
    pub config: SmoothingConfig,
    pub input_digest: u64,
    /// Number of entries of the perturbed window (`T·C`).
    pub dim: usize,
}

impl ScoreSamples {
    /// Order statistic `K_k` with the sentinels `K_0 = −∞`, `K_{n+1} = +∞`.
    pub fn order_stat(&self, k: usize) -> f64 {
        match k {
            0 => f64::NEG_INFINITY,
            k if k > self.sorted.len() => f64::INFINITY,
            k => self.sorted[k - 1],
        }
    }

    /// Plug-in estimate of `h_p`: `K_{⌊np⌋ + 1}`, the smallest order
    /// statistic whose empirical CDF exceeds `p`.
    pub fn empirical_percentile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let k = ((n as f64 * p).floor() as usize + 1).min(n);
        self.order_stat(k)
    }
}

/// SHA-256 of the window values, truncated to 64 bits.
pub fn window_digest(x: &Window) -> u64 {
    let mut h = Sha256::new();
    h.update((x.len() as u64).to_le_bytes());
    h.update((x.channels() as u64).to_le_bytes());
    for v in x.values() {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output has 32 bytes"))
}

/// The generator behind every noise stream.
pub fn noise_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_noise(rng: &mut ChaCha20Rng, kind: NoiseKind, sigma: f64) -> f64 {
    match kind {
        NoiseKind::Gaussian => sigma * rng.sample::<f64, _>(StandardNormal),
        NoiseKind::Laplace => {
            let u: f64 = rng.sample(Open01);
            sigma * if u < 0.5 { (2.0 * u).ln() } else { -(2.0 * (1.0 - u)).ln() }
        }
        NoiseKind::Uniform => sigma * (2.0 * rng.random::<f64>() - 1.0),
    }
}

/// Noisy copies `x + η_j` for `j = 0..count`, drawn sequentially from one stream.
pub fn noisy_copies(x: &Window, cfg: &SmoothingConfig, stream: u64, count: usize) -> Vec<Window> {
    let mut rng = noise_rng(cfg.seed, stream);
    (0..count)
        .map(|_| {
            let values = x
                .values()
                .iter()
                .map(|v| v + draw_noise(&mut rng, cfg.noise, cfg.sigma))
                .collect();
            x.with_values(values)
        })
        .collect()
}

/// Scores `n` noisy copies of `x` drawn from the window's own stream.
pub fn sample_scores(score_fn: &dyn ScoreFn, x: &Window, cfg: &SmoothingConfig) -> Result<ScoreSamples, SmoothingError> {
    sample_scores_in_stream(score_fn, x, cfg, Denoiser::Identity, x.origin() as u64, cfg.n)
}

/// [`sample_scores`] with an explicit stream id, denoiser and sample count.
///
/// Evaluation fans out across threads only when the score function is reentrant.
pub fn sample_scores_in_stream(
    score_fn: &dyn ScoreFn,
    x: &Window,
    cfg: &SmoothingConfig,
    denoiser: Denoiser,
    stream: u64,
    count: usize,
) -> Result<ScoreSamples, SmoothingError> {
    cfg.validate()?;
    let copies: Vec<Window> = noisy_copies(x, cfg, stream, count)
        .into_iter()
        .map(|w| denoiser.apply(&w))
        .collect();
    let scores: Vec<f64> = if score_fn.reentrant() {
        copies
            .par_iter()
            .enumerate()
            .map(|(index, w)| score_fn.score(w).map_err(|source| SmoothingError::ScoreFnFailure { index, source }))
            .collect::<Result<_, _>>()?
    } else {
        score_fn
            .score_batch(&copies)
            .map_err(|source| SmoothingError::ScoreFnFailure { index: 0, source })?
    };
    if scores.len() != count {
        return Err(SmoothingError::ScoreFnFailure {
            index: scores.len(),
            source: DetectorError::Protocol(format!("expected {count} scores, got {}", scores.len())),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(SmoothingError::NonFiniteScore { index });
    }
    let mut sorted = scores;
    sorted.sort_by(f64::total_cmp);
    Ok(ScoreSamples {
        sorted,
        config: cfg.clone(),
        input_digest: window_digest(x),
        dim: x.dim(),
    })
}

/// Percentile levels `(p̲, p̄)` reachable from `p` by a perturbation of
/// size `r` in the norm matched to `noise`.
///
/// Gaussian and Laplace use the quantile shift `F(F⁻¹(p) ∓ r/σ)`. Uniform
/// noise uses the total-variation shift `1 − (1 − r/2σ)₊^d` of a
/// `d`-dimensional cube, which coincides with the quantile shift for `d = 1`.
pub fn shifted_levels(noise: NoiseKind, p: f64, r: f64, sigma: f64, dim: usize) -> Result<(f64, f64), SmoothingError> {
    if !(r >= 0.0) {
        return Err(SmoothingError::Domain(format!("radius must be >= 0, got {r}")));
    }
    let shift = r / sigma;
    Ok(match noise {
        NoiseKind::Gaussian => {
            let z = gaussian_icdf(p)?;
            (gaussian_cdf(z - shift), gaussian_cdf(z + shift))
        }
        NoiseKind::Laplace => {
            let z = laplace_icdf(p)?;
            (laplace_cdf(z - shift), laplace_cdf(z + shift))
        }
        NoiseKind::Uniform => {
            let keep = (1.0 - shift / 2.0).max(0.0).powi(dim as i32);
            let tv = 1.0 - keep;
            (p - tv, p + tv)
        }
    })
}

/// Order-statistic confidence bounds on the shifted percentiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PercentileBounds {
    /// `K_{q^l}`; `−∞` when vacuous.
    pub lower: f64,
    /// `K_{q^u}`; `+∞` when vacuous.
    pub upper: f64,
    /// `q^l ∈ [0, n]`, 0 meaning no index reaches the confidence level.
    pub q_lower: usize,
    /// `q^u ∈ [1, n + 1]`, `n + 1` meaning no index reaches the confidence level.
    pub q_upper: usize,
    pub p_low: f64,
    pub p_high: f64,
}

impl PercentileBounds {
    pub fn lower_vacuous(&self) -> bool {
        self.q_lower == 0
    }

    pub fn upper_vacuous(&self, n: usize) -> bool {
        self.q_upper > n
    }
}

/// Largest `k ∈ [1, n]` with `P[Bin(n, p̲) ≤ k − 1] ≤ α`, or 0.
///
/// `P[K_k ≤ h_{p̲}] ≥ 1 − P[Bin(n, p̲) ≤ k − 1]`, so `K_k` lower-bounds the
/// shifted percentile with confidence `1 − α`.
pub fn lower_index(n: usize, p_low: f64, alpha: f64) -> Result<usize, SmoothingError> {
    if p_low <= 0.0 {
        return Ok(0);
    }
    let p_low = p_low.min(1.0);
    let ok = |k: usize| binomial_cdf(n as u64, (k - 1) as u64, p_low).map(|c| c <= alpha);
    if !ok(1)? {
        return Ok(0);
    }
    // invariant: ok(lo) holds, ok(hi + 1) fails or hi == n
    let (mut lo, mut hi) = (1usize, n);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// Smallest `k ∈ [1, n]` with `P[Bin(n, p̄) ≤ k − 1] ≥ 1 − α`, or `n + 1`.
///
/// `P[K_k ≥ h_{p̄}] ≥ P[Bin(n, p̄) ≤ k − 1]`, so `K_k` upper-bounds the
/// shifted percentile with confidence `1 − α`.
pub fn upper_index(n: usize, p_high: f64, alpha: f64) -> Result<usize, SmoothingError> {
    if p_high >= 1.0 {
        return Ok(n + 1);
    }
    let p_high = p_high.max(0.0);
    let ok = |k: usize| binomial_cdf(n as u64, (k - 1) as u64, p_high).map(|c| c >= 1.0 - alpha);
    if !ok(n)? {
        return Ok(n + 1);
    }
    let (mut lo, mut hi) = (1usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Brackets `h_{p̲}(x)` from below and `h_{p̄}(x)` from above. With
/// probability at least `1 − 2α`, `h_p(x') ∈ [lower, upper]` for every `x'`
/// within distance `r` of `x`.
pub fn percentile_bounds(samples: &ScoreSamples, p: f64, r: f64, alpha: f64) -> Result<PercentileBounds, SmoothingError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SmoothingError::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let cfg = &samples.config;
    let n = samples.sorted.len();
    let (p_low, p_high) = shifted_levels(cfg.noise, p, r, cfg.sigma, samples.dim)?;
    let q_lower = lower_index(n, p_low, alpha)?;
    let q_upper = upper_index(n, p_high, alpha)?;
    Ok(PercentileBounds {
        lower: samples.order_stat(q_lower),
        upper: samples.order_stat(q_upper),
        q_lower,
        q_upper,
        p_low,
        p_high,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Anomaly,
    Benign,
    Abstain,
}

impl Decision {
    pub fn is_abstain(self) -> bool {
        self == Decision::Abstain
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Anomaly => "anomaly",
            Decision::Benign => "benign",
            Decision::Abstain => "abstain",
        })
    }
}

impl FromStr for Decision {
    type Err = SmoothingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "anomaly" => Ok(Decision::Anomaly),
            "benign" => Ok(Decision::Benign),
            "abstain" => Ok(Decision::Abstain),
            other => Err(SmoothingError::Domain(format!("unknown decision {other:?}"))),
        }
    }
}

/// Smoothed decision with its certified radius in the noise's norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2Certificate {
    pub decision: Decision,
    pub radius: f64,
    /// Bounds evaluated at `radius`.
    pub bounds: PercentileBounds,
    /// The search stopped because the next bound became vacuous rather
    /// than because it crossed the threshold.
    pub vacuous_bracket: bool,
}

/// Decides at `r = 0` and, unless abstaining, finds the largest radius at
/// which the matching confidence bound still clears `gamma`.
///
/// Anomaly requires `K_{q^l}(r) > γ`; benign requires `K_{q^u}(r) ≤ γ`.
/// The radius comes from bisection (tolerance [`RADIUS_TOLERANCE`]) after
/// doubling an initial bracket of `σ`; the test is monotone in `r`.
pub fn certified_l2_radius(samples: &ScoreSamples, gamma: f64) -> Result<L2Certificate, SmoothingError> {
    let cfg = &samples.config;
    let (p, alpha, n) = (cfg.percentile, cfg.alpha, samples.sorted.len());
    let at_zero = percentile_bounds(samples, p, 0.0, alpha)?;
    let decision = if !at_zero.lower_vacuous() && at_zero.lower > gamma {
        Decision::Anomaly
    } else if !at_zero.upper_vacuous(n) && at_zero.upper <= gamma {
        Decision::Benign
    } else {
        return Ok(L2Certificate {
            decision: Decision::Abstain,
            radius: 0.0,
            bounds: at_zero,
            vacuous_bracket: false,
        });
    };
    let passes = |b: &PercentileBounds| match decision {
        Decision::Anomaly => !b.lower_vacuous() && b.lower > gamma,
        _ => !b.upper_vacuous(n) && b.upper <= gamma,
    };

    let mut lo = 0.0;
    let mut lo_bounds = at_zero;
    let mut hi = cfg.sigma;
    let mut hi_bounds = percentile_bounds(samples, p, hi, alpha)?;
    while passes(&hi_bounds) {
        lo = hi;
        lo_bounds = hi_bounds;
        hi *= 2.0;
        hi_bounds = percentile_bounds(samples, p, hi, alpha)?;
        if hi > 1e9 * cfg.sigma {
            return Err(SmoothingError::Domain("radius bracket failed to close".into()));
        }
    }
    while hi - lo > RADIUS_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let b = percentile_bounds(samples, p, mid, alpha)?;
        if passes(&b) {
            lo = mid;
            lo_bounds = b;
        } else {
            hi = mid;
            hi_bounds = b;
        }
    }
    let vacuous_bracket = match decision {
        Decision::Anomaly => hi_bounds.lower_vacuous(),
        _ => hi_bounds.upper_vacuous(n),
    };
    Ok(L2Certificate {
        decision,
        radius: lo,
        bounds: lo_bounds,
        vacuous_bracket,
    })
}
