//! Base anomaly scores `f(x)` and threshold selection.
//!
//! Built-in scorers are classical and deterministic: k-nearest-neighbour
//! distance, PCA reconstruction residual and max-abs z-score. Any other
//! model can be plugged in through [`external::ExternalScorer`].

pub mod external;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::metrics::point_adjusted_f1;
use crate::series::Window;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("rank {rank} exceeds flattened dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },
    #[error("window shape {found} does not match the fitted shape {expected}")]
    ShapeMismatch { expected: String, found: String },
    #[error("no scores to select a threshold from")]
    EmptyScores,
    #[error("labels contain no anomalies; F1 is undefined")]
    NoPositiveClass,
    #[error("cannot reach external scorer: {0}")]
    ConnectFailure(String),
    #[error("external scorer timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("external scorer reported an error: {0}")]
    Remote(String),
    #[error("scorer returned a non-finite score")]
    NonFiniteScore,
}

/// An anomaly score function over windows.
pub trait ScoreFn: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, x: &Window) -> Result<f64, DetectorError>;

    /// Whether `score` may be called concurrently.
    fn reentrant(&self) -> bool {
        true
    }

    /// Scores in request order.
    fn score_batch(&self, xs: &[Window]) -> Result<Vec<f64>, DetectorError> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

/// Wraps a closure as a score function.
pub struct FnScore<F> {
    name: String,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&Window) -> f64 + Send + Sync,
{
    pub fn new(name: &str, f: F) -> Self {
        Self { name: name.to_owned(), f }
    }
}

impl<F> ScoreFn for FnScore<F>
where
    F: Fn(&Window) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, x: &Window) -> Result<f64, DetectorError> {
        Ok((self.f)(x))
    }
}

fn shape_str(len: usize, channels: usize) -> String {
    format!("{len}x{channels}")
}

/// Flattened training windows sharing one shape.
#[derive(Clone, Debug)]
struct TrainMatrix {
    data: Vec<f64>,
    rows: usize,
    len: usize,
    channels: usize,
}

impl TrainMatrix {
    fn new(windows: &[Window]) -> Result<Self, DetectorError> {
        let first = windows.first().ok_or(DetectorError::EmptyTrainSet)?;
        let mut data = Vec::with_capacity(windows.len() * first.dim());
        for w in windows {
            if !w.same_shape(first) {
                return Err(DetectorError::ShapeMismatch {
                    expected: shape_str(first.len(), first.channels()),
                    found: shape_str(w.len(), w.channels()),
                });
            }
            data.extend_from_slice(w.values());
        }
        Ok(Self {
            data,
            rows: windows.len(),
            len: first.len(),
            channels: first.channels(),
        })
    }

    fn dim(&self) -> usize {
        self.len * self.channels
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim()..(i + 1) * self.dim()]
    }

    fn check(&self, x: &Window) -> Result<(), DetectorError> {
        if x.len() != self.len || x.channels() != self.channels {
            return Err(DetectorError::ShapeMismatch {
                expected: shape_str(self.len, self.channels),
                found: shape_str(x.len(), x.channels()),
            });
        }
        Ok(())
    }
}

/// Mean Euclidean distance to the `k` nearest training windows.
#[derive(Clone, Debug)]
pub struct KnnScorer {
    train: TrainMatrix,
    k: usize,
}

impl KnnScorer {
    pub fn fit(train: &[Window], k: usize) -> Result<Self, DetectorError> {
        let train = TrainMatrix::new(train)?;
        if k == 0 || k > train.rows {
            return Err(DetectorError::InvalidParam(format!(
                "k must lie in [1, {}], got {k}",
                train.rows
            )));
        }
        Ok(Self { train, k })
    }
}

impl ScoreFn for KnnScorer {
    fn name(&self) -> &str {
        "knn"
    }

    fn score(&self, x: &Window) -> Result<f64, DetectorError> {
        self.train.check(x)?;
        let mut d2: Vec<f64> = (0..self.train.rows)
            .map(|i| {
                self.train
                    .row(i)
                    .iter()
                    .zip(x.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let k = self.k;
        if k < d2.len() {
            d2.select_nth_unstable_by(k - 1, f64::total_cmp);
        }
        let mut nearest = d2[..k].to_vec();
        nearest.sort_by(f64::total_cmp);
        Ok(nearest.iter().map(|v| v.sqrt()).sum::<f64>() / k as f64)
    }
}

/// Norm of the residual after projecting onto the leading principal
/// components of the training windows.
#[derive(Clone, Debug)]
pub struct ReconstructionScorer {
    mean: Vec<f64>,
    /// Orthonormal basis vectors, one per retained component.
    basis: Vec<Vec<f64>>,
    len: usize,
    channels: usize,
    requested_rank: usize,
}

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

impl ReconstructionScorer {
    pub fn fit(train: &[Window], rank: usize) -> Result<Self, DetectorError> {
        let m = TrainMatrix::new(train)?;
        let dim = m.dim();
        if rank == 0 {
            return Err(DetectorError::InvalidParam("rank must be at least 1".into()));
        }
        if rank > dim {
            return Err(DetectorError::RankTooLarge { rank, dim });
        }
        let mut mean = vec![0.0; dim];
        for i in 0..m.rows {
            for (acc, v) in mean.iter_mut().zip(m.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m.rows as f64);
        let centered = DMatrix::from_fn(m.rows, dim, |i, j| m.row(i)[j] - mean[j]);
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors were requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
        let basis: Vec<Vec<f64>> = order
            .into_iter()
            .filter(|&i| svd.singular_values[i] > RANK_TOLERANCE * s_max)
            .take(rank)
            .map(|i| v_t.row(i).iter().copied().collect())
            .collect();
        Ok(Self {
            mean,
            basis,
            len: m.len,
            channels: m.channels,
            requested_rank: rank,
        })
    }

    pub fn effective_rank(&self) -> usize {
        self.basis.len()
    }

    /// The training covariance had fewer usable directions than requested.
    pub fn degenerate(&self) -> bool {
        self.basis.len() < self.requested_rank
    }
}

impl ScoreFn for ReconstructionScorer {
    fn name(&self) -> &str {
        "reconstruction"
    }

    fn score(&self, x: &Window) -> Result<f64, DetectorError> {
        if x.len() != self.len || x.channels() != self.channels {
            return Err(DetectorError::ShapeMismatch {
                expected: shape_str(self.len, self.channels),
                found: shape_str(x.len(), x.channels()),
            });
        }
        let mut residual: Vec<f64> = x.values().iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for b in &self.basis {
            let coeff: f64 = b.iter().zip(&residual).map(|(u, r)| u * r).sum();
            residual.iter_mut().zip(b).for_each(|(r, u)| *r -= coeff * u);
        }
        Ok(residual.iter().map(|r| r * r).sum::<f64>().sqrt())
    }
}

/// `max |x[i, k]|` over a normalized window.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZMaxScorer;

impl ScoreFn for ZMaxScorer {
    fn name(&self) -> &str {
        "zmax"
    }

    fn score(&self, x: &Window) -> Result<f64, DetectorError> {
        Ok(x.values().iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdMethod {
    /// Linear-interpolated quantile of benign scores.
    TrainQuantile(f64),
    /// Midpoint threshold maximizing point-adjusted F1 on labeled scores.
    BestF1Scan,
}

impl fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMethod::TrainQuantile(q) => write!(f, "train-quantile:{q}"),
            ThresholdMethod::BestF1Scan => f.write_str("best-f1-scan"),
        }
    }
}

impl FromStr for ThresholdMethod {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "best-f1-scan" | "best-f1" => return Ok(Self::BestF1Scan),
            "train-quantile" | "quantile" => return Ok(Self::TrainQuantile(0.99)),
            _ => {}
        }
        if let Some(q) = s.strip_prefix("train-quantile:") {
            let q: f64 = q
                .parse()
                .map_err(|_| DetectorError::InvalidParam(format!("bad quantile {q:?}")))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(DetectorError::InvalidParam(format!("quantile {q} outside [0, 1]")));
            }
            return Ok(Self::TrainQuantile(q));
        }
        Err(DetectorError::InvalidParam(format!("unknown threshold method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub gamma: f64,
    pub method: ThresholdMethod,
}

/// Linear interpolation between order statistics at position `(n − 1)·q`.
pub fn quantile_linear(scores: &[f64], q: f64) -> Result<f64, DetectorError> {
    if scores.is_empty() {
        return Err(DetectorError::EmptyScores);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Picks γ; windows with score `> γ` are flagged.
pub fn select_threshold(scores: &[f64], labels: Option<&[u8]>, method: ThresholdMethod) -> Result<Threshold, DetectorError> {
    if scores.is_empty() {
        return Err(DetectorError::EmptyScores);
    }
    let gamma = match method {
        ThresholdMethod::TrainQuantile(q) => quantile_linear(scores, q)?,
        ThresholdMethod::BestF1Scan => {
            let labels = labels.ok_or_else(|| DetectorError::InvalidParam("best-f1-scan needs labels".into()))?;
            if labels.len() != scores.len() {
                return Err(DetectorError::InvalidParam(format!(
                    "{} scores but {} labels",
                    scores.len(),
                    labels.len()
                )));
            }
            if !labels.contains(&1) {
                return Err(DetectorError::NoPositiveClass);
            }
            let mut unique = scores.to_vec();
            unique.sort_by(f64::total_cmp);
            unique.dedup();
            let candidates: Vec<f64> = if unique.len() == 1 {
                unique.clone()
            } else {
                unique.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect()
            };
            let mut best = (f64::NEG_INFINITY, candidates[0]);
            let mut pred = vec![0u8; scores.len()];
            for &g in &candidates {
                for (p, &s) in pred.iter_mut().zip(scores) {
                    *p = u8::from(s > g);
                }
                let f1 = point_adjusted_f1(&pred, labels).expect("lengths checked above");
                if f1 > best.0 {
                    best = (f1, g);
                }
            }
            best.1
        }
    };
    Ok(Threshold { gamma, method })
}
