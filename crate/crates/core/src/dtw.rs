//! Banded dynamic time warping, Keogh envelopes and the Keogh lower bound.
//!
//! Multichannel windows use dependent DTW: the per-step cost between
//! timesteps `i` and `j` is the channel-wise ℓp norm `‖x_i − y_j‖_p`.
//! All routines restrict alignments to the Sakoe–Chiba band `|i − j| ≤ w`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::series::Window;

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("warping window must be at least 1")]
    BandTooSmall,
    #[error("warping window {w} is outside [1, {len}]")]
    InvalidWindow { w: usize, len: usize },
    #[error("unsupported norm {0:?}; expected 1, 2 or inf")]
    UnsupportedNorm(String),
    #[error("envelope was not built from this window")]
    EnvelopeMismatch,
}

/// Norm order used for per-step costs and path aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

impl Norm {
    /// `|d|^p` for finite orders, `|d|` for ∞.
    #[inline]
    fn cell(self, d: f64) -> f64 {
        match self {
            Norm::L1 | Norm::Inf => d.abs(),
            Norm::L2 => d * d,
        }
    }

    /// Combines two powered costs: sum for finite orders, max for ∞.
    #[inline]
    fn combine(self, acc: f64, cost: f64) -> f64 {
        match self {
            Norm::Inf => cost.max(acc),
            _ => cost + acc,
        }
    }

    #[inline]
    fn root(self, v: f64) -> f64 {
        match self {
            Norm::L2 => v.sqrt(),
            _ => v,
        }
    }

    /// ‖v‖_p of a vector.
    pub fn norm(self, v: impl IntoIterator<Item = f64>) -> f64 {
        self.root(v.into_iter().fold(0.0, |acc, d| self.combine(acc, self.cell(d))))
    }
}

impl FromStr for Norm {
    type Err = DtwError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::Inf),
            other => Err(DtwError::UnsupportedNorm(other.to_owned())),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "1",
            Norm::L2 => "2",
            Norm::Inf => "inf",
        })
    }
}

fn check_band(w: usize, len: usize) -> Result<(), DtwError> {
    if w == 0 {
        return Err(DtwError::BandTooSmall);
    }
    if w > len {
        return Err(DtwError::InvalidWindow { w, len });
    }
    Ok(())
}

fn check_shapes(a: &Window, b: &Window) -> Result<(), DtwError> {
    if !a.same_shape(b) {
        return Err(DtwError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.len(),
            a.channels(),
            b.len(),
            b.channels()
        )));
    }
    Ok(())
}

/// Powered per-step cost `‖x_i − y_j‖_p^p` (or `‖x_i − y_j‖_∞`).
#[inline]
fn step_cost(x: &[f64], y: &[f64], p: Norm) -> f64 {
    x.iter()
        .zip(y)
        .fold(0.0, |acc, (a, b)| p.combine(acc, p.cell(a - b)))
}

/// DTW distance between two equally shaped windows under band `w`.
///
/// Runs in `O(T·w·C)` time and `O(T)` memory.
pub fn dtw_distance(x: &Window, y: &Window, w: usize, p: Norm) -> Result<f64, DtwError> {
    check_shapes(x, y)?;
    let n = x.len();
    check_band(w, n)?;

    let mut prev = vec![f64::INFINITY; n];
    let mut curr = vec![f64::INFINITY; n];
    for i in 0..n {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        curr.iter_mut().for_each(|v| *v = f64::INFINITY);
        for j in lo..=hi {
            let cost = step_cost(x.row(i), y.row(j), p);
            let best = if i == 0 && j == 0 {
                None
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(prev[j]);
                    if j > 0 {
                        best = best.min(prev[j - 1]);
                    }
                }
                if j > 0 {
                    best = best.min(curr[j - 1]);
                }
                Some(best)
            };
            curr[j] = match best {
                None => cost,
                Some(acc) => p.combine(acc, cost),
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(p.root(prev[n - 1]))
}

/// Upper and lower Keogh envelopes of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    upper: Vec<f64>,
    lower: Vec<f64>,
    w: usize,
    source: Window,
}

impl Envelope {
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn warp_window(&self) -> usize {
        self.w
    }

    pub fn source(&self) -> &Window {
        &self.source
    }

    pub fn upper_at(&self, t: usize, c: usize) -> f64 {
        self.upper[t * self.source.channels() + c]
    }

    pub fn lower_at(&self, t: usize, c: usize) -> f64 {
        self.lower[t * self.source.channels() + c]
    }
}

/// Running max/min of `x` over `[i − w, i + w]`, clamped to the window.
///
/// Uses a monotone deque per channel, so each channel costs `O(T)`.
pub fn keogh_envelope(x: &Window, w: usize) -> Result<Envelope, DtwError> {
    let n = x.len();
    check_band(w, n)?;
    let c = x.channels();
    let mut upper = vec![0.0; n * c];
    let mut lower = vec![0.0; n * c];
    let mut maxq: VecDeque<usize> = VecDeque::with_capacity(2 * w + 2);
    let mut minq: VecDeque<usize> = VecDeque::with_capacity(2 * w + 2);
    for k in 0..c {
        maxq.clear();
        minq.clear();
        let at = |t: usize| x.get(t, k);
        let mut next = 0;
        for i in 0..n {
            let right = (i + w).min(n - 1);
            while next <= right {
                let v = at(next);
                while maxq.back().is_some_and(|&b| at(b) <= v) {
                    maxq.pop_back();
                }
                maxq.push_back(next);
                while minq.back().is_some_and(|&b| at(b) >= v) {
                    minq.pop_back();
                }
                minq.push_back(next);
                next += 1;
            }
            let left = i.saturating_sub(w);
            while maxq.front().is_some_and(|&f| f < left) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&f| f < left) {
                minq.pop_front();
            }
            upper[i * c + k] = at(maxq[0]);
            lower[i * c + k] = at(minq[0]);
        }
    }
    Ok(Envelope {
        upper,
        lower,
        w,
        source: x.clone(),
    })
}

/// How far a query value falls outside `[lo, hi]`.
#[inline]
pub(crate) fn exceedance(v: f64, lo: f64, hi: f64) -> f64 {
    if v > hi {
        v - hi
    } else if v < lo {
        lo - v
    } else {
        0.0
    }
}

/// Keogh lower bound of `DTW(env.source, y)`: the ℓp norm of the part of
/// `y` lying outside the envelope.
pub fn keogh_lower_bound(env: &Envelope, y: &Window, p: Norm) -> Result<f64, DtwError> {
    check_shapes(&env.source, y)?;
    let total = y
        .values()
        .iter()
        .zip(env.lower.iter().zip(&env.upper))
        .fold(0.0, |acc, (&v, (&lo, &hi))| {
            p.combine(acc, p.cell(exceedance(v, lo, hi)))
        });
    Ok(p.root(total))
}

/// Per-cell envelope slack of a window and its aggregate norms.
#[derive(Clone, Debug, PartialEq)]
pub struct SlackStats {
    /// `max(U − x, x − L)` per cell, row-major `(T, C)`.
    pub delta: Vec<f64>,
    /// Whether the larger one-sided slack of each cell points upward.
    pub upward: Vec<bool>,
    /// `R = sqrt(Σ_i ‖Δ_i‖²)`.
    pub total_norm: f64,
    /// `M = max_i ‖Δ_i‖`.
    pub max_row_norm: f64,
    pub channels: usize,
}

impl SlackStats {
    pub fn len(&self) -> usize {
        self.delta.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Euclidean norm of the slack at timestep `t`.
    pub fn row_norm(&self, t: usize) -> f64 {
        self.delta[t * self.channels..(t + 1) * self.channels]
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    /// ℓp norm of the slack over all cells.
    pub fn cell_norm(&self, p: Norm) -> f64 {
        p.norm(self.delta.iter().copied())
    }
}

pub fn slack_stats(x: &Window, env: &Envelope) -> Result<SlackStats, DtwError> {
    if env.source != *x {
        return Err(DtwError::EnvelopeMismatch);
    }
    let (delta, upward): (Vec<f64>, Vec<bool>) = x
        .values()
        .iter()
        .zip(env.lower.iter().zip(&env.upper))
        .map(|(&v, (&lo, &hi))| {
            let up = hi - v;
            let down = v - lo;
            if up >= down {
                (up, true)
            } else {
                (down, false)
            }
        })
        .unzip();
    let mut stats = SlackStats {
        delta,
        upward,
        total_norm: 0.0,
        max_row_norm: 0.0,
        channels: x.channels(),
    };
    let mut sq = 0.0;
    for t in 0..x.len() {
        let r = stats.row_norm(t);
        sq += r * r;
        stats.max_row_norm = stats.max_row_norm.max(r);
    }
    stats.total_norm = sq.sqrt();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(v: &[f64]) -> Window {
        Window::univariate(v).unwrap()
    }

    #[test]
    fn identical_windows_have_zero_distance() {
        let x = uni(&[0.3, -1.0, 2.5, 0.0]);
        for p in [Norm::L1, Norm::L2, Norm::Inf] {
            assert_eq!(dtw_distance(&x, &x, 2, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn warping_absorbs_a_shift() {
        // the endpoint pair (2,2) costs 1; (0,0),(0,1),(1,2),(2,2) pays nothing else
        let x = uni(&[0.0, 1.0, 0.0]);
        let y = uni(&[0.0, 0.0, 1.0]);
        assert_eq!(dtw_distance(&x, &y, 1, Norm::L2).unwrap(), 1.0);
        assert!(dtw_distance(&x, &y, 1, Norm::L2).unwrap() <= x.l2_distance(&y));
    }

    #[test]
    fn band_and_shape_errors() {
        let x = uni(&[0.0, 1.0]);
        assert_eq!(dtw_distance(&x, &x, 0, Norm::L2), Err(DtwError::BandTooSmall));
        assert!(matches!(dtw_distance(&x, &x, 3, Norm::L2), Err(DtwError::InvalidWindow { .. })));
        let y = uni(&[0.0, 1.0, 2.0]);
        assert!(matches!(dtw_distance(&x, &y, 1, Norm::L2), Err(DtwError::ShapeMismatch(_))));
        assert!(matches!("3".parse::<Norm>(), Err(DtwError::UnsupportedNorm(_))));
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Inf);
    }

    #[test]
    fn envelope_examples() {
        let env = keogh_envelope(&uni(&[0.0, 1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(env.upper(), &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(env.lower(), &[0.0, 0.0, 1.0, 2.0]);
        let env = keogh_envelope(&uni(&[2.0; 5]), 3).unwrap();
        assert!(env.upper().iter().chain(env.lower()).all(|&v| v == 2.0));
        assert!(keogh_envelope(&uni(&[1.0]), 2).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        let env = keogh_envelope(&uni(&[0.0, 0.0]), 1).unwrap();
        assert_eq!(keogh_lower_bound(&env, &uni(&[3.0, 4.0]), Norm::L2).unwrap(), 5.0);
        assert_eq!(keogh_lower_bound(&env, &uni(&[3.0, -4.0]), Norm::L1).unwrap(), 7.0);
        assert_eq!(keogh_lower_bound(&env, &uni(&[3.0, -4.0]), Norm::Inf).unwrap(), 4.0);
        let env = keogh_envelope(&uni(&[0.0, 1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(keogh_lower_bound(&env, &uni(&[0.5, 1.0, 1.5, 2.5]), Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn slack_examples() {
        let x = uni(&[0.0, 1.0, 2.0, 3.0]);
        let env = keogh_envelope(&x, 1).unwrap();
        let s = slack_stats(&x, &env).unwrap();
        assert_eq!(s.delta, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.upward, vec![true, true, true, false]);
        assert_eq!(s.total_norm, 2.0);
        assert_eq!(s.max_row_norm, 1.0);

        let c = uni(&[4.0; 6]);
        let s = slack_stats(&c, &keogh_envelope(&c, 2).unwrap()).unwrap();
        assert_eq!((s.total_norm, s.max_row_norm), (0.0, 0.0));

        // one nonzero slack row: M == R
        let spike = uni(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        let s = slack_stats(&spike, &keogh_envelope(&spike, 1).unwrap()).unwrap();
        assert!(s.max_row_norm <= s.total_norm);

        let other = uni(&[0.0, 1.0, 2.0, 4.0]);
        assert_eq!(slack_stats(&other, &env), Err(DtwError::EnvelopeMismatch));
    }

    #[test]
    fn multichannel_slack_uses_row_norms() {
        let x = Window::new(vec![0.0, 0.0, 3.0, 4.0], 2, 2, 1).unwrap();
        let s = slack_stats(&x, &keogh_envelope(&x, 1).unwrap()).unwrap();
        assert_eq!(s.delta, vec![3.0, 4.0, 3.0, 4.0]);
        assert_eq!(s.max_row_norm, 5.0);
        assert!((s.total_norm - 50f64.sqrt()).abs() < 1e-15);
    }
}
