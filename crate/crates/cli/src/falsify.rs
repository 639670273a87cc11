//! Empirical check of certificates: perturb certified windows inside their
//! DTW balls and re-decide with fresh noise.

use std::fs;
use std::path::Path;

use dtwcert::certify::worst_case_witness;
use dtwcert::smoothing::special::binomial_cdf;
use dtwcert::smoothing::{certified_l2_radius, noise_rng, sample_scores_in_stream};
use dtwcert::{dtw_distance, keogh_envelope, slack_stats, CertificationResult, CertifyConfig, Decision, Norm, ScoreFn, Window};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{read_config_file, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{prepare, FALSIFY_STREAM, META_FILE, RESULTS_FILE};

/// Tail probability that flags a run as broken.
pub const FLIP_TAIL: f64 = 1e-6;
/// Attempts at a shaped probe before falling back to a plain ℓp move.
const SHAPED_ATTEMPTS: usize = 50;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FalsifyReport {
    pub probes: usize,
    /// Windows with a definite decision and `e > 0`.
    pub certified_windows: usize,
    /// Windows with a definite decision but `e = 0`.
    pub skipped_zero_radius: usize,
    pub skipped_abstain: usize,
    /// Re-decisions that landed on the opposite definite decision.
    pub flips: usize,
    /// Re-decisions that abstained.
    pub abstentions: usize,
    /// Probes with `DTW ≤ e` but ℓp distance above the certified `r`.
    pub containment_violations: usize,
    pub flip_limit: usize,
}

impl FalsifyReport {
    pub fn passed(&self) -> bool {
        self.flips < self.flip_limit && self.containment_violations == 0
    }
}

/// Smallest `k` with `P[Bin(probes, α) ≥ k] ≤ FLIP_TAIL`.
pub fn flip_limit(probes: usize, alpha: f64) -> Result<usize> {
    for k in 1..=probes {
        let tail = 1.0 - binomial_cdf(probes as u64, (k - 1) as u64, alpha)?;
        if tail <= FLIP_TAIL {
            return Ok(k);
        }
    }
    Ok(probes + 1)
}

fn scaled(x: &Window, d: &[f64], p: Norm, target: f64) -> Window {
    let norm = p.norm(d.iter().copied());
    let k = if norm > 0.0 { target / norm } else { 0.0 };
    x.with_values(x.values().iter().zip(d).map(|(v, di)| v + k * di).collect())
}

/// Per-window data the probes are shaped from.
struct Target {
    delta: Vec<f64>,
    upward: Vec<bool>,
    /// Direction of the worst-case witness, `witness − x`.
    witness: Vec<f64>,
}

/// One candidate `x'` with `DTW_w(x, x') ≤ e`.
///
/// Plain moves of ℓp norm `e` are always inside the ball, since the
/// diagonal path costs exactly that norm. Shaped moves follow the envelope
/// slack, the worst-case witness or a delay of the window, and are kept
/// only when they land inside.
fn probe<R: Rng>(rng: &mut R, x: &Window, target: &Target, w: usize, p: Norm, e: f64) -> Result<Window> {
    let dim = x.dim();
    let kind = rng.random_range(0..5);
    if kind >= 2 {
        for _ in 0..SHAPED_ATTEMPTS {
            let y = match kind {
                2 => {
                    // along the larger one-sided slack, past it by a random amount
                    let t: f64 = rng.random_range(0.0..2.0);
                    let jitter: f64 = rng.random_range(0.0..0.2) * e / (dim as f64).sqrt();
                    let d: Vec<f64> = target
                        .delta
                        .iter()
                        .zip(&target.upward)
                        .map(|(dv, &u)| if u { 1.0 } else { -1.0 } * dv * t + jitter * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    x.with_values(x.values().iter().zip(&d).map(|(v, di)| v + di).collect())
                }
                3 => {
                    // delay by up to w steps, blended back towards x
                    let shift = rng.random_range(1..=w.min(x.len().saturating_sub(1)).max(1));
                    let lambda: f64 = rng.random_range(0.0..=1.0);
                    let c = x.channels();
                    let values = (0..dim)
                        .map(|i| {
                            let (t, k) = (i / c, i % c);
                            let src = x.get(t.saturating_sub(shift), k);
                            x.values()[i] + lambda * (src - x.values()[i])
                        })
                        .collect();
                    x.with_values(values)
                }
                _ => {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let d: Vec<f64> = target.witness.iter().map(|v| sign * v).collect();
                    scaled(x, &d, p, e * rng.random_range(0.9..=1.0))
                }
            };
            if dtw_distance(x, &y, w, p)? <= e {
                return Ok(y);
            }
        }
    }
    let mut d: Vec<f64> = if kind == 1 {
        let mut d = vec![0.0; dim];
        d[rng.random_range(0..dim)] = 1.0;
        d
    } else {
        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    if rng.random_bool(0.5) {
        d.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(scaled(x, &d, p, e))
}

/// Probes certified windows and re-decides each probe with a fresh noise
/// stream. `results[i]` must belong to `windows[i]`.
pub fn falsify(
    windows: &[Window],
    results: &[CertificationResult],
    scorer: &dyn ScoreFn,
    cfg: &CertifyConfig,
    probes: usize,
) -> Result<FalsifyReport> {
    if windows.len() != results.len() {
        return Err(CliError::Data(format!("{} windows but {} results", windows.len(), results.len())));
    }
    let p = cfg.smoothing.noise.certified_norm();
    let mut report = FalsifyReport {
        flip_limit: flip_limit(probes, cfg.smoothing.alpha)?,
        ..Default::default()
    };
    let mut targets = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if r.abstained() {
            report.skipped_abstain += 1;
        } else if r.dtw_radius > 0.0 {
            targets.push(i);
        } else {
            report.skipped_zero_radius += 1;
        }
    }
    report.certified_windows = targets.len();
    if targets.is_empty() {
        return Ok(report);
    }
    let shapes: Vec<Target> = targets
        .iter()
        .map(|&i| {
            let x = &windows[i];
            let env = keogh_envelope(x, cfg.warp_window)?;
            let witness = match worst_case_witness(x, &env, results[i].l2_radius) {
                Ok(y) => y.values().iter().zip(x.values()).map(|(a, b)| a - b).collect(),
                Err(_) => vec![0.0; x.dim()],
            };
            let s = slack_stats(x, &env)?;
            Ok(Target {
                delta: s.delta,
                upward: s.upward,
                witness,
            })
        })
        .collect::<Result<_>>()?;
    let mut rng = noise_rng(cfg.smoothing.seed, FALSIFY_STREAM - 1);
    for j in 0..probes {
        let pick = rng.random_range(0..targets.len());
        let (x, res) = (&windows[targets[pick]], &results[targets[pick]]);
        let y = probe(&mut rng, x, &shapes[pick], cfg.warp_window, p, res.dtw_radius)?;
        let dist = p.norm(x.values().iter().zip(y.values()).map(|(a, b)| a - b));
        if dist > res.l2_radius * (1.0 + 1e-9) + 1e-12 {
            report.containment_violations += 1;
        }
        let s = sample_scores_in_stream(scorer, &y, &cfg.smoothing, cfg.denoiser, FALSIFY_STREAM + j as u64, cfg.smoothing.n)?;
        let again = certified_l2_radius(&s, cfg.gamma)?.decision;
        match (res.decision, again) {
            (_, Decision::Abstain) => report.abstentions += 1,
            (a, b) if a != b => report.flips += 1,
            _ => {}
        }
        report.probes += 1;
    }
    Ok(report)
}

/// Reads the columns of `results.csv` that falsification needs.
pub fn read_results(path: &Path) -> Result<Vec<CertificationResult>> {
    let text = fs::read_to_string(path).map_err(|_| CliError::Data(format!("missing results: {}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Data(format!("{}: no column {name}", path.display())))
    };
    let idx = [
        col("origin_index")?,
        col("decision")?,
        col("l2_radius")?,
        col("dtw_radius")?,
        col("slack_r")?,
        col("slack_m")?,
        col("q_lower")?,
        col("q_upper")?,
        col("score")?,
    ];
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("{}: malformed row {}", path.display(), row + 2));
        let get = |i: usize| cells.get(idx[i]).copied().ok_or_else(bad);
        let num = |i: usize| get(i)?.parse::<f64>().map_err(|_| bad());
        let int = |i: usize| get(i)?.parse::<usize>().map_err(|_| bad());
        out.push(CertificationResult {
            origin: int(0)?,
            decision: get(1)?.parse().map_err(|_| bad())?,
            l2_radius: num(2)?,
            dtw_radius: num(3)?,
            slack_r: num(4)?,
            slack_m: num(5)?,
            q_lower: int(6)?,
            q_upper: int(7)?,
            score: num(8)?,
            vacuous_bracket: false,
        });
    }
    Ok(out)
}

/// `falsify` subcommand: rebuilds the run recorded in `dir` and probes it.
pub fn cmd_falsify(dir: &Path, probes: usize) -> Result<FalsifyReport> {
    let meta = dir.join(META_FILE);
    if !meta.exists() {
        return Err(CliError::Data(format!("missing results: {} not found", meta.display())));
    }
    let cfg = RunConfig::from_map(&read_config_file(&meta)?)?;
    let results = read_results(&dir.join(RESULTS_FILE))?;
    let prepared = prepare(&cfg)?;
    let windows: Vec<Window> = results
        .iter()
        .map(|r| {
            prepared
                .test_windows
                .iter()
                .find(|w| w.origin() == r.origin)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("results row for origin {} has no matching window", r.origin)))
        })
        .collect::<Result<_>>()?;
    let report = falsify(&windows, &results, prepared.scorer.as_ref(), &prepared.certify_config(), probes)?;
    if report.containment_violations > 0 {
        return Err(CliError::Invariant(format!(
            "{} probes inside a DTW ball lie outside the certified norm ball",
            report.containment_violations
        )));
    }
    if report.flips >= report.flip_limit {
        return Err(CliError::Invariant(format!(
            "{} decision flips in {} probes; at most {} expected",
            report.flips,
            report.probes,
            report.flip_limit - 1
        )));
    }
    Ok(report)
}
