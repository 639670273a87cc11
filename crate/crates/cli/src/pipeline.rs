//! End-to-end certification run: load, normalize, window, fit, calibrate,
//! certify, summarize and write outputs.

use std::fs;
use std::path::{Path, PathBuf};

use dtwcert::certify::{certify_all, CertifyConfig};
use dtwcert::detectors::external::{ExternalConfig, ExternalScorer};
use dtwcert::detectors::{select_threshold, KnnScorer, ReconstructionScorer, ThresholdMethod, ZMaxScorer};
use dtwcert::format::fmt_float;
use dtwcert::metrics::{
    certified_curves, point_adjusted_f1, radii_stats, roc_auc, CertifiedCurves, CertifiedItem, MetricsError,
};
use dtwcert::series::{load_csv, sliding_windows, window_labels};
use dtwcert::smoothing::sample_scores_in_stream;
use dtwcert::{CertificationResult, LabeledDataset, ScoreFn, Window};
use rayon::prelude::*;

use crate::config::{DetectorKind, RunConfig};
use crate::error::{CliError, Result};

/// Noise streams for calibration draws start here; test windows use their
/// origin index, which stays far below.
pub const CALIB_STREAM: u64 = 1 << 32;
/// Streams for threshold scans over test windows.
pub const SCAN_STREAM: u64 = CALIB_STREAM + (1 << 31);
/// Streams for falsification re-decisions.
pub const FALSIFY_STREAM: u64 = 1 << 33;

pub const RESULTS_FILE: &str = "results.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const META_FILE: &str = "run.meta";

pub const RESULTS_HEADER: &str =
    "origin_index,label,decision,l2_radius,dtw_radius,slack_r,slack_m,q_lower,q_upper,abstain,score";
pub const STATS_HEADER: &str =
    "f1,roc_auc,radii_mean,radii_max,radii_std,certified_proportion,abstain_proportion,gamma,windows";
pub const CURVES_HEADER: &str =
    "budget,evasion_certified_accuracy,evasion_certified_f1,availability_certified_accuracy,availability_certified_f1";

/// Everything needed to certify test windows.
pub struct Prepared {
    pub config: RunConfig,
    pub test_windows: Vec<Window>,
    pub labels: Vec<u8>,
    pub scorer: Box<dyn ScoreFn>,
    pub gamma: f64,
    /// Facts about the run recorded next to the config in `run.meta`.
    pub facts: Vec<(String, String)>,
}

impl Prepared {
    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            smoothing: self.config.smoothing.clone(),
            warp_window: self.config.warp_window,
            gamma: self.gamma,
            denoiser: self.config.denoiser,
        }
    }
}

/// Summary row of `stats.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub f1: f64,
    /// NaN when the test labels contain one class only.
    pub roc_auc: f64,
    pub radii_mean: f64,
    pub radii_max: f64,
    pub radii_std: f64,
    pub certified_proportion: f64,
    pub abstain_proportion: f64,
    pub gamma: f64,
    pub windows: usize,
}

pub struct RunOutput {
    pub results: Vec<CertificationResult>,
    pub labels: Vec<u8>,
    pub stats: RunStats,
    pub curves: CertifiedCurves,
    pub meta: Vec<(String, String)>,
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing --{what}")))
}

/// Evenly spaced subset of at most `cap` items, keeping order.
fn spread(items: &[Window], cap: usize) -> Vec<Window> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|i| items[i * items.len() / cap].clone()).collect()
}

fn build_scorer(cfg: &RunConfig, fit: &[Window], facts: &mut Vec<(String, String)>) -> Result<Box<dyn ScoreFn>> {
    Ok(match cfg.detector {
        DetectorKind::Knn => Box::new(KnnScorer::fit(fit, cfg.knn_k.min(fit.len()))?),
        DetectorKind::Reconstruction => {
            let rec = ReconstructionScorer::fit(fit, cfg.rank)?;
            facts.push(("effective_rank".into(), rec.effective_rank().to_string()));
            if rec.degenerate() {
                eprintln!(
                    "warning: training covariance has rank {} < {}; using the smaller rank",
                    rec.effective_rank(),
                    cfg.rank
                );
            }
            Box::new(rec)
        }
        DetectorKind::ZMax => Box::new(ZMaxScorer),
        DetectorKind::External => {
            let base = match (&cfg.scorer_cmd, &cfg.scorer_addr) {
                (Some(cmd), _) => ExternalConfig::stdio(cmd),
                (None, Some(addr)) => ExternalConfig::tcp(addr),
                (None, None) => return Err(CliError::Usage("detector external needs --scorer-cmd".into())),
            };
            let ext = ExternalConfig {
                pool_size: cfg.workers.max(1),
                timeout: cfg.scorer_timeout,
                ..base
            };
            Box::new(ExternalScorer::connect(&ext)?)
        }
    })
}

/// Plug-in smoothed score of each window from `calib_samples` draws.
fn smoothed_scores(cfg: &RunConfig, scorer: &dyn ScoreFn, windows: &[Window], stream: u64) -> Result<Vec<f64>> {
    let one = |(i, x): (usize, &Window)| -> Result<f64> {
        let s = sample_scores_in_stream(scorer, x, &cfg.smoothing, cfg.denoiser, stream + i as u64, cfg.calib_samples)?;
        Ok(s.empirical_percentile(cfg.smoothing.percentile))
    };
    if scorer.reentrant() {
        windows.par_iter().enumerate().map(one).collect()
    } else {
        windows.iter().enumerate().map(one).collect()
    }
}

/// Loads data, fits the detector and fixes `γ`.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, _) = load_csv(require(&cfg.train, "train")?, None)?;
    let (test, labels) = load_csv(require(&cfg.data, "data")?, Some(require(&cfg.labels, "labels")?))?;
    let ds = LabeledDataset::normalized(train, test, labels.expect("labels path was given"))?;
    let train_windows = sliding_windows(&ds.train, cfg.seq_len)?;
    let test_windows = sliding_windows(&ds.test, cfg.seq_len)?;
    let labels = window_labels(&test_windows, &ds.test_labels);
    if train_windows.len() < 2 {
        return Err(CliError::Data(format!(
            "need at least 2 training windows, got {}",
            train_windows.len()
        )));
    }
    // fit on the first half of the training windows, calibrate on the second
    let half = train_windows.len() / 2;
    let fit = spread(&train_windows[..half], cfg.max_fit_windows);
    let calib = spread(&train_windows[half..], cfg.max_fit_windows);
    let mut facts = vec![
        ("fit_windows".to_owned(), fit.len().to_string()),
        ("calib_windows".to_owned(), calib.len().to_string()),
        ("test_windows".to_owned(), test_windows.len().to_string()),
    ];
    let scorer = build_scorer(cfg, &fit, &mut facts)?;
    facts.push(("detector_name".into(), scorer.name().to_owned()));
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => {
            let threshold = match cfg.threshold {
                ThresholdMethod::TrainQuantile(_) => {
                    let scores = smoothed_scores(cfg, scorer.as_ref(), &calib, CALIB_STREAM)?;
                    select_threshold(&scores, None, cfg.threshold)?
                }
                ThresholdMethod::BestF1Scan => {
                    let scores = smoothed_scores(cfg, scorer.as_ref(), &test_windows, SCAN_STREAM)?;
                    select_threshold(&scores, Some(&labels), cfg.threshold)?
                }
            };
            threshold.gamma
        }
    };
    if !gamma.is_finite() {
        return Err(CliError::Data(format!("threshold selection produced a non-finite gamma {gamma}")));
    }
    Ok(Prepared {
        config: cfg.clone(),
        test_windows,
        labels,
        scorer,
        gamma,
        facts,
    })
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn summarize(results: &[CertificationResult], labels: &[u8], gamma: f64) -> Result<RunStats> {
    let pred: Vec<u8> = results.iter().map(|r| u8::from(r.unperturbed_anomaly(gamma))).collect();
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let radii: Vec<f64> = results.iter().map(|r| r.dtw_radius).collect();
    let metric = |e: MetricsError| CliError::Data(e.to_string());
    let roc_auc = match roc_auc(&scores, labels) {
        Ok(v) => v,
        Err(MetricsError::SingleClass) => f64::NAN,
        Err(e) => return Err(metric(e)),
    };
    let radii = radii_stats(&radii).map_err(metric)?;
    Ok(RunStats {
        f1: point_adjusted_f1(&pred, labels).map_err(metric)?,
        roc_auc,
        radii_mean: radii.mean,
        radii_max: radii.max,
        radii_std: radii.std,
        certified_proportion: radii.certified_proportion,
        abstain_proportion: results.iter().filter(|r| r.abstained()).count() as f64 / results.len() as f64,
        gamma,
        windows: results.len(),
    })
}

pub fn certified_items(results: &[CertificationResult], labels: &[u8], gamma: f64) -> Vec<CertifiedItem> {
    results
        .iter()
        .zip(labels)
        .map(|(r, &label)| CertifiedItem {
            label,
            decision: r.decision,
            dtw_radius: r.dtw_radius,
            unperturbed_anomaly: r.unperturbed_anomaly(gamma),
        })
        .collect()
}

/// Runs the whole pipeline in memory.
pub fn run_certify(cfg: &RunConfig) -> Result<RunOutput> {
    in_pool(cfg.workers, || {
        let prepared = prepare(cfg)?;
        let cc = prepared.certify_config();
        let results = certify_all(&prepared.test_windows, prepared.scorer.as_ref(), &cc)?;
        let stats = summarize(&results, &prepared.labels, prepared.gamma)?;
        let curves = certified_curves(&certified_items(&results, &prepared.labels, prepared.gamma), &cfg.budgets);
        let mut meta = RunConfig {
            gamma: Some(prepared.gamma),
            ..cfg.clone()
        }
        .to_entries();
        meta.push(("version".into(), env!("CARGO_PKG_VERSION").into()));
        meta.push(("normalization".into(), "zscore-train std-floor=1e-8".into()));
        meta.push((
            "abstain_policy".into(),
            "never certified; plug-in score decides unattacked cells and F1".into(),
        ));
        meta.extend(prepared.facts.iter().cloned());
        Ok(RunOutput {
            results,
            labels: prepared.labels,
            stats,
            curves,
            meta,
        })
    })?
}

pub fn results_csv(results: &[CertificationResult], labels: &[u8]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for (r, label) in results.iter().zip(labels) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.origin,
            label,
            r.decision,
            fmt_float(r.l2_radius),
            fmt_float(r.dtw_radius),
            fmt_float(r.slack_r),
            fmt_float(r.slack_m),
            r.q_lower,
            r.q_upper,
            u8::from(r.abstained()),
            fmt_float(r.score),
        ));
    }
    out
}

pub fn stats_csv(s: &RunStats) -> String {
    let row = [
        s.f1,
        s.roc_auc,
        s.radii_mean,
        s.radii_max,
        s.radii_std,
        s.certified_proportion,
        s.abstain_proportion,
        s.gamma,
    ]
    .map(fmt_float)
    .join(",");
    format!("{STATS_HEADER}\n{row},{}\n", s.windows)
}

pub fn curves_csv(c: &CertifiedCurves) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for i in 0..c.budgets.len() {
        let row = [
            c.budgets[i],
            c.evasion_accuracy[i],
            c.evasion_f1[i],
            c.availability_accuracy[i],
            c.availability_f1[i],
        ]
        .map(fmt_float)
        .join(",");
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn meta_text(meta: &[(String, String)]) -> String {
    meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Writes every file to a temporary name first and renames them only once
/// all writes succeed. Nothing is left behind on failure.
pub fn write_atomically(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = |name: &str| dir.join(format!(".{name}.tmp"));
    let cleanup = |renamed: &[&str]| {
        for (name, _) in files {
            let _ = fs::remove_file(tmp(name));
        }
        for name in renamed {
            let _ = fs::remove_file(dir.join(name));
        }
    };
    for (name, contents) in files {
        if let Err(e) = fs::write(tmp(name), contents) {
            cleanup(&[]);
            return Err(e.into());
        }
    }
    let mut renamed = Vec::new();
    for (name, _) in files {
        if let Err(e) = fs::rename(tmp(name), dir.join(name)) {
            cleanup(&renamed);
            return Err(e.into());
        }
        renamed.push(*name);
    }
    Ok(())
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    write_atomically(
        dir,
        &[
            (RESULTS_FILE, results_csv(&out.results, &out.labels)),
            (STATS_FILE, stats_csv(&out.stats)),
            (CURVES_FILE, curves_csv(&out.curves)),
            (META_FILE, meta_text(&out.meta)),
        ],
    )
}

/// `certify` subcommand: run, then write outputs into `cfg.out`.
pub fn cmd_certify(cfg: &RunConfig) -> Result<RunOutput> {
    let out = run_certify(cfg)?;
    write_outputs(&out, &cfg.out)?;
    Ok(out)
}
