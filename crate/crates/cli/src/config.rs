//! Run configuration: flat `key = value` files, flag overrides and defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use dtwcert::detectors::ThresholdMethod;
use dtwcert::format::fmt_float;
use dtwcert::metrics::default_budgets;
use dtwcert::smoothing::Denoiser;
use dtwcert::SmoothingConfig;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "DTWCERT_SEED";

/// Keys written to `run.meta` that describe a finished run rather than
/// configure one. They are accepted and ignored when a meta file is read
/// back as a config.
const DERIVED_KEYS: &[&str] = &[
    "version",
    "normalization",
    "abstain_policy",
    "detector_name",
    "fit_windows",
    "calib_windows",
    "test_windows",
    "effective_rank",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    Knn,
    Reconstruction,
    ZMax,
    External,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Knn => "knn",
            DetectorKind::Reconstruction => "reconstruction",
            DetectorKind::ZMax => "zmax",
            DetectorKind::External => "external",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "reconstruction" | "pca" => Ok(Self::Reconstruction),
            "zmax" => Ok(Self::ZMax),
            "external" => Ok(Self::External),
            other => Err(CliError::Usage(format!(
                "unknown detector {other:?}; expected knn, reconstruction, zmax or external"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub out: PathBuf,
    pub smoothing: SmoothingConfig,
    pub denoiser: Denoiser,
    pub seq_len: usize,
    pub warp_window: usize,
    pub detector: DetectorKind,
    pub knn_k: usize,
    pub rank: usize,
    pub threshold: ThresholdMethod,
    /// Fixed γ; skips threshold selection when set.
    pub gamma: Option<f64>,
    /// Noisy draws per calibration window.
    pub calib_samples: usize,
    /// Cap on training windows used to fit, and separately to calibrate.
    pub max_fit_windows: usize,
    /// Worker threads; 0 picks one per core.
    pub workers: usize,
    pub scorer_cmd: Option<String>,
    pub scorer_addr: Option<String>,
    pub scorer_timeout: Duration,
    pub budgets: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            labels: None,
            train: None,
            out: PathBuf::from("out"),
            smoothing: SmoothingConfig::default(),
            denoiser: Denoiser::Identity,
            seq_len: 50,
            warp_window: 4,
            detector: DetectorKind::Knn,
            knn_k: 5,
            rank: 8,
            threshold: ThresholdMethod::TrainQuantile(0.99),
            gamma: None,
            calib_samples: 200,
            max_fit_windows: 200,
            workers: 0,
            scorer_cmd: None,
            scorer_addr: None,
            scorer_timeout: Duration::from_secs(30),
            budgets: default_budgets(),
        }
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        map.insert(key, value.trim().to_owned());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_owned())
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_budgets(value: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("invalid budgets {value:?}; expected start:stop:step"));
    let parts: Vec<f64> = value
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start >= 0.0 && stop >= start && step > 0.0 && start.is_finite() && stop.is_finite()) {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

fn format_budgets(b: &[f64]) -> String {
    match b {
        [] => String::new(),
        [only] => format!("{}:{}:1", fmt_float(*only), fmt_float(*only)),
        [first, second, ..] => format!(
            "{}:{}:{}",
            fmt_float(*first),
            fmt_float(b[b.len() - 1]),
            fmt_float(second - first)
        ),
    }
}

impl RunConfig {
    /// Builds a config from defaults overlaid with `map`. Unknown keys are
    /// usage errors.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "data" => cfg.data = optional(v).map(PathBuf::from),
                "labels" => cfg.labels = optional(v).map(PathBuf::from),
                "train" => cfg.train = optional(v).map(PathBuf::from),
                "out" => cfg.out = PathBuf::from(v),
                "seed" => cfg.smoothing.seed = parse(key, v)?,
                "sigma" => cfg.smoothing.sigma = parse(key, v)?,
                "samples" => cfg.smoothing.n = parse(key, v)?,
                "percentile" => cfg.smoothing.percentile = parse(key, v)?,
                "alpha" => cfg.smoothing.alpha = parse(key, v)?,
                "noise" => cfg.smoothing.noise = v.parse()?,
                "denoiser" => cfg.denoiser = v.parse()?,
                "seq_len" => cfg.seq_len = parse(key, v)?,
                "warp_window" => cfg.warp_window = parse(key, v)?,
                "detector" => cfg.detector = v.parse()?,
                "knn_k" => cfg.knn_k = parse(key, v)?,
                "rank" => cfg.rank = parse(key, v)?,
                "threshold_method" => cfg.threshold = v.parse()?,
                "gamma" => cfg.gamma = if v.is_empty() { None } else { Some(parse(key, v)?) },
                "calib_samples" => cfg.calib_samples = parse(key, v)?,
                "max_fit_windows" => cfg.max_fit_windows = parse(key, v)?,
                "workers" => cfg.workers = parse(key, v)?,
                "scorer_cmd" => cfg.scorer_cmd = optional(v),
                "scorer_addr" => cfg.scorer_addr = optional(v),
                "scorer_timeout_ms" => cfg.scorer_timeout = Duration::from_millis(parse(key, v)?),
                "budgets" => cfg.budgets = parse_budgets(v)?,
                k if DERIVED_KEYS.contains(&k) => {}
                other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
            }
        }
        if cfg.scorer_cmd.is_some() || cfg.scorer_addr.is_some() {
            if map.contains_key("detector") && cfg.detector != DetectorKind::External {
                return Err(CliError::Usage(format!(
                    "an external scorer was given but detector is {}",
                    cfg.detector
                )));
            }
            cfg.detector = DetectorKind::External;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if self.seq_len == 0 {
            return Err(CliError::Usage("seq_len must be at least 1".into()));
        }
        if self.warp_window == 0 {
            return Err(CliError::Usage("warp_window must be at least 1".into()));
        }
        if self.warp_window > self.seq_len {
            return Err(CliError::Usage(format!(
                "warp_window {} exceeds seq_len {}",
                self.warp_window, self.seq_len
            )));
        }
        if self.knn_k == 0 || self.rank == 0 {
            return Err(CliError::Usage("knn_k and rank must be at least 1".into()));
        }
        if self.calib_samples == 0 || self.max_fit_windows < 1 {
            return Err(CliError::Usage("calib_samples and max_fit_windows must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() {
                return Err(CliError::Usage("gamma must be finite".into()));
            }
        }
        if self.detector == DetectorKind::External && self.scorer_cmd.is_none() && self.scorer_addr.is_none() {
            return Err(CliError::Usage("detector external needs scorer_cmd or scorer_addr".into()));
        }
        if self.scorer_cmd.is_some() && self.scorer_addr.is_some() {
            return Err(CliError::Usage("give either scorer_cmd or scorer_addr, not both".into()));
        }
        Ok(())
    }

    /// Key/value pairs in a stable order; reading them back with
    /// [`RunConfig::from_map`] reproduces the config.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = vec![
            ("data", path(&self.data)),
            ("labels", path(&self.labels)),
            ("train", path(&self.train)),
            ("out", self.out.display().to_string()),
            ("seed", self.smoothing.seed.to_string()),
            ("sigma", fmt_float(self.smoothing.sigma)),
            ("samples", self.smoothing.n.to_string()),
            ("percentile", fmt_float(self.smoothing.percentile)),
            ("alpha", fmt_float(self.smoothing.alpha)),
            ("noise", self.smoothing.noise.to_string()),
            ("denoiser", self.denoiser.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("warp_window", self.warp_window.to_string()),
            ("detector", self.detector.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("rank", self.rank.to_string()),
            ("threshold_method", self.threshold.to_string()),
            ("calib_samples", self.calib_samples.to_string()),
            ("max_fit_windows", self.max_fit_windows.to_string()),
            ("workers", self.workers.to_string()),
            ("scorer_cmd", self.scorer_cmd.clone().unwrap_or_default()),
            ("scorer_addr", self.scorer_addr.clone().unwrap_or_default()),
            ("scorer_timeout_ms", self.scorer_timeout.as_millis().to_string()),
            ("budgets", format_budgets(&self.budgets)),
        ];
        if let Some(g) = self.gamma {
            out.push(("gamma", fmt_float(g)));
        }
        out.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }
}

/// Layers defaults, the `DTWCERT_SEED` fallback, an optional config file
/// and flag overrides, in increasing precedence.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[(&str, Option<String>)],
    env_seed: Option<String>,
) -> Result<RunConfig> {
    let mut map = BTreeMap::new();
    if let Some(seed) = env_seed.filter(|s| !s.trim().is_empty()) {
        map.insert("seed".to_owned(), seed.trim().to_owned());
    }
    if let Some(path) = file {
        map.extend(read_config_file(path)?);
    }
    for (key, value) in overrides {
        if let Some(v) = value {
            map.insert(normalize_key(key), v.clone());
        }
    }
    RunConfig::from_map(&map)
}
