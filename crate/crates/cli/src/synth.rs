//! Reproducible synthetic datasets with injected anomalies.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dtwcert::format::fmt_float;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Sine,
    RandomWalk,
}

impl FromStr for Backbone {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(Self::Sine),
            "random-walk" | "walk" => Ok(Self::RandomWalk),
            other => Err(CliError::Usage(format!("unknown backbone {other:?}; expected sine or random-walk"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Adds `magnitude` over the segment (one step by default).
    Spike,
    /// Adds `magnitude` over the segment.
    LevelShift,
    /// Replaces the segment by the series delayed `magnitude` steps.
    TemporalShift,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::LevelShift => "level-shift",
            AnomalyKind::TemporalShift => "temporal-shift",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    /// First affected test timestep.
    pub start: usize,
    pub len: usize,
    pub magnitude: f64,
}

impl FromStr for Anomaly {
    type Err = CliError;

    /// `kind@start[:len[:magnitude]]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| CliError::Usage(format!("invalid anomaly {s:?}: {msg}"));
        let (kind, rest) = s.trim().split_once('@').ok_or_else(|| bad("expected kind@start"))?;
        let (kind, len, magnitude) = match kind {
            "spike" => (AnomalyKind::Spike, 1, 4.0),
            "level-shift" => (AnomalyKind::LevelShift, 50, 1.5),
            "temporal-shift" => (AnomalyKind::TemporalShift, 50, 8.0),
            _ => return Err(bad("kind must be spike, level-shift or temporal-shift")),
        };
        let mut parts = rest.split(':');
        let start = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| bad("bad start"))?;
        let len = match parts.next() {
            Some(p) => p.parse().map_err(|_| bad("bad length"))?,
            None => len,
        };
        let magnitude: f64 = match parts.next() {
            Some(p) => p.parse().map_err(|_| bad("bad magnitude"))?,
            None => magnitude,
        };
        if parts.next().is_some() {
            return Err(bad("too many fields"));
        }
        if len == 0 || !magnitude.is_finite() {
            return Err(bad("length must be positive and magnitude finite"));
        }
        if kind == AnomalyKind::TemporalShift && (magnitude < 1.0 || magnitude.fract() != 0.0) {
            return Err(bad("temporal-shift magnitude is a whole number of steps"));
        }
        Ok(Anomaly {
            kind,
            start,
            len,
            magnitude,
        })
    }
}

pub fn parse_anomalies(spec: &str) -> Result<Vec<Anomaly>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub backbone: Backbone,
    pub train_len: usize,
    pub test_len: usize,
    pub channels: usize,
    /// Sine period in steps.
    pub period: f64,
    /// Standard deviation of additive observation noise.
    pub noise: f64,
    pub anomalies: Vec<Anomaly>,
    pub seed: u64,
}

pub const DEFAULT_ANOMALIES: &str = "level-shift@300:80:1.5,spike@600:1:4,temporal-shift@800:60:8";

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            backbone: Backbone::Sine,
            train_len: 1000,
            test_len: 1000,
            channels: 1,
            period: 400.0,
            noise: 0.01,
            anomalies: parse_anomalies(DEFAULT_ANOMALIES).expect("default anomalies parse"),
            seed: 0,
        }
    }
}

/// Row-major series plus test labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub channels: usize,
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    /// Test series before anomalies were injected.
    pub clean_test: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let c = spec.channels;
    if c == 0 || spec.train_len == 0 || spec.test_len == 0 {
        return Err(CliError::Usage("lengths and channel count must be positive".into()));
    }
    if !(spec.period > 0.0 && spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(CliError::Usage("period must be positive and noise nonnegative".into()));
    }
    let total = spec.train_len + spec.test_len;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).expect("noise checked above");
    let step = Normal::new(0.0, 0.1).expect("constant");
    let mut series = vec![0.0; total * c];
    for k in 0..c {
        let phase = k as f64 * spec.period / (2.0 * c as f64);
        let mut level = 0.0;
        for t in 0..total {
            let base = match spec.backbone {
                Backbone::Sine => (2.0 * std::f64::consts::PI * (t as f64 + phase) / spec.period).sin(),
                Backbone::RandomWalk => {
                    level += step.sample(&mut rng);
                    level
                }
            };
            series[t * c + k] = base + noise.sample(&mut rng);
        }
    }
    let train = series[..spec.train_len * c].to_vec();
    let clean_test = series[spec.train_len * c..].to_vec();
    let mut test = clean_test.clone();
    let mut labels = vec![0u8; spec.test_len];
    for a in &spec.anomalies {
        let end = a.start + a.len;
        if end > spec.test_len {
            return Err(CliError::Usage(format!(
                "{} at {} with length {} runs past the test series ({} steps)",
                a.kind, a.start, a.len, spec.test_len
            )));
        }
        if a.kind == AnomalyKind::TemporalShift && a.magnitude as usize > spec.train_len + a.start {
            return Err(CliError::Usage(format!(
                "temporal-shift at {} reaches before the start of the series",
                a.start
            )));
        }
        labels[a.start..end].fill(1);
        for t in a.start..end {
            for k in 0..c {
                let i = t * c + k;
                match a.kind {
                    AnomalyKind::Spike | AnomalyKind::LevelShift => test[i] += a.magnitude,
                    AnomalyKind::TemporalShift => {
                        // delayed copy of the uncorrupted series, reaching back into train if needed
                        let src = spec.train_len + t - a.magnitude as usize;
                        test[i] = series[src * c + k];
                    }
                }
            }
        }
    }
    Ok(SynthData {
        channels: c,
        train,
        test,
        clean_test,
        labels,
    })
}

fn table(values: &[f64], channels: usize) -> String {
    let header: Vec<String> = (0..channels).map(|k| format!("c{k}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in values.chunks(channels) {
        let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes `train.csv`, `test.csv` and `labels.csv` into `dir`.
pub fn write(data: &SynthData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let labels: String = data.labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("train.csv"), table(&data.train, data.channels))?;
    fs::write(dir.join("test.csv"), table(&data.test, data.channels))?;
    fs::write(dir.join("labels.csv"), labels)?;
    Ok(())
}
