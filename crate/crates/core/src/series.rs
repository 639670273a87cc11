//! Time-series data model: multichannel series, fixed-length windows,
//! CSV ingestion and train-statistics z-score normalization.
//!
//! Values are stored row-major (`values[t * channels + c]`).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileMissing(String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("length mismatch: {expected} timesteps but {found} labels")]
    LengthMismatch { expected: usize, found: usize },
    #[error("channel mismatch: expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("window length {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A multichannel real-valued sequence of shape `(len, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    channels: usize,
    channel_names: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, len: usize, channels: usize) -> Result<Self, DataError> {
        if len == 0 || channels == 0 {
            return Err(DataError::InvalidShape(format!(
                "series must have at least one timestep and channel, got {len}x{channels}"
            )));
        }
        if values.len() != len * channels {
            return Err(DataError::InvalidShape(format!(
                "{} values cannot form a {len}x{channels} series",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                row: pos / channels,
                col: pos % channels,
            });
        }
        Ok(Self {
            values,
            len,
            channels,
            channel_names: None,
        })
    }

    /// Univariate series from a slice.
    pub fn univariate(values: &[f64]) -> Result<Self, DataError> {
        Self::new(values.to_vec(), values.len(), 1)
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.channels {
            return Err(DataError::ChannelMismatch {
                expected: self.channels,
                found: names.len(),
            });
        }
        self.channel_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel_names(&self) -> Option<&[String]> {
        self.channel_names.as_deref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }
}

/// A fixed-length slice of a series. `origin` is the index of the final
/// timestep in the source series.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    values: Vec<f64>,
    len: usize,
    channels: usize,
    origin: usize,
}

impl Window {
    pub fn new(values: Vec<f64>, len: usize, channels: usize, origin: usize) -> Result<Self, DataError> {
        if len == 0 || channels == 0 || values.len() != len * channels {
            return Err(DataError::InvalidShape(format!(
                "{} values cannot form a {len}x{channels} window",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                row: pos / channels,
                col: pos % channels,
            });
        }
        Ok(Self {
            values,
            len,
            channels,
            origin,
        })
    }

    /// Univariate window with origin 0, mostly for tests and debugging commands.
    pub fn univariate(values: &[f64]) -> Result<Self, DataError> {
        Self::new(values.to_vec(), values.len(), 1, values.len().saturating_sub(1))
    }

    /// Builds a window of the same shape and origin with new values. Values
    /// are not checked for finiteness; callers perturbing a finite window
    /// with finite noise keep the invariant.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "window shape changed");
        Self {
            values,
            len: self.len,
            channels: self.channels,
            origin: self.origin,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Window) -> bool {
        self.len == other.len && self.channels == other.channels
    }

    /// Euclidean distance over all entries.
    pub fn l2_distance(&self, other: &Window) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Window[{}x{} @ {}]", self.len, self.channels, self.origin)
    }
}

/// Per-channel mean and (floored) population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_series(series: &TimeSeries) -> Self {
        let n = series.len() as f64;
        let c = series.channels();
        let mut mean = vec![0.0; c];
        for t in 0..series.len() {
            for (k, m) in mean.iter_mut().enumerate() {
                *m += series.get(t, k);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for t in 0..series.len() {
            for k in 0..c {
                let d = series.get(t, k) - mean[k];
                var[k] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Train series, test series with pointwise labels, and the train statistics.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub train: TimeSeries,
    pub test: TimeSeries,
    pub test_labels: Vec<u8>,
    pub norm_stats: NormStats,
}

impl LabeledDataset {
    /// Normalizes both splits with statistics computed on `train`.
    pub fn normalized(train: TimeSeries, test: TimeSeries, test_labels: Vec<u8>) -> Result<Self, DataError> {
        if test_labels.len() != test.len() {
            return Err(DataError::LengthMismatch {
                expected: test.len(),
                found: test_labels.len(),
            });
        }
        if train.channels() != test.channels() {
            return Err(DataError::ChannelMismatch {
                expected: train.channels(),
                found: test.channels(),
            });
        }
        let norm_stats = NormStats::from_series(&train);
        let train = normalize(&train, &norm_stats)?;
        let test = normalize(&test, &norm_stats)?;
        Ok(Self {
            train,
            test,
            test_labels,
            norm_stats,
        })
    }
}

/// Reads a headered CSV table, one row per timestep and one column per channel.
pub fn load_series(path: &Path) -> Result<TimeSeries, DataError> {
    if !path.exists() {
        return Err(DataError::FileMissing(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, 0))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .map(str::to_owned)
        .collect();
    let channels = names.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        // data rows are numbered from 1 (the header is row 0)
        let row = i + 1;
        let record = record.map_err(|e| csv_error(e, row))?;
        if record.len() != channels {
            return Err(DataError::ParseError {
                row,
                col: record.len().min(channels),
                msg: format!("expected {channels} columns, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::ParseError {
                row,
                col,
                msg: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue { row, col });
            }
            values.push(v);
        }
        rows += 1;
    }
    TimeSeries::new(values, rows, channels)?.with_channel_names(names)
}

fn csv_error(e: csv::Error, row: usize) -> DataError {
    let row = e.position().map(|p| p.line() as usize - 1).unwrap_or(row);
    DataError::ParseError {
        row,
        col: 0,
        msg: e.to_string(),
    }
}

/// Reads a label file: one `0` or `1` per line.
pub fn load_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileMissing(path.display().to_string()),
        _ => DataError::Io(e),
    })?;
    let mut labels = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        match cell {
            "0" => labels.push(0),
            "1" => labels.push(1),
            _ => {
                return Err(DataError::ParseError {
                    row,
                    col: 0,
                    msg: format!("label must be 0 or 1, found {cell:?}"),
                })
            }
        }
    }
    Ok(labels)
}

/// Loads a data table and, optionally, its label file.
pub fn load_csv(path_data: &Path, path_labels: Option<&Path>) -> Result<(TimeSeries, Option<Vec<u8>>), DataError> {
    let series = load_series(path_data)?;
    let labels = match path_labels {
        Some(p) => {
            let labels = load_labels(p)?;
            if labels.len() != series.len() {
                return Err(DataError::LengthMismatch {
                    expected: series.len(),
                    found: labels.len(),
                });
            }
            Some(labels)
        }
        None => None,
    };
    Ok((series, labels))
}

/// `(x - mean) / max(std, 1e-8)` per channel.
pub fn normalize(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries, DataError> {
    if stats.channels() != series.channels() || stats.std.len() != stats.mean.len() {
        return Err(DataError::ChannelMismatch {
            expected: series.channels(),
            found: stats.channels(),
        });
    }
    let c = series.channels();
    let values = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let k = i % c;
            (v - stats.mean[k]) / stats.std[k].max(STD_FLOOR)
        })
        .collect();
    let mut out = TimeSeries::new(values, series.len(), c)?;
    out.channel_names = series.channel_names.clone();
    Ok(out)
}

/// Stride-1 windows of length `len`; window `j` covers `[j, j + len - 1]`.
pub fn sliding_windows(series: &TimeSeries, len: usize) -> Result<Vec<Window>, DataError> {
    if len == 0 || len > series.len() {
        return Err(DataError::WindowTooLarge {
            window: len,
            len: series.len(),
        });
    }
    let c = series.channels();
    Ok((0..=series.len() - len)
        .map(|j| Window {
            values: series.values()[j * c..(j + len) * c].to_vec(),
            len,
            channels: c,
            origin: j + len - 1,
        })
        .collect())
}

/// Label of each window, taken from its final timestep.
pub fn window_labels(windows: &[Window], labels: &[u8]) -> Vec<u8> {
    windows.iter().map(|w| labels[w.origin()]).collect()
}
