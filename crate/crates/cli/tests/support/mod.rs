//! Helpers shared by the CLI test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtwcert::certify::certify_all;
use dtwcert::detectors::FnScore;
use dtwcert::smoothing::Denoiser;
use dtwcert::{CertificationResult, CertifyConfig, SmoothingConfig, Window};
use dtwcert_cli::falsify::{falsify, FalsifyReport};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dtwcert")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .env_remove("DTWCERT_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes the default synthetic dataset into `dir/data`.
pub fn synth(dir: &Path) -> PathBuf {
    let o = run(dir, &["gen-synth", "--out", "data", "--seed", "0"]);
    assert!(o.status.success(), "gen-synth failed: {}", stderr(&o));
    dir.join("data")
}

/// Certifies the synthetic data in `dir/data` into `dir/<out>`.
pub fn certify(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "certify",
        "--train",
        "data/train.csv",
        "--data",
        "data/test.csv",
        "--labels",
        "data/labels.csv",
        "--seq-len",
        "20",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    run(dir, &args)
}

/// Constant windows scored by their first coordinate, where the ℓ2
/// certificate is nearly tight: the boundary sits at distance `c` along
/// `−e₀` and the certified radius is just below it.
pub struct Tight {
    pub windows: Vec<Window>,
    pub config: CertifyConfig,
}

impl Tight {
    pub fn new() -> Self {
        let windows = [0.5, 0.6, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &c)| Window::new(vec![c; 2], 2, 1, i).unwrap())
            .collect();
        let config = CertifyConfig {
            smoothing: SmoothingConfig {
                sigma: 0.5,
                n: 20_000,
                ..Default::default()
            },
            warp_window: 1,
            gamma: 0.0,
            denoiser: Denoiser::Identity,
        };
        Tight { windows, config }
    }

    pub fn results(&self) -> Vec<CertificationResult> {
        certify_all(&self.windows, &first_coordinate(), &self.config).unwrap()
    }

    pub fn falsify(&self, results: &[CertificationResult], probes: usize) -> FalsifyReport {
        falsify(&self.windows, results, &first_coordinate(), &self.config, probes).unwrap()
    }
}

pub fn first_coordinate() -> FnScore<impl Fn(&Window) -> f64 + Send + Sync> {
    FnScore::new("first", |x: &Window| x.values()[0])
}

/// Inflates every certified radius by `factor`.
pub fn inflate(results: &[CertificationResult], factor: f64) -> Vec<CertificationResult> {
    results
        .iter()
        .map(|r| CertificationResult {
            l2_radius: r.l2_radius * factor,
            dtw_radius: r.dtw_radius * factor,
            ..r.clone()
        })
        .collect()
}
