use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtwcert_cli::config::{resolve, SEED_ENV};
use dtwcert_cli::debug::{cmd_dtw, cmd_envelope, cmd_lb, parse_norm, parse_window};
use dtwcert_cli::falsify::cmd_falsify;
use dtwcert_cli::pipeline::cmd_certify;
use dtwcert_cli::synth::{self, parse_anomalies, SynthSpec, DEFAULT_ANOMALIES};
use dtwcert_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "dtwcert", version, about = "Certified DTW robustness radii for time-series anomaly detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify every test window and write results, stats and curves.
    Certify(RunArgs),
    /// Probe certified windows of a finished run for decision flips.
    Falsify {
        /// Output directory of a previous `certify` run.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
    },
    /// DTW distance between two windows.
    Dtw(PairArgs),
    /// Keogh lower bound of `b` against the envelope of `a`.
    Lb(PairArgs),
    /// Keogh envelope of a window as CSV.
    Envelope {
        a: String,
        #[arg(long, default_value_t = 4)]
        warp_window: usize,
    },
    /// Write a synthetic train/test/labels dataset.
    GenSynth(SynthArgs),
    /// Print the version.
    Version,
}

/// Flags that override the config file. Values are parsed by the config
/// layer so file and flag values share one set of rules.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    percentile: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    denoiser: Option<String>,
    #[arg(long)]
    seq_len: Option<String>,
    #[arg(long)]
    warp_window: Option<String>,
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    threshold_method: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    calib_samples: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// Shell command of an external scorer speaking over stdio.
    #[arg(long)]
    scorer_cmd: Option<String>,
    /// `host:port` of an external scorer.
    #[arg(long)]
    scorer_addr: Option<String>,
    /// Budget grid as start:stop:step.
    #[arg(long)]
    budgets: Option<String>,
}

#[derive(Args)]
struct PairArgs {
    a: String,
    b: String,
    #[arg(long, default_value_t = 4)]
    warp_window: usize,
    /// 1, 2 or inf.
    #[arg(long, default_value = "2")]
    norm: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    /// sine or random-walk.
    #[arg(long, default_value = "sine")]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    train_length: usize,
    #[arg(long, default_value_t = 1000)]
    test_length: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 400.0)]
    period: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Comma-separated kind@start[:len[:magnitude]].
    #[arg(long, default_value = DEFAULT_ANOMALIES)]
    anomalies: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn certify(a: RunArgs) -> Result<()> {
    let overrides = [
        ("data", a.data),
        ("labels", a.labels),
        ("train", a.train),
        ("out", a.out),
        ("seed", a.seed),
        ("sigma", a.sigma),
        ("samples", a.samples),
        ("percentile", a.percentile),
        ("alpha", a.alpha),
        ("noise", a.noise),
        ("denoiser", a.denoiser),
        ("seq_len", a.seq_len),
        ("warp_window", a.warp_window),
        ("detector", a.detector),
        ("knn_k", a.knn_k),
        ("rank", a.rank),
        ("threshold_method", a.threshold_method),
        ("gamma", a.gamma),
        ("calib_samples", a.calib_samples),
        ("workers", a.workers),
        ("scorer_cmd", a.scorer_cmd),
        ("scorer_addr", a.scorer_addr),
        ("budgets", a.budgets),
    ];
    let cfg = resolve(a.config.as_deref(), &overrides, std::env::var(SEED_ENV).ok())?;
    let out = cmd_certify(&cfg)?;
    let s = &out.stats;
    println!(
        "windows={} gamma={} f1={} roc_auc={} certified_proportion={} radii_mean={} abstain_proportion={}",
        s.windows,
        dtwcert::format::fmt_float(s.gamma),
        dtwcert::format::fmt_float(s.f1),
        dtwcert::format::fmt_float(s.roc_auc),
        dtwcert::format::fmt_float(s.certified_proportion),
        dtwcert::format::fmt_float(s.radii_mean),
        dtwcert::format::fmt_float(s.abstain_proportion),
    );
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn gen_synth(a: SynthArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} is not an integer: {s:?}")))?,
            Err(_) => 0,
        },
    };
    let spec = SynthSpec {
        backbone: a.kind.parse()?,
        train_len: a.train_length,
        test_len: a.test_length,
        channels: a.channels,
        period: a.period,
        noise: a.noise,
        anomalies: parse_anomalies(&a.anomalies)?,
        seed,
    };
    synth::write(&synth::generate(&spec)?, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Certify(a) => certify(a),
        Command::Falsify { out, probes } => {
            let r = cmd_falsify(&out, probes)?;
            println!(
                "probes={} certified_windows={} skipped_zero_radius={} skipped_abstain={} flips={} abstentions={} flip_limit={} containment_violations={}",
                r.probes,
                r.certified_windows,
                r.skipped_zero_radius,
                r.skipped_abstain,
                r.flips,
                r.abstentions,
                r.flip_limit,
                r.containment_violations
            );
            Ok(())
        }
        Command::Dtw(p) => {
            println!("{}", cmd_dtw(&parse_window(&p.a)?, &parse_window(&p.b)?, p.warp_window, parse_norm(&p.norm)?)?);
            Ok(())
        }
        Command::Lb(p) => {
            println!("{}", cmd_lb(&parse_window(&p.a)?, &parse_window(&p.b)?, p.warp_window, parse_norm(&p.norm)?)?);
            Ok(())
        }
        Command::Envelope { a, warp_window } => {
            print!("{}", cmd_envelope(&parse_window(&a)?, warp_window)?);
            Ok(())
        }
        Command::GenSynth(a) => gen_synth(a),
        Command::Version => {
            println!("dtwcert {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
