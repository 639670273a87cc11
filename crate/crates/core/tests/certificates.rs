mod common;

use common::{numeric_infimum_oracle, random_window, rng};
use dtwcert::certify::{
    certify_window, concentrated_radius, concentrated_witness, dtw_radius, lp_dtw_radius, worst_case_witness,
    CertifyConfig,
};
use dtwcert::detectors::FnScore;
use dtwcert::smoothing::{certified_l2_radius, sample_scores_in_stream, Denoiser};
use dtwcert::{dtw_distance, keogh_envelope, keogh_lower_bound, slack_stats, Decision, Norm, SmoothingConfig, Window};
use rand::Rng;
use rand_distr::StandardNormal;

/// A smooth random walk, so envelopes stay narrow.
fn walk<R: Rng>(rng: &mut R, len: usize, channels: usize, step: f64) -> Window {
    let mut values = vec![0.0; len * channels];
    for k in 0..channels {
        let mut v: f64 = rng.sample(StandardNormal);
        for t in 0..len {
            v += step * rng.sample::<f64, _>(StandardNormal);
            values[t * channels + k] = v;
        }
    }
    Window::new(values, len, channels, len - 1).unwrap()
}

#[test]
fn ramp_example() {
    let x = Window::univariate(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    let env = keogh_envelope(&x, 1).unwrap();
    let stats = slack_stats(&x, &env).unwrap();
    assert_eq!(dtw_radius(2.5, &stats).unwrap(), 0.5);
    let oracle = numeric_infimum_oracle(&x, &env, 2.5, 10_000, 1);
    assert!(oracle >= 0.5 - 1e-6 && oracle <= 0.5 * 1.05, "{oracle}");
    // the single-timestep construction stays well above what the oracle finds
    let concentrated = keogh_lower_bound(&env, &concentrated_witness(&x, &env, 2.5).unwrap(), Norm::L2).unwrap();
    assert!((concentrated - concentrated_radius(2.5, &stats).unwrap()).abs() < 1e-12);
    assert!(concentrated > oracle + 0.25);
    assert!(numeric_infimum_oracle(&x, &env, 1.5, 1000, 2) < 1e-6);
}

#[test]
fn constant_window_oracle() {
    let x = Window::univariate(&[0.4; 8]).unwrap();
    let env = keogh_envelope(&x, 3).unwrap();
    let oracle = numeric_infimum_oracle(&x, &env, 1.0, 1000, 3);
    assert!((oracle - 1.0).abs() < 1e-5);
    let stats = slack_stats(&x, &env).unwrap();
    assert_eq!(dtw_radius(1.0, &stats).unwrap(), 1.0);
}

#[test]
fn closed_form_matches_numeric_infimum() {
    let mut r = rng(11);
    for case in 0..100 {
        let len = r.random_range(3..=20);
        let channels = r.random_range(1..=2);
        let w = r.random_range(1..=len.min(4));
        let x = walk(&mut r, len, channels, 0.3);
        let env = keogh_envelope(&x, w).unwrap();
        let stats = slack_stats(&x, &env).unwrap();
        let radius = stats.total_norm + r.random_range(0.05..1.0) * stats.total_norm.max(0.5);
        let e = dtw_radius(radius, &stats).unwrap();
        let oracle = numeric_infimum_oracle(&x, &env, radius, 1000, case);
        assert!(oracle >= e - 1e-6 && oracle <= 1.05 * e, "case {case}: oracle {oracle} vs e {e}");

        let witness = worst_case_witness(&x, &env, radius).unwrap();
        assert!((witness.l2_distance(&x) - radius).abs() < 1e-9);
        assert!((keogh_lower_bound(&env, &witness, Norm::L2).unwrap() - e).abs() < 1e-9);
    }
}

#[test]
fn witness_rejects_radius_inside_slack() {
    let mut r = rng(12);
    let x = walk(&mut r, 10, 1, 1.0);
    let env = keogh_envelope(&x, 2).unwrap();
    let stats = slack_stats(&x, &env).unwrap();
    assert!(worst_case_witness(&x, &env, stats.total_norm).is_err());
    assert!(worst_case_witness(&x, &env, stats.total_norm * 0.5).is_err());
}

/// Candidate points near `x` mixing isotropic noise, slack-aligned moves and
/// temporal shifts.
fn probe<R: Rng>(rng: &mut R, x: &Window, slack: &[f64], upward: &[bool], scale: f64) -> Window {
    let (len, c) = (x.len(), x.channels());
    let values: Vec<f64> = match rng.random_range(0..3) {
        0 => x.values().iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        1 => {
            let t: f64 = rng.random_range(0.0..2.0);
            x.values()
                .iter()
                .zip(slack.iter().zip(upward))
                .map(|(v, (d, &u))| v + if u { 1.0 } else { -1.0 } * d * t + 0.05 * scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        _ => {
            let shift = rng.random_range(1..=2usize);
            (0..len * c)
                .map(|i| {
                    let (t, k) = (i / c, i % c);
                    x.get(t.saturating_sub(shift), k) + 0.05 * scale * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        }
    };
    x.with_values(values)
}

#[test]
fn dtw_ball_lies_inside_l2_ball() {
    let mut r = rng(13);
    for instance in 0..20 {
        let len = r.random_range(6..=20);
        let w = r.random_range(1..=3);
        let x = walk(&mut r, len, 1 + instance % 2, 0.2);
        let env = keogh_envelope(&x, w).unwrap();
        let stats = slack_stats(&x, &env).unwrap();
        let radius = stats.total_norm + 0.5;
        let e = dtw_radius(radius, &stats).unwrap();
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < 1000 {
            tries += 1;
            assert!(tries < 200_000, "instance {instance}: only {accepted} accepted");
            let scale = r.random_range(0.0..1.5) * radius / (x.dim() as f64).sqrt();
            let y = probe(&mut r, &x, &stats.delta, &stats.upward, scale);
            if dtw_distance(&x, &y, w, Norm::L2).unwrap() <= e {
                accepted += 1;
                assert!(x.l2_distance(&y) <= radius, "instance {instance}: ‖x − x'‖ = {}", x.l2_distance(&y));
            }
        }
    }
}

#[test]
fn lp_radius_never_exceeds_l2_radius() {
    let mut r = rng(14);
    for _ in 0..200 {
        let len = r.random_range(2..=20);
        let channels = r.random_range(1..=3);
        let x = random_window(&mut r, len, channels, 1.0);
        let env = keogh_envelope(&x, r.random_range(1..=len)).unwrap();
        let stats = slack_stats(&x, &env).unwrap();
        for i in 0..50 {
            let radius = i as f64 * 0.2;
            assert!(lp_dtw_radius(radius, &stats, Norm::L2).unwrap() <= dtw_radius(radius, &stats).unwrap());
        }
    }
    let x = Window::univariate(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    let stats = slack_stats(&x, &keogh_envelope(&x, 1).unwrap()).unwrap();
    for i in 0..100 {
        let radius = i as f64 * 0.05;
        assert!(lp_dtw_radius(radius, &stats, Norm::L2).unwrap() <= dtw_radius(radius, &stats).unwrap());
    }
}

#[test]
fn lp_witnesses_attain_the_lp_radius() {
    // moving every cell by Δ·r/‖Δ‖_p along its slack lands at ℓp distance r
    let mut r = rng(15);
    for p in [Norm::L1, Norm::Inf] {
        for _ in 0..50 {
            let x = walk(&mut r, 12, 2, 0.5);
            let env = keogh_envelope(&x, 2).unwrap();
            let stats = slack_stats(&x, &env).unwrap();
            let slack = stats.cell_norm(p);
            let radius = slack * 1.7;
            let values: Vec<f64> = x
                .values()
                .iter()
                .zip(stats.delta.iter().zip(&stats.upward))
                .map(|(v, (d, &u))| v + if u { 1.0 } else { -1.0 } * d * radius / slack)
                .collect();
            let y = x.with_values(values);
            let dist = p.norm(x.values().iter().zip(y.values()).map(|(a, b)| a - b));
            assert!((dist - radius).abs() < 1e-9);
            let lb = keogh_lower_bound(&env, &y, p).unwrap();
            assert!((lb - lp_dtw_radius(radius, &stats, p).unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn wider_band_never_increases_radius() {
    let mut r = rng(16);
    for _ in 0..100 {
        let len = r.random_range(4..=20);
        let x = walk(&mut r, len, 1, 0.3);
        let radius = r.random_range(0.0..5.0);
        let mut last = f64::INFINITY;
        for w in 1..=len {
            let stats = slack_stats(&x, &keogh_envelope(&x, w).unwrap()).unwrap();
            let e = dtw_radius(radius, &stats).unwrap();
            assert!(e <= last);
            last = e;
        }
    }
}

#[test]
fn radius_properties() {
    let mut r = rng(17);
    for _ in 0..100 {
        let x = walk(&mut r, 10, 2, 0.5);
        let stats = slack_stats(&x, &keogh_envelope(&x, 2).unwrap()).unwrap();
        assert_eq!(dtw_radius(stats.total_norm, &stats).unwrap(), 0.0);
        let mut last = 0.0;
        for i in 0..100 {
            let radius = stats.total_norm * i as f64 / 40.0;
            let e = dtw_radius(radius, &stats).unwrap();
            assert!(e >= last);
            if radius > stats.total_norm {
                assert!(e > 0.0 && e < radius);
            }
            last = e;
        }
    }
}

#[test]
fn smoothed_decision_is_stable_inside_certified_ball() {
    let mut r = rng(18);
    let f = FnScore::new("mean", |w: &Window| w.values().iter().sum::<f64>() / w.dim() as f64);
    let x = Window::new((0..10).map(|t| 1.0 + 0.02 * t as f64).collect(), 10, 1, 9).unwrap();
    let cfg = CertifyConfig {
        smoothing: SmoothingConfig { seed: 3, ..Default::default() },
        warp_window: 2,
        gamma: 0.5,
        denoiser: Denoiser::Identity,
    };
    let res = certify_window(&x, &f, &cfg).unwrap();
    assert_eq!(res.decision, Decision::Anomaly);
    assert!(res.dtw_radius > 0.0, "{res:?}");
    let stats = slack_stats(&x, &keogh_envelope(&x, 2).unwrap()).unwrap();
    let mut checked = 0;
    let mut stream = 1u64 << 40;
    while checked < 100 {
        let scale = r.random_range(0.0..1.0) * res.l2_radius / (x.dim() as f64).sqrt();
        let y = probe(&mut r, &x, &stats.delta, &stats.upward, scale);
        if dtw_distance(&x, &y, 2, Norm::L2).unwrap() > res.dtw_radius {
            continue;
        }
        checked += 1;
        stream += 1;
        let fresh = SmoothingConfig { seed: 777, ..cfg.smoothing.clone() };
        let s = sample_scores_in_stream(&f, &y, &fresh, Denoiser::Identity, stream, fresh.n).unwrap();
        let again = certified_l2_radius(&s, cfg.gamma).unwrap();
        assert_ne!(again.decision, Decision::Benign);
    }
}
