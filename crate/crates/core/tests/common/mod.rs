//! Slow reference implementations used to check the library.
#![allow(dead_code)]

use dtwcert::{Envelope, Norm, Window};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_window<R: Rng>(rng: &mut R, len: usize, channels: usize, scale: f64) -> Window {
    let values = (0..len * channels)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Window::new(values, len, channels, len - 1).unwrap()
}

fn powered(d: f64, p: Norm) -> f64 {
    match p {
        Norm::L2 => d * d,
        _ => d.abs(),
    }
}

fn accumulate(acc: f64, c: f64, p: Norm) -> f64 {
    match p {
        Norm::Inf => c.max(acc),
        _ => c + acc,
    }
}

fn step(x: &Window, y: &Window, i: usize, j: usize, p: Norm) -> f64 {
    let mut c = 0.0;
    for k in 0..x.channels() {
        c = accumulate(c, powered(x.get(i, k) - y.get(j, k), p), p);
    }
    c
}

/// DTW by walking every admissible path from (0, 0) to (T−1, T−1).
pub fn brute_force_dtw(x: &Window, y: &Window, w: usize, p: Norm) -> f64 {
    fn walk(x: &Window, y: &Window, w: usize, p: Norm, i: usize, j: usize, acc: f64, best: &mut f64) {
        let n = x.len();
        let acc = if i == 0 && j == 0 {
            step(x, y, 0, 0, p)
        } else {
            accumulate(acc, step(x, y, i, j, p), p)
        };
        if i == n - 1 && j == n - 1 {
            *best = best.min(acc);
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (a, b) = (i + di, j + dj);
            if a < n && b < n && a.abs_diff(b) <= w {
                walk(x, y, w, p, a, b, acc, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(x, y, w, p, 0, 0, 0.0, &mut best);
    match p {
        Norm::L2 => best.sqrt(),
        _ => best,
    }
}

/// Envelope by scanning each clamped neighbourhood directly.
pub fn envelope_scan(x: &Window, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (x.len(), x.channels());
    let mut upper = vec![0.0; n * c];
    let mut lower = vec![0.0; n * c];
    for i in 0..n {
        for k in 0..c {
            let range = i.saturating_sub(w)..=(i + w).min(n - 1);
            upper[i * c + k] = range.clone().map(|j| x.get(j, k)).fold(f64::NEG_INFINITY, f64::max);
            lower[i * c + k] = range.map(|j| x.get(j, k)).fold(f64::INFINITY, f64::min);
        }
    }
    (upper, lower)
}

/// Splits `q ∈ [0, 1]` into `a / 2^s` exactly.
fn dyadic(q: f64) -> (BigUint, u32) {
    let mut s = 0u32;
    let mut v = q;
    while v.fract() != 0.0 {
        v *= 2.0;
        s += 1;
    }
    (BigUint::from(v as u64), s)
}

fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    let q: BigUint = (num << 64u32) / den;
    let digits = q.to_u64_digits();
    let lo = digits.first().copied().unwrap_or(0) as f64;
    let hi = digits.get(1).copied().unwrap_or(0) as f64;
    (lo + hi * 2f64.powi(64)) / 2f64.powi(64)
}

/// `P[Bin(n, q) ≤ k]` for every `k = 0..=n`, summed in exact rational
/// arithmetic and rounded once at the end.
pub fn exact_binomial_cdf(n: u64, q: f64) -> Vec<f64> {
    let (a, s) = dyadic(q);
    let one = BigUint::from(1u8) << s;
    let b = &one - &a;
    let den = one.pow(n as u32);
    let mut b_pows = Vec::with_capacity(n as usize + 1);
    b_pows.push(BigUint::from(1u8));
    for j in 1..=n as usize {
        let next = &b_pows[j - 1] * &b;
        b_pows.push(next);
    }
    let mut binom = BigUint::from(1u8);
    let mut a_pow = BigUint::from(1u8);
    let mut cum = BigUint::from(0u8);
    let mut out = Vec::with_capacity(n as usize + 1);
    for i in 0..=n {
        cum += &binom * &a_pow * &b_pows[(n - i) as usize];
        out.push(ratio_to_f64(&cum, &den));
        binom = binom * BigUint::from(n - i) / BigUint::from(i + 1);
        a_pow *= &a;
    }
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors as columns of `v`.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// PCA residual norm computed from a Jacobi decomposition of the sample
/// covariance of the flattened training windows.
pub fn pca_residual_oracle(train: &[Window], rank: usize, x: &Window) -> f64 {
    let d = x.dim();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for w in train {
        for (m, v) in mean.iter_mut().zip(w.values()) {
            *m += v / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for w in train {
        let z: Vec<f64> = w.values().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += z[i] * z[j] / n;
            }
        }
    }
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut z: Vec<f64> = x.values().iter().zip(&mean).map(|(v, m)| v - m).collect();
    let full = z.clone();
    for &col in order.iter().take(rank) {
        let coef: f64 = (0..d).map(|i| vecs[i][col] * full[i]).sum();
        for i in 0..d {
            z[i] -= coef * vecs[i][col];
        }
    }
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Squared Keogh exceedance of `x + d` and its gradient in `d`.
fn exceedance_sq(d: &[f64], up: &[f64], down: &[f64], grad: &mut [f64]) -> f64 {
    let mut g = 0.0;
    for i in 0..d.len() {
        let e = if d[i] > up[i] {
            d[i] - up[i]
        } else if d[i] < -down[i] {
            d[i] + down[i]
        } else {
            0.0
        };
        grad[i] = 2.0 * e;
        g += e * e;
    }
    g
}

fn rescale(d: &mut [f64], rho: f64) {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        d.iter_mut().for_each(|v| *v *= rho / norm);
    } else {
        d[0] = rho;
    }
}

/// Smallest Keogh bound (ℓ2) found on the sphere `‖x' − x‖ = r(1 + 1e-6)`.
///
/// Random restarts, each followed by projected gradient descent on the
/// squared bound and single-coordinate sign flips. Any point it returns is
/// feasible, so the result never undercuts the true infimum.
pub fn numeric_infimum_oracle(x: &Window, env: &Envelope, r: f64, trials: usize, seed: u64) -> f64 {
    let rho = r * (1.0 + 1e-6);
    let up: Vec<f64> = env.upper().iter().zip(x.values()).map(|(u, v)| u - v).collect();
    let down: Vec<f64> = x.values().iter().zip(env.lower()).map(|(v, l)| v - l).collect();
    let dim = x.dim();
    let mut rng = rng(seed);
    let mut grad = vec![0.0; dim];
    let mut best = f64::INFINITY;
    for _ in 0..trials {
        let mut d: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        rescale(&mut d, rho);
        let mut g = exceedance_sq(&d, &up, &down, &mut grad);
        let mut next_d = vec![0.0; dim];
        let mut next_grad = vec![0.0; dim];
        loop {
            // projected gradient with an adaptive step: grow on success, halve on failure
            let mut eta = 0.5;
            for _ in 0..3000 {
                if g == 0.0 || eta < 1e-14 {
                    break;
                }
                let radial = grad.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (rho * rho);
                for i in 0..dim {
                    next_d[i] = d[i] - eta * (grad[i] - radial * d[i]);
                }
                rescale(&mut next_d, rho);
                let next = exceedance_sq(&next_d, &up, &down, &mut next_grad);
                if next < g {
                    std::mem::swap(&mut d, &mut next_d);
                    std::mem::swap(&mut grad, &mut next_grad);
                    g = next;
                    eta *= 1.5;
                } else {
                    eta *= 0.5;
                }
            }
            let mut flipped = false;
            for i in 0..dim {
                d[i] = -d[i];
                let trial = exceedance_sq(&d, &up, &down, &mut grad);
                if trial < g {
                    g = trial;
                    flipped = true;
                } else {
                    d[i] = -d[i];
                }
            }
            g = exceedance_sq(&d, &up, &down, &mut grad);
            if !flipped {
                break;
            }
        }
        best = best.min(g.sqrt());
    }
    best
}
