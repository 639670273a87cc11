//! Special functions for the confidence machinery: the binomial CDF, the
//! standard Gaussian CDF and its inverse, and the Laplace CDF/quantile.

use std::f64::consts::{LN_2, PI, SQRT_2};

use libm::erfc;

use super::SmoothingError;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Error term of Stirling's formula, `ln n! − ((n + ½) ln n − n + ln √(2π))`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        if n == 0.0 {
            return 0.0;
        }
        let ln_fact: f64 = (2..=n as u64).map(|i| (i as f64).ln()).sum();
        return ln_fact - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np − x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        let mut j = 1.0;
        loop {
            ej *= v;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1.0;
        }
    }
    x * (x / np).ln() + np - x
}

/// Binomial probability mass `C(n, k) q^k (1 − q)^(n − k)` with relative
/// accuracy near machine precision (Loader's saddle-point form).
pub fn binomial_pmf(n: u64, k: u64, q: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let p = q;
    let qc = 1.0 - q;
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if qc == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (nf, kf) = (n as f64, k as f64);
    if k == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * qc) - nf * p } else { nf * qc.ln() };
        return lc.exp();
    }
    if k == n {
        let lc = if qc < 0.1 { -bd0(nf, nf * p) - nf * qc } else { nf * p.ln() };
        return lc.exp();
    }
    let lc = stirlerr(nf) - stirlerr(kf) - stirlerr(nf - kf) - bd0(kf, nf * p) - bd0(nf - kf, nf * qc);
    let lf = LN_2 + PI.ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Sums pmf terms starting at `start` and walking in `step` direction while
/// the terms shrink geometrically.
fn tail_sum(n: u64, start: u64, q: f64, downward: bool) -> f64 {
    let ratio_up = q / (1.0 - q);
    let mut term = binomial_pmf(n, start, q);
    let mut sum = term;
    let mut i = start;
    loop {
        if downward {
            if i == 0 {
                break;
            }
            // pmf(i-1) = pmf(i) * i / (n - i + 1) * (1-q)/q
            term *= i as f64 / (n - i + 1) as f64 / ratio_up;
            i -= 1;
        } else {
            if i == n {
                break;
            }
            term *= (n - i) as f64 / (i + 1) as f64 * ratio_up;
            i += 1;
        }
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `P[Bin(n, q) ≤ k]`.
///
/// The smaller tail is summed directly (moving away from the mode, where
/// terms decay geometrically) so the absolute error stays near 1e-16.
pub fn binomial_cdf(n: u64, k: u64, q: f64) -> Result<f64, SmoothingError> {
    if !(0.0..=1.0).contains(&q) || q.is_nan() {
        return Err(SmoothingError::Domain(format!("binomial probability {q} outside [0, 1]")));
    }
    if k > n {
        return Err(SmoothingError::Domain(format!("binomial index {k} exceeds n = {n}")));
    }
    if k == n || q == 0.0 {
        return Ok(1.0);
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    let mode = (((n + 1) as f64) * q).floor().min(n as f64) as u64;
    let v = if k < mode {
        tail_sum(n, k, q, true)
    } else {
        1.0 - tail_sum(n, k + 1, q, false)
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Standard Gaussian CDF.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail `1 − Φ(z)` without cancellation.
pub fn gaussian_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Inverse of the standard Gaussian CDF.
///
/// Acklam's rational approximation (relative error ≈ 1e-9) polished by one
/// Newton step on whichever tail is smaller.
pub fn gaussian_icdf(q: f64) -> Result<f64, SmoothingError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SmoothingError::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    if q > 0.5 {
        // 1 - q is exact for q in (0.5, 1)
        return Ok(-lower_icdf(1.0 - q));
    }
    Ok(lower_icdf(q))
}

fn lower_icdf(q: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if q < P_LOW {
        let t = (-2.0 * q.ln()).sqrt();
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    } else {
        let u = q - 0.5;
        let t = u * u;
        (((((A[0] * t + A[1]) * t + A[2]) * t + A[3]) * t + A[4]) * t + A[5]) * u
            / (((((B[0] * t + B[1]) * t + B[2]) * t + B[3]) * t + B[4]) * t + 1.0)
    };
    // Newton step on Φ(x) = q; x ≤ 0 here so Φ(x) has no cancellation.
    let density = (-0.5 * x * x - LN_SQRT_2PI).exp();
    x - (gaussian_cdf(x) - q) / density
}

/// CDF of the standard Laplace distribution (scale 1).
pub fn laplace_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Quantile function of the standard Laplace distribution.
pub fn laplace_icdf(q: f64) -> Result<f64, SmoothingError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SmoothingError::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(if q < 0.5 {
        (2.0 * q).ln()
    } else {
        -(2.0 * (1.0 - q)).ln()
    })
}
