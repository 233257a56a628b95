//! Small numeric helpers shared across modules.
//!
//! The trigonometric routines here are implemented with plain IEEE
//! arithmetic only (no libm calls), so results are bit-identical on every
//! platform. That keeps seeded geometry rasterization and noise rendering
//! reproducible across machines.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

/// SplitMix64 finalizer; used to derive independent per-item seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and an index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sin_poly(r: f64) -> f64 {
    // Taylor series on |r| <= pi/4; max error well below 1e-12.
    let r2 = r * r;
    let mut term = r;
    let mut sum = r;
    let coeffs = [6.0, 20.0, 42.0, 72.0, 110.0];
    for c in coeffs {
        term *= -r2 / c;
        sum += term;
    }
    sum
}

fn cos_poly(r: f64) -> f64 {
    let r2 = r * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    let coeffs = [2.0, 12.0, 30.0, 56.0, 90.0, 132.0];
    for c in coeffs {
        term *= -r2 / c;
        sum += term;
    }
    sum
}

/// Deterministic (sin, cos) of an angle in radians.
pub fn sin_cos(angle: f64) -> (f64, f64) {
    let y = angle.rem_euclid(2.0 * PI);
    let mut k = (y / FRAC_PI_2).floor() as i64;
    let mut r = y - k as f64 * FRAC_PI_2;
    if r > FRAC_PI_4 {
        r -= FRAC_PI_2;
        k += 1;
    }
    let (s, c) = (sin_poly(r), cos_poly(r));
    match k.rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Survival function of the Kolmogorov distribution, Q(lambda).
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test of `samples` against U[0, upper).
///
/// Returns (statistic, approximate p-value). Uses the finite-sample
/// correction from Numerical Recipes.
pub fn ks_test_uniform(samples: &[f64], upper: f64) -> (f64, f64) {
    assert!(!samples.is_empty() && upper > 0.0);
    let n = samples.len() as f64;
    let mut xs: Vec<f64> = samples.iter().map(|&x| (x / upper).clamp(0.0, 1.0)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_q(lambda))
}

/// Mean and sample standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Median of a slice (mean of middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sin_cos_matches_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = rng.gen_range(-10.0..10.0);
            let (s, c) = sin_cos(a);
            assert!((s - a.sin()).abs() < 1e-9, "sin({a}) off: {s}");
            assert!((c - a.cos()).abs() < 1e-9, "cos({a}) off: {c}");
        }
    }

    #[test]
    fn sin_cos_deterministic() {
        let (s1, c1) = sin_cos(1.234_567_89);
        let (s2, c2) = sin_cos(1.234_567_89);
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_eq!(c1.to_bits(), c2.to_bits());
    }

    #[test]
    fn ks_accepts_uniform_rejects_skewed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let uniform: Vec<f64> = (0..5000).map(|_| rng.gen_range(0.0..64.0)).collect();
        let (_, p) = ks_test_uniform(&uniform, 64.0);
        assert!(p > 0.01, "uniform sample rejected: p = {p}");

        let skewed: Vec<f64> = (0..5000)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                u * u * 64.0
            })
            .collect();
        let (_, p) = ks_test_uniform(&skewed, 64.0);
        assert!(p < 0.01, "skewed sample not rejected: p = {p}");
    }

    #[test]
    fn derive_seed_spreads_indices() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn median_and_mean_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
