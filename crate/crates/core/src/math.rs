//! Scalar helpers shared across modules.

use alloc::vec::Vec;

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `n` evenly spaced values from `lo` to `hi` inclusive. The last value is
/// exactly `hi`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Rounds to `places` decimals, ties to even.
pub fn round_half_even(x: f64, places: u32) -> f64 {
    let scale = libm::pow(10.0, places as f64);
    libm::rint(x * scale) / scale
}

/// Rounds to `places` decimals but never leaves `[lo, hi]`: a value rounded
/// past a bound is rounded toward the inside instead, and if no such decimal
/// exists the unrounded value is kept.
pub fn round_within(x: f64, places: u32, lo: f64, hi: f64) -> f64 {
    let r = round_half_even(x, places);
    if r >= lo && r <= hi {
        return r;
    }
    let scale = libm::pow(10.0, places as f64);
    let inward = if r > hi {
        libm::floor(x * scale) / scale
    } else {
        libm::ceil(x * scale) / scale
    };
    if inward >= lo && inward <= hi {
        inward
    } else {
        x
    }
}

/// Population mean and standard deviation. A zero deviation is reported as 1
/// so the result can be used directly for z-scoring.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = libm::sqrt(var);
    (mean, if std > 1e-12 * (1.0 + mean.abs()) { std } else { 1.0 })
}

/// Index of the maximum, ties broken toward the lowest index. NaN never wins.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}
