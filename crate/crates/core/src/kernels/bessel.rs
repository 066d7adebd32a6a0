//! Exponentially scaled modified Bessel functions of the first kind,
//! `e^{-t} I_n(t)` for integer `n >= 0` and real `t >= 0`.
//!
//! Small arguments use the ascending power series with the leading term
//! formed in log space. Larger arguments use Miller's backward recurrence
//! normalised by `e^{-t} (I_0 + 2 sum_{k>=1} I_k) = 1`, which yields every
//! order up to `n_max` in a single sweep.

use crate::error::{invalid, Result};

/// Arguments up to this value are summed as a power series.
const SERIES_LIMIT: f64 = 20.0;

const RESCALE_ABOVE: f64 = 1e250;
const RESCALE_BY: f64 = 1e-250;

/// `e^{-t} I_n(t)`.
pub fn bessel_i_scaled(n: u32, t: f64) -> Result<f64> {
    check_arg(t)?;
    if t <= SERIES_LIMIT {
        Ok(series(n, t))
    } else {
        Ok(miller(n as usize, t)[n as usize])
    }
}

/// `e^{-t} I_n(t)` for every `n` in `0..=n_max`.
pub fn bessel_i_scaled_orders(n_max: usize, t: f64) -> Result<Vec<f64>> {
    check_arg(t)?;
    if t <= SERIES_LIMIT {
        Ok((0..=n_max).map(|n| series(n as u32, t)).collect())
    } else {
        Ok(miller(n_max, t))
    }
}

fn check_arg(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("Bessel argument must be finite and non-negative, got {t}")));
    }
    Ok(())
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn series(n: u32, t: f64) -> f64 {
    if t == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * t;
    let ln_first = -t + n as f64 * half.ln() - ln_factorial(n);
    if ln_first < -745.0 {
        return 0.0;
    }
    let q = half * half;
    let mut term = ln_first.exp();
    let mut sum = term;
    let mut m = 0.0_f64;
    loop {
        term *= q / ((m + 1.0) * (m + 1.0 + n as f64));
        sum += term;
        m += 1.0;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum
}

fn miller(n_max: usize, t: f64) -> Vec<f64> {
    let start = n_max
        + (40.0 * (n_max as f64 + 1.0)).sqrt().ceil() as usize
        + (12.0 * t.sqrt()).ceil() as usize
        + 30;
    let mut out = vec![0.0; n_max + 1];
    let two_over_t = 2.0 / t;
    let mut above = 0.0_f64;
    let mut current = 1e-30_f64;
    let mut total = 0.0_f64;
    for k in (1..=start).rev() {
        if k <= n_max {
            out[k] = current;
        }
        total += 2.0 * current;
        let below = k as f64 * two_over_t * current + above;
        above = current;
        current = below;
        if current > RESCALE_ABOVE {
            current *= RESCALE_BY;
            above *= RESCALE_BY;
            total *= RESCALE_BY;
            for v in out.iter_mut().skip(k) {
                *v *= RESCALE_BY;
            }
        }
    }
    out[0] = current;
    total += current;
    for v in &mut out {
        *v /= total;
    }
    out
}
