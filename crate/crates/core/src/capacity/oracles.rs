//! Closed-form capacity expressions for first-order noise models, in nats.

use crate::error::{FbcapError, Result};

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_power(power: f64) -> Result<()> {
    if !(power.is_finite() && power > 0.0) {
        return Err(FbcapError::OutOfRange(format!(
            "power must be positive and finite, got {power}"
        )));
    }
    Ok(())
}

/// Feedback capacity of the MA(1) channel as `½ log(1 + SNR)`, where SNR is the
/// maximal fixed point of
///
/// * `SNR = (√P + |α| √(SNR/(1+SNR)))²` for `|α| ≤ 1`,
/// * `SNR = α⁻² (√P + √(SNR/(1+SNR)))²` for `|α| > 1`.
///
/// The map is increasing and bounded, so iterating from its upper bound
/// decreases monotonically to the maximal fixed point.
pub fn ma_capacity_fixed_point(alpha: f64, power: f64) -> Result<f64> {
    check_power(power)?;
    if !alpha.is_finite() {
        return Err(FbcapError::NonFinite("alpha".into()));
    }
    let a = alpha.abs();
    let sp = power.sqrt();
    let map = |snr: f64| {
        let u = (snr / (1.0 + snr)).sqrt();
        if a <= 1.0 {
            (sp + a * u).powi(2)
        } else {
            (sp + u).powi(2) / (a * a)
        }
    };
    let mut snr = if a <= 1.0 {
        (sp + a).powi(2)
    } else {
        (sp + 1.0).powi(2) / (a * a)
    };
    for _ in 0..10_000_000 {
        let next = map(snr);
        let done = (snr - next).abs() <= 1e-15 * snr.max(1.0);
        snr = next;
        if done {
            break;
        }
    }
    Ok(0.5 * snr.ln_1p())
}

/// Kim's MA(1) formula `−log x₀`, with `x₀ ∈ (0, 1)` the unique root of
/// `P x² = (1 − |α| x)² (1 − x²)`.
pub fn kim_ma_capacity(alpha: f64, power: f64) -> Result<f64> {
    check_power(power)?;
    let a = alpha.abs();
    if a.is_nan() || a > 1.0 {
        return Err(FbcapError::OutOfRange(format!(
            "Kim's MA formula requires |alpha| <= 1, got {alpha}"
        )));
    }
    let f = |x: f64| power * x * x - (1.0 - a * x).powi(2) * (1.0 - x * x);
    Ok(-bisect(f, 0.0, 1.0).ln())
}

/// Stationary AR(1) feedback capacity `−log x₀`, with `x₀ ∈ (0, 1)` the root of
/// `P x² (1 + |β| x)² = 1 − x²`.
pub fn kim_ar_capacity(beta: f64, power: f64) -> Result<f64> {
    check_power(power)?;
    let b = beta.abs();
    if b.is_nan() || b >= 1.0 {
        return Err(FbcapError::OutOfRange(format!(
            "the stationary AR formula requires |beta| < 1, got {beta}"
        )));
    }
    let f = |x: f64| power * x * x * (1.0 + b * x).powi(2) - (1.0 - x * x);
    Ok(-bisect(f, 0.0, 1.0).ln())
}

/// Rate of the AR(1) channel with unit power and inputs independent of the past:
/// `½ log(1 + (β²/2)(1 + √(1 + 4/β⁴)))`, equal to `½ log 2` at `β = 0`.
pub fn ar_iid_rate(beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.5 * std::f64::consts::LN_2;
    }
    let b2 = beta * beta;
    // β²/2 · (1 + √(1 + 4/β⁴)) = (β² + √(β⁴ + 4)) / 2
    0.5 * (0.5 * (b2 + (b2 * b2 + 4.0).sqrt())).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn awgn_limits() {
        for p in [0.5, 1.0, 2.0] {
            let c = 0.5 * f64::ln(1.0 + p);
            assert_relative_eq!(ma_capacity_fixed_point(0.0, p).unwrap(), c, epsilon = 1e-14);
            assert_relative_eq!(kim_ma_capacity(0.0, p).unwrap(), c, epsilon = 1e-14);
            assert_relative_eq!(kim_ar_capacity(0.0, p).unwrap(), c, epsilon = 1e-14);
        }
    }

    #[test]
    fn kim_unit_alpha() {
        let c = kim_ma_capacity(1.0, 1.0).unwrap();
        let x = (-c).exp();
        assert!((x * x - (1.0 - x).powi(2) * (1.0 - x * x)).abs() < 1e-14);
    }

    #[test]
    fn kim_rejects_large_alpha() {
        assert!(matches!(kim_ma_capacity(1.5, 1.0), Err(FbcapError::OutOfRange(_))));
    }

    #[test]
    fn iid_rate_values() {
        assert_relative_eq!(ar_iid_rate(0.0), 0.5 * 2f64.ln());
        assert_relative_eq!(ar_iid_rate(1e-4), 0.5 * 2f64.ln(), epsilon = 1e-8);
        let golden = 0.5 * (1.0 + 0.5 * (1.0 + 5f64.sqrt())).ln();
        assert_relative_eq!(ar_iid_rate(1.0), golden, epsilon = 1e-15);
        assert_relative_eq!(ar_iid_rate(-1.0), golden, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_branches_meet_at_unit_alpha() {
        let lo = ma_capacity_fixed_point(1.0, 1.0).unwrap();
        let hi = ma_capacity_fixed_point(1.0 + 1e-9, 1.0).unwrap();
        assert!((lo - hi).abs() < 1e-6);
    }
}
