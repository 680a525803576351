//! Capacity without feedback of a stationary scalar channel, by water-filling
//! over the noise spectrum.

use crate::error::{FbcapError, Result};
use crate::state_space::{noise_psd_scalar, ChannelModel};

/// Water-filling capacity in nats per use on a uniform `grid`-point
/// discretization of `[−π, π)`.
pub fn waterfilling_capacity(channel: &ChannelModel, grid: usize) -> Result<f64> {
    if !channel.is_scalar() {
        return Err(FbcapError::NotScalar);
    }
    if grid == 0 {
        return Err(FbcapError::OutOfRange("grid must be positive".into()));
    }
    let gain = channel.lambda()[(0, 0)].powi(2);
    if gain == 0.0 {
        return Ok(0.0);
    }
    let levels: Vec<f64> = (0..grid)
        .map(|k| {
            let omega = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / grid as f64;
            noise_psd_scalar(channel.noise(), omega).map(|s| s / gain)
        })
        .collect::<Result<_>>()?;
    let mu = water_level(&levels, channel.power());
    Ok(levels.iter().map(|&n| 0.5 * (mu.max(n) / n).ln()).sum::<f64>() / grid as f64)
}

/// Level `μ` with `mean(max(0, μ − n_k)) = power`.
fn water_level(levels: &[f64], power: f64) -> f64 {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    let mut prefix = 0.0;
    for (k, &n) in sorted.iter().enumerate() {
        prefix += n;
        let count = (k + 1) as f64;
        let mu = (power * total + prefix) / count;
        if k + 1 == sorted.len() || mu <= sorted[k + 1] {
            return mu;
        }
    }
    unreachable!("levels is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn water_level_flat() {
        assert_eq!(water_level(&[1.0; 4], 2.0), 3.0);
    }

    #[test]
    fn water_level_partial() {
        // only the first bin is filled: mu - 1 = 0.5 * 2
        let mu = water_level(&[1.0, 10.0], 0.5);
        assert!((mu - 2.0).abs() < 1e-15);
    }
}
