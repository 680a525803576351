//! Feedback coding scheme for scalar channels with a purely feedback policy
//! (`M = 0`) and the decoder's smoother of the first noise sample.
//!
//! Time 0 carries the normalized PAM symbol `Ū(m)`. For `i = 1..=n` the encoder
//! sends `x_i = A (ŝ_i − ŝ̂_i)`, where `ŝ_i` is its time-invariant Kalman
//! estimate of the noise state and `ŝ̂_i` the decoder's estimate of `ŝ_i` from
//! `y_1..y_{i−1}`. The decoder smooths `z_0` from `y_1..y_n` and decides on the
//! PAM point nearest to `(y_0 − ẑ_{0|n}) / Λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::Policy;
use crate::error::{FbcapError, Result};
use crate::kalman::{solve_dare, RiccatiSolution};
use crate::linalg::{self, Mat, Vector};
use crate::state_space::ChannelModel;

/// Largest supported `nR`, in bits.
pub const MAX_MESSAGE_BITS: f64 = 50.0;
/// `|M|_∞` above which a policy is rejected; smaller values are treated as zero.
pub const M_ZERO_TOL: f64 = 1e-6;
/// Average power above `(1 + POWER_SLACK) P` raises the power flag.
pub const POWER_SLACK: f64 = 0.05;
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Number of messages `⌊2^{nR}⌋`.
pub fn message_count(nr_bits: f64) -> Result<u64> {
    if !(0.0..=MAX_MESSAGE_BITS).contains(&nr_bits) {
        return Err(FbcapError::OutOfRange(format!(
            "nR must lie in [0, {MAX_MESSAGE_BITS}] bits, got {nr_bits}"
        )));
    }
    Ok((nr_bits.exp2().floor() as u64).max(1))
}

fn pam_variance(count: u64) -> f64 {
    let n = count as f64;
    (n * n - 1.0) / 12.0
}

fn pam_symbol(msg: u64, count: u64) -> f64 {
    if count == 1 {
        return 0.0;
    }
    (msg as f64 - (count as f64 + 1.0) / 2.0) / pam_variance(count).sqrt()
}

/// Zero-mean, unit-variance PAM point of message `msg ∈ 1..=⌊2^{nR}⌋`.
pub fn pam_map(msg: u64, nr_bits: f64) -> Result<f64> {
    let count = message_count(nr_bits)?;
    if msg == 0 || msg > count {
        return Err(FbcapError::OutOfRange(format!("message {msg} outside 1..={count}")));
    }
    Ok(pam_symbol(msg, count))
}

/// Nearest PAM message to the normalized value `u`.
pub fn pam_decode(u: f64, count: u64) -> u64 {
    if count == 1 {
        return 1;
    }
    let raw = u * pam_variance(count).sqrt() + (count as f64 + 1.0) / 2.0;
    if raw.is_nan() {
        return 1;
    }
    raw.round().clamp(1.0, count as f64) as u64
}

/// Constants of the smoother: `C = Λ A + H`, `F_p = F − K_p C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherConstants {
    pub c: Mat,
    pub kp: Mat,
    pub fp: Mat,
    pub psi: Mat,
}

impl SmootherConstants {
    pub fn new(channel: &ChannelModel, policy: &Policy, riccati: &RiccatiSolution) -> Self {
        let noise = channel.noise();
        let c = channel.lambda() * &policy.a + noise.h();
        let fp = noise.f() - &riccati.kp * &c;
        Self {
            c,
            kp: riccati.kp.clone(),
            fp,
            psi: riccati.psi.clone(),
        }
    }
}

/// Estimate `ẑ_{0|i}` of the first noise sample and its covariance `Ẑ_{0|i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub z_hat: Vector,
    pub z_cov: Mat,
    /// `F_p^i`.
    pub fp_power: Mat,
    pub i: usize,
}

impl SmootherState {
    /// `ẑ_{0|0} = 0`, `Ẑ_{0|0} = Ψ`.
    pub fn new(psi: &Mat, ns: usize) -> Self {
        Self {
            z_hat: Vector::zeros(psi.nrows()),
            z_cov: psi.clone(),
            fp_power: Mat::identity(ns, ns),
            i: 0,
        }
    }
}

/// Incorporates `y_i` given `H ŝ̂_i`, with `κ_i = C F_p^{i−1} K_p` and output
/// innovation covariance `κ_i Ẑ_{0|i−1} κ_iᵀ + Ψ`.
pub fn smoother_step(state: &SmootherState, y: &Vector, hhs: &Vector, k: &SmootherConstants) -> Result<SmootherState> {
    let kappa = &k.c * &state.fp_power * &k.kp;
    let s = linalg::symmetrize(&(&kappa * &state.z_cov * kappa.transpose() + &k.psi));
    let inv = s.try_inverse().ok_or(FbcapError::SingularPsiY)?;
    let gain = &state.z_cov * kappa.transpose() * inv;
    let p = state.z_cov.nrows();
    let j = Mat::identity(p, p) - &gain * &kappa;
    let z_cov = linalg::symmetrize(&(&j * &state.z_cov * j.transpose() + &gain * &k.psi * gain.transpose()));
    Ok(SmootherState {
        z_hat: &state.z_hat + &gain * (y - hhs),
        z_cov,
        fp_power: &k.fp * &state.fp_power,
        i: state.i + 1,
    })
}

/// Data-independent decoder quantities for `i = 1..=n`: `Σ̂_i`, `Ψ_{Y,i}`, `K_{Y,i}`.
///
/// The decoder does not use `y_0`, so `ŝ̂_1 = 0` and `Σ̂_1 = K_p Ψ K_pᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSchedule {
    pub sigma_hat: Vec<Mat>,
    pub psi_y: Vec<Mat>,
    pub ky: Vec<Mat>,
}

impl DecoderSchedule {
    pub fn new(channel: &ChannelModel, policy: &Policy, riccati: &RiccatiSolution, n: usize) -> Result<Self> {
        let noise = channel.noise();
        let f = noise.f();
        let c = channel.lambda() * &policy.a + noise.h();
        let (kp, psi) = (&riccati.kp, &riccati.psi);
        let kpk = kp * psi * kp.transpose();
        let mut sigma_hat = kpk.clone();
        let mut out = Self {
            sigma_hat: Vec::with_capacity(n),
            psi_y: Vec::with_capacity(n),
            ky: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let psi_y = linalg::symmetrize(&(&c * &sigma_hat * c.transpose() + psi));
            let inv = psi_y.clone().try_inverse().ok_or(FbcapError::SingularPsiY)?;
            let ky = (f * &sigma_hat * c.transpose() + kp * psi) * inv;
            let next = linalg::clip_psd(&(f * &sigma_hat * f.transpose() + &kpk - &ky * &psi_y * ky.transpose()));
            out.sigma_hat.push(std::mem::replace(&mut sigma_hat, next));
            out.psi_y.push(psi_y);
            out.ky.push(ky);
        }
        Ok(out)
    }
}

/// Smoother covariances `Ẑ_{0|i}` for `i = 0..=n`.
pub fn smoother_covariances(constants: &SmootherConstants, n: usize) -> Result<Vec<Mat>> {
    let ns = constants.fp.nrows();
    let p = constants.psi.nrows();
    let mut state = SmootherState::new(&constants.psi, ns);
    let mut out = vec![state.z_cov.clone()];
    let zero = Vector::zeros(p);
    for _ in 0..n {
        state = smoother_step(&state, &zero, &zero, constants)?;
        out.push(state.z_cov.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    channel: ChannelModel,
    policy: Policy,
    n: usize,
    rate_bits: f64,
    seed: u64,
    trials: usize,
}

impl SchemeConfig {
    /// Validates the configuration; a policy whose i.i.d. part is below
    /// [`M_ZERO_TOL`] is used with `M = 0`.
    pub fn new(
        channel: ChannelModel,
        policy: Policy,
        n: usize,
        rate_bits: f64,
        seed: u64,
        trials: usize,
    ) -> Result<Self> {
        if !channel.is_scalar() {
            return Err(FbcapError::NotScalar);
        }
        if n == 0 || trials == 0 {
            return Err(FbcapError::InvalidConfig("n and trials must be positive".into()));
        }
        if !(rate_bits.is_finite() && rate_bits > 0.0) {
            return Err(FbcapError::InvalidConfig(format!(
                "rate must be positive, got {rate_bits}"
            )));
        }
        message_count(n as f64 * rate_bits)?;
        if policy.a.nrows() != 1 || policy.a.ncols() != channel.noise().ns() {
            return Err(FbcapError::DimensionMismatch(
                "policy does not match the channel".into(),
            ));
        }
        if linalg::sup_norm(&policy.m) > M_ZERO_TOL {
            return Err(FbcapError::NonZeroIidComponent(policy.m.trace()));
        }
        let policy = Policy {
            m: Mat::zeros(1, 1),
            ..policy
        };
        Ok(Self {
            channel,
            policy,
            n,
            rate_bits,
            seed,
            trials,
        })
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn rate_bits(&self) -> f64 {
        self.rate_bits
    }
    pub fn trials(&self) -> usize {
        self.trials
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub msg: u64,
    pub msg_hat: u64,
    pub error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub p_e: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub errors: usize,
    pub trials: usize,
    pub messages: u64,
    /// Mean of `(1/(n+1)) Σ_{i=0}^{n} x_i²` over trials.
    pub avg_power: f64,
    pub power_violation: bool,
    /// `det Ẑ_{0|i}` for `i = 0..=n`.
    pub det_trace: Vec<f64>,
    #[serde(skip)]
    pub outcomes: Vec<TrialOutcome>,
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(errors: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

struct Engine<'a> {
    config: &'a SchemeConfig,
    riccati: RiccatiSolution,
    schedule: DecoderSchedule,
    constants: SmootherConstants,
    state_sqrt: Mat,
    joint_sqrt: Mat,
    count: u64,
}

impl Engine<'_> {
    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn trial(&self, trial: usize) -> Result<(TrialOutcome, f64)> {
        let noise = self.config.channel.noise();
        let (f, g, h) = (noise.f(), noise.g(), noise.h());
        let (ns, q) = (noise.ns(), noise.q());
        let lambda = self.config.channel.lambda()[(0, 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(trial as u64);

        let msg = rng.random_range(1..=self.count);
        let mut s = &self.state_sqrt * Self::normals(&mut rng, ns);
        let sample_z = |s: &mut Vector, rng: &mut ChaCha8Rng| {
            let wv = &self.joint_sqrt * Self::normals(rng, q + 1);
            let z = h * &*s + wv.rows(q, 1).clone_owned();
            *s = f * &*s + g * wv.rows(0, q).clone_owned();
            z
        };

        let x0 = pam_symbol(msg, self.count);
        let z0 = sample_z(&mut s, &mut rng);
        let y0 = lambda * x0 + z0[0];
        let mut energy = x0 * x0;

        let mut enc = Vector::zeros(ns);
        let mut dec = Vector::zeros(ns);
        let mut z_prev = z0;
        let mut y_prev = Vector::zeros(1);
        let mut smoother = SmootherState::new(&self.riccati.psi, ns);
        for i in 1..=self.config.n {
            enc = f * &enc + &self.riccati.kp * (&z_prev - h * &enc);
            if i > 1 {
                dec = f * &dec + &self.schedule.ky[i - 2] * (&y_prev - h * &dec);
            }
            let x = (&self.config.policy.a * (&enc - &dec))[0];
            energy += x * x;
            let z = sample_z(&mut s, &mut rng);
            let y = Vector::from_element(1, lambda * x + z[0]);
            smoother = smoother_step(&smoother, &y, &(h * &dec), &self.constants)?;
            z_prev = z;
            y_prev = y;
        }
        let estimate = (y0 - smoother.z_hat[0]) / lambda;
        let msg_hat = pam_decode(estimate, self.count);
        Ok((
            TrialOutcome {
                trial,
                msg,
                msg_hat,
                error: msg != msg_hat,
            },
            energy / (self.config.n + 1) as f64,
        ))
    }
}

/// Monte Carlo estimate of the error probability. Trial `k` draws from the
/// ChaCha stream `k` of the configured seed, so results do not depend on
/// scheduling.
pub fn simulate(config: &SchemeConfig) -> Result<SimResult> {
    let channel = &config.channel;
    let noise = channel.noise();
    if channel.lambda()[(0, 0)] == 0.0 {
        return Err(FbcapError::OutOfRange("channel gain is zero".into()));
    }
    let riccati = solve_dare(noise)?;
    let schedule = DecoderSchedule::new(channel, &config.policy, &riccati, config.n)?;
    let constants = SmootherConstants::new(channel, &config.policy, &riccati);
    let det_trace = smoother_covariances(&constants, config.n)?
        .iter()
        .map(linalg::det)
        .collect();
    let engine = Engine {
        config,
        state_sqrt: linalg::psd_sqrt(&riccati.sigma),
        joint_sqrt: linalg::psd_sqrt(&noise.joint_covariance()),
        count: message_count(config.n as f64 * config.rate_bits)?,
        riccati,
        schedule,
        constants,
    };
    let results: Vec<(TrialOutcome, f64)> = (0..config.trials)
        .into_par_iter()
        .map(|t| engine.trial(t))
        .collect::<Result<_>>()?;
    let errors = results.iter().filter(|(o, _)| o.error).count();
    let avg_power = results.iter().map(|(_, e)| e).sum::<f64>() / config.trials as f64;
    let (ci_low, ci_high) = wilson_interval(errors, config.trials);
    Ok(SimResult {
        p_e: errors as f64 / config.trials as f64,
        ci_low,
        ci_high,
        errors,
        trials: config.trials,
        messages: engine.count,
        avg_power,
        power_violation: avg_power > (1.0 + POWER_SLACK) * channel.power(),
        det_trace,
        outcomes: results.into_iter().map(|(o, _)| o).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pam_two_points() {
        assert_relative_eq!(pam_map(1, 1.0).unwrap(), -1.0);
        assert_relative_eq!(pam_map(2, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn pam_four_points() {
        let scale = (15.0f64 / 12.0).sqrt();
        let pts: Vec<f64> = (1..=4).map(|m| pam_map(m, 2.0).unwrap()).collect();
        for (p, e) in pts.iter().zip([-1.5, -0.5, 0.5, 1.5]) {
            assert_relative_eq!(*p, e / scale, epsilon = 1e-15);
        }
    }

    #[test]
    fn pam_single_message() {
        assert_eq!(pam_map(1, 0.0).unwrap(), 0.0);
        assert_eq!(pam_decode(3.7, 1), 1);
        assert!(pam_map(2, 0.0).is_err());
    }

    #[test]
    fn pam_decode_inverts_map() {
        for m in 1..=8 {
            assert_eq!(pam_decode(pam_map(m, 3.0).unwrap(), 8), m);
        }
        assert_eq!(pam_decode(100.0, 8), 8);
        assert_eq!(pam_decode(-100.0, 8), 1);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo < 1e-15);
        assert!(hi > 0.03 && hi < 0.04);
    }
}
