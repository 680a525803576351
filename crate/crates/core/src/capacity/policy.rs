//! Time-invariant input law `x_i = A (ŝ_i − ŝ̂_i) + m_i`, `m_i ~ N(0, M)`.

use crate::capacity::{CapacitySolution, PINV_TOL};
use crate::error::{FbcapError, Result};
use crate::kalman::solve_dare;
use crate::linalg::{self, Mat};
use crate::state_space::ChannelModel;

/// Negative eigenvalues of `M` down to this value are clipped to zero.
pub const M_CLIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// Feedback coefficient `Γ Σ̂†`.
    pub a: Mat,
    /// Covariance of the i.i.d. component.
    pub m: Mat,
}

impl Policy {
    /// Input covariance `A Σ̂ Aᵀ + M`.
    pub fn input_covariance(&self, sigma_hat: &Mat) -> Mat {
        &self.a * sigma_hat * self.a.transpose() + &self.m
    }
}

pub fn extract_policy(sol: &CapacitySolution) -> Result<Policy> {
    let pinv = linalg::pinv_psd(&sol.sigma_hat, PINV_TOL);
    let a = &sol.gamma * &pinv;
    let m = linalg::symmetrize(&(&sol.pi - &a * sol.gamma.transpose()));
    let min = linalg::min_eigenvalue(&m);
    if min < -M_CLIP_TOL {
        return Err(FbcapError::NotPsdAfterClip(min));
    }
    Ok(Policy {
        a,
        m: linalg::clip_psd(&m),
    })
}

/// Outcome of [`closed_loop_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub sigma_hat: Mat,
    pub psi_y: Mat,
    /// `|Σ̂_N − Σ̂*|_∞` against the reference solution, if given.
    pub sigma_hat_error: Option<f64>,
    /// `|Ψ_{Y,N} − Ψ_Y*|_∞` against the reference solution, if given.
    pub psi_y_error: Option<f64>,
    /// `(F, Λ A + H)` detectable.
    pub detectable: bool,
    /// `tr Ψ_{Y,i}` for `i = 1..=N`.
    pub psi_y_trace: Vec<f64>,
}

/// Runs the decoder covariance recursion
/// `Σ̂_{i+1} = F Σ̂_i Fᵀ + K_p Ψ K_pᵀ − K_{Y,i} Ψ_{Y,i} K_{Y,i}ᵀ`
/// under a fixed policy from `Σ̂_1 = 0`. At `i = 1` the input is a fresh
/// symbol of covariance `Π*` from `reference` (or `M` without one), since
/// from `Σ̂ = 0` a pure feedback input carries no power.
pub fn closed_loop_check(
    channel: &ChannelModel,
    policy: &Policy,
    reference: Option<&CapacitySolution>,
    horizon: usize,
) -> Result<ConvergenceReport> {
    let noise = channel.noise();
    let dare = solve_dare(noise)?;
    let (f, h, lambda) = (noise.f(), noise.h(), channel.lambda());
    let c = lambda * &policy.a + h;
    let ns = noise.ns();
    let kpk = &dare.kp * &dare.psi * dare.kp.transpose();
    let first = reference.map_or_else(|| policy.m.clone(), |r| r.pi.clone());
    let mut sigma_hat = Mat::zeros(ns, ns);
    let mut psi_y = dare.psi.clone();
    let mut trace = Vec::with_capacity(horizon);
    for i in 1..=horizon {
        let m = if i == 1 { &first } else { &policy.m };
        psi_y = linalg::symmetrize(&(&c * &sigma_hat * c.transpose() + lambda * m * lambda.transpose() + &dare.psi));
        trace.push(psi_y.trace());
        let inv = psi_y.clone().try_inverse().ok_or(FbcapError::SingularPsiY)?;
        let ky = (f * &sigma_hat * c.transpose() + &dare.kp * &dare.psi) * inv;
        sigma_hat = linalg::clip_psd(&(f * &sigma_hat * f.transpose() + &kpk - &ky * &psi_y * ky.transpose()));
    }
    let outside = |l: num_complex::Complex64| l.norm() >= 1.0 - linalg::EIG_TOL;
    Ok(ConvergenceReport {
        sigma_hat_error: reference.map(|r| linalg::sup_norm(&(&sigma_hat - &r.sigma_hat))),
        psi_y_error: reference.map(|r| linalg::sup_norm(&(&psi_y - &r.psi_y))),
        detectable: linalg::pbh_observable(f, &c, outside),
        sigma_hat,
        psi_y,
        psi_y_trace: trace,
    })
}
