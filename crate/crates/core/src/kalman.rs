//! Kalman filtering of the noise process and the associated Riccati equation.

use crate::error::{FbcapError, Result};
use crate::linalg::{self, Mat, Vector};
use crate::state_space::StateSpaceNoise;

/// Convergence tolerance of the Riccati iteration (sup-norm, relative to `max(1, |Σ|_∞)`).
pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;

/// One step of the Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiStep {
    pub sigma_next: Mat,
    pub kp: Mat,
    pub psi: Mat,
}

/// Stabilizing (or maximal) solution of the filtering Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub sigma: Mat,
    pub kp: Mat,
    pub psi: Mat,
    /// `ρ(F − K_p H)`.
    pub closed_loop_radius: f64,
    pub iterations: usize,
    pub residual: f64,
    /// The fixed point exists but does not stabilize `F − K_p H`.
    pub maximal_only: bool,
}

/// Kalman gain `K_p = (F Σ Hᵀ + G L) Ψ⁻¹` and innovation covariance `Ψ = H Σ Hᵀ + V`.
pub fn gain(model: &StateSpaceNoise, sigma: &Mat) -> Result<(Mat, Mat)> {
    let h = model.h();
    let psi = linalg::symmetrize(&(h * sigma * h.transpose() + model.v()));
    let psi_inv = linalg::inv_spd(&psi)?;
    let kp = (model.f() * sigma * h.transpose() + model.gl()) * psi_inv;
    Ok((kp, psi))
}

/// `F Σ Fᵀ + G W Gᵀ − K_p Ψ K_pᵀ − Σ`.
pub fn riccati_residual(model: &StateSpaceNoise, sigma: &Mat, kp: &Mat, psi: &Mat) -> Mat {
    let f = model.f();
    f * sigma * f.transpose() + model.gwg() - kp * psi * kp.transpose() - sigma
}

pub fn riccati_step(model: &StateSpaceNoise, sigma: &Mat) -> Result<RiccatiStep> {
    let (kp, psi) = gain(model, sigma)?;
    let f = model.f();
    let next = f * sigma * f.transpose() + model.gwg() - &kp * &psi * kp.transpose();
    Ok(RiccatiStep {
        sigma_next: linalg::clip_psd(&next),
        kp,
        psi,
    })
}

/// Predicted estimate `ŝ_i` and its error covariance `Σ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub s_hat: Vector,
    pub sigma: Mat,
}

impl FilterState {
    /// Prior at time 1: `ŝ_1 = 0`, `Σ_1 = Sigma1`.
    pub fn initial(model: &StateSpaceNoise) -> Self {
        Self {
            s_hat: Vector::zeros(model.ns()),
            sigma: model.sigma1().clone(),
        }
    }
}

/// Time-varying Kalman filter step on the observation `z_i`.
pub fn kalman_filter_step(model: &StateSpaceNoise, state: &FilterState, z: &Vector) -> Result<FilterState> {
    check_len(z, model.p())?;
    let step = riccati_step(model, &state.sigma)?;
    let innovation = z - model.h() * &state.s_hat;
    Ok(FilterState {
        s_hat: model.f() * &state.s_hat + step.kp * innovation,
        sigma: step.sigma_next,
    })
}

fn check_len(z: &Vector, p: usize) -> Result<()> {
    if z.len() != p {
        return Err(FbcapError::DimensionMismatch(format!(
            "observation has length {}, expected {p}",
            z.len()
        )));
    }
    Ok(())
}

/// Time-invariant Kalman filter with fixed gain `K_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryFilter {
    f: Mat,
    h: Mat,
    kp: Mat,
}

impl StationaryFilter {
    pub fn new(model: &StateSpaceNoise, solution: &RiccatiSolution) -> Self {
        Self {
            f: model.f().clone(),
            h: model.h().clone(),
            kp: solution.kp.clone(),
        }
    }

    /// `ŝ_{i+1} = F ŝ_i + K_p (z_i − H ŝ_i)`.
    pub fn step(&self, s_hat: &Vector, z: &Vector) -> Result<Vector> {
        check_len(z, self.h.nrows())?;
        Ok(&self.f * s_hat + &self.kp * (z - &self.h * s_hat))
    }

    pub fn kp(&self) -> &Mat {
        &self.kp
    }
}

/// Solves the filtering Riccati equation, starting the fixed-point iteration from
/// `G W Gᵀ` and falling back to structured doubling when it stalls.
pub fn solve_dare(model: &StateSpaceNoise) -> Result<RiccatiSolution> {
    let mut sigma = linalg::clip_psd(&model.gwg());
    let mut last_update = f64::INFINITY;
    let mut converged_at = None;
    for it in 1..=DARE_MAX_ITER {
        let step = riccati_step(model, &sigma)?;
        last_update = linalg::sup_norm(&(&step.sigma_next - &sigma));
        sigma = step.sigma_next;
        if !linalg::is_finite(&sigma) {
            break;
        }
        if last_update < DARE_TOL * linalg::sup_norm(&sigma).max(1.0) {
            converged_at = Some(it);
            break;
        }
    }
    let (sigma, iterations) = match converged_at {
        Some(it) => (sigma, it),
        None => {
            let (x, it) = doubling(model).ok_or(FbcapError::NoConvergence {
                iterations: DARE_MAX_ITER,
                last_update,
            })?;
            (x, DARE_MAX_ITER + it)
        }
    };
    let (kp, psi) = gain(model, &sigma)?;
    let residual = linalg::sup_norm(&riccati_residual(model, &sigma, &kp, &psi));
    if residual > 1e-9 * linalg::sup_norm(&sigma).max(1.0) {
        return Err(FbcapError::NoConvergence {
            iterations,
            last_update: residual,
        });
    }
    let closed_loop_radius = linalg::spectral_radius(&(model.f() - &kp * model.h()));
    Ok(RiccatiSolution {
        maximal_only: closed_loop_radius >= 1.0 - linalg::EIG_TOL,
        sigma,
        kp,
        psi,
        closed_loop_radius,
        iterations,
        residual,
    })
}

/// Structured doubling on the decorrelated form
/// `Σ = F_s Σ F_sᵀ − F_s Σ Hᵀ (H Σ Hᵀ + V)⁻¹ H Σ F_sᵀ + Q_s`.
fn doubling(model: &StateSpaceNoise) -> Option<(Mat, usize)> {
    let (fs, qs) = model.decorrelated();
    let n = model.ns();
    let vinv = linalg::inv_spd(model.v()).ok()?;
    let mut a = fs.transpose();
    let mut g = linalg::symmetrize(&(model.h().transpose() * vinv * model.h()));
    let mut h = qs;
    let eye = Mat::identity(n, n);
    for it in 1..=200 {
        let w = (&eye + &g * &h).try_inverse()?;
        let a_next = &a * &w * &a;
        let g_next = linalg::symmetrize(&(&g + &a * &w * &g * a.transpose()));
        let h_next = linalg::symmetrize(&(&h + a.transpose() * &h * &w * &a));
        let delta = linalg::sup_norm(&(&h_next - &h));
        a = a_next;
        g = g_next;
        h = h_next;
        if !linalg::is_finite(&h) {
            return None;
        }
        if delta <= 1e-15 * linalg::sup_norm(&h).max(1.0) {
            return Some((linalg::clip_psd(&h), it));
        }
    }
    None
}

/// Horizon of [`entropy_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

/// Differential entropy rate of the noise in nats per step.
pub fn entropy_rate(model: &StateSpaceNoise, horizon: Horizon) -> Result<f64> {
    let p = model.p() as f64;
    let gauss = 0.5 * p * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let logdet = |psi: &Mat| linalg::log_det_spd(psi).ok_or(FbcapError::SingularInnovation { cond: f64::INFINITY });
    match horizon {
        Horizon::Infinite => Ok(0.5 * logdet(&solve_dare(model)?.psi)? + gauss),
        Horizon::Finite(0) => Err(FbcapError::OutOfRange("horizon must be at least 1".into())),
        Horizon::Finite(n) => {
            let mut sigma = model.sigma1().clone();
            let mut acc = 0.0;
            for _ in 0..n {
                let step = riccati_step(model, &sigma)?;
                acc += logdet(&step.psi)?;
                sigma = step.sigma_next;
            }
            Ok(acc / (2.0 * n as f64) + gauss)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn riccati_step_ma2() {
        let ma = StateSpaceNoise::ma1(2.0).unwrap();
        let s = riccati_step(&ma, &m1(1.0)).unwrap();
        assert_relative_eq!(s.sigma_next[(0, 0)], 0.8, epsilon = 1e-15);
        let s0 = riccati_step(&ma, &m1(0.0)).unwrap();
        assert_eq!(s0.sigma_next[(0, 0)], 0.0);
    }

    #[test]
    fn riccati_step_without_observation() {
        let model = StateSpaceNoise::new(m1(0.5), m1(1.0), m1(0.0), m1(2.0), m1(4.0), m1(1.0), None).unwrap();
        let s = riccati_step(&model, &m1(1.0)).unwrap();
        assert_relative_eq!(s.kp[(0, 0)], 0.25);
        assert_relative_eq!(s.sigma_next[(0, 0)], 0.25 + 2.0 - 0.25 * 4.0 * 0.25);
    }

    #[test]
    fn dare_ma_examples() {
        let s = solve_dare(&StateSpaceNoise::ma1(0.5).unwrap()).unwrap();
        assert!(s.sigma[(0, 0)].abs() < 1e-12);
        assert_relative_eq!(s.kp[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.psi[(0, 0)], 1.0, epsilon = 1e-12);

        let s = solve_dare(&StateSpaceNoise::ma1(2.0).unwrap()).unwrap();
        assert_relative_eq!(s.sigma[(0, 0)], 0.75, epsilon = 1e-10);
        assert_relative_eq!(s.psi[(0, 0)], 4.0, epsilon = 1e-10);
        assert_relative_eq!(s.kp[(0, 0)], 0.25, epsilon = 1e-10);
        assert_relative_eq!(s.closed_loop_radius, 0.5, epsilon = 1e-10);
        assert!(!s.maximal_only);
    }

    #[test]
    fn dare_ma_unit_root_is_maximal_only() {
        let s = solve_dare(&StateSpaceNoise::ma1(1.0).unwrap()).unwrap();
        assert!(s.maximal_only);
        assert!(s.sigma[(0, 0)].abs() < 1e-4);
    }

    #[test]
    fn dare_no_memory() {
        let model = StateSpaceNoise::new(m1(0.0), m1(1.0), m1(0.0), m1(2.0), m1(4.0), m1(1.0), None).unwrap();
        let s = solve_dare(&model).unwrap();
        assert_relative_eq!(s.sigma[(0, 0)], 2.0 - 0.25, epsilon = 1e-14);
        assert_relative_eq!(s.psi[(0, 0)], 4.0);
        assert_relative_eq!(s.kp[(0, 0)], 0.25);
    }

    #[test]
    fn filter_steps() {
        let ma = StateSpaceNoise::ma1(2.0).unwrap();
        let sol = solve_dare(&ma).unwrap();
        let filt = StationaryFilter::new(&ma, &sol);
        let next = filt.step(&Vector::zeros(1), &Vector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(next[0], 0.25, epsilon = 1e-10);

        let ar = StateSpaceNoise::ar1(0.7).unwrap();
        let st = FilterState {
            s_hat: Vector::from_element(1, 2.0),
            sigma: m1(1.0),
        };
        let z = ar.h() * &st.s_hat;
        let next = kalman_filter_step(&ar, &st, &z).unwrap();
        assert_relative_eq!(next.s_hat[0], 1.4, epsilon = 1e-14);
    }

    #[test]
    fn entropy_rates() {
        let g = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let white = StateSpaceNoise::white(m1(1.0)).unwrap();
        assert_relative_eq!(entropy_rate(&white, Horizon::Finite(5)).unwrap(), g, epsilon = 1e-14);
        let ma = StateSpaceNoise::ma1(2.0).unwrap();
        let inf = entropy_rate(&ma, Horizon::Infinite).unwrap();
        assert_relative_eq!(inf, g + 0.5 * 4.0_f64.ln(), epsilon = 1e-10);
        let stab = solve_dare(&ma).unwrap().sigma;
        let ma_stab = ma.with_sigma1(stab).unwrap();
        assert_relative_eq!(
            entropy_rate(&ma_stab, Horizon::Finite(1)).unwrap(),
            inf,
            epsilon = 1e-10
        );
    }
}
