//! Linear state-space noise models and channel descriptions.
//!
//! The noise is generated by
//!
//! ```text
//! s_{i+1} = F s_i + G w_i
//! z_i     = H s_i + v_i
//! ```
//!
//! with `(w_i, v_i)` jointly Gaussian, `cov(w) = W`, `cov(v) = V`, `E[w vᵀ] = L`.
//! The channel is `y_i = Λ x_i + z_i` with average power budget `P`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{FbcapError, Result};
use crate::kalman;
use crate::linalg::{self, Mat, EIG_TOL};

/// Tolerance used for symmetry and positive-semidefiniteness checks,
/// relative to `max(1, |A|_∞)`.
pub const PSD_TOL: f64 = 1e-9;

fn scaled_tol(a: &Mat) -> f64 {
    PSD_TOL * linalg::sup_norm(a).max(1.0)
}

fn check_shape(a: &Mat, rows: usize, cols: usize, name: &str) -> Result<()> {
    if a.nrows() != rows || a.ncols() != cols {
        return Err(FbcapError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !linalg::is_finite(a) {
        return Err(FbcapError::NonFinite(name.to_string()));
    }
    Ok(())
}

fn check_symmetric(a: &Mat, name: &str) -> Result<()> {
    if linalg::sup_norm(&(a - a.transpose())) > scaled_tol(a) {
        return Err(FbcapError::NotSymmetric(name.to_string()));
    }
    Ok(())
}

fn check_psd(a: &Mat, name: &str) -> Result<()> {
    let min_eig = linalg::min_eigenvalue(a);
    if min_eig < -scaled_tol(a) {
        return Err(FbcapError::NotPsd {
            name: name.to_string(),
            min_eig,
        });
    }
    Ok(())
}

/// Joint covariance `[[W, L], [Lᵀ, V]]` of `(w, v)`.
fn joint_covariance(w: &Mat, v: &Mat, l: &Mat) -> Mat {
    let q = w.nrows();
    let p = v.nrows();
    let mut j = Mat::zeros(q + p, q + p);
    j.view_mut((0, 0), (q, q)).copy_from(w);
    j.view_mut((0, q), (q, p)).copy_from(l);
    j.view_mut((q, 0), (p, q)).copy_from(&l.transpose());
    j.view_mut((q, q), (p, p)).copy_from(v);
    j
}

/// State-space generator of the channel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceNoise {
    f: Mat,
    g: Mat,
    h: Mat,
    w: Mat,
    v: Mat,
    l: Mat,
    sigma1: Mat,
}

impl StateSpaceNoise {
    /// Builds a validated model. When `sigma1` is `None` the stationary state
    /// covariance is used if `F` is stable and the identity otherwise.
    pub fn new(f: Mat, g: Mat, h: Mat, w: Mat, v: Mat, l: Mat, sigma1: Option<Mat>) -> Result<Self> {
        let ns = f.nrows();
        let q = g.ncols();
        let p = h.nrows();
        if ns == 0 || p == 0 {
            return Err(FbcapError::DimensionMismatch(
                "state and noise dimensions must be positive".into(),
            ));
        }
        check_shape(&f, ns, ns, "F")?;
        check_shape(&g, ns, q, "G")?;
        check_shape(&h, p, ns, "H")?;
        check_shape(&w, q, q, "W")?;
        check_shape(&v, p, p, "V")?;
        check_shape(&l, q, p, "L")?;
        check_symmetric(&w, "W")?;
        check_symmetric(&v, "V")?;
        check_psd(&w, "W")?;
        if linalg::min_eigenvalue(&v) <= scaled_tol(&v) {
            return Err(FbcapError::InfiniteCapacity);
        }
        check_psd(&joint_covariance(&w, &v, &l), "joint covariance [[W, L], [Lᵀ, V]]")?;
        let w = linalg::symmetrize(&w);
        let v = linalg::symmetrize(&v);
        let sigma1 = match sigma1 {
            Some(s) => {
                check_shape(&s, ns, ns, "Sigma1")?;
                check_symmetric(&s, "Sigma1")?;
                check_psd(&s, "Sigma1")?;
                linalg::symmetrize(&s)
            }
            None => default_sigma1(&f, &g, &w),
        };
        Ok(Self {
            f,
            g,
            h,
            w,
            v,
            l,
            sigma1,
        })
    }

    /// Moving-average noise `z_i = w_i + α w_{i−1}`.
    pub fn ma1(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(FbcapError::NonFinite("alpha".into()));
        }
        let one = Mat::from_element(1, 1, 1.0);
        Self::new(
            Mat::zeros(1, 1),
            one.clone(),
            Mat::from_element(1, 1, alpha),
            one.clone(),
            one.clone(),
            one,
            None,
        )
    }

    /// Auto-regressive noise `z_i = β z_{i−1} + w_i`.
    pub fn ar1(beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(FbcapError::NonFinite("beta".into()));
        }
        let one = Mat::from_element(1, 1, 1.0);
        let b = Mat::from_element(1, 1, beta);
        Self::new(b.clone(), one.clone(), b, one.clone(), one.clone(), one, None)
    }

    /// White noise of covariance `V` (`H = 0`).
    pub fn white(v: Mat) -> Result<Self> {
        let p = v.nrows();
        Self::new(
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(p, 1),
            Mat::zeros(1, 1),
            v,
            Mat::zeros(1, p),
            None,
        )
    }

    /// Replaces the initial state covariance.
    pub fn with_sigma1(self, sigma1: Mat) -> Result<Self> {
        Self::new(self.f, self.g, self.h, self.w, self.v, self.l, Some(sigma1))
    }

    pub fn f(&self) -> &Mat {
        &self.f
    }
    pub fn g(&self) -> &Mat {
        &self.g
    }
    pub fn h(&self) -> &Mat {
        &self.h
    }
    pub fn w(&self) -> &Mat {
        &self.w
    }
    pub fn v(&self) -> &Mat {
        &self.v
    }
    pub fn l(&self) -> &Mat {
        &self.l
    }
    pub fn sigma1(&self) -> &Mat {
        &self.sigma1
    }
    /// State dimension `n_s`.
    pub fn ns(&self) -> usize {
        self.f.nrows()
    }
    /// Disturbance dimension `q`.
    pub fn q(&self) -> usize {
        self.g.ncols()
    }
    /// Noise (and channel output) dimension `p`.
    pub fn p(&self) -> usize {
        self.h.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.f)
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0 - EIG_TOL
    }

    /// `G W Gᵀ`.
    pub fn gwg(&self) -> Mat {
        &self.g * &self.w * self.g.transpose()
    }

    /// `G L`.
    pub fn gl(&self) -> Mat {
        &self.g * &self.l
    }

    /// Joint covariance of `(w, v)`.
    pub fn joint_covariance(&self) -> Mat {
        joint_covariance(&self.w, &self.v, &self.l)
    }

    /// Decorrelated pair `(F_s, Q_s)` with `F_s = F − G L V⁻¹ H` and
    /// `Q_s = G (W − L V⁻¹ Lᵀ) Gᵀ`.
    pub fn decorrelated(&self) -> (Mat, Mat) {
        let vinv = self
            .v
            .clone()
            .try_inverse()
            .expect("V is positive definite by construction");
        let fs = &self.f - &self.g * &self.l * &vinv * &self.h;
        let inner = &self.w - &self.l * &vinv * self.l.transpose();
        let qs = linalg::symmetrize(&(&self.g * inner * self.g.transpose()));
        (fs, qs)
    }

    /// Stationary state covariance `Σ_ss = F Σ_ss Fᵀ + G W Gᵀ`.
    pub fn stationary_state_covariance(&self) -> Result<Mat> {
        let rho = self.spectral_radius();
        if rho >= 1.0 - EIG_TOL {
            return Err(FbcapError::UnstableModel(rho));
        }
        Ok(linalg::lyapunov_discrete(&self.f, &self.gwg()))
    }

    /// Stationary covariance of `z`: `H Σ_ss Hᵀ + V`.
    pub fn stationary_noise_covariance(&self) -> Result<Mat> {
        let s = self.stationary_state_covariance()?;
        Ok(linalg::symmetrize(&(&self.h * s * self.h.transpose() + &self.v)))
    }
}

fn default_sigma1(f: &Mat, g: &Mat, w: &Mat) -> Mat {
    if linalg::spectral_radius(f) < 1.0 - EIG_TOL {
        linalg::lyapunov_discrete(f, &(g * w * g.transpose()))
    } else {
        Mat::identity(f.nrows(), f.nrows())
    }
}

/// Channel `y = Λ x + z` with power budget `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    lambda: Mat,
    power: f64,
    noise: StateSpaceNoise,
}

impl ChannelModel {
    pub fn new(lambda: Mat, power: f64, noise: StateSpaceNoise) -> Result<Self> {
        if !(power.is_finite() && power > 0.0) {
            return Err(FbcapError::OutOfRange(format!(
                "power budget must be positive and finite, got {power}"
            )));
        }
        if lambda.nrows() != noise.p() || lambda.ncols() == 0 {
            return Err(FbcapError::DimensionMismatch(format!(
                "Lambda is {}x{}, expected {} rows",
                lambda.nrows(),
                lambda.ncols(),
                noise.p()
            )));
        }
        if !linalg::is_finite(&lambda) {
            return Err(FbcapError::NonFinite("Lambda".into()));
        }
        Ok(Self { lambda, power, noise })
    }

    /// Channel with `Λ = I`.
    pub fn identity(power: f64, noise: StateSpaceNoise) -> Result<Self> {
        let p = noise.p();
        Self::new(Mat::identity(p, p), power, noise)
    }

    pub fn lambda(&self) -> &Mat {
        &self.lambda
    }
    pub fn power(&self) -> f64 {
        self.power
    }
    pub fn noise(&self) -> &StateSpaceNoise {
        &self.noise
    }
    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.lambda.ncols()
    }
    pub fn p(&self) -> usize {
        self.noise.p()
    }
    pub fn is_scalar(&self) -> bool {
        self.m() == 1 && self.p() == 1
    }

    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(self.lambda.clone(), power, self.noise.clone())
    }
}

/// Outcome of [`validate`]. Failed assumptions are reported, not raised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `(F, H)` detectable.
    pub detectable: bool,
    /// `(F_s, Q_s)` has no uncontrollable mode on the unit circle.
    pub unit_circle_controllable: bool,
    /// `(F_s, Q_s)` stabilizable.
    pub stabilizable: bool,
    pub w_psd: bool,
    pub sigma1_psd: bool,
    pub joint_psd: bool,
    pub spectral_radius: f64,
    /// `ρ(F) < 1`.
    pub stationary: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// Both standing assumptions hold.
    pub fn assumptions_hold(&self) -> bool {
        self.detectable && self.unit_circle_controllable
    }
}

/// Checks the standing assumptions of the model with PBH rank tests.
pub fn validate(model: &StateSpaceNoise) -> Result<ValidationReport> {
    let rho = model.spectral_radius();
    let outside = |l: Complex64| l.norm() >= 1.0 - EIG_TOL;
    let on_circle = |l: Complex64| (l.norm() - 1.0).abs() <= EIG_TOL;
    let detectable = linalg::pbh_observable(&model.f, &model.h, outside);
    let (fs, qs) = model.decorrelated();
    let unit_circle_controllable = linalg::pbh_controllable(&fs, &qs, on_circle);
    let stabilizable = linalg::pbh_controllable(&fs, &qs, outside);

    let tol = |a: &Mat| -scaled_tol(a);
    let joint = model.joint_covariance();
    let joint_psd = linalg::min_eigenvalue(&joint) >= tol(&joint);
    if !joint_psd {
        return Err(FbcapError::NotPsd {
            name: "joint covariance [[W, L], [Lᵀ, V]]".into(),
            min_eig: linalg::min_eigenvalue(&joint),
        });
    }
    let w_psd = linalg::min_eigenvalue(&model.w) >= tol(&model.w);
    let sigma1_psd = linalg::min_eigenvalue(&model.sigma1) >= tol(&model.sigma1);

    let mut warnings = Vec::new();
    if !detectable {
        warnings.push("detectability failed: (F, H) has an unobservable mode on or outside the unit circle".into());
    }
    if !unit_circle_controllable {
        warnings.push(
            "(F_s, Q_s) has an uncontrollable mode on the unit circle; the Riccati fixed point is not stabilizing"
                .into(),
        );
    }
    if detectable && !stabilizable {
        let dominates = kalman::solve_dare(model).ok().map(|sol| {
            let diff = &model.sigma1 - &sol.sigma;
            linalg::min_eigenvalue(&diff) >= tol(&diff)
        });
        if dominates != Some(true) {
            warnings.push("convergence of the Riccati recursion from Sigma1 is not certified".into());
        }
    }
    Ok(ValidationReport {
        detectable,
        unit_circle_controllable,
        stabilizable,
        w_psd,
        sigma1_psd,
        joint_psd,
        spectral_radius: rho,
        stationary: rho < 1.0 - EIG_TOL,
        warnings,
    })
}

/// Power spectral density `S_z(ω) = T W T* + T L + Lᵀ T* + V` with
/// `T(ω) = H (e^{jω} I − F)⁻¹ G`. Hermitian `p × p`.
pub fn noise_psd(model: &StateSpaceNoise, omega: f64) -> Result<DMatrix<Complex64>> {
    let rho = model.spectral_radius();
    if rho >= 1.0 - EIG_TOL {
        return Err(FbcapError::UnstableModel(rho));
    }
    let c = |a: &Mat| a.map(|x| Complex64::new(x, 0.0));
    let ns = model.ns();
    let z = Complex64::from_polar(1.0, omega);
    let resolvent = (DMatrix::<Complex64>::identity(ns, ns) * z - c(&model.f))
        .try_inverse()
        .ok_or(FbcapError::UnstableModel(rho))?;
    let t = c(&model.h) * resolvent * c(&model.g);
    let ts = t.adjoint();
    let l = c(&model.l);
    let s = &t * c(&model.w) * &ts + &t * &l + l.transpose() * &ts + c(&model.v);
    Ok((&s + s.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Scalar power spectral density; requires `p = 1`.
pub fn noise_psd_scalar(model: &StateSpaceNoise, omega: f64) -> Result<f64> {
    if model.p() != 1 {
        return Err(FbcapError::NotScalar);
    }
    Ok(noise_psd(model, omega)?[(0, 0)].re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn ma1_realization() {
        let n = StateSpaceNoise::ma1(0.5).unwrap();
        assert_eq!(n.f(), &m1(0.0));
        assert_eq!(n.h(), &m1(0.5));
        for x in [n.g(), n.w(), n.v(), n.l(), n.sigma1()] {
            assert_eq!(x, &m1(1.0));
        }
    }

    #[test]
    fn ar1_default_sigma1() {
        assert_relative_eq!(
            StateSpaceNoise::ar1(0.5).unwrap().sigma1()[(0, 0)],
            4.0 / 3.0,
            epsilon = 1e-14
        );
        assert_eq!(StateSpaceNoise::ar1(2.0).unwrap().sigma1(), &m1(1.0));
    }

    #[test]
    fn singular_v_is_infinite_capacity() {
        let r = StateSpaceNoise::new(m1(0.0), m1(1.0), m1(1.0), m1(1.0), m1(0.0), m1(0.0), None);
        assert!(matches!(r, Err(FbcapError::InfiniteCapacity)));
    }

    #[test]
    fn bad_joint_covariance() {
        let r = StateSpaceNoise::new(m1(0.0), m1(1.0), m1(1.0), m1(1.0), m1(1.0), m1(2.0), None);
        assert!(matches!(r, Err(FbcapError::NotPsd { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let r = StateSpaceNoise::new(Mat::zeros(2, 2), m1(1.0), m1(1.0), m1(1.0), m1(1.0), m1(1.0), None);
        assert!(matches!(r, Err(FbcapError::DimensionMismatch(_))));
    }

    #[test]
    fn detectability_scalar() {
        let undetectable = StateSpaceNoise::new(m1(2.0), m1(1.0), m1(0.0), m1(1.0), m1(1.0), m1(0.0), None).unwrap();
        assert!(!validate(&undetectable).unwrap().detectable);
        let ok = StateSpaceNoise::ar1(2.0).unwrap();
        assert!(validate(&ok).unwrap().detectable);
    }

    #[test]
    fn ma_unit_root_not_unit_circle_controllable() {
        let r = validate(&StateSpaceNoise::ma1(1.0).unwrap()).unwrap();
        assert!(!r.unit_circle_controllable);
        assert!(
            validate(&StateSpaceNoise::ma1(0.5).unwrap())
                .unwrap()
                .unit_circle_controllable
        );
    }

    #[test]
    fn psd_examples() {
        assert_relative_eq!(
            noise_psd_scalar(&StateSpaceNoise::ma1(0.5).unwrap(), 0.0).unwrap(),
            2.25,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            noise_psd_scalar(&StateSpaceNoise::ar1(0.5).unwrap(), 0.0).unwrap(),
            4.0,
            epsilon = 1e-13
        );
        let white = StateSpaceNoise::white(m1(3.0)).unwrap();
        assert_relative_eq!(noise_psd_scalar(&white, 1.3).unwrap(), 3.0);
    }

    #[test]
    fn psd_rejects_unstable() {
        let r = noise_psd(&StateSpaceNoise::ar1(1.5).unwrap(), 0.0);
        assert!(matches!(r, Err(FbcapError::UnstableModel(_))));
    }
}
