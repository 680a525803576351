//! Feedback capacity as a determinant-maximization problem.
//!
//! The capacity is
//!
//! ```text
//! max ½ log det Ψ_Y − ½ log det Ψ
//! s.t. Ψ_Y = Λ Π Λᵀ + H Σ̂ Hᵀ + Λ Γ Hᵀ + H Γᵀ Λᵀ + Ψ
//!      [[Π, Γ], [Γᵀ, Σ̂]] ⪰ 0,  tr Π ≤ P
//!      [[F Σ̂ Fᵀ + K_p Ψ K_pᵀ − Σ̂,  F (Γᵀ Λᵀ + Σ̂ Hᵀ) + K_p Ψ], [·ᵀ, Ψ_Y]] ⪰ 0
//! ```
//!
//! with `(K_p, Ψ)` from the stabilizing Riccati solution of the noise model.
//! The problem is posed on the controllable subspace of `(F, K_p)`, which
//! removes directions of `Σ̂` that are forced to zero.

pub mod maxdet;
pub mod oracles;
pub mod policy;
pub mod scop;
pub mod waterfill;

pub use oracles::{ar_iid_rate, kim_ar_capacity, kim_ma_capacity, ma_capacity_fixed_point};
pub use policy::{closed_loop_check, extract_policy, ConvergenceReport, Policy};
pub use scop::{scop_finite_n, ScopSolution};
pub use waterfill::waterfilling_capacity;

use crate::error::{FbcapError, Result};
use crate::kalman::{solve_dare, RiccatiSolution};
use crate::linalg::{self, Mat};
use crate::state_space::ChannelModel;
use maxdet::{probe, MaxDet, Settings};

/// Relative rank cutoff of the pseudo-inverse of `Σ̂`.
pub const PINV_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Duality-gap target relative to `max(1, |objective|)`.
    pub kkt_tol: f64,
    /// Restrict to `Γ = 0` (inputs independent of the past).
    pub gamma_zero: bool,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-7,
            gamma_zero: false,
            max_newton: 200,
            max_outer: 60,
        }
    }
}

impl SolverOptions {
    pub fn iid() -> Self {
        Self {
            gamma_zero: true,
            ..Self::default()
        }
    }

    fn settings(&self) -> Settings {
        Settings {
            tol: self.kkt_tol,
            max_newton: self.max_newton,
            max_outer: self.max_outer,
            ..Settings::default()
        }
    }
}

/// Optimizer of the capacity program together with derived quantities and
/// feasibility certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySolution {
    pub pi: Mat,
    pub sigma_hat: Mat,
    pub gamma: Mat,
    pub psi_y: Mat,
    pub ky: Mat,
    /// `Π − Γ Σ̂† Γᵀ` before clipping.
    pub m: Mat,
    pub capacity_nats: f64,
    /// Duality-gap bound reported by the barrier method.
    pub kkt_residual: f64,
    /// Minimum eigenvalues of the two LMI blocks.
    pub lmi_margins: [f64; 2],
    pub iterations: usize,
    /// `P − tr Π`.
    pub trace_slack: f64,
    /// `|Γ (I − Σ̂ Σ̂†)|_∞`.
    pub orthogonality: f64,
    /// `|F Σ̂ Fᵀ + K_p Ψ K_pᵀ − K_Y Ψ_Y K_Yᵀ − Σ̂|_∞`.
    pub riccati_residual: f64,
    /// Objective change (nats) caused by the Riccati-equality refinement.
    pub refinement_change: f64,
    /// Dimension of the controllable subspace the problem was solved on.
    pub reduced_dim: usize,
    /// The constraints had to be loosened to find an interior point.
    pub relaxed: bool,
    /// The barrier method stopped before reaching `kkt_tol`.
    pub stalled: bool,
    pub riccati: RiccatiSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    LogDet,
    Linear,
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn read_sym(x: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = x[k];
            m[(j, i)] = x[k];
            k += 1;
        }
    }
    m
}

fn write_sym(m: &Mat, out: &mut Vec<f64>) {
    for i in 0..m.nrows() {
        for j in i..m.nrows() {
            out.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
}

/// `[[a, b], [bᵀ, d]]`.
pub(crate) fn block2(a: &Mat, b: &Mat, d: &Mat) -> Mat {
    let (n1, n2) = (a.nrows(), d.nrows());
    let mut out = Mat::zeros(n1 + n2, n1 + n2);
    out.view_mut((0, 0), (n1, n1)).copy_from(a);
    out.view_mut((0, n1), (n1, n2)).copy_from(b);
    out.view_mut((n1, 0), (n2, n1)).copy_from(&b.transpose());
    out.view_mut((n1, n1), (n2, n2)).copy_from(d);
    out
}

/// Variable layout `(Π, Γ_c, S)` with `Σ̂ = T S Tᵀ`, `Γ = Γ_c Tᵀ`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    m: usize,
    r: usize,
    gamma: bool,
}

impl Layout {
    fn nvars(&self) -> usize {
        sym_len(self.m) + if self.gamma { self.m * self.r } else { 0 } + sym_len(self.r)
    }

    fn unpack(&self, x: &[f64]) -> (Mat, Mat, Mat) {
        let np = sym_len(self.m);
        let pi = read_sym(&x[..np], self.m);
        let (gc, off) = if self.gamma {
            let g = Mat::from_fn(self.m, self.r, |i, j| x[np + i * self.r + j]);
            (g, np + self.m * self.r)
        } else {
            (Mat::zeros(self.m, self.r), np)
        };
        let s = read_sym(&x[off..], self.r);
        (pi, gc, s)
    }

    fn pack(&self, pi: &Mat, gc: &Mat, s: &Mat) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.nvars());
        write_sym(pi, &mut x);
        if self.gamma {
            for i in 0..self.m {
                for j in 0..self.r {
                    x.push(gc[(i, j)]);
                }
            }
        }
        write_sym(s, &mut x);
        x
    }
}

/// The capacity program restricted to the controllable subspace of `(F, K_p)`.
struct Reduced {
    lambda: Mat,
    power: f64,
    psi: Mat,
    t: Mat,
    fc: Mat,
    hc: Mat,
    kc: Mat,
}

impl Reduced {
    fn new(channel: &ChannelModel, dare: &RiccatiSolution) -> Self {
        let noise = channel.noise();
        let t = linalg::controllable_basis(noise.f(), &dare.kp);
        Self {
            lambda: channel.lambda().clone(),
            power: channel.power(),
            psi: dare.psi.clone(),
            fc: t.transpose() * noise.f() * &t,
            hc: noise.h() * &t,
            kc: t.transpose() * &dare.kp,
            t,
        }
    }

    fn r(&self) -> usize {
        self.t.ncols()
    }

    fn psi_y(&self, pi: &Mat, gc: &Mat, s: &Mat) -> Mat {
        let lh = &self.lambda * gc * self.hc.transpose();
        &self.lambda * pi * self.lambda.transpose()
            + &self.hc * s * self.hc.transpose()
            + &lh
            + lh.transpose()
            + &self.psi
    }

    /// `F_c (Γ_cᵀ Λᵀ + S H_cᵀ) + K_c Ψ`.
    fn cross(&self, gc: &Mat, s: &Mat) -> Mat {
        &self.fc * (gc.transpose() * self.lambda.transpose() + s * self.hc.transpose()) + &self.kc * &self.psi
    }

    /// `F_c S F_cᵀ + K_c Ψ K_cᵀ`.
    fn propagate(&self, s: &Mat) -> Mat {
        &self.fc * s * self.fc.transpose() + &self.kc * &self.psi * self.kc.transpose()
    }

    /// Riccati map `S ↦ F_c S F_cᵀ + K_c Ψ K_cᵀ − K_Y Ψ_Y K_Yᵀ` at fixed `(Π, Γ_c)`.
    fn riccati_map(&self, pi: &Mat, gc: &Mat, s: &Mat) -> Option<Mat> {
        let py = self.psi_y(pi, gc, s);
        let inv = linalg::symmetrize(&py).try_inverse()?;
        let b = self.cross(gc, s);
        Some(linalg::symmetrize(&(self.propagate(s) - &b * inv * b.transpose())))
    }

    /// `[Ψ_Y, LMI1, P − tr Π, LMI2]`.
    fn matrices(&self, pi: &Mat, gc: &Mat, s: &Mat) -> Vec<Mat> {
        let py = self.psi_y(pi, gc, s);
        let lmi1 = block2(pi, gc, s);
        let slack = Mat::from_element(1, 1, self.power - pi.trace());
        let lmi2 = block2(&(self.propagate(s) - s), &self.cross(gc, s), &py);
        vec![py, lmi1, slack, lmi2]
    }

    fn problem(&self, layout: Layout, objective: Objective) -> MaxDet {
        let maps = probe(layout.nvars(), |x| {
            let (pi, gc, s) = layout.unpack(x);
            self.matrices(&pi, &gc, &s)
        });
        let mut maps = maps.into_iter();
        let psi_y = maps.next().expect("four blocks");
        let constraints: Vec<_> = maps.collect();
        match objective {
            Objective::LogDet => MaxDet {
                nvars: layout.nvars(),
                linear: vec![0.0; layout.nvars()],
                logdet: vec![(1.0, psi_y)],
                constraints,
            },
            Objective::Linear => {
                let mut linear = vec![0.0; layout.nvars()];
                for (k, a) in &psi_y.terms {
                    linear[*k] = a[(0, 0)];
                }
                MaxDet {
                    nvars: layout.nvars(),
                    linear,
                    logdet: Vec::new(),
                    constraints,
                }
            }
        }
    }

    /// Fixed point of the Riccati map with `Γ = 0` and the given `Π`, iterated from 0.
    fn iid_fixed_point(&self, pi: &Mat) -> Mat {
        let r = self.r();
        let gc = Mat::zeros(pi.nrows(), r);
        let mut s = Mat::zeros(r, r);
        for _ in 0..10_000 {
            let Some(next) = self.riccati_map(pi, &gc, &s) else {
                break;
            };
            let delta = linalg::sup_norm(&(&next - &s));
            s = linalg::clip_psd(&next);
            if delta <= 1e-12 * linalg::sup_norm(&s).max(1.0) {
                break;
            }
        }
        s
    }

    /// Iterates the Riccati map at fixed `(Π, Γ_c)` until equality holds.
    /// The map is monotone, so every iterate remains feasible.
    fn refine(&self, pi: &Mat, gc: &Mat, s: &Mat) -> Mat {
        let mut s = s.clone();
        for _ in 0..100_000 {
            let Some(next) = self.riccati_map(pi, gc, &s) else {
                break;
            };
            let delta = linalg::sup_norm(&(&next - &s));
            s = next;
            if delta <= 1e-14 * linalg::sup_norm(&s).max(1.0) {
                break;
            }
        }
        s
    }
}

fn start_point(red: &Reduced, layout: Layout, problem: &MaxDet) -> Option<Vec<f64>> {
    let m = layout.m;
    let pi = Mat::identity(m, m) * (red.power / (2.0 * m as f64));
    let gc = Mat::zeros(m, layout.r);
    let sbar = red.iid_fixed_point(&pi);
    let candidates: Vec<Vec<f64>> = [0.5, 0.25, 0.1, 0.01]
        .iter()
        .map(|theta| layout.pack(&pi, &gc, &(&sbar * *theta)))
        .collect();
    candidates
        .iter()
        .find(|x| problem.strictly_feasible(x))
        .cloned()
        .or_else(|| problem.find_interior(&candidates[0]))
}

fn solve_reduced(channel: &ChannelModel, options: &SolverOptions, objective: Objective) -> Result<CapacitySolution> {
    let noise = channel.noise();
    let dare = solve_dare(noise)?;
    let red = Reduced::new(channel, &dare);
    let layout = Layout {
        m: channel.m(),
        r: red.r(),
        gamma: !options.gamma_zero,
    };
    let problem = red.problem(layout, objective);
    let (problem, x0, relaxed) = match start_point(&red, layout, &problem) {
        Some(x0) => (problem, x0, false),
        None => {
            let scale = linalg::sup_norm(&dare.psi).max(red.power).max(1.0);
            let loose = problem.relaxed(1e-9 * scale);
            let x0 = start_point(&red, layout, &loose).ok_or(FbcapError::Infeasible)?;
            (loose, x0, true)
        }
    };
    let result = problem.solve(&x0, &options.settings())?;
    let (pi, gc, s) = layout.unpack(&result.x);

    let before = red.psi_y(&pi, &gc, &s);
    let gc = if layout.r > 0 {
        &gc * &s * linalg::pinv_psd(&s, PINV_TOL)
    } else {
        gc
    };
    let s = red.refine(&pi, &gc, &s);
    let after = red.psi_y(&pi, &gc, &s);
    let logdet = |a: &Mat| linalg::log_det_spd(a).ok_or(FbcapError::SingularPsiY);
    let refinement_change = 0.5 * (logdet(&after)? - logdet(&before)?);

    let sigma_hat = linalg::symmetrize(&(&red.t * &s * red.t.transpose()));
    let gamma = &gc * red.t.transpose();
    finish(
        channel,
        dare,
        pi,
        sigma_hat,
        gamma,
        FinishInfo {
            kkt_residual: result.gap,
            iterations: result.newton_iterations,
            refinement_change,
            reduced_dim: layout.r,
            relaxed,
            stalled: result.stalled,
        },
    )
}

struct FinishInfo {
    kkt_residual: f64,
    iterations: usize,
    refinement_change: f64,
    reduced_dim: usize,
    relaxed: bool,
    stalled: bool,
}

/// Derived quantities and certificates in the original coordinates.
fn finish(
    channel: &ChannelModel,
    dare: RiccatiSolution,
    pi: Mat,
    sigma_hat: Mat,
    gamma: Mat,
    info: FinishInfo,
) -> Result<CapacitySolution> {
    let noise = channel.noise();
    let (f, h, lambda) = (noise.f(), noise.h(), channel.lambda());
    let (kp, psi) = (&dare.kp, &dare.psi);
    let lh = lambda * &gamma * h.transpose();
    let psi_y = linalg::symmetrize(
        &(lambda * &pi * lambda.transpose() + h * &sigma_hat * h.transpose() + &lh + lh.transpose() + psi),
    );
    let psi_y_inv = psi_y.clone().try_inverse().ok_or(FbcapError::SingularPsiY)?;
    let cross = f * (gamma.transpose() * lambda.transpose() + &sigma_hat * h.transpose()) + kp * psi;
    let ky = &cross * &psi_y_inv;
    let top = f * &sigma_hat * f.transpose() + kp * psi * kp.transpose();
    let riccati_residual = linalg::sup_norm(&(&top - &ky * &psi_y * ky.transpose() - &sigma_hat));
    let lmi1 = block2(&pi, &gamma, &sigma_hat);
    let lmi2 = block2(&(&top - &sigma_hat), &cross, &psi_y);
    let pinv = linalg::pinv_psd(&sigma_hat, PINV_TOL);
    let ns = sigma_hat.nrows();
    let orthogonality = linalg::sup_norm(&(&gamma * (Mat::identity(ns, ns) - &sigma_hat * &pinv)));
    let m = linalg::symmetrize(&(&pi - &gamma * &pinv * gamma.transpose()));
    let capacity_nats = 0.5
        * (linalg::log_det_spd(&psi_y).ok_or(FbcapError::SingularPsiY)?
            - linalg::log_det_spd(psi).ok_or(FbcapError::SingularInnovation { cond: f64::INFINITY })?);
    Ok(CapacitySolution {
        trace_slack: channel.power() - pi.trace(),
        lmi_margins: [linalg::min_eigenvalue(&lmi1), linalg::min_eigenvalue(&lmi2)],
        pi,
        sigma_hat,
        gamma,
        psi_y,
        ky,
        m,
        capacity_nats,
        kkt_residual: info.kkt_residual,
        iterations: info.iterations,
        orthogonality,
        riccati_residual,
        refinement_change: info.refinement_change,
        reduced_dim: info.reduced_dim,
        relaxed: info.relaxed,
        stalled: info.stalled,
        riccati: dare,
    })
}

/// Feedback capacity of a MIMO channel by maximizing `log det Ψ_Y`.
pub fn solve_capacity(channel: &ChannelModel, options: &SolverOptions) -> Result<CapacitySolution> {
    solve_reduced(channel, options, Objective::LogDet)
}

/// Feedback capacity of a scalar channel. The scalar objective is maximized
/// as the linear function `ψ_Y`; a gain `Λ = λ` is folded into the power budget.
pub fn solve_capacity_scalar(channel: &ChannelModel, options: &SolverOptions) -> Result<CapacitySolution> {
    if !channel.is_scalar() {
        return Err(FbcapError::NotScalar);
    }
    let lambda = channel.lambda()[(0, 0)];
    if lambda == 0.0 {
        return Err(FbcapError::OutOfRange("channel gain is zero".into()));
    }
    let unit = ChannelModel::new(
        Mat::identity(1, 1),
        lambda * lambda * channel.power(),
        channel.noise().clone(),
    )?;
    let mut sol = solve_reduced(&unit, options, Objective::Linear)?;
    sol.pi /= lambda * lambda;
    sol.m /= lambda * lambda;
    sol.gamma /= lambda;
    sol.trace_slack = channel.power() - sol.pi.trace();
    Ok(sol)
}
