//! Barrier path-following for determinant maximization under LMI constraints.
//!
//! Solves
//!
//! ```text
//! maximize   cᵀx + Σ_j w_j log det O_j(x)
//! subject to G_i(x) ⪰ 0
//! ```
//!
//! where every `O_j` and `G_i` is an affine symmetric matrix function of `x`.

use crate::error::{FbcapError, Result};
use crate::linalg::{self, Mat, Vector};

/// Affine symmetric matrix function `A(x) = A_0 + Σ_k x_k A_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSym {
    pub constant: Mat,
    pub terms: Vec<(usize, Mat)>,
}

impl AffineSym {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut a = self.constant.clone();
        for (k, ak) in &self.terms {
            if x[*k] != 0.0 {
                a += ak * x[*k];
            }
        }
        a
    }

    fn shifted(&self, var: usize, scale: f64) -> Self {
        let n = self.dim();
        let mut terms = self.terms.clone();
        terms.push((var, Mat::identity(n, n) * scale));
        Self {
            constant: self.constant.clone(),
            terms,
        }
    }
}

/// Recovers the affine maps of `build` by evaluating it at the origin and at
/// each unit vector. `build` must be affine in `x`.
pub fn probe(nvars: usize, build: impl Fn(&[f64]) -> Vec<Mat>) -> Vec<AffineSym> {
    let mut x = vec![0.0; nvars];
    let base: Vec<Mat> = build(&x).into_iter().map(|m| linalg::symmetrize(&m)).collect();
    let mut out: Vec<AffineSym> = base
        .iter()
        .map(|c| AffineSym {
            constant: c.clone(),
            terms: Vec::new(),
        })
        .collect();
    for k in 0..nvars {
        x[k] = 1.0;
        for (j, m) in build(&x).into_iter().enumerate() {
            let d = linalg::symmetrize(&m) - &base[j];
            if linalg::sup_norm(&d) > 0.0 {
                out[j].terms.push((k, d));
            }
        }
        x[k] = 0.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxDet {
    pub nvars: usize,
    pub linear: Vec<f64>,
    pub logdet: Vec<(f64, AffineSym)>,
    pub constraints: Vec<AffineSym>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// Target duality gap relative to `max(1, |objective|)`.
    pub tol: f64,
    pub mu: f64,
    pub t0: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    /// Gap below which a stalled run is still returned (flagged).
    pub stall_gap: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            mu: 10.0,
            t0: 1.0,
            max_newton: 200,
            max_outer: 60,
            stall_gap: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxDetResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Duality gap bound `ν / t` at the returned point.
    pub gap: f64,
    pub newton_iterations: usize,
    pub stalled: bool,
}

const NEWTON_TOL: f64 = 1e-10;

type EarlyStop<'a> = &'a dyn Fn(&[f64]) -> bool;

fn cholesky_l(a: &Mat) -> Option<Mat> {
    let chol = linalg::symmetrize(a).cholesky()?;
    let l = chol.l();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

fn log_det_from_l(l: &Mat) -> f64 {
    l.diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

enum Exit {
    Converged,
    Early,
}

impl MaxDet {
    /// Barrier parameter `ν`: the total dimension of the constraints.
    pub fn nu(&self) -> f64 {
        self.constraints.iter().map(AffineSym::dim).sum::<usize>() as f64
    }

    /// Objective value, `None` outside the domain of the log-det terms.
    pub fn objective(&self, x: &[f64]) -> Option<f64> {
        let mut v: f64 = self.linear.iter().zip(x).map(|(c, xi)| c * xi).sum();
        for (w, o) in &self.logdet {
            v += w * linalg::log_det_spd(&o.eval(x))?;
        }
        Some(v)
    }

    /// Every `G_i(x) ≻ 0` and `O_j(x) ≻ 0`.
    pub fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.constraints
            .iter()
            .chain(self.logdet.iter().map(|(_, o)| o))
            .all(|g| g.dim() == 0 || cholesky_l(&g.eval(x)).is_some())
    }

    /// Smallest eigenvalue over all constraints and log-det arguments.
    pub fn min_margin(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .chain(self.logdet.iter().map(|(_, o)| o))
            .map(|g| linalg::min_eigenvalue(&g.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    fn barrier(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = -t * self.linear.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>();
        for (w, o) in &self.logdet {
            v -= t * w * log_det_from_l(&cholesky_l(&o.eval(x))?);
        }
        for g in &self.constraints {
            if g.dim() > 0 {
                v -= log_det_from_l(&cholesky_l(&g.eval(x))?);
            }
        }
        Some(v)
    }

    fn accumulate(a: &AffineSym, x: &[f64], coef: f64, grad: &mut Vector, hess: &mut Mat) -> Option<()> {
        if a.dim() == 0 || a.terms.is_empty() {
            return Some(());
        }
        let l = cholesky_l(&a.eval(x))?;
        let scaled: Vec<(usize, Mat)> = a
            .terms
            .iter()
            .map(|(k, ak)| {
                let half = l.solve_lower_triangular(ak)?;
                let b = l.solve_lower_triangular(&half.transpose())?;
                Some((*k, b))
            })
            .collect::<Option<_>>()?;
        for (i, (k, bk)) in scaled.iter().enumerate() {
            grad[*k] -= coef * bk.trace();
            for (kl, bl) in &scaled[i..] {
                let h = coef * bk.dot(bl);
                hess[(*k, *kl)] += h;
                if kl != k {
                    hess[(*kl, *k)] += h;
                }
            }
        }
        Some(())
    }

    fn grad_hess(&self, x: &[f64], t: f64) -> Option<(Vector, Mat)> {
        let n = self.nvars;
        let mut grad = Vector::from_iterator(n, self.linear.iter().map(|c| -t * c));
        let mut hess = Mat::zeros(n, n);
        for (w, o) in &self.logdet {
            Self::accumulate(o, x, t * w, &mut grad, &mut hess)?;
        }
        for g in &self.constraints {
            Self::accumulate(g, x, 1.0, &mut grad, &mut hess)?;
        }
        Some((grad, hess))
    }

    fn newton_direction(grad: &Vector, hess: &Mat) -> Option<Vector> {
        let scale = hess.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs())).max(1e-300);
        let mut reg = 0.0;
        for _ in 0..12 {
            let h = hess + Mat::identity(hess.nrows(), hess.nrows()) * reg;
            if let Some(ch) = h.cholesky() {
                let dx = ch.solve(&(-grad));
                if dx.iter().all(|v| v.is_finite()) {
                    return Some(dx);
                }
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    /// Minimizes the barrier at fixed `t`.
    fn center(
        &self,
        x: &mut Vec<f64>,
        t: f64,
        settings: &Settings,
        newton: &mut usize,
        early: Option<EarlyStop<'_>>,
    ) -> std::result::Result<Exit, String> {
        for _ in 0..settings.max_newton {
            let (grad, hess) = self
                .grad_hess(x, t)
                .ok_or_else(|| "iterate left the interior".to_string())?;
            let dx = Self::newton_direction(&grad, &hess).ok_or_else(|| "singular Newton system".to_string())?;
            let lambda2 = -grad.dot(&dx);
            if lambda2.is_nan() || lambda2 < 0.0 {
                return Err("Newton decrement is not a descent measure".into());
            }
            if lambda2 / 2.0 <= NEWTON_TOL {
                return Ok(Exit::Converged);
            }
            let lambda = lambda2.sqrt();
            let mut step = if lambda > 0.25 { 1.0 / (1.0 + lambda) } else { 1.0 };
            let phi = self.barrier(x, t).unwrap_or(f64::INFINITY);
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
                if let Some(v) = self.barrier(&trial, t) {
                    if v <= phi + 1e-12 * phi.abs().max(1.0) {
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            *newton += 1;
            if !accepted {
                return Err("line search failed".into());
            }
            if let Some(stop) = early {
                if stop(x) {
                    return Ok(Exit::Early);
                }
            }
        }
        Err("centering did not converge".into())
    }

    fn run(&self, x0: &[f64], settings: &Settings, early: Option<EarlyStop<'_>>) -> Result<(MaxDetResult, bool)> {
        if !self.strictly_feasible(x0) {
            return Err(FbcapError::SolverStall("initial point is not strictly feasible".into()));
        }
        let nu = self.nu().max(1.0);
        let mut x = x0.to_vec();
        let mut t = settings.t0;
        let mut newton = 0;
        let mut best_gap = f64::INFINITY;
        let mut best_x = x.clone();
        for _ in 0..settings.max_outer {
            match self.center(&mut x, t, settings, &mut newton, early) {
                Ok(Exit::Early) => {
                    let objective = self.objective(&x).unwrap_or(f64::NAN);
                    return Ok((
                        MaxDetResult {
                            x,
                            objective,
                            gap: nu / t,
                            newton_iterations: newton,
                            stalled: false,
                        },
                        true,
                    ));
                }
                Ok(Exit::Converged) => {
                    best_gap = nu / t;
                    best_x = x.clone();
                }
                Err(reason) => {
                    let objective = self.objective(&best_x).unwrap_or(f64::NAN);
                    let scale = objective.abs().max(1.0);
                    if best_gap <= settings.stall_gap * scale {
                        return Ok((
                            MaxDetResult {
                                x: best_x,
                                objective,
                                gap: best_gap,
                                newton_iterations: newton,
                                stalled: true,
                            },
                            false,
                        ));
                    }
                    return Err(FbcapError::SolverStall(format!(
                        "{reason} (gap {best_gap:e} after {newton} Newton steps)"
                    )));
                }
            }
            let objective = self.objective(&x).unwrap_or(f64::NAN);
            if nu / t <= settings.tol * objective.abs().max(1.0) {
                return Ok((
                    MaxDetResult {
                        x,
                        objective,
                        gap: nu / t,
                        newton_iterations: newton,
                        stalled: false,
                    },
                    false,
                ));
            }
            t *= settings.mu;
        }
        let objective = self.objective(&best_x).unwrap_or(f64::NAN);
        Ok((
            MaxDetResult {
                x: best_x,
                objective,
                gap: best_gap,
                newton_iterations: newton,
                stalled: true,
            },
            false,
        ))
    }

    /// Path-following from a strictly feasible `x0`.
    pub fn solve(&self, x0: &[f64], settings: &Settings) -> Result<MaxDetResult> {
        self.run(x0, settings, None).map(|(r, _)| r)
    }

    /// Searches for a strictly feasible point starting from `x0` by minimizing
    /// a uniform shift `s` with `G_i(x) + s I ⪰ 0`.
    pub fn find_interior(&self, x0: &[f64]) -> Option<Vec<f64>> {
        if self.strictly_feasible(x0) {
            return Some(x0.to_vec());
        }
        let n = self.nvars;
        let margin = self.min_margin(x0);
        if !margin.is_finite() {
            return None;
        }
        let s0 = (-margin).max(0.0) + 1.0;
        let bound = 2.0 * s0;
        let mut constraints: Vec<AffineSym> = self
            .constraints
            .iter()
            .chain(self.logdet.iter().map(|(_, o)| o))
            .filter(|g| g.dim() > 0)
            .map(|g| g.shifted(n, 1.0))
            .collect();
        constraints.push(AffineSym {
            constant: Mat::from_element(1, 1, bound),
            terms: vec![(n, Mat::from_element(1, 1, 1.0))],
        });
        let mut linear = vec![0.0; n + 1];
        linear[n] = -1.0;
        let phase1 = MaxDet {
            nvars: n + 1,
            linear,
            logdet: Vec::new(),
            constraints,
        };
        let mut start = x0.to_vec();
        start.push(s0);
        let settings = Settings {
            tol: 1e-10,
            ..Settings::default()
        };
        let stop = |x: &[f64]| x[n] < -1e-9 * bound;
        let (res, early) = phase1.run(&start, &settings, Some(&stop)).ok()?;
        let found = &res.x[..n];
        if (early || res.x[n] < 0.0) && self.strictly_feasible(found) {
            Some(found.to_vec())
        } else {
            None
        }
    }

    /// Copy with every constraint loosened by `eps · I`.
    pub fn relaxed(&self, eps: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.constraints {
            let n = g.dim();
            g.constant += Mat::identity(n, n) * eps;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_logdet_with_bound() {
        // maximize log x subject to 1 - x >= 0
        let p = MaxDet {
            nvars: 1,
            linear: vec![0.0],
            logdet: vec![(
                1.0,
                AffineSym {
                    constant: Mat::zeros(1, 1),
                    terms: vec![(0, Mat::from_element(1, 1, 1.0))],
                },
            )],
            constraints: vec![AffineSym {
                constant: Mat::from_element(1, 1, 1.0),
                terms: vec![(0, Mat::from_element(1, 1, -1.0))],
            }],
        };
        let r = p.solve(&[0.5], &Settings::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.objective.abs() < 1e-6);
    }

    #[test]
    fn probe_recovers_affine_map() {
        let maps = probe(2, |x| {
            vec![Mat::from_row_slice(2, 2, &[1.0 + x[0], x[1], x[1], 2.0 * x[0]])]
        });
        let at = maps[0].eval(&[0.3, -0.7]);
        assert_eq!(at, Mat::from_row_slice(2, 2, &[1.3, -0.7, -0.7, 0.6]));
    }

    #[test]
    fn phase_one_finds_interior() {
        // 2 - x >= 0, x - 1 >= 0 from x = 5
        let c = |a: f64, b: f64| AffineSym {
            constant: Mat::from_element(1, 1, a),
            terms: vec![(0, Mat::from_element(1, 1, b))],
        };
        let p = MaxDet {
            nvars: 1,
            linear: vec![1.0],
            logdet: vec![],
            constraints: vec![c(2.0, -1.0), c(-1.0, 1.0)],
        };
        let x = p.find_interior(&[5.0]).unwrap();
        assert!(x[0] > 1.0 && x[0] < 2.0);
        let r = p.solve(&x, &Settings::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn phase_one_reports_empty_interior() {
        let c = |a: f64, b: f64| AffineSym {
            constant: Mat::from_element(1, 1, a),
            terms: vec![(0, Mat::from_element(1, 1, b))],
        };
        let p = MaxDet {
            nvars: 1,
            linear: vec![1.0],
            logdet: vec![],
            constraints: vec![c(1.0, -1.0), c(-1.0, 1.0)],
        };
        assert!(p.find_interior(&[5.0]).is_none());
        let relaxed = p.relaxed(1e-6);
        assert!(relaxed.find_interior(&[5.0]).is_some());
    }
}
