//! Finite-horizon sequential program: the `n`-letter upper bound with
//! per-time variables `(Π_t, Γ_t, Σ̂_{t+1})`, `Σ̂_1 = 0`, and the time-varying
//! filter constants `(K_{p,t}, Ψ_t)` of the Riccati recursion from `Sigma1`.

use crate::capacity::maxdet::{probe, Settings};
use crate::capacity::{block2, maxdet::MaxDet, SolverOptions};
use crate::error::{FbcapError, Result};
use crate::kalman::riccati_step;
use crate::linalg::{self, Mat};
use crate::state_space::ChannelModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ScopSolution {
    /// `(1/2n) Σ_t (log det Ψ_{Y,t} − log det Ψ_t)` in nats per use.
    pub value_nats: f64,
    pub pi: Vec<Mat>,
    pub psi_y: Vec<Mat>,
    pub gap: f64,
    pub iterations: usize,
    pub stalled: bool,
}

struct Slots {
    m: usize,
    r: usize,
    n: usize,
}

impl Slots {
    fn per_time(&self) -> usize {
        let s = |k: usize| k * (k + 1) / 2;
        s(self.m) + self.m * self.r + s(self.r)
    }

    fn nvars(&self) -> usize {
        self.n * self.per_time()
    }

    /// `(Π_t, Γ_t, S_{t+1})` for `t = 0..n` (zero-based).
    fn unpack(&self, x: &[f64], t: usize) -> (Mat, Mat, Mat) {
        let base = &x[t * self.per_time()..(t + 1) * self.per_time()];
        let mut k = 0;
        let mut sym = |n: usize| {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    a[(i, j)] = base[k];
                    a[(j, i)] = base[k];
                    k += 1;
                }
            }
            a
        };
        let pi = sym(self.m);
        let s = sym(self.r);
        let off = self.per_time() - self.m * self.r;
        let g = Mat::from_fn(self.m, self.r, |i, j| base[off + i * self.r + j]);
        (pi, g, s)
    }

    fn pack(&self, pis: &[Mat], gammas: &[Mat], ss: &[Mat]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.nvars());
        for t in 0..self.n {
            for a in [&pis[t], &ss[t]] {
                for i in 0..a.nrows() {
                    for j in i..a.nrows() {
                        x.push(a[(i, j)]);
                    }
                }
            }
            for i in 0..self.m {
                for j in 0..self.r {
                    x.push(gammas[t][(i, j)]);
                }
            }
        }
        x
    }
}

/// Solves the `n`-step program and returns its per-use value.
pub fn scop_finite_n(channel: &ChannelModel, n: usize, options: &SolverOptions) -> Result<ScopSolution> {
    if n == 0 {
        return Err(FbcapError::OutOfRange("horizon must be at least 1".into()));
    }
    let noise = channel.noise();
    let (f, h, lambda) = (noise.f(), noise.h(), channel.lambda());
    let (m, p) = (channel.m(), channel.p());
    let power = channel.power();

    let mut kps = Vec::with_capacity(n);
    let mut psis = Vec::with_capacity(n);
    let mut sigma = noise.sigma1().clone();
    for _ in 0..n {
        let step = riccati_step(noise, &sigma)?;
        kps.push(step.kp);
        psis.push(step.psi);
        sigma = step.sigma_next;
    }
    let mut stacked = Mat::zeros(noise.ns(), n * p);
    for (t, kp) in kps.iter().enumerate() {
        stacked.view_mut((0, t * p), (noise.ns(), p)).copy_from(kp);
    }
    let basis = linalg::controllable_basis(f, &stacked);
    let r = basis.ncols();
    let fc = basis.transpose() * f * &basis;
    let hc = h * &basis;
    let kcs: Vec<Mat> = kps.iter().map(|k| basis.transpose() * k).collect();
    let slots = Slots { m, r, n };

    let psi_y = |t: usize, pi: &Mat, g: &Mat, s: &Mat| {
        let lh = lambda * g * hc.transpose();
        lambda * pi * lambda.transpose() + &hc * s * hc.transpose() + &lh + lh.transpose() + &psis[t]
    };
    let cross = |t: usize, g: &Mat, s: &Mat| {
        &fc * (g.transpose() * lambda.transpose() + s * hc.transpose()) + &kcs[t] * &psis[t]
    };
    let propagate = |t: usize, s: &Mat| &fc * s * fc.transpose() + &kcs[t] * &psis[t] * kcs[t].transpose();

    // Γ_1 multiplies Σ̂_1 = 0 and is dropped by fixing it to zero.
    let fix_gamma = |x: &[f64], t: usize| {
        let (pi, g, s_next) = slots.unpack(x, t);
        (pi, if t == 0 { Mat::zeros(m, r) } else { g }, s_next)
    };
    let build = |x: &[f64]| {
        let mut out = Vec::with_capacity(3 * n + 2);
        let mut s = Mat::zeros(r, r);
        let mut trace = 0.0;
        for t in 0..n {
            let (pi, g, s_next) = fix_gamma(x, t);
            out.push(psi_y(t, &pi, &g, &s));
            trace += pi.trace();
            out.push(if t == 0 { pi.clone() } else { block2(&pi, &g, &s) });
            out.push(block2(
                &(propagate(t, &s) - &s_next),
                &cross(t, &g, &s),
                &psi_y(t, &pi, &g, &s),
            ));
            s = s_next;
        }
        out.push(s);
        out.push(Mat::from_element(1, 1, n as f64 * power - trace));
        out
    };
    let maps = probe(slots.nvars(), build);
    let mut logdet = Vec::new();
    let mut constraints = Vec::new();
    for (k, a) in maps.into_iter().enumerate() {
        if k < 3 * n && k % 3 == 0 {
            logdet.push((1.0, a));
        } else {
            constraints.push(a);
        }
    }
    let problem = MaxDet {
        nvars: slots.nvars(),
        linear: vec![0.0; slots.nvars()],
        logdet,
        constraints,
    };

    let pi0 = Mat::identity(m, m) * (power / (2.0 * m as f64));
    let zero_g = Mat::zeros(m, r);
    let mut ss = Vec::with_capacity(n);
    let mut s = Mat::zeros(r, r);
    for t in 0..n {
        let py = psi_y(t, &pi0, &zero_g, &s);
        let b = cross(t, &zero_g, &s);
        let inv = py.try_inverse().ok_or(FbcapError::SingularPsiY)?;
        let next = linalg::clip_psd(&(propagate(t, &s) - &b * inv * b.transpose())) * 0.5;
        ss.push(next.clone());
        s = next;
    }
    let x0 = slots.pack(&vec![pi0.clone(); n], &vec![zero_g.clone(); n], &ss);
    let x0 = problem.find_interior(&x0).ok_or(FbcapError::Infeasible)?;
    let settings = Settings {
        tol: options.kkt_tol,
        max_newton: options.max_newton,
        max_outer: options.max_outer,
        ..Settings::default()
    };
    let result = problem.solve(&x0, &settings)?;

    let mut pis = Vec::with_capacity(n);
    let mut pys = Vec::with_capacity(n);
    let mut value = 0.0;
    let mut s = Mat::zeros(r, r);
    for (t, psi) in psis.iter().enumerate() {
        let (pi, g, s_next) = fix_gamma(&result.x, t);
        let py = linalg::symmetrize(&psi_y(t, &pi, &g, &s));
        value += linalg::log_det_spd(&py).ok_or(FbcapError::SingularPsiY)?
            - linalg::log_det_spd(psi).ok_or(FbcapError::SingularInnovation { cond: f64::INFINITY })?;
        pis.push(pi);
        pys.push(py);
        s = s_next;
    }
    Ok(ScopSolution {
        value_nats: value / (2.0 * n as f64),
        pi: pis,
        psi_y: pys,
        gap: result.gap,
        iterations: result.newton_iterations,
        stalled: result.stalled,
    })
}
