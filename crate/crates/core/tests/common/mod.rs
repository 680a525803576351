#![allow(dead_code)]

use fbcap_core::linalg;
use fbcap_core::state_space::{ChannelModel, StateSpaceNoise};
use fbcap_core::Mat;
use proptest::prelude::*;

pub fn m1(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

pub fn ma_channel(alpha: f64, power: f64) -> ChannelModel {
    ChannelModel::identity(power, StateSpaceNoise::ma1(alpha).unwrap()).unwrap()
}

pub fn ar_channel(beta: f64, power: f64) -> ChannelModel {
    ChannelModel::identity(power, StateSpaceNoise::ar1(beta).unwrap()).unwrap()
}

/// Noise model from raw entries: `F` rescaled to spectral radius `radius`,
/// joint covariance `B Bᵀ + 0.1 I`.
pub fn build_model(ns: usize, q: usize, p: usize, radius: f64, entries: &[f64]) -> StateSpaceNoise {
    let mut it = entries.iter().copied().cycle();
    let mut take = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| it.next().unwrap());
    let f0 = take(ns, ns);
    let rho = linalg::spectral_radius(&f0);
    let f = if rho > 1e-6 { f0 * (radius / rho) } else { f0 };
    let g = take(ns, q);
    let h = take(p, ns);
    let b = take(q + p, q + p);
    let joint = &b * b.transpose() + Mat::identity(q + p, q + p) * 0.1;
    let w = joint.view((0, 0), (q, q)).into_owned();
    let l = joint.view((0, q), (q, p)).into_owned();
    let v = joint.view((q, q), (p, p)).into_owned();
    StateSpaceNoise::new(f, g, h, w, v, l, None).unwrap()
}

prop_compose! {
    pub fn stable_model(max_ns: usize, max_p: usize)
        (ns in 1..=max_ns, q in 1..=2usize, p in 1..=max_p, radius in 0.0..0.9f64,
         entries in prop::collection::vec(-1.0..1.0f64, 64))
        -> StateSpaceNoise
    {
        build_model(ns, q, p, radius, &entries)
    }
}
