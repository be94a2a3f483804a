//! Reference computations shared by the integration tests. They follow the
//! signal model term by term with no reuse of the library's fast paths.
#![allow(dead_code)]

use std::f64::consts::PI;

use pce_core::model::{Dims, PathParams, PilotTensor, ScenarioConfig};
use pce_core::tensor::Tensor3;
use pce_core::Complex64;
use rand::Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn cis(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, x)
}

/// `b·e^{jω₁n}·e^{jω₂t}·a_u(φ)·a(θ)ᵀx_nt`, one loop per index.
pub fn naive_response(p: &PathParams, pilot: &Tensor3, nr: usize) -> Tensor3 {
    let [nc, ns, nt] = pilot.shape();
    let mut out = Tensor3::zeros([nc, ns, nr]);
    for n in 0..nc {
        for t in 0..ns {
            for u in 0..nr {
                let mut beam = c(0.0, 0.0);
                for v in 0..nt {
                    beam += cis(-PI * v as f64 * p.theta.sin()) * pilot.get(n, t, v);
                }
                let rx = cis(-PI * u as f64 * p.phi.sin());
                let v = p.b * cis(p.omega1 * n as f64) * cis(p.omega2 * t as f64) * rx * beam;
                out.set(n, t, u, v);
            }
        }
    }
    out
}

/// Five nested sums over users, paths, and the three tensor axes.
pub fn naive_mean(channels: &[Vec<PathParams>], pilots: &PilotTensor, dims: &Dims) -> Tensor3 {
    let mut out = Tensor3::zeros(dims.received_shape());
    for (k, paths) in channels.iter().enumerate() {
        for p in paths {
            out.add_assign(&naive_response(p, pilots.user(k), dims.nr));
        }
    }
    out
}

/// `‖r − b·α‖² / N0` with the gain fitted by a real 2×2 normal-equation solve.
pub fn concentrated_oracle(
    r: &Tensor3,
    geometry: &PathParams,
    pilot: &Tensor3,
    nr: usize,
    n0: f64,
) -> (f64, Complex64) {
    let unit = PathParams { b: c(1.0, 0.0), ..*geometry };
    let alpha = naive_response(&unit, pilot, nr);
    let b = normal_equation_gain(&alpha, r);
    let mut acc = 0.0;
    for (a, y) in alpha.as_slice().iter().zip(r.as_slice()) {
        acc += (y - b * a).norm_sqr();
    }
    (acc / n0, b)
}

/// Minimizes `‖r − (β₁ + jβ₂)·α‖²` over real `β₁, β₂` as a real linear
/// least-squares problem with columns `α` and `jα`.
pub fn normal_equation_gain(alpha: &Tensor3, r: &Tensor3) -> Complex64 {
    let (mut g11, mut g12, mut g22, mut h1, mut h2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, y) in alpha.as_slice().iter().zip(r.as_slice()) {
        // Real 2-vectors: col1 = (a.re, a.im), col2 = (−a.im, a.re).
        let (c1, c2) = ([a.re, a.im], [-a.im, a.re]);
        g11 += c1[0] * c1[0] + c1[1] * c1[1];
        g12 += c1[0] * c2[0] + c1[1] * c2[1];
        g22 += c2[0] * c2[0] + c2[1] * c2[1];
        h1 += c1[0] * y.re + c1[1] * y.im;
        h2 += c2[0] * y.re + c2[1] * y.im;
    }
    let det = g11 * g22 - g12 * g12;
    c((h1 * g22 - g12 * h2) / det, (g11 * h2 - g12 * h1) / det)
}

pub fn random_path(rng: &mut impl Rng, scale: f64) -> PathParams {
    PathParams::new(
        Complex64::from_polar(scale * rng.gen_range(0.2..1.0), rng.gen_range(-PI..PI)),
        rng.gen_range(-PI..PI),
        rng.gen_range(-PI..PI),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-1.5..1.5),
    )
}

pub fn paper_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, ..ScenarioConfig::default() }
}

pub fn small_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        nc: 7,
        ns: 5,
        nr: 6,
        nt: 3,
        seed,
        ..ScenarioConfig::default()
    }
}
