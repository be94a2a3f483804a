//! Domain types, ULA steering vectors, forward signal synthesis, isotropic
//! pilots and random scenario sampling.
//!
//! Index origins are zero for subcarrier `n`, symbol `t`, receive antenna `u`
//! and transmit antenna `v`; every phase is measured relative to index 0.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Resource grid and array sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Subcarriers.
    pub nc: usize,
    /// OFDM symbols.
    pub ns: usize,
    /// Receive antennas at the base station.
    pub nr: usize,
    /// Transmit antennas per user.
    pub nt: usize,
}

impl Dims {
    /// Number of observed complex samples `Nc·Ns·Nr`.
    pub fn samples(&self) -> usize {
        self.nc * self.ns * self.nr
    }

    pub fn received_shape(&self) -> [usize; 3] {
        [self.nc, self.ns, self.nr]
    }

    pub fn pilot_shape(&self) -> [usize; 3] {
        [self.nc, self.ns, self.nt]
    }
}

/// Parameters of a synthetic uplink scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Number of users `K`.
    pub users: usize,
    /// True path count per user.
    pub paths: Vec<usize>,
    pub nc: usize,
    pub ns: usize,
    pub nr: usize,
    pub nt: usize,
    /// Noise variance per complex sample, linear power.
    pub n0: f64,
    /// Per-user transmit power in dBW.
    pub tx_powers_dbw: Vec<f64>,
    pub rice_noncentrality: f64,
    pub rice_scale: f64,
    /// Multiplier applied to the strongest gain of each user.
    pub los_boost: f64,
    pub seed: u64,
    /// Skip the noise draw; the estimator still scales by `n0`.
    pub noiseless: bool,
    pub pilot_layout: PilotLayout,
}

/// Which transmit antenna is active at each resource element.
///
/// Both layouts keep a single active antenna per `(n, t)`, so both are
/// isotropic. With `Cycling` the antenna index is `(n + t) mod Nt`, which
/// ties the transmit phase to `n + t`: shifting ω₁, ω₂ and χ together by a
/// multiple of `2π/Nt` leaves the received signal unchanged, so those
/// parameters are only identified modulo that shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotLayout {
    /// Active antenna drawn uniformly per resource element.
    #[default]
    Random,
    Cycling,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            users: 2,
            paths: vec![3, 3],
            nc: 30,
            ns: 15,
            nr: 32,
            nt: 4,
            n0: 1e-8,
            tx_powers_dbw: vec![-40.0, -40.0],
            rice_noncentrality: 1e-2,
            rice_scale: 5e-3,
            los_boost: 1.5,
            seed: 0,
            noiseless: false,
            pilot_layout: PilotLayout::Random,
        }
    }
}

impl ScenarioConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            nc: self.nc,
            ns: self.ns,
            nr: self.nr,
            nt: self.nt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.users == 0 {
            return bad("at least one user is required".into());
        }
        if self.paths.len() != self.users {
            return bad(format!(
                "paths has {} entries for {} users",
                self.paths.len(),
                self.users
            ));
        }
        if self.tx_powers_dbw.len() != self.users {
            return bad(format!(
                "tx_powers_dbw has {} entries for {} users",
                self.tx_powers_dbw.len(),
                self.users
            ));
        }
        if self.nc == 0 || self.ns == 0 || self.nr == 0 || self.nt == 0 {
            return bad("all grid and array dimensions must be at least 1".into());
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return bad(format!("n0 must be positive, got {}", self.n0));
        }
        if !(self.rice_noncentrality >= 0.0 && self.rice_scale >= 0.0) {
            return bad("rice parameters must be non-negative".into());
        }
        if self.tx_powers_dbw.iter().any(|p| !p.is_finite()) {
            return bad("transmit powers must be finite".into());
        }
        Ok(())
    }
}

/// Converts a power in dBW to a pilot amplitude `√P`.
pub fn dbw_to_amplitude(dbw: f64) -> f64 {
    10f64.powf(dbw / 20.0)
}

/// One multipath component: complex gain plus the four harmonic parameters.
///
/// `omega1` folds delay and clock offset (rad per subcarrier), `omega2` folds
/// Doppler and carrier offset (rad per symbol). `phi` is the angle of arrival
/// and `theta` the angle of departure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub b: Complex64,
    pub omega1: f64,
    pub omega2: f64,
    pub phi: f64,
    pub theta: f64,
}

impl PathParams {
    pub fn new(b: Complex64, omega1: f64, omega2: f64, phi: f64, theta: f64) -> Self {
        PathParams {
            b,
            omega1,
            omega2,
            phi,
            theta,
        }
    }

    /// Receive phase slope `ψ = −π·sin φ`.
    pub fn psi(&self) -> f64 {
        -PI * self.phi.sin()
    }

    /// Transmit phase slope `χ = π·sin θ`.
    pub fn chi(&self) -> f64 {
        PI * self.theta.sin()
    }

    pub fn phases(&self) -> Phases {
        Phases([self.omega1, self.omega2, self.psi(), self.chi()])
    }

    pub fn from_phases(b: Complex64, phases: &Phases) -> Self {
        let [w1, w2, psi, chi] = phases.0;
        PathParams {
            b,
            omega1: w1,
            omega2: w2,
            phi: phi_from_psi(psi),
            theta: theta_from_chi(chi),
        }
    }

    /// True when every parameter sits strictly inside its open domain.
    pub fn in_domain(&self) -> bool {
        let open = |x: f64, half: f64| x.is_finite() && x > -half && x < half;
        open(self.omega1, PI)
            && open(self.omega2, PI)
            && open(self.phi, FRAC_PI_2)
            && open(self.theta, FRAC_PI_2)
            && self.b.re.is_finite()
            && self.b.im.is_finite()
    }
}

/// Arrival angle of a receive phase; `psi` is taken modulo 2π.
pub fn phi_from_psi(psi: f64) -> f64 {
    (-wrap_phase(psi) / PI).clamp(-1.0, 1.0).asin()
}

/// Departure angle of a transmit phase; `chi` is taken modulo 2π.
pub fn theta_from_chi(chi: f64) -> f64 {
    (wrap_phase(chi) / PI).clamp(-1.0, 1.0).asin()
}

/// The four coordinates of a path in their phase domains, all on (−π, π].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phases(pub [f64; 4]);

impl Phases {
    #[inline]
    pub fn get(&self, c: Coordinate) -> f64 {
        self.0[c.index()]
    }

    #[inline]
    pub fn set(&mut self, c: Coordinate, value: f64) {
        self.0[c.index()] = value;
    }
}

/// A coordinate of the per-path search, expressed in its phase domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coordinate {
    /// Phase slope across subcarriers.
    Omega1,
    /// Phase slope across OFDM symbols.
    Omega2,
    /// Receive phase `ψ = −π·sin φ`.
    Psi,
    /// Transmit phase `χ = π·sin θ`.
    Chi,
}

impl Coordinate {
    /// Update order used by the optimizer.
    pub const ALL: [Coordinate; 4] = [
        Coordinate::Omega1,
        Coordinate::Omega2,
        Coordinate::Psi,
        Coordinate::Chi,
    ];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Coordinate::Omega1 => 0,
            Coordinate::Omega2 => 1,
            Coordinate::Psi => 2,
            Coordinate::Chi => 3,
        }
    }
}

/// Wraps an angle onto (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut y = x % two_pi;
    if y <= -PI {
        y += two_pi;
    } else if y > PI {
        y -= two_pi;
    }
    y
}

/// Shortest signed angular difference `a − b` on (−π, π].
pub fn phase_diff(a: f64, b: f64) -> f64 {
    wrap_phase(a - b)
}

/// Subcarrier spacing and symbol length used to express harmonic slopes in
/// physical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalGrid {
    /// Subcarrier spacing in Hz.
    pub f_scs: f64,
    /// OFDM symbol length in seconds.
    pub ts: f64,
}

impl PhysicalGrid {
    pub fn new(f_scs: f64, ts: f64) -> Result<Self> {
        if !(f_scs > 0.0 && ts > 0.0 && f_scs.is_finite() && ts.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "physical grid needs positive spacing and symbol length, got ({f_scs}, {ts})"
            )));
        }
        Ok(PhysicalGrid { f_scs, ts })
    }
}

/// Maps harmonic slopes to `(delay s, Doppler Hz)`, taking clock and carrier
/// offsets as zero.
pub fn omega_to_physical(omega1: f64, omega2: f64, grid: &PhysicalGrid) -> (f64, f64) {
    (
        -omega1 / (2.0 * PI * grid.f_scs),
        omega2 / (2.0 * PI * grid.ts),
    )
}

/// Inverse of [`omega_to_physical`] (no wrapping applied).
pub fn physical_to_omega(delay: f64, doppler: f64, grid: &PhysicalGrid) -> (f64, f64) {
    (
        -2.0 * PI * delay * grid.f_scs,
        2.0 * PI * doppler * grid.ts,
    )
}

/// ULA response `[1, e^{−jπ sin a}, …, e^{−jπ(N−1) sin a}]`.
pub fn steering(angle: f64, n: usize) -> Vec<Complex64> {
    let s = angle.sin();
    (0..n)
        .map(|i| Complex64::from_polar(1.0, -PI * i as f64 * s))
        .collect()
}

/// Known transmitted symbols per user, each shaped `(Nc, Ns, Nt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotTensor {
    pub users: Vec<Tensor3>,
}

impl PilotTensor {
    pub fn user(&self, k: usize) -> &Tensor3 {
        &self.users[k]
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn check_dims(&self, dims: &Dims, users: usize) -> Result<()> {
        if self.users.len() != users {
            return Err(Error::DimensionMismatch {
                what: "pilot user count",
                expected: vec![users],
                actual: vec![self.users.len()],
            });
        }
        for x in &self.users {
            x.expect_shape("pilot tensor", dims.pilot_shape())?;
        }
        Ok(())
    }
}

/// Observed samples `y_ntu`, shaped `(Nc, Ns, Nr)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReceivedTensor(pub Tensor3);

/// Per-(n,t) beamformed pilot `a(θ)ᵀ x_nt` of one user for transmit phase χ.
pub(crate) fn beamformed_pilots(pilot: &Tensor3, chi: f64) -> Vec<Complex64> {
    let [nc, ns, nt] = pilot.shape();
    let tx: Vec<Complex64> = (0..nt)
        .map(|v| Complex64::from_polar(1.0, -chi * v as f64))
        .collect();
    let mut out = Vec::with_capacity(nc * ns);
    for n in 0..nc {
        for t in 0..ns {
            out.push(
                pilot
                    .fibre(n, t)
                    .iter()
                    .zip(&tx)
                    .map(|(x, a)| x * a)
                    .sum(),
            );
        }
    }
    out
}

/// Fills `out` with `scale · e^{jω₁n} e^{jω₂t} e^{jψu} · a(θ)ᵀx_nt`.
pub(crate) fn fill_response(
    out: &mut Tensor3,
    phases: &Phases,
    pilot: &Tensor3,
    scale: Complex64,
) {
    let [w1, w2, psi, chi] = phases.0;
    let [nc, ns, nr] = out.shape();
    let beam = beamformed_pilots(pilot, chi);
    let rx: Vec<Complex64> = (0..nr)
        .map(|u| Complex64::from_polar(1.0, psi * u as f64))
        .collect();
    for n in 0..nc {
        let e1 = Complex64::from_polar(1.0, w1 * n as f64) * scale;
        for t in 0..ns {
            let base = e1 * Complex64::from_polar(1.0, w2 * t as f64) * beam[n * ns + t];
            for (o, r) in out.fibre_mut(n, t).iter_mut().zip(&rx) {
                *o = base * r;
            }
        }
    }
}

/// Contribution `b·α` of one path of the user whose pilots are `pilot`.
pub fn path_contribution(params: &PathParams, pilot: &Tensor3, nr: usize) -> Tensor3 {
    let [nc, ns, _] = pilot.shape();
    let mut out = Tensor3::zeros([nc, ns, nr]);
    fill_response(&mut out, &params.phases(), pilot, params.b);
    out
}

/// Noise-free mean `μ_ntu`, summed over all users and paths.
pub fn synthesize_mean(
    channels: &[Vec<PathParams>],
    pilots: &PilotTensor,
    dims: &Dims,
) -> Result<Tensor3> {
    pilots.check_dims(dims, channels.len())?;
    let mut mean = Tensor3::zeros(dims.received_shape());
    let mut scratch = Tensor3::zeros(dims.received_shape());
    for (k, paths) in channels.iter().enumerate() {
        for p in paths {
            fill_response(&mut scratch, &p.phases(), pilots.user(k), p.b);
            mean.add_assign(&scratch);
        }
    }
    Ok(mean)
}

/// Mean plus circular complex Gaussian noise of variance `n0` per sample.
pub fn synthesize_received(
    channels: &[Vec<PathParams>],
    pilots: &PilotTensor,
    dims: &Dims,
    n0: f64,
    noise_seed: u64,
) -> Result<ReceivedTensor> {
    let mut y = synthesize_mean(channels, pilots, dims)?;
    add_noise(&mut y, n0, noise_seed);
    Ok(ReceivedTensor(y))
}

fn add_noise(y: &mut Tensor3, n0: f64, seed: u64) {
    if n0 <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (n0 / 2.0).sqrt()).expect("finite noise std");
    for z in y.as_mut_slice() {
        *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
}

/// Independent 64-bit seed for a named stream of a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_CHANNELS: u64 = 0;
const STREAM_PILOTS: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Single-antenna pilots: at each `(n, t)` one antenna, chosen by
/// `config.pilot_layout`, transmits a unit-modulus symbol of uniform phase
/// scaled by `√P`.
///
/// Every summand of `Σ|a(θ)ᵀx_nt|²` is then `|x_v|²`, so the beamformed
/// power does not depend on θ.
pub fn generate_isotropic_pilots(config: &ScenarioConfig, seed: u64) -> PilotTensor {
    let dims = config.dims();
    let users = (0..config.users)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let amp = dbw_to_amplitude(config.tx_powers_dbw[k]);
            let mut x = Tensor3::zeros(dims.pilot_shape());
            for n in 0..dims.nc {
                for t in 0..dims.ns {
                    let v = match config.pilot_layout {
                        PilotLayout::Random => rng.gen_range(0..dims.nt),
                        PilotLayout::Cycling => (n + t) % dims.nt,
                    };
                    let phase = rng.gen_range(-PI..PI);
                    x.set(n, t, v, Complex64::from_polar(amp, phase));
                }
            }
            x
        })
        .collect();
    PilotTensor { users }
}

/// `count` angles evenly spread strictly inside (−π/2, π/2).
pub fn theta_grid(count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| -FRAC_PI_2 + PI * (i as f64 + 0.5) / count as f64)
        .collect()
}

/// Max over the grid of `|S(θ) − S̄| / S̄` for one user's pilots, where
/// `S(θ) = Σ_{n,t} |a(θ)ᵀx_nt|²`.
pub fn isotropy_deviation(pilot: &Tensor3, grid: &[f64]) -> Result<f64> {
    let power: Vec<f64> = grid
        .iter()
        .map(|&theta| {
            beamformed_pilots(pilot, PI * theta.sin())
                .iter()
                .map(|z| z.norm_sqr())
                .sum()
        })
        .collect();
    let mean = power.iter().sum::<f64>() / power.len().max(1) as f64;
    if !(mean > 0.0) {
        return Err(Error::DegeneratePilots);
    }
    Ok(power
        .iter()
        .map(|s| (s - mean).abs() / mean)
        .fold(0.0, f64::max))
}

/// Worst isotropy deviation over all users.
pub fn check_isotropy(pilots: &PilotTensor, grid: &[f64]) -> Result<f64> {
    pilots
        .users
        .iter()
        .map(|x| isotropy_deviation(x, grid))
        .try_fold(0.0, |acc, d| d.map(|d| f64::max(acc, d)))
}

/// A sampled ground truth together with its pilots and observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub channels: Vec<Vec<PathParams>>,
    pub pilots: PilotTensor,
    pub received: ReceivedTensor,
    pub noise_seed: u64,
}

impl Scenario {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.config.validate()?;
        scenario
            .pilots
            .check_dims(&scenario.config.dims(), scenario.config.users)?;
        scenario
            .received
            .0
            .expect_shape("received tensor", scenario.config.dims().received_shape())?;
        Ok(scenario)
    }
}

fn open_uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    loop {
        let x = rng.gen_range(-half_width..half_width);
        if x > -half_width {
            return x;
        }
    }
}

fn sample_rice(rng: &mut impl Rng, nu: f64, sigma: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let re = nu + sigma * normal.sample(rng);
    let im = sigma * normal.sample(rng);
    re.hypot(im)
}

/// Draws ground-truth paths for every user: uniform harmonics, angles and
/// gain phase, Rice gain magnitudes, strongest gain per user boosted.
pub fn sample_channels(config: &ScenarioConfig, rng: &mut impl Rng) -> Vec<Vec<PathParams>> {
    (0..config.users)
        .map(|k| {
            let mut paths: Vec<PathParams> = (0..config.paths[k])
                .map(|_| {
                    let omega1 = open_uniform(rng, PI);
                    let omega2 = open_uniform(rng, PI);
                    let phi = open_uniform(rng, FRAC_PI_2);
                    let theta = open_uniform(rng, FRAC_PI_2);
                    let mag = sample_rice(rng, config.rice_noncentrality, config.rice_scale);
                    let phase = open_uniform(rng, PI);
                    PathParams::new(Complex64::from_polar(mag, phase), omega1, omega2, phi, theta)
                })
                .collect();
            if let Some(strongest) = paths
                .iter_mut()
                .max_by(|a, b| a.b.norm().total_cmp(&b.b.norm()))
            {
                strongest.b *= config.los_boost;
            }
            paths
        })
        .collect()
}

/// Samples a complete scenario; every draw flows from `config.seed`.
pub fn sample_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_CHANNELS);
    let channels = sample_channels(config, &mut rng);
    let pilots = generate_isotropic_pilots(config, derive_seed(config.seed, STREAM_PILOTS));
    let noise_seed = derive_seed(config.seed, STREAM_NOISE);
    let dims = config.dims();
    let received = if config.noiseless {
        ReceivedTensor(synthesize_mean(&channels, &pilots, &dims)?)
    } else {
        synthesize_received(&channels, &pilots, &dims, config.n0, noise_seed)?
    };
    Ok(Scenario {
        config: config.clone(),
        channels,
        pilots,
        received,
        noise_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_examples() {
        assert!(steering(0.0, 4).iter().all(|z| close(*z, c(1.0, 0.0), 1e-15)));
        let s = steering(FRAC_PI_2, 2);
        assert!(close(s[0], c(1.0, 0.0), 1e-15) && close(s[1], c(-1.0, 0.0), 1e-15));
        let s = steering(PI / 6.0, 3);
        assert!(close(s[0], c(1.0, 0.0), 1e-15));
        assert!(close(s[1], c(0.0, -1.0), 1e-15));
        assert!(close(s[2], c(-1.0, 0.0), 1e-15));
    }

    fn single_antenna_config() -> ScenarioConfig {
        ScenarioConfig {
            users: 1,
            paths: vec![1],
            nc: 3,
            ns: 2,
            nr: 4,
            nt: 2,
            tx_powers_dbw: vec![0.0],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn mean_of_trivial_path() {
        let cfg = single_antenna_config();
        let dims = cfg.dims();
        let mut x = Tensor3::zeros(dims.pilot_shape());
        for n in 0..dims.nc {
            for t in 0..dims.ns {
                x.set(n, t, 0, c(1.0, 0.0));
            }
        }
        let pilots = PilotTensor { users: vec![x] };
        let path = PathParams::new(c(1.0, 0.0), 0.0, 0.0, 0.0, 0.0);
        let mu = synthesize_mean(&[vec![path]], &pilots, &dims).unwrap();
        assert!(mu.as_slice().iter().all(|z| close(*z, c(1.0, 0.0), 1e-15)));
        let doubled = PathParams { b: c(2.0, 0.0), ..path };
        let mu2 = synthesize_mean(&[vec![doubled]], &pilots, &dims).unwrap();
        assert!(mu2.as_slice().iter().all(|z| close(*z, c(2.0, 0.0), 1e-15)));
    }

    #[test]
    fn mean_rejects_mismatched_pilots() {
        let cfg = single_antenna_config();
        let pilots = generate_isotropic_pilots(&cfg, 1);
        let wrong = Dims { nc: 4, ..cfg.dims() };
        assert!(matches!(
            synthesize_mean(&[vec![]], &pilots, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(synthesize_mean(&[vec![], vec![]], &pilots, &cfg.dims()).is_err());
    }

    #[test]
    fn pilot_power_scaling() {
        let cfg = ScenarioConfig {
            users: 1,
            paths: vec![1],
            nt: 1,
            tx_powers_dbw: vec![-40.0],
            ..ScenarioConfig::default()
        };
        let p = generate_isotropic_pilots(&cfg, 9);
        for z in p.user(0).as_slice() {
            assert!((z.norm() - 1e-2).abs() < 1e-15);
        }
    }

    #[test]
    fn one_active_antenna_per_element() {
        let cfg = ScenarioConfig::default();
        let x = generate_isotropic_pilots(&cfg, 3);
        let x = x.user(1);
        let mut used = vec![0usize; cfg.nt];
        for n in 0..cfg.nc {
            for t in 0..cfg.ns {
                let active: Vec<usize> =
                    (0..cfg.nt).filter(|&v| x.get(n, t, v).norm() > 0.0).collect();
                assert_eq!(active.len(), 1);
                used[active[0]] += 1;
            }
        }
        assert!(used.iter().all(|&u| u > 0));
    }

    #[test]
    fn antenna_cycling_layout() {
        let cfg = ScenarioConfig {
            pilot_layout: PilotLayout::Cycling,
            ..ScenarioConfig::default()
        };
        let p = generate_isotropic_pilots(&cfg, 3);
        let x = p.user(1);
        for n in 0..cfg.nc {
            for t in 0..cfg.ns {
                for v in 0..cfg.nt {
                    let active = v == (n + t) % cfg.nt;
                    assert_eq!(x.get(n, t, v).norm() > 0.0, active);
                }
            }
        }
    }

    #[test]
    fn isotropy_examples() {
        let grid = theta_grid(64);
        for nt in [1, 2, 4, 8] {
            for pilot_layout in [PilotLayout::Random, PilotLayout::Cycling] {
                let cfg = ScenarioConfig { nt, pilot_layout, ..ScenarioConfig::default() };
                let p = generate_isotropic_pilots(&cfg, 5);
                assert!(check_isotropy(&p, &grid).unwrap() <= 1e-10);
            }
        }
        // Nt = 1: any pilot is isotropic.
        let x = Tensor3::from_fn([3, 2, 1], |n, t, _| c(n as f64 + 1.0, t as f64));
        assert!(isotropy_deviation(&x, &grid).unwrap() <= 1e-12);
        let zeros = Tensor3::zeros([3, 2, 2]);
        assert!(matches!(isotropy_deviation(&zeros, &grid), Err(Error::DegeneratePilots)));
    }

    #[test]
    fn all_antennas_equal_is_not_isotropic() {
        // S(θ) = NcNs·|Σ_v e^{-jπ v sinθ}|², which peaks at broadside with 16
        // and vanishes at sin θ = ±1/2; the grid mean is far from both.
        let x = Tensor3::from_fn([4, 3, 4], |_, _, _| c(1.0, 0.0));
        let grid = theta_grid(64);
        let dev = isotropy_deviation(&x, &grid).unwrap();
        let analytic: Vec<f64> = grid
            .iter()
            .map(|th| {
                let s: Complex64 = steering(*th, 4).iter().sum();
                12.0 * s.norm_sqr()
            })
            .collect();
        let mean = analytic.iter().sum::<f64>() / 64.0;
        let expect = analytic
            .iter()
            .map(|s| (s - mean).abs() / mean)
            .fold(0.0, f64::max);
        assert!((dev - expect).abs() < 1e-12);
        assert!(dev > 0.1);
    }

    #[test]
    fn physical_conversion() {
        let g = PhysicalGrid::new(15e3, 1.0 / 14e3).unwrap();
        assert_eq!(omega_to_physical(0.0, 0.0, &g), (0.0, 0.0));
        let (d, f) = omega_to_physical(-2.0 * PI * 15e3 * 1e-6, 0.0, &g);
        assert!((d - 1e-6).abs() < 1e-18);
        assert_eq!(f, 0.0);
        let (w1, w2) = physical_to_omega(3.3e-6, 1234.0, &g);
        let (d, f) = omega_to_physical(w1, w2, &g);
        assert!((d - 3.3e-6).abs() <= 1e-12 * 3.3e-6 && (f - 1234.0).abs() <= 1e-12 * 1234.0);
        assert!(PhysicalGrid::new(0.0, 1.0).is_err());
    }

    #[test]
    fn wrap_rules() {
        assert_eq!(wrap_phase(-PI), PI);
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((phase_diff(3.1, -3.1) - (6.2 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        let bad = ScenarioConfig { n0: 0.0, ..ScenarioConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { users: 3, ..ScenarioConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { nr: 0, ..ScenarioConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn los_boost_applied_once() {
        let cfg = ScenarioConfig { los_boost: 1.5, ..ScenarioConfig::default() };
        let unboosted = ScenarioConfig { los_boost: 1.0, ..cfg.clone() };
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        let a = sample_channels(&cfg, &mut r1);
        let b = sample_channels(&unboosted, &mut r2);
        for (pa, pb) in a.iter().zip(&b) {
            let scaled: Vec<bool> = pa
                .iter()
                .zip(pb)
                .map(|(x, y)| (x.b - y.b * 1.5).norm() < 1e-15 && x.b != y.b)
                .collect();
            assert_eq!(scaled.iter().filter(|s| **s).count(), 1);
            let imax = pb
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.b.norm().total_cmp(&y.1.b.norm()))
                .unwrap()
                .0;
            assert!(scaled[imax]);
        }
    }
}
