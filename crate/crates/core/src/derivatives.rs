//! Fourier-series partial derivatives of the concentrated objective.
//!
//! Fix every coordinate of a detached path except one, call it `x`. With the
//! gain at its least-squares optimum the objective along `x` is
//!
//! ```text
//! f(x) = (‖r‖² − |P(x)|² / E) / N0,      P(x) = Σ_i T_i·e^{±j·x·i}
//! ```
//!
//! where `r` is the residual without the path, `E = Σ|α|²` does not depend on
//! `x`, and the terms `T_i` collect the residual matched against the rest of
//! the regressor. `|P|²` is the autocorrelation of `T`, i.e. the discrete
//! convolution `T ∗ T*` laid out on harmonics `−(len−1) … len−1`, so `f′(x)`
//! is a real trigonometric polynomial whose `m`-th coefficient is
//! `−j·m·R_m / (N0·E)`.
//!
//! For the transmit phase `χ = π·sin θ` the same holds only when `E` is
//! independent of `θ`, which is exactly the pilot isotropy condition.

use num_complex::Complex64;

use crate::likelihood::{PathId, ResidualState};
use crate::model::{self, Coordinate, Phases};
use crate::{Error, Result};

/// Pilots whose isotropy deviation exceeds this are rejected by the
/// transmit-angle series.
pub const ISOTROPY_TOL: f64 = 1e-10;

/// Real trigonometric polynomial `g(ψ) = Re Σ_{m=−M}^{M} c_m·e^{jmψ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSeries {
    order: usize,
    coeffs: Vec<Complex64>,
}

impl TrigSeries {
    pub fn zeros(order: usize) -> Self {
        TrigSeries {
            order,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * order + 1],
        }
    }

    /// Builds a series from coefficients listed for `m = −M … M`.
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Self {
        assert!(coeffs.len() % 2 == 1, "coefficient count must be odd");
        TrigSeries {
            order: coeffs.len() / 2,
            coeffs,
        }
    }

    /// Hermitian series from the non-negative harmonics `c_0 … c_M`
    /// (the imaginary part of `c_0` is dropped).
    pub fn from_positive(positive: &[Complex64]) -> Self {
        let order = positive.len().saturating_sub(1);
        let mut s = TrigSeries::zeros(order);
        for (m, c) in positive.iter().enumerate() {
            if m == 0 {
                s.coeffs[order] = Complex64::new(c.re, 0.0);
            } else {
                s.coeffs[order + m] = *c;
                s.coeffs[order - m] = c.conj();
            }
        }
        s
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficients for `m = −M … M`.
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    pub fn coeff(&self, m: isize) -> Complex64 {
        let idx = m + self.order as isize;
        if idx < 0 || idx as usize >= self.coeffs.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[idx as usize]
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `Σ|c_m|`, a bound on `|g|`.
    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// The full complex sum `Σ c_m·e^{jmψ}`.
    pub fn eval_complex(&self, psi: f64) -> Complex64 {
        let m0 = self.order as isize;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * Complex64::from_polar(1.0, (i as isize - m0) as f64 * psi))
            .sum()
    }

    pub fn eval(&self, psi: f64) -> f64 {
        self.eval_complex(psi).re
    }

    /// Term-wise derivative `c_m → j·m·c_m`.
    pub fn derivative(&self) -> TrigSeries {
        let m0 = self.order as isize;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * Complex64::new(0.0, (i as isize - m0) as f64))
            .collect();
        TrigSeries {
            order: self.order,
            coeffs,
        }
    }

    /// Largest `|c_{−m} − conj(c_m)|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs_coeff();
        if scale == 0.0 {
            return 0.0;
        }
        (0..=self.order as isize)
            .map(|m| (self.coeff(-m) - self.coeff(m).conj()).norm())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Real part of the series at `psi`.
pub fn eval_series(series: &TrigSeries, psi: f64) -> f64 {
    series.eval(psi)
}

/// The concentrated objective restricted to one coordinate of one path.
#[derive(Clone, Debug)]
pub struct CoordinateSlice {
    coordinate: Coordinate,
    terms: Vec<Complex64>,
    sign: f64,
    energy: f64,
    residual_energy: f64,
    n0: f64,
    order: usize,
}

impl CoordinateSlice {
    /// Builds the slice for a path of `user` at `phases`, reading the
    /// state's residual as `y − (all other paths)`.
    pub fn build(
        state: &ResidualState,
        user: usize,
        phases: &Phases,
        coordinate: Coordinate,
    ) -> Result<Self> {
        let dims = state.dims();
        let (nc, ns, nr, nt) = (dims.nc, dims.ns, dims.nr, dims.nt);
        let r = state.residual();
        let pilot = state.pilots().user(user);
        let [w1, w2, psi, chi] = phases.0;

        let beam = model::beamformed_pilots(pilot, chi);
        let energy = nr as f64 * beam.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if !(energy > 0.0) {
            return Err(Error::DegenerateRegressor { user });
        }
        let e1: Vec<Complex64> = (0..nc)
            .map(|n| Complex64::from_polar(1.0, w1 * n as f64))
            .collect();
        let e2: Vec<Complex64> = (0..ns)
            .map(|t| Complex64::from_polar(1.0, w2 * t as f64))
            .collect();
        let rx_conj: Vec<Complex64> = (0..nr)
            .map(|u| Complex64::from_polar(1.0, -psi * u as f64))
            .collect();

        // Residual matched across receive antennas, U_nt = Σ_u e^{−jψu} r_ntu.
        let matched_rx = || -> Vec<Complex64> {
            let mut out = Vec::with_capacity(nc * ns);
            for n in 0..nc {
                for t in 0..ns {
                    out.push(r.fibre(n, t).iter().zip(&rx_conj).map(|(a, b)| a * b).sum());
                }
            }
            out
        };

        let (terms, sign, order) = match coordinate {
            Coordinate::Omega1 => {
                let u = matched_rx();
                let terms = (0..nc)
                    .map(|n| {
                        (0..ns)
                            .map(|t| (e2[t] * beam[n * ns + t]).conj() * u[n * ns + t])
                            .sum()
                    })
                    .collect();
                (terms, -1.0, nc - 1)
            }
            Coordinate::Omega2 => {
                let u = matched_rx();
                let terms = (0..ns)
                    .map(|t| {
                        (0..nc)
                            .map(|n| (e1[n] * beam[n * ns + t]).conj() * u[n * ns + t])
                            .sum()
                    })
                    .collect();
                (terms, -1.0, ns - 1)
            }
            Coordinate::Psi => {
                let mut terms = vec![Complex64::new(0.0, 0.0); nr];
                for n in 0..nc {
                    for t in 0..ns {
                        let w = (e1[n] * e2[t] * beam[n * ns + t]).conj();
                        for (d, y) in terms.iter_mut().zip(r.fibre(n, t)) {
                            *d += w * y;
                        }
                    }
                }
                (terms, -1.0, nr - 1)
            }
            Coordinate::Chi => {
                let u = matched_rx();
                let mut terms = vec![Complex64::new(0.0, 0.0); nt];
                for n in 0..nc {
                    for t in 0..ns {
                        let w = (e1[n] * e2[t]).conj() * u[n * ns + t];
                        for (g, x) in terms.iter_mut().zip(pilot.fibre(n, t)) {
                            *g += x.conj() * w;
                        }
                    }
                }
                (terms, 1.0, 2 * nt - 2)
            }
        };

        Ok(CoordinateSlice {
            coordinate,
            terms,
            sign,
            energy,
            residual_energy: r.energy(),
            n0: state.n0(),
            order,
        })
    }

    pub fn coordinate(&self) -> Coordinate {
        self.coordinate
    }

    /// Regressor energy `Σ|α|²`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// `P(x) = ⟨α(x), r⟩`.
    pub fn projection(&self, x: f64) -> Complex64 {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| t * Complex64::from_polar(1.0, self.sign * x * i as f64))
            .sum()
    }

    /// Concentrated objective at coordinate value `x`.
    pub fn objective_at(&self, x: f64) -> f64 {
        let p = self.projection(x);
        ((self.residual_energy - p.norm_sqr() / self.energy) / self.n0).max(0.0)
    }

    /// Optimal gain at coordinate value `x`.
    pub fn gain_at(&self, x: f64) -> Complex64 {
        self.projection(x) / self.energy
    }

    /// `∂f/∂x` as a trigonometric series.
    pub fn series(&self) -> TrigSeries {
        let len = self.terms.len();
        let mut s = TrigSeries::zeros(self.order.max(len - 1));
        let scale = -1.0 / (self.n0 * self.energy);
        for h in 1..len {
            // R_m = Σ_i T_{i+m}·conj(T_i); |P|² carries R_{sign·h} on harmonic h.
            let lag = |m: isize| -> Complex64 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..len as isize {
                    let j = i + m;
                    if (0..len as isize).contains(&j) {
                        acc += self.terms[j as usize] * self.terms[i as usize].conj();
                    }
                }
                acc
            };
            let m = if self.sign > 0.0 { h as isize } else { -(h as isize) };
            let c = lag(m) * Complex64::new(0.0, h as f64 * scale);
            let o = s.order;
            s.coeffs[o + h] = c;
            s.coeffs[o - h] = c.conj();
        }
        s
    }
}

fn detached_slice(state: &ResidualState, id: PathId, coordinate: Coordinate) -> Result<CoordinateSlice> {
    if state.is_attached(id)? {
        return Err(Error::PathAttached(id.0));
    }
    let user = state.user_of(id)?;
    let phases = state.params(id)?.phases();
    CoordinateSlice::build(state, user, &phases, coordinate)
}

/// Derivative over `ω₁` (order `Nc − 1`).
pub fn series_omega1(state: &ResidualState, id: PathId) -> Result<TrigSeries> {
    Ok(detached_slice(state, id, Coordinate::Omega1)?.series())
}

/// Derivative over `ω₂` (order `Ns − 1`).
pub fn series_omega2(state: &ResidualState, id: PathId) -> Result<TrigSeries> {
    Ok(detached_slice(state, id, Coordinate::Omega2)?.series())
}

/// Derivative over the receive phase `ψ = −π·sin φ` (order `Nr − 1`).
/// Chain rule: `∂f/∂sin φ = −π·∂f/∂ψ`.
pub fn series_sinphi(state: &ResidualState, id: PathId) -> Result<TrigSeries> {
    Ok(detached_slice(state, id, Coordinate::Psi)?.series())
}

/// Derivative over the transmit phase `χ = π·sin θ` (order `2Nt − 2`;
/// harmonics above `Nt − 1` are zero). Requires isotropic pilots.
pub fn series_sintheta(state: &ResidualState, id: PathId) -> Result<TrigSeries> {
    let user = state.user_of(id)?;
    let deviation =
        model::isotropy_deviation(state.pilots().user(user), &model::theta_grid(64))?;
    if deviation > ISOTROPY_TOL {
        return Err(Error::NonIsotropicPilots { user, deviation });
    }
    Ok(detached_slice(state, id, Coordinate::Chi)?.series())
}

/// Series for any coordinate; dispatches to the per-coordinate builders.
pub fn series_for(state: &ResidualState, id: PathId, coordinate: Coordinate) -> Result<TrigSeries> {
    match coordinate {
        Coordinate::Omega1 => series_omega1(state, id),
        Coordinate::Omega2 => series_omega2(state, id),
        Coordinate::Psi => series_sinphi(state, id),
        Coordinate::Chi => series_sintheta(state, id),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_examples() {
        let zero = TrigSeries::zeros(3);
        assert_eq!(zero.eval(1.234), 0.0);
        let sin = TrigSeries::from_coeffs(vec![c(0.0, 0.5), c(0.0, 0.0), c(0.0, -0.5)]);
        for k in 0..20 {
            let x = -PI + k as f64 * 0.3;
            assert!((eval_series(&sin, x) - x.sin()).abs() < 1e-15);
        }
        assert_eq!(sin.hermitian_defect(), 0.0);
        assert_eq!(sin.coeff(5), c(0.0, 0.0));
    }

    #[test]
    fn derivative_of_cos_is_minus_sin() {
        let cos = TrigSeries::from_positive(&[c(0.0, 0.0), c(0.5, 0.0)]);
        let d = cos.derivative();
        for k in 0..20 {
            let x = -3.0 + k as f64 * 0.31;
            assert!((d.eval(x) + x.sin()).abs() < 1e-15);
        }
    }
}
