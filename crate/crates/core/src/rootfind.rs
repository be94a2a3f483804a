//! Real roots of trigonometric series through the companion matrix.
//!
//! With `z = e^{jψ}`, `Σ_{m=−M}^{M} c_m e^{jmψ} = z^{−M}·p(z)` where
//! `p(z) = Σ_m c_m z^{m+M}` has degree `2M`. Real roots `ψ` of the series
//! are the unit-modulus roots of `p`; those are read off the eigenvalues of
//! the companion matrix, filtered by distance to the unit circle and polished
//! with Newton steps on the series itself.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::derivatives::{CoordinateSlice, TrigSeries};
use crate::eigen;
use crate::likelihood::{PathId, ResidualState};
use crate::model::{wrap_phase, Coordinate};
use crate::{Error, Result};

/// Coefficients below this fraction of the largest are trimmed.
pub const TRIM_TOL: f64 = 1e-12;
/// Default accepted distance of an eigenvalue from the unit circle.
pub const DEFAULT_RADIAL_TOL: f64 = 1e-4;
/// A polished root must satisfy `|g| ≤ ROOT_TOL·(1 + max|c|)`.
pub const ROOT_TOL: f64 = 1e-7;
const DEDUP_TOL: f64 = 1e-9;
const NEWTON_STEPS: usize = 5;

/// Real roots on (−π, π], ascending, with `|g|` at each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RootSet {
    pub angles: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RootSet {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Highest harmonic whose coefficient is not negligible.
fn effective_order(series: &TrigSeries) -> Option<usize> {
    let max = series.max_abs_coeff();
    if max == 0.0 {
        return None;
    }
    let top = (1..=series.order() as isize)
        .rev()
        .find(|&m| series.coeff(m).norm().max(series.coeff(-m).norm()) > TRIM_TOL * max)
        .unwrap_or(0);
    Some(top as usize)
}

/// All `2M'` roots of `p(z)` for the trimmed order `M'`.
pub fn companion_roots(series: &TrigSeries) -> Result<Vec<Complex64>> {
    let order = effective_order(series).ok_or(Error::FlatDerivative)?;
    if order == 0 {
        return Ok(Vec::new());
    }
    let m = order as isize;
    let lead = series.coeff(m);
    let lower: Vec<Complex64> = (0..2 * order)
        .map(|i| series.coeff(i as isize - m) / lead)
        .collect();
    eigen::monic_roots(&lower)
}

fn newton_polish(series: &TrigSeries, deriv: &TrigSeries, mut x: f64) -> (f64, f64) {
    let mut g = series.eval(x);
    for _ in 0..NEWTON_STEPS {
        let d = deriv.eval(x);
        if d == 0.0 || !d.is_finite() || g == 0.0 {
            break;
        }
        let next = wrap_phase(x - g / d);
        let g_next = series.eval(next);
        if g_next.abs() >= g.abs() {
            break;
        }
        x = next;
        g = g_next;
    }
    (x, g.abs())
}

/// Real roots of the series on (−π, π].
pub fn unit_circle_roots(series: &TrigSeries, radial_tol: f64) -> Result<RootSet> {
    if !(radial_tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "radial tolerance must be positive, got {radial_tol}"
        )));
    }
    let roots = companion_roots(series)?;
    let deriv = series.derivative();
    let accept = ROOT_TOL * (1.0 + series.max_abs_coeff());
    let mut found: Vec<(f64, f64)> = roots
        .iter()
        .filter(|z| (z.norm() - 1.0).abs() <= radial_tol)
        .map(|z| newton_polish(series, &deriv, wrap_phase(z.arg())))
        .filter(|(_, g)| *g <= accept)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut set = RootSet::default();
    for (x, g) in found {
        if let Some(last) = set.angles.last() {
            if (x - last).abs() < DEDUP_TOL {
                let i = set.angles.len() - 1;
                if g < set.residuals[i] {
                    set.angles[i] = x;
                    set.residuals[i] = g;
                }
                continue;
            }
        }
        set.angles.push(x);
        set.residuals.push(g);
    }
    // −π and π are the same point; keep the one stored as π.
    if set.angles.len() > 1 {
        let first = set.angles[0];
        let last = *set.angles.last().unwrap();
        if (first + PI) + (PI - last) < DEDUP_TOL {
            set.angles.remove(0);
            set.residuals.remove(0);
        }
    }
    Ok(set)
}

/// Argmin of the slice over `candidates ∪ {current}`; a candidate replaces
/// `current` only when strictly better. Returns `(value, objective)`.
pub fn best_on_slice(slice: &CoordinateSlice, candidates: &[f64], current: f64) -> (f64, f64) {
    let mut best = (current, slice.objective_at(current));
    for &x in candidates {
        let f = slice.objective_at(x);
        if f < best.1 {
            best = (x, f);
        }
    }
    best
}

/// Selects the root with the smallest concentrated objective for a
/// detached path, keeping `current` unless a root is strictly better.
pub fn best_candidate(
    state: &ResidualState,
    id: PathId,
    coordinate: Coordinate,
    roots: &RootSet,
    current: f64,
) -> Result<f64> {
    if state.is_attached(id)? {
        return Err(Error::PathAttached(id.0));
    }
    let mut phases = state.params(id)?.phases();
    phases.set(coordinate, current);
    let slice = CoordinateSlice::build(state, state.user_of(id)?, &phases, coordinate)?;
    Ok(best_on_slice(&slice, &roots.angles, current).0)
}
