//! Coarse matched-filter scan used to seed a newly added path.
//!
//! The residual is correlated against the path response on a zero-padded
//! grid of `2Nc × 2Ns × 2Nr` harmonics (three FFT passes per transmit
//! antenna) and `2Nt` transmit phases; the grid cell with the largest
//! projection energy is the starting point.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::model::{wrap_phase, Dims, Phases};
use crate::tensor::Tensor3;

pub(crate) struct BeamspaceScanner {
    dims: Dims,
    grid: [usize; 3],
    chi_grid: usize,
    ffts: [Arc<dyn Fft<f64>>; 3],
}

impl BeamspaceScanner {
    pub(crate) fn new(dims: Dims) -> Self {
        let grid = [2 * dims.nc, 2 * dims.ns, 2 * dims.nr];
        let mut planner = FftPlanner::new();
        let ffts = [
            planner.plan_fft_forward(grid[0]),
            planner.plan_fft_forward(grid[1]),
            planner.plan_fft_forward(grid[2]),
        ];
        BeamspaceScanner {
            dims,
            grid,
            chi_grid: if dims.nt > 1 { 2 * dims.nt } else { 1 },
            ffts,
        }
    }

    /// `Σ_ntu e^{−j(ω₁n + ω₂t + ψu)} conj(x_ntv)·r_ntu` on the padded grid.
    fn transform(&self, residual: &Tensor3, pilot: &Tensor3, v: usize) -> Vec<Complex64> {
        let Dims { nc, ns, nr, .. } = self.dims;
        let [g1, g2, g3] = self.grid;
        let zero = Complex64::new(0.0, 0.0);
        let mut buf = vec![zero; g1 * g2 * g3];
        let at = |i: usize, j: usize, k: usize| (i * g2 + j) * g3 + k;

        for n in 0..nc {
            for t in 0..ns {
                let x = pilot.get(n, t, v).conj();
                if x == zero {
                    continue;
                }
                let row = &mut buf[at(n, t, 0)..at(n, t, 0) + g3];
                for (o, r) in row.iter_mut().zip(residual.fibre(n, t)) {
                    *o = x * r;
                }
                self.ffts[2].process(row);
            }
        }
        debug_assert!(nr <= g3);

        let mut line = vec![zero; g2.max(g1)];
        for n in 0..nc {
            for k in 0..g3 {
                for j in 0..g2 {
                    line[j] = buf[at(n, j, k)];
                }
                self.ffts[1].process(&mut line[..g2]);
                for j in 0..g2 {
                    buf[at(n, j, k)] = line[j];
                }
            }
        }
        for j in 0..g2 {
            for k in 0..g3 {
                for i in 0..g1 {
                    line[i] = buf[at(i, j, k)];
                }
                self.ffts[0].process(&mut line[..g1]);
                for i in 0..g1 {
                    buf[at(i, j, k)] = line[i];
                }
            }
        }
        buf
    }

    /// Grid point maximizing `|⟨α, r⟩|²` for the user's pilots.
    pub(crate) fn scan(&self, residual: &Tensor3, pilot: &Tensor3) -> Phases {
        let nt = self.dims.nt;
        let [g1, g2, g3] = self.grid;
        let spectra: Vec<Vec<Complex64>> = (0..nt)
            .map(|v| self.transform(residual, pilot, v))
            .collect();
        let chis: Vec<f64> = (0..self.chi_grid)
            .map(|q| wrap_phase(2.0 * PI * q as f64 / self.chi_grid as f64))
            .collect();
        let steer: Vec<Vec<Complex64>> = chis
            .iter()
            .map(|chi| {
                (0..nt)
                    .map(|v| Complex64::from_polar(1.0, chi * v as f64))
                    .collect()
            })
            .collect();

        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for cell in 0..g1 * g2 * g3 {
            for (q, s) in steer.iter().enumerate() {
                let p: Complex64 = spectra.iter().zip(s).map(|(z, e)| z[cell] * e).sum();
                let power = p.norm_sqr();
                if power > best.0 {
                    best = (power, cell, q);
                }
            }
        }
        let (_, cell, q) = best;
        let i = cell / (g2 * g3);
        let j = (cell / g3) % g2;
        let k = cell % g3;
        let bin = |idx: usize, len: usize| wrap_phase(2.0 * PI * idx as f64 / len as f64);
        Phases([bin(i, g1), bin(j, g2), bin(k, g3), chis[q]])
    }
}
