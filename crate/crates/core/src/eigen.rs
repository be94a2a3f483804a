//! Eigenvalues of complex upper-Hessenberg matrices.
//!
//! Diagonal balancing followed by the single-shift complex QR iteration with
//! Wilkinson shifts and Givens rotations, eigenvalues only.

use num_complex::Complex64;

use crate::{Error, Result};

/// Dense row-major square matrix.
#[derive(Clone, Debug)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }

    /// Frobenius companion matrix of the monic polynomial
    /// `z^n + a_{n−1} z^{n−1} + … + a_0`, given `a_0 … a_{n−1}`.
    pub fn companion(lower: &[Complex64]) -> Self {
        let n = lower.len();
        let mut m = SquareMatrix::zeros(n);
        for i in 1..n {
            m.set(i, i - 1, Complex64::new(1.0, 0.0));
        }
        for (i, a) in lower.iter().enumerate() {
            m.set(i, n - 1, -a);
        }
        m
    }
}

#[inline]
fn l1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Parlett–Reinsch balancing by powers of two; a similarity transform, so
/// eigenvalues are unchanged and the Hessenberg pattern is preserved.
pub fn balance(m: &mut SquareMatrix) {
    const RADIX: f64 = 2.0;
    let n = m.n;
    loop {
        let mut converged = true;
        for i in 0..n {
            let mut col = 0.0;
            let mut row = 0.0;
            for j in 0..n {
                if j != i {
                    col += l1(m.get(j, i));
                    row += l1(m.get(i, j));
                }
            }
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let total = col + row;
            let mut f = 1.0;
            let mut g = row / RADIX;
            while col < g {
                f *= RADIX;
                col *= RADIX * RADIX;
            }
            g = row * RADIX;
            while col > g {
                f /= RADIX;
                col /= RADIX * RADIX;
            }
            if (col + row) / f < 0.95 * total {
                converged = false;
                let inv = 1.0 / f;
                for j in 0..n {
                    *m.at(i, j) *= inv;
                    *m.at(j, i) *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
}

/// Eigenvalues of an upper-Hessenberg matrix (entries below the first
/// subdiagonal are ignored).
pub fn hessenberg_eigenvalues(mut h: SquareMatrix) -> Result<Vec<Complex64>> {
    let n = h.n;
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(eig);
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let mut rots: Vec<(f64, Complex64)> = Vec::with_capacity(n);
    loop {
        if hi == 0 {
            eig[0] = h.get(0, 0);
            break;
        }
        // Locate the start of the unreduced block ending at `hi`.
        let mut lo = hi;
        while lo > 0 {
            let s = l1(h.get(lo - 1, lo - 1)) + l1(h.get(lo, lo));
            if l1(h.get(lo, lo - 1)) <= f64::EPSILON * s {
                h.set(lo, lo - 1, zero);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            eig[hi] = h.get(hi, hi);
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > 60 * n {
            return Err(Error::EigenNoConvergence { order: n });
        }

        let shift = if iter % 10 == 0 {
            // Exceptional shift to break cycles.
            let sub = h.get(hi, hi - 1).re.abs()
                + if hi >= 2 { h.get(hi - 1, hi - 2).re.abs() } else { 0.0 };
            h.get(hi, hi) + Complex64::new(sub, 0.0)
        } else {
            let a = h.get(hi - 1, hi - 1);
            let b = h.get(hi - 1, hi);
            let c = h.get(hi, hi - 1);
            let d = h.get(hi, hi);
            let half = (a - d) * 0.5;
            let disc = (half * half + b * c).sqrt();
            let mid = (a + d) * 0.5;
            let (m1, m2) = (mid + disc, mid - disc);
            if (m1 - d).norm() < (m2 - d).norm() {
                m1
            } else {
                m2
            }
        };

        for k in lo..=hi {
            *h.at(k, k) -= shift;
        }
        rots.clear();
        for k in lo..hi {
            let a = h.get(k, k);
            let b = h.get(k + 1, k);
            let na = a.norm();
            let rho = na.hypot(b.norm());
            let (c, s) = if rho == 0.0 {
                (1.0, zero)
            } else if na == 0.0 {
                (0.0, b.conj() / b.norm())
            } else {
                (na / rho, (a / na) * b.conj() / rho)
            };
            let (row_k, row_k1) = {
                let (top, bottom) = h.data.split_at_mut((k + 1) * n);
                (&mut top[k * n..], &mut bottom[..n])
            };
            for j in k..=hi {
                let x = row_k[j];
                let y = row_k1[j];
                row_k[j] = x * c + s * y;
                row_k1[j] = y * c - s.conj() * x;
            }
            rots.push((c, s));
        }
        for (idx, k) in (lo..hi).enumerate() {
            let (c, s) = rots[idx];
            let sc = s.conj();
            let last = (k + 2).min(hi);
            for i in lo..=last {
                let p = h.get(i, k);
                let q = h.get(i, k + 1);
                h.set(i, k, p * c + q * sc);
                h.set(i, k + 1, q * c - p * s);
            }
        }
        for k in lo..=hi {
            *h.at(k, k) += shift;
        }
    }
    Ok(eig)
}

/// Roots of the monic polynomial with lower coefficients `a_0 … a_{n−1}`.
pub fn monic_roots(lower: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut m = SquareMatrix::companion(lower);
    balance(&mut m);
    hessenberg_eigenvalues(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (z − 1)(z + 2)(z − j) = z³ + (1 − j)z² + (−2 − j)z + 2j
        let mut r = monic_roots(&[c(0.0, 2.0), c(-2.0, -1.0), c(1.0, -1.0)]).unwrap();
        r.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let expect = [c(-2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)];
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn random_polynomials_have_small_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1usize, 2, 5, 17, 60] {
            let a: Vec<Complex64> = (0..n)
                .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let roots = monic_roots(&a).unwrap();
            assert_eq!(roots.len(), n);
            for z in roots {
                let mut p = c(1.0, 0.0);
                for ai in a.iter().rev() {
                    p = p * z + ai;
                }
                let scale: f64 = (0..=n).map(|k| z.norm().powi(k as i32)).sum();
                assert!(p.norm() <= 1e-11 * scale, "n={n} residual {}", p.norm());
            }
        }
    }

    #[test]
    fn balancing_preserves_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<Complex64> = (0..12)
            .map(|i| c(rng.gen_range(-1.0..1.0) * 10f64.powi(i - 6), 0.3))
            .collect();
        let m = SquareMatrix::companion(&a);
        let mut b = m.clone();
        balance(&mut b);
        let tr = |m: &SquareMatrix| (0..m.order()).map(|i| m.get(i, i)).sum::<Complex64>();
        assert!((tr(&m) - tr(&b)).norm() < 1e-12);
    }
}
