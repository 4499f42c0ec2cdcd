//! Banded storage and an in-place LU factorization without pivoting.
//!
//! The matrices produced by the time integrators are `I - γJ` with `J` a
//! diffusion-type Jacobian, which are diagonally dominant in practice.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandedMatrix {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.in_band(i, j));
        i * self.width() + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Column range of row `i` inside the band.
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row_range(i).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    /// Overwrites `self` with `I - gamma * self`.
    pub fn to_identity_minus(&mut self, gamma: f64) {
        for v in self.data.iter_mut() {
            *v *= -gamma;
        }
        for i in 0..self.n {
            self.add(i, i, 1.0);
        }
    }

    /// LU factorization in place (Doolittle, unit lower diagonal).
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, w) = (self.kl, self.width());
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Solver {
                    tau: f64::NAN,
                    message: format!("singular iteration matrix (pivot {pivot} at row {k})"),
                });
            }
            let i_end = (k + kl + 1).min(n);
            let j_end = (k + self.ku + 1).min(n);
            let len = j_end - (k + 1);
            for i in (k + 1)..i_end {
                let ik = i * w + k + kl - i;
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    // row k and row i share the column range k+1..j_end
                    let src = k * w + kl + 1;
                    let dst = ik + 1;
                    let (head, tail) = self.data.split_at_mut(dst);
                    for (d, a) in tail[..len].iter_mut().zip(&head[src..src + len]) {
                        *d -= l * a;
                    }
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    #[allow(clippy::needless_range_loop)]
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(m.kl)..i {
                s -= m.get(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..(i + m.ku + 1).min(n) {
                s -= m.get(i, j) * b[j];
            }
            b[i] = s / m.get(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tridiagonal_solve() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let mut a = BandedMatrix::zeros(3, 1, 1);
        for i in 0..3 {
            a.set(i, i, 2.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
            if i < 2 {
                a.set(i, i + 1, -1.0);
            }
        }
        let lu = a.factorize().unwrap();
        let mut b = vec![1.0, 0.0, 1.0];
        lu.solve_in_place(&mut b);
        for v in b {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_is_an_error() {
        let a = BandedMatrix::zeros(2, 1, 1);
        assert!(a.factorize().is_err());
    }

    proptest! {
        #[test]
        fn diagonally_dominant_round_trip(
            kl in 0usize..4, ku in 0usize..4, n in 1usize..30, seed in any::<u64>()
        ) {
            let mut state = seed | 1;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 2000) as f64 / 1000.0 - 1.0
            };
            let mut a = BandedMatrix::zeros(n, kl, ku);
            for i in 0..n {
                for j in a.row_range(i) {
                    a.set(i, j, next());
                }
                a.set(i, i, (kl + ku + 2) as f64);
            }
            let x: Vec<f64> = (0..n).map(|_| next()).collect();
            let mut b = vec![0.0; n];
            a.mul_vec(&x, &mut b);
            let lu = a.clone().factorize().unwrap();
            lu.solve_in_place(&mut b);
            for (u, v) in b.iter().zip(&x) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
