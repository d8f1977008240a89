//! Banded LU factorization without pivoting.
//!
//! Used for the per-size blocks of the neutral recursion, whose matrices are
//! strictly column diagonally dominant, so elimination needs no pivoting and
//! keeps the band.

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot {
    pub row: usize,
    pub condition_estimate: f64,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factors in place and solves `A x = b`, returning the pivot-ratio
    /// condition estimate alongside `x`.
    pub fn solve(mut self, b: &[f64]) -> Result<(Vec<f64>, f64), ZeroPivot> {
        let n = self.n;
        let mut max_pivot: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            max_pivot = max_pivot.max(pivot.abs());
            min_pivot = min_pivot.min(pivot.abs());
            if !(pivot.abs() > f64::EPSILON * max_pivot) || !pivot.is_finite() {
                return Err(ZeroPivot { row: k, condition_estimate: f64::INFINITY });
            }
            let row_end = (k + self.ku).min(n - 1);
            for i in k + 1..=(k + self.kl).min(n - 1) {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                self.data[s] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=row_end {
                    let a = self.data[self.slot(k, j)];
                    let t = self.slot(i, j);
                    self.data[t] -= l * a;
                }
            }
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut acc = x[i];
            for j in lo..i {
                acc -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku).min(n - 1);
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = acc / self.data[self.slot(i, i)];
        }
        Ok((x, max_pivot / min_pivot))
    }
}
