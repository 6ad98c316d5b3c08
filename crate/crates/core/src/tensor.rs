use std::ops::{Index, IndexMut};

/// Dense cube `t[(i, j, k)]` of side `n`, row-major in `(i, j, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t[(i, j, k)] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Nonzero entries as `(i, j, k, value)`.
    pub fn nonzeros(&self) -> Vec<(usize, usize, usize, f64)> {
        let n = self.n;
        let mut out = Vec::new();
        for (idx, &v) in self.data.iter().enumerate() {
            if v != 0.0 {
                out.push((idx / (n * n), (idx / n) % n, idx % n, v));
            }
        }
        out
    }

    /// Contract the last slot with a matrix: `out[(i,j,l)] = Σ_k t[(i,j,k)] m[(k,l)]`.
    pub fn contract_last(&self, m: &nalgebra::DMatrix<f64>) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let t = self[(i, j, k)];
                    if t == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        out[(i, j, l)] += t * m[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Antisymmetrize in the first two slots.
    pub fn antisymmetrize_front(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in i..n {
                for k in 0..n {
                    if i == j {
                        self[(i, i, k)] = 0.0;
                    } else {
                        let a = 0.5 * (self[(i, j, k)] - self[(j, i, k)]);
                        self[(i, j, k)] = a;
                        self[(j, i, k)] = -a;
                    }
                }
            }
        }
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[(i * self.n + j) * self.n + k]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    #[inline]
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        &mut self.data[(i * self.n + j) * self.n + k]
    }
}
