//! Finite-dimensional real Lie algebras given by structure constants.
//!
//! Conventions: `c[(b, c, a)] = C_{bc}^a`, so `[e_b, e_c] = C_{bc}^a e_a`. The Killing
//! metric is `k_ab = -½ C_{ad}^e C_{be}^d`, which gives `k = δ` on su2 with `C = ε`.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::tensor::Tensor3;

pub type LieVector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("unknown algebra label `{0}`")]
    UnknownLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("algebra `{0}` has no pair of independent commuting directions")]
    RankTooLow(String),
}

/// One summand of a direct sum, with a basis of commuting directions in local coordinates.
#[derive(Clone, Debug)]
pub struct Factor {
    pub label: String,
    pub offset: usize,
    pub dim: usize,
    pub abelian: bool,
    pub cartan: Vec<LieVector>,
}

#[derive(Clone, Debug)]
pub struct LieAlgebra {
    label: String,
    c: Tensor3,
    k: DMatrix<f64>,
    k_inv: Option<DMatrix<f64>>,
    factors: Vec<Factor>,
}

impl LieAlgebra {
    /// Build from raw structure constants; they are antisymmetrized in the first two slots.
    pub fn from_structure(label: impl Into<String>, mut c: Tensor3) -> Self {
        c.antisymmetrize_front();
        let label = label.into();
        let dim = c.dim();
        let abelian = c.max_abs() == 0.0;
        let factor = Factor {
            label: label.clone(),
            offset: 0,
            dim,
            abelian,
            cartan: Vec::new(),
        };
        Self::assemble(label, c, vec![factor])
    }

    fn assemble(label: String, c: Tensor3, factors: Vec<Factor>) -> Self {
        let k = killing_from_structure(&c);
        let k_inv = invert_if_nondegenerate(&k);
        Self {
            label,
            c,
            k,
            k_inv,
            factors,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn structure(&self) -> &Tensor3 {
        &self.c
    }

    pub fn killing(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn killing_inv(&self) -> Option<&DMatrix<f64>> {
        self.k_inv.as_ref()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_semisimple(&self) -> bool {
        self.k_inv.is_some()
    }

    pub fn check(&self, x: &LieVector) -> Result<(), LieError> {
        if x.len() != self.dim() {
            return Err(LieError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `[x, y]^a = C_{bc}^a x^b y^c` without dimension checks.
    pub fn bracket_raw(&self, x: &[f64], y: &[f64]) -> LieVector {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for b in 0..n {
            if x[b] == 0.0 {
                continue;
            }
            for c in 0..n {
                let xy = x[b] * y[c];
                if xy == 0.0 {
                    continue;
                }
                for a in 0..n {
                    out[a] += self.c[(b, c, a)] * xy;
                }
            }
        }
        out
    }

    /// Killing inner product `(x, y) = k_ab x^a y^b`.
    pub fn inner(&self, x: &LieVector, y: &LieVector) -> f64 {
        (x.transpose() * &self.k * y)[(0, 0)]
    }

    pub fn lower(&self, x: &LieVector) -> LieVector {
        &self.k * x
    }

    pub fn basis_vector(&self, i: usize) -> LieVector {
        let mut e = DVector::zeros(self.dim());
        e[i] = 1.0;
        e
    }
}

fn invert_if_nondegenerate(k: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = k.nrows();
    if n == 0 {
        return None;
    }
    let sv = k.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 || min <= 1e-10 * max {
        return None;
    }
    let inv = k.clone().try_inverse()?;
    Some((&inv + inv.transpose()) * 0.5)
}

/// `k_ab = -½ C_{ad}^e C_{be}^d`.
pub fn killing_from_structure(c: &Tensor3) -> DMatrix<f64> {
    let n = c.dim();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for d in 0..n {
                for e in 0..n {
                    s += c[(a, d, e)] * c[(b, e, d)];
                }
            }
            k[(a, b)] = -0.5 * s;
        }
    }
    k
}

/// Max-abs of the fully antisymmetrized `C_{bc}^e C_{de}^a` over `(b, c, d)`.
pub fn jacobi_residual(c: &Tensor3) -> f64 {
    let n = c.dim();
    // t[(b,c,d), a] = C_{bc}^e C_{de}^a
    let mut t = vec![0.0; n * n * n * n];
    let at = |b: usize, c2: usize, d: usize, a: usize| ((b * n + c2) * n + d) * n + a;
    for b in 0..n {
        for c2 in 0..n {
            for e in 0..n {
                let x = c[(b, c2, e)];
                if x == 0.0 {
                    continue;
                }
                for d in 0..n {
                    for a in 0..n {
                        t[at(b, c2, d, a)] += x * c[(d, e, a)];
                    }
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for c2 in 0..n {
            for d in 0..n {
                for a in 0..n {
                    let s = t[at(b, c2, d, a)] + t[at(c2, d, b, a)] + t[at(d, b, c2, a)]
                        - t[at(c2, b, d, a)]
                        - t[at(b, d, c2, a)]
                        - t[at(d, c2, b, a)];
                    worst = worst.max((s / 6.0).abs());
                }
            }
        }
    }
    worst
}

pub fn bracket(alg: &LieAlgebra, x: &LieVector, y: &LieVector) -> Result<LieVector, LieError> {
    alg.check(x)?;
    alg.check(y)?;
    Ok(alg.bracket_raw(x.as_slice(), y.as_slice()))
}

/// `(ad_x)^a_c = C_{cb}^a x^b`, so that `ad_x y = [y, x]`.
pub fn ad_matrix(alg: &LieAlgebra, x: &LieVector) -> Result<DMatrix<f64>, LieError> {
    alg.check(x)?;
    let n = alg.dim();
    let c = alg.structure();
    Ok(DMatrix::from_fn(n, n, |a, col| {
        (0..n).map(|b| c[(col, b, a)] * x[b]).sum()
    }))
}

/// Two commuting, Killing-orthogonal, unit-norm directions.
pub fn commuting_pair(alg: &LieAlgebra) -> Result<(LieVector, LieVector), LieError> {
    let n = alg.dim();
    let embed = |f: &Factor, h: &LieVector| {
        let mut x = DVector::zeros(n);
        x.rows_mut(f.offset, f.dim).copy_from(h);
        x
    };
    let nonabelian: Vec<&Factor> = alg.factors.iter().filter(|f| !f.abelian).collect();
    let (u, v) = if let Some(f) = nonabelian.iter().find(|f| f.cartan.len() >= 2) {
        (embed(f, &f.cartan[0]), embed(f, &f.cartan[1]))
    } else if nonabelian.len() >= 2 && !nonabelian[0].cartan.is_empty() && !nonabelian[1].cartan.is_empty() {
        (
            embed(nonabelian[0], &nonabelian[0].cartan[0]),
            embed(nonabelian[1], &nonabelian[1].cartan[0]),
        )
    } else {
        return Err(LieError::RankTooLow(alg.label.clone()));
    };
    Ok((normalize(alg, u), normalize(alg, v)))
}

fn normalize(alg: &LieAlgebra, x: LieVector) -> LieVector {
    let norm = alg.inner(&x, &x);
    if norm > 0.0 {
        x / norm.sqrt()
    } else {
        x
    }
}

/// Block-diagonal sum; `k` is block diagonal because cross brackets vanish.
pub fn direct_sum(a: &LieAlgebra, b: &LieAlgebra) -> LieAlgebra {
    let (na, nb) = (a.dim(), b.dim());
    let n = na + nb;
    let mut c = Tensor3::zeros(n);
    for (i, j, k, v) in a.c.nonzeros() {
        c[(i, j, k)] = v;
    }
    for (i, j, k, v) in b.c.nonzeros() {
        c[(i + na, j + na, k + na)] = v;
    }
    let mut factors = a.factors.clone();
    factors.extend(b.factors.iter().cloned().map(|mut f| {
        f.offset += na;
        f
    }));
    LieAlgebra::assemble(format!("direct_sum({},{})", a.label, b.label), c, factors)
}

pub fn builtin_algebra(label: &str) -> Result<LieAlgebra, LieError> {
    let s: String = label.chars().filter(|c| !c.is_whitespace()).collect();
    let unknown = || LieError::UnknownLabel(label.to_string());
    if let Some(inner) = s.strip_prefix("direct_sum(").and_then(|r| r.strip_suffix(')')) {
        let (left, right) = split_top_level(inner).ok_or_else(unknown)?;
        return Ok(direct_sum(&builtin_algebra(left)?, &builtin_algebra(right)?));
    }
    if let Some(inner) = s.strip_prefix("abelian(").and_then(|r| r.strip_suffix(')')) {
        let n: usize = inner.parse().map_err(|_| unknown())?;
        if n == 0 {
            return Err(unknown());
        }
        let mut alg = LieAlgebra::from_structure(format!("abelian({n})"), Tensor3::zeros(n));
        alg.factors[0].cartan = Vec::new();
        return Ok(alg);
    }
    if let Some(num) = s.strip_prefix("su") {
        let n: usize = num.parse().map_err(|_| unknown())?;
        return match n {
            2 => Ok(su2()),
            3..=8 => Ok(special_unitary(n)),
            _ => Err(unknown()),
        };
    }
    if let Some(num) = s.strip_prefix("so") {
        let n: usize = num.parse().map_err(|_| unknown())?;
        return match n {
            3..=8 => Ok(special_orthogonal(n)),
            _ => Err(unknown()),
        };
    }
    Err(unknown())
}

fn split_top_level(s: &str) -> Option<(&str, &str)> {
    let mut depth = 0i32;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some((&s[..i], &s[i + 1..])),
            _ => {}
        }
    }
    None
}

/// su2 with `C_{bc}^a = ε_{bca}`, `ε_123 = +1`.
pub fn su2() -> LieAlgebra {
    let c = Tensor3::from_fn(3, levi_civita);
    let factor = Factor {
        label: "su2".into(),
        offset: 0,
        dim: 3,
        abelian: false,
        cartan: vec![DVector::from_vec(vec![0.0, 0.0, 1.0])],
    };
    LieAlgebra::assemble("su2".into(), c, vec![factor])
}

pub(crate) fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    if i == j || j == k || i == k {
        0.0
    } else if (i, j, k) == (0, 1, 2) || (i, j, k) == (1, 2, 0) || (i, j, k) == (2, 0, 1) {
        1.0
    } else {
        -1.0
    }
}

type CMat = DMatrix<Complex<f64>>;

/// Basis `e_a = -i λ_a / 2` with generalized Gell-Mann matrices: for each `j < k` the
/// symmetric then the antisymmetric off-diagonal generator, then the diagonal ones.
fn special_unitary(n: usize) -> LieAlgebra {
    let zero = Complex::new(0.0, 0.0);
    let mut gens: Vec<CMat> = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let mut m = CMat::from_element(n, n, zero);
            m[(j, k)] = Complex::new(1.0, 0.0);
            m[(k, j)] = Complex::new(1.0, 0.0);
            gens.push(m);
            let mut m = CMat::from_element(n, n, zero);
            m[(j, k)] = Complex::new(0.0, -1.0);
            m[(k, j)] = Complex::new(0.0, 1.0);
            gens.push(m);
        }
    }
    for l in 1..n {
        let mut m = CMat::from_element(n, n, zero);
        let s = (2.0 / (l * (l + 1)) as f64).sqrt();
        for j in 0..l {
            m[(j, j)] = Complex::new(s, 0.0);
        }
        m[(l, l)] = Complex::new(-(l as f64) * s, 0.0);
        gens.push(m);
    }
    let basis: Vec<CMat> = gens.iter().map(|g| g * Complex::new(0.0, -0.5)).collect();
    let dim = basis.len();
    let mut c = Tensor3::zeros(dim);
    for b in 0..dim {
        for cc in 0..dim {
            let x = &basis[b] * &basis[cc] - &basis[cc] * &basis[b];
            for a in 0..dim {
                c[(b, cc, a)] = (-2.0 * (&basis[a] * &x).trace()).re;
            }
        }
    }
    let cartan = (0..n - 1)
        .map(|i| {
            let mut h = DVector::zeros(dim);
            h[dim - (n - 1) + i] = 1.0;
            h
        })
        .collect();
    let label = format!("su{n}");
    let mut alg = LieAlgebra::from_structure(label, c);
    alg.factors[0].cartan = cartan;
    alg
}

/// Basis `L_ij = E_ij - E_ji` for `i < j` in lexicographic order.
fn special_orthogonal(n: usize) -> LieAlgebra {
    let idx: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let dim = idx.len();
    let basis: Vec<DMatrix<f64>> = idx
        .iter()
        .map(|&(i, j)| {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = 1.0;
            m[(j, i)] = -1.0;
            m
        })
        .collect();
    let mut c = Tensor3::zeros(dim);
    for b in 0..dim {
        for cc in 0..dim {
            let x = &basis[b] * &basis[cc] - &basis[cc] * &basis[b];
            for (a, &(i, j)) in idx.iter().enumerate() {
                c[(b, cc, a)] = x[(i, j)];
            }
        }
    }
    let pos = |i: usize, j: usize| idx.iter().position(|&p| p == (i, j)).unwrap();
    let unit = |i: usize| {
        let mut h = DVector::zeros(dim);
        h[i] = 1.0;
        h
    };
    let cartan: Vec<LieVector> = if n == 4 {
        // one direction in each su2 ideal
        let (l12, l34) = (unit(pos(0, 1)), unit(pos(2, 3)));
        vec![&l12 + &l34, &l12 - &l34]
    } else {
        (0..n / 2).map(|m| unit(pos(2 * m, 2 * m + 1))).collect()
    };
    let mut alg = LieAlgebra::from_structure(format!("so{n}"), c);
    alg.factors[0].cartan = cartan;
    alg
}
