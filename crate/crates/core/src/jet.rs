//! Truncated multivariate Taylor polynomials in the three coordinates, optionally
//! extended by `m` nilpotent tangent directions (`t_i t_j = 0`).
//!
//! Nonlinear pointwise quantities are evaluated on these jets, which makes chain-rule
//! derivatives and first variations exact up to rounding.

use std::collections::HashMap;

use crate::geometry::multi_indices;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mono {
    pub x: [u8; 3],
    /// 0 for no tangent, `i` for `t_i`.
    pub t: u16,
}

impl Mono {
    pub fn spatial_degree(&self) -> usize {
        self.x.iter().map(|&a| a as usize).sum()
    }

    pub fn degree(&self) -> usize {
        self.spatial_degree() + usize::from(self.t != 0)
    }
}

#[derive(Clone, Debug)]
pub struct JetSpace {
    order: usize,
    tangents: usize,
    monos: Vec<Mono>,
    index: HashMap<Mono, usize>,
    /// `(i, j, k)` with `mono_i · mono_j = mono_k`, grouped by `k`.
    products: Vec<(u32, u32, u32)>,
    product_start: Vec<usize>,
}

impl JetSpace {
    pub fn new(order: usize, tangents: usize) -> Self {
        let mut monos = Vec::new();
        for alpha in multi_indices(order) {
            for t in 0..=tangents as u16 {
                monos.push(Mono { x: alpha, t });
            }
        }
        // graded by total degree; stable so that spatial ordering is kept inside a grade
        monos.sort_by_key(|m| m.degree());
        let index: HashMap<Mono, usize> = monos.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let mut products = Vec::new();
        let mut product_start = Vec::with_capacity(monos.len() + 1);
        for (k, mk) in monos.iter().enumerate() {
            product_start.push(products.len());
            for (i, mi) in monos.iter().enumerate() {
                if mi.x.iter().zip(&mk.x).any(|(a, b)| a > b) {
                    continue;
                }
                let t = match (mi.t, mk.t) {
                    (0, tk) => tk,
                    (ti, tk) if ti == tk => 0,
                    _ => continue,
                };
                let mj = Mono {
                    x: [mk.x[0] - mi.x[0], mk.x[1] - mi.x[1], mk.x[2] - mi.x[2]],
                    t,
                };
                if let Some(&j) = index.get(&mj) {
                    products.push((i as u32, j as u32, k as u32));
                }
            }
        }
        product_start.push(products.len());
        Self {
            order,
            tangents,
            monos,
            index,
            products,
            product_start,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tangents(&self) -> usize {
        self.tangents
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn mono(&self, i: usize) -> Mono {
        self.monos[i]
    }

    pub fn index_of(&self, m: Mono) -> Option<usize> {
        self.index.get(&m).copied()
    }

    pub fn base(&self, alpha: [u8; 3]) -> Option<usize> {
        self.index_of(Mono { x: alpha, t: 0 })
    }

    pub fn tangent(&self, alpha: [u8; 3], t: usize) -> Option<usize> {
        self.index_of(Mono { x: alpha, t: t as u16 })
    }

    pub fn products(&self) -> &[(u32, u32, u32)] {
        &self.products
    }

    pub fn products_into(&self, k: usize) -> &[(u32, u32, u32)] {
        &self.products[self.product_start[k]..self.product_start[k + 1]]
    }

    /// `(src, dst, factor)` realizing `∂_μ` from this space into `lower`.
    pub fn derivative_map(&self, lower: &JetSpace, mu: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (dst, m) in lower.monos.iter().enumerate() {
            let mut x = m.x;
            x[mu] += 1;
            if let Some(src) = self.index_of(Mono { x, t: m.t }) {
                out.push((src, dst, x[mu] as f64));
            }
        }
        out
    }

    /// `(src, dst)` pairs embedding or truncating into `other`.
    pub fn transfer_map(&self, other: &JetSpace) -> Vec<(usize, usize)> {
        other
            .monos
            .iter()
            .enumerate()
            .filter_map(|(dst, m)| self.index_of(*m).map(|src| (src, dst)))
            .collect()
    }
}

/// Spaces of orders `0..=top` sharing a tangent count, with `∂_μ` and truncation maps
/// from each order to the one below.
#[derive(Clone, Debug)]
pub struct Tower {
    spaces: Vec<JetSpace>,
    deriv: Vec<[Vec<(usize, usize, f64)>; 3]>,
    trunc: Vec<Vec<(usize, usize)>>,
}

impl Tower {
    pub fn new(top: usize, tangents: usize) -> Self {
        let spaces: Vec<JetSpace> = (0..=top).map(|q| JetSpace::new(q, tangents)).collect();
        let mut deriv = vec![[Vec::new(), Vec::new(), Vec::new()]];
        let mut trunc = vec![Vec::new()];
        for q in 1..=top {
            deriv.push(std::array::from_fn(|mu| spaces[q].derivative_map(&spaces[q - 1], mu)));
            trunc.push(spaces[q].transfer_map(&spaces[q - 1]));
        }
        Self { spaces, deriv, trunc }
    }

    pub fn top(&self) -> usize {
        self.spaces.len() - 1
    }

    pub fn space(&self, q: usize) -> &JetSpace {
        &self.spaces[q]
    }

    /// `∂_μ p` for `p` of order `q`, landing in order `q - 1`.
    pub fn grad(&self, p: &Poly, q: usize) -> [Poly; 3] {
        std::array::from_fn(|mu| p.derivative(&self.deriv[q][mu], &self.spaces[q - 1]))
    }

    pub fn down(&self, p: &Poly, q: usize) -> Poly {
        p.transfer(&self.trunc[q], &self.spaces[q - 1])
    }
}

/// Jet of a `ncomp`-vector, stored `[mono][comp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl Poly {
    pub fn zeros(space: &JetSpace, ncomp: usize) -> Self {
        Self {
            ncomp,
            data: vec![0.0; space.len() * ncomp],
        }
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.ncomp;
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn value(&self) -> &[f64] {
        self.block(0)
    }

    pub fn nonzero_blocks(&self) -> Vec<bool> {
        self.data.chunks(self.ncomp).map(|b| b.iter().any(|&v| v != 0.0)).collect()
    }

    pub fn derivative(&self, map: &[(usize, usize, f64)], lower: &JetSpace) -> Poly {
        let mut out = Poly::zeros(lower, self.ncomp);
        for &(src, dst, f) in map {
            for c in 0..self.ncomp {
                out.data[dst * self.ncomp + c] = f * self.data[src * self.ncomp + c];
            }
        }
        out
    }

    pub fn transfer(&self, map: &[(usize, usize)], other: &JetSpace) -> Poly {
        let mut out = Poly::zeros(other, self.ncomp);
        for &(src, dst) in map {
            out.block_mut(dst).copy_from_slice(self.block(src));
        }
        out
    }

    pub fn axpy(&mut self, s: f64, other: &Poly) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }
}

/// Sparse bilinear map `out[o] += Σ coeff · x[i] · y[j]`.
#[derive(Clone, Debug, Default)]
pub struct Bilinear {
    pub terms: Vec<(u16, u16, u16, f64)>,
}

impl Bilinear {
    pub fn push(&mut self, i: usize, j: usize, o: usize, v: f64) {
        if v != 0.0 {
            self.terms.push((i as u16, j as u16, o as u16, v));
        }
    }

    #[inline]
    pub fn apply_acc(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for &(i, j, o, v) in &self.terms {
            out[o as usize] += v * x[i as usize] * y[j as usize];
        }
    }

    /// Jet product accumulated into `out`; all three jets live in `space`.
    pub fn apply_poly(&self, space: &JetSpace, x: &Poly, y: &Poly, out: &mut Poly) {
        if self.terms.is_empty() {
            return;
        }
        let nx = x.nonzero_blocks();
        let ny = y.nonzero_blocks();
        for &(i, j, k) in space.products() {
            let (i, j, k) = (i as usize, j as usize, k as usize);
            if nx[i] && ny[j] {
                let (xs, ys) = (x.block(i), y.block(j));
                let ob = out.block_mut(k);
                self.apply_acc(xs, ys, ob);
            }
        }
    }
}

/// Sparse linear map `out[o] += Σ coeff · x[i]`.
#[derive(Clone, Debug, Default)]
pub struct Linear {
    pub terms: Vec<(u16, u16, f64)>,
}

impl Linear {
    pub fn push(&mut self, i: usize, o: usize, v: f64) {
        if v != 0.0 {
            self.terms.push((i as u16, o as u16, v));
        }
    }

    #[inline]
    pub fn apply_acc(&self, x: &[f64], out: &mut [f64]) {
        for &(i, o, v) in &self.terms {
            out[o as usize] += v * x[i as usize];
        }
    }

    pub fn apply_poly(&self, x: &Poly, out: &mut Poly) {
        let nx = x.ncomp;
        let no = out.ncomp;
        for (xb, ob) in x.data.chunks(nx).zip(out.data.chunks_mut(no)) {
            self.apply_acc(xb, ob);
        }
    }
}
