//! Sparse contraction tables and the per-point jet pipeline. Components of a covector
//! `X^a_μ` are stored at `3a + μ`.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::aux::AuxBracket;
use crate::geometry::Metric3;
use crate::jet::{Bilinear, JetSpace, Linear, Poly, Tower};
use crate::lie::LieAlgebra;
use crate::tensor::Tensor3;

#[inline]
pub(crate) fn cv(a: usize, mu: usize) -> usize {
    3 * a + mu
}

#[derive(Clone, Debug)]
pub(crate) struct Kernel {
    pub n: usize,
    pub metric: Metric3,
    pub c: Tensor3,
    pub dub: Tensor3,
    pub zero_b: bool,
    /// `ε_σ^{μν} ∂_μ A_ν` split by μ.
    pub curl: [Linear; 3],
    /// `½ C ε A A` into `F`.
    pub f_quad: Bilinear,
    /// `X(A) K` with `X[(d,τ),(b,ν)] = ε_τ^{νσ} duB^d_{be} A^e_σ`.
    pub x_bil: Bilinear,
    /// `2 ε_μ^{σν} ∂_σ K_ν` split by σ.
    pub e_dk: [Linear; 3],
    pub e_cak: Bilinear,
    pub e_bkk: Bilinear,
    /// `C_{bc}^a A^b_μ ξ^c`.
    pub gv_ca: Bilinear,
    /// `duB^a_{dc} K^d_μ ξ^c`.
    pub gv_bk: Bilinear,
    /// `C_{ed}^c x^e y^d`.
    pub bracket: Bilinear,
    /// `duB^d_{be} x^b y^e` on Lie vectors.
    pub dub_bil: Bilinear,
}

pub(crate) struct KSolve {
    pub k: Poly,
    pub lu: Option<LU<f64, Dyn, Dyn>>,
    pub det: f64,
}

impl Kernel {
    pub fn new(alg: &LieAlgebra, aux: &AuxBracket, metric: &Metric3) -> Option<Self> {
        let n = alg.dim();
        let c = alg.structure().clone();
        let b = aux.upper().clone();
        let dub = aux.mixed()?.clone();
        let eps = metric.cross_nonzeros();
        let cnz = c.nonzeros();
        let bnz = b.nonzeros();
        let dnz = dub.nonzeros();

        let mut curl: [Linear; 3] = Default::default();
        let mut e_dk: [Linear; 3] = Default::default();
        for &(s, m, v, e) in &eps {
            for a in 0..n {
                curl[m].push(cv(a, v), cv(a, s), e);
                // E_μ gets 2 ε_μ^{σν} ∂_σ K_ν: here (s, m, v) plays (μ, σ, ν)
                e_dk[m].push(cv(a, v), cv(a, s), 2.0 * e);
            }
        }
        let mut f_quad = Bilinear::default();
        let mut e_cak = Bilinear::default();
        let mut e_bkk = Bilinear::default();
        let mut x_bil = Bilinear::default();
        for &(s, m, v, e) in &eps {
            for &(bi, ci, a, w) in &cnz {
                f_quad.push(cv(bi, m), cv(ci, v), cv(a, s), 0.5 * w * e);
                e_cak.push(cv(bi, m), cv(ci, v), cv(a, s), 2.0 * w * e);
            }
            for &(bi, ci, a, w) in &bnz {
                e_bkk.push(cv(bi, m), cv(ci, v), cv(a, s), w * e);
            }
            // ε_τ^{νσ}: (s, m, v) = (τ, ν, σ)
            for &(d, bi, ei, w) in &dnz {
                x_bil.push(cv(ei, v), cv(bi, m), cv(d, s), w * e);
            }
        }
        let mut gv_ca = Bilinear::default();
        let mut gv_bk = Bilinear::default();
        let mut bracket = Bilinear::default();
        let mut dub_bil = Bilinear::default();
        for &(bi, ci, a, w) in &cnz {
            bracket.push(bi, ci, a, w);
            for mu in 0..3 {
                gv_ca.push(cv(bi, mu), ci, cv(a, mu), w);
            }
        }
        for &(a, d, ci, w) in &dnz {
            dub_bil.push(d, ci, a, w);
            for mu in 0..3 {
                gv_bk.push(cv(d, mu), ci, cv(a, mu), w);
            }
        }
        Some(Self {
            n,
            metric: metric.clone(),
            c,
            zero_b: b.max_abs() == 0.0,
            dub,
            curl,
            f_quad,
            x_bil,
            e_dk,
            e_cak,
            e_bkk,
            gv_ca,
            gv_bk,
            bracket,
            dub_bil,
        })
    }

    pub fn nc(&self) -> usize {
        3 * self.n
    }

    /// `M = 1 − X(A)` at a point.
    pub fn y_matrix(&self, a: &[f64]) -> DMatrix<f64> {
        let nc = self.nc();
        let mut m = DMatrix::identity(nc, nc);
        for &(x, y, o, w) in &self.x_bil.terms {
            m[(o as usize, y as usize)] -= w * a[x as usize];
        }
        m
    }

    /// `A` and `F` one order down from `a` (order `q`).
    pub fn curvature(&self, tower: &Tower, a: &Poly, q: usize) -> (Poly, Poly) {
        let lower = tower.space(q - 1);
        let da = tower.grad(a, q);
        let at = tower.down(a, q);
        let mut f = Poly::zeros(lower, self.nc());
        for mu in 0..3 {
            self.curl[mu].apply_poly(&da[mu], &mut f);
        }
        self.f_quad.apply_poly(lower, &at, &at, &mut f);
        (at, f)
    }

    /// Graded solve of `(1 − X(A)) K = F` on jets.
    pub fn solve_k(&self, space: &JetSpace, a: &Poly, f: &Poly) -> KSolve {
        if self.zero_b {
            return KSolve {
                k: f.clone(),
                lu: None,
                det: 1.0,
            };
        }
        let lu = self.y_matrix(a.value()).lu();
        let det = lu.determinant();
        let nz = a.nonzero_blocks();
        let mut k = Poly::zeros(space, self.nc());
        for t in 0..space.len() {
            let mut rhs = f.block(t).to_vec();
            for &(i, j, _) in space.products_into(t) {
                if i != 0 && nz[i as usize] {
                    self.x_bil.apply_acc(a.block(i as usize), k.block(j as usize), &mut rhs);
                }
            }
            let sol = lu.solve(&DVector::from_vec(rhs)).unwrap_or_else(|| DVector::from_element(self.nc(), f64::NAN));
            k.block_mut(t).copy_from_slice(sol.as_slice());
        }
        KSolve { k, lu: Some(lu), det }
    }

    pub fn y_solve(&self, lu: &Option<LU<f64, Dyn, Dyn>>, rhs: Vec<f64>) -> Vec<f64> {
        match lu {
            None => rhs,
            Some(lu) => lu
                .solve(&DVector::from_vec(rhs))
                .map(|v| v.as_slice().to_vec())
                .unwrap_or_else(|| vec![f64::NAN; self.nc()]),
        }
    }

    /// `E` from `A`, `K` and `∂K`, all in `space`.
    pub fn field_eq(&self, space: &JetSpace, a: &Poly, k: &Poly, dk: &[Poly; 3]) -> Poly {
        let mut e = Poly::zeros(space, self.nc());
        for s in 0..3 {
            self.e_dk[s].apply_poly(&dk[s], &mut e);
        }
        self.e_cak.apply_poly(space, a, k, &mut e);
        self.e_bkk.apply_poly(space, k, k, &mut e);
        e
    }

    /// `δA = ∂ξ + C A ξ + duB K ξ`, all in `space`.
    pub fn gauge_var(&self, space: &JetSpace, a: &Poly, k: &Poly, xi: &Poly, dxi: &[Poly; 3]) -> Poly {
        let mut out = Poly::zeros(space, self.nc());
        for mu in 0..3 {
            for (src, dst) in dxi[mu].data.chunks(self.n).zip(out.data.chunks_mut(self.nc())) {
                for c in 0..self.n {
                    dst[cv(c, mu)] += src[c];
                }
            }
        }
        self.gv_ca.apply_poly(space, a, xi, &mut out);
        self.gv_bk.apply_poly(space, k, xi, &mut out);
        out
    }

    /// Order-`top` A jet → (A, F, K) one order down and E two orders down.
    pub fn chain(&self, tower: &Tower, a: &Poly, top: usize) -> Chain {
        let (a1, f1) = self.curvature(tower, a, top);
        let ks = self.solve_k(tower.space(top - 1), &a1, &f1);
        let e = (top >= 2).then(|| {
            let dk = tower.grad(&ks.k, top - 1);
            let a2 = tower.down(&a1, top - 1);
            let k2 = tower.down(&ks.k, top - 1);
            self.field_eq(tower.space(top - 2), &a2, &k2, &dk)
        });
        Chain {
            a: a1,
            f: f1,
            k: ks.k,
            lu: ks.lu,
            det: ks.det,
            e,
        }
    }

    /// Pointwise Bianchi-type combination and its largest term.
    pub fn bianchi(&self, a: &[f64], k: &[f64], e: &[f64], dk: [&[f64]; 3]) -> (Vec<f64>, f64) {
        let n = self.n;
        let eta = self.metric.eta_inv;
        let mut div = vec![0.0; n];
        let mut cak = vec![0.0; n];
        let mut bkk = vec![0.0; n];
        let mut bea = vec![0.0; n];
        for mu in 0..3 {
            for a_ in 0..n {
                div[a_] += eta[mu] * dk[mu][cv(a_, mu)];
            }
        }
        for &(bi, ci, a_, w) in &self.c.nonzeros() {
            for mu in 0..3 {
                cak[a_] += eta[mu] * w * a[cv(bi, mu)] * k[cv(ci, mu)];
            }
        }
        for &(a_, d, ci, w) in &self.dub.nonzeros() {
            for mu in 0..3 {
                bkk[a_] += eta[mu] * w * k[cv(d, mu)] * k[cv(ci, mu)];
                bea[a_] -= 0.5 * eta[mu] * w * e[cv(d, mu)] * a[cv(ci, mu)];
            }
        }
        let mut res = vec![0.0; n];
        let mut scale = 0.0f64;
        for a_ in 0..n {
            res[a_] = div[a_] + cak[a_] + bkk[a_] + bea[a_];
            scale = scale.max(div[a_].abs()).max(cak[a_].abs()).max(bkk[a_].abs()).max(bea[a_].abs());
        }
        (res, scale)
    }
}

pub(crate) struct Chain {
    pub a: Poly,
    pub f: Poly,
    pub k: Poly,
    pub lu: Option<LU<f64, Dyn, Dyn>>,
    pub det: f64,
    pub e: Option<Poly>,
}
