use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::kernel::{cv, Kernel};
use super::{load_jets, pairing_density, FieldError, GaugeConfig};
use crate::aux::Provenance;
use crate::jet::{Bilinear, JetSpace, Poly, Tower};
use crate::lie::{ad_matrix, LieAlgebra, LieError, LieVector};

/// `Σ_{k<terms} M^k / k!`.
pub fn exp_series(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    let mut t = out.clone();
    for j in 1..terms {
        t = &t * m / j as f64;
        out += &t;
    }
    out
}

/// `Σ_{k<terms} M^k / (k+1)!`.
pub fn dexp_series(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    let mut t = out.clone();
    for j in 1..terms {
        t = &t * m / (j + 1) as f64;
        out += &t;
    }
    out
}

fn is_su2(alg: &LieAlgebra) -> bool {
    let c = alg.structure();
    alg.dim() == 3
        && (0..3).all(|a| (0..3).all(|b| (0..3).all(|d| c[(a, b, d)] == crate::lie::levi_civita(a, b, d))))
}

/// Closed forms `R = 1 + sin|ξ| ad_ξ̂ − (1 − cos|ξ|) P⊥` and
/// `R′ = 1 + (1 − cos|ξ|)/|ξ| ad_ξ̂ − (1 − sin|ξ|/|ξ|) P⊥` on su2, with `ad_ξ y = [y, ξ]`.
pub fn rotation_ops(alg: &LieAlgebra, xi: &LieVector) -> Result<(DMatrix<f64>, DMatrix<f64>), LieError> {
    alg.check(xi)?;
    let th = xi.norm();
    let ad = ad_matrix(alg, xi)?;
    let ad2 = &ad * &ad;
    // coefficients of ad and ad² (ad² = −|ξ|² P⊥ on su2)
    let (a1, a2, b1, b2) = if th < 1e-4 {
        let t2 = th * th;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = th.sin_cos();
        (s / th, (1.0 - c) / (th * th), (1.0 - c) / (th * th), (1.0 - s / th) / (th * th))
    };
    let id = DMatrix::identity(alg.dim(), alg.dim());
    let r = &id + &ad * a1 + &ad2 * a2;
    let rp = &id + &ad * b1 + &ad2 * b2;
    Ok((r, rp))
}

#[derive(Clone, Debug)]
pub struct CompositionReport {
    /// `‖R_{tξ2} R_{ξ1} − R_{ξ3(t)}‖∞` with `ξ3 = ξ1 + R′⁻¹_{ξ1} t ξ2`.
    pub residual: f64,
    /// Same with the left product `R_{ξ1} R_{tξ2}`.
    pub left_residual: f64,
}

pub fn composition_check(alg: &LieAlgebra, xi1: &LieVector, xi2: &LieVector, t: f64) -> Result<CompositionReport, LieError> {
    let (r1, rp1) = rotation_ops(alg, xi1)?;
    let (r2, _) = rotation_ops(alg, &(xi2 * t))?;
    let step = rp1
        .clone()
        .lu()
        .solve(&(xi2 * t))
        .unwrap_or_else(|| DVector::from_element(alg.dim(), f64::NAN));
    let (r3, _) = rotation_ops(alg, &(xi1 + step))?;
    Ok(CompositionReport {
        residual: (&r2 * &r1 - &r3).amax(),
        left_residual: (&r1 * &r2 - &r3).amax(),
    })
}

/// Observed order in `t` of both composition residuals from `t0` and `t0/2`.
pub fn composition_order(alg: &LieAlgebra, xi1: &LieVector, xi2: &LieVector, t0: f64) -> Result<(f64, f64), LieError> {
    let a = composition_check(alg, xi1, xi2, t0)?;
    let b = composition_check(alg, xi1, xi2, 0.5 * t0)?;
    Ok(((a.residual / b.residual).log2(), (a.left_residual / b.left_residual).log2()))
}

struct Su2Data {
    v: LieVector,
    scalar_times: Bilinear,
}

fn su2_data(cfg: &GaugeConfig) -> Result<Su2Data, FieldError> {
    if !is_su2(cfg.alg()) {
        return Err(FieldError::Unsupported("finite transformations are implemented for su2".into()));
    }
    let v = match cfg.aux().provenance() {
        Provenance::Su2V(v) => v.clone(),
        _ if cfg.aux().is_zero() => DVector::zeros(3),
        _ => return Err(FieldError::Unsupported("finite transformations need the su2 builder bracket".into())),
    };
    let mut scalar_times = Bilinear::default();
    for c in 0..3 {
        scalar_times.push(0, c, c, 1.0);
    }
    Ok(Su2Data { v, scalar_times })
}

/// `Σ_k coeff(k) ad_ξ^k x` on jets; `x` has `n` (scalar) or `3n` (covector) components.
fn ad_series(kern: &Kernel, space: &JetSpace, x: &Poly, xi: &Poly, coeff: impl Fn(usize) -> f64, terms: usize) -> Poly {
    let bil = if x.ncomp == kern.n { &kern.bracket } else { &kern.gv_ca };
    let mut out = x.clone();
    let mut t = x.clone();
    for k in 1..terms {
        let mut next = Poly::zeros(space, x.ncomp);
        bil.apply_poly(space, &t, xi, &mut next);
        t = next;
        out.axpy(coeff(k), &t);
    }
    out
}

const SERIES_TERMS: usize = 40;

fn inv_fact(k: usize) -> f64 {
    1.0 / (1..=k).map(|x| x as f64).product::<f64>()
}

/// Order-1 jet of the transformed potential at grid point `p`.
fn transformed_point(cfg: &GaugeConfig, d: &Su2Data, tower: &Tower, xj: &crate::geometry::JetField, p: usize) -> Result<Poly, FieldError> {
    let kern = cfg.kernel();
    let s1 = tower.space(1);
    let a = cfg.a_poly(tower.space(2), p);
    let ch = kern.chain(tower, &a, 2);
    cfg.check_det(ch.det)?;
    let mut x2 = Poly::zeros(tower.space(2), 3);
    load_jets(tower.space(2), xj, p, &mut x2, 0);
    let xi = tower.down(&x2, 2);
    let dxi = tower.grad(&x2, 2);

    let r_of = |x: &Poly| ad_series(kern, s1, x, &xi, inv_fact, SERIES_TERMS);
    let rp_of = |x: &Poly| ad_series(kern, s1, x, &xi, |k| inv_fact(k + 1), SERIES_TERMS);

    let mut out = r_of(&ch.a);
    let mut dxi_cov = Poly::zeros(s1, 9);
    for mu in 0..3 {
        for (src, dst) in dxi[mu].data.chunks(3).zip(dxi_cov.data.chunks_mut(9)) {
            for c in 0..3 {
                dst[cv(c, mu)] = src[c];
            }
        }
    }
    out.axpy(1.0, &rp_of(&dxi_cov));

    let mut vpoly = Poly::zeros(s1, 3);
    vpoly.block_mut(0).copy_from_slice(d.v.as_slice());
    let rpv = rp_of(&vpoly);
    let rpk = rp_of(&ch.k);
    for mu in 0..3 {
        // (R′K_μ, v) and (K_μ, ξ) as scalar jets, Killing form δ on su2
        let mut s_rkv = Poly::zeros(s1, 1);
        let mut s_kxi = Poly::zeros(s1, 1);
        let mut dot_v = Bilinear::default();
        let mut dot_x = Bilinear::default();
        for c in 0..3 {
            dot_v.push(cv(c, mu), c, 0, 1.0);
            dot_x.push(cv(c, mu), c, 0, 1.0);
        }
        dot_v.apply_poly(s1, &rpk, &vpoly, &mut s_rkv);
        dot_x.apply_poly(s1, &ch.k, &xi, &mut s_kxi);
        let mut t1 = Poly::zeros(s1, 3);
        d.scalar_times.apply_poly(s1, &s_rkv, &xi, &mut t1);
        let mut t2 = Poly::zeros(s1, 3);
        d.scalar_times.apply_poly(s1, &s_kxi, &rpv, &mut t2);
        for (blk, (x1, x2)) in out.data.chunks_mut(9).zip(t1.data.chunks(3).zip(t2.data.chunks(3))) {
            for c in 0..3 {
                blk[cv(c, mu)] += x1[c] - x2[c];
            }
        }
    }
    Ok(out)
}

fn transformed_jets(cfg: &GaugeConfig, xi: &[f64]) -> Result<Vec<Poly>, FieldError> {
    cfg.require_spectral("finite_gauge_su2")?;
    let d = su2_data(cfg)?;
    let xj = cfg.scalar_jets(xi, 2)?;
    let tower = Tower::new(2, 0);
    (0..cfg.points())
        .into_par_iter()
        .map(|p| transformed_point(cfg, &d, &tower, &xj, p))
        .collect()
}

/// `A → R_ξ A + R′_ξ ∂ξ + (R′_ξ K, v) ξ − (K, ξ) R′_ξ v` pointwise (su2, builder bracket).
pub fn finite_gauge_su2(cfg: &GaugeConfig, xi: &[f64]) -> Result<GaugeConfig, FieldError> {
    let jets = transformed_jets(cfg, xi)?;
    let samples: Vec<f64> = jets.iter().flat_map(|j| j.value().to_vec()).collect();
    cfg.with_samples(samples)
}

/// Action of the transformed potential evaluated from its exact first-order jets.
pub fn transformed_action(cfg: &GaugeConfig, xi: &[f64]) -> Result<f64, FieldError> {
    let jets = transformed_jets(cfg, xi)?;
    let tower = Tower::new(1, 0);
    let kern = cfg.kernel();
    let mut k = Vec::with_capacity(cfg.points() * 9);
    let mut f = Vec::with_capacity(cfg.points() * 9);
    for a in &jets {
        let (at, fp) = kern.curvature(&tower, a, 1);
        let ks = kern.solve_k(tower.space(0), &at, &fp);
        cfg.check_det(ks.det)?;
        k.extend(ks.k.data);
        f.extend(fp.data);
    }
    Ok(cfg.lattice().integrate(&pairing_density(cfg, &k, &f)))
}
