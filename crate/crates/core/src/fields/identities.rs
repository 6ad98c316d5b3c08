use rayon::prelude::*;

use super::kernel::{cv, Kernel};
use super::{fields_ke, gauge_variation, load_jets, max_abs, max_point_norm, pairing, FieldError, GaugeConfig};
use crate::geometry::DerivMode;
use crate::jet::{JetSpace, Mono, Poly, Tower};
use crate::report::ResidualReport;

/// Put `base + t·tan` (both without tangents) into a space with one tangent.
pub(crate) fn with_tangent(src: &JetSpace, dst: &JetSpace, base: &Poly, tan: Option<&Poly>) -> Poly {
    let mut out = Poly::zeros(dst, base.ncomp);
    for i in 0..src.len() {
        let m = src.mono(i);
        if let Some(j) = dst.index_of(Mono { x: m.x, t: 0 }) {
            out.block_mut(j).copy_from_slice(base.block(i));
        }
        if let Some(tan) = tan {
            if let Some(j) = dst.index_of(Mono { x: m.x, t: 1 }) {
                out.block_mut(j).copy_from_slice(tan.block(i));
            }
        }
    }
    out
}

/// `w[(b,ν)] = duB^b_{ce} E^c_ν ξ^e`.
pub(crate) fn dub_e_xi(kern: &Kernel, e: &[f64], xi: &[f64]) -> Vec<f64> {
    let n = kern.n;
    let mut w = vec![0.0; 3 * n];
    let mut ev = vec![0.0; n];
    for nu in 0..3 {
        for c in 0..n {
            ev[c] = e[cv(c, nu)];
        }
        let mut out = vec![0.0; n];
        kern.dub_bil.apply_acc(&ev, xi, &mut out);
        for b in 0..n {
            w[cv(b, nu)] = out[b];
        }
    }
    w
}

/// Per-point data shared by the variation identities.
struct Stage1 {
    a1: Poly,
    k1: Poly,
    e0: Vec<f64>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

fn stage1(cfg: &GaugeConfig, tower: &Tower, p: usize) -> Result<Stage1, FieldError> {
    let a = cfg.a_poly(tower.space(2), p);
    let ch = cfg.kernel().chain(tower, &a, 2);
    cfg.check_det(ch.det)?;
    Ok(Stage1 {
        a1: ch.a,
        k1: ch.k,
        e0: ch.e.expect("order two chain").data,
        lu: ch.lu,
    })
}

/// `ξ` at order 1 and `∂ξ` at order 1 from order-2 jets.
fn xi_parts(cfg: &GaugeConfig, tower: &Tower, jets: &crate::geometry::JetField, p: usize) -> (Poly, [Poly; 3]) {
    let mut x2 = Poly::zeros(tower.space(2), cfg.dim());
    load_jets(tower.space(2), jets, p, &mut x2, 0);
    (tower.down(&x2, 2), tower.grad(&x2, 2))
}

/// Variation of `δ_ξ A` (evaluated at a point) along the direction `dir` (order-1 jet).
fn vary_gauge_var(
    kern: &Kernel,
    tower: &Tower,
    tt: &Tower,
    s: &Stage1,
    dir: &Poly,
    xi1: &Poly,
    dxi1: &[Poly; 3],
) -> Result<(Vec<f64>, Vec<f64>, f64), FieldError> {
    let at = with_tangent(tower.space(1), tt.space(1), &s.a1, Some(dir));
    let (at0, ft) = kern.curvature(tt, &at, 1);
    let ks = kern.solve_k(tt.space(0), &at0, &ft);
    let x0 = with_tangent(tower.space(0), tt.space(0), &tower.down(xi1, 1), None);
    let d0: [Poly; 3] = std::array::from_fn(|mu| with_tangent(tower.space(0), tt.space(0), &tower.down(&dxi1[mu], 1), None));
    let gv = kern.gauge_var(tt.space(0), &at0, &ks.k, &x0, &d0);
    let t = tt.space(0).tangent([0, 0, 0], 1).expect("tangent slot");
    Ok((gv.block(t).to_vec(), ks.k.block(t).to_vec(), ks.det))
}

/// Pointwise pieces of the K-variation identity.
pub(crate) struct KVar {
    /// `δK` along `δ_ξ A`.
    pub dk: Vec<f64>,
    /// `C_{bc}^a K^b_μ ξ^c`.
    pub rot: Vec<f64>,
    /// `Y⁻¹(duB E ξ)`.
    pub ye: Vec<f64>,
    pub k: Vec<f64>,
    pub e: Vec<f64>,
}

/// From order-2 jets of `A` and `ξ` at one point.
pub(crate) fn k_var_point(cfg: &GaugeConfig, tower: &Tower, tt: &Tower, a2: &Poly, x2: &Poly) -> Result<KVar, FieldError> {
    let kern = cfg.kernel();
    let ch = kern.chain(tower, a2, 2);
    cfg.check_det(ch.det)?;
    let s = Stage1 {
        a1: ch.a,
        k1: ch.k,
        e0: ch.e.expect("order two chain").data,
        lu: ch.lu,
    };
    let xi1 = tower.down(x2, 2);
    let dxi1 = tower.grad(x2, 2);
    let da = kern.gauge_var(tower.space(1), &s.a1, &s.k1, &xi1, &dxi1);
    let (_, dk, _) = vary_gauge_var(kern, tower, tt, &s, &da, &xi1, &dxi1)?;
    let xv = xi1.value();
    let mut rot = vec![0.0; kern.nc()];
    kern.gv_ca.apply_acc(s.k1.value(), xv, &mut rot);
    let ye = kern.y_solve(&s.lu, dub_e_xi(kern, &s.e0, xv));
    Ok(KVar {
        dk,
        rot,
        ye,
        k: s.k1.value().to_vec(),
        e: s.e0,
    })
}

/// `δK` along a gauge variation against `C K ξ + ½ Y⁻¹(duB E ξ)`.
pub fn k_variation_residual(cfg: &GaugeConfig, xi: &[f64]) -> Result<ResidualReport, FieldError> {
    cfg.require_spectral("k_variation_residual")?;
    let n = cfg.dim();
    let xj = cfg.scalar_jets(xi, 2)?;
    let tower = Tower::new(2, 0);
    let tt = Tower::new(1, 1);
    let rows: Vec<Result<(f64, f64), FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let a = cfg.a_poly(tower.space(2), p);
            let mut x2 = Poly::zeros(tower.space(2), n);
            load_jets(tower.space(2), &xj, p, &mut x2, 0);
            let kv = k_var_point(cfg, &tower, &tt, &a, &x2)?;
            let mut res = 0.0f64;
            for i in 0..3 * n {
                res = res.max((kv.dk[i] - kv.rot[i] - 0.5 * kv.ye[i]).abs());
            }
            let scale = max_abs(&kv.dk).max(max_abs(&kv.rot)).max(0.5 * max_abs(&kv.ye));
            Ok((res, scale))
        })
        .collect();
    let (res, scale) = fold_rows(rows)?;
    Ok(cfg.report("k_variation", res, scale, 1e-10))
}

/// `[δ1, δ2]A − δ3A − duB^a_{c[d}(Y⁻¹E)^c_{e]μ} ξ2^e ξ1^d` with `[δ1,δ2]A = δ2(δ1A) − δ1(δ2A)`
/// and `ξ3^c = C_{ed}^c ξ2^e ξ1^d`.
pub fn commutator_residual(cfg: &GaugeConfig, xi1: &[f64], xi2: &[f64]) -> Result<ResidualReport, FieldError> {
    let (res, scale) = commutator_parts(cfg, xi1, xi2, true)?;
    Ok(cfg.report("commutator", res, scale, 1e-10))
}

/// Closure with `ξ3` alone (no field-equation term).
pub fn commutator_closure(cfg: &GaugeConfig, xi1: &[f64], xi2: &[f64]) -> Result<(f64, f64), FieldError> {
    commutator_parts(cfg, xi1, xi2, false)
}

fn commutator_parts(cfg: &GaugeConfig, xi1: &[f64], xi2: &[f64], with_extra: bool) -> Result<(f64, f64), FieldError> {
    cfg.require_spectral("commutator_residual")?;
    let kern = cfg.kernel();
    let n = cfg.dim();
    let j1 = cfg.scalar_jets(xi1, 2)?;
    let j2 = cfg.scalar_jets(xi2, 2)?;
    let tower = Tower::new(2, 0);
    let tt = Tower::new(1, 1);
    let rows: Vec<Result<(f64, f64), FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let s = stage1(cfg, &tower, p)?;
            let (x1, dx1) = xi_parts(cfg, &tower, &j1, p);
            let (x2, dx2) = xi_parts(cfg, &tower, &j2, p);
            let d1a = kern.gauge_var(tower.space(1), &s.a1, &s.k1, &x1, &dx1);
            let d2a = kern.gauge_var(tower.space(1), &s.a1, &s.k1, &x2, &dx2);
            // δ2(δ1 A): vary δ1A along δ2A
            let (d2d1, _, _) = vary_gauge_var(kern, &tower, &tt, &s, &d2a, &x1, &dx1)?;
            let (d1d2, _, _) = vary_gauge_var(kern, &tower, &tt, &s, &d1a, &x2, &dx2)?;
            let comm: Vec<f64> = d2d1.iter().zip(&d1d2).map(|(a, b)| a - b).collect();

            let s1 = tower.space(1);
            let mut x3 = Poly::zeros(s1, n);
            kern.bracket.apply_poly(s1, &x2, &x1, &mut x3);
            // ∂ξ3 at order 0 from the order-1 product
            let dx3 = tower.grad(&x3, 1);
            let a0 = tower.down(&s.a1, 1);
            let k0 = tower.down(&s.k1, 1);
            let d3 = kern.gauge_var(tower.space(0), &a0, &k0, &tower.down(&x3, 1), &dx3);

            let mut extra = vec![0.0; 3 * n];
            if with_extra {
                let (v1, v2) = (x1.value(), x2.value());
                let z2 = kern.y_solve(&s.lu, dub_e_xi(kern, &s.e0, v2));
                let z1 = kern.y_solve(&s.lu, dub_e_xi(kern, &s.e0, v1));
                let mut t1 = vec![0.0; 3 * n];
                let mut t2 = vec![0.0; 3 * n];
                kern.gv_bk.apply_acc(&z2, v1, &mut t1);
                kern.gv_bk.apply_acc(&z1, v2, &mut t2);
                for i in 0..3 * n {
                    extra[i] = 0.5 * (t1[i] - t2[i]);
                }
            }
            let mut res = 0.0f64;
            for i in 0..3 * n {
                res = res.max((comm[i] - d3.data[i] - extra[i]).abs());
            }
            let scale = max_abs(&comm).max(max_abs(&d3.data)).max(max_abs(&extra));
            Ok((res, scale))
        })
        .collect();
    fold_rows(rows)
}

fn fold_rows(rows: Vec<Result<(f64, f64), FieldError>>) -> Result<(f64, f64), FieldError> {
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for r in rows {
        let (a, b) = r?;
        res = res.max(a);
        scale = scale.max(b);
    }
    Ok((res, scale))
}

/// Off-shell Noether identity `∫ (E, δ_ξ A) = 0`, scaled by `‖E‖∞ ‖δA‖∞ · volume`.
pub fn noether_identity(cfg: &GaugeConfig, xi: &[f64]) -> Result<ResidualReport, FieldError> {
    let (_, _, e) = fields_ke(cfg)?;
    let da = gauge_variation(cfg, xi)?;
    let nc = 3 * cfg.dim();
    let val = pairing(cfg, &e, &da);
    let scale = max_point_norm(&e, nc) * max_point_norm(&da, nc) * cfg.lattice().volume();
    Ok(cfg.report("noether_identity", val.abs(), scale, 1e-8))
}

#[derive(Clone, Debug)]
pub struct NoetherCurrent {
    /// `J^a_μ = ε_μ^{σν} ∂_σ K^a_ν`.
    pub j: Vec<f64>,
    pub e_norm: f64,
    /// `max |∂^μ J_μ|`.
    pub div_residual: f64,
    /// `max |J + ε(C A K + ½ B K K)|`, equal to `½‖E‖∞` identically.
    pub onshell_residual: f64,
    /// `max |J + ε(C A K + ½ B K K) − ½ E|`.
    pub rearrangement_residual: f64,
    pub reports: Vec<ResidualReport>,
}

pub fn noether_current(cfg: &GaugeConfig) -> Result<NoetherCurrent, FieldError> {
    let kern = cfg.kernel();
    let nc = 3 * cfg.dim();
    let eta = cfg.lattice().metric().eta_inv;
    // per point: (J, div J, A, K, E)
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), FieldError>> = match cfg.lattice().mode() {
        DerivMode::Spectral => {
            let tower = Tower::new(3, 0);
            (0..cfg.points())
                .into_par_iter()
                .map(|p| {
                    let a = cfg.a_poly(tower.space(3), p);
                    let ch = kern.chain(&tower, &a, 3);
                    cfg.check_det(ch.det)?;
                    let dk = tower.grad(&ch.k, 2);
                    let mut j = Poly::zeros(tower.space(1), nc);
                    for s in 0..3 {
                        kern.e_dk[s].apply_poly(&dk[s], &mut j);
                    }
                    j.scale(0.5);
                    let dj = tower.grad(&j, 1);
                    let div = div_of(&dj.each_ref().map(|d| d.value()), eta, cfg.dim());
                    let a0 = tower.down(&tower.down(&ch.a, 2), 1);
                    let k0 = tower.down(&tower.down(&ch.k, 2), 1);
                    let e0 = tower.down(&ch.e.expect("order three chain"), 1);
                    Ok((j.value().to_vec(), div, a0.data, k0.data, e0.data))
                })
                .collect()
        }
        _ => {
            let (k, _, e) = fields_ke(cfg)?;
            let dk = cfg.grid_gradient(&k, nc);
            let mut j = vec![0.0; k.len()];
            for p in 0..cfg.points() {
                let r = p * nc..(p + 1) * nc;
                for s in 0..3 {
                    kern.e_dk[s].apply_acc(&dk[s][r.clone()], &mut j[r.clone()]);
                }
            }
            for x in &mut j {
                *x *= 0.5;
            }
            let dj = cfg.grid_gradient(&j, nc);
            (0..cfg.points())
                .map(|p| {
                    let r = p * nc..(p + 1) * nc;
                    let div = div_of(&[&dj[0][r.clone()], &dj[1][r.clone()], &dj[2][r.clone()]], eta, cfg.dim());
                    Ok((
                        j[r.clone()].to_vec(),
                        div,
                        cfg.samples()[r.clone()].to_vec(),
                        k[r.clone()].to_vec(),
                        e[r].to_vec(),
                    ))
                })
                .collect()
        }
    };
    let mut j = Vec::with_capacity(cfg.points() * nc);
    let (mut divr, mut onshell, mut rearr, mut enorm, mut jscale) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for r in rows {
        let (jp, div, a, k, e) = r?;
        let mut rest = vec![0.0; nc];
        kern.e_cak.apply_acc(&a, &k, &mut rest);
        kern.e_bkk.apply_acc(&k, &k, &mut rest);
        for i in 0..nc {
            let r = jp[i] + 0.5 * rest[i];
            onshell = onshell.max(r.abs());
            rearr = rearr.max((r - 0.5 * e[i]).abs());
        }
        divr = divr.max(max_abs(&div));
        enorm = enorm.max(max_abs(&e));
        jscale = jscale.max(max_abs(&jp));
        j.extend(jp);
    }
    let reports = vec![
        cfg.report("current_divergence", divr, 1.0, 1e-13),
        cfg.report("current_onshell", onshell, enorm + 1e-9, 1.0),
        cfg.report("current_rearrangement", rearr, jscale.max(enorm), 1e-10),
    ];
    Ok(NoetherCurrent {
        j,
        e_norm: enorm,
        div_residual: divr,
        onshell_residual: onshell,
        rearrangement_residual: rearr,
        reports,
    })
}

fn div_of(dj: &[&[f64]; 3], eta: [f64; 3], n: usize) -> Vec<f64> {
    (0..n).map(|a| (0..3).map(|mu| eta[mu] * dj[mu][cv(a, mu)]).sum()).collect()
}

pub(crate) fn dub_norm(cfg: &GaugeConfig) -> f64 {
    cfg.aux()
        .mixed()
        .map(|m| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt())
        .unwrap_or(0.0)
}

/// Largest Frobenius norm of `Y⁻¹` over the grid.
pub(crate) fn y_inv_norm_max(cfg: &GaugeConfig) -> f64 {
    let kern = cfg.kernel();
    let nc = 3 * cfg.dim();
    cfg.samples()
        .par_chunks(nc)
        .map(|a| kern.y_matrix(a).try_inverse().map(|m| m.norm()).unwrap_or(f64::INFINITY))
        .reduce(|| 0.0, f64::max)
}

/// On solutions `δK = C K ξ`. Off-shell the deviation is `½ Y⁻¹(duB E ξ)`, so the bound is
/// `½ ‖Y⁻¹‖ ‖duB‖ ‖ξ‖∞ ‖E‖∞`.
pub fn k_rotation_report(cfg: &GaugeConfig, xi: &[f64]) -> Result<ResidualReport, FieldError> {
    cfg.require_spectral("k_rotation_report")?;
    let n = cfg.dim();
    let xj = cfg.scalar_jets(xi, 2)?;
    let tower = Tower::new(2, 0);
    let tt = Tower::new(1, 1);
    let rows: Vec<Result<(f64, f64), FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let a = cfg.a_poly(tower.space(2), p);
            let mut x2 = Poly::zeros(tower.space(2), n);
            load_jets(tower.space(2), &xj, p, &mut x2, 0);
            let kv = k_var_point(cfg, &tower, &tt, &a, &x2)?;
            let res = kv.dk.iter().zip(&kv.rot).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Ok((res, max_point_norm(&kv.e, 3 * n)))
        })
        .collect();
    let (res, e_norm) = fold_rows(rows)?;
    let bound = 0.5 * y_inv_norm_max(cfg) * dub_norm(cfg) * max_point_norm(xi, n) * e_norm;
    Ok(cfg.report("k_rotation", res, bound, 10.0))
}

/// Closure `[δ1, δ2]A = δ3A` without the field-equation term, against
/// `‖duB‖² ‖Y⁻¹‖ ‖E‖∞ ‖ξ1‖∞ ‖ξ2‖∞`.
pub fn closure_report(cfg: &GaugeConfig, xi1: &[f64], xi2: &[f64]) -> Result<ResidualReport, FieldError> {
    let n = cfg.dim();
    let (res, _) = commutator_parts(cfg, xi1, xi2, false)?;
    let e = fields_ke(cfg)?.2;
    let d = dub_norm(cfg);
    let bound = d * d * y_inv_norm_max(cfg) * max_point_norm(&e, 3 * n) * max_point_norm(xi1, n) * max_point_norm(xi2, n);
    Ok(cfg.report("closure", res, bound, 10.0))
}
