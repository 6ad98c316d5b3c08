use nalgebra::DVector;
use rayon::prelude::*;

use super::kernel::cv;
use super::{max_abs, FieldError, GaugeConfig};
use crate::aux::{AuxBracket, CommutingPair, Provenance};
use crate::jet::Tower;
use crate::lie::{LieAlgebra, LieVector};
use crate::report::ResidualReport;

/// `V(φ) = Σ (u, φ) v − (v, φ) u` over the pairs.
pub fn v_map_apply(alg: &LieAlgebra, pairs: &[CommutingPair], phi: &LieVector) -> LieVector {
    let mut out = DVector::zeros(alg.dim());
    for p in pairs {
        out += &p.v * alg.inner(&p.u, phi) - &p.u * alg.inner(&p.v, phi);
    }
    out
}

/// `duB(φ, ψ)^d = duB^d_{be} φ^b ψ^e` through the bracket's defining data: `[φ, [ψ, v]]` for the
/// su2 builder, `V([φ, ψ]) − [V(φ), ψ]` for pair-built brackets, the tensor otherwise.
pub fn dub_covariant(alg: &LieAlgebra, aux: &AuxBracket, phi: &[f64], psi: &[f64]) -> LieVector {
    match aux.provenance() {
        Provenance::Su2V(v) => {
            let inner = alg.bracket_raw(psi, v.as_slice());
            alg.bracket_raw(phi, inner.as_slice())
        }
        prov => match prov.pairs() {
            Some(pairs) => {
                let br = alg.bracket_raw(phi, psi);
                let vphi = v_map_apply(alg, &pairs, &DVector::from_column_slice(phi));
                v_map_apply(alg, &pairs, &br) - alg.bracket_raw(vphi.as_slice(), psi)
            }
            None => dub_tensor(aux, phi, psi),
        },
    }
}

fn dub_tensor(aux: &AuxBracket, phi: &[f64], psi: &[f64]) -> LieVector {
    let n = aux.dim();
    let mut out = DVector::zeros(n);
    if let Some(m) = aux.mixed() {
        for &(d, b, e, w) in &m.nonzeros() {
            out[d] += w * phi[b] * psi[e];
        }
    }
    out
}

fn column(x: &[f64], mu: usize, n: usize) -> Vec<f64> {
    (0..n).map(|a| x[cv(a, mu)]).collect()
}

/// `ε_τ^{νσ} duB(K_ν, A_σ)` evaluated through [`dub_covariant`].
pub(crate) fn k_relation_term(cfg: &GaugeConfig, a: &[f64], k: &[f64]) -> Vec<f64> {
    let n = cfg.dim();
    let eps = cfg.lattice().metric().cross_nonzeros();
    let mut out = vec![0.0; 3 * n];
    for &(tau, nu, sigma, e) in &eps {
        let d = dub_covariant(cfg.alg(), cfg.aux(), &column(k, nu, n), &column(a, sigma, n));
        for c in 0..n {
            out[cv(c, tau)] += e * d[c];
        }
    }
    out
}

/// Checks of the covariant formulation for pair-built brackets:
/// V against the tensor, the covariant field equation, the covariant differential identity,
/// and the antisymmetry of V.
pub fn covariant_general_residuals(cfg: &GaugeConfig) -> Result<Vec<ResidualReport>, FieldError> {
    cfg.require_spectral("covariant_general_residuals")?;
    let alg = cfg.alg().clone();
    let aux = cfg.aux().clone();
    let pairs = aux
        .provenance()
        .pairs()
        .ok_or_else(|| FieldError::Unsupported("covariant checks need a pair-built bracket".into()))?;
    let n = cfg.dim();

    let (mut vres, mut vscale, mut anti) = (0.0f64, 0.0f64, 0.0f64);
    for b in 0..n {
        let eb = alg.basis_vector(b);
        for c in 0..n {
            let ec = alg.basis_vector(c);
            let formula = dub_covariant(&alg, &aux, eb.as_slice(), ec.as_slice());
            let tensor = dub_tensor(&aux, eb.as_slice(), ec.as_slice());
            vres = vres.max((&formula - &tensor).amax());
            vscale = vscale.max(tensor.amax());
            let lhs = alg.inner(&eb, &v_map_apply(&alg, &pairs, &ec));
            let rhs = alg.inner(&v_map_apply(&alg, &pairs, &eb), &ec);
            anti = anti.max((lhs + rhs).abs());
        }
    }

    let kern = cfg.kernel();
    let eta = cfg.lattice().metric().eta_inv;
    let eps = cfg.lattice().metric().cross_nonzeros();
    let tower = Tower::new(2, 0);
    let rows: Vec<Result<[f64; 4], FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let a = cfg.a_poly(tower.space(2), p);
            let ch = kern.chain(&tower, &a, 2);
            cfg.check_det(ch.det)?;
            let dk = tower.grad(&ch.k, 1);
            let e = ch.e.expect("order two chain");
            let (av, kv, ev) = (ch.a.value(), ch.k.value(), e.value());
            let col = |x: &[f64], mu: usize| column(x, mu, n);
            let dcol = |mu: usize, nu: usize| column(dk[mu].value(), nu, n);
            let vk: Vec<LieVector> = (0..3).map(|mu| v_map_apply(&alg, &pairs, &DVector::from_vec(col(kv, mu)))).collect();
            // D_σ K_ν − [V(K_σ), K_ν]
            let inner = |s: usize, v: usize| -> LieVector {
                DVector::from_vec(dcol(s, v)) + alg.bracket_raw(&col(av, s), &col(kv, v))
                    - alg.bracket_raw(vk[s].as_slice(), &col(kv, v))
            };
            let mut ecov = vec![0.0; 3 * n];
            for &(mu, s, v, w) in &eps {
                let t = inner(s, v);
                for c in 0..n {
                    ecov[cv(c, mu)] += 2.0 * w * t[c];
                }
            }
            let mut eres = 0.0f64;
            for i in 0..3 * n {
                eres = eres.max((ecov[i] - ev[i]).abs());
            }
            // η^{μμ}(D_μK_μ + V([K_μ,K_μ]) − [V(K_μ),K_μ]) − ½ η^{μμ} duB(E_μ, A_μ)
            let mut bcov = DVector::zeros(n);
            let mut bscale = 0.0f64;
            for mu in 0..3 {
                let kk = alg.bracket_raw(&col(kv, mu), &col(kv, mu));
                let t = inner(mu, mu) + v_map_apply(&alg, &pairs, &kk);
                let eterm = dub_covariant(&alg, &aux, &col(ev, mu), &col(av, mu)) * 0.5;
                bscale = bscale.max(t.amax()).max(eterm.amax());
                bcov += (t - eterm) * eta[mu];
            }
            let (bcomp, _) = kern.bianchi(av, kv, ev, [dk[0].value(), dk[1].value(), dk[2].value()]);
            let bdiff = bcov.iter().zip(&bcomp).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            Ok([eres, max_abs(ev).max(max_abs(&ecov)), bcov.amax().max(bdiff), bscale])
        })
        .collect();
    let mut acc = [0.0f64; 4];
    for r in rows {
        let r = r?;
        for i in 0..4 {
            acc[i] = acc[i].max(r[i]);
        }
    }
    Ok(vec![
        cfg.report("covariant_v_map", vres, vscale.max(1.0), 1e-12),
        cfg.report("covariant_field_equation", acc[0], acc[1], 1e-12),
        cfg.report("covariant_identity", acc[2], acc[3], 1e-10),
        cfg.report("v_antisymmetry", anti, 1.0, 1e-14),
    ])
}
