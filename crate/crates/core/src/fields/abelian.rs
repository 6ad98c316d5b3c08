use super::kernel::cv;
use super::{max_abs, max_point_norm, pairing, GaugeConfig};
use crate::lie::LieVector;
use crate::report::ResidualReport;

/// `ε_μ^{σν} ∂_σ X_ν` for a covector grid.
fn curl(cfg: &GaugeConfig, x: &[f64]) -> Vec<f64> {
    let n = cfg.dim();
    let nc = 3 * n;
    let d = cfg.grid_gradient(x, nc);
    let eps = cfg.lattice().metric().cross_nonzeros();
    let mut out = vec![0.0; x.len()];
    for p in 0..cfg.points() {
        for &(mu, s, v, w) in &eps {
            for a in 0..n {
                out[p * nc + cv(a, mu)] += w * d[s][p * nc + cv(a, v)];
            }
        }
    }
    out
}

/// `(C_{bc}^a A^b_μ + duB^a_{dc} (curl A)^d_μ) ξ^c` with constant `ξ`.
fn rigid_variation(cfg: &GaugeConfig, a: &[f64], xi: &LieVector) -> Vec<f64> {
    let n = cfg.dim();
    let nc = 3 * n;
    let c = cfg.alg().structure().nonzeros();
    let dub = cfg.aux().mixed().map(|m| m.nonzeros()).unwrap_or_default();
    let f = curl(cfg, a);
    let mut out = vec![0.0; a.len()];
    for p in 0..cfg.points() {
        let (ap, fp) = (&a[p * nc..(p + 1) * nc], &f[p * nc..(p + 1) * nc]);
        let op = &mut out[p * nc..(p + 1) * nc];
        for mu in 0..3 {
            for &(b, cc, r, w) in &c {
                op[cv(r, mu)] += w * ap[cv(b, mu)] * xi[cc];
            }
            for &(r, d, cc, w) in &dub {
                op[cv(r, mu)] += w * fp[cv(d, mu)] * xi[cc];
            }
        }
    }
    out
}

/// Rigid symmetry of the abelian theory with action `∫ (curl A, curl A)`:
/// the first-order change of the action and the closure `[δ1, δ2] A = δ3 A`, `ξ3 = C_{ed}^c ξ2^e ξ1^d`.
/// Both are exact only when `curl curl A = 0`.
pub fn rigid_symmetry_abelian(cfg: &GaugeConfig, xi1: &LieVector, xi2: &LieVector) -> Vec<ResidualReport> {
    let a = cfg.samples();
    let nc = 3 * cfg.dim();
    let vol = cfg.lattice().volume();

    let f = curl(cfg, a);
    let da = rigid_variation(cfg, a, xi1);
    let dfa = curl(cfg, &da);
    let ds = 2.0 * pairing(cfg, &f, &dfa);
    let inv_scale = vol * (max_point_norm(&f, nc) * max_point_norm(&dfa, nc) + max_point_norm(a, nc) * max_point_norm(&da, nc));

    // δ1 acting on δ2 A means δ2 evaluated at δ1 A, since the variation is linear in A.
    let d21 = rigid_variation(cfg, &rigid_variation(cfg, a, xi2), xi1);
    let d12 = rigid_variation(cfg, &rigid_variation(cfg, a, xi1), xi2);
    let xi3 = cfg.alg().bracket_raw(xi2.as_slice(), xi1.as_slice());
    let d3 = rigid_variation(cfg, a, &xi3);
    let mut res = 0.0f64;
    for i in 0..a.len() {
        res = res.max((d21[i] - d12[i] - d3[i]).abs());
    }
    let comm_scale = max_abs(&d21).max(max_abs(&d12)).max(max_abs(&d3));

    vec![
        cfg.report("rigid_abelian_invariance", ds.abs(), inv_scale, 1e-12),
        cfg.report("rigid_abelian_commutator", res, comm_scale, 1e-10),
    ]
}
