use nalgebra::DVector;
use rayon::prelude::*;

use super::identities::k_var_point;
use super::kernel::cv;
use super::{gauge_variation, linearize, max_abs, FieldError, GaugeConfig};
use crate::geometry::{gauss_legendre, multi_indices};
use crate::jet::{JetSpace, Poly, Tower};
use crate::lie::LieVector;
use crate::report::ResidualReport;

/// Rectangle `[lo, hi]` in the plane `x_axis = level`, with in-plane coordinates
/// `(x_i, x_j)`, `i = axis + 1`, `j = axis + 2` (mod 3). The boundary runs counterclockwise in `(x_i, x_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub axis: usize,
    pub level: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Gauss–Legendre nodes per direction.
    pub nodes: usize,
}

impl Window {
    pub fn new(axis: usize, level: f64, lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self {
            axis,
            level,
            lo,
            hi,
            nodes: 24,
        }
    }

    fn point(&self, s: f64, t: f64) -> [f64; 3] {
        let mut x = [0.0; 3];
        x[self.axis] = self.level;
        x[(self.axis + 1) % 3] = s;
        x[(self.axis + 2) % 3] = t;
        x
    }

    fn perimeter(&self) -> f64 {
        2.0 * ((self.hi[0] - self.lo[0]) + (self.hi[1] - self.lo[1]))
    }

    /// `(position, in-plane direction 0|1, weight)` along the boundary.
    fn boundary(&self) -> Vec<([f64; 3], usize, f64)> {
        let qs = gauss_legendre(self.nodes, self.lo[0], self.hi[0]);
        let qt = gauss_legendre(self.nodes, self.lo[1], self.hi[1]);
        let mut out = Vec::new();
        for &(s, w) in &qs {
            out.push((self.point(s, self.lo[1]), 0, w));
            out.push((self.point(s, self.hi[1]), 0, -w));
        }
        for &(t, w) in &qt {
            out.push((self.point(self.hi[0], t), 1, w));
            out.push((self.point(self.lo[0], t), 1, -w));
        }
        out
    }

    fn surface(&self) -> Vec<([f64; 3], f64)> {
        let qs = gauss_legendre(self.nodes, self.lo[0], self.hi[0]);
        let qt = gauss_legendre(self.nodes, self.lo[1], self.hi[1]);
        let mut out = Vec::with_capacity(qs.len() * qt.len());
        for &(s, ws) in &qs {
            for &(t, wt) in &qt {
                out.push((self.point(s, t), ws * wt));
            }
        }
        out
    }
}

/// Order-`order` jet of `A` at an arbitrary position.
fn a_poly_at(cfg: &GaugeConfig, space: &JetSpace, x: [f64; 3], order: usize) -> Result<Poly, FieldError> {
    let coeffs = cfg
        .jets()
        .at_position(cfg.lattice(), x, order)
        .ok_or_else(|| FieldError::Unsupported("off-grid evaluation needs spectral derivatives".into()))?;
    let mut a = Poly::zeros(space, 3 * cfg.dim());
    for (alpha, vals) in multi_indices(order).into_iter().zip(coeffs) {
        if let Some(m) = space.base(alpha) {
            a.block_mut(m).copy_from_slice(&vals);
        }
    }
    Ok(a)
}

#[derive(Clone, Debug)]
pub struct ChargeReport {
    /// `∫ J^a_axis dx_i dx_j` over the window.
    pub surface: Vec<f64>,
    /// `ε_axis^{ij} ∮ K^a` around the boundary.
    pub loop_charge: Vec<f64>,
    pub stokes: ResidualReport,
}

pub fn charge(cfg: &GaugeConfig, window: &Window) -> Result<ChargeReport, FieldError> {
    cfg.require_spectral("charge")?;
    let n = cfg.dim();
    let kern = cfg.kernel();
    let (ax, i, j) = (window.axis, (window.axis + 1) % 3, (window.axis + 2) % 3);
    let orient = cfg.lattice().metric().eps_cross[ax][i][j];
    let tower = Tower::new(2, 0);
    let surf: Vec<Result<Vec<f64>, FieldError>> = window
        .surface()
        .into_par_iter()
        .map(|(x, w)| {
            let a = a_poly_at(cfg, tower.space(2), x, 2)?;
            let ch = kern.chain(&tower, &a, 2);
            cfg.check_det(ch.det)?;
            let dk = tower.grad(&ch.k, 1);
            let mut jv = vec![0.0; 3 * n];
            for s in 0..3 {
                kern.e_dk[s].apply_acc(dk[s].value(), &mut jv);
            }
            Ok((0..n).map(|a| 0.5 * w * jv[cv(a, ax)]).collect())
        })
        .collect();
    let t1 = Tower::new(1, 0);
    let bnd: Vec<Result<(Vec<f64>, f64), FieldError>> = window
        .boundary()
        .into_par_iter()
        .map(|(x, dir, w)| {
            let a = a_poly_at(cfg, t1.space(1), x, 1)?;
            let (at, f) = kern.curvature(&t1, &a, 1);
            let ks = kern.solve_k(t1.space(0), &at, &f);
            cfg.check_det(ks.det)?;
            let comp = if dir == 0 { i } else { j };
            let kv: Vec<f64> = (0..n).map(|a| ks.k.value()[cv(a, comp)]).collect();
            let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok((kv.iter().map(|x| orient * w * x).collect(), w.abs() * norm))
        })
        .collect();
    let mut surface = vec![0.0; n];
    for r in surf {
        for (s, v) in surface.iter_mut().zip(r?) {
            *s += v;
        }
    }
    let mut loop_charge = vec![0.0; n];
    let mut mass = 0.0;
    for r in bnd {
        let (v, m) = r?;
        for (s, x) in loop_charge.iter_mut().zip(v) {
            *s += x;
        }
        mass += m;
    }
    let diff = surface.iter().zip(&loop_charge).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = mass.max(max_abs(&surface)).max(max_abs(&loop_charge));
    let stokes = cfg.report("charge_stokes", diff, scale, 1e-10);
    Ok(ChargeReport {
        surface,
        loop_charge,
        stokes,
    })
}

/// `δQ^a = C_{bc}^a Q^b ξ^c` under a gauge variation with constant `ξ`, measured on the loop charge.
/// The deviation is `½ ∮ Y⁻¹(duB E ξ)`; the bound uses `‖E‖∞` on the boundary.
pub fn charge_covariance(cfg: &GaugeConfig, window: &Window, xi: &LieVector) -> Result<ResidualReport, FieldError> {
    cfg.require_spectral("charge_covariance")?;
    let n = cfg.dim();
    let kern = cfg.kernel();
    let (ax, i, j) = (window.axis, (window.axis + 1) % 3, (window.axis + 2) % 3);
    let orient = cfg.lattice().metric().eps_cross[ax][i][j];
    let tower = Tower::new(2, 0);
    let tt = Tower::new(1, 1);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, f64, f64), FieldError>> = window
        .boundary()
        .into_par_iter()
        .map(|(x, dir, w)| {
            let a = a_poly_at(cfg, tower.space(2), x, 2)?;
            let mut x2 = Poly::zeros(tower.space(2), n);
            x2.block_mut(0).copy_from_slice(xi.as_slice());
            let kv = k_var_point(cfg, &tower, &tt, &a, &x2)?;
            let comp = if dir == 0 { i } else { j };
            let dq: Vec<f64> = (0..n).map(|c| orient * w * kv.dk[cv(c, comp)]).collect();
            let q: Vec<f64> = (0..n).map(|c| orient * w * kv.k[cv(c, comp)]).collect();
            let ynorm = kern
                .y_matrix(a.value())
                .try_inverse()
                .map(|m| m.norm())
                .unwrap_or(f64::INFINITY);
            Ok((dq, q, super::max_point_norm(&kv.e, 3 * n), ynorm))
        })
        .collect();
    let mut dq = vec![0.0; n];
    let mut q = vec![0.0; n];
    let (mut enorm, mut ynorm) = (0.0f64, 0.0f64);
    for r in rows {
        let (a, b, e, y) = r?;
        for c in 0..n {
            dq[c] += a[c];
            q[c] += b[c];
        }
        enorm = enorm.max(e);
        ynorm = ynorm.max(y);
    }
    let rot = cfg.alg().bracket_raw(&q, xi.as_slice());
    let res = dq.iter().zip(rot.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let dub_norm = cfg.aux().mixed().map(|m| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0);
    let bound = 0.5 * ynorm * dub_norm * xi.norm() * enorm * window.perimeter() + 1e-12;
    Ok(cfg.report("charge_covariance", res, bound, 10.0))
}

#[derive(Clone, Debug)]
pub struct StressReport {
    /// `T_{μν}` at `9p + 3μ + ν`.
    pub t: Vec<f64>,
    pub symmetry: f64,
    pub trace: f64,
    /// `max |∂^μ T_{μν}|`.
    pub divergence: f64,
    /// `max |∂^μ T_{μν} − η^{μμ}(K_μ, G_{μν}) − ½ η^{μμ}(duB(E_μ, A_μ), K_ν)|` with `E_λ = ε_λ^{σν} G_{σν}`.
    pub divergence_identity: f64,
    pub e_norm: f64,
    pub reports: Vec<ResidualReport>,
}

/// `T_{μν} = k_{ab}(K^a_μ K^b_ν − ½ η_{μν} η^{στ} K^a_σ K^b_τ)`.
pub fn stress_tensor(cfg: &GaugeConfig) -> Result<StressReport, FieldError> {
    cfg.require_spectral("stress_tensor")?;
    let n = cfg.dim();
    let nc = 3 * n;
    let kern = cfg.kernel();
    let metric = cfg.lattice().metric().clone();
    let kill = cfg.alg().killing().clone();
    let mut tkk = crate::jet::Bilinear::default();
    for a in 0..n {
        for b in 0..n {
            let w = kill[(a, b)];
            if w == 0.0 {
                continue;
            }
            for mu in 0..3 {
                for nu in 0..3 {
                    tkk.push(cv(a, mu), cv(b, nu), 3 * mu + nu, w);
                }
                for s in 0..3 {
                    tkk.push(cv(a, s), cv(b, s), 3 * mu + mu, -0.5 * metric.eta[mu] * metric.eta_inv[s] * w);
                }
            }
        }
    }
    let tower = Tower::new(2, 0);
    let pair_low = |x: &[f64], y: &[f64], mx: usize, my: usize| -> f64 {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += kill[(a, b)] * x[cv(a, mx)] * y[cv(b, my)];
            }
        }
        s
    };
    let rows: Vec<Result<(Vec<f64>, [f64; 5]), FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let a = cfg.a_poly(tower.space(2), p);
            let ch = kern.chain(&tower, &a, 2);
            cfg.check_det(ch.det)?;
            let e = ch.e.expect("order two chain");
            let mut t = Poly::zeros(tower.space(1), 9);
            tkk.apply_poly(tower.space(1), &ch.k, &ch.k, &mut t);
            let dt = tower.grad(&t, 1);
            let tv = t.value();
            let (av, kv, ev) = (tower.down(&ch.a, 1), tower.down(&ch.k, 1), e.value().to_vec());
            let (av, kv) = (av.value(), kv.value());
            let mut sym = 0.0f64;
            for mu in 0..3 {
                for nu in 0..3 {
                    sym = sym.max((tv[3 * mu + nu] - tv[3 * nu + mu]).abs());
                }
            }
            let tr: f64 = (0..3).map(|mu| metric.eta_inv[mu] * tv[4 * mu]).sum();
            let kk: f64 = (0..3).map(|mu| metric.eta_inv[mu] * pair_low(kv, kv, mu, mu)).sum();
            let trace = (tr + 0.5 * kk).abs();
            // ∂^μ T_{μν}
            let div: Vec<f64> = (0..3)
                .map(|nu| (0..3).map(|mu| metric.eta_inv[mu] * dt[mu].value()[3 * mu + nu]).sum())
                .collect();
            // η^{μμ}(K_μ, G_{μν}) + ½ η^{μμ}(duB(E_μ, A_μ), K_ν), with G_{σν} the antisymmetric
            // combination whose dual is E: E_λ = ε_λ^{σν} G_{σν}
            let mut g = vec![0.0; 9 * n];
            for &(lam, s, v, w) in &metric.cross_nonzeros() {
                for c in 0..n {
                    g[(3 * s + v) * n + c] = ev[cv(c, lam)] / (2.0 * w);
                }
            }
            let mut rhs = vec![0.0; 3];
            for mu in 0..3 {
                for nu in 0..3 {
                    let mut gv = vec![0.0; nc];
                    for c in 0..n {
                        gv[cv(c, mu)] = g[(3 * mu + nu) * n + c];
                    }
                    rhs[nu] += metric.eta_inv[mu] * pair_low(kv, &gv, mu, mu);
                }
            }
            for mu in 0..3 {
                let emu: Vec<f64> = (0..n).map(|c| ev[cv(c, mu)]).collect();
                let amu: Vec<f64> = (0..n).map(|c| av[cv(c, mu)]).collect();
                let mut d = vec![0.0; n];
                kern.dub_bil.apply_acc(&emu, &amu, &mut d);
                let mut dv = vec![0.0; nc];
                for c in 0..n {
                    for nu in 0..3 {
                        dv[cv(c, nu)] = d[c];
                    }
                }
                for nu in 0..3 {
                    rhs[nu] += 0.5 * metric.eta_inv[mu] * pair_low(&dv, kv, nu, nu);
                }
            }
            let ident = div.iter().zip(&rhs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let scale = max_abs(&div).max(max_abs(&rhs));
            Ok((tv.to_vec(), [sym, trace, max_abs(&div), ident, scale.max(max_abs(&ev))]))
        })
        .collect();
    let mut t = Vec::with_capacity(cfg.points() * 9);
    let mut acc = [0.0f64; 5];
    let mut e_norm = 0.0f64;
    let mut k_norm = 0.0f64;
    let (k, _, e) = super::fields_ke(cfg)?;
    for r in rows {
        let (tv, m) = r?;
        t.extend(tv);
        for i in 0..5 {
            acc[i] = acc[i].max(m[i]);
        }
    }
    e_norm = e_norm.max(super::max_point_norm(&e, nc));
    k_norm = k_norm.max(super::max_point_norm(&k, nc));
    let a_norm = cfg.amplitude();
    let kill_norm = kill.norm();
    let dub_norm = cfg.aux().mixed().map(|m| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0);
    let cons_bound = e_norm * k_norm * (kill_norm + 0.5 * dub_norm * a_norm * kill_norm) + 1e-14;
    let reports = vec![
        cfg.report("stress_symmetry", acc[0], 1.0, 1e-13),
        cfg.report("stress_trace", acc[1], 1.0, 1e-13),
        cfg.report("stress_divergence_identity", acc[3], acc[4], 1e-10),
        cfg.report("stress_conservation", acc[2], cons_bound, 10.0),
    ];
    Ok(StressReport {
        t,
        symmetry: acc[0],
        trace: acc[1],
        divergence: acc[2],
        divergence_identity: acc[3],
        e_norm,
        reports,
    })
}

/// Gauge-direction variation `δ_ξ T` (through the exact linearization) against `‖E‖∞`.
pub fn stress_gauge_variation(cfg: &GaugeConfig, xi: &[f64]) -> Result<ResidualReport, FieldError> {
    let n = cfg.dim();
    let nc = 3 * n;
    let da = gauge_variation(cfg, xi)?;
    let lin = linearize(cfg, &da)?;
    let (k, _, e) = super::fields_ke(cfg)?;
    let kill = cfg.alg().killing();
    let metric = cfg.lattice().metric();
    let mut res = 0.0f64;
    for p in 0..cfg.points() {
        let kp = &k[p * nc..(p + 1) * nc];
        let dkp = &lin.dk[p * nc..(p + 1) * nc];
        for mu in 0..3 {
            for nu in 0..3 {
                let mut dt = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        let w = kill[(a, b)];
                        dt += w * (dkp[cv(a, mu)] * kp[cv(b, nu)] + kp[cv(a, mu)] * dkp[cv(b, nu)]);
                        if mu == nu {
                            for s in 0..3 {
                                dt -= metric.eta[mu] * metric.eta_inv[s] * w * dkp[cv(a, s)] * kp[cv(b, s)];
                            }
                        }
                    }
                }
                res = res.max(dt.abs());
            }
        }
    }
    let xi_norm = super::max_point_norm(xi, n);
    let dub_norm = cfg.aux().mixed().map(|m| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0);
    let bound = 2.0 * kill.norm() * super::max_point_norm(&k, nc) * dub_norm * xi_norm * super::max_point_norm(&e, nc) + 1e-14;
    Ok(cfg.report("stress_gauge_variation", res, bound, 10.0))
}

/// Flux of `T_{axis ν}` through full grid slices at every level along `axis`; the spread
/// between levels vanishes on-shell.
pub fn killing_flux(cfg: &GaugeConfig, stress: &StressReport, axis: usize) -> (Vec<[f64; 3]>, f64) {
    let nn = cfg.lattice().n();
    let h2 = cfg.lattice().h() * cfg.lattice().h();
    let eta_inv = cfg.lattice().metric().eta_inv;
    let mut levels = Vec::with_capacity(nn);
    for l in 0..nn {
        let mut q = [0.0; 3];
        for u in 0..nn {
            for w in 0..nn {
                let mut idx = [0usize; 3];
                idx[axis] = l;
                idx[(axis + 1) % 3] = u;
                idx[(axis + 2) % 3] = w;
                let p = cfg.lattice().index(idx[0], idx[1], idx[2]);
                for nu in 0..3 {
                    q[nu] += eta_inv[axis] * stress.t[9 * p + 3 * axis + nu] * h2;
                }
            }
        }
        levels.push(q);
    }
    let spread = (0..3)
        .map(|nu| {
            let vals: Vec<f64> = levels.iter().map(|q| q[nu]).collect();
            vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    (levels, spread)
}

#[allow(dead_code)]
fn unit(n: usize, i: usize) -> LieVector {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}
