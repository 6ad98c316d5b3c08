//! Field-theory core on the lattice: curvature, the Y map, K, the action, field equations,
//! gauge transformations, identity residuals, currents, charges and the stress tensor.

mod abelian;
mod charges;
mod covariant;
mod identities;
pub(crate) mod kernel;
mod rotation;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::aux::{AuxBracket, AuxError};
use crate::geometry::{DerivMode, GeometryError, JetField, Lattice3, SpectralField};
use crate::jet::{Poly, Tower};
use crate::lie::LieAlgebra;
use crate::report::ResidualReport;
use kernel::{cv, Kernel};

pub use abelian::rigid_symmetry_abelian;
pub use charges::{
    charge, charge_covariance, killing_flux, stress_gauge_variation, stress_tensor, ChargeReport, StressReport, Window,
};
pub use covariant::{covariant_general_residuals, dub_covariant, v_map_apply};
pub use identities::{
    closure_report, commutator_closure, commutator_residual, k_rotation_report, k_variation_residual, noether_current,
    noether_identity, NoetherCurrent,
};
pub use rotation::{
    composition_check, composition_order, dexp_series, exp_series, finite_gauge_su2, rotation_ops, transformed_action,
    CompositionReport,
};

pub const DET_GUARD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("Y is singular: min |det Y| = {min_det:e}")]
    SingularY { min_det: f64 },
    #[error("field contains non-finite entries")]
    NotFinite,
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Aux(#[from] AuxError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Potential `A^a_μ` on the lattice together with its Taylor jets.
#[derive(Clone, Debug)]
pub struct GaugeConfig {
    alg: Arc<LieAlgebra>,
    aux: Arc<AuxBracket>,
    lattice: Lattice3,
    samples: Vec<f64>,
    jets: JetField,
    kernel: Arc<Kernel>,
    min_det: f64,
}

/// Jet order kept for `A`: enough for the divergence of `curl K`.
const JET_ORDER: usize = 3;

impl GaugeConfig {
    pub fn new(alg: Arc<LieAlgebra>, aux: Arc<AuxBracket>, lattice: Lattice3, samples: Vec<f64>) -> Result<Self, FieldError> {
        if alg.dim() != aux.dim() {
            return Err(FieldError::Unsupported(format!(
                "algebra dimension {} vs auxiliary bracket dimension {}",
                alg.dim(),
                aux.dim()
            )));
        }
        let kernel = Kernel::new(&alg, &aux, lattice.metric()).ok_or_else(|| AuxError::NotSemisimple(alg.label().to_string()))?;
        Self::assemble(alg, aux, lattice, samples, Arc::new(kernel))
    }

    fn assemble(
        alg: Arc<LieAlgebra>,
        aux: Arc<AuxBracket>,
        lattice: Lattice3,
        samples: Vec<f64>,
        kernel: Arc<Kernel>,
    ) -> Result<Self, FieldError> {
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(FieldError::NotFinite);
        }
        let nc = 3 * alg.dim();
        let jets = JetField::from_samples(&lattice, &samples, nc, JET_ORDER)?;
        let min_det = if kernel.zero_b {
            1.0
        } else {
            samples
                .par_chunks(nc)
                .map(|a| kernel.y_matrix(a).determinant().abs())
                .reduce(|| f64::INFINITY, f64::min)
        };
        if !(min_det >= DET_GUARD) {
            return Err(FieldError::SingularY { min_det });
        }
        Ok(Self {
            alg,
            aux,
            lattice,
            samples,
            jets,
            kernel,
            min_det,
        })
    }

    pub fn from_field(alg: Arc<LieAlgebra>, aux: Arc<AuxBracket>, lattice: Lattice3, field: &SpectralField) -> Result<Self, FieldError> {
        let samples = field.samples(&lattice);
        Self::new(alg, aux, lattice, samples)
    }

    pub fn zero(alg: Arc<LieAlgebra>, aux: Arc<AuxBracket>, lattice: Lattice3) -> Result<Self, FieldError> {
        let len = lattice.points() * 3 * alg.dim();
        Self::new(alg, aux, lattice, vec![0.0; len])
    }

    /// Same algebra, bracket and lattice with new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self, FieldError> {
        Self::assemble(self.alg.clone(), self.aux.clone(), self.lattice.clone(), samples, self.kernel.clone())
    }

    pub fn with_aux(&self, aux: Arc<AuxBracket>) -> Result<Self, FieldError> {
        Self::new(self.alg.clone(), aux, self.lattice.clone(), self.samples.clone())
    }

    pub fn with_lattice(&self, lattice: Lattice3) -> Result<Self, FieldError> {
        Self::new(self.alg.clone(), self.aux.clone(), lattice, self.samples.clone())
    }

    pub fn alg(&self) -> &Arc<LieAlgebra> {
        &self.alg
    }

    pub fn aux(&self) -> &Arc<AuxBracket> {
        &self.aux
    }

    pub fn lattice(&self) -> &Lattice3 {
        &self.lattice
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn min_det_y(&self) -> f64 {
        self.min_det
    }

    pub fn dim(&self) -> usize {
        self.alg.dim()
    }

    pub fn points(&self) -> usize {
        self.lattice.points()
    }

    /// Largest pointwise Frobenius norm of `A`.
    pub fn amplitude(&self) -> f64 {
        max_point_norm(&self.samples, 3 * self.dim())
    }

    pub(crate) fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub(crate) fn jets(&self) -> &JetField {
        &self.jets
    }

    /// Report skeleton carrying this configuration's metadata.
    pub fn report(&self, name: &str, residual: f64, scale: f64, tolerance: f64) -> ResidualReport {
        ResidualReport::new(name, residual, scale, tolerance).with_meta(
            self.alg.label(),
            self.lattice.n(),
            self.lattice.mode().as_str(),
        )
    }

    pub(crate) fn require_spectral(&self, what: &str) -> Result<(), FieldError> {
        if self.lattice.mode() != DerivMode::Spectral {
            return Err(FieldError::Unsupported(format!("{what} needs spectral derivatives")));
        }
        Ok(())
    }
}

pub(crate) fn max_point_norm(data: &[f64], nc: usize) -> f64 {
    data.chunks(nc)
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

pub(crate) fn max_abs(data: &[f64]) -> f64 {
    data.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Load the Taylor coefficients of a jet field at a grid point into base monomials.
pub(crate) fn load_jets(space: &crate::jet::JetSpace, jets: &JetField, p: usize, out: &mut Poly, tangent: usize) {
    for (ai, &alpha) in jets.alphas.iter().enumerate() {
        if let Some(m) = space.tangent(alpha, tangent) {
            out.block_mut(m).copy_from_slice(jets.at(p, ai));
        }
    }
}

impl GaugeConfig {
    /// Jet of `A` at point `p` in `space` (base part only).
    pub(crate) fn a_poly(&self, space: &crate::jet::JetSpace, p: usize) -> Poly {
        let mut a = Poly::zeros(space, 3 * self.dim());
        load_jets(space, &self.jets, p, &mut a, 0);
        a
    }

    /// Jets of a Lie-valued scalar grid (`n` components per point).
    pub(crate) fn scalar_jets(&self, xi: &[f64], order: usize) -> Result<JetField, FieldError> {
        Ok(JetField::from_samples(&self.lattice, xi, self.dim(), order)?)
    }

    pub(crate) fn covector_jets(&self, v: &[f64], order: usize) -> Result<JetField, FieldError> {
        Ok(JetField::from_samples(&self.lattice, v, 3 * self.dim(), order)?)
    }

    pub(crate) fn check_det(&self, det: f64) -> Result<(), FieldError> {
        if self.kernel.zero_b || det.abs() >= DET_GUARD {
            Ok(())
        } else {
            Err(FieldError::SingularY { min_det: det.abs() })
        }
    }

    /// Pointwise K grid and F grid from order-1 jets (works in every derivative mode).
    pub(crate) fn k_and_f(&self) -> (Vec<f64>, Vec<f64>) {
        let tower = Tower::new(1, 0);
        let nc = 3 * self.dim();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..self.points())
            .into_par_iter()
            .map(|p| {
                let a = self.a_poly(tower.space(1), p);
                let (at, f) = self.kernel.curvature(&tower, &a, 1);
                let ks = self.kernel.solve_k(tower.space(0), &at, &f);
                (ks.k.data, f.data)
            })
            .collect();
        let mut k = Vec::with_capacity(self.points() * nc);
        let mut f = Vec::with_capacity(self.points() * nc);
        for (kr, fr) in rows {
            k.extend(kr);
            f.extend(fr);
        }
        (k, f)
    }

    /// Stencil derivatives `∂_μ` of a grid with `nc` components per point.
    pub(crate) fn grid_gradient(&self, values: &[f64], nc: usize) -> [Vec<f64>; 3] {
        let np = self.points();
        std::array::from_fn(|mu| {
            let mut out = vec![0.0; np * nc];
            for c in 0..nc {
                let comp: Vec<f64> = (0..np).map(|p| values[p * nc + c]).collect();
                for (p, v) in self.lattice.derivative(&comp, mu).into_iter().enumerate() {
                    out[p * nc + c] = v;
                }
            }
            out
        })
    }
}

#[derive(Clone, Debug)]
pub struct Curvature {
    pub n: usize,
    /// `F^a_{μν}` at `(p·n + a)·9 + 3μ + ν`.
    pub f2: Vec<f64>,
    /// `F^a_σ` at `p·3n + 3a + σ`.
    pub fdual: Vec<f64>,
}

impl Curvature {
    pub fn antisymmetry_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for blk in self.f2.chunks(9) {
            for m in 0..3 {
                for v in 0..3 {
                    r = r.max((blk[3 * m + v] + blk[3 * v + m]).abs());
                }
            }
        }
        r
    }
}

pub fn curvature(cfg: &GaugeConfig) -> Curvature {
    let n = cfg.dim();
    let eta_eps = cfg.lattice.metric().eps_cross;
    let c = cfg.alg.structure();
    let jets = &cfg.jets;
    let d1: [usize; 3] = std::array::from_fn(|mu| {
        let mut al = [0u8; 3];
        al[mu] = 1;
        jets.alphas.iter().position(|x| *x == al).expect("first-order jet")
    });
    let mut f2 = vec![0.0; cfg.points() * n * 9];
    let mut fdual = vec![0.0; cfg.points() * 3 * n];
    for p in 0..cfg.points() {
        let a = jets.at(p, 0);
        for ai in 0..n {
            for m in 0..3 {
                for v in 0..3 {
                    let mut val = 0.5 * (jets.at(p, d1[m])[cv(ai, v)] - jets.at(p, d1[v])[cv(ai, m)]);
                    for b in 0..n {
                        for cc in 0..n {
                            let w = c[(b, cc, ai)];
                            if w != 0.0 {
                                val += 0.5 * w * a[cv(b, m)] * a[cv(cc, v)];
                            }
                        }
                    }
                    f2[(p * n + ai) * 9 + 3 * m + v] = val;
                }
            }
            for s in 0..3 {
                let mut val = 0.0;
                for m in 0..3 {
                    for v in 0..3 {
                        val += eta_eps[s][m][v] * f2[(p * n + ai) * 9 + 3 * m + v];
                    }
                }
                fdual[p * 3 * n + cv(ai, s)] = val;
            }
        }
    }
    Curvature { n, f2, fdual }
}

/// Per-point `M[(d,μ),(b,ν)] = δδ − ε_μ^{νσ} duB^d_{be} A^e_σ` with determinants.
#[derive(Clone, Debug)]
pub struct YOperator {
    pub dim: usize,
    pub matrices: Vec<DMatrix<f64>>,
    pub dets: Vec<f64>,
    pub min_det: f64,
    eta_inv: [f64; 3],
    killing: DMatrix<f64>,
}

impl YOperator {
    /// Bilinear form `η^{μμ} k_{ad} M[(d,μ),(b,ν)]` at a point.
    pub fn lowered(&self, p: usize) -> DMatrix<f64> {
        let n = self.dim / 3;
        let m = &self.matrices[p];
        DMatrix::from_fn(self.dim, self.dim, |r, col| {
            let (a, mu) = (r / 3, r % 3);
            (0..n).map(|d| self.eta_inv[mu] * self.killing[(a, d)] * m[(cv(d, mu), col)]).sum::<f64>()
        })
    }

    pub fn symmetry_residual(&self) -> f64 {
        (0..self.matrices.len())
            .map(|p| {
                let l = self.lowered(p);
                (&l - l.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }
}

pub fn assemble_y(cfg: &GaugeConfig) -> Result<YOperator, FieldError> {
    let nc = 3 * cfg.dim();
    let matrices: Vec<DMatrix<f64>> = cfg.samples.par_chunks(nc).map(|a| cfg.kernel.y_matrix(a)).collect();
    let dets: Vec<f64> = matrices.par_iter().map(|m| m.clone().lu().determinant()).collect();
    let min_det = dets.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !(min_det >= DET_GUARD) {
        return Err(FieldError::SingularY { min_det });
    }
    Ok(YOperator {
        dim: nc,
        matrices,
        dets,
        min_det,
        eta_inv: cfg.lattice.metric().eta_inv,
        killing: cfg.alg.killing().clone(),
    })
}

#[derive(Clone, Debug)]
pub struct KStrength {
    pub k: Vec<f64>,
    pub fdual: Vec<f64>,
    /// `max |Y K − F| / max |F|`.
    pub y_residual: f64,
    /// Covariant algebraic relation, relative to the largest term.
    pub relation_residual: f64,
}

pub fn compute_k(cfg: &GaugeConfig) -> Result<KStrength, FieldError> {
    let (k, f) = cfg.k_and_f();
    let nc = 3 * cfg.dim();
    let kern = &cfg.kernel;
    let (mut yres, mut fscale) = (0.0f64, 0.0f64);
    let (mut rel, mut rscale) = (0.0f64, 0.0f64);
    for p in 0..cfg.points() {
        let (a, kp, fp) = (&cfg.samples[p * nc..(p + 1) * nc], &k[p * nc..(p + 1) * nc], &f[p * nc..(p + 1) * nc]);
        let mut yk = kp.to_vec();
        let mut xk = vec![0.0; nc];
        kern.x_bil.apply_acc(a, kp, &mut xk);
        for i in 0..nc {
            yk[i] -= xk[i];
        }
        yres = yres.max(max_abs_diff(&yk, fp));
        fscale = fscale.max(max_abs(fp));
        let cov = covariant::k_relation_term(cfg, a, kp);
        for i in 0..nc {
            rel = rel.max((kp[i] - cov[i] - fp[i]).abs());
            rscale = rscale.max(kp[i].abs()).max(cov[i].abs()).max(fp[i].abs());
        }
    }
    Ok(KStrength {
        k,
        fdual: f,
        y_residual: if fscale > 0.0 { yres / fscale } else { yres },
        relation_residual: if rscale > 0.0 { rel / rscale } else { rel },
    })
}

#[derive(Clone, Debug)]
pub struct Lagrangian {
    pub density: Vec<f64>,
    pub action: f64,
    /// `max |Y(K,K) − L|` and `max |Y⁻¹(F,F) − L|`, relative to `max |L|`.
    pub form_residual: f64,
    /// `max |F·Y⁻¹·F − K·Y·K|` relative, the two quadratic forms against each other.
    pub dual_form_residual: f64,
}

/// `L = η^{μτ} k_{ad} K^a_μ F^d_τ`.
pub fn lagrangian(cfg: &GaugeConfig) -> Result<Lagrangian, FieldError> {
    let (k, f) = cfg.k_and_f();
    let y = assemble_y(cfg)?;
    let nc = 3 * cfg.dim();
    let kill = cfg.alg.killing();
    let eta = cfg.lattice.metric().eta_inv;
    let n = cfg.dim();
    let pair = |x: &[f64], z: &[f64]| -> f64 {
        let mut s = 0.0;
        for a in 0..n {
            for d in 0..n {
                let w = kill[(a, d)];
                if w != 0.0 {
                    for mu in 0..3 {
                        s += eta[mu] * w * x[cv(a, mu)] * z[cv(d, mu)];
                    }
                }
            }
        }
        s
    };
    let rows: Vec<(f64, f64, f64)> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let kp = &k[p * nc..(p + 1) * nc];
            let fp = &f[p * nc..(p + 1) * nc];
            let l = pair(kp, fp);
            let low = y.lowered(p);
            let kv = nalgebra::DVector::from_column_slice(kp);
            let ykk = kv.dot(&(&low * &kv));
            // Y⁻¹(F,F): lowered inverse form applied to F
            let fv = nalgebra::DVector::from_column_slice(fp);
            let sol = y.matrices[p].clone().lu().solve(&fv).unwrap_or_else(|| fv.map(|_| f64::NAN));
            let mut glow = vec![0.0; nc];
            for a in 0..n {
                for mu in 0..3 {
                    glow[cv(a, mu)] = (0..n).map(|d| eta[mu] * kill[(a, d)] * fp[cv(d, mu)]).sum();
                }
            }
            let yinv_ff: f64 = glow.iter().zip(sol.iter()).map(|(x, z)| x * z).sum();
            (l, ykk, yinv_ff)
        })
        .collect();
    let density: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lmax = max_abs(&density);
    let norm = if lmax > 0.0 { lmax } else { 1.0 };
    let form = rows.iter().map(|r| (r.1 - r.0).abs().max((r.2 - r.0).abs())).fold(0.0, f64::max) / norm;
    let dual = rows.iter().map(|r| (r.2 - r.1).abs()).fold(0.0, f64::max) / norm;
    Ok(Lagrangian {
        action: cfg.lattice.integrate(&density),
        density,
        form_residual: form,
        dual_form_residual: dual,
    })
}

pub fn action(cfg: &GaugeConfig) -> Result<f64, FieldError> {
    let (k, f) = cfg.k_and_f();
    let dens = pairing_density(cfg, &k, &f);
    Ok(cfg.lattice.integrate(&dens))
}

/// Pointwise `(X, Z) = η^{μν} k_{ab} X^a_μ Z^b_ν` over a grid.
pub fn pairing_density(cfg: &GaugeConfig, x: &[f64], z: &[f64]) -> Vec<f64> {
    let n = cfg.dim();
    let nc = 3 * n;
    let kill = cfg.alg.killing();
    let eta = cfg.lattice.metric().eta_inv;
    x.chunks(nc)
        .zip(z.chunks(nc))
        .map(|(xp, zp)| {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let w = kill[(a, b)];
                    if w != 0.0 {
                        for mu in 0..3 {
                            s += eta[mu] * w * xp[cv(a, mu)] * zp[cv(b, mu)];
                        }
                    }
                }
            }
            s
        })
        .collect()
}

/// `∫ (X, Z)` with the Killing and metric pairing.
pub fn pairing(cfg: &GaugeConfig, x: &[f64], z: &[f64]) -> f64 {
    cfg.lattice.integrate(&pairing_density(cfg, x, z))
}

/// `E^a_μ = 2 ε_μ^{σν}(∂_σK_ν + C A_σ K_ν + ½ B K_σ K_ν)` on the grid.
pub fn field_equations(cfg: &GaugeConfig) -> Result<Vec<f64>, FieldError> {
    Ok(fields_ke(cfg)?.2)
}

/// `(K, F, E)` grids.
pub(crate) fn fields_ke(cfg: &GaugeConfig) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), FieldError> {
    let nc = 3 * cfg.dim();
    let kern = &cfg.kernel;
    match cfg.lattice.mode() {
        DerivMode::Spectral => {
            let tower = Tower::new(2, 0);
            let rows: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>), FieldError>> = (0..cfg.points())
                .into_par_iter()
                .map(|p| {
                    let a = cfg.a_poly(tower.space(2), p);
                    let ch = kern.chain(&tower, &a, 2);
                    cfg.check_det(ch.det)?;
                    Ok((
                        ch.k.value().to_vec(),
                        ch.f.value().to_vec(),
                        ch.e.expect("order two chain").data,
                    ))
                })
                .collect();
            let mut k = Vec::with_capacity(cfg.points() * nc);
            let mut f = Vec::with_capacity(cfg.points() * nc);
            let mut e = Vec::with_capacity(cfg.points() * nc);
            for r in rows {
                let (kr, fr, er) = r?;
                k.extend(kr);
                f.extend(fr);
                e.extend(er);
            }
            Ok((k, f, e))
        }
        _ => {
            let (k, f) = cfg.k_and_f();
            let dk = cfg.grid_gradient(&k, nc);
            let e = fd_field_eq(cfg, &k, &dk);
            Ok((k, f, e))
        }
    }
}

fn fd_field_eq(cfg: &GaugeConfig, k: &[f64], dk: &[Vec<f64>; 3]) -> Vec<f64> {
    let nc = 3 * cfg.dim();
    let tower = Tower::new(0, 0);
    let sp = tower.space(0);
    let mut e = Vec::with_capacity(k.len());
    for p in 0..cfg.points() {
        let r = p * nc..(p + 1) * nc;
        let a = Poly {
            ncomp: nc,
            data: cfg.samples[r.clone()].to_vec(),
        };
        let kp = Poly {
            ncomp: nc,
            data: k[r.clone()].to_vec(),
        };
        let d: [Poly; 3] = std::array::from_fn(|mu| Poly {
            ncomp: nc,
            data: dk[mu][r.clone()].to_vec(),
        });
        e.extend(cfg.kernel.field_eq(sp, &a, &kp, &d).data);
    }
    e
}

pub fn bianchi_residual(cfg: &GaugeConfig) -> Result<ResidualReport, FieldError> {
    let nc = 3 * cfg.dim();
    let kern = &cfg.kernel;
    let rows: Vec<(f64, f64)> = match cfg.lattice.mode() {
        DerivMode::Spectral => {
            let tower = Tower::new(2, 0);
            (0..cfg.points())
                .into_par_iter()
                .map(|p| {
                    let a = cfg.a_poly(tower.space(2), p);
                    let ch = kern.chain(&tower, &a, 2);
                    let dk = tower.grad(&ch.k, 1);
                    let e = ch.e.expect("order two chain");
                    let (res, scale) =
                        kern.bianchi(ch.a.value(), ch.k.value(), e.value(), [dk[0].value(), dk[1].value(), dk[2].value()]);
                    (max_abs(&res), scale)
                })
                .collect()
        }
        _ => {
            let (k, _) = cfg.k_and_f();
            let dk = cfg.grid_gradient(&k, nc);
            let e = fd_field_eq(cfg, &k, &dk);
            (0..cfg.points())
                .map(|p| {
                    let r = p * nc..(p + 1) * nc;
                    let (res, scale) = kern.bianchi(
                        &cfg.samples[r.clone()],
                        &k[r.clone()],
                        &e[r.clone()],
                        [&dk[0][r.clone()], &dk[1][r.clone()], &dk[2][r.clone()]],
                    );
                    (max_abs(&res), scale)
                })
                .collect()
        }
    };
    let res = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let scale = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(cfg.report("bianchi", res, scale, 1e-10))
}

/// `δA^a_μ = ∂_μ ξ^a + (C_{bc}^a A^b_μ + duB^a_{dc} K^d_μ) ξ^c` for a grid `ξ` with `n` components per point.
pub fn gauge_variation(cfg: &GaugeConfig, xi: &[f64]) -> Result<Vec<f64>, FieldError> {
    let n = cfg.dim();
    let xj = cfg.scalar_jets(xi, 1)?;
    let tower = Tower::new(1, 0);
    let rows: Vec<Result<Vec<f64>, FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let a = cfg.a_poly(tower.space(1), p);
            let (at, f) = cfg.kernel.curvature(&tower, &a, 1);
            let ks = cfg.kernel.solve_k(tower.space(0), &at, &f);
            cfg.check_det(ks.det)?;
            let mut x1 = Poly::zeros(tower.space(1), n);
            load_jets(tower.space(1), &xj, p, &mut x1, 0);
            let dxi = tower.grad(&x1, 1);
            let x0 = tower.down(&x1, 1);
            Ok(cfg.kernel.gauge_var(tower.space(0), &at, &ks.k, &x0, &dxi).data)
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.points() * 3 * n);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Linearized {
    pub df: Vec<f64>,
    pub dk: Vec<f64>,
    pub de: Vec<f64>,
}

/// Exact directional derivatives of `(F, K, E)` along a grid `δA`.
pub fn linearize(cfg: &GaugeConfig, da: &[f64]) -> Result<Linearized, FieldError> {
    cfg.require_spectral("linearize")?;
    let nc = 3 * cfg.dim();
    let dj = cfg.covector_jets(da, 2)?;
    let tower = Tower::new(2, 1);
    let t1 = tower.space(1).tangent([0, 0, 0], 1).expect("tangent slot");
    let t0 = tower.space(0).tangent([0, 0, 0], 1).expect("tangent slot");
    let rows: Vec<Result<[Vec<f64>; 3], FieldError>> = (0..cfg.points())
        .into_par_iter()
        .map(|p| {
            let mut a = cfg.a_poly(tower.space(2), p);
            load_jets(tower.space(2), &dj, p, &mut a, 1);
            let ch = cfg.kernel.chain(&tower, &a, 2);
            cfg.check_det(ch.det)?;
            let e = ch.e.expect("order two chain");
            Ok([ch.f.block(t1).to_vec(), ch.k.block(t1).to_vec(), e.block(t0).to_vec()])
        })
        .collect();
    let mut out = Linearized {
        df: Vec::with_capacity(cfg.points() * nc),
        dk: Vec::with_capacity(cfg.points() * nc),
        de: Vec::with_capacity(cfg.points() * nc),
    };
    for r in rows {
        let [f, k, e] = r?;
        out.df.extend(f);
        out.dk.extend(k);
        out.de.extend(e);
    }
    Ok(out)
}

/// Amplitude at which `‖ε B A‖ ≤ 0.5` is guaranteed pointwise: `0.5 / ‖T‖_F`.
pub fn guard_amplitude(alg: &LieAlgebra, aux: &AuxBracket, metric: &crate::geometry::Metric3) -> f64 {
    let Some(k) = Kernel::new(alg, aux, metric) else {
        return 0.0;
    };
    let norm2: f64 = k.x_bil.terms.iter().map(|t| t.3 * t.3).sum();
    if norm2 == 0.0 {
        f64::INFINITY
    } else {
        0.5 / norm2.sqrt()
    }
}

#[cfg(test)]
mod tests;
