//! Lattice solutions of the field equations by Gauss–Newton least squares on
//! `Φ = ½∫‖E‖² + λ·½∫(∂^μA_μ)²`, with a preconditioned conjugate-gradient inner solve and
//! continuation in the auxiliary coupling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::kernel::{cv, Kernel};
use crate::fields::{action, FieldError, GaugeConfig};
use crate::geometry::{deriv_factor, multi_indices, wavenumber, Lattice3};
use crate::jet::{Bilinear, Linear, Poly, Tower};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Target for `‖E‖∞`.
    pub residual_tol: f64,
    /// Weight `λ` of the divergence penalty.
    pub gauge_penalty: f64,
    /// Armijo constant of the backtracking line search.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub cg_max_iters: usize,
    /// Inner tolerance is `forcing · min(1, ‖E‖∞)` relative to the gradient norm.
    pub forcing: f64,
    /// Number of continuation stages after the `v = 0` stage.
    pub continuation_steps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            residual_tol: 1e-8,
            gauge_penalty: 0.1,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            cg_max_iters: 300,
            forcing: 0.1,
            continuation_steps: 8,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidOptions(m.to_string()));
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if !(self.gauge_penalty >= 0.0) {
            return bad("gauge_penalty must be non-negative");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("armijo must lie in (0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final `‖E‖∞`.
    pub residual: f64,
    pub min_det_trajectory: Vec<f64>,
    pub objective_trajectory: Vec<f64>,
    pub action: f64,
    pub converged: bool,
    pub cg_iterations: usize,
    /// Scale applied to the auxiliary bracket (1 outside continuation).
    pub coupling_scale: f64,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("det(Y) guard tripped at iteration {iteration} (min |det Y| = {min_det:e})")]
    SingularYEncountered {
        iteration: usize,
        min_det: f64,
        trajectory: Vec<f64>,
    },
    #[error("no convergence after {} iterations: ‖E‖∞ = {:e}", .report.iterations, .report.residual)]
    NoConvergence {
        report: Box<SolveReport>,
        last: Box<GaugeConfig>,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Divergence `∂^μ A^a_μ` on the grid.
fn divergence(cfg: &GaugeConfig) -> Vec<f64> {
    let n = cfg.dim();
    let nc = 3 * n;
    let d = cfg.grid_gradient(cfg.samples(), nc);
    let eta = cfg.lattice().metric().eta_inv;
    (0..cfg.points())
        .flat_map(|p| {
            let d = &d;
            (0..n).map(move |a| (0..3).map(|mu| eta[mu] * d[mu][p * nc + cv(a, mu)]).sum::<f64>())
        })
        .collect()
}

struct Residual {
    e: Vec<f64>,
    div: Vec<f64>,
    /// `½ Σ (‖E‖² + λ (div A)²)` without the cell volume.
    phi: f64,
    e_inf: f64,
}

fn residual(cfg: &GaugeConfig, lambda: f64) -> Result<Residual, FieldError> {
    let e = crate::fields::field_equations(cfg)?;
    let div = divergence(cfg);
    let phi = 0.5 * (e.iter().map(|x| x * x).sum::<f64>() + lambda * div.iter().map(|x| x * x).sum::<f64>());
    let e_inf = e.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(Residual { e, div, phi, e_inf })
}

/// `Φ = ½∫‖E‖² + λ·½∫(∂^μA_μ)²` with Euclidean component norms.
pub fn objective(cfg: &GaugeConfig, opts: &SolveOptions) -> Result<f64, SolveError> {
    cfg.require_spectral("solver")?;
    Ok(residual(cfg, opts.gauge_penalty)?.phi * cfg.lattice().cell_volume())
}

/// `∇Φ = Jᵀ r` (cell volume included), from the exact Jacobian of the grid map `A ↦ (E, √λ div A)`.
pub fn gradient(cfg: &GaugeConfig, opts: &SolveOptions) -> Result<Vec<f64>, SolveError> {
    cfg.require_spectral("solver")?;
    let r = residual(cfg, opts.gauge_penalty)?;
    let jac = Jacobian::assemble(cfg, opts.gauge_penalty)?;
    let sl = opts.gauge_penalty.sqrt();
    let div: Vec<f64> = r.div.iter().map(|x| sl * x).collect();
    let mut g = jac.apply_t(&r.e, &div);
    let w = cfg.lattice().cell_volume();
    g.iter_mut().for_each(|x| *x *= w);
    Ok(g)
}

fn lin_mat(l: &Linear, nin: usize, nout: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nout, nin);
    for &(i, o, v) in &l.terms {
        m[(o as usize, i as usize)] += v;
    }
    m
}

/// `δ ↦ b(x, δ)`.
fn bil_first(b: &Bilinear, x: &[f64], nin: usize, nout: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nout, nin);
    for &(i, j, o, v) in &b.terms {
        m[(o as usize, j as usize)] += v * x[i as usize];
    }
    m
}

/// `δ ↦ b(δ, y)`.
fn bil_second(b: &Bilinear, y: &[f64], nin: usize, nout: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nout, nin);
    for &(i, j, o, v) in &b.terms {
        m[(o as usize, i as usize)] += v * y[j as usize];
    }
    m
}

/// Point-local blocks `L_α` with `δE(p) = Σ_α L_α(p) (∂^α δA)(p)`, `|α| ≤ 2`.
pub struct Jacobian {
    n: usize,
    nc: usize,
    lattice: Lattice3,
    alphas: Vec<[u8; 3]>,
    first: [usize; 3],
    /// `nc × (alphas · nc)` per point.
    blocks: Vec<DMatrix<f64>>,
    symbols: Vec<Vec<Complex64>>,
    sqrt_lambda: f64,
}

fn point_blocks(kern: &Kernel, cfg: &GaugeConfig, tower: &Tower, alphas: &[[u8; 3]], p: usize) -> Result<DMatrix<f64>, FieldError> {
    let nc = kern.nc();
    let a2 = cfg_a_poly(cfg, tower, p);
    let ch = kern.chain(tower, &a2, 2);
    cfg.check_det(ch.det)?;
    let a = ch.a.value().to_vec();
    let da = tower.grad(&ch.a, 1);
    let da: Vec<Vec<f64>> = da.iter().map(|d| d.value().to_vec()).collect();
    let k = ch.k.value().to_vec();
    let dk: Vec<Vec<f64>> = tower.grad(&ch.k, 1).iter().map(|d| d.value().to_vec()).collect();
    let yinv = kern.y_matrix(&a).try_inverse().ok_or(FieldError::SingularY { min_det: 0.0 })?;

    let fq = |x: &[f64]| bil_first(&kern.f_quad, x, nc, nc) + bil_second(&kern.f_quad, x, nc, nc);
    let xk = bil_second(&kern.x_bil, &k, nc, nc);
    let curl: Vec<DMatrix<f64>> = kern.curl.iter().map(|l| lin_mat(l, nc, nc)).collect();
    let edk: Vec<DMatrix<f64>> = kern.e_dk.iter().map(|l| lin_mat(l, nc, nc)).collect();
    let ecak_k = bil_second(&kern.e_cak, &k, nc, nc);
    let g = bil_first(&kern.e_cak, &a, nc, nc) + bil_first(&kern.e_bkk, &k, nc, nc) + bil_second(&kern.e_bkk, &k, nc, nc);
    let k0 = &yinv * (fq(&a) + &xk);
    let k1: Vec<DMatrix<f64>> = curl.iter().map(|c| &yinv * c).collect();
    let ps: Vec<DMatrix<f64>> = edk.iter().map(|e| e * &yinv).collect();
    let xa: Vec<DMatrix<f64>> = (0..3).map(|s| bil_first(&kern.x_bil, &da[s], nc, nc)).collect();

    let mut out = DMatrix::zeros(nc, alphas.len() * nc);
    for (ai, alpha) in alphas.iter().enumerate() {
        let order: u8 = alpha.iter().sum();
        let blk = match order {
            0 => {
                let mut l = &ecak_k + &g * &k0;
                for s in 0..3 {
                    let xdk = bil_second(&kern.x_bil, &dk[s], nc, nc);
                    l += &ps[s] * (fq(&da[s]) + xdk + &xa[s] * &k0);
                }
                l
            }
            1 => {
                let m = alpha.iter().position(|&x| x == 1).expect("first order");
                let mut l = &edk[m] * &k0 + &g * &k1[m];
                for s in 0..3 {
                    l += &ps[s] * &xa[s] * &k1[m];
                }
                l
            }
            _ => {
                let idx: Vec<usize> = (0..3).flat_map(|ax| std::iter::repeat(ax).take(alpha[ax] as usize)).collect();
                let (m, s) = (idx[0], idx[1]);
                if m == s {
                    &ps[m] * &curl[m]
                } else {
                    &ps[s] * &curl[m] + &ps[m] * &curl[s]
                }
            }
        };
        out.columns_mut(ai * nc, nc).copy_from(&blk);
    }
    Ok(out)
}

fn cfg_a_poly(cfg: &GaugeConfig, tower: &Tower, p: usize) -> Poly {
    cfg.a_poly(tower.space(2), p)
}

impl Jacobian {
    pub fn assemble(cfg: &GaugeConfig, lambda: f64) -> Result<Self, FieldError> {
        let kern = cfg.kernel();
        let alphas = multi_indices(2);
        let tower = Tower::new(2, 0);
        let blocks: Vec<Result<DMatrix<f64>, FieldError>> = (0..cfg.points())
            .into_par_iter()
            .map(|p| point_blocks(kern, cfg, &tower, &alphas, p))
            .collect();
        let blocks = blocks.into_iter().collect::<Result<Vec<_>, _>>()?;
        let lat = cfg.lattice().clone();
        let nn = lat.n();
        let symbols = alphas
            .iter()
            .map(|al| {
                let mut s = Vec::with_capacity(lat.points());
                for i in 0..nn {
                    for j in 0..nn {
                        let fij = deriv_factor(i, nn, al[0] as usize) * deriv_factor(j, nn, al[1] as usize);
                        for k in 0..nn {
                            s.push(fij * deriv_factor(k, nn, al[2] as usize));
                        }
                    }
                }
                s
            })
            .collect();
        let first = std::array::from_fn(|mu| {
            let mut e = [0u8; 3];
            e[mu] = 1;
            alphas.iter().position(|a| *a == e).expect("first-order index")
        });
        Ok(Self {
            n: cfg.dim(),
            nc: 3 * cfg.dim(),
            lattice: lat,
            alphas,
            first,
            blocks,
            symbols,
            sqrt_lambda: lambda.sqrt(),
        })
    }

    fn component(&self, v: &[f64], c: usize, nc: usize) -> Vec<f64> {
        (0..self.lattice.points()).map(|p| v[p * nc + c]).collect()
    }

    /// `(δE, √λ div δA)` for a grid `δA`.
    pub fn apply(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nc, n, np) = (self.nc, self.n, self.lattice.points());
        let na = self.alphas.len();
        // z[p][α·nc + c] = ∂^α v_c (p)
        let mut z = vec![0.0; np * na * nc];
        let cols: Vec<Vec<Vec<f64>>> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let hat = self.lattice.forward(&self.component(v, c, nc));
                self.symbols
                    .iter()
                    .map(|s| self.lattice.inverse_real(hat.iter().zip(s).map(|(h, f)| h * f).collect()))
                    .collect()
            })
            .collect();
        for (c, per_alpha) in cols.iter().enumerate() {
            for (ai, vals) in per_alpha.iter().enumerate() {
                for p in 0..np {
                    z[(p * na + ai) * nc + c] = vals[p];
                }
            }
        }
        let e: Vec<f64> = (0..np)
            .into_par_iter()
            .flat_map_iter(|p| {
                let zp = DVector::from_column_slice(&z[p * na * nc..(p + 1) * na * nc]);
                (&self.blocks[p] * zp).data.as_vec().clone()
            })
            .collect();
        let eta = self.lattice.metric().eta_inv;
        let mut div = vec![0.0; np * n];
        for p in 0..np {
            for a in 0..n {
                div[p * n + a] = self.sqrt_lambda
                    * (0..3).map(|mu| eta[mu] * z[(p * na + self.first[mu]) * nc + cv(a, mu)]).sum::<f64>();
            }
        }
        (e, div)
    }

    /// Adjoint of [`Jacobian::apply`] in the Euclidean grid inner product.
    pub fn apply_t(&self, ye: &[f64], ydiv: &[f64]) -> Vec<f64> {
        let (nc, n, np) = (self.nc, self.n, self.lattice.points());
        let na = self.alphas.len();
        let eta = self.lattice.metric().eta_inv;
        let mut z: Vec<f64> = (0..np)
            .into_par_iter()
            .flat_map_iter(|p| {
                let yp = DVector::from_column_slice(&ye[p * nc..(p + 1) * nc]);
                (self.blocks[p].transpose() * yp).data.as_vec().clone()
            })
            .collect();
        for p in 0..np {
            for a in 0..n {
                for mu in 0..3 {
                    z[(p * na + self.first[mu]) * nc + cv(a, mu)] += self.sqrt_lambda * eta[mu] * ydiv[p * n + a];
                }
            }
        }
        let cols: Vec<Vec<f64>> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Complex64::new(0.0, 0.0); np];
                for (ai, s) in self.symbols.iter().enumerate() {
                    let comp: Vec<f64> = (0..np).map(|p| z[(p * na + ai) * nc + c]).collect();
                    let hat = self.lattice.forward(&comp);
                    // adjoint symbol: complex conjugate
                    for ((a, h), f) in acc.iter_mut().zip(&hat).zip(s) {
                        *a += h * f.conj();
                    }
                }
                self.lattice.inverse_real(acc)
            })
            .collect();
        let mut out = vec![0.0; np * nc];
        for (c, vals) in cols.iter().enumerate() {
            for p in 0..np {
                out[p * nc + c] = vals[p];
            }
        }
        out
    }

    fn normal(&self, d: &[f64]) -> Vec<f64> {
        let (e, div) = self.apply(d);
        self.apply_t(&e, &div)
    }
}

/// Inverse of the vacuum normal operator `J₀ᵀJ₀ + λ divᵀdiv`, block-diagonal in Fourier space.
struct Preconditioner {
    lattice: Lattice3,
    n: usize,
    inv: Vec<Matrix3<Complex64>>,
}

impl Preconditioner {
    fn new(lattice: &Lattice3, n: usize, lambda: f64) -> Self {
        let nn = lattice.n();
        let metric = lattice.metric();
        let eps = metric.cross_nonzeros();
        let mut inv = Vec::with_capacity(lattice.points());
        for i in 0..nn {
            for j in 0..nn {
                for k in 0..nn {
                    let bins = [i, j, k];
                    let sym = |al: [usize; 3]| -> Complex64 {
                        (0..3).map(|ax| deriv_factor(bins[ax], nn, al[ax])).product()
                    };
                    let mut j0 = Matrix3::<Complex64>::zeros();
                    for &(mu, s, nu, w1) in &eps {
                        for &(nu2, m, beta, w2) in &eps {
                            if nu2 != nu {
                                continue;
                            }
                            let mut al = [0usize; 3];
                            al[s] += 1;
                            al[m] += 1;
                            j0[(mu, beta)] += sym(al) * (2.0 * w1 * w2);
                        }
                    }
                    let mut d = Matrix3::<Complex64>::zeros();
                    for b in 0..3 {
                        let mut al = [0usize; 3];
                        al[b] = 1;
                        d[(0, b)] = sym(al) * metric.eta_inv[b];
                    }
                    let m = j0.adjoint() * j0 + d.adjoint() * d * Complex64::new(lambda, 0.0);
                    let k2: f64 = bins.iter().map(|&b| (wavenumber(b, nn) as f64).powi(2)).sum();
                    let reg = if k2 == 0.0 { 1.0 } else { 1e-4 * (4.0 * k2 * k2 + lambda * k2) };
                    let m = m + Matrix3::identity() * Complex64::new(reg, 0.0);
                    inv.push(m.try_inverse().unwrap_or_else(Matrix3::identity));
                }
            }
        }
        Self {
            lattice: lattice.clone(),
            n,
            inv,
        }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let nc = 3 * self.n;
        let np = self.lattice.points();
        let cols: Vec<[Vec<f64>; 3]> = (0..self.n)
            .into_par_iter()
            .map(|a| {
                let hats: Vec<Vec<Complex64>> = (0..3)
                    .map(|mu| self.lattice.forward(&(0..np).map(|p| r[p * nc + cv(a, mu)]).collect::<Vec<_>>()))
                    .collect();
                let mut outs = vec![vec![Complex64::new(0.0, 0.0); np]; 3];
                for q in 0..np {
                    let m = &self.inv[q];
                    for mu in 0..3 {
                        outs[mu][q] = (0..3).map(|b| m[(mu, b)] * hats[b][q]).sum();
                    }
                }
                let mut it = outs.into_iter().map(|o| self.lattice.inverse_real(o));
                [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
            })
            .collect();
        let mut out = vec![0.0; np * nc];
        for (a, c3) in cols.iter().enumerate() {
            for mu in 0..3 {
                for p in 0..np {
                    out[p * nc + cv(a, mu)] = c3[mu][p];
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// PCG on `JᵀJ d = b`; returns the iterate and the number of iterations.
fn pcg(jac: &Jacobian, pre: &Preconditioner, b: &[f64], rtol: f64, max_iters: usize) -> (Vec<f64>, usize) {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return (x, 0);
    }
    let mut z = pre.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iters {
        let q = jac.normal(&p);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return (x, it);
        }
        let alpha = rz / pq;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if dot(&r, &r).sqrt() <= rtol * bnorm {
            return (x, it);
        }
        z = pre.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iters)
}

/// Gauss–Newton on `(E, √λ div A)` from `cfg0`.
pub fn gauss_newton_solve(cfg0: &GaugeConfig, opts: &SolveOptions) -> Result<(GaugeConfig, SolveReport), SolveError> {
    opts.validate()?;
    cfg0.require_spectral("solver")?;
    let lambda = opts.gauge_penalty;
    let sl = lambda.sqrt();
    let pre = Preconditioner::new(cfg0.lattice(), cfg0.dim(), lambda);
    let mut cfg = cfg0.clone();
    let mut res = residual(&cfg, lambda)?;
    let mut report = SolveReport {
        iterations: 0,
        residual: res.e_inf,
        min_det_trajectory: vec![cfg.min_det_y()],
        objective_trajectory: vec![res.phi * cfg.lattice().cell_volume()],
        action: 0.0,
        converged: false,
        cg_iterations: 0,
        coupling_scale: 1.0,
    };
    let mut it = 0;
    while res.e_inf > opts.residual_tol && it < opts.max_iters {
        it += 1;
        let jac = Jacobian::assemble(&cfg, lambda)?;
        let div: Vec<f64> = res.div.iter().map(|x| sl * x).collect();
        let g = jac.apply_t(&res.e, &div);
        let b: Vec<f64> = g.iter().map(|x| -x).collect();
        let rtol = opts.forcing * res.e_inf.min(1.0);
        let (d, cg_its) = pcg(&jac, &pre, &b, rtol, opts.cg_max_iters);
        report.cg_iterations += cg_its;
        let slope = dot(&g, &d);
        let mut step = 1.0;
        let mut accepted = None;
        let mut singular = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = cfg.samples().iter().zip(&d).map(|(a, x)| a + step * x).collect();
            match cfg.with_samples(trial) {
                Ok(c) => {
                    let r = residual(&c, lambda)?;
                    if r.phi <= res.phi + opts.armijo * step * slope {
                        accepted = Some((c, r));
                        break;
                    }
                }
                Err(FieldError::SingularY { min_det }) => singular = Some(min_det),
                Err(e) => return Err(e.into()),
            }
            step *= opts.backtrack;
        }
        match accepted {
            Some((c, r)) => {
                cfg = c;
                res = r;
                report.min_det_trajectory.push(cfg.min_det_y());
                report.objective_trajectory.push(res.phi * cfg.lattice().cell_volume());
            }
            None => {
                if let Some(min_det) = singular {
                    return Err(SolveError::SingularYEncountered {
                        iteration: it,
                        min_det,
                        trajectory: report.min_det_trajectory,
                    });
                }
                break;
            }
        }
    }
    report.iterations = it;
    report.residual = res.e_inf;
    report.action = action(&cfg)?;
    report.converged = res.e_inf <= opts.residual_tol;
    if report.converged {
        Ok((cfg, report))
    } else {
        Err(SolveError::NoConvergence {
            report: Box::new(report),
            last: Box::new(cfg),
        })
    }
}

/// Outcome of a continuation sweep: one report per completed stage.
#[derive(Debug)]
pub struct Continuation {
    pub reports: Vec<SolveReport>,
    /// Solution of the last completed stage.
    pub solution: Option<GaugeConfig>,
    /// Error that stopped the sweep, if any.
    pub failure: Option<SolveError>,
}

/// Solves with the auxiliary bracket scaled by `s = 0, 1/m, …, 1`, each stage starting from
/// the previous solution.
pub fn continuation_in_coupling(cfg0: &GaugeConfig, steps: usize, opts: &SolveOptions) -> Result<Continuation, SolveError> {
    opts.validate()?;
    if steps == 0 {
        return Err(SolveError::InvalidOptions("continuation needs at least one step".into()));
    }
    let alg = cfg0.alg().clone();
    let full = cfg0.aux().clone();
    let mut out = Continuation {
        reports: Vec::with_capacity(steps + 1),
        solution: None,
        failure: None,
    };
    let mut start = cfg0.clone();
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        let aux = Arc::new(full.scaled(&alg, s));
        let stage = match start.with_aux(aux) {
            Ok(c) => c,
            Err(FieldError::SingularY { min_det }) => {
                out.failure = Some(SolveError::SingularYEncountered {
                    iteration: 0,
                    min_det,
                    trajectory: Vec::new(),
                });
                return Ok(out);
            }
            Err(e) => return Err(e.into()),
        };
        match gauss_newton_solve(&stage, opts) {
            Ok((c, mut r)) => {
                r.coupling_scale = s;
                out.reports.push(r);
                start = c.clone();
                out.solution = Some(c);
            }
            Err(SolveError::NoConvergence { mut report, last }) => {
                report.coupling_scale = s;
                out.reports.push((*report).clone());
                out.failure = Some(SolveError::NoConvergence { report, last });
                return Ok(out);
            }
            Err(e @ SolveError::SingularYEncountered { .. }) => {
                out.failure = Some(e);
                return Ok(out);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
