use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::aux::{build_aux_pair, build_aux_su2, AuxBracket, CommutingPair};
use crate::geometry::{make_lattice, random_gauge_modes, random_modes, DerivMode, Signature};
use crate::lie::{builtin_algebra, su2};

fn su2_aux(alg: &LieAlgebra) -> AuxBracket {
    build_aux_su2(alg, &DVector::from_vec(vec![0.3, -0.5, 0.8])).unwrap()
}

fn pair_aux(alg: &LieAlgebra, seed: u64) -> AuxBracket {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_aux_pair(alg, &CommutingPair::random(alg, &mut rng).unwrap()).unwrap()
}

fn random_cfg(alg: LieAlgebra, aux: AuxBracket, n: usize, sig: Signature, seed: u64, frac: f64) -> GaugeConfig {
    let lat = make_lattice(n, sig, DerivMode::Spectral).unwrap();
    let amp = frac * guard_amplitude(&alg, &aux, lat.metric()).min(1.0);
    let field = random_gauge_modes(&lat, alg.dim(), seed, 2, amp).unwrap();
    GaugeConfig::from_field(Arc::new(alg), Arc::new(aux), lat, &field).unwrap()
}

fn su2_cfg(seed: u64) -> GaugeConfig {
    let alg = su2();
    let aux = su2_aux(&alg);
    random_cfg(alg, aux, 16, Signature::Euclidean, seed, 0.8)
}

fn xi_field(cfg: &GaugeConfig, seed: u64, amp: f64) -> Vec<f64> {
    random_modes(cfg.lattice(), cfg.dim(), seed, 2, amp).unwrap().samples(cfg.lattice())
}

fn assert_pass(r: &ResidualReport) {
    assert!(r.pass, "{r}");
}

fn configs() -> Vec<GaugeConfig> {
    let mut out = Vec::new();
    for sig in [Signature::Euclidean, Signature::Lorentzian] {
        let alg = su2();
        out.push(random_cfg(alg.clone(), su2_aux(&alg), 16, sig, 11, 0.8));
        let su3 = builtin_algebra("su3").unwrap();
        out.push(random_cfg(su3.clone(), pair_aux(&su3, 3), 16, sig, 12, 0.8));
        let so4 = builtin_algebra("so4").unwrap();
        out.push(random_cfg(so4.clone(), pair_aux(&so4, 4), 16, sig, 13, 0.8));
    }
    out
}

#[test]
fn curvature_constant_su2() {
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let (c1, c2) = (0.7, -0.4);
    let mut s = vec![0.0; lat.points() * 9];
    for p in 0..lat.points() {
        s[p * 9 + cv(0, 0)] = c1;
        s[p * 9 + cv(1, 1)] = c2;
    }
    let cfg = GaugeConfig::new(Arc::new(alg.clone()), Arc::new(AuxBracket::zero(&alg)), lat, s).unwrap();
    let c = curvature(&cfg);
    assert!((c.f2[2 * 9 + 1] - 0.5 * c1 * c2).abs() < 1e-15);
    assert!(c.antisymmetry_residual() < 1e-15);
}

#[test]
fn abelian_pure_gauge_and_single_mode() {
    let alg = builtin_algebra("abelian(3)").unwrap();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let chi = random_modes(&lat, 3, 5, 2, 1.0).unwrap();
    let mut s = vec![0.0; lat.points() * 9];
    for mu in 0..3 {
        let mut al = [0u8; 3];
        al[mu] = 1;
        let d = chi.derivative_samples(&lat, al);
        for p in 0..lat.points() {
            for a in 0..3 {
                s[p * 9 + cv(a, mu)] = d[p * 3 + a];
            }
        }
    }
    let aux = Arc::new(AuxBracket::zero(&alg));
    let cfg = GaugeConfig::new(Arc::new(alg.clone()), aux.clone(), lat.clone(), s).unwrap();
    assert!(max_abs(&curvature(&cfg).fdual) < 1e-13);
    assert!(bianchi_residual(&cfg).unwrap().residual < 1e-13);

    // A_2 = sin(x), A_1 = cos(z): curl = (0·, ...) analytic
    let s = {
        let mut s = vec![0.0; lat.points() * 9];
        for p in 0..lat.points() {
            let x = lat.coords(p);
            s[p * 9 + cv(0, 1)] = x[0].sin();
            s[p * 9 + cv(0, 0)] = x[2].cos();
        }
        s
    };
    let cfg = GaugeConfig::new(Arc::new(alg), aux, lat.clone(), s).unwrap();
    let f = curvature(&cfg).fdual;
    for p in 0..lat.points() {
        let x = lat.coords(p);
        // curl = (∂_y A_z − ∂_z A_y, ∂_z A_x − ∂_x A_z, ∂_x A_y − ∂_y A_x)
        let want = [0.0, -x[2].sin(), x[0].cos()];
        for s in 0..3 {
            assert!((f[p * 9 + cv(0, s)] - want[s]).abs() < 1e-13);
        }
    }
}

#[test]
fn y_operator_identity_cases_and_symmetry() {
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat).unwrap();
    let y = assemble_y(&zero).unwrap();
    assert!(y.matrices.iter().all(|m| (m - DMatrix::identity(9, 9)).amax() == 0.0));
    for cfg in configs() {
        let y = assemble_y(&cfg).unwrap();
        assert!(y.symmetry_residual() < 1e-13, "{}", y.symmetry_residual());
        assert!(y.min_det > 0.01);
    }
}

#[test]
fn k_strength_relations() {
    for cfg in configs() {
        let k = compute_k(&cfg).unwrap();
        assert!(k.y_residual < 1e-12, "{}", k.y_residual);
        assert!(k.relation_residual < 1e-12, "{}", k.relation_residual);
    }
    let alg = su2();
    let cfg = random_cfg(alg.clone(), AuxBracket::zero(&alg), 8, Signature::Euclidean, 3, 0.5);
    let k = compute_k(&cfg).unwrap();
    assert_eq!(k.k, k.fdual);
}

#[test]
fn k_neumann_series() {
    let base = su2_cfg(21);
    let mut errs = Vec::new();
    for t in [0.2, 0.1] {
        let cfg = base.with_samples(base.samples().iter().map(|x| x * t).collect()).unwrap();
        let y = assemble_y(&cfg).unwrap();
        let ks = compute_k(&cfg).unwrap();
        let mut err = 0.0f64;
        for p in 0..cfg.points() {
            let x = DMatrix::identity(9, 9) - &y.matrices[p];
            let f = DVector::from_column_slice(&ks.fdual[p * 9..(p + 1) * 9]);
            let approx = &f + &x * &f + &x * &x * &f;
            err = err.max((approx - DVector::from_column_slice(&ks.k[p * 9..(p + 1) * 9])).amax());
        }
        errs.push(err);
    }
    // F = O(t), X = O(t): error O(t⁴)
    let slope = (errs[0] / errs[1]).log2();
    assert!(slope > 3.7, "{slope}");
}

#[test]
fn lagrangian_forms() {
    for cfg in configs() {
        let l = lagrangian(&cfg).unwrap();
        assert!(l.form_residual < 1e-12, "{}", l.form_residual);
        assert!(l.dual_form_residual < 1e-13, "{}", l.dual_form_residual);
    }
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat).unwrap();
    assert!(lagrangian(&zero).unwrap().density.iter().all(|x| *x == 0.0));
    assert!(field_equations(&zero).unwrap().iter().all(|x| *x == 0.0));
}

#[test]
fn field_equations_match_action_derivative() {
    for cfg in configs().into_iter().take(4) {
        let da = random_gauge_modes(cfg.lattice(), cfg.dim(), 77, 2, 1.0).unwrap().samples(cfg.lattice());
        let e = field_equations(&cfg).unwrap();
        let want = pairing(&cfg, &e, &da);
        let mut errs = Vec::new();
        for t in [1e-2, 5e-3] {
            let shift = |s: f64| {
                let smp: Vec<f64> = cfg.samples().iter().zip(&da).map(|(a, d)| a + s * d).collect();
                action(&cfg.with_samples(smp).unwrap()).unwrap()
            };
            errs.push(((shift(t) - shift(-t)) / (2.0 * t) - want).abs());
        }
        let slope = (errs[0] / errs[1]).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope} errs {errs:?}");
    }
}

#[test]
fn yang_mills_reduction() {
    let alg = su2();
    let cfg = random_cfg(alg.clone(), AuxBracket::zero(&alg), 16, Signature::Euclidean, 9, 0.5);
    let e = field_equations(&cfg).unwrap();
    let f = curvature(&cfg).fdual;
    let d = cfg.grid_gradient(&f, 9);
    let eps = cfg.lattice().metric().cross_nonzeros();
    let mut want = vec![0.0; e.len()];
    for p in 0..cfg.points() {
        let a = &cfg.samples()[p * 9..(p + 1) * 9];
        for &(mu, s, v, w) in &eps {
            let col = |x: &[f64], m: usize| -> Vec<f64> { (0..3).map(|c| x[cv(c, m)]).collect() };
            let br = alg.bracket_raw(&col(a, s), &col(&f[p * 9..(p + 1) * 9], v));
            for c in 0..3 {
                want[p * 9 + cv(c, mu)] += 2.0 * w * (d[s][p * 9 + cv(c, v)] + br[c]);
            }
        }
    }
    assert!(max_abs_diff(&e, &want) < 1e-12 * max_abs(&want).max(1.0));
}

#[test]
fn bianchi_spectral_and_convergence() {
    for cfg in configs() {
        assert_pass(&bianchi_residual(&cfg).unwrap());
    }
    let alg = su2();
    let aux = su2_aux(&alg);
    let mut res = Vec::new();
    for n in [16, 32] {
        let lat = make_lattice(n, Signature::Euclidean, DerivMode::Central2).unwrap();
        let amp = 0.5 * guard_amplitude(&alg, &aux, lat.metric());
        let field = random_gauge_modes(&lat, 3, 4, 1, amp).unwrap();
        let cfg = GaugeConfig::from_field(Arc::new(alg.clone()), Arc::new(aux.clone()), lat, &field).unwrap();
        res.push(bianchi_residual(&cfg).unwrap().residual);
    }
    let slope = (res[0] / res[1]).log2();
    assert!((slope - 2.0).abs() < 0.2, "{slope}");
}

#[test]
fn gauge_variation_special_cases() {
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat.clone()).unwrap();
    let xi = xi_field(&zero, 3, 0.5);
    let da = gauge_variation(&zero, &xi).unwrap();
    for mu in 0..3 {
        let mut al = [0u8; 3];
        al[mu] = 1;
        let d = cfg_derivative(&zero, &xi, al);
        for p in 0..zero.points() {
            for a in 0..3 {
                assert!((da[p * 9 + cv(a, mu)] - d[p * 3 + a]).abs() < 1e-13);
            }
        }
    }
    let cfg = random_cfg(alg.clone(), AuxBracket::zero(&alg), 8, Signature::Euclidean, 2, 0.5);
    let c = [0.2, -0.1, 0.4];
    let xi: Vec<f64> = (0..cfg.points()).flat_map(|_| c).collect();
    let da = gauge_variation(&cfg, &xi).unwrap();
    for p in 0..cfg.points() {
        for mu in 0..3 {
            let a: Vec<f64> = (0..3).map(|b| cfg.samples()[p * 9 + cv(b, mu)]).collect();
            let r = alg.bracket_raw(&a, &c);
            for b in 0..3 {
                assert!((da[p * 9 + cv(b, mu)] - r[b]).abs() < 1e-14);
            }
        }
    }
}

fn cfg_derivative(cfg: &GaugeConfig, x: &[f64], alpha: [u8; 3]) -> Vec<f64> {
    let n = cfg.dim();
    let np = cfg.points();
    let mut out = vec![0.0; np * n];
    for c in 0..n {
        let comp: Vec<f64> = (0..np).map(|p| x[p * n + c]).collect();
        for (p, v) in cfg.lattice().derivative_multi(&comp, alpha).into_iter().enumerate() {
            out[p * n + c] = v;
        }
    }
    out
}

#[test]
fn noether_identity_off_shell() {
    for (i, cfg) in configs().into_iter().enumerate() {
        let xi = xi_field(&cfg, 100 + i as u64, 0.7);
        assert_pass(&noether_identity(&cfg, &xi).unwrap());
    }
}

#[test]
fn linearize_properties() {
    let cfg = su2_cfg(5);
    let da = random_gauge_modes(cfg.lattice(), 3, 8, 2, 1.0).unwrap().samples(cfg.lattice());
    let l1 = linearize(&cfg, &da).unwrap();
    let da2: Vec<f64> = da.iter().map(|x| 2.0 * x).collect();
    let l2 = linearize(&cfg, &da2).unwrap();
    for (a, b) in [(&l1.df, &l2.df), (&l1.dk, &l2.dk), (&l1.de, &l2.de)] {
        let want: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert!(max_abs_diff(b, &want) < 1e-13 * max_abs(b).max(1.0));
    }
    let l0 = linearize(&cfg, &vec![0.0; da.len()]).unwrap();
    assert!(l0.dk.iter().chain(&l0.de).all(|x| *x == 0.0));
    let mut errs = Vec::new();
    for t in [1e-3, 5e-4] {
        let at = |s: f64| {
            let smp: Vec<f64> = cfg.samples().iter().zip(&da).map(|(a, d)| a + s * d).collect();
            let c = cfg.with_samples(smp).unwrap();
            (compute_k(&c).unwrap().k, field_equations(&c).unwrap())
        };
        let (kp, ep) = at(t);
        let (km, em) = at(-t);
        let fdk: Vec<f64> = kp.iter().zip(&km).map(|(a, b)| (a - b) / (2.0 * t)).collect();
        let fde: Vec<f64> = ep.iter().zip(&em).map(|(a, b)| (a - b) / (2.0 * t)).collect();
        errs.push(max_abs_diff(&fdk, &l1.dk).max(max_abs_diff(&fde, &l1.de)));
    }
    let slope = (errs[0] / errs[1]).log2();
    assert!((slope - 2.0).abs() < 0.2, "{slope}");
}

#[test]
fn k_variation_identity() {
    for (i, cfg) in configs().into_iter().enumerate() {
        let xi = xi_field(&cfg, 30 + i as u64, 0.7);
        assert_pass(&k_variation_residual(&cfg, &xi).unwrap());
    }
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat).unwrap();
    let xi = xi_field(&zero, 1, 0.7);
    assert_eq!(k_variation_residual(&zero, &xi).unwrap().residual, 0.0);
}

#[test]
fn commutator_identity() {
    for (i, cfg) in configs().into_iter().enumerate() {
        let x1 = xi_field(&cfg, 40 + i as u64, 0.6);
        let x2 = xi_field(&cfg, 50 + i as u64, 0.6);
        assert_pass(&commutator_residual(&cfg, &x1, &x2).unwrap());
        let same = commutator_residual(&cfg, &x1, &x1).unwrap();
        assert!(same.residual < 1e-13, "{same}");
    }
}

#[test]
fn rotation_closed_forms() {
    let alg = su2();
    for xi in [vec![0.3, -1.1, 0.7], vec![1e-6, 2e-6, -1e-6], vec![2.5, 0.1, 0.0]] {
        let xi = DVector::from_vec(xi);
        let (r, rp) = rotation_ops(&alg, &xi).unwrap();
        let ad = crate::lie::ad_matrix(&alg, &xi).unwrap();
        assert!((&r - exp_series(&ad, 30)).amax() < 1e-12);
        assert!((&rp - dexp_series(&ad, 30)).amax() < 1e-12);
        assert!((r.transpose() * alg.killing() * &r - alg.killing()).amax() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
    let (r, rp) = rotation_ops(&alg, &DVector::zeros(3)).unwrap();
    assert_eq!(r, DMatrix::identity(3, 3));
    assert_eq!(rp, DMatrix::identity(3, 3));
}

#[test]
fn composition_orders() {
    let alg = su2();
    let x1 = DVector::from_vec(vec![0.4, -0.3, 0.9]);
    let x2 = DVector::from_vec(vec![-0.2, 0.8, 0.5]);
    let (right, _left) = composition_order(&alg, &x1, &x2, 1e-2).unwrap();
    assert!(right >= 1.9, "{right}");
    assert!(composition_check(&alg, &x1, &DVector::zeros(3), 0.3).unwrap().residual < 1e-14);
    assert!(composition_check(&alg, &DVector::zeros(3), &x2, 0.3).unwrap().residual < 1e-14);
}

#[test]
fn finite_gauge_expansion_and_invariance() {
    let cfg = su2_cfg(17);
    let xi = xi_field(&cfg, 18, 1.0);
    let dv = gauge_variation(&cfg, &xi).unwrap();
    let mut errs = Vec::new();
    for t in [2e-2, 1e-2] {
        let xt: Vec<f64> = xi.iter().map(|x| t * x).collect();
        let g = finite_gauge_su2(&cfg, &xt).unwrap();
        let lin: Vec<f64> = cfg.samples().iter().zip(&dv).map(|(a, d)| a + t * d).collect();
        errs.push(max_abs_diff(g.samples(), &lin));
    }
    let slope = (errs[0] / errs[1]).log2();
    assert!((slope - 2.0).abs() < 0.15, "{slope}");

    // off-shell the closed form only agrees with the gauge orbit to first order
    let s0 = action(&cfg).unwrap();
    let big = xi_field(&cfg, 19, 1.0);
    let ds: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|t| {
            let xt: Vec<f64> = big.iter().map(|x| t * x).collect();
            (transformed_action(&cfg, &xt).unwrap() - s0).abs()
        })
        .collect();
    assert!((ds[0] / ds[1]).log2() > 1.9, "{ds:?}");

    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let alg = su2();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat).unwrap();
    let c: Vec<f64> = (0..zero.points()).flat_map(|_| [0.5, -0.2, 0.9]).collect();
    let g = finite_gauge_su2(&zero, &c).unwrap();
    assert!(max_abs(g.samples()) < 1e-15);
    // pure gauge: K stays zero
    let xi = xi_field(&zero, 20, 0.8);
    assert!(transformed_action(&zero, &xi).unwrap().abs() < 1e-13);
}

#[test]
fn noether_current_structure() {
    for cfg in configs() {
        let nc = noether_current(&cfg).unwrap();
        assert!(nc.div_residual <= 1e-13 * max_abs(&nc.j).max(1.0), "{}", nc.div_residual);
        assert!(nc.rearrangement_residual < 1e-12, "{}", nc.rearrangement_residual);
    }
}

#[test]
fn charges_stokes() {
    for cfg in configs() {
        let l = cfg.lattice().volume().cbrt();
        for axis in 0..3 {
            let w = Window::new(axis, 0.37 * l, [0.1 * l, 0.2 * l], [0.7 * l, 0.55 * l]);
            let q = charge(&cfg, &w).unwrap();
            assert_pass(&q.stokes);
        }
    }
    let alg = su2();
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let zero = GaugeConfig::zero(Arc::new(alg.clone()), Arc::new(su2_aux(&alg)), lat).unwrap();
    let q = charge(&zero, &Window::new(2, 1.0, [0.5, 0.5], [2.0, 3.0])).unwrap();
    assert!(q.surface.iter().chain(&q.loop_charge).all(|x| *x == 0.0));
}

#[test]
fn stress_tensor_identities() {
    for cfg in configs() {
        let st = stress_tensor(&cfg).unwrap();
        for r in &st.reports[..3] {
            assert_pass(r);
        }
    }
}

#[test]
fn rigid_abelian_symmetry() {
    let alg = su2();
    let aux = Arc::new(su2_aux(&alg));
    let x1 = DVector::from_vec(vec![0.3, 0.7, -0.2]);
    let x2 = DVector::from_vec(vec![-0.5, 0.1, 0.4]);
    // constant fields
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let s: Vec<f64> = (0..lat.points()).flat_map(|_| [0.1, 0.2, -0.1, 0.05, 0.0, 0.3, -0.2, 0.1, 0.0]).collect();
    let cfg = GaugeConfig::new(Arc::new(alg.clone()), aux.clone(), lat, s).unwrap();
    for r in rigid_symmetry_abelian(&cfg, &x1, &x2) {
        assert_pass(&r);
    }
    let zero = DVector::zeros(3);
    let r = rigid_symmetry_abelian(&cfg, &zero, &zero);
    assert!(r.iter().all(|r| r.residual == 0.0));

    // null plane wave on the Lorentzian torus: curl curl A = 0 with curl A ≠ 0
    let lat = make_lattice(8, Signature::Lorentzian, DerivMode::Spectral).unwrap();
    let pol = [0.2, -0.1, 0.3];
    let s: Vec<f64> = (0..lat.points())
        .flat_map(|p| {
            let x = lat.coords(p);
            let ph = (x[0] + x[1]).sin();
            let mut v = [0.0; 9];
            for a in 0..3 {
                // polarization along z, transverse to k = (1, 1, 0)
                v[cv(a, 2)] = pol[a] * ph;
            }
            v
        })
        .collect();
    let cfg = GaugeConfig::new(Arc::new(alg), aux, lat, s).unwrap();
    for r in rigid_symmetry_abelian(&cfg, &x1, &x2) {
        assert_pass(&r);
    }
}

#[test]
fn covariant_formulation() {
    for cfg in configs().into_iter().filter(|c| c.aux().provenance().pairs().is_some()) {
        for r in covariant_general_residuals(&cfg).unwrap() {
            assert_pass(&r);
        }
    }
}

#[test]
fn guard_rejects_singular() {
    // constant A = A0/λ with λ a real eigenvalue of X(A0) = 1 − Y(A0) makes Y exactly singular
    let alg = su2();
    let aux = su2_aux(&alg);
    let lat = make_lattice(8, Signature::Euclidean, DerivMode::Spectral).unwrap();
    let k = Kernel::new(&alg, &aux, lat.metric()).unwrap();
    let a0 = [0.4, -0.3, 0.2, 0.1, 0.5, -0.6, 0.3, 0.2, 0.1];
    let x = DMatrix::identity(9, 9) - k.y_matrix(&a0);
    let lam = x
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-12 && z.re.abs() > 1e-6)
        .map(|z| z.re)
        .next()
        .expect("real eigenvalue");
    let s: Vec<f64> = (0..lat.points()).flat_map(|_| a0.map(|v| v / lam)).collect();
    let err = GaugeConfig::new(Arc::new(alg), Arc::new(aux), lat, s).unwrap_err();
    assert!(matches!(err, FieldError::SingularY { .. }), "{err}");
}
