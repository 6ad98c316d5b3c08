//! Acceptance criteria. Runs as a plain binary so that every criterion prints one line.

use std::sync::Arc;
use std::time::{Duration, Instant};

use g3_core::aux::{
    aux_jacobi_residual, build_aux_ccv, build_aux_pair, build_aux_su2, build_aux_sum, cartan_directions,
    classify_aux_structure, h_residual, random_unit_vector, solve_h_nullspace, AuxBracket, CommutingPair,
};
use g3_core::fields::{
    action, bianchi_residual, charge, charge_covariance, closure_report, commutator_residual, compute_k, curvature,
    dexp_series, exp_series, field_equations, guard_amplitude, k_rotation_report, k_variation_residual, lagrangian,
    linearize, noether_current, noether_identity, pairing, rotation_ops, stress_tensor, transformed_action,
    composition_order, GaugeConfig, Window,
};
use g3_core::geometry::{make_lattice, random_gauge_modes, random_modes, DerivMode, Signature};
use g3_core::lie::{ad_matrix, builtin_algebra, su2, LieAlgebra};
use g3_core::solver::{continuation_in_coupling, gauss_newton_solve, SolveOptions};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(t: Instant, limit: Duration) -> bool {
    t.elapsed() <= limit
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn pair_aux(alg: &LieAlgebra, seed: u64) -> AuxBracket {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_aux_pair(alg, &CommutingPair::random(alg, &mut rng).unwrap()).unwrap()
}

fn su2_aux(alg: &LieAlgebra) -> AuxBracket {
    build_aux_su2(alg, &DVector::from_vec(vec![0.3, -0.5, 0.8])).unwrap()
}

fn random_cfg(alg: &LieAlgebra, aux: &AuxBracket, n: usize, sig: Signature, seed: u64, frac: f64) -> GaugeConfig {
    let lat = make_lattice(n, sig, DerivMode::Spectral).unwrap();
    let amp = frac * guard_amplitude(alg, aux, lat.metric()).min(1.0);
    let field = random_gauge_modes(&lat, alg.dim(), seed, 2, amp).unwrap();
    GaugeConfig::from_field(Arc::new(alg.clone()), Arc::new(aux.clone()), lat, &field).unwrap()
}

fn xi_field(cfg: &GaugeConfig, seed: u64, amp: f64) -> Vec<f64> {
    random_modes(cfg.lattice(), cfg.dim(), seed, 2, amp).unwrap().samples(cfg.lattice())
}

fn c1_algebraic_gate() -> Outcome {
    let t = Instant::now();
    let alg = su2();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut h, mut j) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let scale = rng.gen_range(0.1..3.0);
        let v = random_unit_vector(&alg, &mut rng) * scale;
        let b = build_aux_su2(&alg, &v).unwrap();
        h = h.max(h_residual(&alg, &b));
        j = j.max(aux_jacobi_residual(&b));
    }
    let pass = h <= 1e-13 && j <= 1e-13 && within(t, Duration::from_secs(1));
    outcome(pass, format!("max H residual {h:.2e}, max Jacobi {j:.2e}, {:?}", t.elapsed()))
}

fn c2_nullspace() -> Outcome {
    let t = Instant::now();
    let d_su2 = solve_h_nullspace(&su2()).unwrap();
    let d_ab = solve_h_nullspace(&builtin_algebra("abelian(3)").unwrap()).unwrap();
    let mut worst = 0.0f64;
    for label in ["su2", "su3", "so4"] {
        let r = solve_h_nullspace(&builtin_algebra(label).unwrap()).unwrap();
        worst = worst.max(r.containment_residual);
    }
    let pass = d_su2.dimension == 3 && d_ab.dimension == 9 && worst <= 1e-10 && within(t, Duration::from_secs(10));
    outcome(
        pass,
        format!(
            "dim su2 {}, dim abelian(3) {}, containment {worst:.2e}, {:?}",
            d_su2.dimension,
            d_ab.dimension,
            t.elapsed()
        ),
    )
}

fn c3_builders() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    let mut good = 0.0f64;
    for label in ["su2", "so4"] {
        let alg = builtin_algebra(label).unwrap();
        let v = random_unit_vector(&alg, &mut rng);
        good = good.max(aux_jacobi_residual(&build_aux_ccv(&alg, &v).unwrap()));
    }
    let mut bad = f64::INFINITY;
    for label in ["su3", "su4", "so5", "so6"] {
        let alg = builtin_algebra(label).unwrap();
        let v = random_unit_vector(&alg, &mut rng);
        bad = bad.min(aux_jacobi_residual(&build_aux_ccv(&alg, &v).unwrap()));
    }
    ok &= good <= 1e-12 && bad > 1e-6;
    let mut pair = 0.0f64;
    for label in ["su3", "su4", "so4", "so5", "so6", "direct_sum(su2,su3)"] {
        let alg = builtin_algebra(label).unwrap();
        let p = CommutingPair::random(&alg, &mut rng).unwrap();
        let b = build_aux_pair(&alg, &p).unwrap();
        pair = pair.max(h_residual(&alg, &b)).max(aux_jacobi_residual(&b));
        let dirs = cartan_directions(&alg);
        let pairs: Vec<CommutingPair> = dirs
            .windows(2)
            .map(|w| CommutingPair::new(&alg, w[0].clone(), w[1].clone()).unwrap())
            .collect();
        let s = build_aux_sum(&alg, &pairs).unwrap();
        pair = pair.max(h_residual(&alg, &s)).max(aux_jacobi_residual(&s));
    }
    ok &= pair <= 1e-12 && within(t, Duration::from_secs(30));
    outcome(
        ok,
        format!(
            "ccv good {good:.2e}, ccv bad min {bad:.2e}, pair/sum {pair:.2e}, {:?}",
            t.elapsed()
        ),
    )
}

fn c4_classification() -> Outcome {
    let alg = su2();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = random_unit_vector(&alg, &mut rng) * 1.7;
    let r1 = classify_aux_structure(&alg, &build_aux_su2(&alg, &v).unwrap()).unwrap();
    let wv = r1
        .entries
        .iter()
        .find(|(n, _)| n.starts_with("[w_i,v]_B"))
        .map(|e| e.1)
        .unwrap_or(f64::INFINITY);
    let su3 = builtin_algebra("su3").unwrap();
    let dirs = cartan_directions(&su3);
    let p = CommutingPair::new(&su3, dirs[0].clone(), dirs[1].clone()).unwrap();
    let r2 = classify_aux_structure(&su3, &build_aux_pair(&su3, &p).unwrap()).unwrap();
    let worst = r1.max_residual().max(r2.max_residual());
    outcome(
        worst <= 1e-12 && wv <= 1e-12 && r1.dims == (1, 0, 2) && r2.dims == (2, 0, 6),
        format!(
            "su2+v split {:?}, su3+pair split {:?}, max {worst:.2e}, [w_i,v]_B {wv:.2e}",
            r1.dims, r2.dims
        ),
    )
}

fn c5_identities() -> Outcome {
    let t = Instant::now();
    let s2 = su2();
    let s3 = builtin_algebra("su3").unwrap();
    let o4 = builtin_algebra("so4").unwrap();
    let setups = [(s2.clone(), su2_aux(&s2)), (s3.clone(), pair_aux(&s3, 3)), (o4.clone(), pair_aux(&o4, 4))];
    let mut worst = [0.0f64; 5];
    for seed in 0..20u64 {
        let sig = if seed % 2 == 0 { Signature::Euclidean } else { Signature::Lorentzian };
        for (alg, aux) in &setups {
            let cfg = random_cfg(alg, aux, 16, sig, 1000 + seed, 0.8);
            worst[0] = worst[0].max(compute_k(&cfg).unwrap().relation_residual);
            worst[1] = worst[1].max(lagrangian(&cfg).unwrap().dual_form_residual);
            worst[2] = worst[2].max(bianchi_residual(&cfg).unwrap().relative());
            let x1 = xi_field(&cfg, 2000 + seed, 0.7);
            let x2 = xi_field(&cfg, 3000 + seed, 0.7);
            worst[3] = worst[3].max(k_variation_residual(&cfg, &x1).unwrap().relative());
            worst[4] = worst[4].max(commutator_residual(&cfg, &x1, &x2).unwrap().relative());
        }
    }
    let pass = worst.iter().all(|w| *w <= 1e-10) && within(t, Duration::from_secs(300));
    outcome(
        pass,
        format!(
            "K {:.1e}, dual form {:.1e}, Bianchi {:.1e}, K-variation {:.1e}, commutator {:.1e}, {:?}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            t.elapsed()
        ),
    )
}

fn c6_gauge_invariance() -> Outcome {
    let s2 = su2();
    let s3 = builtin_algebra("su3").unwrap();
    let mut off = 0.0f64;
    for (i, (alg, aux)) in [(s2.clone(), su2_aux(&s2)), (s3.clone(), pair_aux(&s3, 6))].iter().enumerate() {
        for sig in [Signature::Euclidean, Signature::Lorentzian] {
            let cfg = random_cfg(alg, aux, 16, sig, 60 + i as u64, 0.8);
            let xi = xi_field(&cfg, 70 + i as u64, 0.7);
            off = off.max(noether_identity(&cfg, &xi).unwrap().relative());
        }
    }
    let start = random_cfg(&s2, &su2_aux(&s2), 16, Signature::Euclidean, 41, 0.8);
    let opts = SolveOptions {
        residual_tol: 1e-12,
        ..Default::default()
    };
    let (sol, rep) = gauss_newton_solve(&start, &opts).unwrap();
    let xi = random_modes(sol.lattice(), 3, 5, 1, 0.3).unwrap().samples(sol.lattice());
    let s1 = transformed_action(&sol, &xi).unwrap();
    let finite = (s1 - rep.action).abs() / rep.action.abs();
    outcome(
        off <= 1e-8 && finite <= 1e-8,
        format!("off-shell Noether {off:.2e}, finite transform |dS|/|S| {finite:.2e} on a solution (S = {:.3e})", rep.action),
    )
}

fn c7_rotations() -> Outcome {
    let alg = su2();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let xi = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let (r, rp) = rotation_ops(&alg, &xi).unwrap();
        let ad = ad_matrix(&alg, &xi).unwrap();
        worst = worst.max((&r - exp_series(&ad, 40)).amax()).max((&rp - dexp_series(&ad, 40)).amax());
    }
    let x1 = DVector::from_vec(vec![0.4, -0.3, 0.9]);
    let x2 = DVector::from_vec(vec![-0.2, 0.8, 0.5]);
    let (order, _) = composition_order(&alg, &x1, &x2, 1e-2).unwrap();
    outcome(
        worst <= 1e-12 && order >= 2.0,
        format!("series oracle {worst:.2e}, composition order {order:.3}"),
    )
}

fn c8_euler_lagrange() -> Outcome {
    let s2 = su2();
    let cfg = random_cfg(&s2, &su2_aux(&s2), 16, Signature::Lorentzian, 8, 0.8);
    let da = random_gauge_modes(cfg.lattice(), 3, 81, 2, 1.0).unwrap().samples(cfg.lattice());
    let e = field_equations(&cfg).unwrap();
    let want = pairing(&cfg, &e, &da);
    let lin = linearize(&cfg, &da).unwrap();
    let shifted = |s: f64| {
        let smp: Vec<f64> = cfg.samples().iter().zip(&da).map(|(a, d)| a + s * d).collect();
        cfg.with_samples(smp).unwrap()
    };
    let mut ea = Vec::new();
    let mut el = Vec::new();
    for t in [1e-2, 5e-3] {
        ea.push(((action(&shifted(t)).unwrap() - action(&shifted(-t)).unwrap()) / (2.0 * t) - want).abs());
    }
    for t in [1e-3, 5e-4] {
        let ep = field_equations(&shifted(t)).unwrap();
        let em = field_equations(&shifted(-t)).unwrap();
        let fd: Vec<f64> = ep.iter().zip(&em).map(|(a, b)| (a - b) / (2.0 * t)).collect();
        el.push(max_diff(&fd, &lin.de));
    }
    let sa = (ea[0] / ea[1]).log2();
    let sl = (el[0] / el[1]).log2();
    outcome(
        (sa - 2.0).abs() <= 0.1 && (sl - 2.0).abs() <= 0.1,
        format!("action-derivative slope {sa:.3}, linearization slope {sl:.3}"),
    )
}

fn c9_solver() -> Outcome {
    let t = Instant::now();
    let s2 = su2();
    let start = random_cfg(&s2, &su2_aux(&s2), 16, Signature::Euclidean, 31, 0.1);
    let opts = SolveOptions::default();
    let (sol, rep) = match gauss_newton_solve(&start, &opts) {
        Ok(x) => x,
        Err(e) => return outcome(false, format!("solve failed: {e}")),
    };
    let mut ok = rep.converged && rep.iterations <= 50 && rep.residual <= 1e-8 && within(t, Duration::from_secs(300));
    let mut detail = format!("{} GN iterations, ‖E‖∞ {:.2e}, {:?}", rep.iterations, rep.residual, t.elapsed());

    let cont = continuation_in_coupling(&start, 8, &opts).unwrap();
    let stages = cont.reports.iter().filter(|r| r.converged).count();
    ok &= cont.failure.is_none() && stages == 9;
    detail += &format!("; continuation {stages}/9 stages");

    let xi1 = random_modes(sol.lattice(), 3, 91, 2, 0.5).unwrap().samples(sol.lattice());
    let xi2 = random_modes(sol.lattice(), 3, 92, 2, 0.5).unwrap().samples(sol.lattice());
    let l = sol.lattice().volume().cbrt();
    let w = Window::new(2, 0.37 * l, [0.1 * l, 0.2 * l], [0.7 * l, 0.55 * l]);
    let mut reports = vec![
        k_rotation_report(&sol, &xi1).unwrap(),
        closure_report(&sol, &xi1, &xi2).unwrap(),
        charge_covariance(&sol, &w, &DVector::from_vec(vec![0.3, -0.2, 0.6])).unwrap(),
    ];
    let st = stress_tensor(&sol).unwrap();
    reports.extend(st.reports.iter().filter(|r| r.name == "stress_conservation").cloned());
    for r in &reports {
        ok &= r.pass;
        detail += &format!("; {} {:.2e}/{:.2e}", r.name, r.residual, r.scale);
    }
    outcome(ok && reports.len() == 4, detail)
}

fn c10_ym_reduction() -> Outcome {
    let alg = su2();
    let cfg = random_cfg(&alg, &AuxBracket::zero(&alg), 16, Signature::Lorentzian, 10, 0.5);
    let k = compute_k(&cfg).unwrap();
    let bitwise = k.k == k.fdual;
    let e = field_equations(&cfg).unwrap();
    // independent residual 2 ε_μ^{σν}(∂_σ F_ν + [A_σ, F_ν]) with F the dual curvature
    let f = curvature(&cfg).fdual;
    let lat = cfg.lattice();
    let metric = lat.metric();
    let np = lat.points();
    let comp = |x: &[f64], i: usize| -> Vec<f64> { (0..np).map(|p| x[p * 9 + i]).collect() };
    let df: Vec<Vec<Vec<f64>>> = (0..3).map(|s| (0..9).map(|i| lat.derivative(&comp(&f, i), s)).collect()).collect();
    let mut want = vec![0.0; e.len()];
    for p in 0..np {
        let a = &cfg.samples()[p * 9..(p + 1) * 9];
        let fp = &f[p * 9..(p + 1) * 9];
        for mu in 0..3 {
            for s in 0..3 {
                for nu in 0..3 {
                    let w = metric.eps_cross[mu][s][nu];
                    if w == 0.0 {
                        continue;
                    }
                    let col = |x: &[f64], m: usize| -> Vec<f64> { (0..3).map(|c| x[3 * c + m]).collect() };
                    let br = alg.bracket_raw(&col(a, s), &col(fp, nu));
                    for c in 0..3 {
                        want[p * 9 + 3 * c + mu] += 2.0 * w * (df[s][3 * c + nu][p] + br[c]);
                    }
                }
            }
        }
    }
    let diff = max_diff(&e, &want);
    outcome(
        bitwise && diff <= 1e-13,
        format!("K == Fdual bitwise: {bitwise}, |E - E_YM| {diff:.2e} (‖E‖ {:.2e})", max_abs(&want)),
    )
}

fn c11_charges() -> Outcome {
    let s2 = su2();
    let s3 = builtin_algebra("su3").unwrap();
    let mut stokes = 0.0f64;
    let mut div = 0.0f64;
    let mut ok = true;
    for (i, (alg, aux)) in [(s2.clone(), su2_aux(&s2)), (s3.clone(), pair_aux(&s3, 11))].iter().enumerate() {
        for sig in [Signature::Euclidean, Signature::Lorentzian] {
            let cfg = random_cfg(alg, aux, 16, sig, 110 + i as u64, 0.8);
            let l = cfg.lattice().volume().cbrt();
            for axis in 0..3 {
                let w = Window::new(axis, 0.41 * l, [0.15 * l, 0.1 * l], [0.6 * l, 0.75 * l]);
                let q = charge(&cfg, &w).unwrap();
                ok &= q.stokes.pass;
                stokes = stokes.max(q.stokes.relative());
            }
            let nc = noether_current(&cfg).unwrap();
            div = div.max(nc.div_residual);
        }
    }
    outcome(
        ok && div <= 1e-13,
        format!("Stokes relative {stokes:.2e}, max |div J| {div:.2e}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("algebraic gate (su2)", c1_algebraic_gate),
        ("H-nullspace oracle", c2_nullspace),
        ("auxiliary Jacobi pattern", c3_builders),
        ("classification tables", c4_classification),
        ("exact field identities", c5_identities),
        ("gauge invariance", c6_gauge_invariance),
        ("rotation machinery", c7_rotations),
        ("Euler-Lagrange and linearization", c8_euler_lagrange),
        ("solver regression", c9_solver),
        ("Yang-Mills reduction", c10_ym_reduction),
        ("charges", c11_charges),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str()) || x == &(i + 1).to_string()) {
            continue;
        }
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
