//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured quantities (run with `--nocapture` to see them). Tolerances
//! are pinned here, not read from configuration.

use std::time::Instant;

use hjbd_core::fokkerplanck::{
    construct_fp_solution, kernel_measures, polling_test_functions, solve_conjugate,
    solve_fp_forward, verify_value_inequality, weak_fp_residual, weak_fp_residual_exact_drift,
    Drift,
};
use hjbd_core::heat::SpectralHeat;
use hjbd_core::hjb::{chain_rule_defect, hjb_residual, hopf_cole, ScalarMap};
use hjbd_core::montecarlo::{feynman_kac_estimate, trotter_product};
use hjbd_core::potential::{Envelope, Potential, PotentialKind};
use hjbd_core::schroedinger::{
    max_principle_bounds, solve_schrodinger_duhamel, solve_schrodinger_ode, SolveOptions,
};
use hjbd_core::space::{
    build_space, carre_du_champ, energy, generator_apply, random_connected_space, Field, Space,
    SpaceKind, SpaceSpec,
};
use hjbd_core::timefield::{TimeField, TimeGrid};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn cycle(n: usize) -> Space {
    build_space(&SpaceSpec::new(SpaceKind::Cycle { n })).unwrap()
}

fn gasket(level: usize) -> Space {
    build_space(&SpaceSpec::new(SpaceKind::Gasket { level })).unwrap()
}

fn harmonic(n: usize, k: f64) -> Field {
    Field::from_fn(n, |x| (2.0 * std::f64::consts::PI * k * x as f64 / n as f64).sin())
}

fn coharmonic(n: usize, k: f64) -> Field {
    Field::from_fn(n, |x| (2.0 * std::f64::consts::PI * k * x as f64 / n as f64).cos())
}

fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Field {
    Field::from_fn(n, |_| rng.gen_range(-2.0..2.0))
}

fn normalized_density(s: &Space, raw: Field) -> Field {
    let mass: f64 = raw.values().iter().zip(s.measure()).map(|(&d, &m)| d * m).sum();
    raw.scale(1.0 / mass)
}

fn smooth_density(s: &Space) -> Field {
    let n = s.n();
    normalized_density(
        s,
        Field::from_fn(n, |x| 1.0 + 0.4 * (2.0 * std::f64::consts::PI * x as f64 / n as f64).cos()),
    )
}

/// Positive solved pair used by the dual-construction criteria.
fn solved_pair(s: &Space, t: f64, steps: usize) -> (Potential, TimeField) {
    let n = s.n();
    let potential = Potential::for_space(
        PotentialKind::Separable { envelope: Envelope::Exp { rate: 1.0 }, profile: coharmonic(n, 1.0) },
        s,
        t,
    )
    .unwrap();
    let w0 = harmonic(n, 1.0).map(|v| 1.4 + 0.5 * v);
    let w = solve_schrodinger_ode(s, &potential, &w0, t, steps, &SolveOptions::default()).unwrap();
    (potential, w)
}

#[test]
fn criterion_1_exact_identity_suite() {
    let start = Instant::now();
    let mut spaces: Vec<(String, Space)> =
        vec![("cycle(8)".into(), cycle(8)), ("gasket(2)".into(), gasket(2))];
    for (i, n) in [12usize, 16, 20, 24, 28, 32, 40, 48, 56, 64].into_iter().enumerate() {
        spaces.push((format!("random({n})"), random_connected_space(n, 100 + i as u64).unwrap()));
    }

    let clamps: Vec<fn(f64) -> f64> = vec![
        |r| r.clamp(0.0, 1.0),
        f64::abs,
        |r| r.signum() * (r.abs() - 0.3).max(0.0),
        f64::tanh,
        |r| r.min(0.7),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    for (name, s) in &spaces {
        let n = s.n();
        for _ in 0..100 {
            let f = random_field(n, &mut rng);
            let g = random_field(n, &mut rng);

            // integration by parts, both routes
            let e = energy(s, &f, &g);
            let tol = 1e-10 * (1.0 + e.abs());
            let via_gen = generator_apply(s, &f).scale(-1.0).dot_m(&g, s.measure());
            let via_gamma: f64 = carre_du_champ(s, &f, &g)
                .values()
                .iter()
                .zip(s.measure())
                .map(|(&v, &m)| v * m)
                .sum();
            assert!((via_gen - e).abs() <= tol, "{name}: generator route");
            assert!((via_gamma - e).abs() <= tol, "{name}: gamma route");

            // product identity
            let lhs = generator_apply(s, &f.mul(&g));
            let rhs = f
                .mul(&generator_apply(s, &g))
                .add(&g.mul(&generator_apply(s, &f)))
                .add(&carre_du_champ(s, &f, &g).scale(2.0));
            assert!(
                lhs.sub(&rhs).sup_norm() <= 1e-10 * (1.0 + lhs.sup_norm()),
                "{name}: product identity"
            );

            // pointwise Cauchy-Schwarz
            let gfg = carre_du_champ(s, &f, &g);
            let gff = carre_du_champ(s, &f, &f);
            let ggg = carre_du_champ(s, &g, &g);
            for x in 0..n {
                assert!(
                    gfg.get(x).abs() <= (gff.get(x) * ggg.get(x)).sqrt() + 1e-12,
                    "{name}: Cauchy-Schwarz at {x}"
                );
            }

            // Markovian contraction
            let before = energy(s, &f, &f);
            for eta in &clamps {
                let clamped = f.map(eta);
                assert!(
                    energy(s, &clamped, &clamped) <= before + 1e-12 * (1.0 + before),
                    "{name}: Markovian contraction"
                );
            }
        }

        // kernel facts
        let heat = SpectralHeat::new(s);
        for h in [0.01, 0.5] {
            let k = heat.kernel(h).unwrap();
            assert!(k.row_sum_defect() <= 1e-10, "{name}: row sums at h = {h}");
            assert!(
                k.reversibility_defect(s.measure()) <= 1e-10,
                "{name}: reversibility at h = {h}"
            );
        }

        // dual-flow identities on a short horizon
        let t = -0.1;
        let (potential, w) = solved_pair(s, t, 16);
        let (mid, late) = (w.grid().time(8), w.grid().time(12));
        let m_tr = kernel_measures(s, &potential, &w, t, late).unwrap();
        let m_tm = kernel_measures(s, &potential, &w, t, mid).unwrap();
        let m_mr = kernel_measures(s, &potential, &w, mid, late).unwrap();
        let ck_gap = (&m_tm * &m_mr - &m_tr).amax();
        assert!(ck_gap <= 1e-8, "{name}: forward semigroup gap {ck_gap}");

        let g = random_field(n, &mut rng);
        let direct = solve_conjugate(s, &potential, &w, &g, late).unwrap();
        let restart = solve_conjugate(
            s,
            &potential,
            &w,
            &direct.frame_at(mid).unwrap(),
            mid,
        )
        .unwrap();
        let past_gap = restart
            .frame_at(t)
            .unwrap()
            .sub(&direct.frame_at(t).unwrap())
            .sup_norm();
        assert!(past_gap <= 1e-8, "{name}: past semigroup gap {past_gap}");

        let rho0 = smooth_density(s);
        let curve = construct_fp_solution(s, &potential, &w, &rho0).unwrap();
        let j_mid = curve.grid().index_of(mid).unwrap();
        let flow = solve_conjugate(s, &potential, &w, &g, mid).unwrap();
        let lhs: f64 = flow
            .frame_at(t)
            .unwrap()
            .values()
            .iter()
            .zip(rho0.values())
            .zip(s.measure())
            .map(|((&a, &r), &m)| a * r * m)
            .sum();
        let rhs: f64 = g
            .values()
            .iter()
            .zip(curve.density(j_mid).values())
            .zip(s.measure())
            .map(|((&a, &r), &m)| a * r * m)
            .sum();
        assert!((lhs - rhs).abs() <= 1e-8, "{name}: duality gap {}", (lhs - rhs).abs());
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 5.0, "identity suite took {elapsed:.2} s (budget 5 s)");
    println!(
        "[PASS] criterion 1: exact identities on {} spaces x 100 fields in {elapsed:.2} s",
        spaces.len()
    );
}

#[test]
fn criterion_2_schrodinger_cross_solver() {
    let s = cycle(16);
    // sup |F| = 1, attained at t = 0
    let potential = Potential::for_space(
        PotentialKind::Separable { envelope: Envelope::Exp { rate: 1.0 }, profile: harmonic(16, 1.0) },
        &s,
        -1.0,
    )
    .unwrap();
    let w0 = harmonic(16, 1.0).map(|v| 1.0 + 0.5 * v);
    let steps = 8000;
    let ode = solve_schrodinger_ode(&s, &potential, &w0, -1.0, steps, &SolveOptions::default())
        .unwrap();
    let duhamel = solve_schrodinger_duhamel(&s, &potential, &w0, -1.0, steps, 1e-9).unwrap();

    let gap = duhamel.field.sub(&ode).unwrap().sup_norm();
    assert!(gap <= 1e-6, "cross-solver gap {gap}");
    assert!(
        duhamel.window_length * potential.c1_l2_norm(&s, -1.0) <= 0.25,
        "window violates the contraction condition"
    );
    assert!(
        duhamel.max_contraction_factor <= 0.25,
        "contraction factor {}",
        duhamel.max_contraction_factor
    );
    println!(
        "[PASS] criterion 2: cross-solver gap {gap:.2e} <= 1e-6, contraction factor {:.3} <= 0.25 ({} windows)",
        duhamel.max_contraction_factor, duhamel.windows
    );
}

#[test]
fn criterion_3_feynman_kac_and_trotter() {
    let start = Instant::now();
    let s = cycle(8);
    let t = -0.5;
    let potential = Potential::for_space(
        PotentialKind::Separable { envelope: Envelope::One, profile: coharmonic(8, 1.0) },
        &s,
        t,
    )
    .unwrap();
    let w0 = harmonic(8, 1.0).map(|v| 1.0 + 0.5 * v);
    let reference =
        solve_schrodinger_ode(&s, &potential, &w0, t, 2000, &SolveOptions::default()).unwrap();

    let n_samples = 200_000;
    let mut worst_z = 0.0_f64;
    for x in 0..8 {
        let est = feynman_kac_estimate(&s, &potential, &w0, t, x, n_samples, 90_210).unwrap();
        let target = reference.frame(0).get(x);
        let z = (est.mean - target).abs() / est.stderr;
        worst_z = worst_z.max(z);
        assert!(
            (est.mean - target).abs() <= 4.0 * est.stderr,
            "probe {x}: mean {} vs {target} (stderr {})",
            est.mean,
            est.stderr
        );
    }

    // constant potential: path-independent functional, zero spread
    let exact = feynman_kac_estimate(
        &s,
        &Potential::constant(0.7),
        &Field::constant(8, 1.0),
        t,
        0,
        10_000,
        3,
    )
    .unwrap();
    assert!((exact.mean - (0.7_f64 * 0.5).exp()).abs() <= 1e-13);
    assert_eq!(exact.stderr, 0.0);

    // splitting study with a genuinely time-dependent potential
    let mixed = Potential::for_space(
        PotentialKind::Sum(vec![
            PotentialKind::Separable { envelope: Envelope::One, profile: coharmonic(8, 1.0) },
            PotentialKind::Separable {
                envelope: Envelope::Exp { rate: 1.0 },
                profile: harmonic(8, 1.0).scale(0.5),
            },
        ]),
        &s,
        t,
    )
    .unwrap();
    let trotter_ref =
        solve_schrodinger_ode(&s, &mixed, &w0, t, 4000, &SolveOptions::default()).unwrap();
    let err = |slices: usize| {
        trotter_product(&s, &mixed, &w0, t, slices)
            .unwrap()
            .sub(trotter_ref.frame(0))
            .sup_norm()
    };
    let mut ratios = Vec::new();
    for m in [8usize, 16, 32, 64] {
        let ratio = err(m) / err(2 * m);
        assert!(
            (1.7..=2.3).contains(&ratio),
            "splitting ratio at {m} slices: {ratio}"
        );
        ratios.push(ratio);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 120.0, "path-integral suite took {elapsed:.1} s (budget 120 s)");
    println!(
        "[PASS] criterion 3: 8 probes within 4 stderr (worst z = {worst_z:.2}), exact constant case, splitting ratios {ratios:?} in {elapsed:.1} s"
    );
}

#[test]
fn criterion_4_maximum_principle() {
    let s = cycle(8);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let c1 = 3.0;
    let horizon = 0.5;
    let mut violations = 0usize;
    for _ in 0..20 {
        let profile = Field::from_fn(8, |_| rng.gen_range(-2.0..2.0));
        let potential = Potential::for_space(
            PotentialKind::Separable {
                envelope: Envelope::Cos { omega: rng.gen_range(0.5..3.0), phase: rng.gen_range(0.0..1.0) },
                profile,
            },
            &s,
            -horizon,
        )
        .unwrap();
        let w0 = Field::from_fn(8, |_| rng.gen_range(1.0 / c1..c1));
        let (lo, hi) = max_principle_bounds(&potential, &w0, horizon).unwrap();
        let w = solve_schrodinger_ode(&s, &potential, &w0, -horizon, 400, &SolveOptions::default())
            .unwrap();
        let slack = 1e-12 * (1.0 + w.sup_norm());
        if w.min() < lo - slack || w.sup_norm() > hi + slack {
            violations += 1;
        }
    }
    assert_eq!(violations, 0, "{violations} runs left the explicit bounds");
    println!("[PASS] criterion 4: 20/20 random runs inside the explicit path-representation bounds");
}

#[test]
fn criterion_5_hopf_cole_residuals() {
    // (a) the nonlinear-generator residual is pure time-differencing error:
    // C = R / dtau^2 is stable under halving
    let s16 = cycle(16);
    let (pot16, w_coarse) = solved_pair(&s16, -0.5, 1000);
    let (_, w_fine) = solved_pair(&s16, -0.5, 2000);
    let r_coarse = hjb_residual(&s16, &pot16, &hopf_cole(&w_coarse).unwrap()).unwrap();
    let r_fine = hjb_residual(&s16, &pot16, &hopf_cole(&w_fine).unwrap()).unwrap();
    let c_coarse = r_coarse.exact_residual_sup() / w_coarse.grid().dt().powi(2);
    let c_fine = r_fine.exact_residual_sup() / w_fine.grid().dt().powi(2);
    let stability = c_fine / c_coarse;
    assert!(
        (0.7..=1.4).contains(&stability),
        "exact-residual constant drifts under halving: {c_coarse} -> {c_fine}"
    );

    // (b) quadratic-gradient residual decays along the ladder at order >= 1
    let ladder = [16usize, 32, 64];
    let mut sups = Vec::new();
    let mut defects = Vec::new();
    for &n in &ladder {
        let s = cycle(n);
        let (potential, w) = solved_pair(&s, -0.5, 50 * n);
        let u = hopf_cole(&w).unwrap();
        let report = hjb_residual(&s, &potential, &u).unwrap();
        sups.push(report.residual_sup());
        defects.push(report.chain_defect_sup());
    }
    let mut orders = Vec::new();
    for k in 0..2 {
        assert!(sups[k + 1] < sups[k], "ladder residual not decreasing: {sups:?}");
        let order = (sups[k] / sups[k + 1]).log2();
        assert!(order >= 1.0, "empirical order {order} below 1 ({sups:?})");
        orders.push(order);
    }

    // (c) chain-rule defect halves or better per doubling
    for k in 0..2 {
        assert!(
            defects[k + 1] <= 0.5 * defects[k],
            "chain defect not halving: {defects:?}"
        );
    }
    // and the standalone map diagnostic agrees
    let f16 = harmonic(16, 1.0).map(|v| 2.0 + v);
    let f32v = harmonic(32, 1.0).map(|v| 2.0 + v);
    let d16 = chain_rule_defect(&cycle(16), &f16, &ScalarMap::NegLog).unwrap().sup_norm();
    let d32 = chain_rule_defect(&cycle(32), &f32v, &ScalarMap::NegLog).unwrap().sup_norm();
    assert!(d32 <= 0.5 * d16);

    println!(
        "[PASS] criterion 5: exact-residual constant stable ({stability:.3}), ladder orders {orders:?} >= 1, defects {defects:?} halving"
    );
}

#[test]
fn criterion_6_fokker_planck_duality() {
    let ladder = [16usize, 32, 64];
    let mut gaps = Vec::new();
    let mut exact_residuals = Vec::new();
    let mut log_drift_residuals = Vec::new();
    for &n in &ladder {
        let s = cycle(n);
        let (potential, w) = solved_pair(&s, -0.5, 50 * n);
        let u = hopf_cole(&w).unwrap();
        let rho0 = smooth_density(&s);

        let constructed = construct_fp_solution(&s, &potential, &w, &rho0).unwrap();
        let forward = solve_fp_forward(&s, &Drift::negated(&u), &rho0, *w.grid()).unwrap();
        gaps.push(constructed.sup_distance(&forward).unwrap());

        let polling = polling_test_functions(&s, *w.grid(), 606).unwrap();
        let mut worst_exact = 0.0_f64;
        let mut worst_log = 0.0_f64;
        let neg_u = Drift::negated(&u);
        for phi in &polling {
            worst_exact = worst_exact
                .max(weak_fp_residual_exact_drift(&s, &w, &constructed, phi).unwrap().abs());
            worst_log =
                worst_log.max(weak_fp_residual(&s, &neg_u, &constructed, phi).unwrap().abs());
        }
        exact_residuals.push(worst_exact);
        log_drift_residuals.push(worst_log);
        assert!(
            worst_exact <= 1e-5,
            "exact-drift weak residual {worst_exact} at n = {n} over {} test functions",
            polling.len()
        );
    }
    for k in 0..2 {
        assert!(gaps[k + 1] < gaps[k], "cross-construction gaps not decreasing: {gaps:?}");
        assert!(
            log_drift_residuals[k + 1] < log_drift_residuals[k],
            "drift -u residuals not decreasing: {log_drift_residuals:?}"
        );
    }
    println!(
        "[PASS] criterion 6: construction gaps {gaps:?} decreasing, exact-drift residuals {exact_residuals:?} <= 1e-5, drift -u residuals {log_drift_residuals:?} decreasing"
    );
}

#[test]
fn criterion_7_value_function() {
    let start = Instant::now();

    // equality-case gap decreases along the ladder
    let mut equality_gaps = Vec::new();
    let mut allowances = Vec::new();
    for &n in &[16usize, 32, 64] {
        let s = cycle(n);
        let (potential, w) = solved_pair(&s, -0.5, 25 * n);
        let u = hopf_cole(&w).unwrap();
        let rho0 = smooth_density(&s);
        let report = verify_value_inequality(
            &s,
            &potential,
            &u,
            &[("optimal".into(), Drift::negated(&u))],
            &rho0,
        )
        .unwrap();
        assert!(
            report.optimal_gap() <= report.allowance,
            "equality case at n = {n}: gap {} vs allowance {}",
            report.optimal_gap(),
            report.allowance
        );
        equality_gaps.push(report.optimal_gap().abs());
        allowances.push(report.allowance);
    }
    assert!(
        equality_gaps[2] < equality_gaps[0],
        "equality gap not decreasing along the ladder: {equality_gaps:?}"
    );

    // 25-drift family on cycle(64)
    let n = 64;
    let s = cycle(n);
    let (potential, w) = solved_pair(&s, -0.5, 25 * n);
    let u = hopf_cole(&w).unwrap();
    let rho0 = smooth_density(&s);
    let grid = *u.grid();
    let heat = SpectralHeat::new(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut drifts: Vec<(String, Drift)> = vec![
        ("optimal".into(), Drift::negated(&u)),
        ("zero".into(), Drift::zero(grid, n)),
    ];
    for i in 0..11 {
        let mut profile = Field::zeros(n);
        for k in 0..5 {
            profile = profile.add(&heat.eigenfield(k).scale(rng.gen_range(-0.5..0.5)));
        }
        drifts.push((format!("random-{i}"), Drift::time_constant(grid, profile)));
    }
    let z_dirs: Vec<Field> = (0..2)
        .map(|_| {
            let mut profile = Field::zeros(n);
            for k in 1..5 {
                profile = profile.add(&heat.eigenfield(k).scale(rng.gen_range(-1.0..1.0)));
            }
            profile
        })
        .collect();
    for (zi, z) in z_dirs.iter().enumerate() {
        for &delta in &[0.2, 0.1, 0.05] {
            for &sign in &[1.0, -1.0] {
                let shifted = Drift::new(
                    Drift::negated(&u).field().map_frames(|fr| fr.add(&z.scale(sign * delta))),
                );
                drifts.push((format!("perturbed-{zi}-{delta}-{sign}"), shifted));
            }
        }
    }
    assert_eq!(drifts.len(), 25);
    let report = verify_value_inequality(&s, &potential, &u, &drifts, &rho0).unwrap();
    assert!(report.all_bounds_hold(), "value inequality failed: {report:?}");

    // quadratic excess of the first perturbation direction
    let j_of = |label: &str| {
        report
            .entries
            .iter()
            .find(|e| e.label == label)
            .map(|e| e.j)
            .expect("family member present")
    };
    let j_opt = j_of("optimal");
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&delta| (j_of(&format!("perturbed-0-{delta}-1")) - j_opt) / (delta * delta))
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for r in &ratios {
        assert!(
            (r / mean_ratio - 1.0).abs() <= 0.3,
            "quadratic excess unstable: {ratios:?}"
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 300.0, "value suite took {elapsed:.1} s (budget 300 s)");
    println!(
        "[PASS] criterion 7: equality gaps {equality_gaps:?} <= allowances {allowances:?}, 25-drift family bounded below, excess ratios {ratios:?} within 30% in {elapsed:.1} s"
    );
}
