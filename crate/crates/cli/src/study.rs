//! Study runner: executes the selected checks against a configuration and
//! assembles a report whose CSV body is byte-identical across reruns with
//! the same config and seed, regardless of worker count.

use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use hjbd_core::error::{CoreError, Result};
use hjbd_core::fokkerplanck::{
    construct_fp_solution, kernel_measures, solve_conjugate, solve_fp_forward,
    verify_value_inequality, Drift, ValueReport,
};
use hjbd_core::heat::SpectralHeat;
use hjbd_core::hjb::{hjb_residual, hopf_cole, HjbReport};
use hjbd_core::io::CSV_SCHEMA_HEADER;
use hjbd_core::montecarlo::{feynman_kac_estimate, trotter_product};
use hjbd_core::potential::Potential;
use hjbd_core::schroedinger::{
    max_principle_bounds, solve_schrodinger_duhamel, solve_schrodinger_ode, SolveOptions,
};
use hjbd_core::space::{carre_du_champ, energy, generator_apply, Field, Space};
use hjbd_core::timefield::TimeField;

use crate::config::{ExperimentConfig, StudyKind};
use crate::plot;

/// One measured check. `check_ref` names the mathematical identity being
/// exercised, or "plumbing" for infrastructure checks.
#[derive(Clone, Debug)]
pub struct CheckRecord {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    pub check_ref: &'static str,
}

/// Data series kept aside for plot emission.
#[derive(Clone, Debug, Default)]
pub struct StudyArtifacts {
    pub residual_curves: Vec<(String, Vec<(f64, f64)>)>,
    pub ladder_curves: Vec<(String, Vec<(f64, f64)>)>,
    pub mc_points: Vec<(f64, f64, f64)>,
    pub mc_reference: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct StudyReport {
    pub records: Vec<CheckRecord>,
    pub artifacts: StudyArtifacts,
}

impl StudyReport {
    pub fn overall_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    fn push_le(&mut self, name: impl Into<String>, check_ref: &'static str, measured: f64, threshold: f64) {
        let pass = measured <= threshold;
        self.records.push(CheckRecord { name: name.into(), measured, threshold, pass, check_ref });
    }

    fn push_range(
        &mut self,
        name: impl Into<String>,
        check_ref: &'static str,
        measured: f64,
        lo: f64,
        hi: f64,
    ) {
        let pass = (lo..=hi).contains(&measured);
        self.records.push(CheckRecord { name: name.into(), measured, threshold: hi, pass, check_ref });
    }

    fn push_info(&mut self, name: impl Into<String>, check_ref: &'static str, measured: f64) {
        self.records.push(CheckRecord {
            name: name.into(),
            measured,
            threshold: f64::INFINITY,
            pass: true,
            check_ref,
        });
    }

    fn push_error(&mut self, context: &str, err: &CoreError) {
        self.records.push(CheckRecord {
            name: format!("{context}: {err}"),
            measured: f64::NAN,
            threshold: 0.0,
            pass: false,
            check_ref: "plumbing",
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_SCHEMA_HEADER);
        out.push('\n');
        out.push_str("name,measured,threshold,pass,check_ref\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name.replace(',', ";"),
                r.measured,
                r.threshold,
                r.pass,
                r.check_ref
            ));
        }
        out
    }
}

/// Runs the selected study kinds; module errors become failed records.
pub fn run_study(cfg: &ExperimentConfig) -> StudyReport {
    let mut report = StudyReport::default();
    let space = match cfg.space() {
        Ok(s) => s,
        Err(e) => {
            report.push_error("space construction", &e);
            return report;
        }
    };
    let violations = hjbd_core::space::validate_space(&space);
    report.push_le(
        "space-invariant-violations",
        "space-axioms",
        violations.violations.len() as f64,
        0.0,
    );
    if !violations.is_valid() {
        for v in &violations.violations {
            report.push_error("space validation", &CoreError::InvalidSpace(v.clone()));
        }
        return report;
    }

    let kinds: Vec<StudyKind> = match cfg.study {
        StudyKind::All => vec![
            StudyKind::Identities,
            StudyKind::Schrodinger,
            StudyKind::FeynmanKac,
            StudyKind::Hjb,
            StudyKind::Value,
            StudyKind::Convergence,
        ],
        k => vec![k],
    };
    for kind in kinds {
        let outcome = match kind {
            StudyKind::Identities => identities_study(cfg, &space, &mut report),
            StudyKind::Schrodinger => schrodinger_study(cfg, &space, &mut report),
            StudyKind::FeynmanKac => feynman_kac_study(cfg, &space, &mut report),
            StudyKind::Hjb => hjb_study(cfg, &space, &mut report),
            StudyKind::Value => value_study(cfg, &space, &mut report).map(|_| ()),
            StudyKind::Convergence => convergence_study(cfg, &mut report),
            StudyKind::All => unreachable!("expanded above"),
        };
        if let Err(e) = outcome {
            report.push_error(kind.as_str(), &e);
        }
    }
    report
}

fn solved_pair(cfg: &ExperimentConfig, space: &Space) -> Result<(Potential, Field, TimeField)> {
    let potential = cfg.potential(space)?;
    let w0 = cfg.w0(space)?;
    let w = solve_schrodinger_ode(space, &potential, &w0, cfg.t, cfg.steps, &SolveOptions::default())?;
    Ok((potential, w0, w))
}

fn smooth_density(space: &Space) -> Field {
    let n = space.n();
    let raw = Field::from_fn(n, |x| {
        1.0 + 0.4 * (2.0 * std::f64::consts::PI * x as f64 / n as f64).cos()
    });
    let mass: f64 = raw.values().iter().zip(space.measure()).map(|(&d, &m)| d * m).sum();
    raw.scale(1.0 / mass)
}

fn identities_study(cfg: &ExperimentConfig, space: &Space, report: &mut StudyReport) -> Result<()> {
    let n = space.n();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst_ibp = 0.0_f64;
    let mut worst_product = 0.0_f64;
    let mut worst_cs = 0.0_f64;
    let mut worst_markov = 0.0_f64;
    for _ in 0..50 {
        let f = Field::from_fn(n, |_| rng.gen_range(-2.0..2.0));
        let g = Field::from_fn(n, |_| rng.gen_range(-2.0..2.0));
        let e = energy(space, &f, &g);
        let scale = 1.0 + e.abs();
        let via_gen = generator_apply(space, &f).scale(-1.0).dot_m(&g, space.measure());
        let via_gamma: f64 = carre_du_champ(space, &f, &g)
            .values()
            .iter()
            .zip(space.measure())
            .map(|(&v, &m)| v * m)
            .sum();
        worst_ibp = worst_ibp.max((via_gen - e).abs() / scale).max((via_gamma - e).abs() / scale);

        let lhs = generator_apply(space, &f.mul(&g));
        let rhs = f
            .mul(&generator_apply(space, &g))
            .add(&g.mul(&generator_apply(space, &f)))
            .add(&carre_du_champ(space, &f, &g).scale(2.0));
        worst_product =
            worst_product.max(lhs.sub(&rhs).sup_norm() / (1.0 + lhs.sup_norm()));

        let gfg = carre_du_champ(space, &f, &g);
        let gff = carre_du_champ(space, &f, &f);
        let ggg = carre_du_champ(space, &g, &g);
        for x in 0..n {
            worst_cs = worst_cs.max(gfg.get(x).abs() - (gff.get(x) * ggg.get(x)).sqrt());
        }

        let before = energy(space, &f, &f);
        let clamped = f.map(|r| r.clamp(0.0, 1.0));
        worst_markov = worst_markov
            .max((energy(space, &clamped, &clamped) - before) / (1.0 + before));
    }
    report.push_le("integration-by-parts-relative", "integration-by-parts", worst_ibp, 1e-10);
    report.push_le("generator-product-identity", "product-identity", worst_product, 1e-10);
    report.push_le("gamma-cauchy-schwarz-excess", "gamma-cauchy-schwarz", worst_cs, 1e-12);
    report.push_le("markovian-contraction-excess", "markovian-contraction", worst_markov, 1e-12);

    let heat = SpectralHeat::new(space);
    for h in [0.01, 0.5] {
        let kernel = heat.kernel(h)?;
        report.push_le(
            format!("kernel-row-sums-h{h}"),
            "kernel-row-sums",
            kernel.row_sum_defect(),
            1e-10,
        );
        report.push_le(
            format!("kernel-reversibility-h{h}"),
            "kernel-reversibility",
            kernel.reversibility_defect(space.measure()),
            1e-10,
        );
    }

    // dual-flow identities on a short horizon with the configured potential
    let potential = cfg.potential(space)?;
    let w0 = cfg.w0(space)?;
    if w0.min() <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "identities study needs a strictly positive w0".into(),
        ));
    }
    let t = (cfg.t / 4.0).max(-0.1);
    let w = solve_schrodinger_ode(space, &potential, &w0, t, 16, &SolveOptions::default())?;
    let (mid, late) = (w.grid().time(8), w.grid().time(12));
    let m_tr = kernel_measures(space, &potential, &w, t, late)?;
    let m_tm = kernel_measures(space, &potential, &w, t, mid)?;
    let m_mr = kernel_measures(space, &potential, &w, mid, late)?;
    report.push_le(
        "forward-semigroup-composition",
        "chapman-kolmogorov",
        (&m_tm * &m_mr - &m_tr).amax(),
        1e-8,
    );

    let g = Field::from_fn(n, |_| rng.gen_range(-1.0..1.0));
    let direct = solve_conjugate(space, &potential, &w, &g, late)?;
    let restart = solve_conjugate(space, &potential, &w, &direct.frame_at(mid)?, mid)?;
    report.push_le(
        "past-semigroup-composition",
        "past-semigroup",
        restart.frame_at(t)?.sub(&direct.frame_at(t)?).sup_norm(),
        1e-8,
    );

    let rho0 = smooth_density(space);
    let curve = construct_fp_solution(space, &potential, &w, &rho0)?;
    let j_mid = curve.grid().index_of(mid).expect("mid is a grid node");
    let flow = solve_conjugate(space, &potential, &w, &g, mid)?;
    let lhs: f64 = flow
        .frame_at(t)?
        .values()
        .iter()
        .zip(rho0.values())
        .zip(space.measure())
        .map(|((&a, &r), &m)| a * r * m)
        .sum();
    let rhs: f64 = g
        .values()
        .iter()
        .zip(curve.density(j_mid).values())
        .zip(space.measure())
        .map(|((&a, &r), &m)| a * r * m)
        .sum();
    report.push_le("conjugate-duality-pairing", "conjugate-duality", (lhs - rhs).abs(), 1e-8);
    Ok(())
}

fn schrodinger_study(cfg: &ExperimentConfig, space: &Space, report: &mut StudyReport) -> Result<()> {
    let (potential, w0, ode) = solved_pair(cfg, space)?;
    let duhamel = solve_schrodinger_duhamel(space, &potential, &w0, cfg.t, cfg.steps, 1e-9)?;
    report.push_le(
        "cross-solver-sup-gap",
        "duhamel-mild-form",
        duhamel.field.sub(&ode)?.sup_norm(),
        1e-6,
    );
    report.push_le(
        "duhamel-contraction-factor",
        "duhamel-contraction",
        duhamel.max_contraction_factor,
        0.25,
    );
    report.push_le(
        "window-contraction-condition",
        "duhamel-contraction",
        duhamel.window_length * potential.c1_l2_norm(space, cfg.t),
        0.25,
    );

    if w0.min() > 0.0 {
        let (lo, hi) = max_principle_bounds(&potential, &w0, -cfg.t)?;
        let slack = 1e-12 * (1.0 + ode.sup_norm());
        let below = (lo - ode.min()).max(0.0);
        let above = (ode.sup_norm() - hi).max(0.0);
        report.push_le("maximum-principle-excursion", "maximum-principle", below.max(above), slack);
    } else {
        report.push_info("maximum-principle-skipped-nonpositive-w0", "maximum-principle", 0.0);
    }
    Ok(())
}

fn feynman_kac_study(cfg: &ExperimentConfig, space: &Space, report: &mut StudyReport) -> Result<()> {
    let (potential, w0, ode) = solved_pair(cfg, space)?;
    let n = space.n();
    let probes: Vec<usize> = (0..n.min(8)).map(|k| k * n / n.min(8)).collect();
    let mut worst_z = 0.0_f64;
    for &x in &probes {
        let est = feynman_kac_estimate(space, &potential, &w0, cfg.t, x, cfg.mc_samples, cfg.seed)?;
        let target = ode.frame(0).get(x);
        if est.stderr > 0.0 {
            worst_z = worst_z.max((est.mean - target).abs() / est.stderr);
        }
        report.artifacts.mc_points.push((x as f64, est.mean, est.stderr));
        report.artifacts.mc_reference.push((x as f64, target));
    }
    report.push_le("path-estimator-worst-z-score", "feynman-kac", worst_z, 4.0);

    let constant = feynman_kac_estimate(
        space,
        &Potential::constant(0.7),
        &Field::constant(n, 1.0),
        cfg.t,
        0,
        cfg.mc_samples.min(1000),
        cfg.seed,
    )?;
    report.push_le(
        "constant-potential-exactness",
        "feynman-kac",
        (constant.mean - (0.7 * -cfg.t).exp()).abs(),
        1e-12,
    );
    report.push_le("constant-potential-spread", "feynman-kac", constant.stderr, 0.0);

    let reference = ode.frame(0);
    let err = |slices: usize| -> Result<f64> {
        Ok(trotter_product(space, &potential, &w0, cfg.t, slices)?.sub(reference).sup_norm())
    };
    let e8 = err(8)?;
    let e16 = err(16)?;
    let e32 = err(32)?;
    report.push_range("trotter-ratio-8-16", "trotter-splitting", e8 / e16, 1.7, 2.3);
    report.push_range("trotter-ratio-16-32", "trotter-splitting", e16 / e32, 1.7, 2.3);
    Ok(())
}

fn hjb_study(cfg: &ExperimentConfig, space: &Space, report: &mut StudyReport) -> Result<()> {
    let (potential, w0, w) = solved_pair(cfg, space)?;
    if w0.min() <= 0.0 {
        return Err(CoreError::InvalidArgument("hjb study needs a positive w0".into()));
    }
    let u = hopf_cole(&w)?;
    let full: HjbReport = hjb_residual(space, &potential, &u)?;

    // halved grid for the stability of the exact-residual constant
    let half = solve_schrodinger_ode(
        space,
        &potential,
        &w0,
        cfg.t,
        (cfg.steps / 2).max(2),
        &SolveOptions::default(),
    )?;
    let half_report = hjb_residual(space, &potential, &hopf_cole(&half)?)?;
    let c_full = full.exact_residual_sup() / w.grid().dt().powi(2);
    let c_half = half_report.exact_residual_sup() / half.grid().dt().powi(2);
    report.push_range("exact-residual-constant-stability", "nonlinear-generator-form", c_full / c_half, 0.6, 1.67);
    report.push_info("hjb-residual-sup", "quadratic-gradient-form", full.residual_sup());
    report.push_info("chain-defect-sup", "log-chain-rule", full.chain_defect_sup());
    report.push_le(
        "exact-residual-sup",
        "nonlinear-generator-form",
        full.exact_residual_sup(),
        2.0 * c_half.max(1.0) * w.grid().dt().powi(2),
    );

    report.artifacts.residual_curves.push((
        "quadratic-gradient residual (sup)".into(),
        full.norms.iter().map(|f| (f.time, f.residual_sup)).collect(),
    ));
    report.artifacts.residual_curves.push((
        "nonlinear-generator residual (sup)".into(),
        full.norms.iter().map(|f| (f.time, f.exact_sup)).collect(),
    ));
    Ok(())
}

fn value_study(
    cfg: &ExperimentConfig,
    space: &Space,
    report: &mut StudyReport,
) -> Result<ValueReport> {
    let (potential, w0, w) = solved_pair(cfg, space)?;
    if w0.min() <= 0.0 {
        return Err(CoreError::InvalidArgument("value study needs a positive w0".into()));
    }
    let u = hopf_cole(&w)?;
    let rho0 = smooth_density(space);
    let drifts = standard_drift_family(space, &u, cfg.seed);
    let value = verify_value_inequality(space, &potential, &u, &drifts, &rho0)?;

    report.push_le("equality-case-gap", "value-identity", value.optimal_gap(), value.allowance);
    let below = value
        .entries
        .iter()
        .filter(|e| !e.lower_bound_ok)
        .count();
    report.push_le("drifts-below-value-bound", "value-inequality", below as f64, 0.0);
    let min_j = value.entries.iter().map(|e| e.j).fold(f64::INFINITY, f64::min);
    report.push_le(
        "family-minimum-above-optimal",
        "value-inequality",
        value.j_optimal - min_j,
        value.allowance,
    );

    let j_of = |label: &str| value.entries.iter().find(|e| e.label == label).map(|e| e.j);
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .filter_map(|&d| {
            j_of(&format!("perturbed-{d}")).map(|j| (j - value.j_optimal) / (d * d))
        })
        .collect();
    if ratios.len() == 3 {
        let mean = ratios.iter().sum::<f64>() / 3.0;
        let worst = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
        report.push_le("quadratic-excess-stability", "value-identity", worst, 0.3);
    }
    Ok(value)
}

/// Optimal drift, zero drift, random smooth drifts and perturbations of the
/// optimal one, all deterministic in the seed. Random profiles are rescaled
/// so edge increments stay below 1/2: beyond increment 1 the discrete
/// drifted flow stops being positivity preserving, which is a property of
/// the graph discretization and not of a particular curve.
pub fn standard_drift_family(space: &Space, u: &TimeField, seed: u64) -> Vec<(String, Drift)> {
    let n = space.n();
    let grid = *u.grid();
    let heat = SpectralHeat::new(space);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cap_increment = |profile: Field| -> Field {
        let worst = space
            .edges()
            .iter()
            .map(|&(x, y, _)| (profile.get(x) - profile.get(y)).abs())
            .fold(0.0_f64, f64::max);
        if worst > 0.5 {
            profile.scale(0.5 / worst)
        } else {
            profile
        }
    };
    let mut family = vec![
        ("optimal".to_string(), Drift::negated(u)),
        ("zero".to_string(), Drift::zero(grid, n)),
    ];
    for i in 0..4 {
        let mut profile = Field::zeros(n);
        for k in 0..5.min(n) {
            profile = profile.add(&heat.eigenfield(k).scale(rng.gen_range(-0.5..0.5)));
        }
        family.push((format!("random-{i}"), Drift::time_constant(grid, cap_increment(profile))));
    }
    let mut z = Field::zeros(n);
    for k in 1..5.min(n) {
        z = z.add(&heat.eigenfield(k).scale(rng.gen_range(-1.0..1.0)));
    }
    let z = cap_increment(z);
    for &delta in &[0.2, 0.1, 0.05] {
        let shifted =
            Drift::new(Drift::negated(u).field().map_frames(|fr| fr.add(&z.scale(delta))));
        family.push((format!("perturbed-{delta}"), shifted));
    }
    family
}

fn convergence_study(cfg: &ExperimentConfig, report: &mut StudyReport) -> Result<()> {
    let mut residual_points = Vec::new();
    let mut gap_points = Vec::new();
    for &n in &cfg.ladder {
        let Some(doc) = cfg.space.at_resolution(n) else {
            return Err(CoreError::InvalidArgument(
                "convergence ladders need a cycle or torus space family".into(),
            ));
        };
        let space = doc.build(&cfg.base_dir)?;
        let scaled = ExperimentConfig { steps: cfg.steps.max(25 * n), ..cfg.clone() };
        let (potential, _w0, w) = solved_pair(&scaled, &space)?;
        let u = hopf_cole(&w)?;
        let residual = hjb_residual(&space, &potential, &u)?;
        residual_points.push((n as f64, residual.residual_sup()));

        let rho0 = smooth_density(&space);
        let constructed = construct_fp_solution(&space, &potential, &w, &rho0)?;
        let forward = solve_fp_forward(&space, &Drift::negated(&u), &rho0, *w.grid())?;
        gap_points.push((n as f64, constructed.sup_distance(&forward)?));
    }
    let log = |points: &[(f64, f64)]| -> Vec<(f64, f64)> {
        points.iter().map(|&(x, y)| (x.log10(), y.max(1e-300).log10())).collect()
    };
    let residual_order = -plot::fit_slope(&log(&residual_points));
    let gap_order = -plot::fit_slope(&log(&gap_points));
    report.push_range("hjb-residual-empirical-order", "quadratic-gradient-form", residual_order, 1.0, 4.0);
    report.push_range("construction-gap-empirical-order", "dual-construction", gap_order, 1.0, 4.0);
    report
        .artifacts
        .ladder_curves
        .push(("viscous Hamilton-Jacobi residual".into(), residual_points));
    report.artifacts.ladder_curves.push(("cross-construction gap".into(), gap_points));
    Ok(())
}

/// Writes the SVG plots for whatever artifacts the run produced. An empty
/// artifact set writes nothing and succeeds.
pub fn emit_plots(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if !report.artifacts.residual_curves.is_empty() {
        let series: Vec<plot::Series> = report
            .artifacts
            .residual_curves
            .iter()
            .map(|(label, points)| plot::Series { label: label.clone(), points: points.clone() })
            .collect();
        let path = dir.join("residual_vs_time.svg");
        std::fs::write(&path, plot::line_plot("residual vs time", "time", "sup residual", &series))?;
        written.push(path);
    }
    for (label, points) in &report.artifacts.ladder_curves {
        let slug: String = label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        let path = dir.join(format!("ladder_{slug}.svg"));
        std::fs::write(&path, plot::loglog_plot(label, "mesh points", label, points))?;
        written.push(path);
    }
    if !report.artifacts.mc_points.is_empty() {
        let path = dir.join("path_estimator_means.svg");
        std::fs::write(
            &path,
            plot::error_bar_plot(
                "path estimator vs backward solve",
                "probe point",
                "value at (t, x)",
                &report.artifacts.mc_points,
                Some(&report.artifacts.mc_reference),
            ),
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Per-drift CSV written by the value command and study.
pub fn value_csv(report: &ValueReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA_HEADER);
    out.push('\n');
    out.push_str("drift_id,J,gap_vs_optimal,fp_residual_max,C1\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.label, e.j, e.gap_vs_optimal, e.fp_residual_max, e.c1_bound
        ));
    }
    out
}

/// Per-frame CSV written by the hjb command.
pub fn hjb_report_csv(report: &HjbReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA_HEADER);
    out.push('\n');
    out.push_str("time,residual_sup,residual_l2,exact_residual_sup,exact_residual_l2\n");
    for f in &report.norms {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            f.time, f.residual_sup, f.residual_l2, f.exact_sup, f.exact_l2
        ));
    }
    out
}
