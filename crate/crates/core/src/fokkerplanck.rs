//! Weak Fokker-Planck flows with carre-du-champ drifts and their
//! construction from the conjugate (dual) flow.
//!
//! Two solvers exist on purpose. `solve_fp_forward` integrates the adjoint
//! equation of the drift generator `A_V phi = (L/2) phi + Gamma(V, phi)`
//! directly. `construct_fp_solution` builds the same curve from kernel
//! measures of the conjugate flow `f = psi / w`, where `psi` solves the
//! backward equation with final datum `G w(s, .)`; their agreement under
//! refinement is an acceptance criterion, not an implementation assumption.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::heat::SpectralHeat;
use crate::hjb::{chain_rule_defect, ScalarMap};
use crate::potential::Potential;
use crate::schroedinger::{integrate_backward, Substeps};
use crate::space::{carre_du_champ, generator_apply, Field, Space};
use crate::timefield::{TimeField, TimeGrid};

const MASS_TOL: f64 = 1e-9;
const DENSITY_CLAMP: f64 = 1e-9;

/// Time-indexed family of probability densities with respect to m.
#[derive(Clone, Debug)]
pub struct MeasureCurve {
    grid: TimeGrid,
    densities: Vec<Field>,
    /// recorded admissibility bound, `sup_(tau,x) rho`
    c1_bound: f64,
    /// most negative density entry seen before clamping
    min_density_seen: f64,
}

impl MeasureCurve {
    /// Validates mass and positivity frame by frame. Entries in
    /// `[-1e-9, 0)` are clamped to zero (integrator round-off band) and the
    /// frame is renormalized; anything more negative is an error.
    pub fn new(grid: TimeGrid, densities: Vec<Field>) -> Result<Self> {
        if densities.len() != grid.len() {
            return Err(CoreError::GridMismatch(format!(
                "{} density frames for {} nodes",
                densities.len(),
                grid.len()
            )));
        }
        let mut min_seen = 0.0_f64;
        let mut c1 = 0.0_f64;
        let mut cleaned = Vec::with_capacity(densities.len());
        for (j, frame) in densities.into_iter().enumerate() {
            let time = grid.time(j);
            let mut values = frame.into_values();
            for (x, v) in values.iter_mut().enumerate() {
                if *v < 0.0 {
                    min_seen = min_seen.min(*v);
                    if *v < -DENSITY_CLAMP {
                        return Err(CoreError::NegativeDensity { time, point: x, value: *v });
                    }
                    *v = 0.0;
                }
            }
            let field = Field::new(values)?;
            c1 = c1.max(field.max());
            cleaned.push(field);
        }
        Ok(Self { grid, densities: cleaned, c1_bound: c1, min_density_seen: min_seen })
    }

    /// Same, but also checks masses against the space measure.
    pub fn new_checked(s: &Space, grid: TimeGrid, densities: Vec<Field>) -> Result<Self> {
        let mut curve = Self::new(grid, densities)?;
        for j in 0..curve.grid.len() {
            let mass = mass_of(s, &curve.densities[j]);
            if (mass - 1.0).abs() > MASS_TOL {
                return Err(CoreError::NotNormalized { mass, tol: MASS_TOL });
            }
            // remove round-off drift so downstream identities see unit mass
            curve.densities[j] = curve.densities[j].scale(1.0 / mass);
        }
        curve.c1_bound = curve.densities.iter().map(Field::max).fold(0.0, f64::max);
        Ok(curve)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn density(&self, j: usize) -> &Field {
        &self.densities[j]
    }

    pub fn densities(&self) -> &[Field] {
        &self.densities
    }

    pub fn initial(&self) -> &Field {
        &self.densities[0]
    }

    pub fn terminal(&self) -> &Field {
        self.densities.last().expect("curves are nonempty")
    }

    /// Admissibility bound `sup rho`.
    pub fn c1_bound(&self) -> f64 {
        self.c1_bound
    }

    pub fn min_density_seen(&self) -> f64 {
        self.min_density_seen
    }

    pub fn sup_distance(&self, other: &MeasureCurve) -> Result<f64> {
        if self.grid != other.grid {
            return Err(CoreError::GridMismatch("curves on different grids".into()));
        }
        Ok(self
            .densities
            .iter()
            .zip(&other.densities)
            .map(|(a, b)| a.sub(b).sup_norm())
            .fold(0.0, f64::max))
    }
}

fn mass_of(s: &Space, density: &Field) -> f64 {
    density.values().iter().zip(s.measure()).map(|(&d, &m)| d * m).sum()
}

/// Drift potential acting through the carre du champ.
#[derive(Clone, Debug)]
pub struct Drift {
    field: TimeField,
}

impl Drift {
    pub fn new(field: TimeField) -> Self {
        Self { field }
    }

    pub fn zero(grid: TimeGrid, n: usize) -> Self {
        Self { field: TimeField::constant(grid, Field::zeros(n)) }
    }

    pub fn time_constant(grid: TimeGrid, profile: Field) -> Self {
        Self { field: TimeField::constant(grid, profile) }
    }

    /// The optimal drift `-u` for a value function `u`.
    pub fn negated(u: &TimeField) -> Self {
        Self { field: u.map_frames(|f| f.scale(-1.0)) }
    }

    pub fn field(&self) -> &TimeField {
        &self.field
    }

    pub fn frame_at(&self, t: f64) -> Result<Field> {
        let grid = self.field.grid();
        self.field.frame_at(t.clamp(grid.t_start(), grid.t_end()))
    }

    /// Largest edge increment over the frames, used for step control.
    fn max_edge_increment(&self, s: &Space) -> f64 {
        self.field
            .frames()
            .iter()
            .map(|f| {
                s.edges()
                    .iter()
                    .map(|&(x, y, _)| (f.get(x) - f.get(y)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Test function: frames plus analytic time-derivative frames.
#[derive(Clone, Debug)]
pub struct TestFunction {
    values: TimeField,
    dt: TimeField,
    pub label: String,
}

impl TestFunction {
    pub fn new(values: TimeField, dt: TimeField, label: impl Into<String>) -> Result<Self> {
        if values.grid() != dt.grid() {
            return Err(CoreError::GridMismatch("test function and derivative grids".into()));
        }
        Ok(Self { values, dt, label: label.into() })
    }

    pub fn time_constant(grid: TimeGrid, profile: Field, label: impl Into<String>) -> Self {
        let n = profile.len();
        Self {
            values: TimeField::constant(grid, profile),
            dt: TimeField::constant(grid, Field::zeros(n)),
            label: label.into(),
        }
    }

    /// `phi(tau, x) = env(tau) g(x)` with an analytic envelope derivative.
    pub fn separable(
        grid: TimeGrid,
        profile: Field,
        env: impl Fn(f64) -> f64,
        env_dt: impl Fn(f64) -> f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let values: Vec<Field> =
            grid.times().iter().map(|&t| profile.scale(env(t))).collect();
        let dts: Vec<Field> =
            grid.times().iter().map(|&t| profile.scale(env_dt(t))).collect();
        Ok(Self {
            values: TimeField::new(grid, values)?,
            dt: TimeField::new(grid, dts)?,
            label: label.into(),
        })
    }

    pub fn values(&self) -> &TimeField {
        &self.values
    }

    pub fn dt(&self) -> &TimeField {
        &self.dt
    }

    pub fn sup_bound(&self) -> f64 {
        self.values.sup_norm()
    }
}

/// Squared drift norm along a curve:
/// trapezoid in time of `sum_x [V^2 + Gamma(V,V)] rho m`, then a square
/// root. Zero exactly when V vanishes on the support of the curve.
pub fn drift_norm(s: &Space, mu: &MeasureCurve, v: &Drift) -> Result<f64> {
    if mu.grid() != v.field().grid() {
        return Err(CoreError::GridMismatch("drift and curve grids differ".into()));
    }
    let grid = mu.grid();
    let integrand: Vec<f64> = (0..grid.len())
        .map(|j| {
            let vf = v.field().frame(j);
            let gamma = carre_du_champ(s, vf, vf);
            vf.values()
                .iter()
                .zip(gamma.values())
                .zip(mu.density(j).values())
                .zip(s.measure())
                .map(|(((&vv, &g), &rho), &m)| (vv * vv + g) * rho * m)
                .sum()
        })
        .collect();
    Ok(trapezoid(&integrand, grid.dt()).max(0.0).sqrt())
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dt * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}

/// Adjoint of the drift generator in the m-weighted inner product:
/// `(A* rho)(x) = (L/2 rho)(x) + (1/(2m(x))) sum_y c(x,y)(V(x)-V(y))(rho(x)+rho(y))`.
/// `A_V 1 = 0` makes mass conservation exact for any drift.
fn adjoint_apply(s: &Space, v_frame: &Field, rho: &Field) -> Field {
    let half_l = generator_apply(s, rho).scale(0.5);
    let vv = v_frame.values();
    let rv = rho.values();
    Field::from_fn(s.n(), |x| {
        let mut acc = 0.0;
        for &(y, c) in s.neighbors(x) {
            acc += c * (vv[x] - vv[y]) * (rv[x] + rv[y]);
        }
        half_l.get(x) + acc / (2.0 * s.measure()[x])
    })
}

/// Forward integration of the weak equation's adjoint:
/// `d rho / d tau = A*_V rho` from the initial density at `grid.t_start()`.
pub fn solve_fp_forward(
    s: &Space,
    v: &Drift,
    rho_t: &Field,
    grid: TimeGrid,
) -> Result<MeasureCurve> {
    s.check_field(rho_t)?;
    let mass = mass_of(s, rho_t);
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(CoreError::NotNormalized { mass, tol: MASS_TOL });
    }
    if rho_t.min() < 0.0 {
        return Err(CoreError::InvalidArgument("initial density has negative entries".into()));
    }

    let bound = s.generator_norm_bound() * (1.0 + v.max_edge_increment(s));
    let k_sub = ((grid.dt() * bound / 0.2).ceil() as usize).max(1);
    let h = grid.dt() / k_sub as f64;

    let mut frames = Vec::with_capacity(grid.len());
    frames.push(rho_t.clone());
    let mut state = rho_t.clone();
    for j in 0..grid.steps() {
        let mut t = grid.time(j);
        for _ in 0..k_sub {
            let vf = |tt: f64| v.frame_at(tt).expect("drift frames cover the grid");
            let k1 = adjoint_apply(s, &vf(t), &state);
            let k2 = adjoint_apply(s, &vf(t + h / 2.0), &state.add(&k1.scale(h / 2.0)));
            let k3 = adjoint_apply(s, &vf(t + h / 2.0), &state.add(&k2.scale(h / 2.0)));
            let k4 = adjoint_apply(s, &vf(t + h), &state.add(&k3.scale(h)));
            state = state.add(
                &k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(h / 6.0),
            );
            t += h;
        }
        frames.push(state.clone());
    }
    MeasureCurve::new_checked(s, grid, frames)
}

/// Weak-form residual of a curve against a drift:
/// time integral of `sum [d phi + (L/2) phi + Gamma(V, phi)] rho m` minus
/// the boundary terms.
pub fn weak_fp_residual(
    s: &Space,
    v: &Drift,
    mu: &MeasureCurve,
    phi: &TestFunction,
) -> Result<f64> {
    weak_residual_impl(s, mu, phi, |j, phi_frame| {
        Ok(carre_du_champ(s, v.field().frame(j), phi_frame))
    })
}

/// Same residual with the construction's exact drift term
/// `Gamma(phi, w) / w` in place of `Gamma(V, phi)`.
pub fn weak_fp_residual_exact_drift(
    s: &Space,
    w: &TimeField,
    mu: &MeasureCurve,
    phi: &TestFunction,
) -> Result<f64> {
    if w.grid() != mu.grid() {
        return Err(CoreError::GridMismatch("w and curve grids differ".into()));
    }
    weak_residual_impl(s, mu, phi, |j, phi_frame| {
        let wf = w.frame(j);
        if wf.min() <= 0.0 {
            return Err(CoreError::NonPositiveFrame {
                time: w.grid().time(j),
                point: 0,
                value: wf.min(),
            });
        }
        Ok(carre_du_champ(s, phi_frame, wf).zip_map(wf, |g, ww| g / ww))
    })
}

fn weak_residual_impl(
    s: &Space,
    mu: &MeasureCurve,
    phi: &TestFunction,
    drift_term: impl Fn(usize, &Field) -> Result<Field>,
) -> Result<f64> {
    let grid = mu.grid();
    if phi.values().grid() != grid {
        return Err(CoreError::GridMismatch("test function and curve grids differ".into()));
    }
    let mut integrand = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let phi_frame = phi.values().frame(j);
        let inner = phi
            .dt()
            .frame(j)
            .add(&generator_apply(s, phi_frame).scale(0.5))
            .add(&drift_term(j, phi_frame)?);
        integrand.push(
            inner
                .values()
                .iter()
                .zip(mu.density(j).values())
                .zip(s.measure())
                .map(|((&a, &rho), &m)| a * rho * m)
                .sum::<f64>(),
        );
    }
    let lhs = trapezoid(&integrand, grid.dt());
    let boundary = inner_product(s, phi.values().frame(grid.steps()), mu.terminal())
        - inner_product(s, phi.values().frame(0), mu.initial());
    Ok(lhs - boundary)
}

fn inner_product(s: &Space, a: &Field, rho: &Field) -> f64 {
    a.values()
        .iter()
        .zip(rho.values())
        .zip(s.measure())
        .map(|((&av, &rv), &m)| av * rv * m)
        .sum()
}

/// Conjugate flow `f(G, t, .) = psi(t, .) / w(t, .)`, where `psi` solves the
/// backward equation from `psi(send, .) = G w(send, .)`. Defined on the
/// sub-grid `[t_start(w), send]`; the final frame equals G exactly.
pub fn solve_conjugate(
    s: &Space,
    potential: &Potential,
    w: &TimeField,
    g: &Field,
    send: f64,
) -> Result<TimeField> {
    s.check_field(g)?;
    if w.min() <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "conjugate flow needs strictly positive w frames".into(),
        ));
    }
    let Some(j_send) = w.grid().index_of(send) else {
        return Err(CoreError::GridMismatch(format!("send = {send} is not a grid time of w")));
    };
    if j_send == 0 {
        return Err(CoreError::InvalidArgument("send must lie strictly after t_start".into()));
    }
    let sub = TimeGrid::new(w.grid().t_start(), send, j_send)?;
    let end = DMatrix::from_fn(s.n(), 1, |x, _| g.get(x) * w.frame(j_send).get(x));
    let psi = integrate_backward(s, potential, sub, end, Substeps::Auto)?;
    let frames: Vec<Field> = psi
        .iter()
        .enumerate()
        .map(|(j, m)| Field::from_fn(s.n(), |x| m[(x, 0)] / w.frame(j).get(x)))
        .collect();
    TimeField::new(sub, frames)
}

/// Growth factor of the conjugate flow in L1(m):
/// `max_tau ||f(tau)||_L1 / ||G||_L1`.
pub fn conjugate_l1_growth(s: &Space, f: &TimeField, g: &Field) -> f64 {
    let l1 = |field: &Field| -> f64 {
        field.values().iter().zip(s.measure()).map(|(&v, &m)| v.abs() * m).sum()
    };
    let g_norm = l1(g).max(f64::MIN_POSITIVE);
    f.frames().iter().map(|fr| l1(fr) / g_norm).fold(0.0, f64::max)
}

/// Kernel measures of the conjugate flow over `[t, send]`:
/// `M[x][y] = f(1_y, t, x)`. Rows are probability vectors within 1e-9
/// (clamped and renormalized); the whole family is a forward semigroup.
pub fn kernel_measures(
    s: &Space,
    potential: &Potential,
    w: &TimeField,
    t: f64,
    send: f64,
) -> Result<DMatrix<f64>> {
    if w.min() <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "kernel measures need strictly positive w frames".into(),
        ));
    }
    let (Some(j_t), Some(j_send)) = (w.grid().index_of(t), w.grid().index_of(send)) else {
        return Err(CoreError::GridMismatch(
            "t and send must both be grid times of w".into(),
        ));
    };
    let n = s.n();
    if j_t == j_send {
        return Ok(DMatrix::identity(n, n));
    }
    if j_t > j_send {
        return Err(CoreError::InvalidArgument("need t < send".into()));
    }
    let sub = TimeGrid::new(t, send, j_send - j_t)?;
    // columns evolve every indicator at once: Psi(send) = diag(w(send))
    let end = DMatrix::from_fn(n, n, |x, y| if x == y { w.frame(j_send).get(x) } else { 0.0 });
    let psi = integrate_backward(s, potential, sub, end, Substeps::Auto)?;
    let mut rows = DMatrix::zeros(n, n);
    for x in 0..n {
        let w_t_x = w.frame(j_t).get(x);
        for y in 0..n {
            rows[(x, y)] = psi[0][(x, y)] / w_t_x;
        }
    }
    normalize_stochastic_rows(&mut rows)?;
    Ok(rows)
}

fn normalize_stochastic_rows(rows: &mut DMatrix<f64>) -> Result<()> {
    let n = rows.nrows();
    for x in 0..n {
        let mut sum = 0.0;
        for y in 0..n {
            let v = rows[(x, y)];
            if v < -MASS_TOL {
                return Err(CoreError::InvalidKernel {
                    what: "nonnegative kernel-measure rows",
                    deviation: -v,
                });
            }
            rows[(x, y)] = v.max(0.0);
            sum += rows[(x, y)];
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(CoreError::InvalidKernel {
                what: "unit kernel-measure row sums",
                deviation: (sum - 1.0).abs(),
            });
        }
        for y in 0..n {
            rows[(x, y)] /= sum;
        }
    }
    Ok(())
}

/// Assembles the measure curve of the dual construction on the grid of `w`:
/// `rho_(j+1)(y) m(y) = sum_x rho_j(x) m(x) M_j[x][y]` with one-interval
/// kernel measures (their products realize the forward semigroup exactly).
pub fn construct_fp_solution(
    s: &Space,
    potential: &Potential,
    w: &TimeField,
    rho_t: &Field,
) -> Result<MeasureCurve> {
    s.check_field(rho_t)?;
    let grid = *w.grid();
    let n = s.n();
    let mut frames = Vec::with_capacity(grid.len());
    frames.push(rho_t.clone());
    let mut masses: Vec<f64> =
        rho_t.values().iter().zip(s.measure()).map(|(&d, &m)| d * m).collect();
    for j in 0..grid.steps() {
        let step = kernel_measures(s, potential, w, grid.time(j), grid.time(j + 1))?;
        let mut next = vec![0.0_f64; n];
        for x in 0..n {
            let mx = masses[x];
            if mx == 0.0 {
                continue;
            }
            for y in 0..n {
                next[y] += mx * step[(x, y)];
            }
        }
        masses = next;
        frames.push(Field::new(
            masses.iter().zip(s.measure()).map(|(&mass, &m)| mass / m).collect(),
        )?);
    }
    MeasureCurve::new_checked(s, grid, frames)
}

/// Control cost of a drift along a curve:
/// `J = int sum [Gamma(V,V)/2 - F] rho m dtau + sum u0 rho_final m`.
pub fn value_functional(
    s: &Space,
    potential: &Potential,
    u0: &Field,
    v: &Drift,
    mu: &MeasureCurve,
) -> Result<f64> {
    s.check_field(u0)?;
    if mu.grid() != v.field().grid() {
        return Err(CoreError::GridMismatch("drift and curve grids differ".into()));
    }
    let grid = mu.grid();
    let integrand: Vec<f64> = (0..grid.len())
        .map(|j| {
            let vf = v.field().frame(j);
            let gamma = carre_du_champ(s, vf, vf);
            let f_frame = potential.frame(s.n(), grid.time(j));
            gamma
                .values()
                .iter()
                .zip(f_frame.values())
                .zip(mu.density(j).values())
                .zip(s.measure())
                .map(|(((&g, &f), &rho), &m)| (0.5 * g - f) * rho * m)
                .sum()
        })
        .collect();
    Ok(trapezoid(&integrand, grid.dt()) + inner_product(s, u0, mu.terminal()))
}

/// Standard polling set for weak-form residual checks: indicators, the five
/// smoothest generator eigenvectors, the same eigenvectors under a smooth
/// envelope vanishing at both endpoints, and twenty random smooth fields
/// with random time envelopes.
pub fn polling_test_functions(
    s: &Space,
    grid: TimeGrid,
    seed: u64,
) -> Result<Vec<TestFunction>> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let n = s.n();
    let heat = SpectralHeat::new(s);
    let mut set = Vec::new();
    for y in 0..n {
        set.push(TestFunction::time_constant(
            grid,
            Field::indicator(n, y),
            format!("indicator-{y}"),
        ));
    }
    let n_eigen = 5.min(n);
    for k in 0..n_eigen {
        set.push(TestFunction::time_constant(
            grid,
            heat.eigenfield(k),
            format!("eigen-{k}"),
        ));
    }
    let span = grid.span();
    let t0 = grid.t_start();
    for k in 0..n_eigen {
        let pi = std::f64::consts::PI;
        set.push(TestFunction::separable(
            grid,
            heat.eigenfield(k),
            move |t| ((t - t0) * pi / span).sin().powi(2),
            move |t| (2.0 * (t - t0) * pi / span).sin() * pi / span,
            format!("enveloped-eigen-{k}"),
        )?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in 0..20 {
        let mut profile = Field::zeros(n);
        for k in 0..n_eigen {
            let coeff = rng.gen_range(-1.0..1.0) / (1.0 + (k * k) as f64);
            profile = profile.add(&heat.eigenfield(k).scale(coeff));
        }
        let c0: f64 = rng.gen_range(0.2..1.0);
        let c1: f64 = rng.gen_range(-0.5..0.5);
        let omega: f64 = rng.gen_range(0.5..3.0);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        set.push(TestFunction::separable(
            grid,
            profile,
            move |t| c0 + c1 * (omega * t + phase).cos(),
            move |t| -c1 * omega * (omega * t + phase).sin(),
            format!("random-smooth-{idx}"),
        )?);
    }
    Ok(set)
}

/// Reduced polling set for per-drift reporting inside the value study.
fn reporting_test_functions(s: &Space, grid: TimeGrid, seed: u64) -> Result<Vec<TestFunction>> {
    let full = polling_test_functions(s, grid, seed)?;
    let n = s.n();
    // keep the eigen, enveloped and two random entries; indicators are the
    // bulk of the cost and are exercised by the acceptance polling run
    let keep: Vec<TestFunction> = full
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i >= n && *i < n + 12)
        .map(|(_, tf)| tf)
        .collect();
    Ok(keep)
}

/// Report of the value-inequality verification.
#[derive(Clone, Debug)]
pub struct ValueReport {
    /// `sum u(t, .) rho_t m`, the value side of the identity
    pub lhs: f64,
    /// computed allowance: `2 sup(chain defect) |t| + 10 quadrature estimate`
    pub allowance: f64,
    pub chain_defect_sup: f64,
    pub quadrature_estimate: f64,
    /// cost of the optimal drift `-u`
    pub j_optimal: f64,
    pub entries: Vec<ValueEntry>,
}

#[derive(Clone, Debug)]
pub struct ValueEntry {
    pub label: String,
    pub j: f64,
    pub gap_vs_optimal: f64,
    pub fp_residual_max: f64,
    pub c1_bound: f64,
    /// `J(V) >= lhs - allowance`
    pub lower_bound_ok: bool,
}

impl ValueReport {
    /// `J(-u) - lhs <= allowance`.
    pub fn optimal_gap(&self) -> f64 {
        self.j_optimal - self.lhs
    }

    pub fn all_bounds_hold(&self) -> bool {
        self.optimal_gap() <= self.allowance
            && self.entries.iter().all(|e| e.lower_bound_ok)
            && self
                .entries
                .iter()
                .all(|e| e.j >= self.j_optimal - self.allowance)
    }
}

/// Verifies the value inequality for a family of drifts: every cost stays
/// above `lhs - allowance`, with equality (within allowance) at `V = -u`.
pub fn verify_value_inequality(
    s: &Space,
    potential: &Potential,
    u: &TimeField,
    drifts: &[(String, Drift)],
    rho_t: &Field,
) -> Result<ValueReport> {
    let grid = *u.grid();
    let span = -grid.t_start();
    let u0 = u.frame(grid.steps()).clone();
    let w = crate::hjb::hopf_cole_inverse(u);

    let chain_defect_sup = w
        .frames()
        .iter()
        .map(|frame| {
            chain_rule_defect(s, frame, &ScalarMap::NegLog).map(|d| d.sup_norm())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let optimal = Drift::negated(u);
    let mu_optimal = solve_fp_forward(s, &optimal, rho_t, grid)?;
    let j_optimal = value_functional(s, potential, &u0, &optimal, &mu_optimal)?;
    let quadrature_estimate =
        value_quadrature_estimate(s, potential, &u0, &optimal, &mu_optimal)?;
    let allowance = 2.0 * chain_defect_sup * span + 10.0 * quadrature_estimate;

    let lhs = inner_product(s, u.frame(0), rho_t);
    let poll = reporting_test_functions(s, grid, 2024)?;

    let entries = drifts
        .iter()
        .map(|(label, v)| -> Result<ValueEntry> {
            let mu = solve_fp_forward(s, v, rho_t, grid)?;
            let j = value_functional(s, potential, &u0, v, &mu)?;
            let fp_residual_max = poll
                .iter()
                .map(|phi| weak_fp_residual(s, v, &mu, phi).map(f64::abs))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(ValueEntry {
                label: label.clone(),
                j,
                gap_vs_optimal: j - j_optimal,
                fp_residual_max,
                c1_bound: mu.c1_bound(),
                lower_bound_ok: j >= lhs - allowance,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ValueReport {
        lhs,
        allowance,
        chain_defect_sup,
        quadrature_estimate,
        j_optimal,
        entries,
    })
}

/// Richardson-style quadrature estimate: the cost recomputed on every other
/// frame differs from the full-grid cost by about the trapezoid error.
fn value_quadrature_estimate(
    s: &Space,
    potential: &Potential,
    u0: &Field,
    v: &Drift,
    mu: &MeasureCurve,
) -> Result<f64> {
    let grid = mu.grid();
    if grid.steps() % 2 != 0 || grid.steps() < 4 {
        return Ok(0.0);
    }
    let j_full = value_functional(s, potential, u0, v, mu)?;
    let integrand: Vec<f64> = (0..grid.len())
        .step_by(2)
        .map(|j| {
            let vf = v.field().frame(j);
            let gamma = carre_du_champ(s, vf, vf);
            let f_frame = potential.frame(s.n(), grid.time(j));
            gamma
                .values()
                .iter()
                .zip(f_frame.values())
                .zip(mu.density(j).values())
                .zip(s.measure())
                .map(|(((&g, &f), &rho), &m)| (0.5 * g - f) * rho * m)
                .sum()
        })
        .collect();
    let j_half = trapezoid(&integrand, 2.0 * grid.dt()) + inner_product(s, u0, mu.terminal());
    Ok((j_full - j_half).abs())
}

/// Second-order one-sided check of the cross-derivative identity of the
/// conjugate flow at `t = s = send`: forward differences in the final-time
/// slot plus backward differences in the running-time slot cancel at
/// quadratic order in the frame spacing.
pub fn conjugate_time_derivative_check(
    s: &Space,
    potential: &Potential,
    w: &TimeField,
    g: &Field,
    send: f64,
) -> Result<f64> {
    let grid = w.grid();
    let Some(j) = grid.index_of(send) else {
        return Err(CoreError::GridMismatch(format!("send = {send} not on the grid")));
    };
    if j < 2 || j + 2 > grid.steps() {
        return Err(CoreError::InvalidArgument(
            "send must sit at least two frames from both grid ends".into(),
        ));
    }
    let dt = grid.dt();
    let t_m1 = grid.time(j - 1);
    let t_m2 = grid.time(j - 2);
    let f_here = solve_conjugate(s, potential, w, g, send)?;
    let f_up1 = solve_conjugate(s, potential, w, g, grid.time(j + 1))?;
    let f_up2 = solve_conjugate(s, potential, w, g, grid.time(j + 2))?;

    // d/ds at fixed t = send, one-sided forward in s
    let ds = g
        .scale(-3.0)
        .add(&f_up1.frame_at(send)?.scale(4.0))
        .add(&f_up2.frame_at(send)?.scale(-1.0))
        .scale(1.0 / (2.0 * dt));
    // d/dt at fixed s = send, one-sided backward in t
    let dtv = g
        .scale(3.0)
        .add(&f_here.frame_at(t_m1)?.scale(-4.0))
        .add(&f_here.frame_at(t_m2)?)
        .scale(1.0 / (2.0 * dt));
    Ok(ds.add(&dtv).sup_norm())
}
