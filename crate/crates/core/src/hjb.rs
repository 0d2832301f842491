//! Logarithmic transform to the viscous Hamilton-Jacobi equation and its
//! residual diagnostics.
//!
//! Two residuals are shipped on purpose. The quadratic-gradient form
//! `du/dt + (L/2) u - Gamma(u,u)/2 - F` holds on graphs only in the
//! refinement limit, because the chain rule behind it is a strong-locality
//! fact. The nonlinear-generator form `du/dt - (1/2) e^u L(e^-u) - F` is
//! algebraically forced by the linear equation for w = e^-u and is exact up
//! to time differencing on any space. Their gap is exactly a chain-rule
//! defect, which is also reported.

use crate::error::{CoreError, Result};
use crate::potential::Potential;
use crate::space::{carre_du_champ, generator_apply, Field, Space};
use crate::timefield::TimeField;

/// Twice-differentiable scalar maps used by the chain-rule diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarMap {
    Affine { a: f64, b: f64 },
    Square,
    NegLog,
    Exp { rate: f64 },
}

impl ScalarMap {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ScalarMap::Affine { a, b } => a * r + b,
            ScalarMap::Square => r * r,
            ScalarMap::NegLog => -r.ln(),
            ScalarMap::Exp { rate } => (rate * r).exp(),
        }
    }

    pub fn d1(&self, r: f64) -> f64 {
        match self {
            ScalarMap::Affine { a, .. } => *a,
            ScalarMap::Square => 2.0 * r,
            ScalarMap::NegLog => -1.0 / r,
            ScalarMap::Exp { rate } => rate * (rate * r).exp(),
        }
    }

    pub fn d2(&self, r: f64) -> f64 {
        match self {
            ScalarMap::Affine { .. } => 0.0,
            ScalarMap::Square => 2.0,
            ScalarMap::NegLog => 1.0 / (r * r),
            ScalarMap::Exp { rate } => rate * rate * (rate * r).exp(),
        }
    }

    fn requires_positive(&self) -> bool {
        matches!(self, ScalarMap::NegLog)
    }
}

/// `u = -log w`, frame by frame. Every frame must be strictly positive;
/// solver output from a positive final condition never trips this guard.
pub fn hopf_cole(w: &TimeField) -> Result<TimeField> {
    for (j, frame) in w.frames().iter().enumerate() {
        for (x, &v) in frame.values().iter().enumerate() {
            if v <= 0.0 {
                return Err(CoreError::NonPositiveFrame {
                    time: w.grid().time(j),
                    point: x,
                    value: v,
                });
            }
        }
    }
    Ok(w.map_frames(|f| f.map(|v| -v.ln())))
}

/// Inverse transform, `w = e^-u`.
pub fn hopf_cole_inverse(u: &TimeField) -> TimeField {
    u.map_frames(|f| f.map(|v| (-v).exp()))
}

/// Chain-rule defect `L eta(f) - eta'(f) L f - eta''(f) Gamma(f,f)`.
///
/// Zero for affine maps by telescoping, zero for the square by the discrete
/// product identity, and O(mesh^2) for smooth maps on refined lattices.
pub fn chain_rule_defect(s: &Space, f: &Field, eta: &ScalarMap) -> Result<Field> {
    s.check_field(f)?;
    if eta.requires_positive() && f.min() <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "map needs a strictly positive field".into(),
        ));
    }
    let eta_f = f.map(|r| eta.eval(r));
    let l_eta = generator_apply(s, &eta_f);
    let lf = generator_apply(s, f);
    let gamma = carre_du_champ(s, f, f);
    Ok(Field::from_fn(s.n(), |x| {
        l_eta.get(x) - eta.d1(f.get(x)) * lf.get(x) - eta.d2(f.get(x)) * gamma.get(x)
    }))
}

/// Per-frame norms of the two residuals.
#[derive(Clone, Copy, Debug)]
pub struct FrameNorms {
    pub time: f64,
    pub residual_sup: f64,
    pub residual_l2: f64,
    pub exact_sup: f64,
    pub exact_l2: f64,
}

/// Residual report for a candidate solution of the Hamilton-Jacobi flow.
#[derive(Clone, Debug)]
pub struct HjbReport {
    /// quadratic-gradient residual; decays under mesh refinement
    pub residual: TimeField,
    /// nonlinear-generator residual; stays at time-differencing order
    pub exact_residual: TimeField,
    /// chain-rule defect of the logarithm along w = e^-u
    pub chain_defect: TimeField,
    pub norms: Vec<FrameNorms>,
}

impl HjbReport {
    pub fn residual_sup(&self) -> f64 {
        self.residual.sup_norm()
    }

    pub fn exact_residual_sup(&self) -> f64 {
        self.exact_residual.sup_norm()
    }

    pub fn chain_defect_sup(&self) -> f64 {
        self.chain_defect.sup_norm()
    }
}

/// Evaluates both residual forms for `u` against the potential.
pub fn hjb_residual(s: &Space, potential: &Potential, u: &TimeField) -> Result<HjbReport> {
    if u.n_points() != s.n() {
        return Err(CoreError::FieldLength { expected: s.n(), found: u.n_points() });
    }
    let du = u.time_derivative();
    let n = s.n();
    let mut residual_frames = Vec::with_capacity(u.grid().len());
    let mut exact_frames = Vec::with_capacity(u.grid().len());
    let mut defect_frames = Vec::with_capacity(u.grid().len());
    let mut norms = Vec::with_capacity(u.grid().len());
    for j in 0..u.grid().len() {
        let t = u.grid().time(j);
        let uf = u.frame(j);
        let f_frame = potential.frame(n, t);

        let lu = generator_apply(s, uf).scale(0.5);
        let gamma = carre_du_champ(s, uf, uf).scale(0.5);
        let residual = du.frame(j).add(&lu).sub(&gamma).sub(&f_frame);

        let w = uf.map(|v| (-v).exp());
        let lw = generator_apply(s, &w);
        let exact = Field::from_fn(n, |x| {
            du.frame(j).get(x) - 0.5 * (uf.get(x)).exp() * lw.get(x) - f_frame.get(x)
        });

        let defect = chain_rule_defect(s, &w, &ScalarMap::NegLog)?;

        norms.push(FrameNorms {
            time: t,
            residual_sup: residual.sup_norm(),
            residual_l2: residual.norm_l2_m(s.measure()),
            exact_sup: exact.sup_norm(),
            exact_l2: exact.norm_l2_m(s.measure()),
        });
        residual_frames.push(residual);
        exact_frames.push(exact);
        defect_frames.push(defect);
    }
    Ok(HjbReport {
        residual: TimeField::new(*u.grid(), residual_frames)?,
        exact_residual: TimeField::new(*u.grid(), exact_frames)?,
        chain_defect: TimeField::new(*u.grid(), defect_frames)?,
        norms,
    })
}
