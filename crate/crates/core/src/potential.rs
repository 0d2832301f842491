//! Time-dependent potentials with declared bound metadata.
//!
//! A potential carries its sup bound, a spatial Lipschitz bound and a time
//! derivative bound on the working window. The declared bounds are data used
//! by the window logic of the Duhamel iteration and by the explicit maximum
//! principle; they are validated by sampling.

use crate::error::{CoreError, Result};
use crate::space::{lipschitz_constant, Field, Space};
use crate::timefield::TimeField;

/// Scalar time envelope for separable potentials.
#[derive(Clone, Debug, PartialEq)]
pub enum Envelope {
    One,
    Exp { rate: f64 },
    Cos { omega: f64, phase: f64 },
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Envelope::One => 1.0,
            Envelope::Exp { rate } => (rate * t).exp(),
            Envelope::Cos { omega, phase } => (omega * t + phase).cos(),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            Envelope::One => 0.0,
            Envelope::Exp { rate } => rate * (rate * t).exp(),
            Envelope::Cos { omega, phase } => -omega * (omega * t + phase).sin(),
        }
    }
}

/// Functional form of the potential.
#[derive(Clone, Debug)]
pub enum PotentialKind {
    Constant(f64),
    /// `envelope(t) * profile(x)`
    Separable { envelope: Envelope, profile: Field },
    /// linear interpolation between stored frames; constant extension
    /// outside the tabulated window
    Tabulated(TimeField),
    Sum(Vec<PotentialKind>),
}

impl PotentialKind {
    fn eval(&self, t: f64, x: usize) -> f64 {
        match self {
            PotentialKind::Constant(c) => *c,
            PotentialKind::Separable { envelope, profile } => envelope.eval(t) * profile.get(x),
            PotentialKind::Tabulated(table) => {
                let t = t.clamp(table.grid().t_start(), table.grid().t_end());
                table.value_at(t, x).expect("clamped time is on the grid")
            }
            PotentialKind::Sum(parts) => parts.iter().map(|p| p.eval(t, x)).sum(),
        }
    }

    fn eval_dt(&self, t: f64, x: usize) -> f64 {
        match self {
            PotentialKind::Constant(_) => 0.0,
            PotentialKind::Separable { envelope, profile } => envelope.deriv(t) * profile.get(x),
            PotentialKind::Tabulated(table) => {
                let grid = table.grid();
                if t <= grid.t_start() || t >= grid.t_end() {
                    return 0.0;
                }
                let dt = grid.dt();
                let j = (((t - grid.t_start()) / dt).floor() as usize).min(grid.steps() - 1);
                (table.frame(j + 1).get(x) - table.frame(j).get(x)) / dt
            }
            PotentialKind::Sum(parts) => parts.iter().map(|p| p.eval_dt(t, x)).sum(),
        }
    }
}

/// Potential with declared bounds on a working window `[t_min, 0]`.
#[derive(Clone, Debug)]
pub struct Potential {
    kind: PotentialKind,
    sup_bound: f64,
    lip_bound: f64,
    dt_bound: f64,
}

const BOUND_SAMPLES: usize = 1024;

impl Potential {
    /// Constant potential; all bounds are exact.
    pub fn constant(c: f64) -> Self {
        Self { kind: PotentialKind::Constant(c), sup_bound: c.abs(), lip_bound: 0.0, dt_bound: 0.0 }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Builds a potential and measures its bounds by dense sampling on
    /// `[t_min, 0] x points`, with a small relative margin.
    pub fn for_space(kind: PotentialKind, s: &Space, t_min: f64) -> Result<Self> {
        if !(t_min < 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "potential window start must be negative, got {t_min}"
            )));
        }
        check_kind(&kind, s)?;
        let mut sup = 0.0_f64;
        let mut lip = 0.0_f64;
        let mut dts = 0.0_f64;
        for k in 0..=BOUND_SAMPLES {
            let t = t_min + (0.0 - t_min) * k as f64 / BOUND_SAMPLES as f64;
            let frame = Field::from_fn(s.n(), |x| kind.eval(t, x));
            sup = sup.max(frame.sup_norm());
            lip = lip.max(lipschitz_constant(s, &frame));
            let dframe = Field::from_fn(s.n(), |x| kind.eval_dt(t, x));
            dts = dts.max(dframe.sup_norm());
        }
        let margin = |v: f64| v * (1.0 + 1e-6) + 1e-12;
        Ok(Self { kind, sup_bound: margin(sup), lip_bound: margin(lip), dt_bound: margin(dts) })
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn eval(&self, t: f64, x: usize) -> f64 {
        self.kind.eval(t, x)
    }

    pub fn eval_dt(&self, t: f64, x: usize) -> f64 {
        self.kind.eval_dt(t, x)
    }

    pub fn frame(&self, n: usize, t: f64) -> Field {
        Field::from_fn(n, |x| self.eval(t, x))
    }

    pub fn frame_dt(&self, n: usize, t: f64) -> Field {
        Field::from_fn(n, |x| self.eval_dt(t, x))
    }

    /// Declared bound on `sup |F|` over the working window.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    /// Declared spatial Lipschitz bound per frame.
    pub fn lip_bound(&self) -> f64 {
        self.lip_bound
    }

    /// Declared bound on the time derivative.
    pub fn dt_bound(&self) -> f64 {
        self.dt_bound
    }

    /// Re-samples the window and reports any bound violations beyond 1e-9.
    pub fn validate_bounds(&self, s: &Space, t_min: f64) -> Vec<String> {
        let mut violations = Vec::new();
        for k in 0..=BOUND_SAMPLES {
            let t = t_min + (0.0 - t_min) * k as f64 / BOUND_SAMPLES as f64;
            let frame = self.frame(s.n(), t);
            if frame.sup_norm() > self.sup_bound + 1e-9 {
                violations.push(format!("sup bound violated at t = {t}"));
                break;
            }
        }
        for k in 0..=BOUND_SAMPLES {
            let t = t_min + (0.0 - t_min) * k as f64 / BOUND_SAMPLES as f64;
            if lipschitz_constant(s, &self.frame(s.n(), t)) > self.lip_bound + 1e-9 {
                violations.push(format!("Lipschitz bound violated at t = {t}"));
                break;
            }
        }
        violations
    }

    /// Window norm `sup_t (||F(t)||_{L2(m)} + ||dF/dt(t)||_{L2(m)})`
    /// sampled over `[t_min, 0]`; drives the contraction window length.
    pub fn c1_l2_norm(&self, s: &Space, t_min: f64) -> f64 {
        let mut worst = 0.0_f64;
        for k in 0..=256 {
            let t = t_min + (0.0 - t_min) * k as f64 / 256.0;
            let value = self.frame(s.n(), t).norm_l2_m(s.measure());
            let slope = self.frame_dt(s.n(), t).norm_l2_m(s.measure());
            worst = worst.max(value + slope);
        }
        worst
    }
}

fn check_kind(kind: &PotentialKind, s: &Space) -> Result<()> {
    match kind {
        PotentialKind::Constant(c) => {
            if !c.is_finite() {
                return Err(CoreError::NonFinite { context: "constant potential" });
            }
        }
        PotentialKind::Separable { profile, .. } => s.check_field(profile)?,
        PotentialKind::Tabulated(table) => {
            if table.n_points() != s.n() {
                return Err(CoreError::FieldLength { expected: s.n(), found: table.n_points() });
            }
        }
        PotentialKind::Sum(parts) => {
            for p in parts {
                check_kind(p, s)?;
            }
        }
    }
    Ok(())
}
