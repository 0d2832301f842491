//! Experiment configuration: one JSON document per study.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use hjbd_core::error::{CoreError, Result};
use hjbd_core::io;
use hjbd_core::potential::Potential;
use hjbd_core::space::{build_space, Field, Space, SpaceKind, SpaceSpec};

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceDoc {
    Cycle { n: usize, #[serde(default)] scaling: Option<f64> },
    Torus2d { n: usize, #[serde(default)] scaling: Option<f64> },
    Gasket { level: usize, #[serde(default)] scaling: Option<f64> },
    File { path: String },
}

impl SpaceDoc {
    pub fn build(&self, base: &Path) -> Result<Space> {
        let spec = match self {
            SpaceDoc::Cycle { n, scaling } => {
                SpaceSpec { kind: SpaceKind::Cycle { n: *n }, scaling: *scaling }
            }
            SpaceDoc::Torus2d { n, scaling } => {
                SpaceSpec { kind: SpaceKind::Torus2d { n: *n }, scaling: *scaling }
            }
            SpaceDoc::Gasket { level, scaling } => {
                SpaceSpec { kind: SpaceKind::Gasket { level: *level }, scaling: *scaling }
            }
            SpaceDoc::File { path } => SpaceSpec {
                kind: SpaceKind::File { path: base.join(path).to_string_lossy().into_owned() },
                scaling: None,
            },
        };
        build_space(&spec)
    }

    /// Same family at a different resolution, for ladder studies.
    pub fn at_resolution(&self, n: usize) -> Option<SpaceDoc> {
        match self {
            SpaceDoc::Cycle { scaling, .. } => Some(SpaceDoc::Cycle { n, scaling: *scaling }),
            SpaceDoc::Torus2d { scaling, .. } => Some(SpaceDoc::Torus2d { n, scaling: *scaling }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum FourierMode {
    Explicit { freq: f64, #[serde(default)] sin: f64, #[serde(default)] cos: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldDoc {
    Constant { value: f64 },
    Values { values: Vec<f64> },
    /// mean + sum of harmonics in the point index
    Fourier { mean: f64, modes: Vec<FourierMode> },
    File { path: String },
}

impl FieldDoc {
    pub fn build(&self, n: usize, base: &Path) -> Result<Field> {
        match self {
            FieldDoc::Constant { value } => Ok(Field::constant(n, *value)),
            FieldDoc::Values { values } => {
                if values.len() != n {
                    return Err(CoreError::FieldLength { expected: n, found: values.len() });
                }
                Field::new(values.clone())
            }
            FieldDoc::Fourier { mean, modes } => Ok(Field::from_fn(n, |x| {
                let theta = 2.0 * std::f64::consts::PI * x as f64 / n as f64;
                let mut acc = *mean;
                for FourierMode::Explicit { freq, sin, cos } in modes {
                    acc += sin * (freq * theta).sin() + cos * (freq * theta).cos();
                }
                acc
            })),
            FieldDoc::File { path } => io::load_field(base.join(path), n),
        }
    }
}

/// Drift specification for the value command; `neg_u` variants are resolved
/// against the solved value function.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftDoc {
    Zero,
    NegU,
    NegUPerturbed { delta: f64, seed: u64 },
    Profile { values: Vec<f64> },
    Fourier { mean: f64, modes: Vec<FourierMode> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Identities,
    Schrodinger,
    FeynmanKac,
    Hjb,
    Value,
    Convergence,
    All,
}

impl StudyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::Identities => "identities",
            StudyKind::Schrodinger => "schrodinger",
            StudyKind::FeynmanKac => "feynman-kac",
            StudyKind::Hjb => "hjb",
            StudyKind::Value => "value",
            StudyKind::Convergence => "convergence",
            StudyKind::All => "all",
        }
    }
}

fn default_steps() -> usize {
    400
}

fn default_mc_samples() -> usize {
    20_000
}

fn default_ladder() -> Vec<usize> {
    vec![16, 32]
}

fn default_seed() -> u64 {
    7
}

fn default_out_dir() -> String {
    "hjbd-out".into()
}

#[derive(Clone, Debug, Deserialize)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    pub space: SpaceDoc,
    pub potential: serde_json::Value,
    pub w0: FieldDoc,
    pub t: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub svg: bool,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CoreError::Parse(e.to_string()))?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t < 0.0) {
            return Err(CoreError::InvalidArgument(format!("horizon t must be negative, got {}", self.t)));
        }
        if self.steps == 0 {
            return Err(CoreError::InvalidArgument("steps must be positive".into()));
        }
        if self.mc_samples < 2 {
            return Err(CoreError::InvalidArgument("mc_samples must be at least 2".into()));
        }
        if self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::InvalidArgument("ladder must be strictly increasing".into()));
        }
        if let SpaceDoc::File { path } = &self.space {
            if !self.base_dir.join(path).exists() {
                return Err(CoreError::InvalidArgument(format!("space file {path} does not exist")));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> Result<Space> {
        self.space.build(&self.base_dir)
    }

    /// Builds the configured potential. A separable document may carry
    /// `profile_fourier` instead of an explicit `profile`; it is expanded
    /// for the target space size here, which lets ladder studies reuse one
    /// document across resolutions.
    pub fn potential(&self, space: &Space) -> Result<Potential> {
        let mut value = self.potential.clone();
        if let Some(obj) = value.as_object_mut() {
            if let Some(fourier) = obj.remove("profile_fourier") {
                #[derive(Deserialize)]
                struct FourierProfile {
                    mean: f64,
                    modes: Vec<FourierMode>,
                }
                let doc: FourierProfile = serde_json::from_value(fourier)
                    .map_err(|e| CoreError::Parse(e.to_string()))?;
                let n = space.n();
                let values: Vec<f64> = (0..n)
                    .map(|x| {
                        let theta = 2.0 * std::f64::consts::PI * x as f64 / n as f64;
                        let mut acc = doc.mean;
                        for FourierMode::Explicit { freq, sin, cos } in &doc.modes {
                            acc += sin * (freq * theta).sin() + cos * (freq * theta).cos();
                        }
                        acc
                    })
                    .collect();
                obj.insert(
                    "profile".into(),
                    serde_json::to_value(values).map_err(|e| CoreError::Parse(e.to_string()))?,
                );
            }
        }
        let text =
            serde_json::to_string(&value).map_err(|e| CoreError::Parse(e.to_string()))?;
        io::potential_from_json(&text, space, self.t)
    }

    pub fn w0(&self, space: &Space) -> Result<Field> {
        self.w0.build(space.n(), &self.base_dir)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.out_dir)
    }
}
