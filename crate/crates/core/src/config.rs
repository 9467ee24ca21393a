//! Experiment configuration: TOML schema, presets and construction of the
//! problem, domain and noise model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainPath, InteriorProcess, Motion};
use crate::geometry::{ConvexBody, Point, Shape};
use crate::noise::{Mark, NoiseModel};
use crate::problem::{BsdeProblem, Driver, Matrix, Terminal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("missing section [{0}] (no preset supplies it)")]
    MissingSection(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalSpec {
    Zero,
    Brownian {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Brownian terminal projected onto `D_T`.
    ClippedBrownian {
        #[serde(default = "one")]
        scale: f64,
    },
    JumpCompensated {
        #[serde(default)]
        mark: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `offset + B W_T + G N_T`, optionally projected onto `D_T`.
    CustomAffine {
        offset: Vec<f64>,
        #[serde(default)]
        brownian: Vec<Vec<f64>>,
        #[serde(default)]
        jumps: Vec<Vec<f64>>,
        #[serde(default)]
        clip: bool,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverSpec {
    Zero,
    Linear {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
    Saturating {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dim: usize,
    pub terminal: TerminalSpec,
    pub driver: DriverSpec,
    /// Overrides the driver's own Lipschitz constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Rows of `normals` need not be unit; they are normalized with offsets.
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MotionSpec {
    #[default]
    Static,
    /// Rigid translation with constant `velocity`; balls may also grow at
    /// `radius_rate`.
    Translate {
        velocity: Vec<f64>,
        #[serde(default)]
        radius_rate: f64,
    },
    /// Ball centered at `center + velocity t + M W_t` (`modulation` is `M`,
    /// one row per component).
    Adapted {
        #[serde(default)]
        velocity: Vec<f64>,
        modulation: Vec<Vec<f64>>,
        #[serde(default)]
        radius_rate: f64,
    },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum InteriorSpec {
    Named(String),
    Point(Vec<f64>),
}

impl Default for InteriorSpec {
    fn default() -> Self {
        InteriorSpec::Named("center".into())
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: ShapeSpec,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub interior: InteriorSpec,
    /// Required interior margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MarkSpec {
    pub vector: Vec<f64>,
    pub intensity: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub brownian_dim: usize,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub marks: Vec<MarkSpec>,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    #[default]
    Tree,
    Mc,
}

fn default_paths() -> usize {
    10_000
}

fn default_levels() -> Vec<f64> {
    vec![4.0, 16.0, 64.0, 256.0]
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            mode: ModeSpec::Tree,
            n_paths: default_paths(),
            seed: 0,
            levels: default_levels(),
        }
    }
}

/// A config file. A `preset` fills every section the file leaves out.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub run: RunSpec,
}

/// Names accepted by `preset = "..."`.
pub const PRESETS: [&str; 5] = ["zero", "brownian", "clipped-brownian", "jump-compensated", "moving-ball"];

/// Sections of a named preset.
pub fn preset(name: &str) -> Result<(ProblemSpec, DomainSpec, NoiseSpec), ConfigError> {
    let static_ball = |m: usize, r: f64| DomainSpec {
        shape: ShapeSpec::Ball {
            center: vec![0.0; m],
            radius: r,
        },
        motion: MotionSpec::Static,
        interior: InteriorSpec::default(),
        margin: None,
    };
    let noise = |steps: usize, marks: Vec<MarkSpec>| NoiseSpec {
        brownian_dim: 1,
        horizon: 1.0,
        steps,
        marks,
    };
    let unit_mark = |intensity: f64| MarkSpec {
        vector: vec![1.0],
        intensity,
    };
    Ok(match name {
        "zero" => (
            ProblemSpec {
                dim: 1,
                terminal: TerminalSpec::Zero,
                driver: DriverSpec::Zero,
                lipschitz: None,
            },
            static_ball(1, 1.0),
            noise(6, vec![unit_mark(0.5)]),
        ),
        "brownian" => (
            ProblemSpec {
                dim: 1,
                terminal: TerminalSpec::Brownian { scale: 1.0 },
                driver: DriverSpec::Zero,
                lipschitz: None,
            },
            static_ball(1, 100.0),
            noise(6, vec![]),
        ),
        "clipped-brownian" => (
            ProblemSpec {
                dim: 1,
                terminal: TerminalSpec::ClippedBrownian { scale: 1.0 },
                driver: DriverSpec::Linear { a: 1.0, b: 0.0, c: 0.0 },
                lipschitz: None,
            },
            DomainSpec {
                shape: ShapeSpec::Box {
                    lower: vec![-0.5],
                    upper: vec![0.5],
                },
                motion: MotionSpec::Static,
                interior: InteriorSpec::default(),
                margin: Some(0.5),
            },
            NoiseSpec {
                brownian_dim: 1,
                horizon: 1.0,
                steps: 8,
                marks: vec![],
            },
        ),
        "jump-compensated" => (
            ProblemSpec {
                dim: 1,
                terminal: TerminalSpec::JumpCompensated { mark: 0, scale: 1.0 },
                driver: DriverSpec::Zero,
                lipschitz: None,
            },
            static_ball(1, 100.0),
            noise(6, vec![unit_mark(0.8)]),
        ),
        "moving-ball" => (
            ProblemSpec {
                dim: 2,
                terminal: TerminalSpec::CustomAffine {
                    offset: vec![0.0, 0.0],
                    brownian: vec![vec![1.0], vec![0.0]],
                    jumps: vec![vec![0.0], vec![1.0]],
                    clip: true,
                },
                driver: DriverSpec::Linear { a: 1.0, b: 0.0, c: 0.0 },
                lipschitz: None,
            },
            DomainSpec {
                shape: ShapeSpec::Ball {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                },
                motion: MotionSpec::Translate {
                    velocity: vec![1.0, 0.0],
                    radius_rate: 0.0,
                },
                interior: InteriorSpec::default(),
                margin: Some(1.0),
            },
            noise(8, vec![unit_mark(1.0)]),
        ),
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    })
}

/// A config with every section present.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub problem: ProblemSpec,
    pub domain: DomainSpec,
    pub noise: NoiseSpec,
    pub run: RunSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        preset(name)?;
        Ok(Self {
            preset: Some(name.to_string()),
            ..Self::default()
        })
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let base = self.preset.as_deref().map(preset).transpose()?;
        let (bp, bd, bn) = match base {
            Some((p, d, n)) => (Some(p), Some(d), Some(n)),
            None => (None, None, None),
        };
        Ok(ResolvedConfig {
            preset: self.preset.clone(),
            problem: self.problem.clone().or(bp).ok_or(ConfigError::MissingSection("problem"))?,
            domain: self.domain.clone().or(bd).ok_or(ConfigError::MissingSection("domain"))?,
            noise: self.noise.clone().or(bn).ok_or(ConfigError::MissingSection("noise"))?,
            run: self.run.clone(),
        })
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn point(v: &[f64], m: usize, what: &str) -> Result<Point, ConfigError> {
    if v.len() != m {
        return Err(invalid(format!("{what} has length {}, expected {m}", v.len())));
    }
    Ok(Point::from_column_slice(v))
}

fn matrix(rows: &[Vec<f64>], m: usize, cols: usize, what: &str) -> Result<Matrix, ConfigError> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(m, cols));
    }
    if rows.len() != m || rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{what} must be {m} rows of {cols} entries")));
    }
    Ok(Matrix::from_fn(m, cols, |i, j| rows[i][j]))
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn noise_model(&self) -> Result<NoiseModel, ConfigError> {
        let n = &self.noise;
        let marks = n
            .marks
            .iter()
            .map(|mk| Mark {
                vector: Point::from_column_slice(&mk.vector),
                intensity: mk.intensity,
            })
            .collect();
        NoiseModel::new(n.brownian_dim, marks, n.horizon, n.steps).map_err(|e| invalid(e.to_string()))
    }

    pub fn domain_path(&self) -> Result<DomainPath, ConfigError> {
        let m = self.problem.dim;
        let d = self.noise.brownian_dim;
        let horizon = self.noise.horizon;
        let spec = &self.domain;
        let body = match &spec.shape {
            ShapeSpec::Ball { center, radius } => ConvexBody::ball(point(center, m, "ball center")?, *radius),
            ShapeSpec::Box { lower, upper } => {
                ConvexBody::aligned_box(point(lower, m, "box lower")?, point(upper, m, "box upper")?)
            }
            ShapeSpec::Polytope { normals, offsets } => {
                let rows = normals
                    .iter()
                    .map(|r| point(r, m, "polytope normal"))
                    .collect::<Result<Vec<_>, _>>()?;
                ConvexBody::polytope_normalized(rows, offsets.clone())
            }
        }
        .map_err(|e| invalid(e.to_string()))?;

        let (motion, lipschitz) = match &spec.motion {
            MotionSpec::Static => (Motion::Static(body.clone()), 0.0),
            MotionSpec::Translate {
                velocity,
                radius_rate,
            } => {
                let v = point(velocity, m, "velocity")?;
                let speed = v.norm() + radius_rate.abs();
                let motion = match body.shape().clone() {
                    Shape::Ball { center, radius } => {
                        let rate = *radius_rate;
                        Motion::MovingBall {
                            center: Arc::new(move |t| &center + &v * t),
                            radius: Arc::new(move |t| radius + rate * t),
                        }
                    }
                    _ if *radius_rate != 0.0 => {
                        return Err(invalid("radius_rate applies to balls only"));
                    }
                    _ => {
                        let normals = body.face_normals();
                        let base: Vec<f64> = normals.iter().map(|a| body.support(a).expect("dims match")).collect();
                        let shifts: Vec<f64> = normals.iter().map(|a| a.dot(&v)).collect();
                        Motion::MovingPolytope {
                            normals,
                            offsets: Arc::new(move |t| base.iter().zip(&shifts).map(|(b, s)| b + s * t).collect()),
                        }
                    }
                };
                (motion, speed)
            }
            MotionSpec::Adapted {
                velocity,
                modulation,
                radius_rate,
            } => {
                let Shape::Ball { center, radius } = body.shape().clone() else {
                    return Err(invalid("adapted motion applies to balls only"));
                };
                let v = if velocity.is_empty() {
                    Point::zeros(m)
                } else {
                    point(velocity, m, "velocity")?
                };
                let g = matrix(modulation, m, d, "modulation")?;
                let rate = *radius_rate;
                let speed = v.norm() + rate.abs();
                (
                    Motion::AdaptedBall {
                        base: Arc::new(move |t| &center + &v * t),
                        modulation: Arc::new(move |w| &g * w),
                        radius: Arc::new(move |t| radius + rate * t),
                    },
                    speed,
                )
            }
        };
        let interior = match &spec.interior {
            InteriorSpec::Named(s) if s == "center" => InteriorProcess::Center,
            InteriorSpec::Named(s) => return Err(invalid(format!("unknown interior process '{s}'"))),
            InteriorSpec::Point(p) => InteriorProcess::Fixed(point(p, m, "interior point")?),
        };
        Ok(DomainPath::new(motion, horizon, interior)
            .with_lipschitz(lipschitz)
            .with_declared_margin(spec.margin.unwrap_or(0.0)))
    }

    pub fn problem(&self, domain: &DomainPath) -> Result<BsdeProblem, ConfigError> {
        let p = &self.problem;
        let m = p.dim;
        let d = self.noise.brownian_dim;
        let k = self.noise.marks.len();
        if m == 0 {
            return Err(invalid("problem dim must be >= 1"));
        }
        let terminal = match &p.terminal {
            TerminalSpec::Zero => Terminal::zero(m),
            TerminalSpec::Brownian { scale } => Terminal::brownian(m, *scale),
            TerminalSpec::ClippedBrownian { scale } => {
                Terminal::clipped(Terminal::brownian(m, *scale), domain.clone())
            }
            TerminalSpec::JumpCompensated { mark, scale } => {
                let spec = self
                    .noise
                    .marks
                    .get(*mark)
                    .ok_or_else(|| invalid(format!("terminal refers to missing mark {mark}")))?;
                Terminal::compensated_jump(m, *mark, spec.intensity, self.noise.horizon, *scale)
            }
            TerminalSpec::CustomAffine {
                offset,
                brownian,
                jumps,
                clip,
            } => {
                let t = Terminal::affine(
                    point(offset, m, "terminal offset")?,
                    matrix(brownian, m, d, "terminal brownian matrix")?,
                    matrix(jumps, m, k, "terminal jump matrix")?,
                );
                if *clip {
                    Terminal::clipped(t, domain.clone())
                } else {
                    t
                }
            }
        };
        let driver = match p.driver {
            DriverSpec::Zero => Driver::Zero,
            DriverSpec::Linear { a, b, c } => Driver::Linear { a, b, c },
            DriverSpec::Saturating { a, b, c } => Driver::Saturating { a, b, c },
        };
        let problem = BsdeProblem::new(m, d, k, terminal, driver);
        match p.lipschitz {
            Some(c) => problem.with_lipschitz(c).map_err(|e| invalid(e.to_string())),
            None => Ok(problem),
        }
    }
}
