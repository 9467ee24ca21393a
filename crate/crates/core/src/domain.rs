//! Time-dependent convex domains, their piecewise-constant discretizations
//! and the interior-margin check.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{hausdorff, ConvexBody, GeometryError, Point};
use crate::noise::{NoiseHistory, ScenarioSet};
use crate::policy::POLICY;

/// Directions used by [`discretization_gap`] for non-ball bodies.
pub const GAP_DIRECTIONS: usize = 256;

pub type TimeVector = Arc<dyn Fn(f64) -> Point + Send + Sync>;
pub type TimeScalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type TimeOffsets = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type BrownianMap = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type InteriorFn = Arc<dyn Fn(f64, &dyn NoiseHistory) -> Option<Point> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("time {t} outside [0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },
    #[error("history does not cover time {t}")]
    InsufficientHistory { t: f64 },
    #[error("domain at t={t}: {source}")]
    Body { t: f64, source: GeometryError },
    #[error("invalid discretization: {0}")]
    InvalidWidths(String),
    #[error("(H4) violated: interior process leaves the domain at t={t} (distance {distance:e})")]
    InteriorOutside { t: f64, distance: f64 },
    #[error("(H4) violated: interior margin {margin:e} <= 0 at t={t}")]
    NonPositiveMargin { t: f64, margin: f64 },
    #[error("(H4) violated: interior margin {margin:e} below declared {declared:e}")]
    MarginBelowDeclared { margin: f64, declared: f64 },
    #[error("grid time {t} is not a scenario time; adapted domains need grid-aligned checks")]
    OffGrid { t: f64 },
}

/// How the body moves in time.
#[derive(Clone)]
pub enum Motion {
    Static(ConvexBody),
    MovingBall {
        center: TimeVector,
        radius: TimeScalar,
    },
    /// Fixed unit outward normals, offsets varying in time.
    MovingPolytope {
        normals: Vec<Point>,
        offsets: TimeOffsets,
    },
    /// Ball centered at `base(t) + modulation(W_t)`.
    AdaptedBall {
        base: TimeVector,
        modulation: BrownianMap,
        radius: TimeScalar,
    },
}

impl fmt::Debug for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Motion::Static(b) => f.debug_tuple("Static").field(b).finish(),
            Motion::MovingBall { .. } => f.write_str("MovingBall"),
            Motion::MovingPolytope { normals, .. } => {
                write!(f, "MovingPolytope({} faces)", normals.len())
            }
            Motion::AdaptedBall { .. } => f.write_str("AdaptedBall"),
        }
    }
}

/// The interior selection `A_t`.
#[derive(Clone)]
pub enum InteriorProcess {
    Fixed(Point),
    /// The reference center of `D_t` (see [`ConvexBody::center`]).
    Center,
    Custom(InteriorFn),
}

impl fmt::Debug for InteriorProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteriorProcess::Fixed(p) => f.debug_tuple("Fixed").field(p).finish(),
            InteriorProcess::Center => f.write_str("Center"),
            InteriorProcess::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// `t -> D_t` on `[0, T]` with its interior process.
#[derive(Clone, Debug)]
pub struct DomainPath {
    motion: Motion,
    horizon: f64,
    interior: InteriorProcess,
    lipschitz: f64,
    declared_margin: f64,
}

impl DomainPath {
    pub fn new(motion: Motion, horizon: f64, interior: InteriorProcess) -> Self {
        Self {
            motion,
            horizon,
            interior,
            lipschitz: 0.0,
            declared_margin: 0.0,
        }
    }

    pub fn fixed(body: ConvexBody, horizon: f64) -> Self {
        Self::new(Motion::Static(body), horizon, InteriorProcess::Center)
    }

    /// Declared Lipschitz constant of the motion in the Hausdorff metric.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = l;
        self
    }

    /// Margin the interior process is required to keep.
    pub fn with_declared_margin(mut self, beta: f64) -> Self {
        self.declared_margin = beta;
        self
    }

    pub fn motion(&self) -> &Motion {
        &self.motion
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interior(&self) -> &InteriorProcess {
        &self.interior
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn declared_margin(&self) -> f64 {
        self.declared_margin
    }

    /// True when `D_t` or `A_t` depends on the noise.
    pub fn is_adapted(&self) -> bool {
        matches!(self.motion, Motion::AdaptedBall { .. })
            || matches!(self.interior, InteriorProcess::Custom(_))
    }

    /// True when `D_t` itself (not only `A_t`) depends on the noise.
    pub fn motion_is_adapted(&self) -> bool {
        matches!(self.motion, Motion::AdaptedBall { .. })
    }

    /// True when the body never changes.
    pub fn is_static(&self) -> bool {
        matches!(self.motion, Motion::Static(_))
    }

    fn check_time(&self, t: f64) -> Result<f64, DomainError> {
        let tol = POLICY.time_snap * (1.0 + self.horizon);
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(DomainError::OutsideHorizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    /// The body `D_t`. Adapted motions read `W_t` from `history`.
    pub fn at(&self, t: f64, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        let t = self.check_time(t)?;
        let wrap = |source| DomainError::Body { t, source };
        match &self.motion {
            Motion::Static(b) => Ok(b.clone()),
            Motion::MovingBall { center, radius } => ConvexBody::ball(center(t), radius(t)).map_err(wrap),
            Motion::MovingPolytope { normals, offsets } => {
                ConvexBody::polytope(normals.clone(), offsets(t)).map_err(wrap)
            }
            Motion::AdaptedBall {
                base,
                modulation,
                radius,
            } => {
                let w = history
                    .brownian_at(t)
                    .ok_or(DomainError::InsufficientHistory { t })?;
                ConvexBody::ball(base(t) + modulation(&w), radius(t)).map_err(wrap)
            }
        }
    }

    /// `D_t` for motions that ignore the noise.
    pub fn at_deterministic(&self, t: f64) -> Result<ConvexBody, DomainError> {
        self.at(t, &crate::noise::NoHistory)
    }

    /// The interior point `A_t`, given the body `D_t` already evaluated.
    pub fn interior_at(
        &self,
        t: f64,
        body: &ConvexBody,
        history: &dyn NoiseHistory,
    ) -> Result<Point, DomainError> {
        match &self.interior {
            InteriorProcess::Fixed(p) => Ok(p.clone()),
            InteriorProcess::Center => Ok(body.center()),
            InteriorProcess::Custom(f) => f(t, history).ok_or(DomainError::InsufficientHistory { t }),
        }
    }

    /// Breakpoints `sigma_i = (sigma_{i-1} + a_i) ^ T` and left-frozen bodies.
    ///
    /// Without `widths` every `a_i = 1/j`. Supplied widths must lie in
    /// `[1/j, 2/j]`, except the last one, which only needs to reach `T`.
    pub fn discretize(
        &self,
        j: usize,
        widths: Option<&[f64]>,
    ) -> Result<DiscretizedDomainPath, DomainError> {
        if j == 0 {
            return Err(DomainError::InvalidWidths("j must be >= 1".into()));
        }
        let big_t = self.horizon;
        let snap = POLICY.time_snap * (1.0 + big_t);
        let lo = 1.0 / j as f64;
        let hi = 2.0 / j as f64;
        let mut breakpoints = vec![0.0];
        let mut i = 0;
        while *breakpoints.last().unwrap() < big_t {
            let prev = *breakpoints.last().unwrap();
            let a = match widths {
                None => lo,
                Some(ws) => *ws.get(i).ok_or_else(|| {
                    DomainError::InvalidWidths(format!(
                        "{} widths end at {prev} before T = {big_t}",
                        ws.len()
                    ))
                })?,
            };
            let reaches = prev + a >= big_t - snap;
            let bad = !(a > 0.0) || a > hi + snap || (!reaches && a < lo - snap);
            if bad {
                return Err(DomainError::InvalidWidths(format!(
                    "width {a} at position {i} outside [{lo}, {hi}]"
                )));
            }
            breakpoints.push(if reaches { big_t } else { prev + a });
            i += 1;
        }
        if let Some(ws) = widths {
            if ws.len() != i {
                return Err(DomainError::InvalidWidths(format!(
                    "{} widths supplied but T is reached after {i}",
                    ws.len()
                )));
            }
        }
        Ok(DiscretizedDomainPath {
            path: self.clone(),
            breakpoints,
            source: j,
        })
    }
}

/// `D^j_t = D_{sigma_{i-1}}` on `[sigma_{i-1}, sigma_i)`; the last interval is
/// closed at `T`.
#[derive(Clone, Debug)]
pub struct DiscretizedDomainPath {
    path: DomainPath,
    breakpoints: Vec<f64>,
    source: usize,
}

impl DiscretizedDomainPath {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn path(&self) -> &DomainPath {
        &self.path
    }

    pub fn horizon(&self) -> f64 {
        self.path.horizon
    }

    /// Index `i` with `t` in `[sigma_i, sigma_{i+1})`, last interval closed.
    pub fn interval_of(&self, t: f64) -> usize {
        let snap = POLICY.time_snap * (1.0 + self.horizon());
        let pos = self.breakpoints.partition_point(|&s| s <= t + snap);
        pos.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Left endpoint of the interval containing `t`.
    pub fn frozen_time(&self, t: f64) -> f64 {
        self.breakpoints[self.interval_of(t)]
    }

    pub fn at(&self, t: f64, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        self.path.check_time(t)?;
        self.path.at(self.frozen_time(t), history)
    }

    /// Frozen body of interval `i`.
    pub fn body(&self, i: usize, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        self.path.at(self.breakpoints[i], history)
    }
}

/// Anything that yields a body and an interior point at `(t, history)`.
pub trait DomainProcess: Sync {
    fn horizon(&self) -> f64;
    fn body_at(&self, t: f64, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError>;
    fn interior_point(
        &self,
        t: f64,
        body: &ConvexBody,
        history: &dyn NoiseHistory,
    ) -> Result<Point, DomainError>;
    /// True when bodies differ across scenarios at the same time.
    fn varies_with_noise(&self) -> bool;
}

impl DomainProcess for DomainPath {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn body_at(&self, t: f64, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        self.at(t, history)
    }

    fn interior_point(
        &self,
        t: f64,
        body: &ConvexBody,
        history: &dyn NoiseHistory,
    ) -> Result<Point, DomainError> {
        self.interior_at(t, body, history)
    }

    fn varies_with_noise(&self) -> bool {
        self.is_adapted()
    }
}

impl DomainProcess for DiscretizedDomainPath {
    fn horizon(&self) -> f64 {
        self.path.horizon
    }

    fn body_at(&self, t: f64, history: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        self.at(t, history)
    }

    /// `A` frozen together with the body.
    fn interior_point(
        &self,
        t: f64,
        body: &ConvexBody,
        history: &dyn NoiseHistory,
    ) -> Result<Point, DomainError> {
        self.path.interior_at(self.frozen_time(t), body, history)
    }

    fn varies_with_noise(&self) -> bool {
        self.path.is_adapted()
    }
}

/// `max_t hausdorff(D^j_t, D_t)` over `eval_grid` along one history.
pub fn discretization_gap(
    disc: &DiscretizedDomainPath,
    eval_grid: &[f64],
    history: &dyn NoiseHistory,
) -> Result<f64, DomainError> {
    let mut gap = 0.0f64;
    for &t in eval_grid {
        let exact = disc.path.at(t, history)?;
        let frozen = disc.at(t, history)?;
        let d = hausdorff(&frozen, &exact, GAP_DIRECTIONS.max(2 * exact.dim()))
            .map_err(|source| DomainError::Body { t, source })?;
        gap = gap.max(d);
    }
    Ok(gap)
}

/// `n + 1` equally spaced times on `[0, T]`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { horizon } else { horizon * i as f64 / n as f64 })
        .collect()
}

/// Result of the interior-margin scan.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginReport {
    pub min_margin: f64,
    pub time: f64,
    pub node: usize,
    pub declared: f64,
    pub evaluations: usize,
}

impl MarginReport {
    pub fn passed(&self) -> bool {
        self.min_margin > 0.0 && self.min_margin >= self.declared
    }

    /// The report as an error when it fails.
    pub fn require(&self) -> Result<f64, DomainError> {
        if self.min_margin <= 0.0 {
            return Err(DomainError::NonPositiveMargin {
                t: self.time,
                margin: self.min_margin,
            });
        }
        if self.min_margin < self.declared {
            return Err(DomainError::MarginBelowDeclared {
                margin: self.min_margin,
                declared: self.declared,
            });
        }
        Ok(self.min_margin)
    }
}

/// Minimum of `dist(A_t, boundary D_t)` over `grid` and every scenario node.
///
/// Fails hard when `A_t` lies outside `D_t`. For adapted domains every grid
/// time must be a scenario time.
pub fn verify_h4(
    path: &DomainPath,
    grid: &[f64],
    scen: &ScenarioSet,
) -> Result<MarginReport, DomainError> {
    let h = scen.step_size();
    let snap = POLICY.time_snap * (1.0 + path.horizon);
    let mut report = MarginReport {
        min_margin: f64::INFINITY,
        time: 0.0,
        node: 0,
        declared: path.declared_margin,
        evaluations: 0,
    };
    for &t in grid {
        path.check_time(t)?;
        let step = (t / h).round() as usize;
        let on_grid = step <= scen.steps() && (scen.time(step) - t).abs() <= snap;
        let (step, nodes) = if on_grid {
            (step, scen.nodes(step))
        } else if path.is_adapted() {
            return Err(DomainError::OffGrid { t });
        } else {
            (0, 1)
        };
        for node in 0..nodes {
            let hist = scen.history(step, node);
            let hist: &dyn NoiseHistory = if on_grid { &hist } else { &crate::noise::NoHistory };
            let body = path.at(t, hist)?;
            let a = path.interior_at(t, &body, hist)?;
            let margin = match body.boundary_margin(&a) {
                Ok(m) => m,
                Err(GeometryError::OutsideBody(distance)) => {
                    return Err(DomainError::InteriorOutside { t, distance })
                }
                Err(source) => return Err(DomainError::Body { t, source }),
            };
            report.evaluations += 1;
            if margin < report.min_margin {
                report.min_margin = margin;
                report.time = t;
                report.node = node;
            }
            if !path.is_adapted() {
                break;
            }
        }
    }
    Ok(report)
}
