//! Problem data: terminal value, driver and Lipschitz constant.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::domain::{DomainError, DomainPath};
use crate::geometry::Point;
use crate::noise::{NoiseHistory, ScenarioSet};
use crate::policy::POLICY;

/// `Z` is `m x d`, `V` is `m x K`.
pub type Matrix = DMatrix<f64>;

pub type DriverFn = Arc<dyn Fn(f64, &Point, &Matrix, &Matrix) -> Point + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&dyn NoiseHistory) -> Result<Point, String> + Send + Sync>;

/// Probes used by [`BsdeProblem::spot_check_lipschitz`].
pub const LIPSCHITZ_PROBES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("(H1) violated: terminal value outside D_T at leaf {leaf} (distance {distance:e})")]
    TerminalOutside { leaf: usize, distance: f64 },
    #[error("(H3) violated: driver increment ratio {ratio} exceeds declared Lipschitz constant {declared}")]
    LipschitzViolated { ratio: f64, declared: f64 },
    #[error("(H3) violated: declared Lipschitz constant {0} must be finite and >= 0")]
    InvalidLipschitz(f64),
    #[error("terminal functional failed: {0}")]
    Terminal(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The driver `f(t, y, z, v)`.
#[derive(Clone)]
pub enum Driver {
    Zero,
    /// `a y + b sum_j z_j + c sum_k v_k` (column sums).
    Linear { a: f64, b: f64, c: f64 },
    /// Componentwise `tanh` of the linear driver.
    Saturating { a: f64, b: f64, c: f64 },
    Custom { f: DriverFn, lipschitz: f64 },
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Driver::Zero => f.write_str("Zero"),
            Driver::Linear { a, b, c } => write!(f, "Linear({a}, {b}, {c})"),
            Driver::Saturating { a, b, c } => write!(f, "Saturating({a}, {b}, {c})"),
            Driver::Custom { lipschitz, .. } => write!(f, "Custom(C = {lipschitz})"),
        }
    }
}

fn linear(a: f64, b: f64, c: f64, y: &Point, z: &Matrix, v: &Matrix) -> Point {
    let mut out = y * a;
    if b != 0.0 {
        for col in z.column_iter() {
            out += col * b;
        }
    }
    if c != 0.0 {
        for col in v.column_iter() {
            out += col * c;
        }
    }
    out
}

impl Driver {
    pub fn eval(&self, t: f64, y: &Point, z: &Matrix, v: &Matrix) -> Point {
        match self {
            Driver::Zero => Point::zeros(y.len()),
            Driver::Linear { a, b, c } => linear(*a, *b, *c, y, z, v),
            Driver::Saturating { a, b, c } => linear(*a, *b, *c, y, z, v).map(f64::tanh),
            Driver::Custom { f, .. } => f(t, y, z, v),
        }
    }

    /// A Lipschitz constant for `|df| <= C (|dy| + |dz| + |dv|)` with
    /// Frobenius norms on `z` and `v`.
    pub fn lipschitz(&self, d: usize, k: usize) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Linear { a, b, c } | Driver::Saturating { a, b, c } => a
                .abs()
                .max(b.abs() * (d as f64).sqrt())
                .max(c.abs() * (k as f64).sqrt()),
            Driver::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Driver::Zero)
    }
}

/// The terminal functional `xi` of the noise observed up to `T`.
#[derive(Clone)]
pub struct Terminal {
    label: String,
    f: TerminalFn,
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Terminal({})", self.label)
    }
}

fn brownian(history: &dyn NoiseHistory) -> Result<Point, String> {
    history
        .brownian_at(history.time())
        .ok_or_else(|| "history carries no Brownian path".to_string())
}

fn counts(history: &dyn NoiseHistory) -> Result<Vec<u32>, String> {
    history
        .jump_counts_at(history.time())
        .ok_or_else(|| "history carries no jump counters".to_string())
}

impl Terminal {
    pub fn new(label: impl Into<String>, f: TerminalFn) -> Self {
        Self {
            label: label.into(),
            f,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, history: &dyn NoiseHistory) -> Result<Point, String> {
        (self.f)(history)
    }

    pub fn zero(m: usize) -> Self {
        Self::new("zero", Arc::new(move |_| Ok(Point::zeros(m))))
    }

    /// `xi_i = scale * W_T^i` for `i < min(m, d)`, zero elsewhere.
    pub fn brownian(m: usize, scale: f64) -> Self {
        Self::new(
            "brownian",
            Arc::new(move |h| {
                let w = brownian(h)?;
                Ok(Point::from_fn(m, |i, _| if i < w.len() { scale * w[i] } else { 0.0 }))
            }),
        )
    }

    /// `xi = scale * (N^mark_T - lambda T) e_1`.
    pub fn compensated_jump(m: usize, mark: usize, intensity: f64, horizon: f64, scale: f64) -> Self {
        Self::new(
            "jump-compensated",
            Arc::new(move |h| {
                let n = counts(h)?;
                let count = *n.get(mark).ok_or_else(|| format!("no mark {mark}"))?;
                let mut x = Point::zeros(m);
                x[0] = scale * (count as f64 - intensity * horizon);
                Ok(x)
            }),
        )
    }

    /// `xi = offset + B W_T + G N_T` with `B` of size `m x d`, `G` of size `m x K`.
    pub fn affine(offset: Point, b: Matrix, g: Matrix) -> Self {
        Self::new(
            "custom-affine",
            Arc::new(move |h| {
                let mut x = offset.clone();
                if b.ncols() > 0 {
                    x += &b * brownian(h)?;
                }
                if g.ncols() > 0 {
                    let n = counts(h)?;
                    x += &g * Point::from_iterator(n.len(), n.iter().map(|&c| c as f64));
                }
                Ok(x)
            }),
        )
    }

    /// Projection of `inner` onto `D_T`.
    pub fn clipped(inner: Terminal, domain: DomainPath) -> Self {
        let label = format!("clipped-{}", inner.label);
        Self::new(
            label,
            Arc::new(move |h| {
                let x = inner.eval(h)?;
                let body = domain.at(domain.horizon(), h).map_err(|e| e.to_string())?;
                body.project(&x).map_err(|e| e.to_string())
            }),
        )
    }
}

/// Terminal value, driver and dimensions.
#[derive(Clone, Debug)]
pub struct BsdeProblem {
    m: usize,
    d: usize,
    k: usize,
    terminal: Terminal,
    driver: Driver,
    lipschitz: f64,
}

impl BsdeProblem {
    /// The Lipschitz constant defaults to the driver's own.
    pub fn new(m: usize, d: usize, k: usize, terminal: Terminal, driver: Driver) -> Self {
        let lipschitz = driver.lipschitz(d, k);
        Self {
            m,
            d,
            k,
            terminal,
            driver,
            lipschitz,
        }
    }

    pub fn with_lipschitz(mut self, c: f64) -> Result<Self, ProblemError> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(ProblemError::InvalidLipschitz(c));
        }
        self.lipschitz = c;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn brownian_dim(&self) -> usize {
        self.d
    }

    pub fn mark_count(&self) -> usize {
        self.k
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `f(t, 0, 0, 0)`.
    pub fn driver_at_origin(&self, t: f64) -> Point {
        let (m, d, k) = (self.m, self.d, self.k);
        self.driver
            .eval(t, &Point::zeros(m), &Matrix::zeros(m, d), &Matrix::zeros(m, k))
    }

    /// Largest observed `|df| / (|dy| + |dz| + |dv|)` over seeded random
    /// probes; fails when it exceeds the declared constant.
    pub fn spot_check_lipschitz(&self, horizon: f64, seed: u64) -> Result<f64, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d, k) = (self.m, self.d, self.k);
        let mut worst = 0.0f64;
        for _ in 0..LIPSCHITZ_PROBES {
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let mut gauss = |r: usize, c: usize| {
                Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
            };
            let (y1, y2) = (gauss(m, 1).column(0).into_owned(), gauss(m, 1).column(0).into_owned());
            let (z1, z2) = (gauss(m, d), gauss(m, d));
            let (v1, v2) = (gauss(m, k), gauss(m, k));
            let t = rng.random_range(0.0..=horizon);
            let df = (self.driver.eval(t, &y1, &z1, &v1) - self.driver.eval(t, &y2, &z2, &v2)).norm();
            let dx = (&y1 - &y2).norm() + (&z1 - &z2).norm() + (&v1 - &v2).norm();
            if dx > 0.0 {
                worst = worst.max(df / dx);
            }
        }
        if worst > self.lipschitz * (1.0 + 1e-9) {
            return Err(ProblemError::LipschitzViolated {
                ratio: worst,
                declared: self.lipschitz,
            });
        }
        Ok(worst)
    }

    /// Terminal values at every leaf, checked against `D_T`.
    pub fn terminal_values(
        &self,
        domain: &DomainPath,
        scen: &ScenarioSet,
    ) -> Result<Vec<Point>, ProblemError> {
        let n = scen.steps();
        let t = scen.time(n);
        let mut out = Vec::with_capacity(scen.leaf_count());
        for leaf in 0..scen.leaf_count() {
            let hist = scen.history(n, leaf);
            let xi = self.terminal.eval(&hist).map_err(ProblemError::Terminal)?;
            if xi.len() != self.m {
                return Err(ProblemError::DimensionMismatch {
                    what: "terminal value",
                    expected: self.m,
                    got: xi.len(),
                });
            }
            let body = domain.at(t, &hist)?;
            let distance = body
                .distance(&xi)
                .map_err(|e| ProblemError::Terminal(e.to_string()))?;
            if distance > POLICY.geometry {
                return Err(ProblemError::TerminalOutside { leaf, distance });
            }
            out.push(xi);
        }
        Ok(out)
    }
}
