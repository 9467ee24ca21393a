//! Backward induction for the penalized scheme, its projected limit and the
//! piecewise-constant-domain composer.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{DiscretizedDomainPath, DomainError, DomainPath};
use crate::geometry::{ConvexBody, GeometryError, Point};
use crate::noise::{NoHistory, NoiseError, NoiseHistory, ScenarioFingerprint, ScenarioSet};
use crate::policy::POLICY;
use crate::problem::{BsdeProblem, Matrix, ProblemError};

/// Largest admissible `C h`.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("stability guard violated: C*h = {product} must be < {STABILITY_LIMIT}")]
    StabilityGuard { product: f64 },
    #[error("penalization level must be positive and finite, got {0}")]
    InvalidLevel(f64),
    #[error("problem has {what} = {problem}, scenarios have {scenarios}")]
    DimensionMismatch {
        what: &'static str,
        problem: usize,
        scenarios: usize,
    },
    #[error("domain horizon {domain} differs from scenario horizon {scenarios}")]
    HorizonMismatch { domain: f64, scenarios: f64 },
    #[error("breakpoint {0} is not a scenario grid time")]
    GridMisaligned(f64),
    #[error("bundles come from different scenario sets")]
    ScenarioMismatch,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// How the constraint is enforced at each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheme {
    /// Implicit penalty with intensity `n`.
    Penalized(f64),
    /// Projection, the `n -> infinity` limit.
    Reflected,
}

impl Scheme {
    pub fn level(&self) -> f64 {
        match self {
            Scheme::Penalized(n) => *n,
            Scheme::Reflected => f64::INFINITY,
        }
    }
}

/// One step of the constraint: returns `(Y, dK)` with `Y = target + dK`.
pub fn resolve_step(
    body: &ConvexBody,
    target: &Point,
    scheme: Scheme,
    h: f64,
) -> Result<(Point, Point), GeometryError> {
    let y = match scheme {
        Scheme::Penalized(n) => body.penalty_resolvent(target, n * h)?,
        Scheme::Reflected => body.project(target)?,
    };
    let dk = &y - target;
    Ok((y, dk))
}

/// Node values of one time step, row-major by node.
#[derive(Clone, Debug, Default, PartialEq)]
struct Slice {
    y: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    dk: Vec<f64>,
    k_cum: Vec<f64>,
    drift: Vec<f64>,
    violation: Vec<f64>,
}

/// Discrete `(Y, Z, V, K)` on every node of a scenario set.
///
/// `dK` at step `k` is the increment of `K` over `[t_k, t_{k+1}]`; `K_0 = 0`
/// and `K_{k+1} = K_k + dK_k` along every path. `Z` and `V` are stored
/// column-major (`m x d`, `m x K`). The drift is the driver value used at the
/// node.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionBundle {
    scheme: Scheme,
    m: usize,
    d: usize,
    k: usize,
    h: f64,
    fingerprint: ScenarioFingerprint,
    slices: Vec<Slice>,
    breakpoint_shift: f64,
}

impl SolutionBundle {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn nodes(&self, step: usize) -> usize {
        self.slices[step].violation.len()
    }

    pub fn fingerprint(&self) -> &ScenarioFingerprint {
        &self.fingerprint
    }

    pub fn y(&self, step: usize, node: usize) -> Point {
        Point::from_column_slice(&self.slices[step].y[node * self.m..(node + 1) * self.m])
    }

    pub fn z(&self, step: usize, node: usize) -> Matrix {
        let w = self.m * self.d;
        DMatrix::from_column_slice(self.m, self.d, &self.slices[step].z[node * w..(node + 1) * w])
    }

    pub fn v(&self, step: usize, node: usize) -> Matrix {
        let w = self.m * self.k;
        DMatrix::from_column_slice(self.m, self.k, &self.slices[step].v[node * w..(node + 1) * w])
    }

    pub fn dk(&self, step: usize, node: usize) -> Point {
        Point::from_column_slice(&self.slices[step].dk[node * self.m..(node + 1) * self.m])
    }

    pub fn k_cum(&self, step: usize, node: usize) -> Point {
        Point::from_column_slice(&self.slices[step].k_cum[node * self.m..(node + 1) * self.m])
    }

    pub fn drift(&self, step: usize, node: usize) -> Point {
        Point::from_column_slice(&self.slices[step].drift[node * self.m..(node + 1) * self.m])
    }

    /// `dist(Y, D)` at the node.
    pub fn violation(&self, step: usize, node: usize) -> f64 {
        self.slices[step].violation[node]
    }

    pub fn max_violation_at(&self, step: usize) -> f64 {
        self.slices[step].violation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_violation(&self) -> f64 {
        (0..=self.steps()).map(|s| self.max_violation_at(s)).fold(0.0, f64::max)
    }

    /// Largest displacement applied to incoming values at breakpoints
    /// (composer only).
    pub fn breakpoint_shift(&self) -> f64 {
        self.breakpoint_shift
    }

    /// Raw `Y` values of one step, `m` per node.
    pub fn y_slice(&self, step: usize) -> &[f64] {
        &self.slices[step].y
    }

    /// `sup |Y^a - Y^b|` over all nodes.
    pub fn sup_distance(&self, other: &SolutionBundle) -> Result<f64, SolverError> {
        if self.fingerprint != other.fingerprint || self.m != other.m {
            return Err(SolverError::ScenarioMismatch);
        }
        let mut best = 0.0f64;
        for (a, b) in self.slices.iter().zip(&other.slices) {
            for (ya, yb) in a.y.chunks(self.m).zip(b.y.chunks(self.m)) {
                let d2: f64 = ya.iter().zip(yb).map(|(p, q)| (p - q) * (p - q)).sum();
                best = best.max(d2.sqrt());
            }
        }
        Ok(best)
    }
}

/// Source of the constraint body at each node.
enum View<'a> {
    Path(&'a DomainPath),
    Disc(&'a DiscretizedDomainPath),
}

impl View<'_> {
    fn path(&self) -> &DomainPath {
        match self {
            View::Path(p) => p,
            View::Disc(d) => d.path(),
        }
    }

    fn body(&self, t: f64, hist: &dyn NoiseHistory) -> Result<ConvexBody, DomainError> {
        match self {
            View::Path(p) => p.at(t, hist),
            View::Disc(d) => d.at(t, hist),
        }
    }
}

fn check_inputs(problem: &BsdeProblem, path: &DomainPath, scen: &ScenarioSet) -> Result<(), SolverError> {
    let model = scen.model();
    if problem.brownian_dim() != model.brownian_dim() {
        return Err(SolverError::DimensionMismatch {
            what: "brownian dimension",
            problem: problem.brownian_dim(),
            scenarios: model.brownian_dim(),
        });
    }
    if problem.mark_count() != model.mark_count() {
        return Err(SolverError::DimensionMismatch {
            what: "mark count",
            problem: problem.mark_count(),
            scenarios: model.mark_count(),
        });
    }
    if (path.horizon() - model.horizon()).abs() > POLICY.time_snap * (1.0 + model.horizon()) {
        return Err(SolverError::HorizonMismatch {
            domain: path.horizon(),
            scenarios: model.horizon(),
        });
    }
    let product = problem.lipschitz() * scen.step_size();
    if product >= STABILITY_LIMIT {
        return Err(SolverError::StabilityGuard { product });
    }
    Ok(())
}

/// Penalized solution with intensity `n_level`.
pub fn solve_penalized(
    problem: &BsdeProblem,
    domain: &DomainPath,
    scen: &ScenarioSet,
    n_level: f64,
) -> Result<SolutionBundle, SolverError> {
    if !(n_level > 0.0 && n_level.is_finite()) {
        return Err(SolverError::InvalidLevel(n_level));
    }
    solve(problem, View::Path(domain), scen, Scheme::Penalized(n_level))
}

/// Discretely reflected solution (projection at every step).
pub fn solve_reflected_discrete(
    problem: &BsdeProblem,
    domain: &DomainPath,
    scen: &ScenarioSet,
) -> Result<SolutionBundle, SolverError> {
    solve(problem, View::Path(domain), scen, Scheme::Reflected)
}

/// Solution in a piecewise-constant domain, pieced interval by interval.
///
/// `n_level = None` projects at every step. At each breakpoint `sigma_i`
/// (including `T`) the values arriving from the right are projected onto the
/// body of the interval on the left before the conditional expectations.
pub fn solve_piecewise_constant(
    problem: &BsdeProblem,
    disc: &DiscretizedDomainPath,
    scen: &ScenarioSet,
    n_level: Option<f64>,
) -> Result<SolutionBundle, SolverError> {
    let scheme = match n_level {
        Some(n) if n > 0.0 && n.is_finite() => Scheme::Penalized(n),
        Some(n) => return Err(SolverError::InvalidLevel(n)),
        None => Scheme::Reflected,
    };
    let h = scen.step_size();
    let snap = POLICY.time_snap * (1.0 + disc.horizon());
    for &s in disc.breakpoints() {
        let step = (s / h).round();
        if (step * h - s).abs() > snap.max(1e-9 * h) {
            return Err(SolverError::GridMisaligned(s));
        }
    }
    solve(problem, View::Disc(disc), scen, scheme)
}

/// For the composer: the interval whose right end is `t`, if `t` is a
/// breakpoint.
fn breakpoint_ending_at(disc: &DiscretizedDomainPath, t: f64) -> Option<usize> {
    let snap = POLICY.time_snap * (1.0 + disc.horizon());
    disc.breakpoints()
        .iter()
        .skip(1)
        .position(|&s| (s - t).abs() <= snap.max(1e-9 * disc.horizon()))
}

fn solve(
    problem: &BsdeProblem,
    view: View<'_>,
    scen: &ScenarioSet,
    scheme: Scheme,
) -> Result<SolutionBundle, SolverError> {
    let path = view.path();
    check_inputs(problem, path, scen)?;
    let (m, d, kk) = (problem.dim(), problem.brownian_dim(), problem.mark_count());
    let n = scen.steps();
    let h = scen.step_size();
    let adapted = path.motion_is_adapted();
    let width = m * (1 + d + kk);
    let variances: Vec<f64> = (0..kk).map(|j| scen.model().jump_variance(j)).collect();

    let terminal = problem.terminal_values(path, scen)?;
    let leaves = scen.leaf_count();
    let mut slices = vec![Slice::default(); n + 1];
    {
        let t = scen.time(n);
        let fixed = if adapted { None } else { Some(view.body(t, &NoHistory)?) };
        let mut last = Slice {
            y: Vec::with_capacity(leaves * m),
            z: vec![0.0; leaves * m * d],
            v: vec![0.0; leaves * m * kk],
            dk: vec![0.0; leaves * m],
            k_cum: Vec::new(),
            drift: vec![0.0; leaves * m],
            violation: Vec::with_capacity(leaves),
        };
        for (leaf, xi) in terminal.iter().enumerate() {
            last.y.extend(xi.iter());
            let viol = match &fixed {
                Some(b) => b.distance(xi)?,
                None => view.body(t, &scen.history(n, leaf))?.distance(xi)?,
            };
            last.violation.push(viol);
        }
        slices[n] = last;
    }

    let mut breakpoint_shift = 0.0f64;
    for step in (0..n).rev() {
        let t = scen.time(step);
        let t_next = scen.time(step + 1);
        let children = scen.nodes(step + 1);
        let parents = scen.nodes(step);

        // incoming values, projected at composer breakpoints
        let mut incoming = slices[step + 1].y.clone();
        if let View::Disc(disc) = &view {
            if let Some(i) = breakpoint_ending_at(disc, t_next) {
                let fixed = if adapted { None } else { Some(disc.body(i, &NoHistory)?) };
                let projected: Vec<Result<(Vec<f64>, f64), SolverError>> = (0..children)
                    .into_par_iter()
                    .map(|c| {
                        let y = Point::from_column_slice(&incoming[c * m..(c + 1) * m]);
                        let body = match &fixed {
                            Some(b) => b.clone(),
                            None => disc.body(i, &scen.history(step + 1, c))?,
                        };
                        let p = body.project(&y)?;
                        let shift = (&p - &y).norm();
                        Ok((p.iter().copied().collect(), shift))
                    })
                    .collect();
                for (c, r) in projected.into_iter().enumerate() {
                    let (p, shift) = r?;
                    incoming[c * m..(c + 1) * m].copy_from_slice(&p);
                    breakpoint_shift = breakpoint_shift.max(shift);
                }
            }
        }

        // responses: Y, Y dW^T (column-major), Y dnu_j
        let mut responses = vec![0.0; children * width];
        responses
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(c, row)| {
                let y = &incoming[c * m..(c + 1) * m];
                let dw = scen.brownian_increment(step + 1, c);
                row[..m].copy_from_slice(y);
                for j in 0..d {
                    for i in 0..m {
                        row[m + j * m + i] = y[i] * dw[j];
                    }
                }
                for l in 0..kk {
                    let dnu = scen.compensated_increment(step + 1, c, l);
                    for i in 0..m {
                        row[m + m * d + l * m + i] = y[i] * dnu;
                    }
                }
            });
        let cond = scen.conditional_expectation(step, &responses, width)?;

        let fixed = if adapted { None } else { Some(view.body(t, &NoHistory)?) };
        type NodeOut = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64);
        let nodes: Vec<Result<NodeOut, SolverError>> = (0..parents)
            .into_par_iter()
            .map(|p| {
                let row = &cond[p * width..(p + 1) * width];
                let e = Point::from_column_slice(&row[..m]);
                let z = DMatrix::from_column_slice(m, d, &row[m..m + m * d]) / h;
                let mut v = DMatrix::from_column_slice(m, kk, &row[m + m * d..]);
                for (l, var) in variances.iter().enumerate() {
                    v.column_mut(l).unscale_mut(*var);
                }
                let f = problem.driver().eval(t, &e, &z, &v);
                let target = &e + &f * h;
                let body = match &fixed {
                    Some(b) => b.clone(),
                    None => view.body(t, &scen.history(step, p))?,
                };
                let (y, dk) = resolve_step(&body, &target, scheme, h)?;
                let viol = body.distance(&y)?;
                Ok((
                    y.iter().copied().collect(),
                    z.iter().copied().collect(),
                    v.iter().copied().collect(),
                    dk.iter().copied().collect(),
                    f.iter().copied().collect(),
                    viol,
                ))
            })
            .collect();
        let mut slice = Slice {
            y: Vec::with_capacity(parents * m),
            z: Vec::with_capacity(parents * m * d),
            v: Vec::with_capacity(parents * m * kk),
            dk: Vec::with_capacity(parents * m),
            k_cum: Vec::new(),
            drift: Vec::with_capacity(parents * m),
            violation: Vec::with_capacity(parents),
        };
        for r in nodes {
            let (y, z, v, dk, f, viol) = r?;
            slice.y.extend(y);
            slice.z.extend(z);
            slice.v.extend(v);
            slice.dk.extend(dk);
            slice.drift.extend(f);
            slice.violation.push(viol);
        }
        slices[step] = slice;
    }

    // K forward from K_0 = 0
    slices[0].k_cum = vec![0.0; scen.nodes(0) * m];
    for step in 1..=n {
        let (before, after) = slices.split_at_mut(step);
        let prev = &before[step - 1];
        let mut k_cum = vec![0.0; scen.nodes(step) * m];
        k_cum.par_chunks_mut(m).enumerate().for_each(|(c, out)| {
            let p = scen.parent(step, c);
            for i in 0..m {
                out[i] = prev.k_cum[p * m + i] + prev.dk[p * m + i];
            }
        });
        after[0].k_cum = k_cum;
    }

    Ok(SolutionBundle {
        scheme,
        m,
        d,
        k: kk,
        h,
        fingerprint: scen.fingerprint(),
        slices,
        breakpoint_shift,
    })
}
