//! Measurements on computed solutions: a priori aggregate, stability gap,
//! Skorokhod residual, Itô–Tanaka residual and penalization convergence.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{DomainError, DomainPath, DomainProcess};
use crate::geometry::{hausdorff, ConvexBody, GeometryError, Point};
use crate::noise::{NoHistory, ScenarioSet};
use crate::problem::BsdeProblem;
use crate::solver::{solve_penalized, solve_reflected_discrete, SolutionBundle, SolverError};

/// Directions used for Hausdorff gaps between non-ball bodies.
pub const HAUSDORFF_DIRECTIONS: usize = 256;

/// Pathwise tolerance factor of the Itô–Tanaka check, times `sqrt(h)`.
pub const ITO_TANAKA_FACTOR: f64 = 5.0;

/// Slack for membership of test processes.
pub const TEST_PROCESS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticError {
    #[error("solution and scenarios do not match")]
    ScenarioMismatch,
    #[error("exponent q = {0} outside (1, 2]")]
    InvalidExponent(f64),
    #[error("test process leaves the domain at step {step}, node {node} (distance {distance:e})")]
    TestProcessOutside {
        step: usize,
        node: usize,
        distance: f64,
    },
    #[error("penalization levels must be positive and strictly increasing")]
    InvalidLevels,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check(sol: &SolutionBundle, scen: &ScenarioSet) -> Result<(), DiagnosticError> {
    if *sol.fingerprint() != scen.fingerprint() {
        return Err(DiagnosticError::ScenarioMismatch);
    }
    Ok(())
}

/// Bodies of one step, evaluated once when they do not depend on the noise.
fn step_bodies(
    domain: &dyn DomainProcess,
    scen: &ScenarioSet,
    step: usize,
) -> Result<Vec<ConvexBody>, DomainError> {
    let t = scen.time(step);
    if domain.varies_with_noise() {
        (0..scen.nodes(step))
            .map(|node| domain.body_at(t, &scen.history(step, node)))
            .collect()
    } else {
        Ok(vec![domain.body_at(t, &NoHistory)?])
    }
}

fn pick(bodies: &[ConvexBody], node: usize) -> &ConvexBody {
    if bodies.len() == 1 {
        &bodies[0]
    } else {
        &bodies[node]
    }
}

/// Per-node `dist(A_t, boundary D_t)`, flattened by step.
fn interior_margins(
    domain: &dyn DomainProcess,
    scen: &ScenarioSet,
) -> Result<Vec<Vec<f64>>, DiagnosticError> {
    (0..=scen.steps())
        .map(|step| {
            let t = scen.time(step);
            let bodies = step_bodies(domain, scen, step)?;
            (0..scen.nodes(step))
                .map(|node| {
                    let body = pick(&bodies, node);
                    let hist = scen.history(step, node);
                    let a = domain.interior_point(t, body, &hist)?;
                    Ok(body.boundary_distance(&a)?)
                })
                .collect()
        })
        .collect()
}

/// A per-path quantity for every leaf, in leaf order.
fn per_leaf<F>(scen: &ScenarioSet, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Send + Sync,
{
    (0..scen.leaf_count()).into_par_iter().map(f).collect()
}

/// Components of the a priori aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AprioriAggregate {
    pub sup_y: f64,
    pub z_energy: f64,
    pub v_energy: f64,
    pub sup_k: f64,
    pub margin_weighted_tv: f64,
}

impl AprioriAggregate {
    pub fn total(&self) -> f64 {
        self.sup_y + self.z_energy + self.v_energy + self.sup_k + self.margin_weighted_tv
    }
}

/// `E[sup|Y|^2 + sum |Z|^2 h + sum_j |V_j|^2 lambda_j h + sup|K|^2
/// + sum dist(A, boundary D) |dK|]`.
pub fn apriori_aggregate(
    sol: &SolutionBundle,
    domain: &dyn DomainProcess,
    scen: &ScenarioSet,
) -> Result<AprioriAggregate, DiagnosticError> {
    check(sol, scen)?;
    let n = scen.steps();
    let h = scen.step_size();
    let lambdas: Vec<f64> = scen.model().marks().iter().map(|m| m.intensity).collect();
    let margins = interior_margins(domain, scen)?;
    let parts: Vec<[f64; 5]> = (0..scen.leaf_count())
        .into_par_iter()
        .map(|leaf| {
            let mut acc = [0.0f64; 5];
            for step in 0..=n {
                let node = scen.ancestor(n, leaf, step);
                acc[0] = acc[0].max(sol.y(step, node).norm_squared());
                acc[3] = acc[3].max(sol.k_cum(step, node).norm_squared());
                if step < n {
                    acc[1] += sol.z(step, node).norm_squared() * h;
                    let v = sol.v(step, node);
                    for (j, l) in lambdas.iter().enumerate() {
                        acc[2] += v.column(j).norm_squared() * l * h;
                    }
                    acc[4] += margins[step][node] * sol.dk(step, node).norm();
                }
            }
            acc
        })
        .collect();
    let mut out = [0.0; 5];
    for (leaf, p) in parts.iter().enumerate() {
        let w = scen.weight(n, leaf);
        for i in 0..5 {
            out[i] += w * p[i];
        }
    }
    Ok(AprioriAggregate {
        sup_y: out[0],
        z_energy: out[1],
        v_energy: out[2],
        sup_k: out[3],
        margin_weighted_tv: out[4],
    })
}

/// Total variation `sum |dK|` per leaf.
pub fn total_variation(sol: &SolutionBundle, scen: &ScenarioSet) -> Vec<f64> {
    let n = scen.steps();
    per_leaf(scen, |leaf| {
        (0..n)
            .map(|step| sol.dk(step, scen.ancestor(n, leaf, step)).norm())
            .sum()
    })
}

/// Stability measurement between two domains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityGap {
    /// `E sup_t |Y - Y'|^2`.
    pub lhs: f64,
    /// `sup_t hausdorff(D_t, D'_t)` over the grid and every node.
    pub domain_gap: f64,
    /// `E[|K|_T + |K'|_T]` (total variations).
    pub total_variation: f64,
}

impl StabilityGap {
    pub fn rhs(&self) -> f64 {
        self.domain_gap * self.total_variation
    }

    /// `lhs / rhs`; zero when both vanish.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs()
        }
    }
}

/// Compare two solutions computed on the same scenarios in two domains.
pub fn stability_gap(
    sol_a: &SolutionBundle,
    sol_b: &SolutionBundle,
    dom_a: &dyn DomainProcess,
    dom_b: &dyn DomainProcess,
    scen: &ScenarioSet,
) -> Result<StabilityGap, DiagnosticError> {
    check(sol_a, scen)?;
    check(sol_b, scen)?;
    let n = scen.steps();
    let mut domain_gap = 0.0f64;
    for step in 0..=n {
        let ba = step_bodies(dom_a, scen, step)?;
        let bb = step_bodies(dom_b, scen, step)?;
        let count = ba.len().max(bb.len());
        for node in 0..count {
            let (x, y) = (pick(&ba, node), pick(&bb, node));
            let dirs = HAUSDORFF_DIRECTIONS.max(2 * x.dim());
            domain_gap = domain_gap.max(hausdorff(x, y, dirs)?);
        }
    }
    let sup: Vec<f64> = per_leaf(scen, |leaf| {
        (0..=n)
            .map(|step| {
                let node = scen.ancestor(n, leaf, step);
                (sol_a.y(step, node) - sol_b.y(step, node)).norm_squared()
            })
            .fold(0.0, f64::max)
    });
    let tva = total_variation(sol_a, scen);
    let tvb = total_variation(sol_b, scen);
    let lhs = scen.expectation(&sup);
    let total_variation = scen.expectation(&tva) + scen.expectation(&tvb);
    Ok(StabilityGap {
        lhs,
        domain_gap,
        total_variation,
    })
}

/// The adapted process `X` paired with `dK` in the minimality condition.
#[derive(Clone, Copy, Debug)]
pub enum TestProcess {
    /// The interior process `A` of the domain.
    Interior,
    /// `X = Y`.
    Solution,
    /// The projection of a fixed point onto `D_t`.
    Projected(&'static [f64]),
}

/// Per-path minimality sums.
#[derive(Clone, Debug, PartialEq)]
pub struct SkorokhodReport {
    /// `sum_t <Y_t - X_t, dK_t>` per leaf.
    pub inner: Vec<f64>,
    /// `sum_t |dK_t|` per leaf.
    pub variation: Vec<f64>,
}

impl SkorokhodReport {
    /// Max over paths of the inner-product sum.
    pub fn residual(&self) -> f64 {
        self.inner.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max over paths of `inner + beta * variation`; the interior bound
    /// asks for this to be `<= 0` up to round-off.
    pub fn margin_excess(&self, beta: f64) -> f64 {
        self.inner
            .iter()
            .zip(&self.variation)
            .map(|(i, v)| i + beta * v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `sum_t <Y_t - X_t, dK_t>` along every path. The test process must lie in
/// the domain.
pub fn skorokhod_residual(
    sol: &SolutionBundle,
    test: TestProcess,
    domain: &dyn DomainProcess,
    scen: &ScenarioSet,
) -> Result<SkorokhodReport, DiagnosticError> {
    check(sol, scen)?;
    let n = scen.steps();
    let mut terms: Vec<Vec<f64>> = Vec::with_capacity(n);
    for step in 0..n {
        let t = scen.time(step);
        let bodies = step_bodies(domain, scen, step)?;
        let row: Result<Vec<f64>, DiagnosticError> = (0..scen.nodes(step))
            .into_par_iter()
            .map(|node| {
                let body = pick(&bodies, node);
                let y = sol.y(step, node);
                let x = match test {
                    TestProcess::Solution => return Ok(0.0),
                    TestProcess::Interior => {
                        domain.interior_point(t, body, &scen.history(step, node))?
                    }
                    TestProcess::Projected(p) => body.project(&Point::from_column_slice(p))?,
                };
                let distance = body.distance(&x)?;
                if distance > TEST_PROCESS_TOL {
                    return Err(DiagnosticError::TestProcessOutside {
                        step,
                        node,
                        distance,
                    });
                }
                Ok((y - x).dot(&sol.dk(step, node)))
            })
            .collect();
        terms.push(row?);
    }
    let inner = per_leaf(scen, |leaf| {
        (0..n).map(|step| terms[step][scen.ancestor(n, leaf, step)]).sum()
    });
    Ok(SkorokhodReport {
        inner,
        variation: total_variation(sol, scen),
    })
}

/// Per-path comparison of both sides of the `|Y - Y'|^q` inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoTanakaReport {
    pub q: f64,
    /// `rhs - lhs` per leaf.
    pub residual: Vec<f64>,
    /// Allowed shortfall per leaf: `5 sqrt(h) max(1, sup |Y - Y'|^q)`.
    pub tolerance: Vec<f64>,
}

impl ItoTanakaReport {
    /// Share of leaves with `rhs - lhs >= -tolerance`.
    pub fn pass_fraction(&self) -> f64 {
        let ok = self
            .residual
            .iter()
            .zip(&self.tolerance)
            .filter(|(r, t)| **r >= -**t)
            .count();
        ok as f64 / self.residual.len() as f64
    }

    /// Largest `|rhs - lhs| / tolerance`.
    pub fn max_relative(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.tolerance)
            .map(|(r, t)| r.abs() / t)
            .fold(0.0, f64::max)
    }
}

fn sgn_power(x: &Point, q: f64) -> (f64, Point) {
    let r = x.norm();
    if r == 0.0 {
        (0.0, Point::zeros(x.len()))
    } else {
        (r.powf(q - 1.0), x / r)
    }
}

/// Discrete `|Y - Y'|^q` inequality on `[0, T]` with `c(q) = q min(q - 1, 1) / 2`.
/// Stochastic integrals become sums over grid increments and the jump
/// correction runs over realized jumps. The Brownian correction carries the
/// weight `max(|Y_k|^2, |Y_{k+1}|^2)^(q/2-1)` of a grid increment, which keeps
/// it finite where the difference passes near zero.
pub fn ito_tanaka_residual(
    sol_a: &SolutionBundle,
    sol_b: &SolutionBundle,
    scen: &ScenarioSet,
    q: f64,
) -> Result<ItoTanakaReport, DiagnosticError> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(DiagnosticError::InvalidExponent(q));
    }
    check(sol_a, scen)?;
    check(sol_b, scen)?;
    let n = scen.steps();
    let h = scen.step_size();
    let k = scen.model().mark_count();
    let cq = q * (q - 1.0).min(1.0) / 2.0;
    let rows: Vec<(f64, f64)> = (0..scen.leaf_count())
        .into_par_iter()
        .map(|leaf| {
            let bar = |step: usize| {
                let node = scen.ancestor(n, leaf, step);
                sol_a.y(step, node) - sol_b.y(step, node)
            };
            let lhs = bar(0).norm().powf(q);
            let mut rhs = bar(n).norm().powf(q);
            let mut sup = 0.0f64;
            for step in 0..=n {
                sup = sup.max(bar(step).norm().powf(q));
            }
            for step in 0..n {
                let node = scen.ancestor(n, leaf, step);
                let child = scen.ancestor(n, leaf, step + 1);
                let y = bar(step);
                let (pw, sgn) = sgn_power(&y, q);
                let f = sol_a.drift(step, node) - sol_b.drift(step, node);
                let z = sol_a.z(step, node) - sol_b.z(step, node);
                let v = sol_a.v(step, node) - sol_b.v(step, node);
                let dk = sol_a.dk(step, node) - sol_b.dk(step, node);
                let dw = Point::from_column_slice(scen.brownian_increment(step + 1, child));
                let mut dnu = Point::zeros(k);
                for l in 0..k {
                    dnu[l] = scen.compensated_increment(step + 1, child, l);
                }
                rhs += q * pw * sgn.dot(&f) * h;
                rhs -= q * pw * sgn.dot(&(&z * &dw));
                rhs -= q * pw * sgn.dot(&(&v * &dnu));
                rhs += q * pw * sgn.dot(&dk);
                let r = y.norm();
                if r > 0.0 {
                    let next = bar(step + 1).norm_squared();
                    rhs -= cq * r.powi(2).max(next).powf(q / 2.0 - 1.0) * z.norm_squared() * h;
                    let jumps = scen.jump_indicators(step + 1, child);
                    for l in 0..k {
                        if jumps[l] == 1 {
                            let vl: Point = v.column(l).into_owned();
                            let big = r.powi(2).max((&y + &vl).norm_squared());
                            rhs -= cq * vl.norm_squared() * big.powf(q / 2.0 - 1.0);
                        }
                    }
                }
            }
            let tol = ITO_TANAKA_FACTOR * h.sqrt() * sup.max(1.0);
            (rhs - lhs, tol)
        })
        .collect();
    Ok(ItoTanakaReport {
        q,
        residual: rows.iter().map(|r| r.0).collect(),
        tolerance: rows.iter().map(|r| r.1).collect(),
    })
}

/// One row per penalization level.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_level: f64,
    /// `max dist(Y^n, D)` over nodes.
    pub violation: f64,
    /// `sup |Y^n - Y^refl|` over nodes.
    pub gap: f64,
    /// `E sum |dK^n|`.
    pub total_variation: f64,
    /// Max over paths of `sum <Y^n - A, dK^n>`.
    pub skorokhod: f64,
    pub apriori: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// The same measurements for the reflected reference (`n_level = inf`).
    pub reference: ConvergenceRow,
    /// Log-log slope of `gap` against `n`; `None` when some gap is zero.
    pub gap_slope: Option<f64>,
    /// Log-log slope of `violation` against `n`.
    pub violation_slope: Option<f64>,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Bundles behind a [`ConvergenceReport`].
#[derive(Clone, Debug)]
pub struct ConvergenceRun {
    pub report: ConvergenceReport,
    pub penalized: Vec<SolutionBundle>,
    pub reflected: SolutionBundle,
}

fn measure(
    sol: &SolutionBundle,
    reference: &SolutionBundle,
    domain: &DomainPath,
    scen: &ScenarioSet,
) -> Result<ConvergenceRow, DiagnosticError> {
    let tv = total_variation(sol, scen);
    Ok(ConvergenceRow {
        n_level: sol.scheme().level(),
        violation: sol.max_violation(),
        gap: sol.sup_distance(reference)?,
        total_variation: scen.expectation(&tv),
        skorokhod: skorokhod_residual(sol, TestProcess::Interior, domain, scen)?.residual(),
        apriori: apriori_aggregate(sol, domain, scen)?.total(),
    })
}

/// Penalized solutions at every level against the reflected reference.
pub fn convergence_run(
    problem: &BsdeProblem,
    domain: &DomainPath,
    scen: &ScenarioSet,
    n_levels: &[f64],
) -> Result<ConvergenceRun, DiagnosticError> {
    if n_levels.is_empty()
        || n_levels[0] <= 0.0
        || n_levels.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(DiagnosticError::InvalidLevels);
    }
    let reflected = solve_reflected_discrete(problem, domain, scen)?;
    let penalized = n_levels
        .iter()
        .map(|&n| solve_penalized(problem, domain, scen, n))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = penalized
        .iter()
        .map(|s| measure(s, &reflected, domain, scen))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = measure(&reflected, &reflected, domain, scen)?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let viol: Vec<f64> = rows.iter().map(|r| r.violation).collect();
    let report = ConvergenceReport {
        gap_slope: loglog_slope(n_levels, &gaps),
        violation_slope: loglog_slope(n_levels, &viol),
        rows,
        reference,
    };
    Ok(ConvergenceRun {
        report,
        penalized,
        reflected,
    })
}

pub fn convergence_report(
    problem: &BsdeProblem,
    domain: &DomainPath,
    scen: &ScenarioSet,
    n_levels: &[f64],
) -> Result<ConvergenceReport, DiagnosticError> {
    convergence_run(problem, domain, scen, n_levels).map(|r| r.report)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-step summary: time, `E|Y|^2`, `E|Z|^2`, `E|V|^2`, `E|K|`, max violation.
pub fn solution_csv(sol: &SolutionBundle, scen: &ScenarioSet) -> Result<String, DiagnosticError> {
    check(sol, scen)?;
    let mut out = String::from("time,e_y2,e_z2,e_v2,e_k,max_violation\n");
    for step in 0..=scen.steps() {
        let mut acc = [0.0; 4];
        for node in 0..scen.nodes(step) {
            let w = scen.weight(step, node);
            acc[0] += w * sol.y(step, node).norm_squared();
            acc[1] += w * sol.z(step, node).norm_squared();
            acc[2] += w * sol.v(step, node).norm_squared();
            acc[3] += w * sol.k_cum(step, node).norm();
        }
        writeln!(
            out,
            "{},{},{},{},{},{}",
            num(scen.time(step)),
            num(acc[0]),
            num(acc[1]),
            num(acc[2]),
            num(acc[3]),
            num(sol.max_violation_at(step))
        )
        .expect("writing to a String");
    }
    Ok(out)
}

fn slope_text(s: Option<f64>) -> String {
    s.map(num).unwrap_or_else(|| "nan".into())
}

/// One row per level plus the reflected reference (`n_level = inf`).
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out =
        String::from("n_level,max_violation,sup_gap,total_variation,skorokhod_residual,apriori_aggregate\n");
    for r in report.rows.iter().chain(std::iter::once(&report.reference)) {
        let level = if r.n_level.is_finite() { num(r.n_level) } else { "inf".into() };
        writeln!(
            out,
            "{level},{},{},{},{},{}",
            num(r.violation),
            num(r.gap),
            num(r.total_variation),
            num(r.skorokhod),
            num(r.apriori)
        )
        .expect("writing to a String");
    }
    writeln!(
        out,
        "# gap_slope={} violation_slope={}",
        slope_text(report.gap_slope),
        slope_text(report.violation_slope)
    )
    .expect("writing to a String");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{build_tree, Mark, NoiseModel};
    use crate::problem::{Driver, Terminal};

    fn tree(intensities: &[f64], steps: usize) -> ScenarioSet {
        let marks = intensities
            .iter()
            .map(|&l| Mark {
                vector: Point::from_element(1, 1.0),
                intensity: l,
            })
            .collect();
        build_tree(&NoiseModel::new(1, marks, 1.0, steps).unwrap()).unwrap()
    }

    fn wide() -> DomainPath {
        DomainPath::fixed(ConvexBody::ball(Point::zeros(1), 100.0).unwrap(), 1.0)
    }

    #[test]
    fn zero_problem_is_all_zero() {
        let scen = tree(&[0.5], 4);
        let dom = wide();
        let p = BsdeProblem::new(1, 1, 1, Terminal::zero(1), Driver::Zero);
        let run = convergence_run(&p, &dom, &scen, &[4.0, 16.0]).unwrap();
        for r in &run.report.rows {
            assert_eq!((r.violation, r.gap, r.total_variation, r.apriori), (0.0, 0.0, 0.0, 0.0));
            assert_eq!(r.skorokhod, 0.0);
        }
        assert!(run.report.gap_slope.is_none());
        let sol = &run.reflected;
        let it = ito_tanaka_residual(sol, sol, &scen, 1.5).unwrap();
        assert!(it.residual.iter().all(|r| *r == 0.0));
        let st = stability_gap(sol, sol, &dom, &dom, &scen).unwrap();
        assert_eq!((st.lhs, st.domain_gap, st.ratio()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn brownian_aggregate_is_exact() {
        let scen = tree(&[], 4);
        let dom = wide();
        let p = BsdeProblem::new(1, 1, 0, Terminal::brownian(1, 1.0), Driver::Zero);
        let sol = solve_reflected_discrete(&p, &dom, &scen).unwrap();
        let agg = apriori_aggregate(&sol, &dom, &scen).unwrap();
        let sups: Vec<f64> = (0..scen.leaf_count())
            .map(|leaf| {
                (0..=4)
                    .map(|s| scen.brownian(s, scen.ancestor(4, leaf, s))[0].powi(2))
                    .fold(0.0, f64::max)
            })
            .collect();
        let want = scen.expectation(&sups) + 1.0;
        assert!((agg.total() - want).abs() < 1e-12);
    }

    #[test]
    fn skorokhod_and_ito_checks_on_reflected_box() {
        let scen = tree(&[0.8], 5);
        let body = ConvexBody::aligned_box(Point::from_element(1, -0.5), Point::from_element(1, 0.5)).unwrap();
        let dom = DomainPath::fixed(body, 1.0);
        let xi = Terminal::clipped(Terminal::brownian(1, 1.0), dom.clone());
        let p = BsdeProblem::new(1, 1, 1, xi, Driver::Linear { a: 1.5, b: 0.0, c: 0.0 });
        let refl = solve_reflected_discrete(&p, &dom, &scen).unwrap();
        let sk = skorokhod_residual(&refl, TestProcess::Interior, &dom, &scen).unwrap();
        assert!(sk.margin_excess(0.5) <= 1e-8);
        assert!(sk.variation.iter().any(|v| *v > 0.0));
        let self_test = skorokhod_residual(&refl, TestProcess::Solution, &dom, &scen).unwrap();
        assert_eq!(self_test.residual(), 0.0);
        let pen = solve_penalized(&p, &dom, &scen, 4.0).unwrap();
        for q in [1.5, 2.0] {
            let it = ito_tanaka_residual(&refl, &pen, &scen, q).unwrap();
            assert!(it.pass_fraction() >= 0.95);
        }
        assert!(matches!(
            ito_tanaka_residual(&refl, &pen, &scen, 1.0),
            Err(DiagnosticError::InvalidExponent(_))
        ));
    }

    #[test]
    fn slopes_and_csv_format() {
        let s = loglog_slope(&[1.0, 10.0, 100.0], &[1.0, 0.1, 0.01]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0, 2.0], &[1.0, 0.0]).is_none());
        let scen = tree(&[], 2);
        let p = BsdeProblem::new(1, 1, 0, Terminal::brownian(1, 1.0), Driver::Zero);
        let sol = solve_reflected_discrete(&p, &wide(), &scen).unwrap();
        let csv = solution_csv(&sol, &scen).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        let e_y2: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert!((e_y2 - 1.0).abs() < 1e-15);
    }
}
