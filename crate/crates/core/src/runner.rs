//! Experiment orchestration: validate a resolved config, run the solvers and
//! diagnostics, write CSV tables and a plain-text report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ModeSpec, ResolvedConfig};
use crate::diagnostics::{
    convergence_csv, convergence_run, ito_tanaka_residual, skorokhod_residual, solution_csv,
    DiagnosticError, TestProcess,
};
use crate::domain::{uniform_grid, verify_h4, DomainPath};
use crate::noise::{build_tree, sample_paths, NoHistory, ScenarioSet};
use crate::policy::POLICY;
use crate::problem::BsdeProblem;
use crate::solver::{SolutionBundle, STABILITY_LIMIT};

/// Boundary-contact tolerance of the flat-off check.
pub const FLAT_OFF_TOL: f64 = 1e-10;
/// Round-off allowance of the minimality checks.
pub const SKOROKHOD_TOL: f64 = 1e-8;
/// Allowed max/min ratio of the a priori aggregate across levels.
pub const APRIORI_RATIO: f64 = 3.0;
/// Required share of branches passing the `|Y - Y'|^q` check.
pub const ITO_TANAKA_SHARE: f64 = 0.95;
/// Seed of the Lipschitz spot-check.
pub const LIPSCHITZ_SEED: u64 = 0x11f5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{assumption} violated: {message}")]
    Validation {
        assumption: &'static str,
        message: String,
    },
    #[error(transparent)]
    Diagnostic(#[from] DiagnosticError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        1
    }
}

fn validation(assumption: &'static str, message: impl std::fmt::Display) -> RunError {
    let text = message.to_string();
    let message = match text.strip_prefix(&format!("{assumption} violated: ")) {
        Some(rest) => rest.to_string(),
        None => text,
    };
    RunError::Validation { assumption, message }
}

/// One pass/fail line of the report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub tag: &'static str,
    pub description: String,
    pub passed: bool,
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub margin: f64,
    pub gap_slope: Option<f64>,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// 0 when every check passed, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.passed() {
            0
        } else {
            2
        }
    }
}

/// Validated inputs of a run.
pub struct Prepared {
    pub domain: DomainPath,
    pub problem: BsdeProblem,
    pub scenarios: ScenarioSet,
    pub margin: f64,
}

/// Build every object and check the standing assumptions.
pub fn prepare(cfg: &ResolvedConfig) -> Result<Prepared, RunError> {
    let model = cfg.noise_model().map_err(|e| validation("noise model", e))?;
    let domain = cfg.domain_path()?;
    let problem = cfg.problem(&domain)?;
    let h = model.step_size();
    let product = problem.lipschitz() * h;
    if product >= STABILITY_LIMIT {
        return Err(validation(
            "stability guard",
            format!("C*h = {product} must be < {STABILITY_LIMIT}"),
        ));
    }
    let grid = uniform_grid(model.horizon(), model.steps());
    if let Some(t) = grid.iter().copied().find(|&t| !problem.driver_at_origin(t).iter().all(|v| v.is_finite())) {
        return Err(validation("(H2)", format!("f(t, 0, 0, 0) is not finite at t = {t}")));
    }
    problem
        .spot_check_lipschitz(model.horizon(), LIPSCHITZ_SEED)
        .map_err(|e| validation("(H3)", e))?;
    let scenarios = match cfg.run.mode {
        ModeSpec::Tree => build_tree(&model),
        ModeSpec::Mc => sample_paths(&model, cfg.run.n_paths, cfg.run.seed),
    }
    .map_err(|e| validation("scenario size", e))?;
    let report = verify_h4(&domain, &grid, &scenarios).map_err(|e| validation("(H4)", e))?;
    let margin = report.require().map_err(|e| validation("(H4)", e))?;
    problem
        .terminal_values(&domain, &scenarios)
        .map_err(|e| validation("(H1)", e))?;
    Ok(Prepared {
        domain,
        problem,
        scenarios,
        margin,
    })
}

fn level_name(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn terminal_exact(sol: &SolutionBundle, xi: &[crate::geometry::Point]) -> bool {
    let n = sol.steps();
    xi.iter().enumerate().all(|(leaf, x)| sol.y(n, leaf) == *x)
}

fn flat_off(sol: &SolutionBundle, domain: &DomainPath, scen: &ScenarioSet) -> Result<f64, RunError> {
    let mut worst = 0.0f64;
    for step in 0..scen.steps() {
        let t = scen.time(step);
        let fixed = if domain.motion_is_adapted() {
            None
        } else {
            Some(domain.at(t, &NoHistory).map_err(DiagnosticError::from)?)
        };
        for node in 0..scen.nodes(step) {
            if sol.dk(step, node).norm() == 0.0 {
                continue;
            }
            let body = match &fixed {
                Some(b) => b.clone(),
                None => domain.at(t, &scen.history(step, node)).map_err(DiagnosticError::from)?,
            };
            let gap = body
                .boundary_distance(&sol.y(step, node))
                .map_err(DiagnosticError::from)?;
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + POLICY.geometry)
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    fs::write(&path, text).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

/// Run a resolved config and write the artifacts into `out`.
pub fn run(cfg: &ResolvedConfig, out: &Path) -> Result<RunOutcome, RunError> {
    let levels = &cfg.run.levels;
    if levels.is_empty() || levels[0] <= 0.0 || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ConfigError::Invalid("levels must be positive and strictly increasing".into()).into());
    }
    let Prepared {
        domain,
        problem,
        scenarios: scen,
        margin,
    } = prepare(cfg)?;
    let xi = problem
        .terminal_values(&domain, &scen)
        .map_err(|e| validation("(H1)", e))?;
    let conv = convergence_run(&problem, &domain, &scen, levels)?;
    let report = &conv.report;

    let mut checks = Vec::new();
    let mut push = |tag: &'static str, passed: bool, description: String| {
        checks.push(Check {
            tag,
            description,
            passed,
        })
    };

    let all: Vec<&SolutionBundle> = conv.penalized.iter().chain([&conv.reflected]).collect();
    push(
        "terminal-condition",
        all.iter().all(|s| terminal_exact(s, &xi)),
        "Y_T equals the terminal value on every scenario, all solvers".into(),
    );
    push(
        "k-starts-at-zero",
        all.iter().all(|s| (0..s.nodes(0)).all(|i| s.k_cum(0, i).norm() == 0.0)),
        "K_0 = 0 for every solver".into(),
    );
    let refl_violation = conv.reflected.max_violation();
    push(
        "confinement",
        refl_violation <= FLAT_OFF_TOL,
        format!("reflected solution stays in D_t (max distance {refl_violation:.3e})"),
    );
    let contact = flat_off(&conv.reflected, &domain, &scen)?;
    push(
        "flat-off",
        contact <= FLAT_OFF_TOL,
        format!("K moves only at the boundary (max boundary gap where dK != 0: {contact:.3e})"),
    );
    let sk = skorokhod_residual(&conv.reflected, TestProcess::Interior, &domain, &scen)?;
    let excess = sk.margin_excess(margin);
    push(
        "skorokhod-minimality",
        excess <= SKOROKHOD_TOL,
        format!(
            "sum <Y - A, dK> <= -beta sum |dK| with beta = {margin:.6e} (max excess {excess:.3e})"
        ),
    );
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.gap).collect();
    push(
        "penalization-convergence",
        non_increasing(&gaps),
        format!(
            "sup |Y^n - Y^refl| non-increasing in n (fitted slope {})",
            report.gap_slope.map_or("n/a".to_string(), |s| format!("{s:.4}"))
        ),
    );
    let viol: Vec<f64> = report.rows.iter().map(|r| r.violation).collect();
    push(
        "violation-decay",
        non_increasing(&viol),
        format!(
            "max dist(Y^n, D) non-increasing in n (fitted slope {})",
            report.violation_slope.map_or("n/a".to_string(), |s| format!("{s:.4}"))
        ),
    );
    let apriori: Vec<f64> = report.rows.iter().map(|r| r.apriori).collect();
    let hi = apriori.iter().copied().fold(0.0, f64::max);
    let lo = apriori.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
    push(
        "apriori-uniformity",
        ratio <= APRIORI_RATIO,
        format!("a priori aggregate max/min across levels = {ratio:.4} (limit {APRIORI_RATIO})"),
    );
    let coarse = &conv.penalized[0];
    for q in [1.5, 2.0] {
        let it = ito_tanaka_residual(&conv.reflected, coarse, &scen, q)?;
        let share = it.pass_fraction();
        push(
            "ito-tanaka",
            share >= ITO_TANAKA_SHARE,
            format!(
                "|Y - Y'|^q inequality, q = {q}, reflected vs n = {}: {:.2}% of paths within 5 sqrt(h)",
                level_name(coarse.scheme().level()),
                100.0 * share
            ),
        );
    }

    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for sol in &conv.penalized {
        let name = format!("solution_n{}.csv", level_name(sol.scheme().level()));
        write(out.join(name), &solution_csv(sol, &scen)?, &mut files)?;
    }
    write(
        out.join("solution_reflected.csv"),
        &solution_csv(&conv.reflected, &scen)?,
        &mut files,
    )?;
    write(out.join("convergence.csv"), &convergence_csv(report), &mut files)?;
    write(out.join("config.toml"), &cfg.to_toml(), &mut files)?;

    let mut text = String::new();
    let model = scen.model();
    let _ = writeln!(text, "rbsde experiment report");
    let _ = writeln!(
        text,
        "preset: {}",
        cfg.preset.as_deref().unwrap_or("(inline)")
    );
    let _ = writeln!(
        text,
        "mode: {:?}  steps: {}  h: {:.6e}  nodes: {}",
        cfg.run.mode,
        model.steps(),
        model.step_size(),
        scen.node_count()
    );
    let _ = writeln!(
        text,
        "dims: m = {}, d = {}, marks = {}  lipschitz C = {:.6e}",
        problem.dim(),
        problem.brownian_dim(),
        problem.mark_count(),
        problem.lipschitz()
    );
    let _ = writeln!(text, "interior margin beta: {margin:.6e}");
    let _ = writeln!(
        text,
        "penalization gap slope: {}",
        report.gap_slope.map_or("n/a".to_string(), |s| format!("{s:.6}"))
    );
    let _ = writeln!(
        text,
        "note: the |Y - Y'|^q check uses the difference of the two solutions in every term"
    );
    let _ = writeln!(text);
    for c in &checks {
        let _ = writeln!(
            text,
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.tag,
            c.description
        );
    }
    let passed = checks.iter().all(|c| c.passed);
    let _ = writeln!(text);
    let _ = writeln!(text, "overall: {}", if passed { "PASS" } else { "FAIL" });
    write(out.join("report.txt"), &text, &mut files)?;

    Ok(RunOutcome {
        checks,
        margin,
        gap_slope: report.gap_slope,
        files,
    })
}
