use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbsde::config::{ExperimentConfig, ModeSpec, ResolvedConfig, PRESETS};
use rbsde::diagnostics::{
    convergence_run, ito_tanaka_residual, skorokhod_residual, stability_gap, TestProcess,
};
use rbsde::domain::{discretization_gap, uniform_grid};
use rbsde::noise::Mark;
use rbsde::runner::{self, prepare, Prepared};
use rbsde::{
    build_tree, solve_penalized, solve_reflected_discrete, BsdeProblem, ConvexBody, DomainPath,
    Driver, NoiseModel, Point, Terminal,
};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    title: &'static str,
    budget_secs: Option<f64>,
    body: fn() -> Outcome,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, title: "geometry suite", budget_secs: Some(5.0), body: geometry_suite },
    Criterion { id: 2, title: "resolvent exactness", budget_secs: None, body: resolvent_exactness },
    Criterion { id: 3, title: "martingale reductions", budget_secs: Some(10.0), body: martingale_reductions },
    Criterion { id: 4, title: "penalization convergence", budget_secs: Some(30.0), body: penalization_convergence },
    Criterion { id: 5, title: "flat-off and minimality", budget_secs: None, body: flat_off_and_minimality },
    Criterion { id: 6, title: "discretization gap", budget_secs: None, body: discretization_halving },
    Criterion { id: 7, title: "stability ladder", budget_secs: None, body: stability_ladder },
    Criterion { id: 8, title: "Ito-Tanaka inequality", budget_secs: None, body: ito_tanaka },
    Criterion { id: 9, title: "a priori uniformity", budget_secs: None, body: apriori_uniformity },
    Criterion { id: 10, title: "determinism", budget_secs: None, body: determinism },
];

fn main() -> ExitCode {
    let mut failed = 0;
    for c in &CRITERIA {
        let start = Instant::now();
        let outcome = (c.body)();
        let secs = start.elapsed().as_secs_f64();
        let (mut ok, mut detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if let Some(budget) = c.budget_secs {
            if secs >= budget {
                ok = false;
                detail.push_str(&format!("; over the {budget} s budget"));
            }
        }
        println!(
            "criterion {:>2} [{}] {}: {} ({secs:.2} s)",
            c.id,
            if ok { "PASS" } else { "FAIL" },
            c.title,
            detail
        );
        failed += usize::from(!ok);
    }
    println!("{} of {} acceptance criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn preset(name: &str) -> Result<ResolvedConfig, String> {
    ExperimentConfig::from_preset(name)
        .and_then(|c| c.resolve())
        .map_err(|e| e.to_string())
}

fn prepared(name: &str) -> Result<Prepared, String> {
    prepare(&preset(name)?).map_err(|e| e.to_string())
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn random_point(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> Point {
    Point::from_fn(m, |_, _| rng.random_range(-scale..scale))
}

fn random_body(rng: &mut ChaCha8Rng, kind: usize) -> ConvexBody {
    let m = rng.random_range(1..=3usize);
    match kind {
        0 => ConvexBody::ball(random_point(rng, m, 1.0), rng.random_range(0.2..2.0)).unwrap(),
        1 => {
            let lower = random_point(rng, m, 1.0);
            let upper = lower.map(|x| x + rng.random_range(0.2..2.0));
            ConvexBody::aligned_box(lower, upper).unwrap()
        }
        _ => {
            let m = m.max(2);
            let mut normals = Vec::new();
            let mut offsets = Vec::new();
            for i in 0..m {
                for s in [1.0, -1.0] {
                    normals.push(Point::from_fn(m, |r, _| if r == i { s } else { 0.0 }));
                    offsets.push(rng.random_range(1.0..2.0));
                }
            }
            for _ in 0..3 {
                let mut a = random_point(rng, m, 1.0);
                if a.norm() < 0.1 {
                    a[0] += 1.0;
                }
                normals.push(a.normalize());
                offsets.push(rng.random_range(0.3..1.0));
            }
            ConvexBody::polytope(normals, offsets).unwrap()
        }
    }
}

fn interior_point(rng: &mut ChaCha8Rng, body: &ConvexBody) -> (Point, f64) {
    let c = body.center();
    let a = &c + random_point(rng, body.dim(), 0.3);
    match body.boundary_margin(&a) {
        Ok(beta) if beta > 0.0 => (a, beta),
        _ => {
            let beta = body.boundary_margin(&c).unwrap();
            (c, beta)
        }
    }
}

fn geometry_suite() -> Outcome {
    const TOL: f64 = 1e-10;
    const PROBES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 6];
    for kind in 0..3 {
        for _ in 0..PROBES {
            let body = random_body(&mut rng, kind);
            let m = body.dim();
            let x = random_point(&mut rng, m, 4.0);
            let x2 = random_point(&mut rng, m, 4.0);
            let p = body.project(&x).map_err(|e| e.to_string())?;
            let p2 = body.project(&x2).map_err(|e| e.to_string())?;
            let z = body.project(&random_point(&mut rng, m, 4.0)).map_err(|e| e.to_string())?;
            let (a, beta) = interior_point(&mut rng, &body);

            let idem = (body.project(&p).map_err(|e| e.to_string())? - &p).norm();
            let expand = (&p - &p2).norm() - (&x - &x2).norm();
            let variational = (&x - &p).dot(&(&z - &p));
            let monotone = -(&x - &x2).dot(&((&x - &p) - (&x2 - &p2)));
            let (normal_bound, outer_bound) = if (&p - &x).norm() > TOL {
                let alpha = (&p - &x).normalize();
                (
                    (&p - &a).dot(&alpha) + beta,
                    (&x - &a).dot(&(&p - &x)) + beta * (&p - &x).norm(),
                )
            } else {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            };
            for (w, v) in worst
                .iter_mut()
                .zip([idem, expand, variational, monotone, normal_bound, outer_bound])
            {
                *w = w.max(v);
            }
        }
    }
    let ok = worst.iter().all(|&w| w <= TOL);
    Ok((
        ok,
        format!(
            "{PROBES} probes x 3 body types; worst excess: idempotence {:.1e}, nonexpansive {:.1e}, \
             variational {:.1e}, monotone {:.1e}, normal-margin {:.1e}, outer-margin {:.1e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst[5]
        ),
    ))
}

/// Damped fixed-point iteration `y <- (target + w P(y)) / (1 + w)` started at
/// the body center. The map contracts by `w / (1 + w)`, so `40 (1 + w)`
/// sweeps shrink the initial error below `1e-16`.
fn resolvent_oracle(body: &ConvexBody, target: &Point, w: f64) -> Point {
    let mut y = body.center();
    let sweeps = (40.0 * (1.0 + w)) as usize + 100;
    for _ in 0..sweeps {
        let next = (target + body.project(&y).unwrap() * w) / (1.0 + w);
        if next == y {
            break;
        }
        y = next;
    }
    y
}

fn resolvent_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_oracle, mut worst_law) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let body = random_body(&mut rng, i % 3);
        let target = random_point(&mut rng, body.dim(), 4.0);
        let w = 10f64.powf(rng.random_range(-2.0..3.0));
        let y = body.penalty_resolvent(&target, w).map_err(|e| e.to_string())?;
        worst_oracle = worst_oracle.max((&y - resolvent_oracle(&body, &target, w)).norm());
        let law = body.distance(&y).map_err(|e| e.to_string())? * (1.0 + w)
            - body.distance(&target).map_err(|e| e.to_string())?;
        worst_law = worst_law.max(law.abs());
    }
    Ok((
        worst_oracle <= 1e-12 && worst_law <= 1e-10,
        format!(
            "1000 triples, w in [0.01, 1000]; max |closed form - oracle| = {worst_oracle:.2e} (tol 1e-12), \
             max |dist(y)(1+w) - dist(target)| = {worst_law:.2e} (tol 1e-10)"
        ),
    ))
}

fn martingale_reductions() -> Outcome {
    const LAMBDA: f64 = 0.8;
    let marks = vec![Mark {
        vector: Point::from_element(1, 1.0),
        intensity: LAMBDA,
    }];
    let model = NoiseModel::new(1, marks, 1.0, 8).map_err(|e| e.to_string())?;
    let scen = build_tree(&model).map_err(|e| e.to_string())?;
    let dom = DomainPath::fixed(ConvexBody::ball(Point::zeros(1), 100.0).unwrap(), 1.0);
    let brownian = BsdeProblem::new(1, 1, 1, Terminal::brownian(1, 1.0), Driver::Zero);
    let jump = BsdeProblem::new(
        1,
        1,
        1,
        Terminal::compensated_jump(1, 0, LAMBDA, 1.0, 1.0),
        Driver::Zero,
    );
    let mut worst = 0.0f64;
    let mut k_zero = true;
    for (problem, exact_z, exact_v) in [(&brownian, 1.0, 0.0), (&jump, 0.0, 1.0)] {
        let sols = [
            solve_penalized(problem, &dom, &scen, 16.0).map_err(|e| e.to_string())?,
            solve_reflected_discrete(problem, &dom, &scen).map_err(|e| e.to_string())?,
        ];
        for sol in &sols {
            for step in 0..=scen.steps() {
                let t = scen.time(step);
                for node in 0..scen.nodes(step) {
                    let want = if exact_z == 1.0 {
                        scen.brownian(step, node)[0]
                    } else {
                        scen.jump_counts(step, node)[0] as f64 - LAMBDA * t
                    };
                    worst = worst.max((sol.y(step, node)[0] - want).abs());
                    k_zero &= sol.k_cum(step, node)[0] == 0.0 && sol.dk(step, node)[0] == 0.0;
                    if step < scen.steps() {
                        worst = worst.max((sol.z(step, node)[(0, 0)] - exact_z).abs());
                        worst = worst.max((sol.v(step, node)[(0, 0)] - exact_v).abs());
                    }
                }
            }
        }
    }
    Ok((
        worst <= 1e-12 && k_zero,
        format!(
            "tree N=8, d=1, K=1, Brownian and compensated-jump terminals, penalized and reflected: \
             max |error| in Y, Z, V = {worst:.2e} (tol 1e-12), K identically zero: {k_zero}"
        ),
    ))
}

fn penalization_convergence() -> Outcome {
    let p = prepared("clipped-brownian")?;
    let levels = [4.0, 16.0, 64.0, 256.0];
    let run = convergence_run(&p.problem, &p.domain, &p.scenarios, &levels).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = run.report.rows.iter().map(|r| r.gap).collect();
    let viol: Vec<f64> = run.report.rows.iter().map(|r| r.violation).collect();
    let slope = run.report.gap_slope.ok_or("slope undefined")?;
    let ok = strictly_decreasing(&gaps)
        && strictly_decreasing(&viol)
        && (-1.3..=-0.7).contains(&slope);
    Ok((
        ok,
        format!(
            "clipped-Brownian, n = 4..256: gaps [{}], violations [{}], fitted slope {slope:.4} (want [-1.3, -0.7])",
            fmt_list(&gaps),
            fmt_list(&viol)
        ),
    ))
}

fn flat_off_and_minimality() -> Outcome {
    let p = prepared("moving-ball")?;
    let scen = &p.scenarios;
    let sol = solve_reflected_discrete(&p.problem, &p.domain, scen).map_err(|e| e.to_string())?;
    let mut contact = 0.0f64;
    let mut pushes = 0usize;
    for step in 0..scen.steps() {
        let t = scen.time(step);
        for node in 0..scen.nodes(step) {
            if sol.dk(step, node).norm() == 0.0 {
                continue;
            }
            pushes += 1;
            let body = p.domain.at(t, &scen.history(step, node)).map_err(|e| e.to_string())?;
            contact = contact.max(body.boundary_distance(&sol.y(step, node)).map_err(|e| e.to_string())?);
        }
    }
    let sk = skorokhod_residual(&sol, TestProcess::Interior, &p.domain, scen).map_err(|e| e.to_string())?;
    let excess = sk.margin_excess(p.margin);
    let active = sk.variation.iter().filter(|&&v| v > 0.0).count();
    Ok((
        contact <= 1e-10 && excess <= 1e-8 && pushes > 0,
        format!(
            "moving ball, {pushes} nodes with dK != 0, max boundary gap {contact:.2e} (tol 1e-10); \
             max over {} branches ({active} reflected) of sum<Y-A,dK> + beta sum|dK| = {excess:.2e} (tol 1e-8)",
            sk.inner.len()
        ),
    ))
}

fn discretization_halving() -> Outcome {
    let cfg = preset("moving-ball")?;
    let path = cfg.domain_path().map_err(|e| e.to_string())?;
    let grid = uniform_grid(path.horizon(), 1000);
    let mut gaps = Vec::new();
    for j in [2, 4, 8, 16] {
        let disc = path.discretize(j, None).map_err(|e| e.to_string())?;
        gaps.push(discretization_gap(&disc, &grid, &rbsde::noise::NoHistory).map_err(|e| e.to_string())?);
    }
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (r / 2.0 - 1.0).abs() <= 0.1);
    Ok((
        ok,
        format!(
            "moving ball, j = 2, 4, 8, 16: gaps [{}], successive ratios [{}] (want 2 +/- 10%)",
            fmt_list(&gaps),
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

/// Reflected solutions in `Ball(0, 1)` and `Ball(0, 1 - g)`. The terminal is
/// clipped to `Ball(0, 0.9)` so it lies in every body of the ladder.
fn stability_ladder() -> Outcome {
    let marks = vec![Mark {
        vector: Point::from_element(1, 1.0),
        intensity: 1.0,
    }];
    let model = NoiseModel::new(1, marks, 1.0, 8).map_err(|e| e.to_string())?;
    let scen = build_tree(&model).map_err(|e| e.to_string())?;
    let ball = |r: f64| DomainPath::fixed(ConvexBody::ball(Point::zeros(1), r).unwrap(), 1.0);
    let base = ball(1.0);
    let xi = Terminal::clipped(Terminal::brownian(1, 2.0), ball(0.9));
    let problem = BsdeProblem::new(1, 1, 1, xi, Driver::Linear { a: 1.0, b: 0.0, c: 0.0 });
    let reference = solve_reflected_discrete(&problem, &base, &scen).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for g in [0.1, 0.05, 0.025] {
        let other = ball(1.0 - g);
        let sol = solve_reflected_discrete(&problem, &other, &scen).map_err(|e| e.to_string())?;
        let sg = stability_gap(&reference, &sol, &base, &other, &scen).map_err(|e| e.to_string())?;
        ratios.push(sg.ratio());
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    Ok((
        lo > 0.0 && spread <= 4.0,
        format!(
            "Ball(0,1) vs Ball(0,1-g), g = 0.1, 0.05, 0.025: E sup|dY|^2 / (gap E[TV + TV']) = [{}], max/min {spread:.3} (limit 4)",
            fmt_list(&ratios)
        ),
    ))
}

fn ito_tanaka() -> Outcome {
    let mut worst = 1.0f64;
    let mut lines = Vec::new();
    for name in ["clipped-brownian", "moving-ball"] {
        let p = prepared(name)?;
        let run = convergence_run(&p.problem, &p.domain, &p.scenarios, &[4.0, 16.0, 64.0, 256.0])
            .map_err(|e| e.to_string())?;
        for q in [1.5, 2.0] {
            let share = run
                .penalized
                .iter()
                .map(|s| {
                    ito_tanaka_residual(&run.reflected, s, &p.scenarios, q)
                        .map(|r| r.pass_fraction())
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .fold(1.0f64, f64::min);
            worst = worst.min(share);
            lines.push(format!("{name} q={q}: {:.2}%", 100.0 * share));
        }
    }
    Ok((
        worst >= 0.95,
        format!(
            "N=8, reflected vs each penalized level, worst share of branches within 5 sqrt(h): {} (want >= 95%)",
            lines.join(", ")
        ),
    ))
}

fn apriori_uniformity() -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for name in PRESETS {
        let p = prepared(name)?;
        let run = convergence_run(&p.problem, &p.domain, &p.scenarios, &[4.0, 16.0, 64.0, 256.0])
            .map_err(|e| e.to_string())?;
        let agg: Vec<f64> = run.report.rows.iter().map(|r| r.apriori).collect();
        let hi = agg.iter().copied().fold(0.0, f64::max);
        let lo = agg.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
        worst = worst.max(ratio);
        lines.push(format!("{name} {ratio:.3}"));
    }
    Ok((
        worst <= 3.0,
        format!("max/min of the aggregate over n = 4..256: {} (limit 3)", lines.join(", ")),
    ))
}

fn csv_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, fs::read(&path).map_err(|e| e.to_string())?));
        }
    }
    out.sort();
    Ok(out)
}

fn run_into(cfg: &ResolvedConfig, threads: Option<usize>) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let go = || runner::run(cfg, dir.path()).map_err(|e| e.to_string());
    match threads {
        None => go()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| e.to_string())?
            .install(go)?,
    };
    csv_bytes(dir.path())
}

fn determinism() -> Outcome {
    let mut checked = Vec::new();
    let mut ok = true;
    for name in PRESETS {
        let cfg = preset(name)?;
        let first = run_into(&cfg, None)?;
        let same = run_into(&cfg, None)? == first && !first.is_empty();
        ok &= same;
        checked.push(format!("tree {name} {}", if same { "identical" } else { "DIFFERS" }));
    }
    for name in ["moving-ball", "jump-compensated"] {
        let mut cfg = preset(name)?;
        cfg.run.mode = ModeSpec::Mc;
        cfg.run.seed = 7;
        let first = run_into(&cfg, Some(1))?;
        let mut same = !first.is_empty();
        for threads in [2, 3, 8] {
            same &= run_into(&cfg, Some(threads))? == first;
        }
        ok &= same;
        checked.push(format!(
            "mc {name} threads 1/2/3/8 {}",
            if same { "identical" } else { "DIFFERS" }
        ));
    }
    Ok((ok, format!("CSV bytes across reruns: {}", checked.join(", "))))
}
