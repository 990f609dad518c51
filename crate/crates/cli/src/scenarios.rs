//! Scenario dispatch and artifact writing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde_json::{json, Value};

use roughflow::fbm::{FbmParams, FbmSampler};
use roughflow::flow::{
    compute_flow, derivative_table, moment_scaling, nonuniqueness_contrast, uniqueness_residual,
    ContrastConfig, FlowProblem, MomentConfig, MomentKind,
};
use roughflow::numerics::fit_order;
use roughflow::rde::{solve_euler, solve_picard, RdeProblem, RdeSolution, SolverKind};
use roughflow::rough_lift::{check_chen, check_geometric, lift_piecewise_linear, RoughPath};
use roughflow::transform::{
    build_g, check_conservative, check_ellipticity, default_loops, lattice_probes,
    verify_transform_equivalence,
};
use roughflow::{GridPath, TimeGrid};

use crate::checks::{run_check, run_manifest, Outcome, MANIFEST};
use crate::config::{echo, ExperimentConfig, Scenario};
use crate::report::{CheckResult, Relation, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Library(#[from] roughflow::Error),
}

type RunResult<T> = std::result::Result<T, RunError>;

/// Runs the configured scenario. Library failures inside a scenario become
/// failed checks; only I/O problems surface as errors.
pub fn run(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let mut artifacts = Vec::new();
    let checks = match cfg.scenario {
        Scenario::VerifyAll => run_manifest(cfg, &[]),
        Scenario::LiftChecks => {
            let mut checks = capture("lift", || lift_artifacts(cfg, &mut artifacts));
            checks.extend(run_manifest(cfg, &[2, 3, 4, 5]));
            checks
        }
        Scenario::SampleFbm => capture("sample", || sample_fbm(cfg, &mut artifacts)),
        Scenario::Solve => capture("solve", || solve(cfg, &mut artifacts)),
        Scenario::TransformCheck => capture("transform", || transform_check(cfg, &mut artifacts)),
        Scenario::Flow => capture("flow", || flow(cfg, &mut artifacts)),
        Scenario::Uniqueness => capture("uniqueness", || uniqueness(cfg, &mut artifacts)),
    };
    let report = RunReport::new(cfg.scenario.as_str(), echo(cfg), checks, artifacts);
    if !matches!(cfg.scenario, Scenario::SampleFbm | Scenario::Solve) {
        let path = out_dir(cfg)?.join("report.json");
        fs::write(&path, report.to_json())?;
    }
    Ok(report)
}

/// Named outcomes produced by a scenario body.
type Produced = Vec<(&'static str, Outcome, f64)>;

fn capture(label: &str, body: impl FnOnce() -> RunResult<Produced>) -> Vec<CheckResult> {
    let start = Instant::now();
    match body() {
        Ok(outcomes) => outcomes
            .into_iter()
            .enumerate()
            .map(|(i, (name, o, wall))| CheckResult {
                id: i + 1,
                name: name.to_string(),
                value: o.value,
                threshold: o.threshold,
                relation: o.relation,
                pass: o.pass,
                wall_seconds: wall,
                detail: o.detail,
                error: None,
            })
            .collect(),
        Err(e) => vec![CheckResult {
            id: 1,
            name: label.to_string(),
            value: f64::NAN,
            threshold: f64::NAN,
            relation: Relation::AtMost,
            pass: false,
            wall_seconds: start.elapsed().as_secs_f64(),
            detail: Value::Null,
            error: Some(e.to_string()),
        }],
    }
}

fn outcome(value: f64, relation: Relation, threshold: f64, detail: Value) -> Outcome {
    Outcome {
        value,
        threshold,
        relation,
        pass: relation.holds(value, threshold),
        detail,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn out_file(cfg: &ExperimentConfig) -> RunResult<PathBuf> {
    let path = PathBuf::from(&cfg.out);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn write(path: &Path, text: &str, artifacts: &mut Vec<String>) -> RunResult<()> {
    fs::write(path, text)?;
    artifacts.push(path.display().to_string());
    Ok(())
}

fn fbm_params(cfg: &ExperimentConfig) -> roughflow::Result<FbmParams> {
    Ok(FbmParams::new(
        cfg.hurst,
        cfg.dim,
        TimeGrid::new(cfg.horizon, cfg.steps)?,
        cfg.seed,
    )
    .with_oversample(cfg.oversample))
}

fn noise_lift(cfg: &ExperimentConfig) -> roughflow::Result<Arc<RoughPath>> {
    let fine = FbmSampler::new(fbm_params(cfg)?)?.sample(0);
    Ok(Arc::new(lift_piecewise_linear(
        &fine,
        cfg.oversample,
        cfg.alpha,
    )?))
}

fn brownian(cfg: &ExperimentConfig) -> roughflow::Result<GridPath> {
    let params =
        FbmParams::new(0.5, 1, TimeGrid::new(cfg.horizon, cfg.steps)?, cfg.seed).with_oversample(1);
    Ok(FbmSampler::new(params)?.sample(0))
}

fn sample_fbm(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let start = Instant::now();
    let paths = FbmSampler::new(fbm_params(cfg)?)?.sample_many(cfg.count);
    let mut csv = String::from("path,t");
    for k in 1..=cfg.dim {
        write!(csv, ",W{k}").expect("string write");
    }
    csv.push('\n');
    for (p, path) in paths.iter().enumerate() {
        for i in 0..=path.steps() {
            write!(csv, "{p},{:.16e}", path.grid().point(i)).expect("string write");
            for v in path.value(i) {
                write!(csv, ",{v:.16e}").expect("string write");
            }
            csv.push('\n');
        }
    }
    write(&out_file(cfg)?, &csv, artifacts)?;
    let origin = paths
        .iter()
        .flat_map(|p| p.value(0))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(vec![(
        "origin",
        outcome(
            origin,
            Relation::AtMost,
            0.0,
            json!({ "paths": cfg.count, "fine_steps": cfg.steps * cfg.oversample }),
        ),
        start.elapsed().as_secs_f64(),
    )])
}

fn lift_artifacts(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let start = Instant::now();
    let rp = noise_lift(cfg)?;
    let dir = out_dir(cfg)?;
    let mut csv = Vec::new();
    rp.write_csv(&mut csv)?;
    write(
        &dir.join("lift.csv"),
        &String::from_utf8(csv).expect("csv is utf-8"),
        artifacts,
    )?;
    write(&dir.join("lift.json"), &rp.sidecar_json(), artifacts)?;
    let chen = check_chen(rp.as_ref(), 1000, cfg.seed).residual;
    let geo = check_geometric(&rp).defect;
    let wall = start.elapsed().as_secs_f64();
    Ok(vec![
        (
            "configured-lift-chen",
            outcome(chen, Relation::AtMost, cfg.chen_tol, Value::Null),
            wall,
        ),
        (
            "configured-lift-geometric",
            outcome(geo, Relation::AtMost, 1e-10, Value::Null),
            wall,
        ),
    ])
}

fn problem(cfg: &ExperimentConfig, noise: Arc<RoughPath>) -> roughflow::Result<RdeProblem> {
    RdeProblem::new(
        DVector::from_vec(cfg.x0.clone()),
        cfg.drift.build(cfg.dim, cfg.radius)?,
        cfg.sigma.build(cfg.dim)?,
        noise,
    )
}

fn solve_with(cfg: &ExperimentConfig, prob: &RdeProblem) -> roughflow::Result<RdeSolution> {
    match cfg.solver {
        SolverKind::Euler => solve_euler(prob),
        SolverKind::Picard => solve_picard(prob, cfg.picard_tol, cfg.picard_max_iter),
    }
}

fn solve(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let start = Instant::now();
    let prob = problem(cfg, noise_lift(cfg)?)?;
    let sol = solve_with(cfg, &prob)?;
    let mut csv = Vec::new();
    sol.path().write_csv(&mut csv)?;
    write(
        &out_file(cfg)?,
        &String::from_utf8(csv).expect("csv is utf-8"),
        artifacts,
    )?;
    let d = sol.diagnostics();
    Ok(vec![(
        "solve",
        outcome(
            d.max_abs,
            Relation::Below,
            roughflow::rde::BLOW_UP,
            json!({
                "solver": cfg.solver.as_str(),
                "iterations": d.iterations,
                "residual": d.residual,
                "damped": d.damped,
                "final_value": sol.final_value().as_slice(),
            }),
        ),
        start.elapsed().as_secs_f64(),
    )])
}

fn transform_check(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let mut produced = Vec::new();
    let start = Instant::now();
    let sigma = cfg.sigma.build(cfg.dim)?;
    let per_axis = match cfg.dim {
        1 => 601,
        2 => 25,
        _ => 7,
    };
    let ell = check_ellipticity(&sigma, &lattice_probes(cfg.dim, 3.0, per_axis))?;
    let circ = check_conservative(&sigma, &default_loops(cfg.dim), 1e-8)?;
    produced.push((
        "ellipticity",
        outcome(
            ell.min_quotient,
            Relation::AtLeast,
            sigma.lambda(),
            Value::Null,
        ),
        start.elapsed().as_secs_f64(),
    ));
    produced.push((
        "circulation",
        outcome(circ.max_circulation, Relation::AtMost, 1e-8, Value::Null),
        start.elapsed().as_secs_f64(),
    ));

    let start = Instant::now();
    let g = Arc::new(build_g(sigma)?);
    let levels: Vec<usize> = (0..4).map(|k| cfg.steps << k).collect();
    let finest = *levels.last().expect("four levels");
    let params = FbmParams::new(
        cfg.hurst,
        cfg.dim,
        TimeGrid::new(cfg.horizon, finest)?,
        cfg.seed,
    )
    .with_oversample(1);
    let fine = FbmSampler::new(params)?.sample(0);
    let (mut residuals, mut converse, mut roundtrip) = (Vec::new(), Vec::new(), 0.0f64);
    for &n in &levels {
        let rp = Arc::new(lift_piecewise_linear(&fine, finest / n, cfg.alpha)?);
        let prob = problem(cfg, rp)?;
        let r = verify_transform_equivalence(&prob, &solve_with(cfg, &prob)?, &g)?;
        residuals.push(r.sup_residual);
        converse.push(r.converse);
        roundtrip = roundtrip.max(r.roundtrip);
    }
    let h: Vec<f64> = levels.iter().map(|&n| cfg.horizon / n as f64).collect();
    let (rfit, cfit) = (fit_order(&h, &residuals)?, fit_order(&h, &converse)?);
    let summary = json!({
        "ellipticity": { "min_quotient": ell.min_quotient, "lambda": g.field().lambda(), "passed": ell.passed },
        "circulation": { "max": circ.max_circulation, "levels": circ.levels, "passed": circ.passed },
        "roundtrip": roundtrip,
        "residual_orders": { "levels": levels, "residual": rfit.order(), "converse": cfit.order() },
    });
    write(
        &out_dir(cfg)?.join("transform.json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
        artifacts,
    )?;
    let wall = start.elapsed().as_secs_f64();
    produced.push((
        "roundtrip",
        outcome(roundtrip, Relation::AtMost, 1e-10, Value::Null),
        wall,
    ));
    produced.push((
        "residual-order",
        outcome(
            rfit.order(),
            Relation::AtLeast,
            cfg.alpha - 0.25,
            json!({ "residuals": residuals }),
        ),
        wall,
    ));
    produced.push((
        "converse-order",
        outcome(
            cfit.order(),
            Relation::AtLeast,
            cfg.alpha - 0.25,
            json!({ "converse": converse }),
        ),
        wall,
    ));
    Ok(produced)
}

fn flow(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let dir = out_dir(cfg)?;
    let mut produced = Vec::new();
    let start = Instant::now();
    let fp = FlowProblem::new(cfg.drift.build_scalar(cfg.radius)?, brownian(cfg)?)?;
    let grid = *fp.grid();
    let field = compute_flow(&fp)?;

    let mut psi = String::from("s,t,x,value\n");
    for &s in fp.s_indices() {
        for &t in fp.t_indices().iter().filter(|&&t| t >= s) {
            for (xi, x) in fp.x_values().iter().enumerate() {
                writeln!(
                    psi,
                    "{:.16e},{:.16e},{x:.16e},{:.16e}",
                    grid.point(s),
                    grid.point(t),
                    field.value(s, t, xi)?
                )
                .expect("string write");
            }
        }
    }
    write(&dir.join("psi.csv"), &psi, artifacts)?;

    let rows = derivative_table(&fp, &field, cfg.delta)?;
    let mut der = String::from("s,t,x,identity,fd,relerr\n");
    for r in &rows {
        writeln!(
            der,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.s, r.t, r.x, r.identity, r.fd, r.relerr
        )
        .expect("string write");
    }
    write(&dir.join("derivative.csv"), &der, artifacts)?;
    let worst = rows.iter().map(|r| r.relerr).fold(0.0, f64::max);
    let positive = rows.iter().all(|r| r.identity > 0.0);
    let mut d = outcome(
        worst,
        Relation::AtMost,
        cfg.derivative_tol,
        json!({ "positive": positive }),
    );
    d.pass &= positive;
    produced.push(("derivative-identity", d, start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let mut studies = Vec::new();
    let mut margin = f64::INFINITY;
    for kind in [
        MomentKind::Space,
        MomentKind::TimeS,
        MomentKind::TimeT,
        MomentKind::JField,
    ] {
        let mut mc = MomentConfig::standard(kind, grid, cfg.paths, cfg.seed);
        mc.p = cfg.power;
        mc.x = cfg.x0[0];
        let r = moment_scaling(fp.drift(), &mc)?;
        margin = margin.min(r.slope - (r.bound_exponent - 0.3));
        studies.push(json!({
            "kind": kind.as_str(),
            "slope": r.slope,
            "bound_exponent": r.bound_exponent,
            "constant": r.constant,
            "passed": r.passed,
        }));
    }
    let moments = json!({ "p": cfg.power, "paths": cfg.paths, "studies": studies });
    write(
        &dir.join("moments.json"),
        &serde_json::to_string_pretty(&moments).expect("json"),
        artifacts,
    )?;
    produced.push((
        "moment-slopes",
        outcome(margin, Relation::AtLeast, 0.0, Value::Null),
        start.elapsed().as_secs_f64(),
    ));

    let start = Instant::now();
    let x = cfg.x0[0];
    let own = fp.march(0, x)?;
    let own_res = uniqueness_residual(&fp, &GridPath::scalar(grid, own.clone())?, x)?;
    let bumped = own
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.1 * (std::f64::consts::PI * grid.point(i) / cfg.horizon).sin())
        .collect();
    let pert = uniqueness_residual(&fp, &GridPath::scalar(grid, bumped)?, x)?;
    let uniq = json!({ "x": x, "own_residual": own_res, "perturbed_residual": pert });
    write(
        &dir.join("uniqueness.json"),
        &serde_json::to_string_pretty(&uniq).expect("json"),
        artifacts,
    )?;
    let mut u = outcome(
        own_res,
        Relation::AtMost,
        1e-10,
        json!({ "perturbed_residual": pert }),
    );
    u.pass &= pert > 0.0;
    produced.push(("uniqueness-replay", u, start.elapsed().as_secs_f64()));
    Ok(produced)
}

fn uniqueness(cfg: &ExperimentConfig, artifacts: &mut Vec<String>) -> RunResult<Produced> {
    let start = Instant::now();
    let (c, theta) = match cfg.drift {
        crate::registry::DriftSpec::Holder(c, theta) => (c, theta),
        _ => (1.0, 0.5),
    };
    let contrast = nonuniqueness_contrast(&ContrastConfig {
        c,
        theta,
        radius: cfg.radius,
        horizon: cfg.horizon,
        seed: cfg.seed,
        ..ContrastConfig::default()
    })?;
    let levels: Vec<Value> = contrast
        .levels
        .iter()
        .map(|l| {
            json!({
                "steps": l.steps,
                "noiseless_residuals": [l.noiseless_residuals.0, l.noiseless_residuals.1],
                "noisy_distances": [l.noisy_distances.0, l.noisy_distances.1],
            })
        })
        .collect();
    let summary = json!({
        "c": c,
        "theta": theta,
        "noiseless_gap": contrast.noiseless_gap,
        "noisy_ratio": contrast.noisy_ratio,
        "levels": levels,
    });
    write(
        &out_dir(cfg)?.join("uniqueness.json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
        artifacts,
    )?;
    let mut checks = vec![(
        "noisy-contrast",
        outcome(contrast.noisy_ratio, Relation::Below, 0.25, Value::Null),
        start.elapsed().as_secs_f64(),
    )];
    // the manifest's uniqueness check, at the same config
    let manifest = run_check(&MANIFEST[13], cfg);
    checks.push((
        "uniqueness-manifest",
        Outcome {
            value: manifest.value,
            threshold: manifest.threshold,
            relation: manifest.relation,
            pass: manifest.pass,
            detail: manifest.detail,
        },
        manifest.wall_seconds,
    ));
    Ok(checks)
}
