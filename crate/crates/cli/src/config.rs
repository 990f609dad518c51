//! Flat `key = value` experiment files.
//!
//! ```text
//! scenario = solve
//!
//! [noise]
//! hurst = 0.5
//! steps = 512
//! ```
//!
//! Keys live in fixed sections; `#` starts a comment. Every error names the
//! line it came from.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use roughflow::rde::SolverKind;

use crate::registry::{DriftSpec, SigmaSpec};

/// Fine-grid size above which dense Cholesky sampling is refused.
pub const CHOLESKY_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SampleFbm,
    LiftChecks,
    Solve,
    TransformCheck,
    Flow,
    Uniqueness,
    VerifyAll,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::SampleFbm,
        Scenario::LiftChecks,
        Scenario::Solve,
        Scenario::TransformCheck,
        Scenario::Flow,
        Scenario::Uniqueness,
        Scenario::VerifyAll,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SampleFbm => "sample-fbm",
            Scenario::LiftChecks => "lift-checks",
            Scenario::Solve => "solve",
            Scenario::TransformCheck => "transform-check",
            Scenario::Flow => "flow",
            Scenario::Uniqueness => "uniqueness",
            Scenario::VerifyAll => "verify-all",
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    // [noise]
    pub hurst: f64,
    pub steps: usize,
    pub oversample: usize,
    pub horizon: f64,
    pub dim: usize,
    pub seed: u64,
    pub count: usize,
    pub alpha: f64,
    // [model]
    pub x0: Vec<f64>,
    pub drift: DriftSpec,
    pub sigma: SigmaSpec,
    pub solver: SolverKind,
    // [flow]
    pub radius: f64,
    pub paths: usize,
    pub power: f64,
    pub delta: f64,
    // [tolerance]
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub chen_tol: f64,
    pub derivative_tol: f64,
    // [output]
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::VerifyAll,
            hurst: 0.5,
            steps: 512,
            oversample: 16,
            horizon: 1.0,
            dim: 1,
            seed: 42,
            count: 1,
            alpha: 0.45,
            x0: vec![0.3],
            drift: "cos(1)".parse().expect("valid"),
            sigma: "two_plus_sin".parse().expect("valid"),
            solver: SolverKind::Euler,
            radius: 2.0,
            paths: 1000,
            power: 4.0,
            delta: 1e-4,
            picard_tol: 1e-10,
            picard_max_iter: 200,
            chen_tol: 1e-10,
            derivative_tol: 1e-2,
            out: "out".into(),
        }
    }
}

type Setter = fn(&mut ExperimentConfig, &str) -> Result<(), String>;

fn number<T: FromStr>(v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expects {what}, got `{v}`"))
}

fn float(v: &str) -> Result<f64, String> {
    let x: f64 = number(v, "a number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expects a finite number, got `{v}`"))
    }
}

fn solver(v: &str) -> Result<SolverKind, String> {
    match v {
        "euler" => Ok(SolverKind::Euler),
        "picard" => Ok(SolverKind::Picard),
        _ => Err(format!("expects euler or picard, got `{v}`")),
    }
}

/// `(section, key, setter)`, in echo order.
#[allow(clippy::unit_arg)]
const KEYS: &[(&str, &str, Setter)] = &[
    ("noise", "hurst", |c, v| Ok(c.hurst = float(v)?)),
    ("noise", "steps", |c, v| {
        Ok(c.steps = number(v, "an unsigned integer")?)
    }),
    ("noise", "oversample", |c, v| {
        Ok(c.oversample = number(v, "an unsigned integer")?)
    }),
    ("noise", "horizon", |c, v| Ok(c.horizon = float(v)?)),
    ("noise", "dim", |c, v| {
        Ok(c.dim = number(v, "an unsigned integer")?)
    }),
    ("noise", "seed", |c, v| {
        Ok(c.seed = number(v, "an unsigned integer")?)
    }),
    ("noise", "count", |c, v| {
        Ok(c.count = number(v, "an unsigned integer")?)
    }),
    ("noise", "alpha", |c, v| Ok(c.alpha = float(v)?)),
    ("model", "x0", |c, v| {
        c.x0 = v
            .split(',')
            .map(|s| float(s.trim()))
            .collect::<Result<_, _>>()?;
        Ok(())
    }),
    ("model", "drift", |c, v| Ok(c.drift = v.parse()?)),
    ("model", "sigma", |c, v| Ok(c.sigma = v.parse()?)),
    ("model", "solver", |c, v| Ok(c.solver = solver(v)?)),
    ("flow", "radius", |c, v| Ok(c.radius = float(v)?)),
    ("flow", "paths", |c, v| {
        Ok(c.paths = number(v, "an unsigned integer")?)
    }),
    ("flow", "power", |c, v| Ok(c.power = float(v)?)),
    ("flow", "delta", |c, v| Ok(c.delta = float(v)?)),
    ("tolerance", "picard_tol", |c, v| {
        Ok(c.picard_tol = float(v)?)
    }),
    ("tolerance", "picard_max_iter", |c, v| {
        Ok(c.picard_max_iter = number(v, "an unsigned integer")?)
    }),
    ("tolerance", "chen_tol", |c, v| Ok(c.chen_tol = float(v)?)),
    ("tolerance", "derivative_tol", |c, v| {
        Ok(c.derivative_tol = float(v)?)
    }),
    ("output", "out", |c, v| Ok(c.out = v.to_string())),
];

const SECTIONS: &[&str] = &["noise", "model", "flow", "tolerance", "output"];

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut section: Option<String> = None;
    let mut seen: HashMap<(Option<String>, String), usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ConfigError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(first) = seen.insert((section.clone(), key.to_string()), line) {
            return Err(err(format!("`{key}` already set on line {first}")));
        }
        match section.as_deref() {
            None if key == "scenario" => cfg.scenario = value.parse().map_err(err)?,
            None => return Err(err(format!("unknown key `{key}` outside any section"))),
            Some(sec) => {
                let (_, _, set) = KEYS
                    .iter()
                    .find(|(s, k, _)| *s == sec && *k == key)
                    .ok_or_else(|| err(format!("unknown key `{key}` in [{sec}]")))?;
                set(&mut cfg, value).map_err(|m| err(format!("`{key}` {m}")))?;
            }
        }
    }
    if cfg.x0.len() == 1 && cfg.dim > 1 {
        cfg.x0 = vec![cfg.x0[0]; cfg.dim];
    }
    validate(&cfg).map_err(|v| {
        // the first involved key that the file actually sets
        let line = v
            .keys
            .iter()
            .find_map(|(sec, key)| seen.get(&(Some(sec.to_string()), key.to_string())).copied())
            .unwrap_or(0);
        ConfigError {
            line,
            message: format!("`{}` {}", v.keys[0].1, v.message),
        }
    })?;
    Ok(cfg)
}

/// A failed constraint and the keys it involves, most specific first.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub keys: &'static [(&'static str, &'static str)],
    pub message: String,
}

/// Checks every field against the library's preconditions.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), Violation> {
    let fail = |keys, message: String| Err(Violation { keys, message });
    if !(cfg.hurst > 1.0 / 3.0 && cfg.hurst <= 0.5) {
        return fail(
            &[("noise", "hurst")],
            format!("{} outside (1/3, 1/2]", cfg.hurst),
        );
    }
    if cfg.steps < 4 || !cfg.steps.is_multiple_of(4) {
        return fail(
            &[("noise", "steps")],
            format!("{} must be a positive multiple of 4", cfg.steps),
        );
    }
    if cfg.oversample == 0 {
        return fail(&[("noise", "oversample")], "must be at least 1".into());
    }
    if cfg.hurst < 0.5 && cfg.steps * cfg.oversample > CHOLESKY_CAP {
        return fail(
            &[
                ("noise", "oversample"),
                ("noise", "steps"),
                ("noise", "hurst"),
            ],
            format!(
                "steps * oversample = {} exceeds {CHOLESKY_CAP} for H < 1/2",
                cfg.steps * cfg.oversample
            ),
        );
    }
    if !(cfg.horizon > 0.0) {
        return fail(
            &[("noise", "horizon")],
            format!("{} must be positive", cfg.horizon),
        );
    }
    if cfg.dim == 0 {
        return fail(&[("noise", "dim")], "must be at least 1".into());
    }
    if cfg.count == 0 {
        return fail(&[("noise", "count")], "must be at least 1".into());
    }
    if !(cfg.alpha > 1.0 / 3.0 && cfg.alpha < cfg.hurst) {
        return fail(
            &[("noise", "alpha"), ("noise", "hurst")],
            format!("{} outside (1/3, hurst)", cfg.alpha),
        );
    }
    if cfg.x0.len() != cfg.dim {
        return fail(
            &[("model", "x0"), ("noise", "dim")],
            format!("has {} entries for dimension {}", cfg.x0.len(), cfg.dim),
        );
    }
    if let Err(m) = cfg.sigma.check_dim(cfg.dim) {
        return fail(&[("model", "sigma"), ("noise", "dim")], m);
    }
    if !(cfg.radius > 0.0) {
        return fail(
            &[("flow", "radius")],
            format!("{} must be positive", cfg.radius),
        );
    }
    if cfg.paths < 1000 {
        return fail(&[("flow", "paths")], format!("{} is below 1000", cfg.paths));
    }
    let min_power = 2.0 / cfg.drift.theta();
    if cfg.power < min_power {
        return fail(
            &[("flow", "power"), ("model", "drift")],
            format!("{} is below {min_power}", cfg.power),
        );
    }
    if !(cfg.delta >= roughflow::flow::MIN_FD_STEP) {
        return fail(
            &[("flow", "delta")],
            format!("{} is below {}", cfg.delta, roughflow::flow::MIN_FD_STEP),
        );
    }
    for (key, v) in [
        ("picard_tol", cfg.picard_tol),
        ("chen_tol", cfg.chen_tol),
        ("derivative_tol", cfg.derivative_tol),
    ] {
        if !(v > 0.0) {
            return Err(Violation {
                keys: match key {
                    "picard_tol" => &[("tolerance", "picard_tol")],
                    "chen_tol" => &[("tolerance", "chen_tol")],
                    _ => &[("tolerance", "derivative_tol")],
                },
                message: format!("{v} must be positive"),
            });
        }
    }
    if cfg.picard_max_iter == 0 {
        return fail(
            &[("tolerance", "picard_max_iter")],
            "must be at least 1".into(),
        );
    }
    if cfg.out.is_empty() {
        return fail(&[("output", "out")], "must not be empty".into());
    }
    Ok(())
}

fn get(cfg: &ExperimentConfig, key: &str) -> String {
    match key {
        "hurst" => cfg.hurst.to_string(),
        "steps" => cfg.steps.to_string(),
        "oversample" => cfg.oversample.to_string(),
        "horizon" => cfg.horizon.to_string(),
        "dim" => cfg.dim.to_string(),
        "seed" => cfg.seed.to_string(),
        "count" => cfg.count.to_string(),
        "alpha" => cfg.alpha.to_string(),
        "x0" => cfg
            .x0
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(", "),
        "drift" => cfg.drift.to_string(),
        "sigma" => cfg.sigma.to_string(),
        "solver" => cfg.solver.as_str().to_string(),
        "radius" => cfg.radius.to_string(),
        "paths" => cfg.paths.to_string(),
        "power" => cfg.power.to_string(),
        "delta" => cfg.delta.to_string(),
        "picard_tol" => cfg.picard_tol.to_string(),
        "picard_max_iter" => cfg.picard_max_iter.to_string(),
        "chen_tol" => cfg.chen_tol.to_string(),
        "derivative_tol" => cfg.derivative_tol.to_string(),
        "out" => cfg.out.clone(),
        _ => unreachable!("every key has an echo"),
    }
}

/// Canonical text of a config; `parse_config(&echo(c)) == c`.
pub fn echo(cfg: &ExperimentConfig) -> String {
    let mut out = format!("scenario = {}\n", cfg.scenario);
    let mut current = "";
    for (sec, key, _) in KEYS {
        if *sec != current {
            out.push_str(&format!("\n[{sec}]\n"));
            current = sec;
        }
        out.push_str(&format!("{key} = {}\n", get(cfg, key)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(
            (
                cfg.hurst,
                cfg.steps,
                cfg.oversample,
                cfg.horizon,
                cfg.dim,
                cfg.seed
            ),
            (0.5, 512, 16, 1.0, 1, 42)
        );
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config("scenario = flow\n[noise]\nhurst = 0.4\nsteps = 256\nalpha=0.35\n[model]\ndrift = holder(1, 0.5)\n").unwrap();
        let text = echo(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(echo(&parse_config(&text).unwrap()), text);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_config("[noise]\n# comment\nhurst = 0.3\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("outside (1/3, 1/2]"));

        let e = parse_config("[noise]\nsteps = many\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.to_string().starts_with("line 2:"));

        let e = parse_config("\n[model]\ncolour = red\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("unknown key"));

        assert_eq!(
            parse_config("[noise]\nseed = 1\nseed = 2")
                .unwrap_err()
                .line,
            3
        );
        assert_eq!(parse_config("[nosie]").unwrap_err().line, 1);
        assert_eq!(parse_config("hurst = 0.4").unwrap_err().line, 1);
        assert!(parse_config("scenario = solv")
            .unwrap_err()
            .message
            .contains("unknown scenario"));
    }

    #[test]
    fn cross_field_constraints() {
        let e = parse_config("[noise]\nhurst = 0.4\n").unwrap_err();
        assert!(
            e.message.contains("alpha") || e.message.contains("oversample"),
            "{e}"
        );
        assert!(parse_config("[noise]\nhurst = 0.4\nsteps = 256\nalpha = 0.35").is_ok());
        let e = parse_config("[noise]\ndim = 2\n[model]\nx0 = 1, 2, 3\n").unwrap_err();
        assert_eq!(e.line, 4);
        assert_eq!(parse_config("[noise]\ndim = 3").unwrap().x0, vec![0.3; 3]);
    }
}
