use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use roughflow_cli::config::validate;
use roughflow_cli::{echo, parse_config, run, ExperimentConfig, Scenario};

/// Rough differential equations driven by fractional Brownian motion.
#[derive(Parser, Debug)]
#[command(name = "roughflow", version)]
struct Cli {
    /// sample-fbm, lift-checks, solve, transform-check, flow, uniqueness or verify-all
    scenario: String,
    /// Experiment file (`key = value` lines in sections)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (sample-fbm, solve) or directory (everything else)
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; defaults to all cores
    #[arg(long, env = "ROUGHFLOW_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    oversample: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    /// euler or picard
    #[arg(long)]
    solver: Option<String>,
    /// Print the effective config and exit
    #[arg(long)]
    echo: bool,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("roughflow: {msg}");
    ExitCode::from(2)
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, String> {
    let scenario: Scenario = cli.scenario.parse()?;
    let text = match &cli.config {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => String::new(),
    };
    let mut cfg = parse_config(&text).map_err(|e| match &cli.config {
        Some(path) => format!("{}: {e}", path.display()),
        None => e.to_string(),
    })?;
    cfg.scenario = scenario;
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = &cli.out {
        cfg.out = v.clone();
    }
    if let Some(v) = cli.hurst {
        cfg.hurst = v;
    }
    if let Some(v) = cli.steps {
        cfg.steps = v;
    }
    if let Some(v) = cli.oversample {
        cfg.oversample = v;
    }
    if let Some(v) = cli.dim {
        cfg.dim = v;
        if cfg.x0.len() == 1 {
            cfg.x0 = vec![cfg.x0[0]; v];
        }
    }
    if let Some(v) = cli.count {
        cfg.count = v;
    }
    if let Some(v) = &cli.solver {
        cfg.solver = match v.as_str() {
            "euler" => roughflow::rde::SolverKind::Euler,
            "picard" => roughflow::rde::SolverKind::Picard,
            other => return Err(format!("--solver expects euler or picard, got `{other}`")),
        };
    }
    validate(&cfg).map_err(|v| format!("`{}` {}", v.keys[0].1, v.message))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => return usage(msg),
    };
    if cli.echo {
        print!("{}", echo(&cfg));
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return usage(e);
        }
    }
    let report = match run(&cfg) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("roughflow: {e}");
            return ExitCode::from(1);
        }
    };
    for check in &report.checks {
        eprintln!("{}", check.summary_line());
    }
    println!("{}", report.to_json());
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
