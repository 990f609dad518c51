//! Runs every entry of the verification manifest with the default config.
//! Each test writes its verdict line straight to stderr so it shows up in
//! the test log even when output capture is on.

use std::io::Write;

use roughflow_cli::checks::{find, run_check};
use roughflow_cli::ExperimentConfig;

fn verify(name: &str) {
    let check = find(name).expect("check is in the manifest");
    let result = run_check(check, &ExperimentConfig::default());
    let line = format!("acceptance {}\n", result.summary_line());
    std::io::stderr().write_all(line.as_bytes()).ok();
    assert!(result.pass, "{}\n{}", result.summary_line(), result.detail);
}

#[test]
fn acceptance_01_fbm_law() {
    verify("fbm-law");
}

#[test]
fn acceptance_02_chen_relation() {
    verify("chen-relation");
}

#[test]
fn acceptance_03_geometric_defect() {
    verify("geometric-defect");
}

#[test]
fn acceptance_04_ito_strat_correction() {
    verify("ito-strat-correction");
}

#[test]
fn acceptance_05_sewing_bound() {
    verify("sewing-bound");
}

#[test]
fn acceptance_06_integration_by_parts() {
    verify("integration-by-parts");
}

#[test]
fn acceptance_07_rde_oracle() {
    verify("rde-oracle");
}

#[test]
fn acceptance_08_solution_lift() {
    verify("solution-lift");
}

#[test]
fn acceptance_09_rough_ito_formula() {
    verify("rough-ito-formula");
}

#[test]
fn acceptance_10_transform_equivalence() {
    verify("transform-equivalence");
}

#[test]
fn acceptance_11_flow_derivative() {
    verify("flow-derivative");
}

#[test]
fn acceptance_12_moment_scaling() {
    verify("moment-scaling");
}

#[test]
fn acceptance_13_schauder_ball() {
    verify("schauder-ball");
}

#[test]
fn acceptance_14_uniqueness() {
    verify("uniqueness");
}
