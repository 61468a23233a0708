#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use stratopt::fixtures::FixtureProgram;
use stratopt::testing::{materialize_cases, validate_script, TestCase, TestPlan};
use stratopt::toolchain::{Executable, Toolchain, ToolchainConfig};

pub fn toolchain(dir: &Path) -> Arc<Toolchain> {
    Arc::new(Toolchain::new(ToolchainConfig::clang("clang", dir.to_path_buf())))
}

/// Baseline build plus materialized cases from the fixture's own script.
pub fn fixture_cases(
    tc: &Toolchain,
    fx: &FixtureProgram,
    plan: &TestPlan,
    dir: &Path,
) -> Result<(Executable, Vec<TestCase>), String> {
    let baseline = tc
        .baseline_executable(&fx.original())
        .map_err(|d| format!("{}: baseline: {}", fx.id, d.message))?;
    let mut script = fx.script();
    validate_script(&script, plan, &baseline, dir).map_err(|r| format!("{}: {}", fx.id, r.0))?;
    script.validated = true;
    let cases = materialize_cases(&script, plan, &baseline, dir).map_err(|e| format!("{}: {e}", fx.id))?;
    Ok((baseline, cases))
}
