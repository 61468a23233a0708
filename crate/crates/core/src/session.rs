//! End-to-end runs on the real toolchain: baseline build, test generation,
//! orchestration and artifacts under a run directory.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml        effective configuration
//! test_input_gen.py  the validated input generator
//! cases/             <id>.in / <id>.out per test case, plus cases.json
//! trace.jsonl        tool calls, samples and the result summary
//! programs/          every intermediate program
//! builds/            toolchain scratch space
//! result.json        the final result
//! error.json         written instead of result.json on failure
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SystemClock;
use crate::config::{portfolio_shares, Mode, RunConfig};
use crate::guiding_agent::{FinalResult, Orchestrator, TerminatedBy, ToolRegistry};
use crate::inference::{connect, ChatProvider, InferenceError};
use crate::model::{AbstractionLevel, LevelSet, Program};
use crate::testing::{
    generate_test_script, materialize_cases, validate_script, TestCase, TestScript, TestingAgent,
    TestingError,
};
use crate::toolchain::{Diagnostic, Executable, Toolchain};
use crate::trace::JsonlSink;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input program does not compile: {0}")]
    CompileRefused(Diagnostic),
    #[error("test script generation failed: {0}")]
    ScriptGeneration(String),
    #[error("model provider aborted the run: {0}")]
    ProviderAbort(String),
    #[error("run directory {0} exists and is not empty")]
    RunDirCollision(PathBuf),
    #[error("{0}")]
    Fatal(String),
}

impl SessionError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Config(_) => 2,
            SessionError::CompileRefused(_) => 3,
            SessionError::ScriptGeneration(_) => 4,
            SessionError::ProviderAbort(_) => 5,
            SessionError::RunDirCollision(_) => 6,
            SessionError::Fatal(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::Config(_) => "config",
            SessionError::CompileRefused(_) => "compile-refused",
            SessionError::ScriptGeneration(_) => "script-generation-failed",
            SessionError::ProviderAbort(_) => "provider-abort",
            SessionError::RunDirCollision(_) => "run-dir-collision",
            SessionError::Fatal(_) => "fatal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

impl From<&SessionError> for ErrorRecord {
    fn from(e: &SessionError) -> Self {
        Self {
            kind: e.kind().into(),
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn io_fatal(what: &str, e: std::io::Error) -> SessionError {
    SessionError::Fatal(format!("{what}: {e}"))
}

/// Creates `dir`, refusing an existing non-empty one.
pub fn claim_run_dir(dir: &Path) -> Result<(), SessionError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| io_fatal("run dir", e))?;
        if entries.next().is_some() {
            return Err(SessionError::RunDirCollision(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_fatal("run dir", e))
}

pub fn write_error(dir: &Path, e: &SessionError) {
    let rec = ErrorRecord::from(e);
    if let Err(err) = fs::write(
        dir.join("error.json"),
        serde_json::to_string_pretty(&rec).unwrap(),
    ) {
        log::error!("could not write error record: {err}");
    }
}

/// Everything established before the optimization loop starts.
pub struct Prepared {
    pub toolchain: Arc<Toolchain>,
    pub original: Program,
    pub baseline: Executable,
    pub script: TestScript,
    pub cases: Vec<TestCase>,
    pub provider: Box<dyn ChatProvider>,
}

fn map_testing(e: TestingError) -> SessionError {
    match e {
        TestingError::Provider(p) => SessionError::ProviderAbort(p.to_string()),
        TestingError::Io(io) => io_fatal("test cases", io),
        other => SessionError::ScriptGeneration(other.to_string()),
    }
}

fn write_cases(dir: &Path, cases: &[TestCase]) -> std::io::Result<()> {
    let cdir = dir.join("cases");
    fs::create_dir_all(&cdir)?;
    let mut meta = Vec::new();
    for c in cases {
        fs::write(cdir.join(format!("{}.in", c.id)), &c.input)?;
        fs::write(cdir.join(format!("{}.out", c.id)), &c.reference_output)?;
        meta.push(serde_json::json!({
            "id": c.id,
            "class": c.class,
            "size_param": c.size_param,
            "reference_runtime": c.reference_runtime,
        }));
    }
    fs::write(cdir.join("cases.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Builds the baseline, obtains a validated test script and materializes
/// the test cases.
pub fn prepare(program_text: &str, cfg: &RunConfig, dir: &Path) -> Result<Prepared, SessionError> {
    let mut tc_cfg = cfg.toolchain.clone();
    tc_cfg.work_dir = dir.to_path_buf();
    tc_cfg.validate().map_err(SessionError::Config)?;
    let toolchain = Arc::new(Toolchain::new(tc_cfg));
    let original = Program::new(AbstractionLevel::source(), program_text)
        .map_err(|e| SessionError::Config(format!("input program: {e}")))?
        .with_provenance("input");

    let baseline = toolchain
        .baseline_executable(&original)
        .map_err(SessionError::CompileRefused)?;
    toolchain
        .build_executable(&original)
        .map_err(SessionError::CompileRefused)?;

    let provider = connect(&cfg.provider).map_err(|e| match e {
        InferenceError::InvalidConfig(m) => SessionError::Config(m),
        other => SessionError::ProviderAbort(other.to_string()),
    })?;

    let script = match &cfg.test_script {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| SessionError::Config(format!("test script {}: {e}", path.display())))?;
            let mut s = TestScript::python(text, "user");
            validate_script(&s, &cfg.test_plan, &baseline, dir)
                .map_err(|r| SessionError::ScriptGeneration(r.0))?;
            s.validated = true;
            s
        }
        None => generate_test_script(
            &original,
            provider.as_ref(),
            &cfg.provider.model_id,
            &cfg.test_plan,
            &baseline,
            dir,
            cfg.script_attempts,
        )
        .map_err(map_testing)?,
    };
    let cases = materialize_cases(&script, &cfg.test_plan, &baseline, dir).map_err(map_testing)?;
    write_cases(dir, &cases).map_err(|e| io_fatal("test cases", e))?;
    log::info!("{} test cases ready", cases.len());

    Ok(Prepared {
        toolchain,
        original,
        baseline,
        script,
        cases,
        provider,
    })
}

/// One orchestration with the given agents and budget, writing its trace
/// and result into `dir`.
pub fn orchestrate(
    p: &Prepared,
    cfg: &RunConfig,
    agent_levels: &[AbstractionLevel],
    budget: u64,
    dir: &Path,
) -> Result<FinalResult, SessionError> {
    fs::create_dir_all(dir).map_err(|e| io_fatal("run dir", e))?;
    let levels = LevelSet::default();
    let registry = ToolRegistry::with_agents(&levels, agent_levels);
    let evaluator = TestingAgent::new(p.toolchain.clone(), cfg.test_plan.clone());
    let sink = JsonlSink::create(dir).map_err(|e| io_fatal("trace", e))?;
    let clock = SystemClock::start();
    let orch = Orchestrator {
        registry: &registry,
        levels: &levels,
        guide: p.provider.as_ref(),
        agent_provider: p.provider.as_ref(),
        compiler: p.toolchain.as_ref(),
        evaluator: &evaluator,
        cases: &p.cases,
        clock: &clock,
        sink: &sink,
        settings: cfg.settings(budget),
    };
    let result = orch
        .run(&p.original)
        .map_err(|e| SessionError::Fatal(e.to_string()))?;
    fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(&result).unwrap(),
    )
    .map_err(|e| io_fatal("result", e))?;
    Ok(result)
}

fn run_dir_of(cfg: &RunConfig) -> Result<PathBuf, SessionError> {
    cfg.run_dir
        .clone()
        .ok_or_else(|| SessionError::Config("no run directory given (--run-dir)".into()))
}

/// Validates, claims the run dir and records any failure in `error.json`.
fn guarded<T>(
    cfg: &RunConfig,
    body: impl FnOnce(&Path) -> Result<T, SessionError>,
) -> Result<T, SessionError> {
    cfg.validate()
        .map_err(|e| SessionError::Config(e.to_string()))?;
    let dir = run_dir_of(cfg)?;
    claim_run_dir(&dir)?;
    let dir = std::path::absolute(&dir).map_err(|e| io_fatal("run dir", e))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| io_fatal("config", e))?;
    let out = body(&dir);
    if let Err(e) = &out {
        write_error(&dir, e);
    }
    out
}

pub fn optimize(program_text: &str, cfg: &RunConfig) -> Result<FinalResult, SessionError> {
    if cfg.mode == Mode::Portfolio {
        return Err(SessionError::Config(
            "portfolio mode runs through the portfolio command".into(),
        ));
    }
    guarded(cfg, |dir| {
        let prepared = prepare(program_text, cfg, dir)?;
        let result = orchestrate(&prepared, cfg, &cfg.mode.agent_levels(), cfg.budget, dir)?;
        if result.terminated_by == TerminatedBy::ProviderAbort {
            let e = SessionError::ProviderAbort(format!(
                "run finalized early with speedup {:.3}",
                result.speedup
            ));
            write_error(dir, &e);
        }
        Ok(result)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSession {
    pub level: String,
    pub budget: u64,
    pub skipped: bool,
    pub speedup: Option<f64>,
    pub t_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioResult {
    pub sessions: Vec<PortfolioSession>,
    /// Level name of the chosen session, or `baseline`.
    pub selected: String,
    pub speedup: f64,
}

/// Picks the correct session with the largest speedup above 1.0, else the
/// baseline.
pub fn select_portfolio(sessions: &[PortfolioSession]) -> (String, f64) {
    let mut best = ("baseline".to_string(), 1.0);
    for s in sessions {
        if let (Some(sp), Some(tc)) = (s.speedup, s.t_correct) {
            if tc >= 1.0 && sp > best.1 {
                best = (s.level.clone(), sp);
            }
        }
    }
    best
}

/// Splits the budget across the three levels and runs one single-level
/// session per non-zero share, sequentially, sharing the test cases.
pub fn portfolio(program_text: &str, cfg: &RunConfig) -> Result<PortfolioResult, SessionError> {
    guarded(cfg, |dir| {
        let prepared = prepare(program_text, cfg, dir)?;
        let levels: Vec<AbstractionLevel> = LevelSet::default().levels().collect();
        let shares = portfolio_shares(cfg.budget);
        let mut sessions = Vec::new();
        for (level, share) in levels.iter().zip(shares) {
            if share == 0 {
                log::info!("skipping {} session: zero budget share", level.name);
                sessions.push(PortfolioSession {
                    level: level.name.clone(),
                    budget: 0,
                    skipped: true,
                    speedup: None,
                    t_correct: None,
                });
                continue;
            }
            let sub = dir.join(level.name.to_lowercase());
            let r = orchestrate(&prepared, cfg, std::slice::from_ref(level), share, &sub)?;
            sessions.push(PortfolioSession {
                level: level.name.clone(),
                budget: share,
                skipped: false,
                speedup: Some(r.speedup),
                t_correct: Some(r.report.t_correct),
            });
        }
        let (selected, speedup) = select_portfolio(&sessions);
        let result = PortfolioResult {
            sessions,
            selected,
            speedup,
        };
        fs::write(
            dir.join("portfolio.json"),
            serde_json::to_string_pretty(&result).unwrap(),
        )
        .map_err(|e| io_fatal("portfolio", e))?;
        Ok(result)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_collision() {
        let d = tempfile::tempdir().unwrap();
        claim_run_dir(d.path()).unwrap();
        fs::write(d.path().join("x"), "1").unwrap();
        let e = claim_run_dir(d.path()).unwrap_err();
        assert_eq!(e.exit_code(), 6);
        assert!(claim_run_dir(&d.path().join("fresh")).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(SessionError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            SessionError::CompileRefused(Diagnostic::new("baseline", 1, "x")).exit_code(),
            3
        );
        assert_eq!(SessionError::ScriptGeneration("x".into()).exit_code(), 4);
        assert_eq!(SessionError::ProviderAbort("x".into()).exit_code(), 5);
    }

    #[test]
    fn portfolio_selection() {
        let s = |level: &str, sp: f64, tc: f64| PortfolioSession {
            level: level.into(),
            budget: 1,
            skipped: false,
            speedup: Some(sp),
            t_correct: Some(tc),
        };
        assert_eq!(
            select_portfolio(&[s("Source", 0.98, 1.0), s("IR", 1.0, 1.0)]),
            ("baseline".to_string(), 1.0)
        );
        assert_eq!(
            select_portfolio(&[s("Source", 1.2, 1.0), s("IR", 1.5, 0.5), s("Assembly", 1.1, 1.0)]),
            ("Source".to_string(), 1.2)
        );
    }

    #[test]
    fn invalid_config_fails_before_work() {
        let d = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            refine: 0,
            run_dir: Some(d.path().join("run")),
            ..RunConfig::default()
        };
        let e = optimize("int main(){return 0;}", &cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(!d.path().join("run").exists());
    }
}
