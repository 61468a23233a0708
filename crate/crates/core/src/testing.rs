//! The testing agent: a generated, deterministic input script plus a harness
//! that runs candidates against the original program's outputs and reports
//! `(t_correct, t_perf)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{extract_code, ChatProvider, InferenceError, Role, Transcript};
use crate::model::Program;
use crate::process::{self, EnvPolicy};
use crate::toolchain::{Diagnostic, Executable, Toolchain};

/// Timed runs hold this lock so no two measurements overlap.
static TIMING_LOCK: Mutex<()> = Mutex::new(());

const TEST_SCRIPT_PROMPT: &str = include_str!("../prompts/test_script.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseClass {
    Explore,
    Scale,
}

impl CaseClass {
    pub fn tag(self) -> &'static str {
        match self {
            CaseClass::Explore => "explore",
            CaseClass::Scale => "scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestScript {
    pub script_text: String,
    /// Interpreter argv prefix; the script path, class tag and size follow.
    pub interpreter_command: Vec<String>,
    pub generated_by: String,
    pub validated: bool,
}

impl TestScript {
    pub fn python(script_text: impl Into<String>, generated_by: impl Into<String>) -> Self {
        Self {
            script_text: script_text.into(),
            interpreter_command: vec!["python3".into()],
            generated_by: generated_by.into(),
            validated: false,
        }
    }

    /// Writes the script under `dir` so it can be invoked.
    pub fn install(&self, dir: &Path) -> std::io::Result<InstalledScript> {
        fs::create_dir_all(dir)?;
        let path = dir.join("test_input_gen.py");
        fs::write(&path, &self.script_text)?;
        Ok(InstalledScript {
            path,
            interpreter: self.interpreter_command.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct InstalledScript {
    pub path: PathBuf,
    interpreter: Vec<String>,
}

impl InstalledScript {
    /// Runs `script <class> <i>` and returns its standard output.
    pub fn input(&self, class: CaseClass, i: u64, timeout: Duration) -> Result<Vec<u8>, String> {
        let (prog, rest) = self
            .interpreter
            .split_first()
            .ok_or_else(|| "empty interpreter command".to_string())?;
        let mut args: Vec<String> = rest.to_vec();
        args.push(self.path.to_string_lossy().into_owned());
        args.push(class.tag().into());
        args.push(i.to_string());
        let out = process::run(prog, &args, None, None, timeout, &EnvPolicy::default())
            .map_err(|e| format!("could not start script: {e}"))?;
        if out.timed_out {
            return Err(format!("script timed out for {} {i}", class.tag()));
        }
        if !out.success() {
            return Err(format!(
                "script exited with {} for {} {i}: {}",
                out.exit_code(),
                class.tag(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(out.stdout)
    }
}

fn default_repeats() -> u32 {
    3
}
fn default_true() -> bool {
    true
}
fn default_feedback_cases() -> usize {
    3
}
fn default_excerpt() -> usize {
    160
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    /// Number of correctness-exploration inputs (C).
    pub explore_count: u32,
    /// Number of large-scale inputs (L).
    pub scale_count: u32,
    pub size_schedule: Vec<u64>,
    #[serde(default = "default_repeats")]
    pub timing_repeats: u32,
    /// Seconds; `None` means `max(10, 20 * reference_runtime)` per case.
    #[serde(default)]
    pub per_run_timeout: Option<f64>,
    /// Compare outputs after stripping trailing whitespace per line.
    #[serde(default = "default_true")]
    pub normalize_whitespace: bool,
    #[serde(default = "default_feedback_cases")]
    pub max_feedback_cases: usize,
    #[serde(default = "default_excerpt")]
    pub excerpt_bytes: usize,
}

impl Default for TestPlan {
    fn default() -> Self {
        Self {
            explore_count: 10,
            scale_count: 5,
            size_schedule: vec![10, 100, 1_000, 10_000, 100_000],
            timing_repeats: default_repeats(),
            per_run_timeout: None,
            normalize_whitespace: true,
            max_feedback_cases: default_feedback_cases(),
            excerpt_bytes: default_excerpt(),
        }
    }
}

impl TestPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.explore_count < 1 || self.scale_count < 1 {
            return Err("test plan needs at least one explore and one scale input".into());
        }
        if self.size_schedule.len() != self.scale_count as usize {
            return Err(format!(
                "size_schedule has {} entries, expected {}",
                self.size_schedule.len(),
                self.scale_count
            ));
        }
        if self.size_schedule.contains(&0) {
            return Err("size_schedule entries must be positive".into());
        }
        if self.size_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err("size_schedule must be strictly increasing".into());
        }
        if self.size_schedule.len() >= 2 {
            let (lo, hi) = (self.size_schedule[0], *self.size_schedule.last().unwrap());
            if (hi as f64) / (lo as f64) < 1e3 {
                return Err("size_schedule must span at least three orders of magnitude".into());
            }
        }
        if self.timing_repeats < 1 {
            return Err("timing_repeats must be at least 1".into());
        }
        if let Some(t) = self.per_run_timeout {
            if !(t > 0.0) {
                return Err("per_run_timeout must be positive".into());
            }
        }
        Ok(())
    }

    pub fn run_timeout(&self, reference_runtime: f64) -> Duration {
        let secs = self
            .per_run_timeout
            .unwrap_or_else(|| f64::max(10.0, 20.0 * reference_runtime));
        Duration::from_secs_f64(secs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub id: String,
    pub class: CaseClass,
    pub size_param: u64,
    pub input: Vec<u8>,
    pub reference_output: Vec<u8>,
    /// Seconds; the median of the timing repeats for scale cases.
    pub reference_runtime: f64,
}

impl TestCase {
    pub fn case_id(class: CaseClass, ordinal: usize) -> String {
        format!("{}-{:02}", class.tag(), ordinal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub class: CaseClass,
    pub passed: bool,
    pub candidate_runtime: Option<f64>,
    /// reference / candidate, for passing scale cases.
    pub runtime_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailingCase {
    pub case_id: String,
    pub reason: String,
    pub input_excerpt: String,
    pub expected_excerpt: String,
    pub actual_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub t_correct: f64,
    pub t_perf: Option<f64>,
    pub per_input: Vec<CaseResult>,
    pub diagnostics: Option<Diagnostic>,
    pub failing_cases: Vec<FailingCase>,
}

impl TestReport {
    pub fn build_failure(diag: Diagnostic, cases: &[TestCase]) -> Self {
        Self {
            t_correct: 0.0,
            t_perf: None,
            per_input: cases
                .iter()
                .map(|c| CaseResult {
                    case_id: c.id.clone(),
                    class: c.class,
                    passed: false,
                    candidate_runtime: None,
                    runtime_ratio: None,
                })
                .collect(),
            failing_cases: cases
                .iter()
                .map(|c| FailingCase {
                    case_id: c.id.clone(),
                    reason: format!("{} failed", diag.stage),
                    input_excerpt: String::new(),
                    expected_excerpt: String::new(),
                    actual_excerpt: String::new(),
                })
                .collect(),
            diagnostics: Some(diag),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.t_correct >= 1.0
    }
}

/// What happened when a candidate ran on one case.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Exited { stdout: Vec<u8>, exit_code: i32 },
    TimedOut,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub status: RunStatus,
    /// Seconds; median over repeats for scale cases.
    pub runtime: f64,
}

pub fn normalize_output(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().map(|l| l.is_empty()).unwrap_or(false) {
        lines.pop();
    }
    lines.join("\n").into_bytes()
}

pub fn outputs_match(expected: &[u8], actual: &[u8], normalize: bool) -> bool {
    if normalize {
        normalize_output(expected) == normalize_output(actual)
    } else {
        expected == actual
    }
}

fn excerpt(bytes: &[u8], limit: usize) -> String {
    let text = String::from_utf8_lossy(bytes);
    if text.len() <= limit {
        return text.into_owned();
    }
    let mut cut = limit;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &text[..cut])
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Turns per-case observations into a report. `observations[k]` belongs to
/// `cases[k]`.
pub fn score(cases: &[TestCase], observations: &[Observation], plan: &TestPlan) -> TestReport {
    assert_eq!(cases.len(), observations.len(), "one observation per case");
    let mut per_input = Vec::with_capacity(cases.len());
    let mut failing = Vec::new();
    for (case, obs) in cases.iter().zip(observations) {
        let (passed, reason, actual) = match &obs.status {
            RunStatus::Exited { stdout, exit_code } => {
                if *exit_code != 0 {
                    (false, format!("exited with code {exit_code}"), stdout.clone())
                } else if outputs_match(&case.reference_output, stdout, plan.normalize_whitespace) {
                    (true, String::new(), Vec::new())
                } else {
                    (false, "wrong output".to_string(), stdout.clone())
                }
            }
            RunStatus::TimedOut => (false, "timed out".to_string(), Vec::new()),
            RunStatus::Failed(msg) => (false, msg.clone(), Vec::new()),
        };
        let runtime = obs.runtime.max(1e-9);
        per_input.push(CaseResult {
            case_id: case.id.clone(),
            class: case.class,
            passed,
            candidate_runtime: Some(obs.runtime),
            runtime_ratio: (passed && case.class == CaseClass::Scale)
                .then(|| case.reference_runtime / runtime),
        });
        if !passed {
            failing.push(FailingCase {
                case_id: case.id.clone(),
                reason,
                input_excerpt: excerpt(&case.input, plan.excerpt_bytes),
                expected_excerpt: excerpt(&case.reference_output, plan.excerpt_bytes),
                actual_excerpt: excerpt(&actual, plan.excerpt_bytes),
            });
        }
    }
    let total = per_input.len();
    let passed = per_input.iter().filter(|r| r.passed).count();
    let t_correct = if total == 0 {
        0.0
    } else {
        passed as f64 / total as f64
    };
    let t_perf = (total > 0 && passed == total).then(|| {
        let ratios: Vec<f64> = per_input.iter().filter_map(|r| r.runtime_ratio).collect();
        geometric_mean(&ratios)
    });
    TestReport {
        t_correct,
        t_perf,
        per_input,
        diagnostics: None,
        failing_cases: failing,
    }
}

/// Compact feedback for a level agent. Never includes whole test inputs.
pub fn render_feedback(report: &TestReport, plan: &TestPlan) -> String {
    if let Some(d) = &report.diagnostics {
        let msg = excerpt(d.message.as_bytes(), plan.excerpt_bytes * 8);
        return if d.timed_out {
            format!("{}: build timed out\n{}", d.stage, msg)
        } else {
            format!("{}: build failed (exit {})\n{}", d.stage, d.exit_code, msg)
        };
    }
    let total = report.per_input.len();
    if !report.failing_cases.is_empty() {
        let mut out = format!(
            "{} of {} test cases failed:\n",
            report.failing_cases.len(),
            total
        );
        for f in report.failing_cases.iter().take(plan.max_feedback_cases) {
            out.push_str(&format!(
                "- case {}: {}; input: {:?}; expected: {:?}; actual: {:?}\n",
                f.case_id, f.reason, f.input_excerpt, f.expected_excerpt, f.actual_excerpt
            ));
        }
        let hidden = report.failing_cases.len().saturating_sub(plan.max_feedback_cases);
        if hidden > 0 {
            out.push_str(&format!("- ... and {hidden} more failing cases\n"));
        }
        return out.trim_end().to_string();
    }
    match report.t_perf {
        Some(p) => format!("all {total} test cases passed; speedup {p:.2}x over the original"),
        None => format!("all {total} test cases passed"),
    }
}

/// Anything that can score a candidate program against the run's test cases.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, candidate: &Program, cases: &[TestCase]) -> TestReport;

    fn plan(&self) -> &TestPlan;
}

#[derive(Debug, Error)]
pub enum TestingError {
    #[error("test script generation failed after {attempts} attempt(s): {reason}")]
    ScriptGenerationFailed { attempts: u32, reason: String },
    #[error("test script is not validated")]
    ScriptNotValidated,
    #[error("test script failed: {0}")]
    ScriptFailed(String),
    #[error("reference program failed on every generated input: {0}")]
    ReferenceExecutionFailed(String),
    #[error(transparent)]
    Provider(#[from] InferenceError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn run_once(exe: &Path, input: &[u8], timeout: Duration) -> Observation {
    match process::run(
        &exe.to_string_lossy(),
        &[],
        Some(input),
        None,
        timeout,
        &EnvPolicy::default(),
    ) {
        Ok(out) if out.timed_out => Observation {
            status: RunStatus::TimedOut,
            runtime: out.elapsed.as_secs_f64(),
        },
        Ok(out) => Observation {
            runtime: out.elapsed.as_secs_f64(),
            status: RunStatus::Exited {
                exit_code: out.exit_code(),
                stdout: out.stdout,
            },
        },
        Err(e) => Observation {
            status: RunStatus::Failed(format!("could not start: {e}")),
            runtime: 0.0,
        },
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Runs `repeats` timed executions serially under the timing lock, after one
/// untimed warm-up run. Stops at the first failing run.
fn timed_runs(exe: &Path, input: &[u8], repeats: u32, timeout: Duration) -> Observation {
    let _guard = TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let warm = run_once(exe, input, timeout);
    if !matches!(warm.status, RunStatus::Exited { exit_code: 0, .. }) {
        return warm;
    }
    let mut times = Vec::with_capacity(repeats as usize);
    let mut first: Option<RunStatus> = Some(warm.status);
    for _ in 0..repeats {
        let obs = run_once(exe, input, timeout);
        let ok = matches!(obs.status, RunStatus::Exited { exit_code: 0, .. });
        times.push(obs.runtime);
        let status_same = first.as_ref().map(|f| *f == obs.status).unwrap_or(true);
        if !ok || !status_same {
            return obs;
        }
        first.get_or_insert(obs.status);
    }
    Observation {
        status: first.expect("repeats >= 1"),
        runtime: median(times),
    }
}

/// Executes `exe` on every case: explore cases concurrently, scale cases
/// serially with timing.
pub fn observe(exe: &Path, cases: &[TestCase], plan: &TestPlan) -> Vec<Observation> {
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(2);
    let mut out: Vec<Option<Observation>> = vec![None; cases.len()];
    let explore: Vec<usize> = (0..cases.len())
        .filter(|&k| cases[k].class == CaseClass::Explore)
        .collect();
    for chunk in explore.chunks(workers) {
        let results: Vec<(usize, Observation)> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&k| {
                    let case = &cases[k];
                    s.spawn(move || {
                        (
                            k,
                            run_once(exe, &case.input, plan.run_timeout(case.reference_runtime)),
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (k, obs) in results {
            out[k] = Some(obs);
        }
    }
    for (k, case) in cases.iter().enumerate() {
        if case.class == CaseClass::Scale {
            out[k] = Some(timed_runs(
                exe,
                &case.input,
                plan.timing_repeats,
                plan.run_timeout(case.reference_runtime),
            ));
        }
    }
    out.into_iter().map(|o| o.expect("every case observed")).collect()
}

/// The process-backed testing agent.
pub struct TestingAgent {
    toolchain: Arc<Toolchain>,
    plan: TestPlan,
}

impl TestingAgent {
    pub fn new(toolchain: Arc<Toolchain>, plan: TestPlan) -> Self {
        Self { toolchain, plan }
    }

    pub fn toolchain(&self) -> &Toolchain {
        &self.toolchain
    }
}

impl Evaluator for TestingAgent {
    fn evaluate(&self, candidate: &Program, cases: &[TestCase]) -> TestReport {
        evaluate(candidate, cases, &self.toolchain, &self.plan)
    }

    fn plan(&self) -> &TestPlan {
        &self.plan
    }
}

pub fn evaluate(
    candidate: &Program,
    cases: &[TestCase],
    toolchain: &Toolchain,
    plan: &TestPlan,
) -> TestReport {
    match toolchain.build_executable(candidate) {
        Err(diag) => TestReport::build_failure(diag, cases),
        Ok(exe) => {
            let obs = observe(&exe.path, cases, plan);
            score(cases, &obs, plan)
        }
    }
}

fn reference_run(
    reference: &Executable,
    input: &[u8],
    class: CaseClass,
    plan: &TestPlan,
) -> Result<(Vec<u8>, f64), String> {
    let timeout = Duration::from_secs_f64(plan.per_run_timeout.unwrap_or(60.0));
    let obs = match class {
        CaseClass::Explore => run_once(&reference.path, input, timeout),
        CaseClass::Scale => timed_runs(&reference.path, input, plan.timing_repeats, timeout),
    };
    match obs.status {
        RunStatus::Exited {
            stdout,
            exit_code: 0,
        } => Ok((stdout, obs.runtime)),
        RunStatus::Exited { exit_code, .. } => Err(format!("reference exited with {exit_code}")),
        RunStatus::TimedOut => Err("reference timed out".into()),
        RunStatus::Failed(m) => Err(m),
    }
}

/// Generates the plan's inputs and the reference outputs for them.
pub fn materialize_cases(
    script: &TestScript,
    plan: &TestPlan,
    reference: &Executable,
    work_dir: &Path,
) -> Result<Vec<TestCase>, TestingError> {
    if !script.validated {
        return Err(TestingError::ScriptNotValidated);
    }
    let installed = script.install(work_dir)?;
    let script_timeout = Duration::from_secs(60);
    let mut cases = Vec::new();
    let mut last_err = String::new();

    for ordinal in 1..=plan.explore_count as usize {
        let mut made = false;
        // a crashing input is regenerated once from a different explore index
        for i in [ordinal as u64, ordinal as u64 + plan.explore_count as u64] {
            let input = installed
                .input(CaseClass::Explore, i, script_timeout)
                .map_err(TestingError::ScriptFailed)?;
            match reference_run(reference, &input, CaseClass::Explore, plan) {
                Ok((out, rt)) => {
                    cases.push(TestCase {
                        id: TestCase::case_id(CaseClass::Explore, ordinal),
                        class: CaseClass::Explore,
                        size_param: i,
                        input,
                        reference_output: out,
                        reference_runtime: rt,
                    });
                    made = true;
                    break;
                }
                Err(e) => {
                    log::warn!("explore input {i}: {e}");
                    last_err = e;
                }
            }
        }
        if !made {
            log::warn!("dropping explore case {ordinal}");
        }
    }
    for (k, &i) in plan.size_schedule.iter().enumerate() {
        let input = installed
            .input(CaseClass::Scale, i, script_timeout)
            .map_err(TestingError::ScriptFailed)?;
        match reference_run(reference, &input, CaseClass::Scale, plan) {
            Ok((out, rt)) => cases.push(TestCase {
                id: TestCase::case_id(CaseClass::Scale, k + 1),
                class: CaseClass::Scale,
                size_param: i,
                input,
                reference_output: out,
                reference_runtime: rt,
            }),
            Err(e) => {
                log::warn!("dropping scale case i={i}: {e}");
                last_err = e;
            }
        }
    }
    if cases.is_empty() {
        return Err(TestingError::ReferenceExecutionFailed(last_err));
    }
    Ok(cases)
}

/// Why a candidate script was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRejection(pub String);

impl fmt::Display for ScriptRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks that the script runs, is deterministic, produces inputs the
/// reference accepts, and produces scale inputs that do not shrink.
pub fn validate_script(
    script: &TestScript,
    plan: &TestPlan,
    reference: &Executable,
    work_dir: &Path,
) -> Result<(), ScriptRejection> {
    let installed = script
        .install(work_dir)
        .map_err(|e| ScriptRejection(format!("cannot install script: {e}")))?;
    let timeout = Duration::from_secs(60);
    let mut probes: Vec<(CaseClass, u64)> = (1..=plan.explore_count as u64)
        .map(|i| (CaseClass::Explore, i))
        .collect();
    probes.extend(plan.size_schedule.iter().map(|&i| (CaseClass::Scale, i)));
    let mut scale_lengths = Vec::new();
    for (class, i) in probes {
        let a = installed.input(class, i, timeout).map_err(ScriptRejection)?;
        let b = installed.input(class, i, timeout).map_err(ScriptRejection)?;
        if a != b {
            return Err(ScriptRejection(format!(
                "script is not deterministic for {} {i}",
                class.tag()
            )));
        }
        if let Err(e) = reference_run(reference, &a, CaseClass::Explore, plan) {
            return Err(ScriptRejection(format!(
                "program rejects input {} {i}: {e}",
                class.tag()
            )));
        }
        if class == CaseClass::Scale {
            scale_lengths.push((i, a.len()));
        }
    }
    if let Some(w) = scale_lengths.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(ScriptRejection(format!(
            "scale input shrinks from {} bytes at i={} to {} bytes at i={}",
            w[0].1, w[0].0, w[1].1, w[1].0
        )));
    }
    Ok(())
}

pub fn test_script_prompt(original: &Program, plan: &TestPlan) -> Transcript {
    let schedule: Vec<String> = plan.size_schedule.iter().map(u64::to_string).collect();
    let system = TEST_SCRIPT_PROMPT
        .replace("{explore_count}", &plan.explore_count.to_string())
        .replace("{size_schedule}", &schedule.join(", "));
    let mut t = Transcript::new(system);
    t.push(
        Role::Agent,
        format!("Program under test:\n```c\n{}\n```", original.text().trim_end()),
    );
    t
}

/// Asks the model for a test input script, retrying with the rejection reason
/// as feedback up to `attempts` times.
pub fn generate_test_script(
    original: &Program,
    provider: &dyn ChatProvider,
    model_id: &str,
    plan: &TestPlan,
    reference: &Executable,
    work_dir: &Path,
    attempts: u32,
) -> Result<TestScript, TestingError> {
    let mut transcript = test_script_prompt(original, plan);
    let mut reason = String::from("no attempts made");
    for attempt in 1..=attempts {
        let reply = provider.complete(&transcript)?;
        transcript.push(Role::Model, reply.clone());
        let mut script = TestScript::python(extract_code(&reply), model_id);
        match validate_script(&script, plan, reference, work_dir) {
            Ok(()) => {
                script.validated = true;
                return Ok(script);
            }
            Err(rejection) => {
                log::warn!("test script attempt {attempt} rejected: {rejection}");
                reason = rejection.0;
                transcript.push(
                    Role::Agent,
                    format!("The script was rejected: {reason}\nReturn a corrected script."),
                );
            }
        }
    }
    Err(TestingError::ScriptGenerationFailed { attempts, reason })
}
