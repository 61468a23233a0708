//! Bundled benchmark programs and synthetic stand-ins for the compiler and
//! testing agent, for deterministic end-to-end tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ManualClock;
use crate::model::{AbstractionLevel, Program};
use crate::testing::{CaseClass, CaseResult, Evaluator, FailingCase, TestCase, TestPlan, TestReport, TestScript};
use crate::toolchain::{Compiler, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedupClass {
    /// Measurably faster than the original at the largest scale input.
    Faster,
    /// Semantically equivalent, no meaningful runtime change.
    Same,
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: &'static str,
    pub level: AbstractionLevel,
    pub text: &'static str,
    /// `None` for incorrect variants.
    pub speedup: Option<SpeedupClass>,
}

impl Variant {
    pub fn program(&self) -> Program {
        Program::new(self.level.clone(), self.text).expect("fixture text is non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct FixtureProgram {
    pub id: &'static str,
    pub description: &'static str,
    pub source: &'static str,
    pub ir: &'static str,
    pub asm: &'static str,
    pub correct: Vec<Variant>,
    pub incorrect: Vec<Variant>,
    pub test_script: &'static str,
}

impl FixtureProgram {
    pub fn original(&self) -> Program {
        Program::new(AbstractionLevel::source(), self.source).expect("fixture text is non-empty")
    }

    /// The original program pre-lowered to `level` (clang 14, -O3).
    pub fn at_level(&self, level: &AbstractionLevel) -> Option<Program> {
        let text = match level.ordinal {
            1 => self.source,
            2 => self.ir,
            3 => self.asm,
            _ => return None,
        };
        Program::new(level.clone(), text).ok()
    }

    pub fn script(&self) -> TestScript {
        TestScript::python(self.test_script, "fixture")
    }

    pub fn correct_at(&self, level: &AbstractionLevel) -> impl Iterator<Item = &Variant> {
        let ord = level.ordinal;
        self.correct.iter().filter(move |v| v.level.ordinal == ord)
    }

    pub fn incorrect_at(&self, level: &AbstractionLevel) -> impl Iterator<Item = &Variant> {
        let ord = level.ordinal;
        self.incorrect.iter().filter(move |v| v.level.ordinal == ord)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown fixture {0:?}")]
pub struct UnknownFixture(pub String);

pub const FIXTURE_IDS: [&str; 5] = ["echo-int", "grid-bfs", "mul7-loop", "quad-sum", "string-reverse"];

macro_rules! fx {
    ($id:literal, $path:expr) => {
        include_str!(concat!("../fixtures/", $id, "/", $path))
    };
}

/// One variant lowered to all three levels.
macro_rules! variants {
    ($id:literal, $kind:literal, $name:literal, $speed:expr) => {
        [
            Variant {
                name: $name,
                level: AbstractionLevel::source(),
                text: fx!($id, concat!($kind, "/", $name, ".c")),
                speedup: $speed,
            },
            Variant {
                name: $name,
                level: AbstractionLevel::ir(),
                text: fx!($id, concat!("ir/", $kind, "/", $name, ".ll")),
                speedup: $speed,
            },
            Variant {
                name: $name,
                level: AbstractionLevel::assembly(),
                text: fx!($id, concat!("asm/", $kind, "/", $name, ".s")),
                speedup: $speed,
            },
        ]
    };
}

macro_rules! base {
    ($id:literal, $desc:literal) => {
        FixtureProgram {
            id: $id,
            description: $desc,
            source: fx!($id, "program.c"),
            ir: fx!($id, "ir/program.ll"),
            asm: fx!($id, "asm/program.s"),
            correct: Vec::new(),
            incorrect: Vec::new(),
            test_script: fx!($id, "gen.py"),
        }
    };
}

pub fn load_fixture(id: &str) -> Result<FixtureProgram, UnknownFixture> {
    use SpeedupClass::*;
    let f = match id {
        "echo-int" => {
            let mut f = base!("echo-int", "digit sums of 1..n in bases 2 to 17");
            f.correct.extend(variants!("echo-int", "correct", "odometer", Some(Faster)));
            f.incorrect.extend(variants!("echo-int", "incorrect", "off_by_one", None));
            f
        }
        "grid-bfs" => {
            let mut f = base!("grid-bfs", "shortest path on a grid with walls");
            f.correct.extend(variants!("grid-bfs", "correct", "flat_alloc", Some(Same)));
            f.incorrect.extend(variants!("grid-bfs", "incorrect", "ignores_walls", None));
            f
        }
        "mul7-loop" => {
            let mut f = base!("mul7-loop", "multiply-accumulate hash loop");
            f.correct.extend(variants!("mul7-loop", "correct", "shift_sub", Some(Same)));
            f.correct.push(Variant {
                name: "shl_sub_handwritten",
                level: AbstractionLevel::ir(),
                text: fx!("mul7-loop", "ir/correct/shl_sub_handwritten.ll"),
                speedup: Some(Same),
            });
            f.correct.push(Variant {
                name: "shl_sub_handwritten",
                level: AbstractionLevel::assembly(),
                text: fx!("mul7-loop", "asm/correct/shl_sub_handwritten.s"),
                speedup: Some(Same),
            });
            f.incorrect.extend(variants!("mul7-loop", "incorrect", "times_eight", None));
            f.incorrect.push(Variant {
                name: "shl_only_handwritten",
                level: AbstractionLevel::ir(),
                text: fx!("mul7-loop", "ir/incorrect/shl_only_handwritten.ll"),
                speedup: None,
            });
            f
        }
        "quad-sum" => {
            let mut f = base!("quad-sum", "sum of pairwise products modulo a prime");
            f.correct.extend(variants!("quad-sum", "correct", "prefix", Some(Faster)));
            f.incorrect.extend(variants!("quad-sum", "incorrect", "no_negative_fix", None));
            f
        }
        "string-reverse" => {
            let mut f = base!("string-reverse", "reverse each input line");
            f.correct.extend(variants!("string-reverse", "correct", "linear", Some(Faster)));
            f.incorrect.extend(variants!("string-reverse", "incorrect", "drops_last", None));
            f
        }
        other => return Err(UnknownFixture(other.to_string())),
    };
    Ok(f)
}

pub fn all_fixtures() -> Vec<FixtureProgram> {
    FIXTURE_IDS
        .iter()
        .map(|id| load_fixture(id).expect("bundled fixture"))
        .collect()
}

const VIA: &str = ";; via ";

/// Removes the markers [`SyntheticCompiler`] prepends, recovering the text
/// the chain started from.
pub fn strip_synthetic_lowering(text: &str) -> &str {
    let mut t = text;
    while let Some(rest) = t.strip_prefix(VIA) {
        t = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
    }
    t
}

/// A compiler that lowers by prepending a marker line. Semantics and
/// performance carry over unchanged.
#[derive(Debug, Default)]
pub struct SyntheticCompiler {
    failing: Vec<String>,
    calls: Mutex<Vec<String>>,
}

impl SyntheticCompiler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every call to `tool_id` fail with a diagnostic.
    pub fn failing(mut self, tool_id: &str) -> Self {
        self.failing.push(tool_id.to_string());
        self
    }

    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

impl Compiler for SyntheticCompiler {
    fn run_component(
        &self,
        tool_id: &str,
        program: &Program,
        passes: Option<&str>,
    ) -> Result<Program, Diagnostic> {
        self.calls.lock().unwrap().push(tool_id.to_string());
        let (from, to) = match tool_id {
            "frontend" => (1, 2),
            "middle_end" => (2, 2),
            "backend" => (2, 3),
            other => {
                return Err(Diagnostic::new(other, -1, format!("unknown compiler component {other}")))
            }
        };
        if program.level.ordinal != from {
            return Err(Diagnostic::new(
                tool_id,
                -1,
                format!("{tool_id} expects level {from}, got {}", program.level),
            ));
        }
        if self.failing.iter().any(|f| f == tool_id) {
            return Err(Diagnostic::new(tool_id, 1, "synthetic failure"));
        }
        let level = match to {
            2 => AbstractionLevel::ir(),
            _ => AbstractionLevel::assembly(),
        };
        let marker = match passes {
            Some(p) => format!("{VIA}{tool_id} {p}\n"),
            None => format!("{VIA}{tool_id}\n"),
        };
        Ok(Program::new(level, format!("{marker}{}", program.text()))
            .expect("non-empty")
            .with_provenance(tool_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Correct { perf: f64 },
    Incorrect { passed: u32, total: u32 },
    BuildFailure(String),
}

/// An evaluator that looks programs up in a table instead of running them.
/// Texts produced by [`SyntheticCompiler`] inherit the outcome of the text
/// they were lowered from.
pub struct SyntheticEvaluator {
    outcomes: HashMap<String, Outcome>,
    plan: TestPlan,
    evaluations: AtomicUsize,
    tick: Option<(Arc<ManualClock>, Duration)>,
}

impl SyntheticEvaluator {
    pub fn new() -> Self {
        Self {
            outcomes: HashMap::new(),
            plan: TestPlan::default(),
            evaluations: AtomicUsize::new(0),
            tick: None,
        }
    }

    pub fn with(mut self, text: &str, outcome: Outcome) -> Self {
        self.outcomes.insert(normalize_key(text), outcome);
        self
    }

    pub fn correct(self, text: &str, perf: f64) -> Self {
        self.with(text, Outcome::Correct { perf })
    }

    pub fn incorrect(self, text: &str, passed: u32, total: u32) -> Self {
        self.with(text, Outcome::Incorrect { passed, total })
    }

    /// Advances `clock` by `by` on every evaluation.
    pub fn ticking(mut self, clock: Arc<ManualClock>, by: Duration) -> Self {
        self.tick = Some((clock, by));
        self
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn outcome_of(&self, text: &str) -> Outcome {
        self.outcomes
            .get(&normalize_key(strip_synthetic_lowering(text)))
            .cloned()
            .unwrap_or_else(|| Outcome::BuildFailure("unrecognized program".into()))
    }
}

impl Default for SyntheticEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

fn normalize_key(text: &str) -> String {
    text.trim().to_string()
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, candidate: &Program, _cases: &[TestCase]) -> TestReport {
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        if let Some((clock, by)) = &self.tick {
            clock.advance(*by);
        }
        match self.outcome_of(candidate.text()) {
            Outcome::Correct { perf } => TestReport {
                t_correct: 1.0,
                t_perf: Some(perf),
                per_input: vec![CaseResult {
                    case_id: "scale-01".into(),
                    class: CaseClass::Scale,
                    passed: true,
                    candidate_runtime: Some(1.0 / perf),
                    runtime_ratio: Some(perf),
                }],
                diagnostics: None,
                failing_cases: Vec::new(),
            },
            Outcome::Incorrect { passed, total } => {
                let per_input: Vec<CaseResult> = (0..total)
                    .map(|k| CaseResult {
                        case_id: TestCase::case_id(CaseClass::Explore, k as usize + 1),
                        class: CaseClass::Explore,
                        passed: k < passed,
                        candidate_runtime: Some(0.0),
                        runtime_ratio: None,
                    })
                    .collect();
                let failing_cases = per_input
                    .iter()
                    .filter(|r| !r.passed)
                    .map(|r| FailingCase {
                        case_id: r.case_id.clone(),
                        reason: "wrong output".into(),
                        input_excerpt: "1".into(),
                        expected_excerpt: "1".into(),
                        actual_excerpt: "2".into(),
                    })
                    .collect();
                TestReport {
                    t_correct: passed as f64 / total.max(1) as f64,
                    t_perf: None,
                    per_input,
                    diagnostics: None,
                    failing_cases,
                }
            }
            Outcome::BuildFailure(msg) => {
                TestReport::build_failure(Diagnostic::new("build", 1, msg), &[])
            }
        }
    }

    fn plan(&self) -> &TestPlan {
        &self.plan
    }
}
