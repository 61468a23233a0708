//! Level-specific agents: k rounds of n-way sampling at one abstraction
//! level, keeping the best correct generation.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::inference::{extract_code, ChatProvider, InferenceError, Role, Transcript};
use crate::model::{AbstractionLevel, LevelSet, Program};
use crate::testing::{render_feedback, Evaluator, TestCase, TestPlan, TestReport};
use crate::toolchain::Diagnostic;

const LEVEL_PROMPT: &str = include_str!("../prompts/level_agent.v1.txt");

/// Default cap on one round's aggregated feedback, in bytes.
pub const DEFAULT_FEEDBACK_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAgentParams {
    pub level: AbstractionLevel,
    pub n: u32,
    pub k: u32,
}

impl LevelAgentParams {
    pub fn new(level: AbstractionLevel, n: u32, k: u32) -> Result<Self, LevelAgentError> {
        if n < 1 || k < 1 {
            return Err(LevelAgentError::InvalidParams { n, k });
        }
        Ok(Self { level, n, k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub round: u32,
    pub index: u32,
    pub program_text: String,
    pub report: TestReport,
    pub selected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Improved,
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub kind: OutcomeKind,
    pub program: Option<Program>,
    /// t_perf of the returned program, or of the input on NoImprovement.
    pub perf: f64,
    pub feedback: Option<String>,
    pub samples: Vec<SampleRecord>,
    /// Current-best perf after each executed round.
    pub best_history: Vec<f64>,
    pub rounds_executed: u32,
}

#[derive(Debug, Error)]
pub enum LevelAgentError {
    #[error("n and k must be at least 1 (got n={n}, k={k})")]
    InvalidParams { n: u32, k: u32 },
    #[error("level agent for {expected} got a program at {found}")]
    LevelMismatch {
        expected: AbstractionLevel,
        found: AbstractionLevel,
    },
    #[error(transparent)]
    Provider(#[from] InferenceError),
}

/// Everything a level agent needs besides its input.
pub struct AgentEnv<'a> {
    pub provider: &'a dyn ChatProvider,
    pub evaluator: &'a dyn Evaluator,
    pub cases: &'a [TestCase],
    pub levels: &'a LevelSet,
    pub clock: &'a dyn Clock,
    /// Elapsed time at which the run's wall clock expires.
    pub deadline: Option<Duration>,
    pub feedback_limit: usize,
    pub on_sample: Option<&'a (dyn Fn(&SampleRecord) + Sync)>,
}

impl AgentEnv<'_> {
    fn expired(&self) -> bool {
        self.deadline
            .map(|d| self.clock.elapsed() >= d)
            .unwrap_or(false)
    }
}

pub fn build_level_prompt(
    levels: &LevelSet,
    level: &AbstractionLevel,
    program: &Program,
    guidance: &str,
    feedback_history: &[String],
) -> Transcript {
    let description = levels.description(level).unwrap_or(level.name.as_str());
    let system = LEVEL_PROMPT
        .replace("{level_name}", &level.name)
        .replace("{level_description}", description);
    let mut t = Transcript::new(system);
    let guidance = guidance.trim();
    let mut user = String::new();
    if !guidance.is_empty() {
        user.push_str(&format!("Optimization guidance:\n{guidance}\n\n"));
    }
    user.push_str(&format!(
        "Program:\n```\n{}\n```",
        program.text().trim_end()
    ));
    t.push(Role::Agent, user);
    for fb in feedback_history {
        t.push(
            Role::Agent,
            format!("None of the previous attempts was correct. Test feedback:\n{fb}"),
        );
    }
    t
}

/// Joins the feedback of several failed reports, dropping repeated lines.
pub fn aggregate_feedback(reports: &[&TestReport], plan: &TestPlan, limit: usize) -> String {
    let mut seen = std::collections::HashSet::new();
    let mut lines = Vec::new();
    for r in reports {
        for line in render_feedback(r, plan).lines() {
            if seen.insert(line.to_string()) {
                lines.push(line.to_string());
            }
        }
    }
    let mut out = lines.join("\n");
    if out.len() > limit {
        let mut cut = limit;
        while !out.is_char_boundary(cut) {
            cut -= 1;
        }
        out.truncate(cut);
        out.push_str("\n[feedback truncated]");
    }
    out
}

fn failed_report(stage: &str, msg: String) -> TestReport {
    TestReport::build_failure(Diagnostic::new(stage, -1, msg), &[])
}

pub fn run_level_agent(
    input: &Program,
    guidance: &str,
    params: &LevelAgentParams,
    env: &AgentEnv<'_>,
) -> Result<AgentOutcome, LevelAgentError> {
    if params.n < 1 || params.k < 1 {
        return Err(LevelAgentError::InvalidParams {
            n: params.n,
            k: params.k,
        });
    }
    if input.level != params.level {
        return Err(LevelAgentError::LevelMismatch {
            expected: params.level.clone(),
            found: input.level.clone(),
        });
    }
    let input_perf = match input.perf_baseline() {
        Some(p) => p,
        None => {
            let r = env.evaluator.evaluate(input, env.cases);
            if r.is_correct() {
                r.t_perf.unwrap_or(0.0)
            } else {
                0.0
            }
        }
    };

    let plan = env.evaluator.plan();
    let mut current = input.clone();
    let mut best_perf = input_perf;
    let mut improved = false;
    let mut feedback_history: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut best_history = Vec::new();
    let mut rounds_executed = 0;

    for round in 1..=params.k {
        if env.expired() {
            log::info!("wall clock expired before round {round}");
            break;
        }
        rounds_executed = round;
        let transcript =
            build_level_prompt(env.levels, &params.level, &current, guidance, &feedback_history);
        let replies = env.provider.sample_n(&transcript, params.n as usize)?;

        let candidates: Vec<Result<Program, TestReport>> = (0..params.n as usize)
            .map(|i| match replies.get(i) {
                Some(Ok(reply)) => Program::new(params.level.clone(), extract_code(reply))
                    .map(|p| p.with_provenance(params.level.agent_tool_id()))
                    .map_err(|e| failed_report("generation", e.to_string())),
                Some(Err(e)) => Err(failed_report("generation", e.to_string())),
                None => Err(failed_report("generation", "missing sample".into())),
            })
            .collect();

        let reports: Vec<(String, TestReport)> = thread::scope(|s| {
            let handles: Vec<_> = candidates
                .iter()
                .map(|c| {
                    s.spawn(move || match c {
                        Ok(p) => (p.text().to_string(), env.evaluator.evaluate(p, env.cases)),
                        Err(r) => (String::new(), r.clone()),
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        let mut pick: Option<(usize, f64)> = None;
        for (i, (_, r)) in reports.iter().enumerate() {
            if !r.is_correct() {
                continue;
            }
            let Some(perf) = r.t_perf else { continue };
            let beats = pick.map(|(_, p)| perf > p).unwrap_or(true);
            if perf > best_perf && beats {
                pick = Some((i, perf));
            }
        }

        let round_start = samples.len();
        for (i, (text, report)) in reports.iter().enumerate() {
            let rec = SampleRecord {
                round,
                index: i as u32 + 1,
                program_text: text.clone(),
                report: report.clone(),
                selected: pick.map(|(p, _)| p == i).unwrap_or(false),
            };
            if let Some(cb) = env.on_sample {
                cb(&rec);
            }
            samples.push(rec);
        }

        if let Some((i, perf)) = pick {
            let prog = candidates[i].as_ref().expect("selected sample has a program");
            current = prog.clone().with_perf(perf).expect("positive perf");
            best_perf = perf;
            improved = true;
        }
        if !reports.iter().any(|(_, r)| r.is_correct()) {
            let failed: Vec<&TestReport> = samples[round_start..].iter().map(|s| &s.report).collect();
            feedback_history.push(aggregate_feedback(&failed, plan, env.feedback_limit));
        }
        best_history.push(best_perf);
    }

    Ok(if improved {
        AgentOutcome {
            kind: OutcomeKind::Improved,
            program: Some(current),
            perf: best_perf,
            feedback: None,
            samples,
            best_history,
            rounds_executed,
        }
    } else {
        let feedback = feedback_history
            .last()
            .cloned()
            .unwrap_or_else(|| "no generation improved on the input program".to_string());
        AgentOutcome {
            kind: OutcomeKind::NoImprovement,
            program: None,
            perf: input_perf,
            feedback: Some(feedback),
            samples,
            best_history,
            rounds_executed,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::fixtures::SyntheticEvaluator;
    use crate::inference::MockProvider;

    fn fenced(text: &str) -> String {
        format!("```c\n{text}\n```")
    }

    fn src(text: &str) -> Program {
        Program::new(AbstractionLevel::source(), text).unwrap()
    }

    fn run(
        provider: &MockProvider,
        eval: &SyntheticEvaluator,
        n: u32,
        k: u32,
    ) -> AgentOutcome {
        let levels = LevelSet::default();
        let clock = ManualClock::new();
        let env = AgentEnv {
            provider,
            evaluator: eval,
            cases: &[],
            levels: &levels,
            clock: &clock,
            deadline: None,
            feedback_limit: DEFAULT_FEEDBACK_LIMIT,
            on_sample: None,
        };
        let params = LevelAgentParams::new(AbstractionLevel::source(), n, k).unwrap();
        run_level_agent(&src("orig").with_perf(1.0).unwrap(), "go", &params, &env).unwrap()
    }

    #[test]
    fn improves_in_first_round() {
        let p = MockProvider::replies([fenced("fast"), fenced("fast")]);
        let e = SyntheticEvaluator::new().correct("fast", 2.0);
        let o = run(&p, &e, 1, 2);
        assert_eq!(o.kind, OutcomeKind::Improved);
        assert_eq!(o.perf, 2.0);
        assert_eq!(o.samples.len(), 2);
        assert!(o.samples[0].selected && !o.samples[1].selected);
        assert_eq!(o.program.unwrap().text(), "fast\n");
    }

    #[test]
    fn argmax_selection() {
        let p = MockProvider::replies([fenced("a"), fenced("b")]);
        let e = SyntheticEvaluator::new().correct("a", 1.5).correct("b", 1.2);
        let o = run(&p, &e, 2, 1);
        assert_eq!(o.perf, 1.5);
        assert_eq!(o.program.unwrap().text(), "a\n");
    }

    #[test]
    fn all_fail() {
        let p = MockProvider::replies([fenced("x"), fenced("y"), fenced("x"), fenced("y")]);
        let e = SyntheticEvaluator::new().incorrect("x", 3, 5);
        let o = run(&p, &e, 2, 2);
        assert_eq!(o.kind, OutcomeKind::NoImprovement);
        assert!(o.program.is_none());
        let fb = o.feedback.unwrap();
        assert!(fb.contains("failed") && fb.contains("unrecognized program"));
        assert_eq!(o.samples.len(), 4);
    }

    #[test]
    fn feedback_reaches_next_round() {
        let p = MockProvider::new([
            crate::inference::ScriptEntry::reply(fenced("x")),
            crate::inference::ScriptEntry::reply(fenced("x")).expecting("2 of 5 test cases failed"),
        ]);
        let e = SyntheticEvaluator::new().incorrect("x", 3, 5);
        run(&p, &e, 1, 2);
        assert_eq!(p.remaining(), 0);
    }

    #[test]
    fn prompts_differ_only_by_level() {
        let levels = LevelSet::default();
        let prog = src("int main(){}");
        let a = build_level_prompt(&levels, &AbstractionLevel::source(), &prog, "g", &[]);
        let b = build_level_prompt(&levels, &AbstractionLevel::ir(), &prog, "g", &[]);
        assert!(a.messages()[0].content.contains("C source code"));
        let strip = |t: &Transcript, l: &AbstractionLevel| {
            t.messages()[0]
                .content
                .replace(levels.description(l).unwrap(), "<D>")
                .replace(&l.name, "<N>")
        };
        assert_eq!(
            strip(&a, &AbstractionLevel::source()),
            strip(&b, &AbstractionLevel::ir())
        );
        assert_eq!(a.messages()[1], b.messages()[1]);

        let t = build_level_prompt(&levels, &AbstractionLevel::source(), &prog, "g", &["one".into(), "two".into()]);
        let flat = t.flatten();
        assert!(flat.find("one").unwrap() < flat.find("two").unwrap());
    }

    #[test]
    fn aggregate_dedups() {
        let plan = TestPlan::default();
        let d = failed_report("frontend", "boom".into());
        let one = aggregate_feedback(&[&d], &plan, 1000);
        assert_eq!(one, render_feedback(&d, &plan));
        let two = aggregate_feedback(&[&d, &d], &plan, 1000);
        assert_eq!(one, two);
        let cut = aggregate_feedback(&[&d], &plan, 5);
        assert!(cut.ends_with("[feedback truncated]"));
    }

    #[test]
    fn rejects_wrong_level() {
        let levels = LevelSet::default();
        let clock = ManualClock::new();
        let p = MockProvider::replies(Vec::<String>::new());
        let e = SyntheticEvaluator::new();
        let env = AgentEnv {
            provider: &p,
            evaluator: &e,
            cases: &[],
            levels: &levels,
            clock: &clock,
            deadline: None,
            feedback_limit: 100,
            on_sample: None,
        };
        let params = LevelAgentParams::new(AbstractionLevel::ir(), 1, 1).unwrap();
        assert!(matches!(
            run_level_agent(&src("x"), "", &params, &env),
            Err(LevelAgentError::LevelMismatch { .. })
        ));
        assert!(LevelAgentParams::new(AbstractionLevel::ir(), 0, 1).is_err());
    }
}
