//! The guiding agent: a budgeted tool-calling loop over compiler components
//! and level agents, followed by finalization to assembly.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::inference::{
    parse_tool_invocation, ChatProvider, ParamSpec, ParamType, Role, ToolInvocation, ToolSchema,
    Transcript,
};
use crate::level_agent::{
    run_level_agent, AgentEnv, LevelAgentError, LevelAgentParams, OutcomeKind, SampleRecord,
    DEFAULT_FEEDBACK_LIMIT,
};
use crate::model::{AbstractionLevel, BudgetLedger, LevelSet, PipelineDefinition, Program, ToolDescriptor, ToolKind};
use crate::testing::{render_feedback, Evaluator, TestCase, TestReport};
use crate::toolchain::Compiler;
use crate::trace::{ResultSummary, SampleEvent, ToolCallRecord, TraceEvent, TraceSink};

const GUIDE_PROMPT: &str = include_str!("../prompts/guiding_agent.v1.txt");

pub const FINISH_TOOL: &str = "finish";

#[derive(Debug, Clone)]
pub struct ToolRegistry {
    pub pipeline: PipelineDefinition,
    pub agents: Vec<ToolDescriptor>,
    pub schemas: Vec<ToolSchema>,
}

impl ToolRegistry {
    /// All compiler components plus one level agent per level.
    pub fn full(levels: &LevelSet) -> Self {
        let all: Vec<AbstractionLevel> = levels.levels().collect();
        Self::with_agents(levels, &all)
    }

    /// All compiler components plus level agents for `agent_levels` only.
    pub fn with_agents(levels: &LevelSet, agent_levels: &[AbstractionLevel]) -> Self {
        let pipeline = PipelineDefinition::default_compiler();
        let agents: Vec<ToolDescriptor> = agent_levels
            .iter()
            .map(|l| ToolDescriptor::level_agent(l.clone()))
            .collect();
        let mut schemas = Vec::new();
        for t in &pipeline.tools {
            let mut parameters = Vec::new();
            if t.id == "middle_end" {
                parameters.push(ParamSpec {
                    name: "passes".into(),
                    ty: ParamType::String,
                    required: false,
                    description: "optimization flags such as \"-O2\" or \"-O3 -fno-unroll-loops\"; default -O3".into(),
                });
            }
            schemas.push(ToolSchema {
                name: t.id.clone(),
                description: format!(
                    "Compiler component. Takes the best {} program and produces a {} program. Free.",
                    t.domain.name, t.range.name
                ),
                parameters,
            });
        }
        for a in &agents {
            let desc = levels.description(&a.domain).unwrap_or(&a.domain.name);
            schemas.push(ToolSchema {
                name: a.id.clone(),
                description: format!(
                    "Level agent. Rewrites the best {} program ({desc}) for speed. Costs 1 budget unit.",
                    a.domain.name
                ),
                parameters: vec![ParamSpec {
                    name: "guidance".into(),
                    ty: ParamType::String,
                    required: true,
                    description: "optimizations the agent should attempt".into(),
                }],
            });
        }
        schemas.push(ToolSchema {
            name: FINISH_TOOL.into(),
            description: "Stop optimizing and return the best program.".into(),
            parameters: vec![],
        });
        Self {
            pipeline,
            agents,
            schemas,
        }
    }

    pub fn descriptor(&self, id: &str) -> Option<&ToolDescriptor> {
        self.pipeline
            .tool(id)
            .or_else(|| self.agents.iter().find(|a| a.id == id))
    }

    pub fn agent_ids(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub budget: u64,
    pub n: u32,
    pub k: u32,
    pub wall_clock: Duration,
    /// Consecutive zero-cost calls allowed before a call is refused.
    pub compiler_call_cap: u32,
    /// Undispatchable replies tolerated before the run ends.
    pub malformed_cap: u32,
    pub feedback_limit: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            budget: 18,
            n: 2,
            k: 2,
            wall_clock: Duration::from_secs(3600),
            compiler_call_cap: 20,
            malformed_cap: 5,
            feedback_limit: DEFAULT_FEEDBACK_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminatedBy {
    BudgetExhausted,
    WallClock,
    AgentStop,
    ProviderAbort,
    MalformedCallCap,
}

impl TerminatedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminatedBy::BudgetExhausted => "BudgetExhausted",
            TerminatedBy::WallClock => "WallClock",
            TerminatedBy::AgentStop => "AgentStop",
            TerminatedBy::ProviderAbort => "ProviderAbort",
            TerminatedBy::MalformedCallCap => "MalformedCallCap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBest {
    pub program: Program,
    pub perf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub program: Program,
    /// t_perf of the final artifact against the baseline build.
    pub speedup: f64,
    pub report: TestReport,
    /// Level of the program that was lowered to produce the result.
    pub final_from_level: AbstractionLevel,
    pub trace: Vec<ToolCallRecord>,
    pub ledger: BudgetLedger,
    pub terminated_by: TerminatedBy,
    pub best_perf: BTreeMap<String, f64>,
}

impl FinalResult {
    pub fn summary(&self) -> ResultSummary {
        ResultSummary {
            speedup: self.speedup,
            t_correct: self.report.t_correct,
            terminated_by: self.terminated_by.as_str().into(),
            budget_total: self.ledger.total(),
            budget_spent: self.ledger.spent(),
            final_from_level: self.final_from_level.name.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("input program must be at level {expected}, got {found}")]
    NotSourceLevel { expected: String, found: String },
    #[error("no program could be lowered to assembly: {0}")]
    FatalEnvironment(String),
}

/// The run's mutable state.
#[derive(Debug, Clone)]
pub struct OrchestratorState {
    pub transcript: Transcript,
    pub ledger: BudgetLedger,
    pub best: BTreeMap<u32, LevelBest>,
    pub current: BTreeMap<u32, Program>,
    pub trace: Vec<ToolCallRecord>,
    pub malformed: u32,
    pub consecutive_compiler: u32,
}

impl OrchestratorState {
    pub fn new(original: &Program, budget: u64, system: String) -> Self {
        let mut best = BTreeMap::new();
        let mut current = BTreeMap::new();
        best.insert(
            original.level.ordinal,
            LevelBest {
                program: original.clone(),
                perf: 1.0,
            },
        );
        current.insert(original.level.ordinal, original.clone());
        Self {
            transcript: Transcript::new(system),
            ledger: BudgetLedger::new(budget),
            best,
            current,
            trace: Vec::new(),
            malformed: 0,
            consecutive_compiler: 0,
        }
    }

    /// Best program at a level, falling back to the most recent one.
    fn input_at(&self, level: &AbstractionLevel) -> Option<(Program, Option<f64>)> {
        if let Some(b) = self.best.get(&level.ordinal) {
            return Some((b.program.clone(), Some(b.perf)));
        }
        self.current.get(&level.ordinal).map(|p| (p.clone(), None))
    }

    fn offer(&mut self, program: &Program, perf: f64) -> bool {
        let ord = program.level.ordinal;
        let better = self.best.get(&ord).map(|b| perf > b.perf).unwrap_or(true);
        if better {
            self.best.insert(
                ord,
                LevelBest {
                    program: program.clone(),
                    perf,
                },
            );
        }
        better
    }
}

pub fn render_budget(ledger: &BudgetLedger) -> String {
    if ledger.is_exhausted() {
        format!(
            "Budget: {} of {} level-agent calls remaining (exhausted).",
            ledger.remaining(),
            ledger.total()
        )
    } else {
        format!(
            "Budget: {} of {} level-agent calls remaining.",
            ledger.remaining(),
            ledger.total()
        )
    }
}

fn render_state(state: &OrchestratorState, levels: &LevelSet) -> String {
    let mut parts = Vec::new();
    for l in levels.levels() {
        match (state.best.get(&l.ordinal), state.current.get(&l.ordinal)) {
            (Some(b), _) => parts.push(format!("{} best {:.3}x", l.name, b.perf)),
            (None, Some(_)) => parts.push(format!("{} present (no correct measurement)", l.name)),
            (None, None) => parts.push(format!("{} none", l.name)),
        }
    }
    format!("Programs: {}.", parts.join("; "))
}

fn excerpt(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut cut = limit;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &text[..cut])
}

/// Everything the loop talks to.
pub struct Orchestrator<'a> {
    pub registry: &'a ToolRegistry,
    pub levels: &'a LevelSet,
    pub guide: &'a dyn ChatProvider,
    pub agent_provider: &'a dyn ChatProvider,
    pub compiler: &'a dyn Compiler,
    pub evaluator: &'a dyn Evaluator,
    pub cases: &'a [TestCase],
    pub clock: &'a dyn Clock,
    pub sink: &'a dyn TraceSink,
    pub settings: RunSettings,
}

enum Step {
    Continue,
    Stop(TerminatedBy),
}

impl<'a> Orchestrator<'a> {
    pub fn system_prompt(&self) -> String {
        let levels: Vec<String> = self
            .levels
            .levels()
            .map(|l| {
                format!(
                    "{}. {}: {}",
                    l.ordinal,
                    l.name,
                    self.levels.description(&l).unwrap_or("")
                )
            })
            .collect();
        let tools: Vec<String> = self
            .registry
            .schemas
            .iter()
            .map(|s| {
                let params: Vec<String> = s
                    .parameters
                    .iter()
                    .map(|p| {
                        format!(
                            "{}{}: {}",
                            p.name,
                            if p.required { "" } else { "?" },
                            p.ty.json_name()
                        )
                    })
                    .collect();
                format!("- {}({}): {}", s.name, params.join(", "), s.description)
            })
            .collect();
        GUIDE_PROMPT
            .replace("{levels}", &levels.join("\n"))
            .replace("{budget}", &self.settings.budget.to_string())
            .replace("{tools}", &tools.join("\n"))
    }

    fn expired(&self) -> bool {
        self.clock.elapsed() >= self.settings.wall_clock
    }

    pub fn run(&self, original: &Program) -> Result<FinalResult, OrchestratorError> {
        let top = self.levels.first();
        if original.level.ordinal != top.ordinal {
            return Err(OrchestratorError::NotSourceLevel {
                expected: top.name,
                found: original.level.name.clone(),
            });
        }
        let mut state = OrchestratorState::new(original, self.settings.budget, self.system_prompt());
        self.sink.program("original", original);
        state.transcript.push(
            Role::Agent,
            format!(
                "Optimize this {} program.\n```\n{}\n```\n{}\n{}",
                original.level.name,
                original.text().trim_end(),
                render_state(&state, self.levels),
                render_budget(&state.ledger)
            ),
        );

        let terminated_by = loop {
            match self.step(&mut state) {
                Step::Continue => {}
                Step::Stop(t) => break t,
            }
        };
        log::info!("loop ended: {}", terminated_by.as_str());
        self.finalize(state, terminated_by)
    }

    fn step(&self, state: &mut OrchestratorState) -> Step {
        if self.expired() {
            return Step::Stop(TerminatedBy::WallClock);
        }
        let reply = match self
            .guide
            .complete_with_tools(&state.transcript, &self.registry.schemas)
        {
            Ok(r) => r,
            Err(e) => {
                log::warn!("guiding model unavailable: {e}");
                return Step::Stop(TerminatedBy::ProviderAbort);
            }
        };
        state.transcript.push(Role::Model, reply.clone());

        let inv = match parse_tool_invocation(&reply, &self.registry.schemas) {
            Ok(inv) => inv,
            Err(m) => {
                return self.refuse(
                    state,
                    format!("{m}"),
                    format!(
                        "Your reply was not a valid tool call ({m}). Reply with exactly one JSON object {{\"tool\": ..., \"arguments\": {{...}}}}."
                    ),
                )
            }
        };
        if inv.tool_name == FINISH_TOOL {
            return Step::Stop(if state.ledger.is_exhausted() {
                TerminatedBy::BudgetExhausted
            } else {
                TerminatedBy::AgentStop
            });
        }
        let desc = self
            .registry
            .descriptor(&inv.tool_name)
            .expect("parser only accepts registered tools")
            .clone();

        match desc.kind {
            ToolKind::LevelAgent => {
                if state.ledger.charge(&desc).is_err() {
                    return Step::Stop(TerminatedBy::BudgetExhausted);
                }
            }
            ToolKind::CompilerComponent => {
                if state.consecutive_compiler >= self.settings.compiler_call_cap {
                    return self.refuse(
                        state,
                        format!("compiler call cap reached ({})", inv.tool_name),
                        format!(
                            "Refused: {} consecutive compiler calls. Call a level agent or finish.",
                            self.settings.compiler_call_cap
                        ),
                    );
                }
            }
        }

        let Some((input, input_perf)) = state.input_at(&desc.domain) else {
            return self.refuse(
                state,
                format!("{}: no program at {}", desc.id, desc.domain.name),
                format!(
                    "LevelMismatch: {} needs a {} program and none exists yet. Lower a program to {} first.",
                    desc.id, desc.domain.name, desc.domain.name
                ),
            );
        };

        let seq = state.trace.len() as u64 + 1;
        let started = self.clock.elapsed();
        let (mut record, feedback, abort) = match desc.kind {
            ToolKind::CompilerComponent => {
                state.consecutive_compiler += 1;
                let (r, f) = self.dispatch_compiler(state, &desc, &inv, input, input_perf, seq);
                (r, f, false)
            }
            ToolKind::LevelAgent => {
                state.consecutive_compiler = 0;
                state.ledger = state.ledger.charge(&desc).expect("checked above");
                self.dispatch_agent(state, &desc, &inv, input, input_perf, seq)
            }
        };
        record.duration_secs = (self.clock.elapsed().saturating_sub(started)).as_secs_f64();
        self.sink.event(&TraceEvent::ToolCall(record.clone()));
        state.trace.push(record);

        let mut msg = format!(
            "{feedback}\n{}\n{}",
            render_state(state, self.levels),
            render_budget(&state.ledger)
        );
        if state.ledger.is_exhausted() {
            msg.push_str(
                "\nNo level-agent calls remain. You may still lower programs with compiler components, then call finish.",
            );
        }
        state.transcript.push(Role::Tool, msg);
        if abort {
            Step::Stop(TerminatedBy::ProviderAbort)
        } else {
            Step::Continue
        }
    }

    fn refuse(&self, state: &mut OrchestratorState, reason: String, message: String) -> Step {
        state.malformed += 1;
        log::warn!("undispatched call: {reason}");
        self.sink.event(&TraceEvent::Malformed { reason });
        state.transcript.push(Role::Tool, message);
        if state.malformed >= self.settings.malformed_cap {
            Step::Stop(TerminatedBy::MalformedCallCap)
        } else {
            Step::Continue
        }
    }

    fn dispatch_compiler(
        &self,
        state: &mut OrchestratorState,
        desc: &ToolDescriptor,
        inv: &ToolInvocation,
        input: Program,
        input_perf: Option<f64>,
        seq: u64,
    ) -> (ToolCallRecord, String) {
        let passes = inv.str_arg("passes").map(str::to_string);
        let mut record = ToolCallRecord {
            seq,
            tool_id: desc.id.clone(),
            kind: desc.kind,
            level: desc.range.name.clone(),
            guidance: None,
            passes: passes.clone(),
            cost_charged: 0,
            success: false,
            improved: false,
            input_perf,
            perf: None,
            feedback_excerpt: String::new(),
            duration_secs: 0.0,
        };
        let feedback = match self.compiler.run_component(&desc.id, &input, passes.as_deref()) {
            Err(diag) => format!("{} failed.\n{diag}", desc.id),
            Ok(out) => {
                self.sink.program(&format!("{seq:03}-{}", desc.id), &out);
                let report = self.evaluator.evaluate(&out, self.cases);
                state.current.insert(out.level.ordinal, out.clone());
                record.success = true;
                if report.is_correct() {
                    let perf = report.t_perf.unwrap_or(0.0);
                    record.perf = Some(perf);
                    if perf > 0.0 {
                        state.offer(&out, perf);
                    }
                }
                format!(
                    "{} produced a {} program. {}",
                    desc.id,
                    desc.range.name,
                    render_feedback(&report, self.evaluator.plan())
                )
            }
        };
        record.feedback_excerpt = excerpt(&feedback, 400);
        (record, feedback)
    }

    fn dispatch_agent(
        &self,
        state: &mut OrchestratorState,
        desc: &ToolDescriptor,
        inv: &ToolInvocation,
        input: Program,
        input_perf: Option<f64>,
        seq: u64,
    ) -> (ToolCallRecord, String, bool) {
        let guidance = inv.str_arg("guidance").unwrap_or("").to_string();
        let mut record = ToolCallRecord {
            seq,
            tool_id: desc.id.clone(),
            kind: desc.kind,
            level: desc.domain.name.clone(),
            guidance: Some(guidance.clone()),
            passes: None,
            cost_charged: desc.cost,
            success: false,
            improved: false,
            input_perf,
            perf: None,
            feedback_excerpt: String::new(),
            duration_secs: 0.0,
        };
        let input = match input_perf {
            Some(p) if p > 0.0 => input.with_perf(p).expect("positive perf"),
            _ => input,
        };
        let sink = self.sink;
        let tool_id = desc.id.clone();
        let on_sample = move |s: &SampleRecord| {
            sink.event(&TraceEvent::Sample(SampleEvent {
                seq,
                tool_id: tool_id.clone(),
                sample: s.clone(),
            }))
        };
        let env = AgentEnv {
            provider: self.agent_provider,
            evaluator: self.evaluator,
            cases: self.cases,
            levels: self.levels,
            clock: self.clock,
            deadline: Some(self.settings.wall_clock),
            feedback_limit: self.settings.feedback_limit,
            on_sample: Some(&on_sample),
        };
        let params = LevelAgentParams {
            level: desc.domain.clone(),
            n: self.settings.n,
            k: self.settings.k,
        };
        let (feedback, abort) = match run_level_agent(&input, &guidance, &params, &env) {
            Ok(outcome) => {
                record.success = true;
                record.perf = Some(outcome.perf);
                match (outcome.kind, outcome.program) {
                    (OutcomeKind::Improved, Some(p)) => {
                        record.improved = true;
                        self.sink.program(&format!("{seq:03}-{}", desc.id), &p);
                        state.current.insert(p.level.ordinal, p.clone());
                        state.offer(&p, outcome.perf);
                        (
                            format!(
                                "{} improved the {} program: speedup {:.3}x (was {}).",
                                desc.id,
                                desc.domain.name,
                                outcome.perf,
                                input_perf
                                    .map(|v| format!("{v:.3}x"))
                                    .unwrap_or_else(|| "unmeasured".into())
                            ),
                            false,
                        )
                    }
                    _ => (
                        format!(
                            "{} found no improvement on the {} program.\n{}",
                            desc.id,
                            desc.domain.name,
                            outcome.feedback.unwrap_or_default()
                        ),
                        false,
                    ),
                }
            }
            Err(LevelAgentError::Provider(e)) => {
                (format!("{} aborted: model provider unavailable ({e}).", desc.id), true)
            }
            Err(e) => (format!("{} failed: {e}", desc.id), false),
        };
        record.feedback_excerpt = excerpt(&feedback, 400);
        (record, feedback, abort)
    }

    /// Picks the best-performing program across levels and lowers it to the
    /// bottom level, falling back to lesser candidates if lowering fails.
    pub fn finalize(
        &self,
        state: OrchestratorState,
        terminated_by: TerminatedBy,
    ) -> Result<FinalResult, OrchestratorError> {
        let bottom = self.levels.last();
        let mut candidates: Vec<LevelBest> = state.best.values().cloned().collect();
        // highest perf first; on ties the level nearest the bottom needs less lowering
        candidates.sort_by(|a, b| {
            b.perf
                .partial_cmp(&a.perf)
                .unwrap()
                .then(b.program.level.ordinal.cmp(&a.program.level.ordinal))
        });
        let mut last_err = String::from("no candidate programs");
        let mut fallback: Option<(Program, TestReport, AbstractionLevel)> = None;
        for cand in candidates {
            let lowered = match self.lower(&cand.program, &bottom) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("could not lower {} program: {e}", cand.program.level);
                    last_err = e;
                    continue;
                }
            };
            let report = self.evaluator.evaluate(&lowered, self.cases);
            if report.is_correct() {
                return Ok(self.result(state, lowered, report, cand.program.level.clone(), terminated_by));
            }
            last_err = format!("final program from {} failed tests", cand.program.level);
            if fallback.is_none() {
                fallback = Some((lowered, report, cand.program.level.clone()));
            }
        }
        match fallback {
            Some((p, r, l)) => Ok(self.result(state, p, r, l, terminated_by)),
            None => Err(OrchestratorError::FatalEnvironment(last_err)),
        }
    }

    fn lower(&self, program: &Program, bottom: &AbstractionLevel) -> Result<Program, String> {
        if program.level.ordinal == bottom.ordinal {
            return Ok(program.clone());
        }
        let path = self
            .registry
            .pipeline
            .lowering_path(&program.level)
            .ok_or_else(|| format!("no lowering path from {}", program.level))?;
        let mut p = program.clone();
        for tool in path {
            p = self
                .compiler
                .run_component(&tool.id, &p, None)
                .map_err(|d| d.to_string())?;
        }
        if p.level.ordinal != bottom.ordinal {
            return Err(format!("lowering ended at {}", p.level));
        }
        Ok(p)
    }

    fn result(
        &self,
        state: OrchestratorState,
        program: Program,
        report: TestReport,
        from: AbstractionLevel,
        terminated_by: TerminatedBy,
    ) -> FinalResult {
        self.sink.program("final", &program);
        let best_perf = state
            .best
            .values()
            .map(|b| (b.program.level.name.clone(), b.perf))
            .collect();
        let r = FinalResult {
            program,
            speedup: report.t_perf.unwrap_or(0.0),
            report,
            final_from_level: from,
            trace: state.trace,
            ledger: state.ledger,
            terminated_by,
            best_perf,
        };
        self.sink.event(&TraceEvent::Result(r.summary()));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::fixtures::{SyntheticCompiler, SyntheticEvaluator};
    use crate::inference::MockProvider;
    use crate::trace::MemorySink;

    fn call(tool: &str) -> String {
        ToolInvocation::new(tool).render()
    }

    fn agent(tool: &str, guidance: &str) -> String {
        ToolInvocation::new(tool).arg("guidance", guidance).render()
    }

    struct Rig {
        levels: LevelSet,
        registry: ToolRegistry,
        compiler: SyntheticCompiler,
        clock: ManualClock,
        sink: MemorySink,
    }

    impl Rig {
        fn new() -> Self {
            let levels = LevelSet::default();
            Self {
                registry: ToolRegistry::full(&levels),
                levels,
                compiler: SyntheticCompiler::new(),
                clock: ManualClock::new(),
                sink: MemorySink::new(),
            }
        }

        fn run(
            &self,
            guide: &MockProvider,
            agents: &MockProvider,
            eval: &SyntheticEvaluator,
            budget: u64,
        ) -> FinalResult {
            let o = Orchestrator {
                registry: &self.registry,
                levels: &self.levels,
                guide,
                agent_provider: agents,
                compiler: &self.compiler,
                evaluator: eval,
                cases: &[],
                clock: &self.clock,
                sink: &self.sink,
                settings: RunSettings {
                    budget,
                    n: 1,
                    k: 1,
                    ..RunSettings::default()
                },
            };
            o.run(&Program::new(AbstractionLevel::source(), "orig").unwrap())
                .unwrap()
        }
    }

    #[test]
    fn scripted_b1_scenario() {
        let rig = Rig::new();
        let guide = MockProvider::replies([
            call("frontend"),
            agent("ir_agent", "strength-reduce the multiply"),
            call("backend"),
            call("finish"),
        ]);
        let agents = MockProvider::replies(["```llvm\nfast ir\n```"]);
        let eval = SyntheticEvaluator::new().correct("orig", 1.0).correct("fast ir", 1.3);
        let r = rig.run(&guide, &agents, &eval, 1);
        assert_eq!(r.ledger.spent(), 1);
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.program.level, AbstractionLevel::assembly());
        assert!((r.speedup - 1.3).abs() < 1e-12);
        assert_eq!(r.final_from_level, AbstractionLevel::assembly());
        assert_eq!(r.terminated_by, TerminatedBy::BudgetExhausted);
        assert!(r.trace[1].feedback_excerpt.contains("1.300"));
    }

    #[test]
    fn zero_budget_lowers_original() {
        let rig = Rig::new();
        let guide = MockProvider::replies([agent("source_agent", "x")]);
        let agents = MockProvider::replies(Vec::<String>::new());
        let eval = SyntheticEvaluator::new().correct("orig", 1.0);
        let r = rig.run(&guide, &agents, &eval, 0);
        assert_eq!(r.ledger.spent(), 0);
        assert!(r.trace.is_empty());
        assert_eq!(r.speedup, 1.0);
        assert_eq!(r.terminated_by, TerminatedBy::BudgetExhausted);
        assert_eq!(rig.compiler.calls(), ["frontend", "middle_end", "backend"]);
    }

    #[test]
    fn malformed_replies_hit_cap() {
        let rig = Rig::new();
        let guide = MockProvider::replies(["hello", "what", "{}", "nope", "bad", "unused"]);
        let agents = MockProvider::replies(Vec::<String>::new());
        let eval = SyntheticEvaluator::new().correct("orig", 1.0);
        let r = rig.run(&guide, &agents, &eval, 3);
        assert_eq!(r.ledger.spent(), 0);
        assert_eq!(r.terminated_by, TerminatedBy::MalformedCallCap);
        assert_eq!(guide.remaining(), 1);
    }

    #[test]
    fn level_mismatch_is_not_charged() {
        let rig = Rig::new();
        let guide = MockProvider::replies([agent("ir_agent", "x"), call("finish")]);
        let agents = MockProvider::replies(Vec::<String>::new());
        let eval = SyntheticEvaluator::new().correct("orig", 1.0);
        let r = rig.run(&guide, &agents, &eval, 2);
        assert_eq!(r.ledger.spent(), 0);
        assert!(r.trace.is_empty());
        assert_eq!(r.terminated_by, TerminatedBy::AgentStop);
        assert!(rig
            .sink
            .events()
            .iter()
            .any(|e| matches!(e, TraceEvent::Malformed { reason } if reason.contains("ir_agent"))));
    }

    #[test]
    fn source_improvement_updates_best() {
        let rig = Rig::new();
        let guide = MockProvider::replies([agent("source_agent", "x"), call("finish")]);
        let agents = MockProvider::replies(["```c\nbetter\n```"]);
        let eval = SyntheticEvaluator::new().correct("orig", 1.0).correct("better", 1.4);
        let r = rig.run(&guide, &agents, &eval, 5);
        assert!(r.trace[0].feedback_excerpt.contains("1.4"));
        assert_eq!(r.best_perf["Source"], 1.4);
        assert_eq!(r.final_from_level, AbstractionLevel::source());
        assert!((r.speedup - 1.4).abs() < 1e-12);
        assert_eq!(r.terminated_by, TerminatedBy::AgentStop);
    }

    #[test]
    fn finalize_prefers_better_ir() {
        let rig = Rig::new();
        let guide = MockProvider::replies([
            agent("source_agent", "x"),
            call("frontend"),
            agent("ir_agent", "y"),
            call("finish"),
        ]);
        let agents = MockProvider::replies(["```c\ns11\n```", "```\nir13\n```"]);
        let eval = SyntheticEvaluator::new()
            .correct("orig", 1.0)
            .correct("s11", 1.1)
            .correct("ir13", 1.3);
        let r = rig.run(&guide, &agents, &eval, 5);
        assert_eq!(r.final_from_level, AbstractionLevel::ir());
        assert!((r.speedup - 1.3).abs() < 1e-12);
    }

    #[test]
    fn compiler_cap_refuses() {
        let mut rig = Rig::new();
        rig.registry = ToolRegistry::full(&rig.levels);
        let mut replies: Vec<String> = (0..3).map(|_| call("frontend")).collect();
        replies.push(call("frontend"));
        let guide = MockProvider::replies(replies);
        let agents = MockProvider::replies(Vec::<String>::new());
        let eval = SyntheticEvaluator::new().correct("orig", 1.0);
        let o = Orchestrator {
            registry: &rig.registry,
            levels: &rig.levels,
            guide: &guide,
            agent_provider: &agents,
            compiler: &rig.compiler,
            evaluator: &eval,
            cases: &[],
            clock: &rig.clock,
            sink: &rig.sink,
            settings: RunSettings {
                budget: 1,
                compiler_call_cap: 3,
                ..RunSettings::default()
            },
        };
        let r = o.run(&Program::new(AbstractionLevel::source(), "orig").unwrap()).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.terminated_by, TerminatedBy::ProviderAbort);
    }

    #[test]
    fn budget_render() {
        let mut l = BudgetLedger::new(18);
        let a = ToolDescriptor::level_agent(AbstractionLevel::source());
        for _ in 0..5 {
            l = l.charge(&a).unwrap();
        }
        let t = render_budget(&l);
        assert!(t.contains("13") && t.contains("18"));
        assert!(render_budget(&BudgetLedger::new(0)).contains("exhausted"));
    }
}
