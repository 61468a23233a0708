use std::collections::BTreeMap;

use proptest::prelude::*;

use stratopt::analytics::{correctness_from_flags, speedup_stats, transition_matrix};
use stratopt::clock::ManualClock;
use stratopt::config::{portfolio_shares, Mode, RunConfig};
use stratopt::fixtures::{SyntheticCompiler, SyntheticEvaluator};
use stratopt::guiding_agent::{FinalResult, Orchestrator, RunSettings, ToolRegistry};
use stratopt::inference::{MockProvider, ToolInvocation};
use stratopt::level_agent::{
    run_level_agent, AgentEnv, LevelAgentParams, OutcomeKind, DEFAULT_FEEDBACK_LIMIT,
};
use stratopt::model::{
    validate_pipeline, AbstractionLevel, BudgetLedger, LevelSet, PipelineDefinition, Program,
    ToolDescriptor, ToolKind,
};
use stratopt::testing::{
    normalize_output, score, CaseClass, Observation, RunStatus, TestCase, TestPlan,
};
use stratopt::trace::NullSink;

fn case(k: usize, scale: bool, reference: f64) -> TestCase {
    let class = if scale { CaseClass::Scale } else { CaseClass::Explore };
    TestCase {
        id: format!("c{k}"),
        class,
        size_param: 1,
        input: vec![b'0' + (k % 10) as u8],
        reference_output: format!("{k}\n").into_bytes(),
        reference_runtime: reference,
    }
}

fn obs(k: usize, outcome: u8, runtime: f64) -> Observation {
    let status = match outcome {
        0 => RunStatus::Exited {
            stdout: format!("{k}  \n\n").into_bytes(),
            exit_code: 0,
        },
        1 => RunStatus::Exited {
            stdout: b"nope".to_vec(),
            exit_code: 0,
        },
        2 => RunStatus::Exited {
            stdout: format!("{k}\n").into_bytes(),
            exit_code: 3,
        },
        _ => RunStatus::TimedOut,
    };
    Observation { status, runtime }
}

prop_compose! {
    fn scored_inputs()(rows in prop::collection::vec(
        (any::<bool>(), 0u8..4, 0.001f64..5.0, 0.001f64..5.0), 1..25)
    ) -> (Vec<TestCase>, Vec<Observation>) {
        let cases = rows.iter().enumerate().map(|(k, r)| case(k, r.0, r.2)).collect();
        let obs = rows.iter().enumerate().map(|(k, r)| obs(k, r.1, r.3)).collect();
        (cases, obs)
    }
}

fn fenced(t: &str) -> String {
    format!("```\n{t}\n```")
}

fn evaluator_for(outcomes: &[(u8, f64)]) -> SyntheticEvaluator {
    outcomes
        .iter()
        .enumerate()
        .fold(SyntheticEvaluator::new(), |e, (i, (kind, perf))| {
            let text = format!("v{i}");
            match kind {
                0 => e.correct(&text, *perf),
                1 => e.incorrect(&text, 1, 3),
                _ => e,
            }
        })
}

fn orchestrate(guide: &[String], budget: u64, agents: usize) -> FinalResult {
    let levels = LevelSet::default();
    let registry = ToolRegistry::full(&levels);
    let guide = MockProvider::replies(guide.to_vec());
    let agent_provider = MockProvider::replies((0..agents).map(|i| fenced(&format!("a{}", i % 4))));
    let eval = SyntheticEvaluator::new()
        .correct("orig", 1.0)
        .correct("a0", 1.2)
        .correct("a1", 0.9)
        .incorrect("a2", 1, 2);
    let compiler = SyntheticCompiler::new();
    let clock = ManualClock::new();
    Orchestrator {
        registry: &registry,
        levels: &levels,
        guide: &guide,
        agent_provider: &agent_provider,
        compiler: &compiler,
        evaluator: &eval,
        cases: &[],
        clock: &clock,
        sink: &NullSink,
        settings: RunSettings {
            budget,
            n: 2,
            k: 2,
            compiler_call_cap: 4,
            malformed_cap: 3,
            ..RunSettings::default()
        },
    }
    .run(&Program::new(AbstractionLevel::source(), "orig").unwrap())
    .unwrap()
}

fn guide_reply() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(ToolInvocation::new("frontend").render()),
        Just(ToolInvocation::new("middle_end").render()),
        Just(ToolInvocation::new("backend").render()),
        Just(ToolInvocation::new("source_agent").arg("guidance", "g").render()),
        Just(ToolInvocation::new("ir_agent").arg("guidance", "g").render()),
        Just(ToolInvocation::new("assembly_agent").arg("guidance", "g").render()),
        Just("not a call".to_string()),
    ]
}

proptest! {
    #[test]
    fn report_invariants((cases, obs) in scored_inputs()) {
        let r = score(&cases, &obs, &TestPlan::default());
        let total = cases.len();
        let passed = r.per_input.iter().filter(|c| c.passed).count();
        prop_assert!((0.0..=1.0).contains(&r.t_correct));
        prop_assert_eq!(r.t_correct, passed as f64 / total as f64);
        prop_assert_eq!(r.failing_cases.len(), ((1.0 - r.t_correct) * total as f64).round() as usize);
        prop_assert_eq!(r.t_perf.is_some(), r.t_correct == 1.0);
        if let Some(p) = r.t_perf {
            let logs: Vec<f64> = cases
                .iter()
                .zip(&obs)
                .filter(|(c, _)| c.class == CaseClass::Scale)
                .map(|(c, o)| (c.reference_runtime / o.runtime).ln())
                .collect();
            let expect = if logs.is_empty() { 1.0 } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
            prop_assert!((p - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn t_perf_homogeneous(
        rows in prop::collection::vec((any::<bool>(), 0.001f64..5.0, 0.001f64..5.0), 1..12),
        c in 0.05f64..20.0,
    ) {
        let cases: Vec<TestCase> = rows.iter().enumerate().map(|(k, r)| case(k, r.0, r.1)).collect();
        let a: Vec<Observation> = rows.iter().enumerate().map(|(k, r)| obs(k, 0, r.2)).collect();
        let b: Vec<Observation> = rows.iter().enumerate().map(|(k, r)| obs(k, 0, r.2 * c)).collect();
        let plan = TestPlan::default();
        let (p, q) = (score(&cases, &a, &plan).t_perf.unwrap(), score(&cases, &b, &plan).t_perf.unwrap());
        let has_scale = rows.iter().any(|r| r.0);
        let expect = if has_scale { p / c } else { p };
        prop_assert!((q - expect).abs() < 1e-9 * expect.max(1.0));
    }

    #[test]
    fn normalization_idempotent(s in "[a-z \\n\\t]{0,40}") {
        let once = normalize_output(s.as_bytes());
        prop_assert_eq!(normalize_output(&once), once);
    }

    #[test]
    fn zero_cost_charges_are_neutral(total in 0u64..10, ops in prop::collection::vec(0u8..4, 0..30)) {
        let compiler = ToolDescriptor::compiler("middle_end", AbstractionLevel::ir(), AbstractionLevel::ir()).unwrap();
        let agents: Vec<ToolDescriptor> = LevelSet::default().levels().map(ToolDescriptor::level_agent).collect();
        let mut ledger = BudgetLedger::new(total);
        let mut costs: BTreeMap<String, u64> = BTreeMap::new();
        for op in ops {
            let tool = if op == 3 { &compiler } else { &agents[op as usize] };
            costs.insert(tool.id.clone(), tool.cost);
            if tool.cost == 0 {
                let next = ledger.charge(tool).unwrap();
                prop_assert_eq!(next.spent(), ledger.spent());
                prop_assert_eq!(next.is_exhausted(), ledger.is_exhausted());
                ledger = next;
            } else if let Ok(next) = ledger.charge(tool) {
                ledger = next;
            }
            prop_assert!(ledger.spent() <= ledger.total());
            let weighted: u64 = ledger.calls().iter().map(|(id, n)| n * costs[id]).sum();
            prop_assert_eq!(weighted, ledger.spent());
        }
    }

    #[test]
    fn valid_pipelines_span_the_levels(seq in prop::collection::vec((1u32..=3, 1u32..=3), 1..6)) {
        let tools: Vec<ToolDescriptor> = seq
            .iter()
            .enumerate()
            .map(|(i, (d, r))| ToolDescriptor {
                id: format!("t{i}"),
                kind: ToolKind::CompilerComponent,
                domain: AbstractionLevel::new(*d, ""),
                range: AbstractionLevel::new(*r, ""),
                cost: 0,
            })
            .collect();
        let def = PipelineDefinition { sequence: tools.iter().map(|t| t.id.clone()).collect(), tools };
        if validate_pipeline(&def, &LevelSet::default()).is_ok() {
            let mut at = def.resolved().next().unwrap().domain.ordinal;
            prop_assert_eq!(at, 1);
            for t in def.resolved() {
                prop_assert_eq!(t.domain.ordinal, at);
                at = t.range.ordinal;
            }
            prop_assert_eq!(at, 3);
        }
    }

    #[test]
    fn level_agent_invariants(
        outcomes in prop::collection::vec((0u8..3, 0.5f64..2.0), 1..12),
        n in 1u32..4,
        k in 1u32..4,
        level in 1u32..=3,
    ) {
        let level = LevelSet::default().by_ordinal(level).unwrap();
        let replies: Vec<String> = (0..(n * k) as usize).map(|i| fenced(&format!("v{}", i % outcomes.len()))).collect();
        let provider = MockProvider::replies(replies);
        let eval = evaluator_for(&outcomes);
        let levels = LevelSet::default();
        let clock = ManualClock::new();
        let env = AgentEnv {
            provider: &provider,
            evaluator: &eval,
            cases: &[],
            levels: &levels,
            clock: &clock,
            deadline: None,
            feedback_limit: DEFAULT_FEEDBACK_LIMIT,
            on_sample: None,
        };
        let params = LevelAgentParams::new(level.clone(), n, k).unwrap();
        let input = Program::new(level.clone(), "orig").unwrap().with_perf(1.0).unwrap();
        let o = run_level_agent(&input, "g", &params, &env).unwrap();
        prop_assert_eq!(provider.served(), (n * k) as usize);
        prop_assert!(o.best_history.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(o.perf, o.best_history.iter().copied().fold(1.0, f64::max));
        prop_assert_eq!(o.samples.len() as u32, n * o.rounds_executed);
        for round in 1..=o.rounds_executed {
            prop_assert!(o.samples.iter().filter(|s| s.round == round && s.selected).count() <= 1);
        }
        prop_assert!(o.samples.iter().all(|s| !s.selected || s.report.t_correct == 1.0));
        match o.kind {
            OutcomeKind::Improved => {
                prop_assert!(o.perf > 1.0);
                prop_assert_eq!(&o.program.as_ref().unwrap().level, &level);
            }
            OutcomeKind::NoImprovement => prop_assert!(o.program.is_none() && o.feedback.is_some()),
        }
    }

    #[test]
    fn orchestrator_invariants(
        script in prop::collection::vec(guide_reply(), 0..25),
        budget in 0u64..5,
    ) {
        let a = orchestrate(&script, budget, 40);
        let agent_calls = a.trace.iter().filter(|c| c.kind == ToolKind::LevelAgent).count() as u64;
        prop_assert_eq!(a.ledger.spent(), agent_calls);
        prop_assert!(agent_calls <= budget);
        prop_assert!(a.trace.iter().filter(|c| c.kind == ToolKind::CompilerComponent).all(|c| c.cost_charged == 0));
        prop_assert_eq!(&a.program.level, &AbstractionLevel::assembly());
        prop_assert!(a.trace.windows(2).all(|w| w[0].seq < w[1].seq));
        prop_assert!(a.trace.first().map(|c| c.seq == 1).unwrap_or(true));
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for c in a.trace.iter().filter(|c| c.kind == ToolKind::LevelAgent) {
            if let Some(p) = c.perf {
                let b = best.entry(c.level.as_str()).or_insert(0.0);
                if c.improved {
                    prop_assert!(p > *b);
                }
                *b = b.max(p);
            }
        }
        let b = orchestrate(&script, budget, 40);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn speedup_stats_scale_covariant(xs in prop::collection::vec(0.1f64..10.0, 1..40), c in 0.1f64..10.0) {
        let a = speedup_stats(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        let b = speedup_stats(&scaled).unwrap();
        prop_assert!((b.geomean - a.geomean * c).abs() < 1e-9 * b.geomean);
        for (p, v) in &a.percentiles {
            prop_assert!((b.percentiles[p] - v * c).abs() < 1e-9 * b.percentiles[p].max(1.0));
        }
        let ps: Vec<f64> = a.percentiles.values().copied().collect();
        prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn uniform_samples_dominate_generations(flags in prop::collection::vec(any::<bool>(), 1..60), n in 1usize..5) {
        let groups: Vec<Vec<bool>> = flags.chunks(n).filter(|c| c.len() == n).map(<[bool]>::to_vec).collect();
        prop_assume!(!groups.is_empty());
        let s = correctness_from_flags(&groups).unwrap();
        prop_assert!(s.pct_correct_samples >= s.pct_correct_generations - 1e-12);
        if n == 1 {
            prop_assert!((s.pct_correct_samples - s.pct_correct_generations).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_rows_normalized(seqs in prop::collection::vec(prop::collection::vec(0usize..4, 0..10), 0..8)) {
        let names = ["frontend", "ir_agent", "backend", "source_agent"];
        let seqs: Vec<Vec<&str>> = seqs.iter().map(|s| s.iter().map(|&i| names[i]).collect()).collect();
        let m = transition_matrix(&seqs);
        for row in m.rows.values() {
            prop_assert!((row.values().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.values().all(|f| (0.0..=1.0).contains(f)));
        }
    }

    #[test]
    fn portfolio_conserves_budget(b in 0u64..1000) {
        let s = portfolio_shares(b);
        prop_assert_eq!(s.iter().sum::<u64>(), b);
        prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn config_round_trip(
        budget in 0u64..100,
        n in 1u32..8,
        k in 1u32..8,
        mode in prop::sample::select(Mode::ALL.to_vec()),
        wall in 1.0f64..7200.0,
    ) {
        let c = RunConfig { budget, samples: n, refine: k, mode, wall_clock_limit: wall, ..RunConfig::default() };
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_toml(), c.to_toml());
    }
}
