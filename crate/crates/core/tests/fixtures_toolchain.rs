//! Fixture behaviour on the real toolchain. Every test returns early when
//! clang is not installed.

mod common;

use std::fs;

use stratopt::fixtures::all_fixtures;
use stratopt::model::{AbstractionLevel, Program};
use stratopt::testing::{evaluate, materialize_cases, TestPlan};
use stratopt::toolchain::{clang_available, is_executable};

macro_rules! need_clang {
    () => {
        if !clang_available() {
            eprintln!("clang not found; skipping");
            return;
        }
    };
}

#[test]
fn variants_score_as_labelled() {
    need_clang!();
    let tmp = tempfile::tempdir().unwrap();
    let tc = common::toolchain(tmp.path());
    let plan = TestPlan::default();
    for fx in all_fixtures() {
        let dir = tmp.path().join(fx.id);
        fs::create_dir_all(&dir).unwrap();
        let (_, cases) = common::fixture_cases(&tc, &fx, &plan, &dir).unwrap();
        assert_eq!(cases.len(), 15, "{}", fx.id);

        let orig = evaluate(&fx.original(), &cases, &tc, &plan);
        assert_eq!(orig.t_correct, 1.0, "{}: original", fx.id);
        for v in &fx.correct {
            let r = evaluate(&v.program(), &cases, &tc, &plan);
            assert_eq!(r.t_correct, 1.0, "{}/{}: {:?}", fx.id, v.name, r.failing_cases);
            assert!(r.t_perf.unwrap() > 0.0);
        }
        for v in &fx.incorrect {
            let r = evaluate(&v.program(), &cases, &tc, &plan);
            assert!(r.t_correct < 1.0, "{}/{} passed every case", fx.id, v.name);
            assert!(r.t_perf.is_none());
        }
    }
}

#[test]
fn materialized_inputs_are_deterministic() {
    need_clang!();
    let tmp = tempfile::tempdir().unwrap();
    let tc = common::toolchain(tmp.path());
    let plan = TestPlan::default();
    let fx = stratopt::fixtures::load_fixture("string-reverse").unwrap();
    let (baseline, first) = common::fixture_cases(&tc, &fx, &plan, tmp.path()).unwrap();
    let mut script = fx.script();
    script.validated = true;
    let again = materialize_cases(&script, &plan, &baseline, tmp.path()).unwrap();
    for (a, b) in first.iter().zip(&again) {
        assert_eq!(a.input, b.input);
        assert_eq!(a.reference_output, b.reference_output);
    }
}

#[test]
fn prebaked_levels_build() {
    need_clang!();
    let tmp = tempfile::tempdir().unwrap();
    let tc = common::toolchain(tmp.path());
    for fx in all_fixtures() {
        for level in [AbstractionLevel::ir(), AbstractionLevel::assembly()] {
            let p = fx.at_level(&level).unwrap();
            let exe = tc
                .build_executable(&p)
                .unwrap_or_else(|d| panic!("{} at {level}: {}", fx.id, d.message));
            assert!(is_executable(&exe.path));
            assert_eq!(exe.built_from_level, level);
        }
    }
}

#[test]
fn stages_leave_inputs_alone_and_report_failures() {
    need_clang!();
    let tmp = tempfile::tempdir().unwrap();
    let tc = common::toolchain(tmp.path());
    let fx = stratopt::fixtures::load_fixture("echo-int").unwrap();
    let src = fx.original();
    let before = src.clone();
    let ir = tc.frontend(&src).unwrap();
    assert_eq!(src, before);
    assert_eq!(ir.level, AbstractionLevel::ir());
    assert_eq!(ir.provenance.as_deref(), Some("frontend"));
    let ir_before = ir.clone();
    let asm = tc.backend(&ir).unwrap();
    assert_eq!(ir, ir_before);
    assert_eq!(asm.level, AbstractionLevel::assembly());

    let bad = Program::new(AbstractionLevel::source(), "int main( {").unwrap();
    let d = tc.frontend(&bad).unwrap_err();
    assert!(d.exit_code != 0 || d.timed_out);
    assert!(d.message.contains("error"));
    let d = tc.build_executable(&bad).unwrap_err();
    assert!(d.exit_code != 0 || d.timed_out);
}
