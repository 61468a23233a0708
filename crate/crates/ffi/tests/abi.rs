use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use stratopt_ffi::*;

fn last_error() -> Option<String> {
    let p = stratopt_last_error();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { stratopt_string_free(p) };
    Some(s)
}

#[test]
fn tool_classes() {
    assert_eq!(stratopt_classify_tool(2, 2), StratoptToolClass::Rewrite);
    assert_eq!(stratopt_classify_tool(1, 3), StratoptToolClass::Lowering);
    assert_eq!(stratopt_classify_tool(3, 1), StratoptToolClass::Invalid);
}

#[test]
fn ledger_lifecycle() {
    unsafe {
        let l = stratopt_ledger_new(2);
        assert_eq!(stratopt_ledger_charge_agent(l, 1), StratoptStatus::Ok);
        assert_eq!(stratopt_ledger_charge_agent(l, 3), StratoptStatus::Ok);
        assert!(stratopt_ledger_is_exhausted(l));
        assert_eq!(stratopt_ledger_charge_agent(l, 2), StratoptStatus::BudgetExceeded);
        assert!(last_error().is_some());
        assert_eq!(stratopt_ledger_spent(l), 2);
        assert_eq!(stratopt_ledger_remaining(l), 0);
        assert_eq!(stratopt_ledger_charge_agent(l, 7), StratoptStatus::InvalidArgument);
        stratopt_ledger_free(l);
        assert_eq!(stratopt_ledger_charge_agent(ptr::null_mut(), 1), StratoptStatus::NullPointer);
        stratopt_ledger_free(ptr::null_mut());
    }
}

#[test]
fn stats_match_core() {
    let xs = [1.0, 2.0, 4.0, 8.0];
    let mut out = StratoptSpeedupStats::default();
    let st = unsafe { stratopt_speedup_stats(xs.as_ptr(), xs.len(), &mut out) };
    assert_eq!(st, StratoptStatus::Ok);
    let expected_geomean = (1.0f64 * 2.0 * 4.0 * 8.0).powf(0.25);
    assert!((out.geomean - expected_geomean).abs() < 1e-12);
    assert!((out.p50 - 3.0).abs() < 1e-12);
    assert_eq!(out.count, 4);
    let st = unsafe { stratopt_speedup_stats(xs.as_ptr(), 0, &mut out) };
    assert_eq!(st, StratoptStatus::InvalidArgument);
}

#[test]
fn variability() {
    let spread: Vec<f64> = (0..10).map(|i| 1.0 + 0.02 * i as f64).collect();
    assert!(unsafe { stratopt_variability_filter(spread.as_ptr(), spread.len(), 10, 0.10) });
    assert!(!unsafe { stratopt_variability_filter(spread.as_ptr(), spread.len(), 11, 0.10) });
    assert!(!unsafe { stratopt_variability_filter(ptr::null(), 0, 1, 0.1) });
}

#[test]
fn config_round_trip() {
    unsafe {
        let c = stratopt_config_default();
        assert_eq!(stratopt_config_set_budget(c, 6), StratoptStatus::Ok);
        let mode = CString::new("ir-only").unwrap();
        assert_eq!(stratopt_config_set_mode(c, mode.as_ptr()), StratoptStatus::Ok);
        let bad = CString::new("everything").unwrap();
        assert_eq!(stratopt_config_set_mode(c, bad.as_ptr()), StratoptStatus::InvalidArgument);
        assert!(last_error().unwrap().contains("unknown mode"));
        let text = stratopt_config_to_toml(c);
        let mut back = ptr::null_mut();
        assert_eq!(stratopt_config_from_toml(text, &mut back), StratoptStatus::Ok);
        let s = CStr::from_ptr(text).to_str().unwrap();
        assert!(s.contains("budget = 6") && s.contains("ir-only"));
        stratopt_string_free(text);
        stratopt_config_free(back);
        stratopt_config_free(c);

        let junk = CString::new("bogus = 1").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(stratopt_config_from_toml(junk.as_ptr(), &mut out), StratoptStatus::Config);
        assert!(out.is_null());
    }
}

#[test]
fn invalid_config_fails_before_any_work() {
    unsafe {
        let c = stratopt_config_default();
        let toml = CString::new("refine = 0\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(stratopt_config_from_toml(toml.as_ptr(), &mut cfg), StratoptStatus::Ok);
        let src = CString::new("int main(void){return 0;}").unwrap();
        let mut res = ptr::null_mut();
        assert_eq!(stratopt_optimize(cfg, src.as_ptr(), &mut res), StratoptStatus::Config);
        assert!(res.is_null());
        assert_eq!(stratopt_optimize(ptr::null(), src.as_ptr(), &mut res), StratoptStatus::NullPointer);
        stratopt_config_free(cfg);
        stratopt_config_free(c);
    }
}

#[test]
fn error_is_cleared_on_success() {
    unsafe {
        let l = stratopt_ledger_new(0);
        stratopt_ledger_charge_agent(l, 1);
        assert!(last_error().is_some());
        stratopt_ledger_free(l);
        let c = stratopt_config_default();
        stratopt_config_set_mode(c, CString::new("full").unwrap().as_ptr());
        assert!(last_error().is_none());
        stratopt_config_free(c);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/stratopt.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["stratopt_optimize", "stratopt_last_error", "STRATOPT_STATUS_OK", "StratoptLedger"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-x", "c", "-fsyntax-only", "-Wall", "-Werror", header])
        .output()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
