use speckernel::par::Exec;
use speckernel::report::{replay, run_report, Report, REPORT_VERSION};
use speckernel::scenarios::{fixture, run_scenario, SCOPE_ATTACK, SCENARIOS};
use speckernel::Layout;

#[test]
fn scenario_reports_round_trip_through_json() {
    for sc in SCENARIOS {
        let r = run_scenario(sc.name, Exec::default()).unwrap();
        assert_eq!(r.version, REPORT_VERSION);
        assert_eq!(r.exit_code(), sc.expected_exit, "{}", sc.name);
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r, "{}", sc.name);
        assert!(replay(&back, Exec::default()).unwrap().matches, "{}", sc.name);
    }
}

#[test]
fn edited_reports_are_caught() {
    let sys = fixture("s_scope").unwrap();
    let r = run_report(&sys, SCOPE_ATTACK, &Layout::canonical(&sys), 100, true).unwrap();
    assert_eq!(r.exit_code(), 1);

    let mut wrong_digest = r.clone();
    wrong_digest.system_digest = "00".repeat(32);
    let check = replay(&wrong_digest, Exec::Sequential).unwrap();
    assert!(!check.matches);

    let mut wrong_trace = r.clone();
    wrong_trace.trace.pop();
    assert!(!replay(&wrong_trace, Exec::Sequential).unwrap().matches);

    let mut other_system = r.clone();
    other_system.system_source = other_system.system_source.replace("call x();", "skip;");
    assert!(!replay(&other_system, Exec::Sequential).unwrap().matches);
}

#[test]
fn text_rendering_names_the_outcome() {
    let sys = fixture("s_scope").unwrap();
    let r = run_report(&sys, SCOPE_ATTACK, &Layout::canonical(&sys), 100, true).unwrap();
    let text = r.to_text();
    assert!(text.contains("outcome: unsafe"));
    assert!(text.contains("Call-Unsafe"));
}
