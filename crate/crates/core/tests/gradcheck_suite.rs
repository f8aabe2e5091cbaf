use tse_core::gradcheck::{op_names, run_gradcheck, selftest, GradCheckConfig};

#[test]
fn every_op_matches_finite_differences() {
    let r = run_gradcheck(&GradCheckConfig::default());
    for o in &r.ops {
        eprintln!("{:<26} {:.2e} {}", o.op, o.max_rel_error, o.error.as_deref().unwrap_or(""));
    }
    assert_eq!(r.ops.len(), op_names().len());
    assert!(r.ops.iter().all(|o| o.instances >= 20));
    assert!(r.passed(), "failing ops: {:?}", r.failing());
    assert!(r.elapsed_s < 60.0, "suite took {:.1}s", r.elapsed_s);
}

#[test]
fn fault_injection_names_the_op() {
    for op in ["conv1d", "mhca_fuse", "si_sdr_loss"] {
        let cfg = GradCheckConfig { instances: 2, filter: Some(op.into()), inject_fault: Some(op.into()), ..Default::default() };
        let r = run_gradcheck(&cfg);
        assert!(r.failing().contains(&op), "{op} not reported");
    }
}

#[test]
fn selftest_invariants_hold() {
    let r = selftest(&GradCheckConfig { instances: 2, ..Default::default() });
    for c in &r.invariants {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert!(r.passed());
}
