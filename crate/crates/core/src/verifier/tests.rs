use super::*;
use crate::dynamics::SurrogateModel;
use crate::sets::Region;
use crate::testutil::{scalar_certificate, scalar_system};
use rand::{Rng, SeedableRng};

fn budget() -> LipschitzBudget {
    LipschitzBudget { l_x: 1.0, m_x: 3.0, m_bar: 3.0, l_bar: 1.0, l_v: 2.0, l_vdot: 1.0, l_h: 1.0, l_hdot: 1.0 }
}

#[test]
fn margin_formula_example() {
    let m = compute_margins(&budget(), 0.1, 0.01).unwrap();
    assert!((m.e_v - 0.47).abs() < 1e-12, "{}", m.e_v);
}

#[test]
fn margins_vanish_with_period_and_error() {
    let m = compute_margins(&budget(), 0.0, 0.0).unwrap();
    assert_eq!((m.e_v, m.e_h), (0.0, 0.0));
    let small = compute_margins(&budget(), 1e-9, 0.0).unwrap();
    assert!(small.e_v < 1e-8);
}

#[test]
fn doubling_error_adds_lipschitz_times_error() {
    let a = compute_margins(&budget(), 0.1, 0.01).unwrap();
    let b = compute_margins(&budget(), 0.1, 0.02).unwrap();
    assert!((b.e_v - a.e_v - 2.0 * 0.01).abs() < 1e-12);
    assert!((b.e_h - a.e_h - 1.0 * 0.01).abs() < 1e-12);
}

#[test]
fn negative_inputs_rejected() {
    assert!(compute_margins(&budget(), -0.1, 0.0).is_err());
    let mut b = budget();
    b.l_v = f64::NAN;
    assert!(compute_margins(&b, 0.1, 0.0).is_err());
}

fn query(tag: ConditionTag, lo: f64, hi: f64) -> VerificationQuery {
    VerificationQuery {
        agent: 0,
        tag,
        pattern: vec![],
        domain: IntervalBox::new(&[lo], &[hi]),
        margins: ErrorMargins::default(),
        budget: Budget::default(),
    }
}

#[test]
fn decrement_bound_on_scalar_system() {
    let sys = scalar_system(0.01);
    let cert = scalar_certificate(-1.0, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins::default()]);
    let q = query(ConditionTag::LyapDecrement, 0.5, 1.0);
    // the exact residual -(1-T)x²/2 is negative on the box; interval
    // dependency needs boxes of width ≲ 0.4x to show it
    for k in 0..4 {
        let lo = 0.5 + 0.125 * k as f64;
        let b = v.residual_bound(&q, &IntervalBox::new(&[lo], &[lo + 0.125])).unwrap();
        assert!(b.hi <= 0.0, "{b:?}");
    }
    assert_eq!(v.verify_box(&q).unwrap().status, Status::Verified);
}

#[test]
fn point_box_contains_concrete_residual() {
    let sys = scalar_system(0.01);
    let cert = scalar_certificate(-1.0, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins::default()]);
    for x in [0.3, 0.7, -0.9] {
        for tag in [ConditionTag::LyapDecrement, ConditionTag::BarrierIncrement] {
            let q = query(tag, x, x);
            let Some(b) = v.residual_bound(&q, &q.domain) else { continue };
            let r = match concrete_residual(&v, &q, &[x]) {
                ConcreteCheck::Holds(r) => r,
                ConcreteCheck::Violated(w) => w.residual,
                ConcreteCheck::NotApplicable => continue,
            };
            assert!(b.contains(r), "{tag:?} {x} {b:?} {r}");
            assert!(b.width() < 0.02, "{b:?}");
        }
    }
}

#[test]
fn margin_shifts_bound_exactly() {
    let sys = scalar_system(0.01);
    let cert = scalar_certificate(-1.0, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins::default()]);
    let mut q = query(ConditionTag::LyapDecrement, 0.5, 0.6);
    let b0 = v.residual_bound(&q, &q.domain).unwrap();
    q.margins.e_v = 0.25;
    let b1 = v.residual_bound(&q, &q.domain).unwrap();
    assert!((b1.hi - b0.hi - 0.25).abs() < 1e-12);
    let mut q = query(ConditionTag::BarrierIncrement, 0.5, 0.6);
    let c0 = v.residual_bound(&q, &q.domain).unwrap();
    q.margins.e_h = 0.25;
    let c1 = v.residual_bound(&q, &q.domain).unwrap();
    assert!((c1.hi - c0.hi - 0.25).abs() < 1e-12);
}

fn barrier_only_system() -> crate::system::System {
    let mut sys = scalar_system(0.01);
    sys.agents[0].initial = Region::Box { lower: vec![-1.0], upper: vec![1.0] };
    sys
}

#[test]
fn safe_positive_examples() {
    let sys = barrier_only_system();
    let mut cert = scalar_certificate(-1.0, -1.0);
    cert.slacks.eps0 = 0.1;
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins::default()]);
    let ok = v.verify_box(&query(ConditionTag::BarrierSafePositive, 0.5, 1.0)).unwrap();
    assert_eq!(ok.status, Status::Verified);
    assert_eq!(ok.boxes, 1);
    let bad = v.verify_box(&query(ConditionTag::BarrierSafePositive, -1.0, 1.0)).unwrap();
    assert_eq!(bad.status, Status::Counterexample);
    let w = bad.witness.unwrap();
    assert!(w.input[0] < 0.1 && w.residual > 0.0);
    let mut q = query(ConditionTag::BarrierSafePositive, 0.05, 0.2);
    q.budget.max_depth = 0;
    assert_eq!(v.verify_box(&q).unwrap().status, Status::Unknown);
}

#[test]
fn zero_box_budget_is_an_error() {
    let sys = barrier_only_system();
    let cert = scalar_certificate(-1.0, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins::default()]);
    let mut q = query(ConditionTag::BarrierSafePositive, 0.5, 1.0);
    q.budget.max_boxes = 0;
    assert!(matches!(v.verify_box(&q), Err(VerifyError::Budget)));
}

fn outcome(status: Status) -> VerificationOutcome {
    VerificationOutcome {
        agent: 0,
        tag: ConditionTag::LyapDecrement,
        pattern: vec![],
        status,
        witness: None,
        hint: None,
        boxes: 1,
        depth: 0,
        wall_time: 0.0,
    }
}

#[test]
fn agent_verdict_is_conservative_join() {
    use Status::*;
    assert_eq!(join_status(&[outcome(Verified), outcome(Verified)]), Verified);
    assert_eq!(join_status(&[outcome(Verified), outcome(Counterexample), outcome(Unknown)]), Counterexample);
    assert_eq!(join_status(&[outcome(Verified), outcome(Unknown)]), Unknown);
}

#[test]
fn scalar_system_verifies_with_true_margins() {
    // e^V = ½T·3 must stay below the decrement 0.75·0.05² at the goal edge
    let sys = scalar_system(5e-4);
    let cert = scalar_certificate(-0.5, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::with_computed_margins(&sys, &cert, &sur, 4).unwrap();
    let report = v.verify_all(Budget::default()).unwrap();
    // h = x is negative on half the initial set, so safety fails with a witness
    assert_eq!(report.verdict, Status::Counterexample);
    let decr = report.queries.iter().find(|o| o.tag == ConditionTag::LyapDecrement).unwrap();
    assert_eq!(decr.status, Status::Verified);
    for (tag, w) in report.witnesses() {
        assert!(!tag.holds(w.residual));
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: VerificationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn raising_margins_never_helps() {
    let sys = scalar_system(0.05);
    let sur = SurrogateModel::exact(&sys);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let lam = -rng.gen_range(0.05..1.5);
        let cert = scalar_certificate(lam, -1.0);
        let mut prev_ok = true;
        for e in [0.0, 0.001, 0.01, 0.05, 0.2] {
            let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins { e_v: e, e_h: e }]);
            let mut q = query(ConditionTag::LyapDecrement, -1.0, 1.0);
            q.margins = v.margins[0];
            q.budget.max_boxes = 2000;
            let ok = v.verify_box(&q).unwrap().status == Status::Verified;
            assert!(prev_ok || !ok, "verified after a larger margin failed");
            prev_ok = ok;
        }
    }
}

#[test]
fn verified_boxes_pass_spot_checks() {
    let sys = scalar_system(0.01);
    let cert = scalar_certificate(-0.8, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::new(&sys, &cert, &sur, vec![ErrorMargins { e_v: 1e-4, e_h: 1e-4 }]);
    let q = query(ConditionTag::LyapDecrement, -1.0, 1.0);
    assert_eq!(v.verify_box(&q).unwrap().status, Status::Verified);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let x = rng.gen_range(-1.0..1.0);
        assert!(!matches!(concrete_residual(&v, &q, &[x]), ConcreteCheck::Violated(_)), "{x}");
    }
}

#[test]
fn threaded_pass_matches_sequential() {
    let sys = scalar_system(5e-4);
    let cert = scalar_certificate(-0.5, -1.0);
    let sur = SurrogateModel::exact(&sys);
    let v = Verifier::with_computed_margins(&sys, &cert, &sur, 4).unwrap();
    let strip = |mut r: VerificationReport| {
        r.queries.iter_mut().for_each(|o| o.wall_time = 0.0);
        r
    };
    let one = strip(v.verify_all_with(Budget::default(), 1).unwrap());
    let three = strip(v.verify_all_with(Budget::default(), 3).unwrap());
    assert_eq!(one, three);
}
