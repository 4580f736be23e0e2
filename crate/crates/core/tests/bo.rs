use edu_core::acquisition::AcquisitionSpec;
use edu_core::benchmarks::bowls_registry;
use edu_core::bo::*;
use edu_core::Error;

fn bowls_cfg(spec: AcquisitionSpec, n_total: usize, seed: u64) -> (edu_core::benchmarks::Benchmark, LoopConfig) {
    let b = bowls_registry(2).unwrap();
    let eps = b.epsilon().unwrap();
    (b, LoopConfig::new(2, n_total, spec, eps, seed))
}

fn check_invariants(t: &Trace, n: usize) {
    assert_eq!(t.len(), n);
    let mut run = f64::INFINITY;
    for (i, r) in t.records.iter().enumerate() {
        assert_eq!(r.eval, i + 1);
        run = run.min(r.value);
        assert_eq!(r.f_min, run);
        assert!((r.gamma_n - r.f_min - t.epsilon).abs() <= 1e-12 * r.f_min.abs().max(1.0));
        assert!(r.point.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn initial_design_only() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::edu(0.5), 10, 1);
    let t = run_bo(|x| b.eval(x), 2, &cfg).unwrap();
    check_invariants(&t, 10);
    assert!(t.records.iter().all(|r| r.round == 0));
    assert_eq!(t.fits, 0);
}

#[test]
fn bowls_run_is_reproducible() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::edu(0.5), 25, 42);
    let a = run_bo(|x| b.eval(x), 2, &cfg).unwrap();
    let c = run_bo(|x| b.eval(x), 2, &cfg).unwrap();
    check_invariants(&a, 25);
    assert_eq!(a, c);
    assert_eq!(a.fits, 15);
    assert_eq!(run_batch_bo(|x| b.eval(x), 2, &cfg).unwrap(), a);
}

#[test]
fn quadratic_1d() {
    let cfg = LoopConfig::new(1, 20, AcquisitionSpec::edu(0.5), 0.01, 3);
    let t = run_bo(|x| (x[0] - 0.3).powi(2), 1, &cfg).unwrap();
    check_invariants(&t, 20);
    assert!(t.f_min().unwrap() < 0.01);
    let by_hand = t.values().iter().fold(f64::INFINITY, |m, v| m.min(*v));
    assert_eq!(t.f_min().unwrap(), by_hand);
}

#[test]
fn ask_tell_replays_run() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::ei(), 16, 5);
    let reference = run_bo(|x| b.eval(x), 2, &cfg).unwrap();
    let mut c = Campaign::new(2, cfg.clone()).unwrap();
    while !c.is_done() {
        let pts = c.ask().unwrap();
        let vals: Vec<f64> = pts.iter().map(|p| b.eval(p)).collect();
        c.tell(&pts, &vals).unwrap();
    }
    assert_eq!(c.trace(), reference);
}

#[test]
fn state_round_trip_mid_campaign() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::edu(0.5), 20, 8);
    let mut c = Campaign::new(2, cfg).unwrap();
    for _ in 0..3 {
        let pts = c.ask().unwrap();
        let vals: Vec<f64> = pts.iter().map(|p| b.eval(p)).collect();
        c.tell(&pts, &vals).unwrap();
    }
    let json = c.to_json().unwrap();
    let mut restored = Campaign::from_json(&json).unwrap();
    assert_eq!(restored, c);
    assert_eq!(restored.ask().unwrap(), c.ask().unwrap());

    let bumped = json
        .replacen("\"version\": 1", "\"version\": 99", 1)
        .replacen("\"version\":1", "\"version\":99", 1);
    assert!(Campaign::from_json(&bumped).is_err());
}

#[test]
fn tell_validation_leaves_state_unchanged() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::edu(0.5), 20, 8);
    let mut c = Campaign::new(2, cfg).unwrap();
    let pts = c.ask().unwrap();
    let vals: Vec<f64> = pts.iter().map(|p| b.eval(p)).collect();
    c.tell(&pts, &vals).unwrap();
    let next = c.ask().unwrap();
    let before = c.clone();
    assert!(c.tell(&next, &[f64::NAN]).is_err());
    assert!(c.tell(&[pts[0].clone()], &[1.0]).is_err());
    assert_eq!(c, before);
}

#[test]
fn batch_bookkeeping() {
    let (b, mut cfg) = bowls_cfg(AcquisitionSpec::q_edu(0.5, 5), 25, 11);
    cfg.optimizer.n_restarts = 20;
    let t = run_batch_bo(|x| b.eval(x), 2, &cfg).unwrap();
    check_invariants(&t, 25);
    assert_eq!(t.fits, 3);
    for round in 1..=3 {
        let pts: Vec<&Vec<f64>> = t
            .records
            .iter()
            .filter(|r| r.round == round)
            .map(|r| &r.point)
            .collect();
        assert_eq!(pts.len(), 5);
        for i in 0..5 {
            for j in i + 1..5 {
                let d = pts[i]
                    .iter()
                    .zip(pts[j])
                    .map(|(a, c)| (a - c).abs())
                    .fold(0.0, f64::max);
                assert!(d > 1e-6);
            }
        }
    }
}

#[test]
fn truncated_final_batch() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::q_ei(4, 256), 20, 2);
    let t = run_batch_bo(|x| b.eval(x), 2, &cfg).unwrap();
    check_invariants(&t, 20);
    let sizes: Vec<usize> = (1..=3)
        .map(|r| t.records.iter().filter(|x| x.round == r).count())
        .collect();
    assert_eq!(sizes, vec![4, 4, 2]);
}

#[test]
fn random_never_fits() {
    let (b, cfg) = bowls_cfg(AcquisitionSpec::random(), 25, 4);
    let t = run_bo(|x| b.eval(x), 2, &cfg).unwrap();
    check_invariants(&t, 25);
    assert_eq!(t.fits, 0);
}

#[test]
fn non_finite_objective_aborts_with_partial_trace() {
    let (_, cfg) = bowls_cfg(AcquisitionSpec::edu(0.5), 20, 4);
    let mut calls = 0;
    let err = run_bo(
        |x| {
            calls += 1;
            if calls == 12 {
                f64::INFINITY
            } else {
                x[0]
            }
        },
        2,
        &cfg,
    )
    .unwrap_err();
    assert_eq!(err.trace.len(), 11);
    assert!(matches!(err.source, Error::NonFiniteObjective { .. }));
}

#[test]
fn tolerable_rules() {
    assert!(tolerable(-1.2, None, Some(-1.2), 1e-9).unwrap());
    assert!(!tolerable(0.95, Some(LowerBound::new(0.0, None).unwrap()), None, 0.9).unwrap());
    assert!(tolerable(1.5, None, Some(1.0), 0.5).unwrap());
    assert!(tolerable(1.0, None, None, 0.5).is_err());
    assert!(LowerBound::new(1.0, Some(0.5)).is_err());
}
