//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p edu-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use edu_cli::{run_experiment, ExperimentConfig, RunOptions};
use edu_core::acquisition::*;
use edu_core::benchmarks::*;
use edu_core::gp::{fit_map, Dataset, PosteriorGaussian};
use edu_core::metrics::{sf_metrics, DEFAULT_SF_CANDIDATES};
use edu_core::optimizer::{maximize, OptimizerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn post(mean: f64, sd: f64) -> PosteriorGaussian {
    PosteriorGaussian { mean, sd }
}

fn gamma_zero() -> ToleranceState {
    ToleranceState {
        f_min: -0.1,
        epsilon: 0.1,
        gamma_n: 0.0,
    }
}

fn grid() -> Vec<(f64, f64, f64)> {
    let mut g = Vec::new();
    for m in -3..=3 {
        for s in [0.1, 0.5, 1.0, 2.0] {
            for l in [0.25, 0.5, 1.0] {
                g.push((m as f64, s, l));
            }
        }
    }
    g
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let t = gamma_zero();
    let mut worst: f64 = 0.0;
    for (m, s, l) in grid() {
        let p = post(m, s);
        worst = worst.max((edu(&p, &t, l) - edu_quadrature(&p, &t, l)).abs());
        worst = worst.max((contour_acq(&p, &t, l) - contour_quadrature(&p, 0.0, l)).abs());
        worst = worst.max((ei(&p, 0.0) - ei_quadrature(m, s, 0.0)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-8 && secs < 10.0,
        format!("max |closed form - quadrature| = {worst:.2e} (tol 1e-8), {secs:.2} s (limit 10 s)"),
    )
}

fn criterion_2() -> Outcome {
    let t = gamma_zero();
    let worst = grid()
        .into_iter()
        .map(|(m, s, l)| (appendix_edu(&post(m, s), 0.0, l) - edu(&post(m, s), &t, l)).abs())
        .fold(0.0, f64::max);
    check(
        worst < 1e-10,
        format!("max |moment reassembly - closed form| = {worst:.2e} (tol 1e-10)"),
    )
}

fn criterion_3() -> Outcome {
    let t = gamma_zero();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (m, s, l) in grid() {
        let p = post(m, s);
        let fd = (edu(&p, &t, l + h) - edu(&p, &t, l - h)) / (2.0 * h);
        let an = edu_dlambda(&p, &t, l);
        // derivatives below 1e-9 are beneath the difference quotient's noise
        if an.abs() > 1e-9 {
            worst = worst.max((an - fd).abs() / an.abs());
        }
    }
    check(
        worst < 1e-5,
        format!("max relative error vs central FD = {worst:.2e} (tol 1e-5)"),
    )
}

fn criterion_4() -> Outcome {
    let data = fixed_dataset_2d();
    let model = fit_map(&data, 8, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let tol = ToleranceState::new(data.f_min(), 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for spec in [AcquisitionSpec::ei(), AcquisitionSpec::edu(0.5)] {
        let ev = AcqEvaluator::new(&model, spec, tol);
        for _ in 0..100 {
            let x = [rng.random_range(0.02..0.98), rng.random_range(0.02..0.98)];
            let (_, g) = ev.value_and_grad(&x).unwrap();
            let fd = fd_grad(&|y| ev.value(y), &x, 1e-6);
            let num = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(num / den.max(1e-3));
        }
    }
    check(
        worst < 1e-4,
        format!("max ||grad - FD|| / max(||FD||, 1e-3) over 200 points = {worst:.2e} (tol 1e-4)"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_mean, mut worst_sd): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random(), rng.random()]).collect();
        let (a, b) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
        let vals = pts.iter().map(|p| (a * p[0]).sin() + (b * p[1]).cos()).collect();
        let data = Dataset::new(pts, vals).unwrap();
        let model = fit_map(&data, 8, &mut rng).unwrap();
        let st = model.standardization();
        for (x, y) in data.points().iter().zip(data.values()) {
            let p = model.predict(x).unwrap();
            let y_std = st.to_std(*y);
            worst_mean = worst_mean.max((st.to_std(p.mean) - y_std).abs() / (1.0 + y_std.abs()));
            worst_sd = worst_sd.max(p.sd / st.scale);
        }
    }
    let mut worst_dense: f64 = 0.0;
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let vals = pts.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(pts, vals).unwrap();
        let model = fit_map(&data, 8, &mut rng).unwrap();
        let dense = DenseGp::new(&data, &model);
        for _ in 0..10 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let (m, v) = model.predict_std(&x);
            let (dm, dv) = dense.predict_std(&x);
            worst_dense = worst_dense.max((m - dm).abs()).max((v - dv.max(0.0)).abs());
        }
    }
    check(
        worst_mean <= 1e-6 && worst_sd <= 1e-3 && worst_dense < 1e-10,
        format!(
            "interpolation |mu - y|/(1+|y|) = {worst_mean:.2e} (tol 1e-6), sd = {worst_sd:.2e} (tol 1e-3), \
             dense oracle = {worst_dense:.2e} (tol 1e-10)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let data = fixed_dataset_2d();
    let model = fit_map(&data, 8, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let tol = ToleranceState::new(data.f_min(), 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let single_ev = AcqEvaluator::new(&model, AcquisitionSpec::edu(0.5), tol);
    let mut worst_q: f64 = 0.0;
    for _ in 0..100 {
        let x = vec![rng.random::<f64>(), rng.random::<f64>()];
        let single = single_ev.value(&x);
        worst_q = worst_q.max((q_edu(&model, &[x], &tol, 0.5).unwrap() - single).abs());
    }
    // where EI is largest, so the comparison is not between two zeros
    let ev = AcqEvaluator::new(&model, AcquisitionSpec::ei(), tol);
    let best = maximize(|x| ev.value_and_grad(x), 2, &OptimizerConfig::for_dim(2), &mut rng).unwrap();
    let exact = ei(&model.predict(&best.argmax).unwrap(), tol.f_min);
    let est = q_ei_mc_estimate(&model, std::slice::from_ref(&best.argmax), tol.f_min, 100_000, &mut rng).unwrap();
    let z = (est.mean - exact).abs() / est.std_error;
    check(
        worst_q < 1e-12 && z < 3.0,
        format!(
            "|q-EDU(q=1) - EDU| = {worst_q:.2e} (tol 1e-12); q-EI MC {:.6} vs EI {exact:.6}, {z:.2} SE (tol 3)",
            est.mean
        ),
    )
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Final mean coverage per method label for a shipped config.
fn final_coverage(config: &str) -> (Vec<(String, f64)>, f64) {
    let cfg = ExperimentConfig::load(&config_path(config)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = run_experiment(
        &cfg,
        &RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            seed: None,
            jobs: 0,
            timing: false,
        },
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert!(report.failures.is_empty(), "runs failed: {:?}", report.failures);
    let cov = cfg
        .labels()
        .into_iter()
        .map(|l| {
            let c = report.summary.last(&l).and_then(|r| r.coverage).expect("coverage").mean;
            (l, c)
        })
        .collect();
    (cov, secs)
}

fn lookup(cov: &[(String, f64)], label: &str) -> f64 {
    cov.iter()
        .find(|(l, _)| l == label)
        .map(|c| c.1)
        .expect("method in config")
}

fn criteria_7_8(cov: &[(String, f64)], secs: f64) -> (Outcome, Outcome) {
    let (edu, ei, random, contour) = (
        lookup(cov, "edu_0.5"),
        lookup(cov, "ei"),
        lookup(cov, "random"),
        lookup(cov, "contour_0.5"),
    );
    let seven = check(
        edu > random && edu >= ei && edu >= 0.75 && secs < 900.0,
        format!(
            "mean coverage at N=25 over 20 replicates: EDU {edu:.3}, EI {ei:.3}, Random {random:.3} \
             (need EDU > Random, EDU >= EI, EDU >= 0.75); {secs:.0} s (limit 900 s)"
        ),
    );
    let eight = check(contour < edu, format!("contour {contour:.3} < EDU {edu:.3}"));
    (seven, eight)
}

fn criterion_9() -> Outcome {
    let (cov, secs) = final_coverage("bowls2_batch.toml");
    let (qedu, qei) = (lookup(&cov, "qedu_0.5_q5"), lookup(&cov, "qei_q5"));
    check(
        qedu >= qei,
        format!("mean coverage at N=25 over 20 replicates: q-EDU {qedu:.3} vs q-EI {qei:.3} ({secs:.0} s)"),
    )
}

fn criterion_10() -> Outcome {
    let env = RoverEnv::free(1000).unwrap();
    let v = rover_eval(&[0.7 / 6.0; 12], &env);
    let expected = 0.05 * 0.7 * 2f64.sqrt() - 5.0;
    check(
        (v - expected).abs() < 1e-3,
        format!("straight path cost {v:.6} vs {expected:.6} (tol 1e-3)"),
    )
}

fn criterion_11() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [2usize, 4] {
        let b = bowls_registry(d).unwrap();
        let (f_star, eps) = (b.f_star.unwrap(), b.epsilon().unwrap());
        let within = b.minimizers.iter().all(|m| (b.eval(m) - f_star).abs() <= eps);
        ok &= b.minimizers.len() == 1 << d && within;
        notes.push(format!("bowls d={d}: {} minimizers", b.minimizers.len()));
    }
    let camel = camel8_registry().unwrap();
    let (f_star, eps) = (camel.f_star.unwrap(), camel.epsilon().unwrap());
    ok &= camel.minimizers.len() == 16 && camel.minimizers.iter().all(|m| (camel.eval(m) - f_star).abs() <= eps);
    // descent catalog of the 2-d camel from random starts
    let c2 = |x: &[f64]| camel2(x[0], x[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut minima: Vec<(Vec<f64>, f64)> = Vec::new();
    for _ in 0..400 {
        let x = descend(&c2, &[rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0)]);
        if x[0].abs() <= 3.0
            && x[1].abs() <= 2.0
            && minima
                .iter()
                .all(|(p, _)| (p[0] - x[0]).abs() + (p[1] - x[1]).abs() > 1e-4)
        {
            let v = c2(&x);
            minima.push((x, v));
        }
    }
    let c_min = minima.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let excluded: Vec<f64> = minima.iter().map(|m| m.1).filter(|v| v - c_min > 1e-6).collect();
    // one pair moved to a non-global minimum, the rest at the global one
    let outside = excluded.iter().all(|v| 3.0 * c_min + v + 2.0 > f_star + eps);
    ok &= outside && !excluded.is_empty();
    notes.push(format!(
        "camel8: {} minimizers, {} non-global camel minima all outside the band: {outside}",
        camel.minimizers.len(),
        excluded.len()
    ));
    check(ok, notes.join("; "))
}

fn criterion_12() -> Outcome {
    let (sf1, _) = sf_metrics(&[vec![0.5, 0.5]], 2, None, DEFAULT_SF_CANDIDATES).unwrap();
    let centre = (sf1 - 0.5f64.sqrt()).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut monotone = true;
    for _ in 0..50 {
        let mut basket: Vec<Vec<f64>> = Vec::new();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for _ in 0..8 {
            basket.push(vec![rng.random(), rng.random()]);
            let cur = sf_metrics(&basket, 2, None, DEFAULT_SF_CANDIDATES).unwrap();
            monotone &= cur.0 <= prev.0 && cur.1 <= prev.1;
            prev = cur;
        }
    }
    check(
        centre < 0.01 && monotone,
        format!("|SF1 - sqrt(2)/2| = {centre:.2e} (tol 0.01); monotone over 50 growing baskets: {monotone}"),
    )
}

fn main() {
    let mut results: Vec<(u32, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    let (cov, secs) = final_coverage("bowls2.toml");
    let (seven, eight) = criteria_7_8(&cov, secs);
    results.push((7, seven));
    results.push((8, eight));
    results.push((9, criterion_9()));
    results.push((10, criterion_10()));
    results.push((11, criterion_11()));
    results.push((12, criterion_12()));

    let mut failed = Vec::new();
    for (n, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2}: {tag}  {}", o.detail);
        if !o.pass {
            failed.push(*n);
        }
    }
    println!("criterion 13: not run (full-scale profile, see README)");
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
