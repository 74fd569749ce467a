//! Exit criteria. Each test prints one PASS/FAIL line; run with
//! `cargo test -p autotune --test acceptance -- --nocapture --test-threads 1`.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;

use autotune::controllers::fuzzify;
use autotune::controllers::{
    normalized_output, p_command, standard_sets, Defuzzifier, PConfig, RULES,
};
use autotune::harness::{
    erlang_c_wait, run_experiment, simulate_fixed_pool, ControllerKind, ExperimentConfig,
};
use autotune::plant::{ArxPlant, WorkloadConfig};
use autotune::sysid::fit_arx;

use common::{ctmc_mean_wait, verdict};

const A: f64 = 0.1;
const B: f64 = -0.36;
const REFERENCE: f64 = 20.0;
const U0: f64 = 300.0;

/// Closed loop of the proportional law on the linear plant, in deviation
/// variables (operating point and reference at zero), starting from a unit
/// error. Returns e(0), e(1), ..., e(steps).
fn linear_loop_errors(kp: f64, steps: usize) -> Vec<f64> {
    let cfg = PConfig {
        kp,
        reference: 0.0,
        u0: 0.0,
        ..PConfig::default()
    };
    let mut plant = ArxPlant::new(A, B, 0.0, 0.0);
    plant.y_dev = -1.0;
    let mut errors = vec![-plant.output()];
    for _ in 0..steps {
        let e = *errors.last().unwrap();
        let y = plant.step(p_command(&cfg, e));
        errors.push(-y);
    }
    errors
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

#[test]
fn c1_stability_boundary() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for kp in [-3.0, 2.4] {
        let errs = linear_loop_errors(kp, 60);
        let decayed = errs.iter().any(|e| e.abs() < 1e-6);
        detail.push(format!(
            "kp={kp}: |e60|={:.3e} decayed<1e-6={decayed}",
            errs[60].abs()
        ));
        pass &= decayed;
    }
    for kp in [-3.2, 2.6] {
        let errs = linear_loop_errors(kp, 60);
        let growing = errs.windows(2).all(|w| w[1].abs() > w[0].abs());
        detail.push(format!(
            "kp={kp}: |e60|={:.3e} monotone growth={growing}",
            errs[60].abs()
        ));
        pass &= growing;
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 1.0);
    assert!(
        verdict(
            "C1",
            "stability boundary",
            pass,
            format!("{} ({elapsed:?})", detail.join("; "))
        ),
        "criterion 1 failed"
    );
}

#[test]
fn c2_exact_pole_law() {
    let start = Instant::now();
    let errs = linear_loop_errors(-1.5, 20);
    let worst = errs
        .windows(2)
        .map(|w| (w[1] / w[0] - (-0.44)).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && within(elapsed, 1.0);
    assert!(
        verdict(
            "C2",
            "exact pole law",
            pass,
            format!("max |ratio + 0.44| = {worst:.3e} ({elapsed:?})")
        ),
        "criterion 2 failed"
    );
}

fn arx_data(rng: &mut Pcg64, n: usize, noise: Option<&Normal<f64>>) -> Vec<(f64, f64)> {
    let mut plant = ArxPlant::new(A, B, REFERENCE, U0);
    (0..n)
        .map(|_| {
            let u = U0 + rng.gen_range(-50.0..50.0);
            let y = plant.step(u);
            let y = match noise {
                Some(d) => y + d.sample(rng),
                None => y,
            };
            (u, y)
        })
        .collect()
}

#[test]
fn c3_arx_recovery() {
    let start = Instant::now();
    let mut rng = Pcg64::seed_from_u64(2024);
    let exact = fit_arx(&arx_data(&mut rng, 50, None), REFERENCE, U0).unwrap();
    let exact_err = (exact.a - A).abs().max((exact.b - B).abs());

    let noise = Normal::new(0.0, 0.1).unwrap();
    let hits = (0..100u64)
        .filter(|trial| {
            let mut rng = Pcg64::seed_from_u64(10_000 + trial);
            let m = fit_arx(&arx_data(&mut rng, 50, Some(&noise)), REFERENCE, U0).unwrap();
            (m.a - A).abs() <= 0.05 && (m.b - B).abs() <= 0.05
        })
        .count();
    let elapsed = start.elapsed();
    let pass = exact_err < 1e-9 && hits >= 95 && within(elapsed, 5.0);
    assert!(
        verdict(
            "C3",
            "ARX recovery",
            pass,
            format!("noiseless max error {exact_err:.3e}; noisy hits {hits}/100 ({elapsed:?})")
        ),
        "criterion 3 failed"
    );
}

#[test]
fn c4_simulator_vs_theory() {
    let start = Instant::now();
    let workload = WorkloadConfig {
        mean_interarrival: 0.2,
        mean_service: 60.0,
    };
    let theory = erlang_c_wait(5.0, 1.0 / 60.0, 320).unwrap();
    let big = simulate_fixed_pool(workload, 320, 200_000, 1).unwrap();
    let big_rel = (big.mean_wait - theory) / theory;

    let tiny_workload = WorkloadConfig {
        mean_interarrival: 1.0 / 0.3,
        mean_service: 10.0,
    };
    let ctmc = ctmc_mean_wait(0.3, 0.1, 4, 400);
    let tiny = simulate_fixed_pool(tiny_workload, 4, 1_000_000, 1).unwrap();
    let tiny_rel = (tiny.mean_wait - ctmc) / ctmc;
    let elapsed = start.elapsed();

    let pass = big_rel.abs() <= 0.05 && tiny_rel.abs() <= 0.02 && within(elapsed, 30.0);
    assert!(
        verdict(
            "C4",
            "simulator vs theory",
            pass,
            format!(
                "c=320: sim {:.4} s vs Erlang-C {theory:.4} s ({:+.2}%); c=4: sim {:.4} s vs CTMC {ctmc:.4} s ({:+.2}%) ({elapsed:?})",
                big.mean_wait,
                100.0 * big_rel,
                tiny.mean_wait,
                100.0 * tiny_rel
            )
        ),
        "criterion 4 failed"
    );
}

fn hour_run(controller: ControllerKind, reference: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        controller,
        reference,
        seed,
        duration: 3600.0,
        measurement_interval: 180.0,
        sampling_window: 60.0,
        workload: WorkloadConfig {
            mean_interarrival: 0.2,
            mean_service: 60.0,
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn c5_regulation() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for controller in [ControllerKind::Prop, ControllerKind::Fuzzy] {
        for reference in [20.0, 25.0] {
            for seed in [1, 2, 3] {
                let r = run_experiment(&hour_run(controller, reference, seed)).unwrap();
                let y = r.summary.final_half_mean_response;
                let ok = (y - reference).abs() <= 0.25 * reference;
                pass &= ok;
                detail.push(format!(
                    "{}/r{reference}/s{seed}={y:.2}{}",
                    controller.as_str(),
                    if ok { "" } else { "!" }
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 30.0);
    assert!(
        verdict(
            "C5",
            "regulation",
            pass,
            format!("{} ({elapsed:?})", detail.join(" "))
        ),
        "criterion 5 failed"
    );
}

#[test]
fn c6_reference_monotonicity() {
    let start = Instant::now();
    let seed = 1;
    let mut pass = true;
    let mut detail = Vec::new();
    for controller in [ControllerKind::Prop, ControllerKind::Fuzzy] {
        let u_at = |reference| {
            run_experiment(&hour_run(controller, reference, seed))
                .unwrap()
                .summary
                .final_half_mean_max_requests
        };
        let (u20, u25) = (u_at(20.0), u_at(25.0));
        pass &= u25 < u20;
        detail.push(format!(
            "{}: u(20)={u20:.1} u(25)={u25:.1}",
            controller.as_str()
        ));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 15.0);
    assert!(
        verdict(
            "C6",
            "reference monotonicity",
            pass,
            format!("{} ({elapsed:?})", detail.join("; "))
        ),
        "criterion 6 failed"
    );
}

#[test]
fn c7_fuzzy_algebra() {
    let start = Instant::now();
    let mfs = standard_sets();
    let mut rng = Pcg64::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut worst_odd = 0.0f64;
    let out = |e: f64| normalized_output(&mfs, &RULES, Defuzzifier::CenterAverage, e);
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(-1.0..=1.0);
        worst_sum = worst_sum.max((fuzzify(&mfs, x).iter().sum::<f64>() - 1.0).abs());
        worst_odd = worst_odd.max((out(-x) + out(x)).abs());
    }
    let zero = out(0.0);
    let point = out(-0.75);
    let elapsed = start.elapsed();
    let pass = worst_sum <= 1e-12
        && worst_odd <= 1e-12
        && zero == 0.0
        && (point - 0.75).abs() <= 1e-12
        && within(elapsed, 1.0);
    assert!(
        verdict(
            "C7",
            "fuzzy algebra",
            pass,
            format!(
                "partition {worst_sum:.1e}, odd symmetry {worst_odd:.1e}, out(0)={zero}, out(-0.75)={point} ({elapsed:?})"
            )
        ),
        "criterion 7 failed"
    );
}

#[test]
fn c8_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (controller, name) in [("prop", "p"), ("fuzzy", "f"), ("fixed", "x")] {
        for round in 0..2 {
            let path = dir.path().join(format!("{name}{round}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_autotune"))
                .args([
                    "run",
                    "--controller",
                    controller,
                    "--reference",
                    "25",
                    "--seed",
                    "11",
                ])
                .arg("--out")
                .arg(&path)
                .status()
                .unwrap();
            assert!(status.success());
            outputs.push(std::fs::read(&path).unwrap());
        }
    }
    let identical = outputs
        .chunks(2)
        .all(|pair| pair[0] == pair[1] && !pair[0].is_empty());
    let elapsed = start.elapsed();
    let pass = identical && within(elapsed, 10.0);
    assert!(
        verdict(
            "C8",
            "determinism",
            pass,
            format!("3 controllers x 2 runs byte-identical={identical} ({elapsed:?})")
        ),
        "criterion 8 failed"
    );
}
