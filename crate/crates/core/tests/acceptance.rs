//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the report is printed even when every
//! criterion passes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bubsim::arrivals::{apply_peaks, generate_poisson_series, synthetic_cases, CaseSeries, PeakEvent};
use bubsim::engine::{replicate, sample_duration, simulate_with_paths, PathSampler};
use bubsim::ground_truth::{windowed_incidence, DemandSeries};
use bubsim::objective::{weighted_rmse, EvaluationRecord, FnObjective, ObjectiveSpec, Weights};
use bubsim::optimizer::{latin_hypercube, optimize, OptimizerOptions, Surrogate, SurrogateOptions};
use bubsim::scenario::{states, ParameterVector, ResourceKind, ScenarioConfig};
use bubsim::sensitivity::{fit_tree, stepwise_regression, DEFAULT_ALPHA, DEFAULT_MAX_DEPTH, DEFAULT_MIN_LEAF};

type Verdict = (bool, String);

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 9, 1).unwrap()
}

fn random_vector(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> ParameterVector {
    let values = config
        .registry
        .bounds()
        .iter()
        .map(|&(lo, hi)| if lo < hi { rng.random_range(lo..=hi) } else { lo })
        .collect();
    config.registry.vector(values).unwrap()
}

fn optimization_improvement() -> Verdict {
    let mut lines = Vec::new();
    let mut wins = 0;
    let mut slow = false;
    for seed in [1u64, 2, 3] {
        let t0 = Instant::now();
        let mut config = ScenarioConfig::canonical();
        config.seed = seed;
        let cases = synthetic_cases(&config.arrivals, &config.horizon, seed).unwrap();
        let spec = ObjectiveSpec::from_cases(config.clone(), cases).unwrap();
        let default = spec.evaluate(&config.registry.defaults()).unwrap().epsilon;
        let options = OptimizerOptions { budget: 200, seed, ..Default::default() };
        let state = optimize(&spec, &options).unwrap();
        let best = state.best().unwrap().epsilon;
        let elapsed = t0.elapsed();
        slow |= elapsed > Duration::from_secs(600);
        let ratio = best / default;
        if ratio <= 0.80 {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {default:.3} -> {best:.3} (ratio {ratio:.3}, {:.0} s)", elapsed.as_secs_f64()));
    }
    (wins >= 2 && !slow, format!("{wins}/3 runs at ratio <= 0.80; {}", lines.join("; ")))
}

fn naive_incidence(u: &[u32]) -> Vec<f64> {
    (0..u.len())
        .map(|t| {
            let mut s = 0.0;
            for i in 0..=14 {
                if t >= i {
                    s += u[t - i] as f64;
                }
            }
            s
        })
        .collect()
}

fn ground_truth_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0 = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let counts: Vec<u32> = (0..91).map(|_| rng.random_range(0..200)).collect();
        let series = CaseSeries::new(start(), counts);
        if windowed_incidence(&series) != naive_incidence(&series.counts) {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    (
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("{mismatches} mismatches over 1000 series in {:.3} s", elapsed.as_secs_f64()),
    )
}

fn objective_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = DemandSeries::zeros(start(), 91);
    for k in ResourceKind::ALL {
        for v in x.get_mut(k).iter_mut() {
            *v = rng.random_range(0.0..50.0);
        }
    }
    let identity = weighted_rmse(&x, &x, &Weights::default()).unwrap();
    let truth = DemandSeries::zeros(start(), 2);
    let mut sim = DemandSeries::zeros(start(), 2);
    *sim.get_mut(ResourceKind::Bed) = vec![3.0, 4.0];
    let hand = weighted_rmse(&truth, &sim, &Weights::default()).unwrap();
    let expected = 12.5f64.sqrt() / 3.0;
    (
        identity == 0.0 && (hand - expected).abs() <= 1e-12,
        format!("eps(x, x) = {identity}; worked example {hand} vs {expected}"),
    )
}

fn engine_conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    for trial in 0..100 {
        let mut config = ScenarioConfig::canonical();
        config.horizon.days = rng.random_range(20..120);
        let days = config.horizon.days;
        let lambda = rng.random_range(0.5..8.0);
        let base = generate_poisson_series(lambda, days, start(), rng.random()).unwrap();
        let peaks = [PeakEvent { day_index: rng.random_range(0..days), extra_count: rng.random_range(0..60) }];
        let cases = apply_peaks(&base, &peaks).unwrap();
        let vector = random_vector(&config, &mut rng);
        let (result, paths) = simulate_with_paths(&config, &vector, &cases, rng.random()).unwrap();
        let table = config.mapping.table(&config.graph);
        let mut cumulative = 0u64;
        for t in 0..days {
            cumulative += cases.counts[t] as u64;
            let mut recount = [0.0; 3];
            for p in &paths {
                for v in &p.visits {
                    // the patient occupies the state at the instant t
                    if let Some(k) = table[v.state] {
                        if v.entry <= t as f64 && (t as f64) < v.exit {
                            recount[k.index()] += 1.0;
                        }
                    }
                }
            }
            let mut total = 0.0;
            for k in ResourceKind::ALL {
                let reported = result.demand.get(k)[t];
                total += reported;
                if reported != recount[k.index()] {
                    failures.push(format!("trial {trial} day {t} {k}: {reported} vs {}", recount[k.index()]));
                }
            }
            if total > cumulative as f64 {
                failures.push(format!("trial {trial} day {t}: demand {total} > infections {cumulative}"));
            }
        }
        if paths.len() as u64 != cases.total() {
            failures.push(format!("trial {trial}: {} paths for {} infections", paths.len(), cases.total()));
        }
    }
    let detail = match failures.first() {
        None => "100 scenarios, re-derived occupancy identical, demand <= cumulative infections".to_string(),
        Some(f) => format!("{} violations, first: {f}", failures.len()),
    };
    (failures.is_empty(), detail)
}

fn branch_statistics() -> Verdict {
    let config = ScenarioConfig::canonical();
    let defaults = config.registry.defaults();
    let bound = config.graph.bind(&config.registry, &defaults).unwrap();
    let sampler = PathSampler::new(&bound).unwrap();
    let nor = config.graph.state_index(states::NOR).unwrap();
    let p = defaults.get(&config.registry, "PercentageInfectedToHospital").unwrap();
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    for _ in 0..n {
        let path = sampler.sample(0, &mut rng).unwrap();
        let next = path.visits.get(1).map_or(path.terminal, |v| v.state);
        if next == nor {
            hits += 1;
        }
    }
    let freq = hits as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let branch_ok = (freq - p).abs() <= 3.0 * sigma;

    let shape = defaults.get(&config.registry, "GammaShapeParameter").unwrap();
    let mut worst: f64 = 0.0;
    let mut means: Vec<f64> = Vec::new();
    for edge in config.graph.edges() {
        means.push(defaults.get(&config.registry, &edge.duration).unwrap());
    }
    means.dedup();
    for (i, &mean) in means.iter().enumerate() {
        for k in [shape, 0.5, 5.0] {
            let mut r = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let draws = 100_000;
            let s: f64 = (0..draws).map(|_| sample_duration(mean, k, &mut r).unwrap()).sum();
            worst = worst.max((s / draws as f64 - mean).abs() / mean);
        }
    }
    (
        branch_ok && worst <= 0.015,
        format!(
            "INF->NOR {freq:.4} vs p {p:.4} (3 sigma = {:.4}); worst Gamma mean error {:.3}% over {} means x 3 shapes",
            3.0 * sigma,
            100.0 * worst,
            means.len()
        ),
    )
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn optimizer_sanity() -> Verdict {
    let t0 = Instant::now();
    let bounds = vec![(-1.0, 1.0); 5];
    let f = FnObjective::new(bounds.clone(), sphere);
    let mut wins = 0;
    let mut worst_best: f64 = 0.0;
    for trial in 0..10u64 {
        let options = OptimizerOptions { budget: 60, seed: trial, ..Default::default() };
        let best = optimize(&f, &options).unwrap().best().unwrap().epsilon;
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let random = (0..60)
            .map(|_| sphere(&bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        worst_best = worst_best.max(best);
        if best < random {
            wins += 1;
        }
    }
    let elapsed = t0.elapsed();
    (
        worst_best < 0.1 && wins >= 9 && elapsed < Duration::from_secs(30),
        format!(
            "worst best-of-60 {worst_best:.4}; beats random search in {wins}/10; {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn surrogate_interpolation() -> Verdict {
    let bounds = vec![(-1.0, 1.0); 3];
    let design = latin_hypercube(20, &bounds, 7).unwrap();
    let f = |p: &[f64]| sphere(p) + 0.5 * (3.0 * p[0]).sin() + 2.0;
    let y: Vec<f64> = design.points.iter().map(|p| f(p)).collect();
    let s = Surrogate::fit(&design.points, &y, &bounds, &SurrogateOptions::interpolating()).unwrap();
    let worst = design
        .points
        .iter()
        .zip(&y)
        .map(|(p, &v)| (s.predict_mean(p) - v).abs() / v.abs())
        .fold(0.0, f64::max);
    (worst <= 1e-6, format!("worst relative error {worst:.2e} over 20 training points"))
}

fn sensitivity_recovery() -> Verdict {
    let d = 22;
    let (a, b) = (3, 16);
    let names: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<EvaluationRecord> = (0..150)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let y = 2.0 * x[a] - 3.0 * x[b];
            EvaluationRecord::scalar(x, y)
        })
        .collect();
    let report = stepwise_regression(&records, &names, DEFAULT_ALPHA).unwrap();
    let selected = report.selected();
    let ca = report.coefficient(&names[a]).map_or(f64::NAN, |c| c.estimate);
    let cb = report.coefficient(&names[b]).map_or(f64::NAN, |c| c.estimate);
    let regression_ok = selected == [names[a].as_str(), names[b].as_str()]
        && (ca - 2.0).abs() <= 1e-6
        && (cb + 3.0).abs() <= 1e-6;
    let tree = fit_tree(&records, &names, DEFAULT_MAX_DEPTH, DEFAULT_MIN_LEAF).unwrap();
    let splits = tree.split_variables();
    let tree_ok = !splits.is_empty() && splits.iter().all(|v| *v == names[a] || *v == names[b]);
    (
        regression_ok && tree_ok,
        format!("selected {selected:?} with coefficients ({ca:.9}, {cb:.9}); tree splits {splits:?}"),
    )
}

fn performance() -> Verdict {
    let config = ScenarioConfig::canonical();
    let cases = synthetic_cases(&config.arrivals, &config.horizon, config.seed).unwrap();
    let vector = config.registry.defaults();
    let t0 = Instant::now();
    let first = replicate(&config, &vector, &cases).unwrap();
    let elapsed = t0.elapsed();
    let second = replicate(&config, &vector, &cases).unwrap();
    let deterministic = first == second;
    (
        elapsed < Duration::from_secs(1) && deterministic && cases.total() >= 400,
        format!(
            "{} patients x {} replications in {:.1} ms; repeated run identical: {deterministic}",
            cases.total(),
            config.replications,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("optimization improvement", optimization_improvement),
        ("ground-truth oracle equivalence", ground_truth_oracle),
        ("objective identity and hand value", objective_identity),
        ("engine conservation", engine_conservation),
        ("branch-frequency statistics", branch_statistics),
        ("optimizer sanity on the sphere", optimizer_sanity),
        ("surrogate interpolation", surrogate_interpolation),
        ("sensitivity recovery", sensitivity_recovery),
        ("performance envelope", performance),
    ];
    // `cargo test -- <n>...` runs only the listed criteria
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
