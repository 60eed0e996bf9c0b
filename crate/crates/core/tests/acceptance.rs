//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::json;
use signfl::aggregation::exhaustive_sweep;
use signfl::analysis::{
    audit_dp, check_trajectory, clipped_variance_check, default_pair_grid, replicate, sign_error_frequency,
    signerr_threshold, BoundInputs, Verdict,
};
use signfl::compressor::{compress_scalar, epsilon_worst_case, flip, prob_plus_one, CompressorParams, Epsilon, Sign};
use signfl::orchestrator::{initial_point, Experiment, ExperimentConfig};
use signfl::rng::derive_rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("aggregation sign equivalence", c1_aggregation),
        ("epsilon arithmetic", c2_epsilon),
        ("non-privacy at beta = 0", c3_non_private),
        ("DP cap at beta > 0", c4_dp_cap),
        ("flip composition", c5_composition),
        ("worked-example probabilities", c6_probabilities),
        ("sign-error threshold", c7_sign_error),
        ("convergence bound", c8_convergence),
        ("MNIST softmax under attack", c9_mnist),
        ("clipped variance", c10_clipped_variance),
        ("run determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn params(b: f64, beta: f64) -> CompressorParams {
    CompressorParams::new(b, beta).unwrap()
}

fn c1_aggregation() -> Outcome {
    let start = Instant::now();
    let r = exhaustive_sweep(5, 2).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(5))?;
    ensure(r.passed(), || {
        format!("{} of {} matrices disagree", r.failures, r.matrices)
    })?;
    Ok(format!(
        "{} matrices, {} rule comparisons, all agree",
        r.matrices, r.checks
    ))
}

fn c2_epsilon() -> Outcome {
    let expected = [(0.1, 3.04), (1.0, 1.10), (5.0, 0.34), (10.0, 0.18)];
    let b = 0.7;
    let mut got = Vec::new();
    for (ratio, want) in expected {
        for d in [1usize, 10, 784] {
            let eps = match epsilon_worst_case(&params(b, ratio * b), d) {
                Epsilon::Private(e) => e,
                Epsilon::NonPrivate => return Err(format!("beta/B = {ratio} reported non-private")),
            };
            let per_coord = eps / d as f64;
            ensure((per_coord * 100.0).round() / 100.0 == want, || {
                format!("beta/B = {ratio}, d = {d}: {per_coord:.4}·d, expected {want}·d")
            })?;
            if d == 1 {
                got.push(format!("{per_coord:.2}d"));
            }
        }
    }
    Ok(got.join(", "))
}

fn c3_non_private() -> Outcome {
    let b = 1.0;
    let report = audit_dp(&params(b, 0.0), &default_pair_grid(b, 41), 100_000, 0).map_err(|e| e.to_string())?;
    ensure(report.verdict == Verdict::NonPrivate, || {
        format!("verdict {:?}", report.verdict)
    })?;
    let w = report.witness.ok_or("no witness")?;
    ensure((w.g - w.g_prime).abs() <= 1.0, || format!("pair {w:?} not adjacent"))?;
    ensure(w.p_at_g == 0.0, || format!("P at g = {}", w.p_at_g))?;
    ensure(w.p_at_g_prime >= 1.0 / (2.0 * b), || {
        format!("P at g' = {}", w.p_at_g_prime)
    })?;
    let status = Command::new(env!("CARGO_BIN_EXE_signfl"))
        .args(["audit", "--B", "1", "--beta", "0", "--samples", "100000"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.code() == Some(3), || {
        format!("CLI exit code {:?}", status.status.code())
    })?;
    Ok(format!(
        "P({:?}|{}) = 0, P({:?}|{}) = {}, CLI exit 3",
        w.outcome, w.g, w.outcome, w.g_prime, w.p_at_g_prime
    ))
}

fn c4_dp_cap() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    for (b, beta) in [(1.0, 1.0), (1.0, 0.1)] {
        let p = params(b, beta);
        let r = audit_dp(&p, &default_pair_grid(b, 41), 1_000_000, 7).map_err(|e| e.to_string())?;
        let cap = r.cap.value().ok_or("cap is infinite")?;
        for a in &r.pairs {
            let slack = r.slack_sigmas * a.std_error;
            let refined = a.refined_cap.ok_or("missing refinement")?;
            ensure(a.empirical_log_ratio <= cap + slack, || {
                format!(
                    "B={b} beta={beta} pair ({}, {}): {} > {cap} + {slack}",
                    a.g, a.g_prime, a.empirical_log_ratio
                )
            })?;
            ensure(a.empirical_log_ratio <= refined + slack, || {
                format!(
                    "B={b} beta={beta} pair ({}, {}): {} > refined {refined} + {slack}",
                    a.g, a.g_prime, a.empirical_log_ratio
                )
            })?;
        }
        ensure(r.verdict == Verdict::Pass, || format!("verdict {:?}", r.verdict))?;
        details.push(format!("B={b} beta={beta}: max {:.4} <= cap {cap:.4}", r.empirical_max));
    }
    within(start, Duration::from_secs(60))?;
    Ok(details.join("; "))
}

fn c5_composition() -> Outcome {
    let b = 0.1;
    let p = params(b, 0.1);
    let p0 = params(b, 0.0);
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut points: Vec<f64> = [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0].iter().map(|k| k * b).collect();
    points.push(-0.05);
    for (j, &g) in points.iter().enumerate() {
        let mut direct = derive_rng(11, j as u64, 0);
        let mut composed = derive_rng(11, j as u64, 1);
        let mut plus_direct = 0usize;
        let mut plus_composed = 0usize;
        for _ in 0..n {
            if compress_scalar(g, &p, &mut direct) == Sign::Plus {
                plus_direct += 1;
            }
            let s = compress_scalar(g, &p0, &mut composed);
            if flip(s, &p, &mut composed).map_err(|e| e.to_string())? == Sign::Plus {
                plus_composed += 1;
            }
        }
        let tv = (plus_direct as f64 - plus_composed as f64).abs() / n as f64;
        ensure(tv < 0.005, || format!("g = {g}: TV {tv}"))?;
        worst = worst.max(tv);
        // the composed mechanism must also hit the exact marginal
        let exact = prob_plus_one(g, &p).unwrap();
        let freq = plus_composed as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        ensure((freq - exact).abs() <= 4.0 * se, || {
            format!("g = {g}: composed P(+1) {freq} vs {exact}")
        })?;
    }
    ensure(prob_plus_one(0.1, &p).unwrap() == 0.75, || "P(+1 | 0.1) != 0.75".into())?;
    ensure(1.0 - prob_plus_one(-0.05, &p).unwrap() == 0.625, || {
        "P(-1 | -0.05) != 0.625".into()
    })?;
    Ok(format!("max TV {worst:.5} over {} points at {n} samples", points.len()))
}

fn c6_probabilities() -> Outcome {
    let p = params(0.1, 0.1);
    let a = prob_plus_one(0.1, &p).unwrap();
    let b = prob_plus_one(-0.05, &p).unwrap();
    ensure(a == 0.75 && b == 0.375, || format!("got {a:?} and {b:?}"))?;
    Ok(format!("P(+1|0.1) = {a}, P(+1|-0.05) = {b}"))
}

/// Homogeneous quadratic: every client has optimum 0, so `∇F(w) = w`.
fn sign_error_config(tau: usize) -> ExperimentConfig {
    let (clients, d) = (100, 4);
    let cfg = json!({
        "M": clients, "p": 1.0, "T": 1, "n": 32, "B": 1.0, "beta": 0.01, "c": 0.5,
        "task": {
            "kind": "quadratic", "d": d, "sigma": 0.1, "domain_radius": 0.8,
            "optima": vec![vec![0.0; d]; clients],
        },
        "adversary": {"mode": "adaptive", "tau": tau, "attack": "sign_flip"},
        "seed": 31,
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn c7_sign_error() -> Outcome {
    let rounds = 2000;
    let mut details = Vec::new();
    for tau in [0, 10] {
        let config = sign_error_config(tau);
        let exp = Experiment::new(config.clone()).map_err(|e| e.to_string())?;
        let task = exp.task.as_task();
        let inputs = BoundInputs::from_config(&config, task, 0.0);
        let threshold = signerr_threshold(&inputs, 0).map_err(|e| e.to_string())?;
        let level = 1.2 * threshold;
        ensure(level <= task.metadata().grad_bound, || {
            format!(
                "1.2x threshold {level} leaves the domain (B0 = {})",
                task.metadata().grad_bound
            )
        })?;
        let w: Vec<f64> = (0..task.dim())
            .map(|i| if i % 2 == 0 { level } else { -level })
            .collect();
        let check = sign_error_frequency(&config, task, &w, rounds).map_err(|e| e.to_string())?;
        let worst = check.frequency.iter().copied().fold(0.0, f64::max);
        ensure(check.gradient_abs.iter().all(|&g| g >= check.threshold), || {
            "gradient below threshold".into()
        })?;
        ensure(check.passed, || {
            format!("tau={tau}: frequency {worst} > {}", check.limit)
        })?;
        details.push(format!(
            "tau={tau}: threshold {threshold:.4}, max freq {worst:.4} <= {:.4}",
            check.limit
        ));
    }
    Ok(details.join("; "))
}

fn convergence_config(p: f64, tau: usize) -> ExperimentConfig {
    let cfg = json!({
        "M": 100, "p": p, "T": 1000, "eta": "auto", "n": 32, "B": 8.0, "beta": 0.5, "c": 0.5,
        "task": {"kind": "quadratic", "d": 10, "heterogeneity": 0.5, "sigma": 1.0, "domain_radius": 4.0},
        "adversary": {"mode": "adaptive", "tau": tau, "attack": "sign_flip"},
        "w0": vec![3.0; 10],
        "seed": 500,
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn c8_convergence() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    for p in [0.5, 1.0] {
        let mut previous = f64::NEG_INFINITY;
        for tau in [0, 10] {
            let config = convergence_config(p, tau);
            let exp = Experiment::new(config.clone()).map_err(|e| e.to_string())?;
            let task = exp.task.as_task();
            let runs = replicate(&config, task, 10).map_err(|e| e.to_string())?;
            let f0 = task.loss(&initial_point(&config, task).map_err(|e| e.to_string())?);
            let check =
                check_trajectory(&runs, &BoundInputs::from_config(&config, task, f0)).map_err(|e| e.to_string())?;
            let bound = check.bound.as_ref().ok_or("bound skipped")?.value;
            ensure(check.passed, || {
                format!("p={p} tau={tau}: mean {} > bound {bound}", check.empirical_mean)
            })?;
            ensure(check.empirical_mean >= previous, || {
                format!(
                    "p={p}: mean fell from {previous} to {} at tau={tau}",
                    check.empirical_mean
                )
            })?;
            previous = check.empirical_mean;
            details.push(format!("p={p} tau={tau}: {:.3} <= {bound:.1}", check.empirical_mean));
        }
    }
    within(start, Duration::from_secs(300))?;
    Ok(details.join("; "))
}

fn mnist_dir() -> PathBuf {
    match std::env::var_os("SIGNFL_MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

fn mnist_config(tau: usize) -> ExperimentConfig {
    let cfg = json!({
        "M": 100, "p": 0.5, "T": 500, "eta": "auto", "n": 256, "B": 0.01, "beta": 0.01,
        "task": {
            "kind": "mnist", "dir": mnist_dir(), "train_samples": 10000, "alpha": 1.0,
            "partition": "balanced", "evaluate_test": true,
        },
        "adversary": {"mode": "adaptive", "tau": tau, "attack": "sign_flip"},
        "seed": 2024,
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn c9_mnist() -> Outcome {
    let dir = mnist_dir();
    ensure(dir.join("train-images-idx3-ubyte").exists(), || {
        format!("MNIST not found in {}; run scripts/fetch_mnist.sh", dir.display())
    })?;
    let mut accuracy = Vec::new();
    let mut clean_losses = Vec::new();
    for tau in [0, 10] {
        let exp = Experiment::new(mnist_config(tau)).map_err(|e| e.to_string())?;
        let traj = exp.run().map_err(|e| e.to_string())?;
        let acc = exp
            .test_accuracy(&traj.final_w)
            .map_err(|e| e.to_string())?
            .ok_or("no test set")?;
        accuracy.push(acc);
        if tau == 0 {
            clean_losses = traj.losses();
        }
    }
    let gap = (accuracy[0] - accuracy[1]).abs();
    ensure(gap <= 0.05, || {
        format!("accuracy {:.4} vs {:.4}", accuracy[0], accuracy[1])
    })?;
    let windows: Vec<f64> = clean_losses
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    if let Some(k) = windows.windows(2).position(|w| w[1] > w[0]) {
        return Err(format!(
            "window {} loss {} rose to {}",
            k + 1,
            windows[k],
            windows[k + 1]
        ));
    }
    Ok(format!(
        "test accuracy {:.4} (tau=0) vs {:.4} (tau=10), {} decreasing loss windows",
        accuracy[0],
        accuracy[1],
        windows.len()
    ))
}

fn c10_clipped_variance() -> Outcome {
    let mut details = Vec::new();
    for (b, sigma) in [(1.0, 0.5), (1.0, 2.0), (0.1, 0.3)] {
        let means: Vec<f64> = (0..=10).map(|k| b * (-1.0 + 0.2 * k as f64)).collect();
        let pts = clipped_variance_check(b, sigma, &means, 200_000, 17).map_err(|e| e.to_string())?;
        if let Some(bad) = pts.iter().find(|p| !p.passed) {
            return Err(format!("B={b} sigma={sigma}: {bad:?}"));
        }
        let ratio = pts
            .iter()
            .map(|p| p.clipped_variance / p.raw_variance)
            .fold(0.0, f64::max);
        details.push(format!("B={b} sigma={sigma}: max ratio {ratio:.3}"));
    }
    Ok(details.join("; "))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let quadratic = json!({
        "M": 30, "p": 0.4, "T": 200, "n": 3, "B": 2.0, "beta": 0.3, "aggregation": {"trimmed": 2},
        "task": {"kind": "quadratic", "d": 6, "heterogeneity": 1.0, "sigma": 0.5, "domain_radius": 5.0},
        "adversary": {"mode": "static", "tau": [1, 3, 5], "attack": "random_sign"},
        "seed": 99,
    });
    let mut configs = vec![("quadratic", quadratic)];
    if mnist_dir().join("train-images-idx3-ubyte").exists() {
        configs.push((
            "mnist",
            json!({
                "M": 20, "p": 0.5, "T": 20, "n": 16, "B": 0.05, "beta": 0.05,
                "task": {"kind": "mnist", "dir": mnist_dir(), "train_samples": 2000, "alpha": 0.5,
                         "arch": {"mlp": {"hidden": 8}}},
                "w0": "task_default",
                "adversary": {"mode": "adaptive", "tau": 2},
                "seed": 3,
            }),
        ));
    }
    let mut details = Vec::new();
    for (name, cfg) in configs {
        let path = dir.path().join(format!("{name}.json"));
        std::fs::write(&path, cfg.to_string()).map_err(|e| e.to_string())?;
        let mut csvs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{name}-{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_signfl"))
                .arg("run")
                .arg("--config")
                .arg(&path)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            ensure(status.status.success(), || {
                format!("{name}: {}", String::from_utf8_lossy(&status.stderr))
            })?;
            csvs.push(std::fs::read(out.join("trajectory.csv")).map_err(|e| e.to_string())?);
        }
        ensure(csvs[0] == csvs[1], || format!("{name}: CSVs differ"))?;
        details.push(format!("{name}: {} identical bytes", csvs[0].len()));
    }
    Ok(details.join("; "))
}
