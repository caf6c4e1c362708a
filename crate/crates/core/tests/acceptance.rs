//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs as a plain binary (no libtest harness) so the summary lines are
//! always printed, in order.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use thinlb::harness::{self, parse_config, queue_terminal_samples, ExperimentConfig};
use thinlb::model::{poc_probabilities_exact, rank_vector, InitialSpec, ModelParams, Regime, ResidualRule};
use thinlb::reflect::skorokhod_map;
use thinlb::service::ServiceLaw;
use thinlb::stats::{mean_and_standard_error, modulus_of_continuity};

const CONVERGENCE: &str = include_str!("../../../configs/convergence.toml");
const UNIQUENESS: &str = include_str!("../../../configs/uniqueness.toml");
const OCCUPATION: &str = include_str!("../../../configs/occupation.toml");
const IC_ALPHA: &str = include_str!("../../../configs/ic_alpha.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (
        elapsed <= limit,
        format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

// Probability that the smallest sampled rank is r, by enumerating every draw.
fn brute_force_poc(n: usize, ell: usize, with_replacement: bool) -> Vec<BigRational> {
    let mut counts = vec![BigInt::zero(); n];
    let mut total = BigInt::zero();
    let mut draw = vec![0usize; ell];
    loop {
        let distinct = with_replacement || {
            let mut seen = vec![false; n];
            draw.iter().all(|&d| !std::mem::replace(&mut seen[d], true))
        };
        if distinct {
            counts[*draw.iter().min().unwrap()] += 1;
            total += 1;
        }
        let mut k = 0;
        while k < ell {
            draw[k] += 1;
            if draw[k] < n {
                break;
            }
            draw[k] = 0;
            k += 1;
        }
        if k == ell {
            break;
        }
    }
    counts.into_iter().map(|c| BigRational::new(c, total.clone())).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut ok = rank_vector(&[1.0, 1.0, 2.0, 2.0, 3.0]).unwrap() == vec![1, 2, 3, 4, 5]
        && rank_vector(&[1.0, 1.0, 3.0, 2.0, 2.0]).unwrap() == vec![1, 2, 5, 3, 4];
    let mut cases = 0;
    for n in 1..=6 {
        for ell in 1..=n {
            for with_replacement in [true, false] {
                let exact = poc_probabilities_exact(n, ell, with_replacement).unwrap();
                let sum: BigRational = exact.iter().cloned().fold(BigRational::zero(), |a, b| a + b);
                ok &= exact == brute_force_poc(n, ell, with_replacement) && sum == BigRational::one();
                cases += 1;
            }
        }
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(1));
    outcome(
        ok && fast,
        format!("rank examples + {cases} exact routing laws, {time}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_oracle = 0.0_f64;
    let mut bound_failures = 0;
    for _ in 0..10_000 {
        let segments = rng.random_range(1..=100);
        let mut t = vec![0.0];
        let mut y = vec![rng.random_range(-1.0..1.0)];
        for _ in 0..segments {
            t.push(t.last().unwrap() + rng.random_range(1e-3..0.1));
            y.push(y.last().unwrap() + rng.random_range(-1.0..1.0));
        }
        let pair = skorokhod_map(&t, &y).unwrap();
        // Brute force: z(t) = max(0, max_{s ≤ t} -y(s)); the extremes of a
        // piecewise-linear path sit at its breakpoints.
        let mut sup_abs = 0.0_f64;
        for k in 0..t.len() {
            let z = y[..=k].iter().fold(0.0_f64, |m, &v| m.max(-v));
            let x = y[k] + z;
            let scale = 1.0 + y[..=k].iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            worst_oracle = worst_oracle
                .max((pair.z[k] - z).abs() / scale)
                .max((pair.x[k] - x).abs() / scale);
            sup_abs = sup_abs.max(y[k].abs());
            if pair.z[k] > sup_abs {
                bound_failures += 1;
            }
        }
        let horizon = *t.last().unwrap();
        for delta in [0.01, 0.1, 1.0] {
            let wz = modulus_of_continuity(&t, &pair.z, delta, horizon).unwrap();
            let wy = modulus_of_continuity(&t, &y, delta, horizon).unwrap();
            if wz > wy + 1e-12 {
                bound_failures += 1;
            }
        }
    }
    let (fast, time) = within(start.elapsed(), Duration::from_secs(10));
    outcome(
        worst_oracle <= 4.0 * f64::EPSILON && bound_failures == 0 && fast,
        format!("max rel. oracle error {worst_oracle:.1e}, bound failures {bound_failures}, {time}"),
    )
}

fn random_law(rng: &mut ChaCha8Rng) -> ServiceLaw {
    match rng.random_range(0..4) {
        0 => ServiceLaw::Exponential,
        1 => ServiceLaw::Erlang {
            k: rng.random_range(1..5),
        },
        2 => ServiceLaw::Hyperexponential {
            cv: rng.random_range(1.1..3.0),
        },
        _ => ServiceLaw::LogNormal {
            cv: rng.random_range(0.2..2.0),
        },
    }
}

fn random_model(rng: &mut ChaCha8Rng) -> ModelParams {
    let servers = rng.random_range(1..=4);
    let ell = rng.random_range(1..=servers);
    let lambda: Vec<f64> = (0..servers).map(|_| rng.random_range(0.5..2.0)).collect();
    ModelParams {
        n: rng.random_range(1..=1000),
        lambda: lambda.clone(),
        lambda_hat: (0..servers).map(|_| rng.random_range(-0.5..0.5)).collect(),
        lambda0: rng.random_range(0.0..2.0),
        mu: lambda,
        mu_hat: (0..servers).map(|_| rng.random_range(-0.5..0.5)).collect(),
        p: thinlb::model::poc_probabilities(servers, ell, rng.random_bool(0.5)).unwrap(),
        service: (0..servers).map(|_| random_law(rng)).collect(),
        ic: InitialSpec {
            regime: Regime::Ic0,
            x0: (0..servers).map(|_| rng.random_range(0.0..2.0)).collect(),
            residual: ResidualRule::Fresh,
        },
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models: Vec<ModelParams> = (0..1000).map(|_| random_model(&mut rng)).collect();
    let results: Vec<(f64, bool)> = models
        .par_iter()
        .enumerate()
        .map(|(k, mp)| harness::queue_identity_error(mp, 1.0, k as u64).unwrap())
        .collect();
    let worst = results.iter().fold(0.0_f64, |m, r| m.max(r.0));
    let unbalanced = results.iter().filter(|r| !r.1).count();
    let (fast, time) = within(start.elapsed(), Duration::from_secs(60));
    outcome(
        worst <= 1e-9 && unbalanced == 0 && fast,
        format!("max identity error {worst:.1e}, balance failures {unbalanced}, {time}"),
    )
}

fn criterion_4() -> Outcome {
    let mp = ModelParams {
        n: 10_000,
        lambda: vec![1.0; 3],
        lambda_hat: vec![0.0; 3],
        lambda0: 1.0,
        mu: vec![1.0; 3],
        mu_hat: vec![0.0; 3],
        p: thinlb::model::poc_probabilities(3, 2, true).unwrap(),
        service: vec![ServiceLaw::Exponential; 3],
        ic: InitialSpec {
            regime: Regime::Ic0,
            x0: vec![0.0; 3],
            residual: ResidualRule::Fresh,
        },
    };
    let samples = queue_terminal_samples(&mp, 1.0, 10_000, 4).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for i in 0..3 {
        let m: Vec<f64> = samples.iter().map(|s| s.martingale[i]).collect();
        let (mean, se) = mean_and_standard_error(&m);
        pass &= mean.abs() <= 3.0 * se;
        parts.push(format!("M{}={:+.4}±{:.4}", i + 1, mean, se));
    }
    outcome(pass, parts.join(" "))
}

fn run_config(config: &ExperimentConfig, label: &str) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    match harness::run(config, dir.path()) {
        Ok(out) => {
            let failed: Vec<String> = out
                .reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| format!("{}={:.4}>{}", r.name, r.value, r.threshold))
                .collect();
            let worst = out
                .reports
                .iter()
                .map(|r| format!("{}={:.4}", r.name, r.value))
                .collect::<Vec<_>>()
                .join(" ");
            if failed.is_empty() {
                outcome(true, format!("{label}: {worst}"))
            } else {
                outcome(false, format!("{label}: {}", failed.join(" ")))
            }
        }
        Err(e) => outcome(false, format!("{label}: {e}")),
    }
}

fn combine(parts: Vec<Outcome>) -> Outcome {
    outcome(
        parts.iter().all(|p| p.pass),
        parts.into_iter().map(|p| p.detail).collect::<Vec<_>>().join(" | "),
    )
}

fn criterion_5() -> Outcome {
    run_config(&parse_config(UNIQUENESS).unwrap(), "coupled gaps")
}

fn with_service(base: &str, law: &str, seed: u64) -> ExperimentConfig {
    let mut c = parse_config(&base.replace(r#"{ law = "exponential" }"#, law)).unwrap();
    c.seed = seed;
    c
}

fn sigma_check(c: &ExperimentConfig, expected: f64) -> Outcome {
    let sigma = c.diffusion().unwrap().sigma;
    let ok = sigma.iter().all(|s| (s - expected).abs() < 1e-12);
    outcome(ok, format!("sigma={sigma:?}"))
}

fn criterion_6() -> Outcome {
    let c = parse_config(CONVERGENCE).unwrap();
    let dp = c.diffusion().unwrap();
    let b_ok = dp.b == vec![0.75, 0.25];
    combine(vec![
        outcome(b_ok, format!("b={:?}", dp.b)),
        sigma_check(&c, 2f64.sqrt()),
        run_config(&c, "exponential"),
    ])
}

fn criterion_7() -> Outcome {
    let erlang = with_service(CONVERGENCE, r#"{ law = "erlang", k = 2 }"#, 20240701);
    let hyper = with_service(CONVERGENCE, r#"{ law = "hyperexponential", cv = 2.0 }"#, 20240702);
    combine(vec![
        sigma_check(&erlang, 1.5f64.sqrt()),
        run_config(&erlang, "erlang-2"),
        sigma_check(&hyper, 5f64.sqrt()),
        run_config(&hyper, "hyperexponential-2"),
    ])
}

fn criterion_8() -> Outcome {
    let c = parse_config(IC_ALPHA).unwrap();
    let unreflected = !c.reflected();
    combine(vec![
        outcome(unreflected, "unreflected limit"),
        run_config(&c, "ic-alpha"),
    ])
}

fn criterion_9() -> Outcome {
    run_config(&parse_config(OCCUPATION).unwrap(), "occupation")
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn cli_run(config: &Path, out: &Path, jobs: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_thinlb"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--jobs", jobs])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_10() -> Outcome {
    let queue = r#"
kind = "queue"
seed = 11
replications = 3
horizon = 1.0
n_ladder = [25, 400]

[model]
lambda = [1.0, 1.0, 1.0]
lambda0 = 1.0
service = { law = "hyperexponential", cv = 2.0 }
routing = { policy = "power-of-choice", ell = 2, replacement = false }
initial = { regime = "ic0", x0 = [0.5, 0.0, 1.0] }
"#;
    let small_convergence = CONVERGENCE.replace("replications = 2000", "replications = 50");
    let small_uniqueness = UNIQUENESS.replace("replications = 100", "replications = 5");
    let mut parts = Vec::new();
    for (label, text) in [
        ("queue", queue),
        ("convergence", &small_convergence),
        ("uniqueness", &small_uniqueness),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.toml");
        std::fs::write(&config, text).unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        let ran = cli_run(&config, &a, "1") && cli_run(&config, &b, "4") && cli_run(&a.join("manifest.toml"), &c, "2");
        let same = ran && {
            let fa = files_of(&a);
            !fa.is_empty() && fa == files_of(&b) && fa == files_of(&c)
        };
        parts.push(outcome(
            same,
            format!("{label}: {}", if same { "identical" } else { "differs" }),
        ));
    }
    combine(parts)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("exact ranks and routing probabilities", criterion_1),
        ("Skorokhod map vs running-max oracle", criterion_2),
        ("balance and reflection identity on queue paths", criterion_3),
        ("routed-arrival martingale centred", criterion_4),
        ("pathwise-uniqueness contraction", criterion_5),
        ("diffusion-limit convergence", criterion_6),
        ("invariance across service laws", criterion_7),
        ("large initial condition regime", criterion_8),
        ("collision-time occupation", criterion_9),
        ("deterministic re-runs", criterion_10),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failures += usize::from(!o.pass);
        println!(
            "criterion {:>2} {} - {name} [{:.1}s] {}",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
