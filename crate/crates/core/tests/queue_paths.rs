use thinlb::harness::parse_model;
use thinlb::queue::{scaled_path, simulate};

const MODEL: &str = r#"
lambda = [1.0, 2.0, 0.5]
lambda_hat = [0.3, -0.2, 0.0]
lambda0 = 1.5
mu_hat = [0.0, 0.1, -0.1]
service = [{ law = "erlang", k = 3 }, { law = "hyperexponential", cv = 1.8 }, { law = "log-normal", cv = 0.7 }]
routing = { policy = "power-of-choice", ell = 2, replacement = false }
initial = { regime = "ic0", x0 = [0.2, 0.0, 0.4] }
"#;

#[test]
fn local_time_grows_only_while_empty() {
    let mp = parse_model(MODEL).unwrap().params(200).unwrap();
    for seed in 0..20 {
        let log = simulate(&mp, 2.0, seed).unwrap();
        let path = scaled_path(&log, &mp, &mp.ic.regime).unwrap();
        for i in 0..3 {
            for k in 1..path.grid.len() {
                let dl = path.l_hat[i][k] - path.l_hat[i][k - 1];
                assert!(dl >= 0.0, "seed {seed} server {i}: L̂ decreased");
                // The queue is constant on (t_{k-1}, t_k); idling needs it empty.
                if dl > 0.0 {
                    assert_eq!(path.x[i][k - 1], 0, "seed {seed} server {i}: idle while busy");
                }
            }
            assert!(path.x_scaled[i].iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn routed_arrivals_sum_to_stream() {
    let mp = parse_model(MODEL).unwrap().params(500).unwrap();
    let log = simulate(&mp, 1.0, 3).unwrap();
    let path = scaled_path(&log, &mp, &mp.ic.regime).unwrap();
    for k in 0..path.grid.len() {
        let total: f64 = (0..3).map(|i| path.a_hat[i][k]).sum();
        assert!((total - path.a0_hat[k]).abs() < 1e-12);
    }
}

#[test]
fn routing_frequencies_follow_rank_law() {
    // Each stream job goes to rank r with probability p_r; check by chi-square.
    let mp = parse_model(MODEL).unwrap().params(2000).unwrap();
    let mut counts = [0u64; 3];
    for seed in 0..10 {
        let log = simulate(&mp, 1.0, seed).unwrap();
        for (k, kind) in log.kinds.iter().enumerate() {
            if let thinlb::queue::EventKind::LbsArrival { server, .. } = kind {
                counts[log.ranks_before(k)[*server] - 1] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    // Without replacement the longest queue is never sampled alone.
    assert_eq!(mp.p[2], 0.0);
    assert_eq!(counts[2], 0);
    let chi2: f64 = (0..2)
        .map(|r| {
            let expected = mp.p[r] * total as f64;
            (counts[r] as f64 - expected).powi(2) / expected
        })
        .sum();
    // 0.999 quantile of chi-square with 1 degree of freedom.
    assert!(chi2 < 10.83, "chi2 = {chi2}, counts {counts:?}, total {total}");
}
