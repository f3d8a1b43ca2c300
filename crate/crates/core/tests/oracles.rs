//! Cross-checks against references computed independently in this file.

use aoi_core::delivery::error_prob_from_sums;
use aoi_core::presets::default_channel;
use aoi_core::*;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn config(u: usize, e: usize, alpha: f64, eta: f64, mode: DecodingMode) -> SystemConfig {
    SystemConfig::new(u, e, alpha, eta, default_channel(), mode).unwrap()
}

/// One device's battery move: returns `(next level, probability)` pairs
/// given whether it transmits.
fn battery_moves(b: usize, e: usize, eta: f64, transmits: bool) -> Vec<(usize, f64)> {
    if transmits {
        vec![(0, 1.0)]
    } else if b < e {
        vec![(b, 1.0 - eta), (b + 1, eta)]
    } else {
        vec![(e, 1.0)]
    }
}

/// Physical probability that device 0 is decoded, given which devices
/// transmit and their levels.
fn tagged_decoded(levels: &[usize], tx: &[bool], mode: DecodingMode, ch: &Channel) -> f64 {
    if !tx[0] {
        return 0.0;
    }
    let b = levels[0];
    let others: Vec<usize> = (1..levels.len()).filter(|&d| tx[d]).map(|d| levels[d]).collect();
    match mode {
        DecodingMode::NoCapture => {
            if others.is_empty() {
                1.0 - error_prob_from_sums(ch, b, 0.0, 0.0)
            } else {
                0.0
            }
        }
        DecodingMode::Capture => {
            // every packet above b must be decoded, each against all packets
            // at or below its own level except itself
            let all: Vec<usize> = others.iter().copied().chain([b]).collect();
            let mut p = 1.0;
            let mut above: Vec<usize> = others.iter().copied().filter(|&j| j > b).collect();
            above.sort_unstable_by(|a, c| c.cmp(a));
            let mut levels_above: Vec<usize> = above.clone();
            levels_above.dedup();
            for &j in &levels_above {
                let present: Vec<usize> = all.iter().copied().filter(|&i| i <= j).collect();
                let s1: f64 = present.iter().map(|&i| i as f64).sum::<f64>() - j as f64;
                let s2: f64 = present.iter().map(|&i| (i * i) as f64).sum::<f64>() - (j * j) as f64;
                let k = above.iter().filter(|&&i| i == j).count() as i32;
                p *= (1.0 - error_prob_from_sums(ch, j, s1, s2)).powi(k);
            }
            let present: Vec<usize> = others.iter().copied().filter(|&i| i <= b).collect();
            let s1: f64 = present.iter().map(|&i| i as f64).sum();
            let s2: f64 = present.iter().map(|&i| (i * i) as f64).sum();
            p * (1.0 - error_prob_from_sums(ch, b, s1, s2))
        }
    }
}

/// Time-average AoI of device 0 and its mean inter-refresh time, from the
/// joint chain of every device's battery.
fn joint_chain_reference(config: &SystemConfig, policy: &TransmissionPolicy) -> (f64, f64) {
    let u = config.device_count;
    let e = config.battery_capacity;
    let base = e + 1;
    let n = base.pow(u as u32);
    let decode = |s: usize| -> Vec<usize> { (0..u).map(|d| (s / base.pow(d as u32)) % base).collect() };
    let encode = |levels: &[usize]| -> usize { levels.iter().rev().fold(0, |acc, &b| acc * base + b) };
    let mut k_fail = DMatrix::<f64>::zeros(n, n);
    let mut k_succ = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        let levels = decode(s);
        for mask in 0..(1usize << u) {
            let tx: Vec<bool> = (0..u).map(|d| mask >> d & 1 == 1).collect();
            let mut p = 1.0;
            for d in 0..u {
                let q = if levels[d] == 0 {
                    0.0
                } else {
                    config.update_prob * policy.prob(levels[d])
                };
                p *= if tx[d] { q } else { 1.0 - q };
            }
            if p == 0.0 {
                continue;
            }
            let ok = tagged_decoded(&levels, &tx, config.decoding_mode, &config.channel);
            let mut nexts = vec![(Vec::new(), 1.0)];
            for d in 0..u {
                let mut grown = Vec::new();
                for (prefix, pp) in &nexts {
                    for (nb, q) in battery_moves(levels[d], e, config.harvest_prob, tx[d]) {
                        let mut v: Vec<usize> = prefix.clone();
                        v.push(nb);
                        grown.push((v, pp * q));
                    }
                }
                nexts = grown;
            }
            for (v, q) in nexts {
                let t = encode(&v);
                k_succ[(s, t)] += p * q * ok;
                k_fail[(s, t)] += p * q * (1.0 - ok);
            }
        }
    }
    let k = &k_fail + &k_succ;
    let mut a = k.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs).unwrap();
    let rate = (&k_succ * DVector::from_element(n, 1.0)).dot(&pi);
    let p1 = k_succ.tr_mul(&pi) / rate;
    let lu = (DMatrix::identity(n, n) - &k_fail).lu();
    let x = lu.solve(&DVector::from_element(n, 1.0)).unwrap();
    let z = lu.solve(&x).unwrap();
    // P[age = a] is proportional to p1 K_fail^(a-1) 1; each slot contributes
    // the midpoint of its age
    let mean = p1.dot(&x);
    assert!((mean * rate - 1.0).abs() < 1e-9, "renewal identity");
    (p1.dot(&z) / mean + 0.5, mean)
}

/// The ancillary chain moves the other devices' profile independently of the
/// tagged outcome, while physically a success tells something about who else
/// stayed silent. The refresh rate, hence the mean interval, is unaffected;
/// the second moment carries a small residual.
#[test]
fn exact_chain_with_stationary_weights_matches_joint_chain() {
    let cases = [
        (2, 2, 0.3, 0.2, vec![0.5, 1.0], DecodingMode::NoCapture),
        (2, 2, 0.3, 0.2, vec![0.5, 1.0], DecodingMode::Capture),
        (3, 2, 0.4, 0.3, vec![1.0, 0.7], DecodingMode::Capture),
        (3, 1, 0.6, 0.5, vec![1.0], DecodingMode::NoCapture),
        (4, 2, 0.2, 0.1, vec![0.3, 1.0], DecodingMode::Capture),
    ];
    let opts = ExactOptions {
        weighting: RefreshWeighting::Stationary,
        ..ExactOptions::default()
    };
    for (u, e, alpha, eta, pi, mode) in cases {
        let c = config(u, e, alpha, eta, mode);
        let policy = TransmissionPolicy::new(pi).unwrap();
        let (aoi, mean) = joint_chain_reference(&c, &policy);
        let exact = exact_avg_aoi(&c, &policy, &opts).unwrap();
        assert!((exact.mean_interval - mean).abs() < 1e-9 * mean);
        assert!(
            (exact.avg_aoi - aoi).abs() < 1e-3 * aoi,
            "U={u} E={e} {mode}: {} vs {aoi}",
            exact.avg_aoi
        );
    }
}

#[test]
fn single_device_mean_interval_closed_form() {
    // charge (geometric in eta), then wait for a reading (geometric in alpha);
    // each failed attempt starts over
    for (alpha, eta, mode) in [
        (0.3, 0.2, DecodingMode::NoCapture),
        (0.9, 0.05, DecodingMode::Capture),
        (0.01, 0.7, DecodingMode::NoCapture),
    ] {
        let c = config(1, 1, alpha, eta, mode);
        let policy = TransmissionPolicy::new(vec![1.0]).unwrap();
        let w = 1.0 - singleton_error_prob(1, &c.channel);
        let expected = (1.0 / eta + 1.0 / alpha) / w;
        let a = approx_metrics(&c, &policy, 1).unwrap();
        let x = exact_avg_aoi(&c, &policy, &ExactOptions::default()).unwrap();
        assert!((a.mean_interval - expected).abs() < 1e-9 * expected);
        assert!((x.mean_interval - expected).abs() < 1e-9 * expected);
    }
}

#[test]
fn thinned_capture_average_matches_profile_enumeration() {
    for (u, e, pi) in [
        (10, 2, vec![1.0, 1.0]),
        (12, 2, vec![0.3, 0.9]),
        (6, 3, vec![0.2, 0.5, 1.0]),
    ] {
        let mut c = config(u, e, 1.5 / u as f64, 0.1, DecodingMode::Capture);
        let policy = TransmissionPolicy::new(pi).unwrap();
        let nu = battery_steady_state(&m1_transition_matrix(&c, &policy).unwrap()).unwrap();
        let enumerated = avg_success_probs(&c, &policy, &nu);
        c.delivery.profile_cap = 0;
        let thinned = avg_success_probs(&c, &policy, &nu);
        for (a, b) in enumerated.iter().zip(&thinned) {
            assert!((a - b).abs() < 1e-10, "{enumerated:?} vs {thinned:?}");
        }
    }
}

#[test]
fn simulated_throughput_matches_analysis_on_small_instances() {
    for (u, e, pi, mode) in [
        (3, 2, vec![0.5, 1.0], DecodingMode::NoCapture),
        (4, 2, vec![1.0, 1.0], DecodingMode::Capture),
        (5, 3, vec![0.2, 0.6, 1.0], DecodingMode::Capture),
    ] {
        let c = config(u, e, 0.3, 0.2, mode);
        let policy = TransmissionPolicy::new(pi).unwrap();
        let a = approx_metrics(&c, &policy, 10).unwrap();
        let s = simulate(
            &c,
            &policy,
            &SimParams {
                total_slots: 300_000,
                warmup_slots: 1000,
                theta: 10,
                seed: 3,
                ..SimParams::default()
            },
        )
        .unwrap();
        assert!(
            s.throughput.within(a.throughput, 3.0),
            "U={u} {mode}: sim {:?} vs {}",
            s.throughput,
            a.throughput
        );
    }
}

#[test]
fn single_device_histogram_matches_refresh_law() {
    let c = config(1, 2, 0.4, 0.3, DecodingMode::NoCapture);
    let policy = TransmissionPolicy::new(vec![0.5, 1.0]).unwrap();
    let (_, _, model) = approx_model(&c, &policy).unwrap();
    let s = simulate(
        &c,
        &policy,
        &SimParams {
            total_slots: 400_000,
            warmup_slots: 1000,
            theta: 10,
            seed: 11,
            ..SimParams::default()
        },
    )
    .unwrap();
    let n = s.refreshes as f64;
    let mut stat = 0.0;
    let mut bins = 0;
    // sparse bins (first slot, far tail) are pooled into one remainder bin
    let mut rest_expected = n;
    let mut rest_observed = n;
    for step in model.distribution().truncated(100_000) {
        let expected = n * step.pmf;
        if expected < 20.0 {
            continue;
        }
        let observed = *s.histogram.get(&step.y).unwrap_or(&0) as f64;
        stat += (observed - expected).powi(2) / expected;
        rest_expected -= expected;
        rest_observed -= observed;
        bins += 1;
    }
    stat += (rest_observed - rest_expected).powi(2) / rest_expected;
    let critical = ChiSquared::new(bins as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} over {bins} dof, critical {critical}");
}

#[test]
fn one_dimensional_optimum_matches_grid_search() {
    let c = config(20, 1, 0.1, 0.2, DecodingMode::Capture);
    for metric in [Metric::AvgAoi, Metric::Throughput] {
        let obj = Objective::new(metric);
        let r = optimize_policy(&c, &obj, &OptimizerOptions::default()).unwrap();
        let (gx, gf) = (0..=1000)
            .map(|i| {
                let x = i as f64 / 1000.0;
                (x, obj.cost(&c, &TransmissionPolicy::clipped(&[x])))
            })
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert!(r.cost <= gf + 1e-12 * gf.abs(), "{metric:?}: {} vs grid {gf}", r.cost);
        assert!(
            (r.policy.probs()[0] - gx).abs() <= 1e-3,
            "{metric:?}: {} vs grid {gx}",
            r.policy
        );
    }
}

#[test]
fn optimized_policy_beats_seed_points() {
    let c = config(40, 3, 0.05, 0.1, DecodingMode::NoCapture);
    let obj = Objective::new(Metric::AvgAoi);
    let opts = OptimizerOptions::default();
    let r = optimize_policy(&c, &obj, &opts).unwrap();
    for x0 in multistart_points(3, opts.starts, opts.seed) {
        assert!(r.cost <= obj.cost(&c, &TransmissionPolicy::clipped(&x0)));
    }
    assert!(r.policy.probs().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn more_starts_never_hurt() {
    let c = config(40, 3, 0.08, 0.1, DecodingMode::Capture);
    let obj = Objective::new(Metric::Throughput);
    let mut last = f64::INFINITY;
    for starts in 1..=4 {
        let r = optimize_policy(
            &c,
            &obj,
            &OptimizerOptions {
                starts,
                ..OptimizerOptions::default()
            },
        )
        .unwrap();
        assert!(r.cost <= last);
        last = r.cost;
    }
}
