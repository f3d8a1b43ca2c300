use aoi_core::delivery::error_prob_from_sums;
use aoi_core::model::multinomial_pmf;
use aoi_core::presets::default_channel;
use aoi_core::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn arb_prob() -> impl Strategy<Value = f64> {
    0.02f64..=1.0
}

fn arb_policy(e: usize) -> impl Strategy<Value = TransmissionPolicy> {
    (proptest::collection::vec(0.0f64..=1.0, e - 1), 0.05f64..=1.0).prop_map(|(mut v, top)| {
        v.push(top);
        TransmissionPolicy::new(v).unwrap()
    })
}

fn arb_mode() -> impl Strategy<Value = DecodingMode> {
    prop_oneof![Just(DecodingMode::NoCapture), Just(DecodingMode::Capture)]
}

prop_compose! {
    fn arb_setting(max_u: usize, max_e: usize)(u in 1..=max_u, e in 1..=max_e)
        (u in Just(u), policy in arb_policy(e), alpha in arb_prob(), eta in arb_prob(), mode in arb_mode())
        -> (SystemConfig, TransmissionPolicy)
    {
        let e = policy.capacity();
        (SystemConfig::new(u, e, alpha, eta, default_channel(), mode).unwrap(), policy)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn battery_chain_rows_are_stochastic((c, policy) in arb_setting(5, 6)) {
        let m1 = m1_transition_matrix(&c, &policy).unwrap();
        for i in 0..m1.dim() {
            let s: f64 = (0..m1.dim()).map(|j| m1.get(i, j)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for j in 0..m1.dim() {
                prop_assert!(m1.get(i, j) >= 0.0);
            }
        }
    }

    #[test]
    fn profile_chain_rows_are_stochastic((c, policy) in arb_setting(6, 3)) {
        let m1 = m1_transition_matrix(&c, &policy).unwrap();
        let chain = ProfileChain::build(c.device_count - 1, &m1);
        let t = chain.transitions();
        for i in 0..chain.len() {
            prop_assert!((t.row(i).sum() - 1.0).abs() < 1e-10);
            prop_assert!(t.row(i).iter().all(|&p| p >= -1e-15));
        }
    }

    #[test]
    fn steady_state_matches_lazy_power_iteration((c, policy) in arb_setting(2, 5)) {
        let m1 = m1_transition_matrix(&c, &policy).unwrap();
        let nu = battery_steady_state(&m1).unwrap();
        let p = m1.as_matrix();
        let mut v = DVector::from_element(m1.dim(), 1.0 / m1.dim() as f64);
        for _ in 0..200_000 {
            v = (p.tr_mul(&v) + &v) * 0.5;
        }
        for (a, b) in nu.probs().iter().zip(v.iter()) {
            prop_assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", nu.probs(), v);
        }
    }

    #[test]
    fn profile_chain_keeps_the_multinomial_law((c, policy) in arb_setting(5, 2)) {
        let m1 = m1_transition_matrix(&c, &policy).unwrap();
        let nu = battery_steady_state(&m1).unwrap();
        let chain = ProfileChain::build(c.device_count - 1, &m1);
        let law = DVector::from_iterator(
            chain.len(),
            chain.profiles().iter().map(|p| multinomial_pmf(p, nu.probs())),
        );
        let pushed = chain.transitions().tr_mul(&law);
        prop_assert!((law.sum() - 1.0).abs() < 1e-12);
        for (a, b) in law.iter().zip(pushed.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn delivery_probabilities_are_probabilities((c, policy) in arb_setting(40, 4)) {
        let nu = battery_steady_state(&m1_transition_matrix(&c, &policy).unwrap()).unwrap();
        let wbar = avg_success_probs(&c, &policy, &nu);
        prop_assert_eq!(wbar[0], 0.0);
        for &w in &wbar {
            prop_assert!((0.0..=1.0).contains(&w), "{:?}", wbar);
        }
        let s = throughput(&c, &policy, &nu, &wbar).unwrap();
        prop_assert!(s >= 0.0 && s <= 1.0 + c.offered_load());
    }

    #[test]
    fn more_interference_never_helps(
        b in 1usize..=8,
        base in proptest::collection::vec(0usize..4, 9),
        level in 1usize..=8,
    ) {
        let ch = default_channel();
        let fewer = InterferenceState::new(base.clone());
        let mut more_counts = base;
        more_counts[level] += 1;
        let more = InterferenceState::new(more_counts);
        prop_assert!(capture_error_prob(b, &more, &ch) >= capture_error_prob(b, &fewer, &ch));
    }

    #[test]
    fn error_probability_in_unit_interval(
        b in 0usize..=64,
        s1 in 0.0f64..200.0,
        k in 0.0f64..=1.0,
    ) {
        // s2 lies between s1 (unit energies) and s1^2 (one interferer)
        let s2 = s1 + k * (s1 * s1 - s1).max(0.0);
        let eps = error_prob_from_sums(&default_channel(), b, s1, s2);
        prop_assert!((0.0..=1.0).contains(&eps));
    }

    #[test]
    fn avp_is_nonincreasing_in_threshold((c, policy) in arb_setting(30, 4), t1 in 1u64..500, dt in 0u64..500) {
        let (_, _, model) = approx_model(&c, &policy).unwrap();
        let lo = model.avp_tail(t1).unwrap();
        let hi = model.avp_tail(t1 + dt).unwrap();
        prop_assert!(hi <= lo + 1e-15);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn optimized_policy_stays_in_box(x0 in proptest::collection::vec(-1.0f64..2.0, 1..5)) {
        let target: Vec<f64> = x0.iter().map(|v| v * 0.7 + 0.1).collect();
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let r = nelder_mead(f, &x0, &OptimizerOptions { max_evaluations: 400, ..OptimizerOptions::default() });
        prop_assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_battery_invariants((c, policy) in arb_setting(12, 4), seed in any::<u64>()) {
        let e = c.battery_capacity;
        let mut sim = Simulation::new(&c, &policy, seed).unwrap();
        for _ in 0..500 {
            let before = sim.batteries().to_vec();
            let out = sim.step();
            let after = sim.batteries();
            for &(dev, b) in &out.transmissions {
                prop_assert!(b >= 1 && b == before[dev]);
                prop_assert_eq!(after[dev], 0);
                prop_assert!(!out.harvested.contains(&dev));
            }
            for &dev in &out.harvested {
                prop_assert_eq!(after[dev], before[dev] + 1);
            }
            for (dev, &b) in after.iter().enumerate() {
                prop_assert!(b <= e);
                let moved = out.transmissions.iter().any(|t| t.0 == dev) || out.harvested.contains(&dev);
                if !moved {
                    prop_assert_eq!(b, before[dev]);
                }
            }
            for d in &out.decoded {
                prop_assert!(out.transmissions.iter().any(|t| t.0 == *d));
            }
        }
    }

    #[test]
    fn simulation_is_seed_deterministic((c, policy) in arb_setting(8, 3), seed in any::<u64>()) {
        let params = SimParams {
            total_slots: 3000,
            warmup_slots: 100,
            theta: 20,
            seed,
            batches: 10,
            ..SimParams::default()
        };
        let a = simulate(&c, &policy, &params).unwrap();
        let b = simulate(&c, &policy, &params).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn singleton_error_nonincreasing_in_energy() {
    let ch = default_channel();
    let mut last = 1.0;
    for b in 1..=64 {
        let eps = singleton_error_prob(b, &ch);
        assert!(eps <= last, "energy {b}");
        last = eps;
    }
}
