use proptest::prelude::*;
use serde_json::json;
use signfl::adversary::{choose_faults, AdversarySpec, Attack, FaultMode, TauSchedule};
use signfl::aggregation::{
    agg_majority, agg_mean, agg_median, agg_trimmed, equivalence_oracle, extract_sign, SignMatrix, Tally,
};
use signfl::analysis::{c0, signerr_threshold, BoundInputs};
use signfl::compressor::{
    clip, coordinate_epsilon_restricted, epsilon_worst_case, outcome_probability, prob_plus_one, CompressorParams, Sign,
};
use signfl::orchestrator::{Experiment, ExperimentConfig};
use signfl::rng::{derive_rng, seeded, StreamSeeds};
use signfl::tasks::NoiseClass;

fn sign_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Vec<Vec<i8>>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), c),
            r,
        )
    })
}

fn bound_inputs(p: f64, n: usize, tau: usize, mode: FaultMode, noise: NoiseClass) -> BoundInputs {
    BoundInputs {
        d: 10,
        clients: 100,
        rounds: 50,
        p,
        n,
        c: 0.5,
        clip_bound: 2.0,
        beta: 0.3,
        sigma: 0.4,
        grad_bound: 1.0,
        smoothness: Some(1.0),
        f0: 2.0,
        f_star: Some(0.0),
        tau: TauSchedule::Constant(tau),
        mode,
        noise_class: noise,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aggregation_rules_agree_in_sign(rows in sign_matrix(40, 6)) {
        let m = SignMatrix::from_values(&rows).unwrap();
        let ks: Vec<usize> = (0..).take_while(|k| 2 * k < m.rows()).collect();
        prop_assert!(equivalence_oracle(&m, &ks).unwrap());
        let reference = agg_majority(&m).unwrap();
        prop_assert_eq!(extract_sign(&agg_mean(&m).unwrap()).unwrap(), reference);
    }

    #[test]
    fn median_is_central_trimmed_mean(minus in 0usize..60, plus in 0usize..60) {
        prop_assume!(minus + plus > 0);
        let t = Tally::new(minus, plus);
        let k = (t.len() - 1) / 2;
        prop_assert_eq!(t.median(), t.trimmed(k, &mut seeded(0)));
    }

    #[test]
    fn trimmed_on_matrix_matches_tally(rows in sign_matrix(12, 3), k in 0usize..6) {
        let m = SignMatrix::from_values(&rows).unwrap();
        prop_assume!(2 * k < m.rows());
        let by_matrix = agg_trimmed(&m, k, &mut seeded(1)).unwrap();
        let by_tally: Vec<f64> =
            m.tallies().iter().map(|t| t.trimmed(k, &mut seeded(1)).unwrap()).collect();
        prop_assert_eq!(by_matrix, by_tally);
        let med = agg_median(&m).unwrap();
        prop_assert_eq!(
            extract_sign(&med).unwrap(),
            extract_sign(&agg_trimmed(&m, (m.rows() - 1) / 2, &mut seeded(2)).unwrap()).unwrap()
        );
    }

    #[test]
    fn scaled_report_is_unbiased(g in -10.0f64..10.0, b in 0.01f64..5.0, beta in 0.0f64..5.0) {
        let p = CompressorParams::new(b, beta).unwrap();
        let plus = prob_plus_one(g, &p).unwrap();
        let mean = 2.0 * plus - 1.0;
        prop_assert!((mean * (b + beta) - clip(g, b).unwrap()).abs() < 1e-12);
        let lo = beta / (2.0 * b + 2.0 * beta);
        prop_assert!(plus >= lo - 1e-15 && plus <= 1.0 - lo + 1e-15);
    }

    #[test]
    fn restricted_budget_below_worst_case_for_large_clip(
        g in -10.0f64..10.0,
        b in 0.5f64..20.0,
        beta in 1e-6f64..20.0,
    ) {
        let p = CompressorParams::new(b, beta).unwrap();
        let worst = epsilon_worst_case(&p, 1).value().unwrap();
        prop_assert!(coordinate_epsilon_restricted(g, &p).unwrap() <= worst + 1e-12);
    }

    #[test]
    fn refined_cap_bounds_adjacent_pairs(
        g in -5.0f64..5.0,
        delta in -1.0f64..1.0,
        b in 0.05f64..4.0,
        beta in 1e-3f64..4.0,
    ) {
        let p = CompressorParams::new(b, beta).unwrap();
        let h = g + delta;
        let cap = coordinate_epsilon_restricted(g, &p).unwrap().max(coordinate_epsilon_restricted(h, &p).unwrap());
        for o in [Sign::Plus, Sign::Minus] {
            let ratio = (outcome_probability(g, o, &p).unwrap().ln() - outcome_probability(h, o, &p).unwrap().ln()).abs();
            prop_assert!(ratio <= cap + 1e-12, "{ratio} > {cap}");
            prop_assert!(ratio <= epsilon_worst_case(&p, 1).value().unwrap() + 1e-12);
        }
    }

    #[test]
    fn fault_sets_respect_budget(
        clients in 1usize..50,
        tau in 0usize..50,
        adaptive in prop::bool::ANY,
        mask in prop::collection::vec(prop::bool::ANY, 50),
        t in 0usize..1000,
    ) {
        prop_assume!(tau <= clients);
        let sampled: Vec<usize> = (0..clients).filter(|&m| mask[m]).collect();
        let spec = AdversarySpec {
            mode: if adaptive { FaultMode::Adaptive } else { FaultMode::Static },
            tau: TauSchedule::Constant(tau),
            attack: Attack::SignFlip,
        };
        let f = choose_faults(&spec, t, clients, &sampled, &mut derive_rng(3, t as u64, u64::MAX)).unwrap();
        prop_assert!(f.byzantine.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(f.byzantine.iter().all(|&m| m < clients));
        if adaptive {
            prop_assert_eq!(f.byzantine.len(), tau.min(sampled.len()));
            prop_assert!(f.byzantine.iter().all(|m| sampled.contains(m)));
        } else {
            prop_assert_eq!(f.byzantine.len(), tau);
        }
    }

    #[test]
    fn c0_monotone_in_n_and_p(n in 1usize..500, p in 0.05f64..1.0, dn in 1usize..100, dp in 0.0f64..0.5) {
        let base = bound_inputs(p, n, 0, FaultMode::Adaptive, NoiseClass::Gaussian);
        let more_n = bound_inputs(p, n + dn, 0, FaultMode::Adaptive, NoiseClass::Gaussian);
        let more_p = bound_inputs((p + dp).min(1.0), n, 0, FaultMode::Adaptive, NoiseClass::Gaussian);
        prop_assert!(c0(&more_n).unwrap() <= c0(&base).unwrap());
        prop_assert!(c0(&more_p).unwrap() <= c0(&base).unwrap());
    }

    #[test]
    fn adaptive_and_small_static_thresholds_coincide(p in 0.2f64..1.0, n in 1usize..64, frac in 0.0f64..1.0) {
        let static_inputs = bound_inputs(p, n, 0, FaultMode::Static, NoiseClass::SubGaussian);
        let tau = (frac * static_inputs.large_tau_cutoff().min(static_inputs.clients as f64)).floor() as usize;
        let s = bound_inputs(p, n, tau, FaultMode::Static, NoiseClass::SubGaussian);
        let a = bound_inputs(p, n, tau, FaultMode::Adaptive, NoiseClass::SubGaussian);
        prop_assert_eq!(signerr_threshold(&s, 0).unwrap(), signerr_threshold(&a, 0).unwrap());
    }
}

#[test]
fn restricted_budget_can_exceed_worst_case_for_small_clip() {
    // at the clipping boundary with B < 1/2 the per-coordinate refinement
    // ln(1 + 1/β) overtakes ln((2B+β)/β)
    let p = CompressorParams::new(0.1, 0.1).unwrap();
    let restricted = coordinate_epsilon_restricted(0.1, &p).unwrap();
    let worst = epsilon_worst_case(&p, 1).value().unwrap();
    assert!((restricted - 11f64.ln()).abs() < 1e-12);
    assert!((worst - 3f64.ln()).abs() < 1e-12);
    assert!(restricted > worst);
}

fn config(seed: u64, overrides: Option<StreamSeeds>) -> ExperimentConfig {
    let mut v = json!({
        "M": 12, "p": 0.7, "T": 25, "n": 3, "B": 1.5, "beta": 0.2,
        "task": {"kind": "quadratic", "d": 4, "heterogeneity": 0.8, "sigma": 0.4},
        "adversary": {"mode": "adaptive", "tau": 2, "attack": "random_sign"},
        "seed": seed,
    });
    if let Some(s) = overrides {
        v["seeds"] = json!({
            "sampling": s.sampling, "compression": s.compression,
            "task_noise": s.task_noise, "adversary": s.adversary,
        });
    }
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn master_seed_is_only_a_source_of_stream_seeds(seed in any::<u64>(), other in any::<u64>()) {
        prop_assume!(seed != other);
        let derived = StreamSeeds::from_master(seed);
        let direct = Experiment::new(config(seed, None)).unwrap().run().unwrap();
        let pinned = Experiment::new(config(other, Some(derived))).unwrap().run().unwrap();
        prop_assert_eq!(direct.to_csv(), pinned.to_csv());
        prop_assert_eq!(direct.final_w, pinned.final_w);
    }

    #[test]
    fn each_step_moves_at_most_eta(seed in any::<u64>()) {
        let mut cfg = config(seed, None);
        cfg.record_stride = 1;
        let traj = Experiment::new(cfg).unwrap().run().unwrap();
        for pair in traj.history.windows(2) {
            let step = pair[0].1.iter().zip(&pair[1].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(step <= traj.eta * (1.0 + 1e-12));
        }
    }
}
