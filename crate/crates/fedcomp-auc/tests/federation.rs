//! Cross-cutting federation tests: the parallel and sequential execution
//! paths must be bitwise interchangeable, and randomized inputs must uphold
//! the scoring and trace invariants the simulator promises.

use fedcomp_auc::data::{gen_gaussian_mixture, train_test_split};
use fedcomp_auc::fedsim::{run_federation, Algo, FederationConfig};
use fedcomp_auc::metrics::auc_score;
use fedcomp_auc::model::Classifier;
use fedcomp_auc::optim::HyperParams;
use proptest::prelude::*;

#[cfg(feature = "parallel")]
mod exec_modes {
    use super::*;
    use fedcomp_auc::fedsim::toy::{make_toy_problem, run_toy_federation, ToyFederationConfig};
    use fedcomp_auc::metrics::MetricsRecord;

    fn bits(x: Option<f64>) -> Option<u64> {
        x.map(f64::to_bits)
    }

    fn records_bitwise_equal(a: &[MetricsRecord], b: &[MetricsRecord]) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(r, s)| {
                r.iteration == s.iteration
                    && r.round == s.round
                    && r.algo == s.algo
                    && bits(r.train_ce) == bits(s.train_ce)
                    && bits(r.train_auc_loss) == bits(s.train_auc_loss)
                    && bits(r.test_auc_avg_model) == bits(s.test_auc_avg_model)
                    && bits(r.test_auc_mean_devices) == bits(s.test_auc_mean_devices)
                    && r.consensus_gap.to_bits() == s.consensus_gap.to_bits()
                    && bits(r.grad_norm_sq) == bits(s.grad_norm_sq)
                    && r.eta_t.to_bits() == s.eta_t.to_bits()
            })
    }

    /// Every algorithm must produce the same trace no matter how many worker
    /// threads execute the device steps.
    #[test]
    fn classification_trace_is_thread_invariant_for_every_algorithm() {
        let pool = gen_gaussian_mixture(400, 8, 1.5, 29).unwrap();
        let (train, test) = train_test_split(&pool, 0.4, 29).unwrap();
        let model = Classifier::logistic(8);
        for algo in Algo::ALL {
            let run_with = |threads: Option<usize>| {
                let cfg = FederationConfig {
                    devices: 8,
                    algo,
                    total_iterations: 30,
                    eval_every: 5,
                    master_seed: 41,
                    hp: HyperParams {
                        period: 5,
                        batch_size: 16,
                        ..HyperParams::default()
                    },
                    threads,
                    ..FederationConfig::default()
                };
                run_federation(&model, &train, &test, &cfg).unwrap()
            };
            let sequential = run_with(Some(1));
            let parallel = run_with(Some(4));
            let default_pool = run_with(None);
            assert!(
                records_bitwise_equal(&sequential, &parallel),
                "{}: 1 vs 4 threads diverged",
                algo.name()
            );
            assert!(
                records_bitwise_equal(&sequential, &default_pool),
                "{}: explicit vs default thread pool diverged",
                algo.name()
            );
        }
    }

    #[test]
    fn synthetic_run_is_thread_invariant() {
        let problem = make_toy_problem(10, 101).unwrap();
        let run_with = |threads: Option<usize>| {
            let cfg = ToyFederationConfig {
                devices: 8,
                total_iterations: 120,
                eval_every: 10,
                noise_g: 0.3,
                noise_f: 0.3,
                threads,
                ..ToyFederationConfig::default()
            };
            run_toy_federation(&problem, &cfg).unwrap()
        };
        let sequential = run_with(Some(1));
        let parallel = run_with(Some(4));
        assert!(records_bitwise_equal(&sequential.records, &parallel.records));
        assert_eq!(sequential.final_x, parallel.final_x);
        assert_eq!(sequential.ubar_trace, parallel.ubar_trace);
    }
}

/// Scores quantized to quarter units: exact ties are common and every value
/// and every small integer shift of it is exactly representable.
fn quantized_scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-64i32..=64).prop_map(|k| f64::from(k) * 0.25), 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// AUC lies in [0, 1] and swapping the classes complements it.
    #[test]
    fn auc_is_bounded_and_complementary(
        pos in quantized_scores(40),
        neg in quantized_scores(40),
    ) {
        let a = auc_score(&pos, &neg).unwrap();
        let b = auc_score(&neg, &pos).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    /// Integer shifts preserve order and ties exactly on the quantized grid,
    /// so the score must not change at all.
    #[test]
    fn auc_is_exactly_shift_invariant_on_exact_grid(
        pos in quantized_scores(40),
        neg in quantized_scores(40),
        shift in -8i32..=8,
    ) {
        let s = f64::from(shift);
        let pos_s: Vec<f64> = pos.iter().map(|&v| v + s).collect();
        let neg_s: Vec<f64> = neg.iter().map(|&v| v + s).collect();
        prop_assert_eq!(auc_score(&pos, &neg).unwrap(), auc_score(&pos_s, &neg_s).unwrap());
    }

    /// Replacing scores by their midranks is a tie-preserving monotone map,
    /// and AUC depends on ranks only.
    #[test]
    fn auc_depends_only_on_midranks(
        pos in quantized_scores(30),
        neg in quantized_scores(30),
    ) {
        let midrank = |v: f64, pos: &[f64], neg: &[f64]| -> f64 {
            let below = pos.iter().chain(neg).filter(|&&w| w < v).count() as f64;
            let tied = pos.iter().chain(neg).filter(|&&w| w == v).count() as f64;
            below + 0.5 * (tied + 1.0)
        };
        let pos_r: Vec<f64> = pos.iter().map(|&v| midrank(v, &pos, &neg)).collect();
        let neg_r: Vec<f64> = neg.iter().map(|&v| midrank(v, &pos, &neg)).collect();
        prop_assert_eq!(auc_score(&pos, &neg).unwrap(), auc_score(&pos_r, &neg_r).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Random small federations: traces are well formed, AUCs are valid
    /// probabilities, the step scale never grows, and devices agree exactly
    /// right after every averaging round.
    #[test]
    fn federation_trace_invariants(
        devices in 1usize..5,
        period in 1usize..6,
        rounds in 1usize..4,
        algo_idx in 0usize..4,
        seed in 0u64..1000,
    ) {
        let algo = Algo::ALL[algo_idx];
        let total = period * rounds;
        let pool = gen_gaussian_mixture(120, 4, 1.5, 7).unwrap();
        let (train, test) = train_test_split(&pool, 0.4, 7).unwrap();
        let model = Classifier::logistic(4);
        let cfg = FederationConfig {
            devices,
            algo,
            total_iterations: total,
            eval_every: 1,
            master_seed: seed,
            hp: HyperParams { period, batch_size: 8, ..HyperParams::default() },
            threads: Some(1),
            ..FederationConfig::default()
        };
        let records = run_federation(&model, &train, &test, &cfg).unwrap();
        prop_assert_eq!(records.len(), total);
        for r in &records {
            let auc = r.test_auc_avg_model.unwrap();
            prop_assert!((0.0..=1.0).contains(&auc), "auc out of range: {}", auc);
            prop_assert!(r.consensus_gap >= 0.0);
            prop_assert!(r.eta_t > 0.0 && r.eta_t <= cfg.hp.eta);
            prop_assert!(r.train_ce.unwrap().is_finite());
            prop_assert!(r.train_auc_loss.unwrap().is_finite());
            if r.iteration % period == 0 {
                prop_assert_eq!(r.consensus_gap, 0.0);
            }
        }
    }
}
