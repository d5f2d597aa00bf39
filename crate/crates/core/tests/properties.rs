use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use impactlab::mdp::{inaction_pushforward, propagate, Mdp, StateDist};
use impactlab::measures::{feature_divergence, future_tasks_relative, relative_reachability_with, unreachability_with, value_difference_from_values, Shape};
use impactlab::solvers::{
    discount_pow, enumerate_policies, evaluate_policy, min_steps, reachability, value_iteration, ReachabilityMatrix,
    StepMatrix, TaskReward, UNREACHABLE,
};

fn normalize(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Random stochastic MDP. Small weights are zeroed for sparsity; a tiny
/// self-loop keeps every row a proper distribution.
fn mdp_strategy(max_n: usize, max_a: usize) -> impl Strategy<Value = Mdp> {
    (2..=max_n, 2..=max_a, 0.5..0.95f64).prop_flat_map(|(n, a, gamma)| {
        prop::collection::vec(prop::collection::vec(prop::collection::vec(0.0..1.0f64, n), a), n).prop_map(
            move |raw| {
                let t = raw
                    .iter()
                    .enumerate()
                    .map(|(s, rows)| {
                        rows.iter()
                            .map(|w| {
                                let mut w: Vec<f64> = w.iter().map(|&x| if x < 0.4 { 0.0 } else { x }).collect();
                                w[s] += 1e-3;
                                normalize(&w)
                            })
                            .collect()
                    })
                    .collect();
                Mdp::new(t, 0, gamma).unwrap()
            },
        )
    })
}

fn det_mdp_strategy() -> impl Strategy<Value = Mdp> {
    (2..8usize, 2..4usize, 0.5..0.95f64).prop_flat_map(|(n, a, gamma)| {
        prop::collection::vec(prop::collection::vec(0..n, a), n).prop_map(move |next| {
            Mdp::deterministic(&next, 0, gamma).unwrap()
        })
    })
}

fn dist(n: usize) -> impl Strategy<Value = StateDist> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|w| StateDist::new(normalize(&w)).unwrap())
}

fn reward(n: usize, a: usize) -> impl Strategy<Value = TaskReward> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, a), n).prop_map(TaskReward::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_preserves_mass((m, d, a) in mdp_strategy(6, 4).prop_flat_map(|m| {
        let (n, na) = (m.n_states(), m.n_actions());
        (Just(m), dist(n), 0..na)
    })) {
        let next = propagate(&m, &d, a).unwrap();
        prop_assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(next.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn inaction_pushforward_composes((m, d, j, k) in mdp_strategy(6, 3).prop_flat_map(|m| {
        let n = m.n_states();
        (Just(m), dist(n), 0..6usize, 0..6usize)
    })) {
        let two_legs = inaction_pushforward(&m, &inaction_pushforward(&m, &d, j), k);
        let one_leg = inaction_pushforward(&m, &d, j + k);
        prop_assert!(two_legs.max_abs_diff(&one_leg) < 1e-12);
    }

    #[test]
    fn value_iteration_matches_best_enumerated_policy((m, r) in mdp_strategy(4, 3).prop_flat_map(|m| {
        let (n, a) = (m.n_states(), m.n_actions());
        (Just(m), reward(n, a))
    })) {
        let tol = 1e-9;
        let vi = value_iteration(&m, &r, tol).unwrap();
        let mut best = vec![f64::NEG_INFINITY; m.n_states()];
        for pi in enumerate_policies(&m, 100_000).unwrap() {
            let v = evaluate_policy(&m, &pi, |s, a| r.get(s, a));
            for (b, x) in best.iter_mut().zip(v) {
                *b = b.max(x);
            }
        }
        for (x, y) in vi.v.iter().zip(&best) {
            prop_assert!((x - y).abs() <= tol, "{} vs {}", x, y);
        }
    }

    #[test]
    fn value_iteration_residuals_shrink((m, r) in mdp_strategy(6, 3).prop_flat_map(|m| {
        let (n, a) = (m.n_states(), m.n_actions());
        (Just(m), reward(n, a))
    })) {
        let vi = value_iteration(&m, &r, 1e-10).unwrap();
        for w in vi.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", vi.residuals);
        }
    }

    #[test]
    fn deterministic_reachability_is_discounted_distance(m in det_mdp_strategy()) {
        for x in 0..m.n_states() {
            let steps = min_steps(&m, x);
            for y in 0..m.n_states() {
                let expected = if steps[y] == UNREACHABLE { 0.0 } else { discount_pow(m.gamma(), steps[y]) };
                assert_abs_diff_eq!(reachability(&m, x, y, 1e-12).unwrap(), expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn deviation_measures_are_nonnegative_and_vanish_on_identical_arms(
        (m, p, q, phi) in mdp_strategy(6, 3).prop_flat_map(|m| {
            let n = m.n_states();
            (Just(m), dist(n), dist(n), prop::collection::vec(prop::collection::vec(0.0..5.0f64, 2), n))
        })
    ) {
        let reach = ReachabilityMatrix::compute(&m, 1e-10).unwrap();
        let values: Vec<Vec<f64>> = (0..m.n_states()).map(|s| reach.row(s).to_vec()).collect();
        let weights = vec![1.0 / m.n_states() as f64; m.n_states()];
        let vd = |a: &StateDist, b: &StateDist| {
            let avg = |d: &StateDist| -> Vec<f64> {
                (0..m.n_states()).map(|y| d.support().map(|(s, w)| w * values[s][y]).sum()).collect()
            };
            value_difference_from_values(Shape::Relu, &weights, &avg(b), &avg(a)).unwrap().value
        };
        let all = |a: &StateDist, b: &StateDist| {
            [
                relative_reachability_with(&reach, a, b).value,
                unreachability_with(&reach, a, b).value,
                feature_divergence(&phi, a, b).unwrap().value,
                vd(a, b),
            ]
        };
        for v in all(&p, &q) {
            prop_assert!(v >= -1e-12, "{}", v);
        }
        for v in all(&p, &p) {
            prop_assert!(v.abs() < 1e-12, "{}", v);
        }
    }

    // In deterministic worlds future tasks is relative reachability scaled
    // by the terminal discount D.
    #[test]
    fn future_tasks_is_scaled_relative_reachability_when_deterministic(
        (m, terminal) in det_mdp_strategy().prop_flat_map(|m| {
            let n = m.n_states();
            (Just(m), prop::collection::vec(any::<bool>(), n))
        })
    ) {
        let reach = ReachabilityMatrix::compute(&m, 1e-12).unwrap();
        let steps = StepMatrix::compute(&m);
        let n = m.n_states();
        for x in 0..n {
            for b in 0..n {
                let (px, pb) = (StateDist::point(n, x), StateDist::point(n, b));
                let ft = future_tasks_relative(&steps, m.gamma(), &px, &pb, &terminal).value;
                let d = if terminal[x] { 1.0 } else { 1.0 - m.gamma() };
                let rr = relative_reachability_with(&reach, &px, &pb).value;
                assert_abs_diff_eq!(ft, d * rr, epsilon = 1e-9);
            }
        }
    }
}
