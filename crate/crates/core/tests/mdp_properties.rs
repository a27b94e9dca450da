mod common;

use mmwave_mdp::mdp::{policy_evaluation_exact, value_iteration};
use mmwave_mdp::multiuser::{best_response, Environment, PolicyProfile};
use mmwave_mdp::{ChannelMatrix, RateTable, SolverParams, StateSpace};
use proptest::prelude::*;

fn params() -> SolverParams {
    SolverParams { omega: 0.9, epsilon: 1e-6, max_sweeps: 100_000 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn via_policy_is_epsilon_optimal(seed in any::<u64>(), states in 1usize..40, actions in 1usize..5) {
        let (kernel, rewards) = common::random_mdp(seed, states, actions);
        let via = value_iteration(&kernel, &rewards, &params()).unwrap();
        prop_assert!(via.converged);
        let exact = policy_evaluation_exact(&via.policy, &kernel, &rewards, 0.9).unwrap();
        let optimum = common::policy_iteration(&kernel, &rewards, 0.9);
        for (v, o) in exact.0.iter().zip(&optimum) {
            prop_assert!(o - v <= 1e-6);
        }
        // The returned values are within the stopping accuracy of the optimum.
        for (v, o) in via.values.0.iter().zip(&optimum) {
            prop_assert!((v - o).abs() <= 1e-6);
        }
    }

    #[test]
    fn sweeps_contract(seed in any::<u64>(), states in 2usize..30) {
        let (kernel, rewards) = common::random_mdp(seed, states, 3);
        let via = value_iteration(&kernel, &rewards, &params()).unwrap();
        for w in via.deltas.windows(2) {
            prop_assert!(w[1] <= 0.9 * w[0] + 1e-12);
        }
    }

    #[test]
    fn scaling_rewards_scales_values(seed in any::<u64>(), states in 1usize..30, factor in 0.1f64..10.0) {
        let (kernel, rewards) = common::random_mdp(seed, states, 3);
        let base = common::policy_iteration(&kernel, &rewards, 0.9);
        let scaled = common::policy_iteration(&kernel, &rewards.scaled(factor), 0.9);
        for (b, s) in base.iter().zip(&scaled) {
            prop_assert!((b * factor - s).abs() <= 1e-9 * (1.0 + s.abs()));
        }
    }
}

#[test]
fn higher_handover_cost_never_raises_the_value() {
    let space = StateSpace::enumerate(3, 3, 2).unwrap();
    let profile = PolicyProfile::random(&space, 8);
    let mut previous: Option<Vec<f64>> = None;
    for oh in [0.0, 0.05, 0.1, 0.3, 0.6] {
        let env = Environment::new(
            space.clone(),
            ChannelMatrix::urban_nlos_dominant(),
            RateTable::default(),
            oh,
            SolverParams::default(),
        )
        .unwrap();
        let br = best_response(0, &profile, &env).unwrap();
        let values = common::policy_iteration(&br.kernel, &br.rewards, 0.9);
        if let Some(prev) = &previous {
            for (v, p) in values.iter().zip(prev) {
                assert!(*v <= p + 1e-9);
            }
        }
        previous = Some(values);
    }
}

#[test]
fn single_ue_best_response_equals_direct_solution() {
    let env = Environment::new(
        StateSpace::enumerate(3, 3, 1).unwrap(),
        ChannelMatrix::urban_nlos_dominant(),
        RateTable::default(),
        0.1,
        SolverParams::default(),
    )
    .unwrap();
    let a = best_response(0, &PolicyProfile::random(&env.space, 1), &env).unwrap();
    let b = best_response(0, &PolicyProfile::random(&env.space, 2), &env).unwrap();
    let direct = value_iteration(&a.kernel, &a.rewards, &env.solver).unwrap();
    assert_eq!(a.policy, direct.policy);
    assert_eq!(a.policy, b.policy);
}
