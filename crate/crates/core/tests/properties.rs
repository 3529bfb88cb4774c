use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smm_lab::baselines::{count_bonus, index_coordinates, pseudocount_bonus, VisitCounts};
use smm_lab::goals::{hitting_objective, optimal_target, per_episode_reach_probability, GoalMetric, GoalSpec};
use smm_lab::marginal::{
    entropy, finite_horizon_marginal, kl_divergence, mean_marginal, mixture_marginal, random_simplex, Policy,
    StateMarginal,
};
use smm_lab::mdp::TabularMDP;
use smm_lab::sm4::exact_posterior;
use smm_lab::smm::{run_fictitious_play, LoopConfig};
use smm_lab::solvers::{expected_return, finite_horizon_value_iteration, soft_value_iteration, RewardTable};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simplex(n: usize, seed: u64) -> StateMarginal {
    StateMarginal::new(random_simplex(n, &mut rng(seed))).unwrap()
}

fn random_reward(ns: usize, seed: u64) -> RewardTable {
    let v = random_simplex(ns, &mut rng(seed)).iter().map(|x| 10.0 * x - 1.0).collect();
    RewardTable::state(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_are_distributions(ns in 1usize..8, na in 1usize..4, horizon in 1usize..12, seed: u64) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(ns, na, horizon, &mut r).unwrap();
        let policy = Policy::random_stationary(ns, na, &mut r);
        let m = finite_horizon_marginal(&mdp, &policy).unwrap();
        prop_assert!(m.probs().iter().all(|p| *p >= 0.0));
        prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_concave(n in 1usize..10, a: u64, b: u64, lambda in 0.0f64..=1.0) {
        let (p, q) = (simplex(n, a), simplex(n, b));
        let mix = mixture_marginal(&[p.clone(), q.clone()], &[lambda, 1.0 - lambda]).unwrap();
        prop_assert!(entropy(&mix) >= lambda * entropy(&p) + (1.0 - lambda) * entropy(&q) - 1e-12);
        prop_assert!(entropy(&p) <= (n as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(n in 1usize..10, a: u64, b: u64) {
        let (p, q) = (simplex(n, a), simplex(n, b));
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn historical_average_is_the_mean_of_iterates(seed: u64, iterations in 1usize..8) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(4, 2, 5, &mut r).unwrap();
        let target = StateMarginal::new(random_simplex(4, &mut r)).unwrap();
        let state = run_fictitious_play(&mdp, &target, &LoopConfig::default().with_iterations(iterations)).unwrap();
        let direct = mean_marginal(&state.iterate_marginals).unwrap();
        for (a, b) in state.ha_marginal().probs().iter().zip(direct.probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // each iterate marginal is that of its policy
        for (pi, m) in state.iterates.iter().zip(&state.iterate_marginals) {
            let again = finite_horizon_marginal(&mdp, pi).unwrap();
            prop_assert!(again.total_variation(m) < 1e-12);
        }
    }

    #[test]
    fn value_iteration_beats_random_policies(seed: u64, horizon in 1usize..8) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(5, 3, horizon, &mut r).unwrap();
        let reward = random_reward(5, seed ^ 1);
        let report = finite_horizon_value_iteration(&mdp, &reward).unwrap();
        let achieved = expected_return(&mdp, &report.policy, &reward).unwrap();
        prop_assert!((achieved - report.value_at_start).abs() < 1e-9);
        for _ in 0..10 {
            let other = Policy::random_stationary(5, 3, &mut r);
            prop_assert!(expected_return(&mdp, &other, &reward).unwrap() <= achieved + 1e-9);
        }
    }

    #[test]
    fn soft_value_brackets_hard_value(seed: u64, horizon in 1usize..8, temperature in 0.01f64..2.0) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(4, 3, horizon, &mut r).unwrap();
        let reward = random_reward(4, seed ^ 2);
        let hard = finite_horizon_value_iteration(&mdp, &reward).unwrap().value_at_start;
        let soft = soft_value_iteration(&mdp, &reward, temperature).unwrap().value_at_start;
        prop_assert!(soft >= hard - 1e-9);
        prop_assert!(soft <= hard + horizon as f64 * temperature * 3f64.ln() + 1e-9);
    }

    #[test]
    fn reward_shift_moves_value_not_policy(seed: u64, horizon in 1usize..8, shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(4, 3, horizon, &mut r).unwrap();
        let reward = random_reward(4, seed ^ 3);
        let base = finite_horizon_value_iteration(&mdp, &reward).unwrap();
        let shifted = finite_horizon_value_iteration(&mdp, &reward.map(|x| x + shift)).unwrap();
        prop_assert!((shifted.value_at_start - base.value_at_start - horizon as f64 * shift).abs() < 1e-9);
        let achieved = expected_return(&mdp, &shifted.policy, &reward).unwrap();
        prop_assert!((achieved - base.value_at_start).abs() < 1e-9);
    }

    #[test]
    fn count_bonuses_fall_with_visits(counts in prop::collection::vec(0.0f64..100.0, 2..10), alpha in 0.1f64..3.0) {
        let c = VisitCounts::from_state_counts(counts.clone());
        let count = count_bonus(&c, alpha).unwrap();
        let pseudo = pseudocount_bonus(&c, alpha).unwrap();
        let (count, pseudo) = (count.as_state().unwrap(), pseudo.as_state().unwrap());
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] < counts[j] {
                    prop_assert!(count[i] > count[j]);
                    prop_assert!(pseudo[i] > pseudo[j]);
                }
            }
        }
    }

    #[test]
    fn posterior_columns_sum_to_one(n in 1usize..5, ns in 1usize..8, seed: u64) {
        let mut r = rng(seed);
        let comps: Vec<StateMarginal> =
            (0..n).map(|_| StateMarginal::new(random_simplex(ns, &mut r)).unwrap()).collect();
        let prior = random_simplex(n, &mut r);
        let d = exact_posterior(&comps, &prior).unwrap();
        for s in 0..ns {
            prop_assert!((d.column(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_root_rule_beats_random_targets(ns in 1usize..10, seed: u64) {
        let mut r = rng(seed);
        let goal = StateMarginal::new(random_simplex(ns, &mut r)).unwrap();
        let coords = index_coordinates(ns);
        let spec = GoalSpec::new(goal, 0.0, GoalMetric::LInf).unwrap();
        let f_rule = hitting_objective(&optimal_target(&spec, &coords).unwrap(), &spec, &coords).unwrap();
        for _ in 0..20 {
            let x = StateMarginal::new(random_simplex(ns, &mut r)).unwrap();
            prop_assert!(hitting_objective(&x, &spec, &coords).unwrap() >= f_rule - 1e-9 * f_rule);
        }
    }

    #[test]
    fn reaching_is_at_least_as_likely_as_a_random_step(ns in 2usize..7, horizon in 1usize..12, seed: u64, eps in 0.0f64..2.0) {
        let mut r = rng(seed);
        let mdp = TabularMDP::random(ns, 2, horizon, &mut r).unwrap();
        let policy = Policy::random_stationary(ns, 2, &mut r);
        let goal = (seed % ns as u64) as usize;
        let spec = GoalSpec::new(StateMarginal::point_mass(ns, goal), eps, GoalMetric::LInf).unwrap();
        let rec = per_episode_reach_probability(&mdp, &policy, &spec, &index_coordinates(ns), goal).unwrap();
        prop_assert!(rec.p_any >= rec.p_uniform_t - 1e-12);
        prop_assert!(rec.p_any <= 1.0);
    }
}
