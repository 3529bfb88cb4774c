//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smm_lab::baselines::{index_coordinates, run_intrinsic_loop, BonusKind, IntrinsicConfig};
use smm_lab::experiment::{
    method_marginal, random_goal_instance, random_prop1_instance, run, sign_alternation_rate, ExperimentConfig,
    ExperimentKind, BRUTE_FORCE_RATE, BRUTE_FORCE_STEPS,
};
use smm_lab::goals::{
    brute_force_optimal_target, expected_hitting_episodes, hitting_objective, optimal_target,
    per_episode_reach_probability, GoalMetric, GoalSpec,
};
use smm_lab::marginal::{
    damped_residual, entropy, finite_horizon_marginal, mixture_marginal, random_simplex, stationary_distribution,
    Policy, StateMarginal,
};
use smm_lab::mdp::{policy_transition_matrix, sample_episode, Gridworld, TabularMDP};
use smm_lab::sm4::{run_sm4, DiscriminatorMode, Sm4Config};
use smm_lab::smm::{run_fictitious_play, run_greedy_alternation, verify_minmax_equivalence, LoopConfig, Mode};
use smm_lab::solvers::RewardTable;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn didactic() -> Gridworld {
    Gridworld::new(&smm_lab::experiment::didactic_spec(0.0)).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (mdp, policy, target) = random_prop1_instance(&mut rng).unwrap();
        worst = worst.max(verify_minmax_equivalence(&mdp, &policy, &target).unwrap().gap);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 5.0, format!("max |lhs - rhs| = {worst:.3e} over 100 MDPs, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances: Vec<_> = (0..50).map(|_| random_goal_instance(&mut rng, 10)).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for eps in [0.0, 1.0] {
        let mut worst_linf: f64 = 0.0;
        let mut beaten = 0;
        for (goal, coords) in &instances {
            let spec = GoalSpec::new(goal.clone(), eps, GoalMetric::LInf).unwrap();
            let rule = optimal_target(&spec, coords).unwrap();
            let brute = brute_force_optimal_target(&spec, coords, BRUTE_FORCE_STEPS, BRUTE_FORCE_RATE).unwrap();
            let linf = rule.probs().iter().zip(brute.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_linf = worst_linf.max(linf);
            let f_rule = hitting_objective(&rule, &spec, coords).unwrap();
            for _ in 0..100 {
                let x = StateMarginal::new(random_simplex(goal.num_states(), &mut rng)).unwrap();
                if hitting_objective(&x, &spec, coords).unwrap() < f_rule {
                    beaten += 1;
                }
            }
        }
        let ok = worst_linf <= 1e-4 && beaten == 0;
        pass &= ok;
        parts.push(format!(
            "eps={eps}: max Linf(brute, sqrt rule) = {worst_linf:.3e}, random points below rule = {beaten} [{}]",
            if ok { "ok" } else { "fail" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    parts.push(format!("{secs:.2}s"));
    outcome(pass, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut worst_rel: f64 = 0.0;
    for i in 0..100 {
        let mdp = TabularMDP::random(6, 3, 10, &mut rng).unwrap();
        let policy = Policy::random_stationary(6, 3, &mut rng);
        let goal_state = rng.random_range(0..6);
        let eps = if i % 2 == 0 { 0.0 } else { 1.0 };
        let coords = index_coordinates(6);
        let spec = GoalSpec::new(StateMarginal::point_mass(6, goal_state), eps, GoalMetric::LInf).unwrap();
        let r = per_episode_reach_probability(&mdp, &policy, &spec, &coords, goal_state).unwrap();
        if r.p_any < r.p_uniform_t {
            violations += 1;
        }
        min_margin = min_margin.min(r.p_any - r.p_uniform_t);
        let h = expected_hitting_episodes(&mdp, &[policy], &spec, &coords, goal_state, &mut rng, 10_000).unwrap();
        worst_rel = worst_rel.max((h.analytic - h.monte_carlo).abs() / h.monte_carlo);
    }
    outcome(
        violations == 0 && worst_rel <= 0.10,
        format!(
            "p_any < p_uniform_t on {violations}/100 (min margin {min_margin:.3e}); max hitting rel. error {:.2}%",
            100.0 * worst_rel
        ),
    )
}

fn criterion_4() -> Outcome {
    let world = didactic();
    let mdp = world.mdp();
    let ns = mdp.num_states();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::random_stationary(ns, mdp.num_actions(), &mut rng);
    let exact = finite_horizon_marginal(mdp, &policy).unwrap();
    let mut counts = vec![0.0; ns];
    let episodes = 100_000u64;
    for seed in 0..episodes {
        for s in sample_episode(mdp, &policy, seed).unwrap().states {
            counts[s] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let tv = 0.5 * exact.probs().iter().zip(&counts).map(|(p, c)| (p - c / total).abs()).sum::<f64>();
    let damping = 0.01;
    let m = stationary_distribution(mdp, &policy, damping, 1e-13, 1_000_000).unwrap();
    let matrix = policy_transition_matrix(mdp, policy.step(0)).unwrap();
    let residual = damped_residual(&matrix, damping, m.probs());
    outcome(
        tv <= 0.01 && residual <= 1e-10,
        format!("TV(exact, 1e5 episodes) = {tv:.2e}; stationary residual = {residual:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let world = didactic();
    let target = StateMarginal::uniform(world.num_states());
    let base = LoopConfig::default().with_iterations(200).with_split(world.half_split());
    let greedy = run_greedy_alternation(world.mdp(), &target, &base).unwrap();
    let rate = sign_alternation_rate(&greedy.metrics, 10);
    let fp = run_fictitious_play(world.mdp(), &target, &base).unwrap();
    let first = fp.metrics.iter().find(|m| m.kl_to_target <= 0.05).map(|m| m.iteration);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rate >= 0.8 && first.is_some() && secs < 120.0,
        format!(
            "greedy sign alternation {:.1}%; FP KL <= 0.05 first at iteration {:?} (final {:.2e}); {secs:.2}s",
            100.0 * rate,
            first,
            fp.metrics.last().unwrap().kl_to_target
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::new(ExperimentKind::StochasticitySweep, "unused");
    let base = LoopConfig::default()
        .with_iterations(cfg.iterations)
        .with_marginal(smm_lab::smm::MarginalKind::Stationary { damping: cfg.damping, planning_horizon: cfg.planning_horizon });
    let sweep = |method: &str| -> Vec<f64> {
        cfg.xi_grid
            .iter()
            .map(|&xi| {
                let world = Gridworld::new(&cfg.env.with_xi(xi)).unwrap();
                entropy(&method_marginal(method, &world, &base).unwrap())
            })
            .collect()
    };
    let smm = sweep("smm");
    let inverse = sweep("inverse");
    let spread = smm.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - smm.iter().cloned().fold(f64::INFINITY, f64::min);
    let monotone = inverse.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        spread <= 0.1 && monotone && secs < 300.0,
        format!(
            "SMM spread {spread:.4} nats [{}]; inverse [{}] nonincreasing: {} [{}]; {secs:.2}s",
            if spread <= 0.1 { "ok" } else { "fail" },
            fmt(&inverse),
            monotone,
            if monotone { "ok" } else { "fail" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let world = didactic();
    let ns = world.num_states();
    let coords = world.coordinates();
    let mut first_ok = true;
    let mut kinds_ok = 0;
    let mut rows = Vec::new();
    for bonus in BonusKind::ALL {
        let (mut ha_sum, mut plain_sum) = (0.0, 0.0);
        for seed in 0..4 {
            let base = LoopConfig::default().with_seed(seed).with_split(world.half_split());
            let ha = run_intrinsic_loop(
                world.mdp(),
                &coords,
                &RewardTable::zeros(ns),
                &IntrinsicConfig::new(base.clone(), bonus).with_historical_average(true),
            )
            .unwrap();
            let plain =
                run_intrinsic_loop(world.mdp(), &coords, &RewardTable::zeros(ns), &IntrinsicConfig::new(base, bonus))
                    .unwrap();
            let last = ha.state.metrics.last().unwrap();
            first_ok &= last.entropy_ha >= last.entropy_iterate - 1e-9;
            ha_sum += ha.evaluation_entropy();
            plain_sum += plain.evaluation_entropy();
        }
        let (ha_mean, plain_mean) = (ha_sum / 4.0, plain_sum / 4.0);
        if ha_mean >= plain_mean - 1e-9 {
            kinds_ok += 1;
        }
        rows.push(format!("{} {ha_mean:.4}/{plain_mean:.4}", bonus.name()));
    }
    outcome(
        first_ok && kinds_ok >= 4,
        format!("HA >= final on every run: {first_ok}; HA >= non-HA on {kinds_ok}/5 kinds ({})", rows.join(", ")),
    )
}

/// Marginal of a latent-conditioned mixture computed on the product MDP over
/// `(z, s)`, projected back onto `s`.
fn product_mdp_marginal(mdp: &TabularMDP, policies: &[Policy], prior: &[f64]) -> Vec<f64> {
    let (ns, na, n) = (mdp.num_states(), mdp.num_actions(), policies.len());
    let big = n * ns;
    let mut transition = vec![0.0; big * na * big];
    let mut initial = vec![0.0; big];
    for z in 0..n {
        for s in 0..ns {
            initial[z * ns + s] = prior[z] * mdp.initial()[s];
            for a in 0..na {
                for (s2, p) in mdp.next_state_probs(s, a).iter().enumerate() {
                    transition[((z * ns + s) * na + a) * big + z * ns + s2] = *p;
                }
            }
        }
    }
    let product = TabularMDP::new(big, na, transition, initial, mdp.horizon()).unwrap();
    let steps = (0..mdp.horizon())
        .map(|t| (0..n).flat_map(|z| (0..ns).flat_map(move |s| policies[z].action_probs(t, s).to_vec())).collect())
        .collect();
    let joint = finite_horizon_marginal(&product, &Policy::new(big, na, steps).unwrap()).unwrap();
    (0..ns).map(|s| (0..n).map(|z| joint.probs()[z * ns + s]).sum()).collect()
}

fn criterion_8_exactness() -> (bool, String) {
    let world = didactic();
    let target = StateMarginal::uniform(world.num_states());
    let mut parts = Vec::new();

    let mut bitwise = true;
    for mode in [Mode::Exact, Mode::Sampled { episodes_per_iter: 10 }] {
        for seed in 0..2 {
            let base = LoopConfig::default().with_iterations(30).with_mode(mode).with_seed(seed).with_split(world.half_split());
            let smm = run_fictitious_play(world.mdp(), &target, &base).unwrap();
            let sm4 = run_sm4(world.mdp(), &target, &Sm4Config::new(base, 1)).unwrap();
            let stream: Vec<_> = sm4.metrics.iter().map(|m| m.mixture).collect();
            bitwise &= stream == smm.metrics;
        }
    }
    parts.push(format!("n=1 bitwise: {bitwise}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mdp = TabularMDP::random(5, 3, 6, &mut rng).unwrap();
        let n = rng.random_range(2..5);
        let prior = random_simplex(n, &mut rng);
        let policies: Vec<Policy> = (0..n).map(|_| Policy::random_stationary(5, 3, &mut rng)).collect();
        let comps: Vec<StateMarginal> = policies.iter().map(|p| finite_horizon_marginal(&mdp, p).unwrap()).collect();
        let linear = mixture_marginal(&comps, &prior).unwrap();
        let oracle = product_mdp_marginal(&mdp, &policies, &prior);
        worst = worst.max(linear.probs().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    parts.push(format!("mixture linearity max error {worst:.2e}"));

    let mut min_gap = f64::INFINITY;
    for mode in [Mode::Exact, Mode::Sampled { episodes_per_iter: 10 }] {
        for n in [2, 4] {
            let base = LoopConfig::default().with_iterations(30).with_mode(mode).with_seed(n as u64);
            let mut cfg = Sm4Config::new(base.with_split(world.half_split()), n);
            cfg.discriminator = DiscriminatorMode::Fitted;
            let state = run_sm4(world.mdp(), &target, &cfg).unwrap();
            min_gap = state.metrics.iter().map(|m| m.jensen_gap).fold(min_gap, f64::min);
        }
    }
    parts.push(format!("min fitted Jensen gap {min_gap:.2e}"));
    (bitwise && worst <= 1e-12 && min_gap >= -1e-10, parts.join("; "))
}

fn criterion_8_direction() -> (bool, String) {
    let world = didactic();
    let target = StateMarginal::uniform(world.num_states());
    let mut means = Vec::new();
    for n in [1, 2, 4] {
        let total: f64 = (0..4)
            .map(|seed| {
                let base = LoopConfig::default().with_seed(seed).with_split(world.half_split());
                run_sm4(world.mdp(), &target, &Sm4Config::new(base, n)).unwrap().metrics.last().unwrap().mixture.kl_to_target
            })
            .sum();
        means.push(total / 4.0);
    }
    let ok = means.windows(2).all(|w| w[1] <= w[0]);
    (ok, format!("mean final KL n=1,2,4: {:.3e} {:.3e} {:.3e} nonincreasing: {ok}", means[0], means[1], means[2]))
}

fn criterion_8() -> Outcome {
    let (a, da) = criterion_8_exactness();
    let (b, db) = criterion_8_direction();
    outcome(
        a && b,
        format!("{da} [{}]; {db} [{}]", if a { "ok" } else { "fail" }, if b { "ok" } else { "fail" }),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_9(suite_start: Instant) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut files = 0;
    for kind in ExperimentKind::ALL {
        let mut outputs = Vec::new();
        for (rep, jobs) in [(0, 1), (1, 4)] {
            let mut cfg = ExperimentConfig::new(kind, tmp.path().join(format!("{}_{rep}", kind.name())));
            cfg.seeds = vec![0, 1];
            run(&cfg, jobs).unwrap();
            outputs.push(csv_files(&cfg.out_dir));
        }
        files += outputs[0].len();
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            mismatched.push(kind.name());
        }
    }
    let secs = suite_start.elapsed().as_secs_f64();
    outcome(
        mismatched.is_empty() && secs < 600.0,
        format!("{files} CSVs compared across reruns, mismatched kinds {mismatched:?}; suite runtime {secs:.1}s"),
    )
}

fn main() {
    let suite_start = Instant::now();
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = Vec::new();
    let mut report = |id: u32, o: Outcome| {
        println!("criterion {id}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(id);
        }
    };
    for (id, f) in criteria {
        report(id, f());
    }
    report(9, criterion_9(suite_start));
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
