//! Tabular analogs of count-based and prediction-error exploration.
//!
//! Every baseline alternates between recomputing an intrinsic bonus from the
//! data gathered so far and solving the resulting MDP to optimality, so each
//! iterate is a deterministic policy. The historical average of the iterates
//! can be used as the evaluation policy instead of the last iterate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::marginal::{entropy, Policy, StateMarginal};
use crate::mdp::{rollout, TabularMDP};
use crate::smm::{kl_or_infinite, Evaluator, FictitiousPlayState, IterationMetrics, LoopConfig, Mode, PolicySolver};
use crate::solvers::RewardTable;

/// Visit statistics. Transition counts only include steps that have a
/// successor, so `Σ_{s'} n(s,a,s') = n(s,a)` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitCounts {
    num_states: usize,
    num_actions: usize,
    state: Vec<f64>,
    state_action: Vec<f64>,
    /// `transition[(s * A + a) * S + s']`
    transition: Vec<f64>,
    total: f64,
}

impl VisitCounts {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            state: vec![0.0; num_states],
            state_action: vec![0.0; num_states * num_actions],
            transition: vec![0.0; num_states * num_actions * num_states],
            total: 0.0,
        }
    }

    pub fn from_state_counts(counts: Vec<f64>) -> Self {
        let mut out = Self::new(counts.len(), 1);
        out.total = counts.iter().sum();
        out.state = counts;
        out
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn state_counts(&self) -> &[f64] {
        &self.state
    }

    pub fn state_action_counts(&self) -> &[f64] {
        &self.state_action
    }

    pub fn transition_counts(&self) -> &[f64] {
        &self.transition
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn add_episode(&mut self, states: &[usize], actions: &[usize]) {
        for (t, (&s, &a)) in states.iter().zip(actions).enumerate() {
            self.state[s] += 1.0;
            self.total += 1.0;
            if let Some(&next) = states.get(t + 1) {
                self.state_action[s * self.num_actions + a] += 1.0;
                self.transition[(s * self.num_actions + a) * self.num_states + next] += 1.0;
            }
        }
    }

    /// Adds `weight` episodes' worth of expected counts, given per-step
    /// state-action visit probabilities.
    pub fn add_expected(&mut self, mdp: &TabularMDP, visits: &[f64], weight: f64) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if mdp.num_states() != ns || mdp.num_actions() != na || visits.len() != ns * na {
            return Err(Error::Dimension("visit table does not match the counts".into()));
        }
        for s in 0..ns {
            for a in 0..na {
                let v = weight * visits[s * na + a];
                if v == 0.0 {
                    continue;
                }
                self.state[s] += v;
                self.total += v;
                self.state_action[s * na + a] += v;
                let row = &mut self.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                for (slot, p) in row.iter_mut().zip(mdp.next_state_probs(s, a)) {
                    *slot += v * p;
                }
            }
        }
        Ok(())
    }

    /// Transition counts of a uniform data policy over the true kernel,
    /// `n(s,a,s') = P(s'|s,a) / A`.
    pub fn uniform_data(mdp: &TabularMDP) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut out = Self::new(ns, na);
        let w = 1.0 / na as f64;
        for (slot, p) in out.transition.iter_mut().zip(mdp.transition()) {
            *slot = w * p;
        }
        for s in 0..ns {
            for a in 0..na {
                out.state_action[s * na + a] = w;
            }
            out.state[s] = 1.0;
        }
        out.total = ns as f64;
        out
    }
}

fn check_count_support(counts: &VisitCounts, alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        if let Some(s) = counts.state.iter().position(|c| *c <= 0.0) {
            return Err(Error::Support { state: s, detail: "unvisited state with zero smoothing".into() });
        }
    }
    Ok(())
}

/// `b(s) = −log((n(s) + α) / (N + α |S|))`.
pub fn count_bonus(counts: &VisitCounts, alpha: f64) -> Result<RewardTable> {
    check_count_support(counts, alpha)?;
    let denom = counts.total + alpha * counts.num_states as f64;
    RewardTable::state(counts.state.iter().map(|n| -((n + alpha) / denom).ln()).collect())
}

/// `b(s) = 1 / (n(s) + α)`.
pub fn pseudocount_bonus(counts: &VisitCounts, alpha: f64) -> Result<RewardTable> {
    check_count_support(counts, alpha)?;
    RewardTable::state(counts.state.iter().map(|n| 1.0 / (n + alpha)).collect())
}

/// Next-state model rows `model[(s * A + a) * S + s']`: normalized counts,
/// with unseen pairs predicting that the agent stays put.
pub fn fitted_forward_model(counts: &VisitCounts) -> Vec<f64> {
    let (ns, na) = (counts.num_states, counts.num_actions);
    let mut model = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let i = s * na + a;
            let row = &counts.transition[i * ns..(i + 1) * ns];
            let total: f64 = row.iter().sum();
            let out = &mut model[i * ns..(i + 1) * ns];
            if total > 0.0 {
                for (o, c) in out.iter_mut().zip(row) {
                    *o = c / total;
                }
            } else {
                out[s] = 1.0;
            }
        }
    }
    model
}

/// Residual variance of the next-state coordinates,
/// `b(s,a) = E_{s'∼model}‖x(s') − μ(s,a)‖²`.
pub fn forward_model_bonus(
    model: &[f64],
    num_states: usize,
    num_actions: usize,
    coords: &[[f64; 2]],
) -> Result<RewardTable> {
    if model.len() != num_states * num_actions * num_states || coords.len() != num_states {
        return Err(Error::Dimension("forward model or coordinates do not match the state space".into()));
    }
    let mut values = Vec::with_capacity(num_states * num_actions);
    for (i, row) in model.chunks(num_states).enumerate() {
        let total: f64 = row.iter().sum();
        if row.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!("forward model row {i} sums to {total}")));
        }
        let mut mean = [0.0; 2];
        for (p, x) in row.iter().zip(coords) {
            mean[0] += p * x[0];
            mean[1] += p * x[1];
        }
        let var: f64 = row
            .iter()
            .zip(coords)
            .map(|(p, x)| p * ((x[0] - mean[0]).powi(2) + (x[1] - mean[1]).powi(2)))
            .sum();
        values.push(var);
    }
    RewardTable::state_action(num_states, num_actions, values)
}

/// `b(s,a) = E_{s'∼P(·|s,a)}[−log p̂(a|s,s')]` with
/// `p̂(a|s,s') = (n(s,a,s') + α) / (Σ_b n(s,b,s') + α A)`.
pub fn inverse_model_bonus(mdp: &TabularMDP, counts: &VisitCounts, alpha: f64) -> Result<RewardTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if counts.num_states != ns || counts.num_actions != na {
        return Err(Error::Dimension("counts do not match the MDP".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = |s: usize, a: usize, next: usize| counts.transition[(s * na + a) * ns + next];
    let mut values = vec![0.0; ns * na];
    for s in 0..ns {
        for next in 0..ns {
            let pair_total: f64 = (0..na).map(|b| n(s, b, next)).sum::<f64>() + alpha * na as f64;
            for a in 0..na {
                let p = mdp.next_state_probs(s, a)[next];
                if p == 0.0 {
                    continue;
                }
                let numer = n(s, a, next) + alpha;
                if !(numer > 0.0) {
                    return Err(Error::Support {
                        state: s,
                        detail: format!("transition to {next} under action {a} never observed"),
                    });
                }
                values[s * na + a] += p * -(numer / pair_total).ln();
            }
        }
    }
    RewardTable::state_action(ns, na, values)
}

/// Fixed random target vectors `e(s)` with standard-normal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEmbedding {
    pub embed_dim: usize,
    pub table: Vec<Vec<f64>>,
    pub seed: u64,
}

impl RandomEmbedding {
    pub fn new(num_states: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..num_states)
            .map(|_| (0..embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self { embed_dim, table, seed }
    }
}

/// Squared error of a least-squares predictor table that matches `e(s)` on
/// visited states and predicts zero elsewhere.
pub fn rnd_bonus(embedding: &RandomEmbedding, counts: &VisitCounts) -> Result<RewardTable> {
    if embedding.table.len() != counts.num_states {
        return Err(Error::Dimension("embedding and counts differ in state count".into()));
    }
    RewardTable::state(
        embedding
            .table
            .iter()
            .zip(&counts.state)
            .map(|(e, n)| if *n > 0.0 { 0.0 } else { e.iter().map(|x| x * x).sum() })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BonusKind {
    Count,
    Pseudocount,
    Forward,
    Inverse,
    Rnd,
}

impl BonusKind {
    pub const ALL: [BonusKind; 5] = [Self::Count, Self::Pseudocount, Self::Forward, Self::Inverse, Self::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            Self::Count => "count",
            Self::Pseudocount => "pseudocount",
            Self::Forward => "forward",
            Self::Inverse => "inverse",
            Self::Rnd => "rnd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown bonus kind '{name}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicConfig {
    pub base: LoopConfig,
    pub bonus: BonusKind,
    /// Weight of the bonus added to the extrinsic reward.
    pub coefficient: f64,
    /// Smoothing of counts and inverse-model frequencies.
    pub count_alpha: f64,
    pub use_historical_average: bool,
    pub embed_dim: usize,
}

impl IntrinsicConfig {
    pub fn new(base: LoopConfig, bonus: BonusKind) -> Self {
        Self { base, bonus, coefficient: 1.0, count_alpha: 1.0, use_historical_average: false, embed_dim: 8 }
    }

    pub fn with_historical_average(mut self, on: bool) -> Self {
        self.use_historical_average = on;
        self
    }
}

/// Result of an intrinsic-reward run; `state.densities` stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicRun {
    pub bonus: BonusKind,
    pub state: FictitiousPlayState,
    pub use_historical_average: bool,
}

impl IntrinsicRun {
    /// Marginal of the evaluation policy: the historical average with the
    /// flag set, the last iterate otherwise.
    pub fn evaluation_marginal(&self) -> StateMarginal {
        if self.use_historical_average {
            self.state.ha_marginal()
        } else {
            self.state.final_marginal().clone()
        }
    }

    pub fn evaluation_entropy(&self) -> f64 {
        entropy(&self.evaluation_marginal())
    }
}

/// `[s, 0]` coordinates for MDPs without a grid layout.
pub fn index_coordinates(num_states: usize) -> Vec<[f64; 2]> {
    (0..num_states).map(|s| [s as f64, 0.0]).collect()
}

/// Alternates bonus computation and exact RL on `extrinsic + coefficient * bonus`.
/// Data come from the initial uniform policy and every iterate: expected
/// counts in exact mode, sampled episodes otherwise.
pub fn run_intrinsic_loop(
    mdp: &TabularMDP,
    coords: &[[f64; 2]],
    extrinsic: &RewardTable,
    config: &IntrinsicConfig,
) -> Result<IntrinsicRun> {
    let base = &config.base;
    base.validate()?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if extrinsic.num_states() != ns || coords.len() != ns {
        return Err(Error::Dimension("extrinsic reward or coordinates do not match the MDP".into()));
    }
    let eval = Evaluator::new(mdp, base.marginal, base.solver)?;
    let split = base.split_for(ns);
    let uniform_target = StateMarginal::uniform(ns);
    let episode_weight = mdp.horizon() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let embedding = RandomEmbedding::new(ns, config.embed_dim, base.seed);
    let exact_inverse = VisitCounts::uniform_data(mdp);

    let mut counts = VisitCounts::new(ns, na);
    let mut record = |policy: &Policy, marginal: &StateMarginal, counts: &mut VisitCounts| -> Result<()> {
        match base.mode {
            Mode::Exact => counts.add_expected(mdp, &eval.state_action_visits(policy, marginal)?, episode_weight),
            Mode::Sampled { episodes_per_iter } => {
                for _ in 0..episodes_per_iter {
                    let (states, actions) = rollout(mdp, policy, &mut rng);
                    counts.add_episode(&states, &actions);
                }
                Ok(())
            }
        }
    };
    let initial = Policy::uniform(ns, na);
    record(&initial, &eval.marginal(&initial)?, &mut counts)?;

    let mut state = FictitiousPlayState {
        iterates: Vec::with_capacity(base.iterations),
        iterate_marginals: Vec::with_capacity(base.iterations),
        densities: Vec::new(),
        buffer: Vec::new(),
        metrics: Vec::with_capacity(base.iterations),
        weighting: base.weighting,
        marginal_kind: base.marginal,
    };
    for iteration in 1..=base.iterations {
        let bonus = match config.bonus {
            BonusKind::Count => count_bonus(&counts, config.count_alpha)?,
            BonusKind::Pseudocount => pseudocount_bonus(&counts, config.count_alpha)?,
            BonusKind::Forward => match base.mode {
                Mode::Exact => forward_model_bonus(mdp.transition(), ns, na, coords)?,
                Mode::Sampled { .. } => forward_model_bonus(&fitted_forward_model(&counts), ns, na, coords)?,
            },
            BonusKind::Inverse => match base.mode {
                Mode::Exact => inverse_model_bonus(mdp, &exact_inverse, 0.0)?,
                Mode::Sampled { .. } => inverse_model_bonus(mdp, &counts, config.count_alpha)?,
            },
            BonusKind::Rnd => rnd_bonus(&embedding, &counts)?,
        };
        let reward = extrinsic.add_scaled(&bonus, config.coefficient, na)?;
        let policy = eval.best_response(&reward)?;
        let marginal = eval.marginal(&policy)?;
        let objective_value = eval.per_step_reward(&policy, &marginal, &reward)?;
        record(&policy, &marginal, &mut counts)?;
        state.iterates.push(policy);
        state.iterate_marginals.push(marginal);

        let ha = state.ha_marginal();
        let newest = state.final_marginal();
        let (mass_left, mass_right) = split.masses(newest.probs());
        state.metrics.push(IterationMetrics {
            iteration,
            entropy_ha: entropy(&ha),
            kl_to_target: kl_or_infinite(&ha, &uniform_target),
            objective_value,
            mass_left,
            mass_right,
            entropy_iterate: entropy(newest),
        });
    }
    Ok(IntrinsicRun { bonus: config.bonus, state, use_historical_average: config.use_historical_average })
}

/// Action-entropy maximization: one soft-optimal policy for the extrinsic
/// reward at the given temperature, evaluated under `base.marginal`.
pub fn run_maxent(mdp: &TabularMDP, extrinsic: &RewardTable, base: &LoopConfig, temperature: f64) -> Result<StateMarginal> {
    let eval = Evaluator::new(mdp, base.marginal, PolicySolver::Soft { temperature })?;
    let policy = eval.best_response(extrinsic)?;
    eval.marginal(&policy)
}
