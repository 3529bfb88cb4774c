//! State marginal matching by fictitious play.
//!
//! The policy player best-responds (exact backward induction) to the reward
//! `log p*(s) − log q̄(s)`; the density player fits a histogram to the
//! historical average of the policy iterates' marginals. The exploration
//! artifact is the historical-average policy: one iterate sampled uniformly
//! per episode, so its marginal is the mean of the iterates' marginals.
//!
//! [`run_greedy_alternation`] is the ablation where both players respond only
//! to the other's latest strategy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::{
    average_densities, default_virtual_samples, fit_from_buffer, fit_from_marginal, DensityModel,
    HistogramDensity,
};
use crate::error::{Error, Result};
use crate::marginal::{
    entropy, finite_horizon_marginal, kl_divergence, mean_marginal, mixture_marginal, stationary_distribution,
    state_action_occupancy, Policy, StateMarginal,
};
use crate::mdp::{rollout, HalfSplit, TabularMDP};
use crate::solvers::{finite_horizon_value_iteration, soft_value_iteration, RewardTable};

/// Reward assigned to states the target forbids (`p*(s) = 0`).
pub const FORBIDDEN_STATE_REWARD: f64 = -27.631021115928547; // ln(1e-12)

/// How the density player sees the policy player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Densities are fit to exact marginals.
    Exact,
    /// Densities are fit to replay-buffer samples.
    Sampled { episodes_per_iter: usize },
}

/// Which notion of state marginal the loop optimizes and reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginalKind {
    /// Time-averaged occupancy over the MDP's episode horizon.
    FiniteHorizon,
    /// Stationary distribution of a stationary policy. Best responses are
    /// planned over `planning_horizon` steps and the first-step decision rule
    /// is kept as the stationary policy.
    Stationary { damping: f64, planning_horizon: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityHistory {
    /// Reward uses the uniform average of all density iterates.
    Average,
    /// Reward uses only the most recent density iterate.
    Latest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySolver {
    Hard,
    Soft { temperature: f64 },
}

/// Weights of the iterates in the historical-average policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterateWeighting {
    Uniform,
    /// Iterate `i` of `m` gets weight proportional to `decay^(m - i)`.
    Exponential { decay: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub iterations: usize,
    pub mode: Mode,
    /// Histogram smoothing; `None` picks 0 for exact mode and 1 for sampled mode.
    pub alpha: Option<f64>,
    /// Virtual sample size for exact-mode fits; `None` picks `10 |S|`.
    pub n_virtual: Option<f64>,
    pub seed: u64,
    pub density_history: DensityHistory,
    pub marginal: MarginalKind,
    pub solver: PolicySolver,
    pub weighting: IterateWeighting,
    /// Masks for the left/right mass columns; `None` splits state indices in half.
    pub split: Option<HalfSplit>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            mode: Mode::Exact,
            alpha: None,
            n_virtual: None,
            seed: 0,
            density_history: DensityHistory::Average,
            marginal: MarginalKind::FiniteHorizon,
            solver: PolicySolver::Hard,
            weighting: IterateWeighting::Uniform,
            split: None,
        }
    }
}

impl LoopConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_marginal(mut self, marginal: MarginalKind) -> Self {
        self.marginal = marginal;
        self
    }

    pub fn with_split(mut self, split: HalfSplit) -> Self {
        self.split = Some(split);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.mode {
            Mode::Exact => 0.0,
            Mode::Sampled { .. } => 1.0,
        })
    }

    pub fn n_virtual(&self, num_states: usize) -> f64 {
        self.n_virtual.unwrap_or_else(|| default_virtual_samples(num_states))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if let Mode::Sampled { episodes_per_iter: 0 } = self.mode {
            return Err(Error::Config("sampled mode needs at least one episode per iteration".into()));
        }
        if let MarginalKind::Stationary { planning_horizon: 0, .. } = self.marginal {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        if let IterateWeighting::Exponential { decay } = self.weighting {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::Config(format!("exponential decay {decay} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub(crate) fn split_for(&self, num_states: usize) -> HalfSplit {
        self.split.clone().unwrap_or_else(|| HalfSplit::by_index(num_states))
    }
}

/// Evaluates marginals and best responses under one [`MarginalKind`].
#[derive(Debug, Clone)]
pub(crate) struct Evaluator<'a> {
    pub mdp: &'a TabularMDP,
    kind: MarginalKind,
    solver: PolicySolver,
    planning_mdp: Option<TabularMDP>,
}

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 2_000_000;

impl<'a> Evaluator<'a> {
    pub fn new(mdp: &'a TabularMDP, kind: MarginalKind, solver: PolicySolver) -> Result<Self> {
        let planning_mdp = match kind {
            MarginalKind::FiniteHorizon => None,
            MarginalKind::Stationary { planning_horizon, .. } => Some(mdp.with_horizon(planning_horizon)?),
        };
        Ok(Self { mdp, kind, solver, planning_mdp })
    }

    pub fn marginal(&self, policy: &Policy) -> Result<StateMarginal> {
        match self.kind {
            MarginalKind::FiniteHorizon => finite_horizon_marginal(self.mdp, policy),
            MarginalKind::Stationary { damping, .. } => {
                stationary_distribution(self.mdp, &policy.first_step(), damping, STATIONARY_TOL, STATIONARY_MAX_ITER)
            }
        }
    }

    pub fn best_response(&self, reward: &RewardTable) -> Result<Policy> {
        let mdp = self.planning_mdp.as_ref().unwrap_or(self.mdp);
        let report = match self.solver {
            PolicySolver::Hard => finite_horizon_value_iteration(mdp, reward)?,
            PolicySolver::Soft { temperature } => soft_value_iteration(mdp, reward, temperature)?,
        };
        Ok(match self.kind {
            MarginalKind::FiniteHorizon => report.policy,
            MarginalKind::Stationary { .. } => report.policy.first_step(),
        })
    }

    /// Expected per-step visits of each state-action pair under `policy`.
    pub fn state_action_visits(&self, policy: &Policy, marginal: &StateMarginal) -> Result<Vec<f64>> {
        match self.kind {
            MarginalKind::FiniteHorizon => {
                let mut occ = state_action_occupancy(self.mdp, policy)?;
                let inv = 1.0 / self.mdp.horizon() as f64;
                occ.iter_mut().for_each(|o| *o *= inv);
                Ok(occ)
            }
            MarginalKind::Stationary { .. } => {
                let na = self.mdp.num_actions();
                let table = policy.step(0);
                Ok((0..self.mdp.num_states() * na).map(|i| marginal.probs()[i / na] * table[i]).collect())
            }
        }
    }

    /// Expected per-step reward of `policy` whose marginal is `marginal`.
    pub fn per_step_reward(&self, policy: &Policy, marginal: &StateMarginal, reward: &RewardTable) -> Result<f64> {
        match reward.as_state() {
            Some(r) => Ok(marginal.probs().iter().zip(r).map(|(p, x)| p * x).sum()),
            None => {
                let na = self.mdp.num_actions();
                let visits = self.state_action_visits(policy, marginal)?;
                Ok(visits.iter().enumerate().map(|(i, v)| v * reward.get(i / na, i % na)).sum())
            }
        }
    }
}

/// Metrics recorded after each iteration. Entropies and KL are in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Entropy of the historical-average marginal.
    pub entropy_ha: f64,
    /// `KL(ρ̄ ‖ p*)`; infinite when the average visits forbidden states.
    pub kl_to_target: f64,
    /// Expected per-step reward the newest iterate earns on the reward it was trained on.
    pub objective_value: f64,
    /// Left/right mass of the newest iterate's marginal.
    pub mass_left: f64,
    pub mass_right: f64,
    /// Entropy of the newest iterate's marginal.
    pub entropy_iterate: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FictitiousPlayState {
    pub iterates: Vec<Policy>,
    pub iterate_marginals: Vec<StateMarginal>,
    pub densities: Vec<HistogramDensity>,
    /// Visited states collected in sampled mode (empty in exact mode).
    pub buffer: Vec<usize>,
    pub metrics: Vec<IterationMetrics>,
    pub weighting: IterateWeighting,
    pub marginal_kind: MarginalKind,
}

impl FictitiousPlayState {
    /// Marginal of the historical-average policy under the run's marginal kind and weighting.
    pub fn ha_marginal(&self) -> StateMarginal {
        weighted_history(&self.iterate_marginals, self.weighting)
    }

    pub fn final_marginal(&self) -> &StateMarginal {
        self.iterate_marginals.last().expect("runs have at least one iterate")
    }
}

pub(crate) fn iterate_weights(m: usize, weighting: IterateWeighting) -> Vec<f64> {
    match weighting {
        IterateWeighting::Uniform => vec![1.0 / m as f64; m],
        IterateWeighting::Exponential { decay } => {
            let raw: Vec<f64> = (0..m).map(|i| decay.powi((m - 1 - i) as i32)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        }
    }
}

pub(crate) fn weighted_history(marginals: &[StateMarginal], weighting: IterateWeighting) -> StateMarginal {
    match weighting {
        IterateWeighting::Uniform => mean_marginal(marginals).expect("nonempty, consistent history"),
        _ => mixture_marginal(marginals, &iterate_weights(marginals.len(), weighting))
            .expect("nonempty, consistent history"),
    }
}

/// `KL(p ‖ q)`, or `+inf` when `p` puts mass where `q` has none.
pub fn kl_or_infinite(p: &StateMarginal, q: &StateMarginal) -> f64 {
    match kl_divergence(p, q) {
        Ok(v) => v,
        Err(Error::Support { .. }) => f64::INFINITY,
        Err(e) => panic!("kl between marginals of equal size failed: {e}"),
    }
}

/// `r(s) = log p*(s) − log q(s)`; forbidden states get [`FORBIDDEN_STATE_REWARD`].
pub fn smm_reward(target: &StateMarginal, density: &dyn DensityModel) -> Result<RewardTable> {
    smm_reward_with_floor(target, density, FORBIDDEN_STATE_REWARD)
}

pub fn smm_reward_with_floor(target: &StateMarginal, density: &dyn DensityModel, floor: f64) -> Result<RewardTable> {
    if target.num_states() != density.num_states() {
        return Err(Error::Dimension(format!(
            "target over {} states, density over {}",
            target.num_states(),
            density.num_states()
        )));
    }
    let values = target
        .probs()
        .iter()
        .enumerate()
        .map(|(s, &p)| if p > 0.0 { Ok(p.ln() - density.log_prob(s)?) } else { Ok(floor) })
        .collect::<Result<Vec<_>>>()?;
    RewardTable::state(values)
}

fn check_target(mdp: &TabularMDP, target: &StateMarginal) -> Result<()> {
    if target.num_states() != mdp.num_states() {
        return Err(Error::Dimension(format!(
            "target over {} states, MDP has {}",
            target.num_states(),
            mdp.num_states()
        )));
    }
    Ok(())
}

/// Fictitious play: densities track the historical average of the policy
/// iterates, policies best-respond to the averaged densities.
pub fn run_fictitious_play(mdp: &TabularMDP, target: &StateMarginal, config: &LoopConfig) -> Result<FictitiousPlayState> {
    run_smm_loop(mdp, target, config, false)
}

/// Greedy alternation: each player responds only to the other's latest strategy.
pub fn run_greedy_alternation(
    mdp: &TabularMDP,
    target: &StateMarginal,
    config: &LoopConfig,
) -> Result<FictitiousPlayState> {
    run_smm_loop(mdp, target, config, true)
}

fn run_smm_loop(mdp: &TabularMDP, target: &StateMarginal, config: &LoopConfig, greedy: bool) -> Result<FictitiousPlayState> {
    config.validate()?;
    check_target(mdp, target)?;
    let eval = Evaluator::new(mdp, config.marginal, config.solver)?;
    let ns = mdp.num_states();
    let alpha = config.alpha();
    let n_virtual = config.n_virtual(ns);
    let split = config.split_for(ns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial = Policy::uniform(ns, mdp.num_actions());
    // marginals of every policy that generated density-player data, including the initial one
    let mut data_marginals = vec![eval.marginal(&initial)?];
    let mut buffer = Vec::new();
    let mut last_batch = Vec::new();
    if let Mode::Sampled { episodes_per_iter } = config.mode {
        last_batch = collect_states(mdp, &initial, episodes_per_iter, &mut rng);
        buffer.extend_from_slice(&last_batch);
    }

    let mut state = FictitiousPlayState {
        iterates: Vec::with_capacity(config.iterations),
        iterate_marginals: Vec::with_capacity(config.iterations),
        densities: Vec::with_capacity(config.iterations),
        buffer: Vec::new(),
        metrics: Vec::with_capacity(config.iterations),
        weighting: config.weighting,
        marginal_kind: config.marginal,
    };

    for iteration in 1..=config.iterations {
        let density = match config.mode {
            Mode::Exact => {
                let data = if greedy {
                    data_marginals.last().expect("nonempty").clone()
                } else {
                    mean_marginal(&data_marginals)?
                };
                fit_from_marginal(&data, alpha, n_virtual)?
            }
            Mode::Sampled { .. } => fit_from_buffer(if greedy { &last_batch } else { &buffer }, ns, alpha)?,
        };
        state.densities.push(density);
        let reward = if greedy || config.density_history == DensityHistory::Latest {
            smm_reward(target, state.densities.last().expect("just pushed"))?
        } else {
            smm_reward(target, &average_densities(state.densities.clone())?)?
        };

        let policy = eval.best_response(&reward)?;
        let marginal = eval.marginal(&policy)?;
        let objective_value = eval.per_step_reward(&policy, &marginal, &reward)?;

        if let Mode::Sampled { episodes_per_iter } = config.mode {
            last_batch = collect_states(mdp, &policy, episodes_per_iter, &mut rng);
            buffer.extend_from_slice(&last_batch);
        }
        data_marginals.push(marginal.clone());
        state.iterates.push(policy);
        state.iterate_marginals.push(marginal);

        let ha = state.ha_marginal();
        let newest = state.final_marginal();
        let (mass_left, mass_right) = split.masses(newest.probs());
        state.metrics.push(IterationMetrics {
            iteration,
            entropy_ha: entropy(&ha),
            kl_to_target: kl_or_infinite(&ha, target),
            objective_value,
            mass_left,
            mass_right,
            entropy_iterate: entropy(newest),
        });
    }
    state.buffer = buffer;
    Ok(state)
}

pub(crate) fn collect_states(mdp: &TabularMDP, policy: &Policy, episodes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(episodes * mdp.horizon());
    for _ in 0..episodes {
        out.extend(rollout(mdp, policy, rng).0);
    }
    out
}

/// Uniform-weight mean of the iterates' finite-horizon marginals.
pub fn historical_average_marginal(state: &FictitiousPlayState, mdp: &TabularMDP) -> Result<StateMarginal> {
    if state.iterates.is_empty() {
        return Err(Error::Empty("no policy iterates".into()));
    }
    let marginals = state
        .iterates
        .iter()
        .map(|p| finite_horizon_marginal(mdp, p))
        .collect::<Result<Vec<_>>>()?;
    mean_marginal(&marginals)
}

/// Both sides of the max-min identity for one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxRecord {
    /// `E_ρ[log p* − log ρ]`.
    pub lhs: f64,
    /// `min_q E_ρ[log p* − log q]` over tabular densities, attained at the fitted `q = ρ`.
    pub rhs: f64,
    pub gap: f64,
}

/// `E_ρ[log p*(s) − log q(s)]` over the support of `ρ`.
pub fn density_player_objective(rho: &StateMarginal, target: &StateMarginal, q: &StateMarginal) -> Result<f64> {
    if rho.num_states() != target.num_states() || rho.num_states() != q.num_states() {
        return Err(Error::Dimension("marginal, target and density sizes differ".into()));
    }
    let mut total = 0.0;
    for (s, ((&r, &p), &qs)) in rho.probs().iter().zip(target.probs()).zip(q.probs()).enumerate() {
        if r == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::Support { state: s, detail: "policy visits a state the target forbids".into() });
        }
        if qs == 0.0 {
            return Err(Error::Support { state: s, detail: "density assigns zero probability to a visited state".into() });
        }
        total += r * (p.ln() - qs.ln());
    }
    Ok(total)
}

/// Evaluates the max-min identity for `policy`: the SMM objective against the
/// density player's best response in the tabular family.
pub fn verify_minmax_equivalence(mdp: &TabularMDP, policy: &Policy, target: &StateMarginal) -> Result<MinMaxRecord> {
    check_target(mdp, target)?;
    let rho = finite_horizon_marginal(mdp, policy)?;
    let lhs = density_player_objective(&rho, target, &rho)?;
    let best_density = fit_from_marginal(&rho, 0.0, default_virtual_samples(mdp.num_states()))?;
    let q = StateMarginal::from_probs(best_density.probs());
    let rhs = density_player_objective(&rho, target, &q)?;
    Ok(MinMaxRecord { lhs, rhs, gap: (lhs - rhs).abs() })
}
