//! Mixtures of policies (SM4): `n` latent-conditioned policy players, one
//! density per component and a discriminator `d(z|s)`.
//!
//! Component `z` maximizes
//! `r_z(s) = log p*(s) − log q_z(s) + log d(z|s) − log p(z)`. With `n = 1`
//! the last two terms vanish and the loop reproduces [`crate::smm`] exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::{average_densities, fit_from_buffer, fit_from_marginal, DensityModel, HistogramDensity};
use crate::error::{Error, Result};
use crate::marginal::{entropy, mean_marginal, mixture_marginal, Policy, StateMarginal};
use crate::mdp::{sample_categorical, TabularMDP};
use crate::smm::{
    collect_states, kl_or_infinite, weighted_history, DensityHistory, Evaluator, IterateWeighting, IterationMetrics,
    LoopConfig, Mode, FORBIDDEN_STATE_REWARD,
};
use crate::solvers::RewardTable;

/// Conditional table `d(z|s)`; each state's column sums to one over `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    num_skills: usize,
    num_states: usize,
    /// `probs[s * n + z]`
    probs: Vec<f64>,
}

impl Discriminator {
    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn prob(&self, z: usize, s: usize) -> f64 {
        self.probs[s * self.num_skills + z]
    }

    pub fn column(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_skills..(s + 1) * self.num_skills]
    }

    /// A discriminator that ignores the state and returns `prior`.
    pub fn constant(prior: &[f64], num_states: usize) -> Self {
        Self {
            num_skills: prior.len(),
            num_states,
            probs: (0..num_states).flat_map(|_| prior.iter().copied()).collect(),
        }
    }
}

/// Bayes posterior `p(z|s) ∝ p(z) ρ_z(s)`.
pub fn exact_posterior(components: &[StateMarginal], prior: &[f64]) -> Result<Discriminator> {
    posterior_impl(components, prior, false)
}

fn posterior_impl(components: &[StateMarginal], prior: &[f64], prior_if_unreached: bool) -> Result<Discriminator> {
    if components.is_empty() || components.len() != prior.len() {
        return Err(Error::Dimension(format!(
            "{} components with a prior over {} skills",
            components.len(),
            prior.len()
        )));
    }
    let n = components.len();
    let ns = components[0].num_states();
    if components.iter().any(|c| c.num_states() != ns) {
        return Err(Error::Dimension("components over different state counts".into()));
    }
    let mut probs = vec![0.0; ns * n];
    for s in 0..ns {
        let column = &mut probs[s * n..(s + 1) * n];
        for (z, c) in components.iter().enumerate() {
            column[z] = prior[z] * c.probs()[s];
        }
        let total: f64 = column.iter().sum();
        if !(total > 0.0) && prior_if_unreached {
            column.copy_from_slice(prior);
            continue;
        }
        if !(total > 0.0) {
            return Err(Error::Support { state: s, detail: "mixture assigns zero mass".into() });
        }
        column.iter_mut().for_each(|p| *p /= total);
    }
    Ok(Discriminator { num_skills: n, num_states: ns, probs })
}

/// Smoothed conditional frequencies from weighted `(z, s)` counts
/// (`counts[z * S + s]`). States without any mass get a uniform column.
pub fn fit_discriminator_weighted(
    counts: &[f64],
    num_skills: usize,
    num_states: usize,
    alpha: f64,
) -> Result<Discriminator> {
    if counts.len() != num_skills * num_states {
        return Err(Error::Dimension(format!(
            "{} counts for {num_skills} skills x {num_states} states",
            counts.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 && counts.iter().all(|c| *c == 0.0) {
        return Err(Error::Empty("empty discriminator buffer with zero smoothing".into()));
    }
    let mut probs = vec![0.0; num_states * num_skills];
    for s in 0..num_states {
        let mut state_total = 0.0;
        for z in 0..num_skills {
            state_total += counts[z * num_states + s];
        }
        let denom = state_total + num_skills as f64 * alpha;
        for z in 0..num_skills {
            probs[s * num_skills + z] = if denom > 0.0 {
                (counts[z * num_states + s] + alpha) / denom
            } else {
                1.0 / num_skills as f64
            };
        }
    }
    Ok(Discriminator { num_skills, num_states, probs })
}

/// Maximum-likelihood discriminator over a buffer of `(z, s)` pairs.
pub fn fit_discriminator(buffer: &[(usize, usize)], num_skills: usize, num_states: usize, alpha: f64) -> Result<Discriminator> {
    fit_discriminator_weighted(&pair_counts(buffer, num_skills, num_states)?, num_skills, num_states, alpha)
}

fn pair_counts(buffer: &[(usize, usize)], num_skills: usize, num_states: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; num_skills * num_states];
    for &(z, s) in buffer {
        if z >= num_skills || s >= num_states {
            return Err(Error::Dimension(format!("pair ({z}, {s}) out of range")));
        }
        counts[z * num_states + s] += 1.0;
    }
    Ok(counts)
}

/// Posterior of the buffer's own empirical joint.
pub fn empirical_posterior(counts: &[f64], num_skills: usize, num_states: usize) -> Result<Discriminator> {
    fit_discriminator_weighted(counts, num_skills, num_states, 0.0)
}

/// `E[log p(z|s)] − E[log d(z|s)]` under the weighted joint `counts[z * S + s]`.
/// Non-negative whenever `posterior` is the joint's own conditional.
pub fn jensen_gap_weighted(counts: &[f64], fitted: &Discriminator, posterior: &Discriminator) -> Result<f64> {
    let (n, ns) = (fitted.num_skills, fitted.num_states);
    if posterior.num_skills != n || posterior.num_states != ns || counts.len() != n * ns {
        return Err(Error::Dimension("discriminator and buffer shapes differ".into()));
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Empty("empty buffer".into()));
    }
    let mut gap = 0.0;
    for z in 0..n {
        for s in 0..ns {
            let w = counts[z * ns + s];
            if w == 0.0 {
                continue;
            }
            let (p, d) = (posterior.prob(z, s), fitted.prob(z, s));
            if d == 0.0 {
                return Ok(f64::INFINITY);
            }
            gap += w * (p.ln() - d.ln());
        }
    }
    Ok(gap / total)
}

pub fn jensen_gap(buffer: &[(usize, usize)], fitted: &Discriminator, posterior: &Discriminator) -> Result<f64> {
    jensen_gap_weighted(&pair_counts(buffer, fitted.num_skills, fitted.num_states)?, fitted, posterior)
}

/// `r_z(s) = log p*(s) − log q_z(s) + log d(z|s) − log p(z)`.
pub fn sm4_reward(
    z: usize,
    target: &StateMarginal,
    density: &dyn DensityModel,
    discriminator: &Discriminator,
    prior: &[f64],
) -> Result<RewardTable> {
    let ns = target.num_states();
    if density.num_states() != ns || discriminator.num_states != ns {
        return Err(Error::Dimension("target, density and discriminator sizes differ".into()));
    }
    if z >= prior.len() || discriminator.num_skills != prior.len() {
        return Err(Error::Dimension(format!("skill {z} with a prior over {} skills", prior.len())));
    }
    let log_prior = prior[z].ln();
    let values = target
        .probs()
        .iter()
        .enumerate()
        .map(|(s, &p)| {
            if p == 0.0 {
                return Ok(FORBIDDEN_STATE_REWARD);
            }
            let d = discriminator.prob(z, s);
            if d == 0.0 {
                return Err(Error::Support { state: s, detail: format!("discriminator gives skill {z} zero mass") });
            }
            Ok(p.ln() - density.log_prob(s)? + d.ln() - log_prior)
        })
        .collect::<Result<Vec<_>>>()?;
    RewardTable::state(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorMode {
    /// Bayes rule on the components' exact data marginals.
    Exact,
    /// Maximum likelihood on the `(z, s)` data (expected counts in exact mode).
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collection {
    /// Every component adds data each iteration.
    AllComponents,
    /// One component, drawn from the prior, adds data each iteration.
    SingleSampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sm4Config {
    pub base: LoopConfig,
    pub num_skills: usize,
    pub discriminator: DiscriminatorMode,
    /// `None` picks all components in exact mode and one sampled component in sampled mode.
    pub collection: Option<Collection>,
}

impl Sm4Config {
    pub fn new(base: LoopConfig, num_skills: usize) -> Self {
        Self { base, num_skills, discriminator: DiscriminatorMode::Exact, collection: None }
    }

    fn collection(&self) -> Collection {
        self.collection.unwrap_or(match self.base.mode {
            Mode::Exact => Collection::AllComponents,
            Mode::Sampled { .. } => Collection::SingleSampled,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sm4Metrics {
    /// Metrics of the mixture, in the same layout as single-policy runs.
    pub mixture: IterationMetrics,
    /// Entropy of each component's historical-average marginal.
    pub component_entropies: Vec<f64>,
    /// Jensen gap of the discriminator used this iteration.
    pub jensen_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub num_skills: usize,
    pub prior: Vec<f64>,
    /// `component_policies[z][i]` is iterate `i + 1` of component `z`.
    pub component_policies: Vec<Vec<Policy>>,
    pub component_marginals: Vec<Vec<StateMarginal>>,
    pub component_densities: Vec<Vec<HistogramDensity>>,
    /// Discriminator used in the last iteration.
    pub discriminator: Discriminator,
    /// `(z, s)` pairs collected in sampled mode.
    pub buffer: Vec<(usize, usize)>,
    pub metrics: Vec<Sm4Metrics>,
    pub weighting: IterateWeighting,
}

impl MixtureState {
    pub fn component_ha(&self, z: usize) -> StateMarginal {
        weighted_history(&self.component_marginals[z], self.weighting)
    }

    /// Marginal of the historical average of mixtures.
    pub fn mixture_ha(&self) -> StateMarginal {
        let comps: Vec<StateMarginal> = (0..self.num_skills).map(|z| self.component_ha(z)).collect();
        mixture_marginal(&comps, &self.prior).expect("consistent components")
    }
}

/// Stream id for the generator of initial component policies.
const INIT_STREAM: u64 = 1;
/// Stream id for the skill draws of single-component collection.
const SKILL_STREAM: u64 = 2;

/// SM4 loop. Component 0 starts from the uniform policy and the others from
/// seeded random policies, so components can break symmetry.
pub fn run_sm4(mdp: &TabularMDP, target: &StateMarginal, config: &Sm4Config) -> Result<MixtureState> {
    let base = &config.base;
    base.validate()?;
    let n = config.num_skills;
    if n == 0 {
        return Err(Error::Config("at least one skill is required".into()));
    }
    let ns = mdp.num_states();
    if target.num_states() != ns {
        return Err(Error::Dimension(format!("target over {} states, MDP has {ns}", target.num_states())));
    }
    let eval = Evaluator::new(mdp, base.marginal, base.solver)?;
    let alpha = base.alpha();
    let n_virtual = base.n_virtual(ns);
    let split = base.split_for(ns);
    let collection = config.collection();
    let prior = vec![1.0 / n as f64; n];
    let horizon = mdp.horizon() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(base.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut skill_rng = ChaCha8Rng::seed_from_u64(base.seed);
    skill_rng.set_stream(SKILL_STREAM);

    let initial: Vec<Policy> = (0..n)
        .map(|z| {
            if z == 0 {
                Policy::uniform(ns, mdp.num_actions())
            } else {
                Policy::random_stationary(ns, mdp.num_actions(), &mut init_rng)
            }
        })
        .collect();
    let mut data_marginals: Vec<Vec<StateMarginal>> =
        initial.iter().map(|p| eval.marginal(p).map(|m| vec![m])).collect::<Result<_>>()?;
    let mut buffers: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pairs = Vec::new();
    if let Mode::Sampled { episodes_per_iter } = base.mode {
        for (z, p) in initial.iter().enumerate() {
            let states = collect_states(mdp, p, episodes_per_iter, &mut rng);
            pairs.extend(states.iter().map(|&s| (z, s)));
            buffers[z] = states;
        }
    }

    let mut state = MixtureState {
        num_skills: n,
        prior: prior.clone(),
        component_policies: vec![Vec::new(); n],
        component_marginals: vec![Vec::new(); n],
        component_densities: vec![Vec::new(); n],
        discriminator: Discriminator::constant(&prior, ns),
        buffer: Vec::new(),
        metrics: Vec::with_capacity(base.iterations),
        weighting: base.weighting,
    };

    for iteration in 1..=base.iterations {
        let data_means: Vec<StateMarginal> =
            data_marginals.iter().map(|h| mean_marginal(h)).collect::<Result<_>>()?;
        for z in 0..n {
            let density = match base.mode {
                Mode::Exact => fit_from_marginal(&data_means[z], alpha, n_virtual)?,
                Mode::Sampled { .. } => fit_from_buffer(&buffers[z], ns, alpha)?,
            };
            state.component_densities[z].push(density);
        }

        // joint (z, s) weights of the discriminator's training data
        let joint: Vec<f64> = match base.mode {
            Mode::Exact => (0..n)
                .flat_map(|z| {
                    let scale = horizon * data_marginals[z].len() as f64;
                    data_means[z].probs().iter().map(move |p| p * scale).collect::<Vec<_>>()
                })
                .collect(),
            Mode::Sampled { .. } => pair_counts(&pairs, n, ns)?,
        };
        let (discriminator, gap) = match config.discriminator {
            DiscriminatorMode::Exact => (posterior_impl(&data_means, &prior, true)?, 0.0),
            DiscriminatorMode::Fitted => {
                let fitted = fit_discriminator_weighted(&joint, n, ns, alpha)?;
                let posterior = empirical_posterior(&joint, n, ns)?;
                let gap = jensen_gap_weighted(&joint, &fitted, &posterior)?;
                (fitted, gap)
            }
        };

        let mut newest = Vec::with_capacity(n);
        let mut objective_value = 0.0;
        for z in 0..n {
            let reward = if base.density_history == DensityHistory::Latest {
                sm4_reward(z, target, state.component_densities[z].last().expect("pushed"), &discriminator, &prior)?
            } else {
                let avg = average_densities(state.component_densities[z].clone())?;
                sm4_reward(z, target, &avg, &discriminator, &prior)?
            };
            let policy = eval.best_response(&reward)?;
            let marginal = eval.marginal(&policy)?;
            objective_value += prior[z] * eval.per_step_reward(&policy, &marginal, &reward)?;
            state.component_policies[z].push(policy);
            state.component_marginals[z].push(marginal.clone());
            newest.push(marginal);
        }
        state.discriminator = discriminator;

        let collectors: Vec<usize> = match collection {
            Collection::AllComponents => (0..n).collect(),
            Collection::SingleSampled => {
                let z = if n == 1 { 0 } else { sample_categorical(&prior, &mut skill_rng) };
                vec![z]
            }
        };
        for z in collectors {
            data_marginals[z].push(newest[z].clone());
            if let Mode::Sampled { episodes_per_iter } = base.mode {
                let policy = state.component_policies[z].last().expect("pushed");
                let states = collect_states(mdp, policy, episodes_per_iter, &mut rng);
                pairs.extend(states.iter().map(|&s| (z, s)));
                buffers[z].extend_from_slice(&states);
            }
        }

        let ha = state.mixture_ha();
        let newest_mix = mixture_marginal(&newest, &prior)?;
        let (mass_left, mass_right) = split.masses(newest_mix.probs());
        state.metrics.push(Sm4Metrics {
            mixture: IterationMetrics {
                iteration,
                entropy_ha: entropy(&ha),
                kl_to_target: kl_or_infinite(&ha, target),
                objective_value,
                mass_left,
                mass_right,
                entropy_iterate: entropy(&newest_mix),
            },
            component_entropies: (0..n).map(|z| entropy(&state.component_ha(z))).collect(),
            jensen_gap: gap,
        });
    }
    state.buffer = pairs;
    Ok(state)
}

/// Draws `(z, s)` pairs with `z ~ prior` and `s ~ ρ_z`.
pub fn sample_pairs<R: Rng + ?Sized>(
    components: &[StateMarginal],
    prior: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let z = sample_categorical(prior, rng);
            (z, sample_categorical(components[z].probs(), rng))
        })
        .collect()
}
