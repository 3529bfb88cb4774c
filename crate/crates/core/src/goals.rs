//! Target distributions for goal reaching.
//!
//! A goal `g ∼ p_g` counts as reached when the agent enters the ε-ball
//! around it. For an agent whose per-step state distribution is `p*`, the
//! expected number of episodes to reach a goal is bounded by
//! `F(p*) = Σ_g p_g(g) / p*(ball(g))`, and the square-root rule
//! `p* ∝ √p̃` with the smoothed goal density `p̃` is the candidate minimizer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::marginal::{finite_horizon_marginal, Policy, StateMarginal};
use crate::mdp::{rollout, TabularMDP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMetric {
    LInf,
    L1,
}

impl GoalMetric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (dx, dy) = ((a[0] - b[0]).abs(), (a[1] - b[1]).abs());
        match self {
            Self::LInf => dx.max(dy),
            Self::L1 => dx + dy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub goal_density: StateMarginal,
    pub epsilon: f64,
    pub metric: GoalMetric,
}

impl GoalSpec {
    pub fn new(goal_density: StateMarginal, epsilon: f64, metric: GoalMetric) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { goal_density, epsilon, metric })
    }

    /// `balls[s]` lists the states within ε of `s`, itself included.
    pub fn balls(&self, coords: &[[f64; 2]]) -> Result<Vec<Vec<usize>>> {
        if coords.len() != self.goal_density.num_states() {
            return Err(Error::Dimension(format!(
                "{} coordinates for a goal density over {} states",
                coords.len(),
                self.goal_density.num_states()
            )));
        }
        Ok(coords
            .iter()
            .map(|&c| {
                coords
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| self.metric.distance(c, d) <= self.epsilon + 1e-12)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect())
    }
}

/// `p̃(s) = Σ_{s̃ ∈ ball(s)} p_g(s̃)`; not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedDensity {
    pub values: Vec<f64>,
}

pub fn smooth_goal_density(spec: &GoalSpec, coords: &[[f64; 2]]) -> Result<SmoothedDensity> {
    let pg = spec.goal_density.probs();
    Ok(SmoothedDensity {
        values: spec.balls(coords)?.iter().map(|ball| ball.iter().map(|&j| pg[j]).sum()).collect(),
    })
}

/// Square-root rule `p*(s) ∝ √p̃(s)`.
pub fn optimal_target(spec: &GoalSpec, coords: &[[f64; 2]]) -> Result<StateMarginal> {
    let roots: Vec<f64> = smooth_goal_density(spec, coords)?.values.iter().map(|v| v.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Distribution("smoothed goal density is identically zero".into()));
    }
    StateMarginal::new(roots.iter().map(|r| r / total).collect())
}

fn ball_masses(x: &[f64], balls: &[Vec<usize>]) -> Vec<f64> {
    balls.iter().map(|b| b.iter().map(|&j| x[j]).sum()).collect()
}

/// `F(p*) = Σ_g p_g(g) / p*(ball(g))`.
pub fn hitting_objective(target: &StateMarginal, spec: &GoalSpec, coords: &[[f64; 2]]) -> Result<f64> {
    if target.num_states() != spec.goal_density.num_states() {
        return Err(Error::Dimension("target and goal density differ in state count".into()));
    }
    let masses = ball_masses(target.probs(), &spec.balls(coords)?);
    let mut total = 0.0;
    for (g, (&pg, &m)) in spec.goal_density.probs().iter().zip(&masses).enumerate() {
        if pg == 0.0 {
            continue;
        }
        if !(m > 0.0) {
            return Err(Error::Support { state: g, detail: "goal ball has no target mass".into() });
        }
        total += pg / m;
    }
    Ok(total)
}

/// Gradient of `F` and its first-order stationarity measure on the simplex,
/// `‖x ⊙ (∇F − ⟨x, ∇F⟩)‖∞`.
fn gradient(x: &[f64], pg: &[f64], balls: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let masses = ball_masses(x, balls);
    let mut grad = vec![0.0; x.len()];
    for (g, ball) in balls.iter().enumerate() {
        if pg[g] == 0.0 {
            continue;
        }
        let w = pg[g] / (masses[g] * masses[g]);
        for &j in ball {
            grad[j] -= w;
        }
    }
    let mean: f64 = x.iter().zip(&grad).map(|(a, b)| a * b).sum();
    let stationarity = x.iter().zip(&grad).map(|(a, b)| (a * (b - mean)).abs()).fold(0.0, f64::max);
    (grad, stationarity)
}

const STATIONARITY_TOL: f64 = 1e-8;

/// Minimizes `F` over the simplex with multiplicative-weights steps from the
/// uniform point. The step is scaled by `|⟨x, ∇F⟩|` so `learning_rate` is
/// dimensionless.
pub fn brute_force_optimal_target(
    spec: &GoalSpec,
    coords: &[[f64; 2]],
    steps: usize,
    learning_rate: f64,
) -> Result<StateMarginal> {
    if !(learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
    }
    let n = spec.goal_density.num_states();
    let balls = spec.balls(coords)?;
    let pg = spec.goal_density.probs();
    let mut x = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..steps {
        let (grad, stationarity) = gradient(&x, pg, &balls);
        residual = stationarity;
        if stationarity <= STATIONARITY_TOL {
            return StateMarginal::new(x);
        }
        let mean: f64 = x.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let scale = learning_rate / mean.abs();
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi *= (-scale * (g - mean)).exp();
        }
        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
    }
    let (_, stationarity) = gradient(&x, pg, &balls);
    if stationarity <= STATIONARITY_TOL {
        return StateMarginal::new(x);
    }
    Err(Error::Optimizer { steps, residual: residual.min(stationarity) })
}

/// Probability of touching the goal ball at least once in an episode, and
/// the ball's mass under the time-averaged marginal (the chance that a
/// uniformly random time step lands in the ball).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachRecord {
    pub p_any: f64,
    pub p_uniform_t: f64,
}

fn goal_ball(spec: &GoalSpec, coords: &[[f64; 2]], goal_state: usize) -> Result<Vec<bool>> {
    let balls = spec.balls(coords)?;
    let ball = balls
        .get(goal_state)
        .ok_or_else(|| Error::Dimension(format!("goal state {goal_state} out of range")))?;
    let mut inside = vec![false; coords.len()];
    for &j in ball {
        inside[j] = true;
    }
    Ok(inside)
}

/// Exact reach probability by propagating only the probability mass that
/// has not yet entered the ball.
pub fn per_episode_reach_probability(
    mdp: &TabularMDP,
    policy: &Policy,
    spec: &GoalSpec,
    coords: &[[f64; 2]],
    goal_state: usize,
) -> Result<ReachRecord> {
    mdp.check_policy(policy)?;
    if coords.len() != mdp.num_states() {
        return Err(Error::Dimension("coordinates do not match the MDP".into()));
    }
    let inside = goal_ball(spec, coords, goal_state)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut alive = mdp.initial().to_vec();
    let mut p_any = 0.0;
    for t in 0..mdp.horizon() {
        for s in 0..ns {
            if inside[s] {
                p_any += alive[s];
                alive[s] = 0.0;
            }
        }
        if t + 1 == mdp.horizon() {
            break;
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if alive[s] == 0.0 {
                continue;
            }
            let probs = policy.action_probs(t, s);
            for a in 0..na {
                let w = alive[s] * probs[a];
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.next_state_probs(s, a)) {
                    *n += w * p;
                }
            }
        }
        alive = next;
    }
    let rho = finite_horizon_marginal(mdp, policy)?;
    let p_uniform_t = rho.probs().iter().zip(&inside).filter(|(_, &i)| i).map(|(p, _)| p).sum();
    Ok(ReachRecord { p_any: p_any.min(1.0), p_uniform_t })
}

/// Reach probabilities of a policy mixture that draws one member uniformly
/// per episode.
pub fn mixture_reach_probability(
    mdp: &TabularMDP,
    policies: &[Policy],
    spec: &GoalSpec,
    coords: &[[f64; 2]],
    goal_state: usize,
) -> Result<ReachRecord> {
    if policies.is_empty() {
        return Err(Error::Empty("no policies in the mixture".into()));
    }
    let w = 1.0 / policies.len() as f64;
    let mut out = ReachRecord { p_any: 0.0, p_uniform_t: 0.0 };
    for p in policies {
        let r = per_episode_reach_probability(mdp, p, spec, coords, goal_state)?;
        out.p_any += w * r.p_any;
        out.p_uniform_t += w * r.p_uniform_t;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingRecord {
    /// `1 / p_any`
    pub analytic: f64,
    /// Mean number of episodes up to and including each reaching episode.
    pub monte_carlo: f64,
    pub episodes: usize,
    pub hits: usize,
}

/// Expected number of episodes until the goal ball is reached, for a uniform
/// per-episode mixture of `policies` (a single policy is a one-element slice).
pub fn expected_hitting_episodes<R: Rng + ?Sized>(
    mdp: &TabularMDP,
    policies: &[Policy],
    spec: &GoalSpec,
    coords: &[[f64; 2]],
    goal_state: usize,
    rng: &mut R,
    max_episodes: usize,
) -> Result<HittingRecord> {
    let reach = mixture_reach_probability(mdp, policies, spec, coords, goal_state)?;
    if !(reach.p_any > 0.0) {
        return Err(Error::Support { state: goal_state, detail: "goal ball is never reached".into() });
    }
    let inside = goal_ball(spec, coords, goal_state)?;
    let mut hits = 0;
    let mut gaps = 0usize;
    let mut since_last = 0usize;
    for _ in 0..max_episodes {
        let policy = &policies[rng.random_range(0..policies.len())];
        let (states, _) = rollout(mdp, policy, rng);
        since_last += 1;
        if states.iter().any(|&s| inside[s]) {
            hits += 1;
            gaps += since_last;
            since_last = 0;
        }
    }
    if hits == 0 {
        return Err(Error::Empty(format!("no goal reached in {max_episodes} episodes")));
    }
    Ok(HittingRecord {
        analytic: 1.0 / reach.p_any,
        monte_carlo: gaps as f64 / hits as f64,
        episodes: max_episodes,
        hits,
    })
}
