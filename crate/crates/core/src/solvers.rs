//! Exact finite-horizon solvers: hard backward induction, soft (MaxEnt)
//! backward induction, and policy evaluation.
//!
//! Rewards accrue at every visited time step `t = 1..T`, including the
//! initial state, and there is no discounting.

use crate::error::{Error, Result};
use crate::marginal::{finite_horizon_marginal, state_action_occupancy, Policy};
use crate::mdp::TabularMDP;

/// Relative tolerance under which two action values count as tied.
const TIE_TOL: f64 = 1e-12;

/// Reward on states or on state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardTable {
    State(Vec<f64>),
    StateAction { num_actions: usize, values: Vec<f64> },
}

impl RewardTable {
    pub fn state(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self::State(values))
    }

    pub fn state_action(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "state-action reward has {} entries, expected {}",
                values.len(),
                num_states * num_actions
            )));
        }
        check_finite(&values)?;
        Ok(Self::StateAction { num_actions, values })
    }

    pub fn zeros(num_states: usize) -> Self {
        Self::State(vec![0.0; num_states])
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::State(v) => v.len(),
            Self::StateAction { num_actions, values } => values.len() / num_actions,
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        match self {
            Self::State(v) => v[s],
            Self::StateAction { num_actions, values } => values[s * num_actions + a],
        }
    }

    /// State rewards, if this table does not depend on the action.
    pub fn as_state(&self) -> Option<&[f64]> {
        match self {
            Self::State(v) => Some(v),
            Self::StateAction { .. } => None,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        match self {
            Self::State(v) => Self::State(v.iter().map(|x| f(*x)).collect()),
            Self::StateAction { num_actions, values } => {
                Self::StateAction { num_actions: *num_actions, values: values.iter().map(|x| f(*x)).collect() }
            }
        }
    }

    /// `self + coefficient * other`, promoted to state-action form when
    /// either side depends on the action.
    pub fn add_scaled(&self, other: &RewardTable, coefficient: f64, num_actions: usize) -> Result<Self> {
        if self.num_states() != other.num_states() {
            return Err(Error::Dimension(format!(
                "rewards over {} and {} states",
                self.num_states(),
                other.num_states()
            )));
        }
        if let (Self::State(a), Self::State(b)) = (self, other) {
            return Self::state(a.iter().zip(b).map(|(x, y)| x + coefficient * y).collect());
        }
        let ns = self.num_states();
        let mut values = Vec::with_capacity(ns * num_actions);
        for s in 0..ns {
            for a in 0..num_actions {
                values.push(self.get(s, a) + coefficient * other.get(s, a));
            }
        }
        Self::state_action(ns, num_actions, values)
    }

    fn check_against(&self, mdp: &TabularMDP) -> Result<()> {
        if self.num_states() != mdp.num_states() {
            return Err(Error::Dimension(format!(
                "reward over {} states, MDP has {}",
                self.num_states(),
                mdp.num_states()
            )));
        }
        if let Self::StateAction { num_actions, .. } = self {
            if *num_actions != mdp.num_actions() {
                return Err(Error::Dimension(format!(
                    "reward over {num_actions} actions, MDP has {}",
                    mdp.num_actions()
                )));
            }
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Distribution(format!("reward entry {i} is {}", values[i]))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub policy: Policy,
    /// Expected return (soft return for the MaxEnt solver) from `p0`.
    pub value_at_start: f64,
    pub iterations: usize,
    /// Largest Bellman optimality residual over all steps and states.
    pub residual: f64,
    /// `values[t][s]`, the optimal value-to-go at step `t`.
    pub values: Vec<Vec<f64>>,
}

fn q_values(mdp: &TabularMDP, reward: &RewardTable, next_values: &[f64], s: usize, q: &mut [f64]) {
    for (a, qa) in q.iter_mut().enumerate() {
        let future: f64 = mdp.next_state_probs(s, a).iter().zip(next_values).map(|(p, v)| p * v).sum();
        *qa = reward.get(s, a) + future;
    }
}

/// Backward induction for `max E[Σ_{t=1..T} r(s_t, a_t)]`. Returns a
/// deterministic non-stationary policy; near-ties go to the lowest action
/// index.
pub fn finite_horizon_value_iteration(mdp: &TabularMDP, reward: &RewardTable) -> Result<SolveReport> {
    reward.check_against(mdp)?;
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    let mut actions = vec![vec![0usize; ns]; horizon];
    let mut q = vec![0.0; na];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        for s in 0..ns {
            q_values(mdp, reward, next, s, &mut q);
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * (1.0 + best.abs());
            let a = q.iter().position(|&x| x >= best - tol).expect("nonempty action set");
            actions[t][s] = a;
            head[t][s] = q[a];
        }
    }
    values.truncate(horizon);
    let residual = bellman_residual(mdp, reward, &values);
    let value_at_start = mdp.initial().iter().zip(&values[0]).map(|(p, v)| p * v).sum();
    Ok(SolveReport {
        policy: Policy::deterministic(ns, na, &actions)?,
        value_at_start,
        iterations: horizon,
        residual,
        values,
    })
}

/// `max_{t,s} |V_t(s) − max_a Q_t(s, a)|` with `Q_t` rebuilt from `V_{t+1}`.
pub fn bellman_residual(mdp: &TabularMDP, reward: &RewardTable, values: &[Vec<f64>]) -> f64 {
    let ns = mdp.num_states();
    let zeros = vec![0.0; ns];
    let mut q = vec![0.0; mdp.num_actions()];
    let mut worst = 0.0f64;
    for t in 0..values.len() {
        let next = values.get(t + 1).unwrap_or(&zeros);
        for s in 0..ns {
            q_values(mdp, reward, next, s, &mut q);
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((values[t][s] - best).abs());
        }
    }
    worst
}

/// Soft backward induction for `E[Σ r] + α Σ_t H[π_t(·|s_t)]`. Policy rows
/// are Boltzmann in the soft Q-values.
pub fn soft_value_iteration(mdp: &TabularMDP, reward: &RewardTable, temperature: f64) -> Result<SolveReport> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    reward.check_against(mdp)?;
    let (ns, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut values = vec![vec![0.0; ns]; horizon + 1];
    let mut steps = vec![vec![0.0; ns * na]; horizon];
    let mut q = vec![0.0; na];
    let mut residual = 0.0f64;
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(t + 1);
        let next = &tail[0];
        for s in 0..ns {
            q_values(mdp, reward, next, s, &mut q);
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = q.iter().map(|x| ((x - best) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let v = best + temperature * total.ln();
            head[t][s] = v;
            let row = &mut steps[t][s * na..(s + 1) * na];
            for (r, w) in row.iter_mut().zip(&weights) {
                *r = w / total;
            }
            // soft Bellman identity: V = Σ π (Q − α log π)
            let check: f64 = row
                .iter()
                .zip(&q)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, qa)| p * (qa - temperature * p.ln()))
                .sum();
            residual = residual.max((check - v).abs() / (1.0 + v.abs()));
        }
    }
    values.truncate(horizon);
    let value_at_start = mdp.initial().iter().zip(&values[0]).map(|(p, v)| p * v).sum();
    Ok(SolveReport { policy: Policy::new(ns, na, steps)?, value_at_start, iterations: horizon, residual, values })
}

/// `E[Σ_{t=1..T} r(s_t, a_t)]` under `policy`.
pub fn expected_return(mdp: &TabularMDP, policy: &Policy, reward: &RewardTable) -> Result<f64> {
    reward.check_against(mdp)?;
    match reward {
        RewardTable::State(r) => {
            let rho = finite_horizon_marginal(mdp, policy)?;
            Ok(mdp.horizon() as f64 * rho.probs().iter().zip(r).map(|(p, x)| p * x).sum::<f64>())
        }
        RewardTable::StateAction { values, .. } => {
            let occ = state_action_occupancy(mdp, policy)?;
            Ok(occ.iter().zip(values).map(|(o, x)| o * x).sum())
        }
    }
}

/// Expected action entropy accumulated over an episode, `Σ_t E[H[π_t(·|s_t)]]`.
pub fn expected_action_entropy(mdp: &TabularMDP, policy: &Policy) -> Result<f64> {
    let steps = crate::marginal::step_distributions(mdp, policy)?;
    let mut total = 0.0;
    for (t, d) in steps.iter().enumerate() {
        for (s, &ds) in d.iter().enumerate() {
            let h: f64 = -policy.action_probs(t, s).iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            total += ds * h;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_cross_gridworld, Cell, GridworldSpec};

    fn corridor(horizon: usize) -> TabularMDP {
        let spec = GridworldSpec {
            cells: (0..3).map(|c| Cell::new(0, c)).collect(),
            start: Some(Cell::new(0, 0)),
            noisy_tv_cell: None,
            noisy_tv_xi: 0.0,
            slip_success_prob: 1.0,
            horizon,
        };
        build_cross_gridworld(&spec).unwrap()
    }

    #[test]
    fn horizon_one_value_is_expected_reward() {
        let mdp = corridor(1).with_initial(vec![0.2, 0.3, 0.5]).unwrap();
        let r = RewardTable::state(vec![1.0, 2.0, 4.0]).unwrap();
        let rep = finite_horizon_value_iteration(&mdp, &r).unwrap();
        assert!((rep.value_at_start - (0.2 + 0.6 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn corridor_marches_right() {
        let mdp = corridor(3);
        let r = RewardTable::state(vec![0.0, 0.0, 1.0]).unwrap();
        let rep = finite_horizon_value_iteration(&mdp, &r).unwrap();
        // Hand backward induction: V3 = r = (0,0,1); V2 = r + max next V3 =
        // (0, 1, 2); V1 = r + max next V2 = (1, 2, 3). Start at cell 0 → 1.
        assert_eq!(rep.values[2], vec![0.0, 0.0, 1.0]);
        assert_eq!(rep.values[1], vec![0.0, 1.0, 2.0]);
        assert_eq!(rep.values[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(rep.value_at_start, 1.0);
        assert_eq!(rep.policy.action_probs(0, 0), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(rep.policy.action_probs(1, 1), &[0.0, 0.0, 0.0, 1.0]);
        assert!(rep.residual <= 1e-10);
    }

    #[test]
    fn constant_shift_keeps_policy() {
        let mdp = corridor(4);
        let r = RewardTable::state(vec![0.3, -1.0, 2.0]).unwrap();
        let a = finite_horizon_value_iteration(&mdp, &r).unwrap();
        let b = finite_horizon_value_iteration(&mdp, &r.map(|x| x + 5.0)).unwrap();
        assert_eq!(a.policy, b.policy);
        assert!((b.value_at_start - a.value_at_start - 20.0).abs() < 1e-12);
    }

    #[test]
    fn soft_limits() {
        let mdp = corridor(3);
        let r = RewardTable::state(vec![0.0, 0.0, 1.0]).unwrap();
        let hard = finite_horizon_value_iteration(&mdp, &r).unwrap();
        let soft = soft_value_iteration(&mdp, &r, 1e-8).unwrap();
        let zeros = vec![0.0; 3];
        let mut q = vec![0.0; 4];
        for t in 0..3 {
            let next = hard.values.get(t + 1).unwrap_or(&zeros);
            for s in 0..3 {
                q_values(&mdp, &r, next, s, &mut q);
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mass: f64 = soft
                    .policy
                    .action_probs(t, s)
                    .iter()
                    .zip(&q)
                    .filter(|(_, qa)| **qa >= best - 1e-12)
                    .map(|(p, _)| p)
                    .sum();
                assert!(mass >= 1.0 - 1e-4, "t={t} s={s} mass={mass}");
            }
        }
        let zero = soft_value_iteration(&mdp, &RewardTable::zeros(3), 0.7).unwrap();
        for t in 0..3 {
            for s in 0..3 {
                for p in zero.policy.action_probs(t, s) {
                    assert!((p - 0.25).abs() < 1e-15);
                }
            }
        }
        assert!(soft_value_iteration(&mdp, &r, 0.0).is_err());
    }

    #[test]
    fn soft_concentrates_on_unique_optimum() {
        // 2 states, 2 actions; action a goes to state a; reward only on state 1
        let mdp = TabularMDP::new(2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0], 2).unwrap();
        let r = RewardTable::state(vec![0.0, 1.0]).unwrap();
        let soft = soft_value_iteration(&mdp, &r, 1e-8).unwrap();
        assert!(soft.policy.action_probs(0, 0)[1] >= 1.0 - 1e-4);
    }

    #[test]
    fn soft_closed_form_boltzmann() {
        // T = 1 with a state-action reward: Q(s, a) = r(s, a) exactly.
        let mdp = TabularMDP::new(2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0], 1).unwrap();
        let r = RewardTable::state_action(2, 2, vec![0.3, 1.1, -0.4, 0.2]).unwrap();
        let alpha = 0.5;
        let soft = soft_value_iteration(&mdp, &r, alpha).unwrap();
        let z = (0.3f64 / alpha).exp() + (1.1f64 / alpha).exp();
        let expected = [(0.3f64 / alpha).exp() / z, (1.1f64 / alpha).exp() / z];
        let got = soft.policy.action_probs(0, 0);
        assert!((got[0] - expected[0]).abs() < 1e-12);
        assert!((got[1] - expected[1]).abs() < 1e-12);
        assert!((soft.value_at_start - alpha * z.ln()).abs() < 1e-12);
    }

    #[test]
    fn expected_return_examples() {
        let mdp = corridor(5);
        let pi = Policy::uniform(3, 4);
        assert_eq!(expected_return(&mdp, &pi, &RewardTable::zeros(3)).unwrap(), 0.0);
        let ones = RewardTable::state(vec![1.0; 3]).unwrap();
        assert!((expected_return(&mdp, &pi, &ones).unwrap() - 5.0).abs() < 1e-12);
        let sa = RewardTable::state_action(3, 4, vec![1.0; 12]).unwrap();
        assert!((expected_return(&mdp, &pi, &sa).unwrap() - 5.0).abs() < 1e-12);
        assert!(expected_return(&mdp, &pi, &RewardTable::zeros(4)).is_err());
    }

    #[test]
    fn rejects_non_finite_rewards() {
        assert!(RewardTable::state(vec![0.0, f64::NEG_INFINITY]).is_err());
        assert!(RewardTable::state_action(1, 2, vec![0.0]).is_err());
    }
}
