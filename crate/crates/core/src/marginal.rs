//! Policies, exact state marginals, stationary distributions and the
//! information quantities (entropy, KL) computed on them. Natural logs
//! throughout.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::mdp::{check_distribution, policy_transition_matrix, TabularMDP, TransitionMatrix};

const POLICY_TOL: f64 = 1e-12;
const MARGINAL_TOL: f64 = 1e-10;

/// A point drawn from the flat Dirichlet on the `n`-simplex; every entry is positive.
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng) + 1e-300).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// Tabular policy: one action-distribution table per time step
/// (`steps.len() == 1` means stationary). Tables are `table[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    steps: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Empty("policy has no steps".into()));
        }
        for (t, table) in steps.iter().enumerate() {
            if table.len() != num_states * num_actions {
                return Err(Error::Dimension(format!(
                    "policy step {t} has {} entries, expected {}",
                    table.len(),
                    num_states * num_actions
                )));
            }
            for s in 0..num_states {
                check_distribution(&table[s * num_actions..(s + 1) * num_actions], POLICY_TOL)
                    .map_err(|e| Error::Distribution(format!("policy step {t}, state {s}: {e}")))?;
            }
        }
        Ok(Self { num_states, num_actions, steps })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { num_states, num_actions, steps: vec![vec![p; num_states * num_actions]] }
    }

    /// Deterministic policy from per-step action choices `actions[t][s]`.
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[Vec<usize>]) -> Result<Self> {
        let steps = actions
            .iter()
            .map(|row| {
                if row.len() != num_states {
                    return Err(Error::Dimension(format!(
                        "deterministic step has {} states, expected {num_states}",
                        row.len()
                    )));
                }
                let mut table = vec![0.0; num_states * num_actions];
                for (s, &a) in row.iter().enumerate() {
                    if a >= num_actions {
                        return Err(Error::Dimension(format!("action {a} out of range")));
                    }
                    table[s * num_actions + a] = 1.0;
                }
                Ok(table)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(num_states, num_actions, steps)
    }

    /// Stationary policy with each row drawn from a flat Dirichlet.
    pub fn random_stationary<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut table = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            table.extend(random_simplex(num_actions, rng));
        }
        Self { num_states, num_actions, steps: vec![table] }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of stored steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    /// Action table used at time step `t` (0-based).
    pub fn step(&self, t: usize) -> &[f64] {
        if self.is_stationary() {
            &self.steps[0]
        } else {
            &self.steps[t]
        }
    }

    pub fn action_probs(&self, t: usize, s: usize) -> &[f64] {
        &self.step(t)[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn is_deterministic(&self) -> bool {
        self.steps.iter().flatten().all(|&p| p == 0.0 || p == 1.0)
    }

    /// The first-step table as a stationary policy.
    pub fn first_step(&self) -> Policy {
        Self { num_states: self.num_states, num_actions: self.num_actions, steps: vec![self.steps[0].clone()] }
    }
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMarginal {
    probs: Vec<f64>,
}

impl StateMarginal {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("marginal over zero states".into()));
        }
        check_distribution(&probs, MARGINAL_TOL).map_err(Error::Distribution)?;
        Ok(Self { probs })
    }

    /// For vectors produced by exact computations that are normalized by construction.
    pub(crate) fn from_probs(probs: Vec<f64>) -> Self {
        debug_assert!(check_distribution(&probs, 1e-8).is_ok(), "not a distribution: {probs:?}");
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[state] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    pub fn total_variation(&self, other: &StateMarginal) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Exact per-step state distributions `d_1 .. d_T`.
pub fn step_distributions(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<Vec<f64>>> {
    mdp.check_policy(policy)?;
    let horizon = mdp.horizon();
    let mut out = Vec::with_capacity(horizon);
    let mut d = mdp.initial().to_vec();
    for t in 0..horizon {
        if t + 1 < horizon {
            let next = policy_transition_matrix(mdp, policy.step(t))?.left_multiply(&d);
            out.push(std::mem::replace(&mut d, next));
        } else {
            out.push(d.clone());
        }
    }
    Ok(out)
}

/// Time-averaged occupancy `ρ_π(s) = (1/T) Σ_t d_t(s)`.
pub fn finite_horizon_marginal(mdp: &TabularMDP, policy: &Policy) -> Result<StateMarginal> {
    let steps = step_distributions(mdp, policy)?;
    let mut rho = vec![0.0; mdp.num_states()];
    for d in &steps {
        for (r, x) in rho.iter_mut().zip(d) {
            *r += x;
        }
    }
    let inv = 1.0 / steps.len() as f64;
    rho.iter_mut().for_each(|r| *r *= inv);
    Ok(StateMarginal::from_probs(rho))
}

/// Expected state-action visit counts over one episode, `Σ_t d_t(s) π_t(a|s)`.
pub fn state_action_occupancy(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<f64>> {
    let steps = step_distributions(mdp, policy)?;
    let na = mdp.num_actions();
    let mut occ = vec![0.0; mdp.num_states() * na];
    for (t, d) in steps.iter().enumerate() {
        let table = policy.step(t);
        for (s, &ds) in d.iter().enumerate() {
            for a in 0..na {
                occ[s * na + a] += ds * table[s * na + a];
            }
        }
    }
    Ok(occ)
}

/// Fixed point of `M' = (1-ι) M + ι U` for a stationary policy, found by the
/// power method.
pub fn stationary_distribution(
    mdp: &TabularMDP,
    policy: &Policy,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StateMarginal> {
    mdp.check_policy(policy)?;
    if !policy.is_stationary() {
        return Err(Error::Config("stationary distribution needs a stationary policy".into()));
    }
    let m = policy_transition_matrix(mdp, policy.step(0))?;
    stationary_of_matrix(&m, damping, tol, max_iter)
}

/// Power method on the damped chain. Iterates the lazy operator
/// `v ↦ (v + v M') / 2`, which shares its fixed point with `M'` and also
/// converges on periodic chains.
pub fn stationary_of_matrix(
    m: &TransitionMatrix,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StateMarginal> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Config(format!("damping {damping} outside (0, 1]")));
    }
    let n = m.size();
    let apply = |v: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().sum();
        let mut out = m.left_multiply(v);
        let uniform = damping * total / n as f64;
        out.iter_mut().for_each(|o| *o = (1.0 - damping) * *o + uniform);
        out
    };
    let mut v = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mv = apply(&v);
        residual = mv.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        if residual <= tol {
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            return Ok(StateMarginal::from_probs(v));
        }
        for (x, y) in v.iter_mut().zip(&mv) {
            *x = 0.5 * (*x + y);
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

/// `‖v M' − v‖₁` for the damped chain.
pub fn damped_residual(m: &TransitionMatrix, damping: f64, v: &[f64]) -> f64 {
    let n = m.size();
    let mv = m.left_multiply(v);
    let total: f64 = v.iter().sum();
    mv.iter()
        .zip(v)
        .map(|(x, y)| ((1.0 - damping) * x + damping * total / n as f64 - y).abs())
        .sum()
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(m: &StateMarginal) -> f64 {
    -m.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `KL(p ‖ q)` in nats.
pub fn kl_divergence(p: &StateMarginal, q: &StateMarginal) -> Result<f64> {
    if p.num_states() != q.num_states() {
        return Err(Error::Dimension(format!("{} vs {} states", p.num_states(), q.num_states())));
    }
    let mut kl = 0.0;
    for (s, (&ps, &qs)) in p.probs.iter().zip(&q.probs).enumerate() {
        if ps == 0.0 {
            continue;
        }
        if qs == 0.0 {
            return Err(Error::Support { state: s, detail: format!("p = {ps} but q = 0") });
        }
        kl += ps * (ps / qs).ln();
    }
    Ok(kl.max(0.0))
}

/// `Σ_z prior(z) ρ_z`.
pub fn mixture_marginal(components: &[StateMarginal], prior: &[f64]) -> Result<StateMarginal> {
    if components.is_empty() {
        return Err(Error::Empty("mixture with no components".into()));
    }
    if components.len() != prior.len() {
        return Err(Error::Dimension(format!(
            "{} components but prior has {} entries",
            components.len(),
            prior.len()
        )));
    }
    check_distribution(prior, MARGINAL_TOL).map_err(|e| Error::Distribution(format!("prior: {e}")))?;
    let n = components[0].num_states();
    if let Some(bad) = components.iter().find(|c| c.num_states() != n) {
        return Err(Error::Dimension(format!("component over {} states, expected {n}", bad.num_states())));
    }
    let mut out = vec![0.0; n];
    for (c, &w) in components.iter().zip(prior) {
        for (o, p) in out.iter_mut().zip(&c.probs) {
            *o += w * p;
        }
    }
    Ok(StateMarginal::from_probs(out))
}

/// Uniform-weight average of marginals.
pub fn mean_marginal(components: &[StateMarginal]) -> Result<StateMarginal> {
    let w = 1.0 / components.len().max(1) as f64;
    mixture_marginal(components, &vec![w; components.len()])
}

/// Normalized visit counts.
pub fn empirical_marginal(states: &[usize], num_states: usize) -> Result<StateMarginal> {
    if states.is_empty() {
        return Err(Error::Empty("no states to count".into()));
    }
    let mut counts = vec![0.0; num_states];
    for &s in states {
        if s >= num_states {
            return Err(Error::Dimension(format!("state {s} out of range for {num_states} states")));
        }
        counts[s] += 1.0;
    }
    let n = states.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    Ok(StateMarginal::from_probs(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TabularMDP;

    fn two_cycle(horizon: usize) -> TabularMDP {
        TabularMDP::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], horizon).unwrap()
    }

    #[test]
    fn horizon_one_returns_initial() {
        let mdp = TabularMDP::new(3, 1, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0], vec![0.2, 0.3, 0.5], 1)
            .unwrap();
        let rho = finite_horizon_marginal(&mdp, &Policy::uniform(3, 1)).unwrap();
        assert_eq!(rho.probs(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn two_cycle_marginal_is_half_half() {
        let rho = finite_horizon_marginal(&two_cycle(2), &Policy::uniform(2, 1)).unwrap();
        assert_eq!(rho.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn stationary_examples() {
        let half = TransitionMatrix::new(2, vec![0.5; 4]).unwrap();
        let m = stationary_of_matrix(&half, 1e-6, 1e-12, 1000).unwrap();
        assert!((m.probs()[0] - 0.5).abs() < 1e-12);
        let identity = TransitionMatrix::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let m = stationary_of_matrix(&identity, 0.1, 1e-12, 10_000).unwrap();
        for p in m.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // periodic chain still converges thanks to the lazy iteration
        let swap = TransitionMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let m = stationary_of_matrix(&swap, 1e-6, 1e-12, 1000).unwrap();
        assert!((m.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_reports_non_convergence() {
        let m = TransitionMatrix::new(2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        match stationary_of_matrix(&m, 1e-6, 1e-15, 2) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(stationary_of_matrix(&m, 0.0, 1e-10, 10).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&StateMarginal::uniform(4)) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&StateMarginal::point_mass(3, 1)), 0.0);
        let m = StateMarginal::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert!((entropy(&m) - 1.039720770839918).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = StateMarginal::new(vec![1.0, 0.0]).unwrap();
        let q = StateMarginal::uniform(2);
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        assert!((kl_divergence(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(kl_divergence(&q, &p), Err(Error::Support { state: 1, .. })));
    }

    #[test]
    fn mixture_examples() {
        let a = StateMarginal::point_mass(2, 0);
        let b = StateMarginal::point_mass(2, 1);
        assert_eq!(mixture_marginal(std::slice::from_ref(&a), &[1.0]).unwrap(), a);
        assert_eq!(mixture_marginal(&[a.clone(), b], &[0.5, 0.5]).unwrap().probs(), &[0.5, 0.5]);
        assert!(mixture_marginal(&[a.clone(), StateMarginal::uniform(3)], &[0.5, 0.5]).is_err());
        assert!(mixture_marginal(&[a], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn empirical_examples() {
        assert_eq!(empirical_marginal(&[0, 0, 1, 1], 2).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(empirical_marginal(&[2], 3).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert!(matches!(empirical_marginal(&[], 3), Err(Error::Empty(_))));
        assert!(empirical_marginal(&[5], 3).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(2, 2, vec![vec![0.5, 0.5, 1.0, 0.1]]).is_err());
        assert!(Policy::new(2, 2, vec![]).is_err());
        let det = Policy::deterministic(2, 2, &[vec![0, 1], vec![1, 1]]).unwrap();
        assert!(det.is_deterministic());
        assert_eq!(det.action_probs(1, 0), &[0.0, 1.0]);
        let mdp = two_cycle(3);
        assert!(finite_horizon_marginal(&mdp, &Policy::uniform(2, 2)).is_err());
    }
}
