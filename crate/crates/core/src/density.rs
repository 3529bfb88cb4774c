//! Tabular density models standing in for `q(s)`: smoothed histograms and
//! uniform averages of histograms.

use crate::error::{Error, Result};
use crate::marginal::StateMarginal;

/// Anything that assigns a probability to each state.
pub trait DensityModel {
    fn num_states(&self) -> usize;
    fn prob(&self, s: usize) -> f64;

    fn probs(&self) -> Vec<f64> {
        (0..self.num_states()).map(|s| self.prob(s)).collect()
    }

    /// `log q(s)`; a zero-probability state is an error rather than `-inf`.
    fn log_prob(&self, s: usize) -> Result<f64> {
        if s >= self.num_states() {
            return Err(Error::Dimension(format!("state {s} out of range for {} states", self.num_states())));
        }
        let p = self.prob(s);
        if p > 0.0 {
            Ok(p.ln())
        } else {
            Err(Error::Support { state: s, detail: "density assigns zero probability".into() })
        }
    }
}

/// Laplace-smoothed histogram, `q(s) = (c_s + α) / (Σ c + α |S|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    counts: Vec<f64>,
    smoothing_alpha: f64,
    total: f64,
}

impl HistogramDensity {
    pub fn from_counts(counts: Vec<f64>, smoothing_alpha: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Empty("histogram over zero states".into()));
        }
        if !(smoothing_alpha >= 0.0 && smoothing_alpha.is_finite()) {
            return Err(Error::Config(format!("smoothing alpha must be >= 0, got {smoothing_alpha}")));
        }
        if let Some(i) = counts.iter().position(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Distribution(format!("count {i} is {}", counts[i])));
        }
        let total = counts.iter().sum::<f64>() + smoothing_alpha * counts.len() as f64;
        if total <= 0.0 {
            return Err(Error::Empty("no counts and no smoothing".into()));
        }
        Ok(Self { counts, smoothing_alpha, total })
    }

    pub fn uniform(num_states: usize) -> Self {
        Self { counts: vec![0.0; num_states], smoothing_alpha: 1.0, total: num_states as f64 }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }
}

impl DensityModel for HistogramDensity {
    fn num_states(&self) -> usize {
        self.counts.len()
    }

    fn prob(&self, s: usize) -> f64 {
        (self.counts[s] + self.smoothing_alpha) / self.total
    }
}

/// Default effective sample size used when fitting to an exact marginal.
pub fn default_virtual_samples(num_states: usize) -> f64 {
    10.0 * num_states as f64
}

/// Fits a histogram to an exact marginal treated as `n_virtual` samples. With
/// `alpha = 0` this is the tabular maximum-likelihood fit, the marginal itself.
pub fn fit_from_marginal(m: &StateMarginal, alpha: f64, n_virtual: f64) -> Result<HistogramDensity> {
    if !(n_virtual > 0.0) {
        return Err(Error::Config(format!("virtual sample size must be positive, got {n_virtual}")));
    }
    HistogramDensity::from_counts(m.probs().iter().map(|p| p * n_virtual).collect(), alpha)
}

/// Smoothed visit-count histogram of a state buffer.
pub fn fit_from_buffer(states: &[usize], num_states: usize, alpha: f64) -> Result<HistogramDensity> {
    if states.is_empty() && alpha == 0.0 {
        return Err(Error::Empty("empty buffer with zero smoothing".into()));
    }
    let mut counts = vec![0.0; num_states];
    for &s in states {
        if s >= num_states {
            return Err(Error::Dimension(format!("state {s} out of range for {num_states} states")));
        }
        counts[s] += 1.0;
    }
    HistogramDensity::from_counts(counts, alpha)
}

/// Uniform mixture of histogram densities, `q̄(s) = (1/m) Σ_i q_i(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedDensity {
    members: Vec<HistogramDensity>,
}

impl AveragedDensity {
    pub fn members(&self) -> &[HistogramDensity] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl DensityModel for AveragedDensity {
    fn num_states(&self) -> usize {
        self.members[0].num_states()
    }

    fn prob(&self, s: usize) -> f64 {
        self.members.iter().map(|m| m.prob(s)).sum::<f64>() / self.members.len() as f64
    }
}

pub fn average_densities(members: Vec<HistogramDensity>) -> Result<AveragedDensity> {
    let first = members.first().ok_or_else(|| Error::Empty("no densities to average".into()))?;
    let n = first.num_states();
    if let Some(bad) = members.iter().find(|m| m.num_states() != n) {
        return Err(Error::Dimension(format!("density over {} states, expected {n}", bad.num_states())));
    }
    Ok(AveragedDensity { members })
}

/// The density as a [`StateMarginal`], for CSV output and KL evaluation.
pub fn density_marginal(d: &dyn DensityModel) -> StateMarginal {
    StateMarginal::from_probs(d.probs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::kl_divergence;

    #[test]
    fn exact_fit_is_the_marginal() {
        let m = StateMarginal::new(vec![0.1, 0.6, 0.3, 0.0]).unwrap();
        let d = fit_from_marginal(&m, 0.0, 40.0).unwrap();
        for (a, b) in d.probs().iter().zip(m.probs()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(kl_divergence(&m, &density_marginal(&d)).unwrap() <= 1e-12);
        assert!(d.log_prob(3).is_err());
    }

    #[test]
    fn heavy_smoothing_tends_to_uniform() {
        let m = StateMarginal::new(vec![0.9, 0.1]).unwrap();
        let d = fit_from_marginal(&m, 1e12, 20.0).unwrap();
        assert!((d.prob(0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn smoothing_formula_by_hand() {
        let m = StateMarginal::new(vec![0.8, 0.2]).unwrap();
        let d = fit_from_marginal(&m, 1.0, 8.0).unwrap();
        assert!((d.prob(0) - 0.74).abs() < 1e-15);
        assert!((d.prob(1) - 0.26).abs() < 1e-15);
    }

    #[test]
    fn buffer_fits() {
        assert_eq!(fit_from_buffer(&[0, 1], 2, 0.0).unwrap().probs(), vec![0.5, 0.5]);
        let empty = fit_from_buffer(&[], 3, 1.0).unwrap();
        assert_eq!(empty.probs(), vec![1.0 / 3.0; 3]);
        let d = fit_from_buffer(&[0, 0, 0, 1], 2, 1.0).unwrap();
        assert!((d.prob(0) - 4.0 / 6.0).abs() < 1e-15);
        assert!((d.prob(1) - 2.0 / 6.0).abs() < 1e-15);
        assert!((d.log_prob(0).unwrap() - (4.0f64 / 6.0).ln()).abs() < 1e-15);
        assert!(matches!(fit_from_buffer(&[], 3, 0.0), Err(Error::Empty(_))));
    }

    #[test]
    fn averages() {
        let a = HistogramDensity::from_counts(vec![1.0, 0.0], 0.0).unwrap();
        let b = HistogramDensity::from_counts(vec![0.0, 1.0], 0.0).unwrap();
        let avg = average_densities(vec![a.clone(), b]).unwrap();
        assert_eq!(avg.log_prob(0).unwrap(), 0.5f64.ln());
        assert_eq!(avg.log_prob(1).unwrap(), 0.5f64.ln());
        let single = average_densities(vec![a.clone()]).unwrap();
        assert_eq!(single.probs(), a.probs());
        assert!(average_densities(vec![]).is_err());
        assert!(average_densities(vec![a, HistogramDensity::uniform(3)]).is_err());
    }

    #[test]
    fn uniform_log_prob() {
        let d = HistogramDensity::uniform(4);
        for s in 0..4 {
            assert!((d.log_prob(s).unwrap() + 4f64.ln()).abs() < 1e-15);
        }
    }
}
