//! Truncated photon-number distributions.
//!
//! Every distribution keeps the probabilities of `0..=n_max` photons and the
//! mass of everything above `n_max` separately. Comparisons treat that tail as
//! its own bin; it is never folded into `probs[n_max]`.
//!
//! All probabilities are built from multiplicative recurrences
//! (`p[n] = p[n-1] * mean / n`), never from factorials.

use crate::error::{Error, Result};

/// Allowed deviation of `sum(probs) + tail_mass` from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default truncation keeps the Poisson upper tail of the source below this.
pub const TRUNCATION_TAIL: f64 = 1e-15;

/// Smallest `n_max` handed out by [`default_n_max`].
pub const MIN_N_MAX: usize = 16;

/// Largest Poisson mean accepted; `e^-mean` underflows soon after.
pub const MAX_MEAN: f64 = 500.0;

/// Mean photon number of the source and single-photon transmission of the
/// channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    mu: f64,
    eta: f64,
}

impl ChannelParams {
    pub fn new(mu: f64, eta: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::invalid(format!("mu must be finite and > 0, got {mu}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
        }
        Ok(Self { mu, eta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Mean photon number arriving at Bob through the honest lossy channel.
    pub fn received_mean(&self) -> f64 {
        self.mu * self.eta
    }
}

/// Probability mass function over photon number, truncated at `n_max` with an
/// explicit tail.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
    mean_label: Option<f64>,
}

impl PhotonDistribution {
    /// Checks the invariants: at least three bins, non-negative finite
    /// entries, total mass one within [`NORMALIZATION_TOL`].
    pub fn new(probs: Vec<f64>, tail_mass: f64, mean_label: Option<f64>) -> Result<Self> {
        if probs.len() < 3 {
            return Err(Error::invalid(format!(
                "a photon distribution needs n_max >= 2, got {} bins",
                probs.len()
            )));
        }
        if let Some((n, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::invalid(format!("probs[{n}] = {p} is not a probability")));
        }
        if !(tail_mass.is_finite() && tail_mass >= 0.0) {
            return Err(Error::invalid(format!("tail mass {tail_mass} is not a probability")));
        }
        let dist = Self {
            probs,
            tail_mass,
            mean_label,
        };
        let total = dist.total_mass();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("total mass {total} differs from 1")));
        }
        Ok(dist)
    }

    /// Point mass at `n` on the bins `0..=n_max`.
    pub fn point_mass(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::invalid(format!("point {n} beyond n_max {n_max}")));
        }
        let mut probs = vec![0.0; n_max + 1];
        probs[n] = 1.0;
        Self::new(probs, 0.0, None)
    }

    pub(crate) fn from_parts_unchecked(probs: Vec<f64>, tail_mass: f64, mean_label: Option<f64>) -> Self {
        debug_assert!(probs.len() >= 3);
        Self {
            probs,
            tail_mass,
            mean_label,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of exactly `n` photons; zero past `n_max` (that mass lives
    /// in the tail).
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn mean_label(&self) -> Option<f64> {
        self.mean_label
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass
    }

    /// Largest per-bin absolute difference, tails compared as their own bin.
    /// Distributions of different length are zero-padded.
    pub fn max_bin_deviation(&self, other: &PhotonDistribution) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        (0..len)
            .map(|n| (self.prob(n) - other.prob(n)).abs())
            .fold((self.tail_mass - other.tail_mass).abs(), f64::max)
    }

    /// Total-variation distance, tails compared as their own bin.
    pub fn total_variation(&self, other: &PhotonDistribution) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        let bins: f64 = (0..len).map(|n| (self.prob(n) - other.prob(n)).abs()).sum();
        0.5 * (bins + (self.tail_mass - other.tail_mass).abs())
    }

    /// `weight * self + (1 - weight) * other`, bin by bin.
    pub fn mixture(&self, other: &PhotonDistribution, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!("mixture weight {weight} outside [0, 1]")));
        }
        let len = self.probs.len().max(other.probs.len());
        let probs = (0..len)
            .map(|n| weight * self.prob(n) + (1.0 - weight) * other.prob(n))
            .collect();
        let tail = weight * self.tail_mass + (1.0 - weight) * other.tail_mass;
        Self::new(probs, tail, None)
    }
}

fn check_mean(mean: f64) -> Result<()> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::invalid(format!("Poisson mean must be > 0, got {mean}")));
    }
    if mean > MAX_MEAN {
        return Err(Error::invalid(format!("Poisson mean {mean} exceeds {MAX_MEAN}")));
    }
    Ok(())
}

/// Sum of the Poisson terms `t[k] + t[k+1] + ...` continuing the recurrence
/// from `t[k] = term_k`. Stops once the terms are past the mode and below
/// double precision of the running sum.
fn sum_terms_from(mean: f64, k: usize, term_k: f64) -> f64 {
    let mut term = term_k;
    let mut sum = 0.0;
    let mut j = k;
    loop {
        sum += term;
        j += 1;
        term *= mean / j as f64;
        if term == 0.0 || (j as f64 > mean && term <= sum * 1e-18) {
            return sum;
        }
    }
}

/// `P[N >= k]` for `N ~ Poisson(mean)`, summed from the tail side so it keeps
/// full relative precision when it is tiny. `mean = 0` gives 0 for `k >= 1`.
pub fn poisson_upper_tail(mean: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    for j in 1..=k {
        term *= mean / j as f64;
    }
    sum_terms_from(mean, k, term)
}

/// Poisson probabilities of `0..=n_max` photons, with the remaining upper
/// tail kept as `tail_mass`.
pub fn poisson(mean: f64, n_max: usize) -> Result<PhotonDistribution> {
    check_mean(mean)?;
    if n_max < 2 {
        return Err(Error::invalid(format!("n_max must be >= 2, got {n_max}")));
    }
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut term = (-mean).exp();
    probs.push(term);
    for n in 1..=n_max {
        term *= mean / n as f64;
        probs.push(term);
    }
    let next = term * mean / (n_max + 1) as f64;
    let tail = sum_terms_from(mean, n_max + 1, next);
    Ok(PhotonDistribution::from_parts_unchecked(probs, tail, Some(mean)))
}

/// Smallest `n` whose Poisson(`mean`) upper tail `P[N > n]` is below
/// [`TRUNCATION_TAIL`], but never less than [`MIN_N_MAX`].
pub fn default_n_max(mean: f64) -> usize {
    if !(mean.is_finite() && mean > 0.0) {
        return MIN_N_MAX;
    }
    let mean = mean.min(MAX_MEAN);
    let mut n = MIN_N_MAX;
    while poisson_upper_tail(mean, n + 1) >= TRUNCATION_TAIL {
        n += 1;
    }
    n
}

/// Photon statistics after the basic PNS attack on Poisson(`mu`) pulses:
/// one photon is removed from every multi-photon pulse and a fraction `b` of
/// single-photon pulses is blocked.
pub fn pns_distribution(mu: f64, b: f64, n_max: usize) -> Result<PhotonDistribution> {
    check_mean(mu)?;
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("blocking fraction b must lie in [0, 1], got {b}")));
    }
    if n_max < 2 {
        return Err(Error::invalid(format!("n_max must be >= 2, got {n_max}")));
    }
    let vac = (-mu).exp();
    let mut probs = Vec::with_capacity(n_max + 1);
    probs.push((1.0 + b * mu) * vac);
    probs.push(((1.0 - b) * mu + 0.5 * mu * mu) * vac);
    // probs[n] = mu^(n+1) / (n+1)! e^-mu
    let mut term = 0.5 * mu * mu * vac;
    for n in 2..=n_max {
        term *= mu / (n + 1) as f64;
        probs.push(term);
    }
    let tail = poisson_upper_tail(mu, n_max + 2);
    Ok(PhotonDistribution::from_parts_unchecked(probs, tail, None))
}

/// Per-pulse action of the basic PNS attack: where a pulse with `n` photons
/// ends up, as `(delivered photons, probability)` pairs.
///
/// `b` is the blocked fraction of single-photon pulses and must lie in
/// `[0, 1]`.
pub fn base_pns_map(n: usize, b: f64) -> Vec<(usize, f64)> {
    debug_assert!((0.0..=1.0).contains(&b));
    match n {
        0 => vec![(0, 1.0)],
        1 => vec![(0, b), (1, 1.0 - b)],
        _ => vec![(n - 1, 1.0)],
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    #[test]
    fn poisson_vacuum_matches_exp() {
        let d = poisson(0.05, 16).unwrap();
        // e^-0.05 to 18 digits
        assert!((d.prob(0) - 0.951_229_424_500_714_009).abs() < 1e-16);
        let d = poisson(0.1, 16).unwrap();
        assert!((d.prob(1) / d.prob(0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn poisson_is_normalized_over_range() {
        for mean in [1e-9, 1e-3, 0.1, 1.0, 5.0, 20.0, 50.0] {
            for n_max in [2, 16, 40, 120] {
                let d = poisson(mean, n_max).unwrap();
                assert!((d.total_mass() - 1.0).abs() < 1e-12, "mean {mean} n_max {n_max}");
                assert!(d.tail_mass() >= 0.0);
            }
        }
    }

    #[test]
    fn poisson_rejects_bad_input() {
        assert!(poisson(0.0, 16).is_err());
        assert!(poisson(-1.0, 16).is_err());
        assert!(poisson(f64::NAN, 16).is_err());
        assert!(poisson(0.1, 1).is_err());
        assert!(poisson(1e4, 16).is_err());
    }

    #[test]
    fn default_truncation() {
        assert_eq!(default_n_max(0.1), MIN_N_MAX);
        let n = default_n_max(8.0);
        assert!(n > MIN_N_MAX);
        assert!(poisson_upper_tail(8.0, n + 1) < TRUNCATION_TAIL);
        assert!(poisson_upper_tail(8.0, n) >= TRUNCATION_TAIL);
    }

    #[test]
    fn upper_tail_small_mean_is_accurate() {
        // P[N >= 3] ~ mu^3/6 e^-mu for small mu
        let mu: f64 = 1e-4;
        let expect = mu.powi(3) / 6.0 * (-mu).exp() * (1.0 + mu / 4.0 + mu * mu / 20.0);
        assert!((poisson_upper_tail(mu, 3) / expect - 1.0).abs() < 1e-12);
        assert_eq!(poisson_upper_tail(0.0, 2), 0.0);
        assert_eq!(poisson_upper_tail(3.0, 0), 1.0);
    }

    #[test]
    fn pns_examples() {
        let d = pns_distribution(0.2, 0.0, 16).unwrap();
        assert!((d.prob(0) - (-0.2f64).exp()).abs() < 1e-16);
        let d = pns_distribution(0.2, 1.0, 16).unwrap();
        assert!((d.prob(1) - 0.016_374_615_061_559_637).abs() < 1e-17);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!(pns_distribution(0.2, 1.5, 16).is_err());
        assert!(pns_distribution(0.2, -0.1, 16).is_err());
    }

    #[test]
    fn base_map_cases() {
        assert_eq!(base_pns_map(0, 0.5), vec![(0, 1.0)]);
        assert_eq!(base_pns_map(1, 0.25), vec![(0, 0.25), (1, 0.75)]);
        assert_eq!(base_pns_map(3, 0.5), vec![(2, 1.0)]);
    }

    #[test]
    fn constructor_invariants() {
        assert!(PhotonDistribution::new(vec![0.5, 0.5], 0.0, None).is_err());
        assert!(PhotonDistribution::new(vec![0.5, 0.5, -0.0001], 0.0001, None).is_err());
        assert!(PhotonDistribution::new(vec![0.5, 0.4, 0.0], 0.0, None).is_err());
        assert!(PhotonDistribution::new(vec![0.5, 0.4, 0.0], 0.1, None).is_ok());
        assert!(ChannelParams::new(0.1, 0.0).is_err());
        assert!(ChannelParams::new(0.1, 1.0).is_ok());
        assert!(ChannelParams::new(0.0, 0.5).is_err());
    }

    #[test]
    fn deviation_and_tv_pad_shorter_side() {
        let a = PhotonDistribution::point_mass(2, 2).unwrap();
        let b = PhotonDistribution::point_mass(4, 5).unwrap();
        assert_eq!(a.max_bin_deviation(&b), 1.0);
        assert_eq!(a.total_variation(&b), 1.0);
        assert_eq!(a.total_variation(&a), 0.0);
    }
}
