//! Vacuum matching and the difference profile between the attacked and the
//! honest lossy-channel statistics.
//!
//! Eve picks the blocking fraction `b` so the attacked vacuum probability
//! equals `e^(-mu eta)`. The remaining mismatch `d[n] = P_match[n] - P_loss[n]`
//! decides whether she can also reshape the rest of the distribution: mass
//! can only move to lower photon numbers, so every prefix sum of `d` must be
//! non-positive.

use log::debug;

use crate::distributions::{poisson, poisson_upper_tail, ChannelParams, PhotonDistribution};
use crate::error::{Error, Result};

/// Absolute tolerance for sign decisions on `d[n]` and its prefix sums.
pub const SIGN_TOL: f64 = 1e-12;

/// The inductive "stays non-negative" argument only covers `eta <= 3/4`.
pub const INDUCTION_ETA_MAX: f64 = 0.75;

/// Transmission below which `b_match` exceeds one: `1 - ln(1 + mu) / mu`.
pub fn full_blocking_threshold(mu: f64) -> f64 {
    1.0 - mu.ln_1p() / mu
}

/// Blocking fraction equalizing the vacuum probability of the attacked and
/// the lossy channel: `(e^(mu (1 - eta)) - 1) / mu`.
///
/// Values above one by more than [`SIGN_TOL`] are reported as
/// [`Error::FullBlockingRegime`]; values within the tolerance are clamped.
pub fn b_match(params: &ChannelParams) -> Result<f64> {
    let mu = params.mu();
    let b = (mu * (1.0 - params.eta())).exp_m1() / mu;
    if b > 1.0 + SIGN_TOL {
        return Err(Error::FullBlockingRegime {
            b_match: b,
            threshold: full_blocking_threshold(mu),
        });
    }
    Ok(b.min(1.0))
}

/// Attacked distribution with the vacuum-matched blocking fraction.
pub fn match_distribution(params: &ChannelParams, n_max: usize) -> Result<PhotonDistribution> {
    b_match(params)?;
    if n_max < 2 {
        return Err(Error::invalid(format!("n_max must be >= 2, got {n_max}")));
    }
    let mu = params.mu();
    let received = params.received_mean();
    let mut probs = Vec::with_capacity(n_max + 1);
    probs.push((-received).exp());
    // (1 + mu + mu^2/2) e^-mu - e^(-eta mu), regrouped to avoid cancellation
    probs.push((-(-received).exp_m1() - poisson_upper_tail(mu, 3)).max(0.0));
    let mut term = 0.5 * mu * mu * (-mu).exp();
    for n in 2..=n_max {
        term *= mu / (n + 1) as f64;
        probs.push(term);
    }
    let tail = poisson_upper_tail(mu, n_max + 2);
    PhotonDistribution::new(probs, tail, None)
}

/// `d[n] = P_match[n] - P_loss[n]` with its sign structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceProfile {
    d: Vec<f64>,
    tail_difference: f64,
    turning_index: Option<usize>,
    mu: f64,
    eta: f64,
}

impl DifferenceProfile {
    /// Wraps raw differences; the turning index is derived from `d`.
    pub fn from_values(d: Vec<f64>, tail_difference: f64, mu: f64, eta: f64) -> Self {
        let turning_index = turning_index(&d);
        if turning_index.is_none() {
            debug!("mu = {mu}, eta = {eta}: difference profile has a mixed sign pattern");
        }
        Self {
            d,
            tail_difference,
            turning_index,
            mu,
            eta,
        }
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d1(&self) -> f64 {
        self.d[1]
    }

    pub fn n_max(&self) -> usize {
        self.d.len() - 1
    }

    /// Largest `n` with `d[n] <= 0` before the profile turns positive, when
    /// the pattern is zero, non-positive run, non-negative run. `None` for any
    /// other pattern.
    pub fn turning_index(&self) -> Option<usize> {
        self.turning_index
    }

    /// Tail mass of `P_match` minus tail mass of `P_loss`.
    pub fn tail_difference(&self) -> f64 {
        self.tail_difference
    }

    /// Sum of all differences including the tail; zero for a consistent pair.
    pub fn total(&self) -> f64 {
        self.d.iter().sum::<f64>() + self.tail_difference
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Running sums `d[0] + ... + d[n]`.
    pub fn prefix_sums(&self) -> Vec<f64> {
        self.d
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    }

    /// For `n >= 2`: once `d[n] >= -SIGN_TOL`, no later entry drops below
    /// `-SIGN_TOL`.
    pub fn persists_nonnegative(&self) -> bool {
        match self.d.iter().skip(2).position(|&v| v >= -SIGN_TOL) {
            None => true,
            Some(first) => self.d[2 + first..].iter().all(|&v| v >= -SIGN_TOL),
        }
    }
}

fn turning_index(d: &[f64]) -> Option<usize> {
    if d.first().is_none_or(|d0| d0.abs() > SIGN_TOL) {
        return None;
    }
    match d.iter().skip(1).position(|&v| v > SIGN_TOL) {
        None => Some(d.len() - 1),
        Some(offset) => {
            let first_positive = offset + 1;
            if d[first_positive..].iter().any(|&v| v < -SIGN_TOL) {
                None
            } else {
                Some(first_positive - 1)
            }
        }
    }
}

pub fn difference_profile(params: &ChannelParams, n_max: usize) -> Result<DifferenceProfile> {
    let matched = match_distribution(params, n_max)?;
    let loss = poisson(params.received_mean(), n_max)?;
    let d = matched
        .probs()
        .iter()
        .zip(loss.probs())
        .map(|(m, l)| m - l)
        .collect();
    Ok(DifferenceProfile::from_values(
        d,
        matched.tail_mass() - loss.tail_mass(),
        params.mu(),
        params.eta(),
    ))
}

/// Outcome of the prefix-sum redistribution test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feasibility {
    Feasible,
    /// The prefix sum up to `witness` is positive by `excess`.
    Infeasible { witness: usize, excess: f64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible)
    }

    pub fn witness(&self) -> Option<usize> {
        match self {
            Feasibility::Feasible => None,
            Feasibility::Infeasible { witness, .. } => Some(*witness),
        }
    }
}

/// Downward-only redistribution from `P_match` to `P_loss` exists iff
/// `sum_{i<=n} P_loss[i] >= sum_{i<=n} P_match[i]` for every `n`, i.e. every
/// prefix sum of `d` is at most [`SIGN_TOL`].
pub fn feasibility_check(profile: &DifferenceProfile) -> Feasibility {
    prefix_feasibility(profile.d())
}

pub(crate) fn prefix_feasibility(d: &[f64]) -> Feasibility {
    let mut acc = 0.0;
    for (n, &x) in d.iter().enumerate() {
        acc += x;
        if acc > SIGN_TOL {
            return Feasibility::Infeasible {
                witness: n,
                excess: acc,
            };
        }
    }
    Feasibility::Feasible
}

/// Checks the sign pattern zero, non-positive run, non-negative run on the
/// profile up to `n_max`. Only defined for `eta <= 3/4`.
pub fn induction_sign_check(params: &ChannelParams, n_max: usize) -> Result<bool> {
    if params.eta() > INDUCTION_ETA_MAX {
        return Err(Error::OutOfRange {
            what: "eta",
            value: params.eta(),
            range: "(0, 0.75]",
        });
    }
    let profile = difference_profile(params, n_max)?;
    Ok(profile.turning_index().is_some())
}
