//! Conservative gain bound and the mean photon number that maximizes it.
//!
//! In the conservative scenario every multi-photon signal may be tagged by
//! Eve, so the usable fraction is Bob's non-vacuum rate minus the source's
//! multi-photon rate, scaled by the sifting factor (1/2 for BB84):
//!
//! ```text
//! G <= s (p_exp - S_m) = s ((1 + mu) e^-mu - e^(-mu eta))
//! ```
//!
//! Its stationary point in `mu` obeys `mu e^-mu = eta e^(-mu eta)`, which
//! puts the optimum at `mu ~ eta` for small `eta`.

use crate::boundary::{d1_exact, eta0_approx, eta0_exact};
use crate::distributions::{poisson_upper_tail, ChannelParams};
use crate::error::{Error, Result};
use crate::matching::{b_match, INDUCTION_ETA_MAX};

/// Sifting factor of BB84.
pub const BB84_SIFTING: f64 = 0.5;

/// Upper end of the `mu` search interval.
pub const MU_SEARCH_MAX: f64 = 5.0;

/// Width at which the golden-section search stops.
pub const MU_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainReport {
    pub mu: f64,
    pub eta: f64,
    /// Source multi-photon probability `1 - (1 + mu) e^-mu`.
    pub s_multi: f64,
    /// Bob's non-vacuum probability `1 - e^(-mu eta)`.
    pub p_exp: f64,
    pub bound: f64,
    pub sifting_factor: f64,
}

fn check_sifting(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!("sifting factor must lie in (0, 1], got {s}")));
    }
    Ok(())
}

fn bound_at(mu: f64, eta: f64, sifting: f64) -> f64 {
    sifting * (poisson_upper_tail(mu * eta, 1) - poisson_upper_tail(mu, 2))
}

pub fn gain_bound(params: &ChannelParams, sifting_factor: f64) -> Result<GainReport> {
    check_sifting(sifting_factor)?;
    let (mu, eta) = (params.mu(), params.eta());
    let s_multi = poisson_upper_tail(mu, 2);
    let p_exp = -(-mu * eta).exp_m1();
    Ok(GainReport {
        mu,
        eta,
        s_multi,
        p_exp,
        bound: sifting_factor * (p_exp - s_multi),
        sifting_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalPoint {
    pub mu: f64,
    pub bound: f64,
}

/// Maximizes the gain bound over `mu` in `(0, 5]`.
///
/// A log-spaced scan brackets the first local maximum (for larger `eta` the
/// bound has a second stationary point, a minimum, inside the interval);
/// golden-section search then narrows the bracket to [`MU_TOL`].
pub fn mu_opt(eta: f64, sifting_factor: f64) -> Result<OptimalPoint> {
    check_sifting(sifting_factor)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    let f = |mu: f64| bound_at(mu, eta, sifting_factor);

    const SCAN: usize = 2000;
    let lo_exp = -12.0_f64;
    let hi_exp = MU_SEARCH_MAX.log10();
    let grid: Vec<f64> = (0..=SCAN)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / SCAN as f64))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&mu| f(mu)).collect();
    let peak = (1..SCAN)
        .find(|&i| values[i] >= values[i - 1] && values[i] >= values[i + 1])
        .unwrap_or_else(|| if values[SCAN] > values[0] { SCAN } else { 0 });
    let (mut a, mut b) = (grid[peak.saturating_sub(1)], grid[(peak + 1).min(SCAN)]);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > MU_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mu = 0.5 * (a + b);
    Ok(OptimalPoint { mu, bound: f(mu) })
}

/// `mu e^-mu - eta e^(-mu eta)`: zero at a stationary point of the bound.
pub fn stationarity_residual(mu: f64, eta: f64) -> f64 {
    mu * (-mu).exp() - eta * (-mu * eta).exp()
}

/// Position of a working point relative to the mimicry-feasible region.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingPoint {
    pub params: ChannelParams,
    pub d1: f64,
    /// `d1 <= 0`: the attacked statistics can be reshaped into Poisson(mu eta).
    pub feasible: bool,
    pub b_match: Option<f64>,
    pub eta0_exact: Option<f64>,
    pub eta0_approx: Option<f64>,
    /// `eta0_exact - eta`; positive inside the region.
    pub margin: Option<f64>,
    /// `b_match` in `[0, 1]`, `eta <= 3/4` and a bracketed `eta0` exists.
    pub certified: bool,
    pub notes: Vec<String>,
}

pub fn working_point_check(params: &ChannelParams) -> WorkingPoint {
    let d1 = d1_exact(params);
    let mut notes = Vec::new();
    let b = b_match(params).map_err(|e| notes.push(e.to_string())).ok();
    let exact = eta0_exact(params.mu()).map_err(|e| notes.push(e.to_string())).ok();
    let approx = eta0_approx(params.mu()).map_err(|e| notes.push(e.to_string())).ok();
    if params.eta() > INDUCTION_ETA_MAX {
        notes.push(format!("eta = {} exceeds the certified 0.75", params.eta()));
    }
    WorkingPoint {
        params: *params,
        d1,
        feasible: d1 <= 0.0,
        b_match: b,
        eta0_exact: exact,
        eta0_approx: approx,
        margin: exact.map(|e| e - params.eta()),
        certified: b.is_some() && exact.is_some() && params.eta() <= INDUCTION_ETA_MAX,
        notes,
    }
}
