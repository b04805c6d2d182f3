//! Eve's redistribution strategy.
//!
//! An [`ExtractionPlan`] says, for a pulse that still carries `n` photons
//! after the basic attack, how many photons `m <= n` Bob finally receives.
//! It is built with the north-west-corner monotone coupling: output bins are
//! filled in ascending order, each from the lowest source bin that still has
//! mass. Mass therefore only moves down, and never into the vacuum bin.
//!
//! A [`CompositePlan`] chains the basic attack (block a fraction `b` of
//! single-photon pulses, take one photon from every multi-photon pulse) with
//! the extraction plan, giving the map from Alice's photon number to Bob's.

use std::fmt::Write as _;

use crate::distributions::{poisson, ChannelParams, PhotonDistribution, TRUNCATION_TAIL};
use crate::error::{Error, Result};
use crate::fmt::sig17;
use crate::matching::{b_match, match_distribution, prefix_feasibility, Feasibility, SIGN_TOL};

/// Allowed deviation of a plan row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Allowed per-bin deviation between a pushforward and its target.
pub const PUSHFORWARD_TOL: f64 = 1e-12;

/// Dense row-stochastic transition matrix `rows[n][m]`.
pub trait TransitionRows {
    fn rows(&self) -> &[Vec<f64>];

    fn row(&self, n: usize) -> Option<&[f64]> {
        self.rows().get(n).map(Vec::as_slice)
    }
}

/// Redistribution step: `rows[n][m]` is the probability that a pulse
/// holding `n` photons is delivered with `m`.
///
/// Row 0 is the identity; rows `n >= 1` put no mass above `n` and none on 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionPlan {
    rows: Vec<Vec<f64>>,
    params: Option<ChannelParams>,
}

impl ExtractionPlan {
    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn params(&self) -> Option<ChannelParams> {
        self.params
    }

    pub fn is_identity(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(n, row)| row.iter().enumerate().all(|(m, &p)| p == if m == n { 1.0 } else { 0.0 }))
    }

    /// Expected number of photons Eve takes per pulse in bin `n`.
    pub fn photons_taken(&self, n: usize) -> f64 {
        self.rows[n]
            .iter()
            .enumerate()
            .map(|(m, &p)| p * (n as f64 - m as f64))
            .sum()
    }
}

impl TransitionRows for ExtractionPlan {
    fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Full attack: `rows[n][m]` maps Alice's photon number `n` to the number
/// Bob receives.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositePlan {
    rows: Vec<Vec<f64>>,
    blocking_fraction: f64,
    params: Option<ChannelParams>,
}

impl CompositePlan {
    /// Wraps arbitrary rows without checking them; [`verify_plan`] reports
    /// whatever constraints they break.
    pub fn from_raw_rows(rows: Vec<Vec<f64>>, blocking_fraction: f64, params: Option<ChannelParams>) -> Self {
        Self {
            rows,
            blocking_fraction,
            params,
        }
    }

    pub fn blocking_fraction(&self) -> f64 {
        self.blocking_fraction
    }

    pub fn params(&self) -> Option<ChannelParams> {
        self.params
    }

    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    /// Renders the plan in the line format
    ///
    /// ```text
    /// # pns-plan mu=<v> eta=<v> b=<v>
    /// <n> <m> <probability>
    /// ```
    ///
    /// listing only non-zero entries, all reals at 17 significant digits.
    pub fn to_text(&self) -> Result<String> {
        let params = self
            .params
            .ok_or_else(|| Error::invalid("plan carries no (mu, eta) to write in the header"))?;
        let mut out = format!(
            "# pns-plan mu={} eta={} b={}\n",
            sig17(params.mu()),
            sig17(params.eta()),
            sig17(self.blocking_fraction)
        );
        for (n, row) in self.rows.iter().enumerate() {
            for (m, &p) in row.iter().enumerate() {
                if p != 0.0 {
                    writeln!(out, "{n} {m} {}", sig17(p)).expect("writing to a String");
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`CompositePlan::to_text`]. Values round-trip bit-exactly.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty plan"))?;
        let fields = header
            .strip_prefix("# pns-plan ")
            .ok_or_else(|| Error::parse(1, "missing '# pns-plan' header"))?;
        let (mut mu, mut eta, mut b) = (None, None, None);
        for kv in fields.split_whitespace() {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("malformed header field {kv:?}")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::parse(1, format!("bad number in {kv:?}")))?;
            match key {
                "mu" => mu = Some(value),
                "eta" => eta = Some(value),
                "b" => b = Some(value),
                _ => return Err(Error::parse(1, format!("unknown header key {key:?}"))),
            }
        }
        let (Some(mu), Some(eta), Some(b)) = (mu, eta, b) else {
            return Err(Error::parse(1, "header needs mu, eta and b"));
        };
        let params = ChannelParams::new(mu, eta)?;

        let mut entries = Vec::new();
        let mut dim = 0;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let mut parts = line.split_whitespace();
            let (Some(n), Some(m), Some(p), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(line_no, "expected '<n> <m> <probability>'"));
            };
            let n: usize = n.parse().map_err(|_| Error::parse(line_no, "bad source count"))?;
            let m: usize = m.parse().map_err(|_| Error::parse(line_no, "bad delivered count"))?;
            let p: f64 = p.parse().map_err(|_| Error::parse(line_no, "bad probability"))?;
            dim = dim.max(n + 1).max(m + 1);
            entries.push((n, m, p));
        }
        if dim == 0 {
            return Err(Error::parse(1, "plan has no rows"));
        }
        let mut rows = vec![vec![0.0; dim]; dim];
        for (n, m, p) in entries {
            rows[n][m] = p;
        }
        Ok(Self::from_raw_rows(rows, b, Some(params)))
    }
}

impl TransitionRows for CompositePlan {
    fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// North-west-corner coupling moving `source` onto `target` using only
/// downward moves, never touching the vacuum bin.
///
/// Both distributions must share `n_max` and the vacuum probability, and
/// every prefix sum of `source - target` must be non-positive.
pub fn build_extraction_plan(source: &PhotonDistribution, target: &PhotonDistribution) -> Result<ExtractionPlan> {
    if source.n_max() != target.n_max() {
        return Err(Error::invalid(format!(
            "source n_max {} differs from target n_max {}",
            source.n_max(),
            target.n_max()
        )));
    }
    if (source.prob(0) - target.prob(0)).abs() > SIGN_TOL {
        return Err(Error::MismatchedVacuum {
            source_vacuum: source.prob(0),
            target_vacuum: target.prob(0),
        });
    }
    let diff: Vec<f64> = source.probs().iter().zip(target.probs()).map(|(s, t)| s - t).collect();
    if let Feasibility::Infeasible { witness, excess } = prefix_feasibility(&diff) {
        return Err(Error::InfeasibleTransport { index: witness, excess });
    }

    let n_max = source.n_max();
    let mut remaining = source.probs().to_vec();
    let mut flow = vec![vec![0.0; n_max + 1]; n_max + 1];
    flow[0][0] = remaining[0];
    remaining[0] = 0.0;

    let mut cursor = 1;
    for m in 1..=n_max {
        // whatever is left below m is rounding residue; it stays in place
        while cursor < m {
            flow[cursor][cursor] += remaining[cursor];
            remaining[cursor] = 0.0;
            cursor += 1;
        }
        let mut need = target.prob(m);
        while need > 0.0 && cursor <= n_max {
            let take = remaining[cursor].min(need);
            flow[cursor][m] += take;
            remaining[cursor] -= take;
            need -= take;
            if remaining[cursor] <= 0.0 {
                cursor += 1;
            }
        }
    }
    for (n, rest) in remaining.iter().enumerate().skip(1) {
        if *rest > 0.0 {
            flow[n][n] += rest;
        }
    }

    let rows = flow
        .into_iter()
        .enumerate()
        .map(|(n, mut row)| {
            let mass = source.prob(n);
            if mass > 0.0 {
                row.iter_mut().for_each(|p| *p /= mass);
            } else {
                row.iter_mut().for_each(|p| *p = 0.0);
                row[n] = 1.0;
            }
            row
        })
        .collect();
    Ok(ExtractionPlan { rows, params: None })
}

/// Extraction plan turning the vacuum-matched attack statistics into
/// Poisson(`mu eta`) at truncation `n_max`.
pub fn extraction_plan(params: &ChannelParams, n_max: usize) -> Result<ExtractionPlan> {
    let source = match_distribution(params, n_max)?;
    let target = poisson(params.received_mean(), n_max)?;
    let mut plan = build_extraction_plan(&source, &target)?;
    plan.params = Some(*params);
    Ok(plan)
}

/// Prepends the basic attack: `rows[0] = {0: 1}`, `rows[1] = {0: b, 1: 1-b}`
/// and, for `n >= 2`, `rows[n] = plan.rows[n-1]`.
pub fn compose_with_base(plan: &ExtractionPlan, b: f64) -> Result<CompositePlan> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("blocking fraction b must lie in [0, 1], got {b}")));
    }
    let dim = plan.rows.len() + 1;
    let mut rows = Vec::with_capacity(dim);
    let mut vacuum = vec![0.0; dim];
    vacuum[0] = 1.0;
    rows.push(vacuum);
    let mut single = vec![0.0; dim];
    single[0] = b;
    single[1] = 1.0 - b;
    rows.push(single);
    for inner in &plan.rows[1..] {
        let mut row = inner.clone();
        row.push(0.0);
        rows.push(row);
    }
    Ok(CompositePlan {
        rows,
        blocking_fraction: b,
        params: plan.params,
    })
}

/// The complete extended attack for `params`: vacuum-matched blocking plus
/// the extraction plan at truncation `n_max`.
pub fn composite_plan(params: &ChannelParams, n_max: usize) -> Result<CompositePlan> {
    let b = b_match(params)?;
    compose_with_base(&extraction_plan(params, n_max)?, b)
}

/// `out[m] = sum_n dist[n] * rows[n][m]`; the input tail passes through.
///
/// Bins with no plan row must carry at most [`TRUNCATION_TAIL`]; that mass is
/// moved into the output tail.
pub fn pushforward<P: TransitionRows + ?Sized>(dist: &PhotonDistribution, plan: &P) -> Result<PhotonDistribution> {
    let rows = plan.rows();
    let width = rows.iter().map(Vec::len).max().unwrap_or(0).max(3);
    let mut out = vec![0.0; width];
    let mut tail = dist.tail_mass();
    for (n, &mass) in dist.probs().iter().enumerate() {
        match rows.get(n) {
            Some(row) => {
                for (m, &p) in row.iter().enumerate() {
                    out[m] += mass * p;
                }
            }
            None if mass <= TRUNCATION_TAIL => tail += mass,
            None => return Err(Error::UncoveredBin(n, mass)),
        }
    }
    Ok(PhotonDistribution::from_parts_unchecked(out, tail, None))
}

/// One named check of [`verify_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanCheck {
    pub name: &'static str,
    pub passed: bool,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanVerification {
    pub checks: Vec<PlanCheck>,
}

impl PlanVerification {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PlanCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Delivered statistics equal Poisson(`mu eta`).
pub const CHECK_POISSON: &str = "delivered-poisson";
/// Delivered non-vacuum probability equals `1 - e^(-mu eta)`.
pub const CHECK_NONVACUUM: &str = "nonvacuum-conserved";
/// Vacuum stays vacuum, singles are only blocked or passed, multi-photon
/// pulses reach Bob with between 1 and `n - 1` photons, rows are stochastic.
pub const CHECK_STRUCTURE: &str = "structure";

/// Checks a composite plan against the lossy channel it should imitate.
pub fn verify_plan(plan: &CompositePlan, params: &ChannelParams) -> PlanVerification {
    let n_src = plan.n_max().max(2);
    let received = params.received_mean();
    let mut checks = Vec::with_capacity(3);

    let source = poisson(params.mu(), n_src).expect("validated params");
    let target = poisson(received, n_src).expect("validated params");
    let poisson_dev = match pushforward(&source, plan) {
        Ok(out) => out.max_bin_deviation(&target),
        Err(_) => f64::INFINITY,
    };
    checks.push(PlanCheck {
        name: CHECK_POISSON,
        passed: poisson_dev <= PUSHFORWARD_TOL,
        max_deviation: poisson_dev,
    });

    let delivered_nonvacuum: f64 = source
        .probs()
        .iter()
        .enumerate()
        .map(|(n, &mass)| mass * (1.0 - plan.row(n).map_or(0.0, |r| r[0])))
        .sum::<f64>()
        + source.tail_mass();
    let nonvacuum_dev = (delivered_nonvacuum - -(-received).exp_m1()).abs();
    checks.push(PlanCheck {
        name: CHECK_NONVACUUM,
        passed: nonvacuum_dev <= PUSHFORWARD_TOL,
        max_deviation: nonvacuum_dev,
    });

    let mut stray: f64 = 0.0;
    for (n, row) in plan.rows.iter().enumerate() {
        let allowed = |m: usize| match n {
            0 => m == 0,
            1 => m <= 1,
            _ => (1..n).contains(&m),
        };
        for (m, &p) in row.iter().enumerate() {
            if !allowed(m) || p < 0.0 {
                stray = stray.max(p.abs());
            }
        }
        stray = stray.max((row.iter().sum::<f64>() - 1.0).abs() - ROW_SUM_TOL);
    }
    let stray = stray.max(0.0);
    checks.push(PlanCheck {
        name: CHECK_STRUCTURE,
        passed: stray == 0.0,
        max_deviation: stray,
    });

    PlanVerification { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::default_n_max;

    fn params(mu: f64, eta: f64) -> ChannelParams {
        ChannelParams::new(mu, eta).unwrap()
    }

    #[test]
    fn identical_distributions_give_identity() {
        let d = poisson(0.3, 16).unwrap();
        let plan = build_extraction_plan(&d, &d).unwrap();
        assert!(plan.is_identity());
        assert_eq!(pushforward(&d, &plan).unwrap(), PhotonDistribution::from_parts_unchecked(d.probs().to_vec(), d.tail_mass(), None));
    }

    #[test]
    fn feasible_plan_reproduces_target() {
        let p = params(0.1, 0.1);
        let n = default_n_max(0.1);
        let plan = extraction_plan(&p, n).unwrap();
        let source = match_distribution(&p, n).unwrap();
        let target = poisson(0.01, n).unwrap();
        let out = pushforward(&source, &plan).unwrap();
        assert!(out.max_bin_deviation(&target) < 1e-12);
        for (k, row) in plan.rows().iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[k + 1..].iter().all(|&x| x == 0.0));
            if k > 0 {
                assert_eq!(row[0], 0.0);
            }
        }
        assert!(plan.photons_taken(2) > 0.0);
    }

    #[test]
    fn infeasible_and_mismatched() {
        let p = params(0.1, 0.7);
        match extraction_plan(&p, 16) {
            Err(Error::InfeasibleTransport { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected infeasible transport, got {other:?}"),
        }
        let a = poisson(0.1, 16).unwrap();
        let b = poisson(0.2, 16).unwrap();
        assert!(matches!(build_extraction_plan(&a, &b), Err(Error::MismatchedVacuum { .. })));
    }

    #[test]
    fn compose_identity() {
        let d = poisson(0.3, 16).unwrap();
        let id = build_extraction_plan(&d, &d).unwrap();
        let c0 = compose_with_base(&id, 0.0).unwrap();
        for n in 2..=c0.n_max() {
            assert_eq!(c0.row(n).unwrap()[n - 1], 1.0);
        }
        let c1 = compose_with_base(&id, 1.0).unwrap();
        assert_eq!(c1.row(1).unwrap()[0], 1.0);
        assert_eq!(c1.row(1).unwrap()[1], 0.0);
        assert!(compose_with_base(&id, 1.2).is_err());
    }

    #[test]
    fn composite_verifies() {
        for (mu, eta) in [(0.1, 0.1), (0.3, 0.2)] {
            let p = params(mu, eta);
            let plan = composite_plan(&p, default_n_max(mu)).unwrap();
            let report = verify_plan(&plan, &p);
            assert!(report.all_passed(), "{mu} {eta}: {report:?}");
        }
    }

    #[test]
    fn corrupted_plan_fails_structure() {
        let p = params(0.1, 0.1);
        let plan = composite_plan(&p, 16).unwrap();
        let mut rows = plan.rows().to_vec();
        let row3 = &mut rows[3];
        row3.iter_mut().for_each(|x| *x = 0.0);
        row3[0] = 1.0;
        let bad = CompositePlan::from_raw_rows(rows, plan.blocking_fraction(), plan.params());
        let report = verify_plan(&bad, &p);
        assert!(!report.check(CHECK_STRUCTURE).unwrap().passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn point_mass_under_base_map() {
        let d = poisson(0.3, 16).unwrap();
        let id = build_extraction_plan(&d, &d).unwrap();
        let base = compose_with_base(&id, 0.0).unwrap();
        let three = PhotonDistribution::point_mass(3, 16).unwrap();
        let out = pushforward(&three, &base).unwrap();
        assert_eq!(out.prob(2), 1.0);
        assert_eq!(out.probs().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn uncovered_bin() {
        let d = poisson(0.3, 20).unwrap();
        let small = build_extraction_plan(&poisson(0.3, 4).unwrap(), &poisson(0.3, 4).unwrap()).unwrap();
        // bins 5.. carry ~1e-6 of mass
        assert!(matches!(pushforward(&d, &small), Err(Error::UncoveredBin(5, _))));
    }

    #[test]
    fn plan_text_round_trip() {
        let p = params(0.1, 0.1);
        let plan = composite_plan(&p, 16).unwrap();
        let text = plan.to_text().unwrap();
        assert!(text.starts_with("# pns-plan mu=1.0000000000000001e-1 eta=1.0000000000000001e-1 b="));
        let back = CompositePlan::from_text(&text).unwrap();
        assert_eq!(back, plan);
        assert!(CompositePlan::from_text("0 0 1").is_err());
        assert!(CompositePlan::from_text("# pns-plan mu=0.1 eta=0.1\n0 0 1\n").is_err());
        assert!(CompositePlan::from_text("# pns-plan mu=0.1 eta=0.1 b=0\n0 x 1\n").is_err());
    }
}
