//! Pulse-level simulation of the honest lossy channel and of the basic and
//! extended PNS attacks, with chi-squared comparison of the delivered
//! photon-number histograms.
//!
//! Pulses are processed in fixed chunks of [`CHUNK_PULSES`]. Chunk `k` draws
//! from ChaCha8 seeded with the config seed on stream `k`, so results do not
//! depend on how many threads run the chunks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::boundary::{csv_reader, csv_writer, parse_f64};
use crate::distributions::{default_n_max, poisson, ChannelParams, PhotonDistribution};
use crate::error::{Error, Result};
use crate::fmt::sig17;
use crate::matching::b_match;
use crate::transport::{composite_plan, CompositePlan, TransitionRows};

pub const CHUNK_PULSES: u64 = 1 << 16;

/// Bins whose expected count falls below this are pooled.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// p-values below this flag two histograms as distinguishable.
pub const SIGNIFICANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimulationMode {
    /// Each photon survives independently with probability `eta`.
    LossyChannel,
    /// Block a `b_match` fraction of single-photon pulses, take one photon
    /// from every multi-photon pulse.
    BasePns,
    /// Base attack followed by the extraction plan.
    ExtendedPns,
}

impl SimulationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimulationMode::LossyChannel => "lossy",
            SimulationMode::BasePns => "base",
            SimulationMode::ExtendedPns => "extended",
        }
    }
}

impl fmt::Display for SimulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lossy" | "lossy-channel" => Ok(SimulationMode::LossyChannel),
            "base" | "base-pns" => Ok(SimulationMode::BasePns),
            "extended" | "extended-pns" => Ok(SimulationMode::ExtendedPns),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub params: ChannelParams,
    pub pulses: u64,
    pub seed: u64,
    pub mode: SimulationMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    /// `counts[m]`: pulses delivered with `m` photons.
    pub counts: Vec<u64>,
    pub nonvacuum_count: u64,
    /// Pulses from which Eve kept at least one photon (origin `n >= 2` under
    /// either attack).
    pub tagged_count: u64,
    /// Single-photon pulses Eve blocked.
    pub blocked_singles: u64,
    /// `(origin, delivered)` pair counts.
    pub transitions: BTreeMap<(usize, usize), u64>,
    /// Poisson(`mu eta`): what Bob expects from an honest lossy channel.
    pub reference: PhotonDistribution,
    pub tv_distance_to_analytic: f64,
    pub per_bin_z: Vec<f64>,
}

impl SimulationResult {
    pub fn pulses(&self) -> u64 {
        self.config.pulses
    }

    pub fn empirical_p(&self, m: usize) -> f64 {
        self.counts.get(m).copied().unwrap_or(0) as f64 / self.pulses() as f64
    }

    /// Pulses that arrived with origin `n >= 2`, counted from the transition
    /// log.
    pub fn delivered_from_multiphoton(&self) -> u64 {
        self.transitions
            .iter()
            .filter(|((n, m), _)| *n >= 2 && *m >= 1)
            .map(|(_, c)| c)
            .sum()
    }

    /// Histogram CSV: `n,count,empirical_p,analytic_p,z`.
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["n", "count", "empirical_p", "analytic_p", "z"])?;
        for (m, &count) in self.counts.iter().enumerate() {
            w.write_record([
                m.to_string(),
                count.to_string(),
                sig17(self.empirical_p(m)),
                sig17(self.reference.prob(m)),
                sig17(self.per_bin_z[m]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of a histogram CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRow {
    pub n: usize,
    pub count: u64,
    pub empirical_p: f64,
    pub analytic_p: f64,
    pub z: f64,
}

pub fn read_histogram_csv<R: Read>(input: R) -> Result<Vec<HistogramRow>> {
    let mut rdr = csv_reader(input, &["n", "count", "empirical_p", "analytic_p", "z"])?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        rows.push(HistogramRow {
            n: record[0].parse().map_err(|_| Error::parse(line, "bad n"))?,
            count: record[1].parse().map_err(|_| Error::parse(line, "bad count"))?,
            empirical_p: parse_f64(&record, 2, line)?,
            analytic_p: parse_f64(&record, 3, line)?,
            z: parse_f64(&record, 4, line)?,
        });
    }
    Ok(rows)
}

/// Per-pulse channel action.
enum PulseMap {
    Thinning(f64),
    Base(f64),
    /// Cumulative rows of the composite plan.
    Plan(Vec<Vec<f64>>),
}

impl PulseMap {
    fn apply<R: Rng>(&self, n: usize, rng: &mut R) -> usize {
        match self {
            PulseMap::Thinning(eta) => (0..n).filter(|_| rng.random::<f64>() < *eta).count(),
            PulseMap::Base(b) => base_step(n, *b, rng),
            PulseMap::Plan(cumulative) => match cumulative.get(n) {
                Some(row) => {
                    let u: f64 = rng.random();
                    row.iter().position(|&c| u < c).expect("row ends at +inf")
                }
                // far past the plan's truncation; only the basic attack applies
                None => base_step(n, 0.0, rng),
            },
        }
    }
}

fn base_step<R: Rng>(n: usize, b: f64, rng: &mut R) -> usize {
    match n {
        0 => 0,
        1 => usize::from(rng.random::<f64>() >= b),
        _ => n - 1,
    }
}

/// Running sums of `row`, with the last non-zero entry raised to +inf so a
/// uniform draw always lands inside a row whose sum rounds below one.
fn cumulative_row(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = row
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    cumulative[last] = f64::INFINITY;
    cumulative
}

/// Poisson sampler by sequential search of the CDF.
struct PoissonSampler {
    mean: f64,
    cdf: Vec<f64>,
    last_term: f64,
}

impl PoissonSampler {
    fn new(mean: f64, n_max: usize) -> Self {
        let dist = poisson(mean, n_max).expect("validated mean");
        let cdf = dist
            .probs()
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Self {
            mean,
            cdf,
            last_term: dist.prob(n_max),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        if let Some(n) = self.cdf.iter().position(|&c| u < c) {
            return n;
        }
        // continue the recurrence past the table
        let mut n = self.cdf.len() - 1;
        let mut acc = self.cdf[n];
        let mut term = self.last_term;
        loop {
            n += 1;
            term *= self.mean / n as f64;
            acc += term;
            if u < acc || term == 0.0 {
                return n;
            }
        }
    }
}

#[derive(Default)]
struct Tally {
    transitions: BTreeMap<(usize, usize), u64>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        for (k, v) in other.transitions {
            *self.transitions.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// Builds the composite plan used by extended-mode simulation.
pub fn extended_plan(params: &ChannelParams) -> Result<CompositePlan> {
    composite_plan(params, default_n_max(params.mu()))
        .map_err(|e| Error::InfeasibleParameters(format!("no extended attack at mu = {}, eta = {}: {e}", params.mu(), params.eta())))
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulationResult> {
    if config.pulses == 0 {
        return Err(Error::InvalidConfig("pulses must be >= 1".into()));
    }
    let params = config.params;
    let n_max = default_n_max(params.mu());
    let pulse_map = match config.mode {
        SimulationMode::LossyChannel => PulseMap::Thinning(params.eta()),
        SimulationMode::BasePns => PulseMap::Base(
            b_match(&params).map_err(|e| Error::InfeasibleParameters(e.to_string()))?,
        ),
        SimulationMode::ExtendedPns => {
            let plan = extended_plan(&params)?;
            PulseMap::Plan(plan.rows().iter().map(|row| cumulative_row(row)).collect())
        }
    };
    let sampler = PoissonSampler::new(params.mu(), n_max + 1);

    let chunks = config.pulses.div_ceil(CHUNK_PULSES);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(chunk);
            let len = CHUNK_PULSES.min(config.pulses - chunk * CHUNK_PULSES);
            let mut dense = vec![0u64; (n_max + 3) * (n_max + 3)];
            let width = n_max + 3;
            let mut tally = Tally::default();
            for _ in 0..len {
                let n = sampler.sample(&mut rng);
                let m = pulse_map.apply(n, &mut rng);
                if n < width && m < width {
                    dense[n * width + m] += 1;
                } else {
                    *tally.transitions.entry((n, m)).or_insert(0) += 1;
                }
            }
            for (idx, &c) in dense.iter().enumerate() {
                if c > 0 {
                    *tally.transitions.entry((idx / width, idx % width)).or_insert(0) += c;
                }
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);

    let transitions = tally.transitions;
    let max_delivered = transitions.keys().map(|&(_, m)| m).max().unwrap_or(0);
    let mut counts = vec![0u64; (n_max + 1).max(max_delivered + 1)];
    let (mut tagged, mut blocked) = (0, 0);
    for (&(n, m), &c) in &transitions {
        counts[m] += c;
        if config.mode != SimulationMode::LossyChannel {
            if n >= 2 {
                tagged += c;
            } else if n == 1 && m == 0 {
                blocked += c;
            }
        }
    }
    let nonvacuum = config.pulses - counts[0];

    let reference = poisson(params.received_mean(), counts.len() - 1)?;
    let total = config.pulses as f64;
    let per_bin_z = counts
        .iter()
        .enumerate()
        .map(|(m, &c)| {
            let p = reference.prob(m);
            let expected = total * p;
            let sd = (total * p * (1.0 - p)).sqrt();
            match (c as f64 - expected, sd > 0.0) {
                (diff, true) => diff / sd,
                (0.0, false) => 0.0,
                _ => f64::INFINITY,
            }
        })
        .collect();
    let empirical = PhotonDistribution::from_parts_unchecked(
        counts.iter().map(|&c| c as f64 / total).collect(),
        0.0,
        None,
    );
    let tv = empirical.total_variation(&reference);

    Ok(SimulationResult {
        config: *config,
        counts,
        nonvacuum_count: nonvacuum,
        tagged_count: tagged,
        blocked_singles: blocked,
        transitions,
        reference,
        tv_distance_to_analytic: tv,
        per_bin_z,
    })
}

/// Chi-squared comparison outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquaredReport {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub distinguishable: bool,
    /// Photon-number groups after pooling, as inclusive `(first, last)` bins.
    pub groups: Vec<(usize, usize)>,
}

impl ChiSquaredReport {
    fn from_statistic(statistic: f64, groups: Vec<(usize, usize)>) -> Self {
        let dof = groups.len().saturating_sub(1);
        let p_value = if dof == 0 {
            1.0
        } else {
            ChiSquared::new(dof as f64).expect("positive dof").sf(statistic)
        };
        Self {
            statistic,
            degrees_of_freedom: dof,
            p_value,
            distinguishable: p_value < SIGNIFICANCE,
            groups,
        }
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "chi2={}\ndof={}\np_value={}\ndistinguishable={}\n",
            sig17(self.statistic),
            self.degrees_of_freedom,
            sig17(self.p_value),
            self.distinguishable
        )
    }
}

/// Groups bins so every group's expected count reaches
/// [`MIN_EXPECTED_COUNT`]: sparse bins join the last retained bin before
/// them, or the first retained bin if none precedes.
fn pool_bins(expected: &[f64]) -> Vec<(usize, usize)> {
    let retained: Vec<usize> = (0..expected.len())
        .filter(|&i| expected[i] >= MIN_EXPECTED_COUNT)
        .collect();
    if retained.is_empty() {
        return vec![(0, expected.len().saturating_sub(1))];
    }
    let mut groups: Vec<(usize, usize)> = retained.iter().map(|&i| (i, i)).collect();
    groups[0].0 = 0;
    for (k, g) in groups.iter_mut().enumerate() {
        g.1 = retained.get(k + 1).map_or(expected.len() - 1, |&next| next - 1);
    }
    groups
}

fn group_sum(values: &[f64], (a, b): (usize, usize)) -> f64 {
    values[a..=b].iter().sum()
}

/// Two-sample chi-squared test between delivered histograms of equal size.
pub fn distinguishability_report(a: &SimulationResult, b: &SimulationResult) -> Result<ChiSquaredReport> {
    if a.pulses() != b.pulses() {
        return Err(Error::IncompatibleResults(format!(
            "pulse counts differ: {} vs {}",
            a.pulses(),
            b.pulses()
        )));
    }
    let len = a.counts.len().max(b.counts.len());
    let get = |c: &[u64], i: usize| c.get(i).copied().unwrap_or(0) as f64;
    let ca: Vec<f64> = (0..len).map(|i| get(&a.counts, i)).collect();
    let cb: Vec<f64> = (0..len).map(|i| get(&b.counts, i)).collect();
    let expected: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| 0.5 * (x + y)).collect();
    let groups = pool_bins(&expected);
    let statistic = groups
        .iter()
        .map(|&g| {
            let (x, y) = (group_sum(&ca, g), group_sum(&cb, g));
            if x + y > 0.0 {
                (x - y).powi(2) / (x + y)
            } else {
                0.0
            }
        })
        .sum();
    Ok(ChiSquaredReport::from_statistic(statistic, groups))
}

/// One-sample chi-squared test of the delivered histogram against
/// Poisson(`mu eta`); the reference tail is added to the last group.
pub fn goodness_of_fit(result: &SimulationResult) -> ChiSquaredReport {
    let total = result.pulses() as f64;
    let observed: Vec<f64> = result.counts.iter().map(|&c| c as f64).collect();
    let mut expected: Vec<f64> = (0..observed.len())
        .map(|m| total * result.reference.prob(m))
        .collect();
    *expected.last_mut().expect("non-empty histogram") += total * result.reference.tail_mass();
    let groups = pool_bins(&expected);
    let statistic = groups
        .iter()
        .map(|&g| {
            let (o, e) = (group_sum(&observed, g), group_sum(&expected, g));
            if e > 0.0 {
                (o - e).powi(2) / e
            } else {
                0.0
            }
        })
        .sum();
    ChiSquaredReport::from_statistic(statistic, groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mu: f64, eta: f64, pulses: u64, seed: u64, mode: SimulationMode) -> SimulationConfig {
        SimulationConfig {
            params: ChannelParams::new(mu, eta).unwrap(),
            pulses,
            seed,
            mode,
        }
    }

    #[test]
    fn single_pulse() {
        for mode in [SimulationMode::LossyChannel, SimulationMode::BasePns, SimulationMode::ExtendedPns] {
            let r = simulate(&config(0.1, 0.1, 1, 9, mode)).unwrap();
            assert_eq!(r.counts.iter().sum::<u64>(), 1);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            simulate(&config(0.1, 0.1, 0, 1, SimulationMode::LossyChannel)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            simulate(&config(0.1, 0.7, 10, 1, SimulationMode::ExtendedPns)),
            Err(Error::InfeasibleParameters(_))
        ));
        assert!("sideways".parse::<SimulationMode>().is_err());
        assert_eq!("extended".parse::<SimulationMode>().unwrap(), SimulationMode::ExtendedPns);
    }

    #[test]
    fn deterministic_and_chunk_independent() {
        let c = config(0.3, 0.2, 3 * CHUNK_PULSES + 17, 42, SimulationMode::ExtendedPns);
        let a = simulate(&c).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate(&c).unwrap());
        assert_eq!(a, b);
        let other = simulate(&SimulationConfig { seed: 43, ..c }).unwrap();
        assert_ne!(a.counts, other.counts);
    }

    #[test]
    fn pooling() {
        assert_eq!(pool_bins(&[100.0, 50.0, 4.0, 1.0]), vec![(0, 0), (1, 3)]);
        assert_eq!(pool_bins(&[1.0, 50.0, 40.0]), vec![(0, 1), (2, 2)]);
        assert_eq!(pool_bins(&[1.0, 1.0]), vec![(0, 1)]);
    }

    #[test]
    fn self_comparison_is_null() {
        let r = simulate(&config(0.1, 0.1, 100_000, 5, SimulationMode::LossyChannel)).unwrap();
        let rep = distinguishability_report(&r, &r).unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert_eq!(rep.p_value, 1.0);
        assert!(!rep.distinguishable);
        let short = simulate(&config(0.1, 0.1, 10, 5, SimulationMode::LossyChannel)).unwrap();
        assert!(matches!(distinguishability_report(&r, &short), Err(Error::IncompatibleResults(_))));
    }
}
