//! Where the extended attack works: the single-photon excess `d1`, the
//! critical transmission `eta0(mu)` at which it vanishes, and the grid and
//! curve data behind the region and boundary plots.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::distributions::{poisson_upper_tail, ChannelParams};
use crate::error::{Error, Result};
use crate::fmt::sig17;

/// Lower end of the `eta` bracket searched for `eta0`.
pub const ETA_BRACKET_LOW: f64 = 1e-9;
/// Upper end of the bracket; sufficiency is only proven up to here.
pub const ETA_BRACKET_HIGH: f64 = 0.75;
/// Bisection stops once the bracket is this narrow and the residual is small.
pub const ETA_TOL: f64 = 1e-10;
/// Target residual `|d1(mu, eta0)|`.
pub const ROOT_RESIDUAL: f64 = 1e-12;

/// `d1 = (1 + mu + mu^2/2) e^-mu - (1 + eta mu) e^(-eta mu)`.
pub fn d1_exact(params: &ChannelParams) -> f64 {
    d1_exact_at(params.mu(), params.eta())
}

/// [`d1_exact`] on raw values; `eta = 0` is allowed.
///
/// Evaluated as `P[Pois(eta mu) >= 2] - P[Pois(mu) >= 3]`, which keeps full
/// precision when `mu` is small.
pub fn d1_exact_at(mu: f64, eta: f64) -> f64 {
    poisson_upper_tail(eta * mu, 2) - poisson_upper_tail(mu, 3)
}

/// Small-parameter expansion `mu^2/2 (-mu/3 + mu^2/4 + eta^2)`, exact through
/// total order four in `mu` and `eta`.
pub fn d1_approx(params: &ChannelParams) -> f64 {
    d1_approx_at(params.mu(), params.eta())
}

pub fn d1_approx_at(mu: f64, eta: f64) -> f64 {
    0.5 * mu * mu * (-mu / 3.0 + 0.25 * mu * mu + eta * eta)
}

/// Critical transmission: the `eta` in `[1e-9, 0.75]` where `d1` changes
/// sign, by bisection.
pub fn eta0_exact(mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::invalid(format!("mu must be finite and > 0, got {mu}")));
    }
    let f = |eta: f64| d1_exact_at(mu, eta);
    let (mut lo, mut hi) = (ETA_BRACKET_LOW, ETA_BRACKET_HIGH);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::NoRoot {
            mu,
            at_low: f_lo,
            at_high: f_hi,
        });
    }
    // d1 is increasing in eta, so the sign of f(mid) picks the half
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if hi - lo <= ETA_TOL && f_mid.abs() < ROOT_RESIDUAL {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// `sqrt(mu/3 - mu^2/4)`, defined for `0 < mu < 4/3`.
pub fn eta0_approx(mu: f64) -> Result<f64> {
    // mu/3 - mu^2/4 in factored form
    let radicand = mu * (4.0 - 3.0 * mu) / 12.0;
    if !(mu > 0.0 && radicand > 0.0) {
        return Err(Error::invalid(format!(
            "eta0 approximation needs 0 < mu < 4/3, got {mu}"
        )));
    }
    Ok(radicand.sqrt())
}

fn linspace((lo, hi): (f64, f64), steps: usize) -> Vec<f64> {
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| if i + 1 == steps { hi } else { lo + (hi - lo) * i as f64 / last })
        .collect()
}

fn check_unit_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi <= 1.0 && lo < hi) {
        return Err(Error::invalid(format!(
            "{name} range must satisfy 0 < min < max <= 1, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub d1: f64,
    pub feasible: bool,
}

/// `d1` sampled on a `mu` x `eta` grid; `cells[i][j]` belongs to
/// `(mu_axis[i], eta_axis[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    pub mu_axis: Vec<f64>,
    pub eta_axis: Vec<f64>,
    pub cells: Vec<Vec<GridCell>>,
}

pub fn region_grid(mu_range: (f64, f64), eta_range: (f64, f64), steps: usize) -> Result<RegionGrid> {
    check_unit_range("mu", mu_range)?;
    check_unit_range("eta", eta_range)?;
    if steps < 2 {
        return Err(Error::invalid(format!("steps must be >= 2, got {steps}")));
    }
    let mu_axis = linspace(mu_range, steps);
    let eta_axis = linspace(eta_range, steps);
    let cells = mu_axis
        .par_iter()
        .map(|&mu| {
            eta_axis
                .iter()
                .map(|&eta| {
                    let d1 = d1_exact_at(mu, eta);
                    GridCell { d1, feasible: d1 <= 0.0 }
                })
                .collect()
        })
        .collect();
    Ok(RegionGrid {
        mu_axis,
        eta_axis,
        cells,
    })
}

impl RegionGrid {
    /// For each `mu`, whether the feasible cells form a prefix of the `eta`
    /// axis.
    pub fn feasible_prefix_per_mu(&self) -> Vec<bool> {
        self.cells
            .iter()
            .map(|column| column.windows(2).all(|w| w[0].feasible || !w[1].feasible))
            .collect()
    }

    /// CSV with header `mu,eta,d1,feasible`, `mu` major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["mu", "eta", "d1", "feasible"])?;
        for (mu, column) in self.mu_axis.iter().zip(&self.cells) {
            for (eta, cell) in self.eta_axis.iter().zip(column) {
                w.write_record([sig17(*mu), sig17(*eta), sig17(cell.d1), cell.feasible.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv_reader(input, &["mu", "eta", "d1", "feasible"])?;
        let mut mu_axis: Vec<f64> = Vec::new();
        let mut eta_axis: Vec<f64> = Vec::new();
        let mut cells: Vec<Vec<GridCell>> = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let mu = parse_f64(&record, 0, line)?;
            let eta = parse_f64(&record, 1, line)?;
            let d1 = parse_f64(&record, 2, line)?;
            let feasible: bool = record[3]
                .parse()
                .map_err(|_| Error::parse(line, "feasible must be true or false"))?;
            if mu_axis.last().is_none_or(|&last| last.to_bits() != mu.to_bits()) {
                mu_axis.push(mu);
                cells.push(Vec::new());
            }
            let column = cells.last_mut().expect("pushed above");
            if mu_axis.len() == 1 {
                eta_axis.push(eta);
            } else if eta_axis.get(column.len()).map(|e| e.to_bits()) != Some(eta.to_bits()) {
                return Err(Error::parse(line, "eta axis differs between mu columns"));
            }
            column.push(GridCell { d1, feasible });
        }
        if cells.iter().any(|c| c.len() != eta_axis.len()) {
            return Err(Error::parse(0, "ragged grid"));
        }
        Ok(Self {
            mu_axis,
            eta_axis,
            cells,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub mu: f64,
    pub eta0_exact: f64,
    pub eta0_approx: f64,
}

/// Critical transmission traced over `mu`, exact against approximate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCurve {
    pub samples: Vec<BoundarySample>,
    pub mu_range: (f64, f64),
    pub steps: usize,
    /// `mu` values left out because one of the two `eta0` values is undefined.
    pub skipped: Vec<f64>,
}

pub fn boundary_curve(mu_range: (f64, f64), steps: usize) -> Result<BoundaryCurve> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "mu range must satisfy 0 < min < max, got [{lo}, {hi}]"
        )));
    }
    if steps < 2 {
        return Err(Error::invalid(format!("steps must be >= 2, got {steps}")));
    }
    let evaluated: Vec<(f64, Result<BoundarySample>)> = linspace(mu_range, steps)
        .into_par_iter()
        .map(|mu| {
            let sample = eta0_exact(mu).and_then(|exact| {
                Ok(BoundarySample {
                    mu,
                    eta0_exact: exact,
                    eta0_approx: eta0_approx(mu)?,
                })
            });
            (mu, sample)
        })
        .collect();
    let mut samples = Vec::with_capacity(steps);
    let mut skipped = Vec::new();
    for (mu, sample) in evaluated {
        match sample {
            Ok(s) => samples.push(s),
            Err(e) => {
                log::warn!("boundary sample at mu = {mu} skipped: {e}");
                skipped.push(mu);
            }
        }
    }
    Ok(BoundaryCurve {
        samples,
        mu_range,
        steps,
        skipped,
    })
}

impl BoundaryCurve {
    /// CSV with header `mu,eta0_exact,eta0_approx`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["mu", "eta0_exact", "eta0_approx"])?;
        for s in &self.samples {
            w.write_record([sig17(s.mu), sig17(s.eta0_exact), sig17(s.eta0_approx)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads samples back; range, step count and skipped list are not part
    /// of the file and are reconstructed from the samples.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv_reader(input, &["mu", "eta0_exact", "eta0_approx"])?;
        let mut samples = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            samples.push(BoundarySample {
                mu: parse_f64(&record, 0, line)?,
                eta0_exact: parse_f64(&record, 1, line)?,
                eta0_approx: parse_f64(&record, 2, line)?,
            });
        }
        let mu_range = match (samples.first(), samples.last()) {
            (Some(a), Some(b)) => (a.mu, b.mu),
            _ => (0.0, 0.0),
        };
        Ok(Self {
            steps: samples.len(),
            samples,
            mu_range,
            skipped: Vec::new(),
        })
    }
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub(crate) fn csv_reader<R: Read>(input: R, header: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::parse(1, format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    Ok(rdr)
}

pub(crate) fn parse_f64(record: &csv::StringRecord, col: usize, line: usize) -> Result<f64> {
    record
        .get(col)
        .ok_or_else(|| Error::parse(line, format!("missing column {col}")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("column {col} is not a number")))
}
