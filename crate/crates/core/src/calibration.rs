//! Tolerance calibration from simulated distance quantiles.

use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{Matcher, Sample};
use crate::error::{domain, Error, Result};
use crate::model::{GenerativeModel, Parameter};
use crate::stream::Streams;

pub const DEFAULT_LEVELS: [f64; 12] = [
    0.0, 0.25, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0,
];

const LEVEL_SLACK: f64 = 1e-9;

/// Empirical quantiles of matching distances, one row per probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub probes: Vec<Parameter>,
    pub levels: Vec<f64>,
    /// `entries[i][j]` is the quantile at `levels[j]` for `probes[i]`.
    pub entries: Vec<Vec<f64>>,
    pub m_cal: usize,
    pub matcher: String,
}

/// The `(epsilon_n, alpha_n)` pair read off a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceChoice {
    pub epsilon_n: f64,
    pub alpha_n: f64,
    pub probe_used: Parameter,
}

/// Order statistic `k = ceil(q * M)` of sorted values, with `q = 0` giving
/// the minimum.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let k = ((q * m as f64) - LEVEL_SLACK).ceil().clamp(1.0, m as f64) as usize;
    sorted[k - 1]
}

/// Probes `base + k * step * scale` for `k = 0..=steps`, applied to every
/// coordinate.
pub fn standardized_probes(
    base: &Parameter,
    scale: f64,
    step: f64,
    steps: usize,
) -> Result<Vec<Parameter>> {
    (0..=steps)
        .map(|k| {
            Parameter::new(
                base.values()
                    .iter()
                    .map(|b| b + k as f64 * step * scale)
                    .collect(),
            )
        })
        .collect()
}

/// Levels must be strictly increasing within `[0, 1]`.
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(domain("at least one quantile level is required"));
    }
    if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(domain("quantile levels must lie in [0, 1]"));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain("quantile levels must be strictly increasing"));
    }
    Ok(())
}

/// Simulates `m_cal` pseudo-samples for every probe and tabulates the
/// quantiles of their distances to `x_obs`. Probe `i` uses replicates
/// `0..m_cal` of candidate substream `i`.
pub fn build_quantile_table<M: GenerativeModel>(
    model: &M,
    x_obs: &Sample,
    probes: &[Parameter],
    m_cal: usize,
    matcher: &Matcher,
    levels: &[f64],
    streams: &Streams,
) -> Result<QuantileTable> {
    if probes.is_empty() {
        return Err(domain("at least one probe is required"));
    }
    if m_cal < 2 {
        return Err(domain(
            "calibration needs at least two replicates per probe",
        ));
    }
    validate_levels(levels)?;
    if x_obs.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: model.dim(),
            right: x_obs.dim(),
        });
    }
    for p in probes {
        model.check_parameter(p)?;
    }
    matcher.check_dim(x_obs.dim())?;
    let reference = matcher.prepare(x_obs)?;
    let n = x_obs.len();
    let distances = (0..probes.len() * m_cal)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / m_cal, idx % m_cal);
            let y = model.simulate(&probes[i], n, &mut streams.candidate(i).replicate(j))?;
            reference.distance(&y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let entries = distances
        .chunks(m_cal)
        .map(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            levels
                .iter()
                .map(|&q| empirical_quantile(&sorted, q))
                .collect()
        })
        .collect();
    Ok(QuantileTable {
        probes: probes.to_vec(),
        levels: levels.to_vec(),
        entries,
        m_cal,
        matcher: matcher.to_string(),
    })
}

fn level_label(q: f64) -> String {
    if q == 0.0 {
        "min".into()
    } else if q == 1.0 {
        "max".into()
    } else {
        q.to_string()
    }
}

fn parse_level(label: &str) -> Result<f64> {
    match label {
        "min" => Ok(0.0),
        "max" => Ok(1.0),
        s => s
            .parse()
            .map_err(|_| Error::Parse(format!("bad quantile level {s:?}"))),
    }
}

impl QuantileTable {
    fn level_index(&self, alpha: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|q| (q - alpha).abs() <= LEVEL_SLACK)
            .ok_or_else(|| Error::Lookup(format!("level {alpha} is not in the table")))
    }

    fn probe_index(&self, probe: &Parameter) -> Result<usize> {
        self.probes
            .iter()
            .position(|p| p.dim() == probe.dim() && p.distance(probe) <= 1e-12)
            .ok_or_else(|| Error::Lookup(format!("probe {probe} is not in the table")))
    }

    pub fn entry(&self, probe: &Parameter, alpha: f64) -> Result<f64> {
        Ok(self.entries[self.probe_index(probe)?][self.level_index(alpha)?])
    }

    pub fn column(&self, alpha: f64) -> Result<Vec<f64>> {
        let j = self.level_index(alpha)?;
        Ok(self.entries.iter().map(|row| row[j]).collect())
    }

    /// Entry-wise mean of tables sharing probes and levels.
    pub fn average(tables: &[QuantileTable]) -> Result<QuantileTable> {
        let first = tables
            .first()
            .ok_or_else(|| domain("no tables to average"))?;
        if tables
            .iter()
            .any(|t| t.probes != first.probes || t.levels != first.levels)
        {
            return Err(domain("tables differ in probes or levels"));
        }
        let k = tables.len() as f64;
        let entries = (0..first.probes.len())
            .map(|i| {
                (0..first.levels.len())
                    .map(|j| tables.iter().map(|t| t.entries[i][j]).sum::<f64>() / k)
                    .collect()
            })
            .collect();
        Ok(QuantileTable {
            entries,
            ..first.clone()
        })
    }

    /// Fixed-width text with two decimals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>10}", "theta*");
        for &q in &self.levels {
            let label = if q == 0.0 {
                "MIN".to_string()
            } else if q == 1.0 {
                "MAX".to_string()
            } else {
                format!("{}th", (q * 100.0).round())
            };
            let _ = write!(out, " {label:>6}");
        }
        out.push('\n');
        for (probe, row) in self.probes.iter().zip(&self.entries) {
            let _ = write!(out, "{:>10}", probe.to_string());
            for v in row {
                let _ = write!(out, " {v:>6.2}");
            }
            out.push('\n');
        }
        out
    }

    /// CSV with a `#` metadata line, a header of probe coordinates and
    /// levels, and full-precision entries.
    pub fn write_csv<W: io::Write>(&self, mut writer: W) -> Result<()> {
        let io_err = |e: io::Error| Error::Parse(e.to_string());
        writeln!(writer, "# m_cal={} matcher={}", self.m_cal, self.matcher).map_err(io_err)?;
        let k = self.probes.first().map_or(1, Parameter::dim);
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        let header: Vec<String> = (1..=k)
            .map(|j| format!("theta_star_{j}"))
            .chain(self.levels.iter().map(|&q| level_label(q)))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (probe, row) in self.probes.iter().zip(&self.entries) {
            let rec: Vec<String> = probe
                .values()
                .iter()
                .chain(row)
                .map(f64::to_string)
                .collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn read_csv<R: io::BufRead>(mut reader: R) -> Result<QuantileTable> {
        let mut meta = String::new();
        reader
            .read_line(&mut meta)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let meta = meta
            .trim()
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing metadata line".into()))?;
        let (m_part, matcher) = meta
            .split_once(" matcher=")
            .ok_or_else(|| Error::Parse("missing matcher".into()))?;
        let m_cal = m_part
            .strip_prefix("m_cal=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("missing m_cal".into()))?;
        let mut rdr = csv::Reader::from_reader(reader);
        let parse_err = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
        let header = rdr.headers().map_err(|e| parse_err(&e))?.clone();
        let k = header
            .iter()
            .filter(|h| h.starts_with("theta_star_"))
            .count();
        let levels = header
            .iter()
            .skip(k)
            .map(parse_level)
            .collect::<Result<Vec<_>>>()?;
        let mut probes = Vec::new();
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err(&e))?;
            let values = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(&e)))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != k + levels.len() {
                return Err(Error::Parse("ragged quantile table row".into()));
            }
            probes.push(Parameter::new(values[..k].to_vec())?);
            entries.push(values[k..].to_vec());
        }
        if probes.is_empty() {
            return Err(Error::Parse("quantile table has no rows".into()));
        }
        Ok(QuantileTable {
            probes,
            levels,
            entries,
            m_cal,
            matcher: matcher.to_string(),
        })
    }
}

/// Reads `(epsilon_n, alpha_n)` at the given probe and level.
pub fn select_tolerance(
    table: &QuantileTable,
    target_alpha: f64,
    probe: &Parameter,
) -> Result<ToleranceChoice> {
    let i = table.probe_index(probe)?;
    let j = table.level_index(target_alpha)?;
    Ok(ToleranceChoice {
        epsilon_n: table.entries[i][j],
        alpha_n: table.levels[j],
        probe_used: table.probes[i].clone(),
    })
}

/// Uses the probe farthest from `base` whose parameter distance is within
/// `max_distance`, the discrepancy the caller is willing to accept.
pub fn select_tolerance_auto(
    table: &QuantileTable,
    target_alpha: f64,
    base: &Parameter,
    max_distance: f64,
) -> Result<ToleranceChoice> {
    let probe = table
        .probes
        .iter()
        .filter(|p| p.dim() == base.dim() && p.distance(base) <= max_distance + 1e-12)
        .max_by(|a, b| a.distance(base).total_cmp(&b.distance(base)))
        .ok_or_else(|| Error::Lookup(format!("no probe within {max_distance} of {base}")))?;
    select_tolerance(table, target_alpha, probe)
}
