//! Reproducible simulation studies.
//!
//! Each experiment is a pure function of its [`ExperimentConfig`], whose
//! master seed fixes every random draw. Repetitions, arms and retries take
//! child substreams derived from that seed, so results do not depend on the
//! thread count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    build_quantile_table, select_tolerance, standardized_probes, validate_levels, QuantileTable,
    DEFAULT_LEVELS,
};
use crate::empirical::{sample_directions, MatchSpec, Matcher, Sample};
use crate::error::{Error, Result};
use crate::inference::{
    abc_reject, extend_abc_to_fabc, fabc, summarize, ExtendScope, FabcMode, FabcOptions, Posterior,
    PosteriorStatus, SummaryStats, Weighting,
};
use crate::model::{BivariateNormal, GenerativeModel, Model, Normal1D, Parameter, Prior};
use crate::stream::Streams;

const LABEL_CALIBRATION: u64 = 1;
/// Child stream of the master seed that feeds candidate draws and their
/// pseudo-samples.
pub const LABEL_CANDIDATES: u64 = 2;
const LABEL_PARAMETRIC: u64 = 3;
const LABEL_BASELINE: u64 = 4;
const LABEL_PAIR: u64 = 100;
const LABEL_RETRY: u64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Table1,
    Table2,
    Table34,
    MseRace,
    Bivariate,
    Custom,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Table1,
        ExperimentId::Table2,
        ExperimentId::Table34,
        ExperimentId::MseRace,
        ExperimentId::Bivariate,
        ExperimentId::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Table1 => "table1",
            ExperimentId::Table2 => "table2",
            ExperimentId::Table34 => "table34",
            ExperimentId::MseRace => "mse-race",
            ExperimentId::Bivariate => "bivariate",
            ExperimentId::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Where the observed sample comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservedSource {
    /// A fresh draw from `F_theta`.
    Simulated,
    /// A fresh draw rescaled so each column has mean `theta_j` and the
    /// model's standard deviation.
    Standardized,
    /// The quantiles of `F_theta` at `(i + 1/2) / n`; 1-D normal only.
    Quantiles,
    /// A headerless or headed numeric CSV, one row per observation.
    File { path: PathBuf },
}

/// What F-ABC is raced against in `mse-race`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Rejection ABC on the sample mean.
    Parametric,
    /// An independent F-ABC run; the symmetric null.
    FabcSelected,
}

/// Everything an experiment needs. Fields unused by an experiment are
/// carried along so one schema serves all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seed: u64,
    pub model: Model,
    /// The true parameter; also the calibration base value.
    pub theta: Vec<f64>,
    pub prior: Prior,
    pub observed: ObservedSource,
    /// Sample size of observed and pseudo-samples.
    pub n: usize,
    /// Pseudo-samples per candidate.
    pub m: usize,
    /// Candidates drawn from the prior.
    pub n_star: usize,
    /// Tolerance of the distribution-based matcher.
    pub epsilon: f64,
    /// Tolerance of the sample-mean matcher.
    pub epsilon_par: f64,
    pub alpha: f64,
    pub mode: FabcMode,
    /// Projection directions for samples of dimension two or more.
    pub directions: usize,
    pub repetitions: usize,
    pub runs: usize,
    pub comparisons: usize,
    pub max_retries: usize,
    pub baseline: Baseline,
    pub m_cal: usize,
    /// Probe spacing in model standard deviations.
    pub probe_step: f64,
    /// Probes beyond the base value.
    pub probe_count: usize,
    pub levels: Vec<f64>,
    /// `(epsilon, epsilon_par)` pairs.
    pub pairs: Vec<[f64; 2]>,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let base = ExperimentConfig {
            id,
            seed: 1,
            model: Model::Normal(Normal1D::default()),
            theta: vec![0.0],
            prior: Prior::UniformBox {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
            observed: ObservedSource::Simulated,
            n: 100,
            m: 200,
            n_star: 1000,
            epsilon: 0.14,
            epsilon_par: 0.15,
            alpha: 0.9,
            mode: FabcMode::Filtered,
            directions: 50,
            repetitions: 1,
            runs: 10,
            comparisons: 100,
            max_retries: 3,
            baseline: Baseline::Parametric,
            m_cal: 500,
            probe_step: 0.5,
            probe_count: 8,
            levels: DEFAULT_LEVELS.to_vec(),
            pairs: vec![[0.12, 0.1], [0.25, 0.5], [0.30, 0.6], [0.45, 1.0]],
        };
        match id {
            ExperimentId::Table1 => ExperimentConfig {
                observed: ObservedSource::Quantiles,
                repetitions: 5,
                ..base
            },
            ExperimentId::Table2 => ExperimentConfig {
                observed: ObservedSource::Standardized,
                repetitions: 20,
                ..base
            },
            ExperimentId::Table34 => ExperimentConfig {
                observed: ObservedSource::Standardized,
                n: 200,
                epsilon: 0.12,
                ..base
            },
            ExperimentId::MseRace => ExperimentConfig {
                observed: ObservedSource::Standardized,
                m: 100,
                n_star: 100,
                epsilon: 0.12,
                ..base
            },
            ExperimentId::Bivariate => ExperimentConfig {
                model: Model::Bivariate(BivariateNormal::default()),
                theta: vec![0.0, 2.0],
                prior: Prior::Grid {
                    points_per_axis: vec![15, 15],
                    lower: vec![-1.0, -2.0],
                    upper: vec![2.0, 3.0],
                },
                n: 50,
                epsilon: 0.33,
                ..base
            },
            ExperimentId::Custom => base,
        }
    }

    /// Full-size MSE race: 50 runs of 1000 comparisons.
    pub fn paper_scale(mut self) -> Self {
        if self.id == ExperimentId::MseRace {
            self.runs = 50;
            self.comparisons = 1000;
        }
        self
    }

    /// Parses a TOML document. Keys it omits take the defaults of its `id`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let id = match table.get("id") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("`id` must be a string".into())),
            None => return Err(Error::Config("config must name an experiment `id`".into())),
        };
        let mut merged = Self::defaults(id).to_table()?;
        merge(&mut merged, table);
        Self::from_table(merged)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value`, where `key` may be dotted (`model.sd`) and
    /// `value` is a TOML literal or a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let mut next = self.clone();
        next.assign(assignment)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Like [`set`](Self::set) but only checks that the value has the right
    /// type, so several related keys can change before [`validate`](Self::validate).
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value = parse_literal(raw.trim());
        let mut table = self.to_table()?;
        let mut path: Vec<&str> = key.trim().split('.').collect();
        let last = path
            .pop()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config("empty key".into()))?;
        let mut cursor = &mut table;
        for part in path {
            cursor = match cursor.get_mut(part) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(Error::Config(format!("{key}: {part} is not a table"))),
            };
        }
        if !cursor.contains_key(last) {
            return Err(Error::Config(format!("unknown key {key}")));
        }
        cursor.insert(last.to_string(), value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("n", self.n),
            ("m", self.m),
            ("n_star", self.n_star),
            ("repetitions", self.repetitions),
            ("runs", self.runs),
            ("comparisons", self.comparisons),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.m_cal < 2 {
            return bad("m_cal must be at least 2".into());
        }
        for (name, v) in [("epsilon", self.epsilon), ("epsilon_par", self.epsilon_par)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.probe_step.is_finite() && self.probe_step > 0.0) {
            return bad("probe_step must be positive".into());
        }
        if self.pairs.is_empty()
            || self
                .pairs
                .iter()
                .flatten()
                .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("pairs must be non-empty with non-negative tolerances".into());
        }
        if self.model.dim() > 1 && self.directions == 0 {
            return bad("multivariate matching needs at least one direction".into());
        }
        let theta = self.theta_parameter()?;
        self.model.check_parameter(&theta)?;
        if self.prior.dim() != self.model.param_dim() {
            return bad(format!(
                "prior has dimension {}, model expects {}",
                self.prior.dim(),
                self.model.param_dim()
            ));
        }
        self.prior.validate()?;
        if self.observed == ObservedSource::Quantiles && !matches!(self.model, Model::Normal(_)) {
            return bad("quantile observations are available for the normal model only".into());
        }
        validate_levels(&self.levels)
    }

    pub fn theta_parameter(&self) -> Result<Parameter> {
        Parameter::new(self.theta.clone()).map_err(|e| Error::Config(format!("theta: {e}")))
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Deep merge; a table that names a different variant tag replaces the
/// default wholesale.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let retagged = ["kind", "family"]
                    .iter()
                    .any(|tag| o.get(*tag).is_some_and(|t| b.get(*tag) != Some(t)));
                if retagged {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Outcome of one posterior in one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub epsilon: f64,
    pub weighting: Weighting,
    pub drawn: usize,
    pub selected: usize,
    pub status: PosteriorStatus,
    pub summary: Option<SummaryStats>,
}

impl ArmResult {
    fn from_posterior(
        arm: &str,
        posterior: &Posterior,
        theta: &Parameter,
        weighting: Weighting,
    ) -> Result<Self> {
        let summary = match summarize(posterior, theta, weighting) {
            Ok(s) => Some(s),
            Err(Error::EmptySupport) => None,
            Err(e) => return Err(e),
        };
        Ok(ArmResult {
            arm: arm.to_string(),
            epsilon: posterior.epsilon,
            weighting,
            drawn: posterior.atoms.len(),
            selected: posterior.selected_count(),
            status: posterior.status(),
            summary,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    /// Attempts used, retries included.
    pub attempts: usize,
    pub arms: Vec<ArmResult>,
}

/// Averages of an arm over the repetitions in which it had support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmAggregate {
    pub arm: String,
    pub epsilon: f64,
    pub runs: usize,
    pub selected: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceResult {
    /// Per run, the comparisons in which F-ABC had the smaller MSE.
    pub t: Vec<usize>,
    pub comparisons: usize,
    /// Per run, comparisons abandoned after exhausting the retries.
    pub non_terminations: Vec<usize>,
    pub runs_above_half: usize,
    pub fraction_above_half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionResult>,
    pub aggregate: Vec<ArmAggregate>,
    /// Seed-averaged quantile table (table1).
    pub table: Option<QuantileTable>,
    pub replicate_tables: Vec<QuantileTable>,
    pub race: Option<RaceResult>,
    pub non_terminations: usize,
    /// Wall-clock seconds, only when the caller asks for it.
    pub elapsed_seconds: Option<f64>,
    /// The posterior behind `atoms.csv`, when the experiment produces one.
    #[serde(skip)]
    pub posterior: Option<Posterior>,
}

impl RunReport {
    fn new(config: &ExperimentConfig) -> Self {
        RunReport {
            config: config.clone(),
            repetitions: Vec::new(),
            aggregate: Vec::new(),
            table: None,
            replicate_tables: Vec::new(),
            race: None,
            non_terminations: 0,
            elapsed_seconds: None,
            posterior: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn aggregate_for(&self, arm: &str, epsilon: f64) -> Option<&ArmAggregate> {
        self.aggregate
            .iter()
            .find(|a| a.arm == arm && a.epsilon == epsilon)
    }

    /// Writes `report.json` and, when present, `table.csv` and `atoms.csv`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        let report = dir.join("report.json");
        fs::write(&report, self.to_json()? + "\n").map_err(io)?;
        written.push(report);
        if let Some(table) = &self.table {
            let path = dir.join("table.csv");
            table.write_csv(fs::File::create(&path).map_err(io)?)?;
            written.push(path);
        }
        if let Some(posterior) = &self.posterior {
            let path = dir.join("atoms.csv");
            posterior.write_atoms_csv(fs::File::create(&path).map_err(io)?)?;
            written.push(path);
        }
        Ok(written)
    }

    fn aggregate_arms(&mut self) {
        type Group<'a> = (String, f64, Vec<(usize, &'a SummaryStats)>);
        let mut groups: Vec<Group> = Vec::new();
        for rep in &self.repetitions {
            for arm in &rep.arms {
                let Some(summary) = &arm.summary else {
                    continue;
                };
                match groups
                    .iter_mut()
                    .find(|g| g.0 == arm.arm && g.1 == arm.epsilon)
                {
                    Some(g) => g.2.push((arm.selected, summary)),
                    None => {
                        groups.push((arm.arm.clone(), arm.epsilon, vec![(arm.selected, summary)]))
                    }
                }
            }
        }
        self.aggregate = groups
            .into_iter()
            .map(|(arm, epsilon, items)| {
                let k = items.len() as f64;
                let dim = items[0].1.mean.len();
                let avg = |f: &dyn Fn(&SummaryStats) -> f64| {
                    items.iter().map(|(_, s)| f(s)).sum::<f64>() / k
                };
                ArmAggregate {
                    arm,
                    epsilon,
                    runs: items.len(),
                    selected: items.iter().map(|(c, _)| *c as f64).sum::<f64>() / k,
                    mean: (0..dim).map(|j| avg(&|s| s.mean[j])).collect(),
                    variance: (0..dim).map(|j| avg(&|s| s.variance[j])).collect(),
                    mse: avg(&|s| s.mse),
                }
            })
            .collect();
    }
}

/// The observed sample prescribed by `config.observed`.
pub fn observed_sample(config: &ExperimentConfig, streams: &Streams) -> Result<Sample> {
    let theta = config.theta_parameter()?;
    let model = &config.model;
    match &config.observed {
        ObservedSource::Simulated => model.simulate(&theta, config.n, &mut streams.observed()),
        ObservedSource::Standardized => {
            let x = model.simulate(&theta, config.n, &mut streams.observed())?;
            standardize(&x, &theta, &model.marginal_sd())
        }
        ObservedSource::Quantiles => match model {
            Model::Normal(m) => m.quantile_sample(&theta, config.n),
            Model::Bivariate(_) => Err(Error::Config(
                "quantile observations need the normal model".into(),
            )),
        },
        ObservedSource::File { path } => {
            let file =
                fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let x = Sample::read_csv(file)?;
            if x.dim() != model.dim() {
                return Err(Error::DimensionMismatch {
                    left: model.dim(),
                    right: x.dim(),
                });
            }
            Ok(x)
        }
    }
}

fn standardize(x: &Sample, center: &Parameter, sd: &[f64]) -> Result<Sample> {
    let (n, d) = (x.len(), x.dim());
    if n < 2 {
        return Err(Error::Config(
            "standardizing needs at least two observations".into(),
        ));
    }
    let mean = x.mean();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let ss: f64 = x.rows().map(|r| (r[j] - mean[j]).powi(2)).sum();
            sd[j] / (ss / (n - 1) as f64).sqrt()
        })
        .collect();
    let data = x
        .rows()
        .flat_map(|r| {
            (0..d)
                .map(|j| center[j] + (r[j] - mean[j]) * scale[j])
                .collect::<Vec<_>>()
        })
        .collect();
    Sample::new(data, n, d)
}

/// Kolmogorov matching in 1-D, projected matching with `directions` random
/// directions otherwise.
pub fn distribution_matcher(config: &ExperimentConfig, streams: &Streams) -> Result<Matcher> {
    match config.model.dim() {
        1 => Ok(Matcher::Ks1d),
        d => Ok(Matcher::ProjectedTv {
            directions: sample_directions(d, config.directions, &mut streams.directions())?,
        }),
    }
}

fn parametric_spec(config: &ExperimentConfig, epsilon: f64) -> Result<MatchSpec> {
    MatchSpec::new(
        Matcher::ParametricAbs {
            reference: config.theta.clone(),
        },
        epsilon,
    )
}

fn attempt_streams(base: &Streams, attempt: usize) -> Streams {
    if attempt == 0 {
        *base
    } else {
        base.derive(LABEL_RETRY + attempt as u64)
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    match config.id {
        ExperimentId::Table1 => run_table1(config).map(|(_, report)| report),
        ExperimentId::Table2 => run_table2(config),
        ExperimentId::Table34 => run_table34(config),
        ExperimentId::MseRace => run_mse_race(config),
        ExperimentId::Bivariate => run_bivariate(config),
        ExperimentId::Custom => run_custom(config),
    }
}

/// Distance quantiles at probes `theta + k * step * sd`, averaged over the
/// repetitions.
pub fn run_table1(config: &ExperimentConfig) -> Result<(QuantileTable, RunReport)> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let probes = standardized_probes(
        &theta,
        config.model.marginal_sd()[0],
        config.probe_step,
        config.probe_count,
    )?;
    let tables = (0..config.repetitions)
        .map(|r| {
            let streams = master.derive(r as u64);
            let x = observed_sample(config, &streams)?;
            let matcher = distribution_matcher(config, &streams)?;
            build_quantile_table(
                &config.model,
                &x,
                &probes,
                config.m_cal,
                &matcher,
                &config.levels,
                &streams.derive(LABEL_CALIBRATION),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let table = QuantileTable::average(&tables)?;
    let mut report = RunReport::new(config);
    report.table = Some(table.clone());
    report.replicate_tables = tables;
    Ok((table, report))
}

/// Rejection ABC with the Kolmogorov matcher against rejection ABC on the
/// sample mean, for every tolerance pair.
pub fn run_table2(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let mut report = RunReport::new(config);
    for r in 0..config.repetitions {
        let streams = master.derive(r as u64);
        let x = observed_sample(config, &streams)?;
        let matcher = distribution_matcher(config, &streams)?;
        let mut arms = Vec::new();
        for (k, [eps, eps_par]) in config.pairs.iter().enumerate() {
            let pair = streams.derive(LABEL_PAIR + k as u64);
            let spec = MatchSpec::new(matcher.clone(), *eps)?;
            let nonpar = abc_reject(
                &config.model,
                &config.prior,
                &x,
                &spec,
                config.n_star,
                &pair.derive(LABEL_CANDIDATES),
            )?;
            let par = abc_reject(
                &config.model,
                &config.prior,
                &x,
                &parametric_spec(config, *eps_par)?,
                config.n_star,
                &pair.derive(LABEL_PARAMETRIC),
            )?;
            arms.push(ArmResult::from_posterior(
                "nonparametric-abc",
                &nonpar,
                &theta,
                Weighting::Unweighted,
            )?);
            arms.push(ArmResult::from_posterior(
                "parametric-abc",
                &par,
                &theta,
                Weighting::Unweighted,
            )?);
        }
        report.non_terminations += arms.iter().filter(|a| a.summary.is_none()).count();
        report.repetitions.push(RepetitionResult {
            repetition: r,
            attempts: 1,
            arms,
        });
    }
    report.aggregate_arms();
    Ok(report)
}

struct Table34Outcome {
    arms: Vec<ArmResult>,
    attempts: usize,
    all: Option<Posterior>,
}

fn table34_repetition(
    config: &ExperimentConfig,
    streams: &Streams,
    theta: &Parameter,
) -> Result<Table34Outcome> {
    for attempt in 0..=config.max_retries {
        let s = attempt_streams(streams, attempt);
        let x = observed_sample(config, &s)?;
        let spec = MatchSpec::new(distribution_matcher(config, &s)?, config.epsilon)?;
        let candidates = s.derive(LABEL_CANDIDATES);
        let abc = abc_reject(
            &config.model,
            &config.prior,
            &x,
            &spec,
            config.n_star,
            &candidates,
        )?;
        if abc.status() == PosteriorStatus::EmptySelection {
            continue;
        }
        let selected = extend_abc_to_fabc(
            &config.model,
            &abc,
            &x,
            &spec,
            config.m,
            ExtendScope::Selected,
            &candidates,
        )?;
        let all = extend_abc_to_fabc(
            &config.model,
            &abc,
            &x,
            &spec,
            config.m,
            ExtendScope::All,
            &candidates,
        )?;
        let par = abc_reject(
            &config.model,
            &config.prior,
            &x,
            &parametric_spec(config, config.epsilon_par)?,
            config.n_star,
            &s.derive(LABEL_PARAMETRIC),
        )?;
        let arms = vec![
            ArmResult::from_posterior("nonparametric-abc", &abc, theta, Weighting::Unweighted)?,
            ArmResult::from_posterior(
                "fabc-selected",
                &selected,
                theta,
                Weighting::PMatchWeighted,
            )?,
            ArmResult::from_posterior("fabc-all", &all, theta, Weighting::PMatchWeighted)?,
            ArmResult::from_posterior("parametric-abc", &par, theta, Weighting::Unweighted)?,
        ];
        return Ok(Table34Outcome {
            arms,
            attempts: attempt + 1,
            all: Some(all),
        });
    }
    Ok(Table34Outcome {
        arms: Vec::new(),
        attempts: config.max_retries + 1,
        all: None,
    })
}

/// Rejection ABC, its extension to F-ABC on the accepted and on all
/// candidates, and rejection ABC on the sample mean.
pub fn run_table34(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let mut report = RunReport::new(config);
    let outcomes = (0..config.repetitions)
        .into_par_iter()
        .map(|r| table34_repetition(config, &master.derive(r as u64), &theta))
        .collect::<Result<Vec<_>>>()?;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        if outcome.arms.is_empty() {
            report.non_terminations += 1;
        }
        if outcome.all.is_some() {
            report.posterior = outcome.all;
        }
        report.repetitions.push(RepetitionResult {
            repetition: r,
            attempts: outcome.attempts,
            arms: outcome.arms,
        });
    }
    report.aggregate_arms();
    Ok(report)
}

fn fabc_selected_mse(
    config: &ExperimentConfig,
    x: &Sample,
    streams: &Streams,
    theta: &Parameter,
) -> Result<Option<f64>> {
    let spec = MatchSpec::new(distribution_matcher(config, streams)?, config.epsilon)?;
    let abc = abc_reject(
        &config.model,
        &config.prior,
        x,
        &spec,
        config.n_star,
        streams,
    )?;
    if abc.status() == PosteriorStatus::EmptySelection {
        return Ok(None);
    }
    let ext = extend_abc_to_fabc(
        &config.model,
        &abc,
        x,
        &spec,
        config.m,
        ExtendScope::Selected,
        streams,
    )?;
    Ok(Some(summarize(&ext, theta, Weighting::PMatchWeighted)?.mse))
}

fn baseline_mse(
    config: &ExperimentConfig,
    x: &Sample,
    streams: &Streams,
    theta: &Parameter,
) -> Result<Option<f64>> {
    match config.baseline {
        Baseline::FabcSelected => fabc_selected_mse(config, x, streams, theta),
        Baseline::Parametric => {
            let spec = parametric_spec(config, config.epsilon_par)?;
            let post = abc_reject(
                &config.model,
                &config.prior,
                x,
                &spec,
                config.n_star,
                streams,
            )?;
            match summarize(&post, theta, Weighting::Unweighted) {
                Ok(s) => Ok(Some(s.mse)),
                Err(Error::EmptySupport) => Ok(None),
                Err(e) => Err(e),
            }
        }
    }
}

/// One comparison: `Some(true)` when F-ABC wins, `None` when every attempt
/// left an arm without support.
fn race_comparison(
    config: &ExperimentConfig,
    streams: &Streams,
    theta: &Parameter,
) -> Result<Option<bool>> {
    for attempt in 0..=config.max_retries {
        let s = attempt_streams(streams, attempt);
        let x = observed_sample(config, &s)?;
        let Some(fabc_mse) = fabc_selected_mse(config, &x, &s.derive(LABEL_CANDIDATES), theta)?
        else {
            continue;
        };
        let Some(base_mse) = baseline_mse(config, &x, &s.derive(LABEL_BASELINE), theta)? else {
            continue;
        };
        return Ok(Some(fabc_mse < base_mse));
    }
    Ok(None)
}

/// `runs` independent runs of `comparisons` MSE comparisons each; a fresh
/// observed sample is drawn for every comparison.
pub fn run_mse_race(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let mut t = Vec::with_capacity(config.runs);
    let mut non_terminations = Vec::with_capacity(config.runs);
    for r in 0..config.runs {
        let run_streams = master.derive(r as u64);
        let outcomes = (0..config.comparisons)
            .into_par_iter()
            .map(|c| race_comparison(config, &run_streams.derive(c as u64), &theta))
            .collect::<Result<Vec<_>>>()?;
        t.push(outcomes.iter().filter(|o| **o == Some(true)).count());
        non_terminations.push(outcomes.iter().filter(|o| o.is_none()).count());
    }
    let runs_above_half = t.iter().filter(|&&v| 2 * v > config.comparisons).count();
    let mut report = RunReport::new(config);
    report.non_terminations = non_terminations.iter().sum();
    report.race = Some(RaceResult {
        t,
        comparisons: config.comparisons,
        non_terminations,
        runs_above_half,
        fraction_above_half: runs_above_half as f64 / config.runs as f64,
    });
    Ok(report)
}

/// Grid posterior for a bivariate sample: rejection ABC and its extension
/// to all grid points, sharing one set of directions.
pub fn run_bivariate(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let mut report = RunReport::new(config);
    for r in 0..config.repetitions {
        let streams = master.derive(r as u64);
        let x = observed_sample(config, &streams)?;
        let spec = MatchSpec::new(distribution_matcher(config, &streams)?, config.epsilon)?;
        let candidates = streams.derive(LABEL_CANDIDATES);
        let abc = abc_reject(
            &config.model,
            &config.prior,
            &x,
            &spec,
            config.n_star,
            &candidates,
        )?;
        let all = extend_abc_to_fabc(
            &config.model,
            &abc,
            &x,
            &spec,
            config.m,
            ExtendScope::All,
            &candidates,
        )?;
        let arms = vec![
            ArmResult::from_posterior("abc", &abc, &theta, Weighting::Unweighted)?,
            ArmResult::from_posterior("fabc-all", &all, &theta, Weighting::PMatchWeighted)?,
        ];
        report.non_terminations += arms.iter().filter(|a| a.summary.is_none()).count();
        report.repetitions.push(RepetitionResult {
            repetition: r,
            attempts: 1,
            arms,
        });
        report.posterior = Some(all);
    }
    report.aggregate_arms();
    Ok(report)
}

/// A single F-ABC run with the configured model, prior and tolerance.
pub fn run_custom(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    let mut report = RunReport::new(config);
    for r in 0..config.repetitions {
        let streams = master.derive(r as u64);
        let x = observed_sample(config, &streams)?;
        let spec = MatchSpec::new(distribution_matcher(config, &streams)?, config.epsilon)?;
        let options = FabcOptions {
            m: config.m,
            n_star: config.n_star,
            alpha: config.alpha,
            mode: config.mode,
        };
        let post = fabc(
            &config.model,
            &config.prior,
            &x,
            &spec,
            &options,
            &streams.derive(LABEL_CANDIDATES),
        )?;
        let arm = ArmResult::from_posterior("fabc", &post, &theta, Weighting::PMatchWeighted)?;
        if arm.summary.is_none() {
            report.non_terminations += 1;
        }
        report.repetitions.push(RepetitionResult {
            repetition: r,
            attempts: 1,
            arms: vec![arm],
        });
        report.posterior = Some(post);
    }
    report.aggregate_arms();
    Ok(report)
}

/// Spread of the all-candidate posterior at one sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub n: usize,
    /// Tolerance read at level `alpha` of the distances at the true parameter.
    pub epsilon: f64,
    pub variance: Vec<f64>,
}

/// Recalibrates the tolerance for each sample size and reports the
/// `p_match`-weighted variance of the for-all posterior.
pub fn concentration_trend(
    config: &ExperimentConfig,
    sizes: &[usize],
) -> Result<Vec<ConcentrationPoint>> {
    config.validate()?;
    let master = Streams::new(config.seed);
    let theta = config.theta_parameter()?;
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut sized = config.clone();
            sized.n = n;
            let streams = master.derive(i as u64);
            let x = observed_sample(&sized, &streams)?;
            let matcher = distribution_matcher(&sized, &streams)?;
            let table = build_quantile_table(
                &sized.model,
                &x,
                std::slice::from_ref(&theta),
                sized.m_cal,
                &matcher,
                &[sized.alpha],
                &streams.derive(LABEL_CALIBRATION),
            )?;
            let epsilon = select_tolerance(&table, sized.alpha, &theta)?.epsilon_n;
            let options = FabcOptions {
                m: sized.m,
                n_star: sized.n_star,
                alpha: 0.0,
                mode: FabcMode::ForAll,
            };
            let spec = MatchSpec::new(matcher, epsilon)?;
            let post = fabc(
                &sized.model,
                &sized.prior,
                &x,
                &spec,
                &options,
                &streams.derive(LABEL_CANDIDATES),
            )?;
            let stats = summarize(&post, &theta, Weighting::PMatchWeighted)?;
            Ok(ConcentrationPoint {
                n,
                epsilon,
                variance: stats.variance,
            })
        })
        .collect()
}
