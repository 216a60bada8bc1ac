//! Experiment specifications, sweeps over replications, and result tables.

mod suites;

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{derive_seed, DistributionSpec};
use crate::error::{ConfigError, SimError};
use crate::metrics::{
    age_trajectory, average_peak_age, lower_bound_trajectory, penalty_average, throughput_delay, time_average_age,
    Penalty,
};
use crate::policies::PolicyDescriptor;
use crate::sim::{
    generate_workload, run_simulation, run_simulation_with, BufferSize, RunOptions, StreamServiceTimes, SystemConfig,
    Trace,
};
use crate::verification::mean_se;

pub use suites::{run_verification_suite, SuiteReport, SuiteScale, SUITES};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed for seed {seed} ({config}): {source}")]
    Runtime {
        seed: u64,
        config: String,
        source: SimError,
    },
    #[error("metric evaluation failed: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) | Self::Config(_) => 2,
            Self::Runtime { .. } | Self::Metric(_) | Self::Io(_) | Self::Csv(_) => 1,
        }
    }
}

/// Quantity measured per replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricSpec {
    TimeAvg,
    AvgPeak,
    Penalty(Penalty),
    LbTimeAvg,
    Throughput,
    AvgDelay,
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TimeAvg => f.write_str("time_avg"),
            Self::AvgPeak => f.write_str("avg_peak"),
            Self::LbTimeAvg => f.write_str("lb_time_avg"),
            Self::Throughput => f.write_str("throughput"),
            Self::AvgDelay => f.write_str("avg_delay"),
            Self::Penalty(Penalty::Identity) => f.write_str("penalty(identity)"),
            Self::Penalty(Penalty::Floor) => f.write_str("penalty(floor)"),
            Self::Penalty(Penalty::Exp) => f.write_str("penalty(exp)"),
            Self::Penalty(Penalty::Indicator { threshold }) => write!(f, "penalty(indicator,d={threshold})"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || ConfigError::Invalid(format!("unknown metric `{s}`"));
        Ok(match compact.as_str() {
            "time_avg" => Self::TimeAvg,
            "avg_peak" => Self::AvgPeak,
            "lb_time_avg" => Self::LbTimeAvg,
            "throughput" => Self::Throughput,
            "avg_delay" => Self::AvgDelay,
            "penalty(identity)" => Self::Penalty(Penalty::Identity),
            "penalty(floor)" => Self::Penalty(Penalty::Floor),
            "penalty(exp)" => Self::Penalty(Penalty::Exp),
            other => {
                let d = other
                    .strip_prefix("penalty(indicator,d=")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .ok_or_else(bad)?;
                let threshold: f64 = d.parse().map_err(|_| bad())?;
                if !threshold.is_finite() {
                    return Err(bad());
                }
                Self::Penalty(Penalty::Indicator { threshold })
            }
        })
    }
}

impl<'de> Deserialize<'de> for MetricSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for MetricSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rho,
    GammaK,
    R,
    Buffer,
}

/// A point on the sweep axis; `"inf"` is only meaningful for `buffer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(InfText),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfText {
    #[serde(rename = "inf")]
    Inf,
}

impl SweepValue {
    /// The numeric value, or `None` for `"inf"`.
    pub fn as_f64(self) -> Option<f64> {
        match self {
            Self::Number(x) => Some(x),
            Self::Text(_) => None,
        }
    }

    fn seed_word(self) -> u64 {
        match self {
            Self::Number(x) => x.to_bits(),
            Self::Text(_) => u64::MAX,
        }
    }
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(x) => write!(f, "{x}"),
            Self::Text(_) => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub name: PolicyDescriptor,
    /// Replication degrees to run; defaults to the base `r`.
    #[serde(default)]
    pub r: Option<Vec<usize>>,
    /// Buffer sizes to run; defaults to the base `buffer`.
    #[serde(default)]
    pub buffer: Option<Vec<BufferSize>>,
}

fn default_r() -> usize {
    1
}

fn default_buffer() -> BufferSize {
    BufferSize::Infinite
}

fn default_generation() -> DistributionSpec {
    DistributionSpec::Exponential { rate: 1.0 }
}

fn default_delay() -> DistributionSpec {
    DistributionSpec::Constant { value: 0.0 }
}

fn default_replications() -> usize {
    20
}

/// A parsed experiment document. See `presets/*.toml` for examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub m: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_buffer")]
    pub buffer: BufferSize,
    pub service: DistributionSpec,
    #[serde(default = "default_generation")]
    pub generation: DistributionSpec,
    #[serde(default = "default_delay")]
    pub arrival_delay: DistributionSpec,
    /// Traffic intensity `λ/(mμ)`; rescales the generation law when set.
    #[serde(default)]
    pub rho: Option<f64>,
    pub sweep: Sweep,
    pub policies: Vec<PolicyEntry>,
    pub metrics: Vec<MetricSpec>,
}

/// One (sweep point, policy, r, B) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub sweep_value: SweepValue,
    pub policy: PolicyDescriptor,
    /// `seed` is the cell's base seed; replication `k` uses
    /// `derive_seed([seed, k])`.
    pub config: SystemConfig,
}

impl Cell {
    pub fn replication_config(&self, replication: usize) -> SystemConfig {
        self.config
            .clone()
            .with_seed(derive_seed(&[self.config.seed, replication as u64]))
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file, or one of the shipped presets by name.
    pub fn load(name_or_path: &str) -> Result<Self, HarnessError> {
        let path = Path::new(name_or_path);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            return Self::parse(&text).map_err(|e| match e {
                HarnessError::Parse(msg) => HarnessError::Parse(format!("{}: {msg}", path.display())),
                other => other,
            });
        }
        match preset(name_or_path) {
            Some(text) => Self::parse(text),
            None => Err(HarnessError::Parse(format!(
                "`{name_or_path}` is neither a readable file nor a preset ({})",
                PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.replications == 0 {
            return invalid("replications must be at least 1".into());
        }
        if self.sweep.values.is_empty() {
            return invalid("sweep.values must not be empty".into());
        }
        if self.policies.is_empty() {
            return invalid("at least one policy is required".into());
        }
        if self.metrics.is_empty() {
            return invalid("at least one metric is required".into());
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return invalid(format!("rho must be positive, got {rho}"));
            }
        }
        for e in &self.policies {
            if matches!(&e.r, Some(v) if v.is_empty()) || matches!(&e.buffer, Some(v) if v.is_empty()) {
                return invalid(format!("policy `{}` has an empty r or buffer list", e.name));
            }
        }
        self.cells().map(|_| ())
    }

    fn point_config(&self, value: SweepValue) -> Result<SystemConfig, ConfigError> {
        let mut config = SystemConfig {
            m: self.m,
            r: self.r,
            buffer: self.buffer,
            service: self.service,
            generation: self.generation,
            arrival_delay: self.arrival_delay,
            horizon: self.horizon,
            seed: derive_seed(&[self.seed, value.seed_word()]),
        };
        let number = |axis: &str| match value {
            SweepValue::Number(x) => Ok(x),
            SweepValue::Text(_) => Err(ConfigError::Invalid(format!("`inf` is not a valid {axis} value"))),
        };
        let count = |axis: &str| {
            let x = number(axis)?;
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(ConfigError::Invalid(format!(
                    "{axis} values must be non-negative integers, got {x}"
                )))
            }
        };
        let mut rho = self.rho;
        match self.sweep.axis {
            SweepAxis::Rho => rho = Some(number("rho")?),
            SweepAxis::GammaK => {
                let k = number("gamma_k")?;
                config.service = DistributionSpec::gamma_mean(k, self.service.mean())?;
            }
            SweepAxis::R => config.r = count("r")?,
            SweepAxis::Buffer => {
                config.buffer = match value {
                    SweepValue::Text(_) => BufferSize::Infinite,
                    SweepValue::Number(_) => BufferSize::Finite(count("buffer")?),
                }
            }
        }
        if let Some(rho) = rho {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(ConfigError::Invalid(format!("rho must be positive, got {rho}")));
            }
            // λ = ρ·m·μ irrespective of r
            let mean = self.service.mean() / (rho * self.m as f64);
            config.generation = self.generation.with_mean(mean)?;
        }
        Ok(config)
    }

    /// All cells in output order: sweep values, then policies as listed,
    /// then `r`, then `B`.
    pub fn cells(&self) -> Result<Vec<Cell>, ConfigError> {
        let mut cells = Vec::new();
        for &value in &self.sweep.values {
            let base = self.point_config(value)?;
            for entry in &self.policies {
                let rs = match (&entry.r, self.sweep.axis) {
                    (_, SweepAxis::R) | (None, _) => vec![base.r],
                    (Some(rs), _) => rs.clone(),
                };
                let buffers = match (&entry.buffer, self.sweep.axis) {
                    (_, SweepAxis::Buffer) | (None, _) => vec![base.buffer],
                    (Some(bs), _) => bs.clone(),
                };
                for &r in &rs {
                    for &buffer in &buffers {
                        let config = base.clone().with_replication(r).with_buffer(buffer).validated()?;
                        entry.name.check(&config)?;
                        cells.push(Cell {
                            sweep_value: value,
                            policy: entry.name,
                            config,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }
}

const PRESETS: [(&str, &str); 4] = [
    ("fig-avg-age1", include_str!("../presets/fig-avg-age1.toml")),
    ("fig-avg-peak2", include_str!("../presets/fig-avg-peak2.toml")),
    ("fig-avg-age4", include_str!("../presets/fig-avg-age4.toml")),
    ("fig-gamma-K", include_str!("../presets/fig-gamma-K.toml")),
];

/// Text of a shipped preset.
pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Aggregate of one metric over the replications of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: String,
    pub policy: String,
    pub r: usize,
    #[serde(rename = "B")]
    pub buffer: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    /// Replications that produced a value; average peak age is missing
    /// when a run had no age reset.
    pub replications: usize,
    pub seed_base: u64,
}

/// Simulates one replication of a cell with the event log switched off.
pub fn simulate_cell(cell: &Cell, replication: usize) -> Result<Trace, HarnessError> {
    let config = cell.replication_config(replication);
    let runtime = |source: SimError| HarnessError::Runtime {
        seed: config.seed,
        config: format!("{} m={} r={} B={}", cell.policy, config.m, config.r, config.buffer),
        source,
    };
    let workload = generate_workload(&config).map_err(|e| runtime(e.into()))?;
    let mut policy = cell.policy.build(&config)?;
    let mut service = StreamServiceTimes::new(&config);
    let options = RunOptions { log_events: false };
    run_simulation_with(&config, policy.as_mut(), &workload, &mut service, options).map_err(runtime)
}

/// Runs replication `replication` of cell `cell` with the full event log.
pub fn trace_cell(spec: &ExperimentSpec, cell: usize, replication: usize) -> Result<Trace, HarnessError> {
    let cells = spec.cells()?;
    let Some(c) = cells.get(cell) else {
        return Err(ConfigError::Invalid(format!("cell {cell} out of range, spec has {} cells", cells.len())).into());
    };
    let config = c.replication_config(replication);
    let workload = generate_workload(&config)?;
    let mut policy = c.policy.build(&config)?;
    run_simulation(&config, policy.as_mut(), &workload).map_err(|source| HarnessError::Runtime {
        seed: config.seed,
        config: format!("{} m={} r={} B={}", c.policy, config.m, config.r, config.buffer),
        source,
    })
}

fn measure(trace: &Trace, metric: MetricSpec) -> Result<Option<f64>, HarnessError> {
    Ok(match metric {
        MetricSpec::TimeAvg => Some(time_average_age(&age_trajectory(trace))),
        MetricSpec::AvgPeak => average_peak_age(&age_trajectory(trace)),
        MetricSpec::LbTimeAvg => Some(time_average_age(&lower_bound_trajectory(trace))),
        MetricSpec::Penalty(h) => Some(
            penalty_average(&age_trajectory(trace), h).map_err(|e| HarnessError::Metric(format!("{metric}: {e}")))?,
        ),
        MetricSpec::Throughput => Some(throughput_delay(trace).throughput()),
        MetricSpec::AvgDelay => throughput_delay(trace).avg_delay,
    })
}

/// Runs every cell and replication on the current rayon pool and returns
/// the aggregated rows in cell order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, HarnessError> {
    let cells = spec.cells()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.replications).map(move |k| (c, k)))
        .collect();
    let samples: Vec<Vec<Option<f64>>> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let trace = simulate_cell(&cells[c], k)?;
            spec.metrics.iter().map(|&m| measure(&trace, m)).collect()
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let runs = &samples[c * spec.replications..(c + 1) * spec.replications];
        for (j, metric) in spec.metrics.iter().enumerate() {
            let values: Vec<f64> = runs.iter().filter_map(|run| run[j]).collect();
            let (mean, se) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                mean_se(&values)
            };
            rows.push(ResultRow {
                sweep_value: cell.sweep_value.to_string(),
                policy: cell.policy.to_string(),
                r: cell.config.r,
                buffer: cell.config.buffer.to_string(),
                metric: metric.to_string(),
                mean,
                se,
                replications: values.len(),
                seed_base: cell.config.seed,
            });
        }
    }
    Ok(rows)
}

/// Like [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(spec: &ExperimentSpec, threads: usize) -> Result<Vec<ResultRow>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| io::Error::other(e.to_string()))?;
    pool.install(|| run_experiment(spec))
}

pub fn write_results<W: io::Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: io::Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
