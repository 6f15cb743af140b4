//! Multi-seed parameter sweeps, per-run records, aggregation and trend checks.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_best_response, run_mxfp, run_raro, run_selfish, stochastic_view, BaselineConfig};
use crate::error::{Error, Result};
use crate::masl::{run_jcaco, MaslConfig};
use crate::scenario::{generate_scenario, GenerationConfig, Range, Scenario};
use crate::trace::RunTrace;

pub const DEFAULT_TREND_TOLERANCE: f64 = 0.05;
pub const WORKERS_ENV: &str = "JCACO_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Masl,
    Br,
    Mxfp,
    Selfish,
    Raro,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Masl, Algorithm::Br, Algorithm::Mxfp, Algorithm::Selfish, Algorithm::Raro];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Masl => "masl",
            Algorithm::Br => "br",
            Algorithm::Mxfp => "mxfp",
            Algorithm::Selfish => "selfish",
            Algorithm::Raro => "raro",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}' (expected masl, br, mxfp, selfish or raro)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParam {
    NumAps,
    /// AP bandwidth in MHz.
    ApBandwidth,
    NumEs,
    /// ES compute rate in TFLOP/s.
    EsCapacity,
    /// TFLOP per inference step.
    FlopsPerStep,
    NumUes,
    /// UE data size in MB.
    DataVolume,
}

impl SweptParam {
    pub const ALL: [SweptParam; 7] = [
        SweptParam::NumAps,
        SweptParam::ApBandwidth,
        SweptParam::NumEs,
        SweptParam::EsCapacity,
        SweptParam::FlopsPerStep,
        SweptParam::NumUes,
        SweptParam::DataVolume,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweptParam::NumAps => "num_aps",
            SweptParam::ApBandwidth => "ap_bandwidth",
            SweptParam::NumEs => "num_es",
            SweptParam::EsCapacity => "es_capacity",
            SweptParam::FlopsPerStep => "flops_per_step",
            SweptParam::NumUes => "num_ues",
            SweptParam::DataVolume => "data_volume",
        }
    }

    /// Direction the service time is expected to move as the value grows.
    pub fn expected_trend(self) -> Trend {
        match self {
            SweptParam::NumAps | SweptParam::ApBandwidth | SweptParam::NumEs | SweptParam::EsCapacity => Trend::Decreasing,
            SweptParam::FlopsPerStep | SweptParam::NumUes | SweptParam::DataVolume => Trend::Increasing,
        }
    }

    /// Default five-point grid.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweptParam::FlopsPerStep => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            SweptParam::NumUes => vec![10.0, 15.0, 20.0, 25.0, 30.0],
            _ => vec![2.0, 4.0, 6.0, 8.0, 10.0],
        }
    }

    /// Base config with the parameter pinned to `value`.
    pub fn apply(self, base: &GenerationConfig, value: f64) -> Result<GenerationConfig> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Config(format!("{} must be > 0, got {value}", self.name())));
        }
        let mut cfg = base.clone();
        match self {
            SweptParam::NumAps => cfg.num_aps = count()?,
            SweptParam::NumEs => cfg.num_servers = count()?,
            SweptParam::NumUes => cfg.num_ues = count()?,
            SweptParam::ApBandwidth => cfg.ranges.bandwidth_hz = Range::point(value * 1e6),
            SweptParam::EsCapacity => cfg.ranges.flops_per_sec = Range::point(value),
            SweptParam::FlopsPerStep => cfg.ranges.flops_per_step = Range::point(value),
            SweptParam::DataVolume => cfg.ranges.data_size_mb = Range::point(value),
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweptParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweptParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub base: GenerationConfig,
    #[serde(default)]
    pub masl: MaslConfig,
    #[serde(default)]
    pub br: BaselineConfig,
    #[serde(default = "BaselineConfig::mxfp")]
    pub mxfp: BaselineConfig,
}

impl SweepSpec {
    pub fn new(param: SweptParam, values: Vec<f64>, seeds: Vec<u64>, algorithms: Vec<Algorithm>) -> Self {
        Self {
            param,
            values,
            seeds,
            algorithms,
            base: GenerationConfig::default(),
            masl: MaslConfig::default(),
            br: BaselineConfig::default(),
            mxfp: BaselineConfig::mxfp(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(message) => Error::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() || self.algorithms.is_empty() {
            return Err(Error::Config("values, seeds and algorithms must be nonempty".into()));
        }
        for &v in &self.values {
            self.param.apply(&self.base, v)?;
        }
        self.masl.validate()
    }
}

/// Result of one algorithm on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub converged: bool,
    pub iterations: u64,
    pub objective: f64,
    pub trace: RunTrace,
}

pub fn run_algorithm(
    algorithm: Algorithm,
    scenario: &Scenario,
    masl: &MaslConfig,
    br: &BaselineConfig,
    mxfp: &BaselineConfig,
    seed: u64,
) -> Result<RunOutcome> {
    let outcome = |run: crate::baselines::BaselineRun| RunOutcome {
        converged: run.converged,
        iterations: run.rounds,
        objective: run.objective,
        trace: run.trace,
    };
    Ok(match algorithm {
        Algorithm::Masl => {
            let r = run_jcaco(scenario, &MaslConfig { seed, ..masl.clone() })?;
            RunOutcome { converged: r.converged, iterations: r.iterations, objective: r.objective, trace: r.trace }
        }
        Algorithm::Br => {
            let view = stochastic_view(scenario)?;
            outcome(run_best_response(scenario, &view, &BaselineConfig { seed, ..br.clone() })?.run)
        }
        Algorithm::Mxfp => outcome(run_mxfp(scenario, &BaselineConfig { seed, ..mxfp.clone() })?),
        Algorithm::Selfish => outcome(run_selfish(scenario)?),
        Algorithm::Raro => outcome(run_raro(scenario, seed)?),
    })
}

/// One CSV line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub swept_param: SweptParam,
    pub swept_value: f64,
    pub seed: u64,
    pub converged: bool,
    pub iterations: u64,
    pub objective_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub swept_value: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub swept_value: f64,
    pub seeds: usize,
    pub converged: usize,
    pub non_converged: usize,
    /// Over converged runs only; `None` when no run converged.
    pub mean_objective_s: Option<f64>,
    pub std_objective_s: Option<f64>,
    pub mean_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub swept_param: Option<SweptParam>,
    pub rows: Vec<AggregateRow>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub aggregate: AggregateResult,
}

/// Thread pool honoring `JCACO_WORKERS`.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{raw}'")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every (value, seed, algorithm) cell. Scenarios use the run seed, so
/// every algorithm faces the same instance for a given seed and value.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let cells: Vec<(f64, u64, Algorithm)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().flat_map(move |&s| spec.algorithms.iter().map(move |&a| (v, s, a))))
        .collect();
    let results: Vec<std::result::Result<RunRecord, RunFailure>> = worker_pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(value, seed, algorithm)| {
                let run = || -> Result<RunOutcome> {
                    let cfg = GenerationConfig { seed, ..spec.param.apply(&spec.base, value)? };
                    let scenario = generate_scenario(&cfg)?;
                    run_algorithm(algorithm, &scenario, &spec.masl, &spec.br, &spec.mxfp, seed)
                };
                run()
                    .map(|o| RunRecord {
                        algorithm,
                        swept_param: spec.param,
                        swept_value: value,
                        seed,
                        converged: o.converged,
                        iterations: o.iterations,
                        objective_s: o.objective,
                    })
                    .map_err(|e| RunFailure { algorithm, swept_value: value, seed, message: e.to_string() })
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    sort_records(&mut records);
    let mut aggregate = aggregate(&records);
    aggregate.failures = failures;
    Ok(SweepOutput { records, aggregate })
}

fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.swept_value.total_cmp(&b.swept_value))
            .then(a.seed.cmp(&b.seed))
    });
}

/// Per (algorithm, value) statistics. Depends on the records alone.
pub fn aggregate(records: &[RunRecord]) -> AggregateResult {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut rows = Vec::new();
    for group in sorted.chunk_by(|a, b| a.algorithm == b.algorithm && a.swept_value == b.swept_value) {
        let ok: Vec<&RunRecord> = group.iter().filter(|r| r.converged).collect();
        let (mean, std, iters) = if ok.is_empty() {
            (None, None, None)
        } else {
            let k = ok.len() as f64;
            let mean = ok.iter().map(|r| r.objective_s).sum::<f64>() / k;
            let var = if ok.len() > 1 {
                ok.iter().map(|r| (r.objective_s - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            (Some(mean), Some(var.sqrt()), Some(ok.iter().map(|r| r.iterations as f64).sum::<f64>() / k))
        };
        rows.push(AggregateRow {
            algorithm: group[0].algorithm,
            swept_value: group[0].swept_value,
            seeds: group.len(),
            converged: ok.len(),
            non_converged: group.len() - ok.len(),
            mean_objective_s: mean,
            std_objective_s: std,
            mean_iterations: iters,
        });
    }
    AggregateResult { swept_param: sorted.first().map(|r| r.swept_param), rows, failures: Vec::new() }
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub algorithm: Algorithm,
    pub expectation: Trend,
    pub tolerance: f64,
    pub pass: bool,
    /// (swept value, mean objective) in ascending value order.
    pub series: Vec<(f64, f64)>,
    /// Indices `i` where the step from `series[i]` to `series[i + 1]` broke the trend.
    pub violations: Vec<usize>,
    pub note: Option<String>,
}

/// Checks that the mean objective moves in the expected direction at every
/// step: each next value must be strictly below `prev * (1 + tol)`
/// (decreasing) or strictly above `prev * (1 - tol)` (increasing).
pub fn trend_check(result: &AggregateResult, algorithm: Algorithm, expectation: Trend, tolerance: f64) -> TrendVerdict {
    let mut note = None;
    let mut series = Vec::new();
    for row in result.rows.iter().filter(|r| r.algorithm == algorithm) {
        match row.mean_objective_s {
            Some(m) => series.push((row.swept_value, m)),
            None => note = Some(format!("no converged run at value {}", row.swept_value)),
        }
    }
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let violations: Vec<usize> = series
        .windows(2)
        .enumerate()
        .filter(|(_, w)| {
            let (prev, next) = (w[0].1, w[1].1);
            match expectation {
                Trend::Decreasing => !(next < prev * (1.0 + tolerance)),
                Trend::Increasing => !(next > prev * (1.0 - tolerance)),
            }
        })
        .map(|(i, _)| i)
        .collect();
    if series.len() < 3 && note.is_none() {
        note = Some(format!("need at least 3 swept values, got {}", series.len()));
    }
    TrendVerdict { algorithm, expectation, tolerance, pass: note.is_none() && violations.is_empty(), series, violations, note }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(means: &[f64]) -> AggregateResult {
        let records: Vec<RunRecord> = means
            .iter()
            .enumerate()
            .map(|(i, &m)| RunRecord {
                algorithm: Algorithm::Masl,
                swept_param: SweptParam::NumAps,
                swept_value: (i + 1) as f64,
                seed: 0,
                converged: true,
                iterations: 1,
                objective_s: m,
            })
            .collect();
        aggregate(&records)
    }

    #[test]
    fn flat_series_fails_without_tolerance() {
        let a = agg(&[5.0, 5.0, 5.0]);
        assert!(!trend_check(&a, Algorithm::Masl, Trend::Decreasing, 0.0).pass);
        assert!(!trend_check(&a, Algorithm::Masl, Trend::Increasing, 0.0).pass);
        assert!(trend_check(&a, Algorithm::Masl, Trend::Decreasing, 0.05).pass);
    }

    #[test]
    fn trend_tolerates_small_reversals() {
        let a = agg(&[10.0, 8.0, 8.3, 6.0]);
        assert!(trend_check(&a, Algorithm::Masl, Trend::Decreasing, 0.05).pass);
        let v = trend_check(&a, Algorithm::Masl, Trend::Decreasing, 0.01);
        assert_eq!(v.violations, vec![1]);
        assert!(!trend_check(&agg(&[1.0, 2.0]), Algorithm::Masl, Trend::Increasing, 0.05).pass);
    }

    #[test]
    fn aggregate_skips_non_converged() {
        let mut records = vec![
            RunRecord { algorithm: Algorithm::Br, swept_param: SweptParam::NumUes, swept_value: 10.0, seed: 1, converged: true, iterations: 3, objective_s: 2.0 },
            RunRecord { algorithm: Algorithm::Br, swept_param: SweptParam::NumUes, swept_value: 10.0, seed: 0, converged: true, iterations: 5, objective_s: 4.0 },
            RunRecord { algorithm: Algorithm::Br, swept_param: SweptParam::NumUes, swept_value: 10.0, seed: 2, converged: false, iterations: 9, objective_s: 100.0 },
        ];
        let a = aggregate(&records);
        assert_eq!(a.rows.len(), 1);
        let row = &a.rows[0];
        assert_eq!((row.seeds, row.converged, row.non_converged), (3, 2, 1));
        assert_eq!(row.mean_objective_s, Some(3.0));
        assert_eq!(row.mean_iterations, Some(4.0));
        assert!((row.std_objective_s.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        records.reverse();
        assert_eq!(aggregate(&records), a);
    }

    #[test]
    fn csv_round_trip() {
        let a = RunRecord { algorithm: Algorithm::Mxfp, swept_param: SweptParam::DataVolume, swept_value: 0.3, seed: 7, converged: false, iterations: 500, objective_s: 12.125 };
        let mut buf = Vec::new();
        write_records_csv(std::slice::from_ref(&a), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("algorithm,swept_param,swept_value,seed,converged,iterations,objective_s\n"));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), vec![a]);
    }

    #[test]
    fn apply_pins_parameter() {
        let base = GenerationConfig::default();
        assert_eq!(SweptParam::NumAps.apply(&base, 4.0).unwrap().num_aps, 4);
        assert_eq!(SweptParam::ApBandwidth.apply(&base, 6.0).unwrap().ranges.bandwidth_hz, Range::point(6e6));
        assert!(SweptParam::NumUes.apply(&base, 2.5).is_err());
        assert!(SweptParam::EsCapacity.apply(&base, 0.0).is_err());
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        let ok = "param = \"num_aps\"\nvalues = [2, 4]\nseeds = [0]\nalgorithms = [\"selfish\"]\n";
        let spec = SweepSpec::from_toml_str(ok).unwrap();
        assert_eq!(spec.mxfp, BaselineConfig::mxfp());
        assert!(SweepSpec::from_toml_str(&format!("{ok}bogus = 1\n")).is_err());
    }

    #[test]
    fn single_cell_sweep() {
        let mut spec = SweepSpec::new(SweptParam::NumUes, vec![4.0], vec![3], Algorithm::ALL.to_vec());
        spec.base = GenerationConfig::new(2, 2, 4, 0);
        let out = run_sweep(&spec).unwrap();
        assert_eq!(out.records.len(), 5);
        assert!(out.aggregate.failures.is_empty());
        assert_eq!(run_sweep(&spec).unwrap().records, out.records);
    }
}
