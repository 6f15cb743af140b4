//! `jcaco`: scenario generation, algorithm runs, verification suites, sweeps
//! and reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use jcaco::baselines::{self, BaselineConfig, BaselineRun};
use jcaco::game::{NeReport, PayoffKind};
use jcaco::harness::{self, Algorithm, SweepSpec, DEFAULT_TREND_TOLERANCE};
use jcaco::latency::StrategyProfile;
use jcaco::masl::{self, DelayMode, MaslConfig, DECODED_NE_TOLERANCE};
use jcaco::scenario::{generate_scenario, GenerationConfig, Scenario};
use jcaco::trace::RunTrace;
use jcaco::verify::{self, Suite};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "jcaco", version, about = "Joint AP association and edge offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random scenario file.
    Generate(GenerateArgs),
    /// Run one algorithm on a scenario and write trace.csv and summary.json.
    Run(RunArgs),
    /// Run a verification suite; exits 2 on any violation.
    Verify(VerifyArgs),
    /// Run a parameter sweep and write runs.csv and aggregate.json.
    Sweep(SweepArgs),
    /// Print the aggregate table and trend verdicts of a sweep directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn enabled(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Number of access points.
    #[arg(long)]
    m: Option<usize>,
    /// Number of edge servers.
    #[arg(long)]
    k: Option<usize>,
    /// Number of UEs.
    #[arg(long)]
    n: Option<usize>,
    /// Root seed of the generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Enable Rayleigh fading in the generated physics constants.
    #[arg(long, value_enum)]
    fading: Option<Toggle>,
    /// TOML config file; its `generate` table supplies defaults for the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; TOML unless the extension is `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Algorithm to run.
    #[arg(long, default_value = "masl")]
    algo: Algorithm,
    /// Scenario file (TOML, or canonical JSON with a `.json` extension).
    #[arg(long)]
    scenario: PathBuf,
    /// Learning rate of the association automata.
    #[arg(long)]
    alpha: Option<f64>,
    /// Learning rate of the offloading automata.
    #[arg(long)]
    beta: Option<f64>,
    /// Convergence threshold on the per-UE strategy change.
    #[arg(long)]
    delta: Option<f64>,
    /// Iteration cap (MASL) or round cap (BR, mxFP).
    #[arg(long)]
    max_iter: Option<u64>,
    /// Root seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Reward delay: expected given own activity, or realized each iteration.
    #[arg(long, value_enum)]
    delay_mode: Option<DelayModeArg>,
    /// Per-iteration Rayleigh fading during association learning.
    #[arg(long, value_enum)]
    fading: Option<Toggle>,
    /// Random-walk UE mobility during association learning.
    #[arg(long, value_enum)]
    mobility: Option<Toggle>,
    /// Random-walk step radius in meters.
    #[arg(long)]
    mobility_step: Option<f64>,
    /// TOML config file with optional `masl`, `br` and `mxfp` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DelayModeArg {
    Conditional,
    Realized,
}

impl From<DelayModeArg> for DelayMode {
    fn from(value: DelayModeArg) -> Self {
        match value {
            DelayModeArg::Conditional => DelayMode::Conditional,
            DelayModeArg::Realized => DelayMode::Realized,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    SignProperty,
    Expectation,
    Ne,
}

impl From<SuiteArg> for Suite {
    fn from(value: SuiteArg) -> Self {
        match value {
            SuiteArg::SignProperty => Suite::SignProperty,
            SuiteArg::Expectation => Suite::Expectation,
            SuiteArg::Ne => Suite::Ne,
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Suite to run.
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// Deviations per game view and instance (sign-property) or Monte-Carlo
    /// samples per instance (expectation); unused by ne.
    #[arg(long)]
    trials: Option<u64>,
    /// Number of random instances.
    #[arg(long, default_value_t = 50)]
    instances: u64,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path.
    #[arg(long, default_value = "verify-report.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Sweep output directory containing runs.csv.
    #[arg(long = "in")]
    input: PathBuf,
    /// Relative slack allowed at each step of a trend.
    #[arg(long, default_value_t = DEFAULT_TREND_TOLERANCE)]
    tolerance: f64,
}

/// Optional config file; each table is a full config with defaults filled in.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    generate: Option<GenerationConfig>,
    masl: Option<MaslConfig>,
    br: Option<BaselineConfig>,
    mxfp: Option<BaselineConfig>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    }
}

enum Failure {
    Config(anyhow::Error),
    Violation(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<jcaco::Error> for Failure {
    fn from(e: jcaco::Error) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Violation(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("{}", dir.display()))?;
    tmp.write_all(bytes).with_context(|| format!("{}", path.display()))?;
    tmp.persist(path).map_err(|e| anyhow!("{}: {}", path.display(), e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let mut cfg = file.generate.unwrap_or_default();
    if let Some(m) = args.m {
        cfg.num_aps = m;
    }
    if let Some(k) = args.k {
        cfg.num_servers = k;
    }
    if let Some(n) = args.n {
        cfg.num_ues = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.fading {
        cfg.physics.rayleigh_enabled = f.enabled();
    }
    let scenario = generate_scenario(&cfg)?;
    let bytes = if args.out.extension().is_some_and(|e| e == "json") {
        scenario.to_canonical_bytes()
    } else {
        scenario.to_toml_string().into_bytes()
    };
    write_atomic(&args.out, &bytes)?;
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let scenario = Scenario::load(path)?;
    let report = scenario.validate();
    if !report.is_ok() {
        let lines: Vec<String> = report.violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect();
        return Err(anyhow!("{}: invalid scenario\n  {}", path.display(), lines.join("\n  ")).into());
    }
    Ok(scenario)
}

#[derive(Debug, Serialize)]
struct EffectiveConfig {
    scenario: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    masl: Option<MaslConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineConfig>,
}

#[derive(Debug, Serialize)]
struct NeSummary {
    is_ne: bool,
    tolerance: f64,
    access_improving_ues: Vec<usize>,
    compute_improving_ues: Vec<usize>,
    access: NeReport,
    compute: NeReport,
}

impl NeSummary {
    fn new(access: NeReport, compute: NeReport) -> Self {
        Self {
            is_ne: access.is_ne && compute.is_ne,
            tolerance: access.tolerance,
            access_improving_ues: access.improving_ues(),
            compute_improving_ues: compute.improving_ues(),
            access,
            compute,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    schema_version: u32,
    algorithm: Algorithm,
    converged: bool,
    iterations: u64,
    objective_s: f64,
    profile: StrategyProfile,
    ne: NeSummary,
    config: EffectiveConfig,
}

fn effective_masl(args: &RunArgs, file: &ConfigFile) -> anyhow::Result<MaslConfig> {
    let mut cfg = file.masl.clone().unwrap_or_default();
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.beta = args.beta.unwrap_or(cfg.beta);
    cfg.delta = args.delta.unwrap_or(cfg.delta);
    cfg.max_iter = args.max_iter.unwrap_or(cfg.max_iter);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.mobility_step_m = args.mobility_step.unwrap_or(cfg.mobility_step_m);
    if let Some(d) = args.delay_mode {
        cfg.delay_mode = d.into();
    }
    if let Some(f) = args.fading {
        cfg.fading = f.enabled();
    }
    if let Some(m) = args.mobility {
        cfg.mobility = m.enabled();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn effective_baseline(args: &RunArgs, file: &ConfigFile) -> anyhow::Result<BaselineConfig> {
    let mut cfg = match args.algo {
        Algorithm::Mxfp => file.mxfp.clone().unwrap_or_else(BaselineConfig::mxfp),
        _ => file.br.clone().unwrap_or_default(),
    };
    cfg.max_rounds = args.max_iter.unwrap_or(cfg.max_rounds);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

/// Equilibrium check of a pure profile in both expected-load subgames.
fn ne_summary(scenario: &Scenario, profile: &StrategyProfile) -> anyhow::Result<NeSummary> {
    let view = baselines::stochastic_view(scenario)?;
    let access = view.with_kind(PayoffKind::Access).is_nash_equilibrium(profile, DECODED_NE_TOLERANCE);
    let compute = view.with_kind(PayoffKind::Compute).is_nash_equilibrium(profile, DECODED_NE_TOLERANCE);
    Ok(NeSummary::new(access, compute))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let scenario = load_scenario(&args.scenario)?;
    let (summary, trace): (RunSummary, RunTrace) = if args.algo == Algorithm::Masl {
        let cfg = effective_masl(&args, &file)?;
        let r = masl::run_jcaco(&scenario, &cfg)?;
        let summary = RunSummary {
            schema_version: SCHEMA_VERSION,
            algorithm: args.algo,
            converged: r.converged,
            iterations: r.iterations,
            objective_s: r.objective,
            profile: r.profile,
            ne: NeSummary::new(r.ne_access, r.ne_compute),
            config: EffectiveConfig { scenario: args.scenario.clone(), masl: Some(cfg), baseline: None },
        };
        (summary, r.trace)
    } else {
        let cfg = effective_baseline(&args, &file)?;
        let r: BaselineRun = match args.algo {
            Algorithm::Br => {
                let view = baselines::stochastic_view(&scenario)?;
                baselines::run_best_response(&scenario, &view, &cfg)?.run
            }
            Algorithm::Mxfp => baselines::run_mxfp(&scenario, &cfg)?,
            Algorithm::Selfish => baselines::run_selfish(&scenario)?,
            Algorithm::Raro => baselines::run_raro(&scenario, cfg.seed)?,
            Algorithm::Masl => unreachable!("handled above"),
        };
        let summary = RunSummary {
            schema_version: SCHEMA_VERSION,
            algorithm: args.algo,
            converged: r.converged,
            iterations: r.rounds,
            objective_s: r.objective,
            ne: ne_summary(&scenario, &r.profile)?,
            profile: r.profile,
            config: EffectiveConfig { scenario: args.scenario.clone(), masl: None, baseline: Some(cfg) },
        };
        (summary, r.trace)
    };
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    write_atomic(&args.out.join("trace.csv"), &csv)?;
    write_atomic(&args.out.join("summary.json"), &to_json(&summary)?)?;
    println!(
        "{}: converged={} iterations={} objective={:.4} s ne={}",
        summary.algorithm, summary.converged, summary.iterations, summary.objective_s, summary.ne.is_ne
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifyOutput<T: Serialize> {
    schema_version: u32,
    suite: Suite,
    seed: u64,
    violations: usize,
    report: T,
}

fn verify_cmd(args: VerifyArgs) -> Result<(), Failure> {
    let suite: Suite = args.suite.into();
    let write = |violations: usize, bytes: Vec<u8>| -> Result<(), Failure> {
        write_atomic(&args.out, &bytes)?;
        println!("{suite:?}: {violations} violation(s); report at {}", args.out.display());
        if violations > 0 {
            return Err(Failure::Violation(format!("{violations} violation(s) in {}", args.out.display())));
        }
        Ok(())
    };
    match suite {
        Suite::SignProperty => {
            let r = verify::sign_property_suite(args.instances, args.trials.unwrap_or(10_000), args.seed)?;
            let v = r.violations();
            write(v, to_json(&VerifyOutput { schema_version: SCHEMA_VERSION, suite, seed: args.seed, violations: v, report: r })?)
        }
        Suite::Expectation => {
            let r = verify::expectation_suite(args.instances, args.trials.unwrap_or(100_000), args.seed)?;
            let v = r.failures().count();
            write(v, to_json(&VerifyOutput { schema_version: SCHEMA_VERSION, suite, seed: args.seed, violations: v, report: r })?)
        }
        Suite::Ne => {
            let r = verify::ne_suite(args.instances, args.seed)?;
            let v = r.failures().count();
            write(v, to_json(&VerifyOutput { schema_version: SCHEMA_VERSION, suite, seed: args.seed, violations: v, report: r })?)
        }
    }
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let spec = SweepSpec::load(&args.spec)?;
    let output = harness::run_sweep(&spec)?;
    let mut csv = Vec::new();
    harness::write_records_csv(&output.records, &mut csv)?;
    write_atomic(&args.out.join("runs.csv"), &csv)?;
    write_atomic(&args.out.join("aggregate.json"), &to_json(&output.aggregate)?)?;
    print!("{}", format_report(&output.aggregate, &spec.algorithms, DEFAULT_TREND_TOLERANCE));
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let path = args.input.join("runs.csv");
    let file = std::fs::File::open(&path).with_context(|| format!("{}", path.display()))?;
    let records = harness::read_records_csv(file).with_context(|| format!("{}", path.display()))?;
    let aggregate = harness::aggregate(&records);
    let mut algorithms: Vec<Algorithm> = Vec::new();
    for r in &records {
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
    }
    print!("{}", format_report(&aggregate, &algorithms, args.tolerance));
    Ok(())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn format_report(agg: &harness::AggregateResult, algorithms: &[Algorithm], tolerance: f64) -> String {
    let mut s = String::new();
    let param = agg.swept_param.map_or("value", |p| p.name());
    let _ = writeln!(
        s,
        "{:<8} {:>12} {:>6} {:>10} {:>14} {:>12} {:>12}",
        "algo", param, "seeds", "converged", "mean_obj_s", "std_obj_s", "mean_iter"
    );
    for r in &agg.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>6} {:>10} {:>14} {:>12} {:>12}",
            r.algorithm.name(),
            r.swept_value,
            r.seeds,
            r.converged,
            fmt_opt(r.mean_objective_s, 4),
            fmt_opt(r.std_objective_s, 4),
            fmt_opt(r.mean_iterations, 1)
        );
    }
    for f in &agg.failures {
        let _ = writeln!(s, "failed: {} value={} seed={}: {}", f.algorithm, f.swept_value, f.seed, f.message);
    }
    if let Some(p) = agg.swept_param {
        let trend = p.expected_trend();
        for &alg in algorithms {
            let v = harness::trend_check(agg, alg, trend, tolerance);
            let verdict = if v.pass { "PASS" } else { "FAIL" };
            let _ = write!(s, "trend {alg} {trend:?} in {}: {verdict}", p.name());
            if !v.violations.is_empty() {
                let _ = write!(s, " (breaks after points {:?})", v.violations);
            }
            if let Some(note) = &v.note {
                let _ = write!(s, " ({note})");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        Cli::command_for_test().debug_assert();
    }

    impl Cli {
        fn command_for_test() -> clap::Command {
            <Cli as clap::CommandFactory>::command()
        }
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let err = toml::from_str::<ConfigFile>("[masl]\nalpah = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("alpah"));
    }

    #[test]
    fn flag_overrides_config_file() {
        let file: ConfigFile = toml::from_str("[masl]\nalpha = 0.2\nbeta = 0.3\n").unwrap();
        let args = Cli::parse_from(["jcaco", "run", "--scenario", "s", "--out", "o", "--alpha", "0.5"]);
        let Command::Run(args) = args.command else { panic!("run subcommand") };
        let cfg = effective_masl(&args, &file).unwrap();
        assert_eq!((cfg.alpha, cfg.beta, cfg.delta), (0.5, 0.3, MaslConfig::default().delta));
    }
}
