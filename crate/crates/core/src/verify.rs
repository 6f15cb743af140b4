//! Brute-force verification suites over random small instances: potential
//! sign agreement, expected-load correctness and best-response convergence.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_best_response, BaselineConfig};
use crate::env::{enumerate_sample_space, sample_activity, static_channel, ActivityState};
use crate::error::{Error, Result};
use crate::game::{GameView, InfoMode, PayoffKind, SignReport, DEFAULT_NE_TOLERANCE};
use crate::latency::{DelayModel, Evaluation, Expectation, StrategyProfile};
use crate::rng::{Purpose, RngStream, GLOBAL};
use crate::scenario::{generate_scenario, GenerationConfig, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    SignProperty,
    Expectation,
    Ne,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-property" => Ok(Suite::SignProperty),
            "expectation" => Ok(Suite::Expectation),
            "ne" => Ok(Suite::Ne),
            other => Err(Error::Config(format!("unknown suite '{other}' (expected sign-property, expectation or ne)"))),
        }
    }
}

/// Size limits of the random instances a suite draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceBounds {
    pub max_ues: usize,
    pub max_aps: usize,
    pub max_servers: usize,
}

impl InstanceBounds {
    pub const SMALL: Self = Self { max_ues: 6, max_aps: 4, max_servers: 4 };
}

/// Instance `index` of a suite: UE count uniform in `[1, max]`, AP and ES
/// counts in `[2, max]` so deviations exist, parameters from the default ranges.
pub fn random_instance(stream: &RngStream, index: u64, bounds: InstanceBounds) -> Result<Scenario> {
    let mut rng = stream.fork(GLOBAL, index, Purpose::Verify);
    let cfg = GenerationConfig::new(
        rng.random_range(2..=bounds.max_aps.max(2)),
        rng.random_range(2..=bounds.max_servers.max(2)),
        rng.random_range(1..=bounds.max_ues.max(1)),
        rng.random(),
    );
    generate_scenario(&cfg)
}

/// Activity state with at least one active UE.
fn nonempty_activity(scenario: &Scenario, stream: &RngStream, index: u64) -> ActivityState {
    (0..)
        .map(|attempt| sample_activity(scenario, stream, index * 1024 + attempt))
        .find(|w| w.count_active() > 0)
        .expect("every UE has positive activity probability")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub kind: PayoffKind,
    pub information: String,
    pub report: SignReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSuiteReport {
    pub instances: u64,
    pub trials_per_view: u64,
    pub views: Vec<ViewReport>,
}

impl SignSuiteReport {
    pub fn violations(&self) -> usize {
        self.views.iter().map(|v| v.report.violations.len()).sum()
    }
}

/// Sign agreement of payoff and potential changes for the access and
/// compute games under complete information (one sampled activity state per
/// instance) and under expected loads.
pub fn sign_property_suite(instances: u64, trials: u64, seed: u64) -> Result<SignSuiteReport> {
    let stream = RngStream::new(seed);
    let per_instance: Vec<Vec<ViewReport>> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<Vec<ViewReport>> {
            let scenario = random_instance(&stream, i, InstanceBounds::SMALL)?;
            let channel = static_channel(&scenario);
            let w = nonempty_activity(&scenario, &stream, i);
            let mut out = Vec::new();
            for (info, mode) in [
                ("complete", InfoMode::Complete(w)),
                ("stochastic", InfoMode::Stochastic(Expectation::Weighted)),
            ] {
                for kind in [PayoffKind::Access, PayoffKind::Compute] {
                    let view = GameView::new(&scenario, &channel, mode.clone(), kind)?;
                    let report = view.check_sign_property(trials, &stream.child(i))?;
                    out.push(ViewReport { kind, information: info.to_string(), report });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut views: Vec<ViewReport> = Vec::new();
    for reports in per_instance {
        for r in reports {
            match views.iter_mut().find(|v| v.kind == r.kind && v.information == r.information) {
                Some(v) => v.report.merge(r.report),
                None => views.push(r),
            }
        }
    }
    Ok(SignSuiteReport { instances, trials_per_view: trials, views })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCheck {
    pub instance: u64,
    pub resource: String,
    pub closed_form: f64,
    pub enumerated: f64,
    pub monte_carlo: f64,
    pub std_err: f64,
    pub enumeration_ok: bool,
    pub monte_carlo_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationSuiteReport {
    pub instances: u64,
    pub samples: u64,
    pub relative_tolerance: f64,
    pub checks: Vec<LoadCheck>,
}

impl ExpectationSuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &LoadCheck> {
        self.checks.iter().filter(|c| !c.enumeration_ok || !c.monte_carlo_ok)
    }
}

/// Closed-form expected loads against full enumeration of the activity
/// space and against Monte-Carlo sampling (3 standard errors).
pub fn expectation_suite(instances: u64, samples: u64, seed: u64) -> Result<ExpectationSuiteReport> {
    const RELATIVE: f64 = 1e-12;
    let stream = RngStream::new(seed);
    let bounds = InstanceBounds { max_ues: 12, max_aps: 4, max_servers: 4 };
    let per_instance: Vec<Vec<LoadCheck>> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<Vec<LoadCheck>> {
            let scenario = random_instance(&stream, i, bounds)?;
            let model = DelayModel::new(&scenario, &static_channel(&scenario))?;
            let mut rng = stream.fork(GLOBAL, i, Purpose::Baseline);
            let profile = StrategyProfile::with_optimal_steps(
                &scenario,
                (0..scenario.num_ues()).map(|_| rng.random_range(0..scenario.num_aps())).collect(),
                (0..scenario.num_ues()).map(|_| rng.random_range(0..scenario.num_servers())).collect(),
            );
            let closed: Vec<f64> = [model.ap_loads(&profile, Evaluation::Expected), model.es_loads(&profile, Evaluation::Expected)].concat();
            let realized = |w: &ActivityState| -> Vec<f64> {
                [model.ap_loads(&profile, Evaluation::Realized(w)), model.es_loads(&profile, Evaluation::Realized(w))].concat()
            };
            let mut enumerated = vec![0.0; closed.len()];
            for (w, p) in enumerate_sample_space(&scenario)? {
                for (e, l) in enumerated.iter_mut().zip(realized(&w)) {
                    *e += p * l;
                }
            }
            let mc_stream = stream.child(i);
            let (mut sum, mut sq) = (vec![0.0; closed.len()], vec![0.0; closed.len()]);
            for s in 0..samples {
                for (j, l) in realized(&sample_activity(&scenario, &mc_stream, s)).into_iter().enumerate() {
                    sum[j] += l;
                    sq[j] += l * l;
                }
            }
            let count = samples as f64;
            Ok((0..closed.len())
                .map(|j| {
                    let mean = sum[j] / count;
                    let var = ((sq[j] / count - mean * mean) * count / (count - 1.0)).max(0.0);
                    let std_err = (var / count).sqrt();
                    let scale = closed[j].abs().max(f64::MIN_POSITIVE);
                    let m = scenario.num_aps();
                    LoadCheck {
                        instance: i,
                        resource: if j < m { format!("ap{j}") } else { format!("es{}", j - m) },
                        closed_form: closed[j],
                        enumerated: enumerated[j],
                        monte_carlo: mean,
                        std_err,
                        enumeration_ok: (closed[j] - enumerated[j]).abs() <= RELATIVE * scale,
                        monte_carlo_ok: (closed[j] - mean).abs() <= 3.0 * std_err + RELATIVE * scale,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(ExpectationSuiteReport { instances, samples, relative_tolerance: RELATIVE, checks: per_instance.concat() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrCheck {
    pub instance: u64,
    pub information: String,
    pub kind: PayoffKind,
    pub moves: usize,
    /// Number of pure profiles, saturating at `u128::MAX`.
    pub strategy_space: u128,
    pub converged: bool,
    pub potential_always_fell: bool,
    pub terminal_is_ne: bool,
}

impl BrCheck {
    pub fn ok(&self) -> bool {
        self.converged && self.potential_always_fell && self.terminal_is_ne && (self.moves as u128) < self.strategy_space
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeSuiteReport {
    pub instances: u64,
    pub checks: Vec<BrCheck>,
}

impl NeSuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &BrCheck> {
        self.checks.iter().filter(|c| !c.ok())
    }
}

/// Best-response dynamics on random small instances, per subgame, under
/// complete information and expected loads: terminates within the number of
/// pure profiles, lowers the potential at every move, ends at an equilibrium.
pub fn ne_suite(instances: u64, seed: u64) -> Result<NeSuiteReport> {
    let stream = RngStream::new(seed);
    let per_instance: Vec<Vec<BrCheck>> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<Vec<BrCheck>> {
            let scenario = random_instance(&stream, i, InstanceBounds::SMALL)?;
            let channel = static_channel(&scenario);
            let w = nonempty_activity(&scenario, &stream, i);
            let n = scenario.num_ues() as u32;
            let mut out = Vec::new();
            for (info, mode) in [
                ("complete", InfoMode::Complete(w)),
                ("stochastic", InfoMode::Stochastic(Expectation::Weighted)),
            ] {
                for kind in [PayoffKind::Access, PayoffKind::Compute] {
                    let view = GameView::new(&scenario, &channel, mode.clone(), kind)?;
                    let actions = match kind {
                        PayoffKind::Access => scenario.num_aps(),
                        _ => scenario.num_servers(),
                    } as u128;
                    let cfg = BaselineConfig { seed: i, ..BaselineConfig::default() };
                    let run = run_best_response(&scenario, &view, &cfg)?;
                    out.push(BrCheck {
                        instance: i,
                        information: info.to_string(),
                        kind,
                        moves: run.moves.len(),
                        strategy_space: actions.checked_pow(n).unwrap_or(u128::MAX),
                        converged: run.run.converged,
                        potential_always_fell: run.moves.iter().all(|m| m.potential_decreased()),
                        terminal_is_ne: view.is_nash_equilibrium(&run.run.profile, DEFAULT_NE_TOLERANCE).is_ne,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(NeSuiteReport { instances, checks: per_instance.concat() })
}
