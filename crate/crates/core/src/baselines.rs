//! Benchmark algorithms: best-response dynamics, fictitious play against
//! uniform beliefs (mxFP), nearest-AP/fastest-ES (Selfish) and random
//! association (RARO). All share the payoff machinery of [`crate::game`].

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::static_channel;
use crate::error::{Error, Result};
use crate::game::{GameView, InfoMode, PayoffKind, DEFAULT_NE_TOLERANCE};
use crate::latency::{DelayModel, Expectation, StrategyProfile};
use crate::rng::{Purpose, RngStream};
use crate::scenario::Scenario;
use crate::trace::{RunTrace, TraceRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub max_rounds: u64,
    pub beliefs: Beliefs,
    /// BR: minimum improvement for a move. mxFP: L∞ frequency change that
    /// counts as stable.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { max_rounds: 1000, beliefs: Beliefs::Uniform, tolerance: DEFAULT_NE_TOLERANCE, seed: 0 }
    }
}

/// How mxFP models the other UEs' mixed strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beliefs {
    /// Every opponent spread evenly over its actions; needs only the UE count.
    #[default]
    Uniform,
    /// Opponents' empirical action frequencies, uniform before any play.
    Empirical,
}

impl BaselineConfig {
    pub fn mxfp() -> Self {
        Self { max_rounds: 500, tolerance: 1e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub profile: StrategyProfile,
    pub rounds: u64,
    pub converged: bool,
    /// Expected service time of `profile` on the static channel.
    pub objective: f64,
    pub trace: RunTrace,
}

/// One improving move of best-response dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrMove {
    pub ue: usize,
    pub payoff_before: f64,
    pub payoff_after: f64,
    /// Order of the access and compute potentials after the move relative to
    /// before (-1 decreased, 0 unchanged, 1 increased).
    pub access_potential: i8,
    pub compute_potential: i8,
}

impl BrMove {
    /// Neither potential rose and at least one fell.
    pub fn potential_decreased(&self) -> bool {
        self.access_potential <= 0 && self.compute_potential <= 0 && (self.access_potential < 0 || self.compute_potential < 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrRun {
    pub run: BaselineRun,
    pub moves: Vec<BrMove>,
}

fn trace_row(model: &DelayModel, profile: &StrategyProfile, iteration: u64) -> TraceRow {
    let b = model.total_service_time(profile, crate::latency::Evaluation::Expected);
    TraceRow { iteration, total_expected_time: b.objective, max_strategy_delta: 0.0, ue_delays: b.total }
}

fn finish(scenario: &Scenario, profile: StrategyProfile, rounds: u64, converged: bool, trace: RunTrace) -> Result<BaselineRun> {
    let model = DelayModel::new(scenario, &static_channel(scenario))?;
    let objective = model.expected_objective(&profile);
    Ok(BaselineRun { profile, rounds, converged, objective, trace })
}

fn potential_order(view: &GameView<'_>, kind: PayoffKind, after: &StrategyProfile, before: &StrategyProfile) -> Result<i8> {
    let v = view.with_kind(kind);
    Ok(match v.potential(after)?.compare(&v.potential(before)?) {
        Ordering::Less => -1,
        Ordering::Equal => 0,
        Ordering::Greater => 1,
    })
}

/// Round-robin best-response dynamics in UE index order, starting from a
/// seeded random profile. Stops after a pass without an improving move.
pub fn run_best_response(scenario: &Scenario, view: &GameView<'_>, config: &BaselineConfig) -> Result<BrRun> {
    config.validate()?;
    let start = run_raro(scenario, config.seed)?.profile;
    best_response_from(scenario, view, start, config)
}

/// Best-response dynamics from a given profile.
pub fn best_response_from(
    scenario: &Scenario,
    view: &GameView<'_>,
    mut profile: StrategyProfile,
    config: &BaselineConfig,
) -> Result<BrRun> {
    config.validate()?;
    profile.check(scenario)?;
    let mut moves = Vec::new();
    let mut trace = RunTrace::default();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let mut moved = false;
        for n in 0..scenario.num_ues() {
            if !view.is_player(n) {
                continue;
            }
            let loads = view.loads(&profile);
            let best = view.best_reply(&loads, &profile, n);
            if best.improvement <= config.tolerance {
                continue;
            }
            let before = profile.clone();
            let payoff_before = view.payoff_with(&loads, &profile, n);
            profile.ap_choice[n] = best.ap;
            profile.es_choice[n] = best.es;
            profile.steps[n] = best.steps;
            moves.push(BrMove {
                ue: n,
                payoff_before,
                payoff_after: view.payoff(&profile, n)?,
                access_potential: potential_order(view, PayoffKind::Access, &profile, &before)?,
                compute_potential: potential_order(view, PayoffKind::Compute, &profile, &before)?,
            });
            moved = true;
        }
        trace.push(trace_row(&view.model, &profile, rounds - 1));
        if !moved {
            converged = true;
            break;
        }
    }
    Ok(BrRun { run: finish(scenario, profile, rounds, converged, trace)?, moves })
}

/// Default BR view: expected payoffs, conditional on the UE being active.
pub fn stochastic_view(scenario: &Scenario) -> Result<GameView<'_>> {
    GameView::new(scenario, &static_channel(scenario), InfoMode::Stochastic(Expectation::Conditional), PayoffKind::Total)
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    values.enumerate().fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best }).0
}

/// Fictitious play: all UEs best-respond simultaneously each round to their
/// beliefs about the others, and the empirical action frequencies (a uniform
/// pseudo-observation as prior) are updated until they stabilize.
pub fn run_mxfp(scenario: &Scenario, config: &BaselineConfig) -> Result<BaselineRun> {
    config.validate()?;
    let model = DelayModel::new(scenario, &static_channel(scenario))?;
    let (n, m, k) = (scenario.num_ues(), scenario.num_aps(), scenario.num_servers());
    let mut ap_freq = vec![vec![1.0 / m as f64; m]; n];
    let mut es_freq = vec![vec![1.0 / k as f64; k]; n];
    let mut profile = StrategyProfile::with_optimal_steps(scenario, vec![0; n], vec![0; n]);
    let mut trace = RunTrace::default();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let (ap_belief, es_belief) = match config.beliefs {
            Beliefs::Uniform => (vec![vec![1.0 / m as f64; m]; n], vec![vec![1.0 / k as f64; k]; n]),
            Beliefs::Empirical => (ap_freq.clone(), es_freq.clone()),
        };
        let mut ap_load = vec![0.0; m];
        let mut es_load = vec![0.0; k];
        for i in 0..n {
            for j in 0..m {
                ap_load[j] += model.probs[i] * ap_belief[i][j] * model.tx[i][j];
            }
            for j in 0..k {
                es_load[j] += model.probs[i] * es_belief[i][j] * model.opt_compute[i][j];
            }
        }
        // Own expected contribution is removed and replaced by the full
        // unit time: the UE evaluates its delay given that it is active.
        let ap_choice: Vec<usize> = (0..n)
            .map(|i| argmin((0..m).map(|j| ap_load[j] - model.probs[i] * ap_belief[i][j] * model.tx[i][j] + model.tx[i][j])))
            .collect();
        let es_choice: Vec<usize> = (0..n)
            .map(|i| {
                argmin((0..k).map(|j| es_load[j] - model.probs[i] * es_belief[i][j] * model.opt_compute[i][j] + model.opt_compute[i][j]))
            })
            .collect();
        let weight = 1.0 / (rounds as f64 + 1.0);
        let mut change: f64 = 0.0;
        for i in 0..n {
            for (row, chosen) in [(&mut ap_freq[i], ap_choice[i]), (&mut es_freq[i], es_choice[i])] {
                for (j, f) in row.iter_mut().enumerate() {
                    let target = if j == chosen { 1.0 } else { 0.0 };
                    let next = *f + weight * (target - *f);
                    change = change.max((next - *f).abs());
                    *f = next;
                }
            }
        }
        profile = StrategyProfile::with_optimal_steps(scenario, ap_choice, es_choice);
        trace.push(trace_row(&model, &profile, rounds - 1));
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    finish(scenario, profile, rounds, converged, trace)
}

/// Nearest AP and the ES with the largest compute rate; ties to the lowest index.
pub fn run_selfish(scenario: &Scenario) -> Result<BaselineRun> {
    let ap_choice = scenario
        .ues
        .iter()
        .map(|ue| argmin(scenario.aps.iter().map(|ap| ue.position.distance(&ap.position))))
        .collect();
    let fastest = argmin(scenario.servers.iter().map(|es| -es.flops_per_sec));
    let profile = StrategyProfile::with_optimal_steps(scenario, ap_choice, vec![fastest; scenario.num_ues()]);
    one_shot(scenario, profile)
}

/// Uniformly random AP and ES per UE.
pub fn run_raro(scenario: &Scenario, seed: u64) -> Result<BaselineRun> {
    let stream = RngStream::new(seed);
    let (ap_choice, es_choice) = (0..scenario.num_ues())
        .map(|n| {
            let mut rng = stream.fork(n as u64, 0, Purpose::Baseline);
            (rng.random_range(0..scenario.num_aps()), rng.random_range(0..scenario.num_servers()))
        })
        .unzip();
    one_shot(scenario, StrategyProfile::with_optimal_steps(scenario, ap_choice, es_choice))
}

fn one_shot(scenario: &Scenario, profile: StrategyProfile) -> Result<BaselineRun> {
    let model = DelayModel::new(scenario, &static_channel(scenario))?;
    let mut trace = RunTrace::default();
    trace.push(trace_row(&model, &profile, 0));
    finish(scenario, profile, 1, true, trace)
}
