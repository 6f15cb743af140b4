//! Payoffs, exponential potentials and equilibrium checks for the
//! association game (UE picks an AP) and the offloading game (UE picks an ES
//! and a step count), under complete information (one activity realization)
//! or stochastic information (expectations over activity).

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ActivityState, ChannelRealization};
use crate::error::{Error, Result};
use crate::latency::{DelayModel, Expectation, StrategyProfile};
use crate::real::Real;
use crate::rng::{Purpose, RngStream};
use crate::scenario::Scenario;

pub const DEFAULT_NE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoMode {
    Complete(ActivityState),
    Stochastic(Expectation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Access,
    Compute,
    Total,
}

/// A game as seen by the UEs: instance, channel, information mode and payoff.
#[derive(Debug, Clone)]
pub struct GameView<'a> {
    pub scenario: &'a Scenario,
    pub model: DelayModel,
    pub mode: InfoMode,
    pub kind: PayoffKind,
}

/// Loads of every AP and ES under a view, plus what each UE contributes to
/// them and how it weighs its own share.
#[derive(Debug, Clone)]
pub struct LoadState {
    pub ap: Vec<f64>,
    pub es: Vec<f64>,
    contrib: Vec<f64>,
    own: Vec<f64>,
}

impl<'a> GameView<'a> {
    pub fn new(
        scenario: &'a Scenario,
        channel: &ChannelRealization,
        mode: InfoMode,
        kind: PayoffKind,
    ) -> Result<Self> {
        if let InfoMode::Complete(w) = &mode {
            if w.active.len() != scenario.num_ues() {
                return Err(Error::Domain("activity state does not match the UE count".into()));
            }
        }
        Ok(Self { scenario, model: DelayModel::new(scenario, channel)?, mode, kind })
    }

    pub fn with_model(scenario: &'a Scenario, model: DelayModel, mode: InfoMode, kind: PayoffKind) -> Self {
        Self { scenario, model, mode, kind }
    }

    /// Same instance and information, different payoff.
    pub fn with_kind(&self, kind: PayoffKind) -> Self {
        Self { kind, ..self.clone() }
    }

    /// Whether UE `n` takes part in the game.
    pub fn is_player(&self, n: usize) -> bool {
        match &self.mode {
            InfoMode::Complete(w) => w.is_active(n),
            InfoMode::Stochastic(_) => true,
        }
    }

    pub fn loads(&self, profile: &StrategyProfile) -> LoadState {
        let n = self.model.num_ues();
        let (contrib, own): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| match &self.mode {
                InfoMode::Complete(w) => (if w.is_active(i) { 1.0 } else { 0.0 }, 1.0),
                InfoMode::Stochastic(form) => {
                    let p = self.model.probs[i];
                    match form {
                        Expectation::Conditional => (p, 1.0),
                        Expectation::Weighted => (p, p),
                    }
                }
            })
            .unzip();
        let mut ap = vec![0.0; self.model.num_aps()];
        let mut es = vec![0.0; self.model.num_servers()];
        for (i, &c) in contrib.iter().enumerate() {
            if c > 0.0 {
                let (m, k) = (profile.ap_choice[i], profile.es_choice[i]);
                ap[m] += c * self.model.tx[i][m];
                es[k] += c * self.model.unit_compute(k, profile.steps[i]);
            }
        }
        LoadState { ap, es, contrib, own }
    }

    fn check_player(&self, n: usize) -> Result<()> {
        if !self.is_player(n) {
            return Err(Error::Domain(format!("UE {n} is inactive in this activity state and has no payoff")));
        }
        Ok(())
    }

    /// Delay of UE `n` under `profile`.
    pub fn payoff(&self, profile: &StrategyProfile, n: usize) -> Result<f64> {
        self.check_player(n)?;
        let loads = self.loads(profile);
        Ok(self.payoff_with(&loads, profile, n))
    }

    pub fn payoff_with(&self, loads: &LoadState, profile: &StrategyProfile, n: usize) -> f64 {
        let (m, k, d) = (profile.ap_choice[n], profile.es_choice[n], profile.steps[n]);
        let access = || {
            let t = self.model.tx[n][m];
            loads.ap[m] + (loads.own[n] - loads.contrib[n]) * t
        };
        let compute = || {
            let t = self.model.unit_compute(k, d);
            loads.es[k] + (loads.own[n] - loads.contrib[n]) * t
        };
        match self.kind {
            PayoffKind::Access => access(),
            PayoffKind::Compute => compute(),
            PayoffKind::Total => access() + compute(),
        }
    }

    /// Access delay UE `n` would see on AP `ap` with everyone else unchanged.
    pub fn access_if(&self, loads: &LoadState, profile: &StrategyProfile, n: usize, ap: usize) -> f64 {
        let cur = profile.ap_choice[n];
        let t = self.model.tx[n][ap];
        if ap == cur {
            loads.ap[ap] + (loads.own[n] - loads.contrib[n]) * t
        } else {
            loads.ap[ap] + loads.own[n] * t
        }
    }

    /// Compute delay UE `n` would see on ES `es` running `steps` steps.
    pub fn compute_if(&self, loads: &LoadState, profile: &StrategyProfile, n: usize, es: usize, steps: u32) -> f64 {
        let cur = profile.es_choice[n];
        let t = self.model.unit_compute(es, steps);
        if es == cur {
            let own_now = self.model.unit_compute(cur, profile.steps[n]);
            loads.es[es] - loads.contrib[n] * own_now + loads.own[n] * t
        } else {
            loads.es[es] + loads.own[n] * t
        }
    }

    fn granularity(&self) -> f64 {
        match self.kind {
            PayoffKind::Access => self.scenario.game.comm_time_granularity,
            _ => self.scenario.game.comp_time_granularity,
        }
    }

    /// Potential of the association (`Access`) or offloading (`Compute`) game.
    pub fn potential(&self, profile: &StrategyProfile) -> Result<PotentialValue<f64>> {
        let weights: Vec<f64> = match &self.mode {
            InfoMode::Complete(w) => w.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
            InfoMode::Stochastic(_) => self.model.probs.clone(),
        };
        match self.kind {
            PayoffKind::Access => {
                let mut loads = vec![0.0; self.model.num_aps()];
                for (n, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        let m = profile.ap_choice[n];
                        loads[m] += w * self.model.tx[n][m];
                    }
                }
                Ok(PotentialValue::from_loads(&loads, self.scenario.game.comm_potential_log2_base))
            }
            PayoffKind::Compute => {
                let mut loads = vec![0.0; self.model.num_servers()];
                for (n, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        let k = profile.es_choice[n];
                        loads[k] += w * self.model.unit_compute(k, profile.steps[n]);
                    }
                }
                Ok(PotentialValue::from_loads(&loads, self.scenario.game.comp_potential_log2_base))
            }
            PayoffKind::Total => Err(Error::Domain(
                "the joint game has no single potential; evaluate the access and compute potentials separately".into(),
            )),
        }
    }
}

/// `sum_r base^load_r` held as base-2 exponents `load_r * log2(base)`.
///
/// With the smallest sign-preserving base the terms are `2^(1000 * load)`
/// for 1 ms granularity, far beyond any float range, so only the exponents
/// are stored and comparisons factor out the largest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialValue<T> {
    pub log2_terms: Vec<T>,
    pub log2_total: T,
}

impl<T: Real> PotentialValue<T> {
    pub fn from_loads(loads: &[T], log2_base: T) -> Self {
        Self::from_log2_terms(loads.iter().map(|&l| l * log2_base).collect())
    }

    pub fn from_log2_terms(log2_terms: Vec<T>) -> Self {
        let log2_total = log2_sum(&log2_terms);
        Self { log2_terms, log2_total }
    }

    /// Exact-as-possible ordering of the two sums. Terms present in both
    /// (bitwise equal) cancel before any rounding happens.
    pub fn compare(&self, other: &Self) -> Ordering {
        compare_log2_sums(&self.log2_terms, &other.log2_terms)
    }
}

pub fn log2_sum<T: Real>(terms: &[T]) -> T {
    let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let shifted = terms.iter().fold(T::zero(), |acc, &t| acc + (t - max).exp2());
    max + shifted.log2()
}

/// Orders `sum 2^a` against `sum 2^b`.
pub fn compare_log2_sums<T: Real>(a: &[T], b: &[T]) -> Ordering {
    let desc = |v: &[T]| {
        let mut v = v.to_vec();
        v.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));
        v
    };
    let (a, b) = (desc(a), desc(b));
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].partial_cmp(&b[j]).unwrap_or(Ordering::Equal) {
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
            Ordering::Greater => {
                ra.push(a[i]);
                i += 1;
            }
            Ordering::Less => {
                rb.push(b[j]);
                j += 1;
            }
        }
    }
    ra.extend_from_slice(&a[i..]);
    rb.extend_from_slice(&b[j..]);
    let max = ra.iter().chain(&rb).copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Ordering::Equal;
    }
    let sa = ra.iter().fold(T::zero(), |acc, &t| acc + (t - max).exp2());
    let sb = rb.iter().fold(T::zero(), |acc, &t| acc + (t - max).exp2());
    sa.partial_cmp(&sb).unwrap_or(Ordering::Equal)
}

/// Unilateral deviation families exercised by the sign-property checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    ApSwitch,
    EsSwitch,
    StepChange,
    EsAndSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignViolation {
    pub trial: u64,
    pub ue: usize,
    pub kind: DeviationKind,
    pub payoff_delta: f64,
    pub potential_order: i8,
    pub before: StrategyProfile,
    pub after: StrategyProfile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub trials: u64,
    /// Deviations whose payoff change reached the granularity and were compared.
    pub checked: u64,
    /// Deviations skipped: sub-granularity payoff change or no deviation available.
    pub excluded: u64,
    pub per_kind: Vec<(DeviationKind, u64)>,
    pub violations: Vec<SignViolation>,
}

impl SignReport {
    pub fn merge(&mut self, other: SignReport) {
        self.trials += other.trials;
        self.checked += other.checked;
        self.excluded += other.excluded;
        for (kind, count) in other.per_kind {
            match self.per_kind.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, c)) => *c += count,
                None => self.per_kind.push((kind, count)),
            }
        }
        self.violations.extend(other.violations);
    }
}

enum TrialOutcome {
    Skipped,
    Checked(DeviationKind, Option<SignViolation>),
}

impl<'a> GameView<'a> {
    fn random_profile<R: Rng>(&self, rng: &mut R) -> StrategyProfile {
        let n = self.model.num_ues();
        let (m, k) = (self.model.num_aps(), self.model.num_servers());
        let ap_choice: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let es_choice: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let steps = (0..n).map(|i| self.random_steps(i, es_choice[i], rng)).collect();
        StrategyProfile { ap_choice, es_choice, steps }
    }

    /// Step count drawn from `[d_min, 2 d*]` for UE `n` on ES `k`.
    fn random_steps<R: Rng>(&self, n: usize, k: usize, rng: &mut R) -> u32 {
        let lo = self.scenario.game.min_inference_steps;
        let hi = (2 * self.model.opt_steps[n][k]).max(lo + 1);
        rng.random_range(lo..=hi)
    }

    fn other_index<R: Rng>(current: usize, count: usize, rng: &mut R) -> usize {
        let j = rng.random_range(0..count - 1);
        if j >= current {
            j + 1
        } else {
            j
        }
    }

    fn one_trial(&self, trial: u64, stream: &RngStream) -> TrialOutcome {
        let mut rng = stream.fork(trial, 0, Purpose::Verify);
        let before = self.random_profile(&mut rng);
        let players: Vec<usize> = (0..self.model.num_ues()).filter(|&n| self.is_player(n)).collect();
        if players.is_empty() {
            return TrialOutcome::Skipped;
        }
        let ue = players[rng.random_range(0..players.len())];
        let (m, k) = (self.model.num_aps(), self.model.num_servers());
        let mut after = before.clone();
        let kind = match self.kind {
            PayoffKind::Access => {
                if m < 2 {
                    return TrialOutcome::Skipped;
                }
                after.ap_choice[ue] = Self::other_index(before.ap_choice[ue], m, &mut rng);
                DeviationKind::ApSwitch
            }
            PayoffKind::Compute | PayoffKind::Total => {
                let kinds: &[DeviationKind] = if k < 2 {
                    &[DeviationKind::StepChange]
                } else {
                    &[DeviationKind::EsSwitch, DeviationKind::StepChange, DeviationKind::EsAndSteps]
                };
                let kind = kinds[rng.random_range(0..kinds.len())];
                if kind != DeviationKind::StepChange {
                    after.es_choice[ue] = Self::other_index(before.es_choice[ue], k, &mut rng);
                }
                if kind != DeviationKind::EsSwitch {
                    // Redraw until the count actually changes.
                    loop {
                        let d = self.random_steps(ue, after.es_choice[ue], &mut rng);
                        if d != before.steps[ue] {
                            after.steps[ue] = d;
                            break;
                        }
                    }
                }
                kind
            }
        };
        let pay_before = self.payoff_with(&self.loads(&before), &before, ue);
        let pay_after = self.payoff_with(&self.loads(&after), &after, ue);
        let delta = pay_after - pay_before;
        if delta.abs() < self.granularity() {
            return TrialOutcome::Skipped;
        }
        let order = self
            .potential(&after)
            .and_then(|a| Ok(a.compare(&self.potential(&before)?)))
            .expect("access and compute views have potentials");
        let consistent = matches!(
            (delta > 0.0, order),
            (true, Ordering::Greater) | (false, Ordering::Less)
        );
        let violation = (!consistent).then_some(SignViolation {
            trial,
            ue,
            kind,
            payoff_delta: delta,
            potential_order: order as i8,
            before,
            after,
        });
        TrialOutcome::Checked(kind, violation)
    }

    /// Samples random profiles and unilateral deviations and records every
    /// deviation whose payoff change (at least the time granularity) and
    /// potential change disagree in sign.
    pub fn check_sign_property(&self, n_trials: u64, stream: &RngStream) -> Result<SignReport> {
        if self.kind == PayoffKind::Total {
            return Err(Error::Domain("sign property is defined for the access and compute games".into()));
        }
        let outcomes: Vec<TrialOutcome> =
            (0..n_trials).into_par_iter().map(|t| self.one_trial(t, stream)).collect();
        let mut report = SignReport { trials: n_trials, ..SignReport::default() };
        for outcome in outcomes {
            match outcome {
                TrialOutcome::Skipped => report.excluded += 1,
                TrialOutcome::Checked(kind, violation) => {
                    report.checked += 1;
                    match report.per_kind.iter_mut().find(|(k, _)| *k == kind) {
                        Some((_, c)) => *c += 1,
                        None => report.per_kind.push((kind, 1)),
                    }
                    report.violations.extend(violation);
                }
            }
        }
        report.per_kind.sort_by_key(|(k, _)| *k as u8);
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub ap: usize,
    pub es: usize,
    pub steps: u32,
    pub payoff: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeReport {
    pub is_ne: bool,
    pub tolerance: f64,
    /// Per UE, its most improving deviation when it beats the tolerance.
    pub best_deviation: Vec<Option<Deviation>>,
}

impl NeReport {
    pub fn improving_ues(&self) -> Vec<usize> {
        self.best_deviation.iter().enumerate().filter_map(|(n, d)| d.as_ref().map(|_| n)).collect()
    }
}

impl<'a> GameView<'a> {
    /// Best reply of UE `n` with others fixed; steps are pinned to the
    /// minimal feasible count on each ES. Ties keep the current choice, then
    /// the lowest index.
    pub fn best_reply(&self, loads: &LoadState, profile: &StrategyProfile, n: usize) -> Deviation {
        let (cur_m, cur_k) = (profile.ap_choice[n], profile.es_choice[n]);
        let current_access = self.access_if(loads, profile, n, cur_m);
        let current_compute = self.compute_if(loads, profile, n, cur_k, profile.steps[n]);

        let mut ap = cur_m;
        let mut best_access = current_access;
        if self.kind != PayoffKind::Compute {
            for m in 0..self.model.num_aps() {
                let a = self.access_if(loads, profile, n, m);
                if a < best_access {
                    best_access = a;
                    ap = m;
                }
            }
        }
        let mut es = cur_k;
        let mut steps = profile.steps[n];
        let mut best_compute = current_compute;
        if self.kind != PayoffKind::Access {
            // The current ES at its optimal steps is itself a candidate.
            for k in 0..self.model.num_servers() {
                let d = self.model.opt_steps[n][k];
                let c = self.compute_if(loads, profile, n, k, d);
                if c < best_compute {
                    best_compute = c;
                    es = k;
                    steps = d;
                }
            }
        }
        let (current, payoff) = match self.kind {
            PayoffKind::Access => (current_access, best_access),
            PayoffKind::Compute => (current_compute, best_compute),
            PayoffKind::Total => (current_access + current_compute, best_access + best_compute),
        };
        Deviation { ap, es, steps, payoff, improvement: current - payoff }
    }

    /// Checks every player's unilateral deviations; `is_ne` iff none improves
    /// its payoff by more than `tolerance`.
    pub fn is_nash_equilibrium(&self, profile: &StrategyProfile, tolerance: f64) -> NeReport {
        let loads = self.loads(profile);
        let best_deviation: Vec<Option<Deviation>> = (0..self.model.num_ues())
            .map(|n| {
                if !self.is_player(n) {
                    return None;
                }
                let best = self.best_reply(&loads, profile, n);
                (best.improvement > tolerance).then_some(best)
            })
            .collect();
        NeReport { is_ne: best_deviation.iter().all(Option::is_none), tolerance, best_deviation }
    }
}
